"""Singular and sublinear right-hand sides ``-div A(x, grad u) = sigma h(u)``.

Stage k solves ``-div A(grad u_k) = sigma_k h(u_k+ + eps_k)`` by relaxed
Picard iteration on the right-hand side, warm-started from stage k - 1.
The shifts ``eps_k`` decrease to 0 (``2**-k`` by default, ``1/k`` optional).
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .calculus import DiscreteFunction, MeasureData, measure_pairing, weighted_p_energy
from .mesh import Mesh, Weight
from .potential import GROWTH_FACTOR, GROWTH_RUN, ExhaustionSchedule, wa_potential
from .solver import OperatorA, SolverOptions, flux_pairing, solve
from .trace import BoundCheck, _le, estimate_trace_constant

log = logging.getLogger(__name__)

INNER_RTOL = 1e-8
# verification runs need small final shifts: for h = u**(-gamma) the shift
# perturbs the energy by roughly eps**(1 - gamma)
VERIFY_STAGES = 30


class SingularStageError(RuntimeError):
    """The inner Picard iteration failed to converge at some stage."""

    def __init__(self, stage: int, message: str):
        super().__init__(f"stage {stage}: {message}")
        self.stage = stage


@dataclass(frozen=True)
class SingularNonlinearity:
    """``h(u) = u**(-gamma)`` (``power_decreasing``) or ``u**(q-1)`` (``power_sublinear``)."""

    kind: str
    exponent: float

    def __post_init__(self):
        if self.kind == "power_decreasing":
            if not self.exponent > 0:
                raise ValueError("gamma must be positive")
        elif self.kind == "power_sublinear":
            if not 0 < self.exponent < 1:
                raise ValueError("need 0 < q < 1")
        else:
            raise ValueError(f"unknown kind {self.kind!r}")

    @classmethod
    def decreasing(cls, gamma: float) -> SingularNonlinearity:
        return cls("power_decreasing", float(gamma))

    @classmethod
    def sublinear(cls, q: float) -> SingularNonlinearity:
        return cls("power_sublinear", float(q))

    @property
    def gamma(self) -> float:
        return self.exponent if self.kind == "power_decreasing" else 1.0 - self.exponent

    def h(self, s):
        return np.asarray(s, dtype=float) ** (-self.gamma)

    def g(self, s, p: float):
        """``int_0^s h(t)**(-1/(p-1)) dt`` in closed form."""
        e = (p - 1 + self.gamma) / (p - 1)
        return np.asarray(s, dtype=float) ** e / e


def g_transform(u: DiscreteFunction, nl: SingularNonlinearity, p: float) -> DiscreteFunction:
    if np.any(u.values < 0):
        raise ValueError("g_transform needs u >= 0")
    return u.with_values(nl.g(u.values, p))


def barrier_check(u_k: DiscreteFunction, sigma_k: MeasureData, mesh: Mesh, w: Weight, A: OperatorA,
                  nl: SingularNonlinearity, opts: SolverOptions | None = None) -> float:
    """``min (W^0 sigma_k - g(u_k))`` over interior nodes; nonnegative up to solver tolerance."""
    v, _ = solve(mesh, w, A, sigma_k, opts)
    gap = v.values - nl.g(np.maximum(u_k.values, 0.0), A.p)
    return float(np.min(gap[mesh.interior])) if mesh.interior.any() else 0.0


def _shifts(kind: str, k: int) -> float:
    if kind == "dyadic":
        return 2.0 ** (-k)
    if kind == "harmonic":
        return 1.0 / k
    raise ValueError(f"unknown shift schedule {kind!r}")


def _rhs(sigma: MeasureData, nl: SingularNonlinearity, u: DiscreteFunction, eps: float) -> MeasureData:
    up = np.maximum(u.values, 0.0)
    ua = np.maximum(sigma.atom_interp @ u.values, 0.0) if len(sigma.atom_mass) else np.zeros(0)
    return MeasureData(sigma.mesh, sigma.node_mass * nl.h(up + eps), sigma.atom_points,
                       sigma.atom_mass * nl.h(ua + eps))


@dataclass
class SingularStage:
    k: int
    shift: float
    inner_iterations: int
    sup: float
    energy: float
    barrier_margin: float
    min_interior: float
    increments: list = field(default_factory=list, repr=False)

    FIELDS = ("k", "shift", "inner_iterations", "sup", "energy", "barrier_margin", "min_interior")


@dataclass
class SingularRunReport:
    stages: list = field(default_factory=list)
    monotonicity_violations: int = 0
    positivity_failures: int = 0
    verdict: str = "converged"
    reason: str = ""
    tol: float = 0.0
    stage_measure: MeasureData | None = None
    shift: float = 0.0

    @property
    def min_barrier_margin(self) -> float:
        return min((s.barrier_margin for s in self.stages), default=0.0)

    def write_stage_log(self, path) -> None:
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(SingularStage.FIELDS)
            for s in self.stages:
                out.writerow([getattr(s, f) for f in SingularStage.FIELDS])


def _picard(mesh, w, A, sigma_k, nl, eps, u, omega, max_inner, opts, k):
    incs = []
    for m in range(1, max_inner + 1):
        target, rep = solve(mesh, w, A, _rhs(sigma_k, nl, u, eps), opts, u0=u)
        if not rep.converged:
            raise SingularStageError(k, f"measure-data solve failed ({rep.status})")
        new = u.with_values((1 - omega) * u.values + omega * target.values)
        inc = float(np.max(np.abs(new.values - u.values)))
        incs.append(inc)
        u = new
        if inc <= INNER_RTOL * (1.0 + u.sup()):
            return u, m, incs
        if len(incs) > 1 and inc > incs[-2]:
            omega *= 0.5
            if omega < 1e-3:
                break
    raise SingularStageError(k, f"inner Picard iteration did not converge (last increment {incs[-1]:.3e})")


def solve_singular(mesh: Mesh, w: Weight, A: OperatorA, sigma: MeasureData, nl: SingularNonlinearity,
                   sched: ExhaustionSchedule | None = None, *, shift: str = "dyadic", omega: float = 0.7,
                   max_inner: int = 2000, opts: SolverOptions | None = None,
                   u_start: DiscreteFunction | None = None) -> tuple[DiscreteFunction, SingularRunReport]:
    """Approximating problems with shrinking shifts and growing truncations.

    Verdict is ``diverging`` on blow-up or sustained 10% growth of sup u_k
    (same rule as the potential engine) and ``converged`` otherwise: the
    stage sequence is monotone, so boundedness is the convergence criterion.
    """
    if sigma.is_zero():
        raise ValueError("sigma must be nonzero")
    if not 0 < omega <= 1:
        raise ValueError("omega must lie in (0, 1]")
    sched = sched or ExhaustionSchedule()
    opts = opts or SolverOptions()
    report = SingularRunReport()
    u = DiscreteFunction.zeros(mesh) if u_start is None else u_start
    prev = None
    growth = 0
    for k in range(1, sched.k_max + 1):
        sigma_k = sched.stage_measure(sigma, k)
        eps = _shifts(shift, k)
        u, n_inner, incs = _picard(mesh, w, A, sigma_k, nl, eps, u, omega, max_inner, opts, k)
        tol = INNER_RTOL * (1.0 + u.sup())
        report.tol = tol
        if prev is not None and np.any(u.values < prev.values - 10 * tol):
            report.monotonicity_violations += 1
        interior = u.values[mesh.interior]
        min_int = float(interior.min()) if len(interior) else 0.0
        if sigma_k.total_mass > 0 and min_int <= 1e-300:
            report.positivity_failures += 1
        margin = barrier_check(u, sigma_k, mesh, w, A, nl, opts)
        report.stages.append(SingularStage(k, eps, n_inner, u.sup(), weighted_p_energy(u, w, A.p),
                                           margin, min_int, incs))
        report.stage_measure, report.shift = sigma_k, eps
        log.debug("stage %d: shift %.2e, %d inner iterations, sup %.6e", k, eps, n_inner, u.sup())
        if u.sup() > opts.blow_up_threshold:
            report.verdict, report.reason = "diverging", f"blow-up at stage {k}"
            break
        if prev is not None:
            growth = growth + 1 if (k > sched.k_min and u.sup() >= GROWTH_FACTOR * prev.sup() > 0) else 0
            if growth >= GROWTH_RUN:
                report.verdict = "diverging"
                report.reason = f"sup grew by >= 10% for {GROWTH_RUN} consecutive stages (stage {k})"
                break
        prev = u
    else:
        report.reason = f"bounded monotone stages up to k = {sched.k_max}"
    if report.verdict == "converged" and report.min_barrier_margin < -10 * report.tol:
        report.verdict, report.reason = "barrier-violated", "g(u_k) exceeds W^0 sigma_k beyond tolerance"
    return u, report


def energy_identity(u: DiscreteFunction, w: Weight, A: OperatorA, report: SingularRunReport,
                    nl: SingularNonlinearity) -> tuple[float, float]:
    """``(int A(grad u).grad u, <sigma_K h(u + eps_K), u>)`` for the last stage."""
    rhs = measure_pairing(u, _rhs(report.stage_measure, nl, u, report.shift))
    return flux_pairing(u, w, A), rhs


@dataclass
class SingularVerdict:
    quantities: dict
    bounds: list
    report: SingularRunReport | None = None

    @property
    def passed(self) -> bool:
        return all(b.passed for b in self.bounds)


def verify_thm12_equivalence(mesh: Mesh, w: Weight, A: OperatorA, sigma: MeasureData, p: float, q: float, *,
                             sched: ExhaustionSchedule | None = None, opts: SolverOptions | None = None,
                             rtol: float = 1e-3, restarts: int = 4) -> SingularVerdict:
    """Both directions of the finite-energy criterion for ``h(u) = u**(q-1)``.

    forward:  ``||grad u|| <= alpha**(-1/(p-q)) C1_plus**(q/(p-q))`` with
              ``C1_plus = beta**(1/q) ||grad u||**((p-q)/q)``;
    reverse:  ``C1_hat <= beta**(1/q) ||grad u||**((p-q)/q)``.
    ``forward (C1_hat)`` repeats the forward bound with the lower estimate;
    it is tight for isotropic operators, where u maximizes the quotient.
    """
    if A.p != p:
        raise ValueError("operator exponent differs from p")
    nl = SingularNonlinearity.sublinear(q)
    sched = sched or ExhaustionSchedule(k_max=VERIFY_STAGES)
    a, b = A.alpha, A.beta
    u, rep = solve_singular(mesh, w, A, sigma, nl, sched, opts=opts)
    G = weighted_p_energy(u, w, p) ** (1 / p)
    C1 = estimate_trace_constant(mesh, w, rep.stage_measure, p, q, restarts).value
    C1p = b ** (1 / q) * G ** ((p - q) / q)
    bounds = [
        _le("forward", G, a ** (-1 / (p - q)) * C1p ** (q / (p - q)), rtol),
        _le("forward (C1_hat)", G, a ** (-1 / (p - q)) * C1 ** (q / (p - q)), rtol),
        _le("reverse", C1, C1p, rtol),
        BoundCheck("solver converged", float(rep.verdict == "converged"), 1.0, rep.verdict == "converged"),
    ]
    return SingularVerdict({"grad_norm": G, "C1_hat": C1, "C1_plus": C1p,
                            "energy": G ** p, "verdict": rep.verdict}, bounds, rep)


def cor65_window(p: float, gamma: float, alpha: float = 1.0, beta: float = 1.0) -> tuple[float, float, float]:
    """``(q, lower, upper)`` for ``sigma(Omega) / E_gamma`` with ``q = gamma p / (p - 1 + gamma)``."""
    q = gamma * p / (p - 1 + gamma)
    e = (p - 1) / (p - q)
    lowE = (alpha / beta) ** p / alpha
    upE = (1 / q) * e ** (p - 1) / alpha
    lowM = (alpha / beta) * alpha ** (-1 / p)
    upM = q ** (-1 / p) * e ** ((p - 1) / p) * alpha ** (-1 / p)
    s = p / (p - q)
    return q, (lowM ** q / upE) ** s, (upM ** q / lowE) ** s


def verify_cor65(mesh: Mesh, w: Weight, A: OperatorA, sigma: MeasureData, p: float, gamma: float, *,
                 sched: ExhaustionSchedule | None = None, opts: SolverOptions | None = None,
                 rtol: float = 1e-3) -> SingularVerdict:
    """``sigma(Omega) / int |grad u**((p-1+gamma)/p)|**p w`` inside the explicit window."""
    if A.p != p:
        raise ValueError("operator exponent differs from p")
    if sigma.infinite:
        raise ValueError("sigma must be finite")
    nl = SingularNonlinearity.decreasing(gamma)
    sched = sched or ExhaustionSchedule(k_max=VERIFY_STAGES)
    u, rep = solve_singular(mesh, w, A, sigma, nl, sched, opts=opts)
    E = weighted_p_energy(u.power((p - 1 + gamma) / p), w, p)
    mass = rep.stage_measure.total_mass
    ratio = mass / E
    q, lo, hi = cor65_window(p, gamma, A.alpha, A.beta)
    bounds = [_le("window lower", lo, ratio, rtol), _le("window upper", ratio, hi, rtol)]
    return SingularVerdict({"q": q, "E_gamma": E, "mass": mass, "ratio": ratio, "lower": lo, "upper": hi},
                           bounds, rep)


def verify_thm13_bounds(mesh: Mesh, w: Weight, A: OperatorA, sigma: MeasureData, nl: SingularNonlinearity, *,
                        sched: ExhaustionSchedule | None = None, opts: SolverOptions | None = None) -> SingularVerdict:
    """``g(u) <= v`` and ``v <= u / h(sup u)**(1/(p-1))`` nodal-wise within 10 tol.

    v is the measure-data solution for the last stage measure and h is
    evaluated with that stage's shift, which makes both bounds exact
    statements about the discrete problem that was solved.
    """
    p = A.p
    sched = sched or ExhaustionSchedule(k_max=VERIFY_STAGES)
    pot = wa_potential(mesh, w, A, sigma, sched, opts)
    if not pot.converged:
        raise ValueError(f"potential does not exist numerically: {pot.reason}")
    u, rep = solve_singular(mesh, w, A, sigma, nl, sched, opts=opts)
    v, _ = solve(mesh, w, A, rep.stage_measure, opts)
    tol = 10 * rep.tol
    gu = nl.g(u.values, p)
    factor = float(nl.h(u.sup() + rep.shift)) ** (1 / (p - 1))
    inner = mesh.interior
    m62 = float(np.min((v.values - gu)[inner]))
    m64 = float(np.min((u.values / factor - v.values)[inner]))
    # reported as -10 tol <= margin
    bounds = [BoundCheck("g(u) <= v", -tol, m62, m62 >= -tol),
              BoundCheck("v <= u / h(sup u)^(1/(p-1))", -tol, m64, m64 >= -tol)]
    return SingularVerdict({"margin_g": m62, "margin_v": m64, "sup_u": u.sup(),
                            "sup_potential": pot.u.sup()}, bounds, rep)

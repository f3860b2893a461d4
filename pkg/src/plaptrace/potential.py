"""Minimal solutions for possibly infinite measures, and truncated Wolff potentials.

``wa_potential`` builds the increasing family ``sigma_k = 1_{F_k} sigma`` with
``F_k = {delta >= r_k}``, solves each finite problem (warm-started from the
previous stage) and classifies the monotone sequence as converging or
diverging.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from .calculus import DiscreteFunction, MeasureData, measure_pairing, weighted_p_energy
from .mesh import Weight
from .solver import OperatorA, SolveReport, SolverOptions, flux_pairing, solve

log = logging.getLogger(__name__)

CAUCHY_RTOL = 1e-6
GROWTH_FACTOR = 1.10
GROWTH_RUN = 5


class StageError(RuntimeError):
    """An inner solve failed during an exhaustion run."""

    def __init__(self, stage: int, report: SolveReport):
        super().__init__(f"stage {stage}: inner solve failed ({report.status}, residual {report.residual:.3e})")
        self.stage = stage
        self.report = report


@dataclass(frozen=True)
class ExhaustionSchedule:
    """Compact sets ``F_k = {delta >= r0 * factor**(-k)}`` for k = 1..k_max.

    ``cap0`` optionally caps lumped densities at ``cap0 * 2**k`` on stage k.
    """

    r0: float = 0.25
    factor: float = 2.0
    k_max: int = 12
    cap0: float | None = None
    k_min: int = 1

    def __post_init__(self):
        if not self.r0 > 0 or not self.factor > 1 or self.k_max < 1:
            raise ValueError("need r0 > 0, factor > 1 and k_max >= 1")

    def radius(self, k: int) -> float:
        return self.r0 * self.factor ** (-k)

    def stage_measure(self, sigma: MeasureData, k: int) -> MeasureData:
        r = self.radius(k)
        mesh = sigma.mesh
        stage = sigma.restricted(mesh.delta >= r, sigma.atom_delta >= r)
        if self.cap0 is not None:
            cap = self.cap0 * 2.0 ** k * mesh.node_volumes
            stage = stage.with_node_mass(np.minimum(stage.node_mass, cap))
        return stage


@dataclass
class StageRecord:
    k: int
    radius: float
    mass: float
    sup: float
    energy: float
    residual: float
    increment: float
    riesz_residual: float

    FIELDS = ("k", "radius", "mass", "sup", "energy", "residual", "increment", "riesz_residual")


@dataclass
class PotentialResult:
    u: DiscreteFunction
    stages: list = field(default_factory=list)
    verdict: str = "converged"
    reason: str = ""
    monotonicity_violations: int = 0
    stage_measure: MeasureData | None = None

    @property
    def converged(self) -> bool:
        return self.verdict == "converged"

    @property
    def sups(self) -> list:
        return [s.sup for s in self.stages]

    def write_stage_log(self, path) -> None:
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(StageRecord.FIELDS)
            for s in self.stages:
                out.writerow([getattr(s, f) for f in StageRecord.FIELDS])


def _test_bump(sigma: MeasureData, r: float) -> DiscreteFunction:
    mesh = sigma.mesh
    return DiscreteFunction(mesh, np.maximum(mesh.delta - r, 0.0), zero_trace=True)


def wa_potential(mesh, w: Weight, A: OperatorA, sigma: MeasureData,
                 sched: ExhaustionSchedule | None = None,
                 opts: SolverOptions | None = None) -> PotentialResult:
    """Monotone exhaustion ``u_k = W^0_A sigma_k`` with a convergence verdict.

    Converged: two consecutive increments below ``1e-6 (1 + sup u)``.
    Diverging: blow-up, ``GROWTH_RUN`` consecutive sup increases of at least
    10% after stage ``k_min``, or ``k_max`` reached without convergence.
    """
    sched = sched or ExhaustionSchedule()
    opts = opts or SolverOptions()
    if sigma.mesh is not mesh:
        raise ValueError("measure is defined on a different mesh")
    bump = _test_bump(sigma, sched.r0)
    bump_mass = measure_pairing(bump, sigma)

    result = PotentialResult(DiscreteFunction.zeros(mesh))
    prev = None
    calm = growth = 0
    for k in range(1, sched.k_max + 1):
        sigma_k = sched.stage_measure(sigma, k)
        u, rep = solve(mesh, w, A, sigma_k, opts, u0=prev)
        if rep.blow_up:
            result.verdict, result.reason = "diverging", f"blow-up at stage {k}"
            result.stages.append(StageRecord(k, sched.radius(k), sigma_k.total_mass, rep.sup_norm,
                                             rep.energy, rep.residual, np.inf, np.nan))
            break
        if not rep.converged:
            raise StageError(k, rep)
        sup = u.sup()
        if prev is None:
            increment = sup
        else:
            increment = float(np.max(np.abs(u.values - prev.values)))
            if np.any(u.values < prev.values - 10 * rep.tol):
                result.monotonicity_violations += 1
        riesz = flux_pairing(u, w, A, bump) - bump_mass
        result.stages.append(StageRecord(k, sched.radius(k), sigma_k.total_mass, sup,
                                         weighted_p_energy(u, w, A.p), rep.residual, increment, riesz))
        result.u, result.stage_measure = u, sigma_k
        log.debug("stage %d: r=%.3e mass=%.4e sup=%.6e increment=%.3e", k, sched.radius(k),
                  sigma_k.total_mass, sup, increment)

        if sup > opts.blow_up_threshold:
            result.verdict, result.reason = "diverging", f"sup exceeds blow-up threshold at stage {k}"
            break
        if prev is not None:
            prev_sup = prev.sup()
            growth = growth + 1 if (k > sched.k_min and sup >= GROWTH_FACTOR * prev_sup > 0) else 0
            if growth >= GROWTH_RUN:
                result.verdict = "diverging"
                result.reason = f"sup grew by >= 10% for {GROWTH_RUN} consecutive stages (stage {k})"
                break
            calm = calm + 1 if increment <= CAUCHY_RTOL * (1.0 + prev_sup) else 0
            if calm >= 2:
                result.verdict, result.reason = "converged", f"Cauchy test met at stage {k}"
                break
        prev = u
    else:
        result.verdict, result.reason = "diverging", f"no Cauchy convergence within {sched.k_max} stages"
    return result


def _ball_sums(dist: np.ndarray, mass: np.ndarray):
    order = np.argsort(dist, kind="stable")
    return dist[order], np.cumsum(mass[order])


def _ball_mass(sorted_dist, cum, r) -> np.ndarray:
    idx = np.searchsorted(sorted_dist, r, side="right")
    return np.where(idx > 0, cum[np.maximum(idx - 1, 0)], 0.0)


def wolff_potential(sigma: MeasureData, x, R: float, p: float, w: Weight,
                    n_quad: int = 64, method: str = "trapezoid", r_min: float | None = None) -> float:
    """Truncated Wolff potential ``int_0^R (r^p mu(B)/w(B))^(1/(p-1)) dr/r``.

    Ball masses are lumped node sums over nodes within distance r (plus
    atoms).  Radii below the local mesh size at x are dropped.  ``method``
    is ``"trapezoid"`` (log-spaced nodes, trapezoid rule in log r) or
    ``"exact"`` (exact integration of the piecewise-constant ball ratio).
    """
    if not R > 0:
        raise ValueError("R must be positive")
    if n_quad < 16:
        raise ValueError("n_quad must be at least 16")
    mesh = sigma.mesh
    x = np.asarray(x, dtype=float).reshape(1, mesh.dim)
    d_nodes = np.linalg.norm(mesh.points - x, axis=1)
    if r_min is None:
        r_min = float(mesh.local_size[np.argmin(d_nodes)])
    if R <= r_min:
        return 0.0
    d_mu = np.concatenate([d_nodes, np.linalg.norm(sigma.atom_points - x, axis=1)])
    m_mu = np.concatenate([sigma.node_mass, sigma.atom_mass])
    mu_d, mu_c = _ball_sums(d_mu, m_mu)
    w_d, w_c = _ball_sums(d_nodes, w.node_masses)
    if _ball_mass(w_d, w_c, r_min) <= 0:
        raise ValueError("w(B(x, r_min)) = 0: mesh too coarse near the sample point")
    e = 1.0 / (p - 1)

    if method == "trapezoid":
        r = np.geomspace(r_min, R, n_quad)
        F = (r ** p * _ball_mass(mu_d, mu_c, r) / _ball_mass(w_d, w_c, r)) ** e
        return float(np.trapezoid(F, np.log(r)))
    if method == "exact":
        inner = np.concatenate([d_mu, d_nodes])
        knots = np.unique(np.concatenate([[r_min, R], inner[(inner > r_min) & (inner < R)]]))
        a, b = knots[:-1], knots[1:]
        ratio = _ball_mass(mu_d, mu_c, a) / _ball_mass(w_d, w_c, a)
        pp = p / (p - 1)
        return float(np.sum(ratio ** e * (b ** pp - a ** pp)) / pp)
    raise ValueError(f"unknown method {method!r}")


@dataclass
class SandwichReport:
    rows: list
    C_needed: float
    C_cap: float
    passed: bool

    FIELDS = ("x", "u", "wolff_R", "wolff_2R", "inf_u", "lower_ratio", "upper_ratio")


def wolff_sandwich_check(u: DiscreteFunction, mu: MeasureData, samples, R: float, *,
                         w: Weight, p: float, C_cap: float = 10.0, n_quad: int = 64,
                         method: str = "exact") -> SandwichReport:
    """Smallest C with ``W^R mu / C <= u <= C (inf_{B(x,R)} u + W^{2R} mu)`` on the samples.

    Only samples with ``B(x, 2R)`` inside the domain are used.
    """
    mesh = u.mesh
    pts = np.asarray(samples, dtype=float).reshape(-1, mesh.dim)
    pts = pts[mesh.distance(pts) >= 2 * R]
    if len(pts) == 0:
        raise ValueError("no sample point has B(x, 2R) inside the domain")
    rows = []
    for x in pts:
        ux = float(u(x[None])[0])
        wr = wolff_potential(mu, x, R, p, w, n_quad, method)
        w2r = wolff_potential(mu, x, 2 * R, p, w, n_quad, method)
        near = np.linalg.norm(mesh.points - x, axis=1) <= R
        inf_u = min(float(u.values[near].min()) if near.any() else ux, ux)
        lower = 0.0 if wr == 0 else (wr / ux if ux > 0 else np.inf)
        upper = 0.0 if ux == 0 else (ux / (inf_u + w2r) if inf_u + w2r > 0 else np.inf)
        rows.append((x.tolist(), ux, wr, w2r, inf_u, lower, upper))
    C_needed = max(1.0, max(max(r[5], r[6]) for r in rows))
    return SandwichReport(rows, C_needed, C_cap, bool(C_needed <= C_cap))

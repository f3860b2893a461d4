"""Trace-inequality constants, capacities, Hardy constants and the energy sandwiches.

Best constants are estimated from below by maximizing the Rayleigh quotient
``R(f) = ||f||_{L^q(sigma)} / ||grad f||_{L^p(w)}`` over nonnegative
zero-trace P1 functions.  The ascent direction is the gradient of ``log R``
preconditioned by the weighted stiffness matrix, scaled so that a unit step
for ``p = 2`` is one step of the nonlinear power iteration.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .calculus import (DiscreteFunction, MeasureData, lq_norm, power_density,
                       weak_lq_norm, weighted_p_energy)
from .mesh import Mesh, Weight
from .potential import ExhaustionSchedule, PotentialResult, wa_potential
from .solver import OperatorA, SolverOptions, minimize_energy

log = logging.getLogger(__name__)

SEED_EXPONENTS = (0.25, 0.5, 1.0)


@dataclass
class TraceEstimate:
    """A certified lower estimate ``value = R(maximizer)`` of a trace constant."""

    p: float
    q: float
    value: float
    maximizer: DiscreteFunction
    restarts: int
    iterations: int
    weak: bool = False


@dataclass
class CapacityResult:
    K: np.ndarray
    value: float
    minimizer: DiscreteFunction


def _check_exponents(p: float, q: float, allow_equal: bool = False) -> None:
    if not p > 1:
        raise ValueError("p must exceed 1")
    if not (0 < q < p or (allow_equal and q == p)):
        raise ValueError("need 0 < q < p")


def _seeds(mesh: Mesh, restarts: int, seed: DiscreteFunction | None):
    out = [np.where(mesh.interior, 1.0, 0.0)]
    out += [np.where(mesh.interior, mesh.delta ** a, 0.0) for a in SEED_EXPONENTS]
    if seed is not None:
        out.insert(0, np.maximum(np.asarray(seed.values, float), 0.0))
    return out[:max(1, restarts + (seed is not None))]


class _Quotient:
    """``log R`` and its gradient restricted to the interior nodes."""

    def __init__(self, mesh: Mesh, w: Weight, sigma: MeasureData, p: float, q: float):
        self.mesh, self.p, self.q = mesh, p, q
        self.free = np.flatnonzero(mesh.interior)
        self.d = mesh.dim
        self.Gf = mesh.gradient_operator[:, self.free].tocsr()
        self.vol_w = mesh.volumes * w.cell_values
        K = self.Gf.T @ sp.diags(np.repeat(self.vol_w, self.d)) @ self.Gf
        self.K = K.tocsc()
        self.lu = spla.splu(self.K)
        self.m = sigma.node_mass[self.free]
        self.P = sigma.atom_interp[:, self.free].tocsr()
        self.am = sigma.atom_mass
        self.floor_rel = 1e-12 if q < 1 else 0.0

    def full(self, x) -> np.ndarray:
        u = np.zeros(self.mesh.n_nodes)
        u[self.free] = x
        return u

    def project(self, x) -> np.ndarray:
        top = float(np.max(x, initial=0.0))
        return np.maximum(x, self.floor_rel * top)

    def value_and_grad(self, x):
        p, q = self.p, self.q
        ya = self.P @ x
        N = float(self.m @ x ** q + self.am @ np.abs(ya) ** q)
        g = (self.Gf @ x).reshape(-1, self.d)
        s = np.sum(g * g, axis=1)
        E = float(self.vol_w @ s ** (p / 2))
        if N <= 0 or E <= 0:
            return -np.inf, None
        coef = np.zeros_like(s)
        pos = s > 0
        coef[pos] = s[pos] ** ((p - 2) / 2)
        dE = p * (self.Gf.T @ ((self.vol_w * coef)[:, None] * g).ravel())
        with np.errstate(divide="ignore"):
            xa = np.where(x > 0, x, 0.0) ** (q - 1) if q < 1 else x ** (q - 1)
            ya_pow = np.where(ya > 0, np.abs(ya) ** (q - 1), 0.0) if len(ya) else ya
        xa = np.where(np.isfinite(xa), xa, 0.0)
        dN = q * (self.m * xa + self.P.T @ (self.am * ya_pow))
        return np.log(N) / q - np.log(E) / p, dN / (q * N) - dE / (p * E)

    def ascend(self, x, max_iter: int = 4000, rtol: float = 1e-13):
        x = self.project(x)
        val, grad = self.value_and_grad(x)
        if grad is None:
            return x, val, 0
        tau = 1.0
        quiet = 0
        it = 0
        for it in range(1, max_iter + 1):
            d = self.lu.solve(grad)
            scale = float(x @ (self.K @ x))
            while True:
                cand = self.project(x + tau * scale * d)
                cval, cgrad = self.value_and_grad(cand)
                if cgrad is not None and cval > val:
                    break
                tau *= 0.5
                if tau < 1e-12:
                    return x, val, it
            gain = cval - val
            # R is scale invariant; renormalize so the gradient stays O(1)
            top = np.max(cand)
            x, val, grad = cand / top, cval, cgrad * top
            tau = min(2.0 * tau, 1.0)
            quiet = quiet + 1 if gain <= rtol * max(1.0, abs(val)) else 0
            if quiet >= 5:
                break
        return x, val, it


def _finish(mesh, w, sigma, p, q, x_full, restarts, iterations, weak) -> TraceEstimate:
    f = DiscreteFunction(mesh, x_full / np.max(x_full), zero_trace=True)
    num = weak_lq_norm(f, sigma, q) if weak else lq_norm(f, sigma, q)
    value = num / weighted_p_energy(f, w, p) ** (1.0 / p)
    return TraceEstimate(p, q, float(value), f, restarts, iterations, weak)


def _rayleigh(mesh, w, sigma, p, q, restarts, seed) -> TraceEstimate:
    if sigma.mesh is not mesh or w.mesh is not mesh:
        raise ValueError("sigma and w must live on the given mesh")
    if sigma.is_zero():
        f = DiscreteFunction(mesh, np.where(mesh.interior, 1.0, 0.0), zero_trace=True)
        return TraceEstimate(p, q, 0.0, f, 0, 0)
    Q = _Quotient(mesh, w, sigma, p, q)
    if len(Q.free) == 0:
        raise ValueError("mesh has no interior nodes")
    best = None
    iters = used = 0
    for s in _seeds(mesh, restarts, seed):
        x, val, it = Q.ascend(s[Q.free])
        iters += it
        if not np.isfinite(val):
            continue
        used += 1
        if best is None or val > best[1]:
            best = (x, val)
    if best is None:
        raise ValueError("all restarts degenerate: sigma does not charge the mesh interior")
    return _finish(mesh, w, sigma, p, q, Q.full(best[0]), used, iters, False)


def estimate_trace_constant(mesh: Mesh, w: Weight, sigma: MeasureData, p: float, q: float,
                            restarts: int = 4, seed: DiscreteFunction | None = None) -> TraceEstimate:
    """Lower estimate of the best constant in ``||f||_{L^q(sigma)} <= C ||grad f||_{L^p(w)}``.

    Deterministic multi-start (interior constant, ``delta**a`` bumps and an
    optional previous maximizer); the best run is returned.
    """
    _check_exponents(p, q)
    return _rayleigh(mesh, w, sigma, p, q, restarts, seed)


def capacity(mesh: Mesh, w: Weight, p: float, K, opts: SolverOptions | None = None) -> CapacityResult:
    """Variational ``(p, w)``-capacity of the node set ``K`` relative to the domain."""
    K = np.asarray(K, dtype=bool)
    if K.shape != (mesh.n_nodes,) or not K.any():
        raise ValueError("K must be a nonempty node mask")
    if np.any(K & mesh.boundary):
        raise ValueError("K touches the boundary")
    vals, rep = minimize_energy(mesh, w, OperatorA(p), np.zeros(mesh.n_nodes),
                                fixed_mask=K, fixed_values=1.0, opts=opts)
    if not rep.converged:
        log.warning("capacity solve did not converge (%s)", rep.status)
    u = DiscreteFunction(mesh, np.clip(vals, 0.0, 1.0), zero_trace=True)
    return CapacityResult(K, weighted_p_energy(u, w, p), u)


def _level_sets(f: np.ndarray, interior: np.ndarray, n_levels: int):
    levels = np.unique(f[interior & (f > 0)])
    if len(levels) > n_levels:
        levels = levels[np.unique(np.linspace(0, len(levels) - 1, n_levels).round().astype(int))]
    return levels


def estimate_weak_trace_constant(mesh: Mesh, w: Weight, sigma: MeasureData, p: float, q: float,
                                 restarts: int = 4, seed: DiscreteFunction | None = None,
                                 n_levels: int = 32, max_rounds: int = 12) -> TraceEstimate:
    """Lower estimate of the best constant in ``||f||_{L^{q,inf}(sigma)} <= C ||grad f||_{L^p(w)}``.

    Level-set ascent: for the current f, every sampled superlevel set
    ``K = {f >= t}`` is replaced by its capacitary potential, which never
    lowers the weak quotient; the best candidate becomes the next f.
    Starts from the strong maximizer and the usual seeds.
    """
    _check_exponents(p, q)
    if sigma.is_zero():
        f = DiscreteFunction(mesh, np.where(mesh.interior, 1.0, 0.0), zero_trace=True)
        return TraceEstimate(p, q, 0.0, f, 0, 0, weak=True)
    if seed is None:
        seed = estimate_trace_constant(mesh, w, sigma, p, q, restarts).maximizer
    cache = {}

    def quotient(f: DiscreteFunction) -> float:
        e = weighted_p_energy(f, w, p)
        return weak_lq_norm(f, sigma, q) / e ** (1.0 / p) if e > 0 else -np.inf

    def potential(mask: np.ndarray) -> DiscreteFunction:
        key = mask.tobytes()
        if key not in cache:
            cache[key] = capacity(mesh, w, p, mask).minimizer
        return cache[key]

    best_f, best_val, rounds, used = None, -np.inf, 0, 0
    for s in _seeds(mesh, restarts, seed):
        f = DiscreteFunction(mesh, np.where(mesh.interior, s, 0.0), zero_trace=True)
        val = quotient(f)
        for _ in range(max_rounds):
            rounds += 1
            cands = [(quotient(g), g) for g in
                     (potential(mesh.interior & (f.values >= t)) for t in _level_sets(f.values, mesh.interior, n_levels))]
            if not cands:
                break
            cval, cf = max(cands, key=lambda c: c[0])
            if not cval > val * (1 + 1e-12):
                break
            f, val = cf, cval
        used += 1
        if np.isfinite(val) and val > best_val:
            best_f, best_val = f, val
    if best_f is None:
        raise ValueError("all restarts degenerate: sigma does not charge the mesh interior")
    return _finish(mesh, w, sigma, p, q, best_f.values, used, rounds, True)


@dataclass
class CapacitaryReport:
    rows: list
    C2_needed: float
    C3_needed: float
    C2: float
    passed: bool

    FIELDS = ("j", "level", "nodes", "sigma_K", "cap", "strong_residual", "relaxed_C3")


def capacitary_condition_check(mesh: Mesh, w: Weight, sigma: MeasureData, p: float, q: float,
                               C2: float, u: DiscreteFunction, rtol: float = 1e-6) -> CapacitaryReport:
    """Tabulate ``sigma(E_j)``, ``cap(E_j)`` on the dyadic sets ``E_j = {u > 2**j}``.

    ``strong_residual = sigma(K)**(p/q) - C2**p cap(K)`` (<= 0 passes);
    ``relaxed_C3 = sigma(K) / (cap(K)**(q/p) + 1)``.  ``sigma(K)`` counts the
    mass where the capacitary potential of K equals 1.
    """
    _check_exponents(p, q)
    vals = u.values
    pos = vals[mesh.interior & (vals > 0)]
    if len(pos) == 0:
        raise ValueError("empty family: u has no positive interior values")
    j_lo = int(np.floor(np.log2(pos.min()))) - 1
    j_hi = int(np.ceil(np.log2(pos.max())))
    rows, seen = [], set()
    for j in range(j_lo, j_hi + 1):
        K = mesh.interior & (vals > 2.0 ** j)
        if not K.any() or K.tobytes() in seen:
            continue
        seen.add(K.tobytes())
        cap = capacity(mesh, w, p, K)
        sv, sm = sigma.support_values(cap.minimizer)
        sK = float(sm[sv >= 1 - 1e-12].sum())
        rows.append((j, 2.0 ** j, int(K.sum()), sK, cap.value,
                     sK ** (p / q) - C2 ** p * cap.value, sK / (cap.value ** (q / p) + 1)))
    if not rows:
        raise ValueError("empty family of superlevel sets")
    c2 = max(r[3] ** (1 / q) / r[4] ** (1 / p) for r in rows)
    c3 = max(r[6] for r in rows)
    return CapacitaryReport(rows, c2, c3, C2, bool(c2 <= C2 * (1 + rtol)))


def hardy_check(mesh: Mesh, w: Weight, p: float, t: float, method: str = "auto",
                restarts: int = 4) -> tuple[float, DiscreteFunction]:
    """Discrete best constant C in ``int |f|^p delta^(t-p) <= C int |grad f|^p delta^t``.

    ``method="dense"`` (p = 2 only) solves the generalized eigenproblem on
    the interior nodes; ``"ascent"`` uses the Rayleigh ascent with q = p.
    """
    if not -1 < t < p - 1:
        raise ValueError("Hardy inequality needs -1 < t < p - 1")
    if method == "auto":
        method = "dense" if p == 2 else "ascent"
    sigma = power_density(mesh, p - t)
    if method == "dense":
        if p != 2:
            raise ValueError("dense eigensolve is only available for p = 2")
        Q = _Quotient(mesh, w, sigma, p, p)
        lam, vec = scipy.linalg.eigh(np.diag(Q.m), Q.K.toarray(), subset_by_index=[len(Q.free) - 1] * 2)
        x = np.abs(vec[:, 0])
        f = DiscreteFunction(mesh, Q.full(x / x.max()), zero_trace=True)
        return float(lam[0]), f
    if method != "ascent":
        raise ValueError(f"unknown method {method!r}")
    est = _rayleigh(mesh, w, sigma, p, p, restarts, None)
    return est.value ** p, est.maximizer


@dataclass
class BoundCheck:
    name: str
    lhs: float
    rhs: float
    passed: bool


@dataclass
class SandwichVerdict:
    quantities: dict
    bounds: list = field(default_factory=list)
    potential: PotentialResult | None = None

    @property
    def passed(self) -> bool:
        return all(b.passed for b in self.bounds)


def _le(name, lhs, rhs, rtol) -> BoundCheck:
    return BoundCheck(name, float(lhs), float(rhs), bool(lhs <= rhs * (1 + rtol) + 1e-300))


def _converged_potential(mesh, w, A, sigma, sched, opts) -> PotentialResult:
    res = wa_potential(mesh, w, A, sigma, sched, opts)
    if not res.converged:
        raise ValueError(f"potential does not exist numerically: {res.reason}")
    return res


def verify_thm11_sandwich(mesh: Mesh, w: Weight, A: OperatorA, sigma: MeasureData, p: float, q: float, *,
                          sched: ExhaustionSchedule | None = None, opts: SolverOptions | None = None,
                          rtol: float = 0.05, restarts: int = 4) -> SandwichVerdict:
    """Energy and moment bounds for ``u = W_A sigma`` in the sublinear trace regime.

    Lower bounds use the certified estimate ``C1_hat``; upper bounds use the
    proxy ``C1_plus = beta**(p/q) alpha**((1-p)/q) E**(1/q)``.  Both the
    trace estimate and the moment use the last exhaustion stage of sigma.
    """
    _check_exponents(p, q)
    if A.p != p:
        raise ValueError("operator exponent differs from p")
    res = _converged_potential(mesh, w, A, sigma, sched, opts)
    C1 = estimate_trace_constant(mesh, w, res.stage_measure, p, q, restarts).value
    verdict = sandwich_bounds(res.u, res.stage_measure, w, A, q, C1, rtol)
    verdict.potential = res
    return verdict


def sandwich_bounds(u: DiscreteFunction, sigma: MeasureData, w: Weight, A: OperatorA, q: float,
                 C1: float, rtol: float = 0.05) -> SandwichVerdict:
    """Energy ``E`` and moment ``M`` of a computed potential against both sides of the sandwich."""
    p, a, b = A.p, A.alpha, A.beta
    e = (p - 1) / (p - q)
    E = weighted_p_energy(u.power(e), w, p) ** ((p - q) / p)
    M = lq_norm(u, sigma, q * e) ** ((q * e) * (p - q) / (q * p)) if not sigma.is_zero() else 0.0
    C1p = b ** (p / q) * a ** ((1 - p) / q) * E ** (1 / q)
    kE = (1 / q) * e ** (p - 1)
    kM = q ** (-1 / p) * e ** ((p - 1) / p)
    bounds = [
        _le("energy lower", (a / b) ** p / a * C1 ** q, E, rtol),
        _le("energy upper", E, kE / a * C1p ** q, rtol),
        _le("moment lower", (a / b) * a ** (-1 / p) * C1, M, rtol),
        _le("moment upper", M, kM * a ** (-1 / p) * C1p, rtol),
    ]
    quantities = {"C1_hat": C1, "C1_plus": C1p, "E": E, "M": M,
                  "energy_upper_with_C1_hat": kE / a * C1 ** q,
                  "moment_upper_with_C1_hat": kM * a ** (-1 / p) * C1}
    return SandwichVerdict(quantities, bounds)


def verify_thm51_weak(mesh: Mesh, w: Weight, A: OperatorA, sigma: MeasureData, p: float, q: float, *,
                      sched: ExhaustionSchedule | None = None, opts: SolverOptions | None = None,
                      rtol: float = 0.05, restarts: int = 4) -> SandwichVerdict:
    """Weak-norm bounds ``(a/b) a^(-1/p) C2 <= ||u||_{L^{r,inf}}^((p-1)/p) <= 4^((p-1)/(p-q)) a^(-1/p) C2_plus``.

    ``r = q(p-1)/(p-q)``.  ``C2_plus`` is the strong proxy ``C1_plus``, which
    dominates the weak constant.
    """
    _check_exponents(p, q)
    if A.p != p:
        raise ValueError("operator exponent differs from p")
    a, b = A.alpha, A.beta
    res = _converged_potential(mesh, w, A, sigma, sched, opts)
    sk, u = res.stage_measure, res.u
    e = (p - 1) / (p - q)
    E = weighted_p_energy(u.power(e), w, p) ** ((p - q) / p)
    C1p = b ** (p / q) * a ** ((1 - p) / q) * E ** (1 / q)
    C2 = estimate_weak_trace_constant(mesh, w, sk, p, q, restarts).value
    Wn = weak_lq_norm(u, sk, q * e) ** ((p - 1) / p)
    bounds = [
        _le("weak lower", (a / b) * a ** (-1 / p) * C2, Wn, rtol),
        _le("weak upper", Wn, 4 ** e * a ** (-1 / p) * C1p, rtol),
    ]
    return SandwichVerdict({"C2_hat": C2, "C2_plus": C1p, "weak_norm": Wn, "E": E}, bounds, res)


def admissible_q_threshold(p: float, t: float, s: float) -> float:
    """Lower end ``p(s-1)/(p-1-t)`` of the q-range for ``w = delta**t``, ``sigma = delta**(-s) dx``."""
    return p * (s - 1) / (p - 1 - t)


def power_weight_admissible(p: float, t: float, s: float, q: float) -> bool:
    """Whether the power-weight example is in the range where the trace inequality holds."""
    return bool(-1 < t < p - 1 and 1 <= s <= p - t and admissible_q_threshold(p, t, s) < q < p)

"""Finite-element solver for ``-div A(x, grad u) = mu``, ``u = 0`` on the boundary.

Only potential operators ``A(x, z) = w(x) (z.Dz)**((p-2)/2) D z`` with a
constant positive diagonal D are supported, so the discrete problem is the
minimization of a strictly convex energy.  Newton's method is applied to the
regularized energy with ``|z|**2`` replaced by ``eps**2 + z.Dz``, driving eps
down a fixed schedule.
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .calculus import DiscreteFunction, MeasureData, measure_pairing, weighted_p_energy
from .mesh import Mesh, Weight

log = logging.getLogger(__name__)

DEFAULT_EPS_SCHEDULE = (1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8, 1e-9, 1e-10)


@dataclass(frozen=True)
class OperatorA:
    """Anisotropic weighted p-Laplacian ``w (z.Dz)**((p-2)/2) D z``.

    ``alpha = d_min**(p/2)`` and ``beta = d_max**(p/2)`` are the sharp
    coercivity and growth constants of this family.
    """

    p: float
    diag: tuple = (1.0,)

    def __post_init__(self):
        if not self.p > 1:
            raise ValueError(f"p must exceed 1, got {self.p}")
        d = tuple(float(x) for x in np.atleast_1d(self.diag))
        if min(d) <= 0:
            raise ValueError("anisotropy diagonal must be positive")
        object.__setattr__(self, "diag", d)

    @property
    def alpha(self) -> float:
        return min(self.diag) ** (self.p / 2)

    @property
    def beta(self) -> float:
        return max(self.diag) ** (self.p / 2)

    def D(self, dim: int) -> np.ndarray:
        if len(self.diag) == 1:
            return np.full(dim, self.diag[0])
        if len(self.diag) != dim:
            raise ValueError(f"anisotropy has {len(self.diag)} entries for a {dim}D mesh")
        return np.asarray(self.diag)

    def __call__(self, w: float | np.ndarray, z: np.ndarray) -> np.ndarray:
        """Evaluate A at weight value(s) w and gradient(s) z of shape (..., dim)."""
        z = np.asarray(z, dtype=float)
        D = self.D(z.shape[-1])
        s = np.sum(D * z * z, axis=-1, keepdims=True)
        with np.errstate(divide="ignore", invalid="ignore"):
            scale = np.where(s > 0, s ** ((self.p - 2) / 2), 0.0)
        return np.asarray(w, dtype=float)[..., None] * scale * D * z


@dataclass
class SolverOptions:
    tol: float | None = None  # default 1e-9 * (1 + <mu, 1>)
    max_iter: int = 500
    eps_schedule: tuple = DEFAULT_EPS_SCHEDULE
    blow_up_threshold: float = 1e8
    max_stage_iter: int = 60


@dataclass
class SolveReport:
    iterations: int
    residual: float
    energy: float
    converged: bool
    blow_up: bool
    sup_norm: float
    status: str = "converged"
    tol: float = 0.0

    FIELDS = ("iterations", "residual", "energy", "converged", "blow_up", "sup_norm", "status", "tol")

    def csv_row(self) -> list:
        d = asdict(self)
        return [d[k] for k in self.FIELDS]


class _Discretization:
    """Free-node restriction of the energy, its gradient and Hessian."""

    def __init__(self, mesh: Mesh, w: Weight, A: OperatorA, fixed_mask, fixed_values):
        if w.mesh is not mesh:
            raise ValueError("weight is defined on a different mesh")
        self.mesh, self.A, self.p = mesh, A, A.p
        self.d = mesh.dim
        self.Dvec = A.D(mesh.dim)
        self.free = np.flatnonzero(~(mesh.boundary | fixed_mask))
        self.full_fixed = np.where(fixed_mask & ~mesh.boundary, fixed_values, 0.0)
        G = mesh.gradient_operator
        self.Gf = G[:, self.free].tocsr()
        self.base = (G @ self.full_fixed).reshape(-1, self.d)
        self.vol_w = mesh.volumes * w.cell_values
        mass = sp.diags(np.repeat(self.vol_w, self.d))
        self.K = (self.Gf.T @ mass @ self.Gf).tocsc()
        self._K_lu = spla.splu(self.K) if len(self.free) else None

    def full(self, x) -> np.ndarray:
        u = self.full_fixed.copy()
        u[self.free] = x
        return u

    def grads(self, x) -> np.ndarray:
        return self.base + (self.Gf @ x).reshape(-1, self.d)

    def energy(self, x, load_f, eps) -> float:
        g = self.grads(x)
        s = np.sum(self.Dvec * g * g, axis=1)
        return float(np.sum(self.vol_w * (eps * eps + s) ** (self.p / 2)) / self.p - load_f @ x)

    def gradient(self, x, load_f, eps) -> np.ndarray:
        g = self.grads(x)
        s = np.sum(self.Dvec * g * g, axis=1)
        if eps > 0 or self.p >= 2:
            a = (eps * eps + s) ** ((self.p - 2) / 2)
        else:
            a = np.zeros_like(s)
            pos = s > 0
            a[pos] = s[pos] ** ((self.p - 2) / 2)
        flux = (self.vol_w * a)[:, None] * self.Dvec * g
        return self.Gf.T @ flux.ravel() - load_f

    def hessian(self, x, eps) -> sp.csr_matrix:
        g = self.grads(x)
        s = np.sum(self.Dvec * g * g, axis=1)
        r = eps * eps + s
        a = r ** ((self.p - 2) / 2)
        b = np.zeros_like(r) if self.p == 2 else (self.p - 2) * r ** ((self.p - 4) / 2)
        Dg = self.Dvec * g
        n, d = g.shape
        blocks = a[:, None, None] * np.diag(self.Dvec)[None] + b[:, None, None] * Dg[:, :, None] * Dg[:, None, :]
        blocks *= self.vol_w[:, None, None]
        idx = np.arange(n * d).reshape(n, d)
        rows = np.repeat(idx[:, :, None], d, axis=2)
        cols = np.repeat(idx[:, None, :], d, axis=1)
        B = sp.csr_matrix((blocks.ravel(), (rows.ravel(), cols.ravel())), shape=(n * d, n * d))
        return (self.Gf.T @ B @ self.Gf).tocsc()

    def precondition(self, r) -> np.ndarray:
        return self._K_lu.solve(r)

    def dual_norm(self, r) -> float:
        if len(r) == 0:
            return 0.0
        return math.sqrt(max(float(r @ self._K_lu.solve(r)), 0.0))


def minimize_energy(mesh: Mesh, w: Weight, A: OperatorA, load: np.ndarray, *,
                    fixed_mask=None, fixed_values=None, u0=None,
                    opts: SolverOptions | None = None) -> tuple[np.ndarray, SolveReport]:
    """Minimize ``(1/p) int (grad u.D grad u)**(p/2) w - load.u`` over P1 functions.

    Boundary nodes are zero; nodes in ``fixed_mask`` are pinned to
    ``fixed_values``.  Returns full nodal values and a report.
    """
    opts = opts or SolverOptions()
    n = mesh.n_nodes
    fixed_mask = np.zeros(n, bool) if fixed_mask is None else np.asarray(fixed_mask, bool)
    fixed_values = np.zeros(n) if fixed_values is None else np.broadcast_to(np.asarray(fixed_values, float), (n,))
    disc = _Discretization(mesh, w, A, fixed_mask, fixed_values)
    load = np.asarray(load, dtype=float)
    load_f = load[disc.free]
    tol = opts.tol if opts.tol is not None else 1e-9 * (1.0 + abs(float(load.sum())))

    x = np.zeros(len(disc.free)) if u0 is None else np.array(np.asarray(u0, float)[disc.free])
    if len(disc.free) == 0:
        u = disc.full(x)
        return u, SolveReport(0, 0.0, 0.0, True, False, float(np.max(np.abs(u), initial=0.0)), tol=tol)

    schedule = (0.0,) if A.p == 2 else tuple(opts.eps_schedule)
    iterations = 0
    blow_up = False
    res = np.inf
    for eps in schedule:
        for _ in range(opts.max_stage_iter):
            r = disc.gradient(x, load_f, eps)
            res = disc.dual_norm(r)
            if res <= tol or iterations >= opts.max_iter:
                break
            try:
                step = spla.spsolve(disc.hessian(x, eps), -r)
                ok = np.all(np.isfinite(step)) and step @ r < 0
            except RuntimeError:
                ok = False
            if not ok:
                step = -disc.precondition(r)
            slope = float(step @ r)
            J0 = disc.energy(x, load_f, eps)
            tau = 1.0
            slack = 1e-13 * (abs(J0) + 1.0)
            while disc.energy(x + tau * step, load_f, eps) > J0 + 1e-4 * tau * slope + slack:
                tau *= 0.5
                if tau < 1e-14:
                    break
            if tau < 1e-14:
                log.debug("line search stalled at eps=%g, residual %.3e", eps, res)
                break
            x = x + tau * step
            iterations += 1
            if np.max(np.abs(x)) > opts.blow_up_threshold:
                blow_up = True
                break
        if blow_up or iterations >= opts.max_iter:
            break

    u = disc.full(x)
    r = disc.gradient(x, load_f, 0.0)
    res = disc.dual_norm(r) if np.all(np.isfinite(r)) else np.inf
    converged = (not blow_up) and res <= tol
    if blow_up:
        status = "blow-up"
    elif converged:
        status = "converged"
    elif A.p < 2 and iterations < opts.max_iter:
        status = "regularization-limited"
    else:
        status = "max-iter"
    energy = disc.energy(x, load_f, 0.0)
    return u, SolveReport(iterations, res, energy, converged, blow_up,
                          float(np.max(np.abs(u))), status, tol)


def solve(mesh: Mesh, w: Weight, A: OperatorA, mu: MeasureData,
          opts: SolverOptions | None = None, u0=None) -> tuple[DiscreteFunction, SolveReport]:
    """Discrete ``W^0_A mu``: the zero-trace minimizer of ``J(u) = (1/p) E_A(u) - <mu, u>``."""
    if mu.mesh is not mesh:
        raise ValueError("measure is defined on a different mesh")
    u0v = None if u0 is None else (u0.values if isinstance(u0, DiscreteFunction) else u0)
    values, report = minimize_energy(mesh, w, A, mu.load_vector(), u0=u0v, opts=opts)
    if not report.converged:
        log.warning("solve did not converge: %s (residual %.3e, tol %.3e)",
                    report.status, report.residual, report.tol)
    return DiscreteFunction(mesh, values, zero_trace=True), report


def flux_pairing(u: DiscreteFunction, w: Weight, A: OperatorA, phi: DiscreteFunction | None = None) -> float:
    """``int A(x, grad u) . grad phi dx`` (phi defaults to u)."""
    mesh = u.mesh
    g = mesh.cell_gradients(u.values)
    gp = g if phi is None else mesh.cell_gradients(phi.values)
    flux = A(w.cell_values, g)
    return float(np.sum(mesh.volumes * np.sum(flux * gp, axis=1)))


def energy_identity_check(u: DiscreteFunction, w: Weight, A: OperatorA, mu: MeasureData) -> tuple[float, float, float]:
    """``(alpha * int |grad u|^p w, int A(grad u).grad u, <mu, u>)``."""
    lhs = A.alpha * weighted_p_energy(u, w, A.p)
    mid = flux_pairing(u, w, A)
    rhs = measure_pairing(u, mu)
    return lhs, mid, rhs


def comparison_check(mesh: Mesh, w: Weight, A: OperatorA, mu: MeasureData, nu: MeasureData,
                     opts: SolverOptions | None = None, tol: float | None = None) -> bool:
    """Solve for both measures and test ``u_mu <= u_nu + tol`` at every node."""
    if np.any(mu.load_vector() > nu.load_vector() + 1e-15 * (1 + np.abs(nu.load_vector()))):
        raise ValueError("comparison_check needs mu <= nu")
    u_mu, _ = solve(mesh, w, A, mu, opts)
    u_nu, _ = solve(mesh, w, A, nu, opts)
    if tol is None:
        tol = 1e-7 * (1.0 + u_nu.sup())
    return bool(np.all(u_mu.values <= u_nu.values + tol))

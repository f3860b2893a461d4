"""Piecewise-linear functions and node-lumped measures on a :class:`Mesh`."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .mesh import Mesh, Weight


def _readonly(a):
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class DiscreteFunction:
    """Nodal values of a P1 function; ``zero_trace`` pins boundary values to 0."""

    mesh: Mesh
    values: np.ndarray
    zero_trace: bool = False

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != (self.mesh.n_nodes,):
            raise ValueError(f"expected {self.mesh.n_nodes} nodal values, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("discrete functions must be finite at every node")
        if self.zero_trace:
            if np.any(v[self.mesh.boundary] != 0):
                raise ValueError("zero_trace function has nonzero boundary values")
        object.__setattr__(self, "values", _readonly(v))

    @classmethod
    def zeros(cls, mesh: Mesh) -> DiscreteFunction:
        return cls(mesh, np.zeros(mesh.n_nodes), zero_trace=True)

    @classmethod
    def interpolate(cls, mesh: Mesh, fn: Callable, zero_trace: bool = False) -> DiscreteFunction:
        x = mesh.points[:, 0] if mesh.dim == 1 else mesh.points
        v = np.asarray(fn(x), dtype=float) * np.ones(mesh.n_nodes)
        if zero_trace:
            v = np.where(mesh.boundary, 0.0, v)
        return cls(mesh, v, zero_trace)

    def __call__(self, x) -> np.ndarray:
        return self.mesh.interpolation_matrix(x) @ self.values

    def with_values(self, values) -> DiscreteFunction:
        return DiscreteFunction(self.mesh, values, self.zero_trace)

    def __mul__(self, c: float) -> DiscreteFunction:
        return self.with_values(c * self.values)

    __rmul__ = __mul__

    def power(self, e: float) -> DiscreteFunction:
        """Nodal power of a nonnegative function (used for u**gamma transforms)."""
        if np.any(self.values < 0):
            raise ValueError("power() needs a nonnegative function")
        return self.with_values(self.values ** e)

    def sup(self) -> float:
        return float(np.max(np.abs(self.values))) if len(self.values) else 0.0

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["node"] + [f"x{k}" for k in range(self.mesh.dim)] + ["value"])
            for i, (x, v) in enumerate(zip(self.mesh.points, self.values)):
                out.writerow([i] + [repr(float(c)) for c in x] + [repr(float(v))])

    @classmethod
    def from_csv(cls, mesh: Mesh, path, zero_trace: bool = False) -> DiscreteFunction:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))[1:]
        values = np.zeros(mesh.n_nodes)
        for row in rows:
            values[int(row[0])] = float(row[-1])
        return cls(mesh, values, zero_trace)


@dataclass(frozen=True, eq=False)
class MeasureData:
    """Nonnegative measure: lumped nodal masses plus optional point atoms.

    ``infinite`` marks measures whose continuum total mass diverges (e.g.
    ``delta**(-s) dx`` with ``s >= 1``); the discrete masses are then a
    mesh-dependent finite realization.
    """

    mesh: Mesh
    node_mass: np.ndarray
    atom_points: np.ndarray = field(default_factory=lambda: np.zeros((0, 1)))
    atom_mass: np.ndarray = field(default_factory=lambda: np.zeros(0))
    infinite: bool = False
    label: str = ""

    def __post_init__(self):
        m = np.array(self.node_mass, dtype=float)
        if m.shape != (self.mesh.n_nodes,):
            raise ValueError("node_mass must have one entry per node")
        if np.any(m < 0) or not np.all(np.isfinite(m)):
            raise ValueError("lumped masses must be finite and nonnegative")
        pts = np.array(self.atom_points, dtype=float).reshape(-1, self.mesh.dim)
        am = np.array(self.atom_mass, dtype=float).reshape(-1)
        if len(pts) != len(am):
            raise ValueError("atom_points and atom_mass lengths differ")
        if np.any(am < 0):
            raise ValueError("atom masses must be nonnegative")
        if len(pts) and not np.all(self.mesh.contains(pts)):
            raise ValueError("atom outside the domain")
        object.__setattr__(self, "node_mass", _readonly(m))
        object.__setattr__(self, "atom_points", _readonly(pts))
        object.__setattr__(self, "atom_mass", _readonly(am))

    @cached_property
    def atom_interp(self) -> sp.csr_matrix:
        if len(self.atom_mass) == 0:
            return sp.csr_matrix((0, self.mesh.n_nodes))
        return self.mesh.interpolation_matrix(self.atom_points)

    @cached_property
    def atom_delta(self) -> np.ndarray:
        if len(self.atom_mass) == 0:
            return np.zeros(0)
        return self.mesh.distance(self.atom_points)

    @property
    def total_mass(self) -> float:
        return float(self.node_mass.sum() + self.atom_mass.sum())

    def load_vector(self) -> np.ndarray:
        """Coefficients of the functional f -> <sigma, f> on nodal values."""
        return self.node_mass + self.atom_interp.T @ self.atom_mass

    def support_values(self, f: DiscreteFunction) -> tuple[np.ndarray, np.ndarray]:
        """Values of f at every mass point (nodes then atoms) and their masses."""
        vals = np.concatenate([f.values, self.atom_interp @ f.values])
        return vals, np.concatenate([self.node_mass, self.atom_mass])

    def is_zero(self) -> bool:
        return self.total_mass == 0

    def scaled(self, c: float) -> MeasureData:
        if c < 0:
            raise ValueError("scale must be nonnegative")
        return MeasureData(self.mesh, c * self.node_mass, self.atom_points, c * self.atom_mass,
                           self.infinite, self.label)

    def restricted(self, node_mask, atom_mask=None) -> MeasureData:
        node_mask = np.asarray(node_mask, dtype=bool)
        if atom_mask is None:
            atom_mask = np.ones(len(self.atom_mass), dtype=bool)
        return MeasureData(self.mesh, np.where(node_mask, self.node_mass, 0.0),
                           self.atom_points[atom_mask], self.atom_mass[atom_mask],
                           False, self.label)

    def with_node_mass(self, node_mass) -> MeasureData:
        return MeasureData(self.mesh, node_mass, self.atom_points, self.atom_mass, self.infinite, self.label)

    def __add__(self, other: MeasureData) -> MeasureData:
        if other.mesh is not self.mesh:
            raise ValueError("measures live on different meshes")
        return MeasureData(self.mesh, self.node_mass + other.node_mass,
                           np.concatenate([self.atom_points, other.atom_points]),
                           np.concatenate([self.atom_mass, other.atom_mass]),
                           self.infinite or other.infinite, self.label or other.label)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["node", "mass"])
            for i, m in enumerate(self.node_mass):
                out.writerow([i, repr(float(m))])
            out.writerow(["atoms"] + [f"x{k}" for k in range(self.mesh.dim)] + ["mass"])
            for x, m in zip(self.atom_points, self.atom_mass):
                out.writerow([""] + [repr(float(c)) for c in x] + [repr(float(m))])

    @classmethod
    def from_csv(cls, mesh: Mesh, path) -> MeasureData:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        split = next(i for i, r in enumerate(rows) if r and r[0] == "atoms")
        node_mass = np.zeros(mesh.n_nodes)
        for r in rows[1:split]:
            node_mass[int(r[0])] = float(r[1])
        atoms = [list(map(float, r[1:])) for r in rows[split + 1:] if r]
        pts = np.array([a[:-1] for a in atoms]).reshape(-1, mesh.dim)
        am = np.array([a[-1] for a in atoms])
        return cls(mesh, node_mass, pts, am)


def _density_masses(mesh: Mesh, cell_density: np.ndarray) -> np.ndarray:
    share = np.repeat(cell_density * mesh.volumes / (mesh.dim + 1), mesh.dim + 1)
    return np.bincount(mesh.cells.ravel(), weights=share, minlength=mesh.n_nodes)


def density_measure(mesh: Mesh, density: Callable, label: str = "density") -> MeasureData:
    """Lump ``density(x) dx`` onto nodes, evaluating the density at barycenters."""
    x = mesh.barycenters[:, 0] if mesh.dim == 1 else mesh.barycenters
    rho = np.asarray(density(x), dtype=float) * np.ones(mesh.n_cells)
    return MeasureData(mesh, _density_masses(mesh, rho), label=label)


def lebesgue(mesh: Mesh, scale: float = 1.0) -> MeasureData:
    return MeasureData(mesh, scale * mesh.node_volumes, label="lebesgue")


def power_density(mesh: Mesh, s: float, scale: float = 1.0) -> MeasureData:
    """``scale * delta**(-s) dx``; flagged infinite when ``s >= 1``."""
    rho = scale * mesh.cell_delta ** (-float(s))
    return MeasureData(mesh, _density_masses(mesh, rho), infinite=s >= 1, label=f"delta^-{s:g}")


def atoms(mesh: Mesh, locations, masses) -> MeasureData:
    pts = np.asarray(locations, dtype=float).reshape(-1, mesh.dim)
    return MeasureData(mesh, np.zeros(mesh.n_nodes), pts, np.asarray(masses, dtype=float).reshape(-1),
                       label="atoms")


def zero_measure(mesh: Mesh) -> MeasureData:
    return MeasureData(mesh, np.zeros(mesh.n_nodes), label="zero")


def _same_mesh(*objs) -> None:
    meshes = {id(o.mesh) for o in objs}
    if len(meshes) != 1:
        raise ValueError("arguments are defined on different meshes")


def weighted_p_energy(f: DiscreteFunction, w: Weight, p: float) -> float:
    """``int |grad f|**p w dx``, exact per cell with w at the barycenter."""
    if not p > 1:
        raise ValueError("p must exceed 1")
    _same_mesh(f, w)
    g = np.linalg.norm(f.mesh.cell_gradients(f.values), axis=1)
    return float(np.sum(f.mesh.volumes * w.cell_values * g ** p))


def measure_pairing(f: DiscreteFunction, sigma: MeasureData) -> float:
    _same_mesh(f, sigma)
    return float(sigma.load_vector() @ f.values)


def lq_norm(f: DiscreteFunction, sigma: MeasureData, q: float) -> float:
    if not q > 0:
        raise ValueError("q must be positive")
    _same_mesh(f, sigma)
    vals, mass = sigma.support_values(f)
    return float(np.sum(mass * np.abs(vals) ** q) ** (1.0 / q))


def level_profile(f: DiscreteFunction, sigma: MeasureData) -> tuple[np.ndarray, np.ndarray]:
    """Distinct positive levels t of |f| on the mass points, with sigma({|f| >= t})."""
    vals, mass = sigma.support_values(f)
    vals = np.abs(vals)
    keep = (mass > 0) & (vals > 0)
    vals, mass = vals[keep], mass[keep]
    if len(vals) == 0:
        return np.zeros(0), np.zeros(0)
    order = np.argsort(-vals, kind="stable")
    vals, mass = vals[order], mass[order]
    tail = np.cumsum(mass)
    last = np.r_[vals[1:] != vals[:-1], True]
    return vals[last], tail[last]


def weak_lq_norm(f: DiscreteFunction, sigma: MeasureData, q: float) -> float:
    """``sup_t t * sigma({|f| >= t})**(1/q)`` over the attained levels."""
    if not q > 0:
        raise ValueError("q must be positive")
    _same_mesh(f, sigma)
    levels, mass = level_profile(f, sigma)
    if len(levels) == 0:
        return 0.0
    return float(np.max(levels * mass ** (1.0 / q)))

"""Simplicial meshes of 1D intervals and axis-aligned 2D polygons.

Every mesh carries the exact distance to the boundary, both at the nodes and
at the cell barycenters, because the model weights ``delta**t`` and the
measures ``delta**(-s) dx`` are evaluated from it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

W_FLOOR = 1e-14
_GEOM_TOL = 1e-12


def _frozen(a, dtype=float):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


def _segment_distance(points, vertices):
    """Distance from each point to the closed polygon with the given vertices."""
    points = np.atleast_2d(points)
    best = np.full(len(points), np.inf)
    n = len(vertices)
    for k in range(n):
        a = vertices[k]
        b = vertices[(k + 1) % n]
        ab = b - a
        t = np.clip(((points - a) @ ab) / (ab @ ab), 0.0, 1.0)
        proj = a + t[:, None] * ab
        best = np.minimum(best, np.linalg.norm(points - proj, axis=1))
    return best


def _inside_polygon(points, vertices):
    """Even-odd ray casting; points on the boundary are not reliable here."""
    x, y = points[:, 0], points[:, 1]
    inside = np.zeros(len(points), dtype=bool)
    n = len(vertices)
    for k in range(n):
        x0, y0 = vertices[k]
        x1, y1 = vertices[(k + 1) % n]
        if y0 == y1:
            continue
        crosses = (y0 > y) != (y1 > y)
        xc = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
        inside ^= crosses & (x < xc)
    return inside


@dataclass(frozen=True, eq=False)
class Mesh:
    """Immutable simplicial mesh with boundary flags and distance to the boundary.

    ``domain`` is ``("interval", a, b)`` or ``("polygon", vertices)`` and is
    used to evaluate the exact boundary distance at arbitrary points.
    """

    points: np.ndarray
    cells: np.ndarray
    boundary: np.ndarray
    delta: np.ndarray
    cell_delta: np.ndarray
    volumes: np.ndarray
    domain: tuple

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def n_nodes(self) -> int:
        return len(self.points)

    @property
    def n_cells(self) -> int:
        return len(self.cells)

    @property
    def interior(self) -> np.ndarray:
        return ~self.boundary

    @property
    def measure(self) -> float:
        return float(self.volumes.sum())

    @cached_property
    def barycenters(self) -> np.ndarray:
        return self.points[self.cells].mean(axis=1)

    @cached_property
    def node_volumes(self) -> np.ndarray:
        """Lumped Lebesgue mass of each hat function."""
        share = np.repeat(self.volumes / (self.dim + 1), self.dim + 1)
        return np.bincount(self.cells.ravel(), weights=share, minlength=self.n_nodes)

    @cached_property
    def local_size(self) -> np.ndarray:
        """Per-node mesh size: longest edge among the cells touching the node."""
        pts = self.points[self.cells]
        longest = np.zeros(self.n_cells)
        for i in range(self.dim + 1):
            for j in range(i + 1, self.dim + 1):
                longest = np.maximum(longest, np.linalg.norm(pts[:, i] - pts[:, j], axis=1))
        out = np.zeros(self.n_nodes)
        for j in range(self.dim + 1):
            np.maximum.at(out, self.cells[:, j], longest)
        return out

    @cached_property
    def gradient_operator(self) -> sp.csr_matrix:
        """Sparse map from nodal values to stacked per-cell gradients.

        Row ``c * dim + k`` holds the k-th component of the gradient on cell c.
        """
        d = self.dim
        pts = self.points[self.cells]
        edges = np.transpose(pts[:, 1:] - pts[:, :1], (0, 2, 1))  # columns x_j - x_0
        inv = np.linalg.inv(edges)  # row j = grad of barycentric coordinate j+1
        grads = np.concatenate([-inv.sum(axis=1, keepdims=True), inv], axis=1)
        rows = np.repeat(np.arange(self.n_cells * d).reshape(self.n_cells, 1, d), d + 1, axis=1)
        cols = np.repeat(self.cells[:, :, None], d, axis=2)
        return sp.csr_matrix(
            (grads.ravel(), (rows.ravel(), cols.ravel())),
            shape=(self.n_cells * d, self.n_nodes),
        )

    def cell_gradients(self, values) -> np.ndarray:
        return (self.gradient_operator @ np.asarray(values, dtype=float)).reshape(self.n_cells, self.dim)

    def distance(self, x) -> np.ndarray:
        """Exact distance to the boundary for points inside the domain."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.domain[0] == "interval":
            _, a, b = self.domain
            return np.minimum(x[:, 0] - a, b - x[:, 0])
        return _segment_distance(x, np.asarray(self.domain[1], dtype=float))

    def contains(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if self.domain[0] == "interval":
            _, a, b = self.domain
            return (x[:, 0] >= a - _GEOM_TOL) & (x[:, 0] <= b + _GEOM_TOL)
        verts = np.asarray(self.domain[1], dtype=float)
        return _inside_polygon(x, verts) | (_segment_distance(x, verts) <= _GEOM_TOL)

    def locate(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Containing cell and barycentric coordinates for each point.

        Raises ValueError for points outside the mesh.
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        pts = self.points[self.cells]
        edges = np.transpose(pts[:, 1:] - pts[:, :1], (0, 2, 1))
        inv = np.linalg.inv(edges)
        cell_ids = np.empty(len(x), dtype=int)
        bary = np.empty((len(x), self.dim + 1))
        for i, xi in enumerate(x):
            lam = np.einsum("cij,cj->ci", inv, xi - pts[:, 0])
            full = np.concatenate([1.0 - lam.sum(axis=1, keepdims=True), lam], axis=1)
            ok = np.flatnonzero(full.min(axis=1) >= -1e-10)
            if len(ok) == 0:
                raise ValueError(f"point {xi.tolist()} lies outside the mesh")
            cell_ids[i] = ok[0]
            bary[i] = np.clip(full[ok[0]], 0.0, 1.0)
        return cell_ids, bary

    def interpolation_matrix(self, x) -> sp.csr_matrix:
        """Matrix evaluating a P1 function at the given points."""
        cell_ids, bary = self.locate(x)
        rows = np.repeat(np.arange(len(cell_ids)), self.dim + 1)
        cols = self.cells[cell_ids].ravel()
        return sp.csr_matrix((bary.ravel(), (rows, cols)), shape=(len(cell_ids), self.n_nodes))


def _finish(points, cells, domain) -> Mesh:
    points = np.asarray(points, dtype=float)
    cells = np.asarray(cells, dtype=int)
    d = points.shape[1]
    pts = points[cells]
    edges = np.transpose(pts[:, 1:] - pts[:, :1], (0, 2, 1))
    det = np.linalg.det(edges)
    flip = det < 0
    if flip.any():
        cells = cells.copy()
        cells[flip, 0], cells[flip, 1] = cells[flip, 1], cells[flip, 0].copy()
        det = np.abs(det)
    volumes = det / math.factorial(d)
    tmp = Mesh(points, cells, np.zeros(len(points), bool), np.zeros(len(points)),
               np.zeros(len(cells)), volumes, domain)
    delta = tmp.distance(points)
    boundary = delta <= _GEOM_TOL
    delta = np.where(boundary, 0.0, delta)
    cell_delta = tmp.distance(points[cells].mean(axis=1))
    return Mesh(
        points=_frozen(points),
        cells=_frozen(cells, int),
        boundary=_frozen(boundary, bool),
        delta=_frozen(delta),
        cell_delta=_frozen(cell_delta),
        volumes=_frozen(volumes),
        domain=domain,
    )


def build_interval_mesh(a: float, b: float, n_cells: int) -> Mesh:
    """Uniform mesh of ``[a, b]`` with ``n_cells`` cells."""
    if not (np.isfinite(a) and np.isfinite(b)) or a >= b:
        raise ValueError(f"need a < b, got a={a}, b={b}")
    if int(n_cells) != n_cells or n_cells < 2:
        raise ValueError(f"n_cells must be an integer >= 2, got {n_cells}")
    n_cells = int(n_cells)
    x = np.linspace(a, b, n_cells + 1)
    cells = np.column_stack([np.arange(n_cells), np.arange(1, n_cells + 1)])
    return _finish(x[:, None], cells, ("interval", float(a), float(b)))


def _validate_polygon(vertices: np.ndarray) -> None:
    n = len(vertices)
    if n not in (4, 6):
        raise ValueError("only axis-aligned rectangles (4 vertices) and L-shapes (6 vertices) are supported")
    x, y = vertices[:, 0], vertices[:, 1]
    signed = 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)
    if signed <= 0:
        raise ValueError("polygon must be counterclockwise with positive area")
    for k in range(n):
        e = vertices[(k + 1) % n] - vertices[k]
        if not (abs(e[0]) <= _GEOM_TOL) ^ (abs(e[1]) <= _GEOM_TOL):
            raise ValueError("polygon edges must be axis-aligned and nondegenerate")
        prev = vertices[k] - vertices[k - 1]
        if abs(prev[0] * e[1] - prev[1] * e[0]) <= _GEOM_TOL:
            raise ValueError("consecutive polygon edges must turn")


def build_polygon_mesh(polygon, h: float) -> Mesh:
    """Structured triangulation of an axis-aligned rectangle or L-shape.

    The bounding box is split into squares of side at most ``h`` (each cut
    into two triangles); the grid must pass through every polygon vertex.
    """
    vertices = np.asarray(polygon, dtype=float)
    if vertices.ndim != 2 or vertices.shape[1] != 2:
        raise ValueError("polygon must be a list of (x, y) vertices")
    _validate_polygon(vertices)
    if not h > 0:
        raise ValueError("h must be positive")
    shortest = min(np.linalg.norm(vertices[(k + 1) % len(vertices)] - vertices[k])
                   for k in range(len(vertices)))
    if h > shortest + _GEOM_TOL:
        raise ValueError(f"h={h} exceeds the shortest polygon edge {shortest}")

    lo, hi = vertices.min(axis=0), vertices.max(axis=0)
    nx, ny = (int(math.ceil((hi[i] - lo[i]) / h - 1e-9)) for i in range(2))
    xs = np.linspace(lo[0], hi[0], nx + 1)
    ys = np.linspace(lo[1], hi[1], ny + 1)
    for vx, vy in vertices:
        if np.min(np.abs(xs - vx)) > 1e-9 or np.min(np.abs(ys - vy)) > 1e-9:
            raise ValueError("polygon vertices do not fall on the structured grid for this h")

    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    grid = np.column_stack([gx.ravel(), gy.ravel()])
    idx = np.arange((nx + 1) * (ny + 1)).reshape(nx + 1, ny + 1)
    i, j = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    n00, n10, n01, n11 = idx[i, j].ravel(), idx[i + 1, j].ravel(), idx[i, j + 1].ravel(), idx[i + 1, j + 1].ravel()
    tris = np.concatenate([np.column_stack([n00, n10, n11]), np.column_stack([n00, n11, n01])])
    keep = _inside_polygon(grid[tris].mean(axis=1), vertices)
    tris = tris[keep]
    used = np.unique(tris)
    renumber = np.full(len(grid), -1)
    renumber[used] = np.arange(len(used))
    return _finish(grid[used], renumber[tris], ("polygon", tuple(map(tuple, vertices.tolist()))))


@dataclass(frozen=True, eq=False)
class Weight:
    """Power weight ``w = delta**t``.

    ``cell_values`` (evaluated at barycenters) are what every integral uses;
    ``node_values`` clamp delta below by ``W_FLOOR`` so boundary nodes carry a
    finite, flagged value that no quadrature touches.
    """

    mesh: Mesh
    t: float
    node_values: np.ndarray
    cell_values: np.ndarray

    @property
    def constant(self) -> bool:
        return self.t == 0

    @cached_property
    def node_masses(self) -> np.ndarray:
        """Lumped w-mass of each hat function, used for discrete balls."""
        m = self.mesh
        share = np.repeat(self.cell_values * m.volumes / (m.dim + 1), m.dim + 1)
        return np.bincount(m.cells.ravel(), weights=share, minlength=m.n_nodes)

    def check_admissible(self, p: float) -> None:
        if not (-1 < self.t < p - 1):
            raise ValueError(f"weight exponent t={self.t} must satisfy -1 < t < p-1 = {p - 1}")


def power_weight(mesh: Mesh, t: float) -> Weight:
    t = float(t)
    if t == 0:
        nodes = np.ones(mesh.n_nodes)
        cells = np.ones(mesh.n_cells)
    else:
        nodes = np.maximum(mesh.delta, W_FLOOR) ** t
        cells = np.maximum(mesh.cell_delta, W_FLOOR) ** t
    return Weight(mesh, t, _frozen(nodes), _frozen(cells))


def constant_weight(mesh: Mesh) -> Weight:
    return power_weight(mesh, 0.0)


def save_mesh(mesh: Mesh, path) -> None:
    """Write the plain-text node/element format.

    Layout: a ``domain`` line, ``nodes N`` followed by one line per node
    (coordinates, boundary flag, delta), then ``cells M`` and node indices.
    """
    lines = []
    if mesh.domain[0] == "interval":
        lines.append(f"domain interval {mesh.domain[1]!r} {mesh.domain[2]!r}")
    else:
        flat = " ".join(f"{x!r} {y!r}" for x, y in mesh.domain[1])
        lines.append(f"domain polygon {flat}")
    lines.append(f"nodes {mesh.n_nodes} {mesh.dim}")
    for x, b, d in zip(mesh.points, mesh.boundary, mesh.delta):
        lines.append(" ".join(repr(float(c)) for c in x) + f" {int(b)} {float(d)!r}")
    lines.append(f"cells {mesh.n_cells}")
    for c in mesh.cells:
        lines.append(" ".join(str(int(i)) for i in c))
    Path(path).write_text("\n".join(lines) + "\n")


def load_mesh(path) -> Mesh:
    tokens = Path(path).read_text().splitlines()
    head = tokens[0].split()
    if head[:2] == ["domain", "interval"]:
        domain = ("interval", float(head[2]), float(head[3]))
    elif head[:2] == ["domain", "polygon"]:
        vals = list(map(float, head[2:]))
        domain = ("polygon", tuple(zip(vals[0::2], vals[1::2])))
    else:
        raise ValueError(f"{path}: missing domain line")
    _, n_nodes, dim = tokens[1].split()
    n_nodes, dim = int(n_nodes), int(dim)
    rows = np.array([list(map(float, ln.split())) for ln in tokens[2:2 + n_nodes]])
    n_cells = int(tokens[2 + n_nodes].split()[1])
    cells = np.array([list(map(int, ln.split())) for ln in tokens[3 + n_nodes:3 + n_nodes + n_cells]])
    mesh = _finish(rows[:, :dim], cells, domain)
    if not np.array_equal(mesh.boundary, rows[:, dim].astype(bool)):
        raise ValueError(f"{path}: boundary flags disagree with the domain geometry")
    return mesh

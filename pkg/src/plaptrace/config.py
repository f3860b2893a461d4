"""Scenario configuration: an INI-style ``key = value`` file with sections.

Schema (all keys optional unless noted)::

    [domain]     kind = interval | polygon
                 a, b, n_cells            (interval)
                 vertices = x y; x y; ... , h   (polygon, CCW, axis-aligned)
    [weight]     t = 0
    [measure]    kind = lebesgue | power_density | atoms | zero
                 s (power_density), scale = 1
                 atoms = x [y] : mass; ...
    [operator]   p = 2, diag = 1 [1]
    [problem]    kind = measure_data | singular | trace | capacity | wolff
                 q, gamma, weak = false, restarts = 4
                 nonlinearity = decreasing | sublinear     (singular)
                 set = lo hi [lo hi]      (capacity box, per coordinate)
                 points = x [y]; ... , R, n_quad = 64, sandwich = false, C_cap = 10  (wolff)
                 theorems = thm11 thm51 thm12 cor65 thm13 (verify)
    [solver]     tol, max_iter, blow_up_threshold
    [exhaustion] r0 = 0.25, factor = 2, k_max = 12, k_min = 1, cap0, shift = dyadic | harmonic
    [sweep]      p, t, s, q (space-separated lists), levels = 3, drift_tol = 0.05, workers = 1
    [output]     dir = out, plot = false
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass, field, replace

import numpy as np

from .calculus import MeasureData, atoms, lebesgue, power_density, zero_measure
from .mesh import Mesh, Weight, build_interval_mesh, build_polygon_mesh, constant_weight, power_weight
from .potential import ExhaustionSchedule
from .solver import OperatorA, SolverOptions

PROBLEMS = ("measure_data", "singular", "trace", "capacity", "wolff")
MEASURES = ("lebesgue", "power_density", "atoms", "zero")
THEOREMS = ("thm11", "thm51", "thm12", "cor65", "thm13")


class ConfigError(ValueError):
    """Schema violation, naming the offending field."""

    def __init__(self, section: str, key: str, reason: str):
        super().__init__(f"[{section}] {key}: {reason}")
        self.section, self.key, self.reason = section, key, reason


@dataclass(frozen=True)
class ScenarioConfig:
    domain_kind: str = "interval"
    a: float = 0.0
    b: float = 1.0
    n_cells: int = 256
    vertices: tuple = ()
    h: float = 0.0625
    t: float = 0.0
    measure_kind: str = "lebesgue"
    s: float = 1.0
    scale: float = 1.0
    atom_list: tuple = ()
    p: float = 2.0
    diag: tuple = (1.0,)
    problem: str = "measure_data"
    q: float | None = None
    gamma: float | None = None
    nonlinearity: str = "decreasing"
    weak: bool = False
    restarts: int = 4
    cap_set: tuple = ()
    points: tuple = ()
    R: float = 0.1
    n_quad: int = 64
    sandwich: bool = False
    C_cap: float = 10.0
    theorems: tuple = THEOREMS
    solver: SolverOptions = field(default_factory=SolverOptions)
    schedule: ExhaustionSchedule = field(default_factory=ExhaustionSchedule)
    shift: str = "dyadic"
    sweep: dict = field(default_factory=dict)
    out_dir: str = "out"
    plot: bool = False

    def refined(self, levels: int) -> ScenarioConfig:
        if levels < 0:
            raise ConfigError("cli", "refine", "must be nonnegative")
        return replace(self, n_cells=self.n_cells * 2 ** levels, h=self.h / 2 ** levels)

    def build_mesh(self) -> Mesh:
        if self.domain_kind == "interval":
            return build_interval_mesh(self.a, self.b, self.n_cells)
        return build_polygon_mesh(np.array(self.vertices), self.h)

    def build_weight(self, mesh: Mesh) -> Weight:
        return constant_weight(mesh) if self.t == 0 else power_weight(mesh, self.t)

    def build_measure(self, mesh: Mesh) -> MeasureData:
        if self.measure_kind == "lebesgue":
            return lebesgue(mesh, self.scale)
        if self.measure_kind == "power_density":
            return power_density(mesh, self.s, self.scale)
        if self.measure_kind == "atoms":
            locs = [a[:-1] for a in self.atom_list]
            return atoms(mesh, locs, [self.scale * a[-1] for a in self.atom_list])
        return zero_measure(mesh)

    def operator(self) -> OperatorA:
        return OperatorA(self.p, self.diag)


def _floats(text: str, section: str, key: str) -> list:
    try:
        return [float(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise ConfigError(section, key, f"expected numbers, got {text!r}") from None


def _groups(text: str, section: str, key: str) -> list:
    return [_floats(g, section, key) for g in text.split(";") if g.strip()]


class _Reader:
    def __init__(self, cp: configparser.ConfigParser):
        self.cp = cp

    def get(self, section, key, default=None):
        if self.cp.has_option(section, key):
            return self.cp.get(section, key).strip()
        return default

    def num(self, section, key, default=None, kind=float):
        raw = self.get(section, key)
        if raw is None:
            return default
        try:
            return kind(raw)
        except ValueError:
            raise ConfigError(section, key, f"expected {kind.__name__}, got {raw!r}") from None

    def flag(self, section, key, default=False):
        raw = self.get(section, key)
        if raw is None:
            return default
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ConfigError(section, key, f"expected a boolean, got {raw!r}")

    def choice(self, section, key, options, default):
        raw = self.get(section, key, default)
        if raw not in options:
            raise ConfigError(section, key, f"must be one of {', '.join(options)}")
        return raw


def parse_config(text: str) -> ScenarioConfig:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#",))
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError("file", "syntax", str(exc).splitlines()[0]) from None
    r = _Reader(cp)
    kw = {}

    kw["domain_kind"] = r.choice("domain", "kind", ("interval", "polygon"), "interval")
    if kw["domain_kind"] == "interval":
        kw["a"], kw["b"] = r.num("domain", "a", 0.0), r.num("domain", "b", 1.0)
        kw["n_cells"] = r.num("domain", "n_cells", 256, int)
        if not kw["a"] < kw["b"]:
            raise ConfigError("domain", "b", "interval needs a < b")
        if kw["n_cells"] < 2:
            raise ConfigError("domain", "n_cells", "need at least 2 cells")
    else:
        verts = _groups(r.get("domain", "vertices", ""), "domain", "vertices")
        if len(verts) < 3 or any(len(v) != 2 for v in verts):
            raise ConfigError("domain", "vertices", "need at least 3 vertices with 2 coordinates each")
        kw["vertices"] = tuple(tuple(v) for v in verts)
        kw["h"] = r.num("domain", "h", 0.0625)
        if not kw["h"] > 0:
            raise ConfigError("domain", "h", "must be positive")
    dim = 1 if kw["domain_kind"] == "interval" else 2

    p = r.num("operator", "p", 2.0)
    if not p > 1:
        raise ConfigError("operator", "p", "must satisfy p > 1")
    kw["p"] = p
    diag = tuple(_floats(r.get("operator", "diag", " ".join(["1"] * dim)), "operator", "diag"))
    if len(diag) != dim or min(diag) <= 0:
        raise ConfigError("operator", "diag", f"need {dim} positive entries")
    kw["diag"] = diag

    t = r.num("weight", "t", 0.0)
    if not -1 < t < p - 1:
        raise ConfigError("weight", "t", "must satisfy -1 < t < p - 1")
    kw["t"] = t

    kw["measure_kind"] = r.choice("measure", "kind", MEASURES, "lebesgue")
    kw["scale"] = r.num("measure", "scale", 1.0)
    if kw["scale"] < 0:
        raise ConfigError("measure", "scale", "must be nonnegative")
    if kw["measure_kind"] == "power_density":
        s = r.num("measure", "s")
        if s is None or s < 1:
            raise ConfigError("measure", "s", "must satisfy s >= 1")
        kw["s"] = s
    if kw["measure_kind"] == "atoms":
        groups = []
        for g in r.get("measure", "atoms", "").split(";"):
            if not g.strip():
                continue
            if ":" not in g:
                raise ConfigError("measure", "atoms", "entries look like 'x [y] : mass'")
            loc, mass = g.split(":")
            loc = _floats(loc, "measure", "atoms")
            if len(loc) != dim:
                raise ConfigError("measure", "atoms", f"locations need {dim} coordinates")
            groups.append(tuple(loc) + (float(mass),))
        if not groups:
            raise ConfigError("measure", "atoms", "at least one atom is required")
        kw["atom_list"] = tuple(groups)

    kw["problem"] = r.choice("problem", "kind", PROBLEMS, "measure_data")
    q = r.num("problem", "q")
    if q is not None and not 0 < q < p:
        raise ConfigError("problem", "q", "must satisfy 0 < q < p")
    kw["q"] = q
    gamma = r.num("problem", "gamma")
    if gamma is not None and not gamma > 0:
        raise ConfigError("problem", "gamma", "must satisfy gamma > 0")
    kw["gamma"] = gamma
    kw["nonlinearity"] = r.choice("problem", "nonlinearity", ("decreasing", "sublinear"), "decreasing")
    if kw["problem"] == "singular":
        if kw["nonlinearity"] == "decreasing" and gamma is None:
            raise ConfigError("problem", "gamma", "required for a decreasing nonlinearity")
        if kw["nonlinearity"] == "sublinear" and (q is None or not q < 1):
            raise ConfigError("problem", "q", "sublinear nonlinearity needs 0 < q < 1")
    if kw["problem"] == "trace" and q is None:
        raise ConfigError("problem", "q", "required for trace problems")
    kw["weak"] = r.flag("problem", "weak")
    kw["restarts"] = r.num("problem", "restarts", 4, int)
    if kw["problem"] == "capacity":
        box = _floats(r.get("problem", "set", ""), "problem", "set")
        if len(box) != 2 * dim or any(box[2 * i] > box[2 * i + 1] for i in range(dim)):
            raise ConfigError("problem", "set", f"need {dim} (lo, hi) pairs")
        kw["cap_set"] = tuple(box)
    kw["points"] = tuple(tuple(g) for g in _groups(r.get("problem", "points", ""), "problem", "points"))
    if any(len(g) != dim for g in kw["points"]):
        raise ConfigError("problem", "points", f"points need {dim} coordinates")
    kw["R"] = r.num("problem", "R", 0.1)
    if not kw["R"] > 0:
        raise ConfigError("problem", "R", "must be positive")
    kw["n_quad"] = r.num("problem", "n_quad", 64, int)
    if kw["n_quad"] < 16:
        raise ConfigError("problem", "n_quad", "must be at least 16")
    kw["sandwich"] = r.flag("problem", "sandwich")
    kw["C_cap"] = r.num("problem", "C_cap", 10.0)
    if kw["problem"] == "wolff" and not kw["points"]:
        raise ConfigError("problem", "points", "wolff needs at least one sample point")
    theorems = tuple(r.get("problem", "theorems", " ".join(THEOREMS)).split())
    bad = [th for th in theorems if th not in THEOREMS]
    if bad:
        raise ConfigError("problem", "theorems", f"unknown {bad[0]!r}; choose from {', '.join(THEOREMS)}")
    kw["theorems"] = theorems

    tol = r.num("solver", "tol")
    kw["solver"] = SolverOptions(tol=tol, max_iter=r.num("solver", "max_iter", 500, int),
                                 blow_up_threshold=r.num("solver", "blow_up_threshold", 1e8))
    try:
        kw["schedule"] = ExhaustionSchedule(r.num("exhaustion", "r0", 0.25), r.num("exhaustion", "factor", 2.0),
                                            r.num("exhaustion", "k_max", 12, int), r.num("exhaustion", "cap0"),
                                            r.num("exhaustion", "k_min", 1, int))
    except ValueError as exc:
        raise ConfigError("exhaustion", "r0", str(exc)) from None
    kw["shift"] = r.choice("exhaustion", "shift", ("dyadic", "harmonic"), "dyadic")

    sweep = {}
    for key in ("p", "t", "s", "q"):
        default = {"p": str(p), "t": str(t), "s": "", "q": ""}[key]
        sweep[key] = _floats(r.get("sweep", key, default), "sweep", key)
    for pp in sweep["p"]:
        if not pp > 1:
            raise ConfigError("sweep", "p", "must satisfy p > 1")
        for tt in sweep["t"]:
            if not -1 < tt < pp - 1:
                raise ConfigError("sweep", "t", "must satisfy -1 < t < p - 1")
        for qq in sweep["q"]:
            if not 0 < qq < pp:
                raise ConfigError("sweep", "q", "must satisfy 0 < q < p")
    if any(ss < 1 for ss in sweep["s"]):
        raise ConfigError("sweep", "s", "must satisfy s >= 1")
    sweep["levels"] = r.num("sweep", "levels", 3, int)
    if sweep["levels"] < 1:
        raise ConfigError("sweep", "levels", "need at least one level")
    sweep["drift_tol"] = r.num("sweep", "drift_tol", 0.05)
    sweep["workers"] = r.num("sweep", "workers", 1, int)
    kw["sweep"] = sweep

    kw["out_dir"] = r.get("output", "dir", "out")
    kw["plot"] = r.flag("output", "plot")
    return ScenarioConfig(**kw)


def load_config(path) -> ScenarioConfig:
    try:
        with open(path) as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigError("file", str(path), exc.strerror or "unreadable") from None

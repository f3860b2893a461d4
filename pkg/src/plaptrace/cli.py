"""Command-line front end: ``plaptrace <command> --config FILE [--out DIR] ...``.

Exit status is 0 on success, 1 when any check fails or a solver error
occurs, and 2 on configuration errors.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .calculus import DiscreteFunction
from .config import ConfigError, ScenarioConfig, load_config
from .potential import StageError, wa_potential, wolff_potential, wolff_sandwich_check
from .singular import (SingularNonlinearity, SingularStageError, solve_singular, verify_cor65,
                       verify_thm12_equivalence, verify_thm13_bounds)
from .solver import solve
from .svgplot import line_chart
from .trace import (capacity, estimate_trace_constant, estimate_weak_trace_constant, power_weight_admissible,
                    sandwich_bounds, verify_thm11_sandwich, verify_thm51_weak)

COMMANDS = ("solve", "potential", "trace", "capacity", "wolff", "singular", "verify", "sweep")
CONTRACTION = 0.85
SWEEP_FIELDS = ("p", "q", "t", "s", "level", "h", "C_hat", "drift", "E", "M", "sandwich",
                "potential_verdict", "expected", "observed", "pass", "error")


class Report:
    def __init__(self):
        self.lines = []
        self.failed = False

    def info(self, text: str) -> None:
        self.lines.append(text)

    def check(self, name: str, ok: bool, detail: str = "") -> None:
        self.lines.append(f"{'PASS' if ok else 'FAIL'} {name}" + (f": {detail}" if detail else ""))
        self.failed |= not ok

    def write(self, path: Path) -> None:
        path.write_text("\n".join(self.lines) + "\n")


def _f(x) -> str:
    return repr(float(x))


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(header)
        out.writerows(rows)


def _setup(cfg: ScenarioConfig):
    mesh = cfg.build_mesh()
    return mesh, cfg.build_weight(mesh), cfg.operator(), cfg.build_measure(mesh)


def _plot_profile(u: DiscreteFunction, path: Path, title: str) -> None:
    if u.mesh.dim == 1:
        order = np.argsort(u.mesh.points[:, 0])
        line_chart([("u", u.mesh.points[order, 0], u.values[order])], path, title, "x", "u")


def _nonlinearity(cfg: ScenarioConfig) -> SingularNonlinearity | None:
    if cfg.nonlinearity == "sublinear":
        return SingularNonlinearity.sublinear(cfg.q) if cfg.q is not None and cfg.q < 1 else None
    return SingularNonlinearity.decreasing(cfg.gamma) if cfg.gamma is not None else None


def cmd_solve(cfg, out, rep, args):
    mesh, w, A, sigma = _setup(cfg)
    u, sr = solve(mesh, w, A, sigma, cfg.solver)
    u.to_csv(out / "solution.csv")
    _write_rows(out / "solve_report.csv", sr.FIELDS, [sr.csv_row()])
    rep.info(f"nodes = {mesh.n_nodes}")
    rep.info(f"u_max = {u.sup():.10g}")
    rep.info(f"iterations = {sr.iterations}")
    rep.info(f"residual = {sr.residual:.3e}")
    rep.check("solve converged", sr.converged, sr.status)
    if args.plot:
        _plot_profile(u, out / "solution.svg", "measure-data solution")


def cmd_potential(cfg, out, rep, args):
    mesh, w, A, sigma = _setup(cfg)
    res = wa_potential(mesh, w, A, sigma, cfg.schedule, cfg.solver)
    res.u.to_csv(out / "potential.csv")
    res.write_stage_log(out / "stages.csv")
    rep.info(f"verdict = {res.verdict} ({res.reason})")
    rep.info(f"u_max = {res.u.sup():.10g}")
    rep.check("stage monotonicity", res.monotonicity_violations == 0,
              f"{res.monotonicity_violations} violations")
    if args.plot:
        line_chart([("sup u_k", [s.k for s in res.stages], res.sups)], out / "stages.svg",
                   "exhaustion stages", "k", "sup u_k")


def cmd_trace(cfg, out, rep, args):
    mesh, w, A, sigma = _setup(cfg)
    est = estimate_trace_constant(mesh, w, sigma, cfg.p, cfg.q, cfg.restarts)
    est.maximizer.to_csv(out / "maximizer.csv")
    rep.info(f"C1_hat = {est.value:.6g}")
    rep.info(f"restarts = {est.restarts}, iterations = {est.iterations}")
    if cfg.weak:
        weak = estimate_weak_trace_constant(mesh, w, sigma, cfg.p, cfg.q, cfg.restarts, seed=est.maximizer)
        weak.maximizer.to_csv(out / "weak_maximizer.csv")
        rep.info(f"C2_hat = {weak.value:.6g}")
        rep.check("weak <= strong", weak.value <= est.value * (1 + 1e-9),
                  f"{weak.value:.6g} <= {est.value:.6g}")
    if args.plot:
        _plot_profile(est.maximizer, out / "maximizer.svg", "trace maximizer")


def _box_mask(mesh, box) -> np.ndarray:
    mask = np.ones(mesh.n_nodes, dtype=bool)
    for i in range(mesh.dim):
        x = mesh.points[:, i]
        mask &= (x >= box[2 * i] - 1e-12) & (x <= box[2 * i + 1] + 1e-12)
    return mask


def cmd_capacity(cfg, out, rep, args):
    mesh, w, A, _ = _setup(cfg)
    res = capacity(mesh, w, cfg.p, _box_mask(mesh, cfg.cap_set), cfg.solver)
    res.minimizer.to_csv(out / "capacity_potential.csv")
    rep.info(f"nodes in K = {int(res.K.sum())}")
    rep.info(f"cap = {res.value:.10g}")
    if args.plot:
        _plot_profile(res.minimizer, out / "capacity_potential.svg", "capacitary potential")


def cmd_wolff(cfg, out, rep, args):
    mesh, w, A, sigma = _setup(cfg)
    rows = []
    for x in cfg.points:
        val = wolff_potential(sigma, x, cfg.R, cfg.p, w, cfg.n_quad)
        rows.append([_f(c) for c in x] + [_f(cfg.R), _f(val)])
        rep.info(f"W^R at {tuple(x)} = {val:.6g}")
    _write_rows(out / "wolff.csv", [f"x{i}" for i in range(mesh.dim)] + ["R", "wolff"], rows)
    if cfg.sandwich:
        res = wa_potential(mesh, w, A, sigma, cfg.schedule, cfg.solver)
        if not res.converged:
            rep.check("wolff sandwich", False, f"potential {res.verdict}: {res.reason}")
            return
        chk = wolff_sandwich_check(res.u, sigma, cfg.points, cfg.R, w=w, p=cfg.p, C_cap=cfg.C_cap,
                                   n_quad=cfg.n_quad)
        _write_rows(out / "sandwich.csv", chk.FIELDS,
                    [[" ".join(_f(c) for c in r[0])] + [_f(v) for v in r[1:]] for r in chk.rows])
        rep.check("wolff sandwich", chk.passed, f"C_needed = {chk.C_needed:.4g} <= C_cap = {chk.C_cap:g}")


def cmd_singular(cfg, out, rep, args):
    mesh, w, A, sigma = _setup(cfg)
    nl = _nonlinearity(cfg)
    if nl is None:
        raise ConfigError("problem", "gamma", "singular runs need gamma, or q < 1 with nonlinearity = sublinear")
    u, sr = solve_singular(mesh, w, A, sigma, nl, cfg.schedule, shift=cfg.shift, opts=cfg.solver)
    u.to_csv(out / "solution.csv")
    sr.write_stage_log(out / "stages.csv")
    rep.info(f"verdict = {sr.verdict} ({sr.reason})")
    rep.info(f"u_max = {u.sup():.10g}")
    rep.info(f"energy = {sr.stages[-1].energy:.10g}")
    rep.check("singular run", sr.verdict == "converged", sr.verdict)
    rep.check("barrier g(u_k) <= W sigma_k", sr.min_barrier_margin >= -10 * sr.tol,
              f"min margin {sr.min_barrier_margin:.3e}")
    rep.check("stage monotonicity", sr.monotonicity_violations == 0, f"{sr.monotonicity_violations} violations")
    rep.check("positivity", sr.positivity_failures == 0, f"{sr.positivity_failures} failures")
    if args.plot:
        _plot_profile(u, out / "solution.svg", "singular solution")


def cmd_verify(cfg, out, rep, args):
    mesh, w, A, sigma = _setup(cfg)
    rows = []

    def record(theorem, verdict):
        for b in verdict.bounds:
            rows.append([theorem, b.name, _f(b.lhs), _f(b.rhs), "PASS" if b.passed else "FAIL"])
            rep.check(f"{theorem}: {b.name}", b.passed, f"{b.lhs:.6g} <= {b.rhs:.6g}")
        for k, v in verdict.quantities.items():
            rep.info(f"  {theorem} {k} = {v:.6g}" if isinstance(v, float) else f"  {theorem} {k} = {v}")

    for th in cfg.theorems:
        if th in ("thm11", "thm51"):
            if cfg.q is None:
                rep.info(f"SKIP {th}: needs q")
                continue
            fn = verify_thm11_sandwich if th == "thm11" else verify_thm51_weak
            record(th, fn(mesh, w, A, sigma, cfg.p, cfg.q, sched=cfg.schedule, opts=cfg.solver))
        elif th == "thm12":
            if cfg.q is None or not cfg.q < 1:
                rep.info("SKIP thm12: needs 0 < q < 1")
                continue
            record(th, verify_thm12_equivalence(mesh, w, A, sigma, cfg.p, cfg.q, opts=cfg.solver))
        elif th == "cor65":
            if cfg.gamma is None or sigma.infinite or sigma.is_zero():
                rep.info("SKIP cor65: needs gamma and a finite nonzero measure")
                continue
            record(th, verify_cor65(mesh, w, A, sigma, cfg.p, cfg.gamma, opts=cfg.solver))
        elif th == "thm13":
            nl = _nonlinearity(cfg)
            if nl is None or sigma.is_zero():
                rep.info("SKIP thm13: needs a nonlinearity and a nonzero measure")
                continue
            record(th, verify_thm13_bounds(mesh, w, A, sigma, nl, opts=cfg.solver))
    _write_rows(out / "verify.csv", ("theorem", "bound", "lhs", "rhs", "result"), rows)


def sweep_point(cfg: ScenarioConfig, p: float, t: float, s: float, q: float) -> list:
    """All refinement levels of one grid point; errors are recorded, not raised."""
    levels = cfg.sweep["levels"]
    expected = power_weight_admissible(p, t, s, q)
    dim = 1 if cfg.domain_kind == "interval" else 2
    base = replace(cfg, p=p, t=t, s=s, q=q, measure_kind="power_density", diag=(1.0,) * dim)
    rows, values = [], []
    verdict, error = "", ""
    try:
        for level in range(levels):
            c = base.refined(level)
            mesh, w, A, sigma = _setup(c)
            pot = wa_potential(mesh, w, A, sigma, c.schedule, c.solver)
            verdict = pot.verdict
            C = estimate_trace_constant(mesh, w, sigma, p, q, c.restarts).value
            drift = abs(C - values[-1]) / values[-1] if values and values[-1] > 0 else float("nan")
            values.append(C)
            E = M = float("nan")
            sandwich = ""
            if pot.converged:
                sv = sandwich_bounds(pot.u, pot.stage_measure, w, A, q, C)
                E, M = sv.quantities["E"], sv.quantities["M"]
                sandwich = "PASS" if sv.passed else "FAIL"
            h = (c.b - c.a) / c.n_cells if dim == 1 else c.h
            rows.append([p, q, t, s, level, h, C, drift, E, M, sandwich, verdict])
    except (ValueError, RuntimeError) as exc:
        error = f"{type(exc).__name__}: {exc}"
    drifts = [r[7] for r in rows[1:]]
    observed = not error and verdict == "converged" and _settles(drifts, cfg.sweep["drift_tol"])
    ok = not error and observed == expected and all(r[10] != "FAIL" for r in rows)
    if error:
        rows.append([p, q, t, s, len(rows), float("nan"), float("nan"), float("nan"),
                     float("nan"), float("nan"), "", verdict])
    out = []
    for r in rows:
        out.append([_f(v) if isinstance(v, float) else str(v) for v in r]
                   + ["stable" if expected else "unstable", "stable" if observed else "unstable",
                      "PASS" if ok else "FAIL", error])
    return out


def _settles(drifts, tol: float) -> bool:
    """Small drifts, or drifts contracting geometrically (a finite limit approached slowly)."""
    if all(d <= tol for d in drifts):
        return True
    return len(drifts) >= 2 and all(0 < b <= CONTRACTION * a for a, b in zip(drifts, drifts[1:]))


def _sweep_task(args):
    return sweep_point(*args)


def cmd_sweep(cfg, out, rep, args):
    sw = cfg.sweep
    grid = list(itertools.product(sw["p"], sw["t"], sw["s"], sw["q"]))
    workers = args.workers or sw["workers"]
    tasks = [(cfg, *g) for g in grid]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_task, tasks))
    else:
        results = [_sweep_task(t) for t in tasks]
    rows = [r for res in results for r in res]
    _write_rows(out / "sweep.csv", SWEEP_FIELDS, rows)
    rep.info(f"grid points = {len(grid)}")
    for g, res in zip(grid, results):
        last = res[-1]
        rep.check(f"sweep p={g[0]:g} t={g[1]:g} s={g[2]:g} q={g[3]:g}", last[14] == "PASS",
                  f"expected {last[12]}, observed {last[13]}" + (f", {last[15]}" if last[15] else ""))
    if args.plot and results:
        series = [(f"t={g[1]:g} s={g[2]:g} q={g[3]:g}", [float(r[4]) for r in res], [float(r[6]) for r in res])
                  for g, res in zip(grid, results)]
        line_chart(series, out / "sweep.svg", "C_hat vs refinement level", "level", "C_hat")


HANDLERS = {"solve": cmd_solve, "potential": cmd_potential, "trace": cmd_trace, "capacity": cmd_capacity,
            "wolff": cmd_wolff, "singular": cmd_singular, "verify": cmd_verify, "sweep": cmd_sweep}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="plaptrace", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", required=True, help="scenario file")
        sp.add_argument("--out", help="output directory (default: [output] dir)")
        sp.add_argument("--refine", type=int, default=0, help="uniform refinement levels")
        sp.add_argument("--workers", type=int, default=0, help="worker processes for sweeps")
        sp.add_argument("--plot", action="store_true", help="also write SVG plots")
        sp.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.command == "sweep":
            if args.refine:
                cfg = replace(cfg, sweep={**cfg.sweep, "levels": args.refine})
        else:
            cfg = cfg.refined(args.refine)
        args.plot = args.plot or cfg.plot
        out = Path(args.out or cfg.out_dir)
        out.mkdir(parents=True, exist_ok=True)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    rep = Report()
    try:
        HANDLERS[args.command](cfg, out, rep, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (StageError, SingularStageError, ValueError, RuntimeError) as exc:
        rep.check(args.command, False, f"{type(exc).__name__}: {exc}")
    rep.write(out / "report.txt")
    print("\n".join(rep.lines))
    return 1 if rep.failed else 0


if __name__ == "__main__":
    sys.exit(main())

"""Acceptance criteria 1-10, each at its stated tolerance.

Every criterion records one ``criterion N: PASS|FAIL ...`` line, printed in
the pytest terminal summary (or directly when run as a script).
"""

import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from plaptrace import (DiscreteFunction, ExhaustionSchedule, MeasureData, OperatorA, SingularNonlinearity,
                       atoms, build_interval_mesh, capacity, comparison_check, constant_weight,
                       estimate_trace_constant, hardy_check, lebesgue, lq_norm, measure_pairing, power_density,
                       solve, solve_singular, verify_thm11_sandwich, verify_thm12_equivalence, wa_potential,
                       weak_lq_norm, weighted_p_energy, wolff_potential)

from conftest import ACCEPTANCE_LINES, unit_interval

ROOT = Path(__file__).resolve().parent.parent
ONE_OVER_SQRT12 = 1 / np.sqrt(12)
# dense generalized eigensolve, 1D, p = 2, t = 0, h = 1/1024 (continuum value 4 is
# approached only logarithmically, so the discrete oracle is frozen instead)
HARDY_ORACLE_1024 = 3.6239293


def record(n, ok, detail):
    ACCEPTANCE_LINES.append(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
    assert ok, detail


def rel(a, b):
    return abs(a - b) / abs(b)


def test_criterion_01_closed_form_solves():
    m, w = unit_interval(256)
    u, _ = solve(m, w, OperatorA(2), lebesgue(m))
    x = m.points[:, 0]
    err2 = float(np.max(np.abs(u.values - x * (1 - x) / 2)))
    m3, w3 = unit_interval(512)
    u3, _ = solve(m3, w3, OperatorA(3), lebesgue(m3))
    err3 = abs(u3.sup() - (2 / 3) * 0.5 ** 1.5)
    record(1, err2 <= 1e-4 and err3 <= 1e-3,
           f"p=2 max error {err2:.2e} (<= 1e-4); p=3 max u {u3.sup():.6f}, error {err3:.2e} (<= 1e-3)")


def test_criterion_02_tight_trace_case():
    m, w = unit_interval(256)
    sigma = lebesgue(m)
    C1 = estimate_trace_constant(m, w, sigma, 2, 1).value
    u, _ = solve(m, w, OperatorA(2), sigma)
    grad = weighted_p_energy(u, w, 2) ** 0.5
    moment = measure_pairing(u, sigma) ** 0.5
    vals = (C1, grad, moment)
    record(2, all(rel(v, ONE_OVER_SQRT12) <= 0.02 for v in vals),
           "C1_hat, ||u'||, (int u)^(1/2) = " + ", ".join(f"{v:.6f}" for v in vals) + " vs 0.288675 (2%)")


def test_criterion_03_strict_trace_case():
    m, w = unit_interval(256)
    v = verify_thm11_sandwich(m, w, OperatorA(2), lebesgue(m), 2, 0.5, rtol=0.05)
    factor = v.quantities["energy_upper_with_C1_hat"] / v.quantities["C1_hat"] ** 0.5
    parts = ", ".join(f"{b.name} {b.lhs:.4f} <= {b.rhs:.4f}" for b in v.bounds)
    record(3, v.passed and abs(factor - 4 / 3) < 1e-12, f"{parts}; energy factor {factor:.6f} (4/3)")


def test_criterion_04_wolff_oracle_and_monotonicity():
    m = build_interval_mesh(-2.0, 2.0, 1024)
    w = constant_weight(m)
    unit = atoms(m, [[0.0]], [1.0])
    W = wolff_potential(unit, [0.25], 1.0, 2.0, w, n_quad=64)
    quad_ok = rel(W, 0.375) <= 0.02

    rng = np.random.default_rng(20240601)
    bad = 0
    for _ in range(20):
        mask = rng.random(m.n_nodes) < 0.3
        mu = MeasureData(m, rng.random(m.n_nodes) * mask * m.node_volumes,
                         rng.uniform(-1.5, 1.5, (2, 1)), rng.random(2))
        nu = MeasureData(m, mu.node_mass + rng.random(m.n_nodes) * m.node_volumes,
                         np.vstack([mu.atom_points, rng.uniform(-1.5, 1.5, (1, 1))]),
                         np.concatenate([mu.atom_mass, rng.random(1)]))
        x = rng.uniform(-1.0, 1.0, 1)
        R1, R2 = np.sort(rng.uniform(0.02, 1.0, 2))
        p = rng.choice([1.5, 2.0, 3.0])
        for method in ("trapezoid", "exact"):
            a = wolff_potential(mu, x, R1, p, w, method=method)
            b = wolff_potential(mu, x, R2, p, w, method=method)
            c = wolff_potential(nu, x, R1, p, w, method=method)
            # mu-monotonicity is exact for both rules; R-monotonicity needs the exact rule
            bad += not (a <= c)
            if method == "exact":
                bad += not (a <= b)
    record(4, quad_ok and bad == 0,
           f"W(0.25) = {W:.5f} vs 0.375 ({100 * rel(W, 0.375):.2f}% <= 2%); monotonicity violations {bad}/20 cases")


def test_criterion_05_capacity_oracle():
    m, w = unit_interval(512)
    x = m.points[:, 0]
    K = (x >= 0.25 - 1e-12) & (x <= 0.75 + 1e-12)
    c2, c3 = capacity(m, w, 2, K).value, capacity(m, w, 3, K).value
    record(5, rel(c2, 8) <= 0.01 and rel(c3, 32) <= 0.01, f"cap_2 = {c2:.6f} (8), cap_3 = {c3:.6f} (32), 1%")


def test_criterion_06_existence_dichotomy():
    m, w = unit_interval(1024)
    A, sched = OperatorA(2), ExhaustionSchedule(r0=0.25, k_max=12)
    conv = wa_potential(m, w, A, power_density(m, 1), sched)
    div = wa_potential(m, w, A, power_density(m, 2), sched)
    vals = []
    for n in (128, 256, 512, 1024):
        mm, ww = unit_interval(n)
        vals.append(estimate_trace_constant(mm, ww, power_density(mm, 1), 2, 1).value)
    drifts = [rel(b, a) for a, b in zip(vals, vals[1:])]
    ok = conv.converged and div.verdict == "diverging" and len(div.stages) <= 12 and max(drifts) <= 0.05
    record(6, ok, f"s=1: {conv.verdict} ({conv.reason}); C1_hat drifts "
           + ", ".join(f"{100 * d:.2f}%" for d in drifts)
           + f"; s=2: {div.verdict} ({div.reason})")


def test_criterion_07_hardy():
    m, w = unit_interval(1024)
    dense, _ = hardy_check(m, w, 2, 0.0, method="dense")
    ascent, _ = hardy_check(m, w, 2, 0.0, method="ascent")
    ok = abs(dense - HARDY_ORACLE_1024) < 1e-6 and rel(ascent, dense) <= 0.05
    record(7, ok, f"dense {dense:.7f} (frozen {HARDY_ORACLE_1024}), ascent {ascent:.7f}, "
           f"relative gap {rel(ascent, dense):.1e} (<= 5%)")


def test_criterion_08_singular_identity():
    m, w = unit_interval(4096)
    u, rep = solve_singular(m, w, OperatorA(2), lebesgue(m), SingularNonlinearity.decreasing(1.0),
                            ExhaustionSchedule(k_max=20))
    E = weighted_p_energy(u, w, 2)
    ok = abs(E - 1) <= 1e-3 and rep.min_barrier_margin >= -1e-6 and rep.monotonicity_violations == 0
    record(8, ok, f"int |u'|^2 = {E:.6f} (1 +- 1e-3), barrier margin {rep.min_barrier_margin:.2e} (>= -1e-6), "
           f"monotonicity violations {rep.monotonicity_violations}")


def test_criterion_09_finite_energy_equivalence():
    m, w = unit_interval(256)
    v = verify_thm12_equivalence(m, w, OperatorA(2), lebesgue(m), 2, 0.5)
    parts = ", ".join(f"{b.name} {b.lhs:.6f} <= {b.rhs:.6f}" for b in v.bounds)
    record(9, v.passed, parts)


def _random_measure(mesh, rng):
    mask = rng.random(mesh.n_nodes) < 0.5
    k = rng.integers(0, 3)
    return MeasureData(mesh, rng.random(mesh.n_nodes) * mask * mesh.node_volumes,
                       rng.uniform(0.1, 0.9, (k, 1)), 0.1 * rng.random(k))


def test_criterion_10_property_suites(tmp_path):
    rng = np.random.default_rng(7)
    m, w = unit_interval(64)
    notes, ok = [], True

    comp = 0
    for _ in range(50):
        p = rng.choice([1.5, 2.0, 3.0])
        mu, extra = _random_measure(m, rng), _random_measure(m, rng)
        nu = MeasureData(m, mu.node_mass + extra.node_mass, np.vstack([mu.atom_points, extra.atom_points]),
                         np.concatenate([mu.atom_mass, extra.atom_mass]))
        comp += comparison_check(m, w, OperatorA(p), mu, nu)
    ok &= comp == 50
    notes.append(f"comparison {comp}/50")

    worst = 0.0
    for _ in range(10):
        p, t = rng.choice([1.5, 2.0, 3.0]), rng.uniform(0.1, 10)
        mu = _random_measure(m, rng)
        u, _ = solve(m, w, OperatorA(p), mu)
        ut, _ = solve(m, w, OperatorA(p), mu.scaled(t ** (p - 1)))
        worst = max(worst, float(np.max(np.abs(ut.values - t * u.values))) / (1 + t * u.sup()))
    ok &= worst <= 1e-6
    notes.append(f"homogeneity error {worst:.1e}")

    weak_ok = 0
    for _ in range(100):
        f = DiscreteFunction(m, rng.random(m.n_nodes) ** rng.uniform(0.2, 5))
        sigma, q = _random_measure(m, rng), rng.uniform(0.25, 4)
        weak_ok += weak_lq_norm(f, sigma, q) <= lq_norm(f, sigma, q) * (1 + 1e-12)
    ok &= weak_ok == 100
    notes.append(f"weak <= strong {weak_ok}/100")

    mm, ww = unit_interval(256)
    sigma = power_density(mm, 1)
    a = wa_potential(mm, ww, OperatorA(2), sigma, ExhaustionSchedule(r0=1.0, factor=2.0, k_max=20))
    b = wa_potential(mm, ww, OperatorA(2), sigma, ExhaustionSchedule(r0=1.0, factor=3.0, k_max=20))
    tol = 1e-9 * (1 + sigma.total_mass)
    gap = float(np.max(np.abs(a.u.values - b.u.values)))
    ok &= a.converged and b.converged and gap <= 5 * tol
    notes.append(f"schedule gap {gap / tol:.2f} tol")

    outputs = []
    for i in range(2):
        out = tmp_path / f"run{i}"
        subprocess.run([sys.executable, "-m", "plaptrace.cli", "trace", "--config",
                        str(ROOT / "configs" / "trace_q1.ini"), "--out", str(out)], check=True,
                       capture_output=True)
        outputs.append(b"".join((out / f).read_bytes() for f in ("maximizer.csv", "report.txt")))
    same = outputs[0] == outputs[1]
    ok &= same
    notes.append("byte-identical reruns" if same else "reruns differ")
    record(10, bool(ok), "; ".join(notes))


if __name__ == "__main__":
    code = pytest.main([__file__, "-q", "-p", "no:cacheprovider"])
    sys.exit(code)

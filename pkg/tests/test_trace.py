import numpy as np
import pytest

from plaptrace import (DiscreteFunction, OperatorA, atoms, build_interval_mesh, build_polygon_mesh,
                       capacitary_condition_check, capacity, constant_weight, estimate_trace_constant,
                       estimate_weak_trace_constant, hardy_check, lebesgue, lq_norm, power_density,
                       power_weight, power_weight_admissible, solve, verify_thm11_sandwich, verify_thm51_weak,
                       weak_lq_norm, weighted_p_energy, zero_measure)
from plaptrace.trace import admissible_q_threshold

from conftest import unit_interval

SQUARE = [(0, 0), (1, 0), (1, 1), (0, 1)]
ONE_OVER_SQRT12 = 1 / np.sqrt(12)


def interval_mask(mesh, a, b):
    x = mesh.points[:, 0]
    return (x >= a - 1e-12) & (x <= b + 1e-12)


# -- trace constants -------------------------------------------------------

def test_trace_constant_lebesgue_q1(unit256):
    m, w = unit256
    est = estimate_trace_constant(m, w, lebesgue(m), 2, 1)
    assert est.value == pytest.approx(ONE_OVER_SQRT12, rel=0.02)


def test_trace_constant_atom_is_green_kernel(unit256):
    m, w = unit256
    est = estimate_trace_constant(m, w, atoms(m, [[0.5]], [1.0]), 2, 1)
    assert est.value == pytest.approx(0.5, rel=0.02)


def test_trace_constant_zero_measure(unit256):
    m, w = unit256
    assert estimate_trace_constant(m, w, zero_measure(m), 2, 1).value == 0
    assert estimate_weak_trace_constant(m, w, zero_measure(m), 2, 1).value == 0


def test_trace_value_matches_stored_maximizer(unit256):
    m, w = unit256
    sigma = lebesgue(m)
    est = estimate_trace_constant(m, w, sigma, 2, 0.5)
    f = est.maximizer
    exact = lq_norm(f, sigma, 0.5) / weighted_p_energy(f, w, 2) ** 0.5
    assert est.value == exact
    assert f.sup() == pytest.approx(1.0) and np.all(f.values >= 0)


def test_trace_scale_invariance(unit256):
    m, w = unit256
    sigma = lebesgue(m)
    f = estimate_trace_constant(m, w, sigma, 2, 0.5).maximizer
    a = estimate_trace_constant(m, w, sigma, 2, 0.5, restarts=1, seed=f)
    b = estimate_trace_constant(m, w, sigma, 2, 0.5, restarts=1, seed=DiscreteFunction(m, 37.0 * f.values, zero_trace=True))
    assert a.value == pytest.approx(b.value, rel=1e-12)


def test_trace_exponent_validation(unit256):
    m, w = unit256
    with pytest.raises(ValueError):
        estimate_trace_constant(m, w, lebesgue(m), 2, 2)
    with pytest.raises(ValueError):
        estimate_trace_constant(m, w, lebesgue(m), 2, 0)


def test_trace_degenerate_restarts(unit256):
    m, w = unit256
    boundary_only = atoms(m, [[0.0]], [1.0])
    with pytest.raises(ValueError):
        estimate_trace_constant(m, w, boundary_only, 2, 1)


@pytest.mark.parametrize("q", [0.5, 1.0, 1.5])
def test_strong_dominates_weak(unit256, q):
    m, w = unit256
    sigma = lebesgue(m)
    strong = estimate_trace_constant(m, w, sigma, 2, q).value
    weak = estimate_weak_trace_constant(m, w, sigma, 2, q).value
    assert weak <= strong * (1 + 1e-9)
    assert weak > 0


@pytest.mark.parametrize("q", [0.5, 1.0, 1.5])
def test_weak_equals_strong_on_atom(unit256, q):
    m, w = unit256
    sigma = atoms(m, [[0.5]], [1.0])
    strong = estimate_trace_constant(m, w, sigma, 2, q).value
    weak = estimate_weak_trace_constant(m, w, sigma, 2, q).value
    assert weak == pytest.approx(strong, rel=1e-6)


def test_2d_subcritical_trace_is_refinement_stable():
    vals = []
    for h in (0.125, 0.0625, 1 / 32):
        m = build_polygon_mesh(SQUARE, h)
        vals.append(estimate_trace_constant(m, constant_weight(m), lebesgue(m), 1.5, 1.0).value)
    assert all(np.isfinite(vals))
    assert abs(vals[2] / vals[1] - 1) < abs(vals[1] / vals[0] - 1) < 0.1


# -- capacity --------------------------------------------------------------

@pytest.mark.parametrize("p,expected", [(2, 8.0), (3, 32.0)])
def test_condenser_capacity(p, expected):
    m, w = unit_interval(512)
    cap = capacity(m, w, p, interval_mask(m, 0.25, 0.75))
    assert cap.value == pytest.approx(expected, rel=0.01)
    u = cap.minimizer.values
    assert np.all(u[cap.K] == 1.0) and u[0] == 0 and u[-1] == 0
    assert np.all((u >= 0) & (u <= 1))


def test_capacity_monotone_in_set():
    m, w = unit_interval(128)
    caps = [capacity(m, w, 2, interval_mask(m, 0.5 - r, 0.5 + r)).value for r in (0.0, 0.1, 0.2, 0.3, 0.4)]
    assert all(b >= a - 1e-9 for a, b in zip(caps, caps[1:]))


def test_point_capacity_1d_positive_2d_vanishing():
    m, w = unit_interval(128)
    assert capacity(m, w, 2, interval_mask(m, 0.5, 0.5)).value == pytest.approx(4.0, rel=1e-9)
    caps = []
    for h in (0.25, 0.125, 0.0625):
        mm = build_polygon_mesh(SQUARE, h)
        K = np.zeros(mm.n_nodes, bool)
        K[np.argmin(np.linalg.norm(mm.points - 0.5, axis=1))] = True
        caps.append(capacity(mm, constant_weight(mm), 2, K).value)
    assert caps[0] > caps[1] > caps[2] > 0


def test_capacity_errors():
    m, w = unit_interval(16)
    with pytest.raises(ValueError):
        capacity(m, w, 2, np.zeros(m.n_nodes, bool))
    with pytest.raises(ValueError):
        capacity(m, w, 2, interval_mask(m, 0.0, 0.5))


# -- capacitary conditions -------------------------------------------------

def test_capacitary_levels_nested_lebesgue():
    m, w = unit_interval(128)
    sigma = lebesgue(m)
    u, _ = solve(m, w, OperatorA(2), sigma)
    rep = capacitary_condition_check(m, w, sigma, 2, 1, 1.0, u)
    sK = [r[3] for r in rep.rows]
    caps = [r[4] for r in rep.rows]
    nodes = [r[2] for r in rep.rows]
    assert len(rep.rows) >= 3
    # superlevel sets shrink with j, so both sigma(E_j) and cap(E_j) decrease
    assert all(b < a for a, b in zip(nodes, nodes[1:]))
    assert all(b <= a + 1e-12 for a, b in zip(sK, sK[1:]))
    assert all(b <= a + 1e-9 for a, b in zip(caps, caps[1:]))


def test_capacitary_condition_atom_consistent_with_weak_constant():
    m, w = unit_interval(128)
    sigma = atoms(m, [[0.5]], [1.0])
    u, _ = solve(m, w, OperatorA(2), sigma)
    C2 = estimate_weak_trace_constant(m, w, sigma, 2, 1).value
    rep = capacitary_condition_check(m, w, sigma, 2, 1, C2, u)
    assert rep.passed
    assert rep.C2_needed <= C2 * (1 + 1e-6)


def test_capacitary_condition_zero_measure():
    m, w = unit_interval(64)
    u, _ = solve(m, w, OperatorA(2), lebesgue(m))
    rep = capacitary_condition_check(m, w, zero_measure(m), 2, 1, 0.0, u)
    assert rep.passed and all(r[5] <= 0 for r in rep.rows)


def test_capacitary_condition_empty_family():
    m, w = unit_interval(64)
    with pytest.raises(ValueError):
        capacitary_condition_check(m, w, lebesgue(m), 2, 1, 1.0, DiscreteFunction.zeros(m))


# -- Hardy -----------------------------------------------------------------

def test_hardy_dense_matches_ascent():
    m, w = unit_interval(256)
    dense, fd = hardy_check(m, w, 2, 0.0, method="dense")
    ascent, fa = hardy_check(m, w, 2, 0.0, method="ascent")
    assert ascent == pytest.approx(dense, rel=1e-6)
    assert 3 < dense < 4


def test_hardy_approaches_four_from_below():
    vals = [hardy_check(*unit_interval(n), 2, 0.0)[0] for n in (128, 256, 512)]
    assert vals[0] < vals[1] < vals[2] < 4


def test_hardy_refuses_critical_weight():
    m = build_interval_mesh(0, 1, 32)
    with pytest.raises(ValueError):
        hardy_check(m, power_weight(m, 1.0), 2, 1.0)
    with pytest.raises(ValueError):
        hardy_check(m, power_weight(m, -1.0), 2, -1.0)


def test_hardy_quotient_small_away_from_boundary():
    m, w = unit_interval(256)
    sup, _ = hardy_check(m, w, 2, 0.0)
    x = m.points[:, 0]
    f = DiscreteFunction(m, np.maximum(0.0, 0.1 ** 2 - (x - 0.5) ** 2), zero_trace=True)
    num = lq_norm(f, power_density(m, 2), 2) ** 2
    quotient = num / weighted_p_energy(f, w, 2)
    # delta^{-2} <= 0.4^{-2} on the support and the Poincare constant of (.4,.6) is (0.2/pi)^2
    assert quotient <= 0.4 ** -2 * (0.2 / np.pi) ** 2 * (1 + 1e-2)
    assert quotient < 0.1 * sup


def test_hardy_blows_up_near_critical_exponent():
    table = {}
    for n in (128, 256, 512):
        m = build_interval_mesh(0, 1, n)
        for eps in (0.2, 0.1, 0.05):
            table[n, eps] = hardy_check(m, power_weight(m, 1 - eps), 2, 1 - eps)[0]
    for n in (128, 256, 512):
        assert table[n, 0.2] < table[n, 0.1] < table[n, 0.05]
    for eps in (0.2, 0.1, 0.05):
        assert table[128, eps] < table[256, eps] < table[512, eps]


def test_hardy_p3_ascent_runs():
    m, w = unit_interval(128)
    lam, f = hardy_check(m, w, 3, 0.5)
    assert np.isfinite(lam) and lam > 0 and f.sup() == pytest.approx(1.0)
    with pytest.raises(ValueError):
        hardy_check(m, w, 3, 0.5, method="dense")


# -- sandwich verifications ------------------------------------------------

def test_sandwich_tight_case_collapses(unit256):
    m, w = unit256
    v = verify_thm11_sandwich(m, w, OperatorA(2), lebesgue(m), 2, 1)
    assert v.passed
    for key in ("C1_hat", "E", "M", "C1_plus"):
        assert v.quantities[key] == pytest.approx(ONE_OVER_SQRT12, rel=0.02)


def test_sandwich_strict_case(unit256):
    m, w = unit256
    v = verify_thm11_sandwich(m, w, OperatorA(2), lebesgue(m), 2, 0.5)
    assert v.passed, [b for b in v.bounds if not b.passed]
    upper = v.quantities["energy_upper_with_C1_hat"] / v.quantities["C1_hat"] ** 0.5
    assert upper == pytest.approx(4 / 3)


def test_sandwich_zero_measure(unit256):
    m, w = unit256
    v = verify_thm11_sandwich(m, w, OperatorA(2), zero_measure(m), 2, 1)
    assert all(v.quantities[k] == 0 for k in ("C1_hat", "E", "M", "C1_plus"))


def test_sandwich_refuses_diverging_potential():
    m, w = unit_interval(1024)
    with pytest.raises(ValueError, match="does not exist"):
        verify_thm11_sandwich(m, w, OperatorA(2), power_density(m, 2), 2, 1)


def test_weak_sandwich_lebesgue(unit256):
    m, w = unit256
    v = verify_thm51_weak(m, w, OperatorA(2), lebesgue(m), 2, 1)
    assert v.passed
    u = v.potential.u
    assert v.quantities["weak_norm"] == pytest.approx(weak_lq_norm(u, v.potential.stage_measure, 1) ** 0.5)


def test_weak_sandwich_atom_and_zero(unit256):
    m, w = unit256
    assert verify_thm51_weak(m, w, OperatorA(2), atoms(m, [[0.5]], [1.0]), 2, 1).passed
    v = verify_thm51_weak(m, w, OperatorA(2), zero_measure(m), 2, 1)
    assert v.quantities["weak_norm"] == 0 and v.quantities["C2_hat"] == 0


# -- power-weight admissibility --------------------------------------------

def test_admissible_q_threshold_and_region():
    assert admissible_q_threshold(2, 0, 1) == 0
    assert admissible_q_threshold(2, 0, 1.5) == pytest.approx(1.0)
    assert power_weight_admissible(2, 0, 1, 0.5)
    assert not power_weight_admissible(2, 0, 1.5, 0.5)
    assert not power_weight_admissible(2, 0, 2.5, 1.5)
    assert not power_weight_admissible(2, 1.0, 1, 1.0)


def _trace_trend(s, q):
    vals = []
    for n in (64, 128, 256, 512):
        m = build_interval_mesh(0, 1, n)
        vals.append(estimate_trace_constant(m, constant_weight(m), power_density(m, s), 2, q).value)
    return np.array(vals)


def test_trace_stable_above_threshold():
    vals = _trace_trend(1.5, 1.5)
    assert np.all(np.abs(vals[1:] / vals[:-1] - 1) < 0.05)


def test_trace_grows_below_threshold():
    vals = _trace_trend(1.5, 0.5)
    assert np.all(vals[1:] / vals[:-1] > 1.3)

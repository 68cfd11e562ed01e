import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from partel.cost_model import AllocationPlan, latency_breakdown, realized_latency, validate_plan
from partel.errors import DegenerateDualError, InfeasibleError, ValidationError
from partel.oracle import _worker_args, worker_min_latency
from partel.scenario import Scenario, SystemConfig, WorkerProfile, generate_scenario, reference_scenario
from partel.solver import (DualState, SolverOptions, argmax_rounding, assign_subcarriers, dual_residuals,
                           integerize_loads, load_discriminant, max_model_size, min_latency, optimal_power,
                           optimal_rate, optimal_subcarrier_load, optimal_worker_load,
                           resolve_with_fixed_assignment, round_subcarriers, solve_support,
                           subcarrier_indicator)

GOLDEN = Path(__file__).parent / "golden"
B, TAU, S2, LN2 = 312500.0, 32.0, 3.125e-4, math.log(2.0)


def lam_for_level(level, nu=1.0):
    """lambda giving water level ``level`` W at multiplier nu."""
    return level * nu * TAU * LN2 / B


# -- closed forms -------------------------------------------------------------

def test_rate_zero_at_noise_floor():
    h = 1e-3
    assert optimal_rate(lam_for_level(S2 / h), 1.0, h, B, TAU, S2) == pytest.approx(0.0, abs=1e-6)


def test_rate_equals_bandwidth_at_twice_floor():
    h = 1e-3
    assert optimal_rate(lam_for_level(2 * S2 / h), 1.0, h, B, TAU, S2) == pytest.approx(B, rel=1e-12)


def test_doubling_gain_adds_one_bandwidth():
    lam = lam_for_level(5.0)
    r1 = optimal_rate(lam, 1.0, 1e-3, B, TAU, S2)
    r2 = optimal_rate(lam, 1.0, 2e-3, B, TAU, S2)
    assert r2 - r1 == pytest.approx(B, rel=1e-12)


def test_power_example():
    # sigma2/h = 0.3125 W at h = 1e-3
    assert optimal_power(lam_for_level(1.0), 1.0, 1e-3, B, TAU, S2) == pytest.approx(0.6875, rel=1e-12)


def test_power_gap_between_subcarriers():
    lam = lam_for_level(2.0)
    p1, p2 = optimal_power(lam, 1.0, np.array([2e-3, 1e-3]), B, TAU, S2)
    assert p1 - p2 == pytest.approx(S2 * (1 / 1e-3 - 1 / 2e-3), rel=1e-12)
    assert p1 > p2


def test_power_and_rate_clamp_below_floor():
    lam = lam_for_level(0.1)
    assert optimal_power(lam, 1.0, 1e-3, B, TAU, S2) == 0.0
    assert optimal_rate(lam, 1.0, 1e-3, B, TAU, S2) == 0.0


def test_zero_nu_is_degenerate_for_water_level():
    with pytest.raises(DegenerateDualError):
        optimal_rate(1.0, 0.0, 1e-3, B, TAU, S2)


def test_worker_load_without_power_price():
    w = WorkerProfile(1e6, 1e-16, 8.0)
    assert optimal_worker_load(1.0, 0.25, 0.0, w) == pytest.approx(5e5, rel=1e-15)


def test_worker_load_priced_out_when_discriminant_reaches_t_squared():
    w = WorkerProfile(1e6, 1e-16, 8.0)
    assert optimal_worker_load(2.0, 2.0, 0.0, w) == 0.0      # lambda*T = T^2
    assert optimal_worker_load(2.0, 3.0, 0.0, w) == 0.0


def test_worker_load_saturates_when_discriminant_negative():
    w = WorkerProfile(1e6, 1e-18, 8.0)
    # large nu with a generous budget makes the discriminant negative
    assert load_discriminant(1.0, 1e-6, 1.0, w) < 0
    assert optimal_worker_load(1.0, 1e-6, 1.0, w) == 1e6


def test_worker_load_unimodal_in_speed():
    f = np.linspace(1e4, 5e6, 4001)
    L = optimal_worker_load(1.0, 0.05, 1.0, (f, np.full_like(f, 1e-13), np.full_like(f, 8.0)))
    d = np.sign(np.diff(L))
    d = d[d != 0]
    changes = np.count_nonzero(np.diff(d))
    assert changes == 1 and d[0] > 0 and d[-1] < 0


def test_subcarrier_load_zero_at_zero_rate():
    w = WorkerProfile(1e6, 1e-16, 8.0)
    assert optimal_subcarrier_load(1.0, lam_for_level(0.1), 1.0, w, 1e-3, B, TAU, S2) == 0.0


def test_subcarrier_load_grows_by_one_bandwidth_share_when_gain_doubles():
    w = WorkerProfile(1e6, 1e-16, 8.0)
    lam, nu, T = lam_for_level(5.0, 0.01), 0.01, 1.0
    D = load_discriminant(T, lam, nu, w)
    a = optimal_subcarrier_load(T, lam, nu, w, 1e-3, B, TAU, S2)
    b = optimal_subcarrier_load(T, lam, nu, w, 2e-3, B, TAU, S2)
    assert b - a == pytest.approx(math.sqrt(D) * B / TAU, rel=1e-10)


@settings(max_examples=300, deadline=None)
@given(T=st.floats(1e-3, 1e2), lam=st.floats(1e-9, 10.0), nu=st.floats(1e-9, 10.0),
       f=st.sampled_from([i * 1e5 for i in range(1, 11)]), g=st.sampled_from([i / 1e17 for i in range(1, 11)]),
       h=st.floats(1e-6, 1e-2))
def test_subcarrier_load_identity(T, lam, nu, f, g, h):
    w = WorkerProfile(f, g, 8.0)
    Lk = optimal_worker_load(T, lam, nu, w)
    R = optimal_rate(lam, nu, h, B, TAU, S2)
    direct = optimal_subcarrier_load(T, lam, nu, w, h, B, TAU, S2)
    D = load_discriminant(T, lam, nu, w)
    if D <= 0:
        # compute-bound: the block fills T and nothing waits on the upload
        assert direct == 0.0 and Lk == f * T
    elif Lk > 0:
        # T - Lk/f cancels when the upload time sqrt(D) is tiny next to T
        cond = T / math.sqrt(D)
        assert direct == pytest.approx(R * (T - Lk / f) / TAU, rel=1e-12 + 4 * np.finfo(float).eps * cond,
                                       abs=1e-300)
    else:
        assert direct == 0.0


def test_indicator_zero_at_zero_rate():
    assert subcarrier_indicator(1.0, 1e-3, B, 0.0, S2) == 0.0


def test_indicator_negative_and_decreasing_in_rate():
    R = np.linspace(1.0, 20 * B, 500)
    I = subcarrier_indicator(0.3, 1e-3, B, R, S2)
    assert np.all(I < 0)
    assert np.all(np.diff(I) < 0)


def test_indicator_prefers_stronger_gain():
    h = np.geomspace(1e-5, 1e-1, 60)
    lam, nu = lam_for_level(10.0, 0.2), 0.2
    R = optimal_rate(lam, nu, h, B, TAU, S2)
    I = subcarrier_indicator(nu, h, B, R, S2)
    active = R > 0
    assert np.all(np.diff(I[active]) < 0)


def test_assign_examples():
    assert assign_subcarriers([[-3.0], [-1.0]]).ravel().tolist() == [1.0, 0.0]
    assert assign_subcarriers([[-2.0], [-2.0]]).ravel().tolist() == [0.5, 0.5]
    assert np.allclose(assign_subcarriers(np.zeros((4, 1))), 0.25)


def test_assign_rejects_nan():
    with pytest.raises(ValidationError):
        assign_subcarriers([[np.nan], [0.0]])


# -- dual residuals ---------------------------------------------------------------

def test_residuals_at_zero_load_point():
    s = reference_scenario()
    T = 3.0
    K, N = s.channels.shape
    d = DualState(np.ones(K), np.ones(K), np.zeros(N), np.full(K, 1 / T), np.zeros((K, N)), np.full((K, N), 0.5))
    r_lam, r_nu = dual_residuals(d, s, T)
    assert np.allclose(r_lam, 0.0)
    assert np.allclose(r_nu, -(s.power_caps * T - 0.0) / T)


def test_residuals_vanish_at_optimum():
    s = generate_scenario(4, SystemConfig(num_subcarriers=6), seed=2)
    T = 0.5
    res = max_model_size(s, T)
    assert res.converged
    r_lam, r_nu = dual_residuals(res.duals, s, T)
    f, P = s.speeds, s.power_caps
    active = res.plan.loads > 0
    assert np.all(np.abs(r_lam[active]) <= 1e-4 * f[active])
    assert np.all(np.abs(r_nu[active]) <= 1e-4 * P[active])


def test_residuals_nonpositive_at_feasible_interior_point():
    s = reference_scenario()
    T = 10.0
    res = max_model_size(s, T)
    d = res.duals
    # shrink every load to half: still feasible, with slack in both constraints
    half = DualState(d.lam, d.nu, d.mu, 1.0 / (T - 0.5 * res.plan.loads / s.speeds),
                     0.5 * d.rtilde, d.assignment)
    r_lam, r_nu = dual_residuals(half, s, T)
    assert np.all(r_lam <= 0) and np.all(r_nu <= 0)


# -- relaxed problem -------------------------------------------------------------

def test_compute_bound_limit():
    # uploads must be far faster than compute, which needs a wide band
    cfg = SystemConfig(num_subcarriers=4, bandwidth=1e9)
    s0 = generate_scenario(3, cfg, seed=4)
    s = Scenario(cfg, [WorkerProfile(w.speed, w.power_factor, 1e6) for w in s0.workers], s0.channels)
    T = 1e4
    res = max_model_size(s, T)
    assert res.achieved_model_size >= 0.95 * s.speeds.sum() * T


def test_reference_relaxed_matches_oracle():
    g = json.loads((GOLDEN / "reference_k2n2.json").read_text())
    s = reference_scenario()
    for T, entry in g["relaxed"].items():
        val = entry["model_size"]
        got = max_model_size(s, float(T)).achieved_model_size
        assert abs(got - val) / val <= 0.02


def test_model_size_monotone_in_latency():
    s = generate_scenario(5, SystemConfig(num_subcarriers=8), seed=9)
    vals = [max_model_size(s, T).achieved_model_size for T in np.geomspace(0.05, 20, 12)]
    assert all(b >= a * (1 - 1e-9) for a, b in zip(vals, vals[1:]))


def test_relaxed_plan_is_feasible_and_equal_latency():
    s = generate_scenario(6, SystemConfig(num_subcarriers=10), seed=1)
    res = min_latency(s, 1e6)
    plan = res.plan
    assert validate_plan(plan, s).feasible
    t_cmp, t_sub, _, _ = latency_breakdown(plan, s)
    on = plan.sub_loads > 0
    dev = np.abs(t_cmp[:, None] + t_sub - plan.latency)[on] / plan.latency
    assert dev.max() <= 1e-6


def test_zero_model_latency_is_floor():
    s = reference_scenario().with_config(circuit_energy=4.0)
    assert min_latency(s, 0.0).latency == pytest.approx(0.5)
    assert solve_support(s, 0.0).latency == pytest.approx(0.5)


def test_below_floor_is_infeasible():
    s = reference_scenario().with_config(circuit_energy=4.0)
    with pytest.raises(InfeasibleError):
        max_model_size(s, 0.1)


def test_circuit_energy_path_agrees_with_tiny_circuit_energy():
    s = generate_scenario(3, SystemConfig(num_subcarriers=4), seed=5)
    a = min_latency(s, 1e6).latency
    b = min_latency(s.with_config(circuit_energy=1e-9), 1e6).latency
    assert b == pytest.approx(a, rel=1e-5)


def test_predicate_brackets_the_answer():
    s = generate_scenario(3, SystemConfig(num_subcarriers=4, circuit_energy=0.5), seed=6)
    res = min_latency(s, 1e6)
    T = res.latency
    assert max_model_size(s, T).achieved_model_size >= 1e6 * (1 - 1e-7)
    assert max_model_size(s, T * (1 - 1e-4)).achieved_model_size < 1e6


def test_dual_ascent_method_returns_feasible_plan():
    s = generate_scenario(3, SystemConfig(num_subcarriers=4), seed=3)
    opts = SolverOptions(method="dual-ascent", max_iterations=2000)
    res = max_model_size(s, 0.5, opts)
    assert validate_plan(res.plan, s).feasible
    exact = max_model_size(s, 0.5).achieved_model_size
    assert res.achieved_model_size <= exact * (1 + 1e-6)


def test_options_validation():
    with pytest.raises(ValidationError):
        SolverOptions(method="newton")
    with pytest.raises(ValidationError):
        SolverOptions(bracket_growth=1.0)


# -- rounding ----------------------------------------------------------------------

def test_argmax_rounding_column():
    C = argmax_rounding([[0.5], [0.5]], [[30.0], [70.0]])
    assert C.ravel().tolist() == [0.0, 1.0]


def test_binary_input_returned_unchanged():
    s = reference_scenario()
    res = solve_support(s, 1e6)
    again = round_subcarriers(res, s, 1e6)
    assert again is res


def test_rounded_not_below_relaxed():
    for seed in range(3):
        s = generate_scenario(8, SystemConfig(num_subcarriers=12), seed=seed)
        res = solve_support(s, 1e6)
        assert res.plan.is_binary
        assert res.latency >= res.info["relaxed_latency"] * (1 - 1e-6)
        assert validate_plan(res.plan, s).feasible


def test_fixed_assignment_reproduces_solver():
    s = generate_scenario(4, SystemConfig(num_subcarriers=6), seed=8)
    res = solve_support(s, 1e6)
    again = resolve_with_fixed_assignment(s, res.plan.assignment, 1e6)
    assert again.latency == pytest.approx(res.latency, rel=1e-9)


def test_fixed_assignment_single_worker_matches_one_dimensional_solve():
    s = generate_scenario(1, SystemConfig(num_subcarriers=5), seed=12)
    L = 1e6
    res = resolve_with_fixed_assignment(s, np.ones((1, 5)), L)
    f, g, P, xi, snr = _worker_args(s, 0)
    c = s.config
    ref = worker_min_latency(L, f, g, P, xi, snr, np.ones(5), c.bandwidth, c.bits_per_param, c.noise_power,
                             tol=1e-13)
    assert res.latency == pytest.approx(ref, rel=1e-9)


def test_fixed_assignment_starved_worker_is_infeasible():
    s = reference_scenario()
    C = np.array([[1.0, 1.0], [0.0, 0.0]])
    with pytest.raises(InfeasibleError):
        resolve_with_fixed_assignment(s, C, 1e6, loads=[5e5, 5e5])


def test_fixed_assignment_rejects_fractional():
    with pytest.raises(ValidationError):
        resolve_with_fixed_assignment(reference_scenario(), np.full((2, 2), 0.5), 1e6)


def test_support_dominates_fixed_restrictions():
    s = generate_scenario(5, SystemConfig(num_subcarriers=8), seed=4)
    T = solve_support(s, 1e6).latency
    rng = np.random.default_rng(0)
    for _ in range(5):
        # every worker keeps one subcarrier, the rest are random
        C = np.zeros((5, 8))
        C[:, :5] = np.eye(5)
        C[rng.integers(0, 5, 3), np.arange(5, 8)] = 1.0
        assert resolve_with_fixed_assignment(s, C, 1e6).latency >= T * (1 - 1e-9)


# -- integer loads --------------------------------------------------------------

def toy_plan(sub, L):
    sub = np.asarray(sub, dtype=float)
    C = (sub > 0).astype(float)
    return AllocationPlan(C, sub.sum(axis=1), sub, np.where(C > 0, 1e6, 0.0), 1.0, L)


def test_integerize_example():
    out = integerize_loads(toy_plan([[2.6, 2.6, 2.8]], 8.0))
    assert out.sub_loads.ravel().tolist() == [3.0, 2.0, 3.0]
    assert out.loads.tolist() == [8.0]


def test_integerize_fixed_point():
    p = toy_plan([[2.0, 3.0], [0.0, 4.0]], 9.0)
    assert integerize_loads(p) is p


def test_integerize_latency_increase_bounded():
    for seed in range(5):
        s = generate_scenario(4, SystemConfig(num_subcarriers=6), seed=seed)
        plan = solve_support(s, 1e4 + 0.5).plan
        out = integerize_loads(plan, s, model_size=1e4)
        assert out.loads.sum() >= 1e4
        assert np.allclose(out.sub_loads, np.round(out.sub_loads))
        t_new = latency_breakdown(out, s)[3]
        t_old = latency_breakdown(plan, s)[3]
        tau = s.config.bits_per_param
        R = np.where(plan.rates > 0, plan.rates, np.inf)
        bound = tau * np.max(1 / R, axis=1) + 1 / s.speeds
        assert np.all(t_new - t_old <= bound * (1 + 1e-9))

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from adaptrial.core import DesignFunction, Trajectory, UsageError, average_design, read_trajectory_csv, write_trajectory_csv
from adaptrial.designs import (BenefitDriven, GbarDriven, NonAdaptive, OracleNeyman, StandardNeyman,
                               benefit_driven_rule, gamma_blend, gamma_design, gbar_step, make_policy,
                               neyman_design, neyman_ratio, next_design, nu_schedule, standard_neyman_rule)
from adaptrial.dgp import APPENDIX_B_VAR_POLY, appendix_b_scenario, oracle_neyman
from adaptrial.harness import run_experiment
from adaptrial.learners import fit_outcome_regression

from conftest import constant_trajectory

nus = st.floats(0.0, 0.5)
bs = st.floats(0.05, 20.0)


def test_gamma_examples():
    assert gamma_blend(-1.0, 0.1, 1.0) == 0.1
    assert gamma_blend(1.0, 0.1, 1.0) == 0.9
    assert gamma_blend(0.0, 0.2, 3.0) == 0.5
    assert gamma_blend(0.5, 0.1, 1.0) == pytest.approx(0.775, abs=1e-15)


@settings(max_examples=60, deadline=None)
@given(nus, bs)
def test_gamma_continuity_at_boundaries(nu, b):
    for edge in (-b, b):
        left = gamma_blend(np.nextafter(edge, -np.inf), nu, b)
        right = gamma_blend(np.nextafter(edge, np.inf), nu, b)
        assert abs(left - right) <= 1e-12
    assert gamma_blend(-b, nu, b) == nu
    assert gamma_blend(b, nu, b) == 1 - nu


@settings(max_examples=30, deadline=None)
@given(nus, bs)
def test_gamma_monotone_and_bounded(nu, b):
    x = np.linspace(-2 * b, 2 * b, 10_000)
    g = gamma_blend(x, nu, b)
    assert np.all(np.diff(g) >= -1e-15)
    assert g.min() >= nu - 1e-15 and g.max() <= 1 - nu + 1e-15


@settings(max_examples=60, deadline=None)
@given(st.floats(-50, 50), nus, bs)
def test_gamma_symmetry(x, nu, b):
    assert gamma_blend(-x, nu, b) == pytest.approx(1 - gamma_blend(x, nu, b), abs=1e-12)


def test_gamma_argument_checks():
    with pytest.raises(UsageError):
        gamma_blend(0.0, 0.6, 1.0)
    with pytest.raises(UsageError):
        gamma_blend(0.0, 0.1, 0.0)


def test_nu_schedule():
    assert nu_schedule(1001, 1000) == pytest.approx(math.exp(-1))
    assert nu_schedule(1250, 1000) == pytest.approx(math.exp(-1))
    assert nu_schedule(1251, 1000) == pytest.approx(math.exp(-2))
    assert nu_schedule(1000 + 2250, 1000) == pytest.approx(1.234e-4, rel=1e-3)


def test_benefit_design_saturates_and_centres():
    assert gamma_design((5.0,), 0.05, 1.0).eval(1.3) == pytest.approx(0.95)
    assert gamma_design((0.0,), 0.3, 2.0).eval(np.linspace(0, 3, 5)).tolist() == [0.5] * 5


def test_neyman_ratio_cases():
    assert neyman_ratio((2.0, 2.0), 1e-3, 1.0) == 0.5
    assert neyman_ratio((4.0, 1.0), 1e-3, 0.3) == pytest.approx(2 / 3)


def test_oracle_neyman_design_matches_dgp():
    s = appendix_b_scenario()
    d = neyman_design(*APPENDIX_B_VAR_POLY, clip_lo=0.0, var_floor=1e-300)
    grid = np.linspace(0, 3, 101)
    np.testing.assert_allclose(d.eval(grid), oracle_neyman(s, grid), atol=1e-13)


def test_gbar_step_examples():
    assert gbar_step(2, 0.55, 0.5) == pytest.approx(0.65)
    assert gbar_step(7, 0.42, 0.42) == pytest.approx(0.42)
    assert gbar_step(1000, 0.6, 0.5) == 1.0
    assert gbar_step(1000, 0.4, 0.5) == 0.0


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 5000), st.floats(0, 1), st.floats(0, 1))
def test_gbar_self_calibration(i, target, gbar_i):
    g = float(gbar_step(i, target, gbar_i))
    new = (i * gbar_i + g) / (i + 1)
    unclipped = (i + 1) * target - i * gbar_i
    if 0.0 <= unclipped <= 1.0:
        assert new == pytest.approx(target, abs=1e-9)
    else:
        # the clipped step moves the average as far toward the target as [0, 1] allows
        best = min(abs((i * gbar_i + 1.0) / (i + 1) - target), abs(i * gbar_i / (i + 1) - target))
        assert abs(new - target) == pytest.approx(best, abs=1e-12)
        if unclipped > 1:
            assert abs(new - target) <= abs(gbar_i * i / (i + 1) + 1 / (i + 1) - target) + 1e-12


def test_non_adaptive_policy():
    p = NonAdaptive()
    assert next_design(p, constant_trajectory(n=1500)) == DesignFunction.constant(0.5)


@pytest.mark.parametrize("kind", ["standard_neyman", "gbar_driven", "benefit_driven"])
def test_burn_in_uses_baseline(kind):
    s = appendix_b_scenario()
    p = make_policy(kind, s, n0=300, baseline_prob=0.4, refit_stride=100)
    traj = constant_trajectory(n=299, p=0.4)
    assert next_design(p, traj) == DesignFunction.constant(0.4)


def test_oracle_policy_from_outset():
    s = appendix_b_scenario()
    traj = run_experiment(s, OracleNeyman(s, n0=100), 150, 0)
    grid = np.linspace(0, 3, 31)
    for d in (traj.designs[0], traj.designs[-1]):
        np.testing.assert_allclose(d.eval(grid), oracle_neyman(s, grid), atol=1e-13)


def test_standard_neyman_rule_equal_variances():
    traj = constant_trajectory(n=2000, seed=1)
    d = standard_neyman_rule(traj)
    assert d.eval(np.linspace(0, 3, 9)).min() >= 0.01
    assert d.eval(np.linspace(0, 3, 9)).max() <= 0.99


def test_standard_neyman_close_to_oracle():
    s = appendix_b_scenario()
    grid = np.linspace(0.2, 2.8, 53)
    target = oracle_neyman(s, grid)
    hits = 0
    reps = 200
    rng = np.random.default_rng(8)
    for _ in range(reps):
        w = s.sample_w(rng, 3250)
        a = (rng.random(3250) < 0.5).astype(int)
        y = s.qbar0(a, w) + np.sqrt(s.var0(a, w)) * rng.standard_normal(3250)
        d0 = DesignFunction.constant(0.5)
        traj = Trajectory(w, a, y, np.full(3250, 0.5), (d0,) * 3250)
        hits += np.max(np.abs(standard_neyman_rule(traj).eval(grid) - target)) <= 0.1
    assert hits >= 0.8 * reps


def test_benefit_rule_uses_schedule():
    traj = constant_trajectory(n=1200, seed=2)
    d = benefit_driven_rule(traj, unit=1201, n0=1000, b=1.0)
    assert d.kind == "gamma" and d.params[0] == pytest.approx(math.exp(-1))


@pytest.mark.parametrize("kind", ["standard_neyman", "gbar_driven", "benefit_driven", "oracle_neyman"])
def test_emitted_designs_in_range_and_round_trip(kind, tmp_path):
    s = appendix_b_scenario()
    p = make_policy(kind, s, n0=300, refit_stride=100)
    traj = run_experiment(s, p, 620, 3)
    grid = np.linspace(0, 3, 41)
    for d in {traj.designs[i] for i in (0, 300, 399, 400, 619)}:
        v = d.eval(grid)
        assert v.min() >= 0 and v.max() <= 1
        if kind == "standard_neyman":
            assert v.min() >= 0.01 and v.max() <= 0.99
        back = DesignFunction(d.kind, tuple(float(repr(x)) for x in d.params))
        assert np.max(np.abs(back.eval(grid) - v)) <= 1e-12
    path = tmp_path / "t.csv"
    write_trajectory_csv(traj, path)
    assert read_trajectory_csv(path).check_consistency()


def test_gbar_fast_path_matches_replay():
    s = appendix_b_scenario()
    traj = run_experiment(s, GbarDriven(n0=200, refit_stride=50), 500, 4, logged_ns=(300, 500))
    assert traj.check_consistency(1e-12)
    for n in (300, 500):
        cached = traj.prefix(n).gbar()
        np.testing.assert_allclose(cached, average_design(traj.designs[:n], traj.w[:n]), atol=1e-12)


def test_gbar_average_tracks_target():
    # with oracle variances the target is the true Neyman ratio; the average design hits it exactly
    s = appendix_b_scenario()
    traj = run_experiment(s, GbarDriven(oracle_scenario=s, n0=100), 400, 5)
    grid = np.linspace(0, 3, 31)
    gb = average_design(traj.designs, grid)
    target = oracle_neyman(s, grid)
    unclipped = np.abs(gb - target) <= 1e-12
    assert unclipped.mean() > 0.5
    # where clipping engaged, the average still moves toward the target
    assert np.all(np.abs(gb - target) <= np.abs(0.5 - target) + 1e-12)


def test_policy_checks():
    with pytest.raises(UsageError):
        make_policy("nope")
    with pytest.raises(UsageError):
        make_policy("oracle_neyman", None)
    with pytest.raises(UsageError):
        StandardNeyman(clip_lo=0.6)
    with pytest.raises(UsageError):
        BenefitDriven(b=0.0)
    with pytest.raises(UsageError):
        NonAdaptive(baseline_prob=1.0)

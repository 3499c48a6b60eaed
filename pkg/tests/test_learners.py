import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from adaptrial.core import FittingError, PositivityError, Trajectory, DesignFunction
from adaptrial.dgp import appendix_b_scenario, constant_effect_scenario, true_ate
from adaptrial.learners import (OutcomeModel, constant_model, dr_pseudo_outcomes, fit_cate_dr,
                                fit_conditional_variance, fit_outcome_regression, poly_basis, polyval)

from conftest import constant_trajectory


def iid_trajectory(scenario, n, seed, p=0.5, y_fn=None):
    """Non-adaptive sample drawn directly; cheaper than the sequential runner."""
    rng = np.random.default_rng(seed)
    w = scenario.sample_w(rng, n)
    a = (rng.random(n) < p).astype(int)
    y = scenario.qbar0(a, w) + np.sqrt(scenario.var0(a, w)) * rng.standard_normal(n)
    if y_fn is not None:
        y = y_fn(a, w)
    d = DesignFunction.constant(p)
    return Trajectory(w, a, y, np.full(n, p), (d,) * n)


def test_polyval_matches_basis():
    w = np.linspace(-1, 2, 9)
    c = np.array([0.5, -1.0, 2.0, 0.25])
    np.testing.assert_allclose(polyval(c, w), poly_basis(w, 3) @ c, rtol=1e-13)


def test_exact_linear_recovery():
    s = appendix_b_scenario()
    traj = iid_trajectory(s, 200, 1, y_fn=lambda a, w: np.where(a == 1, 2.0 - 0.5 * w, -1.0 + 3.0 * w))
    m = fit_outcome_regression(traj, degree=1)
    np.testing.assert_allclose(m.coef_by_arm[1], [2.0, -0.5], atol=1e-8)
    np.testing.assert_allclose(m.coef_by_arm[0], [-1.0, 3.0], atol=1e-8)


def test_constant_outcomes_predict_constant():
    traj = iid_trajectory(appendix_b_scenario(), 300, 2, y_fn=lambda a, w: np.full(len(w), 7.5))
    m = fit_outcome_regression(traj, 3)
    grid = np.linspace(0, 3, 13)
    for arm in (0, 1):
        np.testing.assert_allclose(m.predict(arm, grid), 7.5, atol=1e-9)


def test_appendix_b_regression_error():
    s = appendix_b_scenario()
    m = fit_outcome_regression(iid_trajectory(s, 3250, 3), 3)
    grid = np.linspace(0, 3, 61)
    err = np.mean([(m.predict(a, grid) - s.qbar0(a, grid)) ** 2 for a in (0, 1)])
    assert err <= 0.5


def test_homoskedastic_variance():
    s = constant_effect_scenario(0.5, variance=2.5)
    traj = iid_trajectory(s, 20000, 4)
    v = fit_conditional_variance(traj, fit_outcome_regression(traj, 3), 3)
    grid = np.linspace(0, 3, 31)
    for arm in (0, 1):
        np.testing.assert_allclose(v.predict(arm, grid), 2.5, rtol=0.15)


def test_variance_floor_engages():
    traj = iid_trajectory(appendix_b_scenario(), 200, 5, y_fn=lambda a, w: 1.0 + w * a)
    v = fit_conditional_variance(traj, fit_outcome_regression(traj, 3), 3, var_floor=0.02)
    np.testing.assert_allclose(v.predict(1, np.linspace(0, 3, 7)), 0.02)
    np.testing.assert_allclose(v.predict(0, np.linspace(0, 3, 7)), 0.02)


def test_appendix_b_variance_at_one():
    s = appendix_b_scenario()
    hits = 0
    for r in range(200):
        traj = iid_trajectory(s, 3250, 1000 + r)
        v = fit_conditional_variance(traj, fit_outcome_regression(traj, 3), 3)
        hits += abs(v.predict(1, 1.0) - 4.0) <= 0.3 * 4.0
    assert hits >= 180


def test_cate_exact_when_mean_model_exact():
    # cubic CATE, zero noise: pseudo-outcomes are the CATE itself
    mean = OutcomeModel("outcome_mean", 3, {1: np.array([1.0, 0.5, -0.2, 0.1]), 0: np.array([0.0, 1.0, 0.0, 0.0])})
    traj = iid_trajectory(appendix_b_scenario(), 500, 6, p=0.3, y_fn=lambda a, w: mean.predict(a, w))
    np.testing.assert_allclose(dr_pseudo_outcomes(traj, mean), mean.cate(traj.w), atol=1e-12)
    cate = fit_cate_dr(traj, mean, 3)
    np.testing.assert_allclose(cate.predict(1, traj.w), mean.cate(traj.w), atol=1e-8)
    np.testing.assert_allclose(cate.cate(traj.w), mean.cate(traj.w), atol=1e-8)


def _ols_se(w, phi, degree, grid):
    X = poly_basis(w, degree)
    coef, *_ = np.linalg.lstsq(X, phi, rcond=None)
    resid = phi - X @ coef
    s2 = resid @ resid / (len(w) - degree - 1)
    G = poly_basis(grid, degree)
    cov = s2 * np.linalg.inv(X.T @ X)
    return np.sqrt(np.einsum("ij,jk,ik->i", G, cov, G))


def test_cate_constant_effect():
    s = constant_effect_scenario(1.5, variance=1.0)
    traj = iid_trajectory(s, 20000, 7)
    mean = fit_outcome_regression(traj, 1)
    cate = fit_cate_dr(traj, mean, 1)
    grid = np.linspace(0.1, 2.9, 8)
    se = _ols_se(traj.w, dr_pseudo_outcomes(traj, mean), 1, grid)
    assert np.all(np.abs(cate.predict(1, grid) - 1.5) <= 2 * se)


def test_pseudo_outcome_mean_unbiased():
    s = appendix_b_scenario()
    traj = iid_trajectory(s, 100_000, 8)
    phi = dr_pseudo_outcomes(traj, fit_outcome_regression(traj, 3))
    assert abs(phi.mean() - true_ate(s)) <= 3 * phi.std() / math.sqrt(len(phi))


def test_cate_robust_to_shifted_mean_model():
    s = appendix_b_scenario()
    traj = iid_trajectory(s, 100_000, 9)
    good = fit_outcome_regression(traj, 3)
    shifted = OutcomeModel("outcome_mean", 3, {1: good.coef_by_arm[1] + np.array([2.0, 0, 0, 0]),
                                               0: good.coef_by_arm[0] - np.array([1.0, 0, 0, 0])})
    grid = np.linspace(0.2, 2.8, 6)
    phi = dr_pseudo_outcomes(traj, shifted)
    se = _ols_se(traj.w, phi, 3, grid)
    diff = fit_cate_dr(traj, shifted, 3).predict(1, grid) - fit_cate_dr(traj, good, 3).predict(1, grid)
    assert np.all(np.abs(diff) <= 3 * se)


@settings(max_examples=25, deadline=None)
@given(st.floats(-1e3, 1e3))
def test_shift_invariance(c):
    base = constant_trajectory(n=300, seed=10)
    moved = Trajectory(base.w, base.a, base.y + c, base.p1, base.designs)
    m0, m1 = fit_outcome_regression(base, 3), fit_outcome_regression(moved, 3)
    grid = np.linspace(0, 3, 11)
    for arm in (0, 1):
        np.testing.assert_allclose(m1.predict(arm, grid), m0.predict(arm, grid) + c, atol=1e-8 * (1 + abs(c)))
    v0 = fit_conditional_variance(base, m0, 3)
    v1 = fit_conditional_variance(moved, m1, 3)
    np.testing.assert_allclose(v1.predict(1, grid), v0.predict(1, grid), rtol=1e-6, atol=1e-6)


def test_too_few_points():
    traj = constant_trajectory(n=6, seed=0)
    with pytest.raises(FittingError):
        fit_outcome_regression(traj, 3)


def test_zero_probability_pseudo_outcome():
    d1 = DesignFunction.constant(1.0)
    traj = Trajectory(np.array([0.5, 1.0]), np.array([0, 1]), np.array([1.0, 2.0]), np.array([1.0, 1.0]), (d1, d1))
    with pytest.raises(PositivityError):
        dr_pseudo_outcomes(traj, constant_model(0.0))


def test_constant_model():
    m = constant_model(3.0)
    assert m.predict(1, 0.4) == 3.0 and m.cate(np.ones(3)).tolist() == [0.0, 0.0, 0.0]
    assert m.flat_params() == (3.0, 3.0)

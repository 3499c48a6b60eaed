import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from adaptrial.core import (DesignFunction, Observation, Trajectory, UsageError, average_design,
                            positivity_check, read_trajectory_csv, write_trajectory_csv)
from adaptrial.designs import gamma_design, neyman_design
from adaptrial.dgp import APPENDIX_B_VAR_POLY

from conftest import constant_trajectory, handmade_trajectory

probs = st.floats(0.0, 1.0, allow_nan=False)


def const(p):
    return DesignFunction.constant(p)


def test_average_of_identical_constants():
    assert average_design([const(0.5)] * 3, 1.7, 1) == 0.5


def test_average_of_two_constants_both_arms():
    ds = [const(0.2), const(0.8)]
    assert average_design(ds, 0.3, 1) == pytest.approx(0.5, abs=1e-15)
    assert average_design(ds, 0.3, 0) == pytest.approx(0.5, abs=1e-15)


def test_average_is_vectorized():
    ds = [const(0.1), const(0.4)]
    out = average_design(ds, np.linspace(0, 3, 5), 1)
    assert out.shape == (5,)
    np.testing.assert_allclose(out, 0.25)


def test_average_design_empty_list():
    with pytest.raises(UsageError):
        average_design([], 0.0)


@pytest.mark.parametrize("designs, zeta, expected", [
    ([const(0.5)] * 4, 0.1, True),
    ([const(1.0)], 0.05, False),
    ([const(1.0), const(0.0)], 0.4, True),
])
def test_positivity_check(designs, zeta, expected):
    assert positivity_check(designs, np.linspace(0, 3, 11), zeta) is expected


@settings(max_examples=60, deadline=None)
@given(st.lists(probs, min_size=1, max_size=8), st.floats(0, 3))
def test_average_complements_to_one(ps, w):
    ds = [const(p) for p in ps]
    assert abs(average_design(ds, w, 1) + average_design(ds, w, 0) - 1.0) <= 1e-12


@settings(max_examples=60, deadline=None)
@given(st.lists(probs, min_size=1, max_size=8), st.integers(2, 4), st.floats(0, 3))
def test_duplicating_the_list_keeps_the_average(ps, k, w):
    ds = [const(p) for p in ps]
    assert average_design(ds * k, w, 1) == pytest.approx(average_design(ds, w, 1), abs=1e-12)


def test_mixed_kinds_average():
    ny = neyman_design(*APPENDIX_B_VAR_POLY)
    gm = gamma_design((0.3, -0.2), 0.1, 1.0)
    w = np.linspace(0, 3, 7)
    expected = (ny.eval(w) + gm.eval(w) + 0.5) / 3
    np.testing.assert_allclose(average_design([ny, gm, const(0.5)], w), expected, atol=1e-14)


def test_design_eval_scalar_and_prob():
    d = const(0.3)
    assert isinstance(d.eval(1.0), float)
    assert d.prob(0, 1.0) == pytest.approx(0.7)
    np.testing.assert_allclose(d.prob(np.array([1, 0]), np.array([0.0, 1.0])), [0.3, 0.7])


def test_design_rejects_unknown_kind_and_bad_constant():
    with pytest.raises(UsageError):
        DesignFunction("nope", (1.0,))
    with pytest.raises(UsageError):
        DesignFunction.constant(1.5)


@pytest.mark.parametrize("kw", [dict(a=2), dict(g_prob=1.2), dict(y=float("nan"))])
def test_observation_validation(kw):
    args = dict(w=0.0, a=1, y=1.0, g_prob=0.5)
    args.update(kw)
    with pytest.raises(UsageError):
        Observation(**args)


def test_from_observations_checks_g_prob():
    ds = [const(0.3), const(0.3)]
    ok = [Observation(0.1, 1, 2.0, 0.3), Observation(0.2, 0, 1.0, 0.7)]
    traj = Trajectory.from_observations(ok, ds)
    assert traj.n == 2 and traj.check_consistency()
    assert traj.obs == ok
    bad = [Observation(0.1, 1, 2.0, 0.7), Observation(0.2, 0, 1.0, 0.7)]
    with pytest.raises(UsageError):
        Trajectory.from_observations(bad, ds)


def test_trajectory_length_mismatch():
    with pytest.raises(UsageError):
        Trajectory(np.zeros(2), np.zeros(2, int), np.zeros(2), np.zeros(1), (const(0.5),) * 2)


def test_trajectory_arrays_are_read_only():
    traj = constant_trajectory(n=20)
    with pytest.raises(ValueError):
        traj.y[0] = 1.0


def test_prefix_and_gbar_cache():
    traj = constant_trajectory(n=50, p=0.3)
    sub = traj.prefix(20)
    assert sub.n == 20
    np.testing.assert_allclose(sub.gbar(), 0.3)
    np.testing.assert_allclose(sub.gbar(a=0), 0.7)
    with pytest.raises(UsageError):
        traj.prefix(0)


def test_csv_round_trip_full_precision(tmp_path):
    ds = [const(0.1 + 0.1 * k) for k in range(5)] + [neyman_design(*APPENDIX_B_VAR_POLY, clip_lo=0.01)]
    rng = np.random.default_rng(3)
    w = rng.uniform(0, 3, 6)
    a = np.array([1, 0, 1, 0, 1, 0])
    y = rng.normal(size=6) * 1e3
    traj = handmade_trajectory(w, a, y, ds)
    path = tmp_path / "t.csv"
    write_trajectory_csv(traj, path)
    back = read_trajectory_csv(path)
    assert np.array_equal(back.w, traj.w) and np.array_equal(back.y, traj.y)
    assert np.array_equal(back.a, traj.a) and back.designs == traj.designs
    np.testing.assert_array_equal(back.g_prob, traj.g_prob)


def test_csv_rejects_tampered_g_prob(tmp_path):
    traj = constant_trajectory(n=5, p=0.4)
    path = tmp_path / "t.csv"
    write_trajectory_csv(traj, path)
    lines = path.read_text().splitlines()
    fields = lines[1].split(",")
    fields[4] = "0.55"
    lines[1] = ",".join(fields)
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(UsageError):
        read_trajectory_csv(path)


def test_csv_missing_file(tmp_path):
    with pytest.raises(UsageError):
        read_trajectory_csv(tmp_path / "absent.csv")

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stochtd.noise import (IncrementStream, OuParams, brownian_increments, gamma,
                           make_generator, ou_euler_from_increments, ou_exact_from_increments,
                           ou_second_moment, simulate_ou_exact)

REF_OU = OuParams(alpha=3.0, beta=1.0 / 18.0, w0=1.0)


def test_gamma_section4_parameters():
    # 1 + 3/18
    assert gamma(REF_OU) == pytest.approx(7.0 / 6.0, rel=1e-15)


@pytest.mark.parametrize("params, expected", [
    (OuParams(3.0, 0.0, 0.0), 0.0),
    (OuParams(1.0, 1.0, 0.0), 1.0),
])
def test_gamma_trivial(params, expected):
    assert gamma(params) == expected


@pytest.mark.parametrize("kwargs", [
    {"alpha": 0.0, "beta": 1.0}, {"alpha": -1.0, "beta": 1.0},
    {"alpha": 1.0, "beta": -0.1}, {"alpha": 1.0, "beta": 1.0, "w0": math.nan},
])
def test_ou_params_reject_invalid(kwargs):
    with pytest.raises(ValueError):
        OuParams(**kwargs)


def test_second_moment_initial_value():
    assert ou_second_moment(REF_OU, 0.0) == 1.0
    assert ou_second_moment(OuParams(2.0, 0.3, -0.7), 0.0) == pytest.approx(0.49)


def test_second_moment_stationary_limit():
    assert ou_second_moment(REF_OU, 50.0) == pytest.approx(1.0 / 6.0, rel=1e-12)


def test_second_moment_from_zero():
    p = OuParams(3.0, 1.0 / 18.0, 0.0)
    assert ou_second_moment(p, 5.0) == pytest.approx((1 - math.exp(-30.0)) / 6.0, rel=1e-14)
    assert ou_second_moment(p, 5.0) == pytest.approx(0.16667, abs=1e-5)


def test_second_moment_rejects_negative_time():
    with pytest.raises(ValueError):
        ou_second_moment(REF_OU, -1.0)


ou_params = st.builds(
    OuParams,
    alpha=st.floats(0.01, 50.0),
    beta=st.floats(0.0, 10.0),
    w0=st.floats(-10.0, 10.0),
)


@settings(max_examples=200, deadline=None)
@given(ou_params)
def test_second_moment_bounded_by_gamma(params):
    t = np.linspace(0.0, 20.0, 401)
    m = ou_second_moment(params, t)
    assert np.all(m <= gamma(params) * (1 + 1e-12) + 1e-300)
    assert np.all(m >= 0)


@settings(max_examples=200, deadline=None)
@given(ou_params)
def test_second_moment_monotone_toward_stationary(params):
    t = np.linspace(0.0, 20.0, 401)
    m = ou_second_moment(params, t)
    d = np.diff(m)
    stationary = params.alpha * params.beta
    tol = 1e-12 * max(1.0, gamma(params))
    if params.w0 ** 2 > stationary:
        assert np.all(d <= tol)
    elif params.w0 ** 2 < stationary:
        assert np.all(d >= -tol)


def test_increments_deterministic():
    a = brownian_increments(42, 0.001, 1000)
    b = brownian_increments(42, 0.001, 1000)
    assert isinstance(a, IncrementStream)
    assert len(a) == 1000
    np.testing.assert_array_equal(a.values, b.values)


def test_increments_seeds_and_tags_differ():
    a = brownian_increments(1, 0.001, 100).values
    b = brownian_increments(2, 0.001, 100).values
    c = brownian_increments(1, 0.001, 100, tag=3).values
    assert np.any(a != b)
    assert np.any(a != c)


def test_increments_statistics():
    dt, count = 0.001, 100_000
    v = brownian_increments(7, dt, count).values
    assert abs(v.mean()) <= 4 * math.sqrt(dt / count)
    assert abs(v.var() / dt - 1.0) <= 0.05


def test_increments_are_read_only():
    s = brownian_increments(0, 0.1, 5)
    with pytest.raises(ValueError):
        s.values[0] = 1.0


@pytest.mark.parametrize("dt, count", [(0.0, 10), (-0.1, 10), (0.1, 0), (0.1, 2.5)])
def test_increments_reject_bad_spec(dt, count):
    with pytest.raises(ValueError):
        brownian_increments(0, dt, count)


def test_exact_ou_noiseless_decay():
    p = OuParams(3.0, 0.0, 1.0)
    w = simulate_ou_exact(p, (5, 0.01, 200))
    k = np.arange(201)
    np.testing.assert_allclose(w, np.exp(-3.0 * k * 0.01), rtol=1e-12)


def test_exact_ou_rejects_invalid_spec():
    with pytest.raises(ValueError):
        simulate_ou_exact(REF_OU, (0, -0.1, 10))


def _exact_paths(params, seeds, dt, count):
    dB = np.stack([brownian_increments(s, dt, count).values for s in seeds])
    return ou_exact_from_increments(params, dB, dt)


def test_exact_ou_second_moment_at_t2():
    dt, paths = 0.01, 10_000
    w = _exact_paths(REF_OU, range(paths), dt, 200)[:, -1]
    sq = w ** 2
    se = sq.std(ddof=1) / math.sqrt(paths)
    assert abs(sq.mean() - ou_second_moment(REF_OU, 2.0)) <= 3 * se


def test_exact_ou_single_step_variance():
    p = OuParams(3.0, 1.0 / 18.0, 0.0)
    dt = 0.001
    w1 = _exact_paths(p, range(100_000), dt, 1)[:, 1]
    expected = p.alpha * p.beta * (1 - math.exp(-2 * p.alpha * dt))
    assert abs(w1.var() / expected - 1.0) <= 0.05


def test_exact_ou_matches_increment_stream():
    # simulate_ou_exact reads the same stream the coupled simulation uses for B1
    dt, count = 0.001, 50
    stream = make_generator(11, 1).standard_normal(count) * math.sqrt(dt)
    expected = ou_exact_from_increments(REF_OU, stream, dt)
    np.testing.assert_array_equal(simulate_ou_exact(REF_OU, (11, dt, count)), expected)


def test_exact_and_euler_converge_first_order():
    # fine increments summed pairwise give the Brownian path at coarser steps
    dt_fine, horizon, paths = 1.25e-4, 2.0, 20
    steps = int(round(horizon / dt_fine))
    fine = np.stack([brownian_increments(s, dt_fine, steps).values for s in range(paths)])
    devs = []
    for level in range(4):
        m = 2 ** (3 - level)
        dB = fine.reshape(paths, -1, m).sum(axis=2)
        dt = dt_fine * m
        w_ex = ou_exact_from_increments(REF_OU, dB, dt)
        w_em = ou_euler_from_increments(REF_OU, dB, dt)
        devs.append(np.abs(w_ex - w_em).max(axis=1).mean())
    ratios = np.array(devs[:-1]) / np.array(devs[1:])
    assert np.all(np.abs(ratios - 2.0) <= 0.6), ratios

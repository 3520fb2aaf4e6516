import json
import math

import numpy as np
import pytest
import scipy.linalg
import scipy.optimize
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from stochtd.design import (LinearDesign, LyapunovCertificate, StabilityError,
                            admissible_r_min, builtin_nonlinear_2d, characteristic_polynomial,
                            hurwitz_check, in_admissible_range, nonlinear_2d_certificate,
                            phi_saturated_sine, r0_lhs, r0_threshold, routh_hurwitz,
                            solve_lyapunov, td_function_from_dict, user_td_function,
                            verify_certificate)

REF_Q = np.array([[1.375, 0.25], [0.25, 0.1875]])


def _eig_hurwitz(coeffs):
    return bool(np.all(np.linalg.eigvals(LinearDesign(coeffs).companion_matrix).real < 0))


def test_companion_shape():
    A = LinearDesign((-1.0, -2.0, -3.0)).companion_matrix
    np.testing.assert_array_equal(A, [[0, 1, 0], [0, 0, 1], [-1, -2, -3]])


def test_characteristic_polynomial():
    # s^2 + 4 s + 2 for f = -2 z1 - 4 z2
    assert characteristic_polynomial(LinearDesign((-2, -4))) == [1, 4, 2]


@pytest.mark.parametrize("coeffs, expected", [
    ((-2.0, -4.0), True),
    ((1.0, 0.0), False),
    ((-1.0, -1.0, -1.0), False),   # (s+1)(s^2+1): roots on the imaginary axis
    ((-6.0, -11.0, -6.0), True),   # (s+1)(s+2)(s+3)
    ((-2.0, 0.0), False),
])
def test_hurwitz_examples(coeffs, expected):
    assert hurwitz_check(LinearDesign(coeffs)) is expected


def test_reference_design_eigenvalues():
    eig = np.sort(np.linalg.eigvals(LinearDesign((-2, -4)).companion_matrix).real)
    np.testing.assert_allclose(eig, [-2 - math.sqrt(2), -2 + math.sqrt(2)], rtol=1e-12)


@settings(max_examples=300, deadline=None)
@given(st.lists(st.floats(-20, 20), min_size=2, max_size=6))
def test_routh_matches_eigenvalues(coeffs):
    design = LinearDesign(tuple(coeffs))
    eig = np.linalg.eigvals(design.companion_matrix)
    # keep away from the imaginary axis, where a float eigen-solve is ambiguous
    assume(np.min(np.abs(eig.real)) > 1e-6)
    assert hurwitz_check(design) == bool(np.all(eig.real < 0))


def test_routh_degenerate_inputs():
    assert routh_hurwitz([0, 0]) is False
    assert routh_hurwitz([1]) is False
    assert routh_hurwitz([-1, -3, -2]) is True   # sign-normalised (s+1)(s+2)


def test_solve_lyapunov_paper_design():
    Q, cert = solve_lyapunov(LinearDesign((-2.0, -4.0)))
    np.testing.assert_allclose(Q, REF_Q, rtol=0, atol=1e-14)
    # trace 25/16, det 25/128 -> eigenvalues (25/16 -+ sqrt(425/256)) / 2
    disc = math.sqrt((25 / 16) ** 2 - 4 * 25 / 128)
    assert cert.lambda1 == pytest.approx((25 / 16 - disc) / 2, rel=1e-13)
    assert cert.lambda2 == pytest.approx((25 / 16 + disc) / 2, rel=1e-13)
    assert abs(cert.lambda1 - 0.13) <= 0.01 and abs(cert.lambda2 - 1.43) <= 0.01
    assert cert.lambda3 == cert.lambda4 == 1.0
    assert cert.c1 == cert.c2 == pytest.approx(2 * cert.lambda2)
    np.testing.assert_array_equal(cert.W, np.eye(2))


def test_solve_lyapunov_quadratic_form_matches_published_V():
    _, cert = solve_lyapunov(LinearDesign((-2.0, -4.0)))
    z = np.array([[0.3, -1.2], [2.0, 0.5]])
    expected = 1.375 * z[:, 0] ** 2 + 0.1875 * z[:, 1] ** 2 + 0.5 * z[:, 0] * z[:, 1]
    np.testing.assert_allclose(cert.V_value(z), expected, rtol=1e-14)


def test_solve_lyapunov_residual():
    design = LinearDesign((-1.0, -2.0))
    Q, _ = solve_lyapunov(design)
    A = design.companion_matrix
    assert np.abs(Q @ A + A.T @ Q + np.eye(2)).max() <= 1e-10


def test_solve_lyapunov_rejects_unstable():
    with pytest.raises(StabilityError):
        solve_lyapunov(LinearDesign((1.0, 0.0)))


hurwitz_roots = st.lists(st.floats(-2.5, -0.2), min_size=2, max_size=6)


def _design_from_roots(roots):
    poly = np.poly(roots)            # s^n + p1 s^(n-1) + ... + pn
    return LinearDesign(tuple(-poly[::-1][:-1]))


@settings(max_examples=150, deadline=None)
@given(hurwitz_roots)
def test_solve_lyapunov_residual_property(roots):
    design = _design_from_roots(roots)
    assume(max(abs(a) for a in design.coefficients) <= 100)
    assume(hurwitz_check(design))
    Q, _ = solve_lyapunov(design)
    A = design.companion_matrix
    assert np.abs(Q @ A + A.T @ Q + np.eye(design.order)).max() <= 1e-8
    # independent route: Bartels-Stewart from scipy solves A^T Q + Q A = -I
    ref = scipy.linalg.solve_continuous_lyapunov(A.T, -np.eye(design.order))
    np.testing.assert_allclose(Q, ref, rtol=1e-6, atol=1e-8 * np.abs(ref).max())


@settings(max_examples=40, deadline=None)
@given(hurwitz_roots)
def test_linear_certificate_verifies(roots):
    design = _design_from_roots(roots)
    assume(max(abs(a) for a in design.coefficients) <= 100)
    assume(hurwitz_check(design))
    _, cert = solve_lyapunov(design)
    rep = verify_certificate(design.td_function(), cert,
                             {"half_width": 5.0, "count": 2000, "seed": 1}, rtol=1e-7)
    assert rep.holds, rep.violations


def test_verify_linear_certificate_large_sample():
    design = LinearDesign((-2.0, -4.0))
    _, cert = solve_lyapunov(design)
    rep = verify_certificate(design.td_function(), cert,
                             {"half_width": 10.0, "count": 100_000, "seed": 0})
    assert rep.holds
    assert rep.region == (-10.0, 10.0) and rep.samples == 100_000


def test_verify_published_nonlinear_certificate(nonlinear_cert):
    rep = verify_certificate(builtin_nonlinear_2d(), nonlinear_cert,
                             {"half_width": 10.0, "count": 100_000, "seed": 0})
    assert rep.holds, rep.violations


def test_verify_detects_inflated_lambda3():
    design = LinearDesign((-2.0, -4.0))
    _, cert = solve_lyapunov(design)
    broken = LyapunovCertificate(cert.lambda1, cert.lambda2, 10.0, 10.0, cert.c1, cert.c2,
                                 cert.V, cert.W, cert.theta)
    rep = verify_certificate(design.td_function(), broken,
                             {"half_width": 10.0, "count": 10_000, "seed": 0})
    assert not rep.holds
    assert rep.violations["decay"] > 0
    z = rep.witness
    grad = broken.V_gradient(z)
    dV = grad[0] * z[1] + grad[1] * design.td_function()(z)
    # the witness genuinely breaks the inequality it is reported for
    cond = rep.worst_condition
    assert rep.violations[cond] > 0
    assert dV > -10.0 * z @ z


def test_certificate_invariants():
    V = REF_Q
    with pytest.raises(ValueError):
        LyapunovCertificate(2.0, 1.0, 1, 1, 1, 1, V, np.eye(2))
    with pytest.raises(ValueError):
        LyapunovCertificate(0.1, 1.5, 1, 1, 1, 1, V, np.eye(2), theta=1.0)
    with pytest.raises(ValueError):
        LyapunovCertificate(0.1, 1.5, 1, 1, 1, 1, [[1, 2], [0, 1]], np.eye(2))


def test_certificate_json_round_trip(nonlinear_cert):
    text = json.dumps(nonlinear_cert.to_dict())
    back = LyapunovCertificate.from_dict(json.loads(text))
    assert back == nonlinear_cert
    np.testing.assert_array_equal(back.V, nonlinear_cert.V)


def test_design_function_round_trip():
    for f in (LinearDesign((-2, -4)).td_function(), builtin_nonlinear_2d()):
        g = td_function_from_dict(json.loads(json.dumps(f.to_dict())))
        z = np.array([[0.4, -2.0], [3.0, 1.0]])
        np.testing.assert_array_equal(f(z), g(z))


def test_builtin_nonlinear_values():
    f = builtin_nonlinear_2d()
    assert f(np.zeros(2)) == 0.0
    assert f(np.array([math.pi, 0.0])) == pytest.approx(-2 * math.pi - 1 / (4 * math.pi), rel=1e-15)
    assert f(np.array([-math.pi, 1.0])) == pytest.approx(2 * math.pi - 4 + 1 / (4 * math.pi))


def test_phi_piecewise_and_continuous():
    h = math.pi / 2
    q = 1 / (4 * math.pi)
    assert phi_saturated_sine(-10.0) == pytest.approx(-q)
    assert phi_saturated_sine(10.0) == pytest.approx(q)
    assert phi_saturated_sine(0.3) == pytest.approx(math.sin(0.3) * q)
    for s, side in ((h, q), (-h, -q)):
        assert phi_saturated_sine(s - 1e-12) == pytest.approx(side, abs=1e-12)
        assert phi_saturated_sine(s + 1e-12) == pytest.approx(side, abs=1e-12)


def test_user_function_must_vanish_at_origin():
    with pytest.raises(ValueError):
        user_td_function(2, lambda z: np.asarray(z)[..., 0] + 1.0)
    f = user_td_function(2, lambda z: -np.asarray(z).sum(axis=-1), name="sum")
    assert f.to_dict()["name"] == "sum"


def test_r0_published_check(nonlinear_cert):
    lhs = r0_lhs(15.0, 2)
    assert lhs == pytest.approx(1 / 15 + 1 / (2 * 15 ** 3))
    assert 0.066 <= lhs <= 0.068
    assert 0.174 <= r0_threshold(nonlinear_cert) <= 0.176
    assert in_admissible_range(15.0, nonlinear_cert, 2)
    assert in_admissible_range(30.0, nonlinear_cert, 2)
    assert not in_admissible_range(1.0, nonlinear_cert, 2)
    assert not in_admissible_range(1.01, nonlinear_cert, 2)


def test_r_min_against_root_finder(nonlinear_cert):
    thr = 0.5 * 0.5 / 1.43
    ref = scipy.optimize.brentq(lambda r: 1 / r + 1 / (2 * r ** 3) - thr, 1.0, 100.0)
    r_min = admissible_r_min(nonlinear_cert, 2)
    assert r_min == pytest.approx(5.8, abs=0.1)
    assert ref <= r_min <= ref + 2e-6
    assert in_admissible_range(r_min, nonlinear_cert, 2)


def test_r_min_boundary_at_one():
    cert = LyapunovCertificate(0.1, 1.0, 3.0, 3.0, 1, 1, np.eye(2), np.eye(2), theta=0.5)
    assert r0_threshold(cert) == pytest.approx(1.5)
    assert admissible_r_min(cert, 2) == 1.0


def test_r_min_rejects_order_one(nonlinear_cert):
    with pytest.raises(ValueError):
        admissible_r_min(nonlinear_cert, 1)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.01, 0.99), st.floats(0.01, 0.99), st.integers(2, 6),
       st.floats(1.0, 200.0), st.floats(0.0, 100.0))
def test_admissibility_monotone(theta_lo, theta_gap, n, r, dr):
    theta_hi = min(theta_lo + theta_gap, 0.999)
    base = nonlinear_2d_certificate()
    lo, hi = base.with_theta(theta_lo), base.with_theta(theta_hi)
    if in_admissible_range(r, lo, n):
        assert in_admissible_range(r + dr, lo, n)   # larger gains stay admissible
        assert in_admissible_range(r, hi, n)        # larger theta never shrinks the range

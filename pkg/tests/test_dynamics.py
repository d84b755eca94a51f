import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mvq._binio import FormatError
from mvq.discretization import MotionMatrices, lift_apply
from mvq.dynamics import (
    DynamicsParams,
    FilterState,
    boundary_residual,
    dissipation_weight,
    el_fourth_derivative,
    euler_step,
    free_dynamics_rhs,
    load_checkpoint,
    reset_apply,
    reset_check,
    reset_thresholds,
    save_checkpoint,
    simulate_free,
)
from mvq.signal import BlurSchedule


def test_dissipation_weight_limits():
    tw, rate = dissipation_weight(0.0, 1e-12, 10.0)
    assert tw == pytest.approx(0.1, rel=1e-6)
    assert rate == pytest.approx(1e-13, rel=1e-6)
    # no overflow at large theta * T
    tw, _ = dissipation_weight(1800.0, 1.0, 1800.0)
    assert tw == pytest.approx(1.0)
    with pytest.raises(ValueError):
        dissipation_weight(0.0, 0.0, 1.0)


@settings(max_examples=40, deadline=None)
@given(st.floats(1e-4, 2.0), st.floats(1.0, 100.0), st.floats(0.0, 1.0))
def test_dissipation_weight_matches_textbook_form(theta, T, frac):
    t = frac * T
    expected = theta * np.exp(theta * t) / (np.exp(theta * T) - 1)
    assert dissipation_weight(t, theta, T)[0] == pytest.approx(expected, rel=1e-9)


def _state(rng, size):
    return FilterState(*(rng.normal(size=size) for _ in range(4)))


def test_fourth_derivative_matches_unnormalized_equation():
    """Rebuild q4 from the equation with the explicit weight tw(t) and its derivatives."""
    rng = np.random.default_rng(0)
    d, n = 4, 2
    p = DynamicsParams(theta=0.3, mu=5.0, nu=1.5, gamma1=0.7, gamma2=2.0, k=0.2, lambda_M=0.8)
    A = rng.normal(size=(d, d))
    M = A @ A.T
    N = rng.normal(size=(d, d))
    B = rng.normal(size=(d, d))
    O = B @ B.T
    Md, Nd = rng.normal(size=(2, d, d))
    Md = 0.5 * (Md + Md.T)
    mats = MotionMatrices(M, N, O, Md, Nd)
    s = _state(rng, n * d)
    grad = rng.normal(size=n * d)
    q4 = el_fourth_derivative(s, p, mats, grad)
    # weight w = e^{theta t}: w' = theta w, w'' = theta^2 w; set w = 1 at this instant
    th, mu, nu, gam, lam = p.theta, p.mu, p.nu, p.gamma, p.lambda_M
    L = lambda B, v: lift_apply(B, v)  # noqa: E731
    # d^2/dt^2 [w (mu q2 + gam q1)] - d/dt [w (nu q1 + gam q2 + lam (M q1 + N' q))]
    #   + w (k q + lam (N q1 + O q)) + w grad = 0
    dd = (th * th * (mu * s.q2 + gam * s.q1) + 2 * th * (mu * s.q3 + gam * s.q2) + (mu * q4 + gam * s.q3))
    d1 = (th * (nu * s.q1 + gam * s.q2 + lam * (L(M, s.q1) + L(N.T, s.q)))
          + nu * s.q2 + gam * s.q3 + lam * (L(Md, s.q1) + L(M, s.q2) + L(Nd.T, s.q) + L(N.T, s.q1)))
    r = dd - d1 + p.k * s.q + lam * (L(N, s.q1) + L(O, s.q)) + grad
    np.testing.assert_allclose(r, 0.0, atol=1e-11)


def test_zero_motion_weight_ignores_matrices():
    rng = np.random.default_rng(1)
    p = DynamicsParams(lambda_M=0.0)
    s = _state(rng, 6)
    big = MotionMatrices(*(1e6 * np.eye(3) for _ in range(5)))
    np.testing.assert_array_equal(el_fourth_derivative(s, p, big, None),
                                  el_fourth_derivative(s, p, MotionMatrices.zeros(3), None))


def test_euler_step_shifts_derivatives():
    s = FilterState(np.ones(2), 2 * np.ones(2), 3 * np.ones(2), 4 * np.ones(2), 1.0)
    out = euler_step(s, 5 * np.ones(2), 0.5)
    np.testing.assert_array_equal(out.as_array()[:, 0], [2, 3.5, 5, 6.5])
    assert out.t == 1.5


def test_reset_check_and_apply():
    eps = reset_thresholds(2)
    assert eps == (600, 600, 600)
    s = FilterState(np.ones(4), np.zeros(4), np.full(4, 12.0), np.zeros(4))
    assert not reset_check(s, eps)  # |q2|^2 = 576
    s = FilterState(np.ones(4), np.zeros(4), np.full(4, 12.5), np.zeros(4))
    assert reset_check(s, eps)
    out, sched = reset_apply(s, BlurSchedule(0.7))
    assert sched.tau == 0.0
    np.testing.assert_array_equal(out.q, s.q)
    assert all(np.all(v == 0) for v in out.derivatives())


def test_free_dynamics_decays_for_stable_params():
    p = DynamicsParams(theta=1.0, mu=5.0, nu=1.5, gamma1=1.0, gamma2=2.0, k=0.02)
    s = FilterState(np.ones(3), np.zeros(3), np.zeros(3), np.zeros(3))
    out = simulate_free(s, p, 200.0, 0.05)
    assert np.linalg.norm(out.q) < 1e-3
    e = simulate_free(s, p, 1.0, 0.01, method="euler")
    r = simulate_free(s, p, 1.0, 0.01)
    np.testing.assert_allclose(e.q, r.q, rtol=1e-3)


def test_free_rhs_scalar_solution():
    # mu q4 + k q = 0 with theta = nu = gamma = 0 reduces to q4 = -k/mu q
    p = DynamicsParams(theta=0.0, mu=2.0, nu=0.0, gamma1=0.0, gamma2=0.0, k=8.0)
    s = FilterState(np.array([3.0]), np.zeros(1), np.zeros(1), np.zeros(1))
    assert free_dynamics_rhs(s, p)[0] == -12.0


def test_boundary_residual_zero_at_rest():
    p = DynamicsParams(lambda_M=0.0)
    r1, r2 = boundary_residual(FilterState.at_rest(np.ones(5)), p, None)
    assert np.all(r1 == 0) and np.all(r2 == 0)


def test_checkpoint_round_trip(tmp_path):
    s = FilterState(*(np.random.default_rng(2).normal(size=18) for _ in range(4)), t=3.25)
    save_checkpoint(tmp_path / "s.mvqs", s, 2, 1, 3)
    back, dims = load_checkpoint(tmp_path / "s.mvqs")
    assert dims == (2, 1, 3) and back.t == 3.25
    np.testing.assert_array_equal(back.as_array(), s.as_array())
    buf = (tmp_path / "s.mvqs").read_bytes()
    (tmp_path / "bad.mvqs").write_bytes(buf[:-1])
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "bad.mvqs")
    with pytest.raises(ValueError):
        save_checkpoint(tmp_path / "x.mvqs", s, 3, 1, 3)


def test_weight_ratio_across_horizon():
    theta, T = 0.01, 50.0
    assert dissipation_weight(T, theta, T)[0] / dissipation_weight(0.0, theta, T)[0] == pytest.approx(np.exp(theta * T))


def test_normalized_and_weighted_equations_give_same_trajectory():
    """Integrate the equation with explicit time-weighted coefficients and compare."""
    rng = np.random.default_rng(5)
    d, n = 3, 2
    p = DynamicsParams(theta=0.02, mu=5.0, nu=1.5, gamma1=0.5, gamma2=2.0, k=0.1, lambda_M=0.3, T=50.0)
    A = rng.normal(size=(d, d))
    mats = MotionMatrices(A @ A.T, rng.normal(size=(d, d)), np.eye(d), np.zeros((d, d)), np.zeros((d, d)))
    grad = rng.normal(size=n * d)
    s0 = _state(rng, n * d)
    dt = 0.04

    def weighted_q4(s):
        w, _ = dissipation_weight(s.t, p.theta, p.T)
        th, lam = p.theta, p.lambda_M
        mu, mu1, mu2 = w * p.mu, th * w * p.mu, th * th * w * p.mu
        nu, nu1 = w * p.nu, th * w * p.nu
        ga1, ga2 = th * w * p.gamma, th * th * w * p.gamma
        M, N, O = (w * B for B in (mats.M, mats.N, mats.O))
        M1, N1 = th * M, th * N
        rhs = (2 * mu1 * s.q3 + (mu2 + ga1 - nu) * s.q2 - lam * lift_apply(M, s.q2)
               + (ga2 - nu1) * s.q1 - lam * lift_apply(M1 + N.T - N, s.q1)
               + w * p.k * s.q + lam * lift_apply(O - N1.T, s.q) + w * grad)
        return -rhs / mu

    a = b = s0
    for _ in range(100):
        a = euler_step(a, el_fourth_derivative(a, p, mats, grad), dt)
        b = euler_step(b, weighted_q4(b), dt)
    assert p.theta * a.t <= 1
    np.testing.assert_allclose(a.as_array(), b.as_array(), rtol=1e-8, atol=1e-12)


def test_free_rhs_equals_el_without_signal():
    rng = np.random.default_rng(6)
    s = _state(rng, 8)
    p = DynamicsParams(theta=1.0, mu=5.0, nu=1.5, gamma1=1.0, gamma2=2.0, k=0.0)
    np.testing.assert_allclose(free_dynamics_rhs(s, p), el_fourth_derivative(s, p, None, None), rtol=0, atol=1e-12)


def test_default_thresholds_trigger_at_1500():
    eps = reset_thresholds(5)
    v = np.zeros(4)
    v[0] = np.sqrt(1500.0)
    assert reset_check(FilterState(np.zeros(4), v, np.zeros(4), np.zeros(4)), eps)
    v[0] = np.sqrt(1499.0)
    assert not reset_check(FilterState(np.zeros(4), v, np.zeros(4), np.zeros(4)), eps)

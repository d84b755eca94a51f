"""Online integration of the fourth-order filter dynamics.

The equation is integrated in a form divided through by the dissipation
weight ``tw(t) = theta e^{theta t} / (e^{theta T} - 1)``. Because
``d/dt (tw X) = tw (theta X + Xdot)``, every time-weighted coefficient maps to
a constant-size one and ``e^{theta t}`` never has to be evaluated, so long
runs do not overflow.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from ._binio import FormatError, check_payload, read_header
from .discretization import MotionMatrices, lift_apply

CHECKPOINT_MAGIC = b"MVQS"


@dataclass(frozen=True, eq=False)
class FilterState:
    q: np.ndarray
    q1: np.ndarray
    q2: np.ndarray
    q3: np.ndarray
    t: float = 0.0

    @classmethod
    def at_rest(cls, q, t=0.0):
        q = np.asarray(q, dtype=np.float64)
        z = np.zeros_like(q)
        return cls(q.copy(), z, z.copy(), z.copy(), t)

    @classmethod
    def random(cls, size, seed, scale=0.1):
        """Uniform ``q`` on ``[-scale, scale]`` with zero derivatives."""
        rng = np.random.default_rng(seed)
        return cls.at_rest(rng.uniform(-scale, scale, size))

    def derivatives(self):
        return (self.q1, self.q2, self.q3)

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in (self.q, self.q1, self.q2, self.q3))

    def as_array(self) -> np.ndarray:
        return np.stack([self.q, self.q1, self.q2, self.q3])


@dataclass(frozen=True)
class DynamicsParams:
    """Coefficients of the learning dynamics.

    ``mu = alpha + gamma2^2``, ``nu = beta + gamma1^2`` and
    ``gamma = gamma1 * gamma2`` weigh the kinetic regularizer; ``k`` weighs
    ``|q|^2``. ``eps`` are the squared-norm reset thresholds for the first
    three derivatives.
    """

    theta: float = 1e-4
    mu: float = 5.0
    nu: float = 1.5e-8
    gamma1: float = 1e-4
    gamma2: float = 2.0
    k: float = 1e-18
    lambda_C: float = 1.0
    lambda_M: float = 0.0
    T: float = 1800.0
    dt: float = 1.0 / 25
    eps: tuple = (1500.0, 1500.0, 1500.0)

    @property
    def gamma(self) -> float:
        return self.gamma1 * self.gamma2

    def is_coercive(self) -> bool:
        return self.mu > self.gamma2 ** 2 and self.nu > self.gamma1 ** 2 and self.k > 0


def reset_thresholds(n: int, per_feature: float = 300.0):
    e = per_feature * n
    return (e, e, e)


def dissipation_weight(t, theta, T):
    """``(tw, tw_rate)`` with ``tw = theta e^{theta t} / (e^{theta T} - 1)``.

    Evaluated as ``theta e^{theta (t - T)} / (1 - e^{-theta T})``, which is
    finite for large ``theta T`` and tends to ``1/T`` as ``theta -> 0``.
    """
    if theta <= 0 or T <= 0:
        raise ValueError("theta and T must be positive")
    tw = theta * np.exp(theta * (np.asarray(t, dtype=np.float64) - T)) / -math.expm1(-theta * T)
    if np.ndim(tw) == 0:
        tw = float(tw)
    return tw, theta * tw


def el_fourth_derivative(state: FilterState, params: DynamicsParams, mats: MotionMatrices,
                         grad_u: np.ndarray, t=None) -> np.ndarray:
    """Solve the Euler-Lagrange equation for ``q^(4)``.

    With the weight divided out the equation reads::

        mu q4 + 2 theta mu q3
          + (theta^2 mu + theta gamma - nu - lam M) q2
          + (theta^2 gamma - theta nu - lam (theta M + Mdot + N' - N)) q1
          + (k + lam O - lam (theta N + Ndot)') q
          + grad U = 0

    where every block acts per feature and ``'`` is the transpose.
    ``t`` is accepted for interface symmetry; the normalized equation has
    no explicit time dependence.
    """
    p = params
    if p.mu == 0:
        raise ValueError("mu must be nonzero")
    th, mu, nu, gam, lam = p.theta, p.mu, p.nu, p.gamma, p.lambda_M
    q, q1, q2, q3 = state.q, state.q1, state.q2, state.q3
    rhs = (2 * th * mu) * q3
    rhs = rhs + (th * th * mu + th * gam - nu) * q2
    rhs = rhs + (th * th * gam - th * nu) * q1
    rhs = rhs + p.k * q
    if lam != 0.0:
        M, N, O = mats.M, mats.N, mats.O
        rhs = rhs - lam * lift_apply(M, q2)
        rhs = rhs - lam * lift_apply(th * M + mats.Mdot + N.T - N, q1)
        rhs = rhs + lam * lift_apply(O - (th * N + mats.Ndot).T, q)
    if grad_u is not None:
        rhs = rhs + grad_u
    return -rhs / mu


def euler_step(state: FilterState, q4: np.ndarray, dt: float) -> FilterState:
    if dt <= 0:
        raise ValueError("dt must be positive")
    return FilterState(
        state.q + dt * state.q1,
        state.q1 + dt * state.q2,
        state.q2 + dt * state.q3,
        state.q3 + dt * q4,
        state.t + dt,
    )


def reset_check(state: FilterState, eps) -> bool:
    """True when any squared derivative norm reaches its threshold."""
    for v, e in zip(state.derivatives(), eps):
        if e <= 0:
            raise ValueError("reset thresholds must be positive")
        if float(v @ v) >= e:
            return True
    return False


def reset_apply(state: FilterState, schedule):
    """Zero the derivatives and null the signal (``tau = 0``); ``q`` is kept."""
    return FilterState.at_rest(state.q, state.t), replace(schedule, tau=0.0)


def free_dynamics_rhs(state: FilterState, barred: DynamicsParams) -> np.ndarray:
    """``q^(4)`` of the signal-free constant-coefficient equation."""
    th, mu, nu, gam = barred.theta, barred.mu, barred.nu, barred.gamma
    if mu == 0:
        raise ValueError("mu must be nonzero")
    return -(
        2 * th * mu * state.q3
        + (th * th * mu + th * gam - nu) * state.q2
        + (th * th * gam - th * nu) * state.q1
        + barred.k * state.q
    ) / mu


def rk4_step(state: FilterState, rhs, h: float) -> FilterState:
    """Classical RK4 step of the first-order system ``(q, q1, q2, q3)``."""
    y = state.as_array()

    def f(y):
        s = FilterState(y[0], y[1], y[2], y[3])
        return np.stack([y[1], y[2], y[3], rhs(s)])

    k1 = f(y)
    k2 = f(y + 0.5 * h * k1)
    k3 = f(y + 0.5 * h * k2)
    k4 = f(y + h * k3)
    y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return FilterState(y[0], y[1], y[2], y[3], state.t + h)


def simulate_free(state: FilterState, barred: DynamicsParams, duration: float, h: float,
                  method: str = "rk4") -> FilterState:
    """Integrate the signal-free dynamics for ``duration`` seconds with step ``<= h``."""
    steps = max(1, int(math.ceil(duration / h)))
    h = duration / steps
    rhs = lambda s: free_dynamics_rhs(s, barred)  # noqa: E731
    for _ in range(steps):
        if method == "rk4":
            state = rk4_step(state, rhs, h)
        else:
            state = euler_step(state, rhs(state), h)
    return state


def boundary_residual(state: FilterState, params: DynamicsParams, mats: MotionMatrices, t=None):
    """Left-hand sides of the two end-point conditions, weight divided out.

    ``r1 = mu q2 + gamma q1`` and
    ``r2 = -mu q3 - theta mu q2 + (nu - theta gamma + lam M) q1 + lam N' q``.
    """
    th, mu, nu, gam, lam = params.theta, params.mu, params.nu, params.gamma, params.lambda_M
    r1 = mu * state.q2 + gam * state.q1
    r2 = -mu * state.q3 - th * mu * state.q2 + (nu - th * gam) * state.q1
    if lam != 0.0 and mats is not None:
        r2 = r2 + lam * lift_apply(mats.M, state.q1) + lam * lift_apply(mats.N.T, state.q)
    return r1, r2


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, state: FilterState, n: int, m: int, k: int) -> None:
    """``MVQS`` + u32 n, m, k + f64 q, q1, q2, q3 + f64 t."""
    size = n * m * k * k
    if state.q.size != size:
        raise ValueError("state size does not match (n, m, k)")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC + struct.pack("<3I", n, m, k))
        fh.write(state.as_array().astype("<f8").tobytes())
        fh.write(struct.pack("<d", state.t))


def load_checkpoint(path):
    """Return ``(state, (n, m, k))``."""
    buf = Path(path).read_bytes()
    (n, m, k), offset = read_header(buf, CHECKPOINT_MAGIC, 3, "checkpoint")
    size = n * m * k * k
    if size == 0:
        raise FormatError("checkpoint: zero-sized filter bank", len(CHECKPOINT_MAGIC))
    check_payload(buf, offset, 4 * size * 8 + 8, "checkpoint")
    arr = np.frombuffer(buf, dtype="<f8", offset=offset, count=4 * size).reshape(4, size)
    (t,) = struct.unpack("<d", buf[-8:])
    arr = arr.astype(np.float64)
    return FilterState(arr[0], arr[1], arr[2], arr[3], t), (n, m, k)

"""Numerical checks of the corrected Gaussian mollifier ``rho = L G``.

``G_sigma`` is the zero-mean Gaussian with standard deviation ``sigma`` and
``L = sum_{n<=m} (-1)^n sigma^{2n} / (2^n n!) d^{2n}/dx^{2n}``. Using
``G^{(j)}(x) = (-1)^j H_j(y) / (sqrt(2) sigma)^j G(x)`` with
``y = x / (sqrt(2) sigma)`` the sum collapses to

    rho(x) = G(x) * sum_{n<=m} (-1)^n H_{2n}(y) / (4^n n!)

Integrals are evaluated in the scaled variable ``u = x / sigma``, which
makes every quadrature independent of ``sigma`` except through the
integration limits and the test function.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate


class QuadratureError(RuntimeError):
    pass


@dataclass(frozen=True)
class MollifierSpec:
    order_m: int
    sigma: float

    def __post_init__(self):
        if self.order_m < 0:
            raise ValueError("order_m must be >= 0")
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")

    @property
    def window(self) -> float:
        """Half-width of the quadrature window in ``x``; rho is treated as zero beyond."""
        return 10.0 * self.sigma * (1 + self.order_m)


def hermite_eval(n: int, x):
    """Physicists' Hermite polynomial by the three-term recurrence."""
    if n < 0:
        raise ValueError("n must be >= 0")
    x = np.asarray(x, dtype=np.float64)
    h_prev = np.ones_like(x)
    if n == 0:
        return h_prev if h_prev.ndim else float(h_prev)
    h = 2.0 * x
    for j in range(1, n):
        h_prev, h = h, 2.0 * x * h - 2.0 * j * h_prev
    return h if h.ndim else float(h)


def gaussian(x, sigma):
    x = np.asarray(x, dtype=np.float64)
    return np.exp(-0.5 * (x / sigma) ** 2) / (math.sqrt(2 * math.pi) * sigma)


def gaussian_derivative(j, x, sigma):
    """``d^j G_sigma / dx^j`` via the Hermite relation."""
    s2 = math.sqrt(2.0) * sigma
    return (-1) ** j * hermite_eval(j, np.asarray(x) / s2) / s2 ** j * gaussian(x, sigma)


def _correction(order_m, y):
    total = np.zeros_like(y)
    for n in range(order_m + 1):
        total = total + (-1) ** n * hermite_eval(2 * n, y) / (4 ** n * math.factorial(n))
    return total


def rho_sigma_eval(spec: MollifierSpec, x):
    x = np.asarray(x, dtype=np.float64)
    y = x / (math.sqrt(2.0) * spec.sigma)
    out = gaussian(x, spec.sigma) * _correction(spec.order_m, y)
    return out if out.ndim else float(out)


def _rho_unit(order_m, u):
    # rho for sigma = 1; rho_sigma(x) = rho_unit(x / sigma) / sigma.
    return rho_sigma_eval(MollifierSpec(order_m, 1.0), u)


def _quad(f, a, b, what, epsabs=1e-13, epsrel=1e-12, points=None):
    if b <= a:
        return 0.0
    val, err, info = integrate.quad(f, a, b, epsabs=epsabs, epsrel=epsrel, limit=500,
                                    points=points, full_output=True)[:3]
    tol = max(epsabs, epsrel * abs(val))
    if err > 100 * tol:
        raise QuadratureError(f"{what}: quadrature error estimate {err:.3g} exceeds {100 * tol:.3g}")
    return val


def _sign_changes(order_m, lo, hi):
    """Approximate zeros of rho_unit in (lo, hi), used as quadrature breakpoints."""
    if hi <= lo:
        return []
    u = np.linspace(lo, hi, 2001)
    v = _rho_unit(order_m, u)
    idx = np.nonzero(np.sign(v[:-1]) * np.sign(v[1:]) < 0)[0]
    return [0.5 * (u[i] + u[i + 1]) for i in idx]


def rho_mass_and_tail(spec: MollifierSpec, delta: float):
    """``(int rho, int_{|x| >= delta} |rho|)`` over the window, zero beyond it."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    m = spec.order_m
    U = spec.window / spec.sigma
    half = _quad(lambda u: _rho_unit(m, u), 0.0, U, "mass", points=_sign_changes(m, 0.0, U) or None)
    lo = delta / spec.sigma
    tail = 0.0
    if lo < U:
        tail = 2.0 * _quad(lambda u: abs(_rho_unit(m, u)), lo, U, "tail",
                           points=_sign_changes(m, lo, U) or None)
    return 2.0 * half, tail


def sup_norm(spec: MollifierSpec, samples=20001) -> float:
    x = np.linspace(-spec.window, spec.window, samples)
    return float(np.max(np.abs(rho_sigma_eval(spec, x))))


def l1_norm(spec: MollifierSpec) -> float:
    U = spec.window / spec.sigma
    return 2.0 * _quad(lambda u: abs(_rho_unit(spec.order_m, u)), 0.0, U, "l1",
                       points=_sign_changes(spec.order_m, 0.0, U) or None)


def smeared_value(spec: MollifierSpec, phi) -> float:
    """``int rho_sigma(x) phi(x) dx`` over the window."""
    m, s = spec.order_m, spec.sigma
    U = spec.window / s
    pts = _sign_changes(m, -U, U) or None
    return _quad(lambda u: _rho_unit(m, u) * phi(s * u), -U, U, "smear", points=pts)


def delta_convergence_test(order_m: int, sigmas, phi):
    """``|int rho_sigma phi - phi(0)|`` for each sigma."""
    phi0 = float(phi(0.0))
    return [abs(smeared_value(MollifierSpec(order_m, s), phi) - phi0) for s in sigmas]


def report_rows(order_m, sigmas, delta=0.5, phi=None):
    """Rows ``(sigma, mass, tail, gap, sup)`` summarizing the mollifier family."""
    if phi is None:
        def phi(x):
            return math.exp(-x * x) * math.cos(x)
    rows = []
    for s in sigmas:
        spec = MollifierSpec(order_m, s)
        mass, tail = rho_mass_and_tail(spec, delta)
        gap = delta_convergence_test(order_m, [s], phi)[0]
        rows.append({"order_m": order_m, "sigma": s, "mass": mass, "tail": tail,
                     "gap": gap, "sup": sup_norm(spec)})
    return rows

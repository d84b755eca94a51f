"""Parameter certification and reset-interval design for the free dynamics.

The signal-free equation

    mu q4 + 2 theta mu q3 + (theta^2 mu + theta gamma - nu) q2
        + (theta^2 gamma - theta nu) q1 + k q = 0

has the monic characteristic polynomial ``x^4 + b x^3 + c x^2 + d x + e``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .dynamics import DynamicsParams, FilterState


class NotCertifiedError(ValueError):
    """Parameters do not meet the requirements of a design routine."""


@dataclass(frozen=True)
class QuarticCoeffs:
    b: float
    c: float
    d: float
    e: float
    p_red: float
    r_red: float
    s_red: float

    def monic(self) -> np.ndarray:
        return np.array([1.0, self.b, self.c, self.d, self.e])

    @property
    def scale(self) -> float:
        return 1.0 + max(abs(self.b), abs(self.c), abs(self.d), abs(self.e))


@dataclass(frozen=True, eq=False)
class RootReport:
    roots: np.ndarray
    stable: bool
    real: bool
    tol: float
    snapped: int = 0  # number of roots merged into real double roots

    @property
    def aperiodic(self) -> bool:
        return self.real


def coercivity_check(mu, nu, gamma1, gamma2, k) -> bool:
    return bool(mu > gamma2 ** 2 and nu > gamma1 ** 2 and k > 0)


def reduced_coeffs(b, c, d, e):
    """Coefficients of ``z^4 + p z^2 + r z + s`` after ``x = z - b/4``."""
    p = c - 3 * b * b / 8
    r = b ** 3 / 8 - b * c / 2 + d
    s = b * b * c / 16 - 3 * b ** 4 / 256 - b * d / 4 + e
    return p, r, s


def quartic_from_monic(b, c, d, e) -> QuarticCoeffs:
    return QuarticCoeffs(b, c, d, e, *reduced_coeffs(b, c, d, e))


def characteristic_coeffs(theta, mu, nu, gamma, k) -> QuarticCoeffs:
    if mu == 0:
        raise ValueError("mu must be nonzero")
    b = 2 * theta
    c = (theta * theta * mu + theta * gamma - nu) / mu
    d = (theta * theta * gamma - theta * nu) / mu
    e = k / mu
    return quartic_from_monic(b, c, d, e)


def params_coeffs(p: DynamicsParams) -> QuarticCoeffs:
    return characteristic_coeffs(p.theta, p.mu, p.nu, p.gamma, p.k)


def _polish(poly, z, iters=3):
    dpoly = np.polyder(poly)
    for _ in range(iters):
        dp = np.polyval(dpoly, z)
        if dp == 0:
            break
        step = np.polyval(poly, z) / dp
        if not np.isfinite(step):
            break
        z = z - step
    return z


def quartic_roots(coeffs: QuarticCoeffs, tol=None) -> RootReport:
    """Roots of the monic quartic from companion-matrix eigenvalues.

    Roots are Newton-polished and sorted by real part. A complex pair whose
    real part is, within ``tol`` backward error, a double real root (both
    ``p`` and ``p'`` vanish there) is reported as that double root: at a
    double root the eigenvalues split into a conjugate pair of size
    ``sqrt(machine eps)``, far above any sensible classification tolerance.
    """
    poly = coeffs.monic()
    if tol is None:
        tol = 1e-9 * coeffs.scale
    roots = np.roots(poly).astype(np.complex128)
    roots = np.concatenate([roots, np.zeros(4 - roots.size, dtype=np.complex128)])
    roots = np.array([_polish(poly, z) if z != 0 else z for z in roots])

    snapped = 0
    dpoly = np.polyder(poly)
    d2poly = np.polyder(dpoly)
    used = np.zeros(4, dtype=bool)
    for i in range(4):
        if used[i] or abs(roots[i].imag) <= tol:
            continue
        j = next((j for j in range(i + 1, 4) if not used[j]
                  and abs(roots[j] - np.conj(roots[i])) <= 1e-6 * (1 + abs(roots[i]))), None)
        if j is None:
            continue
        a = roots[i].real
        # Newton on p' for the candidate double root.
        for _ in range(20):
            d2 = np.polyval(d2poly, a)
            if d2 == 0:
                break
            a -= np.polyval(dpoly, a) / d2
        spread = abs(roots[i].imag)
        # Relative backward error of a as a root: |p(a)| against sum |c_i| |a|^(4-i).
        size = np.polyval(np.abs(poly), abs(a))
        if (spread <= 1e-4 * abs(a) and abs(a - roots[i].real) <= 10 * spread
                and abs(np.polyval(poly, a)) <= 1e-9 * size):
            roots[i] = roots[j] = complex(a, 0.0)
            used[i] = used[j] = True
            snapped += 2
    roots = np.where(np.abs(roots.imag) <= tol, roots.real + 0j, roots)
    roots = roots[np.lexsort((roots.imag, roots.real))]
    tiny = 1e-14 * coeffs.scale
    stable = bool(np.all(roots.real < -tiny))
    real = bool(np.all(np.abs(roots.imag) <= tol))
    return RootReport(roots, stable, real, tol, snapped)


# ---------------------------------------------------------------------------
# stability + reality certificate


@dataclass(frozen=True)
class PropCheck:
    certified: bool
    report: RootReport
    conditions: dict = field(default_factory=dict)


def prop_conditions(theta, mu, nu, gamma1, gamma2, k) -> dict:
    """Truth value of each sufficient condition for stable, aperiodic free dynamics."""
    g = gamma1 * gamma2
    bound = (nu - theta * g) ** 2 / (4 * mu) if mu > 0 else -math.inf
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = gamma1 / theta if theta != 0 else math.nan
    return {
        "theta_positive": theta > 0,
        "mu_gt_gamma2_sq": mu > gamma2 ** 2,
        "nu_gt_gamma1_sq": nu > gamma1 ** 2,
        "nu_lt_theta_gamma": nu < theta * g,
        "k_positive": k > 0,
        "k_le_bound": k <= bound,
        "gamma_signs": (gamma1 < 0 and gamma2 < ratio) or (gamma1 > 0 and gamma2 > ratio),
    }


def prop_coef_check(theta, mu, nu, gamma1, gamma2, k) -> PropCheck:
    """Check the sufficient conditions and attach the roots as a cross-check."""
    conditions = prop_conditions(theta, mu, nu, gamma1, gamma2, k)
    certified = all(conditions.values())
    report = quartic_roots(characteristic_coeffs(theta, mu, nu, gamma1 * gamma2, k)) if mu != 0 else None
    return PropCheck(certified, report, conditions)


def energy_form_min_eig(mu, nu, gamma) -> float:
    """Smallest eigenvalue of ``[[mu, gamma], [gamma, nu]]`` (kinetic energy form)."""
    return float(np.linalg.eigvalsh(np.array([[mu, gamma], [gamma, nu]]))[0])


def classify(p: DynamicsParams) -> str:
    """One of ``stable-real``, ``stable-complex``, ``unstable-real``, ``unstable-complex``."""
    rep = quartic_roots(params_coeffs(p))
    return f"{'stable' if rep.stable else 'unstable'}-{'real' if rep.real else 'complex'}"


# ---------------------------------------------------------------------------
# reset-interval design


def vandermonde(nodes) -> np.ndarray:
    """``V[i, j] = nodes[j] ** i``."""
    x = np.asarray(nodes, dtype=np.float64)
    return x[None, :] ** np.arange(x.size)[:, None]


def vandermonde_inverse(nodes) -> np.ndarray:
    """Inverse of :func:`vandermonde` from the Lagrange basis polynomials.

    Row ``j`` of the inverse holds the monomial coefficients (ascending) of
    ``L_j(t) = prod_{l != j} (t - x_l) / (x_j - x_l)``.
    """
    x = np.asarray(nodes, dtype=np.float64)
    n = x.size
    inv = np.empty((n, n))
    for j in range(n):
        others = np.delete(x, j)
        denom = np.prod(x[j] - others)
        if denom == 0:
            raise ValueError("Vandermonde nodes must be distinct")
        inv[j] = np.poly(others)[::-1] / denom
    return inv


def modal_inverse(lams) -> np.ndarray:
    """Inverse of ``W[k, j] = lams[j] ** (k + 1)``, k = 0..2.

    Maps the derivatives ``(q1, q2, q3)`` at the start of a signal-free interval
    to the amplitudes of the decaying modes.
    """
    lams = np.asarray(lams, dtype=np.float64)
    return vandermonde_inverse(lams) / lams[:, None]


@dataclass(frozen=True, eq=False)
class ResetDesign:
    rho: float
    params: DynamicsParams
    duration: float
    step: float
    base_roots: np.ndarray
    c_modal: float
    c_lambda: float
    rho_sqrt_rule: float
    displacement_bound: float
    predicted_displacement: float
    max_derivative: float


def _base_modes(base: DynamicsParams):
    if base.k != 0:
        raise NotCertifiedError("base parameters must have k = 0 so that 0 is a characteristic root")
    rep = quartic_roots(params_coeffs(base))
    nz = rep.roots[np.abs(rep.roots) > 0]
    if nz.size != 3 or not rep.real or np.any(nz.real >= 0):
        raise NotCertifiedError(f"base roots {rep.roots} are not (0, three negative reals)")
    lams = np.sort(nz.real)
    if np.min(np.diff(lams)) <= 1e-6 * np.max(np.abs(lams)):
        raise NotCertifiedError(f"base roots {lams} are not distinct")
    return lams


def scale_params(base: DynamicsParams, rho: float) -> DynamicsParams:
    """Parameters whose characteristic roots are ``rho`` times those of ``base``."""
    return replace(base, theta=rho * base.theta, gamma1=rho * base.gamma1,
                   nu=rho * rho * base.nu, k=rho ** 4 * base.k)


def reset_design(state: FilterState, eps: float, base: DynamicsParams, derivative_tol=1e-8,
                 margin=1.05) -> ResetDesign:
    """Choose the time scale of a signal-free interval.

    After the interval the derivatives are below ``derivative_tol`` times
    their initial maximum norm and ``q`` has moved by less than ``eps``.

    With roots ``(0, rho l2, rho l3, rho l4)`` the solution is
    ``q(s) = q_inf + sum_j c_j exp(rho l_j s)`` where
    ``c = W^{-1} diag(rho^-1, rho^-2, rho^-3) (q1, q2, q3)``, so the total
    displacement is at most ``9 c_modal max_k |q^(k)| / rho`` for ``rho >= 1``.
    ``rho`` is the larger of that linear rule and the square-root rule
    ``sqrt(9 C max_k |q^(k)| / eps)``; both are reported.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    lams = _base_modes(base)
    winv = modal_inverse(lams)
    c_modal = float(np.max(np.abs(winv)))
    Q = np.stack([state.q1, state.q2, state.q3])
    norms = np.linalg.norm(Q, axis=1)
    mmax = float(norms.max())

    if mmax == 0.0:
        rho = margin
        rho_sqrt = 1.0
    else:
        rho_lin = 9.0 * c_modal * mmax / eps
        rho_sqrt = math.sqrt(9.0 * c_modal * mmax / eps)
        rho = margin * max(rho_lin, rho_sqrt, 1.0)
    c_lambda = float(np.max(np.abs(vandermonde_inverse(lams / rho))))

    powers = rho ** -np.arange(1, 4, dtype=np.float64)
    amps = winv @ (powers[:, None] * Q)  # (3 modes, dim)
    bound = float(np.sum(np.abs(winv) * powers[None, :] * norms[None, :]))
    predicted = float(np.linalg.norm(amps.sum(axis=0)))

    scaled = rho * lams
    amp_norms = np.linalg.norm(amps, axis=1)
    peak = max(float(np.max(amp_norms * np.abs(scaled) ** kk)) for kk in (1, 2, 3))
    if mmax == 0.0 or peak == 0.0:
        duration = 1.0 / (rho * abs(lams[-1]))
    else:
        duration = math.log(4 * peak / (derivative_tol * mmax)) / (rho * abs(lams[-1]))
    step = 0.25 / (rho * abs(lams[0]))
    return ResetDesign(
        rho=rho,
        params=scale_params(base, rho),
        duration=max(duration, step),
        step=step,
        base_roots=np.concatenate([[0.0], lams]),
        c_modal=c_modal,
        c_lambda=c_lambda,
        rho_sqrt_rule=rho_sqrt,
        displacement_bound=bound,
        predicted_displacement=predicted,
        max_derivative=mmax,
    )


DEFAULT_BARRED = DynamicsParams(theta=1.0, mu=5.0, nu=1.5, gamma1=1.0, gamma2=2.0, k=0.0)

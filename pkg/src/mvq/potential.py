"""Feature activations, softmax features and the information-based potential.

Frame-level quantities work on the patch matrix ``Gamma`` of shape
``(H*W, m*k*k)`` so one frame's patches are extracted once and shared by
the activations, the potential gradient and the motion matrices.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.integrate import trapezoid

from .discretization import FilterShape, patch_matrix


def _weights(g):
    return np.asarray(getattr(g, "weights", g), dtype=np.float64).reshape(-1)


def softmax(A: np.ndarray, axis: int = -1) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    z = A - A.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def _filters(q, n, block):
    q = np.asarray(q, dtype=np.float64)
    if q.size != n * block:
        raise ValueError(f"q has {q.size} entries, expected {n} x {block}")
    return q.reshape(n, block)


def activations_from_patches(q, patches, n):
    """``A[x, i] = dot(chi_i, gamma_x)`` for every pixel, shape ``(H*W, n)``."""
    return patches @ _filters(q, n, patches.shape[1]).T


def activations(q, C, shape: FilterShape) -> np.ndarray:
    """Activations of a filter bank on a frame, shape ``(n, H, W)``."""
    data = getattr(C, "data", C)
    if data.shape[0] != shape.m:
        raise ValueError(f"frame has {data.shape[0]} channels, filters expect {shape.m}")
    A = activations_from_patches(q, patch_matrix(data, shape.k), shape.n)
    return A.T.reshape(shape.n, data.shape[1], data.shape[2])


def features(q, C, shape: FilterShape) -> np.ndarray:
    """Softmax features ``Phi`` of shape ``(n, H, W)``; each pixel sums to one."""
    return softmax(activations(q, C, shape), axis=0)


@dataclass
class FrameTerms:
    """Potential, its gradient and the features for one frame."""

    U: float
    grad: np.ndarray
    phi: np.ndarray  # (H*W, n)
    p: np.ndarray  # attention-averaged features


def frame_terms(q, patches, g, n, lambda_C, need_grad=True) -> FrameTerms:
    w = _weights(g)
    chi = _filters(q, n, patches.shape[1])
    phi = softmax(patches @ chi.T, axis=1)
    p = w @ phi
    U = 0.5 * float(p @ p) - 0.5 * lambda_C * float(w @ (phi * phi).sum(axis=1))
    if not need_grad:
        return FrameTerms(U, None, phi, p)
    # dU/dPhi, then through the softmax Jacobian Phi_i (delta_ir - Phi_r).
    dphi = w[:, None] * (p[None, :] - lambda_C * phi)
    dA = phi * (dphi - (dphi * phi).sum(axis=1, keepdims=True))
    grad = (dA.T @ patches).reshape(-1)
    return FrameTerms(U, grad, phi, p)


def potential_U(q, C, g, lambda_C, shape: FilterShape) -> float:
    """``1/2 sum_i <Phi_i>_g^2 - lambda_C/2 sum_i <Phi_i^2>_g``."""
    data = getattr(C, "data", C)
    return frame_terms(q, patch_matrix(data, shape.k), g, shape.n, lambda_C, need_grad=False).U


def grad_U(q, C, g, lambda_C, shape: FilterShape) -> np.ndarray:
    data = getattr(C, "data", C)
    return frame_terms(q, patch_matrix(data, shape.k), g, shape.n, lambda_C).grad


# ---------------------------------------------------------------------------
# evaluation metric


def _entropy(P, axis=-1):
    P = np.asarray(P, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(P > 0, P * np.log(np.where(P > 0, P, 1.0)), 0.0)
    return -terms.sum(axis=axis)


def _as_pixel_rows(phi):
    phi = np.asarray(phi, dtype=np.float64)
    if phi.ndim == 3:  # (n, H, W)
        return phi.reshape(phi.shape[0], -1).T
    return phi


def mi_index(phis, g) -> float:
    """Normalized Shannon mutual information between pixels and feature symbols.

    ``phis`` is a sequence of per-frame features, each ``(n, H, W)`` or
    ``(H*W, n)``. Returns ``[H(pbar) - mean H(Phi(x))] / log n``, averaged
    with weights ``g`` over pixels and uniformly over frames.
    """
    w = _weights(g)
    pbar = None
    cond = 0.0
    count = 0
    for phi in phis:
        rows = _as_pixel_rows(phi)
        p = w @ rows
        pbar = p if pbar is None else pbar + p
        cond += float(w @ _entropy(rows, axis=1))
        count += 1
    if count == 0:
        raise ValueError("mi_index needs at least one frame")
    n = pbar.size
    if n < 2:
        return 0.0
    pbar = pbar / count
    mi = (_entropy(pbar) - cond / count) / math.log(n)
    # Jensen gives mi >= 0 exactly; clamp round-off.
    return float(max(mi, 0.0))


# ---------------------------------------------------------------------------
# causal symbol-probability estimators


@dataclass(frozen=True)
class CausalEstimator:
    """Running estimates ``s_i`` of the symbol probabilities."""

    s: np.ndarray
    alpha: float = 1.0
    t: float = 0.0
    history: tuple = field(default=(), repr=False)

    @classmethod
    def start(cls, n, alpha=1.0):
        z = np.zeros(n)
        return cls(z, alpha, 0.0, (z,))


def decaying_weight(t, rate):
    """Integrable time weight ``rate * exp(-rate t)`` with unit total mass on [0, inf)."""
    return rate * math.exp(-rate * t)


def causal_update(est: CausalEstimator, phi, g, dt, weight) -> CausalEstimator:
    """One Euler step of ``ds/dt = weight(t) <Phi>_g``.

    ``weight`` is a number or a callable of time.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    w_t = weight(est.t) if callable(weight) else float(weight)
    p = _weights(g) @ _as_pixel_rows(phi)
    s = est.s + dt * w_t * p
    return replace(est, s=s, t=est.t + dt, history=est.history + (s,))


def constraint_residual(est: CausalEstimator, phi, g, weight) -> float:
    """``alpha * sum_i (sdot_i - w(t) <Phi_i>)^2`` for the most recent step."""
    if len(est.history) < 2:
        return 0.0
    dt = est.t / (len(est.history) - 1)
    sdot = (est.history[-1] - est.history[-2]) / dt
    w_t = weight(est.t - dt) if callable(weight) else float(weight)
    r = sdot - w_t * (_weights(g) @ _as_pixel_rows(phi))
    return est.alpha * float(r @ r)


def consistency_gap(history, dt, T=None, p=None) -> float:
    """``sum_i |p_i^2 - (1/T) int_0^T s_i^2 dt|`` from a sampled trajectory.

    ``history`` holds ``s`` at times ``0, dt, 2 dt, ...``. ``T`` defaults to
    the full span; ``p`` defaults to ``s(T)``.
    """
    S = np.asarray(history, dtype=np.float64)
    if S.ndim == 1:
        S = S[:, None]
    steps = S.shape[0] - 1 if T is None else int(round(T / dt))
    if steps < 1 or steps >= S.shape[0]:
        raise ValueError("T must cover at least one and at most all recorded steps")
    S = S[: steps + 1]
    span = steps * dt
    mean_sq = trapezoid(S * S, dx=dt, axis=0) / span
    p = S[-1] if p is None else np.asarray(p, dtype=np.float64)
    return float(np.abs(p * p - mean_sq).sum())

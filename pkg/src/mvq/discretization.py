"""Patch vectors, motion matrices and the block-diagonal lift.

Conventions
-----------
A filter bank ``phi`` has shape ``(n, m, k, k)``; its vectorization ``q`` is
``phi.reshape(-1)`` (feature-major, then channel, then offset row-major).
The patch vector of pixel ``x`` has entry ``(j, a, b) = C_j(x - (a, b))``
with zero padding, so that the activation of feature ``i`` at ``x`` is
``dot(chi_i, gamma_x)`` with ``chi_i = phi[i].reshape(-1)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _backend


@dataclass(frozen=True)
class FilterShape:
    """Dimensions of a filter bank: ``n`` features, ``m`` channels, ``k x k`` support."""

    n: int
    m: int
    k: int

    @property
    def block(self) -> int:
        return self.m * self.k * self.k

    @property
    def size(self) -> int:
        return self.n * self.block


def pack(phi: np.ndarray) -> np.ndarray:
    phi = np.asarray(phi, dtype=np.float64)
    if phi.ndim != 4 or phi.shape[2] != phi.shape[3]:
        raise ValueError(f"filter bank must be (n, m, k, k), got {phi.shape}")
    return phi.reshape(-1).copy()


def unpack(q: np.ndarray, shape: FilterShape) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    if q.size != shape.size:
        raise ValueError(f"q has {q.size} entries, expected n*m*k^2 = {shape.size}")
    return q.reshape(shape.n, shape.m, shape.k, shape.k).copy()


def patch_vector(data: np.ndarray, x, k: int) -> np.ndarray:
    """Patch vector of pixel ``x = (row, col)`` for a field of shape ``(m, H, W)``."""
    data = np.asarray(data, dtype=np.float64)
    m, H, W = data.shape
    r, c = x
    out = np.zeros((m, k, k))
    for a in range(k):
        for b in range(k):
            rr, cc = r - a, c - b
            if 0 <= rr < H and 0 <= cc < W:
                out[:, a, b] = data[:, rr, cc]
    return out.reshape(-1)


def patch_matrix(data: np.ndarray, k: int) -> np.ndarray:
    """All patch vectors as rows, pixels in row-major order: ``(H*W, m*k*k)``."""
    data = np.asarray(data, dtype=np.float64)
    if data.ndim != 3:
        raise ValueError("field data must be (m, H, W)")
    return _backend.patch_matrix(data, int(k))


@dataclass(frozen=True, eq=False)
class MotionMatrices:
    """Per-frame blocks of size ``m*k*k`` and their finite-difference rates."""

    M: np.ndarray
    N: np.ndarray
    O: np.ndarray
    Mdot: np.ndarray
    Ndot: np.ndarray

    @classmethod
    def zeros(cls, block: int):
        z = np.zeros((block, block))
        return cls(z, z, z, z, z)

    def with_rates(self, Mdot, Ndot):
        return MotionMatrices(self.M, self.N, self.O, Mdot, Ndot)


def _weighted_products(gamma, D, g):
    gw = gamma * g[:, None]
    M = gamma.T @ gw
    N = D.T @ gw
    O = D.T @ (D * g[:, None])
    # Exact symmetry; the products above are symmetric only to round-off.
    M = 0.5 * (M + M.T)
    O = 0.5 * (O + O.T)
    return M, N, O


def assemble_motion_matrices(C, cdot, adv, g, k, patches=None) -> MotionMatrices:
    """Build ``M = sum g gamma gamma^T``, ``N = sum g D gamma^T``, ``O = sum g D D^T``.

    ``D`` is the patch vector of ``cdot + adv``. All field arguments are arrays
    of shape ``(m, H, W)`` (ColorField data is accepted too); ``g`` is an
    AttentionMap or an ``(H, W)`` weight array. Rates are zero; use
    :func:`rate_matrices` to fill them. ``patches`` may pass a precomputed
    patch matrix of ``C``.
    """
    C = getattr(C, "data", C)
    cdot = np.asarray(cdot, dtype=np.float64)
    adv = np.asarray(adv, dtype=np.float64)
    if not (np.shape(C) == cdot.shape == adv.shape):
        raise ValueError("C, cdot and adv must share dimensions")
    weights = getattr(g, "weights", g)
    if np.shape(weights) != np.shape(C)[1:]:
        raise ValueError("attention map dimensions differ from the field")
    gamma = patch_matrix(C, k) if patches is None else patches
    D = patch_matrix(cdot + adv, k)
    M, N, O = _weighted_products(gamma, D, np.asarray(weights).reshape(-1))
    z = np.zeros_like(M)
    return MotionMatrices(M, N, O, z, z)


def rate_matrices(prev: MotionMatrices | None, cur: MotionMatrices, dt: float):
    """Finite-difference rates ``(Mdot, Ndot)``; zero when there is no previous frame."""
    if prev is None:
        z = np.zeros_like(cur.M)
        return z, z.copy()
    if dt <= 0:
        raise ValueError("dt must be positive")
    return (cur.M - prev.M) / dt, (cur.N - prev.N) / dt


def lift_apply(block: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Apply ``block`` to each of the per-feature segments of ``v``.

    Equivalent to ``kron(I_n, block) @ v`` without forming the Kronecker product.
    """
    block = np.asarray(block)
    d = block.shape[0]
    if block.shape != (d, d) or v.size % d:
        raise ValueError(f"cannot lift a {block.shape} block onto a vector of size {v.size}")
    return (v.reshape(-1, d) @ block.T).reshape(-1)


def lift_quadratic(block: np.ndarray, u: np.ndarray, v: np.ndarray) -> float:
    """``u . lift(block) v``."""
    return float(u @ lift_apply(block, v))

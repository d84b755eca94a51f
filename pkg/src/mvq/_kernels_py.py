"""Pure-numpy implementations of the hot kernels.

These are the reference versions; the compiled module ``mvq._ckernels``
must agree with them to round-off.
"""

import numpy as np


def patch_matrix(data, k):
    """Stack the k x k causal patches of every pixel as rows.

    Row ``r * W + c`` holds, channel-major then offset row-major, the values
    ``data[j, r - a, c - b]`` for ``a, b in range(k)``; reads outside the
    grid are zero.
    """
    data = np.ascontiguousarray(data, dtype=np.float64)
    m, H, W = data.shape
    padded = np.zeros((m, H + k - 1, W + k - 1))
    padded[:, k - 1:, k - 1:] = data
    out = np.empty((H, W, m, k, k))
    for a in range(k):
        for b in range(k):
            out[:, :, :, a, b] = padded[:, k - 1 - a:k - 1 - a + H,
                                        k - 1 - b:k - 1 - b + W].transpose(1, 2, 0)
    return out.reshape(H * W, m * k * k)


def _neighbour_mean(u):
    # Horn-Schunck Laplacian weights: 1/6 edge neighbours, 1/12 diagonals,
    # replicate padding at the border.
    p = np.pad(u, 1, mode="edge")
    edge = p[:-2, 1:-1] + p[2:, 1:-1] + p[1:-1, :-2] + p[1:-1, 2:]
    diag = p[:-2, :-2] + p[:-2, 2:] + p[2:, :-2] + p[2:, 2:]
    return edge / 6.0 + diag / 12.0


def hs_iterate(Ix, Iy, It, alpha2, iterations):
    """Jacobi sweeps of the Horn-Schunck update from a zero initial flow."""
    Ix = np.asarray(Ix, dtype=np.float64)
    Iy = np.asarray(Iy, dtype=np.float64)
    It = np.asarray(It, dtype=np.float64)
    u = np.zeros_like(Ix)
    v = np.zeros_like(Ix)
    denom = alpha2 + Ix * Ix + Iy * Iy
    for _ in range(iterations):
        ub = _neighbour_mean(u)
        vb = _neighbour_mean(v)
        t = (Ix * ub + Iy * vb + It) / denom
        u = ub - Ix * t
        v = vb - Iy * t
    return u, v

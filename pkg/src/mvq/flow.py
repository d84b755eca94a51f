"""Dense optical flow and the temporal / advective derivative fields.

Flow vectors are stored as ``(2, H, W)`` arrays in pixels per second:
component 0 is the velocity along columns (x), component 1 along rows (y).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _backend
from ._binio import FormatError, check_payload, pack_header, read_header
from .signal import ColorField

FLOW_MAGIC = b"MVF1"


@dataclass(frozen=True, eq=False)
class FlowField:
    vectors: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=np.float64)
        if v.ndim != 3 or v.shape[0] != 2:
            raise ValueError(f"flow vectors must have shape (2, H, W), got {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("flow vectors must be finite")
        object.__setattr__(self, "vectors", v)

    @property
    def height(self) -> int:
        return self.vectors.shape[1]

    @property
    def width(self) -> int:
        return self.vectors.shape[2]

    @classmethod
    def zeros(cls, width, height):
        return cls(np.zeros((2, height, width)))

    @classmethod
    def uniform(cls, width, height, vx, vy):
        v = np.empty((2, height, width))
        v[0] = vx
        v[1] = vy
        return cls(v)


def _check_same(a: ColorField, b: ColorField):
    if a.shape != b.shape:
        raise ValueError(f"frame dimensions differ: {a.shape} vs {b.shape}")


def horn_schunck(prev: ColorField, next: ColorField, smoothness=0.1, iterations=50, dt=1.0 / 25):
    """Horn-Schunck flow between two frames by Jacobi iteration from zero.

    Multi-channel frames are reduced to their channel mean. Spatial gradients
    are central differences of the two-frame average; the temporal gradient is
    the frame difference. The result is converted from pixels/frame to
    pixels/second by dividing by ``dt``.
    """
    _check_same(prev, next)
    if smoothness <= 0:
        raise ValueError("smoothness must be positive")
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    a = prev.data.mean(axis=0)
    b = next.data.mean(axis=0)
    avg = 0.5 * (a + b)
    Iy, Ix = _gradient(avg)
    It = b - a
    u, v = _backend.hs_iterate(Ix, Iy, It, float(smoothness) ** 2, int(iterations))
    return FlowField(np.stack([u, v]) / dt)


def _gradient(img):
    """(d/drow, d/dcol): central differences, one-sided at borders."""
    gr = np.gradient(img, axis=0) if img.shape[0] > 1 else np.zeros_like(img)
    gc = np.gradient(img, axis=1) if img.shape[1] > 1 else np.zeros_like(img)
    return gr, gc


def material_derivative(prev: ColorField, cur: ColorField, flow: FlowField, dt: float):
    """Return ``(cdot, adv)``, each of shape ``(m, H, W)``.

    ``cdot = (cur - prev) / dt`` and ``adv = v1 dC/dx + v2 dC/dy`` evaluated on
    ``cur`` with central differences (one-sided at the borders).
    """
    _check_same(prev, cur)
    if dt <= 0:
        raise ValueError("dt must be positive")
    if (flow.height, flow.width) != (cur.height, cur.width):
        raise ValueError("flow dimensions differ from frame dimensions")
    cdot = (cur.data - prev.data) / dt
    adv = np.empty_like(cur.data)
    for j in range(cur.channels):
        gr, gc = _gradient(cur.data[j])
        adv[j] = flow.vectors[0] * gc + flow.vectors[1] * gr
    return cdot, adv


# ---------------------------------------------------------------------------
# flow files


def write_flow_file(path, flows) -> None:
    """``MVF1`` + u32 W, H, F + f32 (v1, v2) pairs per pixel, row-major, per frame."""
    flows = list(flows)
    if not flows:
        raise ValueError("cannot write an empty flow file")
    H, W = flows[0].height, flows[0].width
    payload = np.stack([f.vectors.transpose(1, 2, 0) for f in flows]).astype("<f4")
    with open(path, "wb") as fh:
        fh.write(pack_header(FLOW_MAGIC, W, H, len(flows)))
        fh.write(payload.tobytes(order="C"))


def load_flow_file(path):
    buf = Path(path).read_bytes()
    (W, H, F), offset = read_header(buf, FLOW_MAGIC, 3, "flow")
    if F == 0 or W == 0 or H == 0:
        raise FormatError(f"flow: degenerate header W={W} H={H} F={F}", len(FLOW_MAGIC))
    check_payload(buf, offset, F * H * W * 2 * 4, "flow")
    arr = np.frombuffer(buf, dtype="<f4", offset=offset).reshape(F, H, W, 2)
    bad = ~np.isfinite(arr)
    if bad.any():
        f, r, c, comp = np.argwhere(bad)[0]
        raise FormatError(
            f"flow: non-finite value in frame {f}, pixel (row={r}, col={c}), component {comp}",
            offset + int(((f * H + r) * W + c) * 2 + comp) * 4,
        )
    return [FlowField(arr[i].transpose(2, 0, 1).astype(np.float64)) for i in range(F)]

"""Frame ingestion, synthesis, progressive de-blurring and attention maps."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from ._binio import FormatError, check_payload, pack_header, read_header

VIDEO_MAGIC = b"MVQ1"

# Default blur scale in pixels; the std of the blur at tau = 0.
DEFAULT_DELTA = 9.0


@dataclass(frozen=True, eq=False)
class ColorField:
    """Pixel intensities of one frame, shape ``(channels, height, width)``."""

    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ValueError(f"ColorField data must be (m, H, W) with m, H, W >= 1, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("ColorField intensities must be finite")
        if data.min() < 0.0 or data.max() > 1.0:
            raise ValueError(
                f"ColorField intensities must lie in [0, 1], got [{data.min()}, {data.max()}]"
            )
        object.__setattr__(self, "data", data)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self):
        return self.data.shape


@dataclass(frozen=True, eq=False)
class AttentionMap:
    """Probability weights ``g_x`` over the retina, shape ``(height, width)``."""

    weights: np.ndarray

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 2:
            raise ValueError("attention weights must be 2-D (H, W)")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("attention weights must be finite and nonnegative")
        if abs(w.sum() - 1.0) > 1e-9:
            raise ValueError(f"attention weights must sum to 1, got {w.sum()!r}")
        object.__setattr__(self, "weights", w)

    @property
    def flat(self) -> np.ndarray:
        return self.weights.reshape(-1)


@dataclass(frozen=True)
class BlurSchedule:
    """Detail level ``tau`` in [0, 1] with its update rate and blur scale."""

    tau: float = 0.0
    eta: float = 0.0005
    delta: float = DEFAULT_DELTA

    @property
    def sigma(self) -> float:
        return (1.0 - self.tau) * self.delta


def uniform_attention(width: int, height: int) -> AttentionMap:
    if width * height < 1:
        raise ValueError("retina must contain at least one pixel")
    return AttentionMap(np.full((height, width), 1.0 / (width * height)))


def point_attention(width: int, height: int, row: int, col: int) -> AttentionMap:
    """All attention on the single pixel ``(row, col)``."""
    w = np.zeros((height, width))
    w[row, col] = 1.0
    return AttentionMap(w)


def advance_tau(schedule: BlurSchedule) -> BlurSchedule:
    tau = schedule.tau + schedule.eta * (1.0 - schedule.tau)
    return replace(schedule, tau=min(tau, 1.0))


def gaussian_blur(data: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur of each channel, truncated at 3 sigma, edges replicated."""
    if sigma <= 1e-12:
        return np.array(data, dtype=np.float64, copy=True)
    return ndimage.gaussian_filter(
        np.asarray(data, dtype=np.float64), sigma=(0.0, sigma, sigma), mode="nearest", truncate=3.0
    )


def blur_frame(raw: ColorField, schedule: BlurSchedule) -> ColorField:
    """``tau * (G_{(1 - tau) delta} * raw)``."""
    tau = schedule.tau
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must be in [0, 1], got {tau}")
    if tau == 1.0:
        return raw
    if tau == 0.0:
        return ColorField(np.zeros_like(raw.data))
    out = tau * gaussian_blur(raw.data, schedule.sigma)
    # Round-off can push a blurred 1.0 a hair above 1.
    return ColorField(np.clip(out, 0.0, 1.0))


def to_grayscale(frame: ColorField) -> ColorField:
    """Luminance as the plain channel average."""
    return ColorField(frame.data.mean(axis=0, keepdims=True))


# ---------------------------------------------------------------------------
# raw video files


def write_raw_video(path, frames) -> None:
    """Write frames as ``MVQ1`` + u32 W, H, m, F + u8 payload."""
    frames = list(frames)
    if not frames:
        raise ValueError("cannot write an empty video")
    m, H, W = frames[0].shape
    for f in frames:
        if f.shape != (m, H, W):
            raise ValueError("all frames must share dimensions")
    payload = np.stack([np.rint(f.data * 255.0) for f in frames]).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(pack_header(VIDEO_MAGIC, W, H, m, len(frames)))
        fh.write(payload.tobytes(order="C"))


def load_raw_video(path, expect_width=None, expect_height=None, expect_channels=None):
    """Decode an ``MVQ1`` file into a list of ColorFields (bytes / 255)."""
    buf = Path(path).read_bytes()
    (W, H, m, F), offset = read_header(buf, VIDEO_MAGIC, 4, "video")
    if F == 0:
        raise FormatError("video: zero frame count", len(VIDEO_MAGIC) + 12)
    if W == 0 or H == 0 or m == 0:
        raise FormatError(f"video: degenerate dimensions W={W} H={H} m={m}", len(VIDEO_MAGIC))
    for name, want, got in (("width", expect_width, W), ("height", expect_height, H),
                            ("channels", expect_channels, m)):
        if want is not None and want != got:
            raise FormatError(f"video: {name} is {got}, expected {want}", len(VIDEO_MAGIC))
    check_payload(buf, offset, F * m * H * W, "video")
    raw = np.frombuffer(buf, dtype=np.uint8, offset=offset).reshape(F, m, H, W)
    scaled = raw.astype(np.float64) / 255.0
    return [ColorField(scaled[i]) for i in range(F)]


# ---------------------------------------------------------------------------
# synthetic video


def smooth_texture(rng, width, height, channels=1, correlation=4.0):
    """Periodic Gaussian-correlated noise rescaled to [0, 1] per channel."""
    noise = rng.standard_normal((channels, height, width))
    ky = np.fft.fftfreq(height)[:, None]
    kx = np.fft.fftfreq(width)[None, :]
    lowpass = np.exp(-2.0 * (math.pi * correlation) ** 2 * (kx ** 2 + ky ** 2))
    tex = np.real(np.fft.ifft2(np.fft.fft2(noise, axes=(1, 2)) * lowpass, axes=(1, 2)))
    lo = tex.min(axis=(1, 2), keepdims=True)
    hi = tex.max(axis=(1, 2), keepdims=True)
    return (tex - lo) / np.where(hi > lo, hi - lo, 1.0)


def synth_translating_texture(seed, velocity, frames, width, height, channels=1, correlation=4.0):
    """Frames of a periodic texture translating by ``velocity`` = (vx, vy) px/frame.

    Frame ``t`` is frame 0 cyclically shifted by ``round(t * v)``; x runs
    along columns, y along rows.
    """
    rng = np.random.default_rng(seed)
    base = smooth_texture(rng, width, height, channels, correlation)
    vx, vy = velocity
    out = []
    for t in range(frames):
        shift = (int(round(t * vy)), int(round(t * vx)))
        out.append(ColorField(np.roll(base, shift, axis=(1, 2))))
    return out

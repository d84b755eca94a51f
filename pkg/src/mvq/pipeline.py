"""Online training per layer, layer stacking, metrics logs and feature export."""

from __future__ import annotations

import csv
import json
import os
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from ._binio import FormatError, check_payload, pack_header, read_header
from .discretization import FilterShape, assemble_motion_matrices, lift_quadratic, patch_matrix, rate_matrices
from .dynamics import (
    DynamicsParams,
    FilterState,
    dissipation_weight,
    el_fourth_derivative,
    euler_step,
    reset_apply,
    reset_check,
    reset_thresholds,
)
from .flow import FlowField, horn_schunck, material_derivative
from .potential import features, frame_terms, mi_index
from .presets import LAMBDA_M_GRID, PRESETS
from .signal import BlurSchedule, ColorField, DEFAULT_DELTA, advance_tau, blur_frame, uniform_attention

FEATURE_MAGIC = b"MVQF"
CONFIG_VERSION = 1


class DivergenceError(RuntimeError):
    """The filter state stopped being finite."""


@dataclass(frozen=True)
class LayerConfig:
    n: int = 5
    k: int = 5
    lambda_M: float = 0.0
    activation_frames: int = 45000
    params: DynamicsParams = field(default_factory=lambda: PRESETS["stable-real"])
    eta: float = 0.0005
    delta: float = DEFAULT_DELTA
    seed: int = 0
    init_scale: float = 0.1

    def __post_init__(self):
        if self.n < 1 or self.k < 1:
            raise ValueError("n and k must be >= 1")
        if self.k % 2 == 0:
            raise ValueError("k must be odd so patches are centred")
        if self.lambda_M < 0:
            raise ValueError("lambda_M must be >= 0")
        if self.activation_frames < 1:
            raise ValueError("activation_frames must be >= 1")

    def dynamics(self) -> DynamicsParams:
        """Parameters with this layer's ``lambda_M`` and thresholds ``300 n``."""
        eps = self.params.eps
        if eps == DynamicsParams().eps:
            eps = reset_thresholds(self.n)
        return replace(self.params, lambda_M=self.lambda_M, eps=eps)


@dataclass(frozen=True)
class MetricsRow:
    t: float
    frame: int
    mi_frame: float
    U: float
    kinetic: float
    motion: float
    action: float
    q_norm: float
    reset_flag: int
    resets_per_1000: float
    tau: float


METRIC_FIELDS = [f.name for f in fields(MetricsRow)]


def write_metrics(path, rows, append=True) -> None:
    """Append rows to a CSV file, writing the header when the file is new."""
    path = Path(path)
    new = not path.exists() or not append
    with open(path, "a" if append else "w", newline="") as fh:
        w = csv.writer(fh)
        if new:
            w.writerow(METRIC_FIELDS)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in asdict(r).values()])


def read_metrics(path):
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != METRIC_FIELDS:
            raise ValueError(f"metrics header {reader.fieldnames} does not match {METRIC_FIELDS}")
        for d in reader:
            rows.append(MetricsRow(**{
                f.name: (int(d[f.name]) if f.type in ("int", int) else float(d[f.name]))
                for f in fields(MetricsRow)
            }))
    return rows


# ---------------------------------------------------------------------------
# frame and flow sources


def _frame_at(frames, i):
    """Frames loop when the clip is shorter than the run."""
    if not frames:
        raise ValueError("frame source is empty")
    return frames[i % len(frames)]


def lower_features(states, shapes, frame: ColorField) -> ColorField:
    """Pass a frame through frozen layers, each layer's features feeding the next."""
    x = frame
    for q, shape in zip(states, shapes):
        x = ColorField(features(q, x, shape))
    return x


class _Flow:
    """Flow per step: a fixed list (looped), zero, or Horn-Schunck on the presented frames."""

    def __init__(self, source, smoothness=0.1, iterations=50, dt=1.0 / 25):
        if not (source in ("internal", "zero") or isinstance(source, (list, tuple))):
            raise ValueError("flow source must be 'internal', 'zero' or a list of FlowField")
        self.source, self.smoothness, self.iterations, self.dt = source, smoothness, iterations, dt

    def __call__(self, i, prev: ColorField, cur: ColorField) -> FlowField:
        if self.source == "zero":
            return FlowField.zeros(cur.width, cur.height)
        if self.source == "internal":
            return horn_schunck(prev, cur, self.smoothness, self.iterations, self.dt)
        return self.source[i % len(self.source)]


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    state: FilterState
    metrics: list
    resets: int
    config: LayerConfig


def _kinetic(state, p: DynamicsParams) -> float:
    q, q1, q2 = state.q, state.q1, state.q2
    return 0.5 * (p.mu * float(q2 @ q2) + p.nu * float(q1 @ q1) + p.k * float(q @ q)) + p.gamma * float(q1 @ q2)


def _motion(state, mats, lam) -> float:
    if lam == 0.0 or mats is None:
        return 0.0
    q, q1 = state.q, state.q1
    return lam * (0.5 * lift_quadratic(mats.M, q1, q1) + lift_quadratic(mats.N, q, q1)
                  + 0.5 * lift_quadratic(mats.O, q, q))


def _check_finite(state: FilterState, frame: int):
    for name, v in zip(("q", "q1", "q2", "q3"), (state.q, state.q1, state.q2, state.q3)):
        bad = ~np.isfinite(v)
        if bad.any():
            raise DivergenceError(
                f"non-finite {name} at frame {frame} (t={state.t:.3f}s), "
                f"first bad index {int(np.argmax(bad))}; lower dt or pick a stable preset"
            )


def initial_state(config: LayerConfig, m: int) -> FilterState:
    shape = FilterShape(config.n, m, config.k)
    return FilterState.random(shape.size, config.seed, config.init_scale)


def train_layer(config: LayerConfig, frames, num_frames: int, flow="internal", lower=(), start=0,
                state: FilterState | None = None, metrics_path=None, hs_smoothness=0.1,
                hs_iterations=50) -> TrainResult:
    """Train one layer online for ``num_frames`` frames of a looped clip.

    ``frames`` is a sequence of raw :class:`ColorField`; ``lower`` a sequence
    of ``(q, FilterShape)`` for frozen layers whose features form this
    layer's input. ``start`` is the index of the first frame presented.
    ``flow`` is ``"internal"`` (Horn-Schunck on the presented raw frames),
    ``"zero"`` or a list of flows aligned with ``frames``; flow ``i`` maps
    frame ``i - 1`` to frame ``i``.
    """
    if num_frames < 0:
        raise ValueError("num_frames must be >= 0")
    first = _frame_at(frames, start)
    lower = tuple(lower)
    m = lower[-1][1].n if lower else first.channels
    shape = FilterShape(config.n, m, config.k)
    p = config.dynamics()
    if state is None:
        state = initial_state(config, m)
    elif state.q.size != shape.size:
        raise ValueError(f"state has {state.q.size} entries, layer expects {shape.size}")
    g = uniform_attention(first.width, first.height)
    flows = _Flow(flow, hs_smoothness, hs_iterations, p.dt)
    schedule = BlurSchedule(0.0, config.eta, config.delta)
    lower_q = [q for q, _ in lower]
    lower_shapes = [s for _, s in lower]

    rows = []
    window = deque()
    resets = 0
    action = 0.0
    prev_raw = prev_in = prev_mats = None
    for step in range(num_frames):
        i = start + step
        raw = blur_frame(_frame_at(frames, i), schedule)
        C = lower_features(lower_q, lower_shapes, raw) if lower else raw
        patches = patch_matrix(C.data, config.k)
        mats = None
        if p.lambda_M != 0.0:
            if prev_in is None:
                z = np.zeros_like(C.data)
                mats = assemble_motion_matrices(C, z, z, g, config.k, patches)
            else:
                cdot, adv = material_derivative(prev_in, C, flows(i, prev_raw, raw), p.dt)
                mats = assemble_motion_matrices(C, cdot, adv, g, config.k, patches)
            mats = mats.with_rates(*rate_matrices(prev_mats, mats, p.dt))
        terms = frame_terms(state.q, patches, g, config.n, p.lambda_C)
        q4 = el_fourth_derivative(state, p, mats, terms.grad)
        kinetic = _kinetic(state, p)
        motion = _motion(state, mats, p.lambda_M)
        tw, _ = dissipation_weight(state.t, p.theta, p.T)
        action += p.dt * tw * (kinetic + motion + terms.U)
        state = euler_step(state, q4, p.dt)
        _check_finite(state, i)
        flag = reset_check(state, p.eps)
        if flag:
            # Nulling the signal zeroes tau; the schedule restarts next frame.
            state, schedule = reset_apply(state, schedule)
            resets += 1
        window.append(flag)
        if len(window) > 1000:
            window.popleft()
        rows.append(MetricsRow(
            t=state.t, frame=i, mi_frame=mi_index([terms.phi], g), U=terms.U,
            kinetic=kinetic, motion=motion, action=action,
            q_norm=float(np.linalg.norm(state.q)), reset_flag=int(flag),
            resets_per_1000=1000.0 * sum(window) / len(window), tau=schedule.tau,
        ))
        if not flag:
            schedule = advance_tau(schedule)
        prev_raw, prev_in, prev_mats = raw, C, mats
    if metrics_path is not None:
        write_metrics(metrics_path, rows)
    return TrainResult(state, rows, resets, config)


def batch_mi(layers, frames) -> float:
    """MI of the top layer over one pass of unblurred frames with every layer frozen.

    ``layers`` is a sequence of ``(q, FilterShape)`` from bottom to top.
    """
    layers = list(layers)
    if not layers:
        raise ValueError("need at least one layer")
    qs = [q for q, _ in layers]
    shapes = [s for _, s in layers]
    phis = []
    g = None
    for frame in frames:
        below = lower_features(qs[:-1], shapes[:-1], frame)
        phis.append(features(qs[-1], below, shapes[-1]))
        if g is None:
            g = uniform_attention(frame.width, frame.height)
    return mi_index(phis, g)


# ---------------------------------------------------------------------------
# stacking


@dataclass
class MultiLayerResult:
    layers: list  # TrainResult per layer
    shapes: list
    lambda_scores: list  # per layer: {lambda_M: batch MI} when a sweep ran

    @property
    def frozen(self):
        return [(r.state.q, s) for r, s in zip(self.layers, self.shapes)]


def max_workers() -> int:
    """Worker cap from ``MVQ_THREADS`` (default: CPU count)."""
    env = os.environ.get("MVQ_THREADS")
    if env is None or env == "":
        return os.cpu_count() or 1
    try:
        n = int(env)
    except ValueError:
        raise ValueError(f"MVQ_THREADS must be a positive integer, got {env!r}") from None
    if n < 1:
        raise ValueError(f"MVQ_THREADS must be a positive integer, got {env!r}")
    return n


def _sweep_job(args):
    config, frames, flow, lower, start, hs = args
    res = train_layer(config, frames, config.activation_frames, flow, lower, start,
                      hs_smoothness=hs[0], hs_iterations=hs[1])
    shape = FilterShape(config.n, lower[-1][1].n if lower else frames[0].channels, config.k)
    return res, batch_mi(list(lower) + [(res.state.q, shape)], frames)


def run_multilayer(configs, frames, flow="internal", lambda_grid=None, out_dir=None,
                   hs_smoothness=0.1, hs_iterations=50) -> MultiLayerResult:
    """Train layers one after another; layer ``l`` starts when layer ``l-1`` stops.

    Each layer trains for its ``activation_frames`` on the looped clip and is
    frozen afterwards. With ``lambda_grid`` every layer is trained once per
    value (in separate processes, at most ``MVQ_THREADS``) and the value with
    the highest frozen batch MI is kept.
    """
    configs = list(configs)
    if not configs:
        raise ValueError("need at least one layer config")
    lower = []
    results, shapes, scores = [], [], []
    start = 0
    out = Path(out_dir) if out_dir is not None else None
    hs = (hs_smoothness, hs_iterations)
    for level, cfg in enumerate(configs):
        m = lower[-1][1].n if lower else frames[0].channels
        shape = FilterShape(cfg.n, m, cfg.k)
        if lambda_grid:
            jobs = [(replace(cfg, lambda_M=float(lam)), frames, flow, tuple(lower), start, hs)
                    for lam in lambda_grid]
            workers = min(max_workers(), len(jobs))
            if workers > 1:
                with ProcessPoolExecutor(max_workers=workers) as pool:
                    done = list(pool.map(_sweep_job, jobs))
            else:
                done = [_sweep_job(j) for j in jobs]
            score = {float(lam): mi for lam, (_, mi) in zip(lambda_grid, done)}
            # First grid value wins ties, so the choice is deterministic.
            best = max(range(len(done)), key=lambda j: (done[j][1], -j))
            res = done[best][0]
            scores.append(score)
        else:
            res = train_layer(cfg, frames, cfg.activation_frames, flow, tuple(lower), start,
                              hs_smoothness=hs_smoothness, hs_iterations=hs_iterations)
            scores.append({})
        if out is not None:
            write_metrics(out / f"metrics_layer{level + 1}.csv", res.metrics)
        results.append(res)
        shapes.append(shape)
        lower.append((res.state.q, shape))
        start += cfg.activation_frames
    return MultiLayerResult(results, shapes, scores)


# ---------------------------------------------------------------------------
# feature export


def export_features(path, layers, frames) -> np.ndarray:
    """Write per-pixel features of every layer, concatenated, as an ``MVQF`` file.

    Layout: magic, u32 W, H, total feature count, F, then f32 values ordered
    frame, row, column, feature. Returns the written array ``(F, H, W, total)``.
    """
    layers = list(layers)
    frames = list(frames)
    if not layers or not frames:
        raise ValueError("need at least one layer and one frame")
    H, W = frames[0].height, frames[0].width
    m = frames[0].channels
    for q, s in layers:
        if s.m != m:
            raise ValueError(f"layer expects {s.m} input channels, got {m}")
        if np.asarray(q).size != s.size:
            raise ValueError("filter vector size does not match its shape")
        m = s.n
    total = sum(s.n for _, s in layers)
    out = np.empty((len(frames), H, W, total), dtype=np.float32)
    for f, frame in enumerate(frames):
        if (frame.height, frame.width) != (H, W):
            raise ValueError("all frames must share dimensions")
        x, col = frame, 0
        for q, s in layers:
            phi = features(q, x, s)
            out[f, :, :, col:col + s.n] = np.moveaxis(phi, 0, -1)
            col += s.n
            x = ColorField(phi)
    with open(path, "wb") as fh:
        fh.write(pack_header(FEATURE_MAGIC, W, H, total, len(frames)))
        fh.write(out.astype("<f4").tobytes())
    return out


def read_features(path) -> np.ndarray:
    buf = Path(path).read_bytes()
    (W, H, total, F), offset = read_header(buf, FEATURE_MAGIC, 4, "feature file")
    if 0 in (W, H, total, F):
        raise FormatError("feature file: zero dimension in header", len(FEATURE_MAGIC))
    check_payload(buf, offset, 4 * W * H * total * F, "feature file")
    return np.frombuffer(buf, dtype="<f4", offset=offset).reshape(F, H, W, total).astype(np.float32)


# ---------------------------------------------------------------------------
# run configuration files

_TOP_KEYS = {"version", "layers", "flow", "frames", "hs_smoothness", "hs_iterations", "lambda_grid"}
_LAYER_KEYS = {"n", "k", "lambda_M", "activation_frames", "preset", "params", "eta", "delta", "seed",
               "init_scale"}
_PARAM_KEYS = {f.name for f in fields(DynamicsParams)} - {"lambda_M"}


@dataclass(frozen=True)
class RunConfig:
    layers: tuple
    flow: str = "internal"
    frames: int | None = None
    hs_smoothness: float = 0.1
    hs_iterations: int = 50
    lambda_grid: tuple | None = None


class ConfigError(ValueError):
    pass


def _reject_unknown(d, allowed, where):
    extra = sorted(set(d) - allowed)
    if extra:
        raise ConfigError(f"{where}: unknown key(s) {extra}; allowed {sorted(allowed)}")


def _layer_from_dict(d, where) -> LayerConfig:
    if not isinstance(d, dict):
        raise ConfigError(f"{where}: expected an object")
    _reject_unknown(d, _LAYER_KEYS, where)
    name = d.get("preset", "stable-real")
    if name not in PRESETS:
        raise ConfigError(f"{where}: unknown preset {name!r}; choose from {sorted(PRESETS)}")
    overrides = d.get("params", {})
    if not isinstance(overrides, dict):
        raise ConfigError(f"{where}.params: expected an object")
    _reject_unknown(overrides, _PARAM_KEYS, f"{where}.params")
    if "eps" in overrides:
        overrides = dict(overrides, eps=tuple(overrides["eps"]))
    kw = {k: v for k, v in d.items() if k not in ("preset", "params")}
    try:
        return LayerConfig(params=replace(PRESETS[name], **overrides), **kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def parse_config(d) -> RunConfig:
    if not isinstance(d, dict):
        raise ConfigError("config: expected a JSON object")
    _reject_unknown(d, _TOP_KEYS, "config")
    if d.get("version") != CONFIG_VERSION:
        raise ConfigError(f"config: version must be {CONFIG_VERSION}, got {d.get('version')!r}")
    layers = d.get("layers")
    if not isinstance(layers, list) or not layers:
        raise ConfigError("config: 'layers' must be a non-empty list")
    flow = d.get("flow", "internal")
    if flow not in ("internal", "zero") and not (isinstance(flow, str) and flow.startswith("file:")):
        raise ConfigError("config: flow must be 'internal', 'zero' or 'file:<path>'")
    grid = d.get("lambda_grid")
    if grid == "default":
        grid = LAMBDA_M_GRID
    return RunConfig(
        layers=tuple(_layer_from_dict(x, f"layers[{j}]") for j, x in enumerate(layers)),
        flow=flow,
        frames=d.get("frames"),
        hs_smoothness=float(d.get("hs_smoothness", 0.1)),
        hs_iterations=int(d.get("hs_iterations", 50)),
        lambda_grid=tuple(float(x) for x in grid) if grid else None,
    )


def load_config(path) -> RunConfig:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path}: invalid JSON ({exc})") from None
    return parse_config(d)


def config_to_dict(cfg: RunConfig) -> dict:
    """Inverse of :func:`parse_config`; parameters are written out in full."""
    layers = []
    for lc in cfg.layers:
        params = {k: v for k, v in asdict(lc.params).items() if k != "lambda_M"}
        params["eps"] = list(params["eps"])
        layers.append({
            "n": lc.n, "k": lc.k, "lambda_M": lc.lambda_M, "activation_frames": lc.activation_frames,
            "params": params, "eta": lc.eta, "delta": lc.delta, "seed": lc.seed,
            "init_scale": lc.init_scale,
        })
    d = {"version": CONFIG_VERSION, "layers": layers, "flow": cfg.flow,
         "hs_smoothness": cfg.hs_smoothness, "hs_iterations": cfg.hs_iterations}
    if cfg.frames is not None:
        d["frames"] = cfg.frames
    if cfg.lambda_grid:
        d["lambda_grid"] = list(cfg.lambda_grid)
    return d

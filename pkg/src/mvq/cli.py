"""Command-line entry point ``mvq``."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import _backend
from ._binio import FormatError
from .dynamics import DynamicsParams, load_checkpoint, save_checkpoint
from .flow import FlowField, load_flow_file, write_flow_file
from .mollifier import report_rows
from .pipeline import (
    ConfigError,
    DivergenceError,
    config_to_dict,
    export_features,
    load_config,
    run_multilayer,
    train_layer,
)
from .discretization import FilterShape
from .signal import load_raw_video, synth_translating_texture, write_raw_video
from .stability import classify, params_coeffs, prop_coef_check, quartic_roots


def _floats(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _flow_source(source, frames):
    if source in ("internal", "zero"):
        return source
    if source.startswith("file:"):
        flows = load_flow_file(source[5:])
        if (flows[0].height, flows[0].width) != (frames[0].height, frames[0].width):
            raise FormatError("flow file dimensions differ from the video")
        return flows
    raise ValueError(f"flow must be 'internal', 'zero' or 'file:<path>', got {source!r}")


def cmd_synth(a):
    frames = synth_translating_texture(a.seed, (a.vx, a.vy), a.frames, a.width, a.height,
                                       a.channels, a.correlation)
    write_raw_video(a.out, frames)
    if a.flow_out:
        # px/frame -> px/s at 25 frames per second
        write_flow_file(a.flow_out, [FlowField.uniform(a.width, a.height, a.vx / a.dt, a.vy / a.dt)]
                        * a.frames)
    print(f"wrote {a.frames} frames of {a.width}x{a.height}x{a.channels} to {a.out}")


def _prepare(a):
    cfg = load_config(a.config)
    frames = load_raw_video(a.video)
    flow = _flow_source(a.flow or cfg.flow, frames)
    out = Path(a.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(json.dumps(config_to_dict(cfg), indent=2))
    return cfg, frames, flow, out


def cmd_train(a):
    cfg, frames, flow, out = _prepare(a)
    layer = cfg.layers[0]
    num = a.frames if a.frames is not None else (cfg.frames or layer.activation_frames)
    res = train_layer(layer, frames, num, flow, metrics_path=out / "metrics.csv",
                      hs_smoothness=cfg.hs_smoothness, hs_iterations=cfg.hs_iterations)
    save_checkpoint(out / "layer1.mvqs", res.state, layer.n, frames[0].channels, layer.k)
    print(f"trained {num} frames, {res.resets} resets, |q| = {np.linalg.norm(res.state.q):.6g}")


def cmd_run_multilayer(a):
    cfg, frames, flow, out = _prepare(a)
    res = run_multilayer(cfg.layers, frames, flow, cfg.lambda_grid, out,
                         cfg.hs_smoothness, cfg.hs_iterations)
    for j, (r, s) in enumerate(zip(res.layers, res.shapes)):
        save_checkpoint(out / f"layer{j + 1}.mvqs", r.state, s.n, s.m, s.k)
        print(f"layer {j + 1}: lambda_M = {r.config.lambda_M:g}, {r.resets} resets")
    if cfg.lambda_grid:
        (out / "lambda_scores.json").write_text(json.dumps(
            [{str(k): v for k, v in s.items()} for s in res.lambda_scores], indent=2))


def cmd_analyze_stability(a):
    p = DynamicsParams(theta=a.theta, mu=a.mu, nu=a.nu, gamma1=a.gamma1, gamma2=a.gamma2, k=a.k)
    rep = quartic_roots(params_coeffs(p))
    check = prop_coef_check(a.theta, a.mu, a.nu, a.gamma1, a.gamma2, a.k)
    result = {
        "class": classify(p),
        "stable": rep.stable,
        "real": rep.real,
        "certified": check.certified,
        "conditions": check.conditions,
        "roots": [[float(z.real), float(z.imag)] for z in rep.roots],
    }
    if a.json:
        print(json.dumps(result, indent=2))
        return
    print(f"class: {result['class']}  certified: {check.certified}")
    for z in rep.roots:
        print(f"  root {z.real:+.6e} {z.imag:+.6e}i")
    for name, ok in check.conditions.items():
        print(f"  {'ok  ' if ok else 'FAIL'} {name}")


def cmd_mollifier_check(a):
    rows = []
    for m in a.m:
        rows.extend(report_rows(m, a.sigmas, a.delta))
    with open(a.out, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    for r in rows:
        print(f"m={r['order_m']} sigma={r['sigma']:g} mass={r['mass']:.12f} "
              f"tail={r['tail']:.3e} gap={r['gap']:.3e}")


def cmd_export_features(a):
    frames = load_raw_video(a.video)
    layers = []
    for path in a.checkpoints:
        state, (n, m, k) = load_checkpoint(path)
        layers.append((state.q, FilterShape(n, m, k)))
    out = export_features(a.out, layers, frames)
    print(f"wrote {out.shape[0]} frames x {out.shape[3]} features per pixel to {a.out}")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mvq", description="Motion-invariant online feature learning.")
    ap.add_argument("--backend-info", action="store_true", help="print the kernel backend and exit")
    sub = ap.add_subparsers(dest="command")

    s = sub.add_parser("synth", help="write a translating-texture video")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--vx", type=float, default=1.0, help="px/frame along columns")
    s.add_argument("--vy", type=float, default=0.0, help="px/frame along rows")
    s.add_argument("--frames", type=int, default=32)
    s.add_argument("--width", type=int, default=32)
    s.add_argument("--height", type=int, default=32)
    s.add_argument("--channels", type=int, default=1)
    s.add_argument("--correlation", type=float, default=4.0)
    s.add_argument("--dt", type=float, default=1.0 / 25)
    s.add_argument("--flow-out", help="also write the ground-truth flow (MVF1)")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    for name, func, hlp in (("train", cmd_train, "train the first configured layer"),
                            ("run-multilayer", cmd_run_multilayer, "train all configured layers")):
        t = sub.add_parser(name, help=hlp)
        t.add_argument("--config", required=True)
        t.add_argument("--video", required=True)
        t.add_argument("--out-dir", required=True)
        t.add_argument("--flow", help="internal | zero | file:<path>; overrides the config")
        if name == "train":
            t.add_argument("--frames", type=int, help="frames to train; overrides the config")
        t.set_defaults(func=func)

    st = sub.add_parser("analyze-stability", help="root class of the free dynamics")
    for name, default in (("theta", 1e-4), ("mu", 5.0), ("nu", 1.5e-8), ("gamma1", 1e-4),
                          ("gamma2", 2.0), ("k", 1e-18)):
        st.add_argument(f"--{name}", type=float, default=default)
    st.add_argument("--json", action="store_true")
    st.set_defaults(func=cmd_analyze_stability)

    mo = sub.add_parser("mollifier-check", help="mass, tail and convergence table of the mollifier")
    mo.add_argument("--m", type=lambda x: [int(v) for v in x.split(",")], default=[1])
    mo.add_argument("--sigmas", type=_floats, default=[1.0, 0.1, 0.01, 0.001])
    mo.add_argument("--delta", type=float, default=0.5)
    mo.add_argument("--out", required=True)
    mo.set_defaults(func=cmd_mollifier_check)

    ex = sub.add_parser("export-features", help="write per-pixel features of trained layers")
    ex.add_argument("--video", required=True)
    ex.add_argument("--checkpoints", nargs="+", required=True, help="layer checkpoints, bottom first")
    ex.add_argument("--out", required=True)
    ex.set_defaults(func=cmd_export_features)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    a = ap.parse_args(argv)
    if a.backend_info:
        print(_backend.BACKEND)
        return 0
    if a.command is None:
        ap.print_help()
        return 2
    try:
        a.func(a)
    except (FormatError, ConfigError, DivergenceError, ValueError, OSError) as exc:
        print(f"mvq {a.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

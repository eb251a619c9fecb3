"""Command-line entry point for scripted experiments and the ablation harness.

Every run resolves its configuration (config file first, flags override) and
writes a manifest.json capturing command, resolved config, seed, and library
versions, so any output can be reproduced from the manifest alone.
"""

from __future__ import annotations

import argparse
import json
import os
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .fused import bench_compare, bench_csv
from .imaging import Camera, metric_psnr, metric_ssim, read_png, write_pfm, write_png
from .model import (
    ModelConfig,
    checkpoint_load,
    checkpoint_save,
    memory_footprint,
    model_init,
)
from .render import ModelSource, RenderSettings, VolumeSource, render_image
from .service import SessionState, serve
from .train import (
    ScreenTrainConfig,
    TemporalTrainConfig,
    WorldTarget,
    WorldTrainConfig,
    evaluate_views,
    loss_csv,
    metrics_csv,
    train_screen,
    train_temporal,
    train_world,
)
from .transfer import TF_PRESETS, TransferFunction, tf_load
from .volume import synth_field, volume_read, volume_write


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _load_tf(spec: str | None) -> TransferFunction:
    if spec is None:
        return TF_PRESETS["grayscale"]
    if spec in TF_PRESETS:
        return TF_PRESETS[spec]
    return tf_load(spec)


def _write_manifest(out_dir: Path, command: str, config: dict, seed: int) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "versions": {
            "fvsrn": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
        },
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2))


def _merge_config(args, keys: dict) -> dict:
    """Config-file values first, explicit flags override."""
    config = {}
    if getattr(args, "config", None):
        config.update(json.loads(Path(args.config).read_text()))
    for key, attr in keys.items():
        value = getattr(args, attr, None)
        if value is not None:
            config[key] = value
    return config


def _model_config_from(config: dict, head: str) -> ModelConfig:
    return ModelConfig(
        head=head,
        layers=int(config.get("layers", 4)),
        hidden=int(config.get("channels", 32)),
        activation=config.get("activation", "snake_alt"),
        fourier_mode=config.get("fourier_mode", "nerf"),
        fourier_m=config.get("fourier_m"),
        fourier_sigma=float(config.get("fourier_sigma", 1.0)),
        grid_resolution=int(config.get("grid_r", 32)),
        grid_channels=int(config.get("grid_f", 16)),
        direction_mode=config.get("direction_mode", "pos"),
        time_mode=config.get("time_mode", "none"),
        keyframe_times=config.get("keyframe_times"),
        seed=int(config.get("seed", 0)),
    )


def _world_config_from(config: dict) -> WorldTrainConfig:
    return WorldTrainConfig(
        sample_count=int(config.get("samples", 64**3)),
        batch_size=int(config.get("batch", 16384)),
        epochs=int(config.get("epochs", 200)),
        lr=float(config.get("lr", 0.01)),
        seed=int(config.get("seed", 0)),
        adaptive=bool(config.get("adaptive", False)),
        resample_interval=int(config.get("resample_interval", 50)),
        error_grid_resolution=int(config.get("error_grid_res", 32)),
        samples_per_voxel=int(config.get("samples_per_voxel", 8)),
    )


def _parse_list(text: str) -> list[int]:
    if "=" in text:
        text = text.split("=", 1)[1]
    return [int(v) for v in text.split(",") if v.strip()]


def _add_common_train_flags(p):
    p.add_argument("--config", help="JSON config file; flags override its keys")
    p.add_argument("--epochs", type=int)
    p.add_argument("--samples", type=int)
    p.add_argument("--batch", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--layers", type=int)
    p.add_argument("--channels", type=int)
    p.add_argument("--grid-r", dest="grid_r", type=int)
    p.add_argument("--grid-f", dest="grid_f", type=int)
    p.add_argument("--fourier-m", dest="fourier_m", type=int)
    p.add_argument("--fourier-mode", dest="fourier_mode",
                   choices=["nerf", "random", "off"])
    p.add_argument("--activation")


def build_parser() -> _Parser:
    parser = _Parser(prog="fvsrn", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-synthetic", help="generate a synthetic volume")
    p.add_argument("--kind", required=True,
                   choices=["sphere", "gaussians", "marschner_lobb", "moving_blobs"])
    p.add_argument("--res", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--params", default="{}", help="JSON generator parameters")
    p.add_argument("--t", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dtype", choices=["u8", "f32"], default="f32")

    p = sub.add_parser("train-world", help="world-space training")
    p.add_argument("--volume", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--head", choices=["density", "color"], default="density")
    p.add_argument("--tf", help="transfer function preset name or JSON path")
    p.add_argument("--adaptive", action="store_true", default=None)
    _add_common_train_flags(p)

    p = sub.add_parser("train-screen", help="image-space training")
    p.add_argument("--volume", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tf")
    p.add_argument("--views", type=int)
    p.add_argument("--resolution", type=int)
    p.add_argument("--stepsize", type=float)
    p.add_argument("--direction-mode", dest="direction_mode",
                   choices=["pos", "dirP", "dirF"])
    _add_common_train_flags(p)

    p = sub.add_parser("train-temporal", help="temporal keyframe training")
    p.add_argument("--out", required=True)
    p.add_argument("--volumes", help="volume path template with {t}, e.g. v_{t}.vraw")
    p.add_argument("--synthetic", choices=["moving_blobs"],
                   help="generate the sequence instead of loading files")
    p.add_argument("--res", type=int, default=64)
    p.add_argument("--timesteps", type=int, default=21)
    p.add_argument("--keyframe-every", type=int, default=10)
    p.add_argument("--train-every", type=int, default=5)
    p.add_argument("--time-encoding", dest="time_mode", default="none",
                   choices=["none", "direct", "fourier", "both"])
    p.add_argument("--synth-params", default="{}")
    _add_common_train_flags(p)

    p = sub.add_parser("render", help="render a checkpoint or raw volume")
    p.add_argument("--model")
    p.add_argument("--volume")
    p.add_argument("--tf")
    p.add_argument("--out", required=True)
    p.add_argument("--eye", default="0.5,0.5,2.7")
    p.add_argument("--target", default="0.5,0.5,0.5")
    p.add_argument("--up", default="0,1,0")
    p.add_argument("--fov-deg", type=float, default=45.0)
    p.add_argument("--width", type=int, default=512)
    p.add_argument("--height", type=int, default=512)
    p.add_argument("--stepsize-voxels", type=float, default=1.0)
    p.add_argument("--native-res", type=int, default=64)
    p.add_argument("--t", type=float)
    p.add_argument("--pfm", action="store_true", help="also write a float PFM")
    p.add_argument("--threads", type=int,
                   default=int(os.environ.get("FVSRN_THREADS", "1")))
    p.add_argument("--fused", action="store_true")

    p = sub.add_parser("evaluate", help="orbit-view PSNR/SSIM against ground truth")
    p.add_argument("--model", required=True)
    p.add_argument("--volume", required=True)
    p.add_argument("--tf")
    p.add_argument("--views", type=int, default=64)
    p.add_argument("--resolution", type=int, default=512)
    p.add_argument("--stepsize-voxels", type=float, default=1.0)
    p.add_argument("--t", type=float)
    p.add_argument("--out", required=True)

    p = sub.add_parser("benchmark", help="naive vs fused evaluator throughput")
    p.add_argument("--model")
    p.add_argument("--batches", default="4096,16384,65536")
    p.add_argument("--runs", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("quantize", help="re-save a checkpoint with a u8 grid")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--weights", choices=["f16", "f32"], default="f32")

    p = sub.add_parser("metrics", help="PSNR (and SSIM for images) of two files")
    p.add_argument("a")
    p.add_argument("b")

    p = sub.add_parser("ablate", help="sweep grid/network shapes, CSV per config")
    p.add_argument("--volume", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--grid", default="R=8,16,32", help="grid resolutions, 0 = none")
    p.add_argument("--features", default="F=16")
    p.add_argument("--layers", default="l=4")
    p.add_argument("--channels", default="c=32")
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--samples", type=int, default=32**3)
    p.add_argument("--batch", type=int, default=8192)
    p.add_argument("--views", type=int, default=4)
    p.add_argument("--resolution", type=int, default=64)
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("serve", help="run the HTTP render service")
    p.add_argument("--model", required=True)
    p.add_argument("--tf")
    p.add_argument("--port", type=int, default=8077)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--native-res", type=int, default=64)
    p.add_argument("--ui", help="directory of static viewer assets")

    return parser


def _vec3(text: str) -> np.ndarray:
    parts = [float(v) for v in text.split(",")]
    if len(parts) != 3:
        raise UsageError(f"expected three comma-separated values, got {text!r}")
    return np.array(parts)


def _cmd_make_synthetic(args) -> int:
    vol = synth_field(args.kind, args.res, json.loads(args.params), t=args.t,
                      seed=args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    volume_write(vol, out, args.dtype)
    _write_manifest(out.parent, "make-synthetic",
                    {"kind": args.kind, "res": args.res, "params": json.loads(args.params),
                     "t": args.t, "dtype": args.dtype, "out": str(out)}, args.seed)
    print(f"wrote {out} ({args.res}^3 {args.dtype})")
    return 0


def _cmd_train_world(args) -> int:
    config = _merge_config(args, {
        "epochs": "epochs", "samples": "samples", "batch": "batch", "lr": "lr",
        "seed": "seed", "layers": "layers", "channels": "channels",
        "grid_r": "grid_r", "grid_f": "grid_f", "fourier_m": "fourier_m",
        "fourier_mode": "fourier_mode", "activation": "activation",
        "adaptive": "adaptive", "head": "head", "tf": "tf",
    })
    head = config.get("head", "density")
    tf = _load_tf(config.get("tf")) if head == "color" else None
    model = model_init(_model_config_from(config, head))
    cfg = _world_config_from(config)
    volume = volume_read(args.volume)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _, trace = train_world(model, WorldTarget(volume, tf), cfg,
                           progress=lambda e, l: print(f"epoch {e}: L1 {l:.5f}"))
    checkpoint_save(model, out / "model.fvsrn")
    (out / "loss.csv").write_text(loss_csv(trace))
    _write_manifest(out, "train-world", {**config, "volume": args.volume}, cfg.seed)
    print(f"final L1 {trace[-1]:.5f}; wrote {out / 'model.fvsrn'}")
    return 0


def _cmd_train_screen(args) -> int:
    config = _merge_config(args, {
        "epochs": "epochs", "lr": "lr", "seed": "seed", "layers": "layers",
        "channels": "channels", "grid_r": "grid_r", "grid_f": "grid_f",
        "fourier_m": "fourier_m", "fourier_mode": "fourier_mode",
        "activation": "activation", "views": "views", "resolution": "resolution",
        "stepsize": "stepsize", "direction_mode": "direction_mode", "tf": "tf",
    })
    tf = _load_tf(config.get("tf"))
    model = model_init(_model_config_from(config, "color"))
    cfg = ScreenTrainConfig(
        views=int(config.get("views", 96)),
        resolution=int(config.get("resolution", 256)),
        stepsize=float(config.get("stepsize", 0.02)),
        epochs=int(config.get("epochs", 100)),
        lr=float(config.get("lr", 0.01)),
        seed=int(config.get("seed", 0)),
    )
    volume = volume_read(args.volume)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _, trace = train_screen(model, volume, tf, cfg,
                            progress=lambda e, l: print(f"epoch {e}: L1 {l:.5f}"))
    checkpoint_save(model, out / "model.fvsrn")
    (out / "loss.csv").write_text(loss_csv(trace))
    _write_manifest(out, "train-screen", {**config, "volume": args.volume}, cfg.seed)
    print(f"final L1 {trace[-1]:.5f}; wrote {out / 'model.fvsrn'}")
    return 0


def _cmd_train_temporal(args) -> int:
    config = _merge_config(args, {
        "epochs": "epochs", "samples": "samples", "batch": "batch", "lr": "lr",
        "seed": "seed", "layers": "layers", "channels": "channels",
        "grid_r": "grid_r", "grid_f": "grid_f", "fourier_m": "fourier_m",
        "fourier_mode": "fourier_mode", "activation": "activation",
        "time_mode": "time_mode",
    })
    timesteps = list(range(1, args.timesteps + 1))
    keyframes = [t for t in timesteps if (t - 1) % args.keyframe_every == 0]
    if timesteps[-1] not in keyframes:
        keyframes.append(timesteps[-1])
    train_times = [t for t in timesteps if (t - 1) % args.train_every == 0]

    if args.synthetic:
        params = json.loads(args.synth_params)
        span = max(args.timesteps - 1, 1)

        def provider(t):
            return synth_field(args.synthetic, args.res, params,
                               t=(t - 1) / span, seed=int(config.get("seed", 0)))
    elif args.volumes:
        def provider(t):
            return volume_read(args.volumes.format(t=t))
    else:
        raise UsageError("train-temporal needs --volumes or --synthetic")

    model = model_init(_model_config_from({**config, "keyframe_times": keyframes},
                                          "density"))
    cfg = TemporalTrainConfig(keyframe_times=keyframes, train_times=train_times,
                              world=_world_config_from(config))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _, trace = train_temporal(model, provider, cfg,
                              progress=lambda e, l: print(f"epoch {e}: L1 {l:.5f}"))
    checkpoint_save(model, out / "model.fvsrn")
    (out / "loss.csv").write_text(loss_csv(trace))
    _write_manifest(out, "train-temporal",
                    {**config, "keyframes": keyframes, "train_times": train_times},
                    cfg.world.seed)
    print(f"final L1 {trace[-1]:.5f}; wrote {out / 'model.fvsrn'}")
    return 0


def _cmd_render(args) -> int:
    cam = Camera(eye=_vec3(args.eye), target=_vec3(args.target), up=_vec3(args.up),
                 fov_y=np.deg2rad(args.fov_deg), width=args.width, height=args.height)
    if args.model:
        model = checkpoint_load(args.model)
        tf = _load_tf(args.tf) if model.config.head == "density" else None
        source = ModelSource(model, tf=tf, t=args.t, use_fused=args.fused)
        native = args.native_res
    elif args.volume:
        volume = volume_read(args.volume)
        source = VolumeSource(volume, _load_tf(args.tf))
        native = volume.resolution
    else:
        raise UsageError("render needs --model or --volume")
    settings = RenderSettings.for_voxels(native, args.stepsize_voxels,
                                         threads=args.threads)
    img = render_image(source, cam, settings)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    write_png(img, out)
    if args.pfm:
        write_pfm(img, out.with_suffix(".pfm"))
    _write_manifest(out.parent, "render",
                    {"model": args.model, "volume": args.volume, "tf": args.tf,
                     "eye": args.eye, "target": args.target, "up": args.up,
                     "fov_deg": args.fov_deg, "width": args.width,
                     "height": args.height, "stepsize_voxels": args.stepsize_voxels,
                     "native_res": native, "t": args.t}, 0)
    print(f"wrote {out}")
    return 0


def _cmd_evaluate(args) -> int:
    model = checkpoint_load(args.model)
    volume = volume_read(args.volume)
    rows = evaluate_views(model, volume, _load_tf(args.tf), n_views=args.views,
                          resolution=args.resolution,
                          stepsize_voxels=args.stepsize_voxels, t=args.t)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "metrics.csv").write_text(metrics_csv(rows))
    _write_manifest(out, "evaluate",
                    {"model": args.model, "volume": args.volume, "tf": args.tf,
                     "views": args.views, "resolution": args.resolution,
                     "stepsize_voxels": args.stepsize_voxels}, 0)
    mean = rows[-1]
    print(f"mean PSNR {mean['psnr']:.2f} dB, mean SSIM {mean['ssim']:.4f}")
    return 0


def _cmd_benchmark(args) -> int:
    model = checkpoint_load(args.model) if args.model else model_init(ModelConfig())
    batches = _parse_list(args.batches)
    rows = bench_compare(model, batches, runs=args.runs, seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "benchmark.csv").write_text(bench_csv(rows))
    _write_manifest(out, "benchmark", {"batches": batches, "runs": args.runs}, args.seed)
    for batch in batches:
        naive = next(r for r in rows if r["batch"] == batch and r["evaluator"] == "naive")
        fused = next(r for r in rows if r["batch"] == batch and r["evaluator"] == "fused")
        speedup = fused["samples_per_sec"] / naive["samples_per_sec"]
        print(f"batch {batch}: fused {speedup:.2f}x naive")
    return 0


def _cmd_quantize(args) -> int:
    model = checkpoint_load(args.model)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    checkpoint_save(model, out, weight_precision=args.weights, grid_precision="u8")
    before = memory_footprint(model, "f32", "f32")["total"]
    after = memory_footprint(model, args.weights, "u8")["total"]
    _write_manifest(out.parent, "quantize",
                    {"model": args.model, "weights": args.weights}, 0)
    print(f"{before} -> {after} bytes ({after / before:.3f}x)")
    return 0


def _cmd_metrics(args) -> int:
    def load(path):
        if str(path).endswith(".vraw"):
            return volume_read(path)
        return read_png(path)

    a, b = load(args.a), load(args.b)
    print(f"psnr {metric_psnr(a, b):.2f}")
    if not str(args.a).endswith(".vraw"):
        print(f"ssim {metric_ssim(a, b):.4f}")
    return 0


def _cmd_ablate(args) -> int:
    volume = volume_read(args.volume)
    grid_rs = _parse_list(args.grid)
    grid_fs = _parse_list(args.features)
    layer_counts = _parse_list(args.layers)
    channel_counts = _parse_list(args.channels)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    lines = ["grid_r,grid_f,layers,channels,network_bytes,grid_bytes,psnr,ssim"]
    cfg = WorldTrainConfig(sample_count=args.samples, batch_size=args.batch,
                           epochs=args.epochs, seed=args.seed)
    for r in grid_rs:
        for f in (grid_fs if r > 0 else [grid_fs[0]]):
            for l in layer_counts:
                for c in channel_counts:
                    mc = ModelConfig(layers=l, hidden=c, grid_resolution=r,
                                     grid_channels=f, seed=args.seed)
                    model = model_init(mc)
                    train_world(model, WorldTarget(volume), cfg)
                    rows = evaluate_views(model, volume, TF_PRESETS["grayscale"],
                                          n_views=args.views,
                                          resolution=args.resolution)
                    mem = memory_footprint(model, "f16", "f32")
                    mean = rows[-1]
                    lines.append(
                        f"{r},{f},{l},{c},{mem['network']},{mem['grid']},"
                        f"{mean['psnr']:.3f},{mean['ssim']:.5f}"
                    )
                    print(lines[-1])
    (out / "ablate.csv").write_text("\n".join(lines) + "\n")
    _write_manifest(out, "ablate",
                    {"volume": args.volume, "grid": grid_rs, "features": grid_fs,
                     "layers": layer_counts, "channels": channel_counts,
                     "epochs": args.epochs, "samples": args.samples}, args.seed)
    return 0


def _cmd_serve(args) -> int:
    model = checkpoint_load(args.model)
    state = SessionState(model=model, default_tf=_load_tf(args.tf),
                         native_resolution=args.native_res)
    serve(state, host=args.host, port=args.port, ui_dir=args.ui)
    return 0


_COMMANDS = {
    "make-synthetic": _cmd_make_synthetic,
    "train-world": _cmd_train_world,
    "train-screen": _cmd_train_screen,
    "train-temporal": _cmd_train_temporal,
    "render": _cmd_render,
    "evaluate": _cmd_evaluate,
    "benchmark": _cmd_benchmark,
    "quantize": _cmd_quantize,
    "metrics": _cmd_metrics,
    "ablate": _cmd_ablate,
    "serve": _cmd_serve,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # runtime failure
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

"""Command-line pipeline: corrupt, train, denoise, fill, stream, bench, inspect.

Exit codes: 0 success, 1 runtime failure, 2 bad usage or invalid config.
The default config path can be set with the MOCAPCLEAN_CONFIG environment
variable.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import pathlib
import re
import sys

import numpy as np

from mocapclean import bench as bench_mod
from mocapclean import ebd as ebd_mod
from mocapclean import ebf as ebf_mod
from mocapclean.artifacts import ArtifactError, load_model, model_kind, save_model
from mocapclean.bvh import BvhError, parse_bvh
from mocapclean.config import ConfigError, load_config
from mocapclean.corruption import gap_mask_from_rle, lerp_fill
from mocapclean.features import ChannelLayout
from mocapclean.pipeline import load_dataset, prepare_dataset, training_pairs


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mocapclean",
        description="Clean motion capture data with adaptive per-joint filters.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    config_help = "pipeline config JSON (default: $MOCAPCLEAN_CONFIG)"

    p = sub.add_parser("corrupt", help="generate corrupted variants of a dataset")
    p.add_argument("--config", default=None, help=config_help)

    p = sub.add_parser("train-ebf", help="train the filter-predicting denoiser")
    p.add_argument("--config", default=None, help=config_help)
    p.add_argument("--out", required=True, help="output model artifact path")
    p.add_argument("--noise-index", type=int, default=0)
    p.add_argument("--variant", choices=ebf_mod.VARIANTS, default=None)
    p.add_argument("--debias", action="store_true")

    p = sub.add_parser("train-ebd", help="train the gap-filling network")
    p.add_argument("--config", default=None, help=config_help)
    p.add_argument("--out", required=True)
    p.add_argument("--noise-index", type=int, default=0)
    p.add_argument(
        "--denoiser", action="store_true",
        help="train whole-frame regression instead of masked gap filling",
    )

    p = sub.add_parser("denoise", help="denoise a BVH file")
    p.add_argument("--model", required=True)
    p.add_argument("input")
    p.add_argument("output")

    p = sub.add_parser("fill", help="fill gaps in a BVH file")
    p.add_argument("--ebd", required=True, help="gap-filling model artifact")
    p.add_argument("--mask", required=True, help="gap mask (.rle)")
    p.add_argument("--ebf", default=None, help="optionally denoise after filling")
    p.add_argument("--lerp-only", action="store_true",
                   help="linear interpolation instead of the network")
    p.add_argument("input")
    p.add_argument("output")

    p = sub.add_parser("stream", help="stream rows stdin -> stdout with H-frame delay")
    p.add_argument("--model", required=True)
    p.add_argument("--skeleton", required=True, help="reference BVH defining the layout")
    p.add_argument("--latency-report", action="store_true")

    p = sub.add_parser("bench", help="run the benchmark matrix")
    p.add_argument("--config", default=None, help=config_help)
    p.add_argument("--out", required=True, help="output directory for reports")

    p = sub.add_parser("inspect", help="print a model artifact's header")
    p.add_argument("--model", required=True)
    return parser


def _config_path(arg):
    path = arg or os.environ.get("MOCAPCLEAN_CONFIG")
    if not path:
        raise ConfigError("no config given (use --config or $MOCAPCLEAN_CONFIG)")
    return path


def _read_clip(path):
    return parse_bvh(pathlib.Path(path).read_text())


def _write_clip(path, skeleton, clip):
    from mocapclean.bvh import write_bvh

    pathlib.Path(path).write_text(write_bvh(skeleton, clip))


def _cmd_corrupt(args) -> int:
    config = load_config(_config_path(args.config))
    written = prepare_dataset(config)
    print(f"wrote {len(written)} files to {config.output_dir}")
    return 0


def _cmd_train_ebf(args) -> int:
    config = load_config(_config_path(args.config))
    net_config = config.ebf
    if args.variant is not None:
        net_config = dataclasses.replace(net_config, variant=args.variant)
    if args.debias:
        net_config = dataclasses.replace(net_config, debias=True)
    dataset = load_dataset(config)
    triples = training_pairs(dataset, config, args.noise_index)
    pairs = []
    for clean, noisy, mask in triples:
        if mask is not None and mask.any():
            noisy = lerp_fill(noisy, mask, dataset.layout)
        pairs.append((noisy, clean))
    model = ebf_mod.train_ebf(pairs, dataset.layout, net_config, config.schedule)
    save_model(model, args.out)
    print(f"trained {net_config.variant} for {config.schedule.epochs} epochs; "
          f"final loss {model.metadata['final_loss']:.6f}; saved to {args.out}")
    return 0


def _cmd_train_ebd(args) -> int:
    config = load_config(_config_path(args.config))
    dataset = load_dataset(config)
    triples = training_pairs(dataset, config, args.noise_index)
    if args.denoiser:
        triples = [(clean, noisy, None) for clean, noisy, _ in triples]
    model = ebd_mod.train_ebd(triples, dataset.layout, config.ebd, config.schedule)
    save_model(model, args.out)
    print(f"trained gap filler for {config.schedule.epochs} epochs; "
          f"final loss {model.metadata['final_loss']:.6f}; saved to {args.out}")
    return 0


def _cmd_denoise(args) -> int:
    model = load_model(args.model, expect_kind="ebf-family")
    skeleton, clip = _read_clip(args.input)
    layout = ChannelLayout.from_skeleton(skeleton)
    cleaned = ebf_mod.denoise(model, clip, layout)
    _write_clip(args.output, skeleton, cleaned)
    print(f"denoised {clip.n_frames} frames -> {args.output}")
    return 0


def _cmd_fill(args) -> int:
    skeleton, clip = _read_clip(args.input)
    layout = ChannelLayout.from_skeleton(skeleton)
    mask = gap_mask_from_rle(pathlib.Path(args.mask).read_text())
    if args.lerp_only:
        filled = lerp_fill(clip, mask, layout)
    else:
        gap_model = load_model(args.ebd, expect_kind="ebd")
        filled = ebd_mod.fill_gaps(gap_model, clip, mask, layout)
    if args.ebf:
        denoiser = load_model(args.ebf, expect_kind="ebf-family")
        filled = ebf_mod.denoise(denoiser, filled, layout)
    _write_clip(args.output, skeleton, filled)
    print(f"filled {int(mask.sum())} masked samples -> {args.output}")
    return 0


def _cmd_stream(args) -> int:
    import time

    model = load_model(args.model, expect_kind="ebf-family")
    skeleton, _ = _read_clip(args.skeleton)
    layout = ChannelLayout.from_skeleton(skeleton)
    stream = ebf_mod.StreamDenoiser(model, layout)
    out = sys.stdout
    times = []
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        row = np.array([float(v) for v in line.split()])
        start = time.perf_counter()
        emitted = stream.push(row)
        times.append(time.perf_counter() - start)
        for cleaned in emitted:
            out.write(" ".join(f"{v:.17g}" for v in cleaned) + "\n")
    for cleaned in stream.close():
        out.write(" ".join(f"{v:.17g}" for v in cleaned) + "\n")
    out.flush()
    if args.latency_report:
        steady = times[model.config.half_width + 1 :]
        report = {
            "frames_in": stream.frames_in,
            "frames_out": stream.frames_out,
            "latency_frames": model.config.half_width,
            "mean_ms": float(np.mean(steady) * 1e3) if steady else None,
            "p95_ms": float(np.percentile(steady, 95) * 1e3) if steady else None,
        }
        print(json.dumps(report), file=sys.stderr)
    return 0


_GAUSS_RE = re.compile(r"^gauss(\d+)$")


def _method_factories(config):
    factories = {}
    for name in config.bench.methods:
        match = _GAUSS_RE.match(name)
        if match:
            factories[name] = bench_mod.fixed_gaussian_method(float(match.group(1)))
        elif name == "ebf":
            factories[name] = bench_mod.ebf_method(config.ebf, config.schedule)
        elif name == "ebd":
            factories[name] = bench_mod.ebd_denoiser_method(config.ebd, config.schedule)
        elif name == "ebd_ebf":
            factories[name] = bench_mod.ebd_then_ebf_method(
                config.ebd, config.ebf, config.schedule, config.schedule
            )
        elif name == "identity":
            factories[name] = bench_mod.identity_method()
        else:
            raise ConfigError(
                f"unknown bench method {name!r}; expected ebf, ebd, ebd_ebf, "
                "identity or gauss<ms>"
            )
    return factories


def _cmd_bench(args) -> int:
    config = load_config(_config_path(args.config))
    dataset = load_dataset(config)
    pool = [(m.motion_id, m.label) for m in dataset.motions]
    if config.bench.leave_one_action_out:
        plan = bench_mod.leave_one_action_out(pool)
    else:
        plan = bench_mod.make_holdouts(
            pool,
            config.holdout.composition_dict(),
            config.holdout.count,
            config.holdout.seed,
        )
    spec = config.noise[config.bench.noise_index]
    report = bench_mod.run_benchmark(
        dataset.motions,
        dataset.layout,
        _method_factories(config),
        bench_mod.Corruption(spec, config.gaps),
        plan,
        repeats=config.repeats,
        seed=config.seed,
        train_draws=config.train_draws,
        keep_curves=config.bench.keep_curves,
    )
    report.write(args.out)
    for name in sorted(config.bench.methods):
        try:
            print(f"{name}: grand average RMS {report.grand_average(name):.4f} deg")
        except ValueError:
            print(f"{name}: no successful cells")
    print(f"reports written to {args.out}")
    return 0


def _cmd_inspect(args) -> int:
    model = load_model(args.model)
    info = {
        "kind": model_kind(model),
        "config": {
            f.name: getattr(model.config, f.name)
            for f in dataclasses.fields(model.config)
        },
        "metadata": {
            k: v for k, v in model.metadata.items() if k != "loss_curve"
        },
        "parameters": int(
            sum(model.store[n].data.size for n in model.store.names())
        ),
    }

    def default(obj):
        if isinstance(obj, tuple):
            return list(obj)
        raise TypeError(type(obj))

    print(json.dumps(info, indent=2, sort_keys=True, default=default))
    return 0


_COMMANDS = {
    "corrupt": _cmd_corrupt,
    "train-ebf": _cmd_train_ebf,
    "train-ebd": _cmd_train_ebd,
    "denoise": _cmd_denoise,
    "fill": _cmd_fill,
    "stream": _cmd_stream,
    "bench": _cmd_bench,
    "inspect": _cmd_inspect,
}


def run_cli(argv: list[str]) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (BvhError, ArtifactError, ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_cli(sys.argv[1:]))


if __name__ == "__main__":
    main()

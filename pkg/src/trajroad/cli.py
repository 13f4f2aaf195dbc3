"""Command-line entry point: one subcommand per pipeline stage.

Every command that writes files also writes ``<out>.manifest`` (flat
key=value) recording the command line, resolved configuration, seed,
paths, version and wall-clock time.

Exit codes: 0 ok, 1 generic failure, 2 bad input data, 3 bad
configuration, 4 verification failure.
"""
import argparse
import logging
import os
import shlex
import sys
import time

from . import __version__
from .dataset import (
    SceneSpec,
    list_triplets,
    load_dataset,
    load_triplet,
    make_splits,
    save_triplet,
    scene_specs,
    synth_scene,
)
from .errors import (
    ConfigError,
    CorruptCheckpoint,
    CorruptRaster,
    EmptyDataset,
    EmptyInput,
    InvalidBounds,
    InvalidCellSize,
    MalformedRow,
    NonSquare,
    RangeError,
    SampleOutOfBounds,
    ShapeMismatch,
)
from .evaluate import binarize, format_report, summarize, tile_results
from .heatmap import RasterSpec, render_heatmap
from .net.checkpoint import load_checkpoint, save_checkpoint
from .net.config import NetConfig, config_to_kv, format_kv, load_config, parse_kv
from .net.model import init_params
from .net.train import predict, train
from .rasters import read_pgm, read_rft, write_rft
from .trajectory import GeoBounds, build_store, read_samples

log = logging.getLogger("trajroad")

EXIT_OK, EXIT_FAIL, EXIT_INPUT, EXIT_CONFIG, EXIT_VERIFY = 0, 1, 2, 3, 4
INPUT_ERRORS = (MalformedRow, RangeError, CorruptRaster, CorruptCheckpoint, ShapeMismatch,
                SampleOutOfBounds, EmptyDataset, EmptyInput, NonSquare)
CONFIG_ERRORS = (ConfigError, InvalidBounds, InvalidCellSize)


# ---------------------------------------------------------------- helpers

def write_manifest(out, command, argv, seed=None, config=None, inputs=(), outputs=(), started=None, extra=None):
    pairs = {"command": command, "argv": shlex.join(argv), "version": __version__}
    if seed is not None:
        pairs["seed"] = seed
    for key, value in (config or {}).items():
        pairs[f"config.{key}"] = value
    pairs["inputs"] = ";".join(str(p) for p in inputs)
    pairs["outputs"] = ";".join(str(p) for p in outputs)
    pairs.update(extra or {})
    if started is not None:
        pairs["duration_s"] = f"{time.perf_counter() - started:.3f}"
    path = str(out).rstrip("/\\") + ".manifest"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(format_kv(pairs))
    return path


def parse_size(text):
    try:
        parts = [int(p) for p in text.split(",")]
    except ValueError as exc:
        raise ConfigError(f"--size expects H,W, got {text!r}") from exc
    if len(parts) == 1:
        parts *= 2
    if len(parts) != 2 or min(parts) < 1:
        raise ConfigError(f"--size expects two positive integers, got {text!r}")
    return tuple(parts)


def net_config(path, seed=None):
    config = load_config(path) if path else NetConfig()
    if seed is not None:
        config = config.replace(seed=seed)
    return config


def prediction_for(pred_dir, tid, threshold):
    """Binary prediction for tile ``tid``: a probability RFT1 map or a PGM mask."""
    prob = os.path.join(pred_dir, tid + ".prd.rft")
    if os.path.exists(prob):
        return binarize(read_rft(prob)[:, :, 0], threshold)
    mask = os.path.join(pred_dir, tid + ".msk.pgm")
    if os.path.exists(mask):
        return read_pgm(mask)
    raise EmptyInput(f"no prediction for tile {tid} in {pred_dir}")


# ---------------------------------------------------------------- commands

def cmd_render(args, argv):
    started = time.perf_counter()
    bounds = GeoBounds.parse(args.bounds)
    h, w = parse_size(args.size)
    cell = args.cell_deg or 8 * (bounds.lon_u - bounds.lon_l) / w
    samples = read_samples(args.csv)
    tile = render_heatmap(build_store(samples, cell), RasterSpec(bounds, h, w))
    write_rft(tile, args.out)
    write_manifest(args.out, "render", argv, inputs=[args.csv], outputs=[args.out], started=started,
                   extra={"bounds": args.bounds, "size": f"{h},{w}", "cell_deg": repr(cell),
                          "samples": len(samples)})
    return EXIT_OK


def cmd_synth(args, argv):
    started = time.perf_counter()
    spec = SceneSpec()
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            spec = SceneSpec.from_kv(parse_kv(fh.read()))
    ids = [f"s{i:04d}" for i in range(args.count)]
    scenes = [synth_scene(s) for s in scene_specs(args.count, spec, seed=args.seed)]
    train_ids, val_ids = make_splits(ids, args.train_frac, args.seed)
    lookup = dict(zip(ids, scenes))
    for sub, chosen in (("train", train_ids), ("val", val_ids)):
        for tid in sorted(chosen):
            triplet, samples = lookup[tid]
            save_triplet(triplet, os.path.join(args.out, sub), tid, samples)
    write_manifest(args.out, "synth", argv, seed=args.seed, config=spec.to_kv(),
                   outputs=[os.path.join(args.out, "train"), os.path.join(args.out, "val")], started=started,
                   extra={"count": args.count, "train_frac": args.train_frac,
                          "train_count": len(train_ids), "val_count": len(val_ids)})
    print(f"wrote {len(train_ids)} train and {len(val_ids)} val triplets under {args.out}")
    return EXIT_OK


def cmd_train(args, argv):
    from .plots import plot_loss_curve

    started = time.perf_counter()
    config = net_config(args.config, args.seed)
    data = load_dataset(args.data_dir)
    if not data:
        raise EmptyDataset(f"no triplets in {args.data_dir}")
    params = init_params(config)
    _, losses = train(data, params, config, epochs=args.epochs, batch=args.batch, lr=args.lr,
                      seed=config.seed, augment=not args.no_augment,
                      callback=lambda e, loss: print(f"epoch {e + 1},{loss:.6f}", flush=True))
    save_checkpoint(params, args.out)
    curve = args.out + ".loss.csv"
    with open(curve, "w", encoding="utf-8") as fh:
        fh.write("epoch,loss\n" + "".join(f"{i + 1},{v:.6f}\n" for i, v in enumerate(losses)))
    figure = args.out + ".loss.png"
    plot_loss_curve(losses, figure)
    write_manifest(args.out, "train", argv, seed=config.seed, config=config_to_kv(config),
                   inputs=[args.data_dir], outputs=[args.out, curve, figure], started=started,
                   extra={"epochs": args.epochs, "batch": args.batch, "lr": repr(args.lr),
                          "augment": str(not args.no_augment), "samples": len(data),
                          "first_loss": f"{losses[0]:.6f}" if losses else "",
                          "final_loss": f"{losses[-1]:.6f}" if losses else ""})
    return EXIT_OK


def cmd_predict(args, argv):
    started = time.perf_counter()
    config = net_config(args.config)
    params = load_checkpoint(args.checkpoint, config)
    if os.path.isdir(args.input):
        ids = list_triplets(args.input)
        triplets = [load_triplet(args.input, tid) for tid in ids]
        maps = predict(params, config, triplets)
        os.makedirs(args.out, exist_ok=True)
        outputs = []
        for tid, m in zip(ids, maps):
            outputs.append(os.path.join(args.out, tid + ".prd.rft"))
            write_rft(m[:, :, None], outputs[-1])
    else:
        directory, tid = os.path.split(args.input)
        (m,) = predict(params, config, [load_triplet(directory or ".", tid)])
        write_rft(m[:, :, None], args.out)
        outputs = [args.out]
    write_manifest(args.out, "predict", argv, config=config_to_kv(config),
                   inputs=[args.checkpoint, args.input], outputs=outputs, started=started)
    return EXIT_OK


def cmd_eval(args, argv):
    started = time.perf_counter()
    ids = sorted(f[:-len(".msk.pgm")] for f in os.listdir(args.gt_dir) if f.endswith(".msk.pgm"))
    if not ids:
        raise EmptyInput(f"no ground-truth masks in {args.gt_dir}")
    preds = {tid: prediction_for(args.pred_dir, tid, args.threshold) for tid in ids}
    gts = {tid: read_pgm(os.path.join(args.gt_dir, tid + ".msk.pgm")) for tid in ids}
    results = tile_results([(preds[t], gts[t]) for t in ids], ids)
    report = format_report(results)
    sys.stdout.write(report)
    if args.out:
        from .plots import plot_prediction_panels, plot_tile_ious

        a, g = summarize(results)
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(report)
        bars, panels = args.out + ".png", args.out + ".panels.png"
        plot_tile_ious(results, a, g, bars)
        rows = []
        for tid in ids[:args.panels]:
            img_path = os.path.join(args.gt_dir, tid + ".img.rft")
            heat_path = os.path.join(args.gt_dir, tid + ".trj.rft")
            rows.append((tid, read_rft(img_path) if os.path.exists(img_path) else None,
                         read_rft(heat_path) if os.path.exists(heat_path) else None, gts[tid], preds[tid]))
        plot_prediction_panels(rows, panels)
        write_manifest(args.out, "eval", argv, inputs=[args.pred_dir, args.gt_dir],
                       outputs=[args.out, bars, panels], started=started,
                       extra={"threshold": repr(args.threshold), "tiles": len(ids),
                              "A_IoU": f"{a:.4f}", "G_IoU": f"{g:.4f}"})
    return EXIT_OK


def cmd_gradcheck(args, argv):
    from .verify import DESK, full_network_check, run_gradient_suite

    started = time.perf_counter()
    config = load_config(args.config) if args.config else DESK
    lines = ["check,bits,max_rel_error,tolerance,status"]

    def show(r):
        lines.append(f"{r.name},{r.bits},{r.error:.3e},{r.tolerance:.0e},{'PASS' if r.ok else 'FAIL'}")
        print(lines[-1], flush=True)

    print(lines[0])
    results = run_gradient_suite(seed=args.seed, full_network=False, n_coords=args.coords, progress=show)
    if not args.quick:
        results.append(full_network_check(args.seed, n_coords=max(args.coords, 64), config=config))
        show(results[-1])
    worst = max(r.error / r.tolerance for r in results)
    failed = [r for r in results if not r.ok]
    print(f"max_rel_error_64={max(r.error for r in results if r.bits == 64):.3e}")
    print(f"max_rel_error_32={max(r.error for r in results if r.bits == 32):.3e}")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
        write_manifest(args.out, "gradcheck", argv, seed=args.seed, config=config_to_kv(config),
                       outputs=[args.out], started=started,
                       extra={"checks": len(results), "failed": len(failed), "worst_ratio": f"{worst:.3e}"})
    return EXIT_VERIFY if failed else EXIT_OK


# ------------------------------------------------------------------ parser

def build_parser():
    p = argparse.ArgumentParser(prog="trajroad", description="Road extraction from aerial tiles and GPS trajectories.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("render", help="render a trajectory CSV into an RFT1 heat-map")
    r.add_argument("csv")
    r.add_argument("--bounds", required=True, help="lonl,latl,lonu,latu")
    r.add_argument("--size", required=True, help="H,W")
    r.add_argument("--cell-deg", type=float, default=None, help="spatial index cell size (degrees)")
    r.add_argument("--out", required=True)
    r.set_defaults(func=cmd_render)

    s = sub.add_parser("synth", help="generate a synthetic train/val dataset")
    s.add_argument("--config", help="scene spec (key=value)")
    s.add_argument("--count", type=int, default=64)
    s.add_argument("--train-frac", type=float, default=0.75)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    t = sub.add_parser("train", help="train a network on a triplet directory")
    t.add_argument("data_dir")
    t.add_argument("--config", help="network config (key=value)")
    t.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    t.add_argument("--epochs", type=int, default=30)
    t.add_argument("--batch", type=int, default=4)
    t.add_argument("--lr", type=float, default=2e-4)
    t.add_argument("--no-augment", action="store_true")
    t.add_argument("--out", required=True, help="checkpoint path")
    t.set_defaults(func=cmd_train)

    q = sub.add_parser("predict", help="probability maps for a triplet or a directory of triplets")
    q.add_argument("checkpoint")
    q.add_argument("input", help="triplet directory, or a triplet path prefix such as data/val/s0003")
    q.add_argument("--config", help="network config used for training")
    q.add_argument("--out", required=True)
    q.set_defaults(func=cmd_predict)

    e = sub.add_parser("eval", help="per-tile IoU, A_IoU and G_IoU")
    e.add_argument("pred_dir")
    e.add_argument("gt_dir")
    e.add_argument("--threshold", type=float, default=0.5)
    e.add_argument("--panels", type=int, default=6, help="tiles shown in the panel figure")
    e.add_argument("--out", help="also write the report, figures and manifest here")
    e.set_defaults(func=cmd_eval)

    g = sub.add_parser("gradcheck", help="finite-difference checks of every op, block and the network")
    g.add_argument("--config", help="network config for the whole-network check (default: desk config)")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--coords", type=int, default=64)
    g.add_argument("--quick", action="store_true", help="skip the whole-network check")
    g.add_argument("--out")
    g.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args, ["trajroad"] + argv)
    except CONFIG_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())

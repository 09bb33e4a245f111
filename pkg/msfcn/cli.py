# msfcn/cli.py
"""Command-line entry point.

    python -m msfcn synth --kind shapes --n 8 --size 64 --classes 4 --out runs/shapes
    python -m msfcn split --manifest runs/shapes/manifest.csv --frac 0.6,0.2,0.2 --seed 1
    python -m msfcn train --config desk_shapes --manifest runs/shapes/manifest.csv --out runs/r1
    python -m msfcn eval --checkpoint runs/r1/checkpoint --manifest runs/shapes/manifest.csv --split test
    python -m msfcn predict --checkpoint runs/r1/checkpoint --image a.tns --out a_pred.tns --png a.png
    python -m msfcn gradcheck --seed 1
    python -m msfcn summary --config 2d_default --input 3x1x256x256

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from msfcn.config import PRESETS, RunConfig, load_env, thread_count
from msfcn.core.tensor import LABEL
from msfcn.core.tns import save_tensor
from msfcn.data.manifest import (
    DatasetManifest,
    ManifestEntry,
    load_image,
    load_label,
    read_manifest,
    split_dataset,
    write_manifest,
)
from msfcn.data.preview import save_png
from msfcn.data.synth import MANIFEST_NAME, synth_shapes, synth_temporal
from msfcn.data.tiling import apply_region_mask, read_mask, supervised, tile_patches
from msfcn.errors import ConfigError, MsfcnError, NumericError
from msfcn.metrics.confusion import compute_report, write_confusion_csv, write_report_csv
from msfcn.model.accounting import MAC_CONVENTION, REFERENCES, count_flops, params_by_stage
from msfcn.model.checkpoint import load_checkpoint
from msfcn.model.gradsuite import run_suite
from msfcn.model.network import build_msfcn, count_params
from msfcn.nn.gradcheck import format_table
from msfcn.train.loop import LOG_NAME, train
from msfcn.train.predict import evaluate_entries, predict_padded

log = logging.getLogger("msfcn")


class _Parser(argparse.ArgumentParser):
    """Usage errors become ConfigError so they share exit code 1."""

    def error(self, message: str):  # type: ignore[override]
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _csv_floats(raw: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in raw.split(",") if x.strip())
    except ValueError as e:
        raise ConfigError(f"expected comma-separated numbers, got {raw!r}") from e


def _extents(raw: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in raw.lower().split("x"))
    except ValueError as e:
        raise ConfigError(f"expected extents like 3x1x256x256, got {raw!r}") from e


def run_config(args: argparse.Namespace) -> RunConfig:
    """--config, then every --set key=value, then --seed."""
    run = RunConfig.resolve(args.config)
    for item in args.set or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        run.set(key.strip(), value.strip())
    if args.seed is not None:
        run.set("seed", str(args.seed))
    return run


def cmd_synth(args: argparse.Namespace) -> int:
    seed = 0 if args.seed is None else args.seed
    if args.kind == "shapes":
        m = synth_shapes(args.n, args.size, args.classes, seed, args.out)
    else:
        m = synth_temporal(args.n, args.size, args.t, seed, args.out)
    print(f"done kind={args.kind} images={len(m.entries)} manifest={Path(args.out) / MANIFEST_NAME}", flush=True)
    return 0


def cmd_tile(args: argparse.Namespace) -> int:
    run = run_config(args)
    patch = args.patch or run.get("data.patch")
    image = load_image(args.image)
    label = load_label(args.label)
    if args.mask:
        label = apply_region_mask(label, read_mask(args.mask))
    grid, patches = tile_patches(image, label, patch)
    print(f"plan grid={grid.rows}x{grid.cols} padded={grid.padded[0]}x{grid.padded[1]} patches={len(grid)}", flush=True)
    kept = supervised(patches) if args.mask else patches
    out = Path(args.out)
    stem = Path(args.image).stem
    entries = []
    for p in kept:
        name = f"{stem}_r{p.row:03d}_c{p.col:03d}"
        entries.append(
            ManifestEntry(
                save_tensor(p.image, out / f"{name}.tns"),
                save_tensor(p.label.astype(LABEL), out / f"{name}_lbl.tns"),
                "train",
            )
        )
    manifest = DatasetManifest(
        entries,
        num_classes=run.get("net.num_classes"),
        channels=image.shape[0],
        time_steps=image.shape[1],
        patch=patch,
        granularity="patch",
    )
    path = write_manifest(manifest, out / "tiles.csv")
    print(f"done written={len(kept)} dropped={len(patches) - len(kept)} manifest={path}", flush=True)
    return 0


def cmd_split(args: argparse.Namespace) -> int:
    m = split_dataset(read_manifest(args.manifest), _csv_floats(args.frac), 0 if args.seed is None else args.seed)
    path = write_manifest(m, args.out or args.manifest)
    c = m.counts()
    print(f"done train={c['train']} val={c['val']} test={c['test']} manifest={path}", flush=True)
    return 0


def cmd_train(args: argparse.Namespace) -> int:
    run = run_config(args)
    if args.manifest:
        run.set("data.manifest", str(Path(args.manifest).resolve()))
    if not run.get("data.manifest"):
        raise ConfigError("no manifest: pass --manifest or set data.manifest")
    manifest = read_manifest(run.get("data.manifest"))
    manifest.validate()
    run_dir = Path(args.out)
    run.save(run_dir / "config.txt")
    net = build_msfcn(run.network())
    cfg = run.training(checkpoint_dir=run_dir / "checkpoint")
    print(
        f"plan params={count_params(net)} train={manifest.counts()['train']} val={manifest.counts()['val']} "
        f"batch={cfg.batch_size} max_epochs={cfg.max_epochs} patience={cfg.patience} out={run_dir}",
        flush=True,
    )
    result = train(
        net,
        manifest,
        cfg,
        aug=run.augment(),
        config_text=run.to_text(),
        log_path=run_dir / LOG_NAME,
        workers=thread_count(),
    )
    print(
        f"done epochs={result.epochs} best_epoch={result.best_epoch} best_val_oa={result.best_score:.6f} "
        f"checkpoint={cfg.checkpoint_dir}",
        flush=True,
    )
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    net = load_checkpoint(args.checkpoint)
    manifest = read_manifest(args.manifest)
    manifest.validate()
    entries = manifest.split(args.split)
    cm = evaluate_entries(net, entries)
    report = compute_report(cm)
    out = Path(args.out) if args.out else Path(args.checkpoint).parent / f"eval_{args.split}"
    write_report_csv(report, out)
    write_confusion_csv(cm, out / "confusion.csv")
    scores = " ".join(f"{k}={v * 100:.3f}" for k, v in report.summary().items())
    print(f"done split={args.split} images={len(entries)} pixels={cm.total} {scores} out={out}", flush=True)
    return 0


def cmd_predict(args: argparse.Namespace) -> int:
    net = load_checkpoint(args.checkpoint)
    image = load_image(args.image)
    label = predict_padded(net, image)
    path = save_tensor(label, args.out)
    if args.png:
        save_png(label, args.png)
    print(f"done extents={label.shape[0]}x{label.shape[1]} out={path}", flush=True)
    return 0


def cmd_gradcheck(args: argparse.Namespace) -> int:
    seed = 0 if args.seed is None else args.seed
    results = run_suite(seeds=(seed, seed + 1, seed + 2), names=args.op or None)
    print(format_table(results), flush=True)
    passed = sum(r.passed for r in results)
    print(f"done passed={passed}/{len(results)}", flush=True)
    if passed != len(results):
        failed = ", ".join(r.op for r in results if not r.passed)
        raise NumericError(f"gradient check failed for {failed}")
    return 0


def cmd_summary(args: argparse.Namespace) -> int:
    run = run_config(args)
    cfg = run.network()
    extents = (
        _extents(args.input)
        if args.input
        else (cfg.in_channels, cfg.time_steps, run.get("data.patch"), run.get("data.patch"))
    )
    if len(extents) != 4:
        raise ConfigError(f"--input must be c x t x h x w, got {args.input!r}")
    net = build_msfcn(cfg)
    for stage, n in params_by_stage(net).items():
        print(f"params stage={stage} count={n}")
    total = count_params(net)
    flops = count_flops(net, extents)
    ref = REFERENCES.get(args.config or "")
    line = f"params total={total} millions={total / 1e6:.3f}"
    if ref is not None:
        line += f" reference={ref[0]:.2f} gap={(total / 1e6 - ref[0]) / ref[0] * 100:+.1f}%"
    print(line)
    line = f"macs input={'x'.join(str(e) for e in extents)} giga={flops.giga_macs:.3f} convention={MAC_CONVENTION!r}"
    if ref is not None:
        line += f" reference_g={ref[1]:.2f}"
    print(line, flush=True)
    return 0


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help=f"preset ({', '.join(PRESETS)}) or config file path")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key (repeatable)")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--verbose", action="store_true", help="debug logging")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    ap = _Parser(prog="msfcn", description="Multi-scale FCN land-cover segmentation engine.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="write a synthetic dataset")
    p.add_argument("--kind", choices=("shapes", "temporal"), default="shapes")
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--classes", type=int, default=4, help="shapes only")
    p.add_argument("--t", type=int, default=4, help="temporal only")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("tile", parents=[common], help="cut an image/label pair into patches")
    p.add_argument("--image", required=True)
    p.add_argument("--label", required=True)
    p.add_argument("--patch", type=int, help="defaults to data.patch")
    p.add_argument("--mask", help="CSV of x0,y0,x1,y1 training rectangles")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_tile)

    p = sub.add_parser("split", parents=[common], help="assign train/val/test splits")
    p.add_argument("--manifest", required=True)
    p.add_argument("--frac", default="0.6,0.2,0.2")
    p.add_argument("--out", help="defaults to rewriting --manifest")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", parents=[common], help="train and keep the best checkpoint")
    p.add_argument("--manifest", help="defaults to data.manifest")
    p.add_argument("--out", required=True, help="run directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", parents=[common], help="score a checkpoint on one split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--out", help="report directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("predict", parents=[common], help="label one image")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True, help="u16 TNS label map")
    p.add_argument("--png", help="optional colour preview")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient suite")
    p.add_argument("--op", action="append", help="restrict to one op (repeatable)")
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("summary", parents=[common], help="parameter and MAC accounting")
    p.add_argument("--input", help="c x t x h x w, e.g. 3x1x256x256")
    p.set_defaults(func=cmd_summary)
    return ap


def main(argv: list[str] | None = None) -> int:
    load_env()
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(
            level=logging.DEBUG if args.verbose else logging.WARNING,
            format="%(levelname)s %(name)s: %(message)s",
        )
        log.debug("command=%s", args.command)
        return args.func(args)
    except MsfcnError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except KeyboardInterrupt:
        print("error: interrupted", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())

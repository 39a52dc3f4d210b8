"""Command-line entry point.

Subcommands: dataset, train, eval, grid, compare. Exit codes: 0 on
success, 2 for usage/config/input errors, 3 for runtime/numeric errors.
Every command records its resolved configuration as run.json so a run can
be reproduced from the output directory alone.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .config import ExperimentConfig, resolve_config, with_mode
from .errors import (
    ConfigError,
    NumericalError,
    SemGanError,
    TrainingDivergedError,
)
from .evaluation import (
    REPORT_COLUMNS,
    MetricReport,
    append_report,
    evaluate_checkpoint,
    read_report_csv,
    sample_images,
    write_metric_sidecar,
)
from .labels import Palette, one_hot_encode, save_rgb_png, to_rgb
from .nets import RGB, SEMANTIC, build_models, load_checkpoint
from .shapes import generate_dataset, load_dataset_dir, save_dataset, shapes_palette
from .training import training_run

MODES = (SEMANTIC, RGB)


def _write_run_json(out_dir: Path, command: str, cfg: ExperimentConfig) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = {"command": command, "version": __version__, "config": asdict(cfg)}
    (out_dir / "run.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _resolve(args: argparse.Namespace) -> ExperimentConfig:
    override_names = (
        "mode",
        "seed",
        "dataset_dir",
        "eval_every",
        "image_size",
        "num_classes",
        "latent_dim",
        "kernel_size",
        "base_channels",
        "lr",
        "batch_size",
        "steps",
        "feature_layer",
        "square_side",
        "circle_radius",
        "swd_patches",
        "swd_projections",
        "msssim_pairs",
        "spurious_tol",
    )
    overrides = {name: getattr(args, name, None) for name in override_names}
    if getattr(args, "out", None) is not None:
        overrides["out_dir"] = args.out
    return resolve_config(args.profile, args.config, **overrides)


def cmd_dataset(args: argparse.Namespace) -> int:
    cfg = _resolve(args)
    out_dir = Path(cfg.out_dir)
    dataset = generate_dataset(cfg.shapes_config(), workers=args.workers)
    save_dataset(dataset, out_dir, force=args.force)
    _write_run_json(out_dir, "dataset", cfg)
    print(f"wrote {len(dataset.items)} label maps to {out_dir}")
    return 0


def _load_real_images(cfg: ExperimentConfig, mode: str) -> np.ndarray:
    """Dataset as a (N, H, W, C) training array: one-hot or RGB renders."""
    if cfg.dataset_dir is None:
        raise ConfigError("a dataset directory is required (--dataset)")
    maps, palette, _ = load_dataset_dir(cfg.dataset_dir)
    size = maps[0].shape[0]
    if size != cfg.image_size:
        raise ConfigError(f"dataset images are {size}px but the model expects {cfg.image_size}px")
    if palette.num_classes != cfg.num_classes:
        raise ConfigError(
            f"dataset palette has {palette.num_classes} classes but the model expects {cfg.num_classes}"
        )
    if mode == SEMANTIC:
        return np.stack([one_hot_encode(m, palette.num_classes) for m in maps])
    return np.stack([to_rgb(m, palette) for m in maps]).astype(np.float32)


def _train_one_mode(cfg: ExperimentConfig, mode: str, out_dir: Path) -> list[Path]:
    real = _load_real_images(cfg, mode)
    out_dir.mkdir(parents=True, exist_ok=True)
    state = build_models(cfg.model_config(mode), cfg.seed)
    return training_run(
        state,
        real,
        cfg.train_config(),
        run_tag=mode,
        log_path=out_dir / "train_log.csv",
        checkpoint_dir=out_dir / "checkpoints",
        checkpoint_every=cfg.eval_every,
    )


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _resolve(args)
    out_dir = Path(cfg.out_dir)
    _write_run_json(out_dir, "train", cfg)
    checkpoints = _train_one_mode(cfg, cfg.mode, out_dir)
    print(f"trained {cfg.steps} steps ({cfg.mode}); {len(checkpoints)} checkpoints in {out_dir / 'checkpoints'}")
    return 0


def _evaluate_to_csv(cfg: ExperimentConfig, checkpoint: Path, out_dir: Path) -> MetricReport:
    state = load_checkpoint(checkpoint)
    if cfg.dataset_dir is None:
        raise ConfigError("a dataset directory is required (--dataset)")
    maps, palette, _ = load_dataset_dir(cfg.dataset_dir)
    mcfg = cfg.metric_config()
    report = evaluate_checkpoint(state, maps, palette, mcfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    append_report(out_dir / "eval.csv", report)
    write_metric_sidecar(out_dir / "metrics.json", mcfg)
    return report


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = _resolve(args)
    out_dir = Path(cfg.out_dir)
    _write_run_json(out_dir, "eval", cfg)
    report = _evaluate_to_csv(cfg, Path(args.checkpoint), out_dir)
    print(f"step {report.step}: swd_avg={report.swd_avg:.4g} frechet={report.frechet:.4g} spurious={report.spurious_rate:.4g}")
    return 0


def tile_grid(images: np.ndarray, separator: int = 2) -> np.ndarray:
    """Tile n images (n a perfect square) with black separators."""
    n, h, w, c = images.shape
    side = int(round(np.sqrt(n)))
    if side * side != n:
        raise ConfigError(f"grid needs a perfect-square sample count, got {n}")
    canvas = np.zeros((side * h + (side - 1) * separator, side * w + (side - 1) * separator, c))
    for k in range(n):
        r, col = divmod(k, side)
        y = r * (h + separator)
        x = col * (w + separator)
        canvas[y : y + h, x : x + w] = images[k]
    return canvas


def cmd_grid(args: argparse.Namespace) -> int:
    if args.n < 1 or int(round(np.sqrt(args.n))) ** 2 != args.n:
        raise ConfigError(f"--n must be a perfect square, got {args.n}")
    state = load_checkpoint(args.checkpoint)
    palette = shapes_palette() if args.palette is None else Palette.load(args.palette)
    images = sample_images(state, args.n, palette, args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_rgb_png(tile_grid(images), out)
    doc = {"command": "grid", "version": __version__, "checkpoint": str(args.checkpoint), "n": args.n, "seed": args.seed}
    Path(str(out) + ".run.json").write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    print(f"wrote {out}")
    return 0


def _summary_min(rows: list[dict[str, str]]) -> dict[str, str]:
    best = {}
    for col in REPORT_COLUMNS:
        if col == "step":
            continue
        vals = [float(r[col]) for r in rows if r.get(col)]
        best[col] = f"{min(vals):.10g}" if vals else ""
    return best


def cmd_compare(args: argparse.Namespace) -> int:
    cfg = _resolve(args)
    out_dir = Path(cfg.out_dir)
    _write_run_json(out_dir, "compare", cfg)
    summary_rows = []
    level_rows = []
    for mode in MODES:
        mode_cfg = with_mode(cfg, mode)
        mode_dir = out_dir / mode
        _write_run_json(mode_dir, "train", mode_cfg)
        checkpoints = _train_one_mode(mode_cfg, mode, mode_dir)
        for ckpt in checkpoints:
            _evaluate_to_csv(mode_cfg, ckpt, mode_dir)
        rows = read_report_csv(mode_dir / "eval.csv")
        summary_rows.append({"mode": mode, **_summary_min(rows)})
        for row in rows:
            level_rows.append({"mode": mode, **{k: row[k] for k in REPORT_COLUMNS if k.startswith(("step", "swd"))}})

    summary_cols = ["mode"] + [c for c in REPORT_COLUMNS if c != "step"]
    _write_csv(out_dir / "summary.csv", summary_cols, summary_rows)
    level_cols = ["mode", "step", "swd_16", "swd_32", "swd_64", "swd_128", "swd_avg"]
    _write_csv(out_dir / "swd_levels.csv", level_cols, level_rows)
    print(f"comparison written to {out_dir} (summary.csv, swd_levels.csv)")
    return 0


def _write_csv(path: Path, columns: list[str], rows: list[dict[str, str]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        writer.writerows(rows)


def _add_config_flags(p: argparse.ArgumentParser, *, dataset_flags: bool = False) -> None:
    p.add_argument("--profile", default="desk", help="config profile: desk or full")
    p.add_argument("--config", default=None, help="JSON config file (fields override the profile)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--image-size", dest="image_size", type=int, default=None)
    if dataset_flags:
        p.add_argument("--square-side", dest="square_side", type=int, default=None)
        p.add_argument("--circle-radius", dest="circle_radius", type=float, default=None)
    else:
        p.add_argument("--dataset", dest="dataset_dir", default=None, help="dataset directory")
        p.add_argument("--mode", choices=MODES, default=None)
        p.add_argument("--steps", type=int, default=None)
        p.add_argument("--eval-every", dest="eval_every", type=int, default=None)
        p.add_argument("--lr", type=float, default=None)
        p.add_argument("--batch-size", dest="batch_size", type=int, default=None)
        p.add_argument("--latent-dim", dest="latent_dim", type=int, default=None)
        p.add_argument("--kernel-size", dest="kernel_size", type=int, default=None)
        p.add_argument("--base-channels", dest="base_channels", type=int, default=None)
        p.add_argument("--feature-layer", dest="feature_layer", type=int, default=None)
        p.add_argument("--swd-patches", dest="swd_patches", type=int, default=None)
        p.add_argument("--swd-projections", dest="swd_projections", type=int, default=None)
        p.add_argument("--msssim-pairs", dest="msssim_pairs", type=int, default=None)
        p.add_argument("--spurious-tol", dest="spurious_tol", type=float, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="semgan", description=__doc__)
    parser.add_argument("--version", action="version", version=f"semgan {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dataset", help="generate the colored-shapes dataset")
    _add_config_flags(p, dataset_flags=True)
    p.add_argument("--force", action="store_true", help="overwrite an existing dataset directory")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("train", help="train one model on a dataset")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint against a dataset")
    _add_config_flags(p)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("grid", help="render a sample grid PNG from a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True, help="output PNG path")
    p.add_argument("-n", type=int, default=16, help="sample count (perfect square)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--palette", default=None, help="palette JSON (default: colored-shapes palette)")
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("compare", help="train + evaluate both modes with identical config")
    _add_config_flags(p)
    p.set_defaults(func=cmd_compare)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (TrainingDivergedError, NumericalError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except SemGanError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

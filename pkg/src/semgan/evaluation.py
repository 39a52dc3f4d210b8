"""Checkpoint evaluation: sample the generator, score it against a real
set, and serialize the result as one CSV row per checkpoint.

Semantic outputs are collapsed to label maps and rendered through the
palette before any metric sees them; rgb outputs are measured raw, and the
palette audit (spurious-pixel rate) runs on whatever images the metrics
saw. SWD values are reported multiplied by 1e3.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import rng
from .errors import ConfigError
from .labels import Palette, collapse, spurious_pixel_rate, to_rgb
from .metrics import (
    RandomConvFeatures,
    extract_descriptors,
    feature_stats,
    frechet_distance,
    load_features,
    ms_ssim_diversity,
    sliced_wasserstein,
    stats_from_features,
)
from .nets import SEMANTIC, ModelState, generator_forward
from .training import sample_latent

REPORT_COLUMNS = ("step", "frechet", "ms_ssim", "swd_16", "swd_32", "swd_64", "swd_128", "swd_avg", "spurious_rate")
_LEVEL_COLUMNS = (16, 32, 64, 128)


@dataclass(frozen=True)
class MetricConfig:
    """Hyperparameters of the evaluation stack (all logged in the sidecar)."""

    patches_per_image: int = 64
    n_projections: int = 512
    pyramid_min_res: int = 16
    msssim_pairs: int = 64
    spurious_tol: float = 0.02
    extractor_seed: int = 42
    feature_channels: tuple[int, ...] = (16, 32, 64)
    eval_batch: int = 64
    seed: int = 0


@dataclass(frozen=True)
class MetricReport:
    """All metric values for one checkpoint; swd values are x1e3."""

    step: int
    swd_per_level: dict[int, float]
    swd_avg: float
    frechet: float
    ms_ssim_diversity: float
    spurious_rate: float

    def csv_row(self) -> list[str]:
        cells = [str(self.step), _fmt(self.frechet), _fmt(self.ms_ssim_diversity)]
        for res in _LEVEL_COLUMNS:
            cells.append(_fmt(self.swd_per_level[res]) if res in self.swd_per_level else "")
        cells.append(_fmt(self.swd_avg))
        cells.append(_fmt(self.spurious_rate))
        return cells


def _fmt(value: float) -> str:
    return f"{value:.10g}"


def _side_stats(images, features, extractor):
    if features is None:
        return feature_stats(images, extractor)
    if isinstance(features, (str, Path)):
        features = load_features(features)
    if len(features) != len(images):
        raise ConfigError(f"{len(features)} external features for {len(images)} images")
    return stats_from_features(features)


def evaluate_image_sets(
    real_images: np.ndarray,
    fake_images: np.ndarray,
    palette: Palette,
    mcfg: MetricConfig,
    step: int = 0,
    real_features: np.ndarray | str | Path | None = None,
    fake_features: np.ndarray | str | Path | None = None,
) -> MetricReport:
    """Score a fake image set against a real one (both (N, H, W, 3) in [0,1]).

    `real_features`/`fake_features` optionally replace the built-in
    extractor for the Fréchet statistic: either (N, d) arrays or paths to
    feature files (JSON header + float32 body), e.g. from a pretrained
    network.
    """
    real_desc = extract_descriptors(
        np.asarray(real_images, dtype=np.float32),
        mcfg.patches_per_image,
        seed=rng.derive_key(mcfg.seed, "desc-real") % 2**63,
        min_res=mcfg.pyramid_min_res,
    )
    fake_desc = extract_descriptors(
        np.asarray(fake_images, dtype=np.float32),
        mcfg.patches_per_image,
        seed=rng.derive_key(mcfg.seed, "desc-fake") % 2**63,
        min_res=mcfg.pyramid_min_res,
    )
    common = sorted(set(real_desc) & set(fake_desc))
    if not common:
        raise ConfigError("no common pyramid levels between the two image sets")
    swd_per_level = {
        res: 1e3 * sliced_wasserstein(real_desc[res], fake_desc[res], mcfg.n_projections, seed=mcfg.seed)
        for res in common
    }
    swd_avg = float(np.mean(list(swd_per_level.values())))

    extractor = RandomConvFeatures(mcfg.extractor_seed, mcfg.feature_channels)
    frechet = frechet_distance(
        _side_stats(real_images, real_features, extractor),
        _side_stats(fake_images, fake_features, extractor),
    )

    diversity = ms_ssim_diversity(fake_images, mcfg.msssim_pairs, seed=mcfg.seed)
    spurious = float(np.mean([spurious_pixel_rate(img, palette, mcfg.spurious_tol) for img in fake_images]))
    return MetricReport(step, swd_per_level, swd_avg, frechet, diversity, spurious)


def sample_images(state: ModelState, n: int, palette: Palette, seed: int, batch: int = 64) -> np.ndarray:
    """Draw n generator outputs as RGB images.

    Semantic outputs are collapsed to labels and palette-rendered; rgb
    outputs are returned as-is.
    """
    latent_rng = rng.stream(seed, "eval-latent")
    out = []
    remaining = n
    while remaining > 0:
        take = min(batch, remaining)
        z = sample_latent(take, state.config.latent_dim, latent_rng)
        vols = generator_forward(state, z)
        if state.config.mode == SEMANTIC:
            out.extend(to_rgb(collapse(v), palette) for v in vols)
        else:
            out.extend(np.asarray(v, dtype=np.float64) for v in vols)
        remaining -= take
    return np.stack(out)


def evaluate_checkpoint(
    state: ModelState,
    label_maps: list[np.ndarray],
    palette: Palette,
    mcfg: MetricConfig,
    step: int | None = None,
) -> MetricReport:
    """Evaluate a model against a label-map dataset.

    Generates as many samples as the dataset has items, renders both sides
    to RGB and delegates to evaluate_image_sets.
    """
    if state.config.mode == SEMANTIC and state.config.num_classes != palette.num_classes:
        raise ConfigError(
            f"model has {state.config.num_classes} classes but palette has {palette.num_classes}"
        )
    real = np.stack([to_rgb(m, palette) for m in label_maps])
    fake = sample_images(state, len(label_maps), palette, mcfg.seed, mcfg.eval_batch)
    return evaluate_image_sets(real, fake, palette, mcfg, step=state.step if step is None else step)


def append_report(path: str | Path, report: MetricReport) -> None:
    """Append one CSV row, writing the header on first use."""
    path = Path(path)
    new = not path.exists()
    with open(path, "a", newline="") as fh:
        writer = csv.writer(fh)
        if new:
            writer.writerow(REPORT_COLUMNS)
        writer.writerow(report.csv_row())


def write_metric_sidecar(path: str | Path, mcfg: MetricConfig) -> None:
    Path(path).write_text(json.dumps(asdict(mcfg), indent=2) + "\n")


def read_report_csv(path: str | Path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))

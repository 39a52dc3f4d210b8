"""Image-distribution metrics.

Three families, all deterministic functions of (inputs, seed):

* sliced Wasserstein distance over per-level Laplacian-pyramid patch
  descriptors (7x7x3 patches, channel-normalized over each descriptor set);
* Fréchet distance between Gaussian fits of image features, with a fixed
  random-weight conv extractor as the default feature source (absolute
  values are only comparable at equal extractor);
* multi-scale structural similarity, used as a diversity probe over
  sampled pairs of generated images (values near 1 flag mode collapse).
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.ndimage
from scipy.signal import convolve2d

from . import rng
from .errors import ConfigError, NumericalError, ShapeError

logger = logging.getLogger(__name__)

PATCH_SIZE = 7

# 5-tap binomial blur; the separable [1,4,6,4,1]/16 kernel squared.
_BINOMIAL5 = np.outer([1.0, 4.0, 6.0, 4.0, 1.0], [1.0, 4.0, 6.0, 4.0, 1.0]) / 256.0

EIG_CLIP = 1e-6  # eigenvalues in (-EIG_CLIP, 0) clip to 0; below is an error

MSSSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)
_SSIM_C1 = 0.01**2
_SSIM_C2 = 0.03**2
_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5


# ---------------------------------------------------------------------------
# Laplacian pyramid


@dataclass(frozen=True)
class PyramidLevel:
    """One band-pass level (or the final low-pass residual)."""

    resolution: int
    values: np.ndarray  # (res, res, 3)


def _blur(x: np.ndarray, gain: float = 1.0) -> np.ndarray:
    kernel = (_BINOMIAL5 * gain)[:, :, None]
    return scipy.ndimage.convolve(x, kernel, mode="mirror")


def _pyr_down(x: np.ndarray) -> np.ndarray:
    return _blur(x)[::2, ::2]


def _pyr_up(x: np.ndarray) -> np.ndarray:
    h, w, c = x.shape
    up = np.zeros((2 * h, 2 * w, c), dtype=x.dtype)
    up[::2, ::2] = x
    # Gain 4 restores unit DC response after zero insertion.
    return _blur(up, gain=4.0)


def laplacian_pyramid(img: np.ndarray, min_res: int = 16) -> list[PyramidLevel]:
    """Band-pass decomposition from full resolution down to `min_res`.

    Levels hold G_i - upsample(G_{i+1}) for the blur/decimate Gaussian
    pyramid G; the last level is the low-pass residual itself. The image
    side must be min_res times a power of two.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 3 or img.shape[0] != img.shape[1]:
        raise ShapeError(f"expected a square (H, H, C) image, got shape {img.shape}")
    side = img.shape[0]
    if side < min_res or side % min_res != 0 or (side // min_res) & (side // min_res - 1):
        raise ShapeError(f"side {side} is not a power-of-two multiple of min_res {min_res}")
    levels = []
    g = img
    while g.shape[0] > min_res:
        down = _pyr_down(g)
        levels.append(PyramidLevel(g.shape[0], g - _pyr_up(down)))
        g = down
    levels.append(PyramidLevel(min_res, g))
    return levels


def reconstruct_pyramid(levels: list[PyramidLevel]) -> np.ndarray:
    """Invert laplacian_pyramid by recursive upsample-and-add."""
    x = levels[-1].values
    for level in levels[-2::-1]:
        x = _pyr_up(x) + level.values
    return x


# ---------------------------------------------------------------------------
# Patch descriptors and sliced Wasserstein distance


@dataclass(frozen=True)
class DescriptorSet:
    """Channel-normalized 7x7x3 patch descriptors of one pyramid level."""

    resolution: int
    descriptors: np.ndarray  # (N, 147)


def extract_descriptors(
    images: np.ndarray | list[np.ndarray],
    patches_per_image: int = 64,
    seed: int = 0,
    min_res: int = 16,
) -> dict[int, DescriptorSet]:
    """Random 7x7x3 patches per image per pyramid level, set-normalized.

    Patch positions come from a per-(image, level) substream, so extraction
    order cannot change the result. Levels smaller than the patch are
    skipped with a warning. Returns {resolution: DescriptorSet}.
    """
    images = [np.asarray(im, dtype=np.float64) for im in images]
    if not images:
        raise ConfigError("descriptor extraction needs at least one image")
    pyramids = [laplacian_pyramid(im, min_res) for im in images]
    n_levels = len(pyramids[0])
    per_level: dict[int, list[np.ndarray]] = {lv.resolution: [] for lv in pyramids[0]}
    for i, pyr in enumerate(pyramids):
        for li, level in enumerate(pyr):
            res = level.resolution
            if res < PATCH_SIZE:
                logger.warning("pyramid level %dpx smaller than %dpx patches; skipped", res, PATCH_SIZE)
                per_level.pop(res, None)
                continue
            gen = rng.stream(seed, "patches", counter=i * n_levels + li)
            tops = gen.integers(0, res - PATCH_SIZE + 1, size=(patches_per_image, 2))
            patches = np.stack(
                [level.values[y : y + PATCH_SIZE, x : x + PATCH_SIZE, :] for y, x in tops]
            )
            per_level[res].append(patches)
    out = {}
    for res, chunks in per_level.items():
        desc = np.concatenate(chunks, axis=0)  # (N, 7, 7, 3)
        mean = desc.mean(axis=(0, 1, 2), keepdims=True)
        std = desc.std(axis=(0, 1, 2), keepdims=True)
        desc = (desc - mean) / (std + 1e-8)
        out[res] = DescriptorSet(res, desc.reshape(desc.shape[0], -1))
    return out


def sliced_wasserstein(
    a: DescriptorSet | np.ndarray,
    b: DescriptorSet | np.ndarray,
    n_projections: int = 512,
    seed: int = 0,
) -> float:
    """Average 1-D Wasserstein-1 over random unit projections.

    Each projection is a normalized Gaussian direction; the 1-D distance is
    the mean absolute difference of the sorted projected samples. Sets of
    unequal size are first reduced by uniform subsampling of the larger.
    """
    a = a.descriptors if isinstance(a, DescriptorSet) else np.asarray(a)
    b = b.descriptors if isinstance(b, DescriptorSet) else np.asarray(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeError(f"descriptor sets must be (N, d) with equal d, got {a.shape} and {b.shape}")
    if a.shape[0] == 0 or b.shape[0] == 0:
        raise ConfigError("descriptor sets must be non-empty")
    if n_projections < 1:
        raise ConfigError(f"n_projections must be >= 1, got {n_projections}")
    if a.shape[0] != b.shape[0]:
        n = min(a.shape[0], b.shape[0])
        sub = rng.stream(seed, "swd-subsample")
        if a.shape[0] > n:
            a = a[sub.choice(a.shape[0], size=n, replace=False)]
        else:
            b = b[sub.choice(b.shape[0], size=n, replace=False)]
    dirs = rng.stream(seed, "swd-directions").standard_normal((a.shape[1], n_projections))
    dirs /= np.sqrt(np.sum(dirs * dirs, axis=0, keepdims=True))
    dirs = dirs.astype(a.dtype, copy=False)
    proj_a = np.sort(a @ dirs, axis=0)
    proj_b = np.sort(b @ dirs, axis=0)
    return float(np.mean(np.abs(proj_a - proj_b)))


# ---------------------------------------------------------------------------
# Fréchet distance over feature statistics


@dataclass(frozen=True)
class FeatureStats:
    """Gaussian fit (mean, covariance) of a feature distribution."""

    mu: np.ndarray  # (d,)
    sigma: np.ndarray  # (d, d), symmetric PSD up to tolerance


def stats_from_features(features: np.ndarray) -> FeatureStats:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] < 2:
        raise ConfigError(f"need a (N>=2, d) feature matrix, got shape {features.shape}")
    mu = features.mean(axis=0)
    sigma = np.atleast_2d(np.cov(features, rowvar=False))
    return FeatureStats(mu, (sigma + sigma.T) / 2.0)


def feature_stats(images, extractor) -> FeatureStats:
    """Mean and unbiased covariance of extractor features over an image set."""
    if len(images) < 2:
        raise ConfigError(f"feature statistics need >= 2 images, got {len(images)}")
    return stats_from_features(np.asarray(extractor(images)))


def _psd_eigh(matrix: np.ndarray, what: str) -> tuple[np.ndarray, np.ndarray]:
    sym = (matrix + matrix.T) / 2.0
    vals, vecs = np.linalg.eigh(sym)
    if vals.min() < -EIG_CLIP:
        raise NumericalError(f"{what} has eigenvalue {vals.min():.3g} below -{EIG_CLIP}")
    return np.clip(vals, 0.0, None), vecs


def frechet_distance(a: FeatureStats, b: FeatureStats) -> float:
    """Fréchet distance between two Gaussians:
    ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2)).

    The matrix square root comes from the eigendecomposition of the
    symmetrized product S_a^(1/2) S_b S_a^(1/2); tiny negative eigenvalues
    are clipped and the result is clamped to >= 0.
    """
    if a.mu.shape != b.mu.shape or a.sigma.shape != b.sigma.shape:
        raise ShapeError(f"feature stats dims differ: {a.mu.shape} vs {b.mu.shape}")
    vals_a, vecs_a = _psd_eigh(a.sigma, "covariance A")
    root_a = (vecs_a * np.sqrt(vals_a)) @ vecs_a.T
    vals_p, _ = _psd_eigh(root_a @ b.sigma @ root_a, "covariance product")
    tr_sqrt = float(np.sqrt(vals_p).sum())
    diff = a.mu - b.mu
    dist = float(diff @ diff + np.trace(a.sigma) + np.trace(b.sigma) - 2.0 * tr_sqrt)
    return max(dist, 0.0)


# ---------------------------------------------------------------------------
# Multi-scale structural similarity


def _gaussian_window(size: int = _SSIM_WINDOW, sigma: float = _SSIM_SIGMA) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords**2) / (2.0 * sigma**2))
    window = np.outer(g, g)
    return window / window.sum()


def _filter_valid(x: np.ndarray, window: np.ndarray) -> np.ndarray:
    return np.stack(
        [convolve2d(x[:, :, c], window, mode="valid") for c in range(x.shape[2])], axis=-1
    )


def _lum_cs(x: np.ndarray, y: np.ndarray, window: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mu_x = _filter_valid(x, window)
    mu_y = _filter_valid(y, window)
    var_x = _filter_valid(x * x, window) - mu_x * mu_x
    var_y = _filter_valid(y * y, window) - mu_y * mu_y
    cov = _filter_valid(x * y, window) - mu_x * mu_y
    lum = (2.0 * mu_x * mu_y + _SSIM_C1) / (mu_x * mu_x + mu_y * mu_y + _SSIM_C1)
    cs = (2.0 * cov + _SSIM_C2) / (var_x + var_y + _SSIM_C2)
    return lum.mean(axis=(0, 1)), cs.mean(axis=(0, 1))


def _halve(x: np.ndarray) -> np.ndarray:
    h, w, c = x.shape
    return x[: h - h % 2, : w - w % 2].reshape(h // 2, 2, w // 2, 2, c).mean(axis=(1, 3))


def ms_ssim(x: np.ndarray, y: np.ndarray) -> float:
    """Multi-scale SSIM on [0,1]-valued images, channel-averaged.

    Contrast-structure terms at up to 5 dyadic scales with the standard
    exponents, luminance at the coarsest; 11x11 Gaussian window, sigma 1.5.
    Images too small for 5 scales use as many scales as keep the coarsest
    side >= 11, with exponent mass renormalized. Negative contrast terms
    clamp to 0 so the value stays in [0, 1].
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeError(f"image shapes differ: {x.shape} vs {y.shape}")
    if x.ndim != 3:
        raise ShapeError(f"expected (H, W, C) images, got shape {x.shape}")
    side = min(x.shape[0], x.shape[1])
    n_scales = 0
    while n_scales < len(MSSSIM_WEIGHTS) and side // 2**n_scales >= _SSIM_WINDOW:
        n_scales += 1
    if n_scales == 0:
        raise ShapeError(f"images of side {side} are smaller than the {_SSIM_WINDOW}px window")
    weights = np.array(MSSSIM_WEIGHTS[:n_scales])
    weights *= sum(MSSSIM_WEIGHTS) / weights.sum()

    window = _gaussian_window()
    value = np.ones(x.shape[2])
    for scale in range(n_scales):
        lum, cs = _lum_cs(x, y, window)
        cs = np.clip(cs, 0.0, None)
        value = value * cs**weights[scale]
        if scale == n_scales - 1:
            value = value * np.clip(lum, 0.0, None) ** weights[scale]
        else:
            x = _halve(x)
            y = _halve(y)
    return float(value.mean())


def _decode_pair(p: np.ndarray, starts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    i = np.searchsorted(starts, p, side="right") - 1
    j = p - starts[i] + i + 1
    return i, j


def ms_ssim_diversity(images, n_pairs: int, seed: int = 0) -> float:
    """Mean MS-SSIM over sampled distinct unordered image pairs.

    Lower is more diverse. When n_pairs covers all C(n,2) pairs the result
    is the exhaustive mean (pairs are sampled without replacement).
    """
    n = len(images)
    if n < 2:
        raise ConfigError(f"diversity needs >= 2 images, got {n}")
    if n_pairs < 1:
        raise ConfigError(f"n_pairs must be >= 1, got {n_pairs}")
    total = n * (n - 1) // 2
    take = min(n_pairs, total)
    gen = rng.stream(seed, "msssim-pairs")
    chosen = gen.choice(total, size=take, replace=False)
    starts = np.concatenate([[0], np.cumsum(np.arange(n - 1, 0, -1))])[:n]
    ii, jj = _decode_pair(np.asarray(chosen), starts)
    return float(np.mean([ms_ssim(images[int(i)], images[int(j)]) for i, j in zip(ii, jj)]))


# ---------------------------------------------------------------------------
# Default feature extractor and external-feature files


class RandomConvFeatures:
    """Fixed random-weight 3-stage conv feature extractor.

    A stand-in for pretrained classifier features: weights are a pure
    function of the seed, so Fréchet values are comparable across runs that
    share an extractor (and not comparable across different extractors).
    """

    def __init__(self, seed: int = 42, channels: tuple[int, ...] = (16, 32, 64)):
        self.seed = seed
        self.channels = channels
        self.weights = []
        c_in = 3
        for stage, c_out in enumerate(channels):
            gen = rng.stream(seed, "feature-extractor", counter=stage)
            w = gen.standard_normal((3, 3, c_in, c_out)) * np.sqrt(2.0 / (9 * c_in))
            self.weights.append(w.astype(np.float32))
            c_in = c_out

    @property
    def dim(self) -> int:
        return self.channels[-1]

    @staticmethod
    def _conv_s2(x: np.ndarray, weight: np.ndarray) -> np.ndarray:
        n, h, w, _ = x.shape
        xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
        out = np.zeros((n, h // 2, w // 2, weight.shape[3]), dtype=x.dtype)
        for dy in range(3):
            for dx in range(3):
                out += xp[:, dy : dy + h : 2, dx : dx + w : 2, :] @ weight[dy, dx]
        return out

    def __call__(self, images) -> np.ndarray:
        feats = []
        for lo in range(0, len(images), 128):
            x = np.asarray(images[lo : lo + 128], dtype=np.float32) * 2.0 - 1.0
            if x.ndim != 4 or x.shape[3] != 3:
                raise ShapeError(f"expected (N, H, W, 3) images, got shape {x.shape}")
            for w in self.weights:
                x = self._conv_s2(x, w)
                x = np.where(x > 0, x, 0.2 * x)
            feats.append(x.mean(axis=(1, 2)))
        return np.concatenate(feats, axis=0).astype(np.float64)


def save_features(path: str | Path, features: np.ndarray) -> None:
    """Write a feature matrix as {count, dim} JSON header + float32 LE body."""
    features = np.ascontiguousarray(features, dtype="<f4")
    if features.ndim != 2:
        raise ShapeError(f"features must be (N, d), got shape {features.shape}")
    header = json.dumps({"count": int(features.shape[0]), "dim": int(features.shape[1])})
    with open(path, "wb") as fh:
        fh.write(header.encode() + b"\n")
        fh.write(features.tobytes())


def load_features(path: str | Path) -> np.ndarray:
    with open(path, "rb") as fh:
        try:
            header = json.loads(fh.readline().decode())
            count, dim = int(header["count"]), int(header["dim"])
            body = fh.read()
            feats = np.frombuffer(body, dtype="<f4")
            return feats.reshape(count, dim).astype(np.float64)
        except (ValueError, KeyError) as exc:
            raise ConfigError(f"malformed feature file {path}: {exc}") from exc

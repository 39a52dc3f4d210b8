"""Label-map codec.

Conversions between the three representations of a semantic image:

* label map     -- (H, W) uint8 array of class ids in {0..K-1}
* class volume  -- (H, W, K) float array, each pixel vector on the K-simplex
* RGB image     -- (H, W, 3) float array with channels in [0, 1]

plus nearest-color quantization used to audit RGB-GAN outputs against a
palette. All functions are pure and safe to call concurrently.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigError, DatasetError, LabelRangeError, ShapeError

# Label ids are stored as unsigned 8-bit, capping palettes at 256 classes.
MAX_CLASSES = 256

SIMPLEX_ATOL = 1e-5


@dataclass(frozen=True)
class PaletteEntry:
    id: int
    name: str
    rgb: tuple[int, int, int]


@dataclass(frozen=True)
class Palette:
    """Ordered bijection between label ids and RGB colors."""

    entries: tuple[PaletteEntry, ...]

    def __post_init__(self):
        if len(self.entries) == 0:
            raise ConfigError("palette must contain at least one class")
        if len(self.entries) > MAX_CLASSES:
            raise ConfigError(f"palette has {len(self.entries)} classes, max is {MAX_CLASSES}")
        ids = [e.id for e in self.entries]
        if ids != list(range(len(self.entries))):
            raise ConfigError(f"palette ids must be exactly 0..{len(self.entries) - 1} in order, got {ids}")
        colors = set()
        for e in self.entries:
            if len(e.rgb) != 3 or any(not (0 <= c <= 255) for c in e.rgb):
                raise ConfigError(f"class {e.id} has invalid color {e.rgb}")
            if tuple(e.rgb) in colors:
                raise ConfigError(f"duplicate palette color {e.rgb}")
            colors.add(tuple(e.rgb))

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def num_classes(self) -> int:
        return len(self.entries)

    @property
    def colors(self) -> np.ndarray:
        """(K, 3) float64 colors scaled to [0, 1]."""
        return np.array([e.rgb for e in self.entries], dtype=np.float64) / 255.0

    @property
    def colors_u8(self) -> np.ndarray:
        return np.array([e.rgb for e in self.entries], dtype=np.uint8)

    def to_json(self) -> str:
        doc = [{"id": e.id, "name": e.name, "rgb": list(e.rgb)} for e in self.entries]
        return json.dumps(doc, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "Palette":
        doc = json.loads(text)
        try:
            entries = tuple(PaletteEntry(int(e["id"]), str(e["name"]), tuple(int(c) for c in e["rgb"])) for e in doc)
        except (TypeError, KeyError) as exc:
            raise ConfigError(f"malformed palette document: {exc}") from exc
        return cls(entries)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Palette":
        return cls.from_json(Path(path).read_text())


def make_palette(classes: list[tuple[int, str, tuple[int, int, int]]]) -> Palette:
    return Palette(tuple(PaletteEntry(i, n, tuple(c)) for i, n, c in classes))


def validate_labels(labels: np.ndarray, num_classes: int) -> np.ndarray:
    """Check a (H, W) label map against a class count; returns it as uint8."""
    labels = np.asarray(labels)
    if labels.ndim != 2:
        raise ShapeError(f"label map must be 2-D (H, W), got shape {labels.shape}")
    bad = labels >= num_classes
    if bad.any():
        flat = int(np.argmax(bad))
        y, x = divmod(flat, labels.shape[1])
        raise LabelRangeError(
            f"label {int(labels[y, x])} at pixel ({y}, {x}) is out of range for {num_classes} classes"
        )
    return labels.astype(np.uint8, copy=False)


def validate_prob_volume(probs: np.ndarray, atol: float = SIMPLEX_ATOL) -> None:
    """Check the class-volume invariant: values in [0,1], pixel sums == 1."""
    probs = np.asarray(probs)
    if probs.ndim != 3:
        raise ShapeError(f"class volume must be 3-D (H, W, K), got shape {probs.shape}")
    if probs.min() < -atol or probs.max() > 1 + atol:
        raise ShapeError("class volume has entries outside [0, 1]")
    sums = probs.sum(axis=-1)
    if not np.allclose(sums, 1.0, atol=atol):
        worst = float(np.abs(sums - 1.0).max())
        raise ShapeError(f"class volume pixel sums deviate from 1 by up to {worst:.3g}")


def one_hot_encode(labels: np.ndarray, num_classes: int) -> np.ndarray:
    """Encode a label map as a (H, W, K) one-hot volume (float32)."""
    labels = validate_labels(labels, num_classes)
    return np.eye(num_classes, dtype=np.float32)[labels]


def collapse(probs: np.ndarray) -> np.ndarray:
    """Collapse a class volume to a label map via per-pixel argmax.

    Ties break toward the lowest class id, so the result is deterministic.
    """
    probs = np.asarray(probs)
    if probs.ndim != 3:
        raise ShapeError(f"expected (H, W, K) volume, got shape {probs.shape}")
    return np.argmax(probs, axis=-1).astype(np.uint8)


def to_rgb(labels: np.ndarray, palette: Palette) -> np.ndarray:
    """Render a label map as a (H, W, 3) float image of palette colors."""
    labels = validate_labels(labels, palette.num_classes)
    return palette.colors[labels]


def _nearest_sq_distances(image: np.ndarray, palette: Palette) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[-1] != 3:
        raise ShapeError(f"expected (H, W, 3) image, got shape {image.shape}")
    diff = image[:, :, None, :] - palette.colors[None, None, :, :]
    return np.einsum("hwkc,hwkc->hwk", diff, diff)


def quantize_rgb(image: np.ndarray, palette: Palette) -> np.ndarray:
    """Map each pixel to the palette class with minimal squared RGB distance.

    Distances are measured in [0, 1]-scaled channel space; ties break toward
    the lowest class id.
    """
    return np.argmin(_nearest_sq_distances(image, palette), axis=-1).astype(np.uint8)


def spurious_pixel_rate(image: np.ndarray, palette: Palette, tol: float) -> float:
    """Fraction of pixels farther than `tol` from every palette color.

    A pixel counts as spurious when its nearest-palette squared distance
    strictly exceeds tol**2. Palette-exact renders score 0 at any tol >= 0.
    """
    if tol < 0:
        raise ConfigError(f"tolerance must be >= 0, got {tol}")
    d2 = _nearest_sq_distances(image, palette).min(axis=-1)
    return float(np.count_nonzero(d2 > tol * tol) / d2.size)


def save_label_png(labels: np.ndarray, path: str | Path) -> None:
    """Write a label map as a single-channel 8-bit grayscale PNG."""
    labels = np.asarray(labels)
    if labels.ndim != 2 or labels.dtype != np.uint8:
        raise ShapeError("label PNG expects a (H, W) uint8 array")
    Image.fromarray(labels, mode="L").save(path, format="PNG")


def load_label_png(path: str | Path, num_classes: int | None = None) -> np.ndarray:
    path = Path(path)
    try:
        with Image.open(path) as img:
            if img.mode != "L":
                raise DatasetError(f"{path.name}: expected 8-bit grayscale PNG, got mode {img.mode}")
            labels = np.asarray(img, dtype=np.uint8)
    except DatasetError:
        raise
    except Exception as exc:
        raise DatasetError(f"{path.name}: unreadable PNG ({exc})") from exc
    if num_classes is not None:
        try:
            validate_labels(labels, num_classes)
        except LabelRangeError as exc:
            raise DatasetError(f"{path.name}: {exc}") from exc
    return labels


def rgb_to_u8(image: np.ndarray) -> np.ndarray:
    """Quantize a [0,1] float image to 0..255 by round-half-up."""
    image = np.asarray(image, dtype=np.float64)
    return np.clip(np.floor(image * 255.0 + 0.5), 0, 255).astype(np.uint8)


def save_rgb_png(image: np.ndarray, path: str | Path) -> None:
    """Write a [0,1] float RGB image as an 8-bit RGB PNG."""
    image = np.asarray(image)
    if image.ndim != 3 or image.shape[-1] != 3:
        raise ShapeError(f"expected (H, W, 3) image, got shape {image.shape}")
    Image.fromarray(rgb_to_u8(image), mode="RGB").save(path, format="PNG")


def load_rgb_png(path: str | Path) -> np.ndarray:
    with Image.open(path) as img:
        return np.asarray(img.convert("RGB"), dtype=np.float64) / 255.0

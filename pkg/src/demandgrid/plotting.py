"""Color-mapped heatmap rendering for demand frames and masks.

Count frames are 16-bit grayscale on disk, which is faithful but unreadable
by eye. This module maps counts onto a 256-level color ramp and writes
ordinary 8-bit RGB PNGs, plus a sidecar legend CSV recording the count value
each color level stands for. Ramps are built by linear interpolation between
a few anchor colors, so rendering needs nothing beyond numpy and Pillow and
repeated runs produce byte-identical files.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import ConfigError, DataError

__all__ = [
    "COLORMAPS",
    "colormap_lut",
    "render_heatmap",
    "write_heatmap",
    "read_heatmap",
]

LUT_SIZE = 256

# anchor stops as (position in [0, 1], (r, g, b))
COLORMAPS = {
    "viridis": (
        (0.00, (68, 1, 84)),
        (0.25, (59, 82, 139)),
        (0.50, (33, 145, 140)),
        (0.75, (94, 201, 98)),
        (1.00, (253, 231, 37)),
    ),
    "heat": (
        (0.00, (0, 0, 0)),
        (0.35, (170, 0, 0)),
        (0.70, (255, 160, 0)),
        (1.00, (255, 255, 255)),
    ),
    "gray": (
        (0.00, (0, 0, 0)),
        (1.00, (255, 255, 255)),
    ),
}


def colormap_lut(name: str) -> np.ndarray:
    """Return a (256, 3) uint8 lookup table for a named color ramp."""
    if name not in COLORMAPS:
        choices = ", ".join(sorted(COLORMAPS))
        raise ConfigError(f"unknown colormap {name!r}; choices: {choices}")
    stops = COLORMAPS[name]
    pos = np.array([s[0] for s in stops])
    t = np.linspace(0.0, 1.0, LUT_SIZE)
    lut = np.empty((LUT_SIZE, 3), dtype=np.uint8)
    for ch in range(3):
        vals = np.array([s[1][ch] for s in stops], dtype=float)
        lut[:, ch] = np.rint(np.interp(t, pos, vals)).astype(np.uint8)
    return lut


def _level_index(values: np.ndarray, vmax: float) -> np.ndarray:
    scaled = values.astype(np.float64) * ((LUT_SIZE - 1) / vmax)
    return np.clip(np.rint(scaled), 0, LUT_SIZE - 1).astype(np.intp)


def render_heatmap(
    values: np.ndarray, lut: np.ndarray, vmax: float | None = None
) -> np.ndarray:
    """Map a 2-D nonnegative array onto an (H, W, 3) uint8 RGB image.

    Values are scaled linearly so 0 hits level 0 and vmax hits level 255;
    anything above vmax saturates. vmax defaults to the array maximum (or 1
    for an all-zero array, keeping the zero image at the ramp's low end).
    """
    a = np.asarray(values)
    if a.ndim != 2:
        raise DataError("render_heatmap: expected a 2-D array")
    if not np.all(np.isfinite(a.astype(np.float64))):
        raise DataError("render_heatmap: non-finite values")
    if a.size and a.min() < 0:
        raise DataError("render_heatmap: negative values")
    if vmax is None:
        vmax = float(a.max()) if a.size and a.max() > 0 else 1.0
    if not (np.isfinite(vmax) and vmax > 0):
        raise ConfigError(f"vmax must be positive, got {vmax}")
    lut = np.asarray(lut)
    if lut.shape != (LUT_SIZE, 3) or lut.dtype != np.uint8:
        raise ConfigError("lut must be a (256, 3) uint8 array")
    return lut[_level_index(a, vmax)]


def write_heatmap(
    values: np.ndarray,
    path: str | Path,
    colormap: str = "viridis",
    vmax: float | None = None,
) -> tuple[Path, Path]:
    """Write an RGB heatmap PNG and its legend CSV; return both paths.

    The legend lives next to the image as <stem>_legend.csv with one row per
    color level: level, the count value that level represents, and its RGB.
    """
    path = Path(path)
    a = np.asarray(values)
    lut = colormap_lut(colormap)
    if vmax is None:
        vmax = float(a.max()) if a.size and np.max(a) > 0 else 1.0
    rgb = render_heatmap(a, lut, vmax)
    img = Image.fromarray(rgb)
    if img.mode != "RGB":
        raise DataError(f"unexpected image mode {img.mode} for heatmap write")
    img.save(path, format="PNG")

    legend_path = path.with_name(path.stem + "_legend.csv")
    with open(legend_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["level", "value", "r", "g", "b"])
        for i in range(LUT_SIZE):
            value = i * vmax / (LUT_SIZE - 1)
            writer.writerow([i, repr(value), *lut[i]])
    return path, legend_path


def read_heatmap(path: str | Path) -> np.ndarray:
    """Read a rendered heatmap back as an (H, W, 3) uint8 array."""
    try:
        img = Image.open(path)
        img.load()
    except Exception as exc:
        raise DataError(f"cannot read image {path}: {exc}") from exc
    if img.mode != "RGB":
        raise DataError(f"expected an RGB image, got mode {img.mode}")
    return np.asarray(img, dtype=np.uint8)

"""Active-cell masking.

A cell is active when it sees at least one pick-up or drop-off anywhere in
the chosen hour set. Metrics and ranking statistics run only over the active
set Omega, enumerated in row-major order so masked vectors have a stable,
reproducible layout.
"""

from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError
from .raster import FrameStore, read_image16, write_image16

__all__ = [
    "build_mask",
    "active_cells",
    "apply_mask",
    "masked_series",
    "write_mask",
    "read_mask",
]


def build_mask(store: FrameStore, hours: Sequence[int] | None = None) -> np.ndarray:
    """(H, W) uint8 mask; 1 where any activity occurs in the given hours.

    hours=None uses every frame in the store. Restricting to a training
    subset makes the evaluation blind to activity appearing only later.
    """
    if hours is None:
        pickup, dropoff = store.pickup, store.dropoff
    else:
        idx = np.asarray(list(hours), dtype=np.int64)
        if idx.size == 0:
            raise DataError("build_mask: empty hour set")
        if idx.min() < 0 or idx.max() >= store.n_hours:
            raise DataError("build_mask: hour index out of range")
        pickup, dropoff = store.pickup[idx], store.dropoff[idx]
    total = pickup.sum(axis=0, dtype=np.int64) + dropoff.sum(axis=0, dtype=np.int64)
    return (total > 0).astype(np.uint8)


def active_cells(mask: np.ndarray) -> np.ndarray:
    """Active (r, c) pairs in row-major order, shape (|Omega|, 2)."""
    m = np.asarray(mask)
    if m.ndim != 2:
        raise DataError("active_cells: mask must be 2-D")
    rows, cols = np.nonzero(m)  # nonzero scans row-major
    return np.stack([rows, cols], axis=1)


def apply_mask(arr: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Gather active cells in Omega order.

    (H, W) input yields (|Omega|,); leading dimensions are preserved, so
    (T, H, W) yields (T, |Omega|).
    """
    a = np.asarray(arr)
    m = np.asarray(mask).astype(bool)
    if a.shape[-2:] != m.shape:
        raise DataError(
            f"apply_mask: trailing shape {a.shape[-2:]} does not match mask {m.shape}"
        )
    return a[..., m]


def masked_series(store: FrameStore, mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(T, |Omega|) float64 pick-up and drop-off series."""
    p = apply_mask(store.pickup, mask).astype(np.float64)
    d = apply_mask(store.dropoff, mask).astype(np.float64)
    return p, d


def write_mask(mask: np.ndarray, directory: str | Path) -> tuple[Path, Path]:
    """mask.png (0/1 16-bit grayscale) plus active_cells.csv in Omega order."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    png_path = directory / "mask.png"
    csv_path = directory / "active_cells.csv"
    write_image16(np.asarray(mask, dtype=np.uint16), png_path)
    cells = active_cells(mask)
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "row", "col"])
        for i, (r, c) in enumerate(cells):
            w.writerow([i, int(r), int(c)])
    return png_path, csv_path


def read_mask(directory: str | Path) -> np.ndarray:
    directory = Path(directory)
    arr = read_image16(directory / "mask.png")
    if arr.max(initial=0) > 1:
        raise DataError("mask.png: values must be 0 or 1")
    mask = arr.astype(np.uint8)
    csv_path = directory / "active_cells.csv"
    if csv_path.exists():
        cells = active_cells(mask)
        with open(csv_path, "r", newline="", encoding="utf-8") as fh:
            listed = [(int(row["row"]), int(row["col"])) for row in csv.DictReader(fh)]
        if len(listed) != len(cells) or any(
            tuple(a) != b for a, b in zip(cells, listed)
        ):
            raise DataError("active_cells.csv disagrees with mask.png")
    return mask

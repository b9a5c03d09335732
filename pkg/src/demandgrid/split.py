"""Chronological train/validation/test splitting with leakage gaps.

Targets are hour indices t with a full lag window behind them (t >= L).
Subsets are contiguous blocks in time order; between adjacent non-empty
blocks a gap of L + buffer - 1 candidate hours is discarded so that no
sample's input window reaches back into another subset's targets.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from datetime import date, datetime, time, timedelta
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigError, DataError

__all__ = [
    "SplitSpec",
    "Split",
    "enumerate_candidates",
    "make_split",
    "verify_no_leakage",
    "write_split",
    "read_split",
]

SUBSET_NAMES = ("train", "val", "test")


@dataclass(frozen=True)
class SplitSpec:
    """Split geometry: lag horizon, safety buffer, subset fractions.

    Fractions may sum slightly off 1 (rounded inputs are common); they are
    renormalized. Anything off by more than 1e-3 is treated as a mistake.
    """

    max_lag: int = 504
    buffer: int = 1
    fractions: tuple[float, float, float] = (0.5164, 0.2417, 0.2418)

    def __post_init__(self) -> None:
        if self.max_lag < 1:
            raise ConfigError("max_lag must be >= 1")
        if self.buffer < 1:
            raise ConfigError("buffer must be >= 1 to prevent window overlap")
        if len(self.fractions) != 3:
            raise ConfigError("fractions must have exactly 3 entries")
        if any(f < 0 for f in self.fractions):
            raise ConfigError("fractions must be non-negative")
        total = sum(self.fractions)
        if abs(total - 1.0) > 1e-3 or total <= 0:
            raise ConfigError(f"fractions sum to {total}, expected 1")

    @property
    def normalized_fractions(self) -> tuple[float, float, float]:
        total = sum(self.fractions)
        return tuple(f / total for f in self.fractions)

    @property
    def gap_candidates(self) -> int:
        """Candidates discarded between adjacent non-empty subsets."""
        return self.max_lag + self.buffer - 1


@dataclass
class Split:
    spec: SplitSpec
    n_hours: int
    subsets: dict[str, np.ndarray]

    @property
    def train(self) -> np.ndarray:
        return self.subsets["train"]

    @property
    def val(self) -> np.ndarray:
        return self.subsets["val"]

    @property
    def test(self) -> np.ndarray:
        return self.subsets["test"]

    def sizes(self) -> tuple[int, int, int]:
        return tuple(len(self.subsets[name]) for name in SUBSET_NAMES)


def enumerate_candidates(n_hours: int, max_lag: int) -> np.ndarray:
    """All hour indices with a complete lag window: t = L .. T-1."""
    if n_hours <= max_lag:
        raise DataError(
            f"need more than {max_lag} hours to form any sample, got {n_hours}"
        )
    return np.arange(max_lag, n_hours, dtype=np.int64)


def _block_sizes(n_usable: int, fractions: Sequence[float]) -> list[int]:
    """Cumulative-floor allocation; rounding remainders drift to later subsets."""
    sizes = [0, 0, 0]
    nz = [i for i, f in enumerate(fractions) if f > 0]
    cum = 0.0
    prev = 0
    for k, i in enumerate(nz):
        cum += fractions[i]
        boundary = n_usable if k == len(nz) - 1 else math.floor(n_usable * cum)
        sizes[i] = boundary - prev
        prev = boundary
    return sizes


def make_split(
    n_hours: int,
    spec: SplitSpec = SplitSpec(),
    boundaries: tuple[int, int] | None = None,
) -> Split:
    """Partition candidate targets into ordered train/val/test blocks.

    By default block sizes follow spec.fractions over the candidates left
    after reserving the inter-subset gaps. Passing boundaries pins the first
    validation and first test target explicitly; gaps are carved out of the
    hours immediately before each boundary.
    """
    candidates = enumerate_candidates(n_hours, spec.max_lag)
    if boundaries is not None:
        return _split_at(candidates, n_hours, spec, boundaries)
    fracs = spec.normalized_fractions
    nz = [i for i, f in enumerate(fracs) if f > 0]
    n_gaps = max(0, len(nz) - 1)
    usable = len(candidates) - n_gaps * spec.gap_candidates
    if usable < len(nz):
        raise DataError(
            f"{len(candidates)} candidates cannot hold {len(nz)} subsets "
            f"with {spec.gap_candidates}-hour gaps"
        )
    sizes = _block_sizes(usable, fracs)
    for i in nz:
        if sizes[i] == 0:
            raise DataError(
                f"fraction {fracs[i]:.4f} for {SUBSET_NAMES[i]} rounds to zero samples"
            )
    subsets: dict[str, np.ndarray] = {}
    pos = 0
    remaining = len(nz)
    for i, name in enumerate(SUBSET_NAMES):
        subsets[name] = candidates[pos : pos + sizes[i]]
        if sizes[i] > 0:
            pos += sizes[i]
            remaining -= 1
            if remaining > 0:
                pos += spec.gap_candidates
    return Split(spec=spec, n_hours=n_hours, subsets=subsets)


def _split_at(
    candidates: np.ndarray,
    n_hours: int,
    spec: SplitSpec,
    boundaries: tuple[int, int],
) -> Split:
    val_start, test_start = map(int, boundaries)
    margin = spec.max_lag + spec.buffer
    if not (candidates[0] < val_start < test_start <= candidates[-1]):
        raise ConfigError(
            f"boundaries must satisfy {candidates[0]} < val_start < test_start "
            f"<= {candidates[-1]}"
        )
    subsets = {
        "train": candidates[candidates <= val_start - margin],
        "val": candidates[(candidates >= val_start) & (candidates <= test_start - margin)],
        "test": candidates[candidates >= test_start],
    }
    for name, arr in subsets.items():
        if arr.size == 0:
            raise DataError(f"boundaries leave subset {name} empty")
    return Split(spec=spec, n_hours=n_hours, subsets=subsets)


def verify_no_leakage(split: Split) -> None:
    """Every cross-subset target pair must be at least L + buffer hours apart."""
    margin = split.spec.max_lag + split.spec.buffer
    names = [n for n in SUBSET_NAMES if len(split.subsets[n])]
    all_t = np.concatenate([split.subsets[n] for n in names]) if names else np.array([])
    if len(np.unique(all_t)) != len(all_t):
        raise DataError("subsets overlap")
    for i, a in enumerate(names):
        for b in names[i + 1 :]:
            ta = split.subsets[a][:, None]
            tb = split.subsets[b][None, :]
            d = int(np.abs(ta - tb).min())
            if d < margin:
                raise DataError(
                    f"subsets {a} and {b} are only {d} hours apart; "
                    f"need {margin} to keep input windows disjoint"
                )


def target_timestamp(start_day: date, t: int) -> datetime:
    return datetime.combine(start_day, time()) + timedelta(hours=int(t))


def write_split(split: Split, path: str | Path, start_day: date) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["subset", "target_hour_index", "target_timestamp"])
        for name in SUBSET_NAMES:
            for t in split.subsets[name]:
                w.writerow(
                    [name, int(t), target_timestamp(start_day, t).isoformat()]
                )


def read_split(path: str | Path, spec: SplitSpec = SplitSpec()) -> Split:
    subsets: dict[str, list[int]] = {name: [] for name in SUBSET_NAMES}
    with open(path, "r", newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            name = row["subset"]
            if name not in subsets:
                raise DataError(f"{path}: unknown subset {name!r}")
            subsets[name].append(int(row["target_hour_index"]))
    arrays = {k: np.asarray(sorted(v), dtype=np.int64) for k, v in subsets.items()}
    if all(a.size == 0 for a in arrays.values()):
        raise DataError(f"{path}: no samples")
    last = max(int(a[-1]) for a in arrays.values() if a.size)
    return Split(spec=spec, n_hours=last + 1, subsets=arrays)

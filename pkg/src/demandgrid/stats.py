"""Paired statistical testing for model comparison.

Per-sample errors from two configurations are compared with the Wilcoxon
signed-rank test: exact tail probabilities for small samples without ties,
a tie-corrected normal approximation with continuity correction otherwise.
Families of comparisons are corrected with Holm's step-down procedure.
Non-inferiority shifts the paired differences by a margin proportional to
the reference mean and tests one-sided. A Shapiro-Wilk normality check on
the differences is carried along as a diagnostic.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from statistics import NormalDist
from typing import Mapping, Sequence

import numpy as np

from .errors import DataError, DegenerateDataError

__all__ = [
    "WilcoxonResult",
    "NonInferiorityResult",
    "PairComparison",
    "AblationResult",
    "wilcoxon_signed_rank",
    "holm",
    "shapiro_wilk",
    "non_inferiority",
    "compare_configs",
    "ablate_depth",
]

EXACT_LIMIT = 25  # largest n for exact signed-rank tails (no ties)

_ALTERNATIVES = ("two-sided", "less", "greater")


def _norm_sf(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2.0))


def _norm_cdf(z: float) -> float:
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


_PPF = NormalDist().inv_cdf


@dataclass(frozen=True)
class WilcoxonResult:
    statistic: float  # W+: rank sum of positive differences
    pvalue: float
    n_effective: int  # pairs left after dropping zero differences
    method: str  # "exact" or "normal"


def _signed_ranks(d: np.ndarray) -> tuple[np.ndarray, np.ndarray, bool]:
    """Average ranks of |d| and the positive-difference indicator."""
    mag = np.abs(d)
    order = np.argsort(mag, kind="stable")
    ranks = np.empty(d.size, dtype=np.float64)
    sorted_mag = mag[order]
    i = 0
    has_ties = False
    while i < d.size:
        j = i
        while j + 1 < d.size and sorted_mag[j + 1] == sorted_mag[i]:
            j += 1
        if j > i:
            has_ties = True
        ranks[order[i : j + 1]] = (i + j) / 2 + 1
        i = j + 1
    return ranks, d > 0, has_ties


def _exact_counts(n: int) -> np.ndarray:
    """Null distribution of W+ for ranks 1..n: counts[w] subsets summing to w."""
    total = n * (n + 1) // 2
    counts = np.zeros(total + 1, dtype=np.int64)
    counts[0] = 1
    for r in range(1, n + 1):
        counts[r:] = counts[r:] + counts[:-r]
    return counts


def wilcoxon_signed_rank(
    d: Sequence[float], alternative: str = "two-sided"
) -> WilcoxonResult:
    """Signed-rank test on paired differences.

    Zero differences are dropped. With at most EXACT_LIMIT untied pairs the
    tail probability is exact; otherwise a normal approximation with tie
    correction and 0.5 continuity correction is used. alternative "less"
    rejects when differences tend negative; "greater" when positive.
    """
    if alternative not in _ALTERNATIVES:
        raise DataError(f"alternative must be one of {_ALTERNATIVES}")
    arr = np.asarray(d, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise DataError("wilcoxon: need a non-empty 1-D difference vector")
    if np.isnan(arr).any():
        raise DataError("wilcoxon: differences contain NaN")
    arr = arr[arr != 0.0]
    n = arr.size
    if n == 0:
        raise DegenerateDataError(
            "wilcoxon: all differences are zero; the paired results are identical"
        )
    ranks, positive, has_ties = _signed_ranks(arr)
    w_plus = float(ranks[positive].sum())
    if n <= EXACT_LIMIT and not has_ties:
        counts = _exact_counts(n)
        total = float(2**n)
        w_int = int(round(w_plus))
        cdf = float(counts[: w_int + 1].sum()) / total
        sf = float(counts[w_int:].sum()) / total
        if alternative == "two-sided":
            p = min(1.0, 2.0 * min(cdf, sf))
        elif alternative == "greater":
            p = sf
        else:
            p = cdf
        return WilcoxonResult(w_plus, p, n, "exact")
    mu = n * (n + 1) / 4.0
    tie_term = 0.0
    _, counts_per = np.unique(np.abs(arr), return_counts=True)
    tie_term = float(((counts_per**3 - counts_per).sum())) / 48.0
    sigma2 = n * (n + 1) * (2 * n + 1) / 24.0 - tie_term
    if sigma2 <= 0:
        raise DegenerateDataError("wilcoxon: zero variance in ranks")
    sigma = math.sqrt(sigma2)
    r = w_plus - mu
    if alternative == "two-sided":
        z = (r - 0.5 * np.sign(r)) / sigma if r != 0 else 0.0
        p = min(1.0, 2.0 * _norm_sf(abs(z)))
    elif alternative == "greater":
        z = (r - 0.5) / sigma
        p = _norm_sf(z)
    else:
        z = (r + 0.5) / sigma
        p = _norm_cdf(z)
    return WilcoxonResult(w_plus, p, n, "normal")


def holm(pvalues: Sequence[float]) -> np.ndarray:
    """Step-down adjusted p-values, returned in the input order.

    Sorted ascending, the i-th smallest raw p is scaled by (m - i), capped at
    one, and forced non-decreasing along the sequence.
    """
    p = np.asarray(pvalues, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise DataError("holm: need a non-empty 1-D p-value vector")
    if np.isnan(p).any() or (p < 0).any() or (p > 1).any():
        raise DataError("holm: p-values must lie in [0, 1]")
    m = p.size
    order = np.argsort(p, kind="stable")
    adj = np.empty(m, dtype=np.float64)
    running = 0.0
    for pos, idx in enumerate(order):
        running = max(running, min(1.0, (m - pos) * p[idx]))
        adj[idx] = running
    return adj


# Shapiro-Wilk polynomial coefficients (highest power first).
_SW_C1 = (-2.706056, 4.434685, -2.071190, -0.147981, 0.221157, 0.0)
_SW_C2 = (-3.582633, 5.682633, -1.752461, -0.293762, 0.042981, 0.0)
_SW_C3 = (-0.0006714, 0.025054, -0.39978, 0.5440)
_SW_C4 = (-0.0020322, 0.062767, -0.77857, 1.3822)
_SW_C5 = (0.0038915, -0.083751, -0.31082, -1.5861)
_SW_C6 = (0.0030302, -0.082676, -0.4803)


def _poly(coeffs: Sequence[float], x: float) -> float:
    out = 0.0
    for c in coeffs:
        out = out * x + c
    return out


def shapiro_wilk(
    x: Sequence[float], subsample_limit: int = 5000, seed: int = 0
) -> tuple[float, float]:
    """Normality statistic W and its p-value.

    Valid for 3..subsample_limit observations; larger inputs are reduced to a
    seeded random subsample so the result stays reproducible.
    """
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1:
        raise DataError("shapiro_wilk: need a 1-D sample")
    if arr.size < 3:
        raise DataError("shapiro_wilk: need at least 3 observations")
    if np.isnan(arr).any():
        raise DataError("shapiro_wilk: sample contains NaN")
    if arr.size > subsample_limit:
        rng = np.random.default_rng(seed)
        arr = rng.choice(arr, size=subsample_limit, replace=False)
    xs = np.sort(arr)
    n = xs.size
    if xs[0] == xs[-1]:
        raise DegenerateDataError("shapiro_wilk: all observations are identical")

    m = np.array([_PPF((i - 0.375) / (n + 0.25)) for i in range(1, n + 1)])
    mm = float(m @ m)
    a = np.empty(n, dtype=np.float64)
    if n == 3:
        a[0], a[1], a[2] = -math.sqrt(0.5), 0.0, math.sqrt(0.5)
    else:
        u = 1.0 / math.sqrt(n)
        c = m / math.sqrt(mm)
        a_n = c[-1] + _poly(_SW_C1, u)
        if n > 5:
            a_n1 = c[-2] + _poly(_SW_C2, u)
            phi = (mm - 2 * m[-1] ** 2 - 2 * m[-2] ** 2) / (
                1 - 2 * a_n**2 - 2 * a_n1**2
            )
            a[2:-2] = m[2:-2] / math.sqrt(phi)
            a[-1], a[-2] = a_n, a_n1
            a[0], a[1] = -a_n, -a_n1
        else:
            phi = (mm - 2 * m[-1] ** 2) / (1 - 2 * a_n**2)
            a[1:-1] = m[1:-1] / math.sqrt(phi)
            a[-1] = a_n
            a[0] = -a_n

    ssd = float(((xs - xs.mean()) ** 2).sum())
    w = float((a @ xs) ** 2) / ssd
    w = min(w, 1.0)

    if n == 3:
        p = 6.0 / math.pi * (math.asin(math.sqrt(w)) - math.asin(math.sqrt(0.75)))
        return w, min(1.0, max(0.0, p))
    w1 = 1.0 - w
    if n <= 11:
        gamma = _poly((0.459, -2.273), n)
        arg = gamma - math.log(max(w1, 1e-300))
        if arg <= 0:
            return w, 0.0
        z = (-math.log(arg) - _poly(_SW_C3, n)) / math.exp(_poly(_SW_C4, n))
    else:
        ln_n = math.log(n)
        z = (math.log(max(w1, 1e-300)) - _poly(_SW_C5, ln_n)) / math.exp(
            _poly(_SW_C6, ln_n)
        )
    return w, min(1.0, max(0.0, _norm_sf(z)))


@dataclass(frozen=True)
class NonInferiorityResult:
    margin: float  # absolute margin subtracted from the differences
    margin_frac: float
    test: WilcoxonResult

    @property
    def pvalue(self) -> float:
        return self.test.pvalue


def non_inferiority(
    candidate: Sequence[float],
    reference: Sequence[float],
    margin_frac: float = 0.02,
) -> NonInferiorityResult:
    """One-sided test that candidate errors exceed reference by less than the
    margin, set to margin_frac of the reference mean."""
    cand = np.asarray(candidate, dtype=np.float64)
    ref = np.asarray(reference, dtype=np.float64)
    if cand.shape != ref.shape or cand.ndim != 1 or cand.size == 0:
        raise DataError("non_inferiority: need matching 1-D error vectors")
    if margin_frac <= 0:
        raise DataError("non_inferiority: margin_frac must be positive")
    margin = margin_frac * float(ref.mean())
    if margin <= 0:
        raise DataError("non_inferiority: reference mean must be positive")
    test = wilcoxon_signed_rank(cand - ref - margin, alternative="less")
    return NonInferiorityResult(margin=margin, margin_frac=margin_frac, test=test)


@dataclass(frozen=True)
class PairComparison:
    name_a: str
    name_b: str
    mean_a: float
    mean_b: float
    statistic: float
    pvalue: float
    adjusted_p: float
    n_effective: int  # pairs surviving zero-difference removal
    better: str  # name with the lower mean error
    shapiro_p: float | None  # normality of differences, diagnostic only


def compare_configs(
    errors: Mapping[str, Sequence[float]], alpha: float = 0.05
) -> list[PairComparison]:
    """All pairwise two-sided signed-rank tests, Holm-corrected as one family.

    Every configuration must provide per-sample errors on the same sample
    set. A pair with identical errors everywhere has no paired signal and is
    reported as degenerate.
    """
    names = list(errors.keys())
    if len(names) < 2:
        raise DataError("compare_configs: need at least two configurations")
    arrays = {k: np.asarray(v, dtype=np.float64) for k, v in errors.items()}
    length = {a.size for a in arrays.values()}
    if len(length) != 1:
        raise DataError("compare_configs: per-sample error vectors differ in length")
    pairs = list(itertools.combinations(names, 2))
    raw = []
    for a, b in pairs:
        diff = arrays[a] - arrays[b]
        if (diff == 0).all():
            raise DegenerateDataError(
                f"compare_configs: {a} and {b} produced identical errors"
            )
        raw.append(wilcoxon_signed_rank(diff, alternative="two-sided"))
    adjusted = holm([r.pvalue for r in raw])
    out = []
    for (a, b), res, adj in zip(pairs, raw, adjusted):
        diff = arrays[a] - arrays[b]
        shapiro_p: float | None = None
        nonzero = diff[diff != 0]
        if 3 <= nonzero.size and nonzero.min() != nonzero.max():
            shapiro_p = shapiro_wilk(nonzero)[1]
        mean_a, mean_b = float(arrays[a].mean()), float(arrays[b].mean())
        out.append(
            PairComparison(
                name_a=a,
                name_b=b,
                mean_a=mean_a,
                mean_b=mean_b,
                statistic=res.statistic,
                pvalue=res.pvalue,
                adjusted_p=float(adj),
                n_effective=res.n_effective,
                better=a if mean_a <= mean_b else b,
                shapiro_p=shapiro_p,
            )
        )
    return out


@dataclass(frozen=True)
class AblationResult:
    best_depth: int  # depth (lags per channel) with the lowest mean error
    raw_p: dict[int, float]  # non-inferiority p per shallower depth
    adjusted_p: dict[int, float]  # Holm-corrected within the family
    minimal_depth: int  # shallowest depth accepted as non-inferior
    mean_error: dict[int, float]

    @property
    def minimal_channels(self) -> int:
        return 2 * self.minimal_depth


def ablate_depth(
    errors_by_depth: Mapping[int, Sequence[float]],
    alpha: float = 0.05,
    margin_frac: float = 0.02,
) -> AblationResult:
    """Find the shallowest configuration non-inferior to the best one.

    Depth counts lags per channel (a depth-n input has 2n channels). All
    depths shallower than the best-performing one are tested against it as a
    Holm-corrected family; the smallest accepted depth wins, the best depth
    itself when none is accepted.
    """
    if not errors_by_depth:
        raise DataError("ablate_depth: no configurations")
    arrays = {int(k): np.asarray(v, dtype=np.float64) for k, v in errors_by_depth.items()}
    if any(k < 1 for k in arrays):
        raise DataError("ablate_depth: depths must be >= 1")
    means = {k: float(v.mean()) for k, v in arrays.items()}
    best = min(means, key=lambda k: (means[k], k))
    family = sorted(k for k in arrays if k < best)
    raw: dict[int, float] = {}
    for k in family:
        raw[k] = non_inferiority(arrays[k], arrays[best], margin_frac).pvalue
    if family:
        adj_vals = holm([raw[k] for k in family])
        adjusted = {k: float(v) for k, v in zip(family, adj_vals)}
    else:
        adjusted = {}
    accepted = [k for k in family if adjusted[k] < alpha]
    minimal = min(accepted) if accepted else best
    return AblationResult(
        best_depth=best,
        raw_p=raw,
        adjusted_p=adjusted,
        minimal_depth=minimal,
        mean_error=means,
    )

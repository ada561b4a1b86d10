"""Supermask mathematics.

A coat at sparsity ``k`` prunes the ``floor(k * n)`` scores of smallest
magnitude; ties are broken by flat index, lower index pruned first. Because
every coat of a tensor is cut from the same ordering, coats at increasing
sparsity are nested by construction, and the multicoat mask is simply the
number of cuts each score's rank clears.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np

from .errors import ConfigError, InputError

__all__ = [
    "DEFAULT_ALPHA",
    "LinearCoats",
    "SparsityPlan",
    "ThresholdMode",
    "bits_per_weight",
    "decay_schedule",
    "effective_weight",
    "empirical_cdf",
    "linear_thresholds",
    "multicoat_masks",
    "multicoat_masks_global",
    "nested_encoding_bits_per_weight",
    "normalize_scores",
    "num_pruned",
    "prune_order",
    "single_mask",
    "threshold_for_sparsity",
    "uniform_sparsities",
]

DEFAULT_ALPHA = 0.9996

# guards floor() against k * n landing a hair below an integer, e.g. 0.29 * 100
_FLOOR_SLACK = 1e-9


class ThresholdMode(str, enum.Enum):
    UNIFORM = "uniform"
    LINEAR = "linear"
    ADAPTIVE_LINEAR = "adaptive-linear"


def num_pruned(k: float, n: int) -> int:
    if not 0.0 <= k <= 1.0:
        raise InputError(f"sparsity {k} outside [0, 1]")
    return min(n, math.floor(k * n + _FLOOR_SLACK))


def prune_order(scores) -> np.ndarray:
    """Flat indices sorted by ascending |score|, ties by ascending index."""
    flat = np.abs(np.asarray(scores, dtype=np.float32)).ravel()
    if flat.size == 0:
        raise InputError("empty score tensor")
    return np.argsort(flat, kind="stable")


def _ranks(scores) -> np.ndarray:
    order = prune_order(scores)
    ranks = np.empty(order.size, dtype=np.int64)
    ranks[order] = np.arange(order.size)
    return ranks


def threshold_for_sparsity(scores, k: float) -> float:
    """Magnitude of the weakest surviving score; 0.0 when nothing is pruned.

    Exactly ``floor(k * n)`` scores fall below the cut in rank order. With
    tied magnitudes the returned value alone cannot separate them; masks are
    therefore built from ranks, and this value is informational.
    """
    if not 0.0 <= k < 1.0:
        raise InputError("k must lie in [0, 1)")
    order = prune_order(scores)
    pruned = num_pruned(k, order.size)
    if pruned == 0:
        return 0.0
    return float(np.abs(np.asarray(scores, dtype=np.float32)).ravel()[order[pruned]])


def single_mask(scores, k: float) -> np.ndarray:
    """Binary keep-mask (uint8) with exactly ``n - floor(k * n)`` ones."""
    if not 0.0 <= k < 1.0:
        raise InputError("k must lie in [0, 1)")
    scores = np.asarray(scores)
    ranks = _ranks(scores)
    return (ranks >= num_pruned(k, ranks.size)).astype(np.uint8).reshape(scores.shape)


def _check_sorted(sparsities: Sequence[float]) -> list[float]:
    ks = [float(k) for k in sparsities]
    if any(b < a for a, b in zip(ks, ks[1:])):
        raise InputError(f"sparsity list must be non-decreasing: {ks}")
    for k in ks:
        if not 0.0 <= k <= 1.0:
            raise InputError(f"sparsity {k} outside [0, 1]")
    return ks


def _counts_from_ranks(ranks: np.ndarray, sparsities: Sequence[float]) -> np.ndarray:
    cuts = np.array([num_pruned(k, ranks.size) for k in sparsities], dtype=np.int64)
    # number of cuts at or below each rank; cuts are sorted because K is
    return np.searchsorted(cuts, ranks, side="right").astype(np.uint8)


def multicoat_masks(scores, sparsities: Sequence[float]) -> np.ndarray:
    """Per-weight coat count: how many coats keep each score (uint8 in [0, N])."""
    ks = _check_sorted(sparsities)
    scores = np.asarray(scores)
    return _counts_from_ranks(_ranks(scores), ks).reshape(scores.shape)


def multicoat_masks_global(score_list: Sequence[np.ndarray], sparsities: Sequence[float]) -> list[np.ndarray]:
    """Coat counts with one ranking over all tensors jointly (global threshold)."""
    ks = _check_sorted(sparsities)
    flat = np.concatenate([np.asarray(s, dtype=np.float32).ravel() for s in score_list])
    counts = _counts_from_ranks(_ranks(flat), ks)
    out, start = [], 0
    for s in score_list:
        size = np.asarray(s).size
        out.append(counts[start:start + size].reshape(np.shape(s)))
        start += size
    return out


def effective_weight(w_rand, counts) -> np.ndarray:
    w_rand = np.asarray(w_rand)
    counts = np.asarray(counts)
    if w_rand.shape != counts.shape:
        raise InputError(f"weight shape {w_rand.shape} != mask shape {counts.shape}")
    return w_rand * counts.astype(w_rand.dtype)


def normalize_scores(scores, method: str = "rank") -> np.ndarray:
    """Map |scores| onto [0, 1].

    ``rank``: value r / (n - 1) for the element of ascending rank r.
    ``minmax``: (|s| - min) / (max - min).
    """
    mags = np.abs(np.asarray(scores, dtype=np.float64)).ravel()
    n = mags.size
    if n == 0:
        raise InputError("empty score tensor")
    if method == "rank":
        if n == 1:
            return np.ones(1)
        return _ranks(mags).astype(np.float64) / (n - 1)
    if method == "minmax":
        lo, hi = mags.min(), mags.max()
        if hi == lo:
            return np.ones(n)
        return (mags - lo) / (hi - lo)
    raise InputError(f"unknown normalization {method!r}")


def empirical_cdf(normalized: np.ndarray) -> Callable[[float], float]:
    """Fraction of normalized scores strictly below a threshold."""
    ordered = np.sort(np.asarray(normalized, dtype=np.float64))

    def cdf(threshold: float) -> float:
        return float(np.searchsorted(ordered, threshold, side="left")) / ordered.size

    return cdf


class LinearCoats(NamedTuple):
    thresholds: list  # float, or None for an invalid coat
    sparsities: list  # equivalent sparsity per coat, None where invalid


def linear_thresholds(
    s_t1: float,
    sigma_s: float,
    n_coats: int,
    alpha: float,
    score_cdf: Callable[[float], float],
) -> LinearCoats:
    """Linear coat thresholds s_t1 + (3 sigma / N)(n - 1) with the alpha cutoff.

    A coat whose threshold is not strictly below ``alpha`` is invalid
    (``None``). ``alpha >= 1`` disables the cutoff: thresholds are clipped to
    1.0 and every coat is kept, which is the non-adaptive Linear rule.
    """
    if n_coats < 1:
        raise InputError("number of coats must be >= 1")
    if not 0.0 < alpha:
        raise InputError("alpha must be positive")
    adaptive = alpha < 1.0
    thresholds, sparsities = [], []
    for n in range(1, n_coats + 1):
        t = s_t1 + (3.0 * sigma_s / n_coats) * (n - 1)
        if adaptive and not t < alpha:
            thresholds.append(None)
            sparsities.append(None)
            continue
        if not adaptive:
            t = min(t, 1.0)
        thresholds.append(t)
        sparsities.append(min(1.0, max(0.0, score_cdf(t))))
    return LinearCoats(thresholds, sparsities)


def uniform_sparsities(k1: float, n_coats: int) -> list[float]:
    if not 0.0 <= k1 < 1.0:
        raise InputError("k1 must lie in [0, 1)")
    if n_coats < 1:
        raise InputError("number of coats must be >= 1")
    return [k1 + (1.0 - k1) * (n - 1) / n_coats for n in range(1, n_coats + 1)]


def decay_schedule(sparsities: Sequence[float], t: int, total: int) -> list[float]:
    """Live sparsity list: ramps as K * 2t / T over the first half, then K."""
    if total <= 0:
        raise InputError("total epochs must be positive")
    if not 0 <= t <= total:
        raise InputError("epoch outside [0, T]")
    if 2 * t >= total:
        return [float(k) for k in sparsities]
    factor = 2.0 * t / total
    return [float(k) * factor for k in sparsities]


def bits_per_weight(sparsities: Sequence[float | None]) -> float:
    """Average mask cost per weight, 1 + sum of k_n over all but the last coat.

    Invalid coats (``None``) are dropped first.
    """
    ks = [k for k in sparsities if k is not None]
    if not ks:
        return 0.0
    return 1.0 + sum(ks[:-1])


def nested_encoding_bits_per_weight(sparsities: Sequence[float | None]) -> float:
    """Cost of storing coat n + 1 only over coat n's survivors: 1 + sum(1 - k_n)."""
    ks = [k for k in sparsities if k is not None]
    if not ks:
        return 0.0
    return 1.0 + sum(1.0 - k for k in ks[:-1])


@dataclass(frozen=True)
class SparsityPlan:
    """Coat sparsities (valid coats only) plus how they were chosen.

    ``requested_coats`` is N before any coat was invalidated, ``scope`` picks
    per-tensor (``layer``) or joint (``global``) ranking.
    """

    sparsities: tuple[float, ...]
    threshold_mode: ThresholdMode = ThresholdMode.UNIFORM
    alpha: float = DEFAULT_ALPHA
    scope: str = "layer"
    requested_coats: int = 0
    thresholds: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "sparsities", tuple(float(k) for k in self.sparsities))
        object.__setattr__(self, "threshold_mode", ThresholdMode(self.threshold_mode))
        if not self.sparsities:
            raise ConfigError("a plan needs at least one valid coat")
        try:
            _check_sorted(self.sparsities)
        except InputError as exc:
            raise ConfigError(str(exc)) from None
        # only the non-adaptive linear rule may produce a fully pruning coat
        if self.threshold_mode is not ThresholdMode.LINEAR and self.sparsities[-1] >= 1.0:
            raise ConfigError("sparsities must lie in [0, 1)")
        if self.sparsities[0] >= 1.0:
            raise ConfigError("k1 must lie in [0, 1)")
        if self.scope not in ("layer", "global"):
            raise ConfigError(f"unknown threshold scope {self.scope!r}")
        if not self.requested_coats:
            object.__setattr__(self, "requested_coats", len(self.sparsities))

    @property
    def coats(self) -> int:
        return len(self.sparsities)

    @property
    def k1(self) -> float:
        return self.sparsities[0]

    def live(self, t: int, total: int) -> list[float]:
        return decay_schedule(self.sparsities, t, total)

    @classmethod
    def s_sup(cls, k: float, scope: str = "layer") -> SparsityPlan:
        return cls((k,), ThresholdMode.UNIFORM, scope=scope)

    @classmethod
    def uniform(cls, k1: float, n_coats: int, scope: str = "layer") -> SparsityPlan:
        return cls(tuple(uniform_sparsities(k1, n_coats)), ThresholdMode.UNIFORM, scope=scope)

    @classmethod
    def linear(
        cls,
        k1: float,
        n_coats: int,
        pretrained_scores: Sequence[np.ndarray] | None = None,
        alpha: float = DEFAULT_ALPHA,
        scope: str = "layer",
        normalization: str = "rank",
    ) -> SparsityPlan:
        """Linear coat plan from a pre-trained single-coat score set.

        Without pre-trained scores the Uniform rule is used instead. The score
        distribution is taken over all tensors jointly.
        """
        mode = ThresholdMode.ADAPTIVE_LINEAR if alpha < 1.0 else ThresholdMode.LINEAR
        if not 0.0 <= k1 < 1.0:
            raise ConfigError("k1 must lie in [0, 1)")
        if pretrained_scores is None:
            return cls(tuple(uniform_sparsities(k1, n_coats)), mode, alpha, scope, n_coats)
        flat = np.concatenate([np.asarray(s, dtype=np.float32).ravel() for s in pretrained_scores])
        normalized = normalize_scores(flat, normalization)
        ordered = np.sort(normalized)
        s_t1 = float(ordered[min(num_pruned(k1, ordered.size), ordered.size - 1)])
        sigma = float(normalized.std())
        coats = linear_thresholds(s_t1, sigma, n_coats, alpha, empirical_cdf(normalized))
        # the first coat is pinned to k1 itself and always kept
        ks = [k1] + [max(k, k1) for k in coats.sparsities[1:] if k is not None]
        return cls(tuple(ks), mode, alpha, scope, n_coats, tuple(coats.thresholds))

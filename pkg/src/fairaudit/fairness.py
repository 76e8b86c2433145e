"""Local fairness-statistic extraction and global metric computation.

The transported statistic vector is always 8 counts indexed by
(attribute, label, prediction); demographic parity marginalizes over the
label so one protocol pass serves both parity and equalized odds.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import product

import numpy as np

DEFAULT_THRESHOLD = 0.5


class FairnessError(Exception):
    pass


class EmptyDatasetError(FairnessError):
    pass


class DegenerateGroupError(FairnessError):
    """A noised denominator clamped to the one-unit floor."""


class EmptyGroupError(FairnessError):
    """An intersectional group has no members."""


@dataclass
class Dataset:
    """Per-participant records: binary label, K protected attribute bits, score."""

    labels: np.ndarray          # (m,) in {0, 1}
    attributes: np.ndarray      # (m, K) in {0, 1}
    scores: np.ndarray          # (m,) in [0, 1]
    features: np.ndarray | None = None  # (m, d) provenance only

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int8)
        self.attributes = np.atleast_2d(np.asarray(self.attributes, dtype=np.int8))
        if self.attributes.shape[0] != self.labels.shape[0]:
            self.attributes = self.attributes.T
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if not (
            self.labels.shape[0] == self.attributes.shape[0] == self.scores.shape[0]
        ):
            raise FairnessError("labels, attributes, and scores lengths differ")
        if self.scores.size and (self.scores.min() < 0 or self.scores.max() > 1):
            raise FairnessError("scores must lie in [0, 1]")

    @property
    def sample_size(self) -> int:
        return int(self.labels.shape[0])

    @property
    def n_attributes(self) -> int:
        return int(self.attributes.shape[1])


def pool_datasets(datasets: list[Dataset]) -> Dataset:
    if not datasets:
        raise EmptyDatasetError("no datasets to pool")
    return Dataset(
        labels=np.concatenate([d.labels for d in datasets]),
        attributes=np.concatenate([d.attributes for d in datasets]),
        scores=np.concatenate([d.scores for d in datasets]),
    )


@dataclass
class LocalStatistics:
    """The 8 per-participant counts indexed [a, y, yhat], plus sample size."""

    counts: np.ndarray  # (2, 2, 2) int64
    sample_size: int
    intersectional_counts: dict[tuple[int, ...], np.ndarray] | None = None

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.shape != (2, 2, 2):
            raise FairnessError("counts must have shape (2, 2, 2)")
        if int(self.counts.sum()) != self.sample_size:
            raise FairnessError("counts must partition the sample")

    def marginal_first_attribute(self) -> np.ndarray:
        """Re-derive the (2,2,2) counts from intersectional counts."""
        if self.intersectional_counts is None:
            raise FairnessError("no intersectional counts present")
        out = np.zeros((2, 2, 2), dtype=np.int64)
        for bits, yy in self.intersectional_counts.items():
            out[bits[0]] += yy
        return out


def predict(scores: np.ndarray, threshold: float = DEFAULT_THRESHOLD) -> np.ndarray:
    # strict inequality: a score exactly at the threshold predicts 0
    return (scores > threshold).astype(np.int8)


def extract_local_stats(
    ds: Dataset,
    threshold: float = DEFAULT_THRESHOLD,
    intersectional: bool = False,
) -> LocalStatistics:
    if ds.sample_size == 0:
        raise EmptyDatasetError("cannot extract statistics from an empty dataset")
    if not 0 < threshold < 1:
        raise FairnessError("threshold must be in (0, 1)")
    yhat = predict(ds.scores, threshold)
    a0 = ds.attributes[:, 0]
    counts = np.zeros((2, 2, 2), dtype=np.int64)
    np.add.at(counts, (a0, ds.labels, yhat), 1)

    inter = None
    if intersectional:
        inter = {}
        keys = [tuple(int(b) for b in row) for row in ds.attributes]
        for key, y, p in zip(keys, ds.labels, yhat):
            if key not in inter:
                inter[key] = np.zeros((2, 2), dtype=np.int64)
            inter[key][y, p] += 1
    return LocalStatistics(counts=counts, sample_size=ds.sample_size,
                           intersectional_counts=inter)


def sum_statistics(stats: list[LocalStatistics]) -> np.ndarray:
    return np.sum([s.counts for s in stats], axis=0)


@dataclass
class AggregateStatistics:
    """Decrypted noised global counts plus simulator-side ground truth."""

    noised_fixed_point: np.ndarray  # (2, 2, 2) int64, fixed-point units
    fixed_point_scale: int
    true_counts: np.ndarray | None = None  # never visible to protocol parties

    def __post_init__(self):
        self.noised_fixed_point = np.asarray(self.noised_fixed_point, dtype=np.int64)
        if self.noised_fixed_point.shape != (2, 2, 2):
            raise FairnessError("noised counts must have shape (2, 2, 2)")

    @classmethod
    def exact(cls, counts: np.ndarray, fixed_point_scale: int = 10**6) -> "AggregateStatistics":
        counts = np.asarray(counts, dtype=np.int64)
        return cls(
            noised_fixed_point=counts * fixed_point_scale,
            fixed_point_scale=fixed_point_scale,
            true_counts=counts,
        )

def _parity_rates(agg: AggregateStatistics) -> tuple[list[Fraction], bool]:
    """Per-group positive rates; denominators below one unit clamp to the floor.

    Clamping happens at the denominator level so zero-noise runs stay
    bit-exact even when individual cells are legitimately zero.
    """
    units = agg.noised_fixed_point
    rates = []
    degenerate = False
    for a in (0, 1):
        pos = int(units[a, :, 1].sum())
        tot = int(units[a].sum())
        if tot < 1:
            tot = 1
            degenerate = True
        rates.append(Fraction(pos, tot))
    return rates, degenerate


def _stratum_rates(agg: AggregateStatistics) -> tuple[dict, bool]:
    units = agg.noised_fixed_point
    rates = {}
    degenerate = False
    for y in (0, 1):
        for a in (0, 1):
            pos = int(units[a, y, 1])
            tot = int(units[a, y].sum())
            if tot < 1:
                tot = 1
                degenerate = True
            rates[(a, y)] = Fraction(pos, tot)
    return rates, degenerate


def dp_violation(agg: AggregateStatistics, allow_degenerate: bool = False) -> float:
    """|P(yhat=1 | a=0) - P(yhat=1 | a=1)| from noised counts."""
    (r0, r1), degenerate = _parity_rates(agg)
    if degenerate and not allow_degenerate:
        raise DegenerateGroupError("a group denominator clamped to the floor")
    return float(abs(r0 - r1))


def eo_violation(agg: AggregateStatistics, allow_degenerate: bool = False) -> float:
    """max over y of |TPR/FPR disparity| between attribute groups."""
    rates, degenerate = _stratum_rates(agg)
    if degenerate and not allow_degenerate:
        raise DegenerateGroupError("a stratum denominator clamped to the floor")
    worst = max(abs(rates[(0, y)] - rates[(1, y)]) for y in (0, 1))
    return float(worst)


def group_positive_rates(
    stats_by_group: dict[tuple[int, ...], np.ndarray]
) -> dict[tuple[int, ...], float]:
    rates = {}
    for bits, yy in stats_by_group.items():
        yy = np.asarray(yy, dtype=np.int64)
        total = int(yy.sum())
        if total == 0:
            raise EmptyGroupError(f"intersectional group {bits} is empty")
        rates[bits] = float(Fraction(int(yy[:, 1].sum()), total))
    return rates


def intersectional_violation(
    stats_by_group: dict[tuple[int, ...], np.ndarray],
    n_attributes: int,
    sigma_noise: float = 0.0,
) -> tuple[float, float]:
    """Max pairwise positive-rate disparity across all 2^K groups.

    Returns (value, error_bound) with error_bound = K * sigma / min group
    size. Exact mode supports K <= 3; sigma_noise is assumed equal to the
    per-count Laplace scale of the aggregation run.
    """
    if n_attributes > 3:
        raise FairnessError("exact intersectional mode supports K <= 3")
    expected = {bits for bits in product((0, 1), repeat=n_attributes)}
    missing = expected - set(stats_by_group)
    if missing:
        raise EmptyGroupError(f"intersectional groups with no members: {sorted(missing)}")
    rates = group_positive_rates(stats_by_group)
    values = list(rates.values())
    value = max(values) - min(values)
    min_group = min(int(np.asarray(yy).sum()) for yy in stats_by_group.values())
    bound = n_attributes * sigma_noise / min_group
    return value, bound


def mean_pairwise_disparity(rates: dict[tuple[int, ...], float]) -> float:
    keys = sorted(rates)
    if len(keys) < 2:
        return 0.0
    diffs = [
        abs(rates[a] - rates[b])
        for i, a in enumerate(keys)
        for b in keys[i + 1:]
    ]
    return float(np.mean(diffs))


@dataclass
class BruteForceResult:
    dp: float
    eo: float
    per_group: dict

    def as_tuple(self):
        return self.dp, self.eo


def brute_force_metrics(pooled: Dataset, threshold: float = DEFAULT_THRESHOLD) -> BruteForceResult:
    """Streaming plaintext recount; the oracle for every protocol path."""
    if pooled.sample_size == 0:
        raise EmptyDatasetError("empty pooled dataset")
    counts = {}
    for a_row, y, s in zip(pooled.attributes, pooled.labels, pooled.scores):
        a = int(a_row[0])
        yhat = 1 if s > threshold else 0
        key = (a, int(y), yhat)
        counts[key] = counts.get(key, 0) + 1

    def c(a, y, p):
        return counts.get((a, y, p), 0)

    per_group = {}
    rates = []
    for a in (0, 1):
        total = sum(c(a, y, p) for y in (0, 1) for p in (0, 1))
        if total == 0:
            raise EmptyGroupError(f"attribute group {a} is empty")
        pos = c(a, 0, 1) + c(a, 1, 1)
        rates.append(Fraction(pos, total))
        per_group[a] = {"total": total, "positive": pos}
    dp = float(abs(rates[0] - rates[1]))

    eo = Fraction(0)
    for y in (0, 1):
        stratum = []
        for a in (0, 1):
            tot = c(a, y, 0) + c(a, y, 1)
            if tot == 0:
                raise EmptyGroupError(f"stratum (a={a}, y={y}) is empty")
            stratum.append(Fraction(c(a, y, 1), tot))
        eo = max(eo, abs(stratum[0] - stratum[1]))
    return BruteForceResult(dp=dp, eo=float(eo), per_group=per_group)


def brute_force_metrics_sorted(
    pooled: Dataset, threshold: float = DEFAULT_THRESHOLD
) -> BruteForceResult:
    """Sort-based recount; independent cross-check of the streaming oracle."""
    if pooled.sample_size == 0:
        raise EmptyDatasetError("empty pooled dataset")
    a = pooled.attributes[:, 0].astype(np.int64)
    y = pooled.labels.astype(np.int64)
    yhat = predict(pooled.scores, threshold).astype(np.int64)
    cell = a * 4 + y * 2 + yhat
    order = np.sort(cell)
    boundaries = np.searchsorted(order, np.arange(9))
    sizes = np.diff(boundaries)
    counts = {
        (i >> 2, (i >> 1) & 1, i & 1): int(sizes[i]) for i in range(8)
    }

    def c(aa, yy, pp):
        return counts[(aa, yy, pp)]

    per_group = {}
    rates = []
    for aa in (0, 1):
        total = sum(c(aa, yy, pp) for yy in (0, 1) for pp in (0, 1))
        if total == 0:
            raise EmptyGroupError(f"attribute group {aa} is empty")
        pos = c(aa, 0, 1) + c(aa, 1, 1)
        rates.append(Fraction(pos, total))
        per_group[aa] = {"total": total, "positive": pos}
    dp = float(abs(rates[0] - rates[1]))
    eo = Fraction(0)
    for yy in (0, 1):
        stratum = []
        for aa in (0, 1):
            tot = c(aa, yy, 0) + c(aa, yy, 1)
            if tot == 0:
                raise EmptyGroupError(f"stratum (a={aa}, y={yy}) is empty")
            stratum.append(Fraction(c(aa, yy, 1), tot))
        eo = max(eo, abs(stratum[0] - stratum[1]))
    return BruteForceResult(dp=dp, eo=float(eo), per_group=per_group)


def _clamp01(x: float) -> float:
    return min(1.0, max(0.0, x))


@dataclass
class FairnessReport:
    """Released metrics with every intermediate retained for audit."""

    dp_violation: float
    eo_violation: float
    dp_pre_clamp: float
    eo_pre_clamp: float
    degenerate: bool
    noised_counts_fixed_point: list
    fixed_point_scale: int
    group_rates: list
    accuracy_epsilon_fair: float | None = None
    delta_fair: float | None = None
    released_dp: float | None = None
    released_dp_pre_clamp: float | None = None
    intersectional_violation: float | None = None
    intersectional_bound: float | None = None
    intersectional_mean_disparity: float | None = None
    privacy: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(self.__dict__, sort_keys=True, default=str)

    def csv_row(self) -> dict:
        return {
            "dp_violation": self.dp_violation,
            "eo_violation": self.eo_violation,
            "degenerate": int(self.degenerate),
            "released_dp": "" if self.released_dp is None else self.released_dp,
            "accuracy_epsilon_fair": self.accuracy_epsilon_fair,
        }


def build_report(
    agg: AggregateStatistics,
    sigma: float | None = None,
    n_participants: int | None = None,
    delta_fair: float | None = None,
    privacy_snapshot: dict | None = None,
) -> FairnessReport:
    from . import privacy as privacy_mod

    dp_raw = dp_violation(agg, allow_degenerate=True)
    eo_raw = eo_violation(agg, allow_degenerate=True)
    parity, dp_degenerate = _parity_rates(agg)
    _, eo_degenerate = _stratum_rates(agg)
    degenerate = dp_degenerate or eo_degenerate
    rates = [float(r) for r in parity]

    eps_fair = None
    if sigma is not None and delta_fair is not None and n_participants is not None:
        units = agg.noised_fixed_point
        n0 = int(round(units[0].sum() / agg.fixed_point_scale))
        n1 = int(round(units[1].sum() / agg.fixed_point_scale))
        eps_fair = privacy_mod.accuracy_bound(
            sigma, n_participants, max(n0, 1), max(n1, 1), delta_fair
        )

    notes = ["intersectional error bound assumes sigma_noise equals the per-count Laplace scale"]
    return FairnessReport(
        dp_violation=_clamp01(dp_raw),
        eo_violation=_clamp01(eo_raw),
        dp_pre_clamp=dp_raw,
        eo_pre_clamp=eo_raw,
        degenerate=degenerate,
        noised_counts_fixed_point=agg.noised_fixed_point.ravel().tolist(),
        fixed_point_scale=agg.fixed_point_scale,
        group_rates=rates,
        accuracy_epsilon_fair=eps_fair,
        delta_fair=delta_fair,
        privacy=privacy_snapshot or {},
        notes=notes,
    )

"""Rare-case audit metrics.

* per-group discrimination (AUROC or sensitivity at a fixed specificity),
* the rare case performance gap ``P_common - P_rare``,
* the rare-case calibration error on the rare subgroup,
* the rarity index ``utility / prevalence`` with its monitoring flag,
* stratified percentile-bootstrap intervals for any of the above.
"""

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from ._summation import fmean, fsum
from ._validation import (
    COMMON,
    GROUP_NAMES,
    RARE,
    check_binary_labels,
    check_int,
    check_probability,
    check_seed,
    encode_groups,
)
from .exceptions import (
    BootstrapInstabilityError,
    EmptySubgroupError,
    SchemaError,
    UndefinedMetricError,
    ValidationError,
)

METRIC_KINDS = ("auroc", "sensitivity_at_specificity")
RARITY_FLAG_THRESHOLD = 100.0
RARITY_CAVEAT = (
    "rarity index scales with the units of the clinical utility score; "
    "the > 100 flag is only meaningful for utility on the agreed scale"
)


def check_metric_kind(kind, specificity=None):
    if kind not in METRIC_KINDS:
        raise ValidationError(f"metric kind must be one of {METRIC_KINDS}, got {kind!r}")
    if kind == "sensitivity_at_specificity":
        check_probability(specificity, "specificity")
    return kind


class PredictionSet:
    """Predicted probabilities with labels and group tags."""

    def __init__(self, p_hat, y, group):
        p = np.asarray(p_hat, dtype=float)
        if p.ndim != 1 or p.size == 0:
            raise ValidationError("p_hat must be a nonempty 1-D array")
        if not np.all(np.isfinite(p)) or np.any((p < 0) | (p > 1)):
            raise ValidationError("p_hat must be finite and lie in [0, 1]")
        self.p_hat = p
        self.y = check_binary_labels(y, p.shape[0])
        self.group = encode_groups(group, p.shape[0])

    def __len__(self):
        return self.p_hat.shape[0]

    def subset(self, index):
        return PredictionSet(self.p_hat[index], self.y[index], self.group[index])

    def for_group(self, code):
        m = self.group == code
        return self.p_hat[m], self.y[m]

    def swap_groups(self):
        return PredictionSet(self.p_hat, self.y, 1 - self.group)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["p_hat", "y", "group"])
            for p, y, g in zip(self.p_hat.tolist(), self.y.tolist(), self.group.tolist()):
                w.writerow([repr(p), y, GROUP_NAMES[g]])

    @classmethod
    def from_csv(cls, path):
        return read_predictions_csv(path)


def read_predictions_csv(path):
    """Parse a ``p_hat,y,group`` CSV; raises ``SchemaError`` naming the line."""
    p, y, g = [], [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise SchemaError("empty file (missing header)", line=1)
        if [h.strip() for h in header] != ["p_hat", "y", "group"]:
            raise SchemaError(f"header must be p_hat,y,group, got {','.join(header)}", line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise SchemaError(f"expected 3 fields, got {len(row)}", line=lineno)
            try:
                pv = float(row[0])
            except ValueError:
                raise SchemaError(f"p_hat is not a number: {row[0]!r}", line=lineno) from None
            if not (math.isfinite(pv) and 0.0 <= pv <= 1.0):
                raise SchemaError(f"p_hat must lie in [0, 1], got {row[0]!r}", line=lineno)
            if row[1].strip() not in ("0", "1"):
                raise SchemaError(f"y must be 0 or 1, got {row[1]!r}", line=lineno)
            tag = row[2].strip()
            if tag not in GROUP_NAMES:
                raise SchemaError(f"group must be 'common' or 'rare', got {row[2]!r}", line=lineno)
            p.append(pv)
            y.append(int(row[1]))
            g.append(GROUP_NAMES.index(tag))
    if not p:
        raise SchemaError("no prediction rows", line=2)
    return PredictionSet(np.array(p), np.array(y), np.array(g))


def auroc(scores, labels):
    """Mann-Whitney AUROC with midranks for ties."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    n1 = int(np.count_nonzero(labels == 1))
    n0 = labels.shape[0] - n1
    if n1 == 0 or n0 == 0:
        raise UndefinedMetricError("AUROC needs both positive and negative labels")
    ranks = rankdata(scores, method="average")
    rank_sum = fsum(ranks[labels == 1])
    return (rank_sum - n1 * (n1 + 1) / 2.0) / (n1 * n0)


def sensitivity_at_specificity(scores, labels, specificity):
    """Best sensitivity over thresholds ``t`` (positive iff ``score >= t``)
    whose specificity is at least ``specificity``."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    pos = np.sort(scores[labels == 1])
    neg = np.sort(scores[labels == 0])
    if pos.size == 0:
        raise UndefinedMetricError("sensitivity needs at least one positive case")
    if neg.size == 0:
        raise UndefinedMetricError("specificity needs at least one negative case")
    candidates = np.append(np.unique(scores), np.inf)
    spec = np.searchsorted(neg, candidates, side="left") / neg.size
    ok = np.flatnonzero(spec >= specificity)
    t = candidates[ok[0]]
    return float(pos.size - np.searchsorted(pos, t, side="left")) / pos.size


@dataclass(frozen=True)
class GroupPerformance:
    kind: str
    p_common: float
    p_rare: float
    n_common: int
    n_rare: int
    specificity: float = None

    def to_dict(self):
        d = {
            "metric_kind": self.kind,
            "p_common": self.p_common,
            "p_rare": self.p_rare,
            "n_common": self.n_common,
            "n_rare": self.n_rare,
        }
        if self.kind == "sensitivity_at_specificity":
            d["specificity"] = self.specificity
        return d


def _metric_fn(kind, specificity):
    if kind == "auroc":
        return auroc
    return lambda s, y: sensitivity_at_specificity(s, y, specificity)


def group_performance(preds, kind="auroc", specificity=0.9, strict=True):
    """Discrimination metric evaluated separately on each group.

    A group with no records reports ``None``. When the metric is undefined
    for a present group, ``strict`` raises ``UndefinedMetricError``;
    otherwise that value is ``None``.
    """
    check_metric_kind(kind, specificity)
    fn = _metric_fn(kind, specificity)
    values, counts = [], []
    for code in (COMMON, RARE):
        s, y = preds.for_group(code)
        counts.append(int(s.size))
        if s.size == 0:
            values.append(None)
            continue
        try:
            values.append(float(fn(s, y)))
        except UndefinedMetricError as exc:
            if strict:
                raise UndefinedMetricError(f"{GROUP_NAMES[code]} group: {exc}") from None
            values.append(None)
    return GroupPerformance(
        kind, values[0], values[1], counts[0], counts[1],
        specificity if kind == "sensitivity_at_specificity" else None,
    )


def rcpg(gp):
    """Rare case performance gap ``p_common - p_rare``."""
    if gp.p_common is None or gp.p_rare is None:
        raise EmptySubgroupError("RCPG needs performance values for both groups")
    return gp.p_common - gp.p_rare


@dataclass
class CalibrationReport:
    edges: list
    confidence: list
    accuracy: list
    counts: list
    rcce: float
    min_bin_count: int
    excluded_mass: float
    n: int

    def bins(self):
        return [
            {
                "lower": self.edges[b],
                "upper": self.edges[b + 1],
                "mean_confidence": self.confidence[b],
                "accuracy": self.accuracy[b],
                "count": self.counts[b],
            }
            for b in range(len(self.counts))
        ]

    def to_dict(self):
        return {
            "rcce": self.rcce,
            "n": self.n,
            "min_bin_count": self.min_bin_count,
            "excluded_mass": self.excluded_mass,
            "bins": self.bins(),
        }


def rcce(preds, bins=15, min_bin_count=5):
    """Binned calibration error of the hard decision on the rare subgroup.

    Confidence is ``max(p, 1 - p)`` and a prediction is correct when
    ``(p >= 0.5) == y``. Bins are equal-width on [0, 1]; bins holding fewer
    than ``min_bin_count`` records are left out of the sum and their share
    is reported as ``excluded_mass``.
    """
    bins = check_int(bins, "bins", minimum=1)
    min_bin_count = check_int(min_bin_count, "min_bin_count", minimum=1)
    p, y = preds.for_group(RARE)
    n = p.size
    if n == 0:
        raise EmptySubgroupError("RCCE needs at least one rare prediction")
    if n < bins:
        raise ValidationError(f"RCCE needs at least {bins} rare predictions, got {n}")
    conf = np.maximum(p, 1.0 - p)
    correct = ((p >= 0.5) == (y == 1)).astype(float)
    idx = np.minimum((conf * bins).astype(int), bins - 1)
    edges = [b / bins for b in range(bins + 1)]
    confidence, accuracy, counts, terms = [], [], [], []
    excluded = 0
    for b in range(bins):
        m = idx == b
        k = int(m.sum())
        counts.append(k)
        if k == 0:
            confidence.append(None)
            accuracy.append(None)
            continue
        cb = fmean(conf[m])
        ab = fmean(correct[m])
        confidence.append(cb)
        accuracy.append(ab)
        if k >= min_bin_count:
            terms.append(k * abs(ab - cb))
        else:
            excluded += k
    value = math.fsum(terms) / n
    return CalibrationReport(edges, confidence, accuracy, counts, value, min_bin_count, excluded / n, n)


@dataclass(frozen=True)
class RarityRecord:
    condition_id: str
    prevalence: float
    clinical_utility_score: float
    rarity_index: float
    flagged: bool

    def to_dict(self):
        return {
            "condition_id": self.condition_id,
            "prevalence": self.prevalence,
            "clinical_utility_score": self.clinical_utility_score,
            "rarity_index": self.rarity_index,
            "flagged": self.flagged,
        }


def rarity_index(prevalence, clinical_utility_score, condition_id=""):
    """``utility / prevalence``; flagged when strictly above 100."""
    prevalence = check_probability(prevalence, "prevalence", low_open=True)
    utility = float(clinical_utility_score)
    if not math.isfinite(utility) or utility <= 0:
        raise ValidationError(f"clinical utility score must be > 0, got {clinical_utility_score!r}")
    index = utility / prevalence
    return RarityRecord(str(condition_id), prevalence, utility, index, index > RARITY_FLAG_THRESHOLD)


@dataclass(frozen=True)
class BootstrapInterval:
    point: float
    lower: float
    upper: float
    resamples: int
    seed: int
    failures: int = 0

    def to_dict(self):
        return {
            "point": self.point,
            "lower": self.lower,
            "upper": self.upper,
            "resamples": self.resamples,
            "seed": self.seed,
            "failures": self.failures,
        }


def stratified_resample_indices(group, rng):
    """Indices drawn with replacement inside each group, preserving group sizes."""
    parts = []
    for code in (COMMON, RARE):
        idx = np.flatnonzero(group == code)
        if idx.size:
            parts.append(rng.choice(idx, size=idx.size, replace=True))
    return np.concatenate(parts)


def bootstrap_ci(preds, metric, resamples=1000, seed=0, level=0.95, max_failure_rate=0.2):
    """Percentile bootstrap interval for ``metric(preds)``.

    Records are resampled with replacement within each group, one derived
    random stream per resample. Resamples on which ``metric`` raises
    ``UndefinedMetricError`` (or returns a non-finite value) are dropped;
    more than ``max_failure_rate`` of them raises
    ``BootstrapInstabilityError``.
    """
    resamples = check_int(resamples, "resamples", minimum=100)
    seed = check_seed(seed)
    point = float(metric(preds))
    values = []
    failures = 0
    for child in np.random.SeedSequence(seed).spawn(resamples):
        idx = stratified_resample_indices(preds.group, np.random.default_rng(child))
        try:
            v = metric(preds.subset(idx))
        except (UndefinedMetricError, EmptySubgroupError):
            v = None
        if v is None or not math.isfinite(v):
            failures += 1
        else:
            values.append(float(v))
    if failures > max_failure_rate * resamples:
        raise BootstrapInstabilityError(
            f"metric undefined on {failures} of {resamples} bootstrap resamples"
        )
    tail = 100.0 * (1.0 - level) / 2.0
    lower, upper = np.percentile(values, [tail, 100.0 - tail])
    return BootstrapInterval(point, float(lower), float(upper), resamples, seed, failures)


def rcpg_metric(kind="auroc", specificity=0.9):
    """Closure computing RCPG, suitable for :func:`bootstrap_ci`."""

    def fn(preds):
        return rcpg(group_performance(preds, kind, specificity))

    return fn

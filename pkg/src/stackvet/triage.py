"""Dual-threshold triage: auto-accept, auto-reject, or send to a human.

A score strictly above the positive threshold is auto-accepted, strictly
below the negative threshold auto-rejected; everything else (boundaries
included) goes to human review. The grid search scans a step-sized threshold
lattice and the operating point is the feasible pair leaving the fewest
candidates to humans, subject to minimum precision over auto-accepts and
minimum inverse precision over auto-rejects.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .evaluation import _check_scores_labels

HUMAN = "human_review"
AUTO_POS = "auto_positive"
AUTO_NEG = "auto_negative"


@dataclass(frozen=True)
class TriagePolicy:
    positive_threshold: float
    negative_threshold: float

    def __post_init__(self):
        p, n = self.positive_threshold, self.negative_threshold
        if not (0.0 <= n <= p <= 1.0):
            raise ValueError(f"need 0 <= negative ({n}) <= positive ({p}) <= 1")

    def to_dict(self) -> dict:
        return {
            "positive_threshold": self.positive_threshold,
            "negative_threshold": self.negative_threshold,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TriagePolicy":
        extra = set(d) - {"positive_threshold", "negative_threshold"}
        if extra:
            raise ValueError(f"unknown policy keys: {sorted(extra)}")
        return cls(float(d["positive_threshold"]), float(d["negative_threshold"]))


def route(score: float, policy: TriagePolicy) -> str:
    """Bucket one score; thresholds themselves stay with the human bucket."""
    if not 0.0 <= score <= 1.0:
        raise ValueError(f"score must be in [0,1], got {score}")
    if score > policy.positive_threshold:
        return AUTO_POS
    if score < policy.negative_threshold:
        return AUTO_NEG
    return HUMAN


def route_many(scores, policy: TriagePolicy) -> list[str]:
    return [route(float(s), policy) for s in np.asarray(scores, dtype=np.float64)]


@dataclass(frozen=True)
class TriageStats:
    """Bucket sizes and bucket-conditional quality for one policy."""

    total: int
    auto_positive: int
    auto_negative: int
    human_review: int
    remaining_ratio: float
    precision: float | None  # over auto-accepted
    inverse_precision: float | None  # over auto-rejected
    false_accept_rate: float | None  # 1 - precision
    false_reject_rate: float | None  # 1 - inverse precision

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "auto_positive": self.auto_positive,
            "auto_negative": self.auto_negative,
            "human_review": self.human_review,
            "remaining_ratio": self.remaining_ratio,
            "precision": self.precision,
            "inverse_precision": self.inverse_precision,
            "false_accept_rate": self.false_accept_rate,
            "false_reject_rate": self.false_reject_rate,
        }


def triage_stats(scores, labels, policy: TriagePolicy) -> TriageStats:
    s, y = _check_scores_labels(scores, labels)
    if s.size == 0:
        raise ValueError("triage_stats needs at least one score")
    if np.any(s < 0) or np.any(s > 1):
        raise ValueError("scores must be in [0,1]")
    hi = s > policy.positive_threshold
    lo = s < policy.negative_threshold
    n_hi = int(hi.sum())
    n_lo = int(lo.sum())
    n_mid = int(s.size - n_hi - n_lo)
    tp = int((y[hi] == 1).sum())
    tn = int((y[lo] == 0).sum())
    precision = tp / n_hi if n_hi else None
    inverse = tn / n_lo if n_lo else None
    return TriageStats(
        total=int(s.size),
        auto_positive=n_hi,
        auto_negative=n_lo,
        human_review=n_mid,
        remaining_ratio=n_mid / s.size,
        precision=precision,
        inverse_precision=inverse,
        false_accept_rate=None if precision is None else 1.0 - precision,
        false_reject_rate=None if inverse is None else 1.0 - inverse,
    )


@dataclass(frozen=True)
class TriageRow:
    positive_threshold: float
    negative_threshold: float
    remaining_ratio: float
    precision: float | None
    inverse_precision: float | None


@dataclass
class TriageTable:
    step: float
    rows: list[TriageRow]


def threshold_lattice(step: float) -> list[float]:
    """Multiples of step inside [0,1], endpoints included when step divides 1."""
    if not 0.0 < step <= 1.0:
        raise ValueError(f"step must be in (0,1], got {step}")
    count = int(np.floor(1.0 / step + 1e-9))
    return [round(i * step, 10) for i in range(count + 1)]


def grid_search(scores, labels, step: float = 0.01) -> TriageTable:
    """Stats for every feasible lattice pair (negative <= positive)."""
    s, y = _check_scores_labels(scores, labels)
    if s.size == 0:
        raise ValueError("grid_search needs at least one score")
    if np.any(s < 0) or np.any(s > 1):
        raise ValueError("scores must be in [0,1]")
    values = threshold_lattice(step)
    order = np.argsort(s, kind="stable")
    s_sorted = s[order]
    y_sorted = y[order]
    cum_pos = np.concatenate([[0], np.cumsum(y_sorted)])
    total = int(s.size)
    total_pos = int(cum_pos[-1])

    rows: list[TriageRow] = []
    for pos_t in values:
        i_hi = int(np.searchsorted(s_sorted, pos_t, side="right"))
        n_hi = total - i_hi
        tp = total_pos - int(cum_pos[i_hi])
        precision = tp / n_hi if n_hi else None
        for neg_t in values:
            if neg_t > pos_t:
                break
            i_lo = int(np.searchsorted(s_sorted, neg_t, side="left"))
            n_lo = i_lo
            tn = i_lo - int(cum_pos[i_lo])
            inverse = tn / n_lo if n_lo else None
            rows.append(
                TriageRow(
                    positive_threshold=pos_t,
                    negative_threshold=neg_t,
                    remaining_ratio=(total - n_hi - n_lo) / total,
                    precision=precision,
                    inverse_precision=inverse,
                )
            )
    return TriageTable(step=step, rows=rows)


def _meets(value: float | None, minimum: float) -> bool:
    if minimum <= 0.0:
        return True  # vacuous constraint; empty buckets qualify
    return value is not None and value >= minimum


def select_operating_point(
    table: TriageTable,
    min_precision: float,
    min_inverse_precision: float,
) -> TriagePolicy | None:
    """Feasible row with the fewest humans; ties prefer higher precision,
    then higher inverse precision, then smaller thresholds. None if no row
    satisfies the constraints."""
    best: TriageRow | None = None
    best_key: tuple | None = None
    for row in table.rows:
        if not _meets(row.precision, min_precision):
            continue
        if not _meets(row.inverse_precision, min_inverse_precision):
            continue
        key = (
            row.remaining_ratio,
            -(row.precision if row.precision is not None else -1.0),
            -(row.inverse_precision if row.inverse_precision is not None else -1.0),
            row.positive_threshold,
            row.negative_threshold,
        )
        if best_key is None or key < best_key:
            best, best_key = row, key
    if best is None:
        return None
    return TriagePolicy(best.positive_threshold, best.negative_threshold)


@dataclass
class ScoreHistogram:
    edges: list[float]  # bins+1 edges over [0,1]
    positives: list[int]
    negatives: list[int]


def score_histogram(scores, labels, bins: int = 100) -> ScoreHistogram:
    """Per-class counts on equal-width bins; the last bin includes 1.0."""
    if bins < 1:
        raise ValueError(f"bins must be >= 1, got {bins}")
    s, y = _check_scores_labels(scores, labels)
    if np.any(s < 0) or np.any(s > 1):
        raise ValueError("scores must be in [0,1]")
    idx = np.minimum((s * bins).astype(np.int64), bins - 1)
    pos = np.bincount(idx[y == 1], minlength=bins)
    neg = np.bincount(idx[y == 0], minlength=bins)
    edges = [i / bins for i in range(bins + 1)]
    return ScoreHistogram(edges=edges, positives=pos.tolist(), negatives=neg.tolist())


def write_table_csv(path, table: TriageTable) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("positive_threshold,negative_threshold,remaining_ratio,precision,inverse_precision\n")
        for r in table.rows:
            p = "" if r.precision is None else format(r.precision, ".9g")
            ip = "" if r.inverse_precision is None else format(r.inverse_precision, ".9g")
            fh.write(
                f"{format(r.positive_threshold, '.9g')},{format(r.negative_threshold, '.9g')},"
                f"{format(r.remaining_ratio, '.9g')},{p},{ip}\n"
            )


def write_histogram_csv(path, hist: ScoreHistogram) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("bin_lo,bin_hi,positives,negatives\n")
        for i in range(len(hist.positives)):
            fh.write(
                f"{format(hist.edges[i], '.9g')},{format(hist.edges[i + 1], '.9g')},"
                f"{hist.positives[i]},{hist.negatives[i]}\n"
            )

"""Log-replay evaluation: ranking metrics, rolling weekly folds, and reports.

Impressions are the evaluation unit: a query with its labelled suggestion
list and pre-extracted candidate features.  The rolling protocol trains
every trainable method on the impressions of ISO week i and evaluates all
methods on week i+1, sliding across the span of the logs.  Reports are
plain deterministic text: identical inputs and seeds render byte-identical
output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Protocol, Sequence

import numpy as np

WeekKey = tuple[int, int]  # ISO (year, week)

METRIC_NAMES = ("MAP", "P@1", "P@5", "MRR@10", "nDCG@5", "nDCG@10")
BUCKET_LABELS = ("1", "2", "3", ">=4")


def bucket_label(value: int) -> str:
    """Bucket a position or word count into 1 / 2 / 3 / >=4."""
    return str(value) if value < 4 else ">=4"


def format_week(week: WeekKey) -> str:
    return f"{week[0]}-W{week[1]:02d}"


# ---------------------------------------------------------------------------
# Per-list metrics
# ---------------------------------------------------------------------------


def average_precision(labels: Sequence[int]) -> float:
    """Mean of precision-at-r over the ranks r holding a positive."""
    total_pos = sum(1 for l in labels if l)
    if total_pos == 0:
        raise ValueError("average precision needs at least one positive label")
    hits = 0
    acc = 0.0
    for rank, label in enumerate(labels, 1):
        if label:
            hits += 1
            acc += hits / rank
    return acc / total_pos


def precision_at_k(labels: Sequence[int], k: int) -> float:
    """Positives in the top k over k; short lists count as zero-padded."""
    if k < 1:
        raise ValueError("k must be >= 1")
    return sum(1 for l in labels[:k] if l) / k


def reciprocal_rank_at_10(labels: Sequence[int]) -> float:
    for rank, label in enumerate(labels[:10], 1):
        if label:
            return 1.0 / rank
    return 0.0


def ndcg_at_k(labels: Sequence[int], k: int) -> float:
    """Binary-gain nDCG with 1/log2(rank+1) discounts."""
    if k < 1:
        raise ValueError("k must be >= 1")
    total_pos = sum(1 for l in labels if l)
    if total_pos == 0:
        raise ValueError("nDCG needs at least one positive label")
    dcg = sum(
        label / math.log2(rank + 1) for rank, label in enumerate(labels[:k], 1)
    )
    ideal = sum(1.0 / math.log2(rank + 1) for rank in range(1, min(k, total_pos) + 1))
    return dcg / ideal


# ---------------------------------------------------------------------------
# Paired t significance
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TTestResult:
    t: float
    p_value: float
    n: int


def _betacf(a: float, b: float, x: float) -> float:
    # Continued fraction for the incomplete beta (modified Lentz).
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, 200):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 3e-14:
            break
    return h


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_two_sided_p(t: float, df: int) -> float:
    """Two-sided tail probability of Student's t with df degrees of freedom."""
    if df < 1:
        raise ValueError("degrees of freedom must be >= 1")
    x = df / (df + t * t)
    return regularized_incomplete_beta(df / 2.0, 0.5, x)


def paired_t_test(
    metric_a: Sequence[float], metric_b: Sequence[float]
) -> TTestResult:
    """Paired two-sided t-test on per-impression metric differences.

    Degenerate cases: all-zero differences give p = 1; zero variance with
    a nonzero mean gives the p = 0 marker (t is signed infinity).
    """
    a = np.asarray(metric_a, dtype=np.float64)
    b = np.asarray(metric_b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("paired samples must be equal-length vectors")
    n = len(a)
    if n < 2:
        raise ValueError("need at least 2 pairs")
    diffs = a - b
    mean = float(diffs.mean())
    sd = float(diffs.std(ddof=1))
    if sd == 0.0:
        if mean == 0.0:
            return TTestResult(t=0.0, p_value=1.0, n=n)
        return TTestResult(t=math.copysign(math.inf, mean), p_value=0.0, n=n)
    t = mean / (sd / math.sqrt(n))
    return TTestResult(t=t, p_value=student_t_two_sided_p(abs(t), n - 1), n=n)


# ---------------------------------------------------------------------------
# Impressions, methods, rolling protocol
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PreparedImpression:
    """A labelled suggestion list ready for replay.

    ``labels`` aligns with ``suggestions`` in base order; ``features`` is
    the candidates-by-features matrix in the same order.
    """

    impression_id: str
    session_id: str
    week: WeekKey
    position: int
    query_text: str
    query_len: int
    suggestions: tuple[str, ...]
    labels: tuple[int, ...]
    features: np.ndarray
    base_scores: tuple[float, ...]
    union_injected: bool = False


@dataclass(frozen=True)
class ImpressionMetrics:
    impression_id: str
    position: int
    query_len: int
    ap: float
    p1: float
    p5: float
    rr10: float
    ndcg5: float
    ndcg10: float

    def by_name(self) -> dict[str, float]:
        return {
            "MAP": self.ap,
            "P@1": self.p1,
            "P@5": self.p5,
            "MRR@10": self.rr10,
            "nDCG@5": self.ndcg5,
            "nDCG@10": self.ndcg10,
        }


def score_ranked_labels(
    impression_id: str, position: int, query_len: int, labels: Sequence[int]
) -> ImpressionMetrics:
    return ImpressionMetrics(
        impression_id=impression_id,
        position=position,
        query_len=query_len,
        ap=average_precision(labels),
        p1=precision_at_k(labels, 1),
        p5=precision_at_k(labels, 5),
        rr10=reciprocal_rank_at_10(labels),
        ndcg5=ndcg_at_k(labels, 5),
        ndcg10=ndcg_at_k(labels, 10),
    )


class ReplayMethod(Protocol):
    """A suggestion-ranking method under evaluation."""

    name: str
    trainable: bool

    def fit_week(self, impressions: Sequence[PreparedImpression], week: WeekKey) -> None:
        ...

    def order(self, impression: PreparedImpression) -> np.ndarray:
        """Permutation of candidate indices, best first."""
        ...


@dataclass
class EvaluationRun:
    """Per-impression metrics of one method on one test week."""

    method: str
    week: WeekKey
    records: list[ImpressionMetrics]
    trained_on_week: Optional[WeekKey]
    config_fingerprint: str = ""

    def __post_init__(self) -> None:
        ids = [r.impression_id for r in self.records]
        if len(ids) != len(set(ids)):
            raise ValueError("impression ids must be unique within a run")


@dataclass(frozen=True)
class MetricSummary:
    n: int
    values: dict[str, float]  # keyed by METRIC_NAMES


def aggregate(records: Sequence[ImpressionMetrics]) -> MetricSummary:
    """Unweighted mean of each per-impression metric."""
    if not records:
        raise ValueError("cannot aggregate an empty run")
    sums = {name: 0.0 for name in METRIC_NAMES}
    for record in records:
        for name, value in record.by_name().items():
            sums[name] += value
    return MetricSummary(
        n=len(records), values={k: v / len(records) for k, v in sums.items()}
    )


def breakdown(
    records: Sequence[ImpressionMetrics], dimension: str
) -> dict[str, MetricSummary]:
    """Bucket impressions by query position or query length and aggregate.

    Empty buckets are absent from the result; report rendering marks them
    explicitly.
    """
    if dimension not in ("position", "length"):
        raise ValueError("dimension must be 'position' or 'length'")
    groups: dict[str, list[ImpressionMetrics]] = {}
    for record in records:
        value = record.position if dimension == "position" else record.query_len
        groups.setdefault(bucket_label(value), []).append(record)
    return {label: aggregate(groups[label]) for label in BUCKET_LABELS if label in groups}


def relative_improvement(
    candidate: MetricSummary, baseline: MetricSummary
) -> dict[str, Optional[float]]:
    """Percentage change per metric; None marks an undefined (zero) baseline."""
    out: dict[str, Optional[float]] = {}
    for name in METRIC_NAMES:
        base = baseline.values[name]
        if base == 0.0:
            out[name] = None
        else:
            out[name] = 100.0 * (candidate.values[name] - base) / base
    return out


@dataclass
class RollingResult:
    runs: list[EvaluationRun]
    folds: list[tuple[WeekKey, WeekKey]]
    warnings: list[str] = field(default_factory=list)

    def runs_for(self, method: str) -> list[EvaluationRun]:
        return [run for run in self.runs if run.method == method]

    def pooled_records(self, method: str) -> list[ImpressionMetrics]:
        return [record for run in self.runs_for(method) for record in run.records]


def rolling_weekly_eval(
    impressions: Sequence[PreparedImpression],
    methods: Sequence[ReplayMethod],
    start_week: Optional[WeekKey] = None,
    end_week: Optional[WeekKey] = None,
    config_fingerprint: str = "",
) -> RollingResult:
    """Train on week i, evaluate on week i+1, for consecutive week pairs.

    A training week with no impression carrying both a positive and a
    negative label cannot fit a ranker; that fold is skipped with a
    warning.  Methods must never see test-week impressions at fit time;
    this is asserted against each method's reported training week.
    """
    weeks = sorted({imp.week for imp in impressions})
    if start_week is not None:
        weeks = [w for w in weeks if w >= start_week]
    if end_week is not None:
        weeks = [w for w in weeks if w <= end_week]
    if len(weeks) < 2:
        raise ValueError("logs must span at least 2 ISO weeks")

    by_week: dict[WeekKey, list[PreparedImpression]] = {w: [] for w in weeks}
    for imp in impressions:
        if imp.week in by_week:
            by_week[imp.week].append(imp)

    result = RollingResult(runs=[], folds=[])
    for train_week, test_week in zip(weeks, weeks[1:]):
        train_set = by_week[train_week]
        trainable = [
            imp for imp in train_set if 0 < sum(imp.labels) < len(imp.labels)
        ]
        if not trainable:
            result.warnings.append(
                f"fold {format_week(train_week)}->{format_week(test_week)} skipped: "
                "no trainable impression in the training week"
            )
            continue
        result.folds.append((train_week, test_week))
        test_set = by_week[test_week]
        for method in methods:
            if method.trainable:
                method.fit_week(train_set, train_week)
            records = []
            for imp in test_set:
                assert imp.week > train_week, "test impression leaked into training span"
                permutation = method.order(imp)
                ranked = [imp.labels[i] for i in permutation]
                records.append(
                    score_ranked_labels(imp.impression_id, imp.position, imp.query_len, ranked)
                )
            result.runs.append(
                EvaluationRun(
                    method=method.name,
                    week=test_week,
                    records=records,
                    trained_on_week=train_week if method.trainable else None,
                    config_fingerprint=config_fingerprint,
                )
            )
    if not result.folds:
        raise ValueError("every fold was skipped; nothing to evaluate")
    return result


# ---------------------------------------------------------------------------
# Report rendering
# ---------------------------------------------------------------------------


def _fmt(value: float) -> str:
    return f"{value:.6f}"


def _fmt_rel(value: Optional[float]) -> str:
    return "undefined" if value is None else f"{value:+.2f}%"


def _fmt_p(value: float) -> str:
    return f"{value:.6g}"


def _summary_line(prefix: str, summary: MetricSummary) -> str:
    metrics = " ".join(f"{name} {_fmt(summary.values[name])}" for name in METRIC_NAMES)
    return f"{prefix} n {summary.n} {metrics}"


def render_report(
    result: RollingResult,
    method_names: Sequence[str],
    config_lines: Sequence[str],
    union_counts: dict[WeekKey, tuple[int, int]],
    baseline: str = "Base",
) -> str:
    """The full evaluation report as deterministic text.

    ``union_counts`` maps each week to (prepared impressions, impressions
    whose observed refinement had to be injected into the base list).
    """
    lines: list[str] = []
    lines.append("personalised query suggestion evaluation report")
    lines.append("format-version 1")
    lines.append("")
    lines.append("[config]")
    lines.extend(config_lines)
    lines.append("")
    lines.append("[folds]")
    for train_week, test_week in result.folds:
        lines.append(
            f"train {format_week(train_week)} -> test {format_week(test_week)}"
        )
    for warning in result.warnings:
        lines.append(f"warning: {warning}")
    lines.append("")
    lines.append("[impressions]")
    total_prepared = total_injected = 0
    for week in sorted(union_counts):
        prepared, injected = union_counts[week]
        total_prepared += prepared
        total_injected += injected
        lines.append(
            f"week {format_week(week)} prepared {prepared} refinement-injected {injected}"
        )
    lines.append(
        f"total prepared {total_prepared} refinement-injected {total_injected}"
    )
    lines.append("")

    lines.append("[results]")
    for name in method_names:
        for run in result.runs_for(name):
            lines.append(
                _summary_line(
                    f"method {name} week {format_week(run.week)}", aggregate(run.records)
                )
            )
        pooled = result.pooled_records(name)
        if pooled:
            lines.append(_summary_line(f"method {name} pooled", aggregate(pooled)))
    lines.append("")

    for dimension in ("position", "length"):
        lines.append(f"[breakdown {dimension}]")
        for name in method_names:
            for run in result.runs_for(name):
                week_buckets = breakdown(run.records, dimension)
                for label in BUCKET_LABELS:
                    prefix = f"method {name} week {format_week(run.week)} bucket {label}"
                    if label in week_buckets:
                        lines.append(_summary_line(prefix, week_buckets[label]))
                    else:
                        lines.append(f"{prefix} : no impressions")
            pooled = result.pooled_records(name)
            buckets = breakdown(pooled, dimension)
            for label in BUCKET_LABELS:
                if label in buckets:
                    lines.append(
                        _summary_line(f"method {name} bucket {label}", buckets[label])
                    )
                else:
                    lines.append(f"method {name} bucket {label} : no impressions")
        lines.append("")

    lines.append("[improvement]")
    baseline_pooled = aggregate(result.pooled_records(baseline))
    summaries = {name: aggregate(result.pooled_records(name)) for name in method_names}
    for name in method_names:
        if name == baseline:
            continue
        rel = relative_improvement(summaries[name], baseline_pooled)
        rendered = " ".join(f"{m} {_fmt_rel(rel[m])}" for m in METRIC_NAMES)
        lines.append(f"{name} vs {baseline} : {rendered}")
    if "Click" in method_names and "Ours" in method_names:
        rel = relative_improvement(summaries["Ours"], summaries["Click"])
        rendered = " ".join(f"{m} {_fmt_rel(rel[m])}" for m in METRIC_NAMES)
        lines.append(f"Ours vs Click : {rendered}")
    for name in method_names:
        if name == baseline:
            continue
        base_buckets = breakdown(result.pooled_records(baseline), "position")
        cand_buckets = breakdown(result.pooled_records(name), "position")
        for label in BUCKET_LABELS:
            if label in base_buckets and label in cand_buckets:
                rel = relative_improvement(cand_buckets[label], base_buckets[label])
                lines.append(
                    f"{name} vs {baseline} position-bucket {label} : MAP {_fmt_rel(rel['MAP'])}"
                )
    lines.append("")

    lines.append("[significance]")
    pairs = [
        (a, b)
        for a in method_names
        for b in method_names
        if a != b and method_names.index(a) > method_names.index(b)
    ]
    for test_week in sorted({run.week for run in result.runs}):
        per_method = {
            run.method: {r.impression_id: r.ap for r in run.records}
            for run in result.runs
            if run.week == test_week
        }
        for a, b in pairs:
            if a not in per_method or b not in per_method:
                continue
            shared = sorted(set(per_method[a]) & set(per_method[b]))
            if len(shared) < 2:
                continue
            test = paired_t_test(
                [per_method[a][i] for i in shared], [per_method[b][i] for i in shared]
            )
            lines.append(
                f"week {format_week(test_week)} {a} vs {b} on AP : "
                f"t {test.t:.4f} p {_fmt_p(test.p_value)} n {test.n}"
            )
    pooled_ap = {
        name: {
            f"{format_week(run.week)}/{r.impression_id}": r.ap
            for run in result.runs_for(name)
            for r in run.records
        }
        for name in method_names
    }
    for a, b in pairs:
        shared = sorted(set(pooled_ap[a]) & set(pooled_ap[b]))
        if len(shared) < 2:
            continue
        test = paired_t_test(
            [pooled_ap[a][i] for i in shared], [pooled_ap[b][i] for i in shared]
        )
        lines.append(
            f"pooled {a} vs {b} on AP : t {test.t:.4f} p {_fmt_p(test.p_value)} n {test.n}"
        )
    lines.append("end")
    lines.append("")
    return "\n".join(lines)


def write_per_impression_table(
    path: str | Path, result: RollingResult, method_names: Sequence[str]
) -> None:
    """Flat machine-readable table of per-impression metrics."""
    rows = []
    for name in method_names:
        for run in result.runs_for(name):
            for r in run.records:
                rows.append(
                    (
                        name,
                        format_week(run.week),
                        r.impression_id,
                        str(r.position),
                        bucket_label(r.position),
                        str(r.query_len),
                        bucket_label(r.query_len),
                        _fmt(r.ap),
                        _fmt(r.p1),
                        _fmt(r.p5),
                        _fmt(r.rr10),
                        _fmt(r.ndcg5),
                        _fmt(r.ndcg10),
                    )
                )
    rows.sort(key=lambda row: (row[0], row[1], row[2]))
    header = (
        "method\tweek\timpression_id\tposition\tposition_bucket\tquery_len"
        "\tlength_bucket\tap\tp1\tp5\trr10\tndcg5\tndcg10\n"
    )
    with open(path, "w", encoding="utf-8") as out:
        out.write(header)
        for row in rows:
            out.write("\t".join(row) + "\n")

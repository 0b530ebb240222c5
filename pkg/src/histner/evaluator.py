"""Entity-level scoring of predictions against gold annotations.

A prediction pairs with the first not-yet-paired gold span it overlaps;
the pairing is classified per scheme (ent_type, strict, exact, partial)
into COR/INC/PAR counts, with unpaired gold as MIS and unpaired predictions
as SPU. Pages aggregate two ways: macro (mean and sample stdev of per-page
metrics, matching pagewise annotation) and micro (metrics of pooled counts).
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .corpus import EntitySpan

SCHEMES = ("ent_type", "strict", "exact", "partial")


@dataclass(frozen=True)
class MatchCounts:
    scheme: str
    cor: int = 0
    inc: int = 0
    par: int = 0
    mis: int = 0
    spu: int = 0

    def __post_init__(self) -> None:
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {list(SCHEMES)}, got {self.scheme!r}")

    @property
    def possible(self) -> int:
        return self.cor + self.inc + self.par + self.mis

    @property
    def actual(self) -> int:
        return self.cor + self.inc + self.par + self.spu

    def __add__(self, other: "MatchCounts") -> "MatchCounts":
        if self.scheme != other.scheme:
            raise ValueError(f"cannot pool counts across schemes {self.scheme!r} and {other.scheme!r}")
        return MatchCounts(
            self.scheme,
            self.cor + other.cor,
            self.inc + other.inc,
            self.par + other.par,
            self.mis + other.mis,
            self.spu + other.spu,
        )


@dataclass(frozen=True)
class Metrics:
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class MeanStdev:
    mean: float
    stdev: float


@dataclass
class AggregateMetrics:
    macro_recall: MeanStdev
    macro_precision: MeanStdev
    macro_f1: MeanStdev
    micro: Metrics
    per_page: dict[str, Metrics] = field(default_factory=dict)
    per_label: dict[str, Metrics] = field(default_factory=dict)


def _classify(pred: EntitySpan, gold: EntitySpan, scheme: str) -> str:
    same_bounds = pred.start == gold.start and pred.end == gold.end
    same_label = pred.label == gold.label
    if scheme == "ent_type":
        return "cor" if same_label else "inc"
    if scheme == "strict":
        return "cor" if same_bounds and same_label else "inc"
    if scheme == "exact":
        return "cor" if same_bounds else "inc"
    return "cor" if same_bounds else "par"  # partial


def match_page(
    pred: Sequence[EntitySpan],
    gold: Sequence[EntitySpan],
    scheme: str = "ent_type",
) -> MatchCounts:
    """Tally COR/INC/PAR/MIS/SPU for one page.

    Predictions are scanned in start order; each takes the first unpaired
    gold span whose character interval it intersects. The pairing itself is
    scheme-independent; only the classification of a pair differs.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"scheme must be one of {list(SCHEMES)}, got {scheme!r}")
    gold_sorted = sorted(gold, key=lambda s: (s.start, s.end))
    for prev, cur in zip(gold_sorted, gold_sorted[1:]):
        if cur.start < prev.end:
            raise ValueError(
                f"gold spans overlap: [{prev.start},{prev.end}) and [{cur.start},{cur.end})"
            )
    pred_sorted = sorted(pred, key=lambda s: (s.start, s.end))
    paired = [False] * len(gold_sorted)
    tallies = {"cor": 0, "inc": 0, "par": 0}
    spurious = 0
    for p in pred_sorted:
        for i, g in enumerate(gold_sorted):
            if not paired[i] and p.overlaps(g):
                paired[i] = True
                tallies[_classify(p, g, scheme)] += 1
                break
        else:
            spurious += 1
    missed = paired.count(False)
    return MatchCounts(scheme, tallies["cor"], tallies["inc"], tallies["par"], missed, spurious)


def metrics_of(counts: MatchCounts) -> Metrics:
    """Precision/recall/F1 from counts; empty denominators score zero."""
    numerator = counts.cor + 0.5 * counts.par
    precision = numerator / counts.actual if counts.actual else 0.0
    recall = numerator / counts.possible if counts.possible else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return Metrics(precision, recall, f1)


def _mean_stdev(values: Sequence[float]) -> MeanStdev:
    mean = statistics.fmean(values)
    stdev = statistics.stdev(values) if len(values) > 1 else 0.0
    return MeanStdev(mean, stdev)


def aggregate(
    pages: Mapping[str, MatchCounts],
    per_label_pages: Mapping[str, Mapping[str, MatchCounts]] | None = None,
) -> AggregateMetrics:
    """Fold per-page counts into macro, micro, and per-label metrics.

    Macro uses the sample (n-1) standard deviation; a single page reports
    stdev 0. ``per_label_pages`` maps label -> page -> counts obtained by
    restricting the pairing to that label.
    """
    if not pages:
        raise ValueError("at least one page is required")
    page_ids = sorted(pages)
    per_page = {doc_id: metrics_of(pages[doc_id]) for doc_id in page_ids}
    pooled = None
    for doc_id in page_ids:
        pooled = pages[doc_id] if pooled is None else pooled + pages[doc_id]
    per_label: dict[str, Metrics] = {}
    if per_label_pages:
        for label in sorted(per_label_pages):
            label_pooled = None
            for counts in per_label_pages[label].values():
                label_pooled = counts if label_pooled is None else label_pooled + counts
            if label_pooled is not None:
                per_label[label] = metrics_of(label_pooled)
    return AggregateMetrics(
        macro_recall=_mean_stdev([per_page[d].recall for d in page_ids]),
        macro_precision=_mean_stdev([per_page[d].precision for d in page_ids]),
        macro_f1=_mean_stdev([per_page[d].f1 for d in page_ids]),
        micro=metrics_of(pooled),
        per_page=per_page,
        per_label=per_label,
    )


def score_documents(
    pred_by_doc: Mapping[str, Sequence[EntitySpan]],
    gold_by_doc: Mapping[str, Sequence[EntitySpan]],
    scheme: str = "ent_type",
) -> AggregateMetrics:
    """Score a whole prediction set against gold with aligned document ids."""
    if set(pred_by_doc) != set(gold_by_doc):
        missing = sorted(set(gold_by_doc) - set(pred_by_doc))
        extra = sorted(set(pred_by_doc) - set(gold_by_doc))
        raise ValueError(f"document ids differ: missing from predictions {missing}, unknown {extra}")
    labels = sorted(
        {s.label for spans in gold_by_doc.values() for s in spans}
        | {s.label for spans in pred_by_doc.values() for s in spans}
    )
    pages: dict[str, MatchCounts] = {}
    per_label_pages: dict[str, dict[str, MatchCounts]] = {label: {} for label in labels}
    for doc_id in sorted(gold_by_doc):
        pred = pred_by_doc[doc_id]
        gold = gold_by_doc[doc_id]
        pages[doc_id] = match_page(pred, gold, scheme)
        for label in labels:
            per_label_pages[label][doc_id] = match_page(
                [s for s in pred if s.label == label],
                [s for s in gold if s.label == label],
                scheme,
            )
    return aggregate(pages, per_label_pages)


def impact(row_mean: float, reference_mean: float) -> float:
    """Relative change of a row mean versus the reference row, in percent."""
    if reference_mean == 0:
        raise ValueError("reference mean must be non-zero")
    return (row_mean - reference_mean) / reference_mean * 100.0


def format_impact(value: float) -> str:
    return f"{value:+.2f} %"


def format_mean_stdev(ms: MeanStdev) -> str:
    return f"{ms.mean:.2f} ±{ms.stdev:.2f}"

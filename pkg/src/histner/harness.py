"""End-to-end experiment driver: rows of prompt configurations over a corpus,
scored against gold, reported as tables with impact-vs-reference columns.

Each row runs the full pipeline per page (build prompt, complete, parse the
tagged output, flatten, ground, match) and aggregates pagewise. Baseline
prediction files flow through the identical evaluator path. Pages whose
transcript was truncated are excluded from the row and counted instead of
being scored as all-miss.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import yaml

from .corpus import DEFAULT_LABELS, CorpusError, Document, EntitySpan, load_gold
from .evaluator import (
    AggregateMetrics,
    MeanStdev,
    format_impact,
    format_mean_stdev,
    impact,
    score_documents,
)
from .gateway import Gateway, ModelParams, Transcript
from .grounding import ground_all
from .promptkit import (
    PromptConfig,
    ShotExample,
    ablation_variants,
    build_prompt,
    config_from_dict,
    pool_from_records,
    select_shots,
)
from .tagspan import flatten_spans, parse_tagged

logger = logging.getLogger(__name__)

DEGENERATE_FAILURE_RATE = 0.5
REPORT_FORMATS = ("markdown", "csv", "json")


@dataclass
class ExperimentSpec:
    name: str
    gold_path: Path
    rows: list[tuple[str, PromptConfig]]
    model: ModelParams
    reference_row: str
    mode: str = "replay_strict"
    cache_dir: Path | None = None
    corpus_path: Path | None = None
    examples_path: Path | None = None
    baseline_files: list[tuple[str, Path]] = field(default_factory=list)
    scheme: str = "ent_type"
    jobs: int = 1

    def __post_init__(self) -> None:
        names = [name for name, _ in self.rows]
        if len(names) != len(set(names)):
            raise ValueError("row names must be unique")
        if self.reference_row not in names:
            raise ValueError(f"reference_row {self.reference_row!r} does not name a row")


@dataclass
class TableRow:
    name: str
    language: str | None
    shots: int | None
    recall: MeanStdev
    precision: MeanStdev
    f1: MeanStdev
    recall_micro: float
    precision_micro: float
    f1_micro: float
    recall_impact: float
    precision_impact: float
    f1_impact: float
    excluded_pages: int = 0
    degenerate: bool = False


@dataclass
class ResultsTable:
    title: str
    reference_row: str
    scheme: str
    rows: list[TableRow]
    footer: list[TableRow] = field(default_factory=list)


@dataclass
class PageOutcome:
    doc_id: str
    cache_key: str
    status: str  # "ok" | "truncated"
    spans: list[EntitySpan] = field(default_factory=list)
    grounding_failures: int = 0
    grounded_count: int = 0

    @property
    def degenerate(self) -> bool:
        attempted = self.grounding_failures + self.grounded_count
        return attempted > 0 and self.grounding_failures / attempted > DEGENERATE_FAILURE_RATE


def annotate_page(
    config: PromptConfig,
    examples: Sequence[ShotExample],
    doc: Document,
    gateway: Gateway,
) -> PageOutcome:
    """Run the per-page pipeline and return grounded source-offset spans."""
    bundle = build_prompt(config, examples, doc.text)
    transcript: Transcript = gateway.complete(bundle)
    if transcript.truncated:
        return PageOutcome(doc.id, transcript.cache_key, "truncated")
    parsed = parse_tagged(transcript.response_text, config.labels)
    flat = flatten_spans(parsed.spans)
    grounded, failures = ground_all(replace(parsed, spans=flat), doc)
    spans = sorted((g.span for g in grounded), key=lambda s: (s.start, s.end))
    return PageOutcome(
        doc_id=doc.id,
        cache_key=transcript.cache_key,
        status="ok",
        spans=flatten_spans(spans),
        grounding_failures=len(failures),
        grounded_count=len(grounded),
    )


def ingest_baseline(
    path: str | Path,
    known_ids: Sequence[str],
    labels: tuple[str, ...] = DEFAULT_LABELS,
) -> tuple[dict[str, list[EntitySpan]], int]:
    """Read an external prediction file into flattened per-document spans.

    Spans with labels outside the configured set (e.g. MISC) are dropped and
    counted. Unknown document ids are an error; documents without a record
    simply predict nothing.
    """
    from .corpus import iter_records, validate_spans

    known = set(known_ids)
    preds: dict[str, list[EntitySpan]] = {doc_id: [] for doc_id in known_ids}
    dropped = 0
    unknown: list[str] = []
    for line_no, text, spans, meta in iter_records(path, labels=None):
        doc_id = meta["id"]
        if doc_id not in known:
            unknown.append(doc_id)
            continue
        kept = [s for s in spans if s.label in labels]
        dropped += len(spans) - len(kept)
        validate_spans(doc_id, text, kept, flat=False)
        preds[doc_id] = flatten_spans(kept)
    if unknown:
        raise CorpusError(f"prediction file names unknown document ids: {sorted(set(unknown))}")
    if dropped:
        logger.info("dropped %d spans with labels outside %s", dropped, list(labels))
    return preds, dropped


def _row_from_metrics(
    name: str,
    language: str | None,
    shots: int | None,
    agg: AggregateMetrics,
    excluded: int = 0,
    degenerate: bool = False,
) -> TableRow:
    return TableRow(
        name=name,
        language=language,
        shots=shots,
        recall=agg.macro_recall,
        precision=agg.macro_precision,
        f1=agg.macro_f1,
        recall_micro=agg.micro.recall,
        precision_micro=agg.micro.precision,
        f1_micro=agg.micro.f1,
        recall_impact=0.0,
        precision_impact=0.0,
        f1_impact=0.0,
        excluded_pages=excluded,
        degenerate=degenerate,
    )


def _empty_row(name: str, language: str | None, shots: int | None, excluded: int) -> TableRow:
    zero = MeanStdev(0.0, 0.0)
    return TableRow(name, language, shots, zero, zero, zero, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, excluded, True)


def _apply_impacts(table: ResultsTable) -> None:
    reference = next(row for row in table.rows if row.name == table.reference_row)
    for row in table.rows + table.footer:
        row.recall_impact = impact(row.recall.mean, reference.recall.mean)
        row.precision_impact = impact(row.precision.mean, reference.precision.mean)
        row.f1_impact = impact(row.f1.mean, reference.f1.mean)


def run_experiment(
    spec: ExperimentSpec,
    *,
    transport: Callable[[dict], dict] | None = None,
    pages_index: dict | None = None,
) -> ResultsTable:
    """Execute every row of an experiment and assemble the results table.

    ``pages_index`` (if given) is filled with per-row page status and cache
    keys so transcripts stay auditable. Pages run through a bounded worker
    pool; all reductions are ordered by document id.
    """
    gold = load_gold(spec.gold_path)
    documents = gold.documents
    if spec.corpus_path is not None:
        documents = load_gold(spec.corpus_path).documents
    documents = sorted(documents, key=lambda d: d.id)
    gold_by_doc = {doc.id: gold.spans_for(doc.id) for doc in documents}

    pool: list[ShotExample] = []
    if any(config.shots for _, config in spec.rows):
        if spec.examples_path is None:
            raise ValueError("rows request shot examples but the spec names no examples file")
        examples_corpus = load_gold(spec.examples_path)
        pool = pool_from_records(
            [(doc.text, examples_corpus.spans_for(doc.id)) for doc in examples_corpus.documents]
        )

    gateway = Gateway(spec.model, spec.mode, spec.cache_dir, transport=transport)
    table = ResultsTable(title=spec.name, reference_row=spec.reference_row, scheme=spec.scheme, rows=[])

    for row_name, config in spec.rows:
        examples = select_shots(pool, config.shots, config.seed) if config.shots else []
        with ThreadPoolExecutor(max_workers=max(1, spec.jobs)) as executor:
            outcomes = list(executor.map(lambda doc: annotate_page(config, examples, doc, gateway), documents))
        outcomes.sort(key=lambda outcome: outcome.doc_id)
        if pages_index is not None:
            pages_index[row_name] = {
                o.doc_id: {"cache_key": o.cache_key, "status": o.status} for o in outcomes
            }
        included = [o for o in outcomes if o.status == "ok"]
        excluded = len(outcomes) - len(included)
        degenerate = any(o.degenerate for o in included)
        if not included:
            table.rows.append(_empty_row(row_name, config.language, config.shots, excluded))
            continue
        agg = score_documents(
            {o.doc_id: o.spans for o in included},
            {o.doc_id: gold_by_doc[o.doc_id] for o in included},
            spec.scheme,
        )
        table.rows.append(
            _row_from_metrics(row_name, config.language, config.shots, agg, excluded, degenerate)
        )

    for baseline_name, baseline_path in spec.baseline_files:
        preds, _ = ingest_baseline(baseline_path, [doc.id for doc in documents])
        agg = score_documents(preds, gold_by_doc, spec.scheme)
        table.footer.append(_row_from_metrics(baseline_name, None, None, agg))

    _apply_impacts(table)
    return table


# --- report emission -------------------------------------------------------


def _row_dict(row: TableRow) -> dict:
    return {
        "name": row.name,
        "language": row.language,
        "shots": row.shots,
        "recall": {"mean": row.recall.mean, "stdev": row.recall.stdev, "micro": row.recall_micro},
        "precision": {"mean": row.precision.mean, "stdev": row.precision.stdev, "micro": row.precision_micro},
        "f1": {"mean": row.f1.mean, "stdev": row.f1.stdev, "micro": row.f1_micro},
        "impact": {"recall": row.recall_impact, "precision": row.precision_impact, "f1": row.f1_impact},
        "excluded_pages": row.excluded_pages,
        "degenerate": row.degenerate,
    }


def _row_from_dict(data: dict) -> TableRow:
    return TableRow(
        name=data["name"],
        language=data["language"],
        shots=data["shots"],
        recall=MeanStdev(data["recall"]["mean"], data["recall"]["stdev"]),
        precision=MeanStdev(data["precision"]["mean"], data["precision"]["stdev"]),
        f1=MeanStdev(data["f1"]["mean"], data["f1"]["stdev"]),
        recall_micro=data["recall"]["micro"],
        precision_micro=data["precision"]["micro"],
        f1_micro=data["f1"]["micro"],
        recall_impact=data["impact"]["recall"],
        precision_impact=data["impact"]["precision"],
        f1_impact=data["impact"]["f1"],
        excluded_pages=data["excluded_pages"],
        degenerate=data["degenerate"],
    )


def _markdown_cells(row: TableRow) -> list[str]:
    flags = "degenerate" if row.degenerate else ""
    return [
        row.name,
        row.language or "",
        format_mean_stdev(row.recall),
        format_impact(row.recall_impact),
        format_mean_stdev(row.precision),
        format_impact(row.precision_impact),
        format_mean_stdev(row.f1),
        format_impact(row.f1_impact),
        str(row.excluded_pages),
        flags,
    ]


def emit_report(table: ResultsTable, fmt: str = "markdown") -> bytes:
    """Render a results table; markdown rounds for reading, csv/json do not."""
    if fmt not in REPORT_FORMATS:
        raise ValueError(f"format must be one of {list(REPORT_FORMATS)}, got {fmt!r}")
    if fmt == "json":
        payload = {
            "title": table.title,
            "reference_row": table.reference_row,
            "scheme": table.scheme,
            "rows": [_row_dict(row) for row in table.rows],
            "footer": [_row_dict(row) for row in table.footer],
        }
        return (json.dumps(payload, ensure_ascii=False, indent=2) + "\n").encode("utf-8")
    if fmt == "csv":
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(
            [
                "name", "language", "shots",
                "recall_mean", "recall_stdev", "recall_micro", "recall_impact",
                "precision_mean", "precision_stdev", "precision_micro", "precision_impact",
                "f1_mean", "f1_stdev", "f1_micro", "f1_impact",
                "excluded_pages", "degenerate", "is_baseline",
            ]
        )
        for row, is_baseline in [(r, False) for r in table.rows] + [(r, True) for r in table.footer]:
            writer.writerow(
                [
                    row.name, row.language or "", "" if row.shots is None else row.shots,
                    repr(row.recall.mean), repr(row.recall.stdev), repr(row.recall_micro), repr(row.recall_impact),
                    repr(row.precision.mean), repr(row.precision.stdev), repr(row.precision_micro), repr(row.precision_impact),
                    repr(row.f1.mean), repr(row.f1.stdev), repr(row.f1_micro), repr(row.f1_impact),
                    row.excluded_pages, row.degenerate, is_baseline,
                ]
            )
        return buffer.getvalue().encode("utf-8")
    header = ["Row", "lang", "Recall", "Impact", "Precision", "Impact", "F1", "Impact", "Excluded", "Flags"]
    lines = [f"# {table.title}", ""]
    lines.append("| " + " | ".join(header) + " |")
    lines.append("|" + "---|" * len(header))
    for row in table.rows + table.footer:
        lines.append("| " + " | ".join(_markdown_cells(row)) + " |")
    lines.append("")
    lines.append(f"Scheme: {table.scheme}. Impact is relative to row '{table.reference_row}'.")
    return ("\n".join(lines) + "\n").encode("utf-8")


def parse_report_json(data: bytes) -> ResultsTable:
    payload = json.loads(data.decode("utf-8"))
    return ResultsTable(
        title=payload["title"],
        reference_row=payload["reference_row"],
        scheme=payload["scheme"],
        rows=[_row_from_dict(r) for r in payload["rows"]],
        footer=[_row_from_dict(r) for r in payload["footer"]],
    )


# --- declarative experiment files ------------------------------------------


def _resolve(base: Path, value: str | None) -> Path | None:
    if value is None:
        return None
    path = Path(value)
    return path if path.is_absolute() else base / path


def load_experiment_spec(path: str | Path) -> ExperimentSpec:
    """Parse a YAML experiment file; relative paths resolve against it.

    A row entry with ``ablation: true`` expands into the ten ablation
    variants of its base configuration.
    """
    path = Path(path)
    base = path.parent
    data = yaml.safe_load(path.read_text("utf-8"))
    if not isinstance(data, dict):
        raise ValueError(f"experiment spec {path} must be a mapping")
    rows: list[tuple[str, PromptConfig]] = []
    for entry in data.get("rows", []):
        entry = dict(entry)
        if entry.pop("ablation", False):
            entry.pop("name", None)
            base_config = config_from_dict({**entry, "context": "specific", "shots": 0})
            rows.extend(ablation_variants(base_config))
        else:
            name = entry.pop("name")
            rows.append((name, config_from_dict(entry)))
    model_data = dict(data.get("model", {}))
    model = ModelParams(
        model_name=model_data.get("name", "gpt-4o-2024-08-06"),
        max_output_tokens=int(model_data.get("max_output_tokens", 4096)),
        temperature=float(model_data.get("temperature", 0.0)),
        endpoint_url=model_data.get("endpoint"),
        request_seed=model_data.get("seed"),
    )
    baselines = [
        (entry["name"], _resolve(base, entry["path"]))
        for entry in data.get("baselines", [])
    ]
    return ExperimentSpec(
        name=data.get("name", path.stem),
        gold_path=_resolve(base, data["gold"]),
        rows=rows,
        model=model,
        reference_row=data["reference_row"],
        mode=data.get("mode", "replay_strict"),
        cache_dir=_resolve(base, data.get("cache_dir")),
        corpus_path=_resolve(base, data.get("corpus")),
        examples_path=_resolve(base, data.get("examples")),
        baseline_files=baselines,
        scheme=data.get("scheme", "ent_type"),
        jobs=int(data.get("jobs", 1)),
    )

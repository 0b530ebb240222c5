"""Corpus pages, gold annotations, and the newline-delimited interchange format.

Pages travel as one JSON object per line: ``{"text": ..., "spans": [...],
"meta": {"id": ...}, "answer": "accept"}``. Offsets count unicode scalar
values, never bytes, so German umlauts ground identically everywhere.
"""

from __future__ import annotations

import json
import random
import re
from dataclasses import dataclass, field
from pathlib import Path

DEFAULT_LABELS = ("PER", "LOC", "ORG")

_HYPHEN_BREAK = re.compile(r"-[^\S\r\n]*(?:\r\n|\r|\n)[^\S\r\n]*")
_WHITESPACE_RUN = re.compile(r"\s+")
_LINE_BREAKS = ("\n", "\r", "\v", "\f", " ", " ")


class CorpusError(ValueError):
    """Malformed or inconsistent corpus data."""


@dataclass(frozen=True, order=True)
class EntitySpan:
    """Character-offset span with an entity label; ``end`` is exclusive."""

    start: int
    end: int
    label: str

    def length(self) -> int:
        return self.end - self.start

    def overlaps(self, other: "EntitySpan") -> bool:
        return max(self.start, other.start) < min(self.end, other.end)


@dataclass
class Document:
    """One corpus page: preprocessed text plus provenance metadata."""

    id: str
    text: str
    raw_text: str | None = None
    meta: dict[str, str] = field(default_factory=dict)


@dataclass
class GoldCorpus:
    documents: list[Document]
    annotations: dict[str, list[EntitySpan]]

    def document_ids(self) -> list[str]:
        return [doc.id for doc in self.documents]

    def spans_for(self, doc_id: str) -> list[EntitySpan]:
        return self.annotations.get(doc_id, [])


def preprocess(raw_text: str) -> str:
    """Normalize a raw page into single-line, single-spaced text.

    A hyphen followed by a line break joins the two word fragments. The
    hyphen itself survives only when the continuation starts uppercase, so
    compound proper names such as "Kaiser-Wilhelm" keep their hyphen while
    "Haupt-/bahnhof" becomes "Hauptbahnhof". Remaining line breaks and any
    whitespace runs collapse to a single space.
    """

    def _join(match: re.Match[str]) -> str:
        follow = raw_text[match.end() : match.end() + 1]
        return "-" if follow.isupper() else ""

    text = _HYPHEN_BREAK.sub(_join, raw_text)
    return _WHITESPACE_RUN.sub(" ", text).strip()


def _require(condition: bool, line_no: int, fieldname: str, message: str) -> None:
    if not condition:
        raise CorpusError(f"line {line_no}: field '{fieldname}': {message}")


def _parse_record(line_no: int, raw: str) -> dict | None:
    try:
        record = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise CorpusError(f"line {line_no}: invalid JSON: {exc}") from exc
    _require(isinstance(record, dict), line_no, "<record>", "expected a JSON object")
    return record


def _record_spans(line_no: int, record: dict, labels: tuple[str, ...] | None) -> list[EntitySpan]:
    spans_raw = record.get("spans", [])
    _require(isinstance(spans_raw, list), line_no, "spans", "expected a list")
    spans = []
    for i, item in enumerate(spans_raw):
        fieldname = f"spans[{i}]"
        _require(isinstance(item, dict), line_no, fieldname, "expected an object")
        start, end, label = item.get("start"), item.get("end"), item.get("label")
        _require(isinstance(start, int) and not isinstance(start, bool), line_no, f"{fieldname}.start", "expected an integer")
        _require(isinstance(end, int) and not isinstance(end, bool), line_no, f"{fieldname}.end", "expected an integer")
        _require(isinstance(label, str) and label != "", line_no, f"{fieldname}.label", "expected a non-empty string")
        _require(0 <= start, line_no, f"{fieldname}.start", f"negative offset {start}")
        _require(start < end, line_no, fieldname, f"start {start} must be smaller than end {end}")
        if labels is not None:
            _require(label in labels, line_no, f"{fieldname}.label", f"unknown label {label!r} (expected one of {list(labels)})")
        spans.append(EntitySpan(start, end, label))
    return spans


def _record_meta(line_no: int, record: dict) -> dict[str, str]:
    meta_raw = record.get("meta", {})
    _require(isinstance(meta_raw, dict), line_no, "meta", "expected an object")
    meta: dict[str, str] = {}
    for key, value in meta_raw.items():
        _require(isinstance(value, (str, int, float, bool)), line_no, f"meta.{key}", "expected a scalar value")
        meta[str(key)] = value if isinstance(value, str) else str(value)
    _require("id" in meta and meta["id"] != "", line_no, "meta.id", "document id is required")
    return meta


def validate_document_text(text: str, line_no: int = 0) -> None:
    """Enforce the page invariant: no line breaks, no doubled whitespace."""
    for ch in _LINE_BREAKS:
        _require(ch not in text, line_no, "text", f"contains line-break character {ch!r}")
    _require(re.search(r"\s\s", text) is None, line_no, "text", "contains a run of whitespace characters")


def validate_spans(doc_id: str, text: str, spans: list[EntitySpan], *, flat: bool = True) -> None:
    """Check span offsets against a document; ``flat`` also forbids overlap."""
    for span in spans:
        if not 0 <= span.start < span.end <= len(text):
            raise CorpusError(
                f"document {doc_id!r}: span [{span.start},{span.end}) out of bounds for text of length {len(text)}"
            )
        if not text[span.start : span.end].strip():
            raise CorpusError(f"document {doc_id!r}: span [{span.start},{span.end}) covers only whitespace")
    if flat:
        ordered = sorted(spans, key=lambda s: (s.start, s.end))
        for prev, cur in zip(ordered, ordered[1:]):
            if cur.start < prev.end:
                raise CorpusError(
                    f"document {doc_id!r}: overlapping gold spans "
                    f"[{prev.start},{prev.end}) and [{cur.start},{cur.end})"
                )


def iter_records(path: str | Path, labels: tuple[str, ...] | None = None):
    """Yield ``(line_no, text, spans, meta)`` for accepted records in a file.

    Records carrying an "answer" other than "accept" are skipped. With
    ``labels=None`` any span label is admitted (used when ingesting external
    predictions that may carry extra classes).
    """
    path = Path(path)
    with path.open("r", encoding="utf-8") as handle:
        for line_no, raw in enumerate(handle, start=1):
            if not raw.strip():
                continue
            record = _parse_record(line_no, raw)
            answer = record.get("answer", "accept")
            if answer != "accept":
                continue
            text = record.get("text")
            _require(isinstance(text, str), line_no, "text", "expected a string")
            spans = _record_spans(line_no, record, labels)
            meta = _record_meta(line_no, record)
            yield line_no, text, spans, meta


def load_gold(path: str | Path, labels: tuple[str, ...] = DEFAULT_LABELS) -> GoldCorpus:
    """Load a gold corpus, enforcing every page and span invariant."""
    documents: list[Document] = []
    annotations: dict[str, list[EntitySpan]] = {}
    for line_no, text, spans, meta in iter_records(path, labels):
        doc_id = meta["id"]
        if doc_id in annotations:
            raise CorpusError(f"line {line_no}: duplicate document id {doc_id!r}")
        validate_document_text(text, line_no)
        validate_spans(doc_id, text, spans, flat=True)
        documents.append(Document(id=doc_id, text=text, meta=meta))
        annotations[doc_id] = sorted(spans, key=lambda s: (s.start, s.end))
    return GoldCorpus(documents=documents, annotations=annotations)


def save_gold(corpus: GoldCorpus, path: str | Path) -> None:
    """Write a corpus back to the interchange format (one record per line)."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as handle:
        for doc in corpus.documents:
            record = {
                "text": doc.text,
                "spans": [
                    {"start": s.start, "end": s.end, "label": s.label}
                    for s in corpus.spans_for(doc.id)
                ],
                "meta": {**doc.meta, "id": doc.id},
                "answer": "accept",
            }
            handle.write(json.dumps(record, ensure_ascii=False) + "\n")


def trim_span(text: str, span: EntitySpan) -> EntitySpan | None:
    """Shrink a span to exclude leading/trailing whitespace; None if empty."""
    start, end = span.start, span.end
    while start < end and text[start].isspace():
        start += 1
    while end > start and text[end - 1].isspace():
        end -= 1
    if start == end:
        return None
    return EntitySpan(start, end, span.label)


def _is_boundary_start(text: str, pos: int) -> bool:
    return pos == 0 or text[pos - 1] == " "


def _is_boundary_end(text: str, pos: int) -> bool:
    return pos == len(text) or text[pos] == " "


def split_examples_pool(
    corpus: GoldCorpus,
    count: int,
    min_len: int = 200,
    max_len: int = 500,
    seed: int = 0,
) -> list[tuple[str, list[EntitySpan]]]:
    """Cut seeded random excerpts with rebased gold spans for shot examples.

    Excerpts are ``min_len``..``max_len`` characters, start and end on
    whitespace boundaries, and never cut through a gold span. The corpus
    passed in must already be restricted to pages outside the evaluation
    set. Deterministic for a fixed seed.
    """
    if count == 0:
        return []
    rng = random.Random(seed)
    eligible = [doc for doc in corpus.documents if len(doc.text) >= min_len]
    out: list[tuple[str, list[EntitySpan]]] = []
    seen: set[tuple[str, int, int]] = set()
    attempts = 0
    max_attempts = max(200, count * 200)
    while len(out) < count and attempts < max_attempts:
        attempts += 1
        if not eligible:
            break
        doc = rng.choice(eligible)
        text = doc.text
        start = rng.randint(0, len(text) - min_len)
        while start < len(text) and not _is_boundary_start(text, start):
            start += 1
        if start + min_len > len(text):
            continue
        target = start + rng.randint(min_len, max_len)
        end = min(target, len(text))
        while end > start + min_len and not _is_boundary_end(text, end):
            end -= 1
        if not _is_boundary_end(text, end) or not min_len <= end - start <= max_len:
            continue
        spans = corpus.spans_for(doc.id)
        if any(s.overlaps(EntitySpan(start, end, s.label)) and not (start <= s.start and s.end <= end) for s in spans):
            continue
        key = (doc.id, start, end)
        if key in seen:
            continue
        seen.add(key)
        local = [
            EntitySpan(s.start - start, s.end - start, s.label)
            for s in spans
            if start <= s.start and s.end <= end
        ]
        out.append((text[start:end], local))
    if len(out) < count:
        raise CorpusError(
            f"insufficient source material: requested {count} excerpts, produced {len(out)}"
        )
    return out

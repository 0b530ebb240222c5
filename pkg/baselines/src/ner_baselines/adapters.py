"""Run established NER frameworks over a corpus and emit shared-format predictions.

The adapters stay deliberately independent of the main annotation tool: they
read the same newline-delimited record format, run a framework tagger
(flair's sequence tagger or a spaCy pipeline), map framework labels onto
PER/LOC/ORG (everything else is dropped and counted), and write predictions
whose character offsets are recomputed against the Python string, i.e. in
unicode scalar values.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path
from typing import Callable, Iterable

TARGET_LABELS = ("PER", "LOC", "ORG")
DROP = "DROP"

# Framework label inventories, mapped onto the target set. Unmapped labels
# fall into DROP with a count, which keeps the invariant even when a model
# grows new classes.
DEFAULT_LABEL_MAPS: dict[str, dict[str, str]] = {
    "flair": {"PER": "PER", "LOC": "LOC", "ORG": "ORG", "MISC": DROP},
    "spacy": {"PER": "PER", "PERSON": "PER", "LOC": "LOC", "GPE": "LOC", "FAC": "LOC", "ORG": "ORG", "MISC": DROP},
}

# An entity as the tagger reports it: (start, end, surface text, label).
RawEntity = tuple[int, int, str, str]
Tagger = Callable[[str], list[RawEntity]]

_DOUBLED_WHITESPACE = re.compile(r"\s\s")


class AdapterError(RuntimeError):
    pass


@dataclass
class BaselineRun:
    framework: str  # "flair" | "spacy"
    model_name: str
    corpus_path: Path
    out_path: Path
    label_map: dict[str, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.framework not in DEFAULT_LABEL_MAPS:
            raise AdapterError(f"unsupported framework {self.framework!r} (expected one of {list(DEFAULT_LABEL_MAPS)})")
        if not self.label_map:
            self.label_map = dict(DEFAULT_LABEL_MAPS[self.framework])


@dataclass
class RunSummary:
    documents: int = 0
    spans_written: int = 0
    dropped: dict[str, int] = field(default_factory=dict)

    def drop(self, label: str) -> None:
        self.dropped[label] = self.dropped.get(label, 0) + 1


def read_locked_versions(lock_path: Path | None = None) -> dict[str, str]:
    """Pinned framework versions (``name==version`` lines) for real runs."""
    path = lock_path or Path(__file__).resolve().parents[2] / "versions.lock"
    pins: dict[str, str] = {}
    if path.exists():
        for line in path.read_text("utf-8").splitlines():
            line = line.strip()
            if line and not line.startswith("#") and "==" in line:
                name, version = line.split("==", 1)
                pins[name.strip()] = version.strip()
    return pins


def installed_version(framework: str) -> str:
    try:
        return metadata.version(framework)
    except metadata.PackageNotFoundError:
        return "unavailable"


def _load_flair_tagger(model_name: str) -> Tagger:
    from flair.data import Sentence
    from flair.models import SequenceTagger

    tagger = SequenceTagger.load(model_name)

    def tag(text: str) -> list[RawEntity]:
        sentence = Sentence(text, use_tokenizer=True)
        tagger.predict(sentence)
        return [
            (span.start_position, span.end_position, span.text, span.tag)
            for span in sentence.get_spans("ner")
        ]

    return tag


def _load_spacy_tagger(model_name: str) -> Tagger:
    import spacy

    nlp = spacy.load(model_name)

    def tag(text: str) -> list[RawEntity]:
        doc = nlp(text)
        return [(ent.start_char, ent.end_char, ent.text, ent.label_) for ent in doc.ents]

    return tag


def make_tagger(framework: str, model_name: str) -> Tagger:
    loaders = {"flair": _load_flair_tagger, "spacy": _load_spacy_tagger}
    try:
        return loaders[framework](model_name)
    except AdapterError:
        raise
    except Exception as exc:  # framework message passthrough
        raise AdapterError(f"could not load {framework} model {model_name!r}: {exc}") from exc


def _iter_corpus(path: Path) -> Iterable[tuple[str, str]]:
    with path.open("r", encoding="utf-8") as handle:
        for line_no, raw in enumerate(handle, start=1):
            if not raw.strip():
                continue
            try:
                record = json.loads(raw)
            except json.JSONDecodeError as exc:
                raise AdapterError(f"{path}, line {line_no}: invalid JSON: {exc}") from exc
            if record.get("answer", "accept") != "accept":
                continue
            text = record.get("text")
            meta = record.get("meta", {})
            doc_id = meta.get("id")
            if not isinstance(text, str) or not doc_id:
                raise AdapterError(f"{path}, line {line_no}: record needs 'text' and 'meta.id'")
            yield str(doc_id), text


def _check_preprocessed(doc_id: str, text: str) -> None:
    # Offsets must agree with the evaluation corpus, so the adapter refuses
    # to alter the text and instead insists it arrives preprocessed.
    if "\n" in text or "\r" in text or _DOUBLED_WHITESPACE.search(text):
        raise AdapterError(
            f"document {doc_id!r} is not preprocessed (line breaks or doubled whitespace present)"
        )


def _rectify_offsets(text: str, start: int, end: int, surface: str) -> tuple[int, int] | None:
    """Recompute offsets against the Python string when the framework's
    indexing disagrees (e.g. byte-based); None when the surface is gone."""
    if text[start:end] == surface:
        return start, end
    found = text.find(surface, max(0, start - len(surface) - 8))
    if found < 0:
        found = text.find(surface)
    if found < 0:
        return None
    return found, found + len(surface)


def run_baseline(run: BaselineRun, tagger: Tagger | None = None) -> RunSummary:
    """Tag every corpus document and write the predictions file.

    ``tagger`` is injectable for tests; by default it is created from the
    run's framework and model name. Output records carry the framework,
    model, and installed framework version in their meta block.
    """
    if tagger is None:
        tagger = make_tagger(run.framework, run.model_name)
    version = installed_version(run.framework)
    summary = RunSummary()
    out_lines: list[str] = []
    for doc_id, text in _iter_corpus(Path(run.corpus_path)):
        _check_preprocessed(doc_id, text)
        spans = []
        for raw_start, raw_end, surface, raw_label in tagger(text):
            target = run.label_map.get(raw_label, DROP)
            if target == DROP:
                summary.drop(raw_label)
                continue
            if target not in TARGET_LABELS:
                raise AdapterError(f"label map sends {raw_label!r} to unknown target {target!r}")
            rectified = _rectify_offsets(text, raw_start, raw_end, surface)
            if rectified is None:
                summary.drop(raw_label)
                continue
            start, end = rectified
            if not 0 <= start < end <= len(text) or not text[start:end].strip():
                summary.drop(raw_label)
                continue
            spans.append({"start": start, "end": end, "label": target})
        spans.sort(key=lambda s: (s["start"], s["end"]))
        record = {
            "text": text,
            "spans": spans,
            "meta": {
                "id": doc_id,
                "framework": run.framework,
                "model": run.model_name,
                "framework_version": version,
            },
            "answer": "accept",
        }
        out_lines.append(json.dumps(record, ensure_ascii=False))
        summary.documents += 1
        summary.spans_written += len(spans)
    Path(run.out_path).write_text("".join(line + "\n" for line in out_lines), "utf-8")
    return summary

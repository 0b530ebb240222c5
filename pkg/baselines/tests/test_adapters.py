import json
from pathlib import Path

import pytest

from ner_baselines.adapters import (
    AdapterError,
    BaselineRun,
    RunSummary,
    read_locked_versions,
    run_baseline,
)
from ner_baselines.cli import main

SENTENCES = [
    ("s1", "Goethe besuchte das Pergamonmuseum in Berlin."),
    ("s2", "Die Spree fließt an der Museumsinsel vorbei."),
    ("s3", "Bei Borchardt speiste der Maler Adolph Menzel."),
]

# What a German tagger would plausibly emit, including a MISC entity.
FAKE_ENTITIES = {
    "s1": [("Goethe", "PER"), ("Pergamonmuseum", "ORG"), ("Berlin", "LOC")],
    "s2": [("Spree", "LOC"), ("Museumsinsel", "LOC")],
    "s3": [("Borchardt", "ORG"), ("Adolph Menzel", "PER"), ("Maler", "MISC")],
}


def fake_tagger(text: str):
    doc_id = next(i for i, t in SENTENCES if t == text)
    out = []
    for surface, label in FAKE_ENTITIES[doc_id]:
        start = text.index(surface)
        out.append((start, start + len(surface), surface, label))
    return out


def write_corpus(tmp_path, sentences=SENTENCES) -> Path:
    path = tmp_path / "corpus.jsonl"
    lines = [
        json.dumps({"text": text, "spans": [], "meta": {"id": doc_id}}, ensure_ascii=False)
        for doc_id, text in sentences
    ]
    path.write_text("".join(line + "\n" for line in lines), "utf-8")
    return path


def make_run(tmp_path, **overrides) -> BaselineRun:
    defaults = dict(
        framework="flair",
        model_name="ner-german-large",
        out_path=tmp_path / "pred.jsonl",
    )
    defaults.update(overrides)
    if "corpus_path" not in defaults:
        defaults["corpus_path"] = write_corpus(tmp_path)
    return BaselineRun(**defaults)


class TestRunBaseline:
    def test_schema_valid_output(self, tmp_path):
        run = make_run(tmp_path)
        summary = run_baseline(run, tagger=fake_tagger)
        assert summary.documents == 3
        lines = run.out_path.read_text("utf-8").splitlines()
        assert len(lines) == 3
        for line in lines:
            record = json.loads(line)
            assert set(record) == {"text", "spans", "meta", "answer"}
            assert record["meta"]["framework"] == "flair"
            assert record["meta"]["model"] == "ner-german-large"
            assert "framework_version" in record["meta"]
            for span in record["spans"]:
                assert 0 <= span["start"] < span["end"] <= len(record["text"])
                assert span["label"] in ("PER", "LOC", "ORG")

    def test_misc_dropped_with_count(self, tmp_path):
        run = make_run(tmp_path)
        summary = run_baseline(run, tagger=fake_tagger)
        assert summary.dropped == {"MISC": 1}
        content = run.out_path.read_text("utf-8")
        assert "MISC" not in content

    def test_primary_tool_ingests_output(self, tmp_path):
        from histner.harness import ingest_baseline

        run = make_run(tmp_path)
        run_baseline(run, tagger=fake_tagger)
        preds, dropped = ingest_baseline(run.out_path, [doc_id for doc_id, _ in SENTENCES])
        assert dropped == 0
        assert {s.label for s in preds["s1"]} == {"PER", "ORG", "LOC"}
        text = SENTENCES[0][1]
        goethe = next(s for s in preds["s1"] if s.label == "PER")
        assert text[goethe.start : goethe.end] == "Goethe"

    def test_empty_corpus(self, tmp_path):
        run = make_run(tmp_path, corpus_path=write_corpus(tmp_path, []))
        summary = run_baseline(run, tagger=lambda text: [])
        assert summary == RunSummary(documents=0, spans_written=0, dropped={})
        assert run.out_path.read_text("utf-8") == ""

    def test_deterministic(self, tmp_path):
        run = make_run(tmp_path)
        run_baseline(run, tagger=fake_tagger)
        first = run.out_path.read_bytes()
        run_baseline(run, tagger=fake_tagger)
        assert run.out_path.read_bytes() == first

    def test_byte_offset_taggers_are_rectified(self, tmp_path):
        # "fließt" in UTF-8 is longer than its character count; a tagger
        # reporting byte offsets must still yield character-exact spans.
        def byte_tagger(text: str):
            if "Spree" not in text:
                return []
            surface = "Museumsinsel"
            byte_start = text.encode("utf-8").index(surface.encode("utf-8"))
            return [(byte_start, byte_start + len(surface), surface, "LOC")]

        run = make_run(tmp_path)
        run_baseline(run, tagger=byte_tagger)
        record = next(
            json.loads(line)
            for line in run.out_path.read_text("utf-8").splitlines()
            if json.loads(line)["meta"]["id"] == "s2"
        )
        (span,) = record["spans"]
        assert record["text"][span["start"] : span["end"]] == "Museumsinsel"

    def test_unpreprocessed_text_rejected(self, tmp_path):
        path = tmp_path / "raw.jsonl"
        path.write_text(json.dumps({"text": "Zwei\nZeilen", "spans": [], "meta": {"id": "x"}}) + "\n", "utf-8")
        run = make_run(tmp_path, corpus_path=path)
        with pytest.raises(AdapterError, match="not preprocessed"):
            run_baseline(run, tagger=lambda text: [])

    def test_unknown_framework_rejected(self, tmp_path):
        with pytest.raises(AdapterError, match="unsupported framework"):
            make_run(tmp_path, framework="stanza")

    def test_custom_label_map_unmapped_drops(self, tmp_path):
        run = make_run(tmp_path, label_map={"PER": "PER"})
        summary = run_baseline(run, tagger=fake_tagger)
        assert summary.spans_written == 2  # only the two PER entities survive
        assert summary.dropped["LOC"] == 3
        assert summary.dropped["ORG"] == 2
        assert summary.dropped["MISC"] == 1


class TestCli:
    def test_missing_corpus_exits_nonzero(self, tmp_path, capsys):
        code = main(["--framework", "flair", "--model", "m", "--corpus", str(tmp_path / "fehlt"), "--out", str(tmp_path / "o")])
        assert code == 1
        assert "fehlt" in capsys.readouterr().err

    def test_model_load_failure_passes_message_through(self, tmp_path, capsys):
        corpus = write_corpus(tmp_path)
        code = main(["--framework", "spacy", "--model", "kein_modell", "--corpus", str(corpus), "--out", str(tmp_path / "o")])
        assert code == 1
        assert "kein_modell" in capsys.readouterr().err


class TestLockFile:
    def test_pins_readable(self):
        pins = read_locked_versions()
        assert pins.get("flair") == "0.14.0"
        assert pins.get("spacy") == "3.7.4"
        assert pins.get("de_core_news_lg") == "3.7.0"

import json

import pytest

from histner.corpus import CorpusError, Document, EntitySpan, GoldCorpus, save_gold
from histner.evaluator import MeanStdev, score_documents
from histner.gateway import Gateway, ModelParams, Transcript, cache_key_for
from histner.harness import (
    ExperimentSpec,
    ResultsTable,
    TableRow,
    emit_report,
    ingest_baseline,
    load_experiment_spec,
    parse_report_json,
    run_experiment,
)
from histner.promptkit import PromptConfig, build_prompt
from histner.tagspan import render_tagged

PAGES = [
    ("page-1", "Pfade des Aves durch Garetien", [EntitySpan(10, 14, "PER"), EntitySpan(21, 29, "LOC")]),
    ("page-2", "Das Museum liegt an der Spree", [EntitySpan(4, 10, "ORG"), EntitySpan(24, 29, "LOC")]),
    ("page-3", "Goethe besuchte Potsdam im Sommer", [EntitySpan(0, 6, "PER"), EntitySpan(16, 23, "LOC")]),
]


def gold_corpus() -> GoldCorpus:
    documents = [Document(id=i, text=t, meta={"id": i}) for i, t, _ in PAGES]
    annotations = {i: list(s) for i, t, s in PAGES}
    return GoldCorpus(documents, annotations)


def write_gold(tmp_path, name="gold.jsonl"):
    path = tmp_path / name
    save_gold(gold_corpus(), path)
    return path


def seed_perfect_cache(cache_dir, params: ModelParams, rows, pool=()) -> None:
    """Store one gold-rendering transcript per (row config, page)."""
    from histner.promptkit import select_shots

    gateway = Gateway(params, "record", cache_dir, transport=lambda payload: None)
    for _, config in rows:
        examples = select_shots(list(pool), config.shots, config.seed) if config.shots else []
        for doc_id, text, spans in PAGES:
            bundle = build_prompt(config, examples, text)
            messages = bundle.messages()
            gateway.store_transcript(
                Transcript(
                    cache_key=cache_key_for(params, messages),
                    request=messages,
                    response_text=render_tagged(text, spans),
                    finish_reason="stop",
                    timestamp="2024-01-01T00:00:00+00:00",
                )
            )


def make_spec(tmp_path, rows, **overrides) -> ExperimentSpec:
    defaults = dict(
        name="fixture",
        gold_path=write_gold(tmp_path),
        rows=rows,
        model=ModelParams(model_name="test-model", max_output_tokens=64),
        reference_row=rows[0][0],
        mode="replay_strict",
        cache_dir=tmp_path / "cache",
    )
    defaults.update(overrides)
    return ExperimentSpec(**defaults)


class TestRunExperiment:
    def test_perfect_replay_row(self, tmp_path):
        rows = [("Full Prompt", PromptConfig(language="de", context_level="specific", notes=()))]
        spec = make_spec(tmp_path, rows)
        seed_perfect_cache(spec.cache_dir, spec.model, rows)
        table = run_experiment(spec)
        (row,) = table.rows
        assert (row.recall.mean, row.precision.mean, row.f1.mean) == (1.0, 1.0, 1.0)
        assert (row.recall.stdev, row.precision.stdev, row.f1.stdev) == (0.0, 0.0, 0.0)
        assert (row.recall_impact, row.precision_impact, row.f1_impact) == (0.0, 0.0, 0.0)
        assert row.excluded_pages == 0
        assert not row.degenerate

    def test_replay_strict_is_byte_identical(self, tmp_path):
        rows = [("Full Prompt", PromptConfig(notes=()))]
        spec = make_spec(tmp_path, rows)
        seed_perfect_cache(spec.cache_dir, spec.model, rows)
        first = emit_report(run_experiment(spec), "json")
        second = emit_report(run_experiment(spec), "json")
        assert first == second

    def test_truncated_pages_excluded_and_conserved(self, tmp_path):
        rows = [("Full Prompt", PromptConfig(notes=()))]
        spec = make_spec(tmp_path, rows)
        seed_perfect_cache(spec.cache_dir, spec.model, rows)
        # Overwrite one page's transcript as truncated.
        config = rows[0][1]
        doc_id, text, _ = PAGES[1]
        bundle = build_prompt(config, [], text)
        messages = bundle.messages()
        gateway = Gateway(spec.model, "record", spec.cache_dir, transport=lambda p: None)
        gateway.store_transcript(
            Transcript(cache_key_for(spec.model, messages), messages, "abgeschnitten", "length", "t")
        )
        pages_index: dict = {}
        table = run_experiment(spec, pages_index=pages_index)
        (row,) = table.rows
        assert row.excluded_pages == 1
        statuses = [entry["status"] for entry in pages_index["Full Prompt"].values()]
        assert statuses.count("ok") + statuses.count("truncated") == len(PAGES)
        assert (row.recall.mean, row.precision.mean) == (1.0, 1.0)

    def test_degenerate_row_flagged(self, tmp_path):
        rows = [("Full Prompt", PromptConfig(notes=()))]
        spec = make_spec(tmp_path, rows)
        seed_perfect_cache(spec.cache_dir, spec.model, rows)
        # One page answers with entities that exist nowhere in the source.
        config = rows[0][1]
        doc_id, text, _ = PAGES[0]
        messages = build_prompt(config, [], text).messages()
        gateway = Gateway(spec.model, "record", spec.cache_dir, transport=lambda p: None)
        gateway.store_transcript(
            Transcript(
                cache_key_for(spec.model, messages),
                messages,
                "<<PER Qqqqq /PER>> und <<LOC Wwwww /LOC>>",
                "stop",
                "t",
            )
        )
        table = run_experiment(spec)
        assert table.rows[0].degenerate

    def test_reference_row_must_exist(self, tmp_path):
        rows = [("A", PromptConfig(notes=()))]
        with pytest.raises(ValueError, match="reference_row"):
            make_spec(tmp_path, rows, reference_row="B")

    def test_duplicate_row_names_rejected(self, tmp_path):
        rows = [("A", PromptConfig(notes=())), ("A", PromptConfig(notes=()))]
        with pytest.raises(ValueError, match="unique"):
            make_spec(tmp_path, rows)

    def test_shot_rows_consume_example_pool(self, tmp_path):
        documents, annotations = [], {}
        for i in range(32):
            label = ("PER", "LOC", "ORG")[i % 3]
            text = f"Beispielsatz {i:02d} mit Name{i:02d} darin"
            start = text.index(f"Name{i:02d}")
            doc_id = f"ex-{i:02d}"
            documents.append(Document(id=doc_id, text=text, meta={"id": doc_id}))
            annotations[doc_id] = [EntitySpan(start, start + 6, label)]
        examples_path = tmp_path / "examples.jsonl"
        save_gold(GoldCorpus(documents, annotations), examples_path)

        from histner.promptkit import ShotExample

        pool = [ShotExample.from_annotation(doc.text, annotations[doc.id]) for doc in documents]
        config = PromptConfig(notes=(), shots=2, seed=9)
        rows = [("2-shot", config)]
        spec = make_spec(tmp_path, rows, examples_path=examples_path)
        seed_perfect_cache(spec.cache_dir, spec.model, rows, pool=pool)
        table = run_experiment(spec)
        (row,) = table.rows
        assert row.shots == 2
        assert (row.recall.mean, row.precision.mean, row.f1.mean) == (1.0, 1.0, 1.0)

    def test_shot_rows_require_example_pool(self, tmp_path):
        rows = [("2-shot", PromptConfig(notes=(), shots=2))]
        spec = make_spec(tmp_path, rows)
        with pytest.raises(ValueError, match="examples"):
            run_experiment(spec)

    def test_parallel_jobs_identical_output(self, tmp_path):
        rows = [("Full Prompt", PromptConfig(notes=()))]
        spec = make_spec(tmp_path, rows, jobs=4)
        seed_perfect_cache(spec.cache_dir, spec.model, rows)
        parallel = emit_report(run_experiment(spec), "json")
        spec.jobs = 1
        sequential = emit_report(run_experiment(spec), "json")
        assert parallel == sequential

    def test_random_corpora_score_perfectly_on_gold_replay(self, tmp_path):
        # Pages of unique words with gold spans on sampled words: a cache of
        # gold renderings must reproduce the annotations exactly end to end.
        import random

        rng = random.Random(99)
        documents, annotations = [], {}
        for d in range(5):
            words = [f"w{d}x{i:03d}" for i in range(rng.randint(20, 60))]
            text = " ".join(words)
            spans = []
            pos = 0
            for i in sorted(rng.sample(range(len(words)), k=rng.randint(1, 6))):
                start = text.index(words[i], pos)
                spans.append(EntitySpan(start, start + len(words[i]), rng.choice(("PER", "LOC", "ORG"))))
                pos = start + len(words[i])
            doc_id = f"rand-{d}"
            documents.append(Document(id=doc_id, text=text, meta={"id": doc_id}))
            annotations[doc_id] = spans
        gold_path = tmp_path / "rand_gold.jsonl"
        save_gold(GoldCorpus(documents, annotations), gold_path)

        config = PromptConfig(notes=())
        rows = [("Full Prompt", config)]
        spec = make_spec(tmp_path, rows, gold_path=gold_path)
        params = spec.model
        gateway = Gateway(params, "record", spec.cache_dir, transport=lambda p: None)
        for doc in documents:
            messages = build_prompt(config, [], doc.text).messages()
            gateway.store_transcript(
                Transcript(
                    cache_key_for(params, messages),
                    messages,
                    render_tagged(doc.text, annotations[doc.id]),
                    "stop",
                    "t",
                )
            )
        table = run_experiment(spec)
        (row,) = table.rows
        assert (row.recall.mean, row.precision.mean, row.f1.mean) == (1.0, 1.0, 1.0)
        assert (row.recall_micro, row.precision_micro, row.f1_micro) == (1.0, 1.0, 1.0)

    def test_baseline_rows_share_evaluator_path(self, tmp_path):
        rows = [("Full Prompt", PromptConfig(notes=()))]
        pred_path = tmp_path / "baseline.jsonl"
        save_gold(gold_corpus(), pred_path)
        spec = make_spec(tmp_path, rows, baseline_files=[("Baseline flair", pred_path)])
        seed_perfect_cache(spec.cache_dir, spec.model, rows)
        table = run_experiment(spec)
        (baseline,) = table.footer
        assert baseline.name == "Baseline flair"
        assert (baseline.recall.mean, baseline.precision.mean, baseline.f1.mean) == (1.0, 1.0, 1.0)
        # Parity: scoring the same file through the evaluator directly agrees.
        corpus = gold_corpus()
        preds, _ = ingest_baseline(pred_path, corpus.document_ids())
        agg = score_documents(preds, corpus.annotations, "ent_type")
        assert agg.macro_f1.mean == baseline.f1.mean
        assert agg.micro.f1 == baseline.f1_micro


class TestIngestBaseline:
    def test_identity(self, tmp_path):
        path = tmp_path / "pred.jsonl"
        save_gold(gold_corpus(), path)
        preds, dropped = ingest_baseline(path, [i for i, _, _ in PAGES])
        assert dropped == 0
        assert preds["page-1"] == [EntitySpan(10, 14, "PER"), EntitySpan(21, 29, "LOC")]

    def test_misc_label_dropped_with_count(self, tmp_path):
        path = tmp_path / "pred.jsonl"
        record = {
            "text": PAGES[0][1],
            "spans": [
                {"start": 10, "end": 14, "label": "PER"},
                {"start": 0, "end": 5, "label": "MISC"},
            ],
            "meta": {"id": "page-1"},
        }
        path.write_text(json.dumps(record) + "\n", "utf-8")
        preds, dropped = ingest_baseline(path, ["page-1"])
        assert dropped == 1
        assert all(s.label != "MISC" for s in preds["page-1"])

    def test_unknown_document_id(self, tmp_path):
        path = tmp_path / "pred.jsonl"
        record = {"text": "x y", "spans": [], "meta": {"id": "ghost"}}
        path.write_text(json.dumps(record) + "\n", "utf-8")
        with pytest.raises(CorpusError, match="ghost"):
            ingest_baseline(path, ["page-1"])

    def test_missing_documents_predict_nothing(self, tmp_path):
        path = tmp_path / "pred.jsonl"
        path.write_text("", "utf-8")
        preds, _ = ingest_baseline(path, ["page-1", "page-2"])
        assert preds == {"page-1": [], "page-2": []}

    def test_empty_predictions_score_zero(self, tmp_path):
        path = tmp_path / "pred.jsonl"
        path.write_text("", "utf-8")
        corpus = gold_corpus()
        preds, _ = ingest_baseline(path, corpus.document_ids())
        agg = score_documents(preds, corpus.annotations, "ent_type")
        assert agg.micro.recall == 0.0
        assert agg.micro.precision == 0.0

    def test_overlapping_predictions_flattened(self, tmp_path):
        path = tmp_path / "pred.jsonl"
        record = {
            "text": PAGES[0][1],
            "spans": [
                {"start": 0, "end": 14, "label": "ORG"},
                {"start": 10, "end": 14, "label": "PER"},
            ],
            "meta": {"id": "page-1"},
        }
        path.write_text(json.dumps(record) + "\n", "utf-8")
        preds, _ = ingest_baseline(path, ["page-1"])
        assert preds["page-1"] == [EntitySpan(0, 14, "ORG")]


def sample_table() -> ResultsTable:
    def row(name, mean):
        return TableRow(
            name=name,
            language="de",
            shots=0,
            recall=MeanStdev(mean, 0.1),
            precision=MeanStdev(mean, 0.08),
            f1=MeanStdev(mean, 0.09),
            recall_micro=mean,
            precision_micro=mean,
            f1_micro=mean,
            recall_impact=0.0,
            precision_impact=0.0,
            f1_impact=0.0,
        )

    return ResultsTable("Beispiel", "A", "ent_type", [row("A", 0.84), row("B", 0.81)])


class TestEmitReport:
    def test_markdown_formatting(self):
        table = ResultsTable("T", "perfekt", "ent_type", [TableRow(
            "perfekt", "de", 0,
            recall=MeanStdev(1.0, 0.0),
            precision=MeanStdev(1.0, 0.0),
            f1=MeanStdev(1.0, 0.0),
            recall_micro=1.0, precision_micro=1.0, f1_micro=1.0,
            recall_impact=0.0, precision_impact=0.0, f1_impact=0.0,
        )])
        text = emit_report(table, "markdown").decode("utf-8")
        assert "1.00 ±0.00" in text
        assert "+0.00 %" in text

    def test_json_round_trip(self):
        table = sample_table()
        assert parse_report_json(emit_report(table, "json")) == table

    def test_csv_shape(self):
        table = sample_table()
        lines = emit_report(table, "csv").decode("utf-8").strip().splitlines()
        assert len(lines) == 1 + len(table.rows)
        assert lines[0].startswith("name,language,shots")

    def test_unknown_format(self):
        with pytest.raises(ValueError):
            emit_report(sample_table(), "xml")

    def test_markdown_column_order(self):
        text = emit_report(sample_table(), "markdown").decode("utf-8")
        header = next(line for line in text.splitlines() if line.startswith("| Row"))
        cells = [c.strip() for c in header.strip("|").split("|")]
        assert cells[:8] == ["Row", "lang", "Recall", "Impact", "Precision", "Impact", "F1", "Impact"]


class TestLoadExperimentSpec:
    def test_yaml_with_ablation_expansion(self, tmp_path):
        gold = write_gold(tmp_path)
        spec_file = tmp_path / "exp.yaml"
        spec_file.write_text(
            """
name: Ablation fixture
gold: gold.jsonl
reference_row: Specific Context
mode: replay_strict
cache_dir: cache
model:
  name: test-model
  max_output_tokens: 64
rows:
  - ablation: true
    language: de
    seed: 1
baselines: []
""",
            "utf-8",
        )
        spec = load_experiment_spec(spec_file)
        assert len(spec.rows) == 10
        assert spec.gold_path == gold
        assert spec.reference_row == "Specific Context"
        assert spec.cache_dir == tmp_path / "cache"

    def test_named_rows(self, tmp_path):
        write_gold(tmp_path)
        spec_file = tmp_path / "exp.yaml"
        spec_file.write_text(
            """
name: Zwei Zeilen
gold: gold.jsonl
reference_row: Voll
model: {name: m, max_output_tokens: 32}
rows:
  - name: Voll
    language: de
    context: specific
    features: all
  - name: Ohne
    language: de
    context: none
    features: []
""",
            "utf-8",
        )
        spec = load_experiment_spec(spec_file)
        assert [name for name, _ in spec.rows] == ["Voll", "Ohne"]
        assert spec.rows[0][1].features == frozenset(
            {"structure", "instruction_repetition", "bullying", "system_prompt_split", "deep_breath"}
        )

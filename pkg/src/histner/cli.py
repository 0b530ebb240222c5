"""Command-line entry point wrapping the pipeline as composable subcommands.

Exit codes are stable: 0 ok, 1 input error, 2 degenerate pages, 3 missing
credentials, 4 replay cache miss. Everything is scriptable; no prompts.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import yaml

from . import corpus as corpus_mod
from .corpus import CorpusError, Document, EntitySpan, GoldCorpus, load_gold, save_gold, split_examples_pool, trim_span
from .evaluator import SCHEMES, format_mean_stdev, score_documents
from .gateway import CacheMissError, CredentialsError, Gateway, ModelParams
from .grounding import GroundedSpan, ground_all
from .harness import annotate_page, emit_report, load_experiment_spec, run_experiment
from .promptkit import ShotExample, TemplateError, config_from_dict, pool_from_records, select_shots
from .tagspan import flatten_spans, parse_tagged

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_DEGENERATE = 2
EXIT_CREDENTIALS = 3
EXIT_CACHE_MISS = 4


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors by default; 2 is taken by "degenerate".
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _build_parser() -> _Parser:
    parser = _Parser(prog="histner", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("annotate", help="annotate a corpus with a chat-completion model")
    p.add_argument("--corpus", required=True, help="corpus file (newline-delimited records)")
    p.add_argument("--prompt-config", required=True, help="YAML prompt configuration")
    p.add_argument("--model", required=True, help="model name")
    p.add_argument("--mode", default="replay", choices=("live", "record", "replay", "replay_strict"))
    p.add_argument("--out", required=True, help="output predictions file")
    p.add_argument("--cache-dir", default=None, help="transcript cache directory")
    p.add_argument("--endpoint", default=None, help="chat-completion endpoint URL")
    p.add_argument("--examples", default=None, help="32-excerpt example pool (needed when shots > 0)")
    p.add_argument("--max-output-tokens", type=int, default=4096)
    p.add_argument("--temperature", type=float, default=0.0)
    p.add_argument("--request-seed", type=int, default=None)
    p.add_argument("--jobs", type=int, default=1, help="max in-flight requests")

    p = sub.add_parser("parse", help="parse inline-tagged text into plain text plus spans")
    p.add_argument("--in", dest="infile", required=True, help="tagged text file, or - for stdin")
    p.add_argument("--out", default="-", help="output JSON file, or - for stdout")

    p = sub.add_parser("ground", help="locate parsed spans in the source text")
    p.add_argument("--tagged", required=True, help="tagged text file, or - for stdin")
    p.add_argument("--source", required=True, help="plain UTF-8 source text file")
    p.add_argument("--out", default="-", help="output JSON file, or - for stdout")

    p = sub.add_parser("evaluate", help="score predictions against gold annotations")
    p.add_argument("--gold", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--scheme", default="ent_type", choices=SCHEMES)
    p.add_argument("--format", default="markdown", choices=("markdown", "json"))

    p = sub.add_parser("experiment", help="run a declarative experiment file")
    p.add_argument("--spec", required=True, help="YAML experiment file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--jobs", type=int, default=None, help="override max in-flight requests")

    p = sub.add_parser("shots", help="cut a shot-example pool from held-out pages")
    p.add_argument("--corpus", required=True, help="held-out annotated pages")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--min-len", type=int, default=200)
    p.add_argument("--max-len", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    return parser


def _read_text(spec: str) -> str:
    if spec == "-":
        return sys.stdin.read()
    return Path(spec).read_text("utf-8")


def _write_text(spec: str, text: str) -> None:
    if spec == "-":
        sys.stdout.write(text)
    else:
        Path(spec).write_text(text, "utf-8")


def _require_file(path_str: str) -> Path:
    path = Path(path_str)
    if not path.exists():
        raise CorpusError(f"input file does not exist: {path}")
    return path


def _load_prompt_config(path: Path):
    data = yaml.safe_load(path.read_text("utf-8")) or {}
    if not isinstance(data, dict):
        raise CorpusError(f"prompt config {path} must be a mapping")
    examples_path = data.pop("examples", None)
    config = config_from_dict(data)
    if examples_path is not None:
        examples_path = Path(examples_path)
        if not examples_path.is_absolute():
            examples_path = path.parent / examples_path
    return config, examples_path


def _cmd_annotate(args) -> int:
    corpus_path = _require_file(args.corpus)
    config, config_examples = _load_prompt_config(_require_file(args.prompt_config))
    corpus = load_gold(corpus_path)
    examples: list[ShotExample] = []
    if config.shots:
        pool_path = Path(args.examples) if args.examples else config_examples
        if pool_path is None:
            raise CorpusError("prompt config requests shots but no example pool was given")
        pool_corpus = load_gold(_require_file(str(pool_path)))
        pool = pool_from_records(
            [(doc.text, pool_corpus.spans_for(doc.id)) for doc in pool_corpus.documents]
        )
        examples = select_shots(pool, config.shots, config.seed)
    params = ModelParams(
        model_name=args.model,
        max_output_tokens=args.max_output_tokens,
        temperature=args.temperature,
        endpoint_url=args.endpoint,
        request_seed=args.request_seed,
    )
    gateway = Gateway(params, args.mode, args.cache_dir)
    degenerate = False
    documents: list[Document] = []
    annotations: dict[str, list[EntitySpan]] = {}
    ordered_docs = sorted(corpus.documents, key=lambda d: d.id)
    with ThreadPoolExecutor(max_workers=max(1, args.jobs)) as executor:
        outcomes = list(executor.map(lambda d: annotate_page(config, examples, d, gateway), ordered_docs))
    for doc, outcome in zip(ordered_docs, outcomes):
        meta = dict(doc.meta)
        if outcome.status == "truncated":
            meta["truncated"] = "true"
            spans: list[EntitySpan] = []
        else:
            spans = [t for s in outcome.spans if (t := trim_span(doc.text, s)) is not None]
            spans = flatten_spans(spans)
        degenerate = degenerate or outcome.degenerate
        documents.append(Document(id=doc.id, text=doc.text, meta=meta))
        annotations[doc.id] = spans
    save_gold(GoldCorpus(documents, annotations), args.out)
    return EXIT_DEGENERATE if degenerate else EXIT_OK


def _parsed_to_dict(parsed) -> dict:
    return {
        "plain_text": parsed.plain_text,
        "spans": [{"start": s.start, "end": s.end, "label": s.label} for s in parsed.spans],
        "warnings": [{"kind": w.kind, "position": w.position} for w in parsed.warnings],
    }


def _cmd_parse(args) -> int:
    parsed = parse_tagged(_read_text(args.infile))
    _write_text(args.out, json.dumps(_parsed_to_dict(parsed), ensure_ascii=False, indent=2) + "\n")
    return EXIT_OK


def _grounded_to_dict(grounded: list[GroundedSpan], failures) -> dict:
    return {
        "grounded": [
            {"start": g.span.start, "end": g.span.end, "label": g.span.label, "dist": g.dist, "origin": g.origin}
            for g in grounded
        ],
        "failures": [
            {"start": f.origin.start, "end": f.origin.end, "label": f.origin.label, "pattern": f.pattern, "reason": f.reason}
            for f in failures
        ],
    }


def _cmd_ground(args) -> int:
    parsed = parse_tagged(_read_text(args.tagged))
    source_text = _require_file(args.source).read_text("utf-8")
    doc = Document(id="source", text=corpus_mod.preprocess(source_text))
    grounded, failures = ground_all(replace(parsed, spans=flatten_spans(parsed.spans)), doc)
    _write_text(args.out, json.dumps(_grounded_to_dict(grounded, failures), ensure_ascii=False, indent=2) + "\n")
    return EXIT_OK


def _metrics_lines(agg, fmt: str) -> str:
    if fmt == "json":
        payload = {
            "macro": {
                "recall": {"mean": agg.macro_recall.mean, "stdev": agg.macro_recall.stdev},
                "precision": {"mean": agg.macro_precision.mean, "stdev": agg.macro_precision.stdev},
                "f1": {"mean": agg.macro_f1.mean, "stdev": agg.macro_f1.stdev},
            },
            "micro": {"recall": agg.micro.recall, "precision": agg.micro.precision, "f1": agg.micro.f1},
            "per_label": {
                label: {"recall": m.recall, "precision": m.precision, "f1": m.f1}
                for label, m in agg.per_label.items()
            },
            "per_page": {
                doc_id: {"recall": m.recall, "precision": m.precision, "f1": m.f1}
                for doc_id, m in agg.per_page.items()
            },
        }
        return json.dumps(payload, ensure_ascii=False, indent=2) + "\n"
    lines = [
        "| Scope | Recall | Precision | F1 |",
        "|---|---|---|---|",
        f"| macro | {format_mean_stdev(agg.macro_recall)} | {format_mean_stdev(agg.macro_precision)} | {format_mean_stdev(agg.macro_f1)} |",
        f"| micro | {agg.micro.recall:.2f} | {agg.micro.precision:.2f} | {agg.micro.f1:.2f} |",
    ]
    for label, m in agg.per_label.items():
        lines.append(f"| {label} | {m.recall:.2f} | {m.precision:.2f} | {m.f1:.2f} |")
    return "\n".join(lines) + "\n"


def _cmd_evaluate(args) -> int:
    gold = load_gold(_require_file(args.gold))
    pred = load_gold(_require_file(args.pred))
    gold_ids = set(gold.document_ids())
    pred_ids = set(pred.document_ids())
    if gold_ids != pred_ids:
        missing = sorted(gold_ids - pred_ids)
        extra = sorted(pred_ids - gold_ids)
        raise CorpusError(f"document ids differ: missing from predictions {missing}, extra {extra}")
    agg = score_documents(
        {doc_id: pred.spans_for(doc_id) for doc_id in sorted(pred_ids)},
        {doc_id: gold.spans_for(doc_id) for doc_id in sorted(gold_ids)},
        args.scheme,
    )
    sys.stdout.write(_metrics_lines(agg, args.format))
    return EXIT_OK


def _cmd_experiment(args) -> int:
    spec = load_experiment_spec(_require_file(args.spec))
    if args.jobs is not None:
        spec.jobs = args.jobs
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    pages_index: dict = {}
    table = run_experiment(spec, pages_index=pages_index)
    (out_dir / "table.md").write_bytes(emit_report(table, "markdown"))
    (out_dir / "table.csv").write_bytes(emit_report(table, "csv"))
    (out_dir / "table.json").write_bytes(emit_report(table, "json"))
    (out_dir / "transcripts_index.json").write_text(
        json.dumps(pages_index, ensure_ascii=False, indent=2, sort_keys=True) + "\n", "utf-8"
    )
    return EXIT_OK


def _cmd_shots(args) -> int:
    corpus = load_gold(_require_file(args.corpus))
    excerpts = split_examples_pool(corpus, args.count, args.min_len, args.max_len, args.seed)
    documents = []
    annotations = {}
    for i, (text, spans) in enumerate(excerpts):
        doc_id = f"excerpt-{i:03d}"
        documents.append(Document(id=doc_id, text=text, meta={"id": doc_id}))
        annotations[doc_id] = spans
    save_gold(GoldCorpus(documents, annotations), args.out)
    return EXIT_OK


_COMMANDS = {
    "annotate": _cmd_annotate,
    "parse": _cmd_parse,
    "ground": _cmd_ground,
    "evaluate": _cmd_evaluate,
    "experiment": _cmd_experiment,
    "shots": _cmd_shots,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_INPUT
    try:
        return _COMMANDS[args.command](args)
    except CredentialsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CREDENTIALS
    except CacheMissError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CACHE_MISS
    except (CorpusError, TemplateError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()

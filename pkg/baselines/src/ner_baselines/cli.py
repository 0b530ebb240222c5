"""CLI for generating baseline predictions."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .adapters import (
    AdapterError,
    BaselineRun,
    installed_version,
    read_locked_versions,
    run_baseline,
)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="run_baseline",
        description="Tag a corpus with an established NER framework and write shared-format predictions.",
    )
    parser.add_argument("--framework", required=True, choices=("flair", "spacy"))
    parser.add_argument("--model", required=True, help="framework model name, e.g. ner-german-large or de_core_news_lg")
    parser.add_argument("--corpus", required=True, help="preprocessed corpus (newline-delimited records)")
    parser.add_argument("--out", required=True, help="output predictions file")
    parser.add_argument("--label-map", default=None, help="JSON object overriding the framework label map")
    args = parser.parse_args(argv)

    corpus = Path(args.corpus)
    if not corpus.exists():
        print(f"error: corpus file does not exist: {corpus}", file=sys.stderr)
        return 1

    pins = read_locked_versions()
    installed = installed_version(args.framework)
    pinned = pins.get(args.framework)
    if pinned and installed not in ("unavailable", pinned):
        print(
            f"warning: installed {args.framework} {installed} differs from pinned {pinned}; "
            "baseline scores drift with model releases",
            file=sys.stderr,
        )

    label_map = json.loads(args.label_map) if args.label_map else {}
    run = BaselineRun(
        framework=args.framework,
        model_name=args.model,
        corpus_path=corpus,
        out_path=Path(args.out),
        label_map=label_map,
    )
    try:
        summary = run_baseline(run)
    except AdapterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    dropped = ", ".join(f"{label}: {count}" for label, count in sorted(summary.dropped.items())) or "none"
    print(
        f"{summary.documents} documents, {summary.spans_written} spans written, dropped: {dropped}",
        file=sys.stderr,
    )
    return 0


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()

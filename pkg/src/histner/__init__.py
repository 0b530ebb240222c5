"""LLM-assisted named-entity annotation for historical texts."""

from .corpus import (
    DEFAULT_LABELS,
    CorpusError,
    Document,
    EntitySpan,
    GoldCorpus,
    load_gold,
    preprocess,
    save_gold,
    split_examples_pool,
)
from .evaluator import (
    AggregateMetrics,
    MatchCounts,
    Metrics,
    aggregate,
    impact,
    match_page,
    metrics_of,
    score_documents,
)
from .gateway import Gateway, ModelParams, Transcript, cache_key_for
from .grounding import FuzzyMatch, GroundedSpan, find_near_matches, ground_all, levenshtein, max_dist_for
from .harness import ExperimentSpec, ResultsTable, emit_report, ingest_baseline, load_experiment_spec, run_experiment
from .promptkit import PromptBundle, PromptConfig, ShotExample, ablation_variants, build_prompt, select_shots
from .tagspan import ParsedAnnotation, flatten_spans, parse_tagged, render_tagged

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_LABELS",
    "CorpusError",
    "Document",
    "EntitySpan",
    "GoldCorpus",
    "load_gold",
    "preprocess",
    "save_gold",
    "split_examples_pool",
    "AggregateMetrics",
    "MatchCounts",
    "Metrics",
    "aggregate",
    "impact",
    "match_page",
    "metrics_of",
    "score_documents",
    "Gateway",
    "ModelParams",
    "Transcript",
    "cache_key_for",
    "FuzzyMatch",
    "GroundedSpan",
    "find_near_matches",
    "ground_all",
    "levenshtein",
    "max_dist_for",
    "ExperimentSpec",
    "ResultsTable",
    "emit_report",
    "ingest_baseline",
    "load_experiment_spec",
    "run_experiment",
    "PromptBundle",
    "PromptConfig",
    "ShotExample",
    "ablation_variants",
    "build_prompt",
    "select_shots",
    "ParsedAnnotation",
    "flatten_spans",
    "parse_tagged",
    "render_tagged",
]

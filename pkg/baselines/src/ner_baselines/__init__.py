"""Baseline NER adapters emitting the shared prediction format."""

from .adapters import AdapterError, BaselineRun, RunSummary, make_tagger, run_baseline

__all__ = ["AdapterError", "BaselineRun", "RunSummary", "make_tagger", "run_baseline"]

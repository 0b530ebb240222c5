"""Prompt assembly from language-keyed template files.

A prompt is built from six components: task introduction with optional
context, the tagging instructions plus NOTE lines, a shot-example block, an
instruction summary, a reward/punishment passage, and the step-by-step
phrase. Each engineering feature toggles independently so single-feature
ablations stay comparable. All wording lives in template files; the code
only arranges components.
"""

from __future__ import annotations

import random
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, replace
from functools import lru_cache
from importlib import resources
from typing import Sequence

from .corpus import DEFAULT_LABELS, EntitySpan
from .tagspan import parse_tagged, render_tagged

LANGUAGES = ("de", "en")
CONTEXT_LEVELS = ("none", "generic", "specific")
FEATURES = (
    "structure",
    "instruction_repetition",
    "bullying",
    "system_prompt_split",
    "deep_breath",
)
ALLOWED_SHOTS = (0, 1, 2, 4, 8, 16, 32)
POOL_SIZE = 32

DEFAULT_LABEL_SET = (
    ("PER", "people"),
    ("LOC", "locations"),
    ("ORG", "organisations"),
)

_SECTION_KEY = re.compile(r"^\[([a-z0-9_.]+)\]\s*$")


class TemplateError(ValueError):
    """A template file lacks a key the configuration needs."""


def _parse_template_text(raw: str) -> dict[str, str]:
    sections: dict[str, str] = {}
    key: str | None = None
    buf: list[str] = []
    for line in raw.splitlines():
        match = _SECTION_KEY.match(line)
        if match:
            if key is not None:
                sections[key] = "\n".join(buf).strip()
            key = match.group(1)
            buf = []
        elif key is not None:
            buf.append(line)
    if key is not None:
        sections[key] = "\n".join(buf).strip()
    return sections


@lru_cache(maxsize=None)
def load_templates(language: str) -> dict[str, str]:
    """Read the packaged key/text map for one instruction language."""
    if language not in LANGUAGES:
        raise TemplateError(f"unsupported language {language!r} (expected one of {list(LANGUAGES)})")
    raw = (resources.files("histner") / "templates" / f"{language}.txt").read_text("utf-8")
    return _parse_template_text(raw)


def _template(templates: dict[str, str], language: str, key: str) -> str:
    try:
        text = templates[key]
    except KeyError:
        raise TemplateError(f"missing template key '{key}' for language '{language}'") from None
    if not text:
        raise TemplateError(f"empty template key '{key}' for language '{language}'")
    return text


def default_notes(language: str, context_level: str = "specific") -> tuple[str, ...]:
    """NOTE lines shipped with the templates, matched to the context level.

    The corpus-specific notes target errors observed with rich context;
    without it the generic caveats about old language apply instead.
    """
    templates = load_templates(language)
    prefix = "note.specific." if context_level == "specific" else "note.general."
    return tuple(text for key, text in templates.items() if key.startswith(prefix))


def tag_rule_lines(language: str, labels: Sequence[str] = DEFAULT_LABELS) -> dict[str, str]:
    """The per-label tag rule line from the instruction template."""
    instructions = _template(load_templates(language), language, "instructions")
    lines: dict[str, str] = {}
    for label in labels:
        for line in instructions.splitlines():
            if f"<<{label}" in line:
                lines[label] = line.strip()
                break
        else:
            raise TemplateError(f"instructions template for '{language}' lacks a rule line for {label}")
    return lines


@dataclass(frozen=True)
class PromptConfig:
    """One experiment cell: language, context level, toggles, shots, seed."""

    language: str = "de"
    context_level: str = "specific"
    features: frozenset[str] = frozenset()
    notes: tuple[str, ...] = ()
    shots: int = 0
    seed: int = 0
    label_set: tuple[tuple[str, str], ...] = DEFAULT_LABEL_SET

    def __post_init__(self) -> None:
        if self.language not in LANGUAGES:
            raise ValueError(f"language must be one of {list(LANGUAGES)}, got {self.language!r}")
        if self.context_level not in CONTEXT_LEVELS:
            raise ValueError(f"context_level must be one of {list(CONTEXT_LEVELS)}, got {self.context_level!r}")
        unknown = set(self.features) - set(FEATURES)
        if unknown:
            raise ValueError(f"unknown features: {sorted(unknown)}")
        if self.shots not in ALLOWED_SHOTS:
            raise ValueError(f"shots must be one of {list(ALLOWED_SHOTS)}, got {self.shots}")

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.label_set)


@dataclass(frozen=True)
class PromptBundle:
    system_message: str | None
    user_message: str
    example_count: int
    rendered_feature_list: frozenset[str]

    def messages(self) -> list[dict[str, str]]:
        out = []
        if self.system_message is not None:
            out.append({"role": "system", "content": self.system_message})
        out.append({"role": "user", "content": self.user_message})
        return out


@dataclass(frozen=True)
class ShotExample:
    input_text: str
    tagged_output: str
    label_histogram: tuple[tuple[str, int], ...]

    @classmethod
    def from_annotation(cls, text: str, spans: Sequence[EntitySpan]) -> "ShotExample":
        tagged = render_tagged(text, spans)
        histogram = tuple(sorted(Counter(s.label for s in spans).items()))
        return cls(text, tagged, histogram)

    def validate(self, labels: Sequence[str] = DEFAULT_LABELS) -> None:
        parsed = parse_tagged(self.tagged_output, labels)
        if parsed.warnings:
            raise ValueError(f"shot example markup has warnings: {parsed.warnings}")
        if parsed.plain_text != self.input_text:
            raise ValueError("shot example markup does not reproduce its input text")

    def labels_present(self) -> tuple[str, ...]:
        return tuple(label for label, _ in self.label_histogram)


def _render_example(example: ShotExample) -> str:
    # "Text"/"Annotation" read naturally in both prompt languages, so the
    # example wrapper stays language-invariant.
    return f"Text: {example.input_text}\nAnnotation: {example.tagged_output}"


def build_prompt(
    config: PromptConfig,
    examples: Sequence[ShotExample],
    input_text: str,
) -> PromptBundle:
    """Assemble the prompt for one page.

    Component order is fixed: context, instructions with NOTE lines,
    examples, summary, emphasis phrases, then the input text last. Enabling
    a feature only ever inserts text. With ``system_prompt_split`` the input
    text alone becomes the user message.
    """
    if len(examples) != config.shots:
        raise ValueError(f"config requests {config.shots} shots but {len(examples)} examples were given")
    templates = load_templates(config.language)

    def t(key: str) -> str:
        return _template(templates, config.language, key)

    structured = "structure" in config.features
    blocks: list[tuple[str | None, list[str]]] = []

    context_chunks = [t("intro")]
    if config.context_level in ("generic", "specific"):
        context_chunks.append(t("context.generic"))
    if config.context_level == "specific":
        context_chunks.append(t("context.specific"))
    blocks.append(("heading.context", context_chunks))

    instruction_chunks = [t("instructions")]
    if config.notes:
        instruction_chunks.append("\n".join(f"- NOTE: {note}" for note in config.notes))
    blocks.append(("heading.instructions", instruction_chunks))

    if config.shots:
        blocks.append(("heading.examples", [t("example_header"), *map(_render_example, examples)]))

    if "instruction_repetition" in config.features:
        blocks.append(("heading.summary", [t("repetition")]))

    tail = []
    if "bullying" in config.features:
        tail.append(t("bullying"))
    if "deep_breath" in config.features:
        tail.append(t("deep_breath"))
    if tail:
        blocks.append((None, tail))

    rendered: list[str] = []
    for heading_key, chunks in blocks:
        if structured and heading_key is not None:
            rendered.append(t(heading_key))
        rendered.extend(chunks)
    preamble = "\n\n".join(rendered)

    if "system_prompt_split" in config.features:
        system: str | None = preamble
        user = input_text
    else:
        system = None
        final = [preamble]
        if structured:
            final.append(t("heading.input"))
        final.append(input_text)
        user = "\n\n".join(final)

    return PromptBundle(system, user, len(examples), frozenset(config.features))


def _dominant_label(example: ShotExample, label_order: Sequence[str]) -> str | None:
    histogram = dict(example.label_histogram)
    if not histogram:
        return None
    return max(histogram, key=lambda lab: (histogram[lab], -label_order.index(lab)))


def select_shots(pool: Sequence[ShotExample], n: int, seed: int) -> list[ShotExample]:
    """Pick a class-balanced subset of the 32-excerpt pool.

    The full pool passes through unchanged; smaller counts draw round-robin
    over per-label buckets that were shuffled with an RNG seeded from
    ``(seed, n)``, so each shot count gets its own independent draw and
    per-label example counts differ by at most one where the pool allows.
    """
    if len(pool) != POOL_SIZE:
        raise ValueError(f"example pool must hold {POOL_SIZE} excerpts, got {len(pool)}")
    if n not in ALLOWED_SHOTS:
        raise ValueError(f"shot count must be one of {list(ALLOWED_SHOTS)}, got {n}")
    if n == 0:
        return []
    if n == POOL_SIZE:
        return list(pool)
    rng = random.Random(f"{seed}|{n}")
    label_order = sorted({label for ex in pool for label in ex.labels_present()})
    buckets: dict[str | None, list[ShotExample]] = defaultdict(list)
    for example in pool:
        buckets[_dominant_label(example, label_order)].append(example)
    for bucket in buckets.values():
        rng.shuffle(bucket)
    chosen: list[ShotExample] = []
    while len(chosen) < n:
        drew = False
        for label in label_order:
            bucket = buckets.get(label)
            if bucket:
                chosen.append(bucket.pop())
                drew = True
                if len(chosen) == n:
                    return chosen
        if not drew:
            # Entity-free excerpts only pad out the tail once every labelled
            # bucket is exhausted.
            filler = buckets.get(None)
            if not filler:
                break
            chosen.append(filler.pop())
    return chosen


def ablation_variants(base: PromptConfig) -> list[tuple[str, PromptConfig]]:
    """The ten ablation rows: each feature alone, all together, and the
    context-level comparisons, relative to a 0-shot specific-context base."""
    if base.context_level != "specific" or base.shots != 0:
        raise ValueError("ablation base must use specific context and 0 shots")
    all_features = frozenset(FEATURES)

    def variant(context_level: str, features) -> PromptConfig:
        return replace(base, context_level=context_level, features=frozenset(features))

    return [
        ("Specific Context + PE", variant("specific", all_features)),
        ("Specific Context + structure", variant("specific", {"structure"})),
        ("Specific Context + system-prompt", variant("specific", {"system_prompt_split"})),
        ("Specific Context + instruction-repetition", variant("specific", {"instruction_repetition"})),
        ("Specific Context + bullying", variant("specific", {"bullying"})),
        ("Specific Context", variant("specific", ())),
        ("Generic Context + PE", variant("generic", all_features)),
        ("Generic Context", variant("generic", ())),
        ("No Context + PE", variant("none", all_features)),
        ("No Context", variant("none", ())),
    ]


def config_from_dict(data: dict) -> PromptConfig:
    """Build a PromptConfig from a parsed YAML/JSON mapping.

    ``features`` accepts a list or the shorthand "all"; absent ``notes``
    fall back to the packaged defaults for the configured context level.
    """
    known = {"language", "context", "context_level", "features", "notes", "shots", "seed", "labels"}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown prompt config keys: {sorted(unknown)}")
    language = data.get("language", "de")
    context_level = data.get("context_level", data.get("context", "specific"))
    features_raw = data.get("features", [])
    if features_raw == "all":
        features = frozenset(FEATURES)
    else:
        features = frozenset(features_raw)
    shots = int(data.get("shots", 0))
    seed = int(data.get("seed", 0))
    if "notes" in data:
        notes = tuple(data["notes"])
    else:
        notes = default_notes(language, context_level)
    label_set = DEFAULT_LABEL_SET
    if "labels" in data:
        label_set = tuple(
            (item["name"], item.get("description", item["name"])) if isinstance(item, dict) else (item, item)
            for item in data["labels"]
        )
    return PromptConfig(
        language=language,
        context_level=context_level,
        features=features,
        notes=notes,
        shots=shots,
        seed=seed,
        label_set=label_set,
    )


def pool_from_records(records: Sequence[tuple[str, Sequence[EntitySpan]]]) -> list[ShotExample]:
    """Turn (excerpt text, spans) pairs into validated shot examples."""
    pool = []
    for text, spans in records:
        example = ShotExample.from_annotation(text, spans)
        example.validate(tuple({s.label for s in spans}) or DEFAULT_LABELS)
        pool.append(example)
    return pool

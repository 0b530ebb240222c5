"""Inline span markup: render ``<<LABEL ... /LABEL>>`` tags and parse them back.

The parser is deliberately tolerant. Generated annotations arrive with
unclosed tags, stray closers, missing adjacency spaces, and invented labels;
every such defect is recovered with a warning instead of discarding the
output.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Sequence

from .corpus import DEFAULT_LABELS, EntitySpan

# Opener is "<<LABEL " and closer is " /LABEL>>"; the adjacent space belongs
# to the token. A missing space is tolerated and reported.
_TOKEN_RE = re.compile(
    r"<<(?P<olabel>[A-Z][A-Z0-9]*)(?P<ospace> ?)"
    r"|(?P<cspace> ?)/(?P<clabel>[A-Z][A-Z0-9]*)>>"
)


def opener_token(label: str) -> str:
    return f"<<{label} "


def closer_token(label: str) -> str:
    return f" /{label}>>"


@dataclass(frozen=True)
class ParseWarning:
    kind: str  # "unclosed" | "stray_closer" | "unknown_label" | "missing_space"
    position: int  # offset into the recovered plain text


@dataclass
class ParsedAnnotation:
    plain_text: str
    spans: list[EntitySpan]
    warnings: list[ParseWarning]


def render_tagged(text: str, spans: Sequence[EntitySpan]) -> str:
    """Insert tag tokens around every span.

    At equal positions closers emit before openers, inner spans close before
    outer ones, and outer spans open before inner ones, so properly nested
    input stays properly nested in the markup.
    """
    events: list[tuple[int, int, int, int, str]] = []
    for idx, span in enumerate(spans):
        if not 0 <= span.start < span.end <= len(text):
            raise ValueError(
                f"span [{span.start},{span.end}) out of bounds for text of length {len(text)}"
            )
        events.append((span.end, 0, -span.start, -idx, closer_token(span.label)))
        events.append((span.start, 1, -span.end, idx, opener_token(span.label)))
    events.sort()
    parts: list[str] = []
    cursor = 0
    for pos, _, _, _, token in events:
        parts.append(text[cursor:pos])
        parts.append(token)
        cursor = pos
    parts.append(text[cursor:])
    return "".join(parts)


def parse_tagged(tagged: str, labels: Iterable[str] = DEFAULT_LABELS) -> ParsedAnnotation:
    """Parse markup into plain text plus spans; never raises on any input.

    A closer pairs with the nearest open tag of the same label, which keeps
    interleaved (overlapping, non-nested) annotations intact. Recovery rules:
    an unclosed tag closes at end of input, a closer without an opener is
    dropped, an unknown label stays literal text; each adds a warning.
    """
    label_set = frozenset(labels)
    plain: list[str] = []
    plain_len = 0
    stack: list[tuple[str, int]] = []
    spans: list[EntitySpan] = []
    warnings: list[ParseWarning] = []

    def emit(chunk: str) -> None:
        nonlocal plain_len
        if chunk:
            plain.append(chunk)
            plain_len += len(chunk)

    last = 0
    for match in _TOKEN_RE.finditer(tagged):
        emit(tagged[last : match.start()])
        last = match.end()
        olabel = match.group("olabel")
        if olabel is not None:
            if olabel not in label_set:
                warnings.append(ParseWarning("unknown_label", plain_len))
                emit(match.group(0))
                continue
            if match.group("ospace") == "":
                warnings.append(ParseWarning("missing_space", plain_len))
            stack.append((olabel, plain_len))
        else:
            clabel = match.group("clabel")
            if clabel not in label_set:
                warnings.append(ParseWarning("unknown_label", plain_len))
                emit(match.group(0))
                continue
            if match.group("cspace") == "":
                warnings.append(ParseWarning("missing_space", plain_len))
            for i in reversed(range(len(stack))):
                if stack[i][0] == clabel:
                    _, start = stack.pop(i)
                    spans.append(EntitySpan(start, plain_len, clabel))
                    break
            else:
                warnings.append(ParseWarning("stray_closer", plain_len))
    emit(tagged[last:])

    for label, start in stack:
        spans.append(EntitySpan(start, plain_len, label))
        warnings.append(ParseWarning("unclosed", start))

    spans.sort(key=lambda s: (s.start, -s.end, s.label))
    return ParsedAnnotation("".join(plain), spans, warnings)


def flatten_spans(spans: Sequence[EntitySpan]) -> list[EntitySpan]:
    """Reduce possibly nested/overlapping spans to a flat, sorted list.

    Containment keeps the outer span; partial overlap keeps the
    earlier-starting span (tie: the longer one). The result is a subset of
    the input, sorted by start, pairwise non-overlapping.
    """
    ordered = sorted(spans, key=lambda s: (s.start, -s.end))
    out: list[EntitySpan] = []
    for span in ordered:
        if out and span.start < out[-1].end:
            continue
        out.append(span)
    return out

"""Locate generated span strings in the source text under bounded edit distance.

Generated annotations rewrite their input slightly (hyphenation, OCR fixes),
so spans are grounded by approximate substring search allowing one error per
five pattern characters. The matcher's contract is defined by a brute-force
oracle: enumerate every substring whose length is within ``max_dist`` of the
pattern length, keep those within distance ``max_dist``, then select greedily
by (distance, start, length) while suppressing overlap.
"""

from __future__ import annotations

from dataclasses import dataclass
from .corpus import Document, EntitySpan
from .tagspan import ParsedAnnotation

WINDOW_SLACK = 50


@dataclass(frozen=True)
class FuzzyMatch:
    start: int
    end: int
    dist: int


@dataclass(frozen=True)
class GroundedSpan:
    span: EntitySpan  # offsets into the source document
    dist: int
    origin: int  # offset of the span in the parsed plain text


@dataclass(frozen=True)
class GroundingFailure:
    origin: EntitySpan  # span over the parsed plain text
    pattern: str
    reason: str


def levenshtein(a: str, b: str) -> int:
    """Exact edit distance (insertions, deletions, substitutions)."""
    if len(a) < len(b):
        a, b = b, a
    if not b:
        return len(a)
    prev = list(range(len(b) + 1))
    for i, ca in enumerate(a, 1):
        cur = [i]
        append = cur.append
        for j, cb in enumerate(b, 1):
            append(min(prev[j] + 1, cur[-1] + 1, prev[j - 1] + (ca != cb)))
        prev = cur
    return prev[-1]


def max_dist_for(span_text: str) -> int:
    """Allowed edit distance: one error per five generated characters."""
    return len(span_text) // 5


def _candidate_ends(pattern: str, text: str, max_dist: int) -> list[int]:
    """End positions that admit some substring within ``max_dist``.

    One pass of the classic substring-matching DP (first row all zero, so
    every text position may start a match): O(len(pattern) * len(text)).
    """
    n = len(text)
    prev = [0] * (n + 1)
    for i, pc in enumerate(pattern, 1):
        cur = [i] * (n + 1)
        for j in range(1, n + 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (pc != text[j - 1]))
        prev = cur
    return [j for j, d in enumerate(prev) if d <= max_dist]


def _candidates_at_end(pattern: str, text: str, end: int, max_dist: int) -> list[tuple[int, int, int]]:
    """All (dist, start, length) with ``lev(pattern, text[start:end]) <= max_dist``.

    Distances for every admissible start fall out of a single DP against the
    reversed slice, because reversing both strings preserves edit distance.
    """
    m = len(pattern)
    lo_len = max(1, m - max_dist)
    hi_len = min(end, m + max_dist)
    if lo_len > hi_len:
        return []
    rpattern = pattern[::-1]
    rslice = text[end - hi_len : end][::-1]
    width = len(rslice)
    prev = list(range(width + 1))
    for i, pc in enumerate(rpattern, 1):
        cur = [i] * (width + 1)
        for j in range(1, width + 1):
            cur[j] = min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (pc != rslice[j - 1]))
        prev = cur
    out = []
    for length in range(lo_len, hi_len + 1):
        dist = prev[length]
        if dist <= max_dist:
            out.append((dist, end - length, length))
    return out


def _select_matches(candidates: list[tuple[int, int, int]]) -> list[FuzzyMatch]:
    """Greedy best-first selection: (dist, start, length) order, no overlap."""
    chosen: list[tuple[int, int, int]] = []
    for dist, start, length in sorted(candidates):
        end = start + length
        if all(end <= s or e <= start for s, e, _ in chosen):
            chosen.append((start, end, dist))
    chosen.sort()
    return [FuzzyMatch(s, e, d) for s, e, d in chosen]


def find_near_matches(pattern: str, text: str, max_dist: int) -> list[FuzzyMatch]:
    """Locally optimal approximate occurrences of ``pattern`` in ``text``.

    Returns matches sorted by start, pairwise non-overlapping, each the
    best candidate of its region by minimal distance, then earliest start,
    then shortest length. Equivalent to the brute-force all-substrings
    oracle; zero-length matches are never reported.
    """
    if not pattern:
        raise ValueError("pattern must be non-empty")
    if max_dist < 0:
        raise ValueError("max_dist must be >= 0")
    candidates: list[tuple[int, int, int]] = []
    for end in _candidate_ends(pattern, text, max_dist):
        candidates.extend(_candidates_at_end(pattern, text, end, max_dist))
    return _select_matches(candidates)


def _best(matches: list[FuzzyMatch], offset: int = 0) -> FuzzyMatch | None:
    if not matches:
        return None
    m = min(matches, key=lambda x: (x.dist, x.start))
    return FuzzyMatch(m.start + offset, m.end + offset, m.dist)


def ground_all(
    parsed: ParsedAnnotation,
    source: Document,
    window_slack: int = WINDOW_SLACK,
) -> tuple[list[GroundedSpan], list[GroundingFailure]]:
    """Ground parsed spans in the source document, in order of appearance.

    Each span is first searched near its expected position (previous
    grounded end plus the plain-text gap between spans) so repeated entity
    strings bind to the right occurrence; only when the window misses does
    the search fall back to the whole document. Unmatched spans are
    reported as failures, never dropped.
    """
    text = source.text
    grounded: list[GroundedSpan] = []
    failures: list[GroundingFailure] = []
    prev_plain_end = 0
    prev_src_end = 0
    prev_src_start = 0
    anchored = False
    for span in parsed.spans:
        pattern = parsed.plain_text[span.start : span.end]
        if not pattern.strip():
            failures.append(GroundingFailure(span, pattern, "span text is empty"))
            continue
        k = max_dist_for(pattern)
        length = len(pattern)
        expected = prev_src_end + (span.start - prev_plain_end) if anchored else span.start
        lo = max(0, expected - (length + window_slack))
        if anchored:
            # A sequential span must not rebind to an occurrence the previous
            # span already consumed; a nested/overlapping span may still land
            # inside the previous one.
            floor = prev_src_start if span.start < prev_plain_end else prev_src_end
            lo = max(lo, floor)
        hi = min(len(text), expected + (length + window_slack) + length + k)
        best = _best(find_near_matches(pattern, text[lo:hi], k), lo) if lo < hi else None
        if best is None:
            best = _best(find_near_matches(pattern, text, k))
        if best is None:
            failures.append(GroundingFailure(span, pattern, f"no match within distance {k}"))
            continue
        grounded.append(GroundedSpan(EntitySpan(best.start, best.end, span.label), best.dist, span.start))
        anchored = True
        prev_plain_end = span.end
        prev_src_end = best.end
        prev_src_start = best.start
    return grounded, failures

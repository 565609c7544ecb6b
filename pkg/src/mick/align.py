"""Dictionary-driven candidate extraction for building relation datasets.

Three stages:

1. :func:`longest_exact_match` finds every dictionary substring of a
   sentence that is not strictly contained in another dictionary substring.
2. :func:`extract_candidates` keeps sentences with at least two such spans,
   emitting one candidate per unordered span pair.
3. :func:`segmentation_filter` discards candidates whose entities do not
   start and end on word boundaries of a supplied segmentation.
"""

from __future__ import annotations

import bisect
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Iterable, Iterator, Sequence

from .data import Instance

UNLABELED = "UNLABELED"


class AlignError(ValueError):
    pass


class EntityDictionary:
    """Character trie over entity surface strings (case- and accent-exact)."""

    def __init__(self, entries: Iterable[tuple[str, str]] = ()):
        self._root: dict = {}
        self._types: dict[str, list[str]] = {}
        self.max_len = 0
        for surface, etype in entries:
            self.add(surface, etype)

    def add(self, surface: str, etype: str) -> None:
        if not surface:
            raise AlignError("empty entity surface")
        types = self._types.setdefault(surface, [])
        if etype in types:
            return
        types.append(etype)
        types.sort()
        node = self._root
        for ch in surface:
            node = node.setdefault(ch, {})
        node[None] = surface
        self.max_len = max(self.max_len, len(surface))

    @property
    def entries(self) -> set[tuple[str, str]]:
        return {(s, t) for s, ts in self._types.items() for t in ts}

    def __contains__(self, surface: str) -> bool:
        return surface in self._types

    def __len__(self) -> int:
        return sum(len(t) for t in self._types.values())

    def types(self, surface: str) -> list[str]:
        return list(self._types.get(surface, ()))

    def prefix_matches(self, s: str, start: int) -> Iterator[int]:
        """Lengths of all dictionary entries that occur in ``s`` at ``start``."""
        node = self._root
        for i in range(start, len(s)):
            node = node.get(s[i])
            if node is None:
                return
            if None in node:
                yield i - start + 1

    @classmethod
    def load(cls, path) -> "EntityDictionary":
        """Read ``surface<TAB>type`` lines; blank lines are skipped."""
        d = cls()
        with Path(path).open(encoding="utf-8") as fh:
            for lineno, raw in enumerate(fh, 1):
                line = raw.rstrip("\r\n")
                if not line.strip():
                    continue
                parts = line.split("\t")
                if len(parts) != 2 or not parts[0] or not parts[1]:
                    raise AlignError(f"{path}:{lineno}: expected 'surface<TAB>type'")
                d.add(parts[0], parts[1])
        return d


def longest_exact_match(s: str, dictionary: EntityDictionary) -> list[tuple[int, int]]:
    """Maximal dictionary spans ``(start, length)`` of ``s`` in left-to-right order.

    A match is dropped only if another match strictly contains it;
    overlapping matches that do not contain one another are all kept.
    """
    longest_at: list[int] = []
    for i in range(len(s)):
        lengths = list(dictionary.prefix_matches(s, i))
        longest_at.append(lengths[-1] if lengths else 0)
    spans = []
    reach = 0  # furthest end of any match starting strictly before i
    for i, l in enumerate(longest_at):
        if l and i + l > reach:
            spans.append((i, l))
        if l:
            reach = max(reach, i + l)
    return spans


@dataclass(frozen=True)
class EntityMention:
    start: int
    length: int
    surface: str
    type: str

    @property
    def end(self) -> int:
        return self.start + self.length


@dataclass
class CandidateSentence:
    text: str
    entities: tuple[EntityMention, EntityMention]
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        a, b = self.entities
        for e in (a, b):
            if not (0 <= e.start and e.end <= len(self.text)) or self.text[e.start:e.end] != e.surface:
                raise AlignError(f"entity {e} does not match the sentence text")
        if (a.start, a.length) == (b.start, b.length):
            raise AlignError("candidate entities must be distinct spans")

    @property
    def overlapping(self) -> bool:
        a, b = self.entities
        return a.start < b.end and b.start < a.end

    def to_instance(self) -> Instance:
        """Character-token instance with the placeholder relation label."""
        a, b = self.entities
        return Instance(list(self.text), (a.start, a.end), (b.start, b.end), UNLABELED)


@dataclass
class ExtractionSummary:
    sentences: int = 0
    kept: int = 0
    dropped: int = 0
    multi_pair: int = 0
    candidates: int = 0

    def as_dict(self) -> dict:
        return dict(self.__dict__)


def _mention(text, dictionary, span) -> EntityMention:
    start, length = span
    surface = text[start:start + length]
    return EntityMention(start, length, surface, dictionary.types(surface)[0])


def extract_candidates(
    sentences: Iterable[str],
    dictionary: EntityDictionary,
    summary: ExtractionSummary | None = None,
) -> Iterator[CandidateSentence]:
    """One candidate per unordered pair of maximal matches, in input order.

    Sentences with fewer than two maximal matches are dropped. When more
    than two are present every pair is emitted with ``multi_pair`` set in
    its provenance; repeated surfaces at different positions are distinct
    spans and are flagged as ``repeated_surface``.
    """
    summary = summary if summary is not None else ExtractionSummary()
    for lineno, text in enumerate(sentences, 1):
        summary.sentences += 1
        spans = longest_exact_match(text, dictionary)
        if len(spans) < 2:
            summary.dropped += 1
            continue
        summary.kept += 1
        multi = len(spans) > 2
        summary.multi_pair += multi
        for a, b in combinations(spans, 2):
            ma, mb = _mention(text, dictionary, a), _mention(text, dictionary, b)
            prov = {"line": lineno, "multi_pair": multi, "spans_in_sentence": len(spans)}
            if ma.surface == mb.surface:
                prov["repeated_surface"] = True
            summary.candidates += 1
            yield CandidateSentence(text, (ma, mb), prov)


def word_offsets(text: str, words: Sequence[str]) -> list[tuple[int, int]]:
    """Character ``(start, end)`` of each word; whitespace between words is skipped."""
    offsets = []
    pos = 0
    for w in words:
        while pos < len(text) and text[pos].isspace() and not text.startswith(w, pos):
            pos += 1
        if not w or not text.startswith(w, pos):
            raise AlignError(f"segmentation does not reconstruct the sentence near offset {pos}")
        offsets.append((pos, pos + len(w)))
        pos += len(w)
    if text[pos:].strip():
        raise AlignError("segmentation does not cover the whole sentence")
    return offsets


def segmentation_filter(cand: CandidateSentence, words: Sequence[str]) -> bool:
    """Keep iff every entity starts on a word start and ends on a word end."""
    offsets = word_offsets(cand.text, words)
    starts = [s for s, _ in offsets]
    ends = [e for _, e in offsets]
    for ent in cand.entities:
        i = bisect.bisect_left(starts, ent.start)
        if i == len(starts) or starts[i] != ent.start:
            return False
        j = bisect.bisect_left(ends, ent.end)
        if j == len(ends) or ends[j] != ent.end or j < i:
            return False
    return True


def align_corpus(
    sentences: Sequence[str],
    dictionary: EntityDictionary,
    segmentations: Sequence[Sequence[str]] | None = None,
) -> tuple[list[CandidateSentence], dict]:
    """Full pipeline; candidates that overlap or fail segmentation are counted, not emitted."""
    if segmentations is not None and len(segmentations) != len(sentences):
        raise AlignError(f"{len(sentences)} sentences but {len(segmentations)} segmentations")
    summary = ExtractionSummary()
    out = []
    overlap = seg_discarded = 0
    for cand in extract_candidates(sentences, dictionary, summary):
        if cand.overlapping:
            overlap += 1
            continue
        if segmentations is not None and not segmentation_filter(cand, segmentations[cand.provenance["line"] - 1]):
            seg_discarded += 1
            continue
        out.append(cand)
    stats = summary.as_dict()
    stats.update(overlapping=overlap, segmentation_discarded=seg_discarded, written=len(out))
    return out, stats

"""Composable words and cyclic words of atlas chords below the action cap."""
from __future__ import annotations

import math
from dataclasses import dataclass

from .ambient import ChordAtlas


def word_action(atlas: ChordAtlas, ids) -> float:
    """Total action; summed in sorted order so equal multisets give identical floats."""
    return math.fsum(sorted(atlas.chord(i).action for i in ids))


@dataclass(frozen=True)
class Word:
    ids: tuple
    action: float

    @property
    def label(self) -> str:
        return "".join(self.ids) if all(len(i) == 1 for i in self.ids) else ".".join(self.ids)


@dataclass(frozen=True)
class CyclicWord:
    ids: tuple
    action: float

    @property
    def label(self) -> str:
        inner = "".join(self.ids) if all(len(i) == 1 for i in self.ids) else ".".join(self.ids)
        return f"({inner})"


def canonical_rotation(ids) -> tuple:
    """Lexicographically least rotation of a sequence of chord ids."""
    ids = tuple(ids)
    if not ids:
        return ids
    return min(ids[r:] + ids[:r] for r in range(len(ids)))


def rotate(ids, r: int) -> tuple:
    ids = tuple(ids)
    if not ids:
        return ids
    r %= len(ids)
    return ids[r:] + ids[:r]


def _sort_key(word):
    return (word.action, word.ids)


def _extend(atlas, prefix, total, last_end, out_fn):
    for c in atlas.chords:
        if c.start_component != last_end:
            continue
        new_total = total + c.action
        if new_total >= atlas.action_cap:
            continue
        seq = prefix + (c.id,)
        out_fn(seq, c)
        _extend(atlas, seq, new_total, c.end_component, out_fn)


def _walk(atlas: ChordAtlas, start_components, visit):
    """Depth-first traversal of composable sequences below the cap.

    Pruning uses a running sum; membership is decided on the exact sorted sum.
    """
    for c in atlas.chords:
        if c.start_component not in start_components or c.action >= atlas.action_cap:
            continue
        visit((c.id,), c)
        _extend(atlas, (c.id,), c.action, c.end_component, visit)


def enumerate_words(atlas: ChordAtlas, from_component: str, to_component: str) -> list[Word]:
    """All composable words from ``from_component`` to ``to_component`` with action below the cap."""
    found = []

    def visit(seq, last):
        if last.end_component == to_component:
            action = word_action(atlas, seq)
            if action < atlas.action_cap:
                found.append(Word(seq, action))

    _walk(atlas, {from_component}, visit)
    return sorted(found, key=_sort_key)


def enumerate_cyclic(atlas: ChordAtlas) -> list[CyclicWord]:
    """One canonical representative per rotation class of cyclically composable words."""
    found = []
    first = {c.id: c for c in atlas.chords}

    def visit(seq, last):
        if last.end_component != first[seq[0]].start_component:
            return
        if canonical_rotation(seq) != seq:
            return
        action = word_action(atlas, seq)
        if action < atlas.action_cap:
            found.append(CyclicWord(seq, action))

    _walk(atlas, set(atlas.components), visit)
    return sorted(found, key=_sort_key)


def all_words(atlas: ChordAtlas) -> list[Word]:
    out = []
    for a in atlas.components:
        for b in atlas.components:
            out.extend(enumerate_words(atlas, a, b))
    return sorted(out, key=_sort_key)


def action_levels(atlas: ChordAtlas) -> list[float]:
    """Actions of all words and cyclic words below the cap (with repeats)."""
    return [w.action for w in all_words(atlas)] + [w.action for w in enumerate_cyclic(atlas)]


@dataclass(frozen=True)
class GapResult:
    gap: float
    empty: bool
    levels: int


def min_action_gap(atlas: ChordAtlas) -> GapResult:
    """Smallest positive difference between distinct action levels below the cap.

    When fewer than two distinct levels exist the gap is +inf and ``empty`` is
    set if there are no levels at all.
    """
    values = sorted(set(action_levels(atlas)))
    if len(values) < 2:
        return GapResult(math.inf, len(values) == 0, len(values))
    return GapResult(min(b - a for a, b in zip(values, values[1:])), False, len(values))


def format_table(words) -> str:
    """Aligned plain-text listing: word label and action."""
    rows = [(w.label, f"{w.action:.12g}") for w in words]
    width = max([len("word")] + [len(r[0]) for r in rows])
    lines = [f"{'word':<{width}}  action"]
    lines += [f"{label:<{width}}  {action}" for label, action in rows]
    return "\n".join(lines)


def words_document(words) -> list:
    return [{"word": list(w.ids), "action": w.action} for w in words]

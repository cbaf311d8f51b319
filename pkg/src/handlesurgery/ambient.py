"""Finite model of the ambient Reeb dynamics near the attaching link.

An atlas lists Reeb chords between link components with their actions and an
affine transition map ``eta = linear @ delta + offset``.  ``delta`` is the
offset of the chord's start point from its nominal start (core units), and
``eta`` is the hemisphere coordinate of the entry fiber at its end.
The component label ``"L0"`` denotes the unattached Legendrian; every other
label is an attached component.
"""
from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field

import jsonschema
import numpy as np

from .errors import (ActionGapError, ComposabilityError, DuplicateChordError,
                     OutOfChartError, SchemaError, TransversalityError)

UNATTACHED = "L0"
UNATTACHED_ALIASES = ("L0", "Lambda0")
DEFAULT_GAP_FLOOR = 1e-6
DEFAULT_ANGLE_FLOOR = 0.1

ATLAS_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "required": ["components", "chords", "action_cap", "dimension"],
    "properties": {
        "components": {"type": "array", "items": {"type": "string", "minLength": 1}},
        "chords": {
            "type": "array",
            "items": {
                "type": "object",
                "additionalProperties": False,
                "required": ["id", "start", "end", "action", "linear", "offset"],
                "properties": {
                    "id": {"type": "string", "minLength": 1},
                    "start": {"type": "string"},
                    "end": {"type": "string"},
                    "action": {"type": "number"},
                    "linear": {"type": "array", "items": {"type": "array", "items": {"type": "number"}}},
                    "offset": {"type": "array", "items": {"type": "number"}},
                },
            },
        },
        "action_cap": {"type": "number", "exclusiveMinimum": 0},
        "dimension": {"type": "integer", "minimum": 2},
    },
}


def is_unattached(label: str) -> bool:
    return label in UNATTACHED_ALIASES


@dataclass(frozen=True, eq=False)
class AmbientChord:
    id: str
    start_component: str
    end_component: str
    action: float
    linear: np.ndarray
    offset: np.ndarray
    start_ordinal: int = 0
    end_ordinal: int = 0

    @property
    def transversality_angle(self) -> float:
        """Smallest principal angle between the graph of ``linear`` and the
        horizontal plane, i.e. arctan of the smallest singular value."""
        return float(math.atan(np.linalg.svd(self.linear, compute_uv=False).min()))

    def to_document(self) -> dict:
        return {"id": self.id, "start": self.start_component, "end": self.end_component,
                "action": self.action, "linear": self.linear.tolist(), "offset": self.offset.tolist()}


@dataclass(frozen=True, eq=False)
class ChordAtlas:
    components: tuple
    chords: tuple
    action_cap: float
    dimension: int
    gap: float = field(default=math.inf)

    def chord(self, chord_id: str) -> AmbientChord:
        for c in self.chords:
            if c.id == chord_id:
                return c
        raise KeyError(chord_id)

    @property
    def attached_components(self) -> tuple:
        return tuple(c for c in self.components if not is_unattached(c))

    def to_document(self) -> dict:
        return {"components": list(self.components), "chords": [c.to_document() for c in self.chords],
                "action_cap": self.action_cap, "dimension": self.dimension}


def load_atlas(document, gap_floor: float = DEFAULT_GAP_FLOOR,
               angle_floor: float = DEFAULT_ANGLE_FLOOR) -> ChordAtlas:
    """Validate an atlas document (dict or JSON text) and build the atlas."""
    if isinstance(document, (str, bytes)):
        try:
            document = json.loads(document)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"atlas is not valid JSON: {exc}") from exc
    try:
        jsonschema.validate(document, ATLAS_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise SchemaError(f"atlas schema violation at {where}: {exc.message}") from exc

    n = document["dimension"]
    components = tuple(document["components"])
    if len(set(components)) != len(components):
        raise SchemaError("component labels must be distinct")
    seen = set()
    start_count: dict = {}
    end_count: dict = {}
    chords = []
    for raw in document["chords"]:
        cid = raw["id"]
        if cid in seen:
            raise DuplicateChordError(f"duplicate chord id {cid!r}")
        seen.add(cid)
        for key in ("start", "end"):
            if raw[key] not in components:
                raise ComposabilityError(f"chord {cid!r} refers to unknown component {raw[key]!r}")
        action = float(raw["action"])
        if not (action > 0 and math.isfinite(action)):
            raise SchemaError(f"chord {cid!r} must have a positive finite action")
        linear = np.array(raw["linear"], dtype=float)
        offset = np.array(raw["offset"], dtype=float)
        if linear.shape != (n - 1, n - 1) or offset.shape != (n - 1,):
            raise SchemaError(f"chord {cid!r}: linear must be {n-1}x{n-1} and offset length {n-1}")
        linear.setflags(write=False)
        offset.setflags(write=False)
        chord = AmbientChord(cid, raw["start"], raw["end"], action, linear, offset,
                             start_count.get(raw["start"], 0), end_count.get(raw["end"], 0))
        start_count[raw["start"]] = chord.start_ordinal + 1
        end_count[raw["end"]] = chord.end_ordinal + 1
        if chord.transversality_angle < angle_floor:
            raise TransversalityError(
                f"chord {cid!r}: principal angle {chord.transversality_angle:.4g} below floor {angle_floor}")
        chords.append(chord)

    atlas = ChordAtlas(components, tuple(chords), float(document["action_cap"]), n)
    gap = _check_action_set(atlas, gap_floor)
    return ChordAtlas(components, tuple(chords), atlas.action_cap, n, gap)


def _check_action_set(atlas: ChordAtlas, gap_floor: float) -> float:
    from .words import action_levels

    # enumerate up to and including the cap to see whether it is itself a level
    closed = ChordAtlas(atlas.components, atlas.chords, math.nextafter(atlas.action_cap, math.inf),
                        atlas.dimension)
    if any(v == atlas.action_cap for v in action_levels(closed)):
        raise ActionGapError("the action cap is itself an action of a word")
    levels = action_levels(atlas)
    values = sorted(set(levels))
    gaps = np.diff(values) if len(values) > 1 else np.array([math.inf])
    gap = float(gaps.min())
    if gap < gap_floor:
        raise ActionGapError(f"minimal action gap {gap:.3e} below floor {gap_floor:.1e}")
    return gap


def validate_atlas(atlas: ChordAtlas, gap_floor: float = DEFAULT_GAP_FLOOR,
                   angle_floor: float = DEFAULT_ANGLE_FLOOR) -> ChordAtlas:
    """Re-run every check on an existing atlas (round trip through its document)."""
    return load_atlas(atlas.to_document(), gap_floor, angle_floor)


def synth_atlas(seed: int, k_components: int = 1, n_chords: int = 2, dimension: int = 3,
                include_lambda0: bool = False, max_retries: int = 200) -> ChordAtlas:
    """Deterministic pseudo-random atlas.

    Actions are drawn from [1, 2], linear parts have singular values in
    [0.3, 1.2] (so the transversality angle exceeds 0.29 rad), offsets have
    norm at most 0.3, and the cap is 2.5 to 3.9 times the smallest action.
    Draws are repeated until the action set has gap >= 1e-3.
    """
    rng = np.random.default_rng(seed)
    comps = [f"L{i + 1}" for i in range(k_components)]
    if include_lambda0:
        comps.append(UNATTACHED)
    m = dimension - 1
    for _ in range(max_retries):
        chords = []
        for i in range(n_chords):
            start, end = rng.choice(comps), rng.choice(comps)
            if include_lambda0 and i == 0:
                start = UNATTACHED
            if include_lambda0 and i == 1:
                end = UNATTACHED
            u, _ = np.linalg.qr(rng.normal(size=(m, m)))
            v, _ = np.linalg.qr(rng.normal(size=(m, m)))
            linear = u @ np.diag(rng.uniform(0.3, 1.2, size=m)) @ v.T
            offset = rng.normal(size=m)
            offset *= rng.uniform(0.0, 0.3) / max(np.linalg.norm(offset), 1e-12)
            chords.append({"id": f"c{i + 1}", "start": str(start), "end": str(end),
                           "action": round(float(rng.uniform(1.0, 2.0)), 6),
                           "linear": linear.tolist(), "offset": offset.tolist()})
        min_action = min(c["action"] for c in chords)
        cap = round(min_action * float(rng.uniform(2.5, 3.9)), 6)
        doc = {"components": comps, "chords": chords, "action_cap": cap, "dimension": dimension}
        try:
            return load_atlas(doc, gap_floor=1e-3)
        except (ActionGapError, TransversalityError):
            continue
    raise ActionGapError(f"could not synthesize a generic atlas for seed {seed}")


def transition_map(chord: AmbientChord, state, action: float = 0.0, radius: float = math.inf):
    """Affine ambient step from a start offset to an entry hemisphere coordinate.

    Returns ``(eta, action + chord.action)``.  The start offset must lie within
    ``radius`` and the image inside the open unit ball of the entry chart.
    """
    state = np.asarray(state, dtype=float)
    if state.shape != chord.offset.shape:
        raise OutOfChartError(f"state has shape {state.shape}, expected {chord.offset.shape}")
    if not np.linalg.norm(state) <= radius:
        raise OutOfChartError(f"state norm {np.linalg.norm(state):.4g} exceeds chart radius {radius:.4g}")
    eta = chord.linear @ state + chord.offset
    if not np.linalg.norm(eta) < 1.0:
        raise OutOfChartError(f"entry coordinate norm {np.linalg.norm(eta):.4g} leaves the unit ball")
    return eta, action + chord.action


def atlas_copy_with(atlas: ChordAtlas, **changes) -> dict:
    """Document of ``atlas`` with top-level fields replaced (for experiments)."""
    doc = copy.deepcopy(atlas.to_document())
    doc.update(changes)
    return doc

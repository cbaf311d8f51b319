import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from handlesurgery.ambient import (UNATTACHED, atlas_copy_with, is_unattached, load_atlas,
                                   synth_atlas, transition_map, validate_atlas)
from handlesurgery.errors import (ActionGapError, ComposabilityError, DuplicateChordError,
                                  OutOfChartError, SchemaError, TransversalityError)
from handlesurgery.words import action_levels


def _chord(cid, action, start="L1", end="L1", linear=((0.8, 0.0), (0.0, 0.7)), offset=(0.0, 0.0)):
    return {"id": cid, "start": start, "end": end, "action": action,
            "linear": [list(r) for r in linear], "offset": list(offset)}


def _doc(chords, cap=3.5, components=("L1",)):
    return {"components": list(components), "chords": chords, "action_cap": cap, "dimension": 3}


def test_single_chord_atlas_loads():
    atlas = load_atlas(_doc([_chord("c", 1.0)]))
    assert [c.id for c in atlas.chords] == ["c"]
    assert atlas.gap == 1.0


def test_load_from_json_text(two_chord_doc):
    atlas = load_atlas(json.dumps(two_chord_doc))
    assert atlas.to_document() == two_chord_doc


def test_duplicate_chord_rejected():
    with pytest.raises(DuplicateChordError):
        load_atlas(_doc([_chord("c", 1.0), _chord("c", 1.5)]))


def test_near_equal_actions_rejected():
    with pytest.raises(ActionGapError):
        load_atlas(_doc([_chord("a", 1.0), _chord("b", 1.0 + 1e-15)]))


def test_cap_in_action_set_rejected():
    with pytest.raises(ActionGapError):
        load_atlas(_doc([_chord("a", 1.0)], cap=2.0))


def test_schema_errors():
    with pytest.raises(SchemaError):
        load_atlas({"components": ["L1"], "chords": [], "action_cap": 1.0})
    doc = _doc([_chord("a", 1.0)])
    doc["extra"] = 1
    with pytest.raises(SchemaError):
        load_atlas(doc)
    with pytest.raises(SchemaError):
        load_atlas(_doc([_chord("a", 1.0, linear=((1.0,),))]))
    with pytest.raises(SchemaError):
        load_atlas(_doc([_chord("a", -1.0)]))
    with pytest.raises(SchemaError):
        load_atlas("{not json")


def test_unknown_component_rejected():
    with pytest.raises(ComposabilityError):
        load_atlas(_doc([_chord("a", 1.0, end="L9")]))


def test_transversality_floor():
    with pytest.raises(TransversalityError):
        load_atlas(_doc([_chord("a", 1.0, linear=((1.0, 0.0), (0.0, 0.05)))]))


def test_empty_atlas_is_valid():
    atlas = load_atlas(_doc([]))
    assert atlas.chords == ()


def test_synth_examples():
    one = synth_atlas(1, k_components=1, n_chords=1)
    assert len(one.chords) == 1
    c = one.chords[0]
    assert c.start_component == c.end_component == "L1"
    assert synth_atlas(7, 2, 3).to_document() == synth_atlas(7, 2, 3).to_document()


def _independent_checks(atlas):
    """Re-derive every invariant without the loader."""
    for c in atlas.chords:
        assert c.action > 0
        assert np.arctan(np.linalg.svd(c.linear, compute_uv=False).min()) >= 0.1
    levels = sorted(set(action_levels(atlas)))
    assert atlas.action_cap not in levels
    if len(levels) > 1:
        assert min(np.diff(levels)) >= 1e-3


def test_synth_atlases_validate():
    for seed in range(100):
        atlas = synth_atlas(seed, k_components=1 + seed % 2, n_chords=1 + seed % 3,
                            include_lambda0=seed % 4 == 0 and seed % 3 > 0)
        validate_atlas(atlas)
        _independent_checks(atlas)
        cap_ratio = atlas.action_cap / min(c.action for c in atlas.chords)
        assert 2.5 <= cap_ratio <= 3.9 + 1e-6


def test_lambda0_label():
    atlas = synth_atlas(3, n_chords=2, include_lambda0=True)
    assert UNATTACHED in atlas.components and is_unattached("Lambda0") and not is_unattached("L1")
    assert atlas.attached_components == ("L1",)


@given(st.integers(0, 10_000))
def test_transition_map_affine(seed):
    rng = np.random.default_rng(seed)
    chord = synth_atlas(seed % 50 + 1).chords[0]
    a, b = rng.uniform(-0.2, 0.2, 2), rng.uniform(-0.2, 0.2, 2)
    f = lambda z: chord.linear @ z + chord.offset
    eta0, act = transition_map(chord, np.zeros(2), 0.5)
    assert np.array_equal(eta0, chord.offset) and act == 0.5 + chord.action
    combo = f(a + b) - f(a) - f(b) + f(np.zeros(2))
    assert np.max(np.abs(combo)) <= 1e-15
    assert np.allclose(transition_map(chord, a)[0], f(a), atol=0, rtol=0)


def test_transition_map_chart_errors():
    chord = synth_atlas(1).chords[0]
    with pytest.raises(OutOfChartError):
        transition_map(chord, np.array([0.3, 0.0]), radius=0.1)
    with pytest.raises(OutOfChartError):
        transition_map(chord, np.array([50.0, 50.0]))
    with pytest.raises(OutOfChartError):
        transition_map(chord, np.zeros(3))


def test_atlas_copy_with(two_chord_doc):
    atlas = load_atlas(two_chord_doc)
    doc = atlas_copy_with(atlas, action_cap=3.0)
    assert doc["action_cap"] == 3.0 and atlas.action_cap == 2.5

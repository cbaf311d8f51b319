import numpy as np
import pytest

from handlesurgery.ambient import load_atlas, synth_atlas
from handlesurgery.errors import OutOfChartError, PreconditionError, ThresholdNotFoundError
from handlesurgery.handle import HandleParams
from handlesurgery.surgery import (HandleState, SurgerySystem, _newton, epsilon_threshold,
                                   find_chord_for_word, find_orbit_for_cyclic_word,
                                   surgery_cyclic_words, surgery_words, verify_bijection)
from handlesurgery.words import enumerate_cyclic

SWEEP = (0.6, 0.5, 0.4)


def _handle_part(params, atlas, chord_id):
    system = SurgerySystem(params, atlas)
    chord = atlas.chord(chord_id)
    # start the accumulator at minus the chord action so only the handle part survives rounding
    state = HandleState(system.exit_base(chord_id, np.zeros(2)), -chord.action)
    return system.composite_step(chord_id, state)


def test_composite_step_action_decreases(two_chord_doc):
    atlas = load_atlas(two_chord_doc)
    parts = [_handle_part(HandleParams(epsilon=e), atlas, "a").action for e in SWEEP]
    assert all(p > 0 for p in parts)
    assert parts[0] > parts[1] > parts[2]


def test_composite_step_deterministic(two_chord_doc, params):
    atlas = load_atlas(two_chord_doc)
    a = _handle_part(params, atlas, "b")
    b = _handle_part(params, atlas, "b")
    assert np.array_equal(a.base, b.base) and a.action == b.action


def test_composite_step_rejects_far_state(two_chord_doc, params):
    atlas = load_atlas(two_chord_doc)
    system = SurgerySystem(params, atlas)
    with pytest.raises(OutOfChartError):
        system.composite_step("a", HandleState(np.array([1.0, 0.0, 0.0]), 0.0))


def test_single_chord_word(two_chord_doc):
    atlas = load_atlas(two_chord_doc)
    corrections = [find_chord_for_word(HandleParams(epsilon=e), atlas, ("a",)).action_correction
                   for e in SWEEP]
    assert all(c > 0 for c in corrections)
    assert corrections[0] > corrections[1] > corrections[2]


def test_two_letter_word_basin(two_chord_doc, params):
    atlas = load_atlas(two_chord_doc)
    found = find_chord_for_word(params, atlas, ("a", "b"))
    assert found.landing_residual <= 1e-9 and found.spread <= 1e-6
    system = SurgerySystem(params, atlas)
    start = np.array(found.offsets).reshape(-1) + 1e-3 * np.random.default_rng(0).normal(size=4)
    again, norm, _, _ = _newton(lambda v: system.chord_residual(("a", "b"), v), start)
    assert norm <= 1e-9
    assert np.max(np.abs(again - np.array(found.offsets).reshape(-1))) <= 1e-8


def test_word_above_cap_rejected(two_chord_doc, params):
    atlas = load_atlas(two_chord_doc)
    with pytest.raises(PreconditionError):
        find_chord_for_word(params, atlas, ("b", "b", "a"))


def test_single_chord_orbit(two_chord_doc):
    atlas = load_atlas(two_chord_doc)
    orbits = [find_orbit_for_cyclic_word(HandleParams(epsilon=e), atlas, ("a",)) for e in SWEEP]
    excess = [o.action_correction for o in orbits]
    assert excess[0] > excess[1] > excess[2] > 0
    contraction = [o.contraction for o in orbits]
    assert all(c < 1 for c in contraction)
    assert contraction[0] > contraction[1] > contraction[2]
    for o in orbits:
        assert o.forward_residual <= 1e-9 and o.backward_residual <= 1e-9


def test_orbit_rotation_invariance(two_chord_doc, params):
    atlas = load_atlas(two_chord_doc)
    ab = find_orbit_for_cyclic_word(params, atlas, ("a", "b"))
    ba = find_orbit_for_cyclic_word(params, atlas, ("b", "a"))
    assert np.max(np.abs(np.array(ab.offsets) - np.array(ba.offsets)[::-1])) <= 1e-8
    assert ab.action == ba.action


def test_orbit_rejects_noncyclic(params):
    atlas = load_atlas({"components": ["L1", "L2"], "action_cap": 3.0, "dimension": 3, "chords": [
        {"id": "a", "start": "L1", "end": "L2", "action": 1.0, "linear": [[0.8, 0], [0, 0.7]], "offset": [0, 0]},
        {"id": "b", "start": "L2", "end": "L1", "action": 1.3, "linear": [[0.8, 0], [0, 0.7]], "offset": [0, 0]}]})
    with pytest.raises(PreconditionError):
        find_orbit_for_cyclic_word(params, atlas, ("a",))
    assert [w.ids for w in surgery_cyclic_words(atlas)] == [("a", "b")]


def test_verify_synthetic_atlas_passes(params):
    atlas = synth_atlas(1, n_chords=2)
    report = verify_bijection(params, atlas)
    assert report.passed and report.misses == 0 and report.multiplicities == 0
    assert report.counts["cyclic"]["words"] == len(enumerate_cyclic(atlas))
    k = params.epsilon ** (2 * params.p)
    assert report.max_action_deviation / k < 1e3  # measured constant K


def test_verify_large_epsilon_records_failure(two_chord_doc):
    report = verify_bijection(HandleParams(epsilon=0.9), load_atlas(two_chord_doc))
    assert not report.passed
    assert report.failure_modes
    failed = [r for r in report.chords + report.orbits if r["status"] != "found"]
    assert all("failure" in r for r in failed)


def test_verify_empty_atlas(params):
    atlas = load_atlas({"components": ["L1"], "chords": [], "action_cap": 1.0, "dimension": 3})
    report = verify_bijection(params, atlas)
    assert report.passed and report.chords == [] and report.orbits == []


def test_verify_dimension_mismatch_is_report_content(two_chord_doc):
    report = verify_bijection(HandleParams(n=4), load_atlas(two_chord_doc))
    assert not report.passed
    assert all(mode.startswith("contract:") for mode in report.failure_modes)


def test_surgery_words_skip_unattached_junctions():
    atlas = synth_atlas(2, n_chords=3, include_lambda0=True)
    for _, _, w in surgery_words(atlas):
        for cid in w.ids[:-1]:
            assert atlas.chord(cid).end_component != "L0"


def test_threshold_bracket_and_ordering(two_chord_doc, params):
    wide = epsilon_threshold(params, load_atlas(two_chord_doc))
    assert wide.bracket[1] - wide.bracket[0] <= 0.05
    assert wide.bracket[0] <= wide.epsilon0 <= wide.bracket[1]
    narrow_doc = dict(two_chord_doc)
    narrow_doc["chords"] = [dict(c) for c in two_chord_doc["chords"]]
    narrow_doc["chords"][1]["action"] = 1.0005
    narrow_doc["action_cap"] = 2.2
    narrow = epsilon_threshold(params, load_atlas(narrow_doc))
    assert narrow.epsilon0 < wide.epsilon0
    # reported, not asserted: whether every scanned epsilon below a pass also passes
    assert isinstance(wide.monotone, bool)


def test_threshold_not_found(two_chord_doc, params):
    with pytest.raises(ThresholdNotFoundError):
        epsilon_threshold(params, load_atlas(two_chord_doc), scan=(0.95,))

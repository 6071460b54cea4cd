import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stseg.lattice import (
    BoundsError,
    CtcLattice,
    SegmentBoundary,
    SpeechBlock,
    Trigger,
    ValidationError,
    append_lattice,
    check_monotone,
    is_sentence_punct,
    lattice_slice,
    logsumexp,
    make_blocks,
    make_vocabulary,
)


def _lattice(t, width, seed=0):
    rng = np.random.default_rng(seed)
    p = rng.random((t, width)) + 1e-3
    return CtcLattice(np.log(p / p.sum(axis=1, keepdims=True)))


def test_make_vocabulary_appends_blank():
    v = make_vocabulary(["a", "b", "."], "∅")
    assert v.size == 3 and v.blank_id == 3 and v.punct_ids == {2}
    assert v.surfaces[-1] == "∅"


def test_punct_rule_uses_terminal_character():
    assert make_vocabulary(["Hallo", "Welt", "!?"]).punct_ids == {2}
    assert make_vocabulary(["a.b"]).punct_ids == frozenset()
    assert is_sentence_punct("▁.") and not is_sentence_punct("▁")


def test_vocabulary_rejects_duplicates_and_blank_collision():
    with pytest.raises(ValidationError):
        make_vocabulary(["a", "a"])
    with pytest.raises(ValidationError):
        make_vocabulary(["a", "<blank>"])


def test_detokenize_attaches_punctuation():
    v = make_vocabulary(["hello", "world", "."])
    assert v.detokenize([0, 1, 2]) == "hello world."
    m = make_vocabulary(["▁hel", "lo", "▁world", "."])
    assert m.detokenize([0, 1, 2, 3]) == "hello world."


def test_lattice_rejects_denormalized_rows():
    with pytest.raises(ValidationError, match="row 1"):
        CtcLattice(np.log(np.array([[0.5, 0.5], [0.6, 0.6]])))
    with pytest.raises(ValidationError):
        CtcLattice(np.array([[np.nan, 0.0]]))


def test_lattice_is_read_only():
    lat = _lattice(3, 4)
    with pytest.raises(ValueError):
        lat.log_probs[0, 0] = 0.0


def test_slice_examples():
    lat = _lattice(6, 3)
    assert lattice_slice(lat, 0, 6) == lat
    assert lattice_slice(lat, 0, 0).frames == 0
    part = lattice_slice(lat, 2, 5)
    assert part.frames == 3 and np.array_equal(part.log_probs, lat.log_probs[2:5])
    with pytest.raises(BoundsError):
        lattice_slice(lat, 4, 7)
    with pytest.raises(BoundsError):
        lattice_slice(lat, 3, 2)


def test_append_identities_and_width_check():
    lat = _lattice(5, 3)
    empty = CtcLattice.empty(3)
    assert append_lattice(lat, empty) == lat
    assert append_lattice(empty, lat) == lat
    with pytest.raises(ValidationError):
        append_lattice(lat, _lattice(2, 4))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 8), st.integers(0, 8), st.integers(2, 5))
def test_slice_append_round_trip(t, k, width):
    lat = _lattice(t, width, seed=t * 31 + width)
    k = min(k, t)
    assert append_lattice(lattice_slice(lat, 0, k), lattice_slice(lat, k, t)) == lat


def test_logsumexp_handles_all_neg_inf():
    assert logsumexp(np.array([-np.inf, -np.inf])) == -np.inf
    out = logsumexp(np.array([[0.0, -np.inf], [-np.inf, -np.inf]]), axis=1)
    assert out[0] == 0.0 and out[1] == -np.inf
    assert np.isclose(logsumexp(np.array([1000.0, 1000.0])), 1000.0 + np.log(2))


def test_blocks_tile_the_stream():
    blocks = make_blocks(95, 40)
    assert [b.feature_frames for b in blocks] == [40, 40, 15]
    assert blocks[1].first_frame == 40 and blocks[-1].end_frame == 95
    assert blocks[-1].source_end_ms == 95 * 40
    with pytest.raises(ValidationError):
        SpeechBlock(0, 2, 0.0, 100.0)


def test_boundary_time_and_order():
    b = SegmentBoundary.at_frame(37, Trigger.GREEDY_PUNCT)
    assert abs(b.source_ms - 37 * 40) <= 40
    assert b.to_dict() == {"frame": 37, "source_ms": 1520.0, "trigger": "greedy_punct"}
    check_monotone([SegmentBoundary.at_frame(f, "pause") for f in (1, 5, 9)])
    with pytest.raises(ValidationError):
        check_monotone([SegmentBoundary.at_frame(f, "pause") for f in (5, 5)])

import numpy as np
import pytest

from stseg.container import load_lattice_file, save_lattice
from stseg.ctc import collapse, greedy_labels
from stseg.lattice import ValidationError
from stseg.synth import (
    Script,
    ScriptedBackend,
    SynthConfig,
    XorShift64Star,
    generate_corpus,
    generate_script,
    script_to_lattice,
    speech_mask,
    splitmix64,
    synthetic_vocabulary,
    uniform_stream,
)


def test_splitmix_and_xorshift_reference_values():
    # first output of the public-domain splitmix64 reference for seed 0
    assert splitmix64(0) == 0xE220A8397B1DCDAF
    g = XorShift64Star(1)
    a = [g.next_u64() for _ in range(3)]
    h = XorShift64Star(1)
    assert a == [h.next_u64() for _ in range(3)]
    assert all(0 <= XorShift64Star(9).random() < 1 for _ in range(5))


def test_vectorized_uniforms_match_scalar_generator():
    a, b = XorShift64Star(42), XorShift64Star(42)
    fast = uniform_stream(a, 100)
    slow = np.array([b.random() for _ in range(100)])
    assert np.array_equal(fast, slow) and a.state == b.state


def test_default_vocabulary_shape():
    v = synthetic_vocabulary()
    assert v.size == 64 and v.width == 65 and v.blank_id == 64
    assert {v.surfaces[i] for i in v.punct_ids} == {".", "!", "?"}


def _two_sentence_script(vocab, beta=1.0):
    a, b, dot, q = 0, 1, vocab.index("."), vocab.index("?")
    return Script([[a, b, dot], [b, q]], [[(1, 2), (4, 5), (6, 6)], [(9, 11), (12, 12)]],
                  beta, 3, 15)


def test_one_hot_lattice_reproduces_script(vocab):
    script = _two_sentence_script(vocab)
    lat, truth = script_to_lattice(script, vocab)
    assert collapse(greedy_labels(lat), vocab.blank_id) == script.tokens
    assert truth.boundary_frames == [6, 12]
    assert truth.reference_text == ["w00 w01.", "w01?"]
    assert set(np.unique(lat.log_probs)) <= {0.0, -np.inf}


def test_noisy_lattice_is_deterministic_and_peaked(vocab):
    script = _two_sentence_script(vocab, 0.8)
    a, _ = script_to_lattice(script, vocab)
    b, _ = script_to_lattice(script, vocab)
    assert a.log_probs.tobytes() == b.log_probs.tobytes()
    assert np.allclose(np.exp(a.log_probs.max(axis=1)), 0.8)
    assert list(greedy_labels(a)[[1, 6, 7]]) == [0, vocab.index("."), vocab.blank_id]


def test_script_validation(vocab):
    bad = _two_sentence_script(vocab)
    bad.spans[1][0] = (5, 11)
    with pytest.raises(ValidationError):
        script_to_lattice(bad, vocab)
    no_punct = Script([[0, 1]], [[(0, 0), (1, 1)]], 1.0, 0, 3)
    with pytest.raises(ValidationError):
        no_punct.validate(vocab)
    with pytest.raises(ValidationError):
        Script([[0, vocab.index(".")]], [[(0, 0), (1, 1)]], 0.01, 0, 3).validate(vocab)
    with pytest.raises(ValidationError):
        SynthConfig(min_sentences=0, max_sentences=0)


def test_generated_scripts_respect_ranges(vocab):
    cfg = SynthConfig(mid_pause_rate=0.3)
    for seed in range(5):
        s = generate_script(cfg, vocab, seed)
        assert cfg.min_sentences <= len(s.sentences) <= cfg.max_sentences
        for sps in s.spans:
            assert sps[-1][0] == sps[-1][1]
            assert (sps[-1][1] - sps[0][0] + 1) * 40 >= cfg.min_sentence_ms * 0.9
        mask = speech_mask(s)
        assert not mask[0] and not mask[-1]


def test_corpus_generation_is_deterministic(vocab):
    cfg = SynthConfig(n_streams=2, sharpness=0.9, seed=4)
    a, b = generate_corpus(cfg, vocab), generate_corpus(cfg, vocab)
    for x, y in zip(a, b):
        assert x.lattice == y.lattice and x.script == y.script


def test_script_json_round_trip(tmp_path, vocab):
    s = generate_script(SynthConfig(), vocab, 3)
    s.save(tmp_path / "s.json")
    assert Script.load(tmp_path / "s.json") == s


def test_lattice_file_round_trip(tmp_path, vocab):
    s = generate_script(SynthConfig(sharpness=0.8), vocab, 3)
    lat, _ = script_to_lattice(s, vocab)
    save_lattice(tmp_path / "l.ctcl", lat, vocab)
    got, gv = load_lattice_file(tmp_path / "l.ctcl")
    assert gv == vocab
    assert np.allclose(got.log_probs, lat.log_probs, atol=1e-6)


def test_scripted_decoder_distribution(vocab):
    script = _two_sentence_script(vocab)
    be = ScriptedBackend(script, vocab)
    dot = vocab.index(".")
    out = be.decoder_step([(), (0,), (0, 1, dot, 1, vocab.index("?")), (5,)], np.arange(15))
    assert out[0].argmax() == 0 and out[1].argmax() == 1
    assert out[2].argmax() == vocab.blank_id  # end of script: end of sequence
    assert np.allclose(out[3], -np.log(vocab.width))  # off-script prefix
    assert np.allclose(np.logaddexp.reduce(np.where(np.isinf(out), -np.inf, out), axis=1), 0.0)
    assert be.counters.decode == 1


def test_scripted_decoder_anchors_at_segment_start(vocab):
    script = _two_sentence_script(vocab)
    be = ScriptedBackend(script, vocab)
    assert be.expected(7) == (1, vocab.index("?"))
    assert be.expected(5) == (1, vocab.index("."), 1, vocab.index("?"))


def test_fragment_errors_only_inside_cut_sentences(vocab):
    s = generate_script(SynthConfig(fragment_error_rate=1.0), vocab, 8)
    be = ScriptedBackend(s, vocab)
    first = s.spans[0]
    mid = first[2][0]
    got = be.expected(mid)
    n_tail = len(s.sentences[0]) - 2
    # word tokens of the cut sentence are all replaced, punctuation and later sentences are not
    assert all(a != b for a, b in zip(got[:n_tail - 1], s.sentences[0][2:-1]))
    assert got[n_tail - 1] == s.sentences[0][-1]
    assert list(got[n_tail:]) == s.tokens[len(s.sentences[0]):]
    assert be.expected(s.spans[1][0][0]) == tuple(s.tokens[len(s.sentences[0]):])

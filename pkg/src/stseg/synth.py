"""Scripted lattices and a deterministic model backend.

Random draws come from xorshift64* seeded through splitmix64, so fixtures are
reproducible from any language:

* ``splitmix64(x)``: ``x += 0x9E3779B97F4A7C15``; ``z = (x ^ x>>30) * 0xBF58476D1CE4E5B9``;
  ``z = (z ^ z>>27) * 0x94D049BB133111EB``; return ``z ^ z>>31`` (all mod 2**64).
* ``xorshift64*``: ``x ^= x>>12; x ^= x<<25; x ^= x>>27``; output ``x * 0x2545F4914F6CDD1D``.
* ``random()`` is the top 53 bits of the output scaled by 2**-53;
  ``randint(lo, hi)`` is ``lo + out % (hi - lo + 1)``.

Structure draws (sentence lengths, tokens, gaps) use a generator seeded with
``splitmix64(seed)``; lattice noise uses a second one seeded with
``splitmix64(seed ^ 0x5EED)``.
"""

from __future__ import annotations

import bisect
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from numba import njit

from stseg.container import load_lattice_file  # noqa: F401  (re-exported ingestion point)
from stseg.decoder import CallCounters
from stseg.lattice import (
    DEFAULT_FRAME_MS,
    CtcLattice,
    SpeechBlock,
    ValidationError,
    Vocabulary,
    make_vocabulary,
)

MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


class XorShift64Star:
    def __init__(self, seed: int):
        self.state = splitmix64(seed & MASK64) or 1

    def next_u64(self) -> int:
        x = self.state
        x ^= x >> 12
        x ^= (x << 25) & MASK64
        x ^= x >> 27
        self.state = x
        return (x * 0x2545F4914F6CDD1D) & MASK64

    def random(self) -> float:
        return (self.next_u64() >> 11) * 2.0 ** -53

    def randint(self, lo: int, hi: int) -> int:
        return lo + self.next_u64() % (hi - lo + 1)

    def choice(self, items: Sequence):
        return items[self.randint(0, len(items) - 1)]


@njit(cache=True)
def _uniform_fill(state, n):
    out = np.empty(n)
    x = np.uint64(state)
    mul = np.uint64(0x2545F4914F6CDD1D)
    s11 = np.uint64(11)
    s12 = np.uint64(12)
    s25 = np.uint64(25)
    s27 = np.uint64(27)
    for i in range(n):
        x ^= x >> s12
        x ^= x << s25
        x ^= x >> s27
        out[i] = np.float64((x * mul) >> s11) * 2.0 ** -53
    return out, x


def uniform_stream(gen: XorShift64Star, n: int) -> np.ndarray:
    """``n`` draws of ``gen.random()``, advancing ``gen`` identically."""
    out, state = _uniform_fill(np.uint64(gen.state), n)
    gen.state = int(state)
    return out


def synthetic_vocabulary(size: int = 64) -> Vocabulary:
    """``size - 3`` words ``w00 ...`` plus ``. ! ?`` and a trailing blank."""
    if size < 5:
        raise ValidationError("synthetic vocabulary needs at least 5 tokens")
    words = [f"w{i:02d}" for i in range(size - 3)]
    return make_vocabulary(words + [".", "!", "?"], "<blank>")


@dataclass
class Script:
    """Token timeline of one stream.

    ``spans[k][j]`` is the inclusive frame range of token ``j`` of sentence
    ``k``. ``fragment_error_rate`` drives the scripted decoder's behaviour on
    segments that start mid-sentence.
    """

    sentences: list[list[int]]
    spans: list[list[tuple[int, int]]]
    sharpness: float
    seed: int
    n_frames: int
    frame_duration_ms: float = DEFAULT_FRAME_MS
    fragment_error_rate: float = 0.0

    def validate(self, vocab: Vocabulary) -> None:
        if not self.sentences:
            raise ValidationError("script has no sentences")
        if not 1.0 / vocab.width < self.sharpness <= 1.0:
            raise ValidationError(f"sharpness {self.sharpness} outside (1/{vocab.width}, 1]")
        if len(self.spans) != len(self.sentences):
            raise ValidationError("spans and sentences disagree")
        prev_end = -1
        for sent, spans in zip(self.sentences, self.spans):
            if not sent or len(sent) != len(spans):
                raise ValidationError("each sentence needs one span per token")
            if sent[-1] not in vocab.punct_ids:
                raise ValidationError("sentence does not end with punctuation")
            for tok, (s, e) in zip(sent, spans):
                if tok == vocab.blank_id or not 0 <= tok < vocab.width:
                    raise ValidationError(f"invalid token {tok}")
                if s > e or s <= prev_end:
                    raise ValidationError(f"span ({s}, {e}) overlaps or is out of order")
                prev_end = e
        if prev_end >= self.n_frames:
            raise ValidationError("spans exceed the stream length")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["spans"] = [[list(sp) for sp in sent] for sent in self.spans]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Script":
        spans = [[tuple(sp) for sp in sent] for sent in d["spans"]]
        return cls(d["sentences"], spans, float(d["sharpness"]), int(d["seed"]),
                   int(d["n_frames"]), float(d.get("frame_duration_ms", DEFAULT_FRAME_MS)),
                   float(d.get("fragment_error_rate", 0.0)))

    def save(self, path: Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), sort_keys=True), encoding="utf-8")

    @classmethod
    def load(cls, path: Path) -> "Script":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    @property
    def tokens(self) -> list[int]:
        return [t for sent in self.sentences for t in sent]

    @property
    def flat_spans(self) -> list[tuple[int, int]]:
        return [sp for sent in self.spans for sp in sent]


@dataclass
class GroundTruth:
    boundary_frames: list[int]
    reference_text: list[str]
    sentence_spans_ms: list[tuple[float, float]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"boundary_frames": self.boundary_frames,
                "reference_text": self.reference_text,
                "sentence_spans_ms": [list(s) for s in self.sentence_spans_ms]}

    @classmethod
    def from_dict(cls, d: dict) -> "GroundTruth":
        return cls(list(d["boundary_frames"]), list(d["reference_text"]),
                   [tuple(s) for s in d.get("sentence_spans_ms", [])])


@dataclass
class SynthConfig:
    n_streams: int = 20
    min_sentences: int = 5
    max_sentences: int = 12
    min_sentence_ms: float = 2000.0
    max_sentence_ms: float = 12000.0
    gap_frames: tuple[int, int] = (5, 20)
    token_frames: tuple[int, int] = (2, 6)
    token_gap_frames: tuple[int, int] = (1, 2)
    mid_pause_rate: float = 0.0
    sharpness: float = 1.0
    vocab_size: int = 64
    frame_duration_ms: float = DEFAULT_FRAME_MS
    fragment_error_rate: float = 0.5
    seed: int = 0

    def __post_init__(self) -> None:
        if self.n_streams < 1 or self.min_sentences < 1 or self.max_sentences < self.min_sentences:
            raise ValidationError("at least one stream with at least one sentence is required")
        if self.min_sentence_ms <= 0 or self.max_sentence_ms < self.min_sentence_ms:
            raise ValidationError("invalid sentence duration range")


def generate_script(cfg: SynthConfig, vocab: Vocabulary, seed: int) -> Script:
    rng = XorShift64Star(seed)
    dur = cfg.frame_duration_ms
    words = [i for i in range(vocab.width) if i != vocab.blank_id and i not in vocab.punct_ids]
    puncts = sorted(vocab.punct_ids)
    n_sent = rng.randint(cfg.min_sentences, cfg.max_sentences)
    lo_f = max(3, int(round(cfg.min_sentence_ms / dur)))
    hi_f = max(lo_f, int(round(cfg.max_sentence_ms / dur)))
    cursor = rng.randint(*cfg.gap_frames)
    sentences, spans = [], []
    for _ in range(n_sent):
        length = rng.randint(lo_f, hi_f)
        end = cursor + length - 1  # frame reserved for the punctuation
        toks, sps = [], []
        while True:
            n = rng.randint(*cfg.token_frames)
            if cursor + n > end and toks:
                break
            toks.append(rng.choice(words))
            sps.append((cursor, cursor + n - 1))
            cursor += n + rng.randint(*cfg.token_gap_frames)
        if cfg.mid_pause_rate > 0 and len(toks) >= 2 and rng.random() < cfg.mid_pause_rate:
            j = rng.randint(1, len(toks) - 1)
            shift = rng.randint(*cfg.gap_frames)
            sps = sps[:j] + [(s + shift, e + shift) for s, e in sps[j:]]
            cursor += shift
        punct_frame = max(cursor, sps[-1][1] + 1)
        toks.append(rng.choice(puncts))
        sps.append((punct_frame, punct_frame))
        sentences.append(toks)
        spans.append(sps)
        cursor = punct_frame + 1 + rng.randint(*cfg.gap_frames)
    script = Script(sentences, spans, cfg.sharpness, seed, cursor, dur, cfg.fragment_error_rate)
    script.validate(vocab)
    return script


def scripted_labels(script: Script, blank_id: int) -> np.ndarray:
    labels = np.full(script.n_frames, blank_id, dtype=np.int64)
    for tok, (s, e) in zip(script.tokens, script.flat_spans):
        labels[s:e + 1] = tok
    return labels


def speech_mask(script: Script) -> np.ndarray:
    """True on frames covered by a token span."""
    mask = np.zeros(script.n_frames, dtype=bool)
    for s, e in script.flat_spans:
        mask[s:e + 1] = True
    return mask


def script_to_lattice(script: Script, vocab: Vocabulary) -> tuple[CtcLattice, GroundTruth]:
    """Render the script: mass ``sharpness`` on the scripted label, seeded noise elsewhere."""
    script.validate(vocab)
    width = vocab.width
    labels = scripted_labels(script, vocab.blank_id)
    beta = script.sharpness
    probs = np.zeros((script.n_frames, width))
    if beta < 1.0:
        gen = XorShift64Star(script.seed ^ 0x5EED)
        noise = uniform_stream(gen, script.n_frames * (width - 1)).reshape(script.n_frames, width - 1)
        noise = noise + 1e-3  # keep every residual strictly positive
        noise *= (1.0 - beta) / noise.sum(axis=1, keepdims=True)
        cols = np.arange(width)
        for f in range(script.n_frames):
            probs[f, cols != labels[f]] = noise[f]
    probs[np.arange(script.n_frames), labels] = beta
    with np.errstate(divide="ignore"):
        lattice = CtcLattice(np.log(probs), script.frame_duration_ms)
    return lattice, ground_truth(script, vocab)


def ground_truth(script: Script, vocab: Vocabulary) -> GroundTruth:
    ends = [spans[-1][1] for spans in script.spans]
    dur = script.frame_duration_ms
    starts = [0] + [e + 1 for e in ends[:-1]]
    return GroundTruth(ends, [vocab.detokenize(s) for s in script.sentences],
                       [(s * dur, (e + 1) * dur) for s, e in zip(starts, ends)])


def _unit_hash(seed: int, index: int) -> int:
    return splitmix64((seed * 0x100000001B3 + index) & MASK64)


class ScriptedBackend:
    """Model backend that "translates" by following the script.

    Encoder states are global frame indices, so the decoder can tell where
    the current segment starts. Its output for a segment follows the script
    from the first token whose span reaches into the segment. Word tokens of
    a sentence that began before the segment start lack context; each is
    swapped for a fixed wrong word with probability ``fragment_error_rate``
    (a per-token coin flip, identical across runs). Prefixes that leave the
    script get a uniform distribution.
    """

    def __init__(self, script: Script, vocab: Vocabulary, lattice: CtcLattice | None = None):
        self.script = script
        self.vocab = vocab
        self.width = vocab.width
        self.blank_id = vocab.blank_id
        self.counters = CallCounters()
        if lattice is None:
            lattice, _ = script_to_lattice(script, vocab)
        lattice.check_vocabulary(vocab)
        self.rows = lattice.log_probs
        self.frame_duration_ms = lattice.frame_duration_ms
        self._tokens = script.tokens
        spans = script.flat_spans
        self._ends = [e for _, e in spans]
        self._sent_start = []
        for sent, sps in zip(script.sentences, script.spans):
            self._sent_start.extend([sps[0][0]] * len(sent))
        self._words = [i for i in range(vocab.width)
                       if i != vocab.blank_id and i not in vocab.punct_ids]
        self._cache: dict[int, tuple[int, ...]] = {}
        beta = script.sharpness
        with np.errstate(divide="ignore"):
            self._peak = np.log(beta)
            self._rest = np.log((1.0 - beta) / (self.width - 1)) if beta < 1.0 else -np.inf
        self._uniform = np.full(self.width, -np.log(self.width))

    def encode_block(self, block: SpeechBlock) -> tuple[np.ndarray, np.ndarray]:
        self.counters.encode += 1
        lo, hi = block.first_frame, min(block.end_frame, len(self.rows))
        return np.arange(lo, hi, dtype=np.int64), self.rows[lo:hi]

    def reset_segment(self) -> None:
        self._cache.clear()

    def expected(self, segment_start: int) -> tuple[int, ...]:
        """What the decoder believes the segment starting at that frame says."""
        if segment_start in self._cache:
            return self._cache[segment_start]
        anchor = bisect.bisect_left(self._ends, segment_start)
        out = []
        rate = self.script.fragment_error_rate
        for j in range(anchor, len(self._tokens)):
            tok = self._tokens[j]
            if (rate > 0 and self._sent_start[j] < segment_start and tok in self._words):
                h = _unit_hash(self.script.seed, j)
                if (h >> 11) * 2.0 ** -53 < rate:
                    k = self._words.index(tok)
                    tok = self._words[(k + 1 + h % (len(self._words) - 1)) % len(self._words)]
            out.append(tok)
        self._cache[segment_start] = tuple(out)
        return self._cache[segment_start]

    def decoder_step(self, prefixes: Sequence[Sequence[int]], states: np.ndarray) -> np.ndarray:
        self.counters.decode += 1
        seg_start = int(states[0]) if len(states) else 0
        exp = self.expected(seg_start)
        out = np.empty((len(prefixes), self.width))
        for i, prefix in enumerate(prefixes):
            n = len(prefix)
            if n <= len(exp) and tuple(prefix) == exp[:n]:
                nxt = exp[n] if n < len(exp) else self.blank_id  # blank column = end of sequence
                out[i] = self._rest
                out[i, nxt] = self._peak
            else:
                out[i] = self._uniform
        return out


class LatticeBackend:
    """Backend over a dumped lattice with no decoder knowledge.

    The decoder distribution is uniform, so search is driven by the CTC
    scores alone.
    """

    def __init__(self, lattice: CtcLattice, vocab: Vocabulary):
        lattice.check_vocabulary(vocab)
        self.rows = lattice.log_probs
        self.frame_duration_ms = lattice.frame_duration_ms
        self.width = vocab.width
        self.blank_id = vocab.blank_id
        self.counters = CallCounters()
        self._uniform = np.full(self.width, -np.log(self.width))

    def encode_block(self, block: SpeechBlock) -> tuple[np.ndarray, np.ndarray]:
        self.counters.encode += 1
        lo, hi = block.first_frame, min(block.end_frame, len(self.rows))
        return np.arange(lo, hi, dtype=np.int64), self.rows[lo:hi]

    def decoder_step(self, prefixes: Sequence[Sequence[int]], states: np.ndarray) -> np.ndarray:
        self.counters.decode += 1
        return np.tile(self._uniform, (len(prefixes), 1))

    def reset_segment(self) -> None:
        pass


def scripted_model_backend(script: Script, vocab: Vocabulary,
                           lattice: CtcLattice | None = None) -> ScriptedBackend:
    return ScriptedBackend(script, vocab, lattice)


@dataclass
class StreamFixture:
    stream_id: str
    script: Script
    lattice: CtcLattice
    truth: GroundTruth
    mask: np.ndarray


def generate_corpus(cfg: SynthConfig, vocab: Vocabulary | None = None) -> list[StreamFixture]:
    vocab = vocab or synthetic_vocabulary(cfg.vocab_size)
    out = []
    for i in range(cfg.n_streams):
        seed = splitmix64((cfg.seed << 16) + i) & 0x7FFFFFFF
        script = generate_script(cfg, vocab, seed)
        lattice, truth = script_to_lattice(script, vocab)
        out.append(StreamFixture(f"s{i:03d}", script, lattice, truth, speech_mask(script)))
    return out

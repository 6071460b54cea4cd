"""Long-form evaluation: hypothesis resegmentation, BLEU, LAAL and boundary metrics."""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from stseg.lattice import Vocabulary

MAX_ORDER = 4


class EvaluationError(ValueError):
    """A metric is undefined for the given input."""


_13A_RULES = [
    (re.compile(r"([\{-\~\[-\` -\&\(-\+\:-\@\/])"), r" \1 "),
    (re.compile(r"([^0-9])([\.,])"), r"\1 \2 "),
    (re.compile(r"([\.,])([^0-9])"), r" \1 \2"),
    (re.compile(r"([0-9])(-)"), r"\1 \2 "),
]


def tokenize_13a(text: str) -> list[str]:
    """mteval-v13a style tokenization: punctuation split off, case kept."""
    text = text.replace("<skipped>", "").replace("-\n", "").replace("\n", " ")
    text = text.replace("&quot;", '"').replace("&amp;", "&").replace("&lt;", "<").replace("&gt;", ">")
    text = f" {text} "
    for pattern, repl in _13A_RULES:
        text = pattern.sub(repl, text)
    return text.split()


def tokenize_char(text: str) -> list[str]:
    return [ch for ch in text if not ch.isspace()]


TOKENIZERS = {"default": tokenize_13a, "13a": tokenize_13a, "char": tokenize_char,
              "none": str.split}


def get_tokenizer(name: str):
    try:
        return TOKENIZERS[name]
    except KeyError:
        raise EvaluationError(f"unknown tokenizer {name!r}") from None


@dataclass
class ResegmentedPair:
    hyp_segments: list[list[str]]
    ref_segments: list[list[str]]
    distance: int
    cuts: list[int] = field(default_factory=list)


def _encode(hyp: Sequence[str], refs: Sequence[Sequence[str]]):
    lookup: dict[str, int] = {}
    h = np.array([lookup.setdefault(w, len(lookup)) for w in hyp], dtype=np.int64)
    r = [np.array([lookup.setdefault(w, len(lookup)) for w in ref], dtype=np.int64) for ref in refs]
    return h, r


def _sweep(hyp: np.ndarray, ref: np.ndarray, start: np.ndarray) -> np.ndarray:
    """Edit-distance DP over one reference segment.

    ``start[i]`` is the cost of having consumed ``hyp[:i]`` before this
    segment; the result at ``j`` is the best cost after consuming
    ``hyp[:j]`` with this segment included.
    """
    idx = np.arange(len(hyp) + 1, dtype=np.float64)
    d = np.minimum.accumulate(start - idx) + idx
    for word in ref:
        e = d + 1.0
        e[1:] = np.minimum(e[1:], d[:-1] + (hyp != word))
        d = np.minimum.accumulate(e - idx) + idx
    return d


def mwer_resegment(hyp_words: Sequence[str], ref_segments: Sequence[Sequence[str]]) -> ResegmentedPair:
    """Split ``hyp_words`` into one contiguous piece per reference segment.

    Minimizes the summed word edit distance; among optimal splits the
    lexicographically earliest cut vector wins.
    """
    if not ref_segments:
        raise EvaluationError("need at least one reference segment")
    hyp_words = list(hyp_words)
    refs = [list(r) for r in ref_segments]
    n = len(hyp_words)
    h, r = _encode(hyp_words, refs)
    k_total = len(refs)

    # suffix costs: tail[k][i] = best cost of hyp[i:] against refs[k:]
    tail = [None] * (k_total + 1)
    last = np.full(n + 1, np.inf)
    last[n] = 0.0
    tail[k_total] = last
    h_rev = h[::-1]
    acc = last[::-1].copy()
    for k in range(k_total - 1, -1, -1):
        acc = _sweep(h_rev, r[k][::-1], acc)
        tail[k] = acc[::-1].copy()

    cuts = []
    i = 0
    for k in range(k_total - 1):
        start = np.full(n + 1, np.inf)
        start[i] = 0.0
        total = _sweep(h, r[k], start) + tail[k + 1]
        i = int(np.argmin(total))
        cuts.append(i)
    bounds = [0] + cuts + [n]
    pieces = [hyp_words[a:b] for a, b in zip(bounds, bounds[1:])]
    return ResegmentedPair(pieces, refs, int(tail[0][0]), cuts)


def edit_distance(a: Sequence[str], b: Sequence[str]) -> int:
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (x != y)))
        prev = cur
    return prev[-1]


@dataclass
class BleuResult:
    score: float
    precisions: list[float | None]
    matches: list[int]
    totals: list[int]
    brevity_penalty: float
    sys_len: int
    ref_len: int


def _ngrams(words: Sequence[str], n: int) -> Counter:
    return Counter(tuple(words[i:i + n]) for i in range(len(words) - n + 1))


def corpus_bleu(hyp_segments: Sequence[str], ref_segments: Sequence[str],
                tokenizer: str = "default") -> BleuResult:
    """Corpus BLEU-4, case-sensitive, no smoothing.

    Orders for which the hypothesis has no n-grams at all are left out of
    the geometric mean, so identical short corpora still score 100.
    """
    if len(hyp_segments) != len(ref_segments):
        raise EvaluationError("hypothesis and reference segment counts differ")
    if not ref_segments:
        raise EvaluationError("empty corpus")
    tok = get_tokenizer(tokenizer)
    matches = [0] * MAX_ORDER
    totals = [0] * MAX_ORDER
    sys_len = ref_len = 0
    for hyp, ref in zip(hyp_segments, ref_segments):
        hw, rw = tok(hyp), tok(ref)
        sys_len += len(hw)
        ref_len += len(rw)
        for n in range(1, MAX_ORDER + 1):
            hc, rc = _ngrams(hw, n), _ngrams(rw, n)
            matches[n - 1] += sum(min(c, rc[g]) for g, c in hc.items())
            totals[n - 1] += max(len(hw) - n + 1, 0)
    precisions = [m / t if t else None for m, t in zip(matches, totals)]
    if sys_len == 0:
        return BleuResult(0.0, precisions, matches, totals, 0.0, sys_len, ref_len)
    bp = 1.0 if sys_len >= ref_len else math.exp(1.0 - ref_len / sys_len)
    used = [p for p in precisions if p is not None]
    if any(p == 0 for p in used):
        score = 0.0
    else:
        score = 100.0 * bp * math.exp(sum(math.log(p) for p in used) / len(used))
    return BleuResult(score, precisions, matches, totals, bp, sys_len, ref_len)


@dataclass
class TimedHypothesis:
    """Output tokens with their emission delays, against a source of ``duration_ms``.

    The source occupies ``[start_ms, start_ms + duration_ms]`` on the same
    clock as the delays; the ideal schedule uses only its length.
    """

    delays_ms: list[float]
    duration_ms: float
    words: list[str] = field(default_factory=list)
    start_ms: float = 0.0

    def __post_init__(self) -> None:
        if self.words and len(self.words) != len(self.delays_ms):
            raise EvaluationError("one delay per word is required")

    def __len__(self) -> int:
        return len(self.delays_ms)

    @property
    def text(self) -> str:
        return " ".join(self.words)


def _lagging(delays: Sequence[float], source_len: float, length: int, start: float = 0.0) -> float:
    if not len(delays):
        raise EvaluationError("lagging is undefined for an empty hypothesis")
    if length < 1:
        raise EvaluationError("length normalizer must be at least 1")
    rate = source_len / length
    total = 0.0
    tau = 0
    for i, d in enumerate(delays):
        total += d - i * rate
        tau = i + 1
        if d >= start + source_len:
            break
    return total / tau


def average_lagging(hyp: TimedHypothesis, ref_len: int) -> float:
    """Average lagging with the oracle rate ``duration / ref_len``."""
    return _lagging(hyp.delays_ms, hyp.duration_ms, ref_len, hyp.start_ms)


def laal(hyp: TimedHypothesis, ref_len: int) -> float:
    """Length-aware average lagging: the rate uses ``max(|hyp|, ref_len)``."""
    if ref_len < 1:
        raise EvaluationError("reference length must be at least 1")
    return _lagging(hyp.delays_ms, hyp.duration_ms, max(len(hyp), ref_len), hyp.start_ms)


def timed_words(tokens: Sequence[int], delays_ms: Sequence[float], vocab: Vocabulary,
                tokenizer: str = "default") -> tuple[list[str], list[float]]:
    """Detokenize a timed token stream and re-tokenize it for scoring.

    A word is timed by the token that completes it; its evaluation tokens
    inherit that delay.
    """
    words: list[list] = []
    for tok, d in zip(tokens, delays_ms):
        text = vocab.detokenize([tok])
        if not words or _starts_word(vocab, tok):
            words.append([text, d])
        else:
            words[-1][0] += text
            words[-1][1] = d
    tok_fn = get_tokenizer(tokenizer)
    out_w, out_d = [], []
    for text, d in words:
        for piece in tok_fn(text):
            out_w.append(piece)
            out_d.append(d)
    return out_w, out_d


def _starts_word(vocab: Vocabulary, tok: int) -> bool:
    surface = vocab.surfaces[tok]
    uses_marker = bool(vocab.marker) and any(vocab.marker in s for s in vocab.surfaces)
    if uses_marker:
        return surface.startswith(vocab.marker)
    return tok not in vocab.punct_ids


def match_boundaries(predicted: Sequence[int], truth: Sequence[int], tolerance: int = 0) -> int:
    """Hits of a one-to-one greedy matching: each prediction, in order, takes the
    nearest unmatched truth within ``tolerance`` (earliest on ties)."""
    pred = sorted(int(getattr(p, "frame", p)) for p in predicted)
    gold = sorted(int(getattr(t, "frame", t)) for t in truth)
    used = [False] * len(gold)
    hits = 0
    for p in pred:
        best = None
        for j, g in enumerate(gold):
            if used[j] or abs(p - g) > tolerance:
                continue
            if best is None or abs(p - g) < abs(p - gold[best]):
                best = j
        if best is not None:
            used[best] = True
            hits += 1
    return hits


def prf(hits: int, n_pred: int, n_gold: int) -> tuple[float, float, float]:
    precision = hits / n_pred if n_pred else 0.0
    recall = hits / n_gold if n_gold else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return precision, recall, f1


def boundary_prf(predicted: Sequence[int], truth: Sequence[int],
                 tolerance: int = 0) -> tuple[float, float, float]:
    """Precision, recall and F1 of boundary frames; empty denominators give 0."""
    return prf(match_boundaries(predicted, truth, tolerance), len(predicted), len(truth))


@dataclass
class SentenceScore:
    hyp: str
    ref: str
    laal: float | None


def evaluate_stream(tokens: Sequence[int], delays_ms: Sequence[float], vocab: Vocabulary,
                    references: Sequence[str], spans_ms: Sequence[tuple[float, float]],
                    tokenizer: str = "default") -> tuple[list[SentenceScore], int]:
    """Resegment one stream's output against its reference sentences.

    Delays are re-based to each reference sentence's start and LAAL uses
    that sentence's duration as source length. Returns per-sentence scores
    and the total edit distance of the alignment.
    """
    words, delays = timed_words(tokens, delays_ms, vocab, tokenizer)
    tok_fn = get_tokenizer(tokenizer)
    ref_words = [tok_fn(r) for r in references]
    pair = mwer_resegment(words, ref_words)
    bounds = [0] + pair.cuts + [len(words)]
    out = []
    for k, (a, b) in enumerate(zip(bounds, bounds[1:])):
        start, end = spans_ms[k]
        piece = TimedHypothesis([d - start for d in delays[a:b]], end - start, words[a:b])
        lag = laal(piece, len(ref_words[k])) if len(piece) else None
        out.append(SentenceScore(" ".join(words[a:b]), " ".join(ref_words[k]), lag))
    return out, pair.distance

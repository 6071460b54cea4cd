"""CTC path algebra: greedy labels, collapse, forward and prefix probabilities.

All recursions run in the log domain. The prefix probability of a label
sequence ``g`` after ``t`` frames is the mass of every length-``t`` path
whose collapse *begins* with ``g``::

    P_t(g) = P_{t-1}(g) * S_t + C_t(g)

where ``S_t`` is the row mass (1 for normalized rows) and ``C_t(g)`` is the
mass of paths that complete ``g`` exactly at frame ``t`` (they enter the
state of the final label from a different state). ``C_t`` is exposed as the
per-frame *increment* of the prefix probability.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from numba import njit

from stseg.lattice import BoundsError, CtcLattice, ValidationError

NEG_INF = -np.inf


class AlignmentNotFound(LookupError):
    """No frame in the search window can host the prefix."""


@njit(cache=True, inline="always")
def _lae(a, b):
    if a == -np.inf:
        return b
    if b == -np.inf:
        return a
    if a > b:
        return a + math.log1p(math.exp(b - a))
    return b + math.log1p(math.exp(a - b))


@njit(cache=True)
def _row_mass(row):
    m = -np.inf
    for v in row:
        if v > m:
            m = v
    if m == -np.inf:
        return -np.inf
    s = 0.0
    for v in row:
        s += math.exp(v - m)
    return m + math.log(s)


@njit(cache=True)
def _advance(alpha, labels, rows, blank, prefix0):
    """Run the extended-label forward recursion over ``rows``.

    Returns the final alpha plus per-frame histories of the exact-match
    variables (last label / trailing blank), the prefix probability and its
    per-frame increment.
    """
    n_states = alpha.shape[0]
    n_lab = labels.shape[0]
    n = rows.shape[0]
    rn = np.empty(n)
    rb = np.empty(n)
    hist = np.empty(n)
    emit = np.empty(n)
    cur = alpha.copy()
    nxt = np.empty(n_states)
    prefix = prefix0
    for t in range(n):
        row = rows[t]
        if n_lab > 0:
            last = labels[n_lab - 1]
            enter = cur[n_states - 3]
            if n_lab > 1 and labels[n_lab - 2] != last:
                enter = _lae(enter, cur[n_states - 4])
            comp = enter + row[last]
            prefix = _lae(prefix + _row_mass(row), comp)
        else:
            comp = -np.inf
            prefix = 0.0
        for s in range(n_states):
            if s % 2 == 0:
                v = cur[s]
                if s > 0:
                    v = _lae(v, cur[s - 1])
                nxt[s] = v + row[blank]
            else:
                lab = labels[(s - 1) // 2]
                v = _lae(cur[s], cur[s - 1])
                if s >= 3 and labels[(s - 3) // 2] != lab:
                    v = _lae(v, cur[s - 2])
                nxt[s] = v + row[lab]
        cur, nxt = nxt, cur
        rb[t] = cur[n_states - 1]
        rn[t] = cur[n_states - 2] if n_states > 1 else -np.inf
        hist[t] = prefix
        emit[t] = comp
    return cur, rn, rb, hist, emit


@njit(cache=True)
def _child(rn_p, rb_p, start_blank, rows, c, blank, same_last):
    """Histories for ``g + [c]`` from the exact-match histories of ``g``."""
    n = rows.shape[0]
    rn = np.empty(n)
    rb = np.empty(n)
    hist = np.empty(n)
    emit = np.empty(n)
    prev_n = -np.inf
    prev_b = -np.inf
    prefix = -np.inf
    for t in range(n):
        if t == 0:
            phi = start_blank
        else:
            phi = rb_p[t - 1]
            if not same_last:
                phi = _lae(phi, rn_p[t - 1])
        row = rows[t]
        comp = phi + row[c]
        prefix = _lae(prefix + _row_mass(row), comp)
        cur_n = _lae(prev_n, phi) + row[c]
        cur_b = _lae(prev_b, prev_n) + row[blank]
        rn[t] = cur_n
        rb[t] = cur_b
        hist[t] = prefix
        emit[t] = comp
        prev_n = cur_n
        prev_b = cur_b
    return rn, rb, hist, emit


@njit(cache=True)
def _child_scores(rn_p, rb_p, start_blank, rows, last, blank):
    """Final prefix log-probability of ``g + [c]`` for every column ``c``."""
    n, width = rows.shape
    out = np.full(width, -np.inf)
    masses = np.empty(n)
    for t in range(n):
        masses[t] = _row_mass(rows[t])
    for c in range(width):
        if c == blank:
            continue
        prefix = -np.inf
        for t in range(n):
            if t == 0:
                phi = start_blank
            else:
                phi = rb_p[t - 1]
                if c != last:
                    phi = _lae(phi, rn_p[t - 1])
            prefix = _lae(prefix + masses[t], phi + rows[t, c])
        out[c] = prefix
    return out


def _resolve_blank(width: int, blank_id: int | None) -> int:
    blank = width - 1 if blank_id is None else int(blank_id)
    if not 0 <= blank < width:
        raise ValidationError(f"blank id {blank} outside width {width}")
    return blank


def greedy_labels(lattice: CtcLattice) -> np.ndarray:
    """Per-frame argmax label; ties go to the lowest column."""
    if not lattice.frames:
        return np.zeros(0, dtype=np.int64)
    return np.argmax(lattice.log_probs, axis=1).astype(np.int64)


def collapse(path: Sequence[int], blank_id: int) -> list[int]:
    out: list[int] = []
    prev = None
    for lab in path:
        lab = int(lab)
        if lab != prev and lab != blank_id:
            out.append(lab)
        prev = lab
    return out


def _check_labels(labels: Sequence[int], width: int, blank: int) -> np.ndarray:
    arr = np.asarray(list(labels), dtype=np.int64)
    if arr.size and (arr.min() < 0 or arr.max() >= width):
        raise ValidationError("label outside lattice columns")
    if (arr == blank).any():
        raise ValidationError("label sequence contains the blank")
    return arr


def ctc_forward_logprob(lattice: CtcLattice, labels: Sequence[int],
                        blank_id: int | None = None) -> float:
    """log P(labels | lattice) summed over every path that collapses to it."""
    blank = _resolve_blank(lattice.width, blank_id)
    arr = _check_labels(labels, lattice.width, blank)
    if not arr.size:
        return float(np.sum(lattice.log_probs[:, blank])) if lattice.frames else 0.0
    if not lattice.frames:
        return NEG_INF
    scorer = PrefixScorer._fresh(arr, lattice.width, blank)
    scorer.extend_rows(lattice.log_probs)
    return float(np.logaddexp(scorer.gamma_n, scorer.gamma_b))


class PrefixScorer:
    """Incremental prefix-probability state for one label sequence.

    ``history[i]`` is the log prefix probability using frames ``0..i``;
    ``increments[i]`` the log mass of paths completing the prefix exactly at
    frame ``i``. Extending only appends to both.
    """

    def __init__(self, prefix: np.ndarray, width: int, blank_id: int, alpha: np.ndarray,
                 rn: np.ndarray, rb: np.ndarray, hist: np.ndarray, emit: np.ndarray):
        self.prefix = tuple(int(x) for x in prefix)
        self._labels = np.asarray(prefix, dtype=np.int64)
        self.width = width
        self.blank_id = blank_id
        self.alpha = alpha
        self._rn = rn
        self._rb = rb
        self._hist = hist
        self._emit = emit

    @classmethod
    def _fresh(cls, labels: np.ndarray, width: int, blank: int) -> "PrefixScorer":
        alpha = np.full(2 * len(labels) + 1, NEG_INF)
        alpha[0] = 0.0
        empty = np.zeros(0)
        return cls(labels, width, blank, alpha, empty, empty, empty, empty)

    @classmethod
    def root(cls, width: int, blank_id: int) -> "PrefixScorer":
        """Scorer for the empty prefix (probability one at every frame)."""
        return cls._fresh(np.zeros(0, dtype=np.int64), width, blank_id)

    @property
    def t(self) -> int:
        return self._hist.shape[0]

    @property
    def history(self) -> np.ndarray:
        return self._hist

    @property
    def increments(self) -> np.ndarray:
        return self._emit

    @property
    def gamma_n(self) -> float:
        return float(self.alpha[-2]) if len(self.alpha) > 1 else NEG_INF

    @property
    def gamma_b(self) -> float:
        return float(self.alpha[-1])

    @property
    def log_prefix(self) -> float:
        """Prefix probability at the current frame horizon."""
        if not self._labels.size:
            return 0.0
        return float(self._hist[-1]) if self.t else NEG_INF

    def extend(self, row: np.ndarray) -> "PrefixScorer":
        row = np.asarray(row, dtype=np.float64)
        if row.ndim != 1 or row.shape[0] != self.width or self.width == 0:
            raise ValidationError(f"row width {row.shape} does not match {self.width}")
        return self.extend_rows(row[None, :])

    def extend_rows(self, rows: np.ndarray) -> "PrefixScorer":
        rows = np.ascontiguousarray(rows, dtype=np.float64)
        if rows.ndim != 2 or rows.shape[1] != self.width:
            raise ValidationError(f"rows of shape {rows.shape} do not match width {self.width}")
        if not rows.shape[0]:
            return self
        prefix0 = self.log_prefix
        alpha, rn, rb, hist, emit = _advance(self.alpha, self._labels, rows, self.blank_id, prefix0)
        self.alpha = alpha
        self._rn = np.concatenate([self._rn, rn])
        self._rb = np.concatenate([self._rb, rb])
        self._hist = np.concatenate([self._hist, hist])
        self._emit = np.concatenate([self._emit, emit])
        return self

    def _start_blank(self) -> float:
        return 0.0 if not self._labels.size else NEG_INF

    def child_scores(self, rows: np.ndarray) -> np.ndarray:
        """Log prefix probability of every one-token extension over ``rows``.

        ``rows`` must be exactly the frames this scorer has consumed. The
        blank column scores ``-inf``.
        """
        rows = np.ascontiguousarray(rows, dtype=np.float64)
        self._check_rows(rows)
        last = int(self._labels[-1]) if self._labels.size else -1
        return _child_scores(self._rn, self._rb, self._start_blank(), rows, last, self.blank_id)

    def child(self, token: int, rows: np.ndarray) -> "PrefixScorer":
        rows = np.ascontiguousarray(rows, dtype=np.float64)
        self._check_rows(rows)
        if token == self.blank_id:
            raise ValidationError("cannot extend a prefix with the blank")
        same = bool(self._labels.size) and int(self._labels[-1]) == token
        rn, rb, hist, emit = _child(self._rn, self._rb, self._start_blank(), rows,
                                    int(token), self.blank_id, same)
        tail = np.array([rn[-1], rb[-1]]) if rows.shape[0] else np.array([NEG_INF, NEG_INF])
        alpha = np.concatenate([self.alpha, tail])
        labels = np.append(self._labels, token)
        return PrefixScorer(labels, self.width, self.blank_id, alpha, rn, rb, hist, emit)

    def _check_rows(self, rows: np.ndarray) -> None:
        if rows.ndim != 2 or rows.shape[1] != self.width:
            raise ValidationError(f"rows of shape {rows.shape} do not match width {self.width}")
        if rows.shape[0] != self.t:
            raise ValidationError(f"scorer consumed {self.t} frames, got {rows.shape[0]} rows")


def prefix_scorer_init(prefix: Sequence[int], lattice: CtcLattice,
                       blank_id: int | None = None) -> PrefixScorer:
    blank = _resolve_blank(lattice.width, blank_id)
    arr = _check_labels(prefix, lattice.width, blank)
    if not arr.size:
        raise ValidationError("prefix must be non-empty")
    return PrefixScorer._fresh(arr, lattice.width, blank).extend_rows(lattice.log_probs)


def prefix_scorer_extend(state: PrefixScorer, row: np.ndarray) -> PrefixScorer:
    return state.extend(row)


def prefix_logprob(lattice: CtcLattice, prefix: Sequence[int], t: int,
                   blank_id: int | None = None) -> float:
    """Prefix log-probability of ``prefix`` using the first ``t`` frames."""
    if not 1 <= t <= lattice.frames:
        raise BoundsError(f"t={t} outside 1..{lattice.frames}")
    blank = _resolve_blank(lattice.width, blank_id)
    arr = _check_labels(prefix, lattice.width, blank)
    if not arr.size:
        return 0.0
    scorer = PrefixScorer._fresh(arr, lattice.width, blank)
    scorer.extend_rows(lattice.log_probs[:t])
    return float(scorer.history[t - 1])


def best_prefix_frame(lattice: CtcLattice, prefix: Sequence[int], from_frame: int = 0,
                      blank_id: int | None = None, score: str = "prefix") -> int:
    """Frame in ``[from_frame, T)`` that maximizes the alignment score.

    ``score="prefix"`` maximizes the prefix probability itself;
    ``score="increment"`` maximizes the mass completing the prefix at that
    frame. The prefix probability never decreases with ``t``, so on noisy
    lattices only the increment localizes the final label. Ties go to the
    earliest frame.
    """
    if score not in ("prefix", "increment"):
        raise ValueError(f"unknown alignment score {score!r}")
    if not 0 <= from_frame < lattice.frames:
        raise BoundsError(f"from_frame={from_frame} outside 0..{lattice.frames - 1}")
    scorer = prefix_scorer_init(prefix, lattice, blank_id)
    values = (scorer.history if score == "prefix" else scorer.increments)[from_frame:]
    best = int(np.argmax(values))
    if values[best] == NEG_INF:
        raise AlignmentNotFound(f"prefix of length {len(prefix)} infeasible in window")
    return from_frame + best

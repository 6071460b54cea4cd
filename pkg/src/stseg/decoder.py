"""Incremental blockwise beam search with joint decoder + CTC prefix scoring."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from stseg.ctc import PrefixScorer, collapse
from stseg.lattice import (
    NORM_TOL,
    BoundsError,
    CtcLattice,
    SegmentBoundary,
    SpeechBlock,
    ValidationError,
    logsumexp,
)

NEG_INF = -np.inf
DEFAULT_BEAM = 6
DEFAULT_CTC_WEIGHT = 0.3


class StreamError(RuntimeError):
    """Blocks fed out of order."""


@dataclass
class CallCounters:
    encode: int = 0
    decode: int = 0

    def as_dict(self) -> dict:
        return {"encode": self.encode, "decode": self.decode}


class ModelBackend(Protocol):
    """What the decoder needs from a speech translation model.

    ``decoder_step`` is batched over the beam: one call scores the next token
    for every prefix and counts as one decode step. Its output has the
    lattice width; the blank column carries end-of-sequence.
    """

    width: int
    blank_id: int
    counters: CallCounters

    def encode_block(self, block: SpeechBlock) -> tuple[np.ndarray, np.ndarray]: ...

    def decoder_step(self, prefixes: Sequence[Sequence[int]], states: np.ndarray) -> np.ndarray: ...

    def reset_segment(self) -> None: ...


def interpolate(dec: np.ndarray | float, ctc: np.ndarray | float, weight: float):
    """``(1 - w) * dec + w * ctc`` with the degenerate weights kept exact."""
    if weight <= 0.0:
        return dec
    if weight >= 1.0:
        return ctc
    return (1.0 - weight) * np.asarray(dec) + weight * np.asarray(ctc)


@dataclass
class Hypothesis:
    tokens: tuple[int, ...]
    dec_logprob: float
    ctc_prefix_logprob: float
    joint_score: float
    delays_ms: tuple[float, ...] = ()
    scorer: PrefixScorer | None = field(default=None, repr=False, compare=False)


@dataclass
class BeamConfig:
    beam_width: int = DEFAULT_BEAM
    ctc_weight: float = DEFAULT_CTC_WEIGHT

    def __post_init__(self) -> None:
        if self.beam_width < 1:
            raise ValidationError("beam width must be at least 1")
        if not 0.0 <= self.ctc_weight <= 1.0:
            raise ValidationError("ctc weight must lie in [0, 1]")


@dataclass
class DecodeSession:
    """Search state for the current segment.

    Token sequences are segment-local: the decoder context starts empty at
    every cut. ``start_frame`` is the global index of the first frame.
    """

    width: int
    blank_id: int
    frame_duration_ms: float
    start_frame: int = 0
    states: np.ndarray = None
    rows: np.ndarray = None
    beam: list[Hypothesis] = field(default_factory=list)
    finalized: list[int] = field(default_factory=list)
    delays_ms: list[float] = field(default_factory=list)
    next_block: int = 0
    now_ms: float = 0.0

    def __post_init__(self) -> None:
        if self.rows is None:
            self.rows = np.zeros((0, self.width))
        if self.states is None:
            self.states = np.zeros(0, dtype=np.int64)
        if not self.beam:
            root = PrefixScorer.root(self.width, self.blank_id)
            self.beam = [Hypothesis((), 0.0, 0.0, 0.0, (), root)]

    @property
    def frames(self) -> int:
        return self.rows.shape[0]

    @property
    def frame_horizon(self) -> int:
        return self.start_frame + self.frames

    @property
    def lattice(self) -> CtcLattice:
        return CtcLattice(self.rows, self.frame_duration_ms)

    @property
    def best(self) -> Hypothesis:
        return self.beam[0]


def new_session(backend: ModelBackend, frame_duration_ms: float, start_frame: int = 0,
                next_block: int = 0, now_ms: float = 0.0) -> DecodeSession:
    return DecodeSession(backend.width, backend.blank_id, frame_duration_ms,
                         start_frame=start_frame, next_block=next_block, now_ms=now_ms)


def session_feed_block(session: DecodeSession, block: SpeechBlock,
                       backend: ModelBackend) -> DecodeSession:
    """Encode one block and append its frames; emits nothing."""
    if block.block_index != session.next_block:
        raise StreamError(f"expected block {session.next_block}, got {block.block_index}")
    session.next_block += 1
    if block.feature_frames == 0:
        return session
    states, rows = backend.encode_block(block)
    rows = np.asarray(rows, dtype=np.float64)
    if len(states) != len(rows):
        raise ValidationError("backend returned unequal state and lattice frame counts")
    if rows.ndim != 2 or rows.shape[1] != session.width:
        raise ValidationError(f"backend lattice rows have shape {rows.shape}")
    norms = logsumexp(rows, axis=1)
    if len(rows) and not np.all(np.abs(norms) <= NORM_TOL):
        raise ValidationError("backend lattice rows are not normalized")
    session.states = np.concatenate([session.states, np.asarray(states)])
    session.rows = np.concatenate([session.rows, rows])
    session.now_ms = block.source_end_ms
    return session


class EmissionPolicy(Protocol):
    def target_length(self, session: DecodeSession) -> int: ...

    def stable_length(self, session: DecodeSession) -> int: ...


class CtcBudgetPolicy:
    """Length budget from the greedy CTC path, release on beam agreement.

    The beam is grown to as many tokens as the greedy CTC path over the
    segment holds; a token becomes final once every surviving hypothesis
    carries it.
    """

    def target_length(self, session: DecodeSession) -> int:
        if not session.frames:
            return 0
        path = np.argmax(session.rows, axis=1)
        return len(collapse(path, session.blank_id))

    def stable_length(self, session: DecodeSession) -> int:
        first = session.beam[0].tokens
        n = len(first)
        for hyp in session.beam[1:]:
            k = 0
            for a, b in zip(first, hyp.tokens):
                if a != b:
                    break
                k += 1
            n = min(n, k)
        return min(n, self.target_length(session))


def _sort_beam(beam: list[Hypothesis]) -> list[Hypothesis]:
    return sorted(beam, key=lambda h: (-h.joint_score, -h.dec_logprob))


def _rescore(session: DecodeSession, cfg: BeamConfig, upto: int | None = None) -> None:
    upto = session.frames if upto is None else upto
    for hyp in session.beam:
        sc = hyp.scorer
        if sc.t < upto:
            sc.extend_rows(session.rows[sc.t:upto])
        hyp.ctc_prefix_logprob = sc.log_prefix
        hyp.joint_score = float(interpolate(hyp.dec_logprob, hyp.ctc_prefix_logprob,
                                            cfg.ctc_weight))
    session.beam = _sort_beam(session.beam)


def _expand_once(session: DecodeSession, backend: ModelBackend, cfg: BeamConfig,
                 rows: np.ndarray) -> None:
    beam = session.beam
    dists = np.asarray(backend.decoder_step([h.tokens for h in beam], session.states),
                       dtype=np.float64)
    dec = np.array([h.dec_logprob for h in beam])[:, None] + dists
    ctc = np.stack([h.scorer.child_scores(rows) for h in beam])
    joint = np.asarray(interpolate(dec, ctc, cfg.ctc_weight), dtype=np.float64)
    hyp_idx, tok_idx = np.indices(joint.shape)
    # end-of-sequence (blank column) is never extended mid-stream
    keep = (tok_idx != session.blank_id) & ~np.isnan(joint)
    j, d, hi, ti = joint[keep], dec[keep], hyp_idx[keep], tok_idx[keep]
    order = np.lexsort((ti, hi, -d, -j))[:cfg.beam_width]
    new_beam = []
    for k in order:
        parent = beam[hi[k]]
        c = int(ti[k])
        scorer = parent.scorer.child(c, rows)
        ctc_c = scorer.log_prefix
        new_beam.append(Hypothesis(parent.tokens + (c,), float(d[k]), ctc_c,
                                   float(interpolate(d[k], ctc_c, cfg.ctc_weight)),
                                   parent.delays_ms, scorer))
    session.beam = _sort_beam(new_beam)


def expand_beam(session: DecodeSession, backend: ModelBackend, cfg: BeamConfig,
                policy: EmissionPolicy, upto: int | None = None) -> None:
    """Bring every hypothesis to the policy's target length."""
    upto = session.frames if upto is None else upto
    _rescore(session, cfg, upto)
    if upto != session.frames:
        view = DecodeSession(session.width, session.blank_id, session.frame_duration_ms,
                             session.start_frame, session.states[:upto], session.rows[:upto],
                             session.beam)
        target = policy.target_length(view)
    else:
        target = policy.target_length(session)
    rows = np.ascontiguousarray(session.rows[:upto])
    while len(session.beam[0].tokens) < target:
        _expand_once(session, backend, cfg, rows)


def _commit(session: DecodeSession, tokens: Sequence[int]) -> list[tuple[int, float]]:
    new = [(int(t), session.now_ms) for t in tokens[len(session.finalized):]]
    session.finalized.extend(t for t, _ in new)
    session.delays_ms.extend(d for _, d in new)
    delays = tuple(session.delays_ms)
    for hyp in session.beam:
        hyp.delays_ms = delays
    return new


def finalize_stable(session: DecodeSession, policy: EmissionPolicy) -> list[tuple[int, float]]:
    stable = policy.stable_length(session)
    if stable <= len(session.finalized):
        return []
    return _commit(session, session.beam[0].tokens[:stable])


def incremental_beam_search(session: DecodeSession, backend: ModelBackend,
                            cfg: BeamConfig | None = None,
                            policy: EmissionPolicy | None = None) -> list[tuple[int, float]]:
    """Expand the beam over the frames seen so far and release stable tokens.

    Returns the newly finalized ``(token, delay_ms)`` pairs; finalized
    tokens are never revised.
    """
    cfg = cfg or BeamConfig()
    policy = policy or CtcBudgetPolicy()
    if not session.frames:
        return []
    expand_beam(session, backend, cfg, policy)
    return finalize_stable(session, policy)


@dataclass
class SegmentRecord:
    start_frame: int
    end_frame: int
    tokens: list[int]
    delays_ms: list[float]
    boundary: SegmentBoundary | None = None


def _restart_beam(session: DecodeSession, upto: int) -> None:
    """Rebuild a single hypothesis for the finalized prefix over ``upto`` frames."""
    rows = np.ascontiguousarray(session.rows[:upto])
    scorer = PrefixScorer.root(session.width, session.blank_id).extend_rows(rows)
    for tok in session.finalized:
        scorer = scorer.child(tok, rows)
    best = session.beam[0]
    session.beam = [Hypothesis(tuple(session.finalized), best.dec_logprob, scorer.log_prefix,
                               best.joint_score, tuple(session.delays_ms), scorer)]


def _close(session: DecodeSession, tokens: Sequence[int]) -> list[int]:
    tokens = list(tokens)
    done = session.finalized
    if len(tokens) < len(done) or tokens[:len(done)] != done:
        tokens = list(done)  # finalized output is never retracted
    return tokens


def session_cut(session: DecodeSession, boundary: SegmentBoundary, backend: ModelBackend,
                cfg: BeamConfig | None = None, policy: EmissionPolicy | None = None,
                tokens: Sequence[int] | None = None) -> tuple[SegmentRecord, DecodeSession]:
    """Close the segment after ``boundary.frame`` and open a fresh one.

    Without ``tokens`` the beam is searched over the truncated lattice and
    its best hypothesis becomes the segment output; with ``tokens`` (the
    align policy) that sequence is used instead. Frames after the boundary
    move into the fresh session together with their encoder states.
    """
    cfg = cfg or BeamConfig()
    policy = policy or CtcBudgetPolicy()
    keep = boundary.frame - session.start_frame + 1
    if not 0 <= keep <= session.frames:
        raise BoundsError(
            f"boundary frame {boundary.frame} outside segment "
            f"[{session.start_frame}, {session.frame_horizon})")
    if tokens is None:
        if any(h.scorer.t > keep for h in session.beam):
            _restart_beam(session, keep)
        expand_beam(session, backend, cfg, policy, upto=keep)
        tokens = session.beam[0].tokens
    _commit(session, _close(session, tokens))
    record = SegmentRecord(session.start_frame, boundary.frame, list(session.finalized),
                           list(session.delays_ms), boundary)
    backend.reset_segment()
    fresh = DecodeSession(session.width, session.blank_id, session.frame_duration_ms,
                          start_frame=boundary.frame + 1, states=session.states[keep:],
                          rows=session.rows[keep:], next_block=session.next_block,
                          now_ms=session.now_ms)
    return record, fresh


def finish_session(session: DecodeSession, backend: ModelBackend,
                   cfg: BeamConfig | None = None,
                   policy: EmissionPolicy | None = None) -> SegmentRecord:
    """End of stream: the best hypothesis becomes final."""
    cfg = cfg or BeamConfig()
    policy = policy or CtcBudgetPolicy()
    if session.frames:
        expand_beam(session, backend, cfg, policy)
    _commit(session, _close(session, session.beam[0].tokens))
    return SegmentRecord(session.start_frame, session.frame_horizon - 1,
                         list(session.finalized), list(session.delays_ms), None)

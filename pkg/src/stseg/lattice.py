"""Vocabulary, CTC lattice and streaming bookkeeping types."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

NEG_INF = -np.inf
NORM_TOL = 1e-6
DEFAULT_FRAME_MS = 40.0
SENTENCE_MARKS = (".", "!", "?")
WORD_MARKER = "▁"


class ValidationError(ValueError):
    """Input violates a documented invariant."""


class BoundsError(IndexError):
    """Frame index outside the lattice."""


def logsumexp(a: np.ndarray, axis: int | None = None) -> np.ndarray | float:
    """Max-shifted log-sum-exp that maps all ``-inf`` input to ``-inf``."""
    a = np.asarray(a, dtype=np.float64)
    if a.size == 0:
        if axis is None:
            return NEG_INF
        shape = list(a.shape)
        del shape[axis]
        return np.full(shape, NEG_INF)
    m = np.max(a, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - m), axis=axis, keepdims=True)) + m
    if axis is None:
        return float(out.reshape(()))
    return np.squeeze(out, axis=axis)


def is_sentence_punct(surface: str, marks: Sequence[str] = SENTENCE_MARKS,
                      marker: str = WORD_MARKER) -> bool:
    stripped = surface.replace(marker, "") if marker else surface
    return bool(stripped) and stripped.endswith(tuple(marks))


@dataclass(frozen=True)
class Vocabulary:
    """Token surfaces plus the CTC blank.

    ``surfaces`` includes the blank at ``blank_id``; ``size`` counts the
    real tokens only, so lattices over this vocabulary have ``size + 1``
    columns.
    """

    surfaces: tuple[str, ...]
    blank_id: int
    punct_ids: frozenset[int]
    marker: str = WORD_MARKER

    def __post_init__(self) -> None:
        if any(not s for s in self.surfaces):
            raise ValidationError("empty token surface")
        if len(set(self.surfaces)) != len(self.surfaces):
            raise ValidationError("duplicate token surface")
        if not 0 <= self.blank_id < len(self.surfaces):
            raise ValidationError(f"blank_id {self.blank_id} out of range")
        if self.blank_id in self.punct_ids:
            raise ValidationError("blank cannot be punctuation")
        for i in self.punct_ids:
            if not 0 <= i < len(self.surfaces):
                raise ValidationError(f"punctuation id {i} out of range")
            if not is_sentence_punct(self.surfaces[i], SENTENCE_MARKS, self.marker):
                raise ValidationError(f"token {self.surfaces[i]!r} is not sentence punctuation")

    @property
    def size(self) -> int:
        return len(self.surfaces) - 1

    @property
    def width(self) -> int:
        return len(self.surfaces)

    def index(self, surface: str) -> int:
        return self.surfaces.index(surface)

    def encode(self, surfaces: Iterable[str]) -> list[int]:
        lookup = {s: i for i, s in enumerate(self.surfaces)}
        return [lookup[s] for s in surfaces]

    def is_punct(self, token: int) -> bool:
        return token in self.punct_ids

    def detokenize(self, tokens: Iterable[int]) -> str:
        """Join surfaces into text.

        Surfaces carrying the word marker start a new word; sentence
        punctuation and marker-less surfaces attach to the previous word
        when the vocabulary uses markers at all, otherwise every token is a
        word and punctuation attaches to its left neighbour.
        """
        uses_marker = bool(self.marker) and any(self.marker in s for s in self.surfaces)
        out: list[str] = []
        for tok in tokens:
            s = self.surfaces[tok]
            if uses_marker:
                if s.startswith(self.marker):
                    out.append(" " + s[len(self.marker):])
                else:
                    out.append(s)
            elif tok in self.punct_ids and out:
                out.append(s)
            else:
                out.append(" " + s)
        return "".join(out).strip()


def make_vocabulary(surfaces: Sequence[str], blank_surface: str = "<blank>",
                    marks: Sequence[str] = SENTENCE_MARKS,
                    marker: str = WORD_MARKER) -> Vocabulary:
    """Build a vocabulary with the blank appended as the final index."""
    surfaces = list(surfaces)
    if len(set(surfaces)) != len(surfaces):
        raise ValidationError("duplicate token surface")
    if blank_surface in surfaces:
        raise ValidationError(f"blank surface {blank_surface!r} collides with a token")
    punct = frozenset(i for i, s in enumerate(surfaces) if is_sentence_punct(s, marks, marker))
    return Vocabulary(tuple(surfaces) + (blank_surface,), len(surfaces), punct, marker)


@dataclass(frozen=True, eq=False)
class CtcLattice:
    """Per-frame natural-log posteriors, ``T x (V + 1)``, rows normalized."""

    log_probs: np.ndarray
    frame_duration_ms: float = DEFAULT_FRAME_MS

    def __post_init__(self) -> None:
        lp = np.array(self.log_probs, dtype=np.float64, copy=True)
        if lp.ndim != 2:
            raise ValidationError(f"lattice must be 2-D, got shape {lp.shape}")
        if not self.frame_duration_ms > 0:
            raise ValidationError("frame_duration_ms must be positive")
        if np.isnan(lp).any():
            raise ValidationError("lattice contains NaN")
        if len(lp):
            if (lp > NORM_TOL).any():
                row = int(np.argwhere(lp > NORM_TOL)[0, 0])
                raise ValidationError(f"row {row}: log-probability above zero")
            norms = logsumexp(lp, axis=1)
            bad = np.flatnonzero(~(np.abs(norms) <= NORM_TOL))
            if bad.size:
                row = int(bad[0])
                raise ValidationError(
                    f"row {row} not normalized: logsumexp = {norms[row]:.3e}")
        lp.setflags(write=False)
        object.__setattr__(self, "log_probs", lp)

    @classmethod
    def empty(cls, width: int, frame_duration_ms: float = DEFAULT_FRAME_MS) -> "CtcLattice":
        return cls(np.zeros((0, width)), frame_duration_ms)

    @property
    def frames(self) -> int:
        return self.log_probs.shape[0]

    @property
    def width(self) -> int:
        return self.log_probs.shape[1]

    @property
    def duration_ms(self) -> float:
        return self.frames * self.frame_duration_ms

    def __len__(self) -> int:
        return self.frames

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CtcLattice):
            return NotImplemented
        return (self.frame_duration_ms == other.frame_duration_ms
                and self.log_probs.shape == other.log_probs.shape
                and bool(np.array_equal(self.log_probs, other.log_probs)))

    def check_vocabulary(self, vocab: Vocabulary) -> None:
        if self.width != vocab.width:
            raise ValidationError(
                f"lattice has {self.width} columns, vocabulary needs {vocab.width}")


def lattice_slice(lattice: CtcLattice, from_frame: int, to_frame: int) -> CtcLattice:
    if not 0 <= from_frame <= to_frame <= lattice.frames:
        raise BoundsError(
            f"slice [{from_frame}, {to_frame}) outside lattice of {lattice.frames} frames")
    return CtcLattice(lattice.log_probs[from_frame:to_frame], lattice.frame_duration_ms)


def append_lattice(head: CtcLattice, tail: CtcLattice) -> CtcLattice:
    if head.width != tail.width:
        raise ValidationError(f"width mismatch: {head.width} vs {tail.width}")
    if head.frame_duration_ms != tail.frame_duration_ms:
        raise ValidationError("frame duration mismatch")
    if not tail.frames:
        return head
    if not head.frames:
        return tail
    return CtcLattice(np.concatenate([head.log_probs, tail.log_probs]), head.frame_duration_ms)


@dataclass(frozen=True)
class SpeechBlock:
    """A contiguous chunk of source audio, described by its frame span.

    Input frames are taken at ``frame_duration_ms``; the synthetic backends
    work directly at encoder-frame rate.
    """

    block_index: int
    feature_frames: int
    source_start_ms: float
    source_end_ms: float
    frame_duration_ms: float = DEFAULT_FRAME_MS

    def __post_init__(self) -> None:
        if self.feature_frames < 0:
            raise ValidationError("negative frame count")
        span = self.source_end_ms - self.source_start_ms
        if abs(span - self.feature_frames * self.frame_duration_ms) > 1e-6:
            raise ValidationError(
                f"block {self.block_index}: span {span} ms does not match "
                f"{self.feature_frames} frames")

    @property
    def first_frame(self) -> int:
        return int(round(self.source_start_ms / self.frame_duration_ms))

    @property
    def end_frame(self) -> int:
        return self.first_frame + self.feature_frames


def make_blocks(total_frames: int, block_frames: int,
                frame_duration_ms: float = DEFAULT_FRAME_MS) -> list[SpeechBlock]:
    """Cut a stream into gap-free blocks; the last one may be short."""
    if block_frames <= 0:
        raise ValidationError("block_frames must be positive")
    blocks = []
    for i, start in enumerate(range(0, total_frames, block_frames)):
        n = min(block_frames, total_frames - start)
        blocks.append(SpeechBlock(i, n, start * frame_duration_ms,
                                  (start + n) * frame_duration_ms, frame_duration_ms))
    return blocks


class Trigger(str, enum.Enum):
    GREEDY_PUNCT = "greedy_punct"
    ALIGN_PUNCT = "align_punct"
    PAUSE = "pause"
    FIXED = "fixed"
    FORCED_MAX_LEN = "forced_max_len"


@dataclass(frozen=True, order=True)
class SegmentBoundary:
    """A sentence cut after encoder frame ``frame``.

    ``frame`` is the last frame of the closing segment and ``source_ms`` the
    source time of the cut, i.e. the end of that frame.
    """

    frame: int
    source_ms: float = field(compare=False)
    trigger: Trigger = field(compare=False)

    @classmethod
    def at_frame(cls, frame: int, trigger: Trigger,
                 frame_duration_ms: float = DEFAULT_FRAME_MS) -> "SegmentBoundary":
        return cls(frame, (frame + 1) * frame_duration_ms, Trigger(trigger))

    def to_dict(self) -> dict:
        return {"frame": self.frame, "source_ms": self.source_ms, "trigger": self.trigger.value}


def check_monotone(boundaries: Sequence[SegmentBoundary]) -> None:
    for a, b in zip(boundaries, boundaries[1:]):
        if b.frame <= a.frame:
            raise ValidationError(f"boundaries not increasing: {a.frame} then {b.frame}")

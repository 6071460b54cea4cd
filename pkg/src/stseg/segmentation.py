"""Segmentation policies: punctuation-driven (greedy, align) and pause/length baselines."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from stseg.ctc import AlignmentNotFound, best_prefix_frame, greedy_labels
from stseg.lattice import (
    DEFAULT_FRAME_MS,
    CtcLattice,
    SegmentBoundary,
    Trigger,
    ValidationError,
    Vocabulary,
)

POLICIES = ("none", "fixed", "dac", "sim", "greedy", "align")
DEFAULT_MIN_PAUSE_MS = 200.0


@dataclass(frozen=True)
class PauseMask:
    """Per-frame speech activity (True = speech)."""

    speech: np.ndarray
    frame_duration_ms: float = DEFAULT_FRAME_MS

    def __post_init__(self) -> None:
        object.__setattr__(self, "speech", np.asarray(self.speech, dtype=bool))

    def __len__(self) -> int:
        return len(self.speech)

    def pauses(self, min_pause_ms: float = DEFAULT_MIN_PAUSE_MS) -> list[tuple[int, int]]:
        return pause_runs(self.speech, math.ceil(min_pause_ms / self.frame_duration_ms - 1e-9))

    def save(self, path: Path) -> None:
        lines = []
        dur = self.frame_duration_ms
        start = 0
        for i in range(1, len(self.speech) + 1):
            if i == len(self.speech) or self.speech[i] != self.speech[start]:
                kind = "speech" if self.speech[start] else "nonspeech"
                lines.append(f"{start * dur:g}\t{i * dur:g}\t{kind}")
                start = i
        Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")

    @classmethod
    def load(cls, path: Path, frame_duration_ms: float = DEFAULT_FRAME_MS) -> "PauseMask":
        intervals = []
        for n, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3 or parts[2] not in ("speech", "nonspeech"):
                raise ValidationError(f"{path}:{n}: expected start<TAB>end<TAB>speech|nonspeech")
            intervals.append((float(parts[0]), float(parts[1]), parts[2] == "speech"))
        prev = 0.0
        for s, e, _ in intervals:
            if abs(s - prev) > 1e-6 or e < s:
                raise ValidationError(f"{path}: intervals must tile the stream without gaps")
            prev = e
        n_frames = int(round(prev / frame_duration_ms))
        speech = np.zeros(n_frames, dtype=bool)
        centers = (np.arange(n_frames) + 0.5) * frame_duration_ms
        for s, e, sp in intervals:
            speech[(centers >= s) & (centers < e)] = sp
        return cls(speech, frame_duration_ms)


def pause_runs(speech: np.ndarray, min_frames: int) -> list[tuple[int, int]]:
    """Maximal non-speech runs ``(first, last)`` of at least ``min_frames`` frames."""
    quiet = ~np.asarray(speech, dtype=bool)
    if not quiet.size:
        return []
    edges = np.diff(np.concatenate([[0], quiet.astype(np.int8), [0]]))
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1) - 1
    return [(int(a), int(b)) for a, b in zip(starts, ends) if b - a + 1 >= max(min_frames, 1)]


@dataclass(frozen=True)
class PolicyConfig:
    kind: str = "greedy"
    min_len_ms: float = 2000.0
    max_len_ms: float = 20000.0
    segment_len_ms: float = 20000.0
    min_pause_ms: float = DEFAULT_MIN_PAUSE_MS
    alignment_score: str = "increment"

    def __post_init__(self) -> None:
        if self.kind not in POLICIES:
            raise ValidationError(f"unknown policy {self.kind!r}")
        if not self.min_len_ms > 0:
            raise ValidationError("min_len_ms must be positive")
        if self.kind == "sim" and not self.min_len_ms < self.max_len_ms:
            raise ValidationError("SIM needs min_len_ms < max_len_ms")
        if self.kind in ("dac", "sim") and not self.max_len_ms > 0:
            raise ValidationError("max_len_ms must be positive")
        if self.kind == "fixed" and not self.segment_len_ms > 0:
            raise ValidationError("segment_len_ms must be positive")
        if self.alignment_score not in ("prefix", "increment"):
            raise ValidationError(f"unknown alignment score {self.alignment_score!r}")


def fixed_length_boundaries(duration_ms: float, segment_len_ms: float,
                            frame_duration_ms: float = DEFAULT_FRAME_MS) -> list[SegmentBoundary]:
    """Cuts at every whole multiple of ``segment_len_ms`` inside the stream."""
    if segment_len_ms <= 0:
        raise ValidationError("segment length must be positive")
    out = []
    k = 1
    while k * segment_len_ms < duration_ms - 1e-9:
        ms = k * segment_len_ms
        out.append(SegmentBoundary(int(round(ms / frame_duration_ms)) - 1, ms, Trigger.FIXED))
        k += 1
    return out


@dataclass
class DacResult:
    boundaries: list[SegmentBoundary]
    flagged: list[tuple[int, int]]  # over-long segments without a usable pause, [start, end)


def dac_split(mask: PauseMask, max_len_ms: float,
              min_pause_ms: float = DEFAULT_MIN_PAUSE_MS) -> DacResult:
    """Divide and conquer: split every over-long segment at the midpoint of its longest pause.

    A pause belongs to a segment only if it lies entirely inside it, so the
    halves of an already used pause are never split again.
    """
    if not len(mask):
        raise ValidationError("empty mask")
    runs = mask.pauses(min_pause_ms)
    dur = mask.frame_duration_ms
    cuts: list[int] = []
    flagged: list[tuple[int, int]] = []
    stack = [(0, len(mask))]
    while stack:
        s, e = stack.pop()
        if (e - s) * dur <= max_len_ms + 1e-9:
            continue
        inside = [(b - a, -a, a, b) for a, b in runs if a >= s and b <= e - 1 and (a + b) // 2 < e - 1]
        if not inside:
            flagged.append((s, e))
            continue
        _, _, a, b = max(inside)
        mid = (a + b) // 2
        cuts.append(mid)
        stack.append((mid + 1, e))
        stack.append((s, mid + 1))
    return DacResult([SegmentBoundary.at_frame(c, Trigger.PAUSE, dur) for c in sorted(cuts)],
                     sorted(flagged))


def dac_boundaries(mask: PauseMask, max_len_ms: float,
                   min_pause_ms: float = DEFAULT_MIN_PAUSE_MS) -> list[SegmentBoundary]:
    return dac_split(mask, max_len_ms, min_pause_ms).boundaries


def _len_frames(cfg: PolicyConfig, dur: float) -> tuple[int, int]:
    lo = math.ceil(cfg.min_len_ms / dur - 1e-9)
    hi = math.floor(cfg.max_len_ms / dur + 1e-9)
    if lo > hi or hi < 1:
        raise ValidationError("SIM window holds no whole frame count")
    return max(lo, 1), hi


def sim_next_boundary(speech_prefix: np.ndarray, seg_start: int, cfg: PolicyConfig,
                      frame_duration_ms: float = DEFAULT_FRAME_MS) -> SegmentBoundary | None:
    """Streaming SIM decision given the speech mask observed so far.

    Nothing is decided until ``max_len`` has elapsed since ``seg_start``; then
    the cut goes to the midpoint of the longest pause whose midpoint keeps the
    segment within ``[min_len, max_len]``, or to ``max_len`` itself.
    """
    lo, hi = _len_frames(cfg, frame_duration_ms)
    if len(speech_prefix) - seg_start < hi:
        return None
    window = np.asarray(speech_prefix[seg_start:seg_start + hi], dtype=bool)
    min_pause = math.ceil(cfg.min_pause_ms / frame_duration_ms - 1e-9)
    best = None
    for a, b in pause_runs(window, min_pause):
        mid = (a + b) // 2
        if lo <= mid + 1 <= hi and (best is None or b - a > best[1] - best[0]):
            best = (a, b)
    if best is None:
        return SegmentBoundary.at_frame(seg_start + hi - 1, Trigger.FORCED_MAX_LEN, frame_duration_ms)
    mid = seg_start + (best[0] + best[1]) // 2
    return SegmentBoundary.at_frame(mid, Trigger.PAUSE, frame_duration_ms)


def sim_boundaries(mask: PauseMask, cfg: PolicyConfig) -> list[SegmentBoundary]:
    """Run SIM over a whole mask as if it arrived frame by frame."""
    out = []
    start = 0
    n = len(mask)
    while True:
        b = sim_next_boundary(mask.speech, start, cfg, mask.frame_duration_ms)
        if b is None or b.frame >= n - 1:
            break
        out.append(b)
        start = b.frame + 1
    return out


def greedy_punct_step(lattice: CtcLattice, start_frame: int, cfg: PolicyConfig,
                      vocab: Vocabulary) -> SegmentBoundary | None:
    """Cut after the last frame whose greedy label is sentence punctuation.

    ``lattice`` holds the frames since the previous boundary and
    ``start_frame`` is the global index of its first row.
    """
    if not lattice.frames:
        return None
    labels = greedy_labels(lattice)
    hits = np.flatnonzero(np.isin(labels, sorted(vocab.punct_ids)))
    if not hits.size:
        return None
    t = int(hits[-1])
    if (t + 1) * lattice.frame_duration_ms < cfg.min_len_ms:
        return None
    return SegmentBoundary.at_frame(start_frame + t, Trigger.GREEDY_PUNCT, lattice.frame_duration_ms)


def align_punct_step(tokens: Sequence[int], lattice: CtcLattice, start_frame: int,
                     cfg: PolicyConfig, vocab: Vocabulary) -> tuple[SegmentBoundary, int] | None:
    """Align the hypothesis up to its last punctuation token onto the lattice.

    Returns the boundary and the number of hypothesis tokens that close the
    segment, or None when there is no punctuation, no feasible alignment, or
    the aligned frame is closer than ``min_len`` to the previous boundary.
    """
    idx = [i for i, tok in enumerate(tokens) if tok in vocab.punct_ids]
    if not idx or not lattice.frames:
        return None
    n = idx[-1] + 1
    try:
        b = best_prefix_frame(lattice, tokens[:n], 0, vocab.blank_id, cfg.alignment_score)
    except AlignmentNotFound:
        return None
    if (b + 1) * lattice.frame_duration_ms < cfg.min_len_ms:
        return None
    return SegmentBoundary.at_frame(start_frame + b, Trigger.ALIGN_PUNCT, lattice.frame_duration_ms), n

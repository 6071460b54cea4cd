"""Brute-force references used by the tests: exhaustive paths, cut vectors, recursions."""

from __future__ import annotations

import itertools
import math
from typing import Sequence

import numpy as np


def collapse_path(path: Sequence[int], blank: int) -> tuple[int, ...]:
    out = []
    prev = None
    for p in path:
        if p != prev and p != blank:
            out.append(p)
        prev = p
    return tuple(out)


def path_mass(probs: np.ndarray, t: int, accept) -> float:
    """Sum of path probabilities over the first ``t`` frames whose collapse passes ``accept``."""
    width = probs.shape[1]
    blank = width - 1
    total = 0.0
    for path in itertools.product(range(width), repeat=t):
        if accept(collapse_path(path, blank)):
            total += math.prod(probs[u, path[u]] for u in range(t))
    return total


def forward_prob(probs: np.ndarray, labels: Sequence[int]) -> float:
    labels = tuple(labels)
    return path_mass(probs, probs.shape[0], lambda s: s == labels)


def prefix_prob(probs: np.ndarray, prefix: Sequence[int], t: int) -> float:
    prefix = tuple(prefix)
    return path_mass(probs, t, lambda s: s[:len(prefix)] == prefix)


def random_probs(rng: np.random.Generator, t: int, width: int, sparsity: float = 0.2) -> np.ndarray:
    p = rng.random((t, width))
    p[rng.random((t, width)) < sparsity] = 0.0
    p[np.arange(t), rng.integers(0, width, t)] += 0.05  # keep every row non-empty
    return p / p.sum(axis=1, keepdims=True)


def edit_distance(a: Sequence, b: Sequence) -> int:
    d = np.zeros((len(a) + 1, len(b) + 1), dtype=int)
    d[:, 0] = np.arange(len(a) + 1)
    d[0, :] = np.arange(len(b) + 1)
    for i in range(1, len(a) + 1):
        for j in range(1, len(b) + 1):
            d[i, j] = min(d[i - 1, j] + 1, d[i, j - 1] + 1, d[i - 1, j - 1] + (a[i - 1] != b[j - 1]))
    return int(d[-1, -1])


def best_cuts(hyp: Sequence[str], refs: Sequence[Sequence[str]]) -> tuple[int, tuple[int, ...]]:
    """Minimum total distance and the lexicographically first optimal cut vector."""
    n = len(hyp)
    best = None
    for cuts in itertools.combinations_with_replacement(range(n + 1), len(refs) - 1):
        bounds = (0,) + cuts + (n,)
        cost = sum(edit_distance(hyp[a:b], r) for (a, b), r in zip(zip(bounds, bounds[1:]), refs))
        if best is None or cost < best[0]:
            best = (cost, cuts)
    return best


def dac_reference(speech: np.ndarray, max_frames: int, min_pause: int) -> list[int]:
    """Plain recursive divide and conquer; returns the last frame of each closed segment."""
    runs = []
    t = 0
    n = len(speech)
    while t < n:
        if not speech[t]:
            s = t
            while t < n and not speech[t]:
                t += 1
            if t - s >= min_pause:
                runs.append((s, t - 1))
        else:
            t += 1

    def split(s: int, e: int) -> list[int]:
        if e - s <= max_frames:
            return []
        inside = [(a, b) for a, b in runs if a >= s and b <= e - 1 and (a + b) // 2 < e - 1]
        if not inside:
            return []
        longest = max(b - a for a, b in inside)
        a, b = min(r for r in inside if r[1] - r[0] == longest)
        mid = (a + b) // 2
        return split(s, mid + 1) + [mid] + split(mid + 1, e)

    return split(0, n)


def sim_reference(speech: np.ndarray, lo: int, hi: int, min_pause: int) -> list[int]:
    """Offline restatement of the streaming SIM rule over a complete mask."""
    n = len(speech)
    out = []
    start = 0
    while n - start >= hi:
        window = speech[start:start + hi]
        best = None
        t = 0
        while t < hi:
            if not window[t]:
                s = t
                while t < hi and not window[t]:
                    t += 1
                e = t - 1
                mid = (s + e) // 2
                if e - s + 1 >= min_pause and lo <= mid + 1 <= hi:
                    if best is None or e - s > best[1] - best[0]:
                        best = (s, e)
            else:
                t += 1
        cut = start + (hi - 1 if best is None else (best[0] + best[1]) // 2)
        if cut >= n - 1:
            break
        out.append(cut)
        start = cut + 1
    return out

"""Acceptance criteria, one test each; every test records a PASS/FAIL line.

The lines are printed in the pytest terminal summary and when this file is
run directly with ``python tests/test_acceptance.py``.
"""

import time

import numpy as np
import pytest

from oracles import best_cuts, dac_reference, forward_prob, prefix_prob, random_probs, sim_reference
from stseg.ctc import ctc_forward_logprob, prefix_logprob, prefix_scorer_extend, prefix_scorer_init
from stseg.evaluation import TimedHypothesis, average_lagging, corpus_bleu, laal, mwer_resegment
from stseg.harness import RunConfig, cmd_simulate, run_stream, simulate, write_fixtures
from stseg.lattice import CtcLattice
from stseg.segmentation import (
    PauseMask,
    PolicyConfig,
    dac_boundaries,
    fixed_length_boundaries,
    sim_boundaries,
)
from stseg.synth import SynthConfig, generate_corpus, synthetic_vocabulary

RESULTS: list[str] = []


def record(name: str, ok: bool, detail: str) -> None:
    RESULTS.append(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    assert ok, detail


def _lat(probs):
    with np.errstate(divide="ignore"):
        return CtcLattice(np.log(probs))


@pytest.fixture(scope="module")
def vocab():
    return synthetic_vocabulary()


@pytest.fixture(scope="module")
def sharp20(vocab):
    return generate_corpus(SynthConfig(n_streams=20, sharpness=1.0, seed=101), vocab)


def test_ctc_oracle_equivalence():
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(250):
        t = int(rng.integers(1, 7))
        width = int(rng.integers(2, 5))
        probs = random_probs(rng, t, width)
        prefix = [int(x) for x in rng.integers(0, width - 1, int(rng.integers(1, 4)))]
        L = _lat(probs)
        worst = max(worst, abs(np.exp(ctc_forward_logprob(L, prefix)) - forward_prob(probs, prefix)))
        for k in range(1, t + 1):
            worst = max(worst, abs(np.exp(prefix_logprob(L, prefix, k)) - prefix_prob(probs, prefix, k)))
    elapsed = time.perf_counter() - t0
    record("CTC oracle equivalence", worst < 1e-9 and elapsed < 60,
           f"250 lattices, max abs error {worst:.2e}, {elapsed:.1f} s")


def test_incremental_equals_batch():
    rng = np.random.default_rng(77)
    same = 0
    for _ in range(100):
        t = int(rng.integers(1, 30))
        width = int(rng.integers(2, 6))
        probs = random_probs(rng, t, width)
        prefix = [int(x) for x in rng.integers(0, width - 1, int(rng.integers(1, 5)))]
        L = _lat(probs)
        batch = prefix_scorer_init(prefix, L)
        inc = prefix_scorer_init(prefix, CtcLattice(L.log_probs[:1]))
        for row in L.log_probs[1:]:
            inc = prefix_scorer_extend(inc, row)
        same += (inc.history.tobytes() == batch.history.tobytes()
                 and inc.increments.tobytes() == batch.increments.tobytes()
                 and inc.alpha.tobytes() == batch.alpha.tobytes())
    record("Incremental scorer equals batch", same == 100, f"{same}/100 byte-identical")


def test_greedy_fidelity(vocab, sharp20):
    sharp, _ = simulate(RunConfig(policy="greedy"), vocab, sharp20)
    noisy_corpus = generate_corpus(SynthConfig(n_streams=20, sharpness=0.8, seed=102), vocab)
    noisy, _ = simulate(RunConfig(policy="greedy"), vocab, noisy_corpus)
    f_sharp = sharp.metrics["boundaries"]["tol0"]["f1"]
    f_noisy = noisy.metrics["boundaries"]["tol2"]["f1"]
    record("Greedy boundary fidelity", f_sharp == 1.0 and f_noisy >= 0.95,
           f"F1 {f_sharp:.4f} at tol 0 (beta 1), {f_noisy:.4f} at tol 2 (beta 0.8)")


def test_align_fidelity(vocab, sharp20):
    report, _ = simulate(RunConfig(policy="align"), vocab, sharp20)
    within = total = 0
    by_id = {fx.stream_id: fx for fx in sharp20}
    for rec in report.records:
        truth = by_id[rec["stream_id"]].truth.boundary_frames
        pred = [s["boundary"]["frame"] for s in rec["segments"] if s["boundary"]]
        total += len(truth)
        within += sum(any(abs(p - g) <= 2 for p in pred) for g in truth)
    bleu = report.metrics["bleu"]
    record("Align boundary fidelity", within == total and abs(bleu - 100.0) < 1e-9,
           f"{within}/{total} sentences within 2 frames, BLEU {bleu:.2f}")


def test_greedy_has_no_call_overhead(vocab, sharp20):
    mismatched = []
    for fx in sharp20[:4]:
        a = run_stream(fx, vocab, RunConfig(policy="greedy")).calls
        b = run_stream(fx, vocab, RunConfig(policy="none")).calls
        if a != b:
            mismatched.append((fx.stream_id, a, b))
    record("Greedy call counts equal translation-only", not mismatched,
           f"4 streams, mismatches: {mismatched or 'none'}")


def test_baseline_properties():
    rng = np.random.default_rng(5)
    sim_bad = 0
    for _ in range(1000):
        n = int(rng.integers(1, 600))
        speech = rng.random(n) < rng.uniform(0.3, 0.95)
        lo = int(rng.integers(5, 60))
        hi = lo + int(rng.integers(1, 100))
        cfg = PolicyConfig("sim", min_len_ms=lo * 40.0, max_len_ms=hi * 40.0, min_pause_ms=120.0)
        cuts = [b.frame for b in sim_boundaries(PauseMask(speech), cfg)]
        lens = np.diff([-1] + cuts)
        if cuts != [int(c) for c in sim_reference(speech, lo, hi, 3)] or ((lens < lo) | (lens > hi)).any():
            sim_bad += 1
    dac_bad = 0
    for _ in range(500):
        n = int(rng.integers(1, 101))
        speech = rng.random(n) < rng.uniform(0.2, 0.9)
        max_frames = int(rng.integers(1, 60))
        got = [b.frame for b in dac_boundaries(PauseMask(speech), max_frames * 40.0, 80.0)]
        dac_bad += got != [int(c) for c in dac_reference(speech, max_frames, 2)]
    fixed_bad = 0
    for duration in rng.uniform(0, 200_000, 200):
        seg = float(rng.choice([2000.0, 4000.0, 20000.0]))
        ms = [b.source_ms for b in fixed_length_boundaries(float(duration), seg)]
        fixed_bad += ms != [k * seg for k in range(1, len(ms) + 1)] or bool(ms and ms[-1] >= duration)
    record("Baseline segmenters", sim_bad == dac_bad == fixed_bad == 0,
           f"SIM {1000 - sim_bad}/1000 masks, DAC {500 - dac_bad}/500, fixed {200 - fixed_bad}/200")


def test_evaluation_identities():
    rng = np.random.default_rng(9)
    words = list("abcd")
    refs = [["a", "b"], ["c", "d", "a"], ["b"]]
    pair = mwer_resegment(sum(refs, []), refs)
    ok = pair.distance == 0 and pair.hyp_segments == refs
    exhaustive = 0
    for _ in range(200):
        hyp = list(rng.choice(words, int(rng.integers(0, 13))))
        rs = [list(rng.choice(words, int(rng.integers(0, 5)))) for _ in range(int(rng.integers(1, 5)))]
        cost, cuts = best_cuts(hyp, rs)
        got = mwer_resegment(hyp, rs)
        exhaustive += got.distance == cost and tuple(got.cuts) == cuts
    corpus = ["the cat sat .", "on the mat", "x"]
    bleu = corpus_bleu(corpus, corpus).score
    single = laal(TimedHypothesis([3000.0], 3000.0), 1)
    al_same = 0
    for _ in range(100):
        n = int(rng.integers(1, 20))
        d = sorted(rng.uniform(0, 6000, n))
        hyp = TimedHypothesis(list(d), 5000.0)
        al_same += abs(laal(hyp, n) - average_lagging(hyp, n)) < 1e-9
    ok = ok and exhaustive == 200 and abs(bleu - 100.0) < 1e-9 and single == 3000.0 and al_same == 100
    record("Evaluation identities", ok,
           f"mwer identity {pair.distance == 0}, exhaustive {exhaustive}/200, BLEU(x,x) {bleu:.9f}, "
           f"single-token LAAL {single:g}, LAAL=AL {al_same}/100")


def _ordering(vocab, seed):
    corpus = generate_corpus(SynthConfig(n_streams=8, sharpness=0.8, mid_pause_rate=0.3,
                                         seed=seed), vocab)
    greedy, _ = simulate(RunConfig(policy="greedy"), vocab, corpus)
    align, _ = simulate(RunConfig(policy="align"), vocab, corpus)
    mean = greedy.metrics["mean_segment_ms"]
    fixed, _ = simulate(RunConfig(policy="fixed", max_len_ms=mean), vocab, corpus)
    sim, _ = simulate(RunConfig(policy="sim", min_len_ms=mean - 1250.0, max_len_ms=mean + 1250.0),
                      vocab, corpus)
    return {k: r.metrics["bleu"] for k, r in
            (("greedy", greedy), ("align", align), ("fixed", fixed), ("sim", sim))}


def test_qualitative_ordering(vocab):
    rows = []
    ok = True
    for seed in (201, 202, 203):
        b = _ordering(vocab, seed)
        ok &= min(b["greedy"], b["align"]) >= max(b["fixed"], b["sim"])
        rows.append(f"seed {seed}: greedy {b['greedy']:.1f} align {b['align']:.1f} "
                    f"fixed {b['fixed']:.1f} sim {b['sim']:.1f}")
    record("Punctuation policies beat length/pause baselines", ok, "; ".join(rows))


def test_determinism(vocab, tmp_path):
    corpus = generate_corpus(SynthConfig(n_streams=3, sharpness=0.8, seed=301), vocab)
    write_fixtures(tmp_path / "fx", corpus, vocab, SynthConfig(n_streams=3, sharpness=0.8, seed=301))
    cfg = RunConfig(policy="align", fixtures=str(tmp_path / "fx"))
    outs = []
    for name in ("a", "b"):
        cmd_simulate(RunConfig.from_dict(dict(cfg.to_dict(), out=str(tmp_path / name))))
        outs.append((tmp_path / name / "report.jsonl").read_bytes())
    record("Deterministic reports", outs[0] == outs[1], f"{len(outs[0])} bytes, identical: {outs[0] == outs[1]}")


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))

"""Simulation harness: fixture trees, per-stream streaming runs, reports and sweeps."""

from __future__ import annotations

import csv
import hashlib
import itertools
import json
import math
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from stseg.container import ContainerError, load_lattice_file, save_lattice, write_vocabulary
from stseg.decoder import (
    BeamConfig,
    CtcBudgetPolicy,
    SegmentRecord,
    expand_beam,
    finalize_stable,
    finish_session,
    incremental_beam_search,
    new_session,
    session_cut,
    session_feed_block,
)
from stseg.evaluation import (
    EvaluationError,
    corpus_bleu,
    evaluate_stream,
    match_boundaries,
    prf,
)
from stseg.lattice import SpeechBlock, Trigger, ValidationError, Vocabulary, make_blocks
from stseg.segmentation import (
    POLICIES,
    PauseMask,
    PolicyConfig,
    align_punct_step,
    dac_boundaries,
    fixed_length_boundaries,
    greedy_punct_step,
    sim_next_boundary,
)
from stseg.synth import (
    GroundTruth,
    LatticeBackend,
    Script,
    ScriptedBackend,
    StreamFixture,
    SynthConfig,
    generate_corpus,
    synthetic_vocabulary,
)

REPORT_DECIMALS = 6
BOUNDARY_TOLERANCES = (0, 2)


class ConfigError(ValidationError):
    """Invalid run configuration."""


class FixtureError(RuntimeError):
    """Fixture tree missing, corrupt or inconsistent with the run."""


@dataclass
class RunConfig:
    policy: str = "greedy"
    beam_width: int = 6
    ctc_weight: float = 0.3
    block_ms: float = 1600.0
    min_len_ms: float = 2000.0
    max_len_ms: float = 20000.0
    min_pause_ms: float = 200.0
    alignment_score: str = "increment"
    backend: str = "scripted"
    fixtures: str = "fixtures"
    out: str = "run"
    seed: int = 0
    tokenizer: str = "default"

    def __post_init__(self) -> None:
        if self.policy not in POLICIES:
            raise ConfigError(f"unknown policy {self.policy!r}")
        if self.backend not in ("scripted", "lattice"):
            raise ConfigError(f"unknown backend {self.backend!r}")
        if self.block_ms <= 0:
            raise ConfigError("block_ms must be positive")
        try:
            self.beam_config()
            self.policy_config()
        except ValidationError as exc:
            raise ConfigError(str(exc)) from None

    def beam_config(self) -> BeamConfig:
        return BeamConfig(self.beam_width, self.ctc_weight)

    def policy_config(self) -> PolicyConfig:
        return PolicyConfig(self.policy, self.min_len_ms, self.max_len_ms, self.max_len_ms,
                            self.min_pause_ms, self.alignment_score)

    def block_frames(self, frame_duration_ms: float) -> int:
        n = self.block_ms / frame_duration_ms
        if abs(n - round(n)) > 1e-9 or round(n) < 1:
            raise ConfigError(f"block of {self.block_ms} ms is not a whole number of "
                              f"{frame_duration_ms} ms frames")
        return int(round(n))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        return cls(**d)


def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _round(x):
    if x is None:
        return None
    if isinstance(x, float):
        if not math.isfinite(x):
            return None
        return round(x, REPORT_DECIMALS)
    return x


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


# ---------------------------------------------------------------------------
# fixture trees

MANIFEST = "manifest.json"
VOCAB_FILE = "vocab.txt"


def write_fixtures(out: Path, corpus: Sequence[StreamFixture], vocab: Vocabulary,
                   synth: SynthConfig | None = None) -> dict:
    """Write one script, lattice, mask and reference set per stream plus a hashed manifest."""
    out = Path(out)
    try:
        (out / "streams").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise FixtureError(f"cannot create {out}: {exc}") from None
    write_vocabulary(out / VOCAB_FILE, vocab)
    streams = []
    for fx in corpus:
        base = out / "streams" / fx.stream_id
        files = {
            "script": base.with_suffix(".script.json"),
            "lattice": base.with_suffix(".ctcl"),
            "mask": base.with_suffix(".mask.tsv"),
            "refs": base.with_suffix(".ref.txt"),
            "truth": base.with_suffix(".truth.json"),
        }
        fx.script.save(files["script"])
        save_lattice(files["lattice"], fx.lattice, vocab, fx.mask)
        PauseMask(fx.mask, fx.lattice.frame_duration_ms).save(files["mask"])
        files["refs"].write_text("".join(s + "\n" for s in fx.truth.reference_text), encoding="utf-8")
        files["truth"].write_text(_dumps(fx.truth.to_dict()), encoding="utf-8")
        streams.append({"id": fx.stream_id,
                        "files": {k: p.relative_to(out).as_posix() for k, p in files.items()},
                        "sha256": {k: _sha256(p) for k, p in files.items()}})
    manifest = {"vocab": VOCAB_FILE, "vocab_sha256": _sha256(out / VOCAB_FILE),
                "synth": asdict(synth) if synth else None, "streams": streams}
    (out / MANIFEST).write_text(_dumps(manifest) + "\n", encoding="utf-8")
    return manifest


def load_fixtures(root: Path, verify: bool = True) -> tuple[Vocabulary, list[StreamFixture], dict]:
    root = Path(root)
    try:
        manifest = json.loads((root / MANIFEST).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise FixtureError(f"cannot read manifest in {root}: {exc}") from None
    out = []
    vocab = None
    try:
        for entry in manifest["streams"]:
            paths = {k: root / v for k, v in entry["files"].items()}
            if verify:
                for k, p in paths.items():
                    if _sha256(p) != entry["sha256"][k]:
                        raise FixtureError(f"{p}: content hash differs from manifest")
            lattice, lat_vocab = load_lattice_file(paths["lattice"])
            if vocab is None:
                vocab = lat_vocab
            elif lat_vocab != vocab:
                raise FixtureError(f"{paths['lattice']}: vocabulary differs from other streams")
            script = Script.load(paths["script"])
            truth = GroundTruth.from_dict(json.loads(paths["truth"].read_text(encoding="utf-8")))
            mask = PauseMask.load(paths["mask"], lattice.frame_duration_ms)
            if len(mask) != lattice.frames:
                raise FixtureError(f"{paths['mask']}: {len(mask)} frames, lattice has {lattice.frames}")
            out.append(StreamFixture(entry["id"], script, lattice, truth, mask.speech))
    except (OSError, KeyError, ContainerError, ValidationError, json.JSONDecodeError) as exc:
        raise FixtureError(f"bad fixture tree {root}: {exc}") from None
    if vocab is None:
        raise FixtureError(f"{root}: manifest lists no streams")
    return vocab, out, manifest


def cmd_gen_synth(synth: SynthConfig, out: Path) -> dict:
    vocab = synthetic_vocabulary(synth.vocab_size)
    corpus = generate_corpus(synth, vocab)
    return write_fixtures(out, corpus, vocab, synth)


# ---------------------------------------------------------------------------
# streaming runs


@dataclass
class StreamRun:
    stream_id: str
    duration_ms: float
    frame_duration_ms: float
    segments: list[SegmentRecord]
    calls: dict
    trace: list[dict] = field(default_factory=list)

    @property
    def boundaries(self):
        return [s.boundary for s in self.segments if s.boundary is not None]

    @property
    def tokens(self) -> list[int]:
        return [t for s in self.segments for t in s.tokens]

    @property
    def delays_ms(self) -> list[float]:
        return [d for s in self.segments for d in s.delays_ms]


def make_backend(fx: StreamFixture, vocab: Vocabulary, kind: str):
    if kind == "scripted":
        return ScriptedBackend(fx.script, vocab, fx.lattice)
    return LatticeBackend(fx.lattice, vocab)


def _segment_blocks(start: int, end: int, block_frames: int, dur: float) -> list[SpeechBlock]:
    out = []
    for i, a in enumerate(range(start, end, block_frames)):
        n = min(block_frames, end - a)
        out.append(SpeechBlock(i, n, a * dur, (a + n) * dur, dur))
    return out


def _run_sim(fx: StreamFixture, backend, cfg: RunConfig) -> StreamRun:
    """Pause segmentation in front of the translator.

    Audio is buffered until SIM commits a cut; the closed segment is then
    translated in a fresh session, so nothing is emitted before the decision.
    """
    dur = fx.lattice.frame_duration_ms
    n = fx.lattice.frames
    bf = cfg.block_frames(dur)
    pcfg, beam, policy = cfg.policy_config(), cfg.beam_config(), CtcBudgetPolicy()
    segments, trace = [], []
    start = 0

    def translate(a: int, b: int, decided_ms: float, boundary) -> SegmentRecord:
        backend.reset_segment()
        session = new_session(backend, dur, start_frame=a)
        for blk in _segment_blocks(a, b + 1, bf, dur):
            session_feed_block(session, blk, backend)
            session.now_ms = max(session.now_ms, decided_ms)
            incremental_beam_search(session, backend, beam, policy)
        rec = finish_session(session, backend, beam, policy)
        rec.boundary = boundary
        return rec

    for blk in make_blocks(n, bf, dur):
        cuts = []
        while True:
            b = sim_next_boundary(fx.mask[:blk.end_frame], start, pcfg, dur)
            if b is None or b.frame >= n - 1:
                break
            segments.append(translate(start, b.frame, blk.source_end_ms, b))
            cuts.append(b.frame)
            start = b.frame + 1
        trace.append({"block": blk.block_index, "horizon": blk.end_frame, "cuts": cuts})
    if start < n:
        segments.append(translate(start, n - 1, n * dur, None))
    return StreamRun(fx.stream_id, n * dur, dur, segments, backend.counters.as_dict(), trace)


def run_stream(fx: StreamFixture, vocab: Vocabulary, cfg: RunConfig) -> StreamRun:
    """Feed one stream block by block under the configured policy."""
    backend = make_backend(fx, vocab, cfg.backend)
    if cfg.policy == "sim":
        return _run_sim(fx, backend, cfg)
    dur = fx.lattice.frame_duration_ms
    n = fx.lattice.frames
    pcfg, beam, policy = cfg.policy_config(), cfg.beam_config(), CtcBudgetPolicy()
    planned = []
    if cfg.policy == "fixed":
        planned = fixed_length_boundaries(n * dur, pcfg.segment_len_ms, dur)
    elif cfg.policy == "dac":
        planned = dac_boundaries(PauseMask(fx.mask, dur), pcfg.max_len_ms, pcfg.min_pause_ms)
    session = new_session(backend, dur)
    segments, trace = [], []

    for blk in make_blocks(n, cfg.block_frames(dur), dur):
        session_feed_block(session, blk, backend)
        cuts = []

        def cut(b, tokens=None):
            nonlocal session
            rec, session = session_cut(session, b, backend, beam, policy, tokens)
            segments.append(rec)
            cuts.append(b.frame)

        while planned and planned[0].frame < session.frame_horizon:
            cut(planned.pop(0))
        if cfg.policy == "greedy":
            while (b := greedy_punct_step(session.lattice, session.start_frame, pcfg, vocab)) is not None:
                cut(b)
        if cfg.policy == "align":
            if session.frames:
                expand_beam(session, backend, beam, policy)
            while session.frames:
                hit = align_punct_step(session.best.tokens, session.lattice, session.start_frame,
                                       pcfg, vocab)
                if hit is None:
                    break
                b, k = hit
                cut(b, session.best.tokens[:k])
                if session.frames:
                    expand_beam(session, backend, beam, policy)
            if session.frames:
                finalize_stable(session, policy)
        else:
            incremental_beam_search(session, backend, beam, policy)
        trace.append({"block": blk.block_index, "horizon": session.frame_horizon, "cuts": cuts})

    final = finish_session(session, backend, beam, policy)
    if final.end_frame >= final.start_frame or final.tokens:
        segments.append(final)
    return StreamRun(fx.stream_id, n * dur, dur, segments, backend.counters.as_dict(), trace)


# ---------------------------------------------------------------------------
# reports


def stream_record(run: StreamRun, vocab: Vocabulary) -> dict:
    dur = run.frame_duration_ms
    segs = []
    for s in run.segments:
        segs.append({
            "start_ms": _round(s.start_frame * dur),
            "end_ms": _round((s.end_frame + 1) * dur),
            "tokens": [vocab.surfaces[t] for t in s.tokens],
            "delays_ms": [_round(float(d)) for d in s.delays_ms],
            "text": vocab.detokenize(s.tokens),
            "boundary": None if s.boundary is None else {
                "frame": s.boundary.frame, "source_ms": _round(float(s.boundary.source_ms)),
                "trigger": s.boundary.trigger.value},
        })
    return {"stream_id": run.stream_id, "duration_ms": _round(run.duration_ms),
            "frame_duration_ms": _round(dur), "calls": run.calls, "segments": segs,
            "trace": run.trace}


def _record_tokens(rec: dict, vocab: Vocabulary) -> tuple[list[int], list[float]]:
    toks, delays = [], []
    for seg in rec["segments"]:
        toks.extend(vocab.encode(seg["tokens"]))
        delays.extend(float(d) for d in seg["delays_ms"])
    return toks, delays


def evaluate_records(records: Sequence[dict], fixtures: Sequence[StreamFixture],
                     vocab: Vocabulary, tokenizer: str = "default") -> dict:
    """BLEU and LAAL per stream and over the corpus, plus boundary and segment statistics."""
    by_id = {fx.stream_id: fx for fx in fixtures}
    rec_ids = [r["stream_id"] for r in records]
    if sorted(rec_ids) != sorted(by_id):
        raise EvaluationError("report stream ids do not match the fixtures: "
                              f"{sorted(set(rec_ids) ^ set(by_id))}")
    hyps, refs, lags = [], [], []
    per_stream = {}
    prf_counts = {tol: [0, 0, 0] for tol in BOUNDARY_TOLERANCES}
    n_segments = n_forced = 0
    total_ms = 0.0
    for rec in sorted(records, key=lambda r: r["stream_id"]):
        fx = by_id[rec["stream_id"]]
        toks, delays = _record_tokens(rec, vocab)
        scores, dist = evaluate_stream(toks, delays, vocab, fx.truth.reference_text,
                                       fx.truth.sentence_spans_ms, tokenizer)
        s_hyp = [s.hyp for s in scores]
        s_ref = [s.ref for s in scores]
        s_lag = [s.laal for s in scores if s.laal is not None]
        hyps += s_hyp
        refs += s_ref
        lags += s_lag
        entry = {"bleu": _round(corpus_bleu(s_hyp, s_ref, "none").score),
                 "edit_distance": dist,
                 "laal_ms": _round(float(np.mean(s_lag))) if s_lag else None}
        if not s_lag:
            entry["laal_error"] = "empty hypothesis"
        pred = [seg["boundary"]["frame"] for seg in rec["segments"] if seg["boundary"]]
        for tol in BOUNDARY_TOLERANCES:
            c = prf_counts[tol]
            c[0] += match_boundaries(pred, fx.truth.boundary_frames, tol)
            c[1] += len(pred)
            c[2] += len(fx.truth.boundary_frames)
        n_segments += len(rec["segments"])
        n_forced += sum(1 for seg in rec["segments"] if seg["boundary"]
                        and seg["boundary"]["trigger"] == Trigger.FORCED_MAX_LEN.value)
        total_ms += float(rec["duration_ms"])
        per_stream[rec["stream_id"]] = entry
    bleu = corpus_bleu(hyps, refs, "none")
    minutes = total_ms / 60000.0
    boundaries = {}
    for tol, (hits, n_pred, n_gold) in prf_counts.items():
        p, r, f = prf(hits, n_pred, n_gold)
        boundaries[f"tol{tol}"] = {"precision": _round(p), "recall": _round(r), "f1": _round(f)}
    return {
        "bleu": _round(bleu.score),
        "bleu_precisions": [_round(p) for p in bleu.precisions],
        "brevity_penalty": _round(bleu.brevity_penalty),
        "laal_ms": _round(float(np.mean(lags))) if lags else None,
        "boundaries": boundaries,
        "segments": n_segments,
        "mean_segment_ms": _round(total_ms / n_segments) if n_segments else None,
        "segments_per_minute": _round(n_segments / minutes) if minutes else None,
        "forced_cuts": n_forced,
        "forced_cuts_per_minute": _round(n_forced / minutes) if minutes else None,
        "streams": per_stream,
    }


@dataclass
class RunReport:
    config: dict
    fixtures: dict
    records: list[dict]
    metrics: dict

    def summary(self) -> dict:
        calls = {"encode": sum(r["calls"]["encode"] for r in self.records),
                 "decode": sum(r["calls"]["decode"] for r in self.records)}
        return {"config": self.config, "fixtures": self.fixtures, "calls": calls,
                "metrics": self.metrics}

    def write(self, out: Path) -> None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "report.jsonl", "w", encoding="utf-8") as fh:
            for rec in self.records:
                fh.write(_dumps(rec) + "\n")
        (out / "summary.json").write_text(json.dumps(self.summary(), sort_keys=True, indent=1) + "\n",
                                          encoding="utf-8")


def _fixture_hashes(root: Path, manifest: dict) -> dict:
    return {"manifest_sha256": _sha256(Path(root) / MANIFEST),
            "streams": {s["id"]: s["sha256"] for s in manifest["streams"]}}


def simulate(cfg: RunConfig, vocab: Vocabulary, fixtures: Sequence[StreamFixture],
             fixture_hashes: dict | None = None) -> tuple[RunReport, dict]:
    """Run every stream; returns the report and wall-clock timings kept apart from it."""
    records, timing = [], {}
    for fx in sorted(fixtures, key=lambda f: f.stream_id):
        t0 = time.perf_counter()
        run = run_stream(fx, vocab, cfg)
        timing[fx.stream_id] = time.perf_counter() - t0
        records.append(stream_record(run, vocab))
    metrics = evaluate_records(records, fixtures, vocab, cfg.tokenizer)
    return RunReport(cfg.to_dict(), fixture_hashes or {}, records, metrics), timing


def cmd_simulate(cfg: RunConfig) -> RunReport:
    vocab, fixtures, manifest = load_fixtures(Path(cfg.fixtures))
    report, timing = simulate(cfg, vocab, fixtures, _fixture_hashes(Path(cfg.fixtures), manifest))
    report.write(Path(cfg.out))
    total = sum(timing.values())
    audio_s = sum(fx.lattice.duration_ms for fx in fixtures) / 1000.0
    (Path(cfg.out) / "timing.json").write_text(json.dumps(
        {"wall_s": timing, "total_wall_s": total, "rtf": total / audio_s if audio_s else None},
        sort_keys=True, indent=1) + "\n", encoding="utf-8")
    return report


def read_report(path: Path) -> list[dict]:
    path = Path(path)
    if path.is_dir():
        path = path / "report.jsonl"
    try:
        return [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]
    except (OSError, json.JSONDecodeError) as exc:
        raise EvaluationError(f"cannot read report {path}: {exc}") from None


def cmd_evaluate(report: Path, fixtures: Path, out: Path | None = None,
                 tokenizer: str = "default") -> dict:
    records = read_report(report)
    vocab, fxs, _ = load_fixtures(Path(fixtures))
    metrics = evaluate_records(records, fxs, vocab, tokenizer)
    if out is not None:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(json.dumps(metrics, sort_keys=True, indent=1) + "\n", encoding="utf-8")
    return metrics


SWEEP_KEYS = ("policy", "min_len_ms", "max_len_ms", "beam_width", "ctc_weight", "block_ms",
              "min_pause_ms")
SWEEP_COLUMNS = SWEEP_KEYS + ("bleu", "laal_ms", "mean_segment_ms", "segments_per_minute",
                              "forced_cuts")


def sweep_points(base: RunConfig, grid: dict[str, Sequence]) -> list[RunConfig]:
    if not grid or any(len(v) == 0 for v in grid.values()):
        raise ConfigError("sweep grid is empty")
    for key in grid:
        if key not in SWEEP_KEYS:
            raise ConfigError(f"cannot sweep over {key!r}")
    keys = sorted(grid)
    points = []
    for values in itertools.product(*(grid[k] for k in keys)):
        points.append(replace(base, **dict(zip(keys, values))))
    return sorted(points, key=lambda c: tuple(str(getattr(c, k)) if k == "policy" else getattr(c, k)
                                              for k in SWEEP_KEYS))


def cmd_sweep(base: RunConfig, grid: dict[str, Sequence], out: Path | None = None) -> list[dict]:
    """One simulate + evaluate per grid point; rows sorted by configuration."""
    points = sweep_points(base, grid)
    vocab, fixtures, manifest = load_fixtures(Path(base.fixtures))
    rows = []
    for cfg in points:
        report, _ = simulate(cfg, vocab, fixtures)
        m = report.metrics
        row = {k: getattr(cfg, k) for k in SWEEP_KEYS}
        row.update({k: m[k] for k in ("bleu", "laal_ms", "mean_segment_ms",
                                      "segments_per_minute", "forced_cuts")})
        rows.append(row)
    if out is not None:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
            writer.writeheader()
            writer.writerows(rows)
    return rows

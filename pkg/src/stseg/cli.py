"""Command-line entry point: gen-synth, simulate, evaluate, sweep."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

from stseg.evaluation import EvaluationError
from stseg.harness import (
    SWEEP_KEYS,
    ConfigError,
    FixtureError,
    RunConfig,
    cmd_evaluate,
    cmd_gen_synth,
    cmd_simulate,
    cmd_sweep,
)
from stseg.lattice import ValidationError
from stseg.segmentation import POLICIES
from stseg.synth import SynthConfig

EXIT_OK, EXIT_CONFIG, EXIT_FIXTURE, EXIT_EVAL = 0, 2, 3, 4

log = logging.getLogger("stseg")

# flag name -> RunConfig field
_RUN_FLAGS = {"policy": "policy", "beam": "beam_width", "lambda_": "ctc_weight",
              "block_ms": "block_ms", "min_len_ms": "min_len_ms", "max_len_ms": "max_len_ms",
              "seed": "seed", "out": "out", "fixtures": "fixtures", "backend": "backend",
              "min_pause_ms": "min_pause_ms", "tokenizer": "tokenizer"}


def _read_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    return data


def resolve_run_config(args: argparse.Namespace) -> RunConfig:
    """Config file first, then any flags given on the command line."""
    data = _read_config(args.config)
    data = data.get("run", data)
    for flag, key in _RUN_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            data[key] = value
    return RunConfig.from_dict(data)


def resolve_synth_config(args: argparse.Namespace) -> SynthConfig:
    data = _read_config(args.config)
    data = dict(data.get("synth", data))
    for key in ("n_streams", "sharpness", "mid_pause_rate", "fragment_error_rate", "seed"):
        value = getattr(args, key, None)
        if value is not None:
            data[key] = value
    known = {f.name for f in fields(SynthConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown synth config keys: {', '.join(unknown)}")
    for key in ("gap_frames", "token_frames", "token_gap_frames"):
        if key in data:
            data[key] = tuple(data[key])
    try:
        return SynthConfig(**data)
    except (TypeError, ValidationError) as exc:
        raise ConfigError(str(exc)) from None


def parse_grid(items: list[str] | None) -> dict[str, list]:
    grid: dict[str, list] = {}
    for item in items or []:
        key, _, values = item.partition("=")
        key = key.strip().replace("-", "_")
        if key not in SWEEP_KEYS:
            raise ConfigError(f"cannot sweep over {key!r}")
        cast = str if key == "policy" else (int if key == "beam_width" else float)
        try:
            grid[key] = [cast(v) for v in values.split(",") if v.strip()]
        except ValueError as exc:
            raise ConfigError(f"bad grid values for {key}: {exc}") from None
    return grid


def _run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--policy", choices=POLICIES)
    p.add_argument("--beam", type=int, help="beam width (default 6)")
    p.add_argument("--lambda", dest="lambda_", type=float, help="CTC weight (default 0.3)")
    p.add_argument("--block-ms", type=float, help="encoder block length (default 1600)")
    p.add_argument("--min-len-ms", type=float)
    p.add_argument("--max-len-ms", type=float, help="SIM/DAC maximum, fixed-length segment size")
    p.add_argument("--min-pause-ms", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--fixtures", help="fixture tree written by gen-synth")
    p.add_argument("--backend", choices=("scripted", "lattice"))
    p.add_argument("--tokenizer", choices=("default", "char"))
    p.add_argument("--out", help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stseg", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-synth", help="write a synthetic fixture tree")
    g.add_argument("--config")
    g.add_argument("--n-streams", dest="n_streams", type=int)
    g.add_argument("--sharpness", type=float, help="peak probability of scripted labels")
    g.add_argument("--mid-pause-rate", dest="mid_pause_rate", type=float)
    g.add_argument("--fragment-error-rate", dest="fragment_error_rate", type=float)
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True)

    s = sub.add_parser("simulate", help="stream fixtures through a policy")
    _run_flags(s)

    e = sub.add_parser("evaluate", help="score a report against fixture references")
    e.add_argument("--report", required=True, help="report.jsonl or the run directory")
    e.add_argument("--fixtures", required=True)
    e.add_argument("--tokenizer", choices=("default", "char"), default="default")
    e.add_argument("--out", help="metrics JSON path")

    w = sub.add_parser("sweep", help="simulate and evaluate over a parameter grid")
    _run_flags(w)
    w.add_argument("--grid", action="append",
                   help="KEY=v1,v2,... (repeatable); keys: " + ", ".join(SWEEP_KEYS))
    return parser


def _print(obj) -> None:
    print(json.dumps(obj, sort_keys=True, indent=1))


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "gen-synth":
            manifest = cmd_gen_synth(resolve_synth_config(args), Path(args.out))
            log.info("wrote %d streams to %s", len(manifest["streams"]), args.out)
        elif args.command == "simulate":
            report = cmd_simulate(resolve_run_config(args))
            _print({k: report.metrics[k] for k in ("bleu", "laal_ms", "segments", "forced_cuts")})
        elif args.command == "evaluate":
            metrics = cmd_evaluate(Path(args.report), Path(args.fixtures),
                                   Path(args.out) if args.out else None, args.tokenizer)
            _print({k: v for k, v in metrics.items() if k != "streams"})
        elif args.command == "sweep":
            cfg = resolve_run_config(args)
            out = Path(cfg.out) / "sweep.csv"
            rows = cmd_sweep(cfg, parse_grid(args.grid), out)
            log.info("wrote %d rows to %s", len(rows), out)
    except (ConfigError, ValidationError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FixtureError as exc:
        print(f"fixture error: {exc}", file=sys.stderr)
        return EXIT_FIXTURE
    except EvaluationError as exc:
        print(f"evaluation error: {exc}", file=sys.stderr)
        return EXIT_EVAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

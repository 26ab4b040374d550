"""Command-line entry point: ``decoynudge <command> [options]``."""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import __version__
from .agents import API_KEY_ENV, ResponseCache, TransportError, make_agent
from .config import RunConfig, load_config
from .decoy_space import ConfigurationError, grid_to_csv
from .impact import ImpactInputError, compute_impact, impact_csv, load_impact_inputs
from .personas import segments_to_csv
from .scenarios import draw_situations
from .simulation import Schedule, analyze_sweep, load_predicted_groups, run_sweep, write_sweep_artifacts
from .stats import DesignError, FitError
from .study import (
    AnalysisError,
    AttentionDataError,
    SchemaError,
    load_respondents,
    prepare_study,
    records_to_csv,
    run_battery,
    run_exploratory,
    write_reports,
)
from .synthetic_study import generate_respondents, synthetic_groups

log = logging.getLogger("decoynudge")

EXPECTED_ERRORS = (
    ConfigurationError, SchemaError, AnalysisError, AttentionDataError, ImpactInputError, DesignError, FitError,
    TransportError, FileNotFoundError, KeyError, ValueError,
)


def _load(args) -> RunConfig:
    cfg = load_config(args.config)
    if getattr(args, "output", None):
        cfg.paths.output_dir = Path(args.output)
    return cfg


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


# settings that change throughput but never results
_EXECUTION_KEYS = ("max_concurrency", "requests_per_second", "timeout", "retry_backoff", "cache_enabled")


def _scientific_digest(cfg: RunConfig) -> str:
    d = cfg.as_dict()
    d.pop("paths")
    for key in _EXECUTION_KEYS:
        d["agent"].pop(key)
    return hashlib.sha256(json.dumps(d, sort_keys=True, default=str).encode()).hexdigest()


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args) -> int:
    cfg = _load(args)
    if args.seed is not None:
        cfg.master_seed = args.seed
    if cfg.master_seed is None:
        raise ConfigurationError("simulate needs a master seed (config master_seed or --seed)")
    if args.backend:
        cfg.agent = replace(cfg.agent, backend=args.backend)
    if args.max_concurrency:
        cfg.agent = replace(cfg.agent, max_concurrency=args.max_concurrency)
    if args.segments:
        cfg.segment_keys = tuple(args.segments)
    if args.cells:
        cfg.cell_ids = tuple(args.cells)
    if args.schedule:
        cfg.schedule = Schedule(*args.schedule)
    cfg.validate()

    out = cfg.paths.output_dir
    out.mkdir(parents=True, exist_ok=True)
    segments, cells = cfg.segments(), cfg.cells()
    cache = ResponseCache(cfg.paths.resolved_cache()) if cfg.agent.backend == "remote_llm" else None
    agent = make_agent(cfg.agent, cache=cache)
    draws = draw_situations(cfg.master_seed, cfg.schedule.n_draws, cfg.ranges)
    log.info("simulating %d segments x %d situations, %d calls each",
             len(segments), len(cells) + 1, cfg.schedule.calls_per_situation)
    result = run_sweep(
        segments, cells, draws, agent, cfg.master_seed,
        schedule=cfg.schedule, fx=cfg.fx, bottles_per_kg=cfg.bottles_per_kg,
        max_workers=cfg.agent.max_concurrency, checkpoint=out / "checkpoint.jsonl",
    )
    k = cfg.effective_k()
    analysis = analyze_sweep(result, k=k, top_k=min(cfg.top_k, len(cells)))
    written = write_sweep_artifacts(result, analysis, out)
    per_situation = cfg.schedule.calls_per_situation
    manifest = {
        "version": __version__,
        "config_sha256": _scientific_digest(cfg),
        "master_seed": cfg.master_seed,
        "backend": cfg.agent.backend,
        "model_name": cfg.agent.model_name,
        "schedule": {
            "n_draws": cfg.schedule.n_draws,
            "n_orders": cfg.schedule.n_orders,
            "repetitions": cfg.schedule.repetitions,
        },
        "n_segments": len(segments),
        "n_cells": len(cells),
        "n_situations": len(cells) + 1,
        "calls_per_situation": per_situation,
        "calls_per_segment": (len(cells) + 1) * per_situation,
        "total_calls": len(segments) * (len(cells) + 1) * per_situation,
        "responses_recorded": sum(t.total for t in result.tallies.values()),
        "invalid_rate": result.invalid_rate,
        "k": k,
        "top_k": min(cfg.top_k, len(cells)),
        "artifacts": {p.name: _sha256(p) for p in sorted(written)},
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"wrote {len(written) + 1} files to {out}")
    return 0


def _require(path: Path | None, what: str) -> Path:
    if path is None:
        raise FileNotFoundError(f"no {what} file configured")
    if not path.is_file():
        raise FileNotFoundError(f"{what} file not found: {path}")
    return path


def cmd_analyze(args) -> int:
    cfg = _load(args)
    respondents = _require(Path(args.respondents) if args.respondents else cfg.paths.respondents, "respondent")
    groups_path = _require(Path(args.groups) if args.groups else cfg.paths.resolved_groups(), "predicted groups")
    n_perm = args.n_perm or cfg.n_perm
    n_boot = args.n_boot or cfg.n_boot
    records, report = load_respondents(respondents, strict=not args.lenient)
    data = prepare_study(records, load_predicted_groups(groups_path))
    for w in data.warnings:
        log.warning(w)
    battery = run_battery(data, include_universal=args.include_universal or cfg.include_universal,
                          seed=args.seed, n_boot=n_boot)
    exploratory = run_exploratory(data, n_perm=n_perm, seed=args.seed)
    outdir = Path(args.output) if args.output else cfg.paths.output_dir / "analysis"
    written = write_reports(outdir, battery, exploratory, data, report)
    for h in battery:
        print(f"{h.hypothesis}: {h.decision}")
    print(f"wrote {len(written)} files to {outdir}")
    return 0


def cmd_impact(args) -> int:
    cfg = load_config(args.config)
    path = Path(args.inputs) if args.inputs else cfg.paths.impact_inputs
    inputs, sources = load_impact_inputs(path)
    table = compute_impact(inputs, sources)
    text = impact_csv(table)
    if args.output:
        out = Path(args.output)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


def cmd_validate_config(args) -> int:
    cfg = load_config(args.config)
    if cfg.agent.backend == "remote_llm":
        if not (os.environ.get(API_KEY_ENV) or os.environ.get("OPENAI_API_KEY")):
            raise ConfigurationError(f"remote backend selected but ${API_KEY_ENV} is not set")
    summary = {
        "config_sha256": _scientific_digest(cfg),
        "segments": len(cfg.segments()),
        "cells": len(cfg.cells()),
        "calls_per_segment": (len(cfg.cells()) + 1) * cfg.schedule.calls_per_situation,
        "config": cfg.as_dict(),
    }
    print(json.dumps(summary, indent=2, sort_keys=True, default=str))
    return 0


def _emit(text: str, output: str | None) -> None:
    if output:
        Path(output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def cmd_export_grid(args) -> int:
    cfg = load_config(args.config)
    _emit(grid_to_csv(cfg.cells()), args.output)
    return 0


def cmd_export_segments(args) -> int:
    cfg = load_config(args.config)
    _emit(segments_to_csv(cfg.segments()), args.output)
    return 0


def cmd_generate_fixture(args) -> int:
    out = Path(args.output)
    out.mkdir(parents=True, exist_ok=True)
    if args.groups:
        groups = load_predicted_groups(_require(Path(args.groups), "predicted groups"))
    else:
        groups = synthetic_groups(args.seed)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["segment", "country", "baseline_probability", "optimal_delta", "offset_group", "decoy_group"])
        for key, g in groups.items():
            w.writerow([key, key[:2].upper(), "", "", g["offset_group"], g["decoy_group"]])
        (out / "predicted_groups.csv").write_text(buf.getvalue(), encoding="utf-8")
    records = generate_respondents(groups, args.n_per_country, seed=args.seed)
    (out / "respondents.csv").write_text(records_to_csv(records), encoding="utf-8")
    print(f"wrote {len(records)} respondents to {out / 'respondents.csv'}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="decoynudge", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("-c", "--config", help="TOML run configuration (default: bundled defaults)")
        return sp

    s = with_config(sub.add_parser("simulate", help="run the agent sweep and write selection artifacts"))
    s.add_argument("--seed", type=int, help="master seed (overrides config)")
    s.add_argument("--output", help="output directory (overrides paths.output_dir)")
    s.add_argument("--backend", choices=["synthetic", "remote_llm"])
    s.add_argument("--max-concurrency", type=int)
    s.add_argument("--segments", nargs="+", metavar="KEY", help="subset of segment keys")
    s.add_argument("--cells", nargs="+", metavar="CELL_ID", help="subset of decoy cell ids")
    s.add_argument("--schedule", nargs=3, type=int, metavar=("DRAWS", "ORDERS", "REPS"))
    s.set_defaults(func=cmd_simulate)

    a = with_config(sub.add_parser("analyze", help="run the hypothesis battery on respondent data"))
    a.add_argument("--respondents", help="respondent CSV (overrides paths.respondents)")
    a.add_argument("--groups", help="predicted_groups.csv from simulate")
    a.add_argument("--output", help="report directory (default: <output_dir>/analysis)")
    a.add_argument("--n-perm", type=int)
    a.add_argument("--n-boot", type=int)
    a.add_argument("--seed", type=int, default=0, help="seed for permutations and bootstrap")
    a.add_argument("--include-universal", action="store_true")
    a.add_argument("--lenient", action="store_true", help="drop invalid rows instead of failing")
    a.set_defaults(func=cmd_analyze)

    i = with_config(sub.add_parser("impact", help="compute the CO2 impact table"))
    i.add_argument("--inputs", help="impact inputs TOML (default: bundled)")
    i.add_argument("--output", help="write the CSV here as well as to stdout")
    i.set_defaults(func=cmd_impact)

    v = with_config(sub.add_parser("validate-config", help="check a configuration and print it resolved"))
    v.set_defaults(func=cmd_validate_config)

    g = with_config(sub.add_parser("export-grid", help="write the decoy grid as CSV"))
    g.add_argument("--output")
    g.set_defaults(func=cmd_export_grid)

    e = with_config(sub.add_parser("export-segments", help="write the persona segments as CSV"))
    e.add_argument("--output")
    e.set_defaults(func=cmd_export_segments)

    f = sub.add_parser("generate-fixture", help="write synthetic respondent data with known effects")
    f.add_argument("--output", required=True, help="directory for respondents.csv (and predicted_groups.csv)")
    f.add_argument("--groups", help="use these predicted groups instead of synthetic ones")
    f.add_argument("--n-per-country", type=int, default=200)
    f.add_argument("--seed", type=int, default=0)
    f.set_defaults(func=cmd_generate_fixture)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except EXPECTED_ERRORS as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())

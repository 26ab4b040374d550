"""Replication schedule, offsetting-probability estimates and decoy selection.

One choice situation (the no-decoy baseline or one grid cell) is simulated
for a segment as draws x order permutations x repetitions agent calls, by
default 30 x 4 x 25 = 3000. Every call gets a sample index hashed from
(master seed, segment, cell, draw, order, repetition), so tallies do not
depend on how the calls are scheduled across threads.
"""

from __future__ import annotations

import csv
import io
import json
import math
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .agents import INVALID, ChoiceAgent
from .decoy_space import DecoyCell, enumerate_cells
from .personas import Segment, render_system_prompt
from .scenarios import DEFAULT_BOTTLES_PER_KG, DEFAULT_FX, SituationDraw, build_scenario, render_user_prompt
from .seeding import derive_rng, derive_seed

BASELINE = "none"


@dataclass(frozen=True)
class Schedule:
    n_draws: int = 30
    n_orders: int = 4
    repetitions: int = 25

    @property
    def calls_per_situation(self) -> int:
        return self.n_draws * self.n_orders * self.repetitions


@dataclass
class ResponseTally:
    n_target: int = 0
    n_competitor: int = 0
    n_decoy: int = 0
    n_invalid: int = 0

    def __post_init__(self) -> None:
        if min(self.n_target, self.n_competitor, self.n_decoy, self.n_invalid) < 0:
            raise ValueError("tally counts must be non-negative")

    @property
    def total(self) -> int:
        return self.n_target + self.n_competitor + self.n_decoy + self.n_invalid

    @property
    def n_valid(self) -> int:
        return self.n_target + self.n_competitor + self.n_decoy

    def add(self, choice: str) -> None:
        if choice == INVALID:
            self.n_invalid += 1
        else:
            attr = f"n_{choice}"
            setattr(self, attr, getattr(self, attr) + 1)


@dataclass(frozen=True)
class OffsettingEstimate:
    probability: float
    n_valid: int
    mode: str


@dataclass(frozen=True)
class CellEffect:
    cell: DecoyCell
    delta: float


def _cell_key(cell: DecoyCell | None) -> str:
    return BASELINE if cell is None else cell.cell_id


def order_permutation(master_seed: int, segment: Segment, cell: DecoyCell | None,
                      draw_index: int, order_index: int) -> tuple[str, ...]:
    roles = ("target", "competitor") if cell is None else ("target", "competitor", "decoy")
    perm = derive_rng(master_seed, "order", segment.key, _cell_key(cell), draw_index, order_index).permutation(len(roles))
    return tuple(roles[i] for i in perm)


def sample_index(master_seed: int, segment: Segment, cell: DecoyCell | None,
                 draw_index: int, order_index: int, repetition: int) -> int:
    return derive_seed(master_seed, "sample", segment.key, _cell_key(cell), draw_index, order_index, repetition)


def run_cell(
    segment: Segment,
    cell: DecoyCell | None,
    draws: Sequence[SituationDraw],
    agent: ChoiceAgent,
    seed: int,
    *,
    n_orders: int = 4,
    repetitions: int = 25,
    fx: Mapping = DEFAULT_FX,
    bottles_per_kg: float = DEFAULT_BOTTLES_PER_KG,
    max_workers: int = 1,
) -> ResponseTally:
    """Simulate one (segment, cell) choice situation; ``cell=None`` is the no-decoy baseline."""
    system_prompt = render_system_prompt(segment)
    k = 2 if cell is None else 3
    tasks = []
    for draw in draws:
        scenario = build_scenario(draw, segment.country, cell, fx, bottles_per_kg)
        for oi in range(n_orders):
            order = order_permutation(seed, segment, cell, draw.draw_index, oi)
            user_prompt = render_user_prompt(scenario, order)
            for rep in range(repetitions):
                idx = sample_index(seed, segment, cell, draw.draw_index, oi, rep)
                tasks.append((user_prompt, order, idx))

    def call(task):
        user_prompt, order, idx = task
        return agent.choose(system_prompt, user_prompt, k, order, idx).choice

    if max_workers > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            choices = list(pool.map(call, tasks))
    else:
        choices = [call(t) for t in tasks]
    tally = ResponseTally()
    for c in choices:
        tally.add(c)
    return tally


def offsetting_probability(tally: ResponseTally, mode: str) -> OffsettingEstimate:
    """Share of target choices.

    ``pairwise`` divides by all valid responses (no decoy on the menu);
    ``decoy`` divides by target + competitor only, and is 0 when every valid
    response picked the decoy.
    """
    if tally.n_valid == 0:
        raise ValueError("every response was invalid; no offsetting information")
    if mode == "pairwise":
        return OffsettingEstimate(tally.n_target / tally.n_valid, tally.n_valid, mode)
    if mode == "decoy":
        denom = tally.n_target + tally.n_competitor
        return OffsettingEstimate(tally.n_target / denom if denom else 0.0, denom, mode)
    raise ValueError(f"unknown mode {mode!r}")


def _prob(x) -> float:
    return x.probability if isinstance(x, OffsettingEstimate) else float(x)


def cell_effects(
    baseline: Mapping[Segment, OffsettingEstimate],
    per_cell: Mapping[Segment, Mapping[DecoyCell, OffsettingEstimate]],
) -> tuple[dict[str, dict[DecoyCell, CellEffect]], dict[Segment, dict[DecoyCell, CellEffect]]]:
    """Per-segment deltas and their unweighted country means.

    Returns ``(country -> cell -> effect, segment -> cell -> effect)``.
    """
    for seg in per_cell:
        if seg not in baseline:
            raise KeyError(f"no baseline estimate for segment {seg.key}")
    for seg in baseline:
        if seg not in per_cell:
            raise KeyError(f"no decoy estimates for segment {seg.key}")
    segment_fx = {
        seg: {cell: CellEffect(cell, _prob(est) - _prob(baseline[seg])) for cell, est in cells.items()}
        for seg, cells in per_cell.items()
    }
    by_country: dict[str, dict[DecoyCell, list[float]]] = defaultdict(lambda: defaultdict(list))
    for seg, cells in segment_fx.items():
        for cell, eff in cells.items():
            by_country[seg.country][cell].append(eff.delta)
    country_fx = {
        country: {cell: CellEffect(cell, math.fsum(ds) / len(ds)) for cell, ds in cells.items()}
        for country, cells in by_country.items()
    }
    return country_fx, segment_fx


@dataclass(frozen=True)
class CellSelection:
    optimal: list[DecoyCell]
    non_optimal: list[DecoyCell]


def _rank(effects: Mapping[DecoyCell, CellEffect], grid: Sequence[DecoyCell], k: int, largest: bool) -> list[DecoyCell]:
    pos = {cell: i for i, cell in enumerate(grid)}
    sign = -1.0 if largest else 1.0
    ordered = sorted(grid, key=lambda c: (sign * effects[c].delta, pos[c]))
    return ordered[:k]


def _check_grid(effects: Mapping[DecoyCell, CellEffect], grid: Sequence[DecoyCell] | None, k: int) -> list[DecoyCell]:
    grid = list(grid) if grid is not None else enumerate_cells()
    missing = [c.cell_id for c in grid if c not in effects]
    if missing:
        raise ValueError(f"effects missing for {len(missing)} grid cells, e.g. {missing[:3]}")
    if len(grid) < k:
        raise ValueError(f"need at least {k} cells to select from, got {len(grid)}")
    return grid


def select_country_cells(effects: Mapping[DecoyCell, CellEffect], k: int = 5,
                         grid: Sequence[DecoyCell] | None = None) -> CellSelection:
    """Top-k / bottom-k cells by delta; ties go to the earlier cell in grid order."""
    grid = _check_grid(effects, grid, k)
    return CellSelection(_rank(effects, grid, k, True), _rank(effects, grid, k, False))


def select_segment_optimal(
    effects: Mapping[Segment, Mapping[DecoyCell, CellEffect]],
    top_k: int = 5,
    grid: Sequence[DecoyCell] | None = None,
) -> tuple[dict[Segment, list[DecoyCell]], dict[DecoyCell, int]]:
    """Per-segment top-k cells, and how many segments have each cell among their top-k."""
    chosen = {}
    counts: dict[DecoyCell, int] = {}
    for seg, cells in effects.items():
        g = _check_grid(cells, grid, top_k)
        for c in g:
            counts.setdefault(c, 0)
        chosen[seg] = _rank(cells, g, top_k, True)
        for c in chosen[seg]:
            counts[c] += 1
    return chosen, counts


def optimal_delta(segment_effects: Mapping[DecoyCell, CellEffect], optimal: Sequence[DecoyCell]) -> float:
    """Mean change for one segment over its country's optimal cells."""
    return math.fsum(segment_effects[c].delta for c in optimal) / len(optimal)


def predicted_groups(baseline: Mapping[Segment, OffsettingEstimate | float],
                     country_optimal_effects: Mapping[Segment, float]) -> dict[Segment, dict[str, int]]:
    """offset_group 1 iff baseline probability is exactly 1; decoy_group 1 iff delta > 0."""
    out = {}
    for seg, est in baseline.items():
        out[seg] = {
            "offset_group": 1 if _prob(est) == 1.0 else 2,
            "decoy_group": 1 if country_optimal_effects[seg] > 0 else 2,
        }
    return out


# ---------------------------------------------------------------------------
# full sweep


@dataclass
class SweepResult:
    segments: list[Segment]
    cells: list[DecoyCell]
    tallies: dict[tuple[str, str], ResponseTally] = field(default_factory=dict)

    def tally(self, segment: Segment, cell: DecoyCell | None) -> ResponseTally:
        return self.tallies[(segment.key, _cell_key(cell))]

    @property
    def invalid_rate(self) -> float:
        total = sum(t.total for t in self.tallies.values())
        return sum(t.n_invalid for t in self.tallies.values()) / total if total else 0.0


def _load_checkpoint(path: Path) -> dict[tuple[str, str], ResponseTally]:
    done = {}
    if path.exists():
        for line in path.read_text(encoding="utf-8").splitlines():
            if line.strip():
                rec = json.loads(line)
                done[(rec["segment"], rec["cell"])] = ResponseTally(**rec["tally"])
    return done


def run_sweep(
    segments: Sequence[Segment],
    cells: Sequence[DecoyCell],
    draws: Sequence[SituationDraw],
    agent: ChoiceAgent,
    master_seed: int,
    *,
    schedule: Schedule = Schedule(),
    fx: Mapping = DEFAULT_FX,
    bottles_per_kg: float = DEFAULT_BOTTLES_PER_KG,
    max_workers: int = 1,
    checkpoint: str | Path | None = None,
) -> SweepResult:
    """Baseline plus every cell for every segment; resumable via a JSONL checkpoint."""
    result = SweepResult(list(segments), list(cells))
    ckpt = Path(checkpoint) if checkpoint is not None else None
    done = _load_checkpoint(ckpt) if ckpt is not None else {}
    draws = list(draws)[: schedule.n_draws]
    for seg in segments:
        for cell in [None, *cells]:
            key = (seg.key, _cell_key(cell))
            if key in done:
                result.tallies[key] = done[key]
                continue
            tally = run_cell(
                seg, cell, draws, agent, master_seed,
                n_orders=schedule.n_orders, repetitions=schedule.repetitions,
                fx=fx, bottles_per_kg=bottles_per_kg, max_workers=max_workers,
            )
            result.tallies[key] = tally
            if ckpt is not None:
                with open(ckpt, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps({"segment": key[0], "cell": key[1], "tally": asdict(tally)}) + "\n")
    return result


@dataclass
class SweepAnalysis:
    baseline: dict[Segment, OffsettingEstimate]
    per_cell: dict[Segment, dict[DecoyCell, OffsettingEstimate]]
    country_effects: dict[str, dict[DecoyCell, CellEffect]]
    segment_effects: dict[Segment, dict[DecoyCell, CellEffect]]
    country_selection: dict[str, CellSelection]
    segment_optimal: dict[Segment, list[DecoyCell]]
    segment_counts: dict[str, dict[DecoyCell, int]]
    groups: dict[Segment, dict[str, int]]


def analyze_sweep(result: SweepResult, k: int = 5, top_k: int = 5) -> SweepAnalysis:
    baseline = {s: offsetting_probability(result.tally(s, None), "pairwise") for s in result.segments}
    per_cell = {
        s: {c: offsetting_probability(result.tally(s, c), "decoy") for c in result.cells}
        for s in result.segments
    }
    country_fx, segment_fx = cell_effects(baseline, per_cell)
    selection = {cc: select_country_cells(eff, k, result.cells) for cc, eff in country_fx.items()}
    seg_opt, _ = select_segment_optimal(segment_fx, top_k, result.cells)
    counts: dict[str, dict[DecoyCell, int]] = {}
    for cc in country_fx:
        _, counts[cc] = select_segment_optimal(
            {s: e for s, e in segment_fx.items() if s.country == cc}, top_k, result.cells
        )
    opt_delta = {s: optimal_delta(segment_fx[s], selection[s.country].optimal) for s in result.segments}
    groups = predicted_groups(baseline, opt_delta)
    return SweepAnalysis(baseline, per_cell, country_fx, segment_fx, selection, seg_opt, counts, groups)


# ---------------------------------------------------------------------------
# export


def _fmt(x: float) -> str:
    return f"{x:.6f}"


def tallies_csv(result: SweepResult, analysis: SweepAnalysis) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["segment", "country", "cell_id", "mu", "offset_fraction", "area",
                "n_target", "n_competitor", "n_decoy", "n_invalid", "mode", "probability", "delta"])
    for s in result.segments:
        t = result.tally(s, None)
        b = analysis.baseline[s]
        w.writerow([s.key, s.country, BASELINE, "", "", "", t.n_target, t.n_competitor, t.n_decoy,
                    t.n_invalid, b.mode, _fmt(b.probability), ""])
        for c in result.cells:
            t = result.tally(s, c)
            e = analysis.per_cell[s][c]
            w.writerow([s.key, s.country, c.cell_id, f"{c.mu:.1f}", f"{c.offset_fraction:.1f}", c.area.value,
                        t.n_target, t.n_competitor, t.n_decoy, t.n_invalid, e.mode, _fmt(e.probability),
                        _fmt(analysis.segment_effects[s][c].delta)])
    return buf.getvalue()


def heatmap_csv(values: Mapping[DecoyCell, float], cells: Iterable[DecoyCell], fmt=_fmt) -> str:
    """Offset level rows (descending) x mu columns (ascending); blank where no cell exists."""
    cells = list(cells)
    mus = sorted({c.mu for c in cells})
    offsets = sorted({c.offset_fraction for c in cells}, reverse=True)
    lookup = {(c.mu, c.offset_fraction): values[c] for c in cells}
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["offset_fraction", *(f"mu={m:+.1f}" for m in mus)])
    for off in offsets:
        row = [f"{off:.1f}"]
        for m in mus:
            v = lookup.get((m, off))
            row.append("" if v is None else fmt(v))
        w.writerow(row)
    return buf.getvalue()


def write_sweep_artifacts(result: SweepResult, analysis: SweepAnalysis, outdir: str | Path) -> list[Path]:
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    def put(name: str, text: str) -> None:
        path = out / name
        path.write_text(text, encoding="utf-8")
        written.append(path)

    put("tallies.csv", tallies_csv(result, analysis))
    for cc in sorted(analysis.country_effects):
        eff = analysis.country_effects[cc]
        put(f"heatmap_delta_{cc}.csv", heatmap_csv({c: e.delta for c, e in eff.items()}, result.cells))
        put(f"heatmap_segment_counts_{cc}.csv", heatmap_csv(analysis.segment_counts[cc], result.cells, fmt=str))
    country_cells = {
        cc: {"optimal": [c.cell_id for c in sel.optimal], "non_optimal": [c.cell_id for c in sel.non_optimal]}
        for cc, sel in sorted(analysis.country_selection.items())
    }
    put("country_cells.json", json.dumps(country_cells, indent=2, sort_keys=True) + "\n")
    seg_rows = {s.key: [c.cell_id for c in cells] for s, cells in analysis.segment_optimal.items()}
    put("segment_optimal.json", json.dumps(seg_rows, indent=2, sort_keys=True) + "\n")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["segment", "country", "baseline_probability", "optimal_delta", "offset_group", "decoy_group"])
    for s in result.segments:
        g = analysis.groups[s]
        opt = optimal_delta(analysis.segment_effects[s], analysis.country_selection[s.country].optimal)
        w.writerow([s.key, s.country, _fmt(analysis.baseline[s].probability), _fmt(opt),
                    g["offset_group"], g["decoy_group"]])
    put("predicted_groups.csv", buf.getvalue())
    return written


def load_predicted_groups(path: str | Path) -> dict[str, dict[str, int]]:
    """Read ``predicted_groups.csv`` back as ``segment key -> groups``."""
    with open(path, newline="", encoding="utf-8") as fh:
        return {
            row["segment"]: {"offset_group": int(row["offset_group"]), "decoy_group": int(row["decoy_group"])}
            for row in csv.DictReader(fh)
        }

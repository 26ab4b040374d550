"""Run configuration loaded from TOML, with CLI overrides applied on top."""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .agents import AgentConfig
from .decoy_space import DEFAULT_AREA1_LADDER, ConfigurationError, DecoyCell, enumerate_cells
from .personas import COUNTRIES, Segment, enumerate_segments
from .scenarios import DEFAULT_BOTTLES_PER_KG, DEFAULT_FX, DEFAULT_RANGES
from .simulation import Schedule


def load_toml(path: str | Path) -> dict:
    with open(path, "rb") as fh:
        try:
            return tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigurationError(f"{path}: {exc}") from None


def default_config_path() -> Path:
    return Path(str(resources.files("decoynudge") / "data" / "default_config.toml"))


@dataclass
class Paths:
    output_dir: Path = Path("runs/default")
    cache: Path | None = None
    respondents: Path | None = None
    groups: Path | None = None
    impact_inputs: Path | None = None

    def resolved_cache(self) -> Path:
        return self.cache or self.output_dir / "cache.jsonl"

    def resolved_groups(self) -> Path:
        return self.groups or self.output_dir / "predicted_groups.csv"


@dataclass
class RunConfig:
    master_seed: int | None = None
    agent: AgentConfig = field(default_factory=AgentConfig)
    schedule: Schedule = field(default_factory=Schedule)
    area1_offset_ladder: tuple[float, ...] = DEFAULT_AREA1_LADDER
    cell_ids: tuple[str, ...] = ()
    segment_keys: tuple[str, ...] = ()
    countries: tuple[str, ...] = COUNTRIES
    k: int = 5
    top_k: int = 5
    ranges: dict[str, tuple[float, float]] = field(default_factory=lambda: dict(DEFAULT_RANGES))
    bottles_per_kg: float = DEFAULT_BOTTLES_PER_KG
    fx: dict[str, tuple[str, float]] = field(default_factory=lambda: dict(DEFAULT_FX))
    n_perm: int = 1000
    n_boot: int = 5000
    include_universal: bool = False
    paths: Paths = field(default_factory=Paths)

    def cells(self) -> list[DecoyCell]:
        grid = enumerate_cells(self.area1_offset_ladder)
        if not self.cell_ids:
            return grid
        by_id = {c.cell_id: c for c in grid}
        unknown = [c for c in self.cell_ids if c not in by_id]
        if unknown:
            raise ConfigurationError(f"cells not in the grid: {', '.join(unknown)}")
        return [by_id[c] for c in self.cell_ids]

    def segments(self) -> list[Segment]:
        segs = [s for s in enumerate_segments() if s.country in self.countries]
        if not self.segment_keys:
            return segs
        by_key = {s.key: s for s in segs}
        unknown = [k for k in self.segment_keys if k not in by_key]
        if unknown:
            raise ConfigurationError(f"segments unknown or outside the configured countries: {', '.join(unknown)}")
        return [by_key[k] for k in self.segment_keys]

    def effective_k(self) -> int:
        """Cells per optimal/non-optimal set; shrinks for partial grids so the sets stay disjoint."""
        return max(1, min(self.k, len(self.cells()) // 2))

    def as_dict(self) -> dict:
        d = asdict(self)
        d["paths"] = {k: (str(v) if v is not None else None) for k, v in asdict(self.paths).items()}
        return d

    def digest(self) -> str:
        blob = json.dumps(self.as_dict(), sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()

    def validate(self) -> None:
        self.cells()
        self.segments()
        for cc in self.countries:
            if cc not in COUNTRIES:
                raise ConfigurationError(f"unknown country {cc!r}")
            if cc not in self.fx:
                raise ConfigurationError(f"no exchange rate for country {cc}")
        for name in ("n_draws", "n_orders", "repetitions"):
            if getattr(self.schedule, name) < 1:
                raise ConfigurationError(f"schedule.{name} must be >= 1")
        if self.schedule.n_orders > 6:
            raise ConfigurationError("schedule.n_orders cannot exceed 6 (3! option orders)")
        if self.k < 1 or self.top_k < 1:
            raise ConfigurationError("k and top_k must be >= 1")
        if self.n_perm < 1 or self.n_boot < 1:
            raise ConfigurationError("n_perm and n_boot must be >= 1")


_SECTIONS = {"agent", "schedule", "decoy", "segments", "scenario", "fx", "paths", "analysis"}


def _path(base: Path, value: Any) -> Path | None:
    if value in (None, ""):
        return None
    p = Path(str(value)).expanduser()
    return p if p.is_absolute() else base / p


def config_from_mapping(doc: Mapping, base_dir: str | Path = ".") -> RunConfig:
    base = Path(base_dir)
    unknown = set(doc) - _SECTIONS - {"master_seed"}
    if unknown:
        raise ConfigurationError(f"unknown config keys: {', '.join(sorted(unknown))}")
    cfg = RunConfig()
    if "master_seed" in doc:
        cfg.master_seed = int(doc["master_seed"])

    agent = dict(doc.get("agent", {}))
    if agent.get("requests_per_second") in (0, 0.0):
        agent["requests_per_second"] = None
    try:
        cfg.agent = AgentConfig(**agent)
        cfg.schedule = Schedule(**doc.get("schedule", {}))
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from None

    decoy = doc.get("decoy", {})
    cfg.area1_offset_ladder = tuple(float(x) for x in decoy.get("area1_offset_ladder", DEFAULT_AREA1_LADDER))
    cfg.cell_ids = tuple(decoy.get("cells", ()))
    cfg.k = int(decoy.get("k", cfg.k))
    cfg.top_k = int(decoy.get("top_k", cfg.top_k))

    segs = doc.get("segments", {})
    cfg.countries = tuple(segs.get("countries", COUNTRIES))
    cfg.segment_keys = tuple(segs.get("include", ()))

    scen = doc.get("scenario", {})
    cfg.bottles_per_kg = float(scen.get("bottles_per_kg", cfg.bottles_per_kg))
    for name, rng in scen.get("ranges", {}).items():
        if name not in DEFAULT_RANGES:
            raise ConfigurationError(f"unknown range {name!r}")
        cfg.ranges[name] = (float(rng[0]), float(rng[1]))

    for cc, (cur, rate) in doc.get("fx", {}).items():
        cfg.fx[cc] = (str(cur), float(rate))

    paths = doc.get("paths", {})
    cfg.paths = Paths(
        output_dir=_path(base, paths.get("output_dir")) or base / "runs" / "default",
        cache=_path(base, paths.get("cache")),
        respondents=_path(base, paths.get("respondents")),
        groups=_path(base, paths.get("groups")),
        impact_inputs=_path(base, paths.get("impact_inputs")),
    )

    analysis = doc.get("analysis", {})
    cfg.n_perm = int(analysis.get("n_perm", cfg.n_perm))
    cfg.n_boot = int(analysis.get("n_boot", cfg.n_boot))
    cfg.include_universal = bool(analysis.get("include_universal", cfg.include_universal))
    cfg.validate()
    return cfg


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return config_from_mapping(load_toml(default_config_path()), Path.cwd())
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"config file not found: {p}")
    return config_from_mapping(load_toml(p), p.parent)

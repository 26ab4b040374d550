"""The 45-cell decoy parameter grid and decoy ticket attributes.

Area I holds asymmetrically dominated decoys (priced at or above the target,
offsetting no more than it). Area II holds slightly cheaper decoys with a much
smaller offset. A decoy's price is ``target + mu * (target - competitor)``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from decimal import Decimal
from enum import Enum

AREA1_MU = (0.0, 0.1, 0.2, 0.3, 0.4, 0.5)
AREA2_MU = (-0.1, -0.2)
AREA2_OFFSETS = (0.3, 0.4, 0.5, 0.6, 0.7)

# Reconstructed from the grid cardinality (6 x 6 - 1 = 35 Area-I cells).
DEFAULT_AREA1_LADDER = (1.0, 0.9, 0.8, 0.7, 0.6, 0.5)


class ConfigurationError(ValueError):
    pass


class DecoyArea(str, Enum):
    AREA_I = "AreaI_dominated"
    AREA_II = "AreaII_nondominated"


@dataclass(frozen=True)
class DecoyCell:
    mu: float
    offset_fraction: float

    @property
    def cell_id(self) -> str:
        return f"mu{self.mu:+.1f}_off{self.offset_fraction:.1f}"

    @property
    def area(self) -> DecoyArea:
        return DecoyArea.AREA_II if self.mu < 0 else DecoyArea.AREA_I

    @classmethod
    def from_id(cls, cell_id: str) -> "DecoyCell":
        try:
            mu_part, off_part = cell_id.split("_")
            return cls(float(mu_part[2:]), float(off_part[3:]))
        except (ValueError, IndexError) as exc:
            raise ValueError(f"malformed cell id {cell_id!r}") from exc


def _check_ladder(ladder) -> tuple[float, ...]:
    ladder = tuple(float(v) for v in ladder)
    if len(ladder) != 6:
        raise ConfigurationError(f"Area-I offset ladder needs 6 levels, got {len(ladder)}")
    if any(not 0.0 < v <= 1.0 for v in ladder):
        raise ConfigurationError("Area-I offset ladder values must lie in (0, 1]")
    if any(a <= b for a, b in zip(ladder, ladder[1:])):
        raise ConfigurationError("Area-I offset ladder must be strictly decreasing")
    if ladder[0] != 1.0:
        # without 1.0 the (mu=0, offset=1) exclusion would not remove a cell
        raise ConfigurationError("Area-I offset ladder must start at 1.0")
    return ladder


def enumerate_cells(area1_offset_ladder=DEFAULT_AREA1_LADDER) -> list[DecoyCell]:
    """35 Area-I cells (mu ascending, offset descending) then 10 Area-II cells."""
    ladder = _check_ladder(area1_offset_ladder)
    cells = [
        DecoyCell(mu, off)
        for mu in AREA1_MU
        for off in ladder
        if not (mu == 0.0 and off == 1.0)
    ]
    cells += [DecoyCell(mu, off) for mu in sorted(AREA2_MU) for off in AREA2_OFFSETS]
    return cells


def decoy_price(target_price, competitor_price, mu) -> Decimal:
    """Exact decimal decoy price; rounding to cents happens only when rendering."""
    target = Decimal(str(target_price))
    competitor = Decimal(str(competitor_price))
    if not target > competitor > 0:
        raise ValueError(
            f"decoy geometry needs target > competitor > 0 (got {target}, {competitor})"
        )
    return target + Decimal(str(mu)) * (target - competitor)


def decoy_offset(target_offset: float, cell: DecoyCell) -> float:
    if not target_offset > 0:
        raise ValueError(f"target offset must be positive, got {target_offset}")
    return target_offset * cell.offset_fraction


def classify_cell(cell: DecoyCell, area1_offset_ladder=DEFAULT_AREA1_LADDER) -> DecoyArea:
    ladder = _check_ladder(area1_offset_ladder)
    if cell.mu < 0:
        if cell.mu not in AREA2_MU or cell.offset_fraction not in AREA2_OFFSETS:
            raise ValueError(f"cell {cell.cell_id} is not in the decoy grid")
        return DecoyArea.AREA_II
    if cell.mu not in AREA1_MU or cell.offset_fraction not in ladder:
        raise ValueError(f"cell {cell.cell_id} is not in the decoy grid")
    if cell.mu == 0.0 and cell.offset_fraction == 1.0:
        raise ValueError("cell (mu=0, offset=1.0) duplicates the target and is not in the grid")
    # nominal prices: weak dominance on both attributes, strict on at least one
    price = decoy_price(100, 90, cell.mu)
    worse_price, worse_offset = price > 100, cell.offset_fraction < 1.0
    assert price >= 100 and cell.offset_fraction <= 1.0 and (worse_price or worse_offset)
    return DecoyArea.AREA_I


def grid_to_csv(cells: list[DecoyCell]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["cell_id", "mu", "offset_fraction", "area"])
    for cell in cells:
        writer.writerow([cell.cell_id, f"{cell.mu:.1f}", f"{cell.offset_fraction:.1f}", cell.area.value])
    return buf.getvalue()

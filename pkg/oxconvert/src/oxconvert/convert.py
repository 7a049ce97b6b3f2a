"""Emit the canonical CSV dataset from a loaded archive.

Output format: ``cells.csv`` with ``cell_id,rated_capacity_mah`` and one
``diagnostics_<cell_id>.csv`` per cell with
``cycle_number,time_s,voltage_v,current_a,charge_mah,temperature_c``.
Values pass through untouched (shortest round-trip decimal, so parsing
an emitted number recovers the source float bit for bit); the only
synthesized columns are the rated capacity, the cycle number, and the
constant-current fill, since the source stores none of them.
"""

import csv
import logging
from dataclasses import dataclass
from pathlib import Path

from .archive import load_archive
from .errors import ConverterError

logger = logging.getLogger(__name__)

RATED_CAPACITY_MAH = 740.0
CC_CURRENT_A = 0.74          # 1C for the 740 mAh cells
CYCLES_PER_CHARACTERIZATION = 100

CELLS_HEADER = ("cell_id", "rated_capacity_mah")
DIAG_HEADER = ("cycle_number", "time_s", "voltage_v", "current_a",
               "charge_mah", "temperature_c")


@dataclass(frozen=True)
class CellSummary:
    cell_id: str
    characterizations: int
    rows: int
    filename: str


@dataclass(frozen=True)
class ConversionSummary:
    out_dir: Path
    cells: tuple

    @property
    def total_rows(self) -> int:
        return sum(c.rows for c in self.cells)

    @property
    def filenames(self) -> tuple:
        return ("cells.csv",) + tuple(c.filename for c in self.cells)


def _num(value: float) -> str:
    return repr(float(value))


def convert_archive(in_path, out_dir,
                    cycles_per_characterization: int =
                    CYCLES_PER_CHARACTERIZATION) -> ConversionSummary:
    """Write the CSV dataset; returns what was written per cell."""
    spacing = int(cycles_per_characterization)
    if spacing < 1:
        raise ConverterError(
            f"cycles per characterization must be >= 1, got {spacing}")
    cells = load_archive(in_path)

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    with open(out_dir / "cells.csv", "w", newline="",
              encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CELLS_HEADER)
        for cell in cells:
            writer.writerow([cell.cell_id, _num(RATED_CAPACITY_MAH)])

    summaries = []
    fill = _num(CC_CURRENT_A)
    for cell in cells:
        filename = f"diagnostics_{cell.cell_id}.csv"
        rows = 0
        with open(out_dir / filename, "w", newline="",
                  encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(DIAG_HEADER)
            for record in cell.records:
                cycle = record.index * spacing
                for t, v, q, temp in zip(record.time_s, record.voltage_v,
                                         record.charge_mah,
                                         record.temperature_c):
                    writer.writerow([cycle, _num(t), _num(v), fill,
                                     _num(q), _num(temp)])
                    rows += 1
        summaries.append(CellSummary(cell.cell_id, len(cell.records),
                                     rows, filename))
        logger.info("%s: %d characterizations, %d rows", cell.cell_id,
                    len(cell.records), rows)
    return ConversionSummary(out_dir=out_dir, cells=tuple(summaries))

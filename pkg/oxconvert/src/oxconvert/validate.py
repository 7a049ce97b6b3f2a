"""Check an emitted CSV dataset against the archive it came from.

Re-reads both sides independently: every cell must be listed, every
per-characterization row group must have exactly the source length, and
every voltage must match the source within 1e-6 V. Mismatches are
reported with cell and line number; a handful per cell is enough to
localize a fault, so reporting caps there.
"""

import csv
from dataclasses import dataclass
from pathlib import Path

from .archive import load_archive
from .convert import DIAG_HEADER

VOLTAGE_TOL_V = 1e-6
_MAX_VALUE_MISMATCHES = 5


@dataclass(frozen=True)
class ValidationReport:
    ok: bool
    mismatches: tuple
    cells_checked: int
    rows_checked: int

    def lines(self) -> list:
        status = "pass" if self.ok else "fail"
        head = (f"{status}: {self.cells_checked} cells, "
                f"{self.rows_checked} rows checked")
        return [head] + [f"  {m}" for m in self.mismatches]


def _read_rows(path: Path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != list(DIAG_HEADER):
            return None, f"{path.name}: unexpected header {header}"
        return [row for row in reader if row], None


def _check_cell(cell, path: Path, problems: list) -> int:
    """Append this cell's mismatches; returns rows actually compared."""
    if not path.is_file():
        problems.append(f"{path.name}: missing")
        return 0
    rows, bad_header = _read_rows(path)
    if bad_header:
        problems.append(bad_header)
        return 0

    expected = sum(len(r) for r in cell.records)
    if len(rows) != expected:
        problems.append(f"{cell.cell_id}: {len(rows)} rows written, "
                        f"source has {expected}")
        return 0

    compared = 0
    reported = 0
    line = 2  # first data row of the CSV
    for record in cell.records:
        for i, source_v in enumerate(record.voltage_v):
            row = rows[compared]
            try:
                written_v = float(row[2])
            except (ValueError, IndexError):
                problems.append(f"{cell.cell_id} line {line}: "
                                f"unparseable voltage in {row!r}")
                return compared
            if abs(written_v - source_v) > VOLTAGE_TOL_V:
                if reported < _MAX_VALUE_MISMATCHES:
                    problems.append(
                        f"{cell.cell_id} line {line}: voltage {written_v!r} "
                        f"vs source {float(source_v)!r} "
                        f"(characterization {record.index}, sample {i})")
                reported += 1
            compared += 1
            line += 1
    if reported > _MAX_VALUE_MISMATCHES:
        problems.append(f"{cell.cell_id}: "
                        f"{reported - _MAX_VALUE_MISMATCHES} more voltage "
                        "mismatches not listed")
    return compared


def validate_conversion(in_path, out_dir) -> ValidationReport:
    cells = load_archive(in_path)
    out_dir = Path(out_dir)
    problems: list = []

    listed = set()
    cells_path = out_dir / "cells.csv"
    if cells_path.is_file():
        with open(cells_path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            next(reader, None)
            listed = {row[0] for row in reader if row}
    else:
        problems.append("cells.csv: missing")

    rows_checked = 0
    for cell in cells:
        if cell.cell_id not in listed:
            problems.append(f"cells.csv: {cell.cell_id} not listed")
        rows_checked += _check_cell(
            cell, out_dir / f"diagnostics_{cell.cell_id}.csv", problems)

    return ValidationReport(ok=not problems, mismatches=tuple(problems),
                            cells_checked=len(cells),
                            rows_checked=rows_checked)

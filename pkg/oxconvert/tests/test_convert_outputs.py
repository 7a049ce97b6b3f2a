"""What convert_archive writes, and that it writes it twice the same."""

import csv

import pytest

from archives import build_archive, charge_step
from oxconvert.convert import convert_archive
from oxconvert.errors import ConverterError


def read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return rows[0], rows[1:]


class TestOutputs:
    def test_file_inventory_and_summary(self, small_archive, tmp_path):
        path, source = small_archive
        out = tmp_path / "out"
        summary = convert_archive(path, out)
        assert sorted(p.name for p in out.iterdir()) == [
            "cells.csv", "diagnostics_Cell1.csv", "diagnostics_Cell2.csv"]
        assert summary.filenames == ("cells.csv", "diagnostics_Cell1.csv",
                                     "diagnostics_Cell2.csv")
        by_id = {c.cell_id: c for c in summary.cells}
        assert by_id["Cell1"].characterizations == 3
        assert by_id["Cell1"].rows == 8 + 7 + 9
        assert by_id["Cell2"].rows == 6 + 5
        assert summary.total_rows == 35

    def test_cells_csv_rates_everything_740(self, small_archive, tmp_path):
        path, _ = small_archive
        convert_archive(path, tmp_path / "out")
        header, rows = read_csv(tmp_path / "out" / "cells.csv")
        assert header == ["cell_id", "rated_capacity_mah"]
        assert rows == [["Cell1", "740.0"], ["Cell2", "740.0"]]

    def test_cycle_numbers_step_by_default_spacing(self, small_archive,
                                                   tmp_path):
        path, _ = small_archive
        convert_archive(path, tmp_path / "out")
        _, rows = read_csv(tmp_path / "out" / "diagnostics_Cell1.csv")
        assert sorted({r[0] for r in rows}, key=int) == ["0", "100", "200"]
        assert rows[0][0] == "0"

    def test_custom_spacing(self, small_archive, tmp_path):
        path, _ = small_archive
        convert_archive(path, tmp_path / "out",
                        cycles_per_characterization=50)
        _, rows = read_csv(tmp_path / "out" / "diagnostics_Cell2.csv")
        assert sorted({r[0] for r in rows}, key=int) == ["0", "50"]

    def test_row_count_matches_source_arrays(self, small_archive, tmp_path):
        path, source = small_archive
        convert_archive(path, tmp_path / "out")
        for cell_id, chars in source.items():
            _, rows = read_csv(tmp_path / "out" /
                               f"diagnostics_{cell_id}.csv")
            assert len(rows) == sum(len(step["C1ch"]["t"])
                                    for step in chars.values())

    def test_values_pass_through_bit_exact(self, small_archive, tmp_path):
        path, source = small_archive
        convert_archive(path, tmp_path / "out")
        _, rows = read_csv(tmp_path / "out" / "diagnostics_Cell1.csv")
        step = source["Cell1"]["cyc0000"]["C1ch"]
        for i in range(len(step["t"])):
            row = rows[i]
            assert float(row[1]) == step["t"][i]
            assert float(row[2]) == step["v"][i]
            assert float(row[4]) == step["q"][i]
            assert float(row[5]) == step["T"][i]

    def test_current_column_is_the_1c_fill(self, small_archive, tmp_path):
        path, _ = small_archive
        convert_archive(path, tmp_path / "out")
        _, rows = read_csv(tmp_path / "out" / "diagnostics_Cell2.csv")
        assert {r[3] for r in rows} == {"0.74"}

    def test_reruns_are_byte_identical(self, small_archive, tmp_path):
        path, _ = small_archive
        convert_archive(path, tmp_path / "a")
        convert_archive(path, tmp_path / "b")
        for name in ("cells.csv", "diagnostics_Cell1.csv",
                     "diagnostics_Cell2.csv"):
            assert ((tmp_path / "a" / name).read_bytes()
                    == (tmp_path / "b" / name).read_bytes())

    def test_empty_cell_not_emitted(self, tmp_path):
        archive = build_archive(
            tmp_path / "a.mat",
            {"Cell1": {"cyc0000": {"C1ch": charge_step(4, 1)}},
             "Cell2": {}})
        summary = convert_archive(archive, tmp_path / "out")
        assert [c.cell_id for c in summary.cells] == ["Cell1"]
        assert not (tmp_path / "out" / "diagnostics_Cell2.csv").exists()
        _, rows = read_csv(tmp_path / "out" / "cells.csv")
        assert rows == [["Cell1", "740.0"]]

    def test_bad_spacing_rejected(self, small_archive, tmp_path):
        path, _ = small_archive
        with pytest.raises(ConverterError, match=">= 1"):
            convert_archive(path, tmp_path / "out",
                            cycles_per_characterization=0)

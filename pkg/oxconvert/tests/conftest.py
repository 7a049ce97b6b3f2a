import pytest

from archives import build_archive, charge_step, decoys


@pytest.fixture()
def small_archive(tmp_path):
    """Two cells, three and two characterizations, with decoy steps."""
    cells = {
        "Cell1": {
            "cyc0000": {"C1ch": charge_step(8, 10), **decoys(4, 100)},
            "cyc0100": {"C1ch": charge_step(7, 11), **decoys(4, 110)},
            "cyc0200": {"C1ch": charge_step(9, 12), **decoys(4, 120)},
        },
        "Cell2": {
            "cyc0000": {"C1ch": charge_step(6, 20), **decoys(4, 200)},
            "cyc0100": {"C1ch": charge_step(5, 21), **decoys(4, 210)},
        },
    }
    return build_archive(tmp_path / "small.mat", cells), cells

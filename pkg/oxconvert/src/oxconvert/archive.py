"""Read charge records out of the vendor .mat archive.

The archive is a MATLAB container holding one struct per cell
(``Cell1`` .. ``Cell8`` in the published copy). Each cell struct has one
field per characterization (``cyc0000``, ``cyc0100``, ...), and each
characterization holds step structs such as ``C1ch`` (1C charge),
``C1dc``, ``OCVch``, ``OCVdc``. Only the charge step is read; it carries
the four arrays ``t`` (s), ``v`` (V), ``q`` (mAh), ``T`` (degC).

Mirrors rename things, so nothing above is hard-coded: cells,
characterizations, and the charge step are discovered by key inspection
(see the README for the exact rules). Orderings are derived from
trailing integers in the key names, falling back to plain name order,
which makes every downstream artifact deterministic.
"""

import logging
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import loadmat

from .errors import ArchiveError

logger = logging.getLogger(__name__)

CHARGE_FIELDS = ("t", "v", "q", "T")

_CELL_KEY = re.compile(r"cell\D*\d+$", re.IGNORECASE)
_TRAILING_INT = re.compile(r"(\d+)$")


@dataclass(frozen=True)
class VendorRecord:
    """One characterization's charge step, arrays in source units."""

    cell_label: str
    index: int
    time_s: np.ndarray
    voltage_v: np.ndarray
    charge_mah: np.ndarray
    temperature_c: np.ndarray

    def __post_init__(self):
        where = f"{self.cell_label} characterization {self.index}"
        n = len(self.time_s)
        for name in ("voltage_v", "charge_mah", "temperature_c"):
            if len(getattr(self, name)) != n:
                raise ArchiveError(f"{where}: {name} has "
                                   f"{len(getattr(self, name))} samples, "
                                   f"time has {n}")
        if n == 0:
            raise ArchiveError(f"{where}: empty charge step")
        if np.any(np.diff(self.time_s) < 0.0):
            raise ArchiveError(f"{where}: time runs backwards")

    def __len__(self) -> int:
        return len(self.time_s)


@dataclass(frozen=True)
class VendorCell:
    cell_id: str
    records: tuple


def _is_struct(obj) -> bool:
    return hasattr(obj, "_fieldnames")


def _ordered(names) -> list:
    """Trailing-integer order where available, name order otherwise."""
    def key(name):
        match = _TRAILING_INT.search(name)
        if match:
            return (0, int(match.group(1)), name)
        return (1, 0, name)
    return sorted(names, key=key)


def _load_variables(path: Path) -> dict:
    try:
        data = loadmat(str(path), squeeze_me=True, struct_as_record=False)
    except FileNotFoundError:
        raise ArchiveError(f"cannot read {path}: no such file") from None
    except NotImplementedError:
        raise ArchiveError(
            f"{path} is a v7.3 (HDF5) container; re-save it as v7 or "
            "earlier") from None
    except (ValueError, OSError) as exc:
        raise ArchiveError(f"cannot read {path}: {exc}") from None
    return {k: v for k, v in data.items() if not k.startswith("__")}


def _cell_keys(variables: dict) -> list:
    structs = [k for k, v in variables.items() if _is_struct(v)]
    named = [k for k in structs if _CELL_KEY.search(k)]
    return _ordered(named if named else structs)


def _charge_step(char, where: str):
    """Find the struct carrying t/v/q/T inside one characterization."""
    if all(f in char._fieldnames for f in CHARGE_FIELDS):
        return char  # flat layout: arrays sit directly on the struct
    candidates = [f for f in char._fieldnames
                  if _is_struct(getattr(char, f))
                  and all(a in getattr(char, f)._fieldnames
                          for a in CHARGE_FIELDS)]
    for field in candidates:
        if field.lower().startswith("c1ch"):
            return getattr(char, field)
    for field in candidates:
        low = field.lower()
        if "ch" in low and "dc" not in low and "ocv" not in low:
            return getattr(char, field)
    raise ArchiveError(f"{where}: no charge step among fields "
                       f"{char._fieldnames}")


def _array(step, field: str) -> np.ndarray:
    return np.atleast_1d(np.asarray(getattr(step, field), dtype=float)
                         .ravel())


def load_archive(path) -> list:
    """All cells with at least one characterization, in stable order."""
    variables = _load_variables(Path(path))
    keys = _cell_keys(variables)
    if not keys:
        raise ArchiveError(f"{path}: no cell structs found "
                           f"(variables: {sorted(variables) or 'none'})")

    cells = []
    for key in keys:
        struct = variables[key]
        char_names = _ordered(
            [f for f in struct._fieldnames if _is_struct(getattr(struct, f))])
        records = []
        for index, name in enumerate(char_names):
            step = _charge_step(getattr(struct, name), f"{key}.{name}")
            records.append(VendorRecord(
                cell_label=key, index=index,
                time_s=_array(step, "t"), voltage_v=_array(step, "v"),
                charge_mah=_array(step, "q"),
                temperature_c=_array(step, "T")))
        if not records:
            logger.warning("%s: no characterizations, skipped", key)
            continue
        cells.append(VendorCell(cell_id=key, records=tuple(records)))
    return cells

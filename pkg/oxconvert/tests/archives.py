"""Builders for miniature .mat archives shaped like the published structs."""

import numpy as np
from scipy.io import savemat


def charge_step(n, seed, v_lo=2.9, v_hi=4.2):
    """One plausible charge record with full-precision float64 values."""
    rng = np.random.default_rng(seed)
    t = np.cumsum(rng.uniform(0.5, 2.0, n))
    v = np.linspace(v_lo, v_hi, n) + rng.normal(0.0, 1e-4, n)
    q = np.cumsum(rng.uniform(0.1, 3.0, n))
    temp = 25.0 + rng.normal(0.0, 0.2, n)
    return {"t": t, "v": v, "q": q, "T": temp}


def decoys(n, seed):
    """Step structs the converter must ignore."""
    return {"C1dc": charge_step(n, seed + 1),
            "OCVch": charge_step(n, seed + 2),
            "OCVdc": charge_step(n, seed + 3)}


def build_archive(path, cells):
    """Write a struct tree; ``cells`` maps cell key -> {char key -> step}."""
    savemat(str(path), cells)
    return path

"""Statistical comparisons used by the verification suites."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import stats

__all__ = ["MixedKS", "mixed_ks_2samp", "chi2_gof", "moment_compare"]


@dataclass
class MixedKS:
    """Two-sample comparison for laws with an atom at zero: the atom
    frequencies are compared by a binomial z-test and the positive parts by a
    Kolmogorov-Smirnov test."""

    ks_statistic: float
    ks_pvalue: float
    atom_zscore: float
    atom_freqs: tuple

    def passed(self, p_floor: float = 0.01, atom_sigmas: float = 4.0) -> bool:
        return self.ks_pvalue > p_floor and abs(self.atom_zscore) <= atom_sigmas


def mixed_ks_2samp(a, b, atom: float = 0.0, tol: float = 1e-12) -> MixedKS:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    a_zero = np.abs(a - atom) <= tol
    b_zero = np.abs(b - atom) <= tol
    pa, pb = a_zero.mean(), b_zero.mean()
    pool = (a_zero.sum() + b_zero.sum()) / (a.size + b.size)
    if 0.0 < pool < 1.0:
        se = math.sqrt(pool * (1 - pool) * (1 / a.size + 1 / b.size))
        z = (pa - pb) / se
    else:
        z = 0.0
    a_pos, b_pos = a[~a_zero], b[~b_zero]
    if a_pos.size == 0 or b_pos.size == 0:
        return MixedKS(0.0, 1.0, z, (pa, pb))
    ks = stats.ks_2samp(a_pos, b_pos)
    return MixedKS(float(ks.statistic), float(ks.pvalue), z, (pa, pb))


def chi2_gof(counts, probs) -> tuple[float, float]:
    """Chi-square goodness of fit of observed counts against cell
    probabilities; returns (statistic, p-value)."""
    counts = np.asarray(counts, dtype=float)
    probs = np.asarray(probs, dtype=float)
    if counts.size != probs.size:
        raise ValueError("counts and probs must have matching lengths")
    if not math.isclose(probs.sum(), 1.0, rel_tol=1e-9):
        raise ValueError(f"cell probabilities sum to {probs.sum()!r}, not 1")
    n = counts.sum()
    expected = n * probs
    stat = float(((counts - expected) ** 2 / expected).sum())
    p = float(stats.chi2.sf(stat, counts.size - 1))
    return stat, p


def moment_compare(a, b, sigmas: float = 3.0) -> dict:
    """First and second moment comparison of two samples, in units of the
    combined Monte Carlo standard error."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    out = {}
    for name, fa, fb in (("mean", a, b), ("second", a**2, b**2)):
        se = math.sqrt(fa.var(ddof=1) / fa.size + fb.var(ddof=1) / fb.size)
        delta = fa.mean() - fb.mean()
        out[name] = {
            "a": fa.mean(),
            "b": fb.mean(),
            "zscore": delta / se if se > 0 else 0.0,
            "pass": abs(delta) <= sigmas * se if se > 0 else delta == 0,
        }
    return out

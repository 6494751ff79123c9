"""Welch two-sample comparison at a fixed confidence level."""

from dataclasses import dataclass

import numpy as np
from scipy import stats


@dataclass(frozen=True)
class WelchResult:
    better: str            # "A", "B" or "indistinguishable"
    interval: tuple        # confidence interval for mean(B) - mean(A)
    dof: float
    diff: float
    n_a: int
    n_b: int
    note: str = ""


def welch_t_test(a, b, confidence=0.90) -> WelchResult:
    """Welch-Satterthwaite interval for ``mean(b) - mean(a)``.

    The verdict is indistinguishable when the interval contains zero,
    otherwise the side with the larger mean.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if len(a) < 2 or len(b) < 2:
        raise ValueError("each sample needs at least two observations")
    va, vb = a.var(ddof=1) / len(a), b.var(ddof=1) / len(b)
    diff = float(b.mean() - a.mean())
    se2 = va + vb
    if se2 == 0.0:
        if diff == 0.0:
            return WelchResult("indistinguishable", (0.0, 0.0), float("nan"), 0.0,
                               len(a), len(b), "zero variance")
        return WelchResult("B" if diff > 0 else "A", (diff, diff), float("inf"), diff,
                           len(a), len(b), "zero variance")
    wa, wb = va / se2, vb / se2    # scale-free form avoids underflow in the squares
    dof = 1.0 / (wa ** 2 / (len(a) - 1) + wb ** 2 / (len(b) - 1))
    half = stats.t.ppf(0.5 + confidence / 2, dof) * np.sqrt(se2)
    lo, hi = diff - half, diff + half
    if lo <= 0.0 <= hi:
        verdict = "indistinguishable"
    else:
        verdict = "B" if diff > 0 else "A"
    return WelchResult(verdict, (float(lo), float(hi)), float(dof), diff, len(a), len(b))

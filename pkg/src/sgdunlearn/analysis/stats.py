"""Correlation coefficients."""

from __future__ import annotations

import numpy as np
from scipy.stats import rankdata


class UndefinedCorrelation(ValueError):
    """One of the inputs has zero variance."""


def _pair(xs, ys):
    x = np.asarray(xs, dtype=np.float64).ravel()
    y = np.asarray(ys, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.size} vs {y.size}")
    if x.size < 2:
        raise ValueError("need at least two points")
    return x, y


def pearson(xs, ys) -> float:
    x, y = _pair(xs, ys)
    dx = x - x.mean()
    dy = y - y.mean()
    sx = np.sqrt(dx @ dx)
    sy = np.sqrt(dy @ dy)
    if sx == 0 or sy == 0:
        raise UndefinedCorrelation("zero variance")
    return float(np.clip((dx @ dy) / (sx * sy), -1.0, 1.0))


def spearman(xs, ys) -> float:
    """Pearson correlation of average ranks."""
    x, y = _pair(xs, ys)
    return pearson(rankdata(x), rankdata(y))

"""SD loss on a two-output linear classifier, and the minimum weight change to a loss minimum."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit


def sd_loss_binary(a, b, gamma, label=0):
    """Cross-entropy plus ``gamma`` times the std of the two logits ``(a, b)``.

    ``sqrt((a^2 + b^2 - 0.5 (a + b)^2) / 2)`` equals ``|a - b| / 2``. The CE
    part is evaluated as ``log(1 + exp(b - a))`` for label 0.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    margin = a - b if label == 0 else b - a
    ce = np.logaddexp(0.0, -margin)
    sd = np.sqrt(np.maximum(a * a + b * b - 0.5 * (a + b) ** 2, 0.0) / 2.0)
    out = ce + gamma * sd
    return float(out) if out.ndim == 0 else out


def sd_loss_binary_grad(a, b, gamma, label=0):
    """``(dL/da, dL/db)``; the SD term contributes 0 on the line ``a == b``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    sign = 1.0 if label == 0 else -1.0
    # d/d(margin) log(1 + exp(-margin)) = -sigmoid(-margin)
    dm = -expit(-sign * (a - b))
    half = 0.5 * gamma * np.sign(a - b)
    return sign * dm + half, -sign * dm - half


def flip_margin(gamma):
    """Margin ``a - b`` where the label-0 loss stops decreasing, or ``inf`` when gamma is 0.

    For ``0 < gamma < 1`` it is ``log(2 / gamma - 1)``; for ``gamma >= 1`` the minimum sits
    on ``a == b``.
    """
    if gamma <= 0:
        return float("inf")
    if gamma >= 1:
        return 0.0
    return float(np.log(2.0 / gamma - 1.0))


def landscape_grid(gamma, a_range=(-5.0, 5.0), b_range=(-5.0, 5.0), resolution=41, label=0):
    """Rows ``(a, b, loss, -dL/da, -dL/db)`` on a ``resolution x resolution`` grid."""
    if resolution < 2:
        raise ValueError("resolution must be at least 2")
    aa, bb = np.meshgrid(np.linspace(*a_range, resolution), np.linspace(*b_range, resolution),
                         indexing="ij")
    loss = sd_loss_binary(aa, bb, gamma, label)
    ga, gb = sd_loss_binary_grad(aa, bb, gamma, label)
    return np.column_stack([aa.ravel(), bb.ravel(), np.ravel(loss), -ga.ravel(), -gb.ravel()])


def grid_flip_margin(grid):
    """Smallest ``a - b > 0`` on the grid where ``-dL/da`` is no longer positive (diagnostic)."""
    a, b, _, nga, _ = grid.T
    margin = a - b
    hits = margin[(margin > 0) & (nga <= 0)]
    return float(hits.min()) if hits.size else float("inf")


@dataclass
class LagrangianSolution:
    u1: np.ndarray
    u2: np.ndarray
    epsilon: float
    squared_norm: float
    x: np.ndarray

    @property
    def constraint_residual(self):
        return float(abs((self.u1 - self.u2) @ self.x - self.epsilon))


def min_weight_change(x, epsilon) -> LagrangianSolution:
    """Smallest ``|u1|^2 + |u2|^2`` with ``(u1 - u2) . x = epsilon``.

    Starting from equal rows (``a0 == b0``), this is the least weight change
    that puts the margin at ``epsilon``: ``u1 = -u2 = epsilon x / (2 |x|^2)``,
    with squared norm ``epsilon^2 / (2 |x|^2)``.
    """
    x = np.asarray(x, dtype=np.float64)
    nx2 = float(x @ x)
    if not nx2 > 0:
        raise ValueError("x must be nonzero")
    u1 = epsilon / (2.0 * nx2) * x
    return LagrangianSolution(u1=u1, u2=-u1, epsilon=float(epsilon),
                              squared_norm=epsilon ** 2 / (2.0 * nx2), x=x)

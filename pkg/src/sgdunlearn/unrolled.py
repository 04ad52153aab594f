"""Taylor-unrolled SGD: first-order gradient sum plus the recursive curvature term.

Starting from ``w0`` and batches ``x_0 .. x_{t-1}``::

    w_t ~= w0 - eta * sum_i g_i + sum_i f(i)
    f(i) = -eta * H_i (-eta * sum_{j<i} g_j + sum_{j<i} f(j)),   f(0) = 0

with every gradient ``g_i`` and Hessian ``H_i`` taken at ``w0``. The
recursion is exact whenever the loss is quadratic.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .hessian import HvpConfig, hvp
from .nn import CE


@dataclass
class UnrollResult:
    predicted_final: np.ndarray
    first_sum: np.ndarray
    second_sum: np.ndarray
    residual_vs_sgd: float
    eta2_slice: np.ndarray | None = None
    sgd_final: np.ndarray | None = None


def _hvp_or_zero(model, batch, spec, v, cfg):
    if not np.any(v):
        return np.zeros_like(v)
    return hvp(model, batch, spec, v, cfg)


def replay_sgd(model, batches, spec, eta):
    w = model.params.copy()
    for batch in batches:
        w = w - eta * model.with_params(w).grad(batch, spec)
    return w


def unroll_predict(model, batches: Sequence, spec=CE, eta=0.1, cfg: HvpConfig = HvpConfig(),
                   order="full_recursive") -> UnrollResult:
    """Predict the weights after SGD over ``batches`` using only quantities at ``w0``.

    ``order="first_only"`` drops the curvature term. Also reports the
    eta-squared slice ``sum_i eta^2 H_i sum_{j<i} g_j`` and the residual
    against an actual SGD replay from the same start.
    """
    if order not in ("first_only", "full_recursive"):
        raise ValueError(f"unknown order {order!r}")
    batches = list(batches)
    if not batches:
        raise ValueError("need at least one batch")
    w0 = model.params
    grads = [model.grad(b, spec) for b in batches]
    first_sum = -eta * np.sum(grads, axis=0)
    second_sum = np.zeros_like(w0)
    eta2 = np.zeros_like(w0)
    if order == "full_recursive":
        g_prefix = np.zeros_like(w0)
        f_prefix = np.zeros_like(w0)
        for i, batch in enumerate(batches):
            if i > 0:
                f_i = -eta * _hvp_or_zero(model, batch, spec, -eta * g_prefix + f_prefix, cfg)
                eta2 += eta * eta * _hvp_or_zero(model, batch, spec, g_prefix, cfg)
                f_prefix = f_prefix + f_i
            g_prefix = g_prefix + grads[i]
        second_sum = f_prefix
    predicted = w0 + first_sum + second_sum
    actual = replay_sgd(model, batches, spec, eta)
    return UnrollResult(
        predicted_final=predicted,
        first_sum=first_sum,
        second_sum=second_sum,
        residual_vs_sgd=float(np.linalg.norm(predicted - actual)),
        eta2_slice=eta2 if order == "full_recursive" else None,
        sgd_final=actual,
    )


def target_term_pairs(t: int, i_star: int):
    """Index pairs ``(i, j)`` of the eta^2 products ``H_i g_j`` that involve batch ``i_star``."""
    if t < 1:
        raise ValueError("t must be positive")
    if not 0 <= i_star < t:
        raise ValueError(f"i_star={i_star} outside [0, {t})")
    return [(i, j) for i in range(1, t) for j in range(i) if i_star in (i, j)]


def count_terms_with_target(t: int, i_star: int) -> int:
    return len(target_term_pairs(t, i_star))


@dataclass(frozen=True)
class ErrorInputs:
    eta: float
    t: int
    delta_w_norm: float
    sigma_avg: float

    def __post_init__(self):
        if self.t < 1:
            raise ValueError("t must be at least 1")
        if not self.eta >= 0:
            raise ValueError("eta must be nonnegative")
        for name in ("eta", "delta_w_norm", "sigma_avg"):
            val = getattr(self, name)
            if not np.isfinite(val) or val < 0:
                raise ValueError(f"{name} must be finite and nonnegative")


def unlearning_error(inp: ErrorInputs) -> float:
    """``eta^2 * (|w_t - w_0| / t) * sigma_avg * (t^2 - t) / 2``."""
    t = inp.t
    return inp.eta ** 2 * (inp.delta_w_norm / t) * inp.sigma_avg * (t * t - t) / 2.0


def sigma_average(samples) -> float:
    """Mean of the sampled sigma_1 values; ``samples`` holds ``(step, sigma)`` pairs."""
    samples = list(samples)
    if not samples:
        raise ValueError("no sigma samples")
    return float(np.mean([s for _, s in samples]))

"""Hessian-vector products and spectral-norm estimation for the loss Hessian."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .exceptions import SizeError
from .nn import CE

DENSE_LIMIT = 400


@dataclass(frozen=True)
class HvpConfig:
    epsilon_scale: float = 1e-5
    power_iters_max: int = 100
    power_tol: float = 1e-6
    probe_seed: int = 0

    def __post_init__(self):
        if not 0 < self.epsilon_scale <= 1e-2:
            raise ValueError("epsilon_scale must lie in (0, 1e-2]")
        if self.power_tol <= 0:
            raise ValueError("power_tol must be positive")
        if self.power_iters_max < 1:
            raise ValueError("power_iters_max must be at least 1")


class SigmaEstimate(NamedTuple):
    value: float
    converged: bool
    iterations: int


def hvp(model, batch, spec=CE, v=None, cfg: HvpConfig = HvpConfig()) -> np.ndarray:
    """``H v`` from a central difference of the gradient along ``v / |v|``."""
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v)
    if not norm > 0:
        raise ValueError("hvp needs a nonzero direction")
    u = v / norm
    w = model.params
    eps = cfg.epsilon_scale * (1.0 + np.max(np.abs(w)))
    g_plus = model.with_params(w + eps * u).grad(batch, spec)
    g_minus = model.with_params(w - eps * u).grad(batch, spec)
    return (g_plus - g_minus) / (2.0 * eps) * norm


def dense_hessian(model, batch, spec=CE, cfg: HvpConfig = HvpConfig(), return_asymmetry=False):
    """Full Hessian by central differences per coordinate, symmetrised.

    With ``return_asymmetry`` also returns ``max|H - H^T|`` of the raw
    finite-difference matrix.
    """
    w = model.params
    n = w.size
    if n > DENSE_LIMIT:
        raise SizeError(f"{n} parameters exceeds the dense limit of {DENSE_LIMIT}")
    h = np.empty((n, n))
    for i in range(n):
        step = cfg.epsilon_scale * (1.0 + abs(w[i]))
        e = np.zeros(n)
        e[i] = step
        h[i] = (model.with_params(w + e).grad(batch, spec) - model.with_params(w - e).grad(batch, spec)) / (
            2.0 * step
        )
    asym = float(np.max(np.abs(h - h.T))) if n else 0.0
    h = 0.5 * (h + h.T)
    if return_asymmetry:
        return h, asym
    return h


def _power(apply, n, cfg: HvpConfig) -> SigmaEstimate:
    """Largest eigenvalue of the PSD operator ``apply`` (which is H^2 here)."""
    rng = np.random.default_rng(cfg.probe_seed)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    rq_prev = None
    rq = 0.0
    for it in range(1, cfg.power_iters_max + 1):
        z, rq = apply(v)
        zn = np.linalg.norm(z)
        if zn == 0.0:
            return SigmaEstimate(0.0, True, it)
        v = z / zn
        if rq_prev is not None and abs(rq - rq_prev) <= cfg.power_tol * abs(rq):
            return SigmaEstimate(rq, True, it)
        rq_prev = rq
    return SigmaEstimate(rq, False, cfg.power_iters_max)


def top_singular_value(model, batch, spec=CE, cfg: HvpConfig = HvpConfig(), mode="spectral") -> SigmaEstimate:
    """Estimate sigma_1 of the loss Hessian at the model's weights.

    ``mode="spectral"`` returns ``max |lambda(H)|`` via power iteration on H^2.
    ``mode="sqrt_max_eig"`` returns ``sqrt(max(lambda_max(H), 0))`` for
    sensitivity studies.
    """
    n = model.params.size
    if n < 1:
        raise ValueError("model has no parameters")

    def h(x):
        if not np.any(x):
            return np.zeros(n)
        return hvp(model, batch, spec, x, cfg)

    def h_squared(v):
        y = h(v)
        # for unit v the Rayleigh quotient of H^2 is |Hv|^2
        return h(y), float(y @ y)

    est = _power(h_squared, n, cfg)
    sigma = SigmaEstimate(float(np.sqrt(max(est.value, 0.0))), est.converged, est.iterations)
    if mode == "spectral":
        return sigma
    if mode != "sqrt_max_eig":
        raise ValueError(f"unknown mode {mode!r}")
    # shift by the spectral norm so the top algebraic eigenvalue dominates
    shift = sigma.value

    def shifted(v):
        z = h(v) + shift * v
        return z, float(v @ z)

    top = _power(shifted, n, cfg)
    lam_max = top.value - shift
    return SigmaEstimate(float(np.sqrt(max(lam_max, 0.0))), sigma.converged and top.converged,
                         sigma.iterations + top.iterations)

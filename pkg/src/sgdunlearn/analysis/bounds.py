"""Exact checks of the weight-distribution bounds on tiny enumerable problems.

Training is batch-size-1 SGD over every ordering of ``n`` points for ``m``
epochs from a fixed ``w0``. Final weights get isotropic Gaussian noise, so
the distributions of trained, retrained and unlearned weights are
equal-weight Gaussian mixtures that can be evaluated exactly on a grid.

* trained vs retrained: ``sup |P - P'| <= L * d``, ``d = mean_I |d_I|``
* unlearned vs retrained: ``sup |P'' - P'| <= L * v``, ``v = mean_I |d_I + u_I|``
* reverse: ``|E P'' - E P'| <= sup|P'' - P'| * integral of |w| over the grid``

``L`` is the Lipschitz constant of the noise density.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from ..exceptions import EnumerationError, GridError
from ..nn import Batch
from ..objectives import Quadratic

MAX_ORDERINGS = 50_000
DEFAULT_WIDTH = 8.0
DEFAULT_RESOLUTION = {1: 4001, 2: 401}


@dataclass
class BoundScenario:
    """``points`` are per-point loss centres (``n x dim``) of a quadratic loss."""

    points: np.ndarray
    w0: np.ndarray
    eta: float = 0.1
    noise_sigma: float = 0.1
    m_epochs: int = 1
    target: int = 0
    curvature: np.ndarray | float = 1.0
    width: float = DEFAULT_WIDTH
    resolution: int | None = None
    grid_bounds: tuple | None = None
    model: object = field(default=None, repr=False)

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        self.w0 = np.atleast_1d(np.asarray(self.w0, dtype=np.float64))
        dim = self.w0.size
        if dim not in (1, 2):
            raise ValueError("bound scenarios support 1 or 2 parameters")
        if self.points.shape[1] != dim:
            raise ValueError("points must have one column per parameter")
        if not 0 <= self.target < self.n:
            raise ValueError("target must index a point")
        if self.noise_sigma <= 0 or self.eta <= 0 or self.m_epochs < 1:
            raise ValueError("noise_sigma and eta must be positive, m_epochs >= 1")
        if self.model is None:
            a = self.curvature
            a = a * np.eye(dim) if np.isscalar(a) else np.asarray(a, dtype=np.float64)
            self.model = Quadratic(a, self.w0)
        if self.resolution is None:
            self.resolution = DEFAULT_RESOLUTION[dim]

    @property
    def n(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.w0.size

    @property
    def n_orderings(self):
        return math.factorial(self.n) ** self.m_epochs


def orderings(scn: BoundScenario):
    if scn.n_orderings > MAX_ORDERINGS:
        raise EnumerationError(f"{scn.n_orderings} orderings exceeds the limit of {MAX_ORDERINGS}")
    perms = list(itertools.permutations(range(scn.n)))
    for combo in itertools.product(perms, repeat=scn.m_epochs):
        yield tuple(i for epoch in combo for i in epoch)


def sgd_final(scn: BoundScenario, sequence):
    w = scn.w0.copy()
    for i in sequence:
        batch = Batch(scn.points[i:i + 1], np.zeros(1, dtype=np.int64))
        w = w - scn.eta * scn.model.with_params(w).grad(batch)
    return w


def single_gradient_rule(scn: BoundScenario, ordering):
    """``u_I = eta * (copies of x*) * grad(w0, x*)``: depends only on ``w0`` and ``I``."""
    copies = sum(1 for i in ordering if i == scn.target)
    batch = Batch(scn.points[scn.target:scn.target + 1], np.zeros(1, dtype=np.int64))
    return scn.eta * copies * scn.model.with_params(scn.w0).grad(batch)


def zero_rule(scn, ordering):
    return np.zeros(scn.dim)


def oracle_rule(scn, ordering):
    """The exact correction ``-d_I`` (still a function of ``w0`` and ``I`` only)."""
    retrain = [i for i in ordering if i != scn.target]
    return sgd_final(scn, retrain) - sgd_final(scn, ordering)


def enumerate_finals(scn: BoundScenario, rule=None):
    """Arrays ``w_I``, ``w_I'`` and ``u_I`` over all orderings (rows in enumeration order)."""
    w_i, w_r, u = [], [], []
    for ordering in orderings(scn):
        w_i.append(sgd_final(scn, ordering))
        w_r.append(sgd_final(scn, [i for i in ordering if i != scn.target]))
        u.append(rule(scn, ordering) if rule is not None else np.zeros(scn.dim))
    return np.array(w_i), np.array(w_r), np.array(u)


def lipschitz_constant(sigma, dim):
    """``sup |grad phi|`` of an isotropic Gaussian density, attained at radius sigma."""
    return (2 * np.pi * sigma ** 2) ** (-dim / 2) * np.exp(-0.5) / sigma


def _axes(scn: BoundScenario, *mean_sets):
    means = np.vstack(mean_sets)
    axes = []
    for k in range(scn.dim):
        if scn.grid_bounds is not None:
            lo, hi = scn.grid_bounds[k] if scn.dim > 1 else scn.grid_bounds
        else:
            lo = means[:, k].min() - scn.width * scn.noise_sigma
            hi = means[:, k].max() + scn.width * scn.noise_sigma
        axes.append(np.linspace(lo, hi, scn.resolution))
    return axes


def _coverage(axes, means, sigma):
    """Smallest probability mass any mixture component keeps inside the grid box."""
    mass = np.ones(means.shape[0])
    for k, ax in enumerate(axes):
        mass *= ndtr((ax[-1] - means[:, k]) / sigma) - ndtr((ax[0] - means[:, k]) / sigma)
    return float(mass.min())


def mixture_density(axes, means, sigma):
    """Equal-weight isotropic Gaussian mixture evaluated on the tensor grid."""
    dim = len(axes)
    norm = (2 * np.pi * sigma ** 2) ** (-dim / 2)
    if dim == 1:
        diff = axes[0][:, None] - means[None, :, 0]
        return norm * np.exp(-0.5 * (diff / sigma) ** 2).mean(axis=1)
    # separable in each axis
    gx = np.exp(-0.5 * ((axes[0][:, None] - means[None, :, 0]) / sigma) ** 2)
    gy = np.exp(-0.5 * ((axes[1][:, None] - means[None, :, 1]) / sigma) ** 2)
    return norm * (gx @ gy.T) / means.shape[0]


def _sup_diff(scn, a, b):
    axes = _axes(scn, a, b)
    return float(np.max(np.abs(mixture_density(axes, a, scn.noise_sigma)
                               - mixture_density(axes, b, scn.noise_sigma)))), axes


def check_lemma1(scn: BoundScenario) -> dict:
    w_i, w_r, _ = enumerate_finals(scn)
    sup_diff, _ = _sup_diff(scn, w_i, w_r)
    lip = lipschitz_constant(scn.noise_sigma, scn.dim)
    d = float(np.mean(np.linalg.norm(w_i - w_r, axis=1)))
    return {"sup_diff": sup_diff, "L": lip, "d": d, "bound": lip * d,
            "bound_holds": bool(sup_diff <= lip * d), "slack": lip * d - sup_diff,
            "n_orderings": len(w_i)}


def check_corollary1(scn: BoundScenario, rule=single_gradient_rule) -> dict:
    w_i, w_r, u = enumerate_finals(scn, rule)
    sup_diff, _ = _sup_diff(scn, w_i + u, w_r)
    lip = lipschitz_constant(scn.noise_sigma, scn.dim)
    v = float(np.mean(np.linalg.norm(w_i + u - w_r, axis=1)))
    d = float(np.mean(np.linalg.norm(w_i - w_r, axis=1)))
    return {"sup_diff": sup_diff, "L": lip, "v": v, "d": d, "bound": lip * v,
            "bound_holds": bool(sup_diff <= lip * v), "slack": lip * v - sup_diff,
            "improves": bool(v <= d), "n_orderings": len(w_i)}


def check_reverse_bound(scn: BoundScenario, rule=single_gradient_rule, min_coverage=1 - 1e-6) -> dict:
    w_i, w_r, u = enumerate_finals(scn, rule)
    unlearned = w_i + u
    sup_diff, axes = _sup_diff(scn, unlearned, w_r)
    coverage = min(_coverage(axes, unlearned, scn.noise_sigma), _coverage(axes, w_r, scn.noise_sigma))
    if coverage < min_coverage:
        raise GridError(f"grid keeps only {coverage:.3g} of the mixture mass")
    # zero-mean noise: mixture means are the averages of the component centres
    v = float(np.linalg.norm(unlearned.mean(axis=0) - w_r.mean(axis=0)))
    if scn.dim == 1:
        a_mass = float(np.trapezoid(np.abs(axes[0]), axes[0]))
    else:
        xx, yy = np.meshgrid(axes[0], axes[1], indexing="ij")
        a_mass = float(np.trapezoid(np.trapezoid(np.hypot(xx, yy), axes[1], axis=1), axes[0]))
    return {"v": v, "b_sup": sup_diff, "a_mass": a_mass, "bound": sup_diff * a_mass,
            "holds": bool(v <= sup_diff * a_mass), "coverage": coverage}


def default_scenario(n=2, dim=1, noise_sigma=0.1, eta=0.1, seed=0, m_epochs=1) -> BoundScenario:
    """Random centres in [-1, 1]^dim, w0 at the origin, unit (1D) or random SPD (2D) curvature."""
    rng = np.random.default_rng(seed)
    points = rng.uniform(-1.0, 1.0, size=(n, dim))
    if dim == 1:
        curvature = 1.0
    else:
        q = rng.standard_normal((dim, dim))
        curvature = q @ q.T / dim + 0.5 * np.eye(dim)
    return BoundScenario(points=points, w0=np.zeros(dim), eta=eta, noise_sigma=noise_sigma,
                         m_epochs=m_epochs, curvature=curvature)


def scenario_grid(seed=0):
    """n in {2, 3} x noise in {0.05, 0.1, 0.5} x {1, 2} parameters."""
    out = []
    for n in (2, 3):
        for sigma in (0.05, 0.1, 0.5):
            for dim in (1, 2):
                out.append(default_scenario(n=n, dim=dim, noise_sigma=sigma, seed=seed + 7 * n + dim))
    return out

"""Closed-form objectives that share the model interface of :class:`~sgdunlearn.nn.MLP`.

They have known Hessians, which makes them the reference cases for the
Hessian probes, the unrolled predictor and the bound scenarios. The loss
spec argument is accepted for interface compatibility and ignored.
"""

from __future__ import annotations

import numpy as np

from .exceptions import ShapeError
from .nn import CE, Batch


class Quadratic:
    """Per-example loss ``0.5 * (w - x)^T A (w - x)``, averaged over the batch.

    Each batch row is a centre ``x``; with ``batch=None`` the centre is 0, so
    ``Quadratic([[1.0]], [w])`` is the plain ``0.5 * w**2``.
    """

    def __init__(self, curvature, params):
        a = np.atleast_2d(np.asarray(curvature, dtype=np.float64))
        params = np.atleast_1d(np.asarray(params, dtype=np.float64)).copy()
        if a.shape != (params.size, params.size):
            raise ShapeError(f"curvature shape {a.shape} does not match {params.size} parameters")
        self.curvature = a
        self.params = params

    def with_params(self, params):
        return Quadratic(self.curvature, params)

    def _centres(self, batch):
        if batch is None:
            return np.zeros((1, self.params.size))
        x = batch.inputs
        if x.shape[1] != self.params.size:
            raise ShapeError("centre width must equal the parameter count")
        return x

    def value_and_grad(self, batch: Batch | None = None, spec=CE):
        r = self.params[None, :] - self._centres(batch)
        ar = r @ self.curvature.T
        value = 0.5 * np.mean(np.sum(r * ar, axis=1))
        sym = 0.5 * (self.curvature + self.curvature.T)
        g = (r @ sym.T).mean(axis=0)
        return float(value), g

    def loss(self, batch=None, spec=CE):
        return self.value_and_grad(batch, spec)[0]

    def grad(self, batch=None, spec=CE):
        return self.value_and_grad(batch, spec)[1]

    def forward(self, batch=None):
        return self.params[None, :] - self._centres(batch)

    def hessian(self):
        return 0.5 * (self.curvature + self.curvature.T)


class LeastSquares:
    """Linear regression: ``mean 0.5 * (x . w - y)**2``; labels are real targets."""

    def __init__(self, params):
        self.params = np.atleast_1d(np.asarray(params, dtype=np.float64)).copy()

    def with_params(self, params):
        return LeastSquares(params)

    def forward(self, batch):
        if batch.inputs.shape[1] != self.params.size:
            raise ShapeError("input width must equal the parameter count")
        return batch.inputs @ self.params

    def value_and_grad(self, batch: Batch, spec=CE):
        r = self.forward(batch) - batch.labels.astype(np.float64)
        b = len(batch)
        return float(0.5 * np.mean(r * r)), batch.inputs.T @ r / b

    def loss(self, batch, spec=CE):
        return self.value_and_grad(batch, spec)[0]

    def grad(self, batch, spec=CE):
        return self.value_and_grad(batch, spec)[1]

    def hessian(self, batch):
        return batch.inputs.T @ batch.inputs / len(batch)

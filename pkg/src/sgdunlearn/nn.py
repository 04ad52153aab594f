"""Deterministic feed-forward networks over a flat parameter vector.

Everything downstream (Hessian probes, the unrolled predictor, unlearning)
treats a model as ``params`` plus ``loss``/``grad`` on a :class:`Batch`, so
the small analytic objectives in :mod:`sgdunlearn.objectives` plug in the
same way as :class:`MLP`.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .exceptions import LabelError, NumericError, ShapeError

ACTIVATIONS = ("relu", "tanh", "identity")
LOSS_KINDS = ("ce", "sd", "l2", "hce")


@dataclass(frozen=True)
class Batch:
    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        inputs = np.atleast_2d(np.asarray(self.inputs, dtype=np.float64))
        labels = np.atleast_1d(np.asarray(self.labels))
        if inputs.shape[0] != labels.shape[0]:
            raise ShapeError(f"{inputs.shape[0]} input rows but {labels.shape[0]} labels")
        if inputs.shape[0] < 1:
            raise ShapeError("empty batch")
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return self.inputs.shape[0]


@dataclass(frozen=True)
class LossSpec:
    """Loss selection. ``gamma`` scales the SD term, ``lam`` the l2/hce term."""

    kind: str = "ce"
    gamma: float = 0.0
    lam: float = 0.0

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise ValueError(f"unknown loss kind {self.kind!r}; expected one of {LOSS_KINDS}")
        if self.gamma < 0 or self.lam < 0:
            raise ValueError("gamma and lam must be nonnegative")


CE = LossSpec()


@dataclass(frozen=True)
class ModelSpec:
    layer_sizes: tuple
    activation: tuple = field(default=("tanh",))

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise ValueError("layer_sizes needs at least input and output widths, all positive")
        if sizes[-1] < 2:
            raise ValueError("output dimension must be at least 2")
        n_hidden = len(sizes) - 2
        act = self.activation
        if isinstance(act, str):
            act = (act,) * n_hidden
        else:
            act = tuple(act)
            if len(act) == 1 and n_hidden != 1:
                act = act * n_hidden
        if len(act) != n_hidden:
            raise ValueError(f"{n_hidden} hidden layers but {len(act)} activations")
        for a in act:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")
        object.__setattr__(self, "layer_sizes", sizes)
        object.__setattr__(self, "activation", act)

    @property
    def n_classes(self) -> int:
        return self.layer_sizes[-1]

    @property
    def n_params(self) -> int:
        return sum(o * i + o for i, o in zip(self.layer_sizes[:-1], self.layer_sizes[1:]))

    def layer_slices(self):
        """Yield ``(weight_slice, weight_shape, bias_slice)`` per layer."""
        pos = 0
        for i, o in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            w = slice(pos, pos + o * i)
            pos += o * i
            b = slice(pos, pos + o)
            pos += o
            yield w, (o, i), b

    def init_params(self, seed) -> np.ndarray:
        """Uniform weights in +-sqrt(6 / (fan_in + fan_out)); zero biases."""
        rng = np.random.default_rng(seed)
        params = np.zeros(self.n_params)
        for w, (o, i), _ in self.layer_slices():
            s = np.sqrt(6.0 / (i + o))
            params[w] = rng.uniform(-s, s, size=o * i)
        return params


def _act(name, z):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return z


def _act_grad(name, z, a):
    if name == "relu":
        return (z > 0).astype(np.float64)
    if name == "tanh":
        return 1.0 - a * a
    return np.ones_like(z)


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _loss_and_dlogits(logits, labels, spec: LossSpec):
    """Mean per-example loss (without the weight-norm term) and dL/dlogits."""
    b, c = logits.shape
    rows = np.arange(b)
    m = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - m)
    s = e.sum(axis=1, keepdims=True)
    p = e / s
    lse = (m + np.log(s))[:, 0]
    per_example = lse - logits[rows, labels]
    d = p.copy()
    d[rows, labels] -= 1.0

    if spec.kind == "sd" and spec.gamma > 0:
        centred = logits - logits.mean(axis=1, keepdims=True)
        sd = np.sqrt((centred ** 2).mean(axis=1))
        per_example = per_example + spec.gamma * sd
        safe = np.where(sd > 0, sd, 1.0)
        # the mean term drops out of the derivative because centred sums to zero
        d += spec.gamma * np.where(sd[:, None] > 0, centred / (c * safe[:, None]), 0.0)
    elif spec.kind == "hce" and spec.lam > 0:
        q = p * (1.0 - p)
        r = np.sqrt((q ** 2).sum(axis=1))
        per_example = per_example + spec.lam * r
        safe = np.where(r > 0, r, 1.0)
        u = np.where(r[:, None] > 0, q * (1.0 - 2.0 * p) / safe[:, None], 0.0)
        # softmax Jacobian is symmetric: J u = p*u - p (p.u)
        d += spec.lam * (p * u - p * (p * u).sum(axis=1, keepdims=True))
    return per_example.mean(), d / b


class MLP:
    """A fully connected network: ``spec`` plus a flat float64 ``params`` vector."""

    def __init__(self, spec: ModelSpec, params=None, seed=0):
        self.spec = spec
        if params is None:
            params = spec.init_params(seed)
        params = np.array(params, dtype=np.float64)
        if params.shape != (spec.n_params,):
            raise ShapeError(f"expected {spec.n_params} parameters, got shape {params.shape}")
        self.params = params

    def __repr__(self):
        return f"MLP({self.spec.layer_sizes}, activation={self.spec.activation})"

    def with_params(self, params) -> "MLP":
        return MLP(self.spec, params)

    def _check(self, batch: Batch):
        if batch.inputs.shape[1] != self.spec.layer_sizes[0]:
            raise ShapeError(
                f"input width {batch.inputs.shape[1]} != layer_sizes[0]={self.spec.layer_sizes[0]}"
            )

    def _forward_cache(self, x):
        w = self.params
        acts = [x]
        pre = []
        h = x
        layers = list(self.spec.layer_slices())
        for k, (ws, shape, bs) in enumerate(layers):
            z = h @ w[ws].reshape(shape).T + w[bs]
            pre.append(z)
            if k < len(layers) - 1:
                h = _act(self.spec.activation[k], z)
                acts.append(h)
            else:
                h = z
        return h, acts, pre

    def forward(self, batch_or_inputs) -> np.ndarray:
        batch = batch_or_inputs
        if not isinstance(batch, Batch):
            x = np.atleast_2d(np.asarray(batch_or_inputs, dtype=np.float64))
            batch = Batch(x, np.zeros(x.shape[0], dtype=int))
        self._check(batch)
        return self._forward_cache(batch.inputs)[0]

    def _labels(self, batch):
        labels = batch.labels
        if labels.dtype.kind not in "iu":
            if not np.all(np.equal(np.mod(labels, 1), 0)):
                raise LabelError("labels must be integer class indices")
            labels = labels.astype(np.int64)
        c = self.spec.n_classes
        if np.any(labels < 0) or np.any(labels >= c):
            raise LabelError(f"label outside [0, {c})")
        return labels

    def value_and_grad(self, batch: Batch, spec: LossSpec = CE):
        self._check(batch)
        labels = self._labels(batch)
        logits, acts, pre = self._forward_cache(batch.inputs)
        value, delta = _loss_and_dlogits(logits, labels, spec)
        grad = np.zeros_like(self.params)
        layers = list(self.spec.layer_slices())
        for k in range(len(layers) - 1, -1, -1):
            ws, shape, bs = layers[k]
            grad[ws] = (delta.T @ acts[k]).ravel()
            grad[bs] = delta.sum(axis=0)
            if k > 0:
                delta = (delta @ self.params[ws].reshape(shape)) * _act_grad(
                    self.spec.activation[k - 1], pre[k - 1], acts[k]
                )
        if spec.kind == "l2" and spec.lam > 0:
            norm = np.linalg.norm(self.params)
            value = value + spec.lam * norm
            if norm > 0:
                grad += spec.lam * self.params / norm
        return float(value), grad

    def loss(self, batch: Batch, spec: LossSpec = CE) -> float:
        return self.value_and_grad(batch, spec)[0]

    def grad(self, batch: Batch, spec: LossSpec = CE) -> np.ndarray:
        return self.value_and_grad(batch, spec)[1]

    def predict_proba(self, x) -> np.ndarray:
        return softmax(self.forward(x))

    def accuracy(self, batch: Batch) -> float:
        return float(np.mean(self.forward(batch).argmax(axis=1) == batch.labels))


# Functional surface shared by every model type (MLP and the objectives).

def forward(model, batch) -> np.ndarray:
    return model.forward(batch)


def loss(model, batch: Batch, spec: LossSpec = CE) -> float:
    return model.loss(batch, spec)


def grad(model, batch: Batch, spec: LossSpec = CE) -> np.ndarray:
    return model.grad(batch, spec)


def sgd_step(model, batch: Batch, spec: LossSpec, eta: float):
    """One SGD update ``w - eta * grad``; returns a new model."""
    if not eta > 0:
        raise ValueError("eta must be positive")
    g = model.grad(batch, spec)
    if not np.all(np.isfinite(g)):
        raise NumericError("non-finite gradient")
    return model.with_params(model.params - eta * g)


def make_mlp(layer_sizes: Sequence[int], activation="tanh", seed=0) -> MLP:
    return MLP(ModelSpec(tuple(layer_sizes), activation), seed=seed)

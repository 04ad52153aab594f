"""Instrumented training, single-gradient and amnesiac unlearning, and the retraining oracle.

A run is ``N`` pretraining steps followed by ``t`` fine-tuning steps of
constant-rate SGD. Fine-tune batches are numbered from 0; the paired
experiment forgets fine-tune batch ``target_batch_index`` and compares the
cheaply unlearned weights ``w''`` with weights ``w'`` retrained from
``w_N`` without that batch.
"""

from __future__ import annotations

import dataclasses
import warnings
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ShapeError, StateError, TrainingError
from .hessian import HvpConfig, top_singular_value
from .nn import CE, Batch, LossSpec
from .unrolled import ErrorInputs, sigma_average, unlearning_error

DIVERGENCE_LIMIT = 1e6


class UnlearningWarning(UserWarning):
    pass


@dataclass(frozen=True)
class TrainConfig:
    eta: float = 0.05
    batch_size: int = 32
    pretrain_steps: int = 0
    finetune_steps: int = 100
    epochs_over_target: int = 1
    loss: LossSpec = CE
    seed: int = 0
    sigma_every: int = 20
    log_updates: bool = True
    target_batch_index: int = 0
    hvp: HvpConfig = HvpConfig()
    hvp_probe_batch: int | None = None

    def __post_init__(self):
        if not self.eta >= 0:
            raise ValueError("eta must be nonnegative")
        if self.batch_size < 1 or self.finetune_steps < 1 or self.epochs_over_target < 1:
            raise ValueError("batch_size, finetune_steps and epochs_over_target must be >= 1")
        if self.pretrain_steps < 0:
            raise ValueError("pretrain_steps must be >= 0")
        if self.sigma_every < 1:
            raise ValueError("sigma_every must be >= 1")
        if not 0 <= self.target_batch_index < self.finetune_steps:
            raise ValueError("target_batch_index must index a fine-tune batch")

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


@dataclass
class StepRecord:
    step: int
    loss: float
    accuracy: float
    sigma_top: float | None
    delta_w_norm: float


@dataclass
class RunLog:
    """Per-step records of the fine-tune phase plus checkpoints.

    ``records[k]`` describes global step ``N + k + 1``: the loss and
    accuracy of the batch before the update, sigma_1 at the pre-update
    weights when sampled, and ``|w_{N+k+1} - w_N|``.
    """

    start_step: int
    end_step: int
    eta: float
    loss_spec: LossSpec
    records: list = field(default_factory=list)
    checkpoints: dict = field(default_factory=dict)
    target_updates: list | None = None
    schedule: list = field(default_factory=list)
    target_positions: tuple = ()

    @property
    def finetune_steps(self):
        return self.end_step - self.start_step

    def sigma_samples(self, upto=None):
        """``(fine-tune index, sigma)`` pairs, optionally restricted to index < ``upto``."""
        out = []
        for k, r in enumerate(self.records):
            if r.sigma_top is not None and (upto is None or k < upto):
                out.append((k, r.sigma_top))
        return out

    def unlearning_error_at(self, s=None) -> float:
        """Unlearning error after ``s`` fine-tune steps (default: all of them)."""
        s = self.finetune_steps if s is None else s
        samples = self.sigma_samples(upto=s)
        if not samples:
            raise StateError("no sigma samples recorded before this step")
        return unlearning_error(ErrorInputs(
            eta=self.eta, t=s, delta_w_norm=self.records[s - 1].delta_w_norm,
            sigma_avg=sigma_average(samples)))


def batch_schedule(n_train, batch_size, n_steps, seed):
    """Positions into the training split for each step.

    Each epoch reshuffles and cuts full batches; the remainder is dropped.
    """
    rng = np.random.default_rng(seed)
    b = min(batch_size, n_train)
    out = []
    while len(out) < n_steps:
        perm = rng.permutation(n_train)
        for k in range(n_train // b):
            out.append(np.sort(perm[k * b:(k + 1) * b]))
            if len(out) == n_steps:
                break
    return out


def _ids(dataset, schedule):
    return [dataset.train_idx[pos] for pos in schedule]


def _probe(dataset, cfg, ids, step):
    if cfg.hvp_probe_batch is None or cfg.hvp_probe_batch == len(ids):
        return dataset.batch(ids)
    rng = np.random.default_rng([cfg.seed, step])
    k = min(cfg.hvp_probe_batch, dataset.train_idx.size)
    return dataset.batch(rng.choice(dataset.train_idx, size=k, replace=False))


def train(model0, dataset, cfg: TrainConfig, checkpoint_steps=()):
    """Run ``N`` pretraining then ``t`` fine-tune steps; returns ``(model, RunLog)``.

    Checkpoints ``w_N`` and ``w_{N+t}`` are always kept; ``checkpoint_steps``
    adds more (global step numbers).
    """
    n, t = cfg.pretrain_steps, cfg.finetune_steps
    schedule = _ids(dataset, batch_schedule(dataset.train_idx.size, cfg.batch_size, n + t, cfg.seed))
    finetune = schedule[n:]
    target = set(finetune[cfg.target_batch_index].tolist())
    positions = tuple(i for i, ids in enumerate(finetune) if set(ids.tolist()) == target)
    log = RunLog(start_step=n, end_step=n + t, eta=cfg.eta, loss_spec=cfg.loss,
                 target_updates=[] if cfg.log_updates else None,
                 schedule=finetune, target_positions=positions)
    keep = set(checkpoint_steps) | {n, n + t}

    model = model0
    w = model0.params.copy()
    for step, ids in enumerate(schedule):
        if step == n:
            w_n = w.copy()
            log.checkpoints[n] = w_n
        batch = dataset.batch(ids)
        current = model.with_params(w)
        value, g = current.value_and_grad(batch, cfg.loss)
        if not np.isfinite(value) or value > DIVERGENCE_LIMIT or not np.all(np.isfinite(g)):
            raise TrainingError(step, f"loss diverged ({value!r})")
        update = -cfg.eta * g
        if step >= n:
            i = step - n
            sigma = None
            if i % cfg.sigma_every == 0:
                sigma = top_singular_value(current, _probe(dataset, cfg, ids, step), cfg.loss, cfg.hvp).value
            if cfg.log_updates and i in positions:
                log.target_updates.append((step + 1, update.copy()))
            acc = float(np.mean(current.forward(batch).argmax(axis=1) == batch.labels))
        w = w + update
        if step >= n:
            log.records.append(StepRecord(step + 1, value, acc, sigma, float(np.linalg.norm(w - w_n))))
        if step + 1 in keep:
            log.checkpoints[step + 1] = w.copy()
    return model0.with_params(w), log


@dataclass(frozen=True)
class UnlearnRequest:
    method: str = "single_gradient"
    gradient_point: str = "at_initial"
    target_batch_index: int = 0

    def __post_init__(self):
        if self.method not in ("single_gradient", "amnesiac"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.gradient_point not in ("at_initial", "at_final"):
            raise ValueError(f"unknown gradient_point {self.gradient_point!r}")


def _checkpoint(run: RunLog, step):
    try:
        return run.checkpoints[step]
    except KeyError:
        raise StateError(f"run log has no checkpoint for step {step}") from None


def single_gradient_unlearn(run: RunLog, model_final, target: Batch, eta, b, m=1,
                            gradient_point="at_initial"):
    """Add back the target's share of the first-order gradient sum.

    ``w'' = w_{N+t} + eta * m * (k / b) * grad(w_eval, target)`` where ``k``
    is the number of target examples, so a whole batch gets ``eta * m`` and a
    single example ``eta * m / b``. ``w_eval`` is ``w_N`` (``at_initial``) or
    ``w_{N+t}`` (``at_final``).
    """
    if m < 1:
        raise ValueError("m must be at least 1")
    if gradient_point == "at_initial":
        w_eval = _checkpoint(run, run.start_step)
    elif gradient_point == "at_final":
        w_eval = _checkpoint(run, run.end_step)
    else:
        raise ValueError(f"unknown gradient_point {gradient_point!r}")
    g = model_final.with_params(w_eval).grad(target, run.loss_spec)
    factor = eta * m * len(target) / b
    return model_final.with_params(model_final.params + factor * g)


def amnesiac_unlearn(run: RunLog, model_final):
    """Subtract every logged update whose batch was the target."""
    if run.target_updates is None:
        raise StateError("update logging was disabled for this run")
    if not run.target_updates:
        warnings.warn("no logged target updates; model returned unchanged", UnlearningWarning)
        return model_final
    total = np.sum([u for _, u in run.target_updates], axis=0)
    return model_final.with_params(model_final.params - total)


def retrain_oracle(model_n, dataset, cfg: TrainConfig, skip_batch_index, schedule=None,
                   record_every=None):
    """Replay the fine-tune sequence from ``w_N`` without batch ``skip_batch_index``.

    ``skip_batch_index`` may be a single position or a collection. With
    ``record_every`` also returns ``{s: w'_s}``, the retrained weights once
    the first ``s`` fine-tune positions have been processed.
    """
    n, t = cfg.pretrain_steps, cfg.finetune_steps
    if schedule is None:
        schedule = _ids(dataset, batch_schedule(dataset.train_idx.size, cfg.batch_size, n + t, cfg.seed))[n:]
    skip = {skip_batch_index} if np.isscalar(skip_batch_index) else set(skip_batch_index)
    w = model_n.params.copy()
    snapshots = {}
    for i, ids in enumerate(schedule):
        if i not in skip:
            value, g = model_n.with_params(w).value_and_grad(dataset.batch(ids), cfg.loss)
            if not np.isfinite(value) or value > DIVERGENCE_LIMIT:
                raise TrainingError(n + i, f"loss diverged ({value!r})")
            w = w - cfg.eta * g
        if record_every and ((i + 1) % record_every == 0 or i + 1 == len(schedule)):
            snapshots[i + 1] = w.copy()
    model = model_n.with_params(w)
    if record_every:
        return model, snapshots
    return model


def verification_error(w_unlearned, w_retrained) -> float:
    a = np.asarray(w_unlearned, dtype=np.float64)
    b = np.asarray(w_retrained, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b))


@dataclass
class PairedResult:
    e: float
    v: float
    accuracy: float
    runlog: RunLog
    request: UnlearnRequest
    sigma_avg: float
    delta_w_norm: float
    w_unlearned: np.ndarray
    w_retrained: np.ndarray
    model_final: object
    trajectory: list = field(default_factory=list)


def _unlearned_at(request, run, model_at_s, target, cfg, s):
    """``w''`` for the run truncated to its first ``s`` fine-tune steps."""
    if request.method == "amnesiac":
        upd = [u for step, u in run.target_updates if step <= run.start_step + s]
        return model_at_s.params - (np.sum(upd, axis=0) if upd else 0.0)
    if request.gradient_point == "at_initial":
        w_eval = run.checkpoints[run.start_step]
    else:
        w_eval = model_at_s.params
    g = model_at_s.with_params(w_eval).grad(target, run.loss_spec)
    return model_at_s.params + cfg.eta * cfg.epochs_over_target * g


def run_paired_experiment(model0, dataset, cfg: TrainConfig, request: UnlearnRequest = UnlearnRequest(),
                          sample_every=None) -> PairedResult:
    """Train, retrain without the target batch, unlearn, and compare.

    With ``sample_every`` the result also carries ``(step, e, v)`` along the
    fine-tune trajectory at that cadence (always including step ``t``).
    """
    cfg = cfg.replace(target_batch_index=request.target_batch_index,
                      log_updates=cfg.log_updates or request.method == "amnesiac")
    n, t = cfg.pretrain_steps, cfg.finetune_steps
    sample_steps = []
    if sample_every:
        sample_steps = sorted({s for s in range(sample_every, t + 1, sample_every)} | {t})
    model_final, run = train(model0, dataset, cfg, checkpoint_steps=[n + s for s in sample_steps])
    model_n = model_final.with_params(run.checkpoints[n])
    target = dataset.batch(run.schedule[request.target_batch_index])
    snaps = {}
    if sample_steps:
        retrained, snaps = retrain_oracle(model_n, dataset, cfg, run.target_positions,
                                          schedule=run.schedule, record_every=1)
    else:
        retrained = retrain_oracle(model_n, dataset, cfg, run.target_positions, schedule=run.schedule)

    if request.method == "amnesiac":
        unlearned = amnesiac_unlearn(run, model_final)
    else:
        unlearned = single_gradient_unlearn(run, model_final, target, cfg.eta, len(target),
                                            m=cfg.epochs_over_target,
                                            gradient_point=request.gradient_point)
    v = verification_error(unlearned.params, retrained.params)
    e = run.unlearning_error_at()
    accuracy = model_final.accuracy(dataset.test_batch()) if dataset.test_idx.size else float("nan")

    trajectory = []
    for s in sample_steps:
        if s <= request.target_batch_index:
            continue
        model_s = model_final.with_params(run.checkpoints[n + s])
        w_dd = _unlearned_at(request, run, model_s, target, cfg, s)
        trajectory.append({"step": s, "e": run.unlearning_error_at(s),
                           "v": verification_error(w_dd, snaps[s])})

    return PairedResult(
        e=e, v=v, accuracy=accuracy, runlog=run, request=request,
        sigma_avg=sigma_average(run.sigma_samples()),
        delta_w_norm=run.records[-1].delta_w_norm,
        w_unlearned=unlearned.params, w_retrained=retrained.params,
        model_final=model_final, trajectory=trajectory,
    )

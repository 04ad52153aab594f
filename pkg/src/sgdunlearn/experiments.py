"""Desk-scale experiment pipelines shared by the CLI, the plan runner and the acceptance suite."""

from __future__ import annotations

import numpy as np

from .analysis.prs import model_scores, prs_fit
from .analysis.stats import pearson, spearman
from .data import gen_blobs
from .nn import LossSpec, make_mlp
from .unlearn import TrainConfig, UnlearnRequest, run_paired_experiment, train

DESK_LAYERS = (16, 16)


def desk_dataset(seed=0, n=512):
    return gen_blobs(n, classes=2, spread=1.0, seed=seed)


def desk_model(dataset, seed=0, hidden=DESK_LAYERS, activation="tanh"):
    return make_mlp([dataset.n_features, *hidden, dataset.n_classes], activation, seed=seed)


def trajectory_experiment(cfg: TrainConfig, seed=0, sample_every=20, request=UnlearnRequest(),
                          dataset=None, model=None):
    """One run with ``(step, e, v)`` sampled along the fine-tune trajectory."""
    dataset = dataset if dataset is not None else desk_dataset(seed)
    model = model if model is not None else desk_model(dataset, seed)
    res = run_paired_experiment(model, dataset, cfg.replace(seed=seed), request, sample_every=sample_every)
    steps = [p["step"] for p in res.trajectory]
    es = [p["e"] for p in res.trajectory]
    vs = [p["v"] for p in res.trajectory]
    return {
        "result": res,
        "trajectory": res.trajectory,
        "pearson_ev": pearson(es, vs),
        "spearman_step_e": spearman(steps, es),
    }


def regularizer_sweep(kind, strengths, seeds, cfg: TrainConfig, request=UnlearnRequest(),
                      dataset_factory=desk_dataset, model_factory=desk_model):
    """Final ``e``, ``v`` and weight change for each (strength, seed) cell.

    ``kind`` is ``"sd"`` (strength is gamma) or ``"l2"`` (strength is lambda).
    """
    rows = []
    for strength in strengths:
        loss = LossSpec("sd", gamma=strength) if kind == "sd" else LossSpec(kind, lam=strength)
        for seed in seeds:
            ds = dataset_factory(seed)
            res = run_paired_experiment(model_factory(ds, seed), ds, cfg.replace(loss=loss, seed=seed), request)
            rows.append({"kind": kind, "strength": float(strength), "seed": int(seed), "e": res.e, "v": res.v,
                         "delta_w_norm": res.delta_w_norm, "sigma_avg": res.sigma_avg,
                         "accuracy": res.accuracy})
    return rows


def summarize_sweep(rows):
    """Seed-averaged weight change per strength plus the rank and linear correlations."""
    strengths = sorted({r["strength"] for r in rows})
    mean_dw = [float(np.mean([r["delta_w_norm"] for r in rows if r["strength"] == s])) for s in strengths]
    mean_e = [float(np.mean([r["e"] for r in rows if r["strength"] == s])) for s in strengths]
    out = {"strengths": strengths, "mean_delta_w": mean_dw, "mean_e": mean_e,
           "spearman_strength_delta_w": spearman(strengths, mean_dw),
           "pearson_ev": pearson([r["e"] for r in rows], [r["v"] for r in rows])}
    return out


def overfit_dataset(seed=0):
    """Few noisy high-dimensional points, so a wide network memorises its training split."""
    return gen_blobs(200, classes=2, spread=2.5, seed=seed, n_features=20, radius=1.5)


def prs_attack(dataset, cfg: TrainConfig, shadow_model0, bins_per_label=20, smoothing=1.0):
    """Fit the risk-score model on a shadow trained with half of each split.

    Shadow members are the first half of the training split, shadow
    non-members the first half of the test split.
    """
    half_tr = dataset.train_idx.size // 2
    half_te = dataset.test_idx.size // 2
    shadow_ds = dataset.subset(dataset.train_idx[:half_tr], dataset.test_idx[:half_te], name="shadow")
    shadow, _ = train(shadow_model0, shadow_ds, cfg.replace(log_updates=False))
    mem = dataset.batch(shadow_ds.train_idx)
    non = dataset.batch(shadow_ds.test_idx)
    return prs_fit(model_scores(shadow, mem), mem.labels, model_scores(shadow, non), non.labels,
                   bins_per_label, smoothing)


def prs_report(attack, dataset, res, target_batch_index=0):
    """PRS summaries of a paired run, scored on the halves the shadow never saw."""
    half_tr = dataset.train_idx.size // 2
    half_te = dataset.test_idx.size // 2
    target = res.model_final

    def prs(model, idx):
        b = dataset.batch(idx)
        return attack.score_many(model_scores(model, b), b.labels)

    forget = res.runlog.schedule[target_batch_index]
    members = prs(target, dataset.train_idx[half_tr:])
    nonmembers = prs(target, dataset.test_idx[half_te:])
    before = prs(target, forget)
    after = prs(target.with_params(res.w_unlearned), forget)
    retrained = prs(target.with_params(res.w_retrained), forget)
    every = np.concatenate([members, nonmembers, before, after, retrained])
    return {
        "prs_members_mean": float(members.mean()),
        "prs_nonmembers_mean": float(nonmembers.mean()),
        "prs_gap": float(members.mean() - nonmembers.mean()),
        "prs_min": float(every.min()),
        "prs_max": float(every.max()),
        "prs_target_before": float(before.mean()),
        "prs_target_after": float(after.mean()),
        "prs_target_retrained": float(retrained.mean()),
        "prs_target_delta": float(after.mean() - before.mean()),
    }


def prs_experiment(dataset=None, cfg: TrainConfig | None = None, seed=0, hidden=(64,),
                   bins_per_label=20, smoothing=1.0, request=UnlearnRequest()):
    """Shadow-model privacy risk score on an overfit model, before and after unlearning.

    The target model trains on the full training split. The PRS of the
    forgotten batch is reported on the original, unlearned and retrained weights.
    """
    ds = dataset if dataset is not None else overfit_dataset(seed)
    if cfg is None:
        cfg = TrainConfig(eta=0.1, batch_size=16, pretrain_steps=1500, finetune_steps=40,
                          sigma_every=40, seed=seed)
    layers = [ds.n_features, *hidden, ds.n_classes]
    attack = prs_attack(ds, cfg.replace(seed=seed + 1), make_mlp(layers, "tanh", seed=seed + 1),
                        bins_per_label, smoothing)
    res = run_paired_experiment(make_mlp(layers, "tanh", seed=seed), ds, cfg, request)
    out = {"train_accuracy": res.model_final.accuracy(ds.train_batch()), "test_accuracy": res.accuracy}
    out.update(prs_report(attack, ds, res, request.target_batch_index))
    out.update({"e": res.e, "v": res.v})
    return out

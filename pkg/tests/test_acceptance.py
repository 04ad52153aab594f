"""Acceptance criteria, each run at its stated tolerance and time limit.

Every test appends one PASS/FAIL line to ``RESULTS``; conftest prints them
in the terminal summary.
"""

import filecmp
import time

import numpy as np
import pytest

from sgdunlearn.analysis import (check_corollary1, check_lemma1, check_reverse_bound, min_weight_change,
                                 sisa_breakeven)
from sgdunlearn.analysis.bounds import scenario_grid
from sgdunlearn.config import parse_plan
from sgdunlearn.experiments import (desk_dataset, desk_model, prs_experiment, regularizer_sweep,
                                    summarize_sweep, trajectory_experiment)
from sgdunlearn.hessian import dense_hessian, hvp, top_singular_value
from sgdunlearn.io import read_table_csv, write_table_csv
from sgdunlearn.nn import Batch, LossSpec, make_mlp
from sgdunlearn.objectives import LeastSquares
from sgdunlearn.plan import run_plan
from sgdunlearn.unlearn import TrainConfig, run_paired_experiment
from sgdunlearn.unrolled import count_terms_with_target, unroll_predict

from test_unrolled import mentions, symbolic_eta2_terms

pytestmark = pytest.mark.acceptance

RESULTS = []

# Desk protocol shared by the trajectory criteria.
DESK = TrainConfig(eta=0.05, batch_size=32, pretrain_steps=0, finetune_steps=500, sigma_every=20)
# Regularizer sweeps: short pretraining, then fine-tune.
SWEEP = TrainConfig(eta=0.05, batch_size=32, pretrain_steps=100, finetune_steps=200, sigma_every=20)
SEEDS = (0, 1, 2)


def record(number, title, ok, detail, elapsed, limit):
    within = elapsed < limit
    status = "PASS" if ok and within else "FAIL"
    line = f"{status} [{number:2d}] {title}: {detail} ({elapsed:.2f}s, limit {limit:g}s)"
    RESULTS.append(line)
    print(line)
    assert ok, line
    assert within, line


class Timer:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start


def fd_grad(model, batch, spec):
    w = model.params
    out = np.empty_like(w)
    for i in range(w.size):
        h = 1e-6 * (1 + abs(w[i]))
        e = np.zeros_like(w)
        e[i] = h
        out[i] = (model.with_params(w + e).loss(batch, spec) - model.with_params(w - e).loss(batch, spec)) / (2 * h)
    return out


def test_01_gradient_correctness():
    rng = np.random.default_rng(101)
    specs = [LossSpec(), LossSpec("sd", gamma=0.8), LossSpec("l2", lam=0.3), LossSpec("hce", lam=0.6)]
    worst = 0.0
    with Timer() as t:
        for k in range(50):
            d, c = int(rng.integers(2, 5)), int(rng.integers(2, 4))
            hidden = [int(h) for h in rng.integers(2, 7, size=int(rng.integers(1, 3)))]
            model = make_mlp([d, *hidden, c], ["tanh", "identity"][k % 2], seed=k)
            b = int(rng.integers(1, 9))
            batch = Batch(rng.standard_normal((b, d)), rng.integers(0, c, size=b))
            spec = specs[k % 4]
            a, n = model.grad(batch, spec), fd_grad(model, batch, spec)
            rel = np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-4)
            worst = max(worst, float(rel.max()))
    record(1, "gradient vs finite differences, 50 triples", worst <= 1e-5,
           f"max rel err {worst:.2e} <= 1e-05", t.elapsed, 30)


def test_02_hvp_and_sigma_oracles():
    rng = np.random.default_rng(202)
    worst_hvp = worst_sigma = 0.0
    with Timer() as t:
        for k in range(20):
            d, h, c = int(rng.integers(2, 5)), int(rng.integers(2, 6)), int(rng.integers(2, 4))
            model = make_mlp([d, h, c], "tanh", seed=k)
            assert model.params.size <= 50
            batch = Batch(rng.standard_normal((8, d)), rng.integers(0, c, size=8))
            dense = dense_hessian(model, batch)
            v = rng.standard_normal(model.params.size)
            exact = dense @ v
            worst_hvp = max(worst_hvp, float(np.linalg.norm(hvp(model, batch, v=v) - exact) / np.linalg.norm(exact)))
            ref = float(np.max(np.abs(np.linalg.eigvalsh(dense))))
            worst_sigma = max(worst_sigma, abs(top_singular_value(model, batch).value - ref) / ref)
    record(2, "hvp and sigma_1 vs dense Hessian", worst_hvp <= 1e-3 and worst_sigma <= 1e-3,
           f"hvp rel {worst_hvp:.2e}, sigma rel {worst_sigma:.2e} (<= 1e-03)", t.elapsed, 30)


def test_03_quadratic_exactness():
    rng = np.random.default_rng(303)
    worst = 0.0
    with Timer() as t:
        for t_len in (1, 2, 5, 10, 15, 20):
            for _ in range(3):
                w0 = rng.standard_normal(5) * 3
                batches = [Batch(rng.standard_normal((4, 5)), rng.standard_normal(4)) for _ in range(t_len)]
                res = unroll_predict(LeastSquares(w0), batches, eta=0.05)
                worst = max(worst, res.residual_vs_sgd / (1 + np.linalg.norm(w0)))
    record(3, "unrolled expansion exact on least squares, t <= 20", worst <= 1e-8,
           f"max residual/(1+|w0|) {worst:.2e} <= 1e-08", t.elapsed, 10)


def test_04_t1_exactness():
    with Timer() as t:
        ds = desk_dataset(0)
        res = run_paired_experiment(desk_model(ds, 0), ds, DESK.replace(finetune_steps=1))
    record(4, "t=1 single-gradient unlearning", res.e == 0.0 and res.v <= 1e-10,
           f"e={res.e!r}, v={res.v:.2e} <= 1e-10", t.elapsed, 5)


def test_05_term_counting():
    ok = True
    with Timer() as t:
        for t_len in range(2, 7):
            terms = symbolic_eta2_terms(t_len)
            for i_star in range(t_len):
                sym = sum(mentions(term, i_star) for term in terms)
                ok &= sym == t_len - 1 == count_terms_with_target(t_len, i_star)
    record(5, "terms containing the target batch, t in 2..6", ok, "symbolic count == t-1 for every i*",
           t.elapsed, 5)


@pytest.fixture(scope="module")
def desk_trajectory():
    with Timer() as t:
        out = trajectory_experiment(DESK, seed=0, sample_every=20)
    out["elapsed"] = t.elapsed
    return out


def test_06_error_grows_with_t(desk_trajectory):
    rho = desk_trajectory["spearman_step_e"]
    record(6, "Spearman(step, e), N=0, t=500, sigma every 20", rho >= 0.95, f"{rho:.4f} >= 0.95",
           desk_trajectory["elapsed"], 60)


def test_07_e_v_correlation(desk_trajectory):
    r = desk_trajectory["pearson_ev"]
    n = len(desk_trajectory["trajectory"])
    record(7, "Pearson(e, v) along a 500-step desk run", r >= 0.8, f"{r:.4f} >= 0.8 over {n} samples",
           desk_trajectory["elapsed"], 180)


def test_08_sd_loss_effect():
    with Timer() as t:
        rows = regularizer_sweep("sd", (0.0, 0.5, 1.0, 2.0), SEEDS, SWEEP)
        s = summarize_sweep(rows)
    rho, r = s["spearman_strength_delta_w"], s["pearson_ev"]
    dw = ", ".join(f"{g:g}:{x:.3f}" for g, x in zip(s["strengths"], s["mean_delta_w"]))
    record(8, "SD loss: Spearman(gamma, |w_t - w_N|) and Pearson(e, v)", rho <= -0.8 and r >= 0.7,
           f"spearman {rho:.3f} <= -0.8, pearson {r:.3f} >= 0.7; mean dw by gamma [{dw}]", t.elapsed, 300)


def test_09_l2_strawman(tmp_path):
    lams = (0.0, 0.01, 0.1, 1.0)
    with Timer() as t:
        rows = regularizer_sweep("l2", lams, SEEDS, SWEEP)
        write_table_csv(tmp_path / "l2_sweep.csv", rows)
        table = read_table_csv(tmp_path / "l2_sweep.csv")
    ok = len(table) == len(lams) * len(SEEDS) and all(np.isfinite(float(r["e"])) for r in table)
    means = ", ".join(f"{lam:g}:{np.mean([r['e'] for r in rows if r['strength'] == lam]):.4f}" for lam in lams)
    record(9, "l2 strawman sweep completes", ok, f"{len(table)} rows written; mean e by lambda [{means}]",
           t.elapsed, 180)


def test_10_bounds():
    failures = []
    with Timer() as t:
        grid = scenario_grid()
        for k, scn in enumerate(grid):
            lemma, cor, rev = check_lemma1(scn), check_corollary1(scn), check_reverse_bound(scn)
            if not (lemma["bound_holds"] and cor["bound_holds"] and rev["holds"] and cor["v"] <= cor["d"]):
                failures.append(k)
    record(10, f"lemma / corollary / reverse bound on {len(grid)} scenarios", len(grid) >= 12 and not failures,
           f"failing scenarios {failures}", t.elapsed, 120)


def test_11_lagrangian_minimality():
    rng = np.random.default_rng(1111)
    worst_gap = np.inf
    worst_res = 0.0
    with Timer() as t:
        for trial in range(10):
            x = rng.standard_normal(int(rng.integers(1, 6))) * rng.uniform(0.2, 3.0)
            eps = rng.uniform(-2, 2)
            sol = min_weight_change(x, eps)
            worst_res = max(worst_res, sol.constraint_residual)
            scale = rng.choice([1e-3, 1e-1, 1.0], size=(10_000, 1))
            u1 = sol.u1 + scale * rng.standard_normal((10_000, x.size))
            u2 = sol.u2 + scale * rng.standard_normal((10_000, x.size))
            fix = (eps - np.sum((u1 - u2) * x, axis=1)) / (2 * x @ x)
            u1 += fix[:, None] * x
            u2 -= fix[:, None] * x
            gap = np.sum(u1 ** 2 + u2 ** 2, axis=1) - sol.squared_norm
            worst_gap = min(worst_gap, float(gap.min()))
    record(11, "Lagrangian solution is minimal", worst_gap >= -1e-9 and worst_res <= 1e-9,
           f"min(feasible - analytic) {worst_gap:.2e} >= -1e-09, residual {worst_res:.1e}", t.elapsed, 30)


def test_12_prs_sanity():
    with Timer() as t:
        rep = prs_experiment(seed=0)
    ok = rep["prs_gap"] >= 0.05 and 0.0 <= rep["prs_min"] and rep["prs_max"] <= 1.0
    record(12, "PRS on an overfit model", ok,
           f"gap {rep['prs_gap']:.3f} >= 0.05, range [{rep['prs_min']:.3f}, {rep['prs_max']:.3f}]; "
           f"target before {rep['prs_target_before']:.3f} after {rep['prs_target_after']:.3f} "
           f"retrained {rep['prs_target_retrained']:.3f}", t.elapsed, 120)


def test_13_sisa_breakeven():
    with Timer() as t:
        value = sisa_breakeven(100_000)
    record(13, "SISA breakeven at N=100000", abs(value - 157.11) <= 0.01, f"{value:.4f} = 157.11 +- 0.01",
           t.elapsed, 1)


def _same_tree(a, b):
    cmp = filecmp.dircmp(a, b)
    if cmp.left_only or cmp.right_only or cmp.funny_files:
        return False
    _, mismatch, errors = filecmp.cmpfiles(a, b, cmp.common_files, shallow=False)
    return not mismatch and not errors and all(_same_tree(a / d, b / d) for d in cmp.common_dirs)


def test_14_determinism(tmp_path):
    plan_text = ("train.finetune_steps=500\ntrain.sigma_every=20\ninstrument.sample_every=20\n"
                 "grid.train.finetune_steps=1,500\n")
    with Timer() as t:
        runs = [run_plan(parse_plan(plan_text, out_dir=tmp_path / f"run{k}")) for k in range(2)]
        files_equal = _same_tree(tmp_path / "run0", tmp_path / "run1")
        sweeps = [regularizer_sweep("sd", (0.0, 1.0), (0,), SWEEP) for _ in range(2)]
        prs = [prs_experiment(seed=0) for _ in range(2)]
        bounds = [check_corollary1(scenario_grid()[5]) for _ in range(2)]
    ok = files_equal and sweeps[0] == sweeps[1] and prs[0] == prs[1] and bounds[0] == bounds[1]
    n_files = sum(1 for p in (tmp_path / "run0").rglob("*") if p.is_file())
    record(14, "reruns are bit-identical", ok and all(r.computed for r in runs),
           f"{n_files} plan files byte-equal: {files_equal}; sweep/PRS/bound reports equal", t.elapsed, 600)

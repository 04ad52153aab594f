"""Run every cell of an :class:`ExperimentPlan` and aggregate a results table.

Each cell owns ``<out>/<run-id>/``::

    config.txt  runlog.csv  checkpoints/*.uwgt  report.jsonl  plots/  result.json

Cells whose ``result.json`` records success are not recomputed. Failures are
recorded in the results row and retried on the next run. Workers only return
rows; the parent process is the single writer of ``results.csv``.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from xml.sax.saxutils import escape

from .analysis.stats import pearson, spearman
from .config import (DEFAULTS, Config, ExperimentPlan, build_dataset, build_model, build_request,
                     build_train_config, parse_config)
from .exceptions import DataError
from .experiments import prs_attack, prs_report
from .io import read_table_csv, write_checkpoint, write_runlog_csv, write_table_csv
from .unlearn import run_paired_experiment

METRIC_COLUMNS = ("e", "v", "accuracy", "sigma_avg", "delta_w_norm",
                  "prs_members_mean", "prs_nonmembers_mean", "prs_gap",
                  "prs_target_before", "prs_target_after", "prs_target_delta")
RESULT_COLUMNS = ("run_id", "status", "error", *sorted(DEFAULTS), *METRIC_COLUMNS)


@dataclass
class PlanOutcome:
    rows: list
    computed: list = field(default_factory=list)
    cached: list = field(default_factory=list)
    results_path: Path | None = None


def _json_default(x):
    return float(x)


def run_cell(cfg: Config, out_dir) -> dict:
    """Run one configuration and write its artifacts. Returns the metric dict."""
    cell = Path(out_dir)
    (cell / "checkpoints").mkdir(parents=True, exist_ok=True)
    (cell / "plots").mkdir(exist_ok=True)
    (cell / "config.txt").write_text(cfg.serialize())

    dataset = build_dataset(cfg)
    model0 = build_model(cfg, dataset)
    tcfg = build_train_config(cfg)
    request = build_request(cfg)
    res = run_paired_experiment(model0, dataset, tcfg, request,
                                sample_every=cfg["instrument.sample_every"] or None)
    run = res.runlog

    write_runlog_csv(cell / "runlog.csv", run.records)
    write_checkpoint(cell / "checkpoints" / f"step_{run.start_step:06d}.uwgt", run.checkpoints[run.start_step])
    write_checkpoint(cell / "checkpoints" / f"step_{run.end_step:06d}.uwgt", res.model_final.params)
    write_checkpoint(cell / "checkpoints" / "unlearned.uwgt", res.w_unlearned)
    write_checkpoint(cell / "checkpoints" / "retrained.uwgt", res.w_retrained)

    metrics = {"e": res.e, "v": res.v, "accuracy": res.accuracy, "sigma_avg": res.sigma_avg,
               "delta_w_norm": res.delta_w_norm}
    if cfg["prs.enabled"]:
        shadow0 = build_model(cfg.updated({"model.seed": cfg["model.seed"] + 1}), dataset)
        attack = prs_attack(dataset, tcfg.replace(seed=tcfg.seed + 1), shadow0,
                            cfg["prs.bins_per_label"], cfg["prs.smoothing"])
        metrics.update(prs_report(attack, dataset, res, request.target_batch_index))

    with open(cell / "report.jsonl", "w") as fh:
        for point in res.trajectory:
            fh.write(json.dumps({"kind": "trajectory", **point}, default=_json_default) + "\n")
        fh.write(json.dumps({"kind": "final", **metrics}, default=_json_default) + "\n")
    if len(res.trajectory) >= 3:
        correlate_results(res.trajectory, "e", "v", cell / "plots", name="trajectory_e_v")
    (cell / "result.json").write_text(json.dumps({"status": "ok", **metrics}, default=_json_default,
                                                 sort_keys=True))
    return metrics


def _cell_row(cfg_text, out_dir):
    cfg = parse_config(cfg_text)
    run_id = cfg.run_id()
    row = {"run_id": run_id, **cfg.resolved()}
    try:
        metrics = run_cell(cfg, Path(out_dir) / run_id)
        row.update(status="ok", error="", **metrics)
    except Exception as exc:  # recorded per row; the plan carries on
        row.update(status="error", error=f"{type(exc).__name__}: {exc}")
    return row


def _cached_row(cfg: Config, out_dir):
    path = Path(out_dir) / cfg.run_id() / "result.json"
    if not path.exists():
        return None
    stored = json.loads(path.read_text())
    if stored.pop("status", None) != "ok":
        return None
    return {"run_id": cfg.run_id(), **cfg.resolved(), "status": "ok", "error": "", **stored}


def run_plan(plan: ExperimentPlan, workers=1) -> PlanOutcome:
    out = Path(plan.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cells, seen = [], set()
    for cfg in plan.cells():
        if cfg.run_id() not in seen:
            seen.add(cfg.run_id())
            cells.append(cfg)

    rows = [_cached_row(cfg, out) for cfg in cells]
    todo = [k for k, r in enumerate(rows) if r is None]
    texts = [cells[k].serialize() for k in todo]
    if workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            fresh = list(pool.map(_cell_row, texts, [str(out)] * len(texts)))
    else:
        fresh = [_cell_row(t, out) for t in texts]
    for k, row in zip(todo, fresh):
        rows[k] = row

    outcome = PlanOutcome(rows, computed=[cells[k].run_id() for k in todo],
                          cached=[c.run_id() for k, c in enumerate(cells) if k not in set(todo)])
    outcome.results_path = out / "results.csv"
    write_table_csv(outcome.results_path, rows, RESULT_COLUMNS)
    return outcome


# Correlation tables and scatter plots.

def _finite_pairs(table, x_col, y_col):
    xs, ys = [], []
    for row in table:
        try:
            x, y = float(row[x_col]), float(row[y_col])
        except (KeyError, TypeError, ValueError):
            continue
        if math.isfinite(x) and math.isfinite(y):
            xs.append(x)
            ys.append(y)
    return xs, ys


def scatter_svg(xs, ys, x_label, y_label, caption, size=(480, 360), margin=56):
    """Minimal standalone SVG: two axes, one circle per point and a caption."""
    w, h = size
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    sx = (w - 2 * margin) / ((x1 - x0) or 1.0)
    sy = (h - 2 * margin) / ((y1 - y0) or 1.0)
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">',
        f'<line class="axis" x1="{margin}" y1="{h - margin}" x2="{w - margin}" y2="{h - margin}" stroke="black"/>',
        f'<line class="axis" x1="{margin}" y1="{margin}" x2="{margin}" y2="{h - margin}" stroke="black"/>',
        f'<text x="{w / 2}" y="{h - margin / 3}" text-anchor="middle">{escape(x_label)}</text>',
        f'<text x="{margin / 3}" y="{h / 2}" text-anchor="middle" '
        f'transform="rotate(-90 {margin / 3} {h / 2})">{escape(y_label)}</text>',
    ]
    for x, y in zip(xs, ys):
        cx = margin + (x - x0) * sx
        cy = h - margin - (y - y0) * sy
        parts.append(f'<circle class="marker" cx="{cx:.3f}" cy="{cy:.3f}" r="3" fill="steelblue"/>')
    parts.append(f'<text x="{w / 2}" y="{margin / 2}" text-anchor="middle">{escape(caption)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def correlate_results(table, x_col, y_col, out_dir=None, name=None):
    """``(pearson, spearman)`` of two columns, plus a CSV and SVG scatter in ``out_dir``.

    ``table`` is a list of row dicts or a path to a results CSV. Rows with a
    missing or non-finite value in either column are skipped.
    """
    if isinstance(table, (str, Path)):
        table = read_table_csv(table)
    xs, ys = _finite_pairs(table, x_col, y_col)
    if len(xs) < 3:
        raise DataError(f"need at least 3 finite ({x_col}, {y_col}) rows, got {len(xs)}")
    r, rho = pearson(xs, ys), spearman(xs, ys)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        stem = name or f"{x_col}_vs_{y_col}"
        write_table_csv(out / f"{stem}.csv", [{x_col: x, y_col: y} for x, y in zip(xs, ys)], [x_col, y_col])
        caption = f"{y_col} vs {x_col}: pearson={r:.4f} spearman={rho:.4f} n={len(xs)}"
        (out / f"{stem}.svg").write_text(scatter_svg(xs, ys, x_col, y_col, caption))
    return r, rho

"""Command-line entry point: ``sgdunlearn <command> [--config PATH] [--out DIR] ...``.

Any config key can be overridden with ``--set key=value`` or ``--section.key value``.
Summaries are printed as ``key=value`` lines. On failure a single JSON error
record is printed to stderr and the exit code is nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .analysis.binary import flip_margin, grid_flip_margin, landscape_grid
from .analysis.bounds import check_corollary1, check_lemma1, check_reverse_bound, default_scenario
from .config import build_dataset, build_model, build_request, build_train_config, floats, load_config, load_plan
from .exceptions import ConfigError
from .io import fmt_float, write_checkpoint, write_runlog_csv, write_table_csv
from .plan import correlate_results, run_cell, run_plan
from .unlearn import amnesiac_unlearn, single_gradient_unlearn, train

COMMANDS = ("train", "unlearn", "verify", "correlate", "bounds", "landscape", "prs", "plan")
SEED_KEYS = ("data.seed", "model.seed", "train.seed", "bounds.seed")


def _parser():
    p = argparse.ArgumentParser(prog="sgdunlearn", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="config file (for 'plan': a plan file with grid.* lines)")
    p.add_argument("--out", default="runs", help="output directory")
    p.add_argument("--seed", type=int, help="sets data, model, train and bounds seeds")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--gamma", help="landscape: comma-separated gamma values")
    p.add_argument("--table", help="correlate: results CSV")
    p.add_argument("--x", default="e", help="correlate: x column")
    p.add_argument("--y", default="v", help="correlate: y column")
    return p


def _overrides(args, extra):
    out = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v
    k = 0
    while k < len(extra):
        tok = extra[k]
        if not tok.startswith("--") or "." not in tok:
            raise ConfigError(f"unrecognized argument {tok!r}")
        key = tok[2:]
        if "=" in key:
            key, value = key.split("=", 1)
            k += 1
        elif k + 1 < len(extra):
            value = extra[k + 1]
            k += 2
        else:
            raise ConfigError(f"{tok} needs a value")
        out[key] = value
    if args.seed is not None:
        for key in SEED_KEYS:
            out.setdefault(key, args.seed)
    if args.gamma is not None:
        out["landscape.gamma"] = args.gamma
    return out


def _emit(pairs):
    for k, v in pairs.items():
        if isinstance(v, bool):
            v = str(v).lower()
        elif isinstance(v, float):
            v = fmt_float(v)
        print(f"{k}={v}")


def _run_dir(cfg, out):
    d = Path(out) / cfg.run_id()
    (d / "checkpoints").mkdir(parents=True, exist_ok=True)
    (d / "config.txt").write_text(cfg.serialize())
    return d


def cmd_train(cfg, args, unlearn=False):
    ds = build_dataset(cfg)
    tcfg = build_train_config(cfg)
    model, run = train(build_model(cfg, ds), ds, tcfg)
    d = _run_dir(cfg, args.out)
    write_runlog_csv(d / "runlog.csv", run.records)
    write_checkpoint(d / "checkpoints" / f"step_{run.start_step:06d}.uwgt", run.checkpoints[run.start_step])
    write_checkpoint(d / "checkpoints" / f"step_{run.end_step:06d}.uwgt", model.params)
    out = {"run_id": cfg.run_id(), "out": str(d), "steps": run.end_step,
           "accuracy": model.accuracy(ds.test_batch()), "e": run.unlearning_error_at()}
    if unlearn:
        req = build_request(cfg)
        if req.method == "amnesiac":
            new = amnesiac_unlearn(run, model)
        else:
            target = ds.batch(run.schedule[req.target_batch_index])
            new = single_gradient_unlearn(run, model, target, tcfg.eta, len(target),
                                          m=tcfg.epochs_over_target, gradient_point=req.gradient_point)
        write_checkpoint(d / "checkpoints" / "unlearned.uwgt", new.params)
        out["method"] = req.method
    return out


def cmd_verify(cfg, args):
    d = Path(args.out) / cfg.run_id()
    metrics = run_cell(cfg, d)
    return {"run_id": cfg.run_id(), "out": str(d), **metrics}


def cmd_prs(cfg, args):
    return cmd_verify(cfg.updated({"prs.enabled": True}), args)


def cmd_bounds(cfg, args):
    scn = default_scenario(n=cfg["bounds.n"], dim=cfg["bounds.dim"], noise_sigma=cfg["bounds.noise_sigma"],
                           eta=cfg["bounds.eta"], seed=cfg["bounds.seed"], m_epochs=cfg["bounds.m_epochs"])
    lemma = check_lemma1(scn)
    cor = check_corollary1(scn)
    rev = check_reverse_bound(scn)
    d = _run_dir(cfg, args.out)
    with open(d / "report.jsonl", "w") as fh:
        for kind, rep in (("lemma1", lemma), ("corollary1", cor), ("reverse", rev)):
            fh.write(json.dumps({"kind": kind, **rep}) + "\n")
    return {"n_orderings": lemma["n_orderings"], "sup_diff": lemma["sup_diff"], "L": lemma["L"],
            "d": lemma["d"], "v": cor["v"], "corollary_sup_diff": cor["sup_diff"],
            "improves": cor["improves"], "reverse_holds": rev["holds"],
            "bound_holds": lemma["bound_holds"] and cor["bound_holds"]}


def cmd_landscape(cfg, args):
    out = Path(args.out) / "landscape"
    out.mkdir(parents=True, exist_ok=True)
    r = cfg["landscape.range"]
    summary = {}
    for g in floats(cfg["landscape.gamma"]):
        grid = landscape_grid(g, (-r, r), (-r, r), cfg["landscape.resolution"])
        name = f"landscape_gamma_{g:g}.csv"
        write_table_csv(out / name, [dict(zip(("a", "b", "loss", "ga", "gb"), row)) for row in grid.tolist()],
                        ["a", "b", "loss", "ga", "gb"])
        summary[f"gamma_{g:g}_flip_margin"] = flip_margin(g)
        summary[f"gamma_{g:g}_grid_flip_margin"] = grid_flip_margin(grid)
    summary["files"] = len(floats(cfg["landscape.gamma"]))
    summary["out"] = str(out)
    return summary


def cmd_correlate(cfg, args):
    if not args.table:
        raise ConfigError("correlate needs --table PATH")
    r, rho = correlate_results(args.table, args.x, args.y, args.out)
    return {"pearson": r, "spearman": rho, "out": args.out}


def cmd_plan(args, overrides):
    if not args.config:
        raise ConfigError("plan needs --config PLAN")
    plan = load_plan(args.config, args.out)
    plan.base = plan.base.updated(overrides)
    outcome = run_plan(plan, workers=args.workers)
    failed = sum(r["status"] != "ok" for r in outcome.rows)
    return {"cells": len(outcome.rows), "computed": len(outcome.computed), "cached": len(outcome.cached),
            "failed": failed, "results": str(outcome.results_path)}


def main(argv=None):
    args, extra = _parser().parse_known_args(argv)
    try:
        overrides = _overrides(args, extra)
        if args.command == "plan":
            summary = cmd_plan(args, overrides)
        else:
            cfg = load_config(args.config).updated(overrides)
            handler = {"train": cmd_train, "unlearn": lambda c, a: cmd_train(c, a, unlearn=True),
                       "verify": cmd_verify, "prs": cmd_prs, "bounds": cmd_bounds,
                       "landscape": cmd_landscape, "correlate": cmd_correlate}[args.command]
            summary = handler(cfg, args)
    except Exception as exc:
        record = {"error": type(exc).__name__, "message": str(exc), "command": args.command}
        for attr in ("step", "offset"):
            if hasattr(exc, attr):
                record[attr] = getattr(exc, attr)
        print(json.dumps(record), file=sys.stderr)
        return 2
    _emit(summary)
    return 0


if __name__ == "__main__":
    sys.exit(main())

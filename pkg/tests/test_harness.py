import json
import struct
import subprocess
import sys
import xml.etree.ElementTree as ET

import numpy as np
import pytest
from sklearn.base import clone

from sgdunlearn import SGDUnlearningClassifier
from sgdunlearn.cli import main
from sgdunlearn.config import Config, load_plan, parse_config, parse_plan
from sgdunlearn.data import gen_blobs, gen_moons, load_csv, load_idx, save_csv, write_idx
from sgdunlearn.exceptions import ConfigError, DataError, FormatError
from sgdunlearn.io import (read_checkpoint, read_runlog_csv, read_table_csv, write_checkpoint,
                           write_runlog_csv)
from sgdunlearn.nn import make_mlp
from sgdunlearn.plan import correlate_results, run_plan
from sgdunlearn.unlearn import TrainConfig, train

DEFAULT_RUN_ID = "e46a258fa376"


class TestDatasets:
    def test_blobs_deterministic(self):
        a, b = gen_blobs(100, 3, seed=4), gen_blobs(100, 3, seed=4)
        np.testing.assert_array_equal(a.inputs, b.inputs)
        np.testing.assert_array_equal(a.train_idx, b.train_idx)

    def test_balanced(self):
        counts = np.bincount(gen_blobs(101, 3, seed=1).labels)
        assert counts.max() - counts.min() <= 1

    def test_split(self):
        ds = gen_moons(50, seed=2)
        assert ds.train_idx.size == 40 and ds.test_idx.size == 10
        assert not set(ds.train_idx) & set(ds.test_idx)
        assert sorted(np.concatenate([ds.train_idx, ds.test_idx])) == list(range(50))

    def test_zero_spread_separable(self):
        ds = gen_blobs(60, 3, spread=0.0, seed=0)
        model, _ = train(make_mlp([2, 3]), ds, TrainConfig(eta=0.5, batch_size=16, finetune_steps=200))
        assert model.accuracy(ds.train_batch()) == 1.0

    def test_too_small(self):
        with pytest.raises(ValueError):
            gen_blobs(5)


class TestCsv:
    def test_three_rows(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("a,b,label\n0.5,1,0\n-1,2.25,1\n3,4,0\n")
        ds = load_csv(p)
        assert ds.inputs.shape == (3, 2)
        np.testing.assert_array_equal(ds.labels, [0, 1, 0])

    def test_round_trip(self, tmp_path):
        ds = gen_blobs(40, seed=9)
        save_csv(ds, tmp_path / "b.csv")
        back = load_csv(tmp_path / "b.csv")
        np.testing.assert_array_equal(back.inputs, ds.inputs)
        np.testing.assert_array_equal(back.labels, ds.labels)

    @pytest.mark.parametrize("body", ["a,label\n1,0\n2\n", "a,label\nx,0\n", "a,label\n1,0.5\n", "a,label\n"])
    def test_malformed(self, tmp_path, body):
        p = tmp_path / "bad.csv"
        p.write_text(body)
        with pytest.raises(DataError):
            load_csv(p)

    def test_missing_label_column(self, tmp_path):
        p = tmp_path / "d.csv"
        p.write_text("a,b\n1,0\n")
        with pytest.raises(DataError):
            load_csv(p, "label")


class TestIdx:
    def test_round_trip(self, tmp_path):
        imgs = np.arange(2 * 3 * 3, dtype=np.uint8).reshape(2, 3, 3) * 10
        write_idx(tmp_path / "i.idx", imgs)
        write_idx(tmp_path / "l.idx", np.array([1, 0], dtype=np.uint8))
        ds = load_idx(tmp_path / "i.idx", tmp_path / "l.idx")
        assert ds.inputs.shape == (2, 9)
        np.testing.assert_allclose(ds.inputs, imgs.reshape(2, 9) / 255.0)
        assert ds.inputs.max() <= 1.0

    def test_magic_mismatch(self, tmp_path):
        write_idx(tmp_path / "l.idx", np.array([1, 0], dtype=np.uint8))
        with pytest.raises(FormatError) as err:
            load_idx(tmp_path / "l.idx", tmp_path / "l.idx")
        assert err.value.offset == 0

    def test_truncated(self, tmp_path):
        (tmp_path / "i.idx").write_bytes(struct.pack(">IIII", 0x803, 4, 2, 2) + b"\x00" * 5)
        write_idx(tmp_path / "l.idx", np.zeros(4, dtype=np.uint8))
        with pytest.raises(FormatError):
            load_idx(tmp_path / "i.idx", tmp_path / "l.idx")


class TestFiles:
    def test_checkpoint_round_trip(self, tmp_path, rng):
        w = rng.standard_normal(17)
        write_checkpoint(tmp_path / "w.uwgt", w)
        assert read_checkpoint(tmp_path / "w.uwgt").tobytes() == w.tobytes()
        raw = (tmp_path / "w.uwgt").read_bytes()
        assert raw[:4] == b"UWGT" and struct.unpack("<IQ", raw[4:16]) == (1, 17)

    def test_checkpoint_bad_magic(self, tmp_path):
        (tmp_path / "x.uwgt").write_bytes(b"NOPE" + bytes(12))
        with pytest.raises(FormatError):
            read_checkpoint(tmp_path / "x.uwgt")

    def test_runlog_round_trip(self, tmp_path):
        ds = gen_blobs(64)
        _, run = train(make_mlp([2, 4, 2]), ds, TrainConfig(finetune_steps=12, sigma_every=5))
        write_runlog_csv(tmp_path / "r.csv", run.records)
        assert read_runlog_csv(tmp_path / "r.csv") == run.records
        head, first = (tmp_path / "r.csv").read_text().splitlines()[:2]
        assert head == "step,loss,accuracy,sigma_top,delta_w_norm"
        assert "," not in first.split(",")[1].replace(".", "")  # '.' decimals only


class TestConfig:
    def test_round_trip(self):
        cfg = parse_config("train.eta=0.1\n# note\n\nmodel.hidden=8,8\nprs.enabled=yes\n")
        again = parse_config(cfg.serialize())
        assert again == cfg
        assert parse_config(cfg.serialize(explicit_only=True)).serialize() == cfg.serialize()

    def test_typing(self):
        cfg = parse_config("train.batch_size=16\ntrain.eta=1e-2\ntrain.log_updates=false\n")
        assert cfg["train.batch_size"] == 16 and cfg["train.eta"] == 0.01 and cfg["train.log_updates"] is False

    def test_bad_value(self):
        with pytest.raises(ConfigError):
            parse_config("train.batch_size=1.5\n")

    def test_unknown_key_lists_valid(self):
        with pytest.raises(ConfigError, match="train.eta"):
            parse_config("train.etaa=0.1\n")

    def test_run_id_frozen(self):
        assert Config().run_id() == DEFAULT_RUN_ID
        assert parse_config("train.eta=0.05\n").run_id() == DEFAULT_RUN_ID

    def test_run_id_differs(self):
        assert parse_config("train.eta=0.1\n").run_id() != DEFAULT_RUN_ID

    def test_grid_rejected_in_config(self):
        with pytest.raises(ConfigError):
            parse_config("grid.train.eta=0.1,0.2\n")

    def test_plan_cells_unique(self):
        plan = parse_plan("grid.train.eta=0.01,0.02\ngrid.train.seed=0,1,2\n")
        ids = [c.run_id() for c in plan.cells()]
        assert len(ids) == 6 == len(set(ids))


@pytest.fixture
def fast_plan(tmp_path):
    text = "data.n=96\nmodel.hidden=6\ntrain.sigma_every=5\ngrid.train.finetune_steps=5,10,20,40\n"
    return parse_plan(text, out_dir=tmp_path / "runs")


class TestPlan:
    def test_t1_row(self, tmp_path):
        out = run_plan(parse_plan("train.finetune_steps=1\n", out_dir=tmp_path))
        row = out.rows[0]
        assert row["status"] == "ok" and row["e"] == 0.0 and row["v"] <= 1e-10

    def test_layout(self, tmp_path):
        out = run_plan(parse_plan("train.finetune_steps=10\ninstrument.sample_every=2\n", out_dir=tmp_path))
        cell = tmp_path / out.rows[0]["run_id"]
        for name in ("config.txt", "runlog.csv", "report.jsonl", "plots/trajectory_e_v.svg"):
            assert (cell / name).exists()
        assert len(list((cell / "checkpoints").glob("*.uwgt"))) == 4
        lines = [json.loads(x) for x in (cell / "report.jsonl").read_text().splitlines()]
        assert lines[-1]["kind"] == "final"

    def test_idempotent(self, fast_plan):
        first = run_plan(fast_plan)
        assert len(first.computed) == 4
        text = first.results_path.read_bytes()
        second = run_plan(fast_plan)
        assert second.computed == [] and len(second.cached) == 4
        assert second.results_path.read_bytes() == text

    def test_e_increases_with_t(self, fast_plan):
        rows = run_plan(fast_plan).rows
        es = [r["e"] for r in sorted(rows, key=lambda r: r["train.finetune_steps"])]
        assert all(b > a for a, b in zip(es, es[1:]))

    def test_workers_match_serial(self, fast_plan, tmp_path):
        serial = run_plan(fast_plan).results_path.read_bytes()
        fast_plan.out_dir = tmp_path / "parallel"
        assert run_plan(fast_plan, workers=2).results_path.read_bytes() == serial

    def test_cell_failure_recorded(self, tmp_path):
        plan = parse_plan(f"train.finetune_steps=5\ndata.path={tmp_path / 'missing.csv'}\n"
                          "grid.data.kind=blobs,csv\n", out_dir=tmp_path)
        out = run_plan(plan)
        status = {r["data.kind"]: r["status"] for r in out.rows}
        assert status == {"blobs": "ok", "csv": "error"}
        assert "FileNotFoundError" in [r for r in out.rows if r["status"] == "error"][0]["error"]
        # failed cells are retried, completed ones are not
        again = run_plan(plan)
        assert len(again.computed) == 1 and len(again.cached) == 1

    def test_results_csv(self, fast_plan):
        rows = read_table_csv(run_plan(fast_plan).results_path)
        assert len(rows) == 4 and {"run_id", "e", "v", "train.eta"} <= set(rows[0])


class TestCorrelate:
    def test_colinear(self, tmp_path):
        table = [{"x": k, "y": 2 * k + 1} for k in range(5)]
        assert correlate_results(table, "x", "y") == pytest.approx((1.0, 1.0))

    def test_svg_markers(self, tmp_path):
        table = [{"e": k, "v": k * k} for k in range(7)]
        correlate_results(table, "e", "v", tmp_path, name="s")
        root = ET.parse(tmp_path / "s.svg").getroot()
        circles = [el for el in root.iter() if el.tag.endswith("circle")]
        assert len(circles) == 7
        assert len(read_table_csv(tmp_path / "s.csv")) == 7

    def test_too_few_rows(self):
        with pytest.raises(DataError):
            correlate_results([{"x": 1, "y": 2}, {"x": 2, "y": 3}], "x", "y")

    def test_skips_non_finite(self):
        table = [{"x": 1, "y": 1}, {"x": 2, "y": float("nan")}, {"x": 3, "y": 3}, {"x": 4, "y": ""},
                 {"x": 5, "y": 5}]
        assert correlate_results(table, "x", "y")[0] == pytest.approx(1.0)


class TestCli:
    def test_verify_t1(self, tmp_path, capsys):
        cfg = tmp_path / "t1.cfg"
        cfg.write_text("train.finetune_steps=1\n")
        assert main(["verify", "--config", str(cfg), "--out", str(tmp_path)]) == 0
        out = dict(line.split("=", 1) for line in capsys.readouterr().out.splitlines())
        assert float(out["e"]) == 0.0 and float(out["v"]) <= 1e-10

    def test_bounds(self, tmp_path, capsys):
        assert main(["bounds", "--out", str(tmp_path)]) == 0
        assert "bound_holds=true" in capsys.readouterr().out.splitlines()

    def test_landscape_fan_out(self, tmp_path, capsys):
        assert main(["landscape", "--gamma", "0.01,0.1,1,5", "--out", str(tmp_path)]) == 0
        files = sorted((tmp_path / "landscape").glob("*.csv"))
        assert len(files) == 4
        assert files[0].read_text().splitlines()[0] == "a,b,loss,ga,gb"

    def test_overrides(self, tmp_path, capsys):
        assert main(["train", "--out", str(tmp_path), "--train.finetune_steps", "3", "--set",
                     "model.hidden=4", "--seed", "2"]) == 0
        out = dict(line.split("=", 1) for line in capsys.readouterr().out.splitlines())
        cfg = parse_config((tmp_path / out["run_id"] / "config.txt").read_text())
        assert cfg["train.finetune_steps"] == 3 and cfg["model.hidden"] == "4" and cfg["train.seed"] == 2

    def test_unknown_key(self, tmp_path, capsys):
        assert main(["verify", "--set", "train.nope=1", "--out", str(tmp_path)]) != 0
        record = json.loads(capsys.readouterr().err)
        assert record["error"] == "ConfigError" and "train.eta" in record["message"]

    def test_console_script(self, tmp_path):
        proc = subprocess.run([sys.executable, "-m", "sgdunlearn.cli", "bounds", "--out", str(tmp_path)],
                              capture_output=True, text=True)
        assert proc.returncode == 0 and "bound_holds=true" in proc.stdout


class TestEstimator:
    def test_params(self):
        est = SGDUnlearningClassifier(eta=0.1, hidden=(4,))
        assert est.get_params()["eta"] == 0.1
        assert clone(est).get_params() == est.get_params()

    def test_fit_predict(self):
        ds = gen_blobs(200, 3, seed=1)
        est = SGDUnlearningClassifier(finetune_steps=150).fit(ds.inputs[ds.train_idx], ds.labels[ds.train_idx] + 5)
        assert set(est.predict(ds.inputs[ds.test_idx])) <= {5, 6, 7}
        assert est.score(ds.inputs[ds.test_idx], ds.labels[ds.test_idx] + 5) > 0.9
        np.testing.assert_allclose(est.predict_proba(ds.inputs[:3]).sum(axis=1), 1.0)
        assert est.unlearning_error_ > 0

    def test_unlearn_t1_exact(self):
        ds = gen_blobs(64, seed=0)
        est = SGDUnlearningClassifier(finetune_steps=1, sigma_every=1).fit(ds.inputs, ds.labels)
        assert est.unlearning_error_ == 0.0
        assert est.unlearn().verification_error() <= 1e-10

    def test_unlearn_adds_back_initial_gradient(self):
        ds = gen_blobs(128, seed=0)
        est = SGDUnlearningClassifier(finetune_steps=30).fit(ds.inputs, ds.labels)
        w_final = est.model_.params.copy()
        w_n = est.run_.checkpoints[est.run_.start_step]
        g = est.model_.with_params(w_n).grad(est.dataset_.batch(est.forget_set_))
        np.testing.assert_allclose(est.unlearn().model_.params, w_final + est.eta * g, rtol=0, atol=1e-15)

    def test_unlearn_once(self):
        ds = gen_blobs(64, seed=0)
        est = SGDUnlearningClassifier(finetune_steps=5).fit(ds.inputs, ds.labels).unlearn()
        with pytest.raises(Exception, match="already"):
            est.unlearn()

    def test_wrong_width(self):
        ds = gen_blobs(64, seed=0)
        est = SGDUnlearningClassifier(finetune_steps=2).fit(ds.inputs, ds.labels)
        with pytest.raises(ValueError):
            est.predict(np.ones((2, 3)))

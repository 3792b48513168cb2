import json
import subprocess
import sys

import pytest

from sgol import runs
from sgol.cli import main

GEN = {"train_scenes": 12, "test_scenes": 6, "train_sketches_per_class": 3, "test_sketches_per_class": 2}
MODEL = {"d": 8, "num_queries": 6, "heads": 2, "enc_layers": 1, "dec_layers": 1, "ffn_dim": 8,
         "backbone_channels": [4, 4, 4], "sketch_channels": [4, 4, 4], "mask_hidden": 2}
TRAIN = {"epochs": 2, "pretrain_epochs": 2, "mask_epochs": 1, "classifier_epochs": 3, "model": MODEL}


def sgol(*args) -> int:
    return main([str(a) for a in args])


@pytest.fixture(scope="module")
def work(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "gen.json").write_text(json.dumps(GEN))
    (root / "train.json").write_text(json.dumps(TRAIN))
    assert sgol("gen", "--config", root / "gen.json", "--out", root / "ds") == 0
    assert sgol("train", "--config", root / "train.json", "--dataset", root / "ds", "--out", root / "cc", "--pretrain-first") == 0
    return root


def read(path):
    return (path / "report.json").read_bytes()


class TestGen:
    def test_summary(self, tmp_path, capsys):
        assert sgol("gen", "--config", _write(tmp_path, GEN), "--out", tmp_path / "ds") == 0
        summary = json.loads(capsys.readouterr().out)
        assert summary["classes"] == 8
        assert summary["splits"] == {"Q&S": [2, 3, 4, 5], "Q-S": [6, 7], "S-Q": [0, 1]}
        assert summary["scenes"] == {"train": 12, "test": 6}

    def test_twice_identical(self, work, tmp_path):
        assert sgol("gen", "--config", work / "gen.json", "--out", tmp_path / "again") == 0
        a = sorted(p.relative_to(work / "ds") for p in (work / "ds").rglob("*") if p.is_file() and p.name not in ("config.json", "run.json"))
        b = sorted(p.relative_to(tmp_path / "again") for p in (tmp_path / "again").rglob("*") if p.is_file() and p.name not in ("config.json", "run.json"))
        assert a == b
        assert all((work / "ds" / f).read_bytes() == (tmp_path / "again" / f).read_bytes() for f in a)


def _write(tmp_path, obj, name="c.json"):
    p = tmp_path / name
    p.write_text(json.dumps(obj))
    return p


class TestExitCodes:
    def test_unknown_flag_is_usage(self, capsys):
        with pytest.raises(SystemExit) as exc:
            sgol("gen", "--bogus")
        assert exc.value.code == 1

    def test_unknown_config_key(self, work, tmp_path):
        assert sgol("gen", "--config", _write(tmp_path, {"nope": 1}), "--out", tmp_path / "x") == 1

    def test_bad_json(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{")
        assert sgol("gen", "--config", p, "--out", tmp_path / "x") == 1

    def test_missing_dataset(self, tmp_path):
        assert sgol("eval", "--dataset", tmp_path / "none", "--checkpoint", tmp_path / "m", "--out", tmp_path / "o") == 2

    def test_missing_config_file(self, tmp_path):
        assert sgol("gen", "--config", tmp_path / "none.json", "--out", tmp_path / "x") == 2

    def test_conditioned_needs_pretrained(self, work, tmp_path):
        assert sgol("train", "--config", work / "train.json", "--dataset", work / "ds", "--out", tmp_path / "t") == 2

    def test_mask_refused_without_checkpoint(self, work, tmp_path):
        code = sgol("train", "--config", work / "train.json", "--dataset", work / "ds", "--out", tmp_path / "t", "--mask")
        assert code == 2
        assert not (tmp_path / "t" / "model.ckpt").exists()

    def test_mask_eval_without_head(self, work, tmp_path):
        assert sgol("eval", "--dataset", work / "ds", "--checkpoint", work / "cc" / "model", "--out", tmp_path / "e", "--mask") == 1

    def test_too_few_queries(self, work, tmp_path):
        cfg = dict(TRAIN, model=dict(MODEL, num_queries=1))
        assert sgol("train", "--config", _write(tmp_path, cfg), "--dataset", work / "ds", "--out", tmp_path / "t", "--variant", "multiclass") == 1

    def test_empty_split(self, work, tmp_path):
        # a model trained on classes 0-1 has nothing to score with sketches of classes 6-7
        gen = dict(GEN, vocab_a=[0, 1], vocab_b=[6, 7])
        assert sgol("gen", "--config", _write(tmp_path, gen, "g.json"), "--out", tmp_path / "ds") == 0
        assert sgol("train", "--config", work / "train.json", "--dataset", tmp_path / "ds", "--out", tmp_path / "cc", "--pretrain-first") == 0
        ck = tmp_path / "cc" / "model"
        assert sgol("eval", "--dataset", tmp_path / "ds", "--checkpoint", ck, "--style-eval", "B", "--out", tmp_path / "e") == 4
        # cross still scores the query-only split when the shared one is empty
        assert sgol("cross", "--dataset", tmp_path / "ds", "--checkpoint", ck, "--out", tmp_path / "x") == 0
        assert list(runs.load_report(tmp_path / "x")["metrics"]["splits"]) == ["Q-S"]

    def test_subprocess_entry_point(self, tmp_path):
        res = subprocess.run([sys.executable, "-m", "sgol.cli", "eval", "--out", str(tmp_path / "o")], capture_output=True, text=True)
        assert res.returncode == 1
        assert "dataset" in res.stderr


class TestRuns:
    def test_rerun_is_byte_identical(self, work, tmp_path):
        assert sgol("train", "--config", work / "train.json", "--dataset", work / "ds", "--out", tmp_path / "cc", "--pretrain-first") == 0
        for sub in ("", "pretrain/detector", "pretrain/classifier"):
            assert (work / "cc" / sub / "model.ckpt").read_bytes() == (tmp_path / "cc" / sub / "model.ckpt").read_bytes()
        assert read(work / "cc") == read(tmp_path / "cc")

    def test_eval_rerun_and_threads(self, work, tmp_path):
        args = ("eval", "--dataset", work / "ds", "--checkpoint", work / "cc" / "model")
        assert sgol(*args, "--out", tmp_path / "a") == 0
        assert sgol(*args, "--out", tmp_path / "b", "--threads", "3") == 0
        assert read(tmp_path / "a") == read(tmp_path / "b")
        assert sorted(p.name for p in (tmp_path / "a").glob("pr_box_*.csv"))

    def test_cross_same_style_equals_eval(self, work, tmp_path):
        ck = work / "cc" / "model"
        assert sgol("eval", "--dataset", work / "ds", "--checkpoint", ck, "--out", tmp_path / "e") == 0
        assert sgol("cross", "--dataset", work / "ds", "--checkpoint", ck, "--style-eval", "A", "--out", tmp_path / "c") == 0
        ev = runs.load_report(tmp_path / "e")["metrics"]["box"]
        cr = runs.load_report(tmp_path / "c")["metrics"]["splits"]
        assert list(cr) == ["Q&S"]
        assert cr["Q&S"]["box"]["mAP"] == ev["mAP"] and cr["Q&S"]["box"]["AP50"] == ev["AP50"]

    def test_mask_metrics_reported(self, work, tmp_path):
        assert sgol("train", "--config", work / "train.json", "--dataset", work / "ds", "--out", tmp_path / "m", "--mask", "--checkpoint", work / "cc" / "model") == 0
        assert sgol("eval", "--dataset", work / "ds", "--checkpoint", tmp_path / "m" / "model", "--out", tmp_path / "e", "--mask") == 0
        metrics = runs.load_report(tmp_path / "e")["metrics"]
        assert {"box", "mask"} <= set(metrics)
        assert runs.load_report(tmp_path / "m")["metrics"]["mask"]["loss"]["mask_dice"]

    def test_t2b_upper_bound_dominates(self, work, tmp_path):
        det, clf = work / "cc/pretrain/detector/model", work / "cc/pretrain/classifier/model"
        assert sgol("t2b", "--dataset", work / "ds", "--checkpoint", det, "--classifier", clf, "--out", tmp_path / "t") == 0
        assert sgol("t2b", "--dataset", work / "ds", "--checkpoint", det, "--upper-bound", "--out", tmp_path / "u") == 0
        t = runs.load_report(tmp_path / "t")["metrics"]["box"]["mAP"]
        u = runs.load_report(tmp_path / "u")["metrics"]["box"]["mAP"]
        assert u >= t

    def test_flag_overrides_config_file(self, work, tmp_path):
        assert sgol("train", "--config", work / "train.json", "--dataset", work / "ds", "--out", tmp_path / "c",
                    "--variant", "sketch_classifier", "--seed", "5") == 0
        cfg = json.loads((tmp_path / "c" / "config.json").read_text())
        assert cfg["seed"] == 5 and cfg["classifier_epochs"] == 3 and cfg["model"]["d"] == 8

    def test_digest_ignores_paths_and_threads(self):
        cfg = runs.resolve_config("eval")
        other = dict(cfg, out="/elsewhere", dataset="/x", threads=8)
        assert runs.config_digest("eval", cfg, {}) == runs.config_digest("eval", other, {})
        assert runs.config_digest("eval", cfg, {}) != runs.config_digest("cross", cfg, {})
        assert runs.config_digest("eval", cfg, {}) != runs.config_digest("eval", dict(cfg, seed=1), {})

    def test_verify_summary(self, capsys, monkeypatch):
        monkeypatch.setattr("sgol.verify.SUITES", ("geometry",))
        results = {"passed": True, "cases": [{"suite": "geometry", "name": "x", "passed": True, "detail": "ok"}]}
        monkeypatch.setattr(runs, "run", lambda *a, **k: results)
        assert sgol("verify") == 0
        out = capsys.readouterr().out
        assert "PASS geometry/x: ok" in out and "all suites passed" in out
        results["passed"] = False
        assert sgol("verify") == 5

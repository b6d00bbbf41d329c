import json

import numpy as np
import pytest

from stcrf.cli import main
from stcrf.energy import init_model
from stcrf.evaluation import RelationInstance, Trajectory
from stcrf.inference import init_marginals
from stcrf.io import load_checkpoint, read_instances, save_checkpoint, write_instances, write_relations
from stcrf.synth import SynthConfig, generate_dataset, synth_spec

SYNTH = {"label_sizes": [3, 3], "num_steps": 2, "num_instances": 40, "coupling": 2.0}


def write_config(tmp_path, **extra):
    cfg = {"mode": "gsteg", "rank": 2, "synth": SYNTH,
           "train": {"learning_rate": 0.01, "batch_size": 16, "epochs": 2}, **extra}
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg, indent=1))
    return path


def test_train_writes_checkpoint_and_log(tmp_path, capsys):
    cfg = write_config(tmp_path)
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "run")]) == 0
    model, _ = load_checkpoint(tmp_path / "run" / "checkpoint.json")
    assert model.mode.value == "gsteg"
    lines = (tmp_path / "run" / "train_log.jsonl").read_text().splitlines()
    assert len(lines) == 2 * 3
    assert len(json.loads((tmp_path / "run" / "losses.json").read_text())) == 2


def test_zero_learning_rate_keeps_initialization(tmp_path):
    cfg = write_config(tmp_path, train={"learning_rate": 0.0, "epochs": 1})
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "r"), "--mode", "steg",
                 "--seed", "4"]) == 0
    trained, _ = load_checkpoint(tmp_path / "r" / "checkpoint.json")
    from stcrf.seeding import substream
    init = init_model(synth_spec((3, 3), 2), "steg", seed=substream(4, "init"))
    for k, v in init.params.items():
        np.testing.assert_array_equal(trained.params[k], v)


def test_missing_paths_and_bad_config(tmp_path, capsys):
    assert main(["train", "--config", str(tmp_path / "nope.json")]) == 2
    assert "nope.json" in capsys.readouterr().err
    cfg = write_config(tmp_path, data={"train": "missing.jsonl"})
    assert main(["train", "--config", str(cfg)]) == 2
    assert "missing.jsonl" in capsys.readouterr().err
    bad = tmp_path / "bad.json"
    bad.write_text('{\n "mode": "gsteg",\n "rank": }\n')
    assert main(["train", "--config", str(bad)]) == 2
    assert "bad.json:3" in capsys.readouterr().err


def test_usage_errors_exit_one():
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        main(["train", "--mode", "xyz", "--config", "c.json"])
    assert exc.value.code == 1


def test_infer_ueg_matches_unary_softmax(tmp_path):
    spec = synth_spec((3, 3), 2)
    model = init_model(spec, "ueg", seed=1)
    save_checkpoint(tmp_path / "ck.json", model)
    insts = generate_dataset(SynthConfig(spec, num_instances=5))
    write_instances(tmp_path / "in.jsonl", insts)
    assert main(["infer", str(tmp_path / "ck.json"), str(tmp_path / "in.jsonl"),
                 "--out", str(tmp_path / "o")]) == 0
    rows = [json.loads(l) for l in (tmp_path / "o" / "marginals.jsonl").read_text().splitlines()]
    for inst, row in zip(insts, rows):
        np.testing.assert_allclose(np.array(row), init_marginals(model, inst).values, atol=1e-15)


def test_infer_rejects_spec_mismatch_and_truncated_lines(tmp_path, capsys):
    model = init_model(synth_spec((3, 3), 2), "ueg")
    save_checkpoint(tmp_path / "ck.json", model)
    write_instances(tmp_path / "other.jsonl",
                    generate_dataset(SynthConfig(synth_spec((2, 3), 2), num_instances=2)))
    assert main(["infer", str(tmp_path / "ck.json"), str(tmp_path / "other.jsonl")]) == 2
    assert "spec mismatch" in capsys.readouterr().err
    write_instances(tmp_path / "ok.jsonl", generate_dataset(SynthConfig(synth_spec((3, 3), 2), num_instances=3)))
    lines = (tmp_path / "ok.jsonl").read_text().splitlines()
    (tmp_path / "trunc.jsonl").write_text("\n".join([lines[0], lines[1][:30], lines[2]]) + "\n")
    assert main(["infer", str(tmp_path / "ck.json"), str(tmp_path / "trunc.jsonl")]) == 2
    assert "trunc.jsonl:2" in capsys.readouterr().err


def test_pipeline_train_infer_eval(tmp_path, capsys):
    cfg = write_config(tmp_path)
    run = tmp_path / "run"
    assert main(["synth", "--config", str(cfg), "--seed", "9", "--out", str(run),
                 "--name", "test.jsonl", "--num-instances", "20"]) == 0
    assert len(read_instances(run / "test.jsonl")) == 20
    assert main(["train", "--config", str(cfg), "--out", str(run)]) == 0
    assert main(["infer", str(run / "checkpoint.json"), str(run / "test.jsonl"), "--out", str(run),
                 "--passes", "3", "--relations"]) == 0
    capsys.readouterr()
    assert main(["eval", "recognize", str(run / "labels.jsonl"), str(run / "test.jsonl")]) == 0
    report = json.loads(capsys.readouterr().out)
    assert set(report["acc_at_1"]) == {"entity0", "entity1", "relationship"}
    assert main(["eval", "tag", str(run / "relations.jsonl"), str(run / "relations.jsonl"),
                 "--k", "1"]) == 0
    assert json.loads(capsys.readouterr().out)["precision_at"] == {"1": 1.0}


def _relation_files(tmp_path):
    t = Trajectory(0, np.array([[0.0, 0.0, 4.0, 4.0]]))
    gt = [RelationInstance((0, 0, 0), 1.0, None, t, t, "v"), RelationInstance((1, 1, 1), 1.0, None, t, t, "v")]
    preds = [RelationInstance((0, 0, 0), 0.9, None, t, t, "v"),
             RelationInstance((0, 1, 0), 0.8, None, t, t, "v"),
             RelationInstance((1, 1, 1), 0.7, None, t, t, "v")]
    write_relations(tmp_path / "gt.jsonl", gt)
    write_relations(tmp_path / "pred.jsonl", preds)
    return tmp_path / "pred.jsonl", tmp_path / "gt.jsonl"


def test_eval_detect_hand_case_through_files(tmp_path, capsys):
    pred, gt = _relation_files(tmp_path)
    assert main(["eval", "detect", str(pred), str(gt), "--k", "2"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["recall_at"] == {"2": 0.5}
    assert report["map"] == pytest.approx(5 / 6)
    assert main(["eval", "detect", str(gt), str(gt), "--k", "2", "--pooled-map"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["recall_at"] == {"2": 1.0} and report["map"] == 1.0


def test_eval_zero_shot_covering_train_set(tmp_path, capsys):
    pred, gt = _relation_files(tmp_path)
    assert main(["eval", "detect", str(pred), str(gt), "--zero-shot", str(gt)]) == 0
    captured = capsys.readouterr()
    assert "zero-shot split is empty" in captured.err
    report = json.loads(captured.out)
    assert report["map"] is None and report["recall_at"]["50"] is None


def test_verify_suites(capsys):
    assert main(["verify", "metrics"]) == 0
    assert main(["verify", "oracle"]) == 0
    out = capsys.readouterr().out
    assert "PASS oracle/ueg-exact" in out and "PASS oracle/weak-coupling-l1" in out
    assert main(["verify", "freeenergy", "--schedule", "parallel"]) == 0
    assert "skipped" in capsys.readouterr().out


def test_verify_failure_exit_code(monkeypatch):
    from stcrf import cli
    from stcrf.verify import CheckResult
    monkeypatch.setattr(cli, "run_suite", lambda *a, **k: [CheckResult("x", 1.0, 0.5, False)])
    assert main(["verify", "metrics"]) == 3

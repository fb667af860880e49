"""Command line round trips on a miniature dataset."""

import json
import os

import numpy as np
import pytest

from anticipation.cli import main

INI = """
[paths]
data = {data}
out = {out}

[synthetic]
n_videos = 6
actions_per_video = 5
val_videos = 2
n_actions = 6
n_verbs = 3
n_nouns = 2
appearance_dim = 8
n_object_classes = 6
seed = 3

[model]
hidden = 10
dropout_p = 0.0

[training]
lr = 0.1
scp_epochs = 1
scp_epochs_obj = 1
branch_epochs = 1
joint_epochs = 1
early_stop_metric = mean_top1_over_rates
seed = 0

[run]
fusion = matt
eval_k = 3
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory, capfd=None):
    root = tmp_path_factory.mktemp("cli")
    data = os.path.join(root, "data")
    out = os.path.join(root, "run")
    ini = os.path.join(root, "run.ini")
    with open(ini, "w") as f:
        f.write(INI.format(data=data, out=out))
    assert main(["gen-data", "--out", data, "--config", ini]) == 0
    assert main(["train", "--config", ini]) == 0
    return {"root": root, "data": data, "out": out, "ini": ini}


def test_gen_data_writes_expected_layout(workspace):
    data = workspace["data"]
    for name in ("manifest.json", "vocab.json", "annotations_train.csv",
                 "annotations_val.csv", "detections.csv"):
        assert os.path.exists(os.path.join(data, name)), name
    manifest = json.load(open(os.path.join(data, "manifest.json")))
    assert manifest["modalities"] == ["app", "obj"]
    feats = os.listdir(os.path.join(data, "features"))
    assert sorted(feats) == [f"video{i:03d}_app.ruft" for i in range(6)]


def test_train_writes_artifacts(workspace):
    out = workspace["out"]
    for name in ("checkpoint.ruck", "train_report.json", "eval_report.json",
                 "eval_report.txt", "scores_val.csv"):
        assert os.path.exists(os.path.join(out, name)), name
    reports = json.load(open(os.path.join(out, "train_report.json")))
    assert set(reports) == {"scp[app]", "scp[obj]", "branch[app]",
                            "branch[obj]", "joint"}
    for rep in reports.values():
        assert "wall_clock_s" not in rep


def test_train_is_deterministic(workspace, tmp_path):
    out2 = os.path.join(tmp_path, "rerun")
    assert main(["train", "--config", workspace["ini"],
                 "--set", f"paths.out={out2}"]) == 0
    for name in ("checkpoint.ruck", "eval_report.json", "scores_val.csv"):
        a = open(os.path.join(workspace["out"], name), "rb").read()
        b = open(os.path.join(out2, name), "rb").read()
        assert a == b, f"{name} differs between identical runs"


def test_eval_checkpoint(workspace, tmp_path, capsys):
    out = os.path.join(tmp_path, "eval")
    rc = main(["eval", "--checkpoint",
               os.path.join(workspace["out"], "checkpoint.ruck"),
               "--data", workspace["data"], "--split", "val", "--k", "3",
               "--out", out])
    assert rc == 0
    printed = capsys.readouterr().out
    assert "Top-3 action accuracy" in printed
    report = json.load(open(os.path.join(out, "eval_val.json")))
    assert report["kind"] == "anticipation"
    assert report["split"] == "val"


def test_eval_matches_train_time_report(workspace, capsys):
    rc = main(["eval", "--checkpoint",
               os.path.join(workspace["out"], "checkpoint.ruck"),
               "--data", workspace["data"], "--split", "val", "--k", "3"])
    assert rc == 0
    printed = capsys.readouterr().out
    stored = open(os.path.join(workspace["out"], "eval_report.txt")).read()
    assert stored.strip() in printed


def test_anticipate_command(workspace, capsys):
    rc = main(["anticipate", "--checkpoint",
               os.path.join(workspace["out"], "checkpoint.ruck"),
               "--data", workspace["data"], "--index", "0", "--top", "2"])
    assert rc == 0
    printed = capsys.readouterr().out
    assert "tau_a=2.00s" in printed and "tau_a=0.25s" in printed
    assert "app=" in printed and "%" in printed  # weights per step
    rc = main(["anticipate", "--checkpoint",
               os.path.join(workspace["out"], "checkpoint.ruck"),
               "--data", workspace["data"], "--index", "0", "--tau-a", "1.0"])
    assert rc == 0
    fixed = capsys.readouterr().out
    assert "tau_a=2.00s" not in fixed
    assert fixed.count("tau_a=") == 1  # fixed-time mode: one block


def test_gradcheck_command(capsys):
    rc = main(["gradcheck", "--hidden", "3", "--dims", "2,2", "--actions", "3"])
    assert rc == 0
    printed = capsys.readouterr().out
    assert "all gradient checks passed" in printed
    assert "whole model" in printed


def test_set_overrides(workspace, tmp_path, capsys):
    other = os.path.join(tmp_path, "data2")
    rc = main(["gen-data", "--out", other, "--config", workspace["ini"],
               "--set", "synthetic.seed=9", "--set", "synthetic.n_videos=3",
               "--set", "synthetic.val_videos=1"])
    assert rc == 0
    manifest = json.load(open(os.path.join(other, "manifest.json")))
    assert manifest["synth_config"]["seed"] == 9
    assert manifest["synth_config"]["n_videos"] == 3


def test_usage_errors_exit_2(tmp_path, capsys):
    assert main(["train", "--config", os.path.join(tmp_path, "nope.ini")]) == 2
    assert "error:" in capsys.readouterr().err
    ini = os.path.join(tmp_path, "bad.ini")
    with open(ini, "w") as f:
        f.write("[training]\nlr = banana\n[paths]\ndata = x\nout = y\n")
    assert main(["train", "--config", ini]) == 2
    err = capsys.readouterr().err
    assert err.count("\n") == 1  # single-line error report
    assert main(["gen-data", "--out", str(tmp_path), "--set", "bogus"]) == 2
    capsys.readouterr()
    assert main(["eval", "--data", "somewhere"]) == 2
    capsys.readouterr()


def test_runtime_errors_exit_1(workspace, tmp_path, capsys):
    # a checkpoint path pointing at a non-checkpoint file is a data problem
    bogus = os.path.join(tmp_path, "not_a_checkpoint.ruck")
    with open(bogus, "wb") as f:
        f.write(b"garbage")
    rc = main(["eval", "--checkpoint", bogus, "--data", workspace["data"]])
    assert rc == 2  # parse failures count as bad input
    capsys.readouterr()


def test_eval_with_oversized_k_is_usage_error(workspace, capsys):
    rc = main(["eval", "--checkpoint",
               os.path.join(workspace["out"], "checkpoint.ruck"),
               "--data", workspace["data"], "--k", "99"])
    assert rc == 2
    capsys.readouterr()


def test_help_exits_zero_everywhere(capsys):
    for cmd in ([], ["gen-data"], ["train"], ["eval"], ["anticipate"],
                ["gradcheck"]):
        with pytest.raises(SystemExit) as exc:
            main(cmd + ["--help"])
        assert exc.value.code == 0
        out = capsys.readouterr().out
        assert "usage" in out or "Subcommands" in out


def test_index_out_of_range_is_usage_error(workspace, capsys):
    rc = main(["anticipate", "--checkpoint",
               os.path.join(workspace["out"], "checkpoint.ruck"),
               "--data", workspace["data"], "--index", "999"])
    assert rc == 2
    err = capsys.readouterr().err
    assert "--index" in err

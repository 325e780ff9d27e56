import json

import numpy as np
import pandas as pd
import pytest

from safe_ids.cli import exit_code_for, main
from safe_ids.errors import ConfigError, DataError, LeakageError, NumericalError


@pytest.fixture(scope="module")
def flows(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--rows", "1200", "--seed", "5", "--out", str(root / "flows.csv")]) == 0
    return root


def test_stage_chain(flows, capsys):
    r = flows
    pre = r / "pre"
    steps = [
        ["preprocess", "--input", r / "flows.csv", "--label-col", "label", "--attack-values", "1", "--out", pre],
        ["select-features", "--train", pre / "train.csv", "--k", "16", "--out", r / "ranking.json"],
        ["fit-layout", "--train", pre / "train.csv", "--ranking", r / "ranking.json", "--k", "16",
         "--grid", "8", "--iters", "300", "--out", r / "layout.json"],
        ["map", "--layout", r / "layout.json", "--input", pre / "train.csv", "--out", r / "train_img.npz"],
        ["map", "--layout", r / "layout.json", "--input", pre / "val.csv", "--out", r / "val_img.npz"],
        ["map", "--layout", r / "layout.json", "--input", pre / "test.csv", "--out", r / "test_img.npz"],
        ["train-mae", "--images", r / "train_img.npz", "--epochs", "2", "--batch-size", "128", "--out", r / "mae.json"],
        ["extract", "--model", r / "mae.json", "--images", r / "train_img.npz", "--out", r / "z_train.npy"],
        ["extract", "--model", r / "mae.json", "--images", r / "val_img.npz", "--out", r / "z_val.npy",
         "--labels-out", r / "y_val.npy"],
        ["extract", "--model", r / "mae.json", "--images", r / "test_img.npz", "--out", r / "z_test.npy"],
        ["fit-detector", "--latents", r / "z_train.npy", "--val-latents", r / "z_val.npy",
         "--val-labels", r / "y_val.npy", "--budget", "6", "--trials", r / "trials.json", "--out", r / "det.json"],
        ["score", "--detector-file", r / "det.json", "--latents", r / "z_test.npy", "--out", r / "scores.csv"],
    ]
    for step in steps:
        assert main([str(a) for a in step]) == 0, step[0]
    split = json.loads((pre / "split.json").read_text())
    assert split  # summary written
    train = pd.read_csv(pre / "train.csv")
    assert (train["label"] == 0).all()
    assert len(json.loads((r / "trials.json").read_text())["trials"]) == 6
    scores = pd.read_csv(r / "scores.csv")
    assert len(scores) == len(np.load(r / "z_test.npy"))
    assert set(scores["prediction"]) <= {0, 1}
    capsys.readouterr()


def _config(root, **extra):
    cfg = {
        "dataset": {"path": "flows.csv", "attack_values": ["1"]},
        "k": 16,
        "tsne": {"iters": 300},
        "mae": {"epochs": 2, "batch_size": 128},
        "search_budget": 5,
        "inference_samples": 10,
    }
    cfg.update(extra)
    path = root / "cfg.json"
    path.write_text(json.dumps(cfg))
    return path


def test_run_command(flows, capsys):
    cfg = _config(flows)
    assert main(["run", "--config", str(cfg), "--out", str(flows / "run")]) == 0
    assert "F1" in capsys.readouterr().out
    for name in ("report.json", "layout.json", "mae.json", "detector.json", "scores.csv"):
        assert (flows / "run" / name).is_file()


def test_ablate_detectors_command(flows, capsys):
    cfg = _config(flows)
    out = flows / "swap.json"
    assert main(["ablate-detectors", "--config", str(cfg), "--detectors", "lof,pca", "--out", str(out)]) == 0
    assert set(json.loads(out.read_text())) == {"lof", "pca"}
    capsys.readouterr()


def test_bad_k_exit_2(flows, capsys):
    cfg = _config(flows, k=41, grid_size=8)
    assert main(["run", "--config", str(cfg), "--out", str(flows / "bad")]) == 2
    assert "exceeds" in capsys.readouterr().err
    assert not (flows / "bad").exists()


def test_missing_config_exit_2(tmp_path, capsys):
    assert main(["run", "--config", str(tmp_path / "nope.json"), "--out", str(tmp_path)]) == 2
    capsys.readouterr()


def test_missing_dataset_exit_3(tmp_path, capsys):
    code = main(["preprocess", "--input", str(tmp_path / "none.csv"), "--label-col", "label",
                 "--attack-values", "1", "--out", str(tmp_path / "o")])
    assert code == 3
    capsys.readouterr()


def test_bad_label_column_exit_3(flows, tmp_path, capsys):
    code = main(["preprocess", "--input", str(flows / "flows.csv"), "--label-col", "nope",
                 "--attack-values", "1", "--out", str(tmp_path / "o")])
    assert code == 3
    capsys.readouterr()


def test_mismatched_val_labels_exit_3(tmp_path, capsys):
    np.save(tmp_path / "z.npy", np.zeros((20, 3)))
    np.save(tmp_path / "y.npy", np.zeros(5))
    code = main(["fit-detector", "--latents", str(tmp_path / "z.npy"), "--val-latents", str(tmp_path / "z.npy"),
                 "--val-labels", str(tmp_path / "y.npy"), "--out", str(tmp_path / "d.json")])
    assert code == 3
    capsys.readouterr()


@pytest.mark.parametrize(
    "exc,code",
    [
        (ConfigError("x"), 2),
        (DataError("x"), 3),
        (LeakageError("x"), 3),
        (NumericalError("x"), 4),
        (FileNotFoundError("x"), 3),
        (FloatingPointError("x"), 4),
        (np.linalg.LinAlgError("x"), 4),
        (ValueError("x"), 2),
        (RuntimeError("x"), 1),
    ],
)
def test_exit_code_mapping(exc, code):
    assert exit_code_for(exc) == code

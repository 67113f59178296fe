import importlib
import json
import shutil
import subprocess
import sys

import numpy as np
import pytest

from rtcorr.autodiff import save_checkpoint
from rtcorr.corrnet import ModelConfig, init_params
from rtcorr.pipeline.cli import main
from rtcorr.pipeline.config import TrainConfig

train_mod = importlib.import_module("rtcorr.pipeline.train")

TINY = ["--epochs", "1", "--lr", "1e-3"]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--seed", "2", "--shapes", "20", "--out", str(root / "data"), "--folds-seed", "0"]) == 0
    cfg = root / "tiny.yaml"
    cfg.write_text("geodesic_pairs: 50\nmodel:\n  geo_width: 8\n  geo_depth: 1\n  time_steps: 2\n")
    return root, cfg


def test_help_via_console_script():
    exe = shutil.which("rtcorr")
    cmd = [exe] if exe else [sys.executable, "-m", "rtcorr.pipeline.cli"]
    out = subprocess.run(cmd + ["--help"], capture_output=True, text=True)
    assert out.returncode == 0
    for sub in ("synth", "preprocess", "train", "infer", "eval", "compare"):
        assert sub in out.stdout


def test_usage_errors_exit_2(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["train"])
    assert exc.value.code == 2
    with pytest.raises(SystemExit) as exc:
        main(["frobnicate"])
    assert exc.value.code == 2


def test_validation_errors_exit_2(workspace, tmp_path):
    root, cfg = workspace
    data = root / "data"
    base = ["train", "--manifest", str(data / "manifest.json"), "--folds", str(data / "folds.json"),
            "--out", str(tmp_path / "o")]
    assert main(base + ["--epochs", "0"]) == 2
    assert main(base + ["--config", str(tmp_path / "missing.yaml")]) == 2
    assert main(["train", "--manifest", str(tmp_path / "nope.json"), "--folds", str(data / "folds.json"),
                 "--out", str(tmp_path / "o")]) == 2
    assert main(["synth", "--shapes", "2", "--out", str(tmp_path / "s")]) == 2
    assert main(["folds", "--manifest", str(data / "manifest.json"), "--out", str(tmp_path / "f.json")]) == 0


def test_nan_abort_exits_3(workspace, tmp_path, monkeypatch):
    root, cfg = workspace
    data = root / "data"
    real = train_mod.pair_loss

    def poisoned(*args, **kwargs):
        total, br = real(*args, **kwargs)
        br.total = float("inf")
        return total, br

    monkeypatch.setattr(train_mod, "pair_loss", poisoned)
    code = main(["train", "--manifest", str(data / "manifest.json"), "--folds", str(data / "folds.json"),
                 "--config", str(cfg), "--fold", "0", "--out", str(tmp_path / "o")] + TINY)
    assert code == 3
    assert (tmp_path / "o" / "fold_0" / "nan_dump.json").exists()


def test_full_cli_flow(workspace, capsys):
    root, cfg = workspace
    data = root / "data"
    run = root / "run"
    assert main(["train", "--manifest", str(data / "manifest.json"), "--folds", str(data / "folds.json"),
                 "--config", str(cfg), "--variant", "base", "--seed", "1", "--fold", "0",
                 "--out", str(run)] + TINY) == 0
    ckpt = run / "fold_0" / "best.ckpt"
    assert ckpt.exists()
    sidecar = json.loads((run / "fold_0" / "config.json").read_text())
    assert sidecar["train"]["seed"] == 1 and sidecar["train"]["model"]["geo_width"] == 8

    out = root / "infer"
    assert main(["infer", "--params", str(ckpt), "--source", str(data / "P000_blob.off"),
                 "--target", str(data / "P001_blob.off"), "--out", str(out)]) == 0
    assert len(list(out.glob("frame_*.ply"))) == 2
    hard = np.loadtxt(out / "correspondence.csv", delimiter=",", skiprows=1, dtype=int)
    assert hard.shape[1] == 2

    assert main(["eval", "--manifest", str(data / "manifest.json"), "--fold", "0", "--params", str(ckpt),
                 "--out", str(root / "eval_model")]) == 0
    from rtcorr.pipeline.evaluate import write_rigid_deformed
    from rtcorr.pipeline.folds import load_folds
    from rtcorr.pipeline.manifest import load_manifest
    nn_dir = write_rigid_deformed(load_manifest(data / "manifest.json"), load_folds(data / "folds.json").folds[0],
                                  root / "nn")
    assert main(["eval", "--manifest", str(data / "manifest.json"), "--folds", str(data / "folds.json"),
                 "--fold", "0", "--nn-deformed", str(nn_dir), "--out", str(root / "eval_nn")]) == 0
    capsys.readouterr()
    assert main(["compare", "--a", str(root / "eval_model"), "--b", str(root / "eval_nn"), "--test", "wilcoxon"]) == 0
    result = json.loads(capsys.readouterr().out)
    assert result["n_pairs"] > 0 and "verdict" in result
    assert main(["compare", "--a", str(root / "eval_model"), "--b", str(root / "eval_model")]) == 0
    assert json.loads(capsys.readouterr().out)["verdict"] == "no difference"


def test_imgfeat_infer_without_volumes_exits_2(workspace, tmp_path):
    root, _ = workspace
    data = root / "data"
    cfg = TrainConfig(variant="imgfeat", model=ModelConfig(geo_width=8, geo_depth=1, time_steps=2, img_width=4))
    save_checkpoint(tmp_path / "best.ckpt", init_params(cfg.model, 0))
    (tmp_path / "config.json").write_text(json.dumps({"train": cfg.to_dict()}))
    code = main(["infer", "--params", str(tmp_path / "best.ckpt"),
                 "--source", str(data / "P000_blob.off"), "--target", str(data / "P001_blob.off"),
                 "--out", str(tmp_path / "i")])
    assert code == 2

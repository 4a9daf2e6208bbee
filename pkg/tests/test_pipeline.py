import json

import numpy as np
import pandas as pd
import pytest
import torch

from uflossmri import cli
from uflossmri.config import config
from uflossmri.config.experiment import load_experiment_config
from uflossmri.config.schemas import UNetArch, UnrollConfig
from uflossmri.data.slices import load_dataset
from uflossmri.encode.masks import load_mask
from uflossmri.encode.operator import load_samples
from uflossmri.pipeline.common import mu_arm, study_name
from uflossmri.pipeline.training import selected_model
from uflossmri.shared.containers import load_container
from uflossmri.unrolled.modl import MoDL, save_recon_checkpoint
from uflossmri.unrolled.train import TrainResult


def _run(out, *args: str) -> int:
    return cli.run([*args, "--profile", "tiny", "--seed", "0", "--out", str(out)])


@pytest.fixture(autouse=True)
def _cpu_quiet(monkeypatch):
    monkeypatch.setattr(config, "device", "cpu")
    monkeypatch.setattr(config, "show_progress", False)
    monkeypatch.setattr(config, "echo_log", False)


def test_study_names_are_file_safe() -> None:
    assert study_name("perturb-noise", "all", "ufnet") == "perturb-noise_all_ufnet"
    assert study_name("deblur", "seed0-subj0001_sl000", "ufnet") == "deblur_seed0-subj0001-sl000_ufnet"
    assert mu_arm(1.5) == "mu_1.5"
    assert mu_arm(0.0) == "mu_0"


def test_parser_rejects_unknown_profile() -> None:
    with pytest.raises(SystemExit):
        cli.build_parser().parse_args(["gen-data", "--profile", "laptop"])


def test_gen_data_and_mask_gen_write_documented_artifacts(tmp_path) -> None:
    assert _run(tmp_path, "gen-data") == 0
    assert _run(tmp_path, "mask-gen", "--accel", "4") == 0

    train = load_dataset(tmp_path / "data" / "train.npz")
    val = load_dataset(tmp_path / "data" / "val.npz")
    test = load_dataset(tmp_path / "data" / "test.npz")
    assert (len(train), len(val), len(test)) == (8, 2, 2)
    assert not set(train.subjects) & set(test.subjects)

    mask = load_mask(tmp_path / "masks" / "mask.npz")
    assert mask.acceleration == 4.0
    assert int(mask.mask[0].sum()) == 16
    samples = load_samples(tmp_path / "masks" / "kspace_test.npz")
    assert [s.target.slice_id for s in samples] == [item.slice_id for item in test.slices]
    assert all(int(s.mask.mask[0].sum()) == 16 for s in samples)

    _, meta = load_container(tmp_path / "masks" / "mask.npz")
    expected_hash = json.loads((tmp_path / "masks" / "metadata.json").read_text(encoding="utf-8"))["config_hash"]
    assert meta["config_hash"] == expected_hash
    assert meta["seed"] == 0
    summary = json.loads((tmp_path / "run_manifest.json").read_text(encoding="utf-8"))
    assert summary["command_counts"]["mask-gen"] == 4
    assert (tmp_path / "README.md").exists()


def test_mask_gen_draws_an_independent_mask_per_slice(tmp_path) -> None:
    assert _run(tmp_path, "gen-data") == 0
    assert _run(tmp_path, "mask-gen", "--accel", "4") == 0

    masks = {split: [s.mask.mask for s in load_samples(tmp_path / "masks" / f"kspace_{split}.npz")]
             for split in ("train", "val", "test")}

    assert len({m.tobytes() for m in masks["train"]}) > 1
    assert not np.array_equal(masks["val"][0], masks["test"][0])
    for split_masks in masks.values():
        for m in split_masks:
            assert m[:, 30:35].all()
            assert int(m[0].sum()) == 16


def test_mask_gen_is_deterministic(tmp_path) -> None:
    for name in ("a", "b"):
        assert _run(tmp_path / name, "gen-data") == 0
        assert _run(tmp_path / name, "mask-gen", "--type", "poisson", "--accel", "4", "--calib", "8") == 0

    first = load_mask(tmp_path / "a" / "masks" / "mask.npz")
    second = load_mask(tmp_path / "b" / "masks" / "mask.npz")
    assert first.kind == "poisson"
    assert np.array_equal(first.mask, second.mask)
    per_slice_a = [s.mask.mask for s in load_samples(tmp_path / "a" / "masks" / "kspace_train.npz")]
    per_slice_b = [s.mask.mask for s in load_samples(tmp_path / "b" / "masks" / "kspace_train.npz")]
    assert all(np.array_equal(a, b) for a, b in zip(per_slice_a, per_slice_b))


def test_missing_artifact_fails_with_error_file(tmp_path, capsys) -> None:
    assert _run(tmp_path, "train-ufnet") == 1

    err = capsys.readouterr().err
    assert "Missing artifact" in err
    assert "run 'gen-data' first" in err
    assert list(tmp_path.glob("error_*.txt"))


def test_invalid_override_fails_cleanly(tmp_path, capsys) -> None:
    assert cli.run(["gen-data", "--profile", "tiny", "--out", str(tmp_path), "--set", "unroll.cg_steps=0"]) == 1

    assert "unroll.cg_steps" in capsys.readouterr().err


def test_train_recon_ufloss_needs_positive_mu(tmp_path, capsys) -> None:
    assert _run(tmp_path, "train-recon", "--loss", "ufloss", "--mu", "0") == 1

    assert "needs mu > 0" in capsys.readouterr().err


@pytest.mark.slow
def test_tiny_profile_runs_every_command(tmp_path) -> None:
    for command in (
        ["gen-data"],
        ["mask-gen"],
        ["train-ufnet"],
        ["train-recon", "--loss", "l2"],
        ["train-recon", "--loss", "ufloss"],
        ["recon-pics"],
        ["reconstruct"],
        ["evaluate"],
        ["study-perturb"],
        ["study-deblur"],
        ["retrieve"],
        ["correlate"],
        ["report"],
        ["mu-sweep", "--mus", "0", "1.5"],
    ):
        assert _run(tmp_path, *command) == 0, command

    metrics = pd.read_csv(tmp_path / "evaluate" / "metrics.csv")
    assert set(metrics["method"]) == {"zero-filled", "pics", "modl-l2", "modl-ufloss"}
    assert len(metrics) == 4 * 2
    assert metrics["ufloss"].between(0.0, 2.0).all()
    assert (metrics["config_hash"] == metrics["config_hash"].iloc[0]).all()

    summary = pd.read_csv(tmp_path / "report" / "summary.csv")
    assert set(summary["metric"]) == {"nrmse", "ssim", "ufloss"}
    for metric in ("nrmse", "ssim", "ufloss"):
        assert (tmp_path / "report" / f"report_all_{metric}.png").exists()

    noise = pd.read_csv(tmp_path / "studies" / "perturb-noise_all_ufnet.csv")
    blur = pd.read_csv(tmp_path / "studies" / "perturb-blur_all_ufnet.csv")
    assert len(noise) == 11
    assert len(blur) == 5
    assert noise["ufloss"].iloc[0] == pytest.approx(0.0, abs=1e-5)
    assert (tmp_path / "studies" / "deblur_all_ufnet.csv").exists()
    assert (tmp_path / "studies" / "retrieve_all_ufnet.csv").exists()
    sweep = pd.read_csv(tmp_path / "studies" / "mu-sweep_all_modl.csv")
    assert sweep["mu"].tolist() == [0.0, 1.5]

    for arm in ("l2", "ufloss"):
        assert (tmp_path / "recon" / arm / "modl_best.npz").exists()
    assert list((tmp_path / "reconstruct").glob("ufloss_kspace_test.npz"))
    assert not list(tmp_path.glob("error_*.txt"))


def test_config_file_is_honoured(tmp_path) -> None:
    path = tmp_path / "experiment.json"
    path.write_text(json.dumps({"profile": "tiny", "data": {"ncoils": 3}}), encoding="utf-8")

    cfg = load_experiment_config(config_path=path, out=tmp_path)

    assert cfg.data.ncoils == 3
    assert cli.run(["gen-data", "--config", str(path), "--out", str(tmp_path)]) == 0
    _, meta = load_container(tmp_path / "data" / "coil_maps.npz")
    assert meta["kind"] == "coil_maps"


def test_selected_model_prefers_best_checkpoint(tmp_path) -> None:
    arch, unroll = UNetArch(scales=2, base_channels=4), UnrollConfig(unrolls=1, cg_steps=2)
    best = MoDL.from_config(arch, unroll)
    last = MoDL.from_config(arch, unroll)
    with torch.no_grad():
        best.raw_lam.fill_(0.7)
        last.raw_lam.fill_(-1.0)
    path = save_recon_checkpoint(tmp_path / "modl_best.npz", best, arch, unroll)

    chosen = selected_model(TrainResult(model=last, best_checkpoint=path, best_epoch=1))

    assert float(chosen.raw_lam) == pytest.approx(0.7)
    assert selected_model(TrainResult(model=last)) is last

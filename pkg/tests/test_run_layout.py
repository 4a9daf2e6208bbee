import json

import pytest

from uflossmri.config.experiment import config_hash, load_experiment_config
from uflossmri.shared import run_layout as rl


def _cfg(tmp_path):
    return load_experiment_config(profile="tiny", seed=5, out=tmp_path)


def test_category_root_rejects_unknown(tmp_path) -> None:
    assert rl.category_root(tmp_path, "recon") == tmp_path / "recon"
    with pytest.raises(ValueError, match="Unknown run category"):
        rl.category_root(tmp_path, "submits")


def test_prepare_category_dir_writes_metadata_and_readme(tmp_path) -> None:
    cfg = _cfg(tmp_path)

    folder = rl.prepare_category_dir(cfg, "recon", subdir="ufloss")

    assert folder == tmp_path / "recon" / "ufloss"
    meta = rl.read_metadata(folder)
    assert meta["kind"] == "recon/ufloss"
    assert meta["config_hash"] == config_hash(cfg)
    assert meta["seed"] == 5
    assert meta["config"]["profile"] == "tiny"
    assert (tmp_path / rl.README_NAME).exists()


def test_read_metadata_tolerates_missing_and_corrupt(tmp_path) -> None:
    assert rl.read_metadata(tmp_path) == {}
    (tmp_path / rl.METADATA_NAME).write_text("{broken", encoding="utf-8")
    assert rl.read_metadata(tmp_path) == {}
    (tmp_path / rl.METADATA_NAME).write_text(json.dumps([1, 2]), encoding="utf-8")
    assert rl.read_metadata(tmp_path) == {}


def test_require_artifact_names_the_producing_command(tmp_path) -> None:
    present = tmp_path / "mask.npz"
    present.write_bytes(b"")

    assert rl.require_artifact(present) == present
    with pytest.raises(FileNotFoundError, match=r"run 'mask-gen' first"):
        rl.require_artifact(tmp_path / "missing.npz", "mask-gen")

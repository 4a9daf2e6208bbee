from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any

import torch

from uflossmri.config import config
from uflossmri.config.experiment import artifact_meta, config_hash
from uflossmri.config.schemas import ExperimentConfig
from uflossmri.shared.run_layout import category_root, prepare_category_dir, require_artifact
from uflossmri.shared.run_manifest import append_artifact_record, write_manifest_summary
from uflossmri.shared.tools import Logger, get_run_logger

SPLITS = ("train", "val", "test")
METHODS = ("zero-filled", "pics", "modl-l2", "modl-ufloss")


@dataclass
class RunContext:
    cfg: ExperimentConfig
    command: str
    folder: Path
    log: Logger

    @property
    def root(self) -> Path:
        return Path(self.cfg.output_dir).expanduser()

    @property
    def config_hash(self) -> str:
        return config_hash(self.cfg)

    def meta(self, kind: str, **extra: Any) -> dict[str, Any]:
        return artifact_meta(self.cfg, kind, command=self.command, **extra)

    def record(self, path: str | Path, **extra: Any) -> Path:
        """Add ``path`` to the run manifest."""
        append_artifact_record(
            self.root,
            path,
            command=self.command,
            config_hash=self.config_hash,
            seed=self.cfg.seed,
            extra=extra or None,
        )
        self.log(f"wrote {path}")
        return Path(path)

    def finish(self) -> Path:
        summary = write_manifest_summary(self.root)
        self.log(f"{self.command} finished; manifest summary at {summary}")
        return summary


def open_run(cfg: ExperimentConfig, command: str, category: str, subdir: str = "") -> RunContext:
    folder = prepare_category_dir(cfg, category, subdir=subdir)
    log = get_run_logger(folder)
    log(f"{command}: profile={cfg.profile} seed={cfg.seed} config_hash={config_hash(cfg)}")
    return RunContext(cfg=cfg, command=command, folder=folder, log=log)


def torch_device() -> str:
    if config.torch_num_threads:
        torch.set_num_threads(config.torch_num_threads)
    return config.resolve_device()


# Artifact paths shared between commands

def dataset_path(cfg: ExperimentConfig, split: str) -> Path:
    return category_root(cfg.output_dir, "data") / config.dataset_file_names[split]


def coil_maps_path(cfg: ExperimentConfig) -> Path:
    return category_root(cfg.output_dir, "data") / "coil_maps.npz"


def split_maps_path(cfg: ExperimentConfig, split: str) -> Path:
    return category_root(cfg.output_dir, "data") / f"maps_{split}.npz"


def mask_path(cfg: ExperimentConfig) -> Path:
    return category_root(cfg.output_dir, "masks") / "mask.npz"


def kspace_path(cfg: ExperimentConfig, split: str) -> Path:
    return category_root(cfg.output_dir, "masks") / f"kspace_{split}.npz"


def feature_checkpoint_path(cfg: ExperimentConfig) -> Path:
    return category_root(cfg.output_dir, "ufnet") / config.feature_checkpoint_name


def feature_bank_path(cfg: ExperimentConfig) -> Path:
    return category_root(cfg.output_dir, "ufnet") / "feature_bank.npz"


def recon_dir(cfg: ExperimentConfig, arm: str) -> Path:
    return category_root(cfg.output_dir, "recon") / arm


def recon_checkpoint_path(cfg: ExperimentConfig, arm: str, best: bool = True) -> Path:
    name = config.best_recon_checkpoint_name if best else config.recon_checkpoint_name
    return recon_dir(cfg, arm) / name


def pics_path(cfg: ExperimentConfig) -> Path:
    return category_root(cfg.output_dir, "pics") / "pics_test.npz"


def metrics_path(cfg: ExperimentConfig) -> Path:
    return category_root(cfg.output_dir, "evaluate") / config.metrics_file_name


def mu_arm(mu: float) -> str:
    return f"mu_{mu:g}"


def study_name(study: str, slice_id: str, method: str) -> str:
    """File stem ``{study}_{slice}_{method}``."""
    safe = str(slice_id).replace("/", "-").replace("_", "-")
    return f"{study}_{safe}_{method}"


def load_feature_net(cfg: ExperimentConfig, device: str, required: bool = True):
    """(net, bank, payload) from the feature checkpoint, or None when optional and absent."""
    from uflossmri.featnet.train import load_feature_checkpoint

    path = feature_checkpoint_path(cfg)
    if not required and not path.exists():
        return None
    require_artifact(path, "train-ufnet")
    return load_feature_checkpoint(path, device=device)

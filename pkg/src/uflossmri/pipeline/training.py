from __future__ import annotations

from pathlib import Path
from typing import Literal

import numpy as np
import torch

from uflossmri.config import config
from uflossmri.config.schemas import ExperimentConfig
from uflossmri.data.slices import load_dataset
from uflossmri.eval.metrics import evaluate_reconstruction
from uflossmri.featnet.train import build_feature_bank, pretrain_ufnet, save_feature_checkpoint
from uflossmri.pipeline.common import (
    dataset_path,
    feature_bank_path,
    feature_checkpoint_path,
    load_feature_net,
    mu_arm,
    open_run,
    study_name,
    torch_device,
)
from uflossmri.pipeline.data import load_split_samples
from uflossmri.shared.containers import save_container
from uflossmri.shared.run_layout import require_artifact
from uflossmri.shared.tools import write_table
from uflossmri.unrolled.modl import MoDL, load_recon_checkpoint, reconstruct
from uflossmri.unrolled.train import TrainResult, train_modl


def train_ufnet(cfg: ExperimentConfig) -> Path:
    """Pretrain the patch feature network and store it with a recomputed feature bank."""
    device = torch_device()
    run = open_run(cfg, "train-ufnet", "ufnet")
    train = load_dataset(require_artifact(dataset_path(cfg, "train"), "gen-data"))
    checkpoint = feature_checkpoint_path(cfg)
    log_path = run.folder / "pretrain_log.csv"
    result = pretrain_ufnet(
        train,
        cfg.featnet,
        cfg.feat_train,
        seed=cfg.seed,
        device=device,
        checkpoint_path=checkpoint,
        log_path=log_path,
        logger=run.log,
    )
    save_feature_checkpoint(
        checkpoint,
        result.net,
        result.bank,
        cfg.featnet,
        cfg.feat_train,
        result.origins,
        run.meta("ufnet"),
    )
    run.record(checkpoint, epochs=cfg.feat_train.epochs)
    run.record(log_path)

    fresh = build_feature_bank(result.net, train.images(), result.origins, cfg.feat_train.patch_size)
    bank_file = save_container(
        feature_bank_path(cfg),
        {"bank": fresh.vectors.cpu().numpy(), "origins": result.origins},
        run.meta("feature_bank"),
    )
    run.record(bank_file, rows=len(fresh))
    run.finish()
    return checkpoint


def _train_arm(
    cfg: ExperimentConfig,
    arm: str,
    mu: float,
    use_ufloss: bool,
    command: str,
) -> TrainResult:
    device = torch_device()
    ufloss_cfg = cfg.ufloss.model_copy(update={"mu": float(mu)})
    cfg = cfg.model_copy(update={"ufloss": ufloss_cfg})
    run = open_run(cfg, command, "recon", subdir=arm)
    train = load_split_samples(cfg, "train")
    val = load_split_samples(cfg, "val")
    loaded = load_feature_net(cfg, device, required=use_ufloss)
    feat_net = loaded[0] if loaded is not None else None
    if not use_ufloss:
        # l2 arm: the feature net only reports validation UFLoss
        ufloss_cfg = ufloss_cfg.model_copy(update={"mu": 0.0})
    result = train_modl(
        train,
        val,
        feat_net,
        cfg.unet,
        cfg.unroll,
        ufloss_cfg,
        seed=cfg.seed,
        device=device,
        out_dir=run.folder,
        checkpoint_name=config.recon_checkpoint_name,
        best_checkpoint_name=config.best_recon_checkpoint_name,
        logger=run.log,
    )
    for path in (result.last_checkpoint, result.best_checkpoint):
        if path is not None:
            run.record(path, arm=arm, mu=ufloss_cfg.mu, best_epoch=result.best_epoch)
    for name in ("train_log.csv", "val_log.csv"):
        if (run.folder / name).exists():
            run.record(run.folder / name, arm=arm)
    run.log(f"arm {arm}: best epoch {result.best_epoch}, final lam={float(result.model.lam):.5f}")
    run.finish()
    return result


def train_recon(
    cfg: ExperimentConfig,
    loss: Literal["l2", "ufloss"] = "ufloss",
    mu: float | None = None,
) -> TrainResult:
    """Train one MoDL arm into ``recon/<loss>/``."""
    if loss not in ("l2", "ufloss"):
        raise ValueError(f"Unknown loss '{loss}'. Expected one of: l2, ufloss")
    weight = cfg.ufloss.mu if mu is None else float(mu)
    if loss == "ufloss" and weight <= 0:
        raise ValueError("--loss ufloss needs mu > 0; use --loss l2 for the plain baseline")
    return _train_arm(cfg, loss, weight if loss == "ufloss" else 0.0, loss == "ufloss", "train-recon")


def selected_model(result: TrainResult, device: torch.device | str = "cpu") -> MoDL:
    """The best-validation checkpoint of an arm, or its final weights when none was written."""
    if result.best_checkpoint is None:
        return result.model
    model, _ = load_recon_checkpoint(result.best_checkpoint, device=device)
    return model


def mu_sweep(cfg: ExperimentConfig, mus: tuple[float, ...] | None = None) -> Path:
    """Train one arm per UFLoss weight and tabulate median test metrics."""
    grid = tuple(cfg.studies.mu_grid if mus is None else mus)
    if not grid:
        raise ValueError("mu grid is empty")
    device = torch_device()
    test = load_split_samples(cfg, "test")
    loaded = load_feature_net(cfg, device, required=True)
    feat_net = loaded[0]
    rows: list[dict] = []
    for mu in grid:
        result = _train_arm(cfg, mu_arm(mu), mu, mu > 0, "mu-sweep")
        images = reconstruct(selected_model(result, device), test, device=device)
        metrics = [
            evaluate_reconstruction(image, sample.target.image, feat_net, cfg.ufloss, mu_arm(mu), sample.target.slice_id)
            for image, sample in zip(images, test)
        ]
        rows.append(
            {
                "mu": float(mu),
                "median_nrmse": float(np.median([m.nrmse for m in metrics])),
                "median_ssim": float(np.median([m.ssim for m in metrics])),
                "median_ufloss": float(np.median([m.ufloss for m in metrics])),
                "best_epoch": result.best_epoch,
            }
        )
    run = open_run(cfg, "mu-sweep", "studies")
    path = write_table(rows, run.folder / f"{study_name('mu-sweep', 'all', 'modl')}.csv", run.meta("mu_sweep"))
    run.record(path, mus=list(grid))
    run.finish()
    return path

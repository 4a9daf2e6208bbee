from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
from torch.utils.data import DataLoader, TensorDataset

from uflossmri.config.schemas import UflossConfig, UNetArch, UnrollConfig
from uflossmri.encode.operator import KSpaceSample, stack_samples
from uflossmri.eval.metrics import image_ufloss, nrmse, ssim
from uflossmri.shared.tools import Logger, flush_rows, null_logger, progress
from uflossmri.ufloss.loss import freeze, recon_loss
from uflossmri.unrolled.modl import MoDL, modl_forward, reconstruct, save_recon_checkpoint


@dataclass
class TrainResult:
    model: MoDL
    history: list[dict[str, float]] = field(default_factory=list)
    best_checkpoint: Path | None = None
    last_checkpoint: Path | None = None
    best_epoch: int = 0


def step_seed(seed: int, step: int) -> int:
    """Per-step seed for the random grid shift."""
    return int(np.random.SeedSequence([seed, step]).generate_state(1)[0])


def validation_row(
    model: MoDL,
    samples: Sequence[KSpaceSample],
    feat_net: nn.Module | None,
    ufloss_cfg: UflossConfig,
    device: torch.device | str = "cpu",
) -> dict[str, float]:
    images = reconstruct(model, samples, device=device)
    targets = [sample.target.image for sample in samples]
    return {
        "nrmse": float(np.mean([nrmse(img, ref) for img, ref in zip(images, targets)])),
        "ssim": float(np.mean([ssim(img, ref) for img, ref in zip(images, targets)])),
        "ufloss": float(np.mean([image_ufloss(img, ref, feat_net, ufloss_cfg) for img, ref in zip(images, targets)])),
        "lam": float(model.lam.detach()),
    }


def train_modl(
    train_samples: Sequence[KSpaceSample],
    val_samples: Sequence[KSpaceSample],
    feat_net: nn.Module | None,
    arch: UNetArch,
    cfg: UnrollConfig,
    ufloss_cfg: UflossConfig,
    seed: int = 0,
    *,
    device: torch.device | str = "cpu",
    out_dir: str | Path | None = None,
    checkpoint_name: str = "modl_checkpoint.npz",
    best_checkpoint_name: str = "modl_best.npz",
    logger: Logger = null_logger,
) -> TrainResult:
    """Supervised training of the unrolled reconstructor on recon_loss.

    Without a feature net mu is forced to 0, which is the pure l2 baseline.
    """
    if not train_samples:
        raise ValueError("train_modl needs at least one training sample")
    if feat_net is None:
        ufloss_cfg = ufloss_cfg.model_copy(update={"mu": 0.0})
    else:
        freeze(feat_net)
        feat_net.to(device)

    torch.manual_seed(seed)
    model = MoDL.from_config(arch, cfg).to(device)
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    y, maps, mask, target = stack_samples(train_samples)
    loader = DataLoader(
        TensorDataset(y, maps, mask, target),
        batch_size=cfg.batch_size,
        shuffle=True,
        generator=torch.Generator().manual_seed(seed),
    )

    out_path = Path(out_dir) if out_dir is not None else None
    last_path = out_path / checkpoint_name if out_path else None
    best_path = out_path / best_checkpoint_name if out_path else None
    step_log = out_path / "train_log.csv" if out_path else None
    val_log = out_path / "val_log.csv" if out_path else None
    extra = {"mu": ufloss_cfg.mu, "loss": "ufloss" if feat_net is not None and ufloss_cfg.mu > 0 else "l2"}

    def save_last() -> Path | None:
        if last_path is None:
            return None
        return save_recon_checkpoint(last_path, model, arch, cfg, extra=extra)

    logger(
        f"Training MoDL ({cfg.unrolls} unrolls, {cfg.cg_steps} CG steps) on {len(train_samples)} "
        f"samples, mu={ufloss_cfg.mu}, loss={extra['loss']}"
    )
    result = TrainResult(model=model)
    best_nrmse = float("inf")
    step = 0
    step_header = val_header = False
    for epoch in progress(range(1, cfg.epochs + 1), desc="train-recon"):
        model.train()
        rows: list[dict] = []
        for batch_y, batch_maps, batch_mask, batch_target in loader:
            batch_y, batch_maps = batch_y.to(device), batch_maps.to(device)
            batch_mask, batch_target = batch_mask.to(device), batch_target.to(device)
            xhat = modl_forward(batch_y, batch_maps, batch_mask, model)
            parts = recon_loss(batch_target, xhat, feat_net, ufloss_cfg, step_seed(seed, step))
            if not bool(torch.isfinite(parts.total)):
                saved = save_last()
                raise RuntimeError(
                    f"Non-finite reconstruction loss at epoch {epoch}, step {step}; last checkpoint: {saved}"
                )
            optimizer.zero_grad(set_to_none=True)
            parts.total.backward()
            optimizer.step()
            rows.append({"step": step, "epoch": epoch, **parts.as_row()})
            step += 1
        if step_log is not None:
            step_header = flush_rows(rows, step_log, step_header)

        row = {"epoch": epoch, **validation_row(model, val_samples or train_samples, feat_net, ufloss_cfg, device)}
        row["train_total"] = float(np.mean([r["total"] for r in rows]))
        result.history.append(row)
        if val_log is not None:
            val_header = flush_rows([row], val_log, val_header)
        logger(
            f"epoch {epoch}: train_total={row['train_total']:.5f} val_nrmse={row['nrmse']:.4f} "
            f"val_ssim={row['ssim']:.4f} val_ufloss={row['ufloss']:.4f} lam={row['lam']:.4f}"
        )

        result.last_checkpoint = save_last()
        if row["nrmse"] < best_nrmse:
            best_nrmse = row["nrmse"]
            result.best_epoch = epoch
            if best_path is not None:
                result.best_checkpoint = save_recon_checkpoint(
                    best_path, model, arch, cfg, extra={**extra, "epoch": epoch}
                )

    model.eval()
    return result

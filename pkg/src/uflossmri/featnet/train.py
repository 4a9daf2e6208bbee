from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

import numpy as np
import torch
import torch.nn.functional as F
from torch.utils.data import DataLoader
from torch.utils.data import Dataset as TorchDataset

from uflossmri.config.schemas import FeatNetArch, FeatTrainConfig
from uflossmri.data.patches import random_origins
from uflossmri.data.slices import Dataset
from uflossmri.featnet.bank import MemoryBank, instance_logits, instance_probability
from uflossmri.featnet.network import FeatureNet, embed_patches
from uflossmri.shared.containers import (
    arrays_to_state_dict,
    config_text,
    load_container,
    save_container,
    state_dict_to_arrays,
)
from uflossmri.shared.tensors import complex_to_channels
from uflossmri.shared.tools import Logger, flush_rows, null_logger, progress

BANK_NORM_TOLERANCE = 1e-6
PROBABILITY_SUM_TOLERANCE = 1e-9


def contrastive_loss(
    net: FeatureNet,
    patches: torch.Tensor,
    indices: torch.Tensor,
    bank: MemoryBank,
    tau: float,
) -> tuple[torch.Tensor, torch.Tensor]:
    """Mean of -log P(i | f(p_i)) over the batch; also returns the fresh features."""
    features = net(patches)
    logits = instance_logits(features, bank, tau)
    targets = indices.to(logits.device).long().view(-1)
    if int(targets.min()) < 0 or int(targets.max()) >= len(bank):
        raise ValueError(f"Patch indices out of range for a bank of {len(bank)} rows")
    return F.cross_entropy(logits, targets), features


class PatchDataset(TorchDataset):
    """Training patches cropped on the fly; item i is patch identity i.

    Origins are drawn once by ``sample`` and stay fixed across epochs; only
    the loader order is reshuffled.
    """

    def __init__(self, images: np.ndarray, origins: np.ndarray, patch_size: int):
        self.images = torch.as_tensor(images, dtype=torch.complex64)
        self.origins = np.asarray(origins, dtype=np.int64)
        self.patch_size = int(patch_size)

    @classmethod
    def sample(cls, dataset: Dataset, patches_per_slice: int, patch_size: int, seed: int) -> "PatchDataset":
        rng = np.random.default_rng(seed)
        rows = []
        for slice_index, item in enumerate(dataset.slices):
            origins = random_origins(item.shape, patches_per_slice, patch_size, rng)
            rows.append(np.column_stack([np.full(len(origins), slice_index), origins]))
        return cls(dataset.images(), np.concatenate(rows, axis=0), patch_size)

    def __len__(self) -> int:
        return int(self.origins.shape[0])

    def crop(self, index: int) -> torch.Tensor:
        slice_index, row, col = (int(v) for v in self.origins[index])
        size = self.patch_size
        return self.images[slice_index, row:row + size, col:col + size]

    def crops(self, indices: Iterable[int] | None = None) -> torch.Tensor:
        chosen = range(len(self)) if indices is None else indices
        return torch.stack([self.crop(int(i)) for i in chosen])

    def __getitem__(self, index: int) -> tuple[torch.Tensor, int]:
        return complex_to_channels(self.crop(index)), index


@dataclass
class PretrainResult:
    net: FeatureNet
    bank: MemoryBank
    origins: np.ndarray
    history: list[dict[str, float]] = field(default_factory=list)


def save_feature_checkpoint(
    path: str | Path,
    net: FeatureNet,
    bank: MemoryBank,
    arch: FeatNetArch,
    train_cfg: FeatTrainConfig,
    origins: np.ndarray | None = None,
    meta: dict[str, Any] | None = None,
) -> Path:
    payload = {
        "arch": arch.model_dump(mode="json"),
        "train": train_cfg.model_dump(mode="json"),
        "patch_size": net.patch_size,
    }
    arrays = state_dict_to_arrays(net)
    arrays["bank"] = bank.vectors.detach().cpu().numpy()
    arrays["config"] = np.array(json.dumps(payload, sort_keys=True))
    if origins is not None:
        arrays["origins"] = np.asarray(origins, dtype=np.int64)
    return save_container(path, arrays, meta)


def load_feature_checkpoint(
    path: str | Path,
    device: torch.device | str = "cpu",
) -> tuple[FeatureNet, MemoryBank, dict[str, Any]]:
    arrays, meta = load_container(path)
    payload = config_text(arrays)
    arch = FeatNetArch.model_validate(payload["arch"])
    net = FeatureNet.from_arch(arch, int(payload["patch_size"]))
    net.load_state_dict(arrays_to_state_dict(arrays))
    net.to(device).eval()
    if "bank" not in arrays:
        raise ValueError(f"Feature checkpoint {path} has no 'bank' entry")
    bank = MemoryBank(torch.from_numpy(arrays["bank"]).to(device))
    payload["meta"] = meta
    if "origins" in arrays:
        payload["origins"] = arrays["origins"]
    return net, bank, payload


def pretrain_ufnet(
    dataset: Dataset,
    arch: FeatNetArch,
    cfg: FeatTrainConfig,
    seed: int = 0,
    *,
    device: torch.device | str = "cpu",
    checkpoint_path: str | Path | None = None,
    log_path: str | Path | None = None,
    logger: Logger = null_logger,
) -> PretrainResult:
    """Memory-bank instance discrimination over ``patches_per_slice`` random patches per slice."""
    if len(dataset) == 0:
        raise ValueError("pretrain_ufnet needs a non-empty dataset")

    torch.manual_seed(seed)
    patches = PatchDataset.sample(dataset, cfg.patches_per_slice, cfg.patch_size, seed)
    net = FeatureNet.from_arch(arch, cfg.patch_size).to(device)
    bank = MemoryBank.random(len(patches), arch.feature_dim, seed=seed, device=device)
    optimizer = torch.optim.Adam(net.parameters(), lr=cfg.lr)
    loader = DataLoader(
        patches,
        batch_size=cfg.batch,
        shuffle=True,
        generator=torch.Generator().manual_seed(seed),
    )
    logger(
        f"Pretraining feature net on {len(patches)} patches "
        f"({len(dataset)} slices x {cfg.patches_per_slice}), d={arch.feature_dim}, tau={cfg.tau}"
    )

    def checkpoint() -> Path | None:
        if checkpoint_path is None:
            return None
        return save_feature_checkpoint(checkpoint_path, net, bank, arch, cfg, patches.origins)

    history: list[dict[str, float]] = []
    header_written = False
    for epoch in progress(range(1, cfg.epochs + 1), desc="train-ufnet"):
        net.train()
        losses: list[float] = []
        last_features = None
        for batch, indices in loader:
            batch = batch.to(device)
            loss, features = contrastive_loss(net, batch, indices, bank, cfg.tau)
            if not bool(torch.isfinite(loss)):
                saved = checkpoint()
                raise RuntimeError(
                    f"Non-finite contrastive loss at epoch {epoch}; last checkpoint: {saved}"
                )
            optimizer.zero_grad(set_to_none=True)
            loss.backward()
            optimizer.step()
            bank.update(indices, features, momentum=cfg.bank_momentum)
            losses.append(float(loss.detach()))
            last_features = features.detach()

        bank_error = bank.norm_error()
        probabilities = instance_probability(last_features.double(), bank.to(dtype=torch.float64), cfg.tau)
        probability_error = float((probabilities.sum(dim=-1) - 1.0).abs().max())
        row = {
            "epoch": epoch,
            "mean_loss": float(np.mean(losses)),
            "bank_norm_error": bank_error,
            "probability_sum_error": probability_error,
        }
        history.append(row)
        if log_path is not None:
            header_written = flush_rows([row], log_path, header_written)
        logger(
            f"epoch {epoch}: loss={row['mean_loss']:.5f} bank_norm_error={bank_error:.2e} "
            f"probability_sum_error={probability_error:.2e}"
        )
        if bank_error > BANK_NORM_TOLERANCE or probability_error > PROBABILITY_SUM_TOLERANCE:
            saved = checkpoint()
            raise RuntimeError(
                f"Memory-bank invariant violated at epoch {epoch} "
                f"(norm error {bank_error:.2e}, probability error {probability_error:.2e}); "
                f"last checkpoint: {saved}"
            )
        checkpoint()

    net.eval()
    return PretrainResult(net=net, bank=bank, origins=patches.origins, history=history)


def build_feature_bank(
    net: FeatureNet,
    images: np.ndarray,
    origins: np.ndarray,
    patch_size: int,
    batch_size: int = 256,
) -> MemoryBank:
    """Recompute every bank row from the trained network in inference mode."""
    patches = PatchDataset(images, origins, patch_size)
    chunks = [
        embed_patches(net, patches.crops(range(start, min(start + batch_size, len(patches)))), batch_size)
        for start in range(0, len(patches), batch_size)
    ]
    return MemoryBank(torch.cat(chunks, dim=0))

from __future__ import annotations

from pathlib import Path

import numpy as np

from uflossmri.config.schemas import ExperimentConfig
from uflossmri.data.phantoms import make_phantom_dataset
from uflossmri.data.slices import Dataset, load_dataset, load_slice_archive, save_dataset, split_by_subject
from uflossmri.encode.coils import load_coil_maps, save_coil_maps, synth_coil_maps
from uflossmri.encode.masks import SamplingMask, make_mask, save_mask, slice_mask_seed
from uflossmri.encode.operator import KSpaceSample, load_samples, save_samples, simulate_samples
from uflossmri.pipeline.common import (
    SPLITS,
    coil_maps_path,
    dataset_path,
    kspace_path,
    mask_path,
    open_run,
    split_maps_path,
)
from uflossmri.shared.containers import load_container, save_container
from uflossmri.shared.run_layout import require_artifact


def _split_counts(cfg: ExperimentConfig) -> dict[str, int]:
    return {"train": cfg.data.train_count, "val": cfg.data.val_count, "test": cfg.data.test_count}


def _source_dataset(cfg: ExperimentConfig) -> tuple[Dataset, dict[str, np.ndarray] | None]:
    spec = cfg.data
    if spec.archive_path:
        archive = require_artifact(spec.archive_path, "an archive export")
        dataset, maps = load_slice_archive(archive)
        per_slice = None
        if maps is not None:
            per_slice = {item.slice_id: maps[index] for index, item in enumerate(dataset.slices)}
        return dataset, per_slice
    # Spare subjects so truncating the last subject of a split never starves the next one
    total = sum(_split_counts(cfg).values()) + len(SPLITS) * spec.slices_per_subject
    dataset = make_phantom_dataset(
        total,
        shape=spec.shape,
        seed=cfg.seed,
        contrast=spec.contrast,
        slices_per_subject=spec.slices_per_subject,
    )
    return dataset, None


def gen_data(cfg: ExperimentConfig) -> dict[str, Path]:
    """Build train/val/test datasets (disjoint by subject) and coil maps."""
    run = open_run(cfg, "gen-data", "data")
    dataset, per_slice_maps = _source_dataset(cfg)
    splits = split_by_subject(dataset, _split_counts(cfg), seed=cfg.seed)
    written: dict[str, Path] = {}
    for split, part in splits.items():
        path = save_dataset(part, dataset_path(cfg, split), run.meta("dataset", split=split))
        written[split] = run.record(path, split=split, slices=len(part), subjects=len(part.subjects))
        if per_slice_maps is not None:
            stacked = np.stack([per_slice_maps[item.slice_id] for item in part.slices]).astype(np.complex64)
            ids = np.array([item.slice_id for item in part.slices])
            maps_file = save_container(
                split_maps_path(cfg, split), {"maps": stacked, "slice_id": ids}, run.meta("maps", split=split)
            )
            run.record(maps_file, split=split)

    maps = synth_coil_maps(cfg.data.shape, cfg.data.ncoils, seed=cfg.seed)
    written["maps"] = run.record(save_coil_maps(maps, coil_maps_path(cfg), run.meta("coil_maps")))
    run.log(
        "datasets: "
        + ", ".join(f"{split}={len(part)} slices/{len(part.subjects)} subjects" for split, part in splits.items())
    )
    run.finish()
    return written


def _maps_lookup(cfg: ExperimentConfig, split: str):
    per_split = split_maps_path(cfg, split)
    if per_split.exists():
        arrays, _ = load_container(per_split)
        by_id = {str(key): value.astype(np.complex128) for key, value in zip(arrays["slice_id"], arrays["maps"])}
        return lambda index, item: by_id[item.slice_id]
    shared = load_coil_maps(require_artifact(coil_maps_path(cfg), "gen-data"))
    return lambda index, item: shared


def mask_gen(
    cfg: ExperimentConfig,
    kind: str | None = None,
    acceleration: float | None = None,
    calib: int | None = None,
) -> dict[str, Path]:
    """Draw one sampling mask per slice and simulate the undersampled k-space of every split.

    ``masks/mask.npz`` holds the pattern at the run seed; slice i of split s uses
    ``slice_mask_seed(seed, s, i)``.
    """
    updates = {
        key: value
        for key, value in {"kind": kind, "acceleration": acceleration, "calib": calib}.items()
        if value is not None
    }
    spec = cfg.mask.model_copy(update=updates)
    cfg = cfg.model_copy(update={"mask": spec})
    run = open_run(cfg, "mask-gen", "masks")

    def draw(seed: int) -> SamplingMask:
        return make_mask(spec.kind, cfg.data.shape, spec.acceleration, seed, spec.center_fraction, spec.calib)

    mask = draw(cfg.seed)
    run.log(
        f"mask: kind={mask.kind} R={mask.acceleration} sampled fraction={mask.sampling_fraction:.4f}"
    )
    written = {"mask": run.record(save_mask(mask, mask_path(cfg), run.meta("mask")), kind=mask.kind)}
    for split_index, split in enumerate(SPLITS):
        dataset = load_dataset(require_artifact(dataset_path(cfg, split), "gen-data"))
        samples = simulate_samples(
            dataset,
            _maps_lookup(cfg, split),
            lambda index, item, split_index=split_index: draw(slice_mask_seed(cfg.seed, split_index, index)),
        )
        path = save_samples(samples, kspace_path(cfg, split), run.meta("kspace", split=split))
        distinct = len({sample.mask.mask.tobytes() for sample in samples})
        fractions = [sample.mask.sampling_fraction for sample in samples]
        run.log(
            f"{split}: {len(samples)} masks ({distinct} distinct), "
            f"sampled fraction {min(fractions):.4f}-{max(fractions):.4f}"
        )
        written[split] = run.record(path, split=split, samples=len(samples), distinct_masks=distinct)
    run.finish()
    return written


def load_split_samples(cfg: ExperimentConfig, split: str) -> list[KSpaceSample]:
    return load_samples(require_artifact(kspace_path(cfg, split), "mask-gen"))

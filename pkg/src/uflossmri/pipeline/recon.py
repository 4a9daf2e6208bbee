from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np

from uflossmri.config.schemas import ExperimentConfig
from uflossmri.cs.pics import reconstruct_sample, sweep_pics_lambda
from uflossmri.encode.operator import KSpaceSample, load_samples
from uflossmri.eval.metrics import evaluate_reconstruction
from uflossmri.pipeline.common import (
    METHODS,
    kspace_path,
    load_feature_net,
    metrics_path,
    open_run,
    pics_path,
    recon_checkpoint_path,
    torch_device,
)
from uflossmri.pipeline.data import load_split_samples
from uflossmri.shared.containers import load_container, save_container
from uflossmri.shared.run_layout import require_artifact
from uflossmri.shared.tools import progress, write_table
from uflossmri.unrolled.modl import load_recon_checkpoint, reconstruct, time_reconstruction


def _image_container(images: np.ndarray, samples: Sequence[KSpaceSample]) -> dict[str, np.ndarray]:
    return {
        "image": np.asarray(images).astype(np.complex64),
        "slice_id": np.array([sample.target.slice_id for sample in samples]),
    }


def load_images(path: str | Path, hint: str) -> tuple[np.ndarray, list[str]]:
    arrays, _ = load_container(require_artifact(path, hint))
    if "image" not in arrays:
        raise ValueError(f"Reconstruction file {path} has no 'image' entry")
    ids = [str(value) for value in arrays.get("slice_id", np.array([]))]
    return arrays["image"].astype(np.complex128), ids


def recon_pics(cfg: ExperimentConfig, lam: float | None = None, iters: int | None = None) -> Path:
    """PICS baseline on the test split; lambda from ``--lam`` or a validation sweep."""
    updates = {key: value for key, value in {"lam": lam, "iters": iters}.items() if value is not None}
    pics_cfg = cfg.pics.model_copy(update=updates)
    run = open_run(cfg.model_copy(update={"pics": pics_cfg}), "recon-pics", "pics")
    if lam is None and len(pics_cfg.lam_grid) > 1:
        val = load_split_samples(cfg, "val")[: cfg.studies.study_slices]
        chosen, rows = sweep_pics_lambda(val, pics_cfg)
        sweep = write_table(rows, run.folder / "lambda_sweep.csv", run.meta("pics_sweep"))
        run.record(sweep)
        run.log(f"lambda sweep over {list(pics_cfg.lam_grid)} picked lam={chosen:g}")
        pics_cfg = pics_cfg.model_copy(update={"lam": chosen})

    test = load_split_samples(cfg, "test")
    images = np.stack([reconstruct_sample(sample, pics_cfg) for sample in progress(test, desc="recon-pics")])
    path = save_container(
        pics_path(cfg),
        _image_container(images, test),
        run.meta("pics", lam=pics_cfg.lam, iters=pics_cfg.iters),
    )
    run.record(path, lam=pics_cfg.lam, iters=pics_cfg.iters)
    run.finish()
    return path


def reconstruct_file(
    cfg: ExperimentConfig,
    checkpoint: str | Path | None = None,
    input_path: str | Path | None = None,
    output: str | Path | None = None,
) -> Path:
    """Run a trained reconstructor on a k-space sample file."""
    device = torch_device()
    run = open_run(cfg, "reconstruct", "reconstruct")
    checkpoint = Path(checkpoint) if checkpoint else recon_checkpoint_path(cfg, "ufloss")
    source = Path(input_path) if input_path else kspace_path(cfg, "test")
    model, payload = load_recon_checkpoint(require_artifact(checkpoint, "train-recon"), device=device)
    samples = load_samples(require_artifact(source, "mask-gen"))
    images = reconstruct(model, samples, device=device)
    target = Path(output) if output else run.folder / f"{checkpoint.parent.name}_{source.stem}.npz"
    path = save_container(
        target,
        _image_container(images, samples),
        run.meta("reconstruct", checkpoint=str(checkpoint), input=str(source)),
    )
    run.log(f"reconstructed {len(samples)} samples with lam={float(model.lam):.5f} ({payload.get('loss', '?')} arm)")
    run.record(path, checkpoint=str(checkpoint))
    run.finish()
    return path


def _method_images(cfg: ExperimentConfig, method: str, test: list[KSpaceSample], device: str) -> np.ndarray:
    if method == "zero-filled":
        return np.stack([sample.zero_filled() for sample in test])
    if method == "pics":
        images, ids = load_images(pics_path(cfg), "recon-pics")
        if ids and ids != [sample.target.slice_id for sample in test]:
            raise ValueError(f"{pics_path(cfg)} does not match the test split; rerun recon-pics")
        return images
    if method in ("modl-l2", "modl-ufloss"):
        arm = method.split("-", 1)[1]
        checkpoint = require_artifact(recon_checkpoint_path(cfg, arm), f"train-recon --loss {arm}")
        model, _ = load_recon_checkpoint(checkpoint, device=device)
        return reconstruct(model, test, device=device)
    raise ValueError(f"Unknown method '{method}'. Expected one of: {', '.join(METHODS)}")


def evaluate(cfg: ExperimentConfig, methods: Sequence[str] = METHODS) -> Path:
    """Metric rows (NRMSE, SSIM, UFLoss) for every method on every test slice."""
    device = torch_device()
    run = open_run(cfg, "evaluate", "evaluate")
    test = load_split_samples(cfg, "test")
    loaded = load_feature_net(cfg, device, required=False)
    feat_net = loaded[0] if loaded is not None else None
    if feat_net is None:
        run.log("no feature checkpoint; UFLoss column will be empty")

    rows: list[dict] = []
    for method in methods:
        images = _method_images(cfg, method, test, device)
        for image, sample in zip(images, test):
            row = evaluate_reconstruction(
                image, sample.target.image, feat_net, cfg.ufloss, method, sample.target.slice_id
            )
            rows.append(row.as_dict())
        method_rows = [row for row in rows if row["method"] == method]
        run.log(
            f"{method}: median nrmse={np.median([r['nrmse'] for r in method_rows]):.4f} "
            f"ssim={np.median([r['ssim'] for r in method_rows]):.4f}"
        )
    path = write_table(rows, metrics_path(cfg), run.meta("metrics"))
    run.record(path, methods=list(methods))

    timing = _inference_timing(cfg, test, device)
    if timing:
        timing_path = write_table(timing, run.folder / "inference_timing.csv", run.meta("timing"))
        run.record(timing_path)
    run.finish()
    return path


def _inference_timing(cfg: ExperimentConfig, test: list[KSpaceSample], device: str) -> list[dict]:
    rows = []
    for arm in ("l2", "ufloss"):
        checkpoint = recon_checkpoint_path(cfg, arm)
        if not checkpoint.exists():
            continue
        model, _ = load_recon_checkpoint(checkpoint, device=device)
        rows.append({"method": f"modl-{arm}", "median_seconds": time_reconstruction(model, test, device=device)})
    return rows

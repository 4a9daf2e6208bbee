from __future__ import annotations

from pathlib import Path

import numpy as np
import pandas as pd
import torch

from uflossmri.config.schemas import ExperimentConfig
from uflossmri.data.patches import Patch, grid_origins
from uflossmri.data.slices import Dataset, load_dataset
from uflossmri.eval.deblur import deblur_descent, line_search_alpha
from uflossmri.eval.perturb import StudyCurve, perturb_blur, perturbation_study
from uflossmri.eval.report import (
    load_metrics,
    plot_metric_boxplots,
    plot_study_curves,
    render_heat_map,
    render_images,
    summarize_metrics,
)
from uflossmri.eval.retrieval import correlation_map, retrieve_farthest, retrieve_neighbors, ssim_correlation_map
from uflossmri.featnet.bank import MemoryBank
from uflossmri.featnet.train import PatchDataset
from uflossmri.pipeline.common import (
    dataset_path,
    feature_bank_path,
    load_feature_net,
    metrics_path,
    open_run,
    study_name,
    torch_device,
)
from uflossmri.shared.containers import load_container
from uflossmri.shared.run_layout import category_root, require_artifact
from uflossmri.shared.tools import progress, write_table

SHOWN_NEIGHBORS = 5


def _study_images(cfg: ExperimentConfig) -> Dataset:
    test = load_dataset(require_artifact(dataset_path(cfg, "test"), "gen-data"))
    count = min(cfg.studies.study_slices, len(test))
    return Dataset(slices=test.slices[:count], split="test", normalization_scale=test.normalization_scale)


def study_perturb(cfg: ExperimentConfig) -> dict[str, Path]:
    """UFLoss response to additive noise and k-space cropping."""
    device = torch_device()
    net, _, _ = load_feature_net(cfg, device)
    run = open_run(cfg, "study-perturb", "studies")
    images = _study_images(cfg).images()
    grids = cfg.studies
    curves = {
        "noise": perturbation_study(images, grids.noise_levels, net, cfg.ufloss, "noise", grids.noise_seeds, cfg.seed),
        "blur": perturbation_study(images, grids.blur_levels, net, cfg.ufloss, "blur"),
    }
    written: dict[str, Path] = {}
    for kind, curve in curves.items():
        name = study_name(f"perturb-{kind}", "all", "ufnet")
        table = write_table(curve.rows(), run.folder / f"{name}.csv", run.meta("perturb", arm=kind))
        written[kind] = run.record(table, arm=kind, slices=len(images))
        xlabel = "noise level beta" if kind == "noise" else "k-space crop rate R"
        run.record(plot_study_curves([curve], run.folder, name, xlabel, run.meta("perturb", arm=kind)))
        run.log(f"{kind}: ufloss {', '.join(f'{y:.4f}' for y in curve.y_values)}")
    run.finish()
    return written


def study_deblur(cfg: ExperimentConfig) -> Path:
    """UFLoss gradient descent from k-space blurred images back toward the originals."""
    device = torch_device()
    net, _, _ = load_feature_net(cfg, device)
    run = open_run(cfg, "study-deblur", "studies")
    grids = cfg.studies
    dataset = _study_images(cfg)
    alpha = grids.deblur_alpha
    if grids.deblur_line_search:
        alpha = line_search_alpha(dataset[0].image, net, cfg.ufloss, alpha=alpha, R0=grids.deblur_r0)
        run.log(f"line search picked alpha={alpha:g}")

    summary: list[dict] = []
    curves = []
    for item in progress(dataset.slices, desc="study-deblur"):
        final, curve = deblur_descent(
            item.image, grids.deblur_r0, alpha, grids.deblur_steps, net, cfg.ufloss, logger=run.log
        )
        curve = StudyCurve(curve.x_values, curve.y_values, curve.nrmse_values, label=item.slice_id)
        curves.append(curve)
        name = study_name("deblur", item.slice_id, "ufnet")
        run.record(write_table(curve.rows(), run.folder / f"{name}.csv", run.meta("deblur")))
        initial_loss, final_loss = curve.y_values[0], curve.y_values[-1]
        initial_error, final_error = curve.nrmse_values[0], curve.nrmse_values[-1]
        summary.append(
            {
                "slice_id": item.slice_id,
                "alpha": alpha,
                "initial_ufloss": initial_loss,
                "final_ufloss": final_loss,
                "initial_nrmse": initial_error,
                "final_nrmse": final_error,
                "recovered": bool(final_loss < 0.1 * initial_loss and final_error < initial_error),
            }
        )
        render = render_images(
            [item.image, perturb_blur(item.image, grids.deblur_r0), final],
            ["original", f"blurred R={grids.deblur_r0:g}", f"after {grids.deblur_steps} steps"],
            run.folder,
            name,
            run.meta("deblur"),
        )
        run.record(render)

    name = study_name("deblur", "all", "ufnet")
    path = write_table(summary, run.folder / f"{name}.csv", run.meta("deblur"))
    run.record(path, alpha=alpha)
    run.record(plot_study_curves(curves, run.folder, name, "iteration", run.meta("deblur")))
    recovered = sum(row["recovered"] for row in summary)
    run.log(f"deblur: {recovered}/{len(summary)} slices reached < 10% of their initial UFLoss with lower NRMSE")
    run.finish()
    return path


def _training_patches(cfg: ExperimentConfig) -> tuple[MemoryBank, PatchDataset]:
    arrays, _ = load_container(require_artifact(feature_bank_path(cfg), "train-ufnet"))
    train = load_dataset(require_artifact(dataset_path(cfg, "train"), "gen-data"))
    patches = PatchDataset(train.images(), arrays["origins"], cfg.feat_train.patch_size)
    return MemoryBank(torch.from_numpy(arrays["bank"])), patches


def retrieve(cfg: ExperimentConfig, queries: int | None = None) -> Path:
    """Nearest and farthest training patches for sampled query patches."""
    device = torch_device()
    net, _, _ = load_feature_net(cfg, device)
    run = open_run(cfg, "retrieve", "studies")
    bank, patches = _training_patches(cfg)
    bank = bank.to(device)
    k_max = min(max(cfg.studies.retrieval_k), len(bank))
    count = min(queries or cfg.studies.study_slices, len(patches))
    chosen = np.random.default_rng(cfg.seed).choice(len(patches), size=count, replace=False)

    rows: list[dict] = []
    for query_index in progress(chosen.tolist(), desc="retrieve"):
        origin = tuple(int(v) for v in patches.origins[query_index][1:])
        query = Patch(patches.crop(query_index).numpy().astype(np.complex128), origin, str(query_index))
        nearest = retrieve_neighbors(query, net, bank, k_max)
        farthest = retrieve_farthest(query, net, bank, min(SHOWN_NEIGHBORS, len(bank)))
        for rank, (index, score) in enumerate(nearest, start=1):
            rows.append({"query": query_index, "direction": "nearest", "rank": rank, "index": index, "inner_product": score})
        for rank, (index, score) in enumerate(farthest, start=1):
            rows.append({"query": query_index, "direction": "farthest", "rank": rank, "index": index, "inner_product": score})
        if nearest[0][0] != query_index:
            run.log(f"query {query_index}: top-1 is {nearest[0][0]} ({nearest[0][1]:.6f}), not itself")
        shown = [query_index] + [index for index, _ in nearest[:SHOWN_NEIGHBORS]] + [index for index, _ in farthest]
        titles = ["query"] + [f"#{r} {s:.3f}" for r, (_, s) in enumerate(nearest[:SHOWN_NEIGHBORS], 1)]
        titles += [f"far {s:.3f}" for _, s in farthest]
        name = study_name("retrieve", str(query_index), "ufnet")
        run.record(
            render_images([patches.crop(i).numpy() for i in shown], titles, run.folder, name, run.meta("retrieve"))
        )

    name = study_name("retrieve", "all", "ufnet")
    path = write_table(rows, run.folder / f"{name}.csv", run.meta("retrieve", k=list(cfg.studies.retrieval_k)))
    run.record(path, queries=count)
    run.finish()
    return path


def _map_rows(values: np.ndarray, kind: str, target: str) -> list[dict]:
    return [
        {"kind": kind, "target": target, "row": int(r), "col": int(c), "value": float(values[r, c])}
        for r in range(values.shape[0])
        for c in range(values.shape[1])
    ]


def correlate(cfg: ExperimentConfig) -> Path:
    """Feature and SSIM correlation maps of one source patch against target slices."""
    device = torch_device()
    net, _, _ = load_feature_net(cfg, device)
    run = open_run(cfg, "correlate", "studies")
    test = load_dataset(require_artifact(dataset_path(cfg, "test"), "gen-data"))
    source_slice = test[0]
    size, stride = cfg.ufloss.patch_size, cfg.studies.correlation_stride
    origins = grid_origins(source_slice.shape, size, stride)
    origin = origins[len(origins) // 2]
    source = Patch(
        source_slice.image[origin[0]:origin[0] + size, origin[1]:origin[1] + size].copy(),
        origin,
        source_slice.slice_id,
    )
    # Same slice, plus one of another contrast when the split has one
    targets = [source_slice]
    others = [item for item in test.slices[1:] if item.contrast_tag != source_slice.contrast_tag]
    targets.append(others[0] if others else test[min(1, len(test) - 1)])

    rows: list[dict] = []
    for target in targets:
        feature_values = correlation_map(source, target, net, stride)
        ssim_values = ssim_correlation_map(source, target, stride)
        rows.extend(_map_rows(feature_values, "feature", target.slice_id))
        rows.extend(_map_rows(ssim_values, "ssim", target.slice_id))
        for kind, values in (("ufnet", feature_values), ("ssim", ssim_values)):
            name = study_name("correlate", target.slice_id, kind)
            title = f"{kind} vs {target.slice_id} ({target.contrast_tag})"
            run.record(render_heat_map(values, run.folder, name, title, run.meta("correlate")))

    name = study_name("correlate", source_slice.slice_id, "all")
    path = write_table(rows, run.folder / f"{name}.csv", run.meta("correlate", origin=list(origin)))
    run.record(path, source=source_slice.slice_id, origin=list(origin))
    run.finish()
    return path


def report(cfg: ExperimentConfig) -> Path:
    """Median/IQR summary and box plots of the evaluation metrics."""
    run = open_run(cfg, "report", "report")
    metrics = load_metrics([require_artifact(metrics_path(cfg), "evaluate")])
    summary = summarize_metrics(metrics)
    path = write_table(summary.to_dict("records"), run.folder / "summary.csv", run.meta("report"))
    run.record(path, methods=sorted(set(metrics["method"])))
    for plot in plot_metric_boxplots(metrics, run.folder, run.meta("report")):
        run.record(plot)

    sweep = category_root(cfg.output_dir, "studies") / f"{study_name('mu-sweep', 'all', 'modl')}.csv"
    if sweep.exists():
        table = pd.read_csv(sweep)
        run.log("mu sweep:\n" + table.to_string(index=False))
    for method, block in summary.groupby("method", sort=False):
        medians = {row.metric: row.median for row in block.itertuples()}
        run.log(f"{method}: " + ", ".join(f"{key}={value:.4f}" for key, value in sorted(medians.items())))
    run.finish()
    return path

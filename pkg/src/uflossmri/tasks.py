from __future__ import annotations

import json
import shlex
from dataclasses import asdict, is_dataclass
from pathlib import Path

from invoke import Collection, task

import uflossmri.config.settings as config_module
from uflossmri.config import config

CLI_MODULE = "uflossmri.cli"


def module_command(module: str, args: list[str] | None = None) -> str:
    command = ["python", "-m", module]
    command.extend(args or [])
    return " ".join(shlex.quote(part) for part in command)


def _split_extra(extra: str | None) -> list[str]:
    if not extra:
        return []
    return shlex.split(extra)


def _add_option(args: list[str], flag: str, value: object | None) -> None:
    if value is None:
        return
    text = str(value).strip()
    if text:
        args.extend([flag, text])


def _global_args(
    profile: str | None,
    config_path: str | None,
    seed: int | None,
    out: str | None,
    overrides: str | None,
) -> list[str]:
    args: list[str] = []
    _add_option(args, "--profile", profile)
    _add_option(args, "--config", config_path)
    _add_option(args, "--seed", seed)
    _add_option(args, "--out", out)
    for assignment in (overrides or "").split(","):
        _add_option(args, "--set", assignment)
    return args


def _run_command(context, command: str, args: list[str]) -> None:
    context.run(module_command(CLI_MODULE, [command, *args]), pty=True)


def _simple_task(command: str, help_text: str):
    def run_command(
        context,
        profile: str | None = None,
        config_path: str | None = None,
        seed: int | None = None,
        out: str | None = None,
        overrides: str | None = None,
        extra: str = "",
    ) -> None:
        args = _global_args(profile, config_path, seed, out, overrides)
        args.extend(_split_extra(extra))
        _run_command(context, command, args)

    run_command.__doc__ = help_text
    return task(name=command)(run_command)


gen_data = _simple_task("gen-data", "Generate datasets and coil maps.")
train_ufnet = _simple_task("train-ufnet", "Pretrain the patch feature network.")
evaluate = _simple_task("evaluate", "Evaluate every method on the test split.")
study_perturb = _simple_task("study-perturb", "Noise and blur perturbation curves.")
study_deblur = _simple_task("study-deblur", "Deblurring by UFLoss descent.")
retrieve = _simple_task("retrieve", "Patch retrieval in feature space.")
correlate = _simple_task("correlate", "Feature and SSIM correlation maps.")
report = _simple_task("report", "Summary tables and box plots.")


@task(name="mask-gen")
def mask_gen(
    context,
    mask_type: str | None = None,
    accel: float | None = None,
    calib: int | None = None,
    profile: str | None = None,
    config_path: str | None = None,
    seed: int | None = None,
    out: str | None = None,
    overrides: str | None = None,
    extra: str = "",
) -> None:
    args = _global_args(profile, config_path, seed, out, overrides)
    _add_option(args, "--type", mask_type)
    _add_option(args, "--accel", accel)
    _add_option(args, "--calib", calib)
    args.extend(_split_extra(extra))
    _run_command(context, "mask-gen", args)


@task(name="train-recon")
def train_recon(
    context,
    loss: str = "ufloss",
    mu: float | None = None,
    profile: str | None = None,
    config_path: str | None = None,
    seed: int | None = None,
    out: str | None = None,
    overrides: str | None = None,
    extra: str = "",
) -> None:
    args = _global_args(profile, config_path, seed, out, overrides)
    _add_option(args, "--loss", loss)
    _add_option(args, "--mu", mu)
    args.extend(_split_extra(extra))
    _run_command(context, "train-recon", args)


@task(name="recon-pics")
def recon_pics(
    context,
    lam: float | None = None,
    iters: int | None = None,
    profile: str | None = None,
    config_path: str | None = None,
    seed: int | None = None,
    out: str | None = None,
    overrides: str | None = None,
    extra: str = "",
) -> None:
    args = _global_args(profile, config_path, seed, out, overrides)
    _add_option(args, "--lam", lam)
    _add_option(args, "--iters", iters)
    args.extend(_split_extra(extra))
    _run_command(context, "recon-pics", args)


@task(name="reconstruct")
def reconstruct(
    context,
    checkpoint: str | None = None,
    input_path: str | None = None,
    output: str | None = None,
    profile: str | None = None,
    config_path: str | None = None,
    seed: int | None = None,
    out: str | None = None,
    overrides: str | None = None,
    extra: str = "",
) -> None:
    args = _global_args(profile, config_path, seed, out, overrides)
    _add_option(args, "--checkpoint", checkpoint)
    _add_option(args, "--input", input_path)
    _add_option(args, "--output", output)
    args.extend(_split_extra(extra))
    _run_command(context, "reconstruct", args)


@task(name="mu-sweep")
def mu_sweep(
    context,
    mus: str | None = None,
    profile: str | None = None,
    config_path: str | None = None,
    seed: int | None = None,
    out: str | None = None,
    overrides: str | None = None,
    extra: str = "",
) -> None:
    args = _global_args(profile, config_path, seed, out, overrides)
    if mus:
        args.append("--mus")
        args.extend(part.strip() for part in mus.split(",") if part.strip())
    args.extend(_split_extra(extra))
    _run_command(context, "mu-sweep", args)


@task(name="all")
def pipeline_all(
    context,
    profile: str | None = None,
    config_path: str | None = None,
    seed: int | None = None,
    out: str | None = None,
    overrides: str | None = None,
    skip_studies: bool = False,
) -> None:
    """gen-data -> mask-gen -> train-ufnet -> train-recon x2 -> recon-pics -> evaluate -> report."""
    args = _global_args(profile, config_path, seed, out, overrides)
    steps: list[list[str]] = [
        ["gen-data"],
        ["mask-gen"],
        ["train-ufnet"],
        ["train-recon", "--loss", "l2"],
        ["train-recon", "--loss", "ufloss"],
        ["recon-pics"],
        ["evaluate"],
    ]
    if not skip_studies:
        steps.extend([["study-perturb"], ["study-deblur"], ["retrieve"], ["correlate"]])
    steps.append(["report"])
    for command, *flags in steps:
        _run_command(context, command, [*args, *flags])


@task(name="path")
def show_config_path(_context) -> None:
    print(Path(config_module.__file__).resolve())


@task(name="show")
def config_show(_context) -> None:
    payload = asdict(config) if is_dataclass(config) else {}
    print(json.dumps(payload, indent=2, ensure_ascii=False, default=str))


pipeline = Collection("pipeline")
for item in (gen_data, mask_gen, train_ufnet, train_recon, recon_pics, reconstruct, evaluate, mu_sweep, pipeline_all):
    pipeline.add_task(item)

studies = Collection("studies")
for item in (study_perturb, study_deblur, retrieve, correlate, report):
    studies.add_task(item)

config_tasks = Collection("config")
config_tasks.add_task(show_config_path)
config_tasks.add_task(config_show)

ns = Collection()
ns.add_collection(pipeline)
ns.add_collection(studies)
ns.add_collection(config_tasks)

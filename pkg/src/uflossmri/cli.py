from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Callable, Sequence

from uflossmri.config import config
from uflossmri.config.experiment import load_experiment_config
from uflossmri.config.profiles import all_registered_profiles
from uflossmri.config.schemas import ExperimentConfig
from uflossmri.pipeline.common import METHODS
from uflossmri.shared.tools import get_run_logger, write_run_error

COMMANDS = (
    "gen-data",
    "mask-gen",
    "train-ufnet",
    "train-recon",
    "recon-pics",
    "reconstruct",
    "evaluate",
    "study-perturb",
    "study-deblur",
    "retrieve",
    "correlate",
    "report",
    "mu-sweep",
)


def _add_global_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", dest="config_path", help="Experiment config file (JSON)")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="Dotted override, repeatable. Example: --set unroll.epochs=2",
    )
    parser.add_argument("--seed", type=int, help="Global seed recorded in every artifact")
    parser.add_argument("--out", help=f"Output directory (default: {config.output_root})")
    parser.add_argument(
        "--profile",
        choices=[spec.name for spec in all_registered_profiles()],
        help="Named profile providing the defaults (default: desk)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="uflossmri",
        description="Undersampled MRI reconstruction with an unsupervised patch feature loss.",
    )
    commands = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")
    helps = {
        "gen-data": "Generate train/val/test datasets and coil maps",
        "mask-gen": "Generate the sampling mask and undersampled k-space",
        "train-ufnet": "Pretrain the patch feature network",
        "train-recon": "Train the unrolled reconstructor (l2 or ufloss arm)",
        "recon-pics": "Reconstruct the test split with the PICS baseline",
        "reconstruct": "Run a trained reconstructor on a k-space file",
        "evaluate": "Compute NRMSE/SSIM/UFLoss rows for every method",
        "study-perturb": "UFLoss response to noise and k-space cropping",
        "study-deblur": "Deblur by UFLoss gradient descent",
        "retrieve": "Nearest/farthest training patches in feature space",
        "correlate": "Feature and SSIM correlation maps",
        "report": "Median/IQR summary tables and box plots",
        "mu-sweep": "Train one arm per UFLoss weight and compare",
    }
    subparsers = {}
    for name in COMMANDS:
        sub = commands.add_parser(name, help=helps[name], description=helps[name])
        _add_global_options(sub)
        subparsers[name] = sub

    mask = subparsers["mask-gen"]
    mask.add_argument("--type", dest="mask_type", choices=["random1d", "poisson"], help="Mask family")
    mask.add_argument("--accel", type=float, help="Acceleration factor R")
    mask.add_argument("--calib", type=int, help="Poisson-disk calibration region size")

    recon = subparsers["train-recon"]
    recon.add_argument("--loss", choices=["l2", "ufloss"], default="ufloss", help="Training objective")
    recon.add_argument("--mu", type=float, help="UFLoss weight (default: ufloss.mu)")

    pics = subparsers["recon-pics"]
    pics.add_argument("--lam", type=float, help="Fixed l1-wavelet weight; skips the lambda sweep")
    pics.add_argument("--iters", type=int, help="Solver iterations")

    infer = subparsers["reconstruct"]
    infer.add_argument("--checkpoint", help="Reconstruction checkpoint (default: recon/ufloss/best)")
    infer.add_argument("--input", dest="input_path", help="k-space sample file (default: test split)")
    infer.add_argument("--output", help="Output image container")

    subparsers["evaluate"].add_argument(
        "--methods",
        nargs="+",
        choices=list(METHODS),
        default=list(METHODS),
        help="Methods to evaluate",
    )
    subparsers["retrieve"].add_argument("--queries", type=int, help="Number of query patches")
    subparsers["mu-sweep"].add_argument("--mus", type=float, nargs="+", help="UFLoss weights to train")
    return parser


def _handlers() -> dict[str, Callable[[ExperimentConfig, argparse.Namespace], object]]:
    from uflossmri.pipeline import data, recon, studies, training

    return {
        "gen-data": lambda cfg, args: data.gen_data(cfg),
        "mask-gen": lambda cfg, args: data.mask_gen(cfg, args.mask_type, args.accel, args.calib),
        "train-ufnet": lambda cfg, args: training.train_ufnet(cfg),
        "train-recon": lambda cfg, args: training.train_recon(cfg, args.loss, args.mu),
        "recon-pics": lambda cfg, args: recon.recon_pics(cfg, args.lam, args.iters),
        "reconstruct": lambda cfg, args: recon.reconstruct_file(cfg, args.checkpoint, args.input_path, args.output),
        "evaluate": lambda cfg, args: recon.evaluate(cfg, args.methods),
        "study-perturb": lambda cfg, args: studies.study_perturb(cfg),
        "study-deblur": lambda cfg, args: studies.study_deblur(cfg),
        "retrieve": lambda cfg, args: studies.retrieve(cfg, args.queries),
        "correlate": lambda cfg, args: studies.correlate(cfg),
        "report": lambda cfg, args: studies.report(cfg),
        "mu-sweep": lambda cfg, args: training.mu_sweep(cfg, tuple(args.mus) if args.mus else None),
    }


def run(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    out = Path(args.out or config.output_root)
    try:
        cfg = load_experiment_config(
            profile=args.profile,
            config_path=args.config_path,
            overrides=args.overrides,
            seed=args.seed,
            out=args.out or (None if args.config_path else config.output_root),
        )
        out = Path(cfg.output_dir)
        _handlers()[args.command](cfg, args)
    except Exception as exc:  # noqa: BLE001
        log = get_run_logger(out, echo=False)
        log(f"{args.command} failed: {exc}", exc=exc)
        error_path = write_run_error(out, exc)
        print(f"Error: {exc}", file=sys.stderr)
        print(f"Traceback saved to {error_path}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    raise SystemExit(run())


if __name__ == "__main__":
    main()

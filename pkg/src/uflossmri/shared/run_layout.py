"""Central conventions for the experiment output folder.

Every command writes into one subfolder of the output root (``runs/`` by
default)::

    runs/
      data/          # train/val/test datasets, coil maps, k-space samples
      masks/         # sampling masks
      ufnet/         # feature-net checkpoint, bank, pretraining log
      recon/<arm>/   # MoDL checkpoints and training logs per loss arm
      pics/          # PICS baseline reconstructions
      reconstruct/   # ad-hoc inference outputs
      evaluate/      # metric rows per method
      studies/       # perturbation, deblurring, retrieval, correlation
      report/        # summary tables and box plots

Each category folder carries a ``metadata.json`` recording its ``kind``, the
config hash, the seed and the resolved config it ran with.
"""
from __future__ import annotations

import json
from datetime import datetime
from pathlib import Path
from typing import Any

from uflossmri.config.experiment import config_hash
from uflossmri.config.schemas import ExperimentConfig

# Logical command category -> subfolder name under the output root.
CATEGORY_DIRS: dict[str, str] = {
    "data": "data",
    "masks": "masks",
    "ufnet": "ufnet",
    "recon": "recon",
    "pics": "pics",
    "reconstruct": "reconstruct",
    "evaluate": "evaluate",
    "studies": "studies",
    "report": "report",
}

METADATA_NAME = "metadata.json"
README_NAME = "README.md"


def category_root(root: str | Path, category: str) -> Path:
    """Return the subfolder that holds output of ``category`` under ``root``."""
    if category not in CATEGORY_DIRS:
        raise ValueError(f"Unknown run category: {category!r}")
    return Path(root).expanduser() / CATEGORY_DIRS[category]


def read_metadata(folder: str | Path) -> dict[str, Any]:
    meta_path = Path(folder) / METADATA_NAME
    if not meta_path.exists():
        return {}
    try:
        loaded = json.loads(meta_path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError):
        return {}
    return loaded if isinstance(loaded, dict) else {}


def prepare_category_dir(
    cfg: ExperimentConfig,
    category: str,
    *,
    subdir: str = "",
    root: str | Path | None = None,
) -> Path:
    """Create (or reuse) the folder for ``category`` and document it."""
    base = category_root(root if root is not None else cfg.output_dir, category)
    folder = base / subdir if subdir else base
    folder.mkdir(parents=True, exist_ok=True)

    payload = {
        "created_at": datetime.now().isoformat(timespec="seconds"),
        "kind": f"{category}/{subdir}" if subdir else category,
        "config_hash": config_hash(cfg),
        "seed": cfg.seed,
        "profile": cfg.profile,
        "config": cfg.model_dump(mode="json"),
    }
    (folder / METADATA_NAME).write_text(
        json.dumps(payload, indent=2, ensure_ascii=False, default=str),
        encoding="utf-8",
    )
    write_runs_readme(base.parent)
    return folder


_README_BODY = """# Runs

Experiment output is organised into one subfolder per command category. Each
folder contains a `metadata.json` that documents its `kind`, the config hash,
the seed and the resolved configuration it ran with.

```
<out>/
  data/          # gen-data: train/val/test datasets and k-space samples
  masks/         # mask-gen: sampling masks
  ufnet/         # train-ufnet: feature-net checkpoint and memory bank
  recon/<arm>/   # train-recon: MoDL checkpoints per loss arm (l2, ufloss, mu_*)
  pics/          # recon-pics: PICS baseline reconstructions
  reconstruct/   # reconstruct: inference outputs
  evaluate/      # evaluate: metric rows per method
  studies/       # study-*, retrieve, correlate
  report/        # report: summary tables and box plots
  run_manifest.jsonl / run_manifest.json  # every artifact with its SHA-256
```

This file is generated automatically; edits may be overwritten.
"""


def write_runs_readme(root: str | Path) -> Path:
    """Write a README documenting the output layout. Returns its path."""
    root_path = Path(root).expanduser()
    root_path.mkdir(parents=True, exist_ok=True)
    readme = root_path / README_NAME
    readme.write_text(_README_BODY, encoding="utf-8")
    return readme


def require_artifact(path: str | Path, hint: str = "") -> Path:
    """Return ``path`` if it exists, otherwise raise naming the missing file."""
    artifact = Path(path).expanduser()
    if not artifact.exists():
        suffix = f" (run '{hint}' first)" if hint else ""
        raise FileNotFoundError(f"Missing artifact: {artifact}{suffix}")
    return artifact

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Literal


@dataclass
class Config:
    output_root: str = "runs"
    device: Literal["auto", "cpu", "cuda"] = "auto"
    torch_num_threads: int = 0  # 0 keeps the torch default
    show_progress: bool = True
    echo_log: bool = True

    run_log_name: str = "run.log"
    manifest_file_name: str = "run_manifest.jsonl"
    manifest_summary_name: str = "run_manifest.json"
    csv_float_format: str = "%.8g"

    # Dataset/ checkpoint file names inside each category folder
    dataset_file_names: dict[str, str] | None = None
    feature_checkpoint_name: str = "ufnet_checkpoint.npz"
    recon_checkpoint_name: str = "modl_checkpoint.npz"
    best_recon_checkpoint_name: str = "modl_best.npz"
    metrics_file_name: str = "metrics.csv"

    def __post_init__(self) -> None:
        if not self.dataset_file_names:
            self.dataset_file_names = {
                "train": "train.npz",
                "val": "val.npz",
                "test": "test.npz",
            }
        self.device = str(self.device or "auto").strip().lower()  # type: ignore[assignment]
        if self.device not in {"auto", "cpu", "cuda"}:
            raise ValueError(
                f"Unsupported device '{self.device}'. Expected one of: auto, cpu, cuda"
            )
        self.torch_num_threads = max(0, int(self.torch_num_threads))

    def resolve_device(self) -> str:
        if self.device != "auto":
            return self.device
        import torch

        return "cuda" if torch.cuda.is_available() else "cpu"


config = Config()


def _apply_external_json_config(cfg: Config) -> None:
    config_path = os.getenv("UFLOSSMRI_SETTINGS_JSON", "").strip()
    if not config_path:
        return

    path = Path(config_path).expanduser()
    if not path.exists() or not path.is_file():
        raise FileNotFoundError(f"UFLOSSMRI_SETTINGS_JSON not found: {path}")
    try:
        payload = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValueError(f"Invalid UFLOSSMRI_SETTINGS_JSON: {path}") from exc
    if not isinstance(payload, dict):
        raise ValueError(f"Invalid UFLOSSMRI_SETTINGS_JSON payload: {path}")

    direct_fields = {
        "output_root",
        "device",
        "torch_num_threads",
        "show_progress",
        "echo_log",
        "csv_float_format",
    }
    aliases = {
        "runs_root": "output_root",
        "progress": "show_progress",
    }
    for key in direct_fields:
        if key in payload and payload[key] is not None:
            setattr(cfg, key, payload[key])
    for source_key, target_key in aliases.items():
        if source_key in payload and payload[source_key] is not None:
            setattr(cfg, target_key, payload[source_key])

    cfg.__post_init__()


_apply_external_json_config(config)

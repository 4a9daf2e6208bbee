"""Named-array containers (``.npz``) with an embedded JSON ``meta`` entry."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import torch

META_KEY = "meta"
WEIGHTS_PREFIX = "weights/"


def save_container(
    path: str | Path,
    arrays: Mapping[str, np.ndarray],
    meta: dict[str, Any] | None = None,
) -> Path:
    out_path = Path(path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    if META_KEY in arrays:
        raise ValueError(f"'{META_KEY}' is reserved in named-array containers")
    payload = {key: np.asarray(value) for key, value in arrays.items()}
    payload[META_KEY] = np.array(json.dumps(meta or {}, sort_keys=True, default=str))
    with open(out_path, "wb") as handle:
        np.savez(handle, **payload)
    return out_path


def load_container(path: str | Path) -> tuple[dict[str, np.ndarray], dict[str, Any]]:
    in_path = Path(path).expanduser()
    if not in_path.exists() or not in_path.is_file():
        raise FileNotFoundError(f"Container not found: {in_path}")
    with np.load(in_path, allow_pickle=False) as handle:
        arrays = {key: handle[key] for key in handle.files}
    raw_meta = arrays.pop(META_KEY, None)
    meta: dict[str, Any] = {}
    if raw_meta is not None:
        try:
            loaded = json.loads(str(raw_meta))
        except json.JSONDecodeError as exc:
            raise ValueError(f"Corrupt meta entry in {in_path}") from exc
        if isinstance(loaded, dict):
            meta = loaded
    return arrays, meta


def state_dict_to_arrays(module: torch.nn.Module, prefix: str = WEIGHTS_PREFIX) -> dict[str, np.ndarray]:
    return {
        f"{prefix}{name}": tensor.detach().cpu().numpy()
        for name, tensor in module.state_dict().items()
    }


def arrays_to_state_dict(
    arrays: Mapping[str, np.ndarray],
    prefix: str = WEIGHTS_PREFIX,
) -> dict[str, torch.Tensor]:
    state = {
        key[len(prefix):]: torch.from_numpy(np.array(value))
        for key, value in arrays.items()
        if key.startswith(prefix)
    }
    if not state:
        raise ValueError(f"No '{prefix}*' entries found in container")
    return state


def config_text(arrays: Mapping[str, np.ndarray], key: str = "config") -> dict[str, Any]:
    if key not in arrays:
        raise ValueError(f"Container has no '{key}' entry")
    return json.loads(str(arrays[key]))

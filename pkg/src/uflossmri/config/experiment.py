from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path
from typing import Any, Iterable

from uflossmri.config.profiles import profile_payload
from uflossmri.config.schemas import ExperimentConfig, validate_experiment


def _deep_merge(base: dict[str, Any], patch: dict[str, Any]) -> dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in patch.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = _deep_merge(merged[key], value)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def read_config_file(path: str | Path) -> dict[str, Any]:
    config_path = Path(path).expanduser()
    if not config_path.exists() or not config_path.is_file():
        raise FileNotFoundError(f"Config file not found: {config_path}")
    try:
        payload = json.loads(config_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ValueError(f"Invalid config JSON: {config_path} ({exc.msg})") from exc
    if not isinstance(payload, dict):
        raise ValueError(f"Config file must contain a JSON object: {config_path}")
    return payload


def _parse_override_value(raw: str) -> Any:
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def apply_override(payload: dict[str, Any], assignment: str) -> dict[str, Any]:
    """Apply one ``dotted.key=value`` assignment; values are parsed as JSON."""
    if "=" not in assignment:
        raise ValueError(f"Override must look like key=value, got '{assignment}'")
    dotted, raw_value = assignment.split("=", 1)
    keys = [part.strip() for part in dotted.strip().split(".")]
    if not keys or any(not part for part in keys):
        raise ValueError(f"Override key is empty or malformed: '{dotted}'")

    updated = copy.deepcopy(payload)
    cursor = updated
    for key in keys[:-1]:
        node = cursor.get(key)
        if node is None:
            node = {}
            cursor[key] = node
        if not isinstance(node, dict):
            raise ValueError(f"Override '{dotted}' descends into non-section '{key}'")
        cursor = node
    cursor[keys[-1]] = _parse_override_value(raw_value)
    return updated


def load_experiment_config(
    profile: str | None = None,
    config_path: str | Path | None = None,
    overrides: Iterable[str] = (),
    seed: int | None = None,
    out: str | Path | None = None,
) -> ExperimentConfig:
    file_payload = read_config_file(config_path) if config_path is not None else {}
    # An explicit profile wins over the one named in the file
    chosen = profile or str(file_payload.get("profile") or "desk")
    payload = _deep_merge(profile_payload(chosen), file_payload)
    payload["profile"] = profile_payload(chosen)["profile"]
    for assignment in overrides:
        payload = apply_override(payload, assignment)
    if seed is not None:
        payload["seed"] = int(seed)
    if out is not None:
        payload["output_dir"] = str(out)
    return validate_experiment(payload)


def config_hash(cfg: ExperimentConfig) -> str:
    canonical = json.dumps(cfg.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:12]


def artifact_meta(cfg: ExperimentConfig, kind: str, **extra: Any) -> dict[str, Any]:
    meta: dict[str, Any] = {"config_hash": config_hash(cfg), "seed": cfg.seed, "kind": kind}
    meta.update(extra)
    return meta

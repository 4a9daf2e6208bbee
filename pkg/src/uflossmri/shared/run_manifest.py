from __future__ import annotations

import hashlib
import json
from collections import Counter
from datetime import datetime
from pathlib import Path
from typing import Any

from uflossmri.config import config


def utc_now_iso() -> str:
    return datetime.now().astimezone().isoformat(timespec="milliseconds")


def file_sha256(path: str | Path, chunk_size: int = 1 << 20) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(chunk_size), b""):
            digest.update(chunk)
    return digest.hexdigest()


def manifest_path(root: str | Path) -> Path:
    return Path(root) / config.manifest_file_name


def append_artifact_record(
    root: str | Path,
    artifact: str | Path,
    *,
    command: str,
    config_hash: str,
    seed: int,
    extra: dict[str, Any] | None = None,
) -> dict[str, Any]:
    artifact_path = Path(artifact)
    root_path = Path(root)
    try:
        relative = artifact_path.resolve().relative_to(root_path.resolve())
    except ValueError:
        relative = artifact_path
    record: dict[str, Any] = {
        "recorded_at": utc_now_iso(),
        "command": command,
        "path": relative.as_posix(),
        "sha256": file_sha256(artifact_path),
        "bytes": artifact_path.stat().st_size,
        "config_hash": config_hash,
        "seed": seed,
    }
    if extra:
        record.update(extra)

    path = manifest_path(root_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a", encoding="utf-8") as handle:
        handle.write(json.dumps(record, ensure_ascii=False, default=str))
        handle.write("\n")
    return record


def read_artifact_records(root: str | Path) -> list[dict[str, Any]]:
    path = manifest_path(root)
    if not path.exists() or not path.is_file():
        return []
    records: list[dict[str, Any]] = []
    with open(path, "r", encoding="utf-8") as handle:
        for line in handle:
            raw = line.strip()
            if not raw:
                continue
            try:
                payload = json.loads(raw)
            except json.JSONDecodeError:
                continue
            if isinstance(payload, dict):
                records.append(payload)
    return records


def summarize_artifact_records(records: list[dict[str, Any]]) -> dict[str, Any]:
    # Later records for the same path supersede earlier ones
    latest: dict[str, dict[str, Any]] = {}
    for record in records:
        latest[str(record.get("path"))] = record
    commands = Counter(str(record.get("command")) for record in latest.values())
    return {
        "record_count": len(records),
        "artifact_count": len(latest),
        "command_counts": dict(sorted(commands.items())),
        "config_hashes": sorted({str(r.get("config_hash")) for r in latest.values()}),
        "artifacts": [latest[key] for key in sorted(latest)],
    }


def write_manifest_summary(root: str | Path) -> Path:
    root_path = Path(root)
    payload = summarize_artifact_records(read_artifact_records(root_path))
    payload["manifest_path"] = str(manifest_path(root_path))
    payload["generated_at"] = utc_now_iso()
    summary_path = root_path / config.manifest_summary_name
    summary_path.write_text(
        json.dumps(payload, indent=2, ensure_ascii=False, default=str),
        encoding="utf-8",
    )
    return summary_path

from __future__ import annotations

import csv
import traceback
from datetime import datetime
from pathlib import Path
from typing import Any, Callable, Iterable, TypeVar

import pandas as pd
from tqdm import tqdm

from uflossmri.config import config

T = TypeVar("T")
Logger = Callable[..., None]


def flush_rows(
    rows: list[dict],
    out_path: str | Path,
    header_written: bool,
    sep: str = ",",
) -> bool:
    """Append ``rows`` to a CSV file, keeping the column order already on disk."""
    if not rows:
        return header_written
    frame = pd.json_normalize(rows, sep=".")
    path = Path(out_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if header_written and path.exists():
        with open(path, "r", encoding="utf-8", newline="") as handle:
            reader = csv.reader(handle, delimiter=sep)
            existing_header = next(reader, [])
        if existing_header:
            frame = frame.reindex(columns=existing_header)
    frame.to_csv(
        path,
        mode="a" if header_written else "w",
        index=False,
        header=not header_written,
        sep=sep,
        float_format=config.csv_float_format,
    )
    return True


def write_table(rows: list[dict], out_path: str | Path, meta: dict[str, Any] | None = None) -> Path:
    """Write a whole CSV table, stamping ``config_hash``/``seed`` columns from ``meta``."""
    stamped = [dict(row) for row in rows]
    if meta:
        for row in stamped:
            row.setdefault("config_hash", meta.get("config_hash"))
            row.setdefault("seed", meta.get("seed"))
    path = Path(out_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(stamped).to_csv(path, index=False, float_format=config.csv_float_format)
    return path


def write_run_error(run_dir: str | Path, exc: BaseException) -> Path:
    run_path = Path(run_dir)
    run_path.mkdir(parents=True, exist_ok=True)

    stamp = datetime.now().strftime("%Y%m%d_%H%M%S")
    err_path = run_path / f"error_{stamp}.txt"

    msg = "".join(
        traceback.format_exception(type(exc), exc, exc.__traceback__)
    )
    err_path.write_text(msg, encoding="utf-8")
    return err_path


def get_run_logger(run_dir: str | Path, log_name: str | None = None, echo: bool | None = None):
    run_path = Path(run_dir)
    run_path.mkdir(parents=True, exist_ok=True)
    log_path = run_path / (log_name or config.run_log_name)
    echo_enabled = config.echo_log if echo is None else echo

    def log(message: str, exc: BaseException | None = None) -> None:
        stamp = datetime.now().isoformat(timespec="seconds")
        line = f"[{stamp}] {message}"
        if exc is not None:
            detail = "".join(traceback.format_exception(type(exc), exc, exc.__traceback__))
            line = f"{line}\n{detail}"
        with open(log_path, "a", encoding="utf-8") as handle:
            handle.write(line)
            if not line.endswith("\n"):
                handle.write("\n")
        if echo_enabled:
            # tqdm.write keeps open progress bars intact
            tqdm.write(line.rstrip("\n"))

    return log


def null_logger(message: str, exc: BaseException | None = None) -> None:
    return None


def progress(iterable: Iterable[T], **kwargs: Any) -> Iterable[T]:
    kwargs.setdefault("disable", not config.show_progress)
    kwargs.setdefault("leave", False)
    return tqdm(iterable, **kwargs)


from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Literal, Sequence

import numpy as np

from uflossmri.shared.containers import load_container, save_container

Split = Literal["train", "val", "test"]
SPLITS: tuple[Split, ...] = ("train", "val", "test")
NORMALIZATION_PERCENTILE = 95.0


@dataclass(frozen=True, eq=False)
class Slice:
    image: np.ndarray
    contrast_tag: str
    subject_id: str
    slice_id: str = ""

    def __post_init__(self) -> None:
        if self.image.ndim != 2:
            raise ValueError(f"Slice image must be 2D, got shape {self.image.shape}")
        if not np.all(np.isfinite(self.image)):
            raise ValueError(f"Slice {self.slice_id or self.subject_id} contains non-finite values")

    @property
    def shape(self) -> tuple[int, int]:
        return tuple(self.image.shape)  # type: ignore[return-value]


@dataclass(frozen=True, eq=False)
class Dataset:
    slices: tuple[Slice, ...]
    split: Split = "train"
    normalization_scale: dict[str, float] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.slices)

    def __getitem__(self, index: int) -> Slice:
        return self.slices[index]

    @property
    def subjects(self) -> list[str]:
        return list(OrderedDict.fromkeys(item.subject_id for item in self.slices))

    def images(self) -> np.ndarray:
        if not self.slices:
            raise ValueError("Dataset is empty")
        return np.stack([item.image for item in self.slices])


def subject_percentile(slices: Sequence[Slice]) -> float:
    magnitudes = np.concatenate([np.abs(item.image).ravel() for item in slices])
    return float(np.percentile(magnitudes, NORMALIZATION_PERCENTILE, method="linear"))


def normalize_subject(slices: Sequence[Slice]) -> tuple[list[Slice], float]:
    """Divide every slice of one subject by the subject-wide 95th percentile of magnitude."""
    if not slices:
        raise ValueError("normalize_subject needs at least one slice")
    subjects = {item.subject_id for item in slices}
    if len(subjects) != 1:
        raise ValueError(f"normalize_subject expects one subject, got {sorted(subjects)}")
    scale = subject_percentile(slices)
    if not np.isfinite(scale) or scale <= 0.0:
        raise ValueError(
            f"Degenerate subject {next(iter(subjects))}: 95th percentile of magnitude is {scale}"
        )
    normalized = [replace(item, image=item.image / scale) for item in slices]
    return normalized, scale


def group_by_subject(slices: Iterable[Slice]) -> "OrderedDict[str, list[Slice]]":
    groups: OrderedDict[str, list[Slice]] = OrderedDict()
    for item in slices:
        groups.setdefault(item.subject_id, []).append(item)
    return groups


def normalize_dataset(slices: Iterable[Slice], split: Split = "train") -> Dataset:
    out: list[Slice] = []
    scales: dict[str, float] = {}
    for subject_id, members in group_by_subject(slices).items():
        normalized, scale = normalize_subject(members)
        out.extend(normalized)
        scales[subject_id] = scale
    return Dataset(slices=tuple(out), split=split, normalization_scale=scales)


def split_by_subject(
    dataset: Dataset,
    counts: dict[str, int],
    seed: int = 0,
) -> dict[str, Dataset]:
    """Assign whole subjects to splits until each holds ``counts[split]`` slices.

    The last subject of a split may be truncated; it never reappears in another
    split, so splits stay disjoint by subject.
    """
    unknown = set(counts) - set(SPLITS)
    if unknown:
        raise ValueError(f"Unknown split names: {sorted(unknown)}")
    groups = group_by_subject(dataset.slices)
    order = list(groups)
    np.random.default_rng(seed).shuffle(order)

    needed = sum(counts.values())
    if needed > len(dataset):
        raise ValueError(f"Requested {needed} slices but dataset holds {len(dataset)}")

    result: dict[str, Dataset] = {}
    cursor = 0
    for split in SPLITS:
        want = counts.get(split, 0)
        if want <= 0:
            continue
        chosen: list[Slice] = []
        while len(chosen) < want:
            if cursor >= len(order):
                raise ValueError(
                    f"Not enough subjects to fill split '{split}' "
                    f"({len(chosen)}/{want} slices)"
                )
            chosen.extend(groups[order[cursor]])
            cursor += 1
        chosen = chosen[:want]
        scales = {
            subject: dataset.normalization_scale[subject]
            for subject in OrderedDict.fromkeys(item.subject_id for item in chosen)
            if subject in dataset.normalization_scale
        }
        result[split] = Dataset(slices=tuple(chosen), split=split, normalization_scale=scales)
    return result


def save_dataset(dataset: Dataset, path: str | Path, meta: dict[str, Any] | None = None) -> Path:
    if not dataset.slices:
        raise ValueError("Cannot save an empty dataset")
    scale_subjects = list(dataset.normalization_scale)
    arrays = {
        "image": dataset.images().astype(np.complex64),
        "contrast": np.array([item.contrast_tag for item in dataset.slices]),
        "subject": np.array([item.subject_id for item in dataset.slices]),
        "slice_id": np.array([item.slice_id for item in dataset.slices]),
        "scale_subject": np.array(scale_subjects, dtype=str),
        "scale_value": np.array([dataset.normalization_scale[s] for s in scale_subjects], dtype=np.float64),
    }
    payload = dict(meta or {})
    payload["split"] = dataset.split
    return save_container(path, arrays, payload)


def load_dataset(path: str | Path) -> Dataset:
    arrays, meta = load_container(path)
    for key in ("image", "contrast", "subject"):
        if key not in arrays:
            raise ValueError(f"Dataset file {path} is missing key '{key}'")
    images = arrays["image"].astype(np.complex128)
    slice_ids = arrays.get("slice_id", np.array([str(i) for i in range(len(images))]))
    slices = tuple(
        Slice(
            image=images[index],
            contrast_tag=str(arrays["contrast"][index]),
            subject_id=str(arrays["subject"][index]),
            slice_id=str(slice_ids[index]),
        )
        for index in range(images.shape[0])
    )
    scales = {
        str(subject): float(value)
        for subject, value in zip(
            arrays.get("scale_subject", np.array([], dtype=str)),
            arrays.get("scale_value", np.array([], dtype=np.float64)),
        )
    }
    split = str(meta.get("split", "train"))
    if split not in SPLITS:
        raise ValueError(f"Dataset file {path} has unknown split '{split}'")
    return Dataset(slices=slices, split=split, normalization_scale=scales)  # type: ignore[arg-type]


def load_slice_archive(path: str | Path, split: Split = "train") -> tuple[Dataset, np.ndarray | None]:
    """Read a real multi-coil archive into a normalized Dataset.

    Keys: ``kspace`` complex [N, C, H, W]; optional ``maps`` ([N, C, H, W] or
    [C, H, W]), ``subject`` and ``contrast`` string arrays. Coils are combined
    with the maps when present, by root-sum-of-squares otherwise. Returns the
    dataset and the per-slice maps (or None).
    """
    from uflossmri.encode.fft import ifft2c

    arrays, _ = load_container(path)
    if "kspace" not in arrays:
        raise ValueError(f"Archive {path} has no 'kspace' entry")
    kspace = np.asarray(arrays["kspace"])
    if kspace.ndim != 4:
        raise ValueError(f"'kspace' must be [N, C, H, W], got shape {kspace.shape}")
    count = kspace.shape[0]
    coil_images = ifft2c(kspace)

    maps = arrays.get("maps")
    if maps is not None:
        maps = np.broadcast_to(np.asarray(maps), kspace.shape).astype(np.complex128)
        combined = np.sum(np.conj(maps) * coil_images, axis=1)
    else:
        combined = np.sqrt(np.sum(np.abs(coil_images) ** 2, axis=1)).astype(np.complex128)

    subjects = arrays.get("subject", np.array([f"archive-{i:04d}" for i in range(count)]))
    contrasts = arrays.get("contrast", np.array(["PD"] * count))
    raw = [
        Slice(
            image=combined[index],
            contrast_tag=str(contrasts[index]),
            subject_id=str(subjects[index]),
            slice_id=f"{subjects[index]}-{index:04d}",
        )
        for index in range(count)
    ]
    return normalize_dataset(raw, split=split), maps

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Literal


ProfileName = Literal["tiny", "desk", "paper"]


@dataclass(frozen=True)
class ProfileSpec:
    name: str
    description: str
    sections: dict[str, dict[str, Any]] = field(default_factory=dict)


_REGISTERED_PROFILES: dict[str, ProfileSpec] = {
    # Smoke runs and finite-difference checks
    "tiny": ProfileSpec(
        name="tiny",
        description="Seconds-scale smoke profile: 2 residual blocks, d=8, 1 unroll.",
        sections={
            "data": {"train_count": 8, "val_count": 2, "test_count": 2, "shape": (64, 64),
                     "slices_per_subject": 2, "ncoils": 2},
            "mask": {"kind": "random1d", "acceleration": 4.0, "center_fraction": 0.08},
            "featnet": {"stage_blocks": (1, 1), "base_width": 4, "feature_dim": 8, "stem": "compact"},
            "feat_train": {"epochs": 2, "batch": 8, "patches_per_slice": 4, "patch_size": 40,
                           "lr": 1e-3},
            "unet": {"scales": 2, "base_channels": 4},
            "unroll": {"unrolls": 1, "cg_steps": 3, "epochs": 1, "batch_size": 2, "lr": 1e-3},
            "ufloss": {"patch_size": 40, "stride": 8},
            "pics": {"iters": 20, "lam_grid": (1e-3,)},
            "studies": {"noise_seeds": 3, "study_slices": 1, "deblur_steps": 5,
                        "retrieval_k": (1, 2), "mu_grid": (0.0, 1.5),
                        "deblur_line_search": False},
        },
    ),
    # Minutes on a laptop; the profile the acceptance runs pin
    "desk": ProfileSpec(
        name="desk",
        description="Desk scale: 500/50/50 slices of 64x64, 4 coils, R=4 1D mask.",
        sections={
            "data": {"train_count": 500, "val_count": 50, "test_count": 50, "shape": (64, 64),
                     "slices_per_subject": 10, "ncoils": 4},
            "mask": {"kind": "random1d", "acceleration": 4.0, "center_fraction": 0.08},
            "featnet": {"stage_blocks": (1, 1), "base_width": 16, "feature_dim": 64, "stem": "compact"},
            "feat_train": {"epochs": 10, "batch": 16, "patches_per_slice": 80, "patch_size": 40,
                           "lr": 1e-3},
            "unet": {"scales": 2, "base_channels": 16},
            "unroll": {"unrolls": 5, "cg_steps": 6, "epochs": 10, "batch_size": 4, "lr": 1e-3},
            "ufloss": {"patch_size": 40, "stride": 5, "mu": 1.5},
        },
    ),
    # Published sizes; hours on an accelerator
    "paper": ProfileSpec(
        name="paper",
        description="Published sizes: ResNet-18 backbone, d=128, 60x60 patches, 4-scale U-Net.",
        sections={
            "data": {"train_count": 6080, "val_count": 640, "test_count": 320, "shape": (320, 320),
                     "slices_per_subject": 16, "ncoils": 8, "contrast": "mixed"},
            "mask": {"kind": "random1d", "acceleration": 5.0, "center_fraction": 0.08},
            "featnet": {"stage_blocks": (2, 2, 2, 2), "base_width": 64, "feature_dim": 128,
                        "stem": "resnet"},
            "feat_train": {"epochs": 100, "batch": 16, "patches_per_slice": 80, "patch_size": 60,
                           "lr": 1e-4},
            "unet": {"scales": 4, "base_channels": 32},
            "unroll": {"unrolls": 5, "cg_steps": 6, "epochs": 50, "batch_size": 4, "lr": 1e-4},
            "ufloss": {"patch_size": 60, "stride": 5, "mu": 1.5},
        },
    ),
}


def all_registered_profiles() -> tuple[ProfileSpec, ...]:
    return tuple(sorted(_REGISTERED_PROFILES.values(), key=lambda item: item.name))


def resolve_profile(name: str) -> ProfileSpec:
    normalized = str(name or "").strip().lower()
    if not normalized:
        raise ValueError("Profile name is empty.")
    try:
        return _REGISTERED_PROFILES[normalized]
    except KeyError as exc:
        available = ", ".join(sorted(_REGISTERED_PROFILES))
        raise ValueError(
            f"Unknown profile '{name}'. Available profiles: {available}"
        ) from exc


def profile_payload(name: str) -> dict[str, Any]:
    spec = resolve_profile(name)
    payload: dict[str, Any] = {"profile": spec.name}
    for section, values in spec.sections.items():
        payload[section] = dict(values)
    return payload

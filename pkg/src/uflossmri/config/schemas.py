from typing import Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

_SCHEMA_VERSION = 1.0


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class DataSpec(_Section):
    train_count: int = Field(default=500, ge=1)
    val_count: int = Field(default=50, ge=1)
    test_count: int = Field(default=50, ge=1)
    shape: Tuple[int, int] = (64, 64)
    slices_per_subject: int = Field(default=10, ge=1)
    contrast: Literal["synthetic", "mixed"] = "synthetic"
    ncoils: int = Field(default=4, ge=1)
    archive_path: Optional[str] = Field(
        default=None,
        description="Optional real multi-coil archive (keys 'kspace', optional 'maps').",
    )

    @model_validator(mode="after")
    def check_shape(self) -> "DataSpec":
        if min(self.shape) < 64:
            raise ValueError(f"shape must be at least 64x64, got {self.shape}")
        return self


class MaskSpec(_Section):
    kind: Literal["random1d", "poisson"] = "random1d"
    acceleration: float = Field(default=5.0, ge=1.0)
    center_fraction: float = Field(default=0.08, gt=0.0, le=1.0)
    calib: int = Field(default=24, ge=0)


class FeatNetArch(_Section):
    stage_blocks: Tuple[int, ...] = (1, 1)
    base_width: int = Field(default=16, ge=1)
    feature_dim: int = Field(default=64, ge=1)
    stem: Literal["compact", "resnet"] = "compact"

    @model_validator(mode="after")
    def check_stages(self) -> "FeatNetArch":
        if not self.stage_blocks or any(count < 1 for count in self.stage_blocks):
            raise ValueError("stage_blocks must list at least one stage with >= 1 block")
        return self


class FeatTrainConfig(_Section):
    tau: float = Field(default=1.0, gt=0.0)
    batch: int = Field(default=16, ge=1)
    epochs: int = Field(default=100, ge=1)
    lr: float = Field(default=1e-4, gt=0.0)
    patches_per_slice: int = Field(default=80, ge=1)
    patch_size: int = Field(default=40, ge=1)
    bank_momentum: float = Field(
        default=0.0,
        ge=0.0,
        lt=1.0,
        description="0 replaces bank rows outright; >0 blends old and new rows.",
    )


class UNetArch(_Section):
    scales: int = Field(default=2, ge=1)
    base_channels: int = Field(default=16, ge=1)


class UnrollConfig(_Section):
    unrolls: int = Field(default=5, ge=0)
    cg_steps: int = Field(default=6, ge=1)
    epochs: int = Field(default=50, ge=1)
    lr: float = Field(default=1e-4, gt=0.0)
    batch_size: int = Field(default=4, ge=1)
    lam_init: float = Field(default=0.05, gt=0.0)


class UflossConfig(_Section):
    patch_size: int = Field(default=40, ge=1)
    stride: int = Field(default=5, ge=1)
    mu: float = Field(default=1.5, ge=0.0)
    shift_seed: int = 0

    @model_validator(mode="after")
    def check_stride(self) -> "UflossConfig":
        if self.stride > self.patch_size:
            raise ValueError(
                f"stride ({self.stride}) must not exceed patch_size ({self.patch_size})"
            )
        return self


class PicsConfig(_Section):
    lam: float = Field(default=1e-3, gt=0.0)
    iters: int = Field(default=200, ge=1)
    wavelet_levels: int = Field(default=3, ge=1)
    wavelet: str = "db4"
    step: Union[float, Literal["auto"]] = "auto"
    lam_grid: Tuple[float, ...] = (1e-4, 3e-4, 1e-3, 3e-3, 1e-2)

    @model_validator(mode="after")
    def check_step(self) -> "PicsConfig":
        if not isinstance(self.step, str) and self.step <= 0:
            raise ValueError("step must be positive or 'auto'")
        return self


class StudyGrids(_Section):
    noise_levels: Tuple[float, ...] = tuple(round(0.01 * i, 4) for i in range(11))
    blur_levels: Tuple[float, ...] = (1.0, 1.5, 2.0, 3.0, 4.0)
    noise_seeds: int = Field(default=3, ge=3)
    study_slices: int = Field(default=10, ge=1)
    deblur_r0: float = Field(default=4.0, ge=1.0)
    deblur_steps: int = Field(default=200, ge=1)
    deblur_alpha: float = Field(default=20.0, gt=0.0)
    deblur_line_search: bool = True
    retrieval_k: Tuple[int, ...] = (1, 5, 20)
    correlation_stride: int = Field(default=5, ge=1)
    mu_grid: Tuple[float, ...] = (0.0, 0.5, 1.5, 5.0)

    @model_validator(mode="after")
    def check_grids(self) -> "StudyGrids":
        for name in ("noise_levels", "blur_levels"):
            values = getattr(self, name)
            if any(later <= earlier for earlier, later in zip(values, values[1:])):
                raise ValueError(f"{name} must be strictly increasing")
        if self.noise_levels and not (0.0 <= self.noise_levels[0] and self.noise_levels[-1] <= 0.1):
            raise ValueError("noise_levels must lie in [0, 0.1]")
        if self.blur_levels and self.blur_levels[0] < 1.0:
            raise ValueError("blur_levels must be >= 1")
        return self


class ExperimentConfig(_Section):
    schema_version: float = _SCHEMA_VERSION
    profile: str = "desk"
    seed: int = 0
    output_dir: str = "runs"
    data: DataSpec = DataSpec()
    mask: MaskSpec = MaskSpec()
    featnet: FeatNetArch = FeatNetArch()
    feat_train: FeatTrainConfig = FeatTrainConfig()
    unet: UNetArch = UNetArch()
    unroll: UnrollConfig = UnrollConfig()
    ufloss: UflossConfig = UflossConfig()
    pics: PicsConfig = PicsConfig()
    studies: StudyGrids = StudyGrids()

    @model_validator(mode="after")
    def check_patch_sizes(self) -> "ExperimentConfig":
        if self.ufloss.patch_size != self.feat_train.patch_size:
            raise ValueError(
                "ufloss.patch_size must equal feat_train.patch_size "
                f"({self.ufloss.patch_size} != {self.feat_train.patch_size})"
            )
        if self.feat_train.patch_size > min(self.data.shape):
            raise ValueError(
                f"feat_train.patch_size {self.feat_train.patch_size} exceeds image shape {self.data.shape}"
            )
        return self


def _error_path(error: dict) -> str:
    return ".".join(str(part) for part in error.get("loc", ())) or "<root>"


def validate_experiment(payload: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(payload)
    except ValidationError as exc:
        problems = "; ".join(
            f"{_error_path(error)}: {error.get('msg', 'invalid value')}"
            for error in exc.errors()
        )
        raise ValueError(f"Invalid experiment config: {problems}") from exc

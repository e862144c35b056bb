from datetime import datetime, timezone
from typing import Any, Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, Field, field_validator, model_validator

from ..config import config

BackboneKind = Literal["plain-cnn", "sep-cnn"]
OptimizerKind = Literal["sgd", "adam"]

CUTOUT_PRESETS = {"deepfake": 5, "gan": 10}

# (phase, optimizer) -> learning rate used when none is given
DEFAULT_LEARNING_RATES = {
    ("pretrain", "adam"): 1e-3,
    ("finetune", "adam"): 3e-4,
    ("pretrain", "sgd"): 1e-2,
    ("finetune", "sgd"): 1e-2,
}


class CutoutConfig(BaseModel):
    """Fine-tuning-time Cutout: ``alpha`` masks of side ``base_mask * u``, u in 1..beta."""
    base_mask: int = Field(default=4, ge=1, description="Base mask side in pixels")
    alpha: int = Field(default=3, ge=1, description="Number of masks per image")
    beta: int = Field(default=5, ge=1, description="Largest size multiplier")
    enabled: bool = True

    @classmethod
    def preset(cls, name: str, **overrides: Any) -> "CutoutConfig":
        if name not in CUTOUT_PRESETS:
            raise ValueError(f"unknown cutout preset {name!r}; expected one of {sorted(CUTOUT_PRESETS)}")
        return cls(**{"beta": CUTOUT_PRESETS[name], **overrides})


class OptimizerConfig(BaseModel):
    kind: OptimizerKind = "adam"
    learning_rate: float = Field(default=1e-3, gt=0)
    momentum: float = Field(default=0.9, ge=0, lt=1)
    beta1: float = Field(default=0.9, ge=0, lt=1)
    beta2: float = Field(default=0.999, ge=0, lt=1)
    epsilon: float = Field(default=1e-8, gt=0)
    max_grad_norm: Optional[float] = Field(default=None, gt=0, description="Clip the global gradient norm")

    @classmethod
    def defaults(cls, phase: str, kind: str = "adam", **overrides: Any) -> "OptimizerConfig":
        lr = overrides.pop("learning_rate", None)
        if lr is None:
            lr = DEFAULT_LEARNING_RATES[(phase, kind)]
        return cls(kind=kind, learning_rate=lr, **overrides)


class TrainingConfig(BaseModel):
    pretrain_optimizer: OptimizerConfig = Field(default_factory=lambda: OptimizerConfig.defaults("pretrain"))
    finetune_optimizer: OptimizerConfig = Field(default_factory=lambda: OptimizerConfig.defaults("finetune"))
    pretrain_batch_size: int = Field(default=64, ge=2)
    finetune_batch_size: int = Field(default=16, ge=2)
    pretrain_epochs: int = Field(default=200, ge=1)
    finetune_epochs: int = Field(default=200, ge=1)
    patience: int = Field(default=20, ge=1)


class ModelConfig(BaseModel):
    """Every architecture, augmentation and optimizer setting of one run."""
    ftt_repeats: int = Field(default=3, ge=1, description="M: self-attention stages in the FTT")
    mbblock_repeats: int = Field(default=4, ge=1, description="N: stacked MBblockV3 blocks")
    ftt_channels: List[int] = Field(default_factory=lambda: [32, 64, 128])
    mbblock_expansion: int = Field(default=6, ge=1)
    mbblock_channels: int = Field(default=128, ge=1)
    se_ratio: int = Field(default=4, ge=1)
    backbone_kind: BackboneKind = "plain-cnn"
    backbone_channels: List[int] = Field(default_factory=lambda: [32, 32, 64, 64])
    use_channel_attention: bool = True
    input_resolution: int = Field(default=64, ge=1)
    pixel_range: Literal["unit", "signed"] = "unit"
    bn_momentum: float = Field(default=0.99, gt=0, lt=1)
    bn_epsilon: float = Field(default=1e-3, gt=0)
    cutout: CutoutConfig = Field(default_factory=CutoutConfig)
    training: TrainingConfig = Field(default_factory=TrainingConfig)

    @field_validator("ftt_channels", "backbone_channels")
    @classmethod
    def validate_widths(cls, v: List[int]) -> List[int]:
        if not v or any(c < 1 for c in v):
            raise ValueError("channel widths must be positive integers")
        return v

    @field_validator("backbone_channels")
    @classmethod
    def validate_backbone_depth(cls, v: List[int]) -> List[int]:
        if len(v) != 4:
            raise ValueError(f"backbones have exactly 4 blocks, got {len(v)} widths")
        return v

    @model_validator(mode="after")
    def validate_schedule(self) -> "ModelConfig":
        if len(self.ftt_channels) != self.ftt_repeats:
            raise ValueError(
                f"ftt_channels has {len(self.ftt_channels)} entries but ftt_repeats is {self.ftt_repeats}"
            )
        if self.input_resolution % (2 ** self.ftt_repeats):
            raise ValueError(
                f"input_resolution {self.input_resolution} is not divisible by 2^{self.ftt_repeats}"
            )
        # self-attention runs on the stem output and on every stage input
        attended = [self.ftt_channels[0]] + self.ftt_channels[:-1]
        for c in attended:
            if c % 8:
                raise ValueError(f"self-attention needs channels divisible by 8, got {c}")
        return self


class EvalResult(BaseModel):
    accuracy: float = Field(..., ge=0, le=1)
    auroc: float = Field(..., ge=0, le=1)
    n_samples: int = Field(..., ge=1)
    threshold: float = 0.5
    tp: int = Field(..., ge=0)
    fp: int = Field(..., ge=0)
    tn: int = Field(..., ge=0)
    fn: int = Field(..., ge=0)

    @model_validator(mode="after")
    def validate_counts(self) -> "EvalResult":
        if self.tp + self.fp + self.tn + self.fn != self.n_samples:
            raise ValueError("confusion counts do not add up to n_samples")
        if abs(self.accuracy - (self.tp + self.tn) / self.n_samples) > 1e-12:
            raise ValueError("accuracy disagrees with the confusion counts")
        return self

    @property
    def confusion(self) -> Tuple[int, int, int, int]:
        return self.tp, self.fp, self.tn, self.fn


class GradCheckReport(BaseModel):
    op_name: str
    max_relative_error: float
    per_parameter_errors: Dict[str, float]
    passed: bool
    tolerance: float
    skipped_elements: int = 0
    seed: int = 0

    @model_validator(mode="after")
    def validate_verdict(self) -> "GradCheckReport":
        if self.passed != (self.max_relative_error < self.tolerance):
            raise ValueError("passed must equal max_relative_error < tolerance")
        return self


class EpochRecord(BaseModel):
    epoch: int
    train_loss: float
    val_loss: float
    val_acc: float


class OptimizerSnapshot(BaseModel):
    kind: OptimizerKind
    step_count: int = Field(default=0, ge=0)
    learning_rate: float
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8


class CheckpointMetadata(BaseModel):
    kind: Literal["backbone", "model"]
    config: Dict[str, Any]
    tensor_names: List[str]
    frozen_prefixes: List[str] = Field(default_factory=list)
    history: List[EpochRecord] = Field(default_factory=list)
    optimizer: Optional[OptimizerSnapshot] = None
    toolkit_version: str = config.VERSION

    def model_config_record(self) -> ModelConfig:
        return ModelConfig.model_validate(self.config)


class SynthSpec(BaseModel):
    n_per_class: int = Field(..., ge=1)
    seed: int = 0
    amplitude: float = Field(default=0.1, ge=0, description="Checkerboard amplitude added to fake images")
    resolution: int = Field(default=64, ge=4)
    field_size: int = Field(default=4, ge=2, description="Side of the coarse random field before upsampling")


class ParameterReport(BaseModel):
    sections: Dict[str, int]
    trainable: int
    frozen: int

    @property
    def total(self) -> int:
        return self.trainable + self.frozen


class RunManifest(BaseModel):
    command: str
    argv: List[str]
    seed: int
    resolved_config: Dict[str, Any] = Field(default_factory=dict)
    inputs: Dict[str, str] = Field(default_factory=dict)
    outputs: Dict[str, str] = Field(default_factory=dict)
    settings: Dict[str, Any] = Field(default_factory=dict)
    toolkit_version: str = config.VERSION
    created_at: datetime = Field(
        default_factory=lambda: datetime.now(timezone.utc),
        description="Timestamp of the run"
    )

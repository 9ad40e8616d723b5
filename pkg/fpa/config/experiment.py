"""
Experiment Configuration - The JSON file that drives every CLI command

One file fully determines a run: dataset, architecture, training recipe per
augmentation arm and the evaluation protocol. Every seed is explicit.
"""

import hashlib
import json
from pathlib import Path
from typing import List, Optional, Sequence

from exceptions import ConfigError
from models import (
    DEFAULT_ESTIMATORS,
    ESTIMATORS,
    Arm,
    EstimatorConfig,
    LayerSpec,
    NormalizationMode,
    TrainConfig,
    desk_cnn_layers,
)
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator


class DatasetSection(BaseModel):
    """
    Attributes:
        source: "synthetic" generator or an "idx" manifest
        manifest: Path of the IDX manifest JSON (idx source only)
        normalization: range or zscore
        seed: Generator seed (synthetic source only)
        num_train: Synthetic training samples
        num_test: Synthetic test samples
        val_samples: Training samples held out for per-epoch validation
    """

    source: str = Field(default="synthetic", pattern="^(synthetic|idx)$")
    manifest: Optional[Path] = None
    normalization: NormalizationMode = NormalizationMode.RANGE
    seed: int = Field(default=0, ge=0)
    num_train: int = Field(default=6000, ge=1)
    num_test: int = Field(default=1000, ge=1)
    val_samples: int = Field(default=500, ge=0)

    @model_validator(mode="after")
    def _manifest_for_idx(self):
        if self.source == "idx" and self.manifest is None:
            raise ValueError("idx source needs a 'manifest' path")
        return self


class ModelSection(BaseModel):
    layers: List[LayerSpec] = Field(default_factory=desk_cnn_layers)


class TrainSection(BaseModel):
    recipe: TrainConfig = Field(default_factory=TrainConfig)
    arms: List[Arm] = Field(default_factory=lambda: [Arm.NONE, Arm.FPA, Arm.RECTANGLE])

    def config_for(self, arm: Arm) -> TrainConfig:
        return self.recipe.model_copy(update={"augmentation": arm})


class EvalSection(BaseModel):
    """
    Attributes:
        estimators: Estimator ids (see models.ESTIMATORS)
        estimator: Integrated gradients / SmoothGrad parameters
        fraction_steps: Grid intervals; 50 gives 0%, 2%, ..., 100%
        num_samples: Test samples evaluated
        bootstrap_resamples: Resamples of the confidence interval
        seed: Master seed of saliency noise, random maps and bootstrap
        robustness_fraction: Masking fraction of the random-order robustness check
    """

    estimators: List[str] = Field(default_factory=lambda: list(DEFAULT_ESTIMATORS))
    estimator: EstimatorConfig = Field(default_factory=EstimatorConfig)
    fraction_steps: int = Field(default=50, ge=1)
    num_samples: int = Field(default=500, ge=1)
    bootstrap_resamples: int = Field(default=1000, ge=1)
    seed: int = Field(default=0, ge=0)
    robustness_fraction: float = Field(default=0.3, ge=0, le=1)

    @field_validator("estimators")
    @classmethod
    def _known_estimators(cls, value: List[str]) -> List[str]:
        unknown = [name for name in value if name not in ESTIMATORS]
        if unknown:
            raise ValueError(
                f"unknown estimator id(s) {unknown}; choose from {sorted(ESTIMATORS)}"
            )
        if len(set(value)) != len(value):
            raise ValueError("estimator ids must be unique")
        return value


class ExperimentConfig(BaseModel):
    name: str = "fpa-desk"
    dataset: DatasetSection = Field(default_factory=DatasetSection)
    model: ModelSection = Field(default_factory=ModelSection)
    train: TrainSection = Field(default_factory=TrainSection)
    eval: EvalSection = Field(default_factory=EvalSection)

    def with_overrides(
        self, seed: Optional[int] = None, samples: Optional[int] = None
    ) -> "ExperimentConfig":
        """Apply CLI overrides; --seed replaces the training and evaluation seeds."""
        config = self
        if seed is not None:
            recipe = config.train.recipe.model_copy(update={"seed": seed})
            config = config.model_copy(
                update={
                    "train": config.train.model_copy(update={"recipe": recipe}),
                    "eval": config.eval.model_copy(update={"seed": seed}),
                }
            )
        if samples is not None:
            if samples < 1:
                raise ConfigError(f"--samples must be >= 1, got {samples}")
            config = config.model_copy(
                update={"eval": config.eval.model_copy(update={"num_samples": samples})}
            )
        return config


TRAINING_SECTIONS = ("dataset", "model", "train")


def config_hash(config: ExperimentConfig, sections: Optional[Sequence[str]] = None) -> str:
    """
    SHA-256 of the canonical JSON dump, optionally restricted to some sections.

    Checkpoints carry the hash of TRAINING_SECTIONS so evaluation settings can
    change without invalidating trained models.
    """
    document = config.model_dump(mode="json")
    if sections is not None:
        document = {name: document[name] for name in sections}
    canonical = json.dumps(document, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def _format_validation_error(error: ValidationError) -> str:
    lines = []
    for item in error.errors():
        path = ".".join(str(part) for part in item["loc"]) or "<root>"
        lines.append(f"  {path}: {item['msg']}")
    return "\n".join(lines)


def parse_experiment_config(text: str, source: str = "<config>") -> ExperimentConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(
            f"{source}: invalid JSON at line {e.lineno}, column {e.colno}: {e.msg}"
        ) from e
    try:
        return ExperimentConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(
            f"{source}: invalid configuration\n{_format_validation_error(e)}"
        ) from e


def load_experiment_config(path) -> ExperimentConfig:
    """
    Read and validate an experiment file.

    Relative manifest paths are resolved against the config file's directory.

    Raises:
        ConfigError: unreadable file, JSON syntax error (with line/column), schema
            violation (with dotted field paths) or a missing referenced file
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e

    config = parse_experiment_config(text, source=str(path))

    manifest = config.dataset.manifest
    if manifest is not None:
        if not manifest.is_absolute():
            manifest = (path.parent / manifest).resolve()
        if not manifest.exists():
            raise ConfigError(f"{path}: dataset.manifest not found: {manifest}")
        config = config.model_copy(
            update={"dataset": config.dataset.model_copy(update={"manifest": manifest})}
        )
    return config

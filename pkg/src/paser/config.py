"""Experiment configuration: a validated pydantic tree loaded from flat dotted TOML keys.

Example::

    seed = 7
    rl.lambda = 0.5        # cost weight
    suite.base_channels = [6, 24, 64]
"""

import hashlib
import json
import logging
from collections.abc import Collection, Mapping
from pathlib import Path
from typing import Any, Literal

import tomlkit
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from tomlkit.exceptions import ParseError

from .errors import ConfigError
from .models import UNetSpec

logger = logging.getLogger(__name__)

Generator = Literal["phase-texture", "glyphs", "glyph-mix", "idx"]
PolicyStage = Literal["auto", "train-rl", "finetune", "finetune-tvd"]


class Section(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class DataConfig(Section):
    generator: Generator = "phase-texture"
    num_samples: int = Field(240, ge=1)
    image_size: int = Field(64, ge=4)
    class_balance: list[float] = Field(default_factory=lambda: [0.2, 0.2, 0.6])
    noise_type: str = "gauss_r1"
    idx_path: str | None = None
    ratios: list[float] = Field(default_factory=lambda: [0.25, 0.25, 0.25, 0.125, 0.125])
    patches: int = Field(16, ge=1)

    @property
    def num_classes(self) -> int:
        return len(self.class_balance) if self.generator == "phase-texture" else 2

    @property
    def canvas(self) -> int:
        return self.image_size if self.generator == "phase-texture" else 32


class SuiteConfig(Section):
    """One entry per model f_0..f_m; only f_0 carries dropout."""

    depths: list[int] = Field(default_factory=lambda: [2, 2, 2])
    base_channels: list[int] = Field(default_factory=lambda: [6, 24, 64])
    dropout: float = Field(0.1, gt=0.0, lt=1.0)
    policy_width: int = Field(24, ge=1)

    @model_validator(mode="after")
    def _check_lengths(self) -> "SuiteConfig":
        if len(self.depths) != len(self.base_channels) or len(self.depths) < 2:
            raise ValueError("suite.depths and suite.base_channels need equal length >= 2")
        return self

    def specs(self, in_channels: int, num_classes: int) -> list[UNetSpec]:
        return [
            UNetSpec(
                depth=depth,
                base_channels=base,
                in_channels=in_channels,
                num_classes=num_classes,
                dropout_rate=self.dropout if i == 0 else 0.0,
            )
            for i, (depth, base) in enumerate(zip(self.depths, self.base_channels, strict=True))
        ]


class PretrainConfig(Section):
    epochs: int = Field(50, ge=0)
    lr: float = Field(1e-3, gt=0.0)
    batch_size: int = Field(32, ge=1)
    beta: float = Field(0.01, ge=0.0)
    variant: Literal["clean", "noisy"] = "clean"
    salt_pepper_rate: float = Field(0.01, ge=0.0, le=1.0)


class RlConfig(Section):
    lam: float = Field(0.5, ge=0.0, le=1.0, alias="lambda")
    epochs: int = Field(50, ge=0)
    lr: float = Field(1e-3, gt=0.0)
    batch_size: int = Field(32, ge=1)
    samples: int = Field(5, ge=2)
    alpha_start: float = Field(0.7, ge=0.0, le=1.0)
    alpha_end: float = Field(0.95, ge=0.0, le=1.0)
    baseline: bool = False
    baseline_momentum: float = Field(0.9, ge=0.0, lt=1.0)
    plateau_window: int = Field(5, ge=1)
    plateau_tolerance: float = Field(1e-3, ge=0.0)
    early_stop: bool = False


class FinetuneConfig(Section):
    epochs: int = Field(50, ge=0)
    lr: float = Field(1e-4, gt=0.0)
    policy_lr: float = Field(1e-3, gt=0.0)
    batch_size: int = Field(32, ge=1)
    alpha_start: float = Field(0.95, ge=0.0, le=1.0)
    alpha_end: float = Field(1.0, ge=0.0, le=1.0)


class TvdConfig(Section):
    threshold: float = Field(0.05, ge=0.0, le=1.0)
    lam_start: float = Field(0.0, ge=0.0, le=1.0)
    lam_step: float = Field(0.05, ge=0.0, le=1.0)
    max_epochs: int = Field(50, ge=1)


class IdkConfig(Section):
    lam_idk: float = Field(0.01, ge=0.0)
    grid_points: int = Field(5, ge=1)
    tolerance: float = Field(1e-3, gt=0.0)
    target_iou: float | None = Field(None, ge=0.0, le=1.0)


class EvalConfig(Section):
    samples: int | None = Field(None, ge=2)
    batch_size: int = Field(32, ge=1)
    noisy_models: bool = False
    salt_pepper_rate: float = Field(0.0, ge=0.0, le=1.0)
    policy_stage: PolicyStage = "auto"


class ExperimentConfig(Section):
    seed: int = Field(0, ge=0)
    out_dir: str = "runs/default"
    data: DataConfig = Field(default_factory=DataConfig)
    suite: SuiteConfig = Field(default_factory=SuiteConfig)
    pretrain: PretrainConfig = Field(default_factory=PretrainConfig)
    rl: RlConfig = Field(default_factory=RlConfig)
    finetune: FinetuneConfig = Field(default_factory=FinetuneConfig)
    tvd: TvdConfig = Field(default_factory=TvdConfig)
    idk: IdkConfig = Field(default_factory=IdkConfig)
    eval: EvalConfig = Field(default_factory=EvalConfig)

    @property
    def eval_samples(self) -> int:
        return self.eval.samples if self.eval.samples is not None else self.rl.samples

    def config_hash(self, include: Mapping[str, Any] | Collection[str] | None = None) -> str:
        """SHA-256 of the canonical JSON form.

        ``include`` selects fields the way pydantic's ``model_dump(include=...)`` does; by
        default everything except the output directory is covered.
        """
        if include is None:
            dumped = self.model_dump(mode="json", by_alias=True, exclude={"out_dir"})
        else:
            if not isinstance(include, Mapping):
                include = dict.fromkeys(include, True)
            dumped = self.model_dump(mode="json", by_alias=True, include=include)
        canonical = json.dumps(dumped, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def parse_value(raw: str) -> Any:
    """Interpret an override value as TOML (``0.5``, ``true``, ``[1, 2]``) or a bare string."""
    try:
        return tomlkit.parse(f"value = {raw}").unwrap()["value"]
    except ParseError:
        return raw


def apply_override(tree: dict[str, Any], key: str, value: Any) -> None:
    *parents, leaf = key.split(".")
    node = tree
    for part in parents:
        child = node.setdefault(part, {})
        if not isinstance(child, dict):
            raise ConfigError(f"Cannot override '{key}': '{part}' is not a section")
        node = child
    node[leaf] = value


def load_config(
    path: str | Path | None = None,
    overrides: list[str] | None = None,
    seed: int | None = None,
    out_dir: str | None = None,
) -> ExperimentConfig:
    """Read a TOML config, apply ``key=value`` overrides and validate.

    Raises:
        ConfigError: On unreadable TOML, malformed overrides or validation failures
    """
    tree: dict[str, Any] = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as f:
                tree = tomlkit.parse(f.read()).unwrap()
        except (OSError, ParseError) as e:
            raise ConfigError(f"Could not read config {path}: {e}") from e

    for item in overrides or []:
        key, sep, raw = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"Override '{item}' is not of the form key=value")
        apply_override(tree, key.strip(), parse_value(raw.strip()))
    if seed is not None:
        tree["seed"] = seed
    if out_dir is not None:
        tree["out_dir"] = out_dir

    try:
        config = ExperimentConfig.model_validate(tree)
    except ValidationError as e:
        raise ConfigError(f"Invalid configuration: {e}") from e
    logger.debug(f"Loaded config with hash {config.config_hash()[:12]}")
    return config

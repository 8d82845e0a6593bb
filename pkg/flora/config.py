"""
Run configuration
=================

One JSON document with a section per stage. Shipped defaults are the
published training settings (two-layer MLP VAEs, 1,000 + 200 iterations,
batch 64, AdamW lr 1e-4 / wd 0.01, λ_Align = λ_Flow = 0.1, γ = 0.75).

Precedence: defaults < config file < `--set section.key=value` < FLORA_SEED.
"""

import json
import logging
from os import getenv
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Sequence, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from flora.errors import ConfigError, MissingInputError

logger = logging.getLogger("flora")


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class PathsConfig(_Section):
    skeleton_pack: str = "data/skeleton.fpack"
    semantic_pack: str = "data/semantic.fpack"
    split: str = "data/split.json"
    checkpoint_dir: str = "runs/checkpoints"
    report_dir: str = "runs/reports"


class SyntheticConfig(_Section):
    """Desk-scale stand-in for pretrained-encoder features"""
    n_classes: int = Field(20, ge=2)
    n_unseen: int = Field(5, ge=1)
    samples_per_class: int = Field(50, ge=1)
    d_s: int = Field(64, ge=1)
    d_a: int = Field(48, ge=1)
    M_a: int = Field(4, ge=1)
    cluster_spread: float = 0.3
    semantic_skeleton_coupling: float = Field(0.8, ge=0.0, le=1.0)
    intrinsic_dim: int = Field(8, ge=1)
    token_spread: float = Field(0.25, ge=0.0)
    seed: int = 7

    @model_validator(mode="after")
    def _check(self):
        if self.n_unseen >= self.n_classes:
            raise ValueError(f"n_unseen ({self.n_unseen}) must be < n_classes ({self.n_classes})")
        if self.cluster_spread <= 0:
            raise ValueError("cluster_spread must be > 0")
        return self


class DataConfig(_Section):
    holdout_fraction: float = Field(0.2, ge=0.0, lt=1.0)
    train_fraction: float = Field(1.0, gt=0.0, le=1.0)


class AttuneConfig(_Section):
    k: int = Field(5, ge=0)
    tau: float = 0.5
    pooling: Literal["mean", "max"] = "mean"
    tokens: Optional[int] = Field(None, ge=1)


class AlignConfig(_Section):
    latent_dim: int = Field(64, ge=1)
    hidden: int = Field(256, ge=1)
    lambda_align: float = Field(0.1, ge=0.0)
    beta: float = Field(1.0, ge=0.0)
    reg_mode: Literal["geo", "kl", "none"] = "geo"
    iterations: int = Field(1000, ge=0)
    batch: int = Field(64, ge=1)
    lr: float = Field(1e-4, gt=0.0)
    weight_decay: float = Field(0.01, ge=0.0)
    log_every: int = Field(100, ge=1)


class FlowTrainConfig(_Section):
    iterations: int = Field(200, ge=0)
    batch: int = Field(64, ge=1)
    lambda_flow: float = Field(0.1, ge=0.0)
    timestep_sampler: Literal["logit_normal", "uniform"] = "logit_normal"
    sigma_min: float = Field(1e-5, gt=0.0)
    backbone: Literal["modulated", "plain_mlp"] = "modulated"
    token_attention: bool = False
    direction: Literal["semantic_to_skeleton", "skeleton_to_semantic"] = "semantic_to_skeleton"
    source: Literal["latent", "noisy_latent", "noise"] = "latent"
    source_noise: float = Field(1.0, gt=0.0)
    conditioned: bool = False
    width: int = Field(256, ge=1)
    embed_width: int = Field(128, ge=1)
    frequencies: int = Field(64, ge=1)
    lr: float = Field(1e-4, gt=0.0)
    weight_decay: float = Field(0.01, ge=0.0)
    log_every: int = Field(50, ge=1)
    lr_schedule: Literal["constant", "cosine"] = "constant"

    @model_validator(mode="after")
    def _noise_source_needs_condition(self):
        if self.source == "noise" and not self.conditioned:
            raise ValueError("source='noise' carries no class information; set conditioned=true")
        if self.source == "noise" and self.direction != "semantic_to_skeleton":
            raise ValueError("source='noise' replaces the semantic side; direction must be semantic_to_skeleton")
        return self


class PredictConfig(_Section):
    t: float = Field(0.1, ge=0.0, lt=1.0)
    gamma: float = Field(0.75, gt=0.0)
    alpha: float = 1e9
    n_synth: int = Field(200, ge=1)
    multi_t: Optional[List[float]] = None
    linear_iterations: int = Field(500, ge=1)
    linear_lr: float = Field(1e-2, gt=0.0)
    chunk_size: int = Field(256, ge=1)

    @field_validator("alpha")
    @classmethod
    def _alpha_dominates(cls, value: float) -> float:
        if value <= 1e6:
            raise ValueError(f"alpha must be > 1e6 to dominate any velocity error, got {value}")
        return value

    @field_validator("multi_t")
    @classmethod
    def _multi_t_range(cls, value):
        if value is not None:
            if not value:
                raise ValueError("multi_t must be null or a non-empty list")
            if any(not 0.0 <= t < 1.0 for t in value):
                raise ValueError("every multi_t entry must lie in [0, 1)")
        return value


class SweepConfig(_Section):
    output: str = "runs/reports/sweep.csv"


class RunConfig(_Section):
    paths: PathsConfig = Field(default_factory=PathsConfig)
    synthetic: SyntheticConfig = Field(default_factory=SyntheticConfig)
    data: DataConfig = Field(default_factory=DataConfig)
    attune: AttuneConfig = Field(default_factory=AttuneConfig)
    align: AlignConfig = Field(default_factory=AlignConfig)
    flow: FlowTrainConfig = Field(default_factory=FlowTrainConfig)
    predict: PredictConfig = Field(default_factory=PredictConfig)
    sweep: SweepConfig = Field(default_factory=SweepConfig)
    seed: int = 7

    @classmethod
    def load(cls, path: Optional[Union[str, Path]] = None, overrides: Sequence[str] = ()) -> "RunConfig":
        """
        Build a validated config

        Args:
            path: JSON config file (None → shipped defaults)
            overrides: "section.key=value" strings; value parsed as JSON,
                falling back to the raw string

        Raises:
            ConfigError: unreadable file, bad override, failed validation
        """
        document: Dict[str, Any] = {}
        if path is not None:
            path = Path(path)
            if not path.exists():
                raise MissingInputError(f"config file not found: {path}")
            try:
                document = json.loads(path.read_text(encoding="utf-8"))
            except json.JSONDecodeError as e:
                raise ConfigError(f"{path}: not valid JSON ({e})")

        for override in overrides:
            apply_override(document, override)

        seed_env = getenv("FLORA_SEED")
        if seed_env is not None:
            try:
                document["seed"] = int(seed_env)
            except ValueError:
                raise ConfigError(f"FLORA_SEED must be an integer, got '{seed_env}'")
            logger.info(f"🎲 FLORA_SEED override: seed={document['seed']}")

        return cls.from_dict(document)

    @classmethod
    def from_dict(cls, document: Dict[str, Any]) -> "RunConfig":
        try:
            return cls.model_validate(document)
        except ValidationError as e:
            raise ConfigError(f"invalid configuration: {e}")

    def with_overrides(self, overrides: Sequence[str]) -> "RunConfig":
        document = self.echo()
        for override in overrides:
            apply_override(document, override)
        return RunConfig.from_dict(document)

    def echo(self) -> Dict[str, Any]:
        return self.model_dump(mode="json")


def apply_override(document: Dict[str, Any], override: str) -> None:
    """Set document[a][b] = value for "a.b=value" in place"""
    if "=" not in override:
        raise ConfigError(f"override must look like section.key=value, got '{override}'")
    key, raw = override.split("=", 1)
    parts = [p for p in key.strip().split(".") if p]
    if not parts:
        raise ConfigError(f"empty key in override '{override}'")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node = document
    for part in parts[:-1]:
        child = node.setdefault(part, {})
        if not isinstance(child, dict):
            raise ConfigError(f"'{part}' in '{key}' is not a section")
        node = child
    node[parts[-1]] = value

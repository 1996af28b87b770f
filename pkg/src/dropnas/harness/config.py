"""Run configuration: a versioned JSON document validated with pydantic."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from ..dropout import DropoutKind, DropoutParams
from ..errors import ConfigError
from ..evosearch import AimWeights, EaParams
from ..hwmodel import LatencyCalib
from ..nn import LayerSpec, NetworkSpec
from ..supernet import Choice, SlotSpec, SupernetSpec, TrainHyper

SCHEMA_VERSION = 1


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class LayerCfg(_Strict):
    kind: Literal["conv2d", "linear", "relu", "maxpool2x2", "flatten", "dropout_slot"]
    out_channels: int = 0
    kernel_size: int = 3
    stride: int = 1
    padding: int = 0
    out_features: int = 0
    slot_index: Optional[int] = None


class BackboneCfg(_Strict):
    input_shape: list[int]
    layers: list[LayerCfg]


class ChoiceCfg(_Strict):
    kind: DropoutKind
    rate: float = Field(0.25, ge=0.0, lt=1.0)
    block_size: int = 3
    mask_count: int = 4


class SlotCfg(_Strict):
    slot_index: int = Field(ge=0)
    choices: list[ChoiceCfg] = Field(min_length=1)

    @field_validator("choices")
    @classmethod
    def _distinct_kinds(cls, v):
        kinds = [c.kind for c in v]
        if len(set(kinds)) != len(kinds):
            raise ValueError("each dropout kind may appear at most once per slot")
        return v


class TrainCfg(_Strict):
    epochs: int = Field(3, ge=0)
    lr: float = Field(0.01, gt=0)
    momentum: float = Field(0.9, ge=0, lt=1)
    batch_size: int = Field(32, ge=1)


class SearchCfg(_Strict):
    population_size: int = Field(16, ge=1)
    generations: int = Field(10, ge=1)
    parent_count: int = Field(8, ge=1)
    mutation_prob: float = Field(0.2, ge=0, le=1)
    mutation_fraction: float = Field(0.5, ge=0, le=1)


class AimCfg(_Strict):
    eta: float = Field(1.0, ge=0)
    mu: float = Field(1.0, ge=0)
    beta: float = Field(1.0, ge=0)
    lam: float = Field(0.1, ge=0, alias="lambda")

    model_config = ConfigDict(extra="forbid", frozen=True, populate_by_name=True)


class EvalCfg(_Strict):
    mc_samples: int = Field(3, ge=1)
    ece_bins: int = Field(10, ge=1)
    ood_size: int = Field(1000, ge=1)
    val_fraction: float = Field(0.1, gt=0, lt=1)
    enumerate_cap: int = Field(4096, ge=1)


class SeedsCfg(_Strict):
    train: int
    search: int
    ood: int
    bank: int
    split: int
    eval: int


class LatencyCfg(_Strict):
    masksembles: float = Field(1.0, gt=0)
    bernoulli: float = Field(2.0, gt=0)
    random: float = Field(3.0, gt=0)
    block: float = Field(3.0, gt=0)
    base: float = Field(1.0, gt=0)
    clock_mhz: float = Field(200.0, gt=0)
    shape_grid: Optional[list[list[int]]] = None


class PathsCfg(_Strict):
    train_images: str
    train_labels: str
    output_dir: str = "runs/default"


class RunConfig(_Strict):
    schema_version: Literal[1]
    backbone: BackboneCfg
    slots: list[SlotCfg]
    train: TrainCfg = TrainCfg()
    search: SearchCfg = SearchCfg()
    aim: AimCfg = AimCfg()
    evaluation: EvalCfg = EvalCfg()
    seeds: SeedsCfg
    latency: LatencyCfg = LatencyCfg()
    paths: PathsCfg
    max_images: Optional[int] = Field(None, ge=1)

    # set by load_config; resolves relative paths
    base_dir: Optional[str] = Field(None, exclude=True)

    def resolve(self, p: str) -> Path:
        path = Path(p)
        if not path.is_absolute() and self.base_dir:
            path = Path(self.base_dir) / path
        return path

    @property
    def output_dir(self) -> Path:
        return self.resolve(self.paths.output_dir)

    def supernet(self) -> SupernetSpec:
        layers = tuple(LayerSpec(**l.model_dump()) for l in self.backbone.layers)
        backbone = NetworkSpec(layers, tuple(self.backbone.input_shape))
        slots = []
        for s in self.slots:
            allowed = tuple(
                Choice(c.kind, DropoutParams(c.rate, c.block_size, c.mask_count, self.seeds.bank))
                for c in s.choices
            )
            slots.append(SlotSpec(s.slot_index, allowed))
        return SupernetSpec(backbone, tuple(slots))

    def train_hyper(self) -> TrainHyper:
        return TrainHyper(**self.train.model_dump())

    def ea_params(self) -> EaParams:
        return EaParams(**self.search.model_dump(), seed=self.seeds.search)

    def aim_weights(self) -> AimWeights:
        return AimWeights(self.aim.eta, self.aim.mu, self.aim.beta, self.aim.lam)

    def latency_calib(self) -> LatencyCalib:
        d = self.latency.model_dump()
        d.pop("shape_grid")
        return LatencyCalib(**d)


def load_config(path, output_dir: str | None = None) -> RunConfig:
    path = Path(path)
    raw = json.loads(path.read_text())
    try:
        cfg = RunConfig.model_validate({**raw, "base_dir": str(path.parent.resolve())})
    except ValidationError as exc:
        raise ConfigError(f"invalid config {path}:\n{exc}") from exc
    if output_dir is not None:
        cfg = cfg.model_copy(
            update={"paths": cfg.paths.model_copy(update={"output_dir": str(Path(output_dir).resolve())})}
        )
    try:
        cfg.supernet()
        cfg.ea_params().validate()
        cfg.aim_weights()
    except (ConfigError, ValueError) as exc:
        raise ConfigError(f"invalid config {path}: {exc}") from exc
    return cfg

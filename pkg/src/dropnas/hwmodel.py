"""Hardware latency modelling for dropout layers.

An analytic cycle model stands in for synthesis reports and provides the
ground truth; a Gaussian-process surrogate fitted on a grid of layer shapes
predicts per-layer latency inside the search loop.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .dropout import DropoutKind, DropoutParams, block_seed_rate
from .gp import GpModel, HyperGrid, gp_fit
from .quant import quantize_q7_8  # noqa: F401  (re-exported)
from .supernet import SupernetSpec

KIND_ORDER = (
    DropoutKind.BERNOULLI,
    DropoutKind.RANDOM_CHANNEL,
    DropoutKind.BLOCK,
    DropoutKind.MASKSEMBLES,
)
CSV_HEADER = ["elements", "channels", "spatial", "kind", "latency_ms"]


@dataclass(frozen=True)
class HwConfig:
    """One dropout layer as seen by the hardware model."""

    elements: int
    channels: int
    spatial: int
    kind: DropoutKind
    rate: float = 0.25
    block_size: int = 3

    @classmethod
    def from_shape(cls, shape: Sequence[int], kind, params: DropoutParams | None = None) -> "HwConfig":
        params = params or DropoutParams()
        shape = tuple(int(d) for d in shape)
        spatial = min(shape[1:]) if len(shape) == 3 else 1
        return cls(int(np.prod(shape)), shape[0], spatial, DropoutKind(kind), params.rate,
                   params.block_size)

    def features(self) -> np.ndarray:
        onehot = [1.0 if self.kind is k else 0.0 for k in KIND_ORDER]
        return np.array([self.elements, self.channels, self.spatial, *onehot], dtype=np.float64)


@dataclass(frozen=True)
class LatencyCalib:
    """Cycle coefficients of the analytic model."""

    masksembles: float = 1.0
    bernoulli: float = 2.0
    random: float = 3.0
    block: float = 3.0
    base: float = 1.0
    clock_mhz: float = 200.0

    def __post_init__(self):
        if min(self.masksembles, self.bernoulli, self.random, self.block, self.base, self.clock_mhz) <= 0:
            raise ValueError("latency coefficients and clock must be positive")


def dropout_cycles(cfg: HwConfig, calib: LatencyCalib = LatencyCalib()) -> float:
    kind = cfg.kind
    if kind is DropoutKind.MASKSEMBLES:
        # one stored mask word per channel
        return calib.masksembles * cfg.channels
    if kind is DropoutKind.BERNOULLI:
        # RNG draw + compare per element
        return calib.bernoulli * cfg.elements
    if kind is DropoutKind.RANDOM_CHANNEL:
        # per-channel RNG, then a compare/gate for every element of the channel
        per_channel = cfg.elements / cfg.channels
        return calib.random * cfg.channels * (1.0 + per_channel)
    if kind is DropoutKind.BLOCK:
        gamma = block_seed_rate(cfg.rate, cfg.block_size, cfg.spatial) if cfg.spatial > 1 else 0.0
        seeds = gamma * cfg.elements
        return calib.block * (seeds * cfg.block_size**2 + cfg.elements)
    raise AssertionError(kind)


def analytic_latency(cfg: HwConfig, calib: LatencyCalib = LatencyCalib()) -> float:
    """Latency in ms of one dropout layer: streaming cycles plus the kind's overhead."""
    cycles = calib.base * cfg.elements + dropout_cycles(cfg, calib)
    return cycles / (calib.clock_mhz * 1e3)


def backbone_cycles(spec: SupernetSpec) -> int:
    """Multiply-accumulate count of the backbone, one MAC per cycle."""
    net = spec.backbone
    total = 0
    for i, layer in enumerate(net.layers):
        out = net.shapes[i]
        if layer.kind == "conv2d":
            total += int(np.prod(out)) * net.in_shape(i)[0] * layer.kernel_size**2
        elif layer.kind == "linear":
            total += out[0] * net.in_shape(i)[0]
    return total


@dataclass
class LatencyDataset:
    configs: list[HwConfig]
    latency_ms: np.ndarray
    feature_mean: np.ndarray = field(init=False)
    feature_std: np.ndarray = field(init=False)

    def __post_init__(self):
        self.latency_ms = np.asarray(self.latency_ms, dtype=np.float64)
        if len(self.configs) != len(self.latency_ms):
            raise ValueError("one latency per configuration required")
        if np.any(self.latency_ms <= 0):
            raise ValueError("latencies must be positive")
        X = self.features()
        self.feature_mean = X.mean(axis=0) if len(X) else np.zeros(7)
        sd = X.std(axis=0) if len(X) else np.ones(7)
        self.feature_std = np.where(sd > 0, sd, 1.0)

    def __len__(self):
        return len(self.configs)

    def features(self) -> np.ndarray:
        return np.array([c.features() for c in self.configs]).reshape(len(self.configs), 7)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(CSV_HEADER)
            for c, y in zip(self.configs, self.latency_ms):
                w.writerow([c.elements, c.channels, c.spatial, c.kind.value, repr(float(y))])

    @classmethod
    def from_csv(cls, path) -> "LatencyDataset":
        configs, ys = [], []
        with open(path, newline="") as f:
            reader = csv.DictReader(f)
            if reader.fieldnames != CSV_HEADER:
                raise ValueError(f"expected header {CSV_HEADER}, got {reader.fieldnames}")
            for row in reader:
                configs.append(HwConfig(int(row["elements"]), int(row["channels"]),
                                        int(row["spatial"]), DropoutKind(row["kind"])))
                ys.append(float(row["latency_ms"]))
        return cls(configs, np.array(ys))


def kind_params(spec: SupernetSpec | None) -> dict[DropoutKind, DropoutParams]:
    """Per-kind dropout parameters: the first occurrence in ``spec``, else defaults."""
    out = {k: DropoutParams() for k in KIND_ORDER}
    if spec is not None:
        seen = set()
        for s in spec.slots:
            for c in s.allowed:
                if c.kind not in seen:
                    out[c.kind] = c.params
                    seen.add(c.kind)
    return out


def covering_grid(shapes: Iterable[Sequence[int]], min_spatial: int = 3) -> list[tuple[int, ...]]:
    """Slot shapes plus neighbours at half and double channel count and spatial size."""
    grid = []
    for shape in shapes:
        shape = tuple(int(d) for d in shape)
        if len(shape) == 3:
            c, h, w = shape
            for cm in (0.5, 1, 2):
                for sm in (0.5, 1, 2):
                    cc = max(1, int(round(c * cm)))
                    hh, ww = max(min_spatial, int(round(h * sm))), max(min_spatial, int(round(w * sm)))
                    grid.append((cc, hh, ww))
        else:
            for fm in (0.25, 0.5, 1, 2, 4):
                grid.append((max(1, int(round(shape[0] * fm))),))
    return list(dict.fromkeys(grid))


def build_dataset(
    shapes: Iterable[Sequence[int]],
    calib: LatencyCalib = LatencyCalib(),
    params: Mapping[DropoutKind, DropoutParams] | None = None,
) -> LatencyDataset:
    """One row per (shape, kind); Block rows only where a block fits the map."""
    params = params or kind_params(None)
    configs, ys = [], []
    for shape in shapes:
        for kind in KIND_ORDER:
            p = params[kind]
            if kind is DropoutKind.BLOCK and (len(shape) != 3 or p.block_size > min(shape[1:])):
                continue
            cfg = HwConfig.from_shape(shape, kind, p)
            configs.append(cfg)
            ys.append(analytic_latency(cfg, calib))
    return LatencyDataset(configs, np.array(ys))


def fit_latency_model(ds: LatencyDataset, grid: HyperGrid | None = None) -> GpModel:
    return gp_fit(ds.features(), ds.latency_ms, grid)


def gp_predict(model: GpModel, cfg: HwConfig) -> tuple[float, float]:
    mu, var = model.predict(cfg.features())
    return float(mu[0]), float(var[0])


def slot_configs(spec: SupernetSpec, genome: Sequence[int]) -> list[HwConfig]:
    shapes = spec.backbone.slot_shapes()
    return [
        HwConfig.from_shape(shapes[s.slot_index], c.kind, c.params)
        for s, c in zip(spec.slots, spec.choices(genome))
    ]


def genome_latency(
    spec: SupernetSpec,
    genome: Sequence[int],
    model: GpModel | None = None,
    calib: LatencyCalib = LatencyCalib(),
    samples: int = 1,
) -> float:
    """Latency (ms) of ``samples`` forward passes of one sub-network.

    The backbone contributes a genome-independent constant; each dropout slot
    adds its predicted latency, from the GP surrogate when ``model`` is given
    and from the analytic model otherwise.
    """
    cfgs = slot_configs(spec, genome)
    if model is None:
        slot_ms = math.fsum(analytic_latency(c, calib) for c in cfgs)
    else:
        mu, _ = model.predict(np.array([c.features() for c in cfgs]))
        slot_ms = math.fsum(float(v) for v in mu)
    backbone_ms = backbone_cycles(spec) / (calib.clock_mhz * 1e3)
    return samples * (backbone_ms + slot_ms)

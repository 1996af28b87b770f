"""Layer-wise dropout search space and single-path one-shot supernet training."""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import nn
from .dropout import DropoutKind, DropoutParams, Mask, MaskBank, build_mask_bank, gen_mask
from .errors import ConfigError, GenomeError, TrainingDiverged

log = logging.getLogger(__name__)

Genome = tuple[int, ...]


@dataclass(frozen=True)
class Choice:
    kind: DropoutKind
    params: DropoutParams = DropoutParams()

    def __post_init__(self):
        object.__setattr__(self, "kind", DropoutKind(self.kind))
        self.params.validate(self.kind)

    def to_dict(self) -> dict:
        d = {"kind": self.kind.value, "rate": self.params.rate}
        if self.kind is DropoutKind.BLOCK:
            d["block_size"] = self.params.block_size
        if self.kind is DropoutKind.MASKSEMBLES:
            d["mask_count"] = self.params.mask_count
            d["seed"] = self.params.seed
        return d


@dataclass(frozen=True)
class SlotSpec:
    slot_index: int
    allowed: tuple[Choice, ...]

    def __post_init__(self):
        object.__setattr__(self, "allowed", tuple(self.allowed))
        if not self.allowed:
            raise ConfigError(f"slot {self.slot_index} has no dropout choices")


@dataclass(frozen=True, eq=False)
class SupernetSpec:
    """A backbone with N dropout slots, slot i offering M_i dropout choices."""

    backbone: nn.NetworkSpec
    slots: tuple[SlotSpec, ...]
    banks: dict = field(init=False, repr=False)

    def __post_init__(self):
        slots = tuple(sorted(self.slots, key=lambda s: s.slot_index))
        object.__setattr__(self, "slots", slots)
        shapes = self.backbone.slot_shapes()
        declared = [s.slot_index for s in slots]
        if len(set(declared)) != len(declared) or set(declared) != set(shapes):
            raise ConfigError(
                f"slot specs {sorted(declared)} do not match backbone dropout slots {sorted(shapes)}"
            )
        banks = {}
        for s in slots:
            shape = shapes[s.slot_index]
            for j, choice in enumerate(s.allowed):
                if choice.kind is DropoutKind.BLOCK and len(shape) != 3:
                    raise ConfigError(f"slot {s.slot_index}: Block dropout needs a conv activation")
                if choice.kind is DropoutKind.MASKSEMBLES:
                    seed = int(np.random.SeedSequence([choice.params.seed, s.slot_index, j])
                               .generate_state(1)[0])
                    banks[s.slot_index, j] = build_mask_bank(choice.params, shape[0], seed)
        object.__setattr__(self, "banks", banks)

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(len(s.allowed) for s in self.slots)

    @property
    def space_size(self) -> int:
        return math.prod(self.sizes)

    def check_genome(self, genome: Sequence[int]) -> Genome:
        genome = tuple(int(c) for c in genome)
        if len(genome) != len(self.slots):
            raise GenomeError(f"genome has {len(genome)} entries, supernet has {len(self.slots)} slots")
        for i, (c, m) in enumerate(zip(genome, self.sizes)):
            if not 0 <= c < m:
                raise GenomeError(f"choice {c} at slot position {i} out of range [0, {m})")
        return genome

    def choices(self, genome: Sequence[int]) -> list[Choice]:
        genome = self.check_genome(genome)
        return [s.allowed[c] for s, c in zip(self.slots, genome)]

    def letters(self, genome: Sequence[int]) -> str:
        """Render a genome in letter code, e.g. ``"B-B-M"``."""
        return "-".join(c.kind.letter for c in self.choices(genome))

    def parse_letters(self, code: str) -> Genome:
        parts = [p.strip() for p in code.split("-")]
        if len(parts) != len(self.slots):
            raise GenomeError(f"{code!r} names {len(parts)} slots, supernet has {len(self.slots)}")
        genome = []
        for s, letter in zip(self.slots, parts):
            kind = DropoutKind.from_letter(letter)
            matches = [j for j, c in enumerate(s.allowed) if c.kind is kind]
            if len(matches) != 1:
                raise GenomeError(f"slot {s.slot_index} has {len(matches)} choices of kind {letter}")
            genome.append(matches[0])
        return tuple(genome)

    def all_genomes(self):
        """Every genome in lexicographic order."""
        for idx in np.ndindex(*self.sizes):
            yield tuple(int(i) for i in idx)

    def genome_index(self, genome: Sequence[int]) -> int:
        """Mixed-radix rank of a genome in ``all_genomes`` order."""
        return int(np.ravel_multi_index(self.check_genome(genome), self.sizes))

    def to_dict(self) -> dict:
        return {
            "backbone": self.backbone.to_dict(),
            "slots": [
                {"slot_index": s.slot_index, "choices": [c.to_dict() for c in s.allowed]}
                for s in self.slots
            ],
        }

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def sample_uniform(spec, rng: np.random.Generator) -> Genome:
    """Draw each slot's choice independently and uniformly."""
    sizes = spec.sizes if hasattr(spec, "sizes") else tuple(spec)
    return tuple(int(rng.integers(m)) for m in sizes)


def activate(
    spec: SupernetSpec,
    genome: Sequence[int],
    t: int | Mapping[int, int],
    rng: np.random.Generator,
    batch: int | None = None,
) -> dict[int, Mask]:
    """Masks realising one stochastic pass of the sub-network ``genome``.

    ``t`` is the Monte-Carlo pass index, or a per-slot mapping of indices; it
    selects the bank mask of Masksembles slots.  Dynamic kinds draw from
    ``rng``.  Parameters are never touched.
    """
    genome = spec.check_genome(genome)
    shapes = spec.backbone.slot_shapes()
    masks = {}
    for slot, c in zip(spec.slots, genome):
        choice = slot.allowed[c]
        ts = t[slot.slot_index] if isinstance(t, Mapping) else t
        masks[slot.slot_index] = gen_mask(
            choice.kind,
            choice.params,
            shapes[slot.slot_index],
            t=ts,
            rng=rng,
            bank=spec.banks.get((slot.slot_index, c)),
            batch=batch,
        )
    return masks


@dataclass(frozen=True)
class TrainHyper:
    epochs: int = 3
    lr: float = 0.01
    momentum: float = 0.9
    batch_size: int = 32

    def validate(self):
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigError(f"invalid training hyperparameters {self}")
        if not self.lr > 0 or not 0 <= self.momentum < 1:
            raise ConfigError(f"invalid optimizer settings lr={self.lr}, momentum={self.momentum}")


@dataclass
class TrainReport:
    epoch_losses: list[float]
    iterations: int
    seed: int
    genome_counts: dict[Genome, int]

    def to_dict(self) -> dict:
        return {
            "epoch_losses": self.epoch_losses,
            "iterations": self.iterations,
            "seed": self.seed,
            "genome_counts": {"-".join(map(str, g)): n for g, n in sorted(self.genome_counts.items())},
        }


def train_supernet(
    spec: SupernetSpec,
    x: np.ndarray,
    y: np.ndarray,
    hyper: TrainHyper = TrainHyper(),
    seed: int = 0,
    params: dict | None = None,
) -> tuple[dict, TrainReport]:
    """SPOS training: one uniformly sampled sub-network per mini-batch.

    Dynamic dropout kinds draw one fresh mask per mini-batch; Masksembles
    slots step through their bank with a per-slot counter.
    """
    hyper.validate()
    if len(x) == 0 or len(x) != len(y):
        raise ConfigError(f"dataset must be non-empty with matching labels ({len(x)} vs {len(y)})")
    if params is None:
        params = nn.init_params(spec.backbone, seed)
    shuffle_rng, genome_rng, mask_rng = (
        np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(3)
    )
    opt = nn.SGD(hyper.lr, hyper.momentum)
    counters = {s.slot_index: 0 for s in spec.slots}
    counts: dict[Genome, int] = {}
    losses = []
    it = 0
    n = len(x)
    for epoch in range(hyper.epochs):
        order = shuffle_rng.permutation(n)
        total = 0.0
        batches = 0
        for start in range(0, n, hyper.batch_size):
            idx = order[start : start + hyper.batch_size]
            xb, yb = x[idx], y[idx]
            genome = sample_uniform(spec, genome_rng)
            counts[genome] = counts.get(genome, 0) + 1
            masks = activate(spec, genome, counters, mask_rng)
            for s, c in zip(spec.slots, genome):
                if s.allowed[c].kind.is_static:
                    counters[s.slot_index] += 1
            acts = nn.forward(spec.backbone, params, xb, masks)
            loss = nn.loss_ce(acts[-1], yb)
            if not math.isfinite(loss):
                raise TrainingDiverged(it, loss)
            grads = nn.backward(spec.backbone, params, xb, acts, yb, masks)
            opt.step(params, grads)
            total += loss
            batches += 1
            it += 1
        losses.append(total / max(batches, 1))
        log.info("epoch %d: mean loss %.4f over %d iterations", epoch + 1, losses[-1], batches)
    return params, TrainReport(losses, it, seed, counts)

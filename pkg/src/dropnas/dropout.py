"""Mask generation for the four dropout designs.

Each design differs in granularity and in when its randomness is drawn:

* ``BERNOULLI``      one independent keep/drop decision per element
* ``RANDOM_CHANNEL`` one decision per channel (per feature for rank-1 slots)
* ``BLOCK``          DropBlock-style square regions seeded at rate gamma
* ``MASKSEMBLES``    a small static bank of channel masks reused cyclically

All masks use inverted scaling: ``scale = elements / ones`` so the masked
activation keeps its expected magnitude.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import DegenerateMaskError, DropoutParamError, ShapeError

MAX_REDRAWS = 100


class DropoutKind(str, enum.Enum):
    BERNOULLI = "bernoulli"
    RANDOM_CHANNEL = "random"
    BLOCK = "block"
    MASKSEMBLES = "masksembles"

    @property
    def letter(self) -> str:
        return _LETTERS[self]

    @classmethod
    def from_letter(cls, letter: str) -> "DropoutKind":
        for kind, code in _LETTERS.items():
            if code == letter.upper():
                return kind
        raise ValueError(f"unknown dropout letter {letter!r}")

    @property
    def is_static(self) -> bool:
        return self is DropoutKind.MASKSEMBLES


_LETTERS = {
    DropoutKind.BERNOULLI: "B",
    DropoutKind.RANDOM_CHANNEL: "R",
    DropoutKind.BLOCK: "K",
    DropoutKind.MASKSEMBLES: "M",
}


@dataclass(frozen=True)
class DropoutParams:
    rate: float = 0.25
    block_size: int = 3
    mask_count: int = 4
    seed: int = 0

    def validate(self, kind: DropoutKind | None = None) -> None:
        if not (0.0 <= self.rate < 1.0) or math.isnan(self.rate):
            raise DropoutParamError(f"dropout rate must lie in [0, 1), got {self.rate}")
        if kind is DropoutKind.BLOCK and (self.block_size < 1 or self.block_size % 2 == 0):
            raise DropoutParamError(f"block_size must be an odd integer >= 1, got {self.block_size}")
        if kind is DropoutKind.MASKSEMBLES and self.mask_count < 2:
            raise DropoutParamError(f"mask_count must be >= 2, got {self.mask_count}")


@dataclass(frozen=True, eq=False)
class Mask:
    """Binary keep-mask plus its inverted-dropout scale.

    ``values`` is congruent with one sample's activation, except that channel
    masks keep singleton spatial axes (``(C, 1, 1)``) and broadcast.  A mask
    generated for a batch carries a leading batch axis and ``scale`` becomes a
    vector with one entry per sample.
    """

    values: np.ndarray
    scale: float | np.ndarray

    @property
    def batched(self) -> bool:
        return np.ndim(self.scale) == 1


@dataclass(frozen=True, eq=False)
class MaskBank:
    masks: tuple[np.ndarray, ...]
    seed: int
    channels: int
    rate: float

    def __len__(self) -> int:
        return len(self.masks)

    def __getitem__(self, t: int) -> np.ndarray:
        return self.masks[t % len(self.masks)]


def block_seed_rate(rate: float, block_size: int, spatial: int) -> float:
    """DropBlock's seed probability gamma for a square feature map of side ``spatial``."""
    return rate / block_size**2 * spatial**2 / (spatial - block_size + 1) ** 2


def kept_channels(rate: float, channels: int) -> int:
    return math.ceil((1.0 - rate) * channels - 1e-9)


def build_mask_bank(params: DropoutParams, channels: int, seed: int | None = None) -> MaskBank:
    """Draw ``mask_count`` static channel masks, each keeping ``ceil((1-p)C)`` channels.

    Channels are drawn without replacement for each mask, preferring the
    channels used least so far, so that every channel is kept by (nearly) the
    same number of masks.  When ``mask_count * kept`` is a multiple of ``C``
    the coverage is exactly uniform and cycling through the bank is unbiased.
    """
    params.validate(DropoutKind.MASKSEMBLES)
    seed = params.seed if seed is None else seed
    k = params.mask_count
    if channels < k:
        raise DropoutParamError(f"Masksembles needs at least {k} channels, got {channels}")
    keep = kept_channels(params.rate, channels)
    rng = np.random.default_rng(seed)
    usage = np.zeros(channels, dtype=np.int64)
    masks = []
    for _ in range(k):
        # random tie-break among equally used channels
        order = np.lexsort((rng.random(channels), usage))
        chosen = order[:keep]
        usage[chosen] += 1
        m = np.zeros(channels, dtype=np.float32)
        m[chosen] = 1.0
        m.setflags(write=False)
        masks.append(m)
    return MaskBank(tuple(masks), seed, channels, params.rate)


def _scale_for(values: np.ndarray, batched: bool):
    if batched:
        flat = values.reshape(values.shape[0], -1)
        ones = flat.sum(axis=1)
        return (flat.shape[1] / np.maximum(ones, 1.0)).astype(np.float64)
    return float(values.size / max(1.0, float(values.sum())))


def _draw(kind, params, shape, n, rng):
    """One raw draw of ``n`` masks as a float32 array of shape ``(n, *mask_shape)``."""
    p = params.rate
    if kind is DropoutKind.BERNOULLI:
        return (rng.random((n, *shape)) >= p).astype(np.float32)
    if kind is DropoutKind.RANDOM_CHANNEL:
        keep = (rng.random((n, shape[0])) >= p).astype(np.float32)
        return keep.reshape((n, shape[0]) + (1,) * (len(shape) - 1))
    if kind is DropoutKind.BLOCK:
        seeds = block_seeds(params, shape, n, rng)
        return 1.0 - expand_blocks(seeds, params.block_size)
    raise AssertionError(kind)


def block_seeds(params: DropoutParams, shape, n, rng) -> np.ndarray:
    """Seed positions of ``n`` Block masks, boolean ``(n, C, H, W)``."""
    c, h, w = shape
    gamma = block_seed_rate(params.rate, params.block_size, min(h, w))
    return rng.random((n, c, h, w)) < gamma


def expand_blocks(seeds: np.ndarray, block_size: int) -> np.ndarray:
    """Zero out a ``block_size`` square centred on every seed.

    The feature map is treated as a torus: squares that cross a border wrap to
    the opposite side.  Every position is then covered by exactly
    ``block_size**2`` candidate seeds, which keeps the inverted scale unbiased
    at the borders as well as in the interior.
    """
    r = block_size // 2
    dropped = np.zeros(seeds.shape, dtype=bool)
    for di in range(-r, r + 1):
        for dj in range(-r, r + 1):
            dropped |= np.roll(seeds, shift=(di, dj), axis=(-2, -1))
    return dropped.astype(np.float32)


def _check_shape(kind, params, shape):
    if len(shape) not in (1, 3) or any(int(d) < 1 for d in shape):
        raise ShapeError(f"mask shape must be (C, H, W) or (F,), got {tuple(shape)}")
    if kind is DropoutKind.BLOCK:
        if len(shape) != 3:
            raise ShapeError("Block dropout needs a (C, H, W) activation")
        if params.block_size > min(shape[1], shape[2]):
            raise DropoutParamError(
                f"block_size {params.block_size} exceeds feature map {shape[1]}x{shape[2]}"
            )


def gen_mask(
    kind: DropoutKind,
    params: DropoutParams,
    shape: Sequence[int],
    t: int = 0,
    rng: np.random.Generator | None = None,
    bank: MaskBank | None = None,
    batch: int | None = None,
) -> Mask:
    """Generate a dropout mask for an activation of ``shape`` (one sample).

    ``t`` is the Monte-Carlo sample index; only Masksembles uses it.  With
    ``batch=n`` the result holds ``n`` independent masks along a leading axis.
    All-zero draws are redrawn, up to ``MAX_REDRAWS`` attempts.
    """
    kind = DropoutKind(kind)
    params.validate(kind)
    shape = tuple(int(d) for d in shape)
    _check_shape(kind, params, shape)

    if kind is DropoutKind.MASKSEMBLES:
        if bank is None:
            raise DropoutParamError("Masksembles requires a prepared MaskBank")
        if bank.channels != shape[0]:
            raise ShapeError(f"mask bank has {bank.channels} channels, activation has {shape[0]}")
        values = bank[t].reshape((shape[0],) + (1,) * (len(shape) - 1))
        if batch is not None:
            values = np.broadcast_to(values, (batch, *values.shape))
        return Mask(values, _scale_for(values, batch is not None))

    if rng is None:
        raise DropoutParamError(f"{kind.value} dropout needs an rng")
    n = 1 if batch is None else batch
    values = _draw(kind, params, shape, n, rng)
    empty = ~values.reshape(n, -1).any(axis=1)
    attempts = 0
    while empty.any():
        attempts += 1
        if attempts >= MAX_REDRAWS:
            raise DegenerateMaskError(
                f"{kind.value} mask all-zero after {MAX_REDRAWS} draws (rate {params.rate})"
            )
        idx = np.flatnonzero(empty)
        values[idx] = _draw(kind, params, shape, len(idx), rng)
        empty = ~values.reshape(n, -1).any(axis=1)

    if batch is None:
        values = values[0]
    return Mask(values, _scale_for(values, batch is not None))


def apply(mask: Mask, x: np.ndarray) -> np.ndarray:
    """Return ``x * mask.values * mask.scale``.

    ``x`` may be a single sample or a batch; an unbatched mask is shared by
    every sample of a batch.
    """
    values = mask.values
    if mask.batched:
        if x.ndim != values.ndim or x.shape[0] != values.shape[0]:
            raise ShapeError(f"batched mask {values.shape} does not match input {x.shape}")
        scale = np.asarray(mask.scale, dtype=x.dtype).reshape((-1,) + (1,) * (x.ndim - 1))
        body_x, body_m = x.shape[1:], values.shape[1:]
    else:
        scale = x.dtype.type(mask.scale) if x.dtype.kind == "f" else mask.scale
        body_m = values.shape
        body_x = x.shape[-len(body_m):] if x.ndim >= len(body_m) else None
    if body_x is None or len(body_x) != len(body_m) or any(
        m != 1 and m != d for m, d in zip(body_m, body_x)
    ) or body_m[0] != body_x[0]:
        raise ShapeError(f"mask shape {values.shape} does not match activation {x.shape}")
    return x * values.astype(x.dtype, copy=False) * scale


def random_decisions(kind: DropoutKind, params: DropoutParams, shape: Sequence[int]) -> float:
    """Expected number of independent random keep/drop decisions in one mask."""
    kind = DropoutKind(kind)
    elements = int(np.prod(shape))
    if kind is DropoutKind.BERNOULLI:
        return float(elements)
    if kind is DropoutKind.RANDOM_CHANNEL:
        return float(shape[0])
    if kind is DropoutKind.BLOCK:
        return block_seed_rate(params.rate, params.block_size, min(shape[1:])) * elements
    return 0.0

"""A small numpy engine for CNN/MLP supernets: forward, backward, SGD.

Activations carry a leading batch axis.  ``forward`` also accepts a single
sample (no batch axis) and returns unbatched activations for it.

Parameters and gradients are plain dicts keyed by layer index::

    {0: {"weight": W, "bias": b}, 4: {...}}
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import dropout
from .errors import ConfigError, ShapeError
from .quant import quantize_q7_8

LAYER_KINDS = ("conv2d", "linear", "relu", "maxpool2x2", "flatten", "dropout_slot")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    out_channels: int = 0
    kernel_size: int = 3
    stride: int = 1
    padding: int = 0
    out_features: int = 0
    slot_index: int | None = None

    @property
    def parametric(self) -> bool:
        return self.kind in ("conv2d", "linear")

    def to_dict(self) -> dict:
        if self.kind == "conv2d":
            return {
                "kind": "conv2d",
                "out_channels": self.out_channels,
                "kernel_size": self.kernel_size,
                "stride": self.stride,
                "padding": self.padding,
            }
        if self.kind == "linear":
            return {"kind": "linear", "out_features": self.out_features}
        if self.kind == "dropout_slot":
            return {"kind": "dropout_slot", "slot_index": self.slot_index}
        return {"kind": self.kind}

    @classmethod
    def from_dict(cls, d: Mapping) -> "LayerSpec":
        return cls(**d)


@dataclass(frozen=True)
class NetworkSpec:
    layers: tuple[LayerSpec, ...]
    input_shape: tuple[int, ...]
    shapes: tuple[tuple[int, ...], ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(int(d) for d in self.input_shape))
        object.__setattr__(self, "shapes", tuple(_propagate(self.layers, self.input_shape)))

    @property
    def num_classes(self) -> int:
        return self.shapes[-1][0]

    def slot_layers(self) -> dict[int, int]:
        """Map slot_index -> layer index."""
        return {l.slot_index: i for i, l in enumerate(self.layers) if l.kind == "dropout_slot"}

    def slot_shapes(self) -> dict[int, tuple[int, ...]]:
        """Map slot_index -> per-sample activation shape at that slot."""
        return {s: self.shapes[i] for s, i in self.slot_layers().items()}

    def in_shape(self, i: int) -> tuple[int, ...]:
        return self.input_shape if i == 0 else self.shapes[i - 1]

    def to_dict(self) -> dict:
        return {"input_shape": list(self.input_shape), "layers": [l.to_dict() for l in self.layers]}

    @classmethod
    def from_dict(cls, d: Mapping) -> "NetworkSpec":
        return cls(tuple(LayerSpec.from_dict(l) for l in d["layers"]), tuple(d["input_shape"]))


def _propagate(layers: Sequence[LayerSpec], input_shape: tuple[int, ...]):
    shape = input_shape
    seen_slots = set()
    if not shape or any(d < 1 for d in shape):
        raise ShapeError(f"invalid input shape {shape}")
    for i, layer in enumerate(layers):
        where = f"layer {i} ({layer.kind})"
        if layer.kind not in LAYER_KINDS:
            raise ShapeError(f"{where}: unknown layer kind")
        if layer.kind == "conv2d":
            if len(shape) != 3:
                raise ShapeError(f"{where}: expects (C, H, W) input, got {shape}")
            k, s, p = layer.kernel_size, layer.stride, layer.padding
            if k < 1 or s < 1 or p < 0 or layer.out_channels < 1:
                raise ShapeError(f"{where}: invalid conv parameters")
            h = (shape[1] + 2 * p - k) // s + 1
            w = (shape[2] + 2 * p - k) // s + 1
            if h < 1 or w < 1:
                raise ShapeError(f"{where}: kernel {k} larger than padded input {shape}")
            shape = (layer.out_channels, h, w)
        elif layer.kind == "linear":
            if len(shape) != 1:
                raise ShapeError(f"{where}: expects a flat input, got {shape}")
            if layer.out_features < 1:
                raise ShapeError(f"{where}: out_features must be >= 1")
            shape = (layer.out_features,)
        elif layer.kind == "maxpool2x2":
            if len(shape) != 3 or shape[1] < 2 or shape[2] < 2:
                raise ShapeError(f"{where}: needs a (C, H, W) input with H, W >= 2, got {shape}")
            shape = (shape[0], shape[1] // 2, shape[2] // 2)
        elif layer.kind == "flatten":
            shape = (int(np.prod(shape)),)
        elif layer.kind == "dropout_slot":
            if layer.slot_index is None or layer.slot_index < 0:
                raise ShapeError(f"{where}: dropout_slot needs slot_index >= 0")
            if layer.slot_index in seen_slots:
                raise ShapeError(f"{where}: duplicate slot_index {layer.slot_index}")
            seen_slots.add(layer.slot_index)
        yield shape
    if layers and len(shape) != 1:
        raise ShapeError(f"final layer must produce a logits vector, got shape {shape}")


def init_params(spec: NetworkSpec, seed: int, dtype=np.float32) -> dict:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    params = {}
    for i, layer in enumerate(spec.layers):
        in_shape = spec.in_shape(i)
        if layer.kind == "conv2d":
            k = layer.kernel_size
            wshape = (layer.out_channels, in_shape[0], k, k)
            fan_in, fan_out = in_shape[0] * k * k, layer.out_channels * k * k
        elif layer.kind == "linear":
            wshape = (layer.out_features, in_shape[0])
            fan_in, fan_out = in_shape[0], layer.out_features
        else:
            continue
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        params[i] = {
            "weight": rng.uniform(-bound, bound, size=wshape).astype(dtype),
            "bias": np.zeros(wshape[0], dtype=dtype),
        }
    return params


def cast_params(params: Mapping, dtype) -> dict:
    return {i: {k: v.astype(dtype) for k, v in p.items()} for i, p in params.items()}


def copy_params(params: Mapping) -> dict:
    return {i: {k: v.copy() for k, v in p.items()} for i, p in params.items()}


# -- layer primitives -------------------------------------------------------


def _im2col(x, k, stride, padding):
    """(B, C, H, W) -> columns (B, Ho, Wo, C, k, k)."""
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]
    return win.transpose(0, 2, 3, 1, 4, 5)


def conv2d_forward(x, weight, bias, stride=1, padding=0):
    out_c, _, k, _ = weight.shape
    cols = _im2col(x, k, stride, padding)
    b, ho, wo = cols.shape[:3]
    y = cols.reshape(b * ho * wo, -1) @ weight.reshape(out_c, -1).T
    y = y.reshape(b, ho, wo, out_c).transpose(0, 3, 1, 2) + bias[:, None, None]
    return np.ascontiguousarray(y)


def conv2d_backward(x, weight, dy, stride=1, padding=0):
    out_c, in_c, k, _ = weight.shape
    cols = _im2col(x, k, stride, padding)
    b, ho, wo = cols.shape[:3]
    dy_m = dy.transpose(0, 2, 3, 1).reshape(b * ho * wo, out_c)
    dw = (dy_m.T @ cols.reshape(b * ho * wo, -1)).reshape(weight.shape)
    db = dy.sum(axis=(0, 2, 3))
    dcols = (dy_m @ weight.reshape(out_c, -1)).reshape(b, ho, wo, in_c, k, k)
    hp, wp = x.shape[2] + 2 * padding, x.shape[3] + 2 * padding
    dxp = np.zeros((b, in_c, hp, wp), dtype=dy.dtype)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += dcols[
                :, :, :, :, i, j
            ].transpose(0, 3, 1, 2)
    if padding:
        dxp = dxp[:, :, padding:-padding, padding:-padding]
    return dxp, dw, db


def _pool_windows(x):
    b, c, h, w = x.shape
    ho, wo = h // 2, w // 2
    win = x[:, :, : 2 * ho, : 2 * wo].reshape(b, c, ho, 2, wo, 2)
    return win.transpose(0, 1, 2, 4, 3, 5).reshape(b, c, ho, wo, 4)


def maxpool_forward(x):
    return _pool_windows(x).max(axis=-1)


def maxpool_backward(x, dy):
    b, c, h, w = x.shape
    ho, wo = h // 2, w // 2
    # gradient routed to the first maximal element of each window
    onehot = np.eye(4, dtype=dy.dtype)[_pool_windows(x).argmax(axis=-1)]
    g = (onehot * dy[..., None]).reshape(b, c, ho, wo, 2, 2).transpose(0, 1, 2, 4, 3, 5)
    dx = np.zeros_like(x, dtype=dy.dtype)
    dx[:, :, : 2 * ho, : 2 * wo] = g.reshape(b, c, 2 * ho, 2 * wo)
    return dx


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


# -- network passes ---------------------------------------------------------


def _check_input(spec: NetworkSpec, x: np.ndarray) -> bool:
    """Return True when ``x`` is a single unbatched sample."""
    n = len(spec.input_shape)
    if x.shape == spec.input_shape:
        return True
    if x.ndim == n + 1 and x.shape[1:] == spec.input_shape:
        return False
    raise ShapeError(f"input shape {x.shape} does not match network input {spec.input_shape}")


def _slot_mask(spec, masks, layer, i):
    if masks is None:
        return None
    mask = masks.get(layer.slot_index)
    if mask is None:
        return None
    expected = spec.shapes[i]
    body = mask.values.shape[1:] if mask.batched else mask.values.shape
    if len(body) != len(expected) or body[0] != expected[0] or any(
        m not in (1, e) for m, e in zip(body, expected)
    ):
        raise ShapeError(
            f"mask for slot {layer.slot_index} has shape {mask.values.shape}, "
            f"activation is {expected}"
        )
    return mask


def forward(
    spec: NetworkSpec,
    params: Mapping,
    x: np.ndarray,
    masks: Mapping[int, dropout.Mask] | None = None,
    quantize: bool = False,
) -> list[np.ndarray]:
    """Run the network and return every layer's output (last entry: logits).

    ``masks`` maps slot_index to a Mask; slots without a mask pass their input
    through unchanged.  With ``quantize`` the input, weights and every layer
    output are rounded to Q7.8 fixed point.
    """
    single = _check_input(spec, x)
    h = x[None] if single else x
    if quantize:
        h = quantize_q7_8(h)
    acts = []
    for i, layer in enumerate(spec.layers):
        if layer.parametric:
            w, b = params[i]["weight"], params[i]["bias"]
            if quantize:
                w, b = quantize_q7_8(w), quantize_q7_8(b)
            if layer.kind == "conv2d":
                h = conv2d_forward(h, w, b, layer.stride, layer.padding)
            else:
                h = h @ w.T + b
        elif layer.kind == "relu":
            h = np.maximum(h, 0)
        elif layer.kind == "maxpool2x2":
            h = maxpool_forward(h)
        elif layer.kind == "flatten":
            h = h.reshape(h.shape[0], -1)
        elif layer.kind == "dropout_slot":
            mask = _slot_mask(spec, masks, layer, i)
            if mask is not None:
                h = dropout.apply(mask, h)
        if quantize:
            h = quantize_q7_8(h)
        acts.append(h)
    if single:
        acts = [a[0] for a in acts]
    return acts


def loss_ce(logits: np.ndarray, label) -> float:
    """Cross-entropy in nats; the batch mean when ``logits`` is 2-D."""
    logits = np.asarray(logits)
    labels = np.atleast_1d(np.asarray(label))
    z = np.atleast_2d(logits)
    if labels.shape[0] != z.shape[0]:
        raise ShapeError(f"{labels.shape[0]} labels for {z.shape[0]} logit rows")
    if np.any(labels < 0) or np.any(labels >= z.shape[1]):
        raise IndexError(f"label out of range for {z.shape[1]} classes")
    z = z - z.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1))
    per = logsumexp - z[np.arange(z.shape[0]), labels]
    return float(np.maximum(per, 0.0).mean())


def backward(
    spec: NetworkSpec,
    params: Mapping,
    x: np.ndarray,
    activations: Sequence[np.ndarray],
    labels,
    masks: Mapping[int, dropout.Mask] | None = None,
) -> dict:
    """Exact gradients of the mean cross-entropy w.r.t. every parameter."""
    single = _check_input(spec, x)
    if single:
        x = x[None]
        activations = [a[None] for a in activations]
    labels = np.atleast_1d(np.asarray(labels))
    logits = activations[-1]
    n = logits.shape[0]
    g = softmax(logits)
    g[np.arange(n), labels] -= 1
    g /= n

    grads = {}
    for i in range(len(spec.layers) - 1, -1, -1):
        layer = spec.layers[i]
        inp = x if i == 0 else activations[i - 1]
        if layer.kind == "linear":
            w = params[i]["weight"]
            grads[i] = {"weight": g.T @ inp, "bias": g.sum(axis=0)}
            g = g @ w
        elif layer.kind == "conv2d":
            g, dw, db = conv2d_backward(inp, params[i]["weight"], g, layer.stride, layer.padding)
            grads[i] = {"weight": dw, "bias": db}
        elif layer.kind == "relu":
            g = g * (inp > 0)
        elif layer.kind == "maxpool2x2":
            g = maxpool_backward(inp, g)
        elif layer.kind == "flatten":
            g = g.reshape(inp.shape)
        elif layer.kind == "dropout_slot":
            mask = _slot_mask(spec, masks, layer, i)
            if mask is not None:
                g = dropout.apply(mask, g)
    return {i: grads[i] for i in sorted(grads)}


class SGD:
    """Momentum SGD holding its own velocity buffers."""

    def __init__(self, lr: float = 0.01, momentum: float = 0.9):
        if not lr > 0:
            raise ConfigError(f"learning rate must be positive, got {lr}")
        if not 0 <= momentum < 1:
            raise ConfigError(f"momentum must lie in [0, 1), got {momentum}")
        self.lr = lr
        self.momentum = momentum
        self.velocity: dict = {}

    def step(self, params: dict, grads: Mapping) -> dict:
        return sgd_step(params, grads, self.lr, self.momentum, self.velocity)


def sgd_step(params: dict, grads: Mapping, lr: float, momentum: float, velocity: dict) -> dict:
    """``v <- momentum * v + g; w <- w - lr * v``, updating ``params`` in place."""
    if not lr > 0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    for i, g in grads.items():
        vel = velocity.setdefault(i, {k: np.zeros_like(v) for k, v in params[i].items()})
        for k, gk in g.items():
            v = vel[k]
            v *= momentum
            v += gk.astype(v.dtype, copy=False)
            params[i][k] -= v.dtype.type(lr) * v
    return params

"""Minimal two-class MLP-Mixer in numpy.

The network is the standard Mixer: a per-patch linear embedding, ``num_layers``
blocks of (layer norm -> token-mixing MLP -> skip, layer norm -> channel-mixing
MLP -> skip, GELU in tanh form), a final layer norm, global average pooling over tokens and a
linear head producing two logits followed by a softmax.

All weights live in one flat float32 vector (the genome evolved by the immune
algorithm).  The canonical order of that vector is::

    embed.w  (P*P, C)     embed.b  (C,)
    for each block:
        ln1.g (C,)  ln1.b (C,)
        tok.w1 (S, Ds)  tok.b1 (Ds,)  tok.w2 (Ds, S)  tok.b2 (S,)
        ln2.g (C,)  ln2.b (C,)
        ch.w1 (C, Dc)   ch.b1 (Dc,)   ch.w2 (Dc, C)   ch.b2 (C,)
    ln.g (C,)  ln.b (C,)
    head.w (C, 2)  head.b (2,)

Each tensor is stored row-major (C order).  Class index 0 is label 1
(positive), class index 1 is label 2 (negative).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

LN_EPS = 1e-6
NUM_CLASSES = 2
_GELU_C = np.float32(np.sqrt(2.0 / np.pi))
_GELU_A = np.float32(0.044715)


class EvaluationError(RuntimeError):
    """Raised when a forward pass produces non-finite values."""


@dataclass(frozen=True)
class MixerConfig:
    image_side: int = 28
    patch_size: int = 7
    num_layers: int = 2
    hidden_c: int = 32
    mlp_ds: int = 32
    mlp_dc: int = 64
    num_classes: int = NUM_CLASSES

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for name in ("image_side", "patch_size", "hidden_c", "mlp_ds", "mlp_dc"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.num_layers < 0:
            raise ValueError(f"num_layers must be >= 0, got {self.num_layers}")
        if self.image_side % self.patch_size:
            raise ValueError(
                f"patch_size {self.patch_size} does not divide image_side {self.image_side}"
            )
        if self.num_classes != NUM_CLASSES:
            raise ValueError("only two-class Mixers are supported")

    @property
    def seq_len(self) -> int:
        return (self.image_side // self.patch_size) ** 2

    @property
    def patch_dim(self) -> int:
        return self.patch_size * self.patch_size

    def to_dict(self) -> dict:
        return {
            "image_side": self.image_side,
            "patch_size": self.patch_size,
            "num_layers": self.num_layers,
            "hidden_c": self.hidden_c,
            "mlp_ds": self.mlp_ds,
            "mlp_dc": self.mlp_dc,
        }


class ProbPair(NamedTuple):
    p1: float
    p2: float


def param_shapes(config: MixerConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Named tensor shapes in canonical genome order."""
    config.validate()
    C, S = config.hidden_c, config.seq_len
    Ds, Dc = config.mlp_ds, config.mlp_dc
    shapes = [("embed.w", (config.patch_dim, C)), ("embed.b", (C,))]
    for i in range(config.num_layers):
        p = f"block{i}."
        shapes += [
            (p + "ln1.g", (C,)), (p + "ln1.b", (C,)),
            (p + "tok.w1", (S, Ds)), (p + "tok.b1", (Ds,)),
            (p + "tok.w2", (Ds, S)), (p + "tok.b2", (S,)),
            (p + "ln2.g", (C,)), (p + "ln2.b", (C,)),
            (p + "ch.w1", (C, Dc)), (p + "ch.b1", (Dc,)),
            (p + "ch.w2", (Dc, C)), (p + "ch.b2", (C,)),
        ]
    shapes += [
        ("ln.g", (C,)), ("ln.b", (C,)),
        ("head.w", (C, NUM_CLASSES)), ("head.b", (NUM_CLASSES,)),
    ]
    return shapes


def param_count(config: MixerConfig) -> int:
    return sum(int(np.prod(shape)) for _, shape in param_shapes(config))


def unflatten(config: MixerConfig, params: np.ndarray) -> dict[str, np.ndarray]:
    """Split a flat genome into named views (no copy)."""
    params = np.asarray(params)
    if params.ndim != 1 or params.size != param_count(config):
        raise ValueError(
            f"parameter vector has length {params.size}, expected {param_count(config)}"
        )
    out = {}
    offset = 0
    for name, shape in param_shapes(config):
        n = int(np.prod(shape))
        out[name] = params[offset:offset + n].reshape(shape)
        offset += n
    return out


def flatten(config: MixerConfig, tensors: dict[str, np.ndarray]) -> np.ndarray:
    return np.concatenate(
        [np.asarray(tensors[name]).reshape(-1) for name, _ in param_shapes(config)]
    ).astype(np.float32)


def init_params(config: MixerConfig, seed: int) -> np.ndarray:
    """Zero-mean uniform init scaled by fan-in; layer-norm gains 1, shifts 0."""
    rng = np.random.default_rng(seed)
    parts = []
    for name, shape in param_shapes(config):
        kind = name.rsplit(".", 1)[-1]
        if kind == "g":
            parts.append(np.ones(shape))
        elif name.split(".")[-2].startswith("ln"):
            parts.append(np.zeros(shape))
        else:
            # biases share the fan-in of their weight matrix
            fan_in = _fan_in(config, name)
            bound = 1.0 / np.sqrt(fan_in)
            parts.append(rng.uniform(-bound, bound, size=shape))
    return np.concatenate([p.reshape(-1) for p in parts]).astype(np.float32)


def _fan_in(config: MixerConfig, name: str) -> int:
    layer, which = name.split(".")[-2:]
    if layer == "embed":
        return config.patch_dim
    if layer == "head":
        return config.hidden_c
    first = which.endswith("1")
    if layer == "tok":
        return config.seq_len if first else config.mlp_ds
    return config.hidden_c if first else config.mlp_dc


# ---------------------------------------------------------------------------
# forward / backward


def _patchify(config: MixerConfig, images: np.ndarray) -> np.ndarray:
    B = images.shape[0]
    n = config.image_side // config.patch_size
    P = config.patch_size
    x = images.reshape(B, n, P, n, P).transpose(0, 1, 3, 2, 4)
    return x.reshape(B, n * n, P * P)


def _unpatchify(config: MixerConfig, patches: np.ndarray) -> np.ndarray:
    B = patches.shape[0]
    n = config.image_side // config.patch_size
    P = config.patch_size
    x = patches.reshape(B, n, n, P, P).transpose(0, 1, 3, 2, 4)
    return x.reshape(B, config.image_side, config.image_side)


def _gelu_gate(x):
    # tanh-form GELU written as x * sigmoid(2z); exp is much cheaper than erf/tanh
    z = _GELU_C * (x + _GELU_A * x * x * x)
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-2.0 * z))


def _gelu(x):
    return x * _gelu_gate(x)


def _gelu_grad(x):
    s = _gelu_gate(x)
    dz = _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)
    return s + x * s * (1.0 - s) * 2.0 * dz


def _layer_norm(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * rstd
    return xhat * g + b, (xhat, rstd)


def _layer_norm_back(dy, g, cache):
    xhat, rstd = cache
    dxhat = dy * g
    n = xhat.shape[-1]
    return (rstd / n) * (
        n * dxhat
        - dxhat.sum(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
    )


def _as_batch(config: MixerConfig, images) -> tuple[np.ndarray, bool]:
    images = np.asarray(images)
    single = images.ndim == 2
    if single:
        images = images[None]
    side = config.image_side
    if images.ndim != 3 or images.shape[1:] != (side, side):
        raise ValueError(
            f"image shape {images.shape[-2:] if images.ndim >= 2 else images.shape} "
            f"does not match configured side {side}"
        )
    return images, single


def _forward(config, params, images, dtype, keep_cache):
    w = {k: v.astype(dtype, copy=False) for k, v in unflatten(config, params).items()}
    x = _patchify(config, images.astype(dtype, copy=False))
    h = x @ w["embed.w"] + w["embed.b"]
    caches = []
    for i in range(config.num_layers):
        p = f"block{i}."
        y, ln1 = _layer_norm(h, w[p + "ln1.g"], w[p + "ln1.b"])
        yt = y.transpose(0, 2, 1)
        a1 = yt @ w[p + "tok.w1"] + w[p + "tok.b1"]
        g1 = _gelu(a1)
        z = g1 @ w[p + "tok.w2"] + w[p + "tok.b2"]
        h = h + z.transpose(0, 2, 1)
        y2, ln2 = _layer_norm(h, w[p + "ln2.g"], w[p + "ln2.b"])
        a2 = y2 @ w[p + "ch.w1"] + w[p + "ch.b1"]
        g2 = _gelu(a2)
        h = h + g2 @ w[p + "ch.w2"] + w[p + "ch.b2"]
        if keep_cache:
            caches.append((ln1, yt, a1, g1, ln2, y2, a2, g2))
    yf, lnf = _layer_norm(h, w["ln.g"], w["ln.b"])
    pooled = yf.mean(axis=1)
    logits = pooled @ w["head.w"] + w["head.b"]
    logits = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(logits)
    probs = e / e.sum(axis=1, keepdims=True)
    if not np.all(np.isfinite(probs)):
        raise EvaluationError("non-finite activation in Mixer forward pass")
    return probs, (w, caches, lnf)


def predict_proba(config: MixerConfig, params, images, dtype=np.float32) -> np.ndarray:
    """Class probabilities for a batch ``(B, side, side)``; returns ``(B, 2)``."""
    images, _ = _as_batch(config, images)
    probs, _ = _forward(config, params, images, dtype, keep_cache=False)
    return probs


def forward(config: MixerConfig, params, image) -> ProbPair:
    probs = predict_proba(config, params, np.asarray(image)[None])
    return ProbPair(float(probs[0, 0]), float(probs[0, 1]))


def input_gradient_from_probs_grad(config, params, images, dprobs_fn, dtype=np.float32):
    """Backpropagate a loss given as a function of the softmax output.

    ``dprobs_fn(probs)`` must return ``dL/dlogits`` with shape ``(B, 2)``.
    """
    images, single = _as_batch(config, images)
    probs, (w, caches, lnf) = _forward(config, params, images, dtype, keep_cache=True)
    dlogits = dprobs_fn(probs).astype(dtype, copy=False)
    S = config.seq_len
    dpooled = dlogits @ w["head.w"].T
    dyf = np.repeat(dpooled[:, None, :] / S, S, axis=1)
    dh = _layer_norm_back(dyf, w["ln.g"], lnf)
    for i in reversed(range(config.num_layers)):
        p = f"block{i}."
        ln1, yt, a1, g1, ln2, y2, a2, g2 = caches[i]
        # channel-mixing branch
        dg2 = dh @ w[p + "ch.w2"].T
        da2 = dg2 * _gelu_grad(a2)
        dy2 = da2 @ w[p + "ch.w1"].T
        dh = dh + _layer_norm_back(dy2, w[p + "ln2.g"], ln2)
        # token-mixing branch
        dz = dh.transpose(0, 2, 1)
        dg1 = dz @ w[p + "tok.w2"].T
        da1 = dg1 * _gelu_grad(a1)
        dyt = da1 @ w[p + "tok.w1"].T
        dh = dh + _layer_norm_back(dyt.transpose(0, 2, 1), w[p + "ln1.g"], ln1)
    dx = dh @ w["embed.w"].T
    grad = _unpatchify(config, dx)
    return (grad[0] if single else grad), probs


def label_index(labels) -> np.ndarray:
    labels = np.atleast_1d(np.asarray(labels))
    if not np.all(np.isin(labels, (1, 2))):
        raise ValueError("labels must be 1 or 2")
    return labels.astype(int) - 1


def cross_entropy(probs: np.ndarray, labels) -> np.ndarray:
    idx = label_index(labels)
    return -np.log(probs[np.arange(len(idx)), idx])


def input_gradient(config: MixerConfig, params, image, true_label, dtype=np.float32):
    """Gradient of the cross-entropy loss w.r.t. every input pixel.

    Accepts a single image ``(side, side)`` with a scalar label or a batch
    ``(B, side, side)`` with ``B`` labels.
    """
    idx = label_index(true_label)

    def dlogits(probs):
        d = probs.copy()
        d[np.arange(len(idx)), idx] -= 1.0
        return d

    grad, _ = input_gradient_from_probs_grad(config, params, image, dlogits, dtype)
    return grad

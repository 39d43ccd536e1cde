"""Dense multilayer perceptrons in numpy: forward, reverse-mode gradients,
Adam, and a versioned checkpoint format."""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass, field

import numpy as np

CHECKPOINT_FORMAT = "vecedge-mlp"
CHECKPOINT_VERSION = 1
ACTIVATIONS = ("relu", "tanh", "identity")


class CheckpointError(ValueError):
    """Checkpoint file is truncated, corrupt or not an MLP checkpoint."""


class CheckpointVersionError(CheckpointError):
    pass


@dataclass
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str = "identity"


@dataclass
class Mlp:
    layers: list[Layer]

    def __post_init__(self):
        for a, b in zip(self.layers, self.layers[1:]):
            if a.weight.shape[0] != b.weight.shape[1]:
                raise ValueError("layer dimensions do not chain")
        for layer in self.layers:
            if layer.activation not in ACTIVATIONS:
                raise ValueError(f"unknown activation {layer.activation!r}")

    @property
    def in_dim(self) -> int:
        return self.layers[0].weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].weight.shape[0]

    @property
    def dtype(self):
        return self.layers[0].weight.dtype

    def params(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out += [layer.weight, layer.bias]
        return out

    def copy(self) -> "Mlp":
        return Mlp([Layer(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers])

    def __call__(self, x):
        return forward(self, x)[0]


def init_mlp(sizes, activations, rng: np.random.Generator, final_scale: float = 1.0,
             dtype=np.float64) -> Mlp:
    """Uniform(+-1/sqrt(fan_in)) initialization; the last layer is scaled by ``final_scale``."""
    if len(activations) != len(sizes) - 1:
        raise ValueError("need one activation per layer")
    layers = []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        bound = 1.0 / np.sqrt(fan_in)
        if i == len(sizes) - 2:
            bound *= final_scale
        w = rng.uniform(-bound, bound, size=(fan_out, fan_in)).astype(dtype)
        b = rng.uniform(-bound, bound, size=fan_out).astype(dtype)
        layers.append(Layer(w, b, activations[i]))
    return Mlp(layers)


def _act(name, z):
    if name == "relu":
        return np.maximum(z, 0)
    if name == "tanh":
        return np.tanh(z)
    return z


def forward(net: Mlp, x):
    """Returns (output, cache). Accepts a single vector or a (batch, in) array."""
    x = np.asarray(x, dtype=net.dtype)
    single = x.ndim == 1
    h = x[None, :] if single else x
    if h.shape[1] != net.in_dim:
        raise ValueError(f"input has {h.shape[1]} features, network expects {net.in_dim}")
    cache = []
    for layer in net.layers:
        z = h @ layer.weight.T + layer.bias
        a = _act(layer.activation, z)
        cache.append((h, z, a))
        h = a
    cache.append(single)
    return (h[0] if single else h), cache


def backward(net: Mlp, cache, grad_out, param_grads: bool = True):
    """Reverse-mode pass.

    Returns ``(grads, grad_in)`` where ``grads`` is a list of ``(dW, db)``
    per layer (``None`` when ``param_grads`` is false). Gradients are summed
    over the batch dimension.
    """
    single = cache[-1]
    g = np.asarray(grad_out, dtype=net.dtype)
    if single:
        g = g[None, :]
    grads = [None] * len(net.layers)
    for i in range(len(net.layers) - 1, -1, -1):
        layer = net.layers[i]
        h, z, a = cache[i]
        if layer.activation == "relu":
            g = g * (z > 0)
        elif layer.activation == "tanh":
            g = g * (1.0 - a * a)
        if param_grads:
            grads[i] = (g.T @ h, g.sum(axis=0))
        g = g @ layer.weight
    return (grads if param_grads else None), (g[0] if single else g)


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_net(cls, net: Mlp, lr: float, **kw) -> "AdamState":
        st = cls(lr=lr, **kw)
        st.m = [np.zeros_like(p) for p in net.params()]
        st.v = [np.zeros_like(p) for p in net.params()]
        return st


def adam_step(net: Mlp, grads, state: AdamState) -> Mlp:
    """In-place bias-corrected Adam descent step on ``net``."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    flat = [g for pair in grads for g in pair]
    step_size = state.lr / c1
    root_c2 = np.sqrt(c2)
    for p, g, m, v in zip(net.params(), flat, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        denom = np.sqrt(v)
        denom /= root_c2
        denom += state.eps
        upd = m / denom
        upd *= step_size
        p -= upd
    return net


def save_params(net: Mlp, path) -> None:
    meta = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "layers": [{"shape": list(l.weight.shape), "activation": l.activation} for l in net.layers],
        "dtype": str(net.dtype),
    }
    arrays = {"meta": np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)}
    for i, layer in enumerate(net.layers):
        arrays[f"w{i}"] = layer.weight
        arrays[f"b{i}"] = layer.bias
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_params(path) -> Mlp:
    with open(path, "rb") as fh:
        data = fh.read()
    try:
        with np.load(io.BytesIO(data), allow_pickle=False) as z:
            meta = json.loads(bytes(z["meta"]).decode())
            if meta.get("format") != CHECKPOINT_FORMAT:
                raise CheckpointError(f"{path}: not an MLP checkpoint")
            if meta.get("version") != CHECKPOINT_VERSION:
                raise CheckpointVersionError(
                    f"{path}: checkpoint version {meta.get('version')}, expected {CHECKPOINT_VERSION}")
            layers = []
            for i, spec in enumerate(meta["layers"]):
                w, b = z[f"w{i}"], z[f"b{i}"]
                if list(w.shape) != spec["shape"] or b.shape != (spec["shape"][0],):
                    raise CheckpointError(f"{path}: layer {i} shape mismatch")
                layers.append(Layer(w, b, spec["activation"]))
    except CheckpointError:
        raise
    except (zipfile.BadZipFile, KeyError, ValueError, EOFError) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint ({exc})") from exc
    return Mlp(layers)

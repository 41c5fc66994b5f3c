"""Small mask-estimation networks with hand-written forward and backward passes."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

FORMAT_VERSION = 1
N_BINS = 257

TEACHER_DIMS = (N_BINS, 512, N_BINS)
STUDENT_DIMS = {
    "small": (N_BINS, 256, N_BINS),
    "tiny": (N_BINS, 128, N_BINS),
}


@dataclass
class MaskNet:
    layer_dims: tuple
    weights: list
    biases: list
    seed: int | None = None
    training_meta: dict = field(default_factory=dict)

    @property
    def n_params(self) -> int:
        return param_count(self.layer_dims)

    def copy(self) -> "MaskNet":
        return MaskNet(tuple(self.layer_dims), [w.copy() for w in self.weights],
                       [b.copy() for b in self.biases], self.seed, dict(self.training_meta))

    def parameters(self):
        return self.weights + self.biases


@dataclass
class GradientBuffer:
    weights: list
    biases: list

    @classmethod
    def zeros_like(cls, net: MaskNet) -> "GradientBuffer":
        return cls([np.zeros_like(w) for w in net.weights], [np.zeros_like(b) for b in net.biases])

    def parameters(self):
        return self.weights + self.biases

    def norm(self) -> float:
        return float(np.sqrt(sum(np.sum(g * g) for g in self.parameters())))

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(g)) for g in self.parameters())


def _check_dims(layer_dims):
    dims = tuple(int(d) for d in layer_dims)
    if len(dims) < 2 or dims[0] != N_BINS or dims[-1] != N_BINS or min(dims) < 1:
        raise ValueError(f"layer dims must start and end at {N_BINS}, got {list(dims)}")
    return dims


def param_count(layer_dims) -> int:
    return sum(a * b + b for a, b in zip(layer_dims[:-1], layer_dims[1:]))


def forward_flops(layer_dims) -> int:
    """Multiply-add count of one frame through the dense layers (2 per MAC)."""
    return sum(2 * a * b for a, b in zip(layer_dims[:-1], layer_dims[1:]))


def init(layer_dims=TEACHER_DIMS, seed: int = 0) -> MaskNet:
    """He-uniform hidden layers, Xavier-uniform output layer, zero biases."""
    dims = _check_dims(layer_dims)
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    n_layers = len(dims) - 1
    for i, (d_in, d_out) in enumerate(zip(dims[:-1], dims[1:])):
        if i < n_layers - 1:
            limit = np.sqrt(6.0 / d_in)
        else:
            limit = np.sqrt(6.0 / (d_in + d_out))
        weights.append(rng.uniform(-limit, limit, size=(d_in, d_out)))
        biases.append(np.zeros(d_out))
    return MaskNet(dims, weights, biases, seed)


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def features(noisy_spec) -> np.ndarray:
    """log(1 + |X|) input features."""
    return np.log1p(np.abs(noisy_spec))


def forward(net: MaskNet, x):
    """Mask in (0, 1) for each row of ``x`` (frames x 257 log-magnitudes)."""
    x = np.asarray(x, dtype=np.float64)
    if np.isnan(x).any():
        raise ValueError("forward: NaN in input features")
    single = x.ndim == 1
    a = np.atleast_2d(x)
    acts = [a]
    pre = []
    n_layers = len(net.weights)
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        z = a @ w + b
        pre.append(z)
        a = np.maximum(z, 0.0) if i < n_layers - 1 else sigmoid(z)
        acts.append(a)
    cache = {"acts": acts, "pre": pre, "single": single}
    return (a[0] if single else a), cache


def backward(net: MaskNet, cache, upstream, input_grad: bool = True):
    """Reverse-mode gradients of ``sum(upstream * mask)`` over all rows.

    Returns ``(GradientBuffer, input_grad)``; the second item is None when
    ``input_grad`` is False, which skips one matrix product.
    """
    acts, pre = cache["acts"], cache["pre"]
    g = np.atleast_2d(np.asarray(upstream, dtype=np.float64))
    if g.shape != acts[-1].shape:
        raise ValueError(f"upstream shape {g.shape} does not match output {acts[-1].shape}")
    out = acts[-1]
    delta = g * out * (1.0 - out)
    gw, gb = [], []
    for i in range(len(net.weights) - 1, -1, -1):
        gw.append(acts[i].T @ delta)
        gb.append(delta.sum(axis=0))
        if i == 0 and not input_grad:
            delta = None
            break
        delta = delta @ net.weights[i].T
        if i > 0:
            delta = delta * (pre[i - 1] > 0)
    grads = GradientBuffer(gw[::-1], gb[::-1])
    if delta is None:
        return grads, None
    return grads, (delta[0] if cache["single"] else delta)


def apply_mask(mask, noisy_frame):
    return np.asarray(mask) * np.asarray(noisy_frame)


def mask_grad(spec_grad, noisy_spec):
    """Chain a complex gradient on ``mask * noisy`` back onto the real mask."""
    return np.real(np.conj(noisy_spec) * spec_grad)


def to_dict(net: MaskNet) -> dict:
    n_layers = len(net.weights)
    return {
        "format_version": FORMAT_VERSION,
        "layer_dims": list(net.layer_dims),
        "activations": ["relu"] * (n_layers - 1) + ["sigmoid"],
        "weights": [w.tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
        "seed": net.seed,
        "training_meta": net.training_meta,
    }


def from_dict(payload: dict) -> MaskNet:
    if payload.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported checkpoint format {payload.get('format_version')!r}")
    dims = _check_dims(payload["layer_dims"])
    weights = [np.array(w, dtype=np.float64) for w in payload["weights"]]
    biases = [np.array(b, dtype=np.float64) for b in payload["biases"]]
    for i, (d_in, d_out) in enumerate(zip(dims[:-1], dims[1:])):
        if weights[i].shape != (d_in, d_out) or biases[i].shape != (d_out,):
            raise ValueError(f"layer {i} shape does not match layer_dims")
    return MaskNet(dims, weights, biases, payload.get("seed"), payload.get("training_meta", {}))


def dumps(net: MaskNet) -> str:
    # float repr is the shortest string that round-trips a float64 exactly
    return json.dumps(to_dict(net), sort_keys=True, separators=(",", ":"))


def save(net: MaskNet, path) -> None:
    Path(path).write_text(dumps(net) + "\n")


def load(path) -> MaskNet:
    return from_dict(json.loads(Path(path).read_text()))

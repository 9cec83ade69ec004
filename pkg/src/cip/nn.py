"""Small fully connected networks with explicit backpropagation and Adam."""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .rng import stream


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class Mlp:
    """ReLU hidden layers and an identity or logistic output.

    ``x_shift``/``x_scale`` standardise inputs and ``y_shift``/``y_scale`` map
    the raw head back to target units; both default to the identity and are
    part of the model, so ``forward`` always works in data units.
    """

    def __init__(self, dims, output: str = "identity", seed: int = 0, weights=None, biases=None):
        if output not in ("identity", "logistic"):
            raise ValueError(f"unknown output activation {output!r}")
        self.dims = [int(d) for d in dims]
        if len(self.dims) < 2 or min(self.dims) < 1:
            raise ValueError(f"bad layer dims {dims}")
        self.output = output
        if weights is None:
            rng = stream(seed, "init")
            weights, biases = [], []
            for fan_in, fan_out in zip(self.dims, self.dims[1:]):
                bound = np.sqrt(6.0 / fan_in)  # He-uniform for ReLU
                weights.append(rng.uniform(-bound, bound, (fan_in, fan_out)))
                biases.append(np.zeros(fan_out))
        self.weights = [np.array(w, dtype=float) for w in weights]
        self.biases = [np.array(b, dtype=float).reshape(-1) for b in biases]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (self.dims[i], self.dims[i + 1]) or b.shape != (self.dims[i + 1],):
                raise ValueError(f"layer {i} has inconsistent shapes {w.shape}, {b.shape}")
        self.x_shift = np.zeros(self.dims[0])
        self.x_scale = np.ones(self.dims[0])
        self.y_shift = np.zeros(self.dims[-1])
        self.y_scale = np.ones(self.dims[-1])

    @property
    def params(self) -> list:
        return [p for wb in zip(self.weights, self.biases) for p in wb]

    def forward(self, x, cache: bool = False):
        x = np.asarray(x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1) if self.dims[0] == 1 else x.reshape(1, -1)
        if x.shape[1] != self.dims[0]:
            raise ValueError(f"input has {x.shape[1]} columns, network expects {self.dims[0]}")
        h = (x - self.x_shift) / self.x_scale
        acts = [h]
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ w + b
            if i < last:
                h = np.maximum(z, 0.0)
            elif self.output == "logistic":
                h = _sigmoid(z)
            else:
                h = z * self.y_scale + self.y_shift
            acts.append(h)
        return (h, acts) if cache else h

    __call__ = forward

    def backward(self, acts, upstream):
        """Parameter gradients (same order as ``params``) and the input gradient.

        ``upstream`` is d(loss)/d(output). For a logistic head the gradient is
        taken through the sigmoid.
        """
        g = np.asarray(upstream, dtype=float)
        if g.shape != acts[-1].shape:
            raise ValueError(f"upstream gradient has shape {g.shape}, expected {acts[-1].shape}")
        if self.output == "logistic":
            out = acts[-1]
            g = g * out * (1 - out)
        else:
            g = g * self.y_scale
        grads = []
        for i in range(len(self.weights) - 1, -1, -1):
            h_in = acts[i]
            grads.append(g.sum(axis=0))
            grads.append(h_in.T @ g)
            g = g @ self.weights[i].T
            if i > 0:
                g = g * (acts[i] > 0)
        grads.reverse()  # appended as b_L, w_L, ..., so this yields w_0, b_0, ...
        return grads, g / self.x_scale

    def to_dict(self) -> dict:
        return {
            "layer_dims": self.dims,
            "hidden_activation": "relu",
            "output_activation": self.output,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
            "x_shift": self.x_shift.tolist(),
            "x_scale": self.x_scale.tolist(),
            "y_shift": self.y_shift.tolist(),
            "y_scale": self.y_scale.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Mlp":
        m = cls(d["layer_dims"], d.get("output_activation", "identity"),
                weights=d["weights"], biases=d["biases"])
        for k in ("x_shift", "x_scale", "y_shift", "y_scale"):
            if k in d:
                setattr(m, k, np.asarray(d[k], dtype=float))
        return m

    def save(self, path, extra: dict | None = None) -> None:
        d = self.to_dict()
        if extra:
            d["meta"] = extra
        with open(path, "w") as fh:
            json.dump(d, fh)

    @classmethod
    def load(cls, path) -> "Mlp":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def mlp_forward(m: Mlp, x) -> np.ndarray:
    return m.forward(x)


def mlp_backward(m: Mlp, x, upstream):
    _, acts = m.forward(x, cache=True)
    return m.backward(acts, upstream)


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(state: AdamState, params: list, grads: list) -> AdamState:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.t += 1
    c1 = 1 - state.beta1 ** state.t
    c2 = 1 - state.beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        m *= state.beta1
        m += (1 - state.beta1) * g
        v *= state.beta2
        v += (1 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return state

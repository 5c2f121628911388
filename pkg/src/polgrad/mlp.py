"""Fully connected tanh network over a flat parameter vector.

Parameters are laid out layer by layer as ``W`` (row-major, out x in)
followed by ``b``.  Hidden layers use tanh, the output layer is linear.
Both Jacobians are accumulated in reverse mode from the cached activations.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Mlp:
    sizes: tuple

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.sizes)
        if len(sizes) < 2 or min(sizes) < 1:
            raise ValueError(f"invalid layer sizes {self.sizes}")
        object.__setattr__(self, "sizes", sizes)

    @property
    def n_in(self) -> int:
        return self.sizes[0]

    @property
    def n_out(self) -> int:
        return self.sizes[-1]

    @property
    def n_params(self) -> int:
        return sum((fan_in + 1) * fan_out for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]))

    def unflatten(self, theta) -> list[tuple[np.ndarray, np.ndarray]]:
        theta = np.asarray(theta, dtype=float)
        if theta.shape != (self.n_params,):
            raise ValueError(f"expected {self.n_params} parameters, got shape {theta.shape}")
        layers = []
        i = 0
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            W = theta[i:i + fan_in * fan_out].reshape(fan_out, fan_in)
            i += fan_in * fan_out
            b = theta[i:i + fan_out]
            i += fan_out
            layers.append((W, b))
        return layers

    def init(self, rng: np.random.Generator) -> np.ndarray:
        """Hidden weights ~ U(+-1/sqrt(fan_in)), hidden biases zero, output layer zero."""
        parts = []
        n_layers = len(self.sizes) - 1
        for k, (fan_in, fan_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            if k == n_layers - 1:
                parts.append(np.zeros(fan_in * fan_out + fan_out))
            else:
                bound = 1.0 / np.sqrt(fan_in)
                parts.append(rng.uniform(-bound, bound, size=fan_in * fan_out))
                parts.append(np.zeros(fan_out))
        return np.concatenate(parts)

    def forward(self, theta, inp) -> tuple[np.ndarray, list]:
        """Returns the output and the list of layer activations (input first)."""
        h = np.asarray(inp, dtype=float)
        if h.shape != (self.n_in,):
            raise ValueError(f"network input must have shape ({self.n_in},), got {h.shape}")
        layers = self.unflatten(theta)
        acts = [h]
        for k, (W, b) in enumerate(layers):
            z = W @ h + b
            h = z if k == len(layers) - 1 else np.tanh(z)
            acts.append(h)
        return h, acts

    def _deltas(self, layers, acts) -> list[np.ndarray]:
        # deltas[k] = d out / d z_k, shape (n_out, sizes[k+1])
        L = len(layers)
        deltas = [None] * L
        d = np.eye(self.n_out)
        deltas[L - 1] = d
        for k in range(L - 1, 0, -1):
            W, _ = layers[k]
            h = acts[k]
            d = (d @ W) * (1.0 - h * h)
            deltas[k - 1] = d
        return deltas

    def jacobians(self, theta, inp) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Returns (output, d out/d theta, d out/d input)."""
        out, acts = self.forward(theta, inp)
        layers = self.unflatten(theta)
        deltas = self._deltas(layers, acts)
        blocks = []
        for k, d in enumerate(deltas):
            h_prev = acts[k]
            blocks.append((d[:, :, None] * h_prev[None, None, :]).reshape(self.n_out, -1))
            blocks.append(d)
        dparam = np.concatenate(blocks, axis=1)
        dinput = deltas[0] @ layers[0][0]
        return out, dparam, dinput

    def param_jacobian(self, theta, inp) -> np.ndarray:
        return self.jacobians(theta, inp)[1]

    def input_jacobian(self, theta, inp) -> np.ndarray:
        out, acts = self.forward(theta, inp)
        layers = self.unflatten(theta)
        return self._deltas(layers, acts)[0] @ layers[0][0]


def mlp_forward(net: Mlp, theta, inp):
    return net.forward(theta, inp)


def mlp_param_jacobian(net: Mlp, theta, inp) -> np.ndarray:
    return net.param_jacobian(theta, inp)


def mlp_input_jacobian(net: Mlp, theta, inp) -> np.ndarray:
    return net.input_jacobian(theta, inp)

"""Fully connected tanh networks with explicit reverse-mode gradients.

Parameters live in one flat float64 vector so optimizers, checkpoints and
finite-difference checks can treat every network the same way.  Layout is
``W_0, b_0, W_1, b_1, ...`` with ``W_i`` stored row-major as
``(fan_in, fan_out)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgument, NumericalFailure

ACTIVATIONS = ("tanh", "linear")


@dataclass(frozen=True)
class MLPSpec:
    """Architecture of a dense network: hidden layers use tanh.

    ``output_activation`` is applied to the final layer only.
    """

    sizes: tuple[int, ...]
    output_activation: str = "linear"

    def __post_init__(self) -> None:
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))
        if len(self.sizes) < 2 or min(self.sizes) < 1:
            raise InvalidArgument(f"invalid layer sizes {self.sizes}")
        if self.output_activation not in ACTIVATIONS:
            raise InvalidArgument(f"unknown activation {self.output_activation!r}")

    @property
    def input_dim(self) -> int:
        return self.sizes[0]

    @property
    def output_dim(self) -> int:
        return self.sizes[-1]

    @property
    def n_params(self) -> int:
        return sum(a * b + b for a, b in zip(self.sizes[:-1], self.sizes[1:]))

    def init(self, rng: np.random.Generator) -> np.ndarray:
        """Glorot-uniform weights, zero biases."""
        chunks = []
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            chunks.append(rng.uniform(-limit, limit, size=fan_in * fan_out))
            chunks.append(np.zeros(fan_out))
        return np.concatenate(chunks)

    def unpack(self, params: np.ndarray) -> list[tuple[np.ndarray, np.ndarray]]:
        if params.shape != (self.n_params,):
            raise InvalidArgument(f"expected {self.n_params} parameters, got {params.shape}")
        layers = []
        offset = 0
        for fan_in, fan_out in zip(self.sizes[:-1], self.sizes[1:]):
            W = params[offset:offset + fan_in * fan_out].reshape(fan_in, fan_out)
            offset += fan_in * fan_out
            b = params[offset:offset + fan_out]
            offset += fan_out
            layers.append((W, b))
        return layers

    def forward(self, params: np.ndarray, X: np.ndarray) -> tuple[np.ndarray, list]:
        """Evaluate the network on the rows of ``X``.

        Returns the output and a cache of per-layer inputs/outputs for :meth:`backward`.
        """
        layers = self.unpack(params)
        h = X
        cache = []
        last = len(layers) - 1
        for i, (W, b) in enumerate(layers):
            z = h @ W + b
            out = z if (i == last and self.output_activation == "linear") else np.tanh(z)
            cache.append((h, out))
            h = out
        return h, cache

    def __call__(self, params: np.ndarray, X: np.ndarray) -> np.ndarray:
        return self.forward(params, X)[0]

    def backward(self, params: np.ndarray, cache: list, grad_out: np.ndarray) -> np.ndarray:
        """Gradient of a scalar loss w.r.t. the flat parameters, given dL/d(output)."""
        layers = self.unpack(params)
        grads: list[np.ndarray] = []
        g = grad_out
        last = len(layers) - 1
        for i in range(last, -1, -1):
            W, _ = layers[i]
            h_in, out = cache[i]
            if not (i == last and self.output_activation == "linear"):
                g = g * (1.0 - out * out)
            grads.append(g.sum(axis=0))
            grads.append((h_in.T @ g).ravel())
            if i > 0:
                g = g @ W.T
        return np.concatenate(grads[::-1])


class Adam:
    """Adam optimizer over a flat parameter vector (minimization)."""

    def __init__(self, n_params: int, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(n_params)
        self.v = np.zeros(n_params)
        self.t = 0

    def step(self, params: np.ndarray, grad: np.ndarray) -> np.ndarray:
        """Return updated parameters; ``params`` itself is not modified."""
        if not np.all(np.isfinite(grad)):
            raise NumericalFailure("non-finite gradient passed to optimizer")
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1 ** self.t)
        v_hat = self.v / (1.0 - self.beta2 ** self.t)
        return params - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

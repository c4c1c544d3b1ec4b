"""Multilayer perceptron baseline with manual backpropagation.

Two hidden linear layers, each followed by the chosen activation, then a
linear read-out.  The interface mirrors the neuro-fuzzy network so the same
optimizer and RL harness drive either model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, StructuralError, UsageError


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


_SELU_ALPHA = 1.6732632423543772
_SELU_SCALE = 1.0507009873554805

# name -> (f(x), f'(x) given x)
ACTIVATIONS = {
    "ReLU": (lambda x: np.maximum(x, 0.0), lambda x: (x > 0).astype(float)),
    "LeakyReLU": (lambda x: np.where(x > 0, x, 0.01 * x), lambda x: np.where(x > 0, 1.0, 0.01)),
    "ReLU6": (lambda x: np.clip(x, 0.0, 6.0), lambda x: ((x > 0) & (x < 6)).astype(float)),
    "ELU": (lambda x: np.where(x > 0, x, np.expm1(np.minimum(x, 0.0))),
            lambda x: np.where(x > 0, 1.0, np.exp(np.minimum(x, 0.0)))),
    "CELU": (lambda x: np.where(x > 0, x, np.expm1(np.minimum(x, 0.0))),
             lambda x: np.where(x > 0, 1.0, np.exp(np.minimum(x, 0.0)))),
    "SELU": (lambda x: _SELU_SCALE * np.where(x > 0, x, _SELU_ALPHA * np.expm1(np.minimum(x, 0.0))),
             lambda x: _SELU_SCALE * np.where(x > 0, 1.0, _SELU_ALPHA * np.exp(np.minimum(x, 0.0)))),
    "Sigmoid": (_sigmoid, lambda x: _sigmoid(x) * (1.0 - _sigmoid(x))),
    "LogSigmoid": (lambda x: -np.logaddexp(0.0, -x), lambda x: 1.0 - _sigmoid(x)),
    "Tanh": (np.tanh, lambda x: 1.0 - np.tanh(x) ** 2),
    "Tanhshrink": (lambda x: x - np.tanh(x), lambda x: np.tanh(x) ** 2),
    "Softsign": (lambda x: x / (1.0 + np.abs(x)), lambda x: 1.0 / (1.0 + np.abs(x)) ** 2),
    "Softplus": (lambda x: np.logaddexp(0.0, x), _sigmoid),
    "Softshrink": (lambda x: np.where(x > 0.5, x - 0.5, np.where(x < -0.5, x + 0.5, 0.0)),
                   lambda x: (np.abs(x) > 0.5).astype(float)),
    "Hardshrink": (lambda x: np.where(np.abs(x) > 0.5, x, 0.0), lambda x: (np.abs(x) > 0.5).astype(float)),
    "Hardtanh": (lambda x: np.clip(x, -1.0, 1.0), lambda x: (np.abs(x) < 1).astype(float)),
    "Hardsigmoid": (lambda x: np.clip(x / 6.0 + 0.5, 0.0, 1.0), lambda x: (np.abs(x) < 3) / 6.0),
    "Hardswish": (lambda x: x * np.clip(x / 6.0 + 0.5, 0.0, 1.0),
                  lambda x: np.where(x <= -3, 0.0, np.where(x >= 3, 1.0, x / 3.0 + 0.5))),
    "SiLU": (lambda x: x * _sigmoid(x), lambda x: _sigmoid(x) * (1.0 + x * (1.0 - _sigmoid(x)))),
    "Mish": (lambda x: x * np.tanh(np.logaddexp(0.0, x)),
             lambda x: np.tanh(np.logaddexp(0.0, x))
             + x * _sigmoid(x) * (1.0 - np.tanh(np.logaddexp(0.0, x)) ** 2)),
}


def _gelu(x):
    from scipy.special import erf
    return 0.5 * x * (1.0 + erf(x / np.sqrt(2.0)))


def _gelu_grad(x):
    from scipy.special import erf
    return 0.5 * (1.0 + erf(x / np.sqrt(2.0))) + x * np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)


ACTIVATIONS["GELU"] = (_gelu, _gelu_grad)


@dataclass
class MlpTape:
    X: np.ndarray
    pre: list[np.ndarray]
    post: list[np.ndarray]
    stamp: int


class MLP:
    """Fully connected network ``in -> hidden -> hidden -> out``."""

    def __init__(self, in_dim: int, out_dim: int, hidden: int = 128, activation: str = "ReLU",
                 rng: np.random.Generator | None = None):
        if activation not in ACTIVATIONS:
            raise ConfigError(f"unknown activation {activation!r}; choose from {sorted(ACTIVATIONS)}")
        if min(in_dim, out_dim, hidden) < 1:
            raise ConfigError("layer sizes must be positive")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.activation = activation
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in ((in_dim, hidden), (hidden, hidden), (hidden, out_dim)):
            bound = 1.0 / np.sqrt(fan_in)
            self.weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            self.biases.append(rng.uniform(-bound, bound, size=fan_out))
        self.version = 0

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def blocks(self) -> list:
        # no neuro-fuzzy blocks, hence no neurogenesis or cardinality hooks
        return []

    def parameters(self) -> dict[str, np.ndarray]:
        params = {}
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            params[f"W{k}"] = W
            params[f"b{k}"] = b
        return params

    def enforce_constraints(self) -> None:
        self.version += 1

    def forward(self, X, rng=None, evaluate: bool = False, **_):
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.in_dim:
            raise StructuralError(f"expected input of shape (n, {self.in_dim}), got {X.shape}")
        f = ACTIVATIONS[self.activation][0]
        pre, post = [], []
        h = X
        for k, (W, b) in enumerate(zip(self.weights, self.biases)):
            z = h @ W + b
            if k < len(self.weights) - 1:
                pre.append(z)
                h = f(z)
                post.append(h)
            else:
                h = z
        return h, MlpTape(X, pre, post, self.version)

    def __call__(self, X, **kwargs) -> np.ndarray:
        return self.forward(X, **kwargs)[0]

    def backward(self, tape: MlpTape, dy):
        from ..training import GradientSet

        if tape.stamp != self.version:
            raise UsageError("tape is stale: the network changed after the forward pass")
        df = ACTIVATIONS[self.activation][1]
        grads = {}
        g = np.asarray(dy, dtype=float)
        inputs = [tape.X] + tape.post
        for k in reversed(range(len(self.weights))):
            grads[f"W{k}"] = inputs[k].T @ g
            grads[f"b{k}"] = g.sum(axis=0)
            g = g @ self.weights[k].T
            if k > 0:
                g = g * df(tape.pre[k - 1])
        return GradientSet(grads, g)

    def copy(self) -> MLP:
        twin = MLP.__new__(MLP)
        twin.activation = self.activation
        twin.weights = [W.copy() for W in self.weights]
        twin.biases = [b.copy() for b in self.biases]
        twin.version = 0
        return twin

    def load_parameters_from(self, other: MLP) -> None:
        self.weights = [W.copy() for W in other.weights]
        self.biases = [b.copy() for b in other.biases]
        self.version += 1

    def to_dict(self) -> dict:
        return {"kind": "mlp", "activation": self.activation,
                "weights": [W.tolist() for W in self.weights],
                "biases": [b.tolist() for b in self.biases]}

    @classmethod
    def from_dict(cls, doc: dict) -> MLP:
        net = cls.__new__(cls)
        net.activation = doc["activation"]
        net.weights = [np.asarray(W, dtype=float) for W in doc["weights"]]
        net.biases = [np.asarray(b, dtype=float) for b in doc["biases"]]
        net.version = 0
        return net

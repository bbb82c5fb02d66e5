"""The target MLP and the standardized L1-norm regression task."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Sequence, Union

import numpy as np

from . import tensor as T
from .errors import ConfigError, DomainError, ShapeError
from .tensor import Tensor

ArrayLike = Union[np.ndarray, Tensor]


def l1_moments(n_inputs: int) -> tuple[float, float]:
    """Mean and standard deviation of ||x||_1 for x ~ N(0, I_n).

    Each |x_i| is half-normal with mean sqrt(2/pi) and variance 1 - 2/pi.
    """
    mu = n_inputs * math.sqrt(2.0 / math.pi)
    sigma = math.sqrt(n_inputs * (1.0 - 2.0 / math.pi))
    return mu, sigma


@dataclass(frozen=True)
class MlpSpec:
    layer_sizes: tuple

    def __post_init__(self):
        sizes = tuple(int(s) for s in self.layer_sizes)
        if len(sizes) < 2 or any(s < 1 for s in sizes):
            raise ConfigError(f"invalid layer sizes {self.layer_sizes}")
        object.__setattr__(self, "layer_sizes", sizes)

    @classmethod
    def l1(cls, n_inputs: int, n_hidden: int) -> "MlpSpec":
        return cls((n_inputs, n_hidden, 1))

    @property
    def n_inputs(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_hidden(self) -> int:
        return self.layer_sizes[1]

    @property
    def n_layers(self) -> int:
        """Number of weight layers N."""
        return len(self.layer_sizes) - 1

    def layer_shapes(self) -> list:
        """(out, in) shape of every weight matrix."""
        s = self.layer_sizes
        return [(s[k + 1], s[k]) for k in range(self.n_layers)]

    def n_positions(self) -> int:
        return sum(o * i for o, i in self.layer_shapes())


@dataclass
class MlpWeights:
    """Per-layer weights ``W[l]`` of shape (out, in) and biases ``b[l]`` of shape (out,).

    Entries may be numpy arrays or graph-connected Tensors.
    """

    weights: List[ArrayLike]
    biases: List[ArrayLike]

    @property
    def spec(self) -> MlpSpec:
        sizes = [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]
        return MlpSpec(tuple(sizes))

    def numpy(self) -> "MlpWeights":
        conv = lambda a: a.numpy() if isinstance(a, Tensor) else np.array(a, dtype=np.float64)  # noqa: E731
        return MlpWeights([conv(w) for w in self.weights], [conv(b) for b in self.biases])

    def first_layer(self) -> np.ndarray:
        """First-layer matrix in (input, hidden) orientation, as the order parameters expect."""
        w = self.weights[0]
        w = w.numpy() if isinstance(w, Tensor) else np.asarray(w)
        return w.T.copy()

    def validate(self, spec: MlpSpec | None = None) -> None:
        spec = spec or self.spec
        if len(self.weights) != spec.n_layers or len(self.biases) != spec.n_layers:
            raise ShapeError("layer count does not match spec")
        for w, b, shape in zip(self.weights, self.biases, spec.layer_shapes()):
            if tuple(w.shape) != shape or tuple(b.shape) != (shape[0],):
                raise ShapeError(f"weight shape {w.shape}/{b.shape} does not match {shape}")
            wd = w.data if isinstance(w, Tensor) else np.asarray(w)
            bd = b.data if isinstance(b, Tensor) else np.asarray(b)
            if not (np.isfinite(wd).all() and np.isfinite(bd).all()):
                raise DomainError("non-finite weights")

    @classmethod
    def zeros(cls, spec: MlpSpec) -> "MlpWeights":
        return cls([np.zeros(s) for s in spec.layer_shapes()],
                   [np.zeros(s[0]) for s in spec.layer_shapes()])

    def to_dict(self) -> dict:
        w = self.numpy()
        return {
            "layer_sizes": list(self.spec.layer_sizes),
            "weights": [a.tolist() for a in w.weights],
            "biases": [a.tolist() for a in w.biases],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpWeights":
        out = cls([np.asarray(a, dtype=np.float64) for a in d["weights"]],
                  [np.asarray(a, dtype=np.float64) for a in d["biases"]])
        if "layer_sizes" in d:
            out.validate(MlpSpec(tuple(d["layer_sizes"])))
        return out


@dataclass
class TaskBatch:
    inputs: np.ndarray
    targets: np.ndarray

    @property
    def n_inputs(self) -> int:
        return self.inputs.shape[1]


def standardized_targets(inputs: np.ndarray) -> np.ndarray:
    mu, sigma = l1_moments(inputs.shape[1])
    return (np.abs(inputs).sum(axis=1) - mu) / sigma


def sample_batch(n_inputs: int, batch_size: int, rng: np.random.Generator) -> TaskBatch:
    if batch_size < 1:
        raise ConfigError("batch_size must be at least 1")
    x = rng.standard_normal((batch_size, n_inputs))
    return TaskBatch(x, standardized_targets(x))


def forward(w: MlpWeights, inputs) -> Tensor:
    """Network output of shape (batch, out); silu on hidden layers, affine output."""
    x = T.as_tensor(inputs)
    if x.ndim != 2 or x.shape[1] != w.weights[0].shape[1]:
        raise ShapeError(f"input width {x.shape} does not match first layer {w.weights[0].shape}")
    n = len(w.weights)
    for k, (W, b) in enumerate(zip(w.weights, w.biases)):
        x = T.matmul(x, T.transpose(T.as_tensor(W))) + T.as_tensor(b)
        if k < n - 1:
            x = T.silu(x)
    return x


def forward_numpy(w: MlpWeights, inputs: np.ndarray) -> np.ndarray:
    """Graph-free forward pass, used for large evaluation batches."""
    x = np.asarray(inputs, dtype=np.float64)
    w = w.numpy()
    if x.ndim != 2 or x.shape[1] != w.weights[0].shape[1]:
        raise ShapeError(f"input width {x.shape} does not match first layer {w.weights[0].shape}")
    n = len(w.weights)
    for k, (W, b) in enumerate(zip(w.weights, w.biases)):
        x = x @ W.T + b
        if k < n - 1:
            x = x * (0.5 * (1.0 + np.tanh(0.5 * x)))
    return x


def mse_loss(pred, targets) -> Tensor:
    pred = T.as_tensor(pred)
    targets = T.as_tensor(targets)
    if pred.ndim == 2:
        pred = T.reshape(pred, (pred.shape[0],)) if pred.shape[1] == 1 else pred
    if pred.size == 0:
        raise DomainError("mse of an empty batch")
    if pred.shape != targets.shape:
        raise ShapeError(f"prediction shape {pred.shape} does not match targets {targets.shape}")
    return T.square(pred - targets).mean()


def evaluate_mse(w: MlpWeights, batch: TaskBatch) -> float:
    pred = forward_numpy(w, batch.inputs)[:, 0]
    return float(np.mean((pred - batch.targets) ** 2))


def raw_l1_estimate(w: MlpWeights, inputs: np.ndarray) -> np.ndarray:
    """Undo the output standardization: the network's estimate of ||x||_1."""
    mu, sigma = l1_moments(np.asarray(inputs).shape[1])
    return forward_numpy(w, inputs)[:, 0] * sigma + mu


def permute_hidden(w: MlpWeights, perm: Sequence[int]) -> MlpWeights:
    """Relabel the hidden neurons of a one-hidden-layer network."""
    w = w.numpy()
    perm = np.asarray(perm)
    return MlpWeights([w.weights[0][perm], w.weights[1][:, perm]], [w.biases[0][perm], w.biases[1].copy()])

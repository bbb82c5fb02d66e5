"""Hand-built weights for the three L1 algorithms.

ReLU identities are realized with silu by scaling: silu(c*z)/c tends to
ReLU(z) as c grows, so inner weights carry a factor ``c_act`` and outer
weights a factor ``1/c_act``. The standardization affine of the task is folded
into the output layer, which makes every constructor directly comparable with
a trained network's MSE.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericError
from .network import MlpSpec, MlpWeights, l1_moments, sample_batch

_silu = lambda z: z * (0.5 * (1.0 + np.tanh(0.5 * z)))  # noqa: E731


@dataclass(frozen=True)
class ConstructorConfig:
    n_inputs: int = 16
    n_hidden: int = 48
    c_act: float = 50.0
    pudding_sign: str = "-"
    pudding_c: float = 100.0
    convexity_dist: str = "unimodal"
    convexity_sigma: float = 1.0
    convexity_mode: float = 1.0
    calibration_samples: int = 100_000

    def __post_init__(self):
        if self.c_act <= 0 or self.pudding_c <= 0:
            raise ConfigError("c_act and pudding_c must be positive")
        if self.pudding_sign not in "+-" or len(self.pudding_sign) != 1:
            raise ConfigError("pudding_sign must be '+' or '-'")
        if self.convexity_dist not in ("unimodal", "bimodal"):
            raise ConfigError("convexity_dist must be 'unimodal' or 'bimodal'")
        if self.n_inputs < 1 or self.n_hidden < 1:
            raise ConfigError("layer sizes must be positive")

    @property
    def spec(self) -> MlpSpec:
        return MlpSpec.l1(self.n_inputs, self.n_hidden)


def _output_affine(n_inputs: int) -> tuple[float, float]:
    mu, sigma = l1_moments(n_inputs)
    return 1.0 / sigma, -mu / sigma


def build_double_sided(cfg: ConstructorConfig) -> MlpWeights:
    """|x_i| = ReLU(x_i) + ReLU(-x_i), one hidden pair per input."""
    n0, n1, c = cfg.n_inputs, cfg.n_hidden, cfg.c_act
    if n1 < 2 * n0:
        raise ConfigError(f"double-sided needs n_hidden >= {2 * n0}, got {n1}")
    scale, shift = _output_affine(n0)
    W0 = np.zeros((n1, n0))
    W1 = np.zeros((1, n1))
    for i in range(n0):
        W0[2 * i, i] = c
        W0[2 * i + 1, i] = -c
        W1[0, 2 * i] = W1[0, 2 * i + 1] = scale / c
    return MlpWeights([W0, W1], [np.zeros(n1), np.array([shift])])


def _sign(cfg: ConstructorConfig) -> float:
    # "-" selects 2*sum ReLU(-x_i) + sum x_i
    return -1.0 if cfg.pudding_sign == "-" else 1.0


def build_pudding(cfg: ConstructorConfig) -> MlpWeights:
    """Exact signed pudding with n_inputs + 1 active hidden neurons.

    ||x||_1 = 2 sum_i ReLU(s x_i) - s sum_i x_i for s = -1 or +1. The linear
    term is computed by one extra neuron kept in its linear regime by a large
    offset C: -(ReLU(C + s sum x) - C) = -s sum x. Its inner weights share the
    sign of the per-input neurons, so every input's row is one-sided.
    """
    n0, n1, c = cfg.n_inputs, cfg.n_hidden, cfg.c_act
    if n1 < n0 + 1:
        raise ConfigError(f"pudding needs n_hidden >= {n0 + 1}, got {n1}")
    s = _sign(cfg)
    scale, shift = _output_affine(n0)
    W0 = np.zeros((n1, n0))
    b0 = np.zeros(n1)
    W1 = np.zeros((1, n1))
    for j in range(n0):
        W0[j, j] = s * c
        W1[0, j] = 2.0 * scale / c
    W0[n0, :] = s * c
    b0[n0] = c * cfg.pudding_c
    W1[0, n0] = -scale / c
    b1 = shift + scale * cfg.pudding_c
    return MlpWeights([W0, W1], [b0, np.array([b1])])


def build_pudding_imperfect(cfg: ConstructorConfig) -> MlpWeights:
    """Literal wiring of the imperfect pudding variant.

    Neuron j < n0 computes ReLU(s x_j - s sum_i x_i) with output weight 2;
    every remaining neuron computes ReLU(C - s sum_i x_i) - C with output
    weight 1. The sum term is over-counted, so this is measured, not trusted.
    """
    n0, n1, c = cfg.n_inputs, cfg.n_hidden, cfg.c_act
    if n1 < 2 * n0:
        raise ConfigError(f"imperfect pudding needs n_hidden >= {2 * n0}, got {n1}")
    s = _sign(cfg)
    scale, shift = _output_affine(n0)
    W0 = np.zeros((n1, n0))
    b0 = np.zeros(n1)
    W1 = np.zeros((1, n1))
    for j in range(n0):
        W0[j, :] = -s * c
        W0[j, j] += s * c
        W1[0, j] = 2.0 * scale / c
    n_sum = n1 - n0
    W0[n0:, :] = -s * c
    b0[n0:] = c * cfg.pudding_c
    W1[0, n0:] = scale / c
    b1 = shift - scale * cfg.pudding_c * n_sum
    return MlpWeights([W0, W1], [b0, np.array([b1])])


def sample_convexity_matrix(cfg: ConstructorConfig, rng: np.random.Generator) -> np.ndarray:
    """First-layer weights in (hidden, input) orientation."""
    shape = (cfg.n_hidden, cfg.n_inputs)
    w = rng.normal(0.0, cfg.convexity_sigma, size=shape)
    if cfg.convexity_dist == "bimodal":
        w = w + cfg.convexity_mode * rng.choice([-1.0, 1.0], size=shape)
    return w


def fit_convexity(W0: np.ndarray, n_inputs: int, n_samples: int, rng: np.random.Generator) -> MlpWeights:
    """Least-squares fit of one shared output weight and an output bias."""
    batch = sample_batch(n_inputs, n_samples, rng)
    feature = _silu(batch.inputs @ W0.T).sum(axis=1)
    centered = feature - feature.mean()
    var = float(centered @ centered)
    if not np.isfinite(var) or var <= 1e-12 * max(1.0, float(feature @ feature)):
        raise NumericError("degenerate convexity calibration: feature has zero variance")
    alpha = float(centered @ (batch.targets - batch.targets.mean())) / var
    bias = float(batch.targets.mean() - alpha * feature.mean())
    n1 = W0.shape[0]
    return MlpWeights([W0.copy(), np.full((1, n1), alpha)], [np.zeros(n1), np.array([bias])])


def build_convexity(cfg: ConstructorConfig, rng: np.random.Generator, W0: np.ndarray | None = None) -> MlpWeights:
    """Randomly oriented swish units with a fitted common output weight."""
    if W0 is None:
        W0 = sample_convexity_matrix(cfg, rng)
    return fit_convexity(np.asarray(W0, dtype=np.float64), cfg.n_inputs, cfg.calibration_samples, rng)


def active_hidden_neurons(w: MlpWeights, tol: float = 0.0) -> int:
    """Hidden neurons with any incoming or outgoing weight above ``tol``."""
    w = w.numpy()
    incoming = np.abs(w.weights[0]).max(axis=1)
    outgoing = np.abs(w.weights[1]).max(axis=0)
    return int(np.sum((incoming > tol) & (outgoing > tol)))


CONSTRUCTORS = {
    "double_sided": build_double_sided,
    "pudding": build_pudding,
    "pudding_imperfect": build_pudding_imperfect,
}

"""Order parameters, the three-way algorithm classifier, and phase grids."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Sequence

import numpy as np

from .errors import CalibrationError, ConfigError, DomainError


class AlgorithmLabel(str, Enum):
    CONVEXITY = "Convexity"
    PUDDING = "Pudding"
    DOUBLE_SIDED = "DoubleSided"

    @property
    def color(self) -> str:
        return LABEL_COLORS[self]


LABEL_COLORS = {
    AlgorithmLabel.CONVEXITY: "red",
    AlgorithmLabel.PUDDING: "green",
    AlgorithmLabel.DOUBLE_SIDED: "blue",
}


@dataclass
class OrderParams:
    alpha1: float
    alpha2: float
    alpha3: float = float("nan")
    degenerate: bool = False  # median |W| == 0, alpha1 is a sentinel


def _matrix(W) -> np.ndarray:
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2 or W.size == 0:
        raise DomainError("order parameters need a non-empty 2-d weight matrix")
    return W


def double_sidedness(W) -> float:
    """alpha1 for a first-layer matrix in (input, hidden) orientation.

    When the median absolute weight is zero the ratio is replaced by a
    sentinel carrying the numerator's sign: +inf, -inf, or 0 for a zero
    numerator (every input one-sided).
    """
    W = _matrix(W)
    numerator = float(np.minimum(-W.min(axis=1), W.max(axis=1)).min())
    med = float(np.median(np.abs(W)))
    if med == 0.0:
        return math.copysign(math.inf, numerator) if numerator != 0.0 else 0.0
    return numerator / med


def strongest_connection(W) -> float:
    return float(np.abs(_matrix(W)).max())


def seed_dependence(W, V) -> float:
    W, V = _matrix(W), _matrix(V)
    if W.shape != V.shape:
        raise DomainError(f"seed dependence needs equal shapes, got {W.shape} and {V.shape}")
    denom = float(np.sum(W * W) + np.sum(V * V))
    if denom == 0.0:
        raise DomainError("seed dependence of two zero matrices is undefined")
    return float(np.sum((W - V) ** 2) / denom)


def order_params(W, V=None) -> OrderParams:
    W = _matrix(W)
    a3 = seed_dependence(W, V) if V is not None else float("nan")
    degenerate = float(np.median(np.abs(W))) == 0.0
    return OrderParams(double_sidedness(W), strongest_connection(W), a3, degenerate=degenerate)


@dataclass
class Thresholds:
    theta1: float
    theta2: float
    calibrated: bool = True
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Thresholds":
        return cls(float(d["theta1"]), float(d["theta2"]), bool(d.get("calibrated", True)), dict(d.get("meta", {})))


def classify(op: OrderParams, thresholds: Thresholds | None) -> AlgorithmLabel:
    """Weak strongest connection means convexity; otherwise split on double-sidedness."""
    if thresholds is None or not thresholds.calibrated:
        raise ConfigError("classifier thresholds are not calibrated")
    if op.alpha2 < thresholds.theta2:
        return AlgorithmLabel.CONVEXITY
    if op.alpha1 > thresholds.theta1:
        return AlgorithmLabel.DOUBLE_SIDED
    return AlgorithmLabel.PUDDING


def _midpoint(lo: float, hi: float) -> float:
    if lo > 0 and hi > 0 and math.isfinite(hi):
        return math.sqrt(lo * hi)
    if not math.isfinite(hi):
        return 2.0 * lo if lo > 0 else lo + 1.0
    return 0.5 * (lo + hi)


def separating_threshold(low_class: Sequence[float], high_class: Sequence[float], name: str = "") -> float:
    """Geometric midpoint between the top of one class and the bottom of the other."""
    lo, hi = float(np.max(low_class)), float(np.min(high_class))
    if not lo < hi:
        raise CalibrationError(f"class ranges overlap for {name or 'threshold'}: max {lo:.6g} >= min {hi:.6g}")
    return _midpoint(lo, hi)


def calibrate_thresholds(samples: Dict[AlgorithmLabel, List[OrderParams]], min_per_class: int = 10) -> Thresholds:
    for label in AlgorithmLabel:
        if len(samples.get(label, [])) < min_per_class:
            raise CalibrationError(f"need at least {min_per_class} samples of {label.value}")
    conv = samples[AlgorithmLabel.CONVEXITY]
    pud = samples[AlgorithmLabel.PUDDING]
    ds = samples[AlgorithmLabel.DOUBLE_SIDED]
    theta2 = separating_threshold([o.alpha2 for o in conv], [o.alpha2 for o in pud + ds], "alpha2")
    theta1 = separating_threshold([o.alpha1 for o in pud], [o.alpha1 for o in ds], "alpha1")
    return Thresholds(theta1, theta2, True, {
        "alpha2_convexity_max": max(o.alpha2 for o in conv),
        "alpha2_structured_min": min(o.alpha2 for o in pud + ds),
        "alpha1_pudding_max": max(o.alpha1 for o in pud),
        "alpha1_double_sided_min": min(o.alpha1 for o in ds),
    })


def constructor_samples(n_inputs: int, n_hidden: int, per_class: int, rng: np.random.Generator,
                        jitter: float = 1e-2, c_act: float = 50.0) -> Dict[AlgorithmLabel, List[np.ndarray]]:
    """Jittered first-layer matrices (input, hidden) from the reference constructors.

    The pudding class alternates signs and mixes the exact and imperfect
    wirings; convexity draws fresh unimodal matrices.
    """
    from .constructors import (ConstructorConfig, build_double_sided, build_pudding,
                               build_pudding_imperfect, sample_convexity_matrix)

    out: Dict[AlgorithmLabel, List[np.ndarray]] = {label: [] for label in AlgorithmLabel}
    for k in range(per_class):
        sign = "-" if k % 2 == 0 else "+"
        cfg = ConstructorConfig(n_inputs, n_hidden, c_act=c_act, pudding_sign=sign)
        ds = build_double_sided(cfg).first_layer()
        pudding_builder = build_pudding if k % 4 < 2 or n_hidden < 2 * n_inputs else build_pudding_imperfect
        pud = pudding_builder(cfg).first_layer()
        conv = sample_convexity_matrix(cfg, rng).T
        out[AlgorithmLabel.DOUBLE_SIDED].append(ds + rng.normal(0.0, jitter, ds.shape))
        out[AlgorithmLabel.PUDDING].append(pud + rng.normal(0.0, jitter, pud.shape))
        out[AlgorithmLabel.CONVEXITY].append(conv)
    return out


def calibrate_from_constructors(n_inputs: int, n_hidden: int, rng: np.random.Generator,
                                per_class: int = 20, jitter: float = 1e-2) -> Thresholds:
    mats = constructor_samples(n_inputs, n_hidden, per_class, rng, jitter)
    samples = {label: [order_params(W) for W in ws] for label, ws in mats.items()}
    th = calibrate_thresholds(samples)
    th.meta.update({"n_inputs": n_inputs, "n_hidden": n_hidden, "per_class": per_class, "jitter": jitter})
    return th


@dataclass
class PhaseCell:
    step: int
    beta: float
    seed: int
    params: OrderParams
    label: AlgorithmLabel
    loss: float = float("nan")
    kl: float = float("nan")


@dataclass
class PhaseGrid:
    steps: List[int]
    betas: List[float]
    cells: List[PhaseCell]

    def label_matrix(self) -> np.ndarray:
        """Labels indexed [beta, step]."""
        mat = np.empty((len(self.betas), len(self.steps)), dtype=object)
        s_index = {s: k for k, s in enumerate(self.steps)}
        for k, cell in enumerate(self.cells):
            mat[k % len(self.betas), s_index[cell.step]] = cell.label
        return mat

    def column(self, step: int) -> List[AlgorithmLabel]:
        return [c.label for c in self.cells if c.step == step]


def phase_grid(checkpoints: Sequence[tuple], betas: Sequence[float], seed: int, thresholds: Thresholds,
               generate: Callable) -> PhaseGrid:
    """Classify one generated network per (checkpoint, beta).

    ``checkpoints`` is a sequence of (step, handle); ``generate(handle, beta,
    seed)`` returns (MlpWeights, kl, loss). A second generation at ``seed + 1``
    supplies the partner matrix for alpha3.
    """
    cells = []
    steps = []
    for step, handle in checkpoints:
        steps.append(int(step))
        for beta in betas:
            w, kl, loss = generate(handle, float(beta), seed)
            v, _, _ = generate(handle, float(beta), seed + 1)
            op = order_params(w.first_layer(), v.first_layer())
            cells.append(PhaseCell(int(step), float(beta), seed, op, classify(op, thresholds), float(loss), float(kl)))
    return PhaseGrid(steps, [float(b) for b in betas], cells)

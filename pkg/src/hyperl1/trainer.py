"""Pareto hyperhypernetwork training, checkpoints, and the Adam baseline.

A small MLP maps a rescaled log(beta) to two vectors a and b; a * sigmoid(b)
is the hypernetwork's flat hyperweight vector. Each step samples beta,
generates hyperweights, then target weights, and descends log(L + beta * KL).
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import tensor as T
from .errors import ArtifactIOError, ConfigError, DomainError, NumericError
from .hypernet import HyperConfig, HyperNetwork
from .network import MlpSpec, MlpWeights, TaskBatch, evaluate_mse, forward, mse_loss, sample_batch
from .rng import stream
from .tensor import Tensor

logger = logging.getLogger(__name__)

CHECKPOINT_FORMAT = "hyperl1-checkpoint"
CHECKPOINT_VERSION = 1
HIDDEN_SIZES = (100, 10)


def beta_to_input(beta: float) -> float:
    """Map beta in [1e-12, 1] affinely (in log10) onto [-1, 1]."""
    beta = float(beta)
    if not beta > 0:
        raise DomainError(f"beta must be positive, got {beta}")
    return (math.log10(beta) + 6.0) / 6.0


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class TrainConfig:
    n_inputs: int = 4
    n_hidden: int = 12
    beta_min: float = 1e-12
    beta_max: float = 1.0
    steps: int = 2000
    batch_size: int = 256
    lr: float = 1e-3
    adam_b1: float = 0.9
    adam_b2: float = 0.999
    adam_eps: float = 1e-8
    checkpoint_every: int = 500
    seed: int = 0
    hhw_out_scale: float = 0.1
    learned_init_scale: float = 1.0
    hyper: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (self.beta_min > 0 and self.beta_max > 0 and self.beta_min < self.beta_max):
            raise ConfigError("beta range endpoints must be positive with beta_min < beta_max")
        if self.steps < 0 or self.batch_size < 1 or self.checkpoint_every < 1:
            raise ConfigError("steps, batch_size and checkpoint_every must be positive")

    @property
    def spec(self) -> MlpSpec:
        return MlpSpec.l1(self.n_inputs, self.n_hidden)

    @property
    def hyper_config(self) -> HyperConfig:
        return HyperConfig(**self.hyper)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown training config keys: {sorted(unknown)}")
        return cls(**d)

    def hash(self) -> str:
        return config_hash(self.to_dict())


class Adam:
    """Adam over a list of leaf tensors; state is plain numpy for checkpointing."""

    def __init__(self, params: List[Tensor], lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
        self.params = params
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.t += 1
        c1 = 1.0 - self.b1 ** self.t
        c2 = 1.0 - self.b2 ** self.t
        for k, p in enumerate(self.params):
            if p.grad is None:
                continue
            g = p.grad
            self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * g * g
            p.data = p.data - self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


class HyperHyperNetwork:
    """1 -> 100 -> 10 -> 2P swish MLP whose output (a, b) gives hyperweights a * sigmoid(b)."""

    names = ("w1", "b1", "w2", "b2", "w3", "b3")

    def __init__(self, n_hyperweights: int, params: Optional[Dict[str, np.ndarray]] = None):
        self.n_hyperweights = n_hyperweights
        h1, h2 = HIDDEN_SIZES
        shapes = {"w1": (1, h1), "b1": (h1,), "w2": (h1, h2), "b2": (h2,),
                  "w3": (h2, 2 * n_hyperweights), "b3": (2 * n_hyperweights,)}
        self.shapes = shapes
        params = params or {name: np.zeros(shape) for name, shape in shapes.items()}
        for name, shape in shapes.items():
            if params[name].shape != shape:
                raise ConfigError(f"hyperhypernetwork parameter {name} has shape {params[name].shape}, expected {shape}")
        self.params = {name: Tensor(np.array(params[name], dtype=np.float64), requires_grad=True) for name in self.names}

    @classmethod
    def initialize(cls, base_hyperweights: np.ndarray, rng: np.random.Generator, out_scale: float = 0.01):
        """Start near ``base_hyperweights`` for every beta: b = 0 gives a gate of 1/2, so a = 2 * base."""
        P = base_hyperweights.shape[0]
        h1, h2 = HIDDEN_SIZES
        params = {
            "w1": rng.normal(0.0, 1.0, (1, h1)),
            "b1": rng.uniform(-1.0, 1.0, h1),
            "w2": rng.normal(0.0, 1.0 / math.sqrt(h1), (h1, h2)),
            "b2": np.zeros(h2),
            "w3": rng.normal(0.0, out_scale / math.sqrt(h2), (h2, 2 * P)),
            "b3": np.concatenate([2.0 * base_hyperweights, np.zeros(P)]),
        }
        return cls(P, params)

    def parameters(self) -> List[Tensor]:
        return [self.params[n] for n in self.names]

    def numpy_params(self) -> Dict[str, np.ndarray]:
        return {n: self.params[n].data.copy() for n in self.names}

    def __call__(self, beta: float) -> Tensor:
        return self.generate_hyperweights(beta)

    def generate_hyperweights(self, beta: float) -> Tensor:
        p = self.params
        x = Tensor(np.array([[beta_to_input(beta)]]))
        h = T.silu(T.matmul(x, p["w1"]) + p["b1"])
        h = T.silu(T.matmul(h, p["w2"]) + p["b2"])
        out = T.reshape(T.matmul(h, p["w3"]) + p["b3"], (2 * self.n_hyperweights,))
        P = self.n_hyperweights
        a = T.slice_axis(out, 0, P, axis=0)
        b = T.slice_axis(out, P, 2 * P, axis=0)
        return a * T.sigmoid(b)


def sample_beta(rng: np.random.Generator, beta_min: float, beta_max: float) -> float:
    """Log-uniform draw on [beta_min, beta_max]."""
    return float(10.0 ** rng.uniform(math.log10(beta_min), math.log10(beta_max)))


def objective(loss: Tensor, kl: Tensor, beta: float) -> Tensor:
    return T.log(loss + beta * kl)


class Trainer:
    """Owns the hyperhypernetwork, its optimizer, and the step counter."""

    def __init__(self, cfg: TrainConfig, hhw: Optional[HyperHyperNetwork] = None, step: int = 0):
        self.cfg = cfg
        self.spec = cfg.spec
        self.hypernet = HyperNetwork(self.spec, cfg.hyper_config)
        if hhw is None:
            rng = stream(cfg.seed, "init")
            base = self.hypernet.init_hyperweights(rng, cfg.learned_init_scale)
            hhw = HyperHyperNetwork.initialize(base, rng, cfg.hhw_out_scale)
        if hhw.n_hyperweights != self.hypernet.n_params:
            raise ConfigError("hyperhypernetwork output does not match hypernetwork size")
        self.hhw = hhw
        self.optimizer = Adam(hhw.parameters(), cfg.lr, cfg.adam_b1, cfg.adam_b2, cfg.adam_eps)
        self.step = step
        self.history: List[dict] = []

    def forward_objective(self, beta: float, batch: TaskBatch, rng: np.random.Generator,
                          mode: str = "with_encoder") -> tuple:
        hw = self.hhw.generate_hyperweights(beta)
        weights, kl = self.hypernet.generate_weights(hw, self.spec, rng, mode)
        loss = mse_loss(forward(weights, batch.inputs), batch.targets)
        return objective(loss, kl, beta), loss, kl

    def train_step(self) -> dict:
        cfg = self.cfg
        rng = stream(cfg.seed, "train", self.step)
        beta = sample_beta(rng, cfg.beta_min, cfg.beta_max)
        batch = sample_batch(cfg.n_inputs, cfg.batch_size, rng)
        self.optimizer.zero_grad()
        obj, loss, kl = self.forward_objective(beta, batch, rng)
        metrics = {"step": self.step, "beta": beta, "L": loss.item(), "D_KL": kl.item(), "objective": obj.item()}
        if not math.isfinite(metrics["objective"]):
            raise NumericError(f"non-finite objective at step {self.step}", dump=metrics)
        obj.backward()
        for p in self.hhw.parameters():
            if p.grad is not None and not np.isfinite(p.grad).all():
                raise NumericError(f"non-finite gradient at step {self.step}", dump=metrics)
        self.optimizer.step()
        self.step += 1
        self.history.append(metrics)
        return metrics

    def generate(self, beta: float, seed: int, mode: str = "with_encoder", spec: Optional[MlpSpec] = None) -> tuple:
        """Graph-free generation: (numpy MlpWeights, kl_total float)."""
        with T.no_grad():
            hw = self.hhw.generate_hyperweights(beta)
            weights, kl = self.hypernet.generate_weights(hw, spec or self.spec, stream(seed, "generate"), mode)
        return weights.numpy(), kl.item()

    # ---------------------------------------------------------- checkpoints
    def save_checkpoint(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        stem = directory / f"ckpt_{self.step:07d}"
        arrays = [(f"hhw.{n}", a) for n, a in self.hhw.numpy_params().items()]
        arrays += [(f"adam.m.{n}", m) for n, m in zip(self.hhw.names, self.optimizer.m)]
        arrays += [(f"adam.v.{n}", v) for n, v in zip(self.hhw.names, self.optimizer.v)]
        save_arrays(stem, arrays, {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "step": self.step,
            "config": self.cfg.to_dict(),
            "config_hash": self.cfg.hash(),
            "rng": {"seed": self.cfg.seed, "purpose": "train", "counter": self.step},
            "adam_t": self.optimizer.t,
            "n_hyperweights": self.hhw.n_hyperweights,
        })
        return stem.with_suffix(".json")

    @classmethod
    def from_checkpoint(cls, path) -> "Trainer":
        manifest, arrays = load_arrays(path)
        if manifest.get("format") != CHECKPOINT_FORMAT:
            raise ArtifactIOError(f"{path} is not a checkpoint manifest")
        cfg = TrainConfig.from_dict(manifest["config"])
        hhw = HyperHyperNetwork(manifest["n_hyperweights"],
                                {n: arrays[f"hhw.{n}"] for n in HyperHyperNetwork.names})
        trainer = cls(cfg, hhw, step=int(manifest["step"]))
        trainer.optimizer.t = int(manifest["adam_t"])
        trainer.optimizer.m = [arrays[f"adam.m.{n}"] for n in hhw.names]
        trainer.optimizer.v = [arrays[f"adam.v.{n}"] for n in hhw.names]
        return trainer


def save_arrays(stem: Path, arrays: Sequence[tuple], manifest: dict) -> None:
    """JSON manifest next to one contiguous little-endian float64 blob."""
    stem = Path(stem)
    entries, offset, chunks = [], 0, []
    for name, arr in arrays:
        arr = np.ascontiguousarray(arr, dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset, "count": int(arr.size)})
        offset += arr.size
        chunks.append(arr.ravel())
    blob = np.concatenate(chunks) if chunks else np.zeros(0, dtype="<f8")
    manifest = dict(manifest, arrays=entries, data_file=stem.name + ".bin", dtype="<f8")
    try:
        stem.with_suffix(".bin").write_bytes(blob.astype("<f8").tobytes())
        stem.with_suffix(".json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    except OSError as exc:
        raise ArtifactIOError(str(exc)) from exc


def load_arrays(path) -> tuple:
    path = Path(path)
    if path.suffix != ".json":
        path = path.with_suffix(".json")
    try:
        manifest = json.loads(path.read_text())
        blob = np.frombuffer((path.parent / manifest["data_file"]).read_bytes(), dtype="<f8")
    except FileNotFoundError as exc:
        raise ArtifactIOError(f"missing checkpoint file: {exc.filename}") from exc
    except (json.JSONDecodeError, KeyError) as exc:
        raise ArtifactIOError(f"malformed checkpoint manifest {path}: {exc}") from exc
    arrays = {}
    for e in manifest["arrays"]:
        chunk = blob[e["offset"]:e["offset"] + e["count"]]
        if chunk.size != e["count"]:
            raise ArtifactIOError(f"checkpoint data truncated at array {e['name']}")
        arrays[e["name"]] = chunk.astype(np.float64).reshape(e["shape"])
    return manifest, arrays


def list_checkpoints(directory) -> List[Path]:
    return sorted(Path(directory).glob("ckpt_*.json"))


def train(cfg: TrainConfig, out_dir=None, trainer: Optional[Trainer] = None, log_every: int = 100) -> Trainer:
    """Run (or continue) training to ``cfg.steps``, checkpointing on the cadence and at the end."""
    trainer = trainer or Trainer(cfg)
    if out_dir is not None and trainer.step == 0:
        trainer.save_checkpoint(out_dir)
    while trainer.step < cfg.steps:
        m = trainer.train_step()
        if log_every and trainer.step % log_every == 0:
            logger.info("step %d beta %.2e L %.4f KL %.4g obj %.4f", m["step"], m["beta"], m["L"], m["D_KL"], m["objective"])
        if out_dir is not None and (trainer.step % cfg.checkpoint_every == 0 or trainer.step == cfg.steps):
            trainer.save_checkpoint(out_dir)
    return trainer


# ---------------------------------------------------------------- baseline
@dataclass
class BaselineConfig:
    n_inputs: int = 4
    n_hidden: int = 12
    steps: int = 5000
    lr: float = 1e-3
    batch_size: int = 256
    seed: int = 0
    divergence_factor: float = 10.0
    divergence_patience: int = 100


def init_mlp(spec: MlpSpec, rng: np.random.Generator) -> MlpWeights:
    ws = [rng.normal(0.0, 1.0 / math.sqrt(n_in), (n_out, n_in)) for n_out, n_in in spec.layer_shapes()]
    return MlpWeights(ws, [np.zeros(n_out) for n_out, _ in spec.layer_shapes()])


def train_baseline_adam(spec: MlpSpec, cfg: BaselineConfig, rng: Optional[np.random.Generator] = None) -> tuple:
    """Fit the MLP weights directly with Adam; returns (MlpWeights, loss history)."""
    rng = rng or stream(cfg.seed, "baseline")
    init = init_mlp(spec, rng)
    params = [Tensor(a, requires_grad=True) for a in init.weights + init.biases]
    n = spec.n_layers
    opt = Adam(params, lr=cfg.lr)
    history: List[float] = []
    initial, bad = None, 0
    for step in range(cfg.steps):
        batch = sample_batch(spec.n_inputs, cfg.batch_size, rng)
        opt.zero_grad()
        loss = mse_loss(forward(MlpWeights(params[:n], params[n:]), batch.inputs), batch.targets)
        value = loss.item()
        if not math.isfinite(value):
            raise NumericError(f"baseline loss non-finite at step {step}", dump={"step": step})
        initial = value if initial is None else initial
        bad = bad + 1 if value > cfg.divergence_factor * initial else 0
        if bad >= cfg.divergence_patience:
            raise NumericError(f"baseline diverged at step {step}", dump={"step": step, "loss": value, "initial": initial})
        history.append(value)
        loss.backward()
        opt.step()
    return MlpWeights([p.data.copy() for p in params[:n]], [p.data.copy() for p in params[n:]]), history


# ---------------------------------------------------------------- frontier
def beta_grid(beta_min: float = 1e-12, beta_max: float = 1.0, steps: int = 30) -> np.ndarray:
    return np.logspace(math.log10(beta_min), math.log10(beta_max), steps)


def evaluation_batch(n_inputs: int, size: int = 100_000, seed: int = 12345) -> TaskBatch:
    return sample_batch(n_inputs, size, stream(seed, "evaluation"))


def evaluate_frontier(trainer: Trainer, betas: Sequence[float], seeds: Sequence[int],
                      modes: Sequence[str] = ("with_encoder",), eval_batch: Optional[TaskBatch] = None,
                      thresholds=None, spec: Optional[MlpSpec] = None) -> List[dict]:
    """One row per (mode, beta, seed): loss on a fixed batch, KL, and order parameters.

    Seeds pair up as (seeds[0], seeds[1]), (seeds[2], seeds[3]), ... for
    alpha3; an unpaired last seed is compared against ``seed + 1``.
    """
    from .analysis import classify, order_params

    spec = spec or trainer.spec
    eval_batch = eval_batch or evaluation_batch(spec.n_inputs)
    seeds = list(seeds)
    rows = []
    for mode in modes:
        for beta in betas:
            cache = {}

            def gen(seed):
                if seed not in cache:
                    cache[seed] = trainer.generate(float(beta), seed, mode, spec)
                return cache[seed]

            for idx, seed in enumerate(seeds):
                partner = seeds[idx ^ 1] if (idx ^ 1) < len(seeds) else seed + 1
                w, kl = gen(seed)
                v, _ = gen(partner)
                op = order_params(w.first_layer(), v.first_layer())
                rows.append({
                    "step": trainer.step, "beta": float(beta), "seed": int(seed), "mode": mode,
                    "n_inputs": spec.n_inputs, "n_hidden": spec.n_hidden,
                    "loss": evaluate_mse(w, eval_batch), "kl": kl,
                    "alpha1": op.alpha1, "alpha2": op.alpha2, "alpha3": op.alpha3,
                    "label": classify(op, thresholds).value if thresholds is not None else "",
                })
    return rows

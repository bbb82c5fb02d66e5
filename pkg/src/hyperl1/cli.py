"""Command-line experiments: train, sweep, ablate, phases, generalize, baseline, draw, calibrate.

Every artifact carries the run's config hash and a version string. Tables are
CSV with ``# key: value`` header comments; figures are SVG.
"""

from __future__ import annotations

import argparse
import csv
import functools
import json
import logging
import math
import subprocess
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Dict, Iterable, List, Optional, Sequence

import numpy as np

from . import __version__
from .analysis import (AlgorithmLabel, Thresholds, calibrate_from_constructors, classify, order_params,
                       phase_grid)
from .errors import ArtifactIOError, ConfigError, HyperL1Error, NumericError, ShapeError
from .layout import LayoutConfig, NeuronGraph, run_layout, svg_document, write_sidecar
from .network import MlpSpec, MlpWeights, evaluate_mse, sample_batch
from .rng import stream
from .trainer import (BaselineConfig, TrainConfig, Trainer, beta_grid, config_hash, evaluate_frontier,
                      evaluation_batch, list_checkpoints, load_arrays, train, train_baseline_adam)

logger = logging.getLogger("hyperl1")

RESULTS_SCHEMA = "results-v1"
RESULTS_COLUMNS = ["experiment", "step", "beta", "seed", "n_inputs", "n_hidden", "mode",
                   "loss", "kl", "alpha1", "alpha2", "alpha3", "label"]
CONTOUR_LEVELS = (0.07, 0.15)
ENCODER_FREE_KL = 1e-3
OVERWRITE_POLICIES = ("refuse", "version", "replace")

PRESETS = {
    "desk": {
        "train": {"n_inputs": 4, "n_hidden": 12, "steps": 2000, "checkpoint_every": 500},
        "seeds": list(range(5)),
        "baseline": {"n_inputs": 4, "n_hidden": 12, "steps": 5000},
        "generalize_n_inputs": list(range(2, 9)),
        "generalize_n_hidden": list(range(2, 25, 2)),
    },
    "paper": {
        "train": {"n_inputs": 16, "n_hidden": 48, "steps": 50000, "checkpoint_every": 5000},
        "seeds": list(range(33)),
        "baseline": {"n_inputs": 16, "n_hidden": 48, "steps": 50000},
        "generalize_n_inputs": list(range(2, 33, 2)),
        "generalize_n_hidden": list(range(4, 97, 4)),
    },
}


@functools.lru_cache(maxsize=1)
def version_string() -> str:
    """git-describe style: v<release>-g<commit>[-dirty], or just v<release> outside a checkout."""
    try:
        res = subprocess.run(["git", "describe", "--always", "--dirty", "--abbrev=7"],
                             cwd=Path(__file__).parent, capture_output=True, text=True, timeout=5)
        if res.returncode == 0 and res.stdout.strip():
            return f"v{__version__}-g{res.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return f"v{__version__}"


# ---------------------------------------------------------------- config
@dataclass
class RunConfig:
    scale: str = "desk"
    train: TrainConfig = field(default_factory=TrainConfig)
    baseline: BaselineConfig = field(default_factory=BaselineConfig)
    beta_min: float = 1e-12
    beta_max: float = 1.0
    beta_steps: int = 30
    seeds: List[int] = field(default_factory=lambda: list(range(5)))
    eval_size: int = 100_000
    eval_seed: int = 12345
    grid_eval_size: int = 10_000
    generalize_n_inputs: List[int] = field(default_factory=lambda: list(range(2, 9)))
    generalize_n_hidden: List[int] = field(default_factory=lambda: list(range(2, 25, 2)))
    generalize_beta: Optional[float] = None  # defaults to beta_min
    calibration_per_class: int = 20
    layout: dict = field(default_factory=dict)
    edge_floor: float = 0.02

    def __post_init__(self):
        if self.scale not in PRESETS:
            raise ConfigError(f"unknown scale {self.scale!r}")
        if not (0 < self.beta_min < self.beta_max) or self.beta_steps < 1:
            raise ConfigError("beta grid needs 0 < beta_min < beta_max and at least one step")
        if not self.seeds:
            raise ConfigError("seed list is empty")

    @property
    def betas(self) -> np.ndarray:
        return beta_grid(self.beta_min, self.beta_max, self.beta_steps)

    @property
    def layout_config(self) -> LayoutConfig:
        return LayoutConfig(**self.layout)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["train"] = self.train.to_dict()
        d["baseline"] = asdict(self.baseline)
        return d

    def hash(self) -> str:
        return config_hash(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        d = dict(d)
        d["train"] = TrainConfig.from_dict(d.get("train", {}))
        base = d.get("baseline", {})
        bad = set(base) - {f.name for f in fields(BaselineConfig)}
        if bad:
            raise ConfigError(f"unknown baseline config keys: {sorted(bad)}")
        d["baseline"] = BaselineConfig(**base)
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


def _merge(base: dict, over: dict) -> dict:
    out = dict(base)
    for k, v in over.items():
        out[k] = _merge(out[k], v) if isinstance(v, dict) and isinstance(out.get(k), dict) else v
    return out


def load_json(path, what: str = "file"):
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ArtifactIOError(f"cannot read {what} {path}: {exc}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"parse error in {path} at offset {exc.pos} "
                          f"(line {exc.lineno}, column {exc.colno}): {exc.msg}") from exc


def build_run_config(args) -> RunConfig:
    user = load_json(args.config, "config") if args.config else {}
    if not isinstance(user, dict):
        raise ConfigError("config file must hold a JSON object")
    scale = args.scale or user.get("scale", "desk")
    if scale not in PRESETS:
        raise ConfigError(f"unknown scale {scale!r}")
    d = _merge(dict(PRESETS[scale], scale=scale), user)
    d["scale"] = scale
    if args.seed is not None:
        d["train"] = dict(d.get("train", {}), seed=args.seed)
        d["baseline"] = dict(d.get("baseline", {}), seed=args.seed)
    for flag in ("beta_min", "beta_max", "beta_steps"):
        if getattr(args, flag) is not None:
            d[flag] = getattr(args, flag)
    if d.get("train", {}).get("beta_min") is None:
        d["train"] = dict(d["train"], beta_min=d.get("beta_min", 1e-12), beta_max=d.get("beta_max", 1.0))
    return RunConfig.from_dict(d)


# ---------------------------------------------------------------- artifacts
def claim_path(path: Path, policy: str) -> Path:
    """Where to write ``path`` under the overwrite policy."""
    path = Path(path)
    if not path.exists() or policy == "replace":
        return path
    if policy == "refuse":
        raise ArtifactIOError(f"{path} exists; pass --overwrite version or replace")
    k = 1
    while True:
        candidate = path.with_name(f"{path.stem}.v{k}{path.suffix}")
        if not candidate.exists():
            return candidate
        k += 1


def _write_text(path: Path, text: str) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)
    except OSError as exc:
        raise ArtifactIOError(f"cannot write {path}: {exc}") from exc
    return path


def _jsonable(x):
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        return x if math.isfinite(x) else repr(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, AlgorithmLabel):
        return x.value
    return x


def write_json(path: Path, payload: dict) -> Path:
    return _write_text(path, json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")


def _meta_lines(meta: dict) -> str:
    return "".join(f"# {k}: {v}\n" for k, v in meta.items())


def write_table(path: Path, rows: Sequence[dict], columns: Sequence[str], meta: dict) -> Path:
    lines = [_meta_lines(meta)]
    from io import StringIO
    buf = StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(columns), extrasaction="ignore", lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return _write_text(path, "".join(lines) + buf.getvalue())


def read_table(path) -> tuple:
    """(meta dict, list of row dicts with string values)."""
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise ArtifactIOError(f"cannot read {path}: {exc}") from exc
    meta = {}
    body = []
    for line in lines:
        if line.startswith("# ") and not body:
            key, _, value = line[2:].partition(": ")
            meta[key] = value
        else:
            body.append(line)
    return meta, list(csv.DictReader(body))


class ResultsTable:
    """Append-only CSV; appending to a file written under another schema or hash is refused."""

    def __init__(self, path, columns: Sequence[str], meta: dict):
        self.path, self.columns, self.meta = Path(path), list(columns), dict(meta)

    def append(self, rows: Iterable[dict]) -> Path:
        rows = list(rows)
        if not self.path.exists():
            return write_table(self.path, rows, self.columns, self.meta)
        meta, _ = read_table(self.path)
        for key in ("schema", "config_hash"):
            if meta.get(key) != str(self.meta.get(key)):
                raise ConfigError(f"{self.path} has {key}={meta.get(key)}, refusing to append rows with {self.meta.get(key)}")
        try:
            with self.path.open("a", newline="") as fh:
                csv.DictWriter(fh, fieldnames=self.columns, extrasaction="ignore", lineterminator="\n").writerows(rows)
        except OSError as exc:
            raise ArtifactIOError(f"cannot append to {self.path}: {exc}") from exc
        return self.path


def fan_out(fn: Callable, tasks: Sequence[tuple], jobs: int) -> list:
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(*t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, *zip(*tasks)))


# ---------------------------------------------------------------- shared helpers
class Context:
    def __init__(self, args, run: RunConfig):
        self.args, self.run = args, run
        self.out = Path(args.out or f"runs/{run.scale}")
        self.ckpt_dir = self.out / "checkpoints"
        self.policy = args.overwrite
        self.jobs = max(1, args.jobs)

    @property
    def meta(self) -> dict:
        return {"schema": RESULTS_SCHEMA, "config_hash": self.run.hash(), "version": version_string()}

    def path(self, name: str) -> Path:
        return claim_path(self.out / name, self.policy)

    def checkpoint(self, explicit: Optional[str] = None) -> Path:
        if explicit:
            return Path(explicit)
        found = list_checkpoints(self.ckpt_dir)
        if not found:
            raise ConfigError(f"no checkpoints under {self.ckpt_dir}; run `train` first or pass --checkpoint")
        return found[-1]

    def thresholds(self, n_inputs: int, n_hidden: int) -> Thresholds:
        saved = self.out / "thresholds.json"
        if saved.exists():
            th = Thresholds.from_dict(load_json(saved, "thresholds"))
            if (th.meta.get("n_inputs"), th.meta.get("n_hidden")) == (n_inputs, n_hidden):
                return th
        return calibrate_from_constructors(n_inputs, n_hidden, stream(self.run.train.seed, "calibrate"),
                                           self.run.calibration_per_class)


@functools.lru_cache(maxsize=4)
def _cached_trainer(path: str) -> Trainer:
    return Trainer.from_checkpoint(path)


def _frontier_task(ckpt: str, beta: float, seeds: tuple, modes: tuple, th: dict, eval_size: int, eval_seed: int):
    trainer = _cached_trainer(ckpt)
    batch = evaluation_batch(trainer.spec.n_inputs, eval_size, eval_seed)
    return evaluate_frontier(trainer, [beta], list(seeds), modes, batch, Thresholds.from_dict(th))


def frontier_rows(ctx: Context, ckpt: Path, modes: Sequence[str], experiment: str) -> List[dict]:
    trainer = _cached_trainer(str(ckpt))
    th = ctx.thresholds(trainer.spec.n_inputs, trainer.spec.n_hidden)
    run = ctx.run
    tasks = [(str(ckpt), float(b), tuple(run.seeds), tuple(modes), th.to_dict(), run.eval_size, run.eval_seed)
             for b in run.betas]
    chunks = fan_out(_frontier_task, tasks, ctx.jobs)
    rows = [dict(r, experiment=experiment) for chunk in chunks for r in chunk]
    order = {m: k for k, m in enumerate(modes)}
    rows.sort(key=lambda r: (order[r["mode"]], r["beta"], run.seeds.index(r["seed"])))
    return rows


def draw_network(w: MlpWeights, path: Path, meta: dict, run: RunConfig) -> Path:
    graph = NeuronGraph.from_weights(w)
    cfg = run.layout_config
    result = run_layout(graph, cfg)
    meta = dict(meta, layout_hash=config_hash(asdict(cfg)))
    _write_text(path, svg_document(result.positions, graph, run.edge_floor, metadata=meta))
    write_sidecar(result, graph, cfg, path.with_name(path.stem + ".layout.json"), dict(meta, edge_floor_fraction=run.edge_floor))
    return path


# ---------------------------------------------------------------- commands
def _resume_key(cfg: dict) -> str:
    return config_hash({k: v for k, v in cfg.items() if k not in ("steps", "checkpoint_every")})


def cmd_train(ctx: Context) -> int:
    cfg = ctx.run.train
    existing = list_checkpoints(ctx.ckpt_dir)
    trainer = None
    if existing:
        manifest, _ = load_arrays(existing[-1])
        if _resume_key(manifest["config"]) != _resume_key(cfg.to_dict()):
            raise ConfigError(f"checkpoint {existing[-1]} has config hash {manifest.get('config_hash')}, "
                              f"current config {cfg.hash()}; refusing to resume")
        trainer = Trainer.from_checkpoint(existing[-1])
        trainer.cfg = cfg
        logger.info("resuming from %s at step %d", existing[-1], trainer.step)
    trainer = train(cfg, ctx.ckpt_dir, trainer)
    meta = {"schema": "train-log-v1", "config_hash": _resume_key(cfg.to_dict()), "version": version_string()}
    ResultsTable(ctx.out / "train_log.csv", ["step", "beta", "L", "D_KL", "objective"], meta).append(trainer.history)
    logger.info("trained to step %d; checkpoints in %s", trainer.step, ctx.ckpt_dir)
    return 0


def _sweep(ctx: Context, modes: Sequence[str], name: str) -> int:
    ckpt = ctx.checkpoint(ctx.args.checkpoint)
    rows = frontier_rows(ctx, ckpt, modes, name)
    meta = dict(ctx.meta, checkpoint=ckpt.name)
    csv_path = write_table(ctx.path(f"{name}.csv"), rows, RESULTS_COLUMNS, meta)
    kl_max = max(r["kl"] for r in rows if r["mode"] == "with_encoder") if "with_encoder" in modes else float("nan")
    scatter = {
        "meta": meta,
        "encoder_independent": bool(kl_max < ENCODER_FREE_KL),
        "max_kl_with_encoder": kl_max,
        "points": [{k: r[k] for k in ("beta", "seed", "mode", "alpha1", "alpha2", "alpha3", "label")} for r in rows],
    }
    write_json(ctx.path(f"{name}_order_params.json"), scatter)
    logger.info("wrote %d rows to %s", len(rows), csv_path)
    return 0


def cmd_sweep(ctx: Context) -> int:
    return _sweep(ctx, ("with_encoder", "decoder_only"), "sweep")


def cmd_ablate(ctx: Context) -> int:
    return _sweep(ctx, ("decoder_only",), "ablate")


def phase_svg(rows: Sequence[dict], steps: Sequence[int], betas: Sequence[float], meta: dict, cell: int = 16) -> str:
    """Raster of labels: columns are checkpoints, rows are betas with the largest on top."""
    width, height = cell * len(steps), cell * len(betas)
    col = {s: k for k, s in enumerate(steps)}
    row = {b: len(betas) - 1 - k for k, b in enumerate(betas)}
    lines = ['<?xml version="1.0" encoding="UTF-8"?>',
             f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}">',
             "<!-- " + json.dumps(meta, sort_keys=True) + " -->"]
    for r in rows:
        color = AlgorithmLabel(r["label"]).color
        lines.append(f'<rect x="{col[r["step"]] * cell}" y="{row[r["beta"]] * cell}" width="{cell}" '
                     f'height="{cell}" fill="{color}"/>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def cmd_phases(ctx: Context) -> int:
    paths = [Path(p) for p in ctx.args.checkpoints] if ctx.args.checkpoints else list_checkpoints(ctx.ckpt_dir)
    if len(paths) < 2:
        raise ConfigError("phase grids need at least two checkpoints")
    trainers = sorted((Trainer.from_checkpoint(p) for p in paths), key=lambda t: t.step)
    spec = trainers[0].spec
    th = ctx.thresholds(spec.n_inputs, spec.n_hidden)
    batch = evaluation_batch(spec.n_inputs, ctx.run.eval_size, ctx.run.eval_seed)

    def generate(trainer, beta, seed):
        w, kl = trainer.generate(beta, seed, "with_encoder")
        return w, kl, evaluate_mse(w, batch)

    seed = ctx.run.seeds[0]
    grid = phase_grid([(t.step, t) for t in trainers], ctx.run.betas, seed, th, generate)
    rows = [{"experiment": "phases", "step": c.step, "beta": c.beta, "seed": c.seed, "n_inputs": spec.n_inputs,
             "n_hidden": spec.n_hidden, "mode": "with_encoder", "loss": c.loss, "kl": c.kl,
             "alpha1": c.params.alpha1, "alpha2": c.params.alpha2, "alpha3": c.params.alpha3,
             "label": c.label.value} for c in grid.cells]
    meta = dict(ctx.meta, colors=json.dumps({l.value: l.color for l in AlgorithmLabel}, sort_keys=True))
    write_table(ctx.path("phases.csv"), rows, RESULTS_COLUMNS, meta)
    _write_text(ctx.path("phases.svg"), phase_svg(rows, grid.steps, grid.betas, meta))
    first = grid.column(grid.steps[0])
    share = sum(l is AlgorithmLabel.CONVEXITY for l in first) / len(first)
    logger.info("earliest checkpoint: %.0f%% convexity", 100 * share)
    return 0


def contour_polylines(values: np.ndarray, xs: Sequence[float], ys: Sequence[float], level: float) -> List[list]:
    """Iso-lines of ``values[i, j]`` sampled at (xs[i], ys[j]), mapped to axis units."""
    from skimage.measure import find_contours

    values = np.asarray(values, dtype=np.float64)
    if min(values.shape) < 2:
        return []
    out = []
    for c in find_contours(values, level):
        x = np.interp(c[:, 0], np.arange(len(xs)), np.asarray(xs, dtype=np.float64))
        y = np.interp(c[:, 1], np.arange(len(ys)), np.asarray(ys, dtype=np.float64))
        out.append(np.column_stack([x, y]).tolist())
    return out


def cmd_generalize(ctx: Context) -> int:
    run = ctx.run
    ckpt = ctx.checkpoint(ctx.args.checkpoint)
    trainer = Trainer.from_checkpoint(ckpt)
    beta = run.generalize_beta or run.beta_min
    seed = run.seeds[0]
    kls = [trainer.generate(float(b), seed, "with_encoder")[1] for b in run.betas]
    independent = max(kls) < ENCODER_FREE_KL
    if not independent:
        logger.warning("checkpoint is not encoder-independent (max KL %.3g); proceeding with flag", max(kls))
    n0s, n1s = list(run.generalize_n_inputs), list(run.generalize_n_hidden)
    losses = np.zeros((len(n0s), len(n1s)))
    rows = []
    for i, n0 in enumerate(n0s):
        batch = sample_batch(n0, run.grid_eval_size, stream(run.eval_seed, f"grid:{n0}"))
        for j, n1 in enumerate(n1s):
            spec = MlpSpec.l1(n0, n1)
            w, kl = trainer.generate(beta, seed, "decoder_only", spec)
            w.validate(spec)
            losses[i, j] = evaluate_mse(w, batch)
            rows.append({"n_inputs": n0, "n_hidden": n1, "beta": beta, "seed": seed, "loss": losses[i, j],
                         "kl": kl, "shape_ok": True})
    meta = dict(ctx.meta, checkpoint=ckpt.name, encoder_independent=independent,
                contour_levels=json.dumps(list(CONTOUR_LEVELS)))
    write_table(ctx.path("generalize.csv"), rows,
                ["n_inputs", "n_hidden", "beta", "seed", "loss", "kl", "shape_ok"], meta)
    train_cell = losses[n0s.index(trainer.spec.n_inputs), n1s.index(trainer.spec.n_hidden)] \
        if trainer.spec.n_inputs in n0s and trainer.spec.n_hidden in n1s else float("nan")
    write_json(ctx.path("generalize_contours.json"), {
        "meta": meta,
        "contour_levels": list(CONTOUR_LEVELS),
        "contours": {str(level): contour_polylines(losses, n0s, n1s, level) for level in CONTOUR_LEVELS},
        "report": {
            "training_cell_loss": train_cell,
            "loss_25th_percentile": float(np.percentile(losses, 25)),
            "fraction_below_0.15": float(np.mean(losses < 0.15)),
        },
    })
    return 0


def cmd_baseline(ctx: Context) -> int:
    run = ctx.run
    bcfg = run.baseline
    spec = MlpSpec.l1(bcfg.n_inputs, bcfg.n_hidden)
    weights, history = train_baseline_adam(spec, bcfg)
    batch = evaluation_batch(spec.n_inputs, run.eval_size, run.eval_seed)
    th = ctx.thresholds(spec.n_inputs, spec.n_hidden)

    ckpt = ctx.checkpoint(ctx.args.checkpoint)
    trainer = Trainer.from_checkpoint(ckpt)
    if trainer.spec != spec:
        raise ConfigError(f"baseline size {spec.layer_sizes} differs from checkpoint {trainer.spec.layer_sizes}")
    best = None
    sweep = ctx.out / "sweep.csv"
    if sweep.exists():
        _, srows = read_table(sweep)
        if srows:
            best = min(srows, key=lambda r: float(r["loss"]))
    beta = float(best["beta"]) if best else run.beta_min
    seed = int(best["seed"]) if best else run.seeds[0]
    mode = best["mode"] if best else "with_encoder"
    hw, kl = trainer.generate(beta, seed, mode)

    rows = []
    for name, w, b, s, m, k in (("baseline", weights, float("nan"), bcfg.seed, "adam", float("nan")),
                                ("hypernet", hw, beta, seed, mode, kl)):
        op = order_params(w.first_layer())
        rows.append({"experiment": name, "step": bcfg.steps if name == "baseline" else trainer.step,
                     "beta": b, "seed": s, "n_inputs": spec.n_inputs, "n_hidden": spec.n_hidden, "mode": m,
                     "loss": evaluate_mse(w, batch), "kl": k, "alpha1": op.alpha1, "alpha2": op.alpha2,
                     "alpha3": op.alpha3, "label": classify(op, th).value})
    meta = dict(ctx.meta, checkpoint=ckpt.name)
    write_table(ctx.path("baseline.csv"), rows, RESULTS_COLUMNS, meta)
    draw_network(weights, ctx.path("baseline.svg"), dict(meta, network="baseline"), run)
    draw_network(hw, ctx.path("hypernet.svg"), dict(meta, network="hypernet"), run)
    write_json(ctx.path("baseline_weights.json"), dict(weights.to_dict(), meta=meta))
    logger.info("baseline loss %.4g vs hypernetwork %.4g", rows[0]["loss"], rows[1]["loss"])
    return 0


def cmd_draw(ctx: Context) -> int:
    src = Path(ctx.args.weights)
    data = load_json(src, "weights")
    if not isinstance(data, dict) or "weights" not in data or "biases" not in data:
        raise ConfigError(f"{src}: expected an object with 'weights' and 'biases'")
    try:
        w = MlpWeights.from_dict(data)
        w.validate()
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{src}: {exc}") from exc
    meta = {"config_hash": config_hash({"run": ctx.run.hash(), "weights": data}), "version": version_string(),
            "source": src.name}
    path = draw_network(w, ctx.path(f"{src.stem}.svg"), meta, ctx.run)
    logger.info("wrote %s", path)
    return 0


def cmd_calibrate(ctx: Context) -> int:
    t = ctx.run.train
    th = calibrate_from_constructors(t.n_inputs, t.n_hidden, stream(t.seed, "calibrate"), ctx.run.calibration_per_class)
    th.meta.update(config_hash=ctx.run.hash(), version=version_string())
    write_json(ctx.path("thresholds.json"), th.to_dict())
    logger.info("theta1 %.4g theta2 %.4g", th.theta1, th.theta2)
    return 0


COMMANDS = {
    "train": cmd_train, "sweep": cmd_sweep, "ablate": cmd_ablate, "phases": cmd_phases,
    "generalize": cmd_generalize, "baseline": cmd_baseline, "draw": cmd_draw, "calibrate": cmd_calibrate,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config (overrides the scale preset)")
    common.add_argument("--scale", choices=sorted(PRESETS))
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory (default runs/<scale>)")
    common.add_argument("--beta-min", type=float)
    common.add_argument("--beta-max", type=float)
    common.add_argument("--beta-steps", type=int)
    common.add_argument("--jobs", type=int, default=1)
    common.add_argument("--overwrite", choices=OVERWRITE_POLICIES, default="refuse")
    common.add_argument("--quiet", action="store_true")

    parser = argparse.ArgumentParser(prog="hyperl1", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common], help="train the beta-conditioned hypernetwork")
    helps = {
        "sweep": "evaluate generated networks over the beta grid in both modes",
        "ablate": "the same grid with the decoder side only",
        "generalize": "decoder-only networks for unseen input and hidden sizes",
        "baseline": "Adam-trained network of the same size, drawn next to the best generated one",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--checkpoint", help="checkpoint manifest (default: latest under --out)")
    sub.add_parser("phases", parents=[common], help="algorithm labels across checkpoints and betas").add_argument(
        "checkpoints", nargs="*", help="checkpoint manifests (default: all under --out)")
    sub.add_parser("draw", parents=[common], help="force-directed SVG of a weights file").add_argument(
        "weights", help="weights JSON file")
    sub.add_parser("calibrate", parents=[common], help="fit classifier thresholds on constructor networks")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(levelname)s %(message)s")
    ctx = None
    try:
        ctx = Context(args, build_run_config(args))
        return COMMANDS[args.command](ctx)
    except NumericError as exc:
        logger.error("numeric failure: %s", exc)
        if ctx is not None and exc.dump is not None:
            try:
                write_json(ctx.out / "numeric_failure.json", {"message": str(exc), "dump": exc.dump})
            except HyperL1Error:
                pass
        return 3
    except (ConfigError, ShapeError) as exc:
        logger.error("config error: %s", exc)
        return 2
    except (ArtifactIOError, OSError) as exc:
        logger.error("I/O error: %s", exc)
        return 4
    except HyperL1Error as exc:
        logger.error("%s", exc)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())

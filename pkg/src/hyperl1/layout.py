"""Force-directed drawings of MLPs.

Energy: 1/r repulsion between every pair of neurons, |w| r^2 attraction along
every weight, and r^2 attraction of every neuron to the origin. Nodes start
in four dimensions; after each descent step the two extra coordinates are
multiplied by a factor that shrinks from 1 toward exp(-rate), so they vanish
by the end of the schedule and the drawing settles in the plane.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .errors import ArtifactIOError, NumericError
from .network import MlpWeights
from .rng import stream

ROLE_COLORS = {"input": "green", "output": "magenta", "hidden": "#7f7f7f"}
POSITIVE_COLOR, NEGATIVE_COLOR = "red", "blue"


@dataclass
class NeuronGraph:
    nodes: List[tuple]  # (layer, index, role)
    edges: List[tuple]  # (node_a, node_b, weight) with node_a in the earlier layer

    @classmethod
    def from_weights(cls, w: MlpWeights) -> "NeuronGraph":
        w = w.numpy()
        sizes = list(w.spec.layer_sizes)
        nodes, offsets = [], []
        for layer, n in enumerate(sizes):
            offsets.append(len(nodes))
            role = "input" if layer == 0 else "output" if layer == len(sizes) - 1 else "hidden"
            nodes.extend((layer, k, role) for k in range(n))
        edges = []
        for layer, W in enumerate(w.weights):
            for j in range(W.shape[0]):
                for i in range(W.shape[1]):
                    edges.append((offsets[layer] + i, offsets[layer + 1] + j, float(W[j, i])))
        return cls(nodes, edges)

    def __post_init__(self):
        for a, b, weight in self.edges:
            if abs(self.nodes[a][0] - self.nodes[b][0]) != 1:
                raise ValueError("edges may only join adjacent layers")
            if not math.isfinite(weight):
                raise ValueError("edge weights must be finite")

    def edge_arrays(self):
        if not self.edges:
            return np.zeros(0, int), np.zeros(0, int), np.zeros(0)
        a, b, w = zip(*self.edges)
        return np.array(a), np.array(b), np.array(w, dtype=np.float64)

    def permuted(self, perm: Sequence[int]) -> "NeuronGraph":
        """Same graph with node k moved to position perm[k]."""
        perm = list(perm)
        nodes = [None] * len(self.nodes)
        for old, new in enumerate(perm):
            nodes[new] = self.nodes[old]
        return NeuronGraph(nodes, [(perm[a], perm[b], w) for a, b, w in self.edges])


@dataclass
class LayoutConfig:
    iterations: int = 2000
    step_size: float = 1e-2
    decay_rate: float = 5.0
    dims: int = 4
    repulsion: float = 1.0
    attraction: float = 1.0
    centering: float = 1.0
    eps: float = 1e-9
    # shrink |w| only when the attraction curvature would make the fixed step unstable
    rescale_weights: bool = True
    stability_margin: float = 0.25  # bound on step * curvature
    max_displacement: float = 0.1
    max_restarts: int = 5
    seed: int = 0


def edge_strengths(graph: NeuronGraph, cfg: LayoutConfig) -> np.ndarray:
    """Edge strengths |w|, scaled down when needed so descent stays stable.

    The Hessian of the attraction term is bounded (Gershgorin) by
    4 * attraction * max weighted degree. Strengths are multiplied by the largest
    factor <= 1 keeping step_size times that bound under ``stability_margin``.
    """
    a, b, w = graph.edge_arrays()
    k = np.abs(w)
    if not cfg.rescale_weights or not k.size:
        return k
    degree = np.zeros(len(graph.nodes))
    np.add.at(degree, a, k)
    np.add.at(degree, b, k)
    bound = 4.0 * cfg.attraction * cfg.step_size * degree.max()
    if bound > cfg.stability_margin:
        k = k * (cfg.stability_margin / bound)
    return k


def layout_energy(pos: np.ndarray, graph: NeuronGraph, cfg: LayoutConfig = LayoutConfig(),
                  strengths: Optional[np.ndarray] = None) -> float:
    pos = np.asarray(pos, dtype=np.float64)
    k = edge_strengths(graph, cfg) if strengths is None else strengths
    diff = pos[:, None, :] - pos[None, :, :]
    r = np.sqrt((diff ** 2).sum(-1) + cfg.eps ** 2)
    iu = np.triu_indices(len(pos), 1)
    energy = cfg.repulsion * float(np.sum(1.0 / r[iu]))
    a, b, _ = graph.edge_arrays()
    if a.size:
        energy += cfg.attraction * float(np.sum(k * ((pos[a] - pos[b]) ** 2).sum(-1)))
    energy += cfg.centering * float(np.sum(pos ** 2))
    return energy


def layout_gradient(pos: np.ndarray, graph: NeuronGraph, cfg: LayoutConfig = LayoutConfig(),
                    strengths: Optional[np.ndarray] = None) -> np.ndarray:
    pos = np.asarray(pos, dtype=np.float64)
    k = edge_strengths(graph, cfg) if strengths is None else strengths
    diff = pos[:, None, :] - pos[None, :, :]
    r = np.sqrt((diff ** 2).sum(-1) + cfg.eps ** 2)
    np.fill_diagonal(r, np.inf)
    grad = -cfg.repulsion * (diff / r[..., None] ** 3).sum(axis=1)
    a, b, _ = graph.edge_arrays()
    if a.size:
        pull = 2.0 * cfg.attraction * k[:, None] * (pos[a] - pos[b])
        np.add.at(grad, a, pull)
        np.add.at(grad, b, -pull)
    grad += 2.0 * cfg.centering * pos
    return grad


def initial_positions(graph: NeuronGraph, cfg: LayoutConfig, attempt: int = 0) -> np.ndarray:
    """N(0, 1) start per node, keyed by the node's (layer, index) rather than its array slot."""
    return np.stack([
        stream(cfg.seed, f"layout:{layer}:{index}", attempt).standard_normal(cfg.dims)
        for layer, index, _ in graph.nodes
    ]) if graph.nodes else np.zeros((0, cfg.dims))


@dataclass
class LayoutResult:
    positions: np.ndarray  # (n, 2), viewport coordinates
    raw: np.ndarray  # (n, dims) after descent
    energy_trace: List[float] = field(default_factory=list)
    descent_increases: int = 0
    restarts: int = 0


def _descend(pos, graph, cfg, strengths):
    T = cfg.iterations
    trace, increases = [], 0
    energy = layout_energy(pos, graph, cfg, strengths)
    for t in range(T):
        step = -cfg.step_size * layout_gradient(pos, graph, cfg, strengths)
        norms = np.linalg.norm(step, axis=1, keepdims=True)
        step *= np.minimum(1.0, cfg.max_displacement / np.maximum(norms, 1e-300))
        pos = pos + step
        after = layout_energy(pos, graph, cfg, strengths)
        if after > energy:
            increases += 1
        if cfg.dims > 2:
            pos[:, 2:] *= math.exp(-cfg.decay_rate * t / T)
        energy = layout_energy(pos, graph, cfg, strengths)
        trace.append(after)
        if not math.isfinite(energy):
            return None, trace, increases
    return pos, trace, increases


def fit_viewport(xy: np.ndarray, size: float = 800.0, margin: float = 40.0) -> np.ndarray:
    if len(xy) == 0:
        return xy.copy()
    center = 0.5 * (xy.max(axis=0) + xy.min(axis=0))
    extent = float((xy.max(axis=0) - xy.min(axis=0)).max())
    scale = (size - 2 * margin) / extent if extent > 0 else 1.0
    return (xy - center) * scale + size / 2.0


def run_layout(graph: NeuronGraph, cfg: LayoutConfig = LayoutConfig(), size: float = 800.0) -> LayoutResult:
    strengths = edge_strengths(graph, cfg)
    for attempt in range(cfg.max_restarts + 1):
        pos = initial_positions(graph, cfg, attempt)
        final, trace, increases = _descend(pos, graph, cfg, strengths)
        if final is not None:
            return LayoutResult(fit_viewport(final[:, :2], size), final, trace, increases, attempt)
    raise NumericError(f"layout energy non-finite after {cfg.max_restarts} restarts")


# ---------------------------------------------------------------- rendering
def visible_edges(graph: NeuronGraph, floor_fraction: float = 0.02) -> List[tuple]:
    if not graph.edges:
        return []
    top = max(abs(w) for _, _, w in graph.edges)
    floor = floor_fraction * top
    return [e for e in graph.edges if e[2] != 0.0 and abs(e[2]) >= floor]


def svg_document(positions: np.ndarray, graph: NeuronGraph, floor_fraction: float = 0.02,
                 size: float = 800.0, metadata: Optional[dict] = None) -> str:
    edges = visible_edges(graph, floor_fraction)
    top = max((abs(w) for _, _, w in edges), default=1.0)
    lines = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{size:.0f}" height="{size:.0f}" '
        f'viewBox="0 0 {size:.0f} {size:.0f}">',
    ]
    meta = dict(metadata or {}, edge_floor_fraction=floor_fraction)
    lines.append("<!-- " + json.dumps(meta, sort_keys=True).replace("--", "- -") + " -->")
    for a, b, w in edges:
        (x1, y1), (x2, y2) = positions[a], positions[b]
        color = POSITIVE_COLOR if w > 0 else NEGATIVE_COLOR
        width = 0.5 + 4.0 * abs(w) / top
        lines.append(f'<line x1="{x1:.3f}" y1="{y1:.3f}" x2="{x2:.3f}" y2="{y2:.3f}" '
                     f'stroke="{color}" stroke-width="{width:.3f}" stroke-opacity="0.8"/>')
    for (x, y), (_, _, role) in zip(positions, graph.nodes):
        lines.append(f'<circle cx="{x:.3f}" cy="{y:.3f}" r="6" fill="{ROLE_COLORS[role]}" stroke="black" stroke-width="0.5"/>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


def render_svg(positions: np.ndarray, graph: NeuronGraph, path, floor_fraction: float = 0.02,
               size: float = 800.0, metadata: Optional[dict] = None) -> Path:
    path = Path(path)
    try:
        path.write_text(svg_document(positions, graph, floor_fraction, size, metadata))
    except OSError as exc:
        raise ArtifactIOError(f"cannot write {path}: {exc}") from exc
    return path


def write_sidecar(result: LayoutResult, graph: NeuronGraph, cfg: LayoutConfig, path, metadata: Optional[dict] = None) -> Path:
    path = Path(path)
    payload = dict(metadata or {})
    payload.update({
        "layout_config": asdict(cfg),
        "nodes": [list(n) for n in graph.nodes],
        "positions": np.round(result.positions, 6).tolist(),
        "restarts": result.restarts,
    })
    try:
        path.write_text(json.dumps(payload, indent=2, sort_keys=True))
    except OSError as exc:
        raise ArtifactIOError(f"cannot write {path}: {exc}") from exc
    return path


def hidden_nodes_with_visible_edges(graph: NeuronGraph, floor_fraction: float = 0.02) -> int:
    touched = set()
    for a, b, _ in visible_edges(graph, floor_fraction):
        touched.update((a, b))
    return sum(1 for k in touched if graph.nodes[k][2] == "hidden")

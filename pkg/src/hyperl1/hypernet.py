"""Attentional hypernetwork with a two-sided KL channel.

Hyperactivations live on the edges of the target MLP. For weight layer ``l``
they form an array of shape (n_in, n_out, 2, F): one row per weight position,
an encoder/decoder axis, and F hyperfeatures. A hyperlayer mixes the
hyperfeatures linearly, cuts the result into blocks, runs each block's own
operation along its own axis, and concatenates the block outputs back to F.

Block layout of one hyperlayer output (widths for the default config)::

    silu activation          20   reads mix[0:20]
    position of i if l == 0   8   injected
    position of j if l == N-1 8   injected
    position of l             8   injected
    standard normal samples   5   injected, shared by both sides
    neuron attention         10   reads mix[20:50]
    learned variables         5   encoder side only, zeros on decoder side
    KL channel sample         4   reads mix[50:58], shared by both sides

The only path from the encoder side to the decoder side is the channel
sample, and in ``decoder_only`` mode that sample comes from the decoder-side
distribution, so decoder outputs never depend on the learned variables.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Optional

import numpy as np

from . import tensor as T
from .errors import ConfigError
from .network import MlpSpec, MlpWeights
from .tensor import Tensor

ENCODER, DECODER = 0, 1
MODES = ("with_encoder", "decoder_only")


@dataclass(frozen=True)
class HyperConfig:
    depth: int = 4
    act_width: int = 20
    pos_width: int = 8
    random_width: int = 5
    head_width: int = 5
    learned_width: int = 5
    channel_width: int = 4
    min_wavelength: float = 2.0
    max_wavelength: float = 1e4
    sigma_floor: float = 1e-6

    def __post_init__(self):
        if self.pos_width % 2:
            raise ConfigError("positional encoding width must be even")
        if self.depth < 1:
            raise ConfigError("hyperdepth must be at least 1")

    @property
    def width(self) -> int:
        """Hyperfeature width F."""
        return (self.act_width + 3 * self.pos_width + self.random_width + 2 * self.head_width
                + self.learned_width + self.channel_width)

    @property
    def mix_width(self) -> int:
        """Total width of the block inputs read from the mixing output."""
        return self.act_width + 6 * self.head_width + 2 * self.channel_width

    def mix_slices(self) -> Dict[str, slice]:
        a, h, c = self.act_width, self.head_width, self.channel_width
        return {
            "act": slice(0, a),
            "attn": slice(a, a + 6 * h),
            "mu": slice(a + 6 * h, a + 6 * h + c),
            "sigma": slice(a + 6 * h + c, a + 6 * h + 2 * c),
        }


def positional_encoding(index, width: int = 8, min_wavelength: float = 2.0, max_wavelength: float = 1e4) -> np.ndarray:
    """Sinusoidal code of integer positions; (sin, cos) pairs over geometric wavelengths."""
    index = np.asarray(index, dtype=np.float64)
    n_freq = width // 2
    if n_freq == 1:
        wavelengths = np.array([min_wavelength])
    else:
        wavelengths = min_wavelength * (max_wavelength / min_wavelength) ** (np.arange(n_freq) / (n_freq - 1))
    angles = 2.0 * np.pi * index[..., None] / wavelengths
    out = np.empty(index.shape + (width,))
    out[..., 0::2] = np.sin(angles)
    out[..., 1::2] = np.cos(angles)
    return out


def gaussian_kl(mu_q, sigma_q, mu_p, sigma_p) -> Tensor:
    """Elementwise KL(N(mu_q, sigma_q^2) || N(mu_p, sigma_p^2))."""
    mu_q, sigma_q, mu_p, sigma_p = (T.as_tensor(x) for x in (mu_q, sigma_q, mu_p, sigma_p))
    ratio = (T.square(sigma_q) + T.square(mu_q - mu_p)) / (2.0 * T.square(sigma_p))
    return T.log(sigma_p) - T.log(sigma_q) + ratio - 0.5


class KlAccumulator:
    """Running total of channel divergences for one generation pass."""

    def __init__(self):
        self.total: Tensor = Tensor(0.0)

    def add(self, kl: Tensor) -> None:
        self.total = self.total + kl.sum()

    @property
    def value(self) -> float:
        return self.total.item()


def kl_channel(mu_q, sigma_q, mu_p, sigma_p, rng: np.random.Generator, kl: KlAccumulator,
               mode: str = "with_encoder", eps: Optional[np.ndarray] = None) -> Tensor:
    """Add KL(q || p) to ``kl`` and return a reparameterized sample.

    The sample is drawn from q in ``with_encoder`` mode and from p in
    ``decoder_only`` mode, using the same standard normal noise either way.
    """
    if mode not in MODES:
        raise ConfigError(f"unknown mode {mode!r}")
    mu_q, sigma_q, mu_p, sigma_p = (T.as_tensor(x) for x in (mu_q, sigma_q, mu_p, sigma_p))
    kl.add(gaussian_kl(mu_q, sigma_q, mu_p, sigma_p))
    if eps is None:
        eps = rng.standard_normal(mu_q.shape)
    if mode == "with_encoder":
        return mu_q + sigma_q * eps
    return mu_p + sigma_p * eps


def neuron_attention(q, k, v, scale: Optional[float] = None) -> Tensor:
    """Softmax attention over the second-to-last axis (the edges at one neuron).

    ``q``, ``k``, ``v`` have shape (..., n_edges, width); every edge queries all
    edges sharing the neuron, itself included.
    """
    q, k, v = T.as_tensor(q), T.as_tensor(k), T.as_tensor(v)
    scale = 1.0 / math.sqrt(k.shape[-1]) if scale is None else scale
    scores = T.matmul(q, T.transpose(k, tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2))) * scale
    return T.matmul(T.softmax(scores, axis=-1), v)


def graph_attention(mixes: List[Tensor], cfg: HyperConfig) -> List[Tensor]:
    """Attention block of every weight layer, (n_in, n_out, 2, 2*head_width) each.

    Each edge sends one query/key/value triple to the neuron in front of it
    and another to the neuron behind it; every neuron attends over all the
    triples it receives. The edge concatenates the answer from its front
    neuron with the answer from its behind neuron.
    """
    h = cfg.head_width
    base = cfg.mix_slices()["attn"].start
    n_layers = len(mixes)

    def part(m, offset):
        return T.slice_axis(m, base + offset, base + offset + h, axis=-1)

    # (q, k, v) sent forward and backward by every layer's edges
    front = [tuple(part(m, o) for o in (0, h, 2 * h)) for m in mixes]
    behind = [tuple(part(m, o) for o in (3 * h, 4 * h, 5 * h)) for m in mixes]

    from_front: List[Optional[Tensor]] = [None] * n_layers
    from_behind: List[Optional[Tensor]] = [None] * n_layers
    for b in range(n_layers + 1):
        groups, sizes = [], []
        if b > 0:
            # layer b-1 edges (i, m, side, h) -> (m, side, i, h)
            groups.append([T.transpose(x, (1, 2, 0, 3)) for x in front[b - 1]])
            sizes.append(mixes[b - 1].shape[0])
        if b < n_layers:
            # layer b edges (m, k, side, h) -> (m, side, k, h)
            groups.append([T.transpose(x, (0, 2, 1, 3)) for x in behind[b]])
            sizes.append(mixes[b].shape[1])
        qkv = [T.concat([g[t] for g in groups], axis=2) if len(groups) > 1 else groups[0][t] for t in range(3)]
        out = neuron_attention(*qkv)
        offset = 0
        if b > 0:
            piece = T.slice_axis(out, 0, sizes[0], axis=2)
            from_front[b - 1] = T.transpose(piece, (2, 0, 1, 3))
            offset = sizes[0]
        if b < n_layers:
            piece = T.slice_axis(out, offset, offset + sizes[-1], axis=2)
            from_behind[b] = T.transpose(piece, (0, 2, 1, 3))
    return [T.concat([from_front[l], from_behind[l]], axis=-1) for l in range(n_layers)]


def _both_sides(x: np.ndarray) -> np.ndarray:
    return np.broadcast_to(x[..., None, :], x.shape[:-1] + (2, x.shape[-1]))


class HyperNetwork:
    """Maps a flat hyperweight vector and a target architecture to MLP weights.

    ``train_spec`` fixes how many learned encoder variables exist (5 per
    weight position). Other architectures can only be generated in
    ``decoder_only`` mode, which never reads them.
    """

    def __init__(self, train_spec: MlpSpec, cfg: HyperConfig = HyperConfig()):
        self.train_spec = train_spec
        self.cfg = cfg
        F, M = cfg.width, cfg.mix_width
        entries = []
        for k in range(cfg.depth):
            entries.append((f"mix_w{k}", (F, M)))
            entries.append((f"mix_b{k}", (M,)))
        entries.append(("out_w", (F, 2)))
        entries.append(("out_b", (2,)))
        entries.append(("learned", (train_spec.n_positions(), cfg.learned_width)))
        self.layout = []
        offset = 0
        for name, shape in entries:
            size = int(np.prod(shape))
            self.layout.append((name, shape, offset, offset + size))
            offset += size
        self.n_params = offset

    # ------------------------------------------------------------ parameters
    def segment(self, name: str) -> slice:
        for entry, _, lo, hi in self.layout:
            if entry == name:
                return slice(lo, hi)
        raise KeyError(name)

    def unflatten(self, hw: Tensor) -> Dict[str, Tensor]:
        hw = T.as_tensor(hw)
        if hw.shape != (self.n_params,):
            raise ConfigError(f"hyperweight length {hw.shape} does not match P={self.n_params}")
        return {name: T.reshape(T.slice_axis(hw, lo, hi, axis=0), shape) for name, shape, lo, hi in self.layout}

    def init_hyperweights(self, rng: np.random.Generator, learned_scale: float = 0.1) -> np.ndarray:
        cfg = self.cfg
        hw = np.zeros(self.n_params)
        for name, shape, lo, hi in self.layout:
            if name.startswith("mix_w"):
                hw[lo:hi] = rng.normal(0.0, 1.0 / math.sqrt(cfg.width), size=hi - lo)
            elif name == "out_w":
                hw[lo:hi] = rng.normal(0.0, 1.0 / math.sqrt(cfg.width), size=hi - lo)
            elif name == "learned":
                hw[lo:hi] = rng.normal(0.0, learned_scale, size=hi - lo)
        return hw

    def _learned_blocks(self, params, spec: MlpSpec) -> List[Tensor]:
        learned = params["learned"]
        blocks, offset = [], 0
        for n_out, n_in in spec.layer_shapes():
            count = n_in * n_out
            block = T.slice_axis(learned, offset, offset + count, axis=0)
            blocks.append(T.reshape(block, (n_in, n_out, self.cfg.learned_width)))
            offset += count
        return blocks

    # -------------------------------------------------------------- forward
    def run_hyperlayer(self, acts: List[Tensor], k: int, params: Dict[str, Tensor], spec: MlpSpec,
                       rng: np.random.Generator, kl: KlAccumulator, mode: str,
                       learned: Optional[List[Tensor]]) -> List[Tensor]:
        cfg = self.cfg
        sl = cfg.mix_slices()
        n_layers = spec.n_layers
        mixes = [T.matmul(a, params[f"mix_w{k}"]) + params[f"mix_b{k}"] for a in acts]
        attention = graph_attention(mixes, cfg)
        out = []
        for l, m in enumerate(mixes):
            n_in, n_out = m.shape[0], m.shape[1]
            zeros_pos = np.zeros((n_in, n_out, 2, cfg.pos_width))
            enc = lambda idx: positional_encoding(idx, cfg.pos_width, cfg.min_wavelength, cfg.max_wavelength)  # noqa: E731
            ii, jj = np.meshgrid(np.arange(n_in), np.arange(n_out), indexing="ij")
            pos_i = _both_sides(enc(ii)) if l == 0 else zeros_pos
            pos_j = _both_sides(enc(jj)) if l == n_layers - 1 else zeros_pos
            pos_l = _both_sides(enc(np.full((n_in, n_out), l)))
            noise = _both_sides(rng.standard_normal((n_in, n_out, cfg.random_width)))

            if learned is not None:
                enc_side = T.reshape(learned[l], (n_in, n_out, 1, cfg.learned_width))
                learned_block = T.concat([enc_side, np.zeros((n_in, n_out, 1, cfg.learned_width))], axis=2)
            else:
                learned_block = Tensor(np.zeros((n_in, n_out, 2, cfg.learned_width)))

            mu = T.slice_axis(m, sl["mu"].start, sl["mu"].stop, axis=-1)
            sigma = T.softplus(T.slice_axis(m, sl["sigma"].start, sl["sigma"].stop, axis=-1)) + cfg.sigma_floor
            side = lambda t, s: T.slice_axis(t, s, s + 1, axis=2)  # noqa: E731
            eps = rng.standard_normal((n_in, n_out, 1, cfg.channel_width))
            z = kl_channel(side(mu, ENCODER), side(sigma, ENCODER), side(mu, DECODER), side(sigma, DECODER),
                           rng, kl, mode, eps=eps)
            z = T.broadcast_to(z, (n_in, n_out, 2, cfg.channel_width))

            act = T.silu(T.slice_axis(m, sl["act"].start, sl["act"].stop, axis=-1))
            out.append(T.concat([act, pos_i, pos_j, pos_l, noise, attention[l], learned_block, z], axis=-1))
        return out

    def generate_weights(self, hw, spec: MlpSpec, rng: np.random.Generator,
                         mode: str = "with_encoder") -> tuple:
        """Run the hyperlayers and read out (MlpWeights, kl_total).

        The weight of position (l, i, j) is the first readout feature on the
        decoder side; the bias of neuron j is the second feature averaged over i.
        """
        if mode not in MODES:
            raise ConfigError(f"unknown mode {mode!r}")
        if spec.n_layers < 2:
            raise ConfigError("target network needs at least one hidden layer")
        params = self.unflatten(hw)
        learned = None
        if spec == self.train_spec:
            learned = self._learned_blocks(params, spec)
        elif mode == "with_encoder":
            raise ConfigError(f"with_encoder generation needs the training architecture {self.train_spec.layer_sizes}")

        cfg = self.cfg
        acts = [Tensor(np.zeros((n_in, n_out, 2, cfg.width))) for n_out, n_in in spec.layer_shapes()]
        kl = KlAccumulator()
        for k in range(cfg.depth):
            acts = self.run_hyperlayer(acts, k, params, spec, rng, kl, mode, learned)

        weights, biases = [], []
        for a in acts:
            n_in, n_out = a.shape[0], a.shape[1]
            dec = T.reshape(T.slice_axis(a, DECODER, DECODER + 1, axis=2), (n_in, n_out, cfg.width))
            read = T.matmul(dec, params["out_w"]) + params["out_b"]
            w = T.reshape(T.slice_axis(read, 0, 1, axis=-1), (n_in, n_out))
            b = T.slice_axis(read, 1, 2, axis=-1).mean(axis=0)
            weights.append(T.transpose(w))
            biases.append(T.reshape(b, (n_out,)))
        return MlpWeights(weights, biases), kl.total

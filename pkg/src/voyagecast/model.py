"""Causally-masked multi-task transformer for segment duration forecasting.

Pipeline per sample: embed categorical features and concatenate them with
the five continuous channels, fuse with one linear layer, add sinusoidal
positional encoding, run stacked attention+FFN blocks under a lower-
triangular mask, then map each step through a small two-layer head with two
output channels (sailing duration, destination-port vessel count). Only the
trailing horizon steps feed the loss.

The attention scores are divided by sqrt(d_model); a config flag switches to
the conventional sqrt(head_dim) for comparison. The positional encoding
frequency base is 1000 by default, also switchable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import DiffNode
from .features import Batch, Vocabularies


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    d_emb: int = 32
    d_model: int = 32
    n_head: int = 8
    n_block: int = 2
    d_temp: int = 16
    p_att: float = 0.1
    p_ffn: float = 0.1
    lookback: int = 168
    horizon: int = 84
    beta: float = 0.8
    eta: float = 0.9
    scale_by_head_dim: bool = False
    pe_base: float = 1000.0
    ln_eps: float = 1e-5

    def __post_init__(self):
        if min(self.d_emb, self.d_model, self.n_head, self.n_block,
               self.d_temp, self.lookback, self.horizon) < 1:
            raise ModelError("all model dimensions must be >= 1")
        if self.d_model % self.n_head != 0:
            raise ModelError(
                f"d_model={self.d_model} not divisible by n_head={self.n_head}"
            )
        if self.d_model % 2 != 0:
            raise ModelError("d_model must be even for the positional encoding")
        if not (0.0 <= self.beta <= 1.0 and 0.0 <= self.eta <= 1.0):
            raise ModelError("beta and eta must lie in [0, 1]")
        for name, p in (("p_att", self.p_att), ("p_ffn", self.p_ffn)):
            if not 0.0 <= p < 1.0:
                raise ModelError(f"{name} must lie in [0, 1), got {p}")

    @property
    def n_steps(self):
        return self.lookback + self.horizon

    @property
    def d_head(self):
        return self.d_model // self.n_head

    @property
    def input_width(self):
        return 6 * self.d_emb + 5


@dataclass
class BlockParams:
    wq: list
    wk: list
    wv: list
    wo: DiffNode
    w2: DiffNode
    b2: DiffNode
    w3: DiffNode
    b3: DiffNode
    ln1_gain: DiffNode
    ln1_bias: DiffNode
    ln2_gain: DiffNode
    ln2_bias: DiffNode


@dataclass
class ModelParams:
    emb_g: DiffNode
    emb_r: DiffNode
    emb_p: DiffNode  # shared by start-port and destination-port slots
    emb_m: DiffNode
    emb_c: DiffNode
    w1: DiffNode
    b1: DiffNode
    blocks: list = field(default_factory=list)
    w4: DiffNode = None
    b4: DiffNode = None
    w5: DiffNode = None
    b5: DiffNode = None

    def named(self):
        """Deterministic (name, node) iteration over every parameter."""
        yield "emb_g", self.emb_g
        yield "emb_r", self.emb_r
        yield "emb_p", self.emb_p
        yield "emb_m", self.emb_m
        yield "emb_c", self.emb_c
        yield "w1", self.w1
        yield "b1", self.b1
        for i, blk in enumerate(self.blocks):
            for h in range(len(blk.wq)):
                yield f"block{i}.head{h}.wq", blk.wq[h]
                yield f"block{i}.head{h}.wk", blk.wk[h]
                yield f"block{i}.head{h}.wv", blk.wv[h]
            yield f"block{i}.wo", blk.wo
            yield f"block{i}.w2", blk.w2
            yield f"block{i}.b2", blk.b2
            yield f"block{i}.w3", blk.w3
            yield f"block{i}.b3", blk.b3
            yield f"block{i}.ln1_gain", blk.ln1_gain
            yield f"block{i}.ln1_bias", blk.ln1_bias
            yield f"block{i}.ln2_gain", blk.ln2_gain
            yield f"block{i}.ln2_bias", blk.ln2_bias
        yield "w4", self.w4
        yield "b4", self.b4
        yield "w5", self.w5
        yield "b5", self.b5

    def nodes(self):
        return [node for _, node in self.named()]

    def count(self):
        return int(sum(node.value.size for node in self.nodes()))

    def zero_grads(self):
        for node in self.nodes():
            node.zero_grad()

    def values(self):
        return {name: node.value.tolist() for name, node in self.named()}

    def load_values(self, doc: dict):
        for name, node in self.named():
            arr = np.array(doc[name], dtype=np.float64)
            if arr.shape != node.value.shape:
                raise ModelError(f"checkpoint shape mismatch for {name}: "
                                 f"{arr.shape} vs {node.value.shape}")
            node.value = arr


def init_params(cfg: ModelConfig, vocab: Vocabularies, seed: int = 0) -> ModelParams:
    """Fresh parameters: matrices uniform in +-sqrt(1/fan_in) (embedding
    tables use the embedding width as fan-in), biases zero, layer-norm
    gain 1 / bias 0."""
    rng = np.random.default_rng([int(seed), 0x6D6F64])

    def uniform(shape, fan_in):
        lim = math.sqrt(1.0 / fan_in)
        return ad.parameter(rng.uniform(-lim, lim, size=shape))

    def zeros(shape):
        return ad.parameter(np.zeros(shape))

    d, de = cfg.d_model, cfg.d_emb
    params = ModelParams(
        emb_g=uniform((7, de), de),
        emb_r=uniform((vocab.windows_per_day, de), de),
        emb_p=uniform((vocab.n_ports, de), de),
        emb_m=uniform((vocab.n_terminals, de), de),
        emb_c=uniform((vocab.n_carriers, de), de),
        w1=uniform((cfg.input_width, d), cfg.input_width),
        b1=zeros(d),
    )
    for _ in range(cfg.n_block):
        params.blocks.append(
            BlockParams(
                wq=[uniform((d, cfg.d_head), d) for _ in range(cfg.n_head)],
                wk=[uniform((d, cfg.d_head), d) for _ in range(cfg.n_head)],
                wv=[uniform((d, cfg.d_head), d) for _ in range(cfg.n_head)],
                wo=uniform((d, d), d),
                w2=uniform((d, 4 * d), d),
                b2=zeros(4 * d),
                w3=uniform((4 * d, d), 4 * d),
                b3=zeros(d),
                ln1_gain=ad.parameter(np.ones(d)),
                ln1_bias=zeros(d),
                ln2_gain=ad.parameter(np.ones(d)),
                ln2_bias=zeros(d),
            )
        )
    params.w4 = uniform((d, cfg.d_temp), d)
    params.b4 = zeros(cfg.d_temp)
    params.w5 = uniform((cfg.d_temp, 2), cfg.d_temp)
    params.b5 = zeros(2)
    return params


# ---------------------------------------------------------------------------
# building blocks


def positional_encoding(length: int, d_model: int, base: float = 1000.0) -> np.ndarray:
    """Sinusoidal encoding with frequencies base**(-2i/d_model); positions
    are 0-based within the step block."""
    if d_model % 2 != 0:
        raise ModelError("positional encoding needs an even d_model")
    t = np.arange(length, dtype=np.float64)[:, None]
    omega = base ** (-2.0 * np.arange(d_model // 2, dtype=np.float64) / d_model)
    pe = np.zeros((length, d_model))
    pe[:, 0::2] = np.sin(t * omega)
    pe[:, 1::2] = np.cos(t * omega)
    return pe


def causal_mask(n: int) -> np.ndarray:
    """mask[t, s] is True iff step s is visible from step t (s <= t)."""
    if n < 1:
        raise ModelError(f"mask size must be >= 1, got {n}")
    return np.tril(np.ones((n, n), dtype=bool))


def embed_inputs(batch: Batch, params: ModelParams) -> DiffNode:
    """Per-step concatenation [y, x, length, width, teu, Emb_c, Emb_p(start),
    Emb_p(end), Emb_m, Emb_g, Emb_r] -> [..., 6*d_emb + 5]."""
    continuous = DiffNode(
        np.stack([batch.y_in, batch.x_in, batch.length, batch.width, batch.teu], axis=-1)
    )
    return ad.concat_lastdim([
        continuous,
        ad.embedding_lookup(params.emb_c, batch.carrier),
        ad.embedding_lookup(params.emb_p, batch.p_start),
        ad.embedding_lookup(params.emb_p, batch.p_end),
        ad.embedding_lookup(params.emb_m, batch.terminal),
        ad.embedding_lookup(params.emb_g, batch.g),
        ad.embedding_lookup(params.emb_r, batch.r),
    ])


def fuse(xi: DiffNode, params: ModelParams) -> DiffNode:
    """One-layer linear feature fusion per step."""
    return ad.add(ad.matmul(xi, params.w1), params.b1)


def tmn_block(h_in: DiffNode, blk: BlockParams, cfg: ModelConfig, mode: str,
              rng: ad.Rng | None = None, collect_attention: bool = False):
    """Masked multi-head attention + position-wise FFN, each followed by a
    residual connection and layer normalization.

    Returns (output, per-head attention arrays or None).
    """
    n = h_in.value.shape[-2]
    mask = causal_mask(n)
    denom = math.sqrt(cfg.d_head if cfg.scale_by_head_dim else cfg.d_model)

    heads, maps = [], []
    for wq, wk, wv in zip(blk.wq, blk.wk, blk.wv):
        q = ad.matmul(h_in, wq)
        k = ad.matmul(h_in, wk)
        v = ad.matmul(h_in, wv)
        scores = ad.scale(ad.matmul(q, ad.transpose_last2(k)), 1.0 / denom)
        alpha = ad.masked_softmax(scores, mask)
        if collect_attention:
            maps.append(alpha.value.copy())
        heads.append(ad.matmul(alpha, v))

    z = ad.dropout(ad.matmul(ad.concat_lastdim(heads), blk.wo), cfg.p_att, mode, rng)
    z_norm = ad.layer_norm(ad.add(z, h_in), blk.ln1_gain, blk.ln1_bias, cfg.ln_eps)

    hidden = ad.dropout(ad.relu(ad.add(ad.matmul(z_norm, blk.w2), blk.b2)),
                        cfg.p_ffn, mode, rng)
    ffn = ad.add(ad.matmul(hidden, blk.w3), blk.b3)
    out = ad.layer_norm(ad.add(ffn, z_norm), blk.ln2_gain, blk.ln2_bias, cfg.ln_eps)
    return out, (maps if collect_attention else None)


@dataclass
class ForwardResult:
    y_pred: DiffNode  # [batch, horizon]
    x_pred: DiffNode  # [batch, horizon]
    attention: list | None  # per block: list per head of [batch, n, n]


def forward(batch: Batch, params: ModelParams, cfg: ModelConfig, mode: str = "eval",
            rng: ad.Rng | None = None, collect_attention: bool = False) -> ForwardResult:
    """Full forward pass over a stacked batch."""
    n = batch.g.shape[-1]
    if n != cfg.n_steps:
        raise ModelError(f"batch has {n} steps but config expects {cfg.n_steps}")
    if mode not in ("train", "eval"):
        raise ModelError(f"mode must be 'train' or 'eval', got {mode!r}")

    h = ad.add(fuse(embed_inputs(batch, params), params),
               DiffNode(positional_encoding(n, cfg.d_model, cfg.pe_base)))
    attention = [] if collect_attention else None
    for blk in params.blocks:
        h, maps = tmn_block(h, blk, cfg, mode, rng, collect_attention)
        if collect_attention:
            attention.append(maps)

    hidden = ad.relu(ad.add(ad.matmul(h, params.w4), params.b4))
    out = ad.add(ad.matmul(hidden, params.w5), params.b5)  # [..., n, 2]
    tail = ad.narrow(out, -2, cfg.lookback, cfg.horizon)
    y_pred = ad.reshape(ad.narrow(tail, -1, 0, 1), tail.value.shape[:-1])
    x_pred = ad.reshape(ad.narrow(tail, -1, 1, 1), tail.value.shape[:-1])
    return ForwardResult(y_pred=y_pred, x_pred=x_pred, attention=attention)


# ---------------------------------------------------------------------------
# loss


def composite_loss(y_pred: DiffNode, x_pred: DiffNode, y_target, x_target,
                   mask, beta: float, eta: float) -> DiffNode:
    """Masked MAE/MAPE blend on durations plus MAE on counts.

    Per sample: main = beta * sum(M |y - yhat|) / H
                     + (1 - beta) * sum(M |y - yhat| / y) / H
                aux  = sum(|x - xhat|) / H
                loss = eta * main + (1 - eta) * aux
    The batch loss is the mean over samples. Masked positions contribute
    exactly zero to both the value and every gradient.
    """
    y_target = np.atleast_2d(np.asarray(y_target, dtype=np.float64))
    x_target = np.atleast_2d(np.asarray(x_target, dtype=np.float64))
    mask = np.atleast_2d(np.asarray(mask, dtype=np.float64))
    if y_pred.value.ndim == 1:
        y_pred = ad.reshape(y_pred, (1, y_pred.value.shape[0]))
        x_pred = ad.reshape(x_pred, (1, x_pred.value.shape[0]))
    horizon = y_target.shape[-1]
    if ((mask > 0) & (y_target <= 0)).any():
        raise ModelError("masked-in target with non-positive duration (division hazard)")

    abs_err = ad.abs_(ad.sub(y_pred, DiffNode(y_target)))
    mae = ad.scale(ad.sum_(ad.mul(abs_err, DiffNode(mask)), axis=-1), 1.0 / horizon)
    mape_w = np.where(mask > 0, mask / np.where(y_target > 0, y_target, 1.0), 0.0)
    mape = ad.scale(ad.sum_(ad.mul(abs_err, DiffNode(mape_w)), axis=-1), 1.0 / horizon)
    main = ad.add(ad.scale(mae, beta), ad.scale(mape, 1.0 - beta))

    aux = ad.scale(ad.sum_(ad.abs_(ad.sub(x_pred, DiffNode(x_target))), axis=-1), 1.0 / horizon)
    total = ad.add(ad.scale(main, eta), ad.scale(aux, 1.0 - eta))
    return ad.mean_(total)


def main_task_loss(y_pred: DiffNode, y_target, mask, beta: float) -> DiffNode:
    """The duration-task part alone (used for validation model selection)."""
    zeros = np.zeros_like(y_pred.value)
    return composite_loss(y_pred, DiffNode(zeros), y_target, zeros, mask, beta, eta=1.0)

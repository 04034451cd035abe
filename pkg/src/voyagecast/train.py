"""Mini-batch Adam training with step learning-rate decay.

Epochs iterate seeded shuffles of the training samples; after each epoch the
validation main-task loss (masked MAE/MAPE blend, auxiliary task excluded)
is computed in eval mode and the parameter snapshot with the lowest value is
kept. Gradients are clipped at a global norm to guard against early MAPE
spikes. Training never sees the test split; it is not even a parameter.
"""

from __future__ import annotations

import json
import time
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .features import FeatureStats, Vocabularies, stack_samples
from .model import (
    ModelConfig,
    ModelParams,
    composite_loss,
    forward,
    init_params,
    main_task_loss,
)


class TrainError(RuntimeError):
    pass


ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

CHECKPOINT_VERSION = 1


def derive_seed(root: int, label: str) -> int:
    """Stable substream seed for a labeled purpose under one root seed."""
    return (int(root) * 0x9E3779B1 + zlib.crc32(label.encode())) % (2**63)


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 3e-3
    decay: float = 0.5
    decay_every: int = 10
    batch_size: int = 1024
    max_epochs: int = 30
    seed: int = 0
    clip_norm: float = 5.0

    def __post_init__(self):
        if self.lr0 <= 0:
            raise TrainError(f"lr0 must be > 0, got {self.lr0}")
        if not 0.0 < self.decay <= 1.0:
            raise TrainError(f"decay must lie in (0, 1], got {self.decay}")
        if self.batch_size < 1 or self.decay_every < 1:
            raise TrainError("batch_size and decay_every must be >= 1")


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """lr0 * decay^floor(epoch / decay_every)."""
    if epoch < 0:
        raise TrainError(f"epoch must be >= 0, got {epoch}")
    return cfg.lr0 * cfg.decay ** (epoch // cfg.decay_every)


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0


def adam_step(params: ModelParams, state: AdamState, lr: float) -> None:
    """Standard bias-corrected Adam update, elementwise over all parameters.

    Raises TrainError on non-finite gradients so the caller can abort the
    epoch with a diagnostic.
    """
    state.step += 1
    t = state.step
    for name, node in params.named():
        g = node.grad if node.grad is not None else np.zeros_like(node.value)
        if not np.isfinite(g).all():
            raise TrainError(f"non-finite gradient in parameter {name}")
        if name not in state.m:
            state.m[name] = np.zeros_like(node.value)
            state.v[name] = np.zeros_like(node.value)
        state.m[name] = ADAM_BETA1 * state.m[name] + (1 - ADAM_BETA1) * g
        state.v[name] = ADAM_BETA2 * state.v[name] + (1 - ADAM_BETA2) * g * g
        m_hat = state.m[name] / (1 - ADAM_BETA1**t)
        v_hat = state.v[name] / (1 - ADAM_BETA2**t)
        node.value = node.value - lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)


def clip_gradients(params: ModelParams, max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most ``max_norm``."""
    total = 0.0
    for node in params.nodes():
        if node.grad is not None:
            total += float((node.grad * node.grad).sum())
    norm = total**0.5
    if max_norm > 0 and norm > max_norm:
        factor = max_norm / norm
        for node in params.nodes():
            if node.grad is not None:
                node.grad *= factor
    return norm


# ---------------------------------------------------------------------------
# fit loop


@dataclass
class FitResult:
    params: ModelParams
    adam_state: AdamState
    log: list
    best_epoch: int
    best_val_loss: float
    stop_reason: str


def _snapshot(params: ModelParams) -> dict:
    return {name: node.value.copy() for name, node in params.named()}


def _restore(params: ModelParams, snap: dict) -> None:
    for name, node in params.named():
        node.value = snap[name].copy()


def evaluate_main_loss(samples, params: ModelParams, cfg: ModelConfig,
                       batch_size: int = 256) -> float:
    """Mean per-sample main-task loss in eval mode."""
    if not samples:
        return float("nan")
    total = 0.0
    with ad.no_grad():
        for lo in range(0, len(samples), batch_size):
            chunk = samples[lo:lo + batch_size]
            batch = stack_samples(chunk)
            res = forward(batch, params, cfg, mode="eval")
            loss = main_task_loss(res.y_pred, batch.y_target, batch.mask, cfg.beta)
            total += float(loss.value) * len(chunk)
    return total / len(samples)


def fit(train_samples, val_samples, model_cfg: ModelConfig, train_cfg: TrainConfig,
        vocab: Vocabularies) -> FitResult:
    """Train from scratch and return the checkpoint with the lowest
    validation main-task loss.

    Samples must already be standardized. With an empty validation split the
    selection metric falls back to the epoch's mean training loss.
    """
    if not train_samples:
        raise TrainError("training split is empty")
    params = init_params(model_cfg, vocab, seed=derive_seed(train_cfg.seed, "init"))
    state = AdamState()
    drop_rng = ad.Rng(derive_seed(train_cfg.seed, "dropout"))

    best = _snapshot(params)
    best_val = float("inf")
    best_epoch = -1
    log = []
    stop_reason = "max_epochs"
    n = len(train_samples)

    for epoch in range(train_cfg.max_epochs):
        t0 = time.monotonic()
        lr = lr_at(epoch, train_cfg)
        order = np.random.default_rng(
            [derive_seed(train_cfg.seed, "shuffle"), epoch]
        ).permutation(n)

        epoch_loss, aborted = 0.0, False
        for lo in range(0, n, train_cfg.batch_size):
            idx = order[lo:lo + train_cfg.batch_size]
            batch = stack_samples([train_samples[i] for i in idx])
            params.zero_grads()
            res = forward(batch, params, model_cfg, mode="train", rng=drop_rng)
            loss = composite_loss(
                res.y_pred, res.x_pred, batch.y_target, batch.x_target,
                batch.mask, model_cfg.beta, model_cfg.eta,
            )
            ad.backward(loss)
            epoch_loss += float(loss.value) * len(idx)
            try:
                clip_gradients(params, train_cfg.clip_norm)
                adam_step(params, state, lr)
            except TrainError as e:
                stop_reason = f"aborted epoch {epoch}: {e}"
                aborted = True
                break

        train_loss = epoch_loss / n
        val_loss = evaluate_main_loss(val_samples, params, model_cfg,
                                      batch_size=train_cfg.batch_size)
        selection = val_loss if val_samples else train_loss
        log.append({
            "epoch": epoch,
            "lr": lr,
            "train_loss": train_loss,
            "val_loss": val_loss,
            "wall_ms": round((time.monotonic() - t0) * 1000.0, 3),
        })
        if np.isfinite(selection) and selection < best_val:
            best_val = selection
            best_epoch = epoch
            best = _snapshot(params)
        if aborted:
            break
        if val_samples and not np.isfinite(val_loss):
            stop_reason = f"divergence at epoch {epoch}: non-finite validation loss"
            break

    _restore(params, best)
    return FitResult(
        params=params,
        adam_state=state,
        log=log,
        best_epoch=best_epoch,
        best_val_loss=best_val if best_epoch >= 0 else float("nan"),
        stop_reason=stop_reason,
    )


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, params: ModelParams, model_cfg: ModelConfig,
                    train_cfg: TrainConfig, stats: FeatureStats,
                    adam_state: AdamState | None = None, extra: dict | None = None) -> None:
    """Self-describing JSON checkpoint: config, vocab/stats tables, all
    parameter arrays and optimizer state."""
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "model_config": {k: getattr(model_cfg, k) for k in ModelConfig.__dataclass_fields__},
        "train_config": {k: getattr(train_cfg, k) for k in TrainConfig.__dataclass_fields__},
        "feature_stats": stats.to_json(),
        "params": params.values(),
        "adam_state": (
            {
                "step": adam_state.step,
                "m": {k: v.tolist() for k, v in adam_state.m.items()},
                "v": {k: v.tolist() for k, v in adam_state.v.items()},
            }
            if adam_state is not None
            else None
        ),
    }
    doc.update(extra or {})
    with open(path, "w") as fh:
        json.dump(doc, fh, sort_keys=True)


def load_checkpoint(path):
    """Returns (params, model_cfg, train_cfg, stats, adam_state, doc)."""
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format_version") != CHECKPOINT_VERSION:
        raise TrainError(f"unsupported checkpoint version {doc.get('format_version')}")
    model_cfg = ModelConfig(**doc["model_config"])
    train_cfg = TrainConfig(**doc["train_config"])
    stats = FeatureStats.from_json(doc["feature_stats"])
    params = init_params(model_cfg, stats.vocab, seed=0)
    params.load_values(doc["params"])
    adam_state = None
    if doc.get("adam_state"):
        adam_state = AdamState(
            m={k: np.array(v) for k, v in doc["adam_state"]["m"].items()},
            v={k: np.array(v) for k, v in doc["adam_state"]["v"].items()},
            step=int(doc["adam_state"]["step"]),
        )
    return params, model_cfg, train_cfg, stats, adam_state, doc

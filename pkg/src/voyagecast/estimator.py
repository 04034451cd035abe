"""Scikit-learn style facade over the duration forecaster.

``DurationForecaster`` exposes the usual ``fit`` / ``predict`` /
``get_params`` surface so the model composes with pipelines and grid
utilities. It owns input standardization: ``fit`` and ``predict`` take raw
(unstandardized) samples, and the training-split statistics are fitted and
frozen inside ``fit``.
"""

from __future__ import annotations

import dataclasses

import numpy as np
from sklearn.base import BaseEstimator

from . import autodiff as ad
from .features import (
    FeatureStats,
    Sample,
    Vocabularies,
    apply_stats_all,
    fit_stats,
    stack_samples,
)
from .model import ModelConfig, forward
from .train import TrainConfig, fit as train_fit, load_checkpoint, save_checkpoint

ABLATIONS = ("time_series", "vessel", "segment", "aux_off")


class EstimatorError(ValueError):
    pass


def check_samples(samples, lookback: int, horizon: int, what: str = "samples"):
    """Validate that every sample matches the configured window shape."""
    if not samples:
        raise EstimatorError(f"{what}: empty sample list")
    n_steps = lookback + horizon
    for i, s in enumerate(samples):
        if not isinstance(s, Sample):
            raise EstimatorError(f"{what}[{i}]: expected a Sample, got {type(s).__name__}")
        if len(s.y_in) != n_steps or len(s.y_target) != horizon:
            raise EstimatorError(
                f"{what}[{i}]: shape mismatch, got {len(s.y_in)} input steps / "
                f"{len(s.y_target)} targets, expected {n_steps} / {horizon}"
            )
    return samples


def apply_ablation(samples, which: str | None):
    """Feature-group removal on standardized samples.

    time_series: zero the duration/count input channels.
    vessel:      zero length/width/teu, carrier -> unknown.
    segment:     ports and terminal -> unknown.
    aux_off:     no input change (handled by eta=1 in the loss).
    """
    if which is None or which == "aux_off":
        return list(samples)
    if which not in ABLATIONS:
        raise EstimatorError(f"unknown ablation {which!r}, expected one of {ABLATIONS}")
    out = []
    for s in samples:
        if which == "time_series":
            out.append(dataclasses.replace(
                s, y_in=np.zeros_like(s.y_in), x_in=np.zeros_like(s.x_in)))
        elif which == "vessel":
            out.append(dataclasses.replace(
                s,
                length=np.zeros_like(s.length),
                width=np.zeros_like(s.width),
                teu=np.zeros_like(s.teu),
                carrier=np.zeros_like(s.carrier),
            ))
        else:  # segment
            out.append(dataclasses.replace(
                s,
                p_start=np.zeros_like(s.p_start),
                p_end=np.zeros_like(s.p_end),
                terminal=np.zeros_like(s.terminal),
            ))
    return out


class DurationForecaster(BaseEstimator):
    """Causal multi-task transformer with the training loop attached.

    Parameters mirror the model/training configuration; ``ablation`` removes
    one feature group (or the auxiliary task via ``aux_off``) for ablation
    studies. ``fit`` requires the frozen categorical vocabularies, since
    embedding table sizes depend on them.
    """

    def __init__(self, d_emb=32, d_model=32, n_head=8, n_block=2, d_temp=16,
                 p_att=0.1, p_ffn=0.1, lookback=168, horizon=84, beta=0.8, eta=0.9,
                 lr0=3e-3, lr_decay=0.5, lr_decay_every=10, batch_size=1024,
                 max_epochs=30, seed=0, clip_norm=5.0, scale_by_head_dim=False,
                 pe_base=1000.0, ablation=None):
        self.d_emb = d_emb
        self.d_model = d_model
        self.n_head = n_head
        self.n_block = n_block
        self.d_temp = d_temp
        self.p_att = p_att
        self.p_ffn = p_ffn
        self.lookback = lookback
        self.horizon = horizon
        self.beta = beta
        self.eta = eta
        self.lr0 = lr0
        self.lr_decay = lr_decay
        self.lr_decay_every = lr_decay_every
        self.batch_size = batch_size
        self.max_epochs = max_epochs
        self.seed = seed
        self.clip_norm = clip_norm
        self.scale_by_head_dim = scale_by_head_dim
        self.pe_base = pe_base
        self.ablation = ablation

    # -- config assembly ---------------------------------------------------

    def model_config(self) -> ModelConfig:
        eta = 1.0 if self.ablation == "aux_off" else self.eta
        return ModelConfig(
            d_emb=self.d_emb, d_model=self.d_model, n_head=self.n_head,
            n_block=self.n_block, d_temp=self.d_temp, p_att=self.p_att,
            p_ffn=self.p_ffn, lookback=self.lookback, horizon=self.horizon,
            beta=self.beta, eta=eta, scale_by_head_dim=self.scale_by_head_dim,
            pe_base=self.pe_base,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            lr0=self.lr0, decay=self.lr_decay, decay_every=self.lr_decay_every,
            batch_size=self.batch_size, max_epochs=self.max_epochs,
            seed=self.seed, clip_norm=self.clip_norm,
        )

    # -- fit / predict ------------------------------------------------------

    def fit(self, samples, val_samples=None, vocab: Vocabularies | None = None):
        if vocab is None:
            raise EstimatorError("fit needs the frozen vocabularies (vocab=...)")
        check_samples(samples, self.lookback, self.horizon, "train samples")
        if val_samples:
            check_samples(val_samples, self.lookback, self.horizon, "val samples")

        self.stats_ = fit_stats(samples, vocab)
        train_std = apply_ablation(apply_stats_all(samples, self.stats_), self.ablation)
        val_std = apply_ablation(
            apply_stats_all(val_samples or [], self.stats_), self.ablation
        )

        result = train_fit(train_std, val_std, self.model_config(), self.train_config(), vocab)
        self.params_ = result.params
        self.adam_state_ = result.adam_state
        self.fit_log_ = result.log
        self.best_epoch_ = result.best_epoch
        self.best_val_loss_ = result.best_val_loss
        self.stop_reason_ = result.stop_reason
        return self

    def _require_fitted(self):
        if not hasattr(self, "params_"):
            raise EstimatorError("estimator is not fitted")

    def _prepared(self, samples):
        check_samples(samples, self.lookback, self.horizon, "predict samples")
        return apply_ablation(apply_stats_all(samples, self.stats_), self.ablation)

    def predict(self, samples) -> np.ndarray:
        """Predicted sailing durations (raw hours) of shape [n, horizon]."""
        return self.predict_with_aux(samples)[0]

    def predict_with_aux(self, samples):
        """(durations, destination-port counts) over the horizon steps."""
        self._require_fitted()
        prepared = self._prepared(samples)
        cfg = self.model_config()
        ys, xs = [], []
        with ad.no_grad():
            for lo in range(0, len(prepared), max(1, int(self.batch_size))):
                batch = stack_samples(prepared[lo:lo + max(1, int(self.batch_size))])
                res = forward(batch, self.params_, cfg, mode="eval")
                ys.append(res.y_pred.value)
                xs.append(res.x_pred.value)
        return np.concatenate(ys, axis=0), np.concatenate(xs, axis=0)

    def attention_maps(self, sample) -> list:
        """Per-block, per-head attention matrices for one sample (eval mode)."""
        self._require_fitted()
        prepared = self._prepared([sample])
        with ad.no_grad():
            res = forward(stack_samples(prepared), self.params_, self.model_config(),
                          mode="eval", collect_attention=True)
        return [[head[0] for head in block] for block in res.attention]

    # -- persistence ---------------------------------------------------------

    def save(self, path, extra: dict | None = None):
        self._require_fitted()
        save_checkpoint(path, self.params_, self.model_config(), self.train_config(),
                        self.stats_, self.adam_state_,
                        extra={"estimator": self.get_params(), **(extra or {})})

    @classmethod
    def load(cls, path) -> "DurationForecaster":
        params, model_cfg, train_cfg, stats, adam_state, doc = load_checkpoint(path)
        est = cls(**doc.get("estimator", {}))
        est.params_ = params
        est.stats_ = stats
        est.adam_state_ = adam_state
        est.fit_log_ = doc.get("fit_log", [])
        return est


class ConstantForecaster:
    """Predicts one constant duration everywhere; the training-mean baseline."""

    def __init__(self, value: float, horizon: int):
        self.value = float(value)
        self.horizon = int(horizon)

    def predict(self, samples) -> np.ndarray:
        return np.full((len(samples), self.horizon), self.value)


def training_mean_duration(samples) -> float:
    """Mean of observed target durations over a (training) sample list."""
    total, count = 0.0, 0
    for s in samples:
        sel = s.mask > 0
        total += float(s.y_target[sel].sum())
        count += int(sel.sum())
    if count == 0:
        raise EstimatorError("no observed targets in the training samples")
    return total / count

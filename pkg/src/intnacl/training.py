"""Optimizers and the contrastive encoder training loop."""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape
from .data import AugmentConfig, Dataset, sample_contrastive_batch
from .encoder import Encoder, EncoderConfig, init, load_checkpoint, save_checkpoint
from .errors import ConfigError, NumericalError
from .losses import LossConfig, intnacl_loss, make_adv_inputs, preset

OPTIMIZERS = ("adam", "sgd")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 64
    learning_rate: float = 3e-4
    optimizer: str = "adam"
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    seed: int = 0
    loss: LossConfig = field(default_factory=lambda: preset("simclr"))
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    debias_views: int = 1

    def __post_init__(self):
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        if self.epochs < 1:
            raise ConfigError("must be at least 1", "epochs")
        if self.batch_size < 2:
            raise ConfigError("must be at least 2", "batch_size")
        if not (np.isfinite(self.learning_rate) and self.learning_rate > 0):
            raise ConfigError("must be positive", "learning_rate")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"unknown optimizer {self.optimizer!r}; expected one of {OPTIMIZERS}", "optimizer")
        if len(self.betas) != 2 or not all(0 <= b < 1 for b in self.betas):
            raise ConfigError("need two values in [0, 1)", "betas")
        if not self.eps > 0:
            raise ConfigError("must be positive", "eps")
        if self.debias_views < 1:
            raise ConfigError("must be at least 1", "debias_views")

    def to_dict(self) -> dict:
        return {
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "optimizer": self.optimizer,
            "betas": list(self.betas),
            "eps": self.eps,
            "seed": self.seed,
            "loss": self.loss.to_dict(),
            "augment": self.augment.to_dict(),
            "debias_views": self.debias_views,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if isinstance(d.get("loss"), dict):
            d["loss"] = LossConfig.from_dict(d["loss"])
        if isinstance(d.get("augment"), dict):
            d["augment"] = AugmentConfig(**d["augment"])
        return cls(**d)


@dataclass
class TrainHistory:
    epoch_loss: list[float] = field(default_factory=list)
    epoch_seconds: list[float] = field(default_factory=list)
    seeds: dict = field(default_factory=dict)
    attack_calls: int = 0
    steps: int = 0

    @property
    def wall_clock(self) -> float:
        return float(sum(self.epoch_seconds))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "loss", "seconds"])
            for i, (loss, sec) in enumerate(zip(self.epoch_loss, self.epoch_seconds)):
                w.writerow([i, repr(loss), f"{sec:.6f}"])


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def zeros_like(cls, params) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(params, grads, state: AdamState, lr: float, betas=(0.9, 0.999), eps: float = 1e-8):
    """Bias-corrected Adam update; returns ``(new_params, new_state)`` without mutating inputs."""
    if len(params) != len(grads) or any(p.shape != g.shape for p, g in zip(params, grads)):
        raise ConfigError("parameter and gradient shapes differ", "grads")
    b1, b2 = betas
    t = state.t + 1
    new_m, new_v, new_p = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        new_p.append(p - lr * m_hat / (np.sqrt(v_hat) + eps))
        new_m.append(m)
        new_v.append(v)
    return new_p, AdamState(new_m, new_v, t)


def sgd_step(params, grads, lr: float):
    return [p - lr * g for p, g in zip(params, grads)]


def batch_loss(enc: Encoder, batch, loss: LossConfig, params=None, rng=None, adv_inputs=None):
    return intnacl_loss(enc, batch, loss, params=params, adv_inputs=adv_inputs, rng=rng)


def train_encoder(ds: Dataset, enc_config: EncoderConfig, config: TrainConfig,
                  encoder: Encoder | None = None) -> tuple[Encoder, TrainHistory]:
    """Train an encoder on ``ds`` (labels unused) and return it with its history.

    Each epoch reshuffles the data and drops the final partial batch.
    Adversarial positives are built only when ``alpha > 0``.
    """
    if enc_config.input_dim != ds.dim:
        raise ConfigError(f"encoder input_dim {enc_config.input_dim} != data dimension {ds.dim}", "input_dim")
    N = min(config.batch_size, len(ds))
    if N < 2:
        raise ConfigError("dataset too small for a batch of 2", "batch_size")
    enc = encoder.copy() if encoder is not None else init(enc_config)
    loss_cfg = config.loss
    rng = np.random.default_rng(config.seed)
    history = TrainHistory(seeds={"train": config.seed, "encoder": enc_config.seed, "dataset": ds.seed})
    state = AdamState.zeros_like(enc.params)
    m = config.debias_views if loss_cfg.needs_debias else 0
    n_batches = len(ds) // N

    for epoch in range(config.epochs):
        start = time.perf_counter()
        order = rng.permutation(len(ds))
        total = 0.0
        for b in range(n_batches):
            idx = order[b * N : (b + 1) * N]
            batch = sample_contrastive_batch(ds, N, loss_cfg.M, loss_cfg.needs_fresh, config.augment, seed=rng,
                                             indices=idx, m=m)
            adv = None
            if loss_cfg.alpha > 0:
                adv = make_adv_inputs(enc, batch, loss_cfg, rng=rng)
                history.attack_calls += 1
            tape = Tape()
            tracked = enc.watch(tape)
            loss = batch_loss(enc, batch, loss_cfg, params=tracked, adv_inputs=adv)
            value = loss.item()
            if not np.isfinite(value):
                raise NumericalError(f"non-finite loss {value!r} at epoch {epoch}, batch {b}")
            grads = ad.backward(loss)
            g = [grads[p] for p in tracked]
            if config.optimizer == "adam":
                new, state = adam_step(enc.params, g, state, config.learning_rate, config.betas, config.eps)
            else:
                new = sgd_step(enc.params, g, config.learning_rate)
            enc.set_params(new)
            total += value
            history.steps += 1
        history.epoch_loss.append(total / n_batches)
        history.epoch_seconds.append(time.perf_counter() - start)
    return enc, history


def checkpoint_save(enc: Encoder, path) -> None:
    save_checkpoint(enc, path)


def checkpoint_load(path) -> Encoder:
    return load_checkpoint(path)


__all__ = [
    "TrainConfig",
    "TrainHistory",
    "AdamState",
    "adam_step",
    "sgd_step",
    "batch_loss",
    "train_encoder",
    "checkpoint_save",
    "checkpoint_load",
]

"""Negative-term estimators g0, g1 and g2.

Each estimator summarizes how strongly an anchor is attracted to its negative
samples.  They are written twice over the same core: batched versions that
take precomputed logits (``s / t`` for every anchor-sample pair) and are used
by the losses, and per-anchor convenience versions taking unit vectors.

* g0 is the plain mean of ``exp(logit)`` over the negatives.
* g1 debiases that mean by subtracting the expected contribution of
  same-class samples, weighted by the class prior ``tau_plus`` and estimated
  from extra positive views ``v``; the result is floored at ``exp(-1/t)``.
* g2 replaces g1's mean over ``u`` by a ``kappa**beta``-weighted mean,
  ``sum(kappa**(beta+1)) / sum(kappa**beta)``, so that negatives close to the
  anchor dominate.  ``beta = 0`` recovers g1 and ``tau_plus = 0`` recovers g0.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ShapeError

KINDS = ("g0", "g1", "g2")
UNIT_TOL = 1e-9


@dataclass(frozen=True)
class EstimatorConfig:
    kind: str = "g0"
    t: float = 1.0
    tau_plus: float = 0.01
    beta: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown estimator {self.kind!r}; expected one of {KINDS}", "kind")
        if not self.t > 0:
            raise ConfigError("temperature must be positive", "t")
        if not 0.0 <= self.tau_plus < 1.0:
            raise ConfigError("class prior must lie in [0, 1)", "tau_plus")
        if not self.beta >= 0:
            raise ConfigError("hard-negative exponent must be non-negative", "beta")

    @property
    def floor(self) -> float:
        return math.exp(-1.0 / self.t)

    @property
    def needs_v(self) -> bool:
        return self.kind != "g0"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EstimatorConfig":
        return cls(**d)


def g0_logits(neg_logits: Tensor) -> Tensor:
    """Row means of ``exp`` over an ``[N x K]`` logit matrix."""
    return ad.tmean(ad.exp(neg_logits), axis=1)


def _debias(cfg: EstimatorConfig, neg_part: Tensor, v_logits: Tensor) -> Tensor:
    pos_part = ad.tmean(ad.exp(v_logits), axis=1)
    raw = (neg_part - cfg.tau_plus * pos_part) / (1.0 - cfg.tau_plus)
    return ad.maximum(raw, cfg.floor)


def g1_logits(u_logits: Tensor, v_logits: Tensor, cfg: EstimatorConfig) -> Tensor:
    return _debias(cfg, ad.tmean(ad.exp(u_logits), axis=1), v_logits)


def g2_logits(u_logits: Tensor, v_logits: Tensor, cfg: EstimatorConfig) -> Tensor:
    num = ad.tsum(ad.exp((cfg.beta + 1.0) * u_logits), axis=1)
    den = ad.tsum(ad.exp(cfg.beta * u_logits), axis=1)
    return _debias(cfg, num / den, v_logits)


def negative_term(cfg: EstimatorConfig, neg_logits: Tensor, v_logits: Tensor | None = None) -> Tensor:
    """Batched estimator value, one entry per anchor row.

    ``neg_logits`` is ``[N x n]`` (these play the role of ``u`` for g1/g2),
    ``v_logits`` is ``[N x m]`` and is required unless ``cfg.kind == "g0"``.
    """
    neg_logits = ad.as_tensor(neg_logits)
    if neg_logits.ndim != 2 or neg_logits.shape[1] == 0:
        raise ShapeError(f"{cfg.kind}", neg_logits.shape, detail="need at least one negative per anchor")
    if cfg.kind == "g0":
        return g0_logits(neg_logits)
    if v_logits is None:
        raise ShapeError(cfg.kind, neg_logits.shape, detail="debiasing positives v are required")
    v_logits = ad.as_tensor(v_logits)
    if v_logits.ndim != 2 or v_logits.shape[0] != neg_logits.shape[0] or v_logits.shape[1] == 0:
        raise ShapeError(cfg.kind, neg_logits.shape, v_logits.shape, detail="need at least one v per anchor")
    if cfg.kind == "g1":
        return g1_logits(neg_logits, v_logits, cfg)
    return g2_logits(neg_logits, v_logits, cfg)


# --- per-anchor convenience API ---------------------------------------------


def _rows(name: str, x) -> Tensor:
    x = ad.as_tensor(x)
    if x.ndim == 1:
        x = ad.reshape(x, (1, x.shape[0]))
    if x.ndim != 2 or x.shape[0] == 0:
        raise ShapeError(name, x.shape, detail="need a non-empty set of vectors")
    norms = np.linalg.norm(x.data, axis=1)
    if np.any(np.abs(norms - 1.0) > UNIT_TOL):
        raise ValueError(f"{name}: rows must be unit-norm (got norms {norms})")
    return x


def _logits(anchor: Tensor, others: Tensor, t: float) -> Tensor:
    if anchor.shape[1] != others.shape[1]:
        raise ShapeError("estimator", anchor.shape, others.shape)
    return ad.matmul(anchor, ad.transpose(others)) / t


def g0(anchor, negatives, t: float = 1.0) -> Tensor:
    a = _rows("anchor", anchor)
    return ad.reshape(g0_logits(_logits(a, _rows("negatives", negatives), t)), ())


def g1(anchor, u, v, tau_plus: float = 0.01, t: float = 1.0) -> Tensor:
    cfg = EstimatorConfig("g1", t=t, tau_plus=tau_plus)
    a = _rows("anchor", anchor)
    val = g1_logits(_logits(a, _rows("u", u), t), _logits(a, _rows("v", v), t), cfg)
    return ad.reshape(val, ())


def g2(anchor, u, v, tau_plus: float = 0.01, beta: float = 1.0, t: float = 1.0) -> Tensor:
    cfg = EstimatorConfig("g2", t=t, tau_plus=tau_plus, beta=beta)
    a = _rows("anchor", anchor)
    val = g2_logits(_logits(a, _rows("u", u), t), _logits(a, _rows("v", v), t), cfg)
    return ad.reshape(val, ())


def estimate(cfg: EstimatorConfig, anchor, u, v=None) -> Tensor:
    """Dispatch on ``cfg.kind`` for a single anchor."""
    if cfg.kind == "g0":
        return g0(anchor, u, cfg.t)
    if v is None:
        raise ShapeError(cfg.kind, detail="debiasing positives v are required")
    if cfg.kind == "g1":
        return g1(anchor, u, v, cfg.tau_plus, cfg.t)
    return g2(anchor, u, v, cfg.tau_plus, cfg.beta, cfg.t)

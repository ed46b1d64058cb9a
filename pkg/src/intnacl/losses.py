"""The contrastive loss family and its Table-1 style presets.

Every loss is a mean over anchors of a per-anchor negative log-likelihood

    -log( P / (P + K * G) )

where ``P`` collects ``exp(f(x)^T f(positive) / t)`` terms, ``K`` is the
number of negatives and ``G`` one of the estimators.  All embeddings a loss
needs are produced by a single encoder pass over the stacked batch inputs.

Functions accept ``params`` (tracked weights from ``Encoder.watch``) for
weight gradients; batch inputs may be tracked tensors for input gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .adversarial import AttackConfig, contrastive_adv_positive
from .autodiff import Tensor
from .batch import ContrastiveBatch
from .encoder import Encoder, encode
from .errors import ConfigError, ShapeError
from .estimators import EstimatorConfig, negative_term

FAMILIES = ("NCA", "MIXNCA")
WEIGHTINGS = ("constant_one", "adversarial_hat")
PRESETS = ("simclr", "debiased", "debiased_hardneg", "adv", "intcl_fig1", "intnacl_fig1")

# adversarial positives are built in input space; this budget suits unit-scale features
DEFAULT_TRAIN_ATTACK = AttackConfig(epsilon=0.05, step_size=0.05, iterations=1, restarts=1)


@dataclass(frozen=True)
class LossConfig:
    family: str = "NCA"
    G1: EstimatorConfig = field(default_factory=EstimatorConfig)
    M: int = 1
    lam: float = 0.5
    alpha: float = 0.0
    G2: EstimatorConfig = field(default_factory=EstimatorConfig)
    weighting: str = "constant_one"
    attack: AttackConfig = DEFAULT_TRAIN_ATTACK
    attack_method: str = "fgsm"
    attack_anchor: bool = False

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown family {self.family!r}; expected one of {FAMILIES}", "family")
        if self.M < 1:
            raise ConfigError("must be at least 1", "M")
        if not 0.0 < self.lam <= 1.0:
            raise ConfigError("mixing weight must lie in (0, 1]", "lambda")
        if not self.alpha >= 0:
            raise ConfigError("must be non-negative", "alpha")
        if self.weighting not in WEIGHTINGS:
            raise ConfigError(f"unknown weighting {self.weighting!r}; expected one of {WEIGHTINGS}", "weighting")
        if self.attack_method not in ("fgsm", "pgd"):
            raise ConfigError("must be fgsm or pgd", "attack_method")

    @property
    def needs_fresh(self) -> bool:
        return self.family == "MIXNCA" and self.M > 1

    @property
    def needs_debias(self) -> bool:
        return self.G1.needs_v or (self.alpha > 0 and self.G2.needs_v)

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "G1": self.G1.to_dict(),
            "M": self.M,
            "lambda": self.lam,
            "alpha": self.alpha,
            "G2": self.G2.to_dict(),
            "weighting": self.weighting,
            "attack": self.attack.to_dict(),
            "attack_method": self.attack_method,
            "attack_anchor": self.attack_anchor,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LossConfig":
        d = dict(d)
        known = {"family", "G1", "M", "lambda", "lam", "alpha", "G2", "weighting", "attack", "attack_method",
                 "attack_anchor"}
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown keys {sorted(extra)}", "loss")
        if "lambda" in d:
            d["lam"] = d.pop("lambda")
        for key in ("G1", "G2"):
            if key in d and isinstance(d[key], dict):
                try:
                    d[key] = EstimatorConfig.from_dict(d[key])
                except TypeError as exc:
                    raise ConfigError(str(exc), f"loss.{key}") from exc
        if "attack" in d and isinstance(d["attack"], dict):
            d["attack"] = AttackConfig.from_dict(d["attack"])
        return cls(**d)


def preset(name: str, **overrides) -> LossConfig:
    """Named special cases of the integrated loss.

    ``overrides`` replace LossConfig fields; ``t`` is applied to both
    estimators.
    """
    t = overrides.pop("t", None)

    def est(kind):
        return EstimatorConfig(kind) if t is None else EstimatorConfig(kind, t=t)

    table = {
        "simclr": dict(G1=est("g0")),
        "debiased": dict(G1=est("g1")),
        "debiased_hardneg": dict(G1=est("g2")),
        "adv": dict(G1=est("g0"), alpha=1.0, G2=est("g0"), weighting="constant_one"),
        "intcl_fig1": dict(G1=est("g2"), alpha=1.0, G2=est("g2"), weighting="adversarial_hat"),
        "intnacl_fig1": dict(family="MIXNCA", G1=est("g2"), M=5, lam=0.5, alpha=1.0, G2=est("g2"),
                             weighting="adversarial_hat"),
    }
    if name not in table:
        raise ConfigError(f"unknown preset {name!r}; valid presets: {', '.join(PRESETS)}", "preset")
    base = LossConfig(**table[name])
    return replace(base, **overrides) if overrides else base


# --- embedding and logit plumbing -------------------------------------------


class _Embedded:
    """Encoder outputs for one batch, sliced back into named blocks."""

    def __init__(self, enc: Encoder, batch: ContrastiveBatch, params=None, *, mix_lam=None, adv=None,
                 fresh=False, debias=True):
        N, M, d = batch.N, batch.M, batch.d
        blocks: list[tuple[str, Tensor]] = [
            ("anchors", ad.as_tensor(batch.anchors)),
            ("positives", ad.reshape(batch.positives, (N * M, d))),
            ("pool", ad.as_tensor(batch.neg_pool)),
        ]
        if debias and batch.debias is not None:
            blocks.append(("debias", ad.reshape(batch.debias, (N * batch.m, d))))
        if fresh:
            if batch.fresh_pool is None:
                raise ShapeError("mixnca_loss", detail="batch lacks fresh negative sets for M > 1")
            blocks.append(("fresh", ad.as_tensor(batch.fresh_pool)))
        if mix_lam is not None:
            if batch.mix_partners is None:
                raise ShapeError("mixnca_loss", detail="batch lacks mix partners for M > 1")
            first = ad.take_rows(blocks[1][1], np.arange(N) * M)
            rep = ad.take_rows(first, np.repeat(np.arange(N), M - 1))
            partners = ad.reshape(batch.mix_partners, (N * (M - 1), d))
            # mixing happens in input space, before encoding
            blocks.append(("mix", mix_lam * rep + (1.0 - mix_lam) * partners))
        if adv is not None:
            adv = ad.as_tensor(adv)
            if adv.shape != (N, d):
                raise ShapeError("robust_loss", adv.shape, (N, d))
            blocks.append(("adv", adv))
        z = encode(enc, ad.concat([b for _, b in blocks], axis=0), params)
        self.parts: dict[str, Tensor] = {}
        start = 0
        for name, b in blocks:
            self.parts[name] = ad.slice_rows(z, start, start + b.shape[0])
            start += b.shape[0]
        self.batch = batch
        self._pool_logits: dict[float, Tensor] = {}

    def __getitem__(self, name: str) -> Tensor:
        return self.parts[name]

    def pair_logits(self, other: str, per_anchor: int, t: float) -> Tensor:
        """``[N x per_anchor]`` logits of each anchor with its own rows of ``other``."""
        N = self.batch.N
        a = self.parts["anchors"]
        if per_anchor != 1:
            a = ad.take_rows(a, np.repeat(np.arange(N), per_anchor))
        return ad.reshape(ad.row_dot(a, self.parts[other]) / t, (N, per_anchor))

    def neg_logits(self, t: float) -> Tensor:
        if t not in self._pool_logits:
            sims = ad.matmul(self.parts["anchors"], ad.transpose(self.parts["pool"])) / t
            self._pool_logits[t] = ad.gather_cols(sims, self.batch.neg_index)
        return self._pool_logits[t]

    def estimator(self, G: EstimatorConfig) -> Tensor:
        v = None
        if G.needs_v:
            if "debias" not in self.parts:
                raise ShapeError(G.kind, detail="batch lacks debiasing positives v")
            v = self.pair_logits("debias", self.batch.m, G.t)
        return negative_term(G, self.neg_logits(G.t), v)


def _nll(pos_logits: Tensor, g_val: Tensor, k: int) -> Tensor:
    """Per-anchor ``-log(P / (P + k*G))`` with ``P = sum(exp(pos_logits))``."""
    p = ad.tsum(ad.exp(pos_logits), axis=1)
    return ad.log(p + k * g_val) - ad.log(p)


def _standard_terms(emb: _Embedded, G: EstimatorConfig, n_pos: int = 1) -> Tensor:
    batch = emb.batch
    if n_pos == 1 and batch.M > 1:
        pos = ad.take_rows(emb["positives"], np.arange(batch.N) * batch.M)
        logits = ad.reshape(ad.row_dot(emb["anchors"], pos) / G.t, (batch.N, 1))
    else:
        logits = emb.pair_logits("positives", n_pos, G.t)
    return _nll(logits, emb.estimator(G), batch.K)


def _omega_terms(emb: _Embedded, G: EstimatorConfig, lam: float) -> Tensor:
    """Per-anchor mixup terms: weighted ``-log Omega_j`` and ``-log(1 - Omega_j)``."""
    batch = emb.batch
    N, J = batch.N, batch.M - 1
    fi = batch.fresh_index
    k_fresh = fi.shape[2]
    s = ad.reshape(emb.pair_logits("mix", J, G.t), (N * J,))
    sims = ad.matmul(emb["anchors"], ad.transpose(emb["fresh"])) / G.t
    negs = ad.reshape(ad.gather_cols(sims, fi.reshape(N, J * k_fresh)), (N * J, k_fresh))
    v = None
    if G.needs_v:
        v_all = emb.pair_logits("debias", batch.m, G.t)
        v = ad.take_rows(v_all, np.repeat(np.arange(N), J))
    kg = k_fresh * negative_term(G, negs, v)
    denom = ad.log(ad.exp(s) + kg)
    neg_log_omega = denom - s
    neg_log_one_minus = denom - ad.log(kg)
    per = (lam / J) * neg_log_omega + ((1.0 - lam) / J) * neg_log_one_minus
    return ad.tsum(ad.reshape(per, (N, J)), axis=1)


def _robust_terms(emb: _Embedded, G: EstimatorConfig) -> Tensor:
    s = emb.pair_logits("adv", 1, G.t)
    return _nll(s, emb.estimator(G), emb.batch.K)


# --- public losses ----------------------------------------------------------


def contrastive_loss(enc: Encoder, batch: ContrastiveBatch, G: EstimatorConfig, params=None) -> Tensor:
    """SimCLR-form loss with estimator ``G``; needs exactly one positive per anchor."""
    if batch.M != 1:
        raise ShapeError("contrastive_loss", (batch.M,), (1,), detail="M must be 1; use nca_loss")
    emb = _Embedded(enc, batch, params, debias=G.needs_v)
    return ad.tmean(_standard_terms(emb, G))


def nca_loss(enc: Encoder, batch: ContrastiveBatch, G: EstimatorConfig, M: int | None = None,
             params=None) -> Tensor:
    """Multi-positive loss: all M positive terms share one numerator."""
    M = batch.M if M is None else M
    if M != batch.M:
        raise ShapeError("nca_loss", (M,), (batch.M,), detail="M must match the batch's positive count")
    emb = _Embedded(enc, batch, params, debias=G.needs_v)
    return ad.tmean(_standard_terms(emb, G, n_pos=M))


def mixnca_loss(enc: Encoder, batch: ContrastiveBatch, G: EstimatorConfig, M: int | None = None,
                lam: float = 0.5, params=None) -> Tensor:
    """SimCLR-form term on the first positive plus M-1 soft-label mixup terms."""
    if not 0.0 < lam <= 1.0:
        raise ConfigError("mixing weight must lie in (0, 1]", "lambda")
    M = batch.M if M is None else M
    if M != batch.M:
        raise ShapeError("mixnca_loss", (M,), (batch.M,), detail="M must match the batch's positive count")
    mix = M > 1
    emb = _Embedded(enc, batch, params, mix_lam=lam if mix else None, fresh=mix, debias=G.needs_v)
    per = _standard_terms(emb, G)
    if mix:
        per = per + _omega_terms(emb, G, lam)
    return ad.tmean(per)


def adversarial_weight(enc: Encoder, batch: ContrastiveBatch, G: EstimatorConfig) -> np.ndarray:
    """Per-anchor standard contrastive loss on the first positive, as constants."""
    emb = _Embedded(enc, batch.detached(), debias=G.needs_v)
    return np.array(_standard_terms(emb, G).data)


def _weights(enc, batch, G2, weighting, weights):
    if weights is not None:
        w = np.asarray(weights.data if isinstance(weights, Tensor) else weights, dtype=np.float64)
        if w.shape != (batch.N,):
            raise ShapeError("robust_loss", w.shape, (batch.N,))
        return w
    if weighting == "constant_one":
        return np.ones(batch.N)
    if weighting == "adversarial_hat":
        return adversarial_weight(enc, batch, G2)
    raise ConfigError(f"unknown weighting {weighting!r}", "weighting")


def robust_loss(enc: Encoder, batch: ContrastiveBatch, adv_inputs, G2: EstimatorConfig,
                weighting: str = "constant_one", params=None, weights=None) -> Tensor:
    """Mean of ``w(x) * -log(e^{s_adv} / (e^{s_adv} + K*G2))``; ``w`` never carries gradient.

    ``weights`` overrides the weighting scheme with fixed per-anchor values.
    """
    w = _weights(enc, batch, G2, weighting, weights)
    emb = _Embedded(enc, batch, params, adv=adv_inputs, debias=G2.needs_v)
    return ad.tmean(_robust_terms(emb, G2) * w)


def per_anchor_pair_loss(enc: Encoder, batch: ContrastiveBatch, G: EstimatorConfig):
    """Closure ``x_pair -> per-anchor loss`` with everything else held constant.

    ``x_pair[i]`` plays the positive view of anchor ``i``.  Used to craft
    adversarial positives.
    """
    emb = _Embedded(enc, batch.detached(), debias=G.needs_v)
    anchors = emb["anchors"].detach()
    kg = Tensor(batch.K * emb.estimator(G).data)

    def loss_fn(x_pair):
        s = ad.row_dot(anchors, encode(enc, x_pair)) / G.t
        return ad.log(ad.exp(s) + kg) - s

    return loss_fn


def _nacl_terms(emb: _Embedded, config: LossConfig) -> Tensor:
    if config.family == "NCA":
        return _standard_terms(emb, config.G1, n_pos=config.M)
    per = _standard_terms(emb, config.G1)
    if config.M > 1:
        per = per + _omega_terms(emb, config.G1, config.lam)
    return per


def _check_m(batch: ContrastiveBatch, config: LossConfig, op: str) -> None:
    if batch.M != config.M:
        raise ShapeError(op, (config.M,), (batch.M,), detail="config M must match the batch's positive count")


def nacl_loss(enc: Encoder, batch: ContrastiveBatch, config: LossConfig, params=None) -> Tensor:
    if config.family == "NCA":
        return nca_loss(enc, batch, config.G1, config.M, params=params)
    return mixnca_loss(enc, batch, config.G1, config.M, config.lam, params=params)


def make_adv_inputs(enc: Encoder, batch: ContrastiveBatch, config: LossConfig, rng=None) -> np.ndarray:
    return contrastive_adv_positive(enc, batch, config.G2, config.attack, method=config.attack_method,
                                    rng=rng, attack_anchor=config.attack_anchor)


def _integrated(enc, batch, config, params, adv_inputs, weights, rng, single_positive: bool) -> Tensor:
    if adv_inputs is None:
        adv_inputs = make_adv_inputs(enc, batch, config, rng)
    mix = not single_positive and config.needs_fresh
    emb = _Embedded(enc, batch, params, mix_lam=config.lam if mix else None, fresh=mix, adv=adv_inputs,
                    debias=config.needs_debias)
    std = _standard_terms(emb, config.G1) if single_positive else _nacl_terms(emb, config)
    if weights is not None:
        w = _weights(enc, batch, config.G2, config.weighting, weights)
    elif config.weighting == "adversarial_hat":
        w = np.array(_standard_terms(emb, config.G2).data)
    else:
        w = np.ones(batch.N)
    rob = _robust_terms(emb, config.G2) * w
    return ad.tmean(std) + config.alpha * ad.tmean(rob)


def intnacl_loss(enc: Encoder, batch: ContrastiveBatch, config: LossConfig, params=None, adv_inputs=None,
                 weights=None, rng=None) -> Tensor:
    """Integrated loss: NCA/MIXNCA term plus ``alpha`` times the robust term.

    With ``alpha == 0`` no adversarial input is generated.  ``adv_inputs`` and
    ``weights`` may be passed precomputed (they are constants either way).
    """
    _check_m(batch, config, "intnacl_loss")
    if config.alpha == 0:
        return nacl_loss(enc, batch, config, params)
    return _integrated(enc, batch, config, params, adv_inputs, weights, rng, single_positive=False)


def intcl_loss(enc: Encoder, batch: ContrastiveBatch, config: LossConfig, params=None, adv_inputs=None,
               weights=None, rng=None) -> Tensor:
    """Single-positive integrated loss: SimCLR-form term with G1 plus ``alpha`` robust term."""
    if batch.M != 1:
        raise ShapeError("intcl_loss", (batch.M,), (1,), detail="M must be 1")
    if config.alpha == 0:
        return contrastive_loss(enc, batch, config.G1, params)
    return _integrated(enc, batch, config, params, adv_inputs, weights, rng, single_positive=True)

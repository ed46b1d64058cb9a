"""FGSM / PGD perturbations inside an l-infinity ball.

Loss functions passed to the attacks map a tracked input tensor to either a
scalar or a vector of per-sample losses.  Per-sample losses must depend only
on their own input row; the attacks then ascend the gradient of their sum and
keep the best candidate for every row independently.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .errors import ConfigError

ATTACK_KINDS = ("fgsm", "pgd")


@dataclass(frozen=True)
class AttackConfig:
    epsilon: float = 0.002
    step_size: float = 1e-2
    iterations: int = 10
    restarts: int = 2
    domain_bounds: tuple[float, float] | None = None
    seed: int = 0

    def __post_init__(self):
        if not self.epsilon >= 0:
            raise ConfigError("must be non-negative", "epsilon")
        if not self.step_size > 0:
            raise ConfigError("must be positive", "step_size")
        if self.iterations < 1:
            raise ConfigError("must be at least 1", "iterations")
        if self.restarts < 1:
            raise ConfigError("must be at least 1", "restarts")
        if self.domain_bounds is not None:
            lo, hi = self.domain_bounds
            if not lo < hi:
                raise ConfigError("lower bound must be below upper bound", "domain_bounds")
            object.__setattr__(self, "domain_bounds", (float(lo), float(hi)))

    @classmethod
    def fgsm(cls, epsilon: float, domain_bounds=None) -> "AttackConfig":
        return cls(epsilon=epsilon, step_size=epsilon if epsilon > 0 else 1.0, iterations=1, restarts=1,
                   domain_bounds=domain_bounds)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["domain_bounds"] = list(self.domain_bounds) if self.domain_bounds else None
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AttackConfig":
        d = dict(d)
        if d.get("domain_bounds") is not None:
            d["domain_bounds"] = tuple(d["domain_bounds"])
        return cls(**d)


def project_linf(candidate: np.ndarray, center: np.ndarray, epsilon: float, domain_bounds=None) -> np.ndarray:
    """Clip into the epsilon-ball around ``center`` (and the domain box).

    The result satisfies ``abs(result - center) <= epsilon`` when evaluated in
    float64, not merely up to rounding: coordinates that land one ulp outside
    after clipping are stepped back toward the center.
    """
    center = np.asarray(center, dtype=np.float64)
    out = np.clip(candidate, center - epsilon, center + epsilon)
    if domain_bounds is not None:
        out = np.clip(out, domain_bounds[0], domain_bounds[1])
    for _ in range(64):
        bad = np.abs(out - center) > epsilon
        if not bad.any():
            break
        out[bad] = np.nextafter(out[bad], center[bad])
    return out


def _loss_and_grad(loss_fn: Callable, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    tape = Tape()
    xt = tape.watch(x)
    val = ad.as_tensor(loss_fn(xt))
    root = val if val.size == 1 else ad.tsum(val)
    if root.ndim:
        root = ad.reshape(root, ())
    if not root.tracked:
        return np.array(val.data, dtype=np.float64), np.zeros_like(x)
    grads = ad.backward(root)
    return np.array(val.data, dtype=np.float64), grads[xt]


def _row_mask(mask: np.ndarray, shape) -> np.ndarray:
    return mask.reshape((-1,) + (1,) * (len(shape) - 1)) if mask.ndim else mask


def fgsm(loss_fn: Callable, x, epsilon: float, domain_bounds=None) -> np.ndarray:
    """One signed-gradient ascent step of size epsilon."""
    x = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    if epsilon == 0:
        return x.copy()
    _, g = _loss_and_grad(loss_fn, x)
    return project_linf(x + epsilon * np.sign(g), x, epsilon, domain_bounds)


def pgd(
    loss_fn: Callable,
    x,
    config: AttackConfig,
    rng: np.random.Generator | None = None,
    init=None,
    success_fn: Callable[[np.ndarray], np.ndarray] | None = None,
) -> np.ndarray:
    """Projected signed-gradient ascent with restarts.

    The first restart starts from ``init`` when given, otherwise from ``x``
    itself; later restarts start uniformly inside the ball.  Retained
    candidates are every iterate reached by a step, plus ``init``.  For each
    row the candidate with the highest loss is returned; with ``success_fn``
    (rows -> bool, e.g. "misclassified") a successful candidate always beats
    an unsuccessful one.
    """
    x = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    eps, bounds = config.epsilon, config.domain_bounds
    if eps == 0:
        return x.copy()
    rng = rng if rng is not None else np.random.default_rng(config.seed)

    best = None
    best_loss = None
    best_ok = None

    def consider(cand: np.ndarray, loss: np.ndarray) -> None:
        nonlocal best, best_loss, best_ok
        ok = np.asarray(success_fn(cand), dtype=bool) if success_fn is not None else np.zeros(loss.shape, bool)
        if best is None:
            best, best_loss, best_ok = cand.copy(), loss.copy(), ok
            return
        better = (ok & ~best_ok) | ((ok == best_ok) & (loss > best_loss))
        if better.ndim == 0:
            if better:
                best, best_loss, best_ok = cand.copy(), loss.copy(), ok
            return
        m = _row_mask(better, cand.shape)
        best = np.where(m, cand, best)
        best_loss = np.where(better, loss, best_loss)
        best_ok = np.where(better, ok, best_ok)

    if init is not None:
        init = project_linf(np.array(init, dtype=np.float64), x, eps, bounds)

    for r in range(config.restarts):
        if r == 0:
            cur = init.copy() if init is not None else x.copy()
        else:
            cur = project_linf(x + rng.uniform(-eps, eps, size=x.shape), x, eps, bounds)
        for it in range(config.iterations + 1):
            loss, g = _loss_and_grad(loss_fn, cur)
            if it > 0 or (r == 0 and init is not None):
                consider(cur, loss)
            if it < config.iterations:
                cur = project_linf(cur + config.step_size * np.sign(g), x, eps, bounds)
    return best


def run_attack(kind: str, loss_fn: Callable, x, config: AttackConfig, rng=None, init=None,
               success_fn=None) -> np.ndarray:
    if kind == "fgsm":
        return fgsm(loss_fn, x, config.epsilon, config.domain_bounds)
    if kind == "pgd":
        return pgd(loss_fn, x, config, rng=rng, init=init, success_fn=success_fn)
    raise ConfigError(f"unknown attack {kind!r}; expected one of {ATTACK_KINDS}", "attack")


def contrastive_adv_positive(enc, batch, G, config: AttackConfig, method: str = "fgsm",
                             rng=None, attack_anchor: bool = False) -> np.ndarray:
    """Adversarial positive views for a contrastive batch.

    Perturbs the first positive view (or the anchor view with
    ``attack_anchor``) to maximize the per-anchor contrastive loss of the
    perturbed view against the anchor and the batch negatives, with encoder
    weights held fixed.  The returned array carries no tape.
    """
    from .losses import per_anchor_pair_loss  # losses imports this module

    start = batch.anchors if attack_anchor else batch.positives[:, 0, :]
    start = np.array(start.data if isinstance(start, Tensor) else start, dtype=np.float64)
    if config.epsilon == 0:
        return start.copy()
    plain = batch.detached()
    context = per_anchor_pair_loss(enc, plain, G)
    return run_attack(method, context, start, config, rng=rng)

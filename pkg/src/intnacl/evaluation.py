"""Linear-probe evaluation: standard, adversarially robust and transfer accuracy."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .adversarial import AttackConfig, fgsm, pgd
from .autodiff import Tape, Tensor
from .data import Dataset
from .encoder import Encoder, encode
from .errors import ConfigError

PROBE_EPOCHS = 200
PROBE_LR = 1e-2
# multi-step evaluation attack: step 1e-2, 10 iterations, 2 restarts
PGD_DEFAULT = dict(step_size=1e-2, iterations=10, restarts=2)


@dataclass
class LinearProbe:
    weights: np.ndarray  # [embed_dim, K]
    bias: np.ndarray  # [K]

    @property
    def class_count(self) -> int:
        return self.bias.shape[0]

    def logits(self, z, params=None) -> Tensor:
        w, b = params if params is not None else (self.weights, self.bias)
        return ad.add_bias(ad.matmul(z, w), b)


def _log_softmax(logits: Tensor) -> Tensor:
    n, k = logits.shape
    # the shift is a constant; it cancels exactly in value and gradient
    shift = Tensor(np.repeat(logits.data.max(axis=1, keepdims=True), k, axis=1))
    s = logits - shift
    lse = ad.log(ad.tsum(ad.exp(s), axis=1))
    return s - ad.matmul(ad.reshape(lse, (n, 1)), Tensor(np.ones((1, k))))


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Per-sample softmax cross-entropy ``[n]``."""
    labels = np.asarray(labels, dtype=np.intp)
    picked = ad.gather_cols(_log_softmax(logits), labels[:, None])
    return -ad.reshape(picked, (labels.shape[0],))


def _embed(enc: Encoder, x) -> np.ndarray:
    return np.array(encode(enc, np.asarray(x, dtype=np.float64)).data)


def train_linear_probe(enc: Encoder, ds: Dataset, epochs: int = PROBE_EPOCHS, lr: float = PROBE_LR,
                       seed: int = 0, betas=(0.9, 0.999), eps: float = 1e-8) -> LinearProbe:
    """Full-batch Adam on softmax cross-entropy over frozen embeddings."""
    from .training import AdamState, adam_step

    z = _embed(enc, ds.features)  # encoder output computed once; no weight ever sees a gradient
    rng = np.random.default_rng(seed)
    k = ds.class_count
    params = [0.01 * rng.standard_normal((z.shape[1], k)), np.zeros(k)]
    state = AdamState.zeros_like(params)
    for _ in range(epochs):
        tape = Tape()
        w, b = tape.watch(params[0]), tape.watch(params[1])
        loss = ad.tmean(cross_entropy(ad.add_bias(ad.matmul(z, w), b), ds.labels))
        g = ad.backward(loss)
        params, state = adam_step(params, [g[w], g[b]], state, lr, betas, eps)
    return LinearProbe(params[0], params[1])


def predict(enc: Encoder, probe: LinearProbe, x) -> np.ndarray:
    return np.argmax(probe.logits(_embed(enc, x)).data, axis=1)


def standard_accuracy(enc: Encoder, probe: LinearProbe, ds: Dataset) -> float:
    return float(np.mean(predict(enc, probe, ds.features) == ds.labels))


def _attack_loss(enc: Encoder, probe: LinearProbe, labels):
    def loss_fn(x):
        return cross_entropy(probe.logits(encode(enc, x)), labels)

    return loss_fn


def adversarial_examples(enc: Encoder, probe: LinearProbe, ds: Dataset, attack: AttackConfig,
                         kind: str = "fgsm") -> np.ndarray:
    """Attacked copies of ``ds.features`` against ``probe`` composed with ``enc``.

    PGD is warm-started from the FGSM point and prefers misclassifying
    candidates, so every input FGSM fools is also fooled by PGD.
    """
    x = ds.features
    loss_fn = _attack_loss(enc, probe, ds.labels)
    one_step = fgsm(loss_fn, x, attack.epsilon, attack.domain_bounds)
    if kind == "fgsm":
        return one_step
    if kind != "pgd":
        raise ConfigError(f"unknown attack {kind!r}; expected fgsm or pgd", "attack")

    def fooled(cand):
        return predict(enc, probe, cand) != ds.labels

    return pgd(loss_fn, x, attack, rng=np.random.default_rng(attack.seed), init=one_step, success_fn=fooled)


def robust_accuracy(enc: Encoder, probe: LinearProbe, ds: Dataset, attack: AttackConfig | None = None,
                    kind: str = "fgsm") -> float:
    attack = attack if attack is not None else AttackConfig()
    x_adv = adversarial_examples(enc, probe, ds, attack, kind)
    return float(np.mean(predict(enc, probe, x_adv) == ds.labels))


def eval_attack(epsilon: float, seed: int = 0) -> AttackConfig:
    """Evaluation attack at budget ``epsilon`` with the default PGD schedule."""
    return AttackConfig(epsilon=epsilon, seed=seed, **PGD_DEFAULT)


def transfer_eval(enc: Encoder, ds_b: Dataset, epsilon: float = 0.002, probe_epochs: int = PROBE_EPOCHS,
                  seed: int = 0, train_fraction: float = 0.8) -> tuple[float, float]:
    """Fresh probe on ``ds_b`` over the frozen encoder; returns ``(acc, fgsm_acc)``."""
    if ds_b.dim != enc.config.input_dim:
        raise ConfigError(f"transfer data has dimension {ds_b.dim}, encoder expects {enc.config.input_dim}",
                          "transfer")
    train, test = ds_b.split(train_fraction, seed)
    probe = train_linear_probe(enc, train, epochs=probe_epochs, seed=seed)
    return standard_accuracy(enc, probe, test), robust_accuracy(enc, probe, test, eval_attack(epsilon, seed))


@dataclass
class ExperimentResult:
    standard_acc: float
    fgsm_acc: float
    pgd_acc: float
    transfer_acc: float | None
    transfer_fgsm_acc: float | None
    epsilon: float
    config: dict = field(default_factory=dict)
    seeds: dict = field(default_factory=dict)
    wall_clock: float = 0.0
    history: list[float] = field(default_factory=list)
    curve: list[dict] = field(default_factory=list)  # accuracies at every evaluated epsilon

    ACCURACY_FIELDS = ("standard_acc", "fgsm_acc", "pgd_acc", "transfer_acc", "transfer_fgsm_acc")

    def __post_init__(self):
        for name in self.ACCURACY_FIELDS:
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} outside [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, sort_keys=True)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentResult":
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "ExperimentResult":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def evaluate(enc: Encoder, train: Dataset, test: Dataset, epsilon: float, transfer: Dataset | None = None,
             probe_epochs: int = PROBE_EPOCHS, seed: int = 0) -> dict:
    """All five accuracies for one encoder as a dict."""
    probe = train_linear_probe(enc, train, epochs=probe_epochs, seed=seed)
    attack = eval_attack(epsilon, seed)
    out = {
        "standard_acc": standard_accuracy(enc, probe, test),
        "fgsm_acc": robust_accuracy(enc, probe, test, attack, "fgsm"),
        "pgd_acc": robust_accuracy(enc, probe, test, attack, "pgd"),
        "transfer_acc": None,
        "transfer_fgsm_acc": None,
    }
    if transfer is not None:
        out["transfer_acc"], out["transfer_fgsm_acc"] = transfer_eval(enc, transfer, epsilon, probe_epochs, seed)
    return out

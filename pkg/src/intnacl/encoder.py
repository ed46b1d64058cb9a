"""MLP encoder ``f(x) = h(x) / ||h(x)||`` with JSON checkpoints."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .errors import CheckpointCorruptError, CheckpointVersionError, ConfigError, ShapeError

CHECKPOINT_FORMAT = "intnacl-encoder"
CHECKPOINT_VERSION = 1
BIAS_INIT = 0.01

_ACTIVATIONS = {"relu": ad.relu, "tanh": ad.tanh}


@dataclass(frozen=True)
class EncoderConfig:
    input_dim: int = 8
    hidden_dims: tuple[int, ...] = (64, 64)
    embed_dim: int = 16
    activation: str = "relu"
    seed: int = 0
    # single linear layer, used to stipulate embeddings exactly in tests
    passthrough: bool = False

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1:
            raise ConfigError("must be positive", "input_dim")
        if self.embed_dim < 2:
            raise ConfigError("must be at least 2", "embed_dim")
        if self.activation not in _ACTIVATIONS:
            raise ConfigError(f"unknown activation {self.activation!r}; use relu or tanh", "activation")
        if self.passthrough:
            if self.hidden_dims:
                raise ConfigError("passthrough encoders have no hidden layers", "hidden_dims")
        elif not self.hidden_dims or any(h < 1 for h in self.hidden_dims):
            raise ConfigError("must be a non-empty list of positive widths", "hidden_dims")

    @property
    def layer_dims(self) -> list[tuple[int, int]]:
        dims = [self.input_dim, *self.hidden_dims, self.embed_dim]
        return list(zip(dims[:-1], dims[1:]))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden_dims"] = list(self.hidden_dims)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EncoderConfig":
        return cls(**d)


@dataclass
class Encoder:
    """Weights are stored as plain float64 arrays, ``(W, b)`` per layer."""

    config: EncoderConfig
    weights: list[np.ndarray] = field(default_factory=list)
    biases: list[np.ndarray] = field(default_factory=list)

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend([w, b])
        return out

    def set_params(self, arrays) -> None:
        arrays = list(arrays)
        if len(arrays) != 2 * len(self.weights):
            raise ShapeError("set_params", (len(arrays),), (2 * len(self.weights),))
        for i in range(len(self.weights)):
            w, b = np.array(arrays[2 * i], dtype=np.float64), np.array(arrays[2 * i + 1], dtype=np.float64)
            if w.shape != self.weights[i].shape or b.shape != self.biases[i].shape:
                raise ShapeError("set_params", w.shape, self.weights[i].shape)
            self.weights[i], self.biases[i] = w, b

    def copy(self) -> "Encoder":
        return Encoder(self.config, [w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    def flat_params(self) -> np.ndarray:
        return np.concatenate([p.reshape(-1) for p in self.params])

    def with_flat_params(self, flat) -> "Encoder":
        flat = np.asarray(flat, dtype=np.float64)
        arrays, pos = [], 0
        for p in self.params:
            arrays.append(flat[pos : pos + p.size].reshape(p.shape))
            pos += p.size
        enc = self.copy()
        enc.set_params(arrays)
        return enc

    def watch(self, tape: Tape) -> list[Tensor]:
        """Put every weight on ``tape``; returns tracked params in ``params`` order."""
        return [tape.watch(p) for p in self.params]

    @classmethod
    def identity(cls, dim: int) -> "Encoder":
        """Pass-through encoder ``f(x) = x / ||x||``."""
        cfg = EncoderConfig(input_dim=dim, hidden_dims=(), embed_dim=dim, passthrough=True)
        return cls(cfg, [np.eye(dim)], [np.zeros(dim)])


def init(config: EncoderConfig) -> Encoder:
    """Uniform(+-1/sqrt(fan_in)) weights, small positive biases, seeded."""
    rng = np.random.default_rng(config.seed)
    enc = Encoder(config)
    for fan_in, fan_out in config.layer_dims:
        bound = 1.0 / np.sqrt(fan_in)
        enc.weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        enc.biases.append(np.full(fan_out, BIAS_INIT))
    return enc


def pre_normalized(enc: Encoder, x, params: list[Tensor] | None = None) -> Tensor:
    """The unnormalized network output ``h(x)``."""
    x = ad.as_tensor(x)
    if x.ndim != 2 or x.shape[1] != enc.config.input_dim:
        raise ShapeError("encode", x.shape, (x.shape[0] if x.ndim else 0, enc.config.input_dim))
    ps = params if params is not None else enc.params
    act = _ACTIVATIONS[enc.config.activation]
    n_layers = len(enc.weights)
    h = x
    for i in range(n_layers):
        h = ad.add_bias(ad.matmul(h, ps[2 * i]), ps[2 * i + 1])
        if i < n_layers - 1:
            h = act(h)
    return h


def encode(enc: Encoder, x, params: list[Tensor] | None = None) -> Tensor:
    """Unit-norm embeddings, one row per input row.

    ``params`` substitutes tracked copies of the weights (see ``Encoder.watch``)
    so the result is differentiable with respect to them.  ``x`` may itself be
    tracked for input gradients.
    """
    return ad.l2_normalize_rows(pre_normalized(enc, x, params))


def save_checkpoint(enc: Encoder, path) -> None:
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": enc.config.to_dict(),
        # repr(float) round-trips float64 exactly
        "weights": [w.reshape(-1).tolist() for w in enc.weights],
        "biases": [b.tolist() for b in enc.biases],
    }
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path) -> Encoder:
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CheckpointCorruptError(f"{path}: not a valid checkpoint ({exc.msg} at char {exc.pos})") from exc
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointCorruptError(f"{path}: missing or wrong format tag")
    version = doc.get("version")
    if version != CHECKPOINT_VERSION:
        raise CheckpointVersionError(f"{path}: checkpoint version {version!r}, this build reads {CHECKPOINT_VERSION}")
    try:
        config = EncoderConfig.from_dict(doc["config"])
        enc = Encoder(config)
        for (fan_in, fan_out), w, b in zip(config.layer_dims, doc["weights"], doc["biases"], strict=True):
            enc.weights.append(np.array(w, dtype=np.float64).reshape(fan_in, fan_out))
            enc.biases.append(np.array(b, dtype=np.float64).reshape(fan_out))
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointCorruptError(f"{path}: malformed checkpoint body ({exc})") from exc
    return enc

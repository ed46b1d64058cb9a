"""Supervised neighbourhood component analysis and the distance/dot-form bridge.

The stochastic-neighbour probabilities are softmaxes over negative squared
distances, ``p_ij ∝ exp(-||z_i - z_j||^2)`` for ``j != i``.  The supervised
objective sums ``-log`` of each point's same-class probability mass.

``derivation_chain`` evaluates the chain of rewrites that turns the
half-squared-distance form of that objective into the inner-product form used
by contrastive losses.  The rewrites are exact only for unit-norm embeddings,
which the functions here enforce rather than assume.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .errors import ConfigError, ShapeError

UNIT_NORM_TOL = 1e-12


@dataclass
class LabeledSet:
    points: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim == 1:
            self.points = self.points[:, None]
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.points.shape[0] < 2 or self.labels.shape != (self.points.shape[0],):
            raise ConfigError("need n >= 2 points with one label each", "points")
        lonely = orphan_points(self.labels)
        if lonely:
            raise ConfigError(f"point(s) {lonely} have no same-class peer", "labels")


def orphan_points(labels) -> list[int]:
    labels = np.asarray(labels)
    return [i for i in range(labels.size) if np.count_nonzero(labels == labels[i]) < 2]


def _pairwise_sq_dists(z: Tensor) -> Tensor:
    n = z.shape[0]
    sq = ad.reshape(ad.tsum(z * z, axis=1), (n, 1))
    ones = Tensor(np.ones((1, n)))
    rows = ad.matmul(sq, ones)
    gram = ad.matmul(z, ad.transpose(z))
    return rows + ad.transpose(rows) - 2.0 * gram


def nca_pij(embedded) -> Tensor:
    """``[n x n]`` stochastic-neighbour matrix with zero diagonal and unit row sums."""
    z = ad.as_tensor(embedded)
    if z.ndim == 1:
        z = ad.reshape(z, (z.shape[0], 1))
    n = z.shape[0]
    if z.ndim != 2 or n < 2:
        raise ShapeError("nca_pij", z.shape, detail="need at least 2 points")
    dist = _pairwise_sq_dists(z)
    off = ~np.eye(n, dtype=bool)
    # per-row shift by the nearest other point; cancels in the ratio.
    # The diagonal gets an infinite shift so exp gives an exact zero there.
    shift = np.where(off, dist.data, np.inf).min(axis=1, keepdims=True)
    offset = np.where(off, np.repeat(shift, n, axis=1), -np.inf)
    w = ad.exp(-(dist - Tensor(offset)))
    row = ad.reshape(ad.tsum(w, axis=1), (n, 1))
    return w / ad.matmul(row, Tensor(np.ones((1, n))))


def _apply_transform(points, transform) -> Tensor:
    if transform is None:
        return ad.as_tensor(points)
    if callable(transform):
        return transform(points)
    return ad.matmul(points, transform)


def nca_supervised_loss(data: LabeledSet, transform=None) -> Tensor:
    """``sum_i -log sum_{j: c_j = c_i} p_ij`` on the transformed points.

    ``transform`` is a ``[d x d']`` matrix (tensor or array), a callable
    mapping the point matrix to embeddings, or ``None`` for the identity.
    """
    lonely = orphan_points(data.labels)
    if lonely:
        raise ConfigError(f"point(s) {lonely} have no same-class peer", "labels")
    p = nca_pij(_apply_transform(data.points, transform))
    same = (data.labels[:, None] == data.labels[None, :]) & ~np.eye(len(data.labels), dtype=bool)
    p_correct = ad.tsum(p * Tensor(same.astype(np.float64)), axis=1)
    return ad.tsum(-ad.log(p_correct))


def loo_1nn_accuracy(embedded, labels) -> float:
    """Leave-one-out 1-nearest-neighbour accuracy."""
    z = np.asarray(embedded.data if isinstance(embedded, Tensor) else embedded, dtype=np.float64)
    if z.ndim == 1:
        z = z[:, None]
    labels = np.asarray(labels)
    d = np.sum((z[:, None, :] - z[None, :, :]) ** 2, axis=2)
    np.fill_diagonal(d, np.inf)
    return float(np.mean(labels[np.argmin(d, axis=1)] == labels))


def train_linear_nca(data: LabeledSet, out_dim: int | None = None, steps: int = 500, lr: float = 0.01,
                     seed: int = 0, init=None, callback: Callable | None = None) -> tuple[np.ndarray, list[float]]:
    """Learn a linear map by gradient descent on the supervised NCA loss.

    Starts from ``init`` (default: identity, or a seeded random matrix when
    ``out_dim`` differs from the input dimension).  Returns the matrix and the
    loss trajectory.
    """
    d = data.points.shape[1]
    out_dim = d if out_dim is None else out_dim
    if init is not None:
        A = np.array(init, dtype=np.float64)
    elif out_dim == d:
        A = np.eye(d)
    else:
        A = np.random.default_rng(seed).standard_normal((d, out_dim)) / np.sqrt(d)
    history = []
    for step in range(steps):
        tape = Tape()
        At = tape.watch(A)
        loss = nca_supervised_loss(data, At)
        g = ad.backward(loss)[At]
        history.append(loss.item())
        A = A - lr * g
        if callback is not None and callback(step, A, loss.item()):
            break
    return A, history


# --- distance form vs inner-product form ------------------------------------


def _check_unit(f: np.ndarray) -> None:
    norms = np.linalg.norm(f, axis=1)
    if np.any(np.abs(norms - 1.0) > UNIT_NORM_TOL):
        raise ValueError(f"embeddings must be unit-norm within {UNIT_NORM_TOL}; got norms {norms}")


def _index_sets(n: int, positives, negatives):
    pos_sets = [np.asarray(p, dtype=np.intp) for p in positives]
    if negatives is None:
        neg_sets = [np.setdiff1d(np.arange(n), np.append(p, i)) for i, p in enumerate(pos_sets)]
    else:
        neg_sets = [np.asarray(q, dtype=np.intp) for q in negatives]
    if len(neg_sets) != len(pos_sets):
        raise ShapeError("equivalence_check", (len(pos_sets),), (len(neg_sets),))
    for i, (p, q) in enumerate(zip(pos_sets, neg_sets)):
        if p.size == 0:
            raise ConfigError(f"anchor {i} has no positives", "positives")
        if i in p or i in q:
            raise ConfigError(f"anchor {i} appears in its own positive/negative set", "positives")
        if np.intersect1d(p, q).size:
            raise ConfigError(f"anchor {i}: positive and negative sets overlap", "negatives")
    return pos_sets, neg_sets


def derivation_chain(embeddings, positives: Sequence[Sequence[int]],
                     negatives: Sequence[Sequence[int]] | None = None) -> dict[str, float]:
    """Evaluate the five rewrites of the NCA-to-contrastive derivation.

    Row ``i < len(positives)`` is an anchor with positive rows
    ``positives[i]`` and negative rows ``negatives[i]`` (default: every other
    row); the neighbour candidates of ``i`` are their union.

    * S1: ``exp(-||fi - fj||^2 / 2)`` ratio
    * S2: squared distance expanded into ``fi.fj - |fi|^2/2 - |fj|^2/2``
    * S3: unit norms substituted, ``exp(fi.fj - 1)``
    * S4: ``e^{-1}`` cancelled, denominator split into positives and the rest
    * S5: contrastive form with ``N * g0`` over the negatives
    """
    f = np.asarray(embeddings, dtype=np.float64)
    if f.ndim != 2:
        raise ShapeError("derivation_chain", f.shape, detail="expected [n x d]")
    _check_unit(f)
    pos_sets, neg_sets = _index_sets(f.shape[0], positives, negatives)
    out = {k: 0.0 for k in ("S1", "S2", "S3", "S4", "S5")}
    for i, (p, q) in enumerate(zip(pos_sets, neg_sets)):
        cand = np.concatenate([p, q])
        fi = f[i]

        def ratio(term):
            return -np.log(sum(term(j) for j in p) / sum(term(k) for k in cand))

        out["S1"] += ratio(lambda j: np.exp(-0.5 * np.sum((fi - f[j]) ** 2)))
        out["S2"] += ratio(lambda j: np.exp(fi @ f[j] - 0.5 * (fi @ fi) - 0.5 * (f[j] @ f[j])))
        out["S3"] += ratio(lambda j: np.exp(fi @ f[j] - 1.0))
        pos_sum = np.sum(np.exp(f[p] @ fi))
        rest = np.sum(np.exp(f[q] @ fi))
        out["S4"] += -np.log(pos_sum / (pos_sum + rest))
        g0 = np.mean(np.exp(f[q] @ fi)) if q.size else 0.0
        out["S5"] += -np.log(pos_sum / (pos_sum + q.size * g0))
    return {k: float(v) for k, v in out.items()}


def equivalence_check(embeddings, positives, negatives=None) -> tuple[float, float]:
    """``(distance_form_loss, dot_form_loss)``; equal for unit-norm embeddings."""
    chain = derivation_chain(embeddings, positives, negatives)
    return chain["S1"], chain["S5"]

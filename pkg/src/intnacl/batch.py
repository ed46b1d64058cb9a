"""Contrastive batch container.

Negatives are stored as a pool of views plus per-anchor index arrays rather
than a dense ``[N x K x d]`` block: in a SimCLR-style batch every anchor's
negatives are views of the other anchors, so the pool is shared and each view
is encoded once.  ``negatives`` / ``fresh_negatives`` materialize the dense
form on demand.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .autodiff import Tensor
from .errors import ShapeError

_INPUT_FIELDS = ("anchors", "positives", "neg_pool", "debias", "fresh_pool", "mix_partners")


def _arr(x):
    return x.data if isinstance(x, Tensor) else x


@dataclass
class ContrastiveBatch:
    anchors: object  # [N, d]
    positives: object  # [N, M, d]
    neg_pool: object  # [P, d]
    neg_index: np.ndarray  # [N, K] into neg_pool
    debias: object | None = None  # [N, m, d], the v samples of g1/g2
    fresh_pool: object | None = None  # [Q, d]
    fresh_index: np.ndarray | None = None  # [N, M-1, K] into fresh_pool
    mix_partners: object | None = None  # [N, M-1, d]
    source_indices: np.ndarray | None = None  # dataset rows the anchors came from

    def __post_init__(self):
        self.neg_index = np.asarray(self.neg_index, dtype=np.intp)
        if self.fresh_index is not None:
            self.fresh_index = np.asarray(self.fresh_index, dtype=np.intp)
        a, p = _arr(self.anchors), _arr(self.positives)
        if a.ndim != 2 or p.ndim != 3 or p.shape[0] != a.shape[0] or p.shape[2] != a.shape[1]:
            raise ShapeError("ContrastiveBatch", a.shape, p.shape, detail="anchors [N,d] vs positives [N,M,d]")
        if p.shape[1] < 1:
            raise ShapeError("ContrastiveBatch", p.shape, detail="need M >= 1 positives")
        if self.neg_index.ndim != 2 or self.neg_index.shape[0] != a.shape[0] or self.neg_index.shape[1] < 1:
            raise ShapeError("ContrastiveBatch", self.neg_index.shape, detail="neg_index must be [N, K>=1]")
        if self.neg_index.max() >= _arr(self.neg_pool).shape[0] or self.neg_index.min() < 0:
            raise ShapeError("ContrastiveBatch", self.neg_index.shape, _arr(self.neg_pool).shape,
                             detail="neg_index out of range")
        if self.debias is not None:
            v = _arr(self.debias)
            if v.ndim != 3 or v.shape[0] != a.shape[0] or v.shape[2] != a.shape[1]:
                raise ShapeError("ContrastiveBatch", v.shape, detail="debias must be [N, m, d]")
        if (self.fresh_pool is None) != (self.fresh_index is None):
            raise ShapeError("ContrastiveBatch", detail="fresh_pool and fresh_index go together")
        if self.fresh_index is not None:
            fi = self.fresh_index
            if fi.ndim != 3 or fi.shape[0] != a.shape[0] or fi.shape[1] != self.M - 1:
                raise ShapeError("ContrastiveBatch", fi.shape, detail=f"fresh_index must be [N, {self.M - 1}, K]")
        if self.mix_partners is not None:
            mp = _arr(self.mix_partners)
            if mp.shape != (a.shape[0], self.M - 1, a.shape[1]):
                raise ShapeError("ContrastiveBatch", mp.shape, detail=f"mix_partners must be [N, {self.M - 1}, d]")

    @property
    def N(self) -> int:
        return _arr(self.anchors).shape[0]

    @property
    def M(self) -> int:
        return _arr(self.positives).shape[1]

    @property
    def K(self) -> int:
        return self.neg_index.shape[1]

    @property
    def d(self) -> int:
        return _arr(self.anchors).shape[1]

    @property
    def m(self) -> int:
        return 0 if self.debias is None else _arr(self.debias).shape[1]

    @property
    def negatives(self) -> np.ndarray:
        return _arr(self.neg_pool)[self.neg_index]

    @property
    def fresh_negatives(self) -> np.ndarray | None:
        if self.fresh_pool is None:
            return None
        return _arr(self.fresh_pool)[self.fresh_index]

    def detached(self) -> "ContrastiveBatch":
        """Same batch with every input as a plain array."""
        updates = {name: _arr(getattr(self, name)) for name in _INPUT_FIELDS if getattr(self, name) is not None}
        return replace(self, **updates)

    def input_fields(self) -> dict:
        return {name: getattr(self, name) for name in _INPUT_FIELDS if getattr(self, name) is not None}

    @classmethod
    def from_dense(cls, anchors, positives, negatives, debias=None, fresh_negatives=None,
                   mix_partners=None) -> "ContrastiveBatch":
        """Build a batch from explicit per-anchor arrays.

        ``negatives`` is ``[N, K, d]`` and ``fresh_negatives``
        ``[N, M-1, K', d]``; both are flattened into pools.
        """
        anchors = np.asarray(anchors, dtype=np.float64)
        positives = np.asarray(positives, dtype=np.float64)
        negatives = np.asarray(negatives, dtype=np.float64)
        if negatives.ndim != 3:
            raise ShapeError("from_dense", negatives.shape, detail="negatives must be [N, K, d]")
        n, k, d = negatives.shape
        kw = {}
        if fresh_negatives is not None:
            fresh = np.asarray(fresh_negatives, dtype=np.float64)
            if fresh.ndim != 4:
                raise ShapeError("from_dense", fresh.shape, detail="fresh_negatives must be [N, M-1, K, d]")
            kw["fresh_pool"] = fresh.reshape(-1, d)
            kw["fresh_index"] = np.arange(fresh.shape[0] * fresh.shape[1] * fresh.shape[2]).reshape(fresh.shape[:3])
        return cls(
            anchors=anchors,
            positives=positives,
            neg_pool=negatives.reshape(-1, d),
            neg_index=np.arange(n * k).reshape(n, k),
            debias=None if debias is None else np.asarray(debias, dtype=np.float64),
            mix_partners=None if mix_partners is None else np.asarray(mix_partners, dtype=np.float64),
            **kw,
        )


__all__ = ["ContrastiveBatch"]

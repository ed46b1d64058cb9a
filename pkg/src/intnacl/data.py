"""Synthetic blobs, input-space augmentation and contrastive batch sampling."""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass

import numpy as np

from .batch import ContrastiveBatch
from .errors import ConfigError

__all__ = [
    "Dataset",
    "AugmentConfig",
    "class_sizes",
    "make_blobs",
    "augment",
    "sample_contrastive_batch",
    "save_csv",
    "load_csv",
]


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    class_count: int
    seed: int | None = None
    means: np.ndarray | None = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.features.ndim != 2 or self.labels.shape != (self.features.shape[0],):
            raise ConfigError(f"features {self.features.shape} / labels {self.labels.shape} mismatch", "dataset")
        if not np.all(np.isfinite(self.features)):
            raise ConfigError("features must be finite", "dataset")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= self.class_count):
            raise ConfigError("labels must lie in [0, class_count)", "dataset")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.features[idx], self.labels[idx], self.class_count, self.seed, self.means)

    def split(self, train_fraction: float = 0.8, seed: int = 0) -> tuple["Dataset", "Dataset"]:
        perm = np.random.default_rng(seed).permutation(len(self))
        cut = int(round(train_fraction * len(self)))
        return self.subset(perm[:cut]), self.subset(perm[cut:])


@dataclass(frozen=True)
class AugmentConfig:
    noise_std: float = 0.05
    scale_jitter: float = 0.1
    rotation: bool = False
    max_angle: float = 0.3  # radians, used when rotation is on

    def __post_init__(self):
        for name in ("noise_std", "scale_jitter", "max_angle"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise ConfigError("must be finite and non-negative", name)

    def to_dict(self) -> dict:
        return asdict(self)


def class_sizes(K: int, n_total: int) -> list[int]:
    """Near-equal class sizes summing to ``n_total`` (the first classes take the remainder)."""
    base, extra = divmod(n_total, K)
    return [base + (i < extra) for i in range(K)]


def make_blobs(K: int, d: int, n_per_class, spread: float, seed: int) -> Dataset:
    """Gaussian blobs around ``K`` class means drawn uniformly on the unit sphere.

    ``n_per_class`` is an int or a length-``K`` sequence of class sizes.
    """
    if K < 2 or d < 2:
        raise ConfigError("need K >= 2 classes and d >= 2 dimensions", "dataset")
    counts = np.broadcast_to(np.asarray(n_per_class, dtype=np.int64), (K,))
    if counts.min() < 1 or spread < 0:
        raise ConfigError("need n_per_class >= 1 and spread >= 0", "dataset")
    rng = np.random.default_rng(seed)
    means = rng.standard_normal((K, d))
    means /= np.linalg.norm(means, axis=1, keepdims=True)
    labels = np.repeat(np.arange(K), counts)
    features = means[labels] + spread * rng.standard_normal((labels.size, d))
    return Dataset(features, labels, K, seed, means)


def augment(x, config: AugmentConfig, seed=None) -> np.ndarray:
    """One random view per row: scale jitter, optional planar rotation, additive noise.

    ``seed`` may be an int or a ``numpy.random.Generator``.
    """
    x = np.array(x, dtype=np.float64)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    flat = x.reshape(-1, x.shape[-1])
    n, d = flat.shape
    if config.scale_jitter > 0:
        flat = flat * rng.uniform(1.0 - config.scale_jitter, 1.0 + config.scale_jitter, size=(n, 1))
    if config.rotation and d >= 2 and config.max_angle > 0:
        i = rng.integers(0, d, size=n)
        j = (i + rng.integers(1, d, size=n)) % d
        theta = rng.uniform(-config.max_angle, config.max_angle, size=n)
        c, s = np.cos(theta), np.sin(theta)
        rows = np.arange(n)
        xi, xj = flat[rows, i].copy(), flat[rows, j].copy()
        flat = flat.copy()
        flat[rows, i] = c * xi - s * xj
        flat[rows, j] = s * xi + c * xj
    if config.noise_std > 0:
        flat = flat + config.noise_std * rng.standard_normal(flat.shape)
    return flat.reshape(x.shape)


def _views(x: np.ndarray, n_views: int, aug: AugmentConfig, rng) -> np.ndarray:
    """``[N, n_views, d]`` independent augmentations of every row."""
    return augment(np.repeat(x[:, None, :], n_views, axis=1), aug, rng)


def _other_anchor_index(N: int, per_anchor: int, offset: int = 0) -> np.ndarray:
    """Row indices of all views belonging to anchors other than ``i``, for each ``i``."""
    owner = np.repeat(np.arange(N), per_anchor)
    rows = np.arange(N * per_anchor) + offset
    return np.stack([rows[owner != i] for i in range(N)])


def sample_contrastive_batch(ds: Dataset, N: int, M: int, need_fresh: bool, aug: AugmentConfig, seed=None,
                             indices=None, m: int = 1) -> ContrastiveBatch:
    """Draw ``N`` anchors and build their positives and negatives.

    Each anchor contributes ``M + 1`` views (the anchor view and ``M``
    positives) to a shared pool; an anchor's negatives are the
    ``(N - 1)(M + 1)`` pool views of the other anchors.  ``m`` extra views per
    anchor serve as the debiasing positives.  With ``need_fresh`` and
    ``M > 1`` the batch also carries ``M - 1`` freshly augmented copies of the
    pool, giving independent negative sets of the same size, and ``M - 1``
    mix partners per anchor drawn uniformly from its negatives.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if M < 1:
        raise ConfigError("must be at least 1", "M")
    if indices is None:
        if N > len(ds):
            raise ConfigError(f"batch size {N} exceeds dataset size {len(ds)}", "batch_size")
        if N < 2:
            raise ConfigError("need at least 2 anchors so that negatives exist", "batch_size")
        indices = rng.choice(len(ds), size=N, replace=False)
    indices = np.asarray(indices)
    N = len(indices)
    if N < 2:
        raise ConfigError("need at least 2 anchors so that negatives exist", "batch_size")
    x = ds.features[indices]
    d = x.shape[1]
    views = _views(x, M + 1, aug, rng)  # slot 0 is the anchor view
    anchors, positives = views[:, 0, :], views[:, 1:, :]
    pool = views.reshape(N * (M + 1), d)
    neg_index = _other_anchor_index(N, M + 1)
    debias = _views(x, m, aug, rng) if m > 0 else None
    kw = {}
    if need_fresh and M > 1:
        fresh = np.concatenate([_views(x, M + 1, aug, rng).reshape(N * (M + 1), d) for _ in range(M - 1)])
        per_pool = N * (M + 1)
        kw["fresh_pool"] = fresh
        kw["fresh_index"] = np.stack(
            [_other_anchor_index(N, M + 1, offset=j * per_pool) for j in range(M - 1)], axis=1
        )
        pick = rng.integers(0, neg_index.shape[1], size=(N, M - 1))
        kw["mix_partners"] = pool[np.take_along_axis(neg_index, pick, axis=1)]
    return ContrastiveBatch(anchors=anchors, positives=positives, neg_pool=pool, neg_index=neg_index,
                            debias=debias, source_indices=indices, **kw)


def save_csv(ds: Dataset, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{i}" for i in range(ds.dim)] + ["label"])
        for row, lab in zip(ds.features, ds.labels):
            w.writerow([repr(float(v)) for v in row] + [int(lab)])


def load_csv(path, class_count: int | None = None) -> Dataset:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0][-1] != "label":
        raise ConfigError(f"{path}: expected a header ending in 'label'", "dataset")
    body = rows[1:]
    features = np.array([[float(v) for v in r[:-1]] for r in body], dtype=np.float64)
    labels = np.array([int(r[-1]) for r in body], dtype=np.int64)
    k = class_count if class_count is not None else int(labels.max()) + 1
    return Dataset(features, labels, k, None)


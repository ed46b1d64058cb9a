"""Shared builders for the test suite."""

import numpy as np

from intnacl.batch import ContrastiveBatch
from intnacl.encoder import EncoderConfig, init


def unit_rows(rng, n, d):
    x = rng.standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def tiny_encoder(seed=0, d_in=4, hidden=(5,), embed=3, activation="tanh"):
    return init(EncoderConfig(input_dim=d_in, hidden_dims=hidden, embed_dim=embed, activation=activation, seed=seed))


def random_batch(rng, N=3, M=1, K=4, d=4, m=1, mix=False, k_fresh=None):
    """Dense random batch; with ``mix`` and M > 1 it carries fresh sets and mix partners."""
    kw = {}
    if mix and M > 1:
        kw["fresh_negatives"] = rng.standard_normal((N, M - 1, k_fresh or K, d))
        kw["mix_partners"] = rng.standard_normal((N, M - 1, d))
    return ContrastiveBatch.from_dense(
        rng.standard_normal((N, d)),
        rng.standard_normal((N, M, d)),
        rng.standard_normal((N, K, d)),
        debias=rng.standard_normal((N, m, d)) if m else None,
        **kw,
    )


def rel_err(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-12))

"""LSH-driven sparsity patterns and masked attention.

Each hashing round projects vectors on ``log2(buckets)`` random unit
directions; the sign bits form the bucket id. Query/key pairs that share a
bucket in at least ``k_min`` rounds are kept, with ``k_min`` chosen so that the
requested fraction of logits is dropped from the softmax.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from . import numerics as nx
from .errors import ConfigError, DimensionError


@dataclass(frozen=True)
class LshConfig:
    rounds: int = 32
    buckets_per_round: int = 4
    target_sparsity: float = 0.90

    def __post_init__(self):
        if self.rounds < 1:
            raise ConfigError("rounds must be >= 1")
        b = self.buckets_per_round
        if b < 2 or b & (b - 1):
            raise ConfigError("buckets_per_round must be a power of two >= 2")
        if not 0.0 <= self.target_sparsity < 1.0:
            raise ConfigError("target_sparsity must be in [0, 1)")

    @property
    def planes(self):
        return int(math.log2(self.buckets_per_round))


@dataclass
class SparsityPattern:
    mask: np.ndarray  # bool [n_queries, n_keys]
    k_min: int = 0

    @property
    def n_queries(self):
        return self.mask.shape[0]

    @property
    def n_keys(self):
        return self.mask.shape[1]

    @property
    def kept(self):
        """(q, k) index pairs of the kept logits."""
        return np.argwhere(self.mask)

    @property
    def n_kept(self):
        return int(self.mask.sum())

    @property
    def sparsity(self):
        return 1.0 - self.n_kept / self.mask.size

    @classmethod
    def full(cls, n_queries, n_keys):
        return cls(np.ones((n_queries, n_keys), dtype=bool), 0)


def lsh_directions(dim, cfg: LshConfig, seed):
    rng = np.random.default_rng(seed)
    r = rng.standard_normal((cfg.rounds, cfg.planes, dim))
    return r / np.linalg.norm(r, axis=-1, keepdims=True)


def hash_codes(vectors, directions):
    """Bucket id per round: ``[rounds, n]`` int8."""
    proj = np.einsum("rpd,nd->rpn", directions, np.asarray(vectors, dtype=np.float64))
    bits = (proj > 0).astype(np.int8)
    weights = (1 << np.arange(directions.shape[1])[::-1]).astype(np.int8)
    return np.einsum("rpn,p->rn", bits, weights).astype(np.int8)


def lsh_match_counts(queries, keys, cfg: LshConfig, seed=0):
    """``counts[q, k]``: rounds in which query q and key k share a bucket."""
    q = np.asarray(getattr(queries, "data", queries))
    k = np.asarray(getattr(keys, "data", keys))
    if q.ndim != 2 or k.ndim != 2 or q.shape[1] != k.shape[1]:
        raise DimensionError(f"queries {q.shape} and keys {k.shape} need a shared feature dim")
    if q.shape[1] == 0:
        raise DimensionError("feature dim must be >= 1")
    dirs = lsh_directions(q.shape[1], cfg, seed)
    return _kernels.collision_counts(hash_codes(q, dirs), hash_codes(k, dirs))


def keep_budget(n_total, target_sparsity):
    # largest kept count whose sparsity still reaches the target
    return int(math.floor((1.0 - target_sparsity) * n_total + 1e-9))


def select_threshold(counts, target_sparsity):
    """Pick ``k_min`` and build the keep-mask at (or just above) the target sparsity.

    Entries are ranked by count (descending) then row-major index; the top
    ``keep_budget`` entries are kept. On square inputs the diagonal is kept
    first and counts toward the budget. A row left empty gets its top-count key.
    """
    counts = np.asarray(counts)
    nq, nk = counts.shape
    n = nq * nk
    budget = keep_budget(n, target_sparsity)

    # smallest threshold whose {count >= k} set fits the budget
    hist = np.bincount(counts.ravel().astype(np.int64), minlength=1)
    at_least = np.cumsum(hist[::-1])[::-1]  # at_least[k] = #{count >= k}
    fits = np.nonzero(at_least <= budget)[0]
    k_min = int(fits[0]) if fits.size else len(hist)

    flat = counts.ravel()
    order = np.argsort(-flat, kind="stable")
    forced = np.zeros(n, dtype=bool)
    if nq == nk:
        forced[np.arange(nq) * (nk + 1)] = True
    keep = forced.copy()
    room = budget - int(forced.sum())
    if room > 0:
        keep[order[~forced[order]][:room]] = True
    mask = keep.reshape(nq, nk)

    empty = np.nonzero(~mask.any(axis=1))[0]
    if empty.size:
        mask[empty, np.argmax(counts[empty], axis=1)] = True
        forced.reshape(nq, nk)[empty, np.argmax(counts[empty], axis=1)] = True
        excess = int(mask.sum()) - max(budget, int(forced.sum()))
        row_count = mask.sum(axis=1)
        for idx in order[::-1]:
            if excess <= 0:
                break
            q = idx // nk
            if keep[idx] and not forced[idx] and row_count[q] > 1:
                keep[idx] = False
                row_count[q] -= 1
                excess -= 1
    return k_min, SparsityPattern(mask, k_min)


def lsh_pattern(queries, keys, cfg: LshConfig, seed=0):
    counts = lsh_match_counts(queries, keys, cfg, seed)
    return select_threshold(counts, cfg.target_sparsity)[1]


def attention(q, k, v, mask=None, scale=None):
    """Scaled dot-product attention; ``mask`` is a boolean keep-mask or pattern."""
    if scale is None:
        scale = 1.0 / math.sqrt(q.shape[-1])
    logits = nx.mul(nx.matmul(q, nx.swapaxes(k, -1, -2)), scale)
    weights = nx.softmax(logits, axis=-1, mask=mask)
    return nx.matmul(weights, v), weights


def sparse_attention(q, k, v, pattern: SparsityPattern, scale=None):
    if pattern.mask.shape != (q.shape[-2], k.shape[-2]):
        raise DimensionError(f"pattern {pattern.mask.shape} does not match q/k lengths")
    return attention(q, k, v, pattern.mask, scale)[0]

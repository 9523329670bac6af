"""Centralised reference allocators: the optimal assignment oracle, an
exhaustive enumerator for small instances, and the greedy / random baselines."""

from __future__ import annotations

import itertools
from functools import lru_cache

import numpy as np
from scipy.optimize import linear_sum_assignment

from .core import ContractViolation, ProtocolParams, _matrix

MAX_EXHAUSTIVE_USERS = 7


def _square(q) -> np.ndarray:
    m = _matrix(q)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ContractViolation(f"expected a square N x (K*M) matrix, got shape {m.shape}")
    return m


def hungarian(q) -> tuple[np.ndarray, float]:
    """Welfare-maximising orthogonal profile and its welfare."""
    m = _square(q)
    rows, cols = linear_sum_assignment(m, maximize=True)
    profile = np.empty(m.shape[0], dtype=np.int64)
    profile[rows] = cols
    return profile, float(m[rows, cols].sum())


@lru_cache(maxsize=None)
def _permutations(n: int) -> np.ndarray:
    perms = np.array(list(itertools.permutations(range(n))), dtype=np.int64)
    perms.setflags(write=False)
    return perms


def enumerate_welfares(q) -> tuple[np.ndarray, np.ndarray]:
    """All N! orthogonal profiles and their welfares (N <= 7 only)."""
    m = _square(q)
    n = m.shape[0]
    if n > MAX_EXHAUSTIVE_USERS:
        raise ContractViolation(f"exhaustive enumeration is limited to N <= {MAX_EXHAUSTIVE_USERS}")
    perms = _permutations(n)
    return perms, m[np.arange(n), perms].sum(axis=1)


def exhaustive_optimum(q) -> tuple[np.ndarray, float, float]:
    """Brute-force optimum: (a best profile, best welfare, second-best welfare).

    The second-best welfare is the largest welfare strictly below the optimum
    (``-inf`` when every orthogonal profile ties).
    """
    perms, w = enumerate_welfares(q)
    best = int(np.argmax(w))
    w_best = float(w[best])
    below = w[w < w_best]
    second = float(below.max()) if below.size else float("-inf")
    return perms[best].copy(), w_best, second


def greedy_stable(q) -> np.ndarray:
    """Greedy descent: repeatedly match the largest remaining entry.

    Ties go to the lowest user index, then the lowest resource index.
    """
    m = _square(q)
    n, r = m.shape
    users, res = np.meshgrid(np.arange(n), np.arange(r), indexing="ij")
    order = np.lexsort((res.ravel(), users.ravel(), -m.ravel()))
    profile = np.full(n, -1, dtype=np.int64)
    taken = np.zeros(r, dtype=bool)
    left = n
    for flat in order:
        u, a = divmod(int(flat), r)
        if profile[u] >= 0 or taken[a]:
            continue
        profile[u] = a
        taken[a] = True
        left -= 1
        if left == 0:
            break
    return profile


def random_allocation(params: ProtocolParams, rng: np.random.Generator) -> np.ndarray:
    """Uniformly random perfect matching of users to resources."""
    return rng.permutation(params.n_resources)[: params.n_users].astype(np.int64)

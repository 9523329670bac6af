"""Exploration slot loop: collision detection and sample accumulation.

Inputs are pre-drawn (resource choices and unit noise), so both backends
see the same randomness.  ``S`` and ``V`` are updated in place.
"""

from __future__ import annotations

import numpy as np

from .._accel import njit, pick


@njit(cache=True)
def explore_numba(choices, noise, q, half_width, q_max, S, V, success, welfare):
    n_t, n_u = choices.shape
    counts = np.zeros(q.shape[1], dtype=np.int64)
    for t in range(n_t):
        for n in range(n_u):
            counts[choices[t, n]] += 1
        w = 0.0
        for n in range(n_u):
            a = choices[t, n]
            if counts[a] == 1:
                qm = q[n, a]
                h = min(half_width, qm, q_max - qm)
                s = qm + h * noise[t, n]
                s = min(max(s, 0.0), q_max)
                S[n, a] += s
                V[n, a] += 1
                success[t, n] = True
                w += s
            else:
                success[t, n] = False
        welfare[t] = w
        for n in range(n_u):
            counts[choices[t, n]] = 0


def explore_numpy(choices, noise, q, half_width, q_max, S, V, success, welfare):
    n_t, n_u = choices.shape
    n_r = q.shape[1]
    slot_ids = np.arange(n_t)[:, None] * n_r + choices
    occupancy = np.bincount(slot_ids.ravel(), minlength=n_t * n_r)
    ok = occupancy[slot_ids] == 1
    users = np.broadcast_to(np.arange(n_u), choices.shape)
    qm = q[users, choices]
    h = np.minimum(np.minimum(half_width, qm), q_max - qm)
    samples = np.clip(qm + h * noise, 0.0, q_max)
    samples = np.where(ok, samples, 0.0)
    cell = (users * n_r + choices)[ok]
    S += np.bincount(cell, weights=samples[ok], minlength=n_u * n_r).reshape(n_u, n_r)
    V += np.bincount(cell, minlength=n_u * n_r).reshape(n_u, n_r)
    success[...] = ok
    welfare[...] = samples.sum(axis=1)


explore = pick(explore_numba, explore_numpy)

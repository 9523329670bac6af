"""Auction iteration loop: bid computation, per-resource contention and
assignment with displacement.

Randomness enters only through ``words[i, n]``: one 64-bit word per user per
iteration, whose bit ``r`` is the slot (0 = early, 1 = late) that user picks
in random block ``r + 1``.  A user joins at most one contest per iteration,
so a word covers the whole random-block cap of 64.

State arrays (``bids``, ``assigned``, ``owner``, ``bid_eps``) are mutated in
place; ``bid_eps[n]`` is the increment user ``n`` used in its latest bid.  The
trace matrix gets one row per executed iteration with columns given by
``TRACE_COLUMNS``.
"""

from __future__ import annotations

import math

import numpy as np

from .._accel import njit, pick

TRACE_COLUMNS = ("eps", "unassigned", "det_blocks", "rand_blocks", "slots", "welfare", "max_frame_blocks")
RANDOM_BLOCK_SLOTS = 3  # two contention slots + collision notification


@njit(cache=True)
def quant_code_scalar(bid, q_max, levels):
    b = min(bid, q_max)
    c = math.floor((1.0 - b / q_max) * levels)
    if c > levels - 1:
        c = levels - 1
    if c < 0:
        c = 0
    return np.int64(c)


def quant_codes(bids, q_max, levels):
    b = np.minimum(np.asarray(bids, dtype=np.float64), q_max)
    c = np.floor((1.0 - b / q_max) * levels)
    return np.clip(c, 0, levels - 1).astype(np.int64)


@njit(cache=True)
def _frame_slots(blocks, beta, lam):
    det = min(blocks, lam)
    return det * (beta + 1) + (blocks - det) * 3


@njit(cache=True)
def _idle_row(q_hat, assigned, eps, trace, it):
    # everyone holds a resource: only the silent notification slot is spent
    w = 0.0
    for n in range(assigned.size):
        w += q_hat[n, assigned[n]]
    trace[it, 0] = eps
    for c in range(1, trace.shape[1]):
        trace[it, c] = 0.0
    trace[it, 4] = 1.0
    trace[it, 5] = w


@njit(cache=True)
def auction_numba(q_hat, bids, assigned, owner, bid_eps, eps, eps_final, zeta, q_max, beta, lam,
                  n_channels, n_slots, words, max_iter, slot_budget, random_cap, trace):
    n_u, n_r = q_hat.shape
    levels = beta**lam
    choice = np.empty(n_u, dtype=np.int64)
    code = np.empty(n_u, dtype=np.int64)
    alive = np.empty(n_u, dtype=np.int64)
    res_blocks = np.zeros(n_r, dtype=np.int64)
    slots = 0
    it = 0
    n_un = 0
    while it < max_iter and slots < slot_budget:
        n_un = 0
        for n in range(n_u):
            if assigned[n] < 0:
                n_un += 1
        if n_un == 0:
            _idle_row(q_hat, assigned, eps, trace, it)
            slots += 1
            it += 1
            break
        # bids
        for n in range(n_u):
            a_held = assigned[n]
            if a_held >= 0:
                choice[n] = a_held
                continue
            best = -1
            g1 = -np.inf
            g2 = -np.inf
            for a in range(n_r):
                g = q_hat[n, a] - bids[n, a]
                if g > g1:
                    g2 = g1
                    g1 = g
                    best = a
                elif g > g2:
                    g2 = g
            if n_r < 2:
                inc = eps
            else:
                inc = eps + (g1 - g2)
            bids[n, best] += inc
            bid_eps[n] = eps
            choice[n] = best
        for n in range(n_u):
            code[n] = quant_code_scalar(bids[n, choice[n]], q_max, levels)

        # contests, one per resource
        det_total = 0
        rand_total = 0
        for a in range(n_r):
            c = 0
            for n in range(n_u):
                if choice[n] == a:
                    alive[c] = n
                    c += 1
            if c == 0:
                res_blocks[a] = 0
                continue
            winner = -1
            det = 0
            rnd = 0
            if c == 1:
                winner = alive[0]
                det = 1
            else:
                for i in range(lam):
                    det += 1
                    div = beta ** (lam - 1 - i)
                    mind = beta
                    for j in range(c):
                        d = (code[alive[j]] // div) % beta
                        if d < mind:
                            mind = d
                    k = 0
                    for j in range(c):
                        if (code[alive[j]] // div) % beta == mind:
                            alive[k] = alive[j]
                            k += 1
                    c = k
                    if c == 1:
                        winner = alive[0]
                        break
                if winner < 0:
                    for r in range(random_cap):
                        rnd += 1
                        shift = np.uint64(r)
                        any_early = False
                        for j in range(c):
                            if (words[it, alive[j]] >> shift) & np.uint64(1) == np.uint64(0):
                                any_early = True
                        if any_early:
                            k = 0
                            for j in range(c):
                                if (words[it, alive[j]] >> shift) & np.uint64(1) == np.uint64(0):
                                    alive[k] = alive[j]
                                    k += 1
                            c = k
                        if c == 1:
                            winner = alive[0]
                            break
                    if winner < 0:
                        winner = alive[0]
                        for j in range(c):
                            if alive[j] < winner:
                                winner = alive[j]
            res_blocks[a] = det + rnd
            det_total += det
            rand_total += rnd
            prev = owner[a]
            if prev != winner:
                if prev >= 0:
                    assigned[prev] = -1
                owner[a] = winner
                assigned[winner] = a

        it_slots = 1  # unassigned-notification slot
        max_fb = 0
        for m in range(n_slots):
            fb = 1
            for k in range(n_channels):
                b = res_blocks[k * n_slots + m]
                if b > fb:
                    fb = b
            if fb > max_fb:
                max_fb = fb
            it_slots += _frame_slots(fb, beta, lam)

        n_un = 0
        w = 0.0
        for n in range(n_u):
            if assigned[n] < 0:
                n_un += 1
            else:
                w += q_hat[n, assigned[n]]
        trace[it, 0] = eps
        trace[it, 1] = n_un
        trace[it, 2] = det_total
        trace[it, 3] = rand_total
        trace[it, 4] = it_slots
        trace[it, 5] = w
        trace[it, 6] = max_fb
        slots += it_slots
        eps = max(eps_final, eps * zeta)
        it += 1
        if n_un == 0:
            break
    return it, eps, slots, n_un == 0


def random_phase(members, member_words, random_cap):
    """Two-slot random blocks among equal-bid survivors.

    ``members`` are user ids in increasing order and ``member_words`` their
    random words.  Returns (winner, blocks used, per-block slot picks).
    """
    alive = np.asarray(members, dtype=np.int64)
    w = np.asarray(member_words, dtype=np.uint64)
    picks = []
    for r in range(random_cap):
        bits = (w >> np.uint64(r)) & np.uint64(1)
        picks.append(dict(zip(alive.tolist(), (bits + 1).tolist())))
        early = bits == 0
        if early.any():
            alive, w = alive[early], w[early]
        if alive.size == 1:
            return int(alive[0]), r + 1, picks
    return int(alive.min()), random_cap, picks


def auction_numpy(q_hat, bids, assigned, owner, bid_eps, eps, eps_final, zeta, q_max, beta, lam,
                  n_channels, n_slots, words, max_iter, slot_budget, random_cap, trace):
    n_u, n_r = q_hat.shape
    levels = beta**lam
    users = np.arange(n_u)
    pow_div = beta ** (lam - 1 - np.arange(lam))
    slots = 0
    it = 0
    n_un = 0
    while it < max_iter and slots < slot_budget:
        choice = assigned.copy()
        un = np.flatnonzero(assigned < 0)
        if un.size == 0:
            _idle_row(q_hat, assigned, eps, trace, it)
            slots += 1
            it += 1
            break
        if un.size:
            g = q_hat[un] - bids[un]
            best = np.argmax(g, axis=1)
            g1 = g[np.arange(un.size), best]
            if n_r < 2:
                inc = np.full(un.size, eps)
            else:
                g_rest = g.copy()
                g_rest[np.arange(un.size), best] = -np.inf
                inc = eps + (g1 - g_rest.max(axis=1))
            bids[un, best] += inc
            bid_eps[un] = eps
            choice[un] = best
        code = quant_codes(bids[users, choice], q_max, levels)

        order = np.lexsort((users, code, choice))
        ch_s, code_s, user_s = choice[order], code[order], users[order]
        starts = np.flatnonzero(np.r_[True, ch_s[1:] != ch_s[:-1]])
        counts = np.diff(np.r_[starts, n_u])
        res = ch_s[starts]
        c0 = code_s[starts]
        winners = user_s[starts].copy()
        det = np.ones(res.size, dtype=np.int64)
        rnd = np.zeros(res.size, dtype=np.int64)
        multi = counts >= 2
        c1 = np.where(multi, code_s[np.minimum(starts + 1, n_u - 1)], c0)
        split = multi & (c0 != c1)
        det_split = np.full(res.size, lam, dtype=np.int64)
        for i in range(lam, 0, -1):
            differs = (c0 // pow_div[i - 1]) != (c1 // pow_div[i - 1])
            det_split = np.where(differs, i, det_split)
        det = np.where(split, det_split, det)
        tied = np.flatnonzero(multi & (c0 == c1))
        for gi in tied:
            s, c = starts[gi], counts[gi]
            grp = user_s[s:s + c][code_s[s:s + c] == c0[gi]]
            det[gi] = lam
            winners[gi], rnd[gi], _ = random_phase(grp, words[it, grp], random_cap)

        prev = owner[res]
        moved = prev != winners
        displaced = prev[moved & (prev >= 0)]
        assigned[displaced] = -1
        owner[res[moved]] = winners[moved]
        assigned[winners[moved]] = res[moved]

        res_blocks = np.zeros(n_r, dtype=np.int64)
        res_blocks[res] = det + rnd
        frame_blocks = np.maximum(1, res_blocks.reshape(n_channels, n_slots).max(axis=0))
        det_part = np.minimum(frame_blocks, lam)
        it_slots = 1 + int(np.sum(det_part * (beta + 1) + (frame_blocks - det_part) * RANDOM_BLOCK_SLOTS))

        held = assigned >= 0
        n_un = int(n_u - held.sum())
        trace[it] = (eps, n_un, det.sum(), rnd.sum(), it_slots,
                     q_hat[users[held], assigned[held]].sum(), frame_blocks.max())
        slots += it_slots
        eps = max(eps_final, eps * zeta)
        it += 1
        if n_un == 0:
            break
    return it, eps, slots, n_un == 0


run_auction_kernel = pick(auction_numba, auction_numpy)

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spectrum_mac.allocators import hungarian
from spectrum_mac.auction import (
    RANDOM_BLOCK_CAP,
    AuctionState,
    AuctionTrace,
    best_and_gap,
    calculate_bid,
    code_of,
    digits_of,
    iteration_bound,
    profits,
    quantize_bid,
    resolve_contention,
    run_auction,
    run_iteration,
    scale_epsilon,
)
from spectrum_mac.core import UNASSIGNED, ContractViolation, ProtocolParams, welfare
from spectrum_mac.kernels import auction_numba, auction_numpy
from spectrum_mac.kernels.auction import TRACE_COLUMNS, random_phase

C1 = 1 / np.log(4 / 3)


def dithered(params, rng, integer=True):
    shape = (params.n_users, params.n_resources)
    q = rng.integers(0, 9, size=shape).astype(float) if integer else rng.uniform(0, 8, size=shape)
    return q, q + rng.uniform(-params.d_max, params.d_max, size=shape)


def test_profits():
    assert profits([5, 3], [0, 0]).tolist() == [5, 3]
    assert profits([5, 3], [1, 1]).tolist() == [4, 2]
    with pytest.raises(ContractViolation):
        profits([1, 2], [1])


def test_best_and_gap():
    assert best_and_gap([4, 2, 2]) == (0, 2)
    assert best_and_gap([3, 3]) == (0, 0)
    assert best_and_gap([7.0]) == (0, float("inf"))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-10, 10, allow_nan=False), min_size=16, max_size=16))
def test_best_and_gap_sort_oracle(g):
    ranked = sorted(range(16), key=lambda i: (-g[i], i))
    best, gap = best_and_gap(g)
    assert best == ranked[0]
    assert gap == g[ranked[0]] - g[ranked[1]]


def test_calculate_bid():
    bids, a = calculate_bid([0, 0], [5, 3], 0.5)
    assert a == 0 and bids.tolist() == [2.5, 0]
    bids, a = calculate_bid([1, 2], [5, 3], 0.5, assigned_resource=1)
    assert a == 1 and bids.tolist() == [1, 2]
    with pytest.raises(ContractViolation):
        calculate_bid([0], [1], 0)


def test_two_user_bidding_war():
    p = ProtocolParams(n_users=2, n_channels=1, eps_init=0.5, eps_final=0.5, zeta=1.0, b_star=64.0)
    q = np.array([[5.0, 3.0], [5.0, 3.0]])
    res = run_auction(q, p, np.random.default_rng(0))
    assert res.converged and res.iterations <= 10
    assert welfare(q, res.profile) == 8 == hungarian(q)[1]


def test_scale_epsilon():
    assert scale_epsilon(1, 0.9808, 1 / 32) == 0.9808
    assert scale_epsilon(1 / 32, 0.9808, 1 / 32) == 1 / 32
    eps = 1.0
    for _ in range(500):
        eps = scale_epsilon(eps, 0.9808, 1 / 32)
    assert 0.9808**500 < 1 / 32 and eps == 1 / 32
    with pytest.raises(ContractViolation):
        scale_epsilon(1, 0, 0.1)


def test_quantize_bid():
    p = ProtocolParams(b_star=256.0)
    assert p.lam == 4
    assert quantize_bid(8.0, p) == (0, 0, 0, 0)
    assert quantize_bid(9.5, p) == (0, 0, 0, 0)
    assert quantize_bid(6.0, p) == (1, 0, 0, 0)
    assert quantize_bid(0.0, p) == (3, 3, 3, 3)
    assert quantize_bid(6.0, ProtocolParams()) == (1,)
    with pytest.raises(ContractViolation):
        quantize_bid(-1, p)


def test_quantize_monotone():
    p = ProtocolParams(b_star=256.0)
    rng = np.random.default_rng(4)
    res = p.quant_resolution
    for b1, b2 in rng.uniform(0, 8, size=(10_000, 2)):
        if b1 > b2 + res:
            assert quantize_bid(b1, p) < quantize_bid(b2, p)
        elif b2 > b1 + res:
            assert quantize_bid(b2, p) < quantize_bid(b1, p)


def test_digit_roundtrip():
    for c in range(64):
        assert code_of(digits_of(c, 4, 3), 4) == c
    with pytest.raises(ContractViolation):
        code_of((4,), 4)


def test_contention_single_bidder(rng):
    out = resolve_contention([(3, (2, 1))], rng, beta=4)
    assert out.winner == 3 and out.blocks_used == 1 and out.rand_blocks == 0


def test_contention_distinct_first_digit(rng):
    out = resolve_contention([(0, (1, 3)), (1, (2, 0))], rng, beta=4)
    assert out.winner == 0 and out.det_blocks == 1 and out.rand_blocks == 0
    assert out.slot_trace[0]["transmit"] == {0: 2, 1: 3}


def test_contention_second_digit_and_nack(rng):
    out = resolve_contention([(0, (1, 3)), (1, (1, 0)), (2, (2, 0))], rng, beta=4)
    assert out.winner == 1 and out.det_blocks == 2
    assert out.slot_trace[0]["nack"] and out.slot_trace[1]["transmit"] == {0: 4, 1: 1}


def test_contention_errors(rng):
    with pytest.raises(ContractViolation):
        resolve_contention([], rng, beta=4)
    with pytest.raises(ContractViolation):
        resolve_contention([(0, (4,))], rng, beta=4)
    with pytest.raises(ContractViolation):
        resolve_contention([(0, (1,)), (1, (1, 2))], rng, beta=4)


def test_random_blocks_all_late_continue():
    # word bit 0 = 1 for both: everyone picks the late slot, both continue
    winner, blocks, picks = random_phase([4, 7], np.array([0b01, 0b11], dtype=np.uint64), 64)
    assert picks[0] == {4: 2, 7: 2} and winner == 4 and blocks == 2


def test_random_block_cap():
    words = np.full(3, np.iinfo(np.uint64).max, dtype=np.uint64)
    winner, blocks, _ = random_phase([5, 2, 9], words, RANDOM_BLOCK_CAP)
    assert blocks == 64 and winner == 2


def test_equal_bid_block_count():
    rng = np.random.default_rng(6)
    p = ProtocolParams(b_star=256.0)
    ell, trials = 8, 100_000
    words = rng.integers(0, 2**64, size=(trials, ell), dtype=np.uint64)
    users = np.arange(ell)
    blocks = np.array([random_phase(users, w, RANDOM_BLOCK_CAP)[1] for w in words]) + p.lam
    assert blocks.mean() <= max(1, C1 * np.log(ell)) + p.lam
    # the full contest path agrees on a smaller sample
    digits = quantize_bid(3.0, p)
    full = [resolve_contention([(u, digits) for u in range(ell)], rng, p.beta).blocks_used for _ in range(2000)]
    assert np.mean(full) <= max(1, C1 * np.log(ell)) + p.lam


def test_run_auction_single_user():
    p = ProtocolParams(n_users=1, n_channels=1)
    res = run_auction([[3.0]], p, np.random.default_rng(0))
    assert res.converged and res.iterations == 1 and res.profile.tolist() == [0]


def test_noop_iteration_when_all_assigned():
    p = ProtocolParams(n_users=4, n_channels=2)
    rng = np.random.default_rng(7)
    _, q = dithered(p, rng)
    state = AuctionState.fresh(p)
    assert run_auction(q, p, rng, state=state).converged
    before = state.copy()
    row = run_iteration(state, q, p, rng)
    assert row[TRACE_COLUMNS.index("slots")] == 1 and row[TRACE_COLUMNS.index("unassigned")] == 0
    assert np.array_equal(before.bids, state.bids) and np.array_equal(before.assigned, state.assigned)
    again = run_auction(q, p, rng, state=state)
    assert again.iterations == 0 and again.slots == 1


def test_epsilon_complementary_slackness_after_convergence():
    p = ProtocolParams.theory(8, 4)
    rng = np.random.default_rng(8)
    _, q = dithered(p, rng, integer=False)
    state = AuctionState.fresh(p)
    assert run_auction(q, p, rng, state=state).converged
    assert np.all(state.slack(q) <= p.eps_final + 1e-12)


def test_held_bids_nondecreasing_at_floor():
    # Partial welfare itself can drop when a low-value bidder displaces a
    # high-value holder; the held bids only drop by the contest resolution.
    for seed in range(20):
        p = ProtocolParams(n_users=4, n_channels=2, eps_init=1 / 32, eps_final=1 / 32, zeta=1.0, b_star=1024.0)
        rng = np.random.default_rng(seed)
        _, q = dithered(p, rng)
        state = AuctionState.fresh(p)
        held_sum = 0.0
        for _ in range(p.i_max):
            run_iteration(state, q, p, rng)
            held = np.flatnonzero(state.assigned >= 0)
            now = state.bids[held, state.assigned[held]].sum()
            assert now >= held_sum - p.n_resources * p.quant_resolution - 1e-9
            held_sum = now
            if state.complete:
                break
        assert state.complete


def test_theory_auction_reaches_optimum_n16():
    p = ProtocolParams.theory(16, 4)
    rng = np.random.default_rng(9)
    q, qh = dithered(p, rng)
    res = run_auction(qh, p, rng)
    assert res.converged
    assert iteration_bound(p) == 8 * 16**3 * 8 * (1 + 1 / 256) == 263_168
    assert res.iterations <= iteration_bound(p) / 10
    assert welfare(q, res.profile) == hungarian(q)[1]


def test_truncation_flag():
    p = ProtocolParams(i_max=2)
    rng = np.random.default_rng(10)
    _, q = dithered(p, rng)
    res = run_auction(q, p, rng)
    assert res.truncated and res.iterations == 2 and len(res.trace) == 2
    assert np.sum(res.profile == UNASSIGNED) > 0
    small = run_auction(q, p.with_(i_max=500), rng, slot_budget=10)
    assert small.iterations == 1 and small.truncated


def test_frame_block_count_is_max_over_channels():
    # channels 0 and 1, one slot each: 3 users tie on resource 0, 1 user alone on resource 1
    p = ProtocolParams(n_users=4, n_channels=4, b_star=256.0)
    q = np.ones((4, 4))
    q[:3, 0] = 2
    q[3, 1] = 2
    rng = np.random.default_rng(11)
    for _ in range(20):
        state = AuctionState.fresh(p)
        row = run_iteration(state, q, p, rng)
        det, rnd = row[TRACE_COLUMNS.index("det_blocks")], row[TRACE_COLUMNS.index("rand_blocks")]
        # contest on resource 0 used det_blocks - 1 + rnd blocks, the lone bidder 1 block
        assert row[TRACE_COLUMNS.index("max_frame_blocks")] == max(det - 1 + rnd, 1)
        fb = int(row[TRACE_COLUMNS.index("max_frame_blocks")])
        assert row[TRACE_COLUMNS.index("slots")] == 1 + p.lam * 5 + (fb - p.lam) * 3


def test_trace_csv():
    p = ProtocolParams(n_users=4, n_channels=2)
    rng = np.random.default_rng(12)
    _, q = dithered(p, rng)
    res = run_auction(q, p, rng)
    lines = res.trace.to_csv().splitlines()
    assert lines[0] == "iteration,eps,unassigned,det_blocks,rand_blocks,slots,partial_welfare"
    assert len(lines) == res.iterations + 1
    assert res.trace.slots == res.slots
    assert len(AuctionTrace()) == 0


def _kernel_run(kernel, q, p, words, budget=np.iinfo(np.int64).max):
    st_ = AuctionState.fresh(p)
    trace = np.zeros((words.shape[0], len(TRACE_COLUMNS)))
    out = kernel(q, st_.bids, st_.assigned, st_.owner, st_.bid_eps, st_.eps, p.eps_final, p.zeta, p.q_max,
                 p.beta, p.lam, p.n_channels, p.n_slots, words, words.shape[0], budget, RANDOM_BLOCK_CAP, trace)
    return out, st_, trace


@settings(max_examples=30, deadline=None)
@given(st.sampled_from([(4, 2), (8, 4), (6, 3), (8, 8)]), st.sampled_from([4.0, 64.0, 1024.0]),
       st.integers(0, 2**32 - 1))
def test_backends_agree(shape, b_star, seed):
    n, k = shape
    p = ProtocolParams(n_users=n, n_channels=k, b_star=b_star, i_max=300)
    rng = np.random.default_rng(seed)
    q = np.round(rng.uniform(0, 8, size=(n, n)), 1)
    words = rng.integers(0, 2**64, size=(300, n), dtype=np.uint64)
    (it1, e1, s1, c1), a, ta = _kernel_run(auction_numba, q, p, words)
    (it2, e2, s2, c2), b, tb = _kernel_run(auction_numpy, q, p, words)
    assert (it1, s1, c1) == (it2, s2, c2) and e1 == e2
    assert np.array_equal(a.assigned, b.assigned) and np.array_equal(a.owner, b.owner)
    assert np.array_equal(a.bids, b.bids) and np.array_equal(a.bid_eps, b.bid_eps)
    assert np.allclose(ta, tb)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_iteration_invariants(k, m, seed):
    p = ProtocolParams(n_users=k * m, n_channels=k, eps_init=1.0, eps_final=0.05, zeta=0.9, b_star=64.0)
    rng = np.random.default_rng(seed)
    q = rng.uniform(0, 8, size=(p.n_users, p.n_users))
    state = AuctionState.fresh(p)
    for _ in range(60):
        bids_before = state.bids.copy()
        eps_before = state.eps
        row = run_iteration(state, q, p, rng)
        assert row[0] == eps_before
        assert np.all(state.bids >= bids_before)
        held = state.assigned >= 0
        assert np.unique(state.assigned[held]).size == held.sum()
        assert np.all(state.owner[state.assigned[held]] == np.flatnonzero(held))
        assert np.all(state.slack(q)[held] <= state.bid_eps[held] + 1e-9)
        if state.complete:
            break


def test_release_violators():
    p = ProtocolParams(n_users=4, n_channels=2, eps_init=0.1, eps_final=0.1, zeta=1.0)
    rng = np.random.default_rng(13)
    _, q = dithered(p, rng)
    state = AuctionState.fresh(p)
    run_auction(q, p, rng, state=state)
    assert state.release_violators(q, 0.1).size == 0
    worse = q.copy()
    n = 0
    worse[n, state.assigned[n]] -= 3
    released = state.release_violators(worse, 0.1)
    assert n in released and state.assigned[n] == UNASSIGNED

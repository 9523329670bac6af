"""Time the numba and numpy kernels on identical inputs.

    python benchmarks/bench_kernels.py [--slots 200000] [--auctions 20] [--repeat 3]

Both backends are imported directly, so the env switch does not matter here.
The first numba call (compilation or cache load) is excluded from timings.
"""

import argparse
import time

import numpy as np

from spectrum_mac import ChannelParams, ProtocolParams, draw_network
from spectrum_mac.auction import RANDOM_BLOCK_CAP, AuctionState
from spectrum_mac.kernels import auction_numba, auction_numpy, explore_numba, explore_numpy
from spectrum_mac.kernels.auction import TRACE_COLUMNS


def bench(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def explore_case(params, q, n_slots, rng):
    choices = rng.integers(0, params.n_resources, size=(n_slots, params.n_users))
    noise = rng.uniform(-1, 1, size=choices.shape)

    def run(kernel):
        S = np.zeros(q.shape)
        V = np.zeros(q.shape, dtype=np.int64)
        kernel(choices, noise, q, params.delta_min / 2, params.q_max, S, V,
               np.zeros(choices.shape, dtype=np.bool_), np.zeros(n_slots))
        return S, V

    return run


def auction_case(params, q_hats, rng):
    words = [rng.integers(0, 2**64, size=(params.i_max, params.n_users), dtype=np.uint64) for _ in q_hats]

    def run(kernel):
        out = []
        for q_hat, w in zip(q_hats, words):
            st = AuctionState.fresh(params)
            trace = np.zeros((params.i_max, len(TRACE_COLUMNS)))
            kernel(q_hat, st.bids, st.assigned, st.owner, st.bid_eps, st.eps, params.eps_final, params.zeta,
                   params.q_max, params.beta, params.lam, params.n_channels, params.n_slots, w, params.i_max,
                   np.iinfo(np.int64).max, RANDOM_BLOCK_CAP, trace)
            out.append(st.assigned)
        return out

    return run


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--slots", type=int, default=200_000)
    ap.add_argument("--auctions", type=int, default=20)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    params = ProtocolParams()
    rng = np.random.default_rng(0)
    nets = [draw_network(params, ChannelParams(), rng) for _ in range(args.auctions)]
    q_hats = [n.q.values + rng.uniform(-params.d_max, params.d_max, n.q.values.shape) for n in nets]

    cases = {
        f"explore ({args.slots} slots, N=32)": explore_case(params, nets[0].q.values, args.slots, rng),
        f"auction ({args.auctions} runs, N=32, i_max={params.i_max})": auction_case(params, q_hats, rng),
    }
    kernels = {
        "explore": (explore_numba, explore_numpy),
        "auction": (auction_numba, auction_numpy),
    }
    print(f"{'case':48s} {'numba s':>9s} {'numpy s':>9s} {'speedup':>8s}")
    for name, run in cases.items():
        fast, slow = kernels[name.split()[0]]
        a, b = run(fast), run(slow)  # warm-up and parity check
        for x, y in zip(a, b):
            assert np.array_equal(x, y), "backends disagree"
        t_fast = bench(lambda: run(fast), args.repeat)
        t_slow = bench(lambda: run(slow), args.repeat)
        print(f"{name:48s} {t_fast:9.4f} {t_slow:9.4f} {t_slow / t_fast:7.1f}x")


if __name__ == "__main__":
    main()

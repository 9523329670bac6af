"""Distributed epsilon-scaling auction over (channel, slot) resources.

Each user keeps a private bid matrix.  Per iteration every unassigned user
raises its bid on its most profitable resource by ``eps + gap``; assigned
users re-submit their held bid.  Contests run per resource over carrier-sense
blocks: deterministic blocks compare base-``beta`` digits of the quantised
bid, two-slot random blocks break the remaining ties.  The winner takes the
resource and displaces any previous holder.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .core import UNASSIGNED, ContractViolation, ProtocolParams
from .kernels.auction import TRACE_COLUMNS, quant_codes, random_phase, run_auction_kernel

RANDOM_BLOCK_CAP = 64
_ITER_CHUNK = 256


def profits(q_hat_row, bid_row) -> np.ndarray:
    q = np.asarray(q_hat_row, dtype=np.float64)
    b = np.asarray(bid_row, dtype=np.float64)
    if q.shape != b.shape:
        raise ContractViolation("estimate and bid rows differ in length")
    return q - b


def best_and_gap(g) -> tuple[int, float]:
    """Most profitable index (lowest on ties) and best minus second-best."""
    g = np.asarray(g, dtype=np.float64)
    best = int(np.argmax(g))
    if g.size < 2:
        return best, float("inf")
    rest = np.delete(g, best)
    return best, float(g[best] - rest.max())


def calculate_bid(bid_row, q_hat_row, eps: float, assigned_resource: int = UNASSIGNED):
    """One user's bid update; returns (new bid row, chosen resource)."""
    if eps <= 0:
        raise ContractViolation("eps must be positive")
    bids = np.array(bid_row, dtype=np.float64)
    if assigned_resource != UNASSIGNED:
        return bids, int(assigned_resource)
    best, gap = best_and_gap(profits(q_hat_row, bids))
    bids[best] += eps if np.isinf(gap) else eps + gap
    return bids, best


def scale_epsilon(eps: float, zeta: float, eps_final: float) -> float:
    if not 0 < zeta <= 1:
        raise ContractViolation("zeta must lie in (0, 1]")
    return max(eps_final, eps * zeta)


def quantize_bid(bid: float, params: ProtocolParams) -> tuple[int, ...]:
    """Base-beta digits of ``1 - bid/Q_M`` truncated to ``lam`` places.

    Bids above ``Q_M`` are clipped first.  A higher bid gives a
    lexicographically smaller digit sequence, i.e. an earlier slot.
    """
    if bid < 0:
        raise ContractViolation("bids are non-negative")
    lam, beta = params.lam, params.beta
    code = int(quant_codes(bid, params.q_max, beta**lam))
    return digits_of(code, beta, lam)


def digits_of(code: int, beta: int, lam: int) -> tuple[int, ...]:
    return tuple((code // beta ** (lam - 1 - i)) % beta for i in range(lam))


def code_of(digits, beta: int) -> int:
    c = 0
    for d in digits:
        if not 0 <= d < beta:
            raise ContractViolation(f"digit {d} outside 0..{beta - 1}")
        c = c * beta + int(d)
    return c


@dataclass
class ContentionOutcome:
    winner: int | None
    det_blocks: int
    rand_blocks: int
    slot_trace: list = field(default_factory=list)

    @property
    def blocks_used(self) -> int:
        return self.det_blocks + self.rand_blocks


def resolve_contention(bidders, rng: np.random.Generator, beta: int,
                       random_cap: int = RANDOM_BLOCK_CAP, words=None) -> ContentionOutcome:
    """Carrier-sense contest among ``bidders = [(user, digits), ...]``.

    In deterministic block ``i`` each undetermined user transmits in slot
    ``digit_i + 1`` and drops out if it senses an earlier transmission; a
    silent collision-notification slot (one survivor) ends the contest.
    Bidders still tied after the last digit enter two-slot random blocks.
    ``words`` optionally supplies each bidder's 64 random bits.
    """
    if not bidders:
        raise ContractViolation("contention needs at least one bidder")
    users = np.array([u for u, _ in bidders], dtype=np.int64)
    digit_rows = [tuple(d) for _, d in bidders]
    lam = len(digit_rows[0])
    if any(len(d) != lam for d in digit_rows):
        raise ContractViolation("all bidders need the same number of digits")
    digits = np.array(digit_rows, dtype=np.int64).reshape(len(bidders), lam)
    if np.any((digits < 0) | (digits >= beta)):
        raise ContractViolation("digit outside 0..beta-1")
    if words is None:
        words = rng.integers(0, 2**64, size=len(bidders), dtype=np.uint64)
    words = np.asarray(words, dtype=np.uint64)

    trace = []
    alive = np.arange(len(bidders))
    det = 0
    for i in range(lam):
        det += 1
        slot = digits[alive, i] + 1
        keep = slot == slot.min()
        trace.append(dict(kind="det", block=det, transmit={int(users[j]): int(s) for j, s in zip(alive, slot)},
                          nack=bool(keep.sum() > 1)))
        alive = alive[keep]
        if alive.size == 1:
            return ContentionOutcome(int(users[alive[0]]), det, 0, trace)
    order = np.argsort(users[alive], kind="stable")
    alive = alive[order]
    winner, rnd, picks = random_phase(users[alive], words[alive], random_cap)
    for r, p in enumerate(picks):
        trace.append(dict(kind="rand", block=det + r + 1, transmit=p, nack=r + 1 < rnd))
    return ContentionOutcome(winner, det, rnd, trace)


@dataclass
class AuctionState:
    """All users' bid matrices, holdings and the current bid increment.

    ``bid_eps[n]`` is the increment user ``n`` used in its latest bid, which
    bounds how far its holding may sit below its best profit.
    """

    bids: np.ndarray
    assigned: np.ndarray
    owner: np.ndarray
    eps: float
    bid_eps: np.ndarray | None = None

    def __post_init__(self):
        if self.bid_eps is None:
            self.bid_eps = np.full(self.assigned.shape, float(self.eps))

    @classmethod
    def fresh(cls, params: ProtocolParams) -> "AuctionState":
        return cls(
            bids=np.zeros((params.n_users, params.n_resources)),
            assigned=np.full(params.n_users, UNASSIGNED, dtype=np.int64),
            owner=np.full(params.n_resources, UNASSIGNED, dtype=np.int64),
            eps=float(params.eps_init),
        )

    @property
    def n_unassigned(self) -> int:
        return int(np.sum(self.assigned == UNASSIGNED))

    @property
    def complete(self) -> bool:
        return self.n_unassigned == 0

    def profile(self) -> np.ndarray:
        return self.assigned.copy()

    def copy(self) -> "AuctionState":
        return AuctionState(self.bids.copy(), self.assigned.copy(), self.owner.copy(), self.eps,
                            self.bid_eps.copy())

    def slack(self, q_hat: np.ndarray) -> np.ndarray:
        """Best profit minus held profit per user (NaN when unassigned)."""
        out = np.full(self.assigned.shape, np.nan)
        held = np.flatnonzero(self.assigned >= 0)
        g = q_hat[held] - self.bids[held]
        out[held] = g.max(axis=1) - g[np.arange(held.size), self.assigned[held]]
        return out

    def release_violators(self, q_hat: np.ndarray, eps: float) -> np.ndarray:
        """Unassign holders whose slack under fresh estimates exceeds the
        increment they won with by more than ``eps``; returns their ids.

        A holder's slack equals its winning increment when estimates are
        unchanged, so only estimate changes larger than ``eps`` release it.
        """
        s = self.slack(q_hat)
        held = np.flatnonzero(self.assigned >= 0)
        bad = held[s[held] > self.bid_eps[held] + eps]
        self.owner[self.assigned[bad]] = UNASSIGNED
        self.assigned[bad] = UNASSIGNED
        return bad


@dataclass
class AuctionTrace:
    """Per-iteration record: eps used, unassigned users after the iteration,
    deterministic / random blocks summed over contests, slots consumed,
    estimated welfare of the partial assignment, largest frame block count."""

    rows: np.ndarray = field(default_factory=lambda: np.zeros((0, len(TRACE_COLUMNS))))

    def __len__(self):
        return self.rows.shape[0]

    def column(self, name: str) -> np.ndarray:
        return self.rows[:, TRACE_COLUMNS.index(name)]

    @property
    def slots(self) -> int:
        return int(self.column("slots").sum())

    def extend(self, rows: np.ndarray) -> None:
        self.rows = np.vstack([self.rows, rows])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "eps", "unassigned", "det_blocks", "rand_blocks", "slots", "partial_welfare"])
        for i, r in enumerate(self.rows, start=1):
            w.writerow([i, repr(float(r[0])), int(r[1]), int(r[2]), int(r[3]), int(r[4]), repr(float(r[5]))])
        return buf.getvalue()


@dataclass
class AuctionResult:
    profile: np.ndarray
    trace: AuctionTrace
    iterations: int
    slots: int
    converged: bool

    @property
    def truncated(self) -> bool:
        return not self.converged


def _drive(state: AuctionState, q_hat, params: ProtocolParams, rng: np.random.Generator,
           max_iter: int, slot_budget: float, trace: AuctionTrace, kernel=None) -> tuple[int, int, bool]:
    kernel = kernel or run_auction_kernel
    q_hat = np.ascontiguousarray(q_hat, dtype=np.float64)
    if q_hat.shape != state.bids.shape:
        raise ContractViolation(f"estimates have shape {q_hat.shape}, expected {state.bids.shape}")
    iters = slots = 0
    converged = state.complete
    budget = int(min(slot_budget, np.iinfo(np.int64).max))
    while iters < max_iter and slots < budget:
        chunk = min(_ITER_CHUNK, max_iter - iters)
        words = rng.integers(0, 2**64, size=(chunk, params.n_users), dtype=np.uint64)
        rows = np.zeros((chunk, len(TRACE_COLUMNS)))
        n_it, eps, used, converged = kernel(
            q_hat, state.bids, state.assigned, state.owner, state.bid_eps, float(state.eps), float(params.eps_final),
            float(params.zeta), float(params.q_max), int(params.beta), int(params.lam),
            int(params.n_channels), int(params.n_slots), words, int(chunk), int(budget - slots),
            RANDOM_BLOCK_CAP, rows)
        state.eps = float(eps)
        trace.extend(rows[:n_it])
        iters += n_it
        slots += used
        if converged:
            break
    return iters, slots, bool(converged)


def run_iteration(state: AuctionState, q_hat, params: ProtocolParams, rng: np.random.Generator,
                  kernel=None) -> np.ndarray:
    """Advance one auction iteration; returns its trace row."""
    trace = AuctionTrace()
    _drive(state, q_hat, params, rng, 1, np.inf, trace, kernel)
    return trace.rows[0]


def run_auction(q_hat, params: ProtocolParams, rng: np.random.Generator, state: AuctionState | None = None,
                max_iter: int | None = None, slot_budget: float = np.inf, kernel=None) -> AuctionResult:
    """Iterate until the unassigned-notification slot stays silent, ``max_iter``
    (default ``params.i_max``) iterations pass, or ``slot_budget`` is spent.

    Pass ``state`` to continue an earlier auction (warm start); a state that
    is already complete costs a single notification slot.
    """
    state = state if state is not None else AuctionState.fresh(params)
    max_iter = params.i_max if max_iter is None else max_iter
    trace = AuctionTrace()
    if state.complete:
        return AuctionResult(state.profile(), trace, 0, 1, True)
    iters, slots, converged = _drive(state, q_hat, params, rng, max_iter, slot_budget, trace, kernel)
    return AuctionResult(state.profile(), trace, iters, slots, converged)


def iteration_bound(params: ProtocolParams) -> float:
    """Worst-case iteration count for convergence at eps* <= delta_min/(8N)."""
    n = params.n_users
    return 8 * n**3 * params.q_max / params.delta_min * (1 + 1 / (16 * n))

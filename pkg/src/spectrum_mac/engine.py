"""Epoch orchestration: exploration, auction and exploitation with
slot-accurate welfare accounting.

Two schedules are supported.  The exponential one keeps exploration and the
auction budget fixed and doubles exploitation every epoch.  The fixed one
runs a setup phase (exploration and auction only) followed by equal-length
epochs whose exploitation fills whatever the learning phases leave over;
there the auction is warm-started from the previous epoch's bids.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace

import numpy as np

from .auction import AuctionState, run_auction
from .channel import Network
from .core import ContractViolation, ProtocolParams, welfare
from .exploration import EstimationState, run_exploration

EXPLORATION, AUCTION, EXPLOITATION = "exploration", "auction", "exploitation"
PHASES = (EXPLORATION, AUCTION, EXPLOITATION)


@dataclass(frozen=True)
class EpochSchedule:
    """Phase lengths in slots.

    ``exponential``: ``t3(j) = t3_base * 2**j`` for epochs ``j = 1..n_epochs``.
    ``fixed``: every epoch spans ``epoch_slots``; exploitation gets the
    remainder after exploration and the auction slots actually used.
    ``t2_budget`` caps the auction: no iteration starts once it is spent.
    """

    mode: str = "fixed"
    t1: int = 50
    t2_budget: int = 200
    max_iterations: int = 4
    n_epochs: int = 100
    t3_base: int = 0
    epoch_slots: int = 5000
    slot_duration: float = 1e-6
    warm_start: bool = True
    one_sided_dither: bool = False

    def __post_init__(self):
        if self.mode not in ("exponential", "fixed"):
            raise ContractViolation("mode must be 'exponential' or 'fixed'")
        if self.t1 < 0 or self.t2_budget < 1 or self.max_iterations < 1 or self.n_epochs < 0:
            raise ContractViolation("need t1 >= 0, t2_budget >= 1, max_iterations >= 1, n_epochs >= 0")
        if self.mode == "exponential" and self.t3_base < 0:
            raise ContractViolation("t3_base must be non-negative")
        if self.mode == "fixed" and self.t1 + self.t2_budget > self.epoch_slots:
            raise ContractViolation("exploration plus auction budget exceed the epoch")
        if self.slot_duration <= 0:
            raise ContractViolation("slot_duration must be positive")

    def t3(self, j: int, auction_slots: int = 0) -> int:
        if self.mode == "exponential":
            return self.t3_base * 2**j
        return max(0, self.epoch_slots - self.t1 - auction_slots)

    def with_(self, **changes) -> "EpochSchedule":
        return replace(self, **changes)


@dataclass(frozen=True)
class SetupConfig:
    """Initial learning phase of the fixed schedule (no exploitation)."""

    t1: int = 85_000
    t2_budget: int = 15_000

    def __post_init__(self):
        if self.t1 < 0 or self.t2_budget < 1:
            raise ContractViolation("need t1 >= 0 and t2_budget >= 1")


@dataclass
class Segment:
    epoch: int
    phase: str
    start: int
    welfare: np.ndarray
    w_star: float

    @property
    def length(self) -> int:
        return int(self.welfare.size)

    @property
    def stop(self) -> int:
        return self.start + self.length


@dataclass
class EpochRecord:
    epoch: int
    profile: np.ndarray
    exploited: np.ndarray
    w_star: float
    t1: int
    auction_slots: int
    auction_iterations: int
    t3: int
    converged: bool
    fallback: bool

    @property
    def truncated(self) -> bool:
        return not self.converged


@dataclass
class RunLog:
    """Per-slot welfare split into phase segments plus per-epoch records.

    Epoch 0 is the setup phase of a fixed-schedule run.
    """

    segments: list[Segment] = field(default_factory=list)
    epochs: list[EpochRecord] = field(default_factory=list)
    seed: int | None = None
    meta: dict = field(default_factory=dict)
    channel_changes: int = 0

    @property
    def n_slots(self) -> int:
        return self.segments[-1].stop if self.segments else 0

    def append(self, epoch: int, phase: str, welfare_slots, w_star: float) -> None:
        w = np.asarray(welfare_slots, dtype=np.float64)
        self.segments.append(Segment(epoch, phase, self.n_slots, w, float(w_star)))

    @property
    def welfare(self) -> np.ndarray:
        if not self.segments:
            return np.zeros(0)
        return np.concatenate([s.welfare for s in self.segments])

    @property
    def w_star(self) -> np.ndarray:
        if not self.segments:
            return np.zeros(0)
        return np.concatenate([np.full(s.length, s.w_star) for s in self.segments])

    @property
    def cumulative_regret(self) -> np.ndarray:
        return np.cumsum(self.w_star - self.welfare)

    @property
    def regret(self) -> float:
        return float(sum(s.length * s.w_star - s.welfare.sum() for s in self.segments))

    def phase_regret(self) -> list[tuple[int, str, float]]:
        """(epoch, phase, regret accrued) per segment."""
        return [(s.epoch, s.phase, float(s.length * s.w_star - s.welfare.sum())) for s in self.segments]

    def epoch_ends(self) -> np.ndarray:
        """Last slot index (exclusive) of every epoch, in order."""
        ends: dict[int, int] = {}
        for s in self.segments:
            ends[s.epoch] = s.stop
        return np.array([ends[e] for e in sorted(ends)], dtype=np.int64)

    def boundaries(self) -> list[tuple[int, str, int, int]]:
        return [(s.epoch, s.phase, s.start, s.stop) for s in self.segments]

    @property
    def truncated_epochs(self) -> list[int]:
        return [r.epoch for r in self.epochs if r.truncated]

    def to_csv(self, with_meta: bool = True) -> str:
        buf = io.StringIO()
        if with_meta:
            for k, v in self.meta.items():
                buf.write(f"# {k}: {v}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["slot", "epoch", "phase", "welfare", "w_star", "cumulative_regret"])
        total = 0.0
        slot = 0
        for s in self.segments:
            for x in s.welfare:
                total += s.w_star - x
                w.writerow([slot, s.epoch, s.phase, repr(float(x)), repr(s.w_star), repr(float(total))])
                slot += 1
        return buf.getvalue()


def efficiency(log: RunLog, w_star_series=None) -> np.ndarray:
    """Mean welfare over each epoch divided by that epoch's optimum.

    ``w_star_series`` optionally overrides the per-slot optimum recorded in
    the log.  An epoch with zero optimum scores 1 when its welfare is also
    zero and NaN otherwise.
    """
    w = log.welfare
    ws = log.w_star if w_star_series is None else np.broadcast_to(np.asarray(w_star_series, float), w.shape)
    out = []
    for e in sorted({s.epoch for s in log.segments}):
        segs = [s for s in log.segments if s.epoch == e]
        sl = slice(segs[0].start, segs[-1].stop)
        mean_w, mean_star = w[sl].mean(), ws[sl].mean()
        if mean_star == 0:
            out.append(1.0 if mean_w == 0 else np.nan)
        else:
            out.append(mean_w / mean_star)
    return np.array(out)


def exploitation_profile(state: AuctionState, fallback: np.ndarray | None) -> tuple[np.ndarray, bool]:
    """The auction's profile, or the last complete one when it is partial."""
    if state.complete or fallback is None:
        return state.profile(), False
    return fallback.copy(), True


class ChannelClock:
    """Evolves a dynamic network every ``coherence_slots`` slots.

    Evolution is applied lazily at segment starts; exploration and
    exploitation are cut at interval boundaries, so each logged segment sees
    one channel state.
    """

    def __init__(self, network: Network, coherence_slots: int, rng: np.random.Generator):
        if coherence_slots < 1:
            raise ContractViolation("coherence interval must span at least one slot")
        self.network = network
        self.coherence_slots = int(coherence_slots)
        self.rng = rng
        self.next_change = self.coherence_slots
        self.changes = 0

    @property
    def dynamic(self) -> bool:
        return bool(self.network.realization.cp.dynamic)

    def sync(self, now: int) -> None:
        if not self.dynamic:
            return
        while now >= self.next_change:
            self.network.step(self.rng)
            self.next_change += self.coherence_slots
            self.changes += 1

    def slots_left(self, now: int) -> float:
        return self.next_change - now if self.dynamic else np.inf


@dataclass
class EngineState:
    """Everything a run carries between epochs."""

    estimates: EstimationState
    auction: AuctionState | None = None
    last_complete: np.ndarray | None = None


def _explore(j: int, engine: EngineState, network: Network, params: ProtocolParams, t1: int,
             rng: np.random.Generator, log: RunLog, clock: ChannelClock | None, one_sided: bool) -> None:
    done = 0
    while True:
        if clock is not None:
            clock.sync(log.n_slots)
        chunk = t1 - done if clock is None else int(min(t1 - done, clock.slots_left(log.n_slots)))
        last = done + chunk >= t1
        _, w = run_exploration(chunk, engine.estimates, network.q.values, params, rng,
                               one_sided_dither=one_sided, finalize=last)
        if chunk or t1 == 0:
            log.append(j, EXPLORATION, w, network.w_star)
        done += chunk
        if last:
            return


def _hold(j: int, phase: str, n: int, network: Network, profile: np.ndarray | None, log: RunLog,
          clock: ChannelClock | None) -> None:
    """Log ``n`` slots of a phase with constant per-slot welfare: that of
    ``profile`` on the current channel, or 0 when ``profile`` is None.
    One segment per coherence interval touched."""
    done = 0
    while True:
        if clock is not None:
            clock.sync(log.n_slots)
        chunk = n - done if clock is None else int(min(n - done, clock.slots_left(log.n_slots)))
        if chunk or n == 0:
            w = 0.0 if profile is None else welfare(network.q, profile)
            log.append(j, phase, np.full(chunk, w), network.w_star)
        done += chunk
        if done >= n:
            return


def run_epoch(j: int, engine: EngineState, network: Network, params: ProtocolParams, t1: int,
              t2_budget: int, max_iterations: int, t3, rng: np.random.Generator, log: RunLog,
              warm_start: bool = False, one_sided_dither: bool = False,
              clock: ChannelClock | None = None, allocator=None) -> EpochRecord:
    """One exploration, auction, exploitation cycle appended to ``log``.

    ``t3`` is a slot count or a callable mapping the auction slots used to
    the exploitation length.  The estimation state accumulates in place.
    ``allocator(q_hat, rng) -> profile`` replaces the auction with an
    idealised allocation that costs no slots (used for baselines).
    """
    _explore(j, engine, network, params, t1, rng, log, clock, one_sided_dither)
    q_hat = engine.estimates.q_hat

    if clock is not None:
        clock.sync(log.n_slots)
    if allocator is not None:
        profile = np.asarray(allocator(q_hat, rng), dtype=np.int64)
        state = AuctionState.fresh(params)
        state.assigned[:] = profile
        state.owner[profile] = np.arange(params.n_users)
        iterations, used, converged = 0, 0, True
    else:
        if warm_start and engine.auction is not None:
            state = engine.auction
            state.release_violators(q_hat, state.eps)
        else:
            state = AuctionState.fresh(params)
        res = run_auction(q_hat, params, rng, state=state, max_iter=max_iterations, slot_budget=t2_budget)
        iterations, used, converged = res.iterations, res.slots, res.converged
    engine.auction = state
    _hold(j, AUCTION, used, network, None, log, clock)

    profile, fallback = exploitation_profile(state, engine.last_complete)
    if state.complete:
        engine.last_complete = state.profile()
    n3 = t3(used) if callable(t3) else int(t3)
    _hold(j, EXPLOITATION, n3, network, profile, log, clock)
    rec = EpochRecord(j, state.profile(), profile, network.w_star, t1, used, iterations, n3,
                      converged, fallback)
    log.epochs.append(rec)
    return rec


def run_exponential(params: ProtocolParams, network: Network, schedule: EpochSchedule,
                    rng: np.random.Generator, allocator=None) -> RunLog:
    """Epochs ``1..J`` with a fresh auction each epoch and doubling exploitation."""
    if schedule.mode != "exponential":
        raise ContractViolation("run_exponential needs an exponential schedule")
    if network.realization.cp.dynamic:
        raise ContractViolation("the exponential schedule assumes a static channel")
    log = RunLog()
    engine = EngineState(EstimationState.fresh(params))
    for j in range(1, schedule.n_epochs + 1):
        run_epoch(j, engine, network, params, schedule.t1, schedule.t2_budget, schedule.max_iterations,
                  schedule.t3(j), rng, log, one_sided_dither=schedule.one_sided_dither, allocator=allocator)
    return log


def steady_params(params: ProtocolParams, schedule: EpochSchedule) -> ProtocolParams:
    """Steady-state auction settings: eps held at its final value."""
    return params.with_(eps_init=params.eps_final, zeta=1.0, i_max=schedule.max_iterations)


def run_fixed(params: ProtocolParams, network: Network, setup: SetupConfig, schedule: EpochSchedule,
              rng: np.random.Generator, n_epochs: int | None = None,
              steady: ProtocolParams | None = None, channel_rng: np.random.Generator | None = None,
              allocator=None) -> RunLog:
    """Setup phase (epoch 0) followed by ``n_epochs`` fixed-length epochs.

    A dynamic channel evolves every ``coherence_time / slot_duration`` slots;
    exploration and exploitation are split at those boundaries.  ``channel_rng`` drives
    the evolution so that policies can be compared on identical channel
    paths.  ``allocator`` swaps the auction for a baseline policy.
    """
    if schedule.mode != "fixed":
        raise ContractViolation("run_fixed needs a fixed schedule")
    n_epochs = schedule.n_epochs if n_epochs is None else n_epochs
    steady = steady or steady_params(params, schedule)
    cp = network.realization.cp
    clock = ChannelClock(network, max(1, int(round(cp.coherence_time / schedule.slot_duration))),
                         channel_rng or rng)

    log = RunLog()
    engine = EngineState(EstimationState.fresh(params))
    run_epoch(0, engine, network, params, setup.t1, setup.t2_budget, params.i_max, 0, rng, log,
              one_sided_dither=schedule.one_sided_dither, clock=clock, allocator=allocator)
    engine.auction.eps = steady.eps_init
    for j in range(1, n_epochs + 1):
        run_epoch(j, engine, network, steady, schedule.t1, schedule.t2_budget, schedule.max_iterations,
                  lambda used: schedule.t3(j, used), rng, log, warm_start=schedule.warm_start,
                  one_sided_dither=schedule.one_sided_dither, clock=clock, allocator=allocator)
    log.channel_changes = clock.changes
    return log

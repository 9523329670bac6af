"""Exploration phase: uniform random pilots, collision-aware sample
accumulation and dithered rate estimates."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import ContractViolation, ProtocolParams, _matrix
from .kernels import explore

CHUNK_SLOTS = 1 << 16


@dataclass(frozen=True)
class ExplorationConstants:
    """Closed-form quantities used to judge an exploration phase."""

    n_users: int
    q_max: float
    delta_min: float

    @classmethod
    def of(cls, params: ProtocolParams) -> "ExplorationConstants":
        return cls(params.n_users, params.q_max, params.delta_min)

    @property
    def delta(self) -> float:
        return self.delta_min / self.q_max

    @property
    def xi_max(self) -> float:
        return 3 * self.delta_min / (8 * self.n_users)

    @property
    def d_max(self) -> float:
        return self.delta_min / (8 * self.n_users)

    def v_min(self, epoch: int) -> float:
        return 5 * epoch * self.n_users**2 / (2 * self.delta**2)

    @property
    def p_ss(self) -> float:
        n = self.n_users
        return (1 / n) * (1 - 1 / n) ** (n - 1)

    @property
    def t1(self) -> int:
        return int(np.ceil(10 * self.n_users**3 * self.q_max**2 / self.delta_min**2))


@dataclass
class EstimationState:
    """Per-user sample sums, visit counters, dithers and dithered estimates.

    ``S`` and ``V`` persist across epochs; ``D`` and ``q_hat`` are rebuilt
    by ``finalize`` at the end of every exploration phase.
    """

    S: np.ndarray
    V: np.ndarray
    D: np.ndarray
    q_hat: np.ndarray
    epoch: int = 0

    @classmethod
    def fresh(cls, params: ProtocolParams) -> "EstimationState":
        shape = (params.n_users, params.n_resources)
        return cls(
            S=np.zeros(shape),
            V=np.zeros(shape, dtype=np.int64),
            D=np.zeros(shape),
            q_hat=np.zeros(shape),
        )

    @property
    def q_tilde(self) -> np.ndarray:
        """Sample means; unvisited cells read as 0."""
        out = np.zeros_like(self.S)
        np.divide(self.S, self.V, out=out, where=self.V > 0)
        return out

    def finalize(self, dither: np.ndarray) -> np.ndarray:
        self.D = np.asarray(dither, dtype=np.float64)
        self.q_hat = self.q_tilde + self.D
        self.epoch += 1
        return self.q_hat

    def copy(self) -> "EstimationState":
        return EstimationState(self.S.copy(), self.V.copy(), self.D.copy(), self.q_hat.copy(),
                               self.epoch)


def draw_dither(params: ProtocolParams, rng: np.random.Generator, one_sided: bool = False) -> np.ndarray:
    """I.i.d. dithers: ``U[-d_max, d_max]`` or, one-sided, ``U[0, eps_final]``."""
    shape = (params.n_users, params.n_resources)
    if one_sided:
        return rng.uniform(0.0, params.eps_final, size=shape)
    return rng.uniform(-params.d_max, params.d_max, size=shape)


def _run_slots(choices, noise, q, params, state):
    n_t = choices.shape[0]
    success = np.zeros(choices.shape, dtype=np.bool_)
    welfare = np.zeros(n_t)
    explore(np.ascontiguousarray(choices, dtype=np.int64), np.ascontiguousarray(noise), q,
            params.delta_min / 2, float(params.q_max), state.S, state.V, success, welfare)
    return success, welfare


def explore_slot(state: EstimationState, truth, params: ProtocolParams, rng: np.random.Generator,
                 choices=None) -> np.ndarray:
    """One exploration slot for all users; returns per-user success flags.

    ``choices`` overrides the uniform draw (used to force collisions).
    """
    q = _matrix(truth)
    if choices is None:
        choices = rng.integers(0, params.n_resources, size=params.n_users)
    choices = np.asarray(choices, dtype=np.int64).reshape(1, -1)
    noise = rng.uniform(-1.0, 1.0, size=choices.shape)
    success, _ = _run_slots(choices, noise, q, params, state)
    return success[0]


def run_exploration(duration: int, state: EstimationState, truth, params: ProtocolParams,
                    rng: np.random.Generator, one_sided_dither: bool = False,
                    return_success: bool = False, finalize: bool = True):
    """Run ``duration`` exploration slots, then finalize dithered estimates.

    Returns ``(state, welfare_per_slot)``, plus the (duration, N) success
    matrix when ``return_success`` is set.  With ``finalize`` off the
    samples accumulate but no dither is drawn (for phases split into chunks).
    """
    if duration < 0:
        raise ContractViolation("duration must be non-negative")
    q = _matrix(truth)
    welfare = np.zeros(duration)
    success_all = np.zeros((duration, params.n_users), dtype=bool) if return_success else None
    done = 0
    while done < duration:
        t = min(CHUNK_SLOTS, duration - done)
        choices = rng.integers(0, params.n_resources, size=(t, params.n_users))
        noise = rng.uniform(-1.0, 1.0, size=(t, params.n_users))
        success, welfare[done:done + t] = _run_slots(choices, noise, q, params, state)
        if return_success:
            success_all[done:done + t] = success
        done += t
    if finalize:
        state.finalize(draw_dither(params, rng, one_sided=one_sided_dither))
    if return_success:
        return state, welfare, success_all
    return state, welfare


def estimation_error(state: EstimationState, truth) -> tuple[float, bool]:
    """Max |q_hat - Q| over all cells and whether every cell was visited.

    Unvisited cells make the error ``inf``.
    """
    q = _matrix(truth)
    visited = bool(np.all(state.V > 0))
    if not visited:
        return float("inf"), False
    return float(np.max(np.abs(state.q_hat - q))), True

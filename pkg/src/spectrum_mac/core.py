"""Shared domain types: protocol parameters, resources, utility matrices and
the welfare / regret arithmetic every other module builds on.

Resources are linearised as ``a = k * M + m`` (zero-based channel ``k`` and
time slot ``m``).  Action profiles are integer arrays of resource indices with
``UNASSIGNED`` (-1) marking users that hold no resource.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

UNASSIGNED = -1


class ContractViolation(ValueError):
    """Raised when an operation is called outside its precondition."""


def discrete_levels(b_star: float, beta: int) -> int:
    """Smallest ``lam >= 1`` with ``beta**lam >= b_star``."""
    lam = 1
    while beta**lam < b_star * (1.0 - 1e-12):
        lam += 1
    return lam


@dataclass(frozen=True)
class ProtocolParams:
    """Global parameters of the MAC protocol.

    Defaults describe the setup phase (32 users, 8 channels,
    epsilon scaled from 1 to 1/32 with factor 0.9808, four discrete bids,
    500 auction iterations).
    """

    n_users: int = 32
    n_channels: int = 8
    q_max: float = 8.0
    delta_min: float = 1.0
    beta: int = 4
    zeta: float = 0.9808
    eps_init: float = 1.0
    eps_final: float = 1.0 / 32
    b_star: float = 4.0
    i_max: int = 500
    rng_seed: int = 0
    strict_optimality: bool = False

    def __post_init__(self):
        n, k = self.n_users, self.n_channels
        if n < 1 or k < 1:
            raise ContractViolation("n_users and n_channels must be positive")
        if n % k:
            raise ContractViolation(
                f"n_users={n} is not a multiple of n_channels={k}; M = N/K must be an integer"
            )
        if not 0 < self.delta_min <= self.q_max:
            raise ContractViolation("need 0 < delta_min <= q_max")
        if not 0 < self.zeta <= 1:
            raise ContractViolation("zeta must lie in (0, 1]")
        if self.beta < 2:
            raise ContractViolation("beta must be at least 2")
        if self.b_star < 1:
            raise ContractViolation("b_star must be >= 1")
        if not 0 < self.eps_final <= self.eps_init:
            raise ContractViolation("need 0 < eps_final <= eps_init")
        if self.i_max < 1:
            raise ContractViolation("i_max must be >= 1")
        if self.strict_optimality and self.eps_final > self.delta_min / (8 * n) * (1 + 1e-12):
            raise ContractViolation("strict optimality needs eps_final <= delta_min / (8 N)")
        if not 0 <= self.rng_seed < 2**64:
            raise ContractViolation("rng_seed must be an unsigned 64-bit integer")

    @property
    def n_slots(self) -> int:
        """M, the number of time slots per channel."""
        return self.n_users // self.n_channels

    @property
    def n_resources(self) -> int:
        return self.n_channels * self.n_slots

    @property
    def delta(self) -> float:
        return self.delta_min / self.q_max

    @property
    def lam(self) -> int:
        return discrete_levels(self.b_star, self.beta)

    @property
    def d_max(self) -> float:
        return self.delta_min / (8 * self.n_users)

    @property
    def quant_resolution(self) -> float:
        """Bid resolution ``Q_M / b*`` of the deterministic contention blocks."""
        return self.q_max / self.b_star

    def with_(self, **changes) -> "ProtocolParams":
        return replace(self, **changes)

    @classmethod
    def theory(cls, n_users: int, n_channels: int, q_max: float = 8.0, delta_min: float = 1.0,
               **kw) -> "ProtocolParams":
        """Parameters for which the auction provably reaches the optimum."""
        eps_star = delta_min / (8 * n_users)
        base = dict(
            n_users=n_users,
            n_channels=n_channels,
            q_max=q_max,
            delta_min=delta_min,
            eps_init=eps_star,
            eps_final=eps_star,
            zeta=1.0,
            b_star=8 * n_users * q_max / delta_min,
            i_max=10**7,
            strict_optimality=True,
        )
        base.update(kw)
        return cls(**base)


@dataclass(frozen=True)
class Resource:
    channel: int
    slot: int

    def index(self, n_slots: int) -> int:
        return resource_index(self.channel, self.slot, n_slots)


def resource_index(channel: int, slot: int, n_slots: int) -> int:
    """Zero-based linear index of (channel, slot), both zero-based."""
    if channel < 0 or not 0 <= slot < n_slots:
        raise ContractViolation("resource indices out of range")
    return channel * n_slots + slot


def resource_of(a: int, n_slots: int) -> Resource:
    return Resource(channel=a // n_slots, slot=a % n_slots)


@dataclass(frozen=True)
class UtilityMatrix:
    """Mean per-user, per-resource rates ``Q[n, a]`` on the ``delta_min`` grid."""

    values: np.ndarray
    q_max: float = 8.0
    delta_min: float = 1.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise ContractViolation("utility matrix must be 2-D")
        if np.any(v < 0) or np.any(v > self.q_max):
            raise ContractViolation("utility entries must lie in [0, q_max]")
        units = v / self.delta_min
        if not np.allclose(units, np.round(units), atol=1e-9):
            raise ContractViolation("utility entries must be multiples of delta_min")
        v = np.round(units) * self.delta_min
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def units(self) -> np.ndarray:
        """Entries as integers in units of ``delta_min``."""
        return np.round(self.values / self.delta_min).astype(np.int64)

    @property
    def shape(self):
        return self.values.shape


def _matrix(q) -> np.ndarray:
    return q.values if isinstance(q, UtilityMatrix) else np.asarray(q, dtype=np.float64)


def as_profile(profile, n_users: int | None = None) -> np.ndarray:
    p = np.asarray(profile, dtype=np.int64)
    if p.ndim != 1:
        raise ContractViolation("action profile must be 1-D")
    if n_users is not None and p.size != n_users:
        raise ContractViolation(f"action profile has length {p.size}, expected {n_users}")
    return p


def collision_free(profile: np.ndarray) -> np.ndarray:
    """Boolean mask: user holds a resource nobody else chose."""
    p = np.asarray(profile)
    mask = p != UNASSIGNED
    if not mask.any():
        return mask
    counts = np.bincount(p[mask], minlength=int(p[mask].max()) + 1)
    out = np.zeros(p.shape, dtype=bool)
    out[mask] = counts[p[mask]] == 1
    return out


def is_orthogonal(profile) -> bool:
    p = np.asarray(profile)
    return bool(np.all(p != UNASSIGNED) and np.unique(p).size == p.size)


def utilities(q, profile) -> np.ndarray:
    """Per-user utility vector; colliding and unassigned users get 0."""
    m = _matrix(q)
    p = as_profile(profile, m.shape[0])
    if np.any((p < UNASSIGNED) | (p >= m.shape[1])):
        raise ContractViolation("profile entry out of resource range")
    ok = collision_free(p)
    out = np.zeros(m.shape[0])
    idx = np.flatnonzero(ok)
    out[idx] = m[idx, p[idx]]
    return out


def utility(q, profile, n: int) -> float:
    m = _matrix(q)
    if not 0 <= n < m.shape[0]:
        raise ContractViolation(f"user index {n} out of range")
    return float(utilities(m, profile)[n])


def welfare(q, profile) -> float:
    return float(utilities(q, profile).sum())


@dataclass
class WelfareSeries:
    """Realised per-slot welfare with the optimum it is measured against.

    ``w_star`` is a scalar for static channels or a per-slot array when the
    channel changes during the run.
    """

    welfare: np.ndarray
    w_star: float | np.ndarray = 0.0
    meta: dict = field(default_factory=dict)


def regret(series: WelfareSeries) -> float:
    w = np.asarray(series.welfare, dtype=np.float64)
    if w.size == 0:
        return 0.0
    w_star = np.broadcast_to(np.asarray(series.w_star, dtype=np.float64), w.shape)
    return float(np.sum(w_star - w))


def cumulative_regret(series: WelfareSeries) -> np.ndarray:
    w = np.asarray(series.welfare, dtype=np.float64)
    w_star = np.broadcast_to(np.asarray(series.w_star, dtype=np.float64), w.shape)
    return np.cumsum(w_star - w)

"""Network geometry, multipath channel and the resulting rate matrix.

Learner pairs live in a disk, static external interferers on a surrounding
annulus and a strong jammer sits to the south.  Each link gets a tapped
delay line with Rayleigh taps; the frequency response at each sub-channel
centre, path loss and log-normal shadowing give the received power.  Rates
are the largest allowed value whose Shannon requirement the SINR meets.

Time slots of one channel share the fading of that channel; they differ
only through the external interference occupying individual resources.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace

import numpy as np

from .allocators import hungarian
from .core import ContractViolation, ProtocolParams, UtilityMatrix

SPEED_OF_LIGHT = 3e8


def dbm_to_mw(dbm):
    return 10.0 ** (np.asarray(dbm, dtype=np.float64) / 10.0)


@dataclass(frozen=True)
class ChannelParams:
    """Physical channel and deployment parameters.

    ``shadow_model`` is ``"ln"`` (natural-log variance ``shadow_log_variance``)
    or ``"db"`` (standard deviation ``shadow_db_std`` in dB).
    ``free_space_reference`` scales path loss by ``(c / (4 pi f))**2``.
    """

    carrier_freq: float = 2e9
    total_bandwidth: float = 40e6
    subchannel_bandwidth: float = 5e6
    path_loss_exponent: float = 2.0
    n_taps: int = 7
    rayleigh_variance: float = 0.01
    last_tap_power: float = 0.1
    max_delay_factor: float = 10**0.25
    shadow_model: str = "ln"
    shadow_log_mean: float = 0.0
    shadow_log_variance: float = 0.01
    shadow_db_std: float = 5.0
    tx_power_mw: float = 1.0
    noise_psd_dbm: float = -174.0
    noise_figure_db: float = 2.0
    rate_step: float = 1.0
    max_rate: float = 8.0
    coherence_time: float = 5e-3
    dynamic: bool = False
    fading_memory: float = 0.0
    disk_radius: float = 100.0
    ring_inner: float = 100.0
    ring_outer: float = 200.0
    link_distance: float = 10.0
    jammer_x: float = 0.0
    jammer_y: float = -150.0
    interference_fraction: float = 0.2
    interferer_power_mw: float = 20.0
    extra_interferer_power_mw: float = 1000.0
    ring_on_all_resources: bool = True
    free_space_reference: bool = True

    def __post_init__(self):
        if self.subchannel_bandwidth <= 0 or self.total_bandwidth <= 0:
            raise ContractViolation("bandwidths must be positive")
        if self.n_taps < 1:
            raise ContractViolation("need at least one tap")
        if self.rate_step <= 0 or self.max_rate < self.rate_step:
            raise ContractViolation("need 0 < rate_step <= max_rate")
        if abs(self.max_rate / self.rate_step - round(self.max_rate / self.rate_step)) > 1e-9:
            raise ContractViolation("max_rate must be a multiple of rate_step")
        if self.shadow_model not in ("ln", "db"):
            raise ContractViolation("shadow_model must be 'ln' or 'db'")
        if not 0 <= self.interference_fraction <= 1:
            raise ContractViolation("interference_fraction must lie in [0, 1]")
        if not 0 < self.ring_inner <= self.ring_outer:
            raise ContractViolation("need 0 < ring_inner <= ring_outer")
        if self.disk_radius <= 0 or self.link_distance <= 0:
            raise ContractViolation("disk_radius and link_distance must be positive")
        if not 0 <= self.fading_memory < 1:
            raise ContractViolation("fading_memory must lie in [0, 1)")

    @property
    def rate_set(self) -> np.ndarray:
        n = int(round(self.max_rate / self.rate_step))
        return self.rate_step * np.arange(1, n + 1)

    @property
    def noise_mw(self) -> float:
        """Thermal noise over one sub-channel, including the noise figure."""
        return float(dbm_to_mw(self.noise_psd_dbm + self.noise_figure_db) * self.subchannel_bandwidth)

    @property
    def tap_powers(self) -> np.ndarray:
        """Exponential power-delay profile from 1 down to ``last_tap_power``."""
        if self.n_taps == 1:
            return np.ones(1)
        return self.last_tap_power ** (np.arange(self.n_taps) / (self.n_taps - 1))

    def check(self, params: ProtocolParams) -> None:
        if params.n_channels * self.subchannel_bandwidth > self.total_bandwidth * (1 + 1e-12):
            raise ContractViolation("K sub-channels do not fit in the total bandwidth")
        if abs(self.max_rate - params.q_max) > 1e-12 or abs(self.rate_step - params.delta_min) > 1e-12:
            raise ContractViolation("rate set must run from delta_min to q_max in steps of delta_min")

    def with_(self, **changes) -> "ChannelParams":
        return replace(self, **changes)


@dataclass(frozen=True)
class Geometry:
    tx: np.ndarray  # (N, 2)
    rx: np.ndarray  # (N, 2)
    interferers: np.ndarray  # (I, 2)
    jammer: np.ndarray  # (2,)

    @property
    def southern(self) -> np.ndarray:
        return self.rx[:, 1] < 0


def uniform_disk(rng: np.random.Generator, n: int, radius: float, inner: float = 0.0) -> np.ndarray:
    r = np.sqrt(rng.uniform(inner**2, radius**2, size=n))
    phi = rng.uniform(0.0, 2 * np.pi, size=n)
    return np.column_stack([r * np.cos(phi), r * np.sin(phi)])


def place_nodes(params: ProtocolParams, cp: ChannelParams, rng: np.random.Generator,
                n_interferers: int | None = None) -> Geometry:
    """Transmitters uniform in the disk, receivers uniform within
    ``link_distance`` of their transmitter, interferers uniform in the ring.

    By default there is one ring interferer per resource (the static outer
    network) plus one per extra occupied resource.
    """
    n = params.n_users
    if n_interferers is None:
        n_interferers = n_interferers_for(params, cp)
    tx = uniform_disk(rng, n, cp.disk_radius)
    rx = tx + uniform_disk(rng, n, cp.link_distance)
    interferers = uniform_disk(rng, n_interferers, cp.ring_outer, cp.ring_inner)
    return Geometry(tx, rx, interferers, np.array([cp.jammer_x, cp.jammer_y]))


def n_occupied(params: ProtocolParams, cp: ChannelParams | None = None) -> int:
    """Extra occupied resources: a fraction of the non-jammed ones."""
    frac = (cp or ChannelParams()).interference_fraction
    n_jam_channels = params.n_channels // 2
    free = (params.n_channels - n_jam_channels) * params.n_slots
    return int(np.floor(frac * free + 0.5))


def n_interferers_for(params: ProtocolParams, cp: ChannelParams | None = None) -> int:
    cp = cp or ChannelParams()
    ring = params.n_resources if cp.ring_on_all_resources else 0
    return ring + n_occupied(params, cp)


@dataclass
class ChannelRealization:
    """Everything needed to evaluate SINRs; taps are the only evolving part.

    ``link_*`` arrays describe the N desired links, ``intf_*`` the links from
    every interferer to every receiver (shape (I, N, ...)).
    """

    params: ProtocolParams
    cp: ChannelParams
    geometry: Geometry
    link_dist: np.ndarray
    link_delays: np.ndarray
    link_taps: np.ndarray
    link_shadow: np.ndarray
    intf_dist: np.ndarray
    intf_delays: np.ndarray
    intf_taps: np.ndarray
    intf_shadow: np.ndarray
    jammed_channels: np.ndarray
    occupied: np.ndarray  # resource index occupied by each interferer
    epoch: int = 0

    @property
    def n_ring(self) -> int:
        return self.params.n_resources if self.cp.ring_on_all_resources else 0

    @property
    def extra_occupied(self) -> np.ndarray:
        """Resources hit by the additional random external interference."""
        return self.occupied[self.n_ring:]

    def copy(self) -> "ChannelRealization":
        fields = {k: (v.copy() if isinstance(v, np.ndarray) else v) for k, v in self.__dict__.items()}
        return ChannelRealization(**fields)

    @property
    def subchannel_offsets(self) -> np.ndarray:
        k = self.params.n_channels
        return (np.arange(k) - (k - 1) / 2) * self.cp.subchannel_bandwidth

    def path_gain(self, d) -> np.ndarray:
        cp = self.cp
        g = np.maximum(np.asarray(d, dtype=np.float64), 1.0) ** (-cp.path_loss_exponent)
        if cp.free_space_reference:
            g = g * (SPEED_OF_LIGHT / (4 * np.pi * cp.carrier_freq)) ** 2
        return g

    def link_response(self) -> np.ndarray:
        """Complex frequency response of each desired link, shape (N, K)."""
        return frequency_response(self.link_taps, self.link_delays, self.subchannel_offsets)

    def link_gain(self) -> np.ndarray:
        """Power gain of each desired link per sub-channel, shape (N, K)."""
        h = self.link_response()
        return np.abs(h) ** 2 * (self.path_gain(self.link_dist) * self.link_shadow)[:, None]

    def interference(self) -> np.ndarray:
        """External interference power (mW) at each receiver per resource, (N, K*M)."""
        p = self.params
        out = np.zeros((p.n_users, p.n_resources))
        if self.occupied.size == 0:
            return out
        h = frequency_response(self.intf_taps, self.intf_delays, self.subchannel_offsets)  # (I, N, K)
        g = np.abs(h) ** 2 * (self.path_gain(self.intf_dist) * self.intf_shadow)[..., None]
        ch = self.occupied // p.n_slots
        tx_power = np.full(self.occupied.size, self.cp.extra_interferer_power_mw)
        tx_power[:self.n_ring] = self.cp.interferer_power_mw
        power = tx_power[:, None] * g[np.arange(self.occupied.size), :, ch]  # (I, N)
        np.add.at(out.T, self.occupied, power)
        return out


def frequency_response(taps: np.ndarray, delays: np.ndarray, freqs: np.ndarray) -> np.ndarray:
    """``H(f) = sum_l g_l exp(-2j pi f tau_l)`` over the last (tap) axis."""
    phase = np.exp(-2j * np.pi * delays[..., None, :] * freqs[:, None])
    return np.sum(taps[..., None, :] * phase, axis=-1)


def draw_taps(cp: ChannelParams, rng: np.random.Generator, shape) -> np.ndarray:
    """Complex Gaussian taps with per-component variance ``rayleigh_variance``,
    scaled by the power-delay profile (first tap = line of sight)."""
    sigma = np.sqrt(cp.rayleigh_variance)
    g = rng.normal(0.0, sigma, size=(*shape, cp.n_taps)) + 1j * rng.normal(0.0, sigma, size=(*shape, cp.n_taps))
    return g * np.sqrt(cp.tap_powers)


def _delays(cp: ChannelParams, dist: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    tau_max = cp.max_delay_factor * np.maximum(dist, 1.0) / SPEED_OF_LIGHT
    u = np.sort(rng.uniform(0.0, 1.0, size=(*dist.shape, cp.n_taps)), axis=-1)
    return u * tau_max[..., None]


def _shadow(cp: ChannelParams, rng: np.random.Generator, shape) -> np.ndarray:
    if cp.shadow_model == "db":
        return 10.0 ** (rng.normal(0.0, cp.shadow_db_std, size=shape) / 10.0)
    return np.exp(rng.normal(cp.shadow_log_mean, np.sqrt(cp.shadow_log_variance), size=shape))


def realize_channel(geom: Geometry, params: ProtocolParams, cp: ChannelParams,
                    rng: np.random.Generator) -> ChannelRealization:
    """Draw delays, taps, shadowing, jammed channels and interference occupancy."""
    cp.check(params)
    n, k = params.n_users, params.n_channels
    link_dist = np.linalg.norm(geom.rx - geom.tx, axis=1)
    intf_dist = np.linalg.norm(geom.rx[None, :, :] - geom.interferers[:, None, :], axis=2)
    jammed = np.sort(rng.choice(k, size=k // 2, replace=False))
    free = np.flatnonzero(~np.isin(np.arange(params.n_resources) // params.n_slots, jammed))
    n_ring = params.n_resources if cp.ring_on_all_resources else 0
    n_ring = min(n_ring, geom.interferers.shape[0])
    n_extra = min(geom.interferers.shape[0] - n_ring, free.size, n_occupied(params, cp))
    extra = np.sort(rng.choice(free, size=n_extra, replace=False))
    occupied = np.concatenate([np.arange(n_ring), extra]).astype(np.int64)
    intf_dist = intf_dist[:occupied.size]
    return ChannelRealization(
        params=params,
        cp=cp,
        geometry=geom,
        link_dist=link_dist,
        link_delays=_delays(cp, link_dist, rng),
        link_taps=draw_taps(cp, rng, (n,)),
        link_shadow=_shadow(cp, rng, n),
        intf_dist=intf_dist,
        intf_delays=_delays(cp, intf_dist, rng),
        intf_taps=draw_taps(cp, rng, intf_dist.shape),
        intf_shadow=_shadow(cp, rng, intf_dist.shape),
        jammed_channels=jammed,
        occupied=occupied,
    )


def rate_from_sinr(sinr, rate_set) -> np.ndarray:
    """Largest rate ``r`` with ``log2(1 + sinr) >= r``; 0 below the smallest."""
    cap = np.log2(1.0 + np.maximum(np.asarray(sinr, dtype=np.float64), 0.0))
    rates = np.asarray(rate_set, dtype=np.float64)
    idx = np.searchsorted(rates, cap, side="right")
    return np.where(idx > 0, rates[np.maximum(idx - 1, 0)], 0.0)


def sinr_matrix(real: ChannelRealization) -> np.ndarray:
    p = real.params
    signal = real.cp.tx_power_mw * np.repeat(real.link_gain(), p.n_slots, axis=1)
    return signal / (real.cp.noise_mw + real.interference())


def qos_matrix(real: ChannelRealization) -> UtilityMatrix:
    """Mean rate of every user on every resource; jammed channels read 0
    for receivers south of the origin."""
    p = real.params
    q = rate_from_sinr(sinr_matrix(real), real.cp.rate_set)
    jam = np.isin(np.arange(p.n_resources) // p.n_slots, real.jammed_channels)
    q[np.ix_(real.geometry.southern, jam)] = 0.0
    return UtilityMatrix(q, q_max=p.q_max, delta_min=p.delta_min)


def qos_sample(q_mean, rng: np.random.Generator, q_max: float = 8.0, delta_min: float = 1.0, size=None):
    """Bounded sample with mean exactly ``q_mean``.

    Uniform noise of half-width ``min(delta_min/2, q_mean, q_max - q_mean)``
    keeps the sample inside ``[0, q_max]`` without clipping bias, so a
    zero mean always yields 0.
    """
    q = np.asarray(q_mean, dtype=np.float64)
    if np.any((q < 0) | (q > q_max)):
        raise ContractViolation("q_mean must lie in [0, q_max]")
    shape = q.shape if size is None else size
    h = np.minimum(np.minimum(delta_min / 2, q), q_max - q)
    s = np.clip(q + h * rng.uniform(-1.0, 1.0, size=shape), 0.0, q_max)
    return float(s) if s.ndim == 0 else s


def evolve(real: ChannelRealization, rng: np.random.Generator) -> ChannelRealization:
    """Next coherence interval: fresh Rayleigh taps, everything else kept.

    Static channels (``cp.dynamic`` false) are returned unchanged.  With
    ``fading_memory = r > 0`` the taps follow ``r * old + sqrt(1 - r**2) * new``,
    which keeps their marginal law; ``r = 0`` is independent block fading.
    """
    if not real.cp.dynamic:
        return real
    r = real.cp.fading_memory
    out = real.copy()
    for name in ("link_taps", "intf_taps"):
        old = getattr(real, name)
        fresh = draw_taps(real.cp, rng, old.shape[:-1])
        setattr(out, name, fresh if r == 0 else r * old + np.sqrt(1 - r * r) * fresh)
    out.epoch = real.epoch + 1
    return out


def geometry_csv(geom: Geometry) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["kind", "index", "x", "y"])
    for kind, pts in (("tx", geom.tx), ("rx", geom.rx), ("interferer", geom.interferers)):
        for i, (x, y) in enumerate(pts):
            w.writerow([kind, i, repr(float(x)), repr(float(y))])
    w.writerow(["jammer", 0, repr(float(geom.jammer[0])), repr(float(geom.jammer[1]))])
    return buf.getvalue()


def matrix_csv(q) -> str:
    """One row per user, one column per resource."""
    m = np.asarray(getattr(q, "values", q))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["user"] + [f"r{a}" for a in range(m.shape[1])])
    for n, row in enumerate(m):
        w.writerow([n] + [repr(float(v)) for v in row])
    return buf.getvalue()


@dataclass
class Network:
    """A drawn network: geometry, current realization and its rate matrix."""

    realization: ChannelRealization
    q: UtilityMatrix = field(init=False)
    _optimum: tuple | None = field(default=None, init=False, repr=False)

    def __post_init__(self):
        self.q = qos_matrix(self.realization)

    @property
    def optimum(self) -> tuple[np.ndarray, float]:
        """Optimal profile and welfare of the current matrix (cached)."""
        if self._optimum is None:
            self._optimum = hungarian(self.q.values)
        return self._optimum

    @property
    def w_star(self) -> float:
        return self.optimum[1]

    def step(self, rng: np.random.Generator) -> bool:
        """Advance one coherence interval; returns whether Q changed."""
        nxt = evolve(self.realization, rng)
        if nxt is self.realization:
            return False
        self.realization = nxt
        old = self.q.values
        self.q = qos_matrix(nxt)
        self._optimum = None
        return not np.array_equal(old, self.q.values)


def draw_network(params: ProtocolParams, cp: ChannelParams, rng: np.random.Generator) -> Network:
    geom = place_nodes(params, cp, rng)
    return Network(realize_channel(geom, params, cp, rng))

"""Experiment runner: flat YAML configuration, seeded parallel batches and
CSV output.

Usage::

    spectrum-mac run config.yaml --out results --experiment efficiency_cdf

Every CSV starts with ``#`` metadata lines (seed, config hash, experiment)
followed by a header row.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .allocators import greedy_stable, random_allocation
from .channel import ChannelParams, draw_network, geometry_csv, matrix_csv
from .core import ContractViolation, ProtocolParams
from .engine import EpochSchedule, RunLog, SetupConfig, efficiency, run_exponential, run_fixed

EXPERIMENTS = ("regret", "efficiency_cdf", "sample_path")
POLICIES = ("proposed", "greedy", "random")

# Keys owned by the harness itself; everything else maps onto a parameter class.
_RUN_KEYS = {
    "experiment": str,
    "n_networks": int,
    "seed": int,
    "workers": int,
    "csv_stride": int,
    "dump_matrices": bool,
}
_RUN_DEFAULTS = {
    "experiment": "efficiency_cdf",
    "n_networks": 50,
    "seed": 0,
    "workers": 0,
    "csv_stride": 1,
    "dump_matrices": False,
}
# ProtocolParams fields set elsewhere: the seed comes from ``seed``.
_PROTOCOL_SKIP = {"rng_seed"}
# ChannelParams fields tied to the protocol's rate grid.
_CHANNEL_SKIP = {"rate_step", "max_rate"}
_SETUP_PREFIX = "setup_"

PRESETS: dict[str, dict] = {
    "setup-table": {},
    "steady-table": {"mode": "fixed", "t1": 50, "t2_budget": 200, "max_iterations": 4, "epoch_slots": 5000},
    "steady-text": {"mode": "fixed", "t1": 4, "t2_budget": 48, "max_iterations": 4, "epoch_slots": 5000},
    "regret-table": {
        "experiment": "regret", "n_networks": 1, "n_users": 32, "n_channels": 8, "mode": "exponential",
        "n_epochs": 6, "t1": 4000, "t2_budget": 12000, "max_iterations": 400, "t3_base": 16000,
        "b_star": 256.0, "eps_init": 1 / 32, "eps_final": 1 / 32, "zeta": 1.0, "i_max": 400, "csv_stride": 100,
    },
    "efficiency-400": {"n_networks": 400},
    "regret-desk": {
        "experiment": "regret", "n_networks": 20, "n_users": 8, "n_channels": 4, "mode": "exponential",
        "n_epochs": 6, "t1": 4000, "t2_budget": 100000, "max_iterations": 4000, "t3_base": 20000,
        "b_star": 256.0, "eps_init": 1 / 32, "eps_final": 1 / 32, "zeta": 1.0, "i_max": 4000,
    },
}


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending key."""


def _fields(cls, skip=()):
    return {f.name: f for f in dataclasses.fields(cls) if f.name not in skip and not f.name.startswith("_")}


def _schema() -> dict[str, tuple[str, type]]:
    """Flat key -> (section, expected type)."""
    out: dict[str, tuple[str, type]] = {}
    sections = (
        ("protocol", ProtocolParams, _PROTOCOL_SKIP, ""),
        ("channel", ChannelParams, _CHANNEL_SKIP, ""),
        ("schedule", EpochSchedule, (), ""),
        ("setup", SetupConfig, (), _SETUP_PREFIX),
    )
    for section, cls, skip, prefix in sections:
        defaults = cls()
        for name in _fields(cls, skip):
            out[prefix + name] = (section, type(getattr(defaults, name)))
    for k, t in _RUN_KEYS.items():
        out[k] = ("run", t)
    return out


SCHEMA = _schema()


def _coerce(key: str, value, expected: type):
    if expected is bool:
        if isinstance(value, bool):
            return value
    elif expected is int:
        if isinstance(value, (int, np.integer)) and not isinstance(value, bool):
            return int(value)
        if isinstance(value, float) and value.is_integer():
            return int(value)
    elif expected is float:
        if isinstance(value, (int, float, np.integer, np.floating)) and not isinstance(value, bool):
            return float(value)
    elif expected is str:
        if isinstance(value, str):
            return value
    raise ConfigError(f"{key}: expected {expected.__name__}, got {value!r}")


@dataclass
class Config:
    protocol: ProtocolParams = field(default_factory=ProtocolParams)
    channel: ChannelParams = field(default_factory=ChannelParams)
    schedule: EpochSchedule = field(default_factory=EpochSchedule)
    setup: SetupConfig = field(default_factory=SetupConfig)
    experiment: str = "efficiency_cdf"
    n_networks: int = 50
    seed: int = 0
    workers: int = 0
    csv_stride: int = 1
    dump_matrices: bool = False

    def to_flat(self) -> dict:
        out = {}
        for key, (section, _) in SCHEMA.items():
            if section == "run":
                out[key] = getattr(self, key)
            elif section == "setup":
                out[key] = getattr(self.setup, key[len(_SETUP_PREFIX):])
            else:
                out[key] = getattr(getattr(self, section), key)
        return dict(sorted(out.items()))

    @property
    def digest(self) -> str:
        return hashlib.sha256(dump(self).encode()).hexdigest()


def normalize(raw: dict | None) -> dict:
    """Defaults filled in and values coerced; raises ``ConfigError``."""
    raw = dict(raw or {})
    bad = sorted(set(raw) - set(SCHEMA) - {"n_slots_per_channel"})
    if bad:
        raise ConfigError(f"{bad[0]}: unknown key")
    m = raw.pop("n_slots_per_channel", None)
    flat = Config().to_flat()
    for k, v in raw.items():
        flat[k] = _coerce(k, v, SCHEMA[k][1])
    if m is not None:
        m = _coerce("n_slots_per_channel", m, int)
        if m * flat["n_channels"] != flat["n_users"]:
            raise ConfigError("n_slots_per_channel: must equal n_users / n_channels")
    return flat


def from_flat(flat: dict) -> Config:
    flat = normalize(flat)
    parts: dict[str, dict] = {"protocol": {}, "channel": {}, "schedule": {}, "setup": {}, "run": {}}
    for k, v in flat.items():
        section = SCHEMA[k][0]
        parts[section][k[len(_SETUP_PREFIX):] if section == "setup" else k] = v
    run = parts["run"]
    if run["experiment"] not in EXPERIMENTS:
        raise ConfigError(f"experiment: expected one of {', '.join(EXPERIMENTS)}, got {run['experiment']!r}")
    if run["n_networks"] < 1:
        raise ConfigError("n_networks: must be >= 1")
    if not 0 <= run["seed"] < 2**64:
        raise ConfigError("seed: expected an unsigned 64-bit integer")
    if run["workers"] < 0 or run["csv_stride"] < 1:
        raise ConfigError("workers: must be >= 0; csv_stride: must be >= 1")
    try:
        protocol = ProtocolParams(**parts["protocol"], rng_seed=run["seed"])
        channel = ChannelParams(**parts["channel"], rate_step=protocol.delta_min, max_rate=protocol.q_max)
        channel.check(protocol)
        schedule = EpochSchedule(**parts["schedule"])
        setup = SetupConfig(**parts["setup"])
    except ContractViolation as exc:
        raise ConfigError(str(exc)) from exc
    return Config(protocol, channel, schedule, setup, **run)


def load_config(path: str | os.PathLike | None = None, preset: str | None = None, **overrides) -> Config:
    """Read a flat YAML mapping (an empty file means all defaults).

    ``preset`` values are applied first, then the file, then ``overrides``.
    """
    raw: dict = {}
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"preset: expected one of {', '.join(PRESETS)}, got {preset!r}")
        raw.update(PRESETS[preset])
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"config: cannot read {path}: {exc.strerror}") from exc
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"config: not valid YAML ({exc})") from exc
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise ConfigError("config: top level must be a key-value mapping")
        raw.update(data)
    raw.update({k: v for k, v in overrides.items() if v is not None})
    return from_flat(raw)


def dump(config: Config) -> str:
    return yaml.safe_dump(config.to_flat(), sort_keys=True)


def aggregate_cdf(values) -> list[tuple[float, float]]:
    """Empirical CDF: values in stable ascending order with fractions ``i/n``."""
    v = np.asarray(list(values), dtype=np.float64)
    if v.size == 0:
        raise ValueError("cannot build a CDF from no values")
    order = np.argsort(v, kind="stable")
    n = v.size
    return [(float(v[i]), (r + 1) / n) for r, i in enumerate(order)]


# --- running -----------------------------------------------------------------

def _policy(name: str, params: ProtocolParams):
    if name == "proposed":
        return None
    if name == "greedy":
        return lambda q_hat, rng: greedy_stable(q_hat)
    if name == "random":
        return lambda q_hat, rng: random_allocation(params, rng)
    raise ValueError(f"unknown policy {name!r}")


def simulate(config: Config, seed_seq: np.random.SeedSequence, policy: str = "proposed"):
    """One network under one policy.  Returns (network, RunLog).

    The seed sequence is split into network, protocol and channel-evolution
    streams, so all policies see the same network and channel path.
    """
    net_ss, proto_ss, chan_ss = seed_seq.spawn(3)
    p = config.protocol
    network = draw_network(p, config.channel, np.random.default_rng(net_ss))
    rng = np.random.default_rng(proto_ss)
    allocator = _policy(policy, p)
    if config.schedule.mode == "exponential":
        log = run_exponential(p, network, config.schedule, rng, allocator=allocator)
    else:
        log = run_fixed(p, network, config.setup, config.schedule, rng,
                        channel_rng=np.random.default_rng(chan_ss), allocator=allocator)
    return network, log


@dataclass
class NetworkResult:
    index: int
    ok: bool
    error: str = ""
    efficiency: dict = field(default_factory=dict)  # policy -> per-epoch array
    regret_csv: str = ""
    epoch_rows: list = field(default_factory=list)
    geometry_csv: str = ""
    matrix_csv: str = ""


def _regret_rows(log: RunLog, stride: int) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["slot", "epoch", "phase", "welfare", "w_star", "cumulative_regret"])
    total = 0.0
    for s in log.segments:
        cum = total + np.cumsum(s.w_star - s.welfare)
        keep = np.flatnonzero((np.arange(s.start, s.stop) % stride == 0) | (np.arange(s.start, s.stop) == s.stop - 1))
        for i in keep:
            w.writerow([s.start + int(i), s.epoch, s.phase, repr(float(s.welfare[i])), repr(s.w_star),
                        repr(float(cum[i]))])
        if s.length:
            total = float(cum[-1])
    return buf.getvalue()


def _epoch_rows(log: RunLog) -> list:
    eff = efficiency(log)
    ends = log.epoch_ends()
    cum = 0.0
    regret_at = {}
    expl = {}
    for epoch, phase, r in log.phase_regret():
        cum += r
        regret_at[epoch] = cum
        if phase == "exploitation":
            expl[epoch] = expl.get(epoch, 0.0) + r
    rows = []
    for k, rec in enumerate(log.epochs):
        rows.append([rec.epoch, int(ends[k]), repr(float(eff[k])), repr(rec.w_star), rec.auction_iterations,
                     rec.auction_slots, rec.t3, int(rec.truncated), int(rec.fallback),
                     repr(float(regret_at[rec.epoch])), repr(float(expl.get(rec.epoch, 0.0)))])
    return rows


EPOCH_HEADER = ["epoch", "end_slot", "efficiency", "w_star", "auction_iterations", "auction_slots",
                "exploitation_slots", "truncated", "fallback", "cumulative_regret", "exploitation_regret"]


def run_network(config: Config, index: int) -> NetworkResult:
    """Everything the chosen experiment needs from network ``index``."""
    ss = np.random.SeedSequence(config.seed).spawn(index + 1)[index]
    res = NetworkResult(index, ok=True)
    try:
        policies = POLICIES if config.experiment == "efficiency_cdf" else ("proposed",)
        for pol in policies:
            network, log = simulate(config, ss, pol)
            res.efficiency[pol] = efficiency(log)
            if pol == "proposed":
                res.epoch_rows = _epoch_rows(log)
                if config.experiment == "regret":
                    res.regret_csv = _regret_rows(log, config.csv_stride)
                if config.dump_matrices:
                    res.geometry_csv = geometry_csv(network.realization.geometry)
                    res.matrix_csv = matrix_csv(network.q)
    except Exception as exc:  # recorded per network; the batch goes on
        res.ok = False
        res.error = f"{type(exc).__name__}: {exc}"
    return res


def _run_one(args):
    flat, index = args
    return run_network(from_flat(flat), index)


def run_batch(config: Config, workers: int | None = None) -> list[NetworkResult]:
    """All networks of the batch, ordered by network index."""
    n = config.n_networks
    workers = config.workers if workers is None else workers
    if workers == 0:
        workers = min(n, os.cpu_count() or 1)
    if workers <= 1 or n == 1:
        return [run_network(config, i) for i in range(n)]
    flat = config.to_flat()
    with ProcessPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(_run_one, [(flat, i) for i in range(n)]))
    return sorted(results, key=lambda r: r.index)


def _header(config: Config) -> str:
    return (f"# seed: {config.seed}\n# config_sha256: {config.digest}\n"
            f"# experiment: {config.experiment}\n")


def _write(path: Path, config: Config, body: str) -> Path:
    path.write_text(_header(config) + body, encoding="utf-8")
    return path


def _table(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def run_experiment(config: Config, out_dir: str | os.PathLike = "results",
                   workers: int | None = None) -> tuple[list[Path], list[NetworkResult]]:
    """Run the configured experiment and write its CSV files.

    Returns the written paths and the per-network results (failed networks
    carry ``ok=False`` and an error message).
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    results = run_batch(config, workers)
    written: list[Path] = []
    status = [[r.index, "ok" if r.ok else "error", r.error] for r in results]
    written.append(_write(out / "networks.csv", config, _table(["network", "status", "error"], status)))
    good = [r for r in results if r.ok]

    if config.experiment == "regret":
        for r in good:
            written.append(_write(out / f"regret_net{r.index}.csv", config, r.regret_csv))
        rows = [[r.index] + row for r in good for row in r.epoch_rows]
        written.append(_write(out / "regret_epochs.csv", config, _table(["network"] + EPOCH_HEADER, rows)))
    elif config.experiment == "efficiency_cdf":
        terminal = {pol: [float(r.efficiency[pol][-1]) for r in good] for pol in POLICIES}
        rows = [[r.index] + [repr(float(r.efficiency[pol][-1])) for pol in POLICIES] for r in good]
        written.append(_write(out / "efficiency_networks.csv", config, _table(["network", *POLICIES], rows)))
        for pol in POLICIES:
            if terminal[pol]:
                cdf = [[repr(v), repr(f)] for v, f in aggregate_cdf(terminal[pol])]
                written.append(_write(out / f"efficiency_cdf_{pol}.csv", config,
                                      _table(["efficiency", "cumulative_fraction"], cdf)))
    else:
        for r in good:
            written.append(_write(out / f"sample_path_net{r.index}.csv", config, _table(EPOCH_HEADER, r.epoch_rows)))

    if config.dump_matrices:
        for r in good:
            written.append(_write(out / f"geometry_net{r.index}.csv", config, r.geometry_csv))
            written.append(_write(out / f"utility_net{r.index}.csv", config, r.matrix_csv))
    return written, results


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="spectrum-mac", description="Distributed OFDMA MAC simulator")
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run an experiment from a config file")
    run.add_argument("config", help="flat YAML config (may be empty)")
    run.add_argument("--out", default="results", help="output directory")
    run.add_argument("--seed", type=int)
    run.add_argument("--experiment", choices=EXPERIMENTS)
    run.add_argument("--networks", type=int, dest="n_networks")
    run.add_argument("--preset", choices=sorted(PRESETS))
    run.add_argument("--workers", type=int)
    run.add_argument("--dump-matrices", action="store_true", default=None,
                     help="also write geometry and utility-matrix CSVs")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config, preset=args.preset, seed=args.seed, experiment=args.experiment,
                             n_networks=args.n_networks, workers=args.workers, dump_matrices=args.dump_matrices)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    written, results = run_experiment(config, args.out)
    failed = [r for r in results if not r.ok]
    for p in written:
        print(p)
    if failed:
        for r in failed:
            print(f"network {r.index} failed: {r.error}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

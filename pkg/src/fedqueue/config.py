"""Experiment configuration: defaults, INI-style loading, validation.

The file format is sectioned plain-text key=value; key strings follow the
controlled-experiment configuration table verbatim (per-client vectors are
comma-joined, kwargs blocks look like ``{a=1.0}``).  Parsing is fail-closed:
unknown sections or keys raise a ConfigError naming the offender and, when
loading from a file, its line number.  An empty file yields the defaults.
"""
from __future__ import annotations

import configparser
import io
from dataclasses import dataclass, field, fields, replace
from pathlib import Path

import numpy as np

__all__ = ["ConfigError", "ExperimentConfig", "default_config", "load_config",
           "loads_config", "save_config", "dumps_config", "set_key", "get_key",
           "ALGOS"]

ALGOS = ("fedqueue", "fedavg", "fedasync", "fedbuff", "fedcompass")


class ConfigError(ValueError):
    pass


@dataclass
class WorkloadConfig:
    dataset: str = "synthetic"        # synthetic | quadratic
    partition: str = "non-iid"        # iid | non-iid
    data_alpha: float = 0.5           # Dirichlet concentration for non-iid
    model: str = "linear"             # linear | mlp
    loss_name: str = "CELoss"
    dim: int = 32
    classes: int = 10
    train_size: int = 4000
    test_size: int = 2000
    class_sep: float = 3.0
    noise: float = 1.0
    quad_sigma: float = 0.0           # stochastic-gradient noise scale (quadratic)
    quad_spread: float = 1.0          # offset heterogeneity (quadratic)
    quad_lmax: float = 4.0            # largest curvature eigenvalue (quadratic)


@dataclass
class ProtocolConfig:
    seed: int = 42
    num_clients: int = 4
    num_rounds: int = 50
    batch_size: int = 64
    optimizer: str = "sgd"
    local_steps: int = 100
    algo: str = "fedqueue"


@dataclass
class FedQueueConfig:
    broadcast_when: str = "next_round"    # immediate | next_round
    delay_mode: str = "simulate"          # simulate (sleep is out of scope)
    t_sync: float = 10.0
    q_init: float = 2.0
    gamma: float = 0.2
    delta: float = 2.0
    alpha: float = 0.5
    warmup_steps: int = 10
    sim_queue: str = "lognormal"          # fixed | lognormal
    queue_fixed: tuple = (0.5, 1.5, 2.4, 6.0)
    queue_means: tuple = (1.5, 2.5, 3.5, 4.5)
    queue_rho: float = 0.4
    slowdown: tuple = (1.0, 1.0, 1.0, 1.0)
    staleness_mode: str = "harmonic"      # harmonic | exp
    staleness_beta: float = 0.5
    admission_horizon: str = "horizon"    # horizon | all
    client_weight_mode: str = "equal"     # equal | data_size
    lr_base: float = 0.003
    e_floor: int = 1
    throughput: tuple = (10.0, 10.0, 10.0, 10.0)   # profiled c_k, steps/second
    queue_mean_mode: str = "median"       # median | arithmetic


@dataclass
class AsyncConfig:
    num_local_steps: int = 155
    staleness_fn: str = "polynomial"      # constant | polynomial | hinge
    staleness_fn_kwargs: dict = field(default_factory=lambda: {"a": 1.0})
    alpha: float = 0.5                    # server mixing factor
    optimize_memory: bool = True          # accepted for compatibility; inert here


@dataclass
class FedBuffConfig:
    k: int = 3                            # buffer size before aggregation


@dataclass
class CompassConfig:
    staleness_fn: str = "polynomial"
    staleness_fn_kwargs: dict = field(default_factory=dict)
    alpha: float = 0.5
    max_local_steps: int = 200
    min_local_steps: int = 20
    speed_momentum: float = 0.6
    latest_time_factor: float = 1.1


@dataclass
class FedAvgConfig:
    num_local_steps: tuple = (67, 155, 147, 15)


@dataclass
class AblationConfig:
    use_ewma: bool = True
    use_staleness_decay: bool = True
    use_inverse_lr: bool = True


@dataclass
class ExperimentConfig:
    workload: WorkloadConfig = field(default_factory=WorkloadConfig)
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    fedqueue: FedQueueConfig = field(default_factory=FedQueueConfig)
    fedasync: AsyncConfig = field(default_factory=AsyncConfig)
    fedbuff: FedBuffConfig = field(default_factory=FedBuffConfig)
    compass: CompassConfig = field(default_factory=CompassConfig)
    fedavg: FedAvgConfig = field(default_factory=FedAvgConfig)
    ablation: AblationConfig = field(default_factory=AblationConfig)

    def copy(self) -> "ExperimentConfig":
        return replace(
            self,
            workload=replace(self.workload),
            protocol=replace(self.protocol),
            fedqueue=replace(self.fedqueue),
            fedasync=replace(self.fedasync,
                             staleness_fn_kwargs=dict(self.fedasync.staleness_fn_kwargs)),
            fedbuff=replace(self.fedbuff),
            compass=replace(self.compass,
                            staleness_fn_kwargs=dict(self.compass.staleness_fn_kwargs)),
            fedavg=replace(self.fedavg),
            ablation=replace(self.ablation),
        )

    def flat(self) -> dict:
        out = {}
        for section, key, spec in _iter_keys():
            out[f"{section}.{key}"] = _render(spec.kind, get_key(self, f"{section}.{key}"))
        return out


# ---------------------------------------------------------------------------
# key registry: (section, file key) -> (attr path, kind)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class _KeySpec:
    attr: str
    kind: str      # int | float | bool | str | floats | ints | kwargs


_SCHEMA: dict[str, dict[str, _KeySpec]] = {
    "workload": {
        "dataset": _KeySpec("workload.dataset", "str"),
        "partition": _KeySpec("workload.partition", "str"),
        "data.alpha": _KeySpec("workload.data_alpha", "float"),
        "model": _KeySpec("workload.model", "str"),
        "loss.name": _KeySpec("workload.loss_name", "str"),
        "data.dim": _KeySpec("workload.dim", "int"),
        "data.classes": _KeySpec("workload.classes", "int"),
        "data.train_size": _KeySpec("workload.train_size", "int"),
        "data.test_size": _KeySpec("workload.test_size", "int"),
        "data.class_sep": _KeySpec("workload.class_sep", "float"),
        "data.noise": _KeySpec("workload.noise", "float"),
        "quad.sigma": _KeySpec("workload.quad_sigma", "float"),
        "quad.spread": _KeySpec("workload.quad_spread", "float"),
        "quad.lmax": _KeySpec("workload.quad_lmax", "float"),
    },
    "protocol": {
        "seed": _KeySpec("protocol.seed", "int"),
        "num_clients": _KeySpec("protocol.num_clients", "int"),
        "num_rounds": _KeySpec("protocol.num_rounds", "int"),
        "batch_size": _KeySpec("protocol.batch_size", "int"),
        "optimizer": _KeySpec("protocol.optimizer", "str"),
        "local_steps": _KeySpec("protocol.local_steps", "int"),
        "algo.name": _KeySpec("protocol.algo", "str"),
    },
    "fedqueue": {
        "broadcast_when": _KeySpec("fedqueue.broadcast_when", "str"),
        "delay_mode": _KeySpec("fedqueue.delay_mode", "str"),
        "Tsync": _KeySpec("fedqueue.t_sync", "float"),
        "q_init": _KeySpec("fedqueue.q_init", "float"),
        "gamma": _KeySpec("fedqueue.gamma", "float"),
        "delta": _KeySpec("fedqueue.delta", "float"),
        "alpha": _KeySpec("fedqueue.alpha", "float"),
        "warmup_steps": _KeySpec("fedqueue.warmup_steps", "int"),
        "sim_queue": _KeySpec("fedqueue.sim_queue", "str"),
        "queue_fixed": _KeySpec("fedqueue.queue_fixed", "floats"),
        "queue_means": _KeySpec("fedqueue.queue_means", "floats"),
        "queue_rho": _KeySpec("fedqueue.queue_rho", "float"),
        "slowdown": _KeySpec("fedqueue.slowdown", "floats"),
        "staleness_mode": _KeySpec("fedqueue.staleness_mode", "str"),
        "staleness_beta": _KeySpec("fedqueue.staleness_beta", "float"),
        "admission_horizon": _KeySpec("fedqueue.admission_horizon", "str"),
        "client_weight_mode": _KeySpec("fedqueue.client_weight_mode", "str"),
        "lr_base": _KeySpec("fedqueue.lr_base", "float"),
        "E_floor": _KeySpec("fedqueue.e_floor", "int"),
        "throughput": _KeySpec("fedqueue.throughput", "floats"),
        "queue_mean_mode": _KeySpec("fedqueue.queue_mean_mode", "str"),
    },
    "async": {
        "num_local_steps": _KeySpec("fedasync.num_local_steps", "int"),
        "staleness_fn": _KeySpec("fedasync.staleness_fn", "str"),
        "staleness_fn_kwargs": _KeySpec("fedasync.staleness_fn_kwargs", "kwargs"),
        "alpha": _KeySpec("fedasync.alpha", "float"),
        "optimize_memory": _KeySpec("fedasync.optimize_memory", "bool"),
    },
    "fedbuff": {
        "K": _KeySpec("fedbuff.k", "int"),
    },
    "compass": {
        "staleness_fn": _KeySpec("compass.staleness_fn", "str"),
        "staleness_fn_kwargs": _KeySpec("compass.staleness_fn_kwargs", "kwargs"),
        "alpha": _KeySpec("compass.alpha", "float"),
        "max_local_steps": _KeySpec("compass.max_local_steps", "int"),
        "min_local_steps": _KeySpec("compass.min_local_steps", "int"),
        "speed_momentum": _KeySpec("compass.speed_momentum", "float"),
        "latest_time_factor": _KeySpec("compass.latest_time_factor", "float"),
    },
    "fedavg": {
        "num_local_steps": _KeySpec("fedavg.num_local_steps", "ints"),
    },
    "ablation": {
        "use_ewma": _KeySpec("ablation.use_ewma", "bool"),
        "use_staleness_decay": _KeySpec("ablation.use_staleness_decay", "bool"),
        "use_inverse_lr": _KeySpec("ablation.use_inverse_lr", "bool"),
    },
}

# unqualified sweep-axis keys resolve through these sections, in order
_AXIS_SECTIONS = ("fedqueue", "protocol", "workload", "ablation")


def _iter_keys():
    for section, keys in _SCHEMA.items():
        for key, spec in keys.items():
            yield section, key, spec


def _parse(kind: str, raw: str, where: str):
    raw = raw.strip()
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(raw)
        if kind == "floats":
            return tuple(float(p) for p in raw.split(",") if p.strip() != "")
        if kind == "ints":
            return tuple(int(p) for p in raw.split(",") if p.strip() != "")
        if kind == "kwargs":
            body = raw.strip().removeprefix("{").removesuffix("}").strip()
            if not body:
                return {}
            out = {}
            for pair in body.split(","):
                name, _, val = pair.partition("=")
                if not _:
                    raise ValueError(pair)
                out[name.strip()] = float(val)
            return out
        return raw
    except ValueError as exc:
        raise ConfigError(f"cannot parse {where} value {raw!r} as {kind}") from exc


def _render(kind: str, value) -> str:
    if kind in ("floats", "ints"):
        return ",".join(repr(v) if kind == "floats" else str(v) for v in value)
    if kind == "kwargs":
        return "{" + ",".join(f"{k}={v}" for k, v in value.items()) + "}"
    if kind == "bool":
        return "true" if value else "false"
    return str(value)


def get_key(cfg: ExperimentConfig, dotted_attr_or_key: str):
    """Fetch by attr path ('fedqueue.t_sync') or file key ('fedqueue.Tsync')."""
    section, _, rest = dotted_attr_or_key.partition(".")
    spec = _SCHEMA.get(section, {}).get(rest)
    attr = spec.attr if spec else dotted_attr_or_key
    obj = cfg
    for part in attr.split("."):
        obj = getattr(obj, part)
    return obj


def _set_attr(cfg: ExperimentConfig, attr: str, value) -> None:
    parts = attr.split(".")
    obj = cfg
    for part in parts[:-1]:
        obj = getattr(obj, part)
    setattr(obj, parts[-1], value)


def resolve_axis(key: str):
    """Map a sweep-axis key to (section, file key).

    Qualified names split on the first dot when the prefix是 a section;
    unqualified names search fedqueue, protocol, workload, ablation in order.
    """
    head, _, rest = key.partition(".")
    if head in _SCHEMA and rest in _SCHEMA[head]:
        return head, rest
    for section in _AXIS_SECTIONS:
        if key in _SCHEMA[section]:
            return section, key
    raise ConfigError(f"unknown config key: {key!r}")


def set_key(cfg: ExperimentConfig, key: str, value) -> None:
    """Set a config entry by axis key; string values are parsed per schema."""
    section, file_key = resolve_axis(key)
    spec = _SCHEMA[section][file_key]
    if isinstance(value, str):
        value = _parse(spec.kind, value, f"[{section}] {file_key}")
    elif spec.kind == "int":
        value = int(value)
    elif spec.kind == "float":
        value = float(value)
    _set_attr(cfg, spec.attr, value)


def default_config() -> ExperimentConfig:
    return ExperimentConfig()


# ---------------------------------------------------------------------------
# load / save
# ---------------------------------------------------------------------------

def _find_line(text: str, needle: str) -> int | None:
    for i, line in enumerate(text.splitlines(), start=1):
        if line.strip().startswith(needle):
            return i
    return None


def loads_config(text: str, validate: bool = True) -> ExperimentConfig:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config parse error: {exc}") from exc
    cfg = default_config()
    for section in parser.sections():
        if section not in _SCHEMA:
            line = _find_line(text, f"[{section}]")
            raise ConfigError(f"unknown section [{section}]"
                              + (f" (line {line})" if line else ""))
        for key, raw in parser.items(section):
            spec = _SCHEMA[section].get(key)
            if spec is None:
                line = _find_line(text, key)
                raise ConfigError(f"unknown key {key!r} in section [{section}]"
                                  + (f" (line {line})" if line else ""))
            _set_attr(cfg, spec.attr, _parse(spec.kind, raw, f"[{section}] {key}"))
    if validate:
        validate_config(cfg)
    return cfg


def load_config(path, validate: bool = True) -> ExperimentConfig:
    text = Path(path).read_text()
    return loads_config(text, validate=validate)


def dumps_config(cfg: ExperimentConfig) -> str:
    buf = io.StringIO()
    for section, keys in _SCHEMA.items():
        buf.write(f"[{section}]\n")
        for key, spec in keys.items():
            buf.write(f"{key} = {_render(spec.kind, get_key(cfg, spec.attr))}\n")
        buf.write("\n")
    return buf.getvalue()


def save_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(dumps_config(cfg))


# ---------------------------------------------------------------------------
# validation
# ---------------------------------------------------------------------------

def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


def validate_config(cfg: ExperimentConfig) -> ExperimentConfig:
    p, fq, wl = cfg.protocol, cfg.fedqueue, cfg.workload
    _require(p.num_clients >= 1, "num_clients must be >= 1")
    _require(p.num_rounds >= 1, "num_rounds must be >= 1")
    _require(p.batch_size >= 1, "batch_size must be >= 1")
    _require(p.algo in ALGOS, f"algo.name must be one of {ALGOS}, got {p.algo!r}")
    _require(p.optimizer == "sgd", "optimizer: only sgd is supported")
    _require(wl.dataset in ("synthetic", "quadratic"),
             f"dataset must be synthetic or quadratic, got {wl.dataset!r}")
    _require(wl.partition in ("iid", "non-iid"),
             f"partition must be iid or non-iid, got {wl.partition!r}")
    _require(wl.model in ("linear", "mlp"), f"model must be linear or mlp")
    _require(wl.loss_name == "CELoss", "loss.name: only CELoss is supported")
    _require(wl.data_alpha > 0, "data.alpha must be > 0")
    _require(wl.dim >= 1 and wl.classes >= 2, "data.dim >= 1 and data.classes >= 2")
    _require(wl.train_size >= p.num_clients, "data.train_size must cover all clients")
    _require(wl.noise > 0 and wl.class_sep > 0, "data.noise and data.class_sep must be > 0")
    _require(wl.quad_sigma >= 0 and wl.quad_spread >= 0 and wl.quad_lmax >= 1,
             "quadratic workload constants out of range")
    _require(fq.t_sync > 0, "Tsync must be > 0")
    _require(fq.q_init >= 0, "q_init must be >= 0")
    _require(fq.gamma >= 0, "gamma must be >= 0")
    _require(fq.delta >= 0, "delta must be >= 0")
    _require(0.0 < fq.alpha <= 1.0, "alpha must be in (0, 1]")
    _require(fq.warmup_steps >= 0, "warmup_steps must be >= 0")
    _require(fq.sim_queue in ("fixed", "lognormal"),
             f"sim_queue must be fixed or lognormal, got {fq.sim_queue!r}")
    _require(fq.queue_rho >= 0, "queue_rho must be >= 0")
    _require(fq.staleness_mode in ("harmonic", "exp"),
             f"staleness_mode must be harmonic or exp, got {fq.staleness_mode!r}")
    _require(fq.staleness_beta >= 0, "staleness_beta must be >= 0")
    _require(fq.admission_horizon in ("horizon", "all"),
             f"admission_horizon must be horizon or all, got {fq.admission_horizon!r}")
    _require(fq.client_weight_mode in ("equal", "data_size", "data size"),
             "client_weight_mode must be equal or data_size")
    if fq.client_weight_mode == "data size":
        fq.client_weight_mode = "data_size"
    _require(fq.lr_base > 0, "lr_base must be > 0")
    _require(fq.e_floor >= 0, "E_floor must be >= 0")
    _require(fq.broadcast_when in ("immediate", "next_round"),
             "broadcast_when must be immediate or next_round")
    _require(fq.delay_mode in ("simulate", "sleep"),
             "delay_mode must be simulate or sleep")
    _require(fq.delay_mode == "simulate",
             "delay_mode=sleep is not supported by the simulator (use simulate)")
    _require(fq.queue_mean_mode in ("median", "arithmetic"),
             "queue_mean_mode must be median or arithmetic")
    k = p.num_clients
    for name, vec in (("queue_fixed", fq.queue_fixed),
                      ("queue_means", fq.queue_means),
                      ("slowdown", fq.slowdown),
                      ("throughput", fq.throughput),
                      ("fedavg.num_local_steps", cfg.fedavg.num_local_steps)):
        _require(len(vec) == k,
                 f"{name} has length {len(vec)} but num_clients = {k}")
    _require(all(v >= 0 for v in fq.queue_fixed), "queue_fixed must be >= 0")
    _require(all(v > 0 for v in fq.queue_means), "queue_means must be > 0")
    _require(all(v >= 0 for v in fq.slowdown), "slowdown must be >= 0")
    _require(all(v > 0 for v in fq.throughput), "throughput must be > 0")
    az, cp = cfg.fedasync, cfg.compass
    _require(az.num_local_steps >= 1, "async num_local_steps must be >= 1")
    _require(0.0 < az.alpha <= 1.0, "async alpha must be in (0, 1]")
    for name, fn in (("async", az.staleness_fn), ("compass", cp.staleness_fn)):
        _require(fn in ("constant", "polynomial", "hinge"),
                 f"{name} staleness_fn must be constant, polynomial, or hinge")
    _require(cfg.fedbuff.k >= 1, "fedbuff K must be >= 1")
    _require(1 <= cp.min_local_steps <= cp.max_local_steps,
             "compass requires 1 <= min_local_steps <= max_local_steps")
    _require(0.0 <= cp.speed_momentum < 1.0, "speed_momentum must be in [0, 1)")
    _require(cp.latest_time_factor >= 1.0, "latest_time_factor must be >= 1")
    return cfg

"""Experiment configuration: defaults, YAML/JSON parsing and validation."""
from __future__ import annotations

import copy
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .demand import DAY, DEFAULT_ZIPF_SET

STATIONARY_LEARNERS = ("distributed", "agent_sbs", "agent_user", "edge")
LEARNERS = (
    *STATIONARY_LEARNERS,
    *(f"{b}_v2" for b in STATIONARY_LEARNERS),
    *(f"{b}_eps" for b in STATIONARY_LEARNERS),
    "modified_distributed", "modified_edge",
    "modified_distributed_eps", "modified_edge_eps",
    "lfu", "lru", "cucb", "oracle_ca", "oracle_greedy", "random",
)


class ConfigError(ValueError):
    pass


@dataclass
class TopologyConfig:
    num_sbs: int = 6
    num_users: int = 50
    comm_radius: float = 50.0
    region: float = 100.0
    placement_seed: int | None = None
    sbs_positions: list | None = None
    user_positions: list | None = None


@dataclass
class RadioConfig:
    power_w: float = 1.0
    noise_w: float = 1.0
    path_loss_exponent: float = 4.0
    bandwidth_hz: float = 10e6
    core_delay: float | None = None
    core_factor: float = 3.0


@dataclass
class WorkloadConfig:
    mode: str = "zipf"
    num_files: int = 100
    zipf_set: list = field(default_factory=lambda: list(DEFAULT_ZIPF_SET))
    zipf_param: float | None = None
    same_preference: bool = False
    trace_path: str | None = None
    trace_format: str = "auto"
    slot_length_s: int = DAY
    user_cap: int | None = None
    mobility: str = "static"


@dataclass
class OracleConfig:
    restarts: int = 300


@dataclass
class CAConfig:
    max_rounds: int = 20


@dataclass
class BruteForceConfig:
    cap: int = 10**6


@dataclass
class ExperimentConfig:
    topology: TopologyConfig = field(default_factory=TopologyConfig)
    radio: RadioConfig = field(default_factory=RadioConfig)
    workload: WorkloadConfig = field(default_factory=WorkloadConfig)
    learner: str = "edge_v2"
    epsilon: float = 0.05
    log_variant: str = "natural"
    cache_size: int = 10
    T_total: int | None = None
    replications: int = 30
    seed: int = 0
    metric_mode: str | None = None
    randomize: str = "placement_and_requests"
    oracle: OracleConfig = field(default_factory=OracleConfig)
    ca: CAConfig = field(default_factory=CAConfig)
    bruteforce: BruteForceConfig = field(default_factory=BruteForceConfig)

    @property
    def resolved_metric_mode(self) -> str:
        if self.metric_mode:
            return self.metric_mode
        return "per_slot" if self.workload.mode == "zipf" else "per_request"

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "ExperimentConfig":
        """Copy with dotted-path overrides, e.g. ``replace(**{"topology.comm_radius": 30})``."""
        d = self.to_dict()
        for key, value in changes.items():
            set_path(d, key, value)
        return from_dict(d)


ALIASES = {"S": "cache_size", "M": "topology.num_sbs", "U": "topology.num_users",
           "F": "workload.num_files", "l_c": "topology.comm_radius"}

_CHOICES = {
    "workload.mode": ("zipf", "trace"),
    "workload.mobility": ("static", "per_slot"),
    "workload.trace_format": ("auto", "movielens", "csv", "slotted"),
    "log_variant": ("natural", "log2"),
    "metric_mode": (None, "per_slot", "per_request"),
    "randomize": ("requests_only", "placement_and_requests"),
    "learner": LEARNERS,
}


def set_path(d: dict, key: str, value):
    key = ALIASES.get(key, key)
    parts = key.split(".")
    node = d
    for i, p in enumerate(parts[:-1]):
        if p not in node or not isinstance(node[p], dict):
            raise ConfigError(f"unknown config key {'.'.join(parts[:i + 1])!r}")
        node = node[p]
    if parts[-1] not in node:
        raise ConfigError(f"unknown config key {key!r}")
    node[parts[-1]] = value


def _build(cls, data, path):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path or '<root>'}: expected a mapping, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        name = key
        if path == "" and key in ALIASES and "." not in ALIASES[key]:
            name = ALIASES[key]
        if name not in fields:
            raise ConfigError(f"unknown config key {path + key!r}")
        ftype = fields[name].default_factory if fields[name].default_factory is not dataclasses.MISSING else None
        if ftype is not None and dataclasses.is_dataclass(ftype):
            kwargs[name] = _build(ftype, value, f"{path}{name}.")
        else:
            # YAML 1.1 reads "1e7" as a string
            if isinstance(value, str) and "float" in str(fields[name].type):
                try:
                    value = float(value)
                except ValueError:
                    pass
            kwargs[name] = value
    return cls(**kwargs)


def from_dict(data) -> ExperimentConfig:
    data = copy.deepcopy(data) if data else {}
    if isinstance(data, dict):
        for alias in [k for k in data if k in ALIASES and "." in ALIASES[k]]:
            value = data.pop(alias)
            section, name = ALIASES[alias].split(".")
            data.setdefault(section, {})[name] = value
    cfg = _build(ExperimentConfig, data, "")
    validate(cfg)
    return cfg


def _num(path, value, kind=float, lo=None, strict=False, allow_none=False):
    if value is None and allow_none:
        return
    if isinstance(value, bool) or not isinstance(value, (int, float)) or (kind is int and not isinstance(value, int)):
        raise ConfigError(f"{path}: expected {kind.__name__}, got {value!r}")
    if lo is not None and (value <= lo if strict else value < lo):
        raise ConfigError(f"{path}: must be {'>' if strict else '>='} {lo}, got {value!r}")


def validate(cfg: ExperimentConfig):
    t, r, w = cfg.topology, cfg.radio, cfg.workload
    _num("topology.num_sbs", t.num_sbs, int, 1)
    _num("topology.num_users", t.num_users, int, 1)
    _num("topology.comm_radius", t.comm_radius, float, 0, strict=True)
    _num("topology.region", t.region, float, 0, strict=True)
    _num("topology.placement_seed", t.placement_seed, int, 0, allow_none=True)
    for name in ("sbs_positions", "user_positions"):
        pts = getattr(t, name)
        if pts is not None:
            if not isinstance(pts, list) or not all(isinstance(p, (list, tuple)) and len(p) == 2 for p in pts):
                raise ConfigError(f"topology.{name}: expected a list of [x, y] pairs")
    if t.sbs_positions is not None and len(t.sbs_positions) != t.num_sbs:
        raise ConfigError("topology.sbs_positions: length must equal topology.num_sbs")
    if t.user_positions is not None and len(t.user_positions) != t.num_users:
        raise ConfigError("topology.user_positions: length must equal topology.num_users")
    _num("radio.power_w", r.power_w, float, 0, strict=True)
    _num("radio.noise_w", r.noise_w, float, 0, strict=True)
    _num("radio.bandwidth_hz", r.bandwidth_hz, float, 0, strict=True)
    _num("radio.path_loss_exponent", r.path_loss_exponent, float, 2, strict=True)
    _num("radio.core_delay", r.core_delay, float, 0, strict=True, allow_none=True)
    _num("radio.core_factor", r.core_factor, float, 1, strict=True)
    _num("workload.num_files", w.num_files, int, 1)
    if not isinstance(w.zipf_set, list) or not w.zipf_set:
        raise ConfigError("workload.zipf_set: expected a non-empty list")
    for i, z in enumerate(w.zipf_set):
        _num(f"workload.zipf_set[{i}]", z, float, 0)
    _num("workload.zipf_param", w.zipf_param, float, 0, allow_none=True)
    _num("workload.slot_length_s", w.slot_length_s, int, 1)
    _num("workload.user_cap", w.user_cap, int, 1, allow_none=True)
    if w.mode == "trace" and not w.trace_path:
        raise ConfigError("workload.trace_path: required when workload.mode is 'trace'")
    _num("cache_size", cfg.cache_size, int, 0)
    _num("T_total", cfg.T_total, int, 1, allow_none=True)
    _num("replications", cfg.replications, int, 1)
    _num("seed", cfg.seed, int, 0)
    _num("epsilon", cfg.epsilon, float, 0)
    if cfg.epsilon > 1:
        raise ConfigError(f"epsilon: must lie in [0, 1], got {cfg.epsilon!r}")
    _num("oracle.restarts", cfg.oracle.restarts, int, 1)
    _num("ca.max_rounds", cfg.ca.max_rounds, int, 1)
    _num("bruteforce.cap", cfg.bruteforce.cap, int, 1)
    for key, choices in _CHOICES.items():
        node = cfg
        for p in key.split("."):
            node = getattr(node, p)
        if node not in choices:
            raise ConfigError(f"{key}: {node!r} not one of {[c for c in choices if c is not None]}")
    if w.mode == "zipf" and cfg.cache_size > w.num_files:
        raise ConfigError("cache_size: must not exceed workload.num_files")
    if w.mobility == "per_slot" and cfg.learner in (
            *STATIONARY_LEARNERS, *(f"{b}_v2" for b in STATIONARY_LEARNERS),
            *(f"{b}_eps" for b in STATIONARY_LEARNERS)):
        raise ConfigError("workload.mobility: per_slot needs a modified or baseline learner")


def parse_config(path) -> ExperimentConfig:
    """Load a YAML (or JSON) config; missing keys take the defaults."""
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    try:
        return from_dict(data)
    except ConfigError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    except TypeError as exc:
        raise ConfigError(f"{path}: {exc}") from None


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True)

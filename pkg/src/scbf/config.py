"""Experiment configuration and its YAML file format.

A config file describes one shared setup (data, network, training,
seed) and a list of methods to run on it::

    methods:
      - scbf
      - {method: scbf_prune, alpha: 0.1}
      - fedavg
    alpha: 0.1                 # default for method entries
    selection_mode: positive   # positive | negative
    theta: 0.1                 # required iff a *_prune method is listed
    theta_total: 0.47
    global_loops: 20
    n_clients: 5
    seed: 0
    out_dir: results
    n_jobs: 1                  # threads for client-parallel local training
    weighted_average: false
    net:
      layer_sizes: [32, 16, 1]
    hyper:
      local_epochs: 1
      batch_size: 32
      learning_rate: 0.1
    data:
      synthetic: {n_rows: 2000, n_features: 50, sparsity: 0.1}
      # or: csv: path/to/file.csv
      label_column: label
      stratify: false

Every ``methods`` entry is either a method name or a mapping holding
``method`` plus any of ``alpha``, ``selection_mode``, ``theta``,
``theta_total`` to override the top-level defaults for that entry.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from .exceptions import ConfigError

__all__ = [
    "METHODS",
    "PRUNING_METHODS",
    "SELECTION_MODES",
    "DataSource",
    "HyperConfig",
    "ExperimentConfig",
    "derive_seed",
    "parse_config",
    "load_config",
    "dump_config",
    "method_labels",
]

METHODS = ("scbf", "scbf_prune", "fedavg", "fedavg_prune")
PRUNING_METHODS = ("scbf_prune", "fedavg_prune")
SELECTION_MODES = ("positive", "negative")

# stream tags for derive_seed
DATA_STREAM = 0
SPLIT_STREAM = 1
INIT_STREAM = 2
CLIENT_STREAM = 3


def derive_seed(master: int, *keys: int) -> int:
    """Stable 64-bit sub-seed for ``(master, *keys)``.

    Uses numpy's ``SeedSequence`` hashing, which is platform independent
    and versioned, so adding a client never perturbs another client's
    stream.
    """
    seq = np.random.SeedSequence(int(master), spawn_key=tuple(int(k) for k in keys))
    return int(seq.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class DataSource:
    csv: Optional[str] = None
    label_column: str = "label"
    n_rows: int = 2000
    n_features: int = 50
    sparsity: float = 0.1
    seed: Optional[int] = None
    stratify: bool = False

    @property
    def synthetic(self) -> bool:
        return self.csv is None


@dataclass(frozen=True)
class HyperConfig:
    local_epochs: int = 1
    batch_size: int = 32
    learning_rate: float = 0.1


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce one federated run."""

    method: str = "scbf"
    alpha: float = 0.1
    selection_mode: str = "positive"
    theta: Optional[float] = None
    theta_total: Optional[float] = None
    global_loops: int = 20
    n_clients: int = 5
    layer_sizes: tuple[int, ...] = (32, 16, 1)
    hyper: HyperConfig = field(default_factory=HyperConfig)
    data: DataSource = field(default_factory=DataSource)
    seed: int = 0
    out_dir: str = "results"
    n_jobs: int = 1
    weighted_average: bool = False

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(int(m) for m in self.layer_sizes))
        self.validate()

    @property
    def prunes(self) -> bool:
        return self.method in PRUNING_METHODS

    @property
    def channel_based(self) -> bool:
        return self.method.startswith("scbf")

    def validate(self):
        def bad(name, msg):
            raise ConfigError(f"{name}: {msg}")

        if self.method not in METHODS:
            bad("method", f"must be one of {list(METHODS)}, got {self.method!r}")
        if not isinstance(self.alpha, (int, float)) or not 0.0 < self.alpha <= 1.0:
            bad("alpha", f"must be in (0, 1], got {self.alpha!r}")
        if self.selection_mode not in SELECTION_MODES:
            bad("selection_mode", f"must be one of {list(SELECTION_MODES)}, got {self.selection_mode!r}")
        if self.prunes:
            for name in ("theta", "theta_total"):
                value = getattr(self, name)
                if value is None:
                    bad(name, f"required for method {self.method!r}")
                if not isinstance(value, (int, float)) or not 0.0 < value < 1.0:
                    bad(name, f"must be in (0, 1), got {value!r}")
        else:
            for name in ("theta", "theta_total"):
                if getattr(self, name) is not None:
                    bad(name, f"only allowed for pruning methods, not {self.method!r}")
        if not isinstance(self.global_loops, int) or self.global_loops < 0:
            bad("global_loops", f"must be a non-negative integer, got {self.global_loops!r}")
        if not isinstance(self.n_clients, int) or self.n_clients < 1:
            bad("n_clients", f"must be a positive integer, got {self.n_clients!r}")
        if not self.layer_sizes or any(m < 1 for m in self.layer_sizes) or self.layer_sizes[-1] != 1:
            bad("net.layer_sizes", f"must be positive widths ending in 1, got {list(self.layer_sizes)}")
        if not isinstance(self.n_jobs, int) or self.n_jobs < 1:
            bad("n_jobs", f"must be a positive integer, got {self.n_jobs!r}")
        h = self.hyper
        if not isinstance(h.local_epochs, int) or h.local_epochs < 0:
            bad("hyper.local_epochs", f"must be a non-negative integer, got {h.local_epochs!r}")
        if not isinstance(h.batch_size, int) or h.batch_size < 1:
            bad("hyper.batch_size", f"must be a positive integer, got {h.batch_size!r}")
        if not isinstance(h.learning_rate, (int, float)) or not h.learning_rate > 0:
            bad("hyper.learning_rate", f"must be > 0, got {h.learning_rate!r}")
        d = self.data
        if d.synthetic:
            if not isinstance(d.n_rows, int) or d.n_rows < self.n_clients + 2:
                bad("data.synthetic.n_rows", f"must be an integer >= n_clients + 2, got {d.n_rows!r}")
            if not isinstance(d.n_features, int) or d.n_features < 1:
                bad("data.synthetic.n_features", f"must be a positive integer, got {d.n_features!r}")
            if not 0.0 < d.sparsity < 1.0:
                bad("data.synthetic.sparsity", f"must be in (0, 1), got {d.sparsity!r}")

    def data_seed(self) -> int:
        return self.data.seed if self.data.seed is not None else derive_seed(self.seed, DATA_STREAM)

    def split_seed(self) -> int:
        return derive_seed(self.seed, SPLIT_STREAM)

    def init_seed(self) -> int:
        return derive_seed(self.seed, INIT_STREAM)

    def client_seed(self, client_id: int, loop: int) -> int:
        return derive_seed(self.seed, CLIENT_STREAM, client_id, loop)


_SHARED = ("global_loops", "n_clients", "seed", "out_dir", "n_jobs", "weighted_average")
_PER_METHOD = ("alpha", "selection_mode", "theta", "theta_total")
_TOP_LEVEL = {"methods", "method", "net", "hyper", "data", *_SHARED, *_PER_METHOD}


def _check_keys(mapping, allowed, where):
    if not isinstance(mapping, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(mapping).__name__}")
    unknown = set(mapping) - set(allowed)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")


def _data_source(raw) -> DataSource:
    raw = raw or {}
    _check_keys(raw, {"synthetic", "csv", "label_column", "stratify"}, "data")
    if "csv" in raw and "synthetic" in raw:
        raise ConfigError("data: give either csv or synthetic, not both")
    kwargs = {k: raw[k] for k in ("label_column", "stratify") if k in raw}
    if "csv" in raw:
        kwargs["csv"] = str(raw["csv"])
    else:
        synth = raw.get("synthetic") or {}
        _check_keys(synth, {"n_rows", "n_features", "sparsity", "seed"}, "data.synthetic")
        kwargs.update(synth)
    return DataSource(**kwargs)


def parse_config(raw: dict, base_dir=None) -> list[ExperimentConfig]:
    """Build one ``ExperimentConfig`` per listed method from a parsed mapping.

    Relative csv paths are resolved against ``base_dir`` when given.
    """
    _check_keys(raw, _TOP_LEVEL, "config")
    if "methods" in raw and "method" in raw:
        raise ConfigError("config: give either methods or method, not both")
    entries = raw.get("methods", raw.get("method", "scbf"))
    if isinstance(entries, (str, dict)):
        entries = [entries]
    if not entries:
        raise ConfigError("methods: at least one method is required")

    net = raw.get("net") or {}
    _check_keys(net, {"layer_sizes"}, "net")
    hyper = raw.get("hyper") or {}
    _check_keys(hyper, {f.name for f in fields(HyperConfig)}, "hyper")
    data = _data_source(raw.get("data"))
    if data.csv is not None and base_dir is not None and not Path(data.csv).is_absolute():
        data = replace(data, csv=str(Path(base_dir) / data.csv))

    shared = {k: raw[k] for k in _SHARED if k in raw}
    if "layer_sizes" in net:
        shared["layer_sizes"] = tuple(net["layer_sizes"])
    defaults = {k: raw[k] for k in _PER_METHOD if k in raw}

    configs = []
    for i, entry in enumerate(entries):
        if isinstance(entry, str):
            entry = {"method": entry}
        _check_keys(entry, {"method", *_PER_METHOD}, f"methods[{i}]")
        if "method" not in entry:
            raise ConfigError(f"methods[{i}]: missing method name")
        per = {**defaults, **entry}
        if per["method"] not in PRUNING_METHODS and "theta" not in entry and "theta_total" not in entry:
            # shared pruning defaults do not apply to non-pruning methods
            per.pop("theta", None)
            per.pop("theta_total", None)
        try:
            configs.append(
                ExperimentConfig(**shared, **per, hyper=HyperConfig(**hyper), data=data)
            )
        except TypeError as exc:
            raise ConfigError(f"methods[{i}]: {exc}") from None
    if not any(c.prunes for c in configs) and any(k in raw for k in ("theta", "theta_total")):
        raise ConfigError("theta: only allowed when a pruning method is listed")
    return configs


def load_config(path) -> list[ExperimentConfig]:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML: {exc}") from None
    return parse_config(raw or {}, base_dir=path.parent)


def to_mapping(configs: list[ExperimentConfig]) -> dict:
    """Inverse of :func:`parse_config` for configs sharing a setup."""
    first = configs[0]
    for c in configs[1:]:
        for name in (*_SHARED, "layer_sizes", "hyper", "data"):
            if getattr(c, name) != getattr(first, name):
                raise ConfigError(f"{name}: methods in one file must share this setting")

    out = {
        "methods": [
            {
                "method": c.method,
                "alpha": c.alpha,
                "selection_mode": c.selection_mode,
                **({"theta": c.theta, "theta_total": c.theta_total} if c.prunes else {}),
            }
            for c in configs
        ]
    }
    out.update({k: getattr(first, k) for k in _SHARED})
    out["net"] = {"layer_sizes": list(first.layer_sizes)}
    out["hyper"] = asdict(first.hyper)
    d = first.data
    data = {"label_column": d.label_column, "stratify": d.stratify}
    if d.synthetic:
        synth = {"n_rows": d.n_rows, "n_features": d.n_features, "sparsity": d.sparsity}
        if d.seed is not None:
            synth["seed"] = d.seed
        data["synthetic"] = synth
    else:
        data["csv"] = d.csv
    out["data"] = data
    return out


def dump_config(configs: list[ExperimentConfig]) -> str:
    return yaml.safe_dump(to_mapping(configs), sort_keys=False)


def method_labels(configs: list[ExperimentConfig]) -> list[str]:
    """Unique display names: the method, suffixed on repeats."""
    seen: dict[str, int] = {}
    labels = []
    for c in configs:
        seen[c.method] = seen.get(c.method, 0) + 1
        labels.append(c.method if seen[c.method] == 1 else f"{c.method}_{seen[c.method]}")
    return labels

"""Experiment configuration: schema, defaults, validation, (de)serialization.

Configs are nested key/value YAML. Unknown keys, type mismatches and
constraint violations are rejected with the offending field path. Defaults
reproduce the standard synthetic setup: 20 clients on a regular-(20, 10)
graph, 20% malicious under attack, 300 rounds at learning rate 6e-4,
alpha=0.5, gamma=0.3, kappa=1.
"""

import hashlib
import json
from dataclasses import asdict, dataclass, field

import yaml

from . import attacks
from .aggregation import AggregatorSpec, LEARN, RULES


class ConfigError(ValueError):
    pass


TOPOLOGY_KINDS = ("regular", "complete", "ring", "erdos_renyi", "small_world", "file")
DATASET_KINDS = ("regression", "classification")
PARTITION_SCHEMES = ("iid", "grouped", "slices")
MODES = ("global", "per_client", "per_round")
AGGREGATION_MODES = ("mixing", "self_inclusive")
INIT_MODES = ("zeros", "random")

# pool used when clients draw their rule per client or per round
HETEROGENEOUS_POOL = ("krum", "trim_mean", "median", "fltrust", "ubar", "scclip")


@dataclass
class TopologyConfig:
    kind: str = "regular"
    degree: int = 10          # regular
    p_edge: float = 0.5       # erdos_renyi
    k: int = 4                # small_world lattice neighbors
    p_rewire: float = 0.3     # small_world
    path: str = ""            # file


@dataclass
class DatasetConfig:
    kind: str = "regression"
    examples: int = 10_000
    dim: int = 100
    noise_std: float = 0.6    # regression label noise
    weight_std: float = 5.0
    classes: int = 10
    cluster_sep: float = 4.0


@dataclass
class PartitionConfig:
    scheme: str = "iid"
    p: float = 0.8
    classes_per_client: int = 3


@dataclass
class AttackConfig:
    kind: str = "none"
    variance: float = 200.0
    feature_variance: float = 1000.0
    label_bias: float = 5.0
    epsilon: float = 1.0
    trigger_value: float = 1.0
    target_label: int = 0
    scale: float = 0.0

    def to_spec(self) -> attacks.AttackSpec:
        return attacks.AttackSpec(
            kind=self.kind,
            variance=self.variance,
            feature_variance=self.feature_variance,
            label_bias=self.label_bias,
            epsilon=self.epsilon,
            trigger_value=self.trigger_value,
            target_label=self.target_label,
            scale=self.scale,
        )


@dataclass
class AggregatorConfig:
    rule: str = "balance"
    gamma: float = 0.3
    kappa: float = 1.0
    malicious_count_mode: str = "fraction"

    def to_spec(self, malicious_fraction: float) -> AggregatorSpec:
        return AggregatorSpec(
            rule=self.rule,
            gamma=self.gamma,
            kappa=self.kappa,
            malicious_count_mode=self.malicious_count_mode,
            malicious_fraction=malicious_fraction,
        )


@dataclass
class LocalConfig:
    iterations: int = 1
    batch_size: int = 0  # 0 = full shard


@dataclass
class ExperimentConfig:
    seed: int = 0
    rounds: int = 300
    clients: int = 20
    malicious_fraction: float = 0.2
    learning_rate: float = 6e-4
    alpha: float = 0.5
    alpha_mode: str = "global"
    aggregator: AggregatorConfig = field(default_factory=AggregatorConfig)
    aggregator_mode: str = "global"
    aggregation: str = "mixing"
    topology: TopologyConfig = field(default_factory=TopologyConfig)
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    partition: PartitionConfig = field(default_factory=PartitionConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    local: LocalConfig = field(default_factory=LocalConfig)
    dropout: float = 0.0
    init: str = "zeros"
    init_std: float = 0.1
    eval_every: int = 0       # per-round test metrics cadence; 0 = final only
    checkpoint_every: int = 0
    checkpoint_dir: str = ""

    def validate(self):
        req = _check
        req("rounds", self.rounds >= 1, "must be >= 1")
        req("clients", self.clients >= 1, "must be >= 1")
        req("malicious_fraction", 0.0 <= self.malicious_fraction < 1.0, "must lie in [0, 1)")
        req("learning_rate", self.learning_rate > 0, "must be positive")
        req("alpha", 0.0 <= self.alpha <= 1.0, "must lie in [0, 1]")
        req("alpha_mode", self.alpha_mode in MODES, f"must be one of {MODES}")
        req("aggregator_mode", self.aggregator_mode in MODES, f"must be one of {MODES}")
        req("aggregation", self.aggregation in AGGREGATION_MODES, f"must be one of {AGGREGATION_MODES}")
        req("aggregator.rule", self.aggregator.rule in RULES, f"must be one of {RULES}")
        req("aggregator.gamma", self.aggregator.gamma > 0, "must be positive")
        req("aggregator.kappa", self.aggregator.kappa > 0, "must be positive")
        req(
            "aggregator.malicious_count_mode",
            self.aggregator.malicious_count_mode in ("fraction", "oracle"),
            "must be 'fraction' or 'oracle'",
        )
        req("topology.kind", self.topology.kind in TOPOLOGY_KINDS, f"must be one of {TOPOLOGY_KINDS}")
        req("dataset.kind", self.dataset.kind in DATASET_KINDS, f"must be one of {DATASET_KINDS}")
        req("dataset.examples", self.dataset.examples >= 2, "must be >= 2")
        req("dataset.dim", self.dataset.dim >= 1, "must be >= 1")
        req("dataset.noise_std", self.dataset.noise_std >= 0, "must be >= 0")
        req("partition.scheme", self.partition.scheme in PARTITION_SCHEMES, f"must be one of {PARTITION_SCHEMES}")
        req("partition.p", 0.0 <= self.partition.p <= 1.0, "must lie in [0, 1]")
        req("attack.kind", self.attack.kind in attacks.KINDS, f"must be one of {attacks.KINDS}")
        req("local.iterations", self.local.iterations >= 1, "must be >= 1")
        req("local.batch_size", self.local.batch_size >= 0, "must be >= 0 (0 = full shard)")
        req("dropout", 0.0 <= self.dropout <= 1.0, "must lie in [0, 1]")
        req("init", self.init in INIT_MODES, f"must be one of {INIT_MODES}")
        req("eval_every", self.eval_every >= 0, "must be >= 0")
        req("checkpoint_every", self.checkpoint_every >= 0, "must be >= 0")
        if self.attack.kind == attacks.BACKDOOR and self.dataset.kind == "regression":
            raise ConfigError("attack.kind: backdoor is undefined for regression models")
        if self.partition.scheme != "iid" and self.dataset.kind != "classification":
            raise ConfigError("partition.scheme: non-IID schemes need a classification dataset")
        if self.checkpoint_every > 0 and not self.checkpoint_dir:
            raise ConfigError("checkpoint_dir: required when checkpoint_every > 0")
        if self.attack.kind != "none" and self.malicious_fraction == 0.0:
            raise ConfigError("malicious_fraction: must be positive when an attack is configured")
        return self


def _check(path, ok, message):
    if not ok:
        raise ConfigError(f"{path}: {message}")


_SECTIONS = {
    "topology": TopologyConfig,
    "dataset": DatasetConfig,
    "partition": PartitionConfig,
    "attack": AttackConfig,
    "aggregator": AggregatorConfig,
    "local": LocalConfig,
}


def _coerce(path, value, template):
    if isinstance(template, bool):
        raise ConfigError(f"{path}: unsupported field type")
    if isinstance(template, int) and not isinstance(template, bool):
        if isinstance(value, bool) or not isinstance(value, (int, float)) or value != int(value):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
        return int(value)
    if isinstance(template, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    if isinstance(template, str):
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
        return value
    raise ConfigError(f"{path}: unsupported field type")


def config_from_dict(raw: dict) -> ExperimentConfig:
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError("top level: expected a mapping")
    cfg = ExperimentConfig()
    for key, value in raw.items():
        if key in _SECTIONS:
            section = getattr(cfg, key)
            if value is None:
                continue
            if not isinstance(value, dict):
                raise ConfigError(f"{key}: expected a mapping")
            for sub, sub_value in value.items():
                if not hasattr(section, sub):
                    raise ConfigError(f"{key}.{sub}: unknown key")
                default = getattr(type(section)(), sub)
                setattr(section, sub, _coerce(f"{key}.{sub}", sub_value, default))
        elif hasattr(cfg, key):
            default = getattr(ExperimentConfig(), key)
            setattr(cfg, key, _coerce(key, value, default))
        else:
            raise ConfigError(f"{key}: unknown key")
    return cfg.validate()


def config_to_dict(cfg: ExperimentConfig) -> dict:
    return asdict(cfg)


def parse_config(path) -> ExperimentConfig:
    """Load and validate a YAML config file."""
    try:
        with open(path) as fh:
            raw = yaml.safe_load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: invalid YAML ({exc})")
    return config_from_dict(raw)


def serialize_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(config_to_dict(cfg), sort_keys=True)


def config_hash(cfg: ExperimentConfig) -> str:
    """Stable short hash identifying a config (seed excluded)."""
    payload = config_to_dict(cfg)
    payload.pop("seed", None)
    canon = json.dumps(payload, sort_keys=True)
    return hashlib.sha256(canon.encode()).hexdigest()[:12]

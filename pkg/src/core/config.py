import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

from ..services.fed_trainer import RecordLevel, TrainConfig
from . import constants as const
from .errors import ConfigError
from .utils import load_config_file

logger = logging.getLogger(__name__)

RADIUS_MODES = ("running", "window")


def parse_int_list(value: Any, name: str) -> list[int]:
    """Accept 3, "0,1,2", "0-4" or a JSON list."""
    if isinstance(value, int) and not isinstance(value, bool):
        return [value]
    if isinstance(value, (list, tuple)):
        items = list(value)
    else:
        items = [part.strip() for part in str(value).split(",") if part.strip()]
    result: list[int] = []
    try:
        for item in items:
            if isinstance(item, str) and "-" in item.lstrip("-"):
                low, high = item.split("-", 1)
                result.extend(range(int(low), int(high) + 1))
            else:
                result.append(int(item))
    except ValueError:
        raise ConfigError(f"{name}: expected integers, got {value!r}") from None
    return result


@dataclass
class RunConfig:
    """Effective options for one command; every field has a constant default."""

    command: str = "train"
    # Data
    n: int = const.DEFAULT_N
    d: int = const.DEFAULT_D
    distribution: str = const.DEFAULT_DISTRIBUTION
    label_rule: str = const.DEFAULT_LABEL_RULE
    partition: str = const.DEFAULT_PARTITION
    test_size: int = const.DEFAULT_TEST_SIZE
    data: str | None = None
    partition_file: str | None = None
    # Training
    width: int = const.DEFAULT_WIDTH
    clients: int = const.DEFAULT_CLIENTS
    local_steps: int = const.DEFAULT_LOCAL_STEPS
    rounds: int | None = None  # None: from rounds_to_eps
    eta_local: float | None = None  # None: prescribed rate
    eta_global: float | None = None
    sigma: float = const.DEFAULT_SIGMA
    safety_c: float = const.DEFAULT_SAFETY_C
    eps: float = const.DEFAULT_EPS
    max_rounds: int = const.DEFAULT_MAX_ROUNDS
    record: str = const.DEFAULT_RECORD_LEVEL
    workers: int = const.DEFAULT_WORKERS
    seeds: list[int] = field(default_factory=lambda: list(const.DEFAULT_SEEDS))
    # Audits and reports
    audits: bool = True
    radius_mode: str = "running"
    decomposition_radius: str | None = None  # None: D; "measured" or a positive number
    delta: float = const.DEFAULT_DELTA
    generalization: bool = False
    mc_check: bool = False
    mc_samples: int = const.DEFAULT_MC_SAMPLES
    clients_list: list[int] = field(
        default_factory=lambda: list(const.DEFAULT_CLIENTS_LIST)
    )
    m_list: list[int] | None = None
    plot: bool = False
    # Locations
    out: str = const.DEFAULT_OUTPUT_DIR
    trace_dir: str | None = None
    config: str | None = None
    verbose: bool = False

    @property
    def partition_mode(self) -> tuple[str, float | None]:
        """("iid", None) or ("skewed", alpha)."""
        if self.partition == "iid":
            return "iid", None
        kind, _, alpha = self.partition.partition(":")
        if kind != "skewed" or not alpha:
            raise ConfigError(
                f"partition must be 'iid' or 'skewed:<alpha>', got {self.partition!r}"
            )
        try:
            value = float(alpha)
        except ValueError:
            raise ConfigError(f"invalid skew alpha {alpha!r}") from None
        if not value > 0:
            raise ConfigError(f"skew alpha must be positive, got {value}")
        return "skewed", value

    @property
    def audit_radius(self) -> float | str | None:
        """decomposition_radius as AuditContext takes it."""
        value = self.decomposition_radius
        if value is None or value == "measured":
            return value
        try:
            radius = float(value)
        except ValueError:
            raise ConfigError(
                f"decomposition_radius must be 'measured' or a number, got {value!r}"
            ) from None
        if not radius > 0:
            raise ConfigError(f"decomposition_radius must be positive, got {radius}")
        return radius

    @property
    def record_level(self) -> RecordLevel:
        return RecordLevel(self.record)

    @property
    def out_dir(self) -> Path:
        return Path(self.out)

    def seed_dir(self, seed: int) -> Path:
        return self.out_dir / f"seed-{seed}"

    def sweep_dir(self, clients: int, seed: int) -> Path:
        return self.out_dir / f"clients-{clients}" / f"seed-{seed}"

    def validate(self) -> "RunConfig":
        if not self.seeds:
            raise ConfigError("seeds list must not be empty")
        if any(s < 0 for s in self.seeds):
            raise ConfigError(f"seeds must be non-negative, got {self.seeds}")
        if len(set(self.seeds)) != len(self.seeds):
            raise ConfigError(f"seeds must be distinct, got {self.seeds}")
        for name in ("n", "width", "clients", "local_steps", "test_size", "workers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1, got {getattr(self, name)}")
        if self.d < const.MIN_INPUT_DIM:
            raise ConfigError(f"d must be at least {const.MIN_INPUT_DIM}, got {self.d}")
        if self.clients > self.n:
            raise ConfigError(f"clients ({self.clients}) cannot exceed n ({self.n})")
        if self.rounds is not None and self.rounds < 0:
            raise ConfigError(f"rounds must be non-negative, got {self.rounds}")
        if self.max_rounds < 0:
            raise ConfigError(f"max_rounds must be non-negative, got {self.max_rounds}")
        for name in ("eta_local", "eta_global"):
            value = getattr(self, name)
            if value is not None and not value > 0:
                raise ConfigError(f"{name} must be positive, got {value}")
        if not self.sigma > 0:
            raise ConfigError(f"sigma must be positive, got {self.sigma}")
        if not 0 < self.safety_c <= 1:
            raise ConfigError(f"safety_c must lie in (0, 1], got {self.safety_c}")
        if not 0 < self.eps <= 1:
            raise ConfigError(f"eps must lie in (0, 1], got {self.eps}")
        if not 0 < self.delta < 1:
            raise ConfigError(f"delta must lie in (0, 1), got {self.delta}")
        if self.mc_samples < 2:
            raise ConfigError(f"mc_samples must be at least 2, got {self.mc_samples}")
        if self.record not in {level.value for level in RecordLevel}:
            raise ConfigError(f"unknown record level {self.record!r}")
        if self.radius_mode not in RADIUS_MODES:
            raise ConfigError(f"radius_mode must be one of {RADIUS_MODES}")
        if self.distribution not in ("uniform-sphere", "two-cluster"):
            raise ConfigError(f"unknown distribution {self.distribution!r}")
        if self.label_rule not in ("linear-teacher", "cluster-sign"):
            raise ConfigError(f"unknown label rule {self.label_rule!r}")
        if not self.clients_list or any(c < 1 or c > self.n for c in self.clients_list):
            raise ConfigError(
                f"clients_list entries must lie in 1..n={self.n}, got {self.clients_list}"
            )
        if self.m_list is not None and any(m < 1 for m in self.m_list):
            raise ConfigError(f"m_list entries must be positive, got {self.m_list}")
        _ = self.partition_mode
        _ = self.audit_radius
        for name in ("data", "partition_file", "trace_dir"):
            value = getattr(self, name)
            if value is not None and not Path(value).exists():
                raise FileNotFoundError(f"{name} path does not exist: {value}")
        if self.partition_file is not None and self.data is None:
            raise ConfigError("partition_file needs data to be given as well")
        if self.command == "verify" and self.trace_dir is None:
            raise ConfigError("verify needs --trace-dir")
        return self

    def train_config(
        self, seed: int, eta_local: float, eta_global: float, rounds: int, **overrides
    ) -> TrainConfig:
        values = dict(
            num_clients=self.clients,
            local_steps=self.local_steps,
            rounds=rounds,
            eta_local=eta_local,
            eta_global=eta_global,
            width=self.width,
            sigma=self.sigma,
            seed=seed,
            record_level=self.record_level,
            workers=self.workers,
        )
        values.update(overrides)
        return TrainConfig(**values)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_mapping(cls, values: dict[str, Any]) -> "RunConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(values) - set(known))
        if unknown:
            raise ConfigError(f"unknown option(s): {', '.join(unknown)}")
        config = cls()
        for name, value in values.items():
            setattr(config, name, _coerce(name, value))
        return config

    @classmethod
    def from_args(cls, args) -> "RunConfig":
        """Merge defaults < config file < flags given on the command line."""
        values: dict[str, Any] = {}
        config_path = getattr(args, "config", None)
        if config_path:
            values.update(load_config_file(config_path))
            logger.info(f"Loaded config file {config_path}")
        for name, value in vars(args).items():
            if value is not None:
                values[name] = value
        return cls.from_mapping(values).validate()


_INT_LISTS = ("seeds", "clients_list", "m_list")
_FLOATS = ("eta_local", "eta_global", "sigma", "safety_c", "eps", "delta")
_INTS = (
    "n",
    "d",
    "width",
    "clients",
    "local_steps",
    "rounds",
    "test_size",
    "max_rounds",
    "workers",
    "mc_samples",
)
_BOOLS = ("audits", "generalization", "mc_check", "plot", "verbose")


def _coerce(name: str, value: Any) -> Any:
    if value is None:
        return None
    try:
        if name in _INT_LISTS:
            return parse_int_list(value, name)
        if name in _FLOATS:
            return float(value)
        if name in _INTS:
            if isinstance(value, float) and not value.is_integer():
                raise ValueError(value)
            return int(value)
        if name in _BOOLS:
            if isinstance(value, str):
                lowered = value.lower()
                if lowered not in ("true", "false", "1", "0", "yes", "no"):
                    raise ValueError(value)
                return lowered in ("true", "1", "yes")
            return bool(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name}: invalid value {value!r}") from None
    return str(value)

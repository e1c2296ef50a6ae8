"""Centralized access to run defaults with safe fallbacks.

Values come from ``config.py`` when available; built-in fallbacks keep the lab
usable if the config module is missing or incomplete. ``RunConfig`` is the
validated, immutable bundle every experiment receives.
"""
import dataclasses
import math
import os
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

from utils import (
    SchemaValidationError,
    content_hash,
    load_json_file,
    validate_against_schema,
)

DEFAULT_N_FALLBACK = 32
DEFAULT_M_FALLBACK = 160
DEFAULT_SIGMA_FLOOR_FALLBACK = 1e-6
THREADS_ENV_VAR_FALLBACK = "HALFSPACE_LAB_THREADS"
EXPERIMENT_IDS_FALLBACK: List[str] = [
    "EQUIV", "BILINEAR", "IBP", "QUAD", "DECOMP",
    "CARLESON", "RELLICH", "DOMAIN", "OPENNESS", "BLOCK-KATO",
]

try:  # noqa: SIM105 - explicitly prefer ImportError handling for clarity
    import config as user_config
except ImportError:
    user_config = None

DEFAULT_N: int = getattr(user_config, "DEFAULT_N", DEFAULT_N_FALLBACK)
DEFAULT_M: int = getattr(user_config, "DEFAULT_M", DEFAULT_M_FALLBACK)
DEFAULT_L: float = getattr(user_config, "DEFAULT_L", 2.0 * math.pi)
DEFAULT_SYSTEM_SIZE: int = getattr(user_config, "DEFAULT_SYSTEM_SIZE", 1)
DEFAULT_WHITNEY_C0: float = getattr(user_config, "DEFAULT_WHITNEY_C0", 0.5)
DEFAULT_WHITNEY_C1: float = getattr(user_config, "DEFAULT_WHITNEY_C1", 1.0)
DEFAULT_APERTURE: float = getattr(user_config, "DEFAULT_APERTURE", 1.0)
DEFAULT_SIGMA_FLOOR: float = getattr(
    user_config, "DEFAULT_SIGMA_FLOOR", DEFAULT_SIGMA_FLOOR_FALLBACK
)
DEFAULT_SEED: int = getattr(user_config, "DEFAULT_SEED", 0)
DEFAULT_TRIALS: int = getattr(user_config, "DEFAULT_TRIALS", 20)
DEFAULT_MAX_MODE: int = getattr(user_config, "DEFAULT_MAX_MODE", 4)
DEFAULT_COEFFICIENT: Dict[str, Any] = getattr(
    user_config, "DEFAULT_COEFFICIENT", {"kind": "identity"}
)
TOLERANCES: Dict[str, float] = getattr(user_config, "TOLERANCES", {})
EXPERIMENT_IDS: List[str] = getattr(user_config, "EXPERIMENT_IDS", EXPERIMENT_IDS_FALLBACK)
EXPERIMENT_STATEMENTS: Dict[str, str] = getattr(user_config, "EXPERIMENT_STATEMENTS", {})
COEFFICIENT_KINDS: List[str] = getattr(
    user_config, "COEFFICIENT_KINDS", ["identity", "constant", "hermitian", "block"]
)
THREADS_ENV_VAR: str = getattr(user_config, "THREADS_ENV_VAR", THREADS_ENV_VAR_FALLBACK)
CONFIG_SCHEMA_VERSION: int = getattr(user_config, "CONFIG_SCHEMA_VERSION", 1)
RUN_CONFIG_SCHEMA: Dict[str, Any] = getattr(
    user_config, "RUN_CONFIG_SCHEMA", {"schema": 1}
)
COEFFICIENT_FILE_SCHEMA: Dict[str, Any] = getattr(
    user_config, "COEFFICIENT_FILE_SCHEMA", {"schema": 1, "m": 1, "N": 8, "L": 1.0, "entries": []}
)
REPORT_FILE_SCHEMA: Dict[str, Any] = getattr(
    user_config, "REPORT_FILE_SCHEMA", {"id": "string", "constants": {}, "pass": True}
)


class ConfigError(ValueError):
    """Raised when a run configuration violates a module precondition."""


def thread_count() -> int:
    """Parallelism cap from the environment; 1 when unset or malformed."""
    raw = os.getenv(THREADS_ENV_VAR, "").strip()
    if not raw:
        return 1
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def tolerance(name: str, fallback: float) -> float:
    return float(TOLERANCES.get(name, fallback))


def _is_power_of_two(value: int) -> bool:
    return value > 0 and (value & (value - 1)) == 0


@dataclass(frozen=True)
class RunConfig:
    N: int = DEFAULT_N
    M: int = DEFAULT_M
    t_min: Optional[float] = None  # None: L/(8N)
    t_max: Optional[float] = None  # None: 16L
    L: float = DEFAULT_L
    m: int = DEFAULT_SYSTEM_SIZE
    c0: float = DEFAULT_WHITNEY_C0
    c1: float = DEFAULT_WHITNEY_C1
    aperture: float = DEFAULT_APERTURE
    sigma_floor: float = DEFAULT_SIGMA_FLOOR
    seed: int = DEFAULT_SEED
    trials: int = DEFAULT_TRIALS
    max_mode: int = DEFAULT_MAX_MODE
    refine: bool = True
    tolerances: Dict[str, float] = field(default_factory=lambda: dict(TOLERANCES))
    coefficient: Dict[str, Any] = field(default_factory=lambda: dict(DEFAULT_COEFFICIENT))
    experiments: List[str] = field(default_factory=lambda: list(EXPERIMENT_IDS))
    schema: int = CONFIG_SCHEMA_VERSION

    def __post_init__(self) -> None:
        self.validate()

    @property
    def resolved_t_min(self) -> float:
        return float(self.t_min) if self.t_min is not None else self.L / (8.0 * self.N)

    @property
    def resolved_t_max(self) -> float:
        return float(self.t_max) if self.t_max is not None else 16.0 * self.L

    def validate(self) -> None:
        if self.schema != CONFIG_SCHEMA_VERSION:
            raise ConfigError(f"Unsupported config schema {self.schema!r}")
        if not _is_power_of_two(int(self.N)) or self.N < 8:
            raise ConfigError(f"N must be a power of two >= 8, got {self.N}")
        if self.M < 2:
            raise ConfigError(f"M must be >= 2, got {self.M}")
        if not self.L > 0:
            raise ConfigError(f"L must be positive, got {self.L}")
        if self.m < 1:
            raise ConfigError(f"m must be >= 1, got {self.m}")
        if not 0.0 < self.resolved_t_min < self.resolved_t_max:
            raise ConfigError(
                f"Need 0 < t_min < t_max, got {self.resolved_t_min}, {self.resolved_t_max}"
            )
        if not 0.0 < self.c0 < 1.0:
            raise ConfigError(f"c0 must lie in (0, 1), got {self.c0}")
        if not (self.c1 > 0 and self.aperture > 0):
            raise ConfigError("c1 and aperture must be positive")
        if not self.sigma_floor > 0:
            raise ConfigError(f"sigma_floor must be positive, got {self.sigma_floor}")
        if self.trials < 1:
            raise ConfigError(f"trials must be >= 1, got {self.trials}")
        if not 1 <= self.max_mode <= self.N // 4:
            raise ConfigError(f"max_mode must lie in [1, N/4], got {self.max_mode}")
        unknown = [e for e in self.experiments if e not in EXPERIMENT_IDS]
        if unknown:
            raise ConfigError(f"Unknown experiment id(s): {', '.join(unknown)}")
        kind = self.coefficient.get("kind")
        if self.coefficient.get("path") is None and kind not in COEFFICIENT_KINDS:
            raise ConfigError(
                f"Unknown coefficient kind {kind!r}; allowed: {', '.join(COEFFICIENT_KINDS)}"
            )

    def tol(self, name: str, fallback: float) -> float:
        return float(self.tolerances.get(name, tolerance(name, fallback)))

    def to_dict(self) -> Dict[str, Any]:
        payload = dataclasses.asdict(self)
        payload["t_min"] = self.resolved_t_min
        payload["t_max"] = self.resolved_t_max
        return payload

    def config_hash(self) -> str:
        return content_hash(self.to_dict())

    def replace(self, **changes: Any) -> "RunConfig":
        return dataclasses.replace(self, **changes)

    def refined(self) -> "RunConfig":
        """Same continuum setup at (2N, 2M); explicit t-bounds are kept."""
        return dataclasses.replace(self, N=2 * self.N, M=2 * self.M)

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "RunConfig":
        try:
            validate_against_schema(RUN_CONFIG_SCHEMA, payload)
        except SchemaValidationError as exc:
            raise ConfigError(f"Malformed config document: {exc}") from exc
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(payload) - known)
        if unknown:
            raise ConfigError(f"Unknown config key(s): {', '.join(unknown)}")
        values = dict(payload)
        if "tolerances" in values:
            values["tolerances"] = {**TOLERANCES, **values["tolerances"]}
        if "coefficient" in values:
            values["coefficient"] = {**DEFAULT_COEFFICIENT, **values["coefficient"]}
        try:
            return cls(**values)
        except TypeError as exc:
            raise ConfigError(f"Invalid config values: {exc}") from exc


def load_run_config(path: Optional[str] = None, **overrides: Any) -> RunConfig:
    """Load a RunConfig from a JSON file (or defaults) and apply overrides."""
    payload: Dict[str, Any] = {}
    if path:
        try:
            loaded = load_json_file(path)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"Cannot read config file {path}: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError(f"Config file {path} must hold a JSON object")
        payload.update(loaded)
    payload.setdefault("schema", CONFIG_SCHEMA_VERSION)
    payload.setdefault("N", DEFAULT_N)
    payload.setdefault("M", DEFAULT_M)
    for key, value in overrides.items():
        if value is None:
            continue
        if key == "coefficient":
            payload["coefficient"] = {**payload.get("coefficient", {}), **value}
        else:
            payload[key] = value
    return RunConfig.from_dict(payload)

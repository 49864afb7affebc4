"""Scenario configuration and seeded random streams."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np

SCHEMA_VERSION = 1

RSMA = "RSMA"
SDMA = "SDMA"
PERFECT = "perfect"
PARTIAL = "partial"

# stream ids for np.random.SeedSequence spawn keys
_PURPOSES = {"channel": 0, "saa": 1, "eval": 2, "randomization": 3,
             "restart": 4}


class ConfigError(ValueError):
    """Invalid configuration; ``path`` names the offending field."""

    def __init__(self, path, message):
        super().__init__(f"{path}: {message}")
        self.path = path


def dbm_to_linear(dbm):
    return 10.0 ** (dbm / 10.0)


@dataclass(frozen=True)
class SystemConfig:
    n_tx: int = 4
    n_users: int = 2
    power_total: float = 100.0
    antenna_spacing: float = 0.5
    user_weights: tuple = (0.5, 0.5)
    qos_threshold: float = 1.0
    reg_lambda: float = 1e-9
    admm_penalty: float = 1.0
    admm_tolerance: float = 1e-2
    csit_exponent: float = 0.6
    channel_variances: tuple = (1.0, 1.0)
    saa_samples: int = 32
    access_mode: str = RSMA
    csit_mode: str = PARTIAL
    rng_seed: int = 2024
    # solver knobs
    max_admm_iters: int = 50
    ao_tolerance: float = 1e-4
    ao_max_iters: int = 100
    conic_tolerance: float = 1e-6
    randomizations: int = 200
    rank1_ratio: float = 1e-6
    v_power_constraint: str = "per_antenna_le"  # or "none"
    refine_steps: int = 200

    def __post_init__(self):
        object.__setattr__(self, "user_weights",
                           tuple(float(w) for w in self.user_weights))
        object.__setattr__(self, "channel_variances",
                           tuple(float(s) for s in self.channel_variances))
        self.validate()

    def validate(self):
        def check(ok, name, msg):
            if not ok:
                raise ConfigError(f"system.{name}", msg)

        check(int(self.n_tx) == self.n_tx and self.n_tx >= 1, "n_tx",
              "must be a positive integer")
        check(int(self.n_users) == self.n_users and self.n_users >= 1,
              "n_users", "must be a positive integer")
        check(self.power_total > 0, "power_total", "must be positive")
        check(self.antenna_spacing > 0, "antenna_spacing", "must be positive")
        check(len(self.user_weights) == self.n_users, "user_weights",
              f"needs {self.n_users} entries")
        check(all(w > 0 for w in self.user_weights), "user_weights",
              "entries must be positive")
        check(len(self.channel_variances) == self.n_users,
              "channel_variances", f"needs {self.n_users} entries")
        check(all(s > 0 for s in self.channel_variances),
              "channel_variances", "entries must be positive")
        check(self.qos_threshold >= 0, "qos_threshold", "must be >= 0")
        check(self.reg_lambda > 0, "reg_lambda", "must be positive")
        check(self.admm_penalty >= 0, "admm_penalty", "must be >= 0")
        check(self.admm_tolerance > 0, "admm_tolerance", "must be positive")
        check(self.csit_exponent >= 0, "csit_exponent", "must be >= 0")
        check(int(self.saa_samples) == self.saa_samples
              and self.saa_samples >= 1, "saa_samples", "must be >= 1")
        check(self.access_mode in (RSMA, SDMA), "access_mode",
              "must be RSMA or SDMA")
        check(self.csit_mode in (PERFECT, PARTIAL), "csit_mode",
              "must be perfect or partial")
        check(self.max_admm_iters >= 1, "max_admm_iters", "must be >= 1")
        check(self.v_power_constraint in ("per_antenna_le", "none"),
              "v_power_constraint", "must be per_antenna_le or none")

    @property
    def rsma(self) -> bool:
        return self.access_mode == RSMA

    @property
    def weights(self) -> np.ndarray:
        return np.asarray(self.user_weights)

    def error_variances(self) -> np.ndarray:
        """Per-user CSIT error power sigma_k^2 * Pt^(-csit_exponent)."""
        if self.csit_mode == PERFECT:
            return np.zeros(self.n_users)
        sig = np.asarray(self.channel_variances)
        return sig * self.power_total ** (-self.csit_exponent)

    def replace(self, **changes) -> "SystemConfig":
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True)
class BeampatternSpec:
    angles: np.ndarray
    desired: np.ndarray
    pattern_scale: float = 1.0

    def __post_init__(self):
        angles = np.asarray(self.angles, dtype=float)
        desired = np.asarray(self.desired, dtype=float)
        if angles.shape != desired.shape or angles.ndim != 1:
            raise ConfigError("beampattern", "angles/desired shape mismatch")
        if np.any(np.diff(angles) <= 0):
            raise ConfigError("beampattern.angles", "must be strictly increasing")
        if angles[0] < -np.pi / 2 - 1e-12 or angles[-1] > np.pi / 2 + 1e-12:
            raise ConfigError("beampattern.angles", "must lie in [-90, 90] deg")
        if np.any(desired < 0) or not np.any(desired > 0):
            raise ConfigError("beampattern.desired",
                              "must be nonnegative with a positive entry")
        if not self.pattern_scale > 0:
            raise ConfigError("beampattern.pattern_scale", "must be positive")
        object.__setattr__(self, "angles", angles)
        object.__setattr__(self, "desired", desired)


@dataclass(frozen=True)
class PatternSettings:
    """How the desired pattern is generated (degrees throughout)."""
    shape: str = "beam"  # "beam" | "rect"
    target_deg: float = 0.0
    grid_start_deg: float = -90.0
    grid_stop_deg: float = 90.0
    grid_step_deg: float = 1.0
    mainlobe_halfwidth_deg: float = 5.0
    pattern_scale: float = 1.0

    def build(self, n_tx: int, spacing: float) -> BeampatternSpec:
        deg = np.arange(self.grid_start_deg,
                        self.grid_stop_deg + 0.5 * self.grid_step_deg,
                        self.grid_step_deg)
        angles = np.deg2rad(deg)
        if self.shape == "rect":
            desired = (np.abs(deg - self.target_deg)
                       <= self.mainlobe_halfwidth_deg + 1e-9).astype(float)
        elif self.shape == "beam":
            desired = directional_pattern(angles, np.deg2rad(self.target_deg),
                                          n_tx, spacing)
        else:
            raise ConfigError("beampattern.shape", "must be beam or rect")
        return BeampatternSpec(angles, desired, self.pattern_scale)


def directional_pattern(angles, target, n_tx, spacing):
    """|a(theta)^H a(target)|^2 / Nt^2: the pattern of a single matched beam."""
    n = np.arange(n_tx)
    a = np.exp(2j * np.pi * spacing * np.outer(n, np.sin(angles)))
    a0 = np.exp(2j * np.pi * spacing * n * np.sin(target))
    return np.abs(a.conj().T @ a0) ** 2 / n_tx ** 2


def rng_stream(seed: int, purpose: str, *keys: int) -> np.random.Generator:
    """Independent generator per (seed, purpose, keys)."""
    ss = np.random.SeedSequence(int(seed) & (2 ** 64 - 1),
                                spawn_key=(_PURPOSES[purpose],
                                           *(int(k) for k in keys)))
    return np.random.Generator(np.random.PCG64(ss))


# ---------------------------------------------------------------------------
# JSON documents
# ---------------------------------------------------------------------------

_SYSTEM_FIELDS = {f.name for f in dataclasses.fields(SystemConfig)}
_PATTERN_FIELDS = {f.name for f in dataclasses.fields(PatternSettings)}
_SWEEP_FIELDS = {"lambdas", "n_realizations", "modes", "eval_samples",
                 "erbse_order"}
_TOP_FIELDS = {"schema_version", "system", "beampattern", "sweep"}


@dataclass(frozen=True)
class RunConfig:
    system: SystemConfig = field(default_factory=SystemConfig)
    pattern: PatternSettings = field(default_factory=PatternSettings)
    sweep: dict = field(default_factory=dict)

    def spec(self) -> BeampatternSpec:
        return self.pattern.build(self.system.n_tx,
                                  self.system.antenna_spacing)

    def to_dict(self) -> dict:
        sysd = dataclasses.asdict(self.system)
        sysd["user_weights"] = list(sysd["user_weights"])
        sysd["channel_variances"] = list(sysd["channel_variances"])
        sysd["power_total_linear"] = sysd.pop("power_total")
        return {
            "schema_version": SCHEMA_VERSION,
            "system": sysd,
            "beampattern": dataclasses.asdict(self.pattern),
            "sweep": dict(self.sweep),
        }


def _unknown(doc, allowed, prefix):
    for key in doc:
        if key not in allowed:
            raise ConfigError(f"{prefix}{key}", "unknown key")


def config_from_dict(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("<root>", "config must be a JSON object")
    _unknown(doc, _TOP_FIELDS, "")
    version = doc.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError("schema_version",
                          f"unsupported version {version!r}")

    sysd = dict(doc.get("system", {}))
    if "power_total_dbm" in sysd and "power_total_linear" in sysd:
        raise ConfigError("system.power_total_dbm",
                          "give either power_total_dbm or power_total_linear")
    if "power_total_dbm" in sysd:
        sysd["power_total"] = dbm_to_linear(float(sysd.pop("power_total_dbm")))
    elif "power_total_linear" in sysd:
        sysd["power_total"] = float(sysd.pop("power_total_linear"))
    _unknown(sysd, _SYSTEM_FIELDS, "system.")
    n_users = int(sysd.get("n_users", SystemConfig.n_users))
    sysd.setdefault("user_weights", [1.0 / n_users] * n_users)
    sysd.setdefault("channel_variances", [1.0] * n_users)
    try:
        system = SystemConfig(**sysd)
    except TypeError as exc:
        raise ConfigError("system", str(exc)) from None

    patd = dict(doc.get("beampattern", {}))
    _unknown(patd, _PATTERN_FIELDS, "beampattern.")
    pattern = PatternSettings(**patd)

    sweep = dict(doc.get("sweep", {}))
    _unknown(sweep, _SWEEP_FIELDS, "sweep.")
    cfg = RunConfig(system, pattern, sweep)
    cfg.spec()  # validates the pattern
    return cfg


def load_config(path) -> RunConfig:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(str(path), f"invalid JSON: {exc}") from None
    return config_from_dict(doc)


def _coerce(value: str):
    try:
        return json.loads(value)
    except json.JSONDecodeError:
        return value


def apply_overrides(doc: dict, overrides) -> dict:
    """Apply ``key=value`` overrides with dotted paths; bare keys go to system."""
    doc = json.loads(json.dumps(doc))
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(item, "override must look like key=value")
        key, value = item.split("=", 1)
        parts = key.strip().split(".")
        if parts[0] not in _TOP_FIELDS:
            parts = ["system"] + parts
        node = doc
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        if parts[-1] in ("power_total_dbm", "power_total_linear"):
            node.pop("power_total_dbm", None)
            node.pop("power_total_linear", None)
        node[parts[-1]] = _coerce(value)
    return doc


def default_document() -> dict:
    return RunConfig().to_dict()

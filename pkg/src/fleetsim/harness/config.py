"""Experiment configuration: a flat key=value file plus overrides.

Every field of :class:`ExperimentConfig` is a key; types come from the
dataclass declaration.  ``seed`` is mandatory.  ``parse`` and ``render``
round-trip exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

POLICIES = ("none", "rhc", "dqn", "dqn_star")


class ConfigError(ValueError):
    """Bad or missing configuration."""


@dataclass
class ExperimentConfig:
    seed: int
    data_dir: str = "city"
    out_dir: str = "runs"
    policy: str = "none"
    vehicles: int = 200
    days: int = 3
    warmup_minutes: int = 30
    day_start_hour: int = 4
    epoch_dow: int = 0              # weekday of simulation minute zero (0 = Monday)
    epoch_date: str = "2016-05-02"  # calendar date of minute zero (a Monday)
    match_radius_m: float = 5000.0
    idle_window_minutes: float = 15.0

    # geometry: fine grid, dispatch-region blocks, RHC zone blocks
    fine_rows: int = 20
    fine_cols: int = 20
    cell_size_m: float = 550.0
    origin_lat: float = 40.0
    origin_lon: float = -74.0
    region_block: int = 2
    zone_block: int = 5

    # synthetic workload
    trips_per_day: float = 6000.0
    synth_speed_kmh: float = 21.0
    synth_noise: float = 0.12

    # model training inputs
    train_seed: int = 777
    train_days: int = 10
    eta_epochs: int = 20
    eta_lr: float = 1e-3
    demand_epochs: int = 60
    demand_lr: float = 5e-3

    # receding-horizon policy
    rhc_reject_penalty: float = 20.0
    rhc_discount: float = 0.99
    rhc_slot_minutes: int = 15
    rhc_horizon: int = 3

    # deep-Q policy
    dqn_reject_weight: float = 10.0
    dqn_discount: float = 0.98
    dqn_decision_interval: float = 15.0
    dqn_lr: float = 1e-3
    dqn_train_steps: int = 5000
    dqn_eps_ramp: int = 2500
    dqn_alpha_ramp: int = 2500
    dqn_sync_period: int = 150
    dqn_buffer: int = 10000
    dqn_batch: int = 64

    def validate(self) -> "ExperimentConfig":
        if self.policy not in POLICIES:
            raise ConfigError(f"policy must be one of {POLICIES}, got {self.policy!r}")
        if self.vehicles < 1 or self.days < 1:
            raise ConfigError("vehicles and days must be positive")
        if self.fine_rows % self.region_block or self.fine_cols % self.region_block:
            raise ConfigError("fine grid must divide evenly into regions")
        if self.fine_rows % self.zone_block or self.fine_cols % self.zone_block:
            raise ConfigError("fine grid must divide evenly into zones")
        return self


_FIELDS = {f.name: f.type for f in fields(ExperimentConfig)}


def _convert(name: str, raw: str):
    kind = _FIELDS[name]
    raw = raw.strip()
    if kind == "int":
        return int(raw)
    if kind == "float":
        return float(raw)
    return raw


def parse_config(path=None, overrides: dict | None = None, text: str | None = None) -> ExperimentConfig:
    """Read a flat config file and apply overrides; ``seed`` is required."""
    values: dict = {}
    if text is None and path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if text:
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"config line {lineno}: expected key=value, got {line!r}")
            key, _, val = line.partition("=")
            key = key.strip()
            if key not in _FIELDS:
                raise ConfigError(f"config line {lineno}: unknown key {key!r}")
            try:
                values[key] = _convert(key, val)
            except ValueError as exc:
                raise ConfigError(f"config line {lineno}: bad value for {key}: {exc}") from exc
    for key, val in (overrides or {}).items():
        if key not in _FIELDS:
            raise ConfigError(f"unknown config key {key!r}")
        values[key] = _convert(key, str(val))
    if "seed" not in values:
        raise ConfigError("config must set a seed")
    return ExperimentConfig(**values).validate()


def render_config(cfg: ExperimentConfig) -> str:
    lines = []
    for f in fields(ExperimentConfig):
        lines.append(f"{f.name} = {getattr(cfg, f.name)}")
    return "\n".join(lines) + "\n"

"""Run configuration: a flat dataclass read from and written to ``key=value`` text."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from ..bp import BpConfig
from ..jpda import JpdaConfig
from ..mht import MhtConfig
from ..models import MotionModel, SensorModel, build_motion_model, build_sensor_model
from .scenarios import ROI_CENTERED, ROI_SHIFTED

TRACKERS = ("jpda", "mht", "bp")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    scenario: int = 1
    runs: int = 1000
    seed: int = 0
    trackers: str = "jpda,mht,bp"
    workers: int = 1
    steps: int = 300
    # closest y-offset of each target in scenarios 1 and 2
    half_separation: float = 5.0
    # motion
    T: float = 1.0
    sigma_u2: float = 0.1
    p_s: float = 0.995
    # sensor / clutter / birth
    p_d: float = 0.9
    sigma_v: float = 10.0
    mu_c: float = 10.0
    mu_b: float = 0.01
    # gating shared by JPDA and MHT
    gate_gamma: float = 13.82
    event_cap: int = 10**6
    # JPDA
    jpda_confirm_m: int = 10
    jpda_confirm_n: int = 16
    jpda_max_missed: int = 13
    jpda_v_max: float = 50.0
    # MHT
    mht_depth: int = 5
    mht_confirm_m: int = 12
    mht_confirm_n: int = 24
    mht_max_missed: int = 13
    mht_leaf_cap: int = 300
    mht_search_cap: int = 10**6
    mht_prune_delta: float = 15.0
    mht_tree_drop_margin: float = 5.0
    mht_birth_vel_std: float = 10.0
    # BP
    bp_particles: int = 5000
    bp_p_th: float = 0.5
    bp_p_pr: float = 1e-5
    bp_max_iter: int = 100
    bp_tol: float = 1e-6
    bp_damping: float = 0.0
    bp_birth_vel_std: float = 10.0
    bp_gate_gamma: float = 41.45
    # GOSPA
    gospa_c: float = 50.0
    gospa_p: float = 1.0

    def __post_init__(self):
        try:
            self.validate()
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def validate(self) -> None:
        if self.scenario not in (1, 2, 3):
            raise ConfigError("scenario must be 1, 2 or 3")
        if self.runs < 1:
            raise ConfigError("runs must be at least 1")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if not 1 <= self.steps <= 300:
            raise ConfigError("steps must lie in 1..300")
        for name in ("p_s", "p_d"):
            v = getattr(self, name)
            if not 0.0 < v <= 1.0:
                raise ConfigError(f"{name}={v} is not a probability in (0, 1]")
        for name in ("T", "sigma_v", "gate_gamma", "gospa_c", "bp_tol", "bp_gate_gamma"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("sigma_u2", "mu_c", "mu_b", "half_separation"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative")
        if self.gospa_p < 1:
            raise ConfigError("gospa_p must be at least 1")
        unknown = set(self.tracker_list) - set(TRACKERS)
        if unknown or not self.tracker_list:
            raise ConfigError(f"unknown trackers {sorted(unknown)}; choose from {TRACKERS}")
        # the tracker configs check their own ranges
        self.jpda_config()
        self.mht_config()
        self.bp_config()

    @property
    def tracker_list(self) -> list[str]:
        return [t.strip() for t in self.trackers.split(",") if t.strip()]

    @property
    def roi(self) -> tuple[float, float, float, float]:
        return ROI_SHIFTED if self.scenario == 2 else ROI_CENTERED

    def motion_model(self) -> MotionModel:
        return build_motion_model(self.T, self.sigma_u2, self.p_s)

    def sensor_model(self) -> SensorModel:
        return build_sensor_model(self.p_d, self.sigma_v, self.mu_c, self.roi, self.mu_b)

    def jpda_config(self) -> JpdaConfig:
        return JpdaConfig(
            gate_gamma=self.gate_gamma,
            confirm_m=self.jpda_confirm_m,
            confirm_n=self.jpda_confirm_n,
            max_missed=self.jpda_max_missed,
            v_max=self.jpda_v_max,
            event_cap=self.event_cap,
        )

    def mht_config(self) -> MhtConfig:
        return MhtConfig(
            gate_gamma=self.gate_gamma,
            depth=self.mht_depth,
            confirm_m=self.mht_confirm_m,
            confirm_n=self.mht_confirm_n,
            max_missed=self.mht_max_missed,
            leaf_cap=self.mht_leaf_cap,
            search_cap=self.mht_search_cap,
            prune_delta=self.mht_prune_delta,
            tree_drop_margin=self.mht_tree_drop_margin,
            birth_vel_std=self.mht_birth_vel_std,
        )

    def bp_config(self) -> BpConfig:
        return BpConfig(
            n_particles=self.bp_particles,
            p_th=self.bp_p_th,
            p_pr=self.bp_p_pr,
            max_iter=self.bp_max_iter,
            tol=self.bp_tol,
            damping=self.bp_damping,
            birth_vel_std=self.bp_birth_vel_std,
            gate_gamma=self.bp_gate_gamma,
        )

    def replace(self, **changes) -> "RunConfig":
        return dataclasses.replace(self, **changes)


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _convert(key: str, raw: str):
    typ = _FIELD_TYPES[key]
    try:
        if typ == "int":
            f = float(raw)
            if not f.is_integer():
                raise ValueError
            return int(f)
        if typ == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {typ}") from None


def parse_config_text(text: str, overrides: dict | None = None) -> RunConfig:
    """Parse ``key=value`` lines (``#`` comments allowed); ``overrides`` win over the text."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _FIELD_TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _convert(key, raw)
    for key, v in (overrides or {}).items():
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown key {key!r}")
        if v is not None:
            values[key] = _convert(key, str(v)) if isinstance(v, str) else v
    return RunConfig(**values)


def parse_config(path: str | Path | None = None, overrides: dict | None = None) -> RunConfig:
    text = ""
    if path is not None:
        try:
            text = Path(path).read_text(encoding="utf-8")
        except (OSError, UnicodeDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text, overrides)


def format_config(cfg: RunConfig) -> str:
    return "".join(f"{f.name}={getattr(cfg, f.name)!r}\n".replace("'", "") for f in fields(cfg))


def write_config(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(format_config(cfg), encoding="utf-8")

"""Scenario configuration and its key-value file format."""
from __future__ import annotations

import configparser
import dataclasses
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path


class Architecture(str, Enum):
    DSTAR = "DSTAR"
    DSTAR_COUPLED = "DSTAR_COUPLED"
    SINGLE_STAR = "SINGLE_STAR"
    DOUBLE_RIS = "DOUBLE_RIS"
    HDX_DSTAR = "HDX_DSTAR"
    MODE_SWITCH = "MODE_SWITCH"
    FIXED_PHASE = "FIXED_PHASE"
    FIXED_AMPLITUDE = "FIXED_AMPLITUDE"


class ConfigError(ValueError):
    """Invalid scenario or sweep description."""


def dbm_to_watt(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


Point = tuple[float, float]

_POINT_FIELDS = ("bs_pos", "star_p_pos", "star_s_pos", "pd_pos", "sd_pos", "pu_pos", "su_pos")


@dataclass(frozen=True)
class ScenarioConfig:
    """All inputs of one simulated network.

    Powers are in dBm, coordinates in meters. Path loss follows
    ``PL(d) = pl0 + 10 * alpha * log10(d)`` with separate constants for
    links that touch a surface (``star``), BS-user links (``direct``) and
    user-user links (``user``).
    """

    n_tx: int = 8
    n_rx: int = 8
    k_pd: int = 2
    k_sd: int = 2
    k_pu: int = 2
    k_su: int = 2
    m_elems: int = 8
    bs_power_dbm: float = 30.0
    user_power_dbm: float = 20.0
    max_power_dbm: float = 40.0
    noise_dbm: float = -80.0
    ul_rate_threshold_pu: float = 1.0
    ul_rate_threshold_su: float = 1.0

    # geometry (x, y) in meters
    bs_pos: Point = (0.0, 0.0)
    star_p_pos: Point = (100.0, 0.0)
    star_s_pos: Point = (200.0, 0.0)
    pd_pos: Point = (90.0, 25.0)
    pu_pos: Point = (90.0, -25.0)
    sd_pos: Point = (210.0, 25.0)
    su_pos: Point = (210.0, -25.0)
    n_panels: int = 1
    panel_spacing_m: float = 10.0

    # path loss
    pl0_star_db: float = 14.0
    alpha_star: float = 2.2
    pl0_direct_db: float = 30.0
    alpha_direct: float = 3.0
    pl0_user_db: float = 30.0
    alpha_user: float = 3.5
    si_attenuation_db: float = 110.0
    blockage_penalty_db: float = 8.0

    # algorithm
    rho1: float = 1.0
    rho2: float = 1.0
    kappa0: float = 0.1
    kappa_max: float = 1e3
    delta_rate: float = 1e-3
    delta_vars: float = 1e-3
    max_iters: int = 20
    price_ul: bool = True
    amp_step: float = 0.5
    n_starts: int = 4
    probe_iters: int = 3
    seed: int = 0
    architecture: Architecture = Architecture.DSTAR

    def __post_init__(self):
        object.__setattr__(self, "architecture", Architecture(self.architecture))
        for name in _POINT_FIELDS:
            object.__setattr__(self, name, tuple(float(v) for v in getattr(self, name)))
        self.validate()

    def validate(self) -> None:
        for name in ("n_tx", "n_rx", "m_elems", "n_panels", "max_iters", "n_starts", "probe_iters"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        # zero-sized user groups are allowed so a region can be switched off
        for name in ("k_pd", "k_sd", "k_pu", "k_su"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if self.k_pd + self.k_sd < 1:
            raise ConfigError("at least one downlink user is required")
        for name in ("bs_power_dbm", "user_power_dbm", "max_power_dbm", "noise_dbm"):
            if not math.isfinite(getattr(self, name)):
                raise ConfigError(f"{name} must be finite")
        if min(self.ul_rate_threshold_pu, self.ul_rate_threshold_su) < 0:
            raise ConfigError("UL rate thresholds must be >= 0")
        if self.m_elems % self.n_panels:
            raise ConfigError(
                f"m_elems={self.m_elems} is not divisible by n_panels={self.n_panels}")
        if min(self.rho1, self.rho2, self.kappa0) <= 0:
            raise ConfigError("penalties must be positive")
        if not 0 < self.amp_step <= 1:
            raise ConfigError("amp_step must lie in (0, 1]")
        nodes = [getattr(self, n) for n in _POINT_FIELDS]
        for i in range(len(nodes)):
            for j in range(i + 1, len(nodes)):
                if math.dist(nodes[i], nodes[j]) <= 0:
                    raise ConfigError(
                        f"{_POINT_FIELDS[i]} and {_POINT_FIELDS[j]} coincide")

    @property
    def power_budget_watt(self) -> float:
        """P_t: the BS transmit power, capped by the maximum allowed budget."""
        return dbm_to_watt(min(self.bs_power_dbm, self.max_power_dbm))

    @property
    def noise_watt(self) -> float:
        return dbm_to_watt(self.noise_dbm)

    @property
    def user_power_watt(self) -> float:
        return dbm_to_watt(self.user_power_dbm)

    @property
    def inter_star_distance(self) -> float:
        return math.dist(self.star_p_pos, self.star_s_pos)

    def replace(self, **changes) -> "ScenarioConfig":
        """Copy with changes; also accepts derived knobs such as ``inter_star_distance``."""
        cfg = self
        plain = {}
        for key, value in changes.items():
            if key in _DERIVED:
                cfg = _DERIVED[key](dataclasses.replace(cfg, **plain), value)
                plain = {}
            else:
                plain[key] = value
        return dataclasses.replace(cfg, **plain) if plain else cfg


def _set_distance(cfg: ScenarioConfig, d) -> ScenarioConfig:
    # STAR-S moves along the BS -> STAR-P axis, user groups stay put
    px, py = cfg.star_p_pos
    bx, by = cfg.bs_pos
    norm = math.dist(cfg.bs_pos, cfg.star_p_pos)
    ux, uy = (px - bx) / norm, (py - by) / norm
    d = float(d)
    return dataclasses.replace(cfg, star_s_pos=(px + d * ux, py + d * uy))


def _set_power(cfg: ScenarioConfig, p) -> ScenarioConfig:
    return dataclasses.replace(cfg, bs_power_dbm=float(p))


def _set_antennas(cfg: ScenarioConfig, n) -> ScenarioConfig:
    return dataclasses.replace(cfg, n_tx=int(n), n_rx=int(n))


def _set_users(cfg: ScenarioConfig, k) -> ScenarioConfig:
    k = int(k)
    return dataclasses.replace(cfg, k_pd=k, k_sd=k, k_pu=k, k_su=k)


def _set_threshold(cfg: ScenarioConfig, r) -> ScenarioConfig:
    return dataclasses.replace(cfg, ul_rate_threshold_pu=float(r), ul_rate_threshold_su=float(r))


_DERIVED = {
    "inter_star_distance": _set_distance,
    "p_t": _set_power,
    "antennas": _set_antennas,
    "users_per_group": _set_users,
    "ul_rate_threshold": _set_threshold,
}

SWEEPABLE = tuple(_DERIVED) + tuple(f.name for f in dataclasses.fields(ScenarioConfig))


def _coerce(name: str, text: str):
    fields = {f.name: f for f in dataclasses.fields(ScenarioConfig)}
    if name in _DERIVED:
        return float(text)
    if name not in fields:
        raise ConfigError(f"unknown scenario key '{name}'")
    default = getattr(ScenarioConfig, name, None)
    try:
        if name in _POINT_FIELDS:
            parts = [float(p) for p in text.replace("(", "").replace(")", "").split(",")]
            if len(parts) != 2:
                raise ValueError("expected 'x, y'")
            return tuple(parts)
        if name == "architecture":
            return Architecture(text.strip().upper())
        if isinstance(default, bool):
            return text.strip().lower() in ("1", "true", "yes", "on")
        if isinstance(default, int):
            return int(float(text))
        return float(text)
    except ValueError as exc:
        raise ConfigError(f"bad value for '{name}': {text!r} ({exc})") from None


def parse_overrides(items: dict[str, str]) -> dict:
    return {k: _coerce(k, v) for k, v in items.items()}


def scenario_from_text(text: str, base: ScenarioConfig | None = None) -> ScenarioConfig:
    """Parse ``key = value`` lines (``#`` comments, optional ``[scenario]`` header)."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    if not text.lstrip().startswith("["):
        text = "[scenario]\n" + text
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(str(exc)) from None
    section = parser["scenario"] if parser.has_section("scenario") else {}
    base = base or ScenarioConfig()
    return base.replace(**parse_overrides(dict(section)))


def load_scenario(path: str | Path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read scenario file {path}: {exc}") from None
    return scenario_from_text(text)


def scenario_to_text(cfg: ScenarioConfig) -> str:
    lines = ["[scenario]"]
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if f.name in _POINT_FIELDS:
            value = f"{value[0]!r}, {value[1]!r}"
        elif isinstance(value, Enum):
            value = value.value
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"


__all__ = [
    "Architecture", "ConfigError", "ScenarioConfig", "SWEEPABLE", "dbm_to_watt",
    "load_scenario", "parse_overrides", "scenario_from_text", "scenario_to_text",
]

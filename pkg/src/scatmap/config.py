"""
Run configuration: a flat INI file whose sections mirror ``RunConfig``.

Every key is optional; unknown sections or keys are rejected.  Numbers are
parsed with ``float`` (full double precision).  Defaults::

    [system]        mu = 0.0121505856, equilibrium = L1
    [family]        offset_min = 1e-4, offset_max = 5e-3, n_members = 41
    [channel]       kind = homoclinic, energy_fraction = 0.5,
                    heteroclinic_offset = 1e-3, angle_min = 1e-3,
                    seed = (none), index = 0
    [manifold]      section = interior, crossing = 2, sign_u = 1, sign_s = 1,
                    delta = 1e-6, n_rays = 64, max_gap = 0.02, region = 1.6
    [perturbation]  kind = constant-thrust-windowed, magnitude = 0.05,
                    direction = 1.0, 0.0, window_offset = 1.0,
                    window_duration = 1.0, ramp = 0.05, kappa = 0.0,
                    windowed = true
    [melnikov]      tol_tail = 1e-10, min_periods = 4.0
    [validation]    eps_grid = 1e-2, 3e-3, 1e-3, 3e-4, rho0 = 0.5,
                    gronwall_eps = 1e-2, 1e-3, 1e-4

Family energies are offsets above the equilibrium energy.  For
``kind = heteroclinic`` the channel energy is ``heteroclinic_offset`` above
the L2 energy, the L1 family is extended to cover it, and the manifold
section defaults to the lighter primary's ``q1`` (``section = moon``,
``crossing = 2``, ``sign_u = -1``, ``sign_s = 1``).
"""

from __future__ import annotations

import configparser
from dataclasses import asdict, dataclass, field, fields

from .dynamics import EARTH_MOON_MU


class ConfigError(ValueError):
    """Malformed or unknown configuration entry."""


def _floats(text: str) -> tuple:
    parts = [p.strip() for p in text.replace(";", ",").split(",") if p.strip()]
    try:
        return tuple(float(p) for p in parts)
    except ValueError as exc:
        raise ConfigError(f"expected comma-separated numbers, got {text!r}") from exc


@dataclass
class SystemConfig:
    mu: float = EARTH_MOON_MU
    equilibrium: str = "L1"


@dataclass
class FamilyConfig:
    offset_min: float = 1e-4
    offset_max: float = 5e-3
    n_members: int = 41


@dataclass
class ChannelConfig:
    kind: str = "homoclinic"
    energy_fraction: float = 0.5
    heteroclinic_offset: float = 1e-3
    angle_min: float = 1e-3
    seed: tuple = ()
    index: int = 0


@dataclass
class ManifoldConfig:
    section: str = "auto"
    crossing: int = 0
    sign_u: int = 0
    sign_s: int = 0
    delta: float = 1e-6
    n_rays: int = 64
    max_gap: float = 0.02
    region: float = 1.6


@dataclass
class PerturbationConfig:
    kind: str = "constant-thrust-windowed"
    magnitude: float = 0.05
    direction: tuple = (1.0, 0.0)
    window_offset: float = 1.0
    window_duration: float = 1.0
    ramp: float = 0.05
    kappa: float = 0.0
    windowed: bool = True


@dataclass
class MelnikovConfig:
    tol_tail: float = 1e-10
    min_periods: float = 4.0


@dataclass
class ValidationConfig:
    eps_grid: tuple = (1e-2, 3e-3, 1e-3, 3e-4)
    rho0: float = 0.5
    gronwall_eps: tuple = (1e-2, 1e-3, 1e-4)


@dataclass
class RunConfig:
    system: SystemConfig = field(default_factory=SystemConfig)
    family: FamilyConfig = field(default_factory=FamilyConfig)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    manifold: ManifoldConfig = field(default_factory=ManifoldConfig)
    perturbation: PerturbationConfig = field(default_factory=PerturbationConfig)
    melnikov: MelnikovConfig = field(default_factory=MelnikovConfig)
    validation: ValidationConfig = field(default_factory=ValidationConfig)

    def __post_init__(self):
        self._resolve()
        self._validate()

    def _resolve(self):
        m = self.manifold
        het = self.channel.kind == "heteroclinic"
        if m.section == "auto":
            m.section = "moon" if het else "interior"
        if m.crossing == 0:
            m.crossing = 2
        if m.sign_u == 0:
            m.sign_u = -1 if het else 1
        if m.sign_s == 0:
            m.sign_s = 1

    def _validate(self):
        if not 0.0 < self.system.mu <= 0.5:
            raise ConfigError("mu must lie in (0, 0.5]")
        if self.system.equilibrium not in ("L1", "L2"):
            raise ConfigError("equilibrium must be L1 or L2")
        if not 0.0 < self.family.offset_min < self.family.offset_max:
            raise ConfigError("family offsets must satisfy 0 < offset_min < offset_max")
        if self.family.n_members < 3:
            raise ConfigError("family needs at least 3 members")
        if self.channel.kind not in ("homoclinic", "heteroclinic"):
            raise ConfigError("channel kind must be homoclinic or heteroclinic")
        if not 0.0 <= self.channel.energy_fraction <= 1.0:
            raise ConfigError("energy_fraction must lie in [0, 1]")
        if self.channel.seed and len(self.channel.seed) != 2:
            raise ConfigError("channel seed needs two section coordinates")
        if self.manifold.section not in ("interior", "moon", "moon-lower"):
            raise ConfigError("section must be interior, moon or moon-lower")
        if self.manifold.sign_u not in (-1, 1) or self.manifold.sign_s not in (-1, 1):
            raise ConfigError("branch signs must be +1 or -1")
        if self.perturbation.kind not in ("zero", "constant-thrust-windowed", "velocity-dissipation"):
            raise ConfigError("perturbation kind must be zero, constant-thrust-windowed or velocity-dissipation")
        if self.perturbation.kind == "constant-thrust-windowed" and not self.perturbation.windowed:
            raise ConfigError("windowed thrust cannot be unwindowed")
        if len(self.perturbation.direction) != 2:
            raise ConfigError("direction needs two components")
        if len(self.validation.eps_grid) < 4:
            raise ConfigError("eps_grid needs at least four values")
        if not 0.0 < self.validation.rho0 < 1.0:
            raise ConfigError("rho0 must lie in (0, 1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        for sec in d.values():
            for k, v in sec.items():
                if isinstance(v, tuple):
                    sec[k] = list(v)
        return d


_SECTIONS = {
    "system": SystemConfig,
    "family": FamilyConfig,
    "channel": ChannelConfig,
    "manifold": ManifoldConfig,
    "perturbation": PerturbationConfig,
    "melnikov": MelnikovConfig,
    "validation": ValidationConfig,
}


def _convert(cls, key: str, text: str):
    t = type({f.name: f for f in fields(cls)}[key].default)
    try:
        if t is bool:
            v = text.strip().lower()
            if v not in ("true", "false", "yes", "no", "1", "0", "on", "off"):
                raise ValueError(v)
            return v in ("true", "yes", "1", "on")
        if t is int:
            return int(text)
        if t is float:
            return float(text)
        if t is tuple:
            return _floats(text)
        return text.strip()
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {text!r}") from exc


def parse_config(text: str) -> RunConfig:
    """Parse INI text into a ``RunConfig``; raises ``ConfigError``."""
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"config parse error: {exc}") from exc
    parts = {}
    for sec in cp.sections():
        if sec not in _SECTIONS:
            raise ConfigError(f"unknown section [{sec}]")
        cls = _SECTIONS[sec]
        names = {f.name for f in fields(cls)}
        kw = {}
        for key, val in cp.items(sec):
            if key not in names:
                raise ConfigError(f"unknown key {key!r} in [{sec}]")
            kw[key] = _convert(cls, key, val)
        try:
            parts[sec] = cls(**kw)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
    return RunConfig(**parts)


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())

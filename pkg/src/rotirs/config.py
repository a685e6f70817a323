"""Scenario configuration: physical layout, link budget and solver controls.

Defaults reproduce the reference deployment (6 GHz carrier, 4x4 rotatable
BS array, 21x21 rotatable IRS, four users).  Configurations can be read from
a flat ``key = value`` text file whose keys are the field names below.
"""

from __future__ import annotations

import ast
import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0


class ConfigError(ValueError):
    """Invalid configuration value or key; ``field`` names the culprit."""

    def __init__(self, field_name, message):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass(frozen=True)
class ScenarioConfig:
    # radio
    carrier_hz: float = 6e9
    power_dbm: float = 20.0
    noise_dbm: float = -80.0
    # layout
    bs_center: tuple = (0.0, 0.0, 10.0)
    irs_center: tuple = (2.0, 4.0, 14.0)
    bs_nx: int = 4
    bs_nz: int = 4
    irs_side_count: int = 21
    bs_spacing: float | None = None  # defaults to half a wavelength
    irs_spacing: float | None = None  # defaults to half a wavelength
    num_users: int = 4
    # propagation
    paths_direct: int = 4
    paths_irs: int = 4
    kappa_nlos: float = 0.3
    direct_atten_db: float = 25.0
    cascaded_los: bool = False
    # gain patterns
    p_bs: float = 6.0
    p_irs: float = 5.0
    # mechanical limits (degrees)
    theta_max_deg: float = 60.0
    alpha_max_deg: float = 60.0
    beta_max_deg: float = 60.0
    phi_max_deg: float = 60.0
    # user and scatterer drops
    user_dist_min: float = 21.0
    user_dist_max: float = 80.0
    user_height: float = 1.5
    user_azimuth_max_deg: float = 60.0
    scatter_radius: float = 20.0
    scatter_height_min: float = 1.0
    scatter_height_max: float = 20.0
    # solver controls
    eps_ao: float = 1e-3
    t_ao: int = 30
    eps_rot: float = 1e-4
    eps0: float = 1e-12
    t_rot: int = 10
    t_fp: int = 10
    rcg_iters: int = 50
    s_max: float = 1.0
    s_min: float = 1e-6
    backtrack: float = 0.5
    tau_ini: float = 1e-2
    tau_min: float = 1e-8
    tau_max: float = 1e2
    delta_boundary: float = 1e-6
    # experiment
    trials: int = 50
    seed: int = 0

    def __post_init__(self):
        for name in ("bs_center", "irs_center"):
            vec = tuple(float(x) for x in getattr(self, name))
            if len(vec) != 3:
                raise ConfigError(name, "expected a 3-vector")
            object.__setattr__(self, name, vec)
        positive = ("carrier_hz", "bs_nx", "bs_nz", "irs_side_count", "num_users",
                    "paths_direct", "paths_irs", "theta_max_deg", "alpha_max_deg",
                    "beta_max_deg", "phi_max_deg", "user_dist_min", "scatter_radius",
                    "t_ao", "t_rot", "s_max", "s_min", "tau_min", "tau_ini",
                    "tau_max", "trials")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(name, f"must be positive, got {getattr(self, name)!r}")
        if self.power_dbm < 0:
            raise ConfigError("power_dbm", "per-user transmit power must be non-negative in dBm")
        for name in ("bs_spacing", "irs_spacing"):
            value = getattr(self, name)
            if value is not None and not value > 0:
                raise ConfigError(name, "spacing must be positive")
        if not 0 < self.kappa_nlos < 1:
            raise ConfigError("kappa_nlos", "must lie in (0, 1)")
        if self.p_bs < 0.5 or self.p_irs < 0.5:
            raise ConfigError("p_bs" if self.p_bs < 0.5 else "p_irs", "gain exponent must be >= 1/2")
        if self.theta_max_deg > 90:
            raise ConfigError("theta_max_deg", "elevation tilt cannot exceed 90 degrees")
        if self.user_dist_max < self.user_dist_min:
            raise ConfigError("user_dist_max", "must be >= user_dist_min")
        if not 0 < self.backtrack < 1:
            raise ConfigError("backtrack", "must lie in (0, 1)")
        if self.tau_min > self.tau_max:
            raise ConfigError("tau_min", "must not exceed tau_max")

    @property
    def wavelength(self):
        return SPEED_OF_LIGHT / self.carrier_hz

    @property
    def wavenumber(self):
        return 2 * np.pi / self.wavelength

    @property
    def num_bs(self):
        return self.bs_nx * self.bs_nz

    @property
    def num_irs(self):
        return self.irs_side_count ** 2

    @property
    def power_w(self):
        return 10 ** ((self.power_dbm - 30) / 10)

    @property
    def noise_w(self):
        return 10 ** ((self.noise_dbm - 30) / 10)

    @property
    def theta_max(self):
        return np.deg2rad(self.theta_max_deg)

    @property
    def psi_max(self):
        return np.deg2rad([self.alpha_max_deg, self.beta_max_deg, self.phi_max_deg])

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


FIELD_NAMES = tuple(f.name for f in dataclasses.fields(ScenarioConfig))


def parse_config_text(text):
    """Parse flat ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in FIELD_NAMES:
            raise ConfigError(key, "unknown configuration key")
        try:
            values[key] = ast.literal_eval(value)
        except (ValueError, SyntaxError):
            lowered = value.lower()
            if lowered in ("true", "false"):
                values[key] = lowered == "true"
            elif lowered == "none":
                values[key] = None
            else:
                raise ConfigError(key, f"cannot parse value {value!r}") from None
    return values


def load_config(path=None, **overrides):
    """Build a validated :class:`ScenarioConfig`.

    Fields absent from the file take their defaults; keyword overrides take
    precedence over the file.
    """
    values = {}
    if path is not None:
        values.update(parse_config_text(Path(path).read_text()))
    for key in overrides:
        if key not in FIELD_NAMES:
            raise ConfigError(key, "unknown configuration key")
    values.update(overrides)
    return ScenarioConfig(**values)


def format_config(config):
    """Inverse of :func:`parse_config_text`."""
    lines = []
    for name in FIELD_NAMES:
        lines.append(f"{name} = {getattr(config, name)!r}")
    return "\n".join(lines) + "\n"

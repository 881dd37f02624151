"""Run configuration, validation, hashing and the scenario catalog."""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .fields import (
    LaserPulse,
    TermToggles,
    intensity_to_field,
    potential_from_dict,
    wavelength_to_omega,
)
from .grid import make_grid
from .propagator import MaskFunction

__all__ = [
    "ConfigError",
    "RunConfig",
    "load_config",
    "scenario_config",
    "SCENARIOS",
    "CODE_VERSION",
]

CODE_VERSION = "0.1.0"


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in (over or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


DEFAULTS = {
    "name": "run",
    "grid": {"nx": 256, "nz": 256, "dx": 0.2, "dz": 0.2},
    "potential": {"kind": "softcore", "k": 80.32, "q_e": 1.0, "Z": 12},
    "laser": None,
    "toggles": {},
    "dt": 0.02,
    "record_every": 1,
    "accelerations": True,
    "acceleration_ordering": "product",
    "com_window": None,
    "spin_taylor_order": 2,
    "absorber": None,
    "photoelectron": None,
    "initial_state": {"kind": "ground", "spin": [1.0, 0.0]},
    "eigen": {"method": "imaginary_time", "n_states": 1, "dtau": None},
    "spectra": {"window": "plateau", "pad": 4},
    "checkpoint_every": 0,
    "nan_check_every": 100,
}

# keys that never change the physics and are left out of the config hash
_NON_PHYSICAL = ("name", "checkpoint_every", "nan_check_every", "output_dir")


@dataclass
class RunConfig:
    """Validated run configuration.  ``raw`` keeps the canonical dict form."""

    raw: dict
    meta: dict = field(default_factory=dict)

    # --- construction -----------------------------------------------------

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        raw = _merge(DEFAULTS, d or {})
        unknown = set(raw) - set(DEFAULTS) - {"output_dir"}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(raw)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return copy.deepcopy(self.raw)

    def updated(self, overrides: dict) -> "RunConfig":
        return RunConfig.from_dict(_merge(self.raw, overrides))

    # --- derived objects ----------------------------------------------------

    @property
    def name(self) -> str:
        return str(self.raw["name"])

    @property
    def grid(self):
        g = self.raw["grid"]
        return make_grid(int(g["nx"]), int(g["nz"]), float(g["dx"]), float(g.get("dz", g["dx"])))

    @property
    def potential(self):
        return potential_from_dict(self.raw["potential"])

    @property
    def toggles(self) -> TermToggles:
        return TermToggles(**self.raw["toggles"])

    @property
    def dt(self) -> float:
        return float(self.raw["dt"])

    def laser_parameters(self) -> dict | None:
        """E0 and omega in a.u. plus cycle counts, with unit conversions applied."""
        las = self.raw["laser"]
        if las is None:
            return None
        if "E0" in las:
            E0 = float(las["E0"])
        elif "intensity_Wcm2" in las:
            E0 = intensity_to_field(float(las["intensity_Wcm2"]))
        else:
            raise ConfigError("laser needs E0 (a.u.) or intensity_Wcm2")
        if "omega" in las:
            omega = float(las["omega"])
        elif "wavelength_nm" in las:
            omega = wavelength_to_omega(float(las["wavelength_nm"]))
        else:
            raise ConfigError("laser needs omega (a.u.) or wavelength_nm")
        return {
            "E0": E0,
            "omega": omega,
            "turn_on_cycles": float(las.get("turn_on_cycles", 2.25)),
            "plateau_cycles": float(las.get("plateau_cycles", 5.0)),
            "post_cycles": float(las.get("post_cycles", 0.0)),
        }

    @property
    def pulse(self) -> LaserPulse | None:
        lp = self.laser_parameters()
        if lp is None:
            return None
        return LaserPulse.from_cycles(lp["E0"], lp["omega"], lp["turn_on_cycles"], lp["plateau_cycles"],
                                      self.toggles.c)

    @property
    def total_time(self) -> float:
        """Pulse length plus field-free evolution, or ``duration`` without a laser."""
        pulse = self.pulse
        if pulse is None:
            return float(self.raw.get("initial_state", {}).get("duration", 0.0) or self.raw.get("duration", 0.0))
        return pulse.t_p + self.laser_parameters()["post_cycles"] * pulse.period

    @property
    def n_steps(self) -> int:
        return int(round(self.total_time / self.dt))

    @property
    def absorber(self) -> MaskFunction | None:
        a = self.raw["absorber"]
        if a is None:
            return None
        g = self.grid
        if "fraction" in a:
            return MaskFunction.fraction(g, float(a["fraction"]))
        return MaskFunction(float(a.get("width_x", 0.0)), float(a.get("width_z", 0.0)))

    @property
    def absorb_every(self) -> int:
        """Steps between mask applications.

        ``absorber.interval`` (a.u.) fixes the schedule in time, so the
        absorption per unit time does not change with dt; otherwise
        ``absorber.every`` counts steps (default 1).
        """
        a = self.raw["absorber"] or {}
        if a.get("interval") is not None:
            n = float(a["interval"]) / self.dt
            if abs(n - round(n)) > 1e-6 * max(1.0, n) or round(n) < 1:
                raise ConfigError(f"absorber.interval {a['interval']} is not a positive multiple of dt {self.dt}")
            return int(round(n))
        return int(a.get("every", 1))

    # --- validation and hashing --------------------------------------------

    def validate(self):
        r = self.raw
        try:
            g = self.grid
            self.potential
            tg = self.toggles
        except (TypeError, ValueError, KeyError) as exc:
            raise ConfigError(str(exc)) from exc
        if not (isinstance(r["dt"], (int, float)) and r["dt"] > 0 and math.isfinite(r["dt"])):
            raise ConfigError("dt must be a positive number")
        if int(r["record_every"]) < 1:
            raise ConfigError("record_every must be >= 1")
        if r["acceleration_ordering"] not in ("product", "local"):
            raise ConfigError("acceleration_ordering must be 'product' or 'local'")
        if r["laser"] is not None:
            try:
                lp = self.laser_parameters()
                self.pulse
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
            for key in ("turn_on_cycles", "plateau_cycles", "post_cycles"):
                if lp[key] < 0:
                    raise ConfigError(f"laser.{key} must be non-negative")
        if r["photoelectron"] is not None and r["absorber"] is None:
            raise ConfigError("photoelectron spectra need an absorber")
        if r["absorber"] is not None:
            try:
                self.absorber
                if self.absorb_every < 1:
                    raise ConfigError("absorber.every must be >= 1")
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
        init = r["initial_state"]
        if init.get("kind", "ground") not in ("ground", "eigen", "gaussian"):
            raise ConfigError(f"unknown initial_state kind {init.get('kind')!r}")
        if tg.spin_orbit and r["spin_taylor_order"] < 1:
            raise ConfigError("spin_taylor_order must be >= 1")
        if g.nx * g.nz > 2**24:
            raise ConfigError("grid too large")

    def physics_dict(self) -> dict:
        return {k: v for k, v in self.raw.items() if k not in _NON_PHYSICAL}

    def hash(self) -> str:
        blob = json.dumps(self.physics_dict(), sort_keys=True, default=float).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(yaml.safe_dump(self.raw, sort_keys=True))
        return path


def load_config(path) -> RunConfig:
    """Read a YAML (or JSON) run configuration."""
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return RunConfig.from_dict(data)


# --- scenario catalog -------------------------------------------------------------
#
# Laser and ion parameters follow the figure conditions; grids are sized for a
# single workstation core.  ``scale_factor`` divides the plateau and post-pulse
# cycle counts; the grid stays fixed so the quiver amplitude always fits.

Z3 = {"kind": "softcore", "k": 6.48, "q_e": 1.0, "Z": 3}
Z4 = {"kind": "softcore", "k": 10.7, "q_e": 1.0, "Z": 4}
Z12 = {"kind": "softcore", "k": 80.32, "q_e": 1.0, "Z": 12}

_KRF = 248.0
_ND2 = 527.0

SCENARIOS: dict[str, dict] = {
    "fig3a_drift_Z3": {
        "description": "centre-of-mass drift beyond the dipole approximation, Z=3",
        "config": {
            "grid": {"nx": 640, "nz": 384, "dx": 0.25, "dz": 0.25},
            "potential": Z3,
            "laser": {"intensity_Wcm2": 1.2e17, "wavelength_nm": _KRF, "turn_on_cycles": 3.25, "plateau_cycles": 10},
            "dt": 0.02, "record_every": 5,
            "absorber": {"fraction": 0.1},
        },
    },
    "fig3b_hole_Z4": {
        "description": "magnetically pushed wavepacket around a Z=4 core",
        "config": {
            "grid": {"nx": 800, "nz": 400, "dx": 0.2, "dz": 0.2},
            "potential": Z4,
            "laser": {"intensity_Wcm2": 1.2e17, "wavelength_nm": _KRF, "turn_on_cycles": 3.25, "plateau_cycles": 10},
            "dt": 0.02, "record_every": 5,
            "absorber": {"fraction": 0.1},
        },
    },
    "fig4_relaxation": {
        "description": "field-free relaxation radiation after the fig3b pulse",
        "config": {
            "grid": {"nx": 800, "nz": 400, "dx": 0.2, "dz": 0.2},
            "potential": Z4,
            "laser": {"intensity_Wcm2": 1.2e17, "wavelength_nm": _KRF, "turn_on_cycles": 3.25,
                      "plateau_cycles": 10, "post_cycles": 30},
            "dt": 0.02, "record_every": 2,
            "absorber": {"fraction": 0.1},
            "spectra": {"window": "post"},
        },
    },
    "fig5_stark_Z12": {
        "description": "relativistic Stark shift of the Z=12 resonance (mass-shift term on)",
        "config": {
            "grid": {"nx": 128, "nz": 128, "dx": 0.1, "dz": 0.1},
            "potential": Z12,
            "laser": {"intensity_Wcm2": 7e16, "wavelength_nm": _ND2, "turn_on_cycles": 5.25, "plateau_cycles": 100},
            "toggles": {"mass_shift": True},
            "dt": 0.02, "record_every": 2,
        },
    },
    "fig10_spin": {
        "description": "spin-down population with Pauli and spin-orbit terms, Z=12",
        "config": {
            "grid": {"nx": 128, "nz": 128, "dx": 0.1, "dz": 0.1},
            "potential": Z12,
            "laser": {"intensity_Wcm2": 7e16, "wavelength_nm": _ND2, "turn_on_cycles": 5.25, "plateau_cycles": 10},
            "toggles": {"pauli": True, "spin_orbit": True, "mass_shift": True, "darwin": True},
            "dt": 0.02, "record_every": 2,
        },
    },
    "fig11_splitting": {
        "description": "spin-orbit splitting of the Z=12 resonance lines",
        "config": {
            "grid": {"nx": 128, "nz": 128, "dx": 0.1, "dz": 0.1},
            "potential": Z12,
            "laser": {"intensity_Wcm2": 7e16, "wavelength_nm": _ND2, "turn_on_cycles": 5.25, "plateau_cycles": 100},
            "toggles": {"pauli": True, "spin_orbit": True, "mass_shift": True, "darwin": True},
            "dt": 0.02, "record_every": 2,
        },
    },
    "fig12_hhg_Z3": {
        "description": "high harmonics from Z=3",
        "config": {
            "grid": {"nx": 768, "nz": 128, "dx": 0.2, "dz": 0.2},
            "potential": Z3,
            "laser": {"intensity_Wcm2": 2.5e16, "wavelength_nm": _KRF, "turn_on_cycles": 10.25, "plateau_cycles": 10},
            "dt": 0.02, "record_every": 3,
            "absorber": {"fraction": 0.1},
        },
    },
    "fig13_hhg_Z4": {
        "description": "high harmonics from Z=4",
        "config": {
            "grid": {"nx": 1024, "nz": 128, "dx": 0.15, "dz": 0.2},
            "potential": Z4,
            "laser": {"intensity_Wcm2": 1e17, "wavelength_nm": _KRF, "turn_on_cycles": 10.25, "plateau_cycles": 10},
            "dt": 0.01, "record_every": 3,
            "absorber": {"fraction": 0.1},
        },
    },
    "fig14_ati_Z3": {
        "description": "above-threshold ionization of Z=3",
        "config": {
            "grid": {"nx": 1024, "nz": 64, "dx": 0.2, "dz": 0.4},
            "potential": Z3,
            "laser": {"intensity_Wcm2": 2.5e16, "wavelength_nm": _KRF, "turn_on_cycles": 3.25, "plateau_cycles": 10},
            "dt": 0.02, "record_every": 5,
            "absorber": {"fraction": 0.1},
            "photoelectron": {"X_I": None, "X_0": 10.0, "pad_x": 4, "propagate_z": False},
        },
    },
    "fig15_ati_Z4": {
        "description": "above-threshold ionization of Z=4",
        "config": {
            "grid": {"nx": 1024, "nz": 64, "dx": 0.15, "dz": 0.4},
            "potential": Z4,
            "laser": {"intensity_Wcm2": 1.2e17, "wavelength_nm": _KRF, "turn_on_cycles": 3.25, "plateau_cycles": 10},
            "dt": 0.01, "record_every": 5,
            "absorber": {"fraction": 0.1},
            "photoelectron": {"X_I": None, "X_0": 10.0, "pad_x": 4, "propagate_z": False},
        },
    },
}


def scenario_config(name: str, scale_factor: float = 1.0, overrides: dict | None = None) -> RunConfig:
    """Config for a catalog scenario; plateau and post-pulse cycles are divided by ``scale_factor``."""
    if name not in SCENARIOS:
        raise ConfigError(f"unknown scenario {name!r}; catalog: {', '.join(sorted(SCENARIOS))}")
    if not scale_factor >= 1:
        raise ConfigError("scale_factor must be >= 1")
    d = copy.deepcopy(SCENARIOS[name]["config"])
    d["name"] = name
    las = d.get("laser")
    if las is not None and scale_factor != 1:
        las["plateau_cycles"] = max(1.0, round(las["plateau_cycles"] / scale_factor, 2))
        if las.get("post_cycles"):
            las["post_cycles"] = max(1.0, round(las["post_cycles"] / scale_factor, 2))
    cfg = RunConfig.from_dict(_merge(d, overrides or {}))
    cfg.meta["scale_factor"] = scale_factor
    return cfg

"""Weakly relativistic two-dimensional spinor TDSE for atoms in intense laser fields."""

from .config import CODE_VERSION as __version__
from .config import ConfigError, RunConfig, load_config, scenario_config
from .eigen import EigenResult, imaginary_time_relax, spectral_eigen, spectral_scan
from .fields import (
    C_LIGHT,
    LaserPulse,
    SoftCorePotential,
    TermToggles,
    intensity_to_field,
    ponderomotive_and_keldysh,
    wavelength_to_omega,
)
from .grid import Grid2D, SpinorWavefunction, gaussian_packet, make_grid, norm
from .observables import Recorder, harmonic_cutoff, radiation_spectrum
from .photoelectron import FluxLedger, energy_spectrum, momentum_spectrum
from .propagator import MaskFunction, PropagatorPlan, propagate, step
from .runner import run, run_scenario

__all__ = [
    "__version__",
    "C_LIGHT",
    "ConfigError",
    "EigenResult",
    "FluxLedger",
    "Grid2D",
    "LaserPulse",
    "MaskFunction",
    "PropagatorPlan",
    "Recorder",
    "RunConfig",
    "SoftCorePotential",
    "SpinorWavefunction",
    "TermToggles",
    "energy_spectrum",
    "gaussian_packet",
    "harmonic_cutoff",
    "imaginary_time_relax",
    "intensity_to_field",
    "load_config",
    "make_grid",
    "momentum_spectrum",
    "norm",
    "ponderomotive_and_keldysh",
    "propagate",
    "radiation_spectrum",
    "run",
    "run_scenario",
    "scenario_config",
    "spectral_eigen",
    "spectral_scan",
    "step",
    "wavelength_to_omega",
]

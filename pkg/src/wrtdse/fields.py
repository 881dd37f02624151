"""Ionic core potentials, the laser pulse and unit conversions.

Everything is in Hartree atomic units.  The pulse is a plane wave polarized
along x and travelling along z; its retarded argument is ``tau = t - z/c``.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

log = logging.getLogger(__name__)

C_LIGHT = 137.036
INTENSITY_AU_WCM2 = 3.50945e16
HC_HARTREE_NM = 45.5633525  # hc / E_h in nm
HARTREE_EV = 27.211386245988

__all__ = [
    "C_LIGHT",
    "INTENSITY_AU_WCM2",
    "HARTREE_EV",
    "SoftCorePotential",
    "HarmonicPotential",
    "FreePotential",
    "LaserPulse",
    "TermToggles",
    "potential_value",
    "potential_gradient",
    "so_prefactor",
    "pulse_fields",
    "intensity_to_field",
    "wavelength_to_omega",
    "ponderomotive_and_keldysh",
    "StrongFieldParameters",
]


# --- potentials ------------------------------------------------------------


@dataclass(frozen=True)
class SoftCorePotential:
    """V(x, z) = -k / sqrt(q_e + x^2 + z^2).

    ``Z`` is the nominal effective nuclear charge and only used as a label.
    """

    k: float
    q_e: float = 1.0
    Z: int | None = None

    def __post_init__(self):
        if not self.k > 0:
            raise ValueError(f"k must be positive, got {self.k}")
        if not self.q_e > 0:
            raise ValueError(f"q_e must be positive, got {self.q_e}")

    def value(self, x, z):
        return -self.k / np.sqrt(self.q_e + x * x + z * z)

    def gradient(self, x, z):
        s = self.k * (self.q_e + x * x + z * z) ** -1.5
        return s * x, s * z

    def laplacian(self, x, z):
        r2 = x * x + z * z
        return self.k * (2 * self.q_e - r2) * (self.q_e + r2) ** -2.5

    def radial_force_over_r(self, x, z):
        """(1/r) dV/dr, finite at the origin."""
        return self.k * (self.q_e + x * x + z * z) ** -1.5

    def ground_radius(self) -> float:
        """Harmonic estimate of the ground-state probability width."""
        omega0 = math.sqrt(self.k * self.q_e**-1.5)
        return 1.0 / math.sqrt(omega0)

    def to_dict(self):
        return {"kind": "softcore", "k": self.k, "q_e": self.q_e, "Z": self.Z}


@dataclass(frozen=True)
class HarmonicPotential:
    """Isotropic well V = omega0^2 r^2 / 2, used as an analytic oracle."""

    omega0: float = 1.0

    def value(self, x, z):
        return 0.5 * self.omega0**2 * (x * x + z * z)

    def gradient(self, x, z):
        w2 = self.omega0**2
        return w2 * x, w2 * z

    def laplacian(self, x, z):
        return 2.0 * self.omega0**2 + 0.0 * (x + z)

    def radial_force_over_r(self, x, z):
        return self.omega0**2 + 0.0 * (x + z)

    def ground_radius(self) -> float:
        return 1.0 / math.sqrt(self.omega0)

    def to_dict(self):
        return {"kind": "harmonic", "omega0": self.omega0}


@dataclass(frozen=True)
class FreePotential:
    """V = 0 everywhere."""

    def value(self, x, z):
        return 0.0 * (x + z)

    def gradient(self, x, z):
        return 0.0 * (x + z), 0.0 * (x + z)

    def laplacian(self, x, z):
        return 0.0 * (x + z)

    def radial_force_over_r(self, x, z):
        return 0.0 * (x + z)

    def ground_radius(self) -> float:
        return 1.0

    def to_dict(self):
        return {"kind": "free"}


def potential_from_dict(d: dict):
    kind = d.get("kind", "softcore")
    if kind == "softcore":
        return SoftCorePotential(float(d["k"]), float(d.get("q_e", 1.0)), d.get("Z"))
    if kind == "harmonic":
        return HarmonicPotential(float(d.get("omega0", 1.0)))
    if kind == "free":
        return FreePotential()
    raise ValueError(f"unknown potential kind {kind!r}")


def potential_value(P, x, z):
    return P.value(x, z)


def potential_gradient(P, x, z):
    return P.gradient(x, z)


def so_prefactor(P, x, z, c: float = C_LIGHT):
    """Spin-orbit radial prefactor f(x, z) = -(1/r) dV/dr / (4 c^2)."""
    return -P.radial_force_over_r(x, z) / (4.0 * c * c)


# --- laser pulse -------------------------------------------------------------


@dataclass(frozen=True)
class LaserPulse:
    """Linear turn-on followed by a constant-amplitude plateau until ``t_p``.

    ``t_on`` is snapped so that omega * t_on = (m + 1/4) 2 pi, which makes the
    vector potential continuous where the ramp meets the plateau.  The value
    asked for is kept in ``t_on_requested``.
    """

    E0: float
    omega: float
    t_on: float
    t_p: float
    c: float = C_LIGHT
    t_on_requested: float | None = None

    def __post_init__(self):
        if not (self.E0 >= 0 and self.omega > 0 and self.c > 0):
            raise ValueError("LaserPulse needs E0 >= 0, omega > 0, c > 0")
        period = 2 * math.pi / self.omega
        cycles = self.t_on / period
        m = max(0, round(cycles - 0.25))
        t_on = (m + 0.25) * period
        if not math.isclose(t_on, self.t_on, rel_tol=0, abs_tol=1e-9 * period):
            log.info("turn-on adjusted from %.6g to %.6g a.u. (%.2f cycles)", self.t_on, t_on, m + 0.25)
        requested = self.t_on if self.t_on_requested is None else self.t_on_requested
        object.__setattr__(self, "t_on", t_on)
        object.__setattr__(self, "t_on_requested", requested)
        if self.t_p < t_on:
            raise ValueError(f"t_p={self.t_p} ends before the turn-on {t_on}")

    @classmethod
    def from_cycles(cls, E0, omega, turn_on_cycles, plateau_cycles, c=C_LIGHT):
        period = 2 * math.pi / omega
        snapped = (max(0, round(turn_on_cycles - 0.25)) + 0.25) * period
        return cls(E0, omega, snapped, snapped + plateau_cycles * period, c,
                   t_on_requested=turn_on_cycles * period)

    @property
    def period(self) -> float:
        return 2 * math.pi / self.omega

    @property
    def turn_on_cycles(self) -> float:
        return self.t_on / self.period

    @property
    def plateau_cycles(self) -> float:
        return (self.t_p - self.t_on) / self.period

    def with_c(self, c: float) -> "LaserPulse":
        return dataclasses.replace(self, c=c)

    def fields(self, z, t, dipole: bool = False):
        return pulse_fields(self, z, t, dipole)

    def to_dict(self):
        return {"E0": self.E0, "omega": self.omega, "t_on": self.t_on, "t_p": self.t_p, "c": self.c}


def pulse_fields(L: LaserPulse, z, t, dipole: bool = False):
    """Return (A_x, E_x, B_y) at retarded time t - z/c.

    With ``dipole=True`` the fields are evaluated at z = 0 for every z.
    Outside 0 < t - z/c < t_p all three vanish.
    """
    z = np.asarray(z, dtype=float)
    if dipole:
        z = np.zeros_like(z)
    tau = t - z / L.c
    ph = L.omega * tau
    s, co = np.sin(ph), np.cos(ph)
    ramp = (tau > 0) & (tau <= L.t_on)
    plat = (tau > L.t_on) & (tau < L.t_p)
    if L.t_on > 0:
        A_ramp = -(L.c * L.E0 / (L.omega * L.t_on)) * (tau * s + co / L.omega)
        E_ramp = L.E0 * tau / L.t_on * co
    else:
        A_ramp = E_ramp = 0.0 * tau
    A = np.where(ramp, A_ramp, np.where(plat, -(L.c * L.E0 / L.omega) * s, 0.0))
    E = np.where(ramp, E_ramp, np.where(plat, L.E0 * co, 0.0))
    if A.ndim == 0:
        A, E = float(A), float(E)
    return A, E, E if np.ndim(E) == 0 else E.copy()


_GAUSS_X, _GAUSS_W = np.polynomial.legendre.leggauss(4)


def pulse_fields_averaged(L: LaserPulse, z, t0: float, t1: float, dipole: bool = False):
    """Time averages of (A_x, E_x, B_y, A_x^2) over [t0, t1] at each z.

    The fields jump where the retarded time crosses 0 (front) and t_p (end
    of the plateau); the interval is split there and each piece integrated
    with 4-point Gauss-Legendre, so a jump inside a step enters with its
    exact weight instead of being sampled at one instant.
    """
    z = np.asarray(z, dtype=float)
    if dipole:
        z = np.zeros_like(z)
    lo, hi = min(t0, t1), max(t0, t1)
    a, b = lo - z / L.c, hi - z / L.c
    cuts = [a, np.clip(0.0, a, b), np.clip(L.t_p, a, b), b]
    sums = [np.zeros_like(a) for _ in range(4)]
    for left, right in zip(cuts[:-1], cuts[1:]):
        half = 0.5 * (right - left)
        mid = 0.5 * (right + left)
        for xg, wg in zip(_GAUSS_X, _GAUSS_W):
            A, E, B = pulse_fields(L, 0.0, mid + half * xg)
            for k, v in enumerate((A, E, B, A * A)):
                sums[k] += wg * half * v
    span = hi - lo
    out = tuple(v / span for v in sums)
    if z.ndim == 0:
        out = tuple(float(v) for v in out)
    return out


# --- toggles -----------------------------------------------------------------


@dataclass(frozen=True)
class TermToggles:
    """Switches for the correction terms of the weakly relativistic Hamiltonian.

    ``a2_factor`` multiplies A^2/c^2 in the interaction exponent; 0.5 follows
    from expanding (p + A/c)^2 / 2, 1.0 reproduces the printed variant.
    """

    dipole_approximation: bool = False
    pauli: bool = False
    mass_shift: bool = False
    darwin: bool = False
    spin_orbit: bool = False
    c_override: float | None = None
    a2_factor: float = 0.5

    def __post_init__(self):
        if self.c_override is not None and not self.c_override > 0:
            raise ValueError("c_override must be positive")

    @property
    def c(self) -> float:
        return C_LIGHT if self.c_override is None else float(self.c_override)

    @property
    def spin_active(self) -> bool:
        return self.pauli or self.spin_orbit

    @classmethod
    def all_on(cls, **kw) -> "TermToggles":
        return cls(pauli=True, mass_shift=True, darwin=True, spin_orbit=True, **kw)

    def replace(self, **kw) -> "TermToggles":
        return dataclasses.replace(self, **kw)

    def to_dict(self):
        return dataclasses.asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


# --- unit conversions ------------------------------------------------------


def intensity_to_field(intensity_wcm2: float) -> float:
    """Peak field in a.u. for a cycle-averaged intensity in W/cm^2."""
    if not intensity_wcm2 > 0:
        raise ValueError("intensity must be positive")
    return math.sqrt(intensity_wcm2 / INTENSITY_AU_WCM2)


def wavelength_to_omega(wavelength_nm: float) -> float:
    if not wavelength_nm > 0:
        raise ValueError("wavelength must be positive")
    return HC_HARTREE_NM / wavelength_nm


class StrongFieldParameters(NamedTuple):
    Up: float
    keldysh: float
    cutoff_order: int
    cutoff_energy: float


def ponderomotive_and_keldysh(E0: float, omega: float, Ip: float) -> StrongFieldParameters:
    """U_p = E0^2/(4 omega^2), gamma_K = sqrt(Ip / (2 U_p)) and the I_p + 3.17 U_p cutoff."""
    if not (omega > 0 and Ip > 0 and E0 >= 0):
        raise ValueError("need omega > 0, Ip > 0, E0 >= 0")
    Up = E0 * E0 / (4 * omega * omega)
    gamma = math.inf if Up == 0 else math.sqrt(Ip / (2 * Up))
    ecut = Ip + 3.17 * Up
    return StrongFieldParameters(Up, gamma, int(round(ecut / omega)), ecut)

"""Photoelectron spectra from absorbed flux plus the ionized part left in the box.

Amplitude removed by the absorber at time t_a is transformed along x and
stored with the phase exp(+i p_x^2 t_a / 2).  At the final time t_f the
accumulator is multiplied by exp(-i p_x^2 t_f / 2), which completes free
propagation over t_f - t_a, and added to the x-transform of the residual
in-box wavefunction outside the bound region.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.fft as sfft

from .fields import C_LIGHT, HARTREE_EV
from .grid import Grid2D, SpinorWavefunction, norm
from .observables import write_csv

__all__ = [
    "FluxLedger",
    "IonizationWindow",
    "MomentumSpectrum",
    "EnergySpectrum",
    "accumulate_flux",
    "slice_residual",
    "momentum_spectrum",
    "energy_spectrum",
    "kinetic_energy",
    "energy_jacobian",
    "comb_spacing",
]


def _embed_x(a: np.ndarray, nx_pad: int) -> np.ndarray:
    """Place a (..., nx, nz) field in the middle of a zero array of width nx_pad.

    The origin stays at index nx_pad // 2 so phases referenced to x = 0 are kept.
    """
    nx = a.shape[-2]
    if nx_pad == nx:
        return a
    out = np.zeros(a.shape[:-2] + (nx_pad, a.shape[-1]), dtype=complex)
    off = nx_pad // 2 - nx // 2
    out[..., off: off + nx, :] = a
    return out


def _x_transform(a: np.ndarray, nx_pad: int) -> np.ndarray:
    """Unitary x-transform with the phase referenced to x = 0."""
    out = sfft.fft(_embed_x(a, nx_pad), axis=-2, norm="ortho")
    out *= _origin_phase(nx_pad)
    return out


def _origin_phase(nx_pad: int) -> np.ndarray:
    # moving the origin from index nx_pad // 2 to index 0 (an ifftshift)
    k = np.arange(nx_pad)
    return np.exp(2j * np.pi * k * (nx_pad // 2) / nx_pad)[:, None]


class FluxLedger:
    """Running sum of absorbed amplitude in the (p_x, z) representation.

    Parameters
    ----------
    grid : Grid2D
    pad_x : int
        Zero-padding factor along x; refines the momentum lattice by that factor.
    propagate_z : bool
        Also advance each flux piece with the z kinetic phase (exact free
        propagation in 2D).  Off by default: only p_x^2/2 is used.
    """

    def __init__(self, grid: Grid2D, pad_x: int = 1, propagate_z: bool = False):
        if pad_x < 1 or int(pad_x) != pad_x:
            raise ValueError("pad_x must be a positive integer")
        self.grid = grid
        self.pad_x = int(pad_x)
        self.propagate_z = bool(propagate_z)
        self.nx_pad = grid.nx * self.pad_x
        self.dx = grid.dx
        self.kx = 2 * np.pi * sfft.fftfreq(self.nx_pad, d=grid.dx)
        self.accumulator = np.zeros((2, self.nx_pad, grid.nz), dtype=complex)
        self.absorbed_probability = 0.0
        self.entries = 0
        self.last_time: float | None = None

    @property
    def dkx(self) -> float:
        return 2 * np.pi / (self.nx_pad * self.dx)

    def _phase(self, t: float, sign: float) -> np.ndarray:
        """exp(sign i E t) with E = p_x^2/2 (shape (nkx, 1)) or p^2/2 (shape (nkx, nz))."""
        e = 0.5 * self.kx[:, None] ** 2
        if self.propagate_z:
            e = e + 0.5 * self.grid.kz[None, :] ** 2
        return np.exp(sign * 1j * e * t)

    def to_arrays(self) -> dict:
        return {
            "accumulator": self.accumulator,
            "absorbed_probability": np.array(self.absorbed_probability),
            "entries": np.array(self.entries),
            "pad_x": np.array(self.pad_x),
            "propagate_z": np.array(self.propagate_z),
            "last_time": np.array(np.nan if self.last_time is None else self.last_time),
        }

    def save(self, path) -> Path:
        path = Path(path)
        with open(path, "wb") as fh:
            np.savez(fh, **self.to_arrays())
        return path

    @classmethod
    def load(cls, path, grid: Grid2D) -> "FluxLedger":
        with np.load(path) as d:
            led = cls(grid, int(d["pad_x"]), bool(d["propagate_z"]))
            if d["accumulator"].shape != led.accumulator.shape:
                raise ValueError(f"{path}: ledger shape does not match the grid")
            led.accumulator[...] = d["accumulator"]
            led.absorbed_probability = float(d["absorbed_probability"])
            led.entries = int(d["entries"])
            lt = float(d["last_time"])
            led.last_time = None if math.isnan(lt) else lt
        return led


def accumulate_flux(ledger: FluxLedger, flux, t_alpha: float | None = None,
                    removed_probability: float | None = None) -> FluxLedger:
    """Add one absorbed piece to the ledger.

    ``flux`` is a SpinorWavefunction (its ``time`` is used when ``t_alpha`` is
    None) or an array (2, nx, nz).  ``removed_probability`` is the drop of the
    in-box norm caused by the mask; when omitted the norm of the removed
    amplitude is used.
    """
    if flux is None:
        return ledger
    if isinstance(flux, SpinorWavefunction):
        data = flux.data
        if t_alpha is None:
            t_alpha = flux.time
    else:
        data = np.asarray(flux)
    if t_alpha is None:
        raise ValueError("t_alpha is required for raw flux arrays")
    active = [s for s in range(2) if np.any(data[s])]
    if not active:
        return ledger
    for s in active:
        ft = _x_transform(data[s], ledger.nx_pad)
        if ledger.propagate_z:
            ft = sfft.fft(ft, axis=-1, norm="ortho")
        ft *= ledger._phase(t_alpha, +1.0)
        if ledger.propagate_z:
            ft = sfft.ifft(ft, axis=-1, norm="ortho")
        ledger.accumulator[s] += ft
    if removed_probability is None:
        removed_probability = float(np.sum(np.abs(data) ** 2) * ledger.grid.cell)
    ledger.absorbed_probability += removed_probability
    ledger.entries += 1
    ledger.last_time = t_alpha
    return ledger


@dataclass(frozen=True)
class IonizationWindow:
    """Bound region |x| < X_I is dropped; a sin^2 ramp of width X_0 follows."""

    X_I: float
    X_0: float = 10.0

    def __post_init__(self):
        if self.X_I < 0 or self.X_0 < 0:
            raise ValueError("X_I and X_0 must be non-negative")

    def validate(self, grid: Grid2D):
        if self.X_I + self.X_0 >= min(abs(grid.x_min), grid.x_max):
            raise ValueError(
                f"ionization window X_I + X_0 = {self.X_I + self.X_0:g} exceeds the box half-width"
            )

    def factor(self, x: np.ndarray) -> np.ndarray:
        ax = np.abs(x)
        f = np.ones_like(ax, dtype=float)
        f[ax < self.X_I] = 0.0
        if self.X_0 > 0:
            ramp = (ax >= self.X_I) & (ax <= self.X_I + self.X_0)
            f[ramp] = np.sin(0.5 * np.pi * (ax[ramp] - self.X_I) / self.X_0) ** 2
        return f

    def to_dict(self):
        return {"X_I": self.X_I, "X_0": self.X_0}


def slice_residual(psi: SpinorWavefunction, window: IonizationWindow) -> SpinorWavefunction:
    """Residual ionized part: psi times the window factor along x, per spin component."""
    window.validate(psi.grid)
    out = psi.copy()
    out.data *= window.factor(psi.grid.x)[:, None]
    return out


@dataclass
class MomentumSpectrum:
    """Amplitude Psi_p(p_x, z) per spin component; p_x in FFT order."""

    kx: np.ndarray
    z: np.ndarray
    amplitude: np.ndarray  # (2, nkx, nz)
    dkx: float
    dz: float
    dx: float
    meta: dict = field(default_factory=dict)

    def density(self, spin: int | None = None) -> np.ndarray:
        """|Psi_p|^2 summed over spin (or one component) per unit p_x per unit z."""
        a = self.amplitude if spin is None else self.amplitude[spin: spin + 1]
        return (np.abs(a) ** 2).sum(axis=0) * (self.dx / self.dkx)

    def px_density(self, spin: int | None = None) -> np.ndarray:
        """Probability per unit p_x with z integrated out."""
        return self.density(spin).sum(axis=1)

    def total_probability(self) -> float:
        return float(np.sum(np.abs(self.amplitude) ** 2) * self.dx * self.dz)


def momentum_spectrum(ledger: FluxLedger | None, psi_out: SpinorWavefunction | None, t_f: float) -> MomentumSpectrum:
    """Psi_p = FFT_x[psi_out] + exp(-i p_x^2 t_f / 2) * accumulator."""
    if ledger is None and psi_out is None:
        raise ValueError("need a ledger or a residual wavefunction")
    grid = ledger.grid if ledger is not None else psi_out.grid
    nx_pad = ledger.nx_pad if ledger is not None else grid.nx
    kx = 2 * np.pi * sfft.fftfreq(nx_pad, d=grid.dx)
    amp = np.zeros((2, nx_pad, grid.nz), dtype=complex)
    if psi_out is not None:
        amp += _x_transform(psi_out.data, nx_pad)
    if ledger is not None and ledger.entries:
        acc = ledger.accumulator
        if ledger.propagate_z:
            acc = sfft.fft(acc, axis=-1, norm="ortho") * ledger._phase(t_f, -1.0)
            acc = sfft.ifft(acc, axis=-1, norm="ortho")
        else:
            acc = acc * ledger._phase(t_f, -1.0)
        amp += acc
    # unitary transform in x: sum |amp|^2 dx dz equals probability
    meta = {"t_f": t_f, "propagate_z": bool(ledger.propagate_z) if ledger else False,
            "pad_x": nx_pad // grid.nx}
    return MomentumSpectrum(kx, grid.z, amp, 2 * np.pi / (nx_pad * grid.dx), grid.dz, grid.dx, meta)


def kinetic_energy(p, c: float = C_LIGHT):
    """epsilon_x = p^2/2 - p^4/(8 c^2)."""
    p = np.asarray(p, dtype=float)
    return 0.5 * p * p - p**4 / (8 * c * c)


def energy_jacobian(eps, c: float = C_LIGHT):
    """dp/d(epsilon) in the weakly relativistic approximation, (1 + eps/c^2)/sqrt(2 eps)."""
    eps = np.asarray(eps, dtype=float)
    return (1 + eps / (c * c)) / np.sqrt(2 * eps)


@dataclass
class EnergySpectrum:
    """P(epsilon) per unit energy on the native p_x lattice (p_x = 0 excluded)."""

    energy: np.ndarray  # hartree, ascending, from the positive-p branch
    positive: np.ndarray
    negative: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def total(self) -> np.ndarray:
        return self.positive + self.negative

    def resample(self, grid_eps: np.ndarray, which: str = "total") -> np.ndarray:
        y = getattr(self, which)
        return np.interp(grid_eps, self.energy, y, left=0.0, right=0.0)

    def integral(self, which: str = "total") -> float:
        return float(np.trapezoid(getattr(self, which), self.energy))

    def write_csv(self, path, meta: dict | None = None) -> Path:
        return write_csv(
            path,
            {
                "energy_eV": ("eV", self.energy * HARTREE_EV),
                "energy_au": ("hartree", self.energy),
                "P_total": ("1/hartree", self.total),
                "P_positive": ("1/hartree", self.positive),
                "P_negative": ("1/hartree", self.negative),
            },
            {**self.meta, **(meta or {})},
        )


def energy_spectrum(spectrum: MomentumSpectrum, c: float = C_LIGHT, spin: int | None = None) -> EnergySpectrum:
    """Map |Psi_p|^2 (z integrated) to a kinetic-energy distribution.

    Positive and negative p_x are reported separately on the energy axis of
    the positive branch; the lattice is symmetric so both share it.
    """
    rho = spectrum.px_density(spin) * spectrum.dz
    kx = spectrum.kx
    n = len(kx)
    pos = np.arange(1, (n + 1) // 2)  # 0 < p < p_max
    neg = (n - pos) % n  # -p
    p = kx[pos]
    eps = kinetic_energy(p, c)
    jac = energy_jacobian(eps, c)
    return EnergySpectrum(eps, rho[pos] * jac, rho[neg] * jac, {"c": c, "dkx": spectrum.dkx})


def comb_spacing(spec: EnergySpectrum, omega: float, e_min: float, e_max: float,
                 which: str = "total", min_prominence: float = 0.3):
    """Locate ATI peaks in [e_min, e_max] and return (positions, spacings).

    Peaks are local maxima of log10 P with at least ``min_prominence``
    decades of prominence; positions are refined quadratically in log P.
    """
    from scipy.signal import find_peaks

    y = getattr(spec, which)
    sel = np.nonzero((spec.energy >= e_min) & (spec.energy <= e_max))[0]
    ly = np.log10(np.maximum(y[sel], 1e-300))
    idx, _ = find_peaks(ly, prominence=min_prominence, distance=max(1, int(0.3 * omega / _bin(spec, sel))))
    pos = []
    e = spec.energy[sel]
    for i in idx:
        if 0 < i < len(ly) - 1:
            y0, y1, y2 = ly[i - 1], ly[i], ly[i + 1]
            den = y0 - 2 * y1 + y2
            sh = 0.5 * (y0 - y2) / den if den != 0 else 0.0
            de = 0.5 * (e[i + 1] - e[i - 1])
            pos.append(e[i] + sh * de)
        else:
            pos.append(e[i])
    pos = np.array(pos)
    return pos, np.diff(pos)


def _bin(spec: EnergySpectrum, sel) -> float:
    e = spec.energy[sel]
    return float(np.median(np.diff(e))) if len(e) > 1 else 1.0

"""Expectation values, accelerations, radiation spectra and line analysis."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.fft as sfft
from scipy.signal import find_peaks

from .fields import TermToggles
from .grid import Grid2D, SpinorWavefunction, norm

__all__ = [
    "TimeSeriesRecord",
    "SpectrumRecord",
    "Recorder",
    "SplittingReport",
    "SpectrumError",
    "record_center_of_mass",
    "acceleration",
    "radiation_spectrum",
    "spin_down_population",
    "line_shift",
    "splitting_analysis",
    "harmonic_peaks",
    "harmonic_cutoff",
    "dominant_frequency",
    "write_csv",
]


class SpectrumError(ValueError):
    pass


# --- records ---------------------------------------------------------------------


@dataclass
class TimeSeriesRecord:
    name: str
    times: np.ndarray
    values: np.ndarray
    unit: str = "a.u."
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.values = np.asarray(self.values)
        if self.times.shape[0] != self.values.shape[0]:
            raise ValueError("times and values differ in length")

    @property
    def dt(self) -> float:
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0

    def write_csv(self, path) -> Path:
        return write_csv(path, {"time": ("a.u.", self.times), self.name: (self.unit, self.values)}, self.meta)


@dataclass
class SpectrumRecord:
    """Power spectrum on a frequency axis in units of ``omega_ref``."""

    frequency: np.ndarray
    power: np.ndarray
    channel: str = "x"
    omega_ref: float = 1.0
    window: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def resolution(self) -> float:
        """2 pi / T_window in units of omega_ref."""
        T = self.window.get("t1", 0.0) - self.window.get("t0", 0.0)
        return 2 * math.pi / T / self.omega_ref if T > 0 else float("nan")

    def log_power(self, floor: float = 1e-300) -> np.ndarray:
        return np.log10(np.maximum(self.power, floor))

    def write_csv(self, path) -> Path:
        return write_csv(
            path,
            {
                "frequency": ("omega", self.frequency),
                "power": ("arb", self.power),
                "log10_power": ("log10 arb", self.log_power()),
            },
            {**self.meta, "channel": self.channel, "omega_ref": self.omega_ref, "window": self.window},
        )


def write_csv(path, columns: dict, meta: dict | None = None) -> Path:
    """CSV with a column-name row and a unit row, plus a JSON sidecar ``<path>.json``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = list(columns)
    arrays = [np.asarray(columns[n][1]) for n in names]
    n = len(arrays[0])
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        w.writerow([columns[k][0] for k in names])
        for i in range(n):
            w.writerow([repr(float(a[i].real)) if np.iscomplexobj(a) else repr(float(a[i])) for a in arrays])
    if meta is not None:
        path.with_suffix(path.suffix + ".json").write_text(json.dumps(meta, indent=2, sort_keys=True, default=str))
    return path


# --- expectation values ------------------------------------------------------------


def record_center_of_mass(psi: SpinorWavefunction, window=None) -> tuple[float, float]:
    """(<x>, <z>) summed over both spin components.

    ``window = (x_lo, x_hi, z_lo, z_hi)`` restricts the sums to a box around
    the core so that ionized flux far away does not dominate.
    """
    g = psi.grid
    rho = psi.density()
    x, z = g.x, g.z
    if window is not None:
        x_lo, x_hi, z_lo, z_hi = window
        mx = (x >= x_lo) & (x <= x_hi)
        mz = (z >= z_lo) & (z <= z_hi)
        rho = rho[np.ix_(mx, mz)]
        x, z = x[mx], z[mz]
    xm = float(np.dot(x, rho.sum(axis=1)) * g.cell)
    zm = float(np.dot(z, rho.sum(axis=0)) * g.cell)
    return xm, zm


def spin_down_population(psi: SpinorWavefunction) -> float:
    d = psi.down
    return float((d.real**2 + d.imag**2).sum() * psi.grid.cell)


def _laplacian(a: np.ndarray, grid: Grid2D) -> np.ndarray:
    KX, KZ = grid.kmesh()
    return sfft.ifft2(-(KX**2 + KZ**2) * sfft.fft2(a, axes=(-2, -1)), axes=(-2, -1))


def acceleration(
    psi: SpinorWavefunction,
    potential,
    toggles: TermToggles | None = None,
    relativistic: bool | None = None,
    ordering: str = "product",
    laser_field: float | None = None,
) -> tuple[float, float]:
    """Weakly relativistic dipole acceleration (a_x, a_z).

    a_i = <(1 + (3/2c^2) nabla^2) F_i> with F = -grad V.  ``ordering`` chooses
    whether the Laplacian acts on the product F_i psi ("product", default) or
    on F_i alone ("local").  The correction is included when ``relativistic``
    is true, by default when mass_shift is on.  ``laser_field`` (E_x at the
    sample time) adds the -E_x force for Ehrenfest checks; radiation spectra
    leave it out.
    """
    toggles = toggles or TermToggles()
    if relativistic is None:
        relativistic = toggles.mass_shift
    g = psi.grid
    X, Z = g.mesh()
    gx, gz = potential.gradient(X, Z)
    out = []
    coef = 1.5 / toggles.c**2
    for F in (-gx, -gz):
        total = 0.0
        for s in (0, 1):
            a = psi.data[s]
            if not np.any(a):
                continue
            dens = a.real**2 + a.imag**2
            val = float(np.sum(F * dens))
            if relativistic:
                if ordering == "product":
                    val += coef * np.vdot(a, _laplacian(F * a, g)).real
                elif ordering == "local":
                    val += coef * float(np.sum(_laplacian(F, g).real * dens))
                else:
                    raise ValueError(f"unknown ordering {ordering!r}")
            total += val
        out.append(total * g.cell)
    if laser_field is not None:
        out[0] -= laser_field * norm(psi)
    return out[0], out[1]


# --- spectra ----------------------------------------------------------------------


def radiation_spectrum(
    series,
    omega_ref: float,
    window: tuple[float, float] | None = None,
    channel: str = "x",
    pad: int = 4,
    subtract_mean: bool = False,
) -> SpectrumRecord:
    """|FFT(w(t) a(t))|^2 over ``window`` with a Hann window.

    ``series`` is a TimeSeriesRecord or a (times, values) pair sampled
    uniformly.  The frequency axis is in units of ``omega_ref``.
    """
    if isinstance(series, TimeSeriesRecord):
        t, a = series.times, np.asarray(series.values, dtype=float)
    else:
        t, a = (np.asarray(v, dtype=float) for v in series)
    if len(t) < 8:
        raise SpectrumError("time series too short")
    t0, t1 = (t[0], t[-1]) if window is None else window
    eps = 1e-9 * max(1.0, abs(t1))
    if t0 < t[0] - eps or t1 > t[-1] + eps or t1 <= t0:
        raise SpectrumError(f"window [{t0}, {t1}] outside recorded span [{t[0]}, {t[-1]}]")
    sel = (t >= t0 - eps) & (t <= t1 + eps)
    ts, av = t[sel], a[sel]
    if subtract_mean:
        av = av - av.mean()
    dt = float(ts[1] - ts[0])
    n = len(av)
    w = np.hanning(n)
    size = int(2 ** math.ceil(math.log2(max(pad, 1) * n)))
    amp = sfft.rfft(w * av, n=size) * dt
    freq = 2 * math.pi * sfft.rfftfreq(size, d=dt) / omega_ref
    return SpectrumRecord(
        freq, np.abs(amp) ** 2, channel, omega_ref,
        {"kind": "hann", "t0": float(ts[0]), "t1": float(ts[-1]), "samples": n, "pad": size},
    )


def dominant_frequency(spec: SpectrumRecord, f_min: float = 0.0) -> float:
    """Frequency of the strongest peak above ``f_min`` (quadratic refinement)."""
    sel = np.nonzero(spec.frequency > f_min)[0]
    i = sel[np.argmax(spec.power[sel])]
    return _refine(spec.frequency, np.log(np.maximum(spec.power, 1e-300)), i)


def _refine(freq, y, i):
    if i <= 0 or i >= len(y) - 1:
        return float(freq[i])
    y0, y1, y2 = y[i - 1], y[i], y[i + 1]
    den = y0 - 2 * y1 + y2
    shift = 0.5 * (y0 - y2) / den if den != 0 else 0.0
    return float(freq[i] + shift * (freq[1] - freq[0]))


def line_shift(spec_a: SpectrumRecord, spec_b: SpectrumRecord, band: tuple[float, float],
               prominence: float = 1.0) -> tuple[float, float, float]:
    """Peak positions of the dominant line in ``band`` and their difference A - B.

    The peak is refined by quadratic interpolation of the log power.  A peak
    must stand ``prominence`` decades above the band minimum.
    """
    if spec_a.frequency.shape != spec_b.frequency.shape or not np.allclose(spec_a.frequency, spec_b.frequency):
        raise SpectrumError("spectra are on different frequency axes")
    pos = []
    for spec in (spec_a, spec_b):
        sel = np.nonzero((spec.frequency >= band[0]) & (spec.frequency <= band[1]))[0]
        if len(sel) < 3:
            raise SpectrumError("band contains fewer than three bins")
        ly = spec.log_power()
        sub = ly[sel]
        i = int(np.argmax(sub))
        if sub[i] - sub.min() < prominence:
            raise SpectrumError("no peak above the prominence threshold in band")
        peaks, _ = find_peaks(sub)
        if len(peaks) > 1:
            hp = np.sort(sub[peaks])[::-1]
            if hp[0] - hp[1] < 1e-6:
                raise SpectrumError("multiple equal peaks in band")
        pos.append(_refine(spec.frequency, ly, sel[i]))
    return pos[0], pos[1], pos[0] - pos[1]


@dataclass
class SplittingReport:
    count: int
    positions: list
    splittings: list
    resolution: float
    upper_bound: bool

    @property
    def max_splitting(self) -> float:
        return float(max(self.splittings)) if self.splittings else 0.0


def splitting_analysis(spec: SpectrumRecord, band: tuple[float, float], prominence: float = 1.0,
                       rel_height: float = 2.0) -> SplittingReport:
    """Resolve the line structure inside ``band``.

    Peaks are local maxima of log10 power with at least ``prominence``
    decades of prominence and within ``rel_height`` decades of the strongest
    peak in the band.  A single peak is reported with the spectral resolution
    as an upper bound on any hidden splitting.
    """
    sel = np.nonzero((spec.frequency >= band[0]) & (spec.frequency <= band[1]))[0]
    if len(sel) < 3:
        raise SpectrumError("band contains fewer than three bins")
    ly = spec.log_power()[sel]
    idx, props = find_peaks(ly, prominence=prominence)
    if len(idx) == 0:
        raise SpectrumError("no peak above the prominence threshold in band")
    top = ly[idx].max()
    idx = idx[ly[idx] >= top - rel_height]
    full = spec.log_power()
    positions = sorted(_refine(spec.frequency, full, sel[i]) for i in idx)
    res = float(spec.frequency[1] - spec.frequency[0])
    if np.isfinite(spec.resolution):
        res = max(res, spec.resolution)
    splits = list(np.diff(positions))
    return SplittingReport(len(positions), positions, splits if splits else [res], res, len(positions) < 2)


def harmonic_peaks(spec: SpectrumRecord, max_order: int | None = None) -> tuple[np.ndarray, np.ndarray]:
    """(orders, peak power) taking the maximum power within +-0.5 of each integer order."""
    f = spec.frequency
    top = int(math.floor(f[-1] - 0.5)) if max_order is None else max_order
    orders = np.arange(1, top + 1)
    peaks = np.empty(len(orders))
    for j, q in enumerate(orders):
        sel = (f >= q - 0.5) & (f < q + 0.5)
        peaks[j] = spec.power[sel].max() if np.any(sel) else 0.0
    return orders, peaks


def harmonic_cutoff(spec: SpectrumRecord, start_order: int = 5, max_order: int | None = None,
                    min_segment: int = 3) -> float:
    """Cutoff harmonic order from a plateau / cliff / floor fit of the odd-order envelope.

    log10 peak power at odd orders is fitted by a continuous three-piece
    linear function; the first breakpoint (end of the plateau) is returned.
    Each piece spans at least ``min_segment`` odd orders.  A least-squares
    fit over the whole range is insensitive to the decade-level scatter
    between neighbouring plateau harmonics.  Below-threshold orders
    (q < I_p/omega) fall off on their own, so for atomic spectra pass
    ``start_order=ceil(I_p/omega)``.
    """
    orders, peaks = harmonic_peaks(spec, max_order)
    sel = (orders % 2 == 1) & (orders >= start_order) & (peaks > 0)
    q = orders[sel].astype(float)
    lp = np.log10(peaks[sel])
    n = len(q)
    if n < 3 * min_segment + 2:
        raise SpectrumError("too few harmonic orders for a cutoff estimate")
    best, cut = np.inf, None
    base = np.column_stack([np.ones(n), q])
    for i in range(min_segment, n - 2 * min_segment):
        h1 = np.maximum(q - q[i], 0.0)
        for j in range(i + min_segment, n - min_segment):
            B = np.column_stack([base, h1, np.maximum(q - q[j], 0.0)])
            coef, *_ = np.linalg.lstsq(B, lp, rcond=None)
            r = float(np.sum((B @ coef - lp) ** 2))
            if r < best:
                best, cut = r, q[i]
    return float(cut)


# --- recorder used during propagation ---------------------------------------------


class Recorder:
    """Collects <x>, <z>, a_x, a_z, P_down and norm every ``cadence`` steps."""

    COLUMNS = ("x", "z", "a_x", "a_z", "p_down", "norm")
    UNITS = ("bohr", "bohr", "a.u.", "a.u.", "1", "1")

    def __init__(self, potential, toggles: TermToggles, cadence: int = 1, window=None,
                 accelerations: bool = True, ordering: str = "product"):
        self.potential = potential
        self.toggles = toggles
        self.cadence = max(1, int(cadence))
        self.window = window
        self.accelerations = accelerations
        self.ordering = ordering
        self.times: list[float] = []
        self.rows: list[tuple] = []

    def __call__(self, i: int, psi: SpinorWavefunction, flux=None):
        if i % self.cadence:
            return
        self.sample(psi)

    def sample(self, psi: SpinorWavefunction):
        x, z = record_center_of_mass(psi, self.window)
        if self.accelerations:
            ax, az = acceleration(psi, self.potential, self.toggles, ordering=self.ordering)
        else:
            ax = az = 0.0
        self.times.append(psi.time)
        self.rows.append((x, z, ax, az, spin_down_population(psi), norm(psi)))

    def series(self, name: str) -> TimeSeriesRecord:
        j = self.COLUMNS.index(name)
        return TimeSeriesRecord(name, np.array(self.times), np.array([r[j] for r in self.rows]), self.UNITS[j])

    def state(self) -> dict:
        return {"times": list(self.times), "rows": [list(r) for r in self.rows]}

    def load_state(self, d: dict):
        self.times = list(d["times"])
        self.rows = [tuple(r) for r in d["rows"]]

    def write_csv(self, path, meta: dict | None = None) -> Path:
        cols = {"time": ("a.u.", np.array(self.times))}
        for j, (name, unit) in enumerate(zip(self.COLUMNS, self.UNITS)):
            cols[name] = (unit, np.array([r[j] for r in self.rows]))
        return write_csv(path, cols, meta)

"""Field-free eigenstates of the model ion.

Two independent routes:

* the spectral method: propagate a probe packet with no symmetry, Fourier
  transform its windowed autocorrelation and read the levels off the peaks;
  states are recovered by filtering the stored trajectory at each level;
* imaginary-time relaxation with Gram-Schmidt deflation.

The field-free problem is spin diagonal, so both work on the spin-up
channel.  Each state is tagged with its (x, z) parity sector and an estimate
of |m| from <L_y^2>.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.fft as sfft

from .fields import TermToggles, so_prefactor
from .grid import Grid2D, SpinorWavefunction, gaussian_packet, read_snapshot, write_snapshot
from .propagator import PropagatorPlan, step

log = logging.getLogger(__name__)

__all__ = [
    "SpectralLine",
    "EigenResult",
    "SplittingResult",
    "EigenError",
    "spectral_scan",
    "project_state",
    "project_states",
    "imaginary_time_relax",
    "field_free_so_splitting",
    "field_free_energy",
    "parity_project",
    "parity_of",
    "angular_momentum_y",
    "probe_packet",
    "spectral_eigen",
    "so_shift_by_propagation",
    "circular_so_state",
    "SECTORS",
]

SECTORS = ("ee", "oe", "eo", "oo")  # (x parity, z parity); o = odd


class EigenError(RuntimeError):
    pass


# --- parity and angular momentum ----------------------------------------------


def _reflect(a: np.ndarray, axis: int) -> np.ndarray:
    """a(-x) on the periodic lattice whose origin sits at index n//2."""
    n = a.shape[axis]
    idx = (2 * (n // 2) - np.arange(n)) % n
    return np.take(a, idx, axis=axis)


def parity_project(a: np.ndarray, sector: str) -> np.ndarray:
    """Project a field (..., nx, nz) onto a parity sector such as 'oe'."""
    sx = 1.0 if sector[0] == "e" else -1.0
    sz = 1.0 if sector[1] == "e" else -1.0
    b = 0.5 * (a + sx * _reflect(a, -2))
    return 0.5 * (b + sz * _reflect(b, -1))


def parity_of(a: np.ndarray) -> str:
    """Dominant parity sector of a field."""
    weights = [np.sum(np.abs(parity_project(a, s)) ** 2) for s in SECTORS]
    return SECTORS[int(np.argmax(weights))]


def angular_momentum_y(a: np.ndarray, grid: Grid2D) -> np.ndarray:
    """L_y a = (z p_x - x p_z) a, derivatives taken spectrally."""
    X, Z = grid.odd_mesh()
    kx = grid.derivative_kx()[:, None]
    kz = grid.derivative_kz()[None, :]
    px = sfft.ifft(kx * sfft.fft(a, axis=-2), axis=-2)
    pz = sfft.ifft(kz * sfft.fft(a, axis=-1), axis=-1)
    return Z * px - X * pz


def _m_estimate(a: np.ndarray, grid: Grid2D) -> float:
    la = angular_momentum_y(a, grid)
    return math.sqrt(max(np.vdot(la, la).real / max(np.vdot(a, a).real, 1e-300), 0.0))


def _label(sector: str, m_abs: float) -> str:
    kind = "symmetric" if round(m_abs) == 0 else "asymmetric"
    return f"{kind}:{sector}:m{round(m_abs)}"


# --- energies -------------------------------------------------------------------


def _kinetic_table(grid: Grid2D, toggles: TermToggles) -> np.ndarray:
    KX, KZ = grid.kmesh()
    k2 = KX**2 + KZ**2
    t = 0.5 * k2
    if toggles.mass_shift:
        t = t - k2 * k2 / (8 * toggles.c**2)
    return t


def _static_potential(grid: Grid2D, potential, toggles: TermToggles) -> np.ndarray:
    X, Z = grid.mesh()
    v = potential.value(X, Z)
    if toggles.darwin:
        v = v - potential.laplacian(X, Z) / (8 * toggles.c**2)
    return v


def _apply_h(a: np.ndarray, kin: np.ndarray, v: np.ndarray) -> np.ndarray:
    return sfft.ifft2(kin * sfft.fft2(a, norm="ortho"), norm="ortho") + v * a


def field_free_energy(psi, potential, toggles: TermToggles | None = None) -> tuple[float, float]:
    """(<H>, <H^2> - <H>^2) of the scalar field-free Hamiltonian, per unit norm."""
    toggles = toggles or TermToggles()
    if isinstance(psi, SpinorWavefunction):
        grid, comps = psi.grid, [psi.up, psi.down]
    else:
        grid, comps = psi
    kin = _kinetic_table(grid, toggles)
    v = _static_potential(grid, potential, toggles)
    e = e2 = nrm = 0.0
    for a in comps:
        if not np.any(a):
            continue
        ha = _apply_h(a, kin, v)
        e += np.vdot(a, ha).real
        e2 += np.vdot(ha, ha).real
        nrm += np.vdot(a, a).real
    e /= nrm
    return e, max(e2 / nrm - e * e, 0.0)


# --- results --------------------------------------------------------------------


@dataclass
class SpectralLine:
    energy: float
    amplitude: float
    linewidth: float
    sector: str = "all"


@dataclass
class EigenResult:
    """Eigenenergies (hartree), normalized spin-up states and symmetry labels."""

    energies: list  # (index, energy, linewidth)
    states: list  # SpinorWavefunction
    labels: list  # str
    meta: dict = field(default_factory=dict)

    @property
    def values(self) -> np.ndarray:
        return np.array([e for _, e, _ in self.energies])

    def overlap_matrix(self) -> np.ndarray:
        n = len(self.states)
        m = np.zeros((n, n), dtype=complex)
        for i in range(n):
            for j in range(n):
                m[i, j] = self.states[i].overlap(self.states[j])
        return m

    def save(self, directory, tag: str = "") -> Path:
        """Write one snapshot per state plus ``index.json``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        entries = []
        for (i, e, w), s, lab in zip(self.energies, self.states, self.labels):
            name = f"state_{i:03d}.snap"
            write_snapshot(directory / name, s, tag)
            entries.append({"index": i, "energy": e, "linewidth": w, "label": lab, "file": name})
        index = {"states": entries, "meta": self.meta}
        (directory / "index.json").write_text(json.dumps(index, indent=2, sort_keys=True))
        return directory / "index.json"

    @classmethod
    def load(cls, directory) -> "EigenResult":
        directory = Path(directory)
        index = json.loads((directory / "index.json").read_text())
        energies, states, labels = [], [], []
        for ent in index["states"]:
            psi, _ = read_snapshot(directory / ent["file"])
            energies.append((ent["index"], ent["energy"], ent["linewidth"]))
            states.append(psi)
            labels.append(ent["label"])
        return cls(energies, states, labels, index.get("meta", {}))


# --- spectral method --------------------------------------------------------------


def probe_packet(grid: Grid2D, potential, width: float | None = None, offset=(1.5, 0.9)) -> SpinorWavefunction:
    """Off-centre Gaussian that breaks both reflection symmetries."""
    r0 = potential.ground_radius()
    w = r0 if width is None else width
    return gaussian_packet(grid, offset[0] * r0, offset[1] * r0, w, 1.1 * w)


def _autocorrelation_spectrum(corr: np.ndarray, dt: float, pad: int = 16):
    """Hann-windowed spectrum of c(t) = <psi0|psi(t)> extended by c(-t) = c(t)*.

    Returns (energies, spectrum) sorted by energy; peaks sit at eigenenergies.
    """
    n = len(corr) - 1
    T = n * dt
    t = np.arange(n + 1) * dt
    w = np.cos(0.5 * np.pi * t / T) ** 2
    cw = corr * w
    size = int(2 ** math.ceil(math.log2(pad * (2 * n + 1))))
    buf = np.zeros(size, dtype=complex)
    buf[: n + 1] = cw
    buf[size - n:] = np.conj(cw[1:][::-1])
    # sum_n c(t_n) exp(+i E t_n) -> inverse FFT convention
    spec = sfft.ifft(buf).real * size * dt
    energies = 2 * np.pi * sfft.fftfreq(size, d=dt)
    order = np.argsort(energies)
    return energies[order], spec[order]


def _find_peaks(energies, spec, e_min, e_max, rel_threshold, width=0.0, sidelobe=0.05):
    """Local maxima with quadratic refinement.

    Window sidelobes of a strong line are discarded: a weaker peak closer than
    five resolution widths to a stronger one must reach ``sidelobe`` of its
    height.
    """
    sel = (energies >= e_min) & (energies <= e_max)
    idx = np.nonzero(sel)[0]
    if len(idx) < 3:
        return []
    top = spec[idx].max()
    if top <= 0:
        return []
    peaks = []
    for i in idx[1:-1]:
        if spec[i] > spec[i - 1] and spec[i] >= spec[i + 1] and spec[i] > rel_threshold * top:
            y0, y1, y2 = spec[i - 1], spec[i], spec[i + 1]
            den = y0 - 2 * y1 + y2
            shift = 0.5 * (y0 - y2) / den if den != 0 else 0.0
            de = energies[i + 1] - energies[i]
            peaks.append((energies[i] + shift * de, y1))
    peaks.sort(key=lambda p: -p[1])
    kept = []
    for e, a in peaks:
        if all(abs(e - e2) > 5 * width or a > sidelobe * a2 for e2, a2 in kept):
            kept.append((e, a))
    return sorted(kept)


def spectral_scan(
    potential,
    grid: Grid2D,
    T_total: float,
    dt: float,
    packet: SpinorWavefunction | None = None,
    toggles: TermToggles | None = None,
    e_window: tuple[float, float] | None = None,
    rel_threshold: float = 1e-3,
    by_sector: bool = True,
    return_trace: bool = False,
):
    """Energy levels from the autocorrelation of a propagated probe packet.

    Returns a list of :class:`SpectralLine` sorted by energy.  With
    ``by_sector`` the autocorrelation is split into the four (x, z) parity
    sectors, which separates degenerate partners and labels the lines.
    The linewidth reported is the resolution 2 pi / T_total.
    """
    toggles = toggles or TermToggles()
    psi = (packet or probe_packet(grid, potential)).copy()
    psi.time = 0.0
    n_steps = int(round(T_total / dt))
    if n_steps < 16:
        raise EigenError("T_total too short for the requested time step")
    plan = PropagatorPlan(grid, potential, dt, toggles=toggles)
    ref = {s: parity_project(psi.data, s) for s in SECTORS} if by_sector else {"all": psi.data.copy()}
    corr = {s: np.zeros(n_steps + 1, dtype=complex) for s in ref}
    cell = grid.cell
    for s, r in ref.items():
        corr[s][0] = np.vdot(r, psi.data) * cell
    for i in range(1, n_steps + 1):
        step(psi, plan)
        for s, r in ref.items():
            corr[s][i] = np.vdot(r, psi.data) * cell
    T = n_steps * dt
    width = 2 * np.pi / T
    if e_window is None:
        X, Z = grid.mesh()
        vmin = float(np.min(potential.value(X, Z)))
        e_window = (vmin, 0.0)
    lines = []
    for s, c in corr.items():
        energies, spec = _autocorrelation_spectrum(c, dt)
        for e, amp in _find_peaks(energies, spec, e_window[0], e_window[1], rel_threshold, width):
            lines.append(SpectralLine(float(e), float(amp), width, s))
    if not lines:
        raise EigenError("no spectral peaks found; increase T_total or check the energy window")
    # the sector split leaves every line only in its own sector; keep the strongest
    # copy of lines that leak through a near-degenerate partner
    lines.sort(key=lambda ln: ln.energy)
    if return_trace:
        return lines, corr
    return lines


def project_state(trajectory, energy: float, window_length: float | None = None) -> SpinorWavefunction:
    """Filter a stored trajectory at ``energy``: sum_t w(t) exp(i E t) psi(t), normalized.

    ``trajectory`` is an iterable of SpinorWavefunction samples at uniform
    times starting from t = 0; a Hann window over the span is applied.
    """
    samples = list(trajectory)
    if not samples:
        raise EigenError("empty trajectory")
    times = np.array([s.time for s in samples])
    T = window_length or (times[-1] - times[0]) or 1.0
    acc = np.zeros_like(samples[0].data)
    for s in samples:
        tau = s.time - times[0]
        acc += np.cos(0.5 * np.pi * tau / T) ** 2 * np.exp(1j * energy * tau) * s.data
    out = SpinorWavefunction(samples[0].grid)
    out.data[...] = acc
    return out.normalize()


def project_states(
    potential,
    grid: Grid2D,
    energies,
    T_total: float,
    dt: float,
    packet: SpinorWavefunction | None = None,
    toggles: TermToggles | None = None,
    sectors=None,
) -> list[SpinorWavefunction]:
    """Regenerate the probe trajectory and filter it at every requested energy.

    If ``sectors`` is given (one per energy) each filtered state is projected
    onto that parity sector.
    """
    toggles = toggles or TermToggles()
    psi = (packet or probe_packet(grid, potential)).copy()
    psi.time = 0.0
    n_steps = int(round(T_total / dt))
    plan = PropagatorPlan(grid, potential, dt, toggles=toggles)
    energies = np.asarray(energies, dtype=float)
    accs = np.zeros((len(energies),) + psi.data.shape, dtype=complex)
    T = n_steps * dt
    for i in range(n_steps + 1):
        t = i * dt
        w = np.cos(0.5 * np.pi * t / T) ** 2 * (0.5 if i == 0 else 1.0)
        ph = w * np.exp(1j * energies * t)
        for j in range(len(energies)):
            accs[j] += ph[j] * psi.data
        if i < n_steps:
            step(psi, plan)
    states = []
    for j in range(len(energies)):
        # the backward half of the symmetric window contributes the conjugate-time
        # filter; for a real-time-reversal-symmetric H it only doubles the real part
        a = accs[j]
        if sectors is not None and sectors[j] not in (None, "all"):
            a = parity_project(a, sectors[j])
        s = SpinorWavefunction(grid)
        s.data[...] = a
        states.append(s.normalize())
    return states


def _spectral_eigen(potential, grid, T_total, dt, n_states, toggles, packet, variance_tol):
    lines = spectral_scan(potential, grid, T_total, dt, packet=packet, toggles=toggles)
    lines = lines[:n_states] if n_states else lines
    states = project_states(
        potential, grid, [ln.energy for ln in lines], T_total, dt, packet=packet,
        toggles=toggles, sectors=[ln.sector for ln in lines],
    )
    # filtering leaves small admixtures of nearby lines of the same symmetry;
    # orthogonalize within each sector in energy order
    cell = grid.cell
    for sector in {ln.sector for ln in lines}:
        done = []
        for ln, st in zip(lines, states):
            if ln.sector != sector:
                continue
            for prev in done:
                st.data -= np.vdot(prev.data, st.data) * cell * prev.data
            st.normalize()
            done.append(st)
    return _finish(lines, states, grid, potential, toggles, variance_tol, method="spectral")


def _finish(lines, states, grid, potential, toggles, variance_tol, method):
    energies, labels, flagged = [], [], []
    for i, (ln, s) in enumerate(zip(lines, states)):
        e, var = field_free_energy(s, potential, toggles)
        if variance_tol is not None and var > variance_tol:
            flagged.append(i)
        energies.append((i, ln.energy, ln.linewidth))
        labels.append(_label(parity_of(s.up), _m_estimate(s.up, grid)))
    meta = {"method": method, "potential": potential.to_dict(), "grid": list(grid.key()), "flagged": flagged}
    if flagged:
        log.warning("states %s have <H> variance above %g (near-degenerate levels?)", flagged, variance_tol)
    return EigenResult(energies, states, labels, meta)


# --- imaginary time -----------------------------------------------------------------


def _initial_guess(grid: Grid2D, potential, n: int = 0) -> np.ndarray:
    """Low-order polynomial times a Gaussian; coefficients vary with ``n`` so
    that successive guesses span different directions of degenerate levels."""
    X, Z = grid.mesh()
    r0 = potential.ground_radius()
    u, v = X / r0, Z / r0
    basis = [np.ones_like(u), u, v, u * v, u * u, v * v, u**3, v**3, u * u * v, u * v * v]
    coef = [math.cos(1.3 * n * j + 0.4 * j + 0.1) / (1 + 0.3 * j) for j in range(len(basis))]
    poly = sum(c * b for c, b in zip(coef, basis))
    return (poly * np.exp(-(u * u + v * v) / 3.0)).astype(complex)


def imaginary_time_relax(
    potential,
    grid: Grid2D,
    n_states: int = 1,
    dtau: float | None = None,
    tol: float = 1e-10,
    max_steps: int = 50000,
    toggles: TermToggles | None = None,
    state_tol: float = 1e-9,
) -> EigenResult:
    """Lowest ``n_states`` eigenstates by imaginary-time split-step relaxation.

    Each state is deflated against those already found after every step and
    is accepted when its energy changes by less than ``tol`` (relative) per
    step and the state itself by less than ``state_tol`` (L2) per step.  The
    energy converges quadratically in the state error, so the second test is
    what removes the residual asymmetry left by the probe guess.
    """
    if n_states < 1 or n_states > 6:
        raise ValueError("n_states must be between 1 and 6")
    toggles = toggles or TermToggles()
    if dtau is None:
        dtau = min(0.01, 0.25 / max(1.0, float(np.max(np.abs(_static_potential(grid, potential, toggles))))))
    kin = _kinetic_table(grid, toggles)
    v = _static_potential(grid, potential, toggles)
    ek = np.exp(-0.5 * dtau * kin)
    ev = np.exp(-dtau * (v - v.min()))
    cell = grid.cell
    found: list[np.ndarray] = []
    energies = []
    for n in range(n_states):
        a = _initial_guess(grid, potential, n)
        for f in found:
            a -= np.vdot(f, a) * cell * f
        a /= math.sqrt(np.vdot(a, a).real * cell)
        e_old = None
        a_old = a
        converged = False
        for it in range(max_steps):
            a = sfft.ifft2(ek * sfft.fft2(a))
            a *= ev
            a = sfft.ifft2(ek * sfft.fft2(a))
            for f in found:
                a -= np.vdot(f, a) * cell * f
            a /= math.sqrt(np.vdot(a, a).real * cell)
            if it % 10 == 9:
                e = np.vdot(a, _apply_h(a, kin, v)).real * cell
                moved = math.sqrt(np.vdot(a - a_old, a - a_old).real * cell)
                if e_old is not None and abs(e - e_old) < tol * abs(e) * 10 and moved < state_tol * 10:
                    converged = True
                    break
                e_old, a_old = e, a.copy()
        if not converged:
            raise EigenError(f"state {n} did not converge within {max_steps} steps")
        found.append(a)
        energies.append(e)
    states = [SpinorWavefunction(grid, up=a) for a in found]
    lines = [SpectralLine(float(e), 1.0, 0.0, "all") for e in energies]
    res = _finish(lines, states, grid, potential, toggles, None, method="imaginary_time")
    res.meta["dtau"] = dtau
    return res


def spectral_eigen(
    potential,
    grid: Grid2D,
    T_total: float,
    dt: float,
    n_states: int | None = None,
    toggles: TermToggles | None = None,
    packet: SpinorWavefunction | None = None,
    variance_tol: float | None = None,
) -> EigenResult:
    """Spectral scan followed by state projection for every resolved line."""
    return _spectral_eigen(potential, grid, T_total, dt, n_states, toggles or TermToggles(), packet, variance_tol)


# --- spin-orbit splitting ---------------------------------------------------------


@dataclass
class SplittingResult:
    index: int
    label: str
    delta: float
    delta_over_omega: float
    upper_bound: bool


def _multiplets(result: EigenResult, tol: float):
    groups, cur = [], []
    for k, (i, e, w) in enumerate(result.energies):
        if cur and abs(e - result.energies[cur[-1]][1]) > max(tol, 2 * w):
            groups.append(cur)
            cur = []
        cur.append(k)
    if cur:
        groups.append(cur)
    return groups


def field_free_so_splitting(
    result: EigenResult,
    potential,
    omega_ref: float,
    c: float | None = None,
    degeneracy_tol: float = 1e-3,
    resolution: float = 0.0,
) -> list[SplittingResult]:
    """Spin-orbit splitting of each level, in hartree and in units of ``omega_ref``.

    H_so = sigma_y f(r) L_y is diagonalized inside every near-degenerate
    multiplet; sigma_y contributes a factor of +-1 so an eigenvector of
    M_ij = <Phi_i| f L_y |Phi_j> with eigenvalue lam gives levels +-lam.  Each
    state is assigned 2|lam| of the eigenvector carrying most of its weight,
    so a symmetric level that lands in a multiplet keeps its zero splitting.
    Splittings below ``resolution`` are flagged as upper bounds.
    """
    c = c or TermToggles().c
    out = []
    for group in _multiplets(result, degeneracy_tol):
        grid = result.states[group[0]].grid
        X, Z = grid.odd_mesh()
        f = so_prefactor(potential, X, Z, c)
        phis = [result.states[k].up for k in group]
        m = np.zeros((len(group), len(group)), dtype=complex)
        for a, pa in enumerate(phis):
            for b, pb in enumerate(phis):
                m[a, b] = np.vdot(pa, f * angular_momentum_y(pb, grid)) * grid.cell
        m = 0.5 * (m + m.conj().T)
        ev, vecs = np.linalg.eigh(m)
        for row, k in enumerate(group):
            j = int(np.argmax(np.abs(vecs[row]) ** 2))
            delta = float(2 * abs(ev[j]))
            out.append(SplittingResult(k, result.labels[k], delta, delta / omega_ref,
                                       delta < resolution))
    return out


def so_shift_by_propagation(
    state: SpinorWavefunction,
    potential,
    T_total: float,
    dt: float,
    toggles: TermToggles,
) -> float:
    """Energy of ``state`` from the phase slope of its autocorrelation.

    With ``state`` an eigenvector of sigma_y f L_y this measures the
    spin-orbit shifted level directly from the propagator; compare runs with
    ``spin_orbit`` on and off for the shift.
    """
    psi = state.copy()
    psi.time = 0.0
    ref = state.data.copy()
    n = int(round(T_total / dt))
    plan = PropagatorPlan(state.grid, potential, dt, toggles=toggles)
    cs = np.empty(n + 1, dtype=complex)
    cs[0] = np.vdot(ref, psi.data)
    for i in range(1, n + 1):
        step(psi, plan)
        cs[i] = np.vdot(ref, psi.data)
    phase = np.unwrap(np.angle(cs))
    t = np.arange(n + 1) * dt
    slope = np.polyfit(t, phase, 1)[0]
    return -float(slope)


def circular_so_state(result: EigenResult, pair: tuple[int, int], sign: int = 1) -> SpinorWavefunction:
    """Spinor (phi_a + i s phi_b)/sqrt2 x sigma_y eigenvector built from a degenerate pair.

    The orbital combination is rotated to an L_y eigenvector using the
    numerically computed L_y matrix within the pair.
    """
    a, b = (result.states[k].up for k in pair)
    grid = result.states[pair[0]].grid
    m = np.array(
        [[np.vdot(x, angular_momentum_y(y, grid)) * grid.cell for y in (a, b)] for x in (a, b)]
    )
    m = 0.5 * (m + m.conj().T)
    w, v = np.linalg.eigh(m)
    vec = v[:, 1 if sign > 0 else 0]
    orb = vec[0] * a + vec[1] * b
    s = SpinorWavefunction(grid, up=orb / math.sqrt(2), down=1j * orb / math.sqrt(2))
    return s.normalize()

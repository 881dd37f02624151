"""Split-operator stepping of the two-component weakly relativistic equation.

One step of length dt (time-dependent pieces evaluated at the midpoint)::

    K/2 . P/2 . W/2 . S . W/2 . P/2 . K/2

K   kinetic exponent  p^2/2 - [mass_shift] p^4/(8 c^2), diagonal in (kx, kz)
P   p_x A_x(z, t)/c,  diagonal in the mixed (kx, z) representation
W   V + a2 A^2/c^2 + [darwin] H_D, diagonal in (x, z)
S   exp(-i dt sigma_y Omega), Omega = B_y/2c - E_x p_z/4c^2 + f (z p_x - x p_z),
    applied as a truncated Taylor series

The palindromic ordering keeps the local error at O(dt^3).  K/2 and P/2 are
applied back to back so the pair costs one 2D transform.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft

from .fields import LaserPulse, TermToggles, pulse_fields, pulse_fields_averaged, so_prefactor
from .grid import Grid2D, SpinorWavefunction, norm

log = logging.getLogger(__name__)

__all__ = [
    "MaskFunction",
    "PropagatorPlan",
    "NumericalInstabilityError",
    "step",
    "apply_spin_block",
    "apply_absorber",
    "darwin_term",
]


class NumericalInstabilityError(RuntimeError):
    """NaN or Inf appeared in the wavefunction."""


@dataclass(frozen=True)
class MaskFunction:
    """cos^(1/8) absorbing mask of width ``width_x`` / ``width_z`` (bohr) per side."""

    width_x: float
    width_z: float
    exponent: float = 0.125

    def __post_init__(self):
        if self.width_x < 0 or self.width_z < 0:
            raise ValueError("mask widths must be non-negative")

    @classmethod
    def fraction(cls, grid: Grid2D, frac: float = 0.1) -> "MaskFunction":
        """Mask whose width is ``frac`` of the box extent on each side."""
        return cls(frac * (grid.x_max - grid.x_min), frac * (grid.z_max - grid.z_min))

    @staticmethod
    def _profile(coord: np.ndarray, width: float, exponent: float) -> np.ndarray:
        if width <= 0:
            return np.ones_like(coord)
        # even about the origin: depth from the shorter half-extent, so the
        # unpaired edge row gets zero weight
        depth = min(-coord[0], coord[-1]) - np.abs(coord)
        m = np.ones_like(coord)
        inside = depth < width
        arg = 0.5 * np.pi * (width - depth[inside]) / width
        m[inside] = np.clip(np.cos(arg), 0.0, 1.0) ** exponent
        return m

    def values(self, grid: Grid2D) -> np.ndarray:
        mx = self._profile(grid.x, self.width_x, self.exponent)
        mz = self._profile(grid.z, self.width_z, self.exponent)
        return mx[:, None] * mz[None, :]

    def to_dict(self):
        return {"width_x": self.width_x, "width_z": self.width_z, "exponent": self.exponent}


def darwin_term(potential, x, z, c: float):
    """H_D = div E' / 8c^2 with E' = -grad V (the plane-wave laser is divergence free)."""
    return -potential.laplacian(x, z) / (8.0 * c * c)


class PropagatorPlan:
    """Cached phase tables for a fixed grid, time step and term selection.

    Parameters
    ----------
    grid : Grid2D
    potential : object with ``value``, ``gradient``, ``laplacian`` and
        ``radial_force_over_r`` methods (see :mod:`wrtdse.fields`).
    dt : float
        Time step in a.u.  A negative value steps backwards.
    pulse : LaserPulse or None
    toggles : TermToggles
    absorber : MaskFunction or None
    spin_taylor_order : int
        Order of the Taylor series used for the spin block.
    nan_check_every : int
        Steps between NaN/Inf scans.
    absorb_every : int
        Steps between applications of the absorbing mask.
    """

    def __init__(
        self,
        grid: Grid2D,
        potential,
        dt: float,
        pulse: LaserPulse | None = None,
        toggles: TermToggles | None = None,
        absorber: MaskFunction | None = None,
        spin_taylor_order: int = 2,
        nan_check_every: int = 100,
        absorb_every: int = 1,
    ):
        if dt == 0 or not np.isfinite(dt):
            raise ValueError("dt must be finite and non-zero")
        self.grid = grid
        self.potential = potential
        self.dt = float(dt)
        self.toggles = toggles or TermToggles()
        self.c = self.toggles.c
        self.pulse = None if pulse is None else pulse.with_c(self.c)
        self.absorber = absorber
        self.spin_taylor_order = int(spin_taylor_order)
        self.nan_check_every = int(nan_check_every)
        if int(absorb_every) < 1:
            raise ValueError("absorb_every must be >= 1")
        self.absorb_every = int(absorb_every)
        self.steps_taken = 0
        self._build_tables()

    def _build_tables(self):
        g, dt, c, tg = self.grid, self.dt, self.c, self.toggles
        X, Z = g.mesh()
        KX, KZ = g.kmesh()
        k2 = KX**2 + KZ**2
        kin = 0.5 * k2
        if tg.mass_shift:
            kin = kin - k2 * k2 / (8.0 * c * c)
        self.kinetic = kin
        self.kin_half = np.exp(-0.5j * dt * kin)
        w = self.potential.value(X, Z)
        if tg.darwin:
            w = w + darwin_term(self.potential, X, Z, c)
        self.static_w = w
        self.w_half_static = np.exp(-0.5j * dt * w)
        self.kx_col = g.kx[:, None]
        self.kx_deriv = g.derivative_kx()[:, None]
        self.kz_deriv = g.derivative_kz()[None, :]
        if tg.spin_orbit:
            f = so_prefactor(self.potential, X, Z, c)
            Xo, Zo = g.odd_mesh()
            self.so_fz = f * Zo
            self.so_fx = f * Xo
        else:
            self.so_fz = self.so_fx = None
        self.mask = None if self.absorber is None else self.absorber.values(g)

    # --- time-dependent pieces ----------------------------------------------

    def laser(self, t: float):
        """(A_x, E_x, B_y) as 1D arrays over z (shape (1, nz)) or scalars in dipole mode."""
        if self.pulse is None:
            return None
        dip = self.toggles.dipole_approximation
        z = 0.0 if dip else self.grid.z
        A, E, B = pulse_fields(self.pulse, z, t, dip)
        if dip:
            if A == 0.0 and E == 0.0:
                return None
            return A, E, B
        if not (np.any(A) or np.any(E)):
            return None
        return A[None, :], E[None, :], B[None, :]

    def step_fields(self, t: float):
        """(A_x, E_x, B_y, A_x^2) for the step starting at t, or None when the field is off.

        Fields are sampled at the step midpoint, except in steps where the
        front or the end of the pulse passes through the box: there the exact
        step averages are used.
        """
        if self.pulse is None:
            return None
        L = self.pulse
        dip = self.toggles.dipole_approximation
        lo, hi = min(t, t + self.dt), max(t, t + self.dt)
        if dip:
            tau_lo, tau_hi = lo, hi
        else:
            tau_lo, tau_hi = lo - self.grid.z_max / L.c, hi - self.grid.z_min / L.c
        if tau_hi <= 0.0 or tau_lo >= L.t_p:
            return None
        if not any(tau_lo < jump < tau_hi for jump in (0.0, L.t_p)):
            f = self.laser(t + 0.5 * self.dt)
            return None if f is None else (*f, f[0] * f[0])
        z = 0.0 if dip else self.grid.z
        A, E, B, A2 = pulse_fields_averaged(L, z, lo, hi, dip)
        if dip:
            return A, E, B, A2
        return A[None, :], E[None, :], B[None, :], A2[None, :]

    def reversed(self) -> "PropagatorPlan":
        return PropagatorPlan(
            self.grid, self.potential, -self.dt, self.pulse, self.toggles, self.absorber,
            self.spin_taylor_order, self.nan_check_every, self.absorb_every,
        )


# --- spin block ----------------------------------------------------------------


def _p_x(d, plan):
    return sfft.ifft(plan.kx_deriv * sfft.fft(d, axis=-2, norm="ortho"), axis=-2, norm="ortho")


def _p_z(d, plan):
    return sfft.ifft(plan.kz_deriv * sfft.fft(d, axis=-1, norm="ortho"), axis=-1, norm="ortho")


def _omega(d, plan, fields):
    """Scalar spin-block generator Omega applied to both components of ``d``."""
    tg, c = plan.toggles, plan.c
    out = np.zeros_like(d)
    if fields is not None:
        A, E, B = fields[:3]
        if tg.pauli:
            out += (B / (2.0 * c)) * d
    if tg.spin_orbit:
        pz = _p_z(d, plan)
        if fields is not None:
            out += (-E / (4.0 * c * c)) * pz
        out += plan.so_fz * _p_x(d, plan) - plan.so_fx * pz
    return out


def apply_spin_block(psi: SpinorWavefunction, plan: PropagatorPlan, t: float) -> SpinorWavefunction:
    """psi <- exp(-i dt (H_P + H_so)) psi with the exponential Taylor expanded.

    Both terms are proportional to sigma_y, so the generator is sigma_y times a
    scalar operator; position factors stand to the left of momentum operators.
    """
    psi.data[...] = _spin_block(psi.data, plan, plan.laser(t))
    return psi


def _spin_block(d, plan, fields):
    tg = plan.toggles
    if not (tg.pauli or tg.spin_orbit):
        return d
    if not tg.spin_orbit and fields is None:
        return d
    result = d.copy()
    term = d
    for k in range(1, plan.spin_taylor_order + 1):
        om = _omega(term, plan, fields)
        # sigma_y (u, d) = (-i d, i u)
        nxt = np.empty_like(om)
        nxt[0] = -1j * om[1]
        nxt[1] = 1j * om[0]
        term = (-1j * plan.dt / k) * nxt
        result += term
    return result


# --- absorber ------------------------------------------------------------------


def apply_absorber(psi: SpinorWavefunction, mask) -> tuple[SpinorWavefunction, SpinorWavefunction]:
    """Multiply psi by the mask; return (psi, removed amplitude (1 - mask) psi)."""
    if isinstance(mask, MaskFunction):
        mask = mask.values(psi.grid)
    flux = SpinorWavefunction(psi.grid, time=psi.time)
    for s in range(2):
        d = psi.data[s]
        if s == 1 and not d.any():
            continue
        np.multiply(d, 1.0 - mask, out=flux.data[s])
        d *= mask
    return psi, flux


# --- full step -----------------------------------------------------------------


def _vector_half(plan, fields):
    """exp(-i dt/2 p_x A_x / c) on the (k_x, z) lattice, or None without a field."""
    if fields is None:
        return None
    return np.exp((-0.5j * plan.dt / plan.c) * (plan.kx_col * fields[0]))


def _kin_and_vector(d, plan, pa_half, forward: bool):
    """K/2 followed by P/2 (forward=True) or P/2 followed by K/2, position in and out."""
    if pa_half is None:
        h = sfft.fft2(d, axes=(-2, -1), norm="ortho")
        h *= plan.kin_half
        return sfft.ifft2(h, axes=(-2, -1), norm="ortho", overwrite_x=True)
    if forward:
        h = sfft.fft2(d, axes=(-2, -1), norm="ortho")
        h *= plan.kin_half
        h = sfft.ifft(h, axis=-1, norm="ortho", overwrite_x=True)
        h *= pa_half
        return sfft.ifft(h, axis=-2, norm="ortho", overwrite_x=True)
    h = sfft.fft(d, axis=-2, norm="ortho")
    h *= pa_half
    h = sfft.fft(h, axis=-1, norm="ortho", overwrite_x=True)
    h *= plan.kin_half
    return sfft.ifft2(h, axes=(-2, -1), norm="ortho", overwrite_x=True)


def step(psi: SpinorWavefunction, plan: PropagatorPlan, t: float | None = None):
    """Advance ``psi`` in place by ``plan.dt``.

    Returns ``(psi, flux)`` where ``flux`` is the amplitude removed by the
    absorber at the end of the step (None when the mask was not applied).
    """
    if t is None:
        t = psi.time
    fields = plan.step_fields(t)
    spin_on = plan.toggles.spin_orbit or (plan.toggles.pauli and fields is not None)
    d = psi.data
    if not spin_on and not d[1].any():
        work = d[:1]
    else:
        work = d

    w_half = plan.w_half_static
    if fields is not None:
        w_half = w_half * np.exp((-0.5j * plan.dt * plan.toggles.a2_factor / plan.c**2) * fields[3])

    pa_half = _vector_half(plan, fields)
    work = _kin_and_vector(work, plan, pa_half, forward=True)
    work *= w_half
    if spin_on:
        work = _spin_block(work, plan, fields)
    work *= w_half
    work = _kin_and_vector(work, plan, pa_half, forward=False)

    if work.shape[0] == 1:
        d[0] = work[0]
    else:
        d[...] = work
    psi.time = t + plan.dt
    plan.steps_taken += 1

    if plan.nan_check_every and plan.steps_taken % plan.nan_check_every == 0:
        if not np.isfinite(d).all():
            raise NumericalInstabilityError(
                f"non-finite wavefunction at t={psi.time:.6g} (step {plan.steps_taken}); "
                "reduce dt or refine the grid"
            )

    flux = None
    if plan.mask is not None and plan.steps_taken % plan.absorb_every == 0:
        _, flux = apply_absorber(psi, plan.mask)
    return psi, flux


def propagate(psi: SpinorWavefunction, plan: PropagatorPlan, n_steps: int, callback=None):
    """Take ``n_steps`` steps; ``callback(i, psi, flux)`` after each one."""
    for i in range(n_steps):
        _, flux = step(psi, plan)
        if callback is not None:
            callback(i + 1, psi, flux)
    return psi

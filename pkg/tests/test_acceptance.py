"""Exit criteria at their stated tolerances.

Each test records a one-line verdict; the terminal summary lists them in
order (see ``conftest.py``).  The long runs use reduced grids chosen so that
the whole module finishes in well under an hour on one core.
"""

import time

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from wrtdse.config import scenario_config
from wrtdse.eigen import imaginary_time_relax, spectral_eigen
from wrtdse.fields import (
    C_LIGHT,
    FreePotential,
    LaserPulse,
    SoftCorePotential,
    TermToggles,
    intensity_to_field,
    ponderomotive_and_keldysh,
    pulse_fields,
    wavelength_to_omega,
)
from wrtdse.grid import SpinorWavefunction, expectation, gaussian_packet, make_grid, norm
from wrtdse.observables import Recorder, harmonic_cutoff, line_shift, radiation_spectrum
from wrtdse.photoelectron import FluxLedger, accumulate_flux, comb_spacing, energy_spectrum, momentum_spectrum
from wrtdse.propagator import MaskFunction, PropagatorPlan, propagate, step
from wrtdse.runner import photoelectron_from_run, run

pytestmark = pytest.mark.acceptance

Z3 = SoftCorePotential(6.48, 1.0, 3)
Z12 = SoftCorePotential(80.32, 1.0, 12)
KRF = wavelength_to_omega(248.0)
GREEN = wavelength_to_omega(527.0)


def verdict(record_property, ok, detail):
    record_property("verdict", detail)
    print(("PASS " if ok else "FAIL ") + detail)
    assert ok, detail


@pytest.fixture(scope="module")
def z12_small():
    # 64^2 at dx 0.1 holds the Z=12 bound states (decay ~exp(-11 r)); they do not ionize here
    grid = make_grid(64, 64, 0.1)
    return grid, imaginary_time_relax(Z12, grid, 1).states[0]


def acceleration_run(grid, ground, toggles, pulse, dt, spin=None, cadence=1, accelerations=True):
    plan = PropagatorPlan(grid, Z12, dt, pulse=pulse, toggles=toggles)
    psi = ground.copy()
    if spin is not None:
        up = psi.up.copy()
        psi.data[0], psi.data[1] = spin[0] * up, spin[1] * up
    rec = Recorder(Z12, toggles, cadence=cadence, accelerations=accelerations)
    rec.sample(psi)
    propagate(psi, plan, int(np.ceil(pulse.t_p / dt)), rec)
    return rec


def test_criterion_01_ground_state_energy(record_property):
    grid = make_grid(256, 256, 0.1)
    t0 = time.perf_counter()
    e_spec = spectral_eigen(Z12, grid, 20.0, 0.01, n_states=1).energies[0][1]
    e_imag = imaginary_time_relax(Z12, grid, 1).energies[0][1]
    elapsed = time.perf_counter() - t0
    ok = abs(e_spec / -72 - 1) < 0.01 and abs(e_imag / -72 - 1) < 0.01 and elapsed < 600
    verdict(record_property, ok,
            f"E0 spectral {e_spec:.4f}, imaginary time {e_imag:.4f} (target -72 +-1%), {elapsed:.0f} s on 256^2")


def test_criterion_02_unitarity(record_property, z3_small):
    grid, pot, res = z3_small
    pulse = LaserPulse.from_cycles(0.3, 0.2, 0.25, 2)
    psi = res.states[0].copy()
    propagate(psi, PropagatorPlan(grid, pot, 0.05, pulse=pulse, toggles=TermToggles.all_on()), 1000)
    drift = abs(norm(psi) - 1)
    verdict(record_property, drift < 1e-6, f"norm drift {drift:.2e} over 1000 steps, all terms on (limit 1e-6)")


def test_criterion_03_free_dispersion(record_property):
    grid = make_grid(64, 16, 0.25)
    X, _ = grid.mesh()
    k0 = 9 * grid.dkx
    ref = SpinorWavefunction(grid, np.exp(1j * k0 * X)).normalize()
    dt, n = 0.05, 200
    quartic = k0**4 / (8 * C_LIGHT**2)
    errs = {}
    for mass_shift in (False, True):
        psi = ref.copy()
        propagate(psi, PropagatorPlan(grid, FreePotential(), dt, toggles=TermToggles(mass_shift=mass_shift)), n)
        overlap = ref.overlap(psi)
        analytic = dt * (k0**2 / 2 - (quartic if mass_shift else 0.0))
        errs[mass_shift] = abs(np.angle(overlap * np.exp(1j * n * analytic))) / n
        # the quartic term must be visible, and only when switched on
        other = dt * (k0**2 / 2 - (0.0 if mass_shift else quartic))
        assert abs(np.angle(overlap * np.exp(1j * n * other))) / n > 1e3 * errs[mass_shift]
    ok = max(errs.values()) < 1e-8
    verdict(record_property, ok,
            f"per-step phase error {errs[False]:.1e} (plain), {errs[True]:.1e} (with p^4), "
            f"quartic term {dt * quartic:.1e} per step (limit 1e-8)")


def classical_trajectory(pulse, times):
    """x, z of a point electron under H = p^2/2 + p_x A/c + A^2/2c^2 - p^4/8c^2, starting at rest."""
    c = pulse.c

    def rhs(t, y):
        x, z, px, pz = y
        A, E, _ = pulse_fields(pulse, z, t)
        p2 = px * px + pz * pz
        # A depends on t - z/c only, so dA/dz = E
        return [px - px * p2 / (2 * c * c) + A / c, pz - pz * p2 / (2 * c * c), 0.0, -(px / c + A / (c * c)) * E]

    sol = solve_ivp(rhs, (1e-9, times[-1]), [0, 0, 0, 0], t_eval=times, rtol=1e-10, atol=1e-12, max_step=0.05)
    return sol.y[0], sol.y[1]


def test_criterion_04_classical_drift(record_property):
    grid = make_grid(512, 128, 0.25, 0.8)
    pulse = LaserPulse.from_cycles(intensity_to_field(1e16), KRF, 1.25, 1.75)
    dt = 0.02
    plan = PropagatorPlan(grid, FreePotential(), dt, pulse=pulse, toggles=TermToggles(mass_shift=True))
    psi = gaussian_packet(grid, sigma_x=5.0, sigma_z=8.0)
    X, Z = grid.mesh()
    t, xs, zs = [], [], []

    def sample(i, p, flux):
        if i % 25 == 0:
            t.append(p.time)
            xs.append(expectation(p, X))
            zs.append(expectation(p, Z))

    propagate(psi, plan, int(round(pulse.t_p / dt)), sample)
    x_cl, z_cl = classical_trajectory(pulse, np.array(t))
    ex = np.max(np.abs(np.array(xs) - x_cl)) / np.max(np.abs(x_cl))
    ez = np.max(np.abs(np.array(zs) - z_cl)) / np.max(np.abs(z_cl))
    ok = ex < 0.05 and ez < 0.05
    verdict(record_property, ok,
            f"<x> error {ex:.2%}, <z> error {ez:.2%} of the classical excursion "
            f"(max z drift {np.max(z_cl):.3f} bohr) over {pulse.t_p / pulse.period:.0f} cycles (limit 5%)")


def test_criterion_05_dipole_parity(record_property, z3_small):
    _, pot, _ = z3_small
    grid = make_grid(256, 128, 0.3)
    ground = imaginary_time_relax(pot, grid, 1).states[0]
    pulse = LaserPulse.from_cycles(intensity_to_field(2.5e16), KRF, 2.25, 1)
    tg = TermToggles(dipole_approximation=True, pauli=True, mass_shift=True, darwin=True)
    plan = PropagatorPlan(grid, pot, 0.02, pulse=pulse, toggles=tg, absorber=MaskFunction.fraction(grid, 0.1))
    _, Z = grid.mesh()
    zs = []
    propagate(ground.copy(), plan, int(round(pulse.t_p / 0.02)), lambda i, p, f: zs.append(expectation(p, Z)))
    worst = max(abs(z) for z in zs)
    verdict(record_property, worst < 1e-6, f"max |<z>| {worst:.1e} bohr in dipole mode (limit 1e-6)")


def test_criterion_06_inverse_c_squared_scaling(record_property, z12_small):
    # (i) mass-shift change in <x(T)>: a drifting packet's group velocity drops by p^3/2c^2
    grid = make_grid(512, 16, 0.25, 1.0)
    E0 = intensity_to_field(1e16)
    dx = {}
    for f in (1, 10):
        out = []
        for mass_shift in (False, True):
            tg = TermToggles(mass_shift=mass_shift, c_override=f * C_LIGHT)
            pulse = LaserPulse.from_cycles(E0, KRF, 1.25, 1.75, tg.c)
            psi = gaussian_packet(grid, sigma_x=5.0, sigma_z=3.0, kx0=0.5)
            propagate(psi, PropagatorPlan(grid, FreePotential(), 0.02, pulse=pulse, toggles=tg),
                      int(np.floor(pulse.t_p / 0.02)))
            out.append(expectation(psi, grid.mesh()[0]))
        dx[f] = out[1] - out[0]
    r_kin = dx[1] / dx[10]

    # (ii) spin-orbit change of the acceleration spectrum, spin along +y.  Every
    # spin term is proportional to sigma_y, so a +y spinor sees H_so at first
    # order; it mixes the |1e> pair and radiates along z.
    grid, ground = z12_small
    E0 = intensity_to_field(7e16)
    size = {}
    for f in (1, 10):
        series = {}
        for so in (True, False):
            tg = TermToggles(spin_orbit=so, c_override=f * C_LIGHT)
            pulse = LaserPulse.from_cycles(E0, GREEN, 2.25, 4, tg.c)
            rec = acceleration_run(grid, ground, tg, pulse, 0.02, spin=(2**-0.5, 1j * 2**-0.5))
            series[so] = rec
        total = 0.0
        for ch in ("a_x", "a_z"):
            on, off = series[True].series(ch), series[False].series(ch)
            diff = (np.asarray(on.times), np.asarray(on.values) - np.asarray(off.values))
            total += radiation_spectrum(diff, GREEN, (pulse.t_on, pulse.t_p), pad=8).power.sum()
        size[f] = np.sqrt(total)
    r_so = size[1] / size[10]

    # (iii) spin-down population driven by the Pauli term
    peak = {}
    for f in (1, 10):
        tg = TermToggles(pauli=True, c_override=f * C_LIGHT)
        pulse = LaserPulse.from_cycles(E0, GREEN, 2.25, 4, tg.c)
        rec = acceleration_run(grid, ground, tg, pulse, 0.02, accelerations=False)
        peak[f] = max(rec.series("p_down").values)
    r_pauli = peak[1] / peak[10]

    ok = all(abs(r / 100 - 1) < 0.2 for r in (r_kin, r_so, r_pauli))
    verdict(record_property, ok,
            f"c -> 10c reduction: mass-shift <x(T)> shift x{r_kin:.1f}, spin-orbit spectral change x{r_so:.1f}, "
            f"Pauli spin-down peak x{r_pauli:.1f} (target 100 +-20%)")


def test_criterion_07_spin_oscillation(record_property, z12_small):
    grid, ground = z12_small
    dt = 0.04
    out = {}
    for so in (True, False):
        tg = TermToggles(pauli=True, spin_orbit=so)
        pulse = LaserPulse.from_cycles(intensity_to_field(7e16), GREEN, 5.25, 10, tg.c)
        rec = acceleration_run(grid, ground, tg, pulse, dt, cadence=2, accelerations=False)
        s = rec.series("p_down")
        t, v = np.asarray(s.times), np.asarray(s.values)
        spec = radiation_spectrum(s, GREEN, (pulse.t_on, t[-1]), pad=8, subtract_mean=True)
        plateau = (t >= pulse.t_on) & (t <= pulse.t_p)
        out[so] = (spec.frequency[np.argmax(spec.power)], v[plateau].mean())
    peak, mean_so = out[True]
    mean_plain = out[False][1]
    ok = abs(peak / 2 - 1) < 0.1 and abs(out[False][0] / 2 - 1) < 0.1 and mean_so > mean_plain
    verdict(record_property, ok,
            f"P_down peak at {peak:.3f} omega (target 2 +-10%); plateau mean {mean_so:.2e} with spin-orbit, "
            f"{mean_plain:.2e} without")


def test_criterion_08_relativistic_stark_shift(record_property, z12_small):
    grid, ground = z12_small
    dt = 0.04
    shift = {}
    for f in (1, 10):
        spectra = {}
        for mass_shift in (True, False):
            tg = TermToggles(mass_shift=mass_shift, c_override=f * C_LIGHT)
            pulse = LaserPulse.from_cycles(intensity_to_field(7e16), GREEN, 2.25, 6, tg.c)
            rec = acceleration_run(grid, ground, tg, pulse, dt)
            ax = rec.series("a_x")
            spectra[mass_shift] = radiation_spectrum(ax, GREEN, (pulse.t_on, ax.times[-1]), pad=8)
        shift[f] = line_shift(spectra[True], spectra[False], (85.0, 91.0))[2]
    ratio = shift[1] / shift[10]
    ok = shift[1] < 0 and shift[10] < 0 and abs(ratio / 100 - 1) < 0.2
    verdict(record_property, ok,
            f"|1e>-|g> line shift {shift[1]:+.4f} omega at c, {shift[10]:+.6f} omega at 10c, ratio {ratio:.1f}")


@pytest.fixture(scope="module")
def hhg_runs():
    """Z=3 at 2.5e16 W/cm^2, 248 nm, 2.25 + 5 cycles, at dt 0.02 and 0.01.

    Both runs absorb on the same 0.02 a.u. schedule and stop at the same time.
    """
    grid = make_grid(512, 64, 0.2)
    ground = imaginary_time_relax(Z3, grid, 1)
    E0 = intensity_to_field(2.5e16)
    pulse = LaserPulse.from_cycles(E0, KRF, 2.25, 5)
    n_coarse = int(np.floor(pulse.t_p / 0.02))
    out = {}
    for dt in (0.02, 0.01):
        k = int(round(0.02 / dt))
        plan = PropagatorPlan(grid, Z3, dt, pulse=pulse, toggles=TermToggles(),
                              absorber=MaskFunction.fraction(grid, 0.1), absorb_every=k)
        psi = ground.states[0].copy()
        rec = Recorder(Z3, TermToggles(), cadence=3 * k)
        rec.sample(psi)
        t0 = time.perf_counter()
        propagate(psi, plan, n_coarse * k, rec)
        ax = rec.series("a_x")
        spec = radiation_spectrum(ax, KRF, (pulse.t_on, ax.times[-1]))
        out[dt] = {"spectrum": spec, "x": expectation(psi, grid.mesh()[0]), "seconds": time.perf_counter() - t0}
    ip = -ground.energies[0][1]
    return out, ponderomotive_and_keldysh(E0, KRF, ip), int(np.ceil(ip / KRF))


def test_criterion_09_harmonic_cutoff(record_property, hhg_runs):
    runs, sf, start = hhg_runs
    spec = runs[0.02]["spectrum"]
    cut = harmonic_cutoff(spec, start_order=start)
    predicted = sf.cutoff_energy / KRF
    q = np.arange(1, 101)
    f, p = spec.frequency, spec.power
    odd = np.array([p[np.abs(f - k) < 0.2].max() for k in q if k % 2 == 1])
    even = np.array([p[np.abs(f - k) < 0.2].max() for k in q if k % 2 == 0])
    comb = np.median(odd / even)
    ok = abs(cut / predicted - 1) < 0.2 and comb > 10 and runs[0.02]["seconds"] < 7200
    verdict(record_property, ok,
            f"cutoff at harmonic {cut:.0f}, Ip + 3.17 Up predicts {predicted:.1f} (+-20%); "
            f"odd/even peak ratio {comb:.0f}; {runs[0.02]['seconds']:.0f} s")


def test_criterion_10_above_threshold_ionization(record_property, tmp_path_factory):
    base = tmp_path_factory.mktemp("ati")
    cfg = scenario_config("fig14_ati_Z3", overrides={"accelerations": False, "record_every": 50})
    res = run(cfg, base / "run", eigen_cache=base / "eigen")
    es, meta = photoelectron_from_run(res)
    omega, up = cfg.pulse.omega, meta["Up_au"]
    pos, gaps = comb_spacing(es, omega, 0.5, 2 * up)
    bins = np.interp(pos[1:], es.energy[1:], np.diff(es.energy))
    longest = run_length = 0
    for hit in np.abs(gaps - omega) <= bins:
        run_length = run_length + 1 if hit else 0
        longest = max(longest, run_length)
    logp = np.log10(np.maximum(es.total, 1e-300))

    def band(a, b):
        return (es.energy >= a * up) & (es.energy <= b * up)

    direct = np.polyfit(es.energy[band(0.5, 2)], logp[band(0.5, 2)], 1)[0]
    tail = np.polyfit(es.energy[band(4, 9)], logp[band(4, 9)], 1)[0]
    drop = logp[band(6, 9)].max() - logp[band(11, 12)].max()
    ok = longest + 1 >= 10 and tail > 0.5 * direct and drop > 1
    verdict(record_property, ok,
            f"{longest + 1} consecutive peaks spaced by omega within a bin; log10 slope {direct:.3f}/hartree "
            f"below 2Up vs {tail:.3f} on 4-9Up; tail falls {drop:.1f} decades past 10Up")


def test_criterion_11_free_gaussian_pipeline(record_property):
    grid = make_grid(256, 32, 0.25)
    sigma, p0 = 1.5, 3.0
    psi = gaussian_packet(grid, x0=-8.0, kx0=p0, sigma_x=sigma, sigma_z=1.0)
    ledger = FluxLedger(grid, pad_x=4, propagate_z=True)
    plan = PropagatorPlan(grid, FreePotential(), 0.02, absorber=MaskFunction(0.2 * (grid.x_max - grid.x_min), 0.0))
    for _ in range(1500):
        before = norm(psi)
        _, flux = step(psi, plan)
        accumulate_flux(ledger, flux, psi.time, removed_probability=before - norm(psi))
    es = energy_spectrum(momentum_spectrum(ledger, psi, psi.time))
    # analytic: Gaussian momentum density pushed through eps(p) = p^2/2 - p^4/8c^2
    s = 1.0 / (2.0 * sigma)
    p = np.sqrt(2 * es.energy)
    for _ in range(50):
        p = np.sqrt(2 * (es.energy + p**4 / (8 * C_LIGHT**2)))
    rho = np.exp(-((p - p0) ** 2) / (2 * s * s)) / np.sqrt(2 * np.pi * s * s)
    oracle = rho / (p - p**3 / (2 * C_LIGHT**2))
    sel = es.positive * np.gradient(es.energy) > 1e-4
    err = np.max(np.abs(es.positive[sel] / oracle[sel] - 1))
    verdict(record_property, err < 0.01,
            f"max relative error {err:.2e} over {sel.sum()} energy bins holding >1e-4 each (limit 1%)")


def test_criterion_12_time_step_convergence(record_property, hhg_runs):
    runs, _, start = hhg_runs
    cuts = [harmonic_cutoff(runs[dt]["spectrum"], start_order=start) for dt in (0.02, 0.01)]
    x = [runs[dt]["x"] for dt in (0.02, 0.01)]
    dx = abs(x[1] - x[0]) / abs(x[1])
    ok = abs(cuts[1] - cuts[0]) < 1 and dx < 1e-3
    verdict(record_property, ok,
            f"cutoff {cuts[0]:.0f} -> {cuts[1]:.0f} and <x(T)> {x[0]:.6f} -> {x[1]:.6f} "
            f"({dx:.2e} relative) when dt halves 0.02 -> 0.01")

"""Run orchestration: eigenstates, propagation with checkpoints, post-processing."""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import CODE_VERSION, ConfigError, RunConfig, scenario_config
from .eigen import EigenResult, imaginary_time_relax, spectral_eigen
from .fields import HARTREE_EV, ponderomotive_and_keldysh
from .grid import SpinorWavefunction, gaussian_packet, norm, read_snapshot, write_snapshot
from .observables import Recorder, SpectrumError, line_shift, radiation_spectrum
from .photoelectron import (
    FluxLedger,
    IonizationWindow,
    accumulate_flux,
    energy_spectrum,
    momentum_spectrum,
    slice_residual,
)
from .propagator import PropagatorPlan, step

log = logging.getLogger(__name__)

__all__ = [
    "OUTPUT_ENV",
    "output_root",
    "RunResult",
    "ResumeError",
    "get_eigenstates",
    "run",
    "run_scenario",
    "compare_runs",
    "photoelectron_from_run",
    "spectrum_from_run",
    "check_grid_capacity",
]

OUTPUT_ENV = "WRTDSE_OUTPUT"


class ResumeError(RuntimeError):
    """Checkpoint cannot be used to continue the run."""


def output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ENV, "wrtdse_runs"))


# --- eigenstates -------------------------------------------------------------------


def _eigen_key(cfg: RunConfig) -> str:
    g = cfg.grid
    spec = {"potential": cfg.potential.to_dict(), "grid": list(g.key()), "eigen": cfg.raw["eigen"]}
    return hashlib.sha256(json.dumps(spec, sort_keys=True, default=float).encode()).hexdigest()[:16]


def get_eigenstates(cfg: RunConfig, cache_dir: Path | None = None) -> EigenResult:
    """Eigenstates for the config's potential and grid, cached on disk by (k, q_e, grid)."""
    cache_dir = Path(cache_dir) if cache_dir is not None else output_root() / "eigen_cache"
    key = _eigen_key(cfg)
    where = cache_dir / key
    if (where / "index.json").exists():
        try:
            return EigenResult.load(where)
        except (ValueError, OSError, KeyError) as exc:
            log.warning("ignoring unreadable eigen cache %s: %s", where, exc)
    e = cfg.raw["eigen"]
    method = e.get("method", "imaginary_time")
    n_states = int(e.get("n_states", 1))
    if method == "imaginary_time":
        res = imaginary_time_relax(cfg.potential, cfg.grid, n_states=n_states, dtau=e.get("dtau"))
    elif method == "spectral":
        res = spectral_eigen(cfg.potential, cfg.grid, float(e.get("T_total", 40.0)), float(e.get("dt", 0.01)),
                             n_states=n_states)
    else:
        raise ConfigError(f"unknown eigen method {method!r}")
    res.save(where, tag=key)
    return res


def _initial_state(cfg: RunConfig, eig: EigenResult | None) -> SpinorWavefunction:
    init = cfg.raw["initial_state"]
    spin = np.asarray(init.get("spin", [1.0, 0.0]), dtype=complex)
    spin = spin / np.linalg.norm(spin)
    kind = init.get("kind", "ground")
    if kind == "gaussian":
        psi = gaussian_packet(
            cfg.grid, float(init.get("x0", 0.0)), float(init.get("z0", 0.0)),
            float(init.get("sigma_x", 1.0)), float(init.get("sigma_z", init.get("sigma_x", 1.0))),
            float(init.get("kx0", 0.0)), float(init.get("kz0", 0.0)), spin,
        )
        return psi
    index = 0 if kind == "ground" else int(init.get("index", 0))
    if eig is None or index >= len(eig.states):
        raise ConfigError(f"eigenstate {index} not available; raise eigen.n_states")
    orb = eig.states[index].up
    psi = SpinorWavefunction(cfg.grid, spin[0] * orb, spin[1] * orb)
    return psi.normalize()


# --- checks ------------------------------------------------------------------------


# tunnelling exponent above which the state is treated as bound for the whole run
BOUND_EXPONENT = 40.0


def check_grid_capacity(cfg: RunConfig, ip: float | None = None) -> dict:
    """Quiver amplitude E0/omega^2 and magnetic drift must fit in the non-absorbing region.

    With the ionization potential ``ip`` known, a state whose tunnelling
    exponent 2 (2 Ip)^(3/2) / (3 E0) exceeds BOUND_EXPONENT never becomes
    free, and the free-electron excursion check is skipped.
    """
    lp = cfg.laser_parameters()
    g = cfg.grid
    if lp is None:
        return {}
    quiver = lp["E0"] / lp["omega"] ** 2
    Up = lp["E0"] ** 2 / (4 * lp["omega"] ** 2)
    pulse = cfg.pulse
    drift = 0.0 if cfg.toggles.dipole_approximation else Up / (2 * cfg.toggles.c) * pulse.t_p
    mask = cfg.absorber
    wx = mask.width_x if mask else 0.0
    wz = mask.width_z if mask else 0.0
    room_x = min(-g.x_min, g.x_max) - wx
    room_z = min(-g.z_min, g.z_max) - wz
    report = {"quiver_amplitude": quiver, "z_drift": drift, "room_x": room_x, "room_z": room_z}
    if ip is not None and ip > 0:
        report["tunnel_exponent"] = 2 * (2 * ip) ** 1.5 / (3 * lp["E0"])
        if report["tunnel_exponent"] > BOUND_EXPONENT:
            report["bound"] = True
            return report
    if quiver >= room_x:
        raise ConfigError(
            f"grid too small: quiver amplitude {quiver:.3g} bohr exceeds the non-absorbing "
            f"half-width {room_x:.3g} bohr along x"
        )
    if cfg.raw["absorber"] is None and drift >= room_z:
        raise ConfigError(
            f"grid too small: magnetic drift {drift:.3g} bohr exceeds the half-width {room_z:.3g} bohr along z"
        )
    return report


# --- run ------------------------------------------------------------------------------


@dataclass
class RunResult:
    out_dir: Path
    config: RunConfig
    psi: SpinorWavefunction
    recorder: Recorder
    ledger: FluxLedger | None
    steps_done: int
    completed: bool
    eigen: EigenResult | None = None
    files: dict = field(default_factory=dict)


def _ckpt_paths(out_dir: Path) -> dict:
    c = out_dir / "checkpoint"
    return {"dir": c, "state": c / "state.snap", "ledger": c / "ledger.npz",
            "recorder": c / "recorder.json", "progress": c / "progress.json"}


def _write_checkpoint(out_dir, cfg, psi, rec, ledger, steps):
    p = _ckpt_paths(out_dir)
    p["dir"].mkdir(parents=True, exist_ok=True)
    tag = cfg.hash()
    write_snapshot(p["state"], psi, tag)
    if ledger is not None:
        ledger.save(p["ledger"])
    p["recorder"].write_text(json.dumps(rec.state()))
    p["progress"].write_text(json.dumps({"step": steps, "config_hash": tag, "dt": cfg.dt,
                                         "version": CODE_VERSION}))


def _read_checkpoint(out_dir, cfg, rec, grid):
    p = _ckpt_paths(out_dir)
    if not p["progress"].exists():
        raise ResumeError(f"no checkpoint in {out_dir}")
    prog = json.loads(p["progress"].read_text())
    if prog.get("config_hash") != cfg.hash():
        raise ResumeError(
            f"config hash {cfg.hash()} differs from checkpoint {prog.get('config_hash')} "
            f"(dt {cfg.dt} vs {prog.get('dt')}); refusing to resume"
        )
    try:
        psi, tag = read_snapshot(p["state"])
    except (OSError, ValueError) as exc:
        raise ResumeError(f"corrupt checkpoint snapshot: {exc}") from exc
    if tag != cfg.hash():
        raise ResumeError("checkpoint snapshot tag does not match the config hash")
    ledger = None
    if cfg.raw["absorber"] is not None:
        if not p["ledger"].exists():
            raise ResumeError(
                "flux ledger missing from checkpoint: absorbed amplitude recorded before the "
                "interruption would be lost and the photoelectron (ATI) spectrum would be wrong"
            )
        try:
            ledger = FluxLedger.load(p["ledger"], grid)
        except (OSError, ValueError, KeyError) as exc:
            raise ResumeError(f"corrupt flux ledger: {exc}") from exc
    rec.load_state(json.loads(p["recorder"].read_text()))
    return psi, ledger, int(prog["step"])


def _ledger_for(cfg: RunConfig) -> FluxLedger | None:
    if cfg.raw["absorber"] is None:
        return None
    pe = cfg.raw["photoelectron"] or {}
    return FluxLedger(cfg.grid, int(pe.get("pad_x", 1)), bool(pe.get("propagate_z", False)))


def run(cfg: RunConfig, out_dir=None, resume: bool = False, stop_after: int | None = None,
        eigen_cache: Path | None = None) -> RunResult:
    """Execute a run; writes outputs when the final step is reached.

    ``stop_after`` ends the loop after that many total steps (used to
    emulate an interruption); with ``checkpoint_every`` > 0 a checkpoint is
    written every that many steps and at the stop.
    """
    out_dir = Path(out_dir) if out_dir is not None else output_root() / f"{cfg.name}_{cfg.hash()}"
    out_dir.mkdir(parents=True, exist_ok=True)
    tg = cfg.toggles
    grid = cfg.grid
    pot = cfg.potential
    rec = Recorder(pot, tg, cadence=int(cfg.raw["record_every"]), window=cfg.raw["com_window"],
                   accelerations=bool(cfg.raw["accelerations"]), ordering=cfg.raw["acceleration_ordering"])
    eig = None
    if cfg.raw["initial_state"].get("kind", "ground") != "gaussian":
        eig = get_eigenstates(cfg, eigen_cache)
    capacity = check_grid_capacity(cfg, None if eig is None else -eig.energies[0][1])
    plan = PropagatorPlan(grid, pot, cfg.dt, pulse=cfg.pulse, toggles=tg, absorber=cfg.absorber,
                          spin_taylor_order=int(cfg.raw["spin_taylor_order"]),
                          nan_check_every=int(cfg.raw["nan_check_every"]),
                          absorb_every=cfg.absorb_every)
    if resume:
        psi, ledger, start = _read_checkpoint(out_dir, cfg, rec, grid)
    else:
        psi = _initial_state(cfg, eig)
        ledger = _ledger_for(cfg)
        start = 0
        rec.sample(psi)
    n_total = cfg.n_steps
    end = n_total if stop_after is None else min(n_total, int(stop_after))
    every = int(cfg.raw["checkpoint_every"])
    t_start = time.perf_counter()
    i = start
    for i in range(start + 1, end + 1):
        before = norm(psi) if ledger is not None else 0.0
        _, flux = step(psi, plan)
        if ledger is not None and flux is not None:
            accumulate_flux(ledger, flux, psi.time, removed_probability=before - norm(psi))
        rec(i, psi)
        if every and i % every == 0 and i < n_total:
            _write_checkpoint(out_dir, cfg, psi, rec, ledger, i)
    steps_done = max(i, start)
    completed = steps_done >= n_total
    if not completed:
        _write_checkpoint(out_dir, cfg, psi, rec, ledger, steps_done)
    result = RunResult(out_dir, cfg, psi, rec, ledger, steps_done, completed, eig)
    if completed:
        _finalize(result, capacity, time.perf_counter() - t_start)
    return result


def _plateau_window(cfg: RunConfig, times: np.ndarray) -> tuple[float, float]:
    pulse = cfg.pulse
    kind = cfg.raw["spectra"].get("window", "plateau")
    if pulse is None or kind == "all":
        return float(times[0]), float(times[-1])
    if kind == "post":
        return float(min(pulse.t_p, times[-1])), float(times[-1])
    return float(pulse.t_on), float(min(pulse.t_p, times[-1]))


def _finalize(result: RunResult, capacity: dict, elapsed: float):
    cfg, out = result.config, result.out_dir
    h = cfg.hash()
    meta = {"config_hash": h, "version": CODE_VERSION, "name": cfg.name}
    files = {}
    files["timeseries"] = str(result.recorder.write_csv(out / "timeseries.csv", meta).name)
    write_snapshot(out / "final.snap", result.psi, h)
    files["final_state"] = "final.snap"
    lp = cfg.laser_parameters()
    omega = lp["omega"] if lp else 1.0
    times = np.array(result.recorder.times)
    if len(times) >= 16:
        window = _plateau_window(cfg, times)
        pad = int(cfg.raw["spectra"].get("pad", 4))
        for ch in ("a_x", "a_z"):
            try:
                spec = radiation_spectrum(result.recorder.series(ch), omega, window, channel=ch[-1], pad=pad)
            except SpectrumError as exc:
                log.warning("skipping %s spectrum: %s", ch, exc)
                continue
            spec.meta.update(meta)
            files[f"spectrum_{ch}"] = str(spec.write_csv(out / f"spectrum_{ch}.csv").name)
        if cfg.toggles.spin_active:
            try:
                spec = radiation_spectrum(result.recorder.series("p_down"), omega, window, channel="p_down",
                                          pad=pad, subtract_mean=True)
                spec.meta.update(meta)
                files["spectrum_p_down"] = str(spec.write_csv(out / "spectrum_p_down.csv").name)
            except SpectrumError as exc:
                log.warning("skipping spin spectrum: %s", exc)
    if result.ledger is not None:
        result.ledger.save(out / "ledger.npz")
        files["ledger"] = "ledger.npz"
        if cfg.raw["photoelectron"] is not None:
            es, pe_meta = photoelectron_from_run(result)
            es.write_csv(out / "pes.csv", {**meta, **pe_meta})
            files["pes"] = "pes.csv"
    manifest = {
        **meta,
        "config": cfg.to_dict(),
        "scale_factor": cfg.meta.get("scale_factor", 1.0),
        "steps": result.steps_done,
        "final_time": result.psi.time,
        "final_norm": norm(result.psi),
        "absorbed_probability": result.ledger.absorbed_probability if result.ledger else 0.0,
        "elapsed_seconds": elapsed,
        "grid_capacity": capacity,
        "files": files,
    }
    pulse = cfg.pulse
    if pulse is not None:
        manifest["pulse"] = {**pulse.to_dict(), "t_on_requested": pulse.t_on_requested,
                             "turn_on_cycles": pulse.turn_on_cycles}
    if result.eigen is not None:
        manifest["eigen_energies"] = [e for _, e, _ in result.eigen.energies]
        manifest["eigen_labels"] = result.eigen.labels
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=float))
    result.files = files


def photoelectron_from_run(result: RunResult, X_I: float | None = None, X_0: float | None = None):
    """Energy spectrum from the run's ledger and final state."""
    cfg = result.config
    pe = cfg.raw["photoelectron"] or {}
    if X_I is None:
        X_I = pe.get("X_I")
    if X_I is None:
        X_I = 5.0 * cfg.potential.ground_radius()
    X_0 = float(pe.get("X_0", 10.0) if X_0 is None else X_0)
    win = IonizationWindow(float(X_I), X_0)
    resid = slice_residual(result.psi, win)
    ms = momentum_spectrum(result.ledger, resid, result.psi.time)
    es = energy_spectrum(ms, c=cfg.toggles.c)
    lp = cfg.laser_parameters()
    meta = {**win.to_dict(), "absorber_cadence_steps": cfg.absorb_every, "pad_x": result.ledger.pad_x if result.ledger else 1,
            "free_phase": "p_x^2/2 and p_z^2/2" if (result.ledger and result.ledger.propagate_z) else "p_x^2/2 only"}
    if lp is not None and result.eigen is not None:
        Ip = -result.eigen.energies[0][1]
        sf = ponderomotive_and_keldysh(lp["E0"], lp["omega"], Ip)
        meta.update({"Up_au": sf.Up, "Up_eV": sf.Up * HARTREE_EV, "Ip_au": Ip, "keldysh": sf.keldysh})
    return es, meta


def _load_result(run_dir) -> RunResult:
    run_dir = Path(run_dir)
    man = json.loads((run_dir / "manifest.json").read_text())
    cfg = RunConfig.from_dict(man["config"])
    psi, _ = read_snapshot(run_dir / "final.snap")
    ledger = FluxLedger.load(run_dir / "ledger.npz", cfg.grid) if (run_dir / "ledger.npz").exists() else None
    rec = Recorder(cfg.potential, cfg.toggles)
    data = np.genfromtxt(run_dir / "timeseries.csv", delimiter=",", skip_header=2)
    rec.times = list(data[:, 0])
    rec.rows = [tuple(r[1:]) for r in data]
    eig = None
    if "eigen_energies" in man:
        eig = EigenResult([(i, e, 0.0) for i, e in enumerate(man["eigen_energies"])], [], man["eigen_labels"])
    return RunResult(run_dir, cfg, psi, rec, ledger, man["steps"], True, eig)


def spectrum_from_run(run_dir, channel: str = "a_x", window=None, pad: int = 4):
    res = _load_result(run_dir)
    lp = res.config.laser_parameters()
    omega = lp["omega"] if lp else 1.0
    series = res.recorder.series(channel)
    if window is None:
        window = _plateau_window(res.config, series.times)
    return radiation_spectrum(series, omega, window, channel=channel, pad=pad,
                              subtract_mean=channel == "p_down")


def compare_runs(run_a, run_b, observable: str = "x", bands=None) -> dict:
    """Differences between two completed runs on identical grids and cadences."""
    a, b = _load_result(run_a), _load_result(run_b)
    if a.config.grid.key() != b.config.grid.key():
        raise ConfigError("runs use different grids")
    ta, tb = np.array(a.recorder.times), np.array(b.recorder.times)
    if ta.shape != tb.shape or not np.allclose(ta, tb, rtol=0, atol=1e-9):
        raise ConfigError("runs have different time axes")
    report: dict = {"observable": observable, "run_a": str(run_a), "run_b": str(run_b)}
    if observable.startswith("spectrum:"):
        ch = observable.split(":", 1)[1]
        sa, sb = spectrum_from_run(run_a, ch), spectrum_from_run(run_b, ch)
        if sa.frequency.shape != sb.frequency.shape:
            raise ConfigError("spectra have different frequency axes")
        report["max_log_power_diff"] = float(np.max(np.abs(sa.log_power() - sb.log_power())))
        shifts = []
        for band in bands or []:
            try:
                pa, pb, d = line_shift(sa, sb, tuple(band))
                shifts.append({"band": list(band), "position_a": pa, "position_b": pb, "shift": d})
            except SpectrumError as exc:
                shifts.append({"band": list(band), "error": str(exc)})
        report["line_shifts"] = shifts
        return report
    va, vb = a.recorder.series(observable).values, b.recorder.series(observable).values
    diff = va - vb
    report.update({
        "max_abs_diff": float(np.max(np.abs(diff))),
        "rms_diff": float(math.sqrt(np.mean(diff**2))),
        "rms_a": float(math.sqrt(np.mean(va**2))),
        "rms_b": float(math.sqrt(np.mean(vb**2))),
        "final_a": float(va[-1]),
        "final_b": float(vb[-1]),
    })
    return report


def run_scenario(name: str, scale_factor: float = 1.0, overrides: dict | None = None, out_dir=None,
                 resume: bool = False) -> RunResult:
    cfg = scenario_config(name, scale_factor, overrides)
    return run(cfg, out_dir=out_dir, resume=resume)

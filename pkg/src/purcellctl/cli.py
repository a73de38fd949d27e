"""``purcellctl``: run a scenario file and write CSV/JSON artifacts.

    purcellctl lifetime --config golden:lifetime --out runs/lifetime
    purcellctl budget --config my.json --set budget.eta_det=0.8
    purcellctl switch --config golden:switch --validate-only

Exit codes: 0 ok, 2 config error, 3 runtime error. Artifacts are staged in a
temporary directory and moved into ``--out`` only after the run succeeds.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import logging
import math
import os
import platform
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from . import analysis, budget, cavity, dynamics, ensemble, lock, nanoparticle
from .config import (SUBCOMMANDS, ConfigError, apply_overrides, config_hash, load_raw,
                     resolved, schedule_from_config, validate)
from .iofmt import csv_text, json_text

log = logging.getLogger("purcellctl")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def task_seeds(seed: int, n: int) -> list[int]:
    """Independent per-task seeds derived from the master seed."""
    return [int(ss.generate_state(1, np.uint64)[0]) for ss in np.random.SeedSequence(seed).spawn(n)]


# ---------------------------------------------------------------------------
# shared builders


def _cavity_mode(c: dict, with_particle: bool = True) -> cavity.CavityMode:
    geom = cavity.CavityGeometry(length=c["length_um"], roc=c["roc_um"])
    if c["finesse"] is not None:
        return cavity.cavity_mode(geom, c["wavelength_nm"], finesse_value=c["finesse"])
    mirrors = cavity.MirrorSet(c["t_fiber_ppm"], c["t_flat_ppm"], c["absorption_ppm"])
    extra = c["particle_loss_ppm"] if with_particle else 0.0
    return cavity.cavity_mode(geom, c["wavelength_nm"], mirrors=mirrors, extra_loss=extra)


def _peak_purcell(cfg: dict) -> float:
    e = cfg["ensemble"]
    if e["peak_purcell"] != "derive":
        return float(e["peak_purcell"])
    return cfg["cavity"]["branching_ratio"] * _cavity_mode(cfg["cavity"]).purcell_c0


def _mean_purcell(cfg: dict) -> float:
    e = cfg["ensemble"]
    eps_sw = ensemble.mean_standing_wave(e["radius_nm"], cfg["cavity"]["wavelength_nm"],
                                         e["standing_wave_weighting"])
    return ensemble.expected_average_purcell(_peak_purcell(cfg), eps_sw,
                                             ensemble.mean_dipole_coupling(), e["epsilon_disp"])


def _scalar_purcell(cfg: dict) -> float:
    c = cfg["dynamics"]["purcell"]
    if c != "derive":
        return float(c)
    if "cavity" not in cfg or "ensemble" not in cfg:
        raise ConfigError(["dynamics.purcell: 'derive' needs the cavity and ensemble sections"])
    return _mean_purcell(cfg)


def _sequence(d: dict, off: float | None = None) -> dynamics.SequenceConfig:
    return dynamics.SequenceConfig(
        excite_duration=d["excite_us"],
        guard_wait=d["guard_us"],
        collect_duration=d["collect_ms"],
        alternation=dynamics.Alternation(d["alternation_on_ms"], d["alternation_off_ms"],
                                         d["alternation_cycles"]),
        ramp_duration=d["ramp_us"],
        off_detuning=d["off_detuning_linewidths"] if off is None else off,
        step=d["step_us"],
    )


def _noise_model(lk: dict) -> lock.MechanicalNoiseModel:
    modes = tuple(lock.MechanicalMode(f, lk["mode_quality"], a)
                  for f, a in zip(lk["mode_frequencies_khz"], lk["mode_amplitudes_pm"]))
    return lock.MechanicalNoiseModel(
        modes=modes, slow_drift=lk["slow_drift_pm"], cycle_period=lk["cycle_period_ms"],
        lateral_coupling=lk["lateral_coupling"], sensor_noise=lk["sensor_noise_pm"],
        frequency_spread=lk["frequency_spread"],
    )


def _fit_report(res: analysis.FitResult, key: str, scale: float = 1.0) -> dict:
    r = res.report(key)
    r["estimate"] *= scale
    r["stderr"] *= scale
    return r


# ---------------------------------------------------------------------------
# subcommands: each returns {artifact name: file text}


def cmd_budget(cfg: dict, seed) -> dict[str, str]:
    b = cfg["budget"]
    chain = budget.EfficiencyChain(b["eta_out"], b["eta_mm"], b["eta_col"], b["eta_det"], b["eta_g"])
    src = budget.SourceModel(b["p_exc"], b["chi_cav"], b["beta"], b["dark_rate_hz"], b["tau_c_ms"])
    cal = budget.PowerCalibration(tuple(b["calibration_power_nw"]), tuple(b["calibration_ions"]))
    ups = tuple(budget.Upgrade(k, v) for k, v in b["upgrades"].items())
    report = budget.budget_report(chain, src, cal, b["query_power_nw"], ups)
    report["upgrades"] = budget.upgrade_projection(chain, src, ups, b["stated_combined_factor"])
    return {"budget.json": json_text(report)}


def cmd_scatter_map(cfg: dict, seed) -> dict[str, str]:
    c, p = cfg["cavity"], cfg["particle"]
    host = nanoparticle.HostMaterial(refractive_index=p["refractive_index"],
                                     cation_density=p["cation_density_per_m3"],
                                     c2_site_fraction=p["c2_site_fraction"])
    radius = p["radius_nm"]
    if radius is None:
        radius = nanoparticle.radius_from_loss(p["loss_ppm"], p["wavelength_nm"], p["waist_um"], host)
    part = nanoparticle.Nanoparticle(radius, p["doping_ppm"], host)
    peak = nanoparticle.scattering_loss(part, p["wavelength_nm"], p["waist_um"])
    n = int(round(p["scan_half_width_um"] / p["scan_step_um"]))
    axis = p["scan_step_um"] * np.arange(-n, n + 1)
    grid = nanoparticle.scan_map(part, axis, axis, p["waist_um"], p["wavelength_nm"])
    rows = [(float(x), float(y), float(grid[j, i]))
            for j, y in enumerate(axis) for i, x in enumerate(axis)]

    mirrors = cavity.MirrorSet(c["t_fiber_ppm"], c["t_flat_ppm"], c["absorption_ppm"])
    summary = {
        "radius_nm": radius,
        "peak_loss_ppm": peak,
        "ion_count": nanoparticle.ion_count(part),
        "finesse_empty": cavity.finesse(mirrors),
        "finesse_with_particle": cavity.finesse(mirrors, peak),
        "waist_um": p["waist_um"],
    }
    return {
        "scatter_map.csv": csv_text(["x_offset_um", "y_offset_um", "loss_ppm"], rows),
        "scatter_map.json": json_text(summary),
    }


def cmd_lifetime(cfg: dict, seed: int) -> dict[str, str]:
    d, a = cfg["dynamics"], cfg["analysis"]
    c = _scalar_purcell(cfg)
    seq = _sequence(d)
    bg = d["dark_rate_hz"] if a["subtract_background"] else None
    seeds = task_seeds(seed, 1 + len(d["t_d_ms"]))

    phys = dynamics.PhysicsInputs(c, d["tau_n_ms"], d["n0_ions"], d["p_det"], d["dark_rate_hz"],
                                  d["repetitions"], seeds[0])
    coupled = dynamics.run_sequence(seq, "coupled", phys)
    hist = analysis.bin_record(coupled.photons, a["bin_us"], background_rate=bg)
    fit_c = analysis.fit_exponential(hist, weighted=a["weighted"])
    if not fit_c.converged:
        raise RuntimeError(f"coupled lifetime fit failed: {fit_c.message}")

    records = {}
    for td, s in zip(d["t_d_ms"], seeds[1:]):
        seq_td = dataclasses.replace(seq, decouple_delay=td)
        phys_td = dataclasses.replace(phys, n0=d["n0_decoupled_ions"], seed=s)
        records[float(td)] = dynamics.run_sequence(seq_td, "decoupled", phys_td).photons
    fit_n = analysis.natural_lifetime_protocol(records, d["t_d_window_ms"], background_rate=bg,
                                               weighted=a["weighted"], offset=d["ramp_us"] * 1e-3)
    if not fit_n.converged:
        raise RuntimeError(f"natural lifetime fit failed: {fit_n.message}")

    tau_c = fit_c.parameters["tau"] * 1e-3
    tau_n = fit_n.parameters["tau"]
    summary = {
        "purcell_input": c,
        "tau_c_ms": _fit_report(fit_c, "tau", 1e-3),
        "tau_n_ms": _fit_report(fit_n, "tau"),
        "purcell_from_lifetimes": analysis.purcell_from_lifetimes(tau_n, tau_c),
        "tau_c_analytic_ms": d["tau_n_ms"] / (1.0 + c),
        "coupled_counts": len(coupled.photons),
    }
    trace_rows = zip(coupled.population.times.tolist(), coupled.population.population.tolist(),
                     coupled.rate.rate.tolist())
    td_rows = zip(fit_n.extra["t_d_ms"], fit_n.extra["counts"])
    return {
        "lifetime.json": json_text(summary),
        "coupled_histogram.csv": csv_text(["bin_start_us", "counts"],
                                          zip(hist.bin_edges[:-1].tolist(), hist.counts.tolist())),
        "coupled_trace.csv": csv_text(["time_us", "population", "rate_hz"], trace_rows),
        "decoupled_counts.csv": csv_text(["t_d_ms", "counts"], td_rows),
    }


def _scaled_schedule(sched: dynamics.DetuningSchedule, k: float) -> dynamics.DetuningSchedule:
    segs = []
    for s in sched.segments:
        if isinstance(s, dynamics.Hold):
            segs.append(dynamics.Hold(s.delta * k, s.duration))
        else:
            segs.append(dynamics.Ramp(s.delta_from * k, s.delta_to * k, s.duration))
    return dynamics.DetuningSchedule(segs)


def _edges(sched, rate) -> list[dict]:
    out = []
    for t0, t1, edge in sched.ramp_windows():
        try:
            s = dynamics.switching_time(rate, (t0, t1), edge)
        except dynamics.SwitchingError:
            s = math.nan
        out.append({"start_us": t0, "end_us": t1, "edge": edge, "switching_us": s})
    return out


def cmd_switch(cfg: dict, seed: int) -> dict[str, str]:
    d = cfg["dynamics"]
    c = _scalar_purcell(cfg)
    if d["schedule"] is not None:
        sched = schedule_from_config(d["schedule"])
        window = (0.0, sched.span)
    else:
        sched, window = dynamics.build_schedule(_sequence(d), "alternation")
    off = d["off_detuning_linewidths"]
    if off <= 0:
        raise ConfigError(["dynamics.off_detuning_linewidths: switching needs a nonzero detuning"])
    variants = {"ideal": sched,
                "degraded": _scaled_schedule(sched, d["degraded_off_detuning_linewidths"] / off)}

    out, summary = {}, {"purcell_input": c}
    for name, sch in variants.items():
        pop, rate = dynamics.simulate_trace(sch, c, d["tau_n_ms"], n0=d["n0_ions"], step=d["step_us"])
        edges = _edges(sch, rate)
        falling = [e["switching_us"] for e in edges if e["edge"] == "falling"]
        rising = [e["switching_us"] for e in edges if e["edge"] == "rising"]
        summary[name] = {
            "falling_edge_us": falling[0] if falling else math.nan,
            "rising_edge_us": rising[0] if rising else math.nan,
            "edges": edges,
        }
        out[f"{name}_trace.csv"] = csv_text(["time_us", "population", "rate_hz"],
                                            zip(pop.times.tolist(), pop.population.tolist(),
                                                rate.rate.tolist()))
        if name == "ideal":
            rec = dynamics.simulate_photons(rate, d["p_det"], d["dark_rate_hz"], task_seeds(seed, 1)[0],
                                            window=window, repetitions=d["repetitions"])
            out["ideal_photons.csv"] = csv_text(["timestamp_us"], ((float(t),) for t in rec.timestamps))
            summary["ideal"]["detected_counts"] = len(rec)
    out["switch.json"] = json_text(summary)
    return out


def cmd_windowed(cfg: dict, seed: int) -> dict[str, str]:
    c, e, d, a = cfg["cavity"], cfg["ensemble"], cfg["dynamics"], cfg["analysis"]
    s_ens, s_ph = task_seeds(seed, 2)
    peak = _peak_purcell(cfg)
    ec = ensemble.EnsembleConfig(ion_count=e["ion_count"], particle_radius=e["radius_nm"], seed=s_ens,
                                 epsilon_disp=e["epsilon_disp"], p_exc=e["p_exc"],
                                 disp_model=e["disp_model"],
                                 position_weighting=e["standing_wave_weighting"])
    dist = ensemble.sample_ensemble(ec, peak, c["wavelength_nm"])

    seq = _sequence(d)
    phys = dynamics.PhysicsInputs(dist, d["tau_n_ms"], d["n0_ions"], d["p_det"], d["dark_rate_hz"],
                                  d["repetitions"], s_ph)
    res = dynamics.run_sequence(seq, "coupled", phys)
    bg = d["dark_rate_hz"] if a["subtract_background"] else None
    hist = analysis.bin_record(res.photons, a["windowed_bin_us"], background_rate=bg)
    start = res.window[0]
    ends = analysis.default_window_ends(a["window_first_us"], a["window_last_us"], a["window_count"])
    ends = ends[ends <= res.window[1] - start + 1e-9]
    rows = analysis.windowed_lifetime(hist, start + ends, start=start, weighted=a["weighted"])
    for r in rows:
        r["t"] -= start

    summary = {
        "peak_purcell": peak,
        "mean_purcell_sampled": dist.mean_c,
        "mean_purcell_expected": _mean_purcell(cfg),
        "ion_count": len(dist),
        "excited_ions": int(dist.excited.sum()),
        "tau_first_window_ms": rows[0]["tau"] * 1e-3,
        "tau_last_window_ms": rows[-1]["tau"] * 1e-3,
        "detected_counts": len(res.photons),
    }
    window_rows = ((r["t"], r["tau"] * 1e-3, r["stderr"] * 1e-3, r["converged"]) for r in rows)
    ion_rows = zip(range(len(dist)), dist.axial_offset.tolist(), dist.orientation_index.tolist(),
                   dist.per_ion_c.tolist())
    return {
        "windowed.json": json_text(summary),
        "windowed_lifetime.csv": csv_text(["window_end_us", "tau_ms", "stderr_ms", "converged"],
                                          window_rows),
        "purcell_distribution.csv": csv_text(["ion_index", "axial_offset_nm", "orientation_index",
                                              "purcell_c"], ion_rows),
    }


def _controller(lk: dict, feedback_on: bool = True) -> lock.Controller:
    return lock.Controller(lk["proportional_gain"], lk["integral_gain_per_ms"], feedback_on,
                           feedback_sign=lk["feedback_sign"],
                           actuator_bandwidth=lk["actuator_bandwidth_khz"])


def cmd_lock(cfg: dict, seed: int) -> dict[str, str]:
    lk = cfg["lock"]
    noise = _noise_model(lk)
    kw = dict(duration=lk["duration_ms"], seed=task_seeds(seed, 1)[0], dt=lk["step_us"],
              lock_wavelength=lk["lock_wavelength_nm"], lock_finesse=lk["lock_finesse"])
    locked = lock.simulate_lock(noise, _controller(lk), **kw)
    free = lock.simulate_lock(noise, _controller(lk, feedback_on=False), **kw)
    rep = lock.stability_report(locked.trace, lk["average_transmission"], lk["linewidth_ratio"],
                                lk["lock_wavelength_nm"], lk["lock_finesse"])
    summary = {
        "locked": {"rms_displacement_pm": locked.rms, "diverged": locked.diverged,
                   "stability_estimate_pm": lock.stability_estimate(
                       locked.trace, lk["lock_wavelength_nm"], lk["lock_finesse"])},
        "unlocked": {"rms_displacement_pm": free.rms},
        "fringe_width_pm": locked.linewidth,
        "report": rep.as_dict(),
    }

    def rows(r):
        return zip(r.trace.times.tolist(), np.asarray(r.trace.transmission).tolist(),
                   r.displacement.tolist())

    header = ["time_ms", "transmission", "displacement_pm"]
    return {
        "lock.json": json_text(summary),
        "locked_trace.csv": csv_text(header, rows(locked)),
        "unlocked_trace.csv": csv_text(header, rows(free)),
    }


def cmd_noise_vs_ramp(cfg: dict, seed: int) -> dict[str, str]:
    lk = cfg["lock"]
    noise = _noise_model(lk)
    ramps = sorted(lk["ramp_us"])
    res = lock.residual_noise_vs_ramp(noise, ramps, seed, n_seeds=lk["noise_seeds"],
                                      window=lk["noise_window_ms"],
                                      lock_wavelength=lk["lock_wavelength_nm"],
                                      lock_finesse=lk["lock_finesse"])
    rms = [r["residual_rms_pm"] for r in res]
    summary = {
        "baseline_rms_pm": lock.baseline_rms(noise),
        "monotone_non_increasing": bool(all(b <= a for a, b in zip(rms, rms[1:]))),
        "sweep": res,
    }
    keys = ["ramp_us", "drive_frequency_khz", "residual_rms_pm", "residual_rms_sem_pm", "driven_rms_pm"]
    return {
        "noise_vs_ramp.json": json_text(summary),
        "noise_vs_ramp.csv": csv_text(keys, ([r[k] for k in keys] for r in res)),
    }


COMMANDS = {
    "budget": cmd_budget,
    "scatter-map": cmd_scatter_map,
    "lifetime": cmd_lifetime,
    "switch": cmd_switch,
    "windowed": cmd_windowed,
    "lock": cmd_lock,
    "noise-vs-ramp": cmd_noise_vs_ramp,
}
assert set(COMMANDS) == set(SUBCOMMANDS)


# ---------------------------------------------------------------------------


def manifest(subcommand: str, cfg: dict, seed, overrides, artifacts: dict[str, str]) -> dict:
    return {
        "subcommand": subcommand,
        "seed": seed,
        "config_sha256": config_hash(cfg),
        "config": cfg,
        "overrides": list(overrides),
        "versions": {
            "purcellctl": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "artifacts": {k: hashlib.sha256(v.encode("utf-8")).hexdigest() for k, v in sorted(artifacts.items())},
    }


def publish(out_dir: Path, files: dict[str, str]) -> None:
    """Write every file to a staging directory, then move them all into ``out_dir``."""
    out_dir.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=".purcellctl-stage-", dir=out_dir))
    try:
        for name, text in files.items():
            (stage / name).write_text(text, encoding="utf-8", newline="")
        for name in files:
            os.replace(stage / name, out_dir / name)
    finally:
        shutil.rmtree(stage, ignore_errors=True)


def run(subcommand: str, config_path, overrides=(), out_dir=None, seed: int | None = None,
        validate_only: bool = False) -> tuple[int, list[str]]:
    """Programmatic entry point: (exit code, messages)."""
    try:
        raw = apply_overrides(load_raw(config_path), overrides)
        if seed is not None:
            raw["seed"] = seed
        diags = validate(raw, subcommand)
    except ConfigError as exc:
        return EXIT_CONFIG, exc.diagnostics
    if diags:
        return EXIT_CONFIG, diags
    if validate_only:
        return EXIT_OK, ["config OK"]

    cfg = resolved(raw)
    run_seed = cfg.get("seed")
    try:
        files = COMMANDS[subcommand](cfg, run_seed)
    except ConfigError as exc:
        return EXIT_CONFIG, exc.diagnostics
    except (ValueError, RuntimeError, ArithmeticError, np.linalg.LinAlgError) as exc:
        log.debug("runtime failure", exc_info=True)
        return EXIT_RUNTIME, [f"{subcommand} failed: {exc}"]

    files["manifest.json"] = json_text(manifest(subcommand, cfg, run_seed, overrides, files))
    target = Path(out_dir or cfg.get("output_dir") or Path("purcellctl-out") / subcommand)
    try:
        publish(target, files)
    except OSError as exc:
        return EXIT_RUNTIME, [f"cannot write artifacts to {target}: {exc}"]
    return EXIT_OK, [f"wrote {len(files)} files to {target}"]


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="purcellctl", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"purcellctl {__version__}")
    ap.add_argument("-v", "--verbose", action="store_true")
    ap.add_argument("subcommand", choices=sorted(COMMANDS))
    ap.add_argument("--config", required=True,
                    help="scenario JSON path, or golden:NAME for a packaged scenario")
    ap.add_argument("--out", help="artifact directory (default: config output_dir)")
    ap.add_argument("--seed", type=int, help="master seed (overrides the config)")
    ap.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                    help="override a config field, e.g. dynamics.purcell=31 (repeatable)")
    ap.add_argument("--validate-only", action="store_true", help="check the config and exit")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    code, messages = run(args.subcommand, args.config, args.overrides, args.out, args.seed,
                         args.validate_only)
    stream = sys.stdout if code == EXIT_OK else sys.stderr
    for m in messages:
        print(m, file=stream)
    return code


if __name__ == "__main__":
    sys.exit(main())

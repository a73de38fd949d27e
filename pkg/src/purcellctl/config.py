"""Scenario configuration: JSON files with unit-suffixed keys.

A scenario is a JSON object with a master ``seed`` and one section per
subsystem. Missing keys inside a present section take their defaults;
unknown keys are reported (a typo in a unit suffix would otherwise be
silently ignored).
"""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any

from .dynamics import Hold, Ramp, schedule_violations


class ConfigError(ValueError):
    """Config cannot be loaded or fails validation."""

    def __init__(self, diagnostics: list[str]):
        super().__init__("; ".join(diagnostics))
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class Field:
    default: Any
    kind: str = "float"  # float | int | bool | str | list | schedule
    lo: float | None = None
    hi: float | None = None
    lo_open: bool = False
    choices: tuple = ()
    nullable: bool = False
    derive: bool = False  # accepts the string "derive"


def _pos(default, **kw):
    return Field(default, lo=0.0, lo_open=True, **kw)


def _nonneg(default, **kw):
    return Field(default, lo=0.0, **kw)


def _prob(default, **kw):
    return Field(default, lo=0.0, hi=1.0, **kw)


SCHEMA: dict[str, dict[str, Field]] = {
    "cavity": {
        "wavelength_nm": _pos(1535.0),
        "length_um": _pos(6.0),
        "roc_um": _pos(50.0),
        "t_fiber_ppm": _nonneg(100.0),
        "t_flat_ppm": _nonneg(200.0),
        "absorption_ppm": _nonneg(0.0),
        "particle_loss_ppm": _nonneg(43.0),
        "finesse": _pos(None, nullable=True),
        "branching_ratio": Field(0.21, lo=0.0, hi=1.0, lo_open=True),
        "lock_wavelength_nm": _pos(790.0),
        "lock_finesse": _pos(700.0),
    },
    "particle": {
        "radius_nm": _nonneg(None, nullable=True),
        "loss_ppm": _nonneg(43.0),
        "waist_um": _pos(2.9),
        "wavelength_nm": _pos(1535.0),
        "refractive_index": Field(1.9317, lo=1.0),
        "doping_ppm": _nonneg(200.0),
        "cation_density_per_m3": _pos(2.67e28),
        "c2_site_fraction": Field(0.75, lo=0.0, hi=1.0, lo_open=True),
        "scan_half_width_um": _pos(6.0),
        "scan_step_um": _pos(0.25),
    },
    "ensemble": {
        "ion_count": Field(100_000, kind="int", lo=1),
        "radius_nm": _nonneg(90.5),
        "peak_purcell": _pos(176.0, derive=True),
        "epsilon_disp": Field(0.22, lo=0.0, hi=1.0, lo_open=True),
        "p_exc": _prob(0.5),
        "disp_model": Field("uniform", kind="str", choices=("uniform", "quasi_static")),
        "standing_wave_weighting": Field("volume", kind="str", choices=("volume", "line")),
    },
    "dynamics": {
        "purcell": _nonneg(31.0, derive=True),
        "tau_n_ms": _pos(18.4),
        "n0_ions": _pos(40.0),
        "n0_decoupled_ions": _pos(5500.0),
        "p_det": _prob(0.0028),
        "dark_rate_hz": _nonneg(15.0),
        "repetitions": Field(1000, kind="int", lo=1),
        "excite_us": _nonneg(300.0),
        "guard_us": _nonneg(50.0),
        "collect_ms": _pos(5.0),
        "ramp_us": _pos(300.0),
        "off_detuning_linewidths": _nonneg(12.0),
        "degraded_off_detuning_linewidths": _nonneg(5.0),
        "step_us": _pos(1.0),
        "t_d_ms": Field([0.0, 4.0, 8.0, 12.0, 16.0, 20.0, 24.0, 28.0], kind="list", lo=0.0),
        "t_d_window_ms": _pos(5.0),
        "alternation_on_ms": _pos(1.0),
        "alternation_off_ms": _pos(2.5),
        "alternation_cycles": Field(5, kind="int", lo=1),
        "schedule": Field(None, kind="schedule", nullable=True),
    },
    "analysis": {
        "bin_us": _pos(150.0),
        "weighted": Field(False, kind="bool"),
        "subtract_background": Field(True, kind="bool"),
        "windowed_bin_us": _pos(1.0),
        "window_first_us": _pos(35.0),
        "window_last_us": _pos(5000.0),
        "window_count": Field(40, kind="int", lo=2),
    },
    "lock": {
        "lock_wavelength_nm": _pos(790.0),
        "lock_finesse": _pos(700.0),
        "mode_frequencies_khz": Field([7.0, 8.5, 10.0], kind="list", lo=0.0, lo_open=True),
        "mode_quality": _pos(50.0),
        "mode_amplitudes_pm": Field([14.0, 18.0, 12.0], kind="list", lo=0.0),
        "frequency_spread": Field(0.1, lo=0.0, hi=0.99),
        "slow_drift_pm": _nonneg(300.0),
        "cycle_period_ms": _pos(1000.0),
        "lateral_coupling": _prob(0.3),
        "sensor_noise_pm": _nonneg(0.0),
        "proportional_gain": _nonneg(0.5),
        "integral_gain_per_ms": _nonneg(3.0),
        "actuator_bandwidth_khz": _pos(1.0),
        "feedback_sign": Field(None, kind="int", choices=(1, -1), nullable=True),
        "duration_ms": _pos(200.0),
        "step_us": _pos(1.0),
        "average_transmission": Field(0.8, lo=0.0, hi=1.0, lo_open=True),
        "linewidth_ratio": _pos(12.0),
        "ramp_us": Field([25.0, 50.0, 100.0, 150.0, 200.0, 300.0, 500.0, 700.0, 1000.0],
                         kind="list", lo=0.0, lo_open=True),
        "noise_seeds": Field(100, kind="int", lo=1),
        "noise_window_ms": _pos(1.0),
    },
    "budget": {
        "eta_out": _prob(0.25),
        "eta_mm": _prob(0.60),
        "eta_col": _prob(0.3),
        "eta_det": _prob(0.1),
        "eta_g": _prob(0.63),
        "p_exc": _prob(0.5),
        "chi_cav": _prob(0.974),
        "beta": _prob(0.969),
        "dark_rate_hz": _nonneg(10.0),
        "tau_c_ms": _pos(0.53),
        "calibration_power_nw": Field([0.0, 0.33, 7.0], kind="list", lo=0.0),
        "calibration_ions": Field([0.0, 10.0, 80.0], kind="list", lo=0.0),
        "query_power_nw": Field([0.33, 7.0], kind="list", lo=0.0),
        "upgrades": Field({"snspd_detector": 8.0, "fast_ion_selection": 5.0, "mirror_upgrade": 4.0},
                          kind="dict"),
        "stated_combined_factor": _pos(120.0, nullable=True),
    },
}

TOP_LEVEL = {"seed", "output_dir", "description"} | set(SCHEMA)

# Sections each subcommand reads, and whether it draws random numbers.
SUBCOMMANDS: dict[str, tuple[tuple[str, ...], bool]] = {
    "budget": (("budget",), False),
    "scatter-map": (("cavity", "particle"), False),
    "lifetime": (("dynamics", "analysis"), True),
    "switch": (("dynamics",), True),
    "windowed": (("cavity", "ensemble", "dynamics", "analysis"), True),
    "lock": (("lock",), True),
    "noise-vs-ramp": (("lock",), True),
}


def golden_path(name: str) -> Path:
    """Path of a packaged golden scenario (``lifetime``, ``switch``, ...)."""
    fname = name.replace("-", "_") + ".json"
    p = Path(str(resources.files("purcellctl") / "scenarios" / fname))
    if not p.is_file():
        raise FileNotFoundError(f"no golden scenario named {name!r}")
    return p


def resolve_path(ref: str | Path) -> Path:
    s = str(ref)
    if s.startswith("golden:"):
        return golden_path(s.split(":", 1)[1])
    return Path(s)


def load_raw(path) -> dict:
    try:
        path = resolve_path(path)
    except FileNotFoundError as exc:
        raise ConfigError([str(exc)]) from exc
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError([f"cannot read config {path}: {exc.strerror or exc}"]) from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})"]) from exc
    if not isinstance(raw, dict):
        raise ConfigError([f"{path}: top level must be a JSON object"])
    return raw


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(raw: dict, overrides) -> dict:
    """Apply ``key=value`` strings (dotted keys, JSON values) to a copy of ``raw``."""
    out = copy.deepcopy(raw)
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError([f"override {item!r}: expected key=value"])
        key, value = item.split("=", 1)
        parts = [p for p in key.strip().split(".") if p]
        if not parts:
            raise ConfigError([f"override {item!r}: empty key"])
        node = out
        for p in parts[:-1]:
            nxt = node.get(p)
            if nxt is None:
                nxt = node[p] = {}
            if not isinstance(nxt, dict):
                raise ConfigError([f"override {item!r}: {p} is not a section"])
            node = nxt
        node[parts[-1]] = _parse_value(value)
    return out


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _check_range(name: str, v, f: Field) -> list[str]:
    out = []
    if f.lo is not None:
        if (f.lo_open and v <= f.lo) or (not f.lo_open and v < f.lo):
            rel = ">" if f.lo_open else ">="
            out.append(f"{name}: value {v} out of range (must be {rel} {f.lo})")
    if f.hi is not None and v > f.hi:
        out.append(f"{name}: value {v} out of range (must be <= {f.hi})")
    return out


def _schedule_segments(name: str, value) -> tuple[list, list[str]]:
    if not isinstance(value, list) or not value:
        return [], [f"{name}: must be a non-empty list of segments"]
    segs, errs = [], []
    for i, s in enumerate(value):
        where = f"{name}[{i}]"
        if not isinstance(s, dict) or s.get("type") not in ("hold", "ramp"):
            errs.append(f"{where}: segment needs type 'hold' or 'ramp'")
            continue
        try:
            if s["type"] == "hold":
                segs.append(Hold(float(s["delta_linewidths"]), float(s["duration_us"])))
            else:
                segs.append(Ramp(float(s["from_linewidths"]), float(s["to_linewidths"]),
                                 float(s["duration_us"])))
        except (KeyError, TypeError, ValueError) as exc:
            errs.append(f"{where}: missing or invalid field ({exc})")
    if not errs:
        errs += [f"{name}: {msg}" for msg in schedule_violations(segs)]
    return segs, errs


def _check_field(name: str, v, f: Field) -> list[str]:
    if v is None:
        return [] if f.nullable else [f"{name}: value must not be null"]
    if f.derive and v == "derive":
        return []
    if f.kind == "float":
        if not _is_number(v):
            return [f"{name}: expected a number, got {v!r}"]
        return _check_range(name, v, f)
    if f.kind == "int":
        if not (isinstance(v, int) and not isinstance(v, bool)):
            return [f"{name}: expected an integer, got {v!r}"]
        if f.choices and v not in f.choices:
            return [f"{name}: value {v} not one of {list(f.choices)}"]
        return _check_range(name, v, f)
    if f.kind == "bool":
        return [] if isinstance(v, bool) else [f"{name}: expected true/false, got {v!r}"]
    if f.kind == "str":
        if not isinstance(v, str):
            return [f"{name}: expected a string, got {v!r}"]
        if f.choices and v not in f.choices:
            return [f"{name}: value {v!r} not one of {list(f.choices)}"]
        return []
    if f.kind == "list":
        if not isinstance(v, list) or not v or not all(_is_number(x) for x in v):
            return [f"{name}: expected a non-empty list of numbers"]
        out = []
        for i, x in enumerate(v):
            out += _check_range(f"{name}[{i}]", x, f)
        return out
    if f.kind == "dict":
        if not isinstance(v, dict) or not all(_is_number(x) and x > 0 for x in v.values()):
            return [f"{name}: expected an object of positive numbers"]
        return []
    if f.kind == "schedule":
        return _schedule_segments(name, v)[1]
    raise AssertionError(f.kind)


def _cross_checks(raw: dict) -> list[str]:
    out = []
    cav = raw.get("cavity")
    if isinstance(cav, dict):
        L = cav.get("length_um", SCHEMA["cavity"]["length_um"].default)
        R = cav.get("roc_um", SCHEMA["cavity"]["roc_um"].default)
        if _is_number(L) and _is_number(R) and not 0 < L < R:
            out.append(f"cavity.length_um: unstable cavity, need 0 < length_um ({L}) < roc_um ({R})")
    lk = raw.get("lock")
    if isinstance(lk, dict):
        f = lk.get("mode_frequencies_khz", SCHEMA["lock"]["mode_frequencies_khz"].default)
        a = lk.get("mode_amplitudes_pm", SCHEMA["lock"]["mode_amplitudes_pm"].default)
        if isinstance(f, list) and isinstance(a, list) and len(f) != len(a):
            out.append("lock.mode_amplitudes_pm: length must match lock.mode_frequencies_khz")
    bd = raw.get("budget")
    if isinstance(bd, dict):
        p = bd.get("calibration_power_nw", SCHEMA["budget"]["calibration_power_nw"].default)
        n = bd.get("calibration_ions", SCHEMA["budget"]["calibration_ions"].default)
        if isinstance(p, list) and isinstance(n, list):
            if len(p) != len(n):
                out.append("budget.calibration_ions: length must match budget.calibration_power_nw")
            elif any(b <= a for a, b in zip(p, p[1:]) if _is_number(a) and _is_number(b)):
                out.append("budget.calibration_power_nw: must be strictly increasing")
    an = raw.get("analysis")
    if isinstance(an, dict):
        lo = an.get("window_first_us", SCHEMA["analysis"]["window_first_us"].default)
        hi = an.get("window_last_us", SCHEMA["analysis"]["window_last_us"].default)
        if _is_number(lo) and _is_number(hi) and hi <= lo:
            out.append("analysis.window_last_us: must exceed analysis.window_first_us")
    return out


def validate(raw: dict, subcommand: str | None = None, seed_given: bool = False) -> list[str]:
    """Every problem found in ``raw``; empty when the scenario can run."""
    diags = []
    for key in raw:
        if key not in TOP_LEVEL:
            diags.append(f"{key}: unknown top-level key")
    for section, fields in SCHEMA.items():
        sec = raw.get(section)
        if sec is None:
            continue
        if not isinstance(sec, dict):
            diags.append(f"{section}: section must be a JSON object")
            continue
        for key in sec:
            if key not in fields:
                diags.append(f"{section}.{key}: unknown field")
        for key, f in fields.items():
            if key in sec:
                diags += _check_field(f"{section}.{key}", sec[key], f)
    diags += _cross_checks(raw)
    seed = raw.get("seed")
    if seed is not None and not (isinstance(seed, int) and not isinstance(seed, bool) and seed >= 0):
        diags.append(f"seed: expected a non-negative integer, got {seed!r}")
    if subcommand is not None:
        if subcommand not in SUBCOMMANDS:
            diags.append(f"unknown subcommand {subcommand!r}")
        else:
            needed, stochastic = SUBCOMMANDS[subcommand]
            for s in needed:
                if s not in raw:
                    diags.append(f"{s}: missing section required by '{subcommand}'")
            if stochastic and seed is None and not seed_given:
                diags.append(f"seed: master seed is mandatory for '{subcommand}'")
    return diags


def validate_file(path, subcommand: str | None = None, overrides=()) -> list[str]:
    """Load, apply overrides, validate. Raises :class:`ConfigError` only if unreadable."""
    raw = apply_overrides(load_raw(path), overrides)
    return validate(raw, subcommand)


def resolved(raw: dict) -> dict:
    """Config with defaults filled in for every present section."""
    out = {k: copy.deepcopy(v) for k, v in raw.items() if k not in SCHEMA}
    for section, fields in SCHEMA.items():
        if section in raw:
            sec = {k: copy.deepcopy(f.default) for k, f in fields.items()}
            sec.update(copy.deepcopy(raw[section]))
            out[section] = sec
    return out


def config_hash(cfg: dict) -> str:
    text = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def schedule_from_config(value):
    """DetuningSchedule from a validated ``dynamics.schedule`` list."""
    from .dynamics import DetuningSchedule

    segs, errs = _schedule_segments("dynamics.schedule", value)
    if errs:
        raise ConfigError(errs)
    return DetuningSchedule(segs)


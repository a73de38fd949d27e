"""Cavity-length lock: stability estimators and a side-of-fringe feedback model.

Displacements are in pm, lock-trace times in ms, mode frequencies in kHz.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import signal
from scipy.integrate import quad
from scipy.optimize import brentq

from .cavity import detuning_factor, fringe_width_length
from .iofmt import write_csv


@dataclass
class FringeTrace:
    times: np.ndarray  # ms
    transmission: np.ndarray
    # Peak-to-peak of the full fringe in the same units as ``transmission``.
    # None means "use the trace's own peak-to-peak".
    fringe_pp: float | None = None

    def peak_to_peak(self) -> float:
        return float(np.ptp(self.transmission)) if self.fringe_pp is None else float(self.fringe_pp)

    def rescaled(self, gain: float, offset: float = 0.0) -> "FringeTrace":
        pp = None if self.fringe_pp is None else abs(gain) * self.fringe_pp
        return FringeTrace(self.times, gain * np.asarray(self.transmission) + offset, pp)


@dataclass(frozen=True)
class MechanicalMode:
    frequency: float  # kHz
    quality: float
    amplitude: float  # pm, cavity-length amplitude of the undriven motion

    def __post_init__(self):
        if self.frequency <= 0 or self.quality <= 0 or self.amplitude < 0:
            raise ValueError("need frequency > 0, quality > 0, amplitude >= 0")


@dataclass(frozen=True)
class MechanicalNoiseModel:
    modes: tuple[MechanicalMode, ...] = (
        MechanicalMode(7.0, 50.0, 14.0),
        MechanicalMode(8.5, 50.0, 18.0),
        MechanicalMode(10.0, 50.0, 12.0),
    )
    slow_drift: float = 300.0  # pm peak-to-peak per cryostat cycle
    cycle_period: float = 1000.0  # ms
    lateral_coupling: float = 0.3
    sensor_noise: float = 0.0  # pm rms, white
    # fractional spread of each mode frequency between realizations
    frequency_spread: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple(self.modes))
        if not 0 <= self.lateral_coupling <= 1:
            raise ValueError("lateral_coupling must lie in [0, 1]")
        if self.slow_drift < 0 or self.cycle_period <= 0 or self.sensor_noise < 0:
            raise ValueError("invalid drift / noise parameters")
        if not 0 <= self.frequency_spread < 1:
            raise ValueError("frequency_spread must lie in [0, 1)")

    def baseline(self, t_ms: np.ndarray, rng: np.random.Generator, drift: bool = True) -> np.ndarray:
        """Undriven length noise (pm): sinusoidal modes with random phases plus drift."""
        x = np.zeros_like(t_ms, dtype=float)
        for m in self.modes:
            phase = rng.uniform(0, 2 * np.pi)
            x += m.amplitude * np.cos(2 * np.pi * m.frequency * t_ms + phase)
        drift_phase = rng.uniform(0, 2 * np.pi)
        if drift and self.slow_drift > 0:
            x += 0.5 * self.slow_drift * np.sin(2 * np.pi * t_ms / self.cycle_period + drift_phase)
        if self.sensor_noise > 0:
            x += rng.normal(0.0, self.sensor_noise, t_ms.shape)
        return x


@dataclass(frozen=True)
class Controller:
    proportional_gain: float = 0.5
    integral_gain: float = 3.0  # 1/ms
    feedback_on: bool = True
    setpoint_side: int = 1  # +1 / -1: which flank of the fringe
    feedback_sign: int | None = None  # defaults to setpoint_side (the correct sign)
    actuator_bandwidth: float = 1.0  # kHz, first-order piezo driver roll-off

    def __post_init__(self):
        if self.proportional_gain < 0 or self.integral_gain < 0:
            raise ValueError("gains must be >= 0")
        if self.actuator_bandwidth <= 0:
            raise ValueError("actuator_bandwidth must be > 0")
        if self.setpoint_side not in (1, -1):
            raise ValueError("setpoint_side must be +1 or -1")

    @property
    def sign(self) -> int:
        return self.setpoint_side if self.feedback_sign is None else self.feedback_sign


@dataclass
class LockResult:
    trace: FringeTrace
    displacement: np.ndarray  # pm, residual length error
    diverged: bool
    linewidth: float  # pm

    @property
    def rms(self) -> float:
        return float(np.std(self.displacement))

    def write_csv(self, path) -> None:
        rows = zip(self.trace.times.tolist(), np.asarray(self.trace.transmission).tolist(),
                   self.displacement.tolist())
        write_csv(path, ["time_ms", "transmission", "displacement_pm"], rows)


@dataclass(frozen=True)
class StabilityReport:
    rms_displacement: float  # pm
    peak_to_peak_units: float
    effective_linewidth_factor: float

    def as_dict(self) -> dict:
        return {"rms_displacement_pm": self.rms_displacement,
                "peak_to_peak_units": self.peak_to_peak_units,
                "effective_linewidth_factor": self.effective_linewidth_factor}


def stability_estimate(trace: FringeTrace, lock_wavelength: float = 790.0,
                       lock_finesse: float = 700.0) -> float:
    """Length stability (pm): fringe width / V_pp * V_std."""
    vpp = trace.peak_to_peak()
    if vpp <= 0:
        raise ValueError("constant trace: peak-to-peak is zero")
    width = fringe_width_length(lock_wavelength, lock_finesse)
    return width / vpp * float(np.std(trace.transmission))


def window_average_transmission(n: float) -> float:
    """Closed form mean of the unit Lorentzian over a window of n linewidths."""
    if n < 0:
        raise ValueError("n must be >= 0")
    return 1.0 if n == 0 else math.atan(n) / n


def window_average_numeric(n: float) -> float:
    """Same as :func:`window_average_transmission`, by quadrature."""
    if n == 0:
        return 1.0
    val, _ = quad(lambda x: detuning_factor(x, 1.0), -n / 2, n / 2, epsabs=1e-13, epsrel=1e-13)
    return val / n


def p2p_from_average_transmission(avg: float) -> float:
    """Peak-to-peak excursion (linewidths) whose window average equals ``avg``."""
    if not 0 < avg <= 1:
        raise ValueError("average transmission must lie in (0, 1]")
    if avg == 1:
        return 0.0
    g = lambda n: window_average_transmission(n) - avg
    hi = 1.0
    while g(hi) > 0:
        hi *= 2.0
    return brentq(g, 0.0, hi, xtol=1e-12, rtol=1e-12)


def smeared_fwhm(n: float) -> float:
    """FWHM (linewidths) of the Lorentzian averaged over a uniform n-linewidth window."""
    if n == 0:
        return 1.0
    prof = lambda x: (math.atan(2 * x + n) - math.atan(2 * x - n)) / (2 * n)
    half = 0.5 * prof(0.0)
    hi = 1.0
    while prof(hi) > half:
        hi *= 2
    return 2.0 * brentq(lambda x: prof(x) - half, 0.0, hi, xtol=1e-12)


def stability_report(trace: FringeTrace, avg_transmission: float, linewidth_ratio: float = 12.0,
                     lock_wavelength: float = 790.0, lock_finesse: float = 700.0) -> StabilityReport:
    """Summarize a lock: rms (pm), peak-to-peak excursion, and the effective
    Delta_790 / Delta_eff once the emission linewidth is smeared by that excursion."""
    n = p2p_from_average_transmission(avg_transmission)
    return StabilityReport(
        rms_displacement=stability_estimate(trace, lock_wavelength, lock_finesse),
        peak_to_peak_units=n,
        effective_linewidth_factor=linewidth_ratio / smeared_fwhm(n),
    )


def simulate_lock(noise: MechanicalNoiseModel, controller: Controller, duration: float,
                  seed: int, dt: float = 1.0, lock_wavelength: float = 790.0,
                  lock_finesse: float = 700.0, divergence_limit: float = 0.75) -> LockResult:
    """Side-of-fringe PI lock on the lock-laser transmission.

    ``duration`` in ms, ``dt`` in us. The plant is the summed length noise plus
    the actuator correction; the error signal is the transmission minus the
    half-height set point. The lock counts as diverged once the residual
    leaves the fringe flank (``divergence_limit`` fringe widths); the actuator
    then freezes. The actuator follows the PI command through a first-order
    low-pass at ``controller.actuator_bandwidth``.
    """
    width = fringe_width_length(lock_wavelength, lock_finesse)
    n = int(round(duration * 1e3 / dt)) + 1
    t_ms = np.arange(n) * dt * 1e-3
    rng = np.random.default_rng(seed)
    x_noise = noise.baseline(t_ms, rng)
    x0 = controller.setpoint_side * width / 2
    sgn = controller.sign
    kp, ki = controller.proportional_gain, controller.integral_gain
    dt_ms = dt * 1e-3
    hw2 = (0.5 * width) ** 2
    alpha = 1.0 - math.exp(-2 * math.pi * controller.actuator_bandwidth * dt_ms)

    disp = np.empty(n)
    trans = np.empty(n)
    u = 0.0
    acc = 0.0
    diverged = False
    for k in range(n):
        x = x_noise[k] + u
        disp[k] = x
        d = x + x0
        tr = hw2 / (d * d + hw2)
        trans[k] = tr
        if controller.feedback_on and not diverged:
            if abs(x) > divergence_limit * width:
                diverged = True
                continue
            e = tr - 0.5
            acc += ki * e * dt_ms
            u += alpha * (sgn * width * (kp * e + acc) - u)
    return LockResult(FringeTrace(t_ms, trans, fringe_pp=1.0), disp, diverged, width)


def ramp_drive_response(mode: MechanicalMode, ramp: float, amplitude: float,
                        times_us: np.ndarray, frequency: float | None = None) -> np.ndarray:
    """Lateral response (pm) of one mode to a sin^2 base motion of ``amplitude`` over ``ramp`` us.

    Base excitation: x'' + (w/Q) x' + w^2 x = -D''(t), with
    D(t) = amplitude * sin^2(pi t / 2S) during the ramp and constant after.
    """
    f = mode.frequency if frequency is None else frequency
    w = 2 * np.pi * f * 1e-3  # rad/us
    accel = np.where(times_us <= ramp,
                     0.5 * amplitude * (np.pi / ramp) ** 2 * np.cos(np.pi * times_us / ramp), 0.0)
    dt = float(times_us[1] - times_us[0]) if times_us.size > 1 else 1.0
    num, den, _ = signal.cont2discrete(([-1.0], [1.0, w / mode.quality, w * w]), dt, method="foh")
    return signal.lfilter(np.ravel(num), den, accel)


def residual_noise_vs_ramp(noise: MechanicalNoiseModel, ramp_times: Sequence[float], seed: int,
                           n_seeds: int = 100, displacement: float | None = None,
                           window: float = 1.0, dt: float = 1.0,
                           lock_wavelength: float = 790.0, lock_finesse: float = 700.0) -> list[dict]:
    """Residual length noise in the first ``window`` ms after a ramp of duration S (us).

    The ramp kicks every mode and the kick couples into length through
    ``lateral_coupling``. Each seed draws the mode frequencies (within
    ``frequency_spread``) and the undriven baseline; the same draws are reused
    for every S, and each baseline is paired with its negative so the
    driven/baseline cross term cancels. Lock feedback is ignored: its
    bandwidth sits far below the modes.
    """
    if any(s <= 0 for s in ramp_times):
        raise ValueError("ramp times must be > 0")
    D = fringe_width_length(lock_wavelength, lock_finesse) if displacement is None else displacement
    t_win = np.arange(0.0, window * 1e3 + dt / 2, dt)
    draws = []
    for ss in np.random.SeedSequence(seed).spawn(n_seeds):
        rng = np.random.default_rng(ss)
        freqs = [m.frequency * (1 + noise.frequency_spread * rng.uniform(-1, 1)) for m in noise.modes]
        base = noise.baseline(t_win * 1e-3, rng, drift=False)
        draws.append((freqs, base))
    out = []
    for S in ramp_times:
        t = np.arange(0.0, S + window * 1e3 + dt / 2, dt)
        post = t >= S - 1e-9
        rms, driven_rms = [], []
        for freqs, base in draws:
            driven = np.zeros_like(t)
            for m, f in zip(noise.modes, freqs):
                driven += noise.lateral_coupling * ramp_drive_response(m, S, D, t, f)
            d = driven[post][: base.size]
            b = base[: d.size]
            var = 0.5 * (np.var(d + b) + np.var(d - b))
            rms.append(math.sqrt(var))
            driven_rms.append(float(np.std(d)))
        out.append({
            "ramp_us": float(S),
            "drive_frequency_khz": 1.0 / (2.0 * S * 1e-3),
            "residual_rms_pm": float(np.mean(rms)),
            "residual_rms_sem_pm": float(np.std(rms, ddof=1) / math.sqrt(len(rms))) if len(rms) > 1 else 0.0,
            "driven_rms_pm": float(np.mean(driven_rms)),
        })
    return out


def baseline_rms(noise: MechanicalNoiseModel) -> float:
    """RMS of the undriven mode motion (no drift)."""
    return math.sqrt(sum(m.amplitude**2 for m in noise.modes) / 2 + noise.sensor_noise**2)

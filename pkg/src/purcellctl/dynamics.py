"""Time-dependent emission under a switched cavity detuning.

Times are in microseconds, natural lifetimes in milliseconds, detunings in
units of the emission-cavity linewidth, and count rates in photons per second.
The model is a pure rate equation: the excited population decays at
``(1 + C(t)) / tau_n`` with ``C(t) = L(delta(t)) * C`` and emits into the
cavity mode at ``C(t) / tau_n``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, Sequence, Union

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .cavity import detuning_factor
from .ensemble import PurcellDistribution
from .iofmt import write_csv

_TIME_EPS = 1e-9


class ScheduleError(ValueError):
    pass


class ResolutionError(ValueError):
    pass


class SwitchingError(ValueError):
    pass


@dataclass(frozen=True)
class Hold:
    delta: float
    duration: float  # us

    @property
    def start_delta(self) -> float:
        return self.delta

    @property
    def end_delta(self) -> float:
        return self.delta

    def at(self, tau):
        return np.full_like(tau, self.delta, dtype=float)


@dataclass(frozen=True)
class Ramp:
    """sin^2 piezo ramp: ``delta = from + (to - from) sin^2(pi t / (2 S))``."""

    delta_from: float
    delta_to: float
    duration: float  # us, the ramp time S_790

    @property
    def start_delta(self) -> float:
        return self.delta_from

    @property
    def end_delta(self) -> float:
        return self.delta_to

    def at(self, tau):
        s = np.sin(np.pi * tau / (2.0 * self.duration)) ** 2
        return self.delta_from + (self.delta_to - self.delta_from) * s


Segment = Union[Hold, Ramp]


def schedule_violations(segments: Sequence[Segment], tol: float = 1e-9) -> list[str]:
    """Every broken invariant of a segment list, as readable messages."""
    problems = []
    if not segments:
        problems.append("schedule has no segments")
    for i, seg in enumerate(segments):
        if not seg.duration > 0:
            problems.append(f"segment {i}: duration must be > 0 (got {seg.duration})")
    for i in range(1, len(segments)):
        a, b = segments[i - 1], segments[i]
        if abs(a.end_delta - b.start_delta) > tol:
            problems.append(
                f"segments {i - 1}->{i}: discontinuous detuning "
                f"({a.end_delta} != {b.start_delta})"
            )
    return problems


@dataclass(frozen=True)
class DetuningSchedule:
    segments: tuple[Segment, ...]

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        problems = schedule_violations(self.segments)
        if problems:
            raise ScheduleError("; ".join(problems))

    @property
    def boundaries(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum([s.duration for s in self.segments])])

    @property
    def span(self) -> float:
        return float(self.boundaries[-1])

    @property
    def shortest_ramp(self) -> float:
        ramps = [s.duration for s in self.segments if isinstance(s, Ramp)]
        return min(ramps) if ramps else np.inf

    def ramp_windows(self) -> list[tuple[float, float, Literal["falling", "rising"]]]:
        """(start, end, edge) of each ramp; moving away from resonance is a falling edge."""
        out = []
        b = self.boundaries
        for i, seg in enumerate(self.segments):
            if isinstance(seg, Ramp):
                edge = "falling" if abs(seg.delta_to) > abs(seg.delta_from) else "rising"
                out.append((float(b[i]), float(b[i + 1]), edge))
        return out


def delta_at(schedule: DetuningSchedule, t):
    """Detuning at time(s) ``t`` (us from the schedule start)."""
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    span = schedule.span
    if np.any(t_arr < -_TIME_EPS) or np.any(t_arr > span + _TIME_EPS):
        raise ScheduleError(f"time outside schedule span [0, {span}] us")
    b = schedule.boundaries
    idx = np.clip(np.searchsorted(b, t_arr, side="right") - 1, 0, len(schedule.segments) - 1)
    out = np.empty_like(t_arr)
    for i, seg in enumerate(schedule.segments):
        m = idx == i
        if np.any(m):
            out[m] = seg.at(np.clip(t_arr[m] - b[i], 0.0, seg.duration))
    return out if np.ndim(t) else float(out[0])


def hold_ramp(delta_to: float, ramp: float, hold_before: float = 0.0, hold_after: float = 0.0,
              delta_from: float = 0.0) -> DetuningSchedule:
    """Convenience: optional hold, one sin^2 ramp, optional hold."""
    segs: list[Segment] = []
    if hold_before > 0:
        segs.append(Hold(delta_from, hold_before))
    segs.append(Ramp(delta_from, delta_to, ramp))
    if hold_after > 0:
        segs.append(Hold(delta_to, hold_after))
    return DetuningSchedule(tuple(segs))


@dataclass
class PopulationTrace:
    times: np.ndarray  # us
    population: np.ndarray  # excited ions
    initial: float
    # sum_i C_i N_i(t): what the cavity-mode count rate actually needs
    coupled: np.ndarray = field(repr=False)
    tau_n: float = field(default=np.nan)


@dataclass
class RateTrace:
    times: np.ndarray  # us
    rate: np.ndarray  # photons / s

    def integral(self) -> float:
        """Expected number of cavity photons over the trace."""
        return float(np.trapezoid(self.rate, self.times) * 1e-6)


def time_grid(schedule: DetuningSchedule, step: float) -> np.ndarray:
    if step <= 0:
        raise ResolutionError("step must be > 0")
    if step > schedule.shortest_ramp:
        raise ResolutionError(
            f"resolution: step {step} us exceeds the shortest ramp "
            f"({schedule.shortest_ramp} us)"
        )
    # Every segment boundary lands on a grid point.
    pieces = []
    b = schedule.boundaries
    for i in range(len(schedule.segments)):
        n = max(1, int(np.ceil((b[i + 1] - b[i]) / step - 1e-9)))
        pieces.append(np.linspace(b[i], b[i + 1], n + 1)[:-1])
    pieces.append([b[-1]])
    return np.concatenate(pieces)


def lorentz_profile(schedule: DetuningSchedule, times: np.ndarray) -> np.ndarray:
    return detuning_factor(delta_at(schedule, times), 1.0)


def _coupling_integral(schedule, times):
    lor = lorentz_profile(schedule, times)
    return lor, cumulative_trapezoid(lor, times, initial=0.0)


def integrate_population(
    schedule: DetuningSchedule,
    c: float | PurcellDistribution,
    tau_n: float,
    n0: float | None = None,
    step: float = 1.0,
    chunk: int = 4096,
) -> PopulationTrace:
    """Excited-state population under a time-dependent Purcell factor.

    ``N(t) = N0 exp(-t/tau_n - int_0^t C(t') dt' / tau_n)`` with the
    Lorentzian integral taken by trapezoidal quadrature on ``step``. For a
    :class:`PurcellDistribution` every excited ion decays independently with
    its own C_i; ``n0`` (if given) rescales the excited total.
    """
    if tau_n <= 0:
        raise ValueError("tau_n must be > 0")
    times = time_grid(schedule, step)
    _, integral = _coupling_integral(schedule, times)
    tau_us = tau_n * 1e3
    free = np.exp(-times / tau_us)

    if isinstance(c, PurcellDistribution):
        ci = c.per_ion_c[c.excited]
        if ci.size == 0:
            raise ValueError("no excited ions in the distribution")
        weight = 1.0 if n0 is None else n0 / ci.size
        pop = np.zeros_like(times)
        coupled = np.zeros_like(times)
        for start in range(0, ci.size, chunk):
            cc = ci[start:start + chunk, None]
            ni = np.exp(-cc * integral[None, :] / tau_us)
            pop += ni.sum(axis=0)
            coupled += (cc * ni).sum(axis=0)
        pop *= weight * free
        coupled *= weight * free
        initial = weight * ci.size
    else:
        if c < 0:
            raise ValueError("Purcell factor must be >= 0")
        initial = 1.0 if n0 is None else float(n0)
        pop = initial * free * np.exp(-c * integral / tau_us)
        coupled = c * pop
    return PopulationTrace(times=times, population=pop, initial=initial, coupled=coupled, tau_n=tau_n)


def countrate(
    trace: PopulationTrace,
    schedule: DetuningSchedule,
    c: float | PurcellDistribution,
    tau_n: float,
) -> RateTrace:
    """Cavity-mode emission rate ``r(t) = C(t) N(t) / tau_n`` in photons/s."""
    if abs(trace.times[-1] - schedule.span) > 1e-6 or trace.times[0] != 0.0:
        raise ScheduleError("grid mismatch: trace does not cover the schedule span")
    if not np.isnan(trace.tau_n) and not np.isclose(trace.tau_n, tau_n):
        raise ValueError("grid mismatch: trace was integrated with a different tau_n")
    lor = lorentz_profile(schedule, trace.times)
    if isinstance(c, PurcellDistribution):
        weighted = trace.coupled
    else:
        weighted = c * trace.population
    rate = lor * weighted / (tau_n * 1e-3)
    return RateTrace(times=trace.times, rate=np.clip(rate, 0.0, None))


def simulate_trace(schedule, c, tau_n, n0=None, step=1.0) -> tuple[PopulationTrace, RateTrace]:
    pop = integrate_population(schedule, c, tau_n, n0=n0, step=step)
    return pop, countrate(pop, schedule, c, tau_n)


def switching_time(
    rate: RateTrace,
    window: tuple[float, float],
    edge: Literal["falling", "rising"] = "falling",
    factor: float = 10.0,
) -> float:
    """Edge duration in us.

    Falling: from ramp start until the rate drops to ``r(start) / factor``.
    Rising: from the crossing of ``max / factor`` until ramp end, where max is
    the largest rate reached within the ramp.
    """
    t0, t1 = window
    t, r = rate.times, rate.rate
    if factor <= 1:
        raise ValueError("factor must be > 1")
    if edge == "falling":
        r0 = float(np.interp(t0, t, r))
        thresh = r0 / factor
        m = (t >= t0 - _TIME_EPS)
        idx = np.nonzero(m & (r <= thresh))[0]
        if r0 <= 0 or idx.size == 0:
            raise SwitchingError("rate never drops below the threshold")
        i = idx[0]
        if i == 0 or t[i - 1] < t0 - _TIME_EPS:
            return float(t[i] - t0)
        tc = t[i - 1] + (r[i - 1] - thresh) / (r[i - 1] - r[i]) * (t[i] - t[i - 1])
        return float(tc - t0)
    if edge == "rising":
        m = (t >= t0 - _TIME_EPS) & (t <= t1 + _TIME_EPS)
        rmax = float(r[m].max())
        thresh = rmax / factor
        idx = np.nonzero(m & (r >= thresh))[0]
        if rmax <= 0 or idx.size == 0 or r[m][0] >= thresh:
            raise SwitchingError("rate never rises through the threshold in the window")
        i = idx[0]
        tc = t[i - 1] + (thresh - r[i - 1]) / (r[i] - r[i - 1]) * (t[i] - t[i - 1])
        return float(t1 - tc)
    raise ValueError(f"unknown edge {edge!r}")


@dataclass
class PhotonRecord:
    timestamps: np.ndarray  # us, ascending
    is_signal: np.ndarray = field(repr=False)
    seed: int | None = None
    window: tuple[float, float] = (0.0, 0.0)
    repetitions: int = 1

    def __len__(self) -> int:
        return len(self.timestamps)

    @property
    def source_tags(self) -> list[str]:
        return ["signal" if s else "dark" for s in self.is_signal]

    def count_in(self, t0: float, t1: float) -> int:
        return int(np.searchsorted(self.timestamps, t1, side="left")
                   - np.searchsorted(self.timestamps, t0, side="left"))

    def write_csv(self, path) -> None:
        write_csv(path, ["timestamp_us"], ((float(x),) for x in self.timestamps))


def _thinned_signal(rng, t, r, t0, t1, block=64):
    """Inhomogeneous Poisson events on [t0, t1] for a rate linearly interpolated on (t, r).

    Thinning against a piecewise-constant envelope (per-block maxima).
    """
    i0 = max(int(np.searchsorted(t, t0, side="right")) - 1, 0)
    i1 = min(int(np.searchsorted(t, t1, side="left")), len(t) - 1)
    tt = t[i0:i1 + 1].copy()
    rr = r[i0:i1 + 1].copy()
    if tt.size < 2:
        return np.empty(0)
    rr[0] = np.interp(t0, t, r) if tt[0] < t0 else rr[0]
    rr[-1] = np.interp(t1, t, r) if tt[-1] > t1 else rr[-1]
    tt[0], tt[-1] = max(tt[0], t0), min(tt[-1], t1)
    events = []
    for s in range(0, tt.size - 1, block):
        e = min(s + block, tt.size - 1)
        lo, hi = tt[s], tt[e]
        env = float(rr[s:e + 1].max())
        if env <= 0 or hi <= lo:
            continue
        n = rng.poisson(env * (hi - lo))
        if n == 0:
            continue
        cand = rng.uniform(lo, hi, n)
        keep = rng.random(n) * env < np.interp(cand, tt, rr)
        events.append(cand[keep])
    return np.concatenate(events) if events else np.empty(0)


def simulate_photons(
    rate: RateTrace,
    p_det: float,
    dark_rate: float,
    seed: int,
    window: tuple[float, float] | None = None,
    repetitions: int = 1,
) -> PhotonRecord:
    """Detected photon timestamps for ``repetitions`` pooled shots.

    Signal events follow ``p_det * r(t)``; dark counts are homogeneous at
    ``dark_rate`` (Hz). Pooling uses the superposition property: N independent
    shots are one Poisson process with N times the intensity.
    """
    if not 0 <= p_det <= 1:
        raise ValueError("p_det must lie in [0, 1]")
    if dark_rate < 0:
        raise ValueError("dark_rate must be >= 0")
    if repetitions < 1:
        raise ValueError("repetitions must be >= 1")
    t0, t1 = window if window is not None else (float(rate.times[0]), float(rate.times[-1]))
    if t1 < t0:
        raise ValueError("window end precedes start")
    sig_ss, dark_ss = np.random.SeedSequence(seed).spawn(2)
    rng_sig = np.random.default_rng(sig_ss)
    rng_dark = np.random.default_rng(dark_ss)
    # rates in events per us
    intensity = rate.rate * 1e-6 * p_det * repetitions
    sig = _thinned_signal(rng_sig, rate.times, intensity, t0, t1) if p_det > 0 else np.empty(0)
    n_dark = rng_dark.poisson(dark_rate * 1e-6 * (t1 - t0) * repetitions)
    dark = rng_dark.uniform(t0, t1, n_dark)
    ts = np.concatenate([sig, dark])
    tags = np.concatenate([np.ones(sig.size, bool), np.zeros(dark.size, bool)])
    order = np.argsort(ts, kind="stable")
    return PhotonRecord(ts[order], tags[order], seed=seed, window=(t0, t1), repetitions=repetitions)


def expected_counts(rate: RateTrace, p_det: float, dark_rate: float, window, repetitions: int = 1) -> float:
    t0, t1 = window
    t = rate.times
    m = (t > t0) & (t < t1)
    tt = np.concatenate([[t0], t[m], [t1]])
    rr = np.interp(tt, t, rate.rate)
    return repetitions * (p_det * np.trapezoid(rr, tt) + dark_rate * (t1 - t0)) * 1e-6


def write_trace_csv(path, pop: PopulationTrace, rate: RateTrace) -> None:
    rows = zip(pop.times.tolist(), pop.population.tolist(), rate.rate.tolist())
    write_csv(path, ["time_us", "population", "rate_hz"], rows)


# ---------------------------------------------------------------------------
# Pulse sequences


@dataclass(frozen=True)
class Alternation:
    on_duration: float = 1.0  # ms
    off_duration: float = 2.5  # ms
    repetitions: int = 5


@dataclass(frozen=True)
class SequenceConfig:
    excite_duration: float = 300.0  # us
    guard_wait: float = 50.0  # us
    collect_duration: float = 5.0  # ms
    decouple_delay: float = 4.0  # ms
    alternation: Alternation = Alternation()
    ramp_duration: float = 300.0  # us, S_790
    off_detuning: float = 12.0  # linewidths, Delta_790 / Delta_1535
    step: float = 1.0  # us

    def __post_init__(self):
        for name in ("excite_duration", "guard_wait", "collect_duration", "decouple_delay",
                     "ramp_duration", "off_detuning"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.step <= 0:
            raise ValueError("step must be > 0")


@dataclass(frozen=True)
class PhysicsInputs:
    purcell: float | PurcellDistribution = 31.0
    tau_n: float = 18.4  # ms
    n0: float | None = 40.0  # excited ions at the end of excitation
    p_det: float = 0.0028
    dark_rate: float = 15.0  # Hz
    repetitions: int = 1
    seed: int = 0


@dataclass
class SequenceResult:
    scenario: str
    schedule: DetuningSchedule
    population: PopulationTrace
    rate: RateTrace
    photons: PhotonRecord
    window: tuple[float, float]

    @property
    def edges(self):
        return self.schedule.ramp_windows()


def build_schedule(config: SequenceConfig, scenario: str) -> tuple[DetuningSchedule, tuple[float, float]]:
    """Detuning schedule (t=0 at the end of excitation) and the detection window."""
    S, off = config.ramp_duration, config.off_detuning
    guard = config.guard_wait
    collect = config.collect_duration * 1e3
    if scenario == "coupled":
        segs = [Hold(0.0, guard + collect)]
        return DetuningSchedule(segs), (guard, guard + collect)
    if scenario == "decoupled":
        td = config.decouple_delay * 1e3
        segs = [Ramp(0.0, off, S)]
        if td > 0:
            segs.append(Hold(off, td))
        segs += [Ramp(off, 0.0, S), Hold(0.0, collect)]
        sched = DetuningSchedule(segs)
        return sched, (guard, sched.span)
    if scenario == "alternation":
        alt = config.alternation
        on, off_d = alt.on_duration * 1e3, alt.off_duration * 1e3
        segs = [Hold(0.0, guard + on)]
        for _ in range(alt.repetitions):
            segs += [Ramp(0.0, off, S), Hold(off, off_d), Ramp(off, 0.0, S), Hold(0.0, on)]
        sched = DetuningSchedule(segs)
        return sched, (guard, sched.span)
    raise ValueError(f"unknown scenario {scenario!r}")


def run_sequence(config: SequenceConfig, scenario: str, physics: PhysicsInputs) -> SequenceResult:
    schedule, window = build_schedule(config, scenario)
    pop, rate = simulate_trace(schedule, physics.purcell, physics.tau_n, n0=physics.n0, step=config.step)
    photons = simulate_photons(rate, physics.p_det, physics.dark_rate, physics.seed,
                               window=window, repetitions=physics.repetitions)
    return SequenceResult(scenario, schedule, pop, rate, photons, window)

"""Lifetime, linewidth and Purcell extraction from binned photon data."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import curve_fit

from .dynamics import PhotonRecord
from .iofmt import read_csv, write_csv

FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))


class FitError(ValueError):
    pass


class UnphysicalPurcellWarning(UserWarning):
    pass


@dataclass
class Histogram:
    bin_edges: np.ndarray  # us
    counts: np.ndarray
    background_rate: float | None = None  # Hz, per repetition
    repetitions: int = 1

    def __post_init__(self):
        self.bin_edges = np.asarray(self.bin_edges, dtype=float)
        self.counts = np.asarray(self.counts)
        if len(self.counts) != len(self.bin_edges) - 1:
            raise ValueError("need len(counts) == len(bin_edges) - 1")
        if np.any(self.counts < 0):
            raise ValueError("counts must be >= 0")

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[1:] + self.bin_edges[:-1])

    @property
    def widths(self) -> np.ndarray:
        return np.diff(self.bin_edges)

    def background_counts(self) -> np.ndarray | None:
        if self.background_rate is None:
            return None
        return self.background_rate * self.widths * 1e-6 * self.repetitions

    def write_csv(self, path) -> None:
        write_csv(path, ["bin_start_us", "counts"],
                  zip(self.bin_edges[:-1].tolist(), np.asarray(self.counts).tolist()))


def bin_record(record: PhotonRecord, bin_width: float, start: float | None = None,
               stop: float | None = None, background_rate: float | None = None) -> Histogram:
    start = record.window[0] if start is None else start
    stop = record.window[1] if stop is None else stop
    n = int(math.floor((stop - start) / bin_width + 1e-9))
    if n < 1:
        raise ValueError("window shorter than one bin")
    edges = start + bin_width * np.arange(n + 1)
    counts, _ = np.histogram(record.timestamps, bins=edges)
    return Histogram(edges, counts, background_rate=background_rate,
                     repetitions=record.repetitions)


def read_histogram_csv(path, background_rate: float | None = None) -> Histogram:
    _, rows = read_csv(path)
    starts = np.array([float(r[0]) for r in rows])
    counts = np.array([float(r[1]) for r in rows])
    if starts.size < 2:
        raise ValueError("histogram needs at least two bins")
    widths = np.diff(starts)
    edges = np.concatenate([starts, [starts[-1] + widths[-1]]])
    return Histogram(edges, counts, background_rate=background_rate)


def read_record_csv(path) -> PhotonRecord:
    _, rows = read_csv(path)
    ts = np.sort(np.array([float(r[0]) for r in rows]))
    window = (float(ts[0]), float(ts[-1])) if ts.size else (0.0, 0.0)
    return PhotonRecord(ts, np.ones(ts.size, bool), window=window)


@dataclass
class FitResult:
    parameters: dict[str, float]
    standard_errors: dict[str, float]
    residual_norm: float
    converged: bool
    window: tuple[float, float] | None = None
    message: str = ""
    extra: dict = field(default_factory=dict)

    def report(self, key: str) -> dict:
        return {
            "estimate": self.parameters.get(key, math.nan),
            "stderr": self.standard_errors.get(key, math.nan),
            "window": list(self.window) if self.window else None,
            "converged": self.converged,
        }


def _failed(names, message, window=None):
    nan = {k: math.nan for k in names}
    return FitResult(dict(nan), dict(nan), math.nan, False, window, message)


def fit_decay(x, y, fixed_offset=None, weighted: bool = False, t_ref: float | None = None) -> FitResult:
    """Least-squares fit of ``A exp(-(x - t_ref)/tau) + b``.

    ``fixed_offset`` (scalar or per-point array) pins ``b``; otherwise ``b`` is
    free. Initialized by log-linear regression.
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    names = ("amplitude", "tau", "offset")
    t_ref = float(x[0]) if t_ref is None else t_ref
    xs = x - t_ref

    base = 0.0 if fixed_offset is None else np.broadcast_to(np.asarray(fixed_offset, float), y.shape)
    if fixed_offset is None:
        b0 = min(float(np.min(y)), float(np.mean(y[-max(1, y.size // 10):])))
        b0 = max(b0, 0.0) * 0.5
    else:
        b0 = 0.0
    yy = y - base - b0
    pos = yy > 0
    if pos.sum() >= 2 and np.ptp(xs[pos]) > 0:
        slope, icpt = np.polyfit(xs[pos], np.log(yy[pos]), 1)
        tau0 = -1.0 / slope if slope < 0 else np.ptp(xs) * 10
        a0 = math.exp(icpt)
    else:
        tau0, a0 = np.ptp(xs) or 1.0, float(np.max(y))
    tau0 = float(np.clip(tau0, 1e-3 * (np.ptp(xs) or 1.0), 1e4 * (np.ptp(xs) or 1.0)))

    sigma = np.sqrt(np.maximum(y, 1.0)) if weighted else None
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            if fixed_offset is None:
                f = lambda t, a, tau, b: a * np.exp(-t / tau) + b
                p, cov = curve_fit(f, xs, y, p0=(a0, tau0, b0), sigma=sigma, maxfev=20000)
                resid = y - f(xs, *p)
                vals = dict(zip(names, p))
                errs = dict(zip(names, np.sqrt(np.diag(cov))))
            else:
                f = lambda t, a, tau: a * np.exp(-t / tau) + base
                p, cov = curve_fit(f, xs, y, p0=(a0, tau0), sigma=sigma, maxfev=20000)
                resid = y - f(xs, *p)
                vals = {"amplitude": p[0], "tau": p[1], "offset": float(np.mean(base))}
                e = np.sqrt(np.diag(cov))
                errs = {"amplitude": e[0], "tau": e[1], "offset": 0.0}
    except (RuntimeError, ValueError) as exc:
        return _failed(names, f"fit did not converge: {exc}")
    vals = {k: float(v) for k, v in vals.items()}
    errs = {k: float(v) for k, v in errs.items()}
    ok = all(math.isfinite(v) for v in vals.values()) and all(math.isfinite(v) for v in errs.values())
    ok = ok and vals["tau"] > 0
    return FitResult(vals, errs, float(np.linalg.norm(resid)), ok,
                     message="" if ok else "non-finite or unphysical parameters")


def fit_exponential(h: Histogram, window: tuple[float, float] | None = None,
                    weighted: bool = False) -> FitResult:
    """Exponential lifetime fit on bin centers inside ``window`` (us).

    ``tau`` is reported in us. The background is held fixed when
    ``h.background_rate`` is known, otherwise fitted as a free offset.
    """
    lo, hi = window if window is not None else (h.bin_edges[0], h.bin_edges[-1])
    c = h.centers
    m = (c >= lo) & (c <= hi)
    if np.count_nonzero(np.asarray(h.counts)[m] > 0) < 3:
        raise FitError("need at least 3 nonempty bins in the fit window")
    bg = h.background_counts()
    res = fit_decay(c[m], np.asarray(h.counts, float)[m],
                    fixed_offset=None if bg is None else bg[m], weighted=weighted, t_ref=lo)
    res.window = (float(lo), float(hi))
    return res


def fit_gaussian(x, y) -> FitResult:
    """Gaussian line fit; returns amplitude, center, sigma, offset and fwhm."""
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    names = ("amplitude", "center", "sigma", "offset", "fwhm")
    if x.size < 5:
        raise FitError("need at least 5 points")
    b0 = float(np.min(y))
    w = np.clip(y - b0, 0, None)
    if w.sum() <= 0:
        return _failed(names, "flat scan")
    mu0 = float(np.sum(w * x) / w.sum())
    s0 = float(math.sqrt(max(np.sum(w * (x - mu0) ** 2) / w.sum(), 1e-30)))
    a0 = float(np.max(y) - b0)
    x0 = mu0
    scale = s0
    f = lambda u, a, mu, s, b: a * np.exp(-0.5 * ((u - mu) / s) ** 2) + b
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            # centered/scaled coordinates keep the problem well conditioned
            p, cov = curve_fit(f, (x - x0) / scale, y, p0=(a0, 0.0, 1.0, b0), maxfev=20000)
    except (RuntimeError, ValueError) as exc:
        return _failed(names, f"fit did not converge: {exc}")
    e = np.sqrt(np.diag(cov))
    a, mu, s, b = p
    vals = {"amplitude": a, "center": x0 + mu * scale, "sigma": abs(s) * scale, "offset": b}
    errs = {"amplitude": e[0], "center": e[1] * scale, "sigma": e[2] * scale, "offset": e[3]}
    vals["fwhm"] = FWHM_PER_SIGMA * vals["sigma"]
    errs["fwhm"] = FWHM_PER_SIGMA * errs["sigma"]
    resid = y - f((x - x0) / scale, *p)
    vals = {k: float(v) for k, v in vals.items()}
    errs = {k: float(v) for k, v in errs.items()}
    ok = all(math.isfinite(v) for v in list(vals.values()) + list(errs.values()))
    return FitResult(vals, errs, float(np.linalg.norm(resid)), ok,
                     window=(float(x.min()), float(x.max())))


def default_window_ends(first: float = 35.0, last: float = 5000.0, n: int = 40) -> np.ndarray:
    """Geometric grid of window ends starting at the 35 us first window."""
    return np.unique(np.round(np.geomspace(first, last, n), 6))


def windowed_lifetime(h: Histogram, window_ends: Sequence[float] | None = None,
                      start: float | None = None, weighted: bool = False) -> list[dict]:
    """Fit ``[start, t]`` for every window end ``t``; failed windows are flagged."""
    start = float(h.bin_edges[0]) if start is None else start
    ends = default_window_ends() if window_ends is None else window_ends
    out = []
    for t in ends:
        if t > h.bin_edges[-1] + 1e-9 or t <= start:
            raise FitError(f"window end {t} outside histogram span")
        try:
            r = fit_exponential(h, (start, float(t)), weighted=weighted)
            out.append({"t": float(t), "tau": r.parameters["tau"],
                        "stderr": r.standard_errors["tau"], "converged": r.converged})
        except FitError as exc:
            out.append({"t": float(t), "tau": math.nan, "stderr": math.nan,
                        "converged": False, "error": str(exc)})
    return out


def purcell_from_lifetimes(tau_n: float, tau_c: float) -> float:
    """C = tau_n / tau_c - 1. A negative result is returned but warned about."""
    if tau_n <= 0 or tau_c <= 0:
        raise ValueError("lifetimes must be > 0")
    c = tau_n / tau_c - 1.0
    if c < 0:
        warnings.warn("tau_c > tau_n gives a negative Purcell factor", UnphysicalPurcellWarning)
    return c


def window_counts(records: Mapping[float, PhotonRecord], window_len: float = 5.0,
                  offset: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Counts in ``[t_d + offset, t_d + offset + window_len]`` (ms) per record, sorted by t_d."""
    tds = np.array(sorted(records))
    counts = np.array([records[td].count_in((td + offset) * 1e3, (td + offset + window_len) * 1e3)
                       for td in tds], float)
    return tds, counts


def natural_lifetime_protocol(records: Mapping[float, PhotonRecord], window_len: float = 5.0,
                              background_rate: float | None = None,
                              weighted: bool = False, offset: float = 0.0) -> FitResult:
    """Natural lifetime (ms) from windowed counts versus decoupling delay t_d (ms).

    ``offset`` (ms) shifts each counting window past the decoupling ramp, so
    only light emitted after recoupling is counted.
    """
    if len(records) < 4:
        raise FitError("need at least 4 distinct t_d values")
    tds, counts = window_counts(records, window_len, offset)
    fixed = None
    if background_rate is not None:
        reps = np.array([records[td].repetitions for td in tds])
        fixed = background_rate * window_len * 1e-3 * reps
    res = fit_decay(tds, counts, fixed_offset=fixed, weighted=weighted, t_ref=0.0)
    res.window = (float(tds[0]), float(tds[-1]))
    res.extra = {"t_d_ms": tds.tolist(), "counts": counts.tolist()}
    return res

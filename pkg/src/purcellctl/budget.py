"""Detection budget: photon detection probability, per-ion generation, S/N."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np


def _check_prob(name, v):
    if not 0 <= v <= 1:
        raise ValueError(f"{name} must lie in [0, 1], got {v}")


@dataclass(frozen=True)
class EfficiencyChain:
    eta_out: float = 0.25
    eta_mm: float = 0.60
    eta_col: float = 0.3
    eta_det: float = 0.1
    eta_g: float = 0.63

    def __post_init__(self):
        for k, v in asdict(self).items():
            _check_prob(k, v)


@dataclass(frozen=True)
class SourceModel:
    p_exc: float = 0.5
    chi_cav: float = 0.974
    beta: float = 0.969
    dark_rate: float = 10.0  # Hz
    tau_c: float = 0.53  # ms

    def __post_init__(self):
        for k in ("p_exc", "chi_cav", "beta"):
            _check_prob(k, getattr(self, k))
        if self.dark_rate < 0:
            raise ValueError("dark_rate must be >= 0")
        if self.tau_c <= 0:
            raise ValueError("tau_c must be > 0")


def wavepacket_fraction(window: float, tau_c: float) -> float:
    """Share of a single-exponential photon inside ``[0, window]``."""
    return 1.0 - math.exp(-window / tau_c)


def detection_probability(chain: EfficiencyChain) -> float:
    return chain.eta_out * chain.eta_mm * chain.eta_col * chain.eta_det * chain.eta_g


def generation_probability(src: SourceModel) -> float:
    return src.p_exc * src.chi_cav * src.beta


def snr(p_det: float, src: SourceModel, n_photons_in_cavity: float = 1.0) -> float:
    """n p_det / (dark_rate tau_c); ``math.inf`` without dark counts."""
    noise = src.dark_rate * src.tau_c * 1e-3
    if noise == 0:
        return math.inf
    return n_photons_in_cavity * p_det / noise


def photons_for_snr(p_det: float, src: SourceModel, target: float = 1.0) -> float:
    """Cavity photons needed to reach ``target`` S/N (not rounded)."""
    per_photon = snr(p_det, src)
    return 0.0 if math.isinf(per_photon) else target / per_photon


def ions_for_snr(p_det: float, src: SourceModel, target: float = 1.0) -> float:
    return photons_for_snr(p_det, src, target) / generation_probability(src)


@dataclass(frozen=True)
class Upgrade:
    name: str
    multiplier: float

    def __post_init__(self):
        if self.multiplier <= 0:
            raise ValueError("multipliers must be > 0")


DEFAULT_UPGRADES = (
    Upgrade("snspd_detector", 8.0),
    Upgrade("fast_ion_selection", 5.0),
    Upgrade("mirror_upgrade", 4.0),
)
STATED_COMBINED_FACTOR = 120.0


def upgrade_projection(chain: EfficiencyChain, src: SourceModel,
                       upgrades: Sequence[Upgrade] = DEFAULT_UPGRADES,
                       stated_combined: float | None = STATED_COMBINED_FACTOR) -> dict:
    """Apply sensitivity multipliers to the S/N and report the compound factor.

    When a quoted combined factor is supplied and disagrees with the product
    of the individual multipliers, both are reported and ``discrepancy`` is set.
    """
    base_pdet = detection_probability(chain)
    base_snr = snr(base_pdet, src)
    steps = []
    running = 1.0
    for u in upgrades:
        running *= u.multiplier
        steps.append({"name": u.name, "multiplier": u.multiplier,
                      "cumulative": running, "snr": base_snr * running})
    report = {
        "base_snr": base_snr,
        "combined_factor": running,
        "projected_snr": base_snr * running,
        "steps": steps,
    }
    if stated_combined is not None:
        report["stated_combined_factor"] = stated_combined
        report["discrepancy"] = not math.isclose(stated_combined, running, rel_tol=1e-9)
    return report


@dataclass(frozen=True)
class PowerCalibration:
    """Excitation power (nW) to addressed-ion count, linearly interpolated."""

    power_nw: tuple[float, ...] = (0.0, 0.33, 7.0)
    ions: tuple[float, ...] = (0.0, 10.0, 80.0)

    def __post_init__(self):
        if len(self.power_nw) != len(self.ions) or len(self.power_nw) < 2:
            raise ValueError("calibration needs matching power/ion columns with >= 2 rows")
        if np.any(np.diff(self.power_nw) <= 0):
            raise ValueError("calibration powers must be strictly increasing")

    def ions_at(self, power_nw: float) -> float:
        if not self.power_nw[0] <= power_nw <= self.power_nw[-1]:
            raise ValueError(
                f"power {power_nw} nW outside calibration span "
                f"[{self.power_nw[0]}, {self.power_nw[-1]}] nW"
            )
        return float(np.interp(power_nw, self.power_nw, self.ions))


def ions_and_photons(calibration: PowerCalibration, input_power: float, p_gen: float) -> dict:
    ions = calibration.ions_at(input_power)
    return {"input_power_nw": input_power, "ions": ions, "cavity_photons": ions * p_gen}


def budget_report(chain: EfficiencyChain, src: SourceModel,
                  calibration: PowerCalibration | None = None,
                  powers_nw: Sequence[float] = (),
                  upgrades: Sequence[Upgrade] = DEFAULT_UPGRADES) -> dict:
    p_det = detection_probability(chain)
    p_gen = generation_probability(src)
    report = {
        "chain": asdict(chain),
        "source": asdict(src),
        "p_det": p_det,
        "p_gen": p_gen,
        "snr_single_photon": snr(p_det, src),
        "photons_for_unit_snr": photons_for_snr(p_det, src),
        "photons_for_unit_snr_ceil": math.ceil(photons_for_snr(p_det, src)),
        "ions_for_unit_snr": ions_for_snr(p_det, src),
        "ions_for_unit_snr_ceil": math.ceil(ions_for_snr(p_det, src)),
        "upgrades": upgrade_projection(chain, src, upgrades),
    }
    if calibration is not None:
        report["calibration"] = [ions_and_photons(calibration, p, p_gen) for p in powers_nw]
    return report

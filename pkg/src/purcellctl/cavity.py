"""Static optical model of a plano-concave fiber Fabry-Perot microcavity.

Unit conventions used throughout the package:

* mirror transmissions and losses in ppm
* wavelengths in nm, cavity lengths and waists in um
* linewidths in cavity-length units (pm)
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

SPEED_OF_LIGHT = 299_792_458.0  # m/s
PPM = 1e-6


class CavityError(ValueError):
    """Raised for physically invalid cavity parameters."""


@dataclass(frozen=True)
class MirrorSet:
    t_fiber: float = 100.0
    t_flat: float = 200.0
    absorption_loss: float = 0.0
    out_port: Literal["fiber", "flat"] = "fiber"

    def __post_init__(self):
        for name in ("t_fiber", "t_flat", "absorption_loss"):
            if getattr(self, name) < 0:
                raise CavityError(f"{name} must be >= 0 ppm")
        if self.out_port not in ("fiber", "flat"):
            raise CavityError(f"unknown out_port {self.out_port!r}")
        if self.t_out <= 0:
            raise CavityError("out_port mirror must have nonzero transmission")

    @property
    def t_out(self) -> float:
        return self.t_fiber if self.out_port == "fiber" else self.t_flat

    def round_trip_loss(self, extra_loss: float = 0.0) -> float:
        """Total round-trip loss in ppm; the scatterer is traversed twice."""
        if extra_loss < 0:
            raise CavityError("extra_loss must be >= 0 ppm")
        return self.t_fiber + self.t_flat + self.absorption_loss + 2.0 * extra_loss


@dataclass(frozen=True)
class CavityGeometry:
    length: float = 6.0
    roc: float = 50.0
    penetration_depth: float = 2.0
    structure_depth: float = 1.5

    def __post_init__(self):
        if not 0 < self.length < self.roc:
            raise CavityError(
                f"unstable cavity: need 0 < length ({self.length} um) < roc ({self.roc} um)"
            )


@dataclass(frozen=True)
class TransitionProperties:
    branching_ratio: float = 0.21
    natural_lifetime: float = 18.4  # ms

    def __post_init__(self):
        if not 0 < self.branching_ratio <= 1:
            raise CavityError("branching_ratio must lie in (0, 1]")
        if self.natural_lifetime <= 0:
            raise CavityError("natural_lifetime must be > 0 ms")


@dataclass(frozen=True)
class CavityMode:
    wavelength: float  # nm
    length: float  # um
    finesse: float
    linewidth_length: float  # pm
    waist: float  # um
    mode_volume: float  # um^3
    quality: float
    purcell_c0: float

    def effective_purcell(self, transition: TransitionProperties, detuning: float = 1.0) -> float:
        """Effective Purcell factor ``L * zeta * C0``; ``detuning`` is the detuning factor."""
        return detuning * transition.branching_ratio * self.purcell_c0


def finesse(mirrors: MirrorSet, extra_loss: float = 0.0) -> float:
    total = mirrors.round_trip_loss(extra_loss)
    if total <= 0:
        raise CavityError("infinite finesse: total round-trip loss is zero")
    return 2.0 * math.pi / (total * PPM)


def fringe_width_length(wavelength: float, finesse: float) -> float:
    """FWHM of the resonance in cavity-length units: lambda / 2F, nm in, pm out."""
    if finesse <= 0:
        raise CavityError("finesse must be > 0")
    return wavelength / (2.0 * finesse) * 1e3


def linewidth_frequency(length: float, finesse: float) -> float:
    """FWHM in Hz (free spectral range over finesse) for a cavity length in um."""
    if length <= 0 or finesse <= 0:
        raise CavityError("length and finesse must be > 0")
    fsr = SPEED_OF_LIGHT / (2.0 * length * 1e-6)
    return fsr / finesse


def beam_waist(geometry: CavityGeometry, wavelength: float) -> float:
    """Mode waist (um) of a plano-concave cavity, w0^2 = (lambda/pi) sqrt(L (R - L))."""
    L, R = geometry.length, geometry.roc
    if not 0 < L < R:
        raise CavityError("unstable cavity")
    lam_um = wavelength * 1e-3
    return math.sqrt(lam_um / math.pi * math.sqrt(L * (R - L)))


def quality_factor(length: float, finesse: float, wavelength: float) -> float:
    return 2.0 * finesse * length / (wavelength * 1e-3)


def mode_volume(waist: float, length: float) -> float:
    return math.pi / 4.0 * waist**2 * length


def purcell_from_q_v(wavelength: float, quality: float, volume: float) -> float:
    """Bare Purcell factor 3 lambda^3 Q / (4 pi^2 V_m); wavelength nm, volume um^3."""
    lam_um = wavelength * 1e-3
    return 3.0 * lam_um**3 / (4.0 * math.pi**2) * quality / volume


def cavity_mode(
    geometry: CavityGeometry,
    wavelength: float,
    *,
    mirrors: MirrorSet | None = None,
    extra_loss: float = 0.0,
    finesse_value: float | None = None,
) -> CavityMode:
    """Build the derived mode quantities.

    Either pass ``mirrors`` (finesse is computed from the loss budget) or
    ``finesse_value`` directly.
    """
    if finesse_value is None:
        if mirrors is None:
            raise CavityError("need mirrors or finesse_value")
        F = finesse(mirrors, extra_loss)
    else:
        if finesse_value <= 0:
            raise CavityError("finesse must be > 0")
        F = float(finesse_value)
    w0 = beam_waist(geometry, wavelength)
    q = quality_factor(geometry.length, F, wavelength)
    vm = mode_volume(w0, geometry.length)
    return CavityMode(
        wavelength=wavelength,
        length=geometry.length,
        finesse=F,
        linewidth_length=fringe_width_length(wavelength, F),
        waist=w0,
        mode_volume=vm,
        quality=q,
        purcell_c0=purcell_from_q_v(wavelength, q, vm),
    )


def purcell_c0(mode: CavityMode) -> float:
    return purcell_from_q_v(mode.wavelength, mode.quality, mode.mode_volume)


def detuning_factor(delta, linewidth):
    """Lorentzian detuning factor (linewidth/2)^2 / (delta^2 + (linewidth/2)^2).

    Works elementwise on numpy arrays; ``delta`` and ``linewidth`` share units.
    """
    if linewidth <= 0:
        raise CavityError("linewidth must be > 0")
    hw2 = (0.5 * linewidth) ** 2
    return hw2 / (delta * delta + hw2)


def collection_beta(c_effective: float, eta: float = 1.0) -> float:
    if c_effective < 0 or not 0 <= eta <= 1:
        raise CavityError("need C >= 0 and 0 <= eta <= 1")
    return eta * c_effective / (c_effective + 1.0)


def enhanced_branching(zeta: float, c0: float) -> float:
    """Cavity-enhanced branching ratio zeta (C0 + 1) / (zeta C0 + 1)."""
    if not 0 < zeta <= 1 or c0 < 0:
        raise CavityError("need 0 < zeta <= 1 and C0 >= 0")
    return zeta * (c0 + 1.0) / (zeta * c0 + 1.0)


def cavity_transmission(mirrors: MirrorSet, extra_loss: float = 0.0) -> float:
    """On-resonance transmission 4 T_f T_m / (total loss)^2."""
    total = mirrors.round_trip_loss(extra_loss)
    if total <= 0:
        raise CavityError("total loss must be > 0")
    return 4.0 * mirrors.t_fiber * mirrors.t_flat / total**2


def out_coupling(mirrors: MirrorSet, extra_loss: float = 0.0) -> float:
    """Fraction of intracavity photons that leave through ``mirrors.out_port``."""
    total = mirrors.round_trip_loss(extra_loss)
    if total <= 0:
        raise CavityError("total loss must be > 0")
    return mirrors.t_out / total

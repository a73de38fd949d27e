"""Mesoscopic ion ensemble inside a nanoparticle and its per-ion Purcell factors.

Each ion's Purcell factor is the peak (centered, aligned) value multiplied by
three corrections: standing-wave position, dipole orientation, and cavity
length jitter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np

from .iofmt import write_csv

#: Ions drawn per independent RNG stream. Fixed so results never depend on
#: how the sampling work is partitioned.
CHUNK_SIZE = 65_536

DEFAULT_ORIENTATIONS: tuple[tuple[float, float, float], ...] = (
    (1.0, 0.0, 0.0),
    (-1.0, 0.0, 0.0),
    (0.0, 1.0, 0.0),
    (0.0, -1.0, 0.0),
    (0.0, 0.0, 1.0),
    (0.0, 0.0, -1.0),
)
# The cavity axis is z. Both transverse polarizations are resonant, so a
# dipole couples through whichever of them it projects on.
DEFAULT_FIELD_AXES: tuple[tuple[float, float, float], ...] = ((1.0, 0.0, 0.0), (0.0, 1.0, 0.0))


@dataclass(frozen=True)
class Ion:
    axial_offset: float  # nm, signed, along the cavity axis
    dipole_axis: tuple[float, float, float]
    excited: bool = False


@dataclass(frozen=True)
class EnsembleConfig:
    ion_count: int
    particle_radius: float  # nm
    orientation_set: Sequence[Sequence[float]] = DEFAULT_ORIENTATIONS
    seed: int = 0
    epsilon_disp: float = 1.0
    field_axes: Sequence[Sequence[float]] = DEFAULT_FIELD_AXES
    p_exc: float = 0.5
    disp_model: Literal["uniform", "quasi_static"] = "uniform"
    # "volume": ions fill the sphere uniformly; "line": axial offset uniform over the diameter
    position_weighting: Literal["volume", "line"] = "volume"

    def __post_init__(self):
        if self.ion_count < 1:
            raise ValueError("ion_count must be >= 1")
        if self.particle_radius < 0:
            raise ValueError("particle_radius must be >= 0")
        if len(self.orientation_set) == 0:
            raise ValueError("orientation_set must be non-empty")
        if not 0 < self.epsilon_disp <= 1:
            raise ValueError("epsilon_disp must lie in (0, 1]")
        if not 0 <= self.p_exc <= 1:
            raise ValueError("p_exc must lie in [0, 1]")
        if self.disp_model not in ("uniform", "quasi_static"):
            raise ValueError(f"unknown disp_model {self.disp_model!r}")
        if self.position_weighting not in ("volume", "line"):
            raise ValueError(f"unknown position_weighting {self.position_weighting!r}")


@dataclass
class PurcellDistribution:
    per_ion_c: np.ndarray
    peak_c: float
    axial_offset: np.ndarray = field(repr=False)
    orientation_index: np.ndarray = field(repr=False)
    excited: np.ndarray = field(repr=False)

    def __len__(self) -> int:
        return len(self.per_ion_c)

    @property
    def mean_c(self) -> float:
        return float(np.mean(self.per_ion_c))

    def ions(self, orientation_set: Sequence[Sequence[float]] = DEFAULT_ORIENTATIONS) -> list[Ion]:
        return [
            Ion(float(d), tuple(orientation_set[int(k)]), bool(e))
            for d, k, e in zip(self.axial_offset, self.orientation_index, self.excited)
        ]

    def write_csv(self, path) -> None:
        rows = zip(
            range(len(self)),
            self.axial_offset.tolist(),
            self.orientation_index.tolist(),
            self.per_ion_c.tolist(),
        )
        write_csv(path, ["ion_index", "axial_offset_nm", "orientation_index", "purcell_c"], rows)


def epsilon_standing_wave(d, wavelength: float):
    """cos^2(2 pi d / lambda) for an ion displaced by d (nm) from the antinode."""
    return np.cos(2.0 * np.pi * np.asarray(d, dtype=float) / wavelength) ** 2


def mean_standing_wave(
    radius: float, wavelength: float, weighting: Literal["volume", "line"] = "volume"
) -> float:
    """Closed-form average of :func:`epsilon_standing_wave` over a particle.

    ``volume`` averages over ions uniformly filling the sphere; ``line``
    averages the axial offset uniformly over the diameter.
    """
    if radius == 0:
        return 1.0
    x = 4.0 * math.pi * radius / wavelength
    if weighting == "volume":
        mean_cos = 3.0 * (math.sin(x) - x * math.cos(x)) / x**3
    elif weighting == "line":
        mean_cos = math.sin(x) / x
    else:
        raise ValueError(f"unknown weighting {weighting!r}")
    return 0.5 * (1.0 + mean_cos)


def _unit(v, name: str) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape != (3,) or not math.isclose(float(np.linalg.norm(v)), 1.0, abs_tol=1e-9):
        raise ValueError(f"{name} must be a unit 3-vector, got {v!r}")
    return v


def epsilon_dipole(dipole_axis, field_axis) -> float:
    """Squared projection (d . E)^2 of a dipole on a field polarization."""
    d = _unit(dipole_axis, "dipole_axis")
    e = _unit(field_axis, "field_axis")
    return float(np.dot(d, e) ** 2)


def dipole_coupling(dipole_axis, field_axes=DEFAULT_FIELD_AXES) -> float:
    """Orientation correction summed over the resonant polarizations."""
    return sum(epsilon_dipole(dipole_axis, e) for e in field_axes)


def mean_dipole_coupling(orientation_set=DEFAULT_ORIENTATIONS, field_axes=DEFAULT_FIELD_AXES) -> float:
    return float(np.mean([dipole_coupling(o, field_axes) for o in orientation_set]))


def expected_average_purcell(peak_c: float, eps_sw: float, eps_dip: float, eps_disp: float) -> float:
    if peak_c <= 0:
        raise ValueError("peak_c must be > 0")
    for name, v in (("eps_sw", eps_sw), ("eps_dip", eps_dip), ("eps_disp", eps_disp)):
        if not 0 < v <= 1:
            raise ValueError(f"{name} must lie in (0, 1]")
    return peak_c * eps_sw * eps_dip * eps_disp


def jitter_window(epsilon_disp: float) -> float:
    """Peak-to-peak detuning window (linewidths) whose Lorentzian average is ``epsilon_disp``."""
    from .lock import p2p_from_average_transmission

    return p2p_from_average_transmission(epsilon_disp)


def chunk_seeds(seed: int, n_items: int, chunk_size: int = CHUNK_SIZE) -> list[np.random.SeedSequence]:
    """Per-chunk seed sequences: chunk ``k`` always gets ``SeedSequence(seed).spawn(...)[k]``."""
    n_chunks = max(1, -(-n_items // chunk_size))
    return np.random.SeedSequence(seed).spawn(n_chunks)


def _sample_chunk(ss, n, config: EnsembleConfig, couplings: np.ndarray, jitter_n: float):
    rng = np.random.default_rng(ss)
    u = rng.random(n)
    mu = rng.uniform(-1.0, 1.0, n)
    if config.position_weighting == "line":
        z = config.particle_radius * mu
    else:
        z = config.particle_radius * np.cbrt(u) * mu
    k = rng.integers(0, len(couplings), n)
    excited = rng.random(n) < config.p_exc
    if config.disp_model == "quasi_static":
        x = rng.uniform(-0.5 * jitter_n, 0.5 * jitter_n, n)
        disp = 1.0 / (1.0 + 4.0 * x * x)
    else:
        disp = np.full(n, config.epsilon_disp)
    return z, k, excited, disp


def sample_ensemble(config: EnsembleConfig, peak_c: float, wavelength: float) -> PurcellDistribution:
    """Draw ion positions (uniform in the sphere) and orientations, and assign C_i.

    With ``disp_model="uniform"`` the jitter correction multiplies every ion
    by ``epsilon_disp``. With ``"quasi_static"`` each ion instead sees a
    static detuning drawn uniformly over the window whose mean Lorentzian
    factor equals ``epsilon_disp``; the ensemble mean is unchanged.
    """
    if peak_c < 0:
        raise ValueError("peak_c must be >= 0")
    couplings = np.array([dipole_coupling(o, config.field_axes) for o in config.orientation_set])
    jitter_n = jitter_window(config.epsilon_disp) if config.disp_model == "quasi_static" else 0.0

    parts = []
    remaining = config.ion_count
    for ss in chunk_seeds(config.seed, config.ion_count):
        n = min(CHUNK_SIZE, remaining)
        parts.append(_sample_chunk(ss, n, config, couplings, jitter_n))
        remaining -= n
    z, k, excited, disp = (np.concatenate(a) for a in zip(*parts))

    c = peak_c * epsilon_standing_wave(z, wavelength) * couplings[k] * disp
    return PurcellDistribution(
        per_ion_c=c,
        peak_c=float(peak_c),
        axial_offset=z,
        orientation_index=k.astype(np.int64),
        excited=excited,
    )

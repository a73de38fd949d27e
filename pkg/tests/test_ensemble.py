import math

import numpy as np
import pytest
from scipy.integrate import quad, dblquad

from purcellctl import ensemble as ens

LAM = 1535.0


def test_standing_wave_values():
    assert ens.epsilon_standing_wave(0.0, LAM) == 1.0
    assert ens.epsilon_standing_wave(90.5, LAM) == pytest.approx(0.87, abs=0.005)
    assert ens.epsilon_standing_wave(LAM / 4, LAM) == pytest.approx(0.0, abs=1e-15)


def _volume_average_quad(R):
    # slabs at axial offset z carry area pi (R^2 - z^2)
    num, _ = quad(lambda z: np.cos(2 * np.pi * z / LAM) ** 2 * (R * R - z * z), -R, R)
    den = 4.0 / 3.0 * R**3
    return num / den


def _line_average_quad(R):
    v, _ = quad(lambda z: np.cos(2 * np.pi * z / LAM) ** 2, -R, R)
    return v / (2 * R)


@pytest.mark.parametrize("R", [10.0, 90.5, 200.0, 500.0])
def test_mean_standing_wave_matches_quadrature(R):
    assert ens.mean_standing_wave(R, LAM, "volume") == pytest.approx(_volume_average_quad(R), rel=1e-10)
    assert ens.mean_standing_wave(R, LAM, "line") == pytest.approx(_line_average_quad(R), rel=1e-10)


def test_sphere_average_for_studied_particle():
    assert ens.mean_standing_wave(90.5, LAM, "line") == pytest.approx(0.95, abs=0.01)
    assert ens.mean_standing_wave(90.5, LAM, "volume") == pytest.approx(0.973, abs=0.001)
    assert ens.mean_standing_wave(0.0, LAM) == 1.0


def test_dipole_projection():
    assert ens.epsilon_dipole((1, 0, 0), (1, 0, 0)) == 1.0
    assert ens.epsilon_dipole((1, 0, 0), (0, 1, 0)) == 0.0
    s = 1 / math.sqrt(2)
    assert ens.epsilon_dipole((s, s, 0), (1, 0, 0)) == pytest.approx(0.5)
    with pytest.raises(ValueError, match="unit"):
        ens.epsilon_dipole((1, 1, 0), (1, 0, 0))


def test_dipole_average_two_thirds():
    assert ens.mean_dipole_coupling() == pytest.approx(2 / 3)


def test_expected_average_purcell():
    assert ens.expected_average_purcell(176, 0.95, 2 / 3, 0.22) == pytest.approx(24.5, abs=0.05)
    assert ens.expected_average_purcell(176, 1, 1, 1) == 176
    base = ens.expected_average_purcell(176, 0.9, 0.6, 0.3)
    assert ens.expected_average_purcell(176, 0.45, 0.6, 0.3) == pytest.approx(base / 2)
    with pytest.raises(ValueError):
        ens.expected_average_purcell(176, 0.0, 1, 1)


def test_sampled_mean_purcell():
    cfg = ens.EnsembleConfig(ion_count=100_000, particle_radius=90.5, seed=1, epsilon_disp=0.22)
    d = ens.sample_ensemble(cfg, 176.0, LAM)
    assert len(d) == 100_000
    assert d.mean_c == pytest.approx(25, abs=1)
    assert np.all(d.per_ion_c >= 0) and np.all(d.per_ion_c <= 176 * 0.22 + 1e-12)


def test_no_corrections_point_mass():
    cfg = ens.EnsembleConfig(ion_count=1000, particle_radius=0.0, orientation_set=[(1.0, 0.0, 0.0)])
    d = ens.sample_ensemble(cfg, 176.0, LAM)
    assert np.all(d.per_ion_c == 176.0)


def test_position_and_orientation_independent():
    cfg = ens.EnsembleConfig(ion_count=1_000_000, particle_radius=90.5, seed=3)
    d = ens.sample_ensemble(cfg, 1.0, LAM)
    product = ens.mean_standing_wave(90.5, LAM) * ens.mean_dipole_coupling()
    assert d.mean_c == pytest.approx(product, rel=0.01)


def test_standing_wave_sample_mean_converges():
    cfg = ens.EnsembleConfig(ion_count=1_000_000, particle_radius=200.0, seed=4)
    d = ens.sample_ensemble(cfg, 1.0, LAM)
    sw = ens.epsilon_standing_wave(d.axial_offset, LAM)
    assert sw.mean() == pytest.approx(_volume_average_quad(200.0), rel=0.01)
    assert np.all(np.abs(d.axial_offset) <= 200.0)


def test_line_weighting_sampling():
    cfg = ens.EnsembleConfig(ion_count=400_000, particle_radius=90.5, seed=4, position_weighting="line")
    d = ens.sample_ensemble(cfg, 1.0, LAM)
    sw = ens.epsilon_standing_wave(d.axial_offset, LAM).mean()
    assert sw == pytest.approx(ens.mean_standing_wave(90.5, LAM, "line"), rel=2e-3)


def test_seed_determinism_bitwise():
    cfg = ens.EnsembleConfig(ion_count=150_000, particle_radius=90.5, seed=99, epsilon_disp=0.22)
    a = ens.sample_ensemble(cfg, 176.0, LAM)
    b = ens.sample_ensemble(cfg, 176.0, LAM)
    assert a.per_ion_c.tobytes() == b.per_ion_c.tobytes()
    c = ens.sample_ensemble(ens.EnsembleConfig(150_000, 90.5, seed=100, epsilon_disp=0.22), 176.0, LAM)
    assert a.per_ion_c.tobytes() != c.per_ion_c.tobytes()


def test_chunking_prefix_stable():
    # the first chunk of a larger ensemble is the same stream as a one-chunk ensemble
    n = ens.CHUNK_SIZE
    small = ens.sample_ensemble(ens.EnsembleConfig(n, 90.5, seed=5), 10.0, LAM)
    big = ens.sample_ensemble(ens.EnsembleConfig(2 * n + 7, 90.5, seed=5), 10.0, LAM)
    assert np.array_equal(small.per_ion_c, big.per_ion_c[:n])


def test_quasi_static_keeps_mean():
    base = dict(ion_count=200_000, particle_radius=90.5, seed=8, epsilon_disp=0.22)
    u = ens.sample_ensemble(ens.EnsembleConfig(**base), 176.0, LAM)
    q = ens.sample_ensemble(ens.EnsembleConfig(**base, disp_model="quasi_static"), 176.0, LAM)
    assert q.mean_c == pytest.approx(u.mean_c, rel=0.02)
    assert ens.jitter_window(0.22) == pytest.approx(6.44, abs=0.01)


def test_excited_fraction():
    d = ens.sample_ensemble(ens.EnsembleConfig(100_000, 90.5, seed=2, p_exc=0.5), 1.0, LAM)
    k = d.excited.sum()
    assert abs(k - 50_000) < 3 * math.sqrt(100_000 * 0.25)


def test_invalid_config():
    with pytest.raises(ValueError):
        ens.EnsembleConfig(0, 90.5)
    with pytest.raises(ValueError):
        ens.EnsembleConfig(10, 90.5, orientation_set=[])
    with pytest.raises(ValueError):
        ens.EnsembleConfig(10, 90.5, epsilon_disp=0.0)


def test_ions_and_csv(tmp_path):
    d = ens.sample_ensemble(ens.EnsembleConfig(5, 90.5, seed=1), 176.0, LAM)
    ions = d.ions()
    assert len(ions) == 5 and all(abs(i.axial_offset) <= 90.5 for i in ions)
    assert all(math.isclose(np.linalg.norm(i.dipole_axis), 1.0) for i in ions)
    p = tmp_path / "e.csv"
    d.write_csv(p)
    lines = p.read_text().splitlines()
    assert lines[0] == "ion_index,axial_offset_nm,orientation_index,purcell_c"
    assert len(lines) == 6

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from purcellctl import cavity as cv


def test_finesse_loss_budget():
    m = cv.MirrorSet(100, 200)
    assert cv.finesse(m) == pytest.approx(2 * math.pi / 300e-6)
    assert cv.finesse(m) == pytest.approx(20944, rel=1e-4)
    assert cv.finesse(m, 43) == pytest.approx(16277, rel=1e-4)


def test_finesse_unity_and_infinite():
    # total fractional loss of 2 pi gives F = 1
    m = cv.MirrorSet(2 * math.pi * 1e6 - 1.0, 1.0)
    assert cv.finesse(m) == pytest.approx(1.0)
    lossless = object.__new__(cv.MirrorSet)
    for k, v in dict(t_fiber=0.0, t_flat=0.0, absorption_loss=0.0, out_port="fiber").items():
        object.__setattr__(lossless, k, v)
    with pytest.raises(cv.CavityError, match="infinite finesse"):
        cv.finesse(lossless)


def test_zero_loss_rejected_at_construction():
    with pytest.raises(cv.CavityError):
        cv.MirrorSet(0.0, 0.0)


def test_negative_loss_rejected():
    with pytest.raises(cv.CavityError):
        cv.MirrorSet(-1.0, 200.0)
    with pytest.raises(cv.CavityError):
        cv.finesse(cv.MirrorSet(100, 200), extra_loss=-1)


def test_fringe_width():
    assert cv.fringe_width_length(1535, 2e4) == pytest.approx(38.375)
    assert cv.fringe_width_length(790, 700) == pytest.approx(564.2857, rel=1e-6)
    assert cv.fringe_width_length(1535, 2e5) == pytest.approx(cv.fringe_width_length(1535, 2e4) / 10)


@given(st.floats(100, 3000), st.floats(1, 1e6))
def test_fringe_width_round_trip(lam, F):
    assert cv.fringe_width_length(lam, F) * 1e-3 * 2 * F == pytest.approx(lam, rel=1e-12)


def test_beam_waist():
    g = cv.CavityGeometry(6.0, 50.0)
    w = cv.beam_waist(g, 1535)
    assert w == pytest.approx(2.818, abs=1e-3)
    assert abs(w / 2.9 - 1) < 0.05
    # oracle: direct evaluation for a long cavity
    oracle = math.sqrt(1.535 / math.pi * math.sqrt(25.0 * 25.0))
    assert cv.beam_waist(cv.CavityGeometry(25.0, 50.0), 1535) == pytest.approx(oracle, rel=1e-12)


def test_waist_vanishes_at_stability_edge():
    ws = [cv.beam_waist(cv.CavityGeometry(50 - eps, 50), 1535) for eps in (1, 1e-4, 1e-8)]
    assert ws[0] > ws[1] > ws[2]
    assert ws[2] < 0.02


def test_unstable_cavity():
    with pytest.raises(cv.CavityError, match="unstable cavity"):
        cv.CavityGeometry(50.0, 50.0)


def _zeta_c0(L, F, lam=1535.0, zeta=0.21):
    m = cv.cavity_mode(cv.CavityGeometry(L, 50.0), lam, finesse_value=F)
    return zeta * m.purcell_c0


def test_purcell_budget():
    assert _zeta_c0(6.0, 1.6e4) == pytest.approx(176, rel=0.15)
    assert _zeta_c0(3.5, 2e4) == pytest.approx(320, rel=0.15)


def test_purcell_closed_form():
    # 3 lambda^3 Q / (4 pi^2 V) with Q = 2FL/lambda and V = pi w^2 L / 4 collapses to 6 lambda^2 F / (pi^3 w^2)
    m = cv.cavity_mode(cv.CavityGeometry(6.0, 50.0), 1535, finesse_value=1.6e4)
    lam = 1.535
    assert m.purcell_c0 == pytest.approx(6 * lam**2 * 1.6e4 / (math.pi**3 * m.waist**2), rel=1e-12)
    assert cv.purcell_c0(m) == pytest.approx(m.purcell_c0)


def test_purcell_inverse_in_volume():
    assert cv.purcell_from_q_v(1535, 1e5, 2.0) == pytest.approx(2 * cv.purcell_from_q_v(1535, 1e5, 4.0))


def test_mode_from_mirrors_matches_finesse():
    m = cv.cavity_mode(cv.CavityGeometry(), 1535, mirrors=cv.MirrorSet(100, 200), extra_loss=43)
    assert m.finesse == pytest.approx(cv.finesse(cv.MirrorSet(100, 200), 43))
    assert m.linewidth_length == pytest.approx(1535 / (2 * m.finesse) * 1e3)
    with pytest.raises(cv.CavityError):
        cv.cavity_mode(cv.CavityGeometry(), 1535)


def test_detuning_factor_values():
    assert cv.detuning_factor(0.0, 1.0) == 1.0
    assert cv.detuning_factor(0.5, 1.0) == pytest.approx(0.5)
    assert 1 / cv.detuning_factor(12.0, 1.0) == pytest.approx(577.0)


@given(st.floats(-100, 100), st.floats(0.01, 100))
def test_detuning_factor_even_and_bounded(d, w):
    v = cv.detuning_factor(d, w)
    assert v == cv.detuning_factor(-d, w)
    assert 0 < v <= 1


@given(st.floats(0, 50), st.floats(0.01, 50))
def test_detuning_factor_decreasing(d, step):
    assert cv.detuning_factor(d + step, 1.0) < cv.detuning_factor(d, 1.0)


def test_collection_beta():
    assert cv.collection_beta(31) == pytest.approx(0.96875)
    assert cv.collection_beta(0, 0.3) == 0
    assert cv.collection_beta(1) == pytest.approx(0.5)


@given(st.floats(0, 1e4), st.floats(0, 1e4), st.floats(0, 1))
def test_collection_beta_monotone_bounded(c1, c2, eta):
    lo, hi = sorted((c1, c2))
    assert cv.collection_beta(lo, eta) <= cv.collection_beta(hi, eta) <= eta


def test_enhanced_branching():
    # formula value 0.9752; the quoted 97.4 % is the same number after rounding of C0
    assert cv.enhanced_branching(0.21, 147) == pytest.approx(0.21 * 148 / (0.21 * 147 + 1))
    assert cv.enhanced_branching(0.21, 147) == pytest.approx(0.974, abs=1.5e-3)
    assert cv.enhanced_branching(0.21, 0) == pytest.approx(0.21)
    assert cv.enhanced_branching(1.0, 55) == pytest.approx(1.0)


@given(st.floats(0.01, 1), st.floats(0, 1e4))
def test_enhanced_branching_not_below_zeta(z, c0):
    assert cv.enhanced_branching(z, c0) >= z - 1e-15


def test_transmission():
    m = cv.MirrorSet(100, 200)
    assert cv.cavity_transmission(m) == pytest.approx(4 * 100 * 200 / 300**2)
    assert cv.cavity_transmission(m) == pytest.approx(0.889, abs=5e-4)
    assert cv.cavity_transmission(m, 43) == pytest.approx(4 * 100 * 200 / 386**2)
    assert cv.cavity_transmission(m, 43) == pytest.approx(0.537, abs=5e-4)
    assert cv.cavity_transmission(cv.MirrorSet(150, 150)) == pytest.approx(1.0)


@given(st.floats(1, 1e4), st.floats(1, 1e4), st.floats(0, 1e3))
def test_transmission_bounded(a, b, extra):
    assert cv.cavity_transmission(cv.MirrorSet(a, b), extra) <= 1 + 1e-12


def test_out_coupling():
    assert cv.out_coupling(cv.MirrorSet(100, 200), 43) == pytest.approx(100 / 386)
    assert cv.out_coupling(cv.MirrorSet(100, 200), 43) == pytest.approx(0.259, abs=5e-4)
    assert cv.out_coupling(cv.MirrorSet(100, 200, out_port="flat")) == pytest.approx(2 / 3)
    assert cv.out_coupling(cv.MirrorSet(100, 200), 1e12) < 1e-9


@given(st.floats(1, 1e4), st.floats(1, 1e4), st.floats(0, 1e3))
def test_out_coupling_budget_closes(tf, tm, b):
    f = cv.out_coupling(cv.MirrorSet(tf, tm, out_port="fiber"), b)
    g = cv.out_coupling(cv.MirrorSet(tf, tm, out_port="flat"), b)
    assert f + g + 2 * b / (tf + tm + 2 * b) == pytest.approx(1.0)


def test_linewidth_frequency():
    # FSR of a 6 um cavity over F
    assert cv.linewidth_frequency(6.0, 2e4) == pytest.approx(299_792_458 / 12e-6 / 2e4)


def test_effective_purcell():
    m = cv.cavity_mode(cv.CavityGeometry(), 1535, finesse_value=1.6e4)
    tr = cv.TransitionProperties()
    assert m.effective_purcell(tr) == pytest.approx(0.21 * m.purcell_c0)
    assert m.effective_purcell(tr, cv.detuning_factor(12, 1)) == pytest.approx(0.21 * m.purcell_c0 / 577)

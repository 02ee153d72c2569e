import math
import warnings

import numpy as np
import pytest

from jumpflight.params import TWO_PI, experiment_params, simulation_params
from jumpflight.theory import (CountingRegime, GdBloch, RegimeWarning,
                               TheoryError, ThreeLevelAmplitudes,
                               assignment_efficiency, bloch_coherent_approx,
                               bloch_from_amplitudes, bloch_from_w,
                               bloch_incoherent_steady,
                               click_detection_efficiency,
                               coherent_regime_from_params,
                               completion_probability,
                               discrimination_efficiency,
                               incoherent_regime_from_params,
                               integrate_counting_ket, snr_dispersive,
                               t_mid_coherent, t_mid_dark_off,
                               t_mid_incoherent, w_dg_coherent,
                               w_dg_incoherent)


def coherent_table_regime(gamma_d=1 / 116.0):
    return CountingRegime(flavor="Coherent", omega_bg=TWO_PI * 1.2,
                          gamma_b=TWO_PI * 9.0, omega_dg=TWO_PI * 0.02,
                          gamma_d=gamma_d)


def incoherent_table_regime():
    return CountingRegime(flavor="Incoherent", gamma_bg_click=1.01,
                          omega_dg=TWO_PI * 0.0216, gamma_d=1 / 105.0)


# --- mid-flight times -------------------------------------------------------

def test_t_mid_coherent_published_value():
    t_mid = t_mid_coherent(coherent_table_regime())
    assert abs(t_mid - 4.3) / 4.3 < 0.02


def test_t_mid_coherent_substitution():
    # omega_dg = omega_bg^2/gamma_b makes the log argument 2
    r = CountingRegime(flavor="Coherent", omega_bg=2.0, gamma_b=40.0,
                       omega_dg=0.1, gamma_d=0.0)
    assert t_mid_coherent(r) == pytest.approx(math.log(2.0) / r.growth_rate,
                                              rel=1e-12)


def test_t_mid_coherent_large_drive_limit():
    prev = None
    for omega_dg in (1.0, 10.0, 100.0):
        r = CountingRegime(flavor="Coherent", omega_bg=2.0, gamma_b=40.0,
                           omega_dg=omega_dg, gamma_d=0.0)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            t = t_mid_coherent(r)
        assert t > 0
        if prev is not None:
            assert t < prev
        prev = t
    assert prev < 0.05  # -> 0+ as the reference drive dominates


def test_t_mid_requires_reference_drive():
    r = CountingRegime(flavor="Coherent", omega_bg=2.0, gamma_b=40.0,
                       omega_dg=0.0, gamma_d=0.0)
    with pytest.raises(TheoryError):
        t_mid_coherent(r)


# --- W_DG closed forms ------------------------------------------------------

def test_w_dg_coherent_click_reset():
    assert w_dg_coherent(0.0, coherent_table_regime()) == 0.0


def test_w_dg_coherent_root_residual():
    r = coherent_table_regime()
    assert abs(w_dg_coherent(t_mid_coherent(r), r) - 1.0) < 1e-9


def test_w_dg_coherent_satisfies_its_ode():
    r = coherent_table_regime()
    h = 1e-6
    for t in np.linspace(0.1, 8.0, 17):
        deriv = (w_dg_coherent(t + h, r) - w_dg_coherent(t - h, r)) / (2 * h)
        rhs = r.growth_rate * w_dg_coherent(t, r) + 0.5 * r.omega_dg
        assert abs(deriv - rhs) / abs(rhs) < 1e-6


def test_w_dg_incoherent_limits_and_pole():
    r = incoherent_table_regime()
    assert w_dg_incoherent(0.0, r).value == 0.0
    u = 0.5 * r.gamma_bg_click / r.omega_dg
    v = u + math.sqrt(u * u - 1.0)
    w_inf = w_dg_incoherent(600.0, r)
    assert w_inf.pole_crossed
    assert w_inf.value == pytest.approx(-v, rel=1e-9)
    assert not w_dg_incoherent(1.0, r).pole_crossed


def test_w_dg_incoherent_satisfies_its_ode():
    r = incoherent_table_regime()
    h = 1e-6
    for t in np.linspace(0.2, 6.0, 13):
        wm = w_dg_incoherent(t - h, r).value
        wp = w_dg_incoherent(t + h, r).value
        w = w_dg_incoherent(t, r).value
        rhs = 0.5 * r.gamma_bg_click * w + 0.5 * r.omega_dg * (1 + w * w)
        assert abs((wp - wm) / (2 * h) - rhs) / abs(rhs) < 1e-6


def test_w_dg_incoherent_outside_regime():
    r = CountingRegime(flavor="Incoherent", gamma_bg_click=0.1,
                       omega_dg=0.2, gamma_d=0.0)
    with pytest.raises(TheoryError):
        w_dg_incoherent(1.0, r)


def test_t_mid_incoherent_root_and_oracle():
    r = incoherent_table_regime()
    t_mid = t_mid_incoherent(r)
    assert abs(w_dg_incoherent(t_mid, r).value - 1.0) < 1e-9
    # independent bisection oracle on the closed-form W
    lo, hi = 0.0, 20.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if w_dg_incoherent(mid, r).value < 1.0:
            lo = mid
        else:
            hi = mid
    assert t_mid == pytest.approx(0.5 * (lo + hi), abs=1e-9)


def test_t_mid_incoherent_coherent_limit():
    for factor in (50.0, 100.0, 500.0):
        omega = 0.1257
        r = CountingRegime(flavor="Incoherent", gamma_bg_click=factor * omega,
                           omega_dg=omega, gamma_d=0.0)
        t_mid = t_mid_incoherent(r)
        simple = 2.0 / r.gamma_bg_click * math.log(r.gamma_bg_click / omega)
        u = 0.5 * factor
        v = u + math.sqrt(u * u - 1)
        assert abs(t_mid - simple) / t_mid < 2.0 / v
        assert abs(t_mid - simple) / t_mid < 0.02


def test_t_mid_incoherent_asymptote():
    # V -> infinity: dt_mid -> (gamma/2)^-1 ln(gamma/omega)
    omega = 1.0
    gamma = 2.0e4 * omega  # V ~ 2e4
    r = CountingRegime(flavor="Incoherent", gamma_bg_click=gamma,
                       omega_dg=omega, gamma_d=0.0)
    asym = 2.0 / gamma * math.log(gamma / omega)
    assert t_mid_incoherent(r) == pytest.approx(asym, rel=2e-4)


# --- Bloch parametrizations -------------------------------------------------

def test_bloch_from_w_examples():
    b = bloch_from_w(0.0)
    assert (b.z, b.x, b.y) == (-1.0, 0.0, 0.0)
    b = bloch_from_w(1.0)
    assert (b.z, b.x, b.y) == (0.0, 1.0, 0.0)
    b = bloch_from_w(3.0)
    assert b.z == pytest.approx(0.8, abs=1e-12)
    assert b.x == pytest.approx(0.6, abs=1e-12)


def test_bloch_from_w_pure_state_circle():
    rng = np.random.default_rng(5)
    for w in np.concatenate([rng.uniform(-50, 50, 40), [0.0, np.inf]]):
        b = bloch_from_w(float(w))
        assert b.z**2 + b.x**2 == pytest.approx(1.0, abs=1e-12)
        assert b.y == 0.0


def test_bloch_coherent_approx():
    r = coherent_table_regime()
    mid = bloch_coherent_approx(t_mid_coherent(r), r)
    assert (mid.z, mid.x) == (0.0, 1.0)
    late = bloch_coherent_approx(200.0, r)
    assert late.z == pytest.approx(1.0, abs=1e-12)
    assert late.x == pytest.approx(0.0, abs=1e-12)


def test_bloch_coherent_approx_matches_exact_form_deep_regime():
    # strong monitoring: the tanh/sech forms agree with bloch_from_w(W(t))
    r = CountingRegime(flavor="Coherent", omega_bg=20.0, gamma_b=200.0,
                       omega_dg=2e-3, gamma_d=0.0)
    for t in np.linspace(0.0, 1.2 * t_mid_coherent(r), 15):
        exact = bloch_from_w(w_dg_coherent(float(t), r))
        approx = bloch_coherent_approx(float(t), r)
        assert abs(exact.z - approx.z) < 2e-3
        assert abs(exact.x - approx.x) < 2e-3


def test_bloch_incoherent_steady():
    r = incoherent_table_regime()
    b = bloch_incoherent_steady(r)
    w_inf = w_dg_incoherent(600.0, r).value
    b2 = bloch_from_w(w_inf)
    assert b.z == pytest.approx(b2.z, abs=1e-9)
    assert b.x == pytest.approx(b2.x, abs=1e-9)
    # published regime values
    r2 = CountingRegime(flavor="Incoherent", gamma_bg_click=1.01,
                        omega_dg=0.1257, gamma_d=0.0)
    b3 = bloch_incoherent_steady(r2)
    assert b3.z == pytest.approx(0.968, abs=2e-3)
    assert b3.x == pytest.approx(-0.249, abs=2e-3)
    # boundary: gamma = 2 omega puts the steady state on the equator
    rb = CountingRegime(flavor="Incoherent", gamma_bg_click=0.2,
                        omega_dg=0.1, gamma_d=0.0)
    bb = bloch_incoherent_steady(rb)
    assert (bb.z, bb.x) == (0.0, -1.0)
    # omega -> 0: perfect jump
    rp = CountingRegime(flavor="Incoherent", gamma_bg_click=1.0,
                        omega_dg=1e-9, gamma_d=0.0)
    assert bloch_incoherent_steady(rp).z == pytest.approx(1.0, abs=1e-12)


def test_bloch_ball_invariant():
    with pytest.raises(TheoryError):
        GdBloch(z=0.9, x=0.9, y=0.0)


# --- dark-drive-off ---------------------------------------------------------

def test_t_mid_dark_off():
    assert t_mid_dark_off(1.0, 1.0) == 0.0
    assert t_mid_dark_off(math.exp(-1.0), 1.0) == pytest.approx(1.0, rel=1e-12)
    assert t_mid_dark_off(2.0, 1.0) < 0  # already past the midpoint
    with pytest.raises(TheoryError):
        t_mid_dark_off(0.0, 1.0)
    with pytest.raises(TheoryError):
        t_mid_dark_off(0.5, 0.0)


def test_completion_probability():
    a = ThreeLevelAmplitudes(c_g=0.6, c_b=0.0, c_d=0.3, t=2.0)
    assert completion_probability(2.0, 2.0, a, 0.5) == pytest.approx(1.0)
    # monotone non-increasing, bounded below by the dark population
    n_gd = 0.36 + 0.09
    p_d = 0.09 / n_gd
    prev = 1.0
    for t in np.linspace(2.0, 30.0, 40):
        val = completion_probability(float(t), 2.0, a, 0.5)
        assert val <= prev + 1e-15
        assert val >= p_d - 1e-15
        prev = val
    assert completion_probability(1e9, 2.0, a, 0.5) == pytest.approx(p_d)


def test_completion_probability_equals_z_identity():
    # (1 + Z)/2 of the normalized GD state is the completion probability
    a = ThreeLevelAmplitudes(c_g=0.5, c_b=0.1, c_d=0.35, t=2.0)
    z = bloch_from_amplitudes(a).z
    assert completion_probability(1e9, 2.0, a, 1.0) == pytest.approx((1 + z) / 2)


def test_completion_probability_half_at_midpoint():
    a = ThreeLevelAmplitudes(c_g=1 / math.sqrt(2), c_b=0.0,
                             c_d=1 / math.sqrt(2), t=0.0)
    assert completion_probability(1e9, 0.0, a, 0.7) == pytest.approx(0.5)


# --- no-click amplitude integrator ------------------------------------------

def unit_amps():
    return ThreeLevelAmplitudes(c_g=1.0, c_b=0.0, c_d=0.0, t=0.0)


def test_integrate_counting_ket_free_decay():
    r = CountingRegime(flavor="Coherent", omega_bg=0.0, gamma_b=2.0,
                       omega_dg=0.0, gamma_d=0.5)
    a0 = ThreeLevelAmplitudes(c_g=0.5, c_b=0.5, c_d=0.5, t=0.0)
    a = integrate_counting_ket(a0, r, 2.0, dt=0.002)
    assert a.c_g == pytest.approx(0.5, rel=1e-10)
    assert abs(a.c_b) == pytest.approx(0.5 * math.exp(-2.0), rel=1e-7)
    assert abs(a.c_d) == pytest.approx(0.5 * math.exp(-0.5), rel=1e-7)


def test_integrate_counting_ket_invariant_subspace():
    r = CountingRegime(flavor="Coherent", omega_bg=1.0, gamma_b=20.0,
                       omega_dg=0.0, gamma_d=0.1)
    a = integrate_counting_ket(unit_amps(), r, 3.0, dt=0.002)
    assert a.c_d == 0.0


def test_integrate_counting_ket_norm_non_increasing_and_dt_guard():
    r = coherent_table_regime()
    a = integrate_counting_ket(unit_amps(), r, 1.0, dt=5e-4)
    assert a.norm_sq <= 1.0
    with pytest.raises(TheoryError, match="dt"):
        integrate_counting_ket(unit_amps(), r, 1.0, dt=0.05)


def test_counting_ket_matches_closed_form_deep_regime():
    """ODE vs closed form at 1% where the closed form's own regime holds.

    The linear W solution drops the (omega_dg/2) W^2 term, so agreement is
    regime-limited: with a 1e-4 drive separation the two stay within 1% out
    to 1.25 mid-flight times.
    """
    r = CountingRegime(flavor="Coherent", omega_bg=20.0, gamma_b=200.0,
                       omega_dg=2e-4, gamma_d=0.0)
    t_mid = t_mid_coherent(r)  # about 9 us at these rates
    a = unit_amps()
    for t in np.linspace(0.05 * t_mid, 1.25 * t_mid, 12):
        a = integrate_counting_ket(a, r, float(t), dt=1e-4)
        w_ode = (a.c_d / a.c_g).real
        w_cf = w_dg_coherent(float(t), r)
        assert abs(w_ode - w_cf) / w_cf < 0.01


def test_counting_ket_matches_incoherent_riccati_exactly():
    """The 2x2 no-click system IS the incoherent Riccati; 1e-6 agreement."""
    r = CountingRegime(flavor="Incoherent", gamma_bg_click=1.01,
                       omega_dg=TWO_PI * 0.0216, gamma_d=0.0)
    a = unit_amps()
    for t in (0.5, 1.5, 3.0, 4.5, 6.0):
        a = integrate_counting_ket(a, r, t, dt=2e-4)
        w_ode = (a.c_d / a.c_g).real
        w_cf = w_dg_incoherent(t, r).value
        assert abs(w_ode - w_cf) / abs(w_cf) < 1e-6


def test_regime_warning_flags_marginal_separation():
    with pytest.warns(RegimeWarning):
        CountingRegime(flavor="Coherent", omega_bg=TWO_PI * 1.2,
                       gamma_b=TWO_PI * 9.0, omega_dg=TWO_PI * 0.02,
                       gamma_d=1 / 116.0)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        CountingRegime(flavor="Coherent", omega_bg=2.0, gamma_b=400.0,
                       omega_dg=1e-5, gamma_d=1e-5)


# --- SNR and efficiency chain ------------------------------------------------

def test_snr_dispersive_published_value(exp_params):
    snr = snr_dispersive(exp_params)
    assert snr == pytest.approx(4.329, abs=2e-3)
    # eta -> 0 and unresolved-shift limits
    assert snr_dispersive(simulation_params(eta=1e-12)) < 1e-10
    tiny_shift = simulation_params(chi_b=-1e-6, delta_r=-1e-6)
    assert snr_dispersive(tiny_shift) < 1e-9


def test_discrimination_efficiency():
    assert discrimination_efficiency(0.0) == 0.5
    assert discrimination_efficiency(4.3) == pytest.approx(0.98, abs=0.005)
    # the erfc chain at the measured SNR (the printed companion value is
    # rounded differently in the source; the formula itself is what is pinned)
    assert discrimination_efficiency(3.8) == pytest.approx(0.97437, abs=1e-4)
    with pytest.raises(TheoryError):
        discrimination_efficiency(-1.0)


def test_click_detection_efficiency(exp_params):
    eta_asg = assignment_efficiency(0.26, 4.2)
    assert 1.0 - eta_asg == pytest.approx(0.06, abs=0.001)
    assert assignment_efficiency(0.0, 4.2) == 1.0
    # combined with the measured discrimination efficiency: 0.90
    eta = click_detection_efficiency(exp_params,
                                     eta_disc=discrimination_efficiency(3.8))
    assert eta == pytest.approx(0.90, abs=0.02)


def test_regime_builders(sim_params):
    rc = coherent_regime_from_params(sim_params)
    assert rc.click_rate == pytest.approx(sim_params.gamma_bg_click, rel=1e-12)
    ri = incoherent_regime_from_params(sim_params)
    assert ri.growth_rate == pytest.approx(0.5 * sim_params.gamma_bg_click)

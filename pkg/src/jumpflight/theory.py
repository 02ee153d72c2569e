"""Closed-form results for the photon-counting model of the jump flight.

Pure functions only.  These serve as independent oracles for the stochastic
simulation modules: the no-click evolution of the three-level counting model,
its Bloch-vector parametrization, mid-flight times, completion probabilities,
and the dispersive-readout SNR / detection-efficiency chain.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from .params import SystemParams


class RegimeWarning(UserWarning):
    """Non-fatal: parameters sit close to the edge of the shelving regime."""


class TheoryError(ValueError):
    pass


@dataclass(frozen=True)
class CountingRegime:
    """Rates of the counting model, for a coherent or incoherent bright drive.

    flavor "Coherent": the bright transition is driven at Rabi rate omega_bg
    and de-excites at gamma_b; the effective click rate is omega_bg**2/gamma_b.
    flavor "Incoherent": clicks arrive at the bare rate gamma_bg_click.
    """

    flavor: str                      # "Coherent" | "Incoherent"
    omega_dg: float                  # rad/us
    gamma_d: float = 0.0             # 1/us
    omega_bg: float = 0.0            # rad/us (coherent flavor)
    gamma_b: float = 0.0             # 1/us   (coherent flavor)
    gamma_bg_click: float = 0.0      # 1/us   (incoherent flavor)

    def __post_init__(self):
        if self.flavor not in ("Coherent", "Incoherent"):
            raise TheoryError(f"unknown flavor {self.flavor!r}")
        self._check_separations()

    @property
    def click_rate(self) -> float:
        """Mean click rate: omega_bg**2/gamma_b, or the incoherent drive rate."""
        if self.flavor == "Coherent":
            return self.omega_bg**2 / self.gamma_b
        return self.gamma_bg_click

    @property
    def growth_rate(self) -> float:
        """Exponential growth rate of W_DG between clicks (half the click rate)."""
        return 0.5 * self.click_rate

    def _check_separations(self):
        # Shelving regime: (omega_dg, gamma_d) << click_rate, and for the
        # coherent flavor click_rate << gamma_b.  Flag (non-fatally) when any
        # separation is under a factor of 10.
        try:
            rate = self.click_rate
        except ZeroDivisionError:
            return
        if rate <= 0:
            return
        gaps = {"omega_dg/click_rate": self.omega_dg / rate,
                "gamma_d/click_rate": self.gamma_d / rate}
        if self.flavor == "Coherent" and self.gamma_b > 0:
            gaps["click_rate/gamma_b"] = rate / self.gamma_b
        for name, g in gaps.items():
            if g > 0.1:
                warnings.warn(
                    f"counting regime marginal: {name} = {g:.3g} (> 1/10)",
                    RegimeWarning, stacklevel=3)


def coherent_regime_from_params(p: SystemParams) -> CountingRegime:
    """Coherent-flavor regime with omega_bg = omega_b0 (drive seen outside B)
    and gamma_b the effective measurement rate omega_b0**2 / gamma_bg_click."""
    gamma_b_eff = p.omega_b0**2 / p.gamma_bg_click
    return CountingRegime(flavor="Coherent", omega_bg=p.omega_b0,
                          gamma_b=gamma_b_eff, omega_dg=p.omega_dg,
                          gamma_d=p.gamma_d)


def incoherent_regime_from_params(p: SystemParams) -> CountingRegime:
    return CountingRegime(flavor="Incoherent", gamma_bg_click=p.gamma_bg_click,
                          omega_dg=p.omega_dg, gamma_d=p.gamma_d)


@dataclass(frozen=True)
class GdBloch:
    """Bloch vector of the conditional state in the GD manifold."""

    z: float
    x: float
    y: float = 0.0
    n_gd: float | None = None  # total GD population, when meaningful

    def __post_init__(self):
        r2 = self.z**2 + self.x**2 + self.y**2
        if r2 > 1.0 + 1e-9:
            raise TheoryError(f"Bloch vector leaves the unit ball: |r|^2 = {r2}")


@dataclass(frozen=True)
class ThreeLevelAmplitudes:
    """Unnormalized no-click amplitudes (C_G, C_B, C_D) at elapsed time t."""

    c_g: complex
    c_b: complex
    c_d: complex
    t: float

    @property
    def norm_sq(self) -> float:
        return abs(self.c_g)**2 + abs(self.c_b)**2 + abs(self.c_d)**2

    def check(self) -> "ThreeLevelAmplitudes":
        if not 0.0 < self.norm_sq <= 1.0 + 1e-12:
            raise TheoryError(f"no-click norm^2 = {self.norm_sq} outside (0, 1]")
        return self


class WIncoherent(NamedTuple):
    value: float
    pole_crossed: bool


def w_dg_coherent(t: float, r: CountingRegime) -> float:
    """W_DG(t) for the coherent bright drive, click-reset initial condition.

    W(t) = [omega_dg / (omega_bg^2/gamma_b)] * (exp(growth_rate * t) - 1).
    """
    if r.flavor != "Coherent":
        raise TheoryError("w_dg_coherent requires the Coherent flavor")
    return (r.omega_dg / r.click_rate) * math.expm1(r.growth_rate * t)


def t_mid_coherent(r: CountingRegime) -> float:
    """No-click time at which W_DG = 1 (Z crosses zero), coherent drive."""
    if r.flavor != "Coherent":
        raise TheoryError("t_mid_coherent requires the Coherent flavor")
    if r.omega_dg <= 0:
        raise TheoryError("t_mid diverges for omega_dg = 0: no reference drive")
    return math.log(r.click_rate / r.omega_dg + 1.0) / r.growth_rate


def bloch_from_w(w: float) -> GdBloch:
    """Map W_DG to the normalized GD Bloch vector.

    z = (w - 1/w)/(w + 1/w), x = 2/(w + 1/w), y = 0; the w = 0 limit is the
    ground state (-1, 0, 0).  Written in the pole-free form (w^2 - 1)/(w^2 + 1)
    so any finite or infinite w is accepted.
    """
    if math.isinf(w):
        return GdBloch(z=1.0, x=0.0, y=0.0)
    w2 = w * w
    return GdBloch(z=(w2 - 1.0) / (w2 + 1.0), x=2.0 * w / (w2 + 1.0), y=0.0)


def bloch_coherent_approx(t: float, r: CountingRegime) -> GdBloch:
    """Strong-monitoring tanh/sech flight: a perfect jump with Z(inf) = 1."""
    u = r.growth_rate * (t - t_mid_coherent(r))
    return GdBloch(z=math.tanh(u), x=1.0 / math.cosh(u), y=0.0)


def _v_parameter(r: CountingRegime) -> float:
    ratio = 0.5 * r.gamma_bg_click / r.omega_dg
    if ratio <= 1.0:
        raise TheoryError(
            f"incoherent solution needs gamma_bg_click > 2*omega_dg "
            f"(got ratio {2 * ratio:.3g}); outside the modeled regime")
    return ratio + math.sqrt(ratio * ratio - 1.0)


def w_dg_incoherent(t: float, r: CountingRegime) -> WIncoherent:
    """W_DG(t) for the incoherent bright drive, with pole-crossing tag.

    W(t) = [e - 1] / [V - e/V] with e = exp((V - 1/V) * omega_dg * t / 2).
    W diverges at finite t (trajectory through the north pole), then returns
    from -inf toward the steady value -V; the tag reports which branch t is on.
    """
    if r.flavor != "Incoherent":
        raise TheoryError("w_dg_incoherent requires the Incoherent flavor")
    v = _v_parameter(r)
    e = math.exp((v - 1.0 / v) * r.omega_dg * t / 2.0)
    denom = v - e / v
    if denom == 0.0:
        return WIncoherent(math.inf, True)
    return WIncoherent((e - 1.0) / denom, pole_crossed=denom < 0.0)


def t_mid_incoherent(r: CountingRegime) -> float:
    """Inversion of W_DG(t) = 1 for the incoherent drive."""
    if r.flavor != "Incoherent":
        raise TheoryError("t_mid_incoherent requires the Incoherent flavor")
    v = _v_parameter(r)
    return 2.0 / ((v - 1.0 / v) * r.omega_dg) * math.log((v + 1.0) / (1.0 / v + 1.0))


def bloch_incoherent_steady(r: CountingRegime) -> GdBloch:
    """Long-time conditional state: an imperfect jump short of the pole."""
    ratio = 2.0 * r.omega_dg / r.gamma_bg_click
    if ratio > 1.0:
        raise TheoryError("steady solution needs gamma_bg_click >= 2*omega_dg")
    return GdBloch(z=math.sqrt(1.0 - ratio * ratio), x=-ratio, y=0.0)


def t_mid_dark_off(w_on: float, rate: float) -> float:
    """Remaining time to mid-flight after the dark drive is shut off.

    With the drive off, W grows exponentially at `rate` (omega_bg^2/(2 gamma_b)
    or gamma_bg_click/2) from its value w_on at shut-off, so the time left to
    W = 1 is (1/2) * ln(1/w_on^2) / rate.  The total elapsed time from the
    click is this value plus the dt_on at which w_on was evaluated.
    w_on >= 1 returns a non-positive remainder: already past the midpoint.
    """
    if w_on <= 0:
        raise TheoryError(f"w_on must be > 0, got {w_on}")
    if rate <= 0:
        raise TheoryError(f"rate must be > 0, got {rate}")
    return 0.5 * math.log(1.0 / (w_on * w_on)) / rate


def completion_probability(t: float, t_on: float,
                           amps_on: ThreeLevelAmplitudes, rate: float) -> float:
    """Probability the no-click evolution survives from t_on to t, drive off.

    N(t)/N(t_on) = P_D + P_G * exp(-2*rate*(t - t_on)) with P_G, P_D the
    normalized GD populations at shut-off; the t -> inf limit is the dark-state
    occupation P_D, i.e. the probability the jump completes.
    """
    if t < t_on:
        raise TheoryError("completion probability needs t >= t_on")
    n_gd = abs(amps_on.c_g)**2 + abs(amps_on.c_d)**2
    if n_gd <= 0:
        raise TheoryError("amplitudes carry no GD population")
    p_d = abs(amps_on.c_d)**2 / n_gd
    p_g = abs(amps_on.c_g)**2 / n_gd
    return p_d + p_g * math.exp(-2.0 * rate * (t - t_on))


def _counting_matrix(r: CountingRegime) -> np.ndarray:
    """Generator of the unnormalized no-click evolution, in (C_G, C_B, C_D) order.

    The incoherent flavor embeds the reduced 2x2 GD system with C_B frozen at 0.
    """
    if r.flavor == "Coherent":
        m = np.array([
            [0.0, -r.omega_bg, -r.omega_dg],
            [r.omega_bg, -r.gamma_b, 0.0],
            [r.omega_dg, 0.0, -r.gamma_d],
        ])
    else:
        m = np.array([
            [-r.gamma_bg_click, 0.0, -r.omega_dg],
            [0.0, 0.0, 0.0],
            [r.omega_dg, 0.0, -r.gamma_d],
        ])
    return 0.5 * m


def integrate_counting_ket(amps0: ThreeLevelAmplitudes, r: CountingRegime,
                           t: float, dt: float) -> ThreeLevelAmplitudes:
    """RK4 integration of the no-click amplitude system up to elapsed time t.

    Enforces dt small against both the de-excitation rate and the bright Rabi
    period, and rejects any step on which the (non-increasing) norm grows.
    """
    limits = []
    if r.flavor == "Coherent":
        if r.gamma_b > 0:
            limits.append(1.0 / r.gamma_b)
        if r.omega_bg > 0:
            limits.append(2.0 * math.pi / r.omega_bg)
    else:
        if r.gamma_bg_click > 0:
            limits.append(1.0 / r.gamma_bg_click)
    if limits and dt > min(limits) / 20.0:
        raise TheoryError(f"dt = {dt} too large; need <= {min(limits) / 20.0:.3g}")
    if t < amps0.t:
        raise TheoryError("target time precedes the initial amplitudes")

    m = _counting_matrix(r)
    y = np.array([amps0.c_g, amps0.c_b, amps0.c_d], dtype=complex)
    remaining = t - amps0.t
    n_steps = max(int(math.ceil(remaining / dt - 1e-12)), 0)
    h = remaining / n_steps if n_steps else 0.0
    for _ in range(n_steps):
        norm_before = float(np.vdot(y, y).real)
        k1 = m @ y
        k2 = m @ (y + 0.5 * h * k1)
        k3 = m @ (y + 0.5 * h * k2)
        k4 = m @ (y + h * k3)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        norm_after = float(np.vdot(y, y).real)
        if norm_after > norm_before * (1.0 + 1e-12):
            raise TheoryError(
                f"no-click norm grew on a step ({norm_before} -> {norm_after}); "
                "reduce dt")
    return ThreeLevelAmplitudes(c_g=complex(y[0]), c_b=complex(y[1]),
                                c_d=complex(y[2]), t=t)


def bloch_from_amplitudes(amps: ThreeLevelAmplitudes) -> GdBloch:
    """Normalized GD Bloch vector of a counting-model ket."""
    p_g = abs(amps.c_g)**2
    p_d = abs(amps.c_d)**2
    n_gd = p_g + p_d
    if n_gd <= 0:
        raise TheoryError("no GD population")
    coh = 2.0 * (amps.c_d * amps.c_g.conjugate()) / n_gd
    return GdBloch(z=(p_d - p_g) / n_gd, x=coh.real, y=coh.imag,
                   n_gd=n_gd / amps.norm_sq)


# Readout pointer states and the SNR / efficiency chain.

def pointer_amplitudes(p: SystemParams) -> tuple[complex, complex]:
    """Steady cavity amplitudes (alpha_B, alpha_notB) under the readout tone.

    alpha = (kappa/2) sqrt(nbar) / (kappa/2 + i * delta_eff), with delta_eff
    the block detuning -delta_r (+ chi_b when the atom is in B).
    """
    drive = 0.5 * p.kappa * math.sqrt(p.nbar)
    alpha_b = drive / complex(0.5 * p.kappa, -p.delta_r + p.chi_b)
    alpha_g = drive / complex(0.5 * p.kappa, -p.delta_r)
    return alpha_b, alpha_g


def snr_dispersive(p: SystemParams) -> float:
    """Single-frame SNR of the dispersive B / not-B measurement.

    SNR = (1/2) eta kappa T_int cos^2(arctan(kappa / 2 chi_b)) nbar.
    """
    proj = math.cos(math.atan2(p.kappa, 2.0 * p.chi_b))**2
    return 0.5 * p.eta * p.kappa * p.t_int * proj * p.nbar


def discrimination_efficiency(snr: float) -> float:
    """Distinguishability of the two pointer blobs: erfc(-sqrt(SNR/2))/2."""
    if snr < 0:
        raise TheoryError(f"SNR must be >= 0, got {snr}")
    return 0.5 * math.erfc(-math.sqrt(0.5 * snr))


def assignment_efficiency(t_int: float, tau_b: float) -> float:
    """Probability the atom does not leave B during one integration window."""
    return math.exp(-t_int / tau_b)


def click_detection_efficiency(p: SystemParams, eta_disc: float | None = None) -> float:
    """Total efficiency for detecting B de-excitations: eta_disc * eta_asg.

    eta_disc defaults to the analytic chain through snr_dispersive; pass a
    measured or fitted value to combine with the same assignment factor.
    """
    if eta_disc is None:
        eta_disc = discrimination_efficiency(snr_dispersive(p))
    return eta_disc * assignment_efficiency(p.t_int, p.tau_b)

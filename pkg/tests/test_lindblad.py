import math
from dataclasses import replace

import numpy as np
import pytest

from jumpflight.lindblad import (DensityMatrix, LindbladError, lindblad_rhs,
                                 lindblad_solve, max_rate, pure_density)
from jumpflight.operators import ATOM_B, ATOM_D, ATOM_G, basis_ket
from jumpflight.params import disable_channels, simulation_params


def quiet(p, **over):
    """All drives off, all imperfections off."""
    base = disable_channels(p, {"all_imperfections"})
    return replace(base, omega_b0=0.0, omega_b1=0.0, omega_dg=0.0, nbar=0.0,
                   **over)


@pytest.fixture(scope="module")
def small():
    return simulation_params(n_fock=12, nbar=2.0)


def test_dark_stationary_state(small):
    p = quiet(small)
    rho = pure_density(basis_ket(p, ATOM_G))
    assert np.abs(lindblad_rhs(rho, p, 0.0)).max() < 1e-14


def test_decay_rate_readout(small):
    # only gamma_b on a pure B state: dP_B/dt = -gamma_b (nth_b + 1)
    p = replace(quiet(small), gamma_b=small.gamma_b, nth_b=small.nth_b)
    rho = pure_density(basis_ket(p, ATOM_B))
    d = lindblad_rhs(rho, p, 0.0)
    pb_dot = np.diag(d).real.reshape(4, p.n_fock).sum(axis=1)[ATOM_B]
    assert pb_dot == pytest.approx(-p.gamma_b * (1 + p.nth_b), rel=1e-12)


def test_gd_identity_constant(small):
    p = quiet(small)
    g = basis_ket(p, ATOM_G)
    d = basis_ket(p, ATOM_D)
    rho0 = DensityMatrix(0.5 * (np.outer(g, g.conj()) + np.outer(d, d.conj())), 0.0)
    sols = lindblad_solve(rho0, p, [0.5, 1.0], dt=1e-3)
    for s in sols:
        assert np.abs(s.entries - rho0.entries).max() < 1e-12


def test_two_level_exponential_decay(small):
    p = replace(quiet(small), gamma_d=0.05)
    rho0 = pure_density(basis_ket(p, ATOM_D))
    grid = [2.0, 5.0, 10.0]
    sols = lindblad_solve(rho0, p, grid, dt=1e-3)
    for t, s in zip(grid, sols):
        pd = s.populations(p.n_fock)[ATOM_D]
        assert pd == pytest.approx(math.exp(-0.05 * t), rel=1e-6)


def test_driven_cavity_steady_state_photon_number():
    # atom pinned in B, drive at delta_r = chi_b: resonant filling to nbar
    p = simulation_params()
    p = replace(disable_channels(p, {"all_imperfections"}),
                omega_b0=0.0, omega_b1=0.0, omega_dg=0.0)
    rho0 = pure_density(basis_ket(p, ATOM_B))
    sols = lindblad_solve(rho0, p, [1.0], dt=1e-3)
    assert sols[0].mean_photons(p.n_fock) == pytest.approx(p.nbar, rel=1e-3)
    # detuned block (atom in G) fills to the Lorentzian value instead
    rho0 = pure_density(basis_ket(p, ATOM_G))
    sols = lindblad_solve(rho0, p, [1.0], dt=1e-3)
    lorentz = p.nbar / (1.0 + (2.0 * p.delta_r / p.kappa) ** 2)
    assert sols[0].mean_photons(p.n_fock) == pytest.approx(lorentz, rel=1e-2)


def test_invariants_along_integration(small):
    rho0 = pure_density(basis_ket(small, ATOM_B))
    sols = lindblad_solve(rho0, small, [0.25, 0.5, 1.0], dt=1e-3,
                          check_positivity=True)
    for s in sols:
        tr = float(np.trace(s.entries).real)
        assert abs(tr - 1.0) < 1e-7
        assert np.abs(s.entries - s.entries.conj().T).max() < 1e-9
        assert float(np.linalg.eigvalsh(s.entries).min()) > -1e-7


def test_dt_guard(small):
    rho0 = pure_density(basis_ket(small, ATOM_B))
    with pytest.raises(LindbladError, match="dt"):
        lindblad_solve(rho0, small, [1.0], dt=1.0 / max_rate(small))


def test_grid_must_increase(small):
    rho0 = pure_density(basis_ket(small, ATOM_B))
    with pytest.raises(LindbladError):
        lindblad_solve(rho0, small, [1.0, 0.5], dt=1e-3)

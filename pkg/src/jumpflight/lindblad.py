"""Unconditioned master-equation integrator on the GBDF x Fock space.

Serves as the ensemble-average oracle for the trajectory engine: averaging
many trajectories must reproduce these populations.  Dense matrices with
fixed-step RK4; at desk-scale dimensions (<= 120) clarity beats sparsity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .operators import (ATOM_B, ATOM_D, ATOM_F, ATOM_G, JUMP_CHANNELS,
                        atomic_jump_rates, build_static_ops)
from .params import SystemParams

HERMITICITY_TOL = 1e-9
TRACE_TOL = 1e-7
POSITIVITY_TOL = 1e-7
TRUNCATION_LIMIT = 1e-4


class LindbladError(RuntimeError):
    pass


@dataclass
class DensityMatrix:
    """Dense density operator with its physicality checks."""

    entries: np.ndarray
    t: float

    def check(self, positivity: bool = False) -> "DensityMatrix":
        m = self.entries
        if np.abs(m - m.conj().T).max() > HERMITICITY_TOL:
            raise LindbladError("density matrix lost Hermiticity")
        tr = float(np.trace(m).real)
        if abs(tr - 1.0) > TRACE_TOL:
            raise LindbladError(f"trace drifted to {tr}")
        if positivity:
            lo = float(np.linalg.eigvalsh(m).min())
            if lo < -POSITIVITY_TOL:
                raise LindbladError(f"negative eigenvalue {lo}")
        return self

    def populations(self, nf: int) -> np.ndarray:
        diag = np.diag(self.entries).real
        return diag.reshape(4, nf).sum(axis=1)

    def mean_photons(self, nf: int) -> float:
        diag = np.diag(self.entries).real
        return float((diag.reshape(4, nf) * np.arange(nf)).sum())


def pure_density(psi: np.ndarray, t: float = 0.0) -> DensityMatrix:
    psi = psi / np.linalg.norm(psi)
    return DensityMatrix(np.outer(psi, psi.conj()), t)


class LindbladModel:
    """Precomputed right-hand side dρ/dt = -i[H(t), ρ] + Σ_k rate_k D[L_k]ρ."""

    def __init__(self, p: SystemParams):
        self.p = p
        self.nf = p.n_fock
        ops = build_static_ops(p, include_dg_in_static=True)
        # non-Hermitian half: A = -iH_static - (1/2) Σ rate L†L (diagonal)
        self.a_nh = -1j * ops.h_static - np.diag(ops.decay_diag.astype(complex))
        self.a_nh_dag = self.a_nh.conj().T.copy()
        self.c = ops.c
        self.c_dag = ops.c.conj().T.copy()
        self.b1_coef = 0.5 * p.omega_b1
        self.delta_b1 = p.delta_b1
        self.rates = atomic_jump_rates(p)
        self.block = [slice(a * self.nf, (a + 1) * self.nf) for a in range(4)]

    def rhs(self, rho: np.ndarray, t: float) -> np.ndarray:
        out = self.a_nh @ rho
        out += rho @ self.a_nh_dag
        if self.b1_coef != 0.0:
            # commutator piece of the rotating sideband, via block rows/cols
            ph = self.b1_coef * complex(math.cos(self.delta_b1 * t),
                                        -math.sin(self.delta_b1 * t))
            g, b = self.block[ATOM_G], self.block[ATOM_B]
            out[b, :] += ph * rho[g, :]
            out[g, :] -= ph.conjugate() * rho[b, :]
            out[:, b] += ph.conjugate() * rho[:, g]
            out[:, g] -= ph * rho[:, b]
        out += self.p.kappa * (self.c @ rho @ self.c_dag)
        for (tag, kind, dst, src), rate in zip(JUMP_CHANNELS[1:], self.rates):
            if rate == 0.0:
                continue
            d, s = self.block[dst], self.block[src]
            if kind == "transfer":
                out[d, d] += rate * rho[s, s]
            else:  # projective dephasing recycles the same block
                out[d, d] += rate * rho[d, d]
        return out


@lru_cache(maxsize=8)
def _model_cache(p: SystemParams) -> LindbladModel:
    return LindbladModel(p)


def lindblad_rhs(rho: DensityMatrix, p: SystemParams, t: float | None = None) -> np.ndarray:
    """dρ/dt at time t (defaults to rho.t)."""
    model = _model_cache(p)
    return model.rhs(rho.entries, rho.t if t is None else t)


def max_rate(p: SystemParams) -> float:
    rates = [p.kappa, p.gamma_b * (1 + p.nth_b), p.gamma_d * (1 + p.nth_d),
             2 * p.gamma_b_phi, 2 * p.gamma_d_phi,
             p.gamma_fg, p.gamma_fd, p.gamma_gf, p.gamma_df]
    return max(rates)


def lindblad_solve(rho0: DensityMatrix, p: SystemParams, t_grid,
                   dt: float = 1e-3, check_positivity: bool = False,
                   ) -> list[DensityMatrix]:
    """Fixed-step RK4 integration, returning snapshots at the grid times.

    The grid must be increasing and start at or after rho0.t.  Each snapshot
    is validated (Hermiticity, trace, optionally positivity) and the Fock
    truncation guard is enforced.
    """
    if dt > 1.0 / (20.0 * max_rate(p)):
        raise LindbladError(f"dt = {dt} too coarse; need <= {1.0 / (20 * max_rate(p)):.2e}")
    model = _model_cache(p)
    rho = rho0.entries.copy()
    t = rho0.t
    out: list[DensityMatrix] = []
    for target in t_grid:
        if target < t - 1e-12:
            raise LindbladError("t_grid must be increasing")
        n_steps = max(int(round((target - t) / dt)), 0)
        h = (target - t) / n_steps if n_steps else 0.0
        for _ in range(n_steps):
            k1 = model.rhs(rho, t)
            k2 = model.rhs(rho + 0.5 * h * k1, t + 0.5 * h)
            k3 = model.rhs(rho + 0.5 * h * k2, t + 0.5 * h)
            k4 = model.rhs(rho + h * k3, t + h)
            rho = rho + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            t += h
        t = float(target)
        snap = DensityMatrix(rho.copy(), t).check(positivity=check_positivity)
        top = np.diag(snap.entries).real.reshape(4, p.n_fock)[:, -1]
        if top.max() >= TRUNCATION_LIMIT:
            raise LindbladError(
                f"top Fock level population {top.max():.2e} >= {TRUNCATION_LIMIT}")
        out.append(snap)
    return out

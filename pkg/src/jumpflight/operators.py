"""Dense operators on the {G, B, D, F} x Fock(n_fock) product space.

Atom-major indexing: amplitude index = atom * n_fock + photon_number, with
atom order G=0, B=1, D=2, F=3.  The F level carries no coherent couplings and
no dispersive shift; it enters only through incoherent leakage jumps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .params import SystemParams

ATOM_G, ATOM_B, ATOM_D, ATOM_F = 0, 1, 2, 3
ATOM_LABELS = ("G", "B", "D", "F")

# jump channel table: (tag, kind, destination atom, source atom)
# kind is one of "loss" (cavity photon), "transfer" (atom a <- b), "project"
JUMP_CHANNELS: tuple[tuple[str, str, int, int], ...] = (
    ("PhotonLoss", "loss", -1, -1),
    ("RelaxB", "transfer", ATOM_G, ATOM_B),
    ("RelaxD", "transfer", ATOM_G, ATOM_D),
    ("ExciteB", "transfer", ATOM_B, ATOM_G),
    ("ExciteD", "transfer", ATOM_D, ATOM_G),
    ("DephaseB", "project", ATOM_B, ATOM_B),
    ("DephaseD", "project", ATOM_D, ATOM_D),
    ("LeakFromG", "transfer", ATOM_F, ATOM_G),
    ("LeakFromD", "transfer", ATOM_F, ATOM_D),
    ("ReturnFtoG", "transfer", ATOM_G, ATOM_F),
    ("ReturnFtoD", "transfer", ATOM_D, ATOM_F),
)
CHANNEL_TAGS = tuple(ch[0] for ch in JUMP_CHANNELS)


def atomic_jump_rates(p: SystemParams) -> np.ndarray:
    """Rate constants of the ten atomic jump channels, in channel-table order
    (photon loss excluded: its rate is state dependent, (1-eta)*kappa*<n>)."""
    return np.array([
        p.gamma_b * (p.nth_b + 1.0),
        p.gamma_d * (p.nth_d + 1.0),
        p.gamma_b * p.nth_b,
        p.gamma_d * p.nth_d,
        2.0 * p.gamma_b_phi,
        2.0 * p.gamma_d_phi,
        p.gamma_fg,
        p.gamma_fd,
        p.gamma_gf,
        p.gamma_df,
    ])


def annihilation(nf: int) -> np.ndarray:
    c = np.zeros((nf, nf))
    c[np.arange(nf - 1), np.arange(1, nf)] = np.sqrt(np.arange(1, nf))
    return c


def atom_op(mat4: np.ndarray, nf: int) -> np.ndarray:
    return np.kron(mat4, np.eye(nf))


def cavity_op(mat: np.ndarray) -> np.ndarray:
    return np.kron(np.eye(4), mat)


def atom_projector(atom: int) -> np.ndarray:
    m = np.zeros((4, 4))
    m[atom, atom] = 1.0
    return m


def atom_transfer(dst: int, src: int) -> np.ndarray:
    m = np.zeros((4, 4))
    m[dst, src] = 1.0
    return m


@dataclass(frozen=True)
class StaticOps:
    """One-time dense operators shared by the trajectory and Lindblad engines."""

    nf: int
    dim: int
    c: np.ndarray            # cavity annihilation on the full space
    num: np.ndarray          # photon number operator (diagonal)
    h_static: np.ndarray     # Hermitian, time-independent part of H(t)
    decay_diag: np.ndarray   # real diagonal: (1/2) sum_k rate_k L_k^dag L_k, incl. kappa/2 n
    b1_up: np.ndarray        # |B><G| x 1 (bi-chromatic sideband, rotating at delta_b1)
    dg_up: np.ndarray        # |D><G| x 1 (dark Rabi drive, switchable)


def build_static_ops(p: SystemParams, include_dg_in_static: bool = False) -> StaticOps:
    """All time-independent operators in the DG-drive rotating frame.

    H_static = -delta_r n + i (kappa/2) sqrt(nbar) (c^dag - c)
               + (chi_b P_B + chi_d P_D) n - delta_dg P_D
               + i (omega_b0/2) (|B><G| - |G><B|)
    The DG Rabi term i (omega_dg/2)(|D><G| - |G><D|) is kept separate so the
    feedback controller can gate it per trajectory; pass
    include_dg_in_static=True for the unconditioned master equation.
    """
    nf = p.n_fock
    c1 = annihilation(nf)
    c = cavity_op(c1)
    num = cavity_op(c1.T @ c1)

    drive = 0.5 * p.kappa * math.sqrt(p.nbar)
    h = (-p.delta_r) * num \
        + 1j * drive * (c.conj().T - c) \
        + atom_op(p.chi_b * atom_projector(ATOM_B)
                  + p.chi_d * atom_projector(ATOM_D), nf) @ num \
        - p.delta_dg * atom_op(atom_projector(ATOM_D), nf)
    b0 = atom_op(atom_transfer(ATOM_B, ATOM_G), nf)
    h = h + 1j * 0.5 * p.omega_b0 * (b0 - b0.conj().T)

    dg_up = atom_op(atom_transfer(ATOM_D, ATOM_G), nf)
    if include_dg_in_static:
        h = h + 1j * 0.5 * p.omega_dg * (dg_up - dg_up.conj().T)

    # (1/2) sum_k rate_k L_k^dag L_k is diagonal in this basis
    rates = atomic_jump_rates(p)
    diag = 0.5 * p.kappa * np.diag(num).real.copy()
    for (_, kind, _dst, src), rate in zip(JUMP_CHANNELS[1:], rates):
        proj = np.diag(atom_op(atom_projector(src), nf)).real
        diag += 0.5 * rate * proj

    return StaticOps(nf=nf, dim=4 * nf, c=c, num=num, h_static=h,
                     decay_diag=diag, b1_up=b0, dg_up=dg_up)


def build_hamiltonian(p: SystemParams, t: float, dg_on: bool = True) -> np.ndarray:
    """Hermitian H(t) = H_drive(t) + H_R on the full space.

    The BG drive is bi-chromatic: omega_bg(t) = omega_b0 + omega_b1 *
    exp(-i delta_b1 t) multiplies |B><G|.
    """
    ops = build_static_ops(p, include_dg_in_static=dg_on)
    phase = 0.5 * p.omega_b1 * np.exp(-1j * p.delta_b1 * t)
    h = ops.h_static + 1j * (phase * ops.b1_up - np.conj(phase) * ops.b1_up.conj().T)
    return h


def nonhermitian_generator(p: SystemParams, t: float, dg_on: bool = True) -> np.ndarray:
    """Drift generator -i H(t) - decay_diag of the unnormalized SSE."""
    h = build_hamiltonian(p, t, dg_on=dg_on)
    ops = build_static_ops(p)
    return -1j * h - np.diag(ops.decay_diag)


def basis_ket(p: SystemParams, atom: int, n_photon: int = 0) -> np.ndarray:
    psi = np.zeros(4 * p.n_fock, dtype=complex)
    psi[atom * p.n_fock + n_photon] = 1.0
    return psi


def coherent_cavity_ket(p: SystemParams, atom: int, alpha: complex) -> np.ndarray:
    """|atom> x |alpha>, truncated to n_fock and renormalized."""
    n = np.arange(p.n_fock)
    log_fact = np.concatenate(([0.0], np.cumsum(np.log(np.arange(1, p.n_fock)))))
    amp = np.exp(-0.5 * abs(alpha) ** 2 + n * np.log(complex(alpha)) - 0.5 * log_fact) \
        if alpha != 0 else np.eye(p.n_fock)[0].astype(complex)
    psi = np.zeros(4 * p.n_fock, dtype=complex)
    psi[atom * p.n_fock:(atom + 1) * p.n_fock] = amp
    return psi / math.sqrt(float(np.vdot(psi, psi).real))

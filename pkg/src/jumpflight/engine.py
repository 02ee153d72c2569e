"""Diffusive quantum-trajectory integrator with heterodyne record output.

One step combines
  1. the deterministic drift under the non-Hermitian generator
     A(t) = -i H(t) - (1/2) sum_k rate_k L_k^dag L_k (photon loss at full
     kappa), integrated by an exact split propagator: the time-constant part
     of A is exponentiated once per (params, dt) and the two small rotating
     drive terms (the bi-chromatic BG sideband and the switchable DG Rabi
     term) are applied at the step midpoint to second order;
  2. the Ito measurement-backaction term sqrt(eta kappa) dzeta* c |psi> with
     dzeta = sqrt(eta kappa) <c> dt + dZ, Re/Im dZ ~ Normal(0, dt/2),
     evaluated on the normalized pre-step ket (Euler-Maruyama);
  3. a first-order jump lottery over the unmonitored channels, one uniform
     draw against stacked channel intervals, rates from the pre-step ket;
  4. exact renormalization.

Batches of trajectories sharing a time grid advance together.  The batch is
stored state-major, shape (dim, B), so per-block operations touch contiguous
rows.  Each trajectory consumes noise exclusively from its own RngStream in
a fixed block pattern, making results bit-reproducible regardless of batch
grouping or worker count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterator

import numpy as np
from scipy.linalg import expm

from .operators import (ATOM_B, ATOM_D, ATOM_F, ATOM_G, CHANNEL_TAGS,
                        JUMP_CHANNELS, atomic_jump_rates, basis_ket,
                        build_static_ops)
from .params import SystemParams, ProtocolConfig

DEFAULT_DT = 1e-3  # us (1 ns): resolves 1/kappa = 44 ns and the fastest sideband
MAX_JUMP_PROB = 0.1
TRUNCATION_LIMIT = 1e-4

# noise is pre-drawn in fixed-size step blocks so that a trajectory's draw
# sequence depends only on its (seed, stream_id), never on batch layout
NOISE_BLOCK_STEPS = 2080


class EngineError(RuntimeError):
    pass


class TruncationError(EngineError):
    """Fock-space truncation guard tripped: top level population too large."""


class JumpOverflowError(EngineError):
    """Summed jump probability exceeded the first-order guard in one step.

    The step is rejected; callers re-integrate it at a finer dt (see
    step_refined) or fail.
    """


@dataclass(frozen=True)
class RngStream:
    """Deterministic per-trajectory noise source.

    Identical (seed, stream_id) reproduce the identical trajectory bit for
    bit; stream_id is by convention the global trajectory index.
    """

    seed: int
    stream_id: int

    def generator(self) -> np.random.Generator:
        return np.random.default_rng(
            np.random.SeedSequence([int(self.seed), int(self.stream_id)]))


class NoiseBlocks:
    """Pre-drawn Wiener increments and lottery uniforms for one trajectory.

    Per block: NOISE_BLOCK_STEPS complex-normal pairs, then the same number
    of uniforms, in that order.  The block pattern pins the draw sequence of
    a stream.
    """

    def __init__(self, stream: RngStream, dt: float):
        self._gen = stream.generator()
        self._sigma = math.sqrt(0.5 * dt)
        self._pos = NOISE_BLOCK_STEPS
        self._dz = np.empty(0, dtype=complex)
        self._u = np.empty(0)

    def refill(self) -> tuple[np.ndarray, np.ndarray]:
        g = self._gen.normal(0.0, self._sigma, size=(NOISE_BLOCK_STEPS, 2))
        dz = g[:, 0] + 1j * g[:, 1]
        u = self._gen.random(NOISE_BLOCK_STEPS)
        return dz, u

    def draw(self) -> tuple[complex, float]:
        if self._pos >= NOISE_BLOCK_STEPS:
            self._dz, self._u = self.refill()
            self._pos = 0
        i = self._pos
        self._pos += 1
        return self._dz[i], self._u[i]


@dataclass
class AtomCavityKet:
    """Complex amplitude vector over {G,B,D,F} x Fock(n_fock), atom-major."""

    amplitudes: np.ndarray
    n_fock: int
    norm_is_tracked: bool = True

    @property
    def dim(self) -> int:
        return 4 * self.n_fock

    def blocks(self) -> np.ndarray:
        return self.amplitudes.reshape(4, self.n_fock)

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def populations(self) -> np.ndarray:
        b = self.blocks()
        return (b.real**2 + b.imag**2).sum(axis=1)

    def check(self) -> "AtomCavityKet":
        if abs(self.norm() - 1.0) > 1e-9:
            raise EngineError(f"ket norm {self.norm()} != 1 after renormalized step")
        top = np.abs(self.blocks()[:, -1])**2
        if top.max() >= TRUNCATION_LIMIT:
            raise TruncationError(
                f"top Fock level population {top.max():.2e} >= {TRUNCATION_LIMIT}")
        return self


def initial_ket(p: SystemParams, atom: int = ATOM_B) -> AtomCavityKet:
    return AtomCavityKet(basis_ket(p, atom), p.n_fock)


@dataclass(frozen=True)
class TrajectoryStep:
    """One integrator step: record increment plus any jump that fired."""

    dt: float
    d_zeta: complex
    jumps_fired: tuple[str, ...]


class SseEngine:
    """Precomputed batched stepper for a fixed (params, dt) pair.

    State arrays are (dim, B): one column per trajectory.
    """

    def __init__(self, p: SystemParams, dt: float = DEFAULT_DT):
        self.p = p
        self.dt = dt
        self.nf = p.n_fock
        self.dim = p.dim
        ops = build_static_ops(p)
        a_const = -1j * ops.h_static - np.diag(ops.decay_diag.astype(complex))
        self.a_const = a_const
        self.e_half = np.ascontiguousarray(expm(a_const * (0.5 * dt)))
        # midpoint-rule weight of the rotating sideband over one step is its
        # exact step integral: dt * exp(-i delta_b1 t_mid) * sinc(delta_b1 dt/2)
        half_angle = 0.5 * p.delta_b1 * dt
        sinc = math.sin(half_angle) / half_angle if half_angle != 0.0 else 1.0
        self.b1_coef = 0.5 * p.omega_b1 * sinc
        self.delta_b1 = p.delta_b1
        self.dg_coef = 0.5 * p.omega_dg
        self.sqrt_eta_kappa = math.sqrt(p.eta * p.kappa)
        self.loss_rate = (1.0 - p.eta) * p.kappa
        self.jump_rates = atomic_jump_rates(p)          # (10,)
        self.jump_src = np.array([ch[3] for ch in JUMP_CHANNELS[1:]])
        nf = self.nf
        self.blk = [slice(a * nf, (a + 1) * nf) for a in range(4)]
        # c couples index i <- i+1 within one atom block only
        w = np.tile(np.concatenate([np.sqrt(np.arange(1.0, nf)), [0.0]]), 4)[:-1]
        self.c_weights = w[:, None]                     # (dim-1, 1)
        self.n_full = np.tile(np.arange(nf, dtype=float), 4)
        ind = np.zeros((4, self.dim))
        for a in range(4):
            ind[a, self.blk[a]] = 1.0
        self.block_ind = ind
        self.top_rows = np.array([a * nf + nf - 1 for a in range(4)])

    def _apply_m(self, v: np.ndarray, ph: complex,
                 dg_coef: np.ndarray | float) -> np.ndarray:
        """M(t) v for the BG sideband and gated DG term; v, result (dim, B)."""
        out = np.zeros_like(v)
        g, b, d = self.blk[ATOM_G], self.blk[ATOM_B], self.blk[ATOM_D]
        if ph != 0.0:
            out[b] += ph * v[g]
            out[g] -= ph.conjugate() * v[b]
        if dg_coef is not None:
            out[d] += dg_coef * v[g]
            out[g] -= dg_coef * v[d]
        return out

    def _rotating_update(self, y: np.ndarray, t_mid: float, dt: float,
                         dg_mask: np.ndarray | bool) -> None:
        """y += dt M(t_mid) y + (dt^2/2) M^2 y (midpoint, second order)."""
        if self.b1_coef == 0.0 and self.dg_coef == 0.0:
            return
        ph = self.b1_coef * complex(math.cos(self.delta_b1 * t_mid),
                                    -math.sin(self.delta_b1 * t_mid)) \
            if self.b1_coef != 0.0 else 0.0
        if self.dg_coef == 0.0 or dg_mask is False:
            dg_coef = None
        elif dg_mask is True:
            dg_coef: np.ndarray | float | None = self.dg_coef
        else:
            dg_coef = self.dg_coef * dg_mask[None, :]
        m1 = self._apply_m(y, ph, dg_coef)
        m2 = self._apply_m(m1, ph, dg_coef)
        m1 *= dt
        m2 *= 0.5 * dt * dt
        y += m1
        y += m2

    def drift(self, psi: np.ndarray, t: float,
              dg_mask: np.ndarray | bool = True) -> np.ndarray:
        """Deterministic propagation over one dt (no noise, no jumps)."""
        y = self.e_half @ psi
        self._rotating_update(y, t + 0.5 * self.dt, self.dt, dg_mask)
        return self.e_half @ y

    def _apply_c(self, psi: np.ndarray) -> np.ndarray:
        out = np.zeros_like(psi)
        np.multiply(psi[1:], self.c_weights, out=out[:-1])
        return out

    def step(self, psi: np.ndarray, t: float,
             dz: np.ndarray, u_jump: np.ndarray,
             dg_mask: np.ndarray | bool = True,
             ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Advance one step of size self.dt.  psi normalized, shape (dim, B).

        Returns (new normalized psi, dzeta (B,), fired channel index (B,),
        -1 where no jump fired).  dz and u_jump come from each trajectory's
        own noise stream.
        """
        dt = self.dt
        nb = psi.shape[1]
        abs2 = psi.real**2 + psi.imag**2
        pops = self.block_ind @ abs2            # (4, B)
        nexp = self.n_full @ abs2               # (B,)

        cpsi = self._apply_c(psi)
        expc = np.einsum("ij,ij->j", psi.conj(), cpsi)
        dzeta = self.sqrt_eta_kappa * expc * dt + dz

        y = self.e_half @ psi
        self._rotating_update(y, t + 0.5 * dt, dt, dg_mask)
        y += (self.sqrt_eta_kappa * np.conj(dzeta))[None, :] * cpsi
        out = self.e_half @ y

        probs = np.empty((11, nb))
        probs[0] = self.loss_rate * nexp
        probs[1:] = pops[self.jump_src] * self.jump_rates[:, None]
        probs *= dt
        total = probs.sum(axis=0)
        worst = total.max() if nb else 0.0
        if worst > MAX_JUMP_PROB:
            raise JumpOverflowError(
                f"summed jump probability {worst:.3f} > {MAX_JUMP_PROB} in one "
                f"step; dt = {dt} is too large")

        fired = np.full(nb, -1, dtype=np.int8)
        cols = np.nonzero(u_jump < total)[0]
        if cols.size:
            cum = np.cumsum(probs[:, cols], axis=0)
            ch = (cum < u_jump[cols][None, :]).sum(axis=0)
            fired[cols] = ch
            for k in np.unique(ch):
                sel = cols[ch == k]
                tag, kind, dst, src = JUMP_CHANNELS[k]
                if kind == "loss":
                    blk = out[:, sel]
                    shifted = np.zeros_like(blk)
                    np.multiply(blk[1:], self.c_weights, out=shifted[:-1])
                    out[:, sel] = shifted
                elif kind == "transfer":
                    moved = out[self.blk[src], sel]
                    out[:, sel] = 0.0
                    out[self.blk[dst], sel] = moved
                else:  # projective dephasing
                    kept = out[self.blk[dst], sel]
                    out[:, sel] = 0.0
                    out[self.blk[dst], sel] = kept

        norms = np.sqrt((out.real**2 + out.imag**2).sum(axis=0))
        if norms.min() <= 0.0:
            raise EngineError("state vanished during a step")
        out /= norms[None, :]
        return out, dzeta, fired

    def fine(self) -> "SseEngine":
        """Quarter-step engine used to re-integrate rejected steps."""
        if not hasattr(self, "_fine"):
            self._fine = SseEngine(self.p, 0.25 * self.dt)
        return self._fine

    def step_refined(self, psi: np.ndarray, t: float,
                     dz: np.ndarray, u_jump: np.ndarray,
                     dg_mask: np.ndarray | bool, refine_draw,
                     ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """step() with automatic re-integration of guard-rejected steps.

        On a JumpOverflowError (a photon-number excursion pushing the summed
        first-order jump probability over the guard), the already-drawn
        (dz, u) are discarded and the step is redone as four quarter steps
        whose noise comes from refine_draw(), a callable returning
        (dz4 (4, B), u4 (4, B)) from the trajectories' refinement streams.
        The main noise-stream consumption pattern therefore never changes.
        """
        try:
            return self.step(psi, t, dz, u_jump, dg_mask)
        except JumpOverflowError:
            pass
        fine = self.fine()
        dz4, u4 = refine_draw()
        out = psi
        dzeta_total = np.zeros(psi.shape[1], dtype=complex)
        fired_first = np.full(psi.shape[1], -1, dtype=np.int8)
        for k in range(4):
            out, dzeta, fired = fine.step(out, t + k * fine.dt, dz4[k], u4[k],
                                          dg_mask)
            dzeta_total += dzeta
            fired_first = np.where((fired_first < 0) & (fired >= 0),
                                   fired, fired_first)
        return out, dzeta_total, fired_first

    def check_truncation(self, psi: np.ndarray) -> None:
        top = np.abs(psi[self.top_rows, :])**2
        worst = top.max() if psi.shape[1] else 0.0
        if worst >= TRUNCATION_LIMIT:
            raise TruncationError(
                f"top Fock level population {worst:.2e} >= {TRUNCATION_LIMIT}; "
                "increase n_fock")

    def bloch_arrays(self, psi: np.ndarray
                     ) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """(z, x, y, p_bb) per column of a normalized (dim, B) batch."""
        abs2 = psi.real**2 + psi.imag**2
        pops = self.block_ind @ abs2
        g, d = self.blk[ATOM_G], self.blk[ATOM_D]
        coh = 2.0 * np.einsum("ij,ij->j", psi[d], psi[g].conj())
        return (pops[ATOM_D] - pops[ATOM_G], coh.real, coh.imag, pops[ATOM_B])


@lru_cache(maxsize=16)
def _engine_cache(p: SystemParams, dt: float) -> SseEngine:
    return SseEngine(p, dt)


def get_engine(p: SystemParams, dt: float = DEFAULT_DT) -> SseEngine:
    return _engine_cache(p, dt)


def sse_step(ket: AtomCavityKet, p: SystemParams, t: float, dt: float,
             rng: np.random.Generator, dg_on: bool = True,
             dz: complex | None = None, disable_jumps: bool = False,
             ) -> tuple[AtomCavityKet, TrajectoryStep]:
    """Single-trajectory step (batch-of-one view of the batched engine).

    dz may be forced (e.g. to 0) for deterministic-drift tests;
    disable_jumps skips the lottery the same way.
    """
    eng = get_engine(p, dt)
    psi = ket.amplitudes[:, None].astype(complex)
    if dz is None:
        g = rng.normal(0.0, math.sqrt(0.5 * dt), size=2)
        dz = complex(g[0], g[1])
    u = rng.random(1)
    if disable_jumps:
        u = np.array([2.0])  # above any total probability
    out, dzeta, fired = eng.step(psi, t, np.array([dz]), u, dg_mask=dg_on)
    jumps = (CHANNEL_TAGS[fired[0]],) if fired[0] >= 0 else ()
    new_ket = AtomCavityKet(out[:, 0], p.n_fock)
    return new_ket, TrajectoryStep(dt=dt, d_zeta=complex(dzeta[0]), jumps_fired=jumps)


def conditional_bloch(ket: AtomCavityKet) -> tuple["GdBloch", float]:
    """GD Bloch components and bright population of a ket.

    Z = P_D - P_G, X + iY = 2 sum_n psi_D,n conj(psi_G,n), P_BB = P_B, each
    divided by <psi|psi>; the cavity index is traced over.
    """
    from .theory import GdBloch

    b = ket.blocks()
    norm_sq = float((b.real**2 + b.imag**2).sum())
    pops = (b.real**2 + b.imag**2).sum(axis=1) / norm_sq
    coh = 2.0 * np.sum(b[ATOM_D] * b[ATOM_G].conj()) / norm_sq
    bloch = GdBloch(z=float(pops[ATOM_D] - pops[ATOM_G]),
                    x=float(coh.real), y=float(coh.imag),
                    n_gd=float(pops[ATOM_D] + pops[ATOM_G]))
    return bloch, float(pops[ATOM_B])


def run_trajectory(p: SystemParams, protocol: ProtocolConfig, duration: float,
                   rng: RngStream, dt: float = DEFAULT_DT,
                   ) -> Iterator[tuple[TrajectoryStep, dict]]:
    """Pull-based stream of (TrajectoryStep, diagnostics) for one trajectory.

    Starts from |B> x vacuum with all drives on (free monitoring).
    Diagnostics carry the true-state GD Bloch components and populations for
    oracle tests.
    """
    eng = get_engine(p, dt)
    noise = NoiseBlocks(rng, dt)
    refine_gen = np.random.default_rng(
        np.random.SeedSequence([int(rng.seed), int(rng.stream_id), 2]))
    sigma_fine = math.sqrt(0.125 * dt)

    def refine_draw():
        g = refine_gen.normal(0.0, sigma_fine, size=(4, 2))
        dz4 = (g[:, 0] + 1j * g[:, 1])[:, None]
        return dz4, refine_gen.random(4)[:, None]

    psi = basis_ket(p, ATOM_B)[:, None]
    n_steps = int(round(duration / dt))
    steps_per_frame = max(int(round(p.t_int / dt)), 1)
    for i in range(n_steps):
        t = i * dt
        dz, u = noise.draw()
        psi, dzeta, fired = eng.step_refined(psi, t, np.array([dz]),
                                             np.array([u]), True, refine_draw)
        if (i + 1) % steps_per_frame == 0:
            eng.check_truncation(psi)
        z, x, y, pbb = eng.bloch_arrays(psi)
        jumps = (CHANNEL_TAGS[fired[0]],) if fired[0] >= 0 else ()
        yield (TrajectoryStep(dt=dt, d_zeta=complex(dzeta[0]), jumps_fired=jumps),
               {"t": t + dt, "z": float(z[0]), "x": float(x[0]), "y": float(y[0]),
                "p_bb": float(pbb[0]), "norm": 1.0})

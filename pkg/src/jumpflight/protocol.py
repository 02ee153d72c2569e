"""Free-running, catch, and reverse protocols over the labeled record.

A batch of trajectories advances frame by frame (one frame = t_int of
integrator steps).  After each frame the hysteretic IQ filter updates the
B / not-B label per trajectory, and a controller state machine mirrors the
real-time feedback logic:

* a de-excitation click (B -> not-B) opens a catch sample aligned at
  dt_catch = 0; the true-state GD Bloch components and bright population are
  accumulated on the frame grid until the record switches back to B;
* the no-click counter cnt tracks consecutive not-B frames; the DG Rabi
  drive is gated off once cnt reaches the dt_on frame count and restored on
  the next B frame;
* in reverse mode, when cnt reaches the dt_catch frame count the
  intervention pulse is scored against a copy of the state (the pulse and
  the projective scoring are instantaneous, so scoring a copy leaves the
  ongoing record unbiased);
* in the random-intervention control the same pulse is scored at
  pre-scheduled record times instead.

Ensemble results merge associatively in a fixed batch order with compensated
summation, so worker count never changes the output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .engine import (DEFAULT_DT, NOISE_BLOCK_STEPS, RngStream, SseEngine,
                     get_engine)
from .operators import ATOM_B, ATOM_D, ATOM_F, ATOM_G, basis_ket
from .params import ProtocolConfig, SystemParams, disable_channels
from .record import Thresholds, demod_phase, record_scale

SETTLE_FRAMES = 4  # cavity ring-up and filter settling, excluded from statistics


@dataclass(frozen=True)
class Scenario:
    """One ensemble run: what to simulate and which statistics to collect."""

    mode: str                       # free | catch | reverse | random_control | pinned
    duration: float                 # us per trajectory
    dt: float = DEFAULT_DT
    thresholds: Thresholds | None = None
    dt_on: float | None = None      # us of DG drive after a click; None = always on
    dt_catch: float | None = None   # reverse: no-click time that triggers the pulse
    theta_i: float = 0.0
    phi_i: float = 0.5 * math.pi
    # several intervention pulses may be scored per catch (each on its own copy)
    pulses: tuple[tuple[float, float], ...] = ()
    tomo_bins: int = 0
    collect_frames: bool = False
    collect_bloch: bool = False
    initial_atom: int = ATOM_B
    checkpoint_frames: tuple[int, ...] = ()
    control_spacing: float = 40.0   # us between random-control interventions
    settle_frames: int = SETTLE_FRAMES
    batch_size: int = 128


@dataclass
class EnsembleResult:
    """Mergeable statistics of a trajectory ensemble."""

    n_traj: int = 0
    observed_time: float = 0.0          # per-trajectory counted time, summed
    n_deex: int = 0
    n_ex: int = 0
    notb_dwells: np.ndarray = field(default_factory=lambda: np.empty(0))
    b_dwells: np.ndarray = field(default_factory=lambda: np.empty(0))
    # tomogram partials (dt grid implied by t_int)
    tomo_counts: np.ndarray | None = None
    tomo_z: np.ndarray | None = None
    tomo_x: np.ndarray | None = None
    tomo_y: np.ndarray | None = None
    tomo_pbb: np.ndarray | None = None
    # reverse / control scoring, one entry per scored pulse
    n_trials: int = 0
    sum_pg: np.ndarray | None = None
    sum_pd: np.ndarray | None = None
    sum_pg2: np.ndarray | None = None
    sum_pd2: np.ndarray | None = None
    # checkpoint population sums (n_checkpoints, 4)
    checkpoint_pops: np.ndarray | None = None
    # optional raw record (frames, B): i, q, label
    frames_i: np.ndarray | None = None
    frames_q: np.ndarray | None = None
    frames_label: np.ndarray | None = None
    # optional true-state diagnostics per frame boundary (frames, B)
    bloch_z: np.ndarray | None = None
    bloch_x: np.ndarray | None = None
    bloch_y: np.ndarray | None = None
    bloch_pbb: np.ndarray | None = None


def _kahan_add(total: np.ndarray, comp: np.ndarray, x: np.ndarray) -> None:
    y = x - comp
    t = total + y
    comp[...] = (t - total) - y
    total[...] = t


class _Accumulator:
    """Fixed-order merge of batch results with compensated float sums."""

    def __init__(self):
        self.result: EnsembleResult | None = None
        self._comp: dict[str, np.ndarray] = {}
        self._dwn: list[np.ndarray] = []
        self._dwb: list[np.ndarray] = []
        self._frames: list[tuple] = []
        self._bloch: list[tuple] = []

    def add(self, r: EnsembleResult) -> None:
        if self.result is None:
            self.result = r
            for name in ("tomo_z", "tomo_x", "tomo_y", "tomo_pbb", "checkpoint_pops"):
                arr = getattr(r, name)
                if arr is not None:
                    self._comp[name] = np.zeros_like(arr)
            self._dwn = [r.notb_dwells]
            self._dwb = [r.b_dwells]
            if r.frames_i is not None:
                self._frames = [(r.frames_i, r.frames_q, r.frames_label)]
            if r.bloch_z is not None:
                self._bloch = [(r.bloch_z, r.bloch_x, r.bloch_y, r.bloch_pbb)]
            return
        a = self.result
        a.n_traj += r.n_traj
        a.observed_time += r.observed_time
        a.n_deex += r.n_deex
        a.n_ex += r.n_ex
        a.n_trials += r.n_trials
        if r.sum_pg is not None:
            a.sum_pg += r.sum_pg
            a.sum_pd += r.sum_pd
            a.sum_pg2 += r.sum_pg2
            a.sum_pd2 += r.sum_pd2
        if a.tomo_counts is not None:
            a.tomo_counts += r.tomo_counts
        for name in ("tomo_z", "tomo_x", "tomo_y", "tomo_pbb", "checkpoint_pops"):
            arr = getattr(a, name)
            if arr is not None:
                _kahan_add(arr, self._comp[name], getattr(r, name))
        self._dwn.append(r.notb_dwells)
        self._dwb.append(r.b_dwells)
        if r.frames_i is not None:
            self._frames.append((r.frames_i, r.frames_q, r.frames_label))
        if r.bloch_z is not None:
            self._bloch.append((r.bloch_z, r.bloch_x, r.bloch_y, r.bloch_pbb))

    def finish(self) -> EnsembleResult:
        r = self.result
        r.notb_dwells = np.concatenate(self._dwn) if self._dwn else np.empty(0)
        r.b_dwells = np.concatenate(self._dwb) if self._dwb else np.empty(0)
        if self._frames:
            r.frames_i = np.concatenate([f[0] for f in self._frames], axis=1)
            r.frames_q = np.concatenate([f[1] for f in self._frames], axis=1)
            r.frames_label = np.concatenate([f[2] for f in self._frames], axis=1)
        if self._bloch:
            r.bloch_z = np.concatenate([b[0] for b in self._bloch], axis=1)
            r.bloch_x = np.concatenate([b[1] for b in self._bloch], axis=1)
            r.bloch_y = np.concatenate([b[2] for b in self._bloch], axis=1)
            r.bloch_pbb = np.concatenate([b[3] for b in self._bloch], axis=1)
        return r


def gd_pulse(theta: float, phi: float) -> np.ndarray:
    """Intervention rotation on the (G, D) subspace.

    R = exp[-i (theta/2) (cos phi Sx + sin phi Sy)] with Sx = |D><G| + |G><D|
    and Sy = -i|D><G| + i|G><D|.  Committed convention: at the mid-flight
    state (Z, X, Y) = (0, 1, 0), theta = pi/2 with phi = pi/2 restores |G>
    and phi = 3pi/2 completes the jump to |D>.
    """
    sx = np.array([[0.0, 1.0], [1.0, 0.0]], dtype=complex)
    sy = np.array([[0.0, 1.0j], [-1.0j, 0.0]], dtype=complex)
    axis = math.cos(phi) * sx + math.sin(phi) * sy
    return math.cos(0.5 * theta) * np.eye(2) - 1j * math.sin(0.5 * theta) * axis


def score_pulse(psi_cols: np.ndarray, nf: int, theta: float, phi: float
                ) -> tuple[np.ndarray, np.ndarray]:
    """Apply the GD pulse to state columns and return (p_g, p_d) per column.

    Identity on B, F and on the cavity; scored from the true post-pulse
    populations.
    """
    r = gd_pulse(theta, phi)
    g = psi_cols[ATOM_G * nf:(ATOM_G + 1) * nf]
    d = psi_cols[ATOM_D * nf:(ATOM_D + 1) * nf]
    new_g = r[0, 0] * g + r[0, 1] * d
    new_d = r[1, 0] * g + r[1, 1] * d
    norm = (psi_cols.real**2 + psi_cols.imag**2).sum(axis=0)
    p_g = (new_g.real**2 + new_g.imag**2).sum(axis=0) / norm
    p_d = (new_d.real**2 + new_d.imag**2).sum(axis=0) / norm
    return p_g, p_d


@dataclass(frozen=True)
class ConditionalTomogram:
    """Ensemble-averaged conditional GD state versus no-click time."""

    grid: np.ndarray      # dt_catch values, us
    z: np.ndarray
    x: np.ndarray
    y: np.ndarray
    counts: np.ndarray    # N(dt): samples extending at least this far
    p_bb_sum: np.ndarray

    def valid(self) -> np.ndarray:
        """Bins where the normalization N - sum(P_BB) is positive."""
        return (self.counts - self.p_bb_sum) > 0


def assemble_tomogram(result: EnsembleResult, t_int: float) -> ConditionalTomogram:
    """Apply the ensemble normalization (Z,X,Y) = sums / (N - sum P_BB).

    Bins with a non-positive denominator are dropped (NaN), never clamped.
    """
    n = result.tomo_counts.astype(float)
    denom = n - result.tomo_pbb
    good = denom > 0
    with np.errstate(invalid="ignore", divide="ignore"):
        z = np.where(good, result.tomo_z / denom, np.nan)
        x = np.where(good, result.tomo_x / denom, np.nan)
        y = np.where(good, result.tomo_y / denom, np.nan)
    grid = np.arange(len(n)) * t_int
    return ConditionalTomogram(grid=grid, z=z, x=x, y=y,
                               counts=result.tomo_counts.copy(),
                               p_bb_sum=result.tomo_pbb.copy())


@dataclass(frozen=True)
class CatchSample:
    """One aligned no-click interval (kept for stream-level tests)."""

    t_click: float
    series: list
    terminated_by: str  # ReturnToB | ReachedLimit


@dataclass(frozen=True)
class ReverseOutcome:
    delta_t_catch: float
    p_g: float
    p_d: float
    n_trials: int
    p_g_err: float
    p_d_err: float


def pinned_params(p: SystemParams) -> SystemParams:
    """Freeze the atomic dynamics: calibration-style readout-only system."""
    return replace(disable_channels(p, {"all_imperfections"}),
                   omega_b0=0.0, omega_b1=0.0, omega_dg=0.0)


def pinned_record(p: SystemParams, atom: int, n_frames: int, seed: int,
                  dt: float = DEFAULT_DT, stream_base: int = 0,
                  n_traj: int = 16) -> np.ndarray:
    """Record frames (n_frames, 2) with the atom pinned in one state.

    Used for threshold calibration and for pointer-distribution fits.  The
    frames are split over a batch of trajectories (each loses its settle
    window), which is statistically equivalent and much faster than one long
    record.
    """
    per = int(math.ceil(n_frames / n_traj))
    scen = Scenario(mode="pinned", duration=(per + SETTLE_FRAMES) * p.t_int,
                    dt=dt, thresholds=Thresholds(1e9, -1e9, 1e9),
                    collect_frames=True, initial_atom=atom, batch_size=n_traj)
    ids = [stream_base + k for k in range(n_traj)]
    res = simulate_batch(pinned_params(p), scen, ids, seed)
    i = res.frames_i[SETTLE_FRAMES:, :].T.ravel()
    q = res.frames_q[SETTLE_FRAMES:, :].T.ravel()
    return np.column_stack([i, q])[:n_frames]


def simulate_batch(p: SystemParams, scen: Scenario, traj_ids: Sequence[int],
                   seed: int) -> EnsembleResult:
    """Advance one batch of trajectories and collect the scenario statistics."""
    nb = len(traj_ids)
    eng = get_engine(p, scen.dt)
    nf = p.n_fock
    t_int = p.t_int
    n_sub = int(round(t_int / scen.dt))
    if abs(n_sub * scen.dt - t_int) > 1e-9:
        raise ValueError(f"dt {scen.dt} does not divide t_int {t_int}")
    n_frames = int(round(scen.duration / t_int))
    n_on = None if scen.dt_on is None else int(round(scen.dt_on / t_int))
    n_catch = None if scen.dt_catch is None else int(round(scen.dt_catch / t_int))
    thresholds = scen.thresholds
    if thresholds is None:
        raise ValueError("scenario needs thresholds (calibrate first)")

    phase = complex(math.cos(demod_phase(p)), math.sin(demod_phase(p)))
    gain = 0.5 * p.kappa_filter
    scale = record_scale(p)
    dt = scen.dt

    psi = np.tile(basis_ket(p, scen.initial_atom)[:, None], (1, nb)).astype(complex)
    fi = np.zeros(nb)
    fq = np.zeros(nb)
    label = np.ones(nb, dtype=np.uint8)  # prepared in B
    cnt = np.zeros(nb, dtype=np.int64)
    run_len = np.zeros(nb, dtype=np.int64)
    run_valid = np.zeros(nb, dtype=bool)
    active = np.zeros(nb, dtype=bool)
    bin_next = np.zeros(nb, dtype=np.int64)

    noise = [RngStream(seed, tid).generator() for tid in traj_ids]
    blocks = NOISE_BLOCK_STEPS
    dz_block = np.empty((blocks, nb), dtype=complex)
    u_block = np.empty((blocks, nb))
    sigma = math.sqrt(0.5 * dt)

    def refill() -> None:
        for j, gen in enumerate(noise):
            g = gen.normal(0.0, sigma, size=(blocks, 2))
            dz_block[:, j] = g[:, 0] + 1j * g[:, 1]
            u_block[:, j] = gen.random(blocks)

    # refinement streams feed re-integrated (guard-rejected) steps only
    refine_gens = [np.random.default_rng(np.random.SeedSequence(
        [int(seed), int(tid), 2])) for tid in traj_ids]
    sigma_fine = math.sqrt(0.125 * dt)

    def refine_draw():
        dz4 = np.empty((4, nb), dtype=complex)
        u4 = np.empty((4, nb))
        for j, gen in enumerate(refine_gens):
            g = gen.normal(0.0, sigma_fine, size=(4, 2))
            dz4[:, j] = g[:, 0] + 1j * g[:, 1]
            u4[:, j] = gen.random(4)
        return dz4, u4

    # random-control schedules come from a child stream so the trajectory
    # noise is identical across scenario modes
    ctrl_next = None
    ctrl_gens = None
    if scen.mode == "random_control":
        spacing_frames = max(int(round(scen.control_spacing / t_int)), 1)
        ctrl_gens = [np.random.default_rng(np.random.SeedSequence(
            [int(seed), int(tid), 1])) for tid in traj_ids]
        ctrl_next = np.array([
            scen.settle_frames + g.integers(spacing_frames)
            for g in ctrl_gens], dtype=np.int64)

    pulses = scen.pulses if scen.pulses else ((scen.theta_i, scen.phi_i),)
    res = EnsembleResult(n_traj=nb)
    res.observed_time = nb * max(n_frames - scen.settle_frames, 0) * t_int
    if scen.mode in ("reverse", "random_control"):
        res.sum_pg = np.zeros(len(pulses))
        res.sum_pd = np.zeros(len(pulses))
        res.sum_pg2 = np.zeros(len(pulses))
        res.sum_pd2 = np.zeros(len(pulses))
    if scen.tomo_bins:
        res.tomo_counts = np.zeros(scen.tomo_bins, dtype=np.int64)
        res.tomo_z = np.zeros(scen.tomo_bins)
        res.tomo_x = np.zeros(scen.tomo_bins)
        res.tomo_y = np.zeros(scen.tomo_bins)
        res.tomo_pbb = np.zeros(scen.tomo_bins)
    if scen.checkpoint_frames:
        res.checkpoint_pops = np.zeros((len(scen.checkpoint_frames), 4))
        cp_index = {f: k for k, f in enumerate(scen.checkpoint_frames)}
    if scen.collect_frames:
        res.frames_i = np.zeros((n_frames, nb))
        res.frames_q = np.zeros((n_frames, nb))
        res.frames_label = np.zeros((n_frames, nb), dtype=np.uint8)
    if scen.collect_bloch:
        res.bloch_z = np.zeros((n_frames, nb))
        res.bloch_x = np.zeros((n_frames, nb))
        res.bloch_y = np.zeros((n_frames, nb))
        res.bloch_pbb = np.zeros((n_frames, nb))

    dwn: list[np.ndarray] = []
    dwb: list[np.ndarray] = []

    step_idx = 0
    for f in range(n_frames):
        psi_start = psi.copy()

        if scen.collect_bloch:
            zb, xb, yb, pbbb = eng.bloch_arrays(psi_start)
            res.bloch_z[f] = zb
            res.bloch_x[f] = xb
            res.bloch_y[f] = yb
            res.bloch_pbb[f] = pbbb

        if scen.checkpoint_frames and f in cp_index:
            abs2 = psi_start.real**2 + psi_start.imag**2
            res.checkpoint_pops[cp_index[f]] += (eng.block_ind @ abs2).sum(axis=1)

        # reverse scoring at the catch boundary: cnt (through frame f-1)
        # just reached the catch count
        if scen.mode == "reverse" and n_catch is not None and f >= scen.settle_frames:
            hit = np.nonzero(cnt == n_catch)[0] if n_catch > 0 else np.empty(0, int)
            hit = hit[label[hit] == 0] if hit.size else hit
            if hit.size:
                res.n_trials += hit.size
                cols = psi_start[:, hit]
                for kp, (th, ph_i) in enumerate(pulses):
                    pg, pd = score_pulse(cols, nf, th, ph_i)
                    res.sum_pg[kp] += float(pg.sum())
                    res.sum_pd[kp] += float(pd.sum())
                    res.sum_pg2[kp] += float((pg**2).sum())
                    res.sum_pd2[kp] += float((pd**2).sum())
        if scen.mode == "random_control":
            hit = np.nonzero(ctrl_next == f)[0]
            if hit.size:
                res.n_trials += hit.size
                cols = psi_start[:, hit]
                for kp, (th, ph_i) in enumerate(pulses):
                    pg, pd = score_pulse(cols, nf, th, ph_i)
                    res.sum_pg[kp] += float(pg.sum())
                    res.sum_pd[kp] += float(pd.sum())
                    res.sum_pg2[kp] += float((pg**2).sum())
                    res.sum_pd2[kp] += float((pd**2).sum())
                for j in hit:
                    ctrl_next[j] = f + 1 + ctrl_gens[j].integers(2 * spacing_frames - 1)

        if n_on is None:
            dg_mask: np.ndarray | bool = True
        else:
            dg_mask = (cnt < n_on).astype(float)

        sum_i = np.zeros(nb)
        sum_q = np.zeros(nb)
        for s in range(n_sub):
            k = step_idx % blocks
            if k == 0:
                refill()
            t = step_idx * dt
            psi, dzeta, fired = eng.step_refined(psi, t, dz_block[k], u_block[k],
                                                 dg_mask, refine_draw)
            dz_rot = phase * dzeta
            fi += -gain * (fi * dt - scale * dz_rot.real)
            fq += -gain * (fq * dt - scale * dz_rot.imag)
            sum_i += fi
            sum_q += fq
            step_idx += 1
        eng.check_truncation(psi)

        frame_i = sum_i / n_sub
        frame_q = sum_q / n_sub
        region_b = (frame_q >= thresholds.q_b) | (frame_i > thresholds.i_b)
        region_nb = (frame_q < thresholds.q_b) & (frame_i < thresholds.i_bbar)
        new_label = np.where(region_b, 1, np.where(region_nb, 0, label)).astype(np.uint8)

        if scen.collect_frames:
            res.frames_i[f] = frame_i
            res.frames_q[f] = frame_q
            res.frames_label[f] = new_label

        past_settle = f >= scen.settle_frames
        changed = new_label != label
        if past_settle:
            deex = changed & (label == 1)
            ex = changed & (label == 0)
            res.n_deex += int(deex.sum())
            res.n_ex += int(ex.sum())

            # dwells: complete constant-label runs only
            ended = changed & run_valid
            if ended.any():
                lengths = run_len[ended] * t_int
                was_b = label[ended] == 1
                if was_b.any():
                    dwb.append(lengths[was_b])
                if (~was_b).any():
                    dwn.append(lengths[~was_b])
            run_len = np.where(changed, 1, run_len + 1)
            run_valid = run_valid | changed

            if scen.tomo_bins:
                # active samples accumulate the boundary state at bin_next,
                # including the terminating boundary of an excitation frame
                acc = active & (bin_next < scen.tomo_bins)
                rows = np.nonzero(acc | deex)[0]
                if rows.size:
                    z, x, y, pbb = eng.bloch_arrays(psi_start[:, rows])
                    bins = np.where(deex[rows], 0, bin_next[rows])
                    np.add.at(res.tomo_counts, bins, 1)
                    np.add.at(res.tomo_z, bins, z)
                    np.add.at(res.tomo_x, bins, x)
                    np.add.at(res.tomo_y, bins, y)
                    np.add.at(res.tomo_pbb, bins, pbb)
                still = active & ~changed
                bin_next = np.where(still, bin_next + 1, bin_next)
                active = (active & ~ex) | deex
                bin_next = np.where(deex, 1, bin_next)
        else:
            run_len += 1

        label = new_label
        cnt = np.where(label == 0, cnt + 1, 0)

    res.notb_dwells = np.concatenate(dwn) if dwn else np.empty(0)
    res.b_dwells = np.concatenate(dwb) if dwb else np.empty(0)
    return res


def _batch_job(args) -> EnsembleResult:
    p, scen, ids, seed = args
    return simulate_batch(p, scen, ids, seed)


def run_ensemble(p: SystemParams, scen: Scenario, n_traj: int, seed: int,
                 workers: int = 1) -> EnsembleResult:
    """Run n_traj trajectories in fixed-size batches, merged in batch order.

    The batch partition depends only on (n_traj, batch_size), and every
    trajectory owns stream_id = its global index, so any worker count
    produces identical results.
    """
    ids = list(range(n_traj))
    chunks = [ids[k:k + scen.batch_size] for k in range(0, n_traj, scen.batch_size)]
    jobs = [(p, scen, chunk, seed) for chunk in chunks]
    acc = _Accumulator()
    if workers <= 1 or len(jobs) == 1:
        for job in jobs:
            acc.add(_batch_job(job))
    else:
        import multiprocessing as mp
        ctx = mp.get_context("fork")
        with ctx.Pool(processes=min(workers, len(jobs))) as pool:
            for r in pool.map(_batch_job, jobs, chunksize=1):
                acc.add(r)
    return acc.finish()


# Protocol-level entry points.

def run_free(p: SystemParams, thresholds: Thresholds, n_traj: int,
             duration: float, seed: int, workers: int = 1,
             collect_frames: bool = False, dt: float = DEFAULT_DT,
             batch_size: int = 128) -> EnsembleResult:
    """Unconditioned monitoring with all drives on."""
    scen = Scenario(mode="free", duration=duration, dt=dt,
                    thresholds=thresholds, collect_frames=collect_frames,
                    batch_size=batch_size)
    return run_ensemble(p, scen, n_traj, seed, workers)


def run_catch(p: SystemParams, protocol: ProtocolConfig, thresholds: Thresholds,
              n_traj: int, duration: float, seed: int, tomo_span: float = 14.0,
              workers: int = 1, dt: float = DEFAULT_DT, batch_size: int = 128,
              ) -> tuple[ConditionalTomogram, EnsembleResult]:
    """Catch protocol: conditional tomogram aligned on de-excitation clicks.

    protocol.dt_on sets when the DG drive is shut off within each no-click
    interval (None-equivalent: pass dt_on >= tomo span to keep it on).
    """
    n_bins = int(round(tomo_span / p.t_int))
    scen = Scenario(mode="catch", duration=duration, dt=dt,
                    thresholds=thresholds, dt_on=protocol.dt_on,
                    tomo_bins=n_bins, batch_size=batch_size)
    res = run_ensemble(p, scen, n_traj, seed, workers)
    if res.n_deex == 0:
        raise RuntimeError("no catch events collected within the time budget")
    return assemble_tomogram(res, p.t_int), res


def run_reverse(p: SystemParams, protocol: ProtocolConfig, thresholds: Thresholds,
                n_traj: int, duration: float, seed: int, workers: int = 1,
                dt: float = DEFAULT_DT, batch_size: int = 128) -> ReverseOutcome:
    """Reverse protocol: intervention pulse at the catch condition."""
    scen = Scenario(mode="reverse", duration=duration, dt=dt,
                    thresholds=thresholds, dt_on=protocol.dt_on,
                    dt_catch=protocol.dt_catch, theta_i=protocol.theta_i,
                    phi_i=protocol.phi_i, batch_size=batch_size)
    res = run_ensemble(p, scen, n_traj, seed, workers)
    if res.n_trials == 0:
        raise RuntimeError("no catch events collected within the time budget")
    return _outcome(res, protocol.dt_catch)


def run_control_random_intervention(p: SystemParams, protocol: ProtocolConfig,
                                    thresholds: Thresholds, n_traj: int,
                                    duration: float, seed: int,
                                    workers: int = 1, dt: float = DEFAULT_DT,
                                    batch_size: int = 128) -> ReverseOutcome:
    """Same pulse applied at random record times (unconditioned control)."""
    if n_traj <= 0:
        raise ValueError("n_trials/n_traj must be positive")
    scen = Scenario(mode="random_control", duration=duration, dt=dt,
                    thresholds=thresholds, theta_i=protocol.theta_i,
                    phi_i=protocol.phi_i, batch_size=batch_size)
    res = run_ensemble(p, scen, n_traj, seed, workers)
    if res.n_trials == 0:
        raise RuntimeError("no control interventions scheduled; extend duration")
    return _outcome(res, protocol.dt_catch)


def _outcome(res: EnsembleResult, dt_catch: float | None,
             pulse_index: int = 0) -> ReverseOutcome:
    n = res.n_trials
    pg = float(res.sum_pg[pulse_index]) / n
    pd = float(res.sum_pd[pulse_index]) / n
    vg = max(float(res.sum_pg2[pulse_index]) / n - pg * pg, 0.0)
    vd = max(float(res.sum_pd2[pulse_index]) / n - pd * pd, 0.0)
    return ReverseOutcome(delta_t_catch=dt_catch if dt_catch is not None else math.nan,
                          p_g=pg, p_d=pd, n_trials=n,
                          p_g_err=math.sqrt(vg / n), p_d_err=math.sqrt(vd / n))


def outcomes_per_pulse(res: EnsembleResult, dt_catch: float | None
                       ) -> list[ReverseOutcome]:
    return [_outcome(res, dt_catch, k) for k in range(len(res.sum_pg))]

"""Measurement-record pipeline: filtering, frames, labels, clicks, dwells.

The raw record increments dzeta from the trajectory engine pass through
  1. a fixed demodulation phase rotation, chosen so the B / not-B pointer
     separation lies along the I quadrature (as an experimenter would set
     the demodulation phase);
  2. the amplifier-chain low-pass, dI = -(kf/2)[I dt - (eta kappa/2)^(-1/2)
     Re dzeta] and likewise for Q with Im dzeta;
  3. integrate-and-dump over windows of t_int, one RecordFrame per window
     (the filtered quadratures are averaged over the window, which is what
     digitizing with a given integration time does);
  4. a two-point hysteretic IQ filter producing B / not-B labels, whose
     B -> not-B transitions are the "click" events.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass, replace
from typing import Iterable, Iterator, NamedTuple, Sequence

import numpy as np

from .params import SystemParams
from .theory import pointer_amplitudes

LABEL_B = "B"
LABEL_NOT_B = "NotB"

DEEXCITATION = "Deexcitation"
EXCITATION = "Excitation"


class Thresholds(NamedTuple):
    i_b: float      # I above this is B
    i_bbar: float   # I below this (with Q below q_b) is not-B
    q_b: float      # Q at or above this is B (higher-state excursions)


@dataclass
class FilterState:
    i_rec: float = 0.0
    q_rec: float = 0.0
    last_label: str = LABEL_B
    cnt: int = 0  # consecutive not-B frames; resets to 0 on every B


@dataclass(frozen=True)
class RecordFrame:
    t: float
    i_rec: float
    q_rec: float
    label: str | None = None


@dataclass(frozen=True)
class ClickEvent:
    t: float
    kind: str  # DEEXCITATION | EXCITATION


@dataclass(frozen=True)
class WaitingTimeHistogram:
    bin_edges: np.ndarray
    counts: np.ndarray
    which: str  # "NotB_dwell" | "B_dwell"

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def demod_phase(p: SystemParams) -> float:
    """Demodulation rotation putting the pointer separation on the I axis."""
    alpha_b, alpha_g = pointer_amplitudes(p)
    return -cmath.phase(alpha_b - alpha_g)


def record_scale(p: SystemParams) -> float:
    """Input scaling (eta kappa / 2)^(-1/2) of the quadrature filter."""
    return 1.0 / math.sqrt(0.5 * p.eta * p.kappa)


def filter_quadratures(state: FilterState, d_zeta: complex, p: SystemParams,
                       dt: float) -> FilterState:
    """One first-order update of the amplifier-chain filter."""
    gain = 0.5 * p.kappa_filter
    scale = record_scale(p)
    i_rec = state.i_rec - gain * (state.i_rec * dt - scale * d_zeta.real)
    q_rec = state.q_rec - gain * (state.q_rec * dt - scale * d_zeta.imag)
    return replace(state, i_rec=i_rec, q_rec=q_rec)


def pointer_means(p: SystemParams) -> tuple[complex, complex]:
    """Noiseless filtered-record means (I + iQ) for B and for not-B.

    The filter's DC gain maps a steady cavity amplitude alpha to
    sqrt(2) * e^(i phi_demod) * alpha in record units.
    """
    alpha_b, alpha_g = pointer_amplitudes(p)
    rot = cmath.exp(1j * demod_phase(p))
    return math.sqrt(2.0) * rot * alpha_b, math.sqrt(2.0) * rot * alpha_g


def frame_noise_sigma(p: SystemParams) -> float:
    """Ideal per-quadrature frame noise 1/sqrt(eta kappa t_int) (boxcar limit)."""
    return 1.0 / math.sqrt(p.eta * p.kappa * p.t_int)


def integrate_frames(filtered: Iterable[tuple[float, float, float]],
                     t_int: float, dt: float) -> Iterator[RecordFrame]:
    """Average the filtered quadrature stream over t_int windows.

    `filtered` yields (t, i_rec, q_rec) once per integrator step; one frame is
    emitted per window, stamped with the window end time.
    """
    n_sub = max(int(round(t_int / dt)), 1)
    acc_i = acc_q = 0.0
    k = 0
    for t, i_rec, q_rec in filtered:
        acc_i += i_rec
        acc_q += q_rec
        k += 1
        if k == n_sub:
            yield RecordFrame(t=t, i_rec=acc_i / n_sub, q_rec=acc_q / n_sub)
            acc_i = acc_q = 0.0
            k = 0


def hysteretic_label(frame: RecordFrame | tuple[float, float],
                     thresholds: Thresholds, prev_label: str) -> str:
    """Two-point hysteretic IQ filter.

    B when Q >= q_b or I > i_b; not-B when Q < q_b and I < i_bbar; the
    previous label inside the dead band.  The Q branch folds short-lived
    higher-excited-state excursions into the B label.
    """
    if isinstance(frame, RecordFrame):
        i_rec, q_rec = frame.i_rec, frame.q_rec
    else:
        i_rec, q_rec = frame
    if q_rec >= thresholds.q_b or i_rec > thresholds.i_b:
        return LABEL_B
    if i_rec < thresholds.i_bbar:
        return LABEL_NOT_B
    return prev_label


def label_frames(frames: Iterable[RecordFrame], thresholds: Thresholds,
                 initial_label: str = LABEL_B) -> Iterator[RecordFrame]:
    label = initial_label
    for f in frames:
        label = hysteretic_label(f, thresholds, label)
        yield replace(f, label=label)


def labels_array(frames_or_labels: Sequence) -> np.ndarray:
    """Sequence of RecordFrames or label strings -> uint8 array (1 = B)."""
    out = np.empty(len(frames_or_labels), dtype=np.uint8)
    for k, item in enumerate(frames_or_labels):
        lab = item.label if isinstance(item, RecordFrame) else item
        out[k] = 1 if lab == LABEL_B else 0
    return out


def detect_clicks(frames_or_labels: Sequence, t_int: float,
                  t0: float = 0.0) -> list[ClickEvent]:
    """Click events at every label change; times are frame-boundary times."""
    labs = labels_array(frames_or_labels)
    events: list[ClickEvent] = []
    for k in range(1, len(labs)):
        if labs[k] != labs[k - 1]:
            kind = DEEXCITATION if labs[k - 1] == 1 else EXCITATION
            events.append(ClickEvent(t=t0 + k * t_int, kind=kind))
    return events


def extract_dwells(frames_or_labels: Sequence, t_int: float
                   ) -> tuple[np.ndarray, np.ndarray]:
    """Complete dwell times (not-B, B) in us.

    A dwell is the span of a constant-label run; the leading and trailing
    partial runs are discarded.  The not-B dwell is the time between two
    de-excitation clicks minus the intervening B dwell, which is exactly the
    length of the not-B run.
    """
    labs = labels_array(frames_or_labels)
    notb: list[float] = []
    b: list[float] = []
    if len(labs) < 3:
        return np.array(notb), np.array(b)
    change = np.nonzero(np.diff(labs))[0] + 1  # indices where a new run starts
    for k in range(len(change) - 1):
        start, end = change[k], change[k + 1]
        dwell = (end - start) * t_int
        (b if labs[start] == 1 else notb).append(dwell)
    return np.array(notb), np.array(b)


def dwell_histograms(frames_or_labels: Sequence, t_int: float,
                     bin_edges: np.ndarray
                     ) -> tuple[WaitingTimeHistogram, WaitingTimeHistogram]:
    notb, b = extract_dwells(frames_or_labels, t_int)
    return (histogram_dwells(notb, bin_edges, "NotB_dwell"),
            histogram_dwells(b, bin_edges, "B_dwell"))


def histogram_dwells(dwells: np.ndarray, bin_edges: np.ndarray,
                     which: str) -> WaitingTimeHistogram:
    counts, edges = np.histogram(dwells, bins=bin_edges)
    return WaitingTimeHistogram(bin_edges=edges, counts=counts, which=which)


def calibrate_thresholds(p: SystemParams, seed: int,
                         n_frames: int = 3000, dt: float = 1e-3,
                         ) -> tuple[Thresholds, dict]:
    """Derive the IQ thresholds from pinned-state calibration records.

    Two records are simulated with the atomic dynamics frozen, the atom held
    in B and in G.  The I thresholds sit 1.5 standard deviations inside each
    pointer mean; the Q threshold sits 3 standard deviations above the
    B-record Q mean.  Numeric values are always derived, never hard coded.
    """
    from .protocol import pinned_record
    from .operators import ATOM_B, ATOM_G

    fb = pinned_record(p, ATOM_B, n_frames=n_frames, seed=seed, dt=dt)
    fg = pinned_record(p, ATOM_G, n_frames=n_frames, seed=seed + 1, dt=dt)
    mean_b, sig_b = fb[:, 0].mean(), fb[:, 0].std()
    mean_g, sig_g = fg[:, 0].mean(), fg[:, 0].std()
    if mean_b < mean_g:
        raise RuntimeError("pointer means inverted; check demodulation phase")
    qmean_b, qsig_b = fb[:, 1].mean(), fb[:, 1].std()
    thresholds = Thresholds(i_b=mean_b - 1.5 * sig_b,
                            i_bbar=mean_g + 1.5 * sig_g,
                            q_b=qmean_b + 3.0 * qsig_b)
    stats = {"mean_i_b": float(mean_b), "sigma_i_b": float(sig_b),
             "mean_i_notb": float(mean_g), "sigma_i_notb": float(sig_g),
             "mean_q_b": float(qmean_b), "sigma_q_b": float(qsig_b)}
    if not thresholds.i_bbar <= thresholds.i_b:
        raise RuntimeError(
            f"pointer distributions overlap too much for hysteresis: {stats}")
    return thresholds, stats

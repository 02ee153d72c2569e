"""Command-line entry point: simulation, analysis and reproduction targets.

Every run writes a manifest (config hash, seed, argument vector, tool
version, timestamps, output list) next to its outputs; identical manifest
inputs produce byte-identical numeric outputs.  All data files are UTF-8 CSV
or JSON with documented headers.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .engine import DEFAULT_DT, RngStream, NoiseBlocks, get_engine
from .fits import fit_bi_exponential, fit_bi_gaussian, fit_exponential, fit_tanh_sech
from .lindblad import lindblad_solve, pure_density
from .operators import ATOM_B, ATOM_G, basis_ket
from .params import (CONFIG_SCHEMA, ProtocolConfig, SystemParams,
                     disable_channels, dumps_config, load_config,
                     simulation_params, LEAKAGE_DRIVE_OFF)
from .protocol import (ConditionalTomogram, Scenario, assemble_tomogram,
                       pinned_record, run_catch, run_control_random_intervention,
                       run_ensemble, run_free, run_reverse)
from .record import (Thresholds, calibrate_thresholds, detect_clicks,
                     dwell_histograms, extract_dwells, filter_quadratures,
                     FilterState, hysteretic_label, demod_phase, LABEL_B,
                     LABEL_NOT_B)
from .theory import (click_detection_efficiency, coherent_regime_from_params,
                     discrimination_efficiency, incoherent_regime_from_params,
                     snr_dispersive, t_mid_coherent, t_mid_incoherent,
                     bloch_from_w, w_dg_coherent, w_dg_incoherent)


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def write_csv(path: Path, header: list[str], rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def write_json(path: Path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


class RunManifest:
    def __init__(self, args: argparse.Namespace, config_text: str):
        self.data = {
            "tool": "jumpflight",
            "version": __version__,
            "schema": CONFIG_SCHEMA,
            "subcommand": args.command,
            "argv": sys.argv[1:],
            "seed": args.seed,
            "workers": getattr(args, "workers", 1),
            "config_sha256": hashlib.sha256(config_text.encode()).hexdigest(),
            "start_time": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
            "outputs": [],
        }

    def add_output(self, path: Path) -> None:
        self.data["outputs"].append(str(path))

    def finish(self, out_dir: Path) -> None:
        self.data["end_time"] = time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
        write_json(out_dir / "manifest.json", self.data)


def _load(args) -> tuple[SystemParams, ProtocolConfig, str]:
    if args.config:
        text = Path(args.config).read_text(encoding="utf-8")
        p, proto = load_config(args.config)
    else:
        p, proto = simulation_params(), ProtocolConfig()
        text = dumps_config(p, proto)
    if getattr(args, "disable", None):
        p = disable_channels(p, set(args.disable.split(",")))
    return p, proto, text


def _thresholds(p: SystemParams, proto: ProtocolConfig, seed: int) -> Thresholds:
    if proto.thresholds is not None:
        return Thresholds(*proto.thresholds)
    thr, _ = calibrate_thresholds(p, seed=seed + 1_000_003)
    return thr


def cmd_theory(args, p, proto, out: Path, manifest):
    flavor = args.flavor
    if flavor == "coherent":
        regime = coherent_regime_from_params(p)
        t_mid = t_mid_coherent(regime)
        w_of_t = lambda t: w_dg_coherent(t, regime)
    else:
        regime = incoherent_regime_from_params(p)
        t_mid = t_mid_incoherent(regime)
        w_of_t = lambda t: w_dg_incoherent(t, regime).value
    snr = snr_dispersive(p)
    eta_disc = discrimination_efficiency(snr)
    eta_clk = click_detection_efficiency(p)
    rows = []
    for k in range(args.points):
        t = args.t_max * k / (args.points - 1) if args.points > 1 else 0.0
        w = w_of_t(t)
        b = bloch_from_w(w)
        rows.append((t, w, b.z, b.x, b.y, t_mid, snr, eta_disc, eta_clk))
    path = out / "theory.csv"
    write_csv(path, ["t_us", "w_dg", "z", "x", "y",
                     "dt_mid_us", "snr", "eta_disc", "eta_eff_clk"], rows)
    manifest.add_output(path)
    print(f"dt_mid = {t_mid:.4f} us, SNR = {snr:.4f}, eta_disc = {eta_disc:.4f}, "
          f"eta_eff_clk = {eta_clk:.4f}")
    return 0


def cmd_lindblad(args, p, proto, out: Path, manifest):
    grid = [args.duration_us * (k + 1) / args.points for k in range(args.points)]
    rho0 = pure_density(basis_ket(p, ATOM_B))
    sols = lindblad_solve(rho0, p, grid, dt=args.dt_us)
    rows = []
    for t, s in zip(grid, sols):
        pops = s.populations(p.n_fock)
        rows.append((t, pops[0], pops[1], pops[2], pops[3],
                     s.mean_photons(p.n_fock)))
    path = out / "lindblad.csv"
    write_csv(path, ["t_us", "p_g", "p_b", "p_d", "p_f", "n_photons"], rows)
    manifest.add_output(path)
    print(f"wrote {path}")
    return 0


def cmd_simulate(args, p, proto, out: Path, manifest):
    dt = args.dt_ns * 1e-3
    thr = _thresholds(p, proto, args.seed)
    scen = Scenario(mode="free", duration=args.duration_us, dt=dt,
                    thresholds=thr, collect_frames=True, collect_bloch=True,
                    batch_size=min(args.trajectories, 128))
    res = run_ensemble(p, scen, args.trajectories, args.seed, args.workers)
    rows = []
    n_frames = res.frames_i.shape[0]
    for j in range(res.frames_i.shape[1]):
        for f in range(n_frames):
            rows.append((round((f + 1) * p.t_int, 9), j,
                         res.frames_i[f, j], res.frames_q[f, j],
                         LABEL_B if res.frames_label[f, j] else LABEL_NOT_B,
                         res.bloch_z[f, j], res.bloch_x[f, j],
                         res.bloch_y[f, j], res.bloch_pbb[f, j]))
    path = out / "frames.csv"
    write_csv(path, ["t_us", "trajectory", "i_rec", "q_rec", "label",
                     "z", "x", "y", "p_bb"], rows)
    manifest.add_output(path)
    if args.save_increments:
        if args.trajectories != 1:
            raise SystemExit("--save-increments needs --trajectories 1")
        _save_increments(p, args, out, manifest, dt)
    print(f"wrote {path} ({res.n_deex} de-excitation clicks)")
    return 0


def _save_increments(p, args, out: Path, manifest, dt: float) -> None:
    eng = get_engine(p, dt)
    noise = NoiseBlocks(RngStream(args.seed, 0), dt)
    psi = basis_ket(p, ATOM_B)[:, None]
    n_steps = int(round(args.duration_us / dt))
    rows = []
    for i in range(n_steps):
        dz, u = noise.draw()
        psi, dzeta, fired = eng.step(psi, i * dt, np.array([dz]), np.array([u]))
        rows.append((round((i + 1) * dt, 9), dzeta[0].real, dzeta[0].imag))
    path = out / "increments.csv"
    write_csv(path, ["t_us", "re_dzeta", "im_dzeta"], rows)
    manifest.add_output(path)


def cmd_record(args, p, proto, out: Path, manifest):
    """Replay a stored increment stream through the filter/label pipeline."""
    dt = args.dt_ns * 1e-3
    thr = _thresholds(p, proto, args.seed)
    rot = complex(math.cos(demod_phase(p)), math.sin(demod_phase(p)))
    state = FilterState()
    n_sub = int(round(p.t_int / dt))
    frames = []
    acc_i = acc_q = 0.0
    k = 0
    t = 0.0
    with open(args.increments, "r", encoding="utf-8") as fh:
        header = fh.readline()
        if not header.startswith("t_us"):
            raise SystemExit("increments file must have a t_us,re_dzeta,im_dzeta header")
        for line in fh:
            t_s, re_s, im_s = line.strip().split(",")
            t = float(t_s)
            dz = rot * complex(float(re_s), float(im_s))
            state = filter_quadratures(state, dz, p, dt)
            acc_i += state.i_rec
            acc_q += state.q_rec
            k += 1
            if k == n_sub:
                frames.append((t, acc_i / n_sub, acc_q / n_sub))
                acc_i = acc_q = 0.0
                k = 0
    label = LABEL_B
    labeled = []
    for (tf, fi, fq) in frames:
        label = hysteretic_label((fi, fq), thr, label)
        labeled.append((tf, fi, fq, label))
    path = out / "frames.csv"
    write_csv(path, ["t_us", "i_rec", "q_rec", "label"], labeled)
    manifest.add_output(path)
    labels = [row[3] for row in labeled]
    clicks = detect_clicks(labels, p.t_int)
    cpath = out / "clicks.csv"
    write_csv(cpath, ["t_us", "kind"], [(c.t, c.kind) for c in clicks])
    manifest.add_output(cpath)
    edges = np.arange(0.0, 40.0 + p.t_int, 2 * p.t_int)
    h_notb, h_b = dwell_histograms(labels, p.t_int, edges)
    hpath = out / "dwell_histograms.csv"
    write_csv(hpath, ["bin_lo_us", "bin_hi_us", "count_notb", "count_b"],
              [(h_notb.bin_edges[i], h_notb.bin_edges[i + 1],
                int(h_notb.counts[i]), int(h_b.counts[i]))
               for i in range(len(h_notb.counts))])
    manifest.add_output(hpath)
    print(f"wrote {path}, {cpath}, {hpath}")
    return 0


def cmd_free(args, p, proto, out: Path, manifest):
    thr = _thresholds(p, proto, args.seed)
    res = run_free(p, thr, n_traj=args.trajectories, duration=args.duration_us,
                   seed=args.seed, workers=args.workers)
    dpath = out / "dwells.csv"
    rows = [(d, "NotB") for d in res.notb_dwells] + [(d, "B") for d in res.b_dwells]
    write_csv(dpath, ["dwell_us", "which"], rows)
    manifest.add_output(dpath)
    report = {
        "n_trajectories": res.n_traj,
        "observed_time_us": res.observed_time,
        "n_deexcitation_clicks": res.n_deex,
        "n_excitation_clicks": res.n_ex,
        "n_notb_dwells": int(len(res.notb_dwells)),
        "n_b_dwells": int(len(res.b_dwells)),
    }
    if len(res.notb_dwells) >= 100:
        fit = fit_bi_exponential(res.notb_dwells, origin=0.5 * p.t_int)
        report["notb_biexp"] = {
            "rate_fast_per_us": fit.rate_fast, "rate_slow_per_us": fit.rate_slow,
            "weight_fast": fit.weight_fast, "degenerate": fit.degenerate}
    if len(res.b_dwells) >= 5:
        tc, err = fit_exponential(res.b_dwells, origin=0.5 * p.t_int)
        report["b_dwell_time_constant_us"] = tc
        report["b_dwell_time_constant_err_us"] = err
    rpath = out / "free_report.json"
    write_json(rpath, report)
    manifest.add_output(rpath)
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0


def _write_tomogram(out: Path, manifest, tomo: ConditionalTomogram) -> Path:
    rows = [(tomo.grid[k], tomo.z[k], tomo.x[k], tomo.y[k],
             int(tomo.counts[k]), tomo.p_bb_sum[k])
            for k in range(len(tomo.grid))]
    path = out / "tomogram.csv"
    write_csv(path, ["dt_us", "z", "x", "y", "n", "p_bb"], rows)
    manifest.add_output(path)
    return path


def cmd_catch(args, p, proto, out: Path, manifest):
    thr = _thresholds(p, proto, args.seed)
    dt_on = args.dt_on_us if args.dt_on_us is not None else proto.dt_on
    protocol = ProtocolConfig(dt_on=dt_on, dt_off=args.dt_off_us, mode="Catch",
                              thresholds=thr)
    tomo, res = run_catch(p, protocol, thr, n_traj=args.trajectories,
                          duration=args.duration_us, seed=args.seed,
                          tomo_span=args.tomo_span_us, workers=args.workers)
    if args.events and res.n_deex < args.events:
        raise SystemExit(f"collected {res.n_deex} events < requested {args.events}; "
                         "increase --duration-us or --trajectories")
    path = _write_tomogram(out, manifest, tomo)
    print(f"wrote {path} ({res.n_deex} aligned samples)")
    return 0


def cmd_reverse(args, p, proto, out: Path, manifest):
    thr = _thresholds(p, proto, args.seed)
    protocol = ProtocolConfig(dt_on=args.dt_on_us, dt_off=args.dt_off_us,
                              theta_i=args.theta_i, phi_i=args.phi_i,
                              mode="Reverse", thresholds=thr)
    runner = run_control_random_intervention if args.control_random else run_reverse
    outcome = runner(p, protocol, thr, n_traj=args.trajectories,
                     duration=args.duration_us, seed=args.seed,
                     workers=args.workers)
    report = {"delta_t_catch_us": outcome.delta_t_catch,
              "p_g": outcome.p_g, "p_d": outcome.p_d,
              "n_trials": outcome.n_trials,
              "p_g_stderr": outcome.p_g_err, "p_d_stderr": outcome.p_d_err,
              "theta_i_rad": args.theta_i, "phi_i_rad": args.phi_i,
              "control_random": bool(args.control_random)}
    path = out / "reverse.json"
    write_json(path, report)
    manifest.add_output(path)
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0


def cmd_fit(args, p, proto, out: Path, manifest):
    report = {}
    if args.tomogram:
        data = np.genfromtxt(args.tomogram, delimiter=",", names=True)
        fit = fit_tanh_sech(data["dt_us"], data["z"], data["x"],
                            constrain_a_prime_zero=args.constrain_aprime_zero)
        report["tanh_sech"] = {
            "a": fit.a, "a_err": fit.a_err, "b": fit.b, "b_err": fit.b_err,
            "c": fit.c, "c_err": fit.c_err, "tau": fit.tau, "tau_err": fit.tau_err,
            "a_prime": fit.a_prime, "a_prime_err": fit.a_prime_err,
            "b_prime": fit.b_prime, "b_prime_err": fit.b_prime_err,
            "c_prime": fit.c_prime, "c_prime_err": fit.c_prime_err,
            "tau_prime": fit.tau_prime, "tau_prime_err": fit.tau_prime_err,
            "z_zero_crossing_us": fit.z_zero_crossing(),
        }
    if args.dwells:
        data = np.genfromtxt(args.dwells, delimiter=",", names=True,
                             dtype=None, encoding="utf-8")
        notb = np.array([row["dwell_us"] for row in data if row["which"] == "NotB"])
        b = np.array([row["dwell_us"] for row in data if row["which"] == "B"])
        if len(notb) >= 20:
            fit = fit_bi_exponential(notb, origin=0.5 * p.t_int)
            report["notb_biexp"] = {
                "rate_fast_per_us": fit.rate_fast, "rate_fast_err": fit.rate_fast_err,
                "rate_slow_per_us": fit.rate_slow, "rate_slow_err": fit.rate_slow_err,
                "weight_fast": fit.weight_fast, "degenerate": fit.degenerate}
        if len(b) >= 5:
            tc, err = fit_exponential(b, origin=0.5 * p.t_int)
            report["b_dwell"] = {"time_constant_us": tc, "err_us": err}
    if not report:
        raise SystemExit("nothing to fit: pass --tomogram and/or --dwells")
    path = out / "fit_report.json"
    write_json(path, report)
    manifest.add_output(path)
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0


# reproduction targets with their acceptance tolerances

def _check(name: str, value: float, target: float, tol: float,
           checks: list) -> None:
    ok = abs(value - target) <= tol
    checks.append({"name": name, "value": value, "target": target,
                   "tolerance": tol, "pass": bool(ok)})


def cmd_repro(args, p, proto, out: Path, manifest):
    from . import repro as repro_mod

    checks = repro_mod.run_target(args.target, p, out, manifest,
                                  seed=args.seed, workers=args.workers,
                                  scale=args.scale)
    report_path = out / f"repro_{args.target}.json"
    write_json(report_path, {"target": args.target, "checks": checks})
    manifest.add_output(report_path)
    n_fail = 0
    for c in checks:
        status = "PASS" if c["pass"] else "FAIL"
        if not c["pass"]:
            n_fail += 1
        print(f"[{status}] {c['name']}: value={c['value']:.6g} "
              f"target={c['target']:.6g} tol={c['tolerance']:.3g}")
    return 1 if n_fail else 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="jumpflight",
                                 description="Monitored three-level atom: "
                                 "trajectory simulation and analysis")
    ap.add_argument("--config", help="config file (defaults to built-in "
                    "simulation parameters)")
    ap.add_argument("--seed", type=int,
                    default=int(os.environ.get("JUMPFLIGHT_SEED", "1")))
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", default="out", help="output directory")
    sub = ap.add_subparsers(dest="command", required=True)

    s = sub.add_parser("theory", help="closed-form flight and SNR tables")
    s.add_argument("--flavor", choices=["coherent", "incoherent"],
                   default="incoherent")
    s.add_argument("--t-max", type=float, default=12.0)
    s.add_argument("--points", type=int, default=60)

    s = sub.add_parser("lindblad", help="unconditioned master-equation populations")
    s.add_argument("--duration-us", type=float, default=5.0)
    s.add_argument("--dt-us", type=float, default=1e-3)
    s.add_argument("--points", type=int, default=20)

    s = sub.add_parser("simulate", help="trajectory ensembles with record output")
    s.add_argument("--trajectories", type=int, default=1)
    s.add_argument("--duration-us", type=float, default=50.0)
    s.add_argument("--dt-ns", type=float, default=1.0)
    s.add_argument("--disable", help="comma list of imperfection channels to zero")
    s.add_argument("--save-increments", action="store_true")

    s = sub.add_parser("record", help="replay a stored increment stream")
    s.add_argument("--increments", required=True)
    s.add_argument("--dt-ns", type=float, default=1.0)

    s = sub.add_parser("free", help="free-running monitoring + dwell statistics")
    s.add_argument("--trajectories", type=int, default=32)
    s.add_argument("--duration-us", type=float, default=300.0)

    s = sub.add_parser("catch", help="catch protocol conditional tomogram")
    s.add_argument("--dt-on-us", type=float, default=None)
    s.add_argument("--dt-off-us", type=float, default=0.0)
    s.add_argument("--trajectories", type=int, default=48)
    s.add_argument("--duration-us", type=float, default=300.0)
    s.add_argument("--tomo-span-us", type=float, default=14.0)
    s.add_argument("--events", type=int, default=0)

    s = sub.add_parser("reverse", help="catch-and-reverse with intervention pulse")
    s.add_argument("--dt-on-us", type=float, default=3.9)
    s.add_argument("--dt-off-us", type=float, default=0.0)
    s.add_argument("--theta-i", type=float, default=0.5 * math.pi)
    s.add_argument("--phi-i", type=float, default=0.5 * math.pi)
    s.add_argument("--trajectories", type=int, default=48)
    s.add_argument("--duration-us", type=float, default=300.0)
    s.add_argument("--control-random", action="store_true")

    s = sub.add_parser("fit", help="tanh/sech, dwell and pointer fits")
    s.add_argument("--tomogram")
    s.add_argument("--dwells")
    s.add_argument("--constrain-aprime-zero", action="store_true")

    s = sub.add_parser("repro", help="reproduce a figure/table at desk scale")
    s.add_argument("--target", required=True,
                   choices=["fig2b", "fig3b", "fig3c", "fig4c",
                            "tableS3a", "tableS3b", "snr"])
    s.add_argument("--scale", type=float, default=1.0,
                   help="statistics multiplier (1.0 = acceptance scale)")
    return ap


COMMANDS = {
    "theory": cmd_theory,
    "lindblad": cmd_lindblad,
    "simulate": cmd_simulate,
    "record": cmd_record,
    "free": cmd_free,
    "catch": cmd_catch,
    "reverse": cmd_reverse,
    "fit": cmd_fit,
    "repro": cmd_repro,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    p, proto, config_text = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest = RunManifest(args, config_text)
    code = COMMANDS[args.command](args, p, proto, out, manifest)
    manifest.finish(out)
    return code


if __name__ == "__main__":
    sys.exit(main())

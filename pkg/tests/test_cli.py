import json
import math
from pathlib import Path

import numpy as np
import pytest

from jumpflight.cli import main
from jumpflight.fits import sech_model, tanh_model
from jumpflight.params import (ProtocolConfig, dumps_config,
                               simulation_params)


def run_cli(*argv):
    return main(list(argv))


def test_theory_csv(tmp_path):
    out = tmp_path / "o"
    assert run_cli("--out", str(out), "--seed", "2", "theory",
                   "--flavor", "incoherent", "--t-max", "10", "--points", "12") == 0
    data = np.genfromtxt(out / "theory.csv", delimiter=",", names=True)
    assert len(data) == 12
    assert np.allclose(data["dt_mid_us"], data["dt_mid_us"][0])
    assert data["snr"][0] == pytest.approx(4.329, abs=2e-3)
    assert data["z"][0] == -1.0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["subcommand"] == "theory"
    assert manifest["seed"] == 2
    assert str(out / "theory.csv") in manifest["outputs"]
    assert "config_sha256" in manifest and "end_time" in manifest


def test_config_file_round_trip(tmp_path):
    cfg = tmp_path / "params.cfg"
    cfg.write_text(dumps_config(simulation_params(), ProtocolConfig()))
    out = tmp_path / "o"
    assert run_cli("--config", str(cfg), "--out", str(out), "theory",
                   "--points", "5", "--t-max", "5") == 0


def test_lindblad_csv(tmp_path):
    out = tmp_path / "o"
    assert run_cli("--out", str(out), "lindblad", "--duration-us", "0.5",
                   "--points", "2") == 0
    data = np.genfromtxt(out / "lindblad.csv", delimiter=",", names=True)
    assert data["p_b"][0] > 0.8  # prepared in B
    total = data["p_g"] + data["p_b"] + data["p_d"] + data["p_f"]
    assert np.allclose(total, 1.0, atol=1e-6)


def test_fit_subcommand_tomogram(tmp_path):
    grid = np.arange(54) * 0.26
    z = tanh_model(grid, np.array([-0.07, 0.95, -2.27, 1.65]))
    x = sech_model(grid, np.array([-0.22, 0.91, -2.05, 1.76]))
    path = tmp_path / "tomo.csv"
    rows = ["dt_us,z,x,y,n,p_bb"]
    rows += [f"{float(t)!r},{float(zz)!r},{float(xx)!r},0.0,100,0.0"
             for t, zz, xx in zip(grid, z, x)]
    path.write_text("\n".join(rows) + "\n")
    out = tmp_path / "o"
    assert run_cli("--out", str(out), "fit", "--tomogram", str(path)) == 0
    report = json.loads((out / "fit_report.json").read_text())
    assert report["tanh_sech"]["tau"] == pytest.approx(1.65, abs=1e-5)
    assert report["tanh_sech"]["z_zero_crossing_us"] == pytest.approx(
        (math.atanh(0.07 / 0.95) + 2.27) * 1.65, abs=1e-4)


def test_fit_requires_input(tmp_path):
    with pytest.raises(SystemExit):
        run_cli("--out", str(tmp_path), "fit")


def test_unknown_repro_target(tmp_path):
    with pytest.raises(SystemExit):
        run_cli("--out", str(tmp_path), "repro", "--target", "figX")


def test_simulate_record_replay_roundtrip(tmp_path):
    """simulate --save-increments, then replay through the record pipeline."""
    out1 = tmp_path / "sim"
    assert run_cli("--out", str(out1), "--seed", "11", "simulate",
                   "--trajectories", "1", "--duration-us", "10.4",
                   "--save-increments") == 0
    frames = (out1 / "frames.csv").read_text().splitlines()
    assert frames[0] == "t_us,trajectory,i_rec,q_rec,label,z,x,y,p_bb"
    assert len(frames) == 1 + 40  # 10.4 us of 0.26 us frames
    labels = {line.split(",")[4] for line in frames[1:]}
    assert labels <= {"B", "NotB"}

    out2 = tmp_path / "replay"
    assert run_cli("--out", str(out2), "--seed", "11", "record",
                   "--increments", str(out1 / "increments.csv")) == 0
    replay = (out2 / "frames.csv").read_text().splitlines()
    assert len(replay) == 1 + 40
    # same filtered quadratures as the simulate-side pipeline
    sim_i = [float(l.split(",")[2]) for l in frames[1:]]
    rep_i = [float(l.split(",")[1]) for l in replay[1:]]
    assert np.allclose(sim_i, rep_i, atol=1e-9)
    assert (out2 / "clicks.csv").exists()
    assert (out2 / "dwell_histograms.csv").exists()


def test_simulate_byte_identical_reruns(tmp_path):
    argv = ["--seed", "7", "simulate", "--trajectories", "2",
            "--duration-us", "5.2"]
    out1, out2 = tmp_path / "a", tmp_path / "b"
    assert run_cli("--out", str(out1), *argv) == 0
    assert run_cli("--out", str(out2), *argv) == 0
    assert (out1 / "frames.csv").read_bytes() == (out2 / "frames.csv").read_bytes()

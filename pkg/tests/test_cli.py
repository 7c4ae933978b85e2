"""Command-line integration tests.

Fast paths call ``main(argv)`` in process and inspect captured output;
signal handling and the served replay protocol run as subprocesses.
The generated-specimen and analysis outputs are checked against the
same library calls the commands wrap, so the commands themselves stay
thin glue with an enforced exit-code contract.
"""

import math
import os
import signal
import socket
import subprocess
import sys

import numpy as np
import pytest

from portwin.checkpoint import load_checkpoint
from portwin.cli import main
from portwin.porous import (
    SphereSet,
    parse_sieve_curve,
    place_spheres,
    placement_region,
    sphere_counts,
)
from portwin.services import FIELD_BITS, protocol as P

SIEVE = "diameter_mm,mass_fraction\n8.0,0.5\n5.0,0.3\n3.0,0.2\n"

JOB = """\
schema: 1
grid:
  domain_min: [0.0, 0.0, 0.0]
  domain_max: [0.08, 0.04, 0.04]
  root_refine: [2, 1, 1]
  sub_refine: [2, 2, 2]
  block_size: [8, 8, 8]
  max_depth: 2
fluid:
  nu: 1.0e-6
  rho: 1000.0
  dt_max: 0.01
boundaries:
  inflow_velocity: 0.001
sim:
  workers: 0
  steps: 3
  initial_depth: 1
porous:
  sieve: {sieve}
  spheres: {spheres}
  solid_fraction: 0.3
  seed: 7
"""


@pytest.fixture()
def workdir(tmp_path):
    (tmp_path / "sieve.csv").write_text(SIEVE)
    (tmp_path / "job.yaml").write_text(JOB.format(
        sieve=tmp_path / "sieve.csv", spheres=tmp_path / "spheres.csv"))
    assert main(["generate", "--config", str(tmp_path / "job.yaml")]) == 0
    return tmp_path


def run_main(argv):
    return main([str(a) for a in argv])


class TestExitCodes:
    def test_no_subcommand(self, capsys):
        assert main([]) == 2
        capsys.readouterr()

    def test_unknown_subcommand(self, capsys):
        assert main(["frobnicate"]) == 2
        capsys.readouterr()

    def test_missing_required_argument(self, capsys):
        assert main(["analyze"]) == 2
        capsys.readouterr()

    def test_failures_exit_1_with_single_error_line(self, tmp_path, capsys):
        code = run_main(["analyze", "--snapshot", tmp_path / "nope.pwck",
                         "--points", tmp_path / "nope.csv", "--probe", "4",
                         "--out", tmp_path / "out.csv"])
        assert code == 1
        err = capsys.readouterr().err.strip().splitlines()
        assert len(err) == 1 and err[0].startswith("error: ")

    def test_bad_config_exits_1(self, tmp_path, capsys):
        cfg = tmp_path / "bad.yaml"
        cfg.write_text("schema: 1\nfluid: {viscosity: 2}\n")
        assert run_main(["run", "--config", cfg]) == 1
        err = capsys.readouterr().err.strip()
        assert "fluid.viscosity" in err and err.startswith("error: ")


class TestGenerate:
    def test_writes_expected_packing(self, workdir, capsys):
        assert run_main(["generate", "--config", workdir / "job.yaml"]) == 0
        out = capsys.readouterr().out
        assert "spheres=" in out and str(workdir / "spheres.csv") in out

        # the command is exactly this library pipeline
        curve = parse_sieve_curve(SIEVE)
        region = placement_region((0.0, 0.0, 0.0), (0.08, 0.04, 0.04), curve)
        volume = math.prod(region[a + 3] - region[a] for a in range(3))
        counts = sphere_counts(curve, volume, 0.3)
        expect = place_spheres(counts, curve, region, seed=7)
        assert (workdir / "spheres.csv").read_text() == expect.to_csv()

    def test_deterministic_per_seed(self, workdir, capsys):
        a, b = workdir / "a.csv", workdir / "b.csv"
        assert run_main(["generate", "--config", workdir / "job.yaml",
                         "--out", a]) == 0
        assert run_main(["generate", "--config", workdir / "job.yaml",
                         "--out", b]) == 0
        assert a.read_bytes() == b.read_bytes()
        assert run_main(["generate", "--config", workdir / "job.yaml",
                         "--out", b, "--seed", "8"]) == 0
        assert a.read_bytes() != b.read_bytes()
        capsys.readouterr()

    def test_requires_sieve_and_out(self, tmp_path, capsys):
        assert run_main(["generate"]) == 1
        assert "sieve" in capsys.readouterr().err
        (tmp_path / "s.csv").write_text(SIEVE)
        assert run_main(["generate", "--sieve", tmp_path / "s.csv"]) == 1
        assert "out" in capsys.readouterr().err


class TestRunAnalyze:
    def test_run_writes_checkpoint(self, workdir, capsys):
        ck = workdir / "state.pwck"
        assert run_main(["run", "--config", workdir / "job.yaml",
                         "--checkpoint", ck]) == 0
        out = capsys.readouterr().out
        assert f"checkpoint {ck}" in out
        assert "run complete steps=3" in out

        h, step, time, spheres = load_checkpoint(ck)
        assert step == 3 and time > 0.0
        assert len(spheres) == len(SphereSet.load_csv(workdir / "spheres.csv"))
        assert sorted(h.depth_index) == [0, 1]

    def test_worker_count_does_not_change_checkpoint(self, workdir, capsys):
        for workers, name in ((1, "w1.pwck"), (2, "w2.pwck")):
            assert run_main(["run", "--config", workdir / "job.yaml",
                             "--workers", workers, "--steps", "2",
                             "--checkpoint", workdir / name]) == 0
        capsys.readouterr()
        assert ((workdir / "w1.pwck").read_bytes()
                == (workdir / "w2.pwck").read_bytes())

    def test_analyze_reports_permeability(self, workdir, capsys):
        ck = workdir / "state.pwck"
        run_main(["run", "--config", workdir / "job.yaml", "--checkpoint", ck])
        pts = workdir / "pts.csv"
        pts.write_text("x,y,z\n0.03,0.02,0.02\n0.05,0.02,0.02\n")
        out_csv = workdir / "k.csv"
        capsys.readouterr()
        assert run_main(["analyze", "--snapshot", ck, "--points", pts,
                         "--probe", "8", "--out", out_csv]) == 0
        out = capsys.readouterr().out
        assert "probes=2" in out and "kx mean=" in out

        rows = out_csv.read_text().splitlines()
        assert rows[0] == "px,py,pz,kx,ky,kz,note"
        assert len(rows) == 1 + 2 + 2  # header, samples, mean, stddev
        kx = float(rows[1].split(",")[3])
        assert math.isfinite(kx) and kx > 0.0

    def test_analyze_matches_library_call(self, workdir, capsys):
        from portwin.analysis import export_csv, point_series
        ck = workdir / "state.pwck"
        run_main(["run", "--config", workdir / "job.yaml", "--checkpoint", ck])
        pts = workdir / "pts.csv"
        pts.write_text("0.04,0.02,0.02\n")
        got = workdir / "got.csv"
        run_main(["analyze", "--snapshot", ck, "--points", pts, "--probe", "6",
                  "--out", got, "--mu", "2.5e-3"])
        capsys.readouterr()

        h, _, _, _ = load_checkpoint(ck)
        edge = 6 * max(h.level_spacing(h.deepest_depth))
        series = point_series(h, [(0.04, 0.02, 0.02)], edge, 2.5e-3)
        want = workdir / "want.csv"
        export_csv(series, want)
        assert got.read_bytes() == want.read_bytes()

    def test_analyze_depth_not_stored(self, workdir, capsys):
        ck = workdir / "state.pwck"
        run_main(["run", "--config", workdir / "job.yaml", "--checkpoint", ck,
                  "--steps", "1"])
        pts = workdir / "pts.csv"
        pts.write_text("0.04,0.02,0.02\n")
        capsys.readouterr()
        assert run_main(["analyze", "--snapshot", ck, "--points", pts,
                         "--probe", "4", "--out", workdir / "k.csv",
                         "--depth", "2"]) == 1
        assert "depth 2" in capsys.readouterr().err

    def test_bad_points_file(self, workdir, capsys):
        ck = workdir / "state.pwck"
        run_main(["run", "--config", workdir / "job.yaml", "--checkpoint", ck,
                  "--steps", "1"])
        pts = workdir / "pts.csv"
        pts.write_text("0.01,0.02\n")
        capsys.readouterr()
        assert run_main(["analyze", "--snapshot", ck, "--points", pts,
                         "--probe", "4", "--out", workdir / "k.csv"]) == 1
        assert "three columns" in capsys.readouterr().err


def spawn(args, **kw):
    env = dict(os.environ, PORTWIN_NUMBA="0", PORTWIN_LOG="info")
    return subprocess.Popen(
        [sys.executable, "-m", "portwin.cli", *[str(a) for a in args]],
        stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True, env=env,
        **kw)


def read_port(proc, label: str) -> int:
    line = proc.stdout.readline().strip()
    assert line.startswith(f"listening {label} "), line
    return int(line.rsplit(":", 1)[1])


class TestProcess:
    def test_unknown_subcommand_process_exit(self):
        proc = spawn(["frobnicate"])
        proc.communicate(timeout=60)
        assert proc.returncode == 2

    def test_replay_serves_stored_state(self, workdir):
        ck = workdir / "state.pwck"
        assert run_main(["run", "--config", workdir / "job.yaml",
                         "--checkpoint", ck]) == 0
        proc = spawn(["replay", "--snapshot", ck, "--listen", "127.0.0.1:0"])
        try:
            port = read_port(proc, "tcp")
            sock = socket.create_connection(("127.0.0.1", port), timeout=10)
            reader = P.FrameReader()
            msgs = []
            while not msgs:
                msgs = [P.decode_message(t, pl)
                        for t, pl in reader.feed(sock.recv(1 << 20))]
            st = msgs[0]
            assert st.step == 3 and st.paused
            assert len(st.spheres) > 0

            sock.sendall(P.encode_window_request(P.WindowRequest(
                session=st.session, request=1,
                box=(0.0, 0.0, 0.0, 0.08, 0.04, 0.04),
                fields=FIELD_BITS["p"], max_bytes=4_000_000)))
            resp = None
            while resp is None:
                for t, pl in reader.feed(sock.recv(1 << 20)):
                    if t == P.T_WINDOW_RESPONSE:
                        resp = P.decode_window_response(pl)
            assert resp.step == 3 and resp.cell_count > 0
            payload = P.decompress_stream(resp.data)
            assert len(payload) == resp.cell_count * 4
            sock.close()
        finally:
            proc.send_signal(signal.SIGINT)
            out, err = proc.communicate(timeout=60)
        assert proc.returncode == 0, err

    def test_interrupt_flushes_checkpoint(self, workdir):
        ck = workdir / "live.pwck"
        proc = spawn(["run", "--config", workdir / "job.yaml",
                      "--steps", "100000", "--checkpoint", ck,
                      "--listen", "127.0.0.1:0"])
        read_port(proc, "tcp")
        # wait for the loop to be under way before interrupting
        while True:
            line = proc.stderr.readline()
            assert line, "run exited before stepping"
            if " step 2 " in line or line.startswith("INFO step 2 "):
                break
        proc.send_signal(signal.SIGINT)
        out, err = proc.communicate(timeout=120)
        assert proc.returncode == 0, err
        assert f"checkpoint {ck}" in out
        h, step, _, _ = load_checkpoint(ck)
        assert step >= 2
        assert "run complete" in out

    def test_log_env_silences_step_lines(self, workdir):
        env = dict(os.environ, PORTWIN_NUMBA="0", PORTWIN_LOG="error")
        proc = subprocess.Popen(
            [sys.executable, "-m", "portwin.cli", "run", "--config",
             str(workdir / "job.yaml"), "--steps", "2"],
            stdout=subprocess.PIPE, stderr=subprocess.PIPE, text=True, env=env)
        out, err = proc.communicate(timeout=120)
        assert proc.returncode == 0
        assert "step 1" not in err
        assert "run complete steps=2" in out


class TestPointsParsing:
    def test_header_and_comments_skipped(self, workdir, capsys):
        ck = workdir / "state.pwck"
        run_main(["run", "--config", workdir / "job.yaml", "--checkpoint", ck,
                  "--steps", "1"])
        pts = workdir / "pts.csv"
        pts.write_text("# probe centres\nx,y,z\n0.04,0.02,0.02\n\n")
        capsys.readouterr()
        assert run_main(["analyze", "--snapshot", ck, "--points", pts,
                         "--probe", "4", "--out", workdir / "k.csv"]) == 0
        assert "probes=1" in capsys.readouterr().out

    def test_empty_points_rejected(self, workdir, capsys):
        ck = workdir / "state.pwck"
        run_main(["run", "--config", workdir / "job.yaml", "--checkpoint", ck,
                  "--steps", "1"])
        pts = workdir / "pts.csv"
        pts.write_text("x,y,z\n")
        capsys.readouterr()
        assert run_main(["analyze", "--snapshot", ck, "--points", pts,
                         "--probe", "4", "--out", workdir / "k.csv"]) == 1
        assert "no probe points" in capsys.readouterr().err

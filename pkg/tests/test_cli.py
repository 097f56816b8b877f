import os
import re
import subprocess
import sys
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from acteuler import cli
from acteuler.cli import (ConfigError, ScenarioConfig, load_config,
                          resolve_config, run, verify)


def write_config(path, text):
    path.write_text(text)
    return str(path)


class TestLoadConfig:
    def test_parses_each_value_type(self, tmp_path):
        path = write_config(tmp_path / "run.cfg", """
            # channel at a coarse resolution
            scenario = channel
            n = 12          # trailing comment
            re = 2.5
            upwind = false
            slices = 0.5,1.5
        """)
        pairs = load_config(path)
        assert pairs == {"scenario": "channel", "n": 12, "re": 2.5,
                        "upwind": False, "slices": (0.5, 1.5)}

    def test_empty_tuple_value(self, tmp_path):
        path = write_config(tmp_path / "run.cfg", "slices =\n")
        assert load_config(path) == {"slices": ()}

    def test_unknown_key_reports_line_number(self, tmp_path):
        path = write_config(tmp_path / "run.cfg", "scenario = channel\nmu = 3\n")
        with pytest.raises(ConfigError, match=r"run\.cfg:2.*unknown key 'mu'"):
            load_config(path)

    def test_missing_separator_reports_line_number(self, tmp_path):
        path = write_config(tmp_path / "run.cfg", "\njust words\n")
        with pytest.raises(ConfigError, match=r"run\.cfg:2.*key = value"):
            load_config(path)

    def test_type_errors_name_the_key(self, tmp_path):
        cases = [("re = fast", "number for re"),
                 ("n = 3.5", "integer for n"),
                 ("upwind = maybe", "boolean for upwind"),
                 ("slices = 0.2;0.8", "comma-separated numbers")]
        for text, message in cases:
            path = write_config(tmp_path / "bad.cfg", text)
            with pytest.raises(ConfigError, match=message):
                load_config(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read config"):
            load_config(tmp_path / "absent.cfg")


class TestScenarioConfig:
    def test_channel_defaults(self):
        cfg = resolve_config({"scenario": "channel"}, {})
        assert (cfg.n, cfg.re, cfg.eu, cfg.ga) == (8, 0.0, 0.0, 1.0)
        assert cfg.slices == (1.0,)

    def test_airfoil_defaults(self):
        cfg = resolve_config({"scenario": "airfoil"}, {})
        assert (cfg.re, cfg.eu, cfg.ga) == (500.0, 15.0, 0.0)
        assert cfg.slices == (0.2, 0.5, 0.8)

    def test_explicit_values_override_scenario_defaults(self):
        cfg = resolve_config({"scenario": "airfoil", "eu": 0.0}, {})
        assert cfg.eu == 0.0

    def test_cli_overrides_beat_file_values(self):
        cfg = resolve_config({"scenario": "channel", "re": 1.0},
                             {"re": 2.0, "eu": None})
        assert cfg.re == 2.0
        assert cfg.eu == 0.0  # None override leaves the default in place

    def test_rejections(self):
        bad = [{"scenario": "lid"}, {"refine": -1}, {"linear": "cg"},
               {"scenario": "channel", "n": 1},
               {"scenario": "channel", "eps": 0.0},
               {"scenario": "channel", "alpha": -1.0}]
        for pairs in bad:
            with pytest.raises(ConfigError):
                resolve_config(pairs, {})

    def test_echo_lines_round_trip(self, tmp_path):
        cfg = resolve_config({"scenario": "cavity", "refine": 1,
                              "eu": 2.0, "upwind": False,
                              "out": "results"}, {})
        path = write_config(tmp_path / "echo.cfg",
                            "\n".join(cfg.echo_lines()) + "\n")
        assert resolve_config(load_config(path), {}) == cfg

    @settings(max_examples=25, deadline=None)
    @given(eu=st.floats(0.0, 100.0),
           eps=st.floats(1e-6, 1.0),
           re_=st.floats(0.0, 1e4),
           alpha=st.floats(0.01, 100.0))
    def test_echo_round_trip_preserves_floats(self, tmp_path_factory,
                                              eu, eps, re_, alpha):
        cfg = resolve_config({"scenario": "channel"}, {})
        cfg = replace(cfg, eu=eu, eps=eps, re=re_, alpha=alpha)
        tmp = tmp_path_factory.mktemp("echo")
        path = write_config(tmp / "t.cfg", "\n".join(cfg.echo_lines()) + "\n")
        back = resolve_config(load_config(path), {})
        assert (back.eu, back.eps, back.re, back.alpha) == (eu, eps, re_,
                                                            alpha)


class TestContinuationSchedule:
    def test_newtonian_stokes_is_single_stage(self):
        cfg = resolve_config({"scenario": "channel"}, {})
        schedule = cli._continuation_schedule(cfg)
        assert schedule == [{"eu": 0.0, "eps": 1e-3, "re": 0.0}]

    def test_activated_target_gets_newtonian_warm_start(self):
        cfg = resolve_config({"scenario": "channel", "eu": 15.0}, {})
        schedule = cli._continuation_schedule(cfg)
        assert schedule[0] == {"eu": 0.0, "eps": 1e-3, "re": 0.0}
        assert schedule[-1] == {"eu": 15.0, "eps": 1e-3, "re": 0.0}
        eps = [s["eps"] for s in schedule[1:]]
        assert eps == sorted(eps, reverse=True)
        assert all(s["eu"] == 15.0 for s in schedule[1:])

    def test_inertia_ramp_comes_last(self):
        cfg = resolve_config({"scenario": "cavity"}, {})  # re = 100, eu = 0
        schedule = cli._continuation_schedule(cfg)
        res = [s["re"] for s in schedule]
        assert res[0] == 0.0 and res[-1] == 100.0
        assert res == sorted(res)

    def test_inertia_ramp_runs_before_the_sharp_eps_tail(self):
        cfg = resolve_config({"scenario": "airfoil"}, {})
        schedule = cli._continuation_schedule(cfg)
        assert schedule[0] == {"eu": 0.0, "eps": 1e-3, "re": 0.0}
        assert schedule[-1] == {"eu": 15.0, "eps": 1e-3, "re": 500.0}
        sharp = [s for s in schedule if s["eps"] < cli.EPS_SWITCH][1:]
        assert all(s["re"] == 500.0 for s in sharp)
        ramp = [s["re"] for s in schedule if s["eps"] == cli.EPS_SWITCH]
        assert ramp == [0.0, 50.0, 125.0, 250.0, 500.0]

    def test_explicit_ladders_are_used_verbatim(self):
        cfg = resolve_config({"scenario": "channel", "eu": 15.0,
                              "re": 10.0,
                              "eps_schedule": (0.5,),
                              "re_schedule": (5.0,)}, {})
        schedule = cli._continuation_schedule(cfg)
        assert {"eu": 15.0, "eps": 0.5, "re": 0.0} in schedule
        assert {"eu": 15.0, "eps": 0.5, "re": 5.0} in schedule
        assert {"eu": 15.0, "eps": 0.5, "re": 10.0} in schedule
        assert schedule[-1] == {"eu": 15.0, "eps": 1e-3, "re": 10.0}

    def test_every_stage_is_a_complete_parameter_set(self):
        cfg = resolve_config({"scenario": "airfoil"}, {})
        for stage in cli._continuation_schedule(cfg):
            assert set(stage) == {"eu", "eps", "re"}


def run_quietly(cfg):
    lines = []
    manifest = run(cfg, echo=lines.append)
    return manifest, lines


@pytest.fixture(scope="module")
def manifest(tmp_path_factory):
    out = tmp_path_factory.mktemp("channel")
    cfg = resolve_config({"scenario": "channel", "out": str(out)}, {})
    m, lines = run_quietly(cfg)
    return m, lines, out


class TestRunChannel:
    def test_outputs_exist(self, manifest):
        m, _, out = manifest
        names = sorted(os.path.basename(p) for p in m["outputs"])
        assert names == ["channel_0_0.vtk", "channel_0_0_scatter.csv",
                         "channel_0_0_slice1.csv"]
        for p in m["outputs"]:
            assert os.path.exists(p)
        assert os.path.exists(m["manifest_path"])
        assert not any(f.endswith(".tmp") for f in os.listdir(out))

    def test_reports_problem_size_and_convergence(self, manifest):
        m, lines, _ = manifest
        assert m["cells"] == 128
        assert m["dofs"] == 3 * 128 + 2 * m["facets"]
        assert m["newton_iterations"] == [1]
        assert m["final_residual"] < 1e-8
        assert any("1 continuation stages" in line for line in lines)

    def test_manifest_round_trips_as_config(self, manifest, tmp_path):
        m, _, out = manifest
        cfg = resolve_config(load_config(m["manifest_path"]), {})
        rerun = replace(cfg, out=str(tmp_path / "rerun"))
        m2, _ = run_quietly(rerun)
        for a, b in zip(sorted(m["outputs"]), sorted(m2["outputs"])):
            assert os.path.basename(a) == os.path.basename(b)
            with open(a, "rb") as fa, open(b, "rb") as fb:
                assert fa.read() == fb.read(), os.path.basename(a)

    def test_vtk_structure(self, manifest):
        m, _, _ = manifest
        vtk = next(p for p in m["outputs"] if p.endswith(".vtk"))
        text = open(vtk).read()
        assert text.startswith("# vtk DataFile Version 2.0")
        assert "POINTS 81 double" in text
        assert "CELL_DATA 128" in text


class TestRunOtherScenarios:
    def test_manufactured_stokes_writes_no_slices(self, tmp_path):
        cfg = resolve_config({"scenario": "manufactured-stokes", "n": 8,
                              "out": str(tmp_path)}, {})
        m, _ = run_quietly(cfg)
        names = sorted(os.path.basename(p) for p in m["outputs"])
        assert names == ["manufactured-stokes_0_0.vtk",
                         "manufactured-stokes_0_0_scatter.csv"]
        assert m["final_residual"] < 1e-8

    def test_airfoil_stokes_slices_skip_the_body(self, tmp_path):
        # eu = re = 0 collapses the continuation to one Newtonian stage,
        # keeping this an import + single-solve smoke test
        cfg = resolve_config({"scenario": "airfoil", "eu": 0.0, "re": 0.0,
                              "out": str(tmp_path)}, {})
        m, _ = run_quietly(cfg)
        assert m["cells"] == 8808
        assert m["newton_iterations"] == [1]
        for station, absent in ((0.2, True), (0.5, True), (0.8, True)):
            path = os.path.join(str(tmp_path),
                                f"airfoil_0_0_slice{station:g}.csv")
            rows = open(path).read().strip().splitlines()
            assert rows[0].startswith("y,")
            n_rows = len(rows) - 1
            assert (n_rows < 400) == absent, station
            assert n_rows > 350


class TestVerify:
    def test_unknown_suite_rejected(self):
        with pytest.raises(ConfigError, match="unknown suite"):
            verify("spelling")

    def test_fem_suite_line_format(self):
        lines = []
        ok = verify("fem", echo=lines.append)
        assert ok
        pattern = re.compile(
            r"^PASS fem\.[a-z0-9_]+ value=[-0-9.e+]+ tol=[-0-9.e+]+$")
        assert lines and all(pattern.match(line) for line in lines)

    def test_constitutive_suite_passes(self):
        lines = []
        assert verify("constitutive", echo=lines.append)
        assert all(line.startswith("PASS") for line in lines)

    def test_convergence_suite_accepts_precomputed_report(
            self, manufactured_stokes_report):
        checks = cli._convergence_suite(manufactured_stokes_report)
        assert {c.name for c in checks} == {
            "order_velocity_l2", "order_velocity_dg", "order_stress_l2",
            "order_pressure_l2"}
        assert all(c.passed for c in checks)

    def test_channel_oracle_suite_accepts_precomputed_reports(
            self, channel_reports):
        checks = cli._channel_oracle_suite(channel_reports)
        assert all(c.passed for c in checks), [c.name for c in checks]
        names = {c.name for c in checks}
        assert "newtonian_parabola_error" in names
        assert "velocity_order_eu15" in names


class TestMainExitCodes:
    def test_bad_config_file_exits_2(self, tmp_path, capsys):
        path = write_config(tmp_path / "bad.cfg", "viscosity = 3\n")
        assert cli.main(["run", path]) == 2
        assert "unknown key" in capsys.readouterr().err

    def test_unknown_scenario_flag_is_an_argparse_error(self):
        with pytest.raises(SystemExit) as exc:
            cli.main(["run", "--scenario", "pipe"])
        assert exc.value.code == 2

    def test_unreadable_mesh_exits_4(self, tmp_path, capsys):
        assert cli.main(["run", "--scenario", "airfoil",
                         "--mesh", str(tmp_path / "missing.msh")]) == 4
        assert "error" in capsys.readouterr().err

    def test_channel_run_exits_0(self, tmp_path, capsys):
        code = cli.main(["run", "--scenario", "channel",
                         "--out", str(tmp_path)])
        assert code == 0
        assert "wrote 3 output files" in capsys.readouterr().out

    def test_verify_suite_exits_0(self, capsys):
        assert cli.main(["verify", "fem"]) == 0
        out = capsys.readouterr().out
        assert "PASS fem." in out

    def test_module_entry_point(self, tmp_path):
        proc = subprocess.run(
            [sys.executable, "-m", "acteuler.cli", "run",
             "--scenario", "channel", "--out", str(tmp_path)],
            capture_output=True, text=True)
        assert proc.returncode == 0, proc.stderr
        assert "wrote 3 output files" in proc.stdout


class TestDeterminism:
    def test_repeated_runs_are_byte_identical(self, tmp_path):
        outs = []
        for name in ("first", "second"):
            cfg = resolve_config({"scenario": "channel", "n": 4,
                                  "out": str(tmp_path / name)}, {})
            m, _ = run_quietly(cfg)
            outs.append(sorted(m["outputs"]))
        for a, b in zip(*outs):
            with open(a, "rb") as fa, open(b, "rb") as fb:
                assert fa.read() == fb.read(), os.path.basename(a)

import io
import json
import math

import pytest

from ptwalk.cli import EXIT_NONCONVERGED, EXIT_OK, EXIT_USAGE, UsageError, main, parse_angle, parse_config, run


def body(text):
    return [line for line in text.splitlines() if not line.startswith("#")]


def header(text):
    return [line for line in text.splitlines() if line.startswith("#")]


class TestParse:
    @pytest.mark.parametrize("text,value", [
        ("pi", math.pi), ("-pi/2", -math.pi / 2), ("2pi/3", 2 * math.pi / 3), ("0.5*pi", math.pi / 2),
        ("1.25", 1.25), (0.3, 0.3),
    ])
    def test_angles(self, text, value):
        assert parse_angle(text) == pytest.approx(value)

    def test_spectrum_config(self):
        cfg = parse_config(["spectrum", "--va", "0.75", "--vb", "0.25", "--gamma", "0.3"])
        assert (cfg.command, cfg.va, cfg.vb, cfg.gamma) == ("spectrum", 0.75, 0.25, 0.3)
        assert cfg.n == 41 and cfg.boundary == "open" and cfg.tol == 1e-4 and cfg.dt is None

    def test_meandisp_config(self):
        cfg = parse_config(["meandisp", "--va", "0.25", "--vb", "0.75", "--gamma", "0.5", "--theta", "0", "--phi", "0"])
        spec = cfg.lattice()
        assert (spec.v_a, spec.v_b, spec.gamma, cfg.theta, cfg.phi) == (0.25, 0.75, 0.5, 0.0, 0.0)

    def test_ratio_default(self):
        spec = parse_config(["phase", "--va", "0.3"]).lattice()
        assert spec.v_b == pytest.approx(0.7)

    def test_command_defaults(self):
        cfg = parse_config(["sweep-nonlinear"])
        assert (cfg.n, cfg.va_count, cfg.gamma_count, cfg.eta) == (21, 21, 21, 0.01)

    def test_config_file_under_flags(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text(json.dumps({"gamma": 0.8, "n": 11, "theta": "pi/2"}))
        cfg = parse_config(["meandisp", "--config", str(path), "--n", "15"])
        assert (cfg.gamma, cfg.n, cfg.theta) == (0.8, 15, pytest.approx(math.pi / 2))

    @pytest.mark.parametrize("argv,field", [
        (["meandisp", "--theta", "4.0"], "theta"),
        (["meandisp", "--n", "40"], "n"),
        (["meandisp", "--gamma", "0"], "gamma"),
        (["meandisp", "--va", "1.5"], "va"),
        (["meandisp", "--format", "xml"], "format"),
        (["sweep-coupling", "--va-count", "1"], "va_count"),
        (["sweep-gamma-map", "--gamma-min", "0.01"], "gamma_min"),
        (["sweep-coupling", "--va-min", "0.8", "--va-max", "0.2"], "va_min"),
        (["evolve", "--dt", "-1"], "lattice"),
        (["meandisp", "--n", "abc"], "n"),
        (["meandisp", "--bogus", "1"], "args"),
        (["frobnicate"], "args"),
    ])
    def test_usage_errors(self, argv, field):
        with pytest.raises(UsageError) as info:
            parse_config(argv)
        assert info.value.field == field
        assert field in str(info.value)

    def test_unknown_config_key(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text(json.dumps({"colour": "red"}))
        with pytest.raises(UsageError, match="colour"):
            parse_config(["phase", "--config", str(path)])


class TestRun:
    def _run(self, argv):
        out, err = io.StringIO(), io.StringIO()
        code = run(parse_config(argv), out, err)
        return code, out.getvalue(), err.getvalue()

    def test_spectrum(self):
        code, out, err = self._run(["spectrum", "--va", "0.75", "--vb", "0.25", "--gamma", "0.3", "--n-k", "4"])
        assert code == EXIT_OK
        assert '# command: "spectrum"' in header(out)
        assert '# phase: "PTSymmetric"' in header(out)
        rows = body(out)
        assert rows[0] == "k,re_lambda,im_lambda" and len(rows) == 5
        assert rows[3].split(",")[1] == "0.4"
        assert err.count("\n") == 1 and err.startswith("spectrum: 4 rows")

    def test_header_records_config(self):
        _, out, _ = self._run(["phase", "--va", "0.5", "--gamma", "0.1"])
        keys = {line[2:].split(":")[0] for line in header(out)}
        assert {"ptwalk", "command", "va", "vb", "gamma", "n", "boundary", "tol", "dt", "rel_tol"} <= keys
        assert body(out)[1].split(",")[5] == "PTBroken"

    def test_meandisp(self):
        code, out, _ = self._run(["meandisp", "--va", "0.25", "--vb", "0.75", "--gamma", "0.5", "--n", "21"])
        rows = body(out)
        assert code == EXIT_OK
        assert rows[0].startswith("v_a,v_b,gamma,theta,phi,eta,mean_disp,tail,converged,phase,flag")
        values = dict(zip(rows[0].split(","), rows[1].split(",")))
        assert float(values["mean_disp"]) == pytest.approx(1.0, abs=0.05)
        assert values["converged"] == "true" and float(values["analytic"]) == 1.0

    def test_evolve_intensity(self):
        code, out, _ = self._run(["evolve", "--va", "0.75", "--gamma", "0.5", "--n", "7", "--t-max", "1"])
        rows = body(out)
        assert code == EXIT_OK and rows[0] == "t,cell,sublattice,intensity"
        assert rows[1:15].count("0.0,0,A,1.0") == 1
        assert rows[1] == "0.0,-3,A,0.0"

    def test_json(self):
        code, out, _ = self._run(["phase", "--va", "0.75", "--vb", "0.25", "--gamma", "0.3", "--format", "json"])
        doc = json.loads(out)
        assert code == EXIT_OK
        assert doc["config"]["command"] == "phase" and doc["rows"][0]["phase"] == "PTSymmetric"
        assert doc["summary"]["failures"] == 0

    def test_strict_nonconvergence(self):
        argv = ["meandisp", "--va", "0.25", "--gamma", "0.5", "--n", "11", "--t-max", "1"]
        assert self._run(argv)[0] == EXIT_OK
        assert self._run(argv + ["--strict"])[0] == EXIT_NONCONVERGED

    def test_sweep_files(self, tmp_path):
        out = tmp_path / "step.csv"
        argv = ["sweep-coupling", "--va-count", "3", "--va-min", "0.2", "--va-max", "0.8", "--n", "11",
                "--blochs", "0,0", "--out", str(out)]
        code, stdout, err = self._run(argv)
        assert code == EXIT_OK and stdout == ""
        text = out.read_text()
        assert len(body(text)) == 4
        summary = json.loads((tmp_path / "step.csv.summary.json").read_text())
        assert summary["rows"] == 3 and "wall_time_s" in summary
        assert str(out) in err
        self._run(argv)
        assert out.read_text() == text

    def test_unwritable_output(self, tmp_path, capsys):
        code = main(["phase", "--out", str(tmp_path / "missing" / "x.csv")])
        assert code == 1
        assert "missing" in capsys.readouterr().err


def test_main_usage_exit(capsys):
    assert main(["meandisp", "--theta", "4.0"]) == EXIT_USAGE
    assert "theta" in capsys.readouterr().err


def test_main_ok(capsys):
    assert main(["phase", "--va", "0.75", "--vb", "0.25", "--gamma", "1.5"]) == EXIT_OK
    assert "FullyBroken" in capsys.readouterr().out

import io
import subprocess
import sys

import numpy as np
import pytest

from qwlab import __version__
from qwlab import cli
from qwlab.cli import COMMANDS, PARAMS, RunConfig, ValidationError, parse_config_text, run, validate

HEADER_LINES = 4


def invoke(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = run(list(argv), stdout=out, stderr=err)
    return code, out.getvalue(), err.getvalue()


def body(text):
    lines = text.splitlines(keepends=True)
    assert all(line.startswith("#") for line in lines[:HEADER_LINES])
    return "".join(lines[HEADER_LINES:])


DETERMINISM_CASES = [
    ("walk", "evolve", "--preset", "hadamard1d", "--steps", "5"),
    ("walk", "decompose", "--layers", "3", "--seed", "11"),
    ("fermi", "jw", "--modes", "3", "--seed", "5"),
    ("fermi", "localize", "--seed", "2"),
    ("eq", "chain", "--spins", "5", "--seed", "42", "--T", "20", "--samples", "21"),
    ("eq", "bounds", "--spins", "4", "--seed", "3", "--instances", "4"),
    ("eq", "slow", "--qubits", "7", "--seed", "1", "--K", "5"),
    ("eq", "toy", "--seed", "9", "--states", "3"),
]


class TestDeterminism:
    @pytest.mark.parametrize("argv", DETERMINISM_CASES, ids=lambda a: " ".join(a[:2]))
    def test_byte_identical(self, argv):
        first, second = invoke(*argv), invoke(*argv)
        assert first[0] == 0 and second[0] == 0
        assert body(first[1]).encode() == body(second[1]).encode()

    def test_seed_changes_output(self):
        _, a, _ = invoke("eq", "deff", "--spins", "4", "--seed", "1")
        _, b, _ = invoke("eq", "deff", "--spins", "4", "--seed", "2")
        assert body(a) != body(b)

    def test_subprocess_matches_in_process(self, tmp_path):
        argv = ["eq", "gaps", "--spins", "4", "--seed", "8", "--eps", "0.1,0.5"]
        proc = subprocess.run([sys.executable, "-m", "qwlab", *argv], capture_output=True, text=True, check=True)
        assert proc.stdout == invoke(*argv)[1]


class TestHeader:
    def test_comment_lines(self):
        _, text, _ = invoke("eq", "deff", "--spins", "3", "--seed", "4")
        lines = text.splitlines()
        assert lines[0] == f"# qwlab {__version__}"
        assert lines[1] == "# command: eq deff"
        assert lines[2] == "# config: seed=4;spins=3"
        assert lines[3] == "# seed: 4"

    def test_defaults_are_echoed(self):
        _, text, _ = invoke("fermi", "vacuum")
        assert "# config: cutoff=1;mass=0.5;sites=64;spacing=0.1" in text
        assert "# seed: none" in text


class TestOutputs:
    def test_converge_slope_line(self):
        code, text, _ = invoke("walk", "converge", "--preset", "dirac1d", "--mass", "0.5", "--cutoff", "1.0", "--t", "1.0")
        lines = body(text).splitlines()
        assert code == 0 and lines[0] == "a,error" and len(lines) == 1 + 6 + 1
        name, slope = lines[-1].split(",")
        assert name == "slope" and float(slope) == pytest.approx(1.0, abs=0.15)

    def test_weyl_doublers(self):
        _, text, _ = invoke("walk", "doublers", "--preset", "weyl3d_right")
        assert len(body(text).splitlines()) == 1 + 8

    def test_chain_columns(self):
        _, text, _ = invoke("eq", "chain", "--spins", "7", "--seed", "42", "--T", "100", "--samples", "11")
        lines = body(text).splitlines()
        assert lines[0] == "t,expectation,time_average" and len(lines) == 12
        avg = {line.split(",")[2] for line in lines[1:]}
        assert len(avg) == 1

    def test_pauli_lines_parse(self):
        from qwlab.fermions import PauliSum

        _, text, _ = invoke("fermi", "jw", "--modes", "3", "--seed", "5")
        ps = PauliSum.from_lines(body(text).splitlines())
        assert ps.is_hermitian() and ps.support() <= {0, 1, 2}

    def test_vacuum_csv(self):
        _, text, _ = invoke("fermi", "vacuum", "--sites", "16", "--cutoff", "31.4159")
        lines = body(text).splitlines()
        assert lines[0] == "p,lambda_plus_re,lambda_plus_im,overlap"
        assert lines[-1].startswith("distance,")

    def test_out_file(self, tmp_path):
        path = tmp_path / "run.csv"
        code, stdout, _ = invoke("walk", "spectrum", "--preset", "dirac1d", "--extent", "8", "--out", str(path))
        assert code == 0 and stdout == ""
        data = path.read_bytes()
        assert data.startswith(b"# qwlab") and b"\r\n" not in data

    @pytest.mark.parametrize("group,command", sorted(COMMANDS))
    def test_every_command_has_help(self, group, command):
        with pytest.raises(SystemExit) as exc:
            cli.build_parser().parse_args([group, command, "--help"])
        assert exc.value.code == 0


class TestExitCodes:
    @pytest.mark.parametrize(
        "argv,field",
        [
            (("walk", "evolve", "--extent", "7"), "extent"),
            (("eq", "chain", "--spins", "7"), "seed"),
            (("fermi", "vacuum", "--cutoff", "100"), "cutoff"),
            (("eq", "deff", "--spins", "20", "--seed", "1"), "spins"),
            (("walk", "evolve", "--preset", "nonsense"), "preset"),
        ],
    )
    def test_validation(self, argv, field):
        code, out, err = invoke(*argv)
        assert code == 2 and out == "" and field in err

    def test_cutoff_names_zone(self):
        assert "Brillouin" in invoke("fermi", "vacuum", "--cutoff", "100")[2]

    def test_unknown_flag(self):
        assert invoke("walk", "evolve", "--bogus", "1")[0] == 2

    def test_unknown_command(self):
        assert invoke("walk", "fly")[0] == 2

    def test_check_failure(self, monkeypatch):
        import qwlab.equilibration as eq

        # a collapsed bound must be reported as a numerical-check failure
        monkeypatch.setattr(eq, "bound_expectation", lambda *a: 0.0)
        code, _, err = invoke("eq", "bounds", "--spins", "4", "--seed", "1", "--instances", "2")
        assert code == 3 and "check failed" in err

    def test_main_exit_code(self):
        proc = subprocess.run([sys.executable, "-m", "qwlab", "walk", "evolve", "--extent", "3"], capture_output=True)
        assert proc.returncode == 2


class TestConfig:
    def test_roundtrip(self):
        cfg = RunConfig("eq", "gaps", {"spins": 5, "seed": 3, "eps": (0.01, 0.5)}, "x.csv")
        back = RunConfig.from_text(cfg.to_text())
        assert back == cfg

    def test_normalized_roundtrip(self):
        cfg = validate(RunConfig("walk", "converge", {"mass": 0.5}))
        assert RunConfig.from_text(cfg.to_text()) == cfg
        assert cfg.params["halvings"] == PARAMS["halvings"].default

    def test_flags_override_file(self, tmp_path):
        conf = tmp_path / "run.conf"
        conf.write_text("# chain run\nspins = 4\nseed = 5\nT = 10\nsamples = 5\n")
        _, from_file, _ = invoke("eq", "chain", "--config", str(conf))
        _, with_flag, _ = invoke("eq", "chain", "--config", str(conf), "--seed", "6")
        _, direct, _ = invoke("eq", "chain", "--spins", "4", "--seed", "6", "--T", "10", "--samples", "5")
        assert "# seed: 5" in from_file
        assert with_flag == direct

    def test_config_output_key(self, tmp_path):
        target = tmp_path / "o.csv"
        conf = tmp_path / "c.conf"
        conf.write_text(f"output = {target}\nspins = 3\nseed = 1\n")
        code, stdout, _ = invoke("eq", "deff", "--config", str(conf))
        assert code == 0 and stdout == "" and target.exists()

    def test_unknown_key(self, tmp_path):
        conf = tmp_path / "c.conf"
        conf.write_text("colour = red\n")
        code, _, err = invoke("eq", "deff", "--config", str(conf))
        assert code == 2 and "colour" in err

    def test_key_not_used_by_command(self):
        with pytest.raises(ValidationError, match="not used"):
            validate(RunConfig("eq", "deff", {"mass": 1.0}))

    def test_malformed_line(self):
        with pytest.raises(ValidationError, match="line 2"):
            parse_config_text("a = 1\nnot a pair\n")

    def test_missing_file(self, tmp_path):
        assert invoke("eq", "deff", "--config", str(tmp_path / "none.conf"))[0] == 2

    def test_seed_none_literal(self):
        assert RunConfig.from_text("command = eq deff\nseed = none\n").params["seed"] is None


def test_numbers_use_dot_and_full_precision():
    _, text, _ = invoke("eq", "toy", "--seed", "1", "--states", "1")
    for line in body(text).splitlines()[1:]:
        for field in line.split(","):
            float(field)
    assert cli._num(np.pi) == "3.14159265358979"

"""Tests for the command-line interface."""

import json

import pytest

import src.cli
from src.cli import EXIT_INPUT, EXIT_NEGATIVE, EXIT_PASS, _paint, _status, build_parser, main


def _run(argv):
    with pytest.raises(SystemExit) as exc:
        main(argv)
    return exc.value.code


class TestParser:
    """Test argument parsing."""

    def test_command_required(self):
        """No subcommand is a usage error."""
        with pytest.raises(SystemExit) as exc:
            build_parser().parse_args([])
        assert exc.value.code == 2

    def test_builtin_and_file_are_exclusive(self):
        """A problem comes from a file or the corpus, not both."""
        with pytest.raises(SystemExit):
            build_parser().parse_args(["check", "p.ini", "--builtin", "appb1"])

    def test_verify_needs_candidate(self):
        """verify has no candidate to fall back on."""
        with pytest.raises(SystemExit):
            build_parser().parse_args(["verify", "--builtin", "free-particle"])

    def test_options(self):
        """Per-command flags land on the namespace."""
        args = build_parser().parse_args(["abnormality", "--builtin", "appb1", "--scan-local", "--tol", "1e-6"])

        assert args.scan_local
        assert args.tol == 1e-6
        assert args.problem is None


class TestCommands:
    """Test exit codes and reports of each command."""

    def test_check_admissible(self, capsys):
        """A built-in curve passes the admissibility check."""
        assert _run(["check", "--builtin", "appb1"]) == EXIT_PASS
        assert "Curve admissible" in capsys.readouterr().out

    def test_abnormality_normal(self, tmp_path):
        """Normal curves exit 0 and the JSON carries the index."""
        out = tmp_path / "report.json"

        assert _run(["abnormality", "--builtin", "brockett", "--json", str(out)]) == EXIT_PASS
        report = json.loads(out.read_text(encoding="utf-8"))
        assert report["index"] == 0
        assert report["locally_normal"] is None

    def test_abnormality_abnormal(self, capsys):
        """An abnormal arc exits 1."""
        assert _run(["abnormality", "--builtin", "appb1-arc2"]) == EXIT_NEGATIVE
        assert "index 1 (abnormal)" in capsys.readouterr().out

    def test_scan_local_failure(self, capsys):
        """Normal but not locally normal fails under --scan-local."""
        assert _run(["abnormality", "--builtin", "appb1", "--json", "-", "--scan-local"]) == EXIT_NEGATIVE
        report = json.loads(capsys.readouterr().out)
        assert report["normal"]
        assert report["locally_normal"] is False

    def test_solve_writes_candidate(self, tmp_path):
        """solve --csv produces a table verify accepts."""
        table = tmp_path / "cand.csv"

        assert _run(["solve", "--builtin", "free-particle", "--csv", str(table)]) == EXIT_PASS
        assert table.read_text(encoding="utf-8").startswith("t,arc,x,z,p0,p_x")
        assert _run(["verify", "--builtin", "free-particle", "--candidate", str(table)]) == EXIT_PASS

    def test_problem_file(self, tmp_path, capsys):
        """Problem files are read from disk."""
        path = tmp_path / "line.ini"
        path.write_text(
            '[system]\nstates = ["x"]\ncontrols = ["z"]\npsi = ["z"]\n\n'
            '[curve]\nt0 = 0\nt1 = 1\nq0 = [0]\ncontrols = [["1"]]\n',
            encoding="utf-8",
        )

        assert _run(["check", str(path)]) == EXIT_PASS
        assert "Problem: line" in capsys.readouterr().out

    def test_perturbed_samples(self, tmp_path, capsys):
        """Samples moving at half the control speed are not admissible."""
        (tmp_path / "slow.csv").write_text(
            "t,arc,x,z\n" + "".join(f"{t},0,{t / 2},1\n" for t in (0, 0.25, 0.5, 0.75, 1)),
            encoding="utf-8",
        )
        path = tmp_path / "slow.ini"
        path.write_text(
            '[system]\nstates = ["x"]\ncontrols = ["z"]\npsi = ["z"]\n\n'
            '[curve]\nt0 = 0\nt1 = 1\nsamples = "slow.csv"\n',
            encoding="utf-8",
        )

        assert _run(["check", str(path)]) == EXIT_NEGATIVE
        assert "Curve not admissible" in capsys.readouterr().out

    @pytest.mark.parametrize("command", [["abnormality", "--scan-local"], ["solve"]])
    def test_reports_are_deterministic(self, tmp_path, command):
        """Two runs on the same problem write byte-identical JSON."""
        first, second = tmp_path / "first.json", tmp_path / "second.json"

        _run([*command, "--builtin", "free-particle", "--json", str(first)])
        _run([*command, "--builtin", "free-particle", "--json", str(second)])

        assert first.read_bytes() == second.read_bytes()


class TestVerdictColors:
    """Test the colour given to each verdict state."""

    @pytest.fixture
    def terminal(self, monkeypatch):
        monkeypatch.setattr(src.cli, "_color_enabled", lambda stream=None: True)

    def test_plain_in_pipes(self):
        """Captured output carries no escape codes."""
        assert _status(False, "ok", "index 1 (abnormal)", "abnormal") == "⚠️  index 1 (abnormal)"

    def test_states(self, terminal):
        """Passed is green, abnormal yellow, failures and non-convergence red."""
        assert _status(True, "Extremal found", "x").startswith("\033[92m✅")
        assert _status(False, "x", "index 1 (abnormal)", "abnormal").startswith("\033[93m⚠️")
        assert _status(False, "x", "Shooting did not converge", "not_converged").startswith("\033[91m❌")
        assert _status(False, "x", "Gauge test failed").startswith("\033[91m❌")

    def test_unknown_state_stays_plain(self, terminal):
        """Only verdict states are coloured."""
        assert _paint("text", "bold") == "text"


class TestInputErrors:
    """Test that bad input exits 2 with a message on stderr."""

    def test_unknown_builtin(self, capsys):
        """Unknown corpus names are input errors."""
        assert _run(["check", "--builtin", "nope"]) == EXIT_INPUT
        assert "unknown builtin 'nope'" in capsys.readouterr().err

    def test_missing_source(self, capsys):
        """Either a file or --builtin is required."""
        assert _run(["check"]) == EXIT_INPUT
        assert "--builtin" in capsys.readouterr().err

    def test_missing_file(self, tmp_path, capsys):
        """Missing problem files are reported."""
        assert _run(["check", str(tmp_path / "absent.ini")]) == EXIT_INPUT
        assert "File not found" in capsys.readouterr().err

    def test_invalid_problem(self, tmp_path, capsys):
        """Validation errors carry the line number."""
        path = tmp_path / "bad.ini"
        path.write_text('[system]\nstates = ["x", "y"]\ncontrols = ["z"]\npsi = ["z"]\n', encoding="utf-8")

        assert _run(["check", str(path)]) == EXIT_INPUT
        assert "line 4: system.psi: psi count 1 ≠ n 2" in capsys.readouterr().err

"""Tests for problem file parsing and validation."""

import textwrap

import numpy as np
import pytest

from src.corpus import BUILTINS
from src.errors import ValidationError
from src.problem import load_builtin, load_problem, parse_problem
from src.utils import write_candidate_csv

MINIMAL = textwrap.dedent(
    """\
    [system]
    name = line
    states = ["x"]
    controls = ["z"]
    psi = ["a*z"]
    lagrangian = "z^2/2"

    [params]
    a = 2

    [curve]
    t0 = 0
    t1 = 1
    q0 = [0]
    controls = [["1"]]
    """
)


class TestParseProblem:
    """Test reading problem files."""

    def test_minimal_problem(self):
        """Sections build a system with its parameters bound."""
        prob = parse_problem(MINIMAL)

        assert prob.name == "line"
        assert prob.system.params == {"a": 2.0}
        assert prob.extrinsic is None
        np.testing.assert_allclose(prob.curve().q_end, [2.0], atol=1e-12)

    def test_name_defaults_to_file_stem(self, tmp_path):
        """Without a name the file stem is used."""
        path = tmp_path / "ramp.ini"
        path.write_text(MINIMAL.replace("name = line\n", ""), encoding="utf-8")

        prob = load_problem(path)

        assert prob.name == "ramp"
        assert prob.base_dir == tmp_path.resolve()

    def test_inline_comments(self):
        """Trailing # comments are ignored."""
        prob = parse_problem(MINIMAL.replace("a = 2", "a = 3  # slope"))
        assert prob.system.params == {"a": 3.0}

    @pytest.mark.parametrize("name", sorted(BUILTINS))
    def test_builtins_parse(self, name):
        """Every built-in problem is a valid file."""
        prob = load_builtin(name)
        assert prob.name == name

    def test_unknown_builtin(self):
        """Unknown names list the known ones."""
        with pytest.raises(ValidationError, match="unknown builtin 'nope'.*appb1"):
            load_builtin("nope")

    def test_missing_file(self, tmp_path):
        """A missing path is an input error."""
        with pytest.raises(ValueError, match="File not found"):
            load_problem(tmp_path / "absent.ini")


class TestDiagnostics:
    """Test that validation errors point at the offending line."""

    def test_psi_count(self):
        """A short psi list is reported on the psi line."""
        text = MINIMAL.replace('states = ["x"]', 'states = ["x", "y"]')
        with pytest.raises(ValidationError) as exc:
            parse_problem(text)
        assert exc.value.line == 5
        assert "psi count 1 ≠ n 2" in str(exc.value)
        assert str(exc.value).startswith("line 5: ")

    def test_syntax_error_in_expression(self):
        """Expression errors carry the key's line and the offset."""
        with pytest.raises(ValidationError, match=r"system.lagrangian: unexpected end of input at offset 4") as exc:
            parse_problem(MINIMAL.replace('"z^2/2"', '"z^2/"'))
        assert exc.value.line == 6

    def test_unknown_function(self):
        """Unknown functions are reported by name."""
        with pytest.raises(ValidationError, match="unknown function 'foo'"):
            parse_problem(MINIMAL.replace('"a*z"', '"foo(z)"'))

    def test_undeclared_symbol(self):
        """Symbols outside states, controls and parameters are rejected."""
        with pytest.raises(ValidationError, match="undeclared symbol") as exc:
            parse_problem(MINIMAL.replace('"a*z"', '"b*z"'))
        assert exc.value.line == 5

    def test_malformed_json(self):
        """Broken lists are caught before validation."""
        with pytest.raises(ValidationError, match="curve.q0: malformed value") as exc:
            parse_problem(MINIMAL.replace("q0 = [0]", "q0 = [0,"))
        assert exc.value.line == 14

    def test_unknown_section(self):
        """Extra sections are not silently ignored."""
        with pytest.raises(ValidationError) as exc:
            parse_problem(MINIMAL + "\n[extras]\nfoo = 1\n")
        assert "extras" in str(exc.value)

    def test_unknown_numerics_key(self):
        """Only the documented numerics keys are accepted."""
        with pytest.raises(ValidationError, match="unknown numerics keys: bogus"):
            parse_problem(MINIMAL + "\n[numerics]\nbogus = 1\n")

    def test_corner_order(self):
        """Corners must lie strictly inside the interval."""
        text = MINIMAL.replace('controls = [["1"]]', 'corners = [1.5]\ncontrols = [["1"], ["2"]]')
        with pytest.raises(ValidationError, match="corner times must increase"):
            parse_problem(text)

    def test_control_arc_count(self):
        """One control list per arc."""
        text = MINIMAL.replace('controls = [["1"]]', 'corners = [0.5]\ncontrols = [["1"]]')
        with pytest.raises(ValidationError, match="1 control arcs for 2 curve arcs"):
            parse_problem(text)

    def test_curve_needs_a_source(self):
        """A curve gives controls or samples."""
        with pytest.raises(ValidationError, match="exactly one of 'controls' or 'samples'"):
            parse_problem(MINIMAL.replace('controls = [["1"]]\n', ""))

    def test_control_reads_state(self):
        """Controls may depend on t only."""
        prob = parse_problem(MINIMAL.replace('controls = [["1"]]', 'controls = [["x"]]'))
        with pytest.raises(ValidationError, match=r"curve.controls\[0\]"):
            prob.curve()

    def test_missing_solve_section(self):
        """Shooting needs a [solve] section."""
        with pytest.raises(ValidationError, match=r"no \[solve\] section"):
            parse_problem(MINIMAL).shooting()

    def test_solve_dimensions(self):
        """Boundary values are checked against n."""
        text = MINIMAL + "\n[solve]\nt0 = 0\nt1 = 1\nq_start = [0, 0]\nq_end = [1]\n"
        with pytest.raises(ValidationError, match="solve.q_start must list 1 values"):
            parse_problem(text).shooting()


class TestNumerics:
    """Test per-problem numeric settings."""

    def test_override(self):
        """[numerics] values replace the defaults for this problem only."""
        prob = parse_problem(MINIMAL + "\n[numerics]\nsteps_per_unit = 40\nsvd_tol = 1e-6\n")

        assert prob.settings.steps_per_unit == 40
        assert prob.settings.svd_tol == 1e-6
        assert prob.curve().arcs[0].steps == 40

    def test_builtin_override(self):
        """The unreachable unit-speed problem runs on a coarser grid."""
        assert load_builtin("unit-speed-unreachable").settings.steps_per_unit == 100


class TestSamples:
    """Test curves imported from sample tables."""

    def test_samples_relative_to_problem(self, tmp_path):
        """A samples path resolves next to the problem file."""
        reference = parse_problem(MINIMAL)
        curve = reference.curve()
        write_candidate_csv(tmp_path / "line.csv", reference.system, curve)
        path = tmp_path / "line.ini"
        path.write_text(MINIMAL.replace('controls = [["1"]]', 'samples = "line.csv"'), encoding="utf-8")

        imported = load_problem(path).curve()

        np.testing.assert_array_equal(imported.arcs[0].q, curve.arcs[0].q)
        np.testing.assert_array_equal(imported.arcs[0].grid, curve.arcs[0].grid)

    def test_seeds(self):
        """Seeds default to zero momenta."""
        text = MINIMAL + "\n[solve]\nt0 = 0\nt1 = 1\nq_start = [0]\nq_end = [1]\n"
        seeds = parse_problem(text).seeds()

        assert seeds.p0 == (0.0,)
        assert seeds.corner_times == ()

"""Unit tests for the expression parser, evaluator and symbolic derivative."""

import math

import numpy as np
import pytest

from src.errors import ExpressionSyntaxError, UnboundSymbol, UnknownFunction
from src.expr import BinOp, Environment, Num, Param, Var, differentiate, evaluate, flatstep, free_symbols, parse, to_source


class TestParse:
    """Test the grammar and its precedence rules."""

    def test_precedence(self):
        """Products bind tighter than sums."""
        assert evaluate("1 + 2*3", {}) == 7.0

    def test_power_is_right_associative(self):
        """2^3^2 is 2^(3^2)."""
        assert evaluate("2^3^2", {}) == 512.0

    def test_unary_minus_below_power(self):
        """-2^2 is -(2^2)."""
        assert evaluate("-2^2", {}) == -4.0

    def test_negative_exponent(self):
        """An exponent may carry its own sign."""
        assert evaluate("v^-3", {"v": 2.0}) == pytest.approx(0.125)

    def test_pi_literal(self):
        """pi parses as a number, not a variable."""
        assert parse("pi") == Num(math.pi)

    def test_params_become_param_nodes(self):
        """Declared parameter names are kept apart from variables."""
        tree = parse("a*x", ["a"])
        assert tree == BinOp("*", Param("a"), Var("x"))
        assert free_symbols(tree) == (frozenset({"x"}), frozenset({"a"}))

    def test_unknown_function(self):
        """Calling an undeclared function fails at parse time."""
        with pytest.raises(UnknownFunction, match="unknown function 'foo'"):
            parse("foo(x)")

    def test_syntax_error_offset(self):
        """Truncated input reports the byte offset of the end."""
        with pytest.raises(ExpressionSyntaxError) as exc:
            parse("x +")
        assert exc.value.offset == 3

    def test_unexpected_character(self):
        """Characters outside the grammar are rejected with their offset."""
        with pytest.raises(ExpressionSyntaxError) as exc:
            parse("x $ y")
        assert exc.value.offset == 2

    def test_printer_rebuilds_tree(self):
        """to_source output parses back to the same tree."""
        for source in ("-(x + y)^2", "a/(b*c)", "(x - 1)^(y + 2)", "sin(x)*-y"):
            tree = parse(source)
            assert parse(to_source(tree)) == tree


class TestEvaluate:
    """Test numeric evaluation semantics."""

    def test_environment_separates_params(self):
        """Environment binds variables and parameters separately."""
        tree = parse("a*x", ["a"])
        assert evaluate(tree, Environment({"x": 2.0}, {"a": 3.0})) == 6.0

    def test_arrays_evaluate_elementwise(self):
        """A whole sample array evaluates in one call."""
        t = np.linspace(0.0, 1.0, 5)
        np.testing.assert_allclose(evaluate("t^2 + 1", {"t": t}), t**2 + 1)

    def test_division_by_zero_is_ieee(self):
        """Division by zero yields inf rather than raising."""
        assert math.isinf(evaluate("1/x", {"x": 0.0}))

    def test_unbound_symbol(self):
        """A missing binding raises UnboundSymbol."""
        with pytest.raises(UnboundSymbol, match="'y'"):
            evaluate("x + y", {"x": 1.0})


class TestFlatstep:
    """Test the flat function exp(-1/t^2) glued to zero."""

    def test_values(self):
        """Nonzero for negative t, identically zero from the origin on."""
        assert flatstep(-1.0) == pytest.approx(math.exp(-1.0))
        assert flatstep(0.0) == 0.0
        assert flatstep(0.5) == 0.0

    def test_derivative_matches_difference_quotient(self):
        """flatstep_d1 is the derivative of flatstep."""
        t, h = -0.6, 1e-5
        numeric = (flatstep(t + h) - flatstep(t - h)) / (2 * h)
        assert flatstep(t, 1) == pytest.approx(numeric, rel=1e-6)


class TestDifferentiate:
    """Symbolic derivatives against central differences."""

    CASES = [
        "sin(x)*exp(y)",
        "x^3 - 2*x*y",
        "log(x + 2)/sqrt(y + 3)",
        "tanh(x*y) + atan(x)",
        "cosh(x)^2 - sinh(x)^2",
        "tan(x) * y^2",
        "x^y",
        "flatstep(x - 1) * y",
        "(x^2 + y^2)^-1.5",
    ]

    @pytest.mark.parametrize("source", CASES)
    @pytest.mark.parametrize("var", ["x", "y"])
    def test_symbolic_matches_finite_difference(self, source, var):
        """Exact derivative agrees with a central difference at 1e-6."""
        point = {"x": 0.3, "y": 0.7}
        tree = parse(source)
        exact = evaluate(differentiate(tree, var), point)
        h = 1e-5
        up = dict(point, **{var: point[var] + h})
        down = dict(point, **{var: point[var] - h})
        numeric = (evaluate(tree, up) - evaluate(tree, down)) / (2 * h)
        assert exact == pytest.approx(numeric, rel=1e-6, abs=1e-6)

    def test_linearity(self, rng):
        """d(a e1 + e2) = a de1 + de2 at 100 random points."""
        e1, e2, a = "sin(x)*exp(y)", "x^3 - 2*x*y + log(y)", 2.5
        points = {"x": rng.uniform(0.1, 1.0, 100), "y": rng.uniform(0.1, 1.0, 100)}

        for var in ("x", "y"):
            combined = evaluate(differentiate(parse(f"{a}*({e1}) + ({e2})"), var), points)
            separate = a * evaluate(differentiate(parse(e1), var), points) + evaluate(
                differentiate(parse(e2), var), points
            )
            np.testing.assert_allclose(combined, separate, rtol=1e-12, atol=1e-12)

    def test_constant_folding(self):
        """Derivatives of constants fold to zero nodes."""
        assert differentiate(parse("3*a + 2", ["a"]), "x") == Num(0.0)

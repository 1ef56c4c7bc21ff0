import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from delaytrack.expr import Expression, ExpressionError, compile_entry


@pytest.mark.parametrize("text,t,want", [
    ("t^2 + 1", 2.0, 5.0),
    ("t**2 + 1", 2.0, 5.0),
    ("-0.1*t^2", 3.0, -0.9),
    ("−0.1*t^2", 3.0, -0.9),  # copied unicode minus
    ("exp(−t)", 1.0, np.exp(-1.0)),
    ("2+sin(t)", np.pi / 2, 3.0),
    ("0.01/(5*t+1)", 1.0, 0.01 / 6),
    ("cos(2*pi*t)", 0.5, -1.0),
])
def test_values(text, t, want):
    assert Expression(text)(t) == pytest.approx(want)


def test_vectorised():
    e = Expression("3*t - 1")
    t = np.linspace(0, 1, 7)
    assert np.allclose(e(t), 3 * t - 1)
    assert e(t).shape == t.shape


def test_constant_broadcasts():
    e = Expression("2.5")
    assert e.is_constant
    assert e(np.zeros((3, 2))).shape == (3, 2)


def test_piecewise_branches_and_breakpoints():
    e = Expression("piecewise(t<1, cos(2*pi*t), t<2, 0.5*t^2*(1-t), 0.5*cos(4*pi*t)+1)")
    assert e.breakpoints == [1.0, 2.0]
    assert e(0.0) == pytest.approx(1.0)
    assert e(1.5) == pytest.approx(0.5 * 2.25 * -0.5)
    assert e(2.0) == pytest.approx(1.5)
    assert not e.is_constant


@pytest.mark.parametrize("text", [
    "t +", "__import__('os')", "t.real", "foo(t)", "x + 1", "t < 1", "piecewise(t<1, 2)",
    "sin(t, t)", "'abc'", "[t]", "lambda: 1", "t % 2",
])
def test_rejects(text):
    with pytest.raises(ExpressionError):
        Expression(text)


def test_compile_entry_numbers_and_errors():
    assert compile_entry(3)(0.7) == 3.0
    assert compile_entry("t")(0.7) == 0.7
    with pytest.raises(ExpressionError, match="/A/0/1"):
        compile_entry("sin(", "/A/0/1")
    with pytest.raises(ExpressionError):
        compile_entry(True)
    with pytest.raises(ExpressionError):
        compile_entry([1])


@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-3, 3))
def test_linear_combination(a, b, t):
    e = Expression(f"({a!r})*t + ({b!r})")
    assert e(t) == pytest.approx(a * t + b, abs=1e-12)

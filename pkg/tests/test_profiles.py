import numpy as np
import pytest
import sympy as sp

from khess.profiles import MAX_DERIV, plateau, smoothstep


def test_endpoint_values():
    assert smoothstep(-1.0) == 0.0
    assert smoothstep(0.0) == 0.0
    assert smoothstep(1.0) == 1.0
    assert smoothstep(2.0) == 1.0
    assert abs(smoothstep(0.5) - 0.5) < 1e-15  # symmetry point


def test_monotone_and_bounded():
    t = np.linspace(-0.5, 1.5, 801)
    v = smoothstep(t)
    assert np.all(v >= 0.0) and np.all(v <= 1.0)
    assert np.all(np.diff(v) >= -1e-15)


def test_derivatives_vanish_at_junctions():
    for order in range(1, MAX_DERIV + 1):
        assert np.all(smoothstep(np.array([-0.1, 0.0, 1.0, 1.1]), order) == 0.0)


def test_derivatives_against_sympy():
    # independent symbolic oracle for the closed-form derivative chain
    t = sp.Symbol("t", positive=True)
    f = sp.exp(-1 / t)
    g = sp.exp(-1 / (1 - t))
    s = f / (f + g)
    ts = np.linspace(0.05, 0.95, 19)
    expr = s
    for order in range(MAX_DERIV + 1):
        fn = sp.lambdify(t, expr, "numpy")
        expected = np.array([float(fn(x)) for x in ts])
        got = smoothstep(ts, order)
        scale = max(1.0, np.max(np.abs(expected)))
        assert np.max(np.abs(got - expected)) < 1e-9 * scale, f"order {order}"
        expr = sp.diff(expr, t)


def test_order_out_of_range():
    with pytest.raises(ValueError):
        smoothstep(0.5, order=5)


def test_plateau_shape():
    lo, hi = np.pi / 2, np.pi
    r = np.linspace(0, 4, 400)
    v = plateau(r, lo, hi)
    assert np.all(v[r <= lo] == 1.0)
    assert np.all(v[r >= hi] == 0.0)
    # strictly between on the core of the transition (the outermost few
    # percent clamp to 0/1 below double precision)
    width = hi - lo
    mid = (r > lo + 0.05 * width) & (r < hi - 0.05 * width)
    assert np.all((v[mid] > 0) & (v[mid] < 1))


def test_plateau_chain_rule():
    lo, hi = 1.0, 2.0
    r = np.linspace(1.05, 1.95, 33)
    h = 1e-6
    fd = (plateau(r + h, lo, hi) - plateau(r - h, lo, hi)) / (2 * h)
    assert np.max(np.abs(fd - plateau(r, lo, hi, order=1))) < 1e-6

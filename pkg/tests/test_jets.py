import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kmob import jets as jt
from kmob.catalog import orthotoric_cubic
from kmob.errors import EvaluationFailed
from kmob.jets import FdStencil, Jet2, fd_derivative, jet_arith, jet_func
from kmob.metrics import sample_points, seed


def x_at(v):
    return Jet2.variables(np.array([float(v)]))[0]


def check(j, val, grad, hess, tol=1e-14):
    assert np.allclose(j.val, val, atol=tol)
    assert np.allclose(j.grad, grad, atol=tol)
    assert np.allclose(j.hess, hess, atol=tol)


def test_square():
    x = x_at(3.0)
    check(jet_arith(x, x, "mul"), 9, [6], [[2]])


def test_reciprocal():
    x = x_at(2.0)
    check(1.0 / x, 0.5, [-0.25], [[0.25]])


def test_cancellation():
    x = x_at(-1.7)
    check(jet_arith(x, x, "sub"), 0, [0], [[0]])


@pytest.mark.parametrize(
    "f,k,at,expect",
    [
        ("sqrt", None, 4.0, (2, [0.25], [[-0.03125]])),
        ("powi", 3, 2.0, (8, [12], [[12]])),
        ("log", None, 1.0, (0, [1], [[-1]])),
        ("exp", None, 0.0, (1, [1], [[1]])),
    ],
)
def test_unary(f, k, at, expect):
    check(jet_func(x_at(at), f, k), *expect)


def test_unknown_function():
    with pytest.raises(ValueError):
        jet_func(x_at(1.0), "sin")


def test_negative_powi():
    check(jt.powi(x_at(2.0), -2), 0.25, [-0.25], [[0.375]])


def test_matrix_inverse_jet():
    X = Jet2.variables(np.array([0.3, -0.2]))
    M = jt.stack([jt.stack([X[0] + 2.0, X[1]]), jt.stack([X[1], X[0] * X[1] + 3.0])])
    Mi = jt.inv(M)
    prod = jt.matmul(Mi, M)
    assert np.allclose(prod.val, np.eye(2), atol=1e-14)
    assert np.allclose(prod.grad, 0, atol=1e-13)
    assert np.allclose(prod.hess, 0, atol=1e-12)


def test_fd_quadratic():
    g, _ = fd_derivative(lambda x: x[0] ** 2, [3.0], FdStencil(step=1e-3, order="central-2", richardson=False))
    assert abs(g[0] - 6.0) < 1e-6


def test_fd_mixed():
    _, H = fd_derivative(lambda x: x[0] * x[1], [1.0, 2.0], FdStencil(step=1e-3, order="central-2"))
    assert abs(H[0, 1] - 1.0) < 1e-6


def test_fd_failure_is_reported():
    def bad(x):
        if x[0] > 1.0:
            raise ValueError("outside")
        return x[0]

    with pytest.raises(EvaluationFailed):
        fd_derivative(bad, [1.0], FdStencil(step=1e-2))


def test_stencil_validation():
    with pytest.raises(ValueError):
        FdStencil(step=0.0)
    with pytest.raises(ValueError):
        FdStencil(order="forward")


def test_orthotoric_metric_jet_matches_fd():
    inst = orthotoric_cubic()
    p = sample_points(inst, 1, 3)[0]
    gj = inst.fields(seed(p))["g"]
    dg, ddg = fd_derivative(lambda x: inst.fields(np.asarray(x))["g"], p, FdStencil(step=1e-4))
    assert np.linalg.norm(dg - gj.grad) / np.linalg.norm(gj.grad) < 1e-5
    assert np.linalg.norm(ddg - gj.hess) / max(np.linalg.norm(gj.hess), 1.0) < 1e-5


finite = st.floats(-2.0, 2.0, allow_nan=False)


@settings(max_examples=60, deadline=None)
@given(finite, finite, finite)
def test_product_rule(a, b, c):
    X = Jet2.variables(np.array([a, b]))
    u = X[0] * X[1] + c
    v = jt.exp(X[0] * 0.5) - X[1]
    w = u * v
    assert np.allclose(w.grad, u.grad * v.val + u.val * v.grad, atol=1e-10)
    H = u.hess * v.val + np.outer(u.grad, v.grad) + np.outer(v.grad, u.grad) + u.val * v.hess
    assert np.allclose(w.hess, H, atol=1e-10)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.2, 3.0), st.floats(-1.0, 1.0))
def test_jet_agrees_with_fd(a, b):
    def f(x):
        return np.sqrt(x[0]) * np.exp(x[1]) / (1.0 + x[0] * x[1] ** 2)

    X = Jet2.variables(np.array([a, b]))
    j = jt.sqrt(X[0]) * jt.exp(X[1]) / (X[0] * X[1] * X[1] + 1.0)
    g, H = fd_derivative(f, [a, b], FdStencil(step=1e-3))
    assert np.allclose(g, j.grad, rtol=1e-6, atol=1e-8)
    assert np.allclose(H, j.hess, rtol=1e-5, atol=1e-6)

import numpy as np
import pytest
import sympy as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from kmob.catalog import bundle_4d, bundle_6d, orthotoric_control, orthotoric_cubic, product, space_form
from kmob.errors import CoincidentEigenvalues, ZeroVector
from kmob.geometry import holomorphic_sectional_curvature, make_frame
from kmob.jets import Jet2
from kmob.metrics import Polynomial, SolutionField, eval_metric, eval_solution, lam_from_trace, sample_points
from kmob.mobility import estimate_B_mu
from kmob.nullity import (
    K_components,
    K_tensor,
    b_explicit_4d,
    b_grid,
    eigenvalue_gradients,
    equivalence_battery,
    fibre_gradients,
    fibre_hsc,
    integrability_residual,
    integrability_residual_at,
    nullity_scan,
    nullity_space,
    second_identity_residual,
    span_residual,
    verify_Kbracket_kernel,
)


def flat(n=4, point=None):
    m = n // 2
    J = np.block([[np.zeros((m, m)), -np.eye(m)], [np.eye(m), np.zeros((m, m))]])
    p = np.zeros(n) if point is None else np.asarray(point, float)
    return make_frame(p, Jet2.constant(np.eye(n), n), Jet2.constant(J, n))


E = np.eye(4)  # e1 = E[0], Je1 = E[2], e3 = E[1]


def test_K_examples():
    fr = flat()
    assert np.allclose(K_tensor(fr, E[0], E[1]) @ E[0], -0.25 * E[1], atol=1e-15)
    assert np.allclose(K_tensor(fr, E[0], E[2]) @ E[2], E[0], atol=1e-15)


def test_K_hsc_is_one():
    fr = flat()
    Kc = K_components(fr.g_val, fr.J_val)
    X = np.array([0.3, -1.0, 2.0, 0.5])
    JX = fr.J_val @ X
    val = np.einsum("a,b,abdc,c,de,e->", X, JX, Kc, JX, fr.g_val, X) / (X @ X) ** 2
    assert abs(val - 1.0) < 1e-14


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_K_pair_symmetry(s):
    r = np.random.default_rng(s)
    fr = eval_metric(bundle_6d(), sample_points(bundle_6d(), 1, s)[0])
    X, Y, Z, W = r.normal(size=(4, 6))
    g = fr.g_val
    a = W @ g @ (K_tensor(fr, X, Y) @ Z)
    b = Y @ g @ (K_tensor(fr, Z, W) @ X)
    assert abs(a - b) < 1e-12 * max(1.0, abs(a))


def test_flat_nullity():
    fr = flat()
    assert nullity_space(fr, 0.0).dimension == 4
    assert nullity_space(fr, 0.3).dimension == 0


def test_space_form_grid():
    inst = space_form(2, 2.0)
    fr = eval_metric(inst, sample_points(inst, 1, 0)[0])
    scan = nullity_scan(fr, b_grid(0.0, 1.0))
    full = [b for b, d in scan if d == 4]
    assert len(scan) == 41 and full == [-0.5]
    assert all(d == 0 for b, d in scan if b != -0.5)


def test_6d_nullity_contains_fibres():
    inst = bundle_6d()
    for p in sample_points(inst, 4, 0):
        S = eval_solution(inst, p)
        nr = nullity_space(S.frame, -1.0)
        assert nr.dimension >= 4 and nr.j_invariance < 1e-8
        for v in fibre_gradients(inst, p):
            assert span_residual(nr.basis, v, S.frame) < 1e-6
            assert span_residual(nr.basis, S.frame.J_val @ v, S.frame) < 1e-6


def test_span_residual_edge_cases():
    fr = flat()
    assert span_residual([], np.zeros(4), fr) == 0.0
    assert span_residual([], E[0], fr) == 1.0
    assert span_residual([E[0], E[1]], E[2], fr) == pytest.approx(1.0)


def test_fibre_hsc_6d():
    inst = bundle_6d()
    for p in sample_points(inst, 4, 1):
        fr = eval_metric(inst, p)
        for h in fibre_hsc(fr, fibre_gradients(inst, p)):
            assert abs(abs(h) - 4.0) < 1e-6 and h > 0


def test_fibre_hsc_cubic_sign():
    inst = orthotoric_cubic()
    p = sample_points(inst, 1, 0)[0]
    h = fibre_hsc(eval_metric(inst, p), fibre_gradients(inst, p))
    assert h == pytest.approx([-1.0, -1.0], abs=1e-6)


@pytest.mark.parametrize("make", [space_form, bundle_4d, bundle_6d, orthotoric_cubic, orthotoric_control])
def test_integrability(make):
    inst = make()
    for p in sample_points(inst, 3, 0):
        assert integrability_residual(inst, p) < 1e-7


def test_integrability_parallel_exact():
    inst = product()
    p = sample_points(inst, 1, 0)[0]
    assert integrability_residual(inst, p) < 1e-14


def test_integrability_perturbed():
    inst = bundle_6d()
    p = sample_points(inst, 1, 0)[0]
    S = eval_solution(inst, p)
    fr = S.frame
    Q = np.diag([1.0, 0.0, -1.0, 1.0, 0.0, -1.0])
    Q = 0.5 * (Q - fr.J_val @ Q @ fr.J_val)
    x = Jet2.variables(p)
    A = S.A + (x[0] * x[0]) * (0.05 * Q)
    assert integrability_residual_at(SolutionField(fr, A, lam_from_trace(fr.g, A))) > 1e-3


@settings(max_examples=15, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3))
def test_second_identity_any_B_mu(B, mu):
    inst = bundle_6d()
    S = eval_solution(inst, sample_points(inst, 1, 5)[0])
    assert second_identity_residual(S, B, mu) < 1e-7


@pytest.mark.parametrize("make", [bundle_4d, bundle_6d, orthotoric_cubic, space_form])
def test_equivalence_battery(make):
    inst = make()
    P = sample_points(inst, 4, 0)
    B = estimate_B_mu(inst, P).B
    res = equivalence_battery(inst, B, P)
    tol = 1e-7 if make is space_form else 1e-6
    assert all(np.max(v) < tol for v in res.values())


def test_equivalence_negative_control():
    inst = orthotoric_control()
    P = sample_points(inst, 4, 0)
    res = equivalence_battery(inst, estimate_B_mu(inst, P).B, P)
    assert max(np.max(v) for v in res.values()) > 1e-3


def test_eigenvalue_gradients_match_coordinates():
    inst = orthotoric_cubic()
    p = sample_points(inst, 1, 0)[0]
    got = eigenvalue_gradients(eval_solution(inst, p))
    ref = fibre_gradients(inst, p)
    assert np.allclose(got[0], ref[0], atol=1e-10) and np.allclose(got[1], ref[1], atol=1e-10)


def test_Kbracket_flat():
    cert = verify_Kbracket_kernel(flat(), E[0])
    assert cert.kernel_dim == 1 and cert.identity_distance < 1e-10


def test_Kbracket_identity_commutes():
    fr = flat()
    for X in E:
        K = K_tensor(fr, X, E[1])
        assert np.all(K @ np.eye(4) - np.eye(4) @ K == 0)


@pytest.mark.parametrize("s", range(10))
def test_Kbracket_random(s):
    r = np.random.default_rng(s)
    inst = bundle_6d() if s % 2 else space_form()
    fr = eval_metric(inst, sample_points(inst, 1, s)[0])
    cert = verify_Kbracket_kernel(fr, r.normal(size=inst.dim))
    assert cert.kernel_dim == 1 and cert.identity_distance < 1e-8


def test_Kbracket_zero():
    with pytest.raises(ZeroVector):
        verify_Kbracket_kernel(flat(), np.zeros(4))


# symbolic oracle for the explicit four-dimensional B
_x1, _x2 = sp.symbols("x1 x2")


def sym_B(coeffs):
    t = sp.symbols("t")
    F = sum(sp.Rational(c) * t ** k for k, c in enumerate(coeffs))
    f1, f2 = F.subs(t, _x1), F.subs(t, _x2)
    d1, d2 = sp.diff(F, t).subs(t, _x1), sp.diff(F, t).subs(t, _x2)
    d = _x1 - _x2
    return sp.simplify(((d1 + d2) * d - 2 * (f1 - f2)) / (4 * d ** 3))


def test_symbolic_B_values():
    assert sym_B([0, 0, 0, 1]) == sp.Rational(1, 4)
    assert sym_B([3, -2, 5]) == 0
    assert sym_B([1, 2, -1, 6]) == sp.Rational(6, 4)


def test_b_explicit_cubic():
    t3 = Polynomial((0.0, 0.0, 0.0, 1.0))
    r = np.random.default_rng(3)
    vals = []
    for _ in range(20):
        x1, x2 = r.uniform(-1, -0.5), r.uniform(0.5, 1)
        B, res = b_explicit_4d(t3, t3, x1, x2)
        assert abs(B - 0.25) < 1e-10 and res < 1e-10
        vals.append(B)
    assert np.ptp(vals) < 1e-10


def test_b_explicit_general_cubic():
    F = Polynomial((1.0, 2.0, -1.0, 6.0))
    B, res = b_explicit_4d(F, F, -0.3, 0.8)
    assert abs(B - 1.5) < 1e-12 and res < 1e-10


@pytest.mark.parametrize("coeffs", [(1.0,), (0.5, -2.0), (3.0, -2.0, 5.0)])
def test_b_explicit_low_degree(coeffs):
    F = Polynomial(coeffs)
    B, _ = b_explicit_4d(F, F, 0.2, 0.9)
    assert B == 0.0


def test_b_explicit_matches_fit():
    inst = orthotoric_cubic()
    P = sample_points(inst, 5, 0)
    fit = estimate_B_mu(inst, P).B
    th = inst.thetas[0]
    for p in P:
        assert abs(b_explicit_4d(th, th, p[0], p[1])[0] - fit) < 1e-10


def test_b_explicit_coincident():
    t3 = Polynomial((0.0, 0.0, 0.0, 1.0))
    with pytest.raises(CoincidentEigenvalues):
        b_explicit_4d(t3, t3, 0.5, 0.5)

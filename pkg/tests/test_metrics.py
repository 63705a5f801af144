import numpy as np
import pytest

from kmob.catalog import bundle_4d, bundle_6d, orthotoric_control, orthotoric_cubic, product, space_form
from kmob.errors import ConstructionError, DomainViolation, EmptyDomain, NonHorizontalInput
from kmob.geometry import tensor_norm
from kmob.jets import FdStencil, fd_derivative
from kmob.metrics import (
    ConstantEigenvalue,
    HamiltonianBundle,
    Orthotoric4D,
    Polynomial,
    Product,
    Scaled,
    SpaceForm,
    classify,
    complex_eigenvalues,
    eigen_gradients,
    elementary_symmetric,
    eval_lambda,
    eval_metric,
    eval_solution,
    gray_oneill,
    horizontal_basis,
    horizontal_connection_vertical,
    sample_box,
    sample_points,
    unwrap,
)

TH3 = Polynomial.from_roots([0.0, 1.0, 2.0], -4.0)


def test_polynomial_basics():
    p = Polynomial.from_roots([1.0, 2.0], 3.0)
    assert p.to_list() == [6.0, -9.0, 3.0]
    assert p(1.0) == 0.0 and p.degree() == 2 and p.lead == 3.0
    assert p.deriv().to_list() == [-9.0, 6.0]
    assert sorted(p.real_roots()) == pytest.approx([1.0, 2.0])


def test_elementary_symmetric():
    assert elementary_symmetric([1.0, 2.0, 3.0]) == [1.0, 6.0, 11.0, 6.0]


def test_flat_space_form():
    inst = SpaceForm(m_=1, c=0.0)
    fr = eval_metric(inst, [0.2, -0.1])
    assert np.allclose(fr.g_val, np.eye(2)) and np.all(fr.g.grad == 0)
    assert np.allclose(fr.J_val, [[0, -1], [1, 0]])


def test_orthotoric_point_audit():
    inst = Orthotoric4D(TH3, TH3, ((0.0, 1.0), (1.0, 2.0)))
    fr = eval_metric(inst, [0.3, 1.5, 0.0, 0.0])
    a = fr.audit()
    assert np.allclose(fr.g_val, fr.g_val.T, atol=1e-14)
    assert a["min_eig_g"] > 0 and a["J_squared"] < 1e-10
    S = eval_solution(inst, [0.3, 1.5, 0.0, 0.0])
    assert complex_eigenvalues(S.A.val) == pytest.approx([0.3, 1.5], abs=1e-12)


def test_orthotoric_lambda_formula():
    inst = orthotoric_cubic()
    for p in sample_points(inst, 4, 0):
        g1, g2 = eigen_gradients(inst, p)
        assert np.max(np.abs(eval_lambda(inst, p) - 0.5 * (g1 + g2))) < 1e-9


def test_lambda_against_fd_trace():
    inst = bundle_6d()
    p = sample_points(inst, 1, 7)[0]
    fr = eval_metric(inst, p)
    d, _ = fd_derivative(lambda x: np.trace(inst.fields(np.asarray(x))["A"]), p, FdStencil(step=1e-4), hessian=False)
    lam = eval_lambda(inst, p)
    fd = 0.25 * fr.g_inv @ d
    assert np.linalg.norm(lam - fd) / np.linalg.norm(lam) < 1e-5


def test_identity_solution_space_form():
    inst = SpaceForm(m_=2, c=1.0, W=tuple(tuple(r) for r in np.eye(3)))
    S = eval_solution(inst, sample_points(inst, 1, 0)[0])
    assert np.allclose(S.A.val, np.eye(4), atol=1e-12)
    assert np.max(np.abs(S.lam)) < 1e-12


def test_product_parallel():
    inst = product()
    for p in sample_points(inst, 3, 0):
        S = eval_solution(inst, p)
        assert tensor_norm(S.nabla_A(), S.frame, "udd") < 1e-8
        assert np.all(S.lam == 0)


def test_dtau_is_twice_omega_on_bundle():
    inst = bundle_4d()
    p = sample_points(inst, 1, 2)[0]
    fr = eval_metric(inst, p)
    d, _ = fd_derivative(lambda x: inst.fields(np.asarray(x))["tau"], p, FdStencil(step=1e-4), hessian=False)
    assert np.max(np.abs((d.T - d) - 2 * fr.omega)) < 1e-4


def test_domega_closed_on_bundle():
    inst = bundle_4d()
    p = sample_points(inst, 1, 3)[0]

    def om(x):
        f = inst.fields(np.asarray(x))
        return -f["g"] @ f["J"]

    d, _ = fd_derivative(om, p, FdStencil(step=1e-4), hessian=False)  # d[a, b, c] = ∂_c ω_ab
    cyc = d + d.transpose(1, 2, 0) + d.transpose(2, 0, 1)
    assert np.max(np.abs(cyc)) < 1e-4


def test_classify_examples():
    assert classify(Orthotoric4D(TH3, TH3, ((0.0, 1.0), (1.0, 2.0))))["chsc"]
    assert classify(orthotoric_control())["ccb"] is None
    off_root = HamiltonianBundle(thetas=(TH3,), xi_boxes=((0.0, 1.0),), constants=(ConstantEigenvalue(1.5, 1, 0.0),))
    assert classify(off_root)["ccb"] is None
    assert classify(bundle_4d(4.0))["chsc"] and not classify(bundle_4d(2.0))["chsc"]
    assert classify(bundle_6d())["ccb"]["B"] == -1.0


def test_classify_scaled():
    f = classify(Scaled(bundle_6d(), 2.0))
    assert f["ccb"]["B"] == -0.5


def test_gray_oneill_product_zero():
    inst = product()
    p = sample_points(inst, 1, 0)[0]
    assert np.all(gray_oneill(inst, p, np.ones(4), np.ones(4)) == 0)


def test_gray_oneill_against_connection():
    inst = bundle_4d()
    for p in sample_points(inst, 3, 0):
        H = horizontal_basis(inst, p)
        for i in range(H.shape[1]):
            for j in range(H.shape[1]):
                X, Y = H[:, i], H[:, j]
                lhs = 0.5 * gray_oneill(inst, p, X, Y)
                assert np.max(np.abs(lhs + horizontal_connection_vertical(inst, p, X, Y))) < 1e-6


def test_gray_oneill_rejects_vertical():
    inst = bundle_4d()
    p = sample_points(inst, 1, 0)[0]
    v = eigen_gradients(inst, p)[0]
    with pytest.raises(NonHorizontalInput):
        gray_oneill(inst, p, v, v)


def test_sampling_deterministic_and_inside():
    for inst in (space_form(), bundle_6d(), orthotoric_cubic()):
        a = sample_points(inst, 5, 42)
        b = sample_points(inst, 5, 42)
        assert all(np.array_equal(x, y) for x, y in zip(a, b))
        box = sample_box(inst)
        for p in a:
            eval_metric(inst, p)
            assert np.all(p >= box[:, 0]) and np.all(p <= box[:, 1])


def test_margin_keeps_eigenvalues_apart():
    inst = bundle_6d()
    box = inst.box()
    w = box[:2, 1] - box[:2, 0]
    for p in sample_points(inst, 20, 1):
        xi = p[:2]
        assert np.all(xi - box[:2, 0] >= 0.05 * w - 1e-12)
        assert np.all(box[:2, 1] - xi >= 0.05 * w - 1e-12)
        assert xi[1] - xi[0] >= 0.05 * w[0] - 1e-12


def test_domain_violation():
    inst = bundle_4d()
    with pytest.raises(DomainViolation):
        eval_metric(inst, [1.5, 0.0, 0.0, 0.0])


def test_empty_domain():
    with pytest.raises(EmptyDomain):
        sample_box(Orthotoric4D(TH3, TH3, ((0.0, 1.0), (1.0, 2.0)), margin=0.5))


def test_construction_errors():
    with pytest.raises(ConstructionError):
        SpaceForm(m_=0)
    with pytest.raises(ConstructionError):
        Product(factors=(SpaceForm(m_=1),), eigenvalues=(0.0, 1.0))
    with pytest.raises(ConstructionError):
        Scaled(bundle_4d(), 0.0)


def test_unwrap():
    base, s = unwrap(Scaled(Scaled(bundle_4d(), 2.0), -3.0))
    assert s == -6.0 and isinstance(base, HamiltonianBundle)

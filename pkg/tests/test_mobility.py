import numpy as np
import pytest

from kmob.catalog import bundle_4d, bundle_6d, orthotoric_control, orthotoric_cubic, product, space_form
from kmob.errors import DegenerateFit, IllConditioned, ModeMismatch, SingularA
from kmob.geometry import tensor_norm
from kmob.metrics import SolutionField, SpaceForm, eval_metric, eval_solution, lam_from_trace, sample_points
from kmob.mobility import (
    F_polynomial,
    canonical,
    cproj_pair,
    cproj_pair_at,
    estimate_B_mu,
    estimate_B_mu_fields,
    extended_system_residual,
    identity_solution,
    killing_residual_at,
    linear_combination,
    main_equation_residual,
    main_equation_residual_at,
    mobility_lower_bound,
    tilde_check,
    tilde_provider,
    tilde_solution_at,
)

ALL = [space_form, bundle_4d, bundle_6d, orthotoric_cubic, orthotoric_control, product]


def pts(inst, k=5, seed=0):
    return sample_points(inst, k, seed)


@pytest.mark.parametrize("make", ALL)
def test_identity_is_exact(make):
    inst = make()
    assert np.all(main_equation_residual(inst, pts(inst, 3), identity_solution(inst)) == 0)


@pytest.mark.parametrize("make", ALL)
def test_constructed_solution(make):
    inst = make()
    for p in pts(inst):
        S = eval_solution(inst, p)
        assert main_equation_residual_at(S) < 1e-7
        assert killing_residual_at(S) < 1e-8


def test_linear_combination_is_solution():
    inst = bundle_6d()
    pr = linear_combination(inst, [identity_solution(inst), canonical(inst)], [2.0, -0.7])
    assert np.max(main_equation_residual(inst, pts(inst), pr)) < 1e-7


def perturbed(inst, size=1e-2):
    rng = np.random.default_rng(0)
    Q0 = rng.normal(size=(inst.dim, inst.dim))

    def provide(p):
        S = eval_solution(inst, p)
        fr = S.frame
        Q = Q0 + fr.g_inv @ Q0.T @ fr.g_val
        Q = 0.5 * (Q - fr.J_val @ Q @ fr.J_val)
        A = S.A + Q * (size / np.linalg.norm(Q))
        return SolutionField(fr, A, lam_from_trace(fr.g, A))

    return provide


def test_perturbed_solution_detected():
    inst = bundle_6d()
    assert np.min(main_equation_residual(inst, pts(inst), perturbed(inst))) > 1e-3


def test_B_space_form():
    inst = space_form(2, 2.0)
    est = estimate_B_mu(inst, pts(inst, 8))
    assert est.B_spread < 1e-7
    assert abs(abs(est.B) - 0.5) < 1e-6
    assert est.B < 0


def test_B_orthotoric_cubic():
    est = estimate_B_mu(orthotoric_cubic(), pts(orthotoric_cubic(), 8))
    assert abs(abs(est.B) - 0.25) < 1e-6 and est.B_spread < 1e-7


def test_B_parallel_product():
    est = estimate_B_mu(product(), pts(product(), 4))
    assert est.B == 0.0 and np.all(np.array(est.mu) == 0.0)


def test_B_degenerate_fit():
    inst = space_form()
    with pytest.raises(DegenerateFit):
        estimate_B_mu(inst, pts(inst, 3), identity_solution(inst))
    with pytest.raises(ValueError):
        estimate_B_mu_fields([eval_solution(inst, pts(inst, 1)[0])])


@pytest.mark.parametrize("make", [bundle_4d, bundle_6d, orthotoric_cubic, space_form])
def test_extended_system_on_ccb(make):
    inst = make()
    P = pts(inst, 6)
    est = estimate_B_mu(inst, P)
    assert est.B_spread < 1e-7
    main, lam, mu = extended_system_residual(inst, est.B, P).max()
    assert main < 1e-7 and lam < 1e-7 and mu < 1e-4


def test_extended_system_parallel():
    inst = product()
    assert max(extended_system_residual(inst, 0.0, pts(inst, 3)).max()) < 1e-10


def test_extended_system_negative_control():
    inst = orthotoric_control()
    P = pts(inst, 6)
    est = estimate_B_mu(inst, P)
    assert extended_system_residual(inst, est.B, P).max()[1] > 1e-3


def test_tilde_parallel_on_product():
    inst = product()
    S = eval_solution(inst, pts(inst, 1)[0])
    T = tilde_solution_at(S, "parallel", 0.0)
    assert np.allclose(T.field.A.val, S.A.val @ S.A.val)
    assert tensor_norm(T.field.nabla_A(), S.frame, "udd") < 1e-8


def test_tilde_B0_flat():
    inst = SpaceForm(m_=2, c=0.0)
    r = tilde_check(inst, "B0", 0.0, pts(inst))
    assert np.max(r["main_residual"]) < 1e-6
    assert np.max(r["lambda_formula"]) < 1e-7
    assert np.ptp(r["mu"]) < 1e-12


def test_tilde_Bneg1_6d():
    r = tilde_check(bundle_6d(), "Bneg1", -1.0, pts(bundle_6d()))
    assert np.max(r["main_residual"]) < 1e-6
    assert np.max(r["lambda_formula"]) < 1e-7


def test_tilde_Bneg1_after_rescaling():
    inst = orthotoric_cubic()
    r = tilde_check(inst, "Bneg1", 0.25, pts(inst))
    assert r["work_scale"] == -0.25
    assert np.max(r["original_chart_residual"]) < 1e-6


def test_tilde_mode_mismatch():
    inst = bundle_6d()
    S = eval_solution(inst, pts(inst, 1)[0])
    with pytest.raises(ModeMismatch):
        tilde_solution_at(S, "B0", -1.0)
    with pytest.raises(ModeMismatch):
        tilde_solution_at(S, "parallel", -1.0)
    with pytest.raises(ModeMismatch):
        tilde_provider(inst, "Bneg1", 0.0)


def test_tilde_iterated_once_more():
    # Ã is again a solution with the same B, so the construction can be repeated
    inst = bundle_6d()
    P = pts(inst, 4)
    pr, _ = tilde_provider(inst, "Bneg1", -1.0)
    fields = [pr(p) for p in P]
    est = estimate_B_mu_fields(fields)
    assert abs(est.B + 1.0) < 1e-6
    assert max(main_equation_residual_at(S) for S in fields) < 1e-6


def test_certificate_6d():
    cert = mobility_lower_bound(bundle_6d(), pts(bundle_6d(), 6))
    assert cert.rank >= 3 and cert.max_main_eq_residual < 1e-6


def test_certificate_space_form():
    cert = mobility_lower_bound(space_form(), pts(space_form(), 6))
    assert cert.rank >= 3


def test_certificate_4d_non_chsc():
    cert = mobility_lower_bound(bundle_4d(2.0), pts(bundle_4d(), 6))
    assert cert.rank == 2 and len(cert.names) == 3
    assert cert.singular_values[2] < 1e-12 * cert.singular_values[0]


def test_F_constant():
    for make in (bundle_4d, bundle_6d, orthotoric_cubic):
        inst = make()
        P = pts(inst, 6)
        _, spread, _ = F_polynomial(inst, estimate_B_mu(inst, P).B, P)
        assert spread < 1e-6
    inst = space_form()
    P = pts(inst, 6)
    assert F_polynomial(inst, estimate_B_mu(inst, P).B, P)[1] < 1e-8


def test_F_negative_control():
    inst = orthotoric_control()
    P = pts(inst, 6)
    assert F_polynomial(inst, estimate_B_mu(inst, P).B, P)[1] > 1e-3


def test_F_ill_conditioned_nodes():
    inst = bundle_4d()
    with pytest.raises(IllConditioned):
        F_polynomial(inst, -1.0, pts(inst, 2), nodes=[0.0, 1e-7, 2e-7, 3e-7])


def test_cproj_identity():
    inst = orthotoric_cubic()
    p = pts(inst, 1)[0]
    r = cproj_pair(inst, [p], identity_solution(inst))[0]
    assert np.allclose(r.g_tilde, eval_metric(inst, p).g_val, atol=1e-14)
    assert np.all(r.Phi == 0) and r.residual == 0


def test_cproj_orthotoric():
    inst = orthotoric_cubic()
    for r in cproj_pair(inst, pts(inst, 4)):
        assert r.roundtrip < 1e-8 and r.residual < 1e-6 and r.shift > 0


def test_cproj_singular():
    inst = product()
    with pytest.raises(SingularA):
        cproj_pair_at(eval_solution(inst, pts(inst, 1)[0]), shift=0.0)

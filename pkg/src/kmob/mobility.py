"""Solution membership, the extended system, new solutions and mobility
certificates.

Point-level functions take a :class:`~kmob.metrics.SolutionField`; the
instance-level wrappers evaluate a *provider* (a callable ``point ->
SolutionField``) over a list of points and return per-point residuals so the
orchestrator can report them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import jets as jt
from .errors import DegenerateFit, IllConditioned, ModeMismatch, SingularA
from .geometry import (
    christoffel,
    covariant_derivative,
    frame_components,
    killing_residual,
    tensor_norm,
)
from .jets import FdStencil, Jet2, fd_derivative
from .metrics import (
    MetricInstance,
    Scaled,
    SolutionField,
    complex_eigenvalues,
    eval_metric,
    eval_solution,
    lam_from_trace,
    sample_box,
    unwrap,
)

Provider = Callable[[np.ndarray], SolutionField]

RANK_THRESHOLD = 1e-8


# ----------------------------------------------------------------------
# providers
def canonical(instance: MetricInstance) -> Provider:
    return lambda p: eval_solution(instance, p)


def identity_solution(instance: MetricInstance) -> Provider:
    n = instance.dim

    def provide(p):
        fr = eval_metric(instance, p)
        return SolutionField(fr, Jet2.constant(np.eye(n), n, 2), Jet2.zeros((n,), n, 2), 0.0, None)

    return provide


def linear_combination(instance: MetricInstance, providers: Sequence[Provider], coeffs) -> Provider:
    """Provider of Σ c_i S_i, re-deriving Λ from the combined trace."""

    def provide(p):
        fields = [pr(p) for pr in providers]
        fr = eval_metric(instance, p)
        A = None
        L = None
        for c, S in zip(coeffs, fields):
            A = S.A * c if A is None else A + S.A * c
            L = S.Lam * c if L is None else L + S.Lam * c
        return SolutionField(fr, A, L)

    return provide


# ----------------------------------------------------------------------
# main equation
def main_rhs(frame, lam: np.ndarray) -> np.ndarray:
    """``out[c, b, a]`` = right-hand side of the main equation for X = ∂_a."""
    g, J = frame.g_val, frame.J_val
    gl = g @ lam
    Jl = J @ lam
    gJl = g @ Jl
    gJ = g @ J  # gJ[b, a] = g(∂_b, J∂_a)
    n = g.shape[0]
    out = np.einsum("c,ba->cba", lam, g)
    out = out + np.einsum("ca,b->cba", np.eye(n), gl)
    out = out + np.einsum("c,ba->cba", Jl, gJ)
    out = out + np.einsum("ca,b->cba", J, gJl)
    return out


def main_equation_residual_at(S: SolutionField) -> float:
    diff = S.nabla_A() - main_rhs(S.frame, S.lam)
    return tensor_norm(diff, S.frame, "udd")


def main_equation_residual(instance: MetricInstance, points, provider: Provider | None = None) -> np.ndarray:
    provider = provider or canonical(instance)
    return np.array([main_equation_residual_at(provider(p)) for p in points])


def killing_residual_at(S: SolutionField) -> float:
    JL = jt.einsum("ab,b->a", S.frame.J, S.Lam)
    return killing_residual(JL, S.frame)


# ----------------------------------------------------------------------
# B and μ
@dataclass
class BmuEstimate:
    B: float
    mu: list
    fit_residual: float
    B_spread: float
    B_points: list = field(default_factory=list)
    mu_trace: list = field(default_factory=list)
    mu_agreement: float = 0.0


def fit_B_mu_at(S: SolutionField):
    """Least-squares (μ, B) in ∇Λ = μ Id + B A at one point.

    Returns ``(mu, B, residual)``; ``B`` is ``None`` when A ∝ Id there.
    """
    fr = S.frame
    E = fr.onb()
    n = fr.dim
    nl = frame_components(S.nabla_lam(), E, "ud")
    Af = frame_components(S.A.val, E, "ud")
    Id = np.eye(n)
    M = np.stack([Id.ravel(), Af.ravel()], axis=1)
    a0 = Af - np.trace(Af) / n * Id
    if np.linalg.norm(a0) <= 1e-9 * max(1.0, np.linalg.norm(Af)):
        mu = np.trace(nl) / n
        return mu, None, float(np.linalg.norm(nl - mu * Id))
    coef, *_ = np.linalg.lstsq(M, nl.ravel(), rcond=None)
    res = float(np.linalg.norm(M @ coef - nl.ravel()))
    return float(coef[0]), float(coef[1]), res


def mu_from_trace(S: SolutionField, B: float):
    """μ from the trace identity ``2mμ = tr ∇Λ − B tr A`` (value)."""
    m = S.frame.m
    return (np.trace(S.nabla_lam()) - B * np.trace(S.A.val)) / (2 * m)


def mu_jet(S: SolutionField, B: float):
    """1-jet of μ from the trace identity when Λ carries a 2-jet."""
    m = S.frame.m
    if S.Lam.order < 2:
        return Jet2(mu_from_trace(S, B))
    return (jt.trace(S.nabla_lam_jet()) - jt.trace(S.A.truncate(1)) * B) * (1.0 / (2 * m))


def estimate_B_mu_fields(fields: Sequence[SolutionField]) -> BmuEstimate:
    if len(fields) < 2:
        raise ValueError("need at least two points")
    mus, Bs, res = [], [], []
    for S in fields:
        mu, B, r = fit_B_mu_at(S)
        mus.append(mu)
        res.append(r)
        if B is not None:
            Bs.append(B)
    if not Bs:
        raise DegenerateFit("A is proportional to the identity at every point")
    B = float(np.mean(Bs))
    spread = float(np.max(np.abs(np.array(Bs) - B)))
    mtr = [float(mu_from_trace(S, B)) for S in fields]
    agree = float(np.max(np.abs(np.array(mtr) - np.array(mus))))
    return BmuEstimate(B, mus, float(np.max(res)), spread, Bs, mtr, agree)


def estimate_B_mu(instance: MetricInstance, points, provider: Provider | None = None) -> BmuEstimate:
    provider = provider or canonical(instance)
    return estimate_B_mu_fields([provider(p) for p in points])


# ----------------------------------------------------------------------
# extended system
@dataclass
class ExtendedResiduals:
    main: np.ndarray
    lam: np.ndarray
    mu: np.ndarray

    def max(self):
        return float(np.max(self.main)), float(np.max(self.lam)), float(np.max(self.mu))


def fd_step(instance: MetricInstance, rel: float = 1e-4) -> float:
    b = sample_box(instance)
    return rel * float(np.min(b[:, 1] - b[:, 0]))


def extended_system_residual(
    instance: MetricInstance,
    B: float,
    points,
    provider: Provider | None = None,
    stencil: FdStencil | None = None,
) -> ExtendedResiduals:
    """Per-point residuals of the three lines of the extended system.

    μ is taken from the trace identity; the last line is tested by central
    differences of pointwise μ values.
    """
    provider = provider or canonical(instance)
    stencil = stencil or FdStencil(step=fd_step(instance))
    r_main, r_lam, r_mu = [], [], []
    for p in points:
        S = provider(p)
        fr = S.frame
        r_main.append(main_equation_residual_at(S))
        mu = mu_from_trace(S, B)
        diff = S.nabla_lam() - mu * np.eye(fr.dim) - B * S.A.val
        r_lam.append(tensor_norm(diff, fr, "ud"))

        def mu_at(x):
            return mu_from_trace(provider(x), B)

        dmu, _ = fd_derivative(mu_at, p, stencil, hessian=False)
        target = 2.0 * B * (fr.g_val @ S.lam)
        r_mu.append(tensor_norm(dmu - target, fr, "d"))
    return ExtendedResiduals(np.array(r_main), np.array(r_lam), np.array(r_mu))


# ----------------------------------------------------------------------
# new solutions
MODES = ("parallel", "B0", "Bneg1")


def _flat_pair(frame, v: np.ndarray) -> np.ndarray:
    """Endomorphism v♭⊗v + Jv♭⊗Jv."""
    Jv = frame.J_val @ v
    return np.outer(v, frame.g_val @ v) + np.outer(Jv, frame.g_val @ Jv)


def _flat_pair_jet(frame, L: Jet2) -> Jet2:
    gL = jt.einsum("ab,b->a", frame.g.truncate(L.order), L)
    JL = jt.einsum("ab,b->a", frame.J.truncate(L.order), L)
    gJL = jt.einsum("ab,b->a", frame.g.truncate(L.order), JL)
    return jt.outer(L, gL) + jt.outer(JL, gJL)


@dataclass
class TildeField:
    field: SolutionField
    lam_formula: np.ndarray
    mu: float


def tilde_solution_at(S: SolutionField, mode: str, B: float, tol: float = 1e-6) -> TildeField:
    """New solution built from (A, Λ, μ) at one point.

    The returned field's Λ is recomputed from the trace of Ã; ``lam_formula``
    holds the closed-form prediction for comparison.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}")
    fr = S.frame
    if mode == "parallel":
        if np.linalg.norm(S.lam) > tol:
            raise ModeMismatch("parallel mode needs Λ = 0")
        if abs(B) > tol:
            raise ModeMismatch("parallel mode needs B = 0")
        At = jt.einsum("ab,bc->ac", S.A, S.A)
        lam_f = np.zeros(fr.dim)
        mu = 0.0
    elif mode == "B0":
        if abs(B) > tol:
            raise ModeMismatch(f"B0 mode needs B = 0, got {B}")
        mu = float(mu_from_trace(S, B))
        At = _flat_pair_jet(fr, S.Lam)
        lam_f = mu * S.lam
    else:
        if abs(B + 1.0) > tol:
            raise ModeMismatch(f"Bneg1 mode needs B = -1, got {B}")
        mu = float(mu_from_trace(S, B))
        At = jt.einsum("ab,bc->ac", S.A.truncate(S.Lam.order), S.A.truncate(S.Lam.order)) + _flat_pair_jet(fr, S.Lam)
        lam_f = S.A.val @ S.lam + mu * S.lam
    Lt = lam_from_trace(fr.g, At)
    return TildeField(SolutionField(fr, At, Lt), lam_f, mu)


def choose_mode(B: float, lam_norm: float, tol: float = 1e-6) -> str:
    if lam_norm <= tol:
        return "parallel"
    if abs(B) <= tol:
        return "B0"
    return "Bneg1"


def tilde_provider(instance: MetricInstance, mode: str, B: float, tol: float = 1e-6) -> tuple[Provider, MetricInstance]:
    """Provider of Ã on the original chart.

    For ``Bneg1`` with ``B ≠ −1`` the metric is rescaled by ``−B``, every
    field is re-derived there, and Ã (an endomorphism) is carried back to
    the original chart where its Λ is again recomputed from the trace.
    """
    work = instance
    Bw = B
    if mode == "Bneg1" and abs(B + 1.0) > tol:
        if abs(B) <= tol:
            raise ModeMismatch("Bneg1 mode needs B != 0")
        work = Scaled(instance, -B)
        Bw = -1.0

    def provide(p):
        S = eval_solution(work, p)
        T = tilde_solution_at(S, mode, Bw, tol)
        if work is instance:
            return T.field
        fr = eval_metric(instance, p)
        At = T.field.A
        return SolutionField(fr, At, lam_from_trace(fr.g, At))

    return provide, work


def tilde_check(instance: MetricInstance, mode: str, B: float, points, tol: float = 1e-6) -> dict:
    """Main-equation residual of Ã and the Λ̃ formula deviation per point."""
    provide, work = tilde_provider(instance, mode, B, tol)
    Bw = -1.0 if work is not instance else B
    res, dev, mus = [], [], []
    for p in points:
        S = eval_solution(work, p)
        T = tilde_solution_at(S, mode, Bw, tol)
        res.append(main_equation_residual_at(T.field))
        dev.append(float(np.sqrt(max(T.field.frame.sign * T.field.frame.inner(
            T.field.lam - T.lam_formula, T.field.lam - T.lam_formula), 0.0))))
        mus.append(T.mu)
    return {
        "work_scale": getattr(work, "s", 1.0),
        "main_residual": np.array(res),
        "lambda_formula": np.array(dev),
        "mu": np.array(mus),
        "original_chart_residual": main_equation_residual(instance, points, provide),
    }


# ----------------------------------------------------------------------
# mobility certificate
@dataclass
class MobilityCertificate:
    names: list
    gram: np.ndarray
    singular_values: np.ndarray
    rank: int
    residuals: dict
    max_main_eq_residual: float
    threshold: float = RANK_THRESHOLD
    notes: list = field(default_factory=list)
    point_residuals: dict = field(default_factory=dict)


def certificate_from(names, providers, points, include_tol: float = 1e-6) -> MobilityCertificate:
    vals, residuals, kept, notes, per_point = [], {}, [], [], {}
    for name, pr in zip(names, providers):
        fields = [pr(p) for p in points]
        rp = [main_equation_residual_at(S) for S in fields]
        r = max(rp)
        residuals[name] = r
        per_point[name] = rp
        if r >= include_tol:
            notes.append(f"{name} excluded: main-equation residual {r:.3e}")
            continue
        kept.append(name)
        vals.append(np.concatenate([frame_components(S.A.val, S.frame.onb(), "ud").ravel() for S in fields]))
    if not vals:
        return MobilityCertificate(kept, np.zeros((0, 0)), np.zeros(0), 0, residuals, 0.0, notes=notes, point_residuals=per_point)
    V = np.stack(vals)
    G = V @ V.T
    sv = np.linalg.svd(G, compute_uv=False)
    rank = int(np.sum(sv > RANK_THRESHOLD * sv[0])) if sv[0] > 0 else 0
    mx = max(residuals[k] for k in kept)
    return MobilityCertificate(kept, G, sv, rank, residuals, mx, notes=notes, point_residuals=per_point)


def mobility_lower_bound(instance: MetricInstance, points, tol: float = 1e-6) -> MobilityCertificate:
    """Certificate built from {Id, A, Ã} with the mode dictated by B."""
    canon = canonical(instance)
    S0 = [canon(p) for p in points]
    lam_norm = max(float(np.linalg.norm(S.lam)) for S in S0)
    names = ["Id", "A"]
    providers: list = [identity_solution(instance), canon]
    notes = []
    try:
        if lam_norm <= tol:
            B = 0.0
        else:
            B = estimate_B_mu_fields(S0).B
        mode = choose_mode(B, lam_norm, tol)
        pr, _ = tilde_provider(instance, mode, B, tol)
        names.append(f"A_tilde[{mode}]")
        providers.append(pr)
    except (DegenerateFit, ModeMismatch) as exc:
        notes.append(f"no new solution: {exc}")
    cert = certificate_from(names, providers, points, tol)
    cert.notes.extend(notes)
    return cert


# ----------------------------------------------------------------------
# invariant polynomial
def char_poly_complex(A: np.ndarray, t: float) -> float:
    return float(np.prod(t - complex_eigenvalues(A)))


def F_values_at(S: SolutionField, B: float, mu: float, nodes: np.ndarray) -> np.ndarray:
    """F(t) = −4(Bt + μ) p_A(t) + g(2JΛ, J grad p_A(t)) at the nodes.

    With ∇Λ = μ Id + B A and Λ = ¼ grad tr A this combination has constant
    coefficients; the opposite sign of the last term does not.
    """
    A = S.A.val
    dA = S.A.grad  # dA[c, b, a] = ∂_a A^c_b
    n = A.shape[0]
    out = []
    for t in nodes:
        pa = char_poly_complex(A, t)
        R = np.linalg.inv(t * np.eye(n) - A)
        dpa = -0.5 * pa * np.einsum("bc,cba->a", R, dA)
        # g(2JΛ, J grad p) = 2 dp(Λ)
        out.append(-4.0 * (B * t + mu) * pa + 2.0 * dpa @ S.lam)
    return np.array(out)


def F_nodes(eigs: np.ndarray, count: int) -> np.ndarray:
    lo, hi = float(np.min(eigs)) - 1.0, float(np.max(eigs)) + 1.0
    k = np.arange(count)
    nodes = 0.5 * (lo + hi) + 0.5 * (hi - lo) * np.cos((2 * k + 1) * np.pi / (2 * count))
    for _ in range(20):
        if np.min(np.abs(nodes[:, None] - eigs[None, :])) > 1e-3 * (hi - lo):
            break
        nodes = nodes + 0.0137 * (hi - lo)
    return nodes


def F_polynomial(instance: MetricInstance, B: float, points, provider: Provider | None = None, nodes=None):
    """Monomial coefficients of F per point and their spread.

    ``F`` has degree ``m + 1`` so ``m + 2`` nodes are used.
    """
    provider = provider or canonical(instance)
    m = instance.m
    fields = [provider(p) for p in points]
    if nodes is None:
        eigs = np.concatenate([complex_eigenvalues(S.A.val) for S in fields])
        nodes = F_nodes(eigs, m + 2)
    nodes = np.asarray(nodes, dtype=float)
    V = np.vander(nodes, m + 2, increasing=True)
    cond = np.linalg.cond(V)
    if cond > 1e10:
        raise IllConditioned(f"node matrix condition {cond:.2e}")
    coeffs = []
    for S in fields:
        mu = float(mu_from_trace(S, B))
        vals = F_values_at(S, B, mu, nodes)
        coeffs.append(np.linalg.solve(V, vals))
    C = np.array(coeffs)
    spread = float(np.max(np.max(C, axis=0) - np.min(C, axis=0)))
    per_point = np.max(np.abs(C - C.mean(axis=0)), axis=1)
    return C, spread, per_point


# ----------------------------------------------------------------------
# c-projective pairs
@dataclass
class CprojResult:
    g_tilde: np.ndarray
    Phi: np.ndarray
    residual: float
    roundtrip: float
    shift: float


def cproj_pair_at(S: SolutionField, shift: float | None = None) -> CprojResult:
    """Build g̃ = (det A)^{-1/2} g A^{-1} and test the c-projective pattern."""
    fr = S.frame
    n, m = fr.dim, fr.m
    A = S.A.truncate(1)
    ev = np.linalg.eigvals(A.val).real
    if shift is None:
        shift = 0.0 if np.min(ev) > 0.1 else 1.0 - float(np.min(ev))
    As = A + np.eye(n) * shift
    d0 = float(np.linalg.det(As.val))
    if d0 < 1e-10:
        raise SingularA(f"det A = {d0:.3e} after shifting")
    detA = jt.det(As)
    g = fr.g.truncate(1)
    gt = jt.einsum("ab,bc->ac", g, jt.inv(As)) * jt.reciprocal(jt.sqrt(detA))
    gt = (gt + gt.T) * 0.5
    # Γ̃ from the 1-jet of g̃
    gti = np.linalg.inv(gt.val)
    dg = gt.grad
    s = np.einsum("bda->dab", dg) + np.einsum("adb->dab", dg) - np.einsum("abd->dab", dg)
    gam_t = 0.5 * np.einsum("cd,dab->cab", gti, s)
    D = gam_t - fr.gamma  # D[c, a, b]
    Phi = np.einsum("cac->a", D) / (2 * (m + 1))
    J = fr.J_val
    JtPhi = J.T @ Phi  # (JᵀΦ)_a = Φ(J∂_a)
    I = np.eye(n)
    pattern = (
        np.einsum("a,cb->cab", Phi, I)
        + np.einsum("b,ca->cab", Phi, I)
        - np.einsum("a,cb->cab", JtPhi, J)
        - np.einsum("b,ca->cab", JtPhi, J)
    )
    res = tensor_norm(D - pattern, fr, "udd")
    # A(g, g̃) = (det g̃ / det g)^{1/(2(m+1))} g̃^{-1} g
    ratio = np.linalg.det(gt.val) / np.linalg.det(fr.g_val)
    A_back = ratio ** (1.0 / (2 * (m + 1))) * gti @ fr.g_val
    rt = tensor_norm(A_back - As.val, fr, "ud")
    return CprojResult(gt.val, Phi, res, rt, shift)


def cproj_pair(instance: MetricInstance, points, provider: Provider | None = None, shift: float | None = None):
    provider = provider or canonical(instance)
    return [cproj_pair_at(provider(p), shift) for p in points]

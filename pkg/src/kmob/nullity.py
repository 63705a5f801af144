"""Constant holomorphic curvature model tensor, B-nullity spaces and the
curvature conditions equivalent to the extended system."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CoincidentEigenvalues, ZeroVector
from .geometry import PointFrame, frame_components, spectral_projectors, tensor_norm
from .metrics import (
    MetricInstance,
    Polynomial,
    SolutionField,
    eigen_gradients,
    eval_solution,
)

NULLITY_THRESHOLD = 1e-7
KERNEL_THRESHOLD = 1e-8
GRID_POINTS = 41


# ----------------------------------------------------------------------
# model tensor
def K_components(g: np.ndarray, J: np.ndarray) -> np.ndarray:
    """``K[a, b, d, c]`` = d-component of K(∂_a, ∂_b)∂_c."""
    n = g.shape[0]
    I = np.eye(n)
    om = J.T @ g  # om[a, b] = g(J∂_a, ∂_b)
    return 0.25 * (
        np.einsum("bc,da->abdc", g, I)
        - np.einsum("ac,db->abdc", g, I)
        + np.einsum("bc,da->abdc", om, J)
        - np.einsum("ac,db->abdc", om, J)
        - 2.0 * np.einsum("ab,dc->abdc", om, J)
    )


def K_tensor(frame: PointFrame, X, Y) -> np.ndarray:
    """Endomorphism K(X, Y)."""
    Kc = K_components(frame.g_val, frame.J_val)
    return np.einsum("a,b,abdc->dc", X, Y, Kc)


def Z_components(frame: PointFrame, B: float) -> np.ndarray:
    return frame.rend + 4.0 * B * K_components(frame.g_val, frame.J_val)


def Z_B(frame: PointFrame, B: float, X, Y) -> np.ndarray:
    return np.einsum("a,b,abdc->dc", X, Y, Z_components(frame, B))


def _onb_components(T: np.ndarray, E: np.ndarray) -> np.ndarray:
    """Components of a (2 lower, 1 upper, 1 lower) curvature-type tensor."""
    return frame_components(T, E, "ddud")


# ----------------------------------------------------------------------
# nullity
@dataclass
class NullityResult:
    B: float
    dimension: int
    basis: list
    singular_values: list
    threshold: float = 0.0
    j_invariance: float = 0.0


def _stack(T: np.ndarray) -> np.ndarray:
    """Rows: (a < b, d); columns: c."""
    n = T.shape[0]
    iu = np.triu_indices(n, 1)
    return T[iu].reshape(-1, n)


def nullity_space(frame: PointFrame, B: float) -> NullityResult:
    """Kernel of Z ↦ {Z_B(e_a, e_b)Z} computed in an orthonormal frame.

    The threshold is relative to the larger of the curvature and model
    tensor scales so that an (almost) vanishing Z_B yields full nullity.
    """
    E = frame.onb()
    R = _onb_components(frame.rend, E)
    Km = _onb_components(K_components(frame.g_val, frame.J_val), E)
    Z = R + 4.0 * B * Km
    M = _stack(Z)
    _, s_full, vt = np.linalg.svd(M)
    scale = max(
        s_full[0] if s_full.size else 0.0,
        np.linalg.norm(_stack(R), 2),
        np.linalg.norm(_stack(4.0 * B * Km), 2),
    )
    thr = NULLITY_THRESHOLD * scale
    n = frame.dim
    svals = np.zeros(n)
    svals[: s_full.size] = s_full
    null = [i for i in range(n) if svals[i] <= thr]
    basis = [E @ vt[i] for i in null]
    jinv = 0.0
    if basis:
        Bm = np.stack(basis, axis=1)
        JB = frame.J_val @ Bm
        coef, *_ = np.linalg.lstsq(Bm, JB, rcond=None)
        jinv = float(np.linalg.norm(Bm @ coef - JB) / max(np.linalg.norm(JB), 1e-300))
    return NullityResult(B, len(null), basis, [float(s) for s in svals], float(thr), jinv)


def span_residual(basis: list, v: np.ndarray, frame: PointFrame) -> float:
    """Relative g-norm of the part of ``v`` orthogonal to span(basis)."""
    nv = np.sqrt(max(frame.sign * frame.inner(v, v), 0.0))
    if nv == 0:
        return 0.0
    if not basis:
        return 1.0
    Bm = np.stack(basis, axis=1)
    G = frame.sign * Bm.T @ frame.g_val @ Bm
    rhs = frame.sign * Bm.T @ frame.g_val @ v
    w = v - Bm @ np.linalg.solve(G, rhs)
    return float(np.sqrt(max(frame.sign * frame.inner(w, w), 0.0)) / nv)


def b_grid(center: float, half_width: float = 1.0, count: int = GRID_POINTS) -> np.ndarray:
    return np.linspace(center - half_width, center + half_width, count)


def nullity_scan(frame: PointFrame, grid) -> list[tuple[float, int]]:
    return [(float(b), nullity_space(frame, float(b)).dimension) for b in grid]


# ----------------------------------------------------------------------
# curvature identities
def _frame_pairs(frame: PointFrame):
    E = frame.onb()
    n = frame.dim
    for a in range(n):
        for b in range(a + 1, n):
            yield E[:, a], E[:, b]


def integrability_residual_at(S: SolutionField) -> float:
    """max over frame pairs of ‖[R(X,Y), A] + 4[K(X,Y), ∇Λ]‖."""
    fr = S.frame
    A = S.A.val
    NL = S.nabla_lam()
    out = 0.0
    for X, Y in _frame_pairs(fr):
        R = fr.curvature(X, Y)
        K = K_tensor(fr, X, Y)
        T = R @ A - A @ R + 4.0 * (K @ NL - NL @ K)
        out = max(out, tensor_norm(T, fr, "ud"))
    return out


def integrability_residual(instance: MetricInstance, point, S: SolutionField | None = None) -> float:
    if S is None:
        S = eval_solution(instance, point)
    return integrability_residual_at(S)


def second_identity_residual(S: SolutionField, B: float, mu: float) -> float:
    """max ‖[K(X,Y), ∇Λ − BA − μ Id] + ¼[Z_B(X,Y), A]‖ for arbitrary B, μ."""
    fr = S.frame
    A = S.A.val
    D = S.nabla_lam() - B * A - mu * np.eye(fr.dim)
    Zc = Z_components(fr, B)
    out = 0.0
    for X, Y in _frame_pairs(fr):
        K = K_tensor(fr, X, Y)
        Z = np.einsum("a,b,abdc->dc", X, Y, Zc)
        T = K @ D - D @ K + 0.25 * (Z @ A - A @ Z)
        out = max(out, tensor_norm(T, fr, "ud"))
    return out


def eigenvalue_gradients(S: SolutionField, tol: float = 1e-8) -> list[np.ndarray]:
    """Gradients of the distinct eigenvalues of A via spectral projectors.

    Each eigenvalue cluster contributes ``grad λ = g⁻¹ tr(P ∂A) / rank P``.
    """
    out = []
    for _, P in spectral_projectors(S.A.val, S.frame.g_val, tol):
        k = round(np.trace(P))
        d = np.einsum("bc,cba->a", P, S.A.grad) / k
        out.append(S.frame.g_inv @ d)
    return out


def equivalence_battery_at(S: SolutionField, B: float, grads=None) -> dict:
    fr = S.frame
    A = S.A.val
    n = fr.dim
    Zc = Z_components(fr, B)
    E = fr.onb()
    c1 = 0.0
    c6 = 0.0
    if grads is None:
        grads = eigenvalue_gradients(S)
    for X, Y in _frame_pairs(fr):
        Z = np.einsum("a,b,abdc->dc", X, Y, Zc)
        c1 = max(c1, tensor_norm(Z @ A - A @ Z, fr, "ud"))
        for v in grads:
            w = Z @ v
            c6 = max(c6, float(np.sqrt(max(fr.sign * fr.inner(w, w), 0.0))))
    D = S.nabla_lam() - B * A
    c2 = tensor_norm(D - np.trace(D) / n * np.eye(n), fr, "ud")
    JL = fr.J_val @ S.lam
    c4 = 0.0
    for a in range(n):
        Z = np.einsum("a,b,abdc->dc", E[:, a], JL, Zc)
        c4 = max(c4, tensor_norm(Z, fr, "ud"))
    return {"commutator": c1, "extended": c2, "killing_nullity": c4, "eigen_gradients": c6}


def equivalence_battery(instance: MetricInstance, B: float, points, provider=None) -> dict:
    """Per-point residuals of the four equivalent curvature conditions."""
    out = {k: [] for k in ("commutator", "extended", "killing_nullity", "eigen_gradients")}
    for p in points:
        S = provider(p) if provider else eval_solution(instance, p)
        r = equivalence_battery_at(S, B)
        for k, v in r.items():
            out[k].append(v)
    return {k: np.array(v) for k, v in out.items()}


# ----------------------------------------------------------------------
# bracket kernel
def hermitian_basis(m: int) -> list[np.ndarray]:
    """Orthonormal basis of endomorphisms commuting with the standard J and
    symmetric in the standard metric."""
    n = 2 * m
    J0 = np.zeros((n, n))
    J0[m:, :m] = np.eye(m)
    J0[:m, m:] = -np.eye(m)
    cands = []
    for i in range(n):
        for j in range(i, n):
            S = np.zeros((n, n))
            S[i, j] = S[j, i] = 1.0
            cands.append(0.5 * (S - J0 @ S @ J0))
    M = np.stack([c.ravel() for c in cands], axis=1)
    U, s, _ = np.linalg.svd(M, full_matrices=False)
    r = int(np.sum(s > 1e-10 * s[0]))
    return [U[:, k].reshape(n, n) for k in range(r)]


@dataclass
class KbracketCertificate:
    kernel_dim: int
    singular_values: list
    identity_distance: float
    generator: np.ndarray = field(repr=False, default=None)


def verify_Kbracket_kernel(frame: PointFrame, Z) -> KbracketCertificate:
    """Kernel of Q ↦ {[K(e_a, Z), Q]} on hermitian endomorphisms."""
    Z = np.asarray(Z, dtype=float)
    if not frame.sign * frame.inner(Z, Z) > 1e-24:
        raise ZeroVector("Z must be nonzero")
    E = frame.onb()
    Einv = np.linalg.inv(E)
    n = frame.dim
    Kc = _onb_components(K_components(frame.g_val, frame.J_val), E)
    z = Einv @ Z
    Ks = [np.einsum("b,bdc->dc", z, Kc[a]) for a in range(n)]
    basis = hermitian_basis(frame.m)
    cols = []
    for Q in basis:
        cols.append(np.concatenate([(K @ Q - Q @ K).ravel() for K in Ks]))
    M = np.stack(cols, axis=1)
    _, s, vt = np.linalg.svd(M)
    sv = np.zeros(len(basis))
    sv[: s.size] = s
    thr = KERNEL_THRESHOLD * max(sv[0], 1e-300)
    ker = [i for i in range(len(basis)) if sv[i] <= thr]
    dist = float("nan")
    gen = None
    if ker:
        coef = vt[ker[0]]
        Qf = sum(c * Q for c, Q in zip(coef, basis))
        gen = E @ Qf @ Einv
        dist = float(np.linalg.norm(Qf - np.trace(Qf) / n * np.eye(n)) / np.linalg.norm(Qf))
    return KbracketCertificate(len(ker), [float(v) for v in sv], dist, gen)


# ----------------------------------------------------------------------
# explicit four-dimensional formulas
def b_explicit_4d(F1: Polynomial, F2: Polynomial, xi1: float, xi2: float) -> tuple[float, float]:
    """B from the two profile functions and the residual of ∂B/∂ξ₂ = 0."""
    d = xi1 - xi2
    if abs(d) < 1e-12:
        raise CoincidentEigenvalues("ξ1 and ξ2 must differ")
    # a shared part of degree <= 2 contributes exactly zero to both formulas
    low = [F1.coef(k) if F1.coef(k) == F2.coef(k) else 0.0 for k in range(3)]
    F1 = Polynomial(tuple(0.0 if k < 3 and low[k] else c for k, c in enumerate(F1.coefficients)))
    F2 = Polynomial(tuple(0.0 if k < 3 and low[k] else c for k, c in enumerate(F2.coefficients)))
    f1, f2 = F1(xi1), F2(xi2)
    d1, d2 = F1.deriv()(xi1), F2.deriv()(xi2)
    dd2 = F2.deriv(2)(xi2)
    B = ((d1 + d2) * d - 2.0 * (f1 - f2)) / (4.0 * d ** 3)
    res = abs(dd2 * d ** 2 + 2.0 * (d1 + 2.0 * d2) * d - 6.0 * (f1 - f2))
    return float(B), float(res)


def fibre_hsc(frame: PointFrame, grads: list[np.ndarray]) -> list[float]:
    """Holomorphic sectional curvature along each gradient direction."""
    from .geometry import holomorphic_sectional_curvature

    return [holomorphic_sectional_curvature(frame, v) for v in grads]


def fibre_gradients(instance: MetricInstance, point) -> list[np.ndarray]:
    return eigen_gradients(instance, point)

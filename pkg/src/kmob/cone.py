"""Complex cone over a B = −1 metric, the parallel endomorphism built from a
solution, and the eigenvalue bookkeeping between cone and base.

Cone charts use coordinates ``(r, t, x)`` where ``x`` are the base
coordinates, so the cone has dimension ``dim(base) + 2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import bisect

from . import jets as jt
from .errors import (
    DomainViolation,
    DuplicateEigenvalues,
    InvalidDecomposition,
    LengthMismatch,
    MissingPotential,
    NegativeSquare,
    NotOnLevelSet,
    WrongB,
)
from .geometry import (
    PointFrame,
    covariant_derivative,
    killing_residual,
    make_frame,
    spectral_projectors,
    tensor_norm,
)
from .jets import Jet2
from .metrics import (
    MetricInstance,
    Polynomial,
    complex_eigenvalues,
    eval_fields,
    eval_solution,
    sample_points,
)
from .mobility import estimate_B_mu_fields, mu_jet

R_BAND = (0.5, 2.0)
T_BAND = (-1.0, 1.0)
B_TOL = 1e-6


# ----------------------------------------------------------------------
# cone chart
def embed(j, offset: int, nvar: int) -> Jet2:
    """Re-express a jet in ``nvar`` variables, its own variables occupying
    positions ``offset, offset + 1, ...``."""
    j = j if isinstance(j, Jet2) else Jet2(np.asarray(j, dtype=float))
    val = np.array(j.val, dtype=float)
    S = val.shape
    grad = hess = None
    if j.grad is not None:
        k = j.grad.shape[-1]
        grad = np.zeros(S + (nvar,))
        grad[..., offset:offset + k] = j.grad
        if j.hess is not None:
            hess = np.zeros(S + (nvar, nvar))
            hess[..., offset:offset + k, offset:offset + k] = j.hess
    return Jet2(val, grad, hess)


@dataclass
class ConeInstance:
    """Cone ``dr² + r²(φ² + g)`` over a base chart.

    With the engine's conventions (ω = g(J·,·), dτ = 2ω) the connection form
    is ``φ = dt + τ``; the opposite sign gives a cone on which Ĵ is not
    parallel.
    """

    base: MetricInstance
    r_band: tuple = R_BAND
    t_band: tuple = T_BAND

    @property
    def dim(self) -> int:
        return self.base.dim + 2

    def split(self, point):
        p = np.asarray(point, dtype=float)
        if p.shape != (self.dim,):
            raise DomainViolation(f"cone point must have {self.dim} coordinates")
        if not p[0] > 0:
            raise DomainViolation("r must be positive")
        return p[0], p[1], p[2:]

    def base_fields(self, x) -> dict:
        f = eval_fields(self.base, x)
        if f.get("tau") is None:
            raise MissingPotential("base instance provides no potential τ")
        return f

    def fields(self, point, f=None) -> dict:
        """2-jets of ĝ, Ĵ and φ at a cone point."""
        r0, _, x = self.split(point)
        N = self.dim
        n = N - 2
        f = f or self.base_fields(x)
        X = Jet2.variables(np.asarray(point, dtype=float))
        r = X[0]
        g = embed(f["g"], 2, N)
        J = embed(jt.as_jet(f["J"], n, 2), 2, N)
        tau = embed(jt.as_jet(f["tau"], n, 2), 2, N)
        phi = Jet2.zeros((N,), N, 2)
        phi[1] = 1.0
        phi[2:] = tau
        inner = jt.outer(phi, phi)
        blk = Jet2.zeros((N, N), N, 2)
        blk[2:, 2:] = g
        gh = (inner + blk) * (r * r)
        gh = gh + Jet2.constant(np.diag([1.0] + [0.0] * (N - 1)), N, 2)
        Jh = Jet2.zeros((N, N), N, 2)
        Jh[1, 0] = jt.reciprocal(r)
        Jh[0, 1] = -r
        Jh[0, 2:] = tau * (-1.0) * r
        # horizontal lift X ↦ X − τ(X)∂_t
        Jh[1, 2:] = jt.einsum("e,ex->x", tau, J) * -1.0
        Jh[2:, 2:] = J
        return {"g": gh, "J": Jh, "phi": phi, "r": r, "base": f}

    def frame(self, point) -> PointFrame:
        f = self.fields(point)
        fr = make_frame(point, f["g"], f["J"], None, fields=f)
        if np.min(np.linalg.eigvalsh(fr.g_val)) <= 0:
            raise DomainViolation("cone metric not positive definite")
        return fr

    def sample(self, count: int, seed: int = 0, r_fixed: float | None = None) -> list[np.ndarray]:
        """Cone points: base Halton points with (r, t) drawn from the bands."""
        rng = np.random.default_rng(seed)
        xs = sample_points(self.base, count, seed)
        out = []
        for x in xs:
            r = r_fixed if r_fixed is not None else rng.uniform(*self.r_band)
            t = rng.uniform(*self.t_band)
            out.append(np.concatenate([[r, t], x]))
        return out


def build_cone(base: MetricInstance, r_band=R_BAND, t_band=T_BAND) -> ConeInstance:
    probe = sample_points(base, 1, 0)[0]
    if eval_fields(base, probe).get("tau") is None:
        raise MissingPotential("base instance provides no potential τ")
    return ConeInstance(base, tuple(r_band), tuple(t_band))


def cone_audit(cone: ConeInstance, point) -> dict:
    """Residuals of Ĵ² = −Id, ∇̂Ĵ = 0, ∇̂C = Id and the Killing property of
    K = ½ Ĵ grad r²."""
    fr = cone.frame(point)
    N = cone.dim
    Jh = fr.J
    r = fr.extras["fields"]["r"]
    C = Jet2.zeros((N,), N, 2)
    C[0] = r
    dC = covariant_derivative(C, fr.gamma, "vector")
    r2 = r * r
    grad_r2 = jt.matmul(jt.inv(fr.g.truncate(1)), r2.deriv())
    K = jt.matmul(Jh.truncate(1), grad_r2) * 0.5
    return {
        "J_squared": float(np.max(np.abs(Jh.val @ Jh.val + np.eye(N)))),
        "nabla_J": tensor_norm(covariant_derivative(Jh, fr.gamma, "endo"), fr, "udd"),
        "cone_field": tensor_norm(dC - np.eye(N), fr, "ud"),
        "moment_killing": killing_residual(K, fr),
    }


def cone_curvature_norm(cone: ConeInstance, point) -> float:
    fr = cone.frame(point)
    return tensor_norm(fr.rend, fr, "ddud")


# ----------------------------------------------------------------------
# parallel endomorphism
def _sym(a, b):
    return jt.outer(a, b) + jt.outer(b, a)


def hatA_bilinear(cone: ConeInstance, point, A, Lam, mu, f=None):
    """Lowered Â at a cone point from base jets (A, Λ, μ) in base variables.

    ``α⊙β`` is the symmetrised product ``α⊗β + β⊗α``.
    """
    r0, _, x = cone.split(point)
    N = cone.dim
    n = N - 2
    cf = cone.fields(point, f)
    bf = cf["base"]
    r = cf["r"]
    phi = cf["phi"]
    order = min(A.order, Lam.order, mu.order if isinstance(mu, Jet2) else 2)
    g = embed(bf["g"], 2, N).truncate(order)
    J = embed(jt.as_jet(bf["J"], n, 2), 2, N).truncate(order)
    A = embed(A, 2, N).truncate(order)
    L = embed(Lam, 2, N).truncate(order)
    mu = embed(mu if isinstance(mu, Jet2) else Jet2(np.asarray(float(mu))), 2, N)
    mu = mu.truncate(order)
    r = r.truncate(order)
    phi = phi.truncate(order)
    lam_flat = jt.einsum("ab,b->a", g, L)
    lam_J = jt.einsum("e,ex->x", lam_flat, J)  # Λ♭(J·)
    dr = Jet2.constant(np.eye(N)[0], N, order)
    lamf = Jet2.zeros((N,), N, order)
    lamf[2:] = lam_flat
    lamJ = Jet2.zeros((N,), N, order)
    lamJ[2:] = lam_J
    gA = Jet2.zeros((N, N), N, order)
    gA[2:, 2:] = jt.einsum("ca,cy->ay", A, g)
    b = jt.outer(dr, dr) * mu - _sym(dr, lamf) * r
    b = b + (jt.outer(phi, phi) * mu + _sym(phi, lamJ) + gA) * (r * r)
    return b, cf


@dataclass
class HatAField:
    point: np.ndarray
    hatA: Jet2
    frame: PointFrame
    lowered: np.ndarray


def _base_solution(base: MetricInstance, x, B: float = -1.0):
    S = eval_solution(base, x)
    Lam = S.Lam
    if Lam.order >= 2:
        mu = mu_jet(S, B)
    else:
        # 1-jet of μ from ∇μ = 2BΛ♭ when Λ carries no second derivatives
        from .mobility import mu_from_trace

        val = float(mu_from_trace(S, B))
        mu = Jet2(np.asarray(val), 2.0 * B * (S.frame.g_val @ S.lam), None)
    return S, mu


def check_B_minus_one(base: MetricInstance, points) -> float:
    fields = [eval_solution(base, p) for p in points]
    B = estimate_B_mu_fields(fields).B
    if abs(B + 1.0) > B_TOL:
        raise WrongB(f"base solution has B = {B:.6g}, the cone needs B = -1")
    return B


def hatA_from_solution(cone: ConeInstance, point, A=None, Lam=None, mu=None) -> HatAField:
    """Â = ĝ⁻¹ b at a cone point.

    Without explicit ``(A, Λ, μ)`` the base instance's own solution is used;
    its B must already be −1 (see :func:`check_B_minus_one`).
    """
    _, _, x = cone.split(point)
    if A is None:
        S, mu = _base_solution(cone.base, x)
        A, Lam = S.A, S.Lam
    b, cf = hatA_bilinear(cone, point, A, Lam, mu)
    fr = make_frame(point, cf["g"], cf["J"], None, fields=cf)
    gh_inv = jt.inv(cf["g"].truncate(b.order))
    hatA = jt.matmul(gh_inv, b)
    return HatAField(np.asarray(point, dtype=float), hatA, fr, b.val)


@dataclass
class ParallelReport:
    max_residual: float
    residuals: list
    eigenvalues: list
    eigen_spread: float
    hermitian: float


def parallel_residual(cone: ConeInstance, points, build=None) -> ParallelReport:
    """max ‖∇̂Â‖ over cone points and the spread of Â's eigenvalues."""
    build = build or (lambda p: hatA_from_solution(cone, p))
    res, eigs, herm = [], [], 0.0
    for p in points:
        H = build(p)
        fr = H.frame
        if H.hatA.order < 1:
            raise ValueError("Â needs a 1-jet for parallelism")
        res.append(tensor_norm(covariant_derivative(H.hatA, fr.gamma, "endo"), fr, "udd"))
        Av = H.hatA.val
        eigs.append(np.sort(np.linalg.eigvals(Av).real))
        gA = fr.g_val @ Av
        herm = max(herm, tensor_norm(gA - gA.T, fr, "dd"), tensor_norm(Av @ fr.J_val - fr.J_val @ Av, fr, "ud"))
    E = np.array(eigs)
    spread = float(np.max(np.ptp(E, axis=0))) if len(E) else 0.0
    return ParallelReport(float(max(res)), res, E.mean(axis=0).tolist(), spread, herm)


# ----------------------------------------------------------------------
# eigenvalue bookkeeping
def group_eigenvalues(values, tol: float = 1e-7) -> tuple[list[float], list[int]]:
    """Distinct values and complex multiplicities from a real spectrum in
    which each complex eigenvalue appears twice."""
    v = np.sort(np.asarray(values, dtype=float))
    C, mult = [], []
    i = 0
    while i < len(v):
        j = i + 1
        while j < len(v) and abs(v[j] - v[i]) <= tol * max(1.0, abs(v[i])):
            j += 1
        C.append(float(np.mean(v[i:j])))
        mult.append((j - i) // 2)
        i = j
    return C, mult


def _check_distinct(C):
    C = np.asarray(C, dtype=float)
    if len(np.unique(C)) != len(C):
        raise DuplicateEigenvalues("eigenvalues must be distinct")
    return C


def char_poly_relation(C, mults, r_values, t):
    """p_A(t) = r⁻² ∏(t − C_i)^{m_i − 1} Σ_i r_i² ∏_{j≠i}(t − C_j)."""
    C = list(C)
    r2 = [ri * ri for ri in r_values]
    tot = sum(r2)
    if not tot > 0:
        raise ValueError("Σ r_i² must be positive")
    pre = 1.0
    for c, m in zip(C, mults):
        pre = pre * (t - c) ** (m - 1)
    s = 0.0
    for i, ri in enumerate(r2):
        prod = 1.0
        for j, c in enumerate(C):
            if j != i:
                prod = prod * (t - c)
        s = s + ri * prod
    return pre * s / tot


def nc_roots(C, r2, tol: float = 1e-12) -> np.ndarray:
    """Roots of Σ r_I² ∏_{J≠I}(t − C_J) by bisection in each gap."""
    C = _check_distinct(C)

    def h(t):
        return sum(w * np.prod([t - c for j, c in enumerate(C) if j != i]) for i, w in enumerate(r2))

    roots = []
    for a, b in zip(C[:-1], C[1:]):
        fa, fb = h(a), h(b)
        if fa == 0:
            roots.append(float(a))
        elif fb == 0:
            roots.append(float(b))
        else:
            roots.append(bisect(h, a, b, xtol=tol, rtol=4 * np.finfo(float).eps))
    return np.array(roots)


def interlacing_check(C, xi) -> bool:
    C = np.asarray(C, dtype=float)
    xi = np.asarray(xi, dtype=float)
    if len(xi) != len(C) - 1:
        raise LengthMismatch(f"need {len(C) - 1} values between {len(C)} bounds")
    return bool(all(C[i] <= xi[i] <= C[i + 1] for i in range(len(xi))))


def r_from_xi(C, xi):
    """r_I² = ∏_i(C_I − ξ_i) / ∏_{J≠I}(C_I − C_J); ``xi`` may hold jets."""
    C = list(np.asarray(C, dtype=float))
    if len(xi) != len(C) - 1:
        raise LengthMismatch(f"need {len(C) - 1} values between {len(C)} bounds")
    out = []
    for I, cI in enumerate(C):
        num = 1.0
        for x in xi:
            num = num * (cI - x)
        den = float(np.prod([cI - cJ for J, cJ in enumerate(C) if J != I]))
        val = num * (1.0 / den)
        if jt.value(val) < -1e-12:
            raise NegativeSquare(f"r_{I}² = {jt.value(val):.3e} < 0; interlacing violated")
        out.append(val)
    return out


def trafo_dr_residual(C, xi) -> float:
    """Jet derivative of r_I² against −Σ_i ∏_{j≠i}(C_I − ξ_j)/∏_{J≠I}(C_I − C_J) dξ_i."""
    xi = np.asarray(xi, dtype=float)
    X = Jet2.variables(xi)
    r2 = r_from_xi(C, [X[i] for i in range(len(xi))])
    C = list(np.asarray(C, dtype=float))
    worst = 0.0
    for I, cI in enumerate(C):
        den = float(np.prod([cI - cJ for J, cJ in enumerate(C) if J != I]))
        pred = np.array([
            -np.prod([cI - xi[j] for j in range(len(xi)) if j != i]) / den for i in range(len(xi))
        ])
        worst = max(worst, float(np.max(np.abs(r2[I].grad - pred))))
    return worst


def theta_from_cone(C) -> Polynomial:
    C = _check_distinct(C)
    return Polynomial.from_roots(list(C), -4.0)


def vandermonde_sum(C, k: int) -> float:
    C = _check_distinct(C)
    s = 0.0
    for I, cI in enumerate(C):
        s += cI ** k / np.prod([cI - cJ for J, cJ in enumerate(C) if J != I])
    return float(s)


def quotient_identity(r_values, phi_covectors, vectors) -> float:
    """Residual of Σ r_i²φ_i² − (Σ r_i²φ_i)² = ½ Σ r_i²r_j²(φ_i − φ_j)² on
    the given tangent vectors (pairs of quadratic-form evaluations)."""
    r2 = np.asarray(r_values, dtype=float) ** 2
    if abs(r2.sum() - 1.0) > 1e-10:
        raise NotOnLevelSet(f"Σ r_i² = {r2.sum():.12g} != 1")
    P = np.asarray(phi_covectors, dtype=float)  # rows φ_i
    worst = 0.0
    for v in np.atleast_2d(vectors):
        a = P @ v
        lhs = np.sum(r2 * a * a) - np.sum(r2 * a) ** 2
        rhs = 0.5 * np.sum(np.outer(r2, r2) * (a[:, None] - a[None, :]) ** 2)
        worst = max(worst, abs(lhs - rhs))
    return float(worst)


def mobility_from_decomposition(f: int, i: int) -> int:
    """D = f² + i for a cone with flat part of complex dimension f and i
    irreducible nonflat factors."""
    if not (isinstance(f, (int, np.integer)) and isinstance(i, (int, np.integer))):
        raise InvalidDecomposition("f and i must be integers")
    if f < 0 or i < 0 or f + i < 1:
        raise InvalidDecomposition(f"invalid decomposition f={f}, i={i}")
    return int(f * f + i)


# ----------------------------------------------------------------------
# decomposition of a parallel Â at a cone point
@dataclass
class DecompositionData:
    C: list
    mults: list
    r_values: list
    phi: list
    projectors: list = field(repr=False, default_factory=list)

    def rel1_residuals(self, frame: PointFrame) -> dict:
        r = frame.point[0]
        N = frame.dim
        Cvec = np.zeros(N)
        Cvec[0] = r
        r2 = np.array(self.r_values) ** 2
        d_r = np.eye(N)[0]
        parts = [P @ Cvec for P in self.projectors]
        d_rI = [p / ri if ri > 0 else np.zeros(N) for p, ri in zip(parts, self.r_values)]
        phi = frame.g_val @ (frame.J_val @ Cvec) / r ** 2
        return {
            "radius": float(abs(r2.sum() - r * r)),
            "radial_field": float(np.linalg.norm(d_r - sum(ri * v for ri, v in zip(self.r_values, d_rI)) / r)),
            "connection_form": float(np.linalg.norm(phi - sum(w * p for w, p in zip(r2, self.phi)) / r ** 2)),
        }


def decompose(H: HatAField, tol: float = 1e-7) -> DecompositionData:
    """Eigen-decomposition of Â and the induced radial functions r_I and
    connection forms φ_I at the point."""
    fr = H.frame
    N = fr.dim
    r = fr.point[0]
    Cvec = np.zeros(N)
    Cvec[0] = r
    C, mults, projectors, rs, phis = [], [], [], [], []
    for c, P in spectral_projectors(H.hatA.val, fr.g_val, tol):
        C.append(c)
        mults.append(int(round(np.trace(P))) // 2)
        projectors.append(P)
        ci = P @ Cvec
        ri2 = max(fr.inner(ci, ci), 0.0)
        rs.append(float(np.sqrt(ri2)))
        phis.append(fr.g_val @ (fr.J_val @ ci) / ri2 if ri2 > 0 else np.zeros(N))
    return DecompositionData(C, mults, rs, phis, projectors)


def gap_correspondence(C, mults, A_eigs, tol: float = 1e-6) -> dict:
    """Repeated cone eigenvalues against constant base eigenvalues and gaps
    against nonconstant ones."""
    from_repeats = sorted(c for c, m in zip(C, mults) for _ in range(m - 1))
    return {
        "repeated": from_repeats,
        "gaps": len(C) - 1,
        "base_count": len(A_eigs),
        "consistent": len(from_repeats) + len(C) - 1 == len(A_eigs),
    }

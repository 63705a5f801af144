"""Chart-based riemannian and Kähler tensor calculus.

Conventions
-----------
All tensors live in the coordinate frame of a chart of dimension ``n = 2m``.
Covariant-derivative arrays carry the differentiation index *last*, the same
layout jets use for partial derivatives.

* ``gamma[c, a, b]`` is the Christoffel symbol Γ^c_{ab}.
* ``rend[a, b, d, c]`` is the ``d`` component of ``R(∂_a, ∂_b) ∂_c`` with
  ``R(X, Y) = ∇_X ∇_Y − ∇_Y ∇_X − ∇_[X,Y]``, so ``rend[a, b]`` is the
  endomorphism ``R(∂_a, ∂_b)`` as a matrix acting on column vectors.
* ``rlow[a, b, c, d] = g(R(∂_a, ∂_b) ∂_c, ∂_d)``.
* ``omega[a, b] = g(J ∂_a, ∂_b)``, hence ``J = −g^{-1} ω``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import jets as jt
from .errors import SingularMetric, UnsupportedValence, ZeroVector
from .jets import Jet2

DET_FLOOR = 1e-12


# ----------------------------------------------------------------------
# connection and curvature
def _check_metric(gval: np.ndarray) -> None:
    if not np.all(np.isfinite(gval)):
        raise SingularMetric("metric has non-finite entries")
    if abs(np.linalg.det(gval)) < DET_FLOOR:
        raise SingularMetric("metric determinant below 1e-12")


def christoffel(g: Jet2, order: int = 1):
    """Levi-Civita symbols Γ^c_{ab} from a metric jet.

    With ``order=1`` the result is a 1-jet (needs a 2-jet metric) whose
    gradient is ∂_e Γ; with ``order=0`` a plain value array is returned.
    """
    _check_metric(g.val)
    if order >= 1 and g.order < 2:
        raise ValueError("a 1-jet of Γ needs a 2-jet metric")
    gin = jt.inv(g.truncate(order))
    dg = g.truncate(order + 1).deriv()  # dg[b, d, a] = ∂_a g_bd
    # S[d, a, b] = ∂_a g_bd + ∂_b g_ad − ∂_d g_ab
    s = dg.transpose(1, 2, 0) + dg.transpose(1, 0, 2) - dg.transpose(2, 0, 1)
    gam = jt.einsum("cd,dab->cab", gin, s) * 0.5
    return gam if order >= 1 else gam.val


def christoffel_from_derivatives(g, dg, ddg=None):
    """Γ and optionally ∂Γ from explicit metric derivative arrays.

    ``dg[a, b, e] = ∂_e g_ab`` and ``ddg[a, b, e, f] = ∂_e ∂_f g_ab``; this
    is the route used with finite-difference derivatives.
    """
    g = np.asarray(g)
    _check_metric(g)
    gin = np.linalg.inv(g)
    s = np.einsum("bda->dab", dg) + np.einsum("adb->dab", dg) - np.einsum("abd->dab", dg)
    gam = 0.5 * np.einsum("cd,dab->cab", gin, s)
    if ddg is None:
        return gam, None
    dgin = -np.einsum("cp,pqe,qd->cde", gin, dg, gin)
    ds = (
        np.einsum("bdae->dabe", ddg)
        + np.einsum("adbe->dabe", ddg)
        - np.einsum("abde->dabe", ddg)
    )
    dgam = 0.5 * (np.einsum("cde,dab->cabe", dgin, s) + np.einsum("cd,dabe->cabe", gin, ds))
    return gam, dgam


def riemann_from_christoffel(gam: np.ndarray, dgam: np.ndarray) -> np.ndarray:
    """Endomorphism-form curvature ``rend[a, b, d, c]`` from Γ and ∂Γ.

    ``dgam[d, b, c, a] = ∂_a Γ^d_{bc}``.
    """
    t1 = np.einsum("dbca->abdc", dgam)
    quad = np.einsum("dae,ebc->abdc", gam, gam)
    r = t1 + quad
    return r - np.swapaxes(r, 0, 1)


def riemann(g: Jet2, gamma: Jet2 | None = None):
    """Return ``(rend, rlow)`` for a 2-jet metric."""
    if gamma is None:
        gamma = christoffel(g, order=1)
    rend = riemann_from_christoffel(gamma.val, gamma.grad)
    rlow = np.einsum("abec,ed->abcd", rend, g.val)
    return rend, rlow


def riemann_symmetry_residuals(rlow: np.ndarray) -> dict:
    """Antisymmetry, pair-symmetry and first-Bianchi residuals (max abs)."""
    scale = max(1.0, float(np.max(np.abs(rlow))))
    bianchi = rlow + np.einsum("bcad->abcd", rlow) + np.einsum("cabd->abcd", rlow)
    return {
        "antisym_ab": float(np.max(np.abs(rlow + rlow.transpose(1, 0, 2, 3)))) / scale,
        "antisym_cd": float(np.max(np.abs(rlow + rlow.transpose(0, 1, 3, 2)))) / scale,
        "pair": float(np.max(np.abs(rlow - rlow.transpose(2, 3, 0, 1)))) / scale,
        "bianchi": float(np.max(np.abs(bianchi))) / scale,
    }


# ----------------------------------------------------------------------
# covariant derivatives
VALENCES = ("endo", "covector", "vector", "bilinear")
_VALENCE_ALIASES = {
    "(1,1)": "endo",
    "(0,1)": "covector",
    "(1,0)": "vector",
    "(0,2)": "bilinear",
}


def covariant_derivative(T: Jet2, gamma: np.ndarray, valence: str) -> np.ndarray:
    """∇T at a point, differentiation index last.

    ``T`` must be a jet of order ≥ 1.  Endomorphisms use ``T[c, b]`` acting
    on column vectors; the result is ``out[c, b, a] = (∇_a T)^c_b``.
    """
    valence = _VALENCE_ALIASES.get(valence, valence)
    if valence not in VALENCES:
        raise UnsupportedValence(f"unsupported valence {valence!r}")
    if T.order < 1:
        raise ValueError("covariant derivative needs first derivatives")
    v, d = T.val, T.grad
    if valence == "vector":
        return d + np.einsum("cad,d->ca", gamma, v)
    if valence == "covector":
        return d - np.einsum("dab,d->ba", gamma, v)
    if valence == "endo":
        return (
            d
            + np.einsum("cad,db->cba", gamma, v)
            - np.einsum("dab,cd->cba", gamma, v)
        )
    # bilinear
    return (
        d
        - np.einsum("dac,db->cba", gamma, v)
        - np.einsum("dab,cd->cba", gamma, v)
    )


# ----------------------------------------------------------------------
# point frames
@dataclass
class PointFrame:
    """Everything known about the geometry at one chart point."""

    point: np.ndarray
    g: Jet2
    J: Jet2
    gamma_jet: Jet2
    tau: Jet2 | None = None
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        self.g_val = self.g.val
        self.g_inv = np.linalg.inv(self.g_val)
        self.J_val = self.J.val
        self.omega = -self.g_val @ self.J_val
        self.gamma = self.gamma_jet.val
        self.rend = riemann_from_christoffel(self.gamma, self.gamma_jet.grad)
        self.rlow = np.einsum("abec,ed->abcd", self.rend, self.g_val)
        # +1 for positive definite metrics, -1 after a negative rescaling
        self.sign = 1.0 if np.trace(self.g_val) > 0 else -1.0
        self._onb = None

    @property
    def dim(self) -> int:
        return self.g_val.shape[0]

    @property
    def m(self) -> int:
        return self.dim // 2

    @property
    def omega_jet(self) -> Jet2:
        return -jt.einsum("ab,bc->ac", self.g, self.J)

    def flat(self, v: np.ndarray) -> np.ndarray:
        return self.g_val @ v

    def inner(self, u, v) -> float:
        return float(u @ self.g_val @ v)

    def curvature(self, X, Y) -> np.ndarray:
        """Endomorphism R(X, Y)."""
        return np.einsum("a,b,abdc->dc", X, Y, self.rend)

    def onb(self) -> np.ndarray:
        """J-adapted orthonormal frame as columns ``(e_1..e_m, Je_1..Je_m)``.

        Orthonormality is with respect to ``sign·g`` so definite metrics of
        either sign are handled.
        """
        if self._onb is None:
            self._onb = adapted_frame(self.sign * self.g_val, self.J_val)
        return self._onb

    def audit(self) -> dict:
        """Algebraic consistency residuals of (g, J, ω) at the point."""
        n = self.dim
        g, J = self.g_val, self.J_val
        return {
            "g_inverse": float(np.max(np.abs(self.g_inv @ g - np.eye(n)))),
            "J_squared": float(np.max(np.abs(J @ J + np.eye(n)))),
            "J_orthogonal": float(np.max(np.abs(J.T @ g @ J - g))),
            "omega_antisym": float(np.max(np.abs(self.omega + self.omega.T))),
            "min_eig_g": float(np.min(np.linalg.eigvalsh(0.5 * (g + g.T)))),
        }


def make_frame(point, g: Jet2, J: Jet2, tau: Jet2 | None = None, **extras) -> PointFrame:
    if g.order < 2:
        raise ValueError("a frame needs a 2-jet metric")
    gam = christoffel(g, order=1)
    return PointFrame(np.asarray(point, dtype=float), g, J, gam, tau, dict(extras))


# ----------------------------------------------------------------------
# frames and norms
def adapted_frame(g: np.ndarray, J: np.ndarray) -> np.ndarray:
    """Deterministic J-adapted Gram–Schmidt on the coordinate basis.

    Candidates are the coordinate vectors in index order; at each step the
    candidate with the largest residual after projection is chosen, which
    keeps the process stable.
    """
    n = g.shape[0]
    m = n // 2
    basis: list[np.ndarray] = []
    cands = list(np.eye(n))
    for _ in range(m):
        best, best_norm = None, -1.0
        for c in cands:
            r = c.copy()
            for b in basis:
                r = r - (b @ g @ r) * b
            nr = np.sqrt(max(r @ g @ r, 0.0))
            if nr > best_norm + 1e-14:
                best, best_norm = r, nr
        if best_norm < 1e-12:
            raise SingularMetric("cannot build an orthonormal frame")
        e = best / best_norm
        basis.extend([e, J @ e])
    E = np.empty((n, n))
    E[:, :m] = np.stack(basis[0::2], axis=1)
    E[:, m:] = np.stack(basis[1::2], axis=1)
    return E


def frame_components(T: np.ndarray, E: np.ndarray, kinds: str) -> np.ndarray:
    """Components of ``T`` in the frame ``E`` (columns).

    ``kinds`` has one letter per axis: ``u`` for a vector (upper) index and
    ``d`` for a covector (lower) index.
    """
    Einv = np.linalg.inv(E)
    out = T
    for axis, k in enumerate(kinds):
        M = Einv if k == "u" else E.T
        out = np.moveaxis(np.tensordot(M, out, axes=([1], [axis])), 0, axis)
    return out


def tensor_norm(T: np.ndarray, frame: PointFrame, kinds: str) -> float:
    """Frobenius norm of ``T`` in an orthonormal frame (frame independent)."""
    return float(np.linalg.norm(frame_components(T, frame.onb(), kinds)))


# ----------------------------------------------------------------------
# scalar diagnostics
def holomorphic_sectional_curvature(frame: PointFrame, X) -> float:
    X = np.asarray(X, dtype=float)
    nx = frame.inner(X, X)
    if not nx > 0:
        raise ZeroVector("holomorphic sectional curvature of the zero vector")
    JX = frame.J_val @ X
    RX = frame.curvature(X, JX) @ JX
    return frame.inner(RX, X) / nx ** 2


def sectional_curvature(frame: PointFrame, X, Y) -> float:
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    den = frame.inner(X, X) * frame.inner(Y, Y) - frame.inner(X, Y) ** 2
    if not den > 0:
        raise ZeroVector("degenerate plane")
    return frame.inner(frame.curvature(X, Y) @ Y, X) / den


def killing_residual(V: Jet2, frame: PointFrame) -> float:
    """Norm of the symmetric part of ∇V♭."""
    dv = covariant_derivative(V, frame.gamma, "vector")  # dv[c, a] = (∇_a V)^c
    low = np.einsum("bc,ca->ab", frame.g_val, dv)  # low[a, b] = g(∇_a V, ∂_b)
    sym = 0.5 * (low + low.T)
    return tensor_norm(sym, frame, "dd")


def hermitian_residual(Q, frame: PointFrame) -> tuple[float, float]:
    """(‖gQ − (gQ)ᵀ‖, ‖[Q, J]‖) in an orthonormal frame."""
    Q = jt.value(Q)
    gQ = frame.g_val @ Q
    sym = tensor_norm(gQ - gQ.T, frame, "dd")
    comm = Q @ frame.J_val - frame.J_val @ Q
    return sym, tensor_norm(comm, frame, "ud")


def second_bianchi_fd(curv_at, point, step: float = 1e-4) -> float:
    """Cyclic sum ∇_e R_abcd + ∇_a R_becd + ∇_b R_eacd by finite differences.

    ``curv_at(x)`` must return ``(rlow, gamma)`` at ``x``; derivatives of the
    components are taken by central differences and corrected by Γ.
    """
    from .jets import FdStencil, fd_derivative

    x0 = np.asarray(point, dtype=float)
    rlow, gam = curv_at(x0)
    drl, _ = fd_derivative(lambda x: curv_at(x)[0], x0, FdStencil(step=step), hessian=False)
    cov = (
        drl
        - np.einsum("pea,pbcd->abcde", gam, rlow)
        - np.einsum("peb,apcd->abcde", gam, rlow)
        - np.einsum("pec,abpd->abcde", gam, rlow)
        - np.einsum("ped,abcp->abcde", gam, rlow)
    )
    cyc = cov + np.einsum("becda->abcde", cov) + np.einsum("eacdb->abcde", cov)
    scale = max(1.0, float(np.max(np.abs(rlow))))
    return float(np.max(np.abs(cyc))) / scale


def self_adjoint_eigh(A: np.ndarray, g: np.ndarray):
    """Eigenvalues (ascending) and g-orthonormal eigenvectors of a
    g-self-adjoint endomorphism; ``g`` may be negative definite."""
    s = 1.0 if np.trace(g) > 0 else -1.0
    L = np.linalg.cholesky(s * g)
    M = np.linalg.solve(L, s * g @ A)
    M = np.linalg.solve(L, M.T).T
    w, U = np.linalg.eigh(0.5 * (M + M.T))
    V = np.linalg.solve(L.T, U)
    return w, V


def spectral_projectors(A: np.ndarray, g: np.ndarray, tol: float = 1e-8):
    """Clusters ``(value, projector)`` of a g-self-adjoint endomorphism."""
    w, V = self_adjoint_eigh(A, g)
    s = 1.0 if np.trace(g) > 0 else -1.0
    out = []
    i = 0
    while i < len(w):
        j = i + 1
        while j < len(w) and abs(w[j] - w[i]) <= tol * max(1.0, abs(w[i])):
            j += 1
        Vi = V[:, i:j]
        out.append((float(np.mean(w[i:j])), Vi @ Vi.T @ (s * g)))
        i = j
    return out

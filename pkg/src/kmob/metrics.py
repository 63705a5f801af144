"""Kähler metric families, their solution fields and point sampling.

Every family is an immutable object exposing ``fields(x)``, which evaluates
the metric, complex structure, potential 1-form and the canonical solution
endomorphism at a coordinate point.  ``x`` is either a plain array (the
finite-difference path) or a :class:`~kmob.jets.Jet2` of seeded variables
(the exact path); all formulas are written with the dispatching helpers of
:mod:`kmob.jets` so both paths share one implementation.

Returned keys
-------------
``g``, ``J``
    metric and complex structure in coordinates.
``tau``
    a 1-form with ``dτ = 2ω``.
``A``
    the canonical hermitian solution endomorphism.
``lam_flat``
    optional closed-form ``Λ♭ = ¼ d tr A``; when absent it is obtained from
    the jet of ``tr A`` (one derivative order is lost).
``xi``
    optional nonconstant eigenvalues as functions of the point.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.stats import qmc

from . import jets as jt
from .errors import (
    ConstructionError,
    DomainViolation,
    EmptyDomain,
    NonHorizontalInput,
)
from .geometry import PointFrame, covariant_derivative, make_frame
from .jets import Jet2

DEFAULT_MARGIN = 0.05


# ----------------------------------------------------------------------
# polynomials
@dataclass(frozen=True)
class Polynomial:
    """Real polynomial with ascending coefficients, trailing zeros trimmed."""

    coefficients: tuple = (0.0,)

    def __post_init__(self):
        c = [float(v) for v in self.coefficients] or [0.0]
        while len(c) > 1 and c[-1] == 0.0:
            c.pop()
        object.__setattr__(self, "coefficients", tuple(c))

    @classmethod
    def from_roots(cls, roots: Sequence[float], lead: float = 1.0) -> "Polynomial":
        c = np.polynomial.polynomial.polyfromroots(list(roots)) * lead
        return cls(tuple(c))

    def degree(self) -> int:
        if len(self.coefficients) == 1 and self.coefficients[0] == 0.0:
            return -1
        return len(self.coefficients) - 1

    def coef(self, k: int) -> float:
        return self.coefficients[k] if 0 <= k < len(self.coefficients) else 0.0

    @property
    def lead(self) -> float:
        return self.coefficients[-1]

    def __call__(self, t):
        """Horner evaluation; works on floats, arrays and jets."""
        acc = self.coefficients[-1]
        for c in reversed(self.coefficients[:-1]):
            acc = acc * t + c
        if not isinstance(acc, Jet2) and isinstance(t, Jet2):
            acc = jt.as_jet(acc, t.nvar, t.order) if t.order else Jet2(acc)
        return acc

    def deriv(self, k: int = 1) -> "Polynomial":
        c = np.polynomial.polynomial.polyder(np.array(self.coefficients), k) if k else self.coefficients
        return Polynomial(tuple(np.atleast_1d(c)))

    def real_roots(self) -> list[float]:
        if self.degree() < 1:
            return []
        r = np.polynomial.polynomial.polyroots(np.array(self.coefficients))
        return sorted(float(v.real) for v in r if abs(v.imag) < 1e-9)

    def __mul__(self, other: "Polynomial") -> "Polynomial":
        return Polynomial(tuple(np.polynomial.polynomial.polymul(self.coefficients, other.coefficients)))

    def __sub__(self, other: "Polynomial") -> "Polynomial":
        return Polynomial(tuple(np.polynomial.polynomial.polysub(self.coefficients, other.coefficients)))

    def divmod(self, other: "Polynomial"):
        q, r = np.polynomial.polynomial.polydiv(self.coefficients, other.coefficients)
        return Polynomial(tuple(q)), Polynomial(tuple(r))

    def allclose(self, other: "Polynomial", tol: float = 1e-12) -> bool:
        n = max(len(self.coefficients), len(other.coefficients))
        return all(abs(self.coef(k) - other.coef(k)) <= tol for k in range(n))

    def to_list(self) -> list[float]:
        return list(self.coefficients)


def elementary_symmetric(values: Sequence) -> list:
    """σ_0 .. σ_n of the given values (jets or floats)."""
    sig: list = [1.0]
    for v in values:
        new = list(sig) + [0.0]
        for r in range(len(sig), 0, -1):
            new[r] = new[r] + sig[r - 1] * v
        sig = new
    return sig


# ----------------------------------------------------------------------
# base class
class MetricInstance:
    """Common interface for all metric families."""

    kind: str = "abstract"

    @property
    def dim(self) -> int:
        raise NotImplementedError

    @property
    def m(self) -> int:
        return self.dim // 2

    def box(self) -> np.ndarray:
        """Validity box as an ``(n, 2)`` array of coordinate intervals."""
        raise NotImplementedError

    def check_domain(self, p: np.ndarray) -> None:
        lo, hi = self.box().T
        if np.any(p < lo - 1e-12) or np.any(p > hi + 1e-12):
            raise DomainViolation(f"point {p} outside the validity box")

    def fields(self, x) -> dict:
        raise NotImplementedError

    # eigenvalue bookkeeping
    def constant_eigenvalues(self) -> list[tuple[float, int]]:
        return []

    def n_nonconstant(self) -> int:
        return 0

    def describe(self) -> dict:
        raise NotImplementedError


def _bump(x, n):
    """Seed coordinate jets at a point (2-jets) unless already a jet."""
    if isinstance(x, Jet2):
        return x
    return np.asarray(x, dtype=float)


# ----------------------------------------------------------------------
# space forms
@dataclass(frozen=True)
class SpaceForm(MetricInstance):
    """Complex space form of complex dimension ``m`` and holomorphic
    sectional curvature ``c`` in affine coordinates ``(x, y)``, ``z = x + iy``.

    The solution carried by ``A`` is parameterized by a hermitian
    ``(m+1) × (m+1)`` matrix ``W``; the default (``diag(½, 1, .., m)`` with a
    ¼ coupling between the first two slots) gives a non-parallel solution
    for every ``c``.
    """

    m_: int = 1
    c: float = 0.0
    W: tuple | None = None
    half_width: float | None = None
    margin: float = DEFAULT_MARGIN
    kind: str = "SpaceForm"

    def __post_init__(self):
        if self.m_ < 1:
            raise ConstructionError("space form needs m >= 1")
        W = self.weight_matrix()
        if W.shape != (self.m_ + 1, self.m_ + 1) or not np.allclose(W, W.conj().T):
            raise ConstructionError("W must be a hermitian (m+1)x(m+1) matrix")

    @property
    def dim(self) -> int:
        return 2 * self.m_

    @property
    def k(self) -> float:
        return self.c / 4.0

    def weight_matrix(self) -> np.ndarray:
        if self.W is None:
            W = np.diag(np.arange(self.m_ + 1, dtype=float)).astype(complex)
            W[0, 0] = 0.5
            W[0, 1] = W[1, 0] = 0.25
            return W
        return np.asarray(self.W, dtype=complex)

    def box(self) -> np.ndarray:
        b = self.half_width
        if b is None:
            b = 0.5
            if self.k < 0:
                b = min(b, 0.5 / math.sqrt(2 * self.m_ * abs(self.k)))
        return np.array([[-b, b]] * self.dim)

    def check_domain(self, p):
        super().check_domain(p)
        q = 1 + self.k * float(p @ p)
        if q <= 0:
            raise DomainViolation("point outside the space-form chart")

    def hermitian_metric(self, x):
        m, k = self.m_, self.k
        xr, yr = x[:m], x[m:]
        z = xr + yr * 1j
        Q = 1.0 + k * (jt.einsum("i,i->", xr, xr) + jt.einsum("i,i->", yr, yr))
        zz = jt.outer(z, z.conj() if isinstance(z, Jet2) else np.conj(z))
        h = (Q * np.eye(m) - zz * k) * jt.powi(Q, -2)
        return z, Q, h

    def fields(self, x) -> dict:
        m, k = self.m_, self.k
        z, Q, h = self.hermitian_metric(x)
        g = jt.realify(h)
        J = np.block([[np.zeros((m, m)), -np.eye(m)], [np.eye(m), np.zeros((m, m))]])
        xr, yr = x[:m], x[m:]
        Qi = jt.reciprocal(Q)
        tau = jt.concatenate([-yr * Qi, xr * Qi])
        W = self.weight_matrix()
        out = {"g": g, "J": J, "tau": tau}
        if k == 0:
            beta = W[0, 0].real
            u = W[1:, 0]
            X = W[1:, 1:] + jt.outer(z, np.conj(u)) + jt.outer(u, z.conj() if isinstance(z, Jet2) else np.conj(z))
            X = X + jt.outer(z, z.conj() if isinstance(z, Jet2) else np.conj(z)) * beta
            out["A"] = jt.realify(X)
            lam = u + z * beta
            lam_r = jt.concatenate([lam.real if isinstance(lam, Jet2) else np.real(lam),
                                    lam.imag if isinstance(lam, Jet2) else np.imag(lam)])
            out["lam_flat"] = jt.matmul(g, lam_r)
            out["mu"] = beta
        else:
            eps = 1.0 if k > 0 else -1.0
            sk = math.sqrt(abs(k))
            one = jt.as_jet(np.ones(1, dtype=complex), x.nvar, x.order) if isinstance(x, Jet2) else np.ones(1, dtype=complex)
            s = jt.concatenate([one, z * sk])
            q = np.diag([1.0] + [eps] * m).astype(complex)
            sbar = s.conj() if isinstance(s, Jet2) else np.conj(s)
            qs = jt.matmul(q, sbar)  # conj(q s) since q is real
            P = np.eye(m + 1) - jt.outer(s, qs) * Qi
            T = P[:, 1:]
            Tc = T.conj().T if isinstance(T, Jet2) else T.conj().T
            H = jt.einsum("ij,jk->ik", jt.einsum("ij,jk->ik", Tc, W), T) * (eps * Qi)
            Ac = jt.einsum("ij,jk->ik", jt.inv(h), H)
            out["A"] = jt.realify(Ac)
        return out

    def describe(self) -> dict:
        d = {"kind": "SpaceForm", "m": self.m_, "c": self.c}
        if self.W is not None:
            W = self.weight_matrix()
            d["W_real"] = W.real.tolist()
            d["W_imag"] = W.imag.tolist()
        return d


# ----------------------------------------------------------------------
# hamiltonian-form bundles
@dataclass(frozen=True)
class ConstantEigenvalue:
    """A constant eigenvalue ``eta`` of complex multiplicity ``mult`` whose
    base is a space form of holomorphic sectional curvature ``c``."""

    eta: float
    mult: int = 1
    c: float = 0.0
    half_width: float | None = None

    def base(self) -> SpaceForm:
        return SpaceForm(m_=self.mult, c=self.c, half_width=self.half_width)


@dataclass(frozen=True)
class HamiltonianBundle(MetricInstance):
    """Metric of a hamiltonian 2-form with ``ell`` nonconstant eigenvalues.

    Coordinates are ordered ``(ξ_1..ξ_ℓ, t_1..t_ℓ, base_η ...)`` where each
    base block is the affine chart of a space form.  The fibre connection
    forms are realized as ``θ_r = dt_r + ½ Σ_η (−1)^r η^{ℓ−r} τ_η`` with
    ``dτ_η = 2ω_η``.
    """

    thetas: tuple = ()
    xi_boxes: tuple = ()
    constants: tuple = ()
    t_box: tuple = (-1.0, 1.0)
    margin: float = DEFAULT_MARGIN
    kind: str = "HamiltonianBundle"

    def __post_init__(self):
        ell = len(self.thetas)
        if ell < 1:
            raise ConstructionError("need at least one nonconstant eigenvalue")
        if len(self.xi_boxes) != ell:
            raise ConstructionError("one xi interval per nonconstant eigenvalue")
        prev = -math.inf
        for lo, hi in self.xi_boxes:
            if not lo < hi:
                raise ConstructionError("empty xi interval")
            if lo < prev:
                raise ConstructionError("xi intervals must be disjoint and ordered")
            prev = hi
        etas = [c.eta for c in self.constants]
        if len(set(etas)) != len(etas):
            raise ConstructionError("constant eigenvalues must be distinct")
        for c in self.constants:
            if c.mult < 1:
                raise ConstructionError("multiplicities must be positive")
            for lo, hi in self.xi_boxes:
                if lo < c.eta < hi:
                    raise ConstructionError("a xi interval contains a constant eigenvalue")

    @property
    def ell(self) -> int:
        return len(self.thetas)

    @property
    def dim(self) -> int:
        return 2 * self.ell + 2 * sum(c.mult for c in self.constants)

    def n_nonconstant(self) -> int:
        return self.ell

    def constant_eigenvalues(self):
        return [(c.eta, c.mult) for c in self.constants]

    def base_slices(self) -> list[slice]:
        out, start = [], 2 * self.ell
        for c in self.constants:
            out.append(slice(start, start + 2 * c.mult))
            start += 2 * c.mult
        return out

    def box(self) -> np.ndarray:
        rows = [list(b) for b in self.xi_boxes] + [list(self.t_box)] * self.ell
        for c in self.constants:
            rows += c.base().box().tolist()
        return np.array(rows, dtype=float)

    def check_domain(self, p):
        super().check_domain(p)
        ell = self.ell
        xi = p[:ell]
        w = min(hi - lo for lo, hi in self.xi_boxes)
        tol = self.margin * w * 0.5
        for i, j in itertools.combinations(range(ell), 2):
            if abs(xi[i] - xi[j]) < tol:
                raise DomainViolation("coincident nonconstant eigenvalues")
        for j, th in enumerate(self.thetas):
            for r in th.real_roots():
                if abs(xi[j] - r) < tol:
                    raise DomainViolation("too close to a zero of Theta")
            for c in self.constants:
                if abs(xi[j] - c.eta) < tol:
                    raise DomainViolation("nonconstant eigenvalue meets a constant one")
        for c, sl in zip(self.constants, self.base_slices()):
            c.base().check_domain(p[sl])

    # ------------------------------------------------------------------
    def _assemble(self, x):
        ell = self.ell
        n = self.dim
        xi = [x[j] for j in range(ell)]
        # σ_r and σ_{r-1}(ξ̂_j)
        sig = elementary_symmetric(xi)
        sig_hat = [elementary_symmetric([xi[k] for k in range(ell) if k != j]) for j in range(ell)]
        delta = []
        for j in range(ell):
            d = 1.0
            for k in range(ell):
                if k != j:
                    d = d * (xi[j] - xi[k])
            delta.append(d)
        theta_vals = [self.thetas[j](xi[j]) for j in range(ell)]

        # coframe rows in coordinates
        E = np.zeros((n, n))
        E[: 2 * ell, : 2 * ell] = np.eye(2 * ell)
        base_data = []
        for c, sl in zip(self.constants, self.base_slices()):
            bf = c.base().fields(x[sl])
            base_data.append((c, sl, bf))
        coframe = jt.zeros((n, n), like=x) if isinstance(x, Jet2) else np.zeros((n, n))
        coframe[:, :] = E if not isinstance(x, Jet2) else jt.as_jet(E, x.nvar, x.order)
        for c, sl, bf in base_data:
            coframe[sl, sl] = np.eye(sl.stop - sl.start)
            for r in range(1, ell + 1):
                coef = 0.5 * (-1) ** r * c.eta ** (ell - r)
                if coef != 0.0:
                    coframe[ell + r - 1, sl] = coframe[ell + r - 1, sl] + bf["tau"] * coef
        dxi = [coframe[j] for j in range(ell)]
        theta = [coframe[ell + r] for r in range(ell)]

        # frame metric blocks
        g = jt.zeros((n, n), like=x) if isinstance(x, Jet2) else np.zeros((n, n))
        om = jt.zeros((n, n), like=x) if isinstance(x, Jet2) else np.zeros((n, n))
        phi = jt.zeros((n, n), like=x) if isinstance(x, Jet2) else np.zeros((n, n))
        for j in range(ell):
            fj = theta_vals[j] * jt.reciprocal(delta[j]) if ell > 1 else theta_vals[j]
            if ell > 1:
                inv_fj = delta[j] * jt.reciprocal(theta_vals[j])
            else:
                inv_fj = jt.reciprocal(theta_vals[j])
            vj = 0.0
            for r in range(ell):
                vj = theta[r] * sig_hat[j][r] + vj
            g = g + jt.outer(dxi[j], dxi[j]) * inv_fj + jt.outer(vj, vj) * fj
            phi = phi + jt.wedge(dxi[j], vj) * xi[j]
        for r in range(1, ell + 1):
            dsig = 0.0
            for j in range(ell):
                dsig = dxi[j] * sig_hat[j][r - 1] + dsig
            om = om + jt.wedge(dsig, theta[r - 1])
        tau = 0.0
        for r in range(1, ell + 1):
            tau = theta[r - 1] * (2.0 * sig[r]) + tau
        for c, sl, bf in base_data:
            pnc = 1.0
            for j in range(ell):
                pnc = pnc * (c.eta - xi[j])
            gb = jt.zeros((n, n), like=x) if isinstance(x, Jet2) else np.zeros((n, n))
            gb[sl, sl] = bf["g"]
            ob = jt.zeros((n, n), like=x) if isinstance(x, Jet2) else np.zeros((n, n))
            ob[sl, sl] = -jt.matmul(bf["g"], bf["J"])
            g = g + gb * pnc
            om = om + ob * pnc
            phi = phi + ob * (c.eta * pnc)
            tb = jt.zeros((n,), like=x) if isinstance(x, Jet2) else np.zeros(n)
            tb[sl] = bf["tau"]
            tau = tb * (c.eta ** ell) + tau
        return {
            "g": g,
            "omega": om,
            "phi": phi,
            "tau": tau,
            "xi": xi,
            "sig": sig,
            "theta_vals": theta_vals,
            "delta": delta,
        }

    def fields(self, x) -> dict:
        d = self._assemble(x)
        g, om, phi = d["g"], d["omega"], d["phi"]
        gi = jt.inv(g)
        J = -jt.matmul(gi, om)
        # g(AX, Y) = φ(X, JY)  ⇒  A = g⁻¹ (φ J)ᵀ
        A = jt.matmul(gi, jt.transpose(jt.matmul(phi, J)))
        n = self.dim
        lam_flat = np.zeros(n)
        lam_flat[: self.ell] = 0.5
        d.update({"J": J, "A": A, "lam_flat": lam_flat})
        return d

    def describe(self) -> dict:
        return {
            "kind": "HamiltonianBundle",
            "thetas": [t.to_list() for t in self.thetas],
            "xi_boxes": [list(b) for b in self.xi_boxes],
            "constants": [
                {"eta": c.eta, "mult": c.mult, "c": c.c} for c in self.constants
            ],
            "t_box": list(self.t_box),
        }


def Orthotoric4D(F1: Polynomial, F2: Polynomial, box, margin: float = DEFAULT_MARGIN, t_box=(-1.0, 1.0)):
    """Four-dimensional orthotoric chart ``(ξ1, ξ2, t1, t2)``."""
    inst = HamiltonianBundle(
        thetas=(F1, F2), xi_boxes=tuple(tuple(b) for b in box), margin=margin, t_box=tuple(t_box)
    )
    return inst


# ----------------------------------------------------------------------
# products and rescaling
@dataclass(frozen=True)
class Product(MetricInstance):
    """Riemannian product with ``A`` acting as a constant on each factor."""

    factors: tuple = ()
    eigenvalues: tuple = ()
    kind: str = "Product"

    def __post_init__(self):
        if len(self.factors) < 1 or len(self.factors) != len(self.eigenvalues):
            raise ConstructionError("one eigenvalue per product factor")
        if len(set(self.eigenvalues)) != len(self.eigenvalues):
            raise ConstructionError("parallel eigenvalues must be distinct")

    @property
    def dim(self) -> int:
        return sum(f.dim for f in self.factors)

    def slices(self):
        out, s = [], 0
        for f in self.factors:
            out.append(slice(s, s + f.dim))
            s += f.dim
        return out

    def box(self):
        return np.concatenate([f.box() for f in self.factors], axis=0)

    def check_domain(self, p):
        for f, sl in zip(self.factors, self.slices()):
            f.check_domain(p[sl])

    def constant_eigenvalues(self):
        return [(lam, f.m) for f, lam in zip(self.factors, self.eigenvalues)]

    def fields(self, x):
        n = self.dim
        like = x if isinstance(x, Jet2) else None
        g = jt.zeros((n, n), like=like)
        J = jt.zeros((n, n), like=like)
        A = np.zeros((n, n))
        tau = jt.zeros((n,), like=like)
        for f, lam, sl in zip(self.factors, self.eigenvalues, self.slices()):
            ff = f.fields(x[sl])
            g[sl, sl] = ff["g"]
            J[sl, sl] = ff["J"]
            tau[sl] = ff["tau"]
            A[sl, sl] = lam * np.eye(f.dim)
        return {"g": g, "J": J, "tau": tau, "A": A, "lam_flat": np.zeros(n), "mu": 0.0}

    def describe(self):
        return {
            "kind": "Product",
            "factors": [f.describe() for f in self.factors],
            "eigenvalues": list(self.eigenvalues),
        }


@dataclass(frozen=True)
class Scaled(MetricInstance):
    """The same chart with metric ``s·g``; the solution endomorphism is
    unchanged and all derived fields are recomputed from the scaled metric.

    ``s < 0`` yields a negative definite metric; Levi-Civita connection and
    curvature endomorphisms are unchanged, which is all the solution
    equations see.
    """

    base: MetricInstance = None
    s: float = 1.0
    kind: str = "Scaled"

    def __post_init__(self):
        if self.base is None or self.s == 0 or not math.isfinite(self.s):
            raise ConstructionError("scaling needs a base instance and a finite s != 0")

    @property
    def dim(self):
        return self.base.dim

    def box(self):
        return self.base.box()

    def check_domain(self, p):
        self.base.check_domain(p)

    def constant_eigenvalues(self):
        return self.base.constant_eigenvalues()

    def n_nonconstant(self):
        return self.base.n_nonconstant()

    def fields(self, x):
        f = dict(self.base.fields(x))
        f["g"] = f["g"] * self.s
        f["tau"] = f["tau"] * self.s
        if "omega" in f:
            f["omega"] = f["omega"] * self.s
        if "phi" in f:
            f["phi"] = f["phi"] * self.s
        f.pop("mu", None)
        return f

    def describe(self):
        return {"kind": "Scaled", "s": self.s, "base": self.base.describe()}

    def __getattr__(self, name):
        # expose family data (thetas, constants, ...) of the wrapped chart
        if name.startswith("__"):
            raise AttributeError(name)
        return getattr(self.base, name)


def unwrap(instance: MetricInstance) -> tuple[MetricInstance, float]:
    """Underlying family and accumulated scale factor."""
    s = 1.0
    while isinstance(instance, Scaled):
        s *= instance.s
        instance = instance.base
    return instance, s


# ----------------------------------------------------------------------
# evaluation
def seed(point) -> Jet2:
    return Jet2.variables(np.asarray(point, dtype=float))


def eval_fields(instance: MetricInstance, point) -> dict:
    p = np.asarray(point, dtype=float)
    instance.check_domain(p)
    return instance.fields(seed(p))


def eval_metric(instance: MetricInstance, point, fields: dict | None = None) -> PointFrame:
    """Frame with exact jets of g and J at ``point``."""
    p = np.asarray(point, dtype=float)
    if fields is None:
        fields = eval_fields(instance, p)
    n = instance.dim
    g = fields["g"]
    J = jt.as_jet(fields["J"], n, 2)
    sign = 1.0 if np.trace(g.val) > 0 else -1.0
    try:
        np.linalg.cholesky(sign * g.val)
    except np.linalg.LinAlgError as exc:
        raise DomainViolation(f"metric not definite at {p}") from exc
    tau = fields.get("tau")
    tau = None if tau is None else jt.as_jet(tau, n, 2)
    return make_frame(p, g, J, tau, fields=fields)


@dataclass
class SolutionField:
    """A candidate solution ``(A, Λ, μ)`` at one point, with its frame."""

    frame: PointFrame
    A: Jet2
    Lam: Jet2
    mu: Jet2 | float | None = None
    B: float | None = None

    @property
    def lam(self) -> np.ndarray:
        return self.Lam.val

    def nabla_A(self) -> np.ndarray:
        return covariant_derivative(self.A, self.frame.gamma, "endo")

    def nabla_lam(self) -> np.ndarray:
        """``out[c, a] = (∇_a Λ)^c``."""
        return covariant_derivative(self.Lam, self.frame.gamma, "vector")

    def nabla_lam_jet(self) -> Jet2:
        """1-jet of ∇Λ (needs a 2-jet Λ)."""
        if self.Lam.order < 2:
            raise ValueError("Λ carries no second derivatives")
        gam = self.frame.gamma_jet
        return self.Lam.deriv() + jt.einsum("cad,d->ca", gam, self.Lam.truncate(1))


def lam_from_trace(g: Jet2, A: Jet2) -> Jet2:
    """Λ = ¼ grad_g tr A, one jet order below ``A``."""
    tr = jt.trace(A)
    dtr = tr.deriv()
    return jt.matmul(jt.inv(g.truncate(dtr.order)), dtr) * 0.25


def eval_solution(instance: MetricInstance, point, frame: PointFrame | None = None) -> SolutionField:
    if frame is None:
        frame = eval_metric(instance, point)
    f = frame.extras["fields"]
    n = instance.dim
    A = jt.as_jet(f["A"], n, 2)
    if "lam_flat" in f:
        Lam = jt.matmul(jt.inv(frame.g), jt.as_jet(f["lam_flat"], n, 2))
    else:
        Lam = lam_from_trace(frame.g, A)
    mu = f.get("mu")
    return SolutionField(frame, A, Lam, mu)


def eval_lambda(instance: MetricInstance, point) -> np.ndarray:
    """¼ grad tr A at the point, from the jet of ``tr A``."""
    fr = eval_metric(instance, point)
    A = jt.as_jet(fr.extras["fields"]["A"], instance.dim, 2)
    return lam_from_trace(fr.g, A).val


def eigen_gradients(instance: MetricInstance, point) -> list[np.ndarray]:
    """grad ξ_i for each nonconstant eigenvalue (coordinate charts only)."""
    base, _ = unwrap(instance)
    fr = eval_metric(instance, point)
    if not isinstance(base, HamiltonianBundle):
        return []
    return [fr.g_inv[:, j].copy() for j in range(base.ell)]


def complex_eigenvalues(A: np.ndarray) -> np.ndarray:
    """Eigenvalues of a J-linear endomorphism, each listed once per complex
    dimension (real eigenvalues come in pairs)."""
    ev = np.sort(np.linalg.eigvals(A).real)
    return ev[0::2]


# ----------------------------------------------------------------------
# classification
def classify(instance: MetricInstance, tol: float = 1e-12) -> dict:
    """Symbolic curvature predicates from the family data."""
    base, scale = unwrap(instance)
    flags = {
        "bochner_flat": False,
        "weakly_bochner_flat": False,
        "chsc": False,
        "kahler_einstein": False,
        "ccb": None,
    }
    if isinstance(base, SpaceForm):
        B = -base.c / 4.0 / scale
        flags.update(bochner_flat=True, weakly_bochner_flat=True, chsc=True, kahler_einstein=True)
        flags["ccb"] = {"B": B, "lead_estimate": None, "confirmed_numerically": False}
        return flags
    if isinstance(base, Product):
        return flags
    if not isinstance(base, HamiltonianBundle):
        return flags

    ell = base.ell
    thetas = list(base.thetas)
    common = all(t.allclose(thetas[0], tol) for t in thetas[1:])
    etas = base.constants
    pc = Polynomial((1.0,))
    for c in etas:
        pc = pc * Polynomial.from_roots([c.eta] * c.mult)

    if common:
        th = thetas[0]
        roots_ok = all(abs(th(c.eta)) <= tol * max(1.0, max(abs(v) for v in th.coefficients)) for c in etas)
        base_chsc = all(abs(c.c - (-th.deriv()(c.eta))) <= 1e-9 for c in etas)
        deg = th.degree()
        flags["bochner_flat"] = roots_ok and base_chsc and deg <= ell + 2
        flags["chsc"] = flags["bochner_flat"] and deg <= ell + 1
        if roots_ok and deg <= ell + 1:
            lead = th.coef(ell + 1)
            flags["ccb"] = {
                "B": KAPPA * (-lead / 4.0) / scale,
                "lead_estimate": -lead / 4.0 / scale,
                "confirmed_numerically": False,
            }

    # weakly Bochner-flat via Ψ = (p_c Θ_j)' / p_c
    psis = []
    for th in thetas:
        num = (pc * th).deriv()
        q, r = num.divmod(pc)
        if r.degree() >= 0 and max(abs(v) for v in r.coefficients) > 1e-9:
            psis = None
            break
        psis.append(q)
    if psis:
        same = all(p.allclose(psis[0], 1e-9) for p in psis[1:])
        psi = psis[0]
        # a space form of holomorphic curvature c and complex dimension k has
        # Scal / k = (k + 1) c
        ke_ok = all(abs((c.mult + 1) * c.c + psi(c.eta)) <= 1e-9 for c in etas)
        flags["weakly_bochner_flat"] = same and psi.degree() <= ell + 1 and ke_ok
        flags["kahler_einstein"] = flags["weakly_bochner_flat"] and psi.degree() <= ell
    return flags


# Measured sign relating the fitted B to −lead(Θ)/4; see the mobility and
# nullity tests for the numerical confirmation.
KAPPA = -1.0


# ----------------------------------------------------------------------
# Gray–O'Neill tensor
def vertical_projector(frame: PointFrame, ell: int) -> np.ndarray:
    """Orthogonal projector onto span{grad ξ_j, J grad ξ_j}."""
    grads = [frame.g_inv[:, j] for j in range(ell)]
    V = np.stack(grads + [frame.J_val @ v for v in grads], axis=1)
    G = V.T @ frame.g_val @ V
    return V @ np.linalg.solve(G, V.T @ frame.g_val)


def gray_oneill(instance: MetricInstance, point, X, Y) -> np.ndarray:
    """Displayed right-hand side ``2C(X, Y)`` for horizontal X, Y."""
    base, scale = unwrap(instance)
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if isinstance(base, Product):
        return np.zeros(instance.dim)
    if not isinstance(base, HamiltonianBundle):
        raise NonHorizontalInput("no fibration structure on this family")
    fr = eval_metric(instance, point)
    ell = base.ell
    Pv = vertical_projector(fr, ell)
    for v in (X, Y):
        nv = math.sqrt(max(fr.inner(v, v), 0.0))
        if nv > 0 and math.sqrt(max(fr.inner(Pv @ v, Pv @ v), 0.0)) > 1e-9 * nv:
            raise NonHorizontalInput("input vector is not horizontal")
    p = np.asarray(point, dtype=float)
    xi = p[:ell]
    sig_hat = [elementary_symmetric([xi[k] for k in range(ell) if k != j]) for j in range(ell)]
    JX = fr.J_val @ X
    out = np.zeros(instance.dim)
    for r in range(1, ell + 1):
        Om = np.zeros((instance.dim, instance.dim))
        for c, sl in zip(base.constants, base.base_slices()):
            bf = c.base().fields(p[sl])
            Om[sl, sl] += scale * (-1) ** r * c.eta ** (ell - r) * (-bf["g"] @ bf["J"])
        dsig = np.zeros(instance.dim)
        for j in range(ell):
            dsig[j] = sig_hat[j][r - 1]
        lam_r = fr.g_inv @ dsig
        out += (X @ Om @ Y) * (fr.J_val @ lam_r) - (JX @ Om @ Y) * lam_r
    return out


def horizontal_connection_vertical(instance: MetricInstance, point, X, Y) -> np.ndarray:
    """Vertical part of ∇_X Ỹ where Ỹ = P_H Y is the horizontal extension
    obtained from the jet of the horizontal projector."""
    base, _ = unwrap(instance)
    p = np.asarray(point, dtype=float)
    fr = eval_metric(instance, p)
    ell = base.ell
    n = instance.dim
    g = fr.g.truncate(1)
    gi = jt.inv(g)
    grads = [gi[:, j] for j in range(ell)]
    J = fr.J.truncate(1)
    cols = grads + [jt.matmul(J, v) for v in grads]
    V = jt.stack(cols, axis=1)
    G = jt.einsum("ai,ab->ib", V, g)
    G = jt.einsum("ib,bj->ij", G, V)
    VtG = jt.einsum("ai,ab->ib", V, g)
    Pv = jt.einsum("ai,ij->aj", V, jt.einsum("ij,jb->ib", jt.inv(G), VtG))
    Ph = jt.as_jet(np.eye(n), n, 1) - Pv
    Yt = jt.matmul(Ph, np.asarray(Y, dtype=float))
    dY = covariant_derivative(Yt, fr.gamma, "vector")
    nab = dY @ np.asarray(X, dtype=float)
    return Pv.val @ nab


def horizontal_basis(instance: MetricInstance, point) -> np.ndarray:
    """Columns spanning the horizontal distribution at ``point``."""
    base, _ = unwrap(instance)
    fr = eval_metric(instance, point)
    Pv = vertical_projector(fr, base.ell)
    Ph = np.eye(instance.dim) - Pv
    u, s, _ = np.linalg.svd(Ph)
    k = int(np.sum(s > 0.5))
    return u[:, :k]


# ----------------------------------------------------------------------
# sampling
def sample_box(instance: MetricInstance) -> np.ndarray:
    box = instance.box()
    margin = getattr(instance, "margin", DEFAULT_MARGIN)
    base, _ = unwrap(instance)
    margin = getattr(base, "margin", margin)
    w = box[:, 1] - box[:, 0]
    lo = box[:, 0] + margin * w
    hi = box[:, 1] - margin * w
    if np.any(hi <= lo):
        raise EmptyDomain("validity box is empty after margins")
    return np.stack([lo, hi], axis=1)


def sample_points(instance: MetricInstance, count: int, seed: int = 0) -> list[np.ndarray]:
    """Deterministic scrambled-Halton points inside the margin-shrunk box."""
    if count < 1:
        raise ValueError("count must be >= 1")
    b = sample_box(instance)
    sampler = qmc.Halton(d=b.shape[0], scramble=True, seed=np.random.default_rng(seed))
    u = sampler.random(count)
    pts = qmc.scale(u, b[:, 0], b[:, 1])
    return [np.array(p) for p in pts]

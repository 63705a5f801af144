"""Truncated second-order Taylor jets and a finite-difference oracle.

A :class:`Jet2` carries an array of values together with its exact first and
second partial derivatives with respect to ``nvar`` chart coordinates.  The
derivative axes are always trailing, so a jet of shape ``S`` stores

* ``val``  with shape ``S``
* ``grad`` with shape ``S + (nvar,)``
* ``hess`` with shape ``S + (nvar, nvar)``

``grad`` or ``hess`` may be ``None``; the jet then has order 1 or 0.  This is
what :meth:`Jet2.deriv` produces: differentiating a 2-jet leaves a 1-jet whose
value is the old gradient.  Every binary operation truncates to the lower of
the two operand orders.

The module-level helpers (:func:`einsum`, :func:`sqrt`, :func:`inv`, ...)
dispatch on type, so field code written with them runs unchanged on plain
numpy arrays.  That is how the finite-difference oracle evaluates the very
same fields without jets.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import DegenerateEvaluation, EvaluationFailed, OutOfDomain

_DERIV_LETTERS = "zyxwvu"


class Jet2:
    """Array-valued degree-2 Taylor jet in ``nvar`` variables."""

    __slots__ = ("val", "grad", "hess")
    __array_priority__ = 1000
    __array_ufunc__ = None

    def __init__(self, val, grad=None, hess=None):
        self.val = np.asarray(val)
        self.grad = None if grad is None else np.asarray(grad)
        self.hess = None if hess is None else np.asarray(hess)
        if self.hess is not None and self.grad is None:
            raise ValueError("a jet with a Hessian needs a gradient")

    # ------------------------------------------------------------------
    # construction
    @classmethod
    def variables(cls, point) -> "Jet2":
        """Seed the coordinate functions at ``point`` (shape ``(n,)``)."""
        point = np.asarray(point, dtype=float)
        n = point.shape[0]
        return cls(point.copy(), np.eye(n), np.zeros((n, n, n)))

    @classmethod
    def constant(cls, value, nvar: int, order: int = 2) -> "Jet2":
        value = np.asarray(value)
        grad = np.zeros(value.shape + (nvar,), dtype=value.dtype) if order >= 1 else None
        hess = np.zeros(value.shape + (nvar, nvar), dtype=value.dtype) if order >= 2 else None
        return cls(value, grad, hess)

    @classmethod
    def zeros(cls, shape, nvar: int, order: int = 2, dtype=float) -> "Jet2":
        return cls.constant(np.zeros(shape, dtype=dtype), nvar, order)

    # ------------------------------------------------------------------
    @property
    def order(self) -> int:
        if self.grad is None:
            return 0
        return 1 if self.hess is None else 2

    @property
    def nvar(self) -> int:
        if self.grad is None:
            raise ValueError("order-0 jet has no variable count")
        return self.grad.shape[-1]

    @property
    def shape(self):
        return self.val.shape

    @property
    def ndim(self) -> int:
        return self.val.ndim

    def __len__(self):
        return len(self.val)

    def __repr__(self):
        return f"Jet2(order={self.order}, shape={self.shape}, val={self.val!r})"

    def truncate(self, order: int) -> "Jet2":
        order = min(order, self.order)
        return Jet2(self.val, self.grad if order >= 1 else None, self.hess if order >= 2 else None)

    def deriv(self) -> "Jet2":
        """Jet of the gradient; a new trailing axis indexes the variable."""
        if self.grad is None:
            raise ValueError("cannot differentiate an order-0 jet")
        return Jet2(self.grad, self.hess, None)

    def copy(self) -> "Jet2":
        return Jet2(
            self.val.copy(),
            None if self.grad is None else self.grad.copy(),
            None if self.hess is None else self.hess.copy(),
        )

    # ------------------------------------------------------------------
    # indexing and reshaping act on value axes only
    def __getitem__(self, idx) -> "Jet2":
        return Jet2(
            self.val[idx],
            None if self.grad is None else self.grad[idx],
            None if self.hess is None else self.hess[idx],
        )

    def __setitem__(self, idx, other) -> None:
        if isinstance(other, Jet2):
            if other.order < self.order:
                raise ValueError("cannot store a lower-order jet into a higher-order one")
            self.val[idx] = other.val
            if self.grad is not None:
                self.grad[idx] = other.grad
            if self.hess is not None:
                self.hess[idx] = other.hess
        else:
            self.val[idx] = other
            if self.grad is not None:
                self.grad[idx] = 0.0
            if self.hess is not None:
                self.hess[idx] = 0.0

    def transpose(self, *axes) -> "Jet2":
        nd = self.ndim
        if not axes:
            axes = tuple(reversed(range(nd)))
        elif len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return Jet2(
            self.val.transpose(axes),
            None if self.grad is None else self.grad.transpose(axes + (nd,)),
            None if self.hess is None else self.hess.transpose(axes + (nd, nd + 1)),
        )

    @property
    def T(self) -> "Jet2":
        return self.transpose()

    def reshape(self, *shape) -> "Jet2":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        n = None if self.grad is None else self.nvar
        return Jet2(
            self.val.reshape(shape),
            None if self.grad is None else self.grad.reshape(shape + (n,)),
            None if self.hess is None else self.hess.reshape(shape + (n, n)),
        )

    def sum(self, axis=None) -> "Jet2":
        nd = self.ndim
        if axis is None:
            axis = tuple(range(nd))
        elif isinstance(axis, int):
            axis = (axis % nd,)
        else:
            axis = tuple(a % nd for a in axis)
        return Jet2(
            self.val.sum(axis=axis),
            None if self.grad is None else self.grad.sum(axis=axis),
            None if self.hess is None else self.hess.sum(axis=axis),
        )

    def trace(self) -> "Jet2":
        """Trace over the last two value axes."""
        nd = self.ndim
        return Jet2(
            np.trace(self.val, axis1=nd - 2, axis2=nd - 1),
            None if self.grad is None else np.trace(self.grad, axis1=nd - 2, axis2=nd - 1),
            None if self.hess is None else np.trace(self.hess, axis1=nd - 2, axis2=nd - 1),
        )

    @property
    def real(self) -> "Jet2":
        return Jet2(
            self.val.real,
            None if self.grad is None else self.grad.real,
            None if self.hess is None else self.hess.real,
        )

    @property
    def imag(self) -> "Jet2":
        return Jet2(
            self.val.imag,
            None if self.grad is None else self.grad.imag,
            None if self.hess is None else self.hess.imag,
        )

    def conj(self) -> "Jet2":
        return Jet2(
            self.val.conj(),
            None if self.grad is None else self.grad.conj(),
            None if self.hess is None else self.hess.conj(),
        )

    # ------------------------------------------------------------------
    # arithmetic
    def _lift(self, other) -> "Jet2":
        if isinstance(other, Jet2):
            return other
        return Jet2.constant(other, self.nvar, self.order) if self.order else Jet2(np.asarray(other))

    def __add__(self, other):
        if not isinstance(other, Jet2):
            c = np.asarray(other)
            return Jet2(self.val + c, *_bcast_derivs(self, c.shape))
        order = min(self.order, other.order)
        return Jet2(
            self.val + other.val,
            None if order < 1 else self.grad + other.grad,
            None if order < 2 else self.hess + other.hess,
        )

    __radd__ = __add__

    def __neg__(self):
        return Jet2(
            -self.val,
            None if self.grad is None else -self.grad,
            None if self.hess is None else -self.hess,
        )

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if not isinstance(other, Jet2):
            c = np.asarray(other)
            return Jet2(
                self.val * c,
                None if self.grad is None else self.grad * c[..., None],
                None if self.hess is None else self.hess * c[..., None, None],
            )
        a, b = self, other
        order = min(a.order, b.order)
        val = a.val * b.val
        grad = hess = None
        if order >= 1:
            grad = a.grad * b.val[..., None] + a.val[..., None] * b.grad
        if order >= 2:
            cross = a.grad[..., :, None] * b.grad[..., None, :]
            hess = (
                a.hess * b.val[..., None, None]
                + cross
                + np.swapaxes(cross, -1, -2)
                + a.val[..., None, None] * b.hess
            )
        return Jet2(val, grad, hess)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, Jet2):
            c = np.asarray(other)
            if np.any(c == 0):
                raise DegenerateEvaluation("division by zero")
            return self * (1.0 / c)
        return self * reciprocal(other)

    def __rtruediv__(self, other):
        return reciprocal(self) * other

    def __pow__(self, k):
        return powi(self, k)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)


def _bcast_derivs(jet: Jet2, shape):
    """Derivatives of ``jet`` broadcast against a constant of ``shape``."""
    full = np.broadcast_shapes(jet.shape, shape)
    grad = hess = None
    if jet.grad is not None:
        grad = np.broadcast_to(jet.grad, full + jet.grad.shape[-1:]).copy()
    if jet.hess is not None:
        hess = np.broadcast_to(jet.hess, full + jet.hess.shape[-2:]).copy()
    return grad, hess


def is_jet(x) -> bool:
    return isinstance(x, Jet2)


def value(x):
    """Value part of a jet, or ``x`` itself."""
    return x.val if isinstance(x, Jet2) else np.asarray(x)


def as_jet(x, nvar: int, order: int = 2) -> Jet2:
    if isinstance(x, Jet2):
        return x
    return Jet2.constant(np.asarray(x), nvar, order)


# ----------------------------------------------------------------------
# elementary functions
def _chain(a: Jet2, f0, f1, f2) -> Jet2:
    grad = hess = None
    if a.order >= 1:
        grad = f1[..., None] * a.grad
    if a.order >= 2:
        hess = f1[..., None, None] * a.hess + f2[..., None, None] * (
            a.grad[..., :, None] * a.grad[..., None, :]
        )
    return Jet2(f0, grad, hess)


def reciprocal(a):
    if not isinstance(a, Jet2):
        a = np.asarray(a)
        if np.any(a == 0):
            raise DegenerateEvaluation("division by zero")
        return 1.0 / a
    if np.any(a.val == 0):
        raise DegenerateEvaluation("division by zero in jet arithmetic")
    inv_ = 1.0 / a.val
    return _chain(a, inv_, -inv_ * inv_, 2.0 * inv_ ** 3)


def sqrt(a):
    v = value(a)
    if np.iscomplexobj(v) or np.any(v <= 0):
        if not isinstance(a, Jet2) and not np.iscomplexobj(v) and np.all(v >= 0):
            return np.sqrt(v)
        raise OutOfDomain("sqrt requires a positive argument")
    if not isinstance(a, Jet2):
        return np.sqrt(v)
    s = np.sqrt(v)
    return _chain(a, s, 0.5 / s, -0.25 / (s * v))


def log(a):
    v = value(a)
    if np.iscomplexobj(v) or np.any(v <= 0):
        raise OutOfDomain("log requires a positive argument")
    if not isinstance(a, Jet2):
        return np.log(v)
    return _chain(a, np.log(v), 1.0 / v, -1.0 / (v * v))


def exp(a):
    if not isinstance(a, Jet2):
        return np.exp(a)
    e = np.exp(a.val)
    return _chain(a, e, e, e)


def powi(a, k: int):
    """Integer power; negative exponents require a nonzero base."""
    k = int(k)
    if not isinstance(a, Jet2):
        a = np.asarray(a)
        if k < 0 and np.any(a == 0):
            raise DegenerateEvaluation("negative power of zero")
        return a ** k if k >= 0 else 1.0 / a ** (-k)
    v = a.val
    if k == 0:
        return Jet2.constant(np.ones_like(v), a.nvar, a.order) if a.order else Jet2(np.ones_like(v))
    if k < 0 and np.any(v == 0):
        raise DegenerateEvaluation("negative power of zero")

    def p(e):
        return v ** e if e >= 0 else 1.0 / v ** (-e)

    return _chain(a, p(k), k * p(k - 1), k * (k - 1) * p(k - 2))


# ----------------------------------------------------------------------
# tensor helpers
def einsum(spec: str, a, b):
    """Two-operand einsum obeying the product rule."""
    if not isinstance(a, Jet2) and not isinstance(b, Jet2):
        return np.einsum(spec, a, b)
    lhs, out = spec.replace(" ", "").split("->")
    sa, sb = lhs.split(",")
    free = [c for c in _DERIV_LETTERS if c not in spec]
    y, z = free[0], free[1]
    av, bv = value(a), value(b)
    val = np.einsum(spec, av, bv)
    ja, jb = isinstance(a, Jet2), isinstance(b, Jet2)
    order = min(a.order if ja else 2, b.order if jb else 2)
    grad = hess = None
    if order >= 1:
        grad = 0
        if ja:
            grad = grad + np.einsum(f"{sa}{y},{sb}->{out}{y}", a.grad, bv)
        if jb:
            grad = grad + np.einsum(f"{sa},{sb}{y}->{out}{y}", av, b.grad)
    if order >= 2:
        hess = 0
        if ja:
            hess = hess + np.einsum(f"{sa}{y}{z},{sb}->{out}{y}{z}", a.hess, bv)
        if jb:
            hess = hess + np.einsum(f"{sa},{sb}{y}{z}->{out}{y}{z}", av, b.hess)
        if ja and jb:
            cross = np.einsum(f"{sa}{y},{sb}{z}->{out}{y}{z}", a.grad, b.grad)
            hess = hess + cross + np.swapaxes(cross, -1, -2)
    return Jet2(val, grad, hess)


def matmul(a, b):
    na, nb = np.ndim(value(a)), np.ndim(value(b))
    if na == 2 and nb == 2:
        return einsum("ij,jk->ik", a, b)
    if na == 2 and nb == 1:
        return einsum("ij,j->i", a, b)
    if na == 1 and nb == 2:
        return einsum("i,ij->j", a, b)
    if na == 1 and nb == 1:
        return einsum("i,i->", a, b)
    raise ValueError("matmul supports vectors and matrices only")


def outer(a, b):
    return einsum("i,j->ij", a, b)


def wedge(a, b):
    """Two-form ``a ^ b`` as an antisymmetric matrix of components."""
    ab = outer(a, b)
    return ab - transpose(ab)


def transpose(a):
    return a.T if isinstance(a, Jet2) else np.asarray(a).T


def trace(a):
    return a.trace() if isinstance(a, Jet2) else np.trace(np.asarray(a), axis1=-2, axis2=-1)


def inv(a):
    """Matrix inverse with exact jet propagation."""
    if not isinstance(a, Jet2):
        return np.linalg.inv(a)
    ai = np.linalg.inv(a.val)
    grad = hess = None
    if a.order >= 1:
        # d(A^-1) = -A^-1 dA A^-1
        tmp = np.einsum("ij,jky->iky", ai, a.grad)
        grad = -np.einsum("iky,kl->ily", tmp, ai)
    if a.order >= 2:
        t2 = np.einsum("ij,jkyz->ikyz", ai, a.hess)
        second = np.einsum("ikyz,kl->ilyz", t2, ai)
        cross = np.einsum("iky,klz->ilyz", tmp, grad)
        hess = -second - cross - np.swapaxes(cross, -1, -2)
    return Jet2(ai, grad, hess)


def det(a):
    """Determinant of a square matrix, propagated through log-derivatives."""
    if not isinstance(a, Jet2):
        return np.linalg.det(a)
    d = np.linalg.det(a.val)
    if d == 0:
        raise DegenerateEvaluation("singular matrix in det")
    ai = np.linalg.inv(a.val)
    grad = hess = None
    if a.order >= 1:
        dl = np.einsum("ij,jiy->y", ai, a.grad)
        grad = d * dl
    if a.order >= 2:
        m = np.einsum("ij,jky->iky", ai, a.grad)
        ddl = np.einsum("ij,jiyz->yz", ai, a.hess) - np.einsum("ijy,jiz->yz", m, m)
        hess = d * (ddl + np.outer(dl, dl))
    return Jet2(d, grad, hess)


def stack(items: Sequence, axis: int = 0):
    """Stack jets and/or constants along a new value axis."""
    jets = [x for x in items if isinstance(x, Jet2)]
    if not jets:
        return np.stack([np.asarray(x) for x in items], axis=axis)
    nvar = jets[0].nvar
    order = min(j.order for j in jets)
    lifted = [as_jet(x, nvar, order).truncate(order) for x in items]
    nd = lifted[0].ndim + 1
    ax = axis % nd
    val = np.stack([j.val for j in lifted], axis=ax)
    grad = np.stack([j.grad for j in lifted], axis=ax) if order >= 1 else None
    hess = np.stack([j.hess for j in lifted], axis=ax) if order >= 2 else None
    return Jet2(val, grad, hess)


def concatenate(items: Sequence, axis: int = 0):
    """Concatenate jets and/or constants along an existing value axis."""
    jets = [x for x in items if isinstance(x, Jet2)]
    if not jets:
        return np.concatenate([np.asarray(x) for x in items], axis=axis)
    nvar = jets[0].nvar
    order = min(j.order for j in jets)
    lifted = [as_jet(x, nvar, order).truncate(order) for x in items]
    ax = axis % lifted[0].ndim
    val = np.concatenate([j.val for j in lifted], axis=ax)
    grad = np.concatenate([j.grad for j in lifted], axis=ax) if order >= 1 else None
    hess = np.concatenate([j.hess for j in lifted], axis=ax) if order >= 2 else None
    return Jet2(val, grad, hess)


def block(rows: Sequence[Sequence]):
    """Assemble a matrix from a nested list of matrix blocks."""
    return concatenate([concatenate(list(r), axis=1) for r in rows], axis=0)


def realify(H):
    """Real matrix of a complex matrix acting on ``(Re v, Im v)``."""
    return block([[H.real, -H.imag], [H.imag, H.real]])


def zeros(shape, like=None, dtype=float):
    """Zero array, a jet when ``like`` is a jet (for in-place assembly)."""
    if isinstance(like, Jet2):
        return Jet2.zeros(shape, like.nvar, like.order, dtype=dtype)
    return np.zeros(shape, dtype=dtype)


def jet_arith(a: Jet2, b: Jet2 | None, op: str) -> Jet2:
    """Named binary/unary arithmetic, for table-driven callers."""
    if op == "add":
        return a + b
    if op == "sub":
        return a - b
    if op == "mul":
        return a * b
    if op == "div":
        return a / b
    if op == "neg":
        return -a
    raise ValueError(f"unknown op {op!r}")


def jet_func(a: Jet2, f: str, k: int | None = None) -> Jet2:
    if f == "sqrt":
        return sqrt(a)
    if f == "log":
        return log(a)
    if f == "exp":
        return exp(a)
    if f == "powi":
        if k is None:
            raise ValueError("powi needs an exponent")
        return powi(a, k)
    raise ValueError(f"unknown function {f!r}")


# ----------------------------------------------------------------------
# finite-difference oracle
@dataclass(frozen=True)
class FdStencil:
    """Central finite-difference stencil.

    ``richardson`` adds one extrapolation level combining steps ``h`` and
    ``h/2``.
    """

    step: float = 1e-4
    order: str = "central-4"
    richardson: bool = True

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError("stencil step must be positive")
        if self.order not in ("central-2", "central-4"):
            raise ValueError(f"unknown stencil order {self.order!r}")

    @property
    def accuracy(self) -> int:
        base = 2 if self.order == "central-2" else 4
        return base + 2 if self.richardson else base


def _first(f, x, h, i, order):
    e = np.zeros_like(x)
    e[i] = h
    if order == "central-2":
        return (f(x + e) - f(x - e)) / (2 * h)
    return (-f(x + 2 * e) + 8 * f(x + e) - 8 * f(x - e) + f(x - 2 * e)) / (12 * h)


def _second(f, x, h, i, j, order, f0):
    if i == j:
        e = np.zeros_like(x)
        e[i] = h
        if order == "central-2":
            return (f(x + e) - 2 * f0 + f(x - e)) / (h * h)
        return (-f(x + 2 * e) + 16 * f(x + e) - 30 * f0 + 16 * f(x - e) - f(x - 2 * e)) / (12 * h * h)
    ei = np.zeros_like(x)
    ei[i] = h
    ej = np.zeros_like(x)
    ej[j] = h
    # mixed partials always use the 4-point cross; Richardson lifts the order
    return (f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)) / (4 * h * h)


def fd_derivative(
    field: Callable, point, stencil: FdStencil = FdStencil(), hessian: bool = True
):
    """Finite-difference gradient (and Hessian) of an array-valued field.

    Derivative axes are appended after the field's own axes, matching the
    :class:`Jet2` layout.  Any failure to evaluate a stencil point surfaces as
    :class:`EvaluationFailed`.
    """
    x0 = np.asarray(point, dtype=float)
    n = x0.shape[0]

    def f(x):
        try:
            return np.asarray(field(x), dtype=float)
        except Exception as exc:  # noqa: BLE001 - any evaluator failure
            raise EvaluationFailed(f"stencil point {x} not evaluable: {exc}") from exc

    f0 = f(x0)

    def grad_at(h):
        return np.stack([_first(f, x0, h, i, stencil.order) for i in range(n)], axis=-1)

    def hess_at(h):
        out = np.empty(f0.shape + (n, n))
        for i in range(n):
            for j in range(i, n):
                d = _second(f, x0, h, i, j, stencil.order, f0)
                out[..., i, j] = d
                out[..., j, i] = d
        return out

    h = stencil.step
    base = 2 if stencil.order == "central-2" else 4
    g = grad_at(h)
    if stencil.richardson:
        g2 = grad_at(h / 2)
        g = g2 + (g2 - g) / (2 ** base - 1)
    if not hessian:
        return g, None
    H = hess_at(h)
    if stencil.richardson:
        H2 = hess_at(h / 2)
        # mixed entries are second order, diagonal ones follow the stencil
        diag = np.eye(n, dtype=bool)
        fac = np.where(diag, 2 ** base - 1, 3)
        H = H2 + (H2 - H) / fac
    return g, H

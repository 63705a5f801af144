"""Canonical instances and construction of instances from JSON specs."""

from __future__ import annotations

from .errors import ConfigError
from .metrics import (
    ConstantEigenvalue,
    HamiltonianBundle,
    MetricInstance,
    Orthotoric4D,
    Polynomial,
    Product,
    Scaled,
    SpaceForm,
)

P = Polynomial


def space_form(m: int = 2, c: float = 2.0) -> SpaceForm:
    return SpaceForm(m_=m, c=c)


def bundle_4d(c_base: float = 2.0) -> HamiltonianBundle:
    """One nonconstant eigenvalue in (0, 1) over a curve with η = 1.

    Θ = −4t(t − 1) makes the metric satisfy the extended system with B = −1;
    it has constant holomorphic sectional curvature only for ``c_base = 4``.
    """
    return HamiltonianBundle(
        thetas=(P.from_roots([0.0, 1.0], -4.0),),
        xi_boxes=((0.0, 1.0),),
        constants=(ConstantEigenvalue(1.0, 1, c_base),),
    )


def bundle_6d(c_base: float = 3.0) -> HamiltonianBundle:
    """Two nonconstant eigenvalues in (0, 1) and (1, 2) with common
    Θ = −4t(t − 1)(t − 2) and a constant eigenvalue η = 0 (B = −1)."""
    th = P.from_roots([0.0, 1.0, 2.0], -4.0)
    return HamiltonianBundle(
        thetas=(th, th),
        xi_boxes=((0.0, 1.0), (1.0, 2.0)),
        constants=(ConstantEigenvalue(0.0, 1, c_base),),
    )


def orthotoric_cubic() -> HamiltonianBundle:
    """F1 = F2 = t³ on ξ1 ∈ (−1, −½), ξ2 ∈ (½, 1)."""
    t3 = P((0.0, 0.0, 0.0, 1.0))
    return Orthotoric4D(t3, t3, ((-1.0, -0.5), (0.5, 1.0)))


def orthotoric_control() -> HamiltonianBundle:
    """Θ1 = t³ and Θ2 = t³ + t: a solution with no constant B."""
    return Orthotoric4D(P((0.0, 0.0, 0.0, 1.0)), P((0.0, 1.0, 0.0, 1.0)), ((-1.0, -0.5), (0.5, 1.0)))


def product() -> Product:
    return Product(factors=(SpaceForm(m_=1, c=1.0), SpaceForm(m_=1, c=-1.0)), eigenvalues=(0.0, 1.0))


CATALOG = {
    "space_form": space_form,
    "bundle_4d": bundle_4d,
    "bundle_6d": bundle_6d,
    "orthotoric_cubic": orthotoric_cubic,
    "orthotoric_control": orthotoric_control,
    "product": product,
}


def _poly(coeffs) -> Polynomial:
    return P(tuple(float(c) for c in coeffs))


def _boxes(b):
    return tuple(tuple(float(v) for v in pair) for pair in b)


def from_spec(spec: dict) -> MetricInstance:
    """Build an instance from a (schema-validated) JSON mapping."""
    kind = spec.get("kind")
    if kind == "catalog":
        name = spec["name"]
        if name not in CATALOG:
            raise ConfigError(f"unknown catalog instance {name!r}")
        return CATALOG[name](**spec.get("params", {}))
    if kind == "SpaceForm":
        W = spec.get("W")
        W = None if W is None else tuple(tuple(complex(*v) if isinstance(v, list) else v for v in row) for row in W)
        kw = {"m_": spec["m"], "c": float(spec["c"]), "W": W}
        if "half_width" in spec:
            kw["half_width"] = float(spec["half_width"])
        if "margin" in spec:
            kw["margin"] = float(spec["margin"])
        return SpaceForm(**kw)
    if kind == "HamiltonianBundle":
        consts = tuple(
            ConstantEigenvalue(float(c["eta"]), int(c.get("mult", 1)), float(c.get("c", 0.0)))
            for c in spec.get("constants", [])
        )
        kw = {
            "thetas": tuple(_poly(t) for t in spec["thetas"]),
            "xi_boxes": _boxes(spec["xi_boxes"]),
            "constants": consts,
        }
        if "t_box" in spec:
            kw["t_box"] = tuple(spec["t_box"])
        if "margin" in spec:
            kw["margin"] = float(spec["margin"])
        return HamiltonianBundle(**kw)
    if kind == "Orthotoric4D":
        kw = {}
        if "margin" in spec:
            kw["margin"] = float(spec["margin"])
        return Orthotoric4D(_poly(spec["F1"]), _poly(spec["F2"]), _boxes(spec["box"]), **kw)
    if kind == "Product":
        return Product(
            factors=tuple(from_spec(f) for f in spec["factors"]),
            eigenvalues=tuple(float(v) for v in spec["eigenvalues"]),
        )
    if kind == "Scaled":
        return Scaled(base=from_spec(spec["base"]), s=float(spec["s"]))
    raise ConfigError(f"unknown instance kind {kind!r}")

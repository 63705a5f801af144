"""Check orchestration, report assembly and CSV emission."""

from __future__ import annotations

import csv
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone

import numpy as np

from . import __version__
from .catalog import from_spec
from .cone import build_cone, cone_audit, hatA_from_solution, parallel_residual
from .errors import DegenerateFit, KmobError
from .geometry import christoffel_from_derivatives, covariant_derivative, tensor_norm
from .jets import FdStencil, fd_derivative
from .metrics import (
    HamiltonianBundle,
    Scaled,
    classify,
    eval_metric,
    eval_solution,
    sample_points,
    unwrap,
)
from .mobility import (
    F_polynomial,
    cproj_pair_at,
    estimate_B_mu_fields,
    extended_system_residual,
    fd_step,
    killing_residual_at,
    main_equation_residual_at,
    mobility_lower_bound,
)
from .nullity import (
    b_explicit_4d,
    b_grid,
    eigenvalue_gradients,
    equivalence_battery_at,
    integrability_residual_at,
    nullity_scan,
    nullity_space,
    span_residual,
)

ANCHORS = {
    "kahler.nabla_J": "complex structure is parallel",
    "kahler.nabla_omega": "Kähler form is parallel",
    "kahler.dtau": "potential satisfies dτ = 2ω (finite differences)",
    "kahler.fd_christoffel": "Christoffel symbols: jets against finite differences",
    "kahler.fd_riemann": "curvature: jets against finite differences",
    "solution.main": "main equation ∇_X A = X♭⊗Λ + Λ♭⊗X + JX♭⊗JΛ + JΛ♭⊗JX",
    "solution.killing": "JΛ is a Killing field",
    "solution.integrability": "[R(X,Y), A] + 4[K(X,Y), ∇Λ] = 0",
    "extended.B_spread": "fitted B is constant",
    "extended.main": "extended system, line 1: main equation",
    "extended.lambda": "extended system, line 2: ∇Λ = μ Id + B A",
    "extended.mu": "extended system, line 3: ∇μ = 2B Λ♭ (finite differences)",
    "nullity.fibre_span": "eigenvalue gradients and their J-images lie in the B-nullity",
    "nullity.j_invariance": "B-nullity is J-invariant",
    "equivalence.commutator": "[Z_B(X,Y), A] = 0",
    "equivalence.extended": "∇Λ − B A is a multiple of the identity",
    "equivalence.killing_nullity": "Z_B(X, JΛ) = 0",
    "equivalence.eigen_gradients": "eigenvalue gradients lie in the B-nullity",
    "mobility.included": "solutions in the mobility certificate satisfy the main equation",
    "f_poly.spread": "F(t) = −4(Bt + μ) p_A(t) + g(K, K(t)) has constant coefficients",
    "cproj.pattern": "g and (det A)^{-1/2} g A^{-1} are c-projectively equivalent",
    "cproj.roundtrip": "A(g, g̃) reproduces A",
    "cone.nabla_J": "cone complex structure is parallel",
    "cone.cone_field": "cone vector field satisfies ∇̂C = Id",
    "cone.moment_killing": "½ Ĵ grad r² is a Killing field",
    "cone.parallel": "Â built from (A, Λ, μ) is parallel on the cone",
    "cone.eigen_spread": "eigenvalues of Â are constant",
}


def _threads() -> int:
    env = os.environ.get("KMOB_THREADS")
    cap = os.cpu_count() or 1
    if env:
        try:
            return max(1, min(int(env), cap))
        except ValueError:
            return 1
    return 1


def pmap(fn, items):
    """Index-ordered map, optionally across threads."""
    items = list(items)
    n = _threads()
    if n <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as ex:
        return list(ex.map(fn, items))


def _clean(x):
    """JSON-safe conversion with non-finite numbers mapped to null."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.ndarray):
        return _clean(x.tolist())
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    return x


def record(name, residuals, tol, point_set="base", indices=None, error=None, extra=None):
    res = [float(r) for r in residuals]
    finite = bool(res) and all(math.isfinite(r) for r in res)
    mx = max(res) if res else float("nan")
    out = {
        "name": name,
        "anchor": ANCHORS.get(name, name),
        "point_set": point_set,
        "points_used": list(indices) if indices is not None else list(range(len(res))),
        "residuals": res,
        "max_residual": mx,
        "tolerance": tol,
        "pass": bool(error is None and finite and mx <= tol),
    }
    if error is not None:
        out["error"] = error
    if extra:
        out.update(extra)
    return out


class Context:
    """Per-run cache of instance, points and solution fields."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.instance = from_spec(cfg["instance"])
        self.points = sample_points(self.instance, cfg["points"]["count"], cfg["points"]["seed"])
        self._S = None
        self._B = None
        self.tol = cfg["tolerances"]

    @property
    def solutions(self):
        if self._S is None:
            self._S = pmap(lambda p: eval_solution(self.instance, p), self.points)
        return self._S

    def B_estimate(self):
        if self._B is None:
            S = self.solutions
            if max(float(np.linalg.norm(s.lam)) for s in S) <= 1e-10:
                self._B = ("parallel", None)
            else:
                try:
                    self._B = ("fit", estimate_B_mu_fields(S))
                except DegenerateFit as exc:
                    self._B = ("degenerate", str(exc))
        return self._B

    @property
    def B(self) -> float:
        kind, est = self.B_estimate()
        if kind == "fit":
            return est.B
        if kind == "parallel":
            return 0.0
        raise DegenerateFit(est)


# ----------------------------------------------------------------------
# checks
def check_kahler(ctx: Context):
    inst = ctx.instance

    def at(p):
        fr = eval_metric(inst, p)
        nJ = tensor_norm(covariant_derivative(fr.J, fr.gamma, "endo"), fr, "udd")
        nw = tensor_norm(covariant_derivative(fr.omega_jet, fr.gamma, "bilinear"), fr, "ddd")
        return fr, nJ, nw

    rows = pmap(at, ctx.points)
    out = [
        record("kahler.nabla_J", [r[1] for r in rows], ctx.tol["kahler.nabla_J"]),
        record("kahler.nabla_omega", [r[2] for r in rows], ctx.tol["kahler.nabla_omega"]),
    ]
    stencil = FdStencil(step=fd_step(inst))

    def tau_at(x):
        return np.asarray(inst.fields(np.asarray(x))["tau"], dtype=float)

    def dtau(p):
        fr = eval_metric(inst, p)
        d, _ = fd_derivative(tau_at, p, stencil, hessian=False)
        dt = d.T - d  # (dτ)_ab = ∂_a τ_b − ∂_b τ_a
        return tensor_norm(dt - 2.0 * fr.omega, fr, "dd")

    out.append(record("kahler.dtau", pmap(dtau, ctx.points), ctx.tol["kahler.dtau"]))

    def g_at(x):
        return np.asarray(inst.fields(np.asarray(x))["g"], dtype=float)

    idx = list(range(len(ctx.points)))

    def oracle(i):
        p = ctx.points[i]
        fr = eval_metric(inst, p)
        dg, ddg = fd_derivative(g_at, p, stencil, hessian=True)
        gam, dgam = christoffel_from_derivatives(fr.g_val, dg, ddg)
        from .geometry import riemann_from_christoffel

        rend = riemann_from_christoffel(gam, dgam)
        rc = np.linalg.norm(gam - fr.gamma) / max(np.linalg.norm(fr.gamma), 1.0)
        rr = np.linalg.norm(rend - fr.rend) / max(np.linalg.norm(fr.rend), 1.0)
        return rc, rr

    orc = pmap(oracle, idx)
    out.append(record("kahler.fd_christoffel", [o[0] for o in orc], ctx.tol["kahler.fd_christoffel"], indices=idx))
    out.append(record("kahler.fd_riemann", [o[1] for o in orc], ctx.tol["kahler.fd_riemann"], indices=idx))
    return out


def check_solution(ctx: Context):
    S = ctx.solutions
    main = pmap(main_equation_residual_at, S)
    kil = pmap(killing_residual_at, S)
    integ = pmap(integrability_residual_at, S)
    return [
        record("solution.main", main, ctx.tol["solution.main"]),
        record("solution.killing", kil, ctx.tol["solution.killing"]),
        record("solution.integrability", integ, ctx.tol["solution.integrability"]),
    ]


def check_extended(ctx: Context):
    kind, est = ctx.B_estimate()
    if kind != "fit":
        msg = "A is parallel; the extended system holds trivially with Λ = 0" if kind == "parallel" else est
        if kind == "parallel":
            return [record("extended.B_spread", [0.0] * len(ctx.points), ctx.tol["extended.B_spread"], extra={"note": msg})]
        return [record("extended.B_spread", [], ctx.tol["extended.B_spread"], error=msg)]
    B = est.B
    spread = [abs(b - B) for b in est.B_points]
    ext = extended_system_residual(ctx.instance, B, ctx.points)
    return [
        record("extended.B_spread", spread, ctx.tol["extended.B_spread"], extra={"B": B}),
        record("extended.main", ext.main, ctx.tol["extended.main"]),
        record("extended.lambda", ext.lam, ctx.tol["extended.lambda"]),
        record("extended.mu", ext.mu, ctx.tol["extended.mu"]),
    ]


def check_nullity(ctx: Context, summary: dict):
    B = ctx.B

    def at(S):
        nr = nullity_space(S.frame, B)
        grads = [v for v in eigenvalue_gradients(S) if np.linalg.norm(v) > 1e-12]
        vecs = grads + [S.frame.J_val @ v for v in grads]
        span = max([span_residual(nr.basis, v, S.frame) for v in vecs], default=0.0)
        return nr, span

    rows = pmap(at, ctx.solutions)
    summary["nullity"] = {
        "B": B,
        "dimensions": [r[0].dimension for r in rows],
        "scan_point": 0,
        "scan": nullity_scan(ctx.solutions[0].frame, b_grid(B)),
    }
    return [
        record("nullity.fibre_span", [r[1] for r in rows], ctx.tol["nullity.fibre_span"]),
        record("nullity.j_invariance", [r[0].j_invariance for r in rows], ctx.tol["nullity.j_invariance"]),
    ]


def check_equivalence(ctx: Context):
    B = ctx.B
    rows = pmap(lambda S: equivalence_battery_at(S, B), ctx.solutions)
    return [
        record(f"equivalence.{k}", [r[k] for r in rows], ctx.tol[f"equivalence.{k}"])
        for k in ("commutator", "extended", "killing_nullity", "eigen_gradients")
    ]


def check_mobility(ctx: Context, summary: dict):
    cert = mobility_lower_bound(ctx.instance, ctx.points)
    summary["certificate"] = {
        "solutions": cert.names,
        "rank": cert.rank,
        "singular_values": cert.singular_values,
        "threshold": cert.threshold,
        "max_residuals": cert.residuals,
        "notes": cert.notes,
    }
    per = [max(cert.point_residuals[n][i] for n in cert.names) if cert.names else 0.0 for i in range(len(ctx.points))]
    return [record("mobility.included", per, ctx.tol["mobility.included"], extra={"rank": cert.rank})]


def check_f_poly(ctx: Context, summary: dict):
    C, spread, per = F_polynomial(ctx.instance, ctx.B, ctx.points)
    summary["f_polynomial"] = {"coefficients": C.mean(axis=0), "spread": spread}
    return [record("f_poly.spread", per, ctx.tol["f_poly.spread"])]


def check_cproj(ctx: Context):
    rows = pmap(cproj_pair_at, ctx.solutions)
    return [
        record("cproj.pattern", [r.residual for r in rows], ctx.tol["cproj.pattern"]),
        record("cproj.roundtrip", [r.roundtrip for r in rows], ctx.tol["cproj.roundtrip"]),
    ]


def check_cone(ctx: Context, summary: dict):
    B = ctx.B
    names = ["cone.nabla_J", "cone.cone_field", "cone.moment_killing", "cone.parallel", "cone.eigen_spread"]
    if not B < 0:
        msg = f"the cone needs B < 0 (fitted B = {B:.6g})"
        return [record(n, [], ctx.tol[n], point_set="cone", error=msg) for n in names]
    base = ctx.instance if abs(B + 1.0) <= 1e-9 else Scaled(ctx.instance, -B)
    cone = build_cone(base)
    pts = cone.sample(len(ctx.points), ctx.cfg["points"]["seed"])
    summary["cone_points"] = pts
    summary["cone_scale"] = 1.0 if base is ctx.instance else -B
    aud = pmap(lambda p: cone_audit(cone, p), pts)
    fields = pmap(lambda p: hatA_from_solution(cone, p), pts)
    lookup = {id(p): H for p, H in zip(pts, fields)}
    rep = parallel_residual(cone, pts, build=lambda p: lookup[id(p)])
    mean = np.array(rep.eigenvalues)
    spread = [float(np.max(np.abs(np.sort(np.linalg.eigvals(H.hatA.val).real) - mean))) for H in fields]
    summary["cone_eigenvalues"] = mean
    return [
        record("cone.nabla_J", [a["nabla_J"] for a in aud], ctx.tol["cone.nabla_J"], "cone"),
        record("cone.cone_field", [a["cone_field"] for a in aud], ctx.tol["cone.cone_field"], "cone"),
        record("cone.moment_killing", [a["moment_killing"] for a in aud], ctx.tol["cone.moment_killing"], "cone"),
        record("cone.parallel", rep.residuals, ctx.tol["cone.parallel"], "cone"),
        record("cone.eigen_spread", spread, ctx.tol["cone.eigen_spread"], "cone"),
    ]


def _b_estimates(ctx: Context) -> dict:
    inst = ctx.instance
    cls = classify(inst)
    out = {"fit": None, "b_explicit": None, "lead": None, "relations": {}}
    try:
        kind, est = ctx.B_estimate()
        if kind == "fit":
            out["fit"] = est.B
        elif kind == "parallel":
            out["fit"] = 0.0
    except KmobError:
        pass
    if cls.get("ccb"):
        out["lead"] = cls["ccb"]["lead_estimate"]
    base, scale = unwrap(inst)
    if isinstance(base, HamiltonianBundle) and base.ell == 2 and not base.constants:
        vals = [b_explicit_4d(base.thetas[0], base.thetas[1], p[0], p[1])[0] / scale for p in ctx.points]
        out["b_explicit"] = float(np.mean(vals))
    fit = out["fit"]
    for key in ("b_explicit", "lead"):
        ref = out[key]
        if fit is not None and ref is not None and abs(ref) > 1e-12:
            out["relations"][f"fit/{key}"] = fit / ref
    return out


RUNNERS = {
    "kahler": lambda ctx, s: check_kahler(ctx),
    "solution": lambda ctx, s: check_solution(ctx),
    "extended": lambda ctx, s: check_extended(ctx),
    "nullity": check_nullity,
    "equivalence": lambda ctx, s: check_equivalence(ctx),
    "mobility": check_mobility,
    "f_poly": check_f_poly,
    "cproj": lambda ctx, s: check_cproj(ctx),
    "cone": check_cone,
}


def run(cfg: dict, timestamp: bool = True) -> dict:
    """Execute the configured checks; ``cfg`` must be validated."""
    ctx = Context(cfg)
    summary: dict = {}
    records = []
    for name in cfg["checks"]:
        try:
            records.extend(RUNNERS[name](ctx, summary))
        except (KmobError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
            records.append(record(name, [], 0.0, error=f"{type(exc).__name__}: {exc}"))
    report = {
        "engine": {"name": "kmob", "version": __version__},
        "config": cfg,
        "instance": ctx.instance.describe(),
        "classification": classify(ctx.instance),
        "points": {"base": ctx.points, "cone": summary.pop("cone_points", [])},
        "B_estimates": _b_estimates(ctx),
        "checks": records,
        "summary": summary,
        "passed": all(r["pass"] for r in records),
    }
    if timestamp:
        report["generated_at"] = datetime.now(timezone.utc).isoformat()
    return _clean(report)


def report_body(report: dict) -> str:
    """Canonical JSON text without the timestamp."""
    body = {k: v for k, v in report.items() if k != "generated_at"}
    return json.dumps(body, indent=2, sort_keys=True, ensure_ascii=False)


def write_report(report: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(report, indent=2, sort_keys=True, ensure_ascii=False))
        fh.write("\n")


def emit_csv(report: dict, path) -> None:
    """One row per (check, point) with coordinates, residual, tolerance, pass."""
    pts = report.get("points", {})
    width = max([len(p) for s in pts.values() for p in s] or [0])
    header = ["check", "point_index"] + [f"x{i}" for i in range(width)] + ["residual", "tolerance", "pass"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for rec in report.get("checks", []):
            coords = pts.get(rec.get("point_set", "base"), [])
            for i, r in zip(rec["points_used"], rec["residuals"]):
                c = coords[i] if i < len(coords) else []
                cells = [repr(float(v)) for v in c] + [""] * (width - len(c))
                ok = r is not None and r <= rec["tolerance"] and "error" not in rec
                w.writerow([rec["name"], i] + cells + [repr(r), repr(rec["tolerance"]), str(ok).lower()])

"""Scenario files: JSON documents describing a Kuranishi category and what to check on it.

A scenario either names a built-in fixture (``"fixture": "z"``) or declares
its charts directly. Expressions for dbar, forms and evaluation maps use the
small language of :mod:`vfc.expr`. Validation happens in two passes: the
JSON schema in ``schema/scenario.json``, then cross references (chart ids,
suite names, tolerance keys, expression lengths).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .charts import ExplodedChart, manifold_chart
from .errors import VFCError
from .expr import compile_exprs
from .forms import Form
from .kcat import GRID_DENSITY, FiniteGroup, KChart, build_kuranishi, identity_transition
from .regions import Region
from .suites import DEFAULT_TOL, SUITES, Context, fixture_context
from .tropical import polytope_from_json, to_fraction

SCENARIO_VERSION = 1


@dataclass
class Scenario:
    doc: dict
    digest: str
    name: str
    ctx: Context | None = None
    polytope: object = None
    point: tuple | None = None
    integrand: str | None = None
    samples: np.ndarray | None = None
    checks: tuple = ()
    extra: dict = field(default_factory=dict)


def _schema() -> dict:
    text = resources.files("vfc").joinpath("schema/scenario.json").read_text()
    return json.loads(text)


def shipped() -> list[str]:
    """Names of the scenarios installed with the package."""
    folder = resources.files("vfc").joinpath("scenarios")
    return sorted(p.name[:-5] for p in folder.iterdir() if p.name.endswith(".json"))


def read(path) -> tuple[dict, str]:
    """Load and schema-check a scenario; returns the document and a digest of its bytes."""
    p = Path(path)
    if not p.exists() and str(path) in shipped():
        raw = resources.files("vfc").joinpath(f"scenarios/{path}.json").read_bytes()
    else:
        try:
            raw = p.read_bytes()
        except OSError as exc:
            raise VFCError("IO", f"cannot read scenario: {exc.strerror}", path=str(path)) from None
    try:
        doc = json.loads(raw)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise VFCError("SCHEMA", f"scenario is not valid JSON: {exc}", path=str(path)) from None
    validate_document(doc)
    return doc, hashlib.sha256(raw).hexdigest()


def validate_document(doc) -> None:
    try:
        jsonschema.validate(doc, _schema())
    except jsonschema.ValidationError as exc:
        where = "/".join(str(x) for x in exc.absolute_path) or "<root>"
        raise VFCError("SCHEMA", exc.message, at=where) from None
    if "fixture" in doc and "charts" in doc:
        raise VFCError("SCHEMA", "give either 'fixture' or 'charts', not both")
    ids = [c["id"] for c in doc.get("charts", [])]
    if len(set(ids)) != len(ids):
        raise VFCError("SCHEMA", "duplicate chart ids")
    if "charts" in doc:
        known = set(ids)
        refs = [t[k] for t in doc.get("transitions", []) for k in ("i", "j")]
        refs += list(doc.get("core_regions", {}))
        refs += list(doc.get("target", {}).get("map", {}))
        missing = sorted(set(refs) - known)
        if missing:
            raise VFCError("SCHEMA", f"unknown chart ids {missing}")
    for name in doc.get("checks", []):
        if name not in SUITES:
            raise VFCError("SCHEMA", f"unknown check {name!r}; known: {list(SUITES)}")
    for key in doc.get("tolerances", {}):
        if key not in DEFAULT_TOL:
            raise VFCError("SCHEMA", f"unknown tolerance {key!r}; known: {sorted(DEFAULT_TOL)}")
    forms = doc.get("forms", {})
    if "integrand" in doc and doc["integrand"] not in forms and doc["integrand"] != "one":
        raise VFCError("SCHEMA", f"integrand {doc['integrand']!r} is not a declared form")
    if ("point" in doc) != ("polytope" in doc):
        raise VFCError("SCHEMA", "'polytope' and 'point' come together")


# -- building ---------------------------------------------------------------

def _region(obj, dim) -> Region:
    reg = Region.from_json(obj)
    if reg.dim != dim:
        raise VFCError("BAD_DIM", f"region of dimension {reg.dim}, expected {dim}")
    return reg


def _vertex_key(text: str, m: int) -> tuple:
    parts = [p for p in str(text).split(",") if p.strip()]
    if len(parts) != m:
        raise VFCError("BAD_DIM", f"vertex {text!r} needs {m} coordinates")
    return tuple(to_fraction(p.strip()) for p in parts)


def _dbar(entry, n, m, rank, chart, cid):
    def compiled(texts):
        if len(texts) != rank:
            raise VFCError("BAD_DIM", f"dbar has {len(texts)} components, rank is {rank}", chart=cid)
        return compile_exprs(texts, n, m)

    if isinstance(entry, list):
        f = compiled(entry)
        return lambda X, v=(): f(X)
    per = {_vertex_key(k, m): compiled(v) for k, v in entry.items()}
    missing = [v for v in chart.strata() if v not in per]
    if missing:
        raise VFCError("SCHEMA", f"dbar missing for vertices {[[str(x) for x in v] for v in missing]}",
                       chart=cid)

    def f(X, v=()):
        return per[tuple(v)](X)
    return f


def _projection(coords):
    idx = list(coords)
    return lambda X, v=(): np.atleast_2d(X)[:, idx]


def _chart(c) -> KChart:
    cid, n, m, rank = c["id"], c["n"], c.get("m", 0), c["rank"]
    box_dim = n + m
    regs = c["regions"]
    sharp = _region(regs["sharp"], box_dim)
    if m:
        if "polytope" not in c:
            raise VFCError("SCHEMA", "tropical chart needs a polytope", chart=cid)
        P = polytope_from_json(c["polytope"])
        chart = ExplodedChart(n, m, P, sharp, c.get("orientation", 1), cid)
    else:
        if "polytope" in c and c["polytope"]["dim"] != 0:
            raise VFCError("BAD_DIM", "polytope given for a chart with m = 0", chart=cid)
        chart = manifold_chart(sharp, c.get("orientation", 1), cid)
    dim = n + 2 * m
    group = None
    if "group" in c:
        g = c["group"]
        plane = tuple(g.get("plane", (0, 1)))
        if max(plane) >= dim or plane[0] == plane[1]:
            raise VFCError("BAD_DIM", f"rotation plane {list(plane)} in a chart of dimension {dim}", chart=cid)
        group = FiniteGroup.cyclic_rotation(g["cyclic"], dim, rank, plane, g.get("character", 0))
    base = c.get("base")
    if base is not None and any(k >= dim for k in base):
        raise VFCError("BAD_DIM", f"base coordinates {base} out of range", chart=cid)
    return KChart(cid, chart, _region(regs["core"], box_dim), _region(regs["prime"], box_dim), rank,
                  _dbar(c["dbar"], n, m, rank, chart, cid), group,
                  U=_region(regs["bundle"], box_dim) if "bundle" in regs else None,
                  base_map=_projection(base) if base else None, base_coords=tuple(base) if base else None)


def _forms(doc, shapes) -> tuple[dict, tuple]:
    """Compile declared forms; one Form if every chart has the same shape, else a dict per chart."""
    out, closed = {}, []
    for name, entry in sorted(doc.get("forms", {}).items()):
        per = {}
        for cid, (n, m) in shapes.items():
            dim = n + 2 * m
            f = compile_exprs(entry["coeffs"], n, m, complex_out=False)
            form = Form(entry["degree"], dim, (lambda f: lambda X, v=(): f(X))(f), generated_by_functions=True,
                        name=name)
            if len(entry["coeffs"]) != form.ncomp:
                raise VFCError("BAD_DIM", f"form {name!r} of degree {entry['degree']} needs {form.ncomp} "
                               f"coefficients, got {len(entry['coeffs'])}")
            per[cid] = form
        out[name] = next(iter(per.values())) if len(set(shapes.values())) == 1 else per
        if entry.get("closed"):
            closed.append(name)
    return out, tuple(closed)


def _target(doc, charts):
    if "target" in doc:
        t = doc["target"]
        pi = {}
        for cid, texts in t["map"].items():
            if len(texts) != t["dim"]:
                raise VFCError("BAD_DIM", f"evaluation map has {len(texts)} components, target has {t['dim']}",
                               chart=cid)
            c = charts[cid]
            f = compile_exprs(texts, c.chart.n, c.chart.m, complex_out=False)
            pi[cid] = (lambda f: lambda X, v=(): f(X))(f)
        return pi, t["dim"]
    with_base = {c.id: c for c in charts.values() if c.base_map is not None}
    if with_base and len(with_base) == len(charts):
        dims = {len(c.base_coords) for c in with_base.values()}
        if len(dims) == 1:
            return {cid: c.base_map for cid, c in with_base.items()}, dims.pop()
    return {}, 0


def _options(doc, seed, eps, grid, tol) -> dict:
    tols = dict(doc.get("tolerances", {}))
    if tol is not None:
        tols = {k: float(tol) for k in DEFAULT_TOL}
    opts = {"seed": doc.get("seed", 0) if seed is None else seed,
            "eps": doc.get("eps", 0.05) if eps is None else eps,
            "density": doc.get("grid", GRID_DENSITY) if grid is None else grid,
            "tol": tols}
    if "seeds" in doc:
        opts["seeds"] = tuple(doc["seeds"])
    if not 0 < opts["eps"] < 0.5:
        raise VFCError("SCHEMA", f"eps must lie in (0, 1/2), got {opts['eps']}")
    if opts["density"] <= 0:
        raise VFCError("SCHEMA", f"grid density must be positive, got {opts['density']}")
    return opts


def build(doc: dict, digest: str = "", seed=None, eps=None, grid=None, tol=None) -> Scenario:
    """Turn a validated document into a :class:`Scenario` (building the category if there is one)."""
    sc = Scenario(doc, digest, doc.get("name", doc.get("fixture", "scenario")), integrand=doc.get("integrand"),
                  checks=tuple(doc.get("checks", ())))
    if "polytope" in doc:
        sc.polytope = polytope_from_json(doc["polytope"])
        sc.point = tuple(to_fraction(x) for x in doc["point"])
    if "samples" in doc:
        sc.samples = np.asarray(doc["samples"], dtype=float)
    opts = _options(doc, seed, eps, grid, tol)
    if "fixture" in doc:
        sc.ctx = fixture_context(doc["fixture"], **opts)
        if doc.get("forms"):
            shapes = {cid: (sc.ctx.K[cid].chart.n, sc.ctx.K[cid].chart.m) for cid in sc.ctx.K.order}
            sc.ctx.forms, sc.ctx.closed = _forms(doc, shapes)
    elif "charts" in doc:
        charts = {c["id"]: _chart(c) for c in doc["charts"]}
        trans = []
        for t in doc.get("transitions", []):
            a, b = charts[t["i"]], charts[t["j"]]
            if (a.chart.n, a.chart.m) != (b.chart.n, b.chart.m):
                raise VFCError("BAD_DIM", "identity transitions join charts of the same shape", pair=f"{a.id}-{b.id}")
            trans.append(identity_transition(a.id, b.id, _region(t["overlap"], a.chart.n + a.chart.m), a.dim))
        pi, dim_a = _target(doc, charts)
        base_dims = {len(c.base_coords) for c in charts.values() if c.base_coords}
        K = build_kuranishi(list(charts.values()), trans, base_dim=base_dims.pop() if len(base_dims) == 1 else 0,
                            name=sc.name, density=opts["density"])
        cores = {cid: _region(r, charts[cid].chart.n + charts[cid].chart.m)
                 for cid, r in doc.get("core_regions", {}).items()} or None
        complete = all(c.chart.polytope.same_set(c.chart.polytope.closure()) for c in charts.values())
        sc.ctx = Context(sc.name, K, pi, dim_a, cores, complete, **opts)
        shapes = {cid: (c.chart.n, c.chart.m) for cid, c in charts.items()}
        sc.ctx.forms, sc.ctx.closed = _forms(doc, shapes)
    if sc.integrand and sc.ctx is not None and sc.integrand != "one" and sc.integrand not in sc.ctx.forms:
        raise VFCError("SCHEMA", f"integrand {sc.integrand!r} is not a declared form")
    return sc


def load(path, **flags) -> Scenario:
    doc, digest = read(path)
    return build(doc, digest, **flags)

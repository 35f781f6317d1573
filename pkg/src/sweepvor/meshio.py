"""JSON mesh files.

Single-document schema::

    {"domain": [[x,y],...], "seeds": [[x,y],...],
     "cells": [{"id": int, "seed_index": int, "vertices": [[x,y],...]}, ...],
     "facets": [{"kind": "interior"|"boundary", "cells": [i] or [i,j],
                 "endpoints": [[x,y],[x,y]]}, ...]}

Numbers are written with 17 significant digits so floats round-trip exactly.
Derived quantities (areas, normals, adjacency) are recomputed on read, never
stored, through the same finalisation code the builder uses.
"""

import json

import numpy as np

from .errors import IoError, SchemaError
from .geometry import DomainPolygon, _finalize_mesh


def _num(x):
    return format(float(x), ".17g")


def _pt(p):
    return f"[{_num(p[0])},{_num(p[1])}]"


def _pts(ps):
    return "[" + ",".join(_pt(p) for p in ps) + "]"


def dumps_mesh(mesh):
    cells = ",".join(
        f'{{"id":{c.id},"seed_index":{int(mesh.seed_index[c.id])},'
        f'"vertices":{_pts(c.vertices)}}}'
        for c in mesh.cells
    )
    facets = ",".join(
        f'{{"kind":"{f.kind}","cells":[{",".join(str(c) for c in f.cells)}],'
        f'"endpoints":{_pts(f.endpoints)}}}'
        for f in mesh.facets
    )
    return (
        f'{{"domain":{_pts(mesh.domain.vertices)},'
        f'"seeds":{_pts(mesh.seeds)},'
        f'"cells":[{cells}],'
        f'"facets":[{facets}]}}\n'
    )


def write_mesh(mesh, path):
    try:
        with open(path, "w") as fh:
            fh.write(dumps_mesh(mesh))
    except OSError as exc:
        raise IoError(str(exc)) from exc


def _need(doc, key, where):
    if not isinstance(doc, dict) or key not in doc:
        raise SchemaError(f"missing key at {where}.{key}" if where else f"missing key {key}")
    return doc[key]


def _point_list(obj, where, min_len=1):
    if not isinstance(obj, list) or len(obj) < min_len:
        raise SchemaError(f"{where} must be a list of at least {min_len} points")
    out = np.empty((len(obj), 2))
    for k, p in enumerate(obj):
        if (
            not isinstance(p, list)
            or len(p) != 2
            or not all(isinstance(v, (int, float)) for v in p)
        ):
            raise SchemaError(f"{where}[{k}] is not an [x, y] pair")
        out[k] = p
    if not np.all(np.isfinite(out)):
        raise SchemaError(f"{where} contains non-finite coordinates")
    return out


def loads_mesh(text):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc}") from exc
    domain = DomainPolygon(_point_list(_need(doc, "domain", ""), "domain", 3))
    seeds = _point_list(_need(doc, "seeds", ""), "seeds", 1)
    raw_cells = _need(doc, "cells", "")
    if not isinstance(raw_cells, list) or not raw_cells:
        raise SchemaError("cells must be a non-empty list")
    n = len(raw_cells)
    seed_index = np.empty(n, dtype=np.int64)
    cell_vertices = [None] * n
    seen = set()
    for k, rc in enumerate(raw_cells):
        cid = _need(rc, "id", f"cells[{k}]")
        if not isinstance(cid, int) or cid < 0 or cid >= n or cid in seen:
            raise SchemaError(f"cells[{k}].id must be a unique integer in [0, {n})")
        seen.add(cid)
        si = _need(rc, "seed_index", f"cells[{k}]")
        if not isinstance(si, int) or si < 0 or si >= len(seeds):
            raise SchemaError(f"cells[{k}].seed_index out of range")
        seed_index[cid] = si
        cell_vertices[cid] = _point_list(
            _need(rc, "vertices", f"cells[{k}]"), f"cells[{k}].vertices", 3
        )
    raw_facets = _need(doc, "facets", "")
    if not isinstance(raw_facets, list):
        raise SchemaError("facets must be a list")
    primaries = []
    for k, rf in enumerate(raw_facets):
        kind = _need(rf, "kind", f"facets[{k}]")
        owners = _need(rf, "cells", f"facets[{k}]")
        if kind not in ("interior", "boundary"):
            raise SchemaError(f"facets[{k}].kind must be 'interior' or 'boundary'")
        want = 2 if kind == "interior" else 1
        if (
            not isinstance(owners, list)
            or len(owners) != want
            or not all(isinstance(o, int) and 0 <= o < n for o in owners)
        ):
            raise SchemaError(f"facets[{k}].cells must list {want} valid cell id(s)")
        endpoints = _point_list(
            _need(rf, "endpoints", f"facets[{k}]"), f"facets[{k}].endpoints", 2
        )
        if len(endpoints) != 2:
            raise SchemaError(f"facets[{k}].endpoints must hold exactly 2 points")
        primaries.append((kind, tuple(owners), endpoints))
    return _finalize_mesh(domain, seeds, seed_index, cell_vertices, primaries)


def read_mesh(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise IoError(str(exc)) from exc
    return loads_mesh(text)

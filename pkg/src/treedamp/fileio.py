"""Problem files, CSV trajectories and the JSON summary.

Problem file (JSON)::

    {"q": 2.0, "y0": 1.0,
     "edges": [{"id": 1, "parent_vertex": 0, "length": 1.0, "b": 0, "c": 0, "alpha": 1},
               {"id": 2, "parent_vertex": 1, "length": 3.0, "b": 0, "c": 0, "alpha": 0.5}]}

``parent_vertex`` is 0 for the root edge and otherwise the id of the edge
whose terminal vertex the edge leaves.  All numbers written by this module
use 17 significant digits so that output is reproducible bit for bit.
"""

import csv
import json
import math
import os
from pathlib import Path

import numpy as np

from .cauchy import ProblemSpec
from .errors import ParseError
from .grid import StepFunction
from .tree import build_tree

__all__ = [
    "parse_problem",
    "load_problem",
    "emit_problem",
    "dumps17",
    "fmt",
    "write_trajectories",
    "write_table",
    "read_controls",
]

EDGE_FIELDS = ("id", "parent_vertex", "length", "b", "c", "alpha")


def fmt(x):
    """17 significant digits; integers verbatim; non-finite values as ``null``."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if not math.isfinite(x):
        return "null"
    return format(x, ".17g")


def dumps17(obj, indent=2, _level=0):
    """JSON text with every float at 17 significant digits."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps17(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        if len(obj) == 0:
            return "[]"
        items = [f"{pad}{dumps17(v, indent, _level + 1)}" for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    if obj is None:
        return "null"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, (bool, np.bool_, int, float, np.integer, np.floating)):
        return fmt(obj)
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _number(value, field):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ParseError("expected a number", field=field)
    if not math.isfinite(value):
        raise ParseError("expected a finite number", field=field)
    return float(value)


def _label(value, field):
    if isinstance(value, bool) or not isinstance(value, (int, str)):
        raise ParseError("edge ids must be integers or strings", field=field)
    return value


def parse_problem(text):
    """Parse problem-file text into ``(TemporalTree, ProblemSpec)``.

    Raises :class:`ParseError` for malformed content and the tree validation
    errors (e.g. ``FeasibilityViolated``) for well-formed but invalid input.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc.msg}", line=exc.lineno) from None
    if not isinstance(doc, dict):
        raise ParseError("top level must be an object")
    for key in ("q", "y0", "edges"):
        if key not in doc:
            raise ParseError("missing required field", field=key)
    q = _number(doc["q"], "q")
    y0 = _number(doc["y0"], "y0")
    edges = doc["edges"]
    if not isinstance(edges, list) or not edges:
        raise ParseError("must be a nonempty array", field="edges")
    ids, parents, lengths, b, c, alpha = [], [], [], [], [], []
    for i, e in enumerate(edges):
        where = f"edges[{i}]"
        if not isinstance(e, dict):
            raise ParseError("edge must be an object", field=where)
        for key in EDGE_FIELDS:
            if key not in e:
                raise ParseError("missing required field", field=f"{where}.{key}")
        lab = _label(e["id"], f"{where}.id")
        if lab == 0:
            raise ParseError("id 0 is reserved for the root vertex", field=f"{where}.id")
        ids.append(lab)
        parents.append(_label(e["parent_vertex"], f"{where}.parent_vertex"))
        lengths.append(_number(e["length"], f"{where}.length"))
        b.append(_number(e["b"], f"{where}.b"))
        c.append(_number(e["c"], f"{where}.c"))
        alpha.append(_number(e["alpha"], f"{where}.alpha"))
    if len(set(ids)) != len(ids):
        raise ParseError("duplicate edge id", field="edges")
    for i, p in enumerate(parents):
        if p != 0 and p not in ids:
            raise ParseError(f"unknown parent edge {p!r}", field=f"edges[{i}].parent_vertex")

    tree = build_tree(parents, lengths, q, labels=ids)
    pos = {lab: i for i, lab in enumerate(ids)}
    order = [pos[lab] for lab in tree.labels]
    spec = ProblemSpec(np.array(b)[order], np.array(c)[order], np.array(alpha)[order], y0)
    return tree, spec


def load_problem(path):
    try:
        text = Path(path).read_text(encoding="utf-8")
    except UnicodeDecodeError:
        raise ParseError("problem file is not valid UTF-8") from None
    return parse_problem(text)


def emit_problem(tree, spec):
    """Problem-file text for ``(tree, spec)``; edges in canonical order."""
    edges = []
    for j, lab in enumerate(tree.labels):
        k = tree.parent[j]
        edges.append(
            {
                "id": lab,
                "parent_vertex": 0 if k < 0 else tree.labels[k],
                "length": float(tree.length[j]),
                "b": float(spec.b[j]),
                "c": float(spec.c[j]),
                "alpha": float(spec.alpha[j]),
            }
        )
    return dumps17({"q": tree.q, "y0": spec.y0, "edges": edges}) + "\n"


def _write_csv(path, header, cols):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in zip(*cols):
            fh.write(",".join(fmt(v) for v in row) + "\n")


def write_trajectories(out_dir, y, u=None):
    """``edge<id>_y.csv`` (``t,y`` at nodes) and, if given, ``edge<id>_u.csv``
    (``t,u`` at cell midpoints) for every edge."""
    os.makedirs(out_dir, exist_ok=True)
    mesh, tree = y.mesh, y.tree
    written = []
    for j, lab in enumerate(tree.labels):
        p = os.path.join(out_dir, f"edge{lab}_y.csv")
        _write_csv(p, ("t", "y"), (mesh.nodes[j], y.values[j]))
        written.append(p)
        if u is not None:
            p = os.path.join(out_dir, f"edge{lab}_u.csv")
            _write_csv(p, ("t", "u"), (mesh.midpoints(j), u.values[j]))
            written.append(p)
    return written


def write_table(path, rows):
    """CSV from a list of dicts sharing the same keys; ``None`` becomes empty."""
    if not rows:
        return
    keys = list(rows[0])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(keys) + "\n")
        for r in rows:
            vals = []
            for k in keys:
                v = r[k]
                vals.append("" if v is None else (v if isinstance(v, str) else fmt(v)))
            fh.write(",".join(vals) + "\n")


def _read_tu(path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or [h.strip() for h in rows[0]] != ["t", "u"]:
        raise ParseError("controls CSV must have header 't,u'", field=str(path), line=1)
    t, u = [], []
    for n, r in enumerate(rows[1:], start=2):
        if not r:
            continue
        try:
            t.append(float(r[0]))
            u.append(float(r[1]))
        except (ValueError, IndexError):
            raise ParseError("expected two numbers", field=str(path), line=n) from None
    t, u = np.array(t), np.array(u)
    if len(t) == 0 or np.any(np.diff(t) <= 0):
        raise ParseError("times must be strictly increasing", field=str(path))
    return t, u


def read_controls(path, mesh):
    """Controls as one value per mesh cell.

    ``path`` is either a directory of ``edge<id>_u.csv`` files or one CSV with
    header ``edge,t,u``.  The samples are joined piecewise linearly and read
    off at cell midpoints, so the ``u`` files written by a solve on the same
    mesh come back unchanged.  Edges without data get ``u = 0``.
    """
    tree = mesh.tree
    data = {}
    if os.path.isdir(path):
        for lab in tree.labels:
            p = os.path.join(path, f"edge{lab}_u.csv")
            if os.path.exists(p):
                data[lab] = _read_tu(p)
    else:
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        if not rows or [h.strip() for h in rows[0]] != ["edge", "t", "u"]:
            raise ParseError("controls CSV must have header 'edge,t,u'", field=str(path), line=1)
        by_label = {str(lab): lab for lab in tree.labels}
        acc = {}
        for n, r in enumerate(rows[1:], start=2):
            if not r:
                continue
            if r[0].strip() not in by_label:
                raise ParseError(f"unknown edge {r[0]!r}", field=str(path), line=n)
            try:
                acc.setdefault(by_label[r[0].strip()], []).append((float(r[1]), float(r[2])))
            except (ValueError, IndexError):
                raise ParseError("expected edge,t,u", field=str(path), line=n) from None
        for lab, pts in acc.items():
            pts.sort()
            t, u = np.array(pts).T
            if np.any(np.diff(t) <= 0):
                raise ParseError(f"repeated time for edge {lab!r}", field=str(path))
            data[lab] = (t, u)
    vals = []
    for j, lab in enumerate(tree.labels):
        if lab in data:
            t, u = data[lab]
            vals.append(np.interp(mesh.midpoints(j), t, u))
        else:
            vals.append(np.zeros(len(mesh.nodes[j]) - 1))
    return StepFunction(mesh, vals)

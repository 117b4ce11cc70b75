"""
Clarke subgradient oracle for piecewise-smooth targets.

A target is an expression graph over smooth primitives plus exact ``max`` and
``|.|`` nodes. At a point, every nonsmooth node sitting on a kink contributes a
finite set of admissible slopes; the gradients of all resulting smooth
selections generate a set whose hull contains the Clarke subgradient. For
curated targets where that hull is strictly too large, an exact generator set
can be registered by name.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .expr import EvaluationError, Node, SmoothingFamily, _forward

MAX_SELECTIONS = 4096


class NonLipschitzError(EvaluationError):
    pass


@dataclass(frozen=True)
class PiecewiseTarget:
    graph: Node
    dimension: int
    exact: Callable | None = None
    name: str | None = None


# Exact generator sets for curated targets whose selection hull over-approximates.
EXACT_CLARKE: dict[str, Callable] = {
    # 2 max(0,t) - max(0,2t) vanishes identically
    "Chen": lambda x: np.zeros((1, 1)),
}


def target_from_family(fam: SmoothingFamily) -> PiecewiseTarget:
    if not isinstance(fam.target, Node):
        raise ValueError(f"family {fam.name!r} has no piecewise target graph")
    return PiecewiseTarget(fam.target, fam.dimension, EXACT_CLARKE.get(fam.name), fam.name)


def _kink_choices(node, t):
    """Admissible local slopes of a nonsmooth node at scalar input ``t``, or None if smooth."""
    if node.op == "max":
        bps = node.data.breakpoints
        if t in bps:
            i = bps.index(t)
            return [node.data.pieces[i].slope, node.data.pieces[i + 1].slope]
        return None
    if node.op == "abspow" and t == 0:
        q = float(node.data)
        if q < 1:
            raise NonLipschitzError("Clarke subgradient undefined: non-Lipschitz point")
        return [-1.0, 1.0] if q == 1 else None
    if node.op == "pow" and t == 0 and float(node.data) < 1 and node.data.denominator != 1:
        raise NonLipschitzError("Clarke subgradient undefined: non-Lipschitz point")
    if node.op == "sqrt" and t == 0:
        raise NonLipschitzError("Clarke subgradient undefined: non-Lipschitz point")
    return None


def clarke_set(T: PiecewiseTarget, x) -> np.ndarray:
    """Generators (rows) of a set whose convex hull contains the Clarke subgradient at ``x``."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape != (T.dimension,):
        raise ValueError(f"expected a point of dimension {T.dimension}")
    if T.exact is not None:
        return np.atleast_2d(np.asarray(T.exact(x), dtype=float))
    return _selection_gradients(T, x)[0]


def _selection_gradients(T, x):
    order = T.graph.walk()
    X = x[None, :]
    a = np.ones(1)
    vals, partials, kinks = {}, {}, []
    for node in order:
        op = node.op
        if op == "const":
            vals[id(node)] = np.array([node.data])
        elif op == "var":
            vals[id(node)] = X[:, node.data]
        elif op == "dot":
            vals[id(node)] = X @ node.data
        elif op == "param":
            raise ValueError("target graph cannot depend on the smoothing parameter")
        else:
            cv = [vals[id(c)] for c in node.children]
            choices = _kink_choices(node, float(cv[0][0])) if node.op in ("max", "abspow", "pow", "sqrt") else None
            v, parts, bad, _ = _forward(node, cv, a, True)
            if bad[0]:
                raise EvaluationError(f"domain error at node {node.name()}")
            vals[id(node)] = np.broadcast_to(np.asarray(v, dtype=float), (1,))
            partials[id(node)] = [np.broadcast_to(np.asarray(p, dtype=float), (1,)) for p in parts]
            if choices is not None:
                kinks.append((id(node), choices))

    n_sel = int(np.prod([len(c) for _, c in kinks])) if kinks else 1
    if n_sel > MAX_SELECTIONS:
        raise ValueError(f"too many active selections ({n_sel})")

    gens = []
    for combo in itertools.product(*[c for _, c in kinks]):
        override = {nid: s for (nid, _), s in zip(kinks, combo)}
        g = np.zeros(T.dimension)
        adj = {id(T.graph): 1.0}
        for node in reversed(order):
            w = adj.pop(id(node), None)
            if w is None:
                continue
            if node.op == "var":
                g[node.data] += w
            elif node.op == "dot":
                g += w * node.data
            elif node.children:
                parts = partials[id(node)]
                if id(node) in override:
                    parts = [np.array([override[id(node)]])]
                for c, p in zip(node.children, parts):
                    adj[id(c)] = adj.get(id(c), 0.0) + w * float(p[0])
        gens.append(g)
    return np.unique(np.round(np.array(gens), 14), axis=0), len(kinks)


def is_differentiable_point(T: PiecewiseTarget, x) -> bool:
    """True when every nonsmooth node has a unique active piece at ``x``."""
    x = np.asarray(x, dtype=float).reshape(-1)
    return _selection_gradients(T, x)[1] == 0

"""
Expression graphs for smoothing families ``f(x, a)``.

Graphs are built from :class:`Node` objects with ordinary Python operators and
the helper constructors below. Evaluation is vectorised over a batch of points
and runs a single reverse sweep for the gradient in ``x`` (``a`` is held fixed).

>>> x = var(0)
>>> fam = SmoothingFamily(param() * sin(x / param()), dimension=1)
>>> float(eval(fam, [0.0], 0.1))
0.0
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable

import numpy as np

from .kernels import (
    TRIANGULAR,
    KernelName,
    MaxFunction,
    SmoothScalarKernel,
    build_envelope,
    eval_max,
    plus_function,
)


class EvaluationError(ValueError):
    """Domain violation or non-differentiable point met during evaluation."""


class KinkError(EvaluationError):
    pass


OPS = (
    "const", "var", "param", "add", "sub", "mul", "div", "neg", "dot",
    "sin", "cos", "exp", "log", "sqrt", "pow", "abspow", "kernel", "max", "apply",
)


def _signsqrt_smooth(t, a):
    pos = t > 0
    with np.errstate(invalid="ignore", divide="ignore"):
        rp = np.sqrt(np.where(pos, t + a, a))
        rn = np.sqrt(np.where(pos, a, a - t))
    v = np.where(pos, rp, 2 * np.sqrt(a) - rn)
    d = np.where(pos, 0.5 / rp, 0.5 / rn)
    return v, d


# Smooth scalar maps usable with ``apply``; each returns (value, derivative).
SCALAR_MAPS: dict[str, Callable] = {
    "square": lambda t, a: (t * t, 2 * t),
    "tanh": lambda t, a: (np.tanh(t), 1 - np.tanh(t) ** 2),
    "softsign": lambda t, a: (t / (1 + np.abs(t)), 1 / (1 + np.abs(t)) ** 2),
    "signsqrt_smooth": _signsqrt_smooth,
}


class Node:
    """One vertex of an expression DAG. Immutable once built."""

    __slots__ = ("op", "children", "data", "label")

    def __init__(self, op, children=(), data=None, label=None):
        if op not in OPS:
            raise ValueError(f"unknown op {op!r}")
        self.op = op
        self.children = tuple(_lift(c) for c in children)
        self.data = data
        self.label = label

    def __repr__(self):
        if self.op == "const":
            return repr(self.data)
        if self.op == "var":
            return f"x{self.data}"
        if self.op == "param":
            return "a"
        inner = ", ".join(repr(c) for c in self.children)
        return f"{self.op}({inner})"

    def name(self):
        return self.label or repr(self)

    def __add__(self, other):
        return Node("add", (self, other))

    def __radd__(self, other):
        return Node("add", (other, self))

    def __sub__(self, other):
        return Node("sub", (self, other))

    def __rsub__(self, other):
        return Node("sub", (other, self))

    def __mul__(self, other):
        return Node("mul", (self, other))

    def __rmul__(self, other):
        return Node("mul", (other, self))

    def __truediv__(self, other):
        return Node("div", (self, other))

    def __rtruediv__(self, other):
        return Node("div", (other, self))

    def __neg__(self):
        return Node("neg", (self,))

    def __pow__(self, q):
        return power(self, q)

    def walk(self):
        """Nodes in topological order (children before parents)."""
        order, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for c in reversed(node.children):
                if id(c) not in seen:
                    stack.append((c, False))
        return order

    def to_json(self):
        out = {"op": self.op}
        if self.op == "const":
            out["value"] = self.data
        elif self.op == "var":
            out["index"] = self.data
        elif self.op == "dot":
            out["weights"] = [float(w) for w in self.data]
        elif self.op in ("pow", "abspow"):
            out["q"] = str(self.data)
        elif self.op == "kernel":
            out["kernel"] = self.data.to_json()
        elif self.op == "max":
            out["pieces"] = self.data.to_json()
        elif self.op == "apply":
            out["map"] = self.data
        if self.children:
            out["args"] = [c.to_json() for c in self.children]
        return out

    @classmethod
    def from_json(cls, obj):
        if not isinstance(obj, dict) or "op" not in obj:
            raise ValueError(f"node object needs an 'op' field: {obj!r}")
        op = obj["op"]
        args = [cls.from_json(c) for c in obj.get("args", [])]
        if op == "const":
            return const(obj["value"])
        if op == "var":
            return var(int(obj["index"]))
        if op == "param":
            return param()
        if op == "dot":
            return dot(obj["weights"])
        if op == "pow":
            return power(args[0], obj["q"])
        if op == "abspow":
            return abspow(args[0], obj["q"])
        if op == "kernel":
            return Node("kernel", args, SmoothScalarKernel.from_json(obj["kernel"]))
        if op == "max":
            return Node("max", args, MaxFunction.from_json(obj["pieces"]))
        if op == "apply":
            return apply(obj["map"], args[0])
        return Node(op, args)


def _lift(c):
    if isinstance(c, Node):
        return c
    if isinstance(c, (int, float, np.floating, np.integer)):
        return const(c)
    raise TypeError(f"cannot use {type(c).__name__} in an expression")


def const(c):
    return Node("const", (), float(c))


def var(i):
    return Node("var", (), int(i))


def param():
    return Node("param")


def dot(weights):
    return Node("dot", (), np.asarray(weights, dtype=float))


def sin(n):
    return Node("sin", (n,))


def cos(n):
    return Node("cos", (n,))


def exp(n):
    return Node("exp", (n,))


def log(n):
    return Node("log", (n,))


def sqrt(n):
    return Node("sqrt", (n,))


def power(n, q):
    return Node("pow", (n,), Fraction(q).limit_denominator(10**6))


def abspow(n, q=1):
    return Node("abspow", (n,), Fraction(q).limit_denominator(10**6))


def smooth(kind, n, maxfun=None, density=None):
    """Apply a smoothing kernel ``s_a`` to ``n``."""
    if isinstance(kind, SmoothScalarKernel):
        return Node("kernel", (n,), kind)
    return Node("kernel", (n,), SmoothScalarKernel(KernelName(kind), maxfun, density))


def maxexact(pieces, n):
    p = pieces if isinstance(pieces, MaxFunction) else build_envelope(pieces)
    return Node("max", (n,), p)


def apply(name, n):
    if name not in SCALAR_MAPS:
        raise ValueError(f"unknown scalar map {name!r}")
    return Node("apply", (n,), name)


@dataclass
class BatchResult:
    values: np.ndarray
    grads: np.ndarray | None
    ok: np.ndarray
    errors: list = field(default_factory=list)

    def first_error(self):
        return self.errors[0] if self.errors else None


def _is_int(q):
    return q.denominator == 1


def _forward(node, cv, t_a, want_grad):
    """Value, local partials and (domain_bad, kink) masks for one node."""
    op = node.op
    n = t_a.shape[0]
    false = np.zeros(n, dtype=bool)
    bad, kink = false, false
    if op == "add":
        return cv[0] + cv[1], (1.0, 1.0), bad, kink
    if op == "sub":
        return cv[0] - cv[1], (1.0, -1.0), bad, kink
    if op == "mul":
        return cv[0] * cv[1], (cv[1], cv[0]), bad, kink
    if op == "neg":
        return -cv[0], (-1.0,), bad, kink
    if op == "div":
        u, w = cv
        bad = w == 0
        with np.errstate(all="ignore"):
            v = u / w
            return v, (1.0 / w, -v / w), bad, kink
    if op == "sin":
        return np.sin(cv[0]), (np.cos(cv[0]),), bad, kink
    if op == "cos":
        return np.cos(cv[0]), (-np.sin(cv[0]),), bad, kink
    if op == "exp":
        v = np.exp(cv[0])
        return v, (v,), ~np.isfinite(v), kink
    if op == "log":
        t = cv[0]
        bad = t <= 0
        with np.errstate(all="ignore"):
            return np.log(t), (1.0 / t,), bad, kink
    if op == "sqrt":
        t = cv[0]
        bad = t < 0
        kink = t == 0
        with np.errstate(all="ignore"):
            v = np.sqrt(t)
            return v, (0.5 / v,), bad, kink
    if op == "pow":
        t, q = cv[0], node.data
        qf = float(q)
        if _is_int(q):
            bad = (t == 0) & (qf < 0)
        else:
            bad = t < 0
            kink = (t == 0) & (qf < 1)
        with np.errstate(all="ignore"):
            v = t ** qf
            d = qf * t ** (qf - 1)
        if qf >= 1:
            d = np.where(t == 0, 1.0 if qf == 1 else 0.0, d)
        return v, (d,), bad, kink
    if op == "abspow":
        t, qf = cv[0], float(node.data)
        r = np.abs(t)
        kink = (t == 0) & (qf <= 1)
        with np.errstate(all="ignore"):
            v = r ** qf
            d = np.where(t == 0, 0.0, qf * r ** (qf - 1) * np.sign(t))
        return v, (d,), bad, kink
    if op == "kernel":
        v, d = node.data(cv[0], t_a)
        return np.asarray(v, dtype=float), (np.asarray(d, dtype=float),), bad, kink
    if op == "max":
        p = node.data
        v = eval_max(p, cv[0])
        idx = np.searchsorted(np.asarray(p.breakpoints), cv[0], side="right")
        d = np.array([q.slope for q in p.pieces])[idx]
        kink = p.is_breakpoint(cv[0])
        return v, (d,), bad, kink
    if op == "apply":
        with np.errstate(all="ignore"):
            v, d = SCALAR_MAPS[node.data](cv[0], t_a)
        return v, (d,), ~np.isfinite(v), kink
    raise AssertionError(op)


def _evaluate_graph(root, order, X, a, want_grad):
    n, d = X.shape
    vals = {}
    partials = {}
    ok = np.ones(n, dtype=bool)
    errors = []
    for node in order:
        op = node.op
        if op == "const":
            vals[id(node)] = np.full(n, node.data)
            continue
        if op == "var":
            vals[id(node)] = X[:, node.data]
            continue
        if op == "param":
            vals[id(node)] = a
            continue
        if op == "dot":
            vals[id(node)] = X @ node.data
            continue
        cv = [vals[id(c)] for c in node.children]
        v, parts, bad, kink = _forward(node, cv, a, want_grad)
        v = np.broadcast_to(np.asarray(v, dtype=float), (n,))
        fail = bad | (kink if want_grad else False)
        if np.any(fail & ok):
            what = "domain error" if np.any(bad & ok) else "kink evaluation"
            errors.append(f"{what} at node {node.name()}")
            ok &= ~fail
        vals[id(node)] = v
        partials[id(node)] = parts
    values = np.where(ok, vals[id(root)], np.nan)
    if not want_grad:
        return BatchResult(values, None, ok, errors)

    grads = np.zeros((n, d))
    adj = {id(root): np.ones(n)}
    for node in reversed(order):
        g = adj.pop(id(node), None)
        if g is None:
            continue
        if node.op == "var":
            grads[:, node.data] += g
        elif node.op == "dot":
            grads += g[:, None] * node.data[None, :]
        elif node.children:
            for c, p in zip(node.children, partials[id(node)]):
                with np.errstate(all="ignore"):
                    contrib = g * p
                prev = adj.get(id(c))
                adj[id(c)] = contrib if prev is None else prev + contrib
    grads[~ok] = np.nan
    return BatchResult(values, grads, ok, errors)


@dataclass
class SmoothingFamily:
    """A parameterised objective ``(x, a) -> f_a(x)`` on ``R^d x (0, a_max]``.

    ``target`` is the limit function ``F`` (callable on a point, or a graph
    without ``param`` nodes) when known. ``definable=False`` marks families
    with oscillatory pathologies whose limit field carries no information.
    """

    graph: Node
    dimension: int
    a_max: float = 1.0
    uniform_lipschitz: float | None = None
    name: str | None = None
    target: Callable | Node | None = None
    definable: bool = True
    _order: list = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if self.dimension < 1:
            raise ValueError("dimension must be positive")
        if not self.a_max > 0:
            raise ValueError("a_max must be positive")
        self._order = self.graph.walk()
        for node in self._order:
            if node.op == "var" and not 0 <= node.data < self.dimension:
                raise ValueError(f"variable index {node.data} outside dimension {self.dimension}")
            if node.op == "dot" and node.data.shape != (self.dimension,):
                raise ValueError("dot weights must match the dimension")
        if isinstance(self.target, Node):
            for node in self.target.walk():
                if node.op == "param":
                    raise ValueError("target graph cannot depend on the smoothing parameter")

    def evaluate(self, X, a, grad=True) -> BatchResult:
        """Batch evaluation at rows of ``X`` with per-row (or shared) parameter ``a``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.dimension:
            raise ValueError(f"expected points of dimension {self.dimension}, got {X.shape[1]}")
        a = np.broadcast_to(np.asarray(a, dtype=float), (X.shape[0],)).copy()
        if np.any(a <= 0) or np.any(a > self.a_max * (1 + 1e-12)):
            raise ValueError(f"parameter must lie in (0, {self.a_max}]")
        return _evaluate_graph(self.graph, self._order, X, a, grad)

    def target_value(self, x):
        if self.target is None:
            raise ValueError(f"family {self.name or ''} has no target attached")
        x = np.asarray(x, dtype=float).reshape(-1)
        if isinstance(self.target, Node):
            order = self.target.walk()
            res = _evaluate_graph(self.target, order, x[None, :], np.ones(1), False)
            if not res.ok[0]:
                raise EvaluationError(res.first_error())
            return float(res.values[0])
        return float(self.target(x))

    def to_json(self):
        out = {"dimension": self.dimension, "a_max": self.a_max, "graph": self.graph.to_json()}
        if self.name:
            out["name"] = self.name
        if self.uniform_lipschitz is not None:
            out["uniform_lipschitz"] = self.uniform_lipschitz
        if isinstance(self.target, Node):
            out["target"] = self.target.to_json()
        if not self.definable:
            out["definable"] = False
        return out

    @classmethod
    def from_json(cls, data):
        if isinstance(data, str):
            data = json.loads(data)
        try:
            target = Node.from_json(data["target"]) if "target" in data else None
            return cls(
                graph=Node.from_json(data["graph"]),
                dimension=int(data["dimension"]),
                a_max=float(data.get("a_max", 1.0)),
                uniform_lipschitz=data.get("uniform_lipschitz"),
                name=data.get("name"),
                target=target,
                definable=bool(data.get("definable", True)),
            )
        except KeyError as exc:
            raise ValueError(f"missing field {exc.args[0]!r}") from None


def _as_point(fam, x):
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape != (fam.dimension,):
        raise ValueError(f"expected a point of dimension {fam.dimension}")
    return x


def eval(fam: SmoothingFamily, x, a) -> float:  # noqa: A001
    res = fam.evaluate(_as_point(fam, x)[None, :], a, grad=False)
    if not res.ok[0]:
        raise EvaluationError(res.first_error())
    return float(res.values[0])


def grad(fam: SmoothingFamily, x, a) -> np.ndarray:
    res = fam.evaluate(_as_point(fam, x)[None, :], a, grad=True)
    if not res.ok[0]:
        msg = res.first_error()
        if msg.startswith("kink"):
            raise KinkError(msg)
        raise EvaluationError(msg)
    return res.grads[0]


def value_and_grad(fam: SmoothingFamily, x, a):
    res = fam.evaluate(_as_point(fam, x)[None, :], a, grad=True)
    if not res.ok[0]:
        msg = res.first_error()
        raise (KinkError if msg.startswith("kink") else EvaluationError)(msg)
    return float(res.values[0]), res.grads[0]


class Builtin(str, enum.Enum):
    OSCILLATING_SIN = "OscillatingSin"
    HAT = "Hat"
    CHEN = "Chen"
    SIGN_SQRT = "SignSqrt"
    ABS_HUBER = "AbsHuber"
    MAX_FINITE_DEMO = "MaxFiniteDemo"
    NON_LIPSCHITZ_Q = "NonLipschitzQ"


ALIASES = {
    "sin": Builtin.OSCILLATING_SIN,
    "hat": Builtin.HAT,
    "chen": Builtin.CHEN,
    "signsqrt": Builtin.SIGN_SQRT,
    "abshuber": Builtin.ABS_HUBER,
    "absl1": Builtin.ABS_HUBER,
    "abs": Builtin.ABS_HUBER,
    "maxfinite": Builtin.MAX_FINITE_DEMO,
    "nonlipschitz": Builtin.NON_LIPSCHITZ_Q,
}

# pieces of the three-piece demo max-function
DEMO_PIECES = [(0.0, 0.0), (1.0, 0.0), (2.0, -1.0)]


def resolve_builtin(name) -> Builtin:
    if isinstance(name, Builtin):
        return name
    key = str(name).lower()
    for b in Builtin:
        if b.value.lower() == key:
            return b
    if key in ALIASES:
        return ALIASES[key]
    raise ValueError(f"unknown builtin family {name!r}")


def _signsqrt_target(x):
    return float(np.sign(x[0]) * np.sqrt(abs(x[0])))


def builtin_family(name) -> SmoothingFamily:
    b = resolve_builtin(name)
    x = var(0)
    a = param()
    if b is Builtin.OSCILLATING_SIN:
        return SmoothingFamily(a * sin(x / a), 1, 1.0, uniform_lipschitz=1.0, name=b.value,
                               target=const(0.0), definable=False)
    if b is Builtin.HAT:
        g = maxexact(plus_function(), a - abspow(x, 1))
        return SmoothingFamily(g, 1, 1.0, uniform_lipschitz=1.0, name=b.value, target=const(0.0))
    if b is Builtin.CHEN:
        g = 2 * smooth("sqrt_plus", x) - smooth("sqrt_plus", 2 * x)
        plus = plus_function()
        F = 2 * maxexact(plus, x) - maxexact(plus, 2 * x)
        return SmoothingFamily(g, 1, 1.0, uniform_lipschitz=2.0, name=b.value, target=F)
    if b is Builtin.SIGN_SQRT:
        return SmoothingFamily(apply("signsqrt_smooth", x), 1, 1.0, name=b.value,
                               target=_signsqrt_target)
    if b is Builtin.ABS_HUBER:
        return SmoothingFamily(smooth("huber_abs", x), 1, 1.0, uniform_lipschitz=1.0,
                               name=b.value, target=abspow(x, 1))
    if b is Builtin.MAX_FINITE_DEMO:
        p = build_envelope(DEMO_PIECES)
        g = smooth("conv_max", x, maxfun=p, density=TRIANGULAR)
        return SmoothingFamily(g, 1, 1.0, uniform_lipschitz=2.0, name=b.value,
                               target=maxexact(p, x))
    if b is Builtin.NON_LIPSCHITZ_Q:
        x0, x1 = var(0), var(1)
        theta = apply("square", x0) + apply("square", x1)
        g = theta + power(smooth("huber_abs", x0), Fraction(1, 2))
        F = theta + abspow(x0, Fraction(1, 2))
        return SmoothingFamily(g, 2, 1.0, name=b.value, target=F)
    raise AssertionError(b)


def builtin_names():
    return [b.value for b in Builtin]


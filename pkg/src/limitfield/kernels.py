"""
Smoothing kernels for finite max-functions and the absolute value.

A finite max-function ``p(t) = max_i (m_i t + c_i)`` is stored through its
upper envelope. It is smoothed by convolution with a compactly supported
density, ``s_{p,a}(t) = int p(t - a u) rho(u) du``, which is evaluated in
closed form by splitting the integral at the breakpoints of the envelope.
"""

from __future__ import annotations

import enum
import json
import math
from bisect import bisect_right
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import quad


class KernelError(ValueError):
    pass


@dataclass(frozen=True)
class AffinePiece:
    slope: float
    intercept: float

    def __post_init__(self):
        object.__setattr__(self, "slope", float(self.slope))
        object.__setattr__(self, "intercept", float(self.intercept))
        if not (math.isfinite(self.slope) and math.isfinite(self.intercept)):
            raise KernelError(f"non-finite affine piece ({self.slope}, {self.intercept})")

    def __call__(self, t):
        return self.slope * t + self.intercept


@dataclass(frozen=True)
class MaxFunction:
    """Upper envelope of affine pieces.

    ``pieces`` are the active pieces sorted by strictly increasing slope;
    piece ``i`` is the maximum on ``[breakpoints[i-1], breakpoints[i]]``.
    """

    pieces: tuple
    breakpoints: tuple

    def __call__(self, t):
        return eval_max(self, t)

    def slope_at(self, t):
        """Slope of the active piece (the right one at a breakpoint)."""
        return self.pieces[bisect_right(self.breakpoints, t)].slope

    def is_breakpoint(self, t):
        return np.isin(t, self.breakpoints)

    def to_json(self):
        return [[p.slope, p.intercept] for p in self.pieces]

    @classmethod
    def from_json(cls, data):
        if isinstance(data, str):
            data = json.loads(data)
        return build_envelope([AffinePiece(float(m), float(c)) for m, c in data])


def build_envelope(pieces) -> MaxFunction:
    """Upper envelope of ``pieces`` with dominated pieces removed.

    Sort by slope (ties keep the larger intercept), then sweep with a stack,
    popping the top whenever the new line overtakes it no later than the top
    overtook its predecessor.
    """
    pieces = [p if isinstance(p, AffinePiece) else AffinePiece(*p) for p in pieces]
    if not pieces:
        raise KernelError("empty max-function")
    pieces.sort(key=lambda p: (p.slope, p.intercept))
    dedup = []
    for p in pieces:
        if dedup and dedup[-1].slope == p.slope:
            dedup[-1] = p
        else:
            dedup.append(p)

    def crossing(p, q):
        # t where q (steeper) overtakes p
        return (p.intercept - q.intercept) / (q.slope - p.slope)

    stack = []
    for p in dedup:
        while len(stack) >= 2 and crossing(stack[-1], p) <= crossing(stack[-2], stack[-1]):
            stack.pop()
        stack.append(p)
    breaks = tuple(crossing(stack[i], stack[i + 1]) for i in range(len(stack) - 1))
    return MaxFunction(tuple(stack), breaks)


def eval_max(p: MaxFunction, t):
    if np.ndim(t) == 0:
        piece = p.pieces[bisect_right(p.breakpoints, t)]
        return piece.slope * t + piece.intercept
    t = np.asarray(t, dtype=float)
    idx = np.searchsorted(np.asarray(p.breakpoints), t, side="right")
    m = np.array([q.slope for q in p.pieces])[idx]
    c = np.array([q.intercept for q in p.pieces])[idx]
    return m * t + c


def lipschitz_bound(p: MaxFunction) -> float:
    return max(abs(q.slope) for q in p.pieces)


def plus_function() -> MaxFunction:
    return build_envelope([AffinePiece(0.0, 0.0), AffinePiece(1.0, 0.0)])


def abs_function() -> MaxFunction:
    return build_envelope([AffinePiece(-1.0, 0.0), AffinePiece(1.0, 0.0)])


class KernelKind(str, enum.Enum):
    UNIFORM = "uniform"
    TRIANGULAR = "triangular"


def _uniform_density(u):
    return np.where(np.abs(u) <= 0.5, 1.0, 0.0)


def _uniform_cdf(u):
    u = np.clip(u, -0.5, 0.5)
    return u + 0.5


def _uniform_first_moment(u):
    # int_{-1/2}^{u} v dv
    u = np.clip(u, -0.5, 0.5)
    return 0.5 * u * u - 0.125


def _triangular_density(u):
    return np.maximum(1.0 - np.abs(u), 0.0)


def _triangular_cdf(u):
    u = np.clip(u, -1.0, 1.0)
    return np.where(u <= 0, 0.5 * (1 + u) ** 2, 1 - 0.5 * (1 - u) ** 2)


def _triangular_first_moment(u):
    u = np.clip(u, -1.0, 1.0)
    u2, u3 = u * u, u * u * u
    return np.where(u <= 0, u2 / 2 + u3 / 3, u2 / 2 - u3 / 3) - 1.0 / 6.0


_KERNEL_TABLE = {
    KernelKind.UNIFORM: (0.5, 0.25, _uniform_density, _uniform_cdf, _uniform_first_moment),
    KernelKind.TRIANGULAR: (1.0, 1.0 / 3.0, _triangular_density, _triangular_cdf,
                            _triangular_first_moment),
}


@dataclass(frozen=True)
class Kernel:
    """Symmetric compactly supported density used for convolution smoothing.

    ``abs_moment`` is ``int |u| rho(u) du``; it bounds the uniform
    approximation error ``|s_{p,a} - p| <= a * L * abs_moment``.
    """

    kind: KernelKind
    half_width: float = field(init=False)
    abs_moment: float = field(init=False)

    def __post_init__(self):
        kind = KernelKind(self.kind)
        object.__setattr__(self, "kind", kind)
        h, m1, dens, _, _ = _KERNEL_TABLE[kind]
        object.__setattr__(self, "half_width", h)
        object.__setattr__(self, "abs_moment", m1)
        mass = quad(lambda u: float(dens(u)), -h, h, points=[0.0])[0]
        absm = quad(lambda u: abs(u) * float(dens(u)), -h, h, points=[0.0])[0]
        if abs(mass - 1.0) > 1e-10 or abs(absm - m1) > 1e-10:
            raise KernelError(f"kernel {kind.value} failed normalisation check")
        if abs(float(dens(0.3 * h)) - float(dens(-0.3 * h))) > 0:
            raise KernelError(f"kernel {kind.value} is not symmetric")

    def density(self, u):
        return _KERNEL_TABLE[self.kind][2](u)

    def cdf(self, u):
        return _KERNEL_TABLE[self.kind][3](u)

    def first_moment(self, u):
        return _KERNEL_TABLE[self.kind][4](u)


UNIFORM = Kernel(KernelKind.UNIFORM)
TRIANGULAR = Kernel(KernelKind.TRIANGULAR)


def _check_param(a):
    if np.any(np.asarray(a) <= 0):
        raise KernelError("parameter must be positive")


def conv_smooth(p: MaxFunction, k: Kernel, t, a):
    """Closed-form ``(s_{p,a}(t), s'_{p,a}(t))`` for the convolution smoother.

    Works elementwise on arrays. On each sub-interval of the kernel support
    where a single piece ``m y + c`` is active, the integral reduces to the
    zeroth and first moments of the kernel over that sub-interval.
    """
    _check_param(a)
    t = np.asarray(t, dtype=float)
    a = np.asarray(a, dtype=float)
    value = np.zeros(np.broadcast(t, a).shape)
    deriv = np.zeros_like(value)
    bps = (-math.inf,) + tuple(p.breakpoints) + (math.inf,)
    h = k.half_width
    for i, piece in enumerate(p.pieces):
        # piece i active for y in [bps[i], bps[i+1]], y = t - a u
        with np.errstate(invalid="ignore"):
            lo = np.clip((t - bps[i + 1]) / a, -h, h)
            hi = np.clip((t - bps[i]) / a, -h, h)
        lo = np.where(np.isnan(lo), -h, lo)
        hi = np.where(np.isnan(hi), h, hi)
        m0 = k.cdf(hi) - k.cdf(lo)
        m1 = k.first_moment(hi) - k.first_moment(lo)
        value += (piece.slope * t + piece.intercept) * m0 - a * piece.slope * m1
        deriv += piece.slope * m0
    if value.ndim == 0:
        return float(value), float(deriv)
    return value, deriv


class KernelName(str, enum.Enum):
    HUBER_PLUS = "huber_plus"
    SQRT_PLUS = "sqrt_plus"
    SOFT_PLUS = "soft_plus"
    HUBER_ABS = "huber_abs"
    SQRT_ABS = "sqrt_abs"
    CONV_MAX = "conv_max"


def _huber_plus(t, a):
    inner = np.abs(t) < a / 2
    v = np.where(inner, t * t / (2 * a) + t / 2 + a / 8, np.maximum(t, 0.0))
    d = np.where(inner, t / a + 0.5, np.where(t > 0, 1.0, 0.0))
    return v, d


def _sqrt_plus(t, a):
    r = np.sqrt(t * t + 4 * a * a)
    return 0.5 * (t + r), 0.5 * (1 + t / r)


def _soft_plus(t, a):
    z = t / a
    big = z > 30
    zs = np.where(big, 0.0, z)
    v = np.where(big, t + a * np.exp(-np.abs(z)), a * np.log1p(np.exp(zs)))
    d = np.where(z >= 0, 1 / (1 + np.exp(-np.abs(z))), np.exp(-np.abs(z)) / (1 + np.exp(-np.abs(z))))
    return v, d


def _huber_abs(t, a):
    inner = np.abs(t) <= a
    v = np.where(inner, t * t / (2 * a) + a / 2, np.abs(t))
    d = np.where(inner, t / a, np.sign(t))
    return v, d


def _sqrt_abs(t, a):
    # sqrt_plus(t) + sqrt_plus(-t)
    r = np.sqrt(t * t + 4 * a * a)
    return r, t / r


_CLOSED_FORMS = {
    KernelName.HUBER_PLUS: _huber_plus,
    KernelName.SQRT_PLUS: _sqrt_plus,
    KernelName.SOFT_PLUS: _soft_plus,
    KernelName.HUBER_ABS: _huber_abs,
    KernelName.SQRT_ABS: _sqrt_abs,
}


def closed_form_kernel(kind, t, a):
    """Value and derivative of a named closed-form smoothing of ``max(0,t)`` or ``|t|``."""
    _check_param(a)
    fn = _CLOSED_FORMS[KernelName(kind)]
    t = np.asarray(t, dtype=float)
    a = np.asarray(a, dtype=float)
    v, d = fn(t, a)
    if np.ndim(v) == 0:
        return float(v), float(d)
    return v, d


@dataclass(frozen=True)
class SmoothScalarKernel:
    """A C^1 scalar smoother ``t -> s_a(t)``; either closed form or a convolved max-function."""

    kind: KernelName
    maxfun: MaxFunction | None = None
    kernel: Kernel | None = None

    def __post_init__(self):
        object.__setattr__(self, "kind", KernelName(self.kind))
        if self.kind is KernelName.CONV_MAX and (self.maxfun is None or self.kernel is None):
            raise KernelError("conv_max kernel needs a max-function and a density")

    def __call__(self, t, a):
        if self.kind is KernelName.CONV_MAX:
            return conv_smooth(self.maxfun, self.kernel, t, a)
        return closed_form_kernel(self.kind, t, a)

    def target(self, t):
        """The nonsmooth function this kernel converges to as ``a -> 0``."""
        if self.kind is KernelName.CONV_MAX:
            return eval_max(self.maxfun, t)
        if self.kind in (KernelName.HUBER_ABS, KernelName.SQRT_ABS):
            return np.abs(t)
        return np.maximum(t, 0.0)

    def to_json(self):
        out = {"kind": self.kind.value}
        if self.kind is KernelName.CONV_MAX:
            out["pieces"] = self.maxfun.to_json()
            out["density"] = self.kernel.kind.value
        return out

    @classmethod
    def from_json(cls, data):
        kind = KernelName(data["kind"])
        if kind is KernelName.CONV_MAX:
            return cls(kind, MaxFunction.from_json(data["pieces"]), Kernel(KernelKind(data["density"])))
        return cls(kind)

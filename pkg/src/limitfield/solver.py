"""
Smoothing method: solve a sequence of smooth problems ``min f_{a_k}`` to
accuracy ``||grad f_{a_k}(x_k)|| <= eps_k`` while ``a_k, eps_k -> 0``.
"""

from __future__ import annotations

import csv
import enum
import io
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .expr import EvaluationError, SmoothingFamily, value_and_grad
from .field import EstimatorConfig, criticality_certificate, estimate_limit_field

log = logging.getLogger(__name__)

ARMIJO_C = 1e-4
BACKTRACK = 0.5
STEP_MIN = 1e-14
STALL_LIMIT = 50
INNER_MAX = 20_000
FLOW_INNER_MAX = 5_000  # explicit RK4 is step-limited by stiffness ~ a**-1.5

VACUOUS_WARNING = "oscillatory family: certificate vacuous"


class Status(str, enum.Enum):
    CONVERGED = "Converged"
    MAX_OUTER_REACHED = "MaxOuterReached"
    INNER_STALLED = "InnerStalled"


class InnerMethod(str, enum.Enum):
    DESCENT_ARMIJO = "DescentArmijo"
    GRADIENT_FLOW_RK4 = "GradientFlowRK4"


@dataclass
class Schedule:
    """Geometric schedule ``a_k = a0 * gamma_a**k``, ``eps_k = eps0 * gamma_eps**k``.

    The run counts as converged once both ``a_k <= a_min`` and ``eps_k <= eps_min``.
    """

    a0: float = 1.0
    eps0: float = 1.0
    gamma_a: float = 0.5
    gamma_eps: float = 0.5
    max_outer: int = 40
    a_min: float = 1e-6
    eps_min: float = 1e-6

    def validate(self):
        if not (self.a0 > 0 and self.eps0 > 0):
            raise ValueError("a0 and eps0 must be positive")
        if not (0 < self.gamma_a < 1 and 0 < self.gamma_eps < 1):
            raise ValueError("decrease factors must lie in (0, 1)")
        if self.max_outer < 0:
            raise ValueError("max_outer must be nonnegative")
        return self

    def a(self, k):
        return self.a0 * self.gamma_a ** k

    def eps(self, k):
        return self.eps0 * self.gamma_eps ** k

    @classmethod
    def from_mapping(cls, data):
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        return cls(**known).validate()


@dataclass
class OuterRecord:
    k: int
    a: float
    eps: float
    x: np.ndarray
    grad_norm: float
    inner_iters: int


@dataclass
class SolverTrace:
    records: list = field(default_factory=list)
    status: Status = Status.MAX_OUTER_REACHED
    x0: np.ndarray | None = None
    x_last: np.ndarray | None = None
    message: str = ""

    @property
    def x_final(self):
        if self.records:
            return self.records[-1].x
        return self.x_last if self.x_last is not None else self.x0

    def to_json(self):
        return {
            "status": self.status.value,
            "message": self.message,
            "x0": [float(v) for v in self.x0],
            "x_final": [float(v) for v in self.x_final],
            "records": [
                {"k": r.k, "a": r.a, "eps": r.eps, "x": [float(v) for v in r.x],
                 "grad_norm": float(r.grad_norm), "inner_iters": r.inner_iters}
                for r in self.records
            ],
        }

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        d = len(self.x0)
        w.writerow(["k", "a", "eps"] + [f"x{i}" for i in range(d)] + ["grad_norm", "inner_iters"])
        for r in self.records:
            w.writerow([r.k, repr(r.a), repr(r.eps)] + [repr(float(v)) for v in r.x]
                       + [repr(float(r.grad_norm)), r.inner_iters])
        return buf.getvalue()


def _safe_value(fam, x, a):
    try:
        return value_and_grad(fam, x, a)
    except EvaluationError:
        return None


def descent_armijo(fam, x, a, eps, history=None):
    """Gradient descent with Armijo backtracking and Barzilai-Borwein initial steps.

    Returns ``(x, grad_norm, iterations, stalled)``. Objective values of the
    accepted iterates are appended to ``history`` when given.
    """
    fx, g = value_and_grad(fam, x, a)
    if history is not None:
        history.append(fx)
    gn = float(np.linalg.norm(g))
    step = 1.0 / max(gn, 1.0)
    stalls = 0
    it = 0
    while gn > eps:
        if it >= INNER_MAX:
            return x, gn, it, True
        it += 1
        t = step
        accepted = None
        while t >= STEP_MIN:
            trial = _safe_value(fam, x - t * g, a)
            if trial is not None and trial[0] <= fx - ARMIJO_C * t * gn * gn and trial[0] < fx:
                accepted = trial
                break
            t *= BACKTRACK
        if accepted is None:
            stalls += 1
            if stalls >= STALL_LIMIT:
                return x, gn, it, True
            step = 1.0 / max(gn, 1.0)
            continue
        stalls = 0
        x_new = x - t * g
        f_new, g_new = accepted
        s, y = x_new - x, g_new - g
        sy = float(s @ y)
        step = float(s @ s) / sy if sy > 0 else 2 * t
        x, fx, g = x_new, f_new, g_new
        gn = float(np.linalg.norm(g))
        if history is not None:
            history.append(fx)
    return x, gn, it, False


def _rk4(fam, x, a, dt):
    def field_(z):
        return -value_and_grad(fam, z, a)[1]

    k1 = field_(x)
    k2 = field_(x + 0.5 * dt * k1)
    k3 = field_(x + 0.5 * dt * k2)
    k4 = field_(x + dt * k3)
    return x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def _flow_step(fam, x, a, dt, max_halvings=60):
    """One RK4 step of ``x' = -grad f_a(x)``, halving ``dt`` until ``f_a`` does not increase."""
    fx = value_and_grad(fam, x, a)[0]
    for _ in range(max_halvings):
        try:
            x_new = _rk4(fam, x, a, dt)
            if value_and_grad(fam, x_new, a)[0] <= fx:
                return x_new, dt
        except EvaluationError:
            pass
        dt *= 0.5
    raise EvaluationError("gradient flow step could not decrease the objective")


def gradient_flow_step(fam: SmoothingFamily, x, a: float, dt: float) -> np.ndarray:
    if not (a > 0 and dt > 0):
        raise ValueError("a and dt must be positive")
    return _flow_step(fam, np.asarray(x, dtype=float).reshape(-1), a, dt)[0]


def _flow(fam, x, a, eps):
    fx, g = value_and_grad(fam, x, a)
    gn = float(np.linalg.norm(g))
    dt = 1.0 / max(gn, 1.0)
    it = 0
    while gn > eps:
        if it >= FLOW_INNER_MAX:
            return x, gn, it, True
        it += 1
        try:
            x, dt = _flow_step(fam, x, a, dt)
        except EvaluationError:
            return x, gn, it, True
        dt *= 2.0
        gn = float(np.linalg.norm(value_and_grad(fam, x, a)[1]))
    return x, gn, it, False


def smoothing_solve(fam: SmoothingFamily, x0, sch: Schedule | None = None,
                    inner: InnerMethod | str = InnerMethod.DESCENT_ARMIJO) -> SolverTrace:
    """Run the outer smoothing loop with warm starts.

    Each outer iteration ``k`` drives ``||grad f_{a_k}(x)|| <= eps_k`` with the
    chosen inner method started at the previous iterate.
    """
    sch = (sch or Schedule()).validate()
    inner = InnerMethod(inner)
    x = np.asarray(x0, dtype=float).reshape(-1)
    if x.shape != (fam.dimension,) or not np.all(np.isfinite(x)):
        raise ValueError("x0 must be a finite point of the family's dimension")
    if sch.a0 > fam.a_max:
        raise ValueError(f"schedule a0={sch.a0} exceeds the family's a_max={fam.a_max}")
    trace = SolverTrace(x0=x.copy())
    run = descent_armijo if inner is InnerMethod.DESCENT_ARMIJO else _flow
    for k in range(sch.max_outer):
        a, eps = sch.a(k), sch.eps(k)
        x_new, gn, iters, stalled = run(fam, x, a, eps)
        if stalled:
            trace.status = Status.INNER_STALLED
            trace.x_last = x_new
            trace.message = f"inner solver stalled at outer iteration {k} (grad norm {gn:.3e} > {eps:.3e})"
            return trace
        x = x_new
        trace.records.append(OuterRecord(k, a, eps, x.copy(), gn, iters))
        log.debug("outer %d: a=%.3e eps=%.3e |g|=%.3e inner=%d", k, a, eps, gn, iters)
        if a <= sch.a_min and eps <= sch.eps_min:
            trace.status = Status.CONVERGED
            return trace
    trace.status = Status.MAX_OUTER_REACHED
    trace.message = f"schedule not exhausted after {sch.max_outer} outer iterations"
    return trace


@dataclass
class CertifyReport:
    estimate: object
    certificate: object | None
    warnings: list

    @property
    def critical(self):
        return bool(self.certificate is not None and self.certificate.critical)

    @property
    def hull_distance(self):
        return self.estimate.hull_distance

    def to_json(self):
        return {
            "critical": self.critical,
            "estimate": self.estimate.to_json(),
            "certificate": None if self.certificate is None else self.certificate.to_json(),
            "warnings": list(self.warnings),
        }


def certify_final(trace: SolverTrace, fam: SmoothingFamily, F=None,
                  cfg: EstimatorConfig | None = None, tol: float = 1e-3,
                  probes=()) -> CertifyReport:
    """Estimate the limit field at the final iterate and test ``0 in conv`` of it."""
    x = trace.x_final
    if x is None:
        raise ValueError("empty trace")
    est = estimate_limit_field(fam, F, x, cfg, probes)
    warnings = []
    cert = None
    if est.clusters:
        cert = criticality_certificate(est, tol)
    else:
        warnings.append("empty estimate: no certificate")
    if not fam.definable:
        warnings.append(VACUOUS_WARNING)
    if est.blow_up:
        warnings.append("gradient blow-up observed; horizontal directions not used in the certificate")
    return CertifyReport(est, cert, warnings)


def schedule_to_json(sch: Schedule):
    return asdict(sch)

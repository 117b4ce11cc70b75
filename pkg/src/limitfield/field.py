"""
Sampling estimator of the limit field of a smoothing family.

For a point ``x`` the limit field collects every limit of ``grad f_{a_n}(x_n)``
along sequences ``(x_n, a_n) -> (x, 0)`` with ``f_{a_n}(x_n) -> F(x)``. The
estimator probes geometric parameter levels ``a_n = a0 * sigma**n`` at points
within radius ``c * a_n**beta`` of ``x``, filters samples by value, and clusters
the surviving gradients. Only clusters that are populated at each of the
smallest levels are reported. Gradients whose norm exceeds the blow-up
threshold are normalised and reported as horizontal directions instead.

Any such sampler can only under-approximate the limit field.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .clarke import PiecewiseTarget, clarke_set
from .expr import EvaluationError, KinkError, SmoothingFamily
from .hull import min_norm_point


@dataclass
class EstimatorConfig:
    a0: float | None = None  # defaults to the family's a_max
    sigma: float = 0.5
    levels: int = 30
    replicas: int = 64
    betas: tuple = (1.0, 0.5)
    radius_scale: float = 1.0
    merge_radius: float = 1e-2
    blow_up_threshold: float = 1e6
    value_tol: float = 1e-3
    persistence: int = 3
    seed: int = 0

    def validate(self):
        if self.a0 is not None and not self.a0 > 0:
            raise ValueError("a0 must be positive")
        if not 0 < self.sigma < 1:
            raise ValueError("sigma must lie in (0, 1)")
        if self.persistence < 1 or self.levels < self.persistence:
            raise ValueError("need at least `persistence` levels")
        if self.replicas < 0:
            raise ValueError("replicas must be nonnegative")
        if not self.betas or any(b <= 0 for b in self.betas):
            raise ValueError("radius exponents must be positive")
        for name in ("radius_scale", "merge_radius", "blow_up_threshold", "value_tol"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        return self

    def to_json(self):
        out = asdict(self)
        out["betas"] = list(self.betas)
        return out

    @classmethod
    def from_mapping(cls, data):
        known = {k: v for k, v in data.items() if k in cls.__dataclass_fields__}
        if "betas" in known:
            known["betas"] = tuple(float(b) for b in known["betas"])
        return cls(**known).validate()


@dataclass
class LimitFieldEstimate:
    x: np.ndarray
    clusters: list  # (center, weight) pairs
    horizontal: list
    blow_up: bool
    hull_distance: float
    samples_used: int
    value_filter_rejections: int
    eval_failures: int = 0
    rejections_by_level: dict = field(default_factory=dict)
    config: EstimatorConfig | None = None
    samples: dict | None = field(default=None, repr=False)

    @property
    def centers(self) -> np.ndarray:
        d = len(self.x)
        if not self.clusters:
            return np.zeros((0, d))
        return np.array([c for c, _ in self.clusters])

    def to_json(self):
        return {
            "x": [float(v) for v in self.x],
            "clusters": [{"center": [float(v) for v in c], "weight": int(w)} for c, w in self.clusters],
            "horizontal": [[float(v) for v in h] for h in self.horizontal],
            "blow_up": bool(self.blow_up),
            # +inf (no clusters) has no JSON literal
            "hull_distance": None if math.isinf(self.hull_distance) else float(self.hull_distance),
            "samples_used": int(self.samples_used),
            "value_filter_rejections": int(self.value_filter_rejections),
            "eval_failures": int(self.eval_failures),
            "config": self.config.to_json() if self.config else None,
            "seed": self.config.seed if self.config else None,
        }

    def samples_csv(self) -> str:
        """Raw samples as CSV: level, replica, a, x..., value, grad..., retained."""
        if self.samples is None:
            raise ValueError("estimate was computed without keep_samples=True")
        s = self.samples
        d = s["x"].shape[1]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["level", "replica", "a"] + [f"x{i}" for i in range(d)] + ["value"]
                   + [f"g{i}" for i in range(d)] + ["retained"])
        for k in range(len(s["a"])):
            w.writerow([int(s["level"][k]), int(s["replica"][k]), repr(float(s["a"][k]))]
                       + [repr(float(v)) for v in s["x"][k]] + [repr(float(s["value"][k]))]
                       + [repr(float(v)) for v in s["grad"][k]] + [int(s["retained"][k])])
        return buf.getvalue()


def deterministic_rays(d: int) -> np.ndarray:
    """Unit axis directions and unit sign-pattern diagonals, without duplicates."""
    rays = [s * e for e in np.eye(d) for s in (1.0, -1.0)]
    if d > 1:
        # 2^d sign diagonals, capped for large d
        for k in range(min(2 ** d, 64)):
            signs = np.array([1.0 if (k >> i) & 1 else -1.0 for i in range(d)])
            rays.append(signs / math.sqrt(d))
    return np.unique(np.round(np.array(rays), 15), axis=0)


def _ball_samples(rng, n, d):
    u = rng.standard_normal((n, d))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    rho = rng.random(n) ** (1.0 / d)
    return u * rho[:, None]


def _leader_cluster(vectors, radius):
    """Greedy clustering in the given order; the first member of a cluster is its center."""
    leaders = []
    labels = np.empty(len(vectors), dtype=int)
    L = np.zeros((0, vectors.shape[1] if len(vectors) else 0))
    for i, v in enumerate(vectors):
        if len(leaders):
            dist = np.sqrt(np.sum((L - v) ** 2, axis=1))
            j = int(np.argmin(dist))
            if dist[j] <= radius:
                labels[i] = j
                continue
        leaders.append(v)
        L = np.vstack([L, v[None, :]]) if len(L) else v[None, :].copy()
        labels[i] = len(leaders) - 1
    return L, labels


def _sample_design(fam, x, cfg, probes, rng):
    """Sample rows ordered by (level, pass, source) with their bookkeeping columns."""
    d = fam.dimension
    a0 = cfg.a0 if cfg.a0 is not None else fam.a_max
    if a0 > fam.a_max:
        raise ValueError("a0 exceeds the family's a_max")
    rays = deterministic_rays(d)
    blocks = []
    for p, beta in enumerate(cfg.betas):
        for n in range(cfg.levels):
            a = a0 * cfg.sigma ** n
            r = cfg.radius_scale * a ** beta
            offs = []
            if p == 0:
                for probe in probes:
                    offs.append(np.atleast_2d(np.asarray(probe(a), dtype=float)).reshape(-1, d))
            offs.append(r * rays)
            offs.append(r * _ball_samples(rng, cfg.replicas, d))
            off = np.vstack(offs)
            blocks.append((n, p, a, off))
    # smallest parameter first so cluster centers come from the finest level
    blocks.sort(key=lambda b: (-b[0], b[1]))
    level = np.concatenate([np.full(len(b[3]), b[0]) for b in blocks])
    replica = np.concatenate([np.arange(len(b[3])) + 1000 * b[1] for b in blocks])
    a = np.concatenate([np.full(len(b[3]), b[2]) for b in blocks])
    X = x[None, :] + np.vstack([b[3] for b in blocks])
    return level, replica, a, X


def estimate_limit_field(fam: SmoothingFamily, F: Callable | float | None, x,
                         cfg: EstimatorConfig | None = None,
                         probes: Sequence[Callable] = (), keep_samples: bool = False
                         ) -> LimitFieldEstimate:
    """Estimate the limit field and its horizontal part at ``x``.

    Parameters
    ----------
    fam : SmoothingFamily
    F : callable, float or None
        Exact target ``F`` (or its value at ``x``) used for the value filter.
        ``None`` falls back to ``fam.target`` and disables the filter if the
        family has no target.
    x : array_like
    cfg : EstimatorConfig
    probes : sequence of callables
        Extra sample offsets ``a -> delta`` (added to ``x``) tried at every level.
    keep_samples : bool
        Keep raw samples for :meth:`LimitFieldEstimate.samples_csv`.
    """
    cfg = (cfg or EstimatorConfig()).validate()
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape != (fam.dimension,) or not np.all(np.isfinite(x)):
        raise ValueError("x must be a finite point of the family's dimension")
    if F is None and fam.target is not None:
        F = fam.target_value
    if callable(F):
        Fx = float(F(x))
    else:
        Fx = None if F is None else float(F)

    rng = np.random.default_rng(cfg.seed)
    level, replica, a, X = _sample_design(fam, x, cfg, probes, rng)
    res = fam.evaluate(X, a, grad=True)
    ok = res.ok
    if Fx is not None:
        with np.errstate(invalid="ignore"):
            value_ok = np.abs(res.values - Fx) <= cfg.value_tol * (1 + abs(Fx))
    else:
        value_ok = np.ones(len(a), dtype=bool)
    rejected = ok & ~value_ok
    retained = ok & value_ok
    norms = np.where(retained, np.linalg.norm(np.nan_to_num(res.grads), axis=1), np.nan)
    blown = retained & (norms > cfg.blow_up_threshold)
    finite = retained & ~blown

    G = res.grads[finite]
    centers, labels = _leader_cluster(G, cfg.merge_radius)
    fin_levels = level[finite]
    smallest = set(range(cfg.levels - cfg.persistence, cfg.levels))
    clusters = []
    for j in range(len(centers)):
        present = set(np.unique(fin_levels[labels == j]).tolist())
        if smallest <= present:
            clusters.append((centers[j].copy(), int(np.sum(labels == j))))

    H = res.grads[blown] / norms[blown][:, None]
    hdirs, _ = _leader_cluster(H, cfg.merge_radius)
    horizontal = [h / np.linalg.norm(h) for h in hdirs]

    if clusters:
        hull_distance = min_norm_point(np.array([c for c, _ in clusters])).distance
    else:
        hull_distance = math.inf

    rej_by_level = {int(n): int(np.sum(rejected & (level == n))) for n in range(cfg.levels)}
    samples = None
    if keep_samples:
        samples = {"level": level, "replica": replica, "a": a, "x": X, "value": res.values,
                   "grad": res.grads, "retained": retained}
    return LimitFieldEstimate(
        x=x, clusters=clusters, horizontal=horizontal, blow_up=bool(np.any(blown)),
        hull_distance=float(hull_distance), samples_used=int(np.sum(retained)),
        value_filter_rejections=int(np.sum(rejected)), eval_failures=int(np.sum(~ok)),
        rejections_by_level=rej_by_level, config=cfg, samples=samples,
    )


@dataclass
class CriticalityReport:
    critical: bool
    hull_distance: float
    witness: np.ndarray
    point: np.ndarray
    tol: float

    def to_json(self):
        return {
            "critical": bool(self.critical),
            "hull_distance": float(self.hull_distance),
            "witness": [float(w) for w in self.witness],
            "point": [float(v) for v in self.point],
            "tol": self.tol,
        }


def criticality_certificate(est: LimitFieldEstimate, tol: float = 1e-6) -> CriticalityReport:
    """Decide whether 0 lies within ``tol`` of the hull of the estimated cluster centers."""
    if not est.clusters:
        raise ValueError("empty estimate: no certificate")
    res = min_norm_point(est.centers)
    return CriticalityReport(res.distance <= tol, res.distance, res.weights, res.point, tol)


def _trapezoid_work(fam, a, p0, p1, steps):
    s = np.linspace(0.0, 1.0, steps + 1)
    X = p0[None, :] + s[:, None] * (p1 - p0)[None, :]
    res = fam.evaluate(X, a, grad=True)
    if not np.all(res.ok):
        k = int(np.argmin(res.ok))
        return None, s[k], res.first_error()
    g = res.grads @ (p1 - p0)
    work = float(np.sum(0.5 * (g[1:] + g[:-1])) / steps)
    return (work, res.values[0], res.values[-1]), None, None


def verify_path_integral(fam: SmoothingFamily, a: float, curve, steps: int = 10_000) -> float:
    """Residual ``|f_a(x(1)) - f_a(x(0)) - int <grad f_a(x(t)), x'(t)> dt|``.

    ``curve`` lists the vertices of a piecewise-linear path traversed at
    uniform speed in ``t``; the integral is the composite trapezoid rule with
    ``steps`` cells spread over the segments.
    """
    if not a > 0:
        raise ValueError("parameter must be positive")
    V = np.atleast_2d(np.asarray(curve, dtype=float))
    if V.shape[1] != fam.dimension:
        V = V.reshape(-1, fam.dimension)
    if len(V) < 2 or np.all(V == V[0]):
        return 0.0
    nseg = len(V) - 1
    per = max(1, steps // nseg)
    total, f_start, f_end = 0.0, None, None
    for i in range(nseg):
        out, s_bad, msg = _trapezoid_work(fam, a, V[i], V[i + 1], per)
        if out is None:
            t = (i + s_bad) / nseg
            raise KinkError(f"{msg} along curve at t={t:.6g}")
        work, f0, f1 = out
        total += work
        if f_start is None:
            f_start = f0
        f_end = f1
    return abs(f_end - f_start - total)


def is_consistent(est: LimitFieldEstimate, generators, cons_tol: float) -> bool:
    """Every cluster center lies within ``cons_tol`` of the hull of ``generators``."""
    gens = np.atleast_2d(np.asarray(generators, dtype=float))
    for c, _ in est.clusters:
        if min_norm_point(gens - c[None, :]).distance > cons_tol:
            return False
    return True


def consistency_at(fam, T: PiecewiseTarget, x, cfg=None, cons_tol=1e-3, probes=()) -> bool:
    est = estimate_limit_field(fam, None, x, cfg, probes)
    return is_consistent(est, clarke_set(T, x), cons_tol)


def gradient_consistency_scan(fam: SmoothingFamily, F_clarke: PiecewiseTarget, box, trials: int,
                              cfg: EstimatorConfig | None = None, cons_tol: float = 1e-3,
                              include=(), avoid: Callable | None = None, seed: int = 0,
                              probes=()) -> float:
    """Fraction of sampled points where the estimated limit field sits inside the Clarke set.

    ``box`` is a pair ``(lower, upper)``. ``include`` forces extra points into
    the scan; ``avoid(x) -> bool`` rejects uniform draws (for example a
    neighbourhood of a known kink).
    """
    lo, hi = (np.asarray(b, dtype=float).reshape(-1) for b in box)
    rng = np.random.default_rng(seed)
    points = [np.asarray(p, dtype=float).reshape(-1) for p in include]
    while len(points) < trials + len(include):
        p = lo + (hi - lo) * rng.random(len(lo))
        if avoid is not None and avoid(p):
            continue
        points.append(p)
    if not points:
        return 1.0
    hits = 0
    for p in points:
        try:
            hits += consistency_at(fam, F_clarke, p, cfg, cons_tol, probes)
        except EvaluationError:
            pass
    return hits / len(points)

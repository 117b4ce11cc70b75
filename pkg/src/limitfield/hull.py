"""
Min-norm point of the convex hull of a finite point set.

Wolfe's method: grow a corral of points, project onto its affine hull, and
shrink the corral whenever the projection leaves the simplex. A plain
Frank-Wolfe loop takes over if the major-cycle cap is reached.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

RIDGE = 1e-12


class MinNormResult(NamedTuple):
    distance: float
    point: np.ndarray
    weights: np.ndarray


def _affine_minimizer(Q):
    """Weights v (sum 1) minimising ||Q^T v|| over the affine hull of rows of Q."""
    k = Q.shape[0]
    G = Q @ Q.T + RIDGE * np.eye(k)
    A = np.zeros((k + 1, k + 1))
    A[:k, :k] = G
    A[:k, k] = 1.0
    A[k, :k] = 1.0
    rhs = np.zeros(k + 1)
    rhs[k] = 1.0
    sol = np.linalg.lstsq(A, rhs, rcond=None)[0]
    return sol[:k]


def _frank_wolfe(P, w, tol, max_iter):
    x = w @ P
    for _ in range(max_iter):
        scores = P @ x
        j = int(np.argmin(scores))
        gap = x @ x - scores[j]
        if gap <= tol * (1 + x @ x):
            break
        d = P[j] - x
        dd = d @ d
        if dd == 0:
            break
        step = min(1.0, max(0.0, -(x @ d) / dd))
        w = (1 - step) * w
        w[j] += step
        x = x + step * d
    return w


def min_norm_point(S, tol: float = 1e-9, max_major: int = 500) -> MinNormResult:
    """Closest point to the origin in ``conv S``.

    Parameters
    ----------
    S : array_like, shape (m, d) or (m,)
        Generators; a 1-d array is read as ``m`` points on the line.
    tol : float
        Optimality tolerance on the Frank-Wolfe gap.

    Returns
    -------
    MinNormResult
        ``distance``, the point ``p* = sum_i w_i s_i`` and the convex weights.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    P = np.asarray(S, dtype=float)
    if P.ndim == 1:
        P = P[:, None]
    if P.shape[0] == 0:
        raise ValueError("empty point set")
    if not np.all(np.isfinite(P)):
        raise ValueError("point set has non-finite entries")
    m = P.shape[0]
    if m == 1:
        return MinNormResult(float(np.linalg.norm(P[0])), P[0].copy(), np.ones(1))

    # work on unit-scale generators so the ridge and tolerances are relative
    norm = float(np.sqrt(np.max(np.sum(P * P, axis=1))))
    if norm == 0.0:
        return MinNormResult(0.0, np.zeros(P.shape[1]), np.eye(m)[0])
    Q = P / norm
    scale = 1.0
    start = int(np.argmin(np.sum(Q * Q, axis=1)))
    corral = [start]
    lam = np.ones(1)
    x = Q[start].copy()
    converged = False
    for _ in range(max_major):
        scores = Q @ x
        j = int(np.argmin(scores))  # argmin returns the lowest index on ties
        if x @ x - scores[j] <= tol * scale or j in corral:
            converged = True
            break
        corral.append(j)
        lam = np.append(lam, 0.0)
        while True:
            v = _affine_minimizer(Q[corral])
            if np.all(v > 1e-14):
                lam = v
                break
            neg = v <= 1e-14
            with np.errstate(divide="ignore", invalid="ignore"):
                ratios = np.nan_to_num(np.where(neg, lam / (lam - v), np.inf), nan=0.0, posinf=np.inf)
            theta = float(np.clip(np.min(ratios), 0.0, 1.0))
            lam = lam + theta * (v - lam)
            keep = lam > 1e-14
            keep[int(np.argmin(np.where(neg, ratios, np.inf)))] = False
            if not np.any(keep):
                keep[int(np.argmax(lam))] = True
            corral = [c for c, k in zip(corral, keep) if k]
            lam = lam[keep]
            lam = lam / lam.sum()
        x = lam @ Q[corral]

    w = np.zeros(m)
    w[corral] = lam
    if not converged:
        w = _frank_wolfe(Q, w, tol, 100_000)
    w = np.clip(w, 0.0, None)
    w /= w.sum()
    point = w @ P
    return MinNormResult(float(np.linalg.norm(point)), point, w)


def optimality_gap(S, point) -> float:
    """``min_i <p*, s_i - p*>``; nonnegative (up to rounding) iff ``p*`` is the projection of 0."""
    P = np.asarray(S, dtype=float)
    if P.ndim == 1:
        P = P[:, None]
    point = np.asarray(point, dtype=float)
    return float(np.min((P - point) @ point))

"""Away-step Frank-Wolfe over a polytope given by a linear minimization oracle.

Atoms are carried as pairs (point, mixture) so callers recover both the point
in drift space and the control mixture that produced it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass
class FWResult:
    point: np.ndarray
    mixture: np.ndarray
    gap: float
    iterations: int
    converged: bool


Atom = tuple[bytes, np.ndarray, np.ndarray]  # key, point, mixture


def away_step_fw(
    grad: Callable[[np.ndarray], np.ndarray],
    lmo: Callable[[np.ndarray], Atom],
    start: Atom,
    step: Callable[[np.ndarray, np.ndarray, float], float],
    tol: float,
    max_iter: int,
    stop: Callable[[float, np.ndarray], bool] | None = None,
    target: np.ndarray | None = None,
    polish_every: int = 25,
) -> FWResult:
    """Minimise a convex function f over conv(atoms).

    ``grad(p)`` is the gradient of f at p, ``lmo(g)`` returns the atom
    minimising g . s, ``step(p, d, gmax)`` picks a step in [0, gmax] along d.
    Stops once the Frank-Wolfe gap g . (p - s) drops to ``tol``, or once
    ``stop(gap, p)`` returns true.

    For distance problems (f = |p - target|^2 / 2) pass ``target``: every
    ``polish_every`` iterations the point is replaced by the exact projection
    of target onto the affine hull of the current atoms whenever that
    projection keeps all weights nonnegative. Once the active face is found
    this finishes in one step instead of creeping to the tolerance.
    """
    keys = [start[0]]
    pts = [start[1]]
    mix = [start[2]]
    w = [1.0]
    p = start[1].astype(float).copy()
    gap = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        g = grad(p)
        s_key, s_pt, s_mix = lmo(g)
        gap = float(g @ (p - s_pt))
        if gap <= tol or (stop is not None and stop(gap, p)):
            return _result(p, pts, mix, w, gap, it, True)
        if target is not None and it % polish_every == 0 and len(pts) > 1:
            live, w = _minor_cycle(target, pts, w)
            keys = [keys[i] for i in live]
            pts = [pts[i] for i in live]
            mix = [mix[i] for i in live]
            p = np.sum([wi * pi for wi, pi in zip(w, pts)], axis=0)
            continue
        away_vals = [float(g @ a) for a in pts]
        a = int(np.argmax(away_vals))
        away_gap = away_vals[a] - float(g @ p)
        if gap >= away_gap or len(pts) == 1:
            d = s_pt - p
            gam = step(p, d, 1.0)
            w = [wi * (1.0 - gam) for wi in w]
            if s_key in keys:
                w[keys.index(s_key)] += gam
            else:
                keys.append(s_key)
                pts.append(s_pt)
                mix.append(s_mix)
                w.append(gam)
        else:
            wa = w[a]
            gmax = wa / (1.0 - wa)
            d = p - pts[a]
            gam = step(p, d, gmax)
            w = [wi * (1.0 + gam) for wi in w]
            w[a] -= gam
        # drop atoms whose weight vanished, renormalise, recompute p exactly
        live = [i for i, wi in enumerate(w) if wi > 1e-15]
        keys = [keys[i] for i in live]
        pts = [pts[i] for i in live]
        mix = [mix[i] for i in live]
        w = [w[i] for i in live]
        tot = sum(w)
        w = [wi / tot for wi in w]
        p = np.sum([wi * pi for wi, pi in zip(w, pts)], axis=0)
    return _result(p, pts, mix, w, gap, it, False)


def _affine_weights(target: np.ndarray, pts: list[np.ndarray]) -> np.ndarray:
    """Weights (summing to 1) of the projection of target onto aff(pts)."""
    base = pts[0]
    if len(pts) == 1:
        return np.ones(1)
    D = np.array([a - base for a in pts[1:]]).T
    theta = np.linalg.lstsq(D, target - base, rcond=None)[0]
    return np.concatenate([[1.0 - theta.sum()], theta])


def _minor_cycle(target: np.ndarray, pts: list[np.ndarray], w: list[float]) -> tuple[list[int], list[float]]:
    """Move the weights toward the affine projection of target, dropping atoms
    whose weight reaches zero on the way (the minor cycle of Wolfe's
    min-norm-point method). Never increases |p - target|."""
    live = list(range(len(pts)))
    cur = np.asarray(w, float)
    while True:
        y = _affine_weights(target, [pts[i] for i in live])
        if np.all(y >= 0):
            return live, list(y / y.sum())
        neg = y < 0
        theta = float(np.min(cur[neg] / (cur[neg] - y[neg])))
        cur = cur + theta * (y - cur)
        keep = cur > 1e-15
        live = [i for i, k in zip(live, keep) if k]
        cur = cur[keep]
        cur = cur / cur.sum()


def _result(p, pts, mix, w, gap, it, ok) -> FWResult:
    mixture = np.sum([wi * mi for wi, mi in zip(w, mix)], axis=0)
    return FWResult(np.asarray(p, float), mixture, gap, it, ok)


def quadratic_step(target: np.ndarray) -> Callable[[np.ndarray, np.ndarray, float], float]:
    """Exact line search for f(p) = 0.5 * ||p - target||^2."""

    def step(p: np.ndarray, d: np.ndarray, gmax: float) -> float:
        dd = float(d @ d)
        if dd == 0.0:
            return 0.0
        return float(np.clip(-(p - target) @ d / dd, 0.0, gmax))

    return step


def bisection_step(grad: Callable[[np.ndarray], np.ndarray], iters: int = 60):
    """Line search for a convex f using the sign of the directional derivative."""

    def step(p: np.ndarray, d: np.ndarray, gmax: float) -> float:
        if grad(p + gmax * d) @ d <= 0:
            return gmax
        lo, hi = 0.0, gmax
        for _ in range(iters):
            mid = 0.5 * (lo + hi)
            if grad(p + mid * d) @ d > 0:
                hi = mid
            else:
                lo = mid
        return lo

    return step

"""Geodesic tracing by classical Runge-Kutta integration of the spray.

The second-order system x' = y, y' = -2 G(x, y) is integrated for a batch of
initial support elements at once.  Trajectories that leave the conic domain are
frozen at their last valid sample and flagged.  Straightness is measured as
the largest distance of the traced points from the chord joining the first
and last valid points; since geodesics keep F constant, the drift of F is a
check on the integration itself.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Geometry, SupportElement, vals
from .errors import FinslerError

SPRAY_ORDER = 2  # G needs second derivatives of F^2


@dataclass
class GeodesicTrace:
    """Sampled trajectories; arrays are indexed (trajectory, sample, ...).

    Samples past ``n_valid[k]`` repeat the last valid state of trajectory k.
    """

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    F: np.ndarray
    exited: np.ndarray
    n_valid: np.ndarray
    chord_deviation: np.ndarray = field(init=False)
    F_drift: np.ndarray = field(init=False)

    def __post_init__(self):
        self.chord_deviation = np.array([chord_deviation(self.x[k, : self.n_valid[k]]) for k in range(len(self.x))])
        self.F_drift = np.array([_drift(self.F[k, : self.n_valid[k]]) for k in range(len(self.x))])

    def rows(self, k: int = 0):
        """(t, x1, x2, y1, y2, F) tuples of the valid part of trajectory k."""
        for s in range(self.n_valid[k]):
            yield (self.t[s], *self.x[k, s], *self.y[k, s], self.F[k, s])


def chord_deviation(points: np.ndarray) -> float:
    """Largest distance of a polyline's vertices from the chord through its end points."""
    points = np.asarray(points, dtype=float)
    if len(points) < 3:
        return 0.0
    start, end = points[0], points[-1]
    d = end - start
    rel = points - start
    length = np.hypot(*d)
    if length == 0.0:
        return float(np.max(np.hypot(rel[:, 0], rel[:, 1])))
    return float(np.max(np.abs(rel[:, 0] * d[1] - rel[:, 1] * d[0])) / length)


def _drift(values: np.ndarray) -> float:
    if len(values) == 0:
        return 0.0
    return float(np.max(np.abs(values - values[0])) / max(abs(values[0]), np.finfo(float).tiny))


def _in_domain(F, x, y) -> np.ndarray:
    pred = getattr(F, "in_domain", None)
    ok = np.all(np.isfinite(x), axis=-1) & np.all(np.isfinite(y), axis=-1) & np.any(y != 0, axis=-1)
    if pred is not None:
        with np.errstate(all="ignore"):
            ok = ok & np.asarray(pred((x[:, 0], x[:, 1]), (y[:, 0], y[:, 1])), dtype=bool)
    return ok


def _spray_batch(F, x, y):
    geo = Geometry(F, SupportElement(x, y), SPRAY_ORDER, check=False)
    return vals(geo.G), vals(geo.F)


def spray_values(F, x: np.ndarray, y: np.ndarray):
    """G^i and F at each row of (x, y); rows where F is not evaluable come back NaN."""
    n = x.shape[0]
    G = np.full((n, 2), np.nan)
    Fv = np.full(n, np.nan)
    ok = _in_domain(F, x, y)
    idx = np.flatnonzero(ok)
    if idx.size == 0:
        return G, Fv
    try:
        with np.errstate(all="ignore"):
            G[idx], Fv[idx] = _spray_batch(F, x[idx], y[idx])
    except FinslerError:
        # isolate the offending rows
        for i in idx:
            try:
                with np.errstate(all="ignore"):
                    g, f = _spray_batch(F, x[i : i + 1], y[i : i + 1])
                G[i], Fv[i] = g[0], f[0]
            except FinslerError:
                pass
    bad = ~(np.all(np.isfinite(G), axis=1) & np.isfinite(Fv))
    G[bad] = np.nan
    Fv[bad] = np.nan
    return G, Fv


def geodesic_trace(F, u0: SupportElement, steps: int = 2000, dt: float = 1e-3) -> GeodesicTrace:
    """Integrate geodesics of ``F`` from every support element in ``u0``."""
    if steps < 1:
        raise ValueError("steps must be positive")
    if not dt > 0:
        raise ValueError("dt must be positive")
    x = np.atleast_2d(np.asarray(u0.x, dtype=float)).copy()
    y = np.atleast_2d(np.asarray(u0.y, dtype=float)).copy()
    n = x.shape[0]
    xs = np.empty((n, steps + 1, 2))
    ys = np.empty((n, steps + 1, 2))
    Fs = np.empty((n, steps + 1))
    n_valid = np.zeros(n, dtype=int)
    exited = np.zeros(n, dtype=bool)

    G, Fv = spray_values(F, x, y)
    active = np.isfinite(Fv)
    exited |= ~active
    xs[:, 0], ys[:, 0], Fs[:, 0] = x, y, Fv
    n_valid[active] = 1

    def accel(xa, ya):
        g, _ = spray_values(F, xa, ya)
        return -2.0 * g

    for s in range(1, steps + 1):
        idx = np.flatnonzero(active)
        if idx.size:
            xa, ya = x[idx], y[idx]
            k1x, k1y = ya, -2.0 * G[idx]
            k2x = ya + 0.5 * dt * k1y
            k2y = accel(xa + 0.5 * dt * k1x, k2x)
            k3x = ya + 0.5 * dt * k2y
            k3y = accel(xa + 0.5 * dt * k2x, k3x)
            k4x = ya + dt * k3y
            k4y = accel(xa + dt * k3x, k4x)
            xn = xa + dt / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x)
            yn = ya + dt / 6.0 * (k1y + 2 * k2y + 2 * k3y + k4y)
            Gn, Fn = spray_values(F, xn, yn)
            good = np.isfinite(Fn) & np.all(np.isfinite(xn), axis=1) & np.all(np.isfinite(yn), axis=1)
            moved = idx[good]
            x[moved], y[moved], G[moved], Fv[moved] = xn[good], yn[good], Gn[good], Fn[good]
            n_valid[moved] += 1
            lost = idx[~good]
            active[lost] = False
            exited[lost] = True
        xs[:, s], ys[:, s], Fs[:, s] = x, y, Fv
    t = dt * np.arange(steps + 1)
    return GeodesicTrace(t=t, x=xs, y=ys, F=Fs, exited=exited, n_valid=n_valid)

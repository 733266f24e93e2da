"""Finite-difference differentiation, used as an independent check on jets.

Mixed partials up to total order 3 are estimated with a tensor product of
second-order central difference stencils, then Richardson-extrapolated over
successively halved steps.  The function is evaluated on the whole stencil in
one vectorised call.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidOrderError, StencilDomainError
from .jets import _degree_block

MAX_ORDER = 3

# central difference weights (offset -> weight) with O(h^2) error
_STENCILS = {
    0: {0: 1.0},
    1: {-1: -0.5, 1: 0.5},
    2: {-1: 1.0, 0: -2.0, 1: 1.0},
    3: {-2: -0.5, -1: 1.0, 1: -1.0, 2: 0.5},
}


@dataclass(frozen=True)
class FDConfig:
    """Step and Richardson depth.

    The step actually used for a partial of total order d is
    ``base_step * 2**(d - 1) * max(1, |coordinate|)``: higher derivatives
    amplify rounding error by h**-d, so they get a coarser stencil.
    """

    base_step: float = 1e-3
    levels: int = 2

    def __post_init__(self):
        if not self.base_step > 0:
            raise ValueError("base_step must be positive")
        if self.levels < 1:
            raise ValueError("levels must be >= 1")


def _coords(u):
    return np.concatenate([np.asarray(u.x, dtype=float), np.asarray(u.y, dtype=float)])


def _stencil(idx, steps):
    """Offsets (n, 4) and weights (n,) of the tensor-product stencil."""
    offsets = [np.zeros(4)]
    weights = [1.0]
    for var, k in enumerate(idx):
        if k == 0:
            continue
        new_off, new_w = [], []
        for off, w in zip(offsets, weights):
            for s, c in _STENCILS[k].items():
                o = off.copy()
                o[var] += s * steps[var]
                new_off.append(o)
                new_w.append(w * c / steps[var] ** k)
        offsets, weights = new_off, new_w
    return np.array(offsets), np.array(weights)


def _evaluate(f, points):
    x = (points[:, 0], points[:, 1])
    y = (points[:, 2], points[:, 3])
    pred = getattr(f, "in_domain", None)
    if pred is not None and not np.all(pred(x, y)):
        raise StencilDomainError("finite-difference stencil leaves the domain of the function")
    with np.errstate(all="ignore"):
        values = np.asarray(f(x, y), dtype=float)
    values = np.broadcast_to(values, (points.shape[0],))
    if not np.all(np.isfinite(values)):
        raise StencilDomainError("function is undefined at a finite-difference stencil point")
    return values


def _richardson_weights(levels: int) -> np.ndarray:
    """Coefficients c with extrapolated value = sum_k c_k * estimate_k."""
    rows = list(np.eye(levels))
    for k in range(1, levels):
        factor = 4.0**k
        rows = [(factor * rows[i + 1] - rows[i]) / (factor - 1) for i in range(len(rows) - 1)]
    return rows[0]


def _check_idx(idx):
    idx = tuple(int(k) for k in idx)
    if len(idx) != 4 or min(idx) < 0:
        raise InvalidOrderError("idx must be four non-negative integers")
    if sum(idx) > MAX_ORDER:
        raise InvalidOrderError(f"finite differences are limited to total order {MAX_ORDER}")
    return idx


def _run(f, u, idx, cfg):
    """(extrapolated estimate, bound on its floating-point rounding error)."""
    c = _coords(u)
    if sum(idx) == 0:
        v = float(_evaluate(f, c[None, :])[0])
        return v, np.finfo(float).eps * abs(v)
    base = cfg.base_step * 2.0 ** (sum(idx) - 1) * np.maximum(1.0, np.abs(c))
    estimates, noise = [], []
    for level in range(cfg.levels):
        offsets, weights = _stencil(idx, base / 2**level)
        values = _evaluate(f, c + offsets)
        estimates.append(float(weights @ values))
        noise.append(float(np.abs(weights) @ np.abs(values)))
    rich = _richardson_weights(cfg.levels)
    return float(rich @ estimates), float(np.finfo(float).eps * (np.abs(rich) @ noise))


def fd_partial(f, u, idx, cfg: FDConfig | None = None) -> float:
    """Estimate the mixed partial of ``f(x, y)`` at the support element ``u``.

    ``idx`` is a 4-tuple of derivative orders in (x1, x2, y1, y2) with total
    at most 3.  ``f`` follows the metric calling convention: it receives two
    coordinate pairs of numpy arrays.
    """
    return _run(f, u, _check_idx(idx), cfg or FDConfig())[0]


def fd_rounding_bound(f, u, idx, cfg: FDConfig | None = None) -> float:
    """Size of the rounding error that ``fd_partial`` can carry at this point.

    Function values carry a relative error of one ulp; the stencil weights
    (which grow like h^-d) and the Richardson coefficients amplify it.  No
    finite-difference estimate can be trusted below this level.
    """
    return _run(f, u, _check_idx(idx), cfg or FDConfig())[1]


def fd_gradient(f, u, order: int = 1, cfg: FDConfig | None = None) -> dict:
    """All partials of total order ``order`` as a dict keyed by multi-index."""
    return {idx: fd_partial(f, u, idx, cfg) for idx in _degree_block(order)}

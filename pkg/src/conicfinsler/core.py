"""Intrinsic geometry of a single conic pseudo-Finsler surface (M, F).

A metric is any callable ``F(x, y)`` taking two coordinate pairs whose entries
are jets or numpy arrays and returning the metric value built from the
arithmetic and functions in :mod:`conicfinsler.jets`.  All tensors are computed
by differentiating jets of ``F``, so nothing but ``F`` itself has to be
supplied.

Index conventions: ``ell_lo`` is the covector l_i = dF/dy^i, ``ell_hi`` the
vector l^i = y^i / F, and ``m_lo``/``m_hi`` the second leg of the modified
Berwald frame with m_1 = -h l^2, m_2 = h l^1, m^1 = -eps l_2 / h, m^2 = eps l_1 / h
(so that m^i m_i = eps and m^i = g^{ij} m_j for either signature).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import jets
from .errors import DegenerateMetricError, DomainError, FinslerError, SingularEvaluationError
from .jets import X1, X2, Y1, Y2, Jet
from .report import CheckReport, verdict_from

R2 = range(2)


class HomogeneityWarning(UserWarning):
    """Raised when an input metric is not positively homogeneous of degree one."""


@dataclass(frozen=True)
class SupportElement:
    """Base point ``x`` and direction ``y``; both may carry leading batch axes."""

    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        y = np.asarray(self.y, dtype=float)
        if x.shape[-1:] != (2,) or y.shape[-1:] != (2,):
            raise ValueError("x and y must have a trailing axis of length 2")
        x, y = np.broadcast_arrays(x, y)
        if np.any(np.all(y == 0, axis=-1)):
            raise DomainError("direction y must be non-zero")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)

    @property
    def batch_shape(self):
        return self.x.shape[:-1]

    def __len__(self):
        return self.x.shape[0] if self.x.ndim > 1 else 1

    def __getitem__(self, item):
        if self.x.ndim == 1:
            raise TypeError("a single support element cannot be indexed")
        return SupportElement(self.x[item], self.y[item])

    def points(self):
        """Iterate over the individual support elements of a batch."""
        if self.x.ndim == 1:
            yield self
        else:
            for i in range(self.x.shape[0]):
                yield self[i]

    def scaled(self, lam) -> "SupportElement":
        return SupportElement(self.x, self.y * np.asarray(lam)[..., None])

    @classmethod
    def stack(cls, elements) -> "SupportElement":
        elements = list(elements)
        return cls(np.stack([e.x for e in elements]), np.stack([e.y for e in elements]))


@dataclass
class MetricAtPoint:
    F: np.ndarray
    g: np.ndarray
    det_g: np.ndarray
    g_inv: np.ndarray


@dataclass
class BerwaldFrame:
    ell_lo: np.ndarray
    ell_hi: np.ndarray
    m_lo: np.ndarray
    m_hi: np.ndarray
    eps: np.ndarray
    h: np.ndarray


@dataclass
class SprayAtPoint:
    G: np.ndarray
    G_j: np.ndarray
    G_jk: np.ndarray
    hamel_M: np.ndarray
    # |2 G^i l_i - y^i dF/dx^i| and |2 G^r m_r - eps F^2 M / h|, relative to F^2
    frame_residual: np.ndarray


@dataclass
class ScalarDecomposition:
    vert_1: np.ndarray | None = None
    vert_2: np.ndarray | None = None
    horiz_1: np.ndarray | None = None
    horiz_2: np.ndarray | None = None


def vals(obj):
    """Constant terms of a jet or of a nested list of jets, as an array with the tensor axes last."""
    if isinstance(obj, Jet):
        return obj.value.astype(float, copy=False)
    if isinstance(obj, (list, tuple)):
        inner = [vals(o) for o in obj]
        return np.stack(inner, axis=inner[0].ndim - _depth(obj[0]))
    return np.asarray(obj, dtype=float)


def _depth(obj) -> int:
    return 1 + _depth(obj[0]) if isinstance(obj, (list, tuple)) else 0


def as_jet(value, like: Jet) -> Jet:
    if isinstance(value, Jet):
        return value
    value = np.broadcast_to(np.asarray(value, dtype=like.coeffs.dtype), like.batch_shape)
    return Jet.constant(value, like.order)


def _metric_positive(F) -> bool:
    return getattr(F, "positive", True)


def check_domain(F, u: SupportElement):
    """Raise :class:`DomainError` unless every point of ``u`` is in the conic domain of ``F``."""
    x = (u.x[..., 0], u.x[..., 1])
    y = (u.y[..., 0], u.y[..., 1])
    in_domain = getattr(F, "in_domain", None)
    if in_domain is not None:
        ok = np.asarray(in_domain(x, y))
        if not np.all(ok):
            raise DomainError(f"support element outside the conic domain of {getattr(F, 'name', F)}")
    with np.errstate(all="ignore"):
        value = np.asarray(F(x, y), dtype=float)
    if not np.all(np.isfinite(value)):
        raise DomainError("metric is not evaluable at the support element")
    if _metric_positive(F) and not np.all(value > 0):
        raise DomainError("metric must be positive on its conic domain")


class Geometry:
    """Jet-valued geometric objects of ``F`` expanded at ``u``.

    Every attribute is a jet (or nested list of jets) whose order drops with
    each derivative taken; the constant terms are the point values.
    """

    def __init__(self, F, u: SupportElement, order: int = jets.DEFAULT_ORDER, check: bool = True, dtype=float):
        if check:
            check_domain(F, u)
        self.metric = F
        self.u = u
        self.order = order
        x1, x2, y1, y2 = jets.seed(u, order, dtype)
        self.x = (x1, x2)
        self.y = (y1, y2)
        try:
            self.F = as_jet(F(self.x, self.y), x1)
        except SingularEvaluationError as exc:
            raise DomainError(f"metric is not smooth at the support element: {exc}") from exc

    def evaluate(self, f) -> Jet:
        """Jet of a scalar function ``f(x, y)`` at this support element."""
        if isinstance(f, Jet):
            return f
        if callable(f):
            return as_jet(f(self.x, self.y), self.F)
        return as_jet(f, self.F)

    # metric ------------------------------------------------------------------

    @cached_property
    def F2(self) -> Jet:
        return self.F * self.F

    @cached_property
    def ell_lo(self):
        return [self.F.diff(Y1), self.F.diff(Y2)]

    @cached_property
    def _dF2(self):
        return [self.F2.diff(Y1), self.F2.diff(Y2)]

    @cached_property
    def g(self):
        d = self._dF2
        g11 = 0.5 * d[0].diff(Y1)
        g12 = 0.5 * d[0].diff(Y2)
        g22 = 0.5 * d[1].diff(Y2)
        return [[g11, g12], [g12, g22]]

    @cached_property
    def det(self) -> Jet:
        g = self.g
        return g[0][0] * g[1][1] - g[0][1] * g[0][1]

    @cached_property
    def eps(self) -> np.ndarray:
        d = self.det.value
        scale = np.max(np.abs(vals(self.g)), axis=(-1, -2)) ** 2
        if np.any(np.abs(d) <= 1e-12 * scale):
            raise DegenerateMetricError("metric tensor is degenerate", det=d)
        return np.sign(d)

    @cached_property
    def g_inv(self):
        g, det = self.g, self.det
        inv = det.reciprocal()
        a = g[1][1] * inv
        b = -g[0][1] * inv
        c = g[0][0] * inv
        return [[a, b], [b, c]]

    # Berwald frame -------------------------------------------------------------

    @cached_property
    def h(self) -> Jet:
        return jets.sqrt(self.eps * self.det)

    @cached_property
    def ell_hi(self):
        inv = self.F.reciprocal()
        return [self.y[0] * inv, self.y[1] * inv]

    @cached_property
    def m_lo(self):
        h, l = self.h, self.ell_hi
        return [-h * l[1], h * l[0]]

    @cached_property
    def m_hi(self):
        # m^i = eps g^{ij} m_j, so that m^i m_i = eps also on Lorentzian cones
        inv = self.h.reciprocal() * self.eps
        l = self.ell_lo
        return [-l[1] * inv, l[0] * inv]

    # Cartan tensor and main scalar ------------------------------------------------

    @cached_property
    def cartan(self):
        """C_ijk = 1/4 d^3 F^2 / dy^i dy^j dy^k as a full 2x2x2 nested list."""
        g = self.g
        c111 = 0.5 * g[0][0].diff(Y1)
        c112 = 0.5 * g[0][0].diff(Y2)
        c122 = 0.5 * g[0][1].diff(Y2)
        c222 = 0.5 * g[1][1].diff(Y2)
        return [[[c111, c112], [c112, c122]], [[c112, c122], [c122, c222]]]

    @cached_property
    def main_scalar(self) -> Jet:
        C, m = self.cartan, self.m_hi
        total = 0
        for i in R2:
            for j in R2:
                for k in R2:
                    total = total + C[i][j][k] * (m[i] * m[j] * m[k])
        return self.eps * self.F * total

    # decompositions -------------------------------------------------------------------

    def vgrad(self, f):
        f = self.evaluate(f)
        return [f.diff(Y1), f.diff(Y2)]

    def vertical(self, f):
        """(f_{;1}, f_{;2}) with F df/dy^i = f_{;1} l_i + f_{;2} m_i."""
        d = self.vgrad(f)
        F = self.F
        f1 = F * (d[0] * self.ell_hi[0] + d[1] * self.ell_hi[1])
        f2 = self.eps * F * (d[0] * self.m_hi[0] + d[1] * self.m_hi[1])
        return f1, f2

    def v2(self, f) -> Jet:
        """f_{;2} alone."""
        d = self.vgrad(f)
        return self.eps * self.F * (d[0] * self.m_hi[0] + d[1] * self.m_hi[1])

    def delta(self, f):
        """Horizontal derivatives delta_i f = df/dx^i - G^j_i df/dy^j."""
        f = self.evaluate(f)
        dv = [f.diff(Y1), f.diff(Y2)]
        Gj = self.G_j
        return [f.diff(X1 + i) - (Gj[0][i] * dv[0] + Gj[1][i] * dv[1]) for i in R2]

    def horizontal(self, f):
        """(f_{,1}, f_{,2}) with delta_i f = f_{,1} l_i + f_{,2} m_i."""
        d = self.delta(f)
        f1 = d[0] * self.ell_hi[0] + d[1] * self.ell_hi[1]
        f2 = self.eps * (d[0] * self.m_hi[0] + d[1] * self.m_hi[1])
        return f1, f2

    # spray and connections -------------------------------------------------------------

    @cached_property
    def dxF2(self):
        return [self.F2.diff(X1), self.F2.diff(X2)]

    @cached_property
    def G(self):
        """Geodesic spray coefficients G^i = 1/4 g^ij (y^k d_y^j d_x^k F^2 - d_x^j F^2)."""
        dF2 = self._dF2
        y = self.y
        rhs = []
        for j in R2:
            mixed = y[0] * dF2[j].diff(X1) + y[1] * dF2[j].diff(X2)
            rhs.append(mixed - self.dxF2[j])
        gi = self.g_inv
        return [0.25 * (gi[i][0] * rhs[0] + gi[i][1] * rhs[1]) for i in R2]

    @cached_property
    def G_j(self):
        """Barthel connection G^i_j = dG^i/dy^j, indexed [i][j]."""
        return [[self.G[i].diff(Y1 + j) for j in R2] for i in R2]

    @cached_property
    def G_jk(self):
        """Berwald connection G^i_jk = dG^i_j/dy^k, indexed [i][j][k]."""
        Gj = self.G_j
        out = [[[None, None], [None, None]] for _ in R2]
        for i in R2:
            out[i][0][0] = Gj[i][0].diff(Y1)
            out[i][0][1] = out[i][1][0] = Gj[i][0].diff(Y2)
            out[i][1][1] = Gj[i][1].diff(Y2)
        return out

    @cached_property
    def hamel(self) -> Jet:
        dF1 = self.F.diff(X1)
        dF2 = self.F.diff(X2)
        return dF1.diff(Y2) - dF2.diff(Y1)

    @cached_property
    def dxF(self):
        return [self.F.diff(X1), self.F.diff(X2)]


# public point-wise operations ----------------------------------------------------------


def _geometry(F, u, order):
    if isinstance(F, Geometry):
        return F
    return Geometry(F, u, order)


def metric_at(F, u: SupportElement, order: int = 3) -> MetricAtPoint:
    geo = _geometry(F, u, order)
    eps = geo.eps  # raises on degeneracy
    del eps
    g = vals(geo.g)
    Fv = geo.F.value
    y = u.y
    ell_y = np.einsum("...i,...i->...", vals(geo.ell_lo), y)
    gyy = np.einsum("...ij,...i,...j->...", g, y, y)
    drift = max(np.max(np.abs(ell_y - Fv) / np.abs(Fv)), np.max(np.abs(gyy - Fv**2) / Fv**2))
    if drift > 1e-7:
        warnings.warn(f"metric fails Euler homogeneity checks (relative drift {drift:.3g})", HomogeneityWarning, stacklevel=2)
    return MetricAtPoint(F=Fv, g=g, det_g=geo.det.value, g_inv=vals(geo.g_inv))


def frame_at(F, u: SupportElement, order: int = 3) -> BerwaldFrame:
    geo = _geometry(F, u, order)
    return BerwaldFrame(
        ell_lo=vals(geo.ell_lo),
        ell_hi=vals(geo.ell_hi),
        m_lo=vals(geo.m_lo),
        m_hi=vals(geo.m_hi),
        eps=geo.eps,
        h=geo.h.value,
    )


def main_scalar(F, u: SupportElement, order: int = 3) -> np.ndarray:
    return _geometry(F, u, order).main_scalar.value


def cartan_residual(geo: Geometry) -> np.ndarray:
    """max |F C_ijk - I m_i m_j m_k| relative to max |F C_ijk| (or 1)."""
    C, m, F, I = geo.cartan, geo.m_lo, geo.F.value, geo.main_scalar.value
    Cv = vals(C) * F[..., None, None, None]
    mv = vals(m)
    model = I[..., None, None, None] * np.einsum("...i,...j,...k->...ijk", mv, mv, mv)
    scale = np.maximum(np.max(np.abs(Cv), axis=(-1, -2, -3)), 1.0)
    return np.max(np.abs(Cv - model), axis=(-1, -2, -3)) / scale


def vertical_decompose(f, F, u: SupportElement, order: int = 3) -> ScalarDecomposition:
    geo = _geometry(F, u, order)
    f1, f2 = geo.vertical(f)
    return ScalarDecomposition(vert_1=f1.value, vert_2=f2.value)


def horizontal_decompose(f, F, u: SupportElement, order: int = 4) -> ScalarDecomposition:
    geo = _geometry(F, u, order)
    f1, f2 = geo.horizontal(f)
    return ScalarDecomposition(horiz_1=f1.value, horiz_2=f2.value)


def spray_frame_residual(geo: Geometry) -> np.ndarray:
    G = vals(geo.G)
    F = geo.F.value
    ell, m = vals(geo.ell_lo), vals(geo.m_lo)
    ydF = np.einsum("...i,...i->...", geo.u.y, vals(geo.dxF))
    r1 = 2 * np.einsum("...i,...i->...", G, ell) - ydF
    r2 = 2 * np.einsum("...i,...i->...", G, m) - geo.eps * F**2 * geo.hamel.value / geo.h.value
    return np.maximum(np.abs(r1), np.abs(r2)) / F**2


def spray_at(F, u: SupportElement, order: int = 4) -> SprayAtPoint:
    geo = _geometry(F, u, order)
    geo.eps
    res = spray_frame_residual(geo)
    if np.max(res) > 1e-7:
        warnings.warn(f"spray frame decomposition residual {np.max(res):.3g}; is F h(1)?", HomogeneityWarning, stacklevel=2)
    return SprayAtPoint(
        G=vals(geo.G),
        G_j=vals(geo.G_j),
        G_jk=vals(geo.G_jk),
        hamel_M=geo.hamel.value,
        frame_residual=res,
    )


def _point_list(u: SupportElement):
    x = np.atleast_2d(u.x)
    y = np.atleast_2d(u.y)
    return x, y


def _build_reports(name, u, residuals, tolerances, info=None, provenance=None):
    """One CheckReport per point from batched residual arrays."""
    xs, ys = _point_list(u)
    n = xs.shape[0]
    out = []
    for p in range(n):
        res = {k: float(np.atleast_1d(v)[p]) for k, v in residuals.items()}
        inf = {k: float(np.atleast_1d(v)[p]) for k, v in (info or {}).items()}
        prov = {}
        for k, (a, b) in (provenance or {}).items():
            a = np.asarray(a, dtype=float)
            b = np.asarray(b, dtype=float)
            prov[k] = {
                "formula": (a.reshape((n, -1))[p] if a.ndim else a.reshape(1)).tolist(),
                "direct": (b.reshape((n, -1))[p] if b.ndim else b.reshape(1)).tolist(),
            }
        out.append(
            CheckReport(
                name=name,
                point={"x": xs[p].tolist(), "y": ys[p].tolist()},
                residuals=res,
                tolerances=dict(tolerances),
                verdict=verdict_from(res, tolerances),
                info=inf,
                provenance=prov,
            )
        )
    return out if u.x.ndim > 1 else out[0]


def hamel_residual(geo: Geometry) -> np.ndarray:
    """|M| relative to max(1, max_i |l_i|), the size of the first y-derivatives of F."""
    scale = np.maximum(1.0, np.max(np.abs(vals(geo.ell_lo)), axis=-1))
    return np.abs(geo.hamel.value) / scale


def is_projectively_flat_at(F, u: SupportElement, tol: float = 1e-8, order: int = 4):
    """Hamel test M = 0 plus the two spray forms that it implies."""
    geo = _geometry(F, u, order)
    geo.eps
    G = vals(geo.G)
    Fv = geo.F.value
    scale = np.maximum(Fv**2, 1e-300)
    Gm = np.abs(np.einsum("...i,...i->...", G, vals(geo.m_lo))) / scale
    proj = np.einsum("...i,...i->...", u.y, vals(geo.dxF)) / (2 * Fv)
    form = np.max(np.abs(G - proj[..., None] * u.y), axis=-1) / scale
    residuals = {"hamel": hamel_residual(geo), "G_m": Gm, "spray_form": form}
    return _build_reports("projective_flatness", u, residuals, {k: tol for k in residuals})


def dual_flatness_residual(geo: Geometry) -> np.ndarray:
    """max_i |y^j d_y^i d_x^j F^2 - 2 d_x^i F^2| relative to F^2."""
    y = geo.u.y
    out = []
    for i in R2:
        d = geo._dF2[i]
        lhs = y[..., 0] * d.diff(X1).value + y[..., 1] * d.diff(X2).value
        out.append(lhs - 2 * geo.dxF2[i].value)
    return np.max(np.abs(np.stack(out, axis=-1)), axis=-1) / geo.F.value ** 2


def is_dually_flat_at(F, u: SupportElement, tol: float = 1e-8, order: int = 3):
    geo = _geometry(F, u, order)
    return _build_reports("dual_flatness", u, {"dual": dual_flatness_residual(geo)}, {"dual": tol})


def signature_sweep(F, u: SupportElement, order: int = 2) -> dict:
    """Point-wise signatures over a sample batch; reports whether they agree."""
    geo = Geometry(F, u, order)
    eps = np.atleast_1d(geo.eps)
    return {"eps": eps.tolist(), "consistent": bool(np.all(eps == eps[0]))}


__all__ = [
    "SupportElement",
    "Geometry",
    "MetricAtPoint",
    "BerwaldFrame",
    "SprayAtPoint",
    "ScalarDecomposition",
    "HomogeneityWarning",
    "FinslerError",
    "metric_at",
    "frame_at",
    "main_scalar",
    "vertical_decompose",
    "horizontal_decompose",
    "spray_at",
    "is_projectively_flat_at",
    "is_dually_flat_at",
    "signature_sweep",
    "vals",
]

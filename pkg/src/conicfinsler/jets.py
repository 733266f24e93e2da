"""Truncated multivariate Taylor arithmetic in the four variables (x1, x2, y1, y2).

A :class:`Jet` stores Taylor-normalised coefficients (derivative / multi-factorial)
of a function around an expansion point, truncated at a total degree ``order``.
Monomials are laid out graded by degree, so truncating a jet to a lower order is
a prefix slice of its coefficient array.

Coefficient arrays may carry trailing batch dimensions: ``coeffs.shape ==
(n_coeffs(order), *batch)``.  Every operation acts elementwise along the batch,
which is how sample sweeps are evaluated in one pass.
"""

from __future__ import annotations

import functools
import math
from typing import Sequence

import numpy as np

from .errors import InvalidOrderError, SingularEvaluationError, TruncationExceededError

NVARS = 4
DEFAULT_ORDER = 6

# variable slots
X1, X2, Y1, Y2 = range(4)


_REAL = (np.dtype(np.float64), np.dtype(np.longdouble))


def _real(a) -> np.ndarray:
    """Float array, keeping extended precision when the input already has it."""
    if isinstance(a, np.ndarray) and a.dtype in _REAL:
        return a
    a = np.asarray(a)
    if a.dtype == np.longdouble:
        return a
    return a.astype(float, copy=False)


@functools.lru_cache(maxsize=None)
def n_coeffs(order: int) -> int:
    return math.comb(order + NVARS, NVARS)


@functools.lru_cache(maxsize=None)
def _degree_block(degree: int) -> tuple[tuple[int, ...], ...]:
    """All exponent 4-tuples of exactly ``degree``, in descending lexicographic order."""

    def rec(remaining, nvars):
        if nvars == 1:
            yield (remaining,)
            return
        for first in range(remaining, -1, -1):
            for rest in rec(remaining - first, nvars - 1):
                yield (first,) + rest

    return tuple(rec(degree, NVARS))


@functools.lru_cache(maxsize=None)
def monomials(order: int) -> tuple[tuple[int, ...], ...]:
    out = []
    for d in range(order + 1):
        out.extend(_degree_block(d))
    return tuple(out)


@functools.lru_cache(maxsize=None)
def _index_map(order: int) -> dict:
    return {m: i for i, m in enumerate(monomials(order))}


def index_of(idx: Sequence[int]) -> int:
    idx = tuple(int(k) for k in idx)
    if len(idx) != NVARS or min(idx) < 0:
        raise ValueError(f"multi-index must be {NVARS} non-negative integers, got {idx}")
    return _index_map(sum(idx))[idx]


@functools.lru_cache(maxsize=None)
def _mul_table(order: int):
    mons = monomials(order)
    index = _index_map(order)
    degs = [sum(m) for m in mons]
    ii, jj, kk = [], [], []
    for i, a in enumerate(mons):
        for j, b in enumerate(mons):
            if degs[i] + degs[j] <= order:
                ii.append(i)
                jj.append(j)
                kk.append(index[tuple(p + q for p, q in zip(a, b))])
    ii, jj, kk = map(np.asarray, (ii, jj, kk))
    perm = np.argsort(kk, kind="stable")
    kk = kk[perm]
    starts = np.flatnonzero(np.r_[True, kk[1:] != kk[:-1]])
    return ii[perm], jj[perm], starts


@functools.lru_cache(maxsize=None)
def _diff_table(order: int, var: int):
    """Source indices and factors giving d/d(var) of an order-``order`` jet."""
    index = _index_map(order)
    src, fac = [], []
    for beta in monomials(order - 1):
        alpha = list(beta)
        alpha[var] += 1
        src.append(index[tuple(alpha)])
        fac.append(beta[var] + 1)
    return np.asarray(src), np.asarray(fac, dtype=float)  # float64 promotes to wider coefficient dtypes


def _bcast(arr, ndim):
    """Append axes so a batch-shaped array broadcasts against coefficient rows."""
    arr = _real(arr)
    return arr.reshape((1,) + arr.shape) if ndim else arr


class Jet:
    """Truncated Taylor expansion of a scalar function of (x1, x2, y1, y2)."""

    __slots__ = ("coeffs", "order")
    __array_ufunc__ = None  # make ndarray <op> Jet defer to the Jet's reflected method

    def __init__(self, coeffs, order: int):
        coeffs = _real(coeffs)
        if coeffs.shape[0] != n_coeffs(order):
            raise ValueError(f"order {order} needs {n_coeffs(order)} coefficients, got {coeffs.shape[0]}")
        self.coeffs = coeffs
        self.order = order

    @classmethod
    def constant(cls, value, order: int) -> "Jet":
        value = _real(value)
        c = np.zeros((n_coeffs(order),) + value.shape, dtype=value.dtype)
        c[0] = value
        return cls(c, order)

    @property
    def value(self):
        return self.coeffs[0]

    @property
    def batch_shape(self):
        return self.coeffs.shape[1:]

    def truncate(self, order: int) -> "Jet":
        if order > self.order:
            raise TruncationExceededError(f"cannot raise order {self.order} to {order}")
        if order == self.order:
            return self
        return Jet(self.coeffs[: n_coeffs(order)], order)

    def coefficient(self, idx) -> np.ndarray:
        if sum(idx) > self.order:
            raise TruncationExceededError(f"index {tuple(idx)} exceeds jet order {self.order}")
        return self.coeffs[index_of(idx)]

    def partial(self, idx) -> np.ndarray:
        """Mixed partial derivative at the expansion point."""
        scale = math.prod(math.factorial(k) for k in idx)
        return self.coefficient(idx) * scale

    def diff(self, var: int) -> "Jet":
        """Jet of the derivative in variable ``var``; one order lower."""
        if self.order < 1:
            raise TruncationExceededError("cannot differentiate an order-0 jet")
        src, fac = _diff_table(self.order, var)
        c = self.coeffs[src] * fac.reshape((-1,) + (1,) * (self.coeffs.ndim - 1))
        return Jet(c, self.order - 1)

    # arithmetic -----------------------------------------------------------

    def _pair(self, other: "Jet"):
        n = min(self.order, other.order)
        k = n_coeffs(n)
        return self.coeffs[:k], other.coeffs[:k], n

    def __add__(self, other):
        if isinstance(other, Jet):
            a, b, n = self._pair(other)
            return Jet(a + b, n)
        other = _real(other)
        shape = np.broadcast_shapes(self.batch_shape, other.shape)
        c = np.array(np.broadcast_to(self.coeffs, self.coeffs.shape[:1] + shape))
        c[0] += other
        return Jet(c, self.order)

    __radd__ = __add__

    def __neg__(self):
        return Jet(-self.coeffs, self.order)

    def __pos__(self):
        return self

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Jet):
            a, b, n = self._pair(other)
            if n == 0:
                return Jet(a * b, 0)
            ii, jj, starts = _mul_table(n)
            return Jet(np.add.reduceat(a[ii] * b[jj], starts, axis=0), n)
        other = _real(other)
        return Jet(self.coeffs * _bcast(other, other.ndim), self.order)

    __rmul__ = __mul__

    def reciprocal(self) -> "Jet":
        a0 = self.value
        if np.any(a0 == 0):
            raise SingularEvaluationError("division by a jet with zero constant term")
        inv = 1.0 / a0
        coeffs = [inv]
        for _ in range(self.order):
            coeffs.append(-coeffs[-1] * inv)
        return compose(self, coeffs)

    def __truediv__(self, other):
        if isinstance(other, Jet):
            return self * other.reciprocal()
        other = _real(other)
        if np.any(other == 0):
            raise SingularEvaluationError("division of a jet by zero")
        return Jet(self.coeffs / _bcast(other, other.ndim), self.order)

    def __rtruediv__(self, other):
        return self.reciprocal() * other

    def __pow__(self, exponent):
        if isinstance(exponent, (int, np.integer)) or float(exponent).is_integer():
            n = int(exponent)
            if n < 0:
                return self.reciprocal() ** (-n)
            result = Jet.constant(np.ones(self.batch_shape), self.order)
            base = self
            while n:
                if n & 1:
                    result = result * base
                n >>= 1
                if n:
                    base = base * base
            return result
        return power(self, float(exponent))

    def __abs__(self):
        a0 = self.value
        if np.any(a0 == 0):
            raise SingularEvaluationError("abs is not smooth at zero")
        return self * np.sign(a0)

    def __repr__(self):
        return f"Jet(order={self.order}, value={self.value!r})"


def compose(a: Jet, taylor: Sequence) -> Jet:
    """Compose the univariate series sum_k taylor[k] * t**k with t = a - a(0).

    ``taylor[k]`` is f^(k)(a0)/k!, an array with the batch shape of ``a``.
    Evaluated by Horner's scheme up to the jet's order.
    """
    n = a.order
    t = a.coeffs.copy()
    t[0] = 0.0
    t = Jet(t, n)
    if n == 0:
        return Jet.constant(np.broadcast_to(taylor[0], a.batch_shape), 0)
    r = t * taylor[n] + taylor[n - 1]
    for k in range(n - 2, -1, -1):
        r = r * t + taylor[k]
    return r


# transcendental functions ---------------------------------------------------


def _check_positive(a0, name):
    if np.any(~(a0 > 0)):
        raise SingularEvaluationError(f"{name} requires a positive argument, got {a0}")


def exp(a):
    if not isinstance(a, Jet):
        return np.exp(a)
    e = np.exp(a.value)
    return compose(a, [e / math.factorial(k) for k in range(a.order + 1)])


def log(a):
    if not isinstance(a, Jet):
        return np.log(a)
    a0 = a.value
    _check_positive(a0, "log")
    coeffs = [np.log(a0)]
    for k in range(1, a.order + 1):
        coeffs.append((-1) ** (k + 1) / (k * a0**k))
    return compose(a, coeffs)


def power(a, r: float):
    if not isinstance(a, Jet):
        return np.power(a, r)
    a0 = a.value
    _check_positive(a0, "power")
    coeffs = []
    binom = 1.0
    for k in range(a.order + 1):
        coeffs.append(binom * a0 ** (r - k))
        binom *= (r - k) / (k + 1)
    return compose(a, coeffs)


def sqrt(a):
    if not isinstance(a, Jet):
        return np.sqrt(a)
    return power(a, 0.5)


def sin(a):
    if not isinstance(a, Jet):
        return np.sin(a)
    s, c = np.sin(a.value), np.cos(a.value)
    cycle = [s, c, -s, -c]
    return compose(a, [cycle[k % 4] / math.factorial(k) for k in range(a.order + 1)])


def cos(a):
    if not isinstance(a, Jet):
        return np.cos(a)
    s, c = np.sin(a.value), np.cos(a.value)
    cycle = [c, -s, -c, s]
    return compose(a, [cycle[k % 4] / math.factorial(k) for k in range(a.order + 1)])


def atan(a):
    if not isinstance(a, Jet):
        return np.arctan(a)
    a0 = a.value
    # series of 1/(1 + x^2) about a0, then integrate termwise
    p0, p1 = 1.0 + a0 * a0, 2.0 * a0
    q = [1.0 / p0]
    for k in range(1, a.order):
        prev2 = q[k - 2] if k >= 2 else 0.0
        q.append(-(p1 * q[k - 1] + prev2) / p0)
    coeffs = [np.arctan(a0)] + [q[k - 1] / k for k in range(1, a.order + 1)]
    return compose(a, coeffs)


def seed(point, order: int = DEFAULT_ORDER, dtype=float) -> tuple[Jet, Jet, Jet, Jet]:
    """Variable jets (x1, x2, y1, y2) expanded at a support element.

    ``dtype=np.longdouble`` carries every later operation in extended
    precision, for computations whose conditioning defeats float64.
    """
    if order < 1:
        raise InvalidOrderError(f"jet order must be >= 1, got {order}")
    x = np.asarray(point.x, dtype=dtype)
    y = np.asarray(point.y, dtype=dtype)
    coords = (x[..., 0], x[..., 1], y[..., 0], y[..., 1])
    out = []
    for var, value in enumerate(coords):
        c = np.zeros((n_coeffs(order),) + value.shape, dtype=value.dtype)
        c[0] = value
        unit = [0] * NVARS
        unit[var] = 1
        c[index_of(unit)] = 1.0
        out.append(Jet(c, order))
    return tuple(out)


def value_of(a):
    """Constant term of a jet, or the argument itself for plain numbers."""
    return a.value if isinstance(a, Jet) else _real(a)


def partial(a, idx) -> np.ndarray:
    if not isinstance(a, Jet):
        if sum(idx):
            return np.zeros_like(_real(a))
        return _real(a)
    return a.partial(idx)


def arith(a: Jet, b: Jet, op: str) -> Jet:
    """Binary jet arithmetic by name, for callers that dispatch on strings."""
    ops = {
        "add": lambda: a + b,
        "sub": lambda: a - b,
        "mul": lambda: a * b,
        "div": lambda: a / b,
    }
    if op not in ops:
        raise ValueError(f"unknown jet operation {op!r}")
    return ops[op]()


def transcend(a: Jet, name: str, r: float | None = None) -> Jet:
    if name == "pow":
        return power(a, r)
    funcs = {"exp": exp, "ln": log, "log": log, "sqrt": sqrt, "sin": sin, "cos": cos, "atan": atan}
    if name not in funcs:
        raise ValueError(f"unknown transcendental {name!r}")
    return funcs[name](a)

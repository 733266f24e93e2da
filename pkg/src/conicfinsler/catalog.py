"""Built-in metrics, conformal factors and the scenarios that pair them.

Metric and factor definitions are polymorphic in their arguments: they accept
coordinate pairs of jets (for exact derivatives) or numpy arrays (for plain
evaluation and the finite-difference oracle).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import jets
from .core import SupportElement
from .errors import DomainError

DEFAULT_A = (0.3, 0.4)
DEFAULT_B = (0.2, 0.1)
DEFAULT_RANDERS_TWIST = 0.25
DEFAULT_X_ONLY = (0.3, -0.2)
DEFAULT_Y_ONLY_AMPLITUDE = 0.2
DEFAULT_CONSTANT = 0.3


def _dot(a, b):
    return a[0] * b[0] + a[1] * b[1]


def _norm2(v):
    return v[0] * v[0] + v[1] * v[1]


def _klein_radicand(x, y):
    xy = _dot(x, y)
    yy = _norm2(y)
    return yy - (_norm2(x) * yy - xy * xy)


def _array(v):
    return np.asarray(jets.value_of(v), dtype=float)


def _membership(spec, x, y, sampling=False):
    x0 = (_array(x[0]), _array(x[1]))
    y0 = (_array(y[0]), _array(y[1]))
    ok = np.ones(np.broadcast_shapes(*(v.shape for v in x0 + y0)), dtype=bool)
    if spec.ball:
        ok &= _norm2(x0) < 1.0
    preds = [spec.domain, spec.sample_domain] if sampling else [spec.domain]
    for pred in preds:
        if pred is not None:
            ok &= np.asarray(pred(x0, y0), dtype=bool)
    return ok


@dataclass
class MetricSpec:
    """A named metric with its conic domain.

    ``positive`` is False for metrics whose conic domain contains directions
    where F < 0 (they remain pseudo-Finsler since only F^2 enters g).
    """

    name: str
    definition: Callable
    domain: Callable | None = None
    signature: int = 1
    properties: dict = field(default_factory=dict)
    positive: bool = True
    ball: bool = False
    description: str = ""
    sample_domain: Callable | None = None

    def __call__(self, x, y):
        return self.definition(x, y)

    def in_domain(self, x, y):
        return _membership(self, x, y)

    def in_sample_domain(self, x, y):
        return _membership(self, x, y, sampling=True)


@dataclass
class FactorSpec:
    """A named h(0) conformal factor; ``kind`` is general, x-only, y-only or homothety."""

    name: str
    definition: Callable
    kind: str = "general"
    domain: Callable | None = None
    ball: bool = False
    description: str = ""
    sample_domain: Callable | None = None

    def __call__(self, x, y):
        return self.definition(x, y)

    def in_domain(self, x, y):
        return _membership(self, x, y)

    def in_sample_domain(self, x, y):
        return _membership(self, x, y, sampling=True)


class ConformalMetric:
    """The transformed metric e^phi F as a metric callable in its own right."""

    def __init__(self, metric, factor):
        self.metric = metric
        self.factor = factor
        self.name = f"exp({getattr(factor, 'name', 'phi')})*{getattr(metric, 'name', 'F')}"
        self.positive = getattr(metric, "positive", True)

    def __call__(self, x, y):
        return jets.exp(self.factor(x, y)) * self.metric(x, y)

    def in_domain(self, x, y):
        ok = True
        for part in (self.metric, self.factor):
            pred = getattr(part, "in_domain", None)
            if pred is not None:
                ok = ok & np.asarray(pred(x, y), dtype=bool)
        return ok


# metrics ------------------------------------------------------------------------


def euclidean_metric(x, y):
    return jets.sqrt(_norm2(y))


def klein_metric(x, y):
    return jets.sqrt(_klein_radicand(x, y)) / (1.0 - _norm2(x))


def quartic_metric(x, y):
    return jets.power(y[0] ** 4 + y[1] ** 4, 0.25)


def make_funk_type(a=DEFAULT_A):
    """F = <a,y> |z| / (1 + <a,x>)^2 with z^i = ((1 + <a,x>) y^i - <a,y> x^i) / <a,y>."""
    a = tuple(float(v) for v in a)
    if np.hypot(*a) >= 1:
        raise ValueError("funk_type needs |a| < 1")

    def z_vector(x, y):
        ax = 1.0 + _dot(a, x)
        ay = _dot(a, y)
        return [(ax * y[i] - ay * x[i]) / ay for i in range(2)], ax, ay

    def metric(x, y):
        z, ax, ay = z_vector(x, y)
        return ay * jets.sqrt(_norm2(z)) / (ax * ax)

    def factor(x, y):
        z, _, _ = z_vector(x, y)
        return jets.sqrt(_norm2(z))

    def domain(x, y):
        return (_dot(a, y) != 0) & (1.0 + _dot(a, x) > 0)

    def sample_domain(x, y):
        return np.abs(_dot(a, y)) >= 0.1 * np.hypot(*a) * np.sqrt(_norm2(y))

    return metric, factor, domain, sample_domain, a


def make_randers(b=DEFAULT_B, twist=DEFAULT_RANDERS_TWIST):
    """|y| + <b(x), y> with b(x) = b + twist * (-x2, x1); the twist makes the 1-form non-closed."""
    b = tuple(float(v) for v in b)

    def metric(x, y):
        b1 = b[0] - twist * x[1]
        b2 = b[1] + twist * x[0]
        return jets.sqrt(_norm2(y)) + b1 * y[0] + b2 * y[1]

    def domain(x, y):
        b1 = b[0] - twist * x[1]
        b2 = b[1] + twist * x[0]
        return b1 * b1 + b2 * b2 < 1.0

    return metric, domain


# factors -------------------------------------------------------------------------


def make_constant(c=DEFAULT_CONSTANT):
    def factor(x, y):
        return c + 0.0 * y[0]

    return factor


def phi_2_12(x, y):
    """ln(<x,y> / sqrt(|y|^2 - (|x|^2|y|^2 - <x,y>^2))); turns Klein into <x,y>/(1-|x|^2)."""
    return jets.log(_dot(x, y) / jets.sqrt(_klein_radicand(x, y)))


def phi_4_10(x, y):
    """ln(1 + <x,y> / sqrt(...)); turns Klein into the Funk metric."""
    return jets.log(1.0 + _dot(x, y) / jets.sqrt(_klein_radicand(x, y)))


def make_x_only(b=DEFAULT_X_ONLY):
    b = tuple(float(v) for v in b)

    def factor(x, y):
        return b[0] * x[0] + b[1] * x[1] + 0.0 * y[0]

    return factor


def make_y_only(amplitude=DEFAULT_Y_ONLY_AMPLITUDE):
    def factor(x, y):
        return amplitude * y[0] * y[1] / _norm2(y)

    return factor


def make_log_ratio(target, base):
    """phi = ln(target / base), so that e^phi base = target."""

    def factor(x, y):
        return jets.log(target(x, y) / base(x, y))

    return factor


# registry ------------------------------------------------------------------------


@dataclass
class Scenario:
    name: str
    metric: str
    factor: str
    degenerate: bool = False
    notes: str = ""


def _build_metrics():
    funk_metric, _, funk_domain, funk_margin, a = make_funk_type()
    randers, randers_domain = make_randers()
    return {
        "euclidean": MetricSpec(
            "euclidean",
            euclidean_metric,
            properties={"riemannian": "trivial", "projectively_flat": "trivial", "dually_flat": "trivial"},
            description="|y|",
        ),
        "klein": MetricSpec(
            "klein",
            klein_metric,
            ball=True,
            properties={"riemannian": "quadratic F^2", "projectively_flat": "straight geodesics"},
            description="Klein metric on the unit disc",
        ),
        "funk_type": MetricSpec(
            "funk_type",
            funk_metric,
            domain=funk_domain,
            sample_domain=funk_margin,
            ball=True,
            positive=False,
            properties={"riemannian": "F^2 quadratic in y", "projectively_flat": "G^i = -<a,y>/(1+<a,x>) y^i"},
            description=f"<a,y>|z|/(1+<a,x>)^2 with a={a}; sampled with |<a,y>| >= 0.1|a||y|",
        ),
        "quartic": MetricSpec("quartic", quartic_metric, description="((y1)^4+(y2)^4)^(1/4)"),
        "randers": MetricSpec(
            "randers",
            randers,
            domain=randers_domain,
            description="|y| + <b(x),y>, b(x) = (0.2, 0.1) + 0.25(-x2, x1)",
        ),
    }


def _build_factors(metrics):
    _, funk_factor, funk_domain, funk_margin, _ = make_funk_type()

    def positive_xy(x, y):
        return _dot(x, y) > 0

    def xy_margin(x, y):
        nx = np.sqrt(_norm2(x))
        return (nx >= 0.2) & (_dot(x, y) >= 0.2 * nx * np.sqrt(_norm2(y)))

    return {
        "constant": FactorSpec("constant", make_constant(), kind="homothety", description=f"phi = {DEFAULT_CONSTANT}"),
        "phi_2_12": FactorSpec(
            "phi_2_12",
            phi_2_12,
            domain=positive_xy,
            sample_domain=xy_margin,
            ball=True,
            description="ln(<x,y> / F_klein (1-|x|^2)); degenerate with Klein",
        ),
        "phi_3_12": FactorSpec(
            "phi_3_12", funk_factor, domain=funk_domain, sample_domain=funk_margin, ball=True, description="|z|"
        ),
        "phi_4_10": FactorSpec(
            "phi_4_10", phi_4_10, ball=True, description="ln(1 + <x,y> / F_klein (1-|x|^2)); Klein to Funk"
        ),
        "x_only": FactorSpec("x_only", make_x_only(), kind="x-only", description=f"<b,x>, b={DEFAULT_X_ONLY}"),
        "y_only": FactorSpec(
            "y_only",
            make_y_only(),
            kind="y-only",
            description=f"{DEFAULT_Y_ONLY_AMPLITUDE} y1 y2 / |y|^2",
        ),
        "klein_to_euclid": FactorSpec(
            "klein_to_euclid",
            make_log_ratio(euclidean_metric, klein_metric),
            ball=True,
            description="ln(|y| / F_klein); F dphi/dx + dF/dx = 0",
        ),
    }


METRICS = _build_metrics()
FACTORS = _build_factors(METRICS)

SCENARIOS = {
    s.name: s
    for s in [
        Scenario("example_2_12", "klein", "phi_2_12", degenerate=True, notes="transformed metric is linear in y"),
        Scenario(
            "example_3_12",
            "funk_type",
            "phi_3_12",
            notes="conic domain not stated; directions sampled with |<a,y>| >= 0.1|a||y|",
        ),
        Scenario("example_4_10", "klein", "phi_4_10", notes="transformed metric is the Funk metric"),
        Scenario("homothety_klein", "klein", "constant"),
        Scenario("x_only_klein", "klein", "x_only"),
        Scenario("x_only_randers", "randers", "x_only"),
        Scenario("y_only_euclidean", "euclidean", "y_only"),
        Scenario("y_only_funk", "funk_type", "y_only"),
        Scenario("y_only_quartic", "quartic", "y_only"),
        Scenario("quartic_4_10", "quartic", "phi_4_10"),
        Scenario("randers_4_10", "randers", "phi_4_10"),
        Scenario("sufficiency_klein", "klein", "klein_to_euclid", notes="e^phi F = |y| is x-independent"),
    ]
}


def catalog_entries() -> dict:
    return {"metrics": METRICS, "factors": FACTORS, "scenarios": SCENARIOS}


def get_metric(name: str) -> MetricSpec:
    try:
        return METRICS[name]
    except KeyError:
        raise KeyError(f"unknown metric {name!r}; choose from {sorted(METRICS)}") from None


def get_factor(name: str) -> FactorSpec:
    try:
        return FACTORS[name]
    except KeyError:
        raise KeyError(f"unknown factor {name!r}; choose from {sorted(FACTORS)}") from None


def get_scenario(name: str) -> Scenario:
    try:
        return SCENARIOS[name]
    except KeyError:
        raise KeyError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}") from None


def resolve(scenario: str | None = None, metric: str | None = None, factor: str | None = None):
    """(MetricSpec, FactorSpec or None) for a scenario name or an explicit pair."""
    if scenario is not None:
        sc = get_scenario(scenario)
        return get_metric(sc.metric), get_factor(sc.factor)
    if metric is None:
        raise KeyError("either a scenario or a metric is required")
    return get_metric(metric), (get_factor(factor) if factor else None)


def transformed(metric, factor) -> ConformalMetric:
    return ConformalMetric(metric, factor)


# sampling -----------------------------------------------------------------------

SAMPLER = "numpy.random.PCG64"


def sample_points(metric, factor=None, count: int = 100, seed: int = 0, radius: float = 0.8,
                  y_range=(0.5, 2.0), max_tries: int = 10000) -> SupportElement:
    """Random support elements in the joint domain of ``metric`` and ``factor``.

    Base points are uniform in the disc of the given radius, directions have a
    uniform angle and a magnitude uniform in ``y_range``.  Candidates outside
    either sampling predicate (the domain plus any safety margin) are rejected.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.Generator(np.random.PCG64(seed))
    xs, ys = [], []
    tries = 0
    while len(xs) < count:
        tries += 1
        if tries > max_tries:
            raise DomainError(f"could not draw {count} samples in the domain after {max_tries} tries")
        r = radius * np.sqrt(rng.uniform())
        t = rng.uniform(0, 2 * np.pi)
        x = np.array([r * np.cos(t), r * np.sin(t)])
        s = rng.uniform(*y_range)
        t = rng.uniform(0, 2 * np.pi)
        y = np.array([s * np.cos(t), s * np.sin(t)])
        xx, yy = (x[0], x[1]), (y[0], y[1])
        ok = True
        for part in (metric, factor):
            pred = getattr(part, "in_sample_domain", None) or getattr(part, "in_domain", None)
            if pred is not None and not bool(pred(xx, yy)):
                ok = False
        if ok:
            xs.append(x)
            ys.append(y)
    return SupportElement(np.array(xs), np.array(ys))

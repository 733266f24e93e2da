"""Check reports and their deterministic serialisation."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

PASS, FAIL, SKIP = "pass", "fail", "skip"


@dataclass
class CheckReport:
    """Outcome of one predicate at one support element.

    ``residuals`` gate the verdict against ``tolerances``; ``info`` carries
    values that are reported but never gate (for instance a condition the
    theory says may or may not vanish).  ``provenance`` pairs the
    closed-form value of an object with its direct computation.
    """

    name: str
    point: dict
    residuals: dict = field(default_factory=dict)
    tolerances: dict = field(default_factory=dict)
    verdict: str = PASS
    reason: str = ""
    info: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.verdict == PASS

    def to_dict(self) -> dict:
        out = {
            "name": self.name,
            "point": self.point,
            "verdict": self.verdict,
            "residuals": dict(sorted(self.residuals.items())),
            "tolerances": dict(sorted(self.tolerances.items())),
        }
        if self.reason:
            out["reason"] = self.reason
        if self.info:
            out["info"] = dict(sorted(self.info.items()))
        if self.provenance:
            out["provenance"] = dict(sorted(self.provenance.items()))
        return out

    @classmethod
    def skip(cls, name, point, reason) -> "CheckReport":
        return cls(name=name, point=point, verdict=SKIP, reason=reason)


def verdict_from(residuals: dict, tolerances: dict) -> str:
    for key, value in residuals.items():
        tol = tolerances.get(key)
        if tol is None:
            continue
        if not (value <= tol):  # NaN fails
            return FAIL
    return PASS


def format_float(x: float) -> str:
    if math.isnan(x):
        return '"NaN"'
    if math.isinf(x):
        return '"Infinity"' if x > 0 else '"-Infinity"'
    return format(x + 0.0, ".17g")  # + 0.0 drops the sign of negative zero


def dumps(obj, indent: int = 2, _level: int = 0) -> str:
    """JSON with floats written to 17 significant digits, so reports are byte-reproducible."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, bool) or obj is None:
        return {True: "true", False: "false", None: "null"}[obj]
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        return format_float(obj)
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, np.floating):
        return format_float(float(obj))
    if isinstance(obj, np.integer):
        return str(int(obj))
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{dumps(str(k))}: {dumps(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in obj):
            return "[" + ", ".join(dumps(v) for v in obj) + "]"
        items = [pad + dumps(v, indent, _level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    if hasattr(obj, "to_dict"):
        return dumps(obj.to_dict(), indent, _level)
    if hasattr(obj, "tolist"):
        return dumps(obj.tolist(), indent, _level)
    raise TypeError(f"cannot serialise {type(obj).__name__}")

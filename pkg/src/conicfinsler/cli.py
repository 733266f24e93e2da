"""Command-line front end: inspect objects, run checks, trace geodesics.

Usage::

    conicfinsler inspect --scenario example_3_12 --count 5 --seed 42
    conicfinsler check --scenario example_4_10 --checks projective_flatness,dual_flatness
    conicfinsler geodesic --scenario example_4_10 --points "0.1,0;1,0.2" --steps 2000 --dt 1e-3
    conicfinsler catalog

Every option can also come from a JSON config file (``--config``) using the
same names with underscores (``jet_order``) and a ``tol`` object; flags on the
command line override the file.  Exit codes: 0 when every verdict is pass or
skip, 1 on any fail, 2 on a usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import dataclass, field

import numpy as np

from . import __version__, catalog
from .conformal import CHECKS, DEFAULT_TOLERANCES, ConformalPoint, run_checks, transformed_objects
from .core import Geometry, SupportElement, vals
from .errors import DeclarationMismatchError, FinslerError
from .geodesic import geodesic_trace
from .report import FAIL, PASS, SKIP, dumps, format_float

TOL_KEYS = tuple(DEFAULT_TOLERANCES) + ("nondegeneracy",)
FORMATS = ("json", "csv", "table")
DEFAULT_COUNT = 20


class UsageError(Exception):
    """Bad flags or config; reported with exit code 2."""


@dataclass
class RunConfig:
    command: str
    scenario: str | None = None
    metric: str | None = None
    factor: str | None = None
    points: list | None = None
    count: int = DEFAULT_COUNT
    seed: int = 0
    checks: list = field(default_factory=lambda: list(CHECKS))
    tol: dict = field(default_factory=dict)
    jet_order: int = 6
    out: str | None = None
    format: str | None = None
    steps: int = 2000
    dt: float = 1e-3

    def validate(self):
        if self.count < 1:
            raise UsageError("count must be >= 1")
        if self.jet_order < 4:
            raise UsageError("jet order must be >= 4")
        conformal = self.command == "check" or (self.command == "inspect" and (self.scenario or self.factor))
        if conformal and self.jet_order < 6:
            raise UsageError("conformal formulas need jet order >= 6")
        for key, value in self.tol.items():
            if key not in TOL_KEYS:
                raise UsageError(f"unknown tolerance {key!r}; choose from {', '.join(TOL_KEYS)}")
            if not value > 0:
                raise UsageError(f"tolerance {key} must be positive")
        unknown = [c for c in self.checks if c not in CHECKS]
        if unknown:
            raise UsageError(f"unknown checks {unknown}; choose from {', '.join(CHECKS)}")
        if self.format is not None and self.format not in FORMATS:
            raise UsageError(f"format must be one of {', '.join(FORMATS)}")
        if self.steps < 1 or not self.dt > 0:
            raise UsageError("steps must be >= 1 and dt > 0")
        if self.scenario is None and self.metric is None:
            raise UsageError("give --scenario or --metric")
        if self.scenario is not None and (self.metric or self.factor):
            raise UsageError("--scenario cannot be combined with --metric/--factor")


# parsing ------------------------------------------------------------------------------


def parse_points(text) -> list:
    """``"x1,x2;y1,y2|..."`` (or a list of {"x": .., "y": ..}) into [(x, y), ...]."""
    if isinstance(text, list):
        try:
            return [(tuple(map(float, p["x"])), tuple(map(float, p["y"]))) for p in text]
        except (KeyError, TypeError, ValueError) as exc:
            raise UsageError(f"bad points entry: {exc}") from exc
    out = []
    for chunk in str(text).split("|"):
        try:
            xs, ys = chunk.split(";")
            x = tuple(float(v) for v in xs.split(","))
            y = tuple(float(v) for v in ys.split(","))
        except ValueError as exc:
            raise UsageError(f"cannot parse point {chunk!r}; expected 'x1,x2;y1,y2'") from exc
        if len(x) != 2 or len(y) != 2:
            raise UsageError(f"point {chunk!r} needs two coordinates for x and for y")
        out.append((x, y))
    if not out:
        raise UsageError("no points given")
    return out


def _split_tol_flags(argv):
    """Pull ``--tol.<name> value`` (or ``--tol.<name>=value``) out of argv."""
    rest, tol = [], {}
    it = iter(argv)
    for arg in it:
        if arg.startswith("--tol."):
            key, _, value = arg[len("--tol."):].partition("=")
            if not value:
                value = next(it, None)
                if value is None:
                    raise UsageError(f"{arg} needs a value")
            try:
                tol[key] = float(value)
            except ValueError as exc:
                raise UsageError(f"tolerance {key} must be a number") from exc
        else:
            rest.append(arg)
    return rest, tol


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="conicfinsler", description="Conformal changes of conic pseudo-Finsler surfaces.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON file with default values for the options")
    common.add_argument("--scenario")
    common.add_argument("--metric")
    common.add_argument("--factor")
    common.add_argument("--points", help="explicit support elements 'x1,x2;y1,y2|...'")
    common.add_argument("--count", type=int, help=f"random points to sample (default {DEFAULT_COUNT})")
    common.add_argument("--seed", type=int, help="sampler seed (default 0)")
    common.add_argument("--jet-order", dest="jet_order", type=int)
    common.add_argument("--out", help="output file (default stdout)")
    common.add_argument("--format", choices=FORMATS)
    sub.add_parser("inspect", parents=[common], help="print every object at each point")
    chk = sub.add_parser("check", parents=[common], help="run predicates; exit 1 on any failure",
                         epilog="tolerances: --tol.<name> VALUE with name in " + ", ".join(TOL_KEYS))
    chk.add_argument("--checks", help="comma-separated subset of " + ",".join(CHECKS))
    geo = sub.add_parser("geodesic", parents=[common], help="trace geodesics by RK4")
    geo.add_argument("--steps", type=int)
    geo.add_argument("--dt", type=float)
    sub.add_parser("catalog", help="list metrics, factors and scenarios")
    return parser


def load_config(argv) -> RunConfig:
    argv, tol_flags = _split_tol_flags(list(argv))
    args = build_parser().parse_args(argv)
    values = {}
    if getattr(args, "config", None):
        try:
            with open(args.config, encoding="utf-8") as fh:
                values = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(values, dict):
            raise UsageError("config file must hold a JSON object")
        values = {k.replace("-", "_"): v for k, v in values.items()}
    known = set(RunConfig.__dataclass_fields__) - {"command"}
    extra = set(values) - known
    if extra:
        raise UsageError(f"unknown config keys {sorted(extra)}")
    for key in known:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    tol = dict(values.get("tol") or {})
    tol.update(tol_flags)
    values["tol"] = tol
    if isinstance(values.get("checks"), str):
        values["checks"] = [c.strip() for c in values["checks"].split(",") if c.strip()]
    if values.get("points") is not None:
        values["points"] = parse_points(values["points"])
    try:
        cfg = RunConfig(command=args.command, **values)
        cfg.count, cfg.seed, cfg.jet_order, cfg.steps = int(cfg.count), int(cfg.seed), int(cfg.jet_order), int(cfg.steps)
        cfg.dt = float(cfg.dt)
        cfg.tol = {k: float(v) for k, v in cfg.tol.items()}
    except (TypeError, ValueError) as exc:
        raise UsageError(f"bad config value: {exc}") from exc
    if cfg.command != "catalog":
        cfg.validate()
    return cfg


# shared plumbing ------------------------------------------------------------------------


def _resolve(cfg: RunConfig):
    try:
        return catalog.resolve(cfg.scenario, cfg.metric, cfg.factor)
    except KeyError as exc:
        raise UsageError(str(exc.args[0]) if exc.args else str(exc)) from exc


def _support(cfg: RunConfig, metric, factor) -> SupportElement:
    if cfg.points is not None:
        return SupportElement(np.array([p[0] for p in cfg.points]), np.array([p[1] for p in cfg.points]))
    try:
        return catalog.sample_points(metric, factor, count=cfg.count, seed=cfg.seed)
    except (FinslerError, ValueError) as exc:
        raise UsageError(str(exc)) from exc


def _header(cfg: RunConfig, metric, factor) -> dict:
    head = {
        "tool": "conicfinsler",
        "version": __version__,
        "command": cfg.command,
        "scenario": cfg.scenario,
        "metric": getattr(metric, "name", None),
        "factor": getattr(factor, "name", None),
        "jet_order": cfg.jet_order,
    }
    if cfg.points is None:
        head["sampler"] = {"generator": catalog.SAMPLER, "seed": cfg.seed, "count": cfg.count}
    else:
        head["points"] = len(cfg.points)
    return head


def _point_dict(p: SupportElement) -> dict:
    return {"x": p.x.tolist(), "y": p.y.tolist()}


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    arr = np.asarray(value, dtype=float) + 0.0  # no negative zeros in reports
    return float(arr) if arr.ndim == 0 else arr.tolist()


def _flatten(prefix, value, out):
    if isinstance(value, dict):
        for k, v in value.items():
            _flatten(f"{prefix}.{k}" if prefix else k, v, out)
    elif isinstance(value, list):
        for i, v in enumerate(value):
            _flatten(f"{prefix}[{i}]", v, out)
    else:
        out[prefix] = value
    return out


def _cell(v):
    if isinstance(v, float):
        return format_float(v).strip('"')
    return "" if v is None else str(v)


def _emit(text: str, cfg: RunConfig):
    if cfg.out:
        with open(cfg.out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _csv(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([_cell(v) for v in row])
    return buf.getvalue()


# inspect ------------------------------------------------------------------------------


def _base_objects(geo: Geometry) -> dict:
    return {
        "F": geo.F.value,
        "g": vals(geo.g),
        "det_g": geo.det.value,
        "eps": geo.eps,
        "frame": {
            "ell_lo": vals(geo.ell_lo),
            "ell_hi": vals(geo.ell_hi),
            "m_lo": vals(geo.m_lo),
            "m_hi": vals(geo.m_hi),
            "h": geo.h.value,
        },
        "main_scalar": geo.main_scalar.value,
        "G": vals(geo.G),
        "G_j": vals(geo.G_j),
        "hamel": geo.hamel.value,
    }


def inspect_point(metric, factor, p: SupportElement, order: int) -> dict:
    entry = {"point": _point_dict(p)}
    try:
        if factor is None:
            geo = Geometry(metric, p, order)
            entry["objects"] = _jsonable(_base_objects(geo))
            entry["verdict"] = PASS
            return entry
        cp = ConformalPoint(metric, factor, p, order)
        entry["objects"] = _jsonable(_base_objects(cp.base))
        entry["diagnostics"] = _jsonable(cp.diagnostics().to_dict())
        t = transformed_objects(cp)
        frame = t.framebar
        entry["transformed"] = _jsonable({
            "gbar": t.gbar,
            "gbar_inv": t.gbar_inv,
            "frame": {"ell_lo": frame.ell_lo, "ell_hi": frame.ell_hi, "m_lo": frame.m_lo,
                      "m_hi": frame.m_hi, "h": frame.h},
            "Cbar": t.Cbar,
            "Ibar": t.Ibar,
            "Gbar": t.Gbar,
            "Gbar_j": t.Gbar_j,
            "Gbar_jk": t.Gbar_jk,
        })
        entry["verdict"] = PASS
    except FinslerError as exc:
        entry["verdict"] = SKIP
        entry["reason"] = f"{type(exc).__name__}: {exc}"
    return entry


def cmd_inspect(cfg: RunConfig) -> int:
    metric, factor = _resolve(cfg)
    u = _support(cfg, metric, factor)
    entries = [inspect_point(metric, factor, p, cfg.jet_order) for p in u.points()]
    fmt = cfg.format or "json"
    if fmt == "json":
        _emit(dumps({"header": _header(cfg, metric, factor), "points": entries}) + "\n", cfg)
    else:
        flat = [_flatten("", e, {}) for e in entries]
        keys = []
        for f in flat:
            keys.extend(k for k in f if k not in keys)
        if fmt == "csv":
            _emit(_csv(keys, [[f.get(k) for k in keys] for f in flat]), cfg)
        else:
            lines = []
            for i, f in enumerate(flat):
                lines.append(f"-- point {i}")
                lines.extend(f"  {k:<28} {_cell(v)}" for k, v in f.items())
            _emit("\n".join(lines) + "\n", cfg)
    return 0


# check -------------------------------------------------------------------------------


def _worst(report):
    """(name, value, ratio to tolerance) of the residual closest to failing."""
    best = ("", float("nan"), -1.0)
    for k, v in report.residuals.items():
        tol = report.tolerances.get(k)
        ratio = v / tol if tol else (0.0 if v == 0 else float("inf"))
        if ratio != ratio:
            ratio = float("inf")
        if ratio > best[2]:
            best = (k, v, ratio)
    return best


def cmd_check(cfg: RunConfig) -> int:
    metric, factor = _resolve(cfg)
    u = _support(cfg, metric, factor)
    if factor is None:
        factor = catalog.get_factor("constant")  # a homothety: every check is still meaningful
    try:
        reports = run_checks(metric, factor, u, cfg.checks, cfg.tol or None, cfg.jet_order)
    except DeclarationMismatchError as exc:
        raise UsageError(str(exc)) from exc
    counts = {PASS: 0, FAIL: 0, SKIP: 0}
    for r in reports:
        counts[r.verdict] += 1
    max_res = {}
    for r in reports:
        for k, v in r.residuals.items():
            key = f"{r.name}.{k}"
            if v == v:
                max_res[key] = max(max_res.get(key, 0.0), v)
    fmt = cfg.format or "json"
    if fmt == "json":
        doc = {
            "header": _header(cfg, metric, factor),
            "checks": cfg.checks,
            "tolerances": dict(sorted(cfg.tol.items())),
            "summary": counts,
            "max_residuals": dict(sorted(max_res.items())),
            "reports": [r.to_dict() for r in reports],
        }
        _emit(dumps(doc) + "\n", cfg)
    elif fmt == "csv":
        rows = []
        for r in reports:
            name, value, _ = _worst(r)
            rows.append([r.name, *r.point["x"], *r.point["y"], r.verdict, name, value if name else None, r.reason])
        _emit(_csv(["check", "x1", "x2", "y1", "y2", "verdict", "worst_residual", "value", "reason"], rows), cfg)
    else:
        lines = [f"{'check':<24} {'x':<26} {'y':<26} {'verdict':<7} worst residual"]
        for r in reports:
            name, value, _ = _worst(r)
            pt = lambda v: "(" + ", ".join(f"{c:.4g}" for c in v) + ")"  # noqa: E731
            detail = f"{name}={value:.3e}" if name else ""
            if r.reason:
                detail = (detail + "  " if detail else "") + r.reason
            lines.append(f"{r.name:<24} {pt(r.point['x']):<26} {pt(r.point['y']):<26} {r.verdict:<7} {detail}")
        lines.append("")
        lines.extend(f"max {k} = {v:.3e}" for k, v in sorted(max_res.items()))
        lines.append(f"summary: {counts[PASS]} pass, {counts[FAIL]} fail, {counts[SKIP]} skip")
        _emit("\n".join(lines) + "\n", cfg)
    return 1 if counts[FAIL] else 0


# geodesic ----------------------------------------------------------------------------


def cmd_geodesic(cfg: RunConfig) -> int:
    metric, factor = _resolve(cfg)
    F = catalog.transformed(metric, factor) if factor is not None else metric
    u = _support(cfg, metric, factor)
    trace = geodesic_trace(F, u, cfg.steps, cfg.dt)
    fmt = cfg.format or "csv"
    n = len(trace.x)
    if fmt == "json":
        trajs = []
        for k in range(n):
            trajs.append({
                "start": {"x": trace.x[k, 0].tolist(), "y": trace.y[k, 0].tolist()},
                "exited": bool(trace.exited[k]),
                "samples": int(trace.n_valid[k]),
                "chord_deviation": float(trace.chord_deviation[k]),
                "F_drift": float(trace.F_drift[k]),
                "rows": [list(map(float, row)) for row in trace.rows(k)],
            })
        doc = {"header": {**_header(cfg, metric, factor), "steps": cfg.steps, "dt": cfg.dt},
               "columns": ["t", "x1", "x2", "y1", "y2", "F"], "trajectories": trajs}
        _emit(dumps(doc) + "\n", cfg)
    elif fmt == "csv":
        header = ["row", "trajectory", "t", "x1", "x2", "y1", "y2", "F", "exited", "chord_deviation", "F_drift"]
        rows = []
        for k in range(n):
            flag = int(trace.exited[k])
            rows.extend(["sample", k, *row, flag, None, None] for row in trace.rows(k))
            rows.append(["summary", k, None, None, None, None, None, None, flag,
                         float(trace.chord_deviation[k]), float(trace.F_drift[k])])
        _emit(_csv(header, rows), cfg)
    else:
        lines = [f"{'trajectory':<11} {'samples':<8} {'exited':<7} {'chord deviation':<16} F drift"]
        for k in range(n):
            lines.append(f"{k:<11} {trace.n_valid[k]:<8} {str(bool(trace.exited[k])):<7} "
                         f"{trace.chord_deviation[k]:<16.3e} {trace.F_drift[k]:.3e}")
        _emit("\n".join(lines) + "\n", cfg)
    return 0


def cmd_catalog(cfg: RunConfig) -> int:
    entries = catalog.catalog_entries()
    lines = ["metrics:"]
    lines.extend(f"  {k:<18} {getattr(v, 'description', '')}" for k, v in entries["metrics"].items())
    lines.append("factors:")
    lines.extend(f"  {k:<18} {getattr(v, 'description', '')}" for k, v in entries["factors"].items())
    lines.append("scenarios:")
    lines.extend(f"  {k:<18} {v.metric} + {v.factor}" for k, v in entries["scenarios"].items())
    sys.stdout.write("\n".join(lines) + "\n")
    return 0


COMMANDS = {"inspect": cmd_inspect, "check": cmd_check, "geodesic": cmd_geodesic, "catalog": cmd_catalog}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        cfg = load_config(argv)
        return COMMANDS[cfg.command](cfg)
    except UsageError as exc:
        sys.stderr.write(f"conicfinsler: error: {exc}\n")
        return 2
    except OSError as exc:
        sys.stderr.write(f"conicfinsler: error: {exc}\n")
        return 2


if __name__ == "__main__":
    sys.exit(main())

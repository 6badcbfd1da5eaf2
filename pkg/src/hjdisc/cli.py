"""Batch command line: ``hjdisc <command> --config <path> [--out <dir>] [--set key=value ...]``.

Configs are flat UTF-8 ``key = value`` lines with dotted keys and ``#``
comments.  Every command writes its artifacts plus ``report.json`` into
``outputs.dir``; files are written at the end through a temporary name and
an atomic rename.

Exit codes: 0 success, 1 config error, 2 numerical failure, 3 verification
failure.
"""

from __future__ import annotations

import argparse
import io
import json
import logging
import math
import os
import sys
import tempfile
import time
import warnings
from dataclasses import asdict, dataclass, fields
from typing import Any, Callable

import numpy as np

from .characteristics import (
    ContactState,
    FixedPointError,
    Flow,
    MatherConfig,
    estimate_mather_average,
    find_fixed_point,
    integrate,
)
from .critical import BracketError, UndeterminedProbe, bisect_critical, nonneg_critical
from .grid import GridFn, PeriodicGrid, fmt, gradient, gridfn_to_csv, interpolate
from .model import ContactModel, DiscountSpec, HamiltonianSpec
from .rates import rate_report
from .scenarios import SCENARIOS, get_scenario, list_scenarios
from .semigroup import (
    DivergenceError,
    NoStationarySolution,
    SemigroupConfig,
    classify_longtime,
    initial_upper_constant,
    solve_stationary,
)
from .verify import CHECKS, run_checks

log = logging.getLogger("hjdisc")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_VERIFY = 0, 1, 2, 3
COMMANDS = ("solve", "critical", "rate", "orbit", "scan", "verify")


class ConfigError(ValueError):
    pass


class VerificationFailed(RuntimeError):
    def __init__(self, failed: list[str]):
        super().__init__("failed properties: " + ", ".join(failed))
        self.failed = failed


# ---------------------------------------------------------------------------
# config schema
# ---------------------------------------------------------------------------


def _str(raw: str) -> str:
    return raw.strip()


def _float(raw: str) -> float:
    v = float(raw)
    if not math.isfinite(v):
        raise ValueError("must be finite")
    return v


def _int(raw: str) -> int:
    return int(raw)


def _bool(raw: str) -> bool:
    s = raw.strip().lower()
    if s in ("1", "true", "yes", "on"):
        return True
    if s in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected true or false")


def _floats(raw: str) -> tuple[float, ...]:
    vals = tuple(_float(t) for t in raw.replace(",", " ").split())
    if not vals:
        raise ValueError("expected at least one number")
    return vals


def _pair(raw: str) -> tuple[float, float]:
    vals = _floats(raw)
    if len(vals) != 2 or not vals[0] < vals[1]:
        raise ValueError("expected two increasing numbers")
    return vals


def _names(raw: str) -> tuple[str, ...]:
    return tuple(t for t in raw.replace(",", " ").split())


@dataclass(frozen=True)
class Key:
    parse: Callable[[str], Any]
    default: Any
    check: Callable[[Any], bool] = lambda v: True
    rule: str = ""


def _positive(v) -> bool:
    return v > 0


_SG = SemigroupConfig()
SCHEMA: dict[str, Key] = {
    "scenario": Key(_str, None, lambda v: v in SCENARIOS, f"one of {sorted(SCENARIOS)}"),
    "hamiltonian.kind": Key(_str, None, lambda v: v in ("quadratic", "mechanical"), "quadratic or mechanical"),
    "hamiltonian.v": Key(_str, "zero"),
    "lambda.kind": Key(_str, None, lambda v: v in ("constant", "sine", "one-minus-cos-squared"),
                       "constant, sine or one-minus-cos-squared"),
    "lambda.value": Key(_float, 1.0),
    "c": Key(_float, 0.0),
    "grid.n": Key(_int, 512, lambda v: 8 <= v <= 1 << 20, "8 <= n <= 2^20"),
    "semigroup.dt": Key(_float, _SG.dt, _positive, "> 0"),
    "semigroup.v_max": Key(_float, _SG.v_max, _positive, "> 0"),
    "semigroup.n_v": Key(_int, _SG.n_v, lambda v: v >= 9, ">= 9"),
    "semigroup.refine_iters": Key(_int, _SG.refine_iters, lambda v: v >= 0, ">= 0"),
    "semigroup.t_max": Key(_float, _SG.t_max, _positive, "> 0"),
    "semigroup.tol": Key(_float, _SG.tol, _positive, "> 0"),
    "semigroup.M_div": Key(_float, _SG.M_div, _positive, "> 0"),
    "semigroup.method": Key(_str, _SG.method, lambda v: v in ("exact", "golden"), "exact or golden"),
    "semigroup.v_table": Key(_int, _SG.v_table, lambda v: v >= 3, ">= 3"),
    "semigroup.backend": Key(_str, "auto", lambda v: v in ("auto", "cython", "numpy"), "auto, cython or numpy"),
    "outputs.dir": Key(_str, "hjdisc_out"),
    "solve.forward": Key(_bool, False),
    "critical.method": Key(_str, "bisect", lambda v: v in ("bisect", "nonneg"), "bisect or nonneg"),
    "critical.bracket": Key(_pair, (-1.0, 1.0)),
    "critical.tol_c": Key(_float, 0.02, _positive, "> 0"),
    "rate.c_list": Key(_floats, (1.0,)),
    "rate.delta": Key(_float, 0.3, _positive, "> 0"),
    "rate.divergence_check": Key(_bool, False),
    "orbit.seeds": Key(_floats, ()),
    "orbit.t_final": Key(_float, 50.0, _positive, "> 0"),
    "orbit.dt": Key(_float, 1e-3, _positive, "> 0"),
    "orbit.record_every": Key(_int, 10, lambda v: v >= 1, ">= 1"),
    "orbit.direction": Key(_str, "Forward", lambda v: v in ("Forward", "Backward"), "Forward or Backward"),
    "orbit.fixed_point": Key(_bool, True),
    "scan.c_list": Key(_floats, (-1.0, 0.0, 1.0)),
    "scan.offset": Key(_float, 0.0),
    "verify.seed": Key(_int, 0, lambda v: v >= 0, ">= 0"),
    "verify.skip": Key(_names, (), lambda v: set(v) <= set(CHECKS), f"names from {sorted(CHECKS)}"),
}
_INLINE = ("hamiltonian.kind", "lambda.kind")


def parse_lines(lines, origin: str = "<config>") -> dict[str, str]:
    raw: dict[str, str] = {}
    for k, line in enumerate(lines, 1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ConfigError(f"{origin}:{k}: expected 'key = value'")
        key, value = (t.strip() for t in body.split("=", 1))
        if not key:
            raise ConfigError(f"{origin}:{k}: empty key")
        if key in raw:
            raise ConfigError(f"{origin}:{k}: duplicate key {key!r}")
        raw[key] = value
    return raw


def resolve(raw: dict[str, str]) -> dict[str, Any]:
    """Typed, validated config with every default filled in."""
    unknown = sorted(set(raw) - set(SCHEMA))
    if unknown:
        raise ConfigError(f"unknown keys {unknown}")
    out = {}
    for key, spec in SCHEMA.items():
        if key not in raw:
            out[key] = spec.default
            continue
        try:
            value = spec.parse(raw[key])
        except ValueError as exc:
            raise ConfigError(f"{key} = {raw[key]!r}: {exc}") from None
        if not spec.check(value):
            raise ConfigError(f"{key} = {raw[key]!r}: must be {spec.rule}")
        out[key] = value
    inline = [k for k in _INLINE if out[k] is not None]
    if out["scenario"] is None and len(inline) != len(_INLINE):
        raise ConfigError("set either 'scenario' or both 'hamiltonian.kind' and 'lambda.kind'")
    if out["scenario"] is not None and (inline or "hamiltonian.v" in raw or "lambda.value" in raw):
        raise ConfigError("'scenario' cannot be combined with an inline model")
    if out["hamiltonian.kind"] == "quadratic" and "hamiltonian.v" in raw:
        raise ConfigError("hamiltonian.v only applies to hamiltonian.kind = mechanical")
    return out


def load_config(path: str | None, overrides: list[str]) -> dict[str, Any]:
    raw: dict[str, str] = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                raw = parse_lines(fh, path)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = (t.strip() for t in item.split("=", 1))
        raw[key] = value
    return resolve(raw)


def build_family(conf: dict[str, Any]) -> Callable[[float], ContactModel]:
    if conf["scenario"] is not None:
        return get_scenario(conf["scenario"]).model
    if conf["hamiltonian.kind"] == "quadratic":
        h = HamiltonianSpec.quadratic()
    else:
        try:
            h = HamiltonianSpec.mechanical(conf["hamiltonian.v"])
        except ValueError as exc:
            raise ConfigError(f"hamiltonian.v: {exc}") from None
    lam = {
        "constant": lambda: DiscountSpec.constant(conf["lambda.value"]),
        "sine": DiscountSpec.sine,
        "one-minus-cos-squared": DiscountSpec.one_minus_cos_squared,
    }[conf["lambda.kind"]]()
    return lambda c: ContactModel(h, lam, float(c), "inline")


def semigroup_config(conf: dict[str, Any]) -> SemigroupConfig:
    kw = {f.name: conf[f"semigroup.{f.name}"] for f in fields(SemigroupConfig)}
    if kw["backend"] == "auto":
        kw["backend"] = None
    try:
        return SemigroupConfig(**kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


# ---------------------------------------------------------------------------
# output
# ---------------------------------------------------------------------------


def jsonable(obj):
    """Plain JSON types; floats at 17 significant digits, infinities as strings."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        if math.isnan(v):
            return None
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return float(fmt(v))
    if obj is None or isinstance(obj, str):
        return obj
    if hasattr(obj, "value"):  # enums
        return obj.value
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def dump_json(obj) -> str:
    return json.dumps(jsonable(obj), indent=2, sort_keys=True) + "\n"


def write_atomic(directory: str, name: str, text: str) -> str:
    path = os.path.join(directory, name)
    fd, tmp = tempfile.mkstemp(prefix=f".{name}.", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


class NumericalFailure(RuntimeError):
    """Raised after partial results are recorded, so the files still get written."""


# ---------------------------------------------------------------------------
# commands; each returns (results, {file name: text})
# ---------------------------------------------------------------------------


def _grid(conf) -> PeriodicGrid:
    return PeriodicGrid(conf["grid.n"])


def cmd_solve(conf, family, cfg):
    grid = _grid(conf)
    m = family(conf["c"])
    files, results = {}, {}
    sol = solve_stationary(m, "Backward", cfg, grid)
    files["u_minus.csv"] = gridfn_to_csv(sol.u, header=("x", "u"))
    files["u_minus.json"] = dump_json(sol.sidecar())
    results["u_minus"] = {**sol.sidecar(), "min": sol.u.values.min(), "max": sol.u.values.max(),
                          "upper_constant": initial_upper_constant(m), "converged": sol.residual < cfg.tol}
    if conf["solve.forward"]:
        fwd = solve_stationary(m, "Forward", cfg, grid)
        files["v_plus.csv"] = gridfn_to_csv(fwd.u, header=("x", "u"))
        files["v_plus.json"] = dump_json(fwd.sidecar())
        results["v_plus"] = {**fwd.sidecar(), "min": fwd.u.values.min(), "max": fwd.u.values.max()}
    return results, files


def cmd_critical(conf, family, cfg):
    grid = _grid(conf)
    if conf["critical.method"] == "nonneg":
        rep = nonneg_critical(family(conf["c"]), cfg, grid)
    else:
        rep = bisect_critical(family, conf["critical.bracket"], conf["critical.tol_c"], cfg, grid)
    text = rep.to_json()
    return json.loads(text), {"critical.json": text}


def cmd_rate(conf, family, cfg):
    rep = rate_report(family, conf["rate.c_list"], cfg, conf["rate.delta"], _grid(conf),
                      divergence_check=conf["rate.divergence_check"])
    results = rep.to_dict()
    files = {"rates.csv": rep.to_csv(), "rates.json": rep.to_json()}
    if not rep.flags["all_rows_ok"]:
        failed = [r.flags for r in rep.rows if not r.ok]
        return results, files, NumericalFailure(f"rate rows failed: {failed}")
    return results, files


def cmd_orbit(conf, family, cfg):
    grid = _grid(conf)
    m = family(conf["c"])
    sol = solve_stationary(m, "Backward", cfg, grid)
    files = {"u_minus.csv": gridfn_to_csv(sol.u, header=("x", "u"))}
    results: dict[str, Any] = {"u_minus_residual": sol.residual}
    est = estimate_mather_average(m, sol)
    files["mather.json"] = est.to_json()
    results["mather"] = {"a_hat": est.a_hat, "source": est.source,
                         "fixed_points": [asdict(f.state) for f in est.fixed_points]}
    du = gradient(sol.u)
    orbits = []
    for k, x0 in enumerate(conf["orbit.seeds"]):
        s = ContactState(x0, float(interpolate(du, x0)), float(interpolate(sol.u, x0)))
        rec = integrate(m, s, conf["orbit.t_final"], conf["orbit.dt"], Flow(conf["orbit.direction"]),
                        conf["orbit.record_every"])
        name = f"orbit_{k:03d}.csv"
        files[name] = rec.to_csv()
        entry = {"file": name, "seed": asdict(s), "final": asdict(rec.final), "escaped": rec.escaped,
                 "lambda_avg": rec.lambda_avg[-1]}
        if conf["orbit.fixed_point"]:
            try:
                fp = find_fixed_point(m, rec.final, MatherConfig().newton_tol)
                entry["fixed_point"] = asdict(fp)
            except FixedPointError as exc:
                entry["fixed_point"] = None
                entry["fixed_point_error"] = str(exc)
        orbits.append(entry)
    results["orbits"] = orbits
    return results, files


def cmd_scan(conf, family, cfg):
    grid = _grid(conf)
    rows = []
    for c in conf["scan.c_list"]:
        m = family(c)
        phi = GridFn.constant(grid, initial_upper_constant(m) + conf["scan.offset"])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            cl = classify_longtime(m, phi, cfg)
        rows.append({"c": c, "class": cl.kind.value, "t_end": cl.t_end})
    buf = io.StringIO()
    buf.write("c,class,t_end\n")
    for r in rows:
        buf.write(f"{fmt(r['c'])},{r['class']},{fmt(r['t_end'])}\n")
    return {"rows": rows}, {"scan.csv": buf.getvalue()}


def cmd_verify(conf, family, cfg):
    res = run_checks(family(conf["c"]), cfg, _grid(conf), conf["verify.seed"], conf["verify.skip"])
    results = {"properties": [r.to_dict() for r in res],
               "failed": [r.name for r in res if r.passed is False]}
    files = {"verify.json": dump_json(results)}
    if results["failed"]:
        return results, files, VerificationFailed(results["failed"])
    return results, files


HANDLERS = {"solve": cmd_solve, "critical": cmd_critical, "rate": cmd_rate,
            "orbit": cmd_orbit, "scan": cmd_scan, "verify": cmd_verify}


def run_scenario(command: str, conf: dict[str, Any]) -> int:
    """Run one command, write its files and ``report.json``, return the exit status."""
    if command not in HANDLERS:
        raise ConfigError(f"unknown command {command!r}; expected one of {COMMANDS}")
    family = build_family(conf)
    cfg = semigroup_config(conf)
    out_dir = conf["outputs.dir"]
    t0 = time.perf_counter()
    status, error = EXIT_OK, None
    try:
        ret = HANDLERS[command](conf, family, cfg)
        results, files = ret[0], ret[1]
        if len(ret) == 3:
            exc = ret[2]
            status = EXIT_VERIFY if isinstance(exc, VerificationFailed) else EXIT_NUMERICAL
            error = str(exc)
    except (NoStationarySolution, DivergenceError, FixedPointError, UndeterminedProbe, BracketError,
            ArithmeticError, RuntimeError) as exc:
        results, files = {}, {}
        status, error = EXIT_NUMERICAL, f"{type(exc).__name__}: {exc}"
    wall = time.perf_counter() - t0
    report = {"command": command, "config": conf, "results": results, "wall_time": wall,
              "status": status, "error": error, "files": sorted(files)}
    try:
        os.makedirs(out_dir, exist_ok=True)
        for name in sorted(files):
            write_atomic(out_dir, name, files[name])
        write_atomic(out_dir, "report.json", dump_json(report))
    except OSError as exc:
        raise ConfigError(f"cannot write outputs to {out_dir!r}: {exc}") from None
    if error:
        log.error("%s", error)
    return status


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="hjdisc", description="Discounted Hamilton-Jacobi equations on the circle.")
    ap.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("scenarios", help="list the built-in scenarios")
    for name in COMMANDS:
        p = sub.add_parser(name, help=f"run the {name} command")
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--out", help="output directory (overrides outputs.dir)")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
    return ap


def main(argv: list[str] | None = None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "scenarios":
        for s in list_scenarios():
            print(f"{s['name']:16s} {s['description']}")
        return EXIT_OK
    try:
        overrides = list(args.set)
        if args.out is not None:
            overrides.append(f"outputs.dir={args.out}")
        conf = load_config(args.config, overrides)
        status = run_scenario(args.command, conf)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if status == EXIT_OK:
        print(os.path.join(conf["outputs.dir"], "report.json"))
    return status


if __name__ == "__main__":
    sys.exit(main())

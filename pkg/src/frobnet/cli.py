"""Command line entry point.

Exit codes: 0 success, 1 training failure, 2 bad configuration or input,
3 infeasible budget, 4 certificate violation, 5 inconsistent oracle.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import math
import os
import sys
import time
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import (
    BudgetInfeasible,
    CertificateViolation,
    ConfigError,
    OracleInconsistency,
    ParseError,
    RejectedInput,
    TrainingFailure,
)

EXIT_OK = 0
EXIT_TRAINING = 1
EXIT_CONFIG = 2
EXIT_BUDGET = 3
EXIT_CERTIFICATE = 4
EXIT_ORACLE = 5

COMMANDS = ("compile-holder", "compile-dag", "verify", "rate-sweep", "erm-sweep", "report")

_COMMON = {"command", "target", "output", "seed"}
_PROBES = {"probe_kind", "probe_count"}
ALLOWED_KEYS = {
    "compile-holder": _COMMON | _PROBES | {"k", "K", "max_weights"},
    "compile-dag": _COMMON | _PROBES | {"K", "max_weights", "k_overrides"},
    "verify": _COMMON | _PROBES | {"network"},
    "rate-sweep": _COMMON | _PROBES | {"budgets", "max_weights"},
    "erm-sweep": _COMMON | {"ns", "seeds", "width", "depth", "K_constant", "optimizer"},
    "report": {"command", "run", "output"},
}
_OPTIMIZER_KEYS = {"batch", "lr", "decay", "epochs", "test_size", "mc_count"}

# primitive name -> (reference, box, error bound as a function of k)
_PRIMITIVE_CHECKS = {
    "square": (lambda x: x[:, 0] ** 2, ((0.0, 1.0),), lambda k: 1.0 / (2 * k * k)),
    "product": (lambda x: x[:, 0] * x[:, 1], ((-1.0, 1.0),) * 2, lambda k: 3.0 / k ** 2),
    "monomial-d3": (lambda x: np.prod(x, axis=1), ((-1.0, 1.0),) * 3, lambda k: 18.0 / k ** 2),
}


# ----------------------------------------------------------------- output

def _plain(obj):
    """JSON-ready copy with a stable representation of every value."""
    if dataclasses.is_dataclass(obj) and not isinstance(obj, type):
        return {f.name: _plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, Fraction):
        return str(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if obj is None or isinstance(obj, (bool, int, str)):
        return obj
    return str(obj)


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _write_csv(path: Path, rows: list[dict], columns: list[str]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_cell(row.get(c)) for c in columns])
    path.write_text(buf.getvalue(), encoding="utf-8")


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (dict, list, tuple)):
        return json.dumps(_plain(v), sort_keys=True)
    return "" if v is None else str(v)


def _write_timings(out: Path, seconds: float) -> None:
    (out / "timings.csv").write_text(f"step,seconds\nrun,{seconds:.3f}\n", encoding="utf-8")


# ----------------------------------------------------------------- config

def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    return data


def resolve_config(command: str, file_cfg: dict, flags: dict) -> dict:
    """Merge a config file with command-line flags (flags win) and validate keys."""
    if file_cfg.get("command", command) != command:
        raise ConfigError(f"config is for {file_cfg['command']!r}, not {command!r}")
    cfg = dict(file_cfg)
    cfg.update({k: v for k, v in flags.items() if v is not None})
    cfg["command"] = command
    unknown = sorted(set(cfg) - ALLOWED_KEYS[command])
    if unknown:
        raise ConfigError(f"unknown config keys for {command}: {', '.join(unknown)}")
    opt = cfg.get("optimizer", {})
    if not isinstance(opt, dict) or set(opt) - _OPTIMIZER_KEYS:
        raise ConfigError(f"optimizer block accepts only {sorted(_OPTIMIZER_KEYS)}")
    cfg.setdefault("seed", 0)
    if not isinstance(cfg["seed"], int):
        raise ConfigError("seed must be an integer")
    return cfg


def output_dir(cfg: dict) -> Path:
    root = Path(os.environ.get("FROBNET_OUTPUT_ROOT", "."))
    if cfg.get("output"):
        p = Path(cfg["output"])
    elif cfg["command"] == "report":
        return Path(_require(cfg, "run")).resolve()
    elif cfg["command"] == "verify":
        p = Path("runs") / f"verify-{Path(str(_require(cfg, 'network'))).resolve().parent.name}"
    else:
        name = Path(str(cfg.get("target", "run"))).stem
        p = Path("runs") / f"{cfg['command']}-{name}"
    return (p if p.is_absolute() else root / p).resolve()


def _require(cfg: dict, key: str):
    if cfg.get(key) is None:
        raise ConfigError(f"{cfg['command']} needs {key!r}")
    return cfg[key]


def _probe_plan(cfg: dict, box, default_count: int):
    from .verify import ProbePlan

    kind = cfg.get("probe_kind") or ("uniform_grid" if len(box) <= 2 else "low_discrepancy")
    return ProbePlan(kind, int(cfg.get("probe_count") or default_count), int(cfg["seed"]), tuple(box))


# ---------------------------------------------------------------- targets

def _holder_target(name: str):
    from .gallery import GALLERY, gallery_entry
    from .oracles import builtin_oracle

    if name in GALLERY or name.startswith("holder-"):
        entry = gallery_entry(name)
        if entry.kind != "holder":
            raise ConfigError(f"{name!r} is not a Hölder target")
        return entry.build()
    data = _load_config(name)
    allowed = {"oracle", "dim", "alpha", "params"}
    if set(data) - allowed or "oracle" not in data:
        raise ConfigError(f"target file keys must be among {sorted(allowed)} and include 'oracle'")
    return builtin_oracle(data["oracle"], int(data.get("dim", 1)), float(data.get("alpha", 2.0)),
                          **data.get("params", {}))


def _dag_target(name: str):
    from .dag_compiler import load_dag_spec
    from .gallery import GALLERY

    if name in GALLERY:
        if GALLERY[name].kind != "dag":
            raise ConfigError(f"{name!r} is not a DAG target")
        return GALLERY[name].build()
    if not Path(name).is_file():
        raise ConfigError(f"unknown target {name!r}")
    return load_dag_spec(name)


# --------------------------------------------------------------- commands

def _compile_holder(cfg: dict, out: Path) -> dict:
    from .gallery import GALLERY
    from .holder_compiler import DEFAULT_MAX_WEIGHTS, compile_holder, compile_holder_for_budget
    from .net_ir import serialize
    from .verify import audit_norms, sup_error

    target = str(_require(cfg, "target"))
    cap = int(cfg.get("max_weights") or DEFAULT_MAX_WEIGHTS)
    if target in _PRIMITIVE_CHECKS:
        ref, box, bound_fn = _PRIMITIVE_CHECKS[target]
        k = int(_require(cfg, "k"))
        net, cert = GALLERY[target].build(k=k).build()
        bound = bound_fn(k)
        summary = {"target": target, "k": k}
    else:
        oracle = _holder_target(target)
        if cfg.get("k") is not None:
            res = compile_holder(oracle, int(cfg["k"]), cap)
        elif cfg.get("K") is not None:
            res = compile_holder_for_budget(oracle, float(cfg["K"]), cap)
        else:
            raise ConfigError("compile-holder needs 'k' or 'K'")
        net, cert, bound, ref = res.network, res.certificate, res.error_bound, oracle
        box = oracle.domain
        summary = {"target": target, "k": res.chosen_k, "N": res.chosen_N, "nominal_error_bound": res.nominal_error_bound,
                   "rate_exponent": res.rate_exponent, "holder_norm_bound": res.holder_norm_bound}
    audit = audit_norms(net, cert)
    se = sup_error(net, ref, _probe_plan(cfg, box, 2001 if len(box) == 1 else 4096))
    summary.update(kappa=cert.kappa, budget=cert.budget, nominal_kappa_bound=cert.nominal_bound, depth=net.depth,
                   width=net.width, nnz=net.nnz, error_bound=bound, measured_error=se.value,
                   argmax=se.argmax, n_probes=se.n_probes, audit_violations=len(audit.violations))
    (out / "network.json").write_bytes(serialize(net, cert, {"target": target, "error_bound": bound}))
    _write_json(out / "summary.json", summary)
    _check(audit.ok and cert.satisfied, "norm audit failed")
    _check(se.value <= bound, f"measured error {se.value:.6g} exceeds bound {bound:.6g}")
    return summary


def _compile_dag(cfg: dict, out: Path) -> dict:
    from .dag_compiler import compile_dag
    from .holder_compiler import DEFAULT_MAX_WEIGHTS
    from .net_ir import serialize
    from .verify import audit_norms, sup_error

    spec = _dag_target(str(_require(cfg, "target")))
    K = float(_require(cfg, "K"))
    res = compile_dag(spec, K, cfg.get("k_overrides"), int(cfg.get("max_weights") or DEFAULT_MAX_WEIGHTS))
    rc = res.rate_certificate
    box = ((-spec.input_range, spec.input_range),) * spec.input_dim
    se = sup_error(res.network, spec.reference, _probe_plan(cfg, box, 1024))
    audit = audit_norms(res.network, res.certificate)
    rows = [dict(node=v, **_plain(nr)) for v, nr in sorted(rc.per_node.items())]
    _write_csv(out / "nodes.csv", rows, ["node"] + [f.name for f in dataclasses.fields(type(next(iter(rc.per_node.values()))))])
    summary = {"target": spec.name, "K": K, "kappa": res.certificate.kappa, "depth": rc.depth_D, "width": rc.width_W,
               "nnz": res.network.nnz, "worst_case_rate_exponent": rc.worst_case_rate_exponent,
               "total_error_bound": rc.total_error_bound, "aggregate_error_bound": rc.aggregate_error_bound,
               "measured_error": se.value, "argmax": se.argmax, "node_k": res.allocation.node_k,
               "audit_violations": len(audit.violations)}
    meta = {"target": spec.name, "error_bound": rc.total_error_bound}
    (out / "network.json").write_bytes(serialize(res.network, res.certificate, meta))
    _write_json(out / "summary.json", summary)
    _check(audit.ok and res.certificate.kappa <= K * (1 + 1e-12), "norm audit failed")
    _check(se.value <= rc.total_error_bound, "measured error exceeds the certified bound")
    return summary


def _verify(cfg: dict, out: Path) -> dict:
    from .net_ir import deserialize
    from .verify import audit_norms, sup_error

    path = Path(_require(cfg, "network"))
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read network file: {exc}") from None
    try:
        net, cert, meta = deserialize(raw)
    except ParseError as exc:
        raise CertificateViolation(f"network file is corrupt: {exc}") from None
    audit = audit_norms(net, cert)
    rows = [{"layer": i, "recomputed": a, "certified": b}
            for i, (a, b) in enumerate(zip(audit.layer_norms, cert.per_layer_augmented_norms))]
    rows.append({"layer": "final", "recomputed": audit.final_norm, "certified": cert.final_norm})
    rows.append({"layer": "kappa", "recomputed": audit.kappa, "certified": cert.kappa})
    _write_csv(out / "audit.csv", rows, ["layer", "recomputed", "certified"])
    summary = {"network": path.name, "kappa": audit.kappa, "budget": cert.budget, "violations": audit.violations}
    target = cfg.get("target") or meta.get("target")
    if target and meta.get("error_bound") is not None:
        ref, box = _reference_for(str(target))
        se = sup_error(net, ref, _probe_plan(cfg, box, 1024))
        summary.update(target=target, measured_error=se.value, error_bound=meta["error_bound"])
        _write_json(out / "summary.json", summary)
        _check(audit.ok, f"{len(audit.violations)} norm violations")
        _check(se.value <= float(meta["error_bound"]), "measured error exceeds the recorded bound")
        return summary
    _write_json(out / "summary.json", summary)
    _check(audit.ok, f"{len(audit.violations)} norm violations")
    return summary


def _reference_for(target: str):
    from .gallery import GALLERY

    if target in _PRIMITIVE_CHECKS:
        ref, box, _ = _PRIMITIVE_CHECKS[target]
        return ref, box
    if target in GALLERY and GALLERY[target].kind == "dag":
        spec = GALLERY[target].build()
        return spec.reference, ((-spec.input_range, spec.input_range),) * spec.input_dim
    oracle = _holder_target(target)
    return oracle, oracle.domain


def _rate_sweep(cfg: dict, out: Path) -> dict:
    from .gallery import GALLERY
    from .holder_compiler import DEFAULT_MAX_WEIGHTS
    from .verify import rate_sweep

    target = str(_require(cfg, "target"))
    budgets = _require(cfg, "budgets")
    if not isinstance(budgets, list) or len(budgets) < 3:
        raise ConfigError("rate-sweep needs at least 3 budgets")
    dag = (target in GALLERY and GALLERY[target].kind == "dag") or (
        target not in GALLERY and target.endswith(".json") and "levels" in _load_config(target))
    tgt = _dag_target(target) if dag else _holder_target(target)
    box = (((-tgt.input_range, tgt.input_range),) * tgt.input_dim) if dag else tgt.domain
    plan = _probe_plan(cfg, box, 1024 if dag else (2001 if len(box) == 1 else 1681))
    res = rate_sweep(tgt, [float(b) for b in budgets], plan, int(cfg.get("max_weights") or DEFAULT_MAX_WEIGHTS))
    rows = [{"K": p.K, "k": p.k, "measured_error": p.measured_error, "certified_bound": p.certified_bound,
             "kappa": p.kappa} for p in res.points]
    _write_csv(out / "sweep.csv", rows, ["K", "k", "measured_error", "certified_bound", "kappa"])
    summary = {"target": target, "fitted_slope": res.fitted_slope,
               "theoretical_exponent": res.theoretical_exponent, "monotone": res.monotone,
               "dominated": res.dominated, "notes": res.notes}
    _write_json(out / "summary.json", summary)
    _check(res.dominated, "a measured error exceeds its certified bound")
    return summary


def _erm_sweep(cfg: dict, out: Path) -> dict:
    from .stats_lab import OptimizerConfig, erm_sweep, schedule_exponent

    spec = _dag_target(str(_require(cfg, "target")))
    ns = [int(n) for n in _require(cfg, "ns")]
    seeds = [int(s) for s in cfg.get("seeds") or [cfg["seed"]]]
    opt = OptimizerConfig(seed=int(cfg["seed"]), **cfg.get("optimizer", {}))
    rows = erm_sweep(spec, ns, seeds, opt, cfg.get("width"), cfg.get("depth"), float(cfg.get("K_constant", 1.0)))
    cols = ["n", "seed", "K", "W", "D", "empirical_risk", "test_risk", "excess", "stderr"]
    _write_csv(out / "erm.csv", rows, cols)
    summary = {"target": spec.name, "schedule_exponent": schedule_exponent(spec), "ns": ns, "seeds": seeds,
               "median_excess": {str(n): float(np.median([r["excess"] for r in rows if r["n"] == n])) for n in ns}}
    _write_json(out / "summary.json", summary)
    return summary


def _read_csv(path: Path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def render_report(run: Path) -> str:
    """Plain-text tables built from the CSVs and summaries in ``run``."""
    parts = []
    summary = {}
    if (run / "summary.json").is_file():
        summary = json.loads((run / "summary.json").read_text(encoding="utf-8"))
    if (run / "sweep.csv").is_file():
        rows = _read_csv(run / "sweep.csv")
        parts.append("rate sweep")
        parts.append(f"{'K':>12} {'k':>14} {'measured':>12} {'certified':>12}")
        for r in rows:
            parts.append(f"{float(r['K']):12.4g} {r['k']:>14} {float(r['measured_error']):12.4g} "
                         f"{float(r['certified_bound']):12.4g}")
        if "fitted_slope" in summary:
            parts.append(f"fitted_slope {summary['fitted_slope']:.6f}   "
                         f"theoretical_exponent {summary['theoretical_exponent']:.6f}")
        parts.append("")
    if (run / "erm.csv").is_file():
        rows = _read_csv(run / "erm.csv")
        parts.append("excess risk")
        parts.append(f"{'n':>8} {'seed':>6} {'K':>10} {'excess':>12} {'stderr':>12}")
        for r in rows:
            parts.append(f"{int(r['n']):8d} {int(r['seed']):6d} {float(r['K']):10.4g} "
                         f"{float(r['excess']):12.4g} {float(r['stderr']):12.4g}")
        parts.append("")
    if not parts:
        raise ConfigError(f"{run} holds no sweep.csv or erm.csv")
    return "\n".join(parts)


def _report(cfg: dict, out: Path) -> dict:
    run = Path(_require(cfg, "run"))
    if not run.is_dir():
        raise ConfigError(f"run directory {run} does not exist")
    text = render_report(run)
    (out / "report.txt").write_text(text, encoding="utf-8")
    return {"report": str(out / "report.txt")}


def _check(ok: bool, message: str) -> None:
    if not ok:
        raise CertificateViolation(message)


_HANDLERS = {
    "compile-holder": _compile_holder,
    "compile-dag": _compile_dag,
    "verify": _verify,
    "rate-sweep": _rate_sweep,
    "erm-sweep": _erm_sweep,
    "report": _report,
}


# ------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="frobnet", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="JSON file with the run configuration")
        s.add_argument("--output", "-o", help="output directory")
        if name == "report":
            s.add_argument("run", nargs="?", help="directory of a finished sweep")
            continue
        s.add_argument("--target", "-t", help="gallery name or JSON file")
        s.add_argument("--seed", type=int)
        if name in ("compile-holder", "compile-dag", "verify", "rate-sweep"):
            s.add_argument("--probe-kind", dest="probe_kind", choices=["uniform_grid", "low_discrepancy"])
            s.add_argument("--probe-count", dest="probe_count", type=int)
        if name == "compile-holder":
            s.add_argument("--k", type=int)
        if name in ("compile-holder", "compile-dag"):
            s.add_argument("--K", type=float)
            s.add_argument("--max-weights", dest="max_weights", type=int)
        if name == "verify":
            s.add_argument("--network", help="serialized network file")
        if name == "rate-sweep":
            s.add_argument("--budgets", type=float, nargs="+")
            s.add_argument("--max-weights", dest="max_weights", type=int)
        if name == "erm-sweep":
            s.add_argument("--ns", type=int, nargs="+")
            s.add_argument("--seeds", type=int, nargs="+")
            s.add_argument("--width", type=int)
            s.add_argument("--depth", type=int)
    return p


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    try:
        cfg = resolve_config(args.command, _load_config(args.config), flags)
        out = output_dir(cfg)
        out.mkdir(parents=True, exist_ok=True)
        t0 = time.perf_counter()
        summary = _HANDLERS[args.command](cfg, out)
        if args.command != "report":
            _write_timings(out, time.perf_counter() - t0)
    except (ConfigError, RejectedInput, ParseError) as exc:
        return _fail(EXIT_CONFIG, exc)
    except BudgetInfeasible as exc:
        return _fail(EXIT_BUDGET, exc)
    except CertificateViolation as exc:
        return _fail(EXIT_CERTIFICATE, exc)
    except OracleInconsistency as exc:
        return _fail(EXIT_ORACLE, exc)
    except TrainingFailure as exc:
        return _fail(EXIT_TRAINING, exc)
    print(json.dumps(_plain(summary), sort_keys=True))
    return EXIT_OK


def _fail(code: int, exc: Exception) -> int:
    print(f"frobnet: {exc}", file=sys.stderr)
    return code


def main() -> None:
    sys.exit(run())

"""Batch front-end: JSON config in, CSV table + JSON summary out.

Every command writes ``<output_dir>/<command>.csv`` and
``<command>.summary.json``; the summary embeds the fully resolved config so
that re-running from it reproduces the CSV byte-for-byte.  Exit codes:
0 all asserted checks passed, 1 a check failed, 2 config error, 3 runtime
failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np
from scipy.stats import norm

from . import diagnostics, montecarlo, quadrature
from .errors import ConfigError, MilsteinMdpError, ResidualTooLarge
from .model import (
    SamplingGrid,
    builtin_model,
    builtin_test_function,
    validate_assumptions,
)
from .montecarlo import config_hash, format_float
from .scheme import ChainConfig, InitialState

COMMANDS = (
    "validate", "stein", "simulate", "clt", "tails", "order", "drift",
    "bridge", "curves",
)

_SECTION_KEYS = {
    "model": {"id", "params"},
    "h": {"id", "params"},
    "stein": {"X", "n_grid", "tolerance"},
    "initial_state": {"kind", "value", "mean", "std"},
    "grid": {"bounds", "n_points", "n_pairs", "seed"},
}

# key -> (required for, allowed for); "eta" may be a number or a list
_COMMAND_KEYS = {
    "model": (COMMANDS, COMMANDS),
    "output_dir": (COMMANDS, COMMANDS),
    "master_seed": ((), COMMANDS),
    "workers": ((), COMMANDS),
    "h": (
        ("stein", "simulate", "clt", "tails", "bridge", "curves"),
        ("stein", "simulate", "clt", "tails", "bridge", "curves"),
    ),
    "scheme": ((), ("simulate", "clt", "tails", "curves")),
    "initial_state": ((), ("simulate", "clt", "tails", "curves")),
    "stein": ((), ("stein", "simulate", "clt", "tails", "bridge", "curves")),
    "eta": (
        ("simulate", "clt", "tails", "drift", "curves", "order", "bridge"),
        ("simulate", "clt", "tails", "drift", "curves", "order", "bridge"),
    ),
    "steps": ((), ("simulate", "clt", "tails", "curves")),
    "replicas": (
        ("simulate", "clt", "tails", "curves"),
        ("simulate", "clt", "tails", "curves"),
    ),
    "grid": ((), ("validate",)),
    "xs": (("tails",), ("tails",)),
    "horizon": ((), ("order",)),
    "paths": (("order",), ("order",)),
    "eta_ref": ((), ("order",)),
    "theta0": ((), ("order",)),
    "probe_states": ((), ("drift",)),
    "inner": (("drift",), ("drift",)),
    "chain_len": (("bridge",), ("bridge",)),
    "burn_frac": ((), ("bridge",)),
    "n_batches": ((), ("bridge",)),
    "noise_floor": ((), ("bridge",)),
    "stderr_factor": ((), ("bridge",)),
    "ys": ((), ("curves",)),
    "statistics": ((), ("curves",)),
    "min_hits": ((), ("curves",)),
}

_DEFAULTS = {
    "master_seed": 0,
    "workers": 1,
    "scheme": "milstein",
    "steps": None,
    "initial_state": {"kind": "point", "value": 0.0},
    "stein": {"X": None, "n_grid": quadrature.DEFAULT_GRID_SIZE,
              "tolerance": quadrature.DEFAULT_TOLERANCE},
    "grid": {"bounds": [-10.0, 10.0], "n_points": 10000, "n_pairs": 10000, "seed": 0},
    "horizon": 1.0,
    "eta_ref": None,
    "theta0": 1.0,
    "probe_states": {"lo": -10.0, "hi": 10.0, "count": 50},
    "burn_frac": 0.1,
    "n_batches": 50,
    "noise_floor": 0.0,
    "stderr_factor": 3.0,
    "ys": None,
    "statistics": list(diagnostics.CURVE_STATISTICS),
    "min_hits": 50,
}


def _fail(msg, key=None):
    raise ConfigError(msg, key=key)


def _check_section(name, value):
    if not isinstance(value, dict):
        _fail(f"section {name!r} must be an object", key=name)
    allowed = _SECTION_KEYS[name]
    for k in value:
        if k not in allowed:
            _fail(f"unknown key {name}.{k!r}", key=f"{name}.{k}")


def resolve_config(command: str, raw: dict) -> dict:
    """Validate the raw config for a command and fill defaults."""
    if command not in COMMANDS:
        _fail(f"unknown command {command!r}")
    if not isinstance(raw, dict):
        _fail("config root must be a JSON object")
    cfg = dict(raw)
    for key in cfg:
        if key not in _COMMAND_KEYS:
            _fail(f"unknown key {key!r}", key=key)
        _, allowed = _COMMAND_KEYS[key]
        if command not in allowed:
            _fail(f"key {key!r} is not accepted by command {command!r}", key=key)
    for key, (required, _) in _COMMAND_KEYS.items():
        if command in required and key not in cfg:
            _fail(f"command {command!r} requires key {key!r}", key=key)
    for key, default in _DEFAULTS.items():
        _, allowed = _COMMAND_KEYS.get(key, ((), ()))
        if command not in allowed:
            continue
        if key not in cfg:
            cfg[key] = json.loads(json.dumps(default))
        elif isinstance(default, dict) and isinstance(cfg[key], dict):
            # partial sections (e.g. from --set) keep defaults for missing keys
            for sub, sub_default in default.items():
                cfg[key].setdefault(sub, json.loads(json.dumps(sub_default)))

    for section in ("model", "h", "stein", "initial_state", "grid"):
        if section in cfg:
            _check_section(section, cfg[section])
    if "model" in cfg and "id" not in cfg["model"]:
        _fail("model.id is required", key="model.id")
    if "h" in cfg and "id" not in cfg["h"]:
        _fail("h.id is required", key="h.id")

    if "eta" in cfg:
        eta = cfg["eta"]
        etas = eta if isinstance(eta, list) else [eta]
        if not etas:
            _fail("eta list must be nonempty", key="eta")
        for e in etas:
            if not isinstance(e, (int, float)) or not (0.0 < float(e) < 1.0):
                _fail(f"eta must lie in (0, 1), got {e!r}", key="eta")
        if command in ("simulate", "clt", "tails", "curves") and isinstance(eta, list):
            _fail(f"command {command!r} takes a single eta", key="eta")
        if command in ("order", "bridge") and (not isinstance(eta, list) or len(eta) < 3):
            _fail(f"command {command!r} needs a list of >= 3 eta values", key="eta")
    if "replicas" in cfg:
        if not isinstance(cfg["replicas"], int) or cfg["replicas"] < 1:
            _fail("replicas must be an integer >= 1", key="replicas")
    if "workers" in cfg:
        if not isinstance(cfg["workers"], int) or cfg["workers"] < 1:
            _fail("workers must be an integer >= 1", key="workers")

    if command == "tails":
        xs = cfg["xs"]
        if not isinstance(xs, list) or not xs:
            _fail("xs must be a nonempty list", key="xs")
        x_max = max(float(v) for v in xs)
        expected = float(norm.sf(x_max)) * cfg["replicas"]
        if expected < diagnostics.MIN_EXPECTED_TAIL_HITS:
            _fail(
                f"resolution precondition failed: (1-Phi({x_max}))*replicas = "
                f"{expected:.1f} < {diagnostics.MIN_EXPECTED_TAIL_HITS:.0f}; "
                "increase replicas or lower xs",
                key="xs",
            )
    return cfg


def apply_overrides(cfg: dict, overrides) -> dict:
    """Apply --set key=value pairs (dotted paths, JSON-parsed values)."""
    out = json.loads(json.dumps(cfg))
    for item in overrides or []:
        if "=" not in item:
            _fail(f"--set expects key=value, got {item!r}")
        path, _, raw_val = item.partition("=")
        try:
            value = json.loads(raw_val)
        except json.JSONDecodeError:
            value = raw_val
        node = out
        parts = path.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                _fail(f"--set path {path!r} crosses a non-object", key=path)
        node[parts[-1]] = value
    return out


# ---------------------------------------------------------------------------
# shared builders
# ---------------------------------------------------------------------------


def _build_model(cfg):
    return builtin_model(cfg["model"]["id"], cfg["model"].get("params"))


def _build_h(cfg):
    return builtin_test_function(cfg["h"]["id"], cfg["h"].get("params"))


def _build_stein(cfg, model, h):
    sc = cfg["stein"]
    density = quadrature.invariant_density_1d(
        model, X=sc.get("X"), n_grid=int(sc.get("n_grid"))
    )
    stein = quadrature.solve_stein_1d(model, h, density, tolerance=float(sc.get("tolerance")))
    return density, stein


def _build_initial_state(cfg):
    ini = cfg["initial_state"]
    kind = ini.get("kind", "point")
    if kind == "point":
        value = ini.get("value", 0.0)
        value = tuple(value) if isinstance(value, list) else (float(value),)
        return InitialState(kind="point", value=value)
    return InitialState(
        kind="gauss", mean=float(ini.get("mean", 0.0)), std=float(ini.get("std", 1.0))
    )


def _run_sample_set(cfg, command):
    model = _build_model(cfg)
    h = _build_h(cfg)
    density, stein = _build_stein(cfg, model, h)
    sample_set = montecarlo.run_replicas(
        model,
        stein,
        eta=float(cfg["eta"]),
        m=cfg.get("steps"),
        n_replicas=cfg["replicas"],
        master_seed=cfg["master_seed"],
        workers=cfg["workers"],
        scheme=cfg["scheme"],
        initial_state=_build_initial_state(cfg),
        experiment=command,
    )
    return model, h, density, stein, sample_set


def _probe_states(cfg):
    spec = cfg["probe_states"]
    if isinstance(spec, list):
        return [float(v) for v in spec]
    return list(np.linspace(float(spec["lo"]), float(spec["hi"]), int(spec["count"])))


# ---------------------------------------------------------------------------
# command handlers: each returns (csv_lines, summary_results, passed)
# ---------------------------------------------------------------------------


def _cmd_validate(cfg):
    model = _build_model(cfg)
    g = cfg["grid"]
    report = validate_assumptions(
        model,
        SamplingGrid(
            bounds=tuple(g["bounds"]), n_points=int(g["n_points"]),
            n_pairs=int(g["n_pairs"]), seed=int(g["seed"]),
        ),
    )
    lines = ["check,ok,observed"]
    for check, ok, obs in (
        ("lipschitz", report.lipschitz_ok, report.observed["lipschitz_max_ratio"]),
        ("dissipativity", report.dissipativity_ok, report.observed["dissipativity_max_excess"]),
        ("one_point", report.one_point_ok, report.observed["one_point_max_excess"]),
        ("positivity", report.positivity_ok, report.observed["sigma_min_eigenvalue"]),
    ):
        lines.append(f"{check},{str(ok).lower()},{format_float(obs)}")
    return lines, report.to_dict(), report.all_ok


def _cmd_stein(cfg):
    model = _build_model(cfg)
    h = _build_h(cfg)
    try:
        density, stein = _build_stein(cfg, model, h)
    except ResidualTooLarge as exc:
        return (
            ["x,f,f_prime,f_double_prime,residual"],
            {"error": str(exc), "residual_sup": exc.residual_sup},
            False,
        )
    lines = ["x,f,f_prime,f_double_prime,residual"]
    for i in range(len(stein.x)):
        lines.append(
            ",".join(
                format_float(v)
                for v in (stein.x[i], stein.f[i], stein.fp[i], stein.fpp[i], stein.residual[i])
            )
        )
    results = {
        "pi_h": stein.pi_h,
        "residual_sup": stein.residual_sup,
        "derivative_sups": list(stein.derivative_sups),
        "tolerance": stein.tolerance,
        "h_bounded": stein.h_bounded,
        "asymptotic_variance": quadrature.asymptotic_variance(model, density, stein),
        "truncation": density.X,
    }
    return lines, results, True


def _cmd_simulate(cfg):
    _, _, _, _, sample_set = _run_sample_set(cfg, "simulate")
    results = sample_set.manifest()
    return list(sample_set.csv_lines()), results, not sample_set.failures


def _cmd_clt(cfg):
    model, h, density, stein, sample_set = _run_sample_set(cfg, "clt")
    oracle = quadrature.asymptotic_variance(model, density, stein)
    report = diagnostics.clt_check(sample_set.values("w"), target_variance=1.0)
    centered = sample_set.values("h_eta") + sample_set.values("r_eta")
    lines = ["replica,w,s,centered_scaled"]
    for st in sample_set.stats:
        lines.append(
            f"{st.replica},{format_float(st.w)},{format_float(st.s)},"
            f"{format_float(st.h_eta + st.r_eta)}"
        )
    results = {
        "clt": report.to_dict(),
        "oracle_variance": oracle,
        "centered_scaled_variance": float(np.var(centered)),
        "h_bounded": stein.h_bounded,
        "replicas_ok": sample_set.n_ok,
    }
    return lines, results, report.passed


def _cmd_tails(cfg):
    _, _, _, stein, sample_set = _run_sample_set(cfg, "tails")
    table = diagnostics.tail_ratio_table(sample_set, cfg["xs"])
    ratios = {
        stat: {format_float(r.x): r.ratio for r in table.select(stat) if r.resolved}
        for stat in ("W", "-W", "S", "-S")
    }
    results = {
        "ratios": ratios,
        "replicas_ok": sample_set.n_ok,
        "h_bounded": stein.h_bounded,
        "wall_time_s": sample_set.wall_time,
        "total_steps": sample_set.n_ok * sample_set.m,
    }
    return list(table.csv_lines()), results, True


def _cmd_order(cfg):
    model = _build_model(cfg)
    report = diagnostics.strong_order_regression(
        model,
        etas=[float(e) for e in cfg["eta"]],
        horizon=float(cfg["horizon"]),
        n_paths=int(cfg["paths"]),
        master_seed=cfg["master_seed"],
        eta_ref=cfg.get("eta_ref"),
        theta0=float(cfg["theta0"]),
    )
    lines = ["eta,error_em,error_milstein"]
    for eta, ee, em_ in zip(report.etas, report.errors_em, report.errors_milstein):
        lines.append(f"{format_float(eta)},{format_float(ee)},{format_float(em_)}")
    return lines, report.to_dict(), True


def _cmd_drift(cfg):
    model = _build_model(cfg)
    etas = cfg["eta"] if isinstance(cfg["eta"], list) else [cfg["eta"]]
    states = _probe_states(cfg)
    lines = ["eta,state,lhs,stderr,rhs,margin,in_small_set,passed"]
    all_passed = True
    per_eta = {}
    for eta in etas:
        probes = diagnostics.drift_condition_check(
            model, float(eta), states, inner=int(cfg["inner"]),
            master_seed=cfg["master_seed"],
        )
        per_eta[format_float(eta)] = sum(p.passed for p in probes)
        for p in probes:
            all_passed &= p.passed
            lines.append(
                ",".join(
                    (
                        format_float(eta),
                        format_float(p.state[0]) if len(p.state) == 1 else repr(list(p.state)).replace(",", ";"),
                        format_float(p.lhs), format_float(p.stderr),
                        format_float(p.rhs), format_float(p.margin),
                        str(p.in_small_set).lower(), str(p.passed).lower(),
                    )
                )
            )
    results = {"probes": len(states), "passed_per_eta": per_eta, "all_passed": all_passed}
    return lines, results, all_passed


def _cmd_bridge(cfg):
    model = _build_model(cfg)
    h = _build_h(cfg)
    density, stein = _build_stein(cfg, model, h)
    report = diagnostics.variance_bridge(
        model, h,
        etas=[float(e) for e in cfg["eta"]],
        chain_len=int(cfg["chain_len"]),
        master_seed=cfg["master_seed"],
        burn_frac=float(cfg["burn_frac"]),
        n_batches=int(cfg["n_batches"]),
        density=density,
        stein=stein,
        noise_floor=float(cfg["noise_floor"]),
        stderr_factor=float(cfg["stderr_factor"]),
    )
    lines = ["eta,pi_value,chain_value,gap,stderr,resolvable"]
    for eta, cv, gap, se, rs in zip(
        report.etas, report.chain_values, report.gaps, report.stderrs, report.resolvable
    ):
        lines.append(
            f"{format_float(eta)},{format_float(report.pi_value)},{format_float(cv)},"
            f"{format_float(gap)},{format_float(se)},{str(rs).lower()}"
        )
    passed = report.slope is None or report.slope > 0.0
    return lines, report.to_dict(), passed


def _cmd_curves(cfg):
    _, _, _, _, sample_set = _run_sample_set(cfg, "curves")
    lines = ["statistic,y,p_emp,n_hits,resolved"]
    summaries = {}
    passed = True
    for stat in cfg["statistics"]:
        report = diagnostics.concentration_curve(
            sample_set, stat, ys=cfg.get("ys"), min_hits=int(cfg["min_hits"])
        )
        summaries[stat] = report.to_dict()
        if report.degenerate:
            lines.append(f"{stat},,,,degenerate")
            continue
        for y, p, k, r in zip(report.ys, report.p_emp, report.n_hits, report.resolved):
            lines.append(
                f"{stat},{format_float(y)},{format_float(p)},{k},{str(r).lower()}"
            )
        rate = report.exp_rate if report.dominant == "exponential" else report.gauss_rate
        passed &= report.monotone_decreasing and (rate is None or rate > 0.0)
    return lines, summaries, passed


_HANDLERS = {
    "validate": _cmd_validate,
    "stein": _cmd_stein,
    "simulate": _cmd_simulate,
    "clt": _cmd_clt,
    "tails": _cmd_tails,
    "order": _cmd_order,
    "drift": _cmd_drift,
    "bridge": _cmd_bridge,
    "curves": _cmd_curves,
}


def _dry_run_plan(command, cfg) -> dict:
    plan = {"command": command, "config_hash": config_hash(cfg)}
    if "eta" in cfg:
        etas = cfg["eta"] if isinstance(cfg["eta"], list) else [cfg["eta"]]
        ms = [cfg.get("steps") or ChainConfig(eta=float(e)).m for e in etas]
        plan["etas"] = etas
        plan["steps_per_chain"] = ms
        if "replicas" in cfg:
            plan["replicas"] = cfg["replicas"]
            plan["total_steps"] = sum(m * cfg["replicas"] for m in ms)
        elif command == "bridge":
            plan["total_steps"] = len(etas) * int(cfg["chain_len"])
        elif command == "order":
            eta_ref = cfg.get("eta_ref") or min(float(e) for e in etas) / 16.0
            n_ref = int(round(float(cfg["horizon"]) / eta_ref))
            plan["total_steps"] = int(cfg["paths"]) * (
                2 * n_ref + 2 * sum(int(round(float(cfg["horizon"]) / float(e))) for e in etas)
            )
        elif command == "drift":
            n_states = (
                len(cfg["probe_states"])
                if isinstance(cfg["probe_states"], list)
                else int(cfg["probe_states"]["count"])
            )
            plan["total_steps"] = len(etas) * n_states * int(cfg["inner"])
    if command == "tails":
        plan["expected_tail_hits"] = {
            str(x): float(norm.sf(float(x))) * cfg["replicas"] for x in cfg["xs"]
        }
    plan["workers"] = cfg.get("workers", 1)
    plan["output_dir"] = cfg.get("output_dir")
    return plan


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="milstein-mdp",
        description="Invariant-measure statistics for the Milstein discretization "
        "of ergodic SDEs: simulation, Stein-equation oracle, and statistical "
        "verification commands.",
    )
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, help="path to a JSON config file")
    parser.add_argument(
        "--set", dest="overrides", action="append", default=[],
        metavar="KEY=VALUE", help="override a config key (dotted path, JSON value)",
    )
    parser.add_argument("--threads", type=int, default=None, help="worker hint")
    parser.add_argument(
        "--dry-run", action="store_true",
        help="print the resolved execution plan without running",
    )
    args = parser.parse_args(argv)

    try:
        try:
            raw = json.loads(Path(args.config).read_text())
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {args.config}")
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}")
        raw = apply_overrides(raw, args.overrides)
        if args.threads is not None:
            raw["workers"] = args.threads
        cfg = resolve_config(args.command, raw)
    except ConfigError as exc:
        key = f" (key: {exc.key})" if exc.key else ""
        print(f"config error: {exc}{key}", file=sys.stderr)
        return 2

    if args.dry_run:
        print(json.dumps(_dry_run_plan(args.command, cfg), indent=2, sort_keys=True))
        return 0

    t0 = time.perf_counter()
    try:
        csv_lines, results, passed = _HANDLERS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except MilsteinMdpError as exc:
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    elapsed = time.perf_counter() - t0

    out_dir = Path(cfg["output_dir"])
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{args.command}.csv"
    with open(csv_path, "w", newline="") as fh:
        fh.write("\n".join(csv_lines) + "\n")
    summary = {
        "command": args.command,
        "config": cfg,
        "config_hash": config_hash(cfg),
        "passed": bool(passed),
        "results": results,
        "elapsed_s": elapsed,
        "csv": csv_path.name,
    }
    with open(out_dir / f"{args.command}.summary.json", "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True, default=float)
        fh.write("\n")
    print(f"{args.command}: {'pass' if passed else 'FAIL'} ({elapsed:.2f}s) -> {csv_path}")
    return 0 if passed else 1


if __name__ == "__main__":
    sys.exit(main())

"""Command-line interface: ``simulate``, ``analyze`` and ``diagnose``.

Exit codes: 0 success, 1 runtime failure, 2 usage error. Every JSON output
embeds the resolved configuration, including the seed. ``--threads`` only
changes how work is scheduled, never the results, and is therefore left
out of the embedded configuration.
"""
from __future__ import annotations

import argparse
import json
import sys
from importlib import resources
from pathlib import Path

from . import __version__
from .bootstrap import BootstrapConfig, estimate_with_inference
from .data_model import CsvSchema, Endpoint, apply_landmark, ingest_csv
from .diagnostics import DEFAULT_THRESHOLDS, balance_report
from .estimators import AnalysisOptions, EffectType, Strategy, strategy_weights
from .exceptions import PStrataError
from .simgen import Scenario, SimulationConfig, run_scenario
from .survival import weighted_km, write_km_csv

try:  # Python 3.11+
    import tomllib
except ModuleNotFoundError:  # pragma: no cover
    import tomli as tomllib

# keys never echoed into result payloads
_EXECUTION_KEYS = {"threads", "config", "command", "quiet"}


class UsageError(Exception):
    pass


def demo_data_path() -> Path:
    """Location of the bundled synthetic demo CSV."""
    return Path(str(resources.files("pstrata") / "data" / "ada_demo.csv"))


def _float_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _name_list(text):
    return [v.strip() for v in text.split(",") if v.strip()]


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return v


def _add_common(p):
    p.add_argument("--config", help="flat TOML file of option defaults; flags override it")
    p.add_argument("--seed", type=int, help="master random seed (default 0)")
    p.add_argument("--threads", type=_positive_int,
                   help="worker count; does not change results")
    p.add_argument("--quiet", action="store_true", help="no summary on stdout")


def _add_data(p):
    p.add_argument("--data", help="input CSV (see README for the layout)")
    p.add_argument("--demo", action="store_true", help="use the bundled synthetic demo data")
    p.add_argument("--landmark", type=float, help="drop subjects with time below this value")
    p.add_argument("--covariates", type=_name_list,
                   help="comma-separated weight-model covariates (default: all)")
    p.add_argument("--strategy", help="proposed | complete-case | impute:<stratum>")
    p.add_argument("--stratum-labels", type=_name_list,
                   help="names of strata 1..J (default for two strata: positive,negative)")
    p.add_argument("--num-strata", type=int, help="number of strata (default: inferred)")
    p.add_argument("--endpoint", choices=[e.value for e in Endpoint],
                   help="outcome kind (default: inferred from the header)")
    p.add_argument("--no-post-measure", action="store_true",
                   help="fit the stratum model on covariates only")
    p.add_argument("--max-weight", type=float, help="cap modelled weights at this value")
    for col in ("id", "arm", "stratum", "missing", "b", "y", "time", "event"):
        p.add_argument(f"--{col}-col", help=f"column holding {col} (default '{col}')")
    p.add_argument("--missing-token", help="extra token meaning 'missing' (default: empty)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pstrata",
        description="Principal-stratum treatment effects with missing stratum status.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="{simulate,analyze,diagnose}")
    sub.required = True

    s = sub.add_parser("simulate", help="run a simulation scenario")
    _add_common(s)
    s.add_argument("--endpoint", choices=[e.value for e in Endpoint])
    s.add_argument("--scenario", choices=[c.value for c in Scenario])
    s.add_argument("--n", type=int, help="trial size (even)")
    s.add_argument("--reps", type=int, help="simulation replicates")
    s.add_argument("--boot", type=int, help="bootstrap replicates per trial")
    s.add_argument("--censoring-rate", type=float, help="administrative censoring target")
    for name in ("alpha", "gamma", "xi", "beta-binary", "beta-tte"):
        s.add_argument(f"--{name}", type=_float_list, help="comma-separated coefficients")
    s.add_argument("--truth-method", choices=["monte_carlo", "quadrature"])
    s.add_argument("--out", help="result JSON path")
    s.add_argument("--table", help="table-shaped CSV path")

    a = sub.add_parser("analyze", help="estimate stratum effects with bootstrap inference")
    _add_common(a)
    _add_data(a)
    a.add_argument("--boot", type=int, help="bootstrap replicates (default 1000)")
    a.add_argument("--ci", choices=["normal", "percentile"], help="interval type")
    a.add_argument("--out", help="result JSON path")
    a.add_argument("--weights-out", help="CSV of per-subject stratum weights")
    a.add_argument("--km-out", help="CSV of weighted Kaplan-Meier curves")

    d = sub.add_parser("diagnose", help="covariate balance of the weighted populations")
    _add_common(d)
    _add_data(d)
    d.add_argument("--thresholds", type=_float_list, help="ASMD thresholds (default 0.1,0.25)")
    d.add_argument("--out", help="balance report JSON path")
    d.add_argument("--csv", help="long-format balance CSV path")
    return parser


DEFAULTS = {
    "simulate": dict(seed=0, threads=1, endpoint="binary", scenario="proposed", n=600,
                     reps=500, boot=1000, censoring_rate=0.20, truth_method="monte_carlo"),
    "analyze": dict(seed=0, threads=1, strategy="proposed", boot=1000, ci="normal"),
    "diagnose": dict(seed=0, threads=1, strategy="proposed",
                     thresholds=list(DEFAULT_THRESHOLDS)),
}


def _load_config(path, known):
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    except tomllib.TOMLDecodeError as exc:
        raise UsageError(f"invalid config {path}: {exc}") from None
    out = {}
    for key, value in data.items():
        dest = key.replace("-", "_")
        if dest not in known or dest in _EXECUTION_KEYS - {"threads"}:
            raise UsageError(f"unknown config key {key!r}")
        if isinstance(value, dict):
            raise UsageError(f"config must be flat; {key!r} is a table")
        out[dest] = value
    return out


def resolve(argv=None):
    """Parse ``argv`` and merge built-in defaults, the config file and flags."""
    parser = build_parser()
    ns = parser.parse_args(argv)
    sub = parser._subparsers._group_actions[0].choices[ns.command]
    known = {a.dest for a in sub._actions if a.dest != "help"}
    merged = dict(DEFAULTS[ns.command])
    if ns.config:
        try:
            merged.update(_load_config(ns.config, known))
        except UsageError as exc:
            sub.error(str(exc))
    for key, value in vars(ns).items():
        if value is not None and not (value is False and key in merged):
            merged[key] = value
    for k in ("covariates", "stratum_labels"):
        if isinstance(merged.get(k), str):
            merged[k] = _name_list(merged[k])
    for k in ("thresholds", "alpha", "gamma", "xi", "beta_binary", "beta_tte"):
        if isinstance(merged.get(k), str):
            merged[k] = _float_list(merged[k])
    return sub, merged


def _echo(cfg):
    return {k: v for k, v in sorted(cfg.items()) if k not in _EXECUTION_KEYS and v is not None}


def _write_json(path, payload):
    text = json.dumps(payload, indent=2, sort_keys=True, allow_nan=True) + "\n"
    if path:
        Path(path).write_text(text)
    return text


def _load_dataset(cfg, sub):
    if cfg.get("demo") and cfg.get("data"):
        sub.error("use either --data or --demo")
    if cfg.get("demo"):
        cfg["data"] = str(demo_data_path())
        cfg.setdefault("landmark", 4.0)
    if not cfg.get("data"):
        sub.error("the following arguments are required: --data (or --demo)")
    schema_kw = {}
    for col in ("id", "arm", "stratum", "missing", "b", "y", "time", "event"):
        if cfg.get(f"{col}_col"):
            schema_kw[col] = cfg[f"{col}_col"]
    if cfg.get("missing_token"):
        schema_kw["missing_token"] = cfg["missing_token"]
    if cfg.get("endpoint"):
        schema_kw["endpoint"] = Endpoint(cfg["endpoint"])
    if cfg.get("num_strata"):
        schema_kw["num_strata"] = int(cfg["num_strata"])
    ds = ingest_csv(cfg["data"], CsvSchema(**schema_kw))
    excluded = 0
    if cfg.get("landmark") is not None:
        ds, excluded = apply_landmark(ds, float(cfg["landmark"]))
    labels = cfg.get("stratum_labels")
    if labels is None:
        labels = ["positive", "negative"] if ds.num_strata == 2 else \
            [str(a) for a in range(1, ds.num_strata + 1)]
    if len(labels) != ds.num_strata:
        sub.error(f"--stratum-labels needs {ds.num_strata} names")
    cfg["stratum_labels"] = list(labels)
    try:
        strategy = Strategy.parse(cfg["strategy"], labels)
    except ValueError as exc:
        sub.error(str(exc))
    if strategy.kind == "impute" and not 1 <= strategy.impute_to <= ds.num_strata:
        sub.error(f"imputation target must lie in 1..{ds.num_strata}")
    cov = cfg.get("covariates")
    options = AnalysisOptions(covariates=None if not cov else tuple(cov),
                              use_post_measure=not cfg.get("no_post_measure", False),
                              max_weight=cfg.get("max_weight"))
    return ds, excluded, strategy, options, labels


def cmd_simulate(cfg, sub) -> int:
    try:
        sim = SimulationConfig(
            n=int(cfg["n"]), endpoint=cfg["endpoint"], seed=int(cfg["seed"]),
            scenario=cfg["scenario"], reps=int(cfg["reps"]), boot=int(cfg["boot"]),
            censoring_rate_target=float(cfg["censoring_rate"]),
            **{k: tuple(cfg[k]) for k in ("alpha", "gamma", "xi", "beta_binary", "beta_tte")
               if cfg.get(k) is not None})
    except ValueError as exc:
        sub.error(str(exc))
    progress = None
    if not cfg.get("quiet"):
        def progress(done, total):
            print(f"\r{done}/{total} replicates", end="", file=sys.stderr, flush=True)
    res = run_scenario(sim, threads=cfg["threads"], truth_method=cfg["truth_method"],
                       progress=progress)
    if progress:
        print(file=sys.stderr)
    payload = {"command": "simulate", "config": _echo(cfg), "seed": sim.seed,
               "result": res.to_json()}
    text = _write_json(cfg.get("out"), payload)
    if cfg.get("table"):
        res.write_table_csv(cfg["table"])
    if not cfg.get("quiet"):
        if not cfg.get("out"):
            print(text, end="")
        for s in res.strata:
            print(f"stratum {s.stratum}: true {s.truth:.4f} mean {s.mean:.4f} se {s.se:.4f} "
                  f"see {s.see:.4f} cp {s.cp:.3f} ({s.n_ok} ok)")
    return 0


def cmd_analyze(cfg, sub) -> int:
    ds, excluded, strategy, options, labels = _load_dataset(cfg, sub)
    boot = BootstrapConfig(n_boot=int(cfg["boot"]), seed=int(cfg["seed"]), strategy=strategy,
                           ci=cfg["ci"], threads=cfg["threads"])
    estimates = estimate_with_inference(ds, boot, options)
    used, wd, _ = strategy_weights(ds, strategy, options)
    results = []
    for e in estimates:
        d = e.to_json()
        d["label"] = labels[e.stratum - 1]
        results.append(d)
    payload = {"command": "analyze", "config": _echo(cfg), "seed": int(cfg["seed"]),
               "n_subjects": len(ds), "n_excluded_landmark": excluded, "estimates": results}
    text = _write_json(cfg.get("out"), payload)
    if cfg.get("weights_out"):
        wd.write_csv(cfg["weights_out"])
    if cfg.get("km_out"):
        if used.endpoint is not Endpoint.TIME_TO_EVENT:
            sub.error("--km-out needs a time-to-event endpoint")
        curves = {}
        for a in range(1, used.num_strata + 1):
            w = wd.stratum(a)
            for arm in (1, 0):
                sel = used.arm == arm
                curves[(labels[a - 1], arm)] = weighted_km(used.time[sel], used.event[sel],
                                                           w[sel])
        write_km_csv(cfg["km_out"], curves)
    if not cfg.get("quiet"):
        if not cfg.get("out"):
            print(text, end="")
        for e, d in zip(estimates, results):
            scale = "HR" if e.effect_type is EffectType.LOG_HAZARD_RATIO else "RD"
            print(f"{d['label']}: {e.effect_type.value} {e.point:.4f} "
                  f"(se {e.se:.4f}, 95% CI {e.ci_low:.4f} to {e.ci_high:.4f}) [{scale}]")
    return 0


def cmd_diagnose(cfg, sub) -> int:
    ds, excluded, strategy, options, labels = _load_dataset(cfg, sub)
    _, wd, _ = strategy_weights(ds, strategy, options)
    report = balance_report(ds, wd, cfg["thresholds"], options.covariates)
    body = report.to_json()
    for s in body["strata"]:
        s["label"] = labels[s["stratum"] - 1]
    payload = {"command": "diagnose", "config": _echo(cfg), "seed": int(cfg["seed"]),
               "n_subjects": len(ds), "n_excluded_landmark": excluded, "balance": body}
    text = _write_json(cfg.get("out"), payload)
    if cfg.get("csv"):
        report.write_csv(cfg["csv"])
    if not cfg.get("quiet"):
        if not cfg.get("out"):
            print(text, end="")
        for s in report.strata:
            for t in report.thresholds:
                print(f"{labels[s.stratum - 1]} ASMD>{t:g}: adjusted {s.observed_adjusted[t]}, "
                      f"unadjusted {s.observed_unadjusted[t]}, "
                      f"expected {s.expected_randomized[t]:.2f}")
    return 0


COMMANDS = {"simulate": cmd_simulate, "analyze": cmd_analyze, "diagnose": cmd_diagnose}


def main(argv=None) -> int:
    try:
        sub, cfg = resolve(argv)
    except SystemExit as exc:  # argparse usage errors and --help
        return int(exc.code or 0)
    try:
        return COMMANDS[cfg["command"]](cfg, sub)
    except SystemExit as exc:
        return int(exc.code or 0)
    except (PStrataError, ValueError, OSError) as exc:
        print(f"pstrata {cfg['command']}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

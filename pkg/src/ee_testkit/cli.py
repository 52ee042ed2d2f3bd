"""Command-line interface: ``ee-testkit {test,size,power,validate}``.

Exit codes: 0 success, 1 input error, 2 estimator non-convergence,
3 validation failure.
"""

import argparse
import csv
import json
import logging
import sys
from importlib import resources

import jsonschema
import numpy as np

from .constraints import get_restriction, linear_restriction
from .errors import EETestError
from .estimate import FitOptions
from .montecarlo import (
    DEFAULT_DELTA_GRID,
    SIZE_GRID_N,
    SCENARIOS,
    ScenarioConfig,
    run_power_experiment,
    run_size_experiment,
    write_csv,
)
from .objective import Dataset, NlsObjective, get_mean_function, read_dataset_csv
from .stats import ConvergenceError, TestConfig, run_all_tests
from .validate import SUITES, run_suites

log = logging.getLogger("ee_testkit")

EXIT_OK, EXIT_INPUT, EXIT_NONCONVERGENCE, EXIT_VALIDATION = 0, 1, 2, 3
DEFAULT_SEED = 42
DEFAULT_SCENARIO = "IV"
DEFAULT_N = 100
POWER_GRID_N = (20, 50, 100)


class CliInputError(EETestError):
    pass


class _Parser(argparse.ArgumentParser):
    # usage errors are input errors (exit 1); exit 2 is reserved for
    # non-convergence
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of numbers, got {text!r}")


def _names(text):
    return [v.strip() for v in text.split(",") if v.strip()]


def _matrix(text):
    rows = [_floats(row) for row in text.split(";")]
    if len({len(r) for r in rows}) != 1:
        raise argparse.ArgumentTypeError("matrix rows must have equal length")
    return rows


def _u64(text):
    v = int(text, 0)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _override(text):
    key, sep, value = text.partition("=")
    if not sep or not key:
        raise argparse.ArgumentTypeError(f"overrides take the form key=value, got {text!r}")
    try:
        return key.strip(), json.loads(value)
    except json.JSONDecodeError:
        return key.strip(), value


def _common(p):
    p.add_argument("--config", help="JSON configuration file (see config.schema.json)")
    p.add_argument("--set", dest="overrides", action="append", type=_override, default=[],
                   metavar="KEY=VALUE", help="override a configuration key (value parsed as JSON)")
    p.add_argument("--out", help="output file (default: standard output)")
    p.add_argument("--seed", type=_u64, help=f"master seed (default {DEFAULT_SEED})")
    p.add_argument("--threads", type=int,
                   help="worker processes, 0 = one per CPU (fallback: EE_TESTKIT_THREADS)")
    p.add_argument("-v", "--verbose", action="count", default=0)
    p.add_argument("-q", "--quiet", action="store_true")


def _mc_flags(p, power):
    p.add_argument("--paper", action="store_true",
                   help="run the full reference grid of scenarios and sample sizes")
    p.add_argument("--scenario", choices=sorted(SCENARIOS))
    p.add_argument("--n", type=int)
    p.add_argument("--reps", type=int)
    p.add_argument("--hyp", choices=("h0a", "h0b", "both"))
    p.add_argument("--stat", type=_names, help="comma list from BF1..BF7,W,LM,D")
    p.add_argument("--covariance", choices=("information", "sandwich"))
    p.add_argument("--init", dest="initial_point", type=_floats,
                   help="starting point for both estimators (default: the scenario's true parameters)")
    if power:
        p.add_argument("--delta-grid", dest="delta_grid", type=_floats)


def build_parser():
    parser = _Parser(prog="ee-testkit",
                     description="Bilinear-form, Wald, LM and distance tests for extremum estimators.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("test", help="test a restriction on one dataset")
    t.add_argument("data", nargs="?", help="CSV file: response first, regressors after, header row")
    t.add_argument("--model", help="mean function (linear, linear2-exp3)")
    t.add_argument("--restriction", help="h0a, h0b, h0a-delta, h0b-delta or linear")
    t.add_argument("--delta", type=float, help="delta for the -delta restrictions")
    t.add_argument("--R", type=_matrix, help="linear restriction matrix, rows separated by ';'")
    t.add_argument("--r", type=_floats, help="right-hand side of the linear restriction")
    t.add_argument("--add-intercept", dest="add_intercept", action="store_true", default=None,
                   help="prepend a column of ones (linear model)")
    t.add_argument("--covariance", choices=("information", "sandwich"))
    t.add_argument("--variants", type=lambda s: [int(v) for v in _names(s)])
    t.add_argument("--multistart", type=int)
    t.add_argument("--init", dest="initial_point", type=_floats)
    _common(t)

    s = sub.add_parser("size", help="empirical size under the null")
    _mc_flags(s, power=False)
    _common(s)

    pw = sub.add_parser("power", help="empirical power over a grid of delta values")
    _mc_flags(pw, power=True)
    _common(pw)

    v = sub.add_parser("validate", help="run the self-validation suites")
    v.add_argument("--suite", action="append", choices=sorted(SUITES))
    v.add_argument("--n", type=int)
    v.add_argument("--report", help="write a JSON report of all suites")
    _common(v)
    return parser


# ---------------------------------------------------------------------------
# configuration


def _schema():
    text = resources.files("ee_testkit").joinpath("config.schema.json").read_text("utf-8")
    return json.loads(text)


def load_config(args):
    """Merge config file, ``--set`` overrides and flags (in that order)."""
    cfg = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                cfg = json.load(fh)
        except OSError as exc:
            raise CliInputError(f"cannot read config {args.config}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise CliInputError(f"{args.config}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
        if not isinstance(cfg, dict):
            raise CliInputError(f"{args.config}: top level must be an object")
    for key, value in args.overrides:
        cfg[key] = value
    for key, value in vars(args).items():
        if key in ("config", "overrides", "command", "verbose", "quiet", "data") or value is None:
            continue
        if value is False:
            continue
        cfg[key] = value
    try:
        jsonschema.validate(cfg, _schema(), cls=jsonschema.Draft7Validator)
    except jsonschema.ValidationError as exc:
        where = ".".join(str(p) for p in exc.absolute_path) or "configuration"
        raise CliInputError(f"invalid {where}: {exc.message}") from None
    return cfg


def _open_out(path):
    if path is None or path == "-":
        return sys.stdout, False
    try:
        return open(path, "w", encoding="utf-8", newline=""), True
    except OSError as exc:
        raise CliInputError(f"cannot write {path}: {exc.strerror}") from None


# ---------------------------------------------------------------------------
# commands


def _restriction_from(cfg):
    name = cfg.get("restriction")
    if name is None:
        raise CliInputError("--restriction is required")
    if name == "linear":
        if "R" not in cfg:
            raise CliInputError("the linear restriction needs --R")
        R = np.array(cfg["R"], dtype=float)
        return linear_restriction(R, cfg.get("r"))
    if name.endswith("-delta"):
        if "delta" not in cfg:
            raise CliInputError(f"restriction {name} needs --delta")
        return get_restriction(name, delta=cfg["delta"])
    return get_restriction(name)


def cmd_test(args, cfg):
    data_path = args.data or cfg.get("data")
    if not data_path:
        raise CliInputError("a data CSV is required")
    model = cfg.get("model")
    if model is None:
        raise CliInputError("--model is required")
    mean = get_mean_function(model)
    ds = read_dataset_csv(data_path)
    if cfg.get("add_intercept"):
        ds = Dataset(ds.response, np.column_stack([np.ones(ds.n), ds.regressors]))
    obj = NlsObjective(ds, mean)
    restriction = _restriction_from(cfg)
    fit = FitOptions(initial_point=cfg.get("initial_point"),
                     multistart_count=cfg.get("multistart", 5),
                     seed=cfg.get("seed", DEFAULT_SEED))
    tc = TestConfig(fit=fit, variants=tuple(cfg.get("variants", range(1, 8))),
                    covariance=cfg.get("covariance", "information"),
                    scale_ddof=cfg.get("scale_ddof", True),
                    information_equality=cfg.get("covariance", "information") == "information")
    if not tc.information_equality:
        tc.variants = tuple(v for v in tc.variants if v <= 3)
    results = run_all_tests(obj, restriction, config=tc)

    print(f"{'stat':<6}{'value':>16}{'df':>4}{'pvalue':>12}  warning")
    for s in results:
        print(f"{s.name:<6}{s.value:>16.8g}{s.df:>4d}{s.p_value:>12.6g}  {s.warning}")
    if cfg.get("out"):
        fh, close = _open_out(cfg["out"])
        try:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["stat", "value", "df", "pvalue", "warning"])
            for s in results:
                w.writerow([s.name, f"{s.value:.10g}", s.df, f"{s.p_value:.10g}", s.warning])
        finally:
            if close:
                fh.close()
    return EXIT_OK


def _scenario_configs(cfg, power):
    common = dict(
        master_seed=cfg.get("seed", DEFAULT_SEED),
        hypothesis=cfg.get("hyp", "both"),
        nominal_level=cfg.get("nominal_level", 0.05),
        covariance=cfg.get("covariance", "information"),
        scale_ddof=cfg.get("scale_ddof", True),
        block_size=cfg.get("block_size", 250),
        replications=cfg.get("reps", 1000 if power else 5000),
    )
    if "initial_point" in cfg:
        common["initial_point"] = tuple(cfg["initial_point"])
    if "stat" in cfg:
        common["statistics"] = tuple(cfg["stat"])
    elif power:
        common["statistics"] = ("BF7", "LM")
    if cfg.get("paper"):
        ns = POWER_GRID_N if power else SIZE_GRID_N
        return [ScenarioConfig(beta0=SCENARIOS[s], n=n, name=s, **common)
                for s in SCENARIOS for n in ns]
    if "beta0" in cfg:
        beta0, name = tuple(cfg["beta0"]), cfg.get("name", "custom")
    else:
        name = cfg.get("scenario", DEFAULT_SCENARIO)
        beta0 = SCENARIOS[name]
    return [ScenarioConfig(beta0=beta0, n=cfg.get("n", DEFAULT_N), name=name, **common)]


def _emit(results, cfg):
    for r in results:
        if r.unreliable:
            log.warning("unreliable cell: scenario %s, n=%d, delta=%g (excluded: %s)",
                        r.config.label, r.config.n, r.config.delta,
                        {f"{s}/{h}": c.excluded for (s, h), c in r.cells.items() if c.excluded})
    fh, close = _open_out(cfg.get("out"))
    try:
        write_csv(results, fh)
    finally:
        if close:
            fh.close()


def cmd_size(args, cfg):
    threads = cfg.get("threads")
    results = []
    for sc in _scenario_configs(cfg, power=False):
        log.info("size: scenario %s, n=%d, %d replications", sc.label, sc.n, sc.replications)
        results.append(run_size_experiment(sc, threads=threads))
    _emit(results, cfg)
    return EXIT_OK


def cmd_power(args, cfg):
    threads = cfg.get("threads")
    grid = cfg.get("delta_grid", DEFAULT_DELTA_GRID)
    results = []
    for sc in _scenario_configs(cfg, power=True):
        log.info("power: scenario %s, n=%d, %d grid points", sc.label, sc.n, len(grid))
        results.extend(run_power_experiment(sc, grid, threads=threads))
    _emit(results, cfg)
    return EXIT_OK


def cmd_validate(args, cfg):
    names = cfg.get("suite") or list(SUITES)
    results = run_suites(names, seed=cfg.get("seed"), n=cfg.get("n"),
                         threads=cfg.get("threads"))
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        detail = ", ".join(f"{k}={v:.3g}" for k, v in r.metrics.items())
        print(f"{status} {r.name}: {detail} [{r.threshold}]")
    report = {"passed": all(r.passed for r in results),
              "suites": [r.as_dict() for r in results]}
    if cfg.get("report"):
        with open(cfg["report"], "w", encoding="utf-8") as fh:
            json.dump(report, fh, indent=2)
    if not report["passed"]:
        failed = [r.as_dict() for r in results if not r.passed]
        print(json.dumps({"failed": failed}), file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


COMMANDS = {"test": cmd_test, "size": cmd_size, "power": cmd_power, "validate": cmd_validate}


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = logging.ERROR if args.quiet else (logging.INFO if args.verbose else logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s: %(message)s")
    try:
        cfg = load_config(args)
        return COMMANDS[args.command](args, cfg)
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGENCE
    except (EETestError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point: ``cbdm {weights,estimate,tune,benchmark}``.

Settings come from (lowest to highest priority) built-in defaults, a flat
``key = value`` config file given by ``--config`` and command-line flags.
Exit status is 0 on success, 1 for usage or validation errors and 2 for
runtime failures. Every output file is written to a temporary file first and
renamed into place once all outputs of the run have been computed.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
import tempfile

import numpy as np

from . import kernels
from .data import DataError, load_csv, standardize
from .discrepancy import mmd_form, mmd_value, npcbgps_moments
from .dual import LegendrePair, solve_dual, weights_from_dual
from .primal import SolverConfig, solve_finite_class, solve_mmd, solve_w1_nearest, solve_w1_transport
from .regression import fit_weighted
from .simulation import FAMILIES, METHODS, ScenarioConfig, run_benchmark
from .targets import build_marginal_product, build_shuffle
from .tuning import balance_report, frontier

log = logging.getLogger("cbdm")

EXIT_USAGE = 1
EXIT_RUNTIME = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# --------------------------------------------------------------------- parsing

def _positive_int(s):
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {s!r}")
    return v


def _nonneg_int(s):
    v = int(s)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {s!r}")
    return v


def _finite(s):
    v = float(s)
    if not math.isfinite(v):
        raise argparse.ArgumentTypeError(f"expected a finite number, got {s!r}")
    return v


def _float_list(s):
    try:
        vals = [float(p) for p in str(s).split(",") if p.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {s!r}") from None
    if not vals or not all(math.isfinite(v) for v in vals):
        raise argparse.ArgumentTypeError(f"expected comma-separated finite numbers, got {s!r}")
    return vals


def _int_list(s):
    try:
        vals = [int(p) for p in str(s).split(",") if p.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {s!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _name_list(choices):
    def parse(s):
        vals = [p.strip() for p in str(s).split(",") if p.strip()]
        bad = [v for v in vals if v not in choices]
        if bad or not vals:
            raise argparse.ArgumentTypeError(f"invalid choice(s) {bad or s!r}; choose from {', '.join(choices)}")
        return vals
    return parse


def _add_common(p):
    p.add_argument("--config", help="flat key = value settings file")
    p.add_argument("--out", help="primary output path")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=_nonneg_int, default=None,
                   help="worker processes (0 = auto); falls back to CBDM_THREADS")
    p.add_argument("--log", dest="log_path", help="JSON-lines solver log")
    p.add_argument("--verbose", action="store_true")


def _add_data(p):
    p.add_argument("--input", help="CSV input file")
    p.add_argument("--treatment", default="t", help="treatment column name(s)/pattern(s), comma separated")
    p.add_argument("--covariates", default="x*", help="covariate column name(s)/pattern(s)")
    p.add_argument("--outcome", default="y", help="outcome column name (or pattern)")
    p.add_argument("--ignore", default="", help="columns to ignore")
    p.add_argument("--no-standardize", dest="standardize", action="store_false", default=True)
    p.add_argument("--target", choices=("shuffle", "product"), default="shuffle")
    p.add_argument("--shuffle-rounds", type=_positive_int, default=None)


def _add_solver(p):
    p.add_argument("--ipm", choices=("mmd", "finite", "w1"), default="mmd")
    p.add_argument("--kernel", default="gaussian", help="gaussian, exp or polyN, composed with a linear kernel on t")
    p.add_argument("--bandwidth", default="median", help="gaussian bandwidth or 'median'")
    p.add_argument("--no-compose", dest="compose", action="store_false", default=True,
                   help="use the kernel on (t, x) directly instead of the composed kernel")
    p.add_argument("--lambda", dest="lam", type=_finite, default=0.0)
    p.add_argument("--cap", type=_finite, default=5.0)
    p.add_argument("--max-iter", dest="max_iter", type=_positive_int, default=20000)
    p.add_argument("--tol", type=_finite, default=1e-10)
    p.add_argument("--solver", choices=("primal", "dual"), default="primal")
    p.add_argument("--regularizer", choices=("quadratic", "entropy"), default="quadratic")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cbdm", description="Covariate balancing weights by distribution matching.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("weights", help="compute balancing weights")
    _add_common(p), _add_data(p), _add_solver(p)
    p.add_argument("--summary", help="JSON summary path (default: <out>.json)")

    p = sub.add_parser("estimate", help="weights plus a weighted dose-response fit")
    _add_common(p), _add_data(p), _add_solver(p)
    p.add_argument("--summary", help="JSON summary path (default: <out>.json)")
    p.add_argument("--weights-out", help="also write the weights CSV here")
    p.add_argument("--model", choices=("linear", "kernel_ridge"), default="linear")
    p.add_argument("--ridge", type=_finite, default=None)
    p.add_argument("--grid-size", dest="grid_size", type=_positive_int, default=50)

    p = sub.add_parser("tune", help="lambda x cap frontier of (IPM, ESS)")
    _add_common(p), _add_data(p), _add_solver(p)
    p.add_argument("--lambdas", type=_float_list, default=[0.0, 1e-3, 1e-2, 1e-1])
    p.add_argument("--caps", type=_float_list, default=[2.0, 5.0, 10.0])

    p = sub.add_parser("benchmark", help="simulation RMSE benchmark")
    _add_common(p)
    p.add_argument("--families", type=_name_list(FAMILIES), default=list(FAMILIES))
    p.add_argument("--methods", type=_name_list(METHODS), default=list(METHODS))
    p.add_argument("--n-values", dest="n_values", type=_int_list, default=[150, 200])
    p.add_argument("--replications", type=_positive_int, default=100)
    p.add_argument("--beta", type=_finite, default=1.0)
    p.add_argument("--lambda", dest="lam", type=_finite, default=0.0)
    p.add_argument("--cap", type=_finite, default=5.0)
    p.add_argument("--target-size", dest="target_size", type=_positive_int, default=100_000)
    p.add_argument("--noise-variance", dest="noise_variance", type=_finite, default=0.1)
    p.add_argument("--no-confounding", dest="confounded", action="store_false", default=True)
    p.add_argument("--max-iter", dest="max_iter", type=_positive_int, default=5000)
    return parser


def read_config(path) -> dict[str, str]:
    """Parse ``key = value`` lines; ``#`` starts a comment. Keys use dashes or underscores."""
    if not os.path.isfile(path):
        raise UsageError(f"--config: file not found: {path}")
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"--config: line {lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            if not key:
                raise UsageError(f"--config: line {lineno}: empty key")
            out[key.replace("-", "_")] = value
    return out


_BOOL = {"true": True, "yes": True, "on": True, "1": True,
         "false": False, "no": False, "off": False, "0": False}


def _apply_config(sub: argparse.ArgumentParser, values: dict[str, str]) -> None:
    """Set config values as parser defaults so that flags still override them."""
    actions = {a.dest: a for a in sub._actions if a.dest not in ("help", "config")}
    aliases = {"lambda": "lam", "max_iterations": "max_iter", "no_standardize": None}
    defaults = {}
    for key, raw in values.items():
        dest = aliases.get(key, key)
        if key == "no_standardize":
            dest, raw = "standardize", str(not _BOOL.get(raw.lower(), False))
        if dest not in actions:
            raise UsageError(f"--config: unknown key {key!r}")
        action = actions[dest]
        flag = action.option_strings[0] if action.option_strings else dest
        try:
            if isinstance(action, (argparse._StoreTrueAction, argparse._StoreFalseAction)):
                if raw.lower() not in _BOOL:
                    raise ValueError(raw)
                v = _BOOL[raw.lower()]
            elif action.type is not None:
                v = action.type(raw)
            else:
                v = raw
        except (ValueError, argparse.ArgumentTypeError) as exc:
            raise UsageError(f"--config: bad value for {key} ({flag}): {exc}") from None
        if action.choices is not None and v not in action.choices:
            raise UsageError(f"--config: {key} ({flag}) must be one of {', '.join(action.choices)}")
        defaults[dest] = v
    sub.set_defaults(**defaults)


def parse_args(argv) -> argparse.Namespace:
    parser = build_parser()
    ns = parser.parse_args(argv)
    if ns.command is None:
        raise UsageError("a subcommand is required: weights, estimate, tune or benchmark")
    if ns.config:
        sub = parser._subparsers._group_actions[0].choices[ns.command]
        _apply_config(sub, read_config(ns.config))
        ns = parser.parse_args(argv)
    _validate(ns)
    return ns


def _validate(ns) -> None:
    if ns.out is None:
        raise UsageError("--out is required")
    out_dir = os.path.dirname(os.path.abspath(ns.out))
    if not os.path.isdir(out_dir) or not os.access(out_dir, os.W_OK):
        raise UsageError(f"--out: directory is not writable: {out_dir}")
    if ns.threads is None:
        env = os.environ.get("CBDM_THREADS", "").strip()
        try:
            ns.threads = _nonneg_int(env) if env else 1
        except (ValueError, argparse.ArgumentTypeError):
            raise UsageError(f"CBDM_THREADS: expected a non-negative integer, got {env!r}") from None
    if ns.threads == 0:
        ns.threads = os.cpu_count() or 1
    if not ns.cap >= 1:
        raise UsageError(f"--cap must be >= 1, got {ns.cap}")
    if not ns.lam >= 0:
        raise UsageError(f"--lambda must be >= 0, got {ns.lam}")
    if ns.command == "benchmark":
        if any(n < 10 for n in ns.n_values):
            raise UsageError("--n-values: every n must be >= 10")
        return
    if ns.input is None:
        raise UsageError("--input is required")
    if not os.path.isfile(ns.input):
        raise UsageError(f"--input: file not found: {ns.input}")
    if not ns.tol > 0:
        raise UsageError(f"--tol must be > 0, got {ns.tol}")
    try:
        kernels.parse_kernel(ns.kernel)
    except kernels.KernelError as exc:
        raise UsageError(f"--kernel: {exc}") from None
    if ns.bandwidth != "median":
        try:
            bw = float(ns.bandwidth)
        except ValueError:
            raise UsageError(f"--bandwidth: expected a number or 'median', got {ns.bandwidth!r}") from None
        if not bw > 0:
            raise UsageError("--bandwidth must be > 0")
        ns.bandwidth = bw
    if ns.solver == "dual" and ns.ipm != "mmd":
        raise UsageError("--solver dual is only available with --ipm mmd")
    if ns.command == "tune" and ns.ipm != "mmd":
        raise UsageError("--ipm: tune supports mmd only")
    if ns.command == "tune" and any(c < 1 for c in ns.caps):
        raise UsageError("--caps: every cap must be >= 1")
    if ns.command == "tune" and any(lam < 0 for lam in ns.lambdas):
        raise UsageError("--lambdas: every lambda must be >= 0")


# ---------------------------------------------------------------------- output

def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_jsonable(x) for x in v]
    if isinstance(v, np.ndarray):
        return [_jsonable(x) for x in v.tolist()]
    if isinstance(v, (np.bool_, bool)):
        return bool(v)
    if isinstance(v, (np.integer, int)):
        return int(v)
    if isinstance(v, (np.floating, float)):
        v = float(v)
        return v if math.isfinite(v) else None
    return v


def json_text(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def write_atomic(files: dict[str, str]) -> None:
    """Write every ``path -> text`` pair via temp files; nothing is renamed until all are written."""
    staged = []
    try:
        for path, text in files.items():
            d = os.path.dirname(os.path.abspath(path))
            fd, tmp = tempfile.mkstemp(prefix=".cbdm-", suffix=".tmp", dir=d)
            staged.append((tmp, path))
            with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        for tmp, path in staged:
            os.replace(tmp, path)
    finally:
        for tmp, _ in staged:
            if os.path.exists(tmp):
                os.unlink(tmp)


def resolved_config(ns) -> dict:
    skip = {"config", "out", "summary", "log_path", "verbose", "weights_out", "threads"}
    return {k: v for k, v in sorted(vars(ns).items()) if k not in skip}


# ----------------------------------------------------------------- pipeline

def _load(ns):
    schema = {}
    for role, spec in (("ignore", ns.ignore), ("covariate", ns.covariates),
                       ("treatment", ns.treatment), ("outcome", ns.outcome)):
        for pat in (p.strip() for p in spec.split(",")):
            if pat:
                schema[pat] = role
    data = load_csv(ns.input, schema)
    std, _ = standardize(data) if ns.standardize else (data, None)
    return data, std


def _target(ns, std):
    if ns.target == "product":
        return build_marginal_product(std)
    return build_shuffle(std, ns.shuffle_rounds, seed=ns.seed)


def _kernel(ns, std):
    tau = kernels.parse_kernel(ns.kernel, d_t=std.d_t, bandwidth=ns.bandwidth)
    spec = kernels.composed(tau) if ns.compose else tau
    return kernels.resolve_bandwidths(spec, std.z, seed=ns.seed)


def _solver_cfg(ns, lam=None, cap=None) -> SolverConfig:
    return SolverConfig(lam=ns.lam if lam is None else lam, cap=ns.cap if cap is None else cap,
                        max_iterations=ns.max_iter, objective_tolerance=min(ns.tol, 1e-6),
                        residual_tolerance=ns.tol, seed=ns.seed)


def compute_weights(ns, std, target):
    """Return (WeightSolution, log records)."""
    cfg = _solver_cfg(ns)
    if ns.ipm == "finite":
        sol = solve_finite_class(npcbgps_moments(std, target), cfg)
    elif ns.ipm == "w1":
        sol = solve_w1_nearest(std, target) if ns.lam == 0 else solve_w1_transport(std, target, cfg)
    else:
        spec = _kernel(ns, std)
        form = mmd_form(spec, std, target, seed=ns.seed)
        if ns.solver == "dual":
            pair = LegendrePair("entropic" if ns.regularizer == "entropy" else "quadratic", ns.cap)
            dsol = solve_dual(spec, std, target, pair, ns.lam, tol=max(ns.tol, 1e-12),
                              max_iterations=ns.max_iter, form=form)
            raw = weights_from_dual(dsol, pair, std)
            sol = type(raw)(raw.weights, raw.cap, math.sqrt(mmd_value(form, raw.weights)), raw.iterations,
                            raw.converged, raw.objective, raw.history, raw.diagnostics)
        else:
            if ns.regularizer != "quadratic":
                raise UsageError("--regularizer entropy requires --solver dual")
            sol = solve_mmd(form, cfg)
    if not sol.converged:
        log.warning("solver stopped before convergence after %d iterations; weights are feasible "
                    "but may be suboptimal", sol.iterations)
    records = [{"iteration": i + 1, "objective": v} for i, v in enumerate(sol.history)]
    records.append({"event": "done", "iterations": sol.iterations, "converged": sol.converged,
                    "ipm_value": sol.ipm_value, "objective": sol.objective})
    return sol, records


def _summary(ns, sol, std, target):
    return {"ipm": ns.ipm, "ipm_value": sol.ipm_value, "ess": sol.ess, "converged": sol.converged,
            "iterations": sol.iterations, "objective": sol.objective, "lambda": ns.lam, "cap": ns.cap,
            "seed": ns.seed, "n": std.n, "target_atoms": target.m,
            "balance": balance_report(std, target, sol.weights), "config": resolved_config(ns)}


def _weights_csv(w) -> str:
    return csv_text(["row_index", "weight"], ((i, v) for i, v in enumerate(w)))


def _log_text(records) -> str:
    return "".join(json.dumps(_jsonable(r), sort_keys=True) + "\n" for r in records)


def cmd_weights(ns) -> dict[str, str]:
    _, std = _load(ns)
    target = _target(ns, std)
    sol, records = compute_weights(ns, std, target)
    files = {ns.out: _weights_csv(sol.weights),
             ns.summary or ns.out + ".json": json_text(_summary(ns, sol, std, target))}
    if ns.log_path:
        files[ns.log_path] = _log_text(records)
    return files


def cmd_estimate(ns) -> dict[str, str]:
    data, std = _load(ns)
    if data.outcomes is None:
        raise UsageError(f"--outcome: no outcome column matching {ns.outcome!r} in the input")
    target = _target(ns, std)
    sol, records = compute_weights(ns, std, target)
    ridge = ns.ridge
    fit = fit_weighted(data.treatments, data.outcomes, sol.weights, ns.model, ridge=ridge)
    t = data.treatments
    if data.d_t == 1:
        grid = np.linspace(t.min(), t.max(), ns.grid_size)[:, None]
    else:
        grid = t  # no natural grid in several dimensions: evaluate at the observed doses
    pred = fit.predict(grid)
    header = [*data.treatment_names, "dose_response"]
    files = {ns.out: csv_text(header, ([*g, p] for g, p in zip(grid, pred)))}
    summary = _summary(ns, sol, std, target)
    summary.update({"model": ns.model, "weighted_risk": fit.weighted_risk, "ridge": fit.ridge})
    if fit.kind == "linear":
        summary.update({"beta_hat": fit.coef.tolist(), "intercept": fit.intercept})
    files[ns.summary or ns.out + ".json"] = json_text(summary)
    if ns.weights_out:
        files[ns.weights_out] = _weights_csv(sol.weights)
    if ns.log_path:
        files[ns.log_path] = _log_text(records)
    return files


def cmd_tune(ns) -> dict[str, str]:
    _, std = _load(ns)
    target = _target(ns, std)
    spec = _kernel(ns, std)
    pts = frontier(std, target, spec, ns.lambdas, ns.caps, base=_solver_cfg(ns), threads=ns.threads)
    cols = ["lambda", "cap", "ipm_value", "ess", "converged", "failed", "knee", "message"]
    rows = [(p.lam, p.cap, p.ipm_value, p.ess, p.converged, p.failed, p.knee, p.message) for p in pts]
    files = {ns.out: csv_text(cols, rows)}
    if ns.log_path:
        files[ns.log_path] = _log_text([dict(zip(cols, r)) for r in rows])
    return files


def cmd_benchmark(ns) -> dict[str, str]:
    cfg = ScenarioConfig(families=tuple(ns.families), n_values=tuple(ns.n_values),
                         replications=ns.replications, seed=ns.seed, methods=tuple(ns.methods),
                         beta=ns.beta, cap=ns.cap, lam=ns.lam, target_size=ns.target_size,
                         noise_variance=ns.noise_variance, confounded=ns.confounded,
                         max_iterations=ns.max_iter)
    rows = run_benchmark(cfg, threads=ns.threads)
    cols = list(rows[0].COLUMNS)
    files = {ns.out: csv_text(cols, ([r.as_dict()[c] for c in cols] for r in rows))}
    if ns.log_path:
        files[ns.log_path] = _log_text({**r.as_dict(), "estimates": r.estimates} for r in rows)
    return files


COMMANDS = {"weights": cmd_weights, "estimate": cmd_estimate, "tune": cmd_tune, "benchmark": cmd_benchmark}


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        ns = parse_args(argv)
    except UsageError as exc:
        print(f"cbdm: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        files = COMMANDS[ns.command](ns)
        write_atomic(files)
    except UsageError as exc:
        print(f"cbdm: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"cbdm: error: --input: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # solver, numerical and I/O failures
        print(f"cbdm: runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()

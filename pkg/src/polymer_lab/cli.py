"""``polymer-lab`` command line: run one experiment, or summarize a results directory.

Exit status: 0 when every checked bound holds, 2 when a computation finished but a
bound is violated, 1 on usage, configuration or I/O errors.

Config files are flat ``key = value`` text (``#`` starts a comment) using the
same keys as the command-line flags; flags override file values.

CSV files start with a ``#`` provenance line, then a header row.  Columns per
experiment (schema 1):

    tails          u, p_hat, se, gauss_bound, threshold
    overlap-table  N, horizon, endpoint, alpha, mgf, scaled_tilted_mean, mgf_ceiling, tilted_ceiling
    pinning        m, beta, z, tilted_mean, bound, heldout
    convexity      m, u, r1, r2, r3
    halving        N, beta, h1, h2
    halftime       N, ratio, running_max
    constants      key, value
    converge       N, mean, se, ks_to_next
    (others)       experiment, estimate, std_error, bound, passed

JSONL files carry the same provenance line, then one ExperimentResult per line.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .errors import PolymerLabError
from .lattice import admissible_endpoint
from .montecarlo import (
    ExperimentResult,
    constants_pipeline,
    convergence_probe,
    event_A_probability,
    lower_tail_curve,
    mean_partition_check,
    negative_moment_estimate,
    paley_zygmund_check,
    second_moment_fubini_check,
    two_env_experiment,
)
from .replica import (
    convexity_chain_check,
    fit_pinning_constants,
    halftime_conditioning_ratio,
    halving_inequality_check,
    overlap_bound_table,
    pinning_partition,
)

SCHEMA_VERSION = 1

EXPERIMENTS = (
    "partition", "overlap-table", "pinning", "convexity", "event-a", "two-env",
    "tails", "neg-moments", "constants", "converge",
    "fubini", "paley-zygmund", "halving", "halftime",
)

INEQUALITIES = {
    "partition": "E Z_N(beta, x) = exp(N beta^2 / 2)",
    "fubini": "E Zn(1,x)^2 = E2_{x,N}[exp(N^-1/2 L_N)]",
    "paley-zygmund": "P[Z >= E Z / 2] >= (E Z)^2 / (4 E Z^2)",
    "overlap-table": "sup_N E2_{x,N}[exp(N^-1/2 L)] and N^-1/2 E2[L exp(N^-1/2 L)] finite",
    "pinning": "z_m(beta) <= c1 exp(c2 beta^2 m)",
    "convexity": "1 + u g'(u) <= g(2u); g'(u)/2 <= (g(2u) - 1)/(2u) <= c1 e^{4 c2 m u^2}",
    "halving": "half-horizon convexity reduction of the overlap MGF",
    "halftime": "P2[L_m = k | bridges] <= C e^{x^2} P2[L_m = k]",
    "event-a": "P[A] >= 1/(4L) - 4K/C",
    "two-env": "log Z(w') >= log Z(w) - beta d_N(w, w') sqrt(<L_N>)",
    "tails": "P[Zn(1,x) < C2 exp(-c2 u)] <= exp(-u^2/2)",
    "neg-moments": "E Zn^-p <= layer-cake ceiling from the tail bound",
    "constants": "constants chain c1, c2, C2 finite and positive",
    "converge": "Zn(t,x) converges in law (Cauchy in KS distance)",
}

# experiment-specific defaults layered over BASE_DEFAULTS
BASE_DEFAULTS = dict(
    N=64, N_grid="16,32,64,128,256", t=1.0, x=0.0, beta=None, M=10_000, seed=0,
    out=None, format="csv", p=1.0, C=None, u_grid="0:0.25:3", m_grid="16,32,64,128,256,512,1024",
    heldout=700, n_pairs=1000, tol=0.05,
)
EXPERIMENT_DEFAULTS = {
    "tails": dict(M=100_000),
    "fubini": dict(M=100_000),
    "two-env": dict(N=32),
    "convexity": dict(m_grid="4,32,256", u_grid="0.01,0.1"),
    "halving": dict(N_grid="8,16,64"),
    "halftime": dict(N_grid="8,16,32,64", tol=0.10),
    "converge": dict(N_grid="16,32,64,128"),
}
CONFIG_KEYS = set(BASE_DEFAULTS) | {"experiment"}
INT_KEYS = {"N", "M", "seed", "heldout", "n_pairs"}
FLOAT_KEYS = {"t", "x", "beta", "p", "C", "tol"}


class ConfigError(Exception):
    pass


@dataclass
class Outcome:
    passed: bool
    summary: str
    records: list = field(default_factory=list)
    header: list | None = None
    rows: list | None = None


def parse_grid(text, kind=float) -> list:
    """``"a,b,c"`` or an inclusive range ``"start:step:stop"``."""
    text = str(text).strip()
    if ":" in text:
        start, step, stop = (float(v) for v in text.split(":"))
        if step <= 0:
            raise ConfigError(f"grid step must be > 0 in {text!r}")
        n = int(math.floor((stop - start) / step + 1e-9)) + 1
        return [kind(round(start + k * step, 12)) for k in range(n)]
    return [kind(v) for v in text.split(",") if v.strip()]


def read_config_file(path) -> dict:
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc.strerror}") from exc
    out = {}
    for lineno, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        out[key] = value
    return out


def _coerce(key, value):
    if value is None or (isinstance(value, str) and value.lower() in ("", "none")):
        return None
    try:
        if key in INT_KEYS:
            f = float(value)
            if f != int(f):
                raise ValueError
            return int(f)
        if key in FLOAT_KEYS:
            return float(value)
    except ValueError:
        raise ConfigError(f"{key} must be a number, got {value!r}") from None
    return str(value)


def resolve_config(experiment: str, file_values: dict, flag_values: dict) -> dict:
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {experiment!r}; choose from {', '.join(EXPERIMENTS)}")
    cfg = dict(BASE_DEFAULTS)
    cfg.update(EXPERIMENT_DEFAULTS.get(experiment, {}))
    file_exp = file_values.get("experiment")
    if file_exp is not None and file_exp != experiment:
        raise ConfigError(f"config file is for experiment {file_exp!r}, not {experiment!r}")
    cfg.update({k: v for k, v in file_values.items() if k != "experiment"})
    cfg.update({k: v for k, v in flag_values.items() if v is not None})
    cfg = {k: _coerce(k, v) for k, v in cfg.items()}
    cfg["experiment"] = experiment
    validate(cfg)
    return cfg


def validate(cfg: dict) -> None:
    """Check every precondition of the target operation before computing anything."""
    exp = cfg["experiment"]

    def need(cond, msg):
        if not cond:
            raise ConfigError(msg)

    need(cfg["t"] > 0, f"precondition t > 0 violated (t = {cfg['t']:g})")
    need(cfg["N"] >= 1, f"precondition N >= 1 violated (N = {cfg['N']})")
    need(cfg["seed"] >= 0, f"seed must be a nonnegative integer (got {cfg['seed']})")
    need(cfg["format"] in ("csv", "jsonl"), f"format must be csv or jsonl (got {cfg['format']!r})")
    need(cfg["beta"] is None or cfg["beta"] >= 0, f"precondition beta >= 0 violated (beta = {cfg['beta']})")
    min_m = {"tails": 1000, "neg-moments": 1000}.get(exp, 100)
    if exp in ("partition", "fubini", "paley-zygmund", "event-a", "tails", "neg-moments", "converge"):
        need(cfg["M"] >= min_m, f"precondition M >= {min_m} violated (M = {cfg['M']})")
    if exp == "neg-moments":
        need(cfg["p"] > 0, f"precondition p > 0 violated (p = {cfg['p']:g})")
    if exp == "two-env":
        need(cfg["n_pairs"] >= 1, f"precondition n_pairs >= 1 violated (n_pairs = {cfg['n_pairs']})")
    grids = {}
    for key, kind in (("N_grid", int), ("m_grid", int), ("u_grid", float)):
        try:
            grids[key] = parse_grid(cfg[key], kind)
        except ValueError:
            raise ConfigError(f"{key} is not a valid grid: {cfg[key]!r}") from None
    if exp in ("overlap-table", "constants", "halving", "halftime", "converge"):
        need(grids["N_grid"], "N_grid must be nonempty")
        need(all(n >= 1 for n in grids["N_grid"]), "precondition N >= 1 violated in N_grid")
    if exp == "converge":
        need(len(grids["N_grid"]) >= 2, "converge needs at least two values in N_grid")
    if exp == "halving":
        need(all(n % 2 == 0 for n in grids["N_grid"]), "halving requires even N in N_grid")
    if exp in ("pinning", "convexity"):
        need(grids["m_grid"] and all(m >= 1 for m in grids["m_grid"]), "precondition m >= 1 violated in m_grid")
    if exp == "convexity":
        need(all(u > 0 for u in grids["u_grid"]), "precondition u > 0 violated in u_grid")
    try:
        for N in grids["N_grid"] if exp in ("overlap-table", "constants", "converge") else [cfg["N"]]:
            admissible_endpoint(cfg["t"], cfg["x"], N)
    except PolymerLabError as exc:
        raise ConfigError(f"precondition violated: {exc}") from None


def _endpoint(cfg):
    return admissible_endpoint(cfg["t"], cfg["x"], cfg["N"])


def _single(result: ExperimentResult) -> Outcome:
    verdict = "PASS" if result.passed else "FAIL"
    summary = (f"{result.experiment}: estimate={result.estimate:.6g} se={result.std_error:.3g} "
               f"bound={result.bound:.6g} {verdict}")
    return Outcome(result.passed, summary, [result])


def run_partition(cfg):
    horizon, e = _endpoint(cfg)
    return _single(mean_partition_check(horizon, cfg["beta"], e, cfg["M"], cfg["seed"]))


def run_fubini(cfg):
    horizon, e = _endpoint(cfg)
    return _single(second_moment_fubini_check(horizon, e, cfg["M"], cfg["seed"]))


def run_paley_zygmund(cfg):
    horizon, e = _endpoint(cfg)
    return _single(paley_zygmund_check(horizon, e, cfg["M"], cfg["seed"]))


def run_two_env(cfg):
    horizon, e = _endpoint(cfg)
    return _single(two_env_experiment(horizon, cfg["beta"], e, cfg["n_pairs"], cfg["seed"]))


def _ledger(cfg):
    return constants_pipeline(parse_grid(cfg["N_grid"], int), cfg["t"], cfg["x"])


def run_event_a(cfg):
    horizon, e = _endpoint(cfg)
    ledger = _ledger(cfg)
    return _single(event_A_probability(horizon, e, cfg["C"], cfg["M"], cfg["seed"], ledger))


def run_neg_moments(cfg):
    ledger = _ledger(cfg)
    res = negative_moment_estimate(cfg["N"], cfg["t"], cfg["x"], cfg["p"], cfg["M"], cfg["seed"], ledger)
    return _single(res)


def run_tails(cfg):
    ledger = _ledger(cfg)
    curve = lower_tail_curve(cfg["N"], cfg["t"], cfg["x"], parse_grid(cfg["u_grid"]),
                             cfg["M"], cfg["seed"], ledger)
    rows = list(zip(curve.u_grid, curve.empirical_prob, curve.std_error,
                    curve.gaussian_bound, curve.threshold))
    result = curve.result()
    out = _single(result)
    unresolved = result.details["unresolvable_u"]
    if unresolved:
        out.summary += f" (unresolvable at this M for u >= {min(unresolved):g})"
    out.header = ["u", "p_hat", "se", "gauss_bound", "threshold"]
    out.rows = rows
    return out


def _stabilized(ceilings, tol):
    """Last two increments of a running maximum are each below ``tol`` of its value."""
    if len(ceilings) < 3:
        return False
    inc = np.diff(ceilings[-3:])
    return bool(np.all(inc < tol * ceilings[-1]))


def run_overlap_table(cfg):
    grid = parse_grid(cfg["N_grid"], int)
    table = overlap_bound_table(grid, cfg["t"], cfg["x"])
    mgf_c = [r.mgf_ceiling for r in table]
    til_c = [r.tilted_ceiling for r in table]
    ok = _stabilized(mgf_c, cfg["tol"]) and _stabilized(til_c, cfg["tol"])
    result = ExperimentResult(
        "overlap-table", dict(N_grid=grid, t=cfg["t"], x=cfg["x"], tol=cfg["tol"]),
        max(mgf_c[-1], til_c[-1]), 0.0, math.inf, ok,
        dict(mgf_ceiling=mgf_c[-1], tilted_ceiling=til_c[-1]),
    )
    out = _single(result)
    out.summary = (f"overlap-table: kappa ceiling mgf={mgf_c[-1]:.6g} tilted={til_c[-1]:.6g} "
                   f"{'PASS' if ok else 'FAIL'} (stabilization tol {cfg['tol']:g})")
    out.header = ["N", "horizon", "endpoint", "alpha", "mgf", "scaled_tilted_mean",
                  "mgf_ceiling", "tilted_ceiling"]
    out.rows = [(r.N, r.horizon, r.endpoint, r.alpha, r.mgf, r.scaled_tilted_mean,
                 r.mgf_ceiling, r.tilted_ceiling) for r in table]
    return out


def run_pinning(cfg):
    grid = parse_grid(cfg["m_grid"], int)
    fit = fit_pinning_constants(grid)
    rows = []
    ok = True
    for m in grid + [cfg["heldout"]]:
        beta = m ** -0.5
        res = pinning_partition(m, beta)
        bound = fit.bound(m, beta)
        ok &= res.z <= bound
        rows.append((m, beta, res.z, res.tilted_mean, bound, int(m == cfg["heldout"])))
    result = ExperimentResult(
        "pinning", dict(m_grid=grid, heldout=cfg["heldout"]), fit.c1, 0.0, fit.c2, ok,
        dict(c1=fit.c1, c2=fit.c2),
    )
    out = _single(result)
    out.summary = f"pinning: c1={fit.c1:.6g} c2={fit.c2:g} {'PASS' if ok else 'FAIL'}"
    out.header = ["m", "beta", "z", "tilted_mean", "bound", "heldout"]
    out.rows = rows
    return out


def run_convexity(cfg):
    rows = []
    for m in parse_grid(cfg["m_grid"], int):
        for u in parse_grid(cfg["u_grid"]) + [m ** -0.5]:
            r = convexity_chain_check(m, u)
            rows.append((m, u, r.r1, r.r2, r.r3))
    worst = min(min(r[2:]) for r in rows)
    result = ExperimentResult("convexity", dict(m_grid=cfg["m_grid"], u_grid=cfg["u_grid"]),
                              worst, 0.0, 0.0, worst >= 0)
    out = _single(result)
    out.header = ["m", "u", "r1", "r2", "r3"]
    out.rows = rows
    return out


def run_halving(cfg):
    rows = []
    for N in parse_grid(cfg["N_grid"], int):
        beta = cfg["beta"] if cfg["beta"] is not None else N ** -0.5
        _, e = admissible_endpoint(1.0, cfg["x"], N)
        h1, h2 = halving_inequality_check(N, beta, e)
        rows.append((N, beta, h1, h2))
    worst = min(min(r[2], r[3]) for r in rows)
    result = ExperimentResult("halving", dict(N_grid=cfg["N_grid"], x=cfg["x"]), worst, 0.0, 0.0, worst >= 0)
    out = _single(result)
    out.header = ["N", "beta", "h1", "h2"]
    out.rows = rows
    return out


def run_halftime(cfg):
    rows = []
    running = -math.inf
    for N in parse_grid(cfg["N_grid"], int):
        _, e = admissible_endpoint(1.0, cfg["x"], N)
        ratio = halftime_conditioning_ratio(N, e)
        running = max(running, ratio)
        rows.append((N, ratio, running))
    increment = rows[-1][2] - rows[-2][2] if len(rows) > 1 else math.inf
    ok = increment < cfg["tol"] * rows[-1][2]
    result = ExperimentResult("halftime", dict(N_grid=cfg["N_grid"], x=cfg["x"], tol=cfg["tol"]),
                              rows[-1][2], 0.0, math.inf, ok, dict(last_increment=increment))
    out = _single(result)
    out.header = ["N", "ratio", "running_max"]
    out.rows = rows
    return out


def run_constants(cfg):
    ledger = _ledger(cfg)
    d = ledger.to_dict()
    numeric = [d[k] for k in ("L_hat", "K_hat", "C", "delta", "C_prime", "C_dprime", "c1", "c2", "C2")]
    ok = all(isinstance(v, float) and math.isfinite(v) and v > 0 for v in numeric)
    result = ExperimentResult("constants", dict(N_grid=list(ledger.grid), t=cfg["t"], x=cfg["x"]),
                              ledger.c1, 0.0, math.inf, ok, d)
    out = _single(result)
    out.summary = (f"constants: L_hat={ledger.L_hat:.6g} K_hat={ledger.K_hat:.6g} c1={ledger.c1:.6g} "
                   f"c2={ledger.c2:.6g} {'PASS' if ok else 'FAIL'}")
    out.header = ["key", "value"]
    out.rows = [(k, v) for k, v in d.items() if k not in ("grid",)]
    return out


def run_converge(cfg):
    table = convergence_probe(parse_grid(cfg["N_grid"], int), cfg["t"], cfg["x"], cfg["M"], cfg["seed"])
    rows = table.rows
    trend = rows[-2].ks_to_next < rows[0].ks_to_next if len(rows) >= 3 else True
    ok = trend and table.means_ok()
    result = ExperimentResult(
        "converge", dict(table.params, N_grid=[r.N for r in rows]),
        rows[-2].ks_to_next, 0.0, rows[0].ks_to_next, ok,
        dict(means=[r.mean for r in rows], ks=[r.ks_to_next for r in rows[:-1]]),
    )
    out = _single(result)
    out.header = ["N", "mean", "se", "ks_to_next"]
    out.rows = [(r.N, r.mean, r.std_error, "" if r.ks_to_next is None else r.ks_to_next) for r in rows]
    return out


HANDLERS = {
    "partition": run_partition, "fubini": run_fubini, "paley-zygmund": run_paley_zygmund,
    "two-env": run_two_env, "event-a": run_event_a, "neg-moments": run_neg_moments,
    "tails": run_tails, "overlap-table": run_overlap_table, "pinning": run_pinning,
    "convexity": run_convexity, "halving": run_halving, "halftime": run_halftime,
    "constants": run_constants, "converge": run_converge,
}


def config_hash(cfg: dict) -> str:
    keyed = {k: v for k, v in cfg.items() if k != "out"}
    return hashlib.sha256(json.dumps(keyed, sort_keys=True).encode()).hexdigest()[:16]


def provenance(cfg: dict) -> str:
    return (f"# polymer-lab {__version__} schema={SCHEMA_VERSION} experiment={cfg['experiment']} "
            f"config={config_hash(cfg)} seed={cfg['seed']}")


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def render(cfg: dict, outcome: Outcome) -> str:
    buf = io.StringIO()
    buf.write(provenance(cfg) + "\n")
    if cfg["format"] == "jsonl":
        for rec in outcome.records:
            buf.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")
        return buf.getvalue()
    writer = csv.writer(buf, lineterminator="\n")
    if outcome.header is not None:
        writer.writerow(outcome.header)
        writer.writerows([[_fmt(v) for v in row] for row in outcome.rows])
    else:
        writer.writerow(["experiment", "estimate", "std_error", "bound", "passed"])
        for r in outcome.records:
            writer.writerow([r.experiment, _fmt(r.estimate), _fmt(r.std_error), _fmt(r.bound), r.passed])
    return buf.getvalue()


def write_atomic(path, text: str) -> None:
    path = Path(path)
    directory = path.parent if str(path.parent) else Path(".")
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def run(cfg: dict, stdout=None) -> int:
    """Execute one resolved config; returns the process exit status."""
    stdout = stdout or sys.stdout
    outcome = HANDLERS[cfg["experiment"]](cfg)
    out = cfg["out"] or f"{cfg['experiment']}.{cfg['format']}"
    directory = Path(out).parent
    if not directory.is_dir():
        raise ConfigError(f"output directory does not exist: {directory}")
    try:
        write_atomic(out, render(cfg, outcome))
    except OSError as exc:
        raise ConfigError(f"cannot write output {out}: {exc.strerror}") from exc
    print(f"{outcome.summary} -> {out}", file=stdout)
    return 0 if outcome.passed else 2


def report(results_dir, stdout=None) -> int:
    """Aggregate ExperimentResult JSONL records into a pass/fail table."""
    stdout = stdout or sys.stdout
    directory = Path(results_dir)
    if not directory.is_dir():
        print(f"error: not a directory: {directory}", file=sys.stderr)
        return 1
    tally = {}
    bad = 0
    for path in sorted(directory.glob("*.jsonl")):
        for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip() or line.startswith("#"):
                continue
            try:
                rec = ExperimentResult.from_dict(json.loads(line))
            except (ValueError, TypeError) as exc:
                print(f"warning: {path.name}:{lineno}: unparseable record ({exc})", file=sys.stderr)
                bad += 1
                continue
            ok, fail = tally.get(rec.experiment, (0, 0))
            tally[rec.experiment] = (ok + rec.passed, fail + (not rec.passed))
    writer = csv.writer(stdout, lineterminator="\n")
    writer.writerow(["experiment", "inequality", "passed", "failed", "status"])
    for exp in sorted(tally):
        ok, fail = tally[exp]
        writer.writerow([exp, INEQUALITIES.get(exp, ""), ok, fail, "FAIL" if fail else "PASS"])
    if bad:
        return 1
    return 2 if any(fail for _, fail in tally.values()) else 0


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="polymer-lab", description=__doc__.splitlines()[0])
    parser.add_argument("experiment", help=f"one of: {', '.join(EXPERIMENTS)}, or 'report'")
    parser.add_argument("results_dir", nargs="?", help="directory of JSONL results (report only)")
    parser.add_argument("--config", help="flat key = value config file")
    for key in sorted(BASE_DEFAULTS):
        parser.add_argument(f"--{key}", dest=key, default=None)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.experiment == "report":
            if not args.results_dir:
                raise ConfigError("report needs a results directory")
            return report(args.results_dir)
        if args.results_dir:
            raise ConfigError(f"unexpected argument {args.results_dir!r}")
        file_values = read_config_file(args.config) if args.config else {}
        flags = {k: getattr(args, k) for k in BASE_DEFAULTS}
        cfg = resolve_config(args.experiment, file_values, flags)
        return run(cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

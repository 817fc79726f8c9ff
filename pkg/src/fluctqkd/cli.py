"""Command-line front end: ``simulate``, ``estimate``, ``sweep``, ``oracle-check``.

Exit codes: 0 success, 2 configuration / usage error, 3 ratio-ordering
condition violated, 4 other estimation error, 5 oracle check failed.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import dataclasses
import io
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import oracle
from .config import ENGINES, RunConfig, load_config
from .errors import ConditionViolated, ConfigError, FluctQKDError
from .estimator import REPORT_COLUMNS, BoundReport, estimate, key_rate
from .simulator import ObservedStats, Tally, observe, run_expectation, run_monte_carlo, write_pulse_records
from .source import AykiSourceParams

EXIT_CONFIG, EXIT_CONDITION, EXIT_ESTIMATE, EXIT_ORACLE = 2, 3, 4, 5

ESTIMATE_COLUMNS = REPORT_COLUMNS + ("key_rate",)
SWEEP_COLUMNS = ("delta", "eps", "variant", "condition_ok", "key_rate", "key_rate_zero", "relative_rate",
                 "n1s_lb", "delta1s_lb", "e1s_ub")


def _fmt(v):
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write(path, text):
    if path is None or str(path) == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _note(msg):
    print(f"note: {msg}", file=sys.stderr)


# --------------------------------------------------------------------------
# truth / observed files


def tally_to_text(t: Tally) -> str:
    lines = ["[truth]"]
    for k, v in t.as_dict().items():
        if isinstance(v, list):
            v = ", ".join(_fmt(x) for x in v)
        elif isinstance(v, tuple):
            v = ", ".join(_fmt(x) for x in v)
        else:
            v = _fmt(v)
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"


def read_section(path, section):
    p = configparser.ConfigParser()
    p.optionxform = str
    try:
        with open(path) as fh:
            p.read_file(fh)
    except (OSError, configparser.Error) as e:
        raise ConfigError(f"cannot read {path}: {e}") from None
    if not p.has_section(section):
        raise ConfigError(f"{path}: missing [{section}] section")
    return dict(p.items(section))


def read_observed(path) -> ObservedStats:
    try:
        return ObservedStats.from_mapping(read_section(path, "observed"))
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{path}: malformed observed stats ({e})") from None


def truth_e1d(path) -> float:
    d = read_section(path, "truth")
    n1d = float(d["n_kd"].split(",")[1])
    return float(d["err_1d"]) / n1d if n1d > 0 else 0.0


# --------------------------------------------------------------------------
# shared pieces


def run_engine(cfg: RunConfig, source, seed=None):
    if cfg.engine == "expectation":
        return run_expectation(source, cfg.channel, cfg.pulses, n_nodes=cfg.grid_nodes), []
    return run_monte_carlo(source, cfg.channel, cfg.pulses, cfg.seed if seed is None else seed,
                           keep_records=cfg.records)


def _variants(v):
    return ("economic", "normal") if v == "both" else (v,)


def _y0(cfg: RunConfig, source):
    if isinstance(source, AykiSourceParams) or source.p_0 == 0:
        return cfg.channel.d_B if cfg.y0_upper is None else cfg.y0_upper
    return cfg.y0_upper


def estimate_rows(cfg: RunConfig, source, obs: ObservedStats, e1d, variants):
    out = []
    for v in variants:
        rep = estimate(obs, source, v, e1d=e1d, y0_upper=_y0(cfg, source), y0_lower=cfg.y0_lower)
        out.append((rep, key_rate(obs, rep, cfg.f_ec, cfg.sifting)))
    return out


# --------------------------------------------------------------------------
# commands


def cmd_simulate(args, cfg: RunConfig):
    if args.engine:
        cfg = dataclasses.replace(cfg, engine=ENGINES[args.engine])
    if args.pulses:
        cfg = dataclasses.replace(cfg, pulses=args.pulses)
    if args.seed is not None:
        if cfg.engine == "expectation":
            _note("expectation engine is deterministic; --seed is ignored")
        cfg = dataclasses.replace(cfg, seed=args.seed)
    tally, records = run_engine(cfg, cfg.source)
    out = Path(args.out)
    _write(out, observe(tally).to_text())
    if not args.no_truth:
        if args.truth:
            _write(args.truth, tally_to_text(tally))
        elif str(out) != "-":
            _write(out.with_suffix(".truth.txt"), tally_to_text(tally))
        else:
            _note("observed stats went to stdout; pass --truth PATH to keep the ground truth")
    if args.records:
        if cfg.engine == "expectation":
            _note("expectation engine produces no pulse records")
        else:
            write_pulse_records(records, args.records)
    return 0


def cmd_estimate(args, cfg: RunConfig):
    obs = read_observed(args.observed)
    e1d = cfg.e1d
    if e1d is None and args.truth:
        e1d = truth_e1d(args.truth)
    if e1d is None:
        _note("no e1d given; using the observed decoy QBER as a proxy")
    variant = args.variant or cfg.variant
    rows = estimate_rows(cfg, cfg.source, obs, e1d, _variants(variant))
    if args.format == "text":
        text = "\n".join(rep.to_text() + f"key_rate = {_fmt(rate)}\n" for rep, rate in rows)
    else:
        text = _csv_text(ESTIMATE_COLUMNS, [rep.csv_row() + [_fmt(rate)] for rep, rate in rows])
    _write(args.out, text)
    return 0


def sweep_point(cfg: RunConfig, delta, eps, variants):
    source = cfg.with_fluctuation(delta, eps)
    tally, _ = run_engine(cfg, source)
    obs = observe(tally)
    e1d = cfg.e1d
    if e1d is None:
        e1d = tally.err_1d / tally.n_kd[1] if tally.n_kd[1] > 0 else 0.0
    out = {}
    for v in variants:
        try:
            (rep, rate), = estimate_rows(cfg, source, obs, e1d, (v,))
            out[v] = (True, rate, rep.n1s_lb, rep.delta1s_lb, rep.e1s_ub)
        except ConditionViolated:
            out[v] = (False, 0.0, math.nan, math.nan, math.nan)
    return out


def sweep_table(cfg: RunConfig, variants, jobs=1):
    """Rows ``(delta, eps, variant, ...)`` sorted by ``(delta, eps, variant)``."""
    points = sorted({(float(d), float(e)) for d in cfg.sweep_delta for e in cfg.sweep_eps})
    todo = [(0.0, 0.0)] + points
    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            results = list(pool.map(lambda pt: sweep_point(cfg, *pt, variants), todo))
    else:
        results = [sweep_point(cfg, *pt, variants) for pt in todo]
    zero = results[0]
    rows = []
    for (d, e), res in zip(points, results[1:]):
        for v in variants:
            ok, rate, n1s, d1s, e1s = res[v]
            r0 = zero[v][1]
            rel = rate / r0 if r0 > 0 else math.nan
            rows.append([d, e, v, ok, rate, r0, rel, n1s, d1s, e1s])
    rows.sort(key=lambda r: (r[0], r[1], r[2]))
    return rows


def cmd_sweep(args, cfg: RunConfig):
    if args.engine:
        cfg = dataclasses.replace(cfg, engine=ENGINES[args.engine])
    if args.pulses:
        cfg = dataclasses.replace(cfg, pulses=args.pulses)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    rows = sweep_table(cfg, _variants(args.variant or cfg.variant), args.jobs)
    _write(args.out, _csv_text(SWEEP_COLUMNS, [[_fmt(x) for x in r] for r in rows]))
    return 0


def cmd_oracle_check(args, cfg=None):
    lines = []
    summary = oracle.check_batch(args.count, args.seed)
    lines.append(f"random instances: {summary.count}, chain failures: {summary.chain_failures}, "
                 f"slack failures: {summary.slack_failures}, error-sandwich failures: {summary.error_failures}, "
                 f"all-pulse relaxation checked on {summary.relaxed_applicable}, min slack {summary.min_slack:.3e}")
    ok = summary.passed

    C, ck = oracle.click_sets(oracle.ten_pulse_instance())
    ten_ok = C == {2, 3, 5, 6, 9, 10} and ck[0] == {2, 5, 10} and ck[1] == {3, 6, 9}
    lines.append(f"ten-pulse click sets: C={sorted(C)} c_0={sorted(ck[0])} c_1={sorted(ck[1])} "
                 f"{'PASS' if ten_ok else 'FAIL'}")

    rng = np.random.default_rng(args.seed)
    adv = oracle.verify_chain(oracle.random_instance(rng, "adversarial", M=500))
    lines.append(f"adversarial instance chain: {'PASS' if adv.passed else 'FAIL'}")

    w = oracle.hwang_witness()
    s_d, s_s = oracle.hwang_yields(w)
    differs = not np.allclose(s_d[1:], s_s[1:])
    hw = oracle.verify_chain(w).passed and differs
    lines.append(f"equal-yield-violating witness: yields differ={differs}, chain "
                 f"{'PASS' if hw else 'FAIL'}")
    ok = ok and ten_ok and adv.passed and hw
    lines.append("oracle-check: " + ("PASS" if ok else "FAIL"))
    _write(args.out, "\n".join(lines) + "\n")
    return 0 if ok else EXIT_ORACLE


# --------------------------------------------------------------------------


def build_parser():
    ap = argparse.ArgumentParser(prog="fluctqkd", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="run configuration (INI)")
        p.add_argument("--out", default="-", help="output path ('-' for stdout)")

    p = sub.add_parser("simulate", help="run a simulation and write observed / ground-truth stats")
    common(p)
    p.set_defaults(out="observed.txt")
    p.add_argument("--seed", type=int)
    p.add_argument("--engine", choices=sorted(ENGINES))
    p.add_argument("--pulses", type=lambda s: int(float(s)))
    p.add_argument("--truth", help="ground-truth output path (default: <out>.truth.txt)")
    p.add_argument("--no-truth", action="store_true")
    p.add_argument("--records", help="CSV path for the retained pulse records")

    p = sub.add_parser("estimate", help="compute bounds and key rate from observed stats")
    common(p)
    p.add_argument("--observed", required=True)
    p.add_argument("--truth", help="ground-truth file; supplies the single-photon decoy QBER")
    p.add_argument("--variant", choices=("economic", "normal", "both"))
    p.add_argument("--format", choices=("csv", "text"), default="csv")

    p = sub.add_parser("sweep", help="key rate relative to zero fluctuation over a fluctuation grid")
    common(p)
    p.add_argument("--variant", choices=("economic", "normal", "both"))
    p.add_argument("--engine", choices=sorted(ENGINES))
    p.add_argument("--seed", type=int)
    p.add_argument("--pulses", type=lambda s: int(float(s)))
    p.add_argument("--jobs", type=int, default=1)

    p = sub.add_parser("oracle-check", help="verify the derivation on random exact instances")
    common(p, config_required=False)
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    return ap


COMMANDS = {"simulate": cmd_simulate, "estimate": cmd_estimate, "sweep": cmd_sweep, "oracle-check": cmd_oracle_check}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if getattr(args, "config", None) else None
        return COMMANDS[args.command](args, cfg)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except ConditionViolated as e:
        print(f"error: ConditionViolated: {e}", file=sys.stderr)
        return EXIT_CONDITION
    except FluctQKDError as e:
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_ESTIMATE


if __name__ == "__main__":
    sys.exit(main())

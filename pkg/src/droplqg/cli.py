"""Command-line entry point.

Subcommands: validate, synthesize, simulate, verify, compare. Machine-readable
artifacts (JSON/CSV) go to the output directory; short human summaries go to
stdout. Exit codes: 0 success, 1 verification failure, 2 usage/config error,
3 numerical failure.

Seeds, replication counts and sweep grids always come from the config file or
explicit flags, never from hidden defaults, so every run is reproducible from
its inputs.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import oracle, theory
from .errors import ConfigError, EnumerationCapError, NumericalError, \
    StructuralError
from .model import SystemSpec, spec_from_json, validate_spec
from .simulator import (LinearStrategy, monte_carlo, optimal_strategy,
                        random_strategy, run_trajectory, simulate_ensemble,
                        strategy_from_json, trajectory_to_csv, zero_strategy)
from .synthesis import synthesize

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


@dataclass(frozen=True)
class ExperimentConfig:
    system: SystemSpec
    seed: int | None = None
    reps: int | None = None
    strategy: str = "optimal"
    enumeration_cap_bits: int = 20
    workers: int = 1
    out_dir: str = "."
    sweep: tuple | None = None
    compare_strategies: tuple = ("optimal", "zero")


def parse_config(source) -> ExperimentConfig:
    """Read and validate an experiment config from a path, file object, or
    parsed dict. Raises ConfigError with JSON-pointer locations."""
    if isinstance(source, dict):
        doc = source
    elif hasattr(source, "read"):
        try:
            doc = json.load(source)
        except json.JSONDecodeError as exc:
            raise ConfigError([("", f"malformed JSON: {exc}")])
    else:
        path = Path(source)
        if not path.exists():
            raise ConfigError([("", f"config file not found: {path}")])
        with open(path) as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError([("", f"malformed JSON: {exc}")])

    if not isinstance(doc, dict):
        raise ConfigError([("", "config must be a JSON object")])
    errors = []
    if "system" not in doc:
        raise ConfigError([("/system", "missing required key")])
    system = spec_from_json(doc["system"], ptr="/system")

    def opt_int(key, minimum=None):
        if key not in doc or doc[key] is None:
            return None
        val = doc[key]
        if not isinstance(val, int) or isinstance(val, bool):
            errors.append((f"/{key}", f"expected an integer, got {val!r}"))
            return None
        if minimum is not None and val < minimum:
            errors.append((f"/{key}", f"must be >= {minimum}, got {val}"))
            return None
        return val

    seed = opt_int("seed", 0)
    reps = opt_int("reps", 1)
    cap = opt_int("enumeration_cap_bits", 1)
    workers = opt_int("workers", 1)

    strategy = doc.get("strategy", "optimal")
    if not isinstance(strategy, str):
        errors.append(("/strategy", f"expected a string, got {strategy!r}"))
        strategy = "optimal"

    sweep = None
    if "sweep" in doc:
        raw = doc["sweep"]
        if not isinstance(raw, list) or not raw:
            errors.append(("/sweep", "expected a non-empty array"))
        else:
            sweep = []
            for k, entry in enumerate(raw):
                if isinstance(entry, (int, float)) and not isinstance(entry, bool):
                    vec = (float(entry),) * system.N
                elif isinstance(entry, list) and len(entry) == system.N \
                        and all(isinstance(v, (int, float)) for v in entry):
                    vec = tuple(float(v) for v in entry)
                else:
                    errors.append((f"/sweep/{k}",
                                   f"expected a number or a length-{system.N} array"))
                    continue
                if not all(0.0 <= v <= 1.0 for v in vec):
                    errors.append((f"/sweep/{k}", "drop probabilities must lie in [0, 1]"))
                    continue
                sweep.append(vec)
            sweep = tuple(sweep)

    compare_strategies = doc.get("compare_strategies", ["optimal", "zero"])
    if not isinstance(compare_strategies, list) \
            or not all(isinstance(s, str) for s in compare_strategies):
        errors.append(("/compare_strategies", "expected an array of strings"))
        compare_strategies = ["optimal", "zero"]

    out_dir = doc.get("out_dir", ".")
    if not isinstance(out_dir, str):
        errors.append(("/out_dir", f"expected a string, got {out_dir!r}"))
        out_dir = "."

    if errors:
        raise ConfigError(errors)
    return ExperimentConfig(
        system=system, seed=seed, reps=reps, strategy=strategy,
        enumeration_cap_bits=cap if cap is not None else 20,
        workers=workers if workers is not None else 1,
        out_dir=out_dir, sweep=sweep,
        compare_strategies=tuple(compare_strategies))


def _resolve_strategy(name: str, spec: SystemSpec, schedule=None) -> LinearStrategy:
    if name == "optimal":
        sched = schedule if schedule is not None else synthesize(spec)
        return optimal_strategy(sched)
    if name == "zero":
        return zero_strategy(spec)
    path = Path(name)
    if not path.exists():
        raise ConfigError([("/strategy", f"strategy file not found: {name}")])
    with open(path) as fh:
        doc = json.load(fh)
    try:
        return strategy_from_json(doc, spec)
    except StructuralError as exc:
        raise ConfigError([("/strategy", str(exc))])


def _write_json(obj, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _require_run_params(cfg: ExperimentConfig, need_reps=True):
    missing = []
    if cfg.seed is None:
        missing.append("seed")
    if need_reps and cfg.reps is None:
        missing.append("reps")
    if missing:
        raise ConfigError([(f"/{k}", "required for this command (set it in the "
                            "config or pass the flag)") for k in missing])


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _cmd_validate(cfg: ExperimentConfig, out: Path) -> int:
    report = validate_spec(cfg.system)
    doc = {"ok": report.ok,
           "violations": [{"rule": v.rule, "subject": v.subject,
                           "detail": v.detail} for v in report.violations]}
    _write_json(doc, out / "validation.json")
    print(f"validate: {'ok' if report.ok else 'INVALID'}")
    for v in report.violations:
        print(f"  {v}")
    return EXIT_OK if report.ok else EXIT_VERIFY_FAILED


def _cmd_synthesize(cfg: ExperimentConfig, out: Path) -> int:
    schedule = synthesize(cfg.system)
    _write_json(schedule.to_json_dict(), out / "schedule.json")
    jstar = theory.optimal_cost_closed_form(cfg.system, schedule)
    print(f"synthesize: wrote {out / 'schedule.json'}  (optimal cost {jstar:.12g})")
    return EXIT_OK


def _cmd_simulate(cfg: ExperimentConfig, out: Path, fmt: str,
                  dump_trajectories: int) -> int:
    _require_run_params(cfg)
    spec = cfg.system
    schedule = synthesize(spec) if cfg.strategy == "optimal" else None
    strategy = _resolve_strategy(cfg.strategy, spec, schedule)
    report = monte_carlo(spec, strategy, cfg.reps, cfg.seed, workers=cfg.workers)
    if fmt == "json":
        _write_json(report.to_json_dict(), out / "cost_report.json")
        target = out / "cost_report.json"
    else:
        target = out / "cost_report.csv"
        target.parent.mkdir(parents=True, exist_ok=True)
        with open(target, "w") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["reps", "mean", "se", "seed", "se_defined", "backend"])
            writer.writerow([report.reps, repr(report.mean), repr(report.se),
                             report.seed, report.se_defined, report.backend])
    for r in range(dump_trajectories):
        rec = run_trajectory(spec, strategy, cfg.seed, rep=r)
        with open(out / f"trajectory_{r}.csv", "w") as fh:
            trajectory_to_csv(rec, spec, fh)
    print(f"simulate: mean {report.mean:.12g} +- {report.se:.3g} "
          f"({report.reps} reps, backend {report.backend}) -> {target}")
    return EXIT_OK


def _verify_battery(cfg: ExperimentConfig, dump_sequences=None) -> list:
    """Oracle triangle, estimator exactness, orthogonality statistics and
    decomposition residuals on the configured instance. Deterministic in
    (config, seed)."""
    spec = cfg.system
    seed = cfg.seed
    reps = cfg.reps
    checks = []

    def add(name, ok, detail):
        checks.append({"check": name, "ok": bool(ok), "detail": detail})

    schedule = synthesize(spec)
    opt = optimal_strategy(schedule)
    jstar = theory.optimal_cost_closed_form(spec, schedule)

    try:
        exact = oracle.exact_cost_enumerated(spec, opt, cfg.enumeration_cap_bits)
        rel = abs(exact.value - jstar) / max(1.0, abs(jstar))
        add("oracle-triangle/exact-vs-closed-form", rel <= 1e-9,
            f"closed form {jstar:.12g}, enumerated {exact.value:.12g}, rel gap {rel:.3e}")
        psum = float(np.sum(exact.probs))
        add("oracle-triangle/probability-mass", abs(psum - 1.0) <= 1e-12,
            f"sum of sequence probabilities = {psum:.15f}")
        if dump_sequences is not None:
            dump_sequences.parent.mkdir(parents=True, exist_ok=True)
            with open(dump_sequences, "w") as fh:
                writer = csv.writer(fh, lineterminator="\n")
                writer.writerow(["gamma_bits", "probability", "conditional_cost"])
                for bits, p, c in exact.to_csv_rows():
                    writer.writerow([bits, repr(p), repr(c)])
    except EnumerationCapError as exc:
        add("oracle-triangle/exact-vs-closed-form", True, f"skipped: {exc}")

    mc, ens = simulate_ensemble(spec, opt, reps, seed, workers=cfg.workers)
    gap = abs(mc.mean - jstar)
    add("oracle-triangle/monte-carlo", gap <= 3.0 * mc.se,
        f"MC {mc.mean:.6g} +- {mc.se:.3g}, closed form {jstar:.6g} "
        f"({gap / mc.se if mc.se > 0 else 0.0:.2f} SE)")

    # estimator exactness: delivered => error exactly zero
    soff = spec.state_offsets()
    worst = 0.0
    for i in range(spec.N):
        mask = ens.gamma[:, :, i] == 1
        err = np.abs(ens.x_tilde[:, :, soff[i]:soff[i + 1]])[mask]
        if err.size:
            worst = max(worst, float(err.max()))
    add("estimator/delivered-error-zero", worst == 0.0,
        f"max |xtilde| over delivered packets = {worst}")

    ortho = theory.orthogonality_check(ens)
    sig = ortho.max_cross_sigmas()
    add("orthogonality/cross-terms", sig <= 4.0,
        f"worst |estimate|/SE over estimate-error and error-error cross terms = {sig:.2f}")
    worst_split = max((abs(e.value) / e.se if e.se > 0 else 0.0)
                      for e in ortho.cost_split)
    add("orthogonality/cost-split", worst_split <= 4.0,
        f"worst cost-split residual = {worst_split:.2f} SE")
    worst_cond = 0.0
    for rows in ortho.cond_means:
        for _, _, mean, se in rows:
            nz = se > 0
            if np.any(nz):
                worst_cond = max(worst_cond, float(np.max(np.abs(mean[nz]) / se[nz])))
    add("orthogonality/conditional-means", worst_cond <= 4.0,
        f"worst conditional error mean = {worst_cond:.2f} SE")

    strategies = [("optimal", opt)]
    for k in range(2):
        strategies.append((f"random-{k}", random_strategy(spec, seed + 1000 + k)))
    for name, strat in strategies:
        rep = theory.decomposition_check(spec, schedule, strat, reps, seed,
                                         workers=cfg.workers)
        res = rep.residual
        sig = abs(res.value) / res.se if res.se > 0 else 0.0
        add(f"decomposition/residual-{name}", sig <= 3.0 or res.value == 0.0,
            f"residual {res.value:.3e} +- {res.se:.3e} ({sig:.2f} SE)")
    return checks


def _cmd_verify(cfg: ExperimentConfig, out: Path, dump_sequences: bool) -> int:
    _require_run_params(cfg)
    target = out / "sequences.csv" if dump_sequences else None
    checks = _verify_battery(cfg, dump_sequences=target)
    ok = all(c["ok"] for c in checks)
    _write_json({"ok": ok, "checks": checks}, out / "verify_report.json")
    for c in checks:
        print(f"[{'PASS' if c['ok'] else 'FAIL'}] {c['check']}: {c['detail']}")
    print(f"verify: {'ok' if ok else 'FAILED'}")
    return EXIT_OK if ok else EXIT_VERIFY_FAILED


def _cmd_compare(cfg: ExperimentConfig, out: Path) -> int:
    _require_run_params(cfg)
    if not cfg.sweep:
        raise ConfigError([("/sweep", "compare needs a sweep grid in the config")])
    spec = cfg.system
    rows = []
    jstar_by_p = []
    for pvec in cfg.sweep:
        spec_p = dataclasses.replace(spec, drop_prob=pvec)
        schedule = synthesize(spec_p)
        jstar = theory.optimal_cost_closed_form(spec_p, schedule)
        jstar_by_p.append(jstar)
        for name in cfg.compare_strategies:
            strategy = _resolve_strategy(name, spec_p, schedule)
            mc = monte_carlo(spec_p, strategy, cfg.reps, cfg.seed,
                             workers=cfg.workers)
            rows.append(list(pvec) + [name, repr(jstar), repr(mc.mean), repr(mc.se)])

    target = out / "compare.csv"
    target.parent.mkdir(parents=True, exist_ok=True)
    with open(target, "w") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"p{i + 1}" for i in range(spec.N)]
                        + ["strategy", "j_star", "mc_mean", "mc_se"])
        writer.writerows(rows)
    monotone = all(b >= a - 1e-12 for a, b in zip(jstar_by_p, jstar_by_p[1:]))
    print(f"compare: wrote {target} ({len(rows)} rows); "
          f"optimal cost {'non-decreasing' if monotone else 'NOT monotone'} "
          "along the sweep (reported, not asserted)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="droplqg",
        description="Synthesize and verify optimal local/remote controllers "
                    "over lossy uplinks.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
            ("validate", "check the instance against the model assumptions"),
            ("synthesize", "write the Riccati schedule and gains as JSON"),
            ("simulate", "Monte Carlo cost of a strategy"),
            ("verify", "run the oracle/statistics battery; exit 1 on failure"),
            ("compare", "cost table across strategies and drop-probability sweeps")]:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="experiment config JSON")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--reps", type=int, default=None)
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--strategy", default=None,
                       help="optimal | zero | path to a gain file")
        p.add_argument("--workers", type=int, default=None)
        p.add_argument("--format", choices=("json", "csv"), default="json")
        if name == "simulate":
            p.add_argument("--dump-trajectories", type=int, default=0,
                           help="also write the first N trajectories as CSV")
        if name == "verify":
            p.add_argument("--dump-sequences", action="store_true",
                           help="write per-channel-sequence oracle detail as CSV")
    return parser


def execute(command: str, cfg: ExperimentConfig, out_dir=None, fmt="json",
            dump_trajectories=0, dump_sequences=False) -> int:
    out = Path(out_dir if out_dir is not None else cfg.out_dir)
    if command == "validate":
        return _cmd_validate(cfg, out)
    if command == "synthesize":
        return _cmd_synthesize(cfg, out)
    if command == "simulate":
        return _cmd_simulate(cfg, out, fmt, dump_trajectories)
    if command == "verify":
        return _cmd_verify(cfg, out, dump_sequences)
    if command == "compare":
        return _cmd_compare(cfg, out)
    raise ConfigError([("", f"unknown command {command!r}")])


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = parse_config(args.config)
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.reps is not None:
            if args.reps < 1:
                raise ConfigError([("/reps", f"must be >= 1, got {args.reps}")])
            overrides["reps"] = args.reps
        if args.strategy is not None:
            overrides["strategy"] = args.strategy
        if args.workers is not None:
            overrides["workers"] = args.workers
        if overrides:
            cfg = dataclasses.replace(cfg, **overrides)
        return execute(args.command, cfg, out_dir=args.out, fmt=args.format,
                       dump_trajectories=getattr(args, "dump_trajectories", 0),
                       dump_sequences=getattr(args, "dump_sequences", False))
    except ConfigError as exc:
        for ptr, msg in exc.errors:
            print(f"config error at {ptr or '/'}: {msg}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except StructuralError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())

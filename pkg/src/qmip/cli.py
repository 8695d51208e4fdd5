"""Batch experiment runner: seeded Monte Carlo, exact mode, diagnostics, game tools.

Subcommands: run, diagnose, classical, gap, validate. Reports are canonical
JSON: sorted keys, floats at 12 significant digits, rationals as "num/den"
strings, so identical (config, seed) runs produce byte-identical output.
"""

from __future__ import annotations

import argparse
import json
import sys
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .sat import (
    Assignment,
    best_assignment,
    parse_formula,
    to_json_dict,
    unsat_gap,
    validate_regularity,
)
from .quantum import check_family_completeness, family_from_json
from .protocol import ProtocolEngine, legal_tuples
from .strategies import strategy_from_spec
from .diagnostics import (
    compute_outcome_weights,
    constants_with,
    diagnose_family,
    posterior_lower_bound,
    posterior_table,
)
from .game import game_value_bruteforce, game_value_of, round_quantum_to_classical

SCHEMA = "qmip-report/1"


class CliError(ValueError):
    pass


def canonical(obj):
    """Make a report JSON-stable: 12-significant-digit floats, num/den rationals."""
    if isinstance(obj, dict):
        return {str(k): canonical(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [canonical(v) for v in obj]
    if isinstance(obj, Fraction):
        return f"{obj.numerator}/{obj.denominator}"
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(f"{float(obj):.12g}")
    return obj


def dump_report(report: dict) -> str:
    return json.dumps(canonical(report), sort_keys=True, indent=2) + "\n"


def write_output(text: str, out: str | None):
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def provenance(seed=None) -> dict:
    block = {"package": f"qmip {__version__}", "numpy": np.__version__, "schema": SCHEMA}
    if seed is not None:
        block["seed"] = int(seed)
    return block


def load_formula(path: str):
    return parse_formula(Path(path).read_text())


def load_strategy_spec(text: str) -> dict:
    """Inline JSON, a path to a JSON file, or a bare kind name."""
    if text.strip().startswith("{"):
        return json.loads(text)
    p = Path(text)
    if p.exists():
        return json.loads(p.read_text())
    return {"kind": text}


def parse_overrides(pairs: list[str]) -> dict[str, float]:
    out = {}
    for pair in pairs or []:
        if "=" not in pair:
            raise CliError(f"--set expects name=value, got {pair!r}")
        key, val = pair.split("=", 1)
        out[key.strip()] = float(val)
    return out


def merge_config(args: argparse.Namespace) -> argparse.Namespace:
    """Fill unset flags from the --config JSON file (flags win)."""
    if not getattr(args, "config", None):
        return args
    cfg = json.loads(Path(args.config).read_text())
    for key, val in cfg.items():
        attr = key.replace("-", "_")
        if not hasattr(args, attr):
            raise CliError(f"unknown config key {key!r}")
        if getattr(args, attr) in (None, [], False):
            setattr(args, attr, val)
    return args


# -- subcommands ------------------------------------------------------------------------


def cmd_run(args) -> dict:
    f = load_formula(args.formula)
    spec = load_strategy_spec(args.strategy or "honest")
    strategy = strategy_from_spec(spec, f, private_dim=args.d)
    engine = ProtocolEngine(f, strategy)
    report = {
        "schema": SCHEMA,
        "command": "run",
        "formula": to_json_dict(f),
        "strategy": spec,
        "d": args.d,
        "mode": args.mode,
        "provenance": provenance(args.seed if args.mode == "sampled" else None),
    }
    if args.mode == "exact":
        report["accept_rate"] = engine.acceptance_exact()
        report["check_pass_rates"] = engine.check_pass_rates_exact()
    else:
        if args.seed is None:
            raise CliError("sampled mode requires --seed")
        if args.trials < 1:
            raise CliError("sampled mode requires --trials >= 1")
        if args.transcripts:
            summary, transcripts = engine.run_many(args.trials, args.seed,
                                                   collect_transcripts=True)
            with open(args.transcripts, "w") as fh:
                for tr in transcripts:
                    fh.write(json.dumps(canonical(tr.to_json_dict()), sort_keys=True) + "\n")
        else:
            summary = engine.run_many(args.trials, args.seed)
        report["trials"] = summary.trials
        report["seed"] = args.seed
        report["accept_rate"] = summary.accept_rate
        report["check_failure_rates"] = {
            name: count / summary.trials
            for name, count in sorted(summary.check_failures.items())
        }
    return report


def _bucket_json(buckets: dict) -> dict:
    return {("inf" if k is None else str(k)): sorted(v) for k, v in buckets.items()}


def cmd_diagnose(args) -> dict:
    f = load_formula(args.formula)
    fam = family_from_json(Path(args.family).read_text())
    overrides = parse_overrides(args.set)
    gamma = float(unsat_gap(f)) if args.gamma is None else args.gamma
    rep = diagnose_family(f, fam, gamma=gamma, constants=overrides or None)
    outcomes = []
    for od in rep.outcomes:
        entry = {
            "outcome": od.outcome,
            "probability": od.probability,
            "regime": od.regime,
            "W_A": od.weights.w_a,
            "W_B": od.weights.w_b,
            "W_tilde": od.weights.w_tilde,
            "A_of": list(od.weights.a_of),
            "B_of": list(od.weights.b_of),
            "u_of": list(od.weights.u_of),
            "u_buckets": _bucket_json(od.u_buckets),
            "A_buckets": _bucket_json(od.a_buckets),
            "B_buckets": _bucket_json(od.b_buckets),
            "posterior_total": od.posterior_total,
            "lower_bound_violations": od.lower_bound_violations,
            "worst_lower_bound_excess": od.worst_lower_bound_excess,
        }
        if od.small_regime is not None:
            sr = od.small_regime
            entry["small_regime"] = {
                "alice_bad_set": _bad_set_json(sr.alice_bad_set),
                "bob_bad_set": _bad_set_json(sr.bob_bad_set),
                "F": list(sr.f_set) if sr.f_set is not None else None,
                "G": list(sr.g_set) if sr.g_set is not None else None,
                "H": list(sr.h_set) if sr.h_set is not None else None,
                "violations": list(sr.violations),
            }
        if od.large_regime_bad_set is not None:
            entry["large_regime_bad_set"] = _bad_set_json(od.large_regime_bad_set)
        outcomes.append(entry)
    if args.csv:
        _write_posterior_csv(f, fam, args.csv)
    return {
        "schema": SCHEMA,
        "command": "diagnose",
        "gamma": gamma,
        "constants": rep.constants,
        "outcomes": outcomes,
        "skipped_outcomes": list(rep.skipped_outcomes),
        "findings": [{"kind": fi.kind, "detail": fi.detail} for fi in rep.findings],
        "provenance": provenance(),
    }


def _bad_set_json(bs) -> dict | None:
    if bs is None:
        return None
    return {
        "size": len(bs),
        "p": bs.p,
        "probability": bs.probability,
        "construction": bs.construction,
    }


def _write_posterior_csv(f, fam, path: str):
    lines = ["k,y,y_tilde,x,x_tilde,exact,lower_bound"]
    for k in range(fam.num_outcomes):
        try:
            table = posterior_table(f, fam, k)
        except Exception:
            continue
        w = compute_outcome_weights(f, fam, k)
        for r in legal_tuples(f):
            lo = posterior_lower_bound(f, w, r)
            lines.append(f"{k},{r.y},{r.y_tilde},{r.x},{r.x_tilde},"
                         f"{table[r]:.12g},{lo:.12g}")
    Path(path).write_text("\n".join(lines) + "\n")


def cmd_classical(args) -> dict:
    f = load_formula(args.formula)
    gamma = unsat_gap(f)
    gv = game_value_bruteforce(f)
    report = {
        "schema": SCHEMA,
        "command": "classical",
        "gamma": gamma,
        "value": gv.value,
        "value_float": float(gv.value),
        "bound": 1 - gamma / 3,
        "witness": gv.witness.to_json_dict(),
        "provenance": provenance(args.seed),
    }
    if args.family:
        if args.seed is None:
            raise CliError("rounding requires --seed")
        fam = family_from_json(Path(args.family).read_text())
        rng = np.random.default_rng(args.seed)
        rounded = round_quantum_to_classical(f, fam, args.outcome, rng)
        report["rounded"] = {
            "outcome": args.outcome,
            "strategy": rounded.to_json_dict(),
            "value": game_value_of(f, rounded),
        }
    return report


def cmd_gap(args) -> dict:
    f = load_formula(args.formula)
    gamma = unsat_gap(f)
    report = {
        "schema": SCHEMA,
        "command": "gap",
        "num_vars": f.num_vars,
        "num_clauses": f.num_clauses,
        "gamma": gamma,
        "satisfiable": gamma == 0,
        "provenance": provenance(),
    }
    if gamma == 0:
        report["witness"] = list(best_assignment(f).bits)
    return report


def cmd_validate(args) -> dict:
    report = {"schema": SCHEMA, "command": "validate", "provenance": provenance()}
    if not args.formula and not args.family:
        raise CliError("validate needs --formula and/or --family")
    if args.formula:
        f = load_formula(args.formula)
        vr = validate_regularity(f)
        report["formula"] = {
            "num_vars": f.num_vars,
            "num_clauses": f.num_clauses,
            "occurrence_counts": list(vr.occurrence_counts),
            "regular": vr.regular,
            "offending_vars": list(vr.offending_vars),
        }
    if args.family:
        fam = family_from_json(Path(args.family).read_text())
        report["family"] = {
            "outcomes": fam.num_outcomes,
            "d": fam.private_dim,
            "M": fam.num_clauses,
            "N": fam.num_vars,
            "completeness_residual": check_family_completeness(fam),
        }
    return report


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qmip", description=__doc__)
    sub = ap.add_subparsers(dest="cmd", required=True)

    def common(p, formula_required=True):
        p.add_argument("--formula", required=formula_required,
                       help="path to a DIMACS CNF or JSON formula")
        p.add_argument("--out", help="write the report here instead of stdout")
        p.add_argument("--config", help="JSON file of defaults for these flags")

    p = sub.add_parser("run", help="execute protocol experiments")
    common(p)
    p.add_argument("--strategy", help='spec JSON, file, or kind name (default "honest")')
    p.add_argument("--mode", choices=["sampled", "exact"], default="exact")
    p.add_argument("--trials", type=int, default=10_000)
    p.add_argument("--seed", type=int)
    p.add_argument("--d", type=int, default=2, choices=[1, 2, 3, 4],
                   help="private register dimension")
    p.add_argument("--transcripts", help="write per-trial transcripts (JSON lines)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("diagnose", help="soundness diagnostics for a family")
    common(p)
    p.add_argument("--family", required=True, help="measurement family JSON file")
    p.add_argument("--gamma", type=float, help="override the brute-forced gap")
    p.add_argument("--set", action="append", metavar="NAME=VALUE",
                   help="override a named diagnostics constant")
    p.add_argument("--csv", help="also write the posterior table as CSV")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("classical", help="clause/variable game value and rounding")
    common(p)
    p.add_argument("--family", help="round this family's outcome to a classical strategy")
    p.add_argument("--outcome", type=int, default=0)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_classical)

    p = sub.add_parser("gap", help="brute-force unsatisfiability gap")
    common(p)
    p.set_defaults(func=cmd_gap)

    p = sub.add_parser("validate", help="check a formula and/or family")
    common(p, formula_required=False)
    p.add_argument("--family", help="measurement family JSON file")
    p.set_defaults(func=cmd_validate)
    return ap


def main(argv=None) -> int:
    args = merge_config(build_parser().parse_args(argv))
    try:
        report = args.func(args)
    except (CliError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    write_output(dump_report(report), args.out)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())

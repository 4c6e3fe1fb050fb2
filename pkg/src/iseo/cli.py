"""Command-line entry point: ``iseo gen | parse-gap | run | report | probe``."""

from __future__ import annotations

import argparse
import csv
import glob
import hashlib
import io
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .core import Instance, InstanceError
from .discrete import true_optimum
from .framework import (RunConfig, final_feasibility_probe, json_float, run, write_csv,
                        write_summary, write_timing)
from .oracle import BudgetExhausted, OracleAborted, OracleSuite
from .problems import (gen_adversarial, gen_catalog, gen_cspp, gen_gap,
                       gen_knapsack, parse_gap)

log = logging.getLogger("iseo")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_TIMEOUT = 0, 1, 2, 3

PROBLEMS = ("knap-u", "knap-w", "knap-s", "cspp", "gap", "adversarial")

# per-flag defaults; the desk preset overrides a few of them unless given explicitly
DEFAULTS = {"n": 60, "courses": 150, "budget": 2000, "thr": 0.01, "node_limit": 50_000,
            "time_limit": 500_000.0}
DESK = {"n": 15, "courses": 20, "budget": 300, "time_limit": 600.0}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def stream_seed(seed: int, name: str) -> np.random.SeedSequence:
    """Independent seed stream for a named component, derived from one master seed."""
    key = int.from_bytes(hashlib.sha256(name.encode()).digest()[:4], "big")
    return np.random.SeedSequence([seed, key])


def _resolve(args: argparse.Namespace, *names: str) -> None:
    preset = DESK if getattr(args, "preset", None) == "desk" else {}
    for name in names:
        if getattr(args, name, None) is None:
            setattr(args, name, preset.get(name, DEFAULTS[name]))


# ---------------------------------------------------------------------------
# gen / parse-gap
# ---------------------------------------------------------------------------

def generate(args: argparse.Namespace) -> Instance:
    _resolve(args, "n", "courses")
    rng = np.random.default_rng(stream_seed(args.seed, "generator"))
    if args.problem.startswith("knap-"):
        inst = gen_knapsack(args.problem[-1].upper(), args.n, args.h, rng)
    elif args.problem == "cspp":
        catalog = gen_catalog(args.courses, np.random.default_rng(stream_seed(args.seed, "catalog")))
        inst = gen_cspp(catalog, rng)
    elif args.problem == "gap":
        inst = gen_gap(args.m, args.n, rng)
    else:
        base, perturbed = gen_adversarial(args.n, args.eps)
        inst = perturbed(args.subset) if args.subset else base
    inst.meta.setdefault("seed", args.seed)
    return inst


def cmd_gen(args: argparse.Namespace) -> int:
    if args.problem != "adversarial" and args.subset:
        raise UsageError("--subset only applies to the adversarial family")
    inst = generate(args)
    inst.save(args.out)
    print(f"wrote {args.out} (m={inst.m}, n={inst.n})")
    return EXIT_OK


def cmd_parse_gap(args: argparse.Namespace) -> int:
    path = Path(args.file)
    problems = parse_gap(path.read_text())
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for k, inst in enumerate(problems, 1):
        inst.meta.update({"source": path.name, "index": k})
        inst.save(out / f"{path.stem}_{k}.json")
    print(f"parsed {len(problems)} problems from {path} into {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------

def group_key(inst: Instance) -> str:
    if inst.kind == "knapsack":
        return f"KNAP-{inst.meta.get('class', '?')}"
    if inst.kind == "gap":
        return f"m={inst.m},n={inst.n}"
    return inst.kind.upper()


def _run_one(path: str, config: RunConfig, oracle: str, out: str, probe: bool) -> dict[str, Any]:
    inst = Instance.load(path)
    stem = f"{Path(path).stem}.{config.separator}-{config.sampler}"
    if oracle == "interactive":
        # a person answers; nothing is derived from stored weights
        inst.hidden_weights = None
        oracles = OracleSuite.interactive(inst.m, config.budget)
        z_star = None
    else:
        if inst.hidden_weights is None:
            raise InstanceError(f"{path} has no hidden weights; use --oracle interactive")
        oracles = OracleSuite.simulated(inst.hidden_weights, config.budget)
        z_star = true_optimum(inst, config.backend)[1]
    rec = run(inst, oracles, config, z_star=z_star)
    if probe:
        rec.final_feasible, _ = final_feasibility_probe(inst, rec.w_final, oracles, config.backend)
        rec.probe_calls = int(sum(oracles.probe_calls))
    base = Path(out) / stem
    write_csv(rec, f"{base}.csv")
    write_summary(rec, f"{base}.summary.json",
                  {"instance": Path(path).stem, "kind": inst.kind, "group": group_key(inst)})
    write_timing(rec, f"{base}.timing.json")
    return {"instance": path, "summary": f"{base}.summary.json", "lb": rec.lb, "ub": rec.ub,
            "gap_pct": 100 * rec.gap, "calls": rec.total_calls, "timeout": rec.timeout}


def cmd_run(args: argparse.Namespace) -> int:
    _resolve(args, "budget", "thr", "node_limit", "time_limit")
    run_seed = int(stream_seed(args.seed, "run").generate_state(1)[0])
    config = RunConfig(separator=args.separator, sampler=args.sampler, budget=args.budget,
                       thr=args.thr, backend=args.backend, seed=run_seed,
                       time_limit=args.time_limit, bound_every=args.bound_every,
                       node_limit=args.node_limit)
    Path(args.out).mkdir(parents=True, exist_ok=True)
    probe = args.oracle == "simulated" and not args.no_probe
    if args.oracle == "interactive" and (args.jobs > 1 or len(args.instance) > 1):
        raise UsageError("interactive runs take a single instance and --jobs 1")
    jobs = [(p, config, args.oracle, args.out, probe) for p in args.instance]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_run_one, *zip(*jobs)))
    else:
        results = [_run_one(*job) for job in jobs]
    for r in results:
        print(f"{r['instance']}: lb={r['lb']:g} ub={r['ub']:g} gap={r['gap_pct']:.3f}% "
              f"calls={r['calls']}{' TIMEOUT' if r['timeout'] else ''} -> {r['summary']}")
    return EXIT_TIMEOUT if any(r["timeout"] for r in results) else EXIT_OK


# ---------------------------------------------------------------------------
# report
# ---------------------------------------------------------------------------

@dataclass
class ReportRow:
    group: str
    separator: str
    sampler: str
    count: int
    opt: int
    thres: int
    feas: int
    gap_pct: float
    error_pct: float | None
    calls: float
    iters: float
    time: float | None
    calls_to_thres: float | None
    iters_to_thres: float | None
    time_to_thres: float | None
    calls_to_opt: float | None
    iters_to_opt: float | None
    time_to_opt: float | None


COLUMN_TITLES = {
    "group": "Group", "separator": "Sep", "sampler": "Smp", "count": "#Inst", "opt": "#Opt",
    "thres": "#Thres", "feas": "#Feas", "gap_pct": "Gap%", "error_pct": "Error%",
    "calls": "#Calls", "iters": "#Iters", "time": "Time",
    "calls_to_thres": "Calls>Thr", "iters_to_thres": "Iters>Thr", "time_to_thres": "Time>Thr",
    "calls_to_opt": "Calls>Opt", "iters_to_opt": "Iters>Opt", "time_to_opt": "Time>Opt",
}


def _mean(values: Sequence[float | None]) -> float | None:
    vals = [v for v in values if v is not None]
    return math.fsum(vals) / len(vals) if vals else None


def load_summaries(patterns: Sequence[str]) -> list[dict[str, Any]]:
    paths = sorted({p for pat in patterns for p in (glob.glob(pat) or [pat])})
    out = []
    for p in paths:
        if p.endswith(".timing.json"):
            continue
        data = json.loads(Path(p).read_text())
        if "config" not in data:
            continue
        timing = Path(p.replace(".summary.json", ".timing.json"))
        if p.endswith(".summary.json") and timing.exists():
            data.update(json.loads(timing.read_text()))
        out.append(data)
    return out


def aggregate(summaries: Sequence[dict[str, Any]]) -> list[ReportRow]:
    """One row per (group, separator, sampler).

    Milestone averages only cover the runs that reached the milestone.
    """
    groups: dict[tuple[str, str, str], list[dict[str, Any]]] = {}
    for s in summaries:
        key = (s.get("group", "?"), s["config"]["separator"], s["config"]["sampler"])
        groups.setdefault(key, []).append(s)
    rows = []
    for (group, sep, smp), runs in sorted(groups.items()):
        reached = [s for s in runs if s["thres"]]
        solved = [s for s in runs if s.get("opt")]
        rows.append(ReportRow(
            group, sep, smp, len(runs),
            opt=len(solved), thres=len(reached), feas=sum(1 for s in runs if s.get("feas")),
            gap_pct=_mean([json_float(s["gap_pct"]) for s in runs]),
            error_pct=_mean([json_float(s.get("error_pct")) for s in runs]),
            calls=_mean([s["calls"] for s in runs]),
            iters=_mean([s["iters"] for s in runs]),
            time=_mean([s.get("time") for s in runs]),
            calls_to_thres=_mean([s["calls_to_thres"] for s in reached]),
            iters_to_thres=_mean([s["iters_to_thres"] for s in reached]),
            time_to_thres=_mean([s.get("time_to_thres") for s in reached]),
            calls_to_opt=_mean([s["calls_to_opt"] for s in solved]),
            iters_to_opt=_mean([s["iters_to_opt"] for s in solved]),
            time_to_opt=_mean([s.get("time_to_opt") for s in solved]),
        ))
    return rows


def _cell(v: Any) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.2f}" if math.isfinite(v) else str(v)
    return str(v)


def format_report(rows: Sequence[ReportRow], fmt: str = "text") -> str:
    names = [f.name for f in fields(ReportRow)]
    header = [COLUMN_TITLES[k] for k in names]
    body = [[_cell(getattr(r, k)) for k in names] for r in rows]
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(names)
        writer.writerows(body)
        return buf.getvalue()
    if fmt == "md":
        lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header)]
        lines += ["| " + " | ".join(r) + " |" for r in body]
        return "\n".join(lines) + "\n"
    widths = [max(len(c) for c in col) for col in zip(header, *body)]
    return "".join("  ".join(c.rjust(w) for c, w in zip(line, widths)) + "\n"
                   for line in [header, *body])


def cmd_report(args: argparse.Namespace) -> int:
    summaries = load_summaries(args.inputs)
    if not summaries:
        raise UsageError("no run summaries matched")
    text = format_report(aggregate(summaries), args.format)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# probe
# ---------------------------------------------------------------------------

def cmd_probe(args: argparse.Namespace) -> int:
    inst = Instance.load(args.instance)
    summary_path = Path(args.run)
    summary = json.loads(summary_path.read_text())
    w_final = np.asarray(summary["w_final"], dtype=float)
    if args.oracle == "interactive":
        oracles = OracleSuite.interactive(inst.m, math.inf)
    else:
        if inst.hidden_weights is None:
            raise InstanceError("instance has no hidden weights; use --oracle interactive")
        oracles = OracleSuite.simulated(inst.hidden_weights, math.inf)
    ok, x = final_feasibility_probe(inst, w_final, oracles, summary["config"]["backend"])
    summary["feas"] = ok
    summary["probe_calls"] = int(sum(oracles.probe_calls))
    summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    print(f"feasible={ok} x={'-' if x is None else ''.join(map(str, x))} "
          f"probe_calls={summary['probe_calls']}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _subset(text: str) -> list[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated item indices, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="iseo", description="Optimization with unknown knapsack constraints "
                     "learned from membership queries.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", help="generate an instance file")
    g.add_argument("--problem", choices=PROBLEMS, required=True)
    g.add_argument("--n", type=int, help="items, jobs or courses per block (default 60, desk 15)")
    g.add_argument("--h", type=int, default=10, help="knapsack capacity class 1..30")
    g.add_argument("--m", type=int, default=5, help="agents for gap")
    g.add_argument("--courses", type=int, help="catalog size for cspp (default 150, desk 20)")
    g.add_argument("--eps", type=float, default=0.5, help="adversarial family parameter")
    g.add_argument("--subset", type=_subset, help="perturbed items for the adversarial family")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--preset", choices=["desk"])
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    pg = sub.add_parser("parse-gap", help="split an OR-Library GAP file into instance files")
    pg.add_argument("file")
    pg.add_argument("--out", required=True, help="output directory")
    pg.set_defaults(func=cmd_parse_gap)

    r = sub.add_parser("run", help="run the interactive loop on instance files")
    r.add_argument("--instance", nargs="+", required=True)
    r.add_argument("--separator", choices=["svm", "sep"], default="sep")
    r.add_argument("--sampler", choices=["sim", "cut"], default="cut")
    r.add_argument("--budget", type=int, help="oracle calls per constraint (default 2000, desk 300)")
    r.add_argument("--thr", type=float, help="relative gap threshold (default 0.01)")
    r.add_argument("--node-limit", dest="node_limit", type=int)
    r.add_argument("--time-limit", dest="time_limit", type=float, help="seconds per run")
    r.add_argument("--bound-every", dest="bound_every", type=int, default=1)
    r.add_argument("--backend", choices=["auto", "enum", "bnb"], default="auto")
    r.add_argument("--oracle", choices=["simulated", "interactive"], default="simulated")
    r.add_argument("--no-probe", dest="no_probe", action="store_true",
                   help="skip the final feasibility probe")
    r.add_argument("--jobs", type=int, default=1)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--preset", choices=["desk"])
    r.add_argument("--out", required=True, help="output directory")
    r.set_defaults(func=cmd_run)

    rp = sub.add_parser("report", help="aggregate run summaries into a table")
    rp.add_argument("--in", dest="inputs", nargs="+", required=True)
    rp.add_argument("--format", choices=["text", "csv", "md"], default="text")
    rp.add_argument("--out")
    rp.set_defaults(func=cmd_report)

    pr = sub.add_parser("probe", help="feasibility probe with a saved run's final weights")
    pr.add_argument("--instance", required=True)
    pr.add_argument("--run", required=True, help="summary JSON written by run")
    pr.add_argument("--oracle", choices=["simulated", "interactive"], default="simulated")
    pr.set_defaults(func=cmd_probe)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                            format="%(levelname)s %(name)s: %(message)s")
        if getattr(args, "jobs", 1) < 1:
            raise UsageError("--jobs must be at least 1")
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, OSError, OracleAborted, BudgetExhausted) as exc:
        print(f"iseo: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())

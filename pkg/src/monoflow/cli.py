"""``monoflow`` command line: solve, verify, gen, table.

Exit codes: 0 success, 1 usage or input error, 2 solver failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from monoflow.baseline import PathCapError, compare_with_monodromy, solve_total_degree
from monoflow.monodromy import (
    MonodromyError,
    MonodromyOptions,
    SeedingError,
    SolutionRegistry,
    UnsupportedTopologyError,
    run_monodromy,
)
from monoflow.network import (
    FAMILIES,
    NetworkError,
    PowerNetwork,
    Solution,
    build_system,
    count_trivial_solutions,
    enumerate_trivial_solutions,
    WIDE_RANGE,
    load_network,
    random_susceptances,
)
from monoflow.symmetry import symmetry_group

log = logging.getLogger("monoflow")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_SOLVER = 2

METHODS = ("monodromy", "totaldegree")

#: solutions beyond this infinity norm are near the limit of double precision
LARGE_NORM = 1e4
B_MODES = ("unit", "uniform", "fixed-seed")


class UsageError(Exception):
    pass


def _setup_logging():
    level = os.environ.get("MONOFLOW_LOG", "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )


def _default_workers() -> int:
    return max(1, os.cpu_count() or 1)


def _deterministic(args) -> bool:
    return args.seed is not None and args.workers == 1


# ---------------------------------------------------------------------------
# report assembly

def build_report(
    net: PowerNetwork,
    method: str,
    nontrivial: list[Solution],
    histogram: dict[int, int],
    diagnostics: dict,
    emit_solutions: bool = False,
    real_tol: float = 1e-8,
) -> dict:
    """Assemble the RunReport document. ``nontrivial`` holds one representative per orbit."""
    trivial = count_trivial_solutions(net)
    n_nontrivial = sum(s.orbit_size for s in nontrivial)
    real = trivial + sum(s.orbit_size for s in nontrivial if np.abs(s.z.imag).max(initial=0.0) < real_tol)
    report = {
        "network": {"name": net.name, **net.to_dict()},
        "method": method,
        "counts": {
            "total": trivial + n_nontrivial,
            "trivial": trivial,
            "nontrivial": n_nontrivial,
            "nontrivial_up_to_symmetry": len(nontrivial),
            "orbit_size_histogram": {str(k): int(v) for k, v in sorted(histogram.items())},
            "real": int(real),
        },
        "diagnostics": diagnostics,
    }
    if emit_solutions:
        sols = [s.to_dict() for s in enumerate_trivial_solutions(net)]
        sols += [s.to_dict() for s in nontrivial]
        report["solutions"] = sols
    return report


def _mono_options(args, n: int) -> MonodromyOptions:
    return MonodromyOptions(
        stall_loops=args.stall_loops,
        expected_count=args.expected_count,
        dedup_tol=args.tol,
        workers=args.workers,
    )


def _solve_monodromy(net: PowerNetwork, args, rng) -> tuple[list[Solution], dict[int, int], dict, SolutionRegistry | None]:
    system = build_system(net)
    try:
        res = run_monodromy(system, net.susceptances, _mono_options(args, net.n), rng)
    except UnsupportedTopologyError as exc:
        log.warning("%s; reporting trivial solutions only", exc)
        diag = {"loops_run": 0, "paths_tracked": 0, "path_failures": 0, "warning": str(exc)}
        return [], {}, diag, None
    reg = res.registry
    sols = reg.solutions(expand=False)
    return sols, reg.orbit_histogram(), res.stats, reg


def _solve_total_degree(net: PowerNetwork, args, rng):
    system = build_system(net)
    td = solve_total_degree(system, net.susceptances, rng=rng, workers=args.workers, force=args.force, dedup_tol=args.tol)
    nontrivial = [s for s in td.solutions if not s.is_trivial]
    found_trivial = len(td.solutions) - len(nontrivial)
    # fold the endpoints into orbits so both methods report the same count structure
    reg = SolutionRegistry(system, net.susceptances, symmetry_group(net), args.tol)
    if nontrivial:
        reg.insert_many(np.array([s.z for s in nontrivial]))
    if sum(reg.orbit_sizes) != len(nontrivial):
        log.warning("%d nontrivial endpoints fold into orbits totalling %d", len(nontrivial), sum(reg.orbit_sizes))
    diag = {
        "loops_run": 0,
        "paths_tracked": td.path_count,
        "path_failures": td.failed,
        "finite_paths": td.finite_paths,
        "diverged_paths": td.diverged,
        "trivial_found": found_trivial,
    }
    if found_trivial != count_trivial_solutions(net):
        log.warning("total-degree run recovered %d of %d trivial solutions", found_trivial, count_trivial_solutions(net))
    return reg.solutions(expand=False), reg.orbit_histogram(), diag, td


def _flag_large(sols: list[Solution], diag: dict):
    biggest = max((float(np.abs(s.z).max()) for s in sols), default=0.0)
    diag["largest_solution_norm"] = biggest
    if biggest > LARGE_NORM:
        log.warning(
            "a solution has |z| = %.3g; near-infinite solutions may be merged or missed in double precision", biggest
        )


def _write(doc, path: str | None):
    text = json.dumps(doc, indent=2, sort_keys=False) + "\n"
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def _load(path: str) -> PowerNetwork:
    try:
        net = load_network(path)
    except FileNotFoundError as exc:
        raise UsageError(f"no such network file: {path}") from exc
    except (NetworkError, ValueError) as exc:
        raise UsageError(f"cannot parse {path}: {exc}") from exc
    if not net.is_biconnected():
        log.warning("network %s is not biconnected; its equations decouple", net.name or path)
    return net


def _rng(args):
    return np.random.default_rng(args.seed)


# ---------------------------------------------------------------------------
# commands

def cmd_solve(args) -> int:
    net = _load(args.network)
    rng = _rng(args)
    t0 = time.perf_counter()
    if args.method == "monodromy":
        sols, hist, diag, _ = _solve_monodromy(net, args, rng)
    else:
        sols, hist, diag, _ = _solve_total_degree(net, args, rng)
    wall = time.perf_counter() - t0
    log.info("%s finished in %.3f s", args.method, wall)
    # wall-clock is the one nondeterministic field; it is left out in deterministic mode
    diag["wall_clock_seconds"] = None if _deterministic(args) else round(wall, 6)
    _flag_large(sols, diag)
    report = build_report(net, args.method, sols, hist, diag, args.emit_solutions, args.real_tol)
    _write(report, args.output)
    return EXIT_OK


def cmd_verify(args) -> int:
    net = _load(args.network)
    rng = _rng(args)
    system = build_system(net)
    b = net.susceptances
    t0 = time.perf_counter()
    td = solve_total_degree(system, b, rng=rng, workers=args.workers, force=args.force, dedup_tol=args.tol)
    _, _, mono_diag, reg = _solve_monodromy(net, args, rng)
    trivials = enumerate_trivial_solutions(net)
    report = compare_with_monodromy(td, reg, trivials, tol=args.tol)
    wall = time.perf_counter() - t0
    doc = {
        "network": {"name": net.name, **net.to_dict()},
        "comparison": report.to_dict(),
        "diagnostics": {
            "total_degree_paths": td.path_count,
            "total_degree_diverged": td.diverged,
            "total_degree_failed": td.failed,
            "monodromy": mono_diag,
            "wall_clock_seconds": None if _deterministic(args) else round(wall, 6),
        },
    }
    _write(doc, args.output)
    if not report.ok:
        log.warning(
            "%d total-degree and %d monodromy solutions unmatched",
            len(report.unmatched_total_degree),
            len(report.unmatched_monodromy),
        )
    return EXIT_OK if report.ok else EXIT_SOLVER


def cmd_gen(args) -> int:
    if args.n < 2:
        raise UsageError("network needs at least 2 nodes")
    template = FAMILIES[args.family](args.n)
    if args.b == "unit":
        b = 1.0
    else:
        seed = args.seed if args.seed is not None or args.b == "uniform" else 0
        b = random_susceptances(template.num_edges, np.random.default_rng(seed), *WIDE_RANGE)
    net = FAMILIES[args.family](args.n, b)
    text = net.to_text()
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def parse_sizes(token: str) -> list[int]:
    """``"4..6"`` -> [4, 5, 6]; ``"5,7"`` -> [5, 7]; ``"4"`` -> [4]."""
    try:
        if ".." in token:
            lo, hi = token.split("..", 1)
            return list(range(int(lo), int(hi) + 1))
        return [int(v) for v in token.split(",") if v]
    except ValueError as exc:
        raise UsageError(f"bad size range {token!r}") from exc


def parse_table_specs(tokens: list[str]) -> list[tuple[str, int]]:
    if len(tokens) % 2:
        raise UsageError("table expects FAMILY SIZES pairs")
    out = []
    for fam, sizes in zip(tokens[::2], tokens[1::2]):
        if fam not in FAMILIES:
            raise UsageError(f"unknown family {fam!r}")
        out.extend((fam, n) for n in parse_sizes(sizes))
    return out


TABLE_COLUMNS = ("network", "reps", "loops_mean", "paths_mean", "total", "trivial", "nontrivial", "up_to_symmetry", "counts_constant", "wall_mean_s")


def table_rows(specs, args) -> list[dict]:
    rows = []
    master = np.random.default_rng(args.seed)
    for fam, n in specs:
        totals, loops, paths, walls, counts = [], [], [], [], []
        for _ in range(args.reps):
            rng = np.random.default_rng(master.integers(2**63))
            template = FAMILIES[fam](n)
            net = FAMILIES[fam](n, random_susceptances(template.num_edges, rng))
            t0 = time.perf_counter()
            if args.method == "monodromy":
                sols, _, diag, _ = _solve_monodromy(net, args, rng)
            else:
                sols, _, diag, _ = _solve_total_degree(net, args, rng)
            walls.append(time.perf_counter() - t0)
            loops.append(diag.get("loops_run", 0))
            paths.append(diag.get("paths_tracked", 0))
            nontrivial = sum(s.orbit_size for s in sols)
            counts.append((nontrivial, len(sols)))
            totals.append(count_trivial_solutions(net) + nontrivial)
        nontrivial, up_to = counts[0] if counts else (0, 0)
        rows.append(
            {
                "network": f"{fam}{n}",
                "reps": args.reps,
                "loops_mean": float(np.mean(loops)) if loops else 0.0,
                "paths_mean": float(np.mean(paths)) if paths else 0.0,
                "total": totals[0] if totals else 0,
                "trivial": count_trivial_solutions(FAMILIES[fam](n)),
                "nontrivial": nontrivial,
                "up_to_symmetry": up_to,
                "counts_constant": len(set(counts)) <= 1,
                "wall_mean_s": float(np.mean(walls)) if walls else 0.0,
            }
        )
    return rows


def format_table(rows: list[dict], method: str, fmt: str = "text") -> str:
    if fmt == "csv":
        lines = [",".join(TABLE_COLUMNS)]
        lines += [",".join(str(r[c]) for c in TABLE_COLUMNS) for r in rows]
        return "\n".join(lines) + "\n"
    head = f"{'network':<10}{'reps':>5}{'loops':>9}{'paths':>11}{'total':>9}{'trivial':>9}{'nontriv':>9}{'up/sym':>8}{'const':>7}{'wall[s]':>10}"
    lines = [f"method: {method}", head, "-" * len(head)]
    for r in rows:
        lines.append(
            f"{r['network']:<10}{r['reps']:>5}{r['loops_mean']:>9.1f}{r['paths_mean']:>11.1f}{r['total']:>9}"
            f"{r['trivial']:>9}{r['nontrivial']:>9}{r['up_to_symmetry']:>8}{str(r['counts_constant']):>7}{r['wall_mean_s']:>10.2f}"
        )
    lines.append("note: wall-clock times are machine-specific.")
    lines.append("note: loop counts reflect this solver's loop strategy and are not comparable to published loop counts.")
    return "\n".join(lines) + "\n"


def cmd_table(args) -> int:
    specs = parse_table_specs(args.specs)
    rows = table_rows(specs, args)
    text = format_table(rows, args.method, args.format)
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser

def _positive_int(v: str) -> int:
    k = int(v)
    if k < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return k


def _seed(v: str) -> int:
    k = int(v)
    if not 0 <= k < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return k


def _add_run_flags(p: argparse.ArgumentParser):
    p.add_argument("--seed", type=_seed, default=None, help="RNG seed (u64)")
    p.add_argument("--stall-loops", type=_positive_int, default=None, help="stop after this many loops without a new solution")
    p.add_argument("--expected-count", type=_positive_int, default=None, help="stop once this many orbits are known")
    p.add_argument("--tol", type=float, default=1e-6, help="deduplication and matching tolerance")
    p.add_argument("--real-tol", type=float, default=1e-8, help="imaginary-part bound for real solutions")
    p.add_argument("--workers", type=_positive_int, default=_default_workers(), help="tracking threads")
    p.add_argument("--force", action="store_true", help="allow total-degree runs above the path cap")
    p.add_argument("--output", "-o", default=None, help="output file (default stdout)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="monoflow", description="All complex solutions of lossless zero-injection power flow.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="find all solutions for one network")
    p.add_argument("network")
    p.add_argument("--method", choices=METHODS, default="monodromy")
    p.add_argument("--emit-solutions", action="store_true", help="include coordinates of every orbit representative")
    _add_run_flags(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("verify", help="compare monodromy against the total-degree homotopy")
    p.add_argument("network")
    _add_run_flags(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("gen", help="write a network file for a standard family")
    p.add_argument("family", choices=sorted(FAMILIES))
    p.add_argument("n", type=int)
    p.add_argument("--b", choices=B_MODES, default="unit", help="susceptance mode")
    p.add_argument("--seed", type=_seed, default=None)
    p.add_argument("--output", "-o", default=None)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("table", help="summary rows over network families")
    p.add_argument("specs", nargs="*", help="FAMILY SIZES pairs, e.g. complete 4..6 cycle 5,7")
    p.add_argument("--method", choices=METHODS, default="monodromy")
    p.add_argument("--reps", type=_positive_int, default=1)
    p.add_argument("--format", choices=("text", "csv"), default="text")
    _add_run_flags(p)
    p.set_defaults(func=cmd_table)
    return parser


def main(argv: list[str] | None = None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    try:
        return args.func(args)
    except (UsageError, PathCapError) as exc:
        print(f"monoflow: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (MonodromyError, SeedingError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"monoflow: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())

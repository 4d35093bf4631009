"""Command-line entry point.

Every command reads a geometry JSON file and writes its artifacts into the
output directory, recording each run in an append-only ``manifest.jsonl``.
Exit codes: 0 success, 1 a checked invariant failed, 2 bad command line
(including a lambda outside the legal interval),
3 unreadable geometry, 4 configuration space over budget, 5 geometric
hypothesis violated, 6 series or formulas failed to converge, 7 any other
package error.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import errors
from .config_space import condensation_profile, enumerate_space, scaled_partition, stationary_measure
from .graph_model import contract_graph, load_site_graph, metastable_hierarchy
from .ladder_resolvent import DEPTH_TOL, compute_Kxy, default_lambda, legal_lambda_range
from .simulator import SimConfig, d_schedule, empirical_vs_magic, timescale_census

EXIT_OK = 0
EXIT_INVARIANT = 1
EXIT_USAGE = 2
EXIT_PARSE = 3
EXIT_SPACE = 4
EXIT_ASSUMPTION = 5
EXIT_DIVERGED = 6
EXIT_OTHER = 7

_EXIT_BY_ERROR = [
    (errors.ParseError, EXIT_PARSE),
    (errors.SpaceTooLarge, EXIT_SPACE),
    (errors.AssumptionViolated, EXIT_ASSUMPTION),
    (errors.Diverged, EXIT_DIVERGED),
    (errors.BadLambda, EXIT_USAGE),
    (errors.SandwichViolated, EXIT_INVARIANT),
    (errors.NotAFlow, EXIT_INVARIANT),
    (errors.CapacityError, EXIT_OTHER),
]


class InvariantFailed(Exception):
    pass


def _clean(obj):
    """JSON-safe copy: non-finite floats become strings, numpy scalars become Python ones."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(_clean(payload), indent=2, sort_keys=True) + "\n")


def _write_csv(path: Path, rows: list[dict]) -> None:
    if not rows:
        path.write_text("")
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def _record(out: Path, command: str, args: argparse.Namespace, artifacts: list[str]) -> None:
    entry = {"command": command, "artifacts": artifacts,
             "args": {k: v for k, v in sorted(vars(args).items()) if k not in ("func",)}}
    with open(out / "manifest.jsonl", "a") as fh:
        fh.write(json.dumps(_clean(entry), sort_keys=True) + "\n")


def _d_for(args, n: int) -> float:
    if args.d_schedule is not None:
        return d_schedule(n, args.d_schedule)
    return args.d


def _pair(g, hier, args):
    if args.x is not None and args.y is not None:
        return g.index(args.x), g.index(args.y)
    if len(hier.s_star) != 2:
        raise errors.AssumptionViolated("S* has more than two sites; pass --x and --y")
    return hier.s_star


# ---------------------------------------------------------------------------
# commands


def cmd_analyze(args, g, out: Path) -> list[str]:
    hier = metastable_hierarchy(g)
    name = lambda v: g.sites[v]  # noqa: E731
    payload = {
        "graph": g.to_json(),
        "s_star": [name(v) for v in hier.s_star],
        "s_zero": [name(v) for v in hier.s_zero],
        "level2": [[name(v) for v in b] for b in hier.level2],
        "level3": [[name(v) for v in b] for b in hier.level3],
        "kappa2": hier.kappa2,
        "kappa3": hier.kappa3,
        "m_star": hier.m_star,
        "m_star_star": hier.m_star_star,
        "near_degenerate": [name(v) for v in hier.near_degenerate],
        "R_ij": [{"i": i, "j": j, "value": v} for (i, j), v in sorted(hier.rij.items())],
        "second_scale_rates": [{"i": i, "j": j, "value": v} for (i, j), v in sorted(hier.r2nd.items())],
    }
    if len(hier.s_star) == 2 and hier.kappa3 == 2:
        cg = contract_graph(g, *hier.s_star, hier)
        payload["contracted"] = {
            "nbr_x": [name(v) for v in cg.nbr_x], "nbr_y": [name(v) for v in cg.nbr_y],
            "inner": [name(v) for v in cg.inner],
            "components": [[name(v) for v in c.vertices] for c in cg.components],
            "lambda_range": list(legal_lambda_range(cg)),
        }
    _write_json(out / "hierarchy.json", payload)
    return ["hierarchy.json"]


def cmd_kconstant(args, g, out: Path) -> list[str]:
    hier = metastable_hierarchy(g)
    x, y = _pair(g, hier, args)
    cg = contract_graph(g, x, y, hier)
    grid = args.lambda_grid or [args.lam if args.lam is not None else default_lambda(cg)]
    rows = []
    for lam in grid:
        k = compute_Kxy(cg, lam=lam, depth=args.depth)
        rows.append(k.to_json())
    values = [r["value"] for r in rows]
    spread = (max(values) - min(values)) / abs(np.mean(values))
    payload = {"x": g.sites[x], "y": g.sites[y], "rows": rows, "lambda_spread": spread,
               "value": values[0], "one_over_2K": 1.0 / (2.0 * values[0]),
               "one_over_6K": 1.0 / (6.0 * values[0]), "lambda_range": list(legal_lambda_range(cg)),
               "depth_tol": DEPTH_TOL}
    _write_json(out / "kconstant.json", payload)
    if spread > args.spread_tol:
        raise InvariantFailed(f"K varies by {spread:.3e} across the lambda grid")
    return ["kconstant.json"]


def _sandwich_rows(args, g) -> list[dict]:
    from .test_objects import capacity_sandwich

    hier = metastable_hierarchy(g)
    x, y = _pair(g, hier, args)
    cg = contract_graph(g, x, y, hier)
    kconst = compute_Kxy(cg, lam=args.lam)
    rows = []
    for n in args.n_list:
        d = _d_for(args, n)
        s = capacity_sandwich(g, n, d, lam=args.lam, depth=args.depth, x=x, y=y, kconst=kconst)
        rows.append({
            "N": n, "d_N": d,
            "lower_scaled": s.scaled_lower, "exact_scaled": s.scaled_exact,
            "upper_scaled": s.scaled_upper, "k_reference": s.k_reference,
            "flow_depth": s.depth, "cutoff": s.n_prime, "flow_value": s.flow_value,
            "solver": s.solver, "k_spread": kconst.spread,
        })
    return rows


def cmd_capacity(args, g, out: Path) -> list[str]:
    rows = _sandwich_rows(args, g)
    _write_csv(out / "sandwich.csv", rows)
    return ["sandwich.csv"]


def cmd_sweep(args, g, out: Path) -> list[str]:
    hier = metastable_hierarchy(g)
    rows = []
    for n in args.n_list:
        d = _d_for(args, n)
        cs = enumerate_space(g, n, d)
        mt = stationary_measure(cs)
        prof = condensation_profile(cs, mt, hier)
        row = {"N": n, "d_N": d, "states": cs.size, "scaled_partition": scaled_partition(cs, mt)}
        row.update({f"mu_{k}": v for k, v in prof.items()})
        rows.append(row)
    _write_csv(out / "sweep.csv", rows)
    artifacts = ["sweep.csv"]
    if len(hier.s_star) == 2 and hier.kappa3 == 2 and not args.no_capacity:
        artifacts += cmd_capacity(args, g, out)
    return artifacts


def cmd_verify(args, g, out: Path) -> list[str]:
    from .config_space import config_chain
    from .test_objects import build_test_flow, build_test_function, flow_norm_and_bound

    hier = metastable_hierarchy(g)
    x, y = _pair(g, hier, args)
    cg = contract_graph(g, x, y, hier)
    n = args.n
    d = _d_for(args, n)
    kconst = compute_Kxy(cg, lam=args.lam)
    depth = args.depth or max(2, (n + 1) // 4)
    cs = enumerate_space(g, n, d)
    mt = stationary_measure(cs)
    chain = config_chain(cs, mt)
    flow = build_test_flow(cg, n, depth, lam=args.lam)
    field_ = flow.total.to_field(cs)
    div = field_.divergence()
    mask = np.ones(cs.size, dtype=bool)
    mask[[cs.xi(x), cs.xi(y)]] = False
    interior = float(np.abs(div[mask]).max()) if mask.any() else 0.0
    scale = field_.max_abs()
    norm, value, bound = flow_norm_and_bound(cs, chain, flow)
    F = build_test_function(cs, cg, lam=args.lam)
    from .test_objects import dirichlet_of_F

    dval, breakdown = dirichlet_of_F(cs, mt, F)
    from .potential_theory import capacity

    cap = capacity(chain, [cs.xi(x)], [cs.xi(y)])
    sc = n ** 2 / d ** 3
    payload = {
        "N": n, "d_N": d, "flow_depth": depth, "cutoff": F.n_prime,
        "checks": {
            "flow_interior_divergence": interior,
            "flow_interior_divergence_relative": interior / scale if scale else 0.0,
            "flow_value": value,
            "flow_value_limit": 1.0 / (6.0 * kconst.value),
            "F_at_xi_x": F(cs.states[cs.xi(x)]), "F_at_xi_y": F(cs.states[cs.xi(y)]),
            "resolvent": kconst.identity_residuals,
        },
        "sandwich": {"lower_scaled": bound * sc, "exact_scaled": cap * sc, "upper_scaled": dval * sc,
                     "k_reference": 1.0 / (2.0 * kconst.value)},
        "dirichlet_breakdown_scaled": {k: v * sc for k, v in breakdown.items()},
    }
    _write_json(out / "verify.json", payload)
    if interior > args.tol * max(scale, 1e-300):
        raise InvariantFailed(f"interior divergence {interior:.3e}")
    if not (bound <= cap * (1 + 1e-9) and cap <= dval * (1 + 1e-9)):
        raise InvariantFailed("sandwich order broken")
    return ["verify.json"]


def cmd_simulate(args, g, out: Path) -> list[str]:
    hier = metastable_hierarchy(g)
    n = args.n
    d = _d_for(args, n)
    cs = enumerate_space(g, n, d)
    cfg = SimConfig(seed=args.seed, replicas=args.replicas, max_events=args.max_events)
    start = g.index(args.start) if args.start else hier.s_star[0]
    if args.alpha is not None:
        res = timescale_census(cs, hier, start, args.alpha, cfg)
        _write_json(out / "simulate.json", res)
        return ["simulate.json"]
    targets = [g.index(t) for t in args.target] if args.target else [s for s in hier.s_star if s != start]
    res = empirical_vs_magic(cs, cs.xi(start), [cs.xi(t) for t in targets], cfg)
    sample = res.pop("sample")
    _write_csv(out / "simulate.csv", [{"replica": i, "time": float(t), "events": int(e)}
                                      for i, (t, e) in enumerate(zip(sample.times, sample.events))])
    res.update({"N": n, "d_N": d, "seed": args.seed, "start": g.sites[start],
                "targets": [g.sites[t] for t in targets]})
    _write_json(out / "simulate.json", res)
    if not res["passed"]:
        raise InvariantFailed(f"simulated mean off by {res['gap']:.3g} ({res['stderr']:.3g} stderr)")
    return ["simulate.csv", "simulate.json"]


def _md_table(rows: list[dict]) -> str:
    if not rows:
        return "(empty)\n"
    keys = list(rows[0])
    lines = ["| " + " | ".join(keys) + " |", "|" + "---|" * len(keys)]
    for r in rows:
        lines.append("| " + " | ".join(str(r[k]) for k in keys) + " |")
    return "\n".join(lines) + "\n"


def cmd_report(args, g, out: Path) -> list[str]:
    parts = ["# Run summary\n"]
    for name in ("hierarchy.json", "kconstant.json", "verify.json", "simulate.json"):
        p = out / name
        if p.exists():
            data = json.loads(p.read_text())
            flat = {k: v for k, v in data.items() if not isinstance(v, (dict, list))}
            parts.append(f"## {name}\n\n" + _md_table([flat]))
    for name in ("sandwich.csv", "sweep.csv"):
        p = out / name
        if p.exists():
            with open(p) as fh:
                rows = list(csv.DictReader(fh))
            parts.append(f"## {name}\n\n" + _md_table(rows))
    (out / "report.md").write_text("\n".join(parts))
    return ["report.md"]


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="inclusion-capacity", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, needs_n=False, n_list=False):
        sp.add_argument("--graph", required=True, help="geometry JSON file")
        sp.add_argument("--out", default="out", help="output directory")
        sp.add_argument("--x", help="first condensing site")
        sp.add_argument("--y", help="second condensing site")
        sp.add_argument("--lambda", dest="lam", type=float, default=None)
        sp.add_argument("--depth", type=int, default=None, help="ladder or flow depth L")
        if needs_n:
            sp.add_argument("--n", type=int, required=True)
        if n_list:
            sp.add_argument("--n-list", type=int, nargs="+", required=True)
        if needs_n or n_list:
            grp = sp.add_mutually_exclusive_group()
            grp.add_argument("--d", type=float, default=0.05, help="constant d_N")
            grp.add_argument("--d-schedule", type=float, default=None, metavar="C", help="d_N = C/log(N+e)")

    common(sub.add_parser("analyze", help="metastable hierarchy"))
    k = sub.add_parser("kconstant", help="the constant K_xy")
    common(k)
    k.add_argument("--lambda-grid", type=float, nargs="+", default=None)
    k.add_argument("--spread-tol", type=float, default=1e-4)
    common(sub.add_parser("capacity", help="capacity sandwich over N"), n_list=True)
    sw = sub.add_parser("sweep", help="condensation profile and sandwich over N")
    common(sw, n_list=True)
    sw.add_argument("--no-capacity", action="store_true")
    v = sub.add_parser("verify-test-objects", help="check the test function and test flow")
    common(v, needs_n=True)
    v.add_argument("--tol", type=float, default=1e-12)
    s = sub.add_parser("simulate", help="Monte Carlo hitting times or time-scale census")
    common(s, needs_n=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--replicas", type=int, default=1000)
    s.add_argument("--max-events", type=int, default=10**9)
    s.add_argument("--start", default=None)
    s.add_argument("--target", nargs="+", default=None)
    s.add_argument("--alpha", type=float, default=None, help="census time instead of hitting times")
    common(sub.add_parser("report", help="collect artifacts into report.md"))
    return p


COMMANDS = {
    "analyze": cmd_analyze, "kconstant": cmd_kconstant, "capacity": cmd_capacity,
    "sweep": cmd_sweep, "verify-test-objects": cmd_verify, "simulate": cmd_simulate,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_USAGE
    if getattr(args, "n_list", None) is not None and args.n_list != sorted(set(args.n_list)):
        print("error: --n-list must be strictly ascending", file=sys.stderr)
        return EXIT_USAGE
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        g = load_site_graph(args.graph)
        artifacts = COMMANDS[args.command](args, g, out)
    except InvariantFailed as exc:
        print(f"invariant failed: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except errors.CapacityError as exc:
        for cls, code in _EXIT_BY_ERROR:
            if isinstance(exc, cls):
                print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
                return code
        raise  # pragma: no cover
    _record(out, args.command, args, artifacts)
    for a in artifacts:
        print(out / a)
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

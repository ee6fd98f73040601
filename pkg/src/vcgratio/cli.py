"""Command-line interface: ``vcgratio {dispatch,audit,ratio,export-case}``.

Cases are given as a canonical JSON case file, a MATPOWER ``.m`` file, or a
built-in name: ``simple`` (optionally ``simple:EPS``), ``case14``,
``case30``, ``case_ieee30``, ``case118``, ``case14-limited``,
``case118-limited``. Bids default to the truthful profile.

Exit codes: 0 success, 2 infeasible dispatch, 1 error.
"""
from __future__ import annotations

import argparse
import csv
import itertools
import json
import math
import os
import sys
import time
import warnings
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .cases import (BidSampler, CaseOverride, apply_overrides, ieee14_limited, ieee118_limited,
                    load_case, parse_matpower_case, simple_example)
from .coalition import check_core, collusion_bound, shill_bound
from .dispatch import DispatchConfig, make_oracle, solve
from .model import (BidProfile, MarketInstance, dumps_instance, instance_digest, loads_instance,
                    loads_profile, validate, validate_profile)
from .setfunc import RatioConfig, ratio_constraint_generation, ratio_exhaustive, ratio_market_estimate
from .vcg import PivotUndefined, check_individual_rationality, run_vcg

REPORT_SCHEMA = "vcgratio.audit/1"
RATIO_SCHEMA = "vcgratio.ratio/1"


class CliError(Exception):
    pass


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("VCGRATIO_THREADS", "1")))
    except ValueError:
        return 1


def _parse_limits(items: Sequence[str]) -> tuple:
    out = []
    for item in items or ():
        try:
            pair, mw = item.split(":")
            a, b = pair.split("-")
            out.append((int(a), int(b), None if mw in ("inf", "none") else float(mw)))
        except ValueError:
            raise CliError(f"bad --limit {item!r}; expected FROM-TO:MW") from None
    return tuple(out)


def load_instance(source: str, limits=(), demand_scale: float = 1.0) -> MarketInstance:
    if source == "simple" or source.startswith("simple:"):
        eps = float(source.split(":", 1)[1]) if ":" in source else 0.01
        inst = simple_example(eps)[0]
    elif source == "case14-limited":
        inst = ieee14_limited()
    elif source == "case118-limited":
        inst = ieee118_limited()
    elif not os.path.exists(source) and not source.endswith((".m", ".json")):
        try:
            inst = load_case(source)
        except KeyError as exc:
            raise CliError(str(exc)) from None
    else:
        text = Path(source).read_text()
        if source.endswith(".m"):
            with warnings.catch_warnings(record=True):
                warnings.simplefilter("always")
                inst = parse_matpower_case(text, Path(source).stem)
        else:
            inst = loads_instance(text)
    if limits:
        inst = apply_overrides(inst, CaseOverride(line_limits=tuple(limits)))
    if demand_scale != 1.0:
        import dataclasses

        inst = dataclasses.replace(inst, network=inst.network.with_demand_scale(demand_scale))
    errs = validate(inst)
    if errs:
        raise CliError("invalid instance:\n  " + "\n  ".join(errs))
    return inst


def load_bids(inst: MarketInstance, path: Optional[str]) -> BidProfile:
    if not path:
        return inst.truthful_profile()
    prof = loads_profile(Path(path).read_text())
    errs = validate_profile(inst, prof)
    if errs:
        raise CliError("invalid bid profile:\n  " + "\n  ".join(errs))
    return prof


def _ids(text: Optional[str]) -> Optional[list[int]]:
    if not text:
        return None
    return [int(t) for t in text.replace(" ", "").split(",") if t]


def _fmt(v: float) -> str:
    return "inf" if v == math.inf else f"{v:.2f}"


# ------------------------------------------------------------------- dispatch


def cmd_dispatch(args) -> int:
    inst = load_instance(args.case, _parse_limits(args.limit), args.demand_scale)
    prof = load_bids(inst, args.bids)
    res = solve(inst, prof, _ids(args.active))
    if args.json:
        doc = {"status": res.status, "objective": None if res.objective == math.inf else res.objective,
               "duality_gap": res.duality_gap,
               "allocation": {str(k): v for k, v in sorted(res.allocation.items())},
               "flows": list(res.flows)}
        _emit(doc, None)
        return 0 if res.optimal else 2
    if not res.optimal:
        print("J = inf (infeasible)")
        return 2
    print(f"J = {_fmt(res.objective)}")
    print(f"duality gap = {res.duality_gap:.3e}")
    print("allocation (MW):")
    for bid, q in sorted(res.allocation.items()):
        print(f"  bidder {bid}: {q:.4f}")
    if inst.network.lines:
        print("line flows (MW):")
        for ln, f in zip(inst.network.lines, res.flows):
            lim = "unlimited" if ln.limit is None else f"{ln.limit:g}"
            print(f"  {ln.from_bus}-{ln.to_bus}: {f:.4f} (limit {lim})")
    return 0


# -------------------------------------------------------------------- ratio


def _ratio_config(args) -> RatioConfig:
    return RatioConfig(exhaustive_cap=args.cap, seed=args.seed)


def _players(inst: MarketInstance, args) -> Optional[list[int]]:
    chosen = _ids(args.players)
    if chosen is None and inst.n > args.cap:
        # largest capacities first; the rest stay in the market
        from .bids import domain_max

        order = sorted(inst.bidders, key=lambda b: (-domain_max(b.true_cost), b.id))
        chosen = sorted(b.id for b in order[:args.cap])
    return chosen


def _sampler(args) -> BidSampler:
    return BidSampler(seed=args.seed)


def _ratio_report(inst, prof, args, workers):
    players = _players(inst, args)
    cfg = _ratio_config(args)
    if args.samples > 0:
        rep = ratio_market_estimate(inst, _sampler(args), args.samples, args.seed, cfg, players,
                                    "exact" if args.method == "exact" else "cg", workers)
    else:
        oracle = make_oracle(inst, prof, players)
        fn = ratio_exhaustive if args.method == "exact" else ratio_constraint_generation
        rep = fn(oracle, None, cfg, workers=workers)
    return rep, players


def cmd_ratio(args) -> int:
    inst = load_instance(args.case, _parse_limits(args.limit), args.demand_scale)
    prof = load_bids(inst, args.bids)
    rep, players = _ratio_report(inst, prof, args, _threads())
    doc = {"schema": RATIO_SCHEMA, "tool_version": __version__, "seed": args.seed,
           "instance_digest": instance_digest(inst), "players": players, "ratio": rep.to_dict()}
    if args.json:
        _emit(doc, args.output)
        return 0
    print(f"gamma = {rep.gamma:.10g}{' (upper estimate)' if rep.upper_estimate else ''}")
    print(f"k_feas = {rep.k_feas}  lower bound 1/k_feas = {rep.lower_bound:.6g}")
    print(f"method = {rep.method}  evaluations used = {rep.evaluations_used}")
    for w in rep.to_dict()["witnesses"]:
        print(f"  witness S={w['S']} K={w['K']} ratio={w['ratio']:.10g}")
    if args.output:
        _emit(doc, args.output)
    return 0


# -------------------------------------------------------------------- audit


def _auto_coalitions(losers: Sequence[int], size: int) -> list[tuple[int, ...]]:
    out = []
    for k in range(1, min(size, len(losers)) + 1):
        out.extend(itertools.combinations(sorted(losers), k))
    return out


def _coalitions(text: str, losers, size) -> list[tuple[int, ...]]:
    if text == "auto":
        return _auto_coalitions(losers, size)
    return [tuple(int(t) for t in grp.split(",") if t) for grp in text.split(";") if grp.strip()]


def build_audit(inst: MarketInstance, prof: BidProfile, args) -> dict:
    workers = _threads()
    timings: dict[str, float] = {}
    errors: list[dict] = []
    doc: dict = {
        "schema": REPORT_SCHEMA,
        "tool_version": __version__,
        "seed": args.seed,
        "method": args.method,
        "samples": args.samples,
        "instance_digest": instance_digest(inst),
    }

    def stage(name, fn):
        t = time.perf_counter()
        try:
            return fn()
        except Exception as exc:  # stage failures are reported, not fatal
            errors.append({"stage": name, "error": f"{type(exc).__name__}: {exc}"})
            return None
        finally:
            timings[name] = time.perf_counter() - t

    res = stage("dispatch", lambda: solve(inst, prof))
    if res is not None:
        doc["dispatch"] = {
            "status": res.status, "objective": res.objective, "duality_gap": res.duality_gap,
            "allocation": {str(k): v for k, v in sorted(res.allocation.items())},
        }
    out = stage("vcg", lambda: run_vcg(inst, prof, None, workers=workers))
    if out is not None:
        doc["vcg"] = out.to_dict()
        doc["vcg"]["individually_rational"] = check_individual_rationality(out)
    if out is not None and inst.n <= args.cap:
        core = stage("core", lambda: check_core(inst, None, out, exhaustive_cap=args.cap,
                                                 workers=workers))
        if core is not None:
            doc["core"] = core.to_dict()
    rr = stage("ratio", lambda: _ratio_report(inst, prof, args, workers))
    gamma = None
    if rr is not None:
        rep, players = rr
        gamma = rep.gamma
        doc["ratio"] = rep.to_dict()
        doc["ratio"]["players"] = players
        doc["k_feas"] = rep.k_feas
    bounds = []
    if res is not None and res.optimal and gamma is not None and gamma > 0:
        losers = [b for b, q in res.allocation.items() if q <= 1e-9]
        for K in _coalitions(args.coalitions, losers, 3):
            b = stage(f"collusion{list(K)}", lambda K=K: collusion_bound(inst, prof, list(K), gamma))
            if b is not None:
                bounds.append(b.to_dict())
        for l in inst.ids:
            b = stage(f"shill[{l}]", lambda l=l: shill_bound(inst, prof, l, gamma))
            if b is not None:
                bounds.append(b.to_dict())
    doc["bounds"] = bounds
    if gamma is not None:
        doc["coalition_proof"] = gamma >= 1.0 - RatioConfig().tol_ratio
    doc["errors"] = errors
    doc["timings"] = {k: round(v, 6) for k, v in timings.items()}
    return doc


def summary_table(doc: dict) -> str:
    rows = []
    d = doc.get("dispatch")
    if d:
        rows.append(("J(B)", _fmt(d["objective"])))
    v = doc.get("vcg")
    if v:
        for k, p in v["payments"].items():
            rows.append((f"payment {k}", f"{p:.4f}  utility {v['utilities'][k]:.4f}"))
        rows.append(("operator utility", f"{v['operator_utility']:.4f}"))
    c = doc.get("core")
    if c:
        rows.append(("in core", str(c["in_core"])))
    r = doc.get("ratio")
    if r:
        rows.append(("gamma", f"{r['gamma']:.6g}" + (" (upper estimate)" if r["upper_estimate"] else "")))
        rows.append(("k_feas", f"{r['k_feas']}  (gamma >= {r['lower_bound']:.4g})"))
    if doc.get("coalition_proof"):
        rows.append(("verdict", "exact coalition-proofness (gamma = 1)"))
    for b in doc.get("bounds", []):
        rows.append((f"{b['kind']} {b['actor']}", f"bound {b['bound_worstcase']:.4f}"))
    for e in doc.get("errors", []):
        rows.append((f"error in {e['stage']}", e["error"]))
    width = max((len(a) for a, _ in rows), default=0)
    return "\n".join(f"{a.ljust(width)}  {b}" for a, b in rows)


def _emit(doc: dict, output: Optional[str]) -> None:
    text = json.dumps(doc, indent=2, sort_keys=False, default=_json_default) + "\n"
    if output and output != "-":
        Path(output).write_text(text)
    else:
        sys.stdout.write(text)


def _json_default(o):
    if hasattr(o, "item"):
        return o.item()
    raise TypeError(f"not serializable: {type(o).__name__}")


def write_csv(doc: dict, directory: str) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    v = doc.get("vcg")
    if v:
        with open(d / "vcg.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["bidder", "allocation", "payment", "utility", "J_minus"])
            for k in v["payments"]:
                w.writerow([k, v["allocation"][k], v["payments"][k], v["utilities"][k],
                            v["J_minus"][k]])
    with open(d / "bounds.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["kind", "actor", "gamma", "bound_worstcase", "bound_specific", "achieved"])
        for b in doc.get("bounds", []):
            w.writerow([b["kind"], " ".join(map(str, b["actor"])), b["gamma"],
                        b["bound_worstcase"], b["bound_specific"], b["achieved"]])
    r = doc.get("ratio")
    if r:
        with open(d / "ratio_profiles.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["profile", "gamma"])
            for i, g in enumerate(r["per_profile"]):
                w.writerow([i, g])


def cmd_audit(args) -> int:
    if args.samples < 0:
        raise CliError("--samples must be >= 0")
    inst = load_instance(args.case, _parse_limits(args.limit), args.demand_scale)
    prof = load_bids(inst, args.bids)
    doc = build_audit(inst, prof, args)
    _emit(doc, args.output)
    if args.output and args.output != "-":
        print(summary_table(doc))
    if args.csv:
        write_csv(doc, args.csv)
    return 0


def cmd_export_case(args) -> int:
    inst = load_instance(args.case, _parse_limits(args.limit), args.demand_scale)
    text = dumps_instance(inst)
    if args.output and args.output != "-":
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)
    if args.bids_output:
        from .model import dumps_profile

        Path(args.bids_output).write_text(dumps_profile(inst.truthful_profile()))
    return 0


# --------------------------------------------------------------------- main


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vcgratio", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"vcgratio {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, bids=True):
        sp.add_argument("case", help="case file or built-in case name")
        if bids:
            sp.add_argument("bids", nargs="?", help="bid profile JSON (default: truthful)")
        sp.add_argument("--limit", action="append", metavar="FROM-TO:MW",
                        help="set a line limit (repeatable; MW 'inf' removes it)")
        sp.add_argument("--demand-scale", type=float, default=1.0)

    sp = sub.add_parser("dispatch", help="solve the economic dispatch")
    common(sp)
    sp.add_argument("--active", help="comma-separated active bidder ids (default: all)")
    sp.add_argument("--json", action="store_true", help="print the result as JSON")
    sp.set_defaults(func=cmd_dispatch)

    for name, func, hlp in (("audit", cmd_audit, "full VCG / core / ratio / bound audit"),
                            ("ratio", cmd_ratio, "supermodularity ratio")):
        sp = sub.add_parser(name, help=hlp)
        common(sp)
        sp.add_argument("--samples", type=int, default=0 if name == "ratio" else 20,
                        help="sampled bid profiles (0: use the given bids only)")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--method", choices=("exact", "cg"), default="cg")
        sp.add_argument("--players", help="comma-separated bidder ids forming the sub-market")
        sp.add_argument("--cap", type=int, default=12, help="exhaustive player cap")
        sp.add_argument("--output", "-o", help="write the JSON document here ('-' for stdout)")
        sp.set_defaults(func=func)
        if name == "audit":
            sp.add_argument("--coalitions", default="auto",
                            help="'auto' (losing subsets up to size 3) or '2,3;4'")
            sp.add_argument("--csv", metavar="DIR", help="also write CSV tables to DIR")
        else:
            sp.add_argument("--json", action="store_true", help="print the JSON document")

    sp = sub.add_parser("export-case", help="write a case in the canonical JSON format")
    common(sp, bids=False)
    sp.add_argument("--output", "-o")
    sp.add_argument("--bids-output", help="also write the truthful bid profile here")
    sp.set_defaults(func=cmd_export_case)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
    except (OSError, ValueError, KeyError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
    except PivotUndefined as exc:
        print(f"error: {exc}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())

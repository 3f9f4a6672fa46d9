"""Command-line entry point.

Exit codes: 0 success, 1 domain error, 2 usage or schema error.
"""

from __future__ import annotations

import argparse
import csv
import io
import sys
from pathlib import Path
from typing import Any, Sequence

from . import scenario
from ._canonical import dumps_doc
from .errors import GdtnError, ScenarioError
from .mixture import fit_em, read_traces_csv
from .stochastic_dag import (
    completion_exact,
    completion_samples,
    distribution_json,
    export_dag,
    stats_from_samples,
    transform,
)
from .tsn_mgmt import MgmtConfig, Topology, TrafficSpec, run_failover_scenario
from .twin_graph import TwinGraph, build_collecting
from .workload_replica import chain_from_dict, profile_from_dict, run_pipeline

EXIT_OK, EXIT_DOMAIN, EXIT_USAGE = 0, 1, 2


def _write(out: Path | None, name: str, text: str) -> None:
    if out is None:
        return
    out.mkdir(parents=True, exist_ok=True)
    (out / name).write_text(text, encoding="utf-8", newline="\n")


def _rows_csv(header: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _graph(doc: dict[str, Any]) -> TwinGraph:
    scenario.require(doc, "twin_graph")
    return TwinGraph.from_dict(doc["twin_graph"])


def _seed(args, doc: dict[str, Any]) -> int:
    return args.seed if args.seed is not None else scenario.default_seed(doc)


# -- subcommands ---------------------------------------------------------------


def cmd_validate(args) -> int:
    doc = scenario.load(args.scenario)
    problems: list[str] = []
    if "twin_graph" in doc:
        graph, errors = build_collecting(doc["twin_graph"])
        problems += [f"{type(e).__name__}: {e}" for e in errors]
        problems += [str(v) for v in graph.validate()]
    for line in problems:
        print(line)
    if problems:
        return EXIT_DOMAIN
    print("ok")
    return EXIT_OK


def _dag(doc: dict[str, Any]):
    scenario.require(doc, "twin_graph")
    graph = _graph(doc)
    d = doc.get("durations", {})
    return transform(graph, d.get("key", "duration"), d.get("by_twin"), d.get("default"))


def cmd_evaluate(args) -> int:
    doc = scenario.load(args.scenario)
    dag = _dag(doc)
    if args.exact:
        dist = completion_exact(dag)
        if args.format == "csv":
            text = _rows_csv(["makespan_s", "probability"], [[repr(v), repr(p)] for v, p in dist])
        else:
            text = distribution_json(dist)
        sys.stdout.write(text)
        _write(args.out, f"exact.{args.format}", text)
        return EXIT_OK
    samples = completion_samples(dag, args.n, _seed(args, doc), workers=args.workers)
    stats = stats_from_samples(samples, args.deadline)
    d = stats.to_dict()
    if args.format == "csv":
        keys = sorted(d)
        text = _rows_csv(keys, [["" if d[k] is None else repr(d[k]) for k in keys]])
    else:
        text = dumps_doc(d)
    sys.stdout.write(text)
    _write(args.out, f"completion.{args.format}", text)
    if args.out is not None and not args.no_plot:
        from .plotting import plot_makespan

        plot_makespan(samples, args.out / "makespan.png", args.deadline)
    return EXIT_OK


def cmd_export_dag(args) -> int:
    doc = scenario.load(args.scenario)
    text = export_dag(_dag(doc))
    sys.stdout.write(text)
    _write(args.out, "dag.json", text)
    return EXIT_OK


def cmd_failover(args) -> int:
    doc = scenario.load(args.scenario)
    scenario.require(doc, "topology", "mgmt", "traffic")
    report = run_failover_scenario(
        Topology.from_dict(doc["topology"]),
        MgmtConfig.from_dict(doc["mgmt"]),
        TrafficSpec.from_dict(doc["traffic"]),
        seed=_seed(args, doc),
    )
    summary = report.summary_json()
    if args.format == "csv":
        s = report.summary()
        keys = sorted(s)
        cells = [" ".join(s[k]) if isinstance(s[k], list) else ("" if s[k] is None else s[k]) for k in keys]
        sys.stdout.write(_rows_csv(keys, [cells]))
    else:
        sys.stdout.write(summary)
    if args.out is not None:
        _write(args.out, "latency.csv", report.latency_csv())
        _write(args.out, "summary.json", summary)
        _write(args.out, "events.jsonl", report.log.to_jsonl())
        if not args.no_plot:
            from .plotting import plot_latency

            plot_latency(report, args.out / "latency.png")
    return EXIT_OK


def cmd_replicate(args) -> int:
    doc = scenario.load(args.scenario)
    scenario.require(doc, "chain", "profile", "seeds")
    chain = chain_from_dict(doc["chain"])
    profile = profile_from_dict(doc["profile"])
    loads = [p.load for p in profile.points]
    fit_loads = [float(x) for x in doc["profile"].get("fit_loads", loads)]
    em = doc["chain"].get("em", {})
    result = run_pipeline(
        chain, profile, fit_loads, _seed(args, doc),
        max_iter=em.get("max_iter", 500), tol=em.get("tol", 1e-6),
    )
    comp = result.comparison
    text = comp.to_csv() if args.format == "csv" else dumps_doc({"rows": comp.to_list()})
    sys.stdout.write(text)
    if args.out is not None:
        _write(args.out, f"comparison.{args.format}", text)
        for sid, models in sorted(result.fitted.items()):
            for m in models:
                _write(args.out / "models", f"{sid}_load{m.load:g}.json", m.dumps())
        if not args.no_plot:
            from .plotting import plot_comparison

            held_out = sorted(set(loads) - set(fit_loads))
            plot_comparison(comp, args.out / "comparison.png", held_out)
    return EXIT_OK


def cmd_fit(args) -> int:
    try:
        text = Path(args.trace).read_text(encoding="utf-8")
    except OSError as exc:
        raise ScenarioError(f"cannot read {args.trace}: {exc}") from exc
    traces = read_traces_csv(text)
    seed = args.seed if args.seed is not None else 0
    models = []
    for tr in traces:
        try:
            model, _ = fit_em(tr, args.k, seed=seed, max_iter=args.max_iter, tol=args.tol)
        except GdtnError as exc:
            raise type(exc)(f"load {tr.load:g}: {exc}") from exc
        models.append(model)
    if args.format == "csv":
        rows = [
            [repr(m.load), i, repr(c.weight), repr(c.mean), repr(c.stddev)]
            for m in models for i, c in enumerate(m.components)
        ]
        out = _rows_csv(["load_rps", "component", "w", "mu", "sigma"], rows)
    else:
        out = dumps_doc({"models": [m.to_dict() for m in models]})
    sys.stdout.write(out)
    for m in models:
        _write(args.out, f"model_load{m.load:g}.json", m.dumps())
    return EXIT_OK


# -- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="RNG seed (default: first scenario seed)")
    common.add_argument("--out", type=Path, default=None, help="directory for output files")
    common.add_argument("--format", choices=["json", "csv"], default="json")
    common.add_argument("--no-plot", action="store_true", help="skip PNG figures")

    p = argparse.ArgumentParser(prog="gdtn", description="Generalized digital twin network toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("validate", parents=[common], help="schema and twin-graph checks")
    s.add_argument("scenario")
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("evaluate", parents=[common], help="makespan statistics of the twin DAG")
    s.add_argument("scenario")
    s.add_argument("--n", type=int, default=10_000)
    s.add_argument("--deadline", type=float, default=None)
    s.add_argument("--exact", action="store_true", help="enumerate all-discrete durations")
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("export-dag", aliases=["transform"], parents=[common], help="print the derived DAG")
    s.add_argument("scenario")
    s.set_defaults(func=cmd_export_dag)

    s = sub.add_parser("failover", parents=[common], help="link-failure reconfiguration run")
    s.add_argument("scenario")
    s.set_defaults(func=cmd_failover)

    s = sub.add_parser("replicate", parents=[common], help="fit, replicate and compare a service chain")
    s.add_argument("scenario")
    s.set_defaults(func=cmd_replicate)

    s = sub.add_parser("fit", parents=[common], help="fit mixtures to a load_rps,response_ms trace CSV")
    s.add_argument("trace")
    s.add_argument("--k", type=int, default=2)
    s.add_argument("--max-iter", type=int, default=500)
    s.add_argument("--tol", type=float, default=1e-6)
    s.set_defaults(func=cmd_fit)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ScenarioError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except GdtnError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DOMAIN


if __name__ == "__main__":
    sys.exit(main())

"""End-to-end acceptance checks, one PASS/FAIL line each."""

from __future__ import annotations

import itertools
import json
import time
from pathlib import Path

import numpy as np

from conftest import scenario_doc, scenario_path
from gdtn.cli import main
from gdtn.mixture import Trace, fit_em, write_traces_csv
from gdtn.simkit import MS
from gdtn.stochastic_dag import (
    Discrete,
    StochasticDag,
    completion_exact,
    completion_samples,
    empirical_distribution,
    total_variation,
    transform,
)
from gdtn.tsn_mgmt import MgmtConfig, Topology, TrafficSpec, run_failover_scenario
from gdtn.twin_graph import TwinGraph
from gdtn.workload_replica import chain_from_dict, profile_from_dict, run_pipeline


def failover_report(name: str = "failover.json"):
    doc = scenario_doc(name)
    return run_failover_scenario(
        Topology.from_dict(doc["topology"]), MgmtConfig.from_dict(doc["mgmt"]), TrafficSpec.from_dict(doc["traffic"])
    )


def test_criterion_1_failover_downtime(capsys, verdict):
    mgmt = MgmtConfig.from_dict(scenario_doc("failover.json")["mgmt"])
    assert mgmt.reconfiguration_time == 150 * MS
    t0 = time.perf_counter()
    code = main(["failover", str(scenario_path("failover.json"))])
    elapsed = time.perf_counter() - t0
    downtime = json.loads(capsys.readouterr().out)["downtime_ns"]
    ok = code == 0 and 150 * MS <= downtime <= 160 * MS and elapsed < 5
    assert verdict(1, ok, f"downtime {downtime / MS:.3f} ms in [150, 160] ms, {elapsed:.2f} s < 5 s")


def test_criterion_2_two_plateaus(verdict):
    t0 = time.perf_counter()
    report = failover_report()
    elapsed = time.perf_counter() - t0
    topo = Topology.from_dict(scenario_doc("failover.json")["topology"])
    hop = topo.links["l1"].latency_ns
    assert all(topo.links[l].latency_ns == hop for l in topo.links)
    extra_hops = len(report.path_after) - len(report.path_before)
    before, after = report.plateaus()
    delta = after.pop() - before.pop() if len(before) == len(after) == 1 else None
    last_old = max(d.rx_ns for d in report.series if d.vlan == report.series[0].vlan)
    in_window = [d for d in report.series if last_old < d.rx_ns < last_old + report.downtime_ns]
    ok = delta == extra_hops * hop and not in_window and elapsed < 5
    assert verdict(2, ok, f"plateau step {delta} ns == {extra_hops}x{hop} ns, {len(in_window)} deliveries in downtime, {elapsed:.2f} s < 5 s")


def test_criterion_3_replication_fidelity(verdict):
    doc = scenario_doc("replication.json")
    chain, profile = chain_from_dict(doc["chain"]), profile_from_dict(doc["profile"])
    fit_loads = [float(x) for x in doc["profile"]["fit_loads"]]
    held_out = sorted({p.load for p in profile.points} - set(fit_loads))
    assert len(chain.stages) == 2 and len(fit_loads) == 4 and len(held_out) == 1
    assert all(round(p.load * p.duration) == 100_000 for p in profile.points)
    t0 = time.perf_counter()
    worst_fit = worst_held = 0.0
    for seed in doc["seeds"]:
        result = run_pipeline(chain, profile, fit_loads, seed, **doc["chain"]["em"])
        for row in result.comparison.rows:
            err = max(row.err_mean, row.err_p99)
            if row.load in held_out:
                worst_held = max(worst_held, err)
            else:
                worst_fit = max(worst_fit, err)
    elapsed = time.perf_counter() - t0
    ok = len(doc["seeds"]) == 3 and worst_fit <= 0.05 and worst_held <= 0.10 and elapsed < 60
    assert verdict(3, ok, f"worst error fitted {worst_fit:.2%} <= 5%, held-out {worst_held:.2%} <= 10%, {elapsed:.1f} s < 60 s")


def test_criterion_4_em_correctness(verdict):
    t0 = time.perf_counter()
    worst_drop = 0.0
    for seed in range(20):
        rng = np.random.default_rng(1000 + seed)
        parts = [rng.normal(rng.uniform(10, 200), rng.uniform(1, 20), rng.integers(200, 2000))
                 for _ in range(rng.integers(1, 4))]
        x = np.abs(np.concatenate(parts)) + 0.1
        _, report = fit_em(Trace(1.0, x), int(rng.integers(1, 5)), seed=seed)
        worst_drop = max(worst_drop, -float(np.min(np.diff(report.log_likelihood), initial=0.0)))
    rng = np.random.default_rng(0)
    x = np.concatenate([rng.normal(50, 2, 5000), rng.normal(150, 2, 5000)])
    model, _ = fit_em(Trace(1.0, x), 2, seed=0)
    lo, hi = model.components
    recovered = (abs(lo.weight - 0.5) <= 0.05 and abs(hi.weight - 0.5) <= 0.05
                 and abs(lo.mean - 50) <= 2 and abs(hi.mean - 150) <= 2)
    elapsed = time.perf_counter() - t0
    ok = worst_drop <= 1e-7 and recovered and elapsed < 30
    assert verdict(4, ok, f"largest LL decrease {worst_drop:.1e} <= 1e-7 over 20 fixtures, two-cluster recovered={recovered}, {elapsed:.1f} s < 30 s")


def _random_discrete_dags(count: int, seed: int):
    rng = np.random.default_rng(seed)
    for _ in range(count):
        n = int(rng.integers(2, 7))
        names = [f"v{i}" for i in range(n)]
        nodes = {}
        for v in names:
            k = int(rng.integers(1, 4))
            values = rng.choice(np.arange(1, 10), size=k, replace=False)
            probs = rng.dirichlet(np.ones(k))
            probs[-1] = 1.0 - probs[:-1].sum()
            nodes[v] = Discrete(tuple(zip(values.tolist(), probs.tolist())))
        edges = [(a, b) for a, b in itertools.combinations(names, 2) if rng.random() < 0.4]
        yield StochasticDag(nodes, edges)


def test_criterion_5_monte_carlo_vs_exact(verdict):
    doc = scenario_doc("diamond_discrete.json")
    graph = TwinGraph.from_dict(doc["twin_graph"])
    dags = [transform(graph, overrides=doc["durations"]["by_twin"])] + list(_random_discrete_dags(9, 11))
    assert all(len(d.nodes) <= 6 and all(len(x.points) <= 3 for x in d.nodes.values()) for d in dags)
    t0 = time.perf_counter()
    worst = 0.0
    for dag in dags:
        exact = completion_exact(dag)
        for seed in (0, 1, 2):
            emp = empirical_distribution(completion_samples(dag, 100_000, seed))
            worst = max(worst, total_variation(emp, exact))
    elapsed = time.perf_counter() - t0
    ok = worst <= 0.02 and elapsed < 30
    assert verdict(5, ok, f"worst TV {worst:.4f} <= 0.02 over {len(dags)} DAGs x 3 seeds, {elapsed:.1f} s < 30 s")


def test_criterion_6_duality(verdict):
    t0 = time.perf_counter()
    checks = []
    for name in ("dtn_network.json", "dtn_industrial.json"):
        doc = scenario_doc(name)
        graph = TwinGraph.from_dict(doc["twin_graph"])
        text = graph.dumps()
        d = doc["durations"]
        dag = transform(graph, d.get("key", "duration"), d.get("by_twin"), d.get("default"))
        checks.append(not graph.validate() and TwinGraph.loads(text).dumps() == text
                      and len(dag.nodes) == len(graph.twins))
    industrial = TwinGraph.from_dict(scenario_doc("dtn_industrial.json")["twin_graph"])
    external = {t.id for t in industrial.twins.values() if industrial.assets[t.asset_id].kind.value == "External"}
    has_external = bool(external) and all(
        e.relation.value == "ConnectsTo" for e in industrial.edges if {e.parent, e.child} & external
    ) and any({e.parent, e.child} & external for e in industrial.edges)
    elapsed = time.perf_counter() - t0
    ok = all(checks) and has_external and elapsed < 5
    assert verdict(6, ok, f"network-only and industrial graphs valid/round-trip/node counts {checks}, {elapsed:.2f} s < 5 s")


def _tree(root: Path) -> dict[str, bytes]:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_criterion_7_determinism(capsys, tmp_path, verdict):
    rng = np.random.default_rng(0)
    trace = tmp_path / "trace.csv"
    trace.write_text(write_traces_csv([Trace(10.0, rng.normal(80, 6, 2000)), Trace(20.0, rng.normal(95, 9, 2000))]))
    commands = {
        "validate": ["validate", str(scenario_path("dtn_industrial.json"))],
        "evaluate": ["evaluate", str(scenario_path("diamond_discrete.json")), "--n", "20000", "--deadline", "8"],
        "evaluate --exact": ["evaluate", str(scenario_path("diamond_discrete.json")), "--exact"],
        "export-dag": ["export-dag", str(scenario_path("dtn_industrial.json"))],
        "failover": ["failover", str(scenario_path("failover.json"))],
        "replicate": ["replicate", str(scenario_path("replication.json"))],
        "fit": ["fit", str(trace), "--k", "2"],
    }
    differing = []
    for label, argv in commands.items():
        runs = []
        for attempt in ("a", "b"):
            out_dir = tmp_path / label.replace(" ", "_") / attempt
            code = main(argv + ["--out", str(out_dir)] if label != "validate" else argv)
            runs.append((code, capsys.readouterr().out, _tree(out_dir) if out_dir.exists() else {}))
        if runs[0] != runs[1]:
            differing.append(label)
    logs = [(tmp_path / "failover" / x / "events.jsonl").read_bytes() for x in "ab"]
    ok = not differing and logs[0] == logs[1] and len(logs[0]) > 0
    assert verdict(7, ok, f"{len(commands)} subcommands byte-identical across two runs (differing: {differing or 'none'}), EventLogs identical")

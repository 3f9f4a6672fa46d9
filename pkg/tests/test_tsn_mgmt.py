from __future__ import annotations

import copy

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import scenario_doc
from gdtn.errors import InvalidTopology, NoPath, UnknownLink
from gdtn.simkit import MS, Engine
from gdtn.tsn_mgmt import (
    FlowSpec,
    FlowState,
    Link,
    MgmtConfig,
    NodeKind,
    Topology,
    TrafficSpec,
    TsnNetwork,
    run_failover_scenario,
)

DOC = scenario_doc("failover.json")


def fixture(**traffic_overrides):
    traffic = dict(DOC["traffic"], **traffic_overrides)
    return Topology.from_dict(DOC["topology"]), MgmtConfig.from_dict(DOC["mgmt"]), TrafficSpec.from_dict(traffic)


def run(**traffic_overrides):
    return run_failover_scenario(*fixture(**traffic_overrides))


# -- topology and path selection ------------------------------------------------------


def test_shorter_path_chosen_first():
    topo, _, _ = fixture()
    assert topo.shortest_path("h1", "h2") == ["l1", "l2", "l3"]
    assert topo.shortest_path("h1", "h2", {"l2"}) == ["l1", "l4", "l5", "l6", "l3"]


def test_degenerate_and_disconnected_requests():
    topo, _, _ = fixture()
    with pytest.raises(NoPath):
        topo.shortest_path("h1", "h1")
    with pytest.raises(NoPath):
        topo.shortest_path("h1", "h2", set(topo.links))


def test_end_devices_never_transited():
    nodes = {"h1": NodeKind.END_DEVICE, "h2": NodeKind.END_DEVICE, "h3": NodeKind.END_DEVICE,
             "s1": NodeKind.SWITCH, "s2": NodeKind.SWITCH}
    links = {k: Link(k, a, b, 10) for k, a, b in [("a", "h1", "s1"), ("b", "s1", "h3"), ("c", "h3", "s2"), ("d", "s2", "h2")]}
    with pytest.raises(NoPath):
        Topology(nodes, links).shortest_path("h1", "h2")


def test_topology_invariants():
    nodes = {"h1": NodeKind.END_DEVICE, "s1": NodeKind.SWITCH, "h2": NodeKind.END_DEVICE}
    with pytest.raises(InvalidTopology):
        Topology(nodes, {"x": Link("x", "h1", "zz", 10)})
    with pytest.raises(InvalidTopology):
        Topology(nodes, {"x": Link("x", "h1", "s1", 0)})
    with pytest.raises(InvalidTopology):
        Topology(nodes, {"x": Link("x", "h1", "s1", 10)})  # h2 isolated


def _simple_paths(topo: Topology, src: str, dst: str):
    """Brute force: every simple path not transiting an end device."""
    out = []

    def walk(node, used_nodes, path):
        if node == dst:
            out.append(path)
            return
        if node != src and topo.nodes[node] is NodeKind.END_DEVICE:
            return
        for lid in sorted(topo.links):
            l = topo.links[lid]
            if node not in (l.a, l.b):
                continue
            nxt = l.other(node)
            if nxt not in used_nodes:
                walk(nxt, used_nodes | {nxt}, path + [lid])

    walk(src, {src}, [])
    return out


@st.composite
def meshes(draw):
    n_sw = draw(st.integers(2, 5))
    sws = [f"s{i}" for i in range(n_sw)]
    pairs = [(a, b) for i, a in enumerate(sws) for b in sws[i + 1:]]
    chosen = draw(st.lists(st.sampled_from(pairs), unique=True, min_size=n_sw - 1, max_size=len(pairs)))
    links = [(f"k{j:02d}", a, b) for j, (a, b) in enumerate(chosen)]
    a_sw, b_sw = draw(st.sampled_from(sws)), draw(st.sampled_from(sws))
    links += [("a0", "h1", a_sw), ("z9", b_sw, "h2")]
    names = draw(st.permutations([l[0] for l in links]))
    links = [(nm, a, b) for nm, (_, a, b) in zip(names, links)]
    return sws, links


@settings(max_examples=60, deadline=None)
@given(meshes())
def test_path_is_fewest_hops_then_lexicographic(mesh):
    sws, links = mesh
    nodes = {s: NodeKind.SWITCH for s in sws} | {"h1": NodeKind.END_DEVICE, "h2": NodeKind.END_DEVICE}
    try:
        topo = Topology(nodes, {k: Link(k, a, b, 7) for k, a, b in links})
    except InvalidTopology:
        return
    paths = _simple_paths(topo, "h1", "h2")
    if not paths:
        with pytest.raises(NoPath):
            topo.shortest_path("h1", "h2")
        return
    assert topo.shortest_path("h1", "h2") == min(paths, key=lambda p: (len(p), p))


# -- management plane ------------------------------------------------------------------


def test_flow_activates_after_both_pushes():
    topo, mgmt, _ = fixture()
    eng = Engine()
    net = TsnNetwork(eng, topo, mgmt)
    flow = net.configure_flow(FlowSpec("f", "h1", "h2"))
    assert flow.state is FlowState.PENDING
    log = eng.run(10**12)
    (active,) = log.of_kind("flow.active")
    assert active.t_ns == mgmt.compute_delay + max(mgmt.push_delay_net, mgmt.push_delay_dev)
    assert flow.state is FlowState.ACTIVE
    assert net.registry.matches(topo, net.flows)


def test_failure_injection_errors():
    topo, mgmt, _ = fixture()
    net = TsnNetwork(Engine(), topo, mgmt)
    with pytest.raises(UnknownLink):
        net.inject_link_failure("nope", 5)
    topo.links["l4"].up = False
    with pytest.raises(InvalidTopology):
        net.inject_link_failure("l4", 5)


def test_failure_off_path_changes_nothing():
    report = run(failure={"link": "l5", "at_ns": 1004 * MS})
    assert report.downtime_ns == 0
    assert report.path_after == report.path_before == ["l1", "l2", "l3"]
    assert report.log.of_kind("netconf.edit")[-1].t_ns < 1004 * MS
    assert report.registry_consistent


def test_reconfiguration_starts_after_detection():
    report = run()
    _, mgmt, traffic = fixture()
    (notify,) = report.log.of_kind("cnc.notify")
    assert notify.t_ns == traffic.failure_at_ns + mgmt.detect_delay
    assert report.restored_ns == traffic.failure_at_ns + mgmt.reconfiguration_time


def test_latency_equals_hop_sum_and_no_delivery_after_failure_on_dead_link():
    report = run()
    topo, _, traffic = fixture()
    for d in report.series:
        assert d.latency_ns == sum(topo.links[l].latency_ns for l in d.hops)
        if "l2" in d.hops:
            # l2 is the second hop; its far end is reached two hop latencies after tx
            assert d.tx_ns + 2 * 50_000 < traffic.failure_at_ns
    assert report.dropped > 0


def test_downtime_matches_timeline():
    report = run()
    topo, mgmt, traffic = fixture()
    before, after = report.plateaus()
    l1, l2 = before.pop(), after.pop()
    last_old = max(d.rx_ns for d in report.series if d.latency_ns == l1)
    expected = traffic.failure_at_ns + mgmt.reconfiguration_time + l2 - last_old
    assert report.downtime_ns == expected
    assert mgmt.reconfiguration_time <= report.downtime_ns <= mgmt.reconfiguration_time + traffic.period_ns + (l2 - l1)


def test_fixed_grid_talker_quantizes_to_period():
    report = run(restart_on_reconfig=False)
    _, mgmt, traffic = fixture()
    before, after = report.plateaus()
    slack = report.downtime_ns - mgmt.reconfiguration_time - (after.pop() - before.pop())
    assert 0 <= slack <= traffic.period_ns


def test_no_failure_single_plateau():
    report = run(failure=None)
    before, after = report.plateaus()
    assert report.downtime_ns == 0
    assert len(before) == 1 and after == set()


def test_no_alternative_path_marks_flow_down():
    report = run(failure={"link": "l3", "at_ns": 500 * MS})
    assert report.downtime_ns is None
    assert report.path_after == []
    assert report.registry_consistent


def test_periodic_registry_refresh_logged():
    topo, _, traffic = fixture()
    mgmt = MgmtConfig.from_dict(dict(DOC["mgmt"], registry_refresh_ns=100 * MS))
    report = run_failover_scenario(topo, mgmt, traffic)
    assert len(report.log.of_kind("dt.refresh")) == 20
    assert report.registry_consistent


def test_event_log_deterministic():
    a, b = run(), run()
    assert a.log.to_jsonl() == b.log.to_jsonl()
    assert a.latency_csv() == b.latency_csv()
    assert a.summary_json() == b.summary_json()


def test_exports():
    report = run()
    lines = report.latency_csv().splitlines()
    assert lines[0] == "t_ns,flow_id,latency_ns"
    assert lines[1].split(",")[1] == "f1"
    assert set(report.summary()) >= {"downtime_ns", "path_before", "path_after"}


@settings(max_examples=25, deadline=None)
@given(
    st.integers(min_value=200, max_value=1500),
    st.sampled_from([5, 10, 20]),
    st.integers(min_value=0, max_value=80),
)
def test_downtime_bounds_hold_for_any_failure_time(fail_ms, period_ms, detect_ms):
    topo = Topology.from_dict(copy.deepcopy(DOC["topology"]))
    mgmt = MgmtConfig.from_dict(dict(DOC["mgmt"], detect_delay_ns=detect_ms * MS))
    period = period_ms * MS
    failure = fail_ms * MS + 123
    traffic = TrafficSpec.from_dict(dict(DOC["traffic"], period_ns=period, failure={"link": "l2", "at_ns": failure}))
    report = run_failover_scenario(topo, mgmt, traffic)
    hop, l1, l2 = 50_000, 150_000, 250_000
    old = [d for d in report.series if "l2" in d.hops]
    new = [d for d in report.series if "l2" not in d.hops]
    last_old, first_new = max(old, key=lambda d: d.rx_ns), min(new, key=lambda d: d.rx_ns)
    # the last good packet crossed l2 before the failure, at most one period plus its transit earlier
    assert failure - period - 2 * hop <= last_old.tx_ns < failure - 2 * hop
    # the first rerouted packet passed s1 after the switches were configured, and no later than
    # the talker restart at flow activation
    configured = failure + mgmt.detect_delay + mgmt.compute_delay + mgmt.push_delay_net
    assert configured + l2 - hop <= first_new.rx_ns <= report.restored_ns + l2
    assert report.downtime_ns == first_new.rx_ns - last_old.rx_ns
    assert not [d for d in report.series if last_old.rx_ns < d.rx_ns < first_new.rx_ns]
    before, after = report.plateaus()
    assert after.pop() - before.pop() == l2 - l1

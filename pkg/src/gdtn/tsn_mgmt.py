"""
Centralized TSN management on the event kernel.

Actors: a CNC that computes paths and pushes switch configuration, a CUC
that pushes talker configuration through the device's TSN agent, switches
that forward by (flow, VLAN), and a registry holding the twin of the managed
network. A link failure reaches the CNC after a detection delay; the CNC
recomputes the path and both configuration pushes must land before the flow
is active again. Every delivered packet contributes one latency sample.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

from ._canonical import dumps_doc
from .errors import InvalidTopology, NoPath, UnknownLink
from .simkit import Engine, EventLog, Priority

BASE_VLAN = 100


class NodeKind(Enum):
    SWITCH = "switch"
    END_DEVICE = "end_device"


class FlowState(Enum):
    PENDING = "Pending"
    ACTIVE = "Active"
    RECONFIGURING = "Reconfiguring"
    DOWN = "Down"


@dataclass
class Link:
    id: str
    a: str
    b: str
    latency_ns: int
    up: bool = True
    epoch: int = 0  # bumped on every failure; stale in-flight packets are dropped

    def other(self, node: str) -> str:
        return self.b if node == self.a else self.a


@dataclass
class Topology:
    nodes: dict[str, NodeKind]
    links: dict[str, Link]

    def __post_init__(self):
        for l in self.links.values():
            if l.a not in self.nodes or l.b not in self.nodes:
                raise InvalidTopology(f"link {l.id} has unknown endpoint")
            if l.a == l.b:
                raise InvalidTopology(f"link {l.id} is a self-loop")
            if not isinstance(l.latency_ns, int) or l.latency_ns <= 0:
                raise InvalidTopology(f"link {l.id}: per-hop latency must be a positive integer")
        ends = self.end_devices()
        if ends:
            reach = self._component(ends[0])
            missing = [e for e in ends if e not in reach]
            if missing:
                raise InvalidTopology(f"end devices {missing} unreachable from {ends[0]}")

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> Topology:
        nodes = {n["id"]: NodeKind(n["kind"]) for n in d["nodes"]}
        links = {}
        for l in d["links"]:
            if l["id"] in links:
                raise InvalidTopology(f"duplicate link {l['id']}")
            links[l["id"]] = Link(l["id"], l["a"], l["b"], int(l["latency_ns"]), bool(l.get("up", True)))
        return cls(nodes, links)

    def end_devices(self) -> list[str]:
        return sorted(n for n, k in self.nodes.items() if k is NodeKind.END_DEVICE)

    def _component(self, start: str) -> set[str]:
        seen, todo = {start}, [start]
        while todo:
            u = todo.pop()
            for l in self.links.values():
                if u in (l.a, l.b) and l.other(u) not in seen:
                    seen.add(l.other(u))
                    todo.append(l.other(u))
        return seen

    def link_states(self) -> dict[str, bool]:
        return {lid: l.up for lid, l in sorted(self.links.items())}

    def shortest_path(self, src: str, dst: str, down: set[str] | frozenset[str] = frozenset()) -> list[str]:
        """Fewest hops over up links, ties broken by the lexicographic link-id sequence.

        End devices other than ``src``/``dst`` are never transited.
        """
        for n in (src, dst):
            if n not in self.nodes:
                raise NoPath(f"unknown node {n!r}")
        if src == dst:
            raise NoPath(f"src and dst are both {src!r}")
        adj: dict[str, list[Link]] = {n: [] for n in self.nodes}
        for l in self.links.values():
            if l.up and l.id not in down:
                adj[l.a].append(l)
                adj[l.b].append(l)
        # BFS by layers keeping the lexicographically smallest link sequence per node
        best: dict[str, tuple[str, ...]] = {src: ()}
        frontier = [src]
        while frontier:
            layer: dict[str, tuple[str, ...]] = {}
            for u in frontier:
                if u != src and self.nodes[u] is NodeKind.END_DEVICE:
                    continue
                for l in adj[u]:
                    v = l.other(u)
                    if v in best:
                        continue
                    cand = best[u] + (l.id,)
                    if v not in layer or cand < layer[v]:
                        layer[v] = cand
            best.update(layer)
            if dst in layer:
                return list(layer[dst])
            frontier = sorted(layer)
        raise NoPath(f"no path {src} -> {dst} over up links")

    def path_nodes(self, src: str, path: list[str]) -> list[str]:
        nodes = [src]
        for lid in path:
            nodes.append(self.links[lid].other(nodes[-1]))
        return nodes

    def path_latency(self, path: list[str]) -> int:
        return sum(self.links[l].latency_ns for l in path)


@dataclass(frozen=True)
class FlowSpec:
    id: str
    src: str
    dst: str
    qos: int = 0


@dataclass
class Flow:
    id: str
    src: str
    dst: str
    qos: int
    path: list[str]
    state: FlowState = FlowState.PENDING
    vlan: int = BASE_VLAN
    history: list[list[str]] = field(default_factory=list)


@dataclass(frozen=True)
class MgmtConfig:
    detect_delay: int  # ns, failure -> CNC notification
    compute_delay: int  # ns, CNC path computation
    push_delay_net: int  # ns, CNC -> switch configuration
    push_delay_dev: int  # ns, CUC -> TSN agent configuration
    registry_refresh: int | None = None  # ns, optional periodic DT refresh

    def __post_init__(self):
        for name in ("detect_delay", "compute_delay", "push_delay_net", "push_delay_dev"):
            if getattr(self, name) < 0:
                raise InvalidTopology(f"{name} must be >= 0")
        if self.registry_refresh is not None and self.registry_refresh <= 0:
            raise InvalidTopology("registry_refresh must be > 0")

    @property
    def reconfiguration_time(self) -> int:
        return self.detect_delay + self.compute_delay + max(self.push_delay_net, self.push_delay_dev)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> MgmtConfig:
        return cls(
            int(d["detect_delay_ns"]),
            int(d["compute_delay_ns"]),
            int(d["push_delay_net_ns"]),
            int(d["push_delay_dev_ns"]),
            None if d.get("registry_refresh_ns") is None else int(d["registry_refresh_ns"]),
        )


@dataclass
class DtRegistry:
    """Twin of the managed network: link states and flow states at ``updated_at``."""

    links: dict[str, bool] = field(default_factory=dict)
    flows: dict[str, tuple[str, tuple[str, ...]]] = field(default_factory=dict)
    updated_at: int = 0
    updates: int = 0

    def refresh(self, now: int, topology: Topology, flows: dict[str, Flow]) -> None:
        self.links = topology.link_states()
        self.flows = {f.id: (f.state.value, tuple(f.path)) for f in flows.values()}
        self.updated_at = now
        self.updates += 1

    def matches(self, topology: Topology, flows: dict[str, Flow]) -> bool:
        return self.links == topology.link_states() and self.flows == {
            f.id: (f.state.value, tuple(f.path)) for f in flows.values()
        }


@dataclass(frozen=True)
class Delivery:
    flow_id: str
    tx_ns: int
    rx_ns: int
    vlan: int
    hops: tuple[str, ...]

    @property
    def latency_ns(self) -> int:
        return self.rx_ns - self.tx_ns


class TsnNetwork:
    """Management and data plane of one scenario, driven by ``engine``."""

    def __init__(self, engine: Engine, topology: Topology, mgmt: MgmtConfig, period_ns: int = 0,
                 end_ns: int | None = None, restart_on_reconfig: bool = True):
        self.engine = engine
        self.topology = topology
        self.mgmt = mgmt
        self.period_ns = period_ns
        self.end_ns = end_ns
        self.restart_on_reconfig = restart_on_reconfig
        self.flows: dict[str, Flow] = {}
        self.registry = DtRegistry()
        self.cnc_known_down: set[str] = {l.id for l in topology.links.values() if not l.up}
        # switch -> (flow, vlan) -> egress link
        self.tables: dict[str, dict[tuple[str, int], str]] = {
            n: {} for n, k in topology.nodes.items() if k is NodeKind.SWITCH
        }
        # talker config: flow -> (vlan, egress link)
        self.agents: dict[str, tuple[int, str]] = {}
        self.deliveries: list[Delivery] = []
        self.drops: list[tuple[int, str, str]] = []  # (t_ns, flow, reason)
        self.sent = 0
        self._tx_handle = None
        self._pkt = 0
        self._pending_pushes: dict[str, int] = {}
        self.reconfigured_at: dict[str, list[int]] = {}
        self.registry.refresh(0, topology, self.flows)
        if mgmt.registry_refresh:
            engine.schedule(mgmt.registry_refresh, "dt.refresh", "dt", self._periodic_refresh)

    # -- management plane ------------------------------------------------

    def configure_flow(self, spec: FlowSpec) -> Flow:
        """Select a path now; switch and device pushes activate the flow later."""
        path = self.topology.shortest_path(spec.src, spec.dst, self.cnc_known_down)
        flow = Flow(spec.id, spec.src, spec.dst, spec.qos, path)
        self.flows[spec.id] = flow
        self.engine.schedule(
            self.mgmt.compute_delay, "cnc.path_computed", "cnc", lambda ev: self._push(flow),
            {"flow": flow.id, "path": list(path)},
        )
        return flow

    def _push(self, flow: Flow) -> None:
        flow.history.append(list(flow.path))
        vlan = flow.vlan
        hops = self.topology.path_nodes(flow.src, flow.path)
        entries = {hops[i]: flow.path[i] for i in range(1, len(hops) - 1)}
        self._pending_pushes[flow.id] = 2
        for sw in sorted(self.tables):
            egress = entries.get(sw)
            stale = [key for key in self.tables[sw] if key[0] == flow.id]
            if egress is None and not stale:
                continue
            self.engine.schedule(
                self.mgmt.push_delay_net, "netconf.edit", "cnc",
                lambda ev, sw=sw, egress=egress: self._install(sw, flow.id, vlan, egress),
                {"flow": flow.id, "switch": sw, "vlan": vlan, "egress": egress},
            )
        self.engine.schedule(
            self.mgmt.push_delay_net, "cnc.push_done", "cnc", lambda ev: self._push_done(flow),
            {"flow": flow.id, "side": "network"},
        )
        self.engine.schedule(
            self.mgmt.push_delay_dev, "cuc.agent_config", "cuc",
            lambda ev: self._configure_agent(flow, vlan, flow.path[0]),
            {"flow": flow.id, "device": flow.src, "vlan": vlan, "egress": flow.path[0]},
        )

    def _install(self, sw: str, flow_id: str, vlan: int, egress: str | None) -> None:
        table = self.tables[sw]
        for key in [k for k in table if k[0] == flow_id]:
            del table[key]
        if egress is not None:
            table[(flow_id, vlan)] = egress

    def _configure_agent(self, flow: Flow, vlan: int, egress: str) -> None:
        self.agents[flow.id] = (vlan, egress)
        self._push_done(flow)

    def _push_done(self, flow: Flow) -> None:
        self._pending_pushes[flow.id] -= 1
        if self._pending_pushes[flow.id]:
            return
        first = flow.state is FlowState.PENDING
        flow.state = FlowState.ACTIVE
        now = self.engine.now
        if not first:
            self.reconfigured_at.setdefault(flow.id, []).append(now)
        self.engine.schedule(0, "flow.active", "cnc", None, {"flow": flow.id, "path": list(flow.path), "vlan": flow.vlan})
        self.registry.refresh(now, self.topology, self.flows)
        if self.period_ns and (first or self.restart_on_reconfig):
            self._start_talker(flow)

    def inject_link_failure(self, link_id: str, at: int):
        link = self.topology.links.get(link_id)
        if link is None:
            raise UnknownLink(link_id)
        if not link.up:
            raise InvalidTopology(f"link {link_id} is already down")
        return self.engine.schedule_at(at, "link.down", link_id, lambda ev: self._fail(link), {"link": link_id})

    def _fail(self, link: Link) -> None:
        link.up = False
        link.epoch += 1
        self.engine.schedule(
            self.mgmt.detect_delay, "cnc.notify", link.id, lambda ev: self._notified(link.id), {"link": link.id}
        )

    def _notified(self, link_id: str) -> None:
        self.cnc_known_down.add(link_id)
        affected = [f for f in self.flows.values() if link_id in f.path and f.state is not FlowState.DOWN]
        if not affected:
            self.registry.refresh(self.engine.now, self.topology, self.flows)
            return
        for flow in sorted(affected, key=lambda f: f.id):
            flow.state = FlowState.RECONFIGURING
            self.engine.schedule(
                self.mgmt.compute_delay, "cnc.path_computed", "cnc", lambda ev, flow=flow: self._recompute(flow),
                {"flow": flow.id},
            )

    def _recompute(self, flow: Flow) -> None:
        try:
            path = self.topology.shortest_path(flow.src, flow.dst, self.cnc_known_down)
        except NoPath:
            flow.state = FlowState.DOWN
            flow.path = []
            self.registry.refresh(self.engine.now, self.topology, self.flows)
            return
        flow.path = path
        flow.vlan += 1
        self._push(flow)

    def _periodic_refresh(self, ev) -> None:
        self.registry.refresh(self.engine.now, self.topology, self.flows)
        self.engine.schedule(self.mgmt.registry_refresh, "dt.refresh", "dt", self._periodic_refresh)

    # -- data plane --------------------------------------------------------

    def _start_talker(self, flow: Flow) -> None:
        if self._tx_handle is not None:
            self._tx_handle.cancel()
        self._send(flow)

    def _send(self, flow: Flow) -> None:
        now = self.engine.now
        if self.end_ns is not None and now > self.end_ns:
            return
        cfg = self.agents.get(flow.id)
        if cfg is not None:
            vlan, egress = cfg
            pkt = {"id": self._pkt, "flow": flow.id, "vlan": vlan, "tx": now, "hops": []}
            self._pkt += 1
            self.sent += 1
            self.engine.schedule(0, "pkt.tx", flow.src, lambda ev: self._transmit(pkt, flow.src, egress),
                                 {"flow": flow.id, "pkt": pkt["id"], "vlan": vlan}, Priority.TRAFFIC)
        self._tx_handle = self.engine.schedule(
            self.period_ns, "talker.tick", flow.src, lambda ev: self._send(flow), {"flow": flow.id}, Priority.TRAFFIC
        )

    def _drop(self, pkt: dict, reason: str) -> None:
        self.drops.append((self.engine.now, pkt["flow"], reason))
        self.engine.schedule(0, "pkt.drop", pkt["flow"], None, {"pkt": pkt["id"], "reason": reason}, Priority.NETWORK)

    def _transmit(self, pkt: dict, node: str, link_id: str) -> None:
        link = self.topology.links[link_id]
        if not link.up:
            self._drop(pkt, f"link {link_id} down")
            return
        epoch = link.epoch
        nxt = link.other(node)
        self.engine.schedule(
            link.latency_ns, "pkt.rx", nxt, lambda ev: self._receive(pkt, nxt, link, epoch),
            {"pkt": pkt["id"], "link": link_id}, Priority.NETWORK,
        )

    def _receive(self, pkt: dict, node: str, link: Link, epoch: int) -> None:
        if not link.up or link.epoch != epoch:
            self._drop(pkt, f"link {link.id} failed in flight")
            return
        pkt["hops"].append(link.id)
        flow = self.flows[pkt["flow"]]
        if node == flow.dst:
            d = Delivery(flow.id, pkt["tx"], self.engine.now, pkt["vlan"], tuple(pkt["hops"]))
            self.deliveries.append(d)
            return
        table = self.tables.get(node)
        egress = None if table is None else table.get((pkt["flow"], pkt["vlan"]))
        if egress is None:
            self._drop(pkt, f"no entry at {node}")
            return
        self._transmit(pkt, node, egress)


# -- scenario driver --------------------------------------------------------


@dataclass(frozen=True)
class TrafficSpec:
    flow: FlowSpec
    period_ns: int
    duration_ns: int
    failure_link: str | None = None
    failure_at_ns: int | None = None
    restart_on_reconfig: bool = True

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> TrafficSpec:
        f = d["flow"]
        failure = d.get("failure")
        return cls(
            FlowSpec(f["id"], f["src"], f["dst"], int(f.get("qos", 0))),
            int(d["period_ns"]),
            int(d["duration_ns"]),
            None if not failure else failure["link"],
            None if not failure else int(failure["at_ns"]),
            bool(d.get("restart_on_reconfig", True)),
        )


@dataclass
class FailoverReport:
    flow_id: str
    series: list[Delivery]
    downtime_ns: int | None
    path_before: list[str]
    path_after: list[str]
    failure_ns: int | None
    restored_ns: int | None
    sent: int
    dropped: int
    log: EventLog
    registry_consistent: bool

    def summary(self) -> dict[str, Any]:
        return {
            "delivered": len(self.series),
            "downtime_ns": self.downtime_ns,
            "dropped": self.dropped,
            "failure_ns": self.failure_ns,
            "flow_id": self.flow_id,
            "path_after": self.path_after,
            "path_before": self.path_before,
            "registry_consistent": self.registry_consistent,
            "restored_ns": self.restored_ns,
            "sent": self.sent,
        }

    def summary_json(self) -> str:
        return dumps_doc(self.summary())

    def latency_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t_ns", "flow_id", "latency_ns"])
        for d in self.series:
            w.writerow([d.rx_ns, d.flow_id, d.latency_ns])
        return buf.getvalue()

    def plateaus(self) -> tuple[set[int], set[int]]:
        """Latencies delivered on the initial VLAN and on any later one."""
        if not self.series:
            return set(), set()
        first_vlan = min(d.vlan for d in self.series)
        before = {d.latency_ns for d in self.series if d.vlan == first_vlan}
        after = {d.latency_ns for d in self.series if d.vlan != first_vlan}
        return before, after


def downtime(deliveries: list[Delivery]) -> int:
    """Last delivery on the first path to first delivery on a later path (0 if none)."""
    if not deliveries:
        return 0
    first_vlan = min(d.vlan for d in deliveries)
    old = [d.rx_ns for d in deliveries if d.vlan == first_vlan]
    new = [d.rx_ns for d in deliveries if d.vlan != first_vlan]
    if not new:
        return 0
    return min(new) - max(old)


def run_failover_scenario(topology: Topology, mgmt: MgmtConfig, traffic: TrafficSpec, seed: int = 0) -> FailoverReport:
    engine = Engine(seed)
    net = TsnNetwork(engine, topology, mgmt, traffic.period_ns, traffic.duration_ns, traffic.restart_on_reconfig)
    flow = net.configure_flow(traffic.flow)
    path_before = list(flow.path)
    if traffic.failure_link is not None:
        net.inject_link_failure(traffic.failure_link, traffic.failure_at_ns)
    log = engine.run(traffic.duration_ns)
    restored = net.reconfigured_at.get(flow.id, [None])[0]
    dt: int | None = downtime(net.deliveries)
    if flow.state is FlowState.DOWN:
        dt = None
    return FailoverReport(
        flow_id=flow.id,
        series=list(net.deliveries),
        downtime_ns=dt,
        path_before=path_before,
        path_after=list(flow.path),
        failure_ns=traffic.failure_at_ns,
        restored_ns=restored,
        sent=net.sent,
        dropped=len(net.drops),
        log=log,
        registry_consistent=net.registry.matches(topology, net.flows),
    )


def topology_from_json(text: str) -> Topology:
    return Topology.from_dict(json.loads(text))

"""
Twin graph

Assets, the digital twins bound to them, and typed parent->child relations
between twins. The graph is a DAG that admits multiple parents, so the same
structure can describe a twin *of* a network (twins of network elements) and
a network *of* twins (network twins plus external assets they connect to).

Tiers are derived: a leaf has tier 0 and every other twin sits one above its
highest child. Synthesis rules fold child state into parents from the leaves
upward, and an abstract view hides the lower tiers while keeping ancestry.
"""

from __future__ import annotations

import copy
import heapq
import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Iterable

from ._canonical import dumps
from .errors import (
    AlreadyBound,
    CycleWouldForm,
    DuplicateId,
    EmptyChildSet,
    FidelityError,
    GdtnError,
    HasChildren,
    InvalidGraph,
    InvalidValue,
    MissingSourceKey,
    UnknownAsset,
    UnknownTwin,
)

INT64_MIN = -(2**63)
INT64_MAX = 2**63 - 1


class AssetKind(Enum):
    NETWORK_ELEMENT = "NetworkElement"
    END_DEVICE = "EndDevice"
    INDUSTRIAL_ASSET = "IndustrialAsset"
    SERVICE = "Service"
    EXTERNAL = "External"


class TwinFidelity(Enum):
    DOPPEL = "Doppel"  # full replica of the asset's attributes
    LIGHT = "Light"  # declared subset only


class Relation(Enum):
    CONTAINS = "Contains"
    CONNECTS_TO = "ConnectsTo"
    DEPENDS_ON = "DependsOn"


class Aggregator(Enum):
    SUM = "Sum"
    MAX = "Max"
    MIN = "Min"
    MEAN = "Mean"
    COUNT = "Count"


def check_value(value: Any, where: str) -> None:
    if isinstance(value, bool) or isinstance(value, (float, str)):
        return
    if isinstance(value, int):
        if not INT64_MIN <= value <= INT64_MAX:
            raise InvalidValue(f"{where}: integer {value} outside int64 range")
        return
    raise InvalidValue(f"{where}: unsupported value type {type(value).__name__}")


@dataclass(frozen=True)
class Asset:
    id: str
    kind: AssetKind
    attributes: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        for k, v in self.attributes.items():
            check_value(v, f"asset {self.id!r} attribute {k!r}")

    def __hash__(self):
        return hash(self.id)


@dataclass
class DigitalTwin:
    id: str
    asset_id: str
    fidelity: TwinFidelity
    exposed_keys: frozenset[str]
    state: dict[str, Any] = field(default_factory=dict)
    tier: int = 0


@dataclass(frozen=True)
class Edge:
    parent: str
    child: str
    relation: Relation

    def sort_key(self):
        return (self.parent, self.child, self.relation.value)


@dataclass(frozen=True)
class SynthesisRule:
    target_key: str
    aggregator: Aggregator
    source_key: str


@dataclass(frozen=True)
class Violation:
    """A broken invariant. ``code`` names the invariant, ``subject`` the twin or edge."""

    code: str
    subject: str
    message: str

    def __str__(self):
        return f"{self.code}: {self.subject}: {self.message}"


def _aggregate(agg: Aggregator, values: list[Any], where: str) -> Any:
    if not values:
        raise EmptyChildSet(where)
    if agg is Aggregator.COUNT:
        return len(values)
    for v in values:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise InvalidValue(f"{where}: {agg.value} needs numeric values, got {v!r}")
    if agg is Aggregator.SUM:
        return sum(values)
    if agg is Aggregator.MAX:
        return max(values)
    if agg is Aggregator.MIN:
        return min(values)
    return sum(values) / len(values)


class TwinGraph:
    """Multi-parent DAG of digital twins.

    Structural mutators (``add_asset``, ``bind_twin``, ``link``, ``remove_twin``)
    change the graph in place and keep tiers current. ``synthesize`` and
    ``abstract_view`` leave the receiver untouched and return a new graph.
    """

    def __init__(self):
        self.assets: dict[str, Asset] = {}
        self.twins: dict[str, DigitalTwin] = {}
        self.edges: set[Edge] = set()
        self.rules: list[SynthesisRule] = []

    # -- construction ---------------------------------------------------

    def add_asset(self, asset: Asset) -> TwinGraph:
        if asset.id in self.assets:
            raise DuplicateId(asset.id)
        self.assets[asset.id] = asset
        return self

    def bind_twin(
        self,
        asset_id: str,
        fidelity: TwinFidelity,
        exposed_keys: Iterable[str] | None = None,
        twin_id: str | None = None,
    ) -> DigitalTwin:
        """Create a tier-0 twin whose state is projected from the asset.

        ``exposed_keys`` defaults to every attribute; a Doppel twin must expose
        exactly that set. ``twin_id`` defaults to the asset id.
        """
        asset = self.assets.get(asset_id)
        if asset is None:
            raise UnknownAsset(asset_id)
        if any(t.asset_id == asset_id for t in self.twins.values()):
            raise AlreadyBound(asset_id)
        twin_id = asset_id if twin_id is None else twin_id
        if twin_id in self.twins:
            raise DuplicateId(twin_id)
        all_keys = frozenset(asset.attributes)
        keys = all_keys if exposed_keys is None else frozenset(exposed_keys)
        if fidelity is TwinFidelity.DOPPEL and keys != all_keys:
            raise FidelityError(f"Doppel twin of {asset_id!r} must expose all of {sorted(all_keys)}")
        unknown = keys - all_keys
        if unknown:
            raise FidelityError(f"asset {asset_id!r} has no attributes {sorted(unknown)}")
        twin = DigitalTwin(
            id=twin_id,
            asset_id=asset_id,
            fidelity=fidelity,
            exposed_keys=keys,
            state={k: asset.attributes[k] for k in keys},
        )
        self.twins[twin_id] = twin
        self._retier()
        return twin

    def link(self, parent_id: str, child_id: str, relation: Relation) -> TwinGraph:
        for tid in (parent_id, child_id):
            if tid not in self.twins:
                raise UnknownTwin(tid)
        if parent_id == child_id or self._reaches(child_id, parent_id):
            raise CycleWouldForm(f"{parent_id} -> {child_id}")
        self.edges.add(Edge(parent_id, child_id, relation))
        self._retier()
        return self

    def unlink(self, parent_id: str, child_id: str, relation: Relation) -> TwinGraph:
        self.edges.discard(Edge(parent_id, child_id, relation))
        self._retier()
        return self

    def remove_twin(self, twin_id: str) -> TwinGraph:
        """Drop a twin and its inbound edges. Twins with children are refused."""
        if twin_id not in self.twins:
            raise UnknownTwin(twin_id)
        if self.children(twin_id):
            raise HasChildren(twin_id)
        self.edges = {e for e in self.edges if e.child != twin_id}
        del self.twins[twin_id]
        self._retier()
        return self

    def set_rules(self, rules: Iterable[SynthesisRule]) -> TwinGraph:
        self.rules = list(rules)
        return self

    # -- structure queries ----------------------------------------------

    def children(self, twin_id: str) -> list[str]:
        return sorted({e.child for e in self.edges if e.parent == twin_id})

    def parents(self, twin_id: str) -> list[str]:
        return sorted({e.parent for e in self.edges if e.child == twin_id})

    def roots(self) -> list[str]:
        has_parent = {e.child for e in self.edges}
        return sorted(t for t in self.twins if t not in has_parent)

    def leaves(self) -> list[str]:
        has_child = {e.parent for e in self.edges}
        return sorted(t for t in self.twins if t not in has_child)

    def _adjacency(self) -> dict[str, set[str]]:
        adj: dict[str, set[str]] = {t: set() for t in self.twins}
        for e in self.edges:
            adj.setdefault(e.parent, set()).add(e.child)
            adj.setdefault(e.child, set())
        return adj

    def _reaches(self, src: str, dst: str) -> bool:
        adj = self._adjacency()
        stack, seen = [src], {src}
        while stack:
            u = stack.pop()
            if u == dst:
                return True
            for v in adj.get(u, ()):
                if v not in seen:
                    seen.add(v)
                    stack.append(v)
        return False

    def bottom_up_order(self) -> list[str]:
        """Children before parents; ties broken by twin id."""
        adj = self._adjacency()
        pending = {u: len(vs) for u, vs in adj.items()}
        rev: dict[str, list[str]] = {u: [] for u in adj}
        for u, vs in adj.items():
            for v in vs:
                rev[v].append(u)
        ready = [u for u, n in pending.items() if n == 0]
        heapq.heapify(ready)
        order = []
        while ready:
            u = heapq.heappop(ready)
            order.append(u)
            for p in rev[u]:
                pending[p] -= 1
                if pending[p] == 0:
                    heapq.heappush(ready, p)
        if len(order) != len(adj):
            raise InvalidGraph("graph has a cycle")
        return order

    def top_down_order(self) -> list[str]:
        """Parents before children; ties broken by twin id."""
        adj = self._adjacency()
        indeg = {u: 0 for u in adj}
        for vs in adj.values():
            for v in vs:
                indeg[v] += 1
        ready = [u for u, n in indeg.items() if n == 0]
        heapq.heapify(ready)
        order = []
        while ready:
            u = heapq.heappop(ready)
            order.append(u)
            for v in adj[u]:
                indeg[v] -= 1
                if indeg[v] == 0:
                    heapq.heappush(ready, v)
        if len(order) != len(adj):
            raise InvalidGraph("graph has a cycle")
        return order

    def computed_tiers(self) -> dict[str, int]:
        adj = self._adjacency()
        tiers: dict[str, int] = {}
        for u in self.bottom_up_order():
            kids = adj[u]
            tiers[u] = 1 + max(tiers[v] for v in kids) if kids else 0
        return tiers

    def _retier(self) -> None:
        for tid, tier in self.computed_tiers().items():
            if tid in self.twins:
                self.twins[tid].tier = tier

    def max_tier(self) -> int:
        return max((t.tier for t in self.twins.values()), default=0)

    # -- validation -----------------------------------------------------

    def validate(self) -> list[Violation]:
        out: list[Violation] = []
        twin_of: dict[str, str] = {}
        for tid in sorted(self.twins):
            t = self.twins[tid]
            asset = self.assets.get(t.asset_id)
            if asset is None:
                out.append(Violation("UnknownAsset", tid, f"references missing asset {t.asset_id!r}"))
                continue
            if t.asset_id in twin_of:
                out.append(Violation("AlreadyBound", tid, f"asset {t.asset_id!r} already bound to {twin_of[t.asset_id]!r}"))
            twin_of.setdefault(t.asset_id, tid)
            required = set(asset.attributes) if t.fidelity is TwinFidelity.DOPPEL else set(t.exposed_keys)
            missing = sorted(required - set(t.state))
            if missing:
                out.append(Violation("FidelityMismatch", tid, f"{t.fidelity.value} twin lacks keys {missing}"))
            if t.fidelity is TwinFidelity.LIGHT and not t.exposed_keys <= set(asset.attributes):
                out.append(Violation("FidelityMismatch", tid, "exposed keys not all asset attributes"))
            for k, v in sorted(t.state.items()):
                try:
                    check_value(v, f"twin {tid!r} state {k!r}")
                except InvalidValue as exc:
                    out.append(Violation("InvalidValue", tid, str(exc)))
        for e in sorted(self.edges, key=Edge.sort_key):
            for end in (e.parent, e.child):
                if end not in self.twins:
                    out.append(Violation("DanglingEdge", f"{e.parent}->{e.child}", f"endpoint {end!r} does not exist"))
        live = TwinGraph()
        live.twins = self.twins
        # dangling endpoints count as leaves so one broken edge reports once
        live.edges = set(self.edges)
        try:
            tiers = live.computed_tiers()
        except InvalidGraph:
            out.append(Violation("Cycle", "graph", "directed cycle among twins"))
        else:
            for tid in sorted(self.twins):
                if self.twins[tid].tier != tiers[tid]:
                    out.append(Violation("TierMismatch", tid, f"tier {self.twins[tid].tier} != derived {tiers[tid]}"))
        return out

    # -- hierarchy operations --------------------------------------------

    def copy(self) -> TwinGraph:
        return copy.deepcopy(self)

    def synthesize(self, rules: Iterable[SynthesisRule] | None = None) -> TwinGraph:
        """Return a copy with every rule applied to every non-leaf twin, leaves first."""
        rules = self.rules if rules is None else list(rules)
        if self.validate():
            raise InvalidGraph("synthesize needs a valid graph")
        g = self.copy()
        for tid in g.bottom_up_order():
            kids = g.children(tid)
            if not kids:
                continue
            parent = g.twins[tid]
            for rule in rules:
                values = []
                for c in kids:
                    state = g.twins[c].state
                    if rule.source_key not in state:
                        raise MissingSourceKey(c, rule.source_key)
                    values.append(state[rule.source_key])
                parent.state[rule.target_key] = _aggregate(rule.aggregator, values, f"twin {tid!r}")
        return g

    def abstract_view(self, tier_floor: int) -> TwinGraph:
        """Keep twins with tier >= ``tier_floor`` and contract the rest.

        ``u -> v`` appears in the view iff the original has a path from u to v
        whose interior twins were all removed. A contracted edge keeps its
        relation when every hop on the path shares it, else becomes DependsOn.
        A floor above the highest tier keeps the roots.
        """
        if tier_floor < 0:
            raise ValueError("tier_floor must be >= 0")
        if tier_floor > self.max_tier():
            keep = set(self.roots())
        else:
            keep = {t for t, tw in self.twins.items() if tw.tier >= tier_floor}
        out_edges: dict[str, list[Edge]] = {}
        for e in self.edges:
            out_edges.setdefault(e.parent, []).append(e)
        new_edges: set[Edge] = set()
        for u in keep:
            # (node, relation common to the path so far or None if mixed)
            stack = [(e.child, e.relation) for e in out_edges.get(u, [])]
            seen = set()
            while stack:
                v, rel = stack.pop()
                if (v, rel) in seen:
                    continue
                seen.add((v, rel))
                if v in keep:
                    new_edges.add(Edge(u, v, rel or Relation.DEPENDS_ON))
                    continue
                for e in out_edges.get(v, []):
                    stack.append((e.child, rel if rel is e.relation else None))
        view = TwinGraph()
        view.assets = copy.deepcopy(self.assets)
        view.twins = {t: copy.deepcopy(self.twins[t]) for t in keep}
        view.edges = new_edges
        view.rules = list(self.rules)
        view._retier()
        return view

    def reachability(self) -> set[tuple[str, str]]:
        """Transitive closure as (ancestor, descendant) pairs."""
        adj = self._adjacency()
        pairs = set()
        for s in adj:
            stack, seen = list(adj[s]), set()
            while stack:
                v = stack.pop()
                if v in seen:
                    continue
                seen.add(v)
                pairs.add((s, v))
                stack.extend(adj[v])
        return pairs

    # -- equality & serialization ----------------------------------------

    def __eq__(self, other):
        if not isinstance(other, TwinGraph):
            return NotImplemented
        return (
            self.assets == other.assets
            and self.twins == other.twins
            and self.edges == other.edges
            and self.rules == other.rules
        )

    def __repr__(self):
        return f"TwinGraph({len(self.assets)} assets, {len(self.twins)} twins, {len(self.edges)} edges)"

    def to_dict(self) -> dict[str, Any]:
        return {
            "assets": [
                {"attributes": a.attributes, "id": a.id, "kind": a.kind.value}
                for a in sorted(self.assets.values(), key=lambda a: a.id)
            ],
            "edges": [
                {"child": e.child, "parent": e.parent, "relation": e.relation.value}
                for e in sorted(self.edges, key=Edge.sort_key)
            ],
            "rules": [
                {"aggregator": r.aggregator.value, "source_key": r.source_key, "target_key": r.target_key}
                for r in self.rules
            ],
            "twins": [
                {
                    "asset_id": t.asset_id,
                    "exposed_keys": sorted(t.exposed_keys),
                    "fidelity": t.fidelity.value,
                    "id": t.id,
                    "state": t.state,
                }
                for t in sorted(self.twins.values(), key=lambda t: t.id)
            ],
        }

    def dumps(self) -> str:
        """Line-oriented canonical JSON: one record per line."""
        doc = self.to_dict()
        lines = ["{"]
        sections = ["assets", "edges", "rules", "twins"]
        for i, key in enumerate(sections):
            items = doc[key]
            tail = "," if i < len(sections) - 1 else ""
            if not items:
                lines.append(f'"{key}": []{tail}')
                continue
            lines.append(f'"{key}": [')
            for j, item in enumerate(items):
                lines.append(dumps(item) + ("," if j < len(items) - 1 else ""))
            lines.append("]" + tail)
        lines.append("}")
        return "\n".join(lines) + "\n"

    @classmethod
    def loads(cls, text: str) -> TwinGraph:
        return cls.from_dict(json.loads(text))

    @classmethod
    def from_dict(cls, doc: dict[str, Any]) -> TwinGraph:
        graph, errors = build_collecting(doc)
        if errors:
            raise errors[0]
        return graph


def build_collecting(doc: dict[str, Any]) -> tuple[TwinGraph, list[GdtnError]]:
    """Build through the public operations, collecting failures instead of stopping.

    Edges are linked in canonical order, so the first edge that would close a
    cycle is the one reported.
    """
    g = TwinGraph()
    errors: list[GdtnError] = []
    for a in doc.get("assets", []):
        try:
            g.add_asset(Asset(a["id"], AssetKind(a["kind"]), dict(a.get("attributes", {}))))
        except GdtnError as exc:
            errors.append(exc)
    for t in doc.get("twins", []):
        try:
            fidelity = TwinFidelity(t["fidelity"])
            keys = t.get("exposed_keys")
            twin = g.bind_twin(t["asset_id"], fidelity, keys, twin_id=t.get("id"))
            if "state" in t:
                for k, v in t["state"].items():
                    check_value(v, f"twin {twin.id!r} state {k!r}")
                twin.state = dict(t["state"])
        except GdtnError as exc:
            errors.append(exc)
    edges = sorted(doc.get("edges", []), key=lambda e: (e["parent"], e["child"], e["relation"]))
    for e in edges:
        try:
            g.link(e["parent"], e["child"], Relation(e["relation"]))
        except GdtnError as exc:
            errors.append(exc)
    g.rules = [
        SynthesisRule(r["target_key"], Aggregator(r["aggregator"]), r["source_key"]) for r in doc.get("rules", [])
    ]
    return g, errors

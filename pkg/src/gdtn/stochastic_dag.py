"""
Activity DAGs with stochastic durations.

A twin graph becomes a precedence DAG (one activity per twin, Contains and
DependsOn edges as precedences) whose makespan is evaluated either exactly,
by enumerating every joint outcome of discrete durations, or by seeded Monte
Carlo where replication ``i`` draws from a counter-based stream keyed on
``(seed, i)`` and is therefore independent of evaluation order.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Any, Mapping, Union

import numpy as np

from ._canonical import dumps_doc
from .errors import (
    InvalidDistribution,
    InvalidGraph,
    MissingDuration,
    StateSpaceTooLarge,
    UnsupportedDist,
)
from .mixture import MixtureModel
from .simkit import counter_uniform, replication_keys
from .twin_graph import Relation, TwinGraph

PROB_TOL = 1e-9
MAX_STATES = 10**6


# -- duration distributions --------------------------------------------------


@dataclass(frozen=True)
class Deterministic:
    value: float

    def __post_init__(self):
        if not self.value >= 0:
            raise InvalidDistribution(f"negative duration {self.value}")


@dataclass(frozen=True)
class Uniform:
    lo: float
    hi: float

    def __post_init__(self):
        if not 0 <= self.lo <= self.hi:
            raise InvalidDistribution(f"need 0 <= lo <= hi, got [{self.lo}, {self.hi}]")


@dataclass(frozen=True)
class Exponential:
    rate: float

    def __post_init__(self):
        if not self.rate > 0:
            raise InvalidDistribution(f"rate must be > 0, got {self.rate}")


@dataclass(frozen=True)
class Discrete:
    points: tuple[tuple[float, float], ...]  # (value, prob)

    def __post_init__(self):
        pts = tuple((float(v), float(p)) for v, p in self.points)
        object.__setattr__(self, "points", pts)
        if not pts:
            raise InvalidDistribution("empty discrete distribution")
        if any(v < 0 or p < 0 for v, p in pts):
            raise InvalidDistribution("values and probabilities must be >= 0")
        total = sum(p for _, p in pts)
        if abs(total - 1.0) > PROB_TOL:
            raise InvalidDistribution(f"probabilities sum to {total}")


@dataclass(frozen=True)
class Mixture:
    """Response-time mixture (milliseconds) used as a duration in seconds."""

    model: MixtureModel


DurationDist = Union[Deterministic, Uniform, Exponential, Discrete, Mixture]


def dist_to_dict(d: DurationDist) -> dict[str, Any]:
    if isinstance(d, Deterministic):
        return {"type": "deterministic", "value": d.value}
    if isinstance(d, Uniform):
        return {"type": "uniform", "lo": d.lo, "hi": d.hi}
    if isinstance(d, Exponential):
        return {"type": "exponential", "rate": d.rate}
    if isinstance(d, Discrete):
        return {"type": "discrete", "points": [[v, p] for v, p in d.points]}
    if isinstance(d, Mixture):
        return {"type": "mixture", "model": d.model.to_dict()}
    raise UnsupportedDist(type(d).__name__)


def dist_from_dict(d: Mapping[str, Any]) -> DurationDist:
    kind = d.get("type")
    try:
        if kind == "deterministic":
            return Deterministic(float(d["value"]))
        if kind == "uniform":
            return Uniform(float(d["lo"]), float(d["hi"]))
        if kind == "exponential":
            return Exponential(float(d["rate"]))
        if kind == "discrete":
            return Discrete(tuple((v, p) for v, p in d["points"]))
        if kind == "mixture":
            return Mixture(MixtureModel.from_dict(d["model"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise InvalidDistribution(f"bad {kind} distribution: {exc}") from exc
    raise InvalidDistribution(f"unknown distribution type {kind!r}")


def dist_mean(d: DurationDist) -> float:
    if isinstance(d, Deterministic):
        return d.value
    if isinstance(d, Uniform):
        return 0.5 * (d.lo + d.hi)
    if isinstance(d, Exponential):
        return 1.0 / d.rate
    if isinstance(d, Discrete):
        return sum(v * p for v, p in d.points)
    return d.model.mean() / 1000.0


def _sample_lane(d: DurationDist, keys: np.ndarray, lane: int) -> np.ndarray:
    n = keys.size
    if isinstance(d, Deterministic):
        return np.full(n, d.value)
    if isinstance(d, Uniform):
        return d.lo + (d.hi - d.lo) * counter_uniform(keys, lane)
    if isinstance(d, Exponential):
        return -np.log1p(-counter_uniform(keys, lane)) / d.rate
    if isinstance(d, Discrete):
        values = np.array([v for v, _ in d.points])
        cum = np.cumsum([p for _, p in d.points])
        cum[-1] = 1.0
        idx = np.searchsorted(cum, counter_uniform(keys, lane), side="right")
        return values[np.minimum(idx, len(values) - 1)]
    if isinstance(d, Mixture):
        w, mu, sd = d.model.arrays()
        cum = np.cumsum(w)
        cum[-1] = 1.0
        out = np.empty(n)
        todo = np.arange(n)
        draw = 0
        while todo.size:
            k = keys[todo]
            comp = np.minimum(np.searchsorted(cum, counter_uniform(k, lane, draw), side="right"), len(w) - 1)
            u1 = counter_uniform(k, lane, draw + 1)
            u2 = counter_uniform(k, lane, draw + 2)
            z = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
            out[todo] = mu[comp] + sd[comp] * z
            todo = todo[out[todo] <= 0]
            draw += 3
            if draw > 30_000:
                raise InvalidDistribution("mixture puts (almost) no mass above 0")
        return out / 1000.0
    raise UnsupportedDist(type(d).__name__)


# -- the DAG -----------------------------------------------------------------


class StochasticDag:
    def __init__(self, nodes: Mapping[str, DurationDist], edges=()):
        self.nodes: dict[str, DurationDist] = dict(nodes)
        self.edges: set[tuple[str, str]] = {(a, b) for a, b in edges}
        self._order = self._check()

    def _check(self) -> list[str]:
        if not self.nodes:
            raise InvalidGraph("DAG needs at least one node")
        for a, b in self.edges:
            if a not in self.nodes or b not in self.nodes:
                raise InvalidGraph(f"edge {a}->{b} references a missing node")
            if a == b:
                raise InvalidGraph(f"self-loop on {a}")
        preds = self.predecessors()
        indeg = {u: len(preds[u]) for u in self.nodes}
        succ: dict[str, list[str]] = {u: [] for u in self.nodes}
        for a, b in self.edges:
            succ[a].append(b)
        ready = sorted(u for u, d in indeg.items() if d == 0)
        order = []
        while ready:
            u = ready.pop(0)
            order.append(u)
            for v in sorted(succ[u]):
                indeg[v] -= 1
                if indeg[v] == 0:
                    ready.append(v)
            ready.sort()
        if len(order) != len(self.nodes):
            raise InvalidGraph("precedence graph has a cycle")
        return order

    def predecessors(self) -> dict[str, list[str]]:
        preds: dict[str, list[str]] = {u: [] for u in self.nodes}
        for a, b in sorted(self.edges):
            preds[b].append(a)
        return preds

    @property
    def order(self) -> list[str]:
        return list(self._order)

    def sources(self) -> list[str]:
        has_pred = {b for _, b in self.edges}
        return sorted(u for u in self.nodes if u not in has_pred)

    def sinks(self) -> list[str]:
        has_succ = {a for a, _ in self.edges}
        return sorted(u for u in self.nodes if u not in has_succ)

    def __eq__(self, other):
        return isinstance(other, StochasticDag) and self.nodes == other.nodes and self.edges == other.edges

    def __repr__(self):
        return f"StochasticDag({len(self.nodes)} nodes, {len(self.edges)} edges)"


def makespan(dag: StochasticDag, durations: Mapping[str, np.ndarray]) -> np.ndarray:
    """Vectorised longest path: finish(v) = duration(v) + max finish of predecessors."""
    preds = dag.predecessors()
    finish: dict[str, np.ndarray] = {}
    for v in dag.order:
        d = np.asarray(durations[v], dtype=float)
        if preds[v]:
            start = finish[preds[v][0]]
            for u in preds[v][1:]:
                start = np.maximum(start, finish[u])
            finish[v] = start + d
        else:
            finish[v] = d
    sinks = dag.sinks()
    out = finish[sinks[0]]
    for s in sinks[1:]:
        out = np.maximum(out, finish[s])
    return out


# -- transform ---------------------------------------------------------------


def _coerce_duration(value: Any, twin: str) -> DurationDist:
    if isinstance(value, (Deterministic, Uniform, Exponential, Discrete, Mixture)):
        return value
    if isinstance(value, Mapping):
        return dist_from_dict(value)
    if isinstance(value, bool):
        raise InvalidDistribution(f"twin {twin!r}: boolean is not a duration")
    if isinstance(value, (int, float)):
        return Deterministic(float(value))
    if isinstance(value, str):
        try:
            return dist_from_dict(json.loads(value))
        except json.JSONDecodeError as exc:
            raise InvalidDistribution(f"twin {twin!r}: unparsable duration {value!r}") from exc
    raise InvalidDistribution(f"twin {twin!r}: unsupported duration {value!r}")


def transform(
    graph: TwinGraph,
    duration_key: str = "duration",
    overrides: Mapping[str, Any] | None = None,
    default: Any = None,
) -> StochasticDag:
    """One activity per twin; Contains/DependsOn edges become precedences.

    A twin's duration comes from ``overrides[twin]``, else its state under
    ``duration_key`` (a number of seconds or a JSON-encoded distribution),
    else ``default``. With none of these, :class:`MissingDuration` is raised.
    Precedence follows edge direction, so a twin with two parents gets two
    incoming precedences.
    """
    violations = graph.validate()
    if violations:
        raise InvalidGraph(str(violations[0]))
    overrides = overrides or {}
    nodes: dict[str, DurationDist] = {}
    for tid in sorted(graph.twins):
        if tid in overrides:
            raw = overrides[tid]
        elif duration_key in graph.twins[tid].state:
            raw = graph.twins[tid].state[duration_key]
        elif default is not None:
            raw = default
        else:
            raise MissingDuration(tid)
        nodes[tid] = _coerce_duration(raw, tid)
    edges = {(e.parent, e.child) for e in graph.edges if e.relation is not Relation.CONNECTS_TO}
    return StochasticDag(nodes, edges)


# -- evaluation --------------------------------------------------------------


@dataclass(frozen=True)
class CompletionStats:
    samples: int
    mean: float
    std: float
    p50: float
    p95: float
    p99: float
    deadline: float | None = None
    deadline_prob: float | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "deadline": self.deadline,
            "deadline_prob": self.deadline_prob,
            "mean": self.mean,
            "p50": self.p50,
            "p95": self.p95,
            "p99": self.p99,
            "samples": self.samples,
            "std": self.std,
        }


def nearest_rank(sorted_values: np.ndarray, p: float) -> float:
    """Nearest-rank percentile (p in (0, 1]) of an ascending array."""
    n = sorted_values.size
    rank = max(1, math.ceil(p * n))
    return float(sorted_values[rank - 1])


def completion_samples(dag: StochasticDag, n: int, seed: int, start: int = 0, workers: int = 1) -> np.ndarray:
    """Makespans of replications ``start .. start+n-1``.

    Replication ``i`` is a pure function of ``(dag, seed, i)``; chunks may be
    evaluated on worker threads without changing the result.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    lanes = {v: j for j, v in enumerate(sorted(dag.nodes))}

    def chunk(lo: int, hi: int) -> np.ndarray:
        keys = replication_keys(seed, np.arange(lo, hi, dtype=np.uint64))
        durs = {v: _sample_lane(d, keys, lanes[v]) for v, d in dag.nodes.items()}
        return makespan(dag, durs)

    if workers <= 1:
        return chunk(start, start + n)
    bounds = np.linspace(start, start + n, workers + 1).astype(int)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(lambda b: chunk(b[0], b[1]), zip(bounds[:-1], bounds[1:])))
    return np.concatenate(parts)


def stats_from_samples(samples: np.ndarray, deadline: float | None = None) -> CompletionStats:
    s = np.sort(samples)
    return CompletionStats(
        samples=int(s.size),
        mean=float(s.mean()),
        std=float(s.std()),
        p50=nearest_rank(s, 0.50),
        p95=nearest_rank(s, 0.95),
        p99=nearest_rank(s, 0.99),
        deadline=deadline,
        deadline_prob=None if deadline is None else float(np.count_nonzero(s <= deadline) / s.size),
    )


def completion_mc(
    dag: StochasticDag, n: int, seed: int, deadline: float | None = None, workers: int = 1
) -> CompletionStats:
    return stats_from_samples(completion_samples(dag, n, seed, workers=workers), deadline)


def completion_exact(dag: StochasticDag) -> list[tuple[float, float]]:
    """Exact makespan distribution by enumerating every joint discrete outcome."""
    names = sorted(dag.nodes)
    for v in names:
        if not isinstance(dag.nodes[v], Discrete):
            raise UnsupportedDist(f"node {v!r} is {type(dag.nodes[v]).__name__}, need Discrete")
    sizes = [len(dag.nodes[v].points) for v in names]
    total = math.prod(sizes)
    if total > MAX_STATES:
        raise StateSpaceTooLarge(f"{total} joint outcomes > {MAX_STATES}")
    idx = np.unravel_index(np.arange(total), sizes)
    prob = np.ones(total)
    durs = {}
    for v, ix in zip(names, idx):
        vals = np.array([x for x, _ in dag.nodes[v].points])
        ps = np.array([p for _, p in dag.nodes[v].points])
        durs[v] = vals[ix]
        prob *= ps[ix]
    ms = makespan(dag, durs)
    values, inverse = np.unique(ms, return_inverse=True)
    masses = np.bincount(inverse, weights=prob, minlength=values.size)
    return [(float(v), float(p)) for v, p in zip(values, masses) if p > 0]


def empirical_distribution(samples: np.ndarray) -> list[tuple[float, float]]:
    values, counts = np.unique(samples, return_counts=True)
    return [(float(v), float(c) / samples.size) for v, c in zip(values, counts)]


def total_variation(p: list[tuple[float, float]], q: list[tuple[float, float]]) -> float:
    pm, qm = dict(p), dict(q)
    return 0.5 * sum(abs(pm.get(x, 0.0) - qm.get(x, 0.0)) for x in set(pm) | set(qm))


# -- export ----------------------------------------------------------------


def dag_to_dict(dag: StochasticDag) -> dict[str, Any]:
    return {
        "edges": [[a, b] for a, b in sorted(dag.edges)],
        "nodes": [{"duration": dist_to_dict(dag.nodes[v]), "id": v} for v in sorted(dag.nodes)],
    }


def export_dag(dag: StochasticDag) -> str:
    return dumps_doc(dag_to_dict(dag))


def parse_dag(text: str) -> StochasticDag:
    doc = json.loads(text)
    nodes = {n["id"]: dist_from_dict(n["duration"]) for n in doc["nodes"]}
    return StochasticDag(nodes, [tuple(e) for e in doc["edges"]])


def distribution_json(dist: list[tuple[float, float]]) -> str:
    mean = sum(v * p for v, p in dist)
    return dumps_doc({"distribution": [[v, p] for v, p in dist], "mean": mean})


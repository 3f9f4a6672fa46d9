"""
Microservice-chain replica.

Requests enter a chain of FIFO multi-server stations; each stage draws a
service time per request. The "real" system draws from hidden per-load
distributions and records per-stage traces; the twin draws from mixtures
fitted to those traces (interpolated for untraced loads). Both sides are
compared on mean and nearest-rank p99 response time per load.
"""

from __future__ import annotations

import csv
import heapq
import io
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Callable, Mapping, Sequence

import numpy as np

from .errors import DegenerateComponent, EmptySamples, InvalidValue, MissingModelForLoad, TooFewSamples
from .mixture import MixtureModel, Trace, fit_em, interpolate
from .simkit import Engine, entity_rng
from .stochastic_dag import nearest_rank


class Arrival(Enum):
    POISSON = "poisson"
    UNIFORM = "uniform"


# -- service-time sources ----------------------------------------------------


@dataclass(frozen=True)
class Deterministic:
    value_ms: float

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return np.full(n, float(self.value_ms))

    def mean(self) -> float:
        return float(self.value_ms)


@dataclass(frozen=True)
class LogNormal:
    """exp(N(log(median), sigma^2)) in milliseconds."""

    median_ms: float
    sigma: float

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.median_ms * np.exp(self.sigma * rng.standard_normal(n))

    def mean(self) -> float:
        return self.median_ms * math.exp(0.5 * self.sigma**2)


@dataclass(frozen=True)
class MixtureSource:
    model: MixtureModel

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.model.draw(rng, n)

    def mean(self) -> float:
        return self.model.mean()


def source_from_dict(d: Mapping[str, Any]):
    kind = d["type"]
    if kind == "deterministic":
        return Deterministic(float(d["value_ms"]))
    if kind == "lognormal":
        return LogNormal(float(d["median_ms"]), float(d["sigma"]))
    if kind == "mixture":
        return MixtureSource(MixtureModel.from_dict(d["model"]))
    raise InvalidValue(f"unknown service distribution {kind!r}")


@dataclass
class Stage:
    service_id: str
    replicas: int = 1
    hidden: dict[float, Any] = field(default_factory=dict)  # load -> source
    fitted: list[MixtureModel] = field(default_factory=list)
    k: int = 2

    def __post_init__(self):
        if self.replicas < 1:
            raise InvalidValue(f"stage {self.service_id}: replicas must be >= 1")

    def hidden_at(self, load: float):
        try:
            return self.hidden[load]
        except KeyError:
            raise MissingModelForLoad(f"stage {self.service_id}: no hidden distribution at load {load}") from None

    def fitted_at(self, load: float) -> MixtureSource:
        exact = [m for m in self.fitted if m.load == load]
        if exact:
            return MixtureSource(exact[0])
        if len(self.fitted) < 2:
            raise MissingModelForLoad(f"stage {self.service_id}: no fitted model for load {load}")
        loads = sorted(m.load for m in self.fitted)
        if not loads[0] <= load <= loads[-1]:
            raise MissingModelForLoad(
                f"stage {self.service_id}: load {load} outside fitted range [{loads[0]}, {loads[-1]}]"
            )
        return MixtureSource(interpolate(self.fitted, load))


@dataclass
class ServiceChain:
    stages: list[Stage]

    def __post_init__(self):
        if not self.stages:
            raise InvalidValue("chain needs at least one stage")


@dataclass(frozen=True)
class LoadPoint:
    load: float  # requests per second
    duration: float  # seconds

    @property
    def requests(self) -> int:
        return max(1, int(round(self.load * self.duration)))


@dataclass
class LoadProfile:
    points: list[LoadPoint]
    arrival: Arrival = Arrival.POISSON

    def __post_init__(self):
        for p in self.points:
            if not p.load > 0:
                raise InvalidValue("loads must be > 0")


@dataclass
class LoadRun:
    load: float
    response_ms: np.ndarray
    service_ms: dict[str, np.ndarray]


# -- queueing ----------------------------------------------------------------


def fifo_station(arrivals: np.ndarray, service: np.ndarray, servers: int) -> np.ndarray:
    """Departure times of a FIFO ``servers``-server station.

    ``arrivals`` must be non-decreasing; request i starts on the earliest
    free server once it has arrived and every earlier request has started.
    """
    free = [0.0] * servers
    out = np.empty_like(arrivals)
    for i in range(arrivals.size):
        t = heapq.heappop(free)
        start = arrivals[i] if arrivals[i] > t else t
        done = start + service[i]
        out[i] = done
        heapq.heappush(free, done)
    return out


def arrival_times(profile: LoadProfile, point: LoadPoint, rng: np.random.Generator) -> np.ndarray:
    n = point.requests
    gap = 1000.0 / point.load  # ms
    if profile.arrival is Arrival.UNIFORM:
        return np.arange(n) * gap
    return np.cumsum(rng.exponential(gap, size=n))


def simulate_chain(
    arrivals: np.ndarray, services: Sequence[np.ndarray], replicas: Sequence[int]
) -> np.ndarray:
    """End-to-end response times (ms) for requests arriving at ``arrivals``."""
    t = arrivals.astype(float)
    ids = np.arange(t.size)
    for svc, c in zip(services, replicas):
        order = np.lexsort((ids, t))  # FIFO by arrival at this stage, ties by request id
        dep = fifo_station(t[order], svc[ids[order]], c)
        t_new = np.empty_like(t)
        t_new[order] = dep
        t = t_new
    return t - arrivals


def simulate_chain_events(
    arrivals: np.ndarray, services: Sequence[np.ndarray], replicas: Sequence[int]
) -> np.ndarray:
    """Same as :func:`simulate_chain` but run event by event on the kernel.

    Times are rounded to integer ns, so results agree to within a few ns.
    Meant for cross-checking small runs.
    """
    eng = Engine()
    n = arrivals.size
    done = np.zeros(n, dtype=np.int64)
    arr_ns = np.rint(arrivals * 1e6).astype(np.int64)
    svc_ns = [np.rint(s * 1e6).astype(np.int64) for s in services]
    queues: list[list[int]] = [[] for _ in services]
    busy = [0] * len(services)

    def enter(stage: int, req: int) -> None:
        if stage == len(services):
            done[req] = eng.now
            return
        if busy[stage] < replicas[stage]:
            start(stage, req)
        else:
            queues[stage].append(req)

    def start(stage: int, req: int) -> None:
        busy[stage] += 1
        eng.schedule(int(svc_ns[stage][req]), "svc.done", f"stage{stage}", lambda ev: finish(stage, req),
                     {"req": req})

    def finish(stage: int, req: int) -> None:
        busy[stage] -= 1
        if queues[stage]:
            start(stage, queues[stage].pop(0))
        enter(stage + 1, req)

    for i in range(n):
        eng.schedule_at(int(arr_ns[i]), "req.arrive", "client", lambda ev, i=i: enter(0, i), {"req": i}, 1)
    eng.run(2**62)
    return (done - arr_ns) / 1e6


# -- experiments ---------------------------------------------------------------


def _run(chain: ServiceChain, profile: LoadProfile, seed: int, side: str,
         pick: Callable[[Stage, float], Any]) -> dict[float, LoadRun]:
    runs = {}
    for point in profile.points:
        sources = [pick(st, point.load) for st in chain.stages]
        rng_arr = entity_rng(seed, f"{side}/arrivals")
        arrivals = arrival_times(profile, point, rng_arr)
        services = [
            src.draw(entity_rng(seed, f"{side}/service/{st.service_id}"), arrivals.size)
            for st, src in zip(chain.stages, sources)
        ]
        resp = simulate_chain(arrivals, services, [st.replicas for st in chain.stages])
        runs[point.load] = LoadRun(
            point.load, resp, {st.service_id: s for st, s in zip(chain.stages, services)}
        )
    return runs


def generate_ground_truth(chain: ServiceChain, profile: LoadProfile, seed: int) -> dict[float, LoadRun]:
    """Response times and per-stage service traces of the hidden system."""
    return _run(chain, profile, seed, "real", Stage.hidden_at)


def replicate(chain: ServiceChain, profile: LoadProfile, seed: int) -> dict[float, LoadRun]:
    """Same mechanics, service times drawn from the fitted (or interpolated) mixtures."""
    return _run(chain, profile, seed, "twin", Stage.fitted_at)


def stage_traces(runs: Mapping[float, LoadRun], service_id: str) -> list[Trace]:
    return [Trace(load, run.service_ms[service_id]) for load, run in sorted(runs.items())]


def fit_chain(
    chain: ServiceChain,
    truth: Mapping[float, LoadRun],
    fit_loads: Sequence[float],
    seed: int,
    max_iter: int = 500,
    tol: float = 1e-6,
) -> dict[str, list[MixtureModel]]:
    """Fit one mixture per stage per traced load and attach them to the chain."""
    fitted: dict[str, list[MixtureModel]] = {}
    for st in chain.stages:
        models = []
        for load in fit_loads:
            if load not in truth:
                raise MissingModelForLoad(f"no ground-truth run at fit load {load}")
            trace = Trace(load, truth[load].service_ms[st.service_id])
            try:
                model, _ = fit_em(trace, st.k, seed=seed, max_iter=max_iter, tol=tol)
            except (TooFewSamples, DegenerateComponent) as exc:
                raise type(exc)(f"stage {st.service_id!r} at load {load:g}: {exc}") from exc
            models.append(model)
        st.fitted = models
        fitted[st.service_id] = models
    return fitted


# -- comparison ----------------------------------------------------------------


@dataclass(frozen=True)
class LoadComparison:
    load: float
    mean_real: float
    p99_real: float
    mean_twin: float
    p99_twin: float

    @property
    def err_mean(self) -> float:
        return abs(self.mean_twin - self.mean_real) / self.mean_real

    @property
    def err_p99(self) -> float:
        return abs(self.p99_twin - self.p99_real) / self.p99_real


@dataclass
class RunComparison:
    rows: list[LoadComparison]

    CSV_HEADER = ["load_rps", "mean_real_ms", "p99_real_ms", "mean_twin_ms", "p99_twin_ms", "err_mean", "err_p99"]

    def by_load(self) -> dict[float, LoadComparison]:
        return {r.load: r for r in self.rows}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.CSV_HEADER)
        for r in self.rows:
            w.writerow([
                repr(r.load), f"{r.mean_real:.6f}", f"{r.p99_real:.6f}", f"{r.mean_twin:.6f}",
                f"{r.p99_twin:.6f}", f"{r.err_mean:.6f}", f"{r.err_p99:.6f}",
            ])
        return buf.getvalue()

    def to_list(self) -> list[dict[str, float]]:
        return [
            {
                "err_mean": r.err_mean, "err_p99": r.err_p99, "load_rps": r.load, "mean_real_ms": r.mean_real,
                "mean_twin_ms": r.mean_twin, "p99_real_ms": r.p99_real, "p99_twin_ms": r.p99_twin,
            }
            for r in self.rows
        ]


def _mean_p99(samples: np.ndarray) -> tuple[float, float]:
    s = np.sort(np.asarray(samples, dtype=float))
    return float(s.mean()), nearest_rank(s, 0.99)


def compare(real: Mapping[float, np.ndarray], twin: Mapping[float, np.ndarray]) -> RunComparison:
    rows = []
    for load in sorted(real):
        r, t = real[load], twin.get(load)
        if t is None or len(r) == 0 or len(t) == 0:
            raise EmptySamples(f"load {load}")
        mr, pr = _mean_p99(r)
        mt, pt = _mean_p99(t)
        rows.append(LoadComparison(load, mr, pr, mt, pt))
    return RunComparison(rows)


def responses(runs: Mapping[float, LoadRun]) -> dict[float, np.ndarray]:
    return {load: run.response_ms for load, run in runs.items()}


# -- scenario parsing ------------------------------------------------------------


def chain_from_dict(d: Mapping[str, Any]) -> ServiceChain:
    stages = []
    for s in d["stages"]:
        hidden = {float(h["load"]): source_from_dict(h["dist"]) for h in s.get("hidden", [])}
        stages.append(Stage(s["id"], int(s.get("replicas", 1)), hidden, k=int(s.get("k", 2))))
    return ServiceChain(stages)


def profile_from_dict(d: Mapping[str, Any]) -> LoadProfile:
    return LoadProfile(
        [LoadPoint(float(p["load"]), float(p["duration_s"])) for p in d["loads"]],
        Arrival(d.get("arrival", "poisson")),
    )


@dataclass
class PipelineResult:
    comparison: RunComparison
    fitted: dict[str, list[MixtureModel]]
    truth: dict[float, LoadRun]
    twin: dict[float, LoadRun]


def run_pipeline(chain: ServiceChain, profile: LoadProfile, fit_loads: Sequence[float], seed: int,
                 max_iter: int = 500, tol: float = 1e-6) -> PipelineResult:
    """Ground truth -> per-load EM fits -> replica -> comparison."""
    truth = generate_ground_truth(chain, profile, seed)
    fitted = fit_chain(chain, truth, fit_loads, seed, max_iter, tol)
    twin = replicate(chain, profile, seed)
    return PipelineResult(compare(responses(truth), responses(twin)), fitted, truth, twin)

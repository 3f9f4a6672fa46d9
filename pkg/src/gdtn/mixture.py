"""
Gaussian mixtures of response times.

Per-load mixtures are fitted to trace samples by expectation-maximisation,
sampled to drive the workload simulator, and linearly interpolated between
fitted loads to cover loads that were never traced.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from ._canonical import dumps_doc
from .errors import (
    ComponentCountMismatch,
    DegenerateComponent,
    ExtrapolationRefused,
    InvalidValue,
    TooFewSamples,
)

STDDEV_FLOOR = 1e-3  # ms
WEIGHT_TOL = 1e-9
TRACE_HEADER = ["load_rps", "response_ms"]


@dataclass(frozen=True)
class Component:
    weight: float
    mean: float
    stddev: float


@dataclass(frozen=True)
class MixtureModel:
    components: tuple[Component, ...]
    load: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))
        if not self.components:
            raise InvalidValue("mixture needs at least one component")
        total = 0.0
        for c in self.components:
            if not c.weight > 0:
                raise InvalidValue(f"component weight {c.weight} must be > 0")
            if not c.stddev >= 0 or not math.isfinite(c.mean):
                raise InvalidValue(f"bad component {c}")
            total += c.weight
        if abs(total - 1.0) > WEIGHT_TOL:
            raise InvalidValue(f"weights sum to {total}, expected 1")

    @classmethod
    def single(cls, mean: float, stddev: float, load: float | None = None) -> MixtureModel:
        return cls((Component(1.0, mean, stddev),), load)

    @property
    def k(self) -> int:
        return len(self.components)

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        w = np.array([c.weight for c in self.components])
        mu = np.array([c.mean for c in self.components])
        sd = np.array([c.stddev for c in self.components])
        return w, mu, sd

    def mean(self) -> float:
        return sum(c.weight * c.mean for c in self.components)

    def variance(self) -> float:
        m = self.mean()
        return sum(c.weight * (c.stddev**2 + (c.mean - m) ** 2) for c in self.components)

    def cdf(self, q: float) -> float:
        total = 0.0
        for c in self.components:
            if c.stddev == 0:
                total += c.weight if q >= c.mean else 0.0
            else:
                total += c.weight * 0.5 * math.erfc(-(q - c.mean) / (c.stddev * math.sqrt(2)))
        return total

    def draw(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """``n`` strictly positive draws: pick a component, then a normal; redraw non-positives."""
        w, mu, sd = self.arrays()
        cum = np.cumsum(w)
        cum[-1] = 1.0
        out = np.empty(n)
        todo = np.arange(n)
        for _ in range(10_000):
            m = todo.size
            comp = np.searchsorted(cum, rng.random(m), side="right")
            comp = np.minimum(comp, len(w) - 1)
            out[todo] = mu[comp] + sd[comp] * rng.standard_normal(m)
            todo = todo[out[todo] <= 0]
            if todo.size == 0:
                return out
        raise InvalidValue("mixture puts (almost) no mass above 0")

    def to_dict(self) -> dict:
        return {
            "components": [{"mu": c.mean, "sigma": c.stddev, "w": c.weight} for c in self.components],
            "load": self.load,
        }

    def dumps(self) -> str:
        return dumps_doc(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> MixtureModel:
        comps = tuple(Component(float(c["w"]), float(c["mu"]), float(c["sigma"])) for c in d["components"])
        load = d.get("load")
        return cls(comps, None if load is None else float(load))

    @classmethod
    def loads(cls, text: str) -> MixtureModel:
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class Trace:
    load: float
    samples: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.size and not np.all(s > 0):
            raise InvalidValue("response times must be > 0")
        object.__setattr__(self, "samples", s)


@dataclass
class FitReport:
    log_likelihood: list[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False
    restart: int = 0
    restart_log_likelihoods: list[float | None] = field(default_factory=list)


# -- EM --------------------------------------------------------------------


def _log_joint(x: np.ndarray, w: np.ndarray, mu: np.ndarray, sd: np.ndarray) -> np.ndarray:
    """log w_j + log N(x_i; mu_j, sd_j), shape (k, n)."""
    z = (x[None, :] - mu[:, None]) / sd[:, None]
    z *= z
    z *= -0.5
    z += (np.log(w) - np.log(sd) - 0.5 * math.log(2 * math.pi))[:, None]
    return z


def _logsumexp(a: np.ndarray) -> np.ndarray:
    m = a.max(axis=0)
    return m + np.log(np.exp(a - m[None, :]).sum(axis=0))


def _init_params(x: np.ndarray, k: int, rng: np.random.Generator | None):
    """Quantile-spread means refined by a few 1-D k-means passes."""
    if rng is None:
        qs = (np.arange(k) + 0.5) / k
    else:
        qs = np.sort(rng.uniform(0.02, 0.98, size=k))
    mu = np.quantile(x, qs)
    for _ in range(20):
        assign = np.argmin(np.abs(x[:, None] - mu[None, :]), axis=1)
        new = mu.copy()
        for j in range(k):
            sel = x[assign == j]
            if sel.size:
                new[j] = sel.mean()
        if np.allclose(new, mu):
            break
        mu = new
    assign = np.argmin(np.abs(x[:, None] - mu[None, :]), axis=1)
    spread = max(float(x.std()), STDDEV_FLOOR)
    w = np.empty(k)
    sd = np.empty(k)
    for j in range(k):
        sel = x[assign == j]
        w[j] = max(sel.size, 1)
        sd[j] = sel.std() if sel.size > 1 else spread / k
    w /= w.sum()
    return w, mu, np.maximum(sd, STDDEV_FLOOR)


def _em(x, w, mu, sd, max_iter, tol):
    """Returns (w, mu, sd, ll_history, converged) or None if a component collapses."""
    n = x.size
    x2 = x * x
    history: list[float] = []
    converged = False
    for _ in range(max_iter):
        lj = _log_joint(x, w, mu, sd)
        m = lj.max(axis=0)
        lj -= m[None, :]
        np.exp(lj, out=lj)
        tot = lj.sum(axis=0)
        ll = float(np.sum(m + np.log(tot)))
        history.append(ll)
        if len(history) > 1 and ll - history[-2] < tol:
            converged = True
            break
        lj /= tot[None, :]  # responsibilities
        nk = lj.sum(axis=1)
        if np.any(nk < 1e-12 * n):
            return None
        mu_new = (lj @ x) / nk
        var = (lj @ x2) / nk - mu_new * mu_new
        # second pass when cancellation could bite
        bad = var < 1e-6 * np.maximum(mu_new * mu_new, 1.0)
        if np.any(bad):
            for j in np.flatnonzero(bad):
                var[j] = float(lj[j] @ (x - mu_new[j]) ** 2) / nk[j]
        raw = np.sqrt(np.maximum(var, 0.0))
        if np.any((raw < STDDEV_FLOOR) & (nk < 2.0)):
            return None
        mu = mu_new
        sd = np.maximum(raw, STDDEV_FLOOR)
        w = nk / n
    else:
        history.append(float(_logsumexp(_log_joint(x, w, mu, sd)).sum()))
    return w, mu, sd, history, converged


def fit_em(
    trace: Trace,
    k: int,
    seed: int = 0,
    max_iter: int = 500,
    tol: float = 1e-6,
    restarts: int = 3,
) -> tuple[MixtureModel, FitReport]:
    """Fit a ``k``-component mixture by EM; the restart with the best log-likelihood wins.

    Restart 0 seeds means at evenly spread quantiles; later restarts draw the
    quantile positions from ``seed``. Components are returned sorted by mean.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    x = np.asarray(trace.samples, dtype=float)
    if x.size < 10 * k:
        raise TooFewSamples(f"{x.size} samples for k={k} (need {10 * k})")
    rng = np.random.default_rng(seed)
    best = None
    report = FitReport()
    for r in range(restarts):
        init = _init_params(x, k, None if r == 0 else rng)
        res = _em(x, *init, max_iter=max_iter, tol=tol)
        if res is None:
            report.restart_log_likelihoods.append(None)
            continue
        final_ll = res[3][-1]
        report.restart_log_likelihoods.append(final_ll)
        if best is None or final_ll > best[1][3][-1]:
            best = (r, res)
    if best is None:
        raise DegenerateComponent(f"all {restarts} restarts collapsed (load={trace.load})")
    r, (w, mu, sd, history, converged) = best
    order = np.argsort(mu, kind="stable")
    w = w[order] / w[order].sum()
    model = MixtureModel(
        tuple(Component(float(w[j]), float(mu[j]), float(sd[j])) for j in range(k)),
        trace.load,
    )
    report.log_likelihood = history
    report.iterations = len(history)
    report.converged = converged
    report.restart = r
    return model, report


def log_likelihood(model: MixtureModel, samples: np.ndarray) -> float:
    w, mu, sd = model.arrays()
    return float(_logsumexp(_log_joint(np.asarray(samples, float), w, mu, np.maximum(sd, 1e-300))).sum())


# -- evaluation -----------------------------------------------------------


def sample(model: MixtureModel, n: int, seed: int) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be >= 1")
    return model.draw(np.random.default_rng(seed), n)


def percentile(model: MixtureModel, p: float) -> float:
    """Smallest q with CDF(q) >= p, found by bisection on the analytic CDF."""
    if not 0 < p < 1:
        raise ValueError("p must be in (0, 1)")
    lo = min(c.mean - 12 * c.stddev for c in model.components) - 1.0
    hi = max(c.mean + 12 * c.stddev for c in model.components) + 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid in (lo, hi):
            break
        if model.cdf(mid) >= p:
            hi = mid
        else:
            lo = mid
    return hi


def interpolate(models: Sequence[MixtureModel], load: float) -> MixtureModel:
    """Mixture at ``load`` from the two fitted loads that bracket it.

    Components are paired by ascending mean and each of weight, mean and
    stddev is interpolated linearly; weights are renormalised.
    """
    fitted = sorted(models, key=lambda m: m.load)
    loads = [m.load for m in fitted]
    if len(fitted) < 2 or any(l is None for l in loads) or len(set(loads)) != len(loads):
        raise InvalidValue("need >= 2 models with distinct loads")
    for m in fitted:
        if m.load == load:
            return m
    if not loads[0] <= load <= loads[-1]:
        raise ExtrapolationRefused(f"load {load} outside fitted range [{loads[0]}, {loads[-1]}]")
    i = int(np.searchsorted(loads, load))
    a, b = fitted[i - 1], fitted[i]
    if a.k != b.k:
        raise ComponentCountMismatch(f"k={a.k} at load {a.load} vs k={b.k} at load {b.load}")
    t = (load - a.load) / (b.load - a.load)
    ca = sorted(a.components, key=lambda c: c.mean)
    cb = sorted(b.components, key=lambda c: c.mean)
    ws = [(1 - t) * x.weight + t * y.weight for x, y in zip(ca, cb)]
    total = sum(ws)
    comps = tuple(
        Component(wj / total, (1 - t) * x.mean + t * y.mean, (1 - t) * x.stddev + t * y.stddev)
        for wj, x, y in zip(ws, ca, cb)
    )
    return MixtureModel(comps, float(load))


# -- trace files ------------------------------------------------------------


def read_traces_csv(text: str) -> list[Trace]:
    """Parse ``load_rps,response_ms`` rows into one trace per load (ascending)."""
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None or [h.strip() for h in header] != TRACE_HEADER:
        raise InvalidValue(f"trace header must be {','.join(TRACE_HEADER)}")
    by_load: dict[float, list[float]] = {}
    for row in reader:
        if not row:
            continue
        load, value = float(row[0]), float(row[1])
        by_load.setdefault(load, []).append(value)
    return [Trace(load, np.array(v)) for load, v in sorted(by_load.items())]


def write_traces_csv(traces: Iterable[Trace]) -> str:
    lines = [",".join(TRACE_HEADER)]
    for tr in traces:
        lines.extend(f"{tr.load!r},{float(v)!r}" for v in tr.samples)
    return "\n".join(lines) + "\n"

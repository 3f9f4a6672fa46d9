from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gdtn.errors import EmptySamples, MissingModelForLoad
from gdtn.mixture import Component, MixtureModel
from gdtn.workload_replica import (
    Arrival,
    Deterministic,
    LoadPoint,
    LoadProfile,
    LogNormal,
    MixtureSource,
    ServiceChain,
    Stage,
    compare,
    fifo_station,
    generate_ground_truth,
    replicate,
    responses,
    simulate_chain,
    simulate_chain_events,
)


def det_chain(*values, replicas=1, loads=(1.0,)):
    return ServiceChain([
        Stage(f"s{i}", replicas, {float(l): Deterministic(v) for l in loads}) for i, v in enumerate(values)
    ])


# -- queueing primitive ----------------------------------------------------------------


def _fifo_oracle(arrivals, service, servers):
    """Explicit per-server bookkeeping: earliest-free server, FIFO start order."""
    free = [0.0] * servers
    out = []
    for a, s in zip(arrivals, service):
        j = min(range(servers), key=lambda k: free[k])
        start = max(a, free[j])
        free[j] = start + s
        out.append(free[j])
    return np.array(out)


@settings(max_examples=60, deadline=None)
@given(
    st.lists(st.tuples(st.floats(0, 50), st.floats(0.01, 30)), min_size=1, max_size=60),
    st.integers(1, 4),
)
def test_fifo_station_matches_server_bookkeeping(reqs, servers):
    arr = np.cumsum([a for a, _ in reqs])
    svc = np.array([s for _, s in reqs])
    dep = fifo_station(arr, svc, servers)
    assert np.allclose(dep, _fifo_oracle(arr, svc, servers))
    assert np.all(dep - arr >= svc - 1e-9)


def test_chain_matches_event_kernel():
    rng = np.random.default_rng(0)
    arr = np.cumsum(rng.exponential(10.0, 3000))
    services = [rng.lognormal(np.log(12), 0.4, 3000), rng.gamma(4.0, 6.0, 3000)]
    fast = simulate_chain(arr, services, [1, 3])
    slow = simulate_chain_events(arr, services, [1, 3])
    assert np.allclose(fast, slow, atol=1e-5)


# -- ground truth ---------------------------------------------------------------------------------


def test_single_stage_no_queueing():
    profile = LoadProfile([LoadPoint(1.0, 200.0)], Arrival.UNIFORM)
    run = generate_ground_truth(det_chain(10.0), profile, seed=0)[1.0]
    assert np.all(run.response_ms == 10.0)


def test_two_stage_series_low_load():
    profile = LoadProfile([LoadPoint(1.0, 200.0)], Arrival.UNIFORM)
    run = generate_ground_truth(det_chain(10.0, 15.0), profile, seed=0)[1.0]
    assert np.allclose(run.response_ms, 25.0)


def test_queueing_only_adds_and_grows_with_load():
    loads = [5.0, 20.0, 40.0, 60.0]
    chain = ServiceChain([Stage("only", 1, {l: LogNormal(12.0, 0.3) for l in loads})])
    profile = LoadProfile([LoadPoint(l, 20_000 / l) for l in loads])
    runs = generate_ground_truth(chain, profile, seed=1)
    means, p99s = [], []
    for l in loads:
        r = runs[l]
        assert np.all(r.response_ms >= r.service_ms["only"] - 1e-9)
        means.append(r.response_ms.mean())
        p99s.append(np.quantile(r.response_ms, 0.99))
    assert means == sorted(means) and p99s == sorted(p99s)
    assert means[-1] > runs[60.0].service_ms["only"].mean() * 1.2


def test_low_load_mean_matches_analytic_sum():
    model = MixtureModel((Component(0.7, 20.0, 2.0), Component(0.3, 40.0, 4.0)), 1.0)
    chain = ServiceChain([
        Stage("a", 8, {1.0: LogNormal(10.0, 0.2)}),
        Stage("b", 8, {1.0: MixtureSource(model)}),
    ])
    run = generate_ground_truth(chain, LoadProfile([LoadPoint(1.0, 100_000.0)]), seed=2)[1.0]
    analytic = LogNormal(10.0, 0.2).mean() + model.mean()
    assert abs(run.response_ms.mean() - analytic) / analytic <= 0.01


def test_ground_truth_deterministic():
    chain = ServiceChain([Stage("a", 2, {3.0: LogNormal(50.0, 0.5)})])
    profile = LoadProfile([LoadPoint(3.0, 1000.0)])
    a = generate_ground_truth(chain, profile, seed=4)[3.0].response_ms
    b = generate_ground_truth(chain, profile, seed=4)[3.0].response_ms
    assert np.array_equal(a, b)


# -- replica ------------------------------------------------------------------------------------------


def test_replica_with_true_models_matches_truth():
    model = MixtureModel((Component(0.6, 30.0, 3.0), Component(0.4, 60.0, 6.0)), 10.0)
    st_ = Stage("a", 2, {10.0: MixtureSource(model)})
    st_.fitted = [model]
    chain = ServiceChain([st_])
    # real and twin use independent streams; 4e5 requests keep p99 noise well under 1%
    profile = LoadProfile([LoadPoint(10.0, 40_000.0)])
    real = generate_ground_truth(chain, profile, seed=5)
    twin = replicate(chain, profile, seed=5)
    row = compare(responses(real), responses(twin)).rows[0]
    assert row.err_mean < 0.01 and row.err_p99 < 0.01


def test_replica_interpolates_between_fitted_loads():
    a = MixtureModel.single(20.0, 2.0, load=10.0)
    b = MixtureModel.single(40.0, 4.0, load=30.0)
    st_ = Stage("a", 4, {})
    st_.fitted = [a, b]
    src = st_.fitted_at(20.0)
    assert src.model.components[0].mean == pytest.approx(30.0)
    runs = replicate(ServiceChain([st_]), LoadProfile([LoadPoint(20.0, 500.0)]), seed=0)
    assert runs[20.0].response_ms.size == 10_000
    with pytest.raises(MissingModelForLoad):
        st_.fitted_at(35.0)


def test_compare_relative_errors():
    real = {1.0: np.arange(1.0, 101.0)}
    assert compare(real, real).rows[0].err_mean == 0.0
    row = compare(real, {1.0: real[1.0] * 1.1}).rows[0]
    assert row.err_mean == pytest.approx(0.10)
    assert row.p99_real == 99.0
    with pytest.raises(EmptySamples):
        compare(real, {1.0: np.array([])})


def test_comparison_csv_header():
    real = {1.0: np.arange(1.0, 101.0)}
    text = compare(real, real).to_csv()
    assert text.splitlines()[0] == "load_rps,mean_real_ms,p99_real_ms,mean_twin_ms,p99_twin_ms,err_mean,err_p99"
    assert text.splitlines()[1].startswith("1.0,50.500000,99.000000")

import time

import numpy as np
import pytest

from benchmark import (
    TABLE_NOTES,
    BenchRecord,
    observed_order,
    run_benchmark,
    smoothed_reference,
    steady_state,
    write_table,
)
from core import PositiveImage
from discretize import drift_from_reference
from integrators import FactorCache, Scheme, SchemeConfig, evolve


def _random_image(seed, shape=(16, 16)):
    rng = np.random.default_rng(seed)
    return PositiveImage(rng.uniform(1.0, 255.0, size=shape))


def _smooth_pair(n=32):
    y, x = np.mgrid[0:n, 0:n].astype(float)
    f = 100.0 + 20.0 * np.cos(2 * np.pi * x / n) * np.cos(np.pi * y / n)
    v = 50.0 + 10.0 * np.sin(2 * np.pi * (x + y) / n)
    return PositiveImage(f), PositiveImage(v)


def test_smoothed_reference_is_positive_and_smoother():
    f = _random_image(0, shape=(40, 40))
    v = smoothed_reference(f, 3.0)
    assert v.shape == f.shape
    assert v.data.min() >= f.eps_min
    assert v.data.std() < 0.5 * f.data.std()


def test_run_benchmark_rows():
    f = _random_image(1)
    v = smoothed_reference(f, 2.0)
    records = run_benchmark(f, v, [Scheme.AOS, Scheme.AMOS, Scheme.IMPLICIT], [10.0, 100.0], T=1e4)
    assert [(r.scheme, r.tau) for r in records] == [
        ("aos", 10.0), ("aos", 100.0), ("amos", 10.0), ("amos", 100.0), ("implicit", 10.0), ("implicit", 100.0)
    ]
    assert [r.steps for r in records] == [1000, 100] * 3
    by_key = {(r.scheme, r.tau): r for r in records}
    assert by_key[("amos", 10.0)].solver_calls == 2 * by_key[("aos", 10.0)].solver_calls == 4000
    assert by_key[("implicit", 100.0)].solver_calls == 100
    for r in records:
        assert r.energy_error < 1e-6
        assert r.mean_drift < 1e-10
        assert r.T == 1e4


def test_diverging_scheme_is_recorded_not_raised(caplog):
    f = _random_image(2)
    v = _random_image(3)
    with caplog.at_level("WARNING"):
        (record,) = run_benchmark(f, v, [Scheme.EXPLICIT], [1000.0], T=1e6)
    assert record.energy_error == np.inf
    assert 1 <= record.steps < 1000
    assert "diverged" in caplog.text


def test_write_table_layout(tmp_path):
    records = [
        BenchRecord("aos", 10.0, 100.0, 10, 0.5, 1.25, 1e-3, 20, 0.0),
        BenchRecord("pr", 1.0, 100.0, 100, 0.75, 0.5, 2e-4, 200, 1e-16),
    ]
    path = tmp_path / "table.csv"
    write_table(records, str(path))
    lines = path.read_text(encoding="utf-8").splitlines()
    notes = len(TABLE_NOTES)
    assert all(line.startswith("# ") for line in lines[:notes])
    assert lines[notes] == "scheme,tau,T,steps,wall_s,ms_per_step,energy_error,solver_calls,mean_drift"
    assert lines[notes + 1].startswith("aos,10.0,100.0,10,")
    assert len(lines) == notes + 3


# --- Temporal order ---


@pytest.mark.parametrize(
    "scheme, low, high",
    [
        (Scheme.PR, 1.8, 2.2),
        (Scheme.AOS, 0.8, 1.2),
        (Scheme.MOS, 0.8, 1.2),
        (Scheme.AMOS, 0.8, 1.2),
    ],
)
def test_observed_order(scheme, low, high):
    f, v = _smooth_pair()
    study = observed_order(f, drift_from_reference(v), scheme, tau=1.0 / 16, T=1.0)
    assert study.taus == [1.0 / 16, 1.0 / 32, 1.0 / 64]
    assert study.errors[0] > study.errors[1] > study.errors[2] > 0
    assert low <= study.order <= high


# --- Timing ---


def _stepping_ms(f, d, scheme, tau, steps, cache):
    _, trace = evolve(f, d, SchemeConfig(scheme, tau=tau, max_iters=steps), cache)
    return trace.total_wall_ms


@pytest.mark.slow
def test_amos_costs_about_twice_aos():
    rng = np.random.default_rng(4)
    f = PositiveImage(rng.uniform(1.0, 255.0, size=(1024, 1024)))
    d = drift_from_reference(smoothed_reference(f, 8.0))
    # compile the line solver before timing
    _stepping_ms(f, d, Scheme.AOS, 100.0, 1, FactorCache())

    aos_cache, amos_cache = FactorCache(), FactorCache()
    aos = _stepping_ms(f, d, Scheme.AOS, 100.0, 50, aos_cache)
    amos = _stepping_ms(f, d, Scheme.AMOS, 100.0, 50, amos_cache)
    assert amos_cache.solver_calls == 2 * aos_cache.solver_calls
    assert 1.6 <= amos / aos <= 2.6


@pytest.mark.slow
def test_aos_reaches_target_error_before_full_implicit():
    rng = np.random.default_rng(5)
    f = PositiveImage(rng.uniform(1.0, 255.0, size=(512, 512)))
    v = smoothed_reference(f, 8.0)
    d = drift_from_reference(v)
    w = steady_state(f, v)
    _stepping_ms(f, d, Scheme.AOS, 100.0, 1, FactorCache())

    elapsed, traces = {}, {}
    for scheme in (Scheme.AOS, Scheme.IMPLICIT):
        cfg = SchemeConfig(scheme, tau=100.0, T=1e5, reference_steady_state=w, target_error=1e-3)
        started = time.perf_counter()
        _, traces[scheme] = evolve(f, d, cfg, FactorCache())
        elapsed[scheme] = time.perf_counter() - started

    assert traces[Scheme.AOS].stop_reason == "target_error"
    assert traces[Scheme.IMPLICIT].stop_reason == "target_error"
    assert traces[Scheme.AOS].last.err <= 1e-3
    assert elapsed[Scheme.AOS] < elapsed[Scheme.IMPLICIT]

import io
import math

import numpy as np
import pytest
import scipy.special
import scipy.stats

from fkmsle import continuum as cf
from fkmsle.loewner import (DrivingPath, SdeConfig, TracePath, brownian_driving,
                            estimate_kappa_drift, extract_driving, sample_driving,
                            swallow_detect, trace_from_driving)

KAPPA = 16 / 3


def smooth_path(dt, horizon=0.5, sub=1):
    t = np.linspace(0, horizon, int(round(horizon / dt * sub)) + 1)
    return DrivingPath(t, np.sin(3 * t) + 0.5 * t ** 2)


# -- sampling -------------------------------------------------------------------------

def test_single_pair_drift_value():
    assert cf.drift(0.0, [1.0]) == pytest.approx(2 / 3, rel=1e-15)


def test_drift_is_sle_kappa_rho_with_rho_kappa_minus_six():
    for W, b2 in [(0.0, 1.0), (-0.3, 2.0), (1.5, 1.7)]:
        assert cf.drift(W, [b2]) == pytest.approx((KAPPA - 6) / (W - b2), rel=1e-14)


def test_zero_noise_gap_follows_exact_law():
    # d(b2 - W) = (2 - kappa/8)/(b2 - W) dt, so (b2 - W)^2 = 1 + (8/3) t
    p = sample_driving([0.0, 1.0], SdeConfig(dt=1e-4, horizon=1.0, zero_noise=True))
    assert np.all(np.diff(p.values) > 0)
    gap = p.spectator_tracks[:, 0] - p.values
    assert np.abs(gap ** 2 - (1 + 8 / 3 * p.times)).max() < 1e-3
    assert swallow_detect(p) == (None, None)


def test_sampling_is_deterministic():
    cfg = SdeConfig(dt=1e-3, horizon=0.2, seed=42)
    a = sample_driving([0, 1, 2, 3], cfg)
    b = sample_driving([0, 1, 2, 3], cfg)
    assert np.array_equal(a.values, b.values) and np.array_equal(a.spectator_tracks, b.spectator_tracks)


def test_sde_config_validation():
    with pytest.raises(ValueError):
        SdeConfig(dt=0.0)
    with pytest.raises(ValueError):
        SdeConfig(eps_swallow=-1.0)
    with pytest.raises(ValueError):
        sample_driving([1.0, 0.0], SdeConfig())


def test_swallow_times_follow_bessel_law():
    """b2 - W is sqrt(kappa) times a Bessel process of dimension 3/2 started at
    1/sqrt(kappa); its hitting time of 0 is y0^2 / (2 G) with G ~ Gamma(1/4)."""
    rng = np.random.default_rng(0)
    horizon = 1000.0
    times = []
    n = 200
    for _ in range(n):
        p = sample_driving([0.0, 1.0], SdeConfig(dt=1.0, dt_rel=0.01, horizon=horizon), rng)
        j, t = swallow_detect(p)
        if j is not None:
            assert j == 2
            times.append(t)
    y0sq = 1 / KAPPA

    def cdf(t):
        return scipy.special.gammaincc(0.25, y0sq / (2 * np.asarray(t)))

    p_hit = cdf(horizon)
    assert p_hit == pytest.approx(0.8914, abs=1e-3)
    assert abs(len(times) / n - p_hit) <= 3 * math.sqrt(p_hit * (1 - p_hit) / n)
    ks = scipy.stats.kstest(times, lambda t: cdf(t) / p_hit)
    assert ks.pvalue > 0.01


def test_far_spectator_not_swallowed_in_short_time():
    p = sample_driving([0.0, 50.0], SdeConfig(dt=1e-3, horizon=0.01, seed=1))
    assert swallow_detect(p) == (None, None)


def test_swallow_detect_reports_marked_index():
    t = np.array([0.0, 0.1, 0.2, 0.3])
    W = np.array([0.0, 0.5, 1.2, 1.3])
    S = np.array([[1.0, 3.0], [1.1, 3.0], [1.2005, 3.0], [1.4, 3.1]])
    assert swallow_detect(DrivingPath(t, W, S), eps=1e-2) == (2, 0.2)
    assert swallow_detect(DrivingPath(t, W, S), eps=1e-4) == (None, None)


# -- synthesis and extraction ------------------------------------------------------------

def test_null_driver_gives_vertical_slit():
    t = np.linspace(0, 1, 101)
    tr = trace_from_driving(DrivingPath(t, np.zeros_like(t)))
    assert np.allclose(tr.points[1:], 2j * np.sqrt(t[1:]), atol=1e-12)
    tr2 = trace_from_driving(DrivingPath(t, np.full_like(t, 0.7)))
    assert np.allclose(tr2.points[1:], 0.7 + 2j * np.sqrt(t[1:]), atol=1e-12)


def test_vertical_segment_extracts_to_null_driver():
    h = np.linspace(0, 1.5, 31)
    ex = extract_driving(1j * h)
    assert np.abs(ex.values).max() <= 1e-12
    assert ex.times[-1] == pytest.approx((1.5 / 2) ** 2, rel=1e-12)


def test_same_resolution_round_trip_is_exact():
    p = smooth_path(1e-3)
    ex = extract_driving(trace_from_driving(p))
    assert np.abs(ex.times - p.times).max() <= 1e-12
    assert np.abs(ex.values - p.values).max() <= 1e-10


def _substep_round_trip_error(dt, sub=2):
    fine = smooth_path(dt, sub=sub)
    pts = trace_from_driving(fine).points[::sub]
    ex = extract_driving(pts)
    ref = np.sin(3 * ex.times) + 0.5 * ex.times ** 2
    return np.abs(ex.values - ref).max()


def test_round_trip_from_finer_synthesis():
    e1 = _substep_round_trip_error(2e-3)
    e2 = _substep_round_trip_error(1e-3)
    assert e2 <= 1e-3 and e2 < 0.6 * e1


def test_capacity_is_additive():
    p = smooth_path(1e-3)
    k = len(p) // 2
    first = extract_driving(trace_from_driving(DrivingPath(p.times[:k + 1], p.values[:k + 1])))
    whole = extract_driving(trace_from_driving(p))
    assert whole.times[-1] == pytest.approx(first.times[-1] + (p.times[-1] - p.times[k]), rel=1e-12)


def test_extracted_spectators_obey_loewner_flow():
    def max_residual(dt):
        p = smooth_path(dt, horizon=0.2)
        ex = extract_driving(trace_from_driving(p), spectators=[1.5, 3.0])
        d = np.diff(ex.spectator_tracks, axis=0)
        pred = 2 * np.diff(ex.times)[:, None] / (ex.spectator_tracks[:-1] - ex.values[:-1, None])
        return np.abs(d - pred).max()
    r1, r2 = max_residual(2e-3), max_residual(1e-3)
    assert r2 < r1 / 3


def test_extraction_errors():
    with pytest.raises(ValueError):
        extract_driving(np.array([0, 1j, np.nan]))
    with pytest.raises(ValueError):
        extract_driving(np.array([0, 0.5 - 0.1j, 1j]))


def test_lattice_interface_gives_increasing_capacities():
    from fkmsle.experiments import halfplane_images
    from fkmsle.fk import SwendsenWangChain
    from fkmsle.interface import trace_interface
    from fkmsle.lattice import build_rect_domain
    N = 16
    _, mk = build_rect_domain(N, N, 1.0 / N, [N // 2, 5 * N // 2])
    R = cf.RectangleMap(1.0)
    chain = SwendsenWangChain(mk.region, seed=3)
    for mask in chain.samples(3, burn_in=50, spacing=5):
        z = R.many(trace_interface(mk, mask).points()[1:], clip=True)
        z = np.concatenate([[0j], z[np.abs(z) < 1e6]])
        ex = extract_driving(z)
        assert np.all(np.diff(ex.times) > 0) and len(ex) > 10
    assert halfplane_images(N, N, [N // 2])[0] == pytest.approx(0.0, abs=1e-12)


# -- estimation ---------------------------------------------------------------------------

def test_brownian_kappa_two_recovered_after_round_trip():
    rng = np.random.default_rng(11)
    paths = []
    for _ in range(60):
        bm = brownian_driving(2.0, 1e-3, 1.0, rng)
        paths.append(extract_driving(trace_from_driving(bm)))
    est = estimate_kappa_drift(paths, dt=0.01)
    assert abs(est.kappa_hat - 2.0) <= 2 * est.kappa_stderr
    assert math.isnan(est.drift_slope)


def test_null_driver_has_zero_kappa():
    t = np.linspace(0, 1, 101)
    est = estimate_kappa_drift([DrivingPath(t, np.zeros_like(t))] * 3, dt=0.05)
    assert est.kappa_hat == 0.0


def test_sde_paths_are_self_consistent():
    rng = np.random.default_rng(7)
    # steps shrink with the gap so that no single step jumps across the singular drift
    cfg = SdeConfig(dt=1e-3, dt_rel=0.01, horizon=0.5)
    paths = [sample_driving([0.0, 1.0], cfg, rng) for _ in range(200)]
    est = estimate_kappa_drift(paths, b0=[0.0, 1.0], dt=0.02, drift_dt=0.005)
    assert abs(est.kappa_hat - KAPPA) <= 2 * est.kappa_stderr
    assert abs(est.drift_slope - 1.0) <= 2 * est.drift_stderr
    assert set(np.round([p.values[0] for p in paths], 12)) == {0.0}


def test_estimator_errors():
    t = np.linspace(0, 1, 11)
    p = DrivingPath(t, t)
    with pytest.raises(ValueError):
        estimate_kappa_drift([p])
    with pytest.raises(ValueError):
        estimate_kappa_drift([p, p], dt=0.0)
    with pytest.raises(ValueError):
        estimate_kappa_drift([p, p], b0=[1.0, 2.0])


def test_driving_path_validation_and_csv():
    with pytest.raises(ValueError):
        DrivingPath([0.0, 0.0], [0.0, 1.0])
    p = DrivingPath([0.0, 0.1], [0.0, 0.2], [[1.0, 2.0, 3.0], [1.1, 2.1, 3.1]])
    buf = io.StringIO()
    p.to_csv(buf)
    lines = buf.getvalue().splitlines()
    assert lines[0] == "t,W,b2,b3,b4" and lines[2].startswith("0.1,0.2,1.1")
    est = estimate_kappa_drift([p, p], dt=0.05)
    assert set(eval_json(est.to_json())) >= {"kappa_hat", "kappa_stderr", "drift_slope",
                                               "drift_stderr", "n_paths", "dt"}


def eval_json(text):
    import json
    return json.loads(text)

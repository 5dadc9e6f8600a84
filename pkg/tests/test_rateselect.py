import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from locrel import rateselect
from locrel.errors import Infeasible, OutOfMapRange, ValidationError
from locrel.quadrature import normal_quantile
from locrel.rateselect import (
    ALPHA_MAX, CalibrationSpec, OracleTable, RateSelector, backoff_rate, calibrate_backoff, calibrate_ci,
    calibrate_oracle, ci_rate, confidence_interval, max_meta, oracle_rate,
)

EPS = 1e-3


# ---- backoff ----------------------------------------------------------------------

def test_backoff_identity_and_scaling(full_map):
    q = full_map.eps_quantile(EPS, 300.0, 0)
    assert backoff_rate(300.0, 0, 1.0, EPS, full_map) == q
    assert backoff_rate(300.0, 0, 0.25, EPS, full_map) == pytest.approx(17.5, abs=0.75)
    a = backoff_rate(np.array([100.0, 400.0]), 1, 0.5, EPS, full_map)
    b = backoff_rate(np.array([100.0, 400.0]), 1, 0.25, EPS, full_map)
    assert np.allclose(a, 2 * b, rtol=1e-15)


def test_backoff_clamps_outside_map(full_map):
    lo, hi = full_map.x_range
    assert backoff_rate(lo - 500.0, 0, 0.5, EPS, full_map) == backoff_rate(lo, 0, 0.5, EPS, full_map)
    assert backoff_rate(hi + 1e4, 1, 0.5, EPS, full_map) == backoff_rate(hi, 1, 0.5, EPS, full_map)


def test_backoff_continuous(full_map):
    # no jumps: halving the step halves the largest increment
    jumps = []
    for n in (20_001, 40_001):
        xs = np.linspace(20.0, 480.0, n)
        jumps.append(np.max(np.abs(np.diff(backoff_rate(xs, 0, 0.3, EPS, full_map)))))
    assert jumps[0] / jumps[1] == pytest.approx(2.0, rel=0.05)


# ---- confidence interval -----------------------------------------------------------

def test_ci_degenerate_interval(full_map, loc):
    xs = np.array([60.0, 300.0, 777.0])
    for bs in (0, 1):
        r = ci_rate(xs, bs, ALPHA_MAX, EPS, full_map, loc)
        assert np.allclose(r, full_map.eps_quantile(EPS, xs, bs), rtol=1e-6)


def test_ci_rate_monotone_in_alpha(full_map, loc):
    xs = np.arange(-300.0, 1300.0, 7.3)
    prev = None
    for alpha in (0.5, 1e-2, 1e-4, 1.6e-5, 1e-8, 1e-12):
        r = ci_rate(xs, 0, alpha, EPS, full_map, loc)
        if prev is not None:
            assert np.all(r <= prev + 1e-12)
        prev = r


def test_ci_rate_dense_scan_oracle(full_map, loc):
    alpha = 1.6e-5
    for xhat in (300.0, 47.3, 512.9):
        a, b = confidence_interval(xhat, alpha, loc)
        half = normal_quantile(1 - alpha / 2) * loc.average_std(xhat)
        assert b - a == pytest.approx(2 * half, rel=1e-6)
        scan = np.append(np.arange(float(a), float(b), 0.1), float(b))
        ref = np.min(full_map.eps_quantile(EPS, scan, 0))
        got = ci_rate(xhat, 0, alpha, EPS, full_map, loc)
        # grid-point minimum is exact; the scan can only miss it from above
        assert got <= ref + 1e-9
        assert got == pytest.approx(ref, rel=2e-3)


def test_selectors_conservative(full_map, loc):
    xs = full_map.sel_x[::13]
    for bs in (0, 1):
        q = full_map.eps_quantile(EPS, xs, bs)
        assert np.all(backoff_rate(xs, bs, 0.7, EPS, full_map) <= q)
        assert np.all(ci_rate(xs, bs, 1e-3, EPS, full_map, loc) <= q + 1e-12)
        assert np.all(ci_rate(xs, bs, 1e-3, EPS, full_map, loc) >= 0)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=80), st.data())
def test_sparse_min_matches_brute_force(values, data):
    v = np.array(values)
    rmq = rateselect._SparseMin(v)
    i = data.draw(st.integers(0, v.size - 1))
    j = data.draw(st.integers(i, v.size - 1))
    assert rmq.query(np.array([i]), np.array([j]))[0] == v[i:j + 1].min()


# ---- oracle table --------------------------------------------------------------------

def test_oracle_lookup_nearest():
    t = OracleTable(x0=0.0, step=2.0, rates=np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]))
    assert oracle_rate(2.0, 0, t) == 2.0
    assert oracle_rate(2.9, 1, t) == 5.0
    assert oracle_rate(3.1, 1, t) == 6.0
    assert list(oracle_rate(np.array([-50.0, 50.0]), 0, t)) == [1.0, 3.0]
    sel = RateSelector("oracle", EPS, table=t)
    assert sel.cell_edges().tolist() == [-np.inf, 1.0, 3.0, np.inf]


@pytest.fixture(scope="module")
def small_oracle(small_map, loc):
    spec = CalibrationSpec(delta=1e-3, x_range=(45.0, 955.0), x_step=50.0)
    k = calibrate_backoff(spec, EPS, small_map, loc)
    return spec, k, calibrate_oracle(spec, EPS, small_map, loc, k_init=k)


def test_oracle_ceiling_and_dominance(small_map, small_oracle):
    spec, k, sel = small_oracle
    for bs in (0, 1):
        q = small_map.eps_quantile(EPS, sel.table.grid, bs)
        r = sel.table.rates[bs]
        assert np.all(r <= q * (1 + 1e-12))
        assert np.all(r >= k * q * (1 - 1e-12))
    assert np.any(sel.table.rates > k * np.stack([small_map.eps_quantile(EPS, sel.table.grid, b) for b in (0, 1)]))


def test_oracle_constraint_and_determinism(small_map, loc, small_oracle):
    spec, k, sel = small_oracle
    m, _ = max_meta(sel, spec, small_map, loc)
    assert m <= spec.delta * (1 + 1e-9)
    assert sel.info["max_meta_grid"] == pytest.approx(m, rel=1e-6)
    again = calibrate_oracle(spec, EPS, small_map, loc, k_init=k)
    assert np.array_equal(again.table.rates, sel.table.rates)


def test_oracle_infeasible_start(small_map, loc):
    spec = CalibrationSpec(delta=1e-3, x_range=(45.0, 955.0), x_step=50.0)
    with pytest.raises(Infeasible):
        calibrate_oracle(spec, EPS, small_map, loc, k_init=1.0)


# ---- calibration -------------------------------------------------------------------------

def test_backoff_calibration_reference(calibrated):
    assert calibrated["backoff"].k == pytest.approx(0.25, abs=0.05)


def test_backoff_calibration_post_hoc(calibrated, full_map, loc, cfg):
    spec = CalibrationSpec.from_config(cfg)
    k = calibrated["backoff"].k
    assert max_meta(RateSelector("backoff", EPS, k=k), spec, full_map, loc)[0] <= spec.delta
    assert max_meta(RateSelector("backoff", EPS, k=k + 0.01), spec, full_map, loc)[0] > spec.delta


def test_ci_calibration_reference(calibrated, full_map, loc, cfg):
    alpha = calibrated["ci"].alpha
    assert 1.6e-5 / 4 <= alpha <= 1.6e-5 * 4
    spec = CalibrationSpec.from_config(cfg)
    assert max_meta(calibrated["ci"], spec, full_map, loc)[0] <= spec.delta


def test_unconstrained_calibration(small_map, loc):
    spec = CalibrationSpec(delta=0.999, x_range=(45.0, 955.0), x_step=100.0)
    assert calibrate_backoff(spec, EPS, small_map, loc) == 1.0
    assert calibrate_ci(spec, EPS, small_map, loc) == ALPHA_MAX


def test_ci_infeasible_with_overconfident_sigma(small_map, small_cfg):
    class Overconfident:
        cfg = small_cfg

        def sigma_grid(self, x, n_nodes=None):
            return np.full((4, 4), 50.0)

        def sigma_bar(self, xhat):
            return np.full(np.shape(xhat), 1e-6)

    spec = CalibrationSpec(delta=1e-3, x_range=(200.0, 300.0), x_step=50.0)
    with pytest.raises(Infeasible):
        calibrate_ci(spec, EPS, small_map, Overconfident())


def test_calibration_range_checked(small_map, loc):
    with pytest.raises(OutOfMapRange):
        calibrate_backoff(CalibrationSpec(delta=1e-3, x_range=(-500.0, 100.0)), EPS, small_map, loc)


def test_selector_record_round_trip(calibrated, small_oracle):
    for sel in (calibrated["backoff"], calibrated["ci"], small_oracle[2]):
        back = RateSelector.from_dict(json.loads(sel.dumps()))
        assert back.dumps() == sel.dumps()
    assert calibrated["backoff"].info["delta"] == 1e-3
    assert "map_config_hash" in calibrated["ci"].info


@pytest.mark.parametrize("kw", [
    dict(kind="backoff", eps=EPS, k=0.0),
    dict(kind="backoff", eps=EPS, k=1.5),
    dict(kind="conf_interval", eps=EPS, alpha=1.0),
    dict(kind="oracle", eps=EPS),
    dict(kind="magic", eps=EPS),
    dict(kind="backoff", eps=0.0, k=0.5),
])
def test_selector_validation(kw):
    with pytest.raises(ValidationError):
        RateSelector(**kw)


def test_spec_validation_and_grid(cfg):
    with pytest.raises(ValidationError):
        CalibrationSpec(delta=0.0)
    with pytest.raises(ValidationError):
        CalibrationSpec(delta=1e-3, x_range=(10.0, 5.0))
    g = CalibrationSpec.from_config(cfg).grid()
    assert g[0] == 45.0 and g[-1] == 955.0 and g.size == 183

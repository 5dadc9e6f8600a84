import dataclasses
import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from locrel import analytic, reliability
from locrel.errors import NonMonotoneSelector
from locrel.quadrature import qfunc
from locrel.radiomap import build_map
from locrel.rateselect import RateSelector, ideal_selector
from locrel.reliability import OutageInterval, gauss_mass, interval_mass, meta_prob, meta_prob_bs, outage_interval

EPS = 1e-3


def backoff(k):
    return RateSelector("backoff", EPS, k=k)


# ---- Gaussian mass ------------------------------------------------------------

def test_gauss_mass_basic_cases():
    assert gauss_mass(-np.inf, np.inf, 3.0, 2.0) == 1.0
    assert gauss_mass(1.0, 1.0, 0.0, 1.0) == 0.0
    w, s = 1.7, 0.6
    assert gauss_mass(-w, w, 0.0, s) == pytest.approx(1 - 2 * float(mpmath.ncdf(-w / s)), rel=1e-14)


@settings(max_examples=40, deadline=None)
@given(st.floats(-40, 40))
def test_qfunc_matches_mpmath(z):
    mpmath.mp.dps = 50
    ref = float(mpmath.ncdf(-z))
    assert qfunc(z) == pytest.approx(ref, rel=1e-12, abs=1e-300)


def test_gauss_mass_far_tails_relative_accuracy():
    mpmath.mp.dps = 50
    for a, b in ((20.0, 21.0), (-21.0, -20.0)):
        ref = float(mpmath.ncdf(b) - mpmath.ncdf(a))
        assert gauss_mass(a, b, 0.0, 1.0) == pytest.approx(ref, rel=1e-10)


def test_interval_mass_empty_and_full():
    empty = OutageInterval.from_pieces([])
    assert empty.empty and math.isnan(empty.lo)
    assert np.all(interval_mass(empty, 0.0, np.ones(3)) == 0)
    full = OutageInterval.from_pieces([(-np.inf, np.inf)])
    assert np.allclose(interval_mass(full, 5.0, np.ones(3)), 1.0)


def test_meta_prob_constant_sigma_closed_form(full_map, const_sigma):
    # constant sigma: meta_prob_bs = 1 - 2 Q(w / sigma) for an interval x +- w
    x, s = 300.0, 40.0
    iv = outage_interval(x, 0, backoff(0.25), full_map)
    lo, hi = iv.lo - x, iv.hi - x
    ref = float(mpmath.ncdf(hi / s) - mpmath.ncdf(lo / s))
    assert meta_prob_bs(x, 0, backoff(0.25), full_map, const_sigma(s)) == pytest.approx(ref, rel=1e-12)


# ---- outage probability given the estimate --------------------------------------

def test_outage_prob_given_estimate_cases(full_map):
    x = 300.0
    # ideal selector at the true location hits eps exactly
    assert reliability.outage_prob_given_estimate(x, x, 0, ideal_selector(EPS), full_map) == pytest.approx(EPS, rel=1e-6)
    # estimates closer to the BS select more and fail more
    p = reliability.outage_prob_given_estimate(x, np.array([100.0, 200.0, 300.0, 400.0]), 0,
                                               ideal_selector(EPS), full_map)
    assert np.all(np.diff(p) <= 0)
    assert p[0] > 0.5


# ---- outage region --------------------------------------------------------------

def test_outage_interval_reference_width(full_map, loc):
    iv = outage_interval(300.0, 0, backoff(0.25), full_map, loc)
    assert len(iv.pieces) == 1 and iv.diagnostic == ""
    assert iv.hi == pytest.approx(136.2, abs=3.0)
    assert iv.lo == pytest.approx(-136.2, abs=3.0)


def test_outage_interval_is_the_threshold_set(full_map):
    sel = backoff(0.25)
    iv = outage_interval(300.0, 0, sel, full_map)
    thr = full_map.eps_quantile(EPS, 300.0, 0)
    xs = np.arange(-390.0, 1390.0, 0.37)
    inside = (xs > iv.lo) & (xs < iv.hi)
    above = sel.rate(xs, 0, full_map) > thr
    near = np.minimum(np.abs(xs - iv.lo), np.abs(xs - iv.hi)) < 2 * reliability.BISECT_TOL
    assert np.all((inside == above) | near)


def test_outage_interval_empty_for_tiny_backoff(full_map):
    # the largest selectable rate is q at the minimum BS distance
    q_top = full_map.eps_quantile(EPS, full_map.d_min, 0)
    k = 0.5 * full_map.eps_quantile(EPS, 300.0, 0) / q_top
    iv = outage_interval(300.0, 0, backoff(k), full_map)
    assert iv.empty
    assert meta_prob_bs(300.0, 0, backoff(k), full_map, None) == 0.0


def test_outage_interval_full_line_when_overselecting(full_map):
    iv = outage_interval(300.0, 0, RateSelector("backoff", 0.5, k=1.0), full_map)
    assert not iv.empty


def test_single_subcarrier_edge_matches_closed_form(small_cfg):
    c = analytic.single_subcarrier(small_cfg).replace(**{"numerics.map_samples": 50_000})
    rmap = build_map(c)
    for x in (200.0, 300.0, 500.0):
        for k in (0.25, 0.5):
            iv = outage_interval(x, 0, backoff(k), rmap)
            ref = x - analytic.edge_exact(x, k, EPS, c)
            assert iv.hi == pytest.approx(ref, rel=0.01)


def test_nonmonotone_selector_pieces(small_map):
    class TwoBumps:
        eps = EPS
        kind = "synthetic"

        def rate(self, xhat, bs, rmap, loc=None):
            xhat = np.asarray(xhat, dtype=float)
            bump = np.exp(-((xhat - 100.0) / 20.0) ** 2) + np.exp(-((xhat - 600.0) / 20.0) ** 2)
            return 1e4 * bump

    sel = TwoBumps()
    iv = outage_interval(300.0, 0, sel, small_map)
    assert len(iv.pieces) == 2 and "pieces" in iv.diagnostic
    assert iv.pieces[0][1] < iv.pieces[1][0]
    assert iv.lo < 100 < iv.pieces[0][1] and iv.pieces[1][0] < 600 < iv.hi
    with pytest.raises(NonMonotoneSelector):
        outage_interval(300.0, 0, sel, small_map, strict=True)


# ---- meta-probability -----------------------------------------------------------

def test_degenerate_selection_uses_single_bs(full_map, loc):
    one = dataclasses.replace(full_map, sel_p1=np.ones_like(full_map.sel_p1))
    sel = backoff(0.25)
    for x in (250.0, 700.0):
        r = meta_prob(x, sel, one, loc)
        assert r.per_bs[1][1] == 0.0
        assert r.meta_prob == pytest.approx(meta_prob_bs(x, 0, sel, one, loc), rel=1e-14)


def test_midpoint_symmetry(full_map, loc):
    sel = backoff(0.6)
    a = meta_prob_bs(500.0, 0, sel, full_map, loc)
    b = meta_prob_bs(500.0, 1, sel, full_map, loc)
    assert a == pytest.approx(b, rel=1e-6)
    i0 = outage_interval(500.0, 0, sel, full_map)
    i1 = outage_interval(500.0, 1, sel, full_map)
    assert i0.hi == pytest.approx(1000.0 - i1.lo, abs=2 * reliability.BISECT_TOL)


def test_meta_prob_monotone_in_backoff(full_map, loc):
    vals = [meta_prob(60.0, backoff(k), full_map, loc).meta_prob for k in (0.3, 0.5, 0.7, 0.9, 1.0)]
    assert np.all(np.diff(vals) >= 0)
    assert 0 <= vals[0] <= vals[-1] <= 1


def test_meta_prob_report_weights(full_map, loc):
    r = meta_prob(420.0, backoff(0.5), full_map, loc)
    (m0, p0), (m1, p1) = r.per_bs
    assert p0 + p1 == pytest.approx(1.0, abs=1e-12)
    assert r.meta_prob == pytest.approx(m0 * p0 + m1 * p1, rel=1e-14)


# ---- throughput ratio ----------------------------------------------------------

def test_throughput_ideal_with_perfect_localization(full_map, const_sigma):
    perfect = const_sigma(1e-9)
    for x in (100.0, 300.0, 700.0):
        assert reliability.throughput_ratio(x, ideal_selector(EPS), full_map, perfect) == pytest.approx(1.0, abs=1e-3)
        # backoff with a perfect estimate loses exactly the factor k, up to F(kq) vs eps
        w = reliability.throughput_ratio(x, backoff(0.4), full_map, perfect)
        assert 0.4 <= w <= 0.4 / (1 - EPS) + 1e-12


def test_throughput_node_halving(full_map, loc):
    sel = backoff(0.25)
    for x in (100.0, 450.0):
        a = reliability.throughput_ratio(x, sel, full_map, loc, n_phase=32, n_hermite=41)
        b = reliability.throughput_ratio(x, sel, full_map, loc, n_phase=16, n_hermite=21)
        assert abs(a / b - 1) < 5e-3


def test_throughput_bounded(full_map, loc):
    for x in (50.0, 300.0, 500.0, 900.0):
        for sel in (backoff(0.25), ideal_selector(EPS)):
            w = reliability.throughput_ratio(x, sel, full_map, loc)
            assert 0 <= w <= 1.02

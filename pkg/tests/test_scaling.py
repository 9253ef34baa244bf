import math
import random
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bytelab.scaling import (
    ExtrapolatedMinimumWarning, PowerLawFit, RunPoint, ScalingFitError, compute_gap, fit_points,
    isoflops_fit, parity_flops, powerlaw_fit, ratio_law, read_points, synthetic_isoflops,
    write_curves, write_points,
)


def test_isoflops_exact_parabola():
    pts = [(math.exp(x), (x - 5) ** 2 + 1) for x in (3.0, 4.0, 4.5, 6.0, 7.5)]
    fit = isoflops_fit(pts)
    assert abs(fit.N_opt - math.exp(5)) / math.exp(5) < 1e-9
    assert abs(fit.bpb_min - 1) < 1e-12
    assert fit.residual_rms < 1e-12
    a, b, c = fit.coeffs
    assert abs(a - 1) < 1e-9 and abs(b + 10) < 1e-8 and abs(c - 26) < 1e-7


def test_isoflops_errors():
    with pytest.raises(ScalingFitError):
        isoflops_fit([(1e6, 1.2), (1e7, 1.1)])
    with pytest.raises(ScalingFitError, match="non-convex or degenerate"):
        isoflops_fit([(math.exp(x), 0.1 * x + 1) for x in (1.0, 2.0, 3.0, 4.0)])
    with pytest.raises(ScalingFitError, match="non-convex"):
        isoflops_fit([(math.exp(x), 3 - (x - 2) ** 2) for x in (1.0, 2.0, 3.0)])


def test_isoflops_warns_on_extrapolated_vertex():
    pts = [(math.exp(x), (x - 9) ** 2 + 1) for x in (3.0, 4.0, 5.0)]
    with pytest.warns(ExtrapolatedMinimumWarning):
        fit = isoflops_fit(pts)
    assert fit.extrapolated


def test_isoflops_log_space():
    pts = [(math.exp(x), math.exp(0.3 * (x - 4) ** 2 + 0.1)) for x in (2.0, 3.0, 4.0, 5.0, 6.0)]
    fit = isoflops_fit(pts, space="log")
    assert abs(fit.bpb_min - math.exp(0.1)) < 1e-12 and abs(math.log(fit.N_opt) - 4) < 1e-9


@settings(max_examples=30, deadline=None)
@given(st.randoms(use_true_random=False))
def test_isoflops_order_invariant(rnd):
    pts = [(math.exp(x), 0.2 * (x - 3) ** 2 + 1 + 0.01 * rnd.random()) for x in np.linspace(1, 5, 7)]
    shuffled = pts[:]
    rnd.shuffle(shuffled)
    assert isoflops_fit(pts) == isoflops_fit(shuffled)


def test_powerlaw_exact_recovery():
    F = np.logspace(15, 22, 6)
    fit = powerlaw_fit(zip(F, math.exp(0.5) * F ** -0.1))
    assert abs(fit.s + 0.1) < 1e-9 and abs(fit.b - 0.5) < 1e-9 and fit.residual_rms < 1e-9


def test_powerlaw_errors():
    with pytest.raises(ScalingFitError):
        powerlaw_fit([(1e18, 1.0)])
    with pytest.raises(ScalingFitError):
        powerlaw_fit([(1e18, 1.0), (1e19, -1.0)])


def test_two_point_fit_passes_through_anchors():
    fit = powerlaw_fit([(2.3e20, 1.0), (2.7e21, 0.8)])
    assert abs(fit.bpb(2.3e20) - 1.0) < 1e-9 and abs(fit.bpb(2.7e21) - 0.8) < 1e-9


def test_ratio_law():
    a, b = PowerLawFit(-0.08, 3.5, 0, 2), PowerLawFit(-0.05, 2.4, 0, 2)
    r = ratio_law(a, b)
    assert r.delta_s == pytest.approx(-0.03) and r.delta_b == pytest.approx(1.1)
    for F in (1e15, 3e19, 1e24):
        direct = math.exp(a.b) * F ** a.s / (math.exp(b.b) * F ** b.s)
        assert abs(r.ratio(F) - direct) / direct < 1e-12
    same = ratio_law(a, a)
    assert same.delta_s == 0 and same.delta_b == 0 and same.ratio(1e20) == 1.0
    assert r.closes_with_scale


@settings(max_examples=100, deadline=None)
@given(st.floats(-0.3, 0.0), st.floats(-2, 5), st.floats(-0.3, 0.0), st.floats(-2, 5), st.floats(10, 30))
def test_ratio_identity_random(sa, ba, sb, bb, logF):
    a, b = PowerLawFit(sa, ba, 0, 2), PowerLawFit(sb, bb, 0, 2)
    F = math.exp(logF)
    direct = math.exp(ba) * F**sa / (math.exp(bb) * F**sb)
    assert abs(ratio_law(a, b).ratio(F) / direct - 1) < 1e-12


def test_parity_constructed_crossing():
    a = PowerLawFit(-0.2, 1.0, 0, 2)
    b_b = a.b + (a.s - -0.1) * math.log(100)
    b = PowerLawFit(-0.1, b_b, 0, 2)
    assert abs(parity_flops(a, b) - 100) < 1e-6


def test_parity_parallel_and_identical():
    a = PowerLawFit(-0.1, 1.0, 0, 2)
    with pytest.raises(ScalingFitError, match="never intersect"):
        parity_flops(a, PowerLawFit(-0.1, 2.0, 0, 2))
    with pytest.raises(ScalingFitError, match="always equal"):
        parity_flops(a, a)


def test_compute_gap_of_two_point_laws():
    byte = powerlaw_fit([(2.3e20, 1.0), (2.7e21, 0.8)])
    bpe = powerlaw_fit([(2.9e19, 1.0), (1.2e21, 0.8)])
    assert compute_gap(byte, bpe, 1.0) == pytest.approx(2.3e20 / 2.9e19, rel=1e-9)


def test_csv_pipeline_recovers_planted_laws(tmp_path):
    pts = synthetic_isoflops(-0.07, 0.9, [1e14, 1e15, 1e16, 1e17], representation="byte")
    pts += synthetic_isoflops(-0.04, 0.5, [1e14, 1e15, 1e16, 1e17], representation="bpe")
    write_points(tmp_path / "p.csv", pts)
    back = read_points(tmp_path / "p.csv")
    assert back == pts
    rep = fit_points(back)
    assert abs(rep.laws[("ar", "byte")].s + 0.07) < 1e-9 and abs(rep.laws[("ar", "byte")].b - 0.9) < 1e-9
    assert abs(rep.ratios["ar"].delta_s + 0.03) < 1e-9
    F = rep.parity["ar"]
    assert abs(math.log(F) - (0.5 - 0.9) / (-0.07 + 0.04)) < 1e-6
    write_curves(tmp_path / "c.csv", rep)
    assert (tmp_path / "c.csv").read_text().startswith("curve,objective,representation,F,N,bpb")


def test_run_point_rejects_non_positive():
    with pytest.raises(ValueError):
        RunPoint(0, 1, 1)

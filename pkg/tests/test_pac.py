"""PAC thresholds via plug-in, Hoeffding, and betting-martingale envelopes."""

import math

import numpy as np
import pytest

from confshift import (
    CalibrationSet,
    EnvelopeEstimate,
    ValidationError,
    envelope_hoeffding,
    envelope_plugin,
    envelope_wsr,
    pac_gap,
    pac_threshold,
    pac_threshold_path,
    rng,
)
from confshift.nuisance import BoundPair

LEVEL_SLACK = 1e-12


def _random_calib(r, n=None, collapse=False):
    n = int(r.integers(2, 50)) if n is None else n
    v = r.normal(size=n)
    lo = r.uniform(0.2, 1.0, size=n)
    hi = lo if collapse else lo + r.uniform(0.0, 1.0, size=n)
    return CalibrationSet(v, lo, hi, float(r.uniform(0.2, 2.0)))


# ---------------------------------------------------------------------------
# envelope hand values
# ---------------------------------------------------------------------------


def test_plugin_hand_values():
    c = CalibrationSet(np.arange(1.0, 10.0), np.ones(9), np.ones(9), 1.0)
    # unit bounds: both envelope terms equal k/n at the k-th sorted score
    np.testing.assert_allclose(envelope_plugin(c, 3.0), 3.0 / 9.0, rtol=0, atol=1e-15)
    assert envelope_plugin(c, 0.0) == 0.0
    assert envelope_plugin(c, 9.0) == 1.0
    heavy = CalibrationSet(np.array([1.0]), np.array([3.0]), np.array([3.0]), 1.0)
    assert envelope_plugin(heavy, 2.0) == 1.0  # clamped


def test_hoeffding_hand_value():
    # n=100 unit summands, M=1: 1 - sqrt(log(40)/200)
    c = CalibrationSet(np.arange(100.0), np.ones(100), np.ones(100), 1.0)
    got = envelope_hoeffding(c, 99.0, delta=0.05)
    np.testing.assert_allclose(got, 0.864189848425938, rtol=0, atol=1e-15)
    # floor at zero for hopeless t
    assert envelope_hoeffding(c, -1.0, delta=0.05) == 0.0


def test_wsr_single_point_is_zero():
    c = CalibrationSet(np.array([1.0]), np.array([1.0]), np.array([1.0]), 1.0)
    assert envelope_wsr(c, 1.0, delta=0.05) == 0.0


def test_wsr_frozen_regression_value():
    # Guards the betting construction (running nu, wealth max, bisection).
    r = rng(14)
    n = 40
    v = r.normal(size=n)
    b = r.uniform(0.5, 1.5, size=n)
    c = CalibrationSet(v, b, b, 1.2)
    t = float(np.median(v))
    np.testing.assert_allclose(
        envelope_wsr(c, t, delta=0.05), 0.3029835289576874, rtol=0, atol=1e-12
    )


def test_envelope_ranges_and_ordering():
    r = rng(31)
    for _ in range(25):
        c = _random_calib(r)
        t = float(r.normal())
        plug = envelope_plugin(c, t)
        hoef = envelope_hoeffding(c, t, 0.1)
        wsr = envelope_wsr(c, t, 0.1)
        assert 0.0 <= plug <= 1.0
        assert 0.0 <= wsr <= 1.0
        assert hoef >= 0.0
        if plug < 1.0:
            assert hoef <= plug + 1e-12


def test_envelope_validation():
    c = _random_calib(rng(1))
    with pytest.raises(ValidationError):
        envelope_hoeffding(c, 0.0, delta=0.0)
    with pytest.raises(ValidationError):
        envelope_wsr(c, 0.0, delta=1.0)
    with pytest.raises(ValidationError):
        envelope_wsr(c, 0.0, delta=0.1, M=0.01)  # below max bound


# ---------------------------------------------------------------------------
# pac_threshold
# ---------------------------------------------------------------------------


def test_plugin_threshold_split_conformal_analogue():
    # unit bounds, n=9, alpha=0.1: needs k/9 >= 0.9, first met at the top score
    r = rng(6)
    v = r.normal(size=9)
    c = CalibrationSet(v, np.ones(9), np.ones(9), 1.0)
    assert pac_threshold(c, 0.1, 0.05, "plugin") == np.sort(v)[8]
    assert pac_threshold(c, 0.5, 0.05, "plugin") == np.sort(v)[4]


def test_threshold_frozen_regression_values():
    r = rng(14)
    n = 40
    v = r.normal(size=n)
    b = r.uniform(0.5, 1.5, size=n)
    c = CalibrationSet(v, b, b, 1.2)
    np.testing.assert_allclose(
        pac_threshold(c, 0.3, 0.05, "wsr"), 1.0232382136634648, rtol=0, atol=1e-12
    )
    np.testing.assert_allclose(
        pac_threshold(c, 0.3, 0.05, "plugin"), 0.4146068139746092, rtol=0, atol=1e-12
    )
    assert pac_threshold(c, 0.3, 0.05, "hoeffding") == math.inf


@pytest.mark.parametrize("method", ["plugin", "hoeffding", "wsr"])
def test_threshold_matches_envelope_scan(method):
    """First sorted score whose repaired envelope clears 1 - alpha."""
    r = rng(32)
    for _ in range(20):
        c = _random_calib(r)
        alpha = float(r.uniform(0.1, 0.9))
        delta = 0.1
        est = EnvelopeEstimate(method=method, calib=c, delta=delta)
        vs, curve = est.curve()
        level = (1.0 - alpha) - LEVEL_SLACK
        crossed = curve >= level
        want = float(vs[np.argmax(crossed)]) if crossed.any() else math.inf
        assert pac_threshold(c, alpha, delta, method) == want


@pytest.mark.parametrize("method", ["plugin", "hoeffding", "wsr"])
def test_threshold_monotone_in_alpha(method):
    r = rng(33)
    for _ in range(10):
        c = _random_calib(r)
        alphas = np.sort(r.uniform(0.05, 0.95, size=5))[::-1]
        thr = [pac_threshold(c, float(a), 0.1, method) for a in alphas]
        assert all(a <= b for a, b in zip(thr, thr[1:]))


def test_hoeffding_threshold_dominates_plugin():
    r = rng(34)
    for _ in range(20):
        c = _random_calib(r)
        alpha = float(r.uniform(0.1, 0.9))
        assert pac_threshold(c, alpha, 0.1, "hoeffding") >= pac_threshold(
            c, alpha, 0.1, "plugin"
        )


def test_wsr_degenerate_small_m_certifies_everything():
    # M <= alpha: the u-side term 1 - M exceeds 1 - alpha at every t.
    c = CalibrationSet(np.array([2.0, 1.0, 3.0]), np.full(3, 0.01), np.full(3, 0.02), 0.05)
    assert pac_threshold(c, 0.3, 0.05, "wsr") == 1.0
    assert envelope_wsr(c, 0.5, 0.05) >= 0.7


def test_threshold_validation():
    c = _random_calib(rng(2))
    with pytest.raises(ValidationError):
        pac_threshold(c, 0.3, 0.05, "magic")
    with pytest.raises(ValidationError):
        pac_threshold(c, 0.0, 0.05, "wsr")
    with pytest.raises(ValidationError):
        pac_threshold(c, 0.3, 0.0, "wsr")
    with pytest.raises(ValidationError):
        pac_threshold(c, 0.3, 0.05, "wsr", M=1e-6)
    # plugin ignores delta entirely
    assert pac_threshold(c, 0.3, 0.0, "plugin") == pac_threshold(c, 0.3, 0.9, "plugin")


# ---------------------------------------------------------------------------
# pac_threshold_path
# ---------------------------------------------------------------------------


def _widening_path(r, n_sets=6, n=None):
    n = int(r.integers(5, 40)) if n is None else n
    v = r.normal(size=n)
    w = r.uniform(0.3, 1.2, size=n)
    w_test = float(r.uniform(0.3, 1.2))
    path = []
    for gamma in np.linspace(1.0, 3.0, n_sets):
        path.append(CalibrationSet(v, w / gamma, w * gamma, w_test * gamma))
    return path


@pytest.mark.parametrize("method", ["plugin", "hoeffding", "wsr"])
def test_path_equals_repaired_single_thresholds(method):
    r = rng(35)
    for _ in range(8):
        path = _widening_path(r)
        alpha, delta = float(r.uniform(0.1, 0.6)), 0.1
        m = max(max(c.lo.max(), c.hi.max(), c.u_test) for c in path)
        got = pac_threshold_path(path, alpha, delta, method)
        singles = [pac_threshold(c, alpha, delta, method, M=m) for c in path]
        want = np.maximum.accumulate(singles)
        np.testing.assert_array_equal(got, want)
        assert (got[:-1] <= got[1:]).all()  # diff would nan out on inf pairs


def test_path_validation():
    r = rng(36)
    path = _widening_path(r, n_sets=3, n=10)
    other = CalibrationSet(r.normal(size=10), np.ones(10), np.ones(10), 1.0)
    with pytest.raises(ValidationError):
        pac_threshold_path([], 0.3, 0.1)
    with pytest.raises(ValidationError):
        pac_threshold_path(path + [other], 0.3, 0.1)
    with pytest.raises(ValidationError):
        pac_threshold_path(path, 0.3, 0.1, M=1e-9)


# ---------------------------------------------------------------------------
# EnvelopeEstimate / pac_gap
# ---------------------------------------------------------------------------


def test_estimate_curve_monotone_and_bounded():
    r = rng(37)
    c = _random_calib(r, n=30)
    for method in ("plugin", "hoeffding", "wsr"):
        est = EnvelopeEstimate(method=method, calib=c, delta=0.1)
        vs, curve = est.curve()
        assert (np.diff(curve) >= 0).all()
        assert vs.tolist() == np.sort(c.v).tolist()
        if method != "hoeffding":
            assert curve.min() >= 0.0 and curve.max() <= 1.0


def test_estimate_validation():
    c = _random_calib(rng(3))
    with pytest.raises(ValidationError):
        EnvelopeEstimate(method="magic", calib=c)
    with pytest.raises(ValidationError):
        EnvelopeEstimate(method="wsr", calib=c)  # delta required
    EnvelopeEstimate(method="plugin", calib=c)


def test_pac_gap_hand_values():
    w = np.array([1.0, 1.0])
    bounds = BoundPair(
        gamma=1.0,
        lower=lambda x: np.array([1.2, 0.8]),
        upper=lambda x: np.array([0.9, 1.5]),
    )
    np.testing.assert_allclose(pac_gap(np.zeros((2, 1)), w, bounds), 0.1, rtol=1e-12)
    exact = BoundPair(gamma=1.0, lower=lambda x: w, upper=lambda x: w)
    assert pac_gap(np.zeros((2, 1)), w, exact) == 0.0
    with pytest.raises(ValidationError):
        pac_gap(np.zeros((1, 1)), np.array([]), exact)

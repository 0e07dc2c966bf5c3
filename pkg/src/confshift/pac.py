"""Training-conditional (PAC) procedure via lower confidence envelopes.

The worst-case target CDF of the scores admits the envelope representation

    G(t) = max{ E[1{V <= t} l(X)],  1 - E[1{V > t} u(X)] },

so a threshold v with G(v) >= 1 - alpha is valid simultaneously for every
ratio inside the envelope. Replacing the two expectations by lower confidence
bounds at level delta gives a threshold that covers with probability 1 - delta
over the calibration draw. Three constructions:

* ``plugin``     empirical means, no confidence correction;
* ``hoeffding``  means minus M sqrt(log(2/delta) / (2n));
* ``wsr``        predictable-plug-in betting martingale lower bound
                 (the within-sample confidence-sequence construction of
                 Waudby-Smith/Ramdas type), the recommended default.

The WSR bound for mean mu of summands f_j in [0, 1] is
inf{g >= 0 : max_i prod_{j<=i} (1 + nu_j (f_j - g)) <= 2/delta} with betting
fractions nu_j = min{1, sqrt(2 log(2/delta) / (n shat^2_{j-1}))} driven by the
running mean/variance started at 1/2 and 1/4. Products use the original
sample order; sorting would break the martingale property.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import PROB_SLACK, ValidationError
from .marginal import CalibrationSet
from .nuisance import BoundPair

__all__ = [
    "EnvelopeEstimate",
    "METHODS",
    "envelope_hoeffding",
    "envelope_plugin",
    "envelope_wsr",
    "pac_gap",
    "pac_threshold",
    "pac_threshold_path",
]

METHODS = ("plugin", "hoeffding", "wsr")

_WSR_TOL = 1e-10
_BLOCK = 256


def _default_m(calib: CalibrationSet) -> float:
    # Exact max of the envelope over calibration and test point; analytic
    # bound families (clipped propensities) keep this finite.
    return float(max(calib.lo.max(), calib.hi.max(), calib.u_test))


def _check_m(calib: CalibrationSet, m: float | None) -> float:
    if m is None:
        return _default_m(calib)
    if m < max(calib.lo.max(), calib.hi.max()):
        raise ValidationError(f"M-too-small: M={m} below max bound")
    return float(m)


def _running_nu(f: np.ndarray, delta: float) -> np.ndarray:
    """Betting fractions nu_j per row of the (R, n) summand matrix ``f``."""
    n = f.shape[1]
    i = np.arange(1, n + 1)
    mu = (0.5 + np.cumsum(f, axis=1)) / (1.0 + i)
    sig2 = (0.25 + np.cumsum((f - mu) ** 2, axis=1)) / (1.0 + i)
    sig2_prev = np.concatenate(
        [np.full((f.shape[0], 1), 0.25), sig2[:, :-1]], axis=1
    )
    return np.minimum(1.0, np.sqrt(2.0 * math.log(2.0 / delta) / (n * sig2_prev)))


def _log_wealth_max(f: np.ndarray, nu: np.ndarray, g: np.ndarray | float) -> np.ndarray:
    """max_i log prod_{j<=i} (1 + nu_j (f_j - g)) per row, g in [0, 1].

    Factors are in [0, 2] for g in [0, 1]; a zero factor kills the wealth,
    which the running max already accounts for through earlier prefixes.
    """
    if isinstance(g, np.ndarray):
        g = g[:, None]
    factors = np.maximum(1.0 + nu * (f - g), 0.0)
    with np.errstate(divide="ignore"):
        logs = np.log(factors)
    return np.max(np.cumsum(logs, axis=1), axis=1)


def _wsr_lcb_rows(f: np.ndarray, delta: float, tol: float = _WSR_TOL) -> np.ndarray:
    """Lower confidence bound rows: inf{g in [0,1] : max wealth <= 2/delta}.

    The max wealth is continuous and strictly decreasing in g and falls below
    2 at g = 1, so the root always lies in [0, 1]; bisection to ``tol``.
    """
    nu = _running_nu(f, delta)
    thresh = math.log(2.0 / delta)
    lo = np.zeros(f.shape[0])
    hi = np.ones(f.shape[0])
    feasible_at_zero = _log_wealth_max(f, nu, lo) <= thresh
    hi[feasible_at_zero] = 0.0
    for _ in range(int(math.ceil(math.log2(1.0 / tol)))):
        mid = 0.5 * (lo + hi)
        ok = _log_wealth_max(f, nu, mid) <= thresh
        hi[ok] = mid[ok]
        lo[~ok] = mid[~ok]
    return 0.5 * (lo + hi)


def _summands(calib: CalibrationSet, t: float, m: float) -> tuple[np.ndarray, np.ndarray]:
    below = calib.v <= t
    f = np.where(below, calib.lo, 0.0) / m
    h = 1.0 - np.where(below, 0.0, calib.hi) / m
    return f, h


def envelope_plugin(calib: CalibrationSet, t: float) -> float:
    """Plug-in envelope max{mean(1{V<=t} l), 1 - mean(1{V>t} u)}, in [0, 1]."""
    below = calib.v <= t
    term1 = float(np.where(below, calib.lo, 0.0).mean())
    term2 = 1.0 - float(np.where(below, 0.0, calib.hi).mean())
    return min(max(max(term1, term2), 0.0), 1.0)


def envelope_hoeffding(
    calib: CalibrationSet, t: float, delta: float, M: float | None = None
) -> float:
    """Plug-in value minus the Hoeffding penalty M sqrt(log(2/delta)/(2n)).

    The pre-max terms are left raw (the u-term may be negative); only the
    final value is floored at 0.
    """
    if not 0.0 < delta < 1.0:
        raise ValidationError(f"delta must be in (0, 1), got {delta}")
    m = _check_m(calib, M)
    below = calib.v <= t
    term1 = float(np.where(below, calib.lo, 0.0).mean())
    term2 = 1.0 - float(np.where(below, 0.0, calib.hi).mean())
    penalty = m * math.sqrt(math.log(2.0 / delta) / (2.0 * calib.n))
    return max(max(term1, term2) - penalty, 0.0)


def envelope_wsr(
    calib: CalibrationSet, t: float, delta: float, M: float | None = None
) -> float:
    """Betting-martingale envelope, clamped to [0, 1].

    Both one-sided bounds spend delta/2 (wealth threshold 2/delta); the
    u-side bound for 1 - E[1{V>t} u] is 1 - M + M * lcb of the complementary
    summands h_j = 1 - 1{V_j > t} u_j / M.
    """
    if not 0.0 < delta < 1.0:
        raise ValidationError(f"delta must be in (0, 1), got {delta}")
    m = _check_m(calib, M)
    f, h = _summands(calib, t, m)
    g_l = _wsr_lcb_rows(f[None, :], delta)[0]
    g_u = _wsr_lcb_rows(h[None, :], delta)[0]
    value = max(m * g_l, 1.0 - m + m * g_u)
    return min(max(value, 0.0), 1.0)


def _wsr_first_crossing(
    calib: CalibrationSet, alpha: float, delta: float, m: float, start: int = 0
) -> int:
    """Index of the first sorted score at or after ``start`` whose raw WSR
    envelope reaches 1-alpha; n when none does.

    Exact sublevel test: G^L >= 1-alpha iff the wealth at the fixed bet
    g0 = (1-alpha)/M still exceeds 2/delta (the bound is the inf over
    feasible g, and wealth is decreasing in g); likewise for the u side at
    g0 = (M-alpha)/M. No bisection, so no tolerance flicker at the boundary.
    """
    vs = calib.v[calib.order]
    n = calib.n
    if start >= n:
        return n
    thresh = math.log(2.0 / delta)
    g0_l = (1.0 - alpha) / m
    g0_u = (m - alpha) / m
    if g0_u <= 0.0:  # degenerate M <= alpha: u side trivially certifies
        return start
    lo_n = calib.lo / m
    hi_n = calib.hi / m
    for blk in range(start, n, _BLOCK):
        tvals = vs[blk : blk + _BLOCK]
        below = calib.v[None, :] <= tvals[:, None]
        hit = np.zeros(tvals.shape[0], dtype=bool)
        if g0_l <= 1.0:
            f = np.where(below, lo_n[None, :], 0.0)
            hit |= _log_wealth_max(f, _running_nu(f, delta), g0_l) >= thresh
        if g0_u <= 1.0:
            h = 1.0 - np.where(below, 0.0, hi_n[None, :])
            hit |= _log_wealth_max(h, _running_nu(h, delta), g0_u) >= thresh
        if hit.any():
            return blk + int(np.argmax(hit))
    return n


def pac_threshold(
    calib: CalibrationSet,
    alpha: float,
    delta: float,
    method: str = "wsr",
    M: float | None = None,
) -> float:
    """Smallest sorted score whose envelope clears 1 - alpha, else +inf.

    The envelope is evaluated at sorted calibration scores only and repaired
    to be monotone by a running max; the first raw crossing therefore equals
    the first repaired crossing, which is what the search returns.
    """
    if method not in METHODS:
        raise ValidationError(f"unknown envelope method {method!r}")
    if not 0.0 < alpha < 1.0:
        raise ValidationError(f"alpha must be in (0, 1), got {alpha}")
    if method != "plugin" and not 0.0 < delta < 1.0:
        raise ValidationError(f"delta must be in (0, 1), got {delta}")
    m = _check_m(calib, M)
    vs, lo_s, hi_s = calib.sorted_arrays()
    n = calib.n
    level = (1.0 - alpha) - PROB_SLACK

    if method == "wsr":
        idx = _wsr_first_crossing(calib, alpha, delta, m)
        return float(vs[idx]) if idx < n else math.inf
    term1 = np.cumsum(lo_s) / n
    tail_hi = np.concatenate([np.cumsum(hi_s[::-1])[::-1][1:], [0.0]])
    raw = np.maximum(term1, 1.0 - tail_hi / n)
    if method == "plugin":
        values = np.clip(raw, 0.0, 1.0)
    else:
        penalty = m * math.sqrt(math.log(2.0 / delta) / (2.0 * n))
        values = np.maximum(raw - penalty, 0.0)
    crossed = values >= level
    idx = int(np.argmax(crossed)) if crossed.any() else n
    return float(vs[idx]) if idx < n else math.inf


def pac_threshold_path(
    calibs,
    alpha: float,
    delta: float,
    method: str = "wsr",
    M: float | None = None,
) -> np.ndarray:
    """Thresholds along a path of calibration sets sharing one score vector.

    Intended for a widening sequence of bound pairs (a strength grid): the
    result is repaired to be nondecreasing, each entry certifying coverage
    for its own set (a larger threshold is always conservative). When the
    per-set thresholds are themselves nondecreasing, the path equals them
    exactly; the betting walk resumes each search at the previous crossing,
    so a whole path costs little more than one search.

    M must dominate every set's bounds; default: the largest single-set M.
    """
    calibs = list(calibs)
    if not calibs:
        raise ValidationError("empty calibration path")
    v0 = calibs[0].v
    for c in calibs[1:]:
        if not np.array_equal(c.v, v0):
            raise ValidationError("path members must share the score vector")
    m = max(_default_m(c) for c in calibs) if M is None else M
    for c in calibs:
        _check_m(c, m)
    out = np.empty(len(calibs))
    if method != "wsr":
        floor = -math.inf
        for i, c in enumerate(calibs):
            floor = max(floor, pac_threshold(c, alpha, delta, method, M=m))
            out[i] = floor
        return out
    if not 0.0 < alpha < 1.0:
        raise ValidationError(f"alpha must be in (0, 1), got {alpha}")
    if not 0.0 < delta < 1.0:
        raise ValidationError(f"delta must be in (0, 1), got {delta}")
    vs = calibs[0].v[calibs[0].order]
    n = calibs[0].n
    cur = _wsr_first_crossing(calibs[0], alpha, delta, m)
    out[0] = float(vs[cur]) if cur < n else math.inf
    for i, c in enumerate(calibs[1:], start=1):
        if cur < n:
            cur = _wsr_first_crossing(c, alpha, delta, m, start=cur)
        out[i] = float(vs[cur]) if cur < n else math.inf
    return out


@dataclass(frozen=True)
class EnvelopeEstimate:
    """A fitted lower-confidence envelope as a step function of t.

    ``value`` gives the raw envelope at one t; ``curve`` evaluates it at all
    sorted calibration scores and applies the running-max monotone repair.
    """

    method: str
    calib: CalibrationSet
    delta: float | None = None
    M: float | None = None

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ValidationError(f"unknown envelope method {self.method!r}")
        if self.method != "plugin" and self.delta is None:
            raise ValidationError(f"method {self.method!r} requires delta")

    def value(self, t: float) -> float:
        if self.method == "plugin":
            return envelope_plugin(self.calib, t)
        if self.method == "hoeffding":
            return envelope_hoeffding(self.calib, t, self.delta, self.M)
        return envelope_wsr(self.calib, t, self.delta, self.M)

    def curve(self) -> tuple[np.ndarray, np.ndarray]:
        vs = self.calib.v[self.calib.order]
        raw = np.array([self.value(t) for t in vs])
        return vs, np.maximum.accumulate(raw)


def pac_gap(x_eval, w_eval, bounds: BoundPair) -> float:
    """Envelope-misspecification penalty max{E(l-w)_+, E(u-w)_-}, plug-in."""
    w = np.asarray(w_eval, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise ValidationError("w_eval must be a nonempty 1-d array")
    l_hat, u_hat = bounds(x_eval)
    under = np.maximum(l_hat - w, 0.0)
    over = np.maximum(w - u_hat, 0.0)
    return float(max(under.mean(), over.mean()))

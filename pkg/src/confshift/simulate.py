"""Synthetic data generator with confounded treatment, plus experiment runners.

Super-population draw (p covariates):

    X ~ Unif[0,1]^p,   U | X ~ N(0, sigma(x)^2),  sigma(x)^2 = 1 + (2.5 x1)^2 / 2
    Y(0) = beta'X + U,   Y(1) = Y(0) + a  (fixed)  or  Y(0) + a U  (random)
    beta = (-0.531, 0.126, -0.312, 0.018, 0, ..., 0)

Treatment depends on the confounder U through a two-regime propensity that
averages back to the marginal e(x) = expit(beta'x):

    e(x, u) = a(x) 1{|u| > t(x)} + b(x) 1{|u| <= t(x)},
    a(x) = e/(e + Gamma(1-e)),  b(x) = e/(e + (1-e)/Gamma),
    t(x) = sigma(x) * PhiInv((1 + rho)/2),  rho = (e - a)/(b - a),

so E[e(X,U) | X] = e(X) while the latent selection odds are exactly Gamma.
The construction is adversarial: the true calibration likelihood ratio lands
exactly on the envelope endpoints (e.g. for the arm-1 marginal target,
w = p1 / e(x, u) in {l(x), u(x)}).

Runners cover the two validation campaigns: marginal / training-conditional
coverage of counterfactual intervals, and the downstream sensitivity
analysis (FWER, FDP, survival curves). Both are deterministic functions of
the config seed; replicates parallelize over processes when asked.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.special import expit

from .core import ValidationError, normal_inv_cdf, rng
from .marginal import CalibrationSet, marginal_gap, robust_threshold_many
from .nuisance import BoundPair, TargetSpec, bound_functions, fit_propensity
from .pac import pac_gap, pac_threshold, pac_threshold_path
from .scores import ScoreFn, fit_quantile_model
from .sensitivity import GammaGrid, gamma_values_from_rejections

__all__ = [
    "SimConfig",
    "SuperPopDraw",
    "TruePropensity",
    "beta_vector",
    "gen_semisynthetic",
    "gen_superpop",
    "oracle_bound_pair",
    "propensity_threshold",
    "run_coverage_experiment",
    "run_sensitivity_experiment",
    "true_likelihood_ratio",
    "true_treated_fraction",
]

_BETA_HEAD = (-0.531, 0.126, -0.312, 0.018)


def beta_vector(p: int) -> np.ndarray:
    if p < 1:
        raise ValidationError(f"p must be >= 1, got {p}")
    beta = np.zeros(p)
    head = np.asarray(_BETA_HEAD)[: min(p, 4)]
    beta[: head.size] = head
    return beta


def _sigma(x: np.ndarray) -> np.ndarray:
    return np.sqrt(1.0 + 0.5 * (2.5 * x[:, 0]) ** 2)


def _propensity_parts(e: np.ndarray, gamma: float) -> tuple[np.ndarray, np.ndarray]:
    low = e / (e + gamma * (1.0 - e))
    high = e / (e + (1.0 - e) / gamma)
    return low, high


def propensity_threshold(x: np.ndarray, gamma: float, p: int | None = None) -> np.ndarray:
    """Cutoff t(x) making the two-regime propensity average to e(x)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    e = expit(x @ beta_vector(p if p is not None else x.shape[1]))
    low, high = _propensity_parts(e, gamma)
    span = high - low
    rho = np.where(span > 0, (e - low) / np.where(span > 0, span, 1.0), 0.5)
    return _sigma(x) * normal_inv_cdf((1.0 + rho) / 2.0)


@dataclass(frozen=True)
class SuperPopDraw:
    """Full latent draw; the confounder and both regimes stay observable."""

    x: np.ndarray
    u: np.ndarray
    t: np.ndarray
    y0: np.ndarray
    y1: np.ndarray
    e_x: np.ndarray
    e_xu: np.ndarray

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def y_obs(self) -> np.ndarray:
        return np.where(self.t == 1, self.y1, self.y0)

    def take(self, idx) -> "SuperPopDraw":
        return SuperPopDraw(
            x=self.x[idx], u=self.u[idx], t=self.t[idx], y0=self.y0[idx],
            y1=self.y1[idx], e_x=self.e_x[idx], e_xu=self.e_xu[idx],
        )

    def outcome(self, arm: int) -> np.ndarray:
        return self.y1 if arm == 1 else self.y0


def _concat(draws: list[SuperPopDraw]) -> SuperPopDraw:
    if len(draws) == 1:
        return draws[0]
    return SuperPopDraw(*(np.concatenate([getattr(d, f) for d in draws])
                          for f in ("x", "u", "t", "y0", "y1", "e_x", "e_xu")))


def gen_superpop(
    n: int,
    p: int,
    gamma_true: float,
    r: np.random.Generator,
    effect_kind: str = "fixed",
    effect_a: float = 0.0,
) -> SuperPopDraw:
    """Draw n units; RNG order is x, then u, then the treatment uniforms."""
    if gamma_true < 1.0:
        raise ValidationError(f"gamma_true must be >= 1, got {gamma_true}")
    if effect_kind not in ("fixed", "random"):
        raise ValidationError(f"unknown effect kind {effect_kind!r}")
    beta = beta_vector(p)
    x = r.uniform(size=(n, p))
    sig = _sigma(x)
    u = r.standard_normal(n) * sig
    e = expit(x @ beta)
    low, high = _propensity_parts(e, gamma_true)
    cut = propensity_threshold(x, gamma_true, p)
    e_xu = np.where(np.abs(u) > cut, low, high)
    t = (r.uniform(size=n) < e_xu).astype(int)
    y0 = x @ beta + u
    y1 = y0 + (effect_a if effect_kind == "fixed" else effect_a * u)
    return SuperPopDraw(x=x, u=u, t=t, y0=y0, y1=np.asarray(y1, dtype=float),
                        e_x=e, e_xu=e_xu)


@lru_cache(maxsize=None)
def true_treated_fraction(p: int) -> float:
    """P(T = 1) = E[e(X)] by tensor Gauss-Legendre quadrature (exact ~1e-13)."""
    beta = beta_vector(p)
    active = np.nonzero(beta)[0]
    if active.size == 0:
        return 0.5
    nodes, weights = np.polynomial.legendre.leggauss(24)
    xs = 0.5 * (nodes + 1.0)
    ws = 0.5 * weights
    grids = np.meshgrid(*([xs] * active.size), indexing="ij")
    wgrids = np.meshgrid(*([ws] * active.size), indexing="ij")
    z = sum(beta[d] * g for d, g in zip(active, grids))
    w = wgrids[0]
    for g in wgrids[1:]:
        w = w * g
    return float((w * expit(z)).sum())


@dataclass(frozen=True)
class TruePropensity:
    """Oracle e(x) = expit(beta'x); satisfies the predict() protocol."""

    p: int

    def predict(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return expit(x @ beta_vector(self.p))


def oracle_bound_pair(target: TargetSpec, gamma: float, p: int) -> BoundPair:
    return bound_functions(target, gamma, TruePropensity(p), true_treated_fraction(p))


def true_likelihood_ratio(draw: SuperPopDraw, target: TargetSpec, p1: float | None = None) -> np.ndarray:
    """Exact target/training density ratio at every unit of ``draw``.

    Derived from Bayes' rule on the latent propensity: conditioning the
    outcome law on T = t tilts it by e(x,u)/e(x) (or the complement), so all
    eight (arm, population) combinations reduce to functions of e(x, u).
    """
    p1 = true_treated_fraction(draw.x.shape[1]) if p1 is None else p1
    p0 = 1.0 - p1
    exu = draw.e_xu
    arm, pop = target.arm, target.population
    if arm == 1:
        if pop == "att":
            w = np.ones(draw.n)
        elif pop == "atc":
            w = (p1 / p0) * (1.0 - exu) / exu
        else:
            w = p1 / exu
    else:
        if pop == "atc":
            w = np.ones(draw.n)
        elif pop == "att":
            w = (p0 / p1) * exu / (1.0 - exu)
        else:
            w = p0 / (1.0 - exu)
    if pop == "general":
        w = w * np.asarray(target.covariate_shift(draw.x), dtype=float)
    return w


# ---------------------------------------------------------------------------
# Experiment configuration and fold construction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SimConfig:
    """One experiment campaign; every field participates in the seed tree."""

    n_train: int
    n_calib: int
    n_test: int = 1
    p: int = 4
    gamma_true: float = 1.0
    arm: int = 1
    population: str = "ate"
    score: str = "cqr"
    alphas: tuple[float, ...] = (0.2,)
    delta: float = 0.05
    procedure: str = "alg1"            # alg1 | alg2
    envelope: str = "wsr"              # alg2 envelope method
    bounds: str = "oracle"             # oracle | estimated
    gamma_bounds: float | None = None  # None: bounds at gamma_true
    effect_kind: str = "fixed"
    effect_a: float = 0.0
    n_reps: int = 1
    seed: int = 0
    n_eval_gap: int = 0                # >0: evaluate gap certificates
    grid: tuple[float, ...] | None = None  # sensitivity runs

    def __post_init__(self) -> None:
        if min(self.n_train, self.n_calib, self.n_test, self.n_reps) < 1:
            raise ValidationError("sizes and replication counts must be >= 1")
        if self.procedure not in ("alg1", "alg2"):
            raise ValidationError(f"unknown procedure {self.procedure!r}")
        if self.bounds not in ("oracle", "estimated"):
            raise ValidationError(f"unknown bounds mode {self.bounds!r}")
        if not all(0.0 < a < 1.0 for a in self.alphas):
            raise ValidationError("alphas must lie in (0, 1)")

    def target(self) -> TargetSpec:
        return TargetSpec(arm=self.arm, population=self.population)


def _pool_until(cfg: SimConfig, r: np.random.Generator, arm: int, count: int) -> SuperPopDraw:
    """IID prefix of the super-population ending at the count-th arm unit."""
    rate = true_treated_fraction(cfg.p)
    rate = rate if arm == 1 else 1.0 - rate
    chunks: list[SuperPopDraw] = []
    have = 0
    while have < count:
        need = count - have
        n_chunk = int(need / rate * 1.25) + 16
        d = gen_superpop(n_chunk, cfg.p, cfg.gamma_true, r,
                         cfg.effect_kind, cfg.effect_a)
        chunks.append(d)
        have += int((d.t == arm).sum())
    pool = _concat(chunks)
    stop = np.nonzero(pool.t == arm)[0][count - 1]
    return pool.take(slice(0, int(stop) + 1))


def _draw_target_units(cfg: SimConfig, r: np.random.Generator, n: int) -> SuperPopDraw:
    """Fresh units from the target population (arm-conditioned for att/atc)."""
    if cfg.population in ("ate", "general"):
        return gen_superpop(n, cfg.p, cfg.gamma_true, r, cfg.effect_kind, cfg.effect_a)
    want = 1 if cfg.population == "att" else 0
    pool = _pool_until(cfg, r, want, n)
    return pool.take(np.nonzero(pool.t == want)[0])


def _bound_pair(cfg: SimConfig, gamma: float, train: SuperPopDraw) -> tuple[BoundPair, float]:
    """(bounds, p1) at strength gamma, oracle or fit on the training fold."""
    target = cfg.target()
    if cfg.bounds == "oracle":
        p1 = true_treated_fraction(cfg.p)
        return bound_functions(target, gamma, TruePropensity(cfg.p), p1), p1
    model = fit_propensity(train.x, train.t)
    p1 = float(np.mean(train.t == 1))
    return bound_functions(target, gamma, model, p1), p1


def _rep_seeds(cfg: SimConfig) -> list[np.random.SeedSequence]:
    return np.random.SeedSequence(cfg.seed).spawn(cfg.n_reps)


def _run_reps(worker: Callable, cfg: SimConfig, threads: int) -> list[dict]:
    jobs = [(cfg, s) for s in _rep_seeds(cfg)]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(worker, jobs))
    return [worker(j) for j in jobs]


# ---------------------------------------------------------------------------
# Coverage campaign
# ---------------------------------------------------------------------------


def _coverage_rep(job: tuple[SimConfig, np.random.SeedSequence]) -> dict:
    cfg, seed = job
    r = rng(seed)
    arm = cfg.arm
    train = _pool_until(cfg, r, arm, cfg.n_train)
    calib = _pool_until(cfg, r, arm, cfg.n_calib)
    test = _draw_target_units(cfg, r, cfg.n_test)

    train_arm = train.take(np.nonzero(train.t == arm)[0])
    calib_arm = calib.take(np.nonzero(calib.t == arm)[0])
    model = fit_quantile_model(train_arm.x, train_arm.outcome(arm))
    gamma_b = cfg.gamma_true if cfg.gamma_bounds is None else cfg.gamma_bounds
    bounds, _ = _bound_pair(cfg, gamma_b, train)
    lo_cal, hi_cal = bounds(calib_arm.x)
    hi_test = bounds.upper(test.x)

    out: dict = {}
    for alpha in cfg.alphas:
        fn = ScoreFn(kind=cfg.score, model=model, alpha=alpha)
        v_cal = fn.score(calib_arm.x, calib_arm.outcome(arm))
        v_test = fn.score(test.x, test.outcome(arm))
        if cfg.procedure == "alg1":
            thr = robust_threshold_many(v_cal, lo_cal, hi_cal, alpha, hi_test)
        else:
            cs = CalibrationSet(v_cal, lo_cal, hi_cal, u_test=float(np.max(hi_test)))
            m_env = float(max(lo_cal.max(), hi_cal.max(), np.max(hi_test)))
            thr = pac_threshold(cs, alpha, cfg.delta, cfg.envelope, M=m_env)
        rec = {"coverage": float(np.mean(v_test <= thr))}
        if cfg.n_eval_gap > 0:
            ev = _pool_until(cfg, r, arm, cfg.n_eval_gap)
            ev = ev.take(np.nonzero(ev.t == arm)[0])
            w = true_likelihood_ratio(ev, cfg.target())
            rec["marginal_gap"] = marginal_gap(ev.x, w, bounds, n_calib=cfg.n_calib)
            rec["pac_gap"] = pac_gap(ev.x, w, bounds)
            lo_true, _ = oracle_bound_pair(cfg.target(), gamma_b, cfg.p)(ev.x)
            lo_est, _ = bounds(ev.x)
            rec["lower_bound_l1"] = float(np.abs(lo_est - lo_true).mean())
        out[_akey(alpha)] = rec
    return out


def _akey(alpha: float) -> str:
    return repr(float(alpha))


def run_coverage_experiment(cfg: SimConfig, threads: int = 1) -> dict:
    """Replicated counterfactual-coverage experiment; returns a JSON-able report.

    Per alpha: per-rep empirical coverage (one indicator when n_test = 1),
    the mean, the 0.05 replication quantile, and when requested the averaged
    gap certificates.
    """
    reps = _run_reps(_coverage_rep, cfg, threads)
    report: dict = {"n_reps": cfg.n_reps, "seed": cfg.seed, "per_alpha": {}}
    for alpha in cfg.alphas:
        key = _akey(alpha)
        cov = np.array([rep[key]["coverage"] for rep in reps])
        entry = {
            "coverage_per_rep": [float(c) for c in cov],
            "coverage_mean": float(cov.mean()),
            "coverage_q05": float(np.quantile(cov, 0.05)),
        }
        for extra in ("marginal_gap", "pac_gap", "lower_bound_l1"):
            if extra in reps[0][key]:
                vals = np.array([rep[key][extra] for rep in reps])
                entry[extra + "_mean"] = float(vals.mean())
                entry[extra + "_max"] = float(vals.max())
        report["per_alpha"][key] = entry
    return report


# ---------------------------------------------------------------------------
# Sensitivity campaign
# ---------------------------------------------------------------------------


def _sensitivity_rep(job: tuple[SimConfig, np.random.SeedSequence]) -> dict:
    """One replication of the effect-direction sensitivity pipeline.

    Counterfactual arm 0 for treated test units, one-sided upper intervals;
    per grid gamma, per-unit thresholds (alg1) or one shared threshold
    (alg2, running-max repaired along the grid so rejections are nested).
    """
    cfg, seed = job
    r = rng(seed)
    grid = GammaGrid(cfg.grid) if cfg.grid is not None else GammaGrid.default()
    train = _pool_until(cfg, r, 0, cfg.n_train)
    calib = _pool_until(cfg, r, 0, cfg.n_calib)
    test = _draw_target_units(cfg, r, cfg.n_test)

    alpha = cfg.alphas[0]
    train_c = train.take(np.nonzero(train.t == 0)[0])
    calib_c = calib.take(np.nonzero(calib.t == 0)[0])
    model = fit_quantile_model(train_c.x, train_c.y0)
    fn = ScoreFn(kind="cqr_one_sided", model=model, alpha=alpha)
    v_cal = fn.score(calib_c.x, calib_c.y0)
    q_test = model.quantile(test.x, 1.0 - alpha)

    pairs = []
    for g in grid.values:
        bounds, _ = _bound_pair(cfg, g, train)
        pairs.append(bounds(calib_c.x) + (bounds.upper(test.x),))

    n_gamma = len(grid)
    reject = {"alg1": np.zeros((test.n, n_gamma), dtype=bool),
              "alg2": np.zeros((test.n, n_gamma), dtype=bool)}
    # Shared envelope scale across the grid: bounds only widen with gamma,
    # so the gamma-max value dominates every grid point.
    lo_max, hi_max, hi_test_max = pairs[-1]
    m_env = float(max(lo_max.max(), hi_max.max(), hi_test_max.max()))
    calibs = [CalibrationSet(v_cal, lo, hi, u_test=float(ht.max()))
              for lo, hi, ht in pairs]
    path = pac_threshold_path(calibs, alpha, cfg.delta, cfg.envelope, M=m_env)
    for j, (lo_cal, hi_cal, hi_test) in enumerate(pairs):
        thr1 = robust_threshold_many(v_cal, lo_cal, hi_cal, alpha, hi_test)
        reject["alg1"][:, j] = test.y1 - (q_test + thr1) > 0
        reject["alg2"][:, j] = test.y1 - (q_test + path[j]) > 0
    ite = test.y1 - test.y0
    out = {"ite": ite}
    for key, rej in reject.items():
        out[key] = gamma_values_from_rejections(rej, grid)
    return out


def run_sensitivity_experiment(cfg: SimConfig, threads: int = 1) -> dict:
    """Replicated sensitivity campaign; FWER, FDP and survival summaries.

    True-null labels come from the realized effects: a unit is null when
    Y(1) - Y(0) <= 0. FWER is the per-rep fraction of null units whose
    sensitivity value exceeds gamma_true; FDP and survival curves are
    evaluated on the same grid used for the scan.
    """
    grid = GammaGrid(cfg.grid) if cfg.grid is not None else GammaGrid.default()
    reps = _run_reps(_sensitivity_rep, cfg, threads)
    gvals = np.asarray(grid.values)
    report: dict = {
        "n_reps": cfg.n_reps,
        "seed": cfg.seed,
        "gamma_grid": [float(g) for g in gvals],
    }
    for key in ("alg1", "alg2"):
        fwer, fdp_max, surv = [], np.zeros(len(gvals)), np.zeros(len(gvals))
        for rep in reps:
            gh, ite = rep[key], rep["ite"]
            null = ite <= 0.0
            fwer.append(float(np.mean(null & (gh > cfg.gamma_true))) if null.any() else 0.0)
            rej = gh[None, :] > gvals[:, None]       # (n_gamma, n_units)
            k = rej.sum(axis=1)
            false = (rej & null[None, :]).sum(axis=1)
            fdp_max = np.maximum(fdp_max, np.where(k > 0, false / np.maximum(k, 1), 0.0))
            surv += rej.mean(axis=1)
        report[key] = {
            "fwer_per_rep": [float(v) for v in fwer],
            "fwer_mean": float(np.mean(fwer)),
            "fwer_q95": float(np.quantile(fwer, 0.95)),
            "fdp_max": [float(v) for v in fdp_max],
            "survival_mean": [float(v / cfg.n_reps) for v in surv],
        }
    return report


# ---------------------------------------------------------------------------
# Semi-synthetic generator
# ---------------------------------------------------------------------------


def gen_semisynthetic(
    x,
    t,
    y,
    gamma: float,
    effect: Callable[[np.ndarray], np.ndarray] | None = None,
    noise_sd: float = 0.2,
    seed: int = 0,
) -> SuperPopDraw:
    """Synthetic outcomes on real covariates, confounded like the main DGP.

    Fits a propensity model and a control-arm median model on the given
    observational sample, then rebuilds a fully known super-population:
    Y(0) = mu0(x) + U with U ~ N(0, noise_sd^2), Y(1) = Y(0) + effect(x),
    and treatment drawn from the two-regime rule around the fitted e(x).
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    t = np.asarray(t, dtype=int)
    y = np.asarray(y, dtype=float)
    if gamma < 1.0:
        raise ValidationError(f"gamma must be >= 1, got {gamma}")
    prop = fit_propensity(x, t)
    control = t == 0
    if not control.any() or control.all():
        raise ValidationError("degenerate-treatment: need both arms")
    mu0 = fit_quantile_model(x[control], y[control]).quantile(x, 0.5)
    tau = np.zeros(x.shape[0]) if effect is None else np.asarray(effect(x), dtype=float)

    r = rng(seed)
    u = r.standard_normal(x.shape[0]) * noise_sd
    e = prop.predict(x)
    low, high = _propensity_parts(e, gamma)
    rho = np.where(high > low, (e - low) / np.where(high > low, high - low, 1.0), 0.5)
    cut = noise_sd * normal_inv_cdf((1.0 + rho) / 2.0)
    e_xu = np.where(np.abs(u) > cut, low, high)
    t_new = (r.uniform(size=x.shape[0]) < e_xu).astype(int)
    y0 = mu0 + u
    return SuperPopDraw(x=x, u=u, t=t_new, y0=y0, y1=y0 + tau, e_x=e, e_xu=e_xu)

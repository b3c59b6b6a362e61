"""Synthetic test problem, scenario runners, and the replication engine.

The ground truth is a pair of Franke-style smooth surfaces on the unit
square whose difference is the individual treatment effect, with a
logistic treatment-assignment probability.  Four scenario loops cover
arm-only assignment on arriving units (s1), joint unit/arm selection from
a pool (s2a), unit selection with Bernoulli-realized arms (s2b), and
unit selection targeting cumulative individual effects (s3).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, asdict

import numpy as np
from joblib import Parallel, delayed

from . import acquisition as acq
from .errors import NumericalFailure, UnfittedModelError
from .gp import FitConfig
from .propensity import KnownPropensity, PropensityModel, fit_logistic
from .surrogate import (
    CONTROL,
    TREATMENT,
    Observation,
    TestSet,
    TwoArmModel,
    WeightSpec,
    estimate_qoi,
    weights,
)

# Dedicated seed for the shared population sample, fixed across replications.
TEST_SET_SEED = 170_501

SCENARIOS = ("s1", "s2a", "s2b", "s3")
SCENARIO_METHODS = {
    "s1": ("random", "alc", "ace"),
    "s2a": ("random", "alc", "ace"),
    "s2b": ("random", "alc_e", "ace_e"),
    "s3": ("random", "greedy", "ace_ucb"),
}
POOL_SCENARIOS = ("s2a", "s2b", "s3")


def franke_mu(x, arm) -> np.ndarray:
    """Conditional mean surfaces on [0,1]^2; the last two bumps are
    treatment-only (positive at large x1 / small x2, negative at large x2)."""
    X = np.atleast_2d(np.asarray(x, dtype=float))
    if X.shape[1] != 2:
        raise ValueError("the shipped ground truth is two-dimensional")
    x1, x2 = X[:, 0], X[:, 1]
    a = float(arm)
    out = (
        0.75 * np.exp(-0.25 * (9 * x1 - 2) ** 2 - 0.25 * (9 * x2 - 2) ** 2)
        + 0.75 * np.exp(-((9 * x1 + 1) ** 2) / 49.0 - ((9 * x2 + 1) ** 2) / 10.0)
        + 0.5 * a * np.exp(-0.25 * (9 * x1 - 7) ** 2 - 0.25 * (9 * x2 - 3) ** 2)
        - 0.2 * a * np.exp(-((9 * x1 - 4) ** 2) - (9 * x2 - 7) ** 2)
    )
    return out if np.ndim(x) > 1 else float(out[0])


def franke_ite(x) -> np.ndarray:
    X = np.atleast_2d(np.asarray(x, dtype=float))
    out = franke_mu(X, TREATMENT) - franke_mu(X, CONTROL)
    return out if np.ndim(x) > 1 else float(out[0])


def true_propensity(x) -> np.ndarray:
    """Treatment probability sigmoid(-2 + 2 * x1 * x2); around 0.19 on average."""
    X = np.atleast_2d(np.asarray(x, dtype=float))
    z = -2.0 + 2.0 * X[:, 0] * X[:, 1]
    out = 0.5 * (1.0 + np.tanh(0.5 * z))
    return out if np.ndim(x) > 1 else float(out[0])


@dataclass(frozen=True)
class GroundTruth:
    """Closed-form conditional means and propensity plus outcome noise."""

    mu: callable
    propensity: callable
    noise_sd: float = 0.05

    def __post_init__(self):
        if self.noise_sd < 0:
            raise ValueError("noise_sd must be nonnegative")


def franke_ground_truth(noise_sd: float = 0.05) -> GroundTruth:
    return GroundTruth(mu=franke_mu, propensity=true_propensity, noise_sd=noise_sd)


def sample_outcome(gt: GroundTruth, x, arm: int, rng: np.random.Generator) -> float:
    """One noisy outcome draw at (x, arm)."""
    mean = float(np.asarray(gt.mu(np.atleast_2d(x), arm)).reshape(-1)[0])
    if gt.noise_sd == 0.0:
        return mean
    return mean + gt.noise_sd * float(rng.standard_normal())


def make_test_set(n_test: int = 1000, dim: int = 2, seed: int = TEST_SET_SEED) -> TestSet:
    rng = np.random.default_rng(seed)
    return TestSet(rng.random((n_test, dim)))


def weighted_effect_and_se(w, delta) -> tuple[float, float]:
    """Weighted-average effect and the sampling s.e. of that ratio estimate."""
    w = np.asarray(w, dtype=float)
    delta = np.asarray(delta, dtype=float)
    tau = float(w @ delta / np.sum(w))
    g = w * (delta - tau) / np.mean(w)
    n = w.shape[0]
    se = float(np.std(g, ddof=1) / np.sqrt(n)) if n > 1 else float("inf")
    return tau, se


def plugin_truth(spec: WeightSpec, test: TestSet) -> tuple[float, float]:
    """Exact ground-truth estimand on the test sample, with its sampling s.e."""
    w = weights(spec, true_propensity(test.points))
    return weighted_effect_and_se(w, franke_ite(test.points))


def monte_carlo_truth(spec: WeightSpec, n_samples: int = 1_000_000,
                      seed: int = 0) -> tuple[float, float]:
    """Population estimand by uniform Monte Carlo over [0,1]^2."""
    rng = np.random.default_rng(seed)
    X = rng.random((int(n_samples), 2))
    w = weights(spec, true_propensity(X))
    return weighted_effect_and_se(w, franke_ite(X))


@dataclass(frozen=True)
class ScenarioConfig:
    """One simulation run's settings.

    refit_interval counts adaptive steps between full hyperparameter
    refits; posteriors are always conditioned on all data regardless.
    """

    scenario: str = "s2a"
    method: str = "ace"
    n: int = 100
    n_pool: int = 500
    n_test: int = 1000
    n_init: int = 5
    weight: WeightSpec = field(default_factory=WeightSpec)
    noise_sd: float = 0.05
    seed: int = 0
    ucb_c: float = 0.01
    refit_interval: int = 1
    fit_restarts: int = 2
    final_fit_restarts: int = 10
    fit_min_obs: int = 10
    propensity_mode: str = "known"
    propensity_interactions: bool = True
    noise_adjusted: bool = False
    test_seed: int = TEST_SET_SEED

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}; choose from {SCENARIOS}")
        if self.method not in SCENARIO_METHODS[self.scenario]:
            raise ValueError(
                f"method {self.method!r} is not valid for scenario {self.scenario}; "
                f"choose from {SCENARIO_METHODS[self.scenario]}"
            )
        if self.scenario in ("s1", "s2a") and self.weight.kind != "ate":
            raise ValueError(f"scenario {self.scenario} targets the ATE only")
        if self.propensity_mode not in ("known", "estimated"):
            raise ValueError("propensity_mode must be 'known' or 'estimated'")
        if self.n_pool < self.n:
            raise ValueError("budget n must not exceed the pool size")
        if 2 * self.n_init > self.n:
            raise ValueError("initial design (2 * n_init) must fit inside the budget n")
        if self.n_init < 1 or self.n_test < 1 or self.refit_interval < 1:
            raise ValueError("n_init, n_test and refit_interval must be positive")
        if not 0 <= self.ucb_c:
            raise ValueError("ucb_c must be nonnegative")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["weight"] = self.weight.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        d = dict(d)
        if isinstance(d.get("weight"), dict):
            d["weight"] = WeightSpec.from_dict(d["weight"])
        elif isinstance(d.get("weight"), str):
            d["weight"] = WeightSpec(kind=d["weight"], alpha=d.pop("alpha", None))
        return cls(**d)


@dataclass
class ReplicationResult:
    """Measured outputs of one replication."""

    seed: int
    scenario: str
    method: str
    estimand: str
    tau_hat: float
    tau_true: float
    cumulative_ite: float | None
    selected_units: list
    arms: list
    wall_time: float
    flags: tuple = ()
    failed: bool = False
    error: str | None = None

    @property
    def bias(self) -> float:
        return self.tau_hat - self.tau_true


class _Study:
    """Mutable state threaded through one replication's scenario loop."""

    def __init__(self, config: ScenarioConfig, seed: int):
        self.config = config
        self.seed = seed
        ss = np.random.SeedSequence(seed)
        (self.design_rng, self.outcome_rng, self.arm_rng,
         self.method_rng, self.fit_rng) = map(np.random.default_rng, ss.spawn(5))
        self.gt = franke_ground_truth(config.noise_sd)
        self.test = make_test_set(config.n_test, 2, config.test_seed)
        self.pool = acq.Pool(self.design_rng.random((config.n_pool, 2)))
        self.model = TwoArmModel.empty(2)
        self.observations: list[Observation] = []
        self.selected_units: list[int] = []
        self.arms: list[int] = []
        self.flags: set[str] = set()
        self.steps_since_refit = 0
        self.scan_cache: dict = {}
        self.known_propensity = KnownPropensity(true_propensity, name="franke_logit")
        self._estimated_propensity: PropensityModel | None = None

    # -- bookkeeping ------------------------------------------------------

    def _fit_config(self, restarts: int) -> FitConfig:
        # Deterministic responses get an (effectively) interpolating fit, as
        # is standard for deterministic computer experiments; the surface
        # must then be carried by the kernel rather than the noise term.
        noise_bounds = (1e-8, 1e-6) if self.config.noise_sd == 0.0 else None
        return FitConfig(n_restarts=restarts, seed=int(self.fit_rng.integers(2**31)),
                         noise_bounds=noise_bounds)

    def observe(self, unit_index: int | None, x, arm: int) -> None:
        y = sample_outcome(self.gt, x, arm, self.outcome_rng)
        obs = Observation(x=x, arm=arm, y=y)
        self.observations.append(obs)
        self.model = self.model.with_observation(obs)
        if unit_index is not None:
            self.pool.mark_taken(unit_index)
            self.selected_units.append(unit_index)
        self.arms.append(arm)

    def full_fit(self) -> None:
        self.model = self.model.refit(self._fit_config(self.config.final_fit_restarts),
                                      min_obs=self.config.fit_min_obs)
        self.scan_cache.clear()
        self.steps_since_refit = 0

    def maybe_refit(self) -> None:
        self.steps_since_refit += 1
        if self.steps_since_refit >= self.config.refit_interval:
            self.model = self.model.refit(self._fit_config(self.config.fit_restarts),
                                          min_obs=self.config.fit_min_obs)
            self.scan_cache.clear()
            self.steps_since_refit = 0

    def realize_arm(self, x) -> int:
        e = float(true_propensity(np.atleast_2d(x))[0])
        return int(self.arm_rng.random() < e)

    def propensity(self) -> PropensityModel:
        if self.config.propensity_mode == "known":
            return self.known_propensity
        return self._refresh_estimated_propensity()

    def _refresh_estimated_propensity(self) -> PropensityModel:
        arms = np.array([o.arm for o in self.observations])
        if arms.size == 0 or arms.min() == arms.max():
            # Cannot fit yet: constant rate from whatever has been seen.
            self.flags.add("propensity_fallback_constant")
            rate = float(np.clip(arms.mean() if arms.size else 0.5, 1e-3, 1 - 1e-3))
            return KnownPropensity(lambda X, r=rate: np.full(X.shape[0], r), name="constant")
        X = np.vstack([o.x for o in self.observations])
        pairs = ()
        if self.config.propensity_interactions:
            d = X.shape[1]
            pairs = tuple((i, j) for i in range(d) for j in range(i + 1, d))
        model = fit_logistic(X, arms, interaction_pairs=pairs)
        if model.flags:
            self.flags.update(model.flags)
        self._estimated_propensity = model
        return model

    def ones_weights(self) -> np.ndarray:
        return np.ones(self.test.n)


def _run_s1(study: _Study) -> None:
    cfg = study.config
    arrivals = study.design_rng.permutation(cfg.n_pool)[: cfg.n]
    w = study.ones_weights()
    for i, unit in enumerate(arrivals):
        x = study.pool.point(int(unit))
        if i < 2 * cfg.n_init:
            arm = i % 2
        elif cfg.method == "random":
            arm = int(study.method_rng.integers(0, 2))
        elif cfg.method == "alc":
            arm = acq.select_alc(study.model, x)
        else:  # ace
            arm = acq.select_scenario1(study.model, x, study.test, w)
        study.observe(None, x, arm)
        study.selected_units.append(int(unit))
        if i + 1 == 2 * cfg.n_init:
            study.full_fit()
        elif i + 1 > 2 * cfg.n_init and cfg.method != "random":
            study.maybe_refit()


def _run_s2a(study: _Study) -> None:
    cfg = study.config
    init_units = study.design_rng.choice(cfg.n_pool, size=2 * cfg.n_init, replace=False)
    for k, unit in enumerate(init_units):
        study.observe(int(unit), study.pool.point(int(unit)), k % 2)
    study.full_fit()
    w = study.ones_weights()
    while len(study.observations) < cfg.n:
        if cfg.method == "random":
            idx, arm = acq.select_random(study.pool, study.method_rng, with_arm=True)
        elif cfg.method == "alc":
            idx, arm = acq.select_alc(study.model, study.pool)
        else:  # ace
            idx, arm = acq.select_scenario2a(study.model, study.pool, study.test, w,
                                             cache=study.scan_cache)
        study.observe(idx, study.pool.point(idx), arm)
        if cfg.method != "random":
            study.maybe_refit()


def _init_observed_arms(study: _Study) -> None:
    """Random draws with realized arms until both arms are seeded (or capped)."""
    cfg = study.config
    draws = 0
    while draws < 4 * cfg.n_init and len(study.observations) < cfg.n:
        n0 = sum(1 for o in study.observations if o.arm == CONTROL)
        n1 = sum(1 for o in study.observations if o.arm == TREATMENT)
        if n0 >= cfg.n_init and n1 >= cfg.n_init:
            break
        idx = int(study.design_rng.choice(study.pool.available_indices()))
        x = study.pool.point(idx)
        study.observe(idx, x, study.realize_arm(x))
        draws += 1
    if not study.model.arm_fitted(TREATMENT) or not study.model.arm_fitted(CONTROL):
        study.flags.add("init_missing_arm")
    study.full_fit()


def _run_s2b(study: _Study) -> None:
    cfg = study.config
    _init_observed_arms(study)
    while len(study.observations) < cfg.n:
        prop = study.propensity()
        if cfg.method == "random":
            idx = acq.select_random(study.pool, study.method_rng)
        elif cfg.method == "alc_e":
            idx = acq.select_alc_e(study.model, study.pool, prop)
        else:  # ace_e
            idx = acq.select_scenario2b(study.model, study.pool, prop, cfg.weight,
                                        study.test, cache=study.scan_cache)
        x = study.pool.point(idx)
        study.observe(idx, x, study.realize_arm(x))
        if cfg.method != "random":
            study.maybe_refit()


def _run_s3(study: _Study) -> None:
    cfg = study.config
    _init_observed_arms(study)
    ucb = acq.UcbConfig(c=cfg.ucb_c, t=1)
    while len(study.observations) < cfg.n:
        prop = study.propensity()
        if cfg.method == "random":
            idx = acq.select_random(study.pool, study.method_rng)
        elif cfg.method == "greedy":
            idx = acq.select_greedy(study.model, study.pool, prop)
        else:  # ace_ucb
            idx = acq.select_scenario3(study.model, study.pool, prop, ucb)
        x = study.pool.point(idx)
        study.observe(idx, x, study.realize_arm(x))
        if cfg.method != "random":
            study.maybe_refit()


_RUNNERS = {"s1": _run_s1, "s2a": _run_s2a, "s2b": _run_s2b, "s3": _run_s3}


def run_replication(config: ScenarioConfig, seed: int | None = None) -> ReplicationResult:
    """Execute one replication; GP fit failures flag the result instead of raising."""
    seed = config.seed if seed is None else int(seed)
    start = time.perf_counter()
    study = _Study(config, seed)
    tau_true, _ = plugin_truth(config.weight, study.test)

    def result(tau_hat=float("nan"), cumulative=None, failed=False, error=None):
        return ReplicationResult(
            seed=seed,
            scenario=config.scenario,
            method=config.method,
            estimand=config.weight.kind,
            tau_hat=tau_hat,
            tau_true=tau_true,
            cumulative_ite=cumulative,
            selected_units=study.selected_units,
            arms=study.arms,
            wall_time=time.perf_counter() - start,
            flags=tuple(sorted(study.flags)),
            failed=failed,
            error=error,
        )

    cumulative = None
    try:
        _RUNNERS[config.scenario](study)
        if config.scenario == "s3":
            treated = [o.x for o in study.observations if o.arm == TREATMENT]
            cumulative = float(np.sum(franke_ite(np.vstack(treated)))) if treated else 0.0
        study.full_fit()
        if study.model.prior_fallback_arms():
            study.flags.add("prior_fallback")
        w_hat = weights(config.weight, study.propensity().evaluate(study.test.points))
        tau_hat = estimate_qoi(study.model, study.test, w_hat)
    except (NumericalFailure, UnfittedModelError) as exc:
        study.flags.add("fit_failure")
        return result(cumulative=cumulative, failed=True, error=str(exc))

    return result(tau_hat=tau_hat, cumulative=cumulative)


def run_many(config: ScenarioConfig, reps: int, base_seed: int | None = None,
             n_jobs: int = 1) -> list[ReplicationResult]:
    """Independent replications with seeds base_seed .. base_seed + reps - 1."""
    base = config.seed if base_seed is None else int(base_seed)
    seeds = [base + i for i in range(int(reps))]
    if n_jobs == 1 or reps == 1:
        return [run_replication(config, s) for s in seeds]
    return Parallel(n_jobs=n_jobs)(delayed(run_replication)(config, s) for s in seeds)


def aggregate(results: list[ReplicationResult]) -> dict:
    """Bias / RMSE (and cumulative-effect quartiles) over valid replications.

    Failed replications are excluded and counted, so aggregates stay
    well-defined.  The x1000 fields mirror the usual reporting scale.
    """
    ok = [r for r in results if not r.failed]
    out = {
        "n_reps": len(results),
        "n_excluded": len(results) - len(ok),
    }
    if ok:
        err = np.array([r.tau_hat - r.tau_true for r in ok])
        out["bias"] = float(np.mean(err))
        out["rmse"] = float(np.sqrt(np.mean(err**2)))
        out["bias_x1000"] = out["bias"] * 1e3
        out["rmse_x1000"] = out["rmse"] * 1e3
        cumulative = [r.cumulative_ite for r in ok if r.cumulative_ite is not None]
        if cumulative:
            q = np.percentile(cumulative, [0, 25, 50, 75, 100])
            out["cumulative_ite"] = {
                "min": float(q[0]), "q1": float(q[1]), "median": float(q[2]),
                "q3": float(q[3]), "max": float(q[4]),
            }
    return out

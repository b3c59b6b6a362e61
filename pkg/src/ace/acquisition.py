"""Selection criteria for sequential experiments.

Variance-reduction rules for assigned treatments (scenario 1: arm only;
scenario 2a: unit and arm), their propensity-weighted expectation for
observed treatments (scenario 2b), an upper-confidence-bound rule for
cumulative individual effects (scenario 3), and the random / largest
uncertainty / greedy baselines.

All selectors are pure functions of an immutable model snapshot; pool
bookkeeping (without-replacement masking) is the caller's job via Pool.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import PoolExhaustedError
from .propensity import PropensityModel
from .surrogate import ARMS, CONTROL, TREATMENT, TestSet, TwoArmModel, WeightSpec, weights

# Floor for posterior variances in denominators, against near-duplicate points.
EPS_VAR = 1e-10


class Pool:
    """Finite candidate set with without-replacement bookkeeping."""

    def __init__(self, candidates):
        self.candidates = np.atleast_2d(np.asarray(candidates, dtype=float))
        self._taken = np.zeros(self.candidates.shape[0], dtype=bool)

    @property
    def n(self) -> int:
        return self.candidates.shape[0]

    @property
    def n_available(self) -> int:
        return int(np.sum(~self._taken))

    @property
    def available_mask(self) -> np.ndarray:
        return ~self._taken

    def available_indices(self) -> np.ndarray:
        return np.flatnonzero(~self._taken)

    def taken_indices(self) -> np.ndarray:
        return np.flatnonzero(self._taken)

    def mark_taken(self, index: int) -> None:
        if self._taken[index]:
            raise ValueError(f"candidate {index} was already selected")
        self._taken[index] = True

    def point(self, index: int) -> np.ndarray:
        return self.candidates[index]


@dataclass
class UcbConfig:
    """Exploration schedule beta_t = c^2 * log(t), with t starting at 1."""

    c: float = 0.01
    t: int = 1

    def __post_init__(self):
        if self.c < 0:
            raise ValueError("c must be nonnegative")
        if self.t < 1:
            raise ValueError("t starts at 1")

    @property
    def beta(self) -> float:
        return self.c**2 * np.log(self.t)

    def advance(self) -> None:
        self.t += 1


def _weighted_test_cov(gp, test: TestSet, w: np.ndarray, X: np.ndarray,
                       cache: dict | None = None) -> np.ndarray:
    """w' Sigma_n(test points, x) for each row x of X.

    The prior term k0(X, test) @ w depends only on the kernel and the fixed
    candidate/test/weight arrays, so repeated pool scans between refits can
    reuse it through `cache` (cleared by the caller whenever the model is
    refit or the weights change).
    """
    key = (id(gp.params.kernel), id(X), id(w))
    s = cache.get(key) if cache is not None else None
    if s is None:
        s = gp.k0(X, test.points) @ w
        if cache is not None:
            cache[key] = s
    if gp.n == 0:
        return s
    u = gp.solve(gp.k0(gp.data.inputs, test.points) @ w)
    return s - gp.k0(X, gp.data.inputs) @ u


def variance_reduction(model: TwoArmModel, arm: int, x, test: TestSet, w,
                       noise_adjusted: bool = False, cache: dict | None = None):
    """Reduction of the weighted-estimand posterior variance from observing
    the latent mean of `arm` at x.

    r = (w' Sigma_n(test, x))^2 / sigma_n^2(x).  The denominator follows a
    hypothetical noiseless observation; noise_adjusted=True adds the fitted
    noise variance instead.  Accepts a single point or a batch of rows and
    returns a scalar or vector accordingly.
    """
    X = np.asarray(x, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    w = np.asarray(w, dtype=float)
    gp = model.gp(arm)
    s = _weighted_test_cov(gp, test, w, X, cache)
    var = gp.posterior_var(X)
    if noise_adjusted:
        var = var + gp.params.noise_variance
    r = s**2 / np.maximum(var, EPS_VAR)
    return float(r[0]) if single else r


def select_scenario1(model: TwoArmModel, x_new, test: TestSet, w) -> int:
    """Arm for an arriving unit: the one whose observation removes more
    estimand variance.  Ties go to the arm with fewer observations, then
    to control."""
    r = [variance_reduction(model, a, x_new, test, w) for a in ARMS]
    if r[TREATMENT] > r[CONTROL]:
        return TREATMENT
    if r[CONTROL] > r[TREATMENT]:
        return CONTROL
    if model.n_obs(TREATMENT) < model.n_obs(CONTROL):
        return TREATMENT
    return CONTROL


def _masked(scores: np.ndarray, pool: Pool) -> np.ndarray:
    out = np.where(pool.available_mask, scores, -np.inf)
    return out


def _require_available(pool: Pool) -> None:
    if pool.n_available == 0:
        raise PoolExhaustedError("no available candidates left in the pool")


def select_scenario2a(model: TwoArmModel, pool: Pool, test: TestSet, w,
                      cache: dict | None = None) -> tuple[int, int]:
    """Best (unit, arm) pair by variance reduction over the available pool.

    Deterministic ties: lowest candidate index, then control.
    """
    _require_available(pool)
    r0 = _masked(variance_reduction(model, CONTROL, pool.candidates, test, w, cache=cache), pool)
    r1 = _masked(variance_reduction(model, TREATMENT, pool.candidates, test, w, cache=cache), pool)
    flat = np.column_stack([r0, r1]).reshape(-1)
    k = int(np.argmax(flat))
    return k // 2, k % 2


def expected_variance_reduction(model: TwoArmModel, x, e_x, test: TestSet, w,
                                cache: dict | None = None):
    """Propensity-weighted average of the two arms' variance reductions."""
    e = np.asarray(e_x, dtype=float)
    r1 = variance_reduction(model, TREATMENT, x, test, w, cache=cache)
    r0 = variance_reduction(model, CONTROL, x, test, w, cache=cache)
    out = e * r1 + (1.0 - e) * r0
    return float(out) if np.ndim(out) == 0 else out


def select_scenario2b(model: TwoArmModel, pool: Pool, propensity: PropensityModel,
                      spec: WeightSpec, test: TestSet, cache: dict | None = None) -> int:
    """Best unit by expected variance reduction when the arm is only observed.

    The estimand weights are recomputed from the current propensity values
    on the test set, so estimated propensities propagate into the target.
    """
    _require_available(pool)
    w_hat = weights(spec, propensity.evaluate(test.points))
    if cache is not None:
        w_hat = cache.setdefault(("weights", spec.kind, id(propensity)), w_hat)
    e_pool = propensity.evaluate(pool.candidates)
    er = expected_variance_reduction(model, pool.candidates, e_pool, test, w_hat, cache=cache)
    return int(np.argmax(_masked(er, pool)))


def sigma_te(model: TwoArmModel, x, e_x):
    """Uncertainty of the realized individual effect contribution at x.

    sqrt of e(x)(sigma1^2 + sigma0^2) + e(x)(1-e(x))(mu1 - mu0)^2, treating
    the Bernoulli assignment and the two posterior means as independent.
    """
    X = np.atleast_2d(np.asarray(x, dtype=float))
    e = np.asarray(e_x, dtype=float)
    v1 = model.treated.posterior_var(X)
    v0 = model.control.posterior_var(X)
    gap = model.ite_mean(X)
    out = np.sqrt(e * (v1 + v0) + e * (1.0 - e) * gap**2)
    return float(out[0]) if np.ndim(x) == 1 and out.shape == (1,) else out


def ucb_score(model: TwoArmModel, x, e_x, beta: float):
    """e(x) * posterior mean gap + sqrt(beta) * sigma_te."""
    if beta < 0:
        raise ValueError("beta must be nonnegative")
    X = np.atleast_2d(np.asarray(x, dtype=float))
    e = np.asarray(e_x, dtype=float)
    out = e * model.ite_mean(X) + np.sqrt(beta) * sigma_te(model, X, e)
    return float(out[0]) if np.ndim(x) == 1 and out.shape == (1,) else out


def select_scenario3(model: TwoArmModel, pool: Pool, propensity: PropensityModel,
                     ucb: UcbConfig) -> int:
    """Upper-confidence-bound pick for cumulative individual effect.

    Advances the step counter, so the first call explores nothing
    (beta_1 = 0) and later calls widen with c^2 log t.
    """
    _require_available(pool)
    e_pool = propensity.evaluate(pool.candidates)
    scores = ucb_score(model, pool.candidates, e_pool, ucb.beta)
    idx = int(np.argmax(_masked(scores, pool)))
    ucb.advance()
    return idx


def select_random(pool: Pool, rng: np.random.Generator, with_arm: bool = False):
    """Uniform pick among available candidates (and a fair coin arm if asked)."""
    _require_available(pool)
    idx = int(rng.choice(pool.available_indices()))
    if with_arm:
        return idx, int(rng.integers(0, 2))
    return idx


def select_alc(model: TwoArmModel, target):
    """Largest posterior standard deviation baseline.

    With a Pool, scans available units x both arms and returns (index, arm);
    with a single point, returns the more uncertain arm.  Ties: lowest
    index, then control.
    """
    if isinstance(target, Pool):
        _require_available(target)
        v0 = _masked(model.control.posterior_var(target.candidates), target)
        v1 = _masked(model.treated.posterior_var(target.candidates), target)
        flat = np.column_stack([v0, v1]).reshape(-1)
        k = int(np.argmax(flat))
        return k // 2, k % 2
    x = np.asarray(target, dtype=float).reshape(1, -1)
    v0 = float(model.control.posterior_var(x)[0])
    v1 = float(model.treated.posterior_var(x)[0])
    return TREATMENT if v1 > v0 else CONTROL


def select_alc_e(model: TwoArmModel, pool: Pool, propensity: PropensityModel) -> int:
    """Expected largest-uncertainty baseline for observed treatments."""
    _require_available(pool)
    e = propensity.evaluate(pool.candidates)
    v1 = model.treated.posterior_var(pool.candidates)
    v0 = model.control.posterior_var(pool.candidates)
    return int(np.argmax(_masked(e * v1 + (1.0 - e) * v0, pool)))


def select_greedy(model: TwoArmModel, pool: Pool, propensity: PropensityModel) -> int:
    """Pure exploitation: largest propensity-weighted posterior mean gap."""
    _require_available(pool)
    e = propensity.evaluate(pool.candidates)
    scores = e * model.ite_mean(pool.candidates)
    return int(np.argmax(_masked(scores, pool)))

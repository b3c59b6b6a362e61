"""Two-arm potential-outcome surrogate and weighted treatment-effect estimation.

One independent GP per arm; estimands are weighted averages of the
posterior mean gap over a fixed test set representing the population of
interest.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import EmptyTargetError, UnfittedModelError
from .gp import FitConfig, FittedGP, GPHyperParams, TrainingSet, default_hyperparams, fit_mle

CONTROL, TREATMENT = 0, 1
ARMS = (CONTROL, TREATMENT)


def _check_arm(arm: int) -> int:
    if arm not in ARMS:
        raise ValueError(f"arm must be 0 (control) or 1 (treatment), got {arm!r}")
    return int(arm)


@dataclass(frozen=True)
class Observation:
    """One experimental record: covariates, received arm, outcome."""

    x: np.ndarray
    arm: int
    y: float

    def __post_init__(self):
        object.__setattr__(self, "x", np.asarray(self.x, dtype=float).reshape(-1))
        object.__setattr__(self, "arm", _check_arm(self.arm))
        object.__setattr__(self, "y", float(self.y))


@dataclass(frozen=True)
class TestSet:
    """Fixed sample of covariate points defining the finite-sample estimand."""

    __test__ = False  # keep pytest from collecting this as a test class

    points: np.ndarray

    def __post_init__(self):
        pts = np.atleast_2d(np.asarray(self.points, dtype=float))
        if pts.shape[0] < 1:
            raise ValueError("test set must contain at least one point")
        object.__setattr__(self, "points", pts)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def save_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow([f"x{j + 1}" for j in range(self.dim)])
            for row in self.points:
                writer.writerow([repr(float(v)) for v in row])

    @classmethod
    def load_csv(cls, path) -> "TestSet":
        with open(Path(path), newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if not all(h.strip() == f"x{j + 1}" for j, h in enumerate(header)):
                raise ValueError(f"expected header x1..xd, got {header}")
            rows = [[float(v) for v in row] for row in reader if row]
        return cls(np.asarray(rows, dtype=float))


WEIGHT_KINDS = ("ate", "atte", "ato", "truncated", "matching")


@dataclass(frozen=True)
class WeightSpec:
    """Target-population weight function, parameterized by the propensity.

    ate: 1, atte: e, ato: e(1-e), truncated: 1(alpha < e < 1-alpha),
    matching: min(e, 1-e).
    """

    kind: str = "ate"
    alpha: float | None = None

    def __post_init__(self):
        kind = self.kind.lower()
        object.__setattr__(self, "kind", kind)
        if kind not in WEIGHT_KINDS:
            raise ValueError(f"unknown weight kind {self.kind!r}; choose from {WEIGHT_KINDS}")
        if kind == "truncated":
            if self.alpha is None or not (0.0 < self.alpha < 0.5):
                raise ValueError("truncated weights need alpha in (0, 0.5)")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "alpha": self.alpha}

    @classmethod
    def from_dict(cls, d: dict) -> "WeightSpec":
        return cls(kind=d["kind"], alpha=d.get("alpha"))


def weights(spec: WeightSpec, e_vec) -> np.ndarray:
    """Estimand weights at the given propensity values.

    Raises EmptyTargetError if every weight comes out zero (e.g. the
    truncation removed the whole test set).
    """
    e = np.asarray(e_vec, dtype=float)
    if spec.kind != "ate" and (np.any(e <= 0.0) or np.any(e >= 1.0)):
        raise ValueError("propensity values must lie strictly inside (0, 1)")
    if spec.kind == "ate":
        w = np.ones_like(e)
    elif spec.kind == "atte":
        w = e.copy()
    elif spec.kind == "ato":
        w = e * (1.0 - e)
    elif spec.kind == "truncated":
        w = ((e > spec.alpha) & (e < 1.0 - spec.alpha)).astype(float)
    else:  # matching
        w = np.minimum(e, 1.0 - e)
    if not np.any(w > 0.0):
        raise EmptyTargetError(f"all {spec.kind} weights are zero on this test set")
    return w


@dataclass(frozen=True)
class TwoArmModel:
    """Independent GP posteriors for the control and treatment surfaces.

    Immutable snapshot: adding observations or refitting returns a new
    model.  Queries on an arm without data fall back to its prior.
    """

    control: FittedGP
    treated: FittedGP

    @classmethod
    def empty(cls, dim: int, params: GPHyperParams | None = None) -> "TwoArmModel":
        params = params or default_hyperparams(dim)
        empty = TrainingSet.empty(dim)
        return cls(FittedGP.build(params, empty), FittedGP.build(params, empty))

    @classmethod
    def from_observations(cls, observations, dim: int | None = None,
                          fit_config: FitConfig | None = None) -> "TwoArmModel":
        observations = list(observations)
        if dim is None:
            if not observations:
                raise ValueError("dim is required when no observations are given")
            dim = observations[0].x.shape[0]
        model = cls.empty(dim)
        for obs in observations:
            model = model.with_observation(obs)
        return model.refit(fit_config or FitConfig())

    def gp(self, arm: int) -> FittedGP:
        return self.treated if _check_arm(arm) else self.control

    def _replaced(self, arm: int, gp: FittedGP) -> "TwoArmModel":
        return replace(self, treated=gp) if arm == TREATMENT else replace(self, control=gp)

    @property
    def dim(self) -> int:
        return self.control.data.dim

    def n_obs(self, arm: int) -> int:
        return self.gp(arm).n

    def arm_fitted(self, arm: int) -> bool:
        return self.gp(arm).n > 0

    def prior_fallback_arms(self) -> tuple[int, ...]:
        return tuple(a for a in ARMS if not self.arm_fitted(a))

    def with_observation(self, obs: Observation) -> "TwoArmModel":
        """New snapshot with obs appended to its arm; the other arm is untouched."""
        gp = self.gp(obs.arm)
        return self._replaced(obs.arm, gp.with_point(obs.x, obs.y))

    def refit(self, config: FitConfig | None = None, min_obs: int = 0) -> "TwoArmModel":
        """Refit hyperparameters of both arms by MLE (defaults below 3 points).

        Arms with fewer than min_obs observations are held at the default
        hyperparameters instead of a small-sample MLE, which can collapse
        the kernel on a few flat readings and starve that arm of any
        uncertainty-driven selection.
        """
        config = config or FitConfig()
        model = self
        for arm in ARMS:
            gp = model.gp(arm)
            if gp.data.n < min_obs:
                params = default_hyperparams(self.dim, gp.data.outputs)
            else:
                result = fit_mle(gp.data, config if config.warm_start is not None
                                 else replace(config, warm_start=gp.params))
                params = result.params
            model = model._replaced(arm, FittedGP.build(params, gp.data))
        return model

    def ite_mean(self, Xq) -> np.ndarray:
        """Posterior mean of the treatment-control gap at the query points."""
        return self.treated.posterior_mean(Xq) - self.control.posterior_mean(Xq)


def estimate_qoi(model: TwoArmModel, test: TestSet, w) -> float:
    """Plug-in weighted treatment-effect estimate over the test set.

    tau_hat = sum_k w_k (m^(1)(x_k) - m^(0)(x_k)) / sum_k w_k, using the
    posterior means of both arms.
    """
    w = np.asarray(w, dtype=float)
    if w.shape != (test.n,):
        raise ValueError("weight vector length must match the test set")
    for arm in ARMS:
        if not model.arm_fitted(arm):
            raise UnfittedModelError(f"arm {arm} has no observations; cannot estimate")
    total = float(np.sum(w))
    if total <= 0.0:
        raise EmptyTargetError("weight vector sums to zero")
    return float(w @ model.ite_mean(test.points) / total)


def qoi_posterior_variance(model: TwoArmModel, test: TestSet, w) -> float:
    """Posterior variance of the plug-in estimate, treating arms as independent."""
    w = np.asarray(w, dtype=float)
    for arm in ARMS:
        if not model.arm_fitted(arm):
            raise UnfittedModelError(f"arm {arm} has no observations; cannot estimate")
    total = float(np.sum(w))
    if total <= 0.0:
        raise EmptyTargetError("weight vector sums to zero")
    cov_sum = model.treated.posterior_cov(test.points) + model.control.posterior_cov(test.points)
    return float(w @ cov_sum @ w) / total**2

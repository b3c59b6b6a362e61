"""Treatment-assignment probability models: known forms and logistic fits."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

# Propensities are clamped this far inside (0, 1) so weights and
# expected-variance terms stay finite.
PROPENSITY_CLAMP = 1e-6


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=float)))


def _clamp(e):
    return np.clip(e, PROPENSITY_CLAMP, 1.0 - PROPENSITY_CLAMP)


class PropensityModel:
    """Interface: evaluate(x) returns Pr(A=1 | X=x), clamped inside (0, 1)."""

    def evaluate(self, X) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, X) -> np.ndarray:
        return self.evaluate(X)


@dataclass(frozen=True)
class KnownPropensity(PropensityModel):
    """Closed-form propensity given by an arbitrary function of the covariates."""

    fn: callable
    name: str = "known"

    def evaluate(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return _clamp(np.asarray(self.fn(X), dtype=float).reshape(X.shape[0]))


@dataclass(frozen=True)
class LogisticPropensity(PropensityModel):
    """Logistic model on the raw coordinates plus optional pairwise products.

    interactions holds (i, j, coefficient) triples for x_i * x_j features.
    """

    intercept: float
    coefficients: np.ndarray
    interactions: tuple = ()
    flags: tuple = field(default=(), compare=False)

    def __post_init__(self):
        object.__setattr__(
            self, "coefficients", np.asarray(self.coefficients, dtype=float).reshape(-1)
        )
        object.__setattr__(
            self,
            "interactions",
            tuple((int(i), int(j), float(c)) for i, j, c in self.interactions),
        )

    def logit(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.coefficients.shape[0]:
            raise ValueError(
                f"point dimension {X.shape[1]} does not match model dimension "
                f"{self.coefficients.shape[0]}"
            )
        z = self.intercept + X @ self.coefficients
        for i, j, c in self.interactions:
            z = z + c * X[:, i] * X[:, j]
        return z

    def evaluate(self, X) -> np.ndarray:
        return _clamp(_sigmoid(self.logit(X)))

    def to_json(self) -> str:
        return json.dumps(
            {
                "intercept": self.intercept,
                "coefficients": [float(c) for c in self.coefficients],
                "interactions": [[i, j, c] for i, j, c in self.interactions],
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "LogisticPropensity":
        d = json.loads(text)
        return cls(
            intercept=float(d["intercept"]),
            coefficients=np.asarray(d["coefficients"], dtype=float),
            interactions=tuple(tuple(t) for t in d.get("interactions", [])),
        )


def _design_matrix(X: np.ndarray, interaction_pairs) -> np.ndarray:
    cols = [np.ones(X.shape[0]), *X.T]
    for i, j in interaction_pairs:
        cols.append(X[:, i] * X[:, j])
    return np.column_stack(cols)


def fit_logistic(X, arms, interaction_pairs=(), ridge: float = 0.0) -> LogisticPropensity:
    """Maximum-likelihood logistic regression of arm on covariates.

    interaction_pairs lists (i, j) index pairs whose products are added as
    features.  On (near) perfect separation the unpenalized MLE diverges;
    the fit is then redone with a small ridge penalty (1e-4) and flagged.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    a = np.asarray(arms, dtype=float).reshape(-1)
    if X.shape[0] != a.shape[0]:
        raise ValueError("covariates and arms must have the same length")
    if not (np.any(a == 1.0) and np.any(a == 0.0)):
        raise ValueError("need at least one observation in each arm")

    D = _design_matrix(X, interaction_pairs)
    p = D.shape[1]

    def nll_grad(beta):
        z = D @ beta
        # log(1 + exp(z)) - a*z, computed stably
        nll = float(np.sum(np.logaddexp(0.0, z) - a * z)) + 0.5 * ridge * float(beta @ beta)
        grad = D.T @ (_sigmoid(z) - a) + ridge * beta
        return nll, grad

    res = optimize.minimize(nll_grad, np.zeros(p), jac=True, method="L-BFGS-B",
                            options={"maxiter": 500})
    beta = res.x
    separated = (not res.success) or np.max(np.abs(beta)) > 30.0
    flags = ()
    if separated and ridge == 0.0:
        return fit_logistic(X, arms, interaction_pairs, ridge=1e-4)
    if ridge > 0.0:
        flags = ("ridge_fallback",)
    return LogisticPropensity(
        intercept=float(beta[0]),
        coefficients=beta[1 : 1 + X.shape[1]],
        interactions=tuple(
            (i, j, float(c)) for (i, j), c in zip(interaction_pairs, beta[1 + X.shape[1] :])
        ),
        flags=flags,
    )

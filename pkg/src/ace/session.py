"""Turn-based advisory sessions for live studies.

A session is a JSON-serializable document holding everything needed to
reproduce the next recommendation: scenario kind, accumulated
observations, pool/test points, estimand weights, propensity handling,
fitted hyperparameters, and a step counter.  Applying a request is a pure
state transition, so a persisted and reloaded session recommends exactly
what the in-memory one would.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import acquisition as acq
from .errors import PoolExhaustedError
from .gp import FitConfig, FittedGP, GPHyperParams, fit_mle
from .propensity import KnownPropensity, LogisticPropensity, PropensityModel, fit_logistic
from .simulation import SCENARIOS, true_propensity
from .surrogate import ARMS, Observation, TestSet, TwoArmModel, WeightSpec, weights

# Closed-form propensities that a session file may reference by name.
NAMED_PROPENSITIES = {
    "franke_logit": true_propensity,
}


def _propensity_to_dict(model) -> dict:
    if isinstance(model, LogisticPropensity):
        return {
            "kind": "logistic",
            "intercept": model.intercept,
            "coefficients": [float(c) for c in model.coefficients],
            "interactions": [[i, j, c] for i, j, c in model.interactions],
        }
    if isinstance(model, KnownPropensity) and model.name in NAMED_PROPENSITIES:
        return {"kind": "named", "name": model.name}
    raise ValueError("propensity model is not serializable; use a named or logistic form")


def _propensity_from_dict(d: dict | None) -> PropensityModel | None:
    if d is None:
        return None
    if d["kind"] == "named":
        return KnownPropensity(NAMED_PROPENSITIES[d["name"]], name=d["name"])
    if d["kind"] == "logistic":
        return LogisticPropensity(
            intercept=float(d["intercept"]),
            coefficients=np.asarray(d["coefficients"], dtype=float),
            interactions=tuple(tuple(t) for t in d.get("interactions", [])),
        )
    raise ValueError(f"unknown propensity kind {d['kind']!r}")


@dataclass(frozen=True)
class AdvisorySession:
    """Immutable session state; transitions return new instances."""

    scenario: str
    test_points: np.ndarray
    weight: WeightSpec = field(default_factory=WeightSpec)
    pool_points: np.ndarray | None = None
    taken: tuple = ()
    observations: tuple = ()
    propensity_mode: str = "known"
    known_propensity: PropensityModel | None = None
    step: int = 0
    ucb_c: float = 0.01
    fit_restarts: int = 5
    fit_seed: int = 0
    hyperparams: dict = field(default_factory=lambda: {0: None, 1: None})
    flags: tuple = ()

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}")
        object.__setattr__(self, "test_points",
                           np.atleast_2d(np.asarray(self.test_points, dtype=float)))
        if self.pool_points is not None:
            object.__setattr__(self, "pool_points",
                               np.atleast_2d(np.asarray(self.pool_points, dtype=float)))
        elif self.scenario != "s1":
            raise ValueError(f"scenario {self.scenario} requires a candidate pool")
        if self.propensity_mode not in ("known", "estimated"):
            raise ValueError("propensity_mode must be 'known' or 'estimated'")
        if self.scenario in ("s2b", "s3") and self.propensity_mode == "known" \
                and self.known_propensity is None:
            raise ValueError("known propensity_mode requires a propensity model")

    @property
    def dim(self) -> int:
        return self.test_points.shape[1]

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "weight": self.weight.to_dict(),
            "test_points": self.test_points.tolist(),
            "pool_points": None if self.pool_points is None else self.pool_points.tolist(),
            "taken": list(self.taken),
            "observations": [
                {"x": o.x.tolist(), "a": o.arm, "y": o.y} for o in self.observations
            ],
            "propensity_mode": self.propensity_mode,
            "known_propensity": (None if self.known_propensity is None
                                 else _propensity_to_dict(self.known_propensity)),
            "step": self.step,
            "ucb_c": self.ucb_c,
            "fit_restarts": self.fit_restarts,
            "fit_seed": self.fit_seed,
            "hyperparams": {
                str(a): (None if self.hyperparams.get(a) is None
                         else self.hyperparams[a].to_dict())
                for a in ARMS
            },
            "flags": list(self.flags),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AdvisorySession":
        return cls(
            scenario=d["scenario"],
            weight=WeightSpec.from_dict(d.get("weight", {"kind": "ate"})),
            test_points=np.asarray(d["test_points"], dtype=float),
            pool_points=(None if d.get("pool_points") is None
                         else np.asarray(d["pool_points"], dtype=float)),
            taken=tuple(int(i) for i in d.get("taken", ())),
            observations=tuple(
                Observation(x=o["x"], arm=o["a"], y=o["y"]) for o in d.get("observations", ())
            ),
            propensity_mode=d.get("propensity_mode", "known"),
            known_propensity=_propensity_from_dict(d.get("known_propensity")),
            step=int(d.get("step", 0)),
            ucb_c=float(d.get("ucb_c", 0.01)),
            fit_restarts=int(d.get("fit_restarts", 5)),
            fit_seed=int(d.get("fit_seed", 0)),
            hyperparams={
                a: (None if d.get("hyperparams", {}).get(str(a)) is None
                    else GPHyperParams.from_dict(d["hyperparams"][str(a)]))
                for a in ARMS
            },
            flags=tuple(d.get("flags", ())),
        )

    # -- model assembly ----------------------------------------------------

    def _arm_data(self, arm: int):
        from .gp import TrainingSet

        obs = [o for o in self.observations if o.arm == arm]
        if not obs:
            return TrainingSet.empty(self.dim)
        return TrainingSet(np.vstack([o.x for o in obs]), np.array([o.y for o in obs]))

    def _fitted_params(self, arm: int) -> GPHyperParams:
        stored = self.hyperparams.get(arm)
        if stored is not None:
            return stored
        result = fit_mle(self._arm_data(arm),
                         FitConfig(n_restarts=self.fit_restarts,
                                   seed=self.fit_seed + len(self.observations)))
        return result.params

    def build_model(self) -> TwoArmModel:
        return TwoArmModel(
            control=FittedGP.build(self._fitted_params(0), self._arm_data(0)),
            treated=FittedGP.build(self._fitted_params(1), self._arm_data(1)),
        )

    def build_pool(self) -> acq.Pool:
        pool = acq.Pool(self.pool_points)
        for i in self.taken:
            pool.mark_taken(i)
        return pool

    def propensity(self) -> PropensityModel:
        if self.propensity_mode == "known":
            return self.known_propensity
        arms = np.array([o.arm for o in self.observations])
        if arms.size == 0 or arms.min() == arms.max():
            rate = float(np.clip(arms.mean() if arms.size else 0.5, 1e-3, 1 - 1e-3))
            return KnownPropensity(lambda X, r=rate: np.full(X.shape[0], r), name="constant")
        X = np.vstack([o.x for o in self.observations])
        d = X.shape[1]
        pairs = tuple((i, j) for i in range(d) for j in range(i + 1, d))
        return fit_logistic(X, arms, interaction_pairs=pairs)


def _recommend(state: AdvisorySession, request: dict) -> dict:
    model = state.build_model()
    warnings = [f"arm {a} has no observations; its prior is used"
                for a in model.prior_fallback_arms()]
    response: dict
    if state.scenario == "s1":
        if "x" not in request:
            raise KeyError("scenario s1 recommendations need the arriving unit's 'x'")
        x = np.asarray(request["x"], dtype=float).reshape(-1)
        if x.shape[0] != state.dim:
            raise ValueError(f"'x' must have {state.dim} coordinates")
        w = np.ones(state.test_points.shape[0])
        response = {"arm": acq.select_scenario1(model, x, TestSet(state.test_points), w)}
    else:
        pool = state.build_pool()
        test = TestSet(state.test_points)
        if state.scenario == "s2a":
            w = np.ones(test.n)
            idx, arm = acq.select_scenario2a(model, pool, test, w)
            response = {"unit_index": idx, "arm": arm}
        elif state.scenario == "s2b":
            idx = acq.select_scenario2b(model, pool, state.propensity(), state.weight, test)
            response = {"unit_index": idx}
        else:  # s3
            ucb = acq.UcbConfig(c=state.ucb_c, t=state.step + 1)
            idx = acq.select_scenario3(model, pool, state.propensity(), ucb)
            response = {"unit_index": idx}
    if warnings:
        response["warnings"] = warnings
    return response


def _observe(state: AdvisorySession, request: dict) -> tuple[AdvisorySession, dict]:
    for key in ("x", "a", "y"):
        if key not in request:
            raise KeyError(f"observe requests need '{key}'")
    obs = Observation(x=request["x"], arm=request["a"], y=request["y"])
    if obs.x.shape[0] != state.dim:
        raise ValueError(f"'x' must have {state.dim} coordinates")

    taken = state.taken
    if state.pool_points is not None:
        index = request.get("unit_index")
        if index is None:
            match = np.flatnonzero(np.all(state.pool_points == obs.x, axis=1))
            index = int(match[0]) if match.size else None
        if index is not None:
            if index in taken:
                raise ValueError(f"pool unit {index} was already observed")
            if not 0 <= index < state.pool_points.shape[0]:
                raise ValueError(f"unit_index {index} outside the pool")
            taken = taken + (int(index),)

    observations = state.observations + (obs,)
    new_state = replace(state, observations=observations, taken=taken, step=state.step + 1)
    # Refit and persist hyperparameters so later recommendations are pure
    # functions of the stored document.
    hyper = {}
    for arm in ARMS:
        data = new_state._arm_data(arm)
        result = fit_mle(data, FitConfig(n_restarts=state.fit_restarts,
                                         seed=state.fit_seed + len(observations)))
        hyper[arm] = result.params
    new_state = replace(new_state, hyperparams=hyper)
    return new_state, {"ok": True, "n_observations": len(observations)}


def apply_request(state: AdvisorySession, request: dict) -> tuple[AdvisorySession, dict]:
    """One protocol turn: returns (possibly new) state and the response object.

    Malformed requests leave the state unchanged and produce an
    ``{"error": ...}`` response instead of raising.
    """
    try:
        if not isinstance(request, dict) or "op" not in request:
            raise KeyError("requests are JSON objects with an 'op' field")
        op = request["op"]
        if op == "recommend":
            return state, _recommend(state, request)
        if op == "observe":
            return _observe(state, request)
        if op == "state":
            return state, {"scenario": state.scenario, "step": state.step,
                           "n_observations": len(state.observations)}
        raise KeyError(f"unknown op {op!r}; expected recommend, observe or state")
    except (KeyError, ValueError, TypeError, PoolExhaustedError) as exc:
        detail = exc.args[0] if exc.args else str(exc)
        return state, {"error": str(detail)}

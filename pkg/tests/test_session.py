import json

import numpy as np
import pytest

from ace.acquisition import Pool, UcbConfig, select_scenario3
from ace.session import AdvisorySession, apply_request
from ace.simulation import true_propensity
from ace.surrogate import WeightSpec


def make_session(scenario="s2b", n_pool=12, n_test=20, seed=0, **kwargs):
    rng = np.random.default_rng(seed)
    defaults = dict(
        scenario=scenario,
        test_points=rng.random((n_test, 2)),
        pool_points=None if scenario == "s1" else rng.random((n_pool, 2)),
        weight=WeightSpec("ate"),
        propensity_mode="known",
        known_propensity=None,
        fit_restarts=3,
        fit_seed=7,
    )
    defaults.update(kwargs)
    if scenario in ("s2b", "s3") and defaults["propensity_mode"] == "known" \
            and defaults["known_propensity"] is None:
        from ace.propensity import KnownPropensity

        defaults["known_propensity"] = KnownPropensity(true_propensity, name="franke_logit")
    return AdvisorySession(**defaults)


def observe_op(x, a, y, **extra):
    return dict({"op": "observe", "x": list(x), "a": a, "y": y}, **extra)


def test_s1_recommends_unseen_arm_with_warning():
    state = make_session("s1")
    # control arm has data, treatment arm is empty
    for i in range(3):
        state, resp = apply_request(state, observe_op([0.1 * i, 0.2], 0, 0.5))
        assert resp == {"ok": True, "n_observations": i + 1}
    _, resp = apply_request(state, {"op": "recommend", "x": [0.15, 0.2]})
    assert resp["arm"] == 1
    assert any("arm 1" in w for w in resp.get("warnings", ()))


def test_s1_recommend_requires_x():
    state = make_session("s1")
    _, resp = apply_request(state, {"op": "recommend"})
    assert "error" in resp


def test_round_trip_preserves_recommendation():
    state = make_session("s2a", seed=3)
    rng = np.random.default_rng(1)
    for i in range(4):
        state, resp = apply_request(
            state, observe_op(rng.random(2), i % 2, float(rng.standard_normal())))
        assert resp.get("ok")

    direct = apply_request(state, {"op": "recommend"})[1]
    reloaded = AdvisorySession.from_dict(json.loads(json.dumps(state.to_dict())))
    assert apply_request(reloaded, {"op": "recommend"})[1] == direct


def test_observe_marks_pool_units_taken():
    state = make_session("s2a", n_pool=5, seed=4)
    x = state.pool_points[2]
    state, resp = apply_request(state, observe_op(x, 0, 0.1))
    assert resp["ok"] and state.taken == (2,)
    # explicit index form
    state, resp = apply_request(state, observe_op([0.9, 0.9], 1, 0.2, unit_index=4))
    assert state.taken == (2, 4)
    _, resp = apply_request(state, observe_op([0.9, 0.9], 1, 0.2, unit_index=4))
    assert "error" in resp


def test_s3_matches_library_selector():
    state = make_session("s3", n_pool=15, seed=5)
    rng = np.random.default_rng(2)
    for i in range(6):
        x = state.pool_points[i]
        state, _ = apply_request(state, observe_op(x, i % 2, float(rng.standard_normal())))
    _, resp = apply_request(state, {"op": "recommend"})

    model = state.build_model()
    pool = Pool(state.pool_points)
    for i in state.taken:
        pool.mark_taken(i)
    expected = select_scenario3(model, pool, state.propensity(),
                                UcbConfig(c=state.ucb_c, t=state.step + 1))
    assert resp["unit_index"] == expected


def test_malformed_requests_leave_state_unchanged():
    state = make_session("s2b", seed=6)
    before = state.to_dict()
    for bad in ({"op": "unknown"}, {"nope": 1}, {"op": "observe", "x": [0.1, 0.2]},
                {"op": "observe", "x": [0.1], "a": 0, "y": 1.0}):
        state2, resp = apply_request(state, bad)
        assert "error" in resp
        assert state2.to_dict() == before


def test_recommend_is_pure():
    state = make_session("s2b", seed=7)
    rng = np.random.default_rng(3)
    for i in range(4):
        state, _ = apply_request(state, observe_op(rng.random(2), i % 2, 0.1 * i))
    before = state.to_dict()
    r1 = apply_request(state, {"op": "recommend"})[1]
    r2 = apply_request(state, {"op": "recommend"})[1]
    assert r1 == r2
    assert state.to_dict() == before


def test_estimated_propensity_session():
    state = make_session("s2b", propensity_mode="estimated", known_propensity=None, seed=8)
    rng = np.random.default_rng(4)
    for i in range(6):
        state, resp = apply_request(state, observe_op(rng.random(2), i % 2, 0.1))
        assert resp.get("ok")
    _, resp = apply_request(state, {"op": "recommend"})
    assert "unit_index" in resp


def test_state_op_reports_progress():
    state = make_session("s2a", seed=9)
    _, resp = apply_request(state, {"op": "state"})
    assert resp == {"scenario": "s2a", "step": 0, "n_observations": 0}


def test_session_validation():
    rng = np.random.default_rng(10)
    with pytest.raises(ValueError):
        AdvisorySession(scenario="s2b", test_points=rng.random((5, 2)),
                        pool_points=rng.random((5, 2)), propensity_mode="known",
                        known_propensity=None)
    with pytest.raises(ValueError):
        AdvisorySession(scenario="s2a", test_points=rng.random((5, 2)), pool_points=None)

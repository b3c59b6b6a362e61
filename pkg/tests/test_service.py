import numpy as np
import pytest
from fastapi.testclient import TestClient

from ace.service.app import app


@pytest.fixture(scope="module")
def client():
    with TestClient(app) as c:
        yield c


def test_health(client):
    resp = client.get("/health")
    assert resp.status_code == 200
    body = resp.json()
    assert body["status"] == "ok" and "version" in body


def test_simulate_small_run(client):
    payload = {"scenario": "s2a", "method": "ace", "n": 12, "n_pool": 30, "n_test": 40,
               "n_init": 3, "reps": 2, "seed": 9, "refit_interval": 4,
               "final_fit_restarts": 2}
    resp = client.post("/simulate", json=payload)
    assert resp.status_code == 200
    body = resp.json()
    assert len(body["rows"]) == 2
    assert body["rows"][0]["seed"] == 9 and body["rows"][1]["seed"] == 10
    assert body["aggregate"]["method"] == "ace"
    assert body["aggregate"]["rmse"] is not None
    assert body["manifest"]["config_hash"]
    assert body["manifest"]["seeds"] == [9, 10]


def test_simulate_rejects_bad_method(client):
    resp = client.post("/simulate", json={"scenario": "s2a", "method": "bogus"})
    assert resp.status_code == 400
    assert "method" in resp.json()["detail"]


def test_truth_endpoint(client):
    resp = client.post("/truth", json={"weight": "atte", "n_samples": 50_000,
                                       "seed": 1, "n_test": 500})
    assert resp.status_code == 200
    body = resp.json()
    assert body["weight"] == "atte"
    assert abs(body["tau_mc"] - body["tau_test"]) < 4 * np.hypot(body["se_mc"],
                                                                 body["se_test"])


def test_truth_rejects_bad_weight(client):
    resp = client.post("/truth", json={"weight": "nope"})
    assert resp.status_code == 400


def test_report_round_trip(client):
    rows = [
        {"seed": s, "scenario": "s2a", "method": m, "estimand": "ate",
         "tau_hat": 0.06 + 0.01 * s * (1 if m == "random" else 0.1),
         "tau_true": 0.06, "bias": None, "cumulative_ite": None}
        for m in ("ace", "random") for s in range(3)
    ]
    resp = client.post("/report", json={"rows": rows})
    assert resp.status_code == 200
    body = resp.json()
    assert "s2a" in body["tables"]
    assert "rmse" in body["tables"]["s2a"]
    assert body["missing"] == ["s2a:alc"]
    assert body["boxplot"] == []


def test_advise_flow(client):
    rng = np.random.default_rng(0)
    init = {
        "scenario": "s2b",
        "weight": "atte",
        "test_points": rng.random((15, 2)).tolist(),
        "pool_points": rng.random((8, 2)).tolist(),
        "propensity_mode": "known",
        "known_propensity": {"kind": "named", "name": "franke_logit"},
        "fit_restarts": 2,
        "fit_seed": 3,
    }
    resp = client.post("/advise/init", json=init)
    assert resp.status_code == 200
    state = resp.json()["state"]

    for i in range(4):
        step = {"state": state,
                "request": {"op": "observe", "x": rng.random(2).tolist(),
                            "a": i % 2, "y": float(rng.standard_normal())}}
        resp = client.post("/advise/step", json=step)
        assert resp.status_code == 200
        body = resp.json()
        assert body["response"]["ok"]
        state = body["state"]

    resp = client.post("/advise/step", json={"state": state, "request": {"op": "recommend"}})
    rec = resp.json()["response"]
    assert 0 <= rec["unit_index"] < 8

    # malformed op: error response, state echoed unchanged
    resp = client.post("/advise/step", json={"state": state, "request": {"op": "zap"}})
    body = resp.json()
    assert "error" in body["response"]
    assert body["state"] == state


def test_advise_init_validation(client):
    resp = client.post("/advise/init", json={"scenario": "s2b",
                                             "test_points": [[0.1, 0.2]],
                                             "pool_points": [[0.3, 0.4]]})
    assert resp.status_code == 400

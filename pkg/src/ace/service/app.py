"""HTTP service exposing simulation, reporting, ground truth, and advisory
sessions over the core library.

Endpoints are stateless: advisory turns round-trip the full session
document, so the client (CLI or any other consumer) owns persistence.
"""

from __future__ import annotations

from fastapi import FastAPI, HTTPException

from .. import __version__
from ..errors import EmptyTargetError, NumericalFailure, PoolExhaustedError
from ..results import build_manifest, replication_row
from ..session import AdvisorySession, apply_request, _propensity_from_dict
from ..simulation import (
    ScenarioConfig,
    WeightSpec,
    aggregate,
    make_test_set,
    monte_carlo_truth,
    run_many,
    plugin_truth,
)
from ..surrogate import TestSet
from . import schemas

app = FastAPI(
    title="ace",
    description="Active learning for causal effect estimation with GP surrogates",
    version=__version__,
)


def _bad_request(exc: Exception) -> HTTPException:
    return HTTPException(status_code=400, detail=str(exc))


@app.get("/health", response_model=schemas.HealthResponse)
def health() -> schemas.HealthResponse:
    return schemas.HealthResponse(status="ok", version=__version__)


def _config_from(req: schemas.SimulateRequest) -> ScenarioConfig:
    return ScenarioConfig(
        scenario=req.scenario,
        method=req.method,
        n=req.n,
        n_pool=req.n_pool,
        n_test=req.n_test,
        n_init=req.n_init,
        weight=WeightSpec(kind=req.weight, alpha=req.alpha),
        noise_sd=req.noise_sd,
        seed=req.seed,
        ucb_c=req.ucb_c,
        refit_interval=req.refit_interval,
        fit_restarts=req.fit_restarts,
        final_fit_restarts=req.final_fit_restarts,
        propensity_mode=req.propensity_mode,
    )


@app.post("/simulate", response_model=schemas.SimulateResponse)
def simulate(req: schemas.SimulateRequest) -> schemas.SimulateResponse:
    try:
        config = _config_from(req)
    except ValueError as exc:
        raise _bad_request(exc)
    try:
        results = run_many(config, reps=req.reps, base_seed=req.seed, n_jobs=req.n_jobs)
    except (NumericalFailure, EmptyTargetError, PoolExhaustedError) as exc:
        raise HTTPException(status_code=500, detail=str(exc))
    agg = aggregate(results)
    agg_row = schemas.AggregateRow(
        scenario=config.scenario, method=config.method, estimand=config.weight.kind,
        n_reps=agg["n_reps"], n_excluded=agg["n_excluded"],
        bias=agg.get("bias"), rmse=agg.get("rmse"),
        bias_x1000=agg.get("bias_x1000"), rmse_x1000=agg.get("rmse_x1000"),
    )
    manifest = build_manifest(config.to_dict(), [r.seed for r in results],
                              agg["n_excluded"], __version__)
    rows = [schemas.ReplicationRow(**replication_row(r)) for r in results]
    return schemas.SimulateResponse(rows=rows, aggregate=agg_row, manifest=manifest)


@app.post("/truth", response_model=schemas.TruthResponse)
def truth(req: schemas.TruthRequest) -> schemas.TruthResponse:
    try:
        spec = WeightSpec(kind=req.weight, alpha=req.alpha)
        tau_mc, se_mc = monte_carlo_truth(spec, n_samples=req.n_samples, seed=req.seed)
        out = schemas.TruthResponse(weight=spec.kind, tau_mc=tau_mc, se_mc=se_mc)
        if req.n_test:
            test = make_test_set(req.n_test, 2, req.test_seed) if req.test_seed is not None \
                else make_test_set(req.n_test)
            out.tau_test, out.se_test = plugin_truth(spec, test)
        return out
    except (ValueError, EmptyTargetError) as exc:
        raise _bad_request(exc)


@app.post("/report", response_model=schemas.ReportResponse)
def report(req: schemas.ReportRequest) -> schemas.ReportResponse:
    from ..results import render_report

    try:
        rendered = render_report([r.model_dump() for r in req.rows])
    except ValueError as exc:
        raise _bad_request(exc)
    return schemas.ReportResponse(
        tables=rendered["tables"],
        boxplot=[schemas.BoxplotRow(**b) for b in rendered["boxplot"]],
        missing=rendered["missing"],
    )


@app.post("/advise/init", response_model=schemas.SessionStateResponse)
def advise_init(req: schemas.SessionInitRequest) -> schemas.SessionStateResponse:
    try:
        TestSet(req.test_points)  # shape validation
        state = AdvisorySession(
            scenario=req.scenario,
            weight=WeightSpec(kind=req.weight, alpha=req.alpha),
            test_points=req.test_points,
            pool_points=req.pool_points,
            propensity_mode=req.propensity_mode,
            known_propensity=_propensity_from_dict(req.known_propensity),
            ucb_c=req.ucb_c,
            fit_restarts=req.fit_restarts,
            fit_seed=req.fit_seed,
        )
    except (ValueError, KeyError) as exc:
        raise _bad_request(exc)
    return schemas.SessionStateResponse(state=state.to_dict())


@app.post("/advise/step", response_model=schemas.AdviseResponse)
def advise_step(req: schemas.AdviseRequest) -> schemas.AdviseResponse:
    try:
        state = AdvisorySession.from_dict(req.state)
    except (ValueError, KeyError, TypeError) as exc:
        raise _bad_request(exc)
    new_state, response = apply_request(state, req.request)
    return schemas.AdviseResponse(state=new_state.to_dict(), response=response)

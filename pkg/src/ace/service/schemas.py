"""Pydantic request/response models for the HTTP service."""

from __future__ import annotations

from typing import Any, Optional

from pydantic import BaseModel, Field


class SimulateRequest(BaseModel):
    scenario: str = "s2a"
    method: str = "ace"
    n: int = 100
    n_pool: int = 500
    n_test: int = 1000
    n_init: int = 5
    weight: str = "ate"
    alpha: Optional[float] = None
    noise_sd: float = 0.05
    seed: int = 0
    ucb_c: float = 0.01
    refit_interval: int = 1
    fit_restarts: int = 2
    final_fit_restarts: int = 10
    propensity_mode: str = "known"
    reps: int = 1
    n_jobs: int = 1


class ReplicationRow(BaseModel):
    seed: int
    scenario: str
    method: str
    estimand: str
    tau_hat: Optional[float] = None
    tau_true: float
    bias: Optional[float] = None
    cumulative_ite: Optional[float] = None


class AggregateRow(BaseModel):
    scenario: str
    method: str
    estimand: str
    n_reps: int
    n_excluded: int
    bias: Optional[float] = None
    rmse: Optional[float] = None
    bias_x1000: Optional[float] = None
    rmse_x1000: Optional[float] = None


class SimulateResponse(BaseModel):
    rows: list[ReplicationRow]
    aggregate: AggregateRow
    manifest: dict


class TruthRequest(BaseModel):
    weight: str = "ate"
    alpha: Optional[float] = None
    n_samples: int = 1_000_000
    seed: int = 0
    n_test: Optional[int] = None
    test_seed: Optional[int] = None


class TruthResponse(BaseModel):
    weight: str
    tau_mc: float
    se_mc: float
    tau_test: Optional[float] = None
    se_test: Optional[float] = None


class ReportRequest(BaseModel):
    rows: list[ReplicationRow]


class BoxplotRow(BaseModel):
    method: str
    n: int
    min: float
    q1: float
    median: float
    q3: float
    max: float


class ReportResponse(BaseModel):
    tables: dict[str, str]
    boxplot: list[BoxplotRow]
    missing: list[str]


class SessionInitRequest(BaseModel):
    scenario: str
    weight: str = "ate"
    alpha: Optional[float] = None
    test_points: list[list[float]]
    pool_points: Optional[list[list[float]]] = None
    propensity_mode: str = "known"
    known_propensity: Optional[dict] = None
    ucb_c: float = 0.01
    fit_restarts: int = 5
    fit_seed: int = 0


class AdviseRequest(BaseModel):
    state: dict = Field(description="Session document as produced by /advise/init")
    request: dict = Field(description="One protocol operation, e.g. {'op': 'recommend'}")


class AdviseResponse(BaseModel):
    state: dict
    response: dict


class SessionStateResponse(BaseModel):
    state: dict


class HealthResponse(BaseModel):
    status: str
    version: str


ErrorDetail = Any

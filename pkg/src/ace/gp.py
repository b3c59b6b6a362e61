"""Gaussian-process regression for a single response surface.

Anisotropic squared-exponential kernel, constant mean, Gaussian noise.
Hyperparameters are fit by multi-start maximum marginal likelihood in
log-space; posteriors are computed through a jittered Cholesky solve.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from scipy import linalg, optimize
from scipy.spatial.distance import cdist

from .errors import NumericalFailure

# Box bounds for MLE, in natural (not log) units.
LENGTHSCALE_BOUNDS = (1e-3, 10.0)
SIGNAL_VARIANCE_BOUNDS = (1e-6, 1e3)
NOISE_VARIANCE_BOUNDS = (1e-8, 1.0)

# Diagonal jitter, relative to the signal variance.  Escalates by 10x on
# Cholesky failure up to the max before giving up.
BASE_JITTER = 1e-10
MAX_JITTER = 1e-4


@dataclass(frozen=True)
class KernelSpec:
    """Anisotropic squared-exponential covariance kernel.

    k(x, x') = signal_variance * exp(-sum_k (x_k - x'_k)^2 / (2 l_k^2))
    """

    signal_variance: float
    lengthscales: np.ndarray
    family: str = "squared_exponential"

    def __post_init__(self):
        object.__setattr__(
            self, "lengthscales", np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        )
        if self.family != "squared_exponential":
            raise ValueError(f"unsupported kernel family: {self.family!r}")
        if not self.signal_variance > 0:
            raise ValueError("signal_variance must be positive")
        if self.lengthscales.ndim != 1 or not np.all(self.lengthscales > 0):
            raise ValueError("lengthscales must be a vector of positive reals")

    @property
    def dim(self) -> int:
        return self.lengthscales.shape[0]


@dataclass(frozen=True)
class GPHyperParams:
    """Kernel plus observation-noise variance and constant prior mean."""

    kernel: KernelSpec
    noise_variance: float = 1e-4
    constant_mean: float = 0.0

    def __post_init__(self):
        if self.noise_variance < 0:
            raise ValueError("noise_variance must be nonnegative")

    def to_dict(self) -> dict:
        return {
            "signal_variance": float(self.kernel.signal_variance),
            "lengthscales": [float(v) for v in self.kernel.lengthscales],
            "noise_variance": float(self.noise_variance),
            "constant_mean": float(self.constant_mean),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GPHyperParams":
        return cls(
            kernel=KernelSpec(d["signal_variance"], np.asarray(d["lengthscales"], dtype=float)),
            noise_variance=float(d["noise_variance"]),
            constant_mean=float(d["constant_mean"]),
        )


@dataclass(frozen=True)
class TrainingSet:
    """Covariate matrix (n x d) with the n observed outputs."""

    inputs: np.ndarray
    outputs: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.inputs, dtype=float)
        y = np.asarray(self.outputs, dtype=float).reshape(-1)
        if X.ndim != 2:
            X = X.reshape(len(y), -1) if len(y) else X.reshape(0, max(X.size, 1))
        if X.shape[0] != y.shape[0]:
            raise ValueError("inputs row count must equal outputs length")
        if X.shape[1] < 1:
            raise ValueError("inputs must have at least one column")
        object.__setattr__(self, "inputs", X)
        object.__setattr__(self, "outputs", y)

    @classmethod
    def empty(cls, dim: int) -> "TrainingSet":
        return cls(np.empty((0, dim)), np.empty(0))

    @property
    def n(self) -> int:
        return self.inputs.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    def with_point(self, x, y: float) -> "TrainingSet":
        x = np.asarray(x, dtype=float).reshape(1, -1)
        return TrainingSet(np.vstack([self.inputs, x]), np.append(self.outputs, y))


@dataclass(frozen=True)
class PosteriorSummary:
    """Posterior mean vector and covariance matrix at the query points."""

    mean: np.ndarray
    covariance: np.ndarray

    @property
    def variance(self) -> np.ndarray:
        return np.clip(np.diag(self.covariance), 0.0, None)


def kernel_matrix(spec: KernelSpec, X, X2) -> np.ndarray:
    """Covariance matrix between the rows of X (n x d) and X2 (m x d)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    X2 = np.atleast_2d(np.asarray(X2, dtype=float))
    if X.shape[1] != spec.dim or X2.shape[1] != spec.dim:
        raise ValueError(
            f"point dimension {X.shape[1]}/{X2.shape[1]} does not match kernel dimension {spec.dim}"
        )
    if X.shape[0] == 0 or X2.shape[0] == 0:
        return np.zeros((X.shape[0], X2.shape[0]))
    sq = cdist(X / spec.lengthscales, X2 / spec.lengthscales, "sqeuclidean")
    return spec.signal_variance * np.exp(-0.5 * sq)


def _chol_with_jitter(K: np.ndarray, signal_variance: float) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of K + jitter*I, escalating jitter on failure."""
    jitter = BASE_JITTER * signal_variance
    max_jitter = MAX_JITTER * signal_variance
    while True:
        try:
            L = linalg.cholesky(K + jitter * np.eye(K.shape[0]), lower=True)
            return L, jitter
        except linalg.LinAlgError:
            jitter *= 10.0
            if jitter > max_jitter:
                raise NumericalFailure(
                    f"Cholesky failed for n={K.shape[0]} system even at jitter={jitter:.1e}"
                ) from None


@dataclass(frozen=True)
class FittedGP:
    """Immutable snapshot of hyperparameters plus factored training data.

    Safe to share across threads for read-only posterior queries; appending
    data or refitting produces a new snapshot.
    """

    params: GPHyperParams
    data: TrainingSet
    chol: np.ndarray | None = field(default=None, repr=False)
    alpha: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def build(cls, params: GPHyperParams, data: TrainingSet) -> "FittedGP":
        if data.n == 0:
            return cls(params, data)
        K = kernel_matrix(params.kernel, data.inputs, data.inputs)
        K[np.diag_indices_from(K)] += params.noise_variance
        L, _ = _chol_with_jitter(K, params.kernel.signal_variance)
        resid = data.outputs - params.constant_mean
        alpha = linalg.cho_solve((L, True), resid)
        return cls(params, data, L, alpha)

    @property
    def n(self) -> int:
        return self.data.n

    def k0(self, Xa, Xb) -> np.ndarray:
        return kernel_matrix(self.params.kernel, Xa, Xb)

    def solve(self, B: np.ndarray) -> np.ndarray:
        return linalg.cho_solve((self.chol, True), B)

    def posterior_mean(self, Xq) -> np.ndarray:
        Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
        m0 = self.params.constant_mean
        if self.n == 0:
            return np.full(Xq.shape[0], m0)
        return m0 + self.k0(Xq, self.data.inputs) @ self.alpha

    def posterior_var(self, Xq) -> np.ndarray:
        """Pointwise posterior variance (diagonal only), clipped at zero."""
        Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
        prior = np.full(Xq.shape[0], self.params.kernel.signal_variance)
        if self.n == 0:
            return prior
        Knq = self.k0(self.data.inputs, Xq)
        V = linalg.solve_triangular(self.chol, Knq, lower=True)
        return np.clip(prior - np.einsum("ij,ij->j", V, V), 0.0, None)

    def posterior_cov(self, Xa, Xb=None) -> np.ndarray:
        """Posterior covariance block between two query sets (Xb defaults to Xa)."""
        Xa = np.atleast_2d(np.asarray(Xa, dtype=float))
        symmetric = Xb is None
        Xb = Xa if symmetric else np.atleast_2d(np.asarray(Xb, dtype=float))
        prior = self.k0(Xa, Xb)
        if self.n == 0:
            return prior
        Va = linalg.solve_triangular(self.chol, self.k0(self.data.inputs, Xa), lower=True)
        Vb = Va if symmetric else linalg.solve_triangular(
            self.chol, self.k0(self.data.inputs, Xb), lower=True
        )
        cov = prior - Va.T @ Vb
        if symmetric:
            cov = 0.5 * (cov + cov.T)
            d = np.diag(cov).copy()
            d[d < 0.0] = 0.0
            np.fill_diagonal(cov, d)
        return cov

    def posterior(self, Xq) -> PosteriorSummary:
        return PosteriorSummary(self.posterior_mean(Xq), self.posterior_cov(Xq))

    def with_point(self, x, y: float) -> "FittedGP":
        """New snapshot conditioned on one more observation, same hyperparameters."""
        return FittedGP.build(self.params, self.data.with_point(x, y))


def posterior_at(params: GPHyperParams, data: TrainingSet, Xq) -> PosteriorSummary:
    """Posterior mean and covariance of the latent mean function at Xq.

    With empty data the prior is returned: constant mean and prior kernel
    covariance.
    """
    Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
    if Xq.shape[0] == 0:
        raise ValueError("query set must be nonempty")
    return FittedGP.build(params, data).posterior(Xq)


def posterior_cross_cov(params: GPHyperParams, data: TrainingSet, Xa, xb) -> np.ndarray:
    """Off-diagonal posterior covariance block between points Xa and a point xb."""
    xb = np.asarray(xb, dtype=float).reshape(1, -1)
    return FittedGP.build(params, data).posterior_cov(Xa, xb).reshape(-1)


def log_marginal_likelihood(params: GPHyperParams, data: TrainingSet) -> float:
    """Gaussian log-density of the outputs under the GP prior.

    The covariance is the kernel matrix plus noise_variance (and the usual
    jitter floor) on the diagonal; the mean is constant_mean at every point.
    """
    if data.n == 0:
        raise ValueError("log marginal likelihood requires nonempty data")
    K = kernel_matrix(params.kernel, data.inputs, data.inputs)
    K[np.diag_indices_from(K)] += params.noise_variance
    L, _ = _chol_with_jitter(K, params.kernel.signal_variance)
    r = data.outputs - params.constant_mean
    alpha = linalg.cho_solve((L, True), r)
    return float(
        -0.5 * r @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * data.n * np.log(2.0 * np.pi)
    )


def default_hyperparams(dim: int, outputs=None) -> GPHyperParams:
    """Fallback hyperparameters used before/without fitting.

    Lengthscale 0.5 per coordinate and unit signal variance (unit-cube,
    O(1)-output scale), small noise, mean set to the sample mean of any
    provided outputs.  Deliberately independent of the output spread: a
    handful of flat readings must not collapse the prior.
    """
    y = np.asarray(outputs, dtype=float).reshape(-1) if outputs is not None else np.empty(0)
    mean = float(np.mean(y)) if y.size else 0.0
    return GPHyperParams(
        kernel=KernelSpec(signal_variance=1.0, lengthscales=np.full(dim, 0.5)),
        noise_variance=1e-4,
        constant_mean=mean,
    )


@dataclass(frozen=True)
class FitConfig:
    """Settings for multi-start MLE.

    noise_bounds narrows the noise-variance box, e.g. to pin the fit near
    zero for deterministic (noise-free) responses so the surface cannot be
    explained away as noise.
    """

    n_restarts: int = 10
    seed: int = 0
    maxiter: int = 100
    warm_start: GPHyperParams | None = None
    noise_bounds: tuple[float, float] | None = None


@dataclass(frozen=True)
class FitResult:
    params: GPHyperParams
    log_likelihood: float
    optimized: bool
    fallback: bool = False
    n_failed_starts: int = 0


def _unpack_theta(theta: np.ndarray, dim: int) -> tuple[np.ndarray, float, float]:
    ell = np.exp(theta[:dim])
    return ell, float(np.exp(theta[dim])), float(np.exp(theta[dim + 1]))


def _profiled_nll_grad(theta: np.ndarray, X: np.ndarray, y: np.ndarray):
    """Negative log marginal likelihood and gradient in log-hyperparameters.

    The constant mean is profiled out in closed form (generalized least
    squares), so theta holds only [log lengthscales, log signal_variance,
    log noise_variance].  By the envelope theorem the profiled gradient
    equals the partial gradient at the profiled mean.
    """
    n, dim = X.shape
    ell, sv, nv = _unpack_theta(theta, dim)
    Xs = X / ell
    sq = cdist(Xs, Xs, "sqeuclidean")
    Kse = sv * np.exp(-0.5 * sq)
    # Escalate jitter exactly like the posterior path: a hard failure cliff
    # here would wall the optimizer out of smooth-lengthscale basins whenever
    # the training set holds near-duplicate points.
    try:
        L, _ = _chol_with_jitter(Kse + nv * np.eye(n), sv)
    except NumericalFailure:
        return 1e25, np.zeros_like(theta)
    ones = np.ones(n)
    Kinv_y = linalg.cho_solve((L, True), y)
    Kinv_1 = linalg.cho_solve((L, True), ones)
    mean = float(ones @ Kinv_y) / float(ones @ Kinv_1)
    r = y - mean
    alpha = Kinv_y - mean * Kinv_1
    nll = 0.5 * r @ alpha + np.sum(np.log(np.diag(L))) + 0.5 * n * np.log(2.0 * np.pi)

    Kinv = linalg.cho_solve((L, True), np.eye(n))
    grad = np.empty(dim + 2)
    W = Kinv - np.outer(alpha, alpha)  # d(nll)/dK, up to the 1/2 factor
    for k in range(dim):
        d2 = (X[:, k, None] - X[None, :, k]) ** 2
        dK = Kse * (d2 / ell[k] ** 2)
        grad[k] = 0.5 * np.sum(W * dK)
    grad[dim] = 0.5 * np.sum(W * Kse)
    grad[dim + 1] = 0.5 * nv * np.trace(W)
    return float(nll), grad


def _theta_bounds(dim: int, noise_bounds=None) -> list[tuple[float, float]]:
    lb, ub = np.log(LENGTHSCALE_BOUNDS[0]), np.log(LENGTHSCALE_BOUNDS[1])
    bounds = [(lb, ub)] * dim
    bounds.append(tuple(np.log(SIGNAL_VARIANCE_BOUNDS)))
    bounds.append(tuple(np.log(noise_bounds or NOISE_VARIANCE_BOUNDS)))
    return bounds


def _params_to_theta(params: GPHyperParams, noise_bounds=None) -> np.ndarray:
    bounds = np.array(_theta_bounds(params.kernel.dim, noise_bounds))
    theta = np.concatenate(
        [
            np.log(params.kernel.lengthscales),
            [np.log(params.kernel.signal_variance)],
            [np.log(max(params.noise_variance, NOISE_VARIANCE_BOUNDS[0]))],
        ]
    )
    return np.clip(theta, bounds[:, 0], bounds[:, 1])


def _anchor_starts(X: np.ndarray, y: np.ndarray, noise_bounds) -> list[np.ndarray]:
    """Deterministic starts at data-scaled lengthscales and output variance.

    The marginal likelihood is sharply multimodal (especially with a small
    or pinned nugget), and gradient paths from badly scaled starts drain
    into a degenerate short-lengthscale basin; these anchors keep at least
    one start inside the smooth basin.
    """
    ranges = np.maximum(X.max(axis=0) - X.min(axis=0), 10 * LENGTHSCALE_BOUNDS[0])
    sv = float(np.clip(np.var(y), 1e-2, SIGNAL_VARIANCE_BOUNDS[1]))
    nv = 1e-4 if noise_bounds is None else noise_bounds[0]
    anchors = []
    for frac in (0.1, 0.3):
        ell = np.clip(frac * ranges, *LENGTHSCALE_BOUNDS)
        params = GPHyperParams(KernelSpec(sv, ell), noise_variance=nv)
        anchors.append(_params_to_theta(params, noise_bounds))
    return anchors


def fit_mle(data: TrainingSet, config: FitConfig | None = None) -> FitResult:
    """Fit hyperparameters by multi-start maximum marginal likelihood.

    Requires at least 3 observations; below that the defaults are returned
    unoptimized.  Starts always include the warm start (if any), the
    defaults, and two data-scaled anchors; random starts fill up to
    n_restarts.  The best point over all starts and optimizer outputs is
    kept, so the result is never worse than any start.  If every start
    fails numerically the defaults are returned with ``fallback=True``.
    """
    config = config or FitConfig()
    dim = data.dim
    y = data.outputs
    defaults = default_hyperparams(dim, y)
    if data.n < 3:
        return FitResult(defaults, float("nan"), optimized=False)

    rng = np.random.default_rng(config.seed)
    bounds = _theta_bounds(dim, config.noise_bounds)
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])

    starts = []
    if config.warm_start is not None:
        starts.append(_params_to_theta(config.warm_start, config.noise_bounds))
    starts.append(_params_to_theta(defaults, config.noise_bounds))
    starts.extend(_anchor_starts(data.inputs, y, config.noise_bounds))
    while len(starts) < config.n_restarts:
        starts.append(lo + (hi - lo) * rng.random(dim + 2))

    X = data.inputs
    best_theta, best_nll = None, np.inf
    n_failed = 0
    for theta0 in starts:
        nll0, _ = _profiled_nll_grad(theta0, X, y)
        if nll0 < best_nll:
            best_theta, best_nll = theta0, nll0
        try:
            res = optimize.minimize(
                _profiled_nll_grad,
                theta0,
                args=(X, y),
                jac=True,
                method="L-BFGS-B",
                bounds=bounds,
                options={"maxiter": config.maxiter},
            )
        except Exception:
            n_failed += 1
            continue
        if np.isfinite(res.fun) and res.fun < best_nll:
            best_theta, best_nll = res.x, float(res.fun)

    if best_theta is None or not np.isfinite(best_nll):
        return FitResult(defaults, float("nan"), optimized=False, fallback=True,
                         n_failed_starts=n_failed)

    ell, sv, nv = _unpack_theta(best_theta, dim)
    # Recover the profiled constant mean at the optimum.
    K = sv * np.exp(-0.5 * cdist(X / ell, X / ell, "sqeuclidean"))
    K[np.diag_indices_from(K)] += nv
    L, _ = _chol_with_jitter(K, sv)
    ones = np.ones(data.n)
    mean = float(ones @ linalg.cho_solve((L, True), y)) / float(
        ones @ linalg.cho_solve((L, True), ones)
    )
    params = GPHyperParams(
        kernel=KernelSpec(signal_variance=sv, lengthscales=ell),
        noise_variance=nv,
        constant_mean=mean,
    )
    return FitResult(params, -best_nll, optimized=True, n_failed_starts=n_failed)

"""Shared generators for randomized test instances."""

import numpy as np

from ace.gp import FittedGP, GPHyperParams, KernelSpec, TrainingSet
from ace.surrogate import TestSet, TwoArmModel


def random_params(rng, dim=2, noise=None):
    ell = np.exp(rng.uniform(np.log(0.2), np.log(1.5), size=dim))
    sv = float(np.exp(rng.uniform(np.log(0.3), np.log(3.0))))
    nv = float(np.exp(rng.uniform(np.log(1e-4), np.log(0.05)))) if noise is None else noise
    return GPHyperParams(
        kernel=KernelSpec(signal_variance=sv, lengthscales=ell),
        noise_variance=nv,
        constant_mean=float(rng.normal(scale=0.5)),
    )


def random_training(rng, n, dim=2):
    return TrainingSet(rng.random((n, dim)), rng.standard_normal(n))


def random_two_arm(rng, n0=6, n1=5, dim=2, noise=None):
    return TwoArmModel(
        control=FittedGP.build(random_params(rng, dim, noise), random_training(rng, n0, dim)),
        treated=FittedGP.build(random_params(rng, dim, noise), random_training(rng, n1, dim)),
    )


def random_test_set(rng, n=15, dim=2):
    return TestSet(rng.random((n, dim)))


def dense_posterior_oracle(params, data, Xq):
    """Posterior by explicit dense inverse, mirroring the textbook equations."""
    from ace.gp import BASE_JITTER, kernel_matrix

    Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
    m0 = params.constant_mean
    if data.n == 0:
        return np.full(Xq.shape[0], m0), kernel_matrix(params.kernel, Xq, Xq)
    K = kernel_matrix(params.kernel, data.inputs, data.inputs)
    K += (params.noise_variance + BASE_JITTER * params.kernel.signal_variance) * np.eye(data.n)
    Kinv = np.linalg.inv(K)
    Kq = kernel_matrix(params.kernel, Xq, data.inputs)
    mean = m0 + Kq @ Kinv @ (data.outputs - m0)
    cov = kernel_matrix(params.kernel, Xq, Xq) - Kq @ Kinv @ Kq.T
    return mean, cov


def fantasy_variance_drop_oracle(gp, test_points, w, x):
    """w' Sigma_n w minus w' Sigma_{n+1} w after a noiseless fantasy at x.

    Built by direct dense conditioning with per-point noise (old points keep
    the fitted noise variance, the fantasy point gets none), independently of
    the library's update path.
    """
    from ace.gp import BASE_JITTER, kernel_matrix

    params = gp.params
    w = np.asarray(w, dtype=float)
    x = np.asarray(x, dtype=float).reshape(1, -1)
    jit = BASE_JITTER * params.kernel.signal_variance

    def wvar(train_X, noise_diag):
        Ktt = kernel_matrix(params.kernel, test_points, test_points)
        if train_X.shape[0] == 0:
            return float(w @ Ktt @ w)
        K = kernel_matrix(params.kernel, train_X, train_X) + np.diag(noise_diag)
        Kq = kernel_matrix(params.kernel, test_points, train_X)
        cov = Ktt - Kq @ np.linalg.inv(K) @ Kq.T
        return float(w @ cov @ w)

    X_n = gp.data.inputs
    noise_n = np.full(X_n.shape[0], params.noise_variance + jit)
    before = wvar(X_n, noise_n)
    X_plus = np.vstack([X_n, x])
    noise_plus = np.append(noise_n, jit)
    after = wvar(X_plus, noise_plus)
    return before - after

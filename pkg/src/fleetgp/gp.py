"""Single-output Gaussian process regression with a unit-variance SE kernel.

Covers the building blocks everything else leans on: the squared-exponential
kernel with per-dimension lengthscales, Gram matrices, posterior statistics via
Cholesky solves, the log marginal likelihood with analytic gradients, and
multi-start evidence maximization for the lengthscales.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import partial
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.optimize as sopt

__all__ = [
    "FactorizationError",
    "GpDataset",
    "PosteriorStats",
    "SeKernelParams",
    "se_kernel",
    "se_gram",
    "gram_matrix",
    "gp_posterior",
    "log_marginal_likelihood",
    "lml_and_gradient",
    "optimize_hyperparameters",
    "chol_with_jitter",
    "JITTER_LEVELS",
]

# Escalation schedule used whenever a Cholesky factorization fails.
JITTER_LEVELS = (0.0, 1e-10, 1e-8, 1e-6)


class FactorizationError(np.linalg.LinAlgError):
    """A covariance matrix stayed indefinite through all jitter levels."""

    def __init__(self, attempted_jitters):
        self.attempted_jitters = tuple(attempted_jitters)
        super().__init__(
            "covariance not positive definite; attempted jitters: "
            + ", ".join(f"{j:g}" for j in self.attempted_jitters)
        )


@dataclass(frozen=True)
class SeKernelParams:
    """Per-dimension lengthscales of the unit-variance SE kernel."""

    lengthscales: np.ndarray

    def __post_init__(self):
        ls = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        if ls.ndim != 1 or ls.size == 0:
            raise ValueError("lengthscales must be a nonempty 1-D array")
        if not np.all(ls > 0):
            raise ValueError("all lengthscales must be positive")
        object.__setattr__(self, "lengthscales", ls)

    @property
    def dim(self) -> int:
        return self.lengthscales.size


@dataclass(frozen=True)
class GpDataset:
    """Training inputs/targets plus observational noise variance."""

    inputs: np.ndarray
    targets: np.ndarray
    noise_variance: float = 1e-8

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        y = np.atleast_1d(np.asarray(self.targets, dtype=float))
        if X.shape[0] != y.shape[0]:
            raise ValueError(
                f"inputs ({X.shape[0]}) and targets ({y.shape[0]}) must have equal length"
            )
        if self.noise_variance < 0:
            raise ValueError("noise_variance must be nonnegative")
        object.__setattr__(self, "inputs", X)
        object.__setattr__(self, "targets", y)

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]


@dataclass(frozen=True)
class PosteriorStats:
    """Posterior mean vector and full covariance over a set of queries."""

    mean: np.ndarray
    covariance: np.ndarray


def se_kernel(x, x2, params: SeKernelParams) -> float:
    """Unit-variance SE kernel exp(-sum_d (x_d - x2_d)^2 / (2 l_d^2))."""
    x = np.asarray(x, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    if x.shape != x2.shape or x.shape != (params.dim,):
        raise ValueError(
            f"dimension mismatch: x {x.shape}, x2 {x2.shape}, lengthscales ({params.dim},)"
        )
    z = (x - x2) / params.lengthscales
    return float(np.exp(-0.5 * np.dot(z, z)))


def se_gram(X, X2, params: SeKernelParams) -> np.ndarray:
    """Vectorized SE Gram matrix between row sets X (N,D) and X2 (M,D)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    X2 = np.atleast_2d(np.asarray(X2, dtype=float))
    if X.shape[1] != params.dim or X2.shape[1] != params.dim:
        raise ValueError("input dimension does not match lengthscales")
    A = X / params.lengthscales
    B = X2 / params.lengthscales
    sq = (
        np.sum(A * A, axis=1)[:, None]
        + np.sum(B * B, axis=1)[None, :]
        - 2.0 * (A @ B.T)
    )
    np.maximum(sq, 0.0, out=sq)
    return np.exp(-0.5 * sq)


def gram_matrix(X, X2, kernel) -> np.ndarray:
    """Gram matrix with entry (i, j) = kernel(X[i], X2[j]).

    `kernel` is either a scalar pairwise callable or SeKernelParams, in which
    case the vectorized SE path is used.
    """
    if isinstance(kernel, SeKernelParams):
        return se_gram(X, X2, kernel)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    X2 = np.atleast_2d(np.asarray(X2, dtype=float))
    out = np.empty((X.shape[0], X2.shape[0]))
    for i, xi in enumerate(X):
        for j, xj in enumerate(X2):
            out[i, j] = kernel(xi, xj)
    return out


def chol_with_jitter(C: np.ndarray, levels: Sequence[float] = JITTER_LEVELS):
    """Lower Cholesky factor of C, escalating diagonal jitter on failure.

    Returns (L, jitter_used). Raises FactorizationError when every level fails.
    """
    n = C.shape[0]
    attempted = []
    for jitter in levels:
        attempted.append(jitter)
        try:
            M = C if jitter == 0.0 else C + jitter * np.eye(n)
            return np.linalg.cholesky(M), jitter
        except np.linalg.LinAlgError:
            continue
    raise FactorizationError(attempted)


def _gram_fn(kernel) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    if isinstance(kernel, SeKernelParams):
        return partial(se_gram, params=kernel)
    if hasattr(kernel, "gram"):
        return kernel.gram
    if callable(kernel):
        return partial(gram_matrix, kernel=kernel)
    raise TypeError(f"unsupported kernel spec: {kernel!r}")


def gp_posterior(queries, data: GpDataset, kernel) -> PosteriorStats:
    """Posterior mean/covariance at `queries` given the training set.

    Zero-mean prior; the train covariance C = K + sigma^2 I is handled through
    a Cholesky factorization (with jitter escalation), never inverted
    explicitly. An empty dataset returns the prior.

    `kernel` is SeKernelParams, a scalar pairwise callable, or any object with
    a batch `gram(X, X2)` method.
    """
    gram = _gram_fn(kernel)
    Q = np.atleast_2d(np.asarray(queries, dtype=float))
    if Q.shape[0] == 0:
        raise ValueError("queries must be nonempty")
    K_qq = np.asarray(gram(Q, Q), dtype=float)
    if len(data) == 0:
        return PosteriorStats(mean=np.zeros(Q.shape[0]), covariance=K_qq)

    K_qt = np.asarray(gram(Q, data.inputs), dtype=float)
    C = np.asarray(gram(data.inputs, data.inputs), dtype=float)
    C[np.diag_indices_from(C)] += data.noise_variance
    L, _ = chol_with_jitter(C)
    mean = K_qt @ sla.cho_solve((L, True), data.targets)
    tmp = sla.cho_solve((L, True), K_qt.T)
    cov = K_qq - K_qt @ tmp
    cov = 0.5 * (cov + cov.T)
    return PosteriorStats(mean=mean, covariance=cov)


def log_marginal_likelihood(data: GpDataset, kernel) -> float:
    """log N(y; 0, K + sigma^2 I) of the training targets."""
    if len(data) == 0:
        raise ValueError("log marginal likelihood requires a nonempty dataset")
    gram = _gram_fn(kernel)
    C = np.asarray(gram(data.inputs, data.inputs), dtype=float)
    C[np.diag_indices_from(C)] += data.noise_variance
    L, _ = chol_with_jitter(C)
    alpha = sla.cho_solve((L, True), data.targets)
    n = len(data)
    return float(
        -0.5 * data.targets @ alpha
        - np.sum(np.log(np.diag(L)))
        - 0.5 * n * np.log(2.0 * np.pi)
    )


def lml_and_gradient(data: GpDataset, params: SeKernelParams):
    """Log marginal likelihood and its gradient w.r.t. log lengthscales.

    d lml / d log l_d = 0.5 * sum((alpha alpha^T - C^-1) * K * sqdist_d / l_d^2)
    """
    if len(data) == 0:
        raise ValueError("log marginal likelihood requires a nonempty dataset")
    X = data.inputs
    K = se_gram(X, X, params)
    C = K.copy()
    C[np.diag_indices_from(C)] += data.noise_variance
    L, _ = chol_with_jitter(C)
    alpha = sla.cho_solve((L, True), data.targets)
    n = len(data)
    lml = float(
        -0.5 * data.targets @ alpha
        - np.sum(np.log(np.diag(L)))
        - 0.5 * n * np.log(2.0 * np.pi)
    )
    Cinv = sla.cho_solve((L, True), np.eye(n))
    A = np.outer(alpha, alpha) - Cinv
    B = A * K
    grad = np.empty(params.dim)
    for d in range(params.dim):
        diff = X[:, d][:, None] - X[:, d][None, :]
        grad[d] = 0.5 * np.sum(B * diff * diff) / params.lengthscales[d] ** 2
    return lml, grad


_FAIL = 1e25


def _neg_lml(z: np.ndarray, data: GpDataset):
    try:
        lml, grad = lml_and_gradient(data, SeKernelParams(np.exp(z)))
    except (FactorizationError, ValueError):
        return _FAIL, np.zeros_like(z)
    if not np.isfinite(lml) or not np.all(np.isfinite(grad)):
        return _FAIL, np.zeros_like(z)
    return -lml, -grad


def optimize_hyperparameters(
    data: GpDataset,
    init: SeKernelParams,
    restarts: int = 5,
    rng: np.random.Generator | None = None,
    maxiter: int = 200,
) -> SeKernelParams:
    """Evidence maximization of the lengthscales.

    Multi-start L-BFGS in log-lengthscale space: the first start is `init`,
    the remaining restarts draw lengthscales log-uniform in [0.1, 2]. The
    result is never worse than `init`; diverged restarts are discarded and an
    error is raised only when every restart fails.
    """
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    if init.dim != data.dim:
        raise ValueError("init dimensionality must match the dataset")
    rng = np.random.default_rng(0) if rng is None else rng

    best_lml = log_marginal_likelihood(data, init)
    best = init
    n_ok = 1 if np.isfinite(best_lml) else 0
    if n_ok == 0:
        best_lml = -np.inf

    starts = [np.log(init.lengthscales)]
    for _ in range(restarts - 1):
        starts.append(rng.uniform(np.log(0.1), np.log(2.0), size=init.dim))

    for z0 in starts:
        try:
            res = sopt.minimize(
                _neg_lml,
                z0,
                args=(data,),
                jac=True,
                method="L-BFGS-B",
                options={"maxiter": maxiter},
            )
        except (FactorizationError, np.linalg.LinAlgError):
            continue
        if not np.all(np.isfinite(res.x)) or res.fun >= _FAIL:
            continue
        n_ok += 1
        if -res.fun > best_lml:
            best_lml = -res.fun
            best = SeKernelParams(np.exp(res.x))
    if n_ok == 0:
        raise FactorizationError(JITTER_LEVELS)
    return best


class FittedGp:
    """SE-kernel GP conditioned once on a dataset, for repeated prediction.

    Precomputes the Cholesky factor and dual coefficients so batched
    mean/variance queries cost O(N^2) per query instead of O(N^3).
    """

    def __init__(self, data: GpDataset, params: SeKernelParams):
        if len(data) > 0 and data.dim != params.dim:
            raise ValueError("dataset and kernel dimensions differ")
        self.data = data
        self.params = params
        if len(data) > 0:
            C = se_gram(data.inputs, data.inputs, params)
            C[np.diag_indices_from(C)] += data.noise_variance
            self._L, self.jitter = chol_with_jitter(C)
            self._alpha = sla.cho_solve((self._L, True), data.targets)
        else:
            self._L = None
            self._alpha = None
            self.jitter = 0.0

    @property
    def prior_variance(self) -> float:
        return 1.0

    def mean_var(self, X):
        """Posterior mean and pointwise variance at rows of X."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self._L is None:
            return np.zeros(X.shape[0]), np.ones(X.shape[0])
        K_qt = se_gram(X, self.data.inputs, self.params)
        mean = K_qt @ self._alpha
        tmp = sla.solve_triangular(self._L, K_qt.T, lower=True)
        var = 1.0 - np.einsum("ij,ij->j", tmp, tmp)
        np.maximum(var, 0.0, out=var)
        return mean, var

    def posterior(self, X) -> PosteriorStats:
        return gp_posterior(X, self.data, self.params)

    def log_marginal_likelihood(self) -> float:
        return log_marginal_likelihood(self.data, self.params)

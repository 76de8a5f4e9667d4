"""Fleet-wide coregionalized kernel over member-annotated transition data.

One member is the target, the rest are sources. Each source communicates with
the target through a shared latent function; distinct sources never covary.
That makes the cross-member amplitude matrix

    G = sum_{s != t} w_s w_s^T + diag(alpha^2),   w_s nonzero only at (t, s),

symmetric PSD by construction, and the pooled covariance block-arrow sparse,
which `fleet_posterior` exploits through the Schur-complement solver.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.optimize as sopt

from . import gp
from .blockarrow import BlockArrowFactor
from .gp import FactorizationError, PosteriorStats, SeKernelParams, chol_with_jitter, se_gram

__all__ = [
    "FleetKernelParams",
    "FleetDataset",
    "build_g_matrix",
    "fleet_kernel",
    "fleet_gram",
    "fleet_posterior",
    "correlation_matrix",
    "fleet_lml_and_gradient",
    "fit_fleet_hyperparameters",
    "FleetGp",
]


@dataclass(frozen=True)
class FleetKernelParams:
    """Shared SE lengthscales plus the weights that induce G.

    `w_target[s]` and `w_self[s]` are the (w_ts, w_ss) pair of source s; the
    entries at the target index are unused and forced to zero. `alphas` holds
    one member-specific amplitude per member.
    """

    se: SeKernelParams
    target_index: int
    w_target: np.ndarray
    w_self: np.ndarray
    alphas: np.ndarray

    def __post_init__(self):
        wt = np.atleast_1d(np.asarray(self.w_target, dtype=float)).copy()
        ws = np.atleast_1d(np.asarray(self.w_self, dtype=float)).copy()
        al = np.atleast_1d(np.asarray(self.alphas, dtype=float))
        m = al.size
        if wt.shape != (m,) or ws.shape != (m,):
            raise ValueError("w_target, w_self and alphas must all have length M")
        if not 0 <= self.target_index < m:
            raise ValueError(f"target_index {self.target_index} out of range for M={m}")
        wt[self.target_index] = 0.0
        ws[self.target_index] = 0.0
        object.__setattr__(self, "w_target", wt)
        object.__setattr__(self, "w_self", ws)
        object.__setattr__(self, "alphas", al)

    @property
    def n_members(self) -> int:
        return self.alphas.size

    @property
    def sources(self) -> np.ndarray:
        return np.array([m for m in range(self.n_members) if m != self.target_index])


@dataclass(frozen=True)
class FleetDataset:
    """Transition samples for one output dimension, annotated by member."""

    inputs: np.ndarray
    targets: np.ndarray
    members: np.ndarray
    n_members: int
    noise_variance: float = 1e-8

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        y = np.atleast_1d(np.asarray(self.targets, dtype=float))
        m = np.atleast_1d(np.asarray(self.members, dtype=int))
        if not (X.shape[0] == y.shape[0] == m.shape[0]):
            raise ValueError("inputs, targets and members must have equal length")
        if m.size and (m.min() < 0 or m.max() >= self.n_members):
            raise ValueError("member indices out of range")
        if self.noise_variance < 0:
            raise ValueError("noise_variance must be nonnegative")
        object.__setattr__(self, "inputs", X)
        object.__setattr__(self, "targets", y)
        object.__setattr__(self, "members", m)

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def dim(self) -> int:
        return self.inputs.shape[1]

    def member_count(self, m: int) -> int:
        return int(np.sum(self.members == m))


def build_g_matrix(params: FleetKernelParams) -> np.ndarray:
    """Cross-member amplitude matrix G = sum_s w_s w_s^T + diag(alpha^2)."""
    m, t = params.n_members, params.target_index
    G = np.diag(params.alphas**2)
    G[t, t] += float(np.sum(params.w_target**2))
    for s in range(m):
        if s == t:
            continue
        G[s, s] += params.w_self[s] ** 2
        G[t, s] += params.w_target[s] * params.w_self[s]
        G[s, t] = G[t, s]
    return G


def fleet_kernel(x, m: int, x2, m2: int, params: FleetKernelParams) -> float:
    """Covariance between member m at x and member m2 at x2."""
    M = params.n_members
    if not (0 <= m < M and 0 <= m2 < M):
        raise ValueError(f"member ids ({m}, {m2}) out of range for M={M}")
    G = build_g_matrix(params)
    return gp.se_kernel(x, x2, params.se) * G[m, m2]


def fleet_gram(X, members, X2, members2, params: FleetKernelParams) -> np.ndarray:
    """Gram matrix of the fleet kernel for annotated input sets."""
    G = build_g_matrix(params)
    K = se_gram(X, X2, params.se)
    members = np.asarray(members, dtype=int)
    members2 = np.asarray(members2, dtype=int)
    return K * G[np.ix_(members, members2)]


def correlation_matrix(G: np.ndarray) -> np.ndarray:
    """corr(G) = diag(G)^-1/2 G diag(G)^-1/2; requires a positive diagonal."""
    G = np.asarray(G, dtype=float)
    d = np.diag(G)
    if np.any(d <= 0):
        raise ValueError("correlation_matrix requires strictly positive diagonal entries")
    scale = 1.0 / np.sqrt(d)
    return G * np.outer(scale, scale)


def _member_order(members: np.ndarray, t: int, n_members: int):
    """Index blocks putting sources (ascending id) first and the target last.

    Returns (source_index_blocks, target_indices); empty sources are dropped.
    """
    src = [np.flatnonzero(members == m) for m in range(n_members) if m != t]
    src = [b for b in src if b.size]
    tgt = np.flatnonzero(members == t)
    return src, tgt


class FleetGp:
    """Target-specific posterior over pooled fleet data.

    Orders the samples source-blocks-first / target-last and factors the
    covariance with the block-arrow Schur-complement solver, so conditioning
    never touches a dense factorization of the full fleet Gram matrix.
    """

    def __init__(self, data: FleetDataset, params: FleetKernelParams):
        if data.n_members != params.n_members:
            raise ValueError("dataset and params disagree on fleet size")
        self.data = data
        self.params = params
        self.G = build_g_matrix(params)
        t = params.target_index

        if len(data) == 0:
            self._factor = None
            self._alpha = None
            return

        src_blocks_idx, tgt_idx = _member_order(data.members, t, data.n_members)
        perm = np.concatenate(src_blocks_idx + [tgt_idx]).astype(int)
        self._perm = perm
        X = data.inputs[perm]
        y = data.targets[perm]
        mem = data.members[perm]
        self._X = X
        self._mem = mem

        sizes = [b.size for b in src_blocks_idx]
        nt = tgt_idx.size
        ns = len(X) - nt

        K = se_gram(X, X, params.se)
        C = K * self.G[np.ix_(mem, mem)]
        C[np.diag_indices_from(C)] += data.noise_variance

        src_blocks, couplings = [], []
        off = 0
        for k in sizes:
            src_blocks.append(C[off : off + k, off : off + k])
            couplings.append(C[off : off + k, ns:])
            off += k
        self._factor = BlockArrowFactor(src_blocks, couplings, C[ns:, ns:])
        self._alpha = self._factor.solve(y)

    @property
    def prior_variance(self) -> float:
        t = self.params.target_index
        return float(self.G[t, t])

    def _cross_gram(self, Q: np.ndarray) -> np.ndarray:
        t = self.params.target_index
        K_qt = se_gram(Q, self._X, self.params.se)
        return K_qt * self.G[t, self._mem][None, :]

    def mean_var(self, X):
        """Posterior mean and pointwise variance of the target function."""
        Q = np.atleast_2d(np.asarray(X, dtype=float))
        gtt = self.prior_variance
        if self._factor is None:
            return np.zeros(Q.shape[0]), np.full(Q.shape[0], gtt)
        K_qf = self._cross_gram(Q)
        mean = K_qf @ self._alpha
        var = gtt - np.einsum("ij,ji->i", K_qf, self._factor.solve(K_qf.T))
        np.maximum(var, 0.0, out=var)
        return mean, var

    def posterior(self, X) -> PosteriorStats:
        Q = np.atleast_2d(np.asarray(X, dtype=float))
        gtt = self.prior_variance
        K_qq = se_gram(Q, Q, self.params.se) * gtt
        if self._factor is None:
            return PosteriorStats(mean=np.zeros(Q.shape[0]), covariance=K_qq)
        K_qf = self._cross_gram(Q)
        mean = K_qf @ self._alpha
        cov = K_qq - K_qf @ self._factor.solve(K_qf.T)
        cov = 0.5 * (cov + cov.T)
        return PosteriorStats(mean=mean, covariance=cov)


def fleet_posterior(queries, data: FleetDataset, params: FleetKernelParams) -> PosteriorStats:
    """Posterior statistics of the target's function at `queries`."""
    return FleetGp(data, params).posterior(queries)


def _pack(params: FleetKernelParams) -> np.ndarray:
    src = params.sources
    return np.concatenate(
        [
            np.log(params.se.lengthscales),
            params.w_target[src],
            params.w_self[src],
            params.alphas,
        ]
    )


def _unpack(theta: np.ndarray, dim: int, n_members: int, t: int) -> FleetKernelParams:
    src = [m for m in range(n_members) if m != t]
    n_src = len(src)
    ls = np.exp(theta[:dim])
    wt = np.zeros(n_members)
    ws = np.zeros(n_members)
    wt[src] = theta[dim : dim + n_src]
    ws[src] = theta[dim + n_src : dim + 2 * n_src]
    al = theta[dim + 2 * n_src :]
    return FleetKernelParams(
        se=SeKernelParams(ls), target_index=t, w_target=wt, w_self=ws, alphas=al
    )


def fleet_lml_and_gradient(data: FleetDataset, params: FleetKernelParams, sqdists=None):
    """Fleet-kernel log marginal likelihood and gradient.

    Gradient order matches `_pack`: log lengthscales, then w_target and w_self
    at source indices (ascending), then alphas. `sqdists` optionally carries
    the per-dimension squared input differences, which are parameter free and
    worth caching across optimizer iterations.
    """
    if len(data) == 0:
        raise ValueError("fleet evidence requires a nonempty dataset")
    X, y, mem = data.inputs, data.targets, data.members
    t = params.target_index
    n = len(data)
    G = build_g_matrix(params)
    K = se_gram(X, X, params.se)
    Gmm = G[np.ix_(mem, mem)]
    C = K * Gmm
    C[np.diag_indices_from(C)] += data.noise_variance
    L, _ = chol_with_jitter(C)
    alpha = sla.cho_solve((L, True), y)
    lml = float(
        -0.5 * y @ alpha - np.sum(np.log(np.diag(L))) - 0.5 * n * np.log(2.0 * np.pi)
    )
    Cinv = sla.cho_solve((L, True), np.eye(n))
    A = np.outer(alpha, alpha) - Cinv

    ls = params.se.lengthscales
    grad_ls = np.empty(ls.size)
    B = A * K * Gmm
    for d in range(ls.size):
        if sqdists is not None:
            sq = sqdists[d]
        else:
            diff = X[:, d][:, None] - X[:, d][None, :]
            sq = diff * diff
        grad_ls[d] = 0.5 * np.sum(B * sq) / ls[d] ** 2

    # Per-member-pair sums T[m,m'] = sum over samples of (A * K); every
    # G-parameter gradient is a linear combination of its entries.
    U = A * K
    onehot = np.zeros((n, params.n_members))
    onehot[np.arange(n), mem] = 1.0
    T = onehot.T @ U @ onehot

    src = params.sources
    wt, ws, al = params.w_target, params.w_self, params.alphas
    grad_wt = np.array([wt[s] * T[t, t] + ws[s] * T[t, s] for s in src])
    grad_ws = np.array([ws[s] * T[s, s] + wt[s] * T[t, s] for s in src])
    grad_al = al * np.diag(T)
    grad = np.concatenate([grad_ls, grad_wt, grad_ws, grad_al])
    return lml, grad


_FAIL = 1e25


def _neg_fleet_lml(theta, data: FleetDataset, t: int, sqdists):
    try:
        params = _unpack(theta, data.dim, data.n_members, t)
        lml, grad = fleet_lml_and_gradient(data, params, sqdists=sqdists)
    except (FactorizationError, ValueError):
        return _FAIL, np.zeros_like(theta)
    if not np.isfinite(lml) or not np.all(np.isfinite(grad)):
        return _FAIL, np.zeros_like(theta)
    return -lml, -grad


def fit_fleet_hyperparameters(
    data: FleetDataset,
    t: int,
    restarts: int = 5,
    rng: np.random.Generator | None = None,
    maxiter: int = 150,
) -> FleetKernelParams:
    """Joint evidence maximization of lengthscales, w pairs and alphas.

    First start: unit lengthscales, all weights and alphas 0.5. Remaining
    restarts resample lengthscales log-uniform in [0.1, 2] and flip weight
    signs at random. Weights are unconstrained; G stays PSD by construction.
    """
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    if data.member_count(t) < 1:
        raise ValueError("target member has no samples")
    rng = np.random.default_rng(0) if rng is None else rng
    m, dim = data.n_members, data.dim
    n_src = m - 1

    sqdists = [
        (data.inputs[:, d][:, None] - data.inputs[:, d][None, :]) ** 2 for d in range(dim)
    ]

    def start_vector(k: int) -> np.ndarray:
        if k == 0:
            ls = np.zeros(dim)
            w = np.full(2 * n_src, 0.5)
            al = np.full(m, 0.5)
        else:
            ls = rng.uniform(np.log(0.1), np.log(2.0), size=dim)
            w = 0.5 * rng.choice([-1.0, 1.0], size=2 * n_src)
            al = 0.5 * rng.choice([-1.0, 1.0], size=m)
        return np.concatenate([ls, w, al])

    best = None
    best_val = -np.inf
    n_ok = 0
    init_theta = start_vector(0)
    val0, _ = _neg_fleet_lml(init_theta, data, t, sqdists)
    if val0 < _FAIL:
        best, best_val, n_ok = init_theta, -val0, 1

    for k in range(restarts):
        try:
            res = sopt.minimize(
                _neg_fleet_lml,
                start_vector(k),
                args=(data, t, sqdists),
                jac=True,
                method="L-BFGS-B",
                options={"maxiter": maxiter},
            )
        except (FactorizationError, np.linalg.LinAlgError):
            continue
        if not np.all(np.isfinite(res.x)) or res.fun >= _FAIL:
            continue
        n_ok += 1
        if -res.fun > best_val:
            best_val = -res.fun
            best = res.x
    if n_ok == 0:
        raise FactorizationError(gp.JITTER_LEVELS)
    return _unpack(best, dim, m, t)

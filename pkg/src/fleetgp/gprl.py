"""Policy iteration over a GP value function with analytic expectations.

Values are computed exactly on a Latin-hypercube set of support states. With a
bell-shaped reward, per-dimension GP transition models and an SE-kernel value
GP, both the expected one-step reward and the expected next-state value of a
Gaussian next-state distribution have closed forms, so policy evaluation
reduces to one linear solve and policy improvement to a one-step lookahead.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg as sla

from .gp import GpDataset, SeKernelParams, chol_with_jitter, optimize_hyperparameters, se_gram

__all__ = [
    "BoxActions",
    "DiscreteActions",
    "RewardSpec",
    "GaussianState",
    "SupportSet",
    "ValueModel",
    "Policy",
    "PolicyIterationResult",
    "latin_hypercube",
    "propagate",
    "reward_density",
    "expected_reward",
    "expected_value_row",
    "policy_evaluation",
    "policy_improvement",
    "policy_iteration",
]

VALUE_GP_NOISE = 0.1
EVALUATION_RESIDUAL_TOL = 1e-8


@dataclass(frozen=True)
class BoxActions:
    """Continuous action box with per-dimension bounds."""

    low: np.ndarray
    high: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.low, dtype=float))
        hi = np.atleast_1d(np.asarray(self.high, dtype=float))
        if lo.shape != hi.shape or np.any(lo >= hi):
            raise ValueError("action box must satisfy low < high per dimension")
        object.__setattr__(self, "low", lo)
        object.__setattr__(self, "high", hi)

    @property
    def dim(self) -> int:
        return self.low.size


@dataclass(frozen=True)
class DiscreteActions:
    """Finite action set; rows are action vectors, index order breaks ties."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.shape[0] == 0:
            raise ValueError("discrete action set must be nonempty")
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class RewardSpec:
    """Bell-shaped reward centered on a goal state.

    `dims` restricts the reward to a subset of state dimensions (e.g. only the
    power output of a turbine row); None means all dimensions count.
    """

    goal: np.ndarray
    width: float
    dims: tuple[int, ...] | None = None

    def __post_init__(self):
        g = np.atleast_1d(np.asarray(self.goal, dtype=float))
        if self.width <= 0:
            raise ValueError("reward width must be positive")
        object.__setattr__(self, "goal", g)

    def active(self):
        return np.arange(self.goal.size) if self.dims is None else np.asarray(self.dims)


@dataclass(frozen=True)
class GaussianState:
    """Diagonal Gaussian over states: mean vector and per-dimension variance."""

    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mean, dtype=float))
        v = np.atleast_1d(np.asarray(self.var, dtype=float))
        if mu.shape != v.shape:
            raise ValueError("mean and var must have the same shape")
        if np.any(v < 0):
            raise ValueError("variances must be nonnegative")
        object.__setattr__(self, "mean", mu)
        object.__setattr__(self, "var", v)


@dataclass(frozen=True)
class SupportSet:
    """Support states and their current value estimates."""

    states: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        s = np.atleast_2d(np.asarray(self.states, dtype=float))
        v = np.atleast_1d(np.asarray(self.values, dtype=float))
        if s.shape[0] != v.shape[0]:
            raise ValueError("states and values must have equal length")
        object.__setattr__(self, "states", s)
        object.__setattr__(self, "values", v)

    def __len__(self) -> int:
        return self.states.shape[0]

    def with_values(self, values) -> "SupportSet":
        return replace(self, values=np.asarray(values, dtype=float))


def latin_hypercube(n: int, bounds, seed=None) -> np.ndarray:
    """n Latin-hypercube samples over per-dimension intervals.

    Each dimension is split into n equal strata holding exactly one point,
    uniformly placed within its stratum. Deterministic under a fixed seed.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    bounds = np.atleast_2d(np.asarray(bounds, dtype=float))
    lo, hi = bounds[:, 0], bounds[:, 1]
    if np.any(lo >= hi):
        raise ValueError("degenerate bounds: need lo < hi per dimension")
    rng = np.random.default_rng(seed)
    d = bounds.shape[0]
    out = np.empty((n, d))
    for j in range(d):
        strata = rng.permutation(n)
        out[:, j] = (strata + rng.random(n)) / n
    return lo + out * (hi - lo)


def propagate(state, action, model) -> GaussianState:
    """One-step predictive distribution of the transition model at (s, a)."""
    x = np.concatenate([np.atleast_1d(state), np.atleast_1d(action)])
    mean, var = model.predict(x[None, :])
    return GaussianState(mean=mean[0], var=var[0])


def _reward_batch(means: np.ndarray, vars_: np.ndarray, reward: RewardSpec) -> np.ndarray:
    """Expected bell reward of diagonal Gaussians, rows of means/vars."""
    idx = reward.active()
    mu = means[:, idx]
    c = vars_[:, idx] + reward.width**2
    quad = np.sum((reward.goal[idx][None, :] - mu) ** 2 / c, axis=1)
    norm = np.prod(2.0 * np.pi * c, axis=1) ** -0.5
    return norm * np.exp(-0.5 * quad)


def expected_reward(g: GaussianState, reward: RewardSpec) -> float:
    """E[R(s')] for s' ~ N(mean, diag(var)): the Gaussian-smoothed bell."""
    return float(_reward_batch(g.mean[None, :], g.var[None, :], reward)[0])


def reward_density(states, reward: RewardSpec) -> np.ndarray:
    """Reward evaluated at deterministic states (zero predictive variance)."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    return _reward_batch(states, np.zeros_like(states), reward)


class ValueModel:
    """SE-kernel GP over the support states, observational noise fixed at 0.1."""

    def __init__(self, states, values, params: SeKernelParams):
        self.states = np.atleast_2d(np.asarray(states, dtype=float))
        self.values = np.atleast_1d(np.asarray(values, dtype=float))
        self.params = params
        C = se_gram(self.states, self.states, params)
        C[np.diag_indices_from(C)] += VALUE_GP_NOISE
        self._L, self.jitter = chol_with_jitter(C)
        self._beta = sla.cho_solve((self._L, True), self.values)

    @classmethod
    def fit(
        cls,
        states,
        values,
        init: SeKernelParams | None = None,
        rng: np.random.Generator | None = None,
        restarts: int = 5,
    ) -> "ValueModel":
        """Fit lengthscales by evidence maximization on (states, values)."""
        states = np.atleast_2d(np.asarray(states, dtype=float))
        if init is None:
            init = SeKernelParams(np.ones(states.shape[1]))
        data = GpDataset(states, values, noise_variance=VALUE_GP_NOISE)
        params = optimize_hyperparameters(data, init, restarts=restarts, rng=rng)
        return cls(states, values, params)

    def refit(self, values, rng=None) -> "ValueModel":
        """Refit on new values, warm-starting from the current lengthscales."""
        return ValueModel.fit(self.states, values, init=self.params, rng=rng, restarts=1)

    def solve_gram(self, B) -> np.ndarray:
        """(K + noise I)^{-1} B."""
        return sla.cho_solve((self._L, True), B)

    def predict_mean(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return se_gram(X, self.states, self.params) @ self._beta

    def predict_std(self, X) -> np.ndarray:
        """Posterior standard deviation of the latent value function."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        K_qt = se_gram(X, self.states, self.params)
        tmp = sla.solve_triangular(self._L, K_qt.T, lower=True)
        var = 1.0 - np.einsum("ij,ij->j", tmp, tmp)
        return np.sqrt(np.maximum(var, 0.0))

    def expectation_rows(self, means, vars_) -> np.ndarray:
        """Gaussian expectations of the value kernel against each support state.

        Row i, column j holds E[k_V(s', s_j)] for s' ~ N(means[i], diag(vars_[i])):

            |I + S L^-1|^{-1/2} exp(-0.5 (mu - s_j)^T (S + L)^{-1} (mu - s_j))

        with L = diag(lengthscale^2) and S the diagonal input covariance.
        """
        means = np.atleast_2d(np.asarray(means, dtype=float))
        vars_ = np.atleast_2d(np.asarray(vars_, dtype=float))
        lam = self.params.lengthscales**2
        det = np.prod(1.0 + vars_ / lam, axis=1) ** -0.5
        quad = np.zeros((means.shape[0], self.states.shape[0]))
        for d in range(self.states.shape[1]):
            diff = means[:, d][:, None] - self.states[:, d][None, :]
            quad += diff * diff / (vars_[:, d] + lam[d])[:, None]
        return det[:, None] * np.exp(-0.5 * quad)

    def expected_values(self, means, vars_) -> np.ndarray:
        """E[V(s')] per row: expectation rows contracted with the dual weights."""
        return self.expectation_rows(means, vars_) @ self._beta


def expected_value_row(g: GaussianState, v: ValueModel):
    """Kernel-expectation row of one Gaussian state and its expected value."""
    row = v.expectation_rows(g.mean[None, :], g.var[None, :])[0]
    return row, float(row @ v._beta)


@dataclass(frozen=True)
class Policy:
    """Greedy one-step lookahead against frozen transition/value/reward models.

    Actions at support states are cached; at any other state the lookahead
    argmax is re-solved online against the same frozen models.
    """

    support_states: np.ndarray
    support_actions: np.ndarray
    model: object
    value_model: ValueModel
    reward: RewardSpec
    gamma: float
    actions: BoxActions | DiscreteActions
    n_starts: int = 16
    refine_top: int = 4

    def __call__(self, state) -> np.ndarray:
        state = np.atleast_1d(np.asarray(state, dtype=float))
        acts, _ = argmax_actions(
            state[None, :],
            self.reward,
            self.model,
            self.value_model,
            self.actions,
            self.gamma,
            n_starts=self.n_starts,
            refine_top=self.refine_top,
        )
        return acts[0]


def _lookahead_objective(states_rep, acts, reward, model, value_model, gamma):
    X = np.hstack([states_rep, acts])
    mu, var = model.predict(X)
    q = _reward_batch(mu, var, reward)
    if gamma > 0.0:
        q = q + gamma * value_model.expected_values(mu, var)
    return q


def argmax_actions(
    states,
    reward,
    model,
    value_model,
    actions,
    gamma,
    n_starts: int = 16,
    refine_top: int = 4,
    pattern_iters: int = 14,
    seed: int = 0,
):
    """Greedy lookahead actions for a batch of states.

    Discrete spaces are enumerated (ties go to the lowest action index).
    Continuous boxes run multi-start local search: `n_starts` deterministic
    seeds, with pattern-search refinement of the most promising starts, all
    evaluated in batches across states.
    """
    states = np.atleast_2d(np.asarray(states, dtype=float))
    S = states.shape[0]

    if isinstance(actions, DiscreteActions):
        K = actions.values.shape[0]
        rep = np.repeat(states, K, axis=0)
        acts = np.tile(actions.values, (S, 1))
        obj = _lookahead_objective(rep, acts, reward, model, value_model, gamma)
        obj = obj.reshape(S, K)
        idx = np.argmax(obj, axis=1)
        return actions.values[idx], obj[np.arange(S), idx]

    lo, hi = actions.low, actions.high
    da = actions.dim
    if da == 1:
        starts = np.linspace(lo[0], hi[0], n_starts)[:, None]
    else:
        starts = latin_hypercube(n_starts, np.stack([lo, hi], axis=1), seed=seed)

    rep = np.repeat(states, n_starts, axis=0)
    acts0 = np.tile(starts, (S, 1))
    obj0 = _lookahead_objective(rep, acts0, reward, model, value_model, gamma)
    obj0 = obj0.reshape(S, n_starts)

    r = min(refine_top, n_starts)
    top = np.argsort(-obj0, axis=1)[:, :r]
    cur_a = starts[top]                       # (S, r, da)
    cur_q = np.take_along_axis(obj0, top, axis=1)

    step = np.broadcast_to((hi - lo) / 8.0, (S, r, da)).copy()
    rep_r = np.repeat(states, r, axis=0)
    for _ in range(pattern_iters):
        # 2*da axis-aligned neighbors per current point, clipped to the box.
        offs = np.concatenate([np.eye(da), -np.eye(da)], axis=0)  # (2da, da)
        cand = cur_a[:, :, None, :] + step[:, :, None, :] * offs[None, None, :, :]
        np.clip(cand, lo, hi, out=cand)
        flat = cand.reshape(S * r * 2 * da, da)
        rep_c = np.repeat(rep_r, 2 * da, axis=0)
        q = _lookahead_objective(rep_c, flat, reward, model, value_model, gamma)
        q = q.reshape(S, r, 2 * da)
        j = np.argmax(q, axis=2)
        q_best = np.take_along_axis(q, j[:, :, None], axis=2)[:, :, 0]
        better = q_best > cur_q
        moved = np.take_along_axis(cand, j[:, :, None, None], axis=2)[:, :, 0, :]
        cur_a = np.where(better[:, :, None], moved, cur_a)
        cur_q = np.where(better, q_best, cur_q)
        step = np.where(better[:, :, None], step, step * 0.5)

    pick = np.argmax(cur_q, axis=1)
    best_a = cur_a[np.arange(S), pick]
    best_q = cur_q[np.arange(S), pick]
    return best_a, best_q


def random_policy_actions(actions, n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform random actions, the initial policy of the iteration loop."""
    if isinstance(actions, DiscreteActions):
        return actions.values[rng.integers(actions.values.shape[0], size=n)]
    return rng.uniform(actions.low, actions.high, size=(n, actions.dim))


def policy_evaluation(
    supp: SupportSet,
    reward: RewardSpec,
    model,
    value_model: ValueModel,
    policy: Policy,
    gamma: float,
) -> np.ndarray:
    """Closed-form support values: solve (I - gamma P) v = r.

    P couples the support values through the Gaussian expectation of the value
    GP's predictive mean under the one-step transition distribution.
    """
    if not 0.0 <= gamma < 1.0:
        raise ValueError("gamma must lie in [0, 1)")
    n = len(supp)
    X = np.hstack([supp.states, policy.support_actions])
    mu, var = model.predict(X)
    r = _reward_batch(mu, var, reward)
    R = value_model.expectation_rows(mu, var)
    P = value_model.solve_gram(R.T).T
    v = sla.solve(np.eye(n) - gamma * P, r)
    residual = float(np.max(np.abs(v - r - gamma * (P @ v))))
    if residual >= EVALUATION_RESIDUAL_TOL:
        raise np.linalg.LinAlgError(
            f"policy evaluation residual {residual:.3e} exceeds {EVALUATION_RESIDUAL_TOL:g}"
        )
    return v


def policy_improvement(
    supp: SupportSet,
    reward: RewardSpec,
    model,
    value_model: ValueModel,
    actions,
    gamma: float,
    n_starts: int = 16,
    refine_top: int = 4,
) -> Policy:
    """Greedy policy against the current value model at every support state."""
    acts, _ = argmax_actions(
        supp.states,
        reward,
        model,
        value_model,
        actions,
        gamma,
        n_starts=n_starts,
        refine_top=refine_top,
    )
    return Policy(
        support_states=supp.states,
        support_actions=acts,
        model=model,
        value_model=value_model,
        reward=reward,
        gamma=gamma,
        actions=actions,
        n_starts=n_starts,
        refine_top=refine_top,
    )


@dataclass(frozen=True)
class PolicyIterationResult:
    policy: Policy
    value_model: ValueModel
    support: SupportSet
    converged: bool
    iterations: int


def policy_iteration(
    supp_states,
    reward: RewardSpec,
    model,
    gamma: float,
    actions,
    tol: float = 1e-3,
    max_iters: int = 50,
    rng: np.random.Generator | None = None,
    value_restarts: int = 5,
    n_starts: int = 16,
    refine_top: int = 4,
) -> PolicyIterationResult:
    """Alternate closed-form evaluation, value-GP refit and greedy improvement.

    Starts from a random policy and reward-density values; stops when the
    support values change by less than tol * (1 + ||v||_inf) in max norm or
    after max_iters sweeps, whichever comes first.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    states = np.atleast_2d(np.asarray(supp_states, dtype=float))
    n = states.shape[0]

    v = reward_density(states, reward)
    supp = SupportSet(states, v)
    value_model = ValueModel.fit(states, v, rng=rng, restarts=value_restarts)
    policy = Policy(
        support_states=states,
        support_actions=random_policy_actions(actions, n, rng),
        model=model,
        value_model=value_model,
        reward=reward,
        gamma=gamma,
        actions=actions,
        n_starts=n_starts,
        refine_top=refine_top,
    )

    converged = False
    iterations = 0
    for it in range(max_iters):
        iterations = it + 1
        try:
            v_new = policy_evaluation(supp, reward, model, value_model, policy, gamma)
        except np.linalg.LinAlgError as exc:
            raise np.linalg.LinAlgError(f"iteration {iterations}: {exc}") from exc
        delta = float(np.max(np.abs(v_new - supp.values)))
        converged = delta < tol * (1.0 + float(np.max(np.abs(v_new))))
        value_model = value_model.refit(v_new, rng=rng)
        policy = policy_improvement(
            supp.with_values(v_new),
            reward,
            model,
            value_model,
            actions,
            gamma,
            n_starts=n_starts,
            refine_top=refine_top,
        )
        supp = supp.with_values(v_new)
        if converged:
            break

    return PolicyIterationResult(
        policy=policy,
        value_model=value_model,
        support=supp,
        converged=converged,
        iterations=iterations,
    )

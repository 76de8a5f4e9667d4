"""Deterministic fleet environments with member-specific physics.

Three families: continuous mountain car (per-member power), cart-pole
(per-member pole mass) and a two-turbine wake-steering row (per-member
generator efficiency) driven by an analytic wake surrogate. Environments step
in raw physical units; GPs only ever see states and actions affinely mapped to
[-1, 1] per dimension, so every environment also carries its normalization.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .gprl import BoxActions, DiscreteActions, RewardSpec

__all__ = [
    "Transition",
    "FleetEnvironment",
    "MountainCar",
    "CartPole",
    "WindFarmRow",
    "WAKE_SURROGATE_DEFAULTS",
    "make_environment",
    "sample_batch",
    "transitions_to_arrays",
]


@dataclass(frozen=True)
class Transition:
    """One observed (state, action, next_state) triple in raw units."""

    state: np.ndarray
    action: np.ndarray
    next_state: np.ndarray


class FleetEnvironment:
    """Shared plumbing: bounds, normalization, reward spec, start/goal."""

    name: str = "base"
    horizon: int = 200
    reward_dims: tuple[int, ...] | None = None

    def __init__(self, state_low, state_high, actions, start_state, goal_state, sigma_r):
        self.state_low = np.asarray(state_low, dtype=float)
        self.state_high = np.asarray(state_high, dtype=float)
        self.actions = actions
        self.start_state = np.asarray(start_state, dtype=float)
        self.goal_state = np.asarray(goal_state, dtype=float)
        self.sigma_r = float(sigma_r)
        self._mid = 0.5 * (self.state_low + self.state_high)
        self._half = 0.5 * (self.state_high - self.state_low)
        if isinstance(actions, BoxActions):
            self._a_mid = 0.5 * (actions.low + actions.high)
            self._a_half = 0.5 * (actions.high - actions.low)
        else:
            lo = actions.values.min(axis=0)
            hi = actions.values.max(axis=0)
            half = 0.5 * (hi - lo)
            half[half == 0.0] = 1.0
            self._a_mid = 0.5 * (lo + hi)
            self._a_half = half

    # -- dynamics ----------------------------------------------------------
    def step(self, state, action) -> np.ndarray:
        raise NotImplementedError

    def clip_state(self, state) -> np.ndarray:
        return np.clip(state, self.state_low, self.state_high)

    @property
    def state_dim(self) -> int:
        return self.state_low.size

    @property
    def action_dim(self) -> int:
        return self.actions.dim

    # -- normalization -----------------------------------------------------
    def normalize_states(self, states) -> np.ndarray:
        return (np.asarray(states, dtype=float) - self._mid) / self._half

    def denormalize_states(self, states) -> np.ndarray:
        return np.asarray(states, dtype=float) * self._half + self._mid

    def normalize_actions(self, actions) -> np.ndarray:
        return (np.asarray(actions, dtype=float) - self._a_mid) / self._a_half

    def denormalize_actions(self, actions) -> np.ndarray:
        return np.asarray(actions, dtype=float) * self._a_half + self._a_mid

    def normalized_actions(self):
        """The action space as seen by the GPs and the policy."""
        if isinstance(self.actions, BoxActions):
            d = self.actions.dim
            return BoxActions(low=-np.ones(d), high=np.ones(d))
        return DiscreteActions(self.normalize_actions(self.actions.values))

    def normalized_state_bounds(self) -> np.ndarray:
        d = self.state_dim
        return np.stack([-np.ones(d), np.ones(d)], axis=1)

    def reward_spec(self) -> RewardSpec:
        return RewardSpec(
            goal=self.normalize_states(self.goal_state),
            width=self.sigma_r,
            dims=self.reward_dims,
        )


class MountainCar(FleetEnvironment):
    """Continuous mountain car; the member-specific parameter is the power."""

    name = "mountain_car"
    GRAVITY = 0.0025

    def __init__(self, power: float = 1.5e-3):
        if power <= 0:
            raise ValueError("power must be positive")
        self.power = float(power)
        super().__init__(
            state_low=[-1.1, -1.0],
            state_high=[0.55, 1.0],
            actions=BoxActions(low=[-1.0], high=[1.0]),
            start_state=[-0.5, 0.0],
            goal_state=[0.45, 0.0],
            sigma_r=0.05,
        )

    def step(self, state, action) -> np.ndarray:
        state = self.clip_state(np.asarray(state, dtype=float))
        p, v = float(state[0]), float(state[1])
        a = float(np.clip(np.atleast_1d(action)[0], -1.0, 1.0))
        v_new = v + a * self.power - self.GRAVITY * math.cos(3.0 * p)
        v_new = min(max(v_new, self.state_low[1]), self.state_high[1])
        p_new = min(max(p + v_new, self.state_low[0]), self.state_high[0])
        return np.array([p_new, v_new])


class CartPole(FleetEnvironment):
    """Cart-pole balancing; the member-specific parameter is the pole mass.

    Classic rigid-body equations with cart mass 1.0, pole half-length 0.5 and
    gravity 9.8, integrated by explicit Euler at 0.02 s.
    """

    name = "cart_pole"
    GRAVITY = 9.8
    CART_MASS = 1.0
    HALF_LENGTH = 0.5
    DT = 0.02

    def __init__(self, pole_mass: float = 0.1):
        if pole_mass <= 0:
            raise ValueError("pole_mass must be positive")
        self.pole_mass = float(pole_mass)
        super().__init__(
            state_low=[-4.8, -0.42, -2.0, -2.0],
            state_high=[4.8, 0.42, 2.0, 2.0],
            actions=BoxActions(low=[-10.0], high=[10.0]),
            start_state=[0.0, 0.0, 0.0, 0.0],
            goal_state=[0.0, 0.0, 0.0, 0.0],
            sigma_r=0.2,
        )

    def step(self, state, action) -> np.ndarray:
        state = self.clip_state(np.asarray(state, dtype=float))
        x, theta, x_dot, theta_dot = (float(s) for s in state)
        force = float(np.clip(np.atleast_1d(action)[0], self.actions.low[0], self.actions.high[0]))
        m_p, m_c, half = self.pole_mass, self.CART_MASS, self.HALF_LENGTH
        total = m_p + m_c
        sin_t, cos_t = math.sin(theta), math.cos(theta)

        temp = (force + m_p * half * theta_dot**2 * sin_t) / total
        theta_acc = (self.GRAVITY * sin_t - cos_t * temp) / (
            half * (4.0 / 3.0 - m_p * cos_t**2 / total)
        )
        x_acc = temp - m_p * half * theta_acc * cos_t / total

        x_new = x + self.DT * x_dot
        theta_new = theta + self.DT * theta_dot
        x_dot_new = x_dot + self.DT * x_acc
        theta_dot_new = theta_dot + self.DT * theta_acc
        return self.clip_state(np.array([x_new, theta_new, x_dot_new, theta_dot_new]))


# Frozen wake-surrogate coefficients: powers in MW at 6 m/s inflow, turbines
# 100 m apart. Calibrated once so the eff=1 row spans roughly [0.55, 1.05] MW
# with the joint yaw optimum near 1.05 MW, above the aligned baseline.
WAKE_SURROGATE_DEFAULTS = {
    "turbine_scale": 0.5825,   # MW per turbine at full alignment, free stream
    "base_power": 0.15,        # MW, yaw-independent balance of the row
    "deficit": 0.3,            # fractional wind deficit at wake center
    "deflection": 1.2,         # lateral wake offset per sin(yaw1), per meter downstream
    "wake_width": 30.0,        # Gaussian wake width (m) at the downstream rotor
    "downstream_distance": 100.0,  # m between the two turbines
}


class WindFarmRow(FleetEnvironment):
    """Two-turbine row with yaw-based wake steering.

    The upstream turbine loses cos^3(yaw1) of its own power but deflects its
    wake sideways, restoring inflow to the downstream turbine, so the row's
    optimum sits at a nonzero upstream yaw. The member-specific parameter is
    the generator efficiency, which scales the upstream term.
    """

    name = "wind_farm"
    reward_dims = (2,)

    def __init__(self, efficiency: float = 1.0, surrogate: dict | None = None):
        if efficiency <= 0:
            raise ValueError("efficiency must be positive")
        self.efficiency = float(efficiency)
        coef = dict(WAKE_SURROGATE_DEFAULTS)
        if surrogate:
            coef.update(surrogate)
        self.coef = coef
        super().__init__(
            state_low=[-45.0, -45.0, 0.5],
            state_high=[45.0, 45.0, 1.05],
            actions=DiscreteActions(
                values=[[d1, d2] for d1 in (-1.0, 0.0, 1.0) for d2 in (-1.0, 0.0, 1.0)]
            ),
            start_state=[0.0, 0.0, 0.0],
            goal_state=[0.0, 0.0, 1.07],
            sigma_r=0.05,
        )
        self.start_state = np.array([0.0, 0.0, self.total_power(0.0, 0.0)])

    def total_power(self, yaw1: float, yaw2: float) -> float:
        """Row power (MW) from the analytic wake surrogate, clipped to bounds."""
        c = self.coef
        r1 = math.radians(yaw1)
        r2 = math.radians(yaw2)
        offset = c["deflection"] * math.sin(r1) * c["downstream_distance"]
        deficit = c["deficit"] * math.exp(-0.5 * (offset / c["wake_width"]) ** 2)
        p_up = self.efficiency * c["turbine_scale"] * math.cos(r1) ** 3
        p_down = c["turbine_scale"] * (1.0 - deficit) ** 3 * math.cos(r2) ** 3
        power = c["base_power"] + p_up + p_down
        return float(min(max(power, self.state_low[2]), self.state_high[2]))

    def step(self, state, action) -> np.ndarray:
        y1 = float(np.clip(state[0] + action[0], self.state_low[0], self.state_high[0]))
        y2 = float(np.clip(state[1] + action[1], self.state_low[1], self.state_high[1]))
        return np.array([y1, y2, self.total_power(y1, y2)])

    def aligned_power(self) -> float:
        return self.total_power(0.0, 0.0)

    def grid_optimum(self, resolution: float = 1.0):
        """Exhaustive search over the yaw grid; returns (power, (yaw1, yaw2))."""
        grid = np.arange(self.state_low[0], self.state_high[0] + 1e-9, resolution)
        best = (-np.inf, (0.0, 0.0))
        for y1 in grid:
            for y2 in grid:
                p = self.total_power(float(y1), float(y2))
                if p > best[0]:
                    best = (p, (float(y1), float(y2)))
        return best


_ENVIRONMENTS = {
    "mountain_car": MountainCar,
    "cart_pole": CartPole,
    "wind_farm": WindFarmRow,
}


def make_environment(env_id: str, member_params: dict | None = None, options: dict | None = None):
    """Instantiate an environment for one fleet member."""
    if env_id not in _ENVIRONMENTS:
        raise ValueError(f"unknown environment '{env_id}' (choose from {sorted(_ENVIRONMENTS)})")
    kwargs = dict(member_params or {})
    if env_id == "wind_farm" and options:
        kwargs["surrogate"] = options.get("surrogate")
    return _ENVIRONMENTS[env_id](**kwargs)


def sample_batch(env: FleetEnvironment, n: int, seed=None) -> list[Transition]:
    """n transitions with states/actions drawn uniformly from the bounds."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    states = rng.uniform(env.state_low, env.state_high, size=(n, env.state_dim))
    if isinstance(env.actions, DiscreteActions):
        acts = env.actions.values[rng.integers(env.actions.values.shape[0], size=n)]
    else:
        acts = rng.uniform(env.actions.low, env.actions.high, size=(n, env.action_dim))
    out = []
    for s, a in zip(states, acts):
        out.append(Transition(state=s, action=a, next_state=env.step(s, a)))
    return out


def transitions_to_arrays(transitions):
    """Stack a transition list into (states, actions, next_states) arrays."""
    S = np.array([t.state for t in transitions])
    A = np.array([t.action for t in transitions])
    S2 = np.array([t.next_state for t in transitions])
    return S, A, S2

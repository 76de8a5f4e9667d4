"""Multi-output transition models: one GP per next-state dimension.

Two variants share one dataset. The single/joint baselines use plain SE-kernel
GPs over whatever samples they are given; the fleet variant uses the
coregionalized kernel over member-annotated data and predicts as the target.
"""

from __future__ import annotations

import numpy as np

from .fleet import (
    FleetDataset,
    FleetGp,
    FleetKernelParams,
    build_g_matrix,
    correlation_matrix,
    fit_fleet_hyperparameters,
)
from .gp import FittedGp, GpDataset, SeKernelParams, optimize_hyperparameters

__all__ = [
    "SeTransitionModel",
    "FleetTransitionModel",
    "fit_single_transition_model",
    "fit_fleet_transition_model",
    "degenerate_fleet_params",
]


class _MultiOutputModel:
    """Stacks per-dimension GP predictions into (Q, E) mean/variance arrays."""

    def __init__(self, gps):
        if not gps:
            raise ValueError("need at least one per-dimension GP")
        self.gps = list(gps)

    @property
    def output_dim(self) -> int:
        return len(self.gps)

    def predict(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        means = np.empty((X.shape[0], self.output_dim))
        vars_ = np.empty_like(means)
        for e, gp in enumerate(self.gps):
            means[:, e], vars_[:, e] = gp.mean_var(X)
        return means, vars_


class SeTransitionModel(_MultiOutputModel):
    """Per-dimension unit-variance SE GPs sharing one input set."""

    @property
    def kernel_params(self) -> list[SeKernelParams]:
        return [gp.params for gp in self.gps]


class FleetTransitionModel(_MultiOutputModel):
    """Per-dimension coregionalized fleet GPs predicting as the target."""

    @property
    def fleet_params(self) -> list[FleetKernelParams]:
        return [gp.params for gp in self.gps]

    def correlation(self, dim: int) -> np.ndarray:
        """Learned member correlation matrix for one output dimension."""
        return correlation_matrix(build_g_matrix(self.gps[dim].params))

    def correlations(self) -> list[np.ndarray]:
        return [self.correlation(e) for e in range(self.output_dim)]


def fit_single_transition_model(
    X,
    Y,
    noise_variance: float = 1e-8,
    rng: np.random.Generator | None = None,
    restarts: int = 5,
) -> SeTransitionModel:
    """Fit one SE GP per output column of Y by evidence maximization."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    rng = np.random.default_rng(0) if rng is None else rng
    init = SeKernelParams(np.ones(X.shape[1]))
    gps = []
    for e in range(Y.shape[1]):
        data = GpDataset(X, Y[:, e], noise_variance=noise_variance)
        params = optimize_hyperparameters(data, init, restarts=restarts, rng=rng)
        gps.append(FittedGp(data, params))
    return SeTransitionModel(gps)


def fit_fleet_transition_model(
    X,
    Y,
    members,
    n_members: int,
    target_index: int,
    noise_variance: float = 1e-8,
    rng: np.random.Generator | None = None,
    restarts: int = 5,
    forced_params: list[FleetKernelParams] | None = None,
) -> FleetTransitionModel:
    """Fit one coregionalized fleet GP per output column of Y.

    `forced_params` skips hyperparameter fitting and conditions directly on
    the given per-dimension parameters (the degeneracy diagnostics).
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    rng = np.random.default_rng(0) if rng is None else rng
    gps = []
    for e in range(Y.shape[1]):
        data = FleetDataset(
            inputs=X,
            targets=Y[:, e],
            members=members,
            n_members=n_members,
            noise_variance=noise_variance,
        )
        if forced_params is not None:
            params = forced_params[e]
        else:
            params = fit_fleet_hyperparameters(data, target_index, restarts=restarts, rng=rng)
        gps.append(FleetGp(data, params))
    return FleetTransitionModel(gps)


def degenerate_fleet_params(
    se: SeKernelParams, target_index: int, n_members: int, mode: str
) -> FleetKernelParams:
    """Fleet parameters that collapse onto a baseline model.

    mode="single": zero cross-weights and unit alphas decouple the members, so
    target predictions use only target samples with the plain SE kernel.
    mode="joint": unit weights and zero alphas make the target perfectly
    correlated with the (single) source, reproducing the pooled SE model;
    exact only for two members since distinct sources never covary.
    """
    if mode == "single":
        return FleetKernelParams(
            se=se,
            target_index=target_index,
            w_target=np.zeros(n_members),
            w_self=np.zeros(n_members),
            alphas=np.ones(n_members),
        )
    if mode == "joint":
        if n_members != 2:
            raise ValueError("joint degeneracy requires exactly 2 members")
        return FleetKernelParams(
            se=se,
            target_index=target_index,
            w_target=np.ones(n_members),
            w_self=np.ones(n_members),
            alphas=np.zeros(n_members),
        )
    raise ValueError(f"unknown degenerate mode '{mode}'")

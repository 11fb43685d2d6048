"""Quadratic tracking costs, obstacle constraints and the per-sample cost S."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import ControlBounds, NoiseCovariance, State, wrap_angle
from .dynamics import Obstacle, obstacle_track

CONTROL_PENALTY_MODES = ("nominal_weighted", "quadratic_R")


@dataclass(frozen=True)
class QuadraticWeights:
    Q_diag: tuple[float, float, float] = (10.0, 10.0, 0.0)
    H_diag: tuple[float, float, float] = (50.0, 50.0, 50.0)

    def __post_init__(self):
        for name in ("Q_diag", "H_diag"):
            vals = tuple(float(v) for v in getattr(self, name))
            if len(vals) != 3 or min(vals) < 0:
                raise ValueError(f"{name} must be 3 non-negative weights, got {vals}")
            object.__setattr__(self, name, vals)


@dataclass(frozen=True)
class CostConfig:
    """Goal, weights and penalty settings for the trajectory cost.

    ``R_diag`` is only read when ``control_penalty_mode == "quadratic_R"``.
    """

    goal: State
    weights: QuadraticWeights = field(default_factory=QuadraticWeights)
    collision_penalty: float = 1e4
    control_penalty_mode: str = "nominal_weighted"
    R_diag: tuple[float, float] = (0.0, 0.0)
    control_scale: float = 1.0

    def __post_init__(self):
        if self.control_scale < 0:
            raise ValueError(f"control_scale must be >= 0, got {self.control_scale}")
        if self.collision_penalty < 0:
            raise ValueError(f"collision_penalty must be >= 0, got {self.collision_penalty}")
        if self.control_penalty_mode not in CONTROL_PENALTY_MODES:
            raise ValueError(f"control_penalty_mode must be one of {CONTROL_PENALTY_MODES}")
        object.__setattr__(self, "R_diag", tuple(float(v) for v in self.R_diag))


@dataclass(frozen=True)
class ConstraintSet:
    """Obstacles, control bounds, and the footprint margin added to every radius."""

    obstacles: tuple[Obstacle, ...]
    bounds: ControlBounds
    inflation: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        if self.inflation < 0:
            raise ValueError(f"inflation must be >= 0, got {self.inflation}")

    def track(self, t0: float, dt: float, n_steps: int) -> tuple[np.ndarray, np.ndarray]:
        """Obstacle centers over a horizon and their inflated radii."""
        centers, radii = obstacle_track(self.obstacles, t0, dt, n_steps)
        return centers, radii + self.inflation


def _state_error(x: np.ndarray, goal: np.ndarray) -> np.ndarray:
    err = x - goal
    err[..., 2] = wrap_angle(err[..., 2])
    return err


def quadratic_cost_array(x: np.ndarray, goal: np.ndarray, diag) -> np.ndarray:
    err = _state_error(np.asarray(x, dtype=np.float64), goal)
    return np.einsum("...i,i,...i->...", err, np.asarray(diag), err)


def running_cost(x: State, cfg: CostConfig) -> float:
    return float(quadratic_cost_array(x.as_array(), cfg.goal.as_array(), cfg.weights.Q_diag))


def terminal_cost(x: State, cfg: CostConfig) -> float:
    return float(quadratic_cost_array(x.as_array(), cfg.goal.as_array(), cfg.weights.H_diag))


def obstacle_constraint(x: State, obs: Obstacle, inflation: float = 0.0) -> float:
    """``r_eff^2 - |p - c|^2``: positive inside the inflated disc."""
    r = obs.radius + inflation
    dx = x.x - obs.center[0]
    dy = x.y - obs.center[1]
    return r * r - dx * dx - dy * dy


def obstacle_constraint_gradient(x: State, obs: Obstacle, inflation: float = 0.0) -> np.ndarray:
    return np.array([-2.0 * (x.x - obs.center[0]), -2.0 * (x.y - obs.center[1]), 0.0])


def constraint_values(states: np.ndarray, centers: np.ndarray, radii: np.ndarray) -> np.ndarray:
    """Constraint values for every state against every obstacle.

    ``states`` is ``(..., T, 3)``, ``centers`` is ``(T, n_obs, 2)``; the result
    is ``(..., T, n_obs)``.
    """
    d = states[..., :, None, :2] - centers
    return radii**2 - np.sum(d * d, axis=-1)


def max_violation(states: np.ndarray, centers: np.ndarray, radii: np.ndarray) -> np.ndarray:
    """Largest constraint value along each trajectory (``-inf`` with no obstacles)."""
    if radii.size == 0:
        return np.full(states.shape[:-2], -np.inf)
    return constraint_values(states, centers, radii).max(axis=(-2, -1))


def soft_collision_penalty(traj: np.ndarray, constraints: ConstraintSet, cfg: CostConfig,
                           t0: float = 0.0, dt: float = 0.0) -> float:
    """``cfg.collision_penalty`` if any state lies inside an inflated obstacle."""
    traj = np.asarray(traj, dtype=np.float64)
    if not constraints.obstacles:
        return 0.0
    centers, radii = constraints.track(t0, dt, traj.shape[0] - 1)
    return cfg.collision_penalty if max_violation(traj, centers, radii) > 0 else 0.0


def control_penalty_array(nominal: np.ndarray, perturbed: np.ndarray, cfg: CostConfig,
                          cov: NoiseCovariance) -> np.ndarray:
    """Per-sample control term summed over the horizon.

    Default form is ``sum_t u_t^T Sigma^-1 v_t``; the alternative is
    ``sum_t 0.5 v_t^T R v_t``. ``cfg.control_scale`` multiplies the default form.
    """
    if cfg.control_penalty_mode == "quadratic_R":
        return 0.5 * np.einsum("...ti,i,...ti->...", perturbed, np.asarray(cfg.R_diag), perturbed)
    return cfg.control_scale * np.einsum("ti,i,...ti->...", nominal, cov.inverse, perturbed)


def batch_costs(states: np.ndarray, nominal: np.ndarray, perturbed: np.ndarray, cfg: CostConfig,
                cov: NoiseCovariance, soft_constraints: bool = False,
                centers: np.ndarray | None = None, radii: np.ndarray | None = None) -> np.ndarray:
    """Cost S of each sample: running + control terms over t < N, terminal at N.

    ``states`` is ``(K, N + 1, 3)`` and ``perturbed`` is ``(K, N, 2)``. With
    ``soft_constraints`` the collision penalty is added to samples whose
    rollout enters an inflated obstacle (``centers``/``radii`` required).
    """
    goal = cfg.goal.as_array()
    s = quadratic_cost_array(states[..., :-1, :], goal, cfg.weights.Q_diag).sum(axis=-1)
    s = s + control_penalty_array(nominal, perturbed, cfg, cov)
    s = s + quadratic_cost_array(states[..., -1, :], goal, cfg.weights.H_diag)
    if soft_constraints and radii is not None and radii.size:
        s = s + np.where(max_violation(states, centers, radii) > 0, cfg.collision_penalty, 0.0)
    return s


def trajectory_cost(traj, nominal, perturbed, cfg: CostConfig, cov: NoiseCovariance,
                    soft_constraints: bool = False, constraints: ConstraintSet | None = None,
                    t0: float = 0.0, dt: float = 0.0) -> float:
    traj = np.asarray(traj, dtype=np.float64)
    nominal = np.asarray(nominal, dtype=np.float64)
    perturbed = np.asarray(perturbed, dtype=np.float64)
    if traj.shape[0] != nominal.shape[0] + 1 or nominal.shape != perturbed.shape:
        raise ValueError("trajectory must have N + 1 states for N nominal and perturbed controls")
    centers = radii = None
    if soft_constraints and constraints is not None and constraints.obstacles:
        centers, radii = constraints.track(t0, dt, nominal.shape[0])
    return float(batch_costs(traj, nominal, perturbed, cfg, cov, soft_constraints, centers, radii))

"""Sampling, cost-weighted averaging and the standard (soft-constraint) MPPI step."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import ControlBounds, Control, NoiseCovariance, RngStream, as_control_sequence, sample_gaussian_noise
from .costs import ConstraintSet, CostConfig, batch_costs, max_violation
from .dynamics import DynamicsModel


@dataclass(frozen=True)
class MppiParams:
    K: int = 300
    N: int = 30
    dt: float = 0.03
    lam: float = 0.01
    cov: NoiseCovariance = field(default_factory=lambda: NoiseCovariance(0.1, 1.0))
    bounds: ControlBounds = field(
        default_factory=lambda: ControlBounds(Control(0.0, -3.0), Control(0.5, 3.0)))
    clamp_samples: bool = False

    def __post_init__(self):
        if self.K < 1 or self.N < 1:
            raise ValueError(f"K and N must be >= 1, got K={self.K}, N={self.N}")
        if not (self.dt > 0 and self.lam > 0):
            raise ValueError(f"dt and lam must be > 0, got dt={self.dt}, lam={self.lam}")


@dataclass
class SampleBatch:
    """K sampled control sequences with their rollouts.

    ``perturbations[k] == perturbed[k] - nominal`` always holds; ``costs`` is
    ``None`` until a cost pass fills it.
    """

    nominal: np.ndarray          # (N, 2)
    perturbations: np.ndarray    # (K, N, 2)
    perturbed: np.ndarray        # (K, N, 2)
    rollouts: np.ndarray         # (K, N + 1, 3)
    costs: np.ndarray | None = None

    @property
    def K(self) -> int:
        return self.perturbed.shape[0]


@dataclass
class StepDiagnostics:
    min_cost: float
    mean_cost: float
    ess: float
    selected_cost: float = float("nan")
    selected_rollout: np.ndarray | None = None
    selected_max_violation: float = float("-inf")
    selected_feasible: bool = True
    n_clusters: int = 0
    noise_count: int = 0
    cluster_sizes: list[int] = field(default_factory=list)
    cluster_costs: list[float] = field(default_factory=list)
    labels: np.ndarray | None = None
    projection_converged: int = 0
    projection_mean_sweeps: float = 0.0
    fallback: str | None = None
    batch: SampleBatch | None = None


def generate_batch(nominal, params: MppiParams, model: DynamicsModel, x0, seed: int) -> SampleBatch:
    """Perturb ``nominal`` with K independent noise streams and roll each out.

    Sample ``k`` always draws from ``RngStream(seed, k)``.
    """
    nominal = as_control_sequence(nominal, params.N)
    noise = np.stack([sample_gaussian_noise(RngStream(seed, k), params.cov, params.N)
                      for k in range(params.K)])
    perturbed = nominal + noise
    if params.clamp_samples:
        perturbed = params.bounds.clip(perturbed)
    noise = perturbed - nominal
    x0 = np.asarray(x0.as_array() if hasattr(x0, "as_array") else x0, dtype=np.float64)
    return SampleBatch(nominal, noise, perturbed, model.rollout_array(x0, perturbed))


def softmax_weights(costs, lam: float) -> np.ndarray:
    """Normalized ``exp(-(S - min S) / lam)`` weights."""
    costs = np.asarray(costs, dtype=np.float64)
    if costs.size == 0:
        raise ValueError("need at least one cost")
    if not np.all(np.isfinite(costs)):
        raise ValueError("non-finite sample cost in batch")
    w = np.exp(-(costs - costs.min()) / lam)
    return w / w.sum()


def weighted_update(nominal, perturbations, weights) -> np.ndarray:
    return np.asarray(nominal) + np.tensordot(np.asarray(weights), np.asarray(perturbations), axes=1)


def shift_sequence(seq) -> np.ndarray:
    """Drop the first control and repeat the last one (receding-horizon warm start)."""
    seq = np.asarray(seq)
    return np.concatenate([seq[1:], seq[-1:]], axis=0)


def effective_sample_size(weights) -> float:
    return float(1.0 / np.sum(np.square(weights)))


def evaluate_sequence(seq, x0, model: DynamicsModel, cost_cfg: CostConfig, cov: NoiseCovariance,
                      centers, radii, nominal=None, soft_constraints: bool = False):
    """Roll out one sequence; return ``(states, cost, max_violation)``."""
    seq = np.asarray(seq, dtype=np.float64)
    states = model.rollout_array(np.asarray(x0, dtype=np.float64), seq)
    nominal = seq if nominal is None else nominal
    cost = float(batch_costs(states[None], nominal, seq[None], cost_cfg, cov, soft_constraints,
                             centers, radii)[0])
    return states, cost, float(max_violation(states, centers, radii))


class MPPIController:
    """Standard MPPI with the collision penalty as a soft constraint.

    Every call to :meth:`step` is a pure function of its arguments.
    """

    soft_constraints = True

    def __init__(self, params: MppiParams, model: DynamicsModel, cost_cfg: CostConfig,
                 constraints: ConstraintSet, feasibility_tol: float = 1e-3):
        self.params = params
        self.model = model
        self.cost_cfg = cost_cfg
        self.constraints = constraints
        self.feasibility_tol = feasibility_tol

    def _track(self, t0: float):
        return self.constraints.track(t0, self.params.dt, self.params.N)

    def step(self, x0, nominal, seed: int, t0: float = 0.0, keep_batch: bool = False):
        p = self.params
        centers, radii = self._track(t0)
        batch = generate_batch(nominal, p, self.model, x0, seed)
        batch.costs = batch_costs(batch.rollouts, batch.nominal, batch.perturbed, self.cost_cfg,
                                  p.cov, True, centers, radii)
        w = softmax_weights(batch.costs, p.lam)
        u_star = weighted_update(batch.nominal, batch.perturbations, w)
        x0_arr = np.asarray(x0.as_array() if hasattr(x0, "as_array") else x0, dtype=np.float64)
        states, cost, viol = evaluate_sequence(u_star, x0_arr, self.model, self.cost_cfg, p.cov,
                                               centers, radii, nominal=batch.nominal)
        diag = StepDiagnostics(
            min_cost=float(batch.costs.min()), mean_cost=float(batch.costs.mean()),
            ess=effective_sample_size(w), selected_cost=cost, selected_rollout=states,
            selected_max_violation=viol, selected_feasible=viol <= self.feasibility_tol + 1e-6,
            batch=batch if keep_batch else None,
        )
        return u_star, diag


def standard_mppi_step(x0, nominal, params: MppiParams, model: DynamicsModel, cost_cfg: CostConfig,
                       constraints: ConstraintSet, seed: int, t0: float = 0.0):
    return MPPIController(params, model, cost_cfg, constraints).step(x0, nominal, seed, t0)

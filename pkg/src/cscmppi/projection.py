"""Primal-dual projection of sampled control sequences onto the feasible set.

Each sample is pushed out of the (inflated) obstacles and back inside the
control bounds by alternating projected dual ascent on the bound multipliers
with gradient descent on the controls. The sweep over the horizon is
sequential: after ``v_t`` moves, ``x_{t+1}`` is re-rolled before step
``t + 1`` is visited.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .core import ControlBounds, as_control_sequence
from .costs import ConstraintSet, constraint_values
from .dynamics import DiffDriveModel, DynamicsModel, _wrap
from .mppi import SampleBatch

MODES = ("primal_dual", "clamp_only")


@dataclass(frozen=True)
class ProjectionParams:
    """Step sizes, stopping rule and mode of the projection.

    ``step_decay`` shrinks the primal step geometrically from sweep to sweep
    (and grows the dual steps by the inverse factor, so bound corrections keep
    their speed). Without it the iterates chatter around the obstacle boundary
    with an amplitude proportional to ``alpha`` and the KKT test never passes.
    Set it to 1.0 for constant steps.
    """

    alpha: tuple[float, float] = (4.0, 1.0)
    beta_lower: tuple[float, float] = (0.05, 1.0)
    beta_upper: tuple[float, float] = (0.05, 1.0)
    max_iters: int = 50
    step_decay: float = 0.9
    tol_violation: float = 1e-3
    tol_stationarity: float = 1e-3
    mode: str = "primal_dual"

    def __post_init__(self):
        for name in ("alpha", "beta_lower", "beta_upper"):
            vals = tuple(float(v) for v in getattr(self, name))
            if len(vals) != 2 or min(vals) <= 0:
                raise ValueError(f"{name} must be two positive step sizes, got {vals}")
            object.__setattr__(self, name, vals)
        if not 0 < self.step_decay <= 1:
            raise ValueError(f"step_decay must be in (0, 1], got {self.step_decay}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if not (self.tol_violation > 0 and self.tol_stationarity > 0):
            raise ValueError("tolerances must be > 0")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")


@dataclass
class DualState:
    """Bound multipliers, one row per horizon step."""

    mu_lower: np.ndarray
    mu_upper: np.ndarray

    @classmethod
    def zeros(cls, n: int, m: int = 2) -> DualState:
        return cls(np.zeros((n, m)), np.zeros((n, m)))


@dataclass
class ProjectionReport:
    mode: str
    converged: bool
    sweeps: int
    max_violation: float
    max_bound_violation: float = 0.0


@dataclass
class BatchProjectionReport:
    mode: str
    converged: np.ndarray = field(repr=False)
    sweeps: np.ndarray = field(repr=False)
    max_violation: np.ndarray = field(repr=False)

    @property
    def converged_fraction(self) -> float:
        return float(np.mean(self.converged))


def constraint_gradient_wrt_control(x_t, v_t, centers_next, radii, model: DynamicsModel) -> np.ndarray:
    """Sum over violated obstacles at ``x_{t+1}`` of ``dg/dx_{t+1} @ df/dv_t``."""
    x_next = model.step_array(x_t, v_t)
    jac = model.jacobian_control_array(x_t, v_t)
    grad = np.zeros(2)
    for c, r in zip(centers_next, radii):
        d = x_next[:2] - c
        if r * r - d @ d > 0:
            grad += np.array([-2.0 * d[0], -2.0 * d[1], 0.0]) @ jac
    return grad


def lagrangian_gradient(x_t, v_t, mu_lower_t, mu_upper_t, constraints: ConstraintSet,
                        model: DynamicsModel, t_next: float = 0.0) -> np.ndarray:
    """Gradient of the per-step Lagrangian with respect to ``v_t``.

    Obstacles are evaluated at ``t_next``, the time of ``x_{t+1}``.
    """
    centers, radii = constraints.track(t_next, 0.0, 0)
    x_t = np.asarray(x_t.as_array() if hasattr(x_t, "as_array") else x_t, dtype=np.float64)
    v_t = np.asarray(v_t.as_array() if hasattr(v_t, "as_array") else v_t, dtype=np.float64)
    g = constraint_gradient_wrt_control(x_t, v_t, centers[0], radii, model)
    return g - np.asarray(mu_lower_t) + np.asarray(mu_upper_t)


def dual_update(mu_lower_t, mu_upper_t, v_t, bounds: ControlBounds, beta1, beta2):
    """Projected ascent step; returns ``(mu_lower_new, mu_upper_new)``, both >= 0."""
    v_t = np.asarray(v_t, dtype=np.float64)
    lo = np.maximum(0.0, np.asarray(mu_lower_t) + np.asarray(beta1) * (bounds.lower_array - v_t))
    hi = np.maximum(0.0, np.asarray(mu_upper_t) + np.asarray(beta2) * (v_t - bounds.upper_array))
    return lo, hi


def primal_update(v_t, grad, alpha) -> np.ndarray:
    return np.asarray(v_t, dtype=np.float64) - np.asarray(alpha) * np.asarray(grad)


def _stationarity_residual(x_t, v_t, centers_next, radii, mu_lo_t, mu_hi_t, tol_v, model) -> float:
    """Distance from zero to the Lagrangian subdifferential at step ``t``.

    ``max(0, g)`` is not differentiable at ``g = 0``; obstacles whose value lies
    in ``[-tol_v, tol_v]`` contribute any fraction ``theta`` in ``[0, 1]`` of
    their gradient. Obstacles are handled one at a time, which can only
    overestimate the residual.
    """
    x_next = model.step_array(x_t, v_t)
    jac = model.jacobian_control_array(x_t, v_t)
    r = np.asarray(mu_hi_t) - np.asarray(mu_lo_t)
    band = []
    for c, rad in zip(centers_next, radii):
        d = x_next[:2] - c
        g = rad * rad - d @ d
        grad = np.array([-2.0 * d[0], -2.0 * d[1], 0.0]) @ jac
        if g > tol_v:
            r = r + grad
        elif g >= -tol_v:
            band.append(grad)
    for b in band:
        bb = b @ b
        if bb > 0:
            r = r + min(max(-(r @ b) / bb, 0.0), 1.0) * b
    return float(np.max(np.abs(r)))


def _kkt_satisfied(states, v_seq, mu_lo, mu_hi, centers, radii, lower, upper, params, model) -> bool:
    tol_v, tol_s = params.tol_violation, params.tol_stationarity
    if radii.size and constraint_values(states[1:], centers[1:], radii).max() > tol_v:
        return False
    if np.any(v_seq < lower - tol_v) or np.any(v_seq > upper + tol_v):
        return False
    if np.any(np.abs(mu_lo * (lower - v_seq)) > tol_s) or np.any(np.abs(mu_hi * (v_seq - upper)) > tol_s):
        return False
    for t in range(v_seq.shape[0]):
        res = _stationarity_residual(states[t], v_seq[t], centers[t + 1], radii, mu_lo[t], mu_hi[t],
                                     tol_v, model)
        if res > tol_s:
            return False
    return True


def project_sample(x0, v_seq, constraints: ConstraintSet, model: DynamicsModel,
                   params: ProjectionParams, t0: float = 0.0):
    """Project one control sequence; returns ``(sequence, ProjectionReport)``.

    Works with any :class:`DynamicsModel`. Non-convergence is reported, not
    raised.
    """
    v_seq = as_control_sequence(v_seq).copy()
    x0 = np.asarray(x0.as_array() if hasattr(x0, "as_array") else x0, dtype=np.float64)
    n = v_seq.shape[0]
    lower, upper = constraints.bounds.lower_array, constraints.bounds.upper_array
    centers, radii = constraints.track(t0, model.dt, n)

    if params.mode == "clamp_only":
        v_seq = np.clip(v_seq, lower, upper)
        states = model.rollout_array(x0, v_seq)
        viol = _max_g(states, centers, radii)
        return v_seq, ProjectionReport("clamp_only", viol <= params.tol_violation, 0, viol)

    mu_lo, mu_hi = np.zeros_like(v_seq), np.zeros_like(v_seq)
    states = model.rollout_array(x0, v_seq)
    converged = False
    sweeps = 0
    for sweeps in range(1, params.max_iters + 1):
        if _kkt_satisfied(states, v_seq, mu_lo, mu_hi, centers, radii, lower, upper, params, model):
            converged = True
            break
        scale = params.step_decay ** (sweeps - 1)
        alpha = np.array(params.alpha) * scale
        beta1 = np.array(params.beta_lower) / scale
        beta2 = np.array(params.beta_upper) / scale
        for t in range(n):
            mu_lo[t], mu_hi[t] = dual_update(mu_lo[t], mu_hi[t], v_seq[t], constraints.bounds,
                                             beta1, beta2)
            g = constraint_gradient_wrt_control(states[t], v_seq[t], centers[t + 1], radii, model)
            v_seq[t] = primal_update(v_seq[t], g - mu_lo[t] + mu_hi[t], alpha)
            states[t + 1] = model.step_array(states[t], v_seq[t])
    else:
        converged = _kkt_satisfied(states, v_seq, mu_lo, mu_hi, centers, radii, lower, upper,
                                   params, model)
    bound_viol = float(max(np.max(lower - v_seq), np.max(v_seq - upper), 0.0))
    return v_seq, ProjectionReport("primal_dual", converged, sweeps, _max_g(states, centers, radii),
                                   bound_viol)


def _max_g(states, centers, radii) -> float:
    if radii.size == 0:
        return float("-inf")
    return float(constraint_values(states, centers, radii).max())


def project_batch(batch: SampleBatch, x0, constraints: ConstraintSet, model: DynamicsModel,
                  params: ProjectionParams, t0: float = 0.0):
    """Project every sample of ``batch``; returns ``(new_batch, BatchProjectionReport)``.

    Perturbations are recomputed against the batch nominal and rollouts are
    regenerated. Costs are cleared.
    """
    x0 = np.asarray(x0.as_array() if hasattr(x0, "as_array") else x0, dtype=np.float64)
    n = batch.perturbed.shape[1]
    lower, upper = constraints.bounds.lower_array, constraints.bounds.upper_array
    centers, radii = constraints.track(t0, model.dt, n)

    if params.mode == "clamp_only":
        v = np.clip(batch.perturbed, lower, upper)
        states = model.rollout_array(x0, v)
        viol = _batch_max_g(states, centers, radii)
        report = BatchProjectionReport("clamp_only", viol <= params.tol_violation,
                                       np.zeros(batch.K, dtype=np.int64), viol)
    elif isinstance(model, DiffDriveModel):
        v, states, conv, sweeps, viol = _project_batch_diff_drive(
            x0, np.ascontiguousarray(batch.perturbed), np.ascontiguousarray(centers), radii,
            lower, upper, np.array(params.alpha), np.array(params.beta_lower),
            np.array(params.beta_upper), params.max_iters, params.step_decay, params.tol_violation,
            params.tol_stationarity, model.dt)
        report = BatchProjectionReport("primal_dual", conv, sweeps, viol)
    else:
        results = [project_sample(x0, s, constraints, model, params, t0) for s in batch.perturbed]
        v = np.stack([r[0] for r in results])
        states = model.rollout_array(x0, v)
        report = BatchProjectionReport(
            "primal_dual", np.array([r[1].converged for r in results]),
            np.array([r[1].sweeps for r in results]), np.array([r[1].max_violation for r in results]))
    new = SampleBatch(batch.nominal, v - batch.nominal, v, states)
    return new, report


def _batch_max_g(states, centers, radii) -> np.ndarray:
    if radii.size == 0:
        return np.full(states.shape[0], -np.inf)
    return constraint_values(states, centers, radii).max(axis=(-2, -1))


# ---------------------------------------------------------------------------
# compiled path for the differential-drive model; mirrors project_sample


@numba.njit(cache=True)
def _step_dd(x, y, th, v, w, dt):
    return x + v * math.cos(th) * dt, y + v * math.sin(th) * dt, _wrap(th + w * dt)


@numba.njit(cache=True)
def _obstacle_grad_dd(x, y, th, v, w, centers_next, radii, dt):
    nx, ny, _ = _step_dd(x, y, th, v, w, dt)
    gv = 0.0
    for j in range(radii.shape[0]):
        dx = nx - centers_next[j, 0]
        dy = ny - centers_next[j, 1]
        if radii[j] * radii[j] - dx * dx - dy * dy > 0.0:
            gv += -2.0 * dx * math.cos(th) * dt - 2.0 * dy * math.sin(th) * dt
    # theta does not enter g, so the angular-rate component is always zero
    return gv, 0.0


@numba.njit(cache=True)
def _max_g_dd(states, centers, radii):
    best = -np.inf
    for t in range(states.shape[0]):
        for j in range(radii.shape[0]):
            dx = states[t, 0] - centers[t, j, 0]
            dy = states[t, 1] - centers[t, j, 1]
            g = radii[j] * radii[j] - dx * dx - dy * dy
            if g > best:
                best = g
    return best


@numba.njit(cache=True)
def _kkt_dd(states, v, mu_lo, mu_hi, centers, radii, lower, upper, tol_v, tol_s, dt):
    n = v.shape[0]
    for t in range(n):
        for j in range(radii.shape[0]):
            dx = states[t + 1, 0] - centers[t + 1, j, 0]
            dy = states[t + 1, 1] - centers[t + 1, j, 1]
            if radii[j] * radii[j] - dx * dx - dy * dy > tol_v:
                return False
        for i in range(2):
            if v[t, i] < lower[i] - tol_v or v[t, i] > upper[i] + tol_v:
                return False
            if abs(mu_lo[t, i] * (lower[i] - v[t, i])) > tol_s:
                return False
            if abs(mu_hi[t, i] * (v[t, i] - upper[i])) > tol_s:
                return False
        # subdifferential stationarity, see _stationarity_residual
        th = states[t, 2]
        nx = states[t, 0] + v[t, 0] * math.cos(th) * dt
        ny = states[t, 1] + v[t, 0] * math.sin(th) * dt
        rv = mu_hi[t, 0] - mu_lo[t, 0]
        rw = mu_hi[t, 1] - mu_lo[t, 1]
        for j in range(radii.shape[0]):
            dx = nx - centers[t + 1, j, 0]
            dy = ny - centers[t + 1, j, 1]
            if radii[j] * radii[j] - dx * dx - dy * dy < -tol_v:
                continue
            # g > tol_v already rejected above, so this obstacle is in the band
            b = -2.0 * dx * math.cos(th) * dt - 2.0 * dy * math.sin(th) * dt
            if b != 0.0:
                rv += min(max(-rv / b, 0.0), 1.0) * b
        if abs(rv) > tol_s or abs(rw) > tol_s:
            return False
    return True


@numba.njit(cache=True)
def _project_batch_diff_drive(x0, perturbed, centers, radii, lower, upper, alpha, beta_lo, beta_hi,
                              max_iters, decay, tol_v, tol_s, dt):
    k_count, n, _ = perturbed.shape
    v_out = perturbed.copy()
    states_out = np.empty((k_count, n + 1, 3))
    converged = np.zeros(k_count, dtype=np.bool_)
    sweeps_out = np.zeros(k_count, dtype=np.int64)
    viol_out = np.empty(k_count)
    for k in range(k_count):
        v = v_out[k]
        states = states_out[k]
        mu_lo = np.zeros((n, 2))
        mu_hi = np.zeros((n, 2))
        states[0, 0] = x0[0]
        states[0, 1] = x0[1]
        states[0, 2] = x0[2]
        for t in range(n):
            states[t + 1, 0], states[t + 1, 1], states[t + 1, 2] = _step_dd(
                states[t, 0], states[t, 1], states[t, 2], v[t, 0], v[t, 1], dt)
        ok = False
        sweep = 0
        for sweep in range(1, max_iters + 1):
            if _kkt_dd(states, v, mu_lo, mu_hi, centers, radii, lower, upper, tol_v, tol_s, dt):
                ok = True
                break
            scale = decay ** (sweep - 1)
            for t in range(n):
                for i in range(2):
                    mu_lo[t, i] = max(0.0, mu_lo[t, i] + beta_lo[i] / scale * (lower[i] - v[t, i]))
                    mu_hi[t, i] = max(0.0, mu_hi[t, i] + beta_hi[i] / scale * (v[t, i] - upper[i]))
                gv, gw = _obstacle_grad_dd(states[t, 0], states[t, 1], states[t, 2], v[t, 0],
                                           v[t, 1], centers[t + 1], radii, dt)
                v[t, 0] -= scale * alpha[0] * (gv - mu_lo[t, 0] + mu_hi[t, 0])
                v[t, 1] -= scale * alpha[1] * (gw - mu_lo[t, 1] + mu_hi[t, 1])
                states[t + 1, 0], states[t + 1, 1], states[t + 1, 2] = _step_dd(
                    states[t, 0], states[t, 1], states[t, 2], v[t, 0], v[t, 1], dt)
        if not ok:
            ok = _kkt_dd(states, v, mu_lo, mu_hi, centers, radii, lower, upper, tol_v, tol_s, dt)
        converged[k] = ok
        sweeps_out[k] = sweep
        viol_out[k] = _max_g_dd(states, centers, radii)
    return v_out, states_out, converged, sweeps_out, viol_out

"""Robot and obstacle motion models."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numba
import numpy as np

from .core import Control, State, as_control_sequence, wrap_angle


class DynamicsModel:
    """One-step transition ``x_next = f(x, u)`` with its control Jacobian.

    Subclasses work on single states (shape ``(3,)``) and on stacked batches
    (shape ``(..., 3)``) alike.
    """

    dt: float

    def step_array(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def jacobian_control_array(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def step(self, x: State, u: Control) -> State:
        return State.from_array(self.step_array(x.as_array(), u.as_array()))

    def step_jacobian_control(self, x: State, u: Control) -> np.ndarray:
        return self.jacobian_control_array(x.as_array(), u.as_array())

    def rollout_array(self, x0: np.ndarray, controls: np.ndarray) -> np.ndarray:
        """Roll out ``controls`` of shape ``(..., N, 2)`` from ``x0``.

        Returns states of shape ``(..., N + 1, 3)``.
        """
        controls = np.asarray(controls, dtype=np.float64)
        n = controls.shape[-2]
        states = np.empty(controls.shape[:-2] + (n + 1, 3))
        states[..., 0, :] = x0
        for t in range(n):
            states[..., t + 1, :] = self.step_array(states[..., t, :], controls[..., t, :])
        return states

    def rollout(self, x0: State, seq, horizon: int | None = None) -> np.ndarray:
        return self.rollout_array(x0.as_array(), as_control_sequence(seq, horizon))


@dataclass(frozen=True)
class DiffDriveModel(DynamicsModel):
    """Unicycle kinematics integrated with forward Euler."""

    dt: float = 0.03

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be > 0, got {self.dt}")

    def step_array(self, x, u):
        x = np.asarray(x, dtype=np.float64)
        u = np.asarray(u, dtype=np.float64)
        theta = x[..., 2]
        out = np.empty(np.broadcast_shapes(x.shape, u.shape[:-1] + (3,)))
        out[..., 0] = x[..., 0] + u[..., 0] * np.cos(theta) * self.dt
        out[..., 1] = x[..., 1] + u[..., 0] * np.sin(theta) * self.dt
        out[..., 2] = wrap_angle(theta + u[..., 1] * self.dt)
        return out

    def jacobian_control_array(self, x, u):
        theta = np.asarray(x, dtype=np.float64)[..., 2]
        jac = np.zeros(theta.shape + (3, 2))
        jac[..., 0, 0] = np.cos(theta) * self.dt
        jac[..., 1, 0] = np.sin(theta) * self.dt
        jac[..., 2, 1] = self.dt
        return jac

    def rollout_array(self, x0, controls):
        controls = np.asarray(controls, dtype=np.float64)
        flat = controls.reshape((-1,) + controls.shape[-2:])
        x0 = np.broadcast_to(np.asarray(x0, dtype=np.float64), (flat.shape[0], 3))
        states = _diff_drive_rollout(np.ascontiguousarray(x0), np.ascontiguousarray(flat), self.dt)
        return states.reshape(controls.shape[:-2] + states.shape[-2:])


@numba.njit(cache=True)
def _wrap(a):
    out = math.pi - ((math.pi - a) % (2.0 * math.pi))
    if out <= -math.pi:
        out = math.pi
    return out


@numba.njit(cache=True)
def _diff_drive_rollout(x0, controls, dt):
    k_count, n, _ = controls.shape
    states = np.empty((k_count, n + 1, 3))
    for k in range(k_count):
        states[k, 0, 0] = x0[k, 0]
        states[k, 0, 1] = x0[k, 1]
        states[k, 0, 2] = x0[k, 2]
        for t in range(n):
            th = states[k, t, 2]
            v = controls[k, t, 0]
            states[k, t + 1, 0] = states[k, t, 0] + v * math.cos(th) * dt
            states[k, t + 1, 1] = states[k, t, 1] + v * math.sin(th) * dt
            states[k, t + 1, 2] = _wrap(th + controls[k, t, 1] * dt)
    return states


END_BEHAVIORS = ("stop", "continue", "reverse")


@dataclass(frozen=True)
class Obstacle:
    """Circular obstacle moving at constant speed.

    A moving obstacle may be confined to the segment ``path_start`` ->
    ``path_end`` (``path_start`` defaults to ``center``). On reaching an end it
    stops, keeps going, or turns around, per ``end_behavior``.
    """

    center: tuple[float, float]
    radius: float
    velocity: tuple[float, float] = (0.0, 0.0)
    path_end: tuple[float, float] | None = None
    end_behavior: str = "stop"
    path_start: tuple[float, float] | None = None

    def __post_init__(self):
        object.__setattr__(self, "center", _pair(self.center))
        object.__setattr__(self, "velocity", _pair(self.velocity))
        if self.path_end is not None:
            object.__setattr__(self, "path_end", _pair(self.path_end))
            start = self.center if self.path_start is None else self.path_start
            object.__setattr__(self, "path_start", _pair(start))
        if not self.radius > 0:
            raise ValueError(f"obstacle radius must be > 0, got {self.radius}")
        if self.end_behavior not in END_BEHAVIORS:
            raise ValueError(f"end_behavior must be one of {END_BEHAVIORS}, got {self.end_behavior!r}")

    @property
    def is_static(self) -> bool:
        return self.velocity == (0.0, 0.0)

    def _bounded(self) -> bool:
        return self.path_end is not None and self.end_behavior != "continue"

    def _segment_state(self, t: float):
        # arc position s in [0, L] along the path and travel direction (+1/-1)
        a = np.array(self.path_start)
        span = np.array(self.path_end) - a
        length = float(np.hypot(*span))
        speed = float(np.hypot(*self.velocity))
        s0 = float(np.hypot(*(np.array(self.center) - a)))
        direction = 1.0 if float(np.dot(self.velocity, span)) >= 0 else -1.0
        if length == 0.0:
            return a, span, 0.0, 0.0, direction
        if self.end_behavior == "stop":
            s = min(max(s0 + direction * speed * t, 0.0), length)
            moving = s < length if direction > 0 else s > 0.0
            return a, span / length, s, speed if moving else 0.0, direction
        # reverse: unfold the back-and-forth motion onto a cycle of length 2L
        u0 = s0 if direction > 0 else 2.0 * length - s0
        u = (u0 + speed * t) % (2.0 * length)
        if u <= length:
            return a, span / length, u, speed, 1.0
        return a, span / length, 2.0 * length - u, speed, -1.0

    def position_at(self, t: float) -> np.ndarray:
        """Center position ``t`` seconds from now."""
        if self.is_static or t == 0:
            return np.array(self.center)
        if not self._bounded():
            return np.array(self.center) + np.array(self.velocity) * t
        a, unit, s, _, _ = self._segment_state(t)
        return a + unit * s

    def velocity_at(self, t: float) -> np.ndarray:
        if self.is_static or not self._bounded():
            return np.array(self.velocity)
        _, unit, _, speed, direction = self._segment_state(t)
        return unit * speed * direction


def _pair(p) -> tuple[float, float]:
    x, y = p
    return (float(x), float(y))


def predict_obstacle(obs: Obstacle, t_ahead: float) -> Obstacle:
    """The obstacle as it will be ``t_ahead`` seconds from now.

    Constant-velocity extrapolation, honoring the path end if one is set.
    """
    if t_ahead < 0:
        raise ValueError(f"t_ahead must be >= 0, got {t_ahead}")
    if obs.is_static or t_ahead == 0:
        return obs
    return replace(obs, center=tuple(obs.position_at(t_ahead)),
                   velocity=tuple(obs.velocity_at(t_ahead)))


def obstacle_track(obstacles, t0: float, dt: float, n_steps: int) -> tuple[np.ndarray, np.ndarray]:
    """Centers at times ``t0 + i*dt`` for ``i = 0..n_steps``.

    Returns ``(centers, radii)`` with shapes ``(n_steps + 1, n_obs, 2)`` and
    ``(n_obs,)``.
    """
    n_obs = len(obstacles)
    centers = np.zeros((n_steps + 1, n_obs, 2))
    radii = np.array([o.radius for o in obstacles], dtype=np.float64)
    for j, o in enumerate(obstacles):
        if o.is_static:
            centers[:, j, :] = o.center
            continue
        for i in range(n_steps + 1):
            centers[i, j, :] = o.position_at(t0 + i * dt)
    return centers, radii

"""Value types, angle helpers and reproducible noise streams."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

TWO_PI = 2.0 * math.pi


def wrap_angle(a):
    """Wrap an angle (or array of angles) into (-pi, pi].

    ``-pi`` maps to ``pi``. Non-finite input raises ``ValueError``.
    """
    arr = np.asarray(a, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"cannot wrap non-finite angle {a!r}")
    out = np.pi - np.mod(np.pi - arr, TWO_PI)
    # mod can round up to exactly 2*pi for tiny negative arguments
    out = np.where(out <= -np.pi, np.pi, out)
    if out.ndim == 0:
        return float(out)
    return out


def _check_finite(name: str, *values: float) -> None:
    for v in values:
        if not math.isfinite(v):
            raise ValueError(f"{name} must be finite, got {v!r}")


@dataclass(frozen=True)
class State:
    """Planar robot pose. ``theta`` is wrapped on construction."""

    x: float
    y: float
    theta: float

    def __post_init__(self):
        _check_finite("State", self.x, self.y, self.theta)
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta])

    @classmethod
    def from_array(cls, arr) -> State:
        x, y, theta = (float(v) for v in arr)
        return cls(x, y, theta)


@dataclass(frozen=True)
class Control:
    v: float
    w: float

    def __post_init__(self):
        _check_finite("Control", self.v, self.w)
        object.__setattr__(self, "v", float(self.v))
        object.__setattr__(self, "w", float(self.w))

    def as_array(self) -> np.ndarray:
        return np.array([self.v, self.w])


@dataclass(frozen=True)
class ControlBounds:
    lower: Control
    upper: Control

    def __post_init__(self):
        if self.lower.v > self.upper.v or self.lower.w > self.upper.w:
            raise ValueError(f"lower bound {self.lower} exceeds upper bound {self.upper}")

    @property
    def lower_array(self) -> np.ndarray:
        return self.lower.as_array()

    @property
    def upper_array(self) -> np.ndarray:
        return self.upper.as_array()

    def clip(self, controls: np.ndarray) -> np.ndarray:
        return np.clip(controls, self.lower_array, self.upper_array)


@dataclass(frozen=True)
class NoiseCovariance:
    """Diagonal control-noise covariance, stored as standard deviations."""

    sigma_v: float
    sigma_w: float

    def __post_init__(self):
        if not (self.sigma_v > 0 and self.sigma_w > 0):
            raise ValueError(f"noise standard deviations must be > 0, got {self}")
        _check_finite("NoiseCovariance", self.sigma_v, self.sigma_w)

    @property
    def std(self) -> np.ndarray:
        return np.array([self.sigma_v, self.sigma_w])

    @property
    def inverse(self) -> np.ndarray:
        """Diagonal of the inverse covariance."""
        return 1.0 / self.std**2


@dataclass(frozen=True)
class RngStream:
    """Counter-based Gaussian stream keyed by ``(seed, stream_id)``.

    The generator is rebuilt from the key on every call, so draws never depend
    on which worker touches the stream or in what order.
    """

    seed: int
    stream_id: int

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence([self.seed & 0xFFFFFFFFFFFFFFFF, self.stream_id])
        return np.random.Generator(np.random.Philox(ss))


def as_control_sequence(seq, horizon: int | None = None) -> np.ndarray:
    """Validate and return a ``(N, 2)`` float array of controls."""
    arr = np.array(seq, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ValueError(f"control sequence must have shape (N, 2), got {arr.shape}")
    if horizon is not None and arr.shape[0] != horizon:
        raise ValueError(f"control sequence length {arr.shape[0]} != horizon {horizon}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("control sequence contains non-finite values")
    return arr


def sample_gaussian_noise(stream: RngStream, cov: NoiseCovariance, n_steps: int) -> np.ndarray:
    """Draw ``n_steps`` zero-mean control perturbations, shape ``(n_steps, 2)``."""
    if n_steps < 1:
        raise ValueError(f"n_steps must be >= 1, got {n_steps}")
    return stream.generator().standard_normal((n_steps, 2)) * cov.std


def step_seed(episode_seed: int, step: int) -> int:
    """Derive the 64-bit seed for one control step of an episode."""
    ss = np.random.SeedSequence([episode_seed & 0xFFFFFFFFFFFFFFFF, step])
    return int(ss.generate_state(1, dtype=np.uint64)[0])

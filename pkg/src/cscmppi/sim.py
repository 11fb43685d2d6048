"""Closed-loop episodes, benchmark aggregation and the two built-in environments."""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .clustering import ClusterParams, CSCMPPIController
from .core import Control, ControlBounds, NoiseCovariance, State, step_seed, wrap_angle
from .costs import ConstraintSet, CostConfig, QuadraticWeights
from .dynamics import DiffDriveModel, Obstacle
from .mppi import MPPIController, MppiParams, StepDiagnostics, shift_sequence
from .projection import ProjectionParams

CONTROLLERS = ("standard", "csc", "csc-no-dbscan")
BUILTIN_ENVIRONMENTS = ("env1", "env2")
OUTCOMES = ("reached", "collided", "timeout", "error")

_ALIASES = {
    "standard": "standard", "standard_mppi": "standard", "mppi": "standard",
    "csc": "csc", "csc_mppi": "csc", "csc-mppi": "csc",
    "csc-no-dbscan": "csc-no-dbscan", "csc_no_dbscan": "csc-no-dbscan",
}


def controller_name(kind: str) -> str:
    try:
        return _ALIASES[kind]
    except KeyError:
        raise ValueError(f"unknown controller {kind!r}; expected one of {CONTROLLERS}") from None


@dataclass(frozen=True)
class Scenario:
    """Everything needed to reproduce an episode: environment plus controller settings."""

    name: str
    start: State
    goal: State
    obstacles: tuple[Obstacle, ...] = ()
    goal_tol_pos: float = 0.15
    goal_tol_theta: float = 0.25
    robot_radius: float = 0.15
    safety_margin: float = 0.01
    saturate_controls: bool = True
    max_steps: int = 1000
    seed_base: int = 0
    mppi: MppiParams = field(default_factory=MppiParams)
    projection: ProjectionParams = field(default_factory=ProjectionParams)
    clustering: ClusterParams = field(default_factory=ClusterParams)
    weights: QuadraticWeights = field(default_factory=QuadraticWeights)
    collision_penalty: float = 1e4
    control_penalty_mode: str = "nominal_weighted"
    R_diag: tuple[float, float] = (0.0, 0.0)
    control_scale: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        if self.max_steps < 1:
            raise ValueError(f"max_steps must be >= 1, got {self.max_steps}")
        if self.goal_tol_pos < 0 or self.goal_tol_theta < 0:
            raise ValueError("goal tolerances must be >= 0")
        if self.robot_radius < 0 or self.safety_margin < 0:
            raise ValueError("robot_radius and safety_margin must be >= 0")
        for label, s in (("start", self.start), ("goal", self.goal)):
            for i, obs in enumerate(self.obstacles):
                c = obs.position_at(0.0)
                if math.hypot(s.x - c[0], s.y - c[1]) < obs.radius + self.robot_radius:
                    raise ValueError(f"{label} lies inside inflated obstacle {i}")

    @property
    def cost_config(self) -> CostConfig:
        return CostConfig(self.goal, self.weights, self.collision_penalty,
                          self.control_penalty_mode, self.R_diag, self.control_scale)

    @property
    def constraints(self) -> ConstraintSet:
        # the planner keeps a margin so a tolerance-level violation of its
        # constraint is still clear of the true footprint
        return ConstraintSet(self.obstacles, self.mppi.bounds, self.robot_radius + self.safety_margin)

    def with_samples(self, K: int) -> Scenario:
        return replace(self, mppi=replace(self.mppi, K=K))


def builtin_environment(env_id: str) -> Scenario:
    """The head-to-head environment (``env1``) or the ablation environment (``env2``).

    Both scale the control term of the sample cost by the temperature.
    """
    if env_id == "env1":
        obstacles = (
            Obstacle((-1.0, 0.0), 0.3, velocity=(0.53, 0.0), path_end=(0.5, 0.0)),
            Obstacle((0.0, 1.0), 0.4),
            Obstacle((1.5, 0.7), 0.5),
        )
        return Scenario("env1", State(-1.0, -1.0, math.pi / 2), State(2.0, 2.0, math.pi / 2),
                        obstacles, mppi=MppiParams(lam=0.01), control_scale=0.01)
    if env_id == "env2":
        return Scenario("env2", State(-1.0, 0.0, 0.0), State(1.0, 0.0, 0.0),
                        (Obstacle((0.0, 0.0), 0.5),), mppi=MppiParams(lam=0.7), control_scale=0.7)
    raise ValueError(f"unknown builtin environment {env_id!r}; expected env1 or env2")


def make_controller(scenario: Scenario, kind: str, model=None):
    kind = controller_name(kind)
    model = model or DiffDriveModel(scenario.mppi.dt)
    if kind == "standard":
        return MPPIController(scenario.mppi, model, scenario.cost_config, scenario.constraints,
                              scenario.projection.tol_violation)
    return CSCMPPIController(scenario.mppi, model, scenario.cost_config, scenario.constraints,
                             scenario.projection, scenario.clustering,
                             use_dbscan=(kind == "csc"))


@dataclass
class StepRecord:
    """One control step: ``control`` applied at ``state`` led to ``next_state``."""

    step: int
    sim_time: float
    state: tuple[float, float, float]
    control: tuple[float, float]
    next_state: tuple[float, float, float]
    cost: float
    feasible: bool
    n_clusters: int
    noise_count: int
    sweeps: float
    compute_time_s: float


@dataclass
class EpisodeResult:
    seed: int
    outcome: str
    path_length: float
    steps: int
    compute_times: np.ndarray
    trajectory: np.ndarray          # (steps + 1, 3)
    applied_controls: np.ndarray    # (steps, 2)
    feasible: np.ndarray            # (steps,) selected rollout satisfied constraints
    records: list[StepRecord] = field(default_factory=list, repr=False)
    collision_step: int | None = None
    error: str | None = None


def path_length(trajectory) -> float:
    xy = np.asarray(trajectory)[:, :2]
    return float(np.sum(np.hypot(*np.diff(xy, axis=0).T))) if len(xy) > 1 else 0.0


def goal_reached(x: np.ndarray, scenario: Scenario) -> bool:
    g = scenario.goal
    pos = math.hypot(x[0] - g.x, x[1] - g.y)
    return pos <= scenario.goal_tol_pos and abs(wrap_angle(x[2] - g.theta)) <= scenario.goal_tol_theta


def in_collision(x: np.ndarray, scenario: Scenario, t: float) -> bool:
    for obs in scenario.obstacles:
        c = obs.position_at(t)
        if math.hypot(x[0] - c[0], x[1] - c[1]) < obs.radius + scenario.robot_radius:
            return True
    return False


def run_episode(scenario: Scenario, controller: str, episode_seed: int,
                trace: Callable[[int, float, StepDiagnostics], None] | None = None) -> EpisodeResult:
    """Receding-horizon loop: optimize, apply the first control, advance the world.

    Applied controls are saturated to the control bounds. ``trace`` receives
    ``(step, sim_time, diagnostics)`` with the full sample batch attached.
    """
    p = scenario.mppi
    model = DiffDriveModel(p.dt)
    ctrl = make_controller(scenario, controller, model)
    lower, upper = p.bounds.lower_array, p.bounds.upper_array

    x = scenario.start.as_array()
    states, controls, times, feas, records = [x], [], [], [], []
    nominal = np.zeros((p.N, 2))
    outcome, collision_step, error = "timeout", None, None

    if goal_reached(x, scenario):
        outcome = "reached"
    else:
        for step in range(scenario.max_steps):
            sim_time = step * p.dt
            tic = time.perf_counter()
            try:
                seq, diag = ctrl.step(x, nominal, step_seed(episode_seed, step), t0=sim_time,
                                      keep_batch=trace is not None)
            except (ValueError, ArithmeticError) as exc:
                outcome, error = "error", f"step {step}: {exc}"
                break
            elapsed = time.perf_counter() - tic
            if trace is not None:
                trace(step, sim_time, diag)

            u = np.clip(seq[0], lower, upper) if scenario.saturate_controls else np.array(seq[0])
            x_prev, x = x, model.step_array(x, u)
            states.append(x)
            controls.append(u)
            times.append(elapsed)
            feas.append(bool(diag.selected_feasible))
            records.append(StepRecord(step, sim_time, tuple(map(float, x_prev)),
                                      tuple(map(float, u)), tuple(map(float, x)),
                                      float(diag.selected_cost), bool(diag.selected_feasible),
                                      int(diag.n_clusters), int(diag.noise_count),
                                      float(diag.projection_mean_sweeps), elapsed))
            nominal = shift_sequence(seq)

            if in_collision(x, scenario, sim_time + p.dt):
                outcome, collision_step = "collided", step + 1
                break
            if goal_reached(x, scenario):
                outcome = "reached"
                break

    traj = np.asarray(states)
    return EpisodeResult(
        seed=episode_seed, outcome=outcome, path_length=path_length(traj), steps=len(controls),
        compute_times=np.asarray(times), trajectory=traj,
        applied_controls=np.asarray(controls).reshape(-1, 2), feasible=np.asarray(feas, dtype=bool),
        records=records, collision_step=collision_step, error=error,
    )


@dataclass
class BenchmarkSummary:
    scenario: str
    controller: str
    K: int
    episodes: list[EpisodeResult]

    @property
    def n_episodes(self) -> int:
        return len(self.episodes)

    def _rate(self, outcome: str) -> float:
        return sum(e.outcome == outcome for e in self.episodes) / self.n_episodes

    @property
    def collision_rate(self) -> float:
        return self._rate("collided")

    @property
    def success_rate(self) -> float:
        return self._rate("reached")

    @property
    def successes(self) -> list[EpisodeResult]:
        return [e for e in self.episodes if e.outcome == "reached"]

    @property
    def mean_path_length(self) -> float:
        ok = self.successes
        return float(np.mean([e.path_length for e in ok])) if ok else float("nan")

    @property
    def constraint_satisfaction_rate(self) -> float:
        flags = np.concatenate([e.feasible for e in self.episodes])
        return float(flags.mean()) if flags.size else 1.0

    @property
    def infeasible_selections(self) -> int:
        return int(sum((~e.feasible).sum() for e in self.episodes))

    def _times(self) -> np.ndarray:
        ts = [e.compute_times for e in self.successes if e.compute_times.size]
        return np.concatenate(ts) if ts else np.zeros(0)

    @property
    def mean_time(self) -> float:
        t = self._times()
        return float(t.mean()) if t.size else float("nan")

    @property
    def max_time(self) -> float:
        t = self._times()
        return float(t.max()) if t.size else float("nan")

    def metrics(self) -> dict:
        """Seed-determined metrics only; wall-clock timings live in :meth:`timings`."""
        return {
            "scenario": self.scenario,
            "controller": self.controller,
            "K": self.K,
            "n_episodes": self.n_episodes,
            "collision_rate": self.collision_rate,
            "success_rate": self.success_rate,
            "timeout_rate": self._rate("timeout"),
            "error_rate": self._rate("error"),
            "mean_path_length": _finite_or_none(self.mean_path_length),
            "constraint_satisfaction_rate": self.constraint_satisfaction_rate,
            "infeasible_selections": self.infeasible_selections,
            "episodes": [
                {"seed": e.seed, "outcome": e.outcome, "steps": e.steps,
                 "path_length": e.path_length, "collision_step": e.collision_step,
                 "infeasible_selections": int((~e.feasible).sum())}
                for e in self.episodes
            ],
        }

    def timings(self) -> dict:
        return {
            "scenario": self.scenario, "controller": self.controller, "K": self.K,
            "mean_time_s": _finite_or_none(self.mean_time),
            "max_time_s": _finite_or_none(self.max_time),
        }


def _finite_or_none(v: float):
    return v if math.isfinite(v) else None


def _episode_job(args):
    return run_episode(*args)


def run_benchmark(scenario: Scenario, controller: str, n_episodes: int, seed_base: int | None = None,
                  workers: int = 1) -> BenchmarkSummary:
    """Episodes with seeds ``seed_base + i``; results are ordered by ``i`` whatever ``workers`` is."""
    if n_episodes < 1:
        raise ValueError(f"n_episodes must be >= 1, got {n_episodes}")
    controller = controller_name(controller)
    base = scenario.seed_base if seed_base is None else seed_base
    jobs = [(scenario, controller, base + i) for i in range(n_episodes)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            episodes = list(pool.map(_episode_job, jobs))
    else:
        episodes = [_episode_job(j) for j in jobs]
    return BenchmarkSummary(scenario.name, controller, scenario.mppi.K, episodes)

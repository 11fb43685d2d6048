"""Scenario files (TOML) and the run artifacts written by the command line.

Scenario schema, version 1::

    schema_version = 1

    [scenario]                 # name, start, goal required
    name = "env2"
    start = [-1.0, 0.0, 0.0]   # x, y, theta
    goal = [1.0, 0.0, 0.0]
    goal_tol_pos = 0.15
    goal_tol_theta = 0.25
    robot_radius = 0.15
    safety_margin = 0.01
    saturate_controls = true
    max_steps = 1000
    seed_base = 0

    [[obstacles]]              # zero or more
    center = [0.0, 0.0]
    radius = 0.5
    velocity = [0.0, 0.0]      # optional
    path_end = [0.5, 0.0]      # optional, bounds the motion
    path_start = [-1.0, 0.0]   # optional, defaults to center
    end_behavior = "stop"      # stop | continue | reverse

    [mppi]                     # K, N, dt, lambda, sigma, lower, upper required
    K = 300
    N = 30
    dt = 0.03
    lambda = 0.7
    sigma = [0.1, 1.0]         # noise std of (v, w)
    lower = [0.0, -3.0]
    upper = [0.5, 3.0]
    clamp_samples = false

    [projection]               # all optional
    alpha = [4.0, 1.0]
    beta_lower = [0.05, 1.0]
    beta_upper = [0.05, 1.0]
    max_iters = 50
    step_decay = 0.9
    tol_violation = 0.001
    tol_stationarity = 0.001
    mode = "primal_dual"       # primal_dual | clamp_only

    [clustering]               # all optional; omit eps / cost_scale for the adaptive defaults
    eps = 2.5
    min_pts = 5
    cost_scale = 7.75
    fallback = "all_samples"   # all_samples | best_singleton
    selection = "rollout"      # rollout | cluster_min_cost
    prefer_feasible = true

    [costs]                    # Q, H required
    Q = [10.0, 10.0, 0.0]
    H = [50.0, 50.0, 50.0]
    collision_penalty = 10000.0
    control_penalty_mode = "nominal_weighted"   # nominal_weighted | quadratic_R
    control_scale = 0.7
    R = [0.0, 0.0]

Unknown keys are rejected so a typo can never silently fall back to a default.
"""

from __future__ import annotations

import json
import re
import sys
from dataclasses import asdict
from pathlib import Path

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .clustering import ClusterParams
from .core import Control, ControlBounds, NoiseCovariance, State
from .costs import QuadraticWeights
from .dynamics import Obstacle
from .mppi import MppiParams
from .projection import ProjectionParams
from .sim import Scenario

SCHEMA_VERSION = 1

_SECTIONS = {
    "scenario": ({"name", "start", "goal"},
                 {"goal_tol_pos", "goal_tol_theta", "robot_radius", "safety_margin",
                  "saturate_controls", "max_steps", "seed_base"}),
    "mppi": ({"K", "N", "dt", "lambda", "sigma", "lower", "upper"}, {"clamp_samples"}),
    "projection": (set(), {"alpha", "beta_lower", "beta_upper", "max_iters", "step_decay",
                           "tol_violation", "tol_stationarity", "mode"}),
    "clustering": (set(), {"eps", "min_pts", "cost_scale", "fallback", "selection",
                           "prefer_feasible"}),
    "costs": ({"Q", "H"}, {"collision_penalty", "control_penalty_mode", "control_scale", "R"}),
}
_OBSTACLE_KEYS = ({"center", "radius"}, {"velocity", "path_end", "path_start", "end_behavior"})
_REQUIRED_SECTIONS = ("scenario", "mppi", "costs")


class ScenarioError(ValueError):
    """Invalid scenario file; the message carries ``path:line`` when known."""


class _Locator:
    """Maps ``(section, index, key)`` to a 1-based line number in the source text."""

    _header = re.compile(r"^\s*(\[\[?)\s*([A-Za-z0-9_.-]+)\s*\]\]?")
    _assign = re.compile(r"^\s*([A-Za-z0-9_-]+)\s*=")

    def __init__(self, text: str):
        self.lines: dict[tuple[str, int, str | None], int] = {}
        section, counts = "", {}
        for no, line in enumerate(text.splitlines(), start=1):
            head = self._header.match(line)
            if head:
                section = head.group(2)
                idx = counts.get(section, -1) + 1 if head.group(1) == "[[" else 0
                counts[section] = idx
                self.lines.setdefault((section, idx, None), no)
                continue
            key = self._assign.match(line)
            if key:
                self.lines.setdefault((section, counts.get(section, 0), key.group(1)), no)

    def line(self, section: str, key: str | None = None, index: int = 0) -> int | None:
        return self.lines.get((section, index, key)) or self.lines.get((section, index, None))


class _Reader:
    def __init__(self, data: dict, text: str, source: str):
        self.data = data
        self.loc = _Locator(text)
        self.source = source

    def fail(self, msg: str, section: str = "", key: str | None = None, index: int = 0):
        line = self.loc.line(section, key, index) if section else None
        where = f"{self.source}:{line}" if line else self.source
        field_name = f"{section}[{index}].{key}" if section == "obstacles" else f"{section}.{key}"
        label = field_name if key else section
        raise ScenarioError(f"{where}: {label}: {msg}" if section else f"{where}: {msg}")

    def check_keys(self, table: dict, section: str, required: set, optional: set, index: int = 0):
        unknown = sorted(set(table) - required - optional)
        for key in unknown:
            self.fail("unknown key", section, key, index)
        missing = sorted(required - set(table))
        if missing:
            where = self.loc.line(section, None, index)
            prefix = f"{self.source}:{where}" if where else self.source
            name = f"{section}[{index}]" if section == "obstacles" else section
            raise ScenarioError(f"{prefix}: [{name}] missing required key(s): {', '.join(missing)}")

    def vec(self, table, section, key, n, index=0):
        val = table[key]
        if (not isinstance(val, list) or len(val) != n
                or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in val)):
            self.fail(f"expected a list of {n} numbers, got {val!r}", section, key, index)
        return tuple(float(v) for v in val)

    def num(self, table, section, key, kind=float, index=0):
        val = table[key]
        ok = isinstance(val, int) if kind is int else isinstance(val, (int, float))
        if isinstance(val, bool) or not ok:
            self.fail(f"expected {kind.__name__}, got {val!r}", section, key, index)
        return kind(val)

    def flag(self, table, section, key):
        val = table[key]
        if not isinstance(val, bool):
            self.fail(f"expected true or false, got {val!r}", section, key)
        return val

    def text(self, table, section, key, index=0):
        val = table[key]
        if not isinstance(val, str):
            self.fail(f"expected a string, got {val!r}", section, key, index)
        return val

    def build(self, section, factory, key=None, index=0):
        try:
            return factory()
        except (ValueError, TypeError) as exc:
            self.fail(str(exc), section, key, index)


def parse_scenario(text: str, source: str = "<string>") -> Scenario:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError(f"{source}: malformed TOML: {exc}") from None
    r = _Reader(data, text, source)

    allowed = set(_SECTIONS) | {"obstacles", "schema_version"}
    for key in sorted(set(data) - allowed):
        r.fail("unknown section or key", key)
    version = data.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ScenarioError(f"{source}: schema_version must be {SCHEMA_VERSION}, got {version!r}")
    missing = [s for s in _REQUIRED_SECTIONS if s not in data]
    if missing:
        raise ScenarioError(f"{source}: missing required section(s): {', '.join(missing)}")
    for name, (req, opt) in _SECTIONS.items():
        table = data.get(name, {})
        if not isinstance(table, dict):
            r.fail("expected a table", name)
        r.check_keys(table, name, req, opt)

    sc, mp, pj, cl, co = (data.get(k, {}) for k in ("scenario", "mppi", "projection", "clustering",
                                                       "costs"))
    obstacles = []
    raw_obs = data.get("obstacles", [])
    if not isinstance(raw_obs, list):
        r.fail("expected an array of tables ([[obstacles]])", "obstacles")
    for i, ob in enumerate(raw_obs):
        r.check_keys(ob, "obstacles", *_OBSTACLE_KEYS, index=i)
        kw = {"center": r.vec(ob, "obstacles", "center", 2, i),
              "radius": r.num(ob, "obstacles", "radius", index=i)}
        for key in ("velocity", "path_end", "path_start"):
            if key in ob:
                kw[key] = r.vec(ob, "obstacles", key, 2, i)
        if "end_behavior" in ob:
            kw["end_behavior"] = r.text(ob, "obstacles", "end_behavior", i)
        bad = "radius" if kw["radius"] <= 0 else None
        obstacles.append(r.build("obstacles", lambda kw=kw: Obstacle(**kw), bad, i))

    lower = r.vec(mp, "mppi", "lower", 2)
    upper = r.vec(mp, "mppi", "upper", 2)
    sigma = r.vec(mp, "mppi", "sigma", 2)
    bounds = r.build("mppi", lambda: ControlBounds(Control(*lower), Control(*upper)), "lower")
    cov = r.build("mppi", lambda: NoiseCovariance(*sigma), "sigma")
    mppi_kw = {"K": r.num(mp, "mppi", "K", int), "N": r.num(mp, "mppi", "N", int),
               "dt": r.num(mp, "mppi", "dt"), "lam": r.num(mp, "mppi", "lambda"),
               "cov": cov, "bounds": bounds}
    if "clamp_samples" in mp:
        mppi_kw["clamp_samples"] = r.flag(mp, "mppi", "clamp_samples")
    for key, bad in (("K", mppi_kw["K"] < 1), ("N", mppi_kw["N"] < 1), ("dt", mppi_kw["dt"] <= 0),
                     ("lambda", mppi_kw["lam"] <= 0)):
        if bad:
            r.fail("must be > 0", "mppi", key)
    mppi = r.build("mppi", lambda: MppiParams(**mppi_kw))

    proj_kw = {}
    for key in ("alpha", "beta_lower", "beta_upper"):
        if key in pj:
            proj_kw[key] = r.vec(pj, "projection", key, 2)
    for key, kind in (("max_iters", int), ("step_decay", float), ("tol_violation", float),
                      ("tol_stationarity", float)):
        if key in pj:
            proj_kw[key] = r.num(pj, "projection", key, kind)
    if "mode" in pj:
        proj_kw["mode"] = r.text(pj, "projection", "mode")
    projection = r.build("projection", lambda: ProjectionParams(**proj_kw),
                         next(iter(proj_kw), None))

    cl_kw = {}
    for key, kind in (("eps", float), ("min_pts", int), ("cost_scale", float)):
        if key in cl:
            cl_kw[key] = r.num(cl, "clustering", key, kind)
    for key in ("fallback", "selection"):
        if key in cl:
            cl_kw[key] = r.text(cl, "clustering", key)
    if "prefer_feasible" in cl:
        cl_kw["prefer_feasible"] = r.flag(cl, "clustering", "prefer_feasible")
    clustering = r.build("clustering", lambda: ClusterParams(**cl_kw), next(iter(cl_kw), None))

    q = r.vec(co, "costs", "Q", 3)
    h = r.vec(co, "costs", "H", 3)
    weights = r.build("costs", lambda: QuadraticWeights(q, h), "Q")
    scen_kw = {"weights": weights}
    if "collision_penalty" in co:
        scen_kw["collision_penalty"] = r.num(co, "costs", "collision_penalty")
        if scen_kw["collision_penalty"] < 0:
            r.fail("must be >= 0", "costs", "collision_penalty")
    if "control_penalty_mode" in co:
        scen_kw["control_penalty_mode"] = r.text(co, "costs", "control_penalty_mode")
    if "control_scale" in co:
        scen_kw["control_scale"] = r.num(co, "costs", "control_scale")
    if "R" in co:
        scen_kw["R_diag"] = r.vec(co, "costs", "R", 2)

    scen_kw["name"] = r.text(sc, "scenario", "name")
    start = r.vec(sc, "scenario", "start", 3)
    goal = r.vec(sc, "scenario", "goal", 3)
    scen_kw["start"] = r.build("scenario", lambda: State(*start), "start")
    scen_kw["goal"] = r.build("scenario", lambda: State(*goal), "goal")
    for key, kind in (("goal_tol_pos", float), ("goal_tol_theta", float), ("robot_radius", float),
                      ("safety_margin", float), ("max_steps", int), ("seed_base", int)):
        if key in sc:
            scen_kw[key] = r.num(sc, "scenario", key, kind)
            if scen_kw[key] < 0 or (key == "max_steps" and scen_kw[key] < 1):
                r.fail("out of range", "scenario", key)
    if "saturate_controls" in sc:
        scen_kw["saturate_controls"] = r.flag(sc, "scenario", "saturate_controls")

    try:
        return Scenario(obstacles=tuple(obstacles), mppi=mppi, projection=projection,
                        clustering=clustering, **scen_kw)
    except ValueError as exc:
        key = "goal" if "goal" in str(exc) else "start" if "start" in str(exc) else None
        r.fail(str(exc), "scenario", key)


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"{path}: cannot read scenario file: {exc.strerror}") from None
    return parse_scenario(text, str(path))


def scenario_to_dict(s: Scenario) -> dict:
    obstacles = []
    for ob in s.obstacles:
        d = {"center": list(ob.center), "radius": ob.radius}
        if not ob.is_static:
            d["velocity"] = list(ob.velocity)
        if ob.path_end is not None:
            d["path_end"] = list(ob.path_end)
            d["path_start"] = list(ob.path_start)
        d["end_behavior"] = ob.end_behavior
        obstacles.append(d)
    p, pj, cl = s.mppi, s.projection, s.clustering
    clustering = {"min_pts": cl.min_pts, "fallback": cl.fallback, "selection": cl.selection,
                  "prefer_feasible": cl.prefer_feasible}
    if cl.eps is not None:
        clustering["eps"] = cl.eps
    if cl.cost_scale is not None:
        clustering["cost_scale"] = cl.cost_scale
    out = {
        "schema_version": SCHEMA_VERSION,
        "scenario": {
            "name": s.name, "start": list(s.start.as_array()), "goal": list(s.goal.as_array()),
            "goal_tol_pos": s.goal_tol_pos, "goal_tol_theta": s.goal_tol_theta,
            "robot_radius": s.robot_radius, "safety_margin": s.safety_margin,
            "saturate_controls": s.saturate_controls, "max_steps": s.max_steps,
            "seed_base": s.seed_base,
        },
        "mppi": {
            "K": p.K, "N": p.N, "dt": p.dt, "lambda": p.lam,
            "sigma": [p.cov.sigma_v, p.cov.sigma_w],
            "lower": list(p.bounds.lower_array), "upper": list(p.bounds.upper_array),
            "clamp_samples": p.clamp_samples,
        },
        "projection": {
            "alpha": list(pj.alpha), "beta_lower": list(pj.beta_lower),
            "beta_upper": list(pj.beta_upper), "max_iters": pj.max_iters,
            "step_decay": pj.step_decay, "tol_violation": pj.tol_violation,
            "tol_stationarity": pj.tol_stationarity, "mode": pj.mode,
        },
        "clustering": clustering,
        "costs": {
            "Q": list(s.weights.Q_diag), "H": list(s.weights.H_diag),
            "collision_penalty": s.collision_penalty,
            "control_penalty_mode": s.control_penalty_mode, "control_scale": s.control_scale,
            "R": list(s.R_diag),
        },
        "obstacles": obstacles,
    }
    return _plain(out)


def _plain(obj):
    # numpy scalars are not TOML/JSON serializable
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if hasattr(obj, "item"):
        return obj.item()
    return obj


def dump_scenario(s: Scenario) -> str:
    return tomli_w.dumps(scenario_to_dict(s))


def save_scenario(s: Scenario, path) -> None:
    Path(path).write_text(dump_scenario(s))


def write_json(path, obj) -> None:
    """Deterministic JSON: sorted keys, fixed float repr, trailing newline."""
    Path(path).write_text(json.dumps(_plain(obj), sort_keys=True, indent=2) + "\n")


def step_record_dict(rec) -> dict:
    d = asdict(rec)
    d["schema_version"] = SCHEMA_VERSION
    d["state"] = list(rec.state)
    d["control"] = list(rec.control)
    return d

"""Command-line benchmark runner.

Artifacts written to ``--out`` (default ``$CSCMPPI_OUT`` or ``./runs``):

``metrics.json``
    Seed-determined summary of every (controller, K) run. Identical
    arguments give a byte-identical file.
``timing.json``
    Wall-clock time per controller step (mean and max over successful episodes).
``table.json``
    One row per (controller, K) with collision rate, mean path length and
    timing; written when more than one run is requested.
``trajectories/<controller>_K<K>_seed<seed>.jsonl``
    One record per control step: schema_version, step, sim_time, state, control, next_state,
    cost, feasible, n_clusters, noise_count, sweeps, compute_time_s.
``traces/<controller>_K<K>_seed<seed>.npz`` (with ``--trace``)
    Per-step arrays: ``rollouts`` (steps, K, N+1, 3), ``labels`` (steps, K,
    -1 for noise), ``costs`` (steps, K), ``selected`` (steps, N+1, 3).

Exit status: 0 on success, 1 on usage or configuration errors, 2 when
``--strict`` is set and an episode does not reach the goal.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .io import load_scenario, step_record_dict, write_json
from .sim import (BUILTIN_ENVIRONMENTS, CONTROLLERS, BenchmarkSummary, builtin_environment,
                  controller_name, run_benchmark, run_episode)

OUT_ENV = "CSCMPPI_OUT"
log = logging.getLogger("cscmppi")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="cscmppi", description="Run closed-loop MPPI / CSC-MPPI benchmarks.")
    p.add_argument("--scenario", required=True,
                   help="builtin id (env1, env2) or path to a scenario TOML file")
    p.add_argument("--controller", default="csc",
                   help=f"comma-separated list from {', '.join(CONTROLLERS)} (default csc)")
    p.add_argument("--episodes", type=int, default=None,
                   help="episodes per run (default 20 for env1, 10 otherwise)")
    p.add_argument("--seed", type=int, default=None, help="seed of the first episode")
    p.add_argument("--samples", default=None, help="comma-separated K values overriding the scenario")
    p.add_argument("--out", default=None, help=f"output directory (default ${OUT_ENV} or ./runs)")
    p.add_argument("--workers", type=int, default=1, help="parallel episode workers")
    p.add_argument("--trace", action="store_true", help="write per-step sample/cluster traces")
    p.add_argument("--strict", action="store_true", help="exit 2 if any episode fails")
    p.add_argument("-v", "--verbose", action="count", default=0)
    return p


def _scenario(arg: str):
    if arg in BUILTIN_ENVIRONMENTS:
        return builtin_environment(arg)
    return load_scenario(arg)


def _int_list(text: str, name: str) -> list[int]:
    try:
        vals = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise UsageError(f"--{name} expects comma-separated integers, got {text!r}") from None
    if not vals or min(vals) < 1:
        raise UsageError(f"--{name} values must be >= 1")
    return vals


class _TraceWriter:
    def __init__(self):
        self.rollouts, self.labels, self.costs, self.selected = [], [], [], []

    def __call__(self, step, sim_time, diag):
        b = diag.batch
        self.rollouts.append(b.rollouts.astype(np.float32))
        k = b.K
        self.labels.append(diag.labels if diag.labels is not None else np.zeros(k, dtype=np.int64))
        self.costs.append(b.costs)
        self.selected.append(diag.selected_rollout)

    def save(self, path: Path):
        n = len(self.rollouts)
        np.savez_compressed(
            path,
            rollouts=np.stack(self.rollouts) if n else np.zeros((0, 0, 0, 3), np.float32),
            labels=np.stack(self.labels).astype(np.int16) if n else np.zeros((0, 0), np.int16),
            costs=np.stack(self.costs) if n else np.zeros((0, 0)),
            selected=np.stack(self.selected) if n else np.zeros((0, 0, 3)),
        )


def _run(scenario, controller, n_episodes, seed, out: Path, trace: bool, workers: int):
    tag = f"{controller}_K{scenario.mppi.K}"
    episodes = []
    if trace or workers <= 1:
        for i in range(n_episodes):
            writer = _TraceWriter() if trace else None
            ep = run_episode(scenario, controller, seed + i, trace=writer)
            if writer is not None:
                (out / "traces").mkdir(exist_ok=True)
                writer.save(out / "traces" / f"{tag}_seed{seed + i}.npz")
            episodes.append(ep)
            log.info("%s seed %d: %s after %d steps", tag, seed + i, ep.outcome, ep.steps)
    else:
        episodes = run_benchmark(scenario, controller, n_episodes, seed, workers).episodes
    (out / "trajectories").mkdir(exist_ok=True)
    for ep in episodes:
        lines = [json.dumps(step_record_dict(r), sort_keys=True) for r in ep.records]
        (out / "trajectories" / f"{tag}_seed{ep.seed}.jsonl").write_text(
            "".join(line + "\n" for line in lines))
    return BenchmarkSummary(scenario.name, controller, scenario.mppi.K, episodes)


def run_command(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(message)s")
    scenario = _scenario(args.scenario)
    controllers = [controller_name(c.strip()) for c in args.controller.split(",") if c.strip()]
    if not controllers:
        raise UsageError("--controller needs at least one controller")
    ks = _int_list(args.samples, "samples") if args.samples else [scenario.mppi.K]
    n_episodes = args.episodes if args.episodes is not None else (20 if scenario.name == "env1" else 10)
    if n_episodes < 1:
        raise UsageError("--episodes must be >= 1")
    if args.workers < 1:
        raise UsageError("--workers must be >= 1")
    seed = scenario.seed_base if args.seed is None else args.seed

    out = Path(args.out or os.environ.get(OUT_ENV) or "runs")
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {out}: {exc.strerror}") from None

    summaries = []
    for controller in controllers:
        for k in ks:
            sc = scenario.with_samples(k) if k != scenario.mppi.K else scenario
            summaries.append(_run(sc, controller, n_episodes, seed, out, args.trace, args.workers))

    write_json(out / "metrics.json", {"schema_version": 1, "seed": seed,
                                      "runs": [s.metrics() for s in summaries]})
    write_json(out / "timing.json", {"schema_version": 1, "runs": [s.timings() for s in summaries]})
    if len(summaries) > 1:
        rows = [{"controller": s.controller, "K": s.K, "collision_rate": s.collision_rate,
                 "mean_path_length": s.metrics()["mean_path_length"],
                 "mean_time_ms": _ms(s.mean_time), "max_time_ms": _ms(s.max_time),
                 "constraint_satisfaction_rate": s.constraint_satisfaction_rate}
                for s in summaries]
        write_json(out / "table.json", {"schema_version": 1, "rows": rows})

    for s in summaries:
        print(f"{s.scenario} {s.controller:>13} K={s.K:<4d} collision={s.collision_rate:.2f} "
              f"success={s.success_rate:.2f} path={s.mean_path_length:.3f} "
              f"satisfaction={s.constraint_satisfaction_rate:.4f}")
    failed = any(e.outcome != "reached" for s in summaries for e in s.episodes)
    return 2 if (args.strict and failed) else 0


def _ms(v: float):
    return None if v != v else 1000.0 * v


def main(argv=None) -> int:
    try:
        return run_command(argv)
    except (UsageError, ValueError) as exc:
        print(f"cscmppi: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

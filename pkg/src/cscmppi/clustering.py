"""Density-based clustering of projected samples and the CSC-MPPI controller."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .costs import ConstraintSet, CostConfig, batch_costs
from .dynamics import DynamicsModel
from .mppi import (
    MppiParams,
    SampleBatch,
    StepDiagnostics,
    effective_sample_size,
    evaluate_sequence,
    generate_batch,
    softmax_weights,
    weighted_update,
)
from .projection import ProjectionParams, project_batch

FALLBACKS = ("all_samples", "best_singleton")
SELECTIONS = ("rollout", "cluster_min_cost")
NOISE = -1


@dataclass(frozen=True)
class ClusterParams:
    """DBSCAN and selection settings.

    ``eps=None`` picks eps per batch; ``cost_scale=None`` uses sqrt(N*m).
    With ``prefer_feasible`` a cluster update whose rollout violates the
    constraints only wins when no update is feasible, and then the cheapest
    converged clustered sample replaces it.
    """

    eps: float | None = None
    min_pts: int = 5
    cost_scale: float | None = None
    fallback: str = "all_samples"
    selection: str = "rollout"
    prefer_feasible: bool = True

    def __post_init__(self):
        if self.eps is not None and not self.eps > 0:
            raise ValueError(f"eps must be > 0, got {self.eps}")
        if self.min_pts < 1:
            raise ValueError(f"min_pts must be >= 1, got {self.min_pts}")
        if self.cost_scale is not None and self.cost_scale < 0:
            raise ValueError(f"cost_scale must be >= 0, got {self.cost_scale}")
        if self.fallback not in FALLBACKS:
            raise ValueError(f"fallback must be one of {FALLBACKS}, got {self.fallback!r}")
        if self.selection not in SELECTIONS:
            raise ValueError(f"selection must be one of {SELECTIONS}, got {self.selection!r}")


@dataclass
class ClusterSet:
    clusters: list[np.ndarray]
    noise: np.ndarray

    @property
    def M(self) -> int:
        return len(self.clusters)

    @classmethod
    def from_labels(cls, labels) -> ClusterSet:
        labels = np.asarray(labels)
        m = int(labels.max()) + 1 if labels.size else 0
        return cls([np.flatnonzero(labels == c) for c in range(m)], np.flatnonzero(labels == NOISE))


def adaptive_eps(X: np.ndarray, min_pts: int, dist: np.ndarray | None = None) -> float:
    """Median over points of the distance to the ``min_pts``-th nearest point (self included)."""
    X = np.asarray(X, dtype=np.float64)
    dist = cdist(X, X) if dist is None else dist
    kth = np.partition(dist, min(min_pts, X.shape[0]) - 1, axis=1)[:, min(min_pts, X.shape[0]) - 1]
    eps = float(np.median(kth))
    # identical points give eps == 0, which would make nothing a neighbor
    return eps if eps > 0 else 1e-12


def dbscan_labels(X: np.ndarray, eps: float, min_pts: int,
                  dist: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Label points with cluster ids (``-1`` for noise); returns ``(labels, core_mask)``.

    Neighborhoods are closed Euclidean balls and include the point itself.
    Clusters are numbered by their lowest-index core point, and a border point
    joins the cluster of its lowest-index core neighbor.
    """
    X = np.asarray(X, dtype=np.float64)
    k = X.shape[0]
    neighbors = (cdist(X, X) if dist is None else dist) <= eps
    core = neighbors.sum(axis=1) >= min_pts
    labels = np.full(k, NOISE, dtype=np.int64)
    core_adj = neighbors & core[None, :]

    cluster = 0
    for i in range(k):
        if not core[i] or labels[i] != NOISE:
            continue
        labels[i] = cluster
        stack = [i]
        while stack:
            p = stack.pop()
            for q in np.flatnonzero(core_adj[p]):
                if labels[q] == NOISE:
                    labels[q] = cluster
                    stack.append(q)
        cluster += 1

    for i in np.flatnonzero(~core):
        reach = np.flatnonzero(core_adj[i])
        if reach.size:
            labels[i] = labels[reach[0]]
    return labels, core


class DBSCAN(ClusterMixin, BaseEstimator):
    """DBSCAN with deterministic border assignment.

    Parameters
    ----------
    eps : float or None
        Neighborhood radius. ``None`` picks it from the data with
        :func:`adaptive_eps`.
    min_pts : int
        Neighbors (self included) needed for a core point.

    Attributes
    ----------
    labels_ : ndarray of shape (n_samples,)
        Cluster index per sample, ``-1`` for noise.
    core_sample_indices_ : ndarray
    eps_ : float
        Radius actually used.
    """

    def __init__(self, eps=None, min_pts=5):
        self.eps = eps
        self.min_pts = min_pts

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64)
        if self.min_pts < 1:
            raise ValueError(f"min_pts must be >= 1, got {self.min_pts}")
        dist = cdist(X, X)
        self.eps_ = adaptive_eps(X, self.min_pts, dist) if self.eps is None else float(self.eps)
        self.labels_, core = dbscan_labels(X, self.eps_, self.min_pts, dist)
        self.core_sample_indices_ = np.flatnonzero(core)
        return self

    @property
    def n_clusters_(self) -> int:
        check_is_fitted(self, "labels_")
        return int(self.labels_.max()) + 1 if self.labels_.size else 0


def dbscan(points, params: ClusterParams) -> ClusterSet:
    est = DBSCAN(eps=params.eps, min_pts=params.min_pts).fit(points)
    return ClusterSet.from_labels(est.labels_)


def feature_vectors(perturbations: np.ndarray, costs: np.ndarray, noise_std: np.ndarray,
                    cost_scale: float) -> np.ndarray:
    """Rows of ``[dU / sigma (flattened), cost_scale * normalized cost]``."""
    perturbations = np.asarray(perturbations, dtype=np.float64)
    k = perturbations.shape[0]
    flat = (perturbations / noise_std).reshape(k, -1)
    costs = np.asarray(costs, dtype=np.float64)
    lo, hi = costs.min(), costs.max()
    return np.column_stack([flat, cost_scale * (costs - lo) / (hi - lo + 1e-12)])


def feature_vector(perturbation, cost: float, cost_min: float, cost_max: float, noise_std,
                   cost_scale: float) -> np.ndarray:
    flat = (np.asarray(perturbation, dtype=np.float64) / noise_std).ravel()
    return np.append(flat, cost_scale * (cost - cost_min) / (cost_max - cost_min + 1e-12))


@dataclass
class ClusterCandidate:
    sequence: np.ndarray
    cost: float
    max_violation: float
    feasible: bool
    members: np.ndarray
    min_member_cost: float
    rollout: np.ndarray | None = field(default=None, repr=False)


def cluster_mppi_update(nominal, perturbations, costs, members, lam: float) -> np.ndarray:
    """Softmax-weighted update over one cluster's samples (baseline = cluster minimum)."""
    members = np.asarray(members)
    if members.size == 0:
        raise ValueError("cannot update from an empty cluster")
    w = softmax_weights(np.asarray(costs)[members], lam)
    return weighted_update(nominal, np.asarray(perturbations)[members], w)


def select_optimal(candidates: list[ClusterCandidate], prefer_feasible: bool = False,
                   by: str = "rollout") -> int:
    """Index of the candidate to execute.

    Lowest evaluated cost wins (or lowest member cost with
    ``by="cluster_min_cost"``); ties go to the lower index. With
    ``prefer_feasible`` any candidate whose rollout satisfies the constraints
    beats every candidate that does not.
    """
    if not candidates:
        raise ValueError("no cluster candidates to select from")
    def key(i):
        c = candidates[i]
        score = c.cost if by == "rollout" else c.min_member_cost
        return (prefer_feasible and not c.feasible, score, i)
    return min(range(len(candidates)), key=key)


class CSCMPPIController:
    """Projected sampling with cluster-wise averaging.

    ``use_dbscan=False`` gives the ablation that averages all projected
    samples at once.
    """

    soft_constraints = False

    def __init__(self, params: MppiParams, model: DynamicsModel, cost_cfg: CostConfig,
                 constraints: ConstraintSet, projection: ProjectionParams | None = None,
                 clustering: ClusterParams | None = None, use_dbscan: bool = True):
        self.params = params
        self.model = model
        self.cost_cfg = cost_cfg
        self.constraints = constraints
        self.projection = projection or ProjectionParams()
        self.clustering = clustering or ClusterParams()
        self.use_dbscan = use_dbscan

    @property
    def feasibility_tol(self) -> float:
        return self.projection.tol_violation

    def _candidate(self, seq, members, costs, x0, centers, radii, nominal) -> ClusterCandidate:
        states, cost, viol = evaluate_sequence(seq, x0, self.model, self.cost_cfg, self.params.cov,
                                               centers, radii, nominal=nominal)
        return ClusterCandidate(seq, cost, viol, viol <= self.feasibility_tol + 1e-6,
                                np.asarray(members), float(np.min(costs[members])), states)

    def step(self, x0, nominal, seed: int, t0: float = 0.0, keep_batch: bool = False):
        p, proj = self.params, self.projection
        x0 = np.asarray(x0.as_array() if hasattr(x0, "as_array") else x0, dtype=np.float64)
        centers, radii = self.constraints.track(t0, p.dt, p.N)

        raw = generate_batch(nominal, p, self.model, x0, seed)
        batch, report = project_batch(raw, x0, self.constraints, self.model, proj, t0)
        batch.costs = batch_costs(batch.rollouts, batch.nominal, batch.perturbed, self.cost_cfg,
                                  p.cov, False)
        costs = batch.costs

        all_idx = np.arange(batch.K)
        labels = None
        fallback = None
        if self.use_dbscan:
            c = self.clustering
            scale = c.cost_scale if c.cost_scale is not None else math.sqrt(p.N * 2)
            # samples the projection could not repair are pushed toward the noise set
            viol = np.maximum(report.max_violation, 0.0)
            feat_costs = costs + np.where(viol > proj.tol_violation,
                                          self.cost_cfg.collision_penalty * viol / proj.tol_violation, 0.0)
            X = feature_vectors(batch.perturbations, feat_costs, p.cov.std, scale)
            est = DBSCAN(eps=c.eps, min_pts=c.min_pts).fit(X)
            labels = est.labels_
            groups = ClusterSet.from_labels(labels).clusters
            if not groups:
                fallback = c.fallback
                groups = [all_idx] if c.fallback == "all_samples" else [np.array([int(np.argmin(costs))])]
        else:
            groups = [all_idx]

        candidates = [
            self._candidate(cluster_mppi_update(batch.nominal, batch.perturbations, costs, g, p.lam),
                            g, costs, x0, centers, radii, batch.nominal)
            for g in groups
        ]
        if self.use_dbscan:
            c = self.clustering
            best = select_optimal(candidates, c.prefer_feasible, c.selection)
            if c.prefer_feasible and not candidates[best].feasible:
                pool = np.concatenate(groups)
                ok = pool[report.converged[pool] & (report.max_violation[pool] <= proj.tol_violation)]
                if ok.size:
                    k = int(ok[np.argmin(costs[ok])])
                    candidates.append(self._candidate(batch.perturbed[k], np.array([k]), costs, x0,
                                                      centers, radii, batch.nominal))
                    best = len(candidates) - 1
                    fallback = "feasible_member"
        else:
            best = 0
        chosen = candidates[best]

        w = softmax_weights(costs, p.lam)
        diag = StepDiagnostics(
            min_cost=float(batch.costs.min()), mean_cost=float(batch.costs.mean()),
            ess=effective_sample_size(w), selected_cost=chosen.cost,
            selected_rollout=chosen.rollout, selected_max_violation=chosen.max_violation,
            selected_feasible=chosen.feasible,
            n_clusters=len(groups) if (self.use_dbscan and fallback not in FALLBACKS) else 0,
            noise_count=int(np.sum(labels == NOISE)) if labels is not None else 0,
            cluster_sizes=[len(g) for g in groups], cluster_costs=[c.cost for c in candidates],
            labels=labels, projection_converged=int(report.converged.sum()),
            projection_mean_sweeps=float(report.sweeps.mean()), fallback=fallback,
            batch=batch if keep_batch else None,
        )
        return chosen.sequence, diag


def csc_mppi_step(x0, nominal, params: MppiParams, model: DynamicsModel, cost_cfg: CostConfig,
                  constraints: ConstraintSet, seed: int, projection: ProjectionParams | None = None,
                  clustering: ClusterParams | None = None, t0: float = 0.0):
    ctrl = CSCMPPIController(params, model, cost_cfg, constraints, projection, clustering)
    return ctrl.step(x0, nominal, seed, t0)

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from sklearn.base import clone
from sklearn.cluster import DBSCAN as SklearnDBSCAN

from cscmppi.clustering import (DBSCAN, NOISE, ClusterCandidate, ClusterParams, ClusterSet,
                                CSCMPPIController, adaptive_eps, cluster_mppi_update, csc_mppi_step,
                                dbscan, feature_vector, feature_vectors, select_optimal)
from cscmppi.core import Control, ControlBounds, NoiseCovariance, State
from cscmppi.costs import ConstraintSet, CostConfig, constraint_values
from cscmppi.dynamics import DiffDriveModel, Obstacle
from cscmppi.mppi import MppiParams
from cscmppi.sim import builtin_environment

from .oracles import brute_force_dbscan, partition_of, random_instance

MODEL = DiffDriveModel(0.03)
BOUNDS = ControlBounds(Control(0.0, -3.0), Control(0.5, 3.0))


def test_identical_points_form_one_cluster():
    cs = dbscan(np.ones((10, 4)), ClusterParams(min_pts=5))
    assert cs.M == 1 and len(cs.clusters[0]) == 10 and cs.noise.size == 0


def test_isolated_point_is_noise():
    X = np.array([[0.0], [0.1], [0.2], [10.0]])
    labels = DBSCAN(eps=0.15, min_pts=2).fit(X).labels_
    assert labels[3] == NOISE and labels[0] == labels[1] == labels[2] == 0


def test_two_blobs_against_oracle():
    rng = np.random.default_rng(0)
    X = np.vstack([rng.normal(0, 0.05, (20, 3)), rng.normal(5, 0.05, (20, 3))])
    est = DBSCAN(eps=0.5, min_pts=4).fit(X)
    assert est.n_clusters_ == 2
    assert partition_of(est.labels_) == brute_force_dbscan(X, 0.5, 4)
    assert partition_of(est.labels_)[0] == {frozenset(range(20)), frozenset(range(20, 40))}


@pytest.mark.parametrize("seed", range(30))
def test_matches_oracle_random(seed):
    rng = np.random.default_rng(1000 + seed)
    X = random_instance(rng)
    min_pts = int(rng.integers(1, 8))
    eps = adaptive_eps(X, min_pts) * rng.uniform(0.5, 1.5)
    est = DBSCAN(eps=eps, min_pts=min_pts).fit(X)
    assert partition_of(est.labels_) == brute_force_dbscan(X, eps, min_pts)


@pytest.mark.parametrize("seed", range(10))
def test_core_partition_matches_sklearn(seed):
    rng = np.random.default_rng(seed)
    X = random_instance(rng, k_max=80, d_max=10)
    # adaptive eps equals a pairwise distance; nudge it off so both libraries' rounding agree
    eps = adaptive_eps(X, 5) * (1 + 1e-9)
    ours = DBSCAN(eps=eps, min_pts=5).fit(X)
    ref = SklearnDBSCAN(eps=eps, min_samples=5).fit(X)
    np.testing.assert_array_equal(ours.core_sample_indices_, ref.core_sample_indices_)
    core = ours.core_sample_indices_
    assert partition_of(ours.labels_[core]) == partition_of(ref.labels_[core])
    np.testing.assert_array_equal(ours.labels_ == NOISE, ref.labels_ == -1)


@pytest.mark.parametrize("seed", range(10))
def test_permutation_invariance_of_core_memberships(seed):
    rng = np.random.default_rng(50 + seed)
    X = random_instance(rng, k_max=60, d_max=8)
    eps = adaptive_eps(X, 4)
    perm = rng.permutation(len(X))
    a = DBSCAN(eps=eps, min_pts=4).fit(X)
    b = DBSCAN(eps=eps, min_pts=4).fit(X[perm])
    core = a.core_sample_indices_
    inv = np.argsort(perm)
    labels_b = b.labels_[inv]
    assert partition_of(a.labels_[core]) == partition_of(labels_b[core])
    np.testing.assert_array_equal(a.labels_ == NOISE, labels_b == NOISE)


def test_cluster_set_is_partition():
    rng = np.random.default_rng(3)
    X = random_instance(rng)
    cs = dbscan(X, ClusterParams())
    idx = np.concatenate(cs.clusters + [cs.noise])
    assert sorted(idx.tolist()) == list(range(len(X)))


def test_border_point_goes_to_lowest_core():
    # point 4 sits between two clusters and is a border point of both
    X = np.array([[0.0], [0.1], [0.2], [2.2], [1.2], [2.3], [2.4]])
    labels = DBSCAN(eps=1.0, min_pts=3).fit(X).labels_
    assert labels[4] == labels[0]


def test_estimator_api():
    est = DBSCAN(min_pts=3)
    params = est.get_params()
    assert params == {"eps": None, "min_pts": 3}
    c = clone(est)
    assert c.min_pts == 3 and not hasattr(c, "labels_")
    labels = est.fit_predict(np.ones((5, 2)))
    assert np.all(labels == 0)
    assert est.eps_ > 0


def test_feature_vector_examples():
    costs = np.array([2.0, 2.0, 2.0])
    X = feature_vectors(np.zeros((3, 4, 2)), costs, np.array([0.1, 1.0]), 5.0)
    assert np.all(X[:, -1] == 0)
    assert np.all(feature_vector(np.zeros((4, 2)), 1.0, 1.0, 3.0, [0.1, 1.0], 5.0) == 0)
    dU = np.ones((2, 4, 2))
    X = feature_vectors(dU, np.array([1.0, 3.0]), np.array([0.1, 1.0]), 7.0)
    assert np.linalg.norm(X[0] - X[1]) == pytest.approx(7.0, rel=1e-9)


def test_cluster_update_examples():
    nominal = np.zeros((3, 2))
    pert = np.arange(18.0).reshape(3, 3, 2)
    np.testing.assert_array_equal(cluster_mppi_update(nominal, pert, np.zeros(3), [1], 0.5), pert[1])
    np.testing.assert_allclose(cluster_mppi_update(nominal, pert, np.ones(3), [0, 2], 0.5),
                               (pert[0] + pert[2]) / 2)
    lam = 0.3
    w = np.array([1, math.exp(-1), math.exp(-2)])
    w /= w.sum()
    out = cluster_mppi_update(nominal, pert, np.array([0, lam, 2 * lam]), [0, 1, 2], lam)
    np.testing.assert_allclose(out, np.tensordot(w, pert, axes=1))
    with pytest.raises(ValueError):
        cluster_mppi_update(nominal, pert, np.zeros(3), [], lam)


def _cand(cost, feasible=True):
    return ClusterCandidate(np.full((2, 2), cost), cost, -1.0 if feasible else 1.0, feasible,
                            np.array([0]), cost)


def test_select_optimal_examples():
    assert select_optimal([_cand(4.0)]) == 0
    assert select_optimal([_cand(5.0), _cand(3.0)]) == 1
    assert select_optimal([_cand(3.0), _cand(3.0)]) == 0
    # feasibility first when asked
    assert select_optimal([_cand(1.0, False), _cand(3.0)], prefer_feasible=True) == 1
    assert select_optimal([_cand(1.0, False), _cand(3.0)], prefer_feasible=False) == 0


def test_cluster_params_validation():
    with pytest.raises(ValueError):
        ClusterParams(min_pts=0)
    with pytest.raises(ValueError):
        ClusterParams(fallback="drop")
    with pytest.raises(ValueError):
        ClusterParams(eps=-1.0)


def test_cluster_set_from_labels():
    cs = ClusterSet.from_labels([0, -1, 1, 0])
    assert cs.M == 2 and cs.noise.tolist() == [1]


def _env2_controller(**kw):
    sc = builtin_environment("env2")
    return sc, CSCMPPIController(sc.mppi, MODEL, sc.cost_config, sc.constraints, sc.projection,
                                 sc.clustering, **kw)


def test_env2_step_selected_rollout_feasible():
    sc, ctrl = _env2_controller()
    u, diag = ctrl.step(sc.start.as_array(), np.zeros((30, 2)), seed=0)
    c, r = sc.constraints.track(0.0, 0.03, 30)
    assert constraint_values(MODEL.rollout_array(sc.start.as_array(), u), c, r).max() <= 1e-3 + 1e-6
    assert diag.selected_feasible
    assert diag.n_clusters >= 1
    assert sum(diag.cluster_sizes) + diag.noise_count == 300


@given(st.lists(st.tuples(st.floats(-1e3, 1e3), st.booleans()), min_size=1, max_size=12))
def test_select_optimal_argmin_property(entries):
    cands = [_cand(c, f) for c, f in entries]
    best = select_optimal(cands)
    assert all(cands[best].cost <= c.cost for c in cands)
    best = select_optimal(cands, prefer_feasible=True)
    pool = [c for c in cands if c.feasible] or cands
    assert any(cands[best] is c for c in pool) and all(cands[best].cost <= c.cost for c in pool)


def test_tiny_noise_no_obstacles_keeps_nominal():
    p = MppiParams(K=30, N=10, cov=NoiseCovariance(1e-9, 1e-9))
    cfg = CostConfig(State(0.3, 0.0, 0.0))
    nominal = np.tile([0.25, 0.0], (10, 1))
    u, _ = csc_mppi_step(np.zeros(3), nominal, p, MODEL, cfg, ConstraintSet((), BOUNDS), seed=0)
    np.testing.assert_allclose(u, nominal, atol=1e-8)


def test_csc_step_deterministic():
    sc, ctrl = _env2_controller()
    a, _ = ctrl.step(sc.start.as_array(), np.zeros((30, 2)), seed=5)
    b, _ = ctrl.step(sc.start.as_array(), np.zeros((30, 2)), seed=5)
    assert a.tobytes() == b.tobytes()


def test_all_noise_fallbacks():
    sc = builtin_environment("env2")
    x0 = sc.start.as_array()
    for fb in ("all_samples", "best_singleton"):
        params = ClusterParams(eps=1e-9, min_pts=2, fallback=fb)
        ctrl = CSCMPPIController(sc.mppi, MODEL, sc.cost_config, sc.constraints, sc.projection, params)
        u, diag = ctrl.step(x0, np.zeros((30, 2)), seed=1)
        assert diag.n_clusters == 0 and diag.fallback == fb and diag.noise_count == 300
        assert diag.cluster_sizes == ([300] if fb == "all_samples" else [1])


def test_ablation_uses_all_samples():
    sc, ctrl = _env2_controller(use_dbscan=False)
    u, diag = ctrl.step(sc.start.as_array(), np.zeros((30, 2)), seed=0)
    assert diag.cluster_sizes == [300] and diag.labels is None

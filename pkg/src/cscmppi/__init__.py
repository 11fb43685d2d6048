"""Sampling-based MPC with projected samples and cluster-wise averaging."""

from .clustering import DBSCAN, ClusterParams, CSCMPPIController, dbscan
from .core import Control, ControlBounds, NoiseCovariance, RngStream, State, wrap_angle
from .costs import ConstraintSet, CostConfig, QuadraticWeights
from .dynamics import DiffDriveModel, Obstacle
from .mppi import MPPIController, MppiParams
from .projection import ProjectionParams, project_batch
from .sim import Scenario, builtin_environment, run_benchmark, run_episode

__all__ = [
    "CSCMPPIController", "ClusterParams", "ConstraintSet", "Control", "ControlBounds",
    "CostConfig", "DBSCAN", "DiffDriveModel", "MPPIController", "MppiParams", "NoiseCovariance",
    "Obstacle", "ProjectionParams", "QuadraticWeights", "RngStream", "Scenario", "State",
    "builtin_environment", "dbscan", "project_batch", "run_benchmark", "run_episode", "wrap_angle",
]

"""Touchscreen-feedback calibration of a robot arm against an emulated real robot.

The package splits into kinematics (FK, Jacobian, DLS IK), an emulator that
stands in for the physical arm and touchscreen, the calibration models
(M1 piecewise linear, M2/M3 learned), the six-step pipeline and a CLI.
"""

from .calibration import AffineScreenMap, HeightGrid, Region, interp_height, m1_predict
from .emulator import PerturbationConfig, RealWorldEmulator, Screen, build_real_world
from .kinematics import (
    ContractError,
    IkParams,
    KinematicChain,
    NoConvergence,
    forward_kinematics,
    jacobian,
    load_chain,
    solve_ik,
)
from .neural import Mlp, NetModel, TrainConfig, cross_validate, train_adam
from .pipeline import Scene, load_scene, run_full_procedure

__version__ = "0.1.0"

__all__ = [
    "AffineScreenMap", "HeightGrid", "Region", "interp_height", "m1_predict",
    "PerturbationConfig", "RealWorldEmulator", "Screen", "build_real_world",
    "ContractError", "IkParams", "KinematicChain", "NoConvergence",
    "forward_kinematics", "jacobian", "load_chain", "solve_ik",
    "Mlp", "NetModel", "TrainConfig", "cross_validate", "train_adam",
    "Scene", "load_scene", "run_full_procedure",
]

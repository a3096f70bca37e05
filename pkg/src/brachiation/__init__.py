"""Trajectory optimization and MPC tracking lab for a planar four-link brachiation robot."""

from .model import (DynTerms, LinearizedPlant, RobotParams, dyn_terms, ee_jacobian,
                    fk_ee, fk_points, forward_dynamics, linearize,
                    mechanical_energy)
from .collision import (ClearanceReport, Obstacle, Segment, clearance_all,
                        link_capsule, point_segment_distance,
                        segment_segment_distance)
from .qpsolve import QpOptions, QpProblem, QpSolution, qp_solve
from .sqp import NlpProblem, NlpSolution, SqpOptions, sqp_solve
from .trajopt import (CollocConfig, DenseTrajectory, PlanningError, Trajectory,
                      densify, plan, seed_trajectory, swing_time, transcribe,
                      trajectory_energy)
from .mpc import MpcConfig, MpcStepResult, MpcTracker, build_prediction, condense
from .harness import (ClosedLoopLog, Disturbance, SimConfig, SweepResult,
                      run_avoidance, run_disturbance, run_sweep, run_tracking,
                      simulate_step)

__version__ = "0.1.0"

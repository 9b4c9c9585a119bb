"""Simulation and control of a size-morphing quadrotor."""
from .baselines import LqrConfig, PidGains, lqr_control, pid_control, solve_dare
from .calibration import CalibrationTargets, RingLayout, calibrate_layout
from .dynamics import ControlInput, ExternalWrench, State, state_derivative, step_rk4
from .errors import (
    CalibrationError,
    ControllerError,
    DomainError,
    IntegrationDivergedError,
    InvalidConfigError,
    InvalidGeometryError,
    MorphQuadError,
    SolverError,
)
from .geometry import MorphGeometry, Payload, VehicleProperties, allocation_matrix, total_inertia
from .harness import Scenario, compare_controllers, gap_crossing_scenario, run_scenario
from .nmpc import NmpcConfig, NmpcSolution, ReferenceWindow, cost, linearize_dynamics, quaternion_error, solve
from .reference import figure8_reference
from .servo import ServoParams, servo_command, servo_step

__version__ = "0.1.0"

"""Reversible-irreversible port-Hamiltonian systems: modelling, simulation,
energy/entropy optimal control, turnpikes and receding-horizon control."""

from .core import (
    GasPistonParams,
    HeatExchangerParams,
    ModelSpec,
    availability,
    eval_drift,
    eval_outputs,
    eval_rhs,
    exergy,
    make_gas_piston,
    make_heat_exchanger,
)
from .ivp import ControlSignal, Trajectory, balance_report, integrate
from .mpc import MpcConfig, run_mpc
from .ocp import OcpSpec, SolverOptions, solve_ocp
from .turnpike import TurnpikePoint, solve_turnpike
from .verify import estimate_growth_constant, radial_probe

__version__ = "0.1.0"

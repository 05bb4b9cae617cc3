"""Hybrid optimal control of follicle maturation with Dirac-mass ensembles.

The package is organised as

``model``        parameters, velocities, step controls and closed-form flows
``dynamics``     semi-analytic Dirac-mass trajectories and the terminal cost
``adjoint``      costates with crossing jumps and the bang-bang certificate
``transport``    initial measures, pushforward and the Dirac limit
``optimize``     switching-time sweep, refinement and random falsification
``regularized``  mollified gain and the smooth approximating problems
``cli``          command-line experiments
"""
__version__ = "0.1.0"

from .model import (Control, ModelError, ModelParams, asymptotic_maturity, exit_time, gain_c,
                    maturation_flow, table1, velocity_a, velocity_b)
from .dynamics import Ensemble, Particle, Trajectory, cost_J, maturity_moment, simulate
from .adjoint import (ExactAdjoint, backward_adjoint, certify_bang_bang, hamiltonian,
                      switching_function)
from .transport import (InitialMeasure, cost_measure, discretize, duality_check,
                        exit_time_continuity_probe, pushforward_integrate)
from .optimize import falsify_with_step_controls, refine, sweep
from .regularized import (Mollifier, RegularizedProblem, adjoint_regularized, jump_bracket_convergence,
                          simulate_regularized, smooth_gain)

__all__ = [
    "Control", "ModelError", "ModelParams", "asymptotic_maturity", "exit_time", "gain_c",
    "maturation_flow", "table1", "velocity_a", "velocity_b",
    "Ensemble", "Particle", "Trajectory", "cost_J", "maturity_moment", "simulate",
    "ExactAdjoint", "backward_adjoint", "certify_bang_bang", "hamiltonian", "switching_function",
    "InitialMeasure", "cost_measure", "discretize", "duality_check", "exit_time_continuity_probe",
    "pushforward_integrate",
    "falsify_with_step_controls", "refine", "sweep",
    "Mollifier", "RegularizedProblem", "adjoint_regularized", "jump_bracket_convergence",
    "simulate_regularized", "smooth_gain",
]

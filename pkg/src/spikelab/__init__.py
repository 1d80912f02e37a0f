"""Spike solutions of ``-div(a grad u) + a u = a u^p`` with Neumann data.

Finite element Green's functions, the concentration parameter system, the
spike ansatz, the reduced energy landscape and full Newton verification.
"""
from .bubble import constants, omega1, omega2_profile, solve_omega2, standard_bubble
from .geometry import DomainGeometry, GeometryError
from .greens import GreenCache, GreensError, SourceKind, regular_part, robin_function
from .mu_solver import SpikeConfig, limit_mu, solve_mu
from .ansatz import AnsatzField, build_ansatz
from .reduced_energy import (ClusteredObjective, LandscapePoint, SeparatedObjective,
                             energy_expansion, energy_quadrature, find_critical_clustered,
                             find_critical_separated)
from .pde_verify import SolutionField, continuation_in_p, lift_identity_check, newton_solve, spike_metrics

__version__ = "0.1.0"

__all__ = [
    "AnsatzField", "ClusteredObjective", "DomainGeometry", "GeometryError", "GreenCache",
    "GreensError", "LandscapePoint", "SeparatedObjective", "SolutionField", "SourceKind",
    "SpikeConfig", "build_ansatz", "constants", "continuation_in_p", "energy_expansion",
    "energy_quadrature", "find_critical_clustered", "find_critical_separated",
    "lift_identity_check", "limit_mu", "newton_solve", "omega1", "omega2_profile",
    "regular_part", "robin_function", "solve_mu", "solve_omega2", "spike_metrics",
    "standard_bubble",
]

"""Multi-stage complex contagions on networks.

Nodes move monotonically through stages S0 < S1 < S2 under peer pressure
``(m1 + beta * m2) / k``. The package simulates the dynamics, evaluates the
tree approximation for activation densities and maps cascade boundaries.
"""

from __future__ import annotations

from types import ModuleType as _ModuleType

__version__ = "0.1.0"

from .cascade import (BoundaryCurve, BoundaryPoint, CascadeCondition, Diagram, Equilibrium, ModelPoint,
                      ReducedMap, cascade_condition, condition_boundary, continue_saddle_node,
                      find_equilibrium, jacobian_condition, locate_saddle_node, origin_jacobian,
                      partials_at_zero, saddle_node_residual, solve_saddle_node, sweep_diagram)
from .contagion import (ConfigError, IsolatedNodeError, ResponseSpec, SimConfig, SimState, Stage,
                        StageChange, Threshold, TimeSeries, UpdateMode, final_state_oracle,
                        peer_pressure, response, run, seed, update_node)
from .graph import (DegreeDistribution, EdgeListError, EdgeListWarning, Graph, GraphConstructionError,
                    JointDegreeDistribution, UndefinedDistributionError, assortativity,
                    degree_distribution, generate_config_model, generate_correlated, generate_er,
                    joint_degree_distribution, load_edge_list, save_edge_list)
from .theory import (ConvergenceError, IntegrationError, ModelInputs, SyncResult, TheoryState, aggregate,
                     binomial_pmf, config_model_step, gap, integrate_ode, iterate_sync, qbar,
                     update_q, update_rho)

__all__ = sorted(name for name, obj in globals().items()
                 if not name.startswith("_") and name != "annotations" and not isinstance(obj, _ModuleType))

"""Exact finite Markov-game oracle."""

from mpgmerge.tabular.game import (AccuracyWarning, DirectPolicy, StructureError,
                                   TabularGame, exact_value_functions,
                                   exploitability, policy_gradient,
                                   random_policy, total_reward, uniform_policy,
                                   value_iteration,
                                   verify_transition_independence,
                                   visitation_measure)
from mpgmerge.tabular.gradient_play import (GradientPlayResult,
                                            all_policy_gradients,
                                            tabular_gradient_play)
from mpgmerge.tabular.potentials import (MpgReport, StatePotential,
                                         build_mixed_potential,
                                         build_pairwise_potential,
                                         build_self_potential, verify_mpg)
from mpgmerge.tabular.projection import project_rows, simplex_projection

__all__ = ["AccuracyWarning", "DirectPolicy", "StructureError", "TabularGame",
           "exact_value_functions", "exploitability", "policy_gradient", "random_policy",
           "total_reward", "uniform_policy", "value_iteration", "verify_transition_independence",
           "visitation_measure", "GradientPlayResult", "all_policy_gradients",
           "tabular_gradient_play", "MpgReport", "StatePotential", "build_mixed_potential",
           "build_pairwise_potential", "build_self_potential", "verify_mpg", "project_rows",
           "simplex_projection"]

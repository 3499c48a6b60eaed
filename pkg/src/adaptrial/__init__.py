"""Simulation and estimation for sequential adaptive experiments."""
from .core import (AdaptrialError, DesignFunction, FittingError, NumericalError, Observation,
                   PositivityError, Trajectory, UsageError, average_design, positivity_check,
                   read_trajectory_csv, write_trajectory_csv)
from . import designs  # noqa: F401  registers design kinds
from .dgp import (Scenario, appendix_b_scenario, constant_effect_scenario, multisite_scenario,
                  null_effect_scenario, oracle_neyman, sample_outcome, true_ate)
from .estimators import (EstimateReport, ad_tmle, adl_tmle, aipw_ad, aipw_adl, estimate_all,
                         scale_to_unit, tmle_fluctuate)
from .harness import (McConfig, McMetrics, design_convergence_trajectory, jensen_gap,
                      population_eic_second_moment, run_experiment, run_monte_carlo)
from .learners import (OutcomeModel, fit_cate_dr, fit_conditional_variance,
                       fit_outcome_regression)

__version__ = "0.1.0"

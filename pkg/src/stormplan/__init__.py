"""Storm-resilience planning for radial distribution feeders.

Forecast track -> wind field -> line failure probabilities -> failure
scenarios -> two-stage stochastic MIP choosing DER sites, repair schedules
and microgrid dispatch.
"""

from .errors import (FeederError, InfeasibleModelError, InputError, MissingDataError, NumericalError,
                     OutOfRangeError, ScenarioShortfallError, SolverLimitError, StormPlanError)
from .failures import FailureScenario, NhppParams, poisson_rate, select_scenarios
from .network import DerSpec, Feeder, Line, Node, islands, validate_feeder
from .saa import (ResilienceSeries, SaaSolution, SolverOptions, curve_of, evaluate_second_stage,
                  failure_probabilities, failure_statistics, resilience_curve, run_pipeline, solve_saa, sweep,
                  system_performance)
from .stage2 import Allocation, ResourceLimits, build_saa_mip, build_second_stage, horizon_K
from .wind import Grid, GridCell, StormTrack, holland_velocity, wind_field_at

__version__ = "0.1.0"

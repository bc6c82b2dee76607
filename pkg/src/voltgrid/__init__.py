"""voltgrid: sensitivity-coefficient estimation and robust PV dispatch.

The package simulates a distribution feeder, corrupts its measurements
with instrument-transformer noise, tracks voltage sensitivity
coefficients online with interval estimates, and dispatches PV
active/reactive power through a (optionally interval-robust) QP so
nodal voltages stay inside their band.
"""

from .version import __version__
from .errors import (ConfigError, EstimationError, InfeasibleError,
                     LoadFlowError, ModelError, NumericalError, VoltgridError)
from .network import (Branch, GridState, NetworkModel, SensitivityMatrix,
                      build_admittance, build_network,
                      finite_difference_sensitivities, load_builtin,
                      load_network, solve_load_flow, true_sensitivities)
from .noise import (IT_CLASSES, ItClass, MeasurementSample, corrupt_sample,
                    it_class, synthesize_dataset)
from .estimators import (VARIANTS, CoefficientEstimate, EstimatorParams,
                         EstimatorState, RegressorWindow,
                         build_regressor_window, coefficient_intervals,
                         ls_estimate, rls_step, rls_step_ct, rls_step_df,
                         rls_step_f, rls_step_sf)
from .dispatch import (ControlDecision, PvPlant, QpProblem,
                       VoltageConstraintSet, apply_decision, build_nonrobust,
                       build_robust, solve_qp)
from .metrics import (IntervalSeries, control_report, cwc, interval_metrics,
                      picp, pinaw, rmse)
from .profiles import (ProfileSet, excitation_profiles, load_profiles,
                       save_profiles, synthesize_profiles)
from .config import ScenarioConfig, config_from_dict, load_config, override
from .scenario import (RunManifest, RunResult, compare_runs,
                       estimation_benchmark, generate_dataset, run_scenario,
                       runs_byte_identical, write_comparison)

__all__ = [name for name in dir() if not name.startswith("_")]

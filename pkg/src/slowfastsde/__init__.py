"""Simulation and verification toolkit for slow-fast SDEs with
time-periodic fast dynamics.

The package computes random periodic solutions of the fast subsystem by
pullback, builds their empirical periodic measures on Poincare sections,
constructs the averaged slow equation by two independent routes, and
verifies the whole chain against closed-form oracles.  See the README for
the command-line interface.
"""

__version__ = "0.1.0"

from .errors import (ConfigError, ConvergenceError, Error, ExtrapolationError,
                     GridAlignmentError, NumericalBlowupError)
from .noise import BrownianPath, TimeGrid, derive_seed, grid_steps, make_path, shift
from .sde_core import (LiftedState, SlowFastSystem, Trajectory, VectorField,
                       lifted_flow, lifted_state, simulate_fast,
                       simulate_slow_fast, validate_system)
from .catalog import (ToyParams, build_system, linear_test, ou_periodic,
                      polynomial_system, random_polynomial_system,
                      toy_turbulence)
from .benchmarks import (ou_oracle_truncation_bound, ou_random_periodic_oracle,
                         toy_averaged_drift, toy_fast_variance,
                         toy_section_mean, toy_v, toy_v2_integral)
from .pullback import (PeriodicSolutionEstimate, PeriodicityReport,
                       StabilityReport, pullback_ensemble, pullback_solve,
                       stability_probe, verify_random_periodicity)
from .measures import (CylinderBox, CylinderMetric, EmpiricalMeasure, KBCurve,
                       bl_distance, empirical_periodic_measure, evolve_measure,
                       krylov_bogolyubov_curve, measure_lipschitz_probe,
                       poincare_section_check, section_measures, time_average)
from .diagnostics import (ContractionReport, DissipativityReport,
                          LyapunovHandle, SemigroupProbe, clipped_identity,
                          coupling_rate, default_lyapunov,
                          dissipativity_constants, hormander_rank, lie_bracket,
                          semigroup_continuity_probe, sigma_column_fields)
from .averaging import (AveragedDriftTable, AveragingErrorReport,
                        PartitionScheme, auxiliary_process,
                        averaged_drift_ergodic, averaged_drift_measure,
                        averaging_error_study, build_drift_table,
                        hasminskii_partition, solve_averaged_ode)
from .config import ExperimentConfig, load_config

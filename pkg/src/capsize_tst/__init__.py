"""capsize-tst: transition-state tools for stochastic ship-roll capsize.

Three complementary routes to the same risk quantities:

* flux over a saddle (`saddle_flux`): dividing surfaces, stable-manifold
  tracing, and ensembles of first-crossing times;
* stochastic reachability (`tpt`, `mc_rare`): stationary density,
  committors, reactive density and transition rates, cross-checked by
  direct Monte Carlo;
* large deviations (`ldt_minimizer`): the Freidlin-Wentzell action, its
  minimizing path and the small-noise rate exponent.
"""

__version__ = "0.1.0"

from .core_model import (ConfigurationError, FilterSpec, FilterUnstableError,
                         RollModelParams, SystemSpec, couple_filter,
                         ou_stationary_covariance, toy_roll_system,
                         velocity_forcing_coupling)
from .integrate import (CrossingResult, DividingSurface, INFINITY,
                        IntegrationDivergedError, Path, first_crossing,
                        hyperplane_surface, integrate_ode, integrate_sde)
from .ldt_minimizer import (ActionResult, DiscretePath, action,
                            minimize_action, rate_asymptotic)
from .mc_rare import (TransitionRecord, committor_mc, merge_records,
                      reactive_histogram, sample_transitions,
                      survivability_mc)
from .noise import derive_seed
from .saddle_flux import (CapsizeStats, InitialSampler, SaddleInfo,
                          SaddleNotConvergedError, WrongIndexError,
                          capsize_time_ensemble, default_dividing_surface,
                          find_saddle, stable_manifold_2d)
from .tpt import (Ellipse, Grid2D, HalfPlane, RateEstimate, RegionSpec,
                  ScalarField, SolverError, band_exterior_region,
                  boltzmann_density, disk_region, halfplane_region,
                  reactive_density, solve_committor_backward,
                  solve_committor_forward, solve_stationary_density,
                  transition_rate_tpt)

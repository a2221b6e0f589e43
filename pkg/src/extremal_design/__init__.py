"""Extremal sampling design with generalized r-Pareto processes."""
from .domain import GriddedField, RiskFunctional, RiskKind, SpatialGrid, StationSeries, dist_to_boundary, risk_eval
from .variogram import (AnisotropyParams, Family, VariogramModel, extremogram_from_variogram,
                        variogram_eval, variogram_from_extremogram, variogram_matrix)
from .simulate import (MarginalModel, ParetoEnsemble, RejectionCapError, SimulationError,
                       simulate_angular, simulate_r_pareto, standardize, unstandardize)
from .fit import (EmpiricalExtremogram, FitError, GpdFit, LocationModelFit, PooledFit, empirical_extremogram,
                  fit_location_covariate, fit_scale_shape_pooled, fit_variogram_to_extremogram, gpd_fit_mle,
                  gpd_survival, qq_plot_data)
from .design import (DesignError, DesignState, ProcessConfig, boundary_effect_curves, forward_backward_refine,
                     reference_prob, reference_processes, sequential_design, sequential_design_stationary,
                     subset_discrepancy)

__version__ = "0.1.0"

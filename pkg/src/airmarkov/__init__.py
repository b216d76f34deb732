"""airmarkov: Markov-operator contaminant transport and sensor placement.

Builds finite-dimensional transfer operators (sparse row-stochastic
matrices) from 2D indoor flow fields, propagates contaminant densities with
matrix-vector products, and places sensors by greedy maximum coverage,
deterministically or under ensemble uncertainty.
"""

from .ensemble import (Ensemble, EnsemblePlacementResult, EnsembleTracking,
                       Realization, build_ensemble, ensemble_place,
                       expected_coverage_fraction, load_manifest,
                       probable_coverage_map, write_cell_csv, write_pgm)
from .errors import (FormatError, GeometryError, IntegrityError,
                     RealizationError, StabilityError)
from .estimators import GreedySensorSelector, MarkovPropagator
from .flowfield import (VelocityField, gen_channel_flow, gen_double_gyre,
                        grid_with_mapped_obstructions, load_field,
                        map_to_reference, write_field)
from .grid import CellSet, Grid, containing_cells, load_grid_config
from .markov import (MarkovMatrix, SensorConfig, build, inlet_release,
                     load_operator, observe, propagate, save_operator)
from .placement import (PlacementResult, ReleaseScenario, brute_force_place,
                        format_report, greedy_place, observability)
from .tracking import (TrackingMatrix, apply_location_constraint,
                       apply_sensing_constraint, load_tracking, save_tracking,
                       snap_steps, threshold, tracking_matrix, volume_weight)
from .transport import SourceTerm, cfl_dt, load_density, solve, step, write_density

__version__ = "0.1.0"

__all__ = [
    "CellSet", "Ensemble", "EnsemblePlacementResult", "EnsembleTracking",
    "FormatError", "GeometryError", "GreedySensorSelector", "Grid",
    "IntegrityError", "MarkovMatrix", "MarkovPropagator", "PlacementResult",
    "Realization", "RealizationError", "ReleaseScenario", "SensorConfig",
    "SourceTerm", "StabilityError", "TrackingMatrix", "VelocityField",
    "apply_location_constraint", "apply_sensing_constraint",
    "brute_force_place", "build", "build_ensemble", "cfl_dt",
    "containing_cells", "ensemble_place", "expected_coverage_fraction",
    "format_report", "gen_channel_flow", "gen_double_gyre", "greedy_place",
    "grid_with_mapped_obstructions", "inlet_release", "load_density", "load_field",
    "load_grid_config", "load_manifest", "load_operator", "load_tracking",
    "map_to_reference", "observability", "observe", "probable_coverage_map",
    "propagate", "save_operator", "save_tracking", "snap_steps", "solve",
    "step", "threshold", "tracking_matrix", "volume_weight", "write_cell_csv",
    "write_density", "write_field", "write_pgm",
]

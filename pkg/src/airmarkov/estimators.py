"""Scikit-learn style estimators wrapping the operator and placement modules.

These classes follow the fit/transform contract (``get_params`` and
``set_params`` via :class:`sklearn.base.BaseEstimator`), so the transport
operator and the sensor selector compose with pipelines, grid searches, and
the rest of the ecosystem.  The heavy lifting stays in the functional
modules; estimators only hold hyperparameters and fitted state.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from . import markov, placement
from .flowfield import VelocityField
from .tracking import TrackingMatrix
from .validation import check_density_batch


class MarkovPropagator(BaseEstimator, TransformerMixin):
    """Propagate contaminant densities with a fitted transfer operator.

    ``fit`` builds the sparse Markov operator from a velocity field (one
    transport solve per cell); ``transform`` advances density rows by
    ``n_steps`` Markov steps with sparse matrix-vector products.

    Parameters
    ----------
    diffusivity : float
        Diffusion coefficient (m^2/s).
    dt_markov : float
        Markov time step (s).
    n_steps : int
        Steps applied by :meth:`transform`.
    source : SourceTerm or None
        Release added after each product.
    workers : int
        Threads used while building rows.
    sparsity_floor : float
        Operator entries below this are dropped (mass folded back).

    Attributes
    ----------
    operator_ : MarkovMatrix
    n_states_ : int
        Physical cells plus the absorbing sink.
    """

    def __init__(self, diffusivity=1e-3, dt_markov=0.5, n_steps=1, source=None,
                 workers=1, sparsity_floor=markov.SPARSITY_FLOOR):
        self.diffusivity = diffusivity
        self.dt_markov = dt_markov
        self.n_steps = n_steps
        self.source = source
        self.workers = workers
        self.sparsity_floor = sparsity_floor

    def fit(self, X, y=None):
        """Build the operator from a :class:`VelocityField`."""
        if not isinstance(X, VelocityField):
            raise TypeError("MarkovPropagator.fit expects a VelocityField, "
                            f"got {type(X).__name__}")
        self.operator_ = markov.build(
            X.grid, X, self.diffusivity, self.dt_markov,
            workers=self.workers, sparsity_floor=self.sparsity_floor)
        self.n_states_ = self.operator_.n_states
        return self

    def transform(self, X):
        """Advance density rows (n_samples, n_cells[+1]) by n_steps.

        Rows without a sink entry are padded with a zero sink; the returned
        batch always carries the sink column, so total mass is visible.
        """
        check_is_fitted(self, "operator_")
        batch, _, single = check_density_batch(X, self.operator_.n_cells)
        out = markov.propagate(batch, self.operator_, self.n_steps, self.source)
        return out[0] if single else out

    def observe(self, X, sensor_cells):
        """Sensor readings for each density row."""
        check_is_fitted(self, "operator_")
        batch, _, single = check_density_batch(X, self.operator_.n_cells)
        readings = markov.observe(batch, markov.SensorConfig(np.asarray(sensor_cells)))
        return readings[0] if single else readings


class GreedySensorSelector(BaseEstimator, TransformerMixin):
    """Select sensor columns from an observability pattern by greedy
    maximum coverage.

    ``fit`` accepts a binary or volume-weighted :class:`TrackingMatrix`
    (or a plain (n_releases, n_cells) array) and stores the chosen sensor
    cells; ``transform`` selects the corresponding columns, mirroring
    feature selection.

    Parameters
    ----------
    n_sensors : int
        Sensors to place (fewer if coverage saturates).
    scenario : ReleaseScenario or None
        Release rows to cover (default: all).
    grid : Grid or None
        Supplies cell volumes for the covered fraction.

    Attributes
    ----------
    sensor_cells_ : list of int
    covered_fraction_ : float
    result_ : PlacementResult
    """

    def __init__(self, n_sensors=1, scenario=None, grid=None):
        self.n_sensors = n_sensors
        self.scenario = scenario
        self.grid = grid

    def fit(self, X, y=None):
        self.result_ = placement.greedy_place(X, self.n_sensors, self.scenario,
                                              grid=self.grid)
        self.sensor_cells_ = self.result_.sensor_cells
        self.covered_fraction_ = self.result_.covered_fraction
        self.n_features_in_ = (X.matrix.shape[1] if isinstance(X, TrackingMatrix)
                               else np.asarray(X).shape[1])
        return self

    def get_support(self, indices=False):
        """Mask (or indices) of the selected sensor columns."""
        check_is_fitted(self, "result_")
        if indices:
            return np.asarray(self.sensor_cells_, dtype=np.int64)
        mask = np.zeros(self.n_features_in_, dtype=bool)
        mask[self.sensor_cells_] = True
        return mask

    def transform(self, X):
        """Keep only the selected sensor columns of X."""
        check_is_fitted(self, "result_")
        matrix = X.matrix if isinstance(X, TrackingMatrix) else np.asarray(X)
        if matrix.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {matrix.shape[1]} columns, "
                             f"fitted on {self.n_features_in_}")
        out = matrix[:, self.sensor_cells_]
        return out.toarray() if hasattr(out, "toarray") else out

"""Input validation helpers shared by the estimators and module functions."""

from __future__ import annotations

import numpy as np


def check_density_batch(X, n_cells, *, allow_sink=True):
    """Coerce densities to a 2D float batch of n_cells or n_cells+1 columns.

    Returns ``(batch, had_sink, was_single)``.  Batches without a sink
    column are padded with a zero sink so operator propagation can track
    exited mass.
    """
    arr = np.asarray(X, dtype=float)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.ndim != 2:
        raise ValueError(f"expected a density vector or batch, got ndim={arr.ndim}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("densities must be finite")
    if arr.shape[1] == n_cells + 1 and allow_sink:
        return arr.copy(), True, single
    if arr.shape[1] == n_cells:
        padded = np.zeros((arr.shape[0], n_cells + 1))
        padded[:, :n_cells] = arr
        return padded, False, single
    raise ValueError(f"density rows must have {n_cells} (or {n_cells + 1} with sink) "
                     f"entries, got {arr.shape[1]}")


def check_weights(weights, n):
    """Nonnegative weights of length n with positive sum, normalized."""
    w = np.asarray(weights, dtype=float).reshape(-1)
    if w.size != n:
        raise ValueError(f"expected {n} weights, got {w.size}")
    if np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be finite and >= 0")
    total = w.sum()
    if total <= 0:
        raise ValueError("weights must sum to > 0")
    return w / total


def check_cell_indices(cells, n_cells):
    """Validated int64 array of in-range cell indices."""
    idx = np.asarray(cells, dtype=np.int64).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= n_cells):
        raise IndexError(f"cell indices must lie in [0, {n_cells})")
    return idx

"""Greedy sensor placement over tracking patterns, with a brute-force oracle.

A sensor at cell j observes every release row i whose pattern entry (i, j)
is nonzero.  Placement is maximum coverage: pick the column whose
(volume-weighted) score over the still-uncovered release rows is largest,
zero the rows it covers, repeat.  This greedy rule carries the standard
(1 - 1/e) approximation guarantee for the NP-hard set-cover objective; the
exhaustive search below serves as the optimality oracle on small instances.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from math import comb

import numpy as np
import scipy.sparse as sp

from .grid import CellSet
from .tracking import BINARY, VOLUME_WEIGHTED, TrackingMatrix

_BRUTE_FORCE_GUARD = 10 ** 6


@dataclass(frozen=True)
class ReleaseScenario:
    """Selection of release rows the sensors must cover."""

    rows: np.ndarray

    def __post_init__(self):
        rows = np.unique(np.asarray(self.rows, dtype=np.int64).reshape(-1))
        if rows.size and rows[0] < 0:
            raise IndexError("release rows must be >= 0")
        object.__setattr__(self, "rows", rows)

    @classmethod
    def all_cells(cls, n):
        return cls(np.arange(n))

    @classmethod
    def single(cls, cell):
        return cls(np.array([cell]))


@dataclass(frozen=True)
class PlacementResult:
    """Ordered sensors plus the coverage bookkeeping of the run.

    coverage_sets[s] holds the release cells newly covered by sensor s (the
    greedy removal makes them disjoint).  tie_counts[s] records how many
    columns shared the winning score (ties break toward the lowest cell
    index).  early_stopped is set when no remaining column had positive
    score before the requested sensor count was reached.
    """

    sensor_cells: list[int]
    coverage_sets: list[CellSet]
    covered_fraction: float
    uncovered: CellSet
    early_stopped: bool = False
    tie_counts: list[int] = field(default_factory=list)


def _pattern_matrix(pattern):
    if isinstance(pattern, TrackingMatrix):
        if pattern.kind not in (BINARY, VOLUME_WEIGHTED):
            raise ValueError("placement needs a binary or volume-weighted pattern, "
                             f"got {pattern.kind!r}")
        return pattern.matrix
    if sp.issparse(pattern):
        return pattern.tocsr()
    return sp.csr_matrix(np.asarray(pattern, dtype=float))


def _row_volumes(n, grid):
    if grid is None:
        return np.full(n, 1.0 / n)
    volumes = grid.cell_volumes
    if volumes.size != n:
        raise IndexError(f"grid has {volumes.size} cells, pattern has {n} rows")
    return volumes / volumes.sum()


def observability(tracking, config, k):
    """Relative observability of release cell k for a sensor configuration:
    the row-k exposure summed over the sensor columns.  Positive means a
    release at k is detectable within the horizon."""
    matrix = tracking.matrix if isinstance(tracking, TrackingMatrix) else sp.csr_matrix(tracking)
    if not (0 <= k < matrix.shape[0]):
        raise IndexError(f"cell {k} outside [0, {matrix.shape[0]})")
    if config.sensor_cells.max() >= matrix.shape[1]:
        raise IndexError(f"sensor cell {config.sensor_cells.max()} outside "
                         f"[0, {matrix.shape[1]})")
    row = matrix.getrow(k).toarray().ravel()
    return float(row[config.sensor_cells].sum())


def greedy_place(pattern, n_sensors, scenario=None, *, grid=None):
    """Greedy maximum-coverage sensor placement.

    Parameters
    ----------
    pattern : TrackingMatrix (binary or volume-weighted) or array-like
        Thresholded, constrained observability pattern; rows are release
        cells, columns candidate sensor cells.
    n_sensors : int
        Sensors to place; fewer are returned if coverage saturates first.
    scenario : ReleaseScenario, optional
        Release rows to cover (default: every row).
    grid : Grid, optional
        Supplies cell volumes for the covered fraction; uniform by default.

    Returns
    -------
    PlacementResult
    """
    if n_sensors < 1:
        raise ValueError(f"n_sensors must be >= 1, got {n_sensors}")
    matrix = _pattern_matrix(pattern).tocsc()
    n_rows, n_cols = matrix.shape
    if scenario is None:
        scenario = ReleaseScenario.all_cells(n_rows)
    if scenario.rows.size and scenario.rows[-1] >= n_rows:
        raise IndexError(f"scenario row {scenario.rows[-1]} outside [0, {n_rows})")
    volumes = _row_volumes(n_rows, grid)

    active = np.zeros(n_rows)
    active[scenario.rows] = 1.0
    admissible_volume = float(volumes[scenario.rows].sum())

    sensors, coverage_sets, tie_counts = [], [], []
    covered_volume = 0.0
    early_stopped = False
    for _ in range(n_sensors):
        scores = active @ matrix
        best = scores.max(initial=0.0)
        if best <= 0.0:
            early_stopped = True
            break
        j = int(np.argmax(scores))
        tie_counts.append(int(np.sum(scores == best)))
        col = matrix.getcol(j)
        newly = col.indices[(col.data != 0) & (active[col.indices] > 0)]
        sensors.append(j)
        coverage_sets.append(CellSet(newly, n_rows))
        covered_volume += float(volumes[newly].sum())
        active[newly] = 0.0

    uncovered = CellSet(np.flatnonzero(active > 0), n_rows)
    fraction = covered_volume / admissible_volume if admissible_volume > 0 else 0.0
    return PlacementResult(sensor_cells=sensors, coverage_sets=coverage_sets,
                           covered_fraction=fraction, uncovered=uncovered,
                           early_stopped=early_stopped, tie_counts=tie_counts)


def brute_force_place(pattern, n_sensors, scenario=None, *, grid=None):
    """Exhaustive maximum-coverage optimum (test oracle for small instances).

    Only columns with support on the scenario rows are enumerated; refuses
    to run when the combination count exceeds 10^6.  Ties break toward the
    lexicographically smallest sensor tuple.
    """
    if n_sensors < 1:
        raise ValueError(f"n_sensors must be >= 1, got {n_sensors}")
    matrix = _pattern_matrix(pattern).tocsc()
    n_rows, n_cols = matrix.shape
    if scenario is None:
        scenario = ReleaseScenario.all_cells(n_rows)
    volumes = _row_volumes(n_rows, grid)
    scenario_mask = np.zeros(n_rows, dtype=bool)
    scenario_mask[scenario.rows] = True
    admissible_volume = float(volumes[scenario.rows].sum())

    dense = matrix.toarray() != 0
    dense[~scenario_mask, :] = False
    candidates = np.flatnonzero(dense.any(axis=0))
    k = min(n_sensors, candidates.size)
    if k == 0:
        return PlacementResult(sensor_cells=[], coverage_sets=[], covered_fraction=0.0,
                               uncovered=CellSet(scenario.rows, n_rows), early_stopped=True)
    n_combos = comb(candidates.size, k)
    if n_combos > _BRUTE_FORCE_GUARD:
        raise ValueError(
            f"brute force refused: C({candidates.size}, {k}) = {n_combos} "
            f"combinations exceeds the {_BRUTE_FORCE_GUARD} guard")

    best_volume = -1.0
    best_combo = None
    for combo in combinations(candidates.tolist(), k):
        covered = dense[:, combo].any(axis=1)
        vol = float(volumes[covered].sum())
        if vol > best_volume:
            best_volume = vol
            best_combo = combo

    # report newly-covered sets sensor by sensor in combo order
    coverage_sets = []
    active = scenario_mask.copy()
    for j in best_combo:
        newly = np.flatnonzero(dense[:, j] & active)
        coverage_sets.append(CellSet(newly, n_rows))
        active[newly] = False
    fraction = best_volume / admissible_volume if admissible_volume > 0 else 0.0
    return PlacementResult(sensor_cells=list(best_combo), coverage_sets=coverage_sets,
                           covered_fraction=fraction,
                           uncovered=CellSet(np.flatnonzero(active), n_rows),
                           early_stopped=len(best_combo) < n_sensors)


def format_report(result, grid=None, labels=None):
    """Structured text report for a placement result."""
    lines = [f"sensors: {len(result.sensor_cells)}"]
    for rank, (cell, covered) in enumerate(zip(result.sensor_cells, result.coverage_sets),
                                           start=1):
        label = labels[rank - 1] if labels else None
        where = label or f"cell {cell}"
        if grid is not None and cell < grid.n_cells:
            i, j = grid.cell_coords(cell)
            x = grid.origin[0] + (i + 0.5) * grid.dx
            y = grid.origin[1] + (j + 0.5) * grid.dy
            where += f" (x={x:.6g}, y={y:.6g})"
        lines.append(f"sensor {rank}: {where} newly_covered={len(covered)}")
    lines.append(f"covered_fraction: {result.covered_fraction:.12g}")
    if result.early_stopped:
        lines.append(f"early_stop: after sensor {len(result.sensor_cells)} "
                     "(no column with positive score)")
    lines.append(f"uncovered: {len(result.uncovered)} cells")
    if len(result.uncovered):
        lines.append("uncovered_cells: " + " ".join(str(k) for k in result.uncovered))
    return "\n".join(lines) + "\n"

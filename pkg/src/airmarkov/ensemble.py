"""Sensor placement under uncertain operating conditions.

Uncertainty is represented by a weighted set of flow realizations (for
example different occupant positions).  Every realization is mapped onto a
shared reference grid, gets its own transfer operator and thresholded
tracking pattern, and placement maximizes the weight-averaged column scores:
the expectation version of the deterministic greedy rule, which reduces to
it exactly for a single realization or identical realizations.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import markov, tracking as tracking_mod
from .errors import FormatError, RealizationError
from .flowfield import (VelocityField, gen_channel_flow, gen_double_gyre,
                        grid_with_mapped_obstructions, load_field, map_to_reference)
from .grid import CellSet, Grid, load_grid_config
from .validation import check_cell_indices, check_weights


@dataclass(frozen=True)
class Realization:
    """One sampled operating condition: a flow field on its own grid."""

    rid: str
    grid: Grid
    field: VelocityField
    weight: float = 1.0

    def __post_init__(self):
        if self.weight < 0:
            raise ValueError(f"realization {self.rid!r}: weight must be >= 0")


@dataclass(frozen=True)
class Ensemble:
    """Weighted realizations plus the reference grid they are mapped onto."""

    realizations: list[Realization]
    ref_grid: Grid

    def __post_init__(self):
        if not self.realizations:
            raise ValueError("ensemble needs at least one realization")
        if sum(r.weight for r in self.realizations) <= 0:
            raise ValueError("realization weights must sum to > 0")

    @property
    def n_realizations(self):
        return len(self.realizations)

    def normalized_weights(self):
        w = np.array([r.weight for r in self.realizations], dtype=float)
        return w / w.sum()


@dataclass(frozen=True)
class EnsembleTracking:
    """Aligned per-realization tracking patterns ready for placement."""

    binary: list
    weighted: list
    weights: np.ndarray
    ref_grid: Grid
    operators: list | None = None
    excluded_sensor_cells: CellSet | None = None

    def __post_init__(self):
        if not (len(self.binary) == len(self.weighted) == len(self.weights)):
            raise ValueError("binary, weighted, and weights must align")
        w = np.asarray(self.weights, dtype=float)
        if np.any(w < 0) or w.sum() <= 0:
            raise ValueError("weights must be >= 0 and sum to > 0")
        object.__setattr__(self, "weights", w / w.sum())


@dataclass(frozen=True)
class EnsemblePlacementResult:
    """Sensors chosen by expectation coverage plus per-iteration bookkeeping.

    expectation_vectors[s] is the weight-averaged column-score vector the
    s-th sensor was the argmax of; newly_covered[s][i] lists the release
    cells sensor s removed from realization i.
    """

    sensor_cells: list[int]
    expectation_vectors: list[np.ndarray]
    newly_covered: list[list[CellSet]]
    expected_covered_fraction: float
    early_stopped: bool = False


def build_ensemble(ensemble, diffusivity, dt_markov, m, eps_acc, *,
                   forbidden=None, unmonitored=None, workers=1,
                   sparsity_floor=markov.SPARSITY_FLOOR):
    """Run the per-realization pipeline and return an aligned tracking set.

    Pipeline per realization: map the field onto the reference grid, build
    the transfer operator (obstructed cells become unit self-loops), build
    the tracking matrix over m steps, threshold at eps_acc, apply location
    and sensing constraints, volume-weight.  Cells obstructed in any
    realization, and cells in ``forbidden``, are excluded from sensor
    candidacy.
    """
    ref = ensemble.ref_grid
    n = ref.n_cells

    def pipeline(realization):
        stage = "map"
        try:
            mapped = map_to_reference(realization.grid, realization.field, ref)
            grid_r = grid_with_mapped_obstructions(ref, mapped)
            stage = "operator"
            op = markov.build(grid_r, mapped, diffusivity, dt_markov,
                              sparsity_floor=sparsity_floor)
            stage = "tracking"
            q = tracking_mod.tracking_matrix(op, m)
            stage = "threshold"
            qb = tracking_mod.threshold(q, eps_acc)
            stage = "constraints"
            if forbidden is not None and len(forbidden):
                qb = tracking_mod.apply_location_constraint(qb, forbidden)
            if unmonitored is not None and len(unmonitored):
                qb = tracking_mod.apply_sensing_constraint(qb, unmonitored)
            stage = "volume_weight"
            qw = tracking_mod.volume_weight(qb, ref)
            return op, qb, qw, mapped.obstructed
        except Exception as exc:
            raise RealizationError(realization.rid, stage, str(exc)) from exc

    if workers > 1 and ensemble.n_realizations > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(pipeline, ensemble.realizations))
    else:
        results = [pipeline(r) for r in ensemble.realizations]

    obstructed_any = np.zeros(n, dtype=bool)
    for _, _, _, obstructed in results:
        obstructed_any |= obstructed
    excluded = obstructed_any.copy()
    if forbidden is not None:
        excluded[forbidden.indices] = True

    return EnsembleTracking(
        binary=[qb for _, qb, _, _ in results],
        weighted=[qw for _, _, qw, _ in results],
        weights=ensemble.normalized_weights(),
        ref_grid=ref,
        operators=[op for op, _, _, _ in results],
        excluded_sensor_cells=CellSet(np.flatnonzero(excluded), n))


def ensemble_place(etracking, n_sensors):
    """Place sensors by expectation coverage across realizations.

    Each iteration scores every candidate column within each realization
    over its still-uncovered release rows, averages the score vectors with
    the realization weights, and places the sensor at the argmax (lowest
    cell index on ties; cells excluded from candidacy are skipped).  The
    chosen sensor's covered release rows are then removed from every
    realization and the iteration repeats.  With one realization, or
    identical ones, the sensor sequence equals the deterministic greedy
    placement.

    Returns ``(EnsemblePlacementResult, expectation_vectors)``.
    """
    if n_sensors < 1:
        raise ValueError(f"n_sensors must be >= 1, got {n_sensors}")
    weights = etracking.weights
    mats = [t.matrix.tocsc() for t in etracking.weighted]
    n = mats[0].shape[0]
    volumes = etracking.ref_grid.cell_volumes
    volumes = volumes / volumes.sum()

    blocked = np.zeros(n, dtype=bool)
    if etracking.excluded_sensor_cells is not None:
        blocked[etracking.excluded_sensor_cells.indices] = True

    actives = [np.ones(n) for _ in mats]
    sensors = []
    evectors = []
    newly_covered = []
    expected_fraction = 0.0
    early_stopped = False
    for _ in range(n_sensors):
        expectation = np.zeros(n)
        for theta, mat, active in zip(weights, mats, actives):
            expectation += theta * (active @ mat)
        candidate_scores = np.where(blocked, 0.0, expectation)
        best = candidate_scores.max(initial=0.0)
        if best <= 0.0:
            early_stopped = True
            break
        s = int(np.argmax(candidate_scores))
        sensors.append(s)
        blocked[s] = True
        evectors.append(expectation)
        per_real = []
        for theta, mat, active in zip(weights, mats, actives):
            col = mat.getcol(s)
            newly = col.indices[(col.data != 0) & (active[col.indices] > 0)]
            per_real.append(CellSet(newly, n))
            expected_fraction += theta * float(volumes[newly].sum())
            active[newly] = 0.0
        newly_covered.append(per_real)

    result = EnsemblePlacementResult(
        sensor_cells=sensors, expectation_vectors=evectors,
        newly_covered=newly_covered, expected_covered_fraction=expected_fraction,
        early_stopped=early_stopped)
    return result, evectors


def probable_coverage_map(sensors, binary_set, weights):
    """Per-cell probability (over realizations) that some placed sensor
    observes a release at that cell."""
    if len(sensors) == 0:
        raise ValueError("need at least one sensor")
    weights = check_weights(weights, len(binary_set))
    n = binary_set[0].n_cells
    cells = check_cell_indices(sensors, n)
    cover_map = np.zeros(n)
    for theta, qb in zip(weights, binary_set):
        sub = qb.matrix[:, cells]
        covered = np.asarray((sub != 0).sum(axis=1)).ravel() > 0
        cover_map += theta * covered
    # weights sum to 1 up to rounding; keep entries inside [0, 1] exactly
    return np.clip(cover_map, 0.0, 1.0)


def expected_coverage_fraction(sensors, binary_set, weights, grid):
    """Weighted mean over realizations of the volume fraction of release
    cells some sensor covers.  Equals the volume-weighted mean of
    :func:`probable_coverage_map` (computed independently here)."""
    if len(sensors) == 0:
        raise ValueError("need at least one sensor")
    weights = check_weights(weights, len(binary_set))
    volumes = grid.cell_volumes
    volumes = volumes / volumes.sum()
    cells = check_cell_indices(sensors, binary_set[0].n_cells)
    fraction = 0.0
    for theta, qb in zip(weights, binary_set):
        sub = qb.matrix[:, cells]
        covered = np.asarray((sub != 0).sum(axis=1)).ravel() > 0
        fraction += theta * float(volumes[covered].sum())
    return fraction


# -- ensemble manifest ---------------------------------------------------------
#
#   ref_grid = grids/reference.grid
#   diffusivity = 1e-3
#   dt_markov = 0.5
#   tau = 4.0
#   eps_acc = 1e-4
#   constraint_preset = none | location | sensing-location
#   occupied = 3 3 4 4                  (inclusive rect; required by presets)
#   realization = r1.grid r1.field 0.25
#   realization = r2.grid gen:double-gyre:1.0 0.25
#
# Paths are resolved relative to the manifest file.

def _make_field(spec, grid, base):
    if spec.startswith("gen:"):
        parts = spec.split(":")
        if len(parts) != 3:
            raise ValueError(f"bad generator spec {spec!r}, expected gen:<name>:<value>")
        name, value = parts[1], float(parts[2])
        if name == "double-gyre":
            return gen_double_gyre(grid, value)
        if name == "channel":
            return gen_channel_flow(grid, value)
        raise ValueError(f"unknown generator {name!r}")
    return load_field(base / spec, grid)


def load_manifest(path):
    """Parse an ensemble manifest into ``(Ensemble, params dict)``.

    params carries diffusivity, dt_markov, m (snapped from tau), tau,
    eps_acc, constraint_preset, and the occupied CellSet when a preset
    needs one.
    """
    from pathlib import Path

    base = Path(path).parent
    scalars = {}
    realization_lines = []
    problems = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                problems.append(f"line {lineno}: expected 'key = value', got {line!r}")
                continue
            key, value = (part.strip() for part in line.split("=", 1))
            if key == "realization":
                realization_lines.append((lineno, value))
            else:
                scalars[key] = (lineno, value)

    def take(key, conv, required=False, default=None):
        if key not in scalars:
            if required:
                problems.append(f"missing required key {key!r}")
            return default
        lineno, value = scalars.pop(key)
        try:
            return conv(value)
        except (ValueError, FormatError) as exc:
            problems.append(f"line {lineno}: bad {key!r}: {exc}")
            return default

    ref_grid = take("ref_grid", lambda v: load_grid_config(base / v), required=True)
    diffusivity = take("diffusivity", float, required=True)
    dt_markov = take("dt_markov", float, required=True)
    tau = take("tau", float, required=True)
    eps_acc = take("eps_acc", float, required=True)
    preset = take("constraint_preset", str, default="none")
    occupied_rect = take("occupied", lambda v: tuple(int(p) for p in v.split()))
    for key, (lineno, _) in scalars.items():
        problems.append(f"line {lineno}: unknown key {key!r}")

    if preset not in ("none", "location", "sensing-location"):
        problems.append(f"unknown constraint_preset {preset!r}")
    if preset != "none" and occupied_rect is None:
        problems.append(f"constraint_preset {preset!r} requires 'occupied = i0 j0 i1 j1'")
    if occupied_rect is not None and len(occupied_rect) != 4:
        problems.append("occupied needs exactly four integers i0 j0 i1 j1")
        occupied_rect = None

    realizations = []
    for lineno, value in realization_lines:
        parts = value.split()
        if len(parts) != 3:
            problems.append(f"line {lineno}: expected 'realization = grid field weight'")
            continue
        grid_path, field_spec, weight_text = parts
        try:
            weight = float(weight_text)
            r_grid = load_grid_config(base / grid_path)
            r_field = _make_field(field_spec, r_grid, base)
            realizations.append(Realization(rid=f"r{len(realizations) + 1}",
                                            grid=r_grid, field=r_field, weight=weight))
        except (ValueError, FormatError, OSError) as exc:
            problems.append(f"line {lineno}: {exc}")
    if not realizations:
        problems.append("manifest declares no realizations")

    if problems:
        raise FormatError("; ".join(problems), path=path)

    m = tracking_mod.snap_steps(tau, dt_markov)
    occupied = None
    if occupied_rect is not None:
        occupied = CellSet.from_rect(ref_grid, *occupied_rect)
    params = {
        "diffusivity": diffusivity,
        "dt_markov": dt_markov,
        "tau": m * dt_markov,
        "m": m,
        "eps_acc": eps_acc,
        "constraint_preset": preset,
        "occupied": occupied,
    }
    return Ensemble(realizations=realizations, ref_grid=ref_grid), params


# -- map export ----------------------------------------------------------------

def write_cell_csv(path, grid, values, column="value"):
    """Per-cell CSV with header k,i,j,x,y,<column>."""
    values = np.asarray(values, dtype=float).reshape(-1)
    if values.size != grid.n_cells:
        raise ValueError(f"need {grid.n_cells} values, got {values.size}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"k,i,j,x,y,{column}\n")
        for k in range(grid.n_cells):
            i, j = grid.cell_coords(k)
            x = grid.origin[0] + (i + 0.5) * grid.dx
            y = grid.origin[1] + (j + 0.5) * grid.dy
            fh.write(f"{k},{i},{j},{x:.17g},{y:.17g},{values[k]:.17g}\n")


def write_pgm(path, grid, values):
    """ASCII PGM image of per-cell values in [0, 1]; gray = round(255 * v).
    Rows run top to bottom, so the image keeps the grid's orientation."""
    values = np.asarray(values, dtype=float).reshape(-1)
    if values.size != grid.n_cells:
        raise ValueError(f"need {grid.n_cells} values, got {values.size}")
    if values.min(initial=0.0) < 0 or values.max(initial=0.0) > 1.0:
        raise ValueError("PGM export expects values in [0, 1]")
    gray = np.rint(255.0 * values).astype(int).reshape(grid.ny, grid.nx)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"P2\n{grid.nx} {grid.ny}\n255\n")
        for j in range(grid.ny - 1, -1, -1):
            fh.write(" ".join(str(g) for g in gray[j]) + "\n")

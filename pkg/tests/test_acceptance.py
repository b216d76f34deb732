"""Acceptance suite: one test per criterion, each printing a PASS line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines.  The quantitative cases run on synthetic flows: a 32x32 double gyre
for the operator-equivalence and speedup checks, and a 16x16 four-occupant
ensemble for the uncertainty checks.
"""

import time

import numpy as np
import pytest

import airmarkov as am
from airmarkov.flowfield import VelocityField, gen_channel_flow, gen_double_gyre
from airmarkov.grid import CellSet, Grid
from airmarkov.markov import ROW_SUM_TOL, build, propagate
from airmarkov.placement import brute_force_place, greedy_place
from airmarkov.tracking import tracking_matrix
from airmarkov.transport import SourceTerm, solve

GREEDY_BOUND = 1.0 - 1.0 / np.e

#: frozen from the placement oracle run (see test_placement.py)
EXPECTED_OPTIMAL_MATCHES = 19


@pytest.fixture(scope="module")
def case32():
    """32x32 double gyre, D=1e-3, dt_markov=0.5, outlet on the right wall."""
    roles = {"right": np.array(["wall"] * 8 + ["outlet"] * 16 + ["wall"] * 8)}
    grid = Grid(nx=32, ny=32, dx=1 / 32, dy=1 / 32, boundary_roles=roles)
    field = gen_double_gyre(grid, 1.0)
    start = time.perf_counter()
    operator = build(grid, field, 1e-3, 0.5)
    build_seconds = time.perf_counter() - start
    return grid, field, operator, build_seconds


@pytest.fixture(scope="module")
def desk(desk_ensemble):
    ensemble, rects = desk_ensemble
    occupied = np.zeros(ensemble.ref_grid.n_cells, dtype=bool)
    for rect in rects:
        occupied |= CellSet.from_rect(ensemble.ref_grid, *rect).mask()
    return ensemble, CellSet(np.flatnonzero(occupied), ensemble.ref_grid.n_cells)


def test_criterion_1_markov_pde_equivalence(case32):
    grid, field, operator, build_seconds = case32
    start = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(10):
        mu = rng.random(grid.n_cells)
        mu /= mu.sum()
        via_operator = propagate(np.append(mu, 0.0), operator, 100)
        state, exited = mu, 0.0
        for _ in range(100):
            state, leak = solve(state, field, 1e-3, 0.5)
            exited += leak
        direct = np.append(state, exited)
        worst = max(worst, float(np.abs(via_operator - direct).sum()))
    elapsed = build_seconds + (time.perf_counter() - start)
    assert worst <= 1e-6, f"L1 divergence {worst:.3e} exceeds 1e-6 of total mass"
    assert elapsed < 60.0, f"runtime {elapsed:.1f}s exceeds 60s budget"
    print(f"\nACCEPTANCE 1 (Markov-PDE equivalence): PASS  "
          f"worst L1 {worst:.3e}, runtime {elapsed:.1f}s")


def test_criterion_2_speedup_over_pde(case32):
    grid, field, operator, _ = case32
    rng = np.random.default_rng(2025)
    densities = rng.random((50, grid.n_cells))
    densities /= densities.sum(axis=1, keepdims=True)

    start = time.perf_counter()
    for row in densities:
        propagate(np.append(row, 0.0), operator, 100)
    operator_seconds = time.perf_counter() - start

    start = time.perf_counter()
    for row in densities:
        solve(row, field, 1e-3, 50.0)
    pde_seconds = time.perf_counter() - start

    speedup = pde_seconds / operator_seconds
    assert speedup >= 5.0, (f"operator path {operator_seconds:.2f}s vs PDE "
                            f"{pde_seconds:.2f}s: speedup {speedup:.1f}x < 5x")
    print(f"\nACCEPTANCE 2 (operator speedup): PASS  "
          f"{speedup:.1f}x ({pde_seconds:.1f}s PDE vs {operator_seconds:.1f}s operator)")


def test_criterion_3_row_stochasticity(case32, desk_tracking, shift_operator):
    operators = [case32[2], shift_operator] + list(desk_tracking.operators)
    rng = np.random.default_rng(2026)
    grid = Grid(nx=8, ny=8, dx=0.125, dy=0.125,
                boundary_roles={"right": ["outlet"] * 8})
    for _ in range(20):
        field = VelocityField(grid=grid, u=rng.uniform(-1, 1, 64),
                              v=rng.uniform(-1, 1, 64))
        operators.append(build(grid, field, rng.uniform(0, 1e-2), 0.3))
    worst = 0.0
    for op in operators:
        sums = np.asarray(op.matrix.sum(axis=1)).ravel()
        worst = max(worst, float(np.abs(sums - 1.0).max()))
        assert op.matrix.data.min() >= 0.0, "negative operator entry"
    assert worst <= ROW_SUM_TOL, f"row sum off by {worst:.3e}"
    print(f"\nACCEPTANCE 3 (row stochasticity): PASS  "
          f"{len(operators)} operators, worst row-sum error {worst:.2e}")


def test_criterion_4_greedy_quality():
    matches = 0
    worst_ratio = 1.0
    for seed in range(20):
        rng = np.random.default_rng(1000 + seed)
        pattern = (rng.random((8, 8)) < 0.3).astype(float)
        greedy = greedy_place(pattern, 2)
        optimal = brute_force_place(pattern, 2)
        ratio = (greedy.covered_fraction / optimal.covered_fraction
                 if optimal.covered_fraction else 1.0)
        worst_ratio = min(worst_ratio, ratio)
        assert ratio >= GREEDY_BOUND, f"seed {seed}: ratio {ratio:.3f} below 1-1/e"
        if greedy.covered_fraction == pytest.approx(optimal.covered_fraction):
            matches += 1
    assert matches == EXPECTED_OPTIMAL_MATCHES, (
        f"optimal-match count drifted: {matches} != {EXPECTED_OPTIMAL_MATCHES}")
    assert matches >= 10, "greedy must match the optimum in at least half the instances"
    print(f"\nACCEPTANCE 4 (greedy quality): PASS  "
          f"{matches}/20 optimal, worst ratio {worst_ratio:.3f}")


def test_criterion_5_tracking_monotonicity(case32):
    operator = case32[2]
    previous = None
    for m in range(9):
        support = tracking_matrix(operator, m).support()
        if previous is not None:
            violations = int(np.sum(previous & ~support))
            assert violations == 0, f"support shrank at m={m}: {violations} entries"
        previous = support
    print("\nACCEPTANCE 5 (tracking support monotone in horizon): PASS  m=0..8")


def test_criterion_6_constraint_semantics(desk):
    ensemble, occupied = desk
    ref = ensemble.ref_grid
    unmonitored = CellSet(np.flatnonzero(~occupied.mask()), ref.n_cells)

    # location constraint: occupied region forbidden for sensors
    located = am.build_ensemble(ensemble, 1e-3, 0.5, 8, 1e-4, forbidden=occupied)
    result, _ = am.ensemble_place(located, 3)
    assert result.sensor_cells, "location-constrained placement found no sensor"
    for cell in result.sensor_cells:
        assert cell not in occupied, f"sensor at forbidden cell {cell}"
    for qb in located.binary:
        assert qb.matrix[:, occupied.indices].nnz == 0

    # deterministic path under the same constraint
    single = am.greedy_place(located.weighted[0], 2, grid=ref)
    for cell in single.sensor_cells:
        assert cell not in occupied

    # sensing constraint: only occupied-region releases may count
    sensed = am.build_ensemble(ensemble, 1e-3, 0.5, 8, 1e-4,
                               forbidden=occupied, unmonitored=unmonitored)
    for qb in sensed.binary:
        assert qb.matrix[unmonitored.indices, :].nnz == 0  # exhaustive row check
    result2, _ = am.ensemble_place(sensed, 3)
    unmonitored_set = set(unmonitored)
    for per_sensor in result2.newly_covered:
        for per_realization in per_sensor:
            assert not (set(per_realization) & unmonitored_set)
    cover = am.probable_coverage_map(result2.sensor_cells or [0], sensed.binary,
                                     sensed.weights)
    assert np.all(cover[unmonitored.indices] == 0.0)
    print("\nACCEPTANCE 6 (constraint semantics): PASS  "
          f"{len(result.sensor_cells)} + {len(result2.sensor_cells)} sensors placed clean")


def test_criterion_7_ensemble_consistency(gyre16, desk_tracking):
    grid, field = gyre16
    # identical realizations reproduce the deterministic placement exactly
    identical = am.Ensemble([am.Realization(rid=f"r{i}", grid=grid, field=field,
                                            weight=0.25) for i in range(4)], grid)
    etracking = am.build_ensemble(identical, 1e-3, 0.5, 8, 1e-4)
    from_ensemble, _ = am.ensemble_place(etracking, 3)
    deterministic = greedy_place(etracking.weighted[0], 3, grid=grid)
    assert from_ensemble.sensor_cells == deterministic.sensor_cells

    # degenerate weights reproduce single-realization placement exactly
    degenerate = am.EnsembleTracking(
        binary=desk_tracking.binary, weighted=desk_tracking.weighted,
        weights=np.array([1.0, 0.0, 0.0, 0.0]), ref_grid=desk_tracking.ref_grid)
    solo = am.EnsembleTracking(
        binary=desk_tracking.binary[:1], weighted=desk_tracking.weighted[:1],
        weights=np.array([1.0]), ref_grid=desk_tracking.ref_grid)
    a, _ = am.ensemble_place(degenerate, 2)
    b, _ = am.ensemble_place(solo, 2)
    assert a.sensor_cells == b.sensor_cells

    # probable maps stay in [0, 1]; identical realizations give a binary map
    cover = am.probable_coverage_map(from_ensemble.sensor_cells, etracking.binary,
                                     etracking.weights)
    assert cover.min() >= 0.0 and cover.max() <= 1.0
    assert set(np.unique(cover)) <= {0.0, 1.0}
    mixed = am.probable_coverage_map(a.sensor_cells, desk_tracking.binary,
                                     desk_tracking.weights)
    assert mixed.min() >= 0.0 and mixed.max() <= 1.0
    print("\nACCEPTANCE 7 (ensemble consistency): PASS")


def test_criterion_8_expected_coverage_two_path(desk_tracking):
    # reference settings: equal weights 0.25, eps_acc = 1e-4, horizon = 8 steps
    assert desk_tracking.weights.tolist() == [0.25] * 4
    assert all(qb.eps_acc == 1e-4 and qb.m == 8 for qb in desk_tracking.binary)
    result, _ = am.ensemble_place(desk_tracking, 2)
    grid = desk_tracking.ref_grid
    fraction = am.expected_coverage_fraction(result.sensor_cells,
                                             desk_tracking.binary,
                                             desk_tracking.weights, grid)
    cover = am.probable_coverage_map(result.sensor_cells, desk_tracking.binary,
                                     desk_tracking.weights)
    volumes = grid.cell_volumes / grid.cell_volumes.sum()
    gap = abs(fraction - float(volumes @ cover))
    assert gap <= 1e-12, f"two-path gap {gap:.3e}"
    print(f"\nACCEPTANCE 8 (expected-coverage two-path): PASS  "
          f"fraction {fraction:.6f}, gap {gap:.1e}")


def test_criterion_9_conservation(case32, gyre16, shift_operator):
    grid32, field32, operator32, _ = case32
    grid16, field16 = gyre16
    worst = 0.0

    def track(total_out, total_in):
        nonlocal worst
        worst = max(worst, abs(total_out - total_in) / max(abs(total_in), 1.0))

    rng = np.random.default_rng(2027)

    # solve: quiescent, recirculating with outlet, channel with source
    still = VelocityField(grid=grid16, u=np.zeros(256), v=np.zeros(256))
    mu = rng.random(256)
    out, exited = solve(mu, still, 5e-3, 2.0)
    track(out.sum() + exited, mu.sum())

    mu = rng.random(256)
    out, exited = solve(mu, field16, 1e-3, 3.0)
    track(out.sum() + exited, mu.sum())

    roles = {"left": ["inlet"] * 8, "right": ["outlet"] * 8}
    channel_grid = Grid(nx=8, ny=8, dx=0.125, dy=0.125, boundary_roles=roles)
    channel = gen_channel_flow(channel_grid, 1.0)
    src = SourceTerm.from_dict({10: 0.2})
    mu = rng.random(64)
    out, exited = solve(mu, channel, 1e-3, 1.5, src)
    track(out.sum() + exited, mu.sum() + src.total_release())

    # propagate: long horizons, with and without sources
    mu = np.append(rng.random(grid32.n_cells), 0.0)
    track(propagate(mu, operator32, 100).sum(), mu.sum())

    src = SourceTerm.from_dict({5: 0.1, 600: 0.4})
    out = propagate(mu, operator32, 40, src)
    track(out.sum(), mu.sum() + src.total_release(steps=40))

    mu = np.zeros(6)
    mu[0] = 1.0
    track(propagate(mu, shift_operator, 7).sum(), 1.0)

    assert worst <= 1e-10, f"mass budget violated by {worst:.3e} relative"
    print(f"\nACCEPTANCE 9 (conservation): PASS  worst relative error {worst:.2e}")

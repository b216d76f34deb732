"""Explicit finite-volume advection-diffusion on a grid.

This solver plays two roles: it is the reference PDE propagator that the
Markov operator is validated against, and it is the engine that generates
the operator's rows (one unit-mass release per cell, advanced one Markov
step).

Scheme: first-order upwind advective face fluxes (face velocity = mean of
the adjacent cell-center velocities), central-difference diffusive fluxes,
explicit Euler in time.  Densities are per-cell masses.  Under the
positivity bound (every cell's total outgoing coefficient <= 1 per step)
the update is a nonnegative combination of nonnegative terms, which is what
makes the derived Markov matrix nonnegative.  Fluxes are applied pairwise
(what one cell loses its neighbor gains), so interior mass plus exited mass
is conserved to rounding.

Boundary handling: wall and obstruction faces carry zero total flux; inlet
faces advect in the grid's Dirichlet inlet value (default 0) and let mass
leave if the face velocity points outward; outlet faces are pure upwind
outflow.  All mass leaving the domain is accumulated as ``exited_mass`` so
callers can build an absorbing sink state.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import FormatError, StabilityError

DENSITY_MAGIC = "pfdensity v1"

#: dt returned for a quiescent field (no advection, no diffusion)
DEFAULT_DT_CAP = 1.0

#: tolerated negative excursion before clamping output densities to zero
NEGATIVE_FLOOR = -1e-12


@dataclass(frozen=True)
class SourceTerm:
    """Contaminant release: per-cell rates in mass per Markov step.

    ``constant`` releases on every Markov step, ``single-step`` only on the
    first.  Within one :func:`solve` call (one Markov step's duration) both
    behave the same: the full rate is added once, after the flux update.
    """

    cells: np.ndarray
    rates: np.ndarray
    schedule: str = "constant"

    def __post_init__(self):
        cells = np.asarray(self.cells, dtype=np.int64).reshape(-1)
        rates = np.asarray(self.rates, dtype=float).reshape(-1)
        if cells.size != rates.size:
            raise ValueError("cells and rates must have equal length")
        if np.any(rates < 0):
            raise ValueError("release rates must be >= 0")
        if self.schedule not in ("constant", "single-step"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "rates", rates)

    @classmethod
    def from_dict(cls, cell_rates, schedule="constant"):
        cells = np.fromiter(cell_rates.keys(), dtype=np.int64, count=len(cell_rates))
        rates = np.fromiter(cell_rates.values(), dtype=float, count=len(cell_rates))
        return cls(cells=cells, rates=rates, schedule=schedule)

    def as_vector(self, n):
        if self.cells.size and (self.cells.min() < 0 or self.cells.max() >= n):
            raise IndexError(f"source cells outside [0, {n})")
        vec = np.zeros(n)
        np.add.at(vec, self.cells, self.rates)
        return vec

    def total_release(self, steps=1):
        total = float(self.rates.sum())
        return total * steps if self.schedule == "constant" else total


def cfl_dt(field, diffusivity, *, dt_cap=DEFAULT_DT_CAP):
    """Largest safe explicit time step for ``field`` and ``diffusivity``.

    dt = 0.5 / (max|u|/dx + max|v|/dy + 2D/dx^2 + 2D/dy^2); the factor 0.5
    covers the worst case of a cell losing mass through opposite faces at
    once.  A quiescent field (zero velocity and diffusivity) returns
    ``dt_cap`` instead of infinity.
    """
    grid = field.grid
    rate = (np.abs(field.u).max(initial=0.0) / grid.dx
            + np.abs(field.v).max(initial=0.0) / grid.dy
            + 2.0 * diffusivity / grid.dx ** 2
            + 2.0 * diffusivity / grid.dy ** 2)
    if rate == 0.0:
        return float(dt_cap)
    return 0.5 / rate


class _Stencil:
    """Precomputed per-face transfer coefficients for one (field, D, dt).

    Coefficients already include dt, so one application advances one step.
    Refuses construction if any cell could go negative (the per-cell total
    outgoing coefficient exceeds 1).
    """

    def __init__(self, field, diffusivity, dt):
        if dt <= 0:
            raise ValueError(f"dt must be > 0, got {dt}")
        if diffusivity < 0:
            raise ValueError(f"diffusivity must be >= 0, got {diffusivity}")
        grid = field.grid
        nx, ny, dx, dy = grid.nx, grid.ny, grid.dx, grid.dy
        self.grid = grid
        u = field.u.reshape(ny, nx)
        v = field.v.reshape(ny, nx)
        obs = field.obstructed.reshape(ny, nx)

        # internal x faces: (ny, nx-1), transfer counted left -> right
        open_x = ~(obs[:, :-1] | obs[:, 1:])
        uf = 0.5 * (u[:, :-1] + u[:, 1:])
        self.ax_p = np.where(open_x, np.maximum(uf, 0.0) * dt / dx, 0.0)
        self.ax_m = np.where(open_x, np.minimum(uf, 0.0) * dt / dx, 0.0)
        self.dx_c = np.where(open_x, diffusivity * dt / dx ** 2, 0.0)

        # internal y faces: (ny-1, nx), transfer counted bottom -> top
        open_y = ~(obs[:-1, :] | obs[1:, :])
        vf = 0.5 * (v[:-1, :] + v[1:, :])
        self.ay_p = np.where(open_y, np.maximum(vf, 0.0) * dt / dy, 0.0)
        self.ay_m = np.where(open_y, np.minimum(vf, 0.0) * dt / dy, 0.0)
        self.dy_c = np.where(open_y, diffusivity * dt / dy ** 2, 0.0)

        # boundary faces: outgoing coefficient per cell plus inlet influx.
        # Boundary face velocity is the boundary cell's own component.
        roles = grid.boundary_roles
        out_c = np.zeros((ny, nx))
        in_c = np.zeros((ny, nx))
        c_in = grid.inlet_value

        def side(role_arr, cells_obstructed, vel, sign, step_len):
            opened = (role_arr != "wall") & ~cells_obstructed
            outward = np.maximum(sign * vel, 0.0) * dt / step_len
            inward = np.maximum(-sign * vel, 0.0) * dt / step_len
            return (np.where(opened, outward, 0.0),
                    np.where(opened & (role_arr == "inlet"), inward * c_in, 0.0))

        o, i = side(roles["left"], obs[:, 0], u[:, 0], -1.0, dx)
        out_c[:, 0] += o
        in_c[:, 0] += i
        o, i = side(roles["right"], obs[:, -1], u[:, -1], +1.0, dx)
        out_c[:, -1] += o
        in_c[:, -1] += i
        o, i = side(roles["bottom"], obs[0, :], v[0, :], -1.0, dy)
        out_c[0, :] += o
        in_c[0, :] += i
        o, i = side(roles["top"], obs[-1, :], v[-1, :], +1.0, dy)
        out_c[-1, :] += o
        in_c[-1, :] += i

        self.out_c = out_c
        self.in_c = in_c
        self.in_total = float(in_c.sum())

        # exact positivity bound: per-cell total outgoing coefficient <= 1
        total_out = out_c.copy()
        total_out[:, :-1] += self.ax_p + self.dx_c
        total_out[:, 1:] += -self.ax_m + self.dx_c
        total_out[:-1, :] += self.ay_p + self.dy_c
        total_out[1:, :] += -self.ay_m + self.dy_c
        worst = float(total_out.max(initial=0.0))
        if worst > 1.0 + 1e-9:
            raise StabilityError(
                f"dt={dt} violates the positivity bound: max outgoing "
                f"coefficient {worst:.6g} > 1 (reduce dt below {dt / worst:.6g})")

    def apply(self, m):
        """One step on a batch (r, ny, nx); returns (m_new, exited (r,))."""
        fx = (self.ax_p * m[:, :, :-1] + self.ax_m * m[:, :, 1:]
              + self.dx_c * (m[:, :, :-1] - m[:, :, 1:]))
        fy = (self.ay_p * m[:, :-1, :] + self.ay_m * m[:, 1:, :]
              + self.dy_c * (m[:, :-1, :] - m[:, 1:, :]))
        leak = self.out_c * m
        m_new = m - leak
        m_new[:, :, :-1] -= fx
        m_new[:, :, 1:] += fx
        m_new[:, :-1, :] -= fy
        m_new[:, 1:, :] += fy
        m_new += self.in_c
        return m_new, leak.sum(axis=(1, 2))


def _as_batch(mu, grid):
    arr = np.asarray(mu, dtype=float)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.ndim != 2 or arr.shape[1] != grid.n_cells:
        raise ValueError(f"density must have {grid.n_cells} entries per row, "
                         f"got shape {np.asarray(mu).shape}")
    return arr.reshape(arr.shape[0], grid.ny, grid.nx).copy(), single


def _finish(m, single, grid):
    out = m.reshape(m.shape[0], grid.n_cells)
    low = out.min(initial=0.0)
    if low < NEGATIVE_FLOOR:
        raise StabilityError(f"scheme produced negative density {low:.3e}")
    np.maximum(out, 0.0, out=out)
    return out[0] if single else out


def step(mu, field, diffusivity, dt, src=None):
    """Advance one explicit step of length dt.

    Returns ``(density, exited_mass)``.  ``mu`` may be a single density
    (n_cells,) or a batch (rows, n_cells); exited_mass follows the shape.
    Raises :class:`StabilityError` if dt violates the positivity bound.
    """
    stencil = _Stencil(field, diffusivity, dt)
    m, single = _as_batch(mu, field.grid)
    m, exited = stencil.apply(m)
    if src is not None:
        m += src.as_vector(field.grid.n_cells).reshape(field.grid.ny, field.grid.nx)
    out = _finish(m, single, field.grid)
    return out, (float(exited[0]) if single else exited)


def solve(mu0, field, diffusivity, t_end, src=None, *, dt_sub=None):
    """Advance the density over ``t_end`` seconds and return
    ``(density, exited_mass)``.

    Substeps take dt = min(cfl_dt, remaining time); ``dt_sub`` overrides the
    CFL-derived substep (still checked against the positivity bound).  A
    source releases one Markov step's worth of mass per call, added after
    the flux updates; to cover several Markov steps with a source, chain one
    call per step exactly as the operator propagation does.
    """
    if t_end <= 0:
        raise ValueError(f"t_end must be > 0, got {t_end}")
    grid = field.grid
    sub = cfl_dt(field, diffusivity) if dt_sub is None else float(dt_sub)
    sub = min(sub, t_end)
    n_full = int(t_end / sub)
    remainder = t_end - n_full * sub
    if remainder < 1e-12 * t_end:
        remainder = 0.0

    m, single = _as_batch(mu0, grid)
    exited = np.zeros(m.shape[0])
    stencil = _Stencil(field, diffusivity, sub)
    for _ in range(n_full):
        m, leak = stencil.apply(m)
        exited += leak
    if remainder > 0.0:
        m, leak = _Stencil(field, diffusivity, remainder).apply(m)
        exited += leak
    if src is not None:
        m += src.as_vector(grid.n_cells).reshape(grid.ny, grid.nx)
    out = _finish(m, single, grid)
    return out, (float(exited[0]) if single else exited)


# -- density files ("k,value" lines) ------------------------------------------

def write_density(path, values):
    values = np.asarray(values, dtype=float).reshape(-1)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{DENSITY_MAGIC} n={values.size}\n")
        for k, val in enumerate(values):
            fh.write(f"{k},{val:.17g}\n")


def load_density(path):
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        parts = header.split()
        if len(parts) != 3 or " ".join(parts[:2]) != DENSITY_MAGIC:
            raise FormatError(f"bad header {header!r}, expected '{DENSITY_MAGIC} n=..'",
                              path=path, line=1)
        try:
            n = int(parts[2].removeprefix("n="))
        except ValueError:
            raise FormatError(f"bad header {header!r}", path=path, line=1) from None
        values = np.empty(n)
        count = 0
        for lineno, raw in enumerate(fh, start=2):
            line = raw.strip()
            if not line:
                continue
            if count >= n:
                raise FormatError(f"expected {n} lines, found more", path=path, line=lineno)
            fields = line.split(",")
            if len(fields) != 2:
                raise FormatError(f"expected 'k,value', got {line!r}", path=path, line=lineno)
            try:
                k = int(fields[0])
                val = float(fields[1])
            except ValueError:
                raise FormatError(f"non-numeric entry in {line!r}", path=path, line=lineno) from None
            if k != count:
                raise FormatError(f"expected index {count}, got {k}", path=path, line=lineno)
            if not np.isfinite(val):
                raise FormatError(f"non-finite value in {line!r}", path=path, line=lineno)
            values[k] = val
            count += 1
        if count != n:
            raise FormatError(f"expected {n} lines, found {count}", path=path)
    return values

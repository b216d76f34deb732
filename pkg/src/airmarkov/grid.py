"""Rectangular cell grids: indexing, volumes, obstructions, boundary roles.

Cells are addressed either by (i, j) column/row pairs or by the linear index
k = j*nx + i.  The grid also owns the geometry of the reference-grid mapping:
for every cell center of a target grid we can ask which source cell contains
it (piecewise-constant projection, used to transplant velocity fields between
discretizations of the same physical domain).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, replace

import numpy as np

from .errors import FormatError, GeometryError

WALL = "wall"
INLET = "inlet"
OUTLET = "outlet"
ROLES = (WALL, INLET, OUTLET)

#: sides of the rectangular domain; left/right segments are indexed by j,
#: bottom/top segments by i
SIDES = ("left", "right", "bottom", "top")

_EXTENT_RTOL = 1e-9


def _role_array(n, fill=WALL):
    return np.full(n, fill, dtype="U6")


@dataclass(frozen=True, eq=False)
class Grid:
    """Uniform rectangular cell grid with per-cell obstruction flags.

    Parameters
    ----------
    nx, ny : int
        Cell counts along x and y.
    dx, dy : float
        Cell sizes (m).
    origin : (float, float)
        Coordinates of the lower-left corner of the domain (m).
    obstruction_mask : (nx*ny,) bool array, optional
        True marks solid cells (occupants, furniture).  Default: none.
    boundary_roles : dict, optional
        Maps a side name ("left", "right", "bottom", "top") to an array of
        role strings, one per boundary edge segment along that side
        (length ny for left/right, nx for bottom/top).  Default: all walls.
    inlet_value : float
        Dirichlet contaminant value advected in through inlet faces.
    """

    nx: int
    ny: int
    dx: float
    dy: float
    origin: tuple[float, float] = (0.0, 0.0)
    obstruction_mask: np.ndarray | None = None
    boundary_roles: dict[str, np.ndarray] | None = None
    inlet_value: float = 0.0

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ValueError(f"cell counts must be >= 1, got nx={self.nx}, ny={self.ny}")
        if self.dx <= 0 or self.dy <= 0:
            raise ValueError(f"cell sizes must be > 0, got dx={self.dx}, dy={self.dy}")
        n = self.nx * self.ny
        mask = self.obstruction_mask
        if mask is None:
            mask = np.zeros(n, dtype=bool)
        else:
            mask = np.asarray(mask, dtype=bool).reshape(-1).copy()
            if mask.size != n:
                raise ValueError(f"obstruction mask has {mask.size} entries, expected {n}")
        mask.setflags(write=False)
        object.__setattr__(self, "obstruction_mask", mask)

        roles = {side: _role_array(self.ny if side in ("left", "right") else self.nx)
                 for side in SIDES}
        if self.boundary_roles:
            for side, arr in self.boundary_roles.items():
                if side not in SIDES:
                    raise ValueError(f"unknown boundary side {side!r}")
                arr = np.asarray(arr, dtype="U6")
                if arr.size != roles[side].size:
                    raise ValueError(
                        f"boundary side {side!r} needs {roles[side].size} roles, got {arr.size}")
                bad = set(np.unique(arr)) - set(ROLES)
                if bad:
                    raise ValueError(f"unknown boundary roles {sorted(bad)}")
                roles[side] = arr.copy()
        for arr in roles.values():
            arr.setflags(write=False)
        object.__setattr__(self, "boundary_roles", roles)
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    # -- indexing ---------------------------------------------------------

    @property
    def n_cells(self):
        return self.nx * self.ny

    def cell_index(self, i, j):
        """Linear index k = j*nx + i of cell (i, j)."""
        if not (0 <= i < self.nx):
            raise IndexError(f"column index {i} outside [0, {self.nx})")
        if not (0 <= j < self.ny):
            raise IndexError(f"row index {j} outside [0, {self.ny})")
        return j * self.nx + i

    def cell_coords(self, k):
        """Inverse of :meth:`cell_index`: (i, j) of linear index k."""
        if not (0 <= k < self.n_cells):
            raise IndexError(f"linear index {k} outside [0, {self.n_cells})")
        return k % self.nx, k // self.nx

    # -- geometry ---------------------------------------------------------

    @property
    def lx(self):
        return self.nx * self.dx

    @property
    def ly(self):
        return self.ny * self.dy

    @property
    def x_centers(self):
        return self.origin[0] + (np.arange(self.nx) + 0.5) * self.dx

    @property
    def y_centers(self):
        return self.origin[1] + (np.arange(self.ny) + 0.5) * self.dy

    def cell_centers(self):
        """(N, 2) array of cell-center coordinates in linear-index order."""
        xs, ys = np.meshgrid(self.x_centers, self.y_centers)
        return np.column_stack([xs.ravel(), ys.ravel()])

    @property
    def cell_volumes(self):
        """Per-cell volume (area in 2D), stored per cell for nonuniform reuse."""
        return np.full(self.n_cells, self.dx * self.dy)

    def with_obstructions(self, mask):
        return replace(self, obstruction_mask=np.asarray(mask, dtype=bool))

    def content_hash(self):
        """Hex digest of the grid geometry, obstructions, and boundary roles."""
        h = hashlib.sha256()
        h.update(np.array([self.nx, self.ny], dtype=np.int64).tobytes())
        h.update(np.array([self.dx, self.dy, *self.origin, self.inlet_value]).tobytes())
        h.update(self.obstruction_mask.tobytes())
        for side in SIDES:
            h.update(side.encode())
            h.update("".join(self.boundary_roles[side]).encode())
        return h.hexdigest()

    def same_extents(self, other):
        scale = max(abs(self.lx), abs(self.ly), 1.0)
        return (abs(self.origin[0] - other.origin[0]) <= _EXTENT_RTOL * scale
                and abs(self.origin[1] - other.origin[1]) <= _EXTENT_RTOL * scale
                and abs(self.lx - other.lx) <= _EXTENT_RTOL * scale
                and abs(self.ly - other.ly) <= _EXTENT_RTOL * scale)


class CellSet:
    """Validated, duplicate-free set of linear cell indices."""

    def __init__(self, indices, n_cells):
        idx = np.unique(np.asarray(list(indices), dtype=np.int64).reshape(-1))
        if idx.size and (idx[0] < 0 or idx[-1] >= n_cells):
            raise IndexError(
                f"cell indices must lie in [0, {n_cells}), got range "
                f"[{idx[0]}, {idx[-1]}]")
        self.indices = idx
        self.indices.setflags(write=False)
        self.n_cells = n_cells

    def __len__(self):
        return self.indices.size

    def __iter__(self):
        return iter(self.indices.tolist())

    def __contains__(self, k):
        return bool(np.isin(k, self.indices))

    def __eq__(self, other):
        return (isinstance(other, CellSet) and self.n_cells == other.n_cells
                and np.array_equal(self.indices, other.indices))

    def __repr__(self):
        return f"CellSet({self.indices.tolist()}, n_cells={self.n_cells})"

    def mask(self):
        m = np.zeros(self.n_cells, dtype=bool)
        m[self.indices] = True
        return m

    @classmethod
    def from_rect(cls, grid, i0, j0, i1, j1):
        """Cells of the inclusive rectangle (i0, j0)..(i1, j1)."""
        if not (0 <= i0 <= i1 < grid.nx and 0 <= j0 <= j1 < grid.ny):
            raise IndexError(f"rectangle ({i0},{j0})-({i1},{j1}) outside {grid.nx}x{grid.ny} grid")
        ii, jj = np.meshgrid(np.arange(i0, i1 + 1), np.arange(j0, j1 + 1))
        return cls((jj * grid.nx + ii).ravel(), grid.n_cells)


def containing_cells(ref_grid, src_grid):
    """Source cell (i, j) arrays containing each reference cell center.

    Centers that land exactly on a source cell edge tie-break toward the
    lower index, so the mapping is deterministic.
    """
    if not ref_grid.same_extents(src_grid):
        raise GeometryError(
            "grids cover different extents: "
            f"ref origin={ref_grid.origin} size=({ref_grid.lx}, {ref_grid.ly}), "
            f"src origin={src_grid.origin} size=({src_grid.lx}, {src_grid.ly})")

    def locate(centers, lo, step, count):
        t = (centers - lo) / step
        idx = np.floor(t).astype(np.int64)
        on_edge = (t == np.floor(t)) & (idx > 0)
        idx[on_edge] -= 1
        return np.clip(idx, 0, count - 1)

    si = locate(ref_grid.x_centers, src_grid.origin[0], src_grid.dx, src_grid.nx)
    sj = locate(ref_grid.y_centers, src_grid.origin[1], src_grid.dy, src_grid.ny)
    jj, ii = np.meshgrid(sj, si, indexing="ij")
    return ii.ravel(), jj.ravel()


# -- config file --------------------------------------------------------------
#
# Grid config format (text, '#' comments, key = value):
#
#   nx = 16                       required
#   ny = 16                       required
#   dx = 0.0625                   required
#   dy = 0.0625                   required
#   origin = 0.0 0.0              optional, default 0 0
#   inlet_value = 0.0             optional, default 0
#   boundary = left 0:15 inlet    side, inclusive segment range, role;
#                                 later lines override earlier ones
#   obstruction = 3 3 4 4         inclusive cell rectangle i0 j0 i1 j1

def load_grid_config(path):
    """Parse a grid config file into a :class:`Grid`.

    All violations are collected and reported together in one
    :class:`FormatError` so a bad config can be fixed in one pass.
    """
    scalars = {}
    boundaries = []
    obstructions = []
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
            if key == "boundary":
                boundaries.append((lineno, value))
            elif key == "obstruction":
                obstructions.append((lineno, value))
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
        except ValueError:
            problems.append(f"line {lineno}: bad value for {key!r}: {value!r}")
            return default

    nx = take("nx", int, required=True)
    ny = take("ny", int, required=True)
    dx = take("dx", float, required=True)
    dy = take("dy", float, required=True)
    origin = take("origin", lambda v: tuple(float(p) for p in v.split()), default=(0.0, 0.0))
    inlet_value = take("inlet_value", float, default=0.0)
    for key, (lineno, _) in scalars.items():
        problems.append(f"line {lineno}: unknown key {key!r}")
    if origin is not None and len(origin) != 2:
        problems.append("origin needs exactly two coordinates")
        origin = (0.0, 0.0)

    sized = None not in (nx, ny, dx, dy) and nx >= 1 and ny >= 1
    roles = None
    if sized:
        roles = {side: _role_array(ny if side in ("left", "right") else nx)
                 for side in SIDES}
    for lineno, value in boundaries:
        parts = value.split()
        try:
            side, rng, role = parts
            lo, hi = (int(p) for p in rng.split(":"))
        except ValueError:
            problems.append(f"line {lineno}: expected 'boundary = side lo:hi role'")
            continue
        if side not in SIDES:
            problems.append(f"line {lineno}: unknown side {side!r}")
            continue
        if role not in ROLES:
            problems.append(f"line {lineno}: unknown role {role!r}")
            continue
        if not sized:
            continue
        limit = roles[side].size
        if not (0 <= lo <= hi < limit):
            problems.append(f"line {lineno}: segment {lo}:{hi} outside [0, {limit})")
            continue
        roles[side][lo:hi + 1] = role

    mask = np.zeros(nx * ny, dtype=bool) if sized else None
    for lineno, value in obstructions:
        try:
            i0, j0, i1, j1 = (int(p) for p in value.split())
        except ValueError:
            problems.append(f"line {lineno}: expected 'obstruction = i0 j0 i1 j1'")
            continue
        if not sized:
            continue
        if not (0 <= i0 <= i1 < nx and 0 <= j0 <= j1 < ny):
            problems.append(f"line {lineno}: rectangle ({i0},{j0})-({i1},{j1}) outside grid")
            continue
        for j in range(j0, j1 + 1):
            mask[j * nx + i0:j * nx + i1 + 1] = True

    if problems or not sized:
        raise FormatError("; ".join(problems) or "incomplete grid config", path=path)

    return Grid(nx=nx, ny=ny, dx=dx, dy=dy, origin=origin,
                obstruction_mask=mask, boundary_roles=roles, inlet_value=inlet_value)

"""Per-cell velocity fields: synthetic generators, file I/O, reference mapping."""

from __future__ import annotations

import hashlib
import warnings
from dataclasses import dataclass, replace

import numpy as np

from .errors import FormatError
from .grid import Grid, containing_cells

FIELD_MAGIC = "pffield v1"


@dataclass(frozen=True, eq=False)
class VelocityField:
    """Cell-centered velocity components on a grid.

    The ``obstructed`` mask always contains the grid's own obstruction mask;
    velocity is forced to exactly (0, 0) on obstructed cells.
    """

    grid: Grid
    u: np.ndarray
    v: np.ndarray
    obstructed: np.ndarray | None = None

    def __post_init__(self):
        n = self.grid.n_cells
        u = np.asarray(self.u, dtype=float).reshape(-1).copy()
        v = np.asarray(self.v, dtype=float).reshape(-1).copy()
        if u.size != n or v.size != n:
            raise ValueError(f"velocity components need {n} entries, got {u.size}/{v.size}")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise ValueError("velocity components must be finite")
        obstructed = self.obstructed
        if obstructed is None:
            obstructed = self.grid.obstruction_mask.copy()
        else:
            obstructed = np.asarray(obstructed, dtype=bool).reshape(-1).copy()
            if obstructed.size != n:
                raise ValueError(f"obstruction mask needs {n} entries, got {obstructed.size}")
            obstructed |= self.grid.obstruction_mask
        u[obstructed] = 0.0
        v[obstructed] = 0.0
        for arr in (u, v, obstructed):
            arr.setflags(write=False)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "obstructed", obstructed)

    def speed(self):
        return np.hypot(self.u, self.v)

    def max_speed(self):
        return float(self.speed().max(initial=0.0))

    def content_hash(self):
        h = hashlib.sha256()
        h.update(self.u.tobytes())
        h.update(self.v.tobytes())
        h.update(self.obstructed.tobytes())
        return h.hexdigest()


def gen_double_gyre(grid, amplitude):
    """Recirculating two-cell gyre from the stream function
    psi = A*sin(pi*x/Lx)*sin(pi*y/Ly); u = dpsi/dy, v = -dpsi/dx.

    Analytically divergence-free; a stand-in for CFD room flows with strong
    recirculation.  amplitude may be 0 (quiescent field) but not negative.
    """
    if amplitude < 0:
        raise ValueError(f"amplitude must be >= 0, got {amplitude}")
    x = (grid.x_centers - grid.origin[0]) / grid.lx
    y = (grid.y_centers - grid.origin[1]) / grid.ly
    xx, yy = np.meshgrid(x, y)
    u = amplitude * (np.pi / grid.ly) * np.sin(np.pi * xx) * np.cos(np.pi * yy)
    v = -amplitude * (np.pi / grid.lx) * np.cos(np.pi * xx) * np.sin(np.pi * yy)
    return VelocityField(grid=grid, u=u.ravel(), v=v.ravel())


def gen_channel_flow(grid, u_max):
    """Parabolic left-to-right profile u(y) = 4*u_max*yn*(1-yn), v = 0,
    with yn the wall distance normalized by the channel height."""
    if u_max <= 0:
        raise ValueError(f"u_max must be > 0, got {u_max}")
    yn = (grid.y_centers - grid.origin[1]) / grid.ly
    profile = 4.0 * u_max * yn * (1.0 - yn)
    u = np.repeat(profile, grid.nx)
    return VelocityField(grid=grid, u=u, v=np.zeros(grid.n_cells))


def write_field(field, path):
    """Write the ``pffield v1`` text format: header then one 'k,u,v' line
    per cell in ascending k, 17 significant digits."""
    grid = field.grid
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{FIELD_MAGIC} nx={grid.nx} ny={grid.ny}\n")
        for k in range(grid.n_cells):
            fh.write(f"{k},{field.u[k]:.17g},{field.v[k]:.17g}\n")


def load_field(path, grid):
    """Read a ``pffield v1`` file and bind it to ``grid``.

    Cells obstructed on the grid are forced to zero velocity; a warning is
    emitted if the file carried nonzero values there.
    """
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        parts = header.split()
        if len(parts) != 4 or " ".join(parts[:2]) != FIELD_MAGIC:
            raise FormatError(f"bad header {header!r}, expected '{FIELD_MAGIC} nx=.. ny=..'",
                              path=path, line=1)
        try:
            nx = int(parts[2].removeprefix("nx="))
            ny = int(parts[3].removeprefix("ny="))
        except ValueError:
            raise FormatError(f"bad header {header!r}", path=path, line=1) from None
        if (nx, ny) != (grid.nx, grid.ny):
            raise FormatError(
                f"field is {nx}x{ny} but grid is {grid.nx}x{grid.ny}", path=path, line=1)

        n = grid.n_cells
        u = np.empty(n)
        v = np.empty(n)
        count = 0
        for lineno, raw in enumerate(fh, start=2):
            line = raw.strip()
            if not line:
                continue
            if count >= n:
                raise FormatError(f"expected {n} cell lines, found more", path=path, line=lineno)
            fields = line.split(",")
            if len(fields) != 3:
                raise FormatError(f"expected 'k,u,v', got {line!r}", path=path, line=lineno)
            try:
                k = int(fields[0])
                uk = float(fields[1])
                vk = float(fields[2])
            except ValueError:
                raise FormatError(f"non-numeric entry in {line!r}", path=path, line=lineno) from None
            if k != count:
                raise FormatError(f"expected cell index {count}, got {k}", path=path, line=lineno)
            if not (np.isfinite(uk) and np.isfinite(vk)):
                raise FormatError(f"non-finite velocity in {line!r}", path=path, line=lineno)
            u[k] = uk
            v[k] = vk
            count += 1
        if count != n:
            raise FormatError(f"expected {n} cell lines, found {count}", path=path)

    mask = grid.obstruction_mask
    if np.any((u[mask] != 0.0) | (v[mask] != 0.0)):
        warnings.warn(f"{path}: nonzero velocity on obstructed cells forced to zero",
                      stacklevel=2)
    return VelocityField(grid=grid, u=u, v=v)


def map_to_reference(src_grid, src_field, ref_grid):
    """Project a velocity field onto a reference grid of the same extents.

    Each reference cell takes the value of the source cell containing its
    center (piecewise-constant mapping).  Reference cells whose centers fall
    in source obstructions are zeroed and marked obstructed on the returned
    field, so every realization shares the reference state dimension.
    """
    if src_field.grid is not src_grid and src_field.grid.content_hash() != src_grid.content_hash():
        raise ValueError("src_field is not bound to src_grid")
    si, sj = containing_cells(ref_grid, src_grid)
    src_k = sj * src_grid.nx + si
    obstructed = src_field.obstructed[src_k] | ref_grid.obstruction_mask
    return VelocityField(grid=ref_grid, u=src_field.u[src_k], v=src_field.v[src_k],
                         obstructed=obstructed)


def grid_with_mapped_obstructions(ref_grid, mapped_field):
    """Reference grid copy whose obstruction mask matches a mapped field."""
    return replace(ref_grid, obstruction_mask=mapped_field.obstructed)

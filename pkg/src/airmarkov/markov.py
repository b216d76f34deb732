"""Finite-dimensional transfer operator: a sparse row-stochastic matrix.

Row k of the matrix is built by releasing a unit mass in cell k and running
the transport solver for one Markov time step; the resulting per-cell masses
become the row, and mass that left the domain lands in an appended absorbing
sink state (index n_cells), so every row sums to exactly 1.  Obstructed
cells and the sink itself are unit self-loops.  Because the transport scheme
is linear, propagating any density with this matrix reproduces the scheme
exactly, at a fraction of the cost.
"""

from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from . import transport
from .errors import IntegrityError
from .flowfield import VelocityField

OPERATOR_MAGIC = b"pfop v1"
SCHEME_ID = "upwind-euler-fv-1"

#: entries below this are dropped and their mass folded back into the row
SPARSITY_FLOOR = 1e-12

#: row sums may deviate from 1 by at most this much
ROW_SUM_TOL = 1e-10

_BUILD_BLOCK = 128


@dataclass(frozen=True)
class SensorConfig:
    """Ordered sensor locations as linear cell indices (indicator columns)."""

    sensor_cells: np.ndarray

    def __post_init__(self):
        cells = np.asarray(self.sensor_cells, dtype=np.int64).reshape(-1)
        if cells.size == 0:
            raise ValueError("sensor configuration must name at least one cell")
        if np.unique(cells).size != cells.size:
            raise ValueError("sensor cells must be distinct")
        if cells.min() < 0:
            raise ValueError("sensor cells must be >= 0")
        object.__setattr__(self, "sensor_cells", cells)

    def __len__(self):
        return self.sensor_cells.size


@dataclass(frozen=True)
class MarkovMatrix:
    """Sparse row-stochastic operator over n_cells + 1 states (last = sink)."""

    matrix: sp.csr_matrix
    dt_markov: float
    provenance: dict = field(default_factory=dict)

    @property
    def n_states(self):
        return self.matrix.shape[0]

    @property
    def n_cells(self):
        return self.n_states - 1

    def validate(self):
        """Raise :class:`IntegrityError` on negative entries or bad row sums."""
        if self.matrix.shape[0] != self.matrix.shape[1]:
            raise IntegrityError(f"operator must be square, got {self.matrix.shape}")
        if self.matrix.nnz and self.matrix.data.min() < 0:
            raise IntegrityError(f"negative entry {self.matrix.data.min():.3e}")
        sums = np.asarray(self.matrix.sum(axis=1)).ravel()
        worst = np.abs(sums - 1.0).max(initial=0.0)
        if worst > ROW_SUM_TOL:
            bad = int(np.abs(sums - 1.0).argmax())
            raise IntegrityError(f"row {bad} sums to {sums[bad]:.12g} (off by {worst:.3e})")
        return self

    def check_provenance(self, grid, velocity_field, diffusivity=None):
        """Raise :class:`IntegrityError` if this operator was not built from
        the given grid and field (hash comparison)."""
        if self.provenance.get("grid") != grid.content_hash():
            raise IntegrityError("operator was built from a different grid")
        if self.provenance.get("field") != velocity_field.content_hash():
            raise IntegrityError("operator was built from a different velocity field")
        if diffusivity is not None and self.provenance.get("diffusivity") != diffusivity:
            raise IntegrityError(
                f"operator was built with diffusivity "
                f"{self.provenance.get('diffusivity')}, expected {diffusivity}")
        return self


def _sparsify_rows(dense_rows, floor):
    """Drop entries < floor, renormalize each row to sum exactly 1."""
    data, indices = [], []
    for row in dense_rows:
        keep = np.flatnonzero(row >= floor)
        vals = row[keep]
        total = vals.sum()
        if total <= 0:
            raise IntegrityError("a row lost all mass during sparsification")
        data.append(vals / total)
        indices.append(keep)
    return data, indices


def build(grid, velocity_field, diffusivity, dt_markov, *, workers=1,
          sparsity_floor=SPARSITY_FLOOR, dt_sub=None):
    """Assemble the Markov matrix for one flow field.

    Parameters
    ----------
    grid : Grid
    velocity_field : VelocityField
        Bound to ``grid`` (its ``obstructed`` mask decides the self-loop rows).
    diffusivity : float
        Diffusion coefficient (m^2/s).
    dt_markov : float
        Markov time step (s); each row is one transport solve of this length.
    workers : int
        Thread count for row blocks.  The block partition is fixed, so the
        result is bit-identical for any worker count.
    sparsity_floor : float
        Entries below this are dropped; their mass is folded back
        proportionally so rows still sum to 1.
    dt_sub : float, optional
        Substep override forwarded to the transport solver (test fixtures).

    Returns
    -------
    MarkovMatrix
    """
    if dt_markov <= 0:
        raise ValueError(f"dt_markov must be > 0, got {dt_markov}")
    n = grid.n_cells
    obstructed = velocity_field.obstructed
    fluid = np.flatnonzero(~obstructed)

    # The operator is the linear part of the dynamics: inlet Dirichlet
    # injection is affine and belongs in the discrete source term (see
    # inlet_release), so rows are solved with the inlet value forced to 0.
    if grid.inlet_value != 0.0:
        zero_inlet = replace(grid, inlet_value=0.0)
        velocity_field = VelocityField(grid=zero_inlet, u=velocity_field.u,
                                       v=velocity_field.v,
                                       obstructed=velocity_field.obstructed)

    blocks = [fluid[lo:lo + _BUILD_BLOCK] for lo in range(0, fluid.size, _BUILD_BLOCK)]

    def solve_block(rows):
        seeds = np.zeros((rows.size, n))
        seeds[np.arange(rows.size), rows] = 1.0
        try:
            return transport.solve(seeds, velocity_field, diffusivity,
                                   dt_markov, dt_sub=dt_sub)
        except Exception:
            # replay row by row so the error names the offending row
            for r in rows:
                seed = np.zeros(n)
                seed[r] = 1.0
                try:
                    transport.solve(seed, velocity_field, diffusivity,
                                    dt_markov, dt_sub=dt_sub)
                except Exception as exc:
                    raise RuntimeError(f"operator row {r}: {exc}") from exc
            raise

    if workers > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(solve_block, blocks))
    else:
        results = [solve_block(rows) for rows in blocks]

    row_data = [None] * (n + 1)
    for rows, (masses, exited) in zip(blocks, results):
        full = np.hstack([masses, exited[:, None]])
        data, indices = _sparsify_rows(full, sparsity_floor)
        for r, vals, cols in zip(rows, data, indices):
            row_data[r] = (vals, cols)
    for k in np.flatnonzero(obstructed):
        row_data[k] = (np.array([1.0]), np.array([k], dtype=np.int64))
    row_data[n] = (np.array([1.0]), np.array([n], dtype=np.int64))

    indptr = np.zeros(n + 2, dtype=np.int64)
    for k, (vals, _) in enumerate(row_data):
        indptr[k + 1] = indptr[k] + vals.size
    data = np.concatenate([vals for vals, _ in row_data])
    indices = np.concatenate([cols for _, cols in row_data])
    matrix = sp.csr_matrix((data, indices, indptr), shape=(n + 1, n + 1))

    provenance = {
        "grid": grid.content_hash(),
        "field": velocity_field.content_hash(),
        "diffusivity": float(diffusivity),
        "scheme": SCHEME_ID,
        "sparsity_floor": float(sparsity_floor),
    }
    return MarkovMatrix(matrix=matrix, dt_markov=float(dt_markov),
                        provenance=provenance).validate()


def inlet_release(grid, velocity_field, diffusivity, dt_markov, *, dt_sub=None):
    """Discrete source vector for inlet Dirichlet boundaries: the one-step
    response (n_states, sink last) of the transport dynamics to a zero
    initial density.  Feed it to :func:`propagate` as a constant source to
    recover the full affine dynamics of a contaminated inlet.
    """
    zero = np.zeros(grid.n_cells)
    masses, exited = transport.solve(zero, velocity_field, diffusivity,
                                     dt_markov, dt_sub=dt_sub)
    return np.append(masses, exited)


def _source_vector(src, operator):
    vec = np.zeros(operator.n_states)
    if isinstance(src, transport.SourceTerm):
        vec[:operator.n_cells] = src.as_vector(operator.n_cells)
        return vec, src.schedule
    arr = np.asarray(src, dtype=float).reshape(-1)
    if arr.size == operator.n_cells:
        vec[:operator.n_cells] = arr
    elif arr.size == operator.n_states:
        vec[:] = arr
    else:
        raise ValueError(f"source vector has {arr.size} entries, expected "
                         f"{operator.n_cells} or {operator.n_states}")
    return vec, "constant"


def propagate(mu, operator, steps, src=None):
    """Iterate mu <- mu @ P for ``steps`` steps, adding the discretized
    source after each product (``single-step`` sources only after the first).

    ``mu`` has n_states entries (sink last) or a batch of such rows; total
    mass is conserved up to the source injections.  ``src`` may be a
    :class:`SourceTerm` or a plain per-step release vector (for example the
    output of :func:`inlet_release`).
    """
    if steps < 0:
        raise ValueError(f"steps must be >= 0, got {steps}")
    arr = np.asarray(mu, dtype=float)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.shape[1] != operator.n_states:
        raise ValueError(f"density has {arr.shape[1]} entries, "
                         f"operator expects {operator.n_states}")
    src_vec = schedule = None
    if src is not None:
        src_vec, schedule = _source_vector(src, operator)
    out = arr.copy()
    for s in range(steps):
        out = out @ operator.matrix
        if src_vec is not None and (schedule == "constant" or s == 0):
            out = out + src_vec
    return out[0] if single else out


def observe(mu, config):
    """Sensor readings y_i = mu[cell_i] (indicator-column products)."""
    arr = np.asarray(mu, dtype=float)
    if config.sensor_cells.max() >= arr.shape[-1]:
        raise IndexError(f"sensor cell {config.sensor_cells.max()} outside density "
                         f"of length {arr.shape[-1]}")
    return arr[..., config.sensor_cells]


# -- pfop v1 container ---------------------------------------------------------
#
#   line 1: b"pfop v1\n"
#   line 2: JSON header {payload, n_states, dt_markov, nnz, provenance,
#           checksum}  (checksum = sha256 over the three raw buffers below)
#   then little-endian raw arrays: indptr (int64), indices (int64),
#   data (float64)

def _array_checksum(*arrays):
    h = hashlib.sha256()
    for arr in arrays:
        h.update(arr.tobytes())
    return h.hexdigest()


def _write_container(path, header, indptr, indices, data):
    with open(path, "wb") as fh:
        fh.write(OPERATOR_MAGIC + b"\n")
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(indptr.tobytes())
        fh.write(indices.tobytes())
        fh.write(data.tobytes())


def _read_container(path, expected_payload):
    with open(path, "rb") as fh:
        magic = fh.readline().rstrip(b"\n")
        if magic != OPERATOR_MAGIC:
            raise IntegrityError(f"{path}: bad magic {magic!r}, expected {OPERATOR_MAGIC!r}")
        try:
            header = json.loads(fh.readline().decode())
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise IntegrityError(f"{path}: unreadable header: {exc}") from None
        payload = header.get("payload")
        if payload != expected_payload:
            raise IntegrityError(f"{path}: payload {payload!r}, expected {expected_payload!r}")
        try:
            n_rows = int(header["n_rows"])
            n_cols = int(header["n_cols"])
            nnz = int(header["nnz"])
        except (KeyError, ValueError) as exc:
            raise IntegrityError(f"{path}: incomplete header: {exc}") from None
        try:
            indptr = np.frombuffer(fh.read(8 * (n_rows + 1)), dtype="<i8")
            indices = np.frombuffer(fh.read(8 * nnz), dtype="<i8")
            data = np.frombuffer(fh.read(8 * nnz), dtype="<f8")
        except ValueError as exc:
            raise IntegrityError(f"{path}: truncated arrays: {exc}") from None
        if fh.read(1):
            raise IntegrityError(f"{path}: trailing bytes after arrays")
    if indptr.size != n_rows + 1 or indices.size != nnz or data.size != nnz:
        raise IntegrityError(f"{path}: truncated arrays")
    if header.get("checksum") != _array_checksum(indptr, indices, data):
        raise IntegrityError(f"{path}: checksum mismatch (file corrupted)")
    matrix = sp.csr_matrix((data.copy(), indices.copy(), indptr.copy()),
                           shape=(n_rows, n_cols))
    return header, matrix


def save_operator(operator, path):
    m = operator.matrix.tocsr()
    m.sort_indices()
    indptr = m.indptr.astype("<i8")
    indices = m.indices.astype("<i8")
    data = m.data.astype("<f8")
    header = {
        "payload": "markov",
        "n_rows": m.shape[0],
        "n_cols": m.shape[1],
        "n_states": operator.n_states,
        "dt_markov": operator.dt_markov,
        "nnz": int(m.nnz),
        "provenance": operator.provenance,
        "checksum": _array_checksum(indptr, indices, data),
    }
    _write_container(path, header, indptr, indices, data)


def load_operator(path):
    """Read a ``pfop v1`` operator, verifying checksum and row stochasticity."""
    header, matrix = _read_container(path, "markov")
    op = MarkovMatrix(matrix=matrix, dt_markov=float(header["dt_markov"]),
                      provenance=header.get("provenance", {}))
    return op.validate()

"""Contaminant tracking matrices: accumulated exposure over a horizon.

The tracking matrix sums the operator powers I + P + ... + P^m restricted to
physical cells: row i is the time-accumulated exposure at every cell from a
unit release at cell i within the horizon tau = m * dt_markov.  Thresholding
with a sensor accuracy floor turns it into a binary observability pattern;
placement and sensing constraints zero columns and rows; volume weighting
scales columns by normalized cell volumes.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp

REAL = "real"
BINARY = "binary"
VOLUME_WEIGHTED = "volume_weighted"

#: switch the power accumulation to dense algebra above this fill fraction
_DENSE_SWITCH = 0.25


@dataclass(frozen=True)
class TrackingMatrix:
    """Exposure pattern over physical cells.

    kind is "real" (accumulated masses), "binary" (thresholded pattern), or
    "volume_weighted" (binary scaled by normalized cell volumes).  The sink
    column of the underlying operator is excluded from the matrix but its
    accumulation is retained in ``sink_exposure`` for diagnostics and for
    optional sink-candidate placement.
    """

    matrix: sp.csr_matrix
    kind: str
    m: int
    tau: float
    dt_markov: float
    eps_acc: float | None = None
    sink_exposure: np.ndarray | None = None

    @property
    def n_cells(self):
        return self.matrix.shape[0]

    def toarray(self):
        return self.matrix.toarray()

    def support(self):
        """Boolean dense support pattern (strictly nonzero entries)."""
        pattern = self.matrix.copy()
        pattern.eliminate_zeros()
        return pattern.astype(bool).toarray()


def snap_steps(tau, dt_markov):
    """Round a horizon to the nearest whole number of Markov steps.

    Emits a warning when tau is not an exact multiple of dt_markov.
    """
    if tau < 0:
        raise ValueError(f"tau must be >= 0, got {tau}")
    m = int(round(tau / dt_markov))
    snapped = m * dt_markov
    if abs(snapped - tau) > 1e-9 * max(tau, dt_markov):
        warnings.warn(f"horizon {tau} s snapped to {snapped} s ({m} Markov steps)",
                      stacklevel=2)
    return m


def tracking_matrix(operator, m):
    """Accumulate I + P + ... + P^m restricted to physical cells.

    Iterates X <- X @ P with sparse products, switching to dense algebra
    when the iterate fills in (the powers of a transport operator lose
    sparsity quickly, and dense BLAS is then far cheaper).
    """
    if m < 0:
        raise ValueError(f"step count must be >= 0, got {m}")
    n_states = operator.n_states
    n = operator.n_cells
    P = operator.matrix

    X = sp.identity(n_states, format="csr")
    total = sp.identity(n_states, format="csr")
    dense = P.nnz / n_states ** 2 > _DENSE_SWITCH
    if dense:
        P = P.toarray()
        X = X.toarray()
        total = total.toarray()
    for _ in range(m):
        if not dense and X.nnz / n_states ** 2 > _DENSE_SWITCH:
            dense = True
            P = P.toarray()
            X = X.toarray()
            total = total.toarray()
        X = X @ P
        total = total + X
    if dense:
        total = sp.csr_matrix(total)

    total = total.tocsr()
    q = total[:n, :n].tocsr()
    sink = total[:n, [n]].toarray().ravel()
    return TrackingMatrix(matrix=q, kind=REAL, m=int(m),
                          tau=float(m * operator.dt_markov),
                          dt_markov=float(operator.dt_markov),
                          sink_exposure=sink)


def threshold(tracking, eps_acc):
    """Binary observability pattern: entry 1 iff exposure strictly exceeds
    the sensor accuracy floor eps_acc."""
    if tracking.kind != REAL:
        raise ValueError(f"threshold expects a real tracking matrix, got {tracking.kind!r}")
    if eps_acc < 0:
        raise ValueError(f"eps_acc must be >= 0, got {eps_acc}")
    q = tracking.matrix.copy()
    mask = q.data > eps_acc
    q.data = mask.astype(float)
    q.eliminate_zeros()
    sink = None
    if tracking.sink_exposure is not None:
        sink = (tracking.sink_exposure > eps_acc).astype(float)
    return replace(tracking, matrix=q.tocsr(), kind=BINARY, eps_acc=float(eps_acc),
                   sink_exposure=sink)


def _require_binary(tracking, op_name):
    if tracking.kind != BINARY:
        raise ValueError(f"{op_name} expects a binary tracking matrix, got {tracking.kind!r}")


def apply_location_constraint(tracking, forbidden):
    """Zero the columns of cells where a sensor cannot be placed."""
    _require_binary(tracking, "apply_location_constraint")
    if forbidden.n_cells != tracking.n_cells:
        raise IndexError(f"forbidden set sized for {forbidden.n_cells} cells, "
                         f"matrix has {tracking.n_cells}")
    if len(forbidden) == 0:
        return tracking
    scale = np.ones(tracking.n_cells)
    scale[forbidden.indices] = 0.0
    q = (tracking.matrix @ sp.diags(scale)).tocsr()
    q.eliminate_zeros()
    return replace(tracking, matrix=q)


def apply_sensing_constraint(tracking, unmonitored):
    """Zero the rows of release cells that must not count as monitored."""
    _require_binary(tracking, "apply_sensing_constraint")
    if unmonitored.n_cells != tracking.n_cells:
        raise IndexError(f"unmonitored set sized for {unmonitored.n_cells} cells, "
                         f"matrix has {tracking.n_cells}")
    if len(unmonitored) == 0:
        return tracking
    scale = np.ones(tracking.n_cells)
    scale[unmonitored.indices] = 0.0
    q = (sp.diags(scale) @ tracking.matrix).tocsr()
    q.eliminate_zeros()
    sink = tracking.sink_exposure
    if sink is not None:
        sink = sink * scale
    return replace(tracking, matrix=q, sink_exposure=sink)


def volume_weight(tracking, grid=None, *, volumes=None):
    """Scale column j by V_j / V_total (uniform grids: a 1/n multiple).

    ``volumes`` overrides the grid's per-cell volumes, keeping the weighting
    honest for nonuniform discretizations.
    """
    _require_binary(tracking, "volume_weight")
    if volumes is None:
        if grid is None:
            raise ValueError("volume_weight needs a grid or explicit volumes")
        volumes = grid.cell_volumes
    volumes = np.asarray(volumes, dtype=float).reshape(-1)
    if volumes.size != tracking.n_cells:
        raise IndexError(f"got {volumes.size} volumes, matrix has {tracking.n_cells} cells")
    if np.any(volumes <= 0):
        raise ValueError("cell volumes must be positive")
    scale = volumes / volumes.sum()
    q = (tracking.matrix @ sp.diags(scale)).tocsr()
    sink = tracking.sink_exposure
    if sink is not None:
        sink = sink / tracking.n_cells
    return replace(tracking, matrix=q, kind=VOLUME_WEIGHTED, sink_exposure=sink)


# -- export --------------------------------------------------------------------

def save_tracking(tracking, path):
    """Store a tracking matrix in the ``pfop v1`` container with a kind tag."""
    from .markov import _array_checksum, _write_container

    m = tracking.matrix.tocsr()
    m.sort_indices()
    indptr = m.indptr.astype("<i8")
    indices = m.indices.astype("<i8")
    data = m.data.astype("<f8")
    header = {
        "payload": "tracking",
        "n_rows": m.shape[0],
        "n_cols": m.shape[1],
        "kind": tracking.kind,
        "m": tracking.m,
        "tau": tracking.tau,
        "dt_markov": tracking.dt_markov,
        "eps_acc": tracking.eps_acc,
        "nnz": int(m.nnz),
        "sink_exposure": None if tracking.sink_exposure is None
                         else tracking.sink_exposure.tolist(),
        "checksum": _array_checksum(indptr, indices, data),
    }
    _write_container(path, header, indptr, indices, data)


def load_tracking(path):
    from .markov import _read_container

    header, matrix = _read_container(path, "tracking")
    sink = header.get("sink_exposure")
    return TrackingMatrix(
        matrix=matrix, kind=header["kind"], m=int(header["m"]),
        tau=float(header["tau"]), dt_markov=float(header["dt_markov"]),
        eps_acc=None if header.get("eps_acc") is None else float(header["eps_acc"]),
        sink_exposure=None if sink is None else np.asarray(sink, dtype=float))


def save_pattern_bits(tracking, path):
    """Row-major bitset dump of a binary pattern for external analysis.

    Header line ``pfbits v1 rows=<r> cols=<c>`` then one byte-padded packed
    row per matrix row.
    """
    _require_binary(tracking, "save_pattern_bits")
    dense = tracking.support()
    packed = np.packbits(dense, axis=1)
    with open(path, "wb") as fh:
        fh.write(f"pfbits v1 rows={dense.shape[0]} cols={dense.shape[1]}\n".encode())
        fh.write(packed.tobytes())

"""Time-delay overembedding construction and feature/label assembly.

A delay overembedding turns a length-t, D-dimensional series into rows of
k consecutive (lagged by xi) state vectors.  Columns are laid out
delay-major, dimension-minor: column j corresponds to delay index
``j // D`` and state dimension ``j % D``, with delay 0 the oldest entry
in the window and delay k-1 the newest.  Feature importances are reported
against this column indexing, so the layout is part of the contract.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class TimeSeries:
    """A length-t sequence of D-dimensional states.

    ``data`` is a (t, D) float array; scalar series may be passed as 1-D
    arrays and are stored as a single column.  ``dt`` is the sampling
    interval for continuous systems (None for maps).
    """

    data: np.ndarray
    dt: float | None = None

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=float)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.ndim != 2:
            raise ValueError(f"series must be 1-D or 2-D, got ndim={arr.ndim}")
        # zero-length series are allowed so an n_steps=0 forecast can be empty
        if arr.shape[1] < 1:
            raise ValueError(f"series must have at least one dimension, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("series contains non-finite values")
        object.__setattr__(self, "data", arr)

    @property
    def t_len(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def __len__(self) -> int:
        return self.t_len


def as_timeseries(x, dt: float | None = None) -> TimeSeries:
    """Coerce an array (or pass through a TimeSeries) to TimeSeries."""
    if isinstance(x, TimeSeries):
        return x
    return TimeSeries(np.asarray(x, dtype=float), dt=dt)


@dataclass(frozen=True)
class OverembeddingSpec:
    """Window geometry of the overembedding plus the selected column set.

    lead is the offset of the label beyond the newest window element
    (the forecast horizon in steps).  selected_columns, when present, is
    the sorted set of retained feature columns.
    """

    k: int
    xi: int
    lead: int = 1
    selected_columns: np.ndarray | None = field(default=None)

    def __post_init__(self):
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if self.xi < 1:
            raise ValueError(f"xi must be >= 1, got {self.xi}")
        if self.lead < 1:
            raise ValueError(f"lead must be >= 1, got {self.lead}")
        if self.selected_columns is not None:
            cols = np.asarray(self.selected_columns, dtype=np.int64)
            if cols.size == 0:
                raise ValueError("selected_columns must be nonempty when present")
            if np.any(cols < 0):
                raise ValueError("selected_columns indices must be >= 0")
            cols = np.unique(cols)  # sorted, deduplicated
            object.__setattr__(self, "selected_columns", cols)

    @property
    def window_len(self) -> int:
        """Number of raw time steps spanned by one feature window."""
        return (self.k - 1) * self.xi + 1

    def delay_positions(self) -> np.ndarray:
        """Offsets of the k delayed states inside a window of window_len steps."""
        return np.arange(self.k) * self.xi


def build_overembedding(X, k: int, xi: int) -> np.ndarray:
    """Stack k copies of the series lagged by xi into feature rows.

    Row i is the concatenation of states at times i, i+xi, ..., i+(k-1)xi.
    Returns a (t-(k-1)xi, k*D) array.
    """
    X = as_timeseries(X)
    if k < 1 or xi < 1:
        raise ValueError(f"k and xi must be >= 1, got k={k}, xi={xi}")
    span = (k - 1) * xi
    n_rows = X.t_len - span
    if n_rows < 1:
        raise ValueError(
            f"series too short for overembedding: need t_len > (k-1)*xi = {span}, "
            f"got t_len = {X.t_len}"
        )
    blocks = [X.data[j * xi : j * xi + n_rows] for j in range(k)]
    return np.concatenate(blocks, axis=1)


def build_training_pairs(X, spec: OverembeddingSpec) -> tuple[np.ndarray, np.ndarray]:
    """Feature rows and their labels ``lead`` steps past the window end.

    Label row i is the state at time i + (k-1)*xi + lead, i.e. lead steps
    beyond the newest element of feature row i.  Returns (F, L) with
    N = t_len - (k-1)*xi - lead rows each.
    """
    X = as_timeseries(X)
    span = (spec.k - 1) * spec.xi
    n = X.t_len - span - spec.lead
    if n < 1:
        raise ValueError(
            f"series too short for training pairs: need t_len > (k-1)*xi + lead = "
            f"{span + spec.lead}, got t_len = {X.t_len}"
        )
    features = build_overembedding(X, spec.k, spec.xi)[:n]
    labels = X.data[span + spec.lead : span + spec.lead + n]
    return features, labels


def reduce_features(F: np.ndarray, columns) -> np.ndarray:
    """Project feature rows onto a sorted subset of columns."""
    F = np.asarray(F)
    cols = np.asarray(columns, dtype=np.int64)
    if cols.size == 0:
        raise ValueError("column set must be nonempty")
    if np.any(cols < 0) or np.any(cols >= F.shape[1]):
        raise ValueError(
            f"column index out of range: valid range [0, {F.shape[1]}), got {cols}"
        )
    return F[:, np.sort(cols)]

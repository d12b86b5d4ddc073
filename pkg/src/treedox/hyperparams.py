"""Data-driven prescription of window size k and feature selection.

The overembedding dimension follows from where the average mutual
information (AMI, in nats) between a series and its lagged copy stops
being significant; the retained feature set is everything whose stage-1
impurity importance beats the uniform null rate 1/(k*D).

Two readings of "use a p-value as a threshold" on the AMI curve are
implemented:

* ``"ami-level"`` (default): the curve is compared against the p-value
  itself as an absolute AMI level in nats.
* ``"surrogate"``: the threshold is the (1-p) quantile of AMI values
  between the series and independently shuffled copies of itself, i.e. a
  permutation significance test.

Both agree that tau_crit is one lag before the first insignificant lag.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .embedding import as_timeseries

DEFAULT_THRESHOLD_MODE = "ami-level"
MAX_BINS = 64
# Lag prescription uses a fixed coarse grid: finer grids inflate the MI of
# strongly dependent pairs and push the sub-threshold crossing far out.
PRESCRIPTION_BINS = 6


def sturges_bins(n: int) -> int:
    """Histogram bin count: ceil(log2 n) + 1, capped at MAX_BINS."""
    if n < 2:
        return 2
    return min(int(math.ceil(math.log2(n))) + 1, MAX_BINS)


def average_mutual_information(a, b, n_bins: int | None = None) -> float:
    """Histogram plug-in estimate of I(A;B) in nats.

    Equal-width n_bins x n_bins grid spanning each input's range; empty
    cells are skipped.  Nonnegative by construction; exactly symmetric in
    its arguments (terms are accumulated with exact summation).  A
    constant input has a single occupied bin and yields 0.
    """
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.size != b.size:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    if a.size < 2:
        raise ValueError(f"need at least 2 samples, got {a.size}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise ValueError("inputs contain non-finite values")
    if n_bins is None:
        n_bins = sturges_bins(a.size)
    if n_bins < 2:
        raise ValueError(f"n_bins must be >= 2, got {n_bins}")
    if a.min() == a.max() or b.min() == b.max():
        return 0.0

    joint, _, _ = np.histogram2d(a, b, bins=n_bins,
                                 range=[[a.min(), a.max()], [b.min(), b.max()]])
    n = a.size
    p_joint = joint / n
    pa = p_joint.sum(axis=1)
    pb = p_joint.sum(axis=0)
    terms = []
    nz = np.nonzero(p_joint)
    for i, j in zip(*nz):
        pij = p_joint[i, j]
        terms.append(pij * math.log(pij / (pa[i] * pb[j])))
    return max(math.fsum(terms), 0.0)


@dataclass(frozen=True)
class AmiCurve:
    """AMI of one series dimension against its tau-lagged copy, tau = 1..tau_max."""

    lags: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        lags = np.asarray(self.lags, dtype=np.int64)
        values = np.asarray(self.values, dtype=float)
        if lags.shape != values.shape:
            raise ValueError("lags and values must align")
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise ValueError("AMI values must be finite and nonnegative")
        object.__setattr__(self, "lags", lags)
        object.__setattr__(self, "values", values)


def ami_curve(X, dim: int = 0, tau_max: int = 100,
              n_bins: int | None = None) -> AmiCurve:
    """AMI between x[0:t-tau] and x[tau:t] on one dimension, per lag.

    n_bins=None uses the fixed prescription grid (PRESCRIPTION_BINS) so
    curves feed the k prescription consistently.
    """
    X = as_timeseries(X)
    if not 0 <= dim < X.dim:
        raise ValueError(f"dim {dim} out of range for {X.dim}-dimensional series")
    if tau_max < 1:
        raise ValueError(f"tau_max must be >= 1, got {tau_max}")
    if X.t_len <= tau_max + 1:
        raise ValueError(
            f"series too short: need t_len > tau_max + 1 = {tau_max + 1}, "
            f"got {X.t_len}"
        )
    if n_bins is None:
        n_bins = PRESCRIPTION_BINS
    x = X.data[:, dim]
    lags = np.arange(1, tau_max + 1)
    values = np.empty(tau_max)
    for t_i, tau in enumerate(lags):
        values[t_i] = average_mutual_information(x[:-tau], x[tau:], n_bins=n_bins)
    return AmiCurve(lags=lags, values=values)


def surrogate_ami_threshold(x, p_value: float, n_surrogates: int = 100,
                            n_bins: int | None = None, seed: int = 0) -> float:
    """(1-p) quantile of AMI between x and shuffled copies of itself.

    Each surrogate uses an independent PCG64 stream derived from
    (seed, surrogate index).  Floored at 1e-12 so that an identically
    zero AMI curve (constant series) still counts as insignificant.
    """
    x = np.asarray(x, dtype=float).ravel()
    mis = np.empty(n_surrogates)
    for s in range(n_surrogates):
        rng = np.random.default_rng(np.random.SeedSequence((seed, s)))
        mis[s] = average_mutual_information(x, rng.permutation(x), n_bins=n_bins)
    return max(float(np.quantile(mis, 1.0 - p_value)), 1e-12)


def _threshold_for(x, p_value: float, mode: str, n_surrogates: int,
                   n_bins: int | None, seed: int) -> float:
    if mode == "ami-level":
        return p_value
    if mode == "surrogate":
        return surrogate_ami_threshold(x, p_value, n_surrogates, n_bins, seed)
    raise ValueError(f"unknown threshold mode {mode!r}")


def tau_critical(curve: AmiCurve, training_dim, p_value: float,
                 n_surrogates: int = 100, *,
                 mode: str = DEFAULT_THRESHOLD_MODE,
                 n_bins: int | None = None, seed: int = 0) -> int:
    """Last lag before the AMI curve first drops below the threshold.

    Returns the first sub-threshold lag minus one (0 if lag 1 is already
    insignificant); if the curve never drops below, returns the largest
    lag in the curve and warns.
    """
    if not 0.0 < p_value < 1.0:
        raise ValueError(f"p_value must be in (0, 1), got {p_value}")
    thr = _threshold_for(np.asarray(training_dim, dtype=float).ravel(),
                         p_value, mode, n_surrogates, n_bins, seed)
    below = np.nonzero(curve.values < thr)[0]
    if below.size == 0:
        tau_max = int(curve.lags[-1])
        warnings.warn(
            f"AMI never fell below threshold {thr:.3g} up to lag {tau_max}; "
            f"using tau_crit = {tau_max}",
            RuntimeWarning,
        )
        return tau_max
    return int(curve.lags[below[0]]) - 1


def _default_tau_max(t_len: int) -> int:
    return max(2, min(t_len - 2, max(200, t_len // 10)))


def tau_criticals(X, p_value: float, *, tau_max: int | None = None,
                  n_bins: int | None = None, mode: str = DEFAULT_THRESHOLD_MODE,
                  n_surrogates: int = 100, seed: int = 0) -> list[int]:
    """Per-dimension tau_crit, scanning lags incrementally until the first
    sub-threshold crossing (the full curve is only materialized when the
    crossing never happens)."""
    X = as_timeseries(X)
    if not 0.0 < p_value < 1.0:
        raise ValueError(f"p_value must be in (0, 1), got {p_value}")
    tau_cap = _default_tau_max(X.t_len) if tau_max is None else tau_max
    if X.t_len <= tau_cap + 1:
        raise ValueError(
            f"series too short: need t_len > tau_max + 1 = {tau_cap + 1}, "
            f"got {X.t_len}"
        )
    out = []
    for d in range(X.dim):
        x = X.data[:, d]
        thr = _threshold_for(x, p_value, mode, n_surrogates, n_bins, seed)
        tau_crit = None
        for tau in range(1, tau_cap + 1):
            mi = average_mutual_information(x[:-tau], x[tau:], n_bins=n_bins)
            if mi < thr:
                tau_crit = tau - 1
                break
        if tau_crit is None:
            warnings.warn(
                f"AMI of dimension {d} never fell below threshold {thr:.3g} "
                f"up to lag {tau_cap}; using tau_crit = {tau_cap}",
                RuntimeWarning,
            )
            tau_crit = tau_cap
        out.append(tau_crit)
    return out


def prescribe_k(X, xi: int, p_value: float, *, tau_max: int | None = None,
                n_bins: int | None = None, mode: str = DEFAULT_THRESHOLD_MODE,
                n_surrogates: int = 100, seed: int = 0) -> int:
    """k = ceil(max over dimensions of tau_crit / xi) + 1, at least 2."""
    if xi < 1:
        raise ValueError(f"xi must be >= 1, got {xi}")
    taus = tau_criticals(X, p_value, tau_max=tau_max, n_bins=n_bins,
                         mode=mode, n_surrogates=n_surrogates, seed=seed)
    k = math.ceil(max(taus) / xi) + 1
    return max(k, 2)


def select_features(fi) -> tuple[np.ndarray, int]:
    """Columns whose importance reaches the uniform null rate 1/len(fi).

    Returns (sorted column indices, count).  An all-zero importance
    vector (splitless forest) keeps every column, with a warning.
    """
    fi = np.asarray(fi, dtype=float)
    if fi.ndim != 1 or fi.size == 0:
        raise ValueError(f"importance vector must be 1-D and nonempty, got {fi.shape}")
    total = fi.sum()
    if not (abs(total - 1.0) <= 1e-6 or total == 0.0):
        raise ValueError(f"importances must sum to 1 (or all be 0), got {total}")
    fi0 = 1.0 / fi.size
    cols = np.flatnonzero(fi >= fi0)
    if cols.size == 0:
        warnings.warn(
            "no feature importance reached the null rate (splitless forest); "
            "keeping all columns",
            RuntimeWarning,
        )
        cols = np.arange(fi.size)
    return cols, int(cols.size)


@dataclass(frozen=True)
class PrescriptionReport:
    """Everything the two-stage training decided from the data."""

    tau_crit: list[int]
    k: int
    xi: int
    p_value: float
    fi: np.ndarray
    fi0: float
    selected_columns: np.ndarray
    p: int
    threshold_mode: str = DEFAULT_THRESHOLD_MODE
    k_forced: bool = field(default=False)

    def to_jsonable(self) -> dict:
        return {
            "tau_crit": [int(t) for t in self.tau_crit],
            "k": int(self.k),
            "xi": int(self.xi),
            "p_value": float(self.p_value),
            "fi": [float(v) for v in self.fi],
            "fi0": float(self.fi0),
            "selected_columns": [int(c) for c in self.selected_columns],
            "p": int(self.p),
            "threshold_mode": self.threshold_mode,
            "k_forced": bool(self.k_forced),
        }

    @classmethod
    def from_jsonable(cls, doc: dict) -> "PrescriptionReport":
        return cls(
            tau_crit=[int(t) for t in doc["tau_crit"]],
            k=int(doc["k"]),
            xi=int(doc["xi"]),
            p_value=float(doc["p_value"]),
            fi=np.asarray(doc["fi"], dtype=float),
            fi0=float(doc["fi0"]),
            selected_columns=np.asarray(doc["selected_columns"], dtype=np.int64),
            p=int(doc["p"]),
            threshold_mode=doc.get("threshold_mode", DEFAULT_THRESHOLD_MODE),
            k_forced=bool(doc.get("k_forced", False)),
        )

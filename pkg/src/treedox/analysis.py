"""Forecast metrics and attractor/signal analysis tools."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .embedding import as_timeseries
from .errors import ScalingRegionError
from .hyperparams import average_mutual_information  # re-export for metrics use

__all__ = [
    "rmse",
    "nmae",
    "average_mutual_information",
    "CorrelationDimensionFit",
    "correlation_dimension",
    "savitzky_golay",
    "lyapunov_time_axis",
]


def rmse(truth, pred) -> tuple[float, np.ndarray]:
    """(overall RMSE, per-step RMSE across dimensions)."""
    t = as_timeseries(truth).data
    p = as_timeseries(pred).data
    if t.shape != p.shape:
        raise ValueError(f"shape mismatch: truth {t.shape} vs pred {p.shape}")
    sq = (t - p) ** 2
    per_step = np.sqrt(sq.mean(axis=1))
    return float(np.sqrt(sq.mean())), per_step


def nmae(truth, forecasts, train_min: float, train_max: float) -> np.ndarray:
    """Mean absolute error over forecast realizations, normalized by the
    training range, per time point.

    forecasts is (R, T) for R realizations of a length-T scalar forecast
    (a single realization may be passed as a 1-D vector).  Since the
    regressor cannot leave the training range, 1 marks the worst possible
    forecast and 0 a perfect one.
    """
    if train_max <= train_min:
        raise ValueError(
            f"degenerate training range: [{train_min}, {train_max}]"
        )
    t = np.asarray(truth, dtype=float).ravel()
    f = np.asarray(forecasts, dtype=float)
    if f.ndim == 1:
        f = f[None, :]
    if f.ndim != 2 or f.shape[1] != t.size:
        raise ValueError(
            f"forecasts must be (R, {t.size}), got shape {f.shape}"
        )
    return np.abs(t[None, :] - f).mean(axis=0) / (train_max - train_min)


@dataclass(frozen=True)
class CorrelationDimensionFit:
    """Correlation-sum curve with the fitted scaling region."""

    radii: np.ndarray
    correlation_sums: np.ndarray
    fit_range: tuple[int, int]   # [lo, hi) indices into radii
    D2: float
    fit_r2: float


@njit(cache=True)
def _pair_log_distance_counts(points, w, log_r0, inv_dlog, n_bins):
    """Histogram of pair log-distances over pairs with |i-j| > w.

    Bin b collects pairs with log d in [log_r0 + (b-1)*dlog, ...); bin 0
    collects everything at or below the smallest radius.
    """
    m, dim = points.shape
    counts = np.zeros(n_bins + 1, dtype=np.int64)
    for i in range(m):
        for j in range(i + w + 1, m):
            d2 = 0.0
            for d in range(dim):
                diff = points[i, d] - points[j, d]
                d2 += diff * diff
            if d2 <= 0.0:
                counts[0] += 1
                continue
            b = int(np.floor((0.5 * np.log(d2) - log_r0) * inv_dlog)) + 1
            if b < 0:
                b = 0
            elif b > n_bins:
                b = n_bins
            counts[b] += 1
    return counts


def correlation_dimension(points, n_radii: int = 40, theiler_window: int = 0,
                          r_min: float | None = None, r_max: float | None = None,
                          slope_tolerance: float = 0.10,
                          min_region_len: int = 5) -> CorrelationDimensionFit:
    """Grassberger-Procaccia correlation dimension of a point cloud.

    C(r) = 2/((M-w)(M-w-1)) * #{pairs with |i-j| > w and ||p_i - p_j|| <= r}
    on log-spaced radii; D2 is the log-log slope over the longest
    contiguous radius run whose local slopes stay within slope_tolerance
    (relative spread) of each other.

    The default radius range spans the 0.1% to 50% quantiles of pair
    distances of a deterministic subsample.  Raises ScalingRegionError
    (carrying the curve) when no acceptable run exists.
    """
    pts = np.ascontiguousarray(np.asarray(points, dtype=float))
    if pts.ndim == 1:
        pts = pts[:, None]
    m = pts.shape[0]
    if m < 10:
        raise ValueError(f"need at least 10 points, got {m}")
    if theiler_window < 0:
        raise ValueError(f"theiler_window must be >= 0, got {theiler_window}")
    if n_radii < max(min_region_len + 1, 3):
        raise ValueError(f"n_radii too small: {n_radii}")

    if r_min is None or r_max is None:
        stride = max(1, m // 1024)
        sub = pts[::stride][:1024]
        diffs = sub[:, None, :] - sub[None, :, :]
        dist = np.sqrt((diffs ** 2).sum(axis=2))
        dist = dist[np.triu_indices(len(sub), k=1)]
        dist = dist[dist > 0]
        if dist.size == 0:
            raise ValueError("all sampled points coincide")
        if r_min is None:
            r_min = float(np.quantile(dist, 0.001))
        if r_max is None:
            r_max = float(np.quantile(dist, 0.5))
    if not 0 < r_min < r_max:
        raise ValueError(f"need 0 < r_min < r_max, got {r_min}, {r_max}")

    radii = np.geomspace(r_min, r_max, n_radii)
    log_r = np.log(radii)
    inv_dlog = (n_radii - 1) / (log_r[-1] - log_r[0])
    counts = _pair_log_distance_counts(
        pts, theiler_window, log_r[0], inv_dlog, n_radii
    )
    mw = m - theiler_window
    n_pairs = mw * (mw - 1) / 2.0
    if n_pairs <= 0:
        raise ValueError("theiler_window leaves no admissible pairs")
    # counts[b] holds pairs between radius b-1 and b; cumulative -> C(r)
    c_of_r = np.cumsum(counts)[:-1] / n_pairs

    valid = c_of_r > 0
    with np.errstate(divide="ignore"):
        log_c = np.where(valid, np.log(np.maximum(c_of_r, 1e-300)), -np.inf)
    slopes = np.full(n_radii - 1, np.nan)
    for b in range(n_radii - 1):
        if valid[b] and valid[b + 1] and c_of_r[b + 1] > c_of_r[b]:
            slopes[b] = (log_c[b + 1] - log_c[b]) / (log_r[b + 1] - log_r[b])

    best_lo, best_hi = -1, -1
    for lo in range(n_radii - 1):
        if not np.isfinite(slopes[lo]):
            continue
        smin = smax = slopes[lo]
        for hi in range(lo + 1, n_radii):
            s = slopes[hi - 1]
            if not np.isfinite(s):
                break
            smin = min(smin, s)
            smax = max(smax, s)
            mean = 0.5 * (smin + smax)
            if mean <= 0 or (smax - smin) > slope_tolerance * mean:
                break
            if hi - lo >= min_region_len and hi - lo > best_hi - best_lo:
                best_lo, best_hi = lo, hi
    if best_lo < 0:
        raise ScalingRegionError(
            "no scaling region with stable local slope found",
            radii=radii, correlation_sums=c_of_r,
        )

    seg = slice(best_lo, best_hi + 1)
    coeffs, res = np.polyfit(log_r[seg], log_c[seg], 1, full=True)[:2]
    d2 = float(coeffs[0])
    y = log_c[seg]
    ss_tot = float(((y - y.mean()) ** 2).sum())
    ss_res = float(res[0]) if len(res) else 0.0
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return CorrelationDimensionFit(
        radii=radii,
        correlation_sums=c_of_r,
        fit_range=(best_lo, best_hi + 1),
        D2=d2,
        fit_r2=r2,
    )


def _sg_smoothing_weights(offsets: np.ndarray, poly_order: int) -> np.ndarray:
    """Least-squares weights evaluating the local fit at offset 0."""
    a = np.vander(offsets.astype(float), N=poly_order + 1, increasing=True)
    return np.linalg.pinv(a)[0]


def savitzky_golay(series, window: int, poly_order: int) -> np.ndarray:
    """Local least-squares polynomial smoothing.

    Interior points use the symmetric window; within half a window of
    either end the unavailable side is truncated and the polynomial is
    refit on what remains, so polynomials up to poly_order pass through
    unchanged everywhere, edges included.
    """
    x = np.asarray(series, dtype=float).ravel()
    n = x.size
    if window % 2 == 0 or window < 1:
        raise ValueError(f"window must be odd and positive, got {window}")
    if poly_order < 0 or poly_order >= window:
        raise ValueError(
            f"poly_order must satisfy 0 <= poly_order < window, got {poly_order}"
        )
    if window > n:
        raise ValueError(f"window {window} exceeds series length {n}")
    half = window // 2
    out = np.empty(n)
    core = _sg_smoothing_weights(np.arange(-half, half + 1), poly_order)
    if n >= window:
        out[half : n - half] = np.convolve(x, core[::-1], mode="valid")
    for i in range(min(half, n)):
        offs = np.arange(-i, min(half, n - 1 - i) + 1)
        out[i] = _sg_smoothing_weights(offs, poly_order) @ x[i + offs]
    for i in range(max(n - half, half), n):
        offs = np.arange(-min(half, i), n - i)
        out[i] = _sg_smoothing_weights(offs, poly_order) @ x[i + offs]
    return out


def lyapunov_time_axis(n_steps: int, dt: float, lambda_max: float) -> np.ndarray:
    """axis[n] = n * dt * lambda_max, the elapsed Lyapunov time per step."""
    if lambda_max <= 0:
        raise ValueError(f"lambda_max must be > 0, got {lambda_max}")
    if n_steps < 0:
        raise ValueError(f"n_steps must be >= 0, got {n_steps}")
    return np.arange(n_steps) * (dt * lambda_max)

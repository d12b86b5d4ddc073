"""Two-stage training and closed-/open-loop forecasting.

Training fits one ensemble on the full overembedding to rank delay
features by impurity importance, keeps the columns whose importance
reaches the uniform null rate, and fits a second ensemble on the reduced
columns.  Closed-loop forecasts feed each prediction back into the input
window; open-loop forecasts always read true states.
"""

from __future__ import annotations

import gzip
import json
import math
import sys
from dataclasses import dataclass

import numpy as np

from . import etr
from .embedding import (
    OverembeddingSpec,
    TimeSeries,
    as_timeseries,
    build_overembedding,
    build_training_pairs,
    reduce_features,
)
from .hyperparams import (
    DEFAULT_THRESHOLD_MODE,
    PrescriptionReport,
    select_features,
    tau_criticals,
)

MODEL_SERIALIZATION_VERSION = 1


@dataclass(frozen=True)
class TreeDoxModel:
    """Deployable forecaster: reduced-feature ensemble plus window geometry."""

    spec: OverembeddingSpec
    stage2: etr.EtrEnsemble
    report: PrescriptionReport
    training_tail: np.ndarray   # last (k-1)*xi + 1 training states
    dim: int
    dt: float | None = None

    def __post_init__(self):
        want = self.spec.window_len
        if self.training_tail.shape != (want, self.dim):
            raise ValueError(
                f"training_tail must be ({want}, {self.dim}), "
                f"got {self.training_tail.shape}"
            )
        if self.stage2.n_input_features != len(self.spec.selected_columns):
            raise ValueError(
                "stage-2 ensemble input width disagrees with selected columns"
            )

    def to_jsonable(self) -> dict:
        return {
            "format": "treedox-model",
            "version": MODEL_SERIALIZATION_VERSION,
            "spec": {
                "k": self.spec.k,
                "xi": self.spec.xi,
                "lead": self.spec.lead,
                "selected_columns": [int(c) for c in self.spec.selected_columns],
            },
            "report": self.report.to_jsonable(),
            "dim": self.dim,
            "dt": self.dt,
            "training_tail": [[float(v) for v in row] for row in self.training_tail],
            "stage2": self.stage2.to_jsonable(),
        }

    @classmethod
    def from_jsonable(cls, doc: dict) -> "TreeDoxModel":
        if doc.get("format") != "treedox-model":
            raise ValueError(f"not a model document: format={doc.get('format')!r}")
        if doc.get("version") != MODEL_SERIALIZATION_VERSION:
            raise ValueError(f"unsupported model version {doc.get('version')!r}")
        spec = OverembeddingSpec(
            k=int(doc["spec"]["k"]),
            xi=int(doc["spec"]["xi"]),
            lead=int(doc["spec"]["lead"]),
            selected_columns=np.asarray(doc["spec"]["selected_columns"],
                                        dtype=np.int64),
        )
        return cls(
            spec=spec,
            stage2=etr.EtrEnsemble.from_jsonable(doc["stage2"]),
            report=PrescriptionReport.from_jsonable(doc["report"]),
            training_tail=np.asarray(doc["training_tail"], dtype=float),
            dim=int(doc["dim"]),
            dt=doc["dt"],
        )

    def save(self, path: str) -> None:
        doc = self.to_jsonable()
        old = sys.getrecursionlimit()
        sys.setrecursionlimit(max(old, 100000))
        try:
            if str(path).endswith(".gz"):
                with gzip.open(path, "wt", encoding="utf-8") as fh:
                    json.dump(doc, fh)
            else:
                with open(path, "w", encoding="utf-8") as fh:
                    json.dump(doc, fh)
        finally:
            sys.setrecursionlimit(old)

    @classmethod
    def load(cls, path: str) -> "TreeDoxModel":
        if str(path).endswith(".gz"):
            with gzip.open(path, "rt", encoding="utf-8") as fh:
                doc = json.load(fh)
        else:
            with open(path, "r", encoding="utf-8") as fh:
                doc = json.load(fh)
        return cls.from_jsonable(doc)


@dataclass(frozen=True)
class ForecastResult:
    """Predicted series aligned to an optional truth series."""

    predicted: TimeSeries
    truth: TimeSeries | None
    per_step_rmse: np.ndarray | None
    mode: str                    # "closed_loop" | "open_loop"
    lead: int


def _per_step_rmse(truth: TimeSeries | None, predicted: np.ndarray):
    if truth is None:
        return None, None
    t = as_timeseries(truth)
    if t.data.shape != predicted.shape:
        raise ValueError(
            f"truth shape {t.data.shape} does not match predictions "
            f"{predicted.shape}"
        )
    per_step = np.sqrt(((t.data - predicted) ** 2).mean(axis=1))
    return t, per_step


def train(
    X,
    xi: int = 1,
    p_value: float = 0.05,
    lead: int = 1,
    config: etr.EtrConfig = etr.EtrConfig(),
    *,
    k: int | None = None,
    stage1_config: etr.EtrConfig | None = None,
    tau_max: int | None = None,
    n_bins: int | None = None,
    threshold_mode: str = DEFAULT_THRESHOLD_MODE,
    n_surrogates: int = 100,
    keep_stage1: bool = False,
) -> TreeDoxModel | tuple[TreeDoxModel, etr.EtrEnsemble]:
    """Prescribe k (unless forced), fit both stages, return the model.

    stage1_config lets the feature-ranking ensemble use a different tree
    count than the forecaster; it defaults to `config`.  The stage-1
    ensemble is discarded after feature selection (its importance vector
    lives on in the report) unless keep_stage1 is set.
    """
    X = as_timeseries(X)
    if k is None:
        taus = tau_criticals(
            X, p_value, tau_max=tau_max, n_bins=n_bins, mode=threshold_mode,
            n_surrogates=n_surrogates, seed=config.seed,
        )
        k = max(math.ceil(max(taus) / xi) + 1, 2)
        k_forced = False
    else:
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        taus = []
        k_forced = True

    spec = OverembeddingSpec(k=k, xi=xi, lead=lead)
    need = spec.window_len + lead
    if X.t_len < need:
        raise ValueError(
            f"series of length {X.t_len} is too short for prescribed k={k} "
            f"(need at least (k-1)*xi + lead + 1 = {need} points)"
        )
    features, labels = build_training_pairs(X, spec)

    stage1 = etr.fit(features, labels, stage1_config or config)
    cols, p = select_features(stage1.feature_importances)
    report = PrescriptionReport(
        tau_crit=[int(t) for t in taus],
        k=k,
        xi=xi,
        p_value=p_value,
        fi=stage1.feature_importances,
        fi0=1.0 / features.shape[1],
        selected_columns=cols,
        p=p,
        threshold_mode=threshold_mode,
        k_forced=k_forced,
    )

    reduced = reduce_features(features, cols)
    stage2 = etr.fit(reduced, labels, config)

    model = TreeDoxModel(
        spec=OverembeddingSpec(k=k, xi=xi, lead=lead, selected_columns=cols),
        stage2=stage2,
        report=report,
        training_tail=X.data[-spec.window_len :].copy(),
        dim=X.dim,
        dt=X.dt,
    )
    if keep_stage1:
        return model, stage1
    return model


def forecast_closed_loop(
    model: TreeDoxModel,
    n_steps: int,
    seed_window=None,
    truth=None,
) -> ForecastResult:
    """Self-evolving forecast: each prediction is appended to the window.

    The window must cover (k-1)*xi + 1 consecutive states; it defaults to
    the training tail.  Requires a model trained with lead=1 (the fed-back
    state must be the immediate successor of the window).
    """
    if n_steps < 0:
        raise ValueError(f"n_steps must be >= 0, got {n_steps}")
    if model.spec.lead != 1:
        raise ValueError(
            f"closed-loop forecasting needs lead=1, model has lead={model.spec.lead}"
        )
    window = (
        model.training_tail.copy()
        if seed_window is None
        else np.array(seed_window, dtype=float)
    )
    if window.ndim == 1:
        window = window[:, None]
    want = (model.spec.window_len, model.dim)
    if window.shape != want:
        raise ValueError(f"seed window must have shape {want}, got {window.shape}")
    if not np.all(np.isfinite(window)):
        raise ValueError("seed window contains non-finite values")

    positions = model.spec.delay_positions()
    cols = model.spec.selected_columns
    preds = np.empty((n_steps, model.dim))
    for step in range(n_steps):
        delayed = window[positions].ravel()   # delay-major, dimension-minor
        preds[step] = model.stage2.predict(delayed[cols][None, :])[0]
        window[:-1] = window[1:]
        window[-1] = preds[step]

    truth_ts, per_step = _per_step_rmse(truth, preds)
    return ForecastResult(
        predicted=TimeSeries(preds, dt=model.dt),
        truth=truth_ts,
        per_step_rmse=per_step,
        mode="closed_loop",
        lead=model.spec.lead,
    )


def forecast_open_loop(
    model: TreeDoxModel,
    context,
    n_steps: int,
) -> ForecastResult:
    """Predict the last n_steps states of `context` from true states only.

    The prediction for time index n reads the window ending at n - lead,
    so no state later than n - lead is ever consumed; predictions never
    feed back.  The context rows at the predicted indices serve as truth.
    """
    ctx = as_timeseries(context)
    if ctx.dim != model.dim:
        raise ValueError(
            f"context dimension {ctx.dim} does not match model dimension {model.dim}"
        )
    if n_steps < 0:
        raise ValueError(f"n_steps must be >= 0, got {n_steps}")
    spec = model.spec
    span = (spec.k - 1) * spec.xi
    first_target = ctx.t_len - n_steps
    if first_target - spec.lead - span < 0:
        raise ValueError(
            f"context too short: predicting the last {n_steps} of {ctx.t_len} "
            f"states needs at least (k-1)*xi + lead = {span + spec.lead} "
            f"states before the first target"
        )
    if n_steps == 0:
        return ForecastResult(
            predicted=TimeSeries(np.empty((0, model.dim)), dt=ctx.dt),
            truth=None,
            per_step_rmse=None,
            mode="open_loop",
            lead=spec.lead,
        )

    emb = build_overembedding(ctx, spec.k, spec.xi)
    # window for target n starts at n - lead - span
    rows = emb[first_target - spec.lead - span : ctx.t_len - spec.lead - span]
    preds = model.stage2.predict(reduce_features(rows, spec.selected_columns))
    truth = TimeSeries(ctx.data[first_target:].copy(), dt=ctx.dt)
    _, per_step = _per_step_rmse(truth, preds)
    return ForecastResult(
        predicted=TimeSeries(preds, dt=ctx.dt),
        truth=truth,
        per_step_rmse=per_step,
        mode="open_loop",
        lead=spec.lead,
    )

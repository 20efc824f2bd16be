"""One-step-ahead prediction, MSPE evaluation and the scenario grid.

Test predictions are rolling one-step: the prediction at bin t always
conditions on the true observed history at bins < t, never on earlier
predictions.
"""

from __future__ import annotations

import csv
import io
import time
import traceback
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import DataError, NumericalError
from .panel import DemandPanel, ModelOrder, SplitSpec
from .weights import WeightStack
from . import estimators
from .estimators import (
    LassoConfig, StarModel, VarModel,
    build_design, fit_lasso_star, fit_star_ols, fit_var_ols, tune_lambda,
)

MODEL_VAR = "var"
MODEL_STAR = "star"
MODEL_LASSO_STAR = "lasso_star"


def predict_one_step(model, panel: DemandPanel, t: int,
                     stack: WeightStack | None = None) -> np.ndarray:
    """Predict the k-vector at bin t from true history at bins < t."""
    if isinstance(model, StarModel):
        if stack is None:
            raise DataError("STAR prediction needs the weight stack")
        p, eta = model.order.p, model.order.eta
        if t < p or t > panel.T:
            raise DataError(f"insufficient history for prediction at t={t}")
        Y = panel.values
        out = np.zeros(panel.k)
        for j in range(1, p + 1):
            y_lag = Y[:, t - j]
            for l in range(eta):
                wy = stack.matrices[l] @ y_lag
                out += model.coefficients[:, (j - 1) * eta + l] * wy
        return out
    if isinstance(model, VarModel):
        p = model.p
        if t < p or t > panel.T:
            raise DataError(f"insufficient history for prediction at t={t}")
        out = model.intercept.copy()
        for j in range(1, p + 1):
            out += model.lag_matrices[j - 1] @ panel.values[:, t - j]
        return out
    raise DataError(f"unknown model type {type(model).__name__}")


def predict_range(model, panel: DemandPanel, t_range: tuple[int, int],
                  stack: WeightStack | None = None) -> np.ndarray:
    """Rolling one-step predictions for t in [t_range.start, t_range.end)."""
    start, end = t_range
    if end <= start:
        raise DataError(f"empty prediction range {t_range}")
    return np.column_stack(
        [predict_one_step(model, panel, t, stack=stack) for t in range(start, end)]
    )


def mspe(panel: DemandPanel, predicted: np.ndarray, t_range: tuple[int, int]) -> float:
    """Mean squared prediction error over zones and bins in the range."""
    start, end = t_range
    if end <= start:
        raise DataError(f"empty evaluation range {t_range}")
    actual = panel.values[:, start:end]
    predicted = np.asarray(predicted, dtype=float)
    if predicted.shape != actual.shape:
        raise DataError(
            f"prediction shape {predicted.shape} does not match actual {actual.shape}"
        )
    diff = actual - predicted
    return float(np.sum(diff * diff)) / (panel.k * (end - start))


@dataclass(frozen=True)
class EvalReport:
    """Per-scenario evaluation outcome."""

    model: str
    p: int
    eta: int | None
    scheme: str | None
    split: SplitSpec
    val_mspe: float | None
    test_mspe: float | None
    lambda_: float | None = None
    seconds: float = 0.0
    error: str | None = None

    def __post_init__(self):
        for v in (self.val_mspe, self.test_mspe):
            if v is not None and v < 0:
                raise DataError("MSPE cannot be negative")


@dataclass(frozen=True)
class ScenarioConfig:
    """Shared knobs for scenario runs."""

    lasso: LassoConfig = LassoConfig()
    refit_after_tuning: bool = True
    compute_validation: bool = True


def run_scenario(
    panel: DemandPanel,
    stack: WeightStack | None,
    model_kind: str,
    order: ModelOrder,
    split: SplitSpec,
    config: ScenarioConfig = ScenarioConfig(),
) -> EvalReport:
    """Fit, tune (penalized models), refit and evaluate one scenario.

    Validation MSPE comes from a fit on [0, t1) predicting [t1, t2); the
    test fit uses [0, t2) (with lambda* for the penalized model when
    refit_after_tuning is on) and is scored on [t2, t_end).
    """
    t0 = time.perf_counter()
    p, eta = order.p, order.eta
    scheme = stack.scheme if stack is not None else None
    val_range = (split.t1, split.t2)
    test_range = (split.t2, split.t_end)
    lam = None
    val_mspe = None

    if model_kind == MODEL_VAR:
        if config.compute_validation:
            m_val = fit_var_ols(panel, p, (0, split.t1))
            val_mspe = mspe(panel, predict_range(m_val, panel, val_range), val_range)
        model = fit_var_ols(panel, p, (0, split.t2))
        preds = predict_range(model, panel, test_range)
    elif model_kind == MODEL_STAR:
        if stack is None:
            raise DataError("STAR scenario needs a weight stack")
        if config.compute_validation:
            m_val = fit_star_ols(build_design(panel, stack, order, (0, split.t1)),
                                 scheme=stack.scheme)
            val_mspe = mspe(panel, predict_range(m_val, panel, val_range, stack), val_range)
        model = fit_star_ols(build_design(panel, stack, order, (0, split.t2)),
                             scheme=stack.scheme)
        preds = predict_range(model, panel, test_range, stack)
    elif model_kind == MODEL_LASSO_STAR:
        if stack is None:
            raise DataError("LASSO-STAR scenario needs a weight stack")
        lam, curve = tune_lambda(panel, stack, order, split, config.lasso)
        val_mspe = min(m for _, m in curve)
        fit_end = split.t2 if config.refit_after_tuning else split.t1
        designs = build_design(panel, stack, order, (0, fit_end))
        model = fit_lasso_star(designs, lam, config.lasso, scheme=stack.scheme)
        preds = predict_range(model, panel, test_range, stack)
    else:
        raise DataError(f"unknown model kind {model_kind!r}")

    test = mspe(panel, preds, test_range)
    return EvalReport(
        model=model_kind, p=p,
        eta=None if model_kind == MODEL_VAR else eta,
        scheme=None if model_kind == MODEL_VAR else scheme,
        split=split, val_mspe=val_mspe, test_mspe=test, lambda_=lam,
        seconds=time.perf_counter() - t0,
    )


@dataclass(frozen=True)
class ScenarioGrid:
    """Cartesian scenario axes sharing one split."""

    p_values: tuple[int, ...]
    eta_values: tuple[int, ...]
    stacks: tuple[WeightStack, ...]
    model_kinds: tuple[str, ...] = (MODEL_STAR, MODEL_LASSO_STAR)
    include_var: bool = True
    split: SplitSpec = None
    config: ScenarioConfig = ScenarioConfig()

    def __post_init__(self):
        if not self.p_values or (not self.eta_values and self.model_kinds):
            raise DataError("grid axes must be non-empty")
        if self.split is None:
            raise DataError("grid needs a split")


def _scenario_cells(grid: ScenarioGrid):
    for kind in grid.model_kinds:
        for stack in grid.stacks:
            for eta in grid.eta_values:
                for p in grid.p_values:
                    yield (kind, stack, ModelOrder(p=p, eta=eta))
    if grid.include_var:
        for p in grid.p_values:
            yield (MODEL_VAR, None, ModelOrder(p=p, eta=1))


def run_grid(panel: DemandPanel, grid: ScenarioGrid, jobs: int = 1) -> list[EvalReport]:
    """Run every scenario in the grid; failures land in-row as errors.

    Reports come back in a deterministic order (scheme, model, eta
    descending, p) regardless of worker scheduling.
    """
    cells = list(_scenario_cells(grid))

    def run_cell(cell):
        kind, stack, order = cell
        try:
            return run_scenario(panel, stack, kind, order, grid.split, grid.config)
        except (DataError, NumericalError) as e:
            return EvalReport(
                model=kind, p=order.p,
                eta=None if kind == MODEL_VAR else order.eta,
                scheme=None if (kind == MODEL_VAR or stack is None) else stack.scheme,
                split=grid.split, val_mspe=None, test_mspe=None,
                error=str(e),
            )

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            reports = list(pool.map(run_cell, cells))
    else:
        reports = [run_cell(c) for c in cells]

    model_rank = {MODEL_STAR: 0, MODEL_LASSO_STAR: 1, MODEL_VAR: 2}
    reports.sort(key=lambda r: (
        r.scheme or "~", -(r.eta or 0), model_rank.get(r.model, 9), r.p))
    return reports


# -- report output ------------------------------------------------------

CSV_COLUMNS = ["model", "p", "eta", "scheme", "val_mspe", "test_mspe", "lambda", "seconds"]


def _cell(v, fmt=None):
    if v is None:
        return ""
    if fmt:
        return fmt % v
    return str(v)


def reports_to_csv(reports: Sequence[EvalReport], path=None,
                   include_seconds: bool = True) -> str:
    """Write the report CSV; returns the CSV text.

    ``include_seconds=False`` drops the one wall-clock column so the
    output is byte-reproducible across runs with the same seed.
    """
    buf = io.StringIO()
    cols = CSV_COLUMNS if include_seconds else CSV_COLUMNS[:-1]
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols + ["error"])
    for r in reports:
        row = [
            r.model, r.p, _cell(r.eta), _cell(r.scheme),
            _cell(r.val_mspe, "%.10g"), _cell(r.test_mspe, "%.10g"),
            _cell(r.lambda_, "%.10g"),
        ]
        if include_seconds:
            row.append("%.3f" % r.seconds)
        row.append(r.error or "")
        w.writerow(row)
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


def render_table(reports: Sequence[EvalReport]) -> str:
    """Aligned text table: rows eta descending then model, columns by p,
    one column block per weight scheme; VAR as a single trailing row."""
    ps = sorted({r.p for r in reports})
    schemes = sorted({r.scheme for r in reports if r.scheme is not None})
    etas = sorted({r.eta for r in reports if r.eta is not None}, reverse=True)
    kinds = [k for k in (MODEL_STAR, MODEL_LASSO_STAR)
             if any(r.model == k for r in reports)]
    by_key = {}
    for r in reports:
        by_key[(r.model, r.scheme, r.eta, r.p)] = r

    def fmt(r):
        if r is None:
            return "-"
        if r.error:
            return "ERR"
        return "%.4f" % r.test_mspe

    header = ["eta", "model"]
    for s in schemes:
        for p in ps:
            header.append(f"{s}:p={p}")
    rows = [header]
    for eta in etas:
        for kind in kinds:
            row = [str(eta), kind.upper().replace("_", "-")]
            for s in schemes:
                for p in ps:
                    row.append(fmt(by_key.get((kind, s, eta, p))))
            rows.append(row)
    var_reports = {r.p: r for r in reports if r.model == MODEL_VAR}
    if var_reports:
        row = ["-", "VAR"]
        for s in schemes or [None]:
            for p in ps:
                row.append(fmt(var_reports.get(p)))
        rows.append(row)

    widths = [max(len(r[c]) for r in rows) for c in range(len(rows[0]))]
    lines = []
    for i, r in enumerate(rows):
        lines.append("  ".join(cell.rjust(w) for cell, w in zip(r, widths)))
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"

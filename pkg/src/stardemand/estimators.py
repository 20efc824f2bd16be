"""Model fitting: VAR by OLS, STAR by OLS, and L1-penalized STAR by
cyclic coordinate descent, plus penalty tuning on a validation window.

Conventions
-----------
Time ranges are half-open index ranges (start, end) over panel columns.
For a fit range and time-lag order p, usable regression rows are
t = start + p .. end - 1, so T_used = end - start - p.

The design matrix for zone i has column (j - 1) * eta + l equal to the
l-th neighborhood average of the panel at lag j:
row t, column (j-1)*eta + l  =  W(l)[i, :] . y(t - j).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import ConvergenceError, DataError, NumericalError
from .panel import DemandPanel, ModelOrder, SplitSpec
from .weights import WeightStack


# -- design ------------------------------------------------------------

@dataclass(frozen=True)
class DesignMatrix:
    """Per-zone regression system Y_i ~ Z_i."""

    zone_index: int
    Z: np.ndarray          # T_used x (eta * p)
    y: np.ndarray          # T_used
    order: ModelOrder
    fit_range: tuple[int, int]


def build_design(
    panel: DemandPanel,
    stack: WeightStack,
    order: ModelOrder,
    fit_range: tuple[int, int],
) -> list[DesignMatrix]:
    """Build one regression system per zone over the given fit range."""
    start, end = fit_range
    p, eta = order.p, order.eta
    if not (0 <= start < end <= panel.T):
        raise DataError(f"bad fit range {fit_range}")
    if end - start <= p:
        raise DataError(f"fit range {fit_range} has no usable rows for p={p}")
    if eta > stack.eta_max:
        raise DataError(f"eta={eta} exceeds stack depth {stack.eta_max}")
    if stack.zone_ids != panel.zone_ids:
        raise DataError("weight stack zone order does not match panel")

    Y = panel.values
    k = panel.k
    t_used = end - start - p
    # lagged neighborhood averages: lagged[l][:, m] = W(l) . y(t_m - j) is
    # assembled per (j, l) below
    designs = []
    # precompute W(l) Y for all needed columns
    WY = [stack.matrices[l] @ Y for l in range(eta)]
    for i in range(k):
        Z = np.empty((t_used, eta * p))
        for j in range(1, p + 1):
            cols = slice(start + p - j, end - j)
            for l in range(eta):
                Z[:, (j - 1) * eta + l] = WY[l][i, cols]
        designs.append(DesignMatrix(
            zone_index=i,
            Z=Z,
            y=Y[i, start + p:end].copy(),
            order=order,
            fit_range=(start, end),
        ))
    return designs


# -- models ------------------------------------------------------------

@dataclass(frozen=True)
class StarModel:
    """Per-zone coefficient vectors of length eta * p plus noise scale."""

    order: ModelOrder
    coefficients: np.ndarray    # k x (eta * p)
    sigma2: float
    scheme: str
    fit_range: tuple[int, int]
    lambda_: float | None = None

    @property
    def k(self) -> int:
        return self.coefficients.shape[0]

    @property
    def n_parameters(self) -> int:
        return self.coefficients.size

    def __post_init__(self):
        k, m = self.coefficients.shape
        if m != self.order.eta * self.order.p:
            raise DataError(
                f"coefficient vectors of length {m}, expected eta*p = "
                f"{self.order.eta * self.order.p}"
            )


@dataclass(frozen=True)
class VarModel:
    """Intercept plus p full k x k lag matrices."""

    p: int
    intercept: np.ndarray       # k
    lag_matrices: tuple[np.ndarray, ...]   # p matrices, each k x k
    residual_cov: np.ndarray    # k x k
    fit_range: tuple[int, int]

    @property
    def k(self) -> int:
        return self.intercept.shape[0]

    @property
    def n_parameters(self) -> int:
        k = self.k
        return k * (k * self.p + 1)


@dataclass(frozen=True)
class LassoConfig:
    """Penalty grid and coordinate-descent controls."""

    n_lambdas: int = 50
    lambda_min_ratio: float = 1e-4
    include_zero: bool = True
    tolerance: float = 1e-8
    max_sweeps: int = 10_000
    explicit_grid: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.tolerance <= 0:
            raise DataError("tolerance must be positive")
        if self.explicit_grid is not None:
            if any(g < 0 for g in self.explicit_grid):
                raise DataError("grid values must be >= 0")

    def grid(self, lam_max: float) -> list[float]:
        """Descending penalty grid, optionally ending in an explicit 0."""
        if self.explicit_grid is not None:
            return sorted((float(g) for g in self.explicit_grid), reverse=True)
        if lam_max <= 0:
            return [0.0]
        vals = [float(v) for v in np.geomspace(lam_max, lam_max * self.lambda_min_ratio,
                                               self.n_lambdas)]
        if self.include_zero:
            vals.append(0.0)
        return vals


# -- OLS fits ----------------------------------------------------------

def _min_norm_lstsq(Z: np.ndarray, y: np.ndarray) -> np.ndarray:
    sol, *_ = np.linalg.lstsq(Z, y, rcond=None)
    return sol


def fit_star_ols(designs: Sequence[DesignMatrix], scheme: str = "") -> StarModel:
    """Per-zone least squares; rank-deficient systems get the
    minimum-norm solution. sigma2 pools residuals across zones."""
    if not designs:
        raise DataError("no designs")
    order = designs[0].order
    coefs = np.zeros((len(designs), order.eta * order.p))
    rss = 0.0
    n_rows = 0
    for d in designs:
        phi = _min_norm_lstsq(d.Z, d.y)
        coefs[d.zone_index] = phi
        resid = d.y - d.Z @ phi
        rss += float(resid @ resid)
        n_rows += d.y.shape[0]
    dof = n_rows - coefs.size
    sigma2 = rss / dof if dof > 0 else rss / max(n_rows, 1)
    return StarModel(order=order, coefficients=coefs, sigma2=sigma2,
                     scheme=scheme, fit_range=designs[0].fit_range)


def fit_var_ols(panel: DemandPanel, p: int, fit_range: tuple[int, int]) -> VarModel:
    """Per-equation OLS with intercept on stacked lag regressors.

    When usable rows fall below k*p + 1 regressors, the minimum-norm
    solution is returned rather than failing.
    """
    start, end = fit_range
    if not (0 <= start < end <= panel.T):
        raise DataError(f"bad fit range {fit_range}")
    if end - start <= p:
        raise DataError(f"fit range {fit_range} has no usable rows for p={p}")
    Y = panel.values
    k = panel.k
    t_used = end - start - p
    X = np.empty((t_used, k * p + 1))
    X[:, 0] = 1.0
    for j in range(1, p + 1):
        X[:, 1 + (j - 1) * k:1 + j * k] = Y[:, start + p - j:end - j].T
    resp = Y[:, start + p:end].T    # t_used x k
    B = np.linalg.lstsq(X, resp, rcond=None)[0]    # (kp+1) x k
    resid = resp - X @ B
    dof = max(t_used - (k * p + 1), 1)
    cov = resid.T @ resid / dof
    lags = tuple(B[1 + (j - 1) * k:1 + j * k, :].T.copy() for j in range(1, p + 1))
    return VarModel(p=p, intercept=B[0].copy(), lag_matrices=lags,
                    residual_cov=cov, fit_range=(start, end))


# -- LASSO -------------------------------------------------------------

def soft_threshold(z: float, gamma: float) -> float:
    """sign(z) * max(|z| - gamma, 0)."""
    if gamma < 0:
        raise DataError("gamma must be >= 0")
    if z > gamma:
        return z - gamma
    if z < -gamma:
        return z + gamma
    return 0.0


def lambda_max(design: DesignMatrix) -> float:
    """Smallest penalty with an all-zero solution: ||Z' y||_inf."""
    g = design.Z.T @ design.y
    return float(np.max(np.abs(g))) if g.size else 0.0


def lasso_objective(Z: np.ndarray, y: np.ndarray, phi: np.ndarray, lam: float) -> float:
    r = y - Z @ phi
    return 0.5 * float(r @ r) + lam * float(np.sum(np.abs(phi)))


def fit_lasso_cd(
    design: DesignMatrix,
    lam: float,
    config: LassoConfig = LassoConfig(),
    warm_start: np.ndarray | None = None,
    objective_trace: list | None = None,
) -> np.ndarray:
    """Cyclic coordinate descent on 0.5||y - Z phi||^2 + lam * ||phi||_1.

    Converged when the largest coefficient change over a full sweep is
    below config.tolerance relative to max(1, ||phi||_inf). Columns with
    zero norm keep coefficient 0.
    """
    if lam < 0:
        raise DataError("lambda must be >= 0")
    Z, y = design.Z, design.y
    m = Z.shape[1]
    if lam > 0 and lam >= lambda_max(design):
        # the zero vector satisfies the stationarity conditions exactly
        if objective_trace is not None:
            objective_trace.append(lasso_objective(Z, y, np.zeros(m), lam))
        return np.zeros(m)
    col_sq = np.einsum("ij,ij->j", Z, Z)
    phi = np.zeros(m) if warm_start is None else np.array(warm_start, dtype=float)
    r = y - Z @ phi
    if objective_trace is not None:
        objective_trace.append(lasso_objective(Z, y, phi, lam))
    for _ in range(config.max_sweeps):
        max_delta = 0.0
        for j in range(m):
            cj = col_sq[j]
            if cj == 0.0:
                continue
            old = phi[j]
            rho = float(Z[:, j] @ r) + cj * old
            new = soft_threshold(rho, lam) / cj
            if new != old:
                r += Z[:, j] * (old - new)
                phi[j] = new
                delta = abs(new - old)
                if delta > max_delta:
                    max_delta = delta
        if objective_trace is not None:
            objective_trace.append(lasso_objective(Z, y, phi, lam))
        scale = max(1.0, float(np.max(np.abs(phi))) if m else 1.0)
        if max_delta < config.tolerance * scale:
            return phi
    raise ConvergenceError(
        f"coordinate descent did not converge in {config.max_sweeps} sweeps "
        f"(lambda={lam})",
        last_iterate=phi,
        objective_trace=objective_trace,
    )


def _cd_sweep_batch(
    gram: np.ndarray,      # k x m x m
    grad: np.ndarray,      # k x m, maintained as Z'(y - Z phi)
    diag: np.ndarray,      # k x m
    phis: np.ndarray,      # k x m, updated in place
    lam: float,
    active: np.ndarray,    # k bools
) -> np.ndarray:
    """One cyclic sweep over all zones at once; returns max change per zone."""
    k, m = phis.shape
    max_delta = np.zeros(k)
    pos = diag > 0.0
    safe = np.where(pos, diag, 1.0)
    for j in range(m):
        ok = active & pos[:, j]
        if not ok.any():
            continue
        rho = grad[:, j] + diag[:, j] * phis[:, j]
        new = np.sign(rho) * np.maximum(np.abs(rho) - lam, 0.0) / safe[:, j]
        delta = np.where(ok, new - phis[:, j], 0.0)
        ad = np.abs(delta)
        if ad.max() > 0.0:
            grad -= gram[:, :, j] * delta[:, None]
            phis[:, j] += delta
            np.maximum(max_delta, ad, out=max_delta)
    return max_delta


def solve_lasso_batch(
    designs: Sequence[DesignMatrix],
    lam: float,
    config: LassoConfig = LassoConfig(),
    warm_start: np.ndarray | None = None,
    _state: dict | None = None,
) -> np.ndarray:
    """All-zone coordinate descent at one penalty via per-zone Gram
    matrices; same updates as :func:`fit_lasso_cd`, vectorized over zones.

    ``_state`` caches the Gram tensors across calls on the same designs
    (used by the path driver).
    """
    if lam < 0:
        raise DataError("lambda must be >= 0")
    k = len(designs)
    m = designs[0].Z.shape[1]
    if _state is None:
        _state = {}
    if "gram" not in _state:
        Zs = np.stack([d.Z for d in designs])          # k x n x m
        ys = np.stack([d.y for d in designs])          # k x n
        _state["gram"] = np.einsum("knm,knq->kmq", Zs, Zs)
        _state["zy"] = np.einsum("knm,kn->km", Zs, ys)
        _state["diag"] = np.stack([np.diag(g) for g in _state["gram"]])
    gram, zy, diag = _state["gram"], _state["zy"], _state["diag"]
    phis = np.zeros((k, m)) if warm_start is None else np.array(warm_start, dtype=float)
    if lam > 0:
        # zones with lam >= ||Z'y||_inf solve to exactly zero
        at_zero = lam >= np.max(np.abs(zy), axis=1, initial=0.0)
        phis[at_zero] = 0.0
    grad = zy - np.einsum("kmq,kq->km", gram, phis)
    active = np.ones(k, dtype=bool)
    if lam > 0:
        active &= ~at_zero
    for _ in range(config.max_sweeps):
        max_delta = _cd_sweep_batch(gram, grad, diag, phis, lam, active)
        scale = np.maximum(1.0, np.max(np.abs(phis), axis=1, initial=0.0))
        active &= max_delta >= config.tolerance * scale
        if not active.any():
            return phis
    raise ConvergenceError(
        f"coordinate descent did not converge in {config.max_sweeps} sweeps "
        f"(lambda={lam}, zones {np.flatnonzero(active).tolist()})",
        last_iterate=phis,
    )


def fit_lasso_path(
    designs: Sequence[DesignMatrix],
    grid: Sequence[float],
    config: LassoConfig = LassoConfig(),
) -> dict[float, np.ndarray]:
    """Solve all zones along a descending penalty grid with warm starts.

    Returns {lambda: k x (eta*p) coefficient matrix}.
    """
    if not designs:
        raise DataError("no designs")
    out: dict[float, np.ndarray] = {}
    state: dict = {}
    warm = None
    for lam in grid:
        warm = solve_lasso_batch(designs, lam, config, warm_start=warm, _state=state)
        out[lam] = warm.copy()
    return out


def fit_lasso_star(
    designs: Sequence[DesignMatrix],
    lam: float,
    config: LassoConfig = LassoConfig(),
    scheme: str = "",
) -> StarModel:
    """Fit all zones at a single penalty and package as a StarModel."""
    order = designs[0].order
    coefs = np.zeros((len(designs), order.eta * order.p))
    solved = solve_lasso_batch(designs, lam, config)
    rss = 0.0
    n_rows = 0
    for pos, d in enumerate(designs):
        coefs[d.zone_index] = solved[pos]
        resid = d.y - d.Z @ solved[pos]
        rss += float(resid @ resid)
        n_rows += d.y.shape[0]
    nonzero = int(np.count_nonzero(coefs))
    dof = n_rows - nonzero
    sigma2 = rss / dof if dof > 0 else rss / max(n_rows, 1)
    return StarModel(order=order, coefficients=coefs, sigma2=sigma2,
                     scheme=scheme, fit_range=designs[0].fit_range, lambda_=lam)


def tune_lambda(
    panel: DemandPanel,
    stack: WeightStack,
    order: ModelOrder,
    split: SplitSpec,
    config: LassoConfig = LassoConfig(),
) -> tuple[float, list[tuple[float, float]]]:
    """Select the penalty minimizing one-step validation MSPE.

    Coefficients are fit on bins [0, t1); one-step predictions over
    [t1, t2) use true rolling history without refitting. Ties break
    toward the largest penalty. Returns (lambda*, [(lambda, mspe), ...])
    with the curve in descending lambda order.
    """
    if split.t1 <= order.p:
        raise DataError(f"t1={split.t1} leaves no training rows for p={order.p}")
    if split.t2 - split.t1 < 1:
        raise DataError("degenerate validation range")
    train = build_design(panel, stack, order, (0, split.t1))
    lam_max = max(lambda_max(d) for d in train)
    grid = config.grid(lam_max)
    if not grid:
        raise DataError("empty penalty grid")
    # validation rows t = t1 .. t2-1 share the Z-row formula with training
    val = build_design(panel, stack, order, (split.t1 - order.p, split.t2))
    path = fit_lasso_path(train, grid, config)

    curve = []
    best_lam, best_mspe = None, None
    n_val = split.t2 - split.t1
    for lam in grid:   # descending: first minimum is the largest lambda
        coefs = path[lam]
        se = 0.0
        for d in val:
            pred = d.Z @ coefs[d.zone_index]
            err = d.y - pred
            se += float(err @ err)
        m = se / (panel.k * n_val)
        curve.append((lam, m))
        if best_mspe is None or m < best_mspe:
            best_lam, best_mspe = lam, m
    return best_lam, curve


# -- serialization ------------------------------------------------------

def model_to_dict(model) -> dict:
    if isinstance(model, StarModel):
        return {
            "kind": "star",
            "p": model.order.p,
            "eta": model.order.eta,
            "coefficients": model.coefficients.tolist(),
            "sigma2": model.sigma2,
            "scheme": model.scheme,
            "fit_range": list(model.fit_range),
            "lambda": model.lambda_,
        }
    if isinstance(model, VarModel):
        return {
            "kind": "var",
            "p": model.p,
            "intercept": model.intercept.tolist(),
            "lag_matrices": [m.tolist() for m in model.lag_matrices],
            "residual_cov": model.residual_cov.tolist(),
            "fit_range": list(model.fit_range),
        }
    raise DataError(f"unknown model type {type(model).__name__}")


def model_from_dict(doc: dict):
    kind = doc.get("kind")
    if kind == "star":
        return StarModel(
            order=ModelOrder(p=doc["p"], eta=doc["eta"]),
            coefficients=np.array(doc["coefficients"], dtype=float),
            sigma2=float(doc["sigma2"]),
            scheme=doc.get("scheme", ""),
            fit_range=tuple(doc["fit_range"]),
            lambda_=doc.get("lambda"),
        )
    if kind == "var":
        return VarModel(
            p=doc["p"],
            intercept=np.array(doc["intercept"], dtype=float),
            lag_matrices=tuple(np.array(m, dtype=float) for m in doc["lag_matrices"]),
            residual_cov=np.array(doc["residual_cov"], dtype=float),
            fit_range=tuple(doc["fit_range"]),
        )
    raise DataError(f"unknown model kind {kind!r}")


def write_model_json(model, path) -> None:
    with open(path, "w") as fh:
        json.dump(model_to_dict(model), fh, indent=2)
        fh.write("\n")


def read_model_json(path):
    with open(path) as fh:
        try:
            return model_from_dict(json.load(fh))
        except json.JSONDecodeError as e:
            raise DataError(f"{path}: invalid model file: {e}") from None

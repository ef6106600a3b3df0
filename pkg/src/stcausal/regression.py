"""Regression backends producing the residuals consumed by the CI test.

Two model classes are provided. linear-ridge fits a ridge regression with
an unpenalized intercept (handled by centering). kernel-ridge uses a
product RBF kernel with separate lengthscales for ordinary covariates and
for spatial coordinates, realizing a distance-based correlation structure
over locations; the intercept is likewise unpenalized and exact.

Leave-one-out errors are computed exactly through the influence-matrix
shortcut (residual divided by one minus the hat diagonal), which for both
model classes agrees with brute-force refit-and-predict.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.spatial.distance

from .errors import ConfigError, SingularSystemError
from .panel import DesignMatrix

MEDIAN_HEURISTIC = "median-heuristic"
LOOCV = "loocv"

DEFAULT_PENALTY_GRID = tuple(10.0 ** k for k in range(-4, 3))

# rows subsampled (after canonical sorting) when estimating the median
# pairwise distance; keeps the heuristic O(1e6) while staying deterministic
_MEDIAN_SUBSAMPLE = 1000
_MEDIAN_SEED = 7


@dataclass(frozen=True)
class RegressorSpec:
    """Configuration of the approximating regressions.

    penalty is either a fixed ridge penalty (raw value, >= 0) or "loocv",
    in which case the grid (scaled by the number of rows) is searched by
    exact leave-one-out error. Lengthscales are either "median-heuristic"
    or fixed positive reals. cross_fit switches residuals from in-sample to
    2-fold cross-fitted predictions (sensitivity analysis aid).
    """

    kind: str = "kernel-ridge"
    penalty: float | str = LOOCV
    penalty_grid: tuple[float, ...] = DEFAULT_PENALTY_GRID
    covariate_lengthscale: float | str = MEDIAN_HEURISTIC
    spatial_lengthscale: float | str = MEDIAN_HEURISTIC
    cross_fit: bool = False

    def __post_init__(self) -> None:
        if self.kind not in ("linear-ridge", "kernel-ridge"):
            raise ConfigError(f"unknown regressor kind {self.kind!r}")
        if isinstance(self.penalty, str):
            if self.penalty != LOOCV:
                raise ConfigError(f"penalty must be a number or {LOOCV!r}")
            if not self.penalty_grid or any(g <= 0 for g in self.penalty_grid):
                raise ConfigError("penalty grid must be non-empty with positive entries")
        elif self.penalty < 0:
            raise ConfigError("fixed penalty must be >= 0")
        for name in ("covariate_lengthscale", "spatial_lengthscale"):
            value = getattr(self, name)
            if isinstance(value, str):
                if value != MEDIAN_HEURISTIC:
                    raise ConfigError(f"{name} must be a number or {MEDIAN_HEURISTIC!r}")
            elif value <= 0:
                raise ConfigError(f"fixed {name} must be > 0")

    def fingerprint(self) -> str:
        payload = json.dumps(self.to_json_dict(), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    def to_json_dict(self) -> dict:
        return {
            "kind": self.kind,
            "penalty": self.penalty,
            "penalty_grid": list(self.penalty_grid),
            "covariate_lengthscale": self.covariate_lengthscale,
            "spatial_lengthscale": self.spatial_lengthscale,
            "cross_fit": self.cross_fit,
        }

    @classmethod
    def from_json_dict(cls, payload: dict) -> "RegressorSpec":
        kwargs = dict(payload)
        if "penalty_grid" in kwargs:
            kwargs["penalty_grid"] = tuple(kwargs["penalty_grid"])
        return cls(**kwargs)


@dataclass
class ResidualVector:
    """Residuals of one regression plus its row alignment keys.

    values[k] = response[k] - prediction[k]; row_ids is the design's
    (location index, time index) array; mspe is the mean squared prediction
    error of the fit that produced the residuals.
    """

    values: np.ndarray
    row_ids: np.ndarray
    mspe: float

    def nbytes(self) -> int:
        return int(self.values.nbytes + self.row_ids.nbytes)


def median_heuristic(rows: np.ndarray) -> float:
    """Median pairwise Euclidean distance, zeros excluded.

    Rows are sorted lexicographically before the (seeded) subsampling step,
    which makes the value invariant to row order and duplication order.
    Falls back to 1.0 when every row is identical.
    """
    rows = np.asarray(rows, dtype=float)
    if rows.ndim == 1:
        rows = rows[:, None]
    n = rows.shape[0]
    if n < 2 or rows.shape[1] == 0:
        return 1.0
    order = np.lexsort(rows.T[::-1])
    rows = rows[order]
    if n > _MEDIAN_SUBSAMPLE:
        rng = np.random.default_rng(_MEDIAN_SEED)
        keep = np.sort(rng.choice(n, size=_MEDIAN_SUBSAMPLE, replace=False))
        rows = rows[keep]
    dists = scipy.spatial.distance.pdist(rows)
    positive = dists[dists > 0]
    if positive.size == 0:
        return 1.0
    return float(np.median(positive))


def rbf_gram(
    covariates: np.ndarray | None,
    spatial: np.ndarray | None,
    covariate_lengthscale: float,
    spatial_lengthscale: float,
) -> np.ndarray:
    """Product RBF Gram matrix over covariate and coordinate blocks.

    entry(a, b) = exp(-|u_a - u_b|^2 / (2 lc^2)) * exp(-|s_a - s_b|^2 / (2 ls^2));
    an absent block contributes a factor of 1. Symmetric PSD with unit
    diagonal by construction.
    """
    return _rbf_kernel(
        covariates, spatial, covariates, spatial, covariate_lengthscale, spatial_lengthscale
    )


def _sqdist(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aa = np.sum(a * a, axis=1)[:, None]
    bb = np.sum(b * b, axis=1)[None, :]
    sq = aa + bb - 2.0 * (a @ b.T)
    np.maximum(sq, 0.0, out=sq)
    return sq


def _rbf_kernel(
    cov_a: np.ndarray | None,
    sp_a: np.ndarray | None,
    cov_b: np.ndarray | None,
    sp_b: np.ndarray | None,
    lc: float,
    ls: float,
) -> np.ndarray:
    if lc <= 0 or ls <= 0:
        raise ConfigError("lengthscales must be > 0")
    blocks = []
    if cov_a is not None and cov_a.shape[1] > 0:
        blocks.append(_sqdist(cov_a, cov_b) / (2.0 * lc * lc))
    if sp_a is not None and sp_a.shape[1] > 0:
        blocks.append(_sqdist(sp_a, sp_b) / (2.0 * ls * ls))
    if not blocks:
        n_a = cov_a.shape[0] if cov_a is not None else sp_a.shape[0]
        n_b = cov_b.shape[0] if cov_b is not None else sp_b.shape[0]
        return np.ones((n_a, n_b))
    total = blocks[0]
    for extra in blocks[1:]:
        total = total + extra
    return np.exp(-total)


def _resolve_lengthscales(
    design_cov: np.ndarray, design_sp: np.ndarray | None, spec: RegressorSpec
) -> tuple[float, float]:
    if isinstance(spec.covariate_lengthscale, str):
        lc = median_heuristic(design_cov) if design_cov.shape[1] else 1.0
    else:
        lc = float(spec.covariate_lengthscale)
    if isinstance(spec.spatial_lengthscale, str):
        ls = median_heuristic(design_sp) if design_sp is not None else 1.0
    else:
        ls = float(spec.spatial_lengthscale)
    return lc, ls


def _resolve_penalty(design: DesignMatrix, spec: RegressorSpec) -> float:
    if isinstance(spec.penalty, str):
        return select_penalty(design, spec)
    return float(spec.penalty)


def _scaled_grid(spec: RegressorSpec, n: int) -> list[float]:
    return [g * n for g in spec.penalty_grid]


def _cho_solve_psd(matrix: np.ndarray, rhs: np.ndarray, penalty: float) -> np.ndarray:
    try:
        factor = scipy.linalg.cho_factor(matrix, lower=True, check_finite=False)
    except scipy.linalg.LinAlgError as exc:
        if penalty == 0.0:
            raise SingularSystemError(
                "system is singular with penalty 0; use a positive ridge penalty"
            ) from exc
        raise
    return scipy.linalg.cho_solve(factor, rhs, check_finite=False)


# ---- linear ridge -------------------------------------------------------


def _linear_parts(design: DesignMatrix) -> tuple[np.ndarray, np.ndarray]:
    z = design.predictor_matrix()
    return z, design.response


def _fit_linear(z: np.ndarray, y: np.ndarray, lam: float) -> tuple[np.ndarray, float, np.ndarray]:
    """Returns (residuals, intercept, beta) of centered ridge."""
    y_mean = float(np.mean(y))
    yc = y - y_mean
    if z.shape[1] == 0:
        return yc, y_mean, np.zeros(0)
    z_mean = z.mean(axis=0)
    zc = z - z_mean
    gram = zc.T @ zc + lam * np.eye(z.shape[1])
    beta = _cho_solve_psd(gram, zc.T @ yc, lam)
    residuals = yc - zc @ beta
    return residuals, y_mean - z_mean @ beta, beta


# ---- kernel ridge ---------------------------------------------------------


def _kernel_matrix(design: DesignMatrix, spec: RegressorSpec) -> np.ndarray:
    lc, ls = _resolve_lengthscales(design.covariates, design.spatial, spec)
    return rbf_gram(design.covariates, design.spatial, lc, ls)


def _fit_kernel_dense(
    kernel: np.ndarray, y: np.ndarray, lam: float
) -> tuple[np.ndarray, float, np.ndarray]:
    """Exact unpenalized-intercept kernel ridge: returns (residuals, b, alpha).

    With M = K + lam*I, the joint minimizer over (intercept b, dual alpha)
    satisfies b = (1' M^-1 y) / (1' M^-1 1) and alpha = M^-1 (y - b); the
    in-sample residual identity r = lam * alpha is exact.
    """
    n = kernel.shape[0]
    m = kernel + lam * np.eye(n)
    ones = np.ones(n)
    sol = _cho_solve_psd(m, np.column_stack([y, ones]), lam)
    gy, g1 = sol[:, 0], sol[:, 1]
    denom = float(ones @ g1)
    if denom <= 0:
        raise SingularSystemError("kernel system is numerically singular")
    b = float(ones @ gy) / denom
    alpha = gy - b * g1
    residuals = lam * alpha
    return residuals, b, alpha


def _fit_kernel_collapsed(
    design: DesignMatrix, spec: RegressorSpec, lam: float
) -> tuple[np.ndarray, float] | None:
    """Duplicate-row fast path: exact kernel ridge via the unique rows.

    With many repeated predictor rows (coordinates repeat across time), the
    representer solution only needs one basis function per distinct row.
    Returns (residuals, mspe) or None when the reduction does not pay off.
    """
    pred = design.predictor_matrix()
    n = pred.shape[0]
    if n < 64:
        return None
    unique, inverse = np.unique(pred, axis=0, return_inverse=True)
    m = unique.shape[0]
    if m > n // 4:
        return None
    k_cov = design.covariates.shape[1]
    cov_u = unique[:, :k_cov]
    sp_u = unique[:, k_cov:] if design.spatial is not None else None
    lc, ls = _resolve_lengthscales(design.covariates, design.spatial, spec)
    kg = _rbf_kernel(cov_u, sp_u, cov_u, sp_u, lc, ls)

    y = design.response
    counts = np.bincount(inverse, minlength=m).astype(float)
    sums = np.bincount(inverse, weights=y, minlength=m)
    ck = kg * counts[:, None]  # C K_g
    system = ck + lam * np.eye(m)
    try:
        rhs = np.column_stack([sums, counts])
        sol = np.linalg.solve(system, rhs)
    except np.linalg.LinAlgError:
        return None
    u_vec, w_vec = sol[:, 0], sol[:, 1]
    # intercept from the stationarity condition of the joint objective
    denom = 1.0 - float(counts @ (kg @ w_vec)) / n
    if abs(denom) < 1e-12:
        return None
    b = (float(np.mean(y)) - float(counts @ (kg @ u_vec)) / n) / denom
    alpha = u_vec - b * w_vec
    fitted_g = b + kg @ alpha
    residuals = y - fitted_g[inverse]
    return residuals, float(np.mean(residuals**2))


# ---- public operations ---------------------------------------------------


def fit_residuals(design: DesignMatrix, spec: RegressorSpec) -> ResidualVector:
    """Fit the approximating regression and return in-sample residuals.

    With zero predictor columns the prediction is the response mean. When
    spec.cross_fit is set, residuals come from 2-fold cross predictions
    (even/odd rows) instead of the in-sample fit.
    """
    if design.n_rows == 0:
        raise ConfigError("empty design")
    if not np.all(np.isfinite(design.response)):
        raise ConfigError("response contains non-finite values")

    if spec.cross_fit and design.n_predictor_columns > 0:
        return _fit_cross(design, spec)

    y = design.response
    if design.n_predictor_columns == 0:
        residuals = y - float(np.mean(y))
        return ResidualVector(residuals, design.row_ids, float(np.mean(residuals**2)))

    if spec.kind == "linear-ridge" and isinstance(spec.penalty, str):
        # selection and final fit share one decomposition
        context = _LinearLooContext(design)
        lam = _grid_minimizer(context, _scaled_grid(spec, design.n_rows))
        residuals = context.residuals(lam)
        return ResidualVector(residuals, design.row_ids, float(np.mean(residuals**2)))

    lam = _resolve_penalty(design, spec)
    if spec.kind == "linear-ridge":
        z, y = _linear_parts(design)
        residuals, _, _ = _fit_linear(z, y, lam)
    else:
        collapsed = _fit_kernel_collapsed(design, spec, lam)
        if collapsed is not None:
            residuals, mspe = collapsed
            return ResidualVector(residuals, design.row_ids, mspe)
        kernel = _kernel_matrix(design, spec)
        residuals, _, _ = _fit_kernel_dense(kernel, y, lam)
    return ResidualVector(residuals, design.row_ids, float(np.mean(residuals**2)))


def _fit_cross(design: DesignMatrix, spec: RegressorSpec) -> ResidualVector:
    n = design.n_rows
    lam = _resolve_penalty(design, spec)
    folds = (np.arange(n) % 2 == 0, np.arange(n) % 2 == 1)
    residuals = np.empty(n)
    lc, ls = _resolve_lengthscales(design.covariates, design.spatial, spec)
    for test_mask in folds:
        train_mask = ~test_mask
        y_tr = design.response[train_mask]
        if spec.kind == "linear-ridge":
            z = design.predictor_matrix()
            z_tr, z_te = z[train_mask], z[test_mask]
            _, intercept, beta = _fit_linear(z_tr, y_tr, lam)
            pred = intercept + z_te @ beta
        else:
            cov_tr = design.covariates[train_mask]
            cov_te = design.covariates[test_mask]
            sp_tr = design.spatial[train_mask] if design.spatial is not None else None
            sp_te = design.spatial[test_mask] if design.spatial is not None else None
            k_tr = _rbf_kernel(cov_tr, sp_tr, cov_tr, sp_tr, lc, ls)
            _, b, alpha = _fit_kernel_dense(k_tr, y_tr, lam)
            k_cross = _rbf_kernel(cov_te, sp_te, cov_tr, sp_tr, lc, ls)
            pred = b + k_cross @ alpha
        residuals[test_mask] = design.response[test_mask] - pred
    return ResidualVector(residuals, design.row_ids, float(np.mean(residuals**2)))


class _LinearLooContext:
    """Eigendecomposed centered Gram, shared across a penalty grid.

    With gram0 = V diag(d) V', the per-penalty hat diagonal and residuals
    reduce to O(n k) products against W = Zc V, so a grid sweep costs one
    decomposition plus one pass per penalty.
    """

    def __init__(self, design: DesignMatrix):
        z = design.predictor_matrix()
        self.n = z.shape[0]
        z_centered = z - z.mean(axis=0)
        y = design.response
        self.y_centered = y - float(np.mean(y))
        gram0 = z_centered.T @ z_centered
        d, v = np.linalg.eigh(gram0)
        self.d = d
        self.w = z_centered @ v
        self.w_sq = self.w**2
        self.c = v.T @ (z_centered.T @ self.y_centered)

    def _shifted(self, lam: float) -> np.ndarray:
        d = self.d + lam
        if d.min() <= 0:
            raise SingularSystemError(
                "system is singular with penalty 0; use a positive ridge penalty"
            )
        return d

    def residuals(self, lam: float) -> np.ndarray:
        d = self._shifted(lam)
        return self.y_centered - self.w @ (self.c / d)

    def loo_squared(self, lam: float) -> np.ndarray:
        d = self._shifted(lam)
        residuals = self.y_centered - self.w @ (self.c / d)
        hat = 1.0 / self.n + self.w_sq @ (1.0 / d)
        return (residuals / (1.0 - hat)) ** 2


class _KernelLooContext:
    """Eigendecomposition of the kernel, shared across a penalty grid."""

    def __init__(self, design: DesignMatrix, spec: RegressorSpec):
        kernel = _kernel_matrix(design, spec)
        self.eigenvalues, self.eigenvectors = np.linalg.eigh(kernel)
        self.q_ones = self.eigenvectors.T @ np.ones(kernel.shape[0])
        self.q_y = self.eigenvectors.T @ design.response

    def loo_squared(self, lam: float) -> np.ndarray:
        d = self.eigenvalues + lam
        if d.min() <= 0:
            raise SingularSystemError(
                "kernel system is singular; use a positive ridge penalty"
            )
        q = self.eigenvectors
        inv_diag = np.einsum("ij,j->i", q * q, 1.0 / d)
        g1 = q @ (self.q_ones / d)
        gy = q @ (self.q_y / d)
        s = float(np.sum(g1))
        if s <= 0:
            raise SingularSystemError("kernel system is numerically singular")
        b = float(np.sum(gy)) / s
        alpha = gy - b * g1
        effective = inv_diag - g1 * g1 / s  # = (1 - hat_ii) / lam
        if np.any(effective <= 0):
            raise SingularSystemError(
                "leave-one-out shortcut is degenerate (hat diagonal reached 1)"
            )
        return (alpha / effective) ** 2


def _loo_context(design: DesignMatrix, spec: RegressorSpec):
    if spec.kind == "linear-ridge":
        return _LinearLooContext(design)
    return _KernelLooContext(design, spec)


def loo_squared_errors(design: DesignMatrix, spec: RegressorSpec, lam: float) -> np.ndarray:
    """Exact leave-one-out squared errors at a given penalty (hat shortcut)."""
    y = design.response
    n = design.n_rows
    if design.n_predictor_columns == 0:
        residuals = y - float(np.mean(y))
        return (residuals / (1.0 - 1.0 / n)) ** 2
    return _loo_context(design, spec).loo_squared(lam)


def _grid_minimizer(context, grid: list[float]) -> float:
    grid = sorted(grid)
    best_lam, best_err = grid[0], math.inf
    for lam in grid:  # ascending, so <= breaks ties toward larger lambda
        err = float(np.mean(context.loo_squared(lam)))
        if err <= best_err:
            best_lam, best_err = lam, err
    return float(best_lam)


def select_penalty(design: DesignMatrix, spec: RegressorSpec) -> float:
    """Grid penalty minimizing the exact leave-one-out squared error.

    The grid is spec.penalty_grid scaled by the number of design rows. Ties
    break toward the larger penalty.
    """
    grid = sorted(_scaled_grid(spec, design.n_rows))
    if design.n_predictor_columns == 0:
        return grid[-1]
    return _grid_minimizer(_loo_context(design, spec), grid)

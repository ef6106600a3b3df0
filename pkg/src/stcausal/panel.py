"""Spatially replicated time-series panels and lag-expanded regression views.

A panel holds one time series per variable at each of L locations, all on a
shared integer time grid (balanced). Rows are kept location-major,
time-minor throughout. Designs built from a panel pair a target node with
conditioning nodes shifted back in time; all designs built from the same
panel and lag cap share one global complete-case row set so that residual
vectors from different regressions align row-for-row.
"""

from __future__ import annotations

import csv
import hashlib
import io
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    DataError,
    DuplicateRowError,
    EmptyDesignError,
    UnbalancedPanelError,
    ZeroVarianceError,
)

CANONICAL_COLUMNS = ("location_id", "x", "y", "time")


@dataclass(frozen=True)
class LocationRecord:
    """A measurement site: string id plus planar (x, y) coordinates.

    Coordinates are taken as already projected; no geodesic correction is
    applied anywhere in the package.
    """

    id: str
    coord: tuple[float, float]


@dataclass(frozen=True, order=True)
class LaggedNode:
    """A (variable, lag) pair: lag 0 is the present, lag k > 0 is k steps back."""

    variable: int
    lag: int

    def label(self, names: Sequence[str] | None = None) -> str:
        name = names[self.variable] if names is not None else f"v{self.variable}"
        return name if self.lag == 0 else f"{name}@t-{self.lag}"


@dataclass(eq=False)
class SpatialPanel:
    """Balanced panel of p variables over L locations and T_obs time steps.

    values has shape (L * T_obs, p) in location-major, time-minor row order;
    missing holds True where a cell is absent. The object is treated as
    immutable after construction and is safe to share across worker threads.
    """

    locations: list[LocationRecord]
    times: np.ndarray  # sorted original integer time stamps, length T_obs
    variables: list[str]
    values: np.ndarray
    missing: np.ndarray

    def __post_init__(self) -> None:
        self.values = np.asarray(self.values, dtype=float)
        self.missing = np.asarray(self.missing, dtype=bool)
        self.times = np.asarray(self.times, dtype=int)
        n_rows = len(self.locations) * self.n_times
        if self.values.shape != (n_rows, self.n_variables):
            raise DataError(
                f"values shape {self.values.shape} does not match "
                f"{n_rows} rows x {self.n_variables} variables"
            )
        if self.missing.shape != self.values.shape:
            raise DataError("missing mask shape does not match values")
        if self.n_times >= 2:
            steps = np.diff(self.times)
            if not np.all(steps == steps[0]) or steps[0] <= 0:
                raise DataError(
                    "time index must be a strictly increasing regular grid; "
                    f"got steps {sorted(set(steps.tolist()))}"
                )
        coords = np.array([loc.coord for loc in self.locations], dtype=float)
        if coords.size and not np.all(np.isfinite(coords)):
            raise DataError("location coordinates must be finite")
        seen: dict[tuple[float, float], str] = {}
        for loc in self.locations:
            key = (float(loc.coord[0]), float(loc.coord[1]))
            if key in seen:
                raise DataError(
                    f"locations {seen[key]!r} and {loc.id!r} share identical coordinates {key}"
                )
            seen[key] = loc.id
        ids = [loc.id for loc in self.locations]
        if len(set(ids)) != len(ids):
            raise DataError("duplicate location ids in panel")
        observed = self.values[~self.missing]
        if observed.size and not np.all(np.isfinite(observed)):
            raise DataError("non-missing values must be finite")
        self.values.setflags(write=False)
        self.missing.setflags(write=False)
        self.times.setflags(write=False)

    @property
    def n_locations(self) -> int:
        return len(self.locations)

    @property
    def n_times(self) -> int:
        return int(len(self.times))

    @property
    def n_variables(self) -> int:
        return len(self.variables)

    @property
    def coords(self) -> np.ndarray:
        return np.array([loc.coord for loc in self.locations], dtype=float)

    def row(self, loc_index: int, t_index: int) -> int:
        return loc_index * self.n_times + t_index

    def var_index(self, name: str) -> int:
        try:
            return self.variables.index(name)
        except ValueError:
            raise DataError(f"unknown variable {name!r}") from None

    def fingerprint(self) -> str:
        """Content hash used in cache keys and run manifests."""
        h = hashlib.sha256()
        h.update(",".join(self.variables).encode())
        h.update(",".join(loc.id for loc in self.locations).encode())
        h.update(np.ascontiguousarray(self.coords).tobytes())
        h.update(np.ascontiguousarray(self.times).tobytes())
        h.update(np.nan_to_num(self.values, nan=-9e99).tobytes())
        h.update(np.ascontiguousarray(self.missing).tobytes())
        return h.hexdigest()


@dataclass
class DesignMatrix:
    """Regression-ready view: one row per complete (location, time) case.

    covariates holds one column per conditioning node (canonical order given
    by covariate_nodes) plus, when requested, a trailing standardized time
    column. spatial holds the (x, y) coordinate columns or None. row_ids is
    an (n, 2) int array of (location index, time index) pairs, strictly
    increasing in (location, time) order.
    """

    covariates: np.ndarray
    covariate_nodes: tuple[LaggedNode, ...]
    spatial: np.ndarray | None
    response: np.ndarray
    row_ids: np.ndarray
    target: LaggedNode
    has_time_column: bool = False

    @property
    def n_rows(self) -> int:
        return int(self.response.shape[0])

    @property
    def n_predictor_columns(self) -> int:
        k = self.covariates.shape[1]
        if self.spatial is not None:
            k += self.spatial.shape[1]
        return int(k)

    def predictor_matrix(self) -> np.ndarray:
        """Covariate and spatial columns side by side (may have 0 columns)."""
        blocks = [self.covariates]
        if self.spatial is not None:
            blocks.append(self.spatial)
        return np.hstack(blocks) if blocks else self.covariates


def _parse_cell(text: str) -> float:
    text = text.strip()
    if not text:
        return np.nan
    try:
        value = float(text)
    except ValueError:
        return np.nan
    return value if np.isfinite(value) else np.nan


def load_panel(path: str, schema: Mapping[str, str] | None = None) -> SpatialPanel:
    """Read a panel CSV into a balanced SpatialPanel.

    The file needs a header with columns location_id, x, y, time and one
    column per variable; `schema` maps those canonical names to the actual
    column names when they differ. Unparseable or empty cells become
    missing. Duplicate (location, time) rows and unbalanced time ranges are
    rejected.
    """
    schema = dict(schema or {})
    colmap = {canon: schema.get(canon, canon) for canon in CANONICAL_COLUMNS}

    with open(path, "r", encoding="utf-8", newline="") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        missing_cols = [
            f"{colmap[c]!r} (for {c})" for c in CANONICAL_COLUMNS if colmap[c] not in header
        ]
        if missing_cols:
            raise DataError(f"{path}: missing required column(s) {', '.join(missing_cols)}")
        idx = {name: header.index(colmap[name]) for name in CANONICAL_COLUMNS}
        var_names = [h for h in header if h not in {colmap[c] for c in CANONICAL_COLUMNS}]
        if not var_names:
            raise DataError(f"{path}: no variable columns found")
        var_idx = [header.index(v) for v in var_names]

        rows: dict[tuple[str, int], tuple[list[float], int]] = {}
        coords: dict[str, tuple[float, float]] = {}
        for line_no, record in enumerate(reader, start=2):
            if not record or all(not cell.strip() for cell in record):
                continue
            loc = record[idx["location_id"]].strip()
            try:
                t = int(record[idx["time"]])
            except ValueError:
                raise DataError(
                    f"{path}: row {line_no}: time {record[idx['time']]!r} is not an integer"
                ) from None
            x = _parse_cell(record[idx["x"]])
            y = _parse_cell(record[idx["y"]])
            if np.isnan(x) or np.isnan(y):
                raise DataError(f"{path}: row {line_no}: non-numeric coordinate for {loc!r}")
            if loc in coords and coords[loc] != (x, y):
                raise DataError(
                    f"{path}: row {line_no}: location {loc!r} has conflicting coordinates"
                )
            coords[loc] = (x, y)
            key = (loc, t)
            if key in rows:
                raise DuplicateRowError(
                    f"{path}: row {line_no}: duplicate (location, time) pair "
                    f"({loc!r}, {t}); first seen at row {rows[key][1]}"
                )
            rows[key] = ([_parse_cell(record[j]) for j in var_idx], line_no)

    if not rows:
        raise DataError(f"{path}: no data rows")

    loc_ids = sorted(coords)
    times_by_loc = {loc: sorted(t for (l, t) in rows if l == loc) for loc in loc_ids}
    reference = times_by_loc[loc_ids[0]]
    offenders = [loc for loc in loc_ids if times_by_loc[loc] != reference]
    if offenders:
        raise UnbalancedPanelError(
            "locations do not share the reference time range "
            f"{reference[0]}..{reference[-1]} ({len(reference)} steps): "
            + ", ".join(repr(loc) for loc in offenders)
        )

    times = np.array(reference, dtype=int)
    n_rows = len(loc_ids) * len(times)
    values = np.full((n_rows, len(var_names)), np.nan)
    for li, loc in enumerate(loc_ids):
        for ti, t in enumerate(reference):
            values[li * len(times) + ti] = rows[(loc, t)][0]
    missing = np.isnan(values)
    locations = [LocationRecord(loc, coords[loc]) for loc in loc_ids]
    return SpatialPanel(locations, times, list(var_names), values, missing)


def dump_panel(panel: SpatialPanel) -> str:
    """Panel echoed back as the canonical CSV text (debug / round-trip)."""
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(["location_id", "x", "y", "time", *panel.variables])
    for li, loc in enumerate(panel.locations):
        for ti, t in enumerate(panel.times):
            row = panel.values[panel.row(li, ti)]
            miss = panel.missing[panel.row(li, ti)]
            cells = ["" if miss[j] else repr(float(row[j])) for j in range(panel.n_variables)]
            writer.writerow([loc.id, repr(float(loc.coord[0])), repr(float(loc.coord[1])), t, *cells])
    return out.getvalue()


def save_panel(panel: SpatialPanel, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as handle:
        handle.write(dump_panel(panel))


def standardize(panel: SpatialPanel) -> SpatialPanel:
    """Rescale every variable to pooled sample mean 0 and sample variance 1.

    Pooling is over all locations and times; missing entries are ignored.
    Idempotent up to floating-point roundoff.
    """
    values = np.array(panel.values, copy=True)
    for j, name in enumerate(panel.variables):
        col = values[:, j]
        obs = col[~panel.missing[:, j]]
        if obs.size < 2:
            raise ZeroVarianceError(f"variable {name!r} has fewer than 2 observed values")
        sd = float(np.std(obs, ddof=1))
        if sd == 0.0 or not np.isfinite(sd):
            raise ZeroVarianceError(f"variable {name!r} has zero variance")
        values[:, j] = (col - float(np.mean(obs))) / sd
    values[panel.missing] = np.nan
    return SpatialPanel(
        list(panel.locations), panel.times.copy(), list(panel.variables), values, panel.missing.copy()
    )


@lru_cache(maxsize=128)
def _complete_time_mask(panel: SpatialPanel, lag_cap: int) -> np.ndarray:
    """(L, T_obs) bool mask of rows usable by any design at this lag cap.

    A (location, t) row is usable when t >= lag_cap and every variable is
    observed at t - tau for all tau in 0..lag_cap. Sharing this one mask
    across all designs is what keeps residual vectors alignable.
    """
    L, T_obs, p = panel.n_locations, panel.n_times, panel.n_variables
    present = ~panel.missing.reshape(L, T_obs, p).any(axis=2)  # all vars observed
    ok = np.zeros((L, T_obs), dtype=bool)
    if T_obs > lag_cap:
        window = np.ones((L, T_obs - lag_cap), dtype=bool)
        for tau in range(lag_cap + 1):
            window &= present[:, lag_cap - tau : T_obs - tau]
        ok[:, lag_cap:] = window
    return ok


def complete_case_rows(panel: SpatialPanel, lag_cap: int) -> np.ndarray:
    """(n, 2) array of (location index, time index) rows shared by all designs."""
    mask = _complete_time_mask(panel, lag_cap)
    loc_idx, t_idx = np.nonzero(mask)
    return np.column_stack([loc_idx, t_idx])


def lagged_design(
    panel: SpatialPanel,
    target: LaggedNode,
    conditioners: Iterable[LaggedNode],
    spatial_proxy: bool,
    lag_cap: int,
    time_proxy: bool = False,
) -> DesignMatrix:
    """Build the regression view pairing `target` with shifted conditioners.

    Each row is a complete (location, time) case with time index at least
    lag_cap steps into the series; a conditioner (v, tau) column holds v's
    value at time - tau within the same location (no cross-location
    pairing). Coordinate columns are appended when spatial_proxy is on.
    time_proxy additionally appends a standardized time column; absorbing
    shared trends with it is the caller's responsibility.
    """
    conditioners = sorted(set(conditioners))
    if target in conditioners:
        raise DataError(f"target {target} cannot also be a conditioner")
    for node in [target, *conditioners]:
        if not 0 <= node.variable < panel.n_variables:
            raise DataError(f"node {node} references an unknown variable index")
        if not 0 <= node.lag <= lag_cap:
            raise DataError(f"node {node} exceeds the lag cap {lag_cap}")

    rows = complete_case_rows(panel, lag_cap)
    if rows.shape[0] == 0:
        raise EmptyDesignError(
            f"no complete-case rows remain at lag cap {lag_cap} "
            f"(T_obs={panel.n_times}, missing cells present)"
        )
    loc_idx, t_idx = rows[:, 0], rows[:, 1]
    T_obs = panel.n_times

    def column(node: LaggedNode) -> np.ndarray:
        return panel.values[loc_idx * T_obs + (t_idx - node.lag), node.variable]

    response = column(target)
    if conditioners:
        covariates = np.column_stack([column(node) for node in conditioners])
    else:
        covariates = np.empty((rows.shape[0], 0))

    has_time = False
    if time_proxy:
        t_col = t_idx.astype(float)
        sd = float(np.std(t_col, ddof=1)) if t_col.size > 1 else 0.0
        t_col = (t_col - t_col.mean()) / sd if sd > 0 else np.zeros_like(t_col)
        covariates = np.column_stack([covariates, t_col])
        has_time = True

    spatial = None
    if spatial_proxy:
        spatial = panel.coords[loc_idx]

    return DesignMatrix(
        covariates=covariates,
        covariate_nodes=tuple(conditioners),
        spatial=spatial,
        response=response,
        row_ids=rows,
        target=target,
        has_time_column=has_time,
    )

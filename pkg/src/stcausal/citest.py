"""Conditional-independence decisions from residual products (GCM) or an oracle.

The data-driven test regresses each endpoint on the conditioning set (with
coordinates included when the spatial proxy is on), multiplies the two
residual vectors elementwise, and normalizes: with products rho_k,

    statistic = sqrt(n) * mean(rho) / sqrt(mean(rho^2) - mean(rho)^2)

which is compared against a standard normal, two-sided. Residual vectors
are cached per (target, conditioning set, regressor fingerprint) so a
vector fitted for one pair is reused by every other pair that conditions
on the same set.

The oracle variant answers from d-separation on a known ground-truth graph
and returns p-values of exactly 0 or 1; it isolates search-logic behavior
from test error.
"""

from __future__ import annotations

import math
import threading
from collections import OrderedDict
from dataclasses import dataclass
from typing import Callable, Iterable, TextIO

import numpy as np
from scipy.stats import norm

from .errors import AlignmentError, DataError, DegenerateStatisticError, GraphStructureError
from .graphs import TemporalGraph
from .panel import LaggedNode, SpatialPanel, lagged_design
from .regression import RegressorSpec, ResidualVector, fit_residuals

MIN_ROWS = 10


@dataclass(frozen=True)
class CITestResult:
    """Outcome of one conditional-independence test."""

    statistic: float
    p_value: float
    n_eff: int
    target_pair: tuple[LaggedNode, LaggedNode]
    cond_set: frozenset

    def decision(self, alpha: float) -> bool:
        """True when independence is accepted at this level (p > alpha)."""
        return self.p_value > alpha


# Any callable with this shape can drive the discovery phases.
Tester = Callable[[LaggedNode, LaggedNode, frozenset], CITestResult]


class ResidualCache:
    """Thread-safe LRU cache of residual vectors with a byte budget.

    Concurrent lookups are cheap; a miss fits outside the lock, so two
    workers racing on the same key may both fit. Fits are deterministic,
    so whichever insert lands first is observationally identical to
    deduplicating.
    """

    def __init__(self, max_bytes: int = 512 * 1024 * 1024):
        self._data: OrderedDict[tuple, ResidualVector] = OrderedDict()
        self._lock = threading.Lock()
        self._bytes = 0
        self.max_bytes = int(max_bytes)
        self.hits = 0
        self.misses = 0

    def get_or_fit(self, key: tuple, fit: Callable[[], ResidualVector]) -> ResidualVector:
        with self._lock:
            cached = self._data.get(key)
            if cached is not None:
                self._data.move_to_end(key)
                self.hits += 1
                return cached
            self.misses += 1
        value = fit()
        with self._lock:
            if key not in self._data:
                self._data[key] = value
                self._bytes += value.nbytes()
                while self._bytes > self.max_bytes and len(self._data) > 1:
                    _, evicted = self._data.popitem(last=False)
                    self._bytes -= evicted.nbytes()
        return value

    def stats(self) -> dict:
        with self._lock:
            total = self.hits + self.misses
            return {
                "hits": self.hits,
                "misses": self.misses,
                "hit_rate": (self.hits / total) if total else 0.0,
                "entries": len(self._data),
                "bytes": self._bytes,
            }


def gcm_statistic(r_i: ResidualVector, r_j: ResidualVector) -> tuple[float, float]:
    """Normalized mean of residual products and its two-sided normal p-value."""
    if r_i.row_ids.shape != r_j.row_ids.shape or not np.array_equal(r_i.row_ids, r_j.row_ids):
        raise AlignmentError("residual vectors are not aligned on the same rows")
    n = r_i.values.shape[0]
    if n < MIN_ROWS:
        raise DataError(f"need at least {MIN_ROWS} aligned rows, got {n}")
    products = r_i.values * r_j.values
    mean = float(np.mean(products))
    mean_sq = float(np.mean(products**2))
    variance = mean_sq - mean * mean
    if not np.isfinite(variance) or variance <= mean_sq * 1e-15 or variance <= 0.0:
        raise DegenerateStatisticError("degenerate residual products (zero variance)")
    statistic = math.sqrt(n) * mean / math.sqrt(variance)
    p_value = 2.0 * float(norm.sf(abs(statistic)))
    return statistic, p_value


class GcmTester:
    """Callable running GCM tests against one panel with shared caching."""

    def __init__(
        self,
        panel: SpatialPanel,
        spec: RegressorSpec,
        lag_cap: int,
        spatial_proxy: bool = True,
        time_proxy: bool = False,
        cache: ResidualCache | None = None,
        trace: "TraceWriter | None" = None,
    ):
        self.panel = panel
        self.spec = spec
        self.lag_cap = int(lag_cap)
        self.spatial_proxy = bool(spatial_proxy)
        self.time_proxy = bool(time_proxy)
        self.cache = cache if cache is not None else ResidualCache()
        self.trace = trace
        self._context = (
            panel.fingerprint(),
            self.lag_cap,
            self.spatial_proxy,
            self.time_proxy,
            spec.fingerprint(),
        )

    def residuals_for(self, target: LaggedNode, cond: frozenset) -> ResidualVector:
        key = (
            self._context,
            (target.variable, target.lag),
            tuple(sorted((c.variable, c.lag) for c in cond)),
        )

        def fit() -> ResidualVector:
            design = lagged_design(
                self.panel,
                target,
                cond,
                spatial_proxy=self.spatial_proxy,
                lag_cap=self.lag_cap,
                time_proxy=self.time_proxy,
            )
            return fit_residuals(design, self.spec)

        return self.cache.get_or_fit(key, fit)

    def __call__(self, i: LaggedNode, j: LaggedNode, cond: Iterable[LaggedNode]) -> CITestResult:
        cond_set = frozenset(cond)
        if i == j:
            raise DataError("cannot test a node against itself")
        if i in cond_set or j in cond_set:
            raise DataError("conditioning set must exclude both endpoints")
        r_i = self.residuals_for(i, cond_set)
        r_j = self.residuals_for(j, cond_set)
        statistic, p_value = gcm_statistic(r_i, r_j)
        result = CITestResult(statistic, p_value, r_i.values.shape[0], (i, j), cond_set)
        if self.trace is not None:
            self.trace.write(result, self.panel.variables)
        return result


def gcm_test(
    panel: SpatialPanel,
    i: LaggedNode,
    j: LaggedNode,
    cond: Iterable[LaggedNode],
    spec: RegressorSpec,
    cache: ResidualCache | None = None,
    lag_cap: int | None = None,
    spatial_proxy: bool = True,
    time_proxy: bool = False,
) -> CITestResult:
    """One-shot GCM test; see GcmTester for repeated tests on one panel."""
    cond_set = frozenset(cond)
    if lag_cap is None:
        lag_cap = max((n.lag for n in (i, j, *cond_set)), default=0)
    tester = GcmTester(
        panel,
        spec,
        lag_cap=lag_cap,
        spatial_proxy=spatial_proxy,
        time_proxy=time_proxy,
        cache=cache,
    )
    return tester(i, j, cond_set)


class OracleTester:
    """Answers CI queries by d-separation on a known fully directed graph."""

    def __init__(self, truth: TemporalGraph, trace: "TraceWriter | None" = None):
        if not truth.is_fully_directed():
            raise GraphStructureError("oracle requires a fully directed truth graph")
        truth.lag0_topological_order()  # raises on lag-0 cycles
        parent_map = truth.expanded_parent_map()
        nodes = sorted(parent_map, key=lambda n: (n.variable, n.lag))
        self._index = {n: k for k, n in enumerate(nodes)}
        self._parents: list[tuple[int, ...]] = [() for _ in nodes]
        self._children: list[list[int]] = [[] for _ in nodes]
        for node, pars in parent_map.items():
            k = self._index[node]
            self._parents[k] = tuple(self._index[p] for p in pars)
            for p in pars:
                self._children[self._index[p]].append(k)
        self.truth = truth
        self.trace = trace
        self._memo: dict[tuple, bool] = {}

    def _lookup(self, node: LaggedNode) -> int:
        try:
            return self._index[node]
        except KeyError:
            raise GraphStructureError(f"node {node} absent from truth graph") from None

    def _separated(self, i: int, j: int, cond: frozenset) -> bool:
        parents, children = self._parents, self._children
        anc = set(cond)
        stack = list(cond)
        while stack:
            for p in parents[stack.pop()]:
                if p not in anc:
                    anc.add(p)
                    stack.append(p)
        seen = {(i, False), (i, True)}
        stack = list(seen)
        while stack:
            node, via_arrow = stack.pop()
            if node == j:
                return False
            if via_arrow:
                if node in anc:
                    for p in parents[node]:
                        if (p, False) not in seen:
                            seen.add((p, False))
                            stack.append((p, False))
                if node not in cond:
                    for c in children[node]:
                        if (c, True) not in seen:
                            seen.add((c, True))
                            stack.append((c, True))
            elif node not in cond:
                for p in parents[node]:
                    if (p, False) not in seen:
                        seen.add((p, False))
                        stack.append((p, False))
                for c in children[node]:
                    if (c, True) not in seen:
                        seen.add((c, True))
                        stack.append((c, True))
        return True

    def __call__(self, i: LaggedNode, j: LaggedNode, cond: Iterable[LaggedNode]) -> CITestResult:
        cond_set = frozenset(cond)
        if i == j:
            raise DataError("cannot test a node against itself")
        if i in cond_set or j in cond_set:
            raise DataError("conditioning set must exclude both endpoints")
        ii, jj = self._lookup(i), self._lookup(j)
        cc = frozenset(self._lookup(c) for c in cond_set)
        key = (min(ii, jj), max(ii, jj), cc)
        separated = self._memo.get(key)
        if separated is None:
            separated = self._separated(ii, jj, cc)
            self._memo[key] = separated
        result = CITestResult(
            statistic=0.0 if separated else math.inf,
            p_value=1.0 if separated else 0.0,
            n_eff=0,
            target_pair=(i, j),
            cond_set=cond_set,
        )
        if self.trace is not None:
            self.trace.write(result, self.truth.var_names)
        return result


def oracle_test(
    truth: TemporalGraph, i: LaggedNode, j: LaggedNode, cond: Iterable[LaggedNode]
) -> CITestResult:
    """One-shot oracle query; see OracleTester for repeated queries."""
    return OracleTester(truth)(i, j, cond)


class TraceWriter:
    """Optional per-test audit stream: `i;j;A;statistic;p;n_eff` lines."""

    HEADER = "i;j;A;statistic;p;n_eff"

    def __init__(self, stream: TextIO):
        self.stream = stream
        self._lock = threading.Lock()
        self.stream.write(self.HEADER + "\n")

    def write(self, result: CITestResult, names: list[str] | None = None) -> None:
        i, j = result.target_pair
        cond = "|".join(n.label(names) for n in sorted(result.cond_set))
        line = (
            f"{i.label(names)};{j.label(names)};{cond};"
            f"{result.statistic:.10g};{result.p_value:.10g};{result.n_eff}"
        )
        with self._lock:
            self.stream.write(line + "\n")

"""Two-phase skeleton search, orientation, and significance sweeps.

Phase 1 (lagged) tests every past-to-present pair, conditioning on other
past neighbors of the present endpoint; surviving edges are directed by
time. Phase 2 (contemporaneous) tests present-pair edges with conditioning
sets drawn from present and past neighbors of either endpoint, then
revisits surviving lagged edges with the discovered present neighbors
available as conditioners, which removes past-to-present links that are
mediated purely by contemporaneous structure. Past nodes are never
candidate colliders.

Within one conditioning-set-size sweep, pair tests run concurrently
against a snapshot of the adjacency state; deletions apply only at the
barrier between sweeps, so results are identical for any worker count.
Candidate conditioners are ordered by the strength (absolute statistic) of
their own earlier tests, which shortens the search without affecting its
outcome. Every tested set is logged, not just the first separating one, so
the majority and conservative collider rules have the full history.
"""

from __future__ import annotations

import itertools
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from .citest import GcmTester, OracleTester, ResidualCache, Tester, TraceWriter
from .errors import ConfigError, StcausalError
from .graphs import (
    ConflictRecord,
    COLLIDER_RULES,
    EdgeMark,
    SepsetRecords,
    TemporalGraph,
    ic_star_marks,
    orient_colliders,
    propagate_orientations,
)
from .panel import LaggedNode, SpatialPanel
from .panel import standardize as standardize_panel
from .regression import RegressorSpec


@dataclass(frozen=True)
class DiscoveryConfig:
    """Everything a discovery run depends on, seed included."""

    max_lag: int = 1
    alpha: float = 0.05
    max_cond_size: int | None = 3
    collider_rule: str = "default"
    latent_mode: bool = False
    spatial_proxy: bool = True
    time_proxy: bool = False
    regressor: RegressorSpec = field(default_factory=RegressorSpec)
    worker_count: int = 1
    seed: int = 0
    cache_bytes: int = 512 * 1024 * 1024

    def __post_init__(self) -> None:
        if self.max_lag < 0:
            raise ConfigError(f"max_lag must be >= 0, got {self.max_lag}")
        if not 0.0 < self.alpha < 1.0:
            raise ConfigError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.max_cond_size is not None and self.max_cond_size < 0:
            raise ConfigError("max_cond_size must be >= 0 or None for unlimited")
        if self.collider_rule not in COLLIDER_RULES:
            raise ConfigError(f"collider_rule must be one of {COLLIDER_RULES}")
        if self.worker_count < 1:
            raise ConfigError("worker_count must be >= 1")

    def to_json_dict(self) -> dict:
        return {
            "max_lag": self.max_lag,
            "alpha": self.alpha,
            "max_cond_size": self.max_cond_size,
            "collider_rule": self.collider_rule,
            "latent_mode": self.latent_mode,
            "spatial_proxy": self.spatial_proxy,
            "time_proxy": self.time_proxy,
            "regressor": self.regressor.to_json_dict(),
            "worker_count": self.worker_count,
            "seed": self.seed,
        }

    @classmethod
    def from_json_dict(cls, payload: dict) -> "DiscoveryConfig":
        kwargs = dict(payload)
        if "regressor" in kwargs:
            kwargs["regressor"] = RegressorSpec.from_json_dict(kwargs["regressor"])
        kwargs.pop("cache_bytes", None)
        return cls(**kwargs)


# ---- shared search machinery ---------------------------------------------


@dataclass
class _PairOutcome:
    pair: tuple[LaggedNode, LaggedNode]
    tested: list[tuple[frozenset, float, float]]  # (cond set, statistic, p)
    separated: bool


class _SkeletonState:
    """Adjacency sets, strength scores, and the sepset log for one run."""

    def __init__(self) -> None:
        self.records = SepsetRecords()
        self.strength: dict[tuple[LaggedNode, LaggedNode], float] = {}
        self.n_tests = 0

    def order_candidates(
        self, anchor_a: LaggedNode, anchor_b: LaggedNode, pool: Iterable[LaggedNode]
    ) -> list[LaggedNode]:
        """Strongest-first candidate order with a deterministic tie-break.

        A candidate's strength is the largest absolute statistic seen in its
        own earlier tests against either pair member; never-tested
        candidates sort first (the fully connected start treats everything
        as strong).
        """

        def key(node: LaggedNode):
            scores = [
                s
                for s in (
                    self.strength.get((anchor_a, node)),
                    self.strength.get((anchor_b, node)),
                )
                if s is not None
            ]
            strongest = max(scores) if scores else math.inf
            return (-strongest, node.variable, node.lag)

        return sorted(pool, key=key)

    def absorb(self, outcome: _PairOutcome, alpha: float) -> None:
        a, b = outcome.pair
        for cond, statistic, p_value in outcome.tested:
            self.records.log(a, b, cond, statistic, p_value, p_value > alpha)
            self.n_tests += 1
            magnitude = abs(statistic)
            for x, y in ((a, b), (b, a)):
                prev = self.strength.get((x, y))
                self.strength[(x, y)] = magnitude if prev is None else min(prev, magnitude)


def _pair_task(
    tester: Tester,
    pair: tuple[LaggedNode, LaggedNode],
    candidates: Sequence[LaggedNode],
    size: int,
    alpha: float,
    already_tested: Callable[[frozenset], bool] | None = None,
) -> Callable[[], _PairOutcome]:
    def run() -> _PairOutcome:
        a, b = pair
        tested: list[tuple[frozenset, float, float]] = []
        try:
            for combo in itertools.combinations(candidates, size):
                cond = frozenset(combo)
                if already_tested is not None and already_tested(cond):
                    continue
                result = tester(a, b, cond)
                tested.append((cond, result.statistic, result.p_value))
                if result.p_value > alpha:
                    return _PairOutcome(pair, tested, True)
            return _PairOutcome(pair, tested, False)
        except StcausalError as exc:
            label = f"{a}--{b} at conditioning size {size}"
            raise type(exc)(f"while testing {label}: {exc}") from exc

    return run


def _run_tasks(tasks: list, worker_count: int) -> list:
    if worker_count <= 1 or len(tasks) <= 1:
        return [task() for task in tasks]
    with ThreadPoolExecutor(max_workers=worker_count) as pool:
        return list(pool.map(lambda f: f(), tasks))


def _size_limit(config: DiscoveryConfig) -> float:
    return math.inf if config.max_cond_size is None else config.max_cond_size


# ---- phase 1: lagged skeleton -----------------------------------------------


def lagged_phase(
    panel: SpatialPanel | None,
    config: DiscoveryConfig,
    tester: Tester,
    state: _SkeletonState | None = None,
) -> tuple[TemporalGraph, SepsetRecords]:
    """Past-to-present skeleton search; survivors are directed toward lag 0.

    Starts fully connected over ((i, tau > 0), (j, 0)) pairs; conditioning
    sets are drawn from the present endpoint's current past neighbors,
    iterating set size from 0 upward. Any p > alpha deletes the edge; every
    tested set is logged.
    """
    state = state if state is not None else _SkeletonState()
    p, max_lag = _dimensions(panel, config, tester)
    lag0 = [LaggedNode(v, 0) for v in range(p)]
    lagged = [LaggedNode(v, tau) for v in range(p) for tau in range(1, max_lag + 1)]
    adj: dict[LaggedNode, set[LaggedNode]] = {j: set(lagged) for j in lag0}

    size = 0
    while size <= _size_limit(config):
        tasks = []
        for j in lag0:
            for i in sorted(adj[j]):
                pool = adj[j] - {i}
                if len(pool) < size:
                    continue
                candidates = state.order_candidates(j, i, pool)
                tasks.append(_pair_task(tester, (i, j), candidates, size, config.alpha))
        if not tasks:
            break
        for outcome in _run_tasks(tasks, config.worker_count):
            state.absorb(outcome, config.alpha)
            if outcome.separated:
                i, j = outcome.pair
                adj[j].discard(i)
        size += 1

    graph = _make_graph(panel, config, tester)
    for j in lag0:
        for i in sorted(adj[j]):
            graph.add_edge(i, j, EdgeMark.DIRECTED)
    return graph, state.records


# ---- phase 2: contemporaneous + lagged refinement ---------------------------


def contemporaneous_phase(
    panel: SpatialPanel | None,
    config: DiscoveryConfig,
    tester: Tester,
    lagged_graph: TemporalGraph,
    sepsets: SepsetRecords,
    state: _SkeletonState | None = None,
) -> tuple[TemporalGraph, SepsetRecords]:
    """Present-pair search, then refinement of the surviving lagged edges.

    Present pairs condition on sets drawn from the present and past
    neighbors of either endpoint (past nodes cannot be colliders, so their
    inclusion never opens a path). Lagged pairs are then revisited with the
    present endpoint's discovered contemporaneous neighbors as additional
    candidate conditioners; sets already tested in phase 1 are skipped.
    """
    if state is None:
        state = _SkeletonState()
        state.records = sepsets.merged_with(SepsetRecords())
    p = lagged_graph.n_variables
    lag0 = [LaggedNode(v, 0) for v in range(p)]
    lagged_adj: dict[LaggedNode, set[LaggedNode]] = {
        j: {n for n in lagged_graph.neighbors(j) if n.lag > 0} for j in lag0
    }
    lag0_adj: dict[LaggedNode, set[LaggedNode]] = {
        i: {j for j in lag0 if j != i} for i in lag0
    }

    # present-pair sweep
    size = 0
    while size <= _size_limit(config):
        tasks = []
        for i in lag0:
            for j in sorted(lag0_adj[i]):
                if (j.variable, j.lag) <= (i.variable, i.lag):
                    continue
                pool = (lag0_adj[i] | lag0_adj[j] | lagged_adj[i] | lagged_adj[j]) - {i, j}
                if len(pool) < size:
                    continue
                candidates = state.order_candidates(i, j, pool)
                tasks.append(_pair_task(tester, (i, j), candidates, size, config.alpha))
        if not tasks:
            break
        for outcome in _run_tasks(tasks, config.worker_count):
            state.absorb(outcome, config.alpha)
            if outcome.separated:
                i, j = outcome.pair
                lag0_adj[i].discard(j)
                lag0_adj[j].discard(i)
        size += 1

    # lagged-edge refinement with contemporaneous conditioners available
    size = 0
    while size <= _size_limit(config):
        tasks = []
        for j in lag0:
            for i in sorted(lagged_adj[j]):
                reverse_lag0 = {k for k in lag0 if k != j and i in lagged_adj[k]}
                pool = (lagged_adj[j] | lag0_adj[j] | reverse_lag0) - {i, j}
                if len(pool) < size:
                    continue
                candidates = state.order_candidates(j, i, pool)
                record = state.records.get(i, j)
                seen = (
                    {t.nodes for t in record.tested} if record is not None else set()
                )
                tasks.append(
                    _pair_task(
                        tester,
                        (i, j),
                        candidates,
                        size,
                        config.alpha,
                        already_tested=seen.__contains__,
                    )
                )
        if not tasks:
            break
        for outcome in _run_tasks(tasks, config.worker_count):
            state.absorb(outcome, config.alpha)
            if outcome.separated:
                i, j = outcome.pair
                lagged_adj[j].discard(i)
        size += 1

    skeleton = _make_graph(panel, config, tester)
    for j in lag0:
        for i in sorted(lagged_adj[j]):
            skeleton.add_edge(i, j, EdgeMark.DIRECTED)
    for i in lag0:
        for j in sorted(lag0_adj[i]):
            if (i.variable, i.lag) < (j.variable, j.lag):
                skeleton.add_edge(i, j, EdgeMark.UNDIRECTED)
    return skeleton, state.records


# ---- full pipeline -----------------------------------------------------------


@dataclass
class DiscoveryRun:
    """A discovered graph plus everything needed for the run manifest."""

    graph: TemporalGraph
    records: SepsetRecords
    conflicts: list[ConflictRecord]
    phase_tests: dict[str, int]
    wall_time: float
    cache_stats: dict | None
    skeleton: TemporalGraph


def _dimensions(
    panel: SpatialPanel | None, config: DiscoveryConfig, tester: Tester
) -> tuple[int, int]:
    if isinstance(tester, OracleTester):
        return tester.truth.n_variables, config.max_lag
    if panel is None:
        raise ConfigError("panel is required unless an oracle truth is supplied")
    return panel.n_variables, config.max_lag


def _make_graph(
    panel: SpatialPanel | None, config: DiscoveryConfig, tester: Tester
) -> TemporalGraph:
    p, max_lag = _dimensions(panel, config, tester)
    names = None
    if panel is not None:
        names = list(panel.variables)
    elif isinstance(tester, OracleTester):
        names = tester.truth.var_names
    return TemporalGraph(p, max_lag, var_names=names)


def run_discovery(
    panel: SpatialPanel | None,
    config: DiscoveryConfig,
    truth: TemporalGraph | None = None,
    cache: ResidualCache | None = None,
    trace: TraceWriter | None = None,
    pre_standardized: bool = False,
) -> DiscoveryRun:
    """Full pipeline: standardize, two search phases, orientation, marks.

    A supplied `truth` graph switches testing to the d-separation oracle
    (the panel may then be omitted). Deterministic for a given
    (panel, config), independent of worker_count and cache warmth.
    """
    started = time.perf_counter()
    if truth is not None:
        if truth.max_lag < config.max_lag:
            truth = truth.with_max_lag(config.max_lag)
        tester: Tester = OracleTester(truth, trace=trace)
    else:
        if panel is None:
            raise ConfigError("panel is required unless an oracle truth is supplied")
        if not pre_standardized:
            panel = standardize_panel(panel)
        tester = GcmTester(
            panel,
            config.regressor,
            lag_cap=config.max_lag,
            spatial_proxy=config.spatial_proxy,
            time_proxy=config.time_proxy,
            cache=cache if cache is not None else ResidualCache(config.cache_bytes),
            trace=trace,
        )

    state = _SkeletonState()
    lagged_graph, _ = lagged_phase(panel, config, tester, state=state)
    lagged_graph.validate()
    lagged_tests = state.n_tests

    skeleton, records = contemporaneous_phase(
        panel, config, tester, lagged_graph, SepsetRecords(), state=state
    )
    skeleton.validate()

    if config.latent_mode:
        graph, conflicts = ic_star_marks(skeleton, records, config.collider_rule)
    else:
        oriented, conflicts = orient_colliders(skeleton, records, config.collider_rule)
        oriented.validate()
        graph = propagate_orientations(oriented)
    graph.validate(latent=config.latent_mode)

    cache_stats = None
    if isinstance(tester, GcmTester):
        cache_stats = tester.cache.stats()
    return DiscoveryRun(
        graph=graph,
        records=records,
        conflicts=conflicts,
        phase_tests={
            "lagged": lagged_tests,
            "contemporaneous": state.n_tests - lagged_tests,
        },
        wall_time=time.perf_counter() - started,
        cache_stats=cache_stats,
        skeleton=skeleton,
    )


def discover(
    panel: SpatialPanel | None,
    config: DiscoveryConfig,
    truth: TemporalGraph | None = None,
) -> TemporalGraph:
    """Convenience wrapper returning only the discovered graph."""
    return run_discovery(panel, config, truth=truth).graph


# ---- significance sweep -------------------------------------------------


@dataclass
class StabilityReport:
    """Edge presence across significance levels and per-edge persistence.

    Persistence is the fraction of successfully completed levels at which
    the adjacency appears. Presence is usually monotone non-increasing as
    alpha shrinks, but that is empirical, not guaranteed; deviations are
    visible directly in the presence matrix.
    """

    alphas: list[float]  # descending (most lenient first)
    edges: list[tuple[str, str, str]]  # (from, to, mark at most lenient presence)
    presence: np.ndarray  # (n_edges, n_alphas) booleans
    persistence: np.ndarray  # (n_edges,) fractions
    failures: dict[float, str]
    cache_stats: dict | None

    def to_csv(self) -> str:
        header = ["from", "to", "mark"] + [f"alpha_{a:g}" for a in self.alphas] + ["persistence"]
        lines = [",".join(header)]
        for row, (u, v, mark) in enumerate(self.edges):
            cells = [u, v, mark]
            cells += ["1" if x else "0" for x in self.presence[row]]
            cells.append(f"{self.persistence[row]:.6g}")
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"


def significance_sweep(
    panel: SpatialPanel,
    config: DiscoveryConfig,
    alphas: Sequence[float],
    cache: ResidualCache | None = None,
) -> StabilityReport:
    """Rerun discovery across significance levels with a shared residual cache.

    Edges that keep appearing as the threshold tightens have stronger
    support. A failing level is recorded and skipped; the sweep continues.
    """
    levels = sorted(set(float(a) for a in alphas), reverse=True)
    if len(levels) < 2:
        raise ConfigError("significance sweep needs at least 2 distinct levels")
    for a in levels:
        if not 0.0 < a < 1.0:
            raise ConfigError(f"alpha {a} outside (0, 1)")

    panel = standardize_panel(panel)
    shared = cache if cache is not None else ResidualCache(config.cache_bytes)
    graphs: dict[float, TemporalGraph | None] = {}
    failures: dict[float, str] = {}
    names = list(panel.variables)
    for a in levels:
        level_config = replace(config, alpha=a)
        try:
            run = run_discovery(
                panel, level_config, cache=shared, pre_standardized=True
            )
            graphs[a] = run.graph
        except StcausalError as exc:
            graphs[a] = None
            failures[a] = str(exc)

    edge_union: dict[tuple, tuple[str, str, str]] = {}
    for a in levels:  # lenient first, so the first mark seen wins
        g = graphs[a]
        if g is None:
            continue
        for u, v, mark in g.edges():
            key = _edge_key(u, v)
            if key not in edge_union:
                edge_union[key] = (u.label(names), v.label(names), mark.value)

    keys = sorted(edge_union)
    ok_levels = [a for a in levels if graphs[a] is not None]
    presence = np.zeros((len(keys), len(levels)), dtype=bool)
    for col, a in enumerate(levels):
        g = graphs[a]
        if g is None:
            continue
        level_keys = {_edge_key(u, v) for u, v, _ in g.edges()}
        for row, key in enumerate(keys):
            presence[row, col] = key in level_keys
    if ok_levels:
        ok_cols = [levels.index(a) for a in ok_levels]
        persistence = presence[:, ok_cols].mean(axis=1) if keys else np.zeros(0)
    else:
        persistence = np.zeros(len(keys))

    return StabilityReport(
        alphas=levels,
        edges=[edge_union[k] for k in keys],
        presence=presence,
        persistence=np.asarray(persistence),
        failures=failures,
        cache_stats=shared.stats(),
    )


def _edge_key(u: LaggedNode, v: LaggedNode) -> tuple:
    a, b = (u.variable, u.lag), (v.variable, v.lag)
    return (a, b) if a <= b else (b, a)

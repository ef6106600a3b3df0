"""Scoring estimated graphs against truth and against random-edge baselines.

F1-style scores reward connectedness, so the headline comparison here is a
hypothesis test against graphs with the same number of edges placed
uniformly at random over the admissible pairs; adjacency F1, an
orientation fraction, and the structural Hamming distance are reported
alongside, never blended.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .graphs import EdgeMark, TemporalGraph
from .panel import LaggedNode

PairKey = tuple[tuple[int, int], tuple[int, int]]


def _pair_key(u: LaggedNode, v: LaggedNode) -> PairKey:
    a, b = (u.variable, u.lag), (v.variable, v.lag)
    return (a, b) if a <= b else (b, a)


def adjacency_keys(g: TemporalGraph) -> set[PairKey]:
    """Unordered adjacency keys; lagged pairs stay distinct per lag."""
    return {_pair_key(u, v) for u, v, _ in g.edges()}


@dataclass(frozen=True)
class GraphScore:
    """Adjacency precision/recall/F1, orientation accuracy, and SHD."""

    precision: float
    recall: float
    f1: float
    orientation: float
    shd: int
    n_estimated: int
    n_true: int

    def to_json_dict(self) -> dict:
        return {
            "adjacency": {"precision": self.precision, "recall": self.recall, "f1": self.f1},
            "orientation": self.orientation,
            "shd": self.shd,
            "edge_counts": {"estimated": self.n_estimated, "true": self.n_true},
        }


@dataclass(frozen=True)
class BaselineTest:
    """Observed adjacency F1 against same-edge-count random placement."""

    observed_f1: float
    null_draws: int
    null_f1_mean: float
    p_value: float

    def to_json_dict(self) -> dict:
        return {
            "observed_f1": self.observed_f1,
            "null_draws": self.null_draws,
            "null_f1_mean": self.null_f1_mean,
            "p_value": self.p_value,
        }


def _f1_from_sets(est: set, truth: set) -> tuple[float, float, float]:
    tp = len(est & truth)
    precision = tp / len(est) if est else 1.0
    recall = tp / len(truth) if truth else 1.0
    if precision == 0.0 or recall == 0.0:
        f1 = 0.0
    else:
        f1 = 2.0 * precision * recall / (precision + recall)
    if not est and not truth:
        f1 = 1.0
    return precision, recall, f1


def _check_same_nodes(est: TemporalGraph, truth: TemporalGraph) -> None:
    if est.n_variables != truth.n_variables or est.max_lag != truth.max_lag:
        raise DataError(
            f"node-set mismatch: estimated graph has p={est.n_variables}, "
            f"max_lag={est.max_lag}; truth has p={truth.n_variables}, "
            f"max_lag={truth.max_lag}"
        )


def _edge_map(g: TemporalGraph) -> dict[PairKey, tuple[LaggedNode, LaggedNode, EdgeMark]]:
    return {_pair_key(u, v): (u, v, m) for u, v, m in g.edges()}


def _same_orientation(
    a: tuple[LaggedNode, LaggedNode, EdgeMark], b: tuple[LaggedNode, LaggedNode, EdgeMark]
) -> bool:
    (ua, va, ma), (ub, vb, mb) = a, b
    if ma is not mb:
        return False
    if ma in (EdgeMark.UNDIRECTED, EdgeMark.BIDIRECTED):
        return True  # stored canonically; adjacency match suffices
    return ua == ub and va == vb


def adjacency_scores(est: TemporalGraph, truth: TemporalGraph) -> GraphScore:
    """Score adjacencies as unordered (lag-keyed) pairs; marks separately.

    Precision is 1 by convention for an empty estimated graph (F1 then 0
    unless the truth is empty too). Orientation accuracy is the fraction of
    correctly-adjacent edges carrying the correct mark and direction. SHD
    counts insertions + deletions + mark changes.
    """
    _check_same_nodes(est, truth)
    est_map, truth_map = _edge_map(est), _edge_map(truth)
    est_keys, truth_keys = set(est_map), set(truth_map)
    precision, recall, f1 = _f1_from_sets(est_keys, truth_keys)
    common = est_keys & truth_keys
    correct_marks = sum(1 for k in common if _same_orientation(est_map[k], truth_map[k]))
    orientation = correct_marks / len(common) if common else 1.0
    shd = (
        len(est_keys - truth_keys)
        + len(truth_keys - est_keys)
        + (len(common) - correct_marks)
    )
    return GraphScore(
        precision=precision,
        recall=recall,
        f1=f1,
        orientation=orientation,
        shd=int(shd),
        n_estimated=len(est_keys),
        n_true=len(truth_keys),
    )


def edge_differences(est: TemporalGraph, truth: TemporalGraph) -> list[dict]:
    """Per-edge difference table: match / wrong-mark / wrong-lag / extra / missing.

    An estimated edge between a variable pair whose true adjacency sits at a
    different lag is classified wrong-lag (paired off against the
    corresponding missing true edge) rather than as an unrelated extra.
    """
    _check_same_nodes(est, truth)
    names = est.var_names or truth.var_names
    est_map, truth_map = _edge_map(est), _edge_map(truth)

    def var_pair(key: PairKey) -> tuple[int, int]:
        return tuple(sorted((key[0][0], key[1][0])))  # type: ignore[return-value]

    rows: list[dict] = []

    def describe(key: PairKey, source: dict) -> dict:
        u, v, m = source[key]
        return {
            "from": u.label(names),
            "to": v.label(names),
            "mark": m.value,
        }

    for key in sorted(set(est_map) & set(truth_map)):
        row = describe(key, truth_map)
        row["status"] = (
            "match" if _same_orientation(est_map[key], truth_map[key]) else "wrong-mark"
        )
        if row["status"] == "wrong-mark":
            row["estimated_mark"] = est_map[key][2].value
            eu, ev, em = est_map[key]
            if em in (EdgeMark.DIRECTED, EdgeMark.GENUINE):
                row["estimated_direction"] = f"{eu.label(names)}->{ev.label(names)}"
        rows.append(row)

    extra = sorted(set(est_map) - set(truth_map))
    missing = sorted(set(truth_map) - set(est_map))
    missing_by_pair: dict[tuple[int, int], list[PairKey]] = {}
    for key in missing:
        missing_by_pair.setdefault(var_pair(key), []).append(key)

    for key in extra:
        mates = missing_by_pair.get(var_pair(key))
        if mates:
            mate = mates.pop(0)
            row = describe(key, est_map)
            row["status"] = "wrong-lag"
            u, v, _ = truth_map[mate]
            row["true_edge"] = f"{u.label(names)}--{v.label(names)}"
            rows.append(row)
        else:
            row = describe(key, est_map)
            row["status"] = "extra"
            rows.append(row)

    for keys in missing_by_pair.values():
        for key in keys:
            row = describe(key, truth_map)
            row["status"] = "missing"
            rows.append(row)
    return rows


def admissible_pairs(p: int, max_lag: int) -> list[PairKey]:
    """All pair keys an edge may occupy under the temporal constraints."""
    pairs: list[PairKey] = []
    for a in range(p):
        for b in range(a + 1, p):
            pairs.append(((a, 0), (b, 0)))
    for tau in range(1, max_lag + 1):
        for i in range(p):
            for j in range(p):
                pairs.append(_pair_key(LaggedNode(i, tau), LaggedNode(j, 0)))
    return pairs


def random_edge_baseline(
    est: TemporalGraph, truth: TemporalGraph, n_draws: int, seed: int
) -> BaselineTest:
    """Compare the observed adjacency F1 against random same-size graphs.

    Each draw places exactly the estimated number of edges uniformly over
    the admissible pairs and is scored on adjacency F1 against the truth.
    The p-value uses the add-one estimator, counting the observed graph
    among the draws, so it lies in (0, 1].
    """
    if n_draws < 99:
        raise ConfigError("need at least 99 null draws")
    _check_same_nodes(est, truth)
    pairs = admissible_pairs(truth.n_variables, truth.max_lag)
    m = est.n_edges()
    if m > len(pairs):
        raise DataError(f"estimated graph has {m} edges but only {len(pairs)} admissible pairs")

    truth_keys = adjacency_keys(truth)
    observed = _f1_from_sets(adjacency_keys(est), truth_keys)[2]
    rng = np.random.default_rng(seed)
    null_f1 = np.empty(n_draws)
    indices = np.arange(len(pairs))
    for d in range(n_draws):
        chosen = rng.choice(indices, size=m, replace=False) if m else np.empty(0, dtype=int)
        draw_keys = {pairs[i] for i in chosen}
        null_f1[d] = _f1_from_sets(draw_keys, truth_keys)[2]
    at_least = int(np.sum(null_f1 >= observed - 1e-12))
    return BaselineTest(
        observed_f1=observed,
        null_draws=n_draws,
        null_f1_mean=float(np.mean(null_f1)),
        p_value=(1 + at_least) / (n_draws + 1),
    )

"""Two-phase search behavior, full-pipeline exactness, sweeps, determinism."""

import numpy as np
import pytest

from stcausal import (
    ConfigError,
    DiscoveryConfig,
    EdgeMark,
    LaggedNode,
    OracleTester,
    RegressorSpec,
    ResidualCache,
    ScmSpec,
    TemporalGraph,
    contemporaneous_phase,
    discover,
    generate_scm_panel,
    lagged_phase,
    random_temporal_dag,
    run_discovery,
    significance_sweep,
)
from oracles import all_dags, pattern_graph_t0, pattern_graph_temporal, truth_graph_from_edges

N = LaggedNode
ORACLE_CFG = DiscoveryConfig(max_lag=1, max_cond_size=None, worker_count=1)
LINEAR = RegressorSpec(kind="linear-ridge", penalty=1e-6)


def edge_set(g):
    return {(u.variable, u.lag, v.variable, v.lag, m.value) for u, v, m in g.edges()}


# ---- lagged phase -----------------------------------------------------------


def test_lagged_phase_single_edge():
    truth = TemporalGraph(2, 1)
    truth.add_edge(N(0, 1), N(1, 0), EdgeMark.DIRECTED)
    graph, _ = lagged_phase(None, ORACLE_CFG, OracleTester(truth))
    assert edge_set(graph) == {(0, 1, 1, 0, "directed")}


def test_lagged_phase_chain_separated_by_lagged_mediator():
    """X@t-2 -- Z@t is cut by conditioning on Y@t-1 (the lagged mediator)."""
    truth = TemporalGraph(3, 2)
    truth.add_edge(N(0, 1), N(1, 0), EdgeMark.DIRECTED)
    truth.add_edge(N(1, 1), N(2, 0), EdgeMark.DIRECTED)
    cfg = DiscoveryConfig(max_lag=2, max_cond_size=None)
    graph, records = lagged_phase(None, cfg, OracleTester(truth))
    assert not graph.has_edge(N(0, 2), N(2, 0))
    record = records.get(N(0, 2), N(2, 0))
    separating = [t.nodes for t in record.separating_sets()]
    assert any(N(1, 1) in s for s in separating)


def test_lagged_phase_empty_truth_all_size_zero():
    truth = TemporalGraph(2, 2)
    cfg = DiscoveryConfig(max_lag=2, max_cond_size=None)
    graph, records = lagged_phase(None, cfg, OracleTester(truth))
    assert graph.n_edges() == 0
    assert all(t.nodes == frozenset() for rec in records.pairs() for t in rec.tested)


# ---- contemporaneous phase -------------------------------------------------


def test_contemporaneous_survives_with_lagged_confounder():
    truth = TemporalGraph(3, 1, var_names=["Z", "X", "Y"])
    truth.add_edge(N(0, 1), N(1, 0), EdgeMark.DIRECTED)
    truth.add_edge(N(0, 1), N(2, 0), EdgeMark.DIRECTED)
    truth.add_edge(N(1, 0), N(2, 0), EdgeMark.DIRECTED)
    tester = OracleTester(truth)
    lagged, records = lagged_phase(None, ORACLE_CFG, tester)
    skeleton, _ = contemporaneous_phase(None, ORACLE_CFG, tester, lagged, records)
    assert skeleton.has_edge(N(1, 0), N(2, 0))  # X - Y survives
    assert skeleton.has_edge(N(0, 1), N(1, 0))
    assert skeleton.has_edge(N(0, 1), N(2, 0))


def test_contemporaneous_removed_given_lagged_parents():
    truth = TemporalGraph(3, 1, var_names=["Z", "X", "Y"])
    truth.add_edge(N(0, 1), N(1, 0), EdgeMark.DIRECTED)
    truth.add_edge(N(0, 1), N(2, 0), EdgeMark.DIRECTED)
    tester = OracleTester(truth)
    lagged, records = lagged_phase(None, ORACLE_CFG, tester)
    skeleton, records = contemporaneous_phase(None, ORACLE_CFG, tester, lagged, records)
    assert not skeleton.has_edge(N(1, 0), N(2, 0))
    sep = records.get(N(1, 0), N(2, 0)).first_separating()
    assert N(0, 1) in sep.nodes


def test_no_contemporaneous_effects_yields_no_lag0_edges():
    truth = TemporalGraph(2, 1)
    truth.add_edge(N(0, 1), N(0, 0), EdgeMark.DIRECTED)
    truth.add_edge(N(1, 1), N(1, 0), EdgeMark.DIRECTED)
    tester = OracleTester(truth)
    lagged, records = lagged_phase(None, ORACLE_CFG, tester)
    skeleton, _ = contemporaneous_phase(None, ORACLE_CFG, tester, lagged, records)
    assert all(u.lag > 0 for u, v, _ in skeleton.edges())


def test_lagged_refinement_removes_contemporaneously_mediated_edge():
    """(W@t-1) -> X -> Y leaves no spurious W@t-1 -> Y edge."""
    truth = TemporalGraph(3, 1, var_names=["W", "X", "Y"])
    truth.add_edge(N(0, 1), N(1, 0), EdgeMark.DIRECTED)
    truth.add_edge(N(1, 0), N(2, 0), EdgeMark.DIRECTED)
    got = discover(None, ORACLE_CFG, truth=truth)
    assert not got.has_edge(N(0, 1), N(2, 0))
    assert got == pattern_graph_temporal(truth)


# ---- full pipeline against equivalence-class oracles ----------------------


def test_discover_matches_cpdag_on_sampled_5node_dags():
    rng = np.random.default_rng(2)
    dags = list(all_dags(4))
    cfg = DiscoveryConfig(max_lag=0, max_cond_size=None)
    for pick in rng.choice(len(dags), size=40, replace=False):
        edges = dags[pick]
        got = discover(None, cfg, truth=truth_graph_from_edges(4, edges))
        assert got == pattern_graph_t0(4, edges)


@pytest.mark.parametrize("seed", range(8))
def test_discover_matches_temporal_pattern_on_random_graphs(seed):
    truth = random_temporal_dag(p=3, max_lag=1, density=0.4, seed=seed)
    got = discover(None, ORACLE_CFG, truth=truth)
    assert got == pattern_graph_temporal(truth)


def test_deletions_are_monotone():
    """Once a pair separates, it is never tested again in the same run."""
    truth = random_temporal_dag(p=4, max_lag=1, density=0.4, seed=5)
    run = run_discovery(None, ORACLE_CFG, truth=truth)
    for record in run.records.pairs():
        separated_at = None
        for idx, t in enumerate(record.tested):
            if t.separating:
                separated_at = idx
                break
        if separated_at is not None:
            assert separated_at == len(record.tested) - 1


def test_output_never_violates_temporal_invariants():
    for seed in range(10):
        truth = random_temporal_dag(p=4, max_lag=2, density=0.5, seed=seed)
        cfg = DiscoveryConfig(max_lag=2, max_cond_size=None)
        got = discover(None, cfg, truth=truth)
        got.validate()
        assert not any(v.lag > 0 for _, v, _ in got.edges())


def test_latent_mode_runs_and_validates():
    truth = random_temporal_dag(p=4, max_lag=1, density=0.4, seed=9)
    cfg = DiscoveryConfig(max_lag=1, max_cond_size=None, latent_mode=True)
    got = discover(None, cfg, truth=truth)
    got.validate(latent=True)


# ---- GCM-driven discovery ---------------------------------------------------


def chain_panel(seed=0, L=25, T_obs=80):
    truth = TemporalGraph(3, 1, var_names=["X", "Y", "Z"])
    truth.add_edge(N(0, 1), N(1, 0), EdgeMark.DIRECTED)
    truth.add_edge(N(1, 1), N(2, 0), EdgeMark.DIRECTED)
    spec = ScmSpec.linear_gaussian(truth, coefficient=0.7)
    panel, _ = generate_scm_panel(spec, n_locations=L, n_times=T_obs, seed=seed)
    return panel, truth


def test_gcm_discovery_recovers_lagged_chain():
    panel, truth = chain_panel()
    cfg = DiscoveryConfig(max_lag=1, regressor=LINEAR, spatial_proxy=False)
    got = discover(panel, cfg)
    assert got.has_edge(N(0, 1), N(1, 0))
    assert got.has_edge(N(1, 1), N(2, 0))


def test_determinism_across_worker_counts():
    panel, _ = chain_panel(seed=3, L=15, T_obs=50)
    jsons = []
    for workers in (1, 4):
        cfg = DiscoveryConfig(
            max_lag=1, regressor=LINEAR, spatial_proxy=False, worker_count=workers
        )
        jsons.append(discover(panel, cfg).to_json())
    assert jsons[0] == jsons[1]


def test_run_manifest_fields():
    panel, _ = chain_panel(seed=4, L=12, T_obs=40)
    cfg = DiscoveryConfig(max_lag=1, regressor=LINEAR, spatial_proxy=False)
    run = run_discovery(panel, cfg)
    assert run.phase_tests["lagged"] > 0
    assert run.phase_tests["contemporaneous"] > 0
    assert run.cache_stats is not None and run.cache_stats["hits"] > 0
    assert run.wall_time > 0


# ---- significance sweep -------------------------------------------------


def test_sweep_rejects_fewer_than_two_levels():
    panel, _ = chain_panel(seed=5, L=10, T_obs=30)
    with pytest.raises(ConfigError, match="2 distinct"):
        significance_sweep(panel, DiscoveryConfig(regressor=LINEAR), [0.05])


def test_sweep_strong_edges_persist_noise_does_not():
    truth = TemporalGraph(3, 1, var_names=["X", "Y", "Z"])
    truth.add_edge(N(0, 1), N(1, 0), EdgeMark.DIRECTED)
    spec = ScmSpec.linear_gaussian(truth, coefficient=1.0)
    panel, _ = generate_scm_panel(spec, n_locations=40, n_times=120, seed=6)
    cfg = DiscoveryConfig(max_lag=1, regressor=LINEAR, spatial_proxy=False)
    report = significance_sweep(panel, cfg, [0.1, 0.05, 0.01, 0.001])
    assert report.alphas == [0.1, 0.05, 0.01, 0.001]
    strong = [row for row, e in enumerate(report.edges) if e[0] == "X@t-1" and e[1] == "Y"]
    assert strong and report.persistence[strong[0]] == 1.0
    assert report.cache_stats["hit_rate"] > 0
    for row, edge in enumerate(report.edges):
        if edge[0] == "X@t-1" and edge[1] == "Y":
            continue
        assert report.persistence[row] <= 0.5  # noise edges die under stricter alphas


def test_sweep_notes_per_level_failures_and_continues(monkeypatch):
    panel, _ = chain_panel(seed=8, L=12, T_obs=40)
    cfg = DiscoveryConfig(max_lag=1, regressor=LINEAR, spatial_proxy=False)

    import stcausal.discovery as discovery_module

    real = discovery_module.run_discovery

    def flaky(panel, config, **kwargs):
        if config.alpha == 0.05:
            raise ConfigError("injected level failure")
        return real(panel, config, **kwargs)

    monkeypatch.setattr(discovery_module, "run_discovery", flaky)
    report = significance_sweep(panel, cfg, [0.1, 0.05, 0.01])
    assert list(report.failures) == [0.05]
    assert "injected" in report.failures[0.05]
    assert report.presence.shape[1] == 3  # failed level keeps its column


def test_candidate_ordering_strongest_first():
    from stcausal.discovery import _PairOutcome, _SkeletonState

    state = _SkeletonState()
    target = N(0, 0)
    weak, strong = N(1, 1), N(2, 1)
    state.absorb(_PairOutcome((weak, target), [(frozenset(), 0.2, 0.9)], False), alpha=0.05)
    state.absorb(_PairOutcome((strong, target), [(frozenset(), 3.0, 0.001)], False), alpha=0.05)
    ordered = state.order_candidates(target, N(3, 0), {weak, strong})
    assert ordered == [strong, weak]


def test_sweep_warm_cache_bitwise_identical():
    panel, _ = chain_panel(seed=7, L=12, T_obs=40)
    cfg = DiscoveryConfig(max_lag=1, regressor=LINEAR, spatial_proxy=False)
    cache = ResidualCache()
    cold = significance_sweep(panel, cfg, [0.1, 0.01], cache=cache)
    warm = significance_sweep(panel, cfg, [0.1, 0.01], cache=cache)
    assert cold.to_csv() == warm.to_csv()


def test_config_validation():
    with pytest.raises(ConfigError, match="alpha"):
        DiscoveryConfig(alpha=1.5)
    with pytest.raises(ConfigError, match="max_lag"):
        DiscoveryConfig(max_lag=-1)
    with pytest.raises(ConfigError, match="collider_rule"):
        DiscoveryConfig(collider_rule="wat")
    with pytest.raises(ConfigError, match="worker_count"):
        DiscoveryConfig(worker_count=0)


def test_config_round_trip():
    cfg = DiscoveryConfig(
        max_lag=2,
        alpha=0.01,
        max_cond_size=None,
        collider_rule="majority",
        latent_mode=True,
        spatial_proxy=False,
        regressor=RegressorSpec(kind="linear-ridge", penalty=0.5),
        worker_count=3,
        seed=42,
    )
    assert DiscoveryConfig.from_json_dict(cfg.to_json_dict()) == cfg

"""Generators: random truths, spatial fields, SCM and ABM panels, bias sampling."""

import numpy as np
import pytest
from scipy.stats import spearmanr

from stcausal import (
    AbmSpec,
    BiasPolicy,
    ConfigError,
    DiscoveryConfig,
    EdgeMark,
    LaggedNode,
    Mechanism,
    NoiseSpec,
    RegressorSpec,
    ScmSpec,
    SimulationError,
    SpatialFieldSpec,
    TemporalGraph,
    bias_sample,
    discover,
    generate_abm_panel,
    generate_scm_panel,
    random_temporal_dag,
    spatial_field,
)
from stcausal.errors import DataError
from stcausal.simulate import admissible_pair_count

N = LaggedNode


# ---- random truth graphs ------------------------------------------------


def test_random_dag_density_zero_empty():
    g = random_temporal_dag(4, 2, density=0.0, seed=0)
    assert g.n_edges() == 0


def test_random_dag_density_one_complete():
    g = random_temporal_dag(3, 0, density=1.0, seed=0)
    assert g.n_edges() == 3
    g.validate()


def test_random_dag_edge_count_binomial():
    density, p, T = 0.3, 3, 1
    admissible = admissible_pair_count(p, T)
    total = sum(random_temporal_dag(p, T, density, seed).n_edges() for seed in range(2000))
    expected = density * admissible * 2000
    sd = np.sqrt(2000 * admissible * density * (1 - density))
    assert abs(total - expected) < 4 * sd


def test_random_dag_deterministic():
    a = random_temporal_dag(4, 1, 0.5, seed=11)
    b = random_temporal_dag(4, 1, 0.5, seed=11)
    assert a == b


# ---- spatial field --------------------------------------------------------


def test_spatial_field_matches_documented_construction():
    """Single basis: recompute (center, weight) and check the plug-in ratio."""
    spec = SpatialFieldSpec(lengthscale=0.5, amplitude=2.0, n_centers=1)
    coords = np.array([[0.0, 0.0], [1.0, 1.0], [0.3, 0.7]])
    got = spatial_field(coords, spec, seed=42)

    rng = np.random.default_rng(42)
    center = rng.uniform(coords.min(axis=0), coords.max(axis=0), size=(1, 2))
    weight = rng.standard_normal(1)[0]
    d2 = np.sum((coords - center) ** 2, axis=1)
    want = 2.0 * weight * np.exp(-d2 / (2 * 0.5**2))
    assert np.allclose(got, want)
    # value decays to exp(-4.5) of the peak at distance 3 lengthscales
    assert np.isclose(np.exp(-4.5), 0.0111, atol=1e-4)


def test_spatial_field_correlation_decays_with_distance():
    rng = np.random.default_rng(0)
    coords = rng.uniform(size=(40, 2))
    spec = SpatialFieldSpec(lengthscale=0.3, amplitude=1.0, n_centers=30)
    fields = np.stack([spatial_field(coords, spec, seed=s) for s in range(300)])
    centered = fields - fields.mean(axis=0)
    cov = centered.T @ centered / 300
    sd = np.sqrt(np.diag(cov))
    corr = cov / np.outer(sd, sd)
    dist = np.linalg.norm(coords[:, None] - coords[None, :], axis=2)
    iu = np.triu_indices(40, k=1)
    bins = np.quantile(dist[iu], [0, 0.2, 0.4, 0.6, 0.8, 1.0])
    means = []
    for lo, hi in zip(bins[:-1], bins[1:]):
        mask = (dist[iu] >= lo) & (dist[iu] < hi + 1e-12)
        means.append(corr[iu][mask].mean())
    rho, _ = spearmanr(np.arange(len(means)), means)
    assert rho < 0


def test_spatial_field_zero_amplitude():
    coords = np.random.default_rng(1).uniform(size=(10, 2))
    spec = SpatialFieldSpec(lengthscale=0.5, amplitude=0.0, n_centers=5)
    assert np.allclose(spatial_field(coords, spec, seed=3), 0.0)


def test_spatial_field_normalize_sets_sd_to_amplitude():
    coords = np.random.default_rng(2).uniform(size=(60, 2))
    spec = SpatialFieldSpec(lengthscale=0.4, amplitude=1.7, n_centers=25, normalize=True)
    field = spatial_field(coords, spec, seed=5)
    assert np.isclose(np.std(field), 1.7)


# ---- SCM generation ------------------------------------------------------


def test_scm_no_edges_gives_uncorrelated_variables():
    truth = TemporalGraph(3, 0, var_names=["a", "b", "c"])
    spec = ScmSpec.linear_gaussian(truth)
    panel, _ = generate_scm_panel(spec, n_locations=10, n_times=200, seed=0)
    corr = np.corrcoef(panel.values.T)
    off = corr[np.triu_indices(3, k=1)]
    assert np.all(np.abs(off) < 0.1)


def test_scm_lagged_cross_correlation_matches_ar_calculation():
    """Y_t = 0.8 X_{t-1} + e: corr(X_{t-1}, Y_t) = 0.8 / sqrt(1.64)."""
    truth = TemporalGraph(2, 1, var_names=["X", "Y"])
    truth.add_edge(N(0, 1), N(1, 0), EdgeMark.DIRECTED)
    spec = ScmSpec.linear_gaussian(truth, coefficient=0.8, standardize_output=False)
    panel, _ = generate_scm_panel(spec, n_locations=20, n_times=500, seed=1)
    L, T_obs = 20, 500
    x = panel.values[:, 0].reshape(L, T_obs)
    y = panel.values[:, 1].reshape(L, T_obs)
    sample = np.corrcoef(x[:, :-1].ravel(), y[:, 1:].ravel())[0, 1]
    assert np.isclose(sample, 0.8 / np.sqrt(1 + 0.8**2), atol=0.02)


def test_scm_standardize_output_unit_variances():
    truth = random_temporal_dag(3, 1, 0.5, seed=2, var_names=["a", "b", "c"])
    spec = ScmSpec.linear_gaussian(truth, coefficient=0.4)
    panel, _ = generate_scm_panel(spec, n_locations=8, n_times=100, seed=3)
    assert np.allclose(panel.values.var(axis=0, ddof=1), 1.0, atol=1e-9)


def test_scm_deterministic_in_seed():
    truth = random_temporal_dag(3, 1, 0.5, seed=4)
    spec = ScmSpec.linear_gaussian(truth, coefficient=0.4)
    a, _ = generate_scm_panel(spec, n_locations=5, n_times=50, seed=9)
    b, _ = generate_scm_panel(spec, n_locations=5, n_times=50, seed=9)
    assert np.array_equal(a.values, b.values)
    assert a.locations == b.locations


def test_scm_divergence_error():
    truth = TemporalGraph(1, 1, var_names=["x"])
    truth.add_edge(N(0, 1), N(0, 0), EdgeMark.DIRECTED)
    spec = ScmSpec(
        truth=truth,
        mechanisms=(Mechanism("linear", ((N(0, 1), 3.0),)),),
        noise=(NoiseSpec("gaussian", 1.0),),
        standardize_output=False,
    )
    with pytest.raises(SimulationError, match="smaller coefficients"):
        generate_scm_panel(spec, n_locations=1, n_times=50, seed=0)


def test_scm_audit_rejects_mismatched_mechanisms():
    truth = TemporalGraph(2, 0, var_names=["a", "b"])
    truth.add_edge(N(0, 0), N(1, 0), EdgeMark.DIRECTED)
    with pytest.raises(ConfigError, match="truth parents"):
        ScmSpec(
            truth=truth,
            mechanisms=(Mechanism("linear", ()), Mechanism("linear", ())),
            noise=(NoiseSpec(), NoiseSpec()),
        )
    # a coefficient on an absent edge is equally rejected
    empty = TemporalGraph(2, 0, var_names=["a", "b"])
    with pytest.raises(ConfigError, match="truth parents"):
        ScmSpec(
            truth=empty,
            mechanisms=(Mechanism("linear", ()), Mechanism("linear", ((N(0, 0), 0.5),))),
            noise=(NoiseSpec(), NoiseSpec()),
        )


def test_fine_grained_confounder_warns_but_generates():
    truth = TemporalGraph(2, 0, var_names=["X", "Y"])
    spec = ScmSpec.linear_gaussian(
        truth,
        confounder=SpatialFieldSpec(lengthscale=1e-4, amplitude=1.0, n_centers=10),
        confounder_targets=("X", "Y"),
        standardize_output=False,
    )
    with pytest.warns(UserWarning, match="coarser"):
        panel, _ = generate_scm_panel(spec, n_locations=20, n_times=10, seed=0)
    assert panel.n_locations == 20


def test_scm_confounder_targets_share_field():
    truth = TemporalGraph(2, 0, var_names=["X", "Y"])
    spec = ScmSpec.linear_gaussian(
        truth,
        confounder=SpatialFieldSpec(lengthscale=0.5, amplitude=3.0, n_centers=20, normalize=True),
        confounder_targets=("X", "Y"),
        standardize_output=False,
    )
    panel, _ = generate_scm_panel(spec, n_locations=40, n_times=60, seed=7)
    # strong shared field makes the unlinked pair marginally correlated
    corr = np.corrcoef(panel.values[:, 0], panel.values[:, 1])[0, 1]
    assert corr > 0.5


def test_scm_spec_json_round_trip():
    truth = random_temporal_dag(3, 1, 0.5, seed=6, var_names=["u", "v", "w"])
    spec = ScmSpec.linear_gaussian(
        truth,
        coefficient=0.6,
        confounder=SpatialFieldSpec(lengthscale=0.4, amplitude=1.0, normalize=True),
        confounder_targets=("u", "w"),
    )
    back = ScmSpec.from_json_dict(spec.to_json_dict())
    assert back == spec


# ---- ABM generation ------------------------------------------------------


def test_abm_zero_agents_pure_logistic():
    spec = AbmSpec(grid=(2, 2), agent_count=0, burn_in=5)
    panel, truth = generate_abm_panel(spec, steps=30, seed=0)
    resource = panel.values[panel.n_times * 0 : panel.n_times * 1, 0]
    # closed-form iteration from K/2
    r = spec.capacity / 2.0
    trajectory = []
    for _ in range(30):
        r = r + spec.growth_rate * r * (1.0 - r / spec.capacity)
        trajectory.append(r)
    assert np.allclose(resource, trajectory[5:])
    assert np.allclose(panel.values[:, 2], 0.0)  # nothing consumed


def test_abm_zero_consumption_truth_decouples_agents_from_resource():
    spec = AbmSpec(consumption_rate=0.0)
    truth = spec.truth_graph()
    assert not truth.has_edge(N(0, 0), N(2, 0))
    assert not truth.has_edge(N(1, 0), N(2, 0))
    # no path from resource to agents in the influence diagram
    assert truth.parents(N(1, 0)) == [N(1, 1)]


def test_abm_extinction_error_names_step():
    spec = AbmSpec(grid=(2, 2), agent_count=4, consumption_rate=0.0, metabolic_cost=2.0,
                   initial_energy=3.0, burn_in=1)
    with pytest.raises(SimulationError, match=r"step \d+"):
        generate_abm_panel(spec, steps=50, seed=1)


def test_abm_deterministic_and_balanced():
    spec = AbmSpec(grid=(3, 2), agent_count=20, burn_in=20)
    a, truth = generate_abm_panel(spec, steps=60, seed=5)
    b, _ = generate_abm_panel(spec, steps=60, seed=5)
    assert np.array_equal(a.values, b.values)
    assert a.n_locations == 6 and a.n_times == 40
    truth.validate()


def test_abm_discovery_recovers_resource_to_consumption():
    """Majority of seeds recover the resource -> consumption adjacency."""
    spec = AbmSpec()
    cfg = DiscoveryConfig(
        max_lag=1,
        regressor=RegressorSpec(kind="linear-ridge", penalty="loocv"),
        spatial_proxy=False,
        alpha=0.05,
    )
    hits = 0
    n_seeds = 20
    for seed in range(n_seeds):
        panel, truth = generate_abm_panel(spec, steps=2000, seed=seed)
        got = discover(panel, cfg)
        if got.has_edge(N(0, 0), N(2, 0)):
            hits += 1
    assert hits > n_seeds // 2


# ---- sampling bias --------------------------------------------------------


def grid_panel(L=10, T_obs=12, seed=0):
    truth = TemporalGraph(2, 0, var_names=["X", "Y"])
    spec = ScmSpec.linear_gaussian(truth, standardize_output=False)
    panel, _ = generate_scm_panel(spec, n_locations=L, n_times=T_obs, seed=seed)
    return panel


def test_bias_uniform_full_fraction_is_identity():
    panel = grid_panel()
    assert bias_sample(panel, BiasPolicy("uniform", 1.0), seed=0) is panel


def test_bias_top_fraction_by_variable():
    panel = grid_panel(L=10)
    out = bias_sample(panel, BiasPolicy("top-by-variable", 0.5, variable="X"), seed=0)
    assert out.n_locations == 5
    means = {
        loc.id: panel.values[li * panel.n_times : (li + 1) * panel.n_times, 0].mean()
        for li, loc in enumerate(panel.locations)
    }
    top5 = sorted(means, key=lambda k: -means[k])[:5]
    assert sorted(loc.id for loc in out.locations) == sorted(top5)


def test_bias_empty_subset_errors():
    panel = grid_panel(L=3)
    with pytest.raises(DataError, match="no locations"):
        bias_sample(panel, BiasPolicy("uniform", 0.1), seed=0)


def test_bias_sensitivity_experiment_runs():
    """Biased vs uniform sampling: false-edge rates are produced, no threshold."""
    truth = TemporalGraph(2, 0, var_names=["X", "Y"])
    spec = ScmSpec.linear_gaussian(
        truth,
        confounder=SpatialFieldSpec(lengthscale=0.5, amplitude=1.0, n_centers=25, normalize=True),
        confounder_targets=("X", "Y"),
    )
    cfg = DiscoveryConfig(
        max_lag=0,
        spatial_proxy=True,
        regressor=RegressorSpec(kind="kernel-ridge", penalty=1e-3),
    )
    rates = {}
    for label, policy in [("uniform", BiasPolicy("uniform", 1.0)),
                          ("biased", BiasPolicy("top-by-variable", 0.5, variable="X"))]:
        false_edges = 0
        for seed in range(10):
            panel, _ = generate_scm_panel(spec, n_locations=30, n_times=40, seed=seed)
            sub = bias_sample(panel, policy, seed=seed)
            got = discover(sub, cfg)
            false_edges += got.n_edges() > 0
        rates[label] = false_edges / 10
    assert set(rates) == {"uniform", "biased"}
    assert all(0.0 <= r <= 1.0 for r in rates.values())

"""Synthetic spatiotemporal panels with known ground-truth graphs.

Three generators: a structural-causal-model simulator whose optional
latent confounder is a smooth function of space only (constant in time), a
small fixed-rule resource/consumer agent model on a grid whose noise comes
from agent behavior rather than additive terms, and a location-subsampling
transform for probing sensitivity to biased site selection.

All generators are pure functions of (spec, seed): repeated calls are
bit-identical. Standardized output defeats the marginal-variance ordering
that additive-noise simulation otherwise leaks to discovery algorithms.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, DataError, SimulationError
from .graphs import EdgeMark, TemporalGraph
from .panel import LaggedNode, LocationRecord, SpatialPanel
from .panel import standardize as standardize_panel

MECHANISM_KINDS = ("linear", "tanh", "quadratic")
NOISE_KINDS = ("gaussian", "uniform", "laplace")

_DIVERGENCE_LIMIT = 1e6


@dataclass(frozen=True)
class NoiseSpec:
    """Zero-mean noise with standard deviation `scale`."""

    kind: str = "gaussian"
    scale: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in NOISE_KINDS:
            raise ConfigError(f"unknown noise kind {self.kind!r}")
        if self.scale < 0:
            raise ConfigError("noise scale must be >= 0")

    def draw(self, rng: np.random.Generator, size: int) -> np.ndarray:
        if self.kind == "gaussian":
            return rng.normal(0.0, self.scale, size)
        if self.kind == "uniform":
            half = self.scale * np.sqrt(3.0)
            return rng.uniform(-half, half, size)
        return rng.laplace(0.0, self.scale / np.sqrt(2.0), size)


@dataclass(frozen=True)
class Mechanism:
    """Per-variable response to its parents: sum of per-parent terms.

    linear: c * x; tanh: c * tanh(x); quadratic: c * x^2. Absent edges have
    no coefficient at all, so their partial effect is exactly zero.
    """

    kind: str = "linear"
    coefficients: tuple[tuple[LaggedNode, float], ...] = ()

    def __post_init__(self) -> None:
        if self.kind not in MECHANISM_KINDS:
            raise ConfigError(f"unknown mechanism kind {self.kind!r}")

    def coefficient_map(self) -> dict[LaggedNode, float]:
        return dict(self.coefficients)


@dataclass(frozen=True)
class SpatialFieldSpec:
    """Low-rank RBF mixture field: amplitude * sum_m w_m exp(-|s-c_m|^2 / 2l^2).

    Weights are seeded standard normals; centers are sampled uniformly over
    the coordinate bounding box. With normalize on, the mixture is rescaled
    (not centered) so its across-location standard deviation equals
    amplitude exactly, which makes amplitude directly comparable to a noise
    standard deviation.
    """

    lengthscale: float
    amplitude: float
    n_centers: int = 50
    normalize: bool = False

    def __post_init__(self) -> None:
        if self.lengthscale <= 0:
            raise ConfigError("field lengthscale must be > 0")
        if self.amplitude < 0:
            raise ConfigError("field amplitude must be >= 0")
        if self.n_centers < 1:
            raise ConfigError("field needs at least one basis center")


@dataclass(frozen=True)
class ScmSpec:
    """Ground-truth generative description for SCM benchmarking.

    confounder_targets name the variables that share the latent spatial
    field; the field never appears as a direct mechanism term between
    system variables, so confounded scenarios are genuinely confounder-only.
    """

    truth: TemporalGraph
    mechanisms: tuple[Mechanism, ...]
    noise: tuple[NoiseSpec, ...]
    confounder: SpatialFieldSpec | None = None
    confounder_targets: tuple[str, ...] = ()
    standardize_output: bool = True

    def __post_init__(self) -> None:
        p = self.truth.n_variables
        if len(self.mechanisms) != p or len(self.noise) != p:
            raise ConfigError("need one mechanism and one noise spec per variable")
        for name in self.confounder_targets:
            if name not in self.variable_names():
                raise ConfigError(f"confounder target {name!r} is not a variable")
        if self.confounder_targets and self.confounder is None:
            raise ConfigError("confounder targets given without a field spec")
        self.audit()

    def variable_names(self) -> list[str]:
        if self.truth.var_names is not None:
            return list(self.truth.var_names)
        return [f"v{k}" for k in range(self.truth.n_variables)]

    def audit(self) -> None:
        """Check mechanisms reference exactly the truth parents, nothing else."""
        self.truth.validate()
        if not self.truth.is_fully_directed():
            raise ConfigError("truth graph must be fully directed")
        for var in range(self.truth.n_variables):
            declared = set(self.mechanisms[var].coefficient_map())
            actual = set(self.truth.parents(LaggedNode(var, 0)))
            if declared != actual:
                raise ConfigError(
                    f"mechanism of variable {var} references {sorted(declared)} "
                    f"but truth parents are {sorted(actual)}"
                )
            for node, coef in self.mechanisms[var].coefficients:
                if not np.isfinite(coef):
                    raise ConfigError(f"non-finite coefficient on {node} -> variable {var}")
                if coef == 0.0:
                    raise ConfigError(
                        f"zero coefficient on {node} -> variable {var}; drop the edge instead"
                    )

    @classmethod
    def linear_gaussian(
        cls,
        truth: TemporalGraph,
        coefficient: float = 0.7,
        noise_scale: float = 1.0,
        confounder: SpatialFieldSpec | None = None,
        confounder_targets: Iterable[str] = (),
        standardize_output: bool = True,
    ) -> "ScmSpec":
        """Convenience spec: every truth edge gets the same linear coefficient."""
        mechanisms = []
        for var in range(truth.n_variables):
            parents = truth.parents(LaggedNode(var, 0))
            mechanisms.append(
                Mechanism("linear", tuple((p, coefficient) for p in parents))
            )
        noise = tuple(NoiseSpec("gaussian", noise_scale) for _ in range(truth.n_variables))
        return cls(
            truth=truth,
            mechanisms=tuple(mechanisms),
            noise=noise,
            confounder=confounder,
            confounder_targets=tuple(confounder_targets),
            standardize_output=standardize_output,
        )

    def to_json_dict(self) -> dict:
        names = self.variable_names()
        payload = {
            "kind": "scm",
            "truth": self.truth.to_json_dict(),
            "mechanisms": [
                {
                    "variable": names[var],
                    "kind": mech.kind,
                    "coefficients": [
                        {"var": names[node.variable], "lag": node.lag, "coef": coef}
                        for node, coef in mech.coefficients
                    ],
                }
                for var, mech in enumerate(self.mechanisms)
            ],
            "noise": [
                {"variable": names[var], "kind": nz.kind, "scale": nz.scale}
                for var, nz in enumerate(self.noise)
            ],
            "standardize_output": self.standardize_output,
        }
        if self.confounder is not None:
            payload["confounder"] = {
                "lengthscale": self.confounder.lengthscale,
                "amplitude": self.confounder.amplitude,
                "n_centers": self.confounder.n_centers,
                "normalize": self.confounder.normalize,
                "targets": list(self.confounder_targets),
            }
        return payload

    @classmethod
    def from_json_dict(cls, payload: dict) -> "ScmSpec":
        truth = TemporalGraph.from_json_dict(payload["truth"])
        names = truth.var_names or [f"v{k}" for k in range(truth.n_variables)]
        index = {name: k for k, name in enumerate(names)}
        mechanisms = [Mechanism("linear", ()) for _ in names]
        for entry in payload.get("mechanisms", []):
            var = index[entry["variable"]]
            coefs = tuple(
                (LaggedNode(index[c["var"]], int(c["lag"])), float(c["coef"]))
                for c in entry.get("coefficients", [])
            )
            mechanisms[var] = Mechanism(entry.get("kind", "linear"), coefs)
        noise = [NoiseSpec() for _ in names]
        for entry in payload.get("noise", []):
            noise[index[entry["variable"]]] = NoiseSpec(
                entry.get("kind", "gaussian"), float(entry.get("scale", 1.0))
            )
        confounder = None
        targets: tuple[str, ...] = ()
        if "confounder" in payload:
            c = payload["confounder"]
            confounder = SpatialFieldSpec(
                lengthscale=float(c["lengthscale"]),
                amplitude=float(c["amplitude"]),
                n_centers=int(c.get("n_centers", 50)),
                normalize=bool(c.get("normalize", False)),
            )
            targets = tuple(c.get("targets", ()))
        return cls(
            truth=truth,
            mechanisms=tuple(mechanisms),
            noise=tuple(noise),
            confounder=confounder,
            confounder_targets=targets,
            standardize_output=bool(payload.get("standardize_output", True)),
        )


# ---- random truth graphs -----------------------------------------------


def random_temporal_dag(
    p: int, max_lag: int, density: float, seed: int, var_names: Sequence[str] | None = None
) -> TemporalGraph:
    """Independent edge inclusion at `density` over all admissible pairs.

    Admissible pairs are lagged-to-present ((i, tau) -> (j, 0), any i, j,
    tau in 1..max_lag) and contemporaneous pairs ordered by a seeded random
    topological order, which keeps the lag-0 subgraph acyclic.
    """
    if not 0.0 <= density <= 1.0:
        raise ConfigError("density must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    g = TemporalGraph(p, max_lag, var_names=var_names)
    order = rng.permutation(p)
    for a in range(p):
        for b in range(a + 1, p):
            if rng.random() < density:
                g.add_edge(
                    LaggedNode(int(order[a]), 0), LaggedNode(int(order[b]), 0), EdgeMark.DIRECTED
                )
    for tau in range(1, max_lag + 1):
        for i in range(p):
            for j in range(p):
                if rng.random() < density:
                    g.add_edge(LaggedNode(i, tau), LaggedNode(j, 0), EdgeMark.DIRECTED)
    return g


def admissible_pair_count(p: int, max_lag: int) -> int:
    return max_lag * p * p + p * (p - 1) // 2


# ---- spatial random field ---------------------------------------------------


def spatial_field(coords: np.ndarray, spec: SpatialFieldSpec, seed) -> np.ndarray:
    """Evaluate a seeded low-rank RBF mixture at each location.

    Deterministic in (coords, spec, seed). Returns one value per location.
    """
    coords = np.asarray(coords, dtype=float)
    if coords.ndim != 2 or coords.shape[0] < 1 or coords.shape[1] != 2:
        raise ConfigError("coords must be an (L, 2) array with L >= 1")
    rng = np.random.default_rng(seed)
    lo, hi = coords.min(axis=0), coords.max(axis=0)
    centers = rng.uniform(lo, hi, size=(spec.n_centers, 2))
    weights = rng.standard_normal(spec.n_centers)
    diff = coords[:, None, :] - centers[None, :, :]
    sq = np.sum(diff * diff, axis=2)
    basis = np.exp(-sq / (2.0 * spec.lengthscale**2))
    raw = basis @ weights
    if spec.normalize:
        sd = float(np.std(raw)) if raw.size > 1 else 0.0
        if sd > 0:
            raw = raw / sd
    return spec.amplitude * raw


def median_nn_spacing(coords: np.ndarray) -> float:
    """Median nearest-neighbor distance; the natural inter-location spacing."""
    coords = np.asarray(coords, dtype=float)
    if coords.shape[0] < 2:
        raise ConfigError("need at least 2 locations")
    diff = coords[:, None, :] - coords[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=2))
    np.fill_diagonal(dist, np.inf)
    return float(np.median(dist.min(axis=1)))


# ---- SCM panel generation ------------------------------------------------


def generate_scm_panel(
    spec: ScmSpec,
    n_locations: int,
    n_times: int,
    seed: int,
    coords: np.ndarray | None = None,
) -> tuple[SpatialPanel, TemporalGraph]:
    """Simulate the SCM at each location and return (panel, truth).

    Locations share one mechanism set (the latent-mechanism premise); the
    optional confounder field enters targeted variables additively and is
    constant over time at each site. A burn-in of max(100, 10 * max_lag)
    steps is discarded before recording. Per-location noise streams are
    derived from the master seed, so results do not depend on evaluation
    order.
    """
    if n_locations < 1 or n_times < 1:
        raise ConfigError("need n_locations >= 1 and n_times >= 1")
    spec.audit()
    names = spec.variable_names()
    p = spec.truth.n_variables
    root = np.random.SeedSequence(seed)
    ss_coords, ss_field, ss_sim = root.spawn(3)
    if coords is None:
        coords = np.random.default_rng(ss_coords).uniform(0.0, 1.0, size=(n_locations, 2))
    else:
        coords = np.asarray(coords, dtype=float)
        if coords.shape != (n_locations, 2):
            raise ConfigError("coords must have shape (n_locations, 2)")

    field_values = np.zeros(n_locations)
    target_idx: list[int] = []
    if spec.confounder is not None and spec.confounder_targets:
        if n_locations >= 2:
            spacing = median_nn_spacing(coords)
            if spec.confounder.lengthscale <= spacing:
                warnings.warn(
                    f"confounder lengthscale {spec.confounder.lengthscale:g} is not "
                    f"coarser than the inter-location spacing {spacing:g}; such a "
                    "field cannot be separated from location-level noise",
                    stacklevel=2,
                )
        field_values = spatial_field(coords, spec.confounder, ss_field)
        target_idx = [names.index(t) for t in spec.confounder_targets]

    burn_in = max(100, 10 * spec.truth.max_lag)
    total = burn_in + n_times
    order = spec.truth.lag0_topological_order()
    parent_lists = [spec.mechanisms[v].coefficients for v in range(p)]

    loc_seeds = ss_sim.spawn(n_locations)
    values = np.empty((n_locations * n_times, p))
    for li in range(n_locations):
        rng = np.random.default_rng(loc_seeds[li])
        noise = np.column_stack([spec.noise[v].draw(rng, total) for v in range(p)])
        x = np.zeros((total, p))
        for t in range(total):
            for v in order:
                acc = 0.0
                for node, coef in parent_lists[v]:
                    ts = t - node.lag
                    parent_value = x[ts, node.variable] if ts >= 0 else 0.0
                    if spec.mechanisms[v].kind == "linear":
                        acc += coef * parent_value
                    elif spec.mechanisms[v].kind == "tanh":
                        acc += coef * float(np.tanh(parent_value))
                    else:
                        acc += coef * parent_value * parent_value
                if v in target_idx:
                    acc += field_values[li]
                x[t, v] = acc + noise[t, v]
                if abs(x[t, v]) > _DIVERGENCE_LIMIT:
                    raise SimulationError(
                        f"trajectory diverged at location {li}, step {t} "
                        f"(|value| > {_DIVERGENCE_LIMIT:g}); use smaller coefficients"
                    )
        values[li * n_times : (li + 1) * n_times] = x[burn_in:]

    width = max(3, len(str(n_locations - 1)))
    locations = [
        LocationRecord(f"loc{li:0{width}d}", (float(coords[li, 0]), float(coords[li, 1])))
        for li in range(n_locations)
    ]
    panel = SpatialPanel(
        locations=locations,
        times=np.arange(n_times),
        variables=names,
        values=values,
        missing=np.zeros_like(values, dtype=bool),
    )
    if spec.standardize_output:
        panel = standardize_panel(panel)
    return panel, spec.truth


# ---- agent-based generator ---------------------------------------------


@dataclass(frozen=True)
class AbmSpec:
    """Fixed resource/consumer rules on a torus grid.

    Each step: resources grow logistically per cell; agents move to a
    random neighboring cell (or stay); each cell's agents consume up to
    consumption_rate units each, jointly capped at max_harvest_fraction of
    the local stock (ungrazeable refuge, which keeps the dynamics
    persistent); energy rises with intake and falls by metabolic_cost;
    agents at or below zero energy die and agents above
    reproduce_threshold split off a child with probability reproduce_prob.
    Recorded per cell per step: resource stock (post-growth), agent count
    (post-move), and amount consumed.
    """

    grid: tuple[int, int] = (4, 4)
    agent_count: int = 48
    growth_rate: float = 1.0
    capacity: float = 10.0
    consumption_rate: float = 0.5
    max_harvest_fraction: float = 0.5
    metabolic_cost: float = 0.25
    reproduce_threshold: float = 8.0
    reproduce_prob: float = 0.5
    initial_energy: float = 4.0
    burn_in: int = 100

    VARIABLES = ("resource", "agents", "consumption")

    def __post_init__(self) -> None:
        w, h = self.grid
        if w < 1 or h < 1:
            raise ConfigError("grid dimensions must be >= 1")
        for name in (
            "growth_rate",
            "capacity",
            "consumption_rate",
            "metabolic_cost",
            "reproduce_threshold",
            "reproduce_prob",
            "initial_energy",
        ):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if not 0.0 < self.max_harvest_fraction <= 1.0:
            raise ConfigError("max_harvest_fraction must lie in (0, 1]")
        if self.agent_count < 0:
            raise ConfigError("agent_count must be >= 0")

    def truth_graph(self) -> TemporalGraph:
        """Influence diagram implied by the rules (edges gated on the rates)."""
        g = TemporalGraph(3, 1, var_names=list(self.VARIABLES))
        res, agents, cons = LaggedNode(0, 0), LaggedNode(1, 0), LaggedNode(2, 0)
        g.add_edge(LaggedNode(0, 1), res, EdgeMark.DIRECTED)  # stock persists
        g.add_edge(LaggedNode(1, 1), agents, EdgeMark.DIRECTED)  # population persists
        if self.consumption_rate > 0:
            g.add_edge(res, cons, EdgeMark.DIRECTED)
            g.add_edge(agents, cons, EdgeMark.DIRECTED)
            g.add_edge(LaggedNode(2, 1), res, EdgeMark.DIRECTED)  # eaten stock is gone
            g.add_edge(LaggedNode(2, 1), agents, EdgeMark.DIRECTED)  # intake drives energy
        return g

    def to_json_dict(self) -> dict:
        return {
            "kind": "abm",
            "grid": list(self.grid),
            "agent_count": self.agent_count,
            "growth_rate": self.growth_rate,
            "capacity": self.capacity,
            "consumption_rate": self.consumption_rate,
            "max_harvest_fraction": self.max_harvest_fraction,
            "metabolic_cost": self.metabolic_cost,
            "reproduce_threshold": self.reproduce_threshold,
            "reproduce_prob": self.reproduce_prob,
            "initial_energy": self.initial_energy,
            "burn_in": self.burn_in,
        }

    @classmethod
    def from_json_dict(cls, payload: dict) -> "AbmSpec":
        kwargs = {k: v for k, v in payload.items() if k != "kind"}
        if "grid" in kwargs:
            kwargs["grid"] = tuple(kwargs["grid"])
        return cls(**kwargs)


def generate_abm_panel(
    spec: AbmSpec, steps: int, seed: int
) -> tuple[SpatialPanel, TemporalGraph]:
    """Run the agent model and return (panel, rule-implied truth graph).

    Cells are the panel locations (centroid coordinates); steps after the
    burn-in are recorded. Raises when every agent dies before the run ends.
    """
    if steps <= spec.burn_in:
        raise ConfigError(f"steps ({steps}) must exceed burn_in ({spec.burn_in})")
    rng = np.random.default_rng(seed)
    w, h = spec.grid
    n_cells = w * h
    resource = np.full(n_cells, spec.capacity / 2.0)
    # agent state: cell index and energy, kept in parallel lists
    cells = list(rng.integers(0, n_cells, size=spec.agent_count))
    energy = [spec.initial_energy] * spec.agent_count

    n_record = steps - spec.burn_in
    recorded = np.empty((n_cells, n_record, 3))

    def neighbors(cell: int) -> list[int]:
        cx, cy = cell % w, cell // w
        out = [cell]
        for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            out.append(((cy + dy) % h) * w + ((cx + dx) % w))
        return out

    for step in range(steps):
        # growth
        resource += spec.growth_rate * resource * (1.0 - resource / spec.capacity)
        np.maximum(resource, 0.0, out=resource)
        stock = resource.copy()
        # movement
        if cells:
            cells = [neighbors(c)[rng.integers(0, 5)] for c in cells]
        counts = np.bincount(cells, minlength=n_cells).astype(float) if cells else np.zeros(n_cells)
        # consumption, capped by the ungrazeable refuge fraction
        demand = spec.consumption_rate * counts
        eaten = np.minimum(spec.max_harvest_fraction * stock, demand)
        resource -= eaten
        # energy update, deaths, reproduction
        if cells:
            share = np.zeros(n_cells)
            occupied = counts > 0
            share[occupied] = eaten[occupied] / counts[occupied]
            next_cells: list[int] = []
            next_energy: list[float] = []
            for c, e in zip(cells, energy):
                e = e + share[c] - spec.metabolic_cost
                if e <= 0:
                    continue
                if e >= spec.reproduce_threshold and rng.random() < spec.reproduce_prob:
                    next_cells.extend((c, c))
                    next_energy.extend((e / 2.0, e / 2.0))
                else:
                    next_cells.append(c)
                    next_energy.append(e)
            cells, energy = next_cells, next_energy
            if spec.agent_count > 0 and not cells:
                raise SimulationError(f"all agents died at step {step}")
        if step >= spec.burn_in:
            t = step - spec.burn_in
            recorded[:, t, 0] = stock
            recorded[:, t, 1] = counts
            recorded[:, t, 2] = eaten

    pad = max(2, len(str(max(w, h) - 1)))
    locations = []
    for cell in range(n_cells):
        cx, cy = cell % w, cell // w
        locations.append(
            LocationRecord(f"cell{cx:0{pad}d}_{cy:0{pad}d}", (cx + 0.5, cy + 0.5))
        )
    order = sorted(range(n_cells), key=lambda c: locations[c].id)
    values = np.concatenate([recorded[c] for c in order], axis=0)
    panel = SpatialPanel(
        locations=[locations[c] for c in order],
        times=np.arange(n_record),
        variables=list(spec.VARIABLES),
        values=values,
        missing=np.zeros_like(values, dtype=bool),
    )
    return panel, spec.truth_graph()


# ---- sampling-bias injection ------------------------------------------------


@dataclass(frozen=True)
class BiasPolicy:
    """Location-retention policy: uniform(q) or keep-top-fraction-by-variable."""

    kind: str
    fraction: float
    variable: str | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("uniform", "top-by-variable"):
            raise ConfigError(f"unknown bias policy {self.kind!r}")
        if not 0.0 < self.fraction <= 1.0:
            raise ConfigError("fraction must lie in (0, 1]")
        if self.kind == "top-by-variable" and not self.variable:
            raise ConfigError("top-by-variable policy needs a variable name")


def bias_sample(panel: SpatialPanel, policy: BiasPolicy, seed: int) -> SpatialPanel:
    """Retain a location subset; uniform(1.0) is the identity."""
    L = panel.n_locations
    if policy.kind == "uniform" and policy.fraction == 1.0:
        return panel
    keep_count = int(np.floor(policy.fraction * L + 1e-9))
    if keep_count < 1:
        raise DataError(
            f"policy retains no locations (fraction {policy.fraction}, L={L})"
        )
    if policy.kind == "uniform":
        rng = np.random.default_rng(seed)
        chosen = sorted(rng.choice(L, size=keep_count, replace=False).tolist())
    else:
        var = panel.var_index(policy.variable)
        T_obs = panel.n_times
        means = []
        for li in range(L):
            block = panel.values[li * T_obs : (li + 1) * T_obs, var]
            mask = panel.missing[li * T_obs : (li + 1) * T_obs, var]
            obs = block[~mask]
            means.append(float(np.mean(obs)) if obs.size else -np.inf)
        ranked = sorted(range(L), key=lambda li: (-means[li], panel.locations[li].id))
        chosen = sorted(ranked[:keep_count])

    T_obs = panel.n_times
    rows = np.concatenate([np.arange(li * T_obs, (li + 1) * T_obs) for li in chosen])
    return SpatialPanel(
        locations=[panel.locations[li] for li in chosen],
        times=panel.times.copy(),
        variables=list(panel.variables),
        values=panel.values[rows],
        missing=panel.missing[rows],
    )

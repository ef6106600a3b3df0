"""Command-line entry point: discover | simulate | sweep | evaluate.

Every run writes a manifest (config echo, seed, input content hash) that
suffices to reproduce it byte-for-byte. Exit codes are stable API:
0 success, 2 configuration error, 3 data error, 4 runtime failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

from .citest import ResidualCache, TraceWriter
from .discovery import DiscoveryConfig, run_discovery, significance_sweep
from .errors import ConfigError, DataError, StcausalError
from .graphs import TemporalGraph
from .metrics import adjacency_scores, edge_differences, random_edge_baseline
from .panel import load_panel, save_panel
from .simulate import AbmSpec, ScmSpec, generate_abm_panel, generate_scm_panel

log = logging.getLogger("stcausal")


def _sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _read_json(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as handle:
            return json.load(handle)
    except FileNotFoundError:
        raise ConfigError(f"file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _build_config(args: argparse.Namespace) -> tuple[DiscoveryConfig, dict]:
    """Merge the config file (if any) with command-line overrides."""
    payload: dict = {}
    if args.config:
        payload = _read_json(args.config)
    overrides = {
        "alpha": args.alpha,
        "max_lag": args.max_lag,
        "worker_count": args.workers,
        "seed": args.seed,
    }
    for key, value in overrides.items():
        if value is not None:
            payload[key] = value
    if getattr(args, "latent", False):
        payload["latent_mode"] = True
    if getattr(args, "no_spatial_proxy", False):
        payload["spatial_proxy"] = False
    extras = {k: payload.pop(k) for k in ("alphas", "schema") if k in payload}
    try:
        config = DiscoveryConfig.from_json_dict(payload)
    except (TypeError, ConfigError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from None
    return config, extras


def _load_panel_arg(args: argparse.Namespace, extras: dict):
    if not args.panel:
        raise ConfigError("--panel is required")
    return load_panel(args.panel, schema=extras.get("schema"))


def _out_dir(args: argparse.Namespace) -> Path:
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_discover(args: argparse.Namespace) -> int:
    config, extras = _build_config(args)
    panel = _load_panel_arg(args, extras)
    out = _out_dir(args)
    if args.dump_panel:
        save_panel(panel, str(out / "panel_echo.csv"))

    trace = None
    trace_handle = None
    if args.trace_tests:
        trace_handle = open(out / "tests.csv", "w", encoding="utf-8")
        trace = TraceWriter(trace_handle)
    try:
        run = run_discovery(panel, config, trace=trace)
    finally:
        if trace_handle is not None:
            trace_handle.close()

    (out / "graph.json").write_text(run.graph.to_json(), encoding="utf-8")
    (out / "graph.dot").write_text(run.graph.to_dot(), encoding="utf-8")
    manifest = {
        "command": "discover",
        "config": config.to_json_dict(),
        "panel_path": args.panel,
        "panel_sha256": _sha256_file(args.panel),
        "phase_tests": run.phase_tests,
        "cache": run.cache_stats,
        "conflicts": [c.to_json_dict(panel.variables) for c in run.conflicts],
        "wall_time_s": run.wall_time,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    _write_json(out / "manifest.json", manifest)
    log.info("discover: %d edges, %s tests, %.2fs", run.graph.n_edges(), run.phase_tests, run.wall_time)
    return 0


def cmd_simulate(args: argparse.Namespace) -> int:
    payload = _read_json(args.spec)
    kind = payload.get("kind")
    try:
        if kind == "scm":
            spec = ScmSpec.from_json_dict(payload)
            if args.locations is None or args.times is None:
                raise ConfigError("scm simulation needs --locations and --times")
            panel, truth = generate_scm_panel(
                spec, args.locations, args.times, args.seed or 0
            )
        elif kind == "abm":
            spec = AbmSpec.from_json_dict(payload)
            if args.steps is None:
                raise ConfigError("abm simulation needs --steps")
            panel, truth = generate_abm_panel(spec, args.steps, args.seed or 0)
        else:
            raise ConfigError(f'spec "kind" must be "scm" or "abm", got {kind!r}')
    except (StcausalError, TypeError, KeyError, ValueError) as exc:
        if isinstance(exc, DataError):
            raise
        raise ConfigError(f"invalid simulation spec: {exc}") from exc

    out = _out_dir(args)
    save_panel(panel, str(out / "panel.csv"))
    (out / "truth.json").write_text(truth.to_json(), encoding="utf-8")
    manifest = {
        "command": "simulate",
        "spec": payload,
        "seed": args.seed or 0,
        "locations": panel.n_locations,
        "times": panel.n_times,
        "variables": panel.variables,
    }
    _write_json(out / "manifest.json", manifest)
    log.info("simulate: wrote %s rows", panel.n_locations * panel.n_times)
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    config, extras = _build_config(args)
    alphas = extras.get("alphas")
    if args.alphas:
        alphas = [float(a) for a in args.alphas.split(",") if a.strip()]
    if not alphas:
        raise ConfigError("sweep needs significance levels (--alphas or config `alphas`)")
    if len(set(alphas)) != len(alphas):
        raise ConfigError(f"duplicate significance levels in {alphas}")
    panel = _load_panel_arg(args, extras)
    out = _out_dir(args)

    cache = ResidualCache(config.cache_bytes)
    report = significance_sweep(panel, config, alphas, cache=cache)
    (out / "sweep.csv").write_text(report.to_csv(), encoding="utf-8")
    manifest = {
        "command": "sweep",
        "config": config.to_json_dict(),
        "alphas": report.alphas,
        "panel_path": args.panel,
        "panel_sha256": _sha256_file(args.panel),
        "cache": report.cache_stats,
        "failures": {f"{a:g}": msg for a, msg in report.failures.items()},
    }
    _write_json(out / "manifest.json", manifest)
    log.info("sweep: %d edges over %d levels", len(report.edges), len(report.alphas))
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    est = TemporalGraph.from_json(Path(args.estimated).read_text(encoding="utf-8"))
    truth = TemporalGraph.from_json(Path(args.truth).read_text(encoding="utf-8"))
    out = _out_dir(args)

    score = adjacency_scores(est, truth)
    baseline = random_edge_baseline(est, truth, n_draws=args.draws, seed=args.seed or 0)
    diffs = edge_differences(est, truth)

    report = {
        "command": "evaluate",
        "estimated_path": args.estimated,
        "truth_path": args.truth,
        "score": score.to_json_dict(),
        "baseline": baseline.to_json_dict(),
        "baseline_draws_seed": args.seed or 0,
    }
    _write_json(out / "report.json", report)
    columns = ["status", "from", "to", "mark", "estimated_mark", "estimated_direction", "true_edge"]
    lines = [",".join(columns)]
    for row in diffs:
        lines.append(",".join(str(row.get(c, "")) for c in columns))
    (out / "differences.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    log.info(
        "evaluate: f1=%.3f orientation=%.3f shd=%d baseline p=%.4f",
        score.f1, score.orientation, score.shd, baseline.p_value,
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="stcausal",
        description="Causal structure learning for spatially replicated time series",
    )
    parser.add_argument("--verbose", action="store_true", help="chatty logging to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--panel", help="panel CSV path")
        p.add_argument("--out", help="output directory (default: cwd)")
        p.add_argument("--alpha", type=float, help="significance level override")
        p.add_argument("--max-lag", dest="max_lag", type=int, help="maximum lag override")
        p.add_argument("--workers", type=int, help="worker thread count")
        p.add_argument("--seed", type=int, help="run seed")
        p.add_argument("--latent", action="store_true", help="latent (marked-edge) mode")
        p.add_argument(
            "--no-spatial-proxy",
            dest="no_spatial_proxy",
            action="store_true",
            help="drop coordinates from the approximating regressions",
        )

    p_discover = sub.add_parser("discover", help="estimate a temporal causal graph")
    add_common(p_discover)
    p_discover.add_argument(
        "--trace-tests",
        dest="trace_tests",
        action="store_true",
        help="stream per-test audit lines to tests.csv",
    )
    p_discover.add_argument(
        "--dump-panel",
        dest="dump_panel",
        action="store_true",
        help="echo the parsed panel back as panel_echo.csv (debug)",
    )
    p_discover.set_defaults(func=cmd_discover)

    p_sim = sub.add_parser("simulate", help="generate a panel from an SCM or ABM spec")
    p_sim.add_argument("--spec", required=True, help="generator spec JSON")
    p_sim.add_argument("--out", help="output directory")
    p_sim.add_argument("--seed", type=int, help="generator seed")
    p_sim.add_argument("--locations", type=int, help="number of locations (scm)")
    p_sim.add_argument("--times", type=int, help="recorded steps per location (scm)")
    p_sim.add_argument("--steps", type=int, help="total simulation steps (abm)")
    p_sim.set_defaults(func=cmd_simulate)

    p_sweep = sub.add_parser("sweep", help="rerun discovery across significance levels")
    add_common(p_sweep)
    p_sweep.add_argument("--alphas", help="comma-separated significance levels")
    p_sweep.set_defaults(func=cmd_sweep)

    p_eval = sub.add_parser("evaluate", help="score an estimated graph against truth")
    p_eval.add_argument("--estimated", required=True, help="estimated graph JSON")
    p_eval.add_argument("--truth", required=True, help="truth graph JSON")
    p_eval.add_argument("--out", help="output directory")
    p_eval.add_argument("--draws", type=int, default=999, help="baseline null draws")
    p_eval.add_argument("--seed", type=int, help="baseline seed")
    p_eval.set_defaults(func=cmd_evaluate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except ConfigError as exc:
        log.error("configuration error: %s", exc)
        return 2
    except DataError as exc:
        log.error("data error: %s", exc)
        return 3
    except FileNotFoundError as exc:
        log.error("data error: %s", exc)
        return 3
    except StcausalError as exc:
        log.error("runtime failure: %s", exc)
        return 4
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        log.error("runtime failure: %s", exc)
        return 4


if __name__ == "__main__":
    sys.exit(main())

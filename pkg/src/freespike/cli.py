"""Command-line entry point.

Exit codes: 0 success, 1 an acceptance gate failed, 2 bad configuration,
3 numerical failure (a diagnostics JSON is written to the output directory).
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import traceback
from pathlib import Path

import numpy as np

from .edge import locate_upper_edge
from .errors import ConfigError, DomainError, EdgeInconsistencyError, NumericError, SingularityError, SolverError
from .harness import (
    SUITES,
    ExperimentPlan,
    RunResult,
    apply_overrides,
    prepare,
    run_bbp_sweep,
    run_plan,
    write_results,
)
from .rmt import build_model, empirical_overlap, interlacing_violations, sample_haar, trial_seed
from .spike import SpikeModel, base_atoms
from .subordination import default_grid, density_on_grid

__all__ = ["main", "build_parser", "load_plan"]

log = logging.getLogger("freespike")

EXIT_OK, EXIT_GATE, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="experiment plan (JSON)")
    common.add_argument("--out", metavar="DIR", help="output directory (default: plan out_dir)")
    common.add_argument("--seed", type=int, metavar="U64", help="master seed override")
    common.add_argument("--threads", type=int, metavar="K", help="worker threads (default: FREESPIKE_THREADS or CPU count)")
    common.add_argument("--set", action="append", default=[], metavar="K=V", dest="overrides",
                        help="override a plan entry; dotted keys reach nested objects (repeatable)")
    common.add_argument("--suite", action="append", default=[], choices=SUITES, dest="suites",
                        help="restrict the run to these suites (repeatable)")
    common.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    parser = argparse.ArgumentParser(prog="freespike", description="Spiked free multiplicative convolution toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("convolve", parents=[common], help="density CSV and edge JSON of the base pair")
    sub.add_parser("edge", parents=[common], help="edge data JSON of the base pair")
    sub.add_parser("predict", parents=[common], help="predictions for every N of the plan, no simulation")
    sub.add_parser("simulate", parents=[common], help="one Monte Carlo trial at the largest N")
    v = sub.add_parser("verify", parents=[common], help="run the suites and gate the exit code")
    v.add_argument("--predictions", metavar="PATH", help="predictions JSON to check bit-for-bit")
    sub.add_parser("sweep", parents=[common], help="BBP transition curve")
    return parser


def load_plan(args) -> ExperimentPlan:
    cfg = {}
    if args.config:
        path = Path(args.config)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        try:
            cfg = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        if not isinstance(cfg, dict):
            raise ConfigError("config must be a JSON object")
    cfg = apply_overrides(cfg, args.overrides)
    if args.seed is not None:
        cfg["master_seed"] = args.seed
    if args.suites:
        cfg["suites"] = list(dict.fromkeys(args.suites))
    if args.threads is not None:
        cfg["threads"] = args.threads
    return ExperimentPlan.from_dict(cfg)


def _out_dir(args, plan: ExperimentPlan) -> Path:
    out = Path(args.out or plan.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, default=_default))


def _default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    raise TypeError(type(obj).__name__)


def _pair(plan: ExperimentPlan):
    n = int(plan.convolve.get("n_atoms", 1000))
    m = SpikeModel(base_atoms(plan.mu_alpha, n), base_atoms(plan.mu_beta, n))
    return m.mu_A, m.mu_B


def cmd_convolve(args, plan, out) -> int:
    mu_A, mu_B = _pair(plan)
    edge = locate_upper_edge(mu_A, mu_B)
    grid = default_grid(mu_A, mu_B, edge.E_plus, int(plan.convolve.get("grid_points", 2000)))
    dens = density_on_grid(mu_A, mu_B, grid, float(plan.convolve.get("eta", 1e-6)))
    dens.to_csv(out / "density.csv")
    _dump(out / "edge.json", edge.to_dict())
    print(json.dumps({"density": str(out / "density.csv"), "edge": str(out / "edge.json"),
                      "integral": dens.integral(), "E_plus": edge.E_plus}))
    return EXIT_OK


def cmd_edge(args, plan, out) -> int:
    edge = locate_upper_edge(*_pair(plan))
    _dump(out / "edge.json", edge.to_dict())
    print(json.dumps(edge.to_dict()))
    return EXIT_OK


def _predictions(plan: ExperimentPlan) -> dict:
    return {str(N): prepare(plan, N).predictions.to_dict() for N in plan.N_grid}


def cmd_predict(args, plan, out) -> int:
    preds = _predictions(plan)
    _dump(out / "predictions.json", preds)
    print(str(out / "predictions.json"))
    return EXIT_OK


def cmd_simulate(args, plan, out) -> int:
    N = plan.N_grid[-1]
    ctx = prepare(plan, N)
    seed = trial_seed(plan.master_seed, N, 0, "haar")
    sample = build_model(ctx.model, sample_haar(N, plan.haar_field, seed))
    spec = sample.spiked
    lam = sample.unspiked_eigenvalues()
    k = min(N, ctx.model.r + ctx.model.s + plan.varpi)
    spikes = []
    for p in ctx.predictions.spikes:
        v = np.zeros(N)
        v[p.index - 1] = 1.0
        entry = p.to_dict()
        entry["realized_eigenvalue"] = float(spec.eigenvalues[p.label - 1])
        if p.kind == "a":
            entry["realized_overlap"] = empirical_overlap(spec, [p.label], v)
        else:
            entry["realized_overlap"] = float(abs(spec.right_vectors([p.label - 1])[p.index - 1, 0]) ** 2)
        spikes.append(entry)
    dump = {
        "N": N,
        "seed": seed,
        "E_plus": ctx.edge.E_plus,
        "top_eigenvalues": spec.eigenvalues[:k].tolist(),
        "top_unspiked_eigenvalues": lam[:k].tolist(),
        "interlacing_violations": interlacing_violations(spec.eigenvalues, lam, ctx.model.r + ctx.model.s),
        "spikes": spikes,
    }
    _dump(out / "simulate.json", dump)
    print(str(out / "simulate.json"))
    return EXIT_OK


def _report(result: RunResult, out: Path) -> int:
    paths = write_results(result, out)
    for g in result.gates:
        print(f"{'PASS' if g.passed else 'FAIL'} {g.name}: value={g.value} threshold={g.threshold} {g.detail}")
    print(paths["summary"])
    return EXIT_OK if result.passed else EXIT_GATE


def cmd_verify(args, plan, out) -> int:
    preds = None
    if args.predictions:
        path = Path(args.predictions)
        if not path.is_file():
            raise ConfigError(f"predictions file not found: {path}")
        preds = json.loads(path.read_text())
    return _report(run_plan(plan, predictions=preds), out)


def cmd_sweep(args, plan, out) -> int:
    suite = run_bbp_sweep(plan)
    result = RunResult(plan, {"bbp": suite}, list(suite.gates), 0.0, {})
    return _report(result, out)


COMMANDS = {
    "convolve": cmd_convolve,
    "edge": cmd_edge,
    "predict": cmd_predict,
    "simulate": cmd_simulate,
    "verify": cmd_verify,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level), format="%(levelname)s %(name)s: %(message)s")
    out = None
    try:
        plan = load_plan(args)
        out = _out_dir(args, plan)
        return COMMANDS[args.command](args, plan, out)
    except (SingularityError, SolverError, NumericError, EdgeInconsistencyError, FloatingPointError) as exc:
        target = (out or Path(args.out or ".")) / "diagnostics.json"
        target.parent.mkdir(parents=True, exist_ok=True)
        _dump(target, {"error": type(exc).__name__, "message": str(exc), "traceback": traceback.format_exc(),
                       **{k: getattr(exc, k) for k in ("residual", "iterations", "parametric", "density_based")
                          if getattr(exc, k, None) is not None}})
        print(f"freespike: numerical failure: {exc} (diagnostics: {target})", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, DomainError) as exc:
        print(f"freespike: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

"""Command-line interface: run, oracle, constants, sweep, plot.

Exit codes: 0 success, 2 configuration error, 3 divergence.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from fedsim import analysis
from fedsim.aggregation import fedprox_closed_form
from fedsim.harness import (
    ConfigError,
    ExperimentConfig,
    build_objective,
    emit_metrics,
    initial_taus,
    load_metrics,
    run_experiment,
)
from fedsim.solvers import accumulation_vector

EXIT_CONFIG = 2
EXIT_DIVERGENCE = 3


def _load_config(path: str) -> ExperimentConfig:
    return ExperimentConfig.from_json(path)


def cmd_run(args) -> int:
    config = _load_config(args.config)
    if args.seed is not None:
        config.master_seed = args.seed
    result = run_experiment(config)
    out = args.out or config.output or "metrics." + args.format
    emit_metrics(result.metrics, out, args.format)
    if args.figures:
        from fedsim.plots import render_metrics_figures

        paths = render_metrics_figures({"run": result.metrics}, args.figures)
        for p in paths:
            print(f"wrote {p}")
    print(f"wrote {out} ({len(result.metrics)} rounds)")
    if result.diverged:
        print(f"diverged at round {result.divergence_round}", file=sys.stderr)
        return EXIT_DIVERGENCE
    return 0


def _quadratic_parts(config: ExperimentConfig):
    global_obj, _ = build_objective(config)
    if not global_obj.is_quadratic():
        raise ConfigError("this command requires a quadratic objective")
    H_list = [c.H for c in global_obj.clients]
    e_list = [c.e for c in global_obj.clients]
    return global_obj, H_list, e_list


def cmd_oracle(args) -> int:
    config = _load_config(args.config)
    global_obj, H_list, e_list = _quadratic_parts(config)
    taus = initial_taus(config, [None] * global_obj.m)
    eta = config.eta_schedule.initial
    solver = config.solver if isinstance(config.solver, dict) else config.solver[0]
    mu = float(solver.get("mu", 0.0))
    fixed = analysis.quadratic_fixed_point(global_obj.p, H_list, e_list, taus, eta, mu)
    optimum = global_obj.minimizer()
    print("fixed_point:", " ".join(repr(v) for v in fixed))
    print("true_optimum:", " ".join(repr(v) for v in optimum))
    print("bias_norm:", repr(float(np.linalg.norm(fixed - optimum))))
    return 0


def _constants_for(config: ExperimentConfig, taus, p):
    eta = config.eta_schedule.initial
    from fedsim.harness import _solver_spec

    a_vectors = [
        accumulation_vector(_solver_spec(config, i, eta), int(t))
        for i, t in enumerate(taus)
    ]
    tau_eff, w = config.aggregation.resolve(
        p, [a.norm1 for a in a_vectors], taus
    )
    return analysis.abc_constants(w, tau_eff, a_vectors, p=p), a_vectors, w


def cmd_constants(args) -> int:
    config = _load_config(args.config)
    global_obj, _ = build_objective(config)
    n_counts = [getattr(c, "n", None) for c in global_obj.clients]
    taus = initial_taus(config, n_counts)
    consts, a_vectors, w = _constants_for(config, taus, global_obj.p)
    assume = analysis.AssumptionConstants(
        L=float(config.assumptions.get("L", 1.0)),
        sigma2=float(config.assumptions.get("sigma2", config.sigma2)),
        beta2=float(config.assumptions.get("beta2", 1.0)),
        kappa2=float(config.assumptions.get("kappa2", 0.0)),
    )
    eta_max = analysis.max_learning_rate(
        assume.L, assume.beta2, consts.tau_eff, max(a.norm1 for a in a_vectors)
    )
    eps_opt, total = analysis.error_bound(consts, assume, global_obj.m, config.rounds)
    for name, val in [
        ("A", consts.A), ("B", consts.B), ("C", consts.C),
        ("tau_eff", consts.tau_eff), ("tau_bar", consts.tau_bar),
        ("slowdown", consts.slowdown), ("chi2", consts.chi2),
        ("max_eta", eta_max), ("eps_opt", eps_opt), ("total_bound", total),
    ]:
        print(f"{name}: {val!r}")
    return 0


def _parse_grid(spec: str) -> np.ndarray:
    parts = spec.split(":")
    if len(parts) != 3:
        raise ConfigError("grid must be start:stop:step")
    start, stop, step = (float(v) for v in parts)
    return np.arange(start, stop + step / 2, step)


def cmd_sweep(args) -> int:
    config = _load_config(args.config)
    global_obj, _ = build_objective(config)
    n_counts = [getattr(c, "n", None) for c in global_obj.clients]
    taus = initial_taus(config, n_counts)
    p = global_obj.p
    grid = _parse_grid(args.grid)
    rows = []
    eta = config.eta_schedule.initial
    for value in grid:
        if args.param == "alpha":
            tau_eff, w = fedprox_closed_form(p, taus, float(value))
            from fedsim.solvers import SolverSpec

            prox = SolverSpec("proximal", eta, mu=float(value) / eta)
            a_vectors = [accumulation_vector(prox, int(t)) for t in taus]
            consts = analysis.abc_constants(w, tau_eff, a_vectors, p=p)
        elif args.param == "tau_eff":
            consts, a_vectors, w = _constants_for(config, taus, p)
            tau_bar = consts.tau_bar
            consts = analysis.TheoremConstants(
                A=consts.A * float(value) / consts.tau_eff,
                B=consts.B, C=consts.C, tau_eff=float(value),
                tau_bar=tau_bar, slowdown=tau_bar / float(value), chi2=consts.chi2,
            )
        else:
            raise ConfigError(f"unknown sweep parameter {args.param!r}")
        rows.append((float(value), consts))

    header = f"{args.param},chi2,slowdown,tau_eff,A,B,C"
    lines = [header] + [
        f"{v!r},{c.chi2!r},{c.slowdown!r},{c.tau_eff!r},{c.A!r},{c.B!r},{c.C!r}"
        for v, c in rows
    ]
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w") as f:
            f.write(text)
        print(f"wrote {args.out}")
    else:
        sys.stdout.write(text)
    if args.figures:
        from fedsim.plots import render_sweep_figure

        path = render_sweep_figure(
            args.param,
            [v for v, _ in rows],
            {
                "weight bias (chi2)": [c.chi2 for _, c in rows],
                "slowdown": [c.slowdown for _, c in rows],
            },
            f"{args.figures}/sweep_{args.param}.png",
        )
        print(f"wrote {path}")
    return 0


def cmd_plot(args) -> int:
    from fedsim.plots import render_metrics_figures

    runs = {path: load_metrics(path) for path in args.metrics}
    paths = render_metrics_figures(runs, args.out)
    for p in paths:
        print(f"wrote {p}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedsim",
        description="Heterogeneous federated optimization simulator",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="execute an experiment config")
    run.add_argument("--config", required=True)
    run.add_argument("--out")
    run.add_argument("--format", choices=("csv", "jsonl"), default="csv")
    run.add_argument("--seed", type=int)
    run.add_argument("--figures", help="directory for rendered figures")
    run.set_defaults(func=cmd_run)

    oracle = sub.add_parser("oracle", help="print the quadratic fixed point")
    oracle.add_argument("--config", required=True)
    oracle.set_defaults(func=cmd_oracle)

    consts = sub.add_parser("constants", help="print convergence diagnostics")
    consts.add_argument("--config", required=True)
    consts.set_defaults(func=cmd_constants)

    sweep = sub.add_parser("sweep", help="grid sweep over alpha or tau_eff")
    sweep.add_argument("--config", required=True)
    sweep.add_argument("--param", choices=("alpha", "tau_eff"), required=True)
    sweep.add_argument("--grid", required=True, help="start:stop:step")
    sweep.add_argument("--out")
    sweep.add_argument("--figures", help="directory for rendered figures")
    sweep.set_defaults(func=cmd_sweep)

    plot = sub.add_parser("plot", help="render figures from metrics files")
    plot.add_argument("--metrics", nargs="+", required=True)
    plot.add_argument("--out", default="figures")
    plot.set_defaults(func=cmd_plot)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except analysis.ContractionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE


if __name__ == "__main__":
    sys.exit(main())

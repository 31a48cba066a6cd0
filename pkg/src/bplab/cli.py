"""``bplab`` command line: experiments, oracle queries and graph generation."""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict

import numpy as np

from .bp import bethe_free_energy, bp_fixed_point, bp_residual
from .diagnostics import l_symmetry_score, nonreconstruction_score, pair_symmetry_score
from .exact import DEFAULT_BUDGET, BudgetExceeded, GibbsOracle
from .experiments import EXPERIMENTS, ExperimentConfig
from .graph import GraphError, dumps_graph, loads_graph
from .models import GENERATORS, GeneratorParams, RestartLimitExceeded, model_from_dict

PRESETS = ("ksat", "potts", "ising")


def _ints(text: str) -> list[int]:
    return [int(t) for t in text.split(",") if t.strip()]


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.split(",") if t.strip()]


def _model_arg(text: str) -> dict:
    if text in PRESETS:
        return {"preset": text}
    with open(text) as fh:
        return json.load(fh)


def _add_global(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file mirroring ExperimentConfig")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--out", help="output directory for CSV and manifest files")
    p.add_argument("--enum-budget", type=int, help="exact enumeration budget")
    p.add_argument("--jobs", type=int, help="worker processes")


def _add_model(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", type=_model_arg, help=f"preset ({', '.join(PRESETS)}) or model JSON file")
    p.add_argument("--beta", type=float, help="inverse temperature for preset models")
    p.add_argument("--k", type=int, help="arity for the ksat preset")
    p.add_argument("--q", type=int, help="number of spins for the potts preset")
    p.add_argument("--generator", choices=sorted(GENERATORS))
    p.add_argument("--d", type=float, help="density / degree")
    p.add_argument("--eps", type=float, help="percolation parameter")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bplab", description="Belief propagation and Bethe free energy lab.")
    sub = parser.add_subparsers(dest="command", required=True)

    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        _add_global(p)
        _add_model(p)
        p.add_argument("--n", type=_ints, dest="n_grid", help="comma-separated n grid")
        p.add_argument("--trials", type=int)
        p.add_argument("--eps-grid", type=_floats)
        p.add_argument("--beta-grid", type=_floats)
        p.add_argument("--ell", type=int)
        p.add_argument("--ell-grid", type=_ints)
        p.add_argument("--damping", type=float)
        p.add_argument("--tol", type=float)
        p.add_argument("--max-iter", type=int)
        p.add_argument("--acyclic-only", action="store_true", default=None)
        p.add_argument("--no-bp", dest="run_bp", action="store_false", default=None)
        p.add_argument("--no-nonrecon", dest="nonrecon", action="store_false", default=None)

    p = sub.add_parser("oracle", help="exact queries on a graph JSON file")
    _add_global(p)
    p.add_argument("graph", help="graph JSON file, or - for stdin")
    p.add_argument(
        "query",
        choices=["logz", "marginal", "conditional", "messages", "residual", "bethe", "bp", "pair", "lsym", "nonrecon"],
    )
    p.add_argument("--vars", type=_ints, help="variables for marginal queries")
    p.add_argument("--x", type=int, help="variable for conditional queries")
    p.add_argument("--ell", type=int, default=0)
    p.add_argument("--sigma", type=_ints, help="boundary assignment for conditional queries")
    p.add_argument("--l", type=int, default=2, help="tuple size for lsym")
    p.add_argument("--budget", type=int, default=100_000, help="tuple or sample budget for lsym / nonrecon")
    p.add_argument("--mode", default=None, help="exact, sampled or auto")
    p.add_argument("--damping", type=float)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--max-iter", type=int, default=1000)

    p = sub.add_parser("gen", help="sample a graph and print it as JSON")
    _add_global(p)
    _add_model(p)
    p.add_argument("--n", type=int, required=True)
    return parser


def _model_dict(args, base: dict) -> dict:
    model = dict(args.model) if args.model is not None else dict(base)
    for key in ("beta", "k", "q"):
        val = getattr(args, key, None)
        if val is not None:
            model[key] = val
    return model


def _experiment_config(args) -> ExperimentConfig:
    data = {}
    if args.config:
        with open(args.config) as fh:
            data = json.load(fh)
    cfg = ExperimentConfig.from_dict(data)
    overrides = {
        "model": _model_dict(args, cfg.model),
        "seed": args.seed,
        "out": args.out,
        "enum_budget": args.enum_budget,
        "jobs": args.jobs,
        "generator": args.generator,
        "d": args.d,
        "eps": args.eps,
        "n_grid": args.n_grid,
        "trials": args.trials,
        "eps_grid": args.eps_grid,
        "beta_grid": args.beta_grid,
        "ell": args.ell,
        "ell_grid": args.ell_grid,
        "damping": args.damping,
        "tol": args.tol,
        "max_iter": args.max_iter,
        "acyclic_only": args.acyclic_only,
        "run_bp": args.run_bp,
        "nonrecon": args.nonrecon,
    }
    merged = {**asdict(cfg), **{k: v for k, v in overrides.items() if v is not None}}
    return ExperimentConfig.from_dict(merged)


def _read_graph(path: str):
    text = sys.stdin.read() if path == "-" else open(path).read()
    return loads_graph(text)


def _oracle(args) -> dict:
    G = _read_graph(args.graph)
    budget = args.enum_budget or DEFAULT_BUDGET
    rng = np.random.default_rng(args.seed or 0)
    oracle = GibbsOracle(G, budget)
    q = args.query
    if q == "logz":
        return {"log_z": oracle.log_partition}
    if q == "marginal":
        vars_ = args.vars if args.vars is not None else list(range(G.n))
        return {"vars": vars_, "probs": oracle.marginal(vars_).reshape(-1).tolist()}
    if q == "conditional":
        if args.x is None or args.sigma is None:
            raise ValueError("conditional needs --x and --sigma")
        return {"x": args.x, "ell": args.ell, "probs": oracle.conditional_marginal(args.x, args.ell, args.sigma).tolist()}
    M = oracle.messages()
    if q == "messages":
        return M.to_dict()
    if q == "residual":
        return {"residual": bp_residual(G, M)}
    if q == "bethe":
        return {"bethe": bethe_free_energy(G, M), "log_z": oracle.log_partition}
    if q == "bp":
        Mbp, rep = bp_fixed_point(G, None, args.damping, args.tol, args.max_iter)
        return {**asdict(rep), "bethe": bethe_free_energy(G, Mbp), "residual": bp_residual(G, Mbp)}
    if q == "pair":
        return pair_symmetry_score(G, oracle=oracle).to_dict()
    if q == "lsym":
        return l_symmetry_score(G, args.l, args.budget, rng, args.mode or "auto", budget).to_dict()
    return nonreconstruction_score(G, args.ell, rng=rng, mode=args.mode or "exact", samples=args.budget, oracle=oracle).to_dict()


def _gen(args) -> str:
    spec = model_from_dict(_model_dict(args, {"preset": "ksat", "k": 3, "beta": 0.5}))
    generator = args.generator or "poisson"
    eps = args.eps if args.eps is not None and generator == "percolated" else 0.0
    params = GeneratorParams(args.n, args.d if args.d is not None else 1.0, eps, args.seed or 0)
    return dumps_graph(GENERATORS[generator](spec, params))


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command in EXPERIMENTS:
            res = EXPERIMENTS[args.command](_experiment_config(args))
            sys.stdout.write(res.summary_csv())
            print(f"# attempted={res.attempted} recorded={res.attempted - res.skipped} skipped={res.skipped}")
        elif args.command == "oracle":
            print(json.dumps(_oracle(args)))
        else:
            text = _gen(args)
            if args.out:
                path = args.out if args.out.endswith(".json") else os.path.join(args.out, "graph.json")
                os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
                with open(path, "w") as fh:
                    fh.write(text)
            else:
                print(text)
    except (BudgetExceeded, GraphError, RestartLimitExceeded, ValueError, OSError) as exc:
        print(f"bplab: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

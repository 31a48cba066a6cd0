"""Desk-scale experiments: residual trends, Bethe gaps, Aizenman-Sims-Starr increments, phase scans.

Each experiment returns an :class:`ExperimentResult` and, when an output
directory is configured, writes ``<name>_trials.csv``, ``<name>_summary.csv``
and ``<name>_manifest.json``.  Every trial is a pure function of
``(config, master seed, group, n, trial index)``.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
import platform
import time
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any, Callable

import numpy as np

from . import __version__
from .bp import (
    ass_constraint_term,
    ass_local_terms,
    beliefs,
    bethe_free_energy,
    bethe_marginal_form,
    bp_fixed_point,
    bp_residual,
)
from .diagnostics import nonreconstruction_score, pair_symmetry_score
from .exact import DEFAULT_BUDGET, BudgetExceeded, GibbsOracle
from .graph import FactorGraph, connected_components, is_acyclic, remove_constraints, remove_variable
from .models import GENERATORS, GeneratorParams, RestartLimitExceeded, model_from_dict


@dataclass
class ExperimentConfig:
    model: dict = field(default_factory=lambda: {"preset": "ksat", "k": 3, "beta": 0.5})
    generator: str = "poisson"
    n_grid: list[int] = field(default_factory=lambda: [8, 10, 12, 14])
    trials: int = 200
    d: float = 1.0
    eps: float = 0.2
    eps_grid: list[float] | None = None
    beta_grid: list[float] | None = None
    ell: int = 2
    ell_grid: list[int] = field(default_factory=lambda: [0, 2, 4])
    seed: int = 0
    enum_budget: int = DEFAULT_BUDGET
    damping: float | None = None
    tol: float = 1e-10
    max_iter: int = 1000
    acyclic_only: bool = False
    run_bp: bool = True
    nonrecon: bool = True
    jobs: int = 1
    out: str | None = None

    def __post_init__(self):
        if self.trials < 1:
            raise ValueError("trials must be at least 1")
        if not self.n_grid or min(self.n_grid) < 1:
            raise ValueError("n_grid must hold positive integers")
        if self.generator not in GENERATORS:
            raise ValueError(f"unknown generator {self.generator!r}")

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path: str) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class ExperimentResult:
    name: str
    columns: dict[str, str]
    rows: list[dict]
    summary_columns: dict[str, str]
    summary: list[dict]
    attempted: int
    skipped: int

    @property
    def recorded(self) -> list[dict]:
        return [r for r in self.rows if r["status"] == "ok"]

    def summary_by(self, key: str = "n") -> dict:
        return {s[key]: s for s in self.summary}

    def trials_csv(self) -> str:
        return _to_csv(self.columns, self.rows)

    def summary_csv(self) -> str:
        return _to_csv(self.summary_columns, self.summary)


# -- formatting ----------------------------------------------------------------


def _fmt(v: Any) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _to_csv(columns: dict[str, str], rows: list[dict]) -> str:
    buf = io.StringIO()
    for name, desc in columns.items():
        buf.write(f"# {name}: {desc}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r.get(c)) for c in columns])
    return buf.getvalue()


def _degree_hist(G: FactorGraph) -> str:
    h = Counter(G.degree(x) for x in range(G.n))
    return ";".join(f"{d}:{c}" for d, c in sorted(h.items()))


def trial_seed(master: int, *key: int) -> int:
    return int(np.random.SeedSequence([int(master), *[int(k) for k in key]]).generate_state(1, np.uint64)[0])


# -- trial bodies ------------------------------------------------------------------

BASE_COLUMNS = {
    "group": "scan parameter value for this row (eps, beta or empty)",
    "n": "number of variables",
    "trial": "trial index within (group, n)",
    "seed": "generator seed derived from (master seed, group, n, trial)",
    "status": "ok or skipped",
    "skip_reason": "why the trial was skipped (budget, cyclic, restarts)",
}

GRAPH_COLUMNS = {
    "m": "number of constraints",
    "acyclic": "1 if the bipartite graph is a forest",
    "degree_hist": "variable degree histogram as degree:count pairs",
    "log_z": "exact ln Z by enumeration",
    "bethe": "Bethe free energy at the exact cavity messages",
    "bethe_marginal": "marginal form of the Bethe free energy at exact marginals",
    "residual": "BP residual (eps) of the exact cavity messages",
    "bp_iterations": "sweeps of BP from uniform messages",
    "bp_converged": "1 if BP reached tolerance",
    "bp_final_delta": "largest TV message change in the last sweep",
    "bp_bethe": "Bethe free energy at the BP fixed point reached",
    "pair_score": "mean TV(pair joint, product) over ordered pairs i != j",
    "nonrecon_score": "non-reconstruction score at the configured ell",
}


def _make_graph(cfg: ExperimentConfig, model: dict, n: int, seed: int, eps: float | None = None):
    spec = model_from_dict(model)
    params = GeneratorParams(n, cfg.d, eps if eps is not None else cfg.eps if cfg.generator == "percolated" else 0.0, seed)
    return spec, GENERATORS[cfg.generator](spec, params)


def _graph_record(cfg: ExperimentConfig, G: FactorGraph) -> dict:
    oracle = GibbsOracle(G, cfg.enum_budget)
    M = oracle.messages()
    log_z = oracle.log_partition
    var_m = np.array([oracle.marginal((x,)) for x in range(G.n)]).reshape(G.n, G.q)
    con_m = [oracle.marginal(G.scope(a)) for a in range(G.m)]
    rec = {
        "m": G.m,
        "acyclic": is_acyclic(G),
        "degree_hist": _degree_hist(G),
        "log_z": log_z,
        "bethe": bethe_free_energy(G, M),
        "bethe_marginal": bethe_marginal_form(G, var_m, con_m),
        "residual": bp_residual(G, M),
        "pair_score": pair_symmetry_score(G, oracle=oracle).score,
        "nonrecon_score": nonreconstruction_score(G, cfg.ell, oracle=oracle).score if cfg.nonrecon else None,
    }
    if cfg.run_bp:
        Mbp, rep = bp_fixed_point(G, None, cfg.damping, cfg.tol, cfg.max_iter)
        rec.update(
            bp_iterations=rep.iterations,
            bp_converged=rep.converged,
            bp_final_delta=rep.final_delta,
            bp_bethe=bethe_free_energy(G, Mbp),
        )
    return rec


def _run_graph_trial(task) -> dict:
    cfg, model, group, n, t, eps = task
    seed = trial_seed(cfg.seed, _group_key(group), n, t)
    row = {"group": group, "n": n, "trial": t, "seed": seed, "status": "ok", "skip_reason": ""}
    try:
        _, G = _make_graph(cfg, model, n, seed, eps)
        if cfg.acyclic_only and not is_acyclic(G):
            return {**row, "status": "skipped", "skip_reason": "cyclic"}
        row.update(_graph_record(cfg, G))
    except BudgetExceeded:
        return {**row, "status": "skipped", "skip_reason": "budget"}
    except RestartLimitExceeded:
        return {**row, "status": "skipped", "skip_reason": "restarts"}
    return row


def _group_key(group) -> int:
    # integer key so floats like 0.1 map to stable seeds
    return 0 if group in (None, "") else int(round(float(group) * 1_000_000)) + 1


def _run_ass_trial(task) -> dict:
    cfg, model, group, n, t, _ = task
    seed = trial_seed(cfg.seed, _group_key(group), n, t)
    row = {"group": group, "n": n, "trial": t, "seed": seed, "status": "ok", "skip_reason": ""}
    spec = model_from_dict(model)
    k = spec.k
    d_hat = cfg.d * (n / (n - 1)) ** (k - 1)
    p = ((n - 1) / n) ** (k - 1)
    G_hat = GENERATORS["poisson"](spec, GeneratorParams(n, d_hat, 0.0, trial_seed(seed, 0)))
    rng = np.random.default_rng(trial_seed(seed, 1))
    A = [a for a in range(G_hat.m) if rng.random() < 1 - p]
    x = int(rng.integers(n))
    if cfg.acyclic_only and not is_acyclic(G_hat):
        return {**row, "status": "skipped", "skip_reason": "cyclic"}
    try:
        o_hat = GibbsOracle(G_hat, cfg.enum_budget)
        M = o_hat.messages()
        G1, _ = remove_constraints(G_hat, A)
        G2, _, _ = remove_variable(G_hat, x)
        lz_hat = o_hat.log_partition
        lz1 = GibbsOracle(G1, cfg.enum_budget).log_partition
        lz2 = GibbsOracle(G2, cfg.enum_budget).log_partition
    except BudgetExceeded:
        return {**row, "status": "skipped", "skip_reason": "budget"}
    comp = {}
    for i, (_, cs) in enumerate(connected_components(G_hat)):
        for a in cs:
            comp[a] = i
    s1, s2, s3 = ass_local_terms(G_hat, M, x)
    pred1 = sum(ass_constraint_term(G_hat, M, a) for a in A)
    row.update(
        m_hat=G_hat.m,
        acyclic=is_acyclic(G_hat),
        removed=len(A),
        removed_separated=len({comp[a] for a in A}) == len(A),
        x=x,
        deg_x=G_hat.degree(x),
        log_z_hat=lz_hat,
        log_z_prime=lz1,
        log_z_dprime=lz2,
        delta_prime=lz_hat - lz1,
        pred_prime=pred1,
        gap_prime=abs(lz_hat - lz1 - pred1),
        delta_dprime=lz_hat - lz2,
        s1=s1,
        s2=s2,
        s3=s3,
        pred_dprime=s1 + s2 + s3,
        gap_dprime=abs(lz_hat - lz2 - (s1 + s2 + s3)),
        residual=bp_residual(G_hat, M),
    )
    return row


def _run_phase_trial(task) -> dict:
    cfg, model, group, n, t, _ = task
    seed = trial_seed(cfg.seed, _group_key(group), n, t)
    row = {"group": group, "n": n, "trial": t, "seed": seed, "status": "ok", "skip_reason": ""}
    try:
        _, G = _make_graph(cfg, model, n, seed)
        oracle = GibbsOracle(G, cfg.enum_budget)
        M = oracle.messages()
        row.update(m=G.m, acyclic=is_acyclic(G), residual=bp_residual(G, M))
        row["pair_score"] = pair_symmetry_score(G, oracle=oracle).score
        for ell in cfg.ell_grid:
            row[f"nonrecon_l{ell}"] = nonreconstruction_score(G, ell, oracle=oracle).score
            row[f"pair_far_l{ell}"] = pair_symmetry_score(G, min_distance=2 * ell, oracle=oracle).score
    except BudgetExceeded:
        return {**row, "status": "skipped", "skip_reason": "budget"}
    except RestartLimitExceeded:
        return {**row, "status": "skipped", "skip_reason": "restarts"}
    return row


# -- driver ------------------------------------------------------------------


def _summarize(rows: list[dict], quantities: list[str]) -> tuple[list[dict], dict[str, str]]:
    cols = {
        "group": "scan parameter value",
        "n": "number of variables",
        "attempted": "trials attempted",
        "recorded": "trials recorded",
        "skipped": "trials skipped",
    }
    for q in quantities:
        cols[f"mean_{q}"] = f"mean of {q} over recorded trials"
        cols[f"q10_{q}"] = f"10% quantile of {q}"
        cols[f"q50_{q}"] = f"median of {q}"
        cols[f"q90_{q}"] = f"90% quantile of {q}"
    out = []
    keys = sorted({(_sort_group(r["group"]), r["n"]) for r in rows})
    for gk, n in keys:
        sub = [r for r in rows if _sort_group(r["group"]) == gk and r["n"] == n]
        ok = [r for r in sub if r["status"] == "ok"]
        s = {"group": sub[0]["group"], "n": n, "attempted": len(sub), "recorded": len(ok), "skipped": len(sub) - len(ok)}
        for q in quantities:
            vals = np.array([float(r[q]) for r in ok if r.get(q) is not None], dtype=float)
            if vals.size:
                s[f"mean_{q}"] = float(vals.mean())
                s[f"q10_{q}"], s[f"q50_{q}"], s[f"q90_{q}"] = (float(v) for v in np.quantile(vals, [0.1, 0.5, 0.9]))
        out.append(s)
    return out, cols


def _sort_group(g):
    return -math.inf if g in (None, "") else float(g)


def _execute(
    name: str,
    cfg: ExperimentConfig,
    worker: Callable[[tuple], dict],
    groups: list[tuple[Any, dict, float | None]],
    columns: dict[str, str],
    quantities: list[str],
) -> ExperimentResult:
    started = time.perf_counter()
    tasks = [(cfg, model, g, n, t, eps) for g, model, eps in groups for n in cfg.n_grid for t in range(cfg.trials)]
    if cfg.jobs > 1:
        with ProcessPoolExecutor(max_workers=cfg.jobs) as pool:
            rows = list(pool.map(worker, tasks, chunksize=8))
    else:
        rows = [worker(t) for t in tasks]
    rows.sort(key=lambda r: (_sort_group(r["group"]), r["n"], r["trial"]))
    skipped = sum(r["status"] != "ok" for r in rows)
    assert len(tasks) == len(rows) == (len(rows) - skipped) + skipped
    summary, scols = _summarize(rows, quantities)
    res = ExperimentResult(name, columns, rows, scols, summary, len(tasks), skipped)
    if cfg.out:
        _write(res, cfg, time.perf_counter() - started)
    return res


def _write(res: ExperimentResult, cfg: ExperimentConfig, wall: float) -> None:
    os.makedirs(cfg.out, exist_ok=True)
    with open(os.path.join(cfg.out, f"{res.name}_trials.csv"), "w") as fh:
        fh.write(res.trials_csv())
    with open(os.path.join(cfg.out, f"{res.name}_summary.csv"), "w") as fh:
        fh.write(res.summary_csv())
    manifest = {
        "experiment": res.name,
        "config": asdict(cfg),
        "versions": {"bplab": __version__, "numpy": np.__version__, "python": platform.python_version()},
        "attempted": res.attempted,
        "recorded": res.attempted - res.skipped,
        "skipped": res.skipped,
        "wall_time_s": wall,
    }
    with open(os.path.join(cfg.out, f"{res.name}_manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def _with_beta(model: dict, beta: float) -> dict:
    return {**model, "beta": beta}


def run_thm1_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """Residual of the exact cavity messages and pair symmetry across the n-grid."""
    columns = {**BASE_COLUMNS, **GRAPH_COLUMNS}
    quantities = ["residual", "pair_score", "nonrecon_score", "bp_iterations"]
    return _execute("thm1", cfg, _run_graph_trial, [("", cfg.model, None)], columns, quantities)


DEFAULT_EPS_GRID = (0.4, 0.3, 0.2, 0.1)


def run_bethe_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """Per-variable ln Z against both Bethe forms; scans ``eps_grid`` on the percolated model."""
    eps_grid = cfg.eps_grid
    if eps_grid is None and cfg.generator == "percolated":
        eps_grid = list(DEFAULT_EPS_GRID)
    groups = [(e, cfg.model, e) for e in eps_grid] if eps_grid else [("", cfg.model, None)]

    columns = {
        **BASE_COLUMNS,
        **GRAPH_COLUMNS,
        "log_z_density": "ln Z / n",
        "bethe_density": "Bethe free energy / n",
        "bethe_marginal_density": "marginal-form Bethe free energy / n",
        "gap_bethe": "|bethe - ln Z| / n",
        "gap_bethe_marginal": "|bethe_marginal - ln Z| / n",
    }
    result = _execute("bethe", cfg, _bethe_worker, groups, columns,
                      ["log_z_density", "bethe_density", "bethe_marginal_density", "gap_bethe", "gap_bethe_marginal"])
    return result


def _bethe_worker(task) -> dict:
    row = _run_graph_trial(task)
    if row["status"] == "ok":
        n = row["n"]
        row.update(
            log_z_density=row["log_z"] / n,
            bethe_density=row["bethe"] / n,
            bethe_marginal_density=row["bethe_marginal"] / n,
            gap_bethe=abs(row["bethe"] - row["log_z"]) / n,
            gap_bethe_marginal=abs(row["bethe_marginal"] - row["log_z"]) / n,
        )
    return row


ASS_COLUMNS = {
    **BASE_COLUMNS,
    "m_hat": "constraints in the coupling supergraph",
    "acyclic": "1 if the supergraph is a forest",
    "removed": "size of the deleted constraint set A",
    "removed_separated": "1 if the constraints of A lie in distinct components of the supergraph",
    "x": "deleted variable",
    "deg_x": "degree of the deleted variable",
    "log_z_hat": "ln Z of the supergraph",
    "log_z_prime": "ln Z after deleting A",
    "log_z_dprime": "ln Z after deleting x and its constraints (n - 1 variables)",
    "delta_prime": "ln Z_hat - ln Z_prime",
    "pred_prime": "sum of S4 over A",
    "gap_prime": "|delta_prime - pred_prime|",
    "delta_dprime": "ln Z_hat - ln Z_dprime",
    "s1": "S1(x)",
    "s2": "S2(x)",
    "s3": "S3(x)",
    "pred_dprime": "S1 + S2 + S3 at x",
    "gap_dprime": "|delta_dprime - pred_dprime|",
    "residual": "BP residual of the supergraph's exact messages",
}


def run_ass_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """Cavity increments of the coupling against their message predictions (Poisson model only)."""
    if cfg.generator != "poisson":
        raise ValueError("the increment experiment uses the Poisson model")
    if min(cfg.n_grid) < 2:
        raise ValueError("n must be at least 2")
    return _execute("ass", cfg, _run_ass_trial, [("", cfg.model, None)], ASS_COLUMNS,
                    ["gap_prime", "gap_dprime", "delta_dprime", "pred_dprime"])


def run_phase_scan(cfg: ExperimentConfig) -> ExperimentResult:
    """Symmetry and non-reconstruction scores across ``beta_grid``."""
    betas = cfg.beta_grid if cfg.beta_grid is not None else [0.0, 0.5, 1.0, 1.5, 2.0]
    groups = [(b, _with_beta(cfg.model, b), None) for b in betas]
    columns = {
        **BASE_COLUMNS,
        "m": "number of constraints",
        "acyclic": "1 if the bipartite graph is a forest",
        "residual": "BP residual of the exact cavity messages",
        "pair_score": "mean TV(pair joint, product) over ordered pairs i != j",
    }
    for ell in cfg.ell_grid:
        columns[f"nonrecon_l{ell}"] = f"non-reconstruction score at ell={ell}"
        columns[f"pair_far_l{ell}"] = f"pair score over pairs at distance > {2 * ell}"
    quantities = ["residual", "pair_score"] + [f"nonrecon_l{e}" for e in cfg.ell_grid] + [f"pair_far_l{e}" for e in cfg.ell_grid]
    return _execute("phase", cfg, _run_phase_trial, groups, columns, quantities)


EXPERIMENTS = {
    "thm1": run_thm1_experiment,
    "bethe": run_bethe_experiment,
    "ass": run_ass_experiment,
    "phase": run_phase_scan,
}

"""Command line interface.

Subcommands: gen, exact, nystrom, rownorm, amm, attend, metrics, scale-study,
selfcheck. Every command emits one JSON report with the stable top-level keys
{config, metrics, bounds, ledger, seed}; metrics and scale-study can emit CSV
rows instead. Exit codes: 0 success, 2 validation error, 3 bound violation in
selfcheck.

Trials run with per-trial derived seeds (seed + trial index) and may be
executed in parallel; ATTNSKETCH_THREADS caps the worker count. Report
assembly is single-threaded, so output is deterministic either way.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace

import numpy as np

from . import amm as amm_mod
from . import (generate, linalg, matio, metrics as metrics_mod, nystrom,
               oracle, qattention, qsim, rownorm)
from .errors import MatrixFileError, ParameterError

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_BOUND_VIOLATION = 3


def _max_threads() -> int:
    env = os.environ.get("ATTNSKETCH_THREADS")
    if env is not None:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ParameterError(f"ATTNSKETCH_THREADS={env!r} is not an integer") from exc
    return max(1, os.cpu_count() or 1)


def _run_trials(fn, trials: int) -> list:
    workers = min(_max_threads(), trials)
    if workers <= 1:
        return [fn(t) for t in range(trials)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, range(trials)))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    return obj


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="attnsketch",
        description="Classical simulator of a sublinear attention-approximation pipeline",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--n", type=int, default=64)
        p.add_argument("--d", type=int, default=4)
        p.add_argument("--lambda", dest="lam", type=float, default=0.25)
        p.add_argument("--eps", type=float, default=0.1)
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--trials", type=int, default=1)
        p.add_argument("--backend", choices=("exact", "perturbed", "mc"), default="exact")
        p.add_argument("--mc-factor", type=float, default=256.0)
        p.add_argument("--generator", choices=("gaussian", "clustered", "orthonormal-v",
                                               "from-files"), default="gaussian")
        p.add_argument("--clusters", type=int, default=8)
        p.add_argument("--spread", type=float, default=0.1)
        p.add_argument("--in", dest="inputs", action="append", default=[],
                       metavar="FILE", help="input matrix file (repeat for Q, K, V)")
        p.add_argument("--out", default=None, metavar="FILE")
        p.add_argument("--format", choices=("json", "csv"), default="json")
        return p

    common(sub.add_parser("gen", help="generate an instance and write its matrices"))
    common(sub.add_parser("exact", help="exact attention output and instance metrics"))
    p = common(sub.add_parser("nystrom", help="kernel landmark sampling quality"))
    p.add_argument("--delta", type=float, default=None)
    common(sub.add_parser("rownorm", help="normalization-factor sketch accuracy"))
    common(sub.add_parser("amm", help="value-matrix product sketch accuracy"))
    common(sub.add_parser("attend", help="end-to-end row-query accuracy and bound"))
    common(sub.add_parser("metrics", help="instance statistics"))
    p = common(sub.add_parser("scale-study", help="query-count growth versus n"))
    p.add_argument("--n-list", default="64,128,256,512,1024",
                   help="comma-separated ascending sizes")
    common(sub.add_parser("selfcheck", help="built-in consistency checks"))
    return parser


def _experiment_config(args) -> generate.ExperimentConfig:
    kind = args.generator.replace("-", "_")
    gen_spec = generate.GeneratorSpec(kind=kind, k=args.clusters, spread=args.spread,
                                      paths=tuple(args.inputs))
    backend = qsim.MeanEstimatorConfig(backend=args.backend, epsilon=args.eps,
                                       seed=args.seed, mc_sample_factor=args.mc_factor)
    return generate.ExperimentConfig(n=args.n, d=args.d, lam=args.lam, epsilon=args.eps,
                                     seed=args.seed, generator=gen_spec, backend=backend,
                                     trials=args.trials)


def _config_dict(command: str, config: generate.ExperimentConfig) -> dict:
    return {
        "command": command,
        "n": config.n,
        "d": config.d,
        "lambda": config.lam,
        "eps": config.epsilon,
        "trials": config.trials,
        "backend": {
            "backend": config.backend.backend,
            "epsilon": config.backend.epsilon,
            "mc_sample_factor": config.backend.mc_sample_factor,
        },
        "generator": {
            "kind": config.generator.kind,
            "k": config.generator.k,
            "spread": config.generator.spread,
            "paths": list(config.generator.paths),
        },
    }


def _report(command, config, *, metrics_part=None, bounds_part=None, ledger_part=None):
    return {
        "config": _config_dict(command, config),
        "metrics": metrics_part or {},
        "bounds": bounds_part or {},
        "ledger": ledger_part or {},
        "seed": config.seed,
    }


def _emit(text: str, out_path):
    if out_path:
        with open(out_path, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _emit_json(report: dict, out_path):
    _emit(json.dumps(_jsonable(report), indent=2) + "\n", out_path)


def _trial_config(config, trial: int):
    seed = config.trial_seed(trial)
    return replace(config, seed=seed, backend=replace(config.backend, seed=seed))


def _cmd_gen(args) -> int:
    config = _experiment_config(args)
    if not args.out:
        raise ParameterError("gen requires --out PREFIX for the matrix files")
    inst = generate.generate_raw(config)
    paths = {}
    for name, mat in (("q", inst.Q), ("k", inst.K), ("v", inst.V)):
        path = f"{args.out}.{name}.atnm"
        matio.write_matrix(path, mat)
        paths[name.upper()] = path
    report = _report("gen", config, metrics_part={"files": paths})
    _emit_json(report, None)
    return EXIT_OK


def _cmd_exact(args) -> int:
    config = _experiment_config(args)
    inst = generate.generate(config)
    att = oracle.attention_exact(inst)
    if args.out:
        matio.write_matrix(args.out, att)
    norm_vec = oracle.normalization_exact(inst)
    report = _report(
        "exact", config,
        metrics_part=metrics_mod.metrics(inst).as_dict(),
        bounds_part={
            "output_frobenius": float(np.linalg.norm(att)),
            "min_normalizer": float(norm_vec.min()),
            "max_normalizer": float(norm_vec.max()),
        },
    )
    _emit_json(report, None if args.out else None)
    return EXIT_OK


def _cmd_nystrom(args) -> int:
    config = _experiment_config(args)

    def one(trial: int) -> dict:
        cfg_t = _trial_config(config, trial)
        inst = generate.generate(cfg_t)
        ledger = qsim.CostLedger()
        rng = np.random.default_rng(cfg_t.seed)
        delta = args.delta if args.delta is not None else 1.0 / (cfg_t.n**3 + 2)
        ncfg = nystrom.NystromConfig(lam=cfg_t.lam, delta=delta, seed=cfg_t.seed)
        dataset = qsim.RowAccess(inst, ledger).dataset_rows(
            np.arange(2 * cfg_t.n, dtype=np.int64))
        sample = nystrom.qnystrom_kernel(dataset, qsim.ExpKernel(ledger), ncfg,
                                         ledger, rng)
        e = oracle.kernel_matrix(inst)
        approx = oracle.nystrom_explicit(e, sample)
        gap = linalg.norms(e - approx)
        check = nystrom.sandwich_check(e, sample, cfg_t.lam, tol=1e-6)
        return {
            "seed": cfg_t.seed,
            "sample_size": sample.size,
            "spectral_gap": gap.spectral,
            "frobenius_gap": gap.frobenius,
            "gap_over_lambda": gap.spectral / cfg_t.lam,
            "sandwich_ok": check.ok,
            "min_eig_lower": check.min_eig_lower,
            "min_eig_upper": check.min_eig_upper,
            "ledger": ledger.snapshot(),
        }

    trials = _run_trials(one, config.trials)
    worst = max(t["gap_over_lambda"] for t in trials)
    report = _report(
        "nystrom", config,
        bounds_part={"max_gap_over_lambda": worst, "trials": trials},
        ledger_part=trials[-1]["ledger"],
    )
    _emit_json(report, args.out)
    return EXIT_OK


def _cmd_rownorm(args) -> int:
    config = _experiment_config(args)

    def one(trial: int) -> dict:
        cfg_t = _trial_config(config, trial)
        inst = generate.generate(cfg_t)
        ledger = qsim.CostLedger()
        rng = np.random.default_rng(cfg_t.seed)
        sk = rownorm.preprocess(inst, cfg_t.lam, cfg_t.epsilon, cfg_t.backend,
                                ledger, rng)
        estimated = rownorm.query_all(sk)
        exact = oracle.normalization_exact(inst)
        a_norm = linalg.norms(oracle.attention_matrix(inst)).spectral
        bound = cfg_t.epsilon * (a_norm + cfg_t.lam) + cfg_t.lam * math.sqrt(cfg_t.n)
        max_err = float(np.abs(estimated - exact).max())
        return {
            "seed": cfg_t.seed,
            "sample_size": sk.s,
            "max_abs_error": max_err,
            "error_bound": bound,
            "within_bound": max_err <= bound,
            "ledger": ledger.snapshot(),
        }

    trials = _run_trials(one, config.trials)
    report = _report(
        "rownorm", config,
        bounds_part={
            "trials_within_bound": sum(t["within_bound"] for t in trials),
            "trials": trials,
        },
        ledger_part=trials[-1]["ledger"],
    )
    _emit_json(report, args.out)
    return EXIT_OK


def _cmd_amm(args) -> int:
    config = _experiment_config(args)

    def one(trial: int) -> dict:
        cfg_t = _trial_config(config, trial)
        inst = generate.generate(cfg_t)
        ledger = qsim.CostLedger()
        rng = np.random.default_rng(cfg_t.seed)
        sk = amm_mod.build(inst.V, cfg_t.epsilon, rng, ledger)
        b = np.random.default_rng([cfg_t.seed, 1]).normal(
            size=(cfg_t.n, max(1, cfg_t.d - 1)))
        err = amm_mod.amm_error(inst.V, b, sk.sample)
        return {
            "seed": cfg_t.seed,
            "alpha": sk.alpha,
            "s_target": sk.s_target,
            "sample_size": sk.sample.size,
            "normalized_error": err,
            "within_eps": err <= cfg_t.epsilon,
            "ledger": ledger.snapshot(),
        }

    trials = _run_trials(one, config.trials)
    report = _report(
        "amm", config,
        bounds_part={
            "trials_within_eps": sum(t["within_eps"] for t in trials),
            "trials": trials,
        },
        ledger_part=trials[-1]["ledger"],
    )
    _emit_json(report, args.out)
    return EXIT_OK


def _cmd_attend(args) -> int:
    config = _experiment_config(args)

    def one(trial: int) -> dict:
        cfg_t = _trial_config(config, trial)
        inst = generate.generate(cfg_t)
        ledger = qsim.CostLedger()
        rng = np.random.default_rng(cfg_t.seed)
        sk = qattention.preprocess(inst, cfg_t.lam, cfg_t.epsilon, cfg_t.backend,
                                   rng, ledger)
        rows = np.vstack([qattention.query(sk, i) for i in range(cfg_t.n)])
        exact = oracle.attention_exact(inst)
        rel_err = float(np.linalg.norm(rows - exact) / np.linalg.norm(exact))
        bound = qattention.main_bound(inst, sk, cfg_t.epsilon, cfg_t.lam)
        return {
            "seed": cfg_t.seed,
            "s_E": sk.s_e,
            "s_V": sk.s_v,
            "relative_frobenius_error": rel_err,
            "assumption_ok": bound.assumption_ok,
            "beta": bound.beta,
            "bound_lhs": bound.lhs,
            "bound_rhs": bound.rhs,
            "bound_holds": (not bound.assumption_ok) or bound.lhs <= bound.rhs,
            "ledger": ledger.snapshot(),
        }

    trials = _run_trials(one, config.trials)
    report = _report(
        "attend", config,
        bounds_part={
            "trials_bound_holds": sum(t["bound_holds"] for t in trials),
            "trials": trials,
        },
        ledger_part=trials[-1]["ledger"],
    )
    _emit_json(report, args.out)
    return EXIT_OK


def _cmd_metrics(args) -> int:
    config = _experiment_config(args)

    def one(trial: int) -> dict:
        cfg_t = _trial_config(config, trial)
        inst = generate.generate(cfg_t)
        row = metrics_mod.metrics(inst).as_dict()
        row["seed"] = cfg_t.seed
        return row

    trials = _run_trials(one, config.trials)
    keys = [k for k in trials[0] if k != "seed"]
    mean = {k: float(np.mean([t[k] for t in trials])) for k in keys}
    if args.format == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["seed"] + keys)
        for t in trials:
            writer.writerow([t["seed"]] + [repr(float(t[k])) for k in keys])
        _emit(buf.getvalue(), args.out)
        return EXIT_OK
    report = _report("metrics", config,
                     metrics_part={"mean": mean, "trials": trials})
    _emit_json(report, args.out)
    return EXIT_OK


def _cmd_scale_study(args) -> int:
    config = _experiment_config(args)
    if config.generator.kind == "gaussian":
        config = replace(config, generator=replace(config.generator, kind="clustered"))
    n_list = [int(tok) for tok in args.n_list.split(",") if tok]
    csv_path = args.out if args.format == "csv" else None
    study = metrics_mod.scaling_study(config, n_list, out_path=csv_path)
    if args.format == "csv":
        if not args.out:
            buf = io.StringIO()
            writer = csv.writer(buf)
            writer.writerow(["n", "modeled_quantum_queries", "kernel_evals", "s_E", "s_V"])
            for r in study.rows:
                writer.writerow([r.n, repr(r.modeled_quantum_queries),
                                 r.kernel_evals, r.s_e, r.s_v])
            _emit(buf.getvalue(), None)
        return EXIT_OK
    report = _report("scale-study", config, bounds_part=study.as_dict())
    _emit_json(report, args.out)
    return EXIT_OK


def _cmd_selfcheck(args) -> int:
    config = _experiment_config(args)
    checks = []
    rng = np.random.default_rng(config.seed)

    cfg_small = replace(config, n=8, d=3)
    inst = generate.generate(cfg_small)
    ledger = qsim.CostLedger()
    sk = qattention.preprocess(inst, cfg_small.lam, cfg_small.epsilon,
                               qsim.MeanEstimatorConfig(backend="exact",
                                                        epsilon=cfg_small.epsilon,
                                                        seed=cfg_small.seed),
                               np.random.default_rng(cfg_small.seed), ledger,
                               full_sampling=True)
    rows = np.vstack([qattention.query(sk, i) for i in range(cfg_small.n)])
    exact = oracle.attention_exact(inst)
    rel = float(np.linalg.norm(rows - exact) / np.linalg.norm(exact))
    checks.append({"name": "zero_approximation_identity", "ok": rel <= 1e-6,
                   "detail": {"relative_error": rel}})

    worst = 0.0
    for _ in range(50):
        m = rng.normal(size=(10, 10))
        m = m + m.T
        nm = linalg.norms(m)
        worst = max(worst, nm.inf_row_l1 - math.sqrt(10) * nm.spectral)
    checks.append({"name": "row_l1_vs_spectral", "ok": worst <= 1e-9,
                   "detail": {"worst_violation": worst}})

    worst = 0.0
    for _ in range(100):
        dvec = rng.uniform(0.5, 2.0, size=6)
        eps_pert = 0.9 / (1.0 / dvec.min())
        pert = rng.normal(size=(6, 6))
        pert *= eps_pert / linalg.norms(pert).spectral
        c = np.diag(dvec) + pert
        bound = qattention.inverse_perturb_bound(1.0 / dvec.min(), eps_pert)
        worst = max(worst, linalg.norms(np.linalg.inv(c)).spectral - bound)
    checks.append({"name": "inverse_perturbation_bound", "ok": worst <= 1e-9,
                   "detail": {"worst_violation": worst}})

    worst = 0.0
    for _ in range(50):
        u1 = rng.normal(size=(12, 4))
        u2 = rng.normal(size=(12, 4))
        x = rng.normal(size=4)
        lhs, rhs = rownorm.energy_transfer_check(u1, u2, x)
        worst = max(worst, lhs - rhs)
    checks.append({"name": "factor_energy_transfer", "ok": worst <= 1e-9,
                   "detail": {"worst_violation": worst}})

    ok_all = all(c["ok"] for c in checks)
    report = _report("selfcheck", config, bounds_part={"checks": checks, "ok": ok_all})
    _emit_json(report, args.out)
    return EXIT_OK if ok_all else EXIT_BOUND_VIOLATION


_HANDLERS = {
    "gen": _cmd_gen,
    "exact": _cmd_exact,
    "nystrom": _cmd_nystrom,
    "rownorm": _cmd_rownorm,
    "amm": _cmd_amm,
    "attend": _cmd_attend,
    "metrics": _cmd_metrics,
    "scale-study": _cmd_scale_study,
    "selfcheck": _cmd_selfcheck,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except (ValueError, MatrixFileError, FileNotFoundError, OverflowError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())

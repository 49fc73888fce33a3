"""Batch command line front end.

    repmart simulate   --plan P | --config ESG.json  --seed S --n N --out DIR
    repmart fit        --data DIR --config FIT.json --out DIR [--warm-start MODEL]
    repmart evaluate   --model MODEL --data DIR --t 1 --out DIR
    repmart experiment --plan P --out DIR [--resume] [--threads K]
    repmart report     --out DIR [--metric mape_es]

Exit codes: 0 success, 2 validation error, 3 numerical failure,
4 partial completion.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict

import numpy as np

from . import esg as esg_mod
from . import io as rio
from . import metrics as mt
from .esg import ConfigError, EsgConfig
from .features import BasisTooLargeError, check_basis_size
from .fit import FitConfig, FitError, ReplicatingMartingale, TrainingSet, fit
from .portfolios import call_value_closed_form, make_portfolio
from .risk import NestedMcConfig, delta_v, eval_value_process, expected_shortfall, nested_mc, value_at_risk

log = logging.getLogger("repmart")

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_PARTIAL = 0, 2, 3, 4
DEFAULT_BASIS_CAP = 20_000


class ValidationError(ValueError):
    pass


# ---------------------------------------------------------------------------
# plans


def load_plan(path) -> dict:
    plan = rio.load_json(path)
    base = os.path.dirname(os.path.abspath(path))
    if isinstance(plan.get("esg"), str):
        plan["esg"] = rio.load_json(os.path.join(base, plan["esg"]))
    return validate_plan(plan)


def validate_plan(plan: dict) -> dict:
    plan = dict(plan)
    if plan.get("portfolio") not in ("european_call", "variable_annuity"):
        raise ValidationError(f"plan portfolio must be european_call or variable_annuity, got {plan.get('portfolio')!r}")
    plan.setdefault("T", 5)
    plan.setdefault("seed", 0)
    plan.setdefault("R", 20)
    plan.setdefault("sample_sizes", [1000])
    plan.setdefault("methods", [])
    plan.setdefault("benchmark", {})
    plan["esg_config"] = esg_config_for(plan)
    for m in plan["methods"]:
        mt.MethodSpec.from_dict(m)
    if int(plan["R"]) < 1 or not plan["sample_sizes"]:
        raise ValidationError("plan needs R >= 1 and at least one sample size")
    return plan


def esg_config_for(plan: dict) -> EsgConfig:
    d = 3 if plan["portfolio"] == "european_call" else 5
    data = dict(plan.get("esg") or {})
    data.setdefault("T", int(plan["T"]))
    data.setdefault("d", d)
    cfg = EsgConfig.from_dict(data)
    if cfg.T < int(plan["T"]):
        raise ValidationError(f"ESG horizon {cfg.T} shorter than plan maturity {plan['T']}")
    return cfg


def portfolio_for(plan: dict):
    kw = dict(plan.get("portfolio_options") or {})
    return make_portfolio(plan["portfolio"], plan["esg_config"], int(plan["T"]), **kw)


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(args) -> int:
    if args.plan:
        plan = load_plan(args.plan)
    else:
        if not args.portfolio:
            raise ValidationError("simulate needs --plan or --portfolio")
        plan = {"portfolio": args.portfolio, "T": args.T or 5}
        if args.config:
            plan["esg"] = rio.load_json(args.config)
        plan = validate_plan(plan)
    seed = args.seed if args.seed is not None else int(plan["seed"])
    n = args.n or int(plan.get("n_simulate", 1000))
    port = portfolio_for(plan)
    cfg = plan["esg_config"]
    if args.lc_table:
        cfg = cfg.replace(lc_table=esg_mod.load_lc_table(args.lc_table))
        plan["esg_config"] = cfg
        port = portfolio_for(plan)
    x = esg_mod.sample_driver(n, port.T, port.d, [seed, 0x73696D])
    flows = port.cashflows(x.data)
    os.makedirs(args.out, exist_ok=True)
    drv = os.path.join(args.out, "drivers.csv")
    cfs = os.path.join(args.out, "cashflows.csv")
    rio.write_matrix_csv(drv, rio.driver_header(port.T, port.d), x.flat())
    ids = np.arange(n, dtype=float)[:, None]
    rio.write_matrix_csv(cfs, rio.cashflow_header(port.T), np.hstack([ids, flows.zeta, flows.terminal[:, None]]))
    manifest = dict(
        kind="dataset", portfolio=plan["portfolio"], T=port.T, d=port.d, n=n, seed=seed,
        esg=cfg.to_dict(), config_hash=cfg.config_hash(),
        files={"drivers": "drivers.csv", "cashflows": "cashflows.csv"},
        sha256={"drivers": rio.file_sha256(drv), "cashflows": rio.file_sha256(cfs)},
    )
    rio.dump_json(os.path.join(args.out, "manifest.json"), manifest)
    print(f"wrote {n} paths (T={port.T}, d={port.d}) to {args.out}")
    return EXIT_OK


def load_dataset(path) -> tuple[dict, np.ndarray, np.ndarray]:
    manifest = rio.load_json(os.path.join(path, "manifest.json"))
    T, d = int(manifest["T"]), int(manifest["d"])
    _, x = rio.read_matrix_csv(os.path.join(path, manifest["files"]["drivers"]), rio.driver_header(T, d))
    _, z = rio.read_matrix_csv(os.path.join(path, manifest["files"]["cashflows"]), rio.cashflow_header(T))
    if x.shape[0] != z.shape[0]:
        raise ValidationError(f"{x.shape[0]} driver rows but {z.shape[0]} cash-flow rows")
    zeta, terminal = z[:, 1:-1], z[:, -1]
    if not np.allclose(zeta.sum(axis=1), terminal, rtol=1e-12, atol=1e-9):
        raise ValidationError("cash-flow terminal column is not the row sum of zeta")
    return manifest, x, zeta


# ---------------------------------------------------------------------------
# fit / evaluate


def cmd_fit(args) -> int:
    raw = rio.load_json(args.config) if args.config else {}
    t = int(raw.pop("t", 1))
    expect = raw.pop("dims", None)
    if args.seed is not None:
        raw["seed"] = args.seed
    cfg = FitConfig.from_dict(raw)
    manifest = rio.load_json(os.path.join(args.data, "manifest.json"))
    T, d = int(manifest["T"]), int(manifest["d"])
    if expect is not None and (int(expect.get("T", T)), int(expect.get("d", d))) != (T, d):
        raise ValidationError(f"fit config expects (T, d) = ({expect.get('T')}, {expect.get('d')}), dataset has ({T}, {d})")
    cap = None if args.allow_large_basis else args.basis_cap
    cfg.max_basis = cap
    if cfg.family in ("full_hermite", "lasso_full_poly"):
        q = d * (T if cfg.mode == "regress_later" else t)
        check_basis_size(q, cfg.delta, cap)
    if cfg.family == "poly_ldr" and cfg.p > d * T:
        raise ValidationError(f"p={cfg.p} exceeds d*T={d * T}")
    warm = None
    if args.warm_start:
        warm = ReplicatingMartingale.load(args.warm_start)
        if warm.spec.d != d or warm.spec.T != T:
            raise ValidationError("warm-start model dimensions differ from the dataset")
    _, x, z = load_dataset(args.data)
    train = TrainingSet(x, z.sum(axis=1), d, T)
    model = fit(train, cfg, t=t, warm_start=warm)
    os.makedirs(args.out, exist_ok=True)
    model.save(os.path.join(args.out, "model.json"))
    hist = model.diagnostics.get("loss_history", [])
    with open(os.path.join(args.out, "training_log.csv"), "w") as fh:
        fh.write("iteration,loss\n")
        for i, v in enumerate(hist):
            fh.write(f"{i},{float(v)!r}\n")
    info = dict(kind="model", dataset=os.path.abspath(args.data), dataset_hash=manifest.get("config_hash"),
                fit=cfg.to_dict(), t=t, v0=model.v0,
                diagnostics={k: v for k, v in model.diagnostics.items() if k != "loss_history"})
    rio.dump_json(os.path.join(args.out, "fit_manifest.json"), _plain(info))
    print(f"fitted {cfg.family} ({cfg.mode}); V0 = {model.v0:.6g}; residual = {model.diagnostics.get('residual', float('nan')):.6g}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    model = ReplicatingMartingale.load(args.model)
    manifest, x, _ = load_dataset(args.data)
    T, d, t = int(manifest["T"]), int(manifest["d"]), args.t
    if model.spec.d != d:
        raise ValidationError(f"model has d={model.spec.d}, dataset d={d}")
    if not 0 <= t <= T:
        raise ValidationError(f"t={t} outside [0, {T}]")
    dist = eval_value_process(model, x[:, : t * d], t)
    losses = delta_v(dist, dist.v0)
    os.makedirs(args.out, exist_ok=True)
    dist.to_csv(os.path.join(args.out, "values.csv"))
    summary = dict(t=t, v0=dist.v0, n=dist.n, alpha=args.alpha,
                   var=value_at_risk(losses, args.alpha), es=expected_shortfall(losses, args.alpha))
    rio.dump_json(os.path.join(args.out, "risk.json"), summary)
    print(f"V0 = {dist.v0:.6g}  VaR = {summary['var']:.6g}  ES = {summary['es']:.6g}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# experiment / report


def build_benchmark(plan: dict, port, out_dir: str | None = None):
    spec = dict(plan.get("benchmark") or {})
    t = int(spec.get("t", 1))
    alpha = float(spec.get("alpha", 0.99))
    n_val = int(spec.get("n_validation", 100_000))
    seed = int(plan["seed"])
    prefix = esg_mod.sample_driver(n_val, port.T, port.d, [seed, 0x76616C]).data[:, :t]
    kind = spec.get("kind", "closed_form" if plan["portfolio"] == "european_call" else "nested_mc")
    if kind == "closed_form":
        if plan["portfolio"] != "european_call":
            raise ValidationError("closed-form benchmark exists only for the European call")
        values = call_value_closed_form(prefix, t, port.esg, port.spec)
        v0 = float(call_value_closed_form(np.zeros((1, 0, port.d)), 0, port.esg, port.spec)[0])
    elif kind == "nested_mc":
        n_inner = int(spec.get("n_inner", 1000))
        dist = nested_mc(port, NestedMcConfig(n_val, n_inner, t, [seed, 0x62656E6368]), outer_prefix=prefix)
        values = dist.values
        n0 = int(spec.get("n_v0", 1_000_000))
        v0 = float(port.terminal(esg_mod.sample_driver(n0, port.T, port.d, [seed, 0x7630]).data).mean())
    else:
        raise ValidationError(f"unknown benchmark kind {kind!r}")
    provenance = dict(kind=kind, n_validation=n_val, seed=seed, config_hash=port.esg.config_hash(), spec=spec)
    dataset_id = f"{port.esg.config_hash()}-{seed}-{n_val}-t{t}"
    return mt.BenchmarkDistribution.from_values(v0, values, t, alpha, dataset_id, provenance), prefix


def _cell_name(method: str, n: int) -> str:
    safe = "".join(c if c.isalnum() else "_" for c in method)
    return f"{safe}__{n}.json"


def _result_to_dict(res: mt.MacroRunResult) -> dict:
    return _plain(dict(method=res.method, family=res.family, samples=res.samples, maturity=res.maturity,
                       dataset_id=res.dataset_id, reps=[asdict(r) for r in res.reps]))


def _result_from_dict(data: dict) -> mt.MacroRunResult:
    reps = [mt.Repetition(**r) for r in data["reps"]]
    return mt.MacroRunResult(data["method"], data["family"], data["samples"], data["maturity"], reps, data["dataset_id"])


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def resolve_threads(arg) -> int:
    if arg is not None:
        return max(1, int(arg))
    env = os.environ.get("REPMART_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValidationError(f"REPMART_THREADS must be an integer, got {env!r}") from None
    return 1


def cmd_experiment(args) -> int:
    plan = load_plan(args.plan)
    if args.seed is not None:
        plan["seed"] = args.seed
    if not plan["methods"]:
        raise ValidationError("plan lists no methods")
    port = portfolio_for(plan)
    out = args.out
    cells_dir = os.path.join(out, "cells")
    os.makedirs(cells_dir, exist_ok=True)
    bench, prefix = build_benchmark(plan, port)
    manifest = dict(kind="experiment", plan=_plain({k: v for k, v in plan.items() if k != "esg_config"}),
                    esg=port.esg.to_dict(), config_hash=port.esg.config_hash(), benchmark=dict(
                        v0=bench.v0_bench, es=bench.es_bench, dataset_id=bench.dataset_id, **bench.provenance))
    manifest_path = os.path.join(out, "manifest.json")
    if args.resume and os.path.exists(manifest_path):
        old = rio.load_json(manifest_path)
        if old.get("config_hash") != manifest["config_hash"] or old.get("plan") != manifest["plan"]:
            raise ValidationError("cannot resume: plan or ESG config changed since the first run")
    rio.dump_json(manifest_path, _plain(manifest))

    jobs = []
    for m in plan["methods"]:
        method = mt.MethodSpec.from_dict(m)
        for n in plan["sample_sizes"]:
            path = os.path.join(cells_dir, _cell_name(method.name, int(n)))
            if args.resume and os.path.exists(path):
                log.info("skipping completed cell %s", os.path.basename(path))
                continue
            jobs.append((method, int(n), path))

    def run(job):
        method, n, path = job
        rep = mt.run_macro_experiment(method, [n], int(plan["R"]), bench, port, prefix, int(plan["seed"]))
        return path, rep.results[0]

    threads = resolve_threads(args.threads)
    if threads > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(threads) as pool:
            done = list(pool.map(run, jobs))
    else:
        done = [run(j) for j in jobs]
    for path, res in done:  # single writer
        rio.dump_json(path, _result_to_dict(res))

    report = assemble_report(out, plan, bench)
    failed = sum(int(r["value"]) for r in report.rows if r["metric"] == "failed_reps")
    print(report.text_table("mape_es"))
    return EXIT_PARTIAL if failed else EXIT_OK


def assemble_report(out: str, plan: dict, bench) -> mt.RiskReport:
    report = mt.RiskReport()
    for m in plan["methods"]:
        for n in plan["sample_sizes"]:
            path = os.path.join(out, "cells", _cell_name(m["name"], int(n)))
            report.add(_result_from_dict(rio.load_json(path)), bench)
    report.to_csv(os.path.join(out, "report.csv"))
    mt.write_boxplot(os.path.join(out, "boxplot.csv"), report.boxplot_rows(bench.es_bench))
    with open(os.path.join(out, "tables.txt"), "w") as fh:
        for metric in ("mape_pv", "mape_es", "mean_rel_l1", "seconds"):
            fh.write(report.text_table(metric) + "\n\n")
    return report


def cmd_report(args) -> int:
    rows = mt.read_report_rows(os.path.join(args.out, "report.csv"))
    print(mt.format_table(rows, args.metric))
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="repmart", description="Replicating martingale valuation and risk studies.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--plan")
        sp.add_argument("--config")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", required=True)
        sp.add_argument("--resume", action="store_true")
        sp.add_argument("--threads", type=int)

    s = sub.add_parser("simulate", help="sample drivers and cash flows")
    common(s)
    s.add_argument("--portfolio", choices=["european_call", "variable_annuity"])
    s.add_argument("--T", type=int)
    s.add_argument("--n", type=int)
    s.add_argument("--lc-table", help="CSV override of the Lee-Carter table")
    s.set_defaults(func=cmd_simulate)

    f = sub.add_parser("fit", help="fit a replicating martingale to a dataset")
    common(f)
    f.add_argument("--data", required=True)
    f.add_argument("--warm-start")
    f.add_argument("--basis-cap", type=int, default=DEFAULT_BASIS_CAP)
    f.add_argument("--allow-large-basis", action="store_true")
    f.set_defaults(func=cmd_fit)

    e = sub.add_parser("evaluate", help="value process and risk measures on a dataset")
    common(e)
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--t", type=int, default=1)
    e.add_argument("--alpha", type=float, default=0.99)
    e.set_defaults(func=cmd_evaluate)

    x = sub.add_parser("experiment", help="run macro-run experiments from a plan")
    common(x)
    x.set_defaults(func=cmd_experiment)

    r = sub.add_parser("report", help="print tables from an experiment directory")
    common(r)
    r.add_argument("--metric", default="mape_es")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    if args.command == "experiment" and not args.plan:
        print("error: experiment needs --plan", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        return args.func(args)
    except (FitError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ValidationError, ConfigError, BasisTooLargeError, rio.CsvParseError, ValueError, KeyError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())

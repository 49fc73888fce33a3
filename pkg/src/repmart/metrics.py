"""Macro-run quality metrics: MApE of PV and ES, mean relative L1.

Every method is evaluated on one shared validation set of outer prefixes
per (portfolio, T); the benchmark carries the id of that set and the
metrics refuse results computed on a different one.
"""
from __future__ import annotations

import csv
import logging
import time
import zlib
from dataclasses import dataclass, field

import numpy as np

from . import esg as esg_mod
from .fit import FitConfig, TrainingSet, fit_regress_later, fit_regress_now
from .risk import (DEFAULT_INNER_GRID, NestedMcConfig, delta_v, expected_shortfall, nested_mc,
                   split_search)

log = logging.getLogger(__name__)

# column order of the printed tables
METHOD_COLUMNS = ("nMC", "regress-now poly", "regress-later poly", "LDR", "NN-now", "NN-later")


@dataclass
class BenchmarkDistribution:
    v0_bench: float
    values_bench: np.ndarray  # V_t on the shared validation prefixes
    es_bench: float
    t: int = 1
    alpha: float = 0.99
    dataset_id: str = ""
    provenance: dict = field(default_factory=dict)

    @classmethod
    def from_values(cls, v0, values, t=1, alpha=0.99, dataset_id="", provenance=None):
        values = np.asarray(values, dtype=float)
        es = expected_shortfall(delta_v(values, v0), alpha)
        return cls(float(v0), values, es, t, alpha, dataset_id, provenance or {})

    def check(self) -> None:
        es = expected_shortfall(delta_v(self.values_bench, self.v0_bench), self.alpha)
        if not np.isclose(es, self.es_bench, rtol=1e-12, atol=0):
            raise ValueError(f"benchmark ES {self.es_bench} disagrees with recomputed {es}")


@dataclass
class Repetition:
    v0_hat: float = np.nan
    es_hat: float = np.nan
    l1_num: float = np.nan  # mean |V_hat_t - V_t| over the validation set
    seconds: float = 0.0
    diagnostics: dict = field(default_factory=dict)
    failed: bool = False
    error: str = ""


@dataclass
class MacroRunResult:
    method: str
    family: str
    samples: int
    maturity: int
    reps: list
    dataset_id: str = ""

    def __post_init__(self):
        if len(self.reps) < 1:
            raise ValueError("a macro-run result needs R >= 1 repetitions")

    def ok(self) -> list:
        return [r for r in self.reps if not r.failed]


def _ok_reps(results):
    reps = results.ok() if isinstance(results, MacroRunResult) else list(results)
    if not reps:
        raise ValueError("no successful repetitions to aggregate")
    return reps


def mape_pv(results, bench: BenchmarkDistribution) -> float:
    if bench.v0_bench == 0:
        raise ValueError("benchmark present value is zero")
    est = np.array([r.v0_hat for r in _ok_reps(results)])
    return 100.0 * float(np.mean(np.abs(est - bench.v0_bench))) / abs(bench.v0_bench)


def mape_es(results, bench: BenchmarkDistribution) -> float:
    if not bench.es_bench > 0:
        raise ValueError(f"benchmark ES must be positive, got {bench.es_bench}")
    est = np.array([r.es_hat for r in _ok_reps(results)])
    return 100.0 * float(np.mean(np.abs(est - bench.es_bench))) / bench.es_bench


def mean_rel_l1(results, bench: BenchmarkDistribution) -> float:
    if isinstance(results, MacroRunResult) and results.dataset_id != bench.dataset_id:
        raise ValueError(f"results were evaluated on {results.dataset_id!r}, benchmark on {bench.dataset_id!r}")
    if bench.values_bench is None or bench.values_bench.size == 0:
        raise ValueError("benchmark has no shared validation values")
    denom = float(np.mean(np.abs(bench.values_bench)))
    if denom <= 0:
        raise ValueError("benchmark E|V_t| is zero")
    num = np.array([r.l1_num for r in _ok_reps(results)])
    if np.isnan(num).any():
        raise ValueError("some repetitions were not evaluated on the shared validation set")
    return 100.0 * float(np.mean(num)) / denom


# ---------------------------------------------------------------------------
# experiment driver


@dataclass
class MethodSpec:
    """One table column: an estimation strategy plus its fit settings."""

    name: str
    kind: str  # regress_later | regress_now | nested_mc
    family: str = "full_hermite"
    fit: dict = field(default_factory=dict)
    inner_grid: tuple = DEFAULT_INNER_GRID

    def fit_config(self, seed: int) -> FitConfig:
        mode = "regress_now" if self.kind == "regress_now" else "regress_later"
        return FitConfig(mode=mode, family=self.family, seed=seed, **self.fit)

    def to_dict(self) -> dict:
        return dict(name=self.name, kind=self.kind, family=self.family, fit=dict(self.fit),
                    inner_grid=list(self.inner_grid))

    @classmethod
    def from_dict(cls, data: dict) -> "MethodSpec":
        data = dict(data)
        if "inner_grid" in data:
            data["inner_grid"] = tuple(data["inner_grid"])
        if data.get("kind") not in ("regress_later", "regress_now", "nested_mc"):
            raise ValueError(f"unknown method kind {data.get('kind')!r}")
        return cls(**data)


def derive_seed(master: int, *parts) -> list[int]:
    """Seed words from a master seed and labels; stable across runs."""
    words = [int(master)]
    for p in parts:
        words.append(zlib.crc32(p.encode()) if isinstance(p, str) else int(p))
    return words


@dataclass
class RiskReport:
    rows: list = field(default_factory=list)  # dicts: method, family, samples, maturity, metric, value
    results: list = field(default_factory=list)

    def add(self, result: MacroRunResult, bench: BenchmarkDistribution) -> None:
        self.results.append(result)
        base = dict(method=result.method, family=result.family, samples=result.samples, maturity=result.maturity)
        ok = result.ok()
        metrics = {}
        if ok:
            metrics["mape_pv"] = mape_pv(result, bench)
            metrics["mape_es"] = mape_es(result, bench)
            try:
                metrics["mean_rel_l1"] = mean_rel_l1(result, bench)
            except ValueError:
                metrics["mean_rel_l1"] = np.nan
            metrics["seconds"] = float(np.mean([r.seconds for r in ok]))
        metrics["failed_reps"] = len(result.reps) - len(ok)
        for k, v in metrics.items():
            self.rows.append(dict(base, metric=k, value=v))

    def value(self, method, samples, metric, maturity=None):
        for r in self.rows:
            if r["method"] == method and r["samples"] == samples and r["metric"] == metric:
                if maturity is None or r["maturity"] == maturity:
                    return r["value"]
        raise KeyError((method, samples, metric))

    def to_csv(self, path) -> None:
        write_report_rows(path, self.rows)

    def boxplot_rows(self, bench_es: dict) -> list:
        """Signed relative ES error per repetition, keyed by maturity."""
        out = []
        for res in self.results:
            es = bench_es[res.maturity] if isinstance(bench_es, dict) else bench_es
            for j, rep in enumerate(res.reps):
                if rep.failed:
                    continue
                out.append(dict(method=res.method, maturity=res.maturity, samples=res.samples,
                                repetition=j, rel_es_error=(rep.es_hat - es) / es))
        return out

    def text_table(self, metric: str = "mape_es") -> str:
        return format_table(self.rows, metric)


def write_report_rows(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["method", "family", "samples", "maturity", "metric", "value"])
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(float(v)) if k == "value" else v) for k, v in r.items()})


def read_report_rows(path) -> list:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    for r in rows:
        r["samples"] = int(r["samples"])
        r["maturity"] = int(r["maturity"])
        r["value"] = float(r["value"])
    return rows


def write_boxplot(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["method", "maturity", "samples", "repetition", "rel_es_error"])
        w.writeheader()
        for r in rows:
            w.writerow(dict(r, rel_es_error=repr(float(r["rel_es_error"]))))


def format_table(rows, metric: str = "mape_es") -> str:
    """Aligned text: methods as columns, (maturity, samples) as rows."""
    sel = [r for r in rows if r["metric"] == metric]
    present = {r["method"] for r in sel}
    methods = [m for m in METHOD_COLUMNS if m in present] + sorted(present - set(METHOD_COLUMNS))
    keys = sorted({(r["maturity"], r["samples"]) for r in sel})
    lookup = {(r["maturity"], r["samples"], r["method"]): r["value"] for r in sel}
    head = ["T", "samples"] + methods
    body = []
    for T, n in keys:
        cells = [str(T), f"{n:,}"]
        for m in methods:
            v = lookup.get((T, n, m))
            cells.append("-" if v is None or np.isnan(v) else f"{v:.2f}")
        body.append(cells)
    widths = [max(len(row[i]) for row in [head] + body) for i in range(len(head))]
    lines = [f"{metric}"]
    lines.append("  ".join(h.rjust(w) for h, w in zip(head, widths)))
    lines.append("  ".join("-" * w for w in widths))
    lines.extend("  ".join(c.rjust(w) for c, w in zip(row, widths)) for row in body)
    return "\n".join(lines)


def _one_repetition(method: MethodSpec, portfolio, n: int, seed, bench, val_prefix, split=None) -> Repetition:
    T, d, t = portfolio.T, portfolio.d, bench.t
    t0 = time.perf_counter()
    if method.kind == "nested_mc":
        n_outer, n_inner = split
        dist = nested_mc(portfolio, NestedMcConfig(n_outer, n_inner, t, seed))
        v0_hat, values = dist.v0, dist.values
        l1 = np.nan
        diag = dict(n_outer=n_outer, n_inner=n_inner)
    else:
        x = esg_mod.sample_driver(n, T, d, seed).data
        train = TrainingSet(x.reshape(n, -1), portfolio.terminal(x), d, T)
        cfg = method.fit_config(seed[-1] if isinstance(seed, list) else int(seed))
        if method.kind == "regress_later":
            model = fit_regress_later(train, cfg)
        else:
            model = fit_regress_now(train, t, cfg)
        v0_hat = model.v0
        values = model.value(val_prefix, t)
        l1 = float(np.mean(np.abs(values - bench.values_bench)))
        diag = {k: v for k, v in model.diagnostics.items() if k != "loss_history"}
    es_hat = expected_shortfall(delta_v(values, v0_hat), bench.alpha)
    return Repetition(float(v0_hat), es_hat, l1, time.perf_counter() - t0, diag)


def choose_nmc_split(portfolio, budget: int, bench: BenchmarkDistribution, R: int, grid, master_seed=0):
    """Optimal (n_outer, n_inner) for a budget, scored against the benchmark ES."""

    def estimator(n_outer, n_inner, rep):
        seed = derive_seed(master_seed, "split", budget, n_inner, rep)
        dist = nested_mc(portfolio, NestedMcConfig(n_outer, n_inner, bench.t, seed))
        return expected_shortfall(delta_v(dist.values, dist.v0), bench.alpha)

    return split_search(budget, grid, bench.es_bench, R, estimator)


def run_macro_experiment(method: MethodSpec, sample_sizes, R: int, bench: BenchmarkDistribution,
                         portfolio, val_prefix, master_seed: int = 0, on_result=None) -> RiskReport:
    """Fresh sample -> fit -> evaluate, R times per sample size.

    A failing repetition is recorded with its error and does not stop the run.
    ``on_result`` is called with each finished MacroRunResult (used for resume).
    """
    if R < 1:
        raise ValueError("R must be at least 1")
    report = RiskReport()
    for n in sample_sizes:
        split = None
        if method.kind == "nested_mc":
            split_res = choose_nmc_split(portfolio, n, bench, R, method.inner_grid, master_seed)
            split = (split_res.n_outer, split_res.n_inner)
            log.info("nMC budget %d: chose n_outer=%d n_inner=%d", n, *split)
        reps = []
        for j in range(R):
            seed = derive_seed(master_seed, method.name, n, j)
            try:
                reps.append(_one_repetition(method, portfolio, n, seed, bench, val_prefix, split))
            except Exception as exc:  # isolate the repetition
                log.warning("%s n=%d rep %d failed: %s", method.name, n, j, exc)
                reps.append(Repetition(failed=True, error=f"{type(exc).__name__}: {exc}"))
        res = MacroRunResult(method.name, method.family, n, portfolio.T, reps, bench.dataset_id)
        report.add(res, bench)
        if on_result is not None:
            on_result(res)
    return report

"""Metrics and experiment orchestration.

VCF (variance of counterfactuals) needs the generating SCM: for each of ``d``
conditioning rows the protected attribute is set to ``k`` values drawn from
its empirical marginal, descendants are replayed with the row's retained
noise, and the prediction variance over the ``k`` values is averaged.
"""
from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .graph import descendants
from .nn import Mlp
from .hscic import HscicState, hscic_sq, hsic
from .rng import stream
from .scm import ConfigurationError, SampleBatch, Scm, counterfactual_outputs, sample_observational
from .train import DivergenceError, TrainConfig, train_cip

RESULTS_HEADER = ["dgp", "gamma", "seed", "metric_name", "metric_value", "runtime_s"]


class Residual:
    """Input feature ``X - X_hat(regressors)`` from an auxiliary regression network."""

    def __init__(self, aux, x_name: str, regressors: list):
        self.aux = aux
        self.x_name = x_name
        self.regressors = list(regressors)

    def __call__(self, columns) -> np.ndarray:
        z = np.concatenate([columns[r] for r in self.regressors], axis=1)
        return columns[self.x_name] - self.aux.forward(z)

    def to_dict(self) -> dict:
        return {"x": self.x_name, "regressors": self.regressors, "model": self.aux.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "Residual":
        return cls(Mlp.from_dict(d["model"]), d["x"], d["regressors"])


class Predictor:
    """A fitted network plus the recipe turning data columns into its inputs.

    ``features`` maps derived input names to callables ``f(columns)``;
    every other input name is read straight from the columns.
    """

    def __init__(self, model, inputs: list, features: dict | None = None, kind: str = "cip"):
        self.model = model
        self.inputs = list(inputs)
        self.features = dict(features or {})
        self.kind = kind

    def design(self, columns: dict) -> np.ndarray:
        if not self.inputs:
            n = next(iter(columns.values())).shape[0]
            return np.zeros((n, 0))
        blocks = []
        for name in self.inputs:
            f = self.features.get(name)
            blocks.append(f(columns) if f is not None else columns[name])
        return np.concatenate(blocks, axis=1)

    def __call__(self, columns) -> np.ndarray:
        if isinstance(columns, SampleBatch):
            columns = columns.columns
        return self.model.forward(self.design(columns))

    def to_dict(self) -> dict:
        d = self.model.to_dict()
        d["inputs"] = self.inputs
        d["kind"] = self.kind
        d["features"] = {k: f.to_dict() for k, f in self.features.items()}
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Predictor":
        feats = {k: Residual.from_dict(v) for k, v in d.get("features", {}).items()}
        return cls(Mlp.from_dict(d), d["inputs"], feats, d.get("kind", "cip"))

    def save(self, path, meta: dict | None = None) -> None:
        d = self.to_dict()
        if meta:
            d["meta"] = meta
        with open(path, "w") as fh:
            json.dump(d, fh)

    @classmethod
    def load(cls, path) -> tuple["Predictor", dict]:
        with open(path) as fh:
            d = json.load(fh)
        return cls.from_dict(d), d.get("meta", {})


@dataclass
class EvalConfig:
    d: int = 1000
    k: int = 500
    seed: int = 0
    hscic_rows: int | None = 2000


@dataclass
class EvalReport:
    metric_name: str
    metric_value: float
    test_hscic: float
    vcf: float
    gamma: float = 0.0
    seed: int = 0
    runtime_s: float = 0.0

    def to_dict(self) -> dict:
        d = {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in asdict(self).items()}
        d[self.metric_name] = d["metric_value"]
        return d


def _variance_rows(p: np.ndarray) -> np.ndarray:
    """Population variance along axis 1, shifted by the first value so constant rows give exactly 0."""
    dev = p - p[:, :1]
    return np.maximum(np.mean(dev ** 2, axis=1) - np.mean(dev, axis=1) ** 2, 0.0)


def vcf(predictor, scm: Scm, batch: SampleBatch, d: int = 1000, k: int = 500, seed: int = 0,
        chunk_rows: int = 200_000) -> float:
    """Monte Carlo variance of counterfactual predictions.

    All ``d`` units share one set of ``k`` intervention values, so the result
    does not depend on the order of the units. Non-descendants of A keep their
    observed values.
    """
    n = batch.n
    if d > n or d < 1 or k < 1:
        raise ConfigurationError(f"need 1 <= d <= {n} rows and k >= 1 (got d={d}, k={k})")
    a_nodes = batch.roles["A"]
    if not a_nodes:
        raise ConfigurationError("batch has no A role")
    units = np.arange(n) if d == n else np.sort(stream(seed, "vcf", "units").choice(n, d, replace=False))
    draws = stream(seed, "vcf", "interventions").integers(0, n, size=k)
    # intervention values come from the rows sorted by A so row order does not matter
    a_all = np.concatenate([batch.columns[a] for a in a_nodes], axis=1)
    draws = np.lexsort(a_all.T[::-1])[draws]
    affected = descendants(scm.graph, a_nodes)
    total = np.zeros(d)
    per_chunk = max(1, chunk_rows // k)
    for start in range(0, d, per_chunk):
        u = units[start:start + per_chunk]
        m = len(u)
        rows = np.repeat(u, k)
        sub = batch.take(rows)
        assign = {a: np.tile(batch.columns[a][draws], (m, 1)) for a in a_nodes}
        cf = counterfactual_outputs(scm, sub, assign, [v for v in affected if v in sub.columns])
        cols = dict(sub.columns)
        cols.update(cf)
        pred = np.asarray(predictor(cols), dtype=float).reshape(m, k, -1)
        total[start:start + m] = np.mean([_variance_rows(pred[:, :, j]) for j in range(pred.shape[2])], axis=0)
    return float(np.mean(total))


def objective_units(predictor, pred: np.ndarray, cfg: TrainConfig) -> np.ndarray:
    """Predictions on the scale the training penalty saw (standardised targets when enabled)."""
    model = getattr(predictor, "model", None)
    if cfg.task == "regression_mse" and cfg.standardize and hasattr(model, "y_scale"):
        return (pred - model.y_shift) / model.y_scale
    return pred


def test_hscic(pred: np.ndarray, batch: SampleBatch, cfg: TrainConfig, rows: int | None = None,
               state: HscicState | None = None) -> float:
    """Mean squared HSCIC (or HSIC without conditioning columns) of predictions on ``batch``."""
    aw_cols, s_cols = cfg.penalty_columns(batch)
    n = batch.n if rows is None else min(rows, batch.n)
    aw, s = batch.matrix(aw_cols)[:n], batch.matrix(s_cols)[:n]
    pred = np.asarray(pred)[:n]
    if not s_cols or cfg.penalty == "hsic":
        return hsic(pred, aw, cfg.kernel_y, cfg.kernel_aw)
    state = state or HscicState(cfg.kernel_y, cfg.kernel_aw, cfg.kernel_s, cfg.lam,
                                literal_middle=cfg.literal_middle)
    return hscic_sq(state, pred, aw, s).mean


def evaluate(predictor, scm: Scm | None, test: SampleBatch, cfg: TrainConfig,
             eval_cfg: EvalConfig | None = None, gamma: float | None = None) -> EvalReport:
    """Predictive metric, test HSCIC and (when ``scm`` is given) VCF on held-out data."""
    eval_cfg = eval_cfg or EvalConfig()
    t0 = time.perf_counter()
    for r in ("A", "Y"):
        if not test.roles[r]:
            raise ConfigurationError(f"test batch has no {r} role")
    pred = predictor(test)
    y = test.role("Y")
    if cfg.task == "binary_ce":
        name, value = "accuracy", float(np.mean((pred >= 0.5) == (y >= 0.5)))
    else:
        name, value = "mse", float(np.mean((pred - y) ** 2))
    h = test_hscic(objective_units(predictor, pred, cfg), test, cfg, eval_cfg.hscic_rows)
    v = float("nan")
    if scm is not None:
        v = vcf(predictor, scm, test, min(eval_cfg.d, test.n), eval_cfg.k, eval_cfg.seed)
    return EvalReport(name, value, h, v, cfg.gamma if gamma is None else gamma, cfg.seed,
                      time.perf_counter() - t0)


def fit_and_evaluate(train: SampleBatch, test: SampleBatch, cfg: TrainConfig, scm: Scm | None,
                     eval_cfg: EvalConfig | None = None):
    t0 = time.perf_counter()
    model, hist = train_cip(train, cfg)
    pred = Predictor(model, cfg.input_columns(train))
    rep = evaluate(pred, scm, test, cfg, eval_cfg)
    rep.runtime_s = time.perf_counter() - t0
    return pred, hist, rep


# gamma selection

BENCHMARK_GAMMAS = (0.001, 0.01, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0)

@dataclass
class GammaSearchConfig:
    alpha: float = 0.1
    gamma_lo: float = 1e-4
    gamma_hi: float = 1e4
    max_iters: int = 20
    seeds: tuple = (0,)
    resolution: float = 0.25  # decades

    def __post_init__(self):
        if not (self.gamma_lo > 0 and self.gamma_hi > self.gamma_lo and self.alpha >= 0):
            raise ConfigurationError("need 0 < gamma_lo < gamma_hi and alpha >= 0")

    def grid(self) -> np.ndarray:
        lo, hi = math.log10(self.gamma_lo), math.log10(self.gamma_hi)
        steps = int(math.ceil((hi - lo) / self.resolution - 1e-9))
        return 10 ** np.minimum(lo + self.resolution * np.arange(steps + 1), hi)


@dataclass
class GammaSearchResult:
    gamma_star: float | None
    baseline: float
    reports: list = field(default_factory=list)
    feasible: bool = True


def _performance(train, test, cfg, seeds, scm=None, eval_cfg=None):
    reports = []
    for s in seeds:
        c = cfg.replace(seed=s)
        _, _, rep = fit_and_evaluate(train, test, c, scm, eval_cfg)
        reports.append(rep)
    return float(np.mean([r.metric_value for r in reports])), reports


def within_tolerance(metric_name: str, value: float, baseline: float, alpha: float) -> bool:
    if metric_name == "accuracy":
        return value >= baseline - alpha
    return value <= (1 + alpha) * baseline


def gamma_search(train: SampleBatch, test: SampleBatch, base_cfg: TrainConfig,
                 search: GammaSearchConfig, scm: Scm | None = None,
                 eval_cfg: EvalConfig | None = None) -> GammaSearchResult:
    """Largest gamma on a log grid whose predictive performance stays within ``alpha`` of gamma=0.

    Binary search over grid indices keeps an accepted lower end and a rejected
    upper end; when they become neighbours the accepted one is returned. If
    even ``gamma_lo`` is rejected the result is marked infeasible.
    """
    metric = "accuracy" if base_cfg.task == "binary_ce" else "mse"
    base, reps = _performance(train, test, base_cfg.replace(gamma=0.0), search.seeds, scm, eval_cfg)
    result = GammaSearchResult(None, base, list(reps))
    grid = search.grid()
    cache = {}

    def ok(j):
        if j not in cache:
            val, r = _performance(train, test, base_cfg.replace(gamma=float(grid[j])), search.seeds,
                                  scm, eval_cfg)
            result.reports.extend(r)
            cache[j] = within_tolerance(metric, val, base, search.alpha)
        return cache[j]

    hi = len(grid) - 1
    if ok(hi):
        result.gamma_star = float(grid[hi])
        return result
    if not ok(0):
        result.feasible = False
        return result
    lo, iters = 0, 0
    while hi - lo > 1 and iters < search.max_iters:
        mid = (lo + hi) // 2
        if ok(mid):
            lo = mid
        else:
            hi = mid
        iters += 1
    result.gamma_star = float(grid[lo])
    return result


# experiments

@dataclass
class ExperimentConfig:
    dgp: str = "synthetic_c1"
    dgp_params: dict = field(default_factory=dict)
    n: int = 10_000
    train_fraction: float = 0.8
    seeds: tuple = (0,)
    gammas: tuple = (0.0,)
    baselines: tuple = ()
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)


def make_data(cfg: ExperimentConfig, seed: int):
    from .dgp import dgp_catalog

    scm = dgp_catalog(cfg.dgp, **cfg.dgp_params)
    data = sample_observational(scm, cfg.n, seed)
    train, test = data.split(cfg.train_fraction, seed)
    return scm, train, test


def report_rows(dgp: str, rep: EvalReport, gamma, seed) -> list[dict]:
    rows = []
    for name, value in ((rep.metric_name, rep.metric_value), ("hscic", rep.test_hscic), ("vcf", rep.vcf)):
        rows.append({"dgp": dgp, "gamma": gamma, "seed": seed, "metric_name": name,
                     "metric_value": value, "runtime_s": round(rep.runtime_s, 3)})
    return rows


def run_cell(cfg: ExperimentConfig, seed: int, gamma=None, kind: str | None = None, save_dir=None) -> list[dict]:
    """One grid cell: a CIP fit at ``gamma`` or the baseline ``kind``. Failures become an ``error`` row."""
    from .baselines import train_baseline

    dgp = cfg.dgp if kind is None else f"{cfg.dgp}:{kind}"
    g_label = gamma if kind is None else ""
    t0 = time.perf_counter()
    try:
        scm, train, test = make_data(cfg, seed)
        ev = EvalConfig(cfg.eval.d, cfg.eval.k, seed, cfg.eval.hscic_rows)
        if kind is None:
            tcfg = cfg.train.replace(gamma=float(gamma), seed=seed)
            pred, _, rep = fit_and_evaluate(train, test, tcfg, scm, ev)
        else:
            pred, rep = train_baseline(kind, scm.graph, train, cfg.train.replace(seed=seed),
                                       scm=scm, test=test, eval_cfg=ev)
            rep.runtime_s = time.perf_counter() - t0
        if save_dir is not None:
            d = Path(save_dir) / (str(gamma) if kind is None else kind) / str(seed)
            d.mkdir(parents=True, exist_ok=True)
            pred.save(d / "model.json", {"dgp": cfg.dgp, "seed": seed, "gamma": gamma, "kind": kind or "cip"})
            with open(d / "report.json", "w") as fh:
                json.dump(rep.to_dict(), fh, indent=2)
        return report_rows(dgp, rep, g_label, seed)
    except (DivergenceError, ConfigurationError, ValueError, FloatingPointError, ArithmeticError) as exc:
        return [{"dgp": dgp, "gamma": g_label, "seed": seed, "metric_name": "error",
                 "metric_value": f"{type(exc).__name__}: {exc}",
                 "runtime_s": round(time.perf_counter() - t0, 3)}]


def _run_cell_star(args):
    return run_cell(*args)


def run_experiment(cfg: ExperimentConfig, out_csv=None, sink=None, jobs: int = 1, save_dir=None) -> list[dict]:
    """Train and evaluate every (gamma, seed) cell plus the requested baselines.

    Cells are independent; with ``jobs`` > 1 they run in worker processes and
    their rows reach ``sink`` (and the returned list) in completion order.
    Rows use the long results layout ``RESULTS_HEADER``; baseline rows carry
    ``dgp:kind`` and an empty gamma. A failing cell is recorded as an
    ``error`` row and the run continues.
    """
    cells = [(cfg, seed, gamma, None, save_dir) for seed in cfg.seeds for gamma in cfg.gammas]
    cells += [(cfg, seed, None, kind, save_dir) for seed in cfg.seeds for kind in cfg.baselines]
    rows = []

    def emit(new):
        rows.extend(new)
        if sink is not None:
            sink(new)

    if jobs > 1:
        from concurrent.futures import ProcessPoolExecutor, as_completed

        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for fut in as_completed([pool.submit(_run_cell_star, c) for c in cells]):
                emit(fut.result())
    else:
        for c in cells:
            emit(run_cell(*c))
    if out_csv is not None:
        write_results(rows, out_csv)
    return rows


def write_results(rows: list[dict], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=RESULTS_HEADER)
        w.writeheader()
        for r in rows:
            w.writerow({k: r.get(k, "") for k in RESULTS_HEADER})


def read_results(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def pivot(rows: list[dict]) -> dict:
    """``{(dgp, gamma, seed): {metric: value}}`` from long-format rows."""
    out = {}
    for r in rows:
        if r["metric_name"] == "error":
            continue
        key = (r["dgp"], str(r["gamma"]), str(r["seed"]))
        out.setdefault(key, {})[r["metric_name"]] = float(r["metric_value"])
    return out


def pareto_dominates(rows: list[dict], dgp: str, baseline: str, metric: str = "mse") -> list:
    """Gammas whose median metric and median VCF are both no worse than the baseline's medians."""
    table = pivot(rows)
    base = [v for (d, g, s), v in table.items() if d == f"{dgp}:{baseline}"]
    if not base:
        raise ConfigurationError(f"no rows for baseline {baseline!r}")
    b_m = np.median([v[metric] for v in base])
    b_v = np.median([v["vcf"] for v in base])
    by_gamma = {}
    for (d, g, s), v in table.items():
        if d == dgp:
            by_gamma.setdefault(g, []).append(v)
    out = []
    for g, vals in sorted(by_gamma.items(), key=lambda kv: float(kv[0])):
        if np.median([v[metric] for v in vals]) <= b_m and np.median([v["vcf"] for v in vals]) <= b_v:
            out.append(float(g))
    return out

"""Command-line interface.

Every command reads one nested YAML config (``--config``), applies
``--set dotted.key=value`` overrides and a few convenience flags, validates
the result against ``DEFAULTS`` (unknown keys are rejected) and then works
only from files. Exit codes: 0 success, 2 usage or schema error, 3 runtime or
numerical failure.
"""
from __future__ import annotations

import argparse
import copy
import csv
import json
import sys
from pathlib import Path

import numpy as np
import yaml

from .baselines import BASELINE_KINDS, train_baseline
from .dgp import DGP_NAMES, dgp_catalog
from .evaluation import (EvalConfig, ExperimentConfig, GammaSearchConfig, Predictor, RESULTS_HEADER,
                         evaluate, gamma_search, run_experiment)
from .graph import (GraphError, build_duplicate_graph, check_ci_criterion, d_separated,
                    is_valid_adjustment, load_graph)
from .scm import ConfigurationError, ReplayError, load_batch, sample_observational, save_batch
from .train import DivergenceError, TrainConfig, train_cip

DEFAULTS = {
    "experiment": "default",
    "out": "out",
    "dgp": {"name": "synthetic_c1", "params": {}},
    "data": {"n": 10000, "seeds": [0], "train_fraction": 0.8, "path": None},
    "model": "cip",
    "train": {k: v for k, v in TrainConfig().to_dict().items()
              if k not in ("seed", "inputs", "penalty_aw", "penalty_s")},
    "gammas": [0.0],
    "baselines": [],
    "search": {"alpha": 0.1, "gamma_lo": 1e-4, "gamma_hi": 1e4, "max_iters": 20, "seeds": [0]},
    "eval": {"d": 1000, "k": 500, "hscic_rows": 2000},
}
OPEN_KEYS = {"dgp.params"}  # free-form mappings


class UsageError(Exception):
    pass


def _validate(cfg, ref, prefix=""):
    if not isinstance(cfg, dict):
        raise UsageError(f"{prefix or 'config'} must be a mapping")
    for k, v in cfg.items():
        key = f"{prefix}{k}"
        if k not in ref:
            raise UsageError(f"unknown config key {key!r}")
        if isinstance(ref[k], dict) and key not in OPEN_KEYS:
            _validate(v, ref[k], key + ".")


def _merge(base, over):
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(base.get(k), dict):
            _merge(base[k], v)
        else:
            base[k] = v
    return base


def _set(cfg, dotted, value):
    keys = dotted.split(".")
    node = cfg
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise UsageError(f"cannot set {dotted!r}: {k!r} is not a section")
    node[keys[-1]] = value


def build_config(args) -> dict:
    user = {}
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                user = yaml.safe_load(fh) or {}
        except OSError as exc:
            raise UsageError(f"cannot read config: {exc}") from None
        except yaml.YAMLError as exc:
            raise UsageError(f"config is not valid YAML: {exc}") from None
        _validate(user, DEFAULTS)
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise UsageError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        over = {}
        _set(over, k.strip(), yaml.safe_load(v))
        _validate(over, DEFAULTS)
        _merge(user, over)
    flags = {"dgp": "dgp.name", "n": "data.n", "data": "data.path", "out": "out",
             "experiment": "experiment", "gamma": "gammas", "model": "model"}
    for attr, key in flags.items():
        v = getattr(args, attr, None)
        if v is not None:
            over = {}
            _set(over, key, [v] if attr == "gamma" else v)
            _merge(user, over)
    if getattr(args, "seed", None) is not None:
        _merge(user, {"data": {"seeds": [args.seed]}, "search": {"seeds": [args.seed]}})
    cfg = _merge(copy.deepcopy(DEFAULTS), user)
    _check_values(cfg)
    return cfg


def _check_values(cfg):
    if cfg["dgp"]["name"] not in DGP_NAMES:
        raise UsageError(f"unknown dgp {cfg['dgp']['name']!r}; choose from {', '.join(DGP_NAMES)}")
    if cfg["model"] != "cip" and cfg["model"] not in BASELINE_KINDS:
        raise UsageError(f"unknown model {cfg['model']!r}")
    for b in cfg["baselines"]:
        if b not in BASELINE_KINDS:
            raise UsageError(f"unknown baseline {b!r}")
    try:
        cfg["_train"] = TrainConfig(**cfg["train"])
        cfg["_search"] = GammaSearchConfig(**{**cfg["search"], "seeds": tuple(cfg["search"]["seeds"])})
        cfg["_eval"] = EvalConfig(**cfg["eval"])
        [float(g) for g in cfg["gammas"]]
        dgp_catalog(cfg["dgp"]["name"], **cfg["dgp"]["params"])
    except (TypeError, ValueError) as exc:
        raise UsageError(f"invalid config value: {exc}") from None


def _public(cfg) -> dict:
    return {k: v for k, v in cfg.items() if not k.startswith("_")}


def _echo_config(cfg, directory: Path):
    directory.mkdir(parents=True, exist_ok=True)
    with open(directory / "config.yaml", "w") as fh:
        yaml.safe_dump(_public(cfg), fh, sort_keys=True)


def _exp_config(cfg) -> ExperimentConfig:
    return ExperimentConfig(cfg["dgp"]["name"], dict(cfg["dgp"]["params"]), int(cfg["data"]["n"]),
                            float(cfg["data"]["train_fraction"]), tuple(cfg["data"]["seeds"]),
                            tuple(cfg["gammas"]), tuple(cfg["baselines"]), cfg["_train"], cfg["_eval"])


def _load_data(cfg, seed):
    """(scm or None, full batch) from ``data.path`` or by sampling the configured DGP."""
    path = cfg["data"]["path"]
    if path:
        if not Path(path).exists():
            raise UsageError(f"data file {path} does not exist")
        batch = load_batch(path)
        name = batch.meta.get("dgp")
        scm = dgp_catalog(name, **batch.meta.get("dgp_params", {})) if name in DGP_NAMES else None
        return scm, batch
    scm = dgp_catalog(cfg["dgp"]["name"], **cfg["dgp"]["params"])
    return scm, sample_observational(scm, int(cfg["data"]["n"]), seed)


def _print(obj):
    print(json.dumps(obj, indent=2, ensure_ascii=False, default=float))


# commands

def cmd_generate(cfg):
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    name = cfg["dgp"]["name"]
    for seed in cfg["data"]["seeds"]:
        scm = dgp_catalog(name, **cfg["dgp"]["params"])
        batch = sample_observational(scm, int(cfg["data"]["n"]), seed)
        stem = name if len(cfg["data"]["seeds"]) == 1 else f"{name}_seed{seed}"
        path = save_batch(batch, out / f"{stem}.csv", {"dgp_params": cfg["dgp"]["params"]})
        print(f"wrote {batch.n} rows (seed {seed}) to {path}")


def _cell_dir(cfg, gamma, seed) -> Path:
    return Path(cfg["out"]) / cfg["experiment"] / str(gamma) / str(seed)


def cmd_train(cfg):
    kind = cfg["model"]
    gammas = cfg["gammas"] if kind == "cip" else [kind]
    for seed in cfg["data"]["seeds"]:
        scm, batch = _load_data(cfg, seed)
        train, test = batch.split(cfg["data"]["train_fraction"], seed)
        tcfg = cfg["_train"].replace(seed=seed)
        for gamma in gammas:
            d = _cell_dir(cfg, gamma, seed)
            _echo_config(cfg, d)
            if kind == "cip":
                c = tcfg.replace(gamma=float(gamma))
                model, hist = train_cip(train, c, test=test)
                pred = Predictor(model, c.input_columns(train))
                with open(d / "history.csv", "w", newline="") as fh:
                    rows = hist.as_rows()
                    w = csv.DictWriter(fh, fieldnames=list(rows[0]))
                    w.writeheader()
                    w.writerows(rows)
                final = hist.records[-1].test_loss
            else:
                c = tcfg
                pred, _ = train_baseline(kind, batch_graph(scm, kind), train, c)
                final = None
            meta = {"data_seed": seed, "gamma": 0.0 if kind != "cip" else float(gamma), "kind": kind,
                    "train": c.to_dict(), "dgp": cfg["dgp"], "data": cfg["data"]}
            pred.save(d / "model.json", meta)
            msg = f"saved {d / 'model.json'}"
            if final is not None:
                msg += f" (final test loss {final:.6g})"
            print(msg)


def batch_graph(scm, kind):
    if scm is None and kind in ("cf1", "cf2"):
        raise UsageError(f"{kind} needs a catalog DGP for its graph")
    return None if scm is None else scm.graph


def cmd_eval(cfg, checkpoint):
    if not Path(checkpoint).exists():
        raise UsageError(f"checkpoint {checkpoint} does not exist")
    try:
        pred, meta = Predictor.load(checkpoint)
    except (KeyError, json.JSONDecodeError) as exc:
        raise UsageError(f"{checkpoint} is not a model checkpoint: {exc}") from None
    for k in ("dgp", "data"):
        if k in meta:
            cfg[k] = meta[k]
    seed = meta.get("data_seed", cfg["data"]["seeds"][0])
    scm, batch = _load_data(cfg, seed)
    _, test = batch.split(cfg["data"]["train_fraction"], seed)
    tcfg = TrainConfig(**meta["train"]) if "train" in meta else cfg["_train"]
    rep = evaluate(pred, scm, test, tcfg, cfg["_eval"], gamma=meta.get("gamma", tcfg.gamma))
    rep.seed = seed
    out = Path(checkpoint).with_name("eval.json")
    with open(out, "w") as fh:
        json.dump(rep.to_dict(), fh, indent=2)
    _print(rep.to_dict())


def cmd_sweep(cfg, jobs):
    top = Path(cfg["out"]) / cfg["experiment"]
    _echo_config(cfg, top)
    path = top / "results.csv"
    fh = open(path, "w", newline="")
    writer = csv.DictWriter(fh, fieldnames=RESULTS_HEADER)
    writer.writeheader()

    def sink(rows):
        for r in rows:
            writer.writerow({k: r.get(k, "") for k in RESULTS_HEADER})
        fh.flush()

    try:
        rows = run_experiment(_exp_config(cfg), sink=sink, jobs=jobs, save_dir=top)
    finally:
        fh.close()
    errors = [r for r in rows if r["metric_name"] == "error"]
    print(f"wrote {len(rows)} rows to {path}" + (f" ({len(errors)} failed cells)" if errors else ""))
    return 3 if errors and len(errors) * 3 >= len(rows) else 0


def cmd_gamma_search(cfg):
    seed = cfg["data"]["seeds"][0]
    scm, batch = _load_data(cfg, seed)
    train, test = batch.split(cfg["data"]["train_fraction"], seed)
    res = gamma_search(train, test, cfg["_train"], cfg["_search"], scm=None, eval_cfg=cfg["_eval"])
    top = Path(cfg["out"]) / cfg["experiment"]
    _echo_config(cfg, top)
    out = {"gamma_star": res.gamma_star, "feasible": res.feasible, "baseline": res.baseline,
           "reports": [r.to_dict() for r in res.reports]}
    with open(top / "gamma_search.json", "w") as fh:
        json.dump(out, fh, indent=2)
    _print({k: out[k] for k in ("gamma_star", "feasible", "baseline")})


def _names(s):
    return [t for t in (s or "").split(",") if t]


def cmd_graph(args):
    g = load_graph(args.graph)
    q = args.query
    if q == "dsep":
        print("true" if d_separated(g, _names(args.x), _names(args.y), _names(args.s)) else "false")
    elif q == "adjust":
        ok = is_valid_adjustment(g, _names(args.x), _names(args.y), _names(args.s), proper=args.proper)
        print("true" if ok else "false")
    elif q == "criterion":
        rep = check_ci_criterion(g, _names(args.a), _names(args.w), _names(args.y), _names(args.s),
                                 proper=args.proper)
        _print(rep.to_dict())
    else:
        dup, mapping = build_duplicate_graph(g, _names(args.a), _names(args.w))
        _print({**dup.to_dict(), "mapping": mapping})


def make_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cip", description="Counterfactually invariant prediction toolkit.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="YAML config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a dotted config key")
        sp.add_argument("--dgp", help="catalog DGP name")
        sp.add_argument("--n", type=int, help="number of samples")
        sp.add_argument("--seed", type=int, help="single seed (replaces the seed lists)")
        sp.add_argument("--out", help="output directory")
        sp.add_argument("--experiment", help="experiment name (output subdirectory)")
        sp.add_argument("--data", help="dataset CSV written by generate")
        return sp

    common(sub.add_parser("generate", help="sample a catalog DGP to CSV + JSON sidecar"))
    t = common(sub.add_parser("train", help="fit one model per seed and gamma"))
    t.add_argument("--gamma", type=float)
    t.add_argument("--model", help="cip or a baseline kind")
    s = common(sub.add_parser("sweep", help="gamma x seed grid plus baselines to results.csv"))
    s.add_argument("--jobs", type=int, default=1)
    common(sub.add_parser("gamma-search", help="largest gamma within a predictive tolerance"))
    e = common(sub.add_parser("eval", help="evaluate a checkpoint"))
    e.add_argument("checkpoint")
    gp = sub.add_parser("graph", help="graph queries")
    gp.add_argument("query", choices=["dsep", "adjust", "criterion", "duplicate"])
    gp.add_argument("-g", "--graph", required=True)
    for flag in ("x", "y", "s", "a", "w"):
        gp.add_argument(f"-{flag}", default="", help="comma-separated node names")
    gp.add_argument("--proper", action="store_true", help="only proper non-causal paths")
    return p


def main(argv=None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    np.seterr(over="ignore", under="ignore")
    try:
        if args.command == "graph":
            if not Path(args.graph).exists():
                raise UsageError(f"graph file {args.graph} does not exist")
            cmd_graph(args)
            return 0
        cfg = build_config(args)
        if args.command == "generate":
            cmd_generate(cfg)
        elif args.command == "train":
            cmd_train(cfg)
        elif args.command == "eval":
            cmd_eval(cfg, args.checkpoint)
        elif args.command == "sweep":
            return cmd_sweep(cfg, args.jobs)
        else:
            cmd_gamma_search(cfg)
        return 0
    except (UsageError, ConfigurationError, GraphError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DivergenceError, ReplayError, ArithmeticError, np.linalg.LinAlgError, ValueError, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

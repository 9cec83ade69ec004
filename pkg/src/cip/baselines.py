"""Comparison predictors: CF1, CF2, naive and augmentation-trained networks.

All baselines are trained with the predictive loss only.
"""
from __future__ import annotations

from .evaluation import EvalConfig, Predictor, Residual, evaluate
from .graph import Dag, descendants
from .nn import Mlp
from .scm import ConfigurationError, SampleBatch, augment
from .train import TrainConfig, train_cip

BASELINE_KINDS = ("cf1", "cf2", "naive", "aug_naive", "aug_causal")


def covariates(batch: SampleBatch) -> list:
    r = batch.roles
    return list(dict.fromkeys(r["A"] + r["X"] + r["S"]))


def split_covariates(g: Dag, batch: SampleBatch) -> tuple[list, list]:
    """Observed covariates other than A, split into (non-descendants, descendants) of A."""
    a = batch.roles["A"]
    desc = descendants(g, a)
    rest = [c for c in covariates(batch) if c not in a]
    return [c for c in rest if c not in desc], [c for c in rest if c in desc]


def _fit(data: SampleBatch, cfg: TrainConfig, inputs: list, target: list | None = None) -> Mlp:
    c = cfg.replace(gamma=0.0, inputs=list(inputs), penalty_aw=[], penalty_s=[], penalty="auto")
    if target is not None:
        data = data.with_roles(Y=list(target))
        c = c.replace(task="regression_mse")
    return train_cip(data, c)[0]


def train_baseline(kind: str, g: Dag | None, data: SampleBatch, cfg: TrainConfig, scm=None,
                   test: SampleBatch | None = None, eval_cfg: EvalConfig | None = None,
                   aux_epochs: int = 200, aux_batch_size: int = 64, cf2_with_nondesc: bool = False,
                   n_aug: int = 50, aug_model: Mlp | None = None):
    """Fit one baseline; returns ``(predictor, report)`` (report is None without ``test``).

    cf1 uses only non-descendants of A. cf2 adds residuals of each descendant
    covariate after regressing it on A (and the non-descendants when
    ``cf2_with_nondesc``). naive drops A. The augmentation variants resample A
    ``n_aug`` times per row (``aug_causal`` also rewrites X through a fitted
    model of X given A and S) and train on A, X and S.
    """
    if kind not in BASELINE_KINDS:
        raise ConfigurationError(f"unknown baseline {kind!r}; expected one of {BASELINE_KINDS}")
    if kind in ("cf1", "cf2") and g is None:
        raise ConfigurationError(f"{kind} needs the causal graph")
    a = data.roles["A"]
    if not a:
        raise ConfigurationError("baselines need an A role")
    base = cfg.replace(gamma=0.0)
    features = {}
    train_data = data
    if kind == "cf1":
        inputs = split_covariates(g, data)[0]
    elif kind == "cf2":
        nondesc, desc = split_covariates(g, data)
        regressors = a + nondesc if cf2_with_nondesc else list(a)
        aux_cfg = base.replace(epochs=aux_epochs, batch_size=aux_batch_size)
        inputs = list(nondesc)
        for x in desc:
            aux = _fit(data, aux_cfg, regressors, target=[x])
            name = f"R_{x}"
            features[name] = Residual(aux, x, regressors)
            inputs.append(name)
    elif kind == "naive":
        inputs = [c for c in covariates(data) if c not in a]
    else:
        inputs = covariates(data)
        if kind == "aug_naive":
            train_data = augment(data, "naive", n_aug, seed=cfg.seed)
        else:
            xs = data.roles["X"]
            if len(xs) != 1:
                raise ConfigurationError("aug_causal expects exactly one X node")
            if aug_model is None:
                aug_model = _fit(data, base, a + data.roles["S"], target=xs)
            train_data = augment(data, "causal", n_aug, model=aug_model, seed=cfg.seed)
    if not inputs:
        raise ConfigurationError(f"{kind} has no admissible input columns")
    if features:
        derived = {k: f(train_data.columns) for k, f in features.items()}
        cols = dict(train_data.columns)
        cols.update(derived)
        train_data = SampleBatch(cols, train_data.noise_columns, train_data.roles, train_data.meta)
    model = _fit(train_data, base, inputs)
    pred = Predictor(model, inputs, features, kind=kind)
    report = None
    if test is not None:
        report = evaluate(pred, scm, test, base, eval_cfg)
    return pred, report

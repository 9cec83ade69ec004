"""Training counterfactually invariant predictors.

The objective is ``task_loss(Y_hat) + gamma * HSCIC(Y_hat, A u W | S)``,
minimised with minibatch Adam. The penalty is batch-local: kernel matrices
and the ridge factorisation on S are rebuilt for every minibatch.
"""
from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .hscic import HscicState, hscic_sq, hscic_value_and_grad, hsic, hsic_grad_y
from .kernels import KernelSpec
from .nn import AdamState, Mlp, adam_step
from .rng import stream
from .scm import ConfigurationError, SampleBatch


class DivergenceError(RuntimeError):
    def __init__(self, epoch: int, what: str = "loss"):
        super().__init__(f"non-finite {what} at epoch {epoch}")
        self.epoch = epoch


@dataclass
class TrainConfig:
    gamma: float = 0.0
    task: str = "regression_mse"
    epochs: int = 200
    batch_size: int = 256
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    hidden: tuple = (20,) * 8
    kernel_y: KernelSpec = field(default_factory=KernelSpec)
    kernel_aw: KernelSpec = field(default_factory=KernelSpec)
    kernel_s: KernelSpec = field(default_factory=KernelSpec)
    lam: float = 0.01
    rff_features: int = 0
    literal_middle: bool = False
    penalty: str = "auto"  # "hscic", "hsic" or "auto" (hsic when S is empty)
    inputs: list | None = None  # default A, X, S columns
    penalty_aw: list | None = None  # default A u W
    penalty_s: list | None = None  # default S
    standardize: bool = True

    def __post_init__(self):
        if self.gamma < 0:
            raise ConfigurationError("gamma must be nonnegative")
        if self.task not in ("regression_mse", "binary_ce"):
            raise ConfigurationError(f"unknown task {self.task!r}")
        if self.gamma > 0 and self.batch_size < 2:
            raise ConfigurationError("the penalty needs batch_size >= 2")
        if self.penalty not in ("auto", "hscic", "hsic"):
            raise ConfigurationError(f"unknown penalty {self.penalty!r}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigurationError("epochs and batch_size must be positive")
        for k in ("kernel_y", "kernel_aw", "kernel_s"):
            v = getattr(self, k)
            if isinstance(v, dict):
                setattr(self, k, KernelSpec(**v))
        self.hidden = tuple(int(h) for h in self.hidden)

    def replace(self, **kw) -> "TrainConfig":
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d.update(kw)
        return TrainConfig(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hidden"] = list(self.hidden)
        return d

    def input_columns(self, batch: SampleBatch) -> list:
        if self.inputs is not None:
            return list(self.inputs)
        r = batch.roles
        return list(dict.fromkeys(r["A"] + r["X"] + r["S"]))

    def penalty_columns(self, batch: SampleBatch) -> tuple[list, list]:
        aw = self.penalty_aw
        if aw is None:
            aw = list(dict.fromkeys(batch.roles["A"] + batch.roles.get("W", [])))
        s = batch.roles["S"] if self.penalty_s is None else self.penalty_s
        return list(aw), list(s)


@dataclass
class EpochRecord:
    """Epoch means over minibatches.

    ``loss`` and ``total = loss + gamma * penalty`` are in objective units
    (standardised targets when enabled); ``loss_raw`` and ``test_loss`` are
    in data units.
    """

    epoch: int
    loss: float
    penalty: float
    total: float
    wall_s: float
    loss_raw: float = float("nan")
    test_loss: float | None = None


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def as_rows(self) -> list[dict]:
        return [asdict(r) for r in self.records]


class Penalty:
    """Batch-local conditional-dependence penalty with its prediction gradient."""

    def __init__(self, cfg: TrainConfig, n_s_cols: int):
        kind = cfg.penalty
        if kind == "auto":
            kind = "hscic" if n_s_cols else "hsic"
        if kind == "hscic" and not n_s_cols:
            raise ConfigurationError("hscic penalty needs conditioning columns")
        self.kind = kind
        self.cfg = cfg

    def value_and_grad(self, pred, aw, s, need_grad: bool = True):
        cfg = self.cfg
        if self.kind == "hsic":
            val = hsic(pred, aw, cfg.kernel_y, cfg.kernel_aw)
            grad = hsic_grad_y(pred, aw, cfg.kernel_y, cfg.kernel_aw) if need_grad else None
            return val, grad
        state = HscicState(cfg.kernel_y, cfg.kernel_aw, cfg.kernel_s, cfg.lam,
                           literal_middle=cfg.literal_middle, rff_features=cfg.rff_features,
                           rff_seed=cfg.seed)
        if not need_grad:
            return hscic_sq(state, pred, aw, s).mean, None
        val, grad = hscic_value_and_grad(state, pred, aw, s)
        return val.mean, grad

    def value(self, pred, aw, s) -> float:
        return self.value_and_grad(pred, aw, s, need_grad=False)[0]


def task_loss(task: str, pred, y):
    """Mean loss and its gradient with respect to ``pred``."""
    n = pred.shape[0]
    if task == "regression_mse":
        r = pred - y
        return float(np.mean(r ** 2)), 2 * r / r.size
    p = np.clip(pred, 1e-12, 1 - 1e-12)
    loss = -np.mean(y * np.log(p) + (1 - y) * np.log(1 - p))
    return float(loss), (p - y) / (p * (1 - p)) / (n * pred.shape[1])


def _batches(n, batch_size, rng):
    perm = rng.permutation(n)
    chunks = [perm[i:i + batch_size] for i in range(0, n, batch_size)]
    if len(chunks) > 1 and len(chunks[-1]) < 2:
        chunks[-2] = np.concatenate([chunks[-2], chunks.pop()])
    return chunks


def build_model(cfg: TrainConfig, x: np.ndarray, y: np.ndarray) -> Mlp:
    out = "logistic" if cfg.task == "binary_ce" else "identity"
    m = Mlp([x.shape[1], *cfg.hidden, y.shape[1]], output=out, seed=cfg.seed)
    if cfg.standardize:
        m.x_shift = x.mean(axis=0)
        m.x_scale = np.where(x.std(axis=0) > 0, x.std(axis=0), 1.0)
        if cfg.task == "regression_mse":
            m.y_shift = y.mean(axis=0)
            m.y_scale = np.where(y.std(axis=0) > 0, y.std(axis=0), 1.0)
    return m


def train_cip(data: SampleBatch, cfg: TrainConfig, test: SampleBatch | None = None,
              model: Mlp | None = None) -> tuple[Mlp, TrainHistory]:
    """Fit a predictor minimising ``task_loss + gamma * penalty``.

    ``test`` (optional) adds a per-epoch held-out task loss to the history.
    """
    in_cols = cfg.input_columns(data)
    aw_cols, s_cols = cfg.penalty_columns(data)
    for c in in_cols + aw_cols + s_cols + data.roles["Y"]:
        if c not in data.columns:
            raise ConfigurationError(f"column {c!r} missing from training data")
    x = data.matrix(in_cols)
    y = data.role("Y")
    aw = data.matrix(aw_cols)
    s = data.matrix(s_cols)
    if model is None:
        model = build_model(cfg, x, y)
    penalty = Penalty(cfg, s.shape[1])
    # objective units: standardised targets for regression when enabled
    if cfg.task == "regression_mse" and cfg.standardize:
        shift, scale = model.y_shift, model.y_scale
    else:
        shift, scale = 0.0, 1.0
    opt = AdamState(cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    rng = stream(cfg.seed, "minibatch")
    history = TrainHistory()
    x_test = test.matrix(in_cols) if test is not None else None
    t0 = time.perf_counter()
    for epoch in range(cfg.epochs):
        sums = np.zeros(4)
        count = 0
        for idx in _batches(x.shape[0], cfg.batch_size, rng):
            pred, acts = model.forward(x[idx], cache=True)
            raw = task_loss(cfg.task, pred, y[idx])[0]
            z = (pred - shift) / scale
            loss, g = task_loss(cfg.task, z, (y[idx] - shift) / scale)
            pen = 0.0
            if cfg.gamma > 0 and len(idx) >= 2:
                pen, gp = penalty.value_and_grad(z, aw[idx], s[idx])
                g = g + cfg.gamma * gp
            grads, _ = model.backward(acts, g / scale)
            if not (np.isfinite(loss) and np.isfinite(pen) and all(np.all(np.isfinite(q)) for q in grads)):
                raise DivergenceError(epoch)
            adam_step(opt, model.params, grads)
            sums += (loss, pen, loss + cfg.gamma * pen, raw)
            count += 1
        sums /= count
        rec = EpochRecord(epoch, float(sums[0]), float(sums[1]), float(sums[2]), time.perf_counter() - t0,
                          float(sums[3]))
        if test is not None:
            rec.test_loss = task_loss(cfg.task, model.forward(x_test), test.role("Y"))[0]
        history.records.append(rec)
    return model, history


def predict(model: Mlp, batch: SampleBatch, cfg: TrainConfig) -> np.ndarray:
    return model.forward(batch.matrix(cfg.input_columns(batch)))

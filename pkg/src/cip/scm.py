"""Structural causal models with retained exogenous noise.

Structural equations are vectorised over rows: ``f(parents, u)`` receives a
dict of parent name -> ``(n, dim)`` arrays and the node's own ``(n, dim)``
noise draw and returns an ``(n, dim)`` array. Counterfactuals are computed by
replaying the equations on the noise retained at sampling time, which makes
abduction exact for simulated data.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from .graph import Dag, descendants
from .rng import stream

ROLE_TAGS = ("A", "X", "S", "W", "Y")


class ConfigurationError(ValueError):
    pass


class ReplayError(RuntimeError):
    pass


@dataclass(frozen=True)
class Noise:
    """Gaussian exogenous noise, parameterised by mean and *variance*."""

    mean: float = 0.0
    var: float = 1.0
    family: str = "normal"

    def __post_init__(self):
        if self.family != "normal":
            raise ConfigurationError(f"unsupported noise family {self.family!r}")
        if self.var < 0:
            raise ConfigurationError("noise variance must be nonnegative")


def _const(value):
    value = np.asarray(value, dtype=float)

    def f(parents, u):
        return np.broadcast_to(value, u.shape).copy()

    f.constant = value
    return f


class Scm:
    """DAG plus structural equations, noise specs and per-node dimensions."""

    def __init__(self, graph: Dag, equations: Mapping[str, Callable], noise: Mapping[str, Noise],
                 dims: Mapping[str, int] | None = None, roles: Mapping[str, list] | None = None,
                 name: str | None = None):
        if set(equations) != set(graph.nodes):
            raise ConfigurationError("equations must be keyed exactly by the graph's nodes")
        if set(noise) != set(graph.nodes):
            raise ConfigurationError("every node needs a noise spec")
        for v in noise.values():
            if not isinstance(v, Noise):
                raise ConfigurationError(f"bad noise spec {v!r}")
        self.graph = graph
        self.equations = dict(equations)
        self.noise = dict(noise)
        self.dims = {n: int((dims or {}).get(n, 1)) for n in graph.nodes}
        self.roles = default_roles(roles or {})
        self.name = name

    def replace(self, **kw) -> "Scm":
        args = dict(graph=self.graph, equations=self.equations, noise=self.noise,
                    dims=self.dims, roles=self.roles, name=self.name)
        args.update(kw)
        return Scm(**args)

    def evaluate(self, noise: Mapping[str, np.ndarray], fixed: Mapping[str, np.ndarray] | None = None,
                 only: set | None = None) -> dict:
        """Run the equations in topological order.

        ``fixed`` values are used as-is; nodes outside ``only`` (when given)
        must also be supplied through ``fixed``.
        """
        fixed = fixed or {}
        values = {}
        for node in self.graph.topological_order():
            if node in fixed and (only is None or node not in only):
                values[node] = fixed[node]
                continue
            parents = {p: values[p] for p in self.graph.parents(node)}
            out = np.asarray(self.equations[node](parents, noise[node]), dtype=float)
            values[node] = out.reshape(noise[node].shape)
        return values


def default_roles(roles: Mapping[str, list]) -> dict:
    out = {k: list(roles.get(k, [])) for k in ROLE_TAGS}
    for k in roles:
        if k not in ROLE_TAGS:
            raise ConfigurationError(f"unknown role {k!r}")
    if "W" not in roles:
        out["W"] = list(dict.fromkeys(out["A"] + out["X"] + out["S"]))
    return out


@dataclass
class SampleBatch:
    columns: dict
    noise_columns: dict = field(default_factory=dict)
    roles: dict = field(default_factory=lambda: default_roles({}))
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        ns = {v.shape[0] for v in self.columns.values()} | {v.shape[0] for v in self.noise_columns.values()}
        if len(ns) > 1:
            raise ConfigurationError(f"columns disagree on row count: {sorted(ns)}")
        for tag, names in self.roles.items():
            for n in names:
                if n not in self.columns:
                    raise ConfigurationError(f"role {tag} references missing column {n!r}")

    @property
    def n(self) -> int:
        return next(iter(self.columns.values())).shape[0]

    def matrix(self, names) -> np.ndarray:
        """Concatenate the named columns into an ``(n, total_dim)`` matrix."""
        if not names:
            return np.zeros((self.n, 0))
        return np.concatenate([self.columns[n] for n in names], axis=1)

    def role(self, tag: str) -> np.ndarray:
        return self.matrix(self.roles[tag])

    def take(self, rows) -> "SampleBatch":
        rows = np.asarray(rows)
        return SampleBatch({k: v[rows] for k, v in self.columns.items()},
                           {k: v[rows] for k, v in self.noise_columns.items()},
                           {k: list(v) for k, v in self.roles.items()}, dict(self.meta))

    def split(self, train_fraction: float = 0.8, seed: int = 0) -> tuple["SampleBatch", "SampleBatch"]:
        perm = stream(seed, "split").permutation(self.n)
        cut = int(round(train_fraction * self.n))
        return self.take(np.sort(perm[:cut])), self.take(np.sort(perm[cut:]))

    def with_roles(self, **roles) -> "SampleBatch":
        merged = {k: list(v) for k, v in self.roles.items()}
        merged.update({k: list(v) for k, v in roles.items()})
        return SampleBatch(self.columns, self.noise_columns, merged, dict(self.meta))


def sample_observational(scm: Scm, n: int, seed: int) -> SampleBatch:
    if n < 1:
        raise ConfigurationError("n must be at least 1")
    noise = {}
    for node in scm.graph.topological_order():
        spec = scm.noise[node]
        z = stream(seed, "noise", node).standard_normal((n, scm.dims[node]))
        noise[node] = spec.mean + np.sqrt(spec.var) * z
    cols = scm.evaluate(noise)
    return SampleBatch(cols, noise, {k: list(v) for k, v in scm.roles.items()},
                       {"seed": int(seed), "dgp": scm.name, "dims": dict(scm.dims)})


def intervene(scm: Scm, assignments: Mapping[str, object]) -> Scm:
    """Replace the equations of the assigned nodes by constants (hard intervention)."""
    scm.graph.check(*assignments)
    eqs = dict(scm.equations)
    noise = dict(scm.noise)
    for node, value in assignments.items():
        value = np.asarray(value, dtype=float)
        if value.size not in (1, scm.dims[node]):
            raise ConfigurationError(f"value for {node} must be scalar or of length {scm.dims[node]}")
        eqs[node] = _const(value.reshape(-1))
        noise[node] = Noise(0.0, 0.0)
    return scm.replace(equations=eqs, noise=noise)


def _as_column(value, n, dim, node) -> np.ndarray:
    """Scalar, per-row column (dim 1), single row vector, or full ``(n, dim)`` matrix."""
    v = np.asarray(value, dtype=float)
    if v.ndim == 0 or v.size == 1:
        return np.full((n, dim), float(v.reshape(-1)[0]))
    if v.ndim == 1:
        v = v.reshape(-1, 1) if dim == 1 else v.reshape(1, -1)
    if v.shape == (1, dim):
        return np.repeat(v, n, axis=0)
    if v.shape == (n, dim):
        return v
    raise ConfigurationError(f"assignment for {node} has shape {v.shape}, expected ({n}, {dim})")


def counterfactual_outputs(scm: Scm, batch: SampleBatch, assignments: Mapping[str, object],
                           targets) -> dict:
    """Per-row counterfactual values of ``targets`` under ``assignments``.

    Abduction uses the batch's retained noise; only descendants of the
    assigned nodes are recomputed, everything else keeps its observed value.
    """
    scm.graph.check(*assignments)
    targets = [targets] if isinstance(targets, str) else list(targets)
    scm.graph.check(*targets)
    affected = descendants(scm.graph, assignments) - set(assignments)
    missing = [v for v in affected if v not in batch.noise_columns]
    if missing:
        raise ReplayError(f"no retained noise for {sorted(missing)}; abduction impossible")
    n = batch.n
    fixed = {k: v for k, v in batch.columns.items() if k in scm.graph.nodes and k not in affected}
    for node, value in assignments.items():
        fixed[node] = _as_column(value, n, scm.dims[node], node)
    values = scm.evaluate(batch.noise_columns, fixed=fixed, only=affected)
    return {t: values[t] for t in targets}


def augment(batch: SampleBatch, mode: str = "naive", n_aug: int = 50, model=None,
            seed: int = 0) -> SampleBatch:
    """Data augmentation by resampling the protected attribute.

    Each row is repeated ``n_aug`` times with A redrawn from the batch's
    empirical A marginal. ``mode="causal"`` also recomputes the X columns as
    ``model(concat(A_new, S))``; other columns are left unchanged. Retained
    noise is dropped since augmented rows are not draws from the SCM.
    """
    if n_aug < 1:
        raise ConfigurationError("n_aug must be at least 1")
    if mode not in ("naive", "causal"):
        raise ConfigurationError(f"unknown augmentation mode {mode!r}")
    if mode == "causal" and model is None:
        raise ConfigurationError("causal augmentation needs a fitted model for X given (A, S)")
    n = batch.n
    rows = np.repeat(np.arange(n), n_aug)
    draw = stream(seed, "augment").integers(0, n, size=n * n_aug)
    out = {k: v[rows] for k, v in batch.columns.items()}
    for a in batch.roles["A"]:
        out[a] = batch.columns[a][draw]
    if mode == "causal":
        a_new = np.concatenate([out[a] for a in batch.roles["A"]], axis=1)
        s = np.concatenate([out[c] for c in batch.roles["S"]], axis=1) if batch.roles["S"] else np.zeros((n * n_aug, 0))
        x_new = np.asarray(model(np.concatenate([a_new, s], axis=1)), dtype=float)
        x_new = x_new.reshape(n * n_aug, -1)
        start = 0
        for x in batch.roles["X"]:
            d = batch.columns[x].shape[1]
            out[x] = x_new[:, start:start + d]
            start += d
    meta = dict(batch.meta, augmented=mode, n_aug=n_aug)
    return SampleBatch(out, {}, {k: list(v) for k, v in batch.roles.items()}, meta)


# dataset files

def _header(name, dim, prefix=""):
    return [f"{prefix}{name}_{j}" for j in range(dim)]


def save_batch(batch: SampleBatch, csv_path, extra_meta: dict | None = None) -> Path:
    """Write ``batch`` as CSV plus a JSON sidecar next to it."""
    csv_path = Path(csv_path)
    names = list(batch.columns)
    header, blocks = [], []
    for k in names:
        header += _header(k, batch.columns[k].shape[1])
        blocks.append(batch.columns[k])
    for k in batch.noise_columns:
        header += _header(k, batch.noise_columns[k].shape[1], "u_")
        blocks.append(batch.noise_columns[k])
    data = np.concatenate(blocks, axis=1)
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in data:
            w.writerow([repr(float(x)) for x in row])
    side = {
        "roles": batch.roles,
        "dims": {k: int(v.shape[1]) for k, v in batch.columns.items()},
        "noise": sorted(batch.noise_columns),
        "seed": batch.meta.get("seed"),
        "dgp": batch.meta.get("dgp"),
    }
    side.update(extra_meta or {})
    with open(csv_path.with_suffix(".json"), "w") as fh:
        json.dump(side, fh, indent=2, sort_keys=True)
    return csv_path


def load_batch(csv_path) -> SampleBatch:
    csv_path = Path(csv_path)
    with open(csv_path.with_suffix(".json")) as fh:
        side = json.load(fh)
    with open(csv_path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        data = np.array([[float(x) for x in row] for row in r], dtype=float).reshape(-1, len(header))
    index = {h: i for i, h in enumerate(header)}
    cols, noise = {}, {}
    for k, d in side["dims"].items():
        try:
            cols[k] = data[:, [index[h] for h in _header(k, d)]]
        except KeyError as exc:
            raise ConfigurationError(f"{csv_path}: missing column {exc}") from None
        if k in side.get("noise", []):
            noise[k] = data[:, [index[h] for h in _header(k, d, "u_")]]
    meta = {k: v for k, v in side.items() if k not in ("roles", "noise")}
    return SampleBatch(cols, noise, default_roles(side["roles"]), meta)

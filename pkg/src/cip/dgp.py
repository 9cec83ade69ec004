"""Catalog of the synthetic data-generating processes.

Gaussian noise is specified by variance: ``N(0, 0.1)`` has variance 0.1.
Node names are ``Z`` (confounder, used as the conditioning set S), ``A``
(protected / intervened), ``X`` (mediator) and ``Y`` (outcome).
"""
from __future__ import annotations

import numpy as np

from .graph import Dag
from .scm import ConfigurationError, Noise, Scm

DGP_NAMES = ("synthetic_c1", "scenario1", "scenario2", "multidim_a", "causal_g1", "anticausal_g1")

_ROLES = {"A": ["A"], "X": ["X"], "S": ["Z"], "Y": ["Y"]}


def _root(parents, u):
    return u


def synthetic_c1(c1_additive_z: bool = False) -> Scm:
    """The dataset used for the trade-off and HSCIC/VCF correspondence study.

    The mediator's trailing term reads ``2 Z (1/5) eps_X`` and is taken as a
    product by default. ``c1_additive_z=True`` uses ``2 Z + (1/5) eps_X``.
    """
    def a(p, u):
        return p["Z"] ** 2 + u

    def x(p, u):
        A, Z = p["A"], p["Z"]
        base = np.exp(-0.5 * A ** 2) * np.sin(2 * A)
        return base + (2 * Z + u / 5 if c1_additive_z else 2 * Z * u / 5)

    def y(p, u):
        X, Z, A = p["X"], p["Z"], p["A"]
        return 0.5 * np.exp(-X * Z) * np.sin(2 * X * Z) + 5 * A + u / 5

    g = Dag(["Z", "A", "X", "Y"], [("Z", "A"), ("A", "X"), ("Z", "X"), ("A", "Y"), ("X", "Y"), ("Z", "Y")])
    noise = {"Z": Noise(0, 1), "A": Noise(0, 1), "X": Noise(0, 0.1), "Y": Noise(0, 0.1)}
    return Scm(g, {"Z": _root, "A": a, "X": x, "Y": y}, noise, roles=_ROLES,
               name="synthetic_c1")


def _scenario_a(p, u):
    Z = p["Z"]
    return np.exp(0.5 * Z ** 2) * np.sin(2 * Z) + u


def scenario1() -> Scm:
    """Multiplicative-noise mediator. eps_Y is drawn but, as written, unused by Y."""
    def x(p, u):
        return (p["A"] + 0.1 * p["Z"]) * u

    def y(p, u):
        return p["A"] + p["X"] + 0.1 * np.sin(p["Z"])

    g = Dag(["Z", "A", "X", "Y"], [("Z", "A"), ("A", "X"), ("Z", "X"), ("A", "Y"), ("X", "Y"), ("Z", "Y")])
    noise = {"Z": Noise(0, 1), "A": Noise(0, 1), "X": Noise(0, 1), "Y": Noise(0, 0.1)}
    return Scm(g, {"Z": _root, "A": _scenario_a, "X": x, "Y": y}, noise, roles=_ROLES,
               name="scenario1")


def scenario2() -> Scm:
    """Non-additive noise model; Y depends on A only through X."""
    def x(p, u):
        return np.exp(-0.5 * p["A"] ** 2) * u + 2 * p["Z"]

    def y(p, u):
        zx = p["Z"] * p["X"]
        return 0.5 * np.sin(zx) * np.exp(-zx) + u / 5

    g = Dag(["Z", "A", "X", "Y"], [("Z", "A"), ("A", "X"), ("Z", "X"), ("X", "Y"), ("Z", "Y")])
    noise = {"Z": Noise(0, 1), "A": Noise(0, 1), "X": Noise(0, 1), "Y": Noise(0, 0.1)}
    return Scm(g, {"Z": _root, "A": _scenario_a, "X": x, "Y": y}, noise, roles=_ROLES,
               name="scenario2")


def multidim_a(dim_a: int) -> Scm:
    """A has ``dim_a >= 2`` columns, each ``Z**2 + eps_A^i``."""
    if dim_a is None or int(dim_a) < 2:
        raise ConfigurationError("multidim_a needs dim_a >= 2")
    dim_a = int(dim_a)

    def a(p, u):
        return p["Z"] ** 2 + u

    def x(p, u):
        A, Z = p["A"], p["Z"]
        return np.exp(-0.5 * A[:, :1]) + A.sum(axis=1, keepdims=True) * np.sin(Z) + 0.1 * u

    def y(p, u):
        A, X, Z = p["A"], p["X"], p["Z"]
        return np.exp(-0.5 * A[:, 1:2]) * A.sum(axis=1, keepdims=True) + X * Z + 0.1 * u

    g = Dag(["Z", "A", "X", "Y"], [("Z", "A"), ("A", "X"), ("Z", "X"), ("A", "Y"), ("X", "Y"), ("Z", "Y")])
    noise = {"Z": Noise(0, 1), "A": Noise(0, 1), "X": Noise(0, 0.1), "Y": Noise(0, 0.1)}
    return Scm(g, {"Z": _root, "A": a, "X": x, "Y": y}, noise, dims={"A": dim_a},
               roles=_ROLES, name="multidim_a")


def causal_g1() -> Scm:
    """Causal text-style structure; Z is an unobserved confounder of A and Y.

    The outcome's ``A A`` term is read as ``A**2``. The penalty is the
    unconditional HSIC between the prediction and (A, X).
    """
    def a(p, u):
        return np.sin(0.1 * p["Z"]) + u

    def x(p, u):
        A = p["A"]
        return np.exp(-0.5 * A) * np.sin(A) + 0.1 * u

    def y(p, u):
        X, Z, A = p["X"], p["Z"], p["A"]
        return 0.1 * np.exp(-X) * np.sin(2 * X * Z) + A ** 2 + 0.1 * u

    g = Dag(["Z", "A", "X", "Y"], [("Z", "A"), ("A", "X"), ("A", "Y"), ("X", "Y"), ("Z", "Y")])
    noise = {"Z": Noise(0, 1), "A": Noise(0, 1), "X": Noise(0, 1), "Y": Noise(0, 0.1)}
    roles = {"A": ["A"], "X": ["X"], "S": [], "W": ["X"], "Y": ["Y"]}
    return Scm(g, {"Z": _root, "A": a, "X": x, "Y": y}, noise, roles=roles, name="causal_g1")


def anticausal_g1() -> Scm:
    """Anti-causal structure: X is caused by both A and Y; the penalty conditions on X."""
    def a(p, u):
        return 0.2 * np.sin(p["Z"]) + u

    def y(p, u):
        return 0.1 * np.sin(p["Z"]) + u

    def x(p, u):
        return p["A"] + p["Y"] + 0.1 * u

    g = Dag(["Z", "A", "Y", "X"], [("Z", "A"), ("Z", "Y"), ("A", "X"), ("Y", "X")])
    noise = {"Z": Noise(0, 1), "A": Noise(0, 0.1), "Y": Noise(0, 0.1), "X": Noise(0, 1)}
    roles = {"A": ["A"], "X": ["X"], "S": ["X"], "W": [], "Y": ["Y"]}
    return Scm(g, {"Z": _root, "A": a, "Y": y, "X": x}, noise, roles=roles, name="anticausal_g1")


def dgp_catalog(name: str, **params) -> Scm:
    """Build a catalog SCM by name. ``multidim_a`` requires ``dim_a``."""
    if name == "synthetic_c1":
        return synthetic_c1(bool(params.get("c1_additive_z", False)))
    if name == "multidim_a":
        if "dim_a" not in params:
            raise ConfigurationError("multidim_a requires the dim_a parameter")
        return multidim_a(params["dim_a"])
    builders = {"scenario1": scenario1, "scenario2": scenario2,
                "causal_g1": causal_g1, "anticausal_g1": anticausal_g1}
    if name not in builders:
        raise ConfigurationError(f"unknown dgp {name!r}; choose from {', '.join(DGP_NAMES)}")
    return builders[name]()

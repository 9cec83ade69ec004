"""Hilbert-Schmidt conditional independence criterion and its gradient.

For a conditioning point s with KRR weight vector w = w(s) the squared HSCIC
is the squared RKHS distance between the empirical joint conditional
embedding and the product of the marginal ones::

    H^2(s) = w'(Ky * Ka)w - 2 w'((Ky w) * (Ka w)) + (w'Ky w)(w'Ka w)

with Ky the prediction kernel matrix and Ka the kernel matrix on A u W.
All three embeddings share the same ridge regression on S, so one weight
vector serves every term.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .kernels import FeatureMap, KernelSpec, KrrSolver, _2d, kernel_matrix


@dataclass
class HscicValue:
    values: np.ndarray

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))


class HscicState:
    """Kernel specs, ridge parameter and the batch-dependent caches.

    The S factorisation and ``K_{A u W}`` depend only on the conditioning
    data, so they are rebuilt only when ``aws`` or ``ss`` change (by identity).

    ``literal_middle=True`` swaps the middle term for
    ``-2 (w'Ky w)(w'Ka w)``, which is not the squared-norm expansion; it exists
    for comparison only. ``rff_features`` > 0 replaces Ky and Ka by random
    Fourier feature Gram products.
    """

    def __init__(self, spec_y: KernelSpec | None = None, spec_aw: KernelSpec | None = None,
                 spec_s: KernelSpec | None = None, lam: float = 0.01, literal_middle: bool = False,
                 rff_features: int = 0, rff_seed: int = 0):
        if not lam > 0:
            raise ValueError("ridge parameter must be positive")
        self.spec_y = spec_y or KernelSpec()
        self.spec_aw = spec_aw or KernelSpec()
        self.spec_s = spec_s or KernelSpec()
        self.lam = float(lam)
        self.literal_middle = literal_middle
        self.rff_features = int(rff_features)
        self.rff_seed = rff_seed
        self._key = None
        self._fmaps = {}

    def prepare(self, aws, ss) -> None:
        if self._key is not None and self._key[0] is aws and self._key[1] is ss:
            return
        self._key = None
        aws, ss = _2d(aws), _2d(ss)
        if aws.shape[0] != ss.shape[0]:
            raise ValueError("aws and ss must have the same number of rows")
        self.n = ss.shape[0]
        self.solver = KrrSolver(self.spec_s, ss, self.lam)
        self.weights = self.solver.weights_at_train()
        if self.rff_features:
            self.k_aw = self.fmap("aw", aws.shape[1]).gram(aws)
        else:
            self.k_aw = kernel_matrix(self.spec_aw, aws)
        self._key = (aws, ss)

    def fmap(self, which: str, dim: int) -> FeatureMap:
        key = (which, dim)
        if key not in self._fmaps:
            spec = self.spec_y if which == "y" else self.spec_aw
            self._fmaps[key] = FeatureMap(spec, dim, self.rff_features, seed=self.rff_seed * 2 + (which == "y"))
        return self._fmaps[key]

    def k_y(self, ys) -> np.ndarray:
        if self.rff_features:
            return self.fmap("y", ys.shape[1]).gram(ys)
        return kernel_matrix(self.spec_y, ys)


def _check(state: HscicState, ys, aws, ss):
    ys = _2d(ys)
    state.prepare(aws, ss)
    if ys.shape[0] != state.n:
        raise ValueError(f"ys has {ys.shape[0]} rows, expected {state.n}")
    return ys


def _terms(state, ky):
    w, ka = state.weights, state.k_aw
    kyw, kaw = ky @ w, ka @ w
    first = np.sum(w * ((ky * ka) @ w), axis=0)
    cy = np.sum(w * kyw, axis=0)
    ca = np.sum(w * kaw, axis=0)
    if state.literal_middle:
        middle = cy * ca
    else:
        middle = np.sum(w * kyw * kaw, axis=0)
    return first, middle, cy * ca, kaw, ca


def hscic_sq(state: HscicState, ys, aws, ss) -> HscicValue:
    """Squared HSCIC evaluated at every sample's own conditioning value."""
    ys = _check(state, ys, aws, ss)
    first, middle, last, _, _ = _terms(state, state.k_y(ys))
    return HscicValue(first - 2 * middle + last)


def _grad_from_kernel_grad(state, ys, ky, g):
    """Chain d(loss)/d(Ky) into d(loss)/d(ys)."""
    sym = g + g.T
    if state.rff_features:
        fmap = state.fmap("y", ys.shape[1])
        up = state.spec_y.amplitude * sym @ fmap.features(ys)
        return fmap.feature_jacobian_contract(ys, up)
    gs = sym * ky
    return (gs @ ys - gs.sum(axis=1, keepdims=True) * ys) / state.spec_y.lengthscale ** 2


def hscic_value_and_grad(state: HscicState, ys, aws, ss) -> tuple[HscicValue, np.ndarray]:
    """``hscic_sq`` and ``hscic_grad_y`` sharing one set of kernel products.

    Weight vectors depend on S only and are treated as constants.
    """
    ys = _check(state, ys, aws, ss)
    ky = state.k_y(ys)
    first, middle, last, kaw, ca = _terms(state, ky)
    w, ka = state.weights, state.k_aw
    if state.literal_middle:
        g = (w @ w.T) * ka - (w * ca) @ w.T
    else:
        g = (w @ w.T) * ka + (w * (ca - 2 * kaw)) @ w.T
    grad = _grad_from_kernel_grad(state, ys, ky, g / w.shape[1])
    return HscicValue(first - 2 * middle + last), grad


def hscic_grad_y(state: HscicState, ys, aws, ss) -> np.ndarray:
    """Gradient of the mean squared HSCIC with respect to each prediction row."""
    return hscic_value_and_grad(state, ys, aws, ss)[1]


def hsic(ys, aws, spec_y: KernelSpec | None = None, spec_aw: KernelSpec | None = None) -> float:
    """Biased HSIC V-statistic ``tr(Ky H Ka H) / n^2``."""
    ys, aws = _2d(ys), _2d(aws)
    n = ys.shape[0]
    if n < 2:
        raise ValueError("hsic needs at least two samples")
    if aws.shape[0] != n:
        raise ValueError("row counts differ")
    ky = kernel_matrix(spec_y or KernelSpec(), ys)
    kc = _center(kernel_matrix(spec_aw or KernelSpec(), aws))
    return float(max(np.sum(ky * kc) / n ** 2, 0.0))


def _center(k):
    return k - k.mean(axis=0, keepdims=True) - k.mean(axis=1, keepdims=True) + k.mean()


def hsic_grad_y(ys, aws, spec_y: KernelSpec | None = None, spec_aw: KernelSpec | None = None) -> np.ndarray:
    ys, aws = _2d(ys), _2d(aws)
    spec_y = spec_y or KernelSpec()
    n = ys.shape[0]
    ky = kernel_matrix(spec_y, ys)
    kc = _center(kernel_matrix(spec_aw or KernelSpec(), aws))
    gs = (2 * kc / n ** 2) * ky
    return (gs @ ys - gs.sum(axis=1, keepdims=True) * ys) / spec_y.lengthscale ** 2

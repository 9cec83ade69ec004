"""Gaussian kernels, kernel ridge regression weights and random Fourier features."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .rng import stream


@dataclass(frozen=True)
class KernelSpec:
    """``amplitude * exp(-|x - y|^2 / (2 lengthscale^2))``."""

    amplitude: float = 1.0
    lengthscale: float = 0.1
    family: str = "gaussian"

    def __post_init__(self):
        if self.family != "gaussian":
            raise ValueError(f"unsupported kernel family {self.family!r}")
        if not (self.amplitude > 0 and self.lengthscale > 0):
            raise ValueError("amplitude and lengthscale must be positive")


def _2d(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        return x.reshape(1, 1)
    if x.ndim == 1:
        return x.reshape(-1, 1)
    return x


def sq_dists(xs, ys) -> np.ndarray:
    xs, ys = _2d(xs), _2d(ys)
    if xs.shape[1] != ys.shape[1]:
        raise ValueError(f"dimension mismatch: {xs.shape[1]} vs {ys.shape[1]}")
    d = (xs ** 2).sum(1)[:, None] + (ys ** 2).sum(1)[None, :] - 2 * xs @ ys.T
    if xs is ys:
        np.fill_diagonal(d, 0.0)
    return np.maximum(d, 0.0)


def kernel_matrix(spec: KernelSpec, xs, ys=None) -> np.ndarray:
    xs = _2d(xs)
    ys = xs if ys is None else _2d(ys)
    return spec.amplitude * np.exp(-sq_dists(xs, ys) / (2 * spec.lengthscale ** 2))


class KrrSolver:
    """Kernel ridge regression on conditioning samples ``S``.

    Weight functions are ``w(s) = (K_S + n lam I)^{-1} k_S(s)``, solved
    against one cached Cholesky factorisation.
    """

    def __init__(self, spec: KernelSpec, s_train, lam: float = 0.01):
        if not lam > 0:
            raise ValueError("ridge parameter must be positive")
        self.spec = spec
        self.s = _2d(s_train)
        self.lam = float(lam)
        self.n = self.s.shape[0]
        self.gram = kernel_matrix(spec, self.s)
        try:
            self._chol = linalg.cho_factor(self.gram + self.n * self.lam * np.eye(self.n), lower=True)
        except linalg.LinAlgError as exc:
            raise ValueError("ridge system is not positive definite") from exc

    def solve(self, rhs) -> np.ndarray:
        return linalg.cho_solve(self._chol, rhs)

    def weights(self, queries) -> np.ndarray:
        """Weight vectors for each query point, as columns of an ``(n, m)`` matrix."""
        return self.solve(kernel_matrix(self.spec, self.s, _2d(queries)))

    def weights_at_train(self) -> np.ndarray:
        """``(n, n)`` matrix whose column i is ``w(s_i)``."""
        return self.solve(self.gram)


class FeatureMap:
    """Random Fourier features for a Gaussian kernel.

    ``paired_cos_sin`` gives ``phi(z) . phi(z')`` an unbiased estimate of the
    unit-amplitude kernel; ``cos_only`` is the plain cosine map, whose inner
    product is biased.
    """

    def __init__(self, spec: KernelSpec, dim: int, n_features: int, seed: int = 0,
                 mode: str = "paired_cos_sin"):
        if mode not in ("paired_cos_sin", "cos_only"):
            raise ValueError(f"unknown feature mode {mode!r}")
        self.spec = spec
        self.mode = mode
        self.l = int(n_features)
        self.freqs = stream(seed, "rff").standard_normal((self.l, dim)) / spec.lengthscale

    @classmethod
    def from_frequencies(cls, spec: KernelSpec, freqs, mode: str = "paired_cos_sin") -> "FeatureMap":
        self = cls.__new__(cls)
        self.spec, self.mode = spec, mode
        self.freqs = _2d(freqs)
        self.l = self.freqs.shape[0]
        return self

    def _proj(self, zs):
        zs = _2d(zs)
        if zs.shape[1] != self.freqs.shape[1]:
            raise ValueError(f"dimension mismatch: {zs.shape[1]} vs {self.freqs.shape[1]}")
        return zs @ self.freqs.T

    def features(self, zs) -> np.ndarray:
        p = self._proj(zs)
        if self.mode == "cos_only":
            return np.cos(p) / np.sqrt(self.l)
        return np.concatenate([np.cos(p), np.sin(p)], axis=1) / np.sqrt(self.l)

    def feature_jacobian_contract(self, zs, upstream) -> np.ndarray:
        """``sum_f upstream[i, f] * d phi_f(z_i) / d z_i`` for every row i."""
        p = self._proj(zs)
        l = self.l
        if self.mode == "cos_only":
            dp = -np.sin(p) * upstream
        else:
            dp = -np.sin(p) * upstream[:, :l] + np.cos(p) * upstream[:, l:]
        return dp @ self.freqs / np.sqrt(l)

    def gram(self, xs, ys=None) -> np.ndarray:
        fx = self.features(xs)
        fy = fx if ys is None else self.features(ys)
        return self.spec.amplitude * fx @ fy.T


def rff_features(fmap: FeatureMap, zs) -> np.ndarray:
    return fmap.features(zs)


def rff_kernel_estimate(fmap: FeatureMap, z, zp) -> float:
    """``(1/l) sum_j cos(eta_j . (z - z'))``."""
    d = np.asarray(z, dtype=float).reshape(-1) - np.asarray(zp, dtype=float).reshape(-1)
    return float(np.mean(np.cos(fmap.freqs @ d)))


def krr_weights(solver: KrrSolver, query) -> np.ndarray:
    return solver.weights(query)

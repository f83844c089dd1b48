"""Two-dimensional FastICA on learned features, and its composition with the
feature extractor (hICA).

The unmixing is fit once per model on the pooled features of its training
pairs and reused unchanged on every test pair, so all pairs analyzed by one
model share the same linear frame.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .nn import TclModel

ALPHA0 = (0, 1)
ALPHA1 = (1, 0)
PERMUTATIONS = {0: ALPHA0, 1: ALPHA1}


class DegenerateFeaturesError(ValueError):
    """Feature covariance is (numerically) singular, e.g. after TCL collapse."""


@dataclass(frozen=True)
class LinearUnmixing:
    mean: np.ndarray
    whitening: np.ndarray
    rotation: np.ndarray
    converged: bool
    iterations: int

    @property
    def matrix(self) -> np.ndarray:
        return self.rotation @ self.whitening

    def transform(self, features: np.ndarray) -> np.ndarray:
        return (np.asarray(features, dtype=float) - self.mean) @ self.matrix.T


@dataclass(frozen=True)
class ComponentPair:
    components: np.ndarray
    input_permutation: int
    source_model: object = None


def _sym_decorrelate(W):
    s, u = np.linalg.eigh(W @ W.T)
    return u @ np.diag(1.0 / np.sqrt(s)) @ u.T @ W


def _fastica_rotation(Z, W, tol, max_iter):
    n = Z.shape[0]
    for it in range(1, max_iter + 1):
        Y = Z @ W.T
        gY = np.tanh(Y)
        g_prime = 1.0 - gY**2
        W_new = _sym_decorrelate(gY.T @ Z / n - g_prime.mean(axis=0)[:, None] * W)
        delta = np.max(np.abs(np.abs(np.einsum("ij,ij->i", W_new, W)) - 1.0))
        W = W_new
        if delta < tol:
            return W, True, it
    return W, False, max_iter


def fit_linear_ica(features: np.ndarray, seed: int = 0, tol: float = 1e-6,
                   max_iter: int = 200) -> LinearUnmixing:
    """Symmetric FastICA with the log-cosh contrast.

    The rotation starts from the identity; if it has not converged after
    ``max_iter`` iterations, one seeded random restart is attempted.
    """
    F = np.asarray(features, dtype=float)
    if F.ndim != 2 or F.shape[1] != 2:
        raise ValueError(f"expected (n, 2) features, got {F.shape}")
    if F.shape[0] < 50:
        raise ValueError("linear ICA needs at least 50 samples")
    if not np.all(np.isfinite(F)):
        raise DegenerateFeaturesError("features contain non-finite values")
    mean = F.mean(axis=0)
    cov = np.cov(F - mean, rowvar=False, bias=True)
    evals, evecs = np.linalg.eigh(cov)
    if evals[0] <= 0 or evals[-1] / evals[0] > 1e10:
        raise DegenerateFeaturesError(f"feature covariance is singular (eigenvalues {evals})")
    whitening = evecs @ np.diag(evals**-0.5) @ evecs.T
    Z = (F - mean) @ whitening.T

    W, converged, iters = _fastica_rotation(Z, np.eye(2), tol, max_iter)
    if not converged:
        q, _ = np.linalg.qr(np.random.default_rng(seed).normal(size=(2, 2)))
        W, converged, more = _fastica_rotation(Z, q, tol, max_iter)
        iters += more
    return LinearUnmixing(mean, whitening, W, converged, iters)


def fit_hica(model: TclModel, pairs: Sequence[np.ndarray], seed: int = 0) -> TclModel:
    """Fit the linear unmixing on the model's pooled training features."""
    feats = np.vstack([model.features(p) for p in pairs])
    return model.replace(unmixing=fit_linear_ica(feats, seed=seed))


def hica(model: TclModel, pair: np.ndarray, input_permutation: int = 0) -> ComponentPair:
    """Components of ``pair`` with its columns fed in the given order.

    ``input_permutation`` 0 keeps (X1, X2); 1 feeds (X2, X1).
    """
    if model.unmixing is None:
        raise ValueError("model has no fitted linear unmixing; call fit_hica first")
    perm = PERMUTATIONS[input_permutation]
    x = np.asarray(pair, dtype=float)[:, perm]
    comps = model.unmixing.transform(model.features(x))
    return ComponentPair(comps, input_permutation, id(model))

"""Artificial tessera pairs: Laplace sources pushed through a random
triangular leaky-ReLU network, so that X1 = f1(E1) and X2 = f2(X1, E2).
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

DIAG_FLOOR = 0.2


class RankConditionError(ValueError):
    """The source parameters do not vary enough across pairs."""


@dataclass(frozen=True)
class MixingNet:
    layers: tuple
    leaky_slope: float = 0.2
    seed: Optional[int] = None
    triangular: bool = True

    @property
    def depth(self) -> int:
        return len(self.layers)

    def __call__(self, sources: np.ndarray) -> np.ndarray:
        h = np.asarray(sources, dtype=float)
        for k, W in enumerate(self.layers):
            h = h @ W.T
            if k < self.depth - 1:
                h = np.where(h > 0, h, self.leaky_slope * h)
        return h

    def inverse(self, observations: np.ndarray) -> np.ndarray:
        h = np.asarray(observations, dtype=float)
        for k in range(self.depth - 1, -1, -1):
            if k < self.depth - 1:
                h = np.where(h > 0, h, h / self.leaky_slope)
            h = np.linalg.solve(self.layers[k], h.T).T
        return h


def sample_mixing(seed: int, depth: int = 5, leaky_slope: float = 0.2,
                  weight_range: float = 1.0, triangular: bool = True) -> MixingNet:
    """Random invertible mixing network.

    Off-diagonal weights are uniform in [-weight_range, weight_range];
    diagonal entries are redrawn until |d| >= 0.2. With ``triangular=False``
    the upper-right entry is also drawn, giving a confounded (non-causal)
    mixing; such layers are redrawn until |det| >= 0.2**2.
    """
    if depth < 1:
        raise ValueError("depth must be >= 1")
    if not 0.0 < leaky_slope <= 1.0:
        raise ValueError("leaky_slope must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    layers = []
    for _ in range(depth):
        while True:
            W = rng.uniform(-weight_range, weight_range, size=(2, 2))
            if triangular:
                W[0, 1] = 0.0
                if np.all(np.abs(np.diag(W)) >= DIAG_FLOOR):
                    break
            elif abs(np.linalg.det(W)) >= DIAG_FLOOR ** 2 and np.linalg.cond(W) < 50:
                break
        layers.append(W)
    return MixingNet(tuple(layers), leaky_slope, seed, triangular)


def identity_mixing(depth: int = 5) -> MixingNet:
    return MixingNet(tuple(np.eye(2) for _ in range(depth)), leaky_slope=1.0)


@dataclass(frozen=True)
class SourceSpec:
    scales: np.ndarray
    seed: Optional[int] = None

    def __post_init__(self):
        s = np.asarray(self.scales, dtype=float)
        if s.ndim != 2 or s.shape[1] != 2:
            raise ValueError("scales must be a (P, 2) matrix")
        if not np.all(np.isfinite(s)) or np.any(s <= 0):
            raise ValueError("Laplace scales must be positive and finite")
        object.__setattr__(self, "scales", s)

    @property
    def n_pairs(self) -> int:
        return self.scales.shape[0]

    def natural_params(self) -> np.ndarray:
        return -1.0 / self.scales


def sample_scales(n_pairs: int, seed: int, low: float = 0.3, high: float = 3.0) -> SourceSpec:
    """Per-pair Laplace scales, log-uniform in [low, high]."""
    rng = np.random.default_rng(seed)
    scales = np.exp(rng.uniform(np.log(low), np.log(high), size=(n_pairs, 2)))
    return SourceSpec(scales, seed)


def check_rank(spec: SourceSpec, tol: float = 1e-8) -> bool:
    eta = spec.natural_params()
    L = eta - eta[0]
    sv = np.linalg.svd(L, compute_uv=False)
    return int(np.sum(sv > tol)) == 2


@dataclass
class GeneratedPair:
    observations: np.ndarray
    sources: np.ndarray
    cause_index: int
    pair_id: int
    scales: np.ndarray = field(default=None)


def generate_pairs(net: MixingNet, spec: SourceSpec, n_per_pair: int = 512,
                   seed: int = 0, orientation: str = "cause_first") -> list[GeneratedPair]:
    """Draw Laplace sources per pair and mix them.

    ``orientation="random"`` swaps the observed columns of each pair with
    probability 1/2 (the sources keep their order); ``cause_index`` records
    where the cause ended up.
    """
    if spec.n_pairs >= 3 and not check_rank(spec):
        raise RankConditionError(
            "natural-parameter differences across pairs do not have full column rank 2")
    if orientation not in ("cause_first", "random"):
        raise ValueError(f"unknown orientation {orientation!r}")
    rng = np.random.default_rng(seed)
    out = []
    for p, b in enumerate(spec.scales):
        E = rng.laplace(0.0, 1.0, size=(n_per_pair, 2)) * b
        X = net(E)
        cause = 1
        if orientation == "random" and rng.random() < 0.5:
            X = X[:, ::-1].copy()
            cause = 2
        out.append(GeneratedPair(X, E, cause, p, b.copy()))
    return out


def export_pairs(pairs: list[GeneratedPair], directory, metadata: Optional[dict] = None) -> Path:
    """Write pairs in the benchmark layout plus a JSON sidecar."""
    from .dataio import write_tcep

    directory = Path(directory)
    write_tcep(directory, [(p.pair_id + 1, p.observations, p.cause_index, 1.0) for p in pairs])
    sidecar = {
        "pairs": [{"pair_id": p.pair_id + 1, "cause_index": p.cause_index,
                   "scales": [float(s) for s in p.scales]} for p in pairs],
    }
    if metadata:
        sidecar.update(metadata)
    path = directory / "synth_meta.json"
    path.write_text(json.dumps(sidecar, indent=1, sort_keys=True) + "\n")
    return path

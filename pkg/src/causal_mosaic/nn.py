"""Multilayer perceptron written directly in NumPy, plus the pair-contrastive
training loop used to learn shared causal mechanisms.

The feature extractor maps R^2 -> R^2 and is followed by a softmax layer
whose classes are pair indices. Two topologies are supported:

* ``"full"``: every hidden unit sees every unit of the previous layer.
* ``"structural"``: two disconnected branches. Branch one sees only input 1
  and produces output 1; branch two sees both inputs and produces output 2.
  Structural layers are stored as full matrices with a fixed 0/1 mask, so
  masked entries are exactly zero and stay zero during training.
"""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

logger = logging.getLogger(__name__)

INPUT_DIM = 2
OUTPUT_DIM = 2

HIDDEN_ACTIVATIONS = ("maxout", "leaky_relu")
OUTPUT_ACTIVATIONS = ("abs", "maxout", "identity")
TOPOLOGIES = ("full", "structural")
STANDARDIZATION = ("pair", "pooled", "none")


class ConfigurationError(ValueError):
    pass


class DegenerateTaskError(ValueError):
    pass


class DivergenceError(RuntimeError):
    pass


@dataclass(frozen=True)
class MlpConfig:
    depth: int = 5
    hidden_width: int = 40
    topology: str = "full"
    sub_widths: Optional[tuple[int, int]] = None
    hidden_activation: str = "maxout"
    output_activation: str = "abs"
    group_size: int = 2
    leaky_slope: float = 0.2

    def __post_init__(self):
        if self.depth < 1 or self.hidden_width < 1:
            raise ConfigurationError("depth and hidden_width must be positive")
        if self.topology not in TOPOLOGIES:
            raise ConfigurationError(f"unknown topology {self.topology!r}")
        if self.hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ConfigurationError(f"unknown hidden activation {self.hidden_activation!r}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ConfigurationError(f"unknown output activation {self.output_activation!r}")
        if self.group_size < 1:
            raise ConfigurationError("group_size must be >= 1")
        if not 0.0 < self.leaky_slope < 1.0:
            raise ConfigurationError("leaky_slope must lie in (0, 1)")
        if self.topology == "structural":
            sub = self.sub_widths
            if sub is None:
                if self.hidden_width < 2:
                    raise ConfigurationError("structural topology needs hidden_width >= 2")
                half = self.hidden_width // 2
                sub = (half, self.hidden_width - half)
            sub = tuple(int(s) for s in sub)
            object.__setattr__(self, "sub_widths", sub)
            if len(sub) != 2 or min(sub) < 1:
                raise ConfigurationError("sub_widths must be two positive integers")
            if sum(sub) != self.hidden_width:
                raise ConfigurationError(
                    f"sub_widths {sub} must sum to hidden_width {self.hidden_width}")
        elif self.sub_widths is not None:
            raise ConfigurationError("sub_widths only applies to the structural topology")

    @property
    def n_layers(self) -> int:
        return self.depth + 1

    def activation(self, layer: int) -> str:
        return self.hidden_activation if layer < self.depth else self.output_activation

    def unit_counts(self) -> list[int]:
        """Post-activation width of every layer, input included."""
        return [INPUT_DIM] + [self.hidden_width] * self.depth + [OUTPUT_DIM]

    def preact_width(self, layer: int) -> int:
        units = self.unit_counts()[layer + 1]
        return units * self.group_size if self.activation(layer) == "maxout" else units

    def layer_shapes(self) -> list[tuple[int, int]]:
        units = self.unit_counts()
        return [(self.preact_width(k), units[k]) for k in range(self.n_layers)]

    def masks(self) -> Optional[list[np.ndarray]]:
        """0/1 connectivity masks for the structural topology (None if full)."""
        if self.topology != "structural":
            return None
        units = self.unit_counts()
        out = []
        for k in range(self.n_layers):
            src = np.array([0, 1]) if k == 0 else np.repeat([0, 1], self.sub_widths)
            dst_units = np.array([0, 1]) if k == self.depth else np.repeat([0, 1], self.sub_widths)
            g = self.group_size if self.activation(k) == "maxout" else 1
            dst = np.repeat(dst_units, g)
            assert dst.size == self.preact_width(k) and src.size == units[k]
            mask = (dst[:, None] == src[None, :]).astype(float)
            if k == 0:
                # branch two sees both inputs
                mask[dst == 1, :] = 1.0
            out.append(mask)
        return out


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.05
    momentum: float = 0.9
    decay_factor: float = 0.1
    max_steps: int = 5000
    batch_size: int = 100
    seed: int = 0
    standardize: str = "pair"

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ConfigurationError("learning_rate must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigurationError("momentum must lie in [0, 1)")
        if not 0.0 < self.decay_factor <= 1.0:
            raise ConfigurationError("decay_factor must lie in (0, 1]")
        if self.max_steps < 1 or self.batch_size < 1:
            raise ConfigurationError("max_steps and batch_size must be positive")
        if self.standardize not in STANDARDIZATION:
            raise ConfigurationError(f"unknown standardization {self.standardize!r}")

    def lr_at(self, step: int) -> float:
        return self.learning_rate * self.decay_factor ** (step / self.max_steps)


@dataclass
class MlpModel:
    config: MlpConfig
    layers: list[tuple[np.ndarray, np.ndarray]]
    head: tuple[np.ndarray, np.ndarray]

    def __post_init__(self):
        shapes = self.config.layer_shapes()
        if len(shapes) != len(self.layers):
            raise ConfigurationError("layer count does not match config")
        for (W, b), shape in zip(self.layers, shapes):
            if W.shape != shape or b.shape != (shape[0],):
                raise ConfigurationError(f"layer shape {W.shape} != expected {shape}")
        V, c = self.head
        if V.ndim != 2 or V.shape[1] != OUTPUT_DIM or c.shape != (V.shape[0],):
            raise ConfigurationError("softmax head must be (P, 2) weights and (P,) bias")

    @property
    def n_classes(self) -> int:
        return self.head[0].shape[0]

    def params(self) -> list[np.ndarray]:
        flat = [p for layer in self.layers for p in layer]
        return flat + list(self.head)

    def copy(self) -> "MlpModel":
        return MlpModel(self.config, [(W.copy(), b.copy()) for W, b in self.layers],
                        (self.head[0].copy(), self.head[1].copy()))


def init_model(config: MlpConfig, n_classes: int, rng: np.random.Generator) -> MlpModel:
    """Glorot-uniform weights, zero biases; structural masks applied."""
    masks = config.masks()
    layers = []
    for k, (fan_out, fan_in) in enumerate(config.layer_shapes()):
        s = np.sqrt(6.0 / (fan_in + fan_out))
        W = rng.uniform(-s, s, size=(fan_out, fan_in))
        if masks is not None:
            W *= masks[k]
        layers.append((W, np.zeros(fan_out)))
    s = np.sqrt(6.0 / (n_classes + OUTPUT_DIM))
    head = (rng.uniform(-s, s, size=(n_classes, OUTPUT_DIM)), np.zeros(n_classes))
    return MlpModel(config, layers, head)


def _activate(z, kind, config):
    if kind == "maxout":
        g = config.group_size
        zg = z.reshape(z.shape[0], -1, g)
        idx = np.argmax(zg, axis=2)  # first max wins ties
        out = np.take_along_axis(zg, idx[..., None], axis=2)[..., 0]
        return out, idx
    if kind == "leaky_relu":
        return np.where(z > 0, z, config.leaky_slope * z), None
    if kind == "abs":
        return np.abs(z), None
    return z, None


def _activate_backward(dout, z, idx, kind, config):
    if kind == "maxout":
        g = config.group_size
        dz = np.zeros((z.shape[0], dout.shape[1], g))
        np.put_along_axis(dz, idx[..., None], dout[..., None], axis=2)
        return dz.reshape(z.shape)
    if kind == "leaky_relu":
        return np.where(z > 0, dout, config.leaky_slope * dout)
    if kind == "abs":
        return dout * np.sign(z)
    return dout


def forward(model: MlpModel, batch: np.ndarray, return_cache: bool = False):
    """Feature extractor h(X; theta) for an (n, 2) batch."""
    x = np.asarray(batch, dtype=float)
    if x.ndim != 2 or x.shape[1] != INPUT_DIM:
        raise ConfigurationError(f"expected an (n, {INPUT_DIM}) batch, got shape {x.shape}")
    cfg = model.config
    cache = []
    a = x
    for k, (W, b) in enumerate(model.layers):
        z = a @ W.T + b
        out, idx = _activate(z, cfg.activation(k), cfg)
        cache.append((a, z, idx))
        a = out
    if return_cache:
        return a, cache
    return a


def softmax_logits(model: MlpModel, features: np.ndarray) -> np.ndarray:
    V, c = model.head
    return features @ V.T + c


def _log_softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def loss(model: MlpModel, batch: np.ndarray, labels: np.ndarray) -> float:
    logp = _log_softmax(softmax_logits(model, forward(model, batch)))
    return float(-logp[np.arange(len(labels)), labels].mean())


def loss_and_grads(model: MlpModel, batch: np.ndarray, labels: np.ndarray):
    """Mean softmax cross-entropy and its gradient for every parameter.

    Gradients are returned in the order of ``model.params()``. Masked
    structural entries receive exactly zero gradient.
    """
    labels = np.asarray(labels)
    n = batch.shape[0]
    feats, cache = forward(model, batch, return_cache=True)
    logits = softmax_logits(model, feats)
    logp = _log_softmax(logits)
    loss = -logp[np.arange(n), labels].mean()

    dlogits = np.exp(logp)
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    V, _ = model.head
    dV = dlogits.T @ feats
    dc = dlogits.sum(axis=0)
    da = dlogits @ V

    cfg = model.config
    masks = cfg.masks()
    grads = []
    for k in range(cfg.n_layers - 1, -1, -1):
        a_in, z, idx = cache[k]
        W, _ = model.layers[k]
        dz = _activate_backward(da, z, idx, cfg.activation(k), cfg)
        dW = dz.T @ a_in
        if masks is not None:
            dW *= masks[k]
        grads.append(dz.sum(axis=0))
        grads.append(dW)
        if k > 0:
            da = dz @ W
    grads.reverse()
    return loss, grads + [dV, dc]


def _standardizer(pairs: Sequence[np.ndarray], mode: str):
    if mode == "pooled":
        pooled = np.vstack(pairs)
        return pooled.mean(axis=0), _safe_std(pooled)
    return None


def _safe_std(x):
    s = x.std(axis=0)
    return np.where(s > 0, s, 1.0)


def standardize_pair(pair: np.ndarray, mode: str, pooled=None) -> np.ndarray:
    x = np.asarray(pair, dtype=float)
    if mode == "pair":
        return (x - x.mean(axis=0)) / _safe_std(x)
    if mode == "pooled":
        mean, std = pooled
        return (x - mean) / std
    return x


@dataclass
class TclModel:
    """Trained feature extractor with its softmax head and preprocessing.

    ``unmixing`` is filled in by :func:`causal_mosaic.lica.fit_hica`;
    together they realize hICA.
    """
    mlp: MlpModel
    train_accuracy: float
    standardize: str = "pair"
    pooled_stats: Optional[tuple[np.ndarray, np.ndarray]] = None
    pair_ids: tuple = ()
    unmixing: Optional[object] = None
    hyperparameters: dict = field(default_factory=dict)
    loss_history: Optional[np.ndarray] = None

    def preprocess(self, pair: np.ndarray) -> np.ndarray:
        return standardize_pair(pair, self.standardize, self.pooled_stats)

    def features(self, pair: np.ndarray) -> np.ndarray:
        return forward(self.mlp, self.preprocess(pair))

    def predict(self, pair: np.ndarray) -> np.ndarray:
        logits = softmax_logits(self.mlp, self.features(pair))
        return np.argmax(logits, axis=1)

    def replace(self, **changes) -> "TclModel":
        return dataclasses.replace(self, **changes)


def _stack_labeled(pairs):
    X = np.vstack(pairs)
    y = np.concatenate([np.full(len(p), i) for i, p in enumerate(pairs)])
    return X, y


def train_tcl(pairs: Sequence[np.ndarray], mlp_config: MlpConfig,
              train_config: TrainConfig, pair_ids: Optional[Sequence] = None,
              record_loss: bool = False) -> TclModel:
    """Train the feature extractor to classify sample points by pair index.

    Mini-batch SGD with momentum on the softmax cross-entropy; the learning
    rate decays exponentially to ``learning_rate * decay_factor`` at
    ``max_steps``. Batches are drawn by reshuffling epochs.

    Raises:
        DegenerateTaskError: fewer than two pairs.
        DivergenceError: the loss becomes non-finite.
    """
    pairs = [np.asarray(p, dtype=float) for p in pairs]
    if len(pairs) < 2:
        raise DegenerateTaskError("pair-index classification needs at least 2 pairs")
    for p in pairs:
        if p.ndim != 2 or p.shape[1] != INPUT_DIM:
            raise ConfigurationError(f"pair with shape {p.shape} is not (n, 2)")
        if not np.all(np.isfinite(p)):
            raise ConfigurationError("pair contains non-finite values")
    tc = train_config
    pooled = _standardizer(pairs, tc.standardize)
    X, y = _stack_labeled([standardize_pair(p, tc.standardize, pooled) for p in pairs])
    rng = np.random.default_rng(tc.seed)
    model = init_model(mlp_config, len(pairs), rng)

    params = model.params()
    velocity = [np.zeros_like(p) for p in params]
    n = X.shape[0]
    bs = min(tc.batch_size, n)
    order = rng.permutation(n)
    pos = 0
    history = np.empty(tc.max_steps) if record_loss else None
    for step in range(tc.max_steps):
        if pos + bs > n:
            order = rng.permutation(n)
            pos = 0
        idx = order[pos:pos + bs]
        pos += bs
        loss, grads = loss_and_grads(model, X[idx], y[idx])
        if not np.isfinite(loss):
            raise DivergenceError(f"non-finite loss at step {step}")
        if history is not None:
            history[step] = loss
        lr = tc.lr_at(step)
        for p, v, g in zip(params, velocity, grads):
            v *= tc.momentum
            v -= lr * g
            p += v

    for p in params:
        if not np.all(np.isfinite(p)):
            raise DivergenceError("non-finite parameters after training")
    acc = float(np.mean(np.argmax(softmax_logits(model, forward(model, X)), axis=1) == y))
    ids = tuple(pair_ids) if pair_ids is not None else tuple(range(len(pairs)))
    return TclModel(mlp=model, train_accuracy=acc, standardize=tc.standardize,
                    pooled_stats=pooled, pair_ids=ids, loss_history=history,
                    hyperparameters=dataclasses.asdict(tc) | {"mlp": dataclasses.asdict(mlp_config)})


def classification_accuracy(model: TclModel, points: np.ndarray, labels: np.ndarray) -> float:
    """Fraction of points whose argmax-softmax class equals their pair index.

    ``points`` are raw observations; each labeled group is preprocessed with
    the model's standardization (per pair when the model standardizes per
    pair, so groups are identified by their label).
    """
    labels = np.asarray(labels)
    points = np.asarray(points, dtype=float)
    if labels.size == 0:
        raise ValueError("classification accuracy of an empty held-out set")
    if labels.min() < 0 or labels.max() >= model.mlp.n_classes:
        raise ValueError("held-out labels are not valid pair indices for this model")
    pred = np.empty(labels.shape, dtype=int)
    for lab in np.unique(labels):
        sel = labels == lab
        pred[sel] = model.predict(points[sel])
    return float(np.mean(pred == labels))


def gradient_check(model: MlpModel, batch: np.ndarray, labels: np.ndarray,
                   step: float = 1e-5, eps: float = 1e-6,
                   grad_fn: Callable = loss_and_grads) -> float:
    """Max relative error between analytic and central-difference gradients.

    Structurally masked weights are not parameters and are skipped.
    """
    _, analytic = grad_fn(model, batch, labels)
    masks = model.config.masks()
    params = model.params()
    worst = 0.0
    for k, (p, g) in enumerate(zip(params, analytic)):
        mask = None
        if masks is not None and k < 2 * model.config.n_layers and k % 2 == 0:
            mask = masks[k // 2]
        for i in np.ndindex(p.shape):
            if mask is not None and mask[i] == 0:
                continue
            old = p[i]
            p[i] = old + step
            lp = loss(model, batch, labels)
            p[i] = old - step
            lm = loss(model, batch, labels)
            p[i] = old
            fd = (lp - lm) / (2 * step)
            err = abs(g[i] - fd) / max(abs(g[i]), abs(fd), eps)
            worst = max(worst, err)
    return worst

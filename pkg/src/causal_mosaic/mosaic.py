"""Causal Mosaic: many TCLs trained on random pair subsets, filtered by
training and leave-one-out validation accuracy, and combined per test pair
by a weighted score.

Seeds for every training job derive from ``(seed, n, m)`` so results do not
depend on how jobs are scheduled.
"""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import lica
from .dataio import CausalPair
from .indep import DindepKind
from .infer import align, infer_pair
from .nn import (DivergenceError, MlpConfig, TclModel, TrainConfig,
                 classification_accuracy, train_tcl)

logger = logging.getLogger(__name__)

SCORINGS = ("eq5", "eq6", "eq7", "eq8")


@dataclass(frozen=True)
class EnsembleConfig:
    n_models: int = 300
    n_retries: int = 10
    min_set_size: int = 4
    max_set_size: int = 32
    thre_t: float = 0.7
    thre_v: float = 0.7
    scoring: str = "eq8"
    seed: int = 0
    measure: str = "dcor"
    rule: str = "rule1"
    topology: str = "structural"
    output_activation: str = "maxout"
    standardize: str = "pair"
    max_points: int = 1000
    # random hyperparameter search space
    depth_range: tuple = (2, 8)
    width_range: tuple = (8, 64)
    lr_range: tuple = (1e-3, 1e-1)
    decay_range: tuple = (0.1, 1.0)
    momentum_choices: tuple = (0.5, 0.9)
    batch_choices: tuple = (64, 128, 256)
    steps_range: tuple = (2000, 10000)
    # threshold search
    n_threshold_settings: int = 100
    threshold_range: tuple = (0.65, 0.75)
    min_tesserae: int = 2
    max_sparse_pairs: int = 10

    def __post_init__(self):
        if self.n_models < 1 or self.n_retries < 1:
            raise ValueError("n_models and n_retries must be >= 1")
        if not 1 <= self.min_set_size <= self.max_set_size:
            raise ValueError("pair set size range must satisfy 1 <= min <= max")
        for name in ("thre_t", "thre_v"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.scoring not in SCORINGS:
            raise ValueError(f"scoring must be one of {SCORINGS}")
        DindepKind(self.measure)
        if self.rule not in ("rule1", "rule2"):
            raise ValueError("rule must be rule1 or rule2")
        if self.max_points < 50:
            raise ValueError("max_points must be >= 50")
        lo, hi = self.threshold_range
        if not 0.0 <= lo <= hi <= 1.0:
            raise ValueError("threshold_range must lie within [0, 1]")


@dataclass
class TesseraPool:
    """Trained models, their training sets and accuracy tables.

    ``vaccs[n, k]`` is the validation accuracy of model n with pair
    ``pair_ids[k]`` left out; it is NaN where that pair trained model n.
    """
    models: list
    training_sets: list
    pair_ids: tuple = ()
    taccs: Optional[np.ndarray] = None
    vaccs: Optional[np.ndarray] = None
    cacc: Optional[np.ndarray] = None
    manifest: list = field(default_factory=list)
    # per (model, pair): dindep under the two input permutations, inferred cause
    w_trials: Optional[np.ndarray] = None
    votes: Optional[np.ndarray] = None
    w_models: Optional[np.ndarray] = None
    vacc_all: Optional[np.ndarray] = None

    def __post_init__(self):
        if len(self.models) != len(self.training_sets):
            raise ValueError("one training set per model is required")


@dataclass
class MosaicScore:
    pair_id: object
    tessera_ids: list
    w_n: np.ndarray
    w_ns: np.ndarray
    directions: np.ndarray
    score: float
    flags: tuple = ()

    @property
    def cause_index(self) -> Optional[int]:
        if self.score > 0:
            return 1
        if self.score < 0:
            return 2
        return None

    @property
    def decision(self) -> str:
        return {1: "X1->X2", 2: "X2->X1", None: "?"}[self.cause_index]


def subsample(data: np.ndarray, max_points: int, seed) -> np.ndarray:
    if len(data) <= max_points:
        return np.asarray(data, dtype=float)
    idx = np.sort(np.random.default_rng(seed).choice(len(data), max_points, replace=False))
    return np.asarray(data, dtype=float)[idx]


def sample_hyperparameters(config: EnsembleConfig, rng: np.random.Generator):
    depth = int(rng.integers(config.depth_range[0], config.depth_range[1] + 1))
    width = int(rng.integers(config.width_range[0], config.width_range[1] + 1))
    if config.topology == "structural":
        width = max(width, 2)
    lr = float(np.exp(rng.uniform(np.log(config.lr_range[0]), np.log(config.lr_range[1]))))
    decay = float(rng.uniform(*config.decay_range))
    momentum = float(rng.choice(config.momentum_choices))
    batch = int(rng.choice(config.batch_choices))
    steps = int(rng.integers(config.steps_range[0], config.steps_range[1] + 1))
    seed = int(rng.integers(2**63))
    mlp = MlpConfig(depth=depth, hidden_width=width, topology=config.topology,
                    output_activation=config.output_activation)
    train = TrainConfig(learning_rate=lr, momentum=momentum, decay_factor=decay,
                        max_steps=steps, batch_size=batch, seed=seed,
                        standardize=config.standardize)
    return mlp, train


def _job_rng(seed: int, *path: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *path]))


def _split_half(data, rng):
    order = rng.permutation(len(data))
    half = len(data) // 2
    return data[np.sort(order[:half])], data[np.sort(order[half:])]


def best_candidate(caccs: Sequence[Optional[float]]) -> Optional[int]:
    """Index of the highest Cacc (first on ties); failed retries are None."""
    best = None
    for m, c in enumerate(caccs):
        if c is not None and (best is None or c > caccs[best]):
            best = m
    return best


def train_one_set(pairs: Sequence[CausalPair], config: EnsembleConfig, n: int):
    """Training for one random pair set: returns (model, T_n, Cacc, record)."""
    rng = _job_rng(config.seed, n)
    k = int(rng.integers(config.min_set_size, config.max_set_size + 1))
    chosen = np.sort(rng.choice(len(pairs), size=k, replace=False))
    members = [pairs[i] for i in chosen]
    data = [subsample(p.data, config.max_points, (config.seed, int(p.pair_id)))
            for p in members]
    halves = [_split_half(d, rng) for d in data]
    train = align([h[0] for h in halves], [p.cause for p in members])
    test = align([h[1] for h in halves], [p.cause for p in members])
    test_points = np.vstack(test)
    test_labels = np.concatenate([np.full(len(t), i) for i, t in enumerate(test)])
    ids = tuple(int(p.pair_id) for p in members)

    candidates = []
    for m in range(config.n_retries):
        mlp_cfg, train_cfg = sample_hyperparameters(config, _job_rng(config.seed, n, m))
        try:
            model = train_tcl(train, mlp_cfg, train_cfg, pair_ids=ids)
            model = lica.fit_hica(model, train, seed=train_cfg.seed)
        except (DivergenceError, lica.DegenerateFeaturesError) as exc:
            logger.info("set %d retry %d failed: %s", n, m, exc)
            candidates.append((None, None))
            continue
        candidates.append((model, classification_accuracy(model, test_points, test_labels)))
    tried = [c for _, c in candidates]
    m = best_candidate(tried)
    if m is None:
        logger.warning("set %d: all %d trainings failed; recording a null model", n,
                       config.n_retries)
        return None, ids, float("nan"), {"set": n, "pair_ids": list(ids), "caccs": tried}
    model, cacc = candidates[m]
    record = {"set": n, "pair_ids": list(ids), "cacc": cacc, "retry": m, "caccs": tried,
              "hyperparameters": model.hyperparameters}
    return model, ids, cacc, record


def _train_set_job(args):
    pairs, config, n = args
    return train_one_set(pairs, config, n)


def random_training(pairs: Sequence[CausalPair], config: EnsembleConfig,
                    jobs: int = 1) -> TesseraPool:
    """Train ``n_models`` TCLs on random subsets, keeping the best of
    ``n_retries`` random hyperparameter draws per subset."""
    if len(pairs) <= config.max_set_size:
        raise ValueError(f"need more than {config.max_set_size} labeled pairs, got {len(pairs)}")
    if any(p.cause not in (1, 2) for p in pairs):
        raise ValueError("every training pair needs a ground-truth cause index")
    tasks = [(list(pairs), config, n) for n in range(config.n_models)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_train_set_job, tasks))
    else:
        results = [_train_set_job(t) for t in tasks]
    models = [r[0] for r in results]
    return TesseraPool(models=models, training_sets=[r[1] for r in results],
                       pair_ids=tuple(int(p.pair_id) for p in pairs),
                       cacc=np.array([r[2] for r in results]),
                       manifest=[r[3] for r in results])


def _evaluate_model(args):
    model, pairs, config = args
    out = np.full((len(pairs), 3), np.nan)
    if model is None:
        return out
    for k, p in enumerate(pairs):
        data = subsample(p.data, config.max_points, (config.seed, int(p.pair_id)))
        d = infer_pair(model, data, config.rule, config.measure)
        if config.rule == "rule1":
            out[k] = (d.evidence[0].value, d.evidence[1].value, d.cause_index)
        else:
            c0 = max(e.value for e in d.evidence if e.permutation == 0)
            c1 = max(e.value for e in d.evidence if e.permutation == 1)
            out[k] = (c0, c1, d.cause_index)
    return out


def accuracy_tables(votes: np.ndarray, truth: np.ndarray, training_sets, pair_ids,
                    usable=None):
    """Tacc (N,), leave-one-out Vacc (N, S) and Vacc over all of S \\ T_n (N,)
    from an (N, S) table of inferred causes."""
    votes = np.asarray(votes, dtype=float)
    N, S = votes.shape
    index = {pid: k for k, pid in enumerate(pair_ids)}
    taccs = np.full(N, np.nan)
    vaccs = np.full((N, S), np.nan)
    vacc_all = np.full(N, np.nan)
    for n, members in enumerate(training_sets):
        if usable is not None and not usable[n]:
            continue
        inside = np.array([index[i] for i in members], dtype=int)
        correct = votes[n] == truth
        taccs[n] = correct[inside].mean()
        outside = np.setdiff1d(np.arange(S), inside)
        if outside.size == 0:
            continue
        total = correct[outside].sum()
        vacc_all[n] = total / outside.size
        if outside.size > 1:
            vaccs[n, outside] = (total - correct[outside]) / (outside.size - 1)
    return taccs, vaccs, vacc_all


def evaluate_pool(pairs: Sequence[CausalPair], pool: TesseraPool, config: EnsembleConfig,
                  jobs: int = 1) -> TesseraPool:
    """Run every model on every pair once and derive Tacc, Vacc and w_n.

    Tacc_n is the direction accuracy on T_n; Vacc_n(l) is the accuracy on
    (S \\ T_n) \\ {l}. w_n is the mean dindep of the model's training pairs
    in aligned orientation.
    """
    ids = [int(p.pair_id) for p in pairs]
    if tuple(ids) != tuple(pool.pair_ids):
        raise ValueError("pool was trained on a different pair list")
    tasks = [(m, list(pairs), config) for m in pool.models]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            tables = list(ex.map(_evaluate_model, tasks))
    else:
        tables = [_evaluate_model(t) for t in tasks]
    table = np.stack(tables) if tables else np.zeros((0, len(pairs), 3))
    truth = np.array([p.cause for p in pairs], dtype=float)
    taccs, vaccs, vacc_all = accuracy_tables(table[:, :, 2], truth, pool.training_sets, ids,
                                             [m is not None for m in pool.models])
    index = {pid: k for k, pid in enumerate(ids)}
    w_models = np.full(len(pool.models), np.nan)
    for n, (model, members) in enumerate(zip(pool.models, pool.training_sets)):
        if model is None:
            continue
        inside = np.array([index[i] for i in members])
        aligned = np.where(truth[inside] == 1, table[n, inside, 0], table[n, inside, 1])
        w_models[n] = aligned.mean()
    pool.taccs, pool.vaccs, pool.w_models, pool.vacc_all = taccs, vaccs, w_models, vacc_all
    pool.w_trials = table[:, :, :2]
    pool.votes = table[:, :, 2]
    return pool


def select_tesserae(pool: TesseraPool, thre_t: float, thre_v: float) -> dict:
    """TSR_s for every pair: models not trained on s whose Tacc > thre_t and
    whose validation accuracy with s left out exceeds thre_v."""
    out = {}
    for k, pid in enumerate(pool.pair_ids):
        chosen = []
        for n, members in enumerate(pool.training_sets):
            if pool.models[n] is None or pid in members:
                continue
            if pool.taccs[n] > thre_t and pool.vaccs[n, k] > thre_v:
                chosen.append(n)
        out[pid] = chosen
    return out


def score(w_n, w_ns, directions, scoring: str = "eq8") -> float:
    w_n = np.asarray(w_n, dtype=float)
    w_ns = np.asarray(w_ns, dtype=float).reshape(-1, 2)
    directions = np.asarray(directions, dtype=float)
    w1, w2 = w_ns[:, 0], w_ns[:, 1]
    if scoring == "eq5":
        return float(np.sum(w1 * w_n * (w1 > w2)) - np.sum(w2 * w_n * (w1 < w2)))
    if scoring == "eq6":
        return float(np.sum(w_n * (w1 - w2)))
    if scoring == "eq7":
        return float(np.sum(w_n * directions))
    if scoring == "eq8":
        return float(np.sum(w1 - w2))
    raise ValueError(f"unknown scoring {scoring!r}")


def ensemble_decide(pair_id, tesserae: Sequence[int], pool: TesseraPool,
                    scoring: str = "eq8") -> MosaicScore:
    k = pool.pair_ids.index(pair_id)
    t = list(tesserae)
    if not t:
        return MosaicScore(pair_id, [], np.zeros(0), np.zeros((0, 2)), np.zeros(0), 0.0,
                           flags=("empty_pool",))
    w_n = pool.w_models[t]
    w_ns = pool.w_trials[t, k, :]
    directions = np.where(pool.votes[t, k] == 1, 1.0, -1.0)
    return MosaicScore(pair_id, t, w_n, w_ns, directions, score(w_n, w_ns, directions, scoring))


def decide_new_pair(pool: TesseraPool, data: np.ndarray, config: EnsembleConfig,
                    pair_id="new") -> MosaicScore:
    """Score a pair outside the labeled set S.

    Nothing needs to be left out, so tesserae are chosen by Tacc and by the
    validation accuracy over all of S \\ T_n.
    """
    data = subsample(data, config.max_points, (config.seed, 0))
    chosen = [n for n, m in enumerate(pool.models) if m is not None
              and pool.taccs[n] > config.thre_t and pool.vacc_all[n] > config.thre_v]
    if not chosen:
        return MosaicScore(pair_id, [], np.zeros(0), np.zeros((0, 2)), np.zeros(0), 0.0,
                           flags=("empty_pool",))
    w_ns = np.empty((len(chosen), 2))
    directions = np.empty(len(chosen))
    for k, n in enumerate(chosen):
        out = _evaluate_model((pool.models[n], [CausalPair(0, data)], config))[0]
        w_ns[k] = out[:2]
        directions[k] = 1.0 if out[2] == 1 else -1.0
    w_n = pool.w_models[chosen]
    return MosaicScore(pair_id, chosen, w_n, w_ns, directions,
                       score(w_n, w_ns, directions, config.scoring))


def weighted_accuracy(decisions: Sequence[Optional[int]], weights: Sequence[float],
                      ground_truth: Sequence[int]) -> tuple[float, float]:
    """(weighted, unweighted) accuracy in percent; undecided pairs count 0.5."""
    credit = np.array([0.5 if d is None else float(d == g)
                       for d, g in zip(decisions, ground_truth)])
    w = np.asarray(weights, dtype=float)
    if credit.size == 0:
        raise ValueError("no decisions to score")
    return 100.0 * float(np.sum(w * credit) / np.sum(w)), 100.0 * float(credit.mean())


def decide_all(pool: TesseraPool, thre_t: float, thre_v: float, scoring: str = "eq8") -> dict:
    tsr = select_tesserae(pool, thre_t, thre_v)
    return {pid: ensemble_decide(pid, tsr[pid], pool, scoring) for pid in pool.pair_ids}


@dataclass
class ThresholdResult:
    thre_t: float
    thre_v: float
    weighted: float
    unweighted: float
    sparse_pairs: int
    kept: bool


def threshold_search(pairs: Sequence[CausalPair], pool: TesseraPool,
                     config: EnsembleConfig) -> list[ThresholdResult]:
    """Random (ThreT, ThreV) settings; settings leaving more than
    ``max_sparse_pairs`` pairs with fewer than ``min_tesserae`` are dropped."""
    rng = _job_rng(config.seed, 1_000_003)
    lo, hi = config.threshold_range
    truth = [p.cause for p in pairs]
    weights = [p.weight for p in pairs]
    out = []
    for _ in range(config.n_threshold_settings):
        tt, tv = rng.uniform(lo, hi, size=2)
        tsr = select_tesserae(pool, tt, tv)
        sparse = sum(len(v) < config.min_tesserae for v in tsr.values())
        decisions = [ensemble_decide(p.pair_id, tsr[p.pair_id], pool, config.scoring).cause_index
                     for p in pairs]
        wacc, acc = weighted_accuracy(decisions, weights, truth)
        out.append(ThresholdResult(float(tt), float(tv), wacc, acc, sparse,
                                   sparse <= config.max_sparse_pairs))
    return out


def summarize(results: Sequence[ThresholdResult]) -> dict:
    kept = [r for r in results if r.kept]
    if not kept:
        return {"n_settings": len(results), "n_kept": 0}
    w = np.array([r.weighted for r in kept])
    u = np.array([r.unweighted for r in kept])
    se = (lambda a: float(a.std(ddof=1) / np.sqrt(a.size)) if a.size > 1 else 0.0)
    return {"n_settings": len(results), "n_kept": len(kept),
            "median_weighted": float(np.median(w)), "stderr_weighted": se(w),
            "median_unweighted": float(np.median(u)), "stderr_unweighted": se(u),
            "best_weighted": float(w.max())}

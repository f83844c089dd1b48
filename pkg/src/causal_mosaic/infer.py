"""Direction-inference rules on hICA components.

Permutation indices: 0 feeds the pair as (X1, X2), 1 feeds (X2, X1).
Cause indices are 1-based (1 or 2); ``None`` means inconclusive.

Ties are broken deterministically (first permutation, first index) and
flagged on the returned decision.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from . import lica
from .indep import DindepKind, dindep, hsic_pvalue
from .nn import MlpConfig, TclModel, TrainConfig, train_tcl

logger = logging.getLogger(__name__)

MIN_ENVIRONMENTS = 3


class Evidence(NamedTuple):
    permutation: Optional[int]
    variable: Optional[int]
    component: Optional[int]
    value: float


@dataclass
class DirectionDecision:
    cause_index: Optional[int]
    evidence: list
    rule: str
    tie: bool = False
    flags: tuple = ()

    @property
    def inconclusive(self) -> bool:
        return self.cause_index is None

    @property
    def label(self) -> str:
        return "?" if self.cause_index is None else str(self.cause_index)

    @property
    def margin(self) -> float:
        """Best evidence for the chosen cause minus best for the other one."""
        if self.cause_index is None or not self.evidence:
            return 0.0
        mine = max(e.value for e in self.evidence if _cause_of(e, self.rule) == self.cause_index)
        other = [e.value for e in self.evidence if _cause_of(e, self.rule) != self.cause_index]
        return mine - max(other) if other else mine


def _cause_of(ev: Evidence, rule: str) -> int:
    if rule == "rule1":
        return ev.permutation + 1
    return ev.variable


@dataclass
class EnvironmentVote:
    per_environment: list
    winner: Optional[int]
    margin: int
    tie: bool = False
    decisions: list = field(default_factory=list)


def align(pairs: Sequence[np.ndarray], cause_indices: Sequence[int]) -> list[np.ndarray]:
    """Put the cause of every pair in column 1."""
    out = []
    for pair, c in zip(pairs, cause_indices):
        if c not in (1, 2):
            raise ValueError(f"cause index must be 1 or 2, got {c}")
        pair = np.asarray(pair, dtype=float)
        out.append(pair if c == 1 else pair[:, ::-1].copy())
    return out


def _pair_dindep(components: np.ndarray, measure) -> float:
    return dindep(components[:, 0], components[:, 1], measure)


def decide_rule1(values: Sequence[float]) -> DirectionDecision:
    """Pick the input permutation whose components are most independent."""
    v0, v1 = float(values[0]), float(values[1])
    best = 0 if v0 >= v1 else 1
    evidence = [Evidence(0, None, None, v0), Evidence(1, None, None, v1)]
    return DirectionDecision(best + 1, evidence, "rule1", tie=v0 == v1)


def infer_rule1(c_alpha0: lica.ComponentPair, c_alpha1: lica.ComponentPair,
                measure=DindepKind.DCOR_COMPLEMENT) -> DirectionDecision:
    values = [_pair_dindep(c.components, measure) for c in (c_alpha0, c_alpha1)]
    return decide_rule1(values)


def decide_rule2(table: np.ndarray, rule: str = "rule2") -> DirectionDecision:
    """Argmax over a (permutation, variable i, component j) table of dindep.

    The table may have a single permutation slice (simplified rule used per
    environment).
    """
    table = np.asarray(table, dtype=float)
    evidence = [Evidence(a, i + 1, j + 1, float(table[a, i, j]))
                for a in range(table.shape[0]) for i in range(2) for j in range(2)]
    best = max(evidence, key=lambda e: e.value)  # first maximum wins
    top = {e.variable for e in evidence if e.value == best.value}
    return DirectionDecision(best.variable, evidence, rule, tie=len(top) > 1)


def rule2_table(pair: np.ndarray, components: Sequence[lica.ComponentPair],
                measure=DindepKind.DCOR_COMPLEMENT) -> np.ndarray:
    pair = np.asarray(pair, dtype=float)
    table = np.empty((len(components), 2, 2))
    for a, comp in enumerate(components):
        for i in range(2):
            for j in range(2):
                table[a, i, j] = dindep(pair[:, i], comp.components[:, j], measure)
    return table


def infer_rule2(pair: np.ndarray, c_alpha0: lica.ComponentPair, c_alpha1: lica.ComponentPair,
                measure=DindepKind.DCOR_COMPLEMENT) -> DirectionDecision:
    """Choose the observed variable most independent of some component."""
    return decide_rule2(rule2_table(pair, [c_alpha0, c_alpha1], measure))


def fit_aligned(pairs: Sequence[np.ndarray], cause_indices: Optional[Sequence[int]],
                mlp_config: MlpConfig, train_config: TrainConfig, pair_ids=None) -> TclModel:
    """Align, train TCL and fit the linear unmixing (hICA) in one go."""
    aligned = align(pairs, cause_indices) if cause_indices is not None else list(pairs)
    model = train_tcl(aligned, mlp_config, train_config, pair_ids=pair_ids)
    return lica.fit_hica(model, aligned, seed=train_config.seed)


def infer_pair(model: TclModel, pair: np.ndarray, rule: str = "rule1",
               measure=DindepKind.DCOR_COMPLEMENT) -> DirectionDecision:
    """Run both input permutations through hICA and apply a rule."""
    c0 = lica.hica(model, pair, 0)
    c1 = lica.hica(model, pair, 1)
    if rule == "rule1":
        return infer_rule1(c0, c1, measure)
    if rule == "rule2":
        return infer_rule2(pair, c0, c1, measure)
    raise ValueError(f"unknown rule {rule!r}")


def algorithm1(train_pairs: Sequence[np.ndarray], train_causes: Sequence[int],
               test_pair: np.ndarray, rule: str = "rule1", mlp_config: MlpConfig = MlpConfig(),
               train_config: TrainConfig = TrainConfig(),
               measure=DindepKind.DCOR_COMPLEMENT) -> DirectionDecision:
    model = fit_aligned(train_pairs, train_causes, mlp_config, train_config)
    return infer_pair(model, test_pair, rule, measure)


def environment_components(environments: Sequence[np.ndarray], mlp_config: MlpConfig,
                           train_config: TrainConfig):
    """Train one TCL on all (aligned) environments and return hICA outputs.

    No input permutation is applied.
    """
    if len(environments) < MIN_ENVIRONMENTS:
        raise ValueError(f"need at least {MIN_ENVIRONMENTS} environments for the rank condition, "
                         f"got {len(environments)}")
    model = fit_aligned(environments, None, mlp_config, train_config)
    return model, [lica.hica(model, env, 0) for env in environments]


def majority_vote(votes: Sequence[Optional[int]]) -> EnvironmentVote:
    votes = list(votes)
    n1 = sum(v == 1 for v in votes)
    n2 = sum(v == 2 for v in votes)
    if n1 == n2:
        return EnvironmentVote(votes, None, 0, tie=True)
    return EnvironmentVote(votes, 1 if n1 > n2 else 2, abs(n1 - n2))


def vote_environments(environments, components, measure=DindepKind.DCOR_COMPLEMENT) -> EnvironmentVote:
    decisions = [decide_rule2(rule2_table(env, [comp], measure), rule="rule2_env")
                 for env, comp in zip(environments, components)]
    vote = majority_vote([d.cause_index for d in decisions])
    vote.decisions = decisions
    return vote


def infer_multi_env(environments: Sequence[np.ndarray], measure=DindepKind.DCOR_COMPLEMENT,
                    mlp_config: MlpConfig = MlpConfig(),
                    train_config: TrainConfig = TrainConfig()) -> EnvironmentVote:
    """Per-environment simplified rule2 followed by majority voting."""
    _, comps = environment_components(environments, mlp_config, train_config)
    return vote_environments(environments, comps, measure)


def infer_pooled(environments, components, measure=DindepKind.DCOR_COMPLEMENT) -> DirectionDecision:
    """Baseline: one argmax over (i, j) on samples pooled across environments."""
    X = np.vstack([np.asarray(e, dtype=float) for e in environments])
    C = np.vstack([c.components for c in components])
    pooled = lica.ComponentPair(C, 0)
    return decide_rule2(rule2_table(X, [pooled], measure), rule="pooled")


def infer_thresholded(pair: np.ndarray, components: Sequence[lica.ComponentPair],
                      alpha: float = 0.05, seed: int = 0) -> DirectionDecision:
    """Rule2 grid with HSIC tests at level ``alpha``.

    Independence is accepted when p > alpha. The decision is the cause
    shared by all accepted cells; no acceptance or acceptances pointing to
    different causes give an inconclusive result.
    """
    pair = np.asarray(pair, dtype=float)
    evidence = []
    for comp in components:
        for i in range(2):
            for j in range(2):
                p = hsic_pvalue(pair[:, i], comp.components[:, j], seed=seed)
                evidence.append(Evidence(comp.input_permutation, i + 1, j + 1, p))
    accepted = {e.variable for e in evidence if e.value > alpha}
    if len(accepted) == 1:
        return DirectionDecision(accepted.pop(), evidence, "thresholded")
    flags = ("conflicting_acceptance",) if accepted else ("no_acceptance",)
    return DirectionDecision(None, evidence, "thresholded", flags=flags)

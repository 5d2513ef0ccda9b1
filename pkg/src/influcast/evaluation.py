"""Evaluation: ground-truth estimation, KL-based error measures, ranking
measures, permutation-matched matrix distance, and the influence vs
susceptibility histogram.

All measures are pure folds over evaluation pairs; nothing here plots (the
report module renders figures from these outputs).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from .cascades import DiffusionNetwork, ExposureTable, Mode, NodeId
from .im import IMModel, propagation_prob

KL_EPS = 1e-9


@dataclass
class GroundTruth:
    """Reference propagation probability per (node, mode), with support."""

    entries: Dict[Tuple[NodeId, Mode], Tuple[float, int]] = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.entries)

    def pairs(self) -> List[Tuple[NodeId, Mode]]:
        return sorted(self.entries, key=lambda key: (str(key[0]), tuple(map(str, key[1]))))


@dataclass
class MetricsReport:
    method: str
    mkl: float
    mkl_observed: float
    mkl_hidden: float
    compositive: float
    mrr: float
    r_mrr: float
    n_observed: int
    n_hidden: int
    n_rank_cases: int
    n_skipped_pairs: int = 0

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def estimate_ground_truth(exposures: ExposureTable, min_support: int = 1) -> GroundTruth:
    """Forwarding ratio n / (n + n_fail) per (node, mode) with at least
    ``min_support`` observations."""
    if min_support < 1:
        raise ValueError("min_support must be >= 1")
    truth = GroundTruth()
    for (v, mode), cell in exposures.cells.items():
        support = cell.n + cell.n_fail
        if support >= min_support:
            truth.entries[(v, mode)] = (cell.n / support, support)
    return truth


def synthetic_ground_truth(model: IMModel,
                           pairs: Iterable[Tuple[NodeId, Mode]]) -> GroundTruth:
    """Exact model probabilities for the given (node, mode) pairs."""
    truth = GroundTruth()
    for v, mode in pairs:
        truth.entries[(v, mode)] = (propagation_prob(model, v, mode), 1)
    return truth


def bernoulli_kl(p: float, q: float, eps: float = KL_EPS) -> float:
    """KL divergence between Bernoulli(p) and Bernoulli(q).

    q is clamped to [eps, 1 - eps]; the p side uses the 0 log 0 = 0
    convention. Natural log.
    """
    q = min(max(q, eps), 1.0 - eps)
    out = 0.0
    if p > 0.0:
        out += p * math.log(p / q)
    if p < 1.0:
        out += (1.0 - p) * math.log((1.0 - p) / (1.0 - q))
    return out


def mkl(truth: GroundTruth, predictor) -> float:
    """Mean Bernoulli KL divergence between the reference probabilities and
    the predictor's set probabilities, over all pairs in ``truth``."""
    if not truth.entries:
        raise ValueError("ground truth is empty")
    total = 0.0
    for (v, mode), (p_true, _) in truth.entries.items():
        total += bernoulli_kl(p_true, predictor.set_prob(v, mode))
    return total / len(truth.entries)


def split_observed_hidden(train_net: DiffusionNetwork,
                          pairs: Iterable[Tuple[NodeId, Mode]]
                          ) -> Tuple[List[Tuple[NodeId, Mode]], List[Tuple[NodeId, Mode]]]:
    """Classify evaluation pairs by training coverage.

    A pair (v, mode) is observed when every edge (u, v), u in mode, exists
    in the training network; it is hidden as soon as any member edge is
    missing.
    """
    observed: List[Tuple[NodeId, Mode]] = []
    hidden: List[Tuple[NodeId, Mode]] = []
    for v, mode in pairs:
        if all((u, v) in train_net.edges for u in mode):
            observed.append((v, mode))
        else:
            hidden.append((v, mode))
    return observed, hidden


def compositive(mkl_observed: float, mkl_hidden: float) -> float:
    """Square root of the quadratic sum of the two bucket means."""
    if mkl_observed < 0 or mkl_hidden < 0:
        raise ValueError("bucket means must be nonnegative")
    return math.hypot(mkl_observed, mkl_hidden)


def mrr(ranks: Sequence[int]) -> Tuple[float, float]:
    """Mean reciprocal rank and its reverse (1 - MRR)."""
    ranks = list(ranks)
    if not ranks:
        raise ValueError("no ranks to average")
    if any(r < 1 for r in ranks):
        raise ValueError("ranks must be >= 1")
    value = sum(1.0 / r for r in ranks) / len(ranks)
    return value, 1.0 - value


@dataclass(frozen=True)
class RankCase:
    """One multiple-exposure forwarding case: who was credited among whom."""

    v: NodeId
    mode: Mode
    u_star: NodeId
    weight: int


def observed_rank_cases(exposures: ExposureTable,
                        min_mode_size: int = 2) -> List[RankCase]:
    """Rank cases from recorded parents, restricted to modes with at least
    ``min_mode_size`` members."""
    cases: List[RankCase] = []
    for (v, mode), cell in sorted(exposures.cells.items(),
                                  key=lambda kv: (str(kv[0][0]), tuple(map(str, kv[0][1])))):
        if len(mode) < min_mode_size:
            continue
        for u_star, count in sorted(cell.choices.items(), key=lambda it: str(it[0])):
            if count > 0:
                cases.append(RankCase(v=v, mode=mode, u_star=u_star, weight=count))
    return cases


def model_rank_cases(exposures: ExposureTable, truth_model: IMModel,
                     min_mode_size: int = 2) -> List[RankCase]:
    """Rank cases whose ground truth is the most influential mode member
    under a reference model (used when exact parameters are known).

    Unlike the recorded-parent cases, these are defined for every multiple
    exposure, forwarded or not, so each (node, mode) key is weighted by all
    its observations."""
    cases: List[RankCase] = []
    for (v, mode), cell in sorted(exposures.cells.items(),
                                  key=lambda kv: (str(kv[0][0]), tuple(map(str, kv[0][1])))):
        weight = cell.n + cell.n_fail
        if len(mode) < min_mode_size or weight == 0:
            continue
        best = max(mode, key=lambda u: (truth_model.score(u, v), str(u)))
        cases.append(RankCase(v=v, mode=mode, u_star=best, weight=weight))
    return cases


def rank_of_truth(cases: Sequence[RankCase], predictor) -> List[int]:
    """Predicted rank of each case's ground-truth influencer, expanded by
    case weight."""
    ranks: List[int] = []
    for case in cases:
        order = predictor.rank(case.v, case.mode)
        ranks.extend([order.index(case.u_star) + 1] * case.weight)
    return ranks


def random_guess_r_mrr(cases: Sequence[RankCase]) -> float:
    """Expected reverse MRR of a uniformly random ranking.

    For a mode of size s the expected reciprocal rank is H_s / s, computed
    exactly rather than sampled.
    """
    if not cases:
        raise ValueError("no rank cases")
    total = 0.0
    weight = 0
    for case in cases:
        s = len(case.mode)
        h_s = sum(1.0 / i for i in range(1, s + 1))
        total += case.weight * h_s / s
        weight += case.weight
    return 1.0 - total / weight


def matrix_difference(A: np.ndarray, B: np.ndarray) -> float:
    """Minimum over column permutations of the entrywise L1 distance.

    Solved exactly as a linear assignment over the k x k column-cost matrix
    cost(j, j') = sum_i |A[i, j] - B[i, j']|.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.shape != B.shape:
        raise ValueError(f"shape mismatch: {A.shape} vs {B.shape}")
    if A.ndim != 2:
        raise ValueError("matrix_difference expects 2-D arrays")
    cost = np.abs(A[:, :, None] - B[:, None, :]).sum(axis=0)
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].sum())


def influence_susceptibility_histogram(model: IMModel, bins: int,
                                       norm: str = "l1"
                                       ) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """2-D histogram of per-node scalar influence vs susceptibility.

    Scalars are L1 norms of the rows by default (L2 with ``norm='l2'``);
    the grid covers [0, max] x [0, max] with ``bins`` equal-width cells and
    a shared upper bound.  Returns (counts, x_edges, y_edges) with counts
    indexed [influence_bin, susceptibility_bin].
    """
    if bins < 1:
        raise ValueError("bins must be >= 1")
    if norm == "l1":
        inf = np.abs(model.I).sum(axis=1)
        sus = np.abs(model.S).sum(axis=1)
    elif norm == "l2":
        inf = np.linalg.norm(model.I, axis=1)
        sus = np.linalg.norm(model.S, axis=1)
    else:
        raise ValueError(f"unknown norm {norm!r}")
    hi = float(max(inf.max(initial=0.0), sus.max(initial=0.0)))
    if hi <= 0.0:
        hi = 1.0
    counts, x_edges, y_edges = np.histogram2d(
        inf, sus, bins=bins, range=[[0.0, hi], [0.0, hi]])
    return counts.astype(int), x_edges, y_edges

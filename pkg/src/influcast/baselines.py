"""Pairwise propagation-probability estimators and low-rank completion.

All estimators produce a PairwiseTable with per-edge probabilities for the
edges of the training diffusion network; probabilistic matrix factorization
extends a table to arbitrary pairs.  Predictors give every method one
interface: a pair probability, a set probability (independent-cascade "or"
combination over a mode), and a ranking of a mode's members.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Tuple

import numpy as np

from .cascades import (CascadeLog, DiffusionNetwork, ExposureTable, NodeId,
                       extract_exposures, first_forward_times)
from .errors import ConfigError
from .im import IMModel, propagation_prob, rank_influencers


@dataclass
class PairwiseTable:
    """Per-edge probability estimates with their supporting counts."""

    probs: Dict[Tuple[NodeId, NodeId], float] = field(default_factory=dict)
    trials: Dict[Tuple[NodeId, NodeId], Tuple[int, int]] = field(default_factory=dict)
    nodes: List[NodeId] = field(default_factory=list)

    def validate(self) -> None:
        for pair, p in self.probs.items():
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"probability out of range for {pair}: {p}")


def or_combine(pair_prob: Callable[[NodeId, NodeId], float],
               v: NodeId, mode: Iterable[NodeId]) -> float:
    """1 - product of (1 - p(u, v)) over the mode; empty mode gives 0."""
    out = 1.0
    for u in mode:
        out *= 1.0 - pair_prob(u, v)
    return 1.0 - out


class Predictor:
    """Uniform query interface over the factor model and the baselines."""

    name = "predictor"

    def pair_prob(self, u: NodeId, v: NodeId) -> float:
        raise NotImplementedError

    def set_prob(self, v: NodeId, mode: Iterable[NodeId]) -> float:
        return or_combine(self.pair_prob, v, mode)

    def rank(self, v: NodeId, mode: Iterable[NodeId]) -> List[NodeId]:
        members = sorted(set(mode))
        return sorted(members, key=lambda u: (-self.pair_prob(u, v), u))


class UniformPredictor(Predictor):
    def __init__(self, p: float):
        if not 0.0 <= p <= 1.0:
            raise ConfigError(f"uniform probability must lie in [0, 1], got {p}")
        self.p = p
        self.name = f"un(p={p:g})"

    def pair_prob(self, u: NodeId, v: NodeId) -> float:
        return self.p


class TablePredictor(Predictor):
    """Looks pairs up in a PairwiseTable; unobserved pairs default to 0."""

    def __init__(self, table: PairwiseTable, name: str = "table"):
        self.table = table
        self.name = name

    def pair_prob(self, u: NodeId, v: NodeId) -> float:
        return self.table.probs.get((u, v), 0.0)


class FactorizedPredictor(Predictor):
    """Predicts clamp(U_u . V_v, 0, 1) for every pair, observed or not."""

    def __init__(self, U: np.ndarray, V: np.ndarray,
                 node_index: Dict[NodeId, int], name: str = "mf",
                 objective_trace: Optional[List[float]] = None):
        self.U = U
        self.V = V
        self.node_index = node_index
        self.name = name
        self.objective_trace = objective_trace or []

    def pair_prob(self, u: NodeId, v: NodeId) -> float:
        try:
            i = self.node_index[u]
            j = self.node_index[v]
        except KeyError as exc:
            raise LookupError(f"unknown node id {exc.args[0]!r}") from None
        return float(min(1.0, max(0.0, self.U[i] @ self.V[j])))


class IMPredictor(Predictor):
    """Adapter exposing a trained factor model through the same interface."""

    def __init__(self, model: IMModel, name: str = "im"):
        self.model = model
        self.name = name

    def pair_prob(self, u: NodeId, v: NodeId) -> float:
        return propagation_prob(self.model, v, (u,))

    def set_prob(self, v: NodeId, mode: Iterable[NodeId]) -> float:
        return propagation_prob(self.model, v, mode)

    def rank(self, v: NodeId, mode: Iterable[NodeId]) -> List[NodeId]:
        return rank_influencers(self.model, v, mode)


def uniform_estimator(p: float) -> UniformPredictor:
    return UniformPredictor(p)


def bernoulli_estimator(exposures: ExposureTable) -> PairwiseTable:
    """Per-edge ratio of parent-credited forwards over exposures.

    successes(u, v) counts forwards by v that credited u; attempts(u, v)
    counts exposures of v (forward or not) while u was active.
    """
    succ: Dict[Tuple[NodeId, NodeId], int] = {}
    att: Dict[Tuple[NodeId, NodeId], int] = {}
    for (v, mode), cell in exposures.cells.items():
        total = cell.n + cell.n_fail
        for u in mode:
            pair = (u, v)
            att[pair] = att.get(pair, 0) + total
            succ[pair] = succ.get(pair, 0) + cell.choices.get(u, 0)
    table = PairwiseTable(nodes=sorted(exposures.nodes()))
    for pair, attempts in att.items():
        s = succ.get(pair, 0)
        table.trials[pair] = (s, attempts)
        table.probs[pair] = s / attempts if attempts else 0.0
    return table


def jaccard_estimator(log: CascadeLog, net: DiffusionNetwork) -> PairwiseTable:
    """Per-edge forwards-after-exposure over the union of activity.

    p(u, v) = #{messages where v forwarded with u active before} /
              #{messages where u or v was active}.
    """
    active_count: Dict[NodeId, int] = {}
    co_active: Dict[Tuple[NodeId, NodeId], int] = {}
    followed: Dict[Tuple[NodeId, NodeId], int] = {}
    for events in log.messages.values():
        times, parents = first_forward_times(events)
        for w in times:
            active_count[w] = active_count.get(w, 0) + 1
        for v, t_v in times.items():
            nbrs = net.in_neighbors.get(v)
            if not nbrs:
                continue
            for u in nbrs:
                if u not in times:
                    continue
                pair = (u, v)
                co_active[pair] = co_active.get(pair, 0) + 1
                if times[u] < t_v or parents[v] == u:
                    followed[pair] = followed.get(pair, 0) + 1
    table = PairwiseTable(nodes=sorted(net.nodes, key=str))
    for u, v in net.edges:
        pair = (u, v)
        num = followed.get(pair, 0)
        denom = active_count.get(u, 0) + active_count.get(v, 0) - co_active.get(pair, 0)
        table.trials[pair] = (num, denom)
        table.probs[pair] = num / denom if denom else 0.0
    return table


def em_estimator(log: CascadeLog, net: DiffusionNetwork,
                 max_iters: int = 100, tol: float = 1e-6) -> PairwiseTable:
    """Expectation-maximization for independent-cascade edge probabilities.

    With M+ the messages where u was active before v forwarded and M- the
    messages where u was active but v never forwarded, each pass updates

        kappa(u,v) <- (1 / (|M+| + |M-|)) * sum over M+ of kappa(u,v) / P,
        P = 1 - prod over active in-neighbors u' of (1 - kappa(u',v)),

    starting from the per-edge success ratio floored at 1e-6.  Stops after
    ``max_iters`` passes or when no entry moves more than ``tol``.
    """
    if max_iters < 1:
        raise ConfigError("max_iters must be >= 1")
    exposures = extract_exposures(log, net)

    edge_list = sorted({(u, v) for (v, mode) in exposures.cells for u in mode},
                       key=lambda e: (str(e[0]), str(e[1])))
    edge_index = {e: i for i, e in enumerate(edge_list)}
    n_edges = len(edge_list)

    m_plus = np.zeros(n_edges)
    m_minus = np.zeros(n_edges)
    credited = np.zeros(n_edges)
    group_sizes: List[int] = []
    group_n: List[float] = []
    member_edges: List[int] = []
    member_is_choice: List[float] = []
    for (v, mode), cell in sorted(exposures.cells.items(),
                                  key=lambda kv: (str(kv[0][0]), kv[0][1])):
        for u in mode:
            e = edge_index[(u, v)]
            m_plus[e] += cell.n
            m_minus[e] += cell.n_fail
            credited[e] += cell.choices.get(u, 0)
        if cell.n > 0:
            group_sizes.append(len(mode))
            group_n.append(cell.n)
            member_edges.extend(edge_index[(u, v)] for u in mode)
            member_is_choice.extend(cell.choices.get(u, 0) for u in mode)
    exposure_totals = m_plus + m_minus
    member_edges_arr = np.asarray(member_edges, dtype=np.int64)
    group_n_arr = np.asarray(group_n)
    sizes = np.asarray(group_sizes, dtype=np.int64)
    starts = np.concatenate(([0], np.cumsum(sizes)[:-1])) if len(sizes) else np.empty(0, dtype=np.int64)
    member_g = np.repeat(np.arange(len(sizes)), sizes)

    with np.errstate(divide="ignore", invalid="ignore"):
        kappa = np.where(exposure_totals > 0, credited / exposure_totals, 0.0)
    kappa = np.maximum(kappa, 1e-6)

    for _ in range(max_iters):
        if len(sizes):
            log_keep = np.log1p(-np.minimum(kappa[member_edges_arr], 1.0 - 1e-12))
            p_group = -np.expm1(np.add.reduceat(log_keep, starts))
            p_group = np.maximum(p_group, 1e-300)
            contrib = group_n_arr[member_g] * kappa[member_edges_arr] / p_group[member_g]
            numer = np.bincount(member_edges_arr, weights=contrib, minlength=n_edges)
        else:
            numer = np.zeros(n_edges)
        with np.errstate(divide="ignore", invalid="ignore"):
            new_kappa = np.where(exposure_totals > 0, numer / exposure_totals, 0.0)
        new_kappa = np.clip(new_kappa, 0.0, 1.0)
        delta = float(np.max(np.abs(new_kappa - kappa))) if n_edges else 0.0
        kappa = new_kappa
        if delta < tol:
            break

    table = PairwiseTable(nodes=sorted(exposures.nodes()))
    for e, pair in enumerate(edge_list):
        table.probs[pair] = float(kappa[e])
        table.trials[pair] = (int(m_plus[e]), int(exposure_totals[e]))
    return table


def pmf_complete(table: PairwiseTable, rank: int, reg: float = 0.01,
                 iters: int = 500, seed: int = 0) -> FactorizedPredictor:
    """Fit U, V minimizing sum over observed pairs of (p - U_u . V_v)^2 plus
    reg * (||U||^2 + ||V||^2), by gradient descent with Armijo backtracking.

    The returned predictor scores every pair as clamp(U_u . V_v, 0, 1),
    including pairs absent from the table.
    """
    if rank < 1:
        raise ConfigError("rank must be >= 1")
    nodes = table.nodes or sorted({x for pair in table.probs for x in pair}, key=str)
    node_index = {node: i for i, node in enumerate(nodes)}
    n = len(nodes)
    pairs = sorted(table.probs, key=lambda e: (str(e[0]), str(e[1])))
    obs_u = np.array([node_index[u] for u, _ in pairs], dtype=np.int64)
    obs_v = np.array([node_index[v] for _, v in pairs], dtype=np.int64)
    obs_p = np.array([table.probs[p] for p in pairs])

    rng = np.random.default_rng(seed)
    mean_p = float(obs_p.mean()) if len(obs_p) else 0.01
    scale = math.sqrt(max(mean_p, 1e-6) / rank)
    U = rng.uniform(0.0, 2.0 * scale, size=(n, rank))
    V = rng.uniform(0.0, 2.0 * scale, size=(n, rank))

    def value(U, V):
        r = np.einsum("ij,ij->i", U[obs_u], V[obs_v]) - obs_p
        return float(r @ r) + reg * (float(np.sum(U * U)) + float(np.sum(V * V)))

    def grads(U, V):
        r = np.einsum("ij,ij->i", U[obs_u], V[obs_v]) - obs_p
        dU = np.zeros_like(U)
        dV = np.zeros_like(V)
        np.add.at(dU, obs_u, 2.0 * r[:, None] * V[obs_v])
        np.add.at(dV, obs_v, 2.0 * r[:, None] * U[obs_u])
        dU += 2.0 * reg * U
        dV += 2.0 * reg * V
        return dU, dV

    loss = value(U, V)
    trace = [loss]
    eta = 0.1
    for _ in range(iters):
        dU, dV = grads(U, V)
        eta = min(eta * 2.0, 1e3)  # allow the step to grow back after shrinks
        accepted = False
        for _ in range(40):
            U_new = U - eta * dU
            V_new = V - eta * dV
            f_new = value(U_new, V_new)
            gain = float(np.vdot(dU, U_new - U) + np.vdot(dV, V_new - V))
            if math.isfinite(f_new) and f_new - loss <= 0.01 * gain:
                U, V, loss = U_new, V_new, f_new
                accepted = True
                break
            eta *= 0.5
        trace.append(loss)
        if not accepted:
            break
    return FactorizedPredictor(U, V, node_index, name="mf", objective_trace=trace)

"""Synthetic data: scale-free networks, ground-truth models, simulated
cascades, and degree-preserving shuffles.

Everything is a pure function of (inputs, seed); cascades draw per-message
seeds derived from (seed, cascade index) so results do not depend on
scheduling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .cascades import CascadeEvent, CascadeLog, DiffusionNetwork, NodeId
from .errors import ConfigError
from .im import IMModel
from .seeding import rng_for


@dataclass
class SynthConfig:
    n_nodes: int = 1000
    edges_per_node: int = 5
    k: int = 20
    lam: float = 0.01
    influence_range: Tuple[float, float] = (0.0, 0.5)
    susceptibility_range: Tuple[float, float] = (0.0, 1.5)
    n_cascades: int = 20000
    n_sources: int = 100
    seed: int = 0

    def validate(self) -> None:
        if self.n_nodes <= 0 or self.edges_per_node <= 0 or self.k <= 0:
            raise ConfigError("n_nodes, edges_per_node and k must be positive")
        if self.n_nodes <= self.edges_per_node:
            raise ConfigError("n_nodes must exceed edges_per_node")
        if self.lam <= 0:
            raise ConfigError("lambda must be positive")
        for lo, hi in (self.influence_range, self.susceptibility_range):
            if not (0.0 <= lo <= hi):
                raise ConfigError("value ranges must satisfy 0 <= lo <= hi")
        if self.n_cascades < 0 or self.n_sources <= 0:
            raise ConfigError("n_cascades must be >= 0 and n_sources positive")


def node_name(i: int) -> str:
    """Synthetic node ids are fixed-width strings so every artifact (JSONL,
    network JSON, model JSON) shares one id type and sort order."""
    return f"n{i:05d}"


def generate_ba_network(n: int, m: int, seed: int, *,
                        old_to_new: bool = True) -> DiffusionNetwork:
    """Directed scale-free network grown by preferential attachment.

    Starts from a complete clique on m + 1 nodes (edges oriented low index
    to high index); every further node attaches m edges to existing nodes
    chosen with probability proportional to their total degree.  Edges run
    from the existing node to the newcomer by default (influence flows
    along attachment); ``old_to_new=False`` flips the orientation.
    """
    if m < 1 or n <= m:
        raise ConfigError(f"need n > m >= 1, got n={n}, m={m}")
    rng = rng_for(seed, "ba-network")
    edges: List[Tuple[int, int]] = []
    for j in range(m + 1):
        for i in range(j):
            edges.append((i, j))
    # urn with one entry per unit of total degree
    urn: List[int] = [v for v in range(m + 1) for _ in range(m)]
    for new in range(m + 1, n):
        targets: set = set()
        while len(targets) < m:
            targets.add(urn[int(rng.integers(len(urn)))])
        for t in sorted(targets):
            edges.append((t, new))
            urn.append(t)
        urn.extend([new] * m)
    if not old_to_new:
        edges = [(b, a) for a, b in edges]
    return DiffusionNetwork.from_edges(((node_name(a), node_name(b)) for a, b in edges),
                                       nodes=(node_name(i) for i in range(n)))


def sample_ground_truth(cfg: SynthConfig) -> IMModel:
    """Model with entries drawn uniformly from the configured ranges."""
    cfg.validate()
    rng = rng_for(cfg.seed, "ground-truth")
    lo_i, hi_i = cfg.influence_range
    lo_s, hi_s = cfg.susceptibility_range
    I = rng.uniform(lo_i, hi_i, size=(cfg.n_nodes, cfg.k))
    S = rng.uniform(lo_s, hi_s, size=(cfg.n_nodes, cfg.k))
    node_index = {node_name(i): i for i in range(cfg.n_nodes)}
    return IMModel(node_index=node_index, I=I, S=S, lam=cfg.lam, k=cfg.k)


def _softmax(scores: np.ndarray) -> np.ndarray:
    z = scores - scores.max()
    w = np.exp(z)
    return w / w.sum()


def simulate_cascades(net: DiffusionNetwork, model: IMModel, cfg: SynthConfig, *,
                      sources: Optional[Sequence[NodeId]] = None,
                      retries: bool = True,
                      uniform_parent: bool = False) -> CascadeLog:
    """Simulate independent cascades by coin flips in discrete rounds.

    A fixed source pool of ``cfg.n_sources`` nodes is drawn once per run
    (unless ``sources`` is given); each cascade picks its root uniformly
    from the pool.  In round t every inactive node whose active in-neighbor
    set grew flips a coin that succeeds with probability
    1 - exp(-lambda * sum of I_u . S_v over the new arrivals) -- i.e. the
    forwarding probability over the full current active set, conditioned on
    all earlier failed flips.  The marginal chance a node is active by time
    t therefore matches the model exactly at every stage.  On success the
    node activates at t + 1 and credits one active in-neighbor drawn from
    the model's choice softmax (or uniformly with ``uniform_parent``).

    With ``retries=False`` a node flips only at its first exposure.
    """
    cfg.validate()
    node_list = sorted(net.nodes)
    if sources is not None:
        pool = list(sources)
        if not pool:
            raise ConfigError("explicit source pool must be nonempty")
    else:
        pool_rng = rng_for(cfg.seed, "source-pool")
        size = min(cfg.n_sources, len(node_list))
        pool = [node_list[i] for i in pool_rng.choice(len(node_list), size=size, replace=False)]
        pool.sort()

    row = model.node_index
    I, S, lam = model.I, model.S, model.lam
    messages: Dict[str, Tuple[CascadeEvent, ...]] = {}
    for idx in range(cfg.n_cascades):
        rng = rng_for(cfg.seed, "cascade", idx)
        source = pool[int(rng.integers(len(pool)))]
        active_time: Dict[NodeId, int] = {source: 0}
        spent: set = set()
        events = [CascadeEvent(parent=None, child=source, time=0)]
        frontier = [source]
        t = 0
        while frontier:
            delta: Dict[NodeId, float] = {}
            for w in frontier:
                s_row = I[row[w]]
                for v in net.out_neighbors.get(w, ()):
                    if v in active_time or v in spent:
                        continue
                    delta[v] = delta.get(v, 0.0) + float(s_row @ S[row[v]])
            new_frontier = []
            for v in sorted(delta):
                p = -math.expm1(-lam * delta[v])
                hit = rng.random() < p
                if not retries:
                    spent.add(v)
                if not hit:
                    continue
                candidates = [u for u in sorted(net.in_neighbors.get(v, ()))
                              if active_time.get(u, t + 1) <= t]
                if uniform_parent:
                    parent = candidates[int(rng.integers(len(candidates)))]
                else:
                    scores = np.array([I[row[u]] @ S[row[v]] for u in candidates])
                    parent = candidates[int(rng.choice(len(candidates), p=_softmax(scores)))]
                active_time[v] = t + 1
                events.append(CascadeEvent(parent=parent, child=v, time=t + 1))
                new_frontier.append(v)
            frontier = new_frontier
            t += 1
        messages[f"c{idx:06d}"] = tuple(events)
    return CascadeLog(messages=messages)


def shuffle_network(net: DiffusionNetwork, seed: int, n_swaps: int, *,
                    max_attempt_factor: int = 100) -> DiffusionNetwork:
    """Randomize edges by double-edge swaps, preserving every node's in- and
    out-degree exactly.

    Each accepted swap rewires (a, b), (c, d) into (a, d), (c, b); swaps
    creating self-loops or duplicate edges are rejected.  Stops after
    ``n_swaps`` accepted swaps or ``max_attempt_factor * n_swaps`` attempts.
    """
    if n_swaps < 0:
        raise ConfigError("n_swaps must be >= 0")
    edges = sorted(net.edges, key=lambda e: (str(e[0]), str(e[1])))
    if n_swaps == 0 or len(edges) < 2:
        return DiffusionNetwork.from_edges(edges, nodes=net.nodes)
    rng = rng_for(seed, "shuffle")
    edge_set = set(edges)
    accepted = 0
    attempts = 0
    max_attempts = max_attempt_factor * n_swaps
    while accepted < n_swaps and attempts < max_attempts:
        attempts += 1
        i, j = rng.integers(len(edges), size=2)
        if i == j:
            continue
        a, b = edges[i]
        c, d = edges[j]
        if a == d or c == b:
            continue
        if (a, d) in edge_set or (c, b) in edge_set:
            continue
        edge_set.discard((a, b))
        edge_set.discard((c, d))
        edge_set.add((a, d))
        edge_set.add((c, b))
        edges[i] = (a, d)
        edges[j] = (c, b)
        accepted += 1
    return DiffusionNetwork.from_edges(edge_set, nodes=net.nodes)

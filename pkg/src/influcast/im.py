"""Influence-susceptibility factor model and its projected-gradient trainer.

Each node carries two nonnegative k-dimensional vectors: an influence vector
(row of I) and a susceptibility vector (row of S).  With A = sum of
I_u . S_v over the active in-neighbors u of v:

  * forwarding probability:  p = 1 - exp(-lambda * A)
  * choice of whom to credit: softmax over {I_u . S_v : u active}

Training minimizes the combined negative log-likelihood

  L = -alpha * sum_(v,x) [ n log p(v,x) + n_fail log(1 - p(v,x)) ]
      - (1 - alpha) * sum_(v,x) sum_u m(v,x,u) log softmax_x(u)
      + ||I - mu_I||^2 / (2 sigma2_I) + ||S - mu_S||^2 / (2 sigma2_S)

subject to I >= 0, S >= 0, by projected gradient descent with Armijo
backtracking.  Probabilities are clamped to [1e-12, 1 - 1e-12] inside logs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy import sparse

from .cascades import ExposureTable, NodeId
from .errors import DataError, TrainingDivergedError

PROB_CLAMP = 1e-12


@dataclass
class IMModel:
    """Nonnegative influence matrix I and susceptibility matrix S (n x k)."""

    node_index: Dict[NodeId, int]
    I: np.ndarray
    S: np.ndarray
    lam: float
    k: int

    def __post_init__(self):
        self.I = np.asarray(self.I, dtype=float)
        self.S = np.asarray(self.S, dtype=float)
        n = len(self.node_index)
        if self.I.shape != (n, self.k) or self.S.shape != (n, self.k):
            raise ValueError(f"matrix shapes must be ({n}, {self.k})")
        if self.lam <= 0:
            raise ValueError("lambda must be positive")

    @property
    def nodes(self) -> List[NodeId]:
        out: List[Optional[NodeId]] = [None] * len(self.node_index)
        for node, row in self.node_index.items():
            out[row] = node
        return out  # type: ignore[return-value]

    def row(self, v: NodeId) -> int:
        try:
            return self.node_index[v]
        except KeyError:
            raise LookupError(f"unknown node id {v!r}") from None

    def score(self, u: NodeId, v: NodeId) -> float:
        """Dot product of u's influence with v's susceptibility."""
        return float(self.I[self.row(u)] @ self.S[self.row(v)])

    def to_dict(self) -> dict:
        return {
            "lambda": self.lam,
            "k": self.k,
            "nodes": self.nodes,
            "I": self.I.tolist(),
            "S": self.S.tolist(),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "IMModel":
        nodes = obj["nodes"]
        return cls(
            node_index={node: i for i, node in enumerate(nodes)},
            I=np.asarray(obj["I"], dtype=float),
            S=np.asarray(obj["S"], dtype=float),
            lam=float(obj["lambda"]),
            k=int(obj["k"]),
        )


@dataclass
class Hyperparams:
    """Training hyperparameters.

    ``alpha`` weighs the forwarding likelihood against the choice
    likelihood; ``beta`` is the initial step size for the line search;
    ``sigma2_*`` may be ``inf`` to disable a prior.
    """

    alpha: float = 0.9
    beta: float = 1.0
    mu_I: float = 0.0
    sigma2_I: float = 10.0
    mu_S: float = 0.0
    sigma2_S: float = 10.0
    max_epochs: int = 250
    k: int = 20
    lam: float = 0.01
    init_seed: int = 0
    init_scale: float = 0.1
    fixed_step: bool = False
    armijo_c: float = 0.01
    armijo_shrink: float = 0.5
    max_backtracks: int = 20

    def validate(self) -> None:
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.beta <= 0 or self.lam <= 0 or self.init_scale <= 0:
            raise ValueError("beta, lambda and init_scale must be positive")
        if self.sigma2_I <= 0 or self.sigma2_S <= 0:
            raise ValueError("prior variances must be positive")
        if self.k < 1 or self.max_epochs < 0:
            raise ValueError("k must be >= 1 and max_epochs >= 0")


def propagation_prob(model: IMModel, v: NodeId, active: Iterable[NodeId]) -> float:
    """1 - exp(-lambda * sum of I_u . S_v over the active set); 0 if empty."""
    rows = [model.row(u) for u in set(active)]
    if not rows:
        return 0.0
    s_v = model.S[model.row(v)]
    total = float(model.I[rows].sum(axis=0) @ s_v)
    return -math.expm1(-model.lam * total)


def choice_distribution(model: IMModel, v: NodeId,
                        active: Iterable[NodeId]) -> Dict[NodeId, float]:
    """Softmax over I_u . S_v for u in the active set."""
    members = sorted(set(active))
    if not members:
        raise ValueError("choice distribution needs a nonempty active set")
    s_v = model.S[model.row(v)]
    scores = np.array([model.I[model.row(u)] @ s_v for u in members])
    scores -= scores.max()
    weights = np.exp(scores)
    weights /= weights.sum()
    return dict(zip(members, weights.tolist()))


def rank_influencers(model: IMModel, v: NodeId,
                     active: Iterable[NodeId]) -> List[NodeId]:
    """Active members by descending I_u . S_v, ties by ascending node id."""
    members = sorted(set(active))
    if not members:
        return []
    s_v = model.S[model.row(v)]
    return sorted(members, key=lambda u: (-(model.I[model.row(u)] @ s_v), u))


class CompiledExposures:
    """Flat-array view of an ExposureTable bound to a node index.

    Groups are the distinct (node, mode) keys, sorted for deterministic
    reductions.  Memberships are stored CSR-style so per-group sums use
    contiguous reduceat calls, and two sparse scatter matrices map
    per-membership contributions back onto the I and S rows.
    """

    def __init__(self, exposures: ExposureTable, node_index: Dict[NodeId, int]):
        keys = sorted(exposures.cells, key=lambda key: (node_index[key[0]],
                                                        tuple(node_index[u] for u in key[1])))
        n_groups = len(keys)
        v_rows = np.empty(n_groups, dtype=np.int64)
        n_succ = np.empty(n_groups, dtype=float)
        n_fail = np.empty(n_groups, dtype=float)
        indptr = np.zeros(n_groups + 1, dtype=np.int64)
        member_u: List[int] = []
        choice_pos: List[int] = []
        choice_m: List[float] = []

        for g, (v, mode) in enumerate(keys):
            cell = exposures.cells[(v, mode)]
            if not mode:
                raise DataError(f"empty mode for node {v!r}")
            v_rows[g] = node_index[v]
            n_succ[g] = cell.n
            n_fail[g] = cell.n_fail
            base = len(member_u)
            mode_rows = [node_index[u] for u in mode]
            member_u.extend(mode_rows)
            indptr[g + 1] = len(member_u)
            for u, count in cell.choices.items():
                choice_pos.append(base + mode.index(u))
                choice_m.append(count)

        self.n_nodes = len(node_index)
        self.n_groups = n_groups
        self.v_rows = v_rows
        self.n_succ = n_succ
        self.n_fail = n_fail
        self.indptr = indptr
        self.member_u = np.asarray(member_u, dtype=np.int64)
        self.member_g = np.repeat(np.arange(n_groups), np.diff(indptr))
        self.member_v = v_rows[self.member_g] if n_groups else np.empty(0, dtype=np.int64)
        t = len(self.member_u)
        self.m_member = np.zeros(t, dtype=float)
        if choice_pos:
            np.add.at(self.m_member, np.asarray(choice_pos, dtype=np.int64),
                      np.asarray(choice_m, dtype=float))
        # per-group total of choice counts; equals n_succ for tables built
        # by extract_exposures, but the gradient stays exact either way
        self.m_total = np.zeros(n_groups, dtype=float)
        if n_groups:
            np.add.at(self.m_total, self.member_g, self.m_member)
        ones = np.ones(t)
        rows = np.arange(t)
        self.scatter_I = sparse.csr_matrix((ones, (self.member_u, rows)),
                                           shape=(self.n_nodes, t))
        self.scatter_S = sparse.csr_matrix((ones, (self.member_v, rows)),
                                           shape=(self.n_nodes, t))

    def _per_group(self, I: np.ndarray, S: np.ndarray):
        theta = np.einsum("ij,ij->i", I[self.member_u], S[self.member_v])
        starts = self.indptr[:-1]
        totals = np.add.reduceat(theta, starts) if len(theta) else np.empty(0)
        mx = np.maximum.reduceat(theta, starts) if len(theta) else np.empty(0)
        shifted = np.exp(theta - mx[self.member_g])
        denom = np.add.reduceat(shifted, starts) if len(theta) else np.empty(0)
        log_z = mx + np.log(denom)
        log_softmax = theta - log_z[self.member_g]
        return theta, totals, log_softmax

    def value(self, I: np.ndarray, S: np.ndarray, hp: Hyperparams) -> float:
        loss = _prior_value(I, hp.mu_I, hp.sigma2_I) + _prior_value(S, hp.mu_S, hp.sigma2_S)
        if self.n_groups == 0:
            return loss
        _, totals, log_softmax = self._per_group(I, S)
        p = np.clip(-np.expm1(-hp.lam * totals), PROB_CLAMP, 1.0 - PROB_CLAMP)
        loss -= hp.alpha * float(self.n_succ @ np.log(p) + self.n_fail @ np.log1p(-p))
        log_q = np.maximum(log_softmax, math.log(PROB_CLAMP))
        loss -= (1.0 - hp.alpha) * float(self.m_member @ log_q)
        return loss

    def grad(self, I: np.ndarray, S: np.ndarray,
             hp: Hyperparams) -> Tuple[np.ndarray, np.ndarray]:
        dI = _prior_grad(I, hp.mu_I, hp.sigma2_I)
        dS = _prior_grad(S, hp.mu_S, hp.sigma2_S)
        if self.n_groups == 0:
            return dI, dS
        _, totals, log_softmax = self._per_group(I, S)
        p_raw = -np.expm1(-hp.lam * totals)
        p = np.clip(p_raw, PROB_CLAMP, 1.0 - PROB_CLAMP)
        # the clamped objective is flat where a probability sits at a clamp,
        # so those groups contribute no gradient
        interior = (p_raw > PROB_CLAMP) & (p_raw < 1.0 - PROB_CLAMP)
        h = np.where(interior,
                     hp.lam * (self.n_fail - self.n_succ * (1.0 - p) / p), 0.0)
        softmax = np.exp(log_softmax)
        m_eff = np.where(log_softmax > math.log(PROB_CLAMP), self.m_member, 0.0)
        m_eff_total = np.zeros(self.n_groups)
        np.add.at(m_eff_total, self.member_g, m_eff)
        # per-membership weight: the same scalar multiplies S_v into dI_u
        # and I_u into dS_v
        w = hp.alpha * h[self.member_g]
        w = w + (1.0 - hp.alpha) * (m_eff_total[self.member_g] * softmax - m_eff)
        dI += self.scatter_I @ (w[:, None] * S[self.member_v])
        dS += self.scatter_S @ (w[:, None] * I[self.member_u])
        return dI, dS


def _prior_value(X: np.ndarray, mu: float, sigma2: float) -> float:
    if not math.isfinite(sigma2):
        return 0.0
    diff = X - mu
    return float(np.sum(diff * diff)) / (2.0 * sigma2)


def _prior_grad(X: np.ndarray, mu: float, sigma2: float) -> np.ndarray:
    if not math.isfinite(sigma2):
        return np.zeros_like(X)
    return (X - mu) / sigma2


def _compile(model: IMModel, exposures: ExposureTable) -> CompiledExposures:
    missing = exposures.nodes() - set(model.node_index)
    if missing:
        raise LookupError(f"exposure table references unknown nodes: {sorted(missing, key=str)[:5]}")
    return CompiledExposures(exposures, model.node_index)


def objective(model: IMModel, exposures: ExposureTable, hp: Hyperparams) -> float:
    """Combined negative log-likelihood plus prior penalties (to minimize)."""
    return _compile(model, exposures).value(model.I, model.S, hp)


def gradients(model: IMModel, exposures: ExposureTable,
              hp: Hyperparams) -> Tuple[np.ndarray, np.ndarray]:
    """Analytic gradient of ``objective`` with respect to I and S."""
    return _compile(model, exposures).grad(model.I, model.S, hp)


@dataclass
class TrainResult:
    model: IMModel
    losses: np.ndarray  # length max_epochs + 1, losses[0] is the init loss
    steps: np.ndarray   # accepted step size per epoch

    @property
    def final_loss(self) -> float:
        return float(self.losses[-1])


def train(exposures: ExposureTable, hp: Hyperparams,
          nodes: Optional[Sequence[NodeId]] = None,
          on_epoch: Optional[Callable[[int, np.ndarray, np.ndarray, float], None]] = None
          ) -> TrainResult:
    """Fit the model by projected gradient descent.

    ``nodes`` optionally fixes the node universe (defaults to the ids seen
    in the exposure table); nodes without records are driven by the priors
    only.  Each epoch takes one projected step I <- max(0, I - eta * dI),
    S <- max(0, S - eta * dS), with eta found by Armijo backtracking
    (sufficient-decrease factor ``armijo_c``, halving, at most
    ``max_backtracks`` shrinks per epoch); an epoch with no acceptable step
    leaves the parameters in place, so the loss trace is non-increasing.
    The search starts at ``hp.beta`` and thereafter warm-starts from the
    previous epoch's accepted step (grown 4x, capped at beta), continuing
    downward across epochs after a failed search, so a step of any
    magnitude is reachable.  With ``fixed_step`` the raw step eta = beta is
    always taken instead.
    """
    hp.validate()
    universe = sorted(set(nodes) if nodes is not None else exposures.nodes())
    node_index = {node: i for i, node in enumerate(universe)}
    n = len(universe)
    rng = np.random.default_rng(hp.init_seed)
    # uniform on (0, init_scale]: no coordinate starts pinned at the boundary
    I = hp.init_scale * (1.0 - rng.random((n, hp.k)))
    S = hp.init_scale * (1.0 - rng.random((n, hp.k)))

    compiled = CompiledExposures(exposures, node_index)
    loss = compiled.value(I, S, hp)
    if not math.isfinite(loss):
        raise TrainingDivergedError(0)
    losses = [loss]
    steps: List[float] = []

    start_eta = hp.beta
    for epoch in range(1, hp.max_epochs + 1):
        dI, dS = compiled.grad(I, S, hp)
        if hp.fixed_step:
            I = np.maximum(0.0, I - hp.beta * dI)
            S = np.maximum(0.0, S - hp.beta * dS)
            loss = compiled.value(I, S, hp)
            step = hp.beta
        else:
            eta = start_eta
            step = 0.0
            for _ in range(hp.max_backtracks + 1):
                I_new = np.maximum(0.0, I - eta * dI)
                S_new = np.maximum(0.0, S - eta * dS)
                f_new = compiled.value(I_new, S_new, hp)
                decrease = f_new - loss
                gain = float(np.vdot(dI, I_new - I) + np.vdot(dS, S_new - S))
                if math.isfinite(f_new) and decrease <= hp.armijo_c * gain:
                    I, S, loss, step = I_new, S_new, f_new, eta
                    break
                eta *= hp.armijo_shrink
            if step > 0.0:
                start_eta = min(hp.beta, 4.0 * step)
            else:
                # no acceptable step: keep the point and resume the search
                # further down next epoch
                start_eta = eta
        if not math.isfinite(loss):
            raise TrainingDivergedError(epoch)
        losses.append(loss)
        steps.append(step)
        if on_epoch is not None:
            on_epoch(epoch, I, S, loss)

    model = IMModel(node_index=node_index, I=I, S=S, lam=hp.lam, k=hp.k)
    return TrainResult(model=model, losses=np.asarray(losses), steps=np.asarray(steps))

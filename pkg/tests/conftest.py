import numpy as np
import pytest

from influcast.cascades import (CascadeEvent, CascadeLog, DiffusionNetwork,
                                ExposureTable, canonical_mode)
from influcast.im import IMModel


def make_log(*messages):
    """Build a CascadeLog from per-message event tuples (parent, child, t)."""
    out = {}
    for i, events in enumerate(messages):
        evs = sorted((CascadeEvent(parent=p, child=c, time=t) for p, c, t in events),
                     key=lambda e: e.time)
        out[f"m{i}"] = tuple(evs)
    return CascadeLog(messages=out)


def make_net(edges, nodes=()):
    return DiffusionNetwork.from_edges(edges, nodes=nodes)


def make_exposures(records):
    """records: iterable of (v, mode_members, n_fail, {u_star: count})."""
    table = ExposureTable()
    for v, members, n_fail, choices in records:
        cell = table.cell(v, canonical_mode(members))
        cell.n_fail += n_fail
        for u, c in choices.items():
            cell.n += c
            cell.choices[u] = cell.choices.get(u, 0) + c
    return table


def make_model(node_ids, k=3, lam=0.01, seed=0, scale=1.0):
    rng = np.random.default_rng(seed)
    n = len(node_ids)
    return IMModel(node_index={v: i for i, v in enumerate(node_ids)},
                   I=scale * rng.uniform(0.1, 1.0, size=(n, k)),
                   S=scale * rng.uniform(0.1, 1.0, size=(n, k)),
                   lam=lam, k=k)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)

"""Cascade logs, diffusion networks, and exposure extraction.

A cascade log records, per message, who forwarded it, from whom, and when.
From a log we build the diffusion network (a directed edge (u, v) exists iff
some forwarding event (u, v, t) was observed), and per node we aggregate
exposure statistics keyed by the *mode*: the canonically sorted set of
in-neighbors that were active when the node was exposed.

Ingestion and extraction are pure functions of the log; all types are
treated as immutable after construction.
"""

from __future__ import annotations

import json
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence, Set, TextIO, Tuple, Union

from .errors import CascadeParseError, DataError

NodeId = Union[str, int]
Mode = Tuple[NodeId, ...]


def canonical_mode(members: Iterable[NodeId]) -> Mode:
    """Canonically sorted, deduplicated member tuple. Must be nonempty."""
    mode = tuple(sorted(set(members)))
    if not mode:
        raise ValueError("a mode must have at least one member")
    return mode


@dataclass(frozen=True)
class CascadeEvent:
    """One forwarding event: ``child`` forwards at ``time``, seen from ``parent``.

    ``parent`` is None for the root(s) that seeded the message.
    """

    parent: Optional[NodeId]
    child: NodeId
    time: int


@dataclass
class CascadeLog:
    """Messages mapped to their forwarding events, sorted by time ascending.

    Ties keep input order.  Clean logs have each child at most once per
    message; raw real-world logs may violate that, which pruning and
    extraction handle explicitly.
    """

    messages: Dict[str, Tuple[CascadeEvent, ...]] = field(default_factory=dict)

    @property
    def n_messages(self) -> int:
        return len(self.messages)

    @property
    def n_events(self) -> int:
        return sum(len(evs) for evs in self.messages.values())

    def nodes(self) -> Set[NodeId]:
        out: Set[NodeId] = set()
        for events in self.messages.values():
            for ev in events:
                if ev.parent is not None:
                    out.add(ev.parent)
                out.add(ev.child)
        return out


@dataclass
class DiffusionNetwork:
    """Directed graph of observed propagation links."""

    nodes: Set[NodeId]
    edges: Set[Tuple[NodeId, NodeId]]
    in_neighbors: Dict[NodeId, Set[NodeId]]
    out_neighbors: Dict[NodeId, Set[NodeId]]

    @classmethod
    def from_edges(cls, edges: Iterable[Tuple[NodeId, NodeId]],
                   nodes: Iterable[NodeId] = ()) -> "DiffusionNetwork":
        edge_set = set(edges)
        node_set = set(nodes)
        inn: Dict[NodeId, Set[NodeId]] = defaultdict(set)
        outn: Dict[NodeId, Set[NodeId]] = defaultdict(set)
        for u, v in edge_set:
            node_set.add(u)
            node_set.add(v)
            inn[v].add(u)
            outn[u].add(v)
        return cls(nodes=node_set, edges=edge_set,
                   in_neighbors=dict(inn), out_neighbors=dict(outn))

    def in_nbrs(self, v: NodeId) -> Set[NodeId]:
        return self.in_neighbors.get(v, set())

    def out_nbrs(self, u: NodeId) -> Set[NodeId]:
        return self.out_neighbors.get(u, set())

    @property
    def n_edges(self) -> int:
        return len(self.edges)


@dataclass
class ExposureCell:
    """Counts for one (node, mode) key.

    ``n``: forwards by the node under this mode.
    ``n_fail``: exposures under this mode with no forward.
    ``choices``: forwards broken down by the recorded parent.
    """

    n: int = 0
    n_fail: int = 0
    choices: Dict[NodeId, int] = field(default_factory=dict)


@dataclass
class ExposureTable:
    """Aggregated exposure statistics keyed by (node, mode)."""

    cells: Dict[Tuple[NodeId, Mode], ExposureCell] = field(default_factory=dict)

    def cell(self, v: NodeId, mode: Mode) -> ExposureCell:
        key = (v, mode)
        got = self.cells.get(key)
        if got is None:
            got = ExposureCell()
            self.cells[key] = got
        return got

    def __len__(self) -> int:
        return len(self.cells)

    def nodes(self) -> Set[NodeId]:
        out: Set[NodeId] = set()
        for (v, mode) in self.cells:
            out.add(v)
            out.update(mode)
        return out

    def validate(self) -> None:
        for (v, mode), cell in self.cells.items():
            if not mode:
                raise DataError(f"empty mode for node {v!r}")
            if cell.n < 0 or cell.n_fail < 0 or any(c < 0 for c in cell.choices.values()):
                raise DataError(f"negative count for ({v!r}, {mode!r})")
            if sum(cell.choices.values()) != cell.n:
                raise DataError(f"choice counts do not sum to n for ({v!r}, {mode!r})")
            if any(u not in mode for u in cell.choices):
                raise DataError(f"choice outside mode for ({v!r}, {mode!r})")


@dataclass
class Diagnostics:
    """Counters for records dropped or redirected during ingestion/extraction."""

    malformed_lines: int = 0
    duplicate_forwards: int = 0
    skipped_events: int = 0
    overflow_messages: int = 0
    pruned_events: int = 0

    def to_dict(self) -> Dict[str, int]:
        return dict(self.__dict__)


def parse_cascades(stream: Union[TextIO, Iterable[str]],
                   diagnostics: Optional[Diagnostics] = None) -> CascadeLog:
    """Parse a JSONL cascade stream.

    One message per line: ``{"mid": str, "events": [{"parent": str|null,
    "child": str, "t": int}, ...]}``.  Unknown fields are ignored.  Events
    are stored sorted by time ascending, ties in input order.

    Raises CascadeParseError with the offending line number for malformed
    lines, events with parent == child, negative times, or duplicate
    message ids.
    """
    messages: Dict[str, Tuple[CascadeEvent, ...]] = {}
    for line_no, line in enumerate(stream, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CascadeParseError(line_no, f"invalid JSON: {exc.msg}") from exc
        if not isinstance(obj, dict) or "mid" not in obj or "events" not in obj:
            raise CascadeParseError(line_no, "expected an object with 'mid' and 'events'")
        mid = str(obj["mid"])
        if mid in messages:
            raise CascadeParseError(line_no, f"duplicate message id {mid!r}")
        raw_events = obj["events"]
        if not isinstance(raw_events, list):
            raise CascadeParseError(line_no, "'events' must be a list")
        events: List[CascadeEvent] = []
        for ev in raw_events:
            if not isinstance(ev, dict) or "child" not in ev or "t" not in ev:
                raise CascadeParseError(line_no, "event must carry 'child' and 't'")
            parent = ev.get("parent")
            child = ev["child"]
            t = ev["t"]
            if child is None:
                raise CascadeParseError(line_no, "event child must be present")
            if not isinstance(t, int) or isinstance(t, bool) or t < 0:
                raise CascadeParseError(line_no, f"event time must be a nonnegative integer, got {t!r}")
            if parent is not None and parent == child:
                raise CascadeParseError(line_no, f"rejected record: parent equals child ({child!r})")
            events.append(CascadeEvent(parent=parent, child=child, time=t))
        events.sort(key=lambda e: e.time)  # stable: ties keep input order
        messages[mid] = tuple(events)
    return CascadeLog(messages=messages)


def dump_cascades(log: CascadeLog, fp: TextIO) -> None:
    """Write a log in the JSONL cascade format (messages in sorted-id order)."""
    for mid in sorted(log.messages):
        events = [{"parent": ev.parent, "child": ev.child, "t": ev.time}
                  for ev in log.messages[mid]]
        fp.write(json.dumps({"mid": mid, "events": events}, sort_keys=True))
        fp.write("\n")


def network_to_dict(net: DiffusionNetwork) -> dict:
    return {
        "nodes": sorted(net.nodes, key=str),
        "edges": [[u, v] for u, v in sorted(net.edges, key=lambda e: (str(e[0]), str(e[1])))],
    }


def network_from_dict(obj: dict) -> DiffusionNetwork:
    return DiffusionNetwork.from_edges(
        ((u, v) for u, v in obj.get("edges", [])), nodes=obj.get("nodes", ()))


def prune(log: CascadeLog, min_pair_total: int = 50,
          max_pair_per_message: Union[int, float] = 50,
          diagnostics: Optional[Diagnostics] = None) -> CascadeLog:
    """Drop abnormal forwarding records by (parent, child) pair frequency.

    Two rules, applied in sequence:
      1. burst rule: within a single message, if a pair occurs more than
         ``max_pair_per_message`` times, all its events in that message are
         removed;
      2. rarity rule: a pair occurring fewer than ``min_pair_total`` times
         across the whole (burst-filtered) log has all its events removed.

    Root events (no parent) are never pruned.  Messages left with no events
    are dropped.  The operation is idempotent for fixed thresholds.
    """
    if min_pair_total < 0 or (max_pair_per_message is not None and max_pair_per_message < 0):
        raise ValueError("prune thresholds must be nonnegative")
    if max_pair_per_message is None:
        max_pair_per_message = float("inf")

    pruned = 0
    stage1: Dict[str, Tuple[CascadeEvent, ...]] = {}
    for mid, events in log.messages.items():
        per_msg = Counter((ev.parent, ev.child) for ev in events if ev.parent is not None)
        burst = {pair for pair, c in per_msg.items() if c > max_pair_per_message}
        kept = tuple(ev for ev in events
                     if ev.parent is None or (ev.parent, ev.child) not in burst)
        pruned += len(events) - len(kept)
        stage1[mid] = kept

    totals: Counter = Counter()
    for events in stage1.values():
        totals.update((ev.parent, ev.child) for ev in events if ev.parent is not None)
    rare = {pair for pair, c in totals.items() if c < min_pair_total}

    result: Dict[str, Tuple[CascadeEvent, ...]] = {}
    for mid, events in stage1.items():
        kept = tuple(ev for ev in events
                     if ev.parent is None or (ev.parent, ev.child) not in rare)
        pruned += len(events) - len(kept)
        if kept:
            result[mid] = kept

    if diagnostics is not None:
        diagnostics.pruned_events += pruned
    return CascadeLog(messages=result)


def build_diffusion_network(log: CascadeLog) -> DiffusionNetwork:
    """Nodes are every id seen as parent or child; edges every distinct
    (parent, child) pair with a parent present."""
    edges: Set[Tuple[NodeId, NodeId]] = set()
    nodes: Set[NodeId] = set()
    for events in log.messages.values():
        for ev in events:
            nodes.add(ev.child)
            if ev.parent is not None:
                nodes.add(ev.parent)
                edges.add((ev.parent, ev.child))
    return DiffusionNetwork.from_edges(edges, nodes=nodes)


def first_forward_times(events: Sequence[CascadeEvent],
                        diagnostics: Optional[Diagnostics] = None
                        ) -> Tuple[Dict[NodeId, int], Dict[NodeId, Optional[NodeId]]]:
    """Per-message dedup: keep each child's first event, drop later repeats.

    Returns (forward time by node, recorded parent by node).
    """
    times: Dict[NodeId, int] = {}
    parents: Dict[NodeId, Optional[NodeId]] = {}
    for ev in events:
        if ev.child in times:
            if diagnostics is not None:
                diagnostics.duplicate_forwards += 1
            continue
        times[ev.child] = ev.time
        parents[ev.child] = ev.parent
    return times, parents


def extract_exposures(log: CascadeLog, net: DiffusionNetwork,
                      diagnostics: Optional[Diagnostics] = None) -> ExposureTable:
    """Aggregate per-node exposure records into (node, mode) counts.

    Per message:
      * each non-root forwarding event (u, v, t) records a success for v
        under the mode {in-neighbors of v that forwarded strictly before t}
        ∪ {u}, with u as the choice ground truth;
      * each node that forwarded nothing but has at least one forwarder
        among its in-neighbors records one failure under the mode
        {in-neighbors that forwarded at any time} (the end-of-cascade
        active set);
      * root events record nothing.

    Events whose recorded parent is not an in-neighbor of the child in
    ``net`` (possible when ``net`` was built from a different window) are
    skipped and counted in ``diagnostics``.
    """
    table = ExposureTable()
    for events in log.messages.values():
        times, parents = first_forward_times(events, diagnostics)
        forwarders = set(times)
        for v, t_v in times.items():
            u = parents[v]
            if u is None:
                continue
            nbrs = net.in_neighbors.get(v)
            if not nbrs or u not in nbrs:
                if diagnostics is not None:
                    diagnostics.skipped_events += 1
                continue
            active = {w for w in nbrs if w in times and times[w] < t_v}
            active.add(u)
            cell = table.cell(v, canonical_mode(active))
            cell.n += 1
            cell.choices[u] = cell.choices.get(u, 0) + 1
        exposed: Set[NodeId] = set()
        for w in forwarders:
            exposed.update(net.out_neighbors.get(w, ()))
        for v in exposed - forwarders:
            active = net.in_neighbors[v] & forwarders
            table.cell(v, canonical_mode(active)).n_fail += 1
    return table


def split_by_time(log: CascadeLog, boundaries: Sequence[int],
                  diagnostics: Optional[Diagnostics] = None
                  ) -> Tuple[List[CascadeLog], CascadeLog]:
    """Assign each message to the half-open window [b_i, b_{i+1}) containing
    its earliest event.

    Returns (one log per window, overflow log).  Messages before the first
    boundary or at/after the last land in the overflow log, which is
    reported separately rather than silently dropped.
    """
    bounds = list(boundaries)
    if len(bounds) < 2 or any(a >= b for a, b in zip(bounds, bounds[1:])):
        raise ValueError("boundaries must be strictly increasing with at least two entries")
    windows: List[Dict[str, Tuple[CascadeEvent, ...]]] = [{} for _ in bounds[:-1]]
    overflow: Dict[str, Tuple[CascadeEvent, ...]] = {}
    for mid, events in log.messages.items():
        if not events:
            continue
        start = events[0].time
        if start < bounds[0] or start >= bounds[-1]:
            overflow[mid] = events
            if diagnostics is not None:
                diagnostics.overflow_messages += 1
            continue
        for i in range(len(bounds) - 1):
            if bounds[i] <= start < bounds[i + 1]:
                windows[i][mid] = events
                break
    return [CascadeLog(messages=w) for w in windows], CascadeLog(messages=overflow)

"""Hierarchy graph: interned nodes, transitive closure, and negative samplers.

Edges are ordered (child, parent) pairs; the closure pair (u, v) states that
u lies below v, i.e. every instance of u is an instance of v.  For each node
w, ``descendants[w]`` is the set A(w) of nodes at or below w, including w
itself.

Negative-sample methods (all return ordered pairs that are used as
violations during training):

* s1 -- corrupt one side of a true pair with a uniformly random node,
        rejecting true pairs, the original pair, and degenerate (x, x).
* s2 -- swap a true pair (u, v) into (v, u).
* s3 -- draw w with at least two proper descendants, u from A(w) - {w},
        v from A(w) - A(u); emit (v, u).
* s4 -- as s3 but v from A(w) - A(u) - {w}; redraw (w, u) when empty.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import CycleError, SamplingError

_REJECTION_TRIES = 32  # uniform-rejection attempts before exact set difference


@dataclass(frozen=True)
class NodeId:
    index: int
    name: str


@dataclass(frozen=True)
class NegSpec:
    """Per-positive sample counts for each method.

    A weight's integer part is a fixed count; a fractional part is realized
    as an independent Bernoulli inclusion per positive pair, so 0.9 draws one
    sample 90% of the time and 2.5 draws two always plus one half the time.
    """

    s1: float = 0.0
    s2: float = 0.0
    s3: float = 0.0
    s4: float = 0.0

    def __post_init__(self):
        weights = (self.s1, self.s2, self.s3, self.s4)
        if any(not math.isfinite(w) or w < 0.0 for w in weights):
            raise ValueError("negative-sample weights must be finite and >= 0")
        if all(w == 0.0 for w in weights):
            raise ValueError("at least one negative-sample weight must be positive")

    def __str__(self) -> str:
        parts = []
        for name in ("s1", "s2", "s3", "s4"):
            w = getattr(self, name)
            if w > 0.0:
                parts.append(f"{name}:{w:g}")
        return ",".join(parts)

    @classmethod
    def parse(cls, text: str) -> "NegSpec":
        """Parse comma-separated ``method:weight`` items, e.g. ``s1:1,s2:1,s4:1``."""
        weights = {}
        for item in text.split(","):
            item = item.strip()
            if not item:
                continue
            name, _, value = item.partition(":")
            name = name.strip().lower()
            if name not in ("s1", "s2", "s3", "s4"):
                raise ValueError(f"unknown negative-sample method {name!r}")
            if name in weights:
                raise ValueError(f"duplicate method {name!r} in {text!r}")
            weights[name] = float(value) if value else 1.0
        return cls(**weights)


class HierarchyGraph:
    """Interned relation graph; closure structures exist after transitive_closure.

    Immutable once the closure is computed; samplers take an explicit RNG so
    callers can shard work across independent seeded streams.
    """

    def __init__(self):
        self.names: list[str] = []
        self._ids: dict[str, int] = {}
        self.direct_edges: set[tuple[int, int]] = set()
        # Filled by transitive_closure:
        self.descendants: list[np.ndarray] | None = None
        self._descendant_sets: list[set[int]] | None = None
        self._closure_pairs: np.ndarray | None = None
        self._s3_eligible: np.ndarray | None = None

    @property
    def n(self) -> int:
        return len(self.names)

    def intern(self, name: str) -> int:
        idx = self._ids.get(name)
        if idx is None:
            idx = len(self.names)
            self._ids[name] = idx
            self.names.append(name)
        return idx

    def node_id(self, name: str) -> int:
        """Index of a known node; KeyError if absent."""
        return self._ids[name]

    def __contains__(self, name: str) -> bool:
        return name in self._ids

    @property
    def has_closure(self) -> bool:
        return self.descendants is not None

    def _require_closure(self):
        if self.descendants is None:
            raise ValueError("transitive closure has not been computed")

    def has_relation(self, u: int, v: int) -> bool:
        """True iff (u, v) is in the transitive closure (u != v and u below v)."""
        self._require_closure()
        return u != v and u in self._descendant_sets[v]

    def closure_pairs(self) -> np.ndarray:
        """All closure pairs as an (N, 2) int array of (below, above) rows."""
        self._require_closure()
        return self._closure_pairs

    def closure_edge_set(self) -> set[tuple[int, int]]:
        """Closure as a set of tuples; intended for tests and small graphs."""
        self._require_closure()
        return {(int(u), int(v)) for u, v in self._closure_pairs}

    @property
    def closure_size(self) -> int:
        self._require_closure()
        return len(self._closure_pairs)


def build_graph(edges: list[tuple[str, str]]) -> HierarchyGraph:
    """Intern the (child, parent) name pairs; duplicates collapse silently.

    Self-loops are rejected.  The closure is not computed here; call
    ``transitive_closure`` before using samplers or closure queries.
    """
    g = HierarchyGraph()
    for child, parent in edges:
        if not child or not parent:
            raise ValueError("node names must be non-empty")
        if child == parent:
            raise ValueError(f"self-loop edge on {child!r}")
        g.direct_edges.add((g.intern(child), g.intern(parent)))
    return g


def transitive_closure(g: HierarchyGraph) -> HierarchyGraph:
    """Compute closure pairs and descendant sets A(w); idempotent.

    Raises ``CycleError`` naming a node on a cycle if the edges do not form
    a DAG.
    """
    if g.descendants is not None:
        return g
    n = g.n
    children: list[list[int]] = [[] for _ in range(n)]
    parents: list[list[int]] = [[] for _ in range(n)]
    for child, parent in g.direct_edges:
        children[parent].append(child)
        parents[child].append(parent)

    # Kahn's algorithm; a node is ready once all its children are placed,
    # so the order lists every node after its descendants.
    pending_children = [len(children[w]) for w in range(n)]
    queue = [w for w in range(n) if pending_children[w] == 0]
    topo: list[int] = []
    while queue:
        w = queue.pop()
        topo.append(w)
        for p in parents[w]:
            pending_children[p] -= 1
            if pending_children[p] == 0:
                queue.append(p)
    if len(topo) < n:
        stuck = [w for w in range(n) if pending_children[w] > 0]
        cycle_node = _find_cycle_node(children, stuck[0])
        raise CycleError(f"relation graph has a cycle through {g.names[cycle_node]!r}")

    desc_sets: list[set[int] | None] = [None] * n
    for w in topo:  # children appear before parents
        s = {w}
        for c in children[w]:
            s |= desc_sets[c]
        desc_sets[w] = s

    g._descendant_sets = desc_sets
    g.descendants = [np.fromiter(sorted(s), dtype=np.int64, count=len(s)) for s in desc_sets]

    total = sum(len(s) for s in desc_sets) - n
    pairs = np.empty((total, 2), dtype=np.int64)
    k = 0
    for v in range(n):
        for u in desc_sets[v]:
            if u != v:
                pairs[k, 0] = u
                pairs[k, 1] = v
                k += 1
    g._closure_pairs = pairs
    g._s3_eligible = np.fromiter(
        (w for w in range(n) if len(desc_sets[w]) - 1 >= 2), dtype=np.int64
    )
    return g


def _find_cycle_node(children: list[list[int]], start: int) -> int:
    # walk child edges until a node repeats; that node is on a cycle
    seen = {}
    w = start
    step = 0
    while w not in seen:
        seen[w] = step
        step += 1
        w = children[w][0] if children[w] else w
    return w


def sample_s1(
    g: HierarchyGraph,
    pos: tuple[int, int],
    rng: np.random.Generator,
    max_retries: int = 100,
) -> tuple[int, int]:
    """Corrupt one side of a true pair with a uniform random node.

    The left or right element is replaced with probability 1/2 each;
    corruptions that land back on a closure pair, on ``pos`` itself, or on a
    degenerate (x, x) pair are rejected and redrawn.
    """
    g._require_closure()
    if g.n < 2:
        raise SamplingError("s1 needs at least two nodes")
    u, v = int(pos[0]), int(pos[1])
    for _ in range(max_retries):
        replacement = int(rng.integers(g.n))
        if rng.integers(2) == 0:
            cand = (replacement, v)
        else:
            cand = (u, replacement)
        if cand == (u, v) or cand[0] == cand[1]:
            continue
        if g.has_relation(cand[0], cand[1]):
            continue
        return cand
    raise SamplingError(f"s1 found no valid corruption of {pos} in {max_retries} tries")


def sample_s2(pos: tuple[int, int]) -> tuple[int, int]:
    """Swap a true pair (u, v) into the reverse pair (v, u)."""
    return (pos[1], pos[0])


def _draw_w_u(g: HierarchyGraph, rng: np.random.Generator) -> tuple[int, int]:
    eligible = g._s3_eligible
    if len(eligible) == 0:
        raise SamplingError("no node has at least two proper descendants")
    w = int(eligible[rng.integers(len(eligible))])
    desc_w = g.descendants[w]
    # uniform over A(w) - {w}: skip w's position in the sorted array
    pos_w = int(np.searchsorted(desc_w, w))
    k = int(rng.integers(len(desc_w) - 1))
    if k >= pos_w:
        k += 1
    return w, int(desc_w[k])


def _draw_from_difference(
    desc_w: np.ndarray,
    excluded: set[int],
    skip: int | None,
    rng: np.random.Generator,
) -> int | None:
    """Uniform draw from set(desc_w) - excluded - {skip}; None when empty.

    Rejection sampling against the membership set keeps the common case O(1);
    the exact difference is materialized only after repeated rejections.
    """
    for _ in range(_REJECTION_TRIES):
        cand = int(desc_w[rng.integers(len(desc_w))])
        if cand != skip and cand not in excluded:
            return cand
    pool = [int(x) for x in desc_w if x != skip and int(x) not in excluded]
    if not pool:
        return None
    return pool[int(rng.integers(len(pool)))]


def sample_s3(g: HierarchyGraph, rng: np.random.Generator) -> tuple[int, int]:
    """Random neighbor pair (v, u) with u, v descendants of a shared node w.

    w is uniform over nodes with |A(w) - {w}| >= 2, u uniform over
    A(w) - {w}, v uniform over A(w) - A(u).  The pair may be a reverse
    relationship (v above u), which is intended.
    """
    g._require_closure()
    w, u = _draw_w_u(g, rng)
    v = _draw_from_difference(g.descendants[w], g._descendant_sets[u], None, rng)
    # A(w) - A(u) always contains w itself, so v is never None here
    return (v, u)


def sample_s4(
    g: HierarchyGraph,
    rng: np.random.Generator,
    max_retries: int = 100,
) -> tuple[int, int]:
    """As s3 but with v drawn from A(w) - A(u) - {w}; redraws (w, u) when empty."""
    g._require_closure()
    for _ in range(max_retries):
        w, u = _draw_w_u(g, rng)
        v = _draw_from_difference(g.descendants[w], g._descendant_sets[u], w, rng)
        if v is not None:
            return (v, u)
    raise SamplingError(f"s4 found no admissible (w, u, v) in {max_retries} redraws")


_SAMPLER_ORDER = ("s1", "s2", "s3", "s4")


def make_negatives_grouped(
    g: HierarchyGraph,
    batch: list[tuple[int, int]],
    spec: NegSpec,
    rng: np.random.Generator,
) -> list[list[tuple[int, int]]]:
    """Negative pairs grouped per positive, methods in fixed s1..s4 order."""
    grouped = []
    for pos in batch:
        negs: list[tuple[int, int]] = []
        for name in _SAMPLER_ORDER:
            weight = getattr(spec, name)
            if weight == 0.0:
                continue
            count = int(weight)
            frac = weight - count
            if frac > 0.0 and rng.random() < frac:
                count += 1
            for _ in range(count):
                if name == "s1":
                    negs.append(sample_s1(g, pos, rng))
                elif name == "s2":
                    negs.append(sample_s2(pos))
                elif name == "s3":
                    negs.append(sample_s3(g, rng))
                else:
                    negs.append(sample_s4(g, rng))
        grouped.append(negs)
    return grouped


def make_negatives(
    g: HierarchyGraph,
    batch: list[tuple[int, int]],
    spec: NegSpec,
    rng: np.random.Generator,
) -> list[tuple[int, int]]:
    """Flat list of negatives for a batch of positives; order is deterministic
    given the RNG state."""
    return [neg for group in make_negatives_grouped(g, batch, spec, rng) for neg in group]

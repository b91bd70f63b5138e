"""Event-driven simulation of the branching population.

Nodes live in an arena indexed by creation order (which coincides with
non-decreasing birth time, ties broken by push order).  Ulam-Harris
labels are implicit: a node is identified by its parent pointer and its
rank among the parent's births; labels can be reconstructed on demand.

Each node stores its *own* realized birth offsets as data.  For laws
with finite realizations (Galton-Watson, fragmentation, Poisson with
b = -1) the full offset list is kept even where it extends past the
simulation horizon, so coming-generation sums are exact.  For laws of
infinite total intensity the offsets are materialized up to a knowledge
cut and the sums beyond the cut are replaced by their conditional mean
(legitimate for Poisson processes by independence of increments); the
substitution is exact in expectation and exponentially small in the
distance to the cut.
"""

from __future__ import annotations

import cmath
import heapq
import math
from bisect import bisect_right
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .errors import (
    CmjError,
    ConfigurationError,
    KnowledgeError,
    ResourceCapExceeded,
)
from .models import BirthLaw, validate_law

DEFAULT_NODE_CAP = 100_000_000


@dataclass(frozen=True)
class TimeHorizon:
    """Simulate every birth up to and including absolute time t."""

    t: float


@dataclass(frozen=True)
class WeightThreshold:
    """Stop at the first time the total number of births reaches n.

    This is the count-based weight (indicator characteristic); the tree
    contains every individual born up to and including the stop time,
    which for atomless laws means exactly n nodes.
    """

    n: int


StopRule = Union[TimeHorizon, WeightThreshold]


class Population:
    """Realized genealogy up to a stop time."""

    __slots__ = (
        "law",
        "stop_rule",
        "seed",
        "horizon",
        "birth",
        "parent",
        "gen",
        "child_rank",
        "children",
        "offsets",
        "cut",
    )

    def __init__(self, law: BirthLaw, stop_rule: StopRule, seed):
        self.law = law
        self.stop_rule = stop_rule
        self.seed = seed
        self.horizon = 0.0
        self.birth: list[float] = []
        self.parent: list[int] = []
        self.gen: list[int] = []
        self.child_rank: list[int] = []
        self.children: list[list[int]] = []
        self.offsets: list[list[float]] = []
        self.cut: list[float] = []

    # -- arena ----------------------------------------------------------
    def __len__(self) -> int:
        return len(self.birth)

    def add_node(self, parent: int, birth_time: float, rank: int) -> int:
        nid = len(self.birth)
        self.birth.append(birth_time)
        self.parent.append(parent)
        self.gen.append(0 if parent < 0 else self.gen[parent] + 1)
        self.child_rank.append(rank)
        self.children.append([])
        self.offsets.append([])
        self.cut.append(math.inf)
        if parent >= 0:
            self.children[parent].append(nid)
        return nid

    def label(self, nid: int) -> tuple[int, ...]:
        """Ulam-Harris label (1-based child ranks along the ancestry)."""
        path = []
        while self.parent[nid] >= 0:
            path.append(self.child_rank[nid] + 1)
            nid = self.parent[nid]
        return tuple(reversed(path))

    def count_births(self, t: float) -> int:
        """Number of individuals born up to and including time t."""
        return bisect_right(self.birth, t)

    def knowledge_tail(self, alpha: float, nid: int) -> float:
        """Conditional mean of sum(exp(-alpha*x)) over unmaterialized offsets."""
        c = self.cut[nid]
        if math.isinf(c):
            return 0.0
        return self.law.tilted_tail(alpha, c)


def _rng_from(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(np.random.SeedSequence(seed))


def simulate(
    law: BirthLaw,
    stop: StopRule,
    seed,
    *,
    node_cap: int = DEFAULT_NODE_CAP,
) -> Population:
    """Simulate one population with a min-heap event loop on birth times.

    ``seed`` is an integer (or ``SeedSequence``/``Generator``); identical
    seeds give identical populations.  Exceeding ``node_cap`` raises and
    discards the partial state.
    """
    validate_law(law)
    rng = _rng_from(seed)
    if isinstance(stop, TimeHorizon):
        if stop.t < 0:
            raise ConfigurationError("time horizon must be non-negative")
        return _run(law, stop, stop.t, rng, node_cap, seed)
    if isinstance(stop, WeightThreshold):
        if stop.n < 1:
            raise ConfigurationError("weight threshold must be at least 1")
        horizon = 1.0
        for _ in range(60):
            pop = _run(law, stop, horizon, rng, node_cap, seed)
            if pop is not None:
                return pop
            horizon *= 2.0
        raise CmjError("weight threshold not reached within horizon ladder")
    raise ConfigurationError(f"unknown stop rule {stop!r}")


def _run(law, stop, horizon, rng, node_cap, seed) -> Optional[Population]:
    threshold = stop.n if isinstance(stop, WeightThreshold) else None
    pop = Population(law, stop, seed)
    pop.horizon = horizon

    heap: list[tuple[float, int, int, int]] = []
    counter = 0

    def attach_offsets(nid: int, birth_time: float) -> None:
        nonlocal counter
        window = horizon - birth_time
        offs, cut = law.sample_offsets(rng, window)
        pop.offsets[nid] = offs
        pop.cut[nid] = cut
        for idx, x in enumerate(offs):
            if birth_time + x <= horizon:
                heapq.heappush(heap, (birth_time + x, counter, nid, idx))
                counter += 1
                break

    root = pop.add_node(-1, 0.0, 0)
    attach_offsets(root, 0.0)
    if threshold is not None and len(pop) >= threshold:
        pop.horizon = 0.0
        return pop

    last_time = 0.0
    while heap:
        t, _, u, idx = heapq.heappop(heap)
        assert t >= last_time, "heap discipline violated"
        last_time = t
        if len(pop) >= node_cap:
            raise ResourceCapExceeded(
                f"node cap {node_cap} exceeded at time {t:g}; partial state discarded"
            )
        child = pop.add_node(u, t, idx)
        nxt = idx + 1
        if nxt < len(pop.offsets[u]) and pop.birth[u] + pop.offsets[u][nxt] <= horizon:
            heapq.heappush(heap, (pop.birth[u] + pop.offsets[u][nxt], counter, u, nxt))
            counter += 1
        attach_offsets(child, t)
        if threshold is not None and len(pop) >= threshold:
            # keep every same-time birth: the stopped tree contains all
            # individuals born up to and including the stop time, which
            # includes later same-time siblings of each drained child
            while heap and heap[0][0] == t:
                t2, _, u2, idx2 = heapq.heappop(heap)
                child2 = pop.add_node(u2, t2, idx2)
                nxt2 = idx2 + 1
                if nxt2 < len(pop.offsets[u2]) and pop.birth[u2] + pop.offsets[u2][nxt2] <= horizon:
                    heapq.heappush(
                        heap, (pop.birth[u2] + pop.offsets[u2][nxt2], counter, u2, nxt2)
                    )
                    counter += 1
                offs, cut = law.sample_offsets(rng, 0.0)
                pop.offsets[child2] = offs
                pop.cut[child2] = cut
            pop.horizon = t
            return pop

    if threshold is not None:
        if _provably_extinct(pop):
            raise KnowledgeError(
                f"population went extinct with {len(pop)} births, "
                f"below the weight threshold {threshold}"
            )
        return None  # horizon too small; caller doubles it
    return pop


def _provably_extinct(pop: Population) -> bool:
    for nid in range(len(pop)):
        if math.isfinite(pop.cut[nid]):
            return False
        offs = pop.offsets[nid]
        if offs and pop.birth[nid] + offs[-1] > pop.horizon:
            return False
    return True


# -- coming generation and martingale traces ----------------------------


def coming_generation(pop: Population, t: float) -> list[int]:
    """Node ids v with S(parent(v)) <= t < S(v); empty for t < 0.

    The membership must be decidable from the simulated portion: every
    child of an individual born by t has to be materialized.  Otherwise
    a :class:`KnowledgeError` names the first offending node.
    """
    if t < 0:
        return []
    if t > pop.horizon:
        raise KnowledgeError(f"t = {t:g} exceeds the simulated horizon {pop.horizon:g}")
    members: list[int] = []
    n_born = pop.count_births(t)
    for u in range(n_born):
        if math.isfinite(pop.cut[u]):
            raise KnowledgeError(
                f"node {u} has latent births beyond its knowledge cut; "
                "coming-generation membership is undecidable"
            )
        offs = pop.offsets[u]
        if offs and pop.birth[u] + offs[-1] > pop.horizon:
            raise KnowledgeError(
                f"node {u} has a child born after the horizon; "
                "coming-generation membership is undecidable"
            )
        for v in pop.children[u]:
            if pop.birth[v] > t:
                members.append(v)
    return members


def nerman_w(pop: Population, alpha: float, t: float) -> float:
    """Tilted mass of the coming generation, sum of exp(-alpha*S(v)).

    For laws whose realizations cannot be materialized in full, births
    beyond a node's knowledge cut contribute their conditional mean
    (exact in expectation; the substitution error decays like
    exp(-alpha * distance-to-cut)).
    """
    if t < 0:
        return 0.0
    if t > pop.horizon:
        raise KnowledgeError(f"t = {t:g} exceeds the simulated horizon {pop.horizon:g}")
    total = 0.0
    n_born = pop.count_births(t)
    for u in range(n_born):
        bu = pop.birth[u]
        offs = pop.offsets[u]
        lo = bisect_right(offs, t - bu)
        for i in range(lo, len(offs)):
            total += math.exp(-alpha * (bu + offs[i]))
        tail = pop.knowledge_tail(alpha, u)
        if tail:
            total += math.exp(-alpha * bu) * tail
    return total


def complex_martingale(pop: Population, lam: complex, i: int, t: float) -> complex:
    """(-1)^i * sum over the coming generation of S(v)^i exp(-lam S(v)).

    Requires complete knowledge of the coming generation (no latent
    births), hence laws with finite realizations.
    """
    if i < 0:
        raise ConfigurationError("index i must be non-negative")
    if t < 0:
        return 0.0 + 0.0j
    if t > pop.horizon:
        raise KnowledgeError(f"t = {t:g} exceeds the simulated horizon {pop.horizon:g}")
    total = 0.0 + 0.0j
    n_born = pop.count_births(t)
    for u in range(n_born):
        if math.isfinite(pop.cut[u]):
            raise KnowledgeError(
                f"node {u} has latent births; complex martingale undecidable"
            )
        bu = pop.birth[u]
        offs = pop.offsets[u]
        lo = bisect_right(offs, t - bu)
        for k in range(lo, len(offs)):
            s = bu + offs[k]
            total += (s ** i) * cmath.exp(-lam * s)
    return ((-1) ** i) * total


def biggins(pop: Population, muhat_theta: float, theta: float, n: int) -> float:
    """Generation-indexed additive martingale.

    ``muhat(theta)^{-n} * sum over |u| = n of exp(-theta S(u))``; the
    caller supplies ``muhat(theta)``.  Every generation-(n-1) individual
    must be materialized with a complete offset list, otherwise the
    generation-n sum is undecidable and an error is raised.
    """
    if n < 0:
        raise ConfigurationError("generation index must be non-negative")
    if n == 0:
        return 1.0
    total = 0.0
    seen_parent_gen = False
    for u in range(len(pop)):
        g = pop.gen[u]
        if g > n - 1:
            continue
        if g <= n - 2:
            offs = pop.offsets[u]
            if math.isfinite(pop.cut[u]) or (
                offs and pop.birth[u] + offs[-1] > pop.horizon
            ):
                raise KnowledgeError(
                    f"generation {n} incomplete: node {u} (generation {g}) has "
                    "children beyond the simulated horizon"
                )
            continue
        # generation n-1: its offsets are the generation-n birth times
        seen_parent_gen = True
        if math.isfinite(pop.cut[u]):
            raise KnowledgeError(
                f"generation {n} incomplete: node {u} has latent births"
            )
        bu = pop.birth[u]
        for x in pop.offsets[u]:
            total += math.exp(-theta * (bu + x))
    if not seen_parent_gen:
        total = 0.0  # generation n-1 empty: the population died out earlier
    return total / muhat_theta ** n


# -- serialization ------------------------------------------------------


def dump_csv(pop: Population, fileobj) -> None:
    """Write (node_id, parent_id, birth_time, child_rank) rows, RFC-4180."""
    import csv

    writer = csv.writer(fileobj, lineterminator="\n")
    writer.writerow(["node_id", "parent_id", "birth_time", "child_rank"])
    for nid in range(len(pop)):
        writer.writerow(
            [
                nid,
                pop.parent[nid],
                f"{pop.birth[nid]:.17g}",
                pop.child_rank[nid],
            ]
        )

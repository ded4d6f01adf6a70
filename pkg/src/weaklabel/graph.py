"""Source dependency structure: chordal completion, junction tree, Omega mask.

Sources are indexed ``0..m-1``.  The latent label ``y`` is implicitly adjacent
to every source, so junction-tree nodes are ``{y} | C`` for each maximal
clique ``C`` of the (chordal) source graph; only the source part is stored.
"""

from __future__ import annotations

import itertools
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyOmega, InvalidSourceGraph, NonSingletonSeparators, NotIdentifiable

log = logging.getLogger(__name__)

RANK_TOL = 1e-10


def _edge(i, j):
    return (i, j) if i < j else (j, i)


@dataclass(frozen=True)
class SourceGraph:
    """Conditional dependency structure of the sources given ``y``.

    ``coverage[i]`` holds the 0-based tasks source ``i`` labels.  ``abstain[i]``
    says whether the source may abstain; ``emits[i]`` optionally restricts the
    label vectors it can emit (unipolar sources), ``None`` meaning all.
    """

    m: int
    coverage: tuple = ()
    edges: frozenset = frozenset()
    abstain: tuple = ()
    emits: tuple = ()

    def __post_init__(self):
        m = int(self.m)
        object.__setattr__(self, "m", m)
        cov = tuple(tuple(sorted(set(int(s) for s in c))) for c in self.coverage) or ((0,),) * m
        object.__setattr__(self, "coverage", cov)
        object.__setattr__(self, "edges", frozenset(_edge(int(i), int(j)) for i, j in self.edges))
        ab = self.abstain
        if isinstance(ab, bool):
            ab = (ab,) * m
        object.__setattr__(self, "abstain", tuple(bool(a) for a in ab) or (False,) * m)
        em = tuple(None if e is None else tuple(tuple(v) for v in e) for e in self.emits) or (None,) * m
        object.__setattr__(self, "emits", em)
        self._validate()

    def _validate(self):
        if self.m < 1:
            raise InvalidSourceGraph("need at least one source")
        for name, seq in (("coverage", self.coverage), ("abstain", self.abstain), ("emits", self.emits)):
            if len(seq) != self.m:
                raise InvalidSourceGraph(f"{name} has {len(seq)} entries for m={self.m}")
        for c in self.coverage:
            if not c:
                raise InvalidSourceGraph("empty coverage set")
        for i, j in self.edges:
            if i == j:
                raise InvalidSourceGraph(f"self-loop on source {i}")
            if not (0 <= i < self.m and 0 <= j < self.m):
                raise InvalidSourceGraph(f"edge ({i}, {j}) references a missing source")

    def neighbors(self, i: int) -> set:
        return {b if a == i else a for a, b in self.edges if i in (a, b)}

    def with_edges(self, edges) -> "SourceGraph":
        return SourceGraph(self.m, self.coverage, frozenset(edges), self.abstain, self.emits)

    def independent(self) -> "SourceGraph":
        """Same sources with every dependency edge removed."""
        return self.with_edges(())


def elimination_order(g: SourceGraph) -> tuple[list, set]:
    """Greedy min-fill ordering; ties go to the highest source index.

    Returns the ordering and the fill edges it introduces.
    """
    adj = {i: g.neighbors(i) for i in range(g.m)}
    remaining = set(range(g.m))
    order, fill = [], set()
    while remaining:
        best, best_fill = None, None
        for v in sorted(remaining, reverse=True):
            nb = adj[v] & remaining
            missing = [(a, b) for a, b in itertools.combinations(sorted(nb), 2) if b not in adj[a]]
            if best_fill is None or len(missing) < len(best_fill):
                best, best_fill = v, missing
        for a, b in best_fill:
            adj[a].add(b)
            adj[b].add(a)
            fill.add(_edge(a, b))
        order.append(best)
        remaining.remove(best)
    return order, fill


def chordal_complete(g: SourceGraph) -> SourceGraph:
    _, fill = elimination_order(g)
    if not fill:
        return g
    return g.with_edges(set(g.edges) | fill)


def is_chordal(g: SourceGraph) -> bool:
    _, fill = elimination_order(g)
    return not fill


def maximal_cliques(g: SourceGraph) -> list:
    """Maximal cliques of a chordal graph, each a sorted tuple, sorted by (size, members)."""
    order, fill = elimination_order(g)
    if fill:
        raise InvalidSourceGraph("maximal_cliques needs a chordal graph")
    pos = {v: k for k, v in enumerate(order)}
    cands = []
    for v in order:
        later = {u for u in g.neighbors(v) if pos[u] > pos[v]}
        cands.append(frozenset(later | {v}))
    maxi = [c for c in cands if not any(c < d for d in cands)]
    uniq = sorted({tuple(sorted(c)) for c in maxi}, key=lambda c: (len(c), c))
    return uniq


def connected_components(nodes, edges) -> list:
    adj = {v: set() for v in nodes}
    for a, b in edges:
        adj[a].add(b)
        adj[b].add(a)
    seen, comps = set(), []
    for v in sorted(nodes):
        if v in seen:
            continue
        stack, comp = [v], []
        seen.add(v)
        while stack:
            u = stack.pop()
            comp.append(u)
            for w in adj[u]:
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        comps.append(tuple(sorted(comp)))
    return comps


@dataclass(frozen=True)
class JunctionTree:
    """Nodes are maximal cliques (sources only; ``y`` is in every node).

    ``edges`` are ``(a, b, separator)`` with node indices and the source part
    of the separator (empty tuple means the separator is ``{y}``).
    """

    nodes: tuple
    edges: tuple

    @property
    def separators(self) -> list:
        return [sep for _, _, sep in self.edges]

    def singleton_separators(self) -> bool:
        return all(len(sep) == 0 for sep in self.separators)

    def path(self, a: int, b: int) -> list:
        adj = {k: [] for k in range(len(self.nodes))}
        for u, v, _ in self.edges:
            adj[u].append(v)
            adj[v].append(u)
        prev = {a: None}
        stack = [a]
        while stack:
            u = stack.pop()
            for w in adj[u]:
                if w not in prev:
                    prev[w] = u
                    stack.append(w)
        out, u = [], b
        while u is not None:
            out.append(u)
            u = prev[u]
        return out[::-1]

    def running_intersection(self) -> bool:
        for i in range(len(self.nodes)):
            for j in range(i + 1, len(self.nodes)):
                shared = set(self.nodes[i]) & set(self.nodes[j])
                if any(not shared <= set(self.nodes[k]) for k in self.path(i, j)):
                    return False
        return True


@dataclass(frozen=True)
class CliqueSet:
    """All cliques of the chordal source graph, plus ``y``-side bookkeeping.

    ``observable`` is every nonempty subset of a maximal clique (none contain
    ``y``), sorted by size then members.  ``separators`` lists separator
    cliques as source tuples, ``()`` standing for ``{y}``.
    """

    maximal: tuple
    observable: tuple
    separators: tuple

    def owner(self, clique) -> int:
        """Index of the maximal clique containing ``clique``."""
        s = set(clique)
        for k, c in enumerate(self.maximal):
            if s <= set(c):
                return k
        raise KeyError(clique)

    def co_member(self, a, b) -> bool:
        s = set(a) | set(b)
        return any(s <= set(c) for c in self.maximal)


def _build_tree(cliques):
    # maximum-weight spanning tree on |C_i & C_j| (Kruskal, deterministic)
    pairs = []
    for i, j in itertools.combinations(range(len(cliques)), 2):
        w = len(set(cliques[i]) & set(cliques[j]))
        pairs.append((-w, i, j))
    pairs.sort()
    parent = list(range(len(cliques)))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    edges = []
    for _, i, j in pairs:
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[ri] = rj
            edges.append((i, j, tuple(sorted(set(cliques[i]) & set(cliques[j])))))
    return tuple(edges)


def complete_clusters(g: SourceGraph) -> SourceGraph:
    """Make every connected component of the source graph a clique."""
    comps = connected_components(range(g.m), g.edges)
    edges = set(g.edges)
    for comp in comps:
        edges |= {_edge(a, b) for a, b in itertools.combinations(comp, 2)}
    return g.with_edges(edges)


def build_junction_tree(g: SourceGraph, force_singleton: bool = True):
    """Junction tree and clique set of a chordal source graph.

    Returns ``(tree, cliques, graph)`` where ``graph`` is the (possibly
    cluster-completed) source graph the tree was built from.
    """
    if not is_chordal(g):
        raise InvalidSourceGraph("build_junction_tree needs a chordal graph; call chordal_complete")
    cliques = maximal_cliques(g)
    tree = JunctionTree(tuple(cliques), _build_tree(cliques))
    if not tree.singleton_separators():
        if not force_singleton:
            bad = [sep for sep in tree.separators if sep]
            raise NonSingletonSeparators(f"separators larger than {{y}}: {bad}")
        warnings.warn("non-singleton separators; completing source clusters", stacklevel=2)
        log.warning("completing clusters to obtain singleton separators")
        g = complete_clusters(g)
        cliques = maximal_cliques(g)
        tree = JunctionTree(tuple(cliques), _build_tree(cliques))
    subs = set()
    for c in cliques:
        for k in range(1, len(c) + 1):
            subs.update(itertools.combinations(c, k))
    observable = tuple(sorted(subs, key=lambda c: (len(c), c)))
    cs = CliqueSet(tuple(cliques), observable, tuple(sorted({sep for sep in tree.separators})) or ((),))
    return tree, cs, g


@dataclass(frozen=True)
class OmegaMask:
    """Coordinate pairs where the inverse generalized covariance must vanish.

    ``pairs`` is an ``(|Omega|, 2)`` array of ``i < j`` pairs; ``mask`` is the
    symmetric boolean matrix.  ``components`` are connected components of the
    coordinate graph with edge set Omega; ``source_components`` those of the
    inverse source graph.
    """

    d: int
    pairs: np.ndarray
    mask: np.ndarray
    components: tuple
    source_components: tuple
    owners: tuple = field(default=())

    def __contains__(self, ij) -> bool:
        i, j = ij
        return bool(self.mask[i, j])


def build_omega(cs: CliqueSet, layout) -> OmegaMask:
    d = layout.d
    owners = [e.clique for e in layout.entries]
    mask = np.zeros((d, d), dtype=bool)
    for i in range(d):
        for j in range(i + 1, d):
            if not cs.co_member(owners[i], owners[j]):
                mask[i, j] = mask[j, i] = True
    pairs = np.argwhere(np.triu(mask, 1))
    if len(pairs) == 0:
        raise EmptyOmega("no coordinate pairs are conditionally independent; estimation impossible")
    comps = connected_components(range(d), [tuple(p) for p in pairs])
    sources = sorted({s for c in owners for s in c})
    inv_edges = [(a, b) for a, b in itertools.combinations(sources, 2) if not cs.co_member((a,), (b,))]
    src_comps = connected_components(sources, inv_edges)
    return OmegaMask(d, pairs, mask, tuple(comps), tuple(src_comps), tuple(owners))


@dataclass
class IdentifiabilityReport:
    solvable: bool
    rank: int
    d: int
    components: tuple
    sign_policy_per_component: tuple
    M: np.ndarray
    deficient_subspace: np.ndarray
    label: str = ""

    def raise_if_unsolvable(self):
        if not self.solvable:
            raise NotIdentifiable(
                f"{self.label or 'model'} not identifiable: rank(M_Omega) = {self.rank} < d_O = {self.d}",
                report=self,
            )

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "solvable": bool(self.solvable),
            "rank": int(self.rank),
            "d_O": int(self.d),
            "n_equations": int(self.M.shape[0]),
            "components": [list(map(int, c)) for c in self.components],
            "sign_policy_per_component": list(self.sign_policy_per_component),
            "deficient_subspace": self.deficient_subspace.round(12).tolist(),
        }


def omega_incidence(om: OmegaMask) -> np.ndarray:
    M = np.zeros((len(om.pairs), om.d))
    rows = np.arange(len(om.pairs))
    M[rows, om.pairs[:, 0]] = 1.0
    M[rows, om.pairs[:, 1]] = 1.0
    return M


def check_identifiability(om: OmegaMask, label: str = "") -> IdentifiabilityReport:
    """Rank test of the log-squared system ``M_Omega l = q_Omega``."""
    M = omega_incidence(om)
    _, s, vt = np.linalg.svd(M, full_matrices=True)
    tol = RANK_TOL * (s[0] if len(s) else 0.0)
    rank = int((s > tol).sum())
    null = vt[rank:]
    if len(om.components) == 1:
        policies = ("average non-adversarial",)
    else:
        policies = tuple("anchor required" for _ in om.components)
    return IdentifiabilityReport(rank == om.d, rank, om.d, om.components, policies, M, null, label)

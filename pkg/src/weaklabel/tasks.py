"""Task hierarchies, feasible label vectors and coverage projections.

Label vectors are tuples of ints with one entry per task.  Task values are
``1..k_s``; :data:`NA` marks a task that is logically inapplicable and
:data:`ABSTAIN` (``0``) marks a task the emitter did not label.  The two are
never conflated.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .errors import FeasibleSetTooLarge, InvalidTaskGraph, NoFeasibleCompletion

NA = -1
ABSTAIN = 0
DEFAULT_FEASIBLE_CAP = 10_000

LabelVector = tuple


def _sort_key(v):
    # N/A sorts after every real value; abstain (only present in projections)
    # sorts before them, which keeps projected vectors in feasible-set order.
    return tuple(float("inf") if x == NA else x for x in v)


@dataclass(frozen=True)
class TaskGraph:
    """A forest of tasks with "child is N/A under these parent values" rules.

    Parameters
    ----------
    cardinalities:
        Number of real values per task (``k_s >= 2``).
    edges:
        ``(parent, child)`` pairs, 0-based task indices.
    na_rules:
        ``{child: parent values forcing the child to N/A}``.
    names:
        Optional task names.
    labels:
        Optional per-task value names, ``labels[s][v - 1]`` names value ``v``.
    explicit:
        A user-supplied feasible set; when given, it replaces enumeration
        over the forest.
    """

    cardinalities: tuple
    edges: tuple = ()
    na_rules: dict = field(default_factory=dict)
    names: tuple = ()
    labels: tuple = ()
    explicit: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "cardinalities", tuple(int(k) for k in self.cardinalities))
        object.__setattr__(self, "edges", tuple((int(p), int(c)) for p, c in self.edges))
        object.__setattr__(
            self,
            "na_rules",
            {int(c): frozenset(int(v) for v in vals) for c, vals in dict(self.na_rules).items()},
        )
        if not self.names:
            object.__setattr__(self, "names", tuple(f"task_{s + 1}" for s in range(self.t)))
        if self.explicit is not None:
            object.__setattr__(self, "explicit", tuple(tuple(int(x) for x in v) for v in self.explicit))
        self._validate()

    @property
    def t(self) -> int:
        return len(self.cardinalities)

    def parent(self, task: int) -> int | None:
        for p, c in self.edges:
            if c == task:
                return p
        return None

    def children(self, task: int) -> list:
        return [c for p, c in self.edges if p == task]

    def ancestors(self, task: int) -> list:
        out = []
        p = self.parent(task)
        while p is not None:
            out.append(p)
            p = self.parent(p)
        return out

    def _validate(self):
        t = self.t
        if t < 1:
            raise InvalidTaskGraph("a task graph needs at least one task")
        if any(k < 2 for k in self.cardinalities):
            raise InvalidTaskGraph(f"cardinalities must be >= 2, got {self.cardinalities}")
        seen_child = set()
        for p, c in self.edges:
            if not (0 <= p < t and 0 <= c < t) or p == c:
                raise InvalidTaskGraph(f"bad edge ({p}, {c})")
            if c in seen_child:
                raise InvalidTaskGraph(f"task {c} has more than one parent")
            seen_child.add(c)
        # each task has <= 1 parent; a cycle would make ancestors() loop
        for s in range(t):
            seen = {s}
            p = self.parent(s)
            while p is not None:
                if p in seen:
                    raise InvalidTaskGraph("task edges contain a cycle")
                seen.add(p)
                p = self.parent(p)
        for c, vals in self.na_rules.items():
            p = self.parent(c) if 0 <= c < t else None
            if p is None:
                raise InvalidTaskGraph(f"na_rule for task {c}, which has no parent")
            bad = [v for v in vals if not 1 <= v <= self.cardinalities[p]]
            if bad:
                raise InvalidTaskGraph(f"na_rule for task {c} references parent values {bad}")
        if self.explicit is not None:
            if not self.explicit:
                raise InvalidTaskGraph("explicit feasible set is empty")
            for v in self.explicit:
                if len(v) != t:
                    raise InvalidTaskGraph(f"explicit vector {v} has length != {t}")
                for s, x in enumerate(v):
                    if x != NA and not 1 <= x <= self.cardinalities[s]:
                        raise InvalidTaskGraph(f"explicit vector {v} out of range on task {s}")
            if len(set(self.explicit)) != len(self.explicit):
                raise InvalidTaskGraph("explicit feasible set has duplicates")

    def value_name(self, task: int, value: int) -> str:
        if value == NA:
            return "N/A"
        if value == ABSTAIN:
            return "0"
        if self.labels and self.labels[task]:
            return str(self.labels[task][value - 1])
        return str(value)


def flat_task(k: int = 2) -> TaskGraph:
    """Single task with ``k`` classes."""
    return TaskGraph(cardinalities=(k,))


@dataclass(frozen=True)
class FeasibleSet:
    vectors: tuple

    def __post_init__(self):
        object.__setattr__(self, "_index", {v: i for i, v in enumerate(self.vectors)})

    @property
    def r(self) -> int:
        return len(self.vectors)

    @property
    def t(self) -> int:
        return len(self.vectors[0])

    def index(self, v) -> int:
        return self._index[tuple(v)]

    def __len__(self):
        return len(self.vectors)

    def __iter__(self):
        return iter(self.vectors)

    def __getitem__(self, i):
        return self.vectors[i]


def enumerate_feasible_set(g: TaskGraph, cap: int = DEFAULT_FEASIBLE_CAP) -> FeasibleSet:
    """All label vectors consistent with the N/A rules, in lexicographic order."""
    if g.explicit is not None:
        vecs = sorted(g.explicit, key=_sort_key)
        if len(vecs) > cap:
            raise FeasibleSetTooLarge(f"|Y| = {len(vecs)} exceeds cap {cap}")
        return FeasibleSet(tuple(vecs))

    order = []
    # topological order: parents before children
    remaining = list(range(g.t))
    while remaining:
        for s in remaining:
            p = g.parent(s)
            if p is None or p in order:
                order.append(s)
                remaining.remove(s)
                break

    partial = [[None] * g.t]
    for s in order:
        p = g.parent(s)
        nxt = []
        for v in partial:
            if p is not None and (v[p] == NA or v[p] in g.na_rules.get(s, ())):
                choices = [NA]
            else:
                choices = range(1, g.cardinalities[s] + 1)
            for x in choices:
                w = list(v)
                w[s] = x
                nxt.append(w)
        if len(nxt) > cap:
            raise FeasibleSetTooLarge(f"|Y| exceeds cap {cap}")
        partial = nxt
    vecs = sorted((tuple(v) for v in partial), key=_sort_key)
    return FeasibleSet(tuple(vecs))


def _matches(v, pattern, allow_zero):
    for x, p in zip(v, pattern):
        if allow_zero and p == ABSTAIN:
            continue
        if x != p:
            return False
    return True


def validate_label_vector(g: TaskGraph, v: Sequence[int], allow_zero: bool = False,
                          fs: FeasibleSet | None = None) -> bool:
    """True iff ``v`` extends to at least one feasible vector.

    With ``allow_zero`` the zeros in ``v`` are wildcards.
    """
    if len(v) != g.t:
        return False
    for s, x in enumerate(v):
        if x == NA or (allow_zero and x == ABSTAIN):
            continue
        if not 1 <= x <= g.cardinalities[s]:
            return False
    fs = fs or enumerate_feasible_set(g)
    return any(_matches(y, v, allow_zero) for y in fs)


def complete_hierarchical_label(g: TaskGraph, lowest: tuple, fs: FeasibleSet | None = None):
    """Expand a single task assignment into the label vector it implies.

    Tasks on which every compatible feasible vector agrees get that value
    (ancestors, and N/A on incompatible branches); the rest stay 0.
    """
    task, value = lowest
    fs = fs or enumerate_feasible_set(g)
    compatible = [y for y in fs if y[task] == value]
    if value in (NA, ABSTAIN) or not compatible:
        raise NoFeasibleCompletion(f"no feasible vector has task {task} = {value}")
    out = []
    for s in range(g.t):
        vals = {y[s] for y in compatible}
        out.append(vals.pop() if len(vals) == 1 else ABSTAIN)
    return tuple(out)


def abstain_vector(t: int) -> tuple:
    return (ABSTAIN,) * t


def project(v: Sequence[int], coverage: Iterable[int]) -> tuple:
    cov = set(coverage)
    return tuple(x if s in cov else ABSTAIN for s, x in enumerate(v))


def project_to_coverage(fs: FeasibleSet, coverage: Iterable[int]) -> list:
    """Distinct restrictions of the feasible set to ``coverage``, abstain last."""
    coverage = tuple(sorted(set(coverage)))
    if not coverage:
        raise InvalidTaskGraph("coverage set must be nonempty")
    seen = {}
    for y in fs:
        seen.setdefault(project(y, coverage), None)
    return list(seen) + [abstain_vector(fs.t)]

"""Indicator layouts over observable cliques and their empirical moments."""

from __future__ import annotations

import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateCovariance, InvalidCell, InvalidSourceGraph, LayoutTooLarge
from .tasks import ABSTAIN, FeasibleSet, abstain_vector, project_to_coverage

DEFAULT_LAYOUT_CAP = 20_000
DEFAULT_RIDGE = 1e-6
CHUNK_ROWS = 1 << 16


@dataclass(frozen=True)
class OutputSpace:
    """What one source can emit.

    Label codes are ``0..k-1`` (order of ``labels``); code ``k`` is the
    abstain vector when ``abstain`` is set.
    """

    source: int
    coverage: tuple
    labels: tuple
    abstain: bool
    t: int

    @property
    def k(self) -> int:
        return len(self.labels)

    @property
    def arity(self) -> int:
        return self.k + int(self.abstain)

    @property
    def abstain_code(self) -> int | None:
        return self.k if self.abstain else None

    @property
    def dropped(self) -> int:
        """Code left out of the minimal statistics."""
        return self.k if self.abstain else self.k - 1

    def vector(self, code: int) -> tuple:
        if self.abstain and code == self.k:
            return abstain_vector(self.t)
        return self.labels[code]

    def code(self, v) -> int:
        v = tuple(int(x) for x in v)
        if self.abstain and all(x == ABSTAIN for x in v):
            return self.k
        try:
            return self.labels.index(v)
        except ValueError:
            raise InvalidCell(f"source {self.source} cannot emit {v}") from None


def build_output_spaces(fs: FeasibleSet, sg) -> tuple:
    spaces = []
    for i in range(sg.m):
        cov = sg.coverage[i]
        if max(cov) >= fs.t:
            raise InvalidSourceGraph(f"source {i} covers task {max(cov)} but t = {fs.t}")
        labels = tuple(project_to_coverage(fs, cov)[:-1])
        if sg.emits[i] is not None:
            allowed = []
            for v in sg.emits[i]:
                v = tuple(v)
                if v not in labels:
                    raise InvalidSourceGraph(f"source {i} declares emitting {v}, outside its coverage space")
                allowed.append(v)
            labels = tuple(v for v in labels if v in allowed)
        if len(labels) + int(sg.abstain[i]) < 2:
            raise InvalidSourceGraph(f"source {i} has a single possible output")
        spaces.append(OutputSpace(i, cov, labels, sg.abstain[i], fs.t))
    return tuple(spaces)


@dataclass(frozen=True)
class Coordinate:
    """Indicator of ``codes[member] in events[k]`` for every member of ``clique``."""

    clique: tuple
    events: tuple

    def label(self) -> str:
        parts = []
        for s, ev in zip(self.clique, self.events):
            parts.append(f"{s}:{'|'.join(map(str, sorted(ev)))}")
        return "&".join(parts)


@dataclass(frozen=True)
class IndicatorLayout:
    entries: tuple

    @property
    def d(self) -> int:
        return len(self.entries)

    def owner(self, k: int) -> tuple:
        return self.entries[k].clique

    def sources(self) -> list:
        return sorted({s for e in self.entries for s in e.clique})

    def index(self) -> dict:
        return {(e.clique, e.events): k for k, e in enumerate(self.entries)}


def layout_from_events(cliques, events: dict, cap: int = DEFAULT_LAYOUT_CAP) -> IndicatorLayout:
    """One coordinate per clique and per combination of member events.

    ``events[i]`` lists event sets (frozensets of codes) for source ``i``;
    sources missing from ``events`` exclude every clique they belong to.
    """
    entries = []
    for c in cliques:
        if any(not events.get(s) for s in c):
            continue
        for combo in itertools.product(*(events[s] for s in c)):
            entries.append(Coordinate(tuple(c), tuple(combo)))
            if len(entries) > cap:
                raise LayoutTooLarge(f"d_O exceeds cap {cap}")
    return IndicatorLayout(tuple(entries))


def build_indicator_layout(cs, spaces, cap: int = DEFAULT_LAYOUT_CAP) -> IndicatorLayout:
    """Minimal layout: every value but the dropped one, per clique member."""
    events = {
        sp.source: [frozenset({c}) for c in range(sp.arity) if c != sp.dropped] for sp in spaces
    }
    return layout_from_events(cs.observable, events, cap)


def expected_dimension(cs, spaces) -> int:
    return sum(math.prod(spaces[i].arity - 1 for i in c) for c in cs.observable)


@dataclass
class LabelMatrix:
    """``n x m`` source outputs stored as per-source codes."""

    codes: np.ndarray
    spaces: tuple

    def __post_init__(self):
        self.codes = np.asarray(self.codes, dtype=np.int16)
        if self.codes.ndim != 2 or self.codes.shape[1] != len(self.spaces):
            raise InvalidCell(f"label matrix shape {self.codes.shape} does not match m = {len(self.spaces)}")
        for i, sp in enumerate(self.spaces):
            col = self.codes[:, i]
            if len(col) and (col.min() < 0 or col.max() >= sp.arity):
                raise InvalidCell(f"source {i} has codes outside 0..{sp.arity - 1}")

    @property
    def n(self) -> int:
        return self.codes.shape[0]

    @property
    def m(self) -> int:
        return self.codes.shape[1]

    @classmethod
    def from_vectors(cls, spaces, rows) -> "LabelMatrix":
        codes = np.empty((len(rows), len(spaces)), dtype=np.int16)
        for r, row in enumerate(rows):
            if len(row) != len(spaces):
                raise InvalidCell(f"row {r} has {len(row)} cells, expected {len(spaces)}")
            for i, v in enumerate(row):
                codes[r, i] = spaces[i].code(v)
        return cls(codes, tuple(spaces))

    def vector(self, row: int, source: int) -> tuple:
        return self.spaces[source].vector(int(self.codes[row, source]))

    def take(self, rows) -> "LabelMatrix":
        return LabelMatrix(self.codes[rows], self.spaces)


def _event_columns(layout: IndicatorLayout, codes: np.ndarray) -> dict:
    cols = {}
    for e in layout.entries:
        for s, ev in zip(e.clique, e.events):
            key = (s, ev)
            if key not in cols:
                cols[key] = np.isin(codes[:, s], list(ev))
    return cols


def featurize(layout: IndicatorLayout, codes: np.ndarray) -> np.ndarray:
    """Dense ``n x d_O`` 0/1 matrix (float64) of indicator statistics."""
    codes = np.atleast_2d(codes)
    cols = _event_columns(layout, codes)
    out = np.empty((codes.shape[0], layout.d), dtype=np.float64)
    for k, e in enumerate(layout.entries):
        acc = cols[(e.clique[0], e.events[0])]
        for s, ev in zip(e.clique[1:], e.events[1:]):
            acc = acc & cols[(s, ev)]
        out[:, k] = acc
    return out


def featurize_row(layout: IndicatorLayout, row) -> np.ndarray:
    """Indicator vector of one row of codes (0/1 ints)."""
    return featurize(layout, np.asarray(row, dtype=np.int64)[None, :])[0].astype(np.int8)


@dataclass
class MomentEstimates:
    mean: np.ndarray
    sigma_O: np.ndarray
    ridge: float
    n: float
    layout: IndicatorLayout | None = None

    @property
    def d(self) -> int:
        return len(self.mean)


def _accumulate(layout, codes):
    psi = featurize(layout, codes)
    # 0/1 products summed in float64 stay exact integers, so the result does
    # not depend on row order or chunking
    return psi.sum(axis=0), psi.T @ psi


def estimate_moments(layout: IndicatorLayout, lm: LabelMatrix, ridge: float = DEFAULT_RIDGE,
                     threads: int | None = None, check_degenerate: bool = True) -> MomentEstimates:
    n = lm.n
    if n < 2:
        raise ValueError("need at least two rows to estimate moments")
    bounds = [(a, min(a + CHUNK_ROWS, n)) for a in range(0, n, CHUNK_ROWS)]
    chunks = [lm.codes[a:b] for a, b in bounds]
    if threads is not None and threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(lambda c: _accumulate(layout, c), chunks))
    else:
        parts = [_accumulate(layout, c) for c in chunks]
    s1 = np.zeros(layout.d)
    s2 = np.zeros((layout.d, layout.d))
    for a, b in parts:
        s1 += a
        s2 += b
    mean = s1 / n
    sigma = s2 / n - np.outer(mean, mean)
    if check_degenerate:
        const = np.flatnonzero((s1 == 0) | (s1 == n))
        if len(const):
            names = [layout.entries[k].label() for k in const]
            raise DegenerateCovariance(f"constant indicator coordinates: {names}", const)
    return regularize(MomentEstimates(mean, sigma, 0.0, n, layout), ridge)


def regularize(me: MomentEstimates, ridge: float = DEFAULT_RIDGE) -> MomentEstimates:
    """Add ``ridge`` to the diagonal when the smallest eigenvalue falls below it."""
    if ridge <= 0:
        return me
    lam = np.linalg.eigvalsh(me.sigma_O)[0]
    if lam < ridge:
        me.sigma_O = me.sigma_O + ridge * np.eye(me.d)
        me.ridge = ridge
    return me

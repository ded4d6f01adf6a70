"""Class balance from three-way agreement tensors.

For three sources that are conditionally independent given ``y``,

    A[a, b, c] = sum_y P(y) B_i[a, y] B_j[b, y] B_k[c, y],

a nonnegative rank-``r`` CP decomposition whose components are unique up to
permutation and scaling (Kruskal).  Each component's total mass gives
``P(y)`` times the probability that none of the three abstains.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import (
    DecompositionFailed,
    InsufficientRows,
    NonPositiveBalance,
    NotConditionallyIndependent,
)
from .tasks import project

log = logging.getLogger(__name__)

MIN_ROWS = 100
POPULATION_TOL = 1e-3
SAMPLED_TOL = 5e-2
EXACT_FIT = 1e-13
MAX_TRIPLES = 10


@dataclass
class ClassBalance:
    p: np.ndarray
    source: str = "estimated"
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float)
        if np.any(self.p < 0) or abs(self.p.sum() - 1.0) > 1e-9:
            raise NonPositiveBalance(f"invalid class balance {self.p}")


@dataclass
class TripleTensor:
    indices: tuple
    tensor: np.ndarray
    n_used: float
    drop_rate: float
    include_abstain: bool
    population: bool = False


@dataclass
class CPResult:
    """Nonnegative CP factors with columns normalized to sum 1, and weights."""

    factors: tuple
    weights: np.ndarray
    error: float
    kruskal_ranks: tuple
    kruskal_ok: bool


def _check_independent(graph, triple):
    for a, b in itertools.combinations(triple, 2):
        if graph is not None and (min(a, b), max(a, b)) in graph.edges:
            raise NotConditionallyIndependent(f"sources {a + 1} and {b + 1} are dependent given y")


def estimate_triple_tensor(lm, triple, graph=None, include_abstain: bool = False) -> TripleTensor:
    """Empirical co-occurrence frequencies of three sources.

    Rows where any of the three abstains are dropped unless
    ``include_abstain``, in which case abstain is one more category.
    Entries are fractions of all rows, so the total is ``1 - drop_rate``.
    """
    triple = tuple(int(s) for s in triple)
    _check_independent(graph, triple)
    spaces = [lm.spaces[s] for s in triple]
    shape = tuple(sp.arity if include_abstain else sp.k for sp in spaces)
    codes = lm.codes[:, triple].astype(np.intp)
    keep = np.ones(len(codes), dtype=bool)
    if not include_abstain:
        for pos, sp in enumerate(spaces):
            if sp.abstain:
                keep &= codes[:, pos] != sp.abstain_code
    used = int(keep.sum())
    if used < MIN_ROWS:
        raise InsufficientRows(f"only {used} rows without abstentions among sources {[s + 1 for s in triple]}")
    flat = np.ravel_multi_index(tuple(codes[keep].T), shape)
    T = np.bincount(flat, minlength=int(np.prod(shape))).reshape(shape) / lm.n
    return TripleTensor(triple, T, used, 1.0 - used / lm.n, include_abstain)


def population_triple_tensor(gtm, triple, include_abstain: bool = False) -> TripleTensor:
    """Exact tensor from a ground-truth model's tables (independent triple)."""
    triple = tuple(int(s) for s in triple)
    _check_independent(gtm.source_graph, triple)
    B = [gtm.source_marginal(s) for s in triple]
    if not include_abstain:
        B = [b[:, :gtm.spaces[s].k] for b, s in zip(B, triple)]
    T = np.einsum("y,ya,yb,yc->abc", gtm.balance, *B)
    return TripleTensor(triple, T, np.inf, 1.0 - T.sum(), include_abstain, population=True)


def kruskal_rank(M: np.ndarray, tol: float = 1e-8) -> int:
    """Largest ``k`` such that every ``k`` columns of ``M`` are independent."""
    R = M.shape[1]
    scale = max(np.linalg.norm(M), 1e-300)
    best = 0
    for k in range(1, R + 1):
        for cols in itertools.combinations(range(R), k):
            s = np.linalg.svd(M[:, cols], compute_uv=False)
            if s[-1] <= tol * scale:
                return best
        best = k
    return best


def _unfold(X, mode):
    return np.moveaxis(X, mode, 0).reshape(X.shape[mode], -1)


def _khatri_rao(B, C):
    # column-wise Kronecker matching np.reshape's C order on the remaining axes
    return np.einsum("ir,jr->ijr", B, C).reshape(-1, B.shape[1])


def _als(X, R, rng, max_iters, tol):
    F = [rng.random((s, R)) + 0.1 for s in X.shape]
    unf = [_unfold(X, mode) for mode in range(3)]
    norm = np.linalg.norm(X)
    prev = np.inf
    err = np.inf
    for _ in range(max_iters):
        for mode in range(3):
            a, b = [F[k] for k in range(3) if k != mode]
            G = (a.T @ a) * (b.T @ b)
            rhs = unf[mode] @ _khatri_rao(a, b)
            F[mode] = np.maximum(np.linalg.lstsq(G, rhs.T, rcond=None)[0].T, 0.0)
        # the last update is a least-squares solve, so the residual is cheap
        err = np.linalg.norm(unf[2] - F[2] @ _khatri_rao(F[0], F[1]).T) / norm
        if err <= EXACT_FIT or abs(prev - err) <= tol * err:
            break
        prev = err
    return F, float(err)


def decompose_triple(tt: TripleTensor, r: int, restarts: int = 20, seed: int = 0,
                     max_iters: int = 3000, threshold: float | None = None) -> CPResult:
    """Rank-``r`` nonnegative CP of a triple tensor by alternating least squares.

    The best of ``restarts`` random initializations by relative
    reconstruction error is kept.
    """
    X = np.asarray(tt.tensor, dtype=float)
    if r > min(X.shape):
        raise DecompositionFailed(f"rank {r} exceeds the tensor dimensions {X.shape}")
    total = X.sum()
    if total <= 0:
        raise DecompositionFailed("empty tensor")
    X = X / total
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(restarts):
        F, err = _als(X, r, rng, max_iters, 1e-10)
        if best is None or err < best[1]:
            best = (F, err)
    F, err = best
    if threshold is None:
        threshold = POPULATION_TOL if tt.population else SAMPLED_TOL
    if err > threshold:
        raise DecompositionFailed(f"relative reconstruction error {err:.2e} above {threshold:.0e}")
    sums = [f.sum(axis=0) for f in F]
    w = np.prod(sums, axis=0) * total
    factors = tuple(f / np.where(s > 0, s, 1.0) for f, s in zip(F, sums))
    ks = tuple(kruskal_rank(f) for f in factors)
    ok = sum(ks) >= 2 * r + 2
    if not ok:
        log.warning("Kruskal condition fails: k-ranks %s < %d", ks, 2 * r + 2)
    return CPResult(factors, w, err, ks, ok)


def _class_codes(fs, space):
    # code of the label each class projects to, or -1 if the source never emits it
    out = []
    for v in fs:
        pv = project(v, space.coverage)
        out.append(space.labels.index(pv) if pv in space.labels else -1)
    return out


def align_components(cp: CPResult, fs, spaces) -> np.ndarray:
    """Component index for each class, matching components to the classes
    their sources vote for most (Hungarian assignment)."""
    r = fs.r
    R = len(cp.weights)
    score = np.zeros((R, r))
    for f, sp in zip(cp.factors, spaces):
        codes = _class_codes(fs, sp)
        for y, code in enumerate(codes):
            if code >= 0:
                score[:, y] += f[code]
    rows, cols = linear_sum_assignment(-score)
    perm = np.empty(r, dtype=int)
    perm[cols] = rows
    return perm


def recover_class_balance(cp: CPResult, fs=None, spaces=None) -> ClassBalance:
    """Normalized component masses, ordered by class."""
    w = np.asarray(cp.weights, dtype=float)
    if fs is not None:
        w = w[align_components(cp, fs, spaces)]
    if np.any(w <= 0):
        raise NonPositiveBalance(f"component masses {w} are not all positive")
    p = w / w.sum()
    return ClassBalance(p, "estimated", {"kruskal_ranks": list(cp.kruskal_ranks),
                                         "kruskal_ok": bool(cp.kruskal_ok), "cp_error": cp.error})


def candidate_triples(graph, spaces, r) -> list:
    """Pairwise non-adjacent triples, those with at least ``r`` labels first."""
    trip = [t for t in itertools.combinations(range(graph.m), 3)
            if all((min(a, b), max(a, b)) not in graph.edges for a, b in itertools.combinations(t, 2))]
    return sorted(trip, key=lambda t: (min(spaces[s].k for s in t) < r, t))


def estimate_class_balance(model, lm, triples=None, include_abstain: bool = False,
                           seed: int = 0, max_triples: int = MAX_TRIPLES) -> ClassBalance:
    """Class balance for a :class:`LabelModel` from its label matrix.

    Every pairwise independent triple (up to ``max_triples``, those whose
    sources label all classes first) gives an estimate; the estimates are
    averaged.  Pass ``triples`` to choose them explicitly.
    """
    from .statistics import LabelMatrix

    if triples is None:
        triples = candidate_triples(model.graph, model.spaces, model.r)[:max_triples]
        if not triples:
            raise NotConditionallyIndependent(
                "no three pairwise independent sources; supply the class balance"
            )
    lm = LabelMatrix(lm.codes, model.spaces)
    ps, used, drops, oks = [], [], [], []
    for triple in triples:
        tt = estimate_triple_tensor(lm, triple, model.graph, include_abstain)
        try:
            cp = decompose_triple(tt, model.r, seed=seed)
        except DecompositionFailed as exc:
            log.warning("triple %s skipped: %s", [s + 1 for s in triple], exc)
            continue
        cb = recover_class_balance(cp, model.fs, [model.spaces[s] for s in tt.indices])
        ps.append(cb.p)
        used.append([s + 1 for s in tt.indices])
        drops.append(tt.drop_rate)
        oks.append(cp.kruskal_ok)
    if not ps:
        raise DecompositionFailed("no triple admitted a rank-r decomposition")
    return ClassBalance(np.mean(ps, axis=0), "estimated",
                        {"triples": used, "drop_rates": drops, "kruskal_ok": oks,
                         "per_triple": [p.tolist() for p in ps]})


def majority_vote_balance(lm, fs) -> np.ndarray:
    """Class frequencies of plurality votes (ties split evenly), for comparison."""
    r = fs.r
    votes = np.zeros((lm.n, r))
    for i, sp in enumerate(lm.spaces):
        codes = _class_codes(fs, sp)
        for y, code in enumerate(codes):
            if code >= 0:
                votes[:, y] += lm.codes[:, i] == code
    top = votes.max(axis=1, keepdims=True)
    win = (votes == top) & (top > 0)
    win = win / np.maximum(win.sum(axis=1, keepdims=True), 1)
    freq = win.sum(axis=0)
    return freq / freq.sum()

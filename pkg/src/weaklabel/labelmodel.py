"""End-to-end label model: decomposition into binarized problems, fitting,
parameter expansion and serialization.

Each source's coverage induces a partition of the feasible set (two classes
share a block when the source's view of them coincides).  Sources sharing a
partition form a *level*.  A level with two blocks is fitted with one
rank-one solve over the full minimal layout; a level with more blocks is
fitted one-vs-rest, one solve per block, on the events "source emits the
label of this block".  Sources at finer levels take part in coarser solves
through coarsened events.
"""

from __future__ import annotations

import itertools
import logging
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import solver as _solver
from .errors import InputError, MissingParameter, UnsupportedStructure
from .graph import (
    SourceGraph,
    build_junction_tree,
    build_omega,
    check_identifiability,
    chordal_complete,
)
from .statistics import (
    DEFAULT_LAYOUT_CAP,
    DEFAULT_RIDGE,
    IndicatorLayout,
    LabelMatrix,
    build_output_spaces,
    estimate_moments,
    layout_from_events,
)
from .tasks import FeasibleSet, TaskGraph, enumerate_feasible_set, project

log = logging.getLogger(__name__)

SCHEMA = "weaklabel.model/1"


def class_partition(fs: FeasibleSet, space) -> tuple:
    """Blocks of class indices the source cannot tell apart, by first member."""
    blocks = {}
    for y, v in enumerate(fs):
        blocks.setdefault(project(v, space.coverage), []).append(y)
    return tuple(sorted(tuple(b) for b in blocks.values()))


def _refines(fine, coarse) -> bool:
    return all(any(set(b) <= set(c) for c in coarse) for b in fine)


@dataclass
class SubProblem:
    """One rank-one solve.

    ``block`` is the set of classes with ``y_B = 1``; ``kind`` is ``"full"``
    (two-block level, minimal layout, general tables) or ``"pivot"``
    (one-vs-rest with one event per source).
    """

    label: str
    level: int
    kind: str
    block: tuple
    layout: IndicatorLayout
    weights: np.ndarray
    source_weights: dict


@dataclass
class Level:
    partition: tuple
    sources: tuple
    cliques: tuple
    subproblems: list = field(default_factory=list)


@dataclass
class SubproblemFit:
    subproblem: SubProblem
    moments: object
    z: object
    estimate: object
    report: object
    diagnostics: object = None


@dataclass
class LabelModelParams:
    """Class-conditional tables ``T[y, l_1, ..., l_q]`` per maximal clique."""

    fs: FeasibleSet
    spaces: tuple
    cliques: tuple
    tables: dict

    @property
    def r(self) -> int:
        return self.fs.r

    def table(self, clique) -> np.ndarray:
        try:
            return self.tables[tuple(clique)]
        except KeyError:
            raise MissingParameter(f"no table for clique {clique}") from None

    def joint(self, clique, balance) -> np.ndarray:
        """``mu`` entries ``P(y, lambda_C)`` for one maximal clique."""
        T = self.table(clique)
        return T * np.asarray(balance).reshape((-1,) + (1,) * (T.ndim - 1))

    def source_marginal(self, i: int) -> np.ndarray:
        for c in self.cliques:
            if i in c:
                T = self.tables[c]
                ax = tuple(1 + k for k, s in enumerate(c) if s != i)
                return T.sum(axis=ax)
        raise MissingParameter(f"source {i} is in no clique")

    def flat(self) -> np.ndarray:
        return np.concatenate([self.tables[c].ravel() for c in self.cliques])

    def max_abs_diff(self, other: "LabelModelParams") -> float:
        return float(np.abs(self.flat() - other.flat()).max())

    def to_dict(self) -> dict:
        return {
            "cliques": [[s + 1 for s in c] for c in self.cliques],
            "tables": [self.tables[c].tolist() for c in self.cliques],
        }


@dataclass(frozen=True)
class FitConfig:
    solver: _solver.SolverConfig = _solver.SolverConfig()
    policy: _solver.SignPolicy = _solver.SignPolicy()
    ridge: float = DEFAULT_RIDGE
    layout_cap: int = DEFAULT_LAYOUT_CAP
    allow_unidentifiable: bool = False
    diagnostics: bool = False


class LabelModel:
    """Multi-task label model over a task graph and a source dependency graph.

    Parameters
    ----------
    task_graph : TaskGraph
    source_graph : SourceGraph
        Dependencies among sources given ``y``.  It is chordal-completed and,
        if needed, cluster-completed so every junction-tree separator is
        ``{y}``.
    config : FitConfig, optional
    force_singleton : bool
        If False, non-singleton separators raise instead of being completed.

    Examples
    --------
    >>> from weaklabel import LabelModel, SourceGraph, flat_task
    >>> lm = LabelModel(flat_task(2), SourceGraph(3))
    >>> [sp.label for sp in lm.subproblems]
    ['L0']
    """

    def __init__(self, task_graph: TaskGraph, source_graph: SourceGraph,
                 config: FitConfig | None = None, force_singleton: bool = True):
        self.task_graph = task_graph
        self.config = config or FitConfig()
        self.fs = enumerate_feasible_set(task_graph)
        if self.fs.r < 2:
            raise InputError("the feasible set has a single label vector")
        self.input_graph = source_graph
        chordal = chordal_complete(source_graph)
        self.tree, self.cliques, self.graph = build_junction_tree(chordal, force_singleton)
        self.spaces = build_output_spaces(self.fs, self.graph)
        self.levels = self._plan()
        self.params: LabelModelParams | None = None
        self.balance: np.ndarray | None = None
        self.fits: list = []
        self.timings: dict = {}

    @property
    def r(self) -> int:
        return self.fs.r

    @property
    def subproblems(self) -> list:
        return [sp for lv in self.levels for sp in lv.subproblems]

    # ------------------------------------------------------------------ plan

    def _plan(self) -> list:
        parts = [class_partition(self.fs, sp) for sp in self.spaces]
        distinct = sorted(set(parts), key=lambda p: (len(p), p))
        levels = []
        for li, part in enumerate(distinct):
            exact = tuple(i for i, p in enumerate(parts) if p == part)
            cliques = tuple(c for c in self.cliques.maximal if all(parts[s] == part for s in c))
            levels.append(Level(part, exact, cliques))
        for c in self.cliques.maximal:
            if len({parts[s] for s in c}) > 1:
                raise UnsupportedStructure(
                    f"clique {[s + 1 for s in c]} mixes sources of different granularity"
                )
        for li, lv in enumerate(levels):
            members = [i for i, p in enumerate(parts) if _refines(p, lv.partition)]
            coarse = {i: self._coarse_events(i, lv.partition) for i in members}
            if len(lv.partition) == 2:
                lv.subproblems.append(self._full_problem(li, lv, coarse))
            else:
                self._check_pattern(lv)
                for q, blk in enumerate(lv.partition):
                    events = {i: [ev[q]] for i, ev in coarse.items() if ev[q]}
                    layout = layout_from_events(self.cliques.observable, events, self.config.layout_cap)
                    w = np.array([1.0 if len(e.clique) == 1 else 0.0 for e in layout.entries])
                    sw = {i: np.where([e.clique == (i,) for e in layout.entries], w, 0.0) for i in events}
                    lv.subproblems.append(SubProblem(f"L{li}.{q}", li, "pivot", blk, layout, w, sw))
        return levels

    def _coarse_events(self, i, partition) -> list:
        sp = self.spaces[i]
        out = []
        for blk in partition:
            codes = [c for c, v in enumerate(sp.labels)
                     if any(project(self.fs[y], sp.coverage) == v for y in blk)]
            out.append(frozenset(codes))
        return out

    def _full_problem(self, li, lv, coarse) -> SubProblem:
        events, sign = {}, {}
        for i, ev in coarse.items():
            sp = self.spaces[i]
            vals = [e for e in ev if e]
            if i in lv.sources:
                # native codes: every label plus abstain, minus the dropped one
                vals = [frozenset({c}) for c in range(sp.arity) if c != sp.dropped]
            elif sp.abstain:
                pass
            else:
                vals = vals[:-1]
            events[i] = vals
            for e in vals:
                sign[(i, e)] = 1.0 if e <= ev[0] else (-1.0 if e <= ev[1] else 0.0)
        layout = layout_from_events(self.cliques.observable, events, self.config.layout_cap)
        w = np.array([sign[(e.clique[0], e.events[0])] if len(e.clique) == 1 else 0.0
                      for e in layout.entries])
        sw = {i: np.where([e.clique == (i,) for e in layout.entries], w, 0.0) for i in events}
        return SubProblem(f"L{li}", li, "full", lv.partition[0], layout, w, sw)

    def _check_pattern(self, lv):
        for c in lv.cliques:
            if len(c) > 2:
                raise UnsupportedStructure(
                    f"clique {[s + 1 for s in c]}: cliques above size 2 need a binary view of y"
                )
            if len(c) == 2:
                for s in c:
                    sp = self.spaces[s]
                    if sp.abstain or sp.k != len(lv.partition):
                        raise UnsupportedStructure(
                            f"source {s + 1} in a dependent pair must label every class without abstaining"
                        )

    # ---------------------------------------------------------------- checks

    def check(self) -> list:
        """Identifiability report per binarized problem."""
        out = []
        for sp in self.subproblems:
            om = build_omega(self.cliques, sp.layout)
            out.append(check_identifiability(om, sp.label))
        return out

    # --------------------------------------------------------------- fitting

    def compute_moments(self, L: LabelMatrix, threads: int | None = None) -> dict:
        if tuple(L.spaces) != tuple(self.spaces):
            L = LabelMatrix(L.codes, self.spaces)
        return {sp.label: estimate_moments(sp.layout, L, self.config.ridge, threads)
                for sp in self.subproblems}

    def fit(self, L: LabelMatrix, class_balance=None, threads: int | None = None) -> "LabelModel":
        """Estimate source parameters from a label matrix.

        ``class_balance`` may be given (length ``r``); otherwise it is
        estimated from a conditionally independent triple of sources.
        """
        t0 = time.perf_counter()
        moments = self.compute_moments(L, threads)
        t1 = time.perf_counter()
        if class_balance is None:
            from .balance import estimate_class_balance

            class_balance = estimate_class_balance(self, L).p
        self.fit_moments(moments, class_balance)
        self.timings = {"moments_s": t1 - t0, "solver_s": self.timings["solver_s"]}
        return self

    def fit_moments(self, moments, class_balance) -> "LabelModel":
        """Fit from precomputed moments.

        ``moments`` maps subproblem labels to :class:`MomentEstimates`, or is
        a callable ``layout -> MomentEstimates`` (population oracles).
        """
        t0 = time.perf_counter()
        p = np.asarray(class_balance, dtype=float)
        if p.shape != (self.r,) or np.any(p < 0) or abs(p.sum() - 1) > 1e-9:
            raise InputError(f"class balance must be a length-{self.r} probability vector")
        self.balance = p
        cfg = self.config
        fits = []
        for sp in self.subproblems:
            me = moments(sp.layout) if callable(moments) else moments[sp.label]
            om = build_omega(self.cliques, sp.layout)
            report = check_identifiability(om, sp.label)
            if not report.solvable:
                if not cfg.allow_unidentifiable:
                    report.raise_if_unsolvable()
            inv = _solver.invert_covariance(me)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                z = _solver.solve_z(inv, om, cfg.solver, report)
            z = _solver.resolve_signs(z, om, me.sigma_O, sp.weights, cfg.policy, sp.source_weights)
            pa = float(p[list(sp.block)].sum())
            sigma_S = pa * (1.0 - pa)
            if sigma_S <= 0:
                raise InputError(f"{sp.label}: block probability {pa} leaves y_B constant")
            est = _solver.recover_mu(z, me, sigma_S, pa, cfg.solver.clip)
            diag = None
            if cfg.diagnostics:
                diag = _solver.compute_bound_diagnostics(me, om, sigma_S, z, self.r)
            fits.append(SubproblemFit(sp, me, z, est, report, diag))
        self.fits = fits
        self.params = self._expand(fits)
        self.timings = {"solver_s": time.perf_counter() - t0}
        return self

    # ------------------------------------------------------------- expansion

    def _expand(self, fits) -> LabelModelParams:
        by_label = {f.subproblem.label: f for f in fits}
        tables = {}
        clip, tol = self.config.solver.clip, self.config.solver.misfit_tolerance
        for li, lv in enumerate(self.levels):
            if len(lv.partition) == 2:
                f = by_label[f"L{li}"]
                for c in lv.cliques:
                    tables[c] = self._expand_full(c, lv, f)
            else:
                pf = [by_label[f"L{li}.{q}"] for q in range(len(lv.partition))]
                for c in lv.cliques:
                    tables[c] = self._expand_pattern(c, lv, pf)
        for c in tables:
            tables[c] = _solver.clip_table(tables[c], clip, tol, f"clique {[s + 1 for s in c]}")
        return LabelModelParams(self.fs, self.spaces, self.cliques.maximal, tables)

    def _expand_full(self, c, lv, f) -> np.ndarray:
        sp = self.spaces
        idx = f.subproblem.layout.index()
        est = f.estimate
        shape = tuple(sp[s].arity for s in c)
        dropped = tuple(sp[s].dropped for s in c)
        HA = np.empty(shape)
        H = np.empty(shape)
        for x in itertools.product(*(range(a) for a in shape)):
            D = tuple(k for k in range(len(c)) if x[k] != dropped[k])
            if not D:
                HA[x], H[x] = est.p_block, 1.0
                continue
            key = (tuple(c[k] for k in D), tuple(frozenset({x[k]}) for k in D))
            j = idx[key]
            HA[x], H[x] = est.mu_prime[j], est.mean[j]
        JA = _solver.mobius_joint(HA, dropped)
        J = _solver.mobius_joint(H, dropped)
        pa = est.p_block
        T = np.empty((self.r,) + shape)
        inside, outside = JA / pa, (J - JA) / (1.0 - pa)
        A = set(f.subproblem.block)
        for y in range(self.r):
            T[y] = inside if y in A else outside
        return T

    def _block_of(self, lv):
        out = np.empty(self.r, dtype=int)
        for q, blk in enumerate(lv.partition):
            out[list(blk)] = q
        return out

    def _label_block(self, s, lv):
        sp = self.spaces[s]
        ev = self._coarse_events(s, lv.partition)
        out = np.empty(sp.k, dtype=int)
        for q, e in enumerate(ev):
            for code in e:
                out[code] = q
        return out

    def _expand_pattern(self, c, lv, pf) -> np.ndarray:
        yb = self._block_of(lv)
        if len(c) == 1:
            s = c[0]
            sp = self.spaces[s]
            lb = self._label_block(s, lv)
            alpha, beta = [], []
            for q, f in enumerate(pf):
                codes = frozenset(int(x) for x in np.flatnonzero(lb == q))
                j = f.subproblem.layout.index().get(((s,), (codes,))) if codes else None
                if j is None:
                    alpha.append(0.0)
                    beta.append(0.0)
                    continue
                e = f.estimate
                alpha.append(e.mu_prime[j] / e.p_block)
                beta.append((e.mean[j] - e.mu_prime[j]) / (1.0 - e.p_block))
            T = np.zeros((self.r, sp.arity))
            for y in range(self.r):
                for code in range(sp.k):
                    q = lb[code]
                    T[y, code] = alpha[q] if yb[y] == q else beta[q]
                if sp.abstain:
                    T[y, sp.k] = 1.0 - T[y, :sp.k].sum()
                else:
                    T[y] /= T[y].sum()
            return T
        i, j = c
        lbi, lbj = self._label_block(i, lv), self._label_block(j, lv)
        k = len(lv.partition)
        # per block q: accuracies of i, j and both on y in q, and the rate of
        # both emitting q's label when y is elsewhere
        acc = np.zeros((k, 3))
        same = np.zeros(k)
        for q, f in enumerate(pf):
            ci = frozenset(int(x) for x in np.flatnonzero(lbi == q))
            cj = frozenset(int(x) for x in np.flatnonzero(lbj == q))
            idx = f.subproblem.layout.index()
            e = f.estimate
            for col, key in enumerate((((i,), (ci,)), ((j,), (cj,)), ((i, j), (ci, cj)))):
                acc[q, col] = e.mu_prime[idx[key]] / e.p_block
            kb = idx[((i, j), (ci, cj))]
            same[q] = (e.mean[kb] - e.mu_prime[kb]) / (1.0 - e.p_block)
        P = _solver.expand_pattern(acc[:, 0], acc[:, 1], acc[:, 2], k, same)
        T = np.empty((self.r, k, k))
        for y in range(self.r):
            # reorder block axes into each source's label codes
            T[y] = P[yb[y]][np.ix_(lbi, lbj)]
        return T

    # ------------------------------------------------------------ inference

    def predict_proba(self, L: LabelMatrix, threads: int | None = None) -> np.ndarray:
        from .inference import predict_proba

        self._require_fit()
        return predict_proba(self.params, self.balance, self.tree, L)

    def predict(self, L: LabelMatrix, threads: int | None = None):
        from .inference import predict

        self._require_fit()
        return predict(self.params, self.balance, self.tree, L)

    def _require_fit(self):
        if self.params is None:
            raise MissingParameter("model is not fitted")

    def fit_report(self) -> dict:
        out = []
        for f in self.fits:
            d = {
                "subproblem": f.subproblem.label,
                "block": [int(y) + 1 for y in f.subproblem.block],
                "d_O": int(f.subproblem.layout.d),
                "residual": float(f.z.objective_residual),
                "converged": bool(f.z.converged),
                "restarts_used": int(f.z.restarts_used),
                "c": float(f.estimate.c),
                "ridge": float(f.moments.ridge),
            }
            if f.diagnostics is not None:
                d["bound"] = f.diagnostics.to_dict()
            out.append(d)
        return {"subproblems": out}

"""Ground-truth generative models, exact population oracles and experiments.

A :class:`GroundTruthModel` stores, for each maximal clique of a chordal
source graph with singleton separators, the table
``T[y, l_1, ..., l_q] = P(lambda_C = l | y)``.  Sampling draws ``y`` from the
class balance and then each clique independently given ``y``.
"""

from __future__ import annotations

import itertools
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import SupportTooLarge
from .graph import SourceGraph, build_junction_tree, is_chordal
from .statistics import LabelMatrix, MomentEstimates, build_output_spaces, featurize
from .tasks import TaskGraph, enumerate_feasible_set, flat_task

SUPPORT_CAP = 10_000_000


@dataclass
class GroundTruthModel:
    task_graph: TaskGraph
    balance: np.ndarray
    source_graph: SourceGraph
    tables: dict
    seed: int = 0
    name: str = ""

    def __post_init__(self):
        self.fs = enumerate_feasible_set(self.task_graph)
        self.balance = np.asarray(self.balance, dtype=float)
        if not is_chordal(self.source_graph):
            raise ValueError("ground-truth source graph must be chordal")
        self.tree, self.cliques, _ = build_junction_tree(self.source_graph, force_singleton=False)
        self.spaces = build_output_spaces(self.fs, self.source_graph)
        self.tables = {tuple(c): np.asarray(t, dtype=float) for c, t in self.tables.items()}
        if set(self.tables) != set(self.cliques.maximal):
            raise ValueError(f"tables for {sorted(self.tables)} but cliques are {self.cliques.maximal}")
        r = self.fs.r
        for c, T in self.tables.items():
            shape = (r,) + tuple(self.spaces[s].arity for s in c)
            if T.shape != shape:
                raise ValueError(f"table for {c} has shape {T.shape}, expected {shape}")
            if np.any(T < 0) or not np.allclose(T.reshape(r, -1).sum(1), 1.0, atol=1e-12):
                raise ValueError(f"table for {c} is not a conditional distribution")

    @property
    def r(self) -> int:
        return self.fs.r

    @property
    def m(self) -> int:
        return self.source_graph.m

    # ------------------------------------------------------------- sampling

    def sample(self, n: int, seed: int | None = None):
        """``(LabelMatrix, y)`` with ``n`` i.i.d. rows; deterministic in ``seed``."""
        rng = np.random.default_rng(self.seed if seed is None else seed)
        y = rng.choice(self.r, size=n, p=self.balance)
        codes = np.zeros((n, self.m), dtype=np.int16)
        for c in self.cliques.maximal:
            T = self.tables[c]
            shape = T.shape[1:]
            cdf = np.cumsum(T.reshape(self.r, -1), axis=1)
            cdf[:, -1] = 1.0
            u = rng.random(n)
            flat = (cdf[y] < u[:, None]).sum(axis=1)
            for s, col in zip(c, np.unravel_index(flat, shape)):
                codes[:, s] = col
        return LabelMatrix(codes, self.spaces), y

    # ------------------------------------------------------------- oracles

    def support_size(self) -> int:
        return math.prod(sp.arity for sp in self.spaces) * self.r

    def enumerate_joint(self):
        """All source outputs ``(N, m)`` and ``P(lambda, y)`` as ``(N, r)``."""
        if self.support_size() > SUPPORT_CAP:
            raise SupportTooLarge(f"joint support {self.support_size()} exceeds {SUPPORT_CAP}")
        arities = [sp.arity for sp in self.spaces]
        combos = np.array(list(itertools.product(*(range(a) for a in arities))), dtype=np.intp)
        P = np.tile(self.balance, (len(combos), 1))
        for c, T in self.tables.items():
            P *= T[(slice(None),) + tuple(combos[:, s] for s in c)].T
        return combos, P

    def population_moments(self, layout, block=(0,)) -> "PopulationMoments":
        """Exact moments of ``(psi(O), 1{y in block})`` by joint enumeration."""
        combos, P = self.enumerate_joint()
        psi = featurize(layout, combos)
        w = P.sum(axis=1)
        wA = P[:, list(block)].sum(axis=1)
        pA = float(wA.sum())
        mean = psi.T @ w
        sigma_O = (psi * w[:, None]).T @ psi - np.outer(mean, mean)
        sigma_OS = psi.T @ wA - mean * pA
        sigma_S = pA * (1 - pA)
        d = layout.d
        full = np.empty((d + 1, d + 1))
        full[:d, :d] = sigma_O
        full[:d, d] = full[d, :d] = sigma_OS
        full[d, d] = sigma_S
        K = np.linalg.inv(full)
        inv_O = np.linalg.inv(sigma_O)
        c = 1.0 / (sigma_S - sigma_OS @ inv_O @ sigma_OS)
        z = np.sqrt(c) * inv_O @ sigma_OS
        return PopulationMoments(mean, sigma_O, sigma_OS, sigma_S, K, c, z, psi.T @ wA, pA)

    def expected_moments(self, layout) -> MomentEstimates:
        """Exact mean and covariance of ``psi(O)`` from the clique factorization."""
        r = self.r
        owner = [self._owner(e.clique) for e in layout.entries]
        cond = np.array([[self._cond_prob(e.clique, e.events, y) for e in layout.entries] for y in range(r)])
        mean = self.balance @ cond
        second = cond.T @ (self.balance[:, None] * cond)
        for a, b in itertools.combinations_with_replacement(range(layout.d), 2):
            if owner[a] == owner[b]:
                ea, eb = layout.entries[a], layout.entries[b]
                ev = {}
                for s, e in list(zip(ea.clique, ea.events)) + list(zip(eb.clique, eb.events)):
                    ev[s] = ev[s] & e if s in ev else e
                clique = tuple(sorted(ev))
                v = sum(self.balance[y] * self._cond_prob(clique, tuple(ev[s] for s in clique), y)
                        for y in range(r))
                second[a, b] = second[b, a] = v
        sigma = second - np.outer(mean, mean)
        return MomentEstimates(mean, 0.5 * (sigma + sigma.T), 0.0, math.inf, layout)

    def _owner(self, clique):
        return self.cliques.owner(clique)

    def _cond_prob(self, clique, events, y) -> float:
        k = self._owner(clique)
        c = self.cliques.maximal[k]
        T = self.tables[c][y]
        idx = []
        for pos, s in enumerate(c):
            if s in clique:
                idx.append(sorted(events[clique.index(s)]))
            else:
                idx.append(list(range(T.shape[pos])))
        return float(T[np.ix_(*idx)].sum())

    def params(self):
        """Ground-truth :class:`LabelModelParams`."""
        from .labelmodel import LabelModelParams

        return LabelModelParams(self.fs, self.spaces, self.cliques.maximal, dict(self.tables))

    def source_marginal(self, i: int) -> np.ndarray:
        return self.params().source_marginal(i)


@dataclass
class PopulationMoments:
    mean: np.ndarray
    sigma_O: np.ndarray
    sigma_OS: np.ndarray
    sigma_S: float
    K: np.ndarray
    c: float
    z: np.ndarray
    mu_prime: np.ndarray
    p_block: float

    def as_estimates(self, layout=None) -> MomentEstimates:
        return MomentEstimates(self.mean, self.sigma_O, 0.0, math.inf, layout)


def brute_force_posterior(gtm: GroundTruthModel, row) -> np.ndarray:
    """Exact ``P(y | lambda = row)`` by conditioning the enumerated joint."""
    combos, P = gtm.enumerate_joint()
    row = np.asarray(row, dtype=np.intp)
    hit = np.flatnonzero((combos == row).all(axis=1))
    if len(hit) != 1:
        raise ValueError(f"row {row.tolist()} is outside the support")
    p = P[hit[0]]
    return p / p.sum()


def params_error(est, truth) -> float:
    """Euclidean distance between flattened conditional tables."""
    return float(np.sqrt(sum(((est.tables[c] - truth.tables[c]) ** 2).sum() for c in truth.tables)))


def params_max_error(est, truth) -> float:
    return float(max(np.abs(est.tables[c] - truth.tables[c]).max() for c in truth.tables))


# ---------------------------------------------------------------- the zoo


def _binary_table(acc, abstain=0.0):
    """``T[y, l]`` for one binary source: codes 0, 1 and optional abstain 2."""
    a = np.atleast_1d(abstain) * np.ones(2)
    acc = np.atleast_1d(acc) * np.ones(2)
    T = np.zeros((2, 3 if np.any(a > 0) else 2))
    for y in range(2):
        T[y, y] = (1 - a[y]) * acc[y]
        T[y, 1 - y] = (1 - a[y]) * (1 - acc[y])
        if T.shape[1] == 3:
            T[y, 2] = a[y]
    return T


def _pair_table(Ti, Tj, rho):
    # with probability rho source j copies source i (falls back to its own
    # draw when i emits a value j cannot)
    r, ki = Ti.shape
    kj = Tj.shape[1]
    T = np.zeros((r, ki, kj))
    for y in range(r):
        for a in range(ki):
            T[y, a] = Ti[y, a] * (1 - rho) * Tj[y]
            if a < kj:
                T[y, a, a] += Ti[y, a] * rho
            else:
                T[y, a] += Ti[y, a] * rho * Tj[y]
    return T


def independent_model(accuracies, balance=(0.6, 0.4), abstain=None, seed=0, name="") -> GroundTruthModel:
    """Binary task, conditionally independent sources.

    ``accuracies[i]`` may be a scalar or a per-class pair; ``abstain[i]`` the
    per-class abstain rate (a source abstains iff its rate is nonzero).
    """
    m = len(accuracies)
    ab = [0.0] * m if abstain is None else list(abstain)
    tables = {(i,): _binary_table(accuracies[i], ab[i]) for i in range(m)}
    has = [np.any(np.atleast_1d(a) > 0) for a in ab]
    sg = SourceGraph(m, abstain=tuple(has))
    return GroundTruthModel(flat_task(2), balance, sg, tables, seed, name or f"independent-{m}")


def correlated_model(accuracies, pairs, rho=0.8, balance=(0.6, 0.4), abstain=None, seed=0,
                     name="") -> GroundTruthModel:
    """Binary model with disjoint dependent pairs mixed by ``rho``."""
    m = len(accuracies)
    ab = [0.0] * m if abstain is None else list(abstain)
    has = [bool(np.any(np.atleast_1d(a) > 0)) for a in ab]
    single = {i: _binary_table(accuracies[i], ab[i]) for i in range(m)}
    tables = {}
    paired = set()
    for i, j in pairs:
        i, j = min(i, j), max(i, j)
        tables[(i, j)] = _pair_table(single[i], single[j], rho)
        paired |= {i, j}
    for i in range(m):
        if i not in paired:
            tables[(i,)] = single[i]
    sg = SourceGraph(m, edges=frozenset(tuple(sorted(p)) for p in pairs), abstain=tuple(has))
    return GroundTruthModel(flat_task(2), balance, sg, tables, seed, name or f"correlated-{m}-{len(pairs)}")


def default_benchmark_model(m: int = 10, seed: int = 0) -> GroundTruthModel:
    """Binary, ``m`` sources with accuracies evenly spaced over [0.55, 0.85]."""
    return independent_model(list(np.linspace(0.55, 0.85, m)), (0.6, 0.4), seed=seed, name="default")


def dependency_model(m: int = 4, rho: float = 0.5, seed: int = 0) -> GroundTruthModel:
    """Sources 1 and 2 dependent given ``y``, the rest independent; all may abstain."""
    accs = [(0.8, 0.75), (0.7, 0.65), (0.75, 0.7), (0.65, 0.8)] + [0.7] * (m - 4)
    ab = [(0.1, 0.2), (0.15, 0.1), (0.2, 0.2), (0.1, 0.15)] + [0.1] * (m - 4)
    return correlated_model(accs[:m], [(0, 1)], rho, (0.6, 0.4), ab[:m], seed, "dependent-pair")


def symmetric_multiclass_model(r, accuracies, balance=None, seed=0) -> GroundTruthModel:
    """Single ``r``-class task; errors uniform over the wrong classes."""
    from .solver import expand_symmetric

    balance = np.full(r, 1.0 / r) if balance is None else balance
    tables = {(i,): expand_symmetric(a, r) for i, a in enumerate(accuracies)}
    sg = SourceGraph(len(accuracies))
    return GroundTruthModel(flat_task(r), balance, sg, tables, seed, f"multiclass-{r}")


def multiclass_pair_model(r: int = 3, rho: float = 0.6, seed: int = 0) -> GroundTruthModel:
    """``r`` classes, five symmetric sources; source 2 copies source 1 with prob ``rho``."""
    from .solver import expand_symmetric

    accs = [0.7, 0.6, 0.65, 0.55, 0.75]
    single = [expand_symmetric(a, r) for a in accs]
    tables = {(0, 1): _pair_table(single[0], single[1], rho)}
    tables.update({(i,): single[i] for i in range(2, 5)})
    balance = np.linspace(1.0, 2.0, r)
    sg = SourceGraph(5, edges={(0, 1)})
    return GroundTruthModel(flat_task(r), balance / balance.sum(), sg, tables, seed, f"multiclass-pair-{r}")


def hierarchical_task() -> TaskGraph:
    """Two tasks; the second applies only when the first takes value 1.

    Feasible set ``[(1, 1), (1, 2), (2, N/A)]``.
    """
    return TaskGraph((2, 2), edges=((0, 1),), na_rules={1: {2}}, names=("coarse", "fine"))


def _column_uniform(alpha, lift, abstain):
    # T[y, l] = alpha[l] if y == l else alpha[l] - lift; abstain takes the rest
    k = len(alpha)
    T = np.zeros((k, k + int(abstain)))
    for y in range(k):
        for l in range(k):
            T[y, l] = alpha[l] if y == l else alpha[l] - lift
        if abstain:
            T[y, k] = 1.0 - T[y, :k].sum()
    if not abstain:
        T /= T.sum(axis=1, keepdims=True)
    return T


def hierarchical_model(seed: int = 0) -> GroundTruthModel:
    """Three classes over a two-task hierarchy.

    Four sources label both tasks with column-uniform errors of constant
    lift; one source labels only the coarse task.
    """
    g = hierarchical_task()
    fine = [
        ([0.50, 0.45, 0.40], 0.30),
        ([0.45, 0.50, 0.35], 0.25),
        ([0.40, 0.40, 0.45], 0.20),
        ([0.35, 0.45, 0.40], 0.22),
    ]
    tables = {(i,): _column_uniform(np.array(a), lift, True) for i, (a, lift) in enumerate(fine)}
    # coarse source: labels (1, 0), (2, 0) or abstains
    coarse = np.array([
        [0.70, 0.10, 0.20],
        [0.70, 0.10, 0.20],
        [0.15, 0.65, 0.20],
    ])
    tables[(4,)] = coarse
    cov = ((0, 1),) * 4 + ((0,),)
    sg = SourceGraph(5, coverage=cov, abstain=True)
    return GroundTruthModel(g, (0.3, 0.25, 0.45), sg, tables, seed, "hierarchical")


def zoo() -> list:
    """Models used for population-exactness and inference-oracle checks."""
    return [
        independent_model([0.8, 0.7, 0.6], name="independent-3"),
        independent_model([0.8, 0.75, 0.7, 0.65, 0.6], abstain=[0.1, 0.2, (0.1, 0.3), 0.0, 0.15],
                          name="independent-5"),
        independent_model(list(np.linspace(0.6, 0.85, 8)), name="independent-8"),
        dependency_model(),
        hierarchical_model(),
    ]


# ------------------------------------------------------------ experiments


@dataclass
class ExperimentResult:
    rows: list = field(default_factory=list)
    slope: float = float("nan")
    summary: dict = field(default_factory=dict)

    def mean_error(self) -> dict:
        out = {}
        for row in self.rows:
            out.setdefault(row["n"], []).append(row["err"])
        return {n: float(np.mean(v)) for n, v in sorted(out.items())}


def trial_seed(master: int, *keys) -> int:
    return int(np.random.SeedSequence([master, *[int(k) for k in keys]]).generate_state(1)[0])


def loglog_slope(ns, errs) -> float:
    slope, _ = np.polyfit(np.log(ns), np.log(errs), 1)
    return float(slope)


def _model_for(gtm, sg=None, cfg=None):
    from .labelmodel import LabelModel

    return LabelModel(gtm.task_graph, sg or gtm.source_graph, cfg)


def run_scaling_experiment(gtm: GroundTruthModel, n_grid=(1000, 4000, 16000, 64000), trials: int = 20,
                           cfg=None, seed: int = 0) -> ExperimentResult:
    """Error of the fitted tables versus sample size.

    The true class balance is supplied to each fit so the error reflects
    source-parameter estimation alone.
    """
    truth = gtm.params()
    res = ExperimentResult()
    model = _model_for(gtm, cfg=cfg)
    for n in n_grid:
        for t in range(trials):
            L, _ = gtm.sample(int(n), trial_seed(seed, n, t))
            t0 = time.perf_counter()
            mom = model.compute_moments(L)
            t1 = time.perf_counter()
            model.fit_moments(mom, gtm.balance)
            t2 = time.perf_counter()
            res.rows.append({"n": int(n), "trial": t, "err": params_error(model.params, truth),
                             "t_moments_ms": 1e3 * (t1 - t0), "t_solver_ms": 1e3 * (t2 - t1)})
    means = res.mean_error()
    res.slope = loglog_slope(list(means), list(means.values()))
    res.summary = {"slope": res.slope, "mean_error": {str(k): v for k, v in means.items()},
                   "trials": trials, "model": gtm.name}
    return res


def marginal_error(params, gtm) -> float:
    return float(np.sqrt(sum(((params.source_marginal(i) - gtm.source_marginal(i)) ** 2).sum()
                             for i in range(gtm.m))))


def run_density_experiment(accuracies=None, pair_counts=None, trials: int = 20, n: int = 100_000,
                           rho: float = 0.8, balance=(0.6, 0.4), seed: int = 0, cfg=None) -> ExperimentResult:
    """Structure-aware versus forced-independent fits as dependencies grow.

    Level ``k`` correlates the disjoint pairs ``(0, 1), ..., (2k-2, 2k-1)``.
    Errors compare per-source conditional tables, which both fits estimate.
    """
    from .labelmodel import FitConfig

    accuracies = list(np.linspace(0.55, 0.85, 10)) if accuracies is None else list(accuracies)
    m = len(accuracies)
    pair_counts = range(m // 2 + 1) if pair_counts is None else pair_counts
    res = ExperimentResult()
    for k in pair_counts:
        pairs = [(2 * i, 2 * i + 1) for i in range(k)]
        gtm = correlated_model(accuracies, pairs, rho, balance, seed=seed)
        aware = _model_for(gtm, cfg=cfg)
        # the misspecified baseline is clipped into range rather than rejected
        base = cfg or FitConfig()
        lenient = replace(base, solver=replace(base.solver, misfit_tolerance=np.inf))
        naive = _model_for(gtm, gtm.source_graph.independent(), lenient)
        for t in range(trials):
            L, _ = gtm.sample(n, trial_seed(seed, k, t))
            row = {"pairs": k, "trial": t}
            for tag, model in (("aware", aware), ("independent", naive)):
                model.fit(L, gtm.balance)
                row[f"err_{tag}"] = marginal_error(model.params, gtm)
            res.rows.append(row)
    return res


def density_summary(res: ExperimentResult) -> dict:
    """Per dependency level: mean errors, mean gap and a paired one-sided t-test."""
    from scipy import stats

    out = {}
    for k in sorted({r["pairs"] for r in res.rows}):
        a = np.array([r["err_aware"] for r in res.rows if r["pairs"] == k])
        b = np.array([r["err_independent"] for r in res.rows if r["pairs"] == k])
        gap = b - a
        if np.allclose(gap, 0):
            p = 1.0
        else:
            p = float(stats.ttest_rel(a, b, alternative="less").pvalue)
        out[str(k)] = {"err_aware": float(a.mean()), "err_independent": float(b.mean()),
                       "mean_gap": float(gap.mean()), "p_value": p, "trials": int(len(a))}
    return {"levels": out}

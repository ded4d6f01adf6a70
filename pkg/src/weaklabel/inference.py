"""Posterior ``P(y | lambda)`` through the junction-tree factorization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import MissingParameter

TIE_ATOL = 1e-12


@dataclass
class PosteriorRow:
    probs: np.ndarray
    argmax: int
    tie: bool


def _log(x):
    with np.errstate(divide="ignore"):
        return np.log(x)


def joint_score(params, balance, jt, codes) -> np.ndarray:
    """Log scores ``log P(y, lambda)`` for every row of ``codes`` (``n x m``).

    The clique marginals ``mu_C = P(y, lambda_C)`` are multiplied and the
    separator marginals ``P(y)`` divided out, once per junction-tree edge.
    """
    codes = np.atleast_2d(np.asarray(codes, dtype=np.intp))
    p = np.asarray(balance, dtype=float)
    logp = _log(p)
    n = codes.shape[0]
    score = np.zeros((n, len(p)))
    for c in jt.nodes:
        if c not in params.tables:
            raise MissingParameter(f"no table for clique {[s + 1 for s in c]}")
        T = params.tables[c]
        for k, s in enumerate(c):
            if codes.size and codes[:, s].max() >= T.shape[1 + k]:
                raise MissingParameter(f"source {s + 1} emits a code outside its table")
        # T[y, l_C] for every row: shape (r, n) -> (n, r)
        vals = T[(slice(None),) + tuple(codes[:, s] for s in c)].T
        score += logp + _log(vals)
    # separators are all {y}: one P(y) per tree edge
    n_sep = len(jt.edges)
    finite = np.isfinite(logp)
    score[:, finite] -= n_sep * logp[finite]
    score[:, ~finite] = -np.inf
    return score


def predict_proba(params, balance, jt, lm) -> np.ndarray:
    """``n x r`` posterior matrix, columns in feasible-set order."""
    codes = getattr(lm, "codes", lm)
    s = joint_score(params, balance, jt, codes)
    return np.exp(s - logsumexp(s, axis=1, keepdims=True))


def predict(params, balance, jt, lm) -> list:
    """Hard labels per row as :class:`PosteriorRow` (lowest index wins ties)."""
    P = predict_proba(params, balance, jt, lm)
    return rows_from_proba(P)


def rows_from_proba(P: np.ndarray) -> list:
    arg = np.argmax(P, axis=1)
    top = P[np.arange(len(P)), arg]
    ties = (np.abs(P - top[:, None]) <= TIE_ATOL).sum(axis=1) > 1
    return [PosteriorRow(P[i], int(arg[i]), bool(ties[i])) for i in range(len(P))]

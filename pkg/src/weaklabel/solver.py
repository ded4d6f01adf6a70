"""Rank-one matrix completion for source accuracies.

One call of the pipeline handles one binarized problem: a latent indicator
``y_B = 1{y in A}`` and a layout of observable indicator statistics.  The
steps are

1. invert the observed covariance,
2. find ``z`` with ``inv(Sigma_O) + z z^T`` vanishing on Omega,
3. fix the sign of ``z`` per connected component,
4. turn ``z`` into ``E[psi(O) y_B]`` given the class balance,

after which the tied-parameter expansion rebuilds full conditional tables.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg

from .errors import AmbiguousSigns, DidNotConverge, InvalidProbability, NegativeC, SingularCovariance

log = logging.getLogger(__name__)

# a run stops once one step improves f by less than this fraction
STALL_RTOL = 1e-14
# a stationary point with gradient below this (relative to |A| on Omega)
# counts as converged even when the residual cannot reach the tolerance
GRAD_RTOL = 1e-6


@dataclass(frozen=True)
class SolverConfig:
    learning_rate: float = 0.01
    max_iters: int = 10_000
    tolerance: float = 1e-10
    restarts: int = 5
    seed: int = 0
    clip: float = 1e-6
    method: str = "gd"
    strict: bool = False
    misfit_tolerance: float = 0.05

    def __post_init__(self):
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")
        if self.restarts < 1:
            raise ValueError("restarts must be >= 1")
        if self.method not in ("gd", "lm"):
            raise ValueError(f"unknown method {self.method!r}")


@dataclass
class ZVector:
    values: np.ndarray
    objective_residual: float
    restarts_used: int
    converged: bool = True
    iterations: int = 0
    history: list = field(default_factory=list, repr=False)


@dataclass
class PivotEstimate:
    """Output of :func:`recover_mu` for one binarized problem."""

    mu_prime: np.ndarray
    c: float
    sigma_OS: np.ndarray
    p_block: float
    mean: np.ndarray


def invert_covariance(me) -> np.ndarray:
    """Symmetric inverse of ``sigma_O`` through a Cholesky factorization."""
    S = np.asarray(me.sigma_O if hasattr(me, "sigma_O") else me, dtype=float)
    try:
        cf = linalg.cho_factor(S, lower=True)
    except linalg.LinAlgError as exc:
        raise SingularCovariance("observed covariance is not positive definite") from exc
    inv = linalg.cho_solve(cf, np.eye(len(S)))
    return 0.5 * (inv + inv.T)


def objective(A: np.ndarray, mask: np.ndarray, z: np.ndarray) -> float:
    """Squared masked Frobenius norm of ``A + z z^T``."""
    R = np.where(mask, A + np.outer(z, z), 0.0)
    return float((R * R).sum())


def _gradient(A, mask, z):
    R = np.where(mask, A + np.outer(z, z), 0.0)
    return 4.0 * R @ z, float((R * R).sum())


def triangle_estimates(A: np.ndarray, om, max_triangles: int = 200) -> np.ndarray:
    """Closed-form ``|z_i|`` from odd cycles of length three in Omega.

    On a triangle ``(i, j, k)`` the constraints give
    ``z_i^2 = -A_ij A_ik / A_jk``.  Coordinates without a triangle get NaN.
    """
    d = om.d
    mask = om.mask
    out = np.full(d, np.nan)
    for i in range(d):
        nb = np.flatnonzero(mask[i])
        vals = []
        for a in range(len(nb)):
            j = nb[a]
            for k in nb[a + 1:]:
                if mask[j, k] and A[j, k] != 0:
                    vals.append(-A[i, j] * A[i, k] / A[j, k])
                    if len(vals) >= max_triangles:
                        break
            if len(vals) >= max_triangles:
                break
        if vals:
            vals = np.asarray(vals)
            pos = vals[vals > 0]
            out[i] = np.sqrt(np.median(pos) if len(pos) else np.median(np.abs(vals)))
    return out


def _propagate_signs(A, om, mag, rng):
    # relative signs follow sign(z_i z_j) = sign(-A_ij) along a maximum
    # |A_ij| spanning forest of the Omega graph
    d = om.d
    sign = np.zeros(d)
    weights = np.where(om.mask, np.abs(A), -1.0)
    for comp in om.components:
        root = comp[0]
        sign[root] = 1.0
        inside = {root}
        while len(inside) < len(comp):
            best, pair = -1.0, None
            for u in inside:
                for v in comp:
                    if v not in inside and weights[u, v] > best:
                        best, pair = weights[u, v], (u, v)
            u, v = pair
            sign[v] = sign[u] * (1.0 if -A[u, v] >= 0 else -1.0)
            inside.add(v)
    z = sign * mag
    missing = np.isnan(mag)
    if missing.any():
        scale = np.sqrt(np.abs(A[om.mask]).mean())
        z[missing] = rng.choice([-1.0, 1.0], size=missing.sum()) * scale
    return z


def _run_gd(A, mask, z, cfg, history):
    lr = cfg.learning_rate
    g, f = _gradient(A, mask, z)
    it = 0
    for it in range(1, cfg.max_iters + 1):
        gg = float(g @ g)
        if np.sqrt(f) <= cfg.tolerance or gg <= cfg.tolerance ** 2:
            break
        # Armijo backtracking keeps every accepted step a decrease
        step = lr
        while True:
            z_new = z - step * g
            f_new = objective(A, mask, z_new)
            if f_new <= f - 0.5 * step * gg or step < 1e-16:
                break
            step *= 0.5
        if f_new > f:
            break
        if f - f_new <= STALL_RTOL * f:
            z, f = z_new, f_new
            break
        g_new, f = _gradient(A, mask, z_new)
        history.append(f)
        # Barzilai-Borwein trial step; Armijo above keeps the descent monotone
        s, y = z_new - z, g_new - g
        sy = float(s @ y)
        lr = float(s @ s) / sy if sy > 0 else step * 2.0
        z, g = z_new, g_new
    return z, f, it


def _run_lm(A, mask, z, cfg, history):
    pairs = np.argwhere(np.triu(mask, 1))
    i, j = pairs[:, 0], pairs[:, 1]
    a = A[i, j]
    d = len(z)
    damp = 1e-3
    f = objective(A, mask, z)
    it = 0
    for it in range(1, cfg.max_iters + 1):
        if np.sqrt(f) <= cfg.tolerance:
            break
        r = a + z[i] * z[j]
        J = np.zeros((len(pairs), d))
        rows = np.arange(len(pairs))
        J[rows, i] = z[j]
        J[rows, j] += z[i]
        JtJ, Jtr = J.T @ J, J.T @ r
        if np.sqrt(Jtr @ Jtr) <= cfg.tolerance ** 2:
            break
        improved = False
        while damp < 1e12:
            delta = np.linalg.solve(JtJ + damp * np.eye(d), -Jtr)
            f_new = objective(A, mask, z + delta)
            if f_new < f:
                z, improved = z + delta, True
                damp = max(damp / 3.0, 1e-12)
                break
            damp *= 4.0
        if not improved:
            break
        converged = f - f_new <= 1e-16 * f
        f = f_new
        history.append(f)
        if converged:
            break
    return z, f, it


def solve_z(inv_sigma: np.ndarray, om, cfg: SolverConfig | None = None,
            report=None) -> ZVector:
    """Minimize ``||inv_sigma + z z^T||_Omega`` over ``z``.

    The first run starts from the triangle closed form; later restarts
    perturb it with random sign flips and noise.  The best run by residual
    is returned.
    """
    cfg = cfg or SolverConfig()
    if report is not None and not report.solvable:
        warnings.warn("solving an unidentifiable problem; z is not unique", stacklevel=2)
    A = np.asarray(inv_sigma, dtype=float)
    mask = om.mask
    if not np.any(A[mask]):
        return ZVector(np.zeros(om.d), 0.0, 0, True, 0)
    rng = np.random.default_rng(cfg.seed)
    mag = triangle_estimates(A, om)
    base = _propagate_signs(A, om, mag, rng)
    runner = _run_gd if cfg.method == "gd" else _run_lm
    best = None
    for k in range(cfg.restarts):
        if k == 0:
            z0 = base.copy()
        else:
            flips = rng.choice([-1.0, 1.0], size=om.d)
            z0 = base * flips * (1.0 + 0.1 * rng.standard_normal(om.d))
        history = [objective(A, mask, z0)]
        z, f, its = runner(A, mask, z0, cfg, history)
        cand = ZVector(z, float(np.sqrt(f)), k + 1, True, its, history)
        if best is None or cand.objective_residual < best.objective_residual:
            best = cand
        if best.objective_residual <= cfg.tolerance:
            break
    best.restarts_used = k + 1
    gnorm = np.linalg.norm(_gradient(A, mask, best.values)[0])
    scale = max(1.0, float(np.abs(A[mask]).max()))
    best.converged = best.objective_residual <= cfg.tolerance or gnorm <= GRAD_RTOL * scale
    if not best.converged:
        msg = f"residual {best.objective_residual:.3e} above tolerance {cfg.tolerance:.1e}"
        if cfg.strict:
            raise DidNotConverge(msg)
        log.debug(msg)
    return best


@dataclass(frozen=True)
class SignPolicy:
    """How to break the ``z -> -z`` symmetry.

    ``anchors`` are sources declared better than random; each component of
    the Omega graph containing one is signed by it.  Remaining components
    use the average non-adversarial rule if ``average`` is set and the
    component is the only one, or ``per_component`` allows it everywhere.
    """

    anchors: tuple = ()
    average: bool = True
    per_component: bool = False


def lift_score(z: np.ndarray, sigma_O: np.ndarray, weights: np.ndarray) -> float:
    """Sign-sensitive average lift implied by ``z``.

    ``Sigma_O z`` is proportional to ``Cov(psi, y_B)``; ``weights`` is +1 on
    coordinates whose event agrees with ``y_B = 1``, -1 where it contradicts
    it, 0 elsewhere.
    """
    return float(weights @ (sigma_O @ z))


def resolve_signs(z: ZVector, om, sigma_O: np.ndarray, weights: np.ndarray,
                  policy: SignPolicy | None = None, source_weights: dict | None = None) -> ZVector:
    """Flip ``z`` per Omega component so the implied sources are non-adversarial.

    ``source_weights`` maps a source to its weight vector (used for anchors).
    """
    policy = policy or SignPolicy()
    vals = z.values.copy()
    comps = om.components
    for comp in comps:
        comp = np.asarray(comp)
        anchored = [s for s in policy.anchors if source_weights and s in source_weights
                    and np.any(source_weights[s][comp] != 0)]
        if anchored:
            w = sum(source_weights[s] for s in anchored)
        elif policy.per_component or (policy.average and len(comps) == 1):
            w = weights
        else:
            raise AmbiguousSigns(
                f"Omega has {len(comps)} components; component {comp.tolist()} needs an anchor source"
            )
        flipped = vals.copy()
        flipped[comp] *= -1.0
        if lift_score(flipped, sigma_O, w) > lift_score(vals, sigma_O, w):
            vals = flipped
    return ZVector(vals, z.objective_residual, z.restarts_used, z.converged, z.iterations, z.history)


def recover_mu(z, me, sigma_S: float, p_block: float, clip: float = 1e-6) -> PivotEstimate:
    """``E[psi(O) y_B]`` from a signed ``z`` and the block probability."""
    zv = np.asarray(getattr(z, "values", z), dtype=float)
    S = me.sigma_O
    c = (1.0 + zv @ S @ zv) / sigma_S
    if not c > 0:
        raise NegativeC(f"c = {c} is not positive")
    sigma_OS = S @ zv / np.sqrt(c)
    mu = sigma_OS + p_block * me.mean
    mu = np.clip(mu, clip, 1.0 - clip)
    return PivotEstimate(mu, float(c), sigma_OS, float(p_block), np.asarray(me.mean))


# --------------------------------------------------------------------------
# tied-parameter expansion


def expand_symmetric(alpha: float, r: int) -> np.ndarray:
    """``r x r`` table ``T[y, l]``: ``alpha`` on the diagonal, uniform errors."""
    if r < 2:
        raise ValueError("r must be >= 2")
    T = np.full((r, r), (1.0 - alpha) / (r - 1))
    np.fill_diagonal(T, alpha)
    return T


def expand_pattern(alpha_i: float, alpha_j: float, both: float, r: int,
                   same_wrong=None) -> np.ndarray:
    """Pair table ``T[y, a, b]`` from correctness-pattern parameters.

    ``alpha_i``/``alpha_j`` are the probabilities each source is correct and
    ``both`` that both are.  When exactly one is correct the other's label is
    uniform over the ``r - 1`` wrong values.  ``same_wrong[w]``, if given, is
    the probability that both emit the same wrong label ``w``; the rest of
    the both-wrong mass is uniform over pairs of distinct wrong labels.
    Without it the both-wrong mass is uniform over all ``(r - 1)^2`` cells.
    The parameters may be arrays indexed by ``y``.
    """
    ai, aj, g = (np.broadcast_to(np.asarray(x, dtype=float), (r,)) for x in (alpha_i, alpha_j, both))
    w = r - 1
    T = np.empty((r, r, r))
    for y in range(r):
        wrong = 1.0 - ai[y] - aj[y] + g[y]
        if same_wrong is None or r == 2:
            T[y] = wrong / (w * w)
        else:
            sw = np.asarray(same_wrong, dtype=float)
            rest = wrong - sum(sw[k] for k in range(r) if k != y)
            T[y] = rest / (w * (w - 1))
            for k in range(r):
                if k != y:
                    T[y, k, k] = sw[k]
        T[y, y, :] = (ai[y] - g[y]) / w
        T[y, :, y] = (aj[y] - g[y]) / w
        T[y, y, y] = g[y]
    return T


def mobius_joint(H: np.ndarray, dropped) -> np.ndarray:
    """Full joint table from marginal-style statistics.

    ``H[x]`` holds ``P(lambda_D = x_D, event)`` where ``D`` is the set of
    axes whose index differs from ``dropped``; an axis sitting at its dropped
    index is marginalized.  Inclusion-exclusion along each axis turns these
    into ``P(lambda = x, event)`` for every ``x``.
    """
    J = np.array(H, dtype=float)
    for ax, dval in enumerate(dropped):
        J = np.moveaxis(J, ax, 0)
        others = [k for k in range(J.shape[0]) if k != dval]
        J[dval] = J[dval] - J[others].sum(axis=0)
        J = np.moveaxis(J, 0, ax)
    return J


def clip_table(T: np.ndarray, clip: float, misfit_tolerance: float, what: str = "table") -> np.ndarray:
    """Clip a conditional table ``T[y, ...]`` into ``[clip, 1 - clip]``, renormalize rows."""
    lo, hi = T.min(), T.max()
    if lo < -misfit_tolerance or hi > 1.0 + misfit_tolerance:
        raise InvalidProbability(f"{what}: entries in [{lo:.4f}, {hi:.4f}] indicate model misfit")
    out = np.clip(T, clip, 1.0 - clip)
    flat = out.reshape(out.shape[0], -1)
    flat /= flat.sum(axis=1, keepdims=True)
    return flat.reshape(T.shape)


# --------------------------------------------------------------------------
# error-bound diagnostics


@dataclass
class BoundDiagnostics:
    a: float
    b: float
    sigma_max_M_pinv: float
    lambda_min_sigma: float
    lambda_max_K: float
    kappa_sigma: float
    inv_sigma_min: float
    predicted_error_coefficient: float
    d_O: int
    r: int

    def to_dict(self) -> dict:
        return {k: (float(v) if isinstance(v, (float, np.floating)) else int(v)) for k, v in self.__dict__.items()}


def sigma_max_pinv(M: np.ndarray) -> float:
    s = np.linalg.svd(M, compute_uv=False)
    s = s[s > 1e-10 * s[0]]
    return float(1.0 / s[-1])


def compute_bound_diagnostics(me, om, sigma_S: float, z, r: int) -> BoundDiagnostics:
    """Terms of the n^{-1/2} estimation-error bound.

    The coefficient multiplies ``n^{-1/2}``:
    ``16 (r-1) d^2 sqrt(32 pi) a b s (3 sqrt(d) a / l_min + 1) (kappa + 1 / l_min)``.
    """
    from .graph import omega_incidence

    S = me.sigma_O
    d = len(S)
    inv = invert_covariance(me)
    zv = np.asarray(getattr(z, "values", z), dtype=float)
    K = inv + np.outer(zv, zv)
    eig = np.linalg.eigvalsh(S)
    lam_min, lam_max = float(eig[0]), float(eig[-1])
    lam_K = float(np.linalg.eigvalsh(K)[-1])
    ratio = d / sigma_S
    a = float(np.sqrt(ratio + ratio ** 2 * lam_K))
    inv_min = float(np.abs(inv[om.mask]).min())
    # a zero entry on Omega makes the bound vacuous
    b = float(np.linalg.norm(inv, 2) ** 2 / inv_min) if inv_min > 0 else np.inf
    s = sigma_max_pinv(omega_incidence(om))
    kappa = lam_max / lam_min
    coef = (16 * (r - 1) * d ** 2 * np.sqrt(32 * np.pi) * a * b * s
            * (3 * np.sqrt(d) * a / lam_min + 1) * (kappa + 1 / lam_min))
    return BoundDiagnostics(a, b, s, lam_min, lam_K, kappa, inv_min, float(coef), d, r)

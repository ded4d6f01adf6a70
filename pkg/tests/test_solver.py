import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracle
from weaklabel.errors import AmbiguousSigns, DidNotConverge, InvalidProbability, NegativeC, SingularCovariance
from weaklabel.graph import OmegaMask, SourceGraph, build_junction_tree, build_omega, connected_components
from weaklabel.solver import (
    SignPolicy,
    SolverConfig,
    ZVector,
    clip_table,
    compute_bound_diagnostics,
    expand_pattern,
    expand_symmetric,
    invert_covariance,
    mobius_joint,
    objective,
    recover_mu,
    resolve_signs,
    solve_z,
    triangle_estimates,
)
from weaklabel.statistics import MomentEstimates, build_indicator_layout, build_output_spaces
from weaklabel.tasks import enumerate_feasible_set, flat_task

ACCS, BAL = [0.8, 0.7, 0.6], [0.6, 0.4]


@pytest.fixture(scope="module")
def three():
    mean, cov, cross = oracle.moments(ACCS, BAL)
    _, cs, g = build_junction_tree(SourceGraph(3))
    spaces = build_output_spaces(enumerate_feasible_set(flat_task(2)), g)
    layout = build_indicator_layout(cs, spaces)
    om = build_omega(cs, layout)
    me = MomentEstimates(np.array(mean), np.array(cov), 0.0, np.inf, layout)
    S, cross = np.array(cov), np.array(cross)
    # oracle z = sqrt(c) inv(S) cross with c from the Schur complement
    sigma_S = 0.6 * 0.4
    c = 1 / (sigma_S - cross @ np.linalg.solve(S, cross))
    z = np.sqrt(c) * np.linalg.solve(S, cross)
    return me, om, z, cross


class TestInvert:
    def test_identity(self):
        assert np.array_equal(invert_covariance(np.eye(3)), np.eye(3))

    def test_diagonal(self):
        inv = invert_covariance(np.diag([0.25, 0.24, 0.21]))
        np.testing.assert_allclose(np.diag(inv), [4, 4.1667, 4.7619], atol=1e-4)

    def test_population(self, three):
        me = three[0]
        ref = np.linalg.inv(np.array(oracle.moments(ACCS, BAL)[1]))
        inv = invert_covariance(me)
        assert np.abs(inv - ref).max() < 1e-10 and np.array_equal(inv, inv.T)

    def test_singular(self):
        with pytest.raises(SingularCovariance):
            invert_covariance(np.ones((2, 2)))


class TestSolve:
    def test_zero_fixed_point(self, three):
        _, om, _, _ = three
        z = solve_z(np.eye(3), om)
        assert np.all(z.values == 0) and z.objective_residual == 0

    def test_population_z(self, three):
        me, om, z_ref, _ = three
        z = solve_z(invert_covariance(me), om)
        assert np.abs(np.abs(z.values) - np.abs(z_ref)).max() < 1e-6
        assert z.converged and z.objective_residual < 1e-10

    def test_triangle_matches_descent(self, three):
        me, om, _, _ = three
        A = invert_covariance(me)
        tri = triangle_estimates(A, om)
        z = solve_z(A, om)
        np.testing.assert_allclose(tri, np.abs(z.values), atol=1e-6)

    def test_sign_symmetry(self, three):
        me, om, _, _ = three
        A = invert_covariance(me)
        z = np.random.default_rng(0).normal(size=3)
        assert objective(A, om.mask, z) == objective(A, om.mask, -z)

    @pytest.mark.parametrize("method", ["gd", "lm"])
    def test_monotone_history(self, method):
        rng = np.random.default_rng(4)
        d = 8
        om = _omega_all(d)
        X = rng.normal(size=(200, d))
        A = np.linalg.inv(np.cov(X.T))
        z = solve_z(A, om, SolverConfig(method=method, restarts=2))
        h = np.array(z.history)
        assert np.all(np.diff(h) <= 1e-15 * h[:-1])

    def test_strict_raises(self):
        om = _omega_all(4)
        A = np.array([[1, 1, 1, 1], [1, 1, -1, 1], [1, -1, 1, 1], [1, 1, 1, 1.0]])
        with pytest.raises(DidNotConverge):
            solve_z(A, om, SolverConfig(strict=True, max_iters=3, restarts=1))

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SolverConfig(tolerance=0)
        with pytest.raises(ValueError):
            SolverConfig(restarts=0)


def _omega_all(d, comps=None):
    mask = ~np.eye(d, dtype=bool)
    if comps is not None:
        mask = np.zeros((d, d), dtype=bool)
        for c in comps:
            for a in c:
                for b in c:
                    mask[a, b] = a != b
    pairs = np.argwhere(np.triu(mask, 1))
    return OmegaMask(d, pairs, mask, tuple(connected_components(range(d), [tuple(p) for p in pairs])), ())


class TestSigns:
    def test_negative_branch_flipped(self, three):
        me, om, z_ref, cross = three
        z = ZVector(-np.abs(z_ref), 0.0, 1)
        out = resolve_signs(z, om, me.sigma_O, np.ones(3))
        est = recover_mu(out, me, 0.24, 0.6)
        acc = est.mu_prime / 0.6
        np.testing.assert_allclose(acc, ACCS, atol=1e-9)

    def test_invariant_to_branch(self, three):
        me, om, z_ref, _ = three
        a = resolve_signs(ZVector(z_ref, 0, 1), om, me.sigma_O, np.ones(3))
        b = resolve_signs(ZVector(-z_ref, 0, 1), om, me.sigma_O, np.ones(3))
        assert np.array_equal(a.values, b.values)

    def test_two_components(self):
        om = _omega_all(6, comps=[(0, 1, 2), (3, 4, 5)])
        S = np.eye(6)
        z = ZVector(np.array([1.0, 1, 1, 1, 1, 1]), 0, 1)
        with pytest.raises(AmbiguousSigns):
            resolve_signs(z, om, S, np.ones(6))
        sw = {0: np.eye(6)[0] * -1, 1: np.eye(6)[4]}
        out = resolve_signs(z, om, S, np.ones(6), SignPolicy(anchors=(0, 1)), sw)
        assert out.values.tolist() == [-1, -1, -1, 1, 1, 1]


class TestRecover:
    def test_population_values(self, three):
        me, om, z_ref, cross = three
        est = recover_mu(np.abs(z_ref), me, 0.6 * 0.4, 0.6)
        assert est.sigma_OS[0] == pytest.approx(0.144, abs=1e-12)
        assert est.mu_prime[0] == pytest.approx(0.48, abs=1e-12)
        np.testing.assert_allclose(est.sigma_OS, cross, atol=1e-12)

    def test_zero_coupling(self, three):
        me = three[0]
        est = recover_mu(np.zeros(3), me, 0.24, 0.6)
        assert np.all(est.sigma_OS == 0)
        np.testing.assert_allclose(est.mu_prime, 0.6 * me.mean)

    def test_negative_c(self):
        me = MomentEstimates(np.zeros(2), -np.eye(2), 0, 1)
        with pytest.raises(NegativeC):
            recover_mu(np.array([2.0, 0]), me, 0.24, 0.6)


class TestExpand:
    def test_symmetric(self):
        T = expand_symmetric(0.7, 3)
        assert T[0, 1] == pytest.approx(0.15) and T[0, 0] == 0.7
        assert expand_symmetric(0.8, 2)[0, 1] == pytest.approx(0.2)

    @settings(max_examples=200, deadline=None)
    @given(st.integers(2, 6), st.data())
    def test_valid_conditionals(self, r, data):
        alpha = data.draw(st.floats(1 / r, 1, exclude_min=True, exclude_max=True))
        T = expand_symmetric(alpha, r)
        assert np.all(T >= 0)
        np.testing.assert_allclose(T.sum(axis=1), 1.0, atol=1e-9)
        ai = data.draw(st.floats(1 / r, 1, exclude_min=True, exclude_max=True))
        aj = data.draw(st.floats(1 / r, 1, exclude_min=True, exclude_max=True))
        lo, hi = max(0.0, ai + aj - 1), min(ai, aj)
        g = lo + (hi - lo) * data.draw(st.floats(0, 1))
        P = expand_pattern(ai, aj, g, r)
        assert np.all(P >= -1e-12)
        np.testing.assert_allclose(P.reshape(r, -1).sum(axis=1), 1.0, atol=1e-9)
        np.testing.assert_allclose(P.sum(axis=2)[range(r), range(r)], ai, atol=1e-12)

    def test_pair_identity(self):
        P = expand_pattern(0.7, 0.6, 0.5, 3)
        assert P[0, 0, 1] == pytest.approx((0.7 - 0.5) / 2)

    def test_mobius(self):
        rng = np.random.default_rng(0)
        J = rng.random((3, 4))
        J /= J.sum()
        # marginal-style statistics with the dropped index of each axis summed out
        H = J.copy()
        H[2, :] = J.sum(axis=0)
        H[:, 3] = J.sum(axis=1)
        H[2, 3] = 1.0
        np.testing.assert_allclose(mobius_joint(H, (2, 3)), J, atol=1e-15)

    def test_clip(self):
        T = np.array([[0.0, 1.0], [0.5, 0.5]])
        out = clip_table(T, 1e-6, 0.05)
        assert out.min() >= 1e-6 * 0.99 and np.allclose(out.sum(1), 1)
        with pytest.raises(InvalidProbability):
            clip_table(np.array([[-0.2, 1.2]]), 1e-6, 0.05)


class TestBound:
    def test_terms(self, three):
        me, om, z_ref, _ = three
        b = compute_bound_diagnostics(me, om, 0.24, z_ref, 2)
        d = b.to_dict()
        assert all(np.isfinite(v) and v > 0 for k, v in d.items() if k not in ("d_O", "r"))
        assert b.sigma_max_M_pinv == pytest.approx(1.0)

    def test_identity_conditioning(self, three):
        _, om, _, _ = three
        me = MomentEstimates(np.zeros(3), np.eye(3), 0, 1)
        b = compute_bound_diagnostics(me, om, 0.25, np.full(3, 0.1), 2)
        assert b.kappa_sigma == pytest.approx(1.0) and b.lambda_min_sigma == pytest.approx(1.0)
        assert b.b == np.inf

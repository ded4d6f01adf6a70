import numpy as np
import pytest

import oracle
from weaklabel import LabelModel, build_omega
from weaklabel.errors import SupportTooLarge
from weaklabel.synthetic import (
    GroundTruthModel,
    density_summary,
    dependency_model,
    independent_model,
    loglog_slope,
    run_density_experiment,
    run_scaling_experiment,
    trial_seed,
    zoo,
)


def _layout(gtm):
    return LabelModel(gtm.task_graph, gtm.source_graph).subproblems[0].layout


class TestSample:
    def test_deterministic(self):
        gtm = zoo()[3]
        a, ya = gtm.sample(500, 7)
        b, yb = gtm.sample(500, 7)
        assert np.array_equal(a.codes, b.codes) and np.array_equal(ya, yb)
        c, _ = gtm.sample(500, 8)
        assert not np.array_equal(a.codes, c.codes)

    def test_empty(self):
        L, y = zoo()[0].sample(0, 0)
        assert L.codes.shape == (0, 3) and y.shape == (0,)

    def test_perfect_sources(self):
        L, y = independent_model([1.0, 1.0, 1.0]).sample(1000, 0)
        assert np.all(L.codes == y[:, None])

    def test_empirical_accuracy(self):
        L, y = independent_model([0.8, 0.7, 0.6]).sample(1_000_000, 0)
        assert abs(np.mean(L.codes[:, 0] == y) - 0.8) < 0.002

    def test_balance(self):
        _, y = zoo()[4].sample(200_000, 1)
        np.testing.assert_allclose(np.bincount(y) / len(y), zoo()[4].balance, atol=5e-3)

    def test_invalid_tables(self):
        gtm = zoo()[0]
        bad = dict(gtm.tables)
        bad[(0,)] = bad[(0,)] * 2
        with pytest.raises(ValueError):
            GroundTruthModel(gtm.task_graph, gtm.balance, gtm.source_graph, bad)


class TestPopulation:
    def test_hand_values(self):
        gtm = independent_model([0.8, 0.7, 0.6])
        pm = gtm.population_moments(_layout(gtm))
        assert pm.mean[0] == pytest.approx(0.56, abs=1e-14)
        assert pm.sigma_OS[0] == pytest.approx(0.144, abs=1e-14)
        assert pm.sigma_S == pytest.approx(0.24, abs=1e-14)

    def test_matches_oracle(self):
        accs = [0.8, 0.7, 0.6, 0.65]
        gtm = independent_model(accs)
        pm = gtm.population_moments(_layout(gtm))
        mean, cov, cross = oracle.moments(accs, [0.6, 0.4])
        np.testing.assert_allclose(pm.mean, mean, atol=1e-14)
        np.testing.assert_allclose(pm.sigma_O, cov, atol=1e-14)
        np.testing.assert_allclose(pm.sigma_OS, cross, atol=1e-14)

    @pytest.mark.parametrize("gtm", zoo(), ids=[g.name for g in zoo()])
    def test_expected_matches_enumeration(self, gtm):
        layout = _layout(gtm)
        pm = gtm.population_moments(layout)
        em = gtm.expected_moments(layout)
        np.testing.assert_allclose(em.mean, pm.mean, atol=1e-14)
        np.testing.assert_allclose(em.sigma_O, pm.sigma_O, atol=1e-14)

    def test_inverse_identity(self):
        gtm = independent_model([0.8, 0.7, 0.6, 0.75])
        pm = gtm.population_moments(_layout(gtm))
        d = len(pm.mean)
        KO = pm.K[:d, :d]
        inv = np.linalg.inv(pm.sigma_O)
        assert np.abs(KO - inv - np.outer(pm.z, pm.z)).max() < 1e-10
        off = ~np.eye(d, dtype=bool)
        assert np.abs(inv[off] + np.outer(pm.z, pm.z)[off]).max() < 1e-12

    def test_K_zero_on_omega(self):
        gtm = dependency_model()
        model = LabelModel(gtm.task_graph, gtm.source_graph)
        layout = model.subproblems[0].layout
        om = build_omega(model.cliques, layout)
        pm = gtm.population_moments(layout)
        d = layout.d
        assert np.abs(pm.K[:d, :d][om.mask]).max() < 1e-12
        # the pair block is not zero
        assert np.abs(pm.K[:d, :d][~om.mask & ~np.eye(d, dtype=bool)]).max() > 1e-3

    def test_support_cap(self):
        with pytest.raises(SupportTooLarge):
            independent_model([0.7] * 24).enumerate_joint()


class TestExperiments:
    def test_slope_helper(self):
        ns = np.array([1e3, 1e4, 1e5])
        assert loglog_slope(ns, 3 * ns ** -0.5) == pytest.approx(-0.5)

    def test_trial_seed(self):
        assert trial_seed(0, 1, 2) == trial_seed(0, 1, 2) != trial_seed(0, 2, 1)

    def test_scaling_small(self):
        res = run_scaling_experiment(independent_model([0.8, 0.7, 0.6, 0.75]), [2000, 32000], trials=4)
        assert len(res.rows) == 8 and res.slope < 0
        assert set(res.rows[0]) == {"n", "trial", "err", "t_moments_ms", "t_solver_ms"}

    def test_density_small(self):
        res = run_density_experiment([0.8, 0.7, 0.6, 0.75, 0.65, 0.7], [0, 2], trials=3, n=20_000)
        s = density_summary(res)["levels"]
        assert s["0"]["mean_gap"] == 0.0 and s["0"]["p_value"] == 1.0
        assert s["2"]["err_aware"] < s["2"]["err_independent"]

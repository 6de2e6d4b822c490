import numpy as np
import pytest

from netgen import TWO_ARM_POOL, make_dataset, random_dataset
from netmeta.fixtures import load_fixture
from netmeta.oracles import multivariate_metareg_mom, univariate_dl_network
from netmeta.simulation import SimulationScenario, network_template, simulate_dataset


def two_ab_studies():
    return make_dataset("AB", ["y"], [("s1", "AB", [[0.0]], [[1.0]]), ("s2", "AB", [[2.0]], [[1.0]])])


class TestUnivariate:
    def test_hand_example(self):
        res = univariate_dl_network(two_ab_studies())
        assert res.Q == pytest.approx(2.0)
        assert res.Q_design == pytest.approx(2.0)
        assert res.tau2_beta == pytest.approx(1.0)
        assert np.isnan(res.tau2_omega_raw) and res.tau2_omega == 0.0
        assert res.delta[0] == pytest.approx(1.0)
        assert res.var_delta[0, 0] == pytest.approx(1.0)

    def test_rejects_multivariate(self):
        with pytest.raises(ValueError):
            univariate_dl_network(load_fixture("rrms"))

    def test_rejects_missing(self):
        ds = make_dataset("ABC", ["y"], [("s1", "ABC", [[0.1], [0.2]], np.eye(2) + 1, [[False], [True]]),
                                         ("s2", "AB", [[0.3]], [[1.0]])])
        with pytest.raises(ValueError):
            univariate_dl_network(ds)

    def test_no_replication(self):
        ds = make_dataset("ABC", ["y"], [("s1", "AB", [[0.0]], [[1.0]]), ("s2", "AC", [[0.5]], [[1.0]]),
                                         ("s3", "BC", [[0.2]], [[1.0]])])
        with pytest.raises(ValueError):
            univariate_dl_network(ds)

    def test_substitution_only_moves_omega(self):
        ds = load_fixture("law2016")
        t = univariate_dl_network(ds, "truncated")
        r = univariate_dl_network(ds, "raw")
        assert t.tau2_beta_raw == r.tau2_beta_raw
        if t.tau2_beta_raw >= 0:
            assert t.tau2_omega_raw == pytest.approx(r.tau2_omega_raw)


def _classic_dl_regression(ds):
    y = np.array([s.effects[0, 0] for s in ds.studies])
    v = np.array([s.within_cov[0, 0] for s in ds.studies])
    ref = ds.treatments[0]
    Z = np.zeros((len(y), ds.c))
    for i, s in enumerate(ds.studies):
        a, b = s.design.treatments
        Z[i, ds.treatments.index(b) - 1] = 1.0
        if a != ref:
            Z[i, ds.treatments.index(a) - 1] = -1.0
    w = 1.0 / v
    G = Z.T @ (w[:, None] * Z)
    beta = np.linalg.solve(G, Z.T @ (w * y))
    Q = float(np.sum(w * (y - Z @ beta) ** 2))
    denom = w.sum() - np.trace(np.linalg.solve(G, Z.T @ ((w**2)[:, None] * Z)))
    return (Q - (len(y) - ds.c)) / denom


class TestMetaRegression:
    def test_p1_matches_classic_formula(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            ds = random_dataset(rng, p=1, pool=TWO_ARM_POOL)
            res = multivariate_metareg_mom(ds)
            assert res.sigma_raw[0, 0] == pytest.approx(_classic_dl_regression(ds), abs=1e-10)

    def test_rejects_multi_arm(self):
        with pytest.raises(ValueError):
            multivariate_metareg_mom(load_fixture("law2016"))

    def test_zero_heterogeneity(self):
        rng = np.random.default_rng(2)
        template = network_template("ABCD", ["y1", "y2"], [("AB", 5), ("AC", 5), ("BD", 5), ("CD", 4)], rng,
                                    outcome_sd=[0.05, 0.05])
        sc = SimulationScenario(template, np.zeros(6), np.zeros((2, 2)), np.zeros((2, 2)), seed=4)
        for rep in range(20):
            res = multivariate_metareg_mom(simulate_dataset(sc, rep))
            assert np.abs(res.sigma_raw).max() < 0.01
            assert np.linalg.eigvalsh(res.sigma).min() >= -1e-12

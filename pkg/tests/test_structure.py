import numpy as np
import pytest

from netgen import make_dataset, random_dataset
from netmeta.data import Design
from netmeta.fixtures import load_fixture
from netmeta.structure import (
    SingularCovarianceError,
    build_contrast_rows,
    build_design_matrix_X,
    build_m_matrices,
    build_p_matrix,
    build_structure,
    build_z_matrix,
    precision_matrix,
)


def test_p_matrix():
    np.testing.assert_array_equal(build_p_matrix(1), [[1.0]])
    np.testing.assert_array_equal(build_p_matrix(2), [[1.0, 0.5], [0.5, 1.0]])
    with pytest.raises(ValueError):
        build_p_matrix(0)


@pytest.mark.parametrize(
    "network,design,expected",
    [
        ("ABCDE", "CDE", [[0, -1, 1, 0], [0, -1, 0, 1]]),
        ("ABCDE", "AB", [[1, 0, 0, 0]]),
        ("ABCD", "BD", [[-1, 0, 1]]),
    ],
)
def test_contrast_rows(network, design, expected):
    np.testing.assert_array_equal(build_contrast_rows(Design(tuple(design)), tuple(network)), expected)


def test_contrast_rows_reject_reference_as_arm():
    with pytest.raises(ValueError):
        build_contrast_rows(Design(("B", "A")), ("A", "B"))


def test_m_matrices_two_arm_distinct_designs():
    recs = [("s1", "AB", [[0.0]], [[1.0]]), ("s2", "AC", [[0.0]], [[1.0]]), ("s3", "BC", [[0.0]], [[1.0]])]
    M1, M2 = build_m_matrices(make_dataset("ABC", ["y"], recs))
    np.testing.assert_array_equal(M1, np.eye(3))
    np.testing.assert_array_equal(M2, np.eye(3))


def test_m2_three_arm_replicate_block():
    S = np.eye(2) + 1.0
    ds = make_dataset("BCD", ["y"], [("s1", "BCD", [[0], [0]], S), ("s2", "BCD", [[0], [0]], S)])
    _, M2 = build_m_matrices(ds)
    h = 0.5
    np.testing.assert_array_equal(M2, [[1, h, 1, h], [h, 1, h, 1], [1, h, 1, h], [h, 1, h, 1]])


def test_x_equals_z_for_p1():
    ds = load_fixture("law2016")
    Z = build_z_matrix(ds)
    np.testing.assert_array_equal(build_design_matrix_X(Z, 1), Z)


def test_x_single_study_bivariate():
    ds = make_dataset("AB", ["y1", "y2"], [("s1", "AB", [[0.0, 0.0]], np.eye(2))])
    np.testing.assert_array_equal(build_design_matrix_X(build_z_matrix(ds), 2), np.eye(2))


def test_x_rrms_shape():
    sm = build_structure(load_fixture("rrms"))
    assert sm.X.shape == (48, 15)
    assert sm.M1.shape == sm.M2.shape == (16, 16)


class TestPrecision:
    def test_components_2_and_5(self):
        rng = np.random.default_rng(0)
        L = rng.normal(size=(6, 6))
        S = L @ L.T + 6 * np.eye(6)
        obs = np.zeros(6, dtype=bool)
        obs[[1, 4]] = True
        W = precision_matrix(S, obs)
        inv = np.linalg.inv(S[np.ix_([1, 4], [1, 4])])
        for k in (0, 2, 3, 5):
            assert not W[k].any() and not W[:, k].any()
        np.testing.assert_allclose(W[np.ix_([1, 4], [1, 4])], inv, atol=1e-14)

    def test_complete(self):
        S = np.array([[2.0, 0.5], [0.5, 1.0]])
        np.testing.assert_allclose(precision_matrix(S, np.ones(2, bool)), np.linalg.inv(S), atol=1e-14)

    def test_diagonal_embedded(self):
        S = np.zeros((3, 3))
        S[0, 0], S[2, 2] = 2.0, 4.0
        W = precision_matrix(S, np.array([True, False, True]))
        np.testing.assert_allclose(W, np.diag([0.5, 0.0, 0.25]), rtol=0, atol=1e-15)

    def test_placeholder_invariance(self):
        S = np.array([[2.0, 0.3, 0.1], [0.3, 1.0, 0.2], [0.1, 0.2, 1.5]])
        obs = np.array([True, False, True])
        S2 = S.copy()
        S2[1, :] = S2[:, 1] = 7.5
        np.testing.assert_array_equal(precision_matrix(S, obs), precision_matrix(S2, obs))

    def test_singular(self):
        with pytest.raises(SingularCovarianceError):
            precision_matrix(np.ones((2, 2)), np.ones(2, bool))


def test_structure_blocks_consistent():
    rng = np.random.default_rng(1)
    ds = random_dataset(rng, p=2, missing_rate=0.2)
    sm = build_structure(ds)
    n, p = ds.n, ds.p
    assert sm.Y.shape == (n * p,) and sm.W.shape == (n * p, n * p)
    np.testing.assert_array_equal(np.diag(sm.R), sm.observed.astype(float))
    np.testing.assert_allclose(sm.W @ sm.S, sm.R, atol=1e-10)
    total = 0
    for blk in sm.per_design:
        assert blk.X.shape == (blk.rows.stop - blk.rows.start, p * blk.design.contrast_count)
        total += blk.n_studies
    assert total == ds.N
    assert sm.parameter_labels[0] == "AB@y1"


def test_placeholders_only_touch_missing_entries():
    rng = np.random.default_rng(2)
    ds = random_dataset(rng, p=2, missing_rate=0.3)
    a = build_structure(ds)
    b = build_structure(ds, placeholder=7.5, cov_placeholder=7.5)
    obs = a.observed
    np.testing.assert_array_equal(a.Y[obs], b.Y[obs])
    assert np.all(b.Y[~obs] == 7.5)
    np.testing.assert_array_equal(a.W, b.W)

import numpy as np
import pytest

from hgp.carmodels import bym2_covariance, icar_structure, leroux_precision
from hgp.errors import GeometryError
from hgp.geometry import AdjacencyMatrix

PATH3 = AdjacencyMatrix(np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]]), site_ids=("a", "b", "c"))


def random_connected_adjacency(rng, n):
    while True:
        w = (rng.uniform(size=(n, n)) < 0.5).astype(int)
        w = np.triu(w, 1)
        w = w + w.T
        deg = w.sum(axis=1)
        if np.all(deg > 0):
            from scipy.sparse.csgraph import connected_components

            if connected_components(w, directed=False)[0] == 1:
                return AdjacencyMatrix(w)


class TestIcarStructure:
    def test_path_graph_hand_matrix(self):
        s = icar_structure(PATH3)
        assert np.array_equal(s.q, np.array([[1, -1, 0], [-1, 2, -1], [0, -1, 1]], dtype=float))

    def test_complete_graph_k2(self):
        s = icar_structure(AdjacencyMatrix(np.array([[0, 1], [1, 0]])))
        assert np.array_equal(s.q, np.array([[1.0, -1.0], [-1.0, 1.0]]))
        assert np.linalg.matrix_rank(s.q) == 1

    def test_scaled_variance_geometric_mean_one(self):
        rng = np.random.default_rng(4)
        for n in (3, 5, 8):
            w = random_connected_adjacency(rng, n)
            s = icar_structure(w)
            gm = np.exp(np.mean(np.log(np.diag(s.qstar_ginv))))
            assert gm == pytest.approx(1.0, abs=1e-8)

    def test_ginv_matches_pinv_oracle(self):
        s = icar_structure(PATH3)
        oracle = np.linalg.pinv(s.q) / s.scale
        assert np.allclose(s.qstar_ginv, oracle, atol=1e-10)

    def test_isolated_node_named(self):
        w = np.zeros((3, 3), dtype=int)
        w[0, 1] = w[1, 0] = 1
        with pytest.raises(GeometryError, match="'c'"):
            icar_structure(AdjacencyMatrix(w, site_ids=("a", "b", "c")))

    def test_disconnected_components(self):
        w = np.zeros((4, 4), dtype=int)
        w[0, 1] = w[1, 0] = 1
        w[2, 3] = w[3, 2] = 1
        s = icar_structure(AdjacencyMatrix(w))
        assert s.n_components == 2
        gm = np.exp(np.mean(np.log(np.diag(s.qstar_ginv))))
        assert gm == pytest.approx(1.0, abs=1e-8)
        # generalized inverse is block-constant-free: component sums are zero
        assert np.allclose(s.qstar_ginv[:2, :2].sum(axis=1), 0.0, atol=1e-10)
        assert np.allclose(s.qstar_ginv[2:, 2:].sum(axis=1), 0.0, atol=1e-10)

    def test_row_sums_zero(self):
        rng = np.random.default_rng(9)
        s = icar_structure(random_connected_adjacency(rng, 6))
        assert np.allclose(s.q.sum(axis=1), 0.0)

    def test_scaling_invariant_to_weight_multiples(self):
        # doubling every edge weight must not change the scaled inverse
        class _Weighted:
            def __init__(self, entries, ids):
                self.entries = entries
                self.site_ids = ids

        base = icar_structure(PATH3)
        doubled = icar_structure(_Weighted(2.0 * PATH3.entries, PATH3.site_ids))
        assert np.allclose(base.qstar_ginv, doubled.qstar_ginv, atol=1e-10)


class TestBym2Covariance:
    def test_psi_zero_pure_noise(self):
        s = icar_structure(PATH3)
        assert np.allclose(bym2_covariance(s, 0.0, 4.0), np.eye(3) / 4.0)

    def test_psi_one_scaled_icar(self):
        s = icar_structure(PATH3)
        assert np.allclose(bym2_covariance(s, 1.0, 1.0), s.qstar_ginv)

    def test_diag_quarter(self):
        s = icar_structure(PATH3)
        assert np.allclose(np.diag(bym2_covariance(s, 0.0, 4.0)), 0.25)

    def test_psd_across_psi(self):
        rng = np.random.default_rng(12)
        s = icar_structure(random_connected_adjacency(rng, 6))
        for psi in np.linspace(0, 1, 11):
            lam = np.linalg.eigvalsh(bym2_covariance(s, psi, 2.0))
            assert lam.min() > -1e-10

    def test_bad_args(self):
        s = icar_structure(PATH3)
        with pytest.raises(GeometryError):
            bym2_covariance(s, -0.1, 1.0)
        with pytest.raises(GeometryError):
            bym2_covariance(s, 0.5, 0.0)


class TestLerouxPrecision:
    def test_psi_zero_identity(self):
        assert np.allclose(leroux_precision(PATH3, 0.0, 3.0), 3.0 * np.eye(3))

    def test_psi_one_unscaled_icar(self):
        q = np.array([[1, -1, 0], [-1, 2, -1], [0, -1, 1]], dtype=float)
        assert np.allclose(leroux_precision(PATH3, 1.0, 2.0), 2.0 * q)

    def test_conditional_precision_middle_site(self):
        p = leroux_precision(PATH3, 0.5, 1.0)
        assert p[1, 1] == pytest.approx(0.5 * 2 + 0.5)

    def test_full_conditionals_match_closed_form(self):
        # brute-force conditioning of the joint gaussian against the
        # mixing-weighted neighbor-average formula
        rng = np.random.default_rng(31)
        for _ in range(20):
            n = int(rng.integers(3, 7))
            w = random_connected_adjacency(rng, n)
            psi = float(rng.uniform(0.05, 0.95))
            tau_l = float(rng.uniform(0.2, 4.0))
            p = leroux_precision(w, psi, tau_l)
            s = rng.standard_normal(n)
            for k in range(n):
                others = np.delete(np.arange(n), k)
                cond_mean = -np.dot(p[k, others], s[others]) / p[k, k]
                cond_var = 1.0 / p[k, k]
                wk = w.entries[k]
                expected_mean = psi * np.dot(wk, s) / (psi * wk.sum() + 1 - psi)
                expected_var = 1.0 / (tau_l * (psi * wk.sum() + 1 - psi))
                assert cond_mean == pytest.approx(expected_mean, rel=1e-10, abs=1e-12)
                assert cond_var == pytest.approx(expected_var, rel=1e-10)

    def test_bad_args(self):
        with pytest.raises(GeometryError):
            leroux_precision(PATH3, 1.5, 1.0)
        with pytest.raises(GeometryError):
            leroux_precision(PATH3, 0.5, -1.0)

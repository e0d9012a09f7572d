import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fastrate import features as F
from fastrate import mdp as M
from fastrate.errors import DataError, DomainError, StructureError

finite = st.floats(-10, 10, allow_nan=False)


class TestFourier:
    def test_slot_order(self):
        x = 0.3
        np.testing.assert_allclose(F.fourier_features(x, 5),
                                   [1.0, np.sin(x), np.cos(x), np.sin(2 * x), np.cos(2 * x)], rtol=1e-15)

    def test_broadcast_shape(self):
        assert F.fourier_features(np.zeros((4, 3)), 7).shape == (4, 3, 7)

    def test_domain_checks(self):
        with pytest.raises(DomainError):
            F.position_features(0.61)
        with pytest.raises(DomainError):
            F.velocity_features(np.array([0.0, np.nan]))
        with pytest.raises(DomainError):
            F.force_features(-1.0001)

    def test_force_monomials(self):
        np.testing.assert_array_equal(F.force_features(np.array([0.5]), 3), [[1.0, 0.5, 0.25, 0.125]])


class TestSpec:
    def test_paper_dimension(self):
        assert F.PAPER_SPEC.dim == 3000
        assert F.DESK_SPEC.dim == 640

    @given(st.integers(0, 2999))
    def test_flatten_round_trip(self, idx):
        spec = F.PAPER_SPEC
        assert spec.flatten(*spec.unflatten(idx)) == idx

    def test_flat_index_matches_feature_vector(self):
        spec = F.ProductFeatureSpec(5, 4, 3)
        fm = F.MountainCarFeatures(spec)
        p, v, f = -0.3, 0.02, 0.7
        phi = fm(p, v, f)
        pos = F.position_features(p, 5)
        vel = F.velocity_features(v, 4)
        for i, j, k in [(0, 0, 0), (4, 3, 3), (2, 1, 2), (3, 0, 1)]:
            assert phi[spec.flatten(i, j, k)] == pytest.approx(pos[i] * vel[j] * f**k, rel=1e-14)

    def test_invalid_sizes(self):
        with pytest.raises(StructureError):
            F.ProductFeatureSpec(0, 3, 3)
        with pytest.raises(StructureError):
            F.ProductFeatureSpec(3, 3, 4)

    def test_unit_rescale_bounds_norm(self, rng):
        fm = F.MountainCarFeatures(F.ProductFeatureSpec(6, 5, 3, unit_rescale=True))
        p = rng.uniform(-1.2, 0.6, 200)
        v = rng.uniform(-0.07, 0.07, 200)
        f = rng.uniform(-1, 1, 200)
        assert np.linalg.norm(fm(p, v, f), axis=1).max() <= 1.0 + 1e-12


class TestCubicMaximizer:
    @settings(max_examples=300, deadline=None)
    @given(st.lists(finite, min_size=4, max_size=4))
    def test_matches_grid_search(self, c):
        c = np.array(c)
        grid = np.linspace(-1, 1, 20001)
        f, val = F.maximize_cubic(c)
        assert -1.0 <= f <= 1.0
        assert val == pytest.approx(F.cubic_value(c, f), abs=1e-12)
        assert val >= F.cubic_value(c, grid).max() - 1e-12

    def test_interior_maximum(self):
        # -(f - 0.25)^2 = -f^2 + 0.5 f - 0.0625
        f, v = F.maximize_cubic([-0.0625, 0.5, -1.0, 0.0])
        assert f == pytest.approx(0.25, abs=1e-15)
        assert v == pytest.approx(0.0, abs=1e-15)

    def test_cubic_with_local_max_inside(self):
        # f^3 - f has a local max at -1/sqrt(3) with value 2/(3 sqrt 3); endpoint f=1 gives 0
        f, v = F.maximize_cubic([0.0, -1.0, 0.0, 1.0])
        assert f == pytest.approx(-1 / np.sqrt(3), rel=1e-14)
        assert v == pytest.approx(2 / (3 * np.sqrt(3)), rel=1e-14)

    def test_constant_prefers_smallest_force(self):
        assert F.maximize_cubic([2.0, 0.0, 0.0, 0.0]) == (-1.0, 2.0)

    def test_symmetric_tie_between_endpoints(self):
        f, _ = F.maximize_cubic([0.0, 0.0, 1.0, 0.0])
        assert f == -1.0

    def test_near_degenerate_cubic_term(self):
        f, v = F.maximize_cubic([0.0, 1.0, -1.0, 1e-16])
        assert f == pytest.approx(0.5, abs=1e-12)
        assert v == pytest.approx(0.25, abs=1e-12)

    def test_custom_interval(self):
        f, _ = F.maximize_cubic([0.0, 1.0, 0.0, 0.0], lo=-0.5, hi=0.25)
        assert f == 0.25
        with pytest.raises(DomainError):
            F.maximize_cubic([0, 0, 0, 0], lo=1.0, hi=1.0)

    def test_nonfinite_rejected(self):
        with pytest.raises(DataError):
            F.maximize_cubic_batch(np.array([[0, np.inf, 0, 0]]))


class TestMountainCarFeatures:
    def test_cubic_coefficients_reproduce_q(self, rng):
        fm = F.MountainCarFeatures(F.ProductFeatureSpec(4, 3, 3))
        w = rng.standard_normal(fm.dim)
        p, v = rng.uniform(-1.2, 0.6, 10), rng.uniform(-0.07, 0.07, 10)
        f = rng.uniform(-1, 1, 10)
        c = fm.cubic_coefficients(w, p, v)
        np.testing.assert_allclose(F.cubic_value(c, f), fm(p, v, f) @ w, rtol=1e-12, atol=1e-12)

    def test_lower_force_degree_pads_coefficients(self, rng):
        fm = F.MountainCarFeatures(F.ProductFeatureSpec(3, 2, 1))
        c = fm.cubic_coefficients(rng.standard_normal(fm.dim), np.array([0.0]), np.array([0.0]))
        assert c.shape == (1, 4)
        np.testing.assert_array_equal(c[:, 2:], 0.0)

    def test_max_q_beats_sampled_forces(self, rng):
        fm = F.MountainCarFeatures(F.ProductFeatureSpec(4, 3, 3))
        w = rng.standard_normal(fm.dim)
        states = np.column_stack([rng.uniform(-1.2, 0.6, 50), rng.uniform(-0.07, 0.07, 50)])
        val, force = fm.max_q(w, fm.state_cache(states))
        grid = np.linspace(-1, 1, 401)
        for i in range(50):
            q = fm(np.full(401, states[i, 0]), np.full(401, states[i, 1]), grid) @ w
            assert val[i] >= q.max() - 1e-10
            assert val[i] == pytest.approx(fm(states[i, 0], states[i, 1], force[i]) @ w, abs=1e-10)

    def test_wrong_weight_length(self):
        fm = F.MountainCarFeatures(F.ProductFeatureSpec(2, 2, 3))
        with pytest.raises(StructureError):
            fm.cubic_coefficients(np.zeros(5), 0.0, 0.0)


class TestDesigns:
    def test_product_design_matches_dense(self, rng, monkeypatch):
        monkeypatch.setattr(F, "GRAM_CHUNK", 7)
        fm = F.MountainCarFeatures(F.ProductFeatureSpec(3, 2, 3))
        n = 30
        states = np.column_stack([rng.uniform(-1.2, 0.6, n), rng.uniform(-0.07, 0.07, n)])
        actions = rng.uniform(-1, 1, n)
        design = fm.design(states, actions)
        dense = fm(states[:, 0], states[:, 1], actions)
        y = rng.standard_normal(n)
        w = rng.standard_normal(fm.dim)
        np.testing.assert_allclose(design.rows(0, n), dense, rtol=1e-14)
        np.testing.assert_allclose(design.gram(), dense.T @ dense, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(design.rmatvec(y), dense.T @ y, rtol=1e-12, atol=1e-12)
        np.testing.assert_allclose(design.matvec(w), dense @ w, rtol=1e-12, atol=1e-12)


class TestArrayFeatures:
    def test_max_q_and_table(self, rng):
        table = rng.standard_normal((4, 3, 2))
        fa = F.ArrayFeatures(table)
        w = rng.standard_normal(2)
        q = fa.q_table(w)
        np.testing.assert_allclose(q, np.einsum("sad,d->sa", table, w))
        vals, acts = fa.max_q(w, fa.state_cache([0, 2, 3]))
        np.testing.assert_array_equal(acts, q[[0, 2, 3]].argmax(axis=1))
        np.testing.assert_allclose(vals, q[[0, 2, 3]].max(axis=1))

    def test_rejects_bad_table(self):
        with pytest.raises(StructureError):
            F.ArrayFeatures(np.zeros((2, 2)))
        with pytest.raises(DataError):
            F.ArrayFeatures(np.full((1, 1, 1), np.nan))

    def test_one_hot_layout(self, rng):
        m = M.random_mdp(rng, 3, 2, 2)
        fa = F.tabular_one_hot(m)
        assert fa.dim == 6
        assert fa(2, 1)[2 * 2 + 1] == 1.0
        assert fa(2, 1).sum() == 1.0

"""Gaussian terms, the masked membership layer and epsilon-completeness."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from neurofuzzy import (
    ConfigError,
    GaussianSet,
    InputError,
    MembershipLayer,
    StructuralError,
    check_completeness,
    membership,
    membership_gradients,
)


def ragged_layer():
    """Two attributes: three terms and one term."""
    return MembershipLayer.from_terms([
        [GaussianSet(0.0, 1.0), GaussianSet(1.0, 0.5), GaussianSet(2.0, 2.0)],
        [GaussianSet(-1.0, 0.3)],
    ])


def central_difference(f, x, h):
    return (f(x + h) - f(x - h)) / (2.0 * h)


class TestGaussianSet:
    def test_peak_is_one(self):
        assert GaussianSet(0.3, 0.7)(0.3) == 1.0

    def test_one_width_from_center(self):
        np.testing.assert_allclose(GaussianSet(2.0, 0.5)(2.5), np.exp(-0.5), rtol=1e-15)
        np.testing.assert_allclose(np.exp(-0.5), 0.606531, atol=1e-6)

    def test_nonpositive_width_rejected(self):
        with pytest.raises(ConfigError):
            GaussianSet(0.0, 0.0)
        with pytest.raises(ConfigError):
            GaussianSet(0.0, -1.0)

    def test_non_finite_rejected(self):
        with pytest.raises(InputError):
            GaussianSet(np.nan, 1.0)


class TestMembership:
    def test_values_and_mask(self):
        layer = ragged_layer()
        mu = membership(layer, np.array([[1.0, -1.0], [1.5, -0.7]]))
        assert mu.shape == (2, 2, 3)
        np.testing.assert_allclose(mu[0, 0], [np.exp(-0.5), 1.0, np.exp(-1 / 8)], rtol=1e-15)
        assert mu[0, 1, 0] == 1.0
        np.testing.assert_allclose(mu[1, 1, 0], np.exp(-0.5), rtol=1e-12)
        # absent terms are exactly zero for every input
        assert (mu[:, 1, 1:] == 0.0).all()

    def test_masked_slots_are_inert(self):
        layer = ragged_layer()
        layer.centers[1, 2] = 123.0  # garbage in an absent slot
        layer.widths[1, 2] = -5.0
        mu = membership(layer, np.array([[0.0, 123.0]]))
        assert mu[0, 1, 2] == 0.0
        assert np.isfinite(mu).all()

    def test_bounds_and_symmetry(self):
        rng = np.random.default_rng(42)
        layer = MembershipLayer.random(rng, 5, 4, low=-2, high=2)
        delta = rng.normal(size=(64, 5)) * 3
        for j in range(4):
            c = layer.centers[:, j]
            up = membership(layer, c + delta)[:, :, j]
            down = membership(layer, c - delta)[:, :, j]
            np.testing.assert_allclose(up, down, rtol=1e-13, atol=0)
        mu = membership(layer, rng.normal(size=(256, 5)) * 10)
        assert (mu >= 0).all() and (mu <= 1).all()

    def test_shape_mismatch(self):
        with pytest.raises(StructuralError):
            membership(ragged_layer(), np.zeros((3, 5)))

    def test_non_finite_input(self):
        with pytest.raises(InputError):
            membership(ragged_layer(), np.array([[np.inf, 0.0]]))

    def test_every_attribute_needs_a_term(self):
        with pytest.raises(StructuralError):
            MembershipLayer(np.zeros((2, 2)), np.ones((2, 2)), mask=[[True, False], [False, False]])

    def test_evenly_spaced_neighbours_cross_at_half(self):
        layer = MembershipLayer.evenly_spaced(0.0, 1.0, 3)
        mu = membership(layer, np.array([[0.25]]))
        np.testing.assert_allclose(mu[0, 0, :2], [0.5, 0.5], rtol=1e-12)


class TestMembershipGradients:
    def test_stationary_at_peak(self):
        layer = MembershipLayer.from_terms([[GaussianSet(0.4, 0.2)]])
        dc, dw, dx = membership_gradients(layer, np.array([[0.4]]), np.ones((1, 1, 1)))
        assert dc[0, 0] == 0.0 and dw[0, 0] == 0.0 and dx[0, 0] == 0.0

    def test_zero_upstream(self):
        layer = ragged_layer()
        grads = membership_gradients(layer, np.ones((4, 2)), np.zeros((4, 2, 3)))
        for g in grads:
            assert not g.any()

    def test_finite_differences(self):
        """Analytic partials match central differences within relative 1e-4."""
        rng = np.random.default_rng(42)
        layer = MembershipLayer.random(rng, 3, 3, low=-1, high=1)
        layer.mask[2, 2] = False
        layer.clamp_widths()
        X = rng.uniform(-1.5, 1.5, size=(6, 3))
        up = rng.normal(size=(6, 3, 3))
        dc, dw, dx = membership_gradients(layer, X, up)
        h = 1e-5 * layer.scale[0]

        def loss(lay, batch):
            return float((membership(lay, batch) * up).sum())

        worst = 0.0
        for name, analytic in (("centers", dc), ("widths", dw)):
            for i, j in zip(*np.nonzero(layer.mask)):
                def f(v, i=i, j=j, name=name):
                    twin = layer.copy()
                    getattr(twin, name)[i, j] = v
                    return loss(twin, X)
                num = central_difference(f, getattr(layer, name)[i, j], h)
                worst = max(worst, abs(num - analytic[i, j]) / max(abs(num), abs(analytic[i, j]), 1e-8))
        for b in range(X.shape[0]):
            for i in range(3):
                def f(v, b=b, i=i):
                    Z = X.copy()
                    Z[b, i] = v
                    return loss(layer, Z)
                num = central_difference(f, X[b, i], h)
                worst = max(worst, abs(num - dx[b, i]) / max(abs(num), abs(dx[b, i]), 1e-8))
        assert worst < 1e-4
        assert not dc[2, 2] and not dw[2, 2]

    def test_upstream_shape_checked(self):
        with pytest.raises(StructuralError):
            membership_gradients(ragged_layer(), np.zeros((2, 2)), np.zeros((2, 2, 2)))


class TestCompleteness:
    def test_single_term_at_input_passes(self):
        layer = MembershipLayer.from_terms([[GaussianSet(0.7, 0.1)]])
        for eps in (1e-6, 0.5, 0.999999):
            assert check_completeness(layer, np.array([[0.7]]), eps).complete

    def test_just_outside_inverted_radius_fails(self):
        c, s = 0.2, 0.3
        layer = MembershipLayer.from_terms([[GaussianSet(c, s)], [GaussianSet(c, s)]])
        for eps in (0.05, 0.1, 0.4, 0.9):
            radius = s * np.sqrt(2.0 * np.log(1.0 / eps))
            X = np.array([[c + 1.01 * radius, c + 0.99 * radius]])
            report = check_completeness(layer, X, eps)
            assert report.failing == [(0, 0)]
            assert GaussianSet(c, s)(X[0, 0]) < eps <= GaussianSet(c, s)(X[0, 1])

    def test_empty_batch(self):
        report = check_completeness(ragged_layer(), np.zeros((0, 2)), 0.3)
        assert report.failing == [] and report.complete

    def test_epsilon_range(self):
        for eps in (0.0, 1.0, -0.1, 1.5):
            with pytest.raises(ConfigError):
                check_completeness(ragged_layer(), np.zeros((1, 2)), eps)

    @settings(max_examples=60, deadline=None)
    @given(st.floats(0.001, 0.998), st.floats(0.001, 0.998), st.integers(0, 2**31 - 1))
    def test_monotone_in_epsilon(self, e1, e2, seed):
        e1, e2 = sorted((e1, e2))
        rng = np.random.default_rng(seed)
        layer = MembershipLayer.random(rng, 3, 2)
        X = rng.uniform(-1, 2, size=(20, 3))
        low = set(check_completeness(layer, X, e1).failing)
        high = set(check_completeness(layer, X, e2).failing)
        assert low <= high

    def test_failing_matches_definition(self):
        rng = np.random.default_rng(42)
        layer = ragged_layer()
        X = rng.uniform(-3, 4, size=(50, 2))
        mu = membership(layer, X)
        report = check_completeness(layer, X, 0.2)
        expected = [(b, i) for b in range(50) for i in range(2)
                    if max(mu[b, i, j] for j in np.flatnonzero(layer.mask[i])) < 0.2]
        assert report.failing == expected


class TestLayerStructure:
    def test_add_term_grows_columns(self):
        layer = ragged_layer()
        j = layer.add_term(1, GaussianSet(0.5, 0.1))
        assert j == 1 and layer.max_terms == 3
        j = layer.add_term(0, GaussianSet(3.0, 0.1))
        assert j == 3 and layer.max_terms == 4
        np.testing.assert_array_equal(layer.term_counts, [4, 2])

    def test_width_floor(self):
        layer = MembershipLayer.from_terms([[GaussianSet(0.0, 1.0)]], scale=[2.0])
        layer.widths[0, 0] = -3.0
        layer.clamp_widths()
        assert layer.widths[0, 0] == pytest.approx(2e-4)

    def test_no_upper_clamp_by_default(self):
        layer = MembershipLayer.from_terms([[GaussianSet(0.0, 1.0)]])
        layer.widths[0, 0] = 1e6
        layer.clamp_widths()
        assert layer.widths[0, 0] == 1e6
        layer.max_width = 10.0
        layer.clamp_widths()
        assert layer.widths[0, 0] == 10.0

    def test_round_trip_is_bit_exact(self, tmp_path):
        rng = np.random.default_rng(42)
        layer = MembershipLayer.random(rng, 4, 3, low=-1e3, high=1e-3)
        layer.add_term(2, GaussianSet(1 / 3, np.pi * 1e-7))
        path = tmp_path / "layer.json"
        layer.save(path)
        back = MembershipLayer.load(path)
        np.testing.assert_array_equal(back.mask, layer.mask)
        assert (back.centers == layer.centers).all() and (back.widths == layer.widths).all()
        np.testing.assert_array_equal(back.scale, layer.scale)

    def test_unknown_schema(self):
        doc = ragged_layer().to_dict()
        doc["schema"] = "other/9"
        with pytest.raises(StructuralError):
            MembershipLayer.from_dict(doc)

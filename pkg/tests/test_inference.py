"""TSK forward pass in softmax form, certainty factors and stacking."""

import numpy as np
import pytest

from neurofuzzy import (
    ConfigError,
    GaussianSet,
    InferenceConfig,
    MembershipLayer,
    NeuroFuzzyNetwork,
    RuleBank,
    StructuralError,
    TskHead,
    UsageError,
    defuzzify,
    layer_normalize,
    normalize_firing,
    preliminary_firing,
    stack,
)
from neurofuzzy.inference import CF_RAW, MEAN, SUM, check_tape
from neurofuzzy.membership import squared_deviation
from neurofuzzy.rules import HardSelection
from neurofuzzy.training import check_gradients


def unit_layer():
    return MembershipLayer.from_terms([[GaussianSet(0.0, 1.0), GaussianSet(2.0, 1.0)]] * 2)


def direct_tsk(X, centers, widths, chosen, W, b):
    """Product-of-memberships TSK output with centre-of-area defuzzification."""
    out = np.zeros((X.shape[0], W.shape[1]))
    for n, x in enumerate(X):
        num = np.zeros(W.shape[1])
        den = 0.0
        for u in range(chosen.shape[0]):
            strength = 1.0
            for i, j in enumerate(chosen[u]):
                strength *= GaussianSet(centers[i, j], widths[i, j])(x[i])
            num += strength * (W[u] @ x + b[u])
            den += strength
        out[n] = num / den
    return out


class TestPreliminaryFiring:
    def test_peak_gives_zero(self):
        layer = unit_layer()
        sel = HardSelection.from_chosen(np.array([[0, 1], [1, 0]]), 2)
        w = preliminary_firing(squared_deviation(layer, [[0.0, 2.0]]), sel, SUM)
        assert w[0, 0] == 0.0 and w[0, 1] < 0

    def test_hand_example(self):
        layer = unit_layer()
        sel = HardSelection.from_chosen(np.array([[0, 0]]), 2)
        dev = squared_deviation(layer, [[1.0, 1.0]])
        np.testing.assert_allclose(preliminary_firing(dev, sel, SUM), [[-1.0]], rtol=1e-15)
        np.testing.assert_allclose(preliminary_firing(dev, sel, MEAN), [[-0.5]], rtol=1e-15)

    def test_mean_is_sum_over_attributes(self):
        rng = np.random.default_rng(42)
        layer = MembershipLayer.random(rng, 7, 3)
        bank = RuleBank(11, layer.mask, rng=rng)
        sel = HardSelection.from_chosen(bank.logits.argmax(axis=-1), 3)
        dev = squared_deviation(layer, rng.uniform(size=(9, 7)))
        np.testing.assert_allclose(preliminary_firing(dev, sel, MEAN),
                                   preliminary_firing(dev, sel, SUM) / 7, rtol=1e-15)

    def test_masked_term_reference(self):
        layer = MembershipLayer(np.zeros((1, 2)), np.ones((1, 2)), mask=[[True, False]])
        sel = HardSelection.from_chosen(np.array([[1]]), 2)
        with pytest.raises(StructuralError):
            preliminary_firing(squared_deviation(layer, [[0.0]]), sel, SUM, mask=layer.mask)


class TestDefuzzify:
    def test_single_rule(self):
        rng = np.random.default_rng(42)
        head = TskHead.init(rng, 1, 3, 2)
        X = rng.normal(size=(5, 3))
        np.testing.assert_allclose(defuzzify(X, np.ones((5, 1)), head), head.consequents(X)[:, 0], rtol=1e-15)

    def test_constant_consequents(self):
        rng = np.random.default_rng(42)
        head = TskHead(np.zeros((4, 1, 2)), np.full((4, 1), 0.37))
        p = normalize_firing(rng.normal(size=(6, 4)), 1.0)
        np.testing.assert_allclose(defuzzify(rng.normal(size=(6, 2)), p, head), 0.37, rtol=1e-14)

    def test_shape_mismatch(self):
        head = TskHead(np.zeros((4, 1, 2)), np.zeros((4, 1)))
        with pytest.raises(StructuralError):
            defuzzify(np.zeros((3, 2)), np.full((3, 5), 0.2), head)

    def test_certainty_factor_modes(self):
        head = TskHead(np.zeros((2, 1, 1)), np.array([[1.0], [3.0]]), cf=np.array([1.0, 3.0]))
        p = np.array([[0.5, 0.5]])
        # renormalized weights 0.25/0.75 -> 2.5 ; raw weights 0.5/1.5 -> 5.0
        np.testing.assert_allclose(defuzzify(np.zeros((1, 1)), p, head), [[2.5]])
        np.testing.assert_allclose(defuzzify(np.zeros((1, 1)), p, head, CF_RAW), [[5.0]])


class TestRewriteEquivalence:
    def test_matches_direct_product_form(self):
        """Softmax form equals the product/quotient TSK output on 1000 random systems."""
        rng = np.random.default_rng(42)
        worst = 0.0
        for _ in range(1000):
            c, u, d = rng.integers(1, 5), rng.integers(1, 7), rng.integers(1, 3)
            net = NeuroFuzzyNetwork.build(c, d, u, n_terms=int(rng.integers(1, 4)), rng=rng,
                                          layer=MembershipLayer.random(rng, c, 3))
            X = rng.uniform(-0.2, 1.2, size=(3, c))
            y, tape = net.forward(X)
            oracle = direct_tsk(X, net.layer.centers, net.layer.widths, tape.selection.chosen,
                                net.head.W, net.head.b)
            worst = max(worst, float(np.abs(y - oracle).max()))
        assert worst < 1e-9


class TestForward:
    def config_grid(self):
        for mode in (SUM, MEAN):
            for alpha in (1.0, 1.5):
                for ln in (False, True):
                    for cf in (False, True):
                        yield InferenceConfig(mode, alpha, ln, certainty_factors=cf)

    def test_manual_composition(self):
        rng = np.random.default_rng(42)
        for cfg in self.config_grid():
            net = NeuroFuzzyNetwork.build(3, 2, 5, rng=rng, config=cfg)
            if cfg.certainty_factors:
                net.head.cf = rng.uniform(0.5, 1.5, 5)
            net.ln_gain = rng.uniform(0.5, 1.5, 5)
            X = rng.uniform(size=(4, 3))
            y, tape = net.forward(X)
            w = preliminary_firing(squared_deviation(net.layer, X), tape.selection, cfg.firing_mode)
            if cfg.layer_norm:
                w = layer_normalize(w, net.ln_gain, net.ln_bias)
            p = normalize_firing(w, cfg.alpha)
            np.testing.assert_allclose(y, defuzzify(X, p, net.head), rtol=1e-12, atol=1e-14)
            np.testing.assert_allclose(tape.normalized.sum(axis=1), 1.0, atol=1e-9)

    def test_deterministic_under_seed(self):
        def run():
            rng = np.random.default_rng(3)
            net = NeuroFuzzyNetwork.build(4, 2, 6, estimator="STGE", temperature=0.6,
                                          retain_batches=2, rng=rng)
            X = rng.uniform(size=(5, 4))
            return [net(X, rng=rng) for _ in range(3)]

        for a, b in zip(run(), run()):
            np.testing.assert_array_equal(a, b)

    def test_appendix_scale_is_finite(self):
        rng = np.random.default_rng(42)
        for cfg in self.config_grid():
            if cfg.certainty_factors:
                continue
            layer = MembershipLayer.random(rng, 1600, 3)
            net = NeuroFuzzyNetwork.build(1600, 1, 256, rng=rng, config=cfg, layer=layer)
            y, tape = net.forward(rng.uniform(size=(4, 1600)))
            for arr in (y, tape.deviation, tape.preliminary, tape.activation, tape.normalized):
                assert np.isfinite(arr).all()

    def test_stale_tape(self):
        net = NeuroFuzzyNetwork.build(2, 1, 3)
        _, tape = net.forward(np.zeros((1, 2)))
        check_tape(net, tape)
        net.enforce_constraints()
        with pytest.raises(UsageError):
            check_tape(net, tape)

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            InferenceConfig(alpha=2.0)
        with pytest.raises(ConfigError):
            InferenceConfig(firing_mode="Max")
        with pytest.raises(ConfigError):
            NeuroFuzzyNetwork.build(2, 1, 1, config=InferenceConfig(layer_norm=True))

    def test_round_trip(self):
        rng = np.random.default_rng(42)
        net = NeuroFuzzyNetwork.build(3, 2, 4, rng=rng, estimator="STGE", temperature=0.5, retain_batches=5,
                                      config=InferenceConfig(MEAN, 1.5, True, certainty_factors=True))
        net.select(rng)
        twin = NeuroFuzzyNetwork.from_dict(net.to_dict())
        X = rng.uniform(size=(6, 3))
        np.testing.assert_array_equal(net(X, freeze=True), twin(X, freeze=True))


class TestStack:
    def test_single_block_is_forward(self):
        rng = np.random.default_rng(42)
        net = NeuroFuzzyNetwork.build(3, 2, 4, rng=rng)
        X = rng.uniform(size=(5, 3))
        np.testing.assert_array_equal(stack([net])(X), net(X))

    def test_dimension_mismatch(self):
        with pytest.raises(StructuralError):
            stack([NeuroFuzzyNetwork.build(3, 2, 4), NeuroFuzzyNetwork.build(3, 1, 4)])

    def test_blocks_keep_normalized_firing(self):
        rng = np.random.default_rng(42)
        net = stack([NeuroFuzzyNetwork.build(3, 2, 4, rng=rng),
                     NeuroFuzzyNetwork.build(2, 1, 5, rng=rng, low=-1, high=1,
                                             config=InferenceConfig(alpha=1.5))])
        _, tapes = net.forward(rng.uniform(size=(7, 3)))
        for tape in tapes:
            assert (tape.normalized >= 0).all()
            np.testing.assert_allclose(tape.normalized.sum(axis=1), 1.0, atol=1e-9)

    def test_two_block_gradient(self):
        rng = np.random.default_rng(42)
        net = stack([NeuroFuzzyNetwork.build(3, 2, 4, rng=rng, config=InferenceConfig(layer_norm=True)),
                     NeuroFuzzyNetwork.build(2, 1, 3, rng=rng, low=-1, high=1)])
        result = check_gradients(net, rng.uniform(size=(4, 3)), seed=1)
        assert result.passed(1e-4), result.errors

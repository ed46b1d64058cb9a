import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from intnacl import autodiff as ad
from intnacl.autodiff import Tape
from intnacl.batch import ContrastiveBatch
from intnacl.encoder import Encoder, encode
from intnacl.errors import ConfigError, ShapeError
from intnacl.estimators import EstimatorConfig
from intnacl.losses import (
    PRESETS,
    LossConfig,
    adversarial_weight,
    contrastive_loss,
    intcl_loss,
    intnacl_loss,
    mixnca_loss,
    nacl_loss,
    nca_loss,
    preset,
    robust_loss,
)

from helpers import random_batch, tiny_encoder

G0 = EstimatorConfig("g0")
ID = Encoder.identity(2)
R2 = math.sqrt(0.5)


def single(anchor, positives, negatives, **kw):
    return ContrastiveBatch.from_dense([anchor], [positives], [negatives], **kw)


def brute_contrastive(anchor, pos, negs, t=1.0):
    f = lambda v: np.asarray(v) / np.linalg.norm(v)
    a = f(anchor)
    sp = math.exp(a @ f(pos) / t)
    g = np.mean([math.exp(a @ f(n) / t) for n in negs])
    return -math.log(sp / (sp + len(negs) * g))


class TestContrastive:
    def test_oracle_value(self):
        loss = contrastive_loss(ID, single([1.0, 0.0], [[1.0, 0.0]], [[0.0, 1.0]]), G0).item()
        assert loss == pytest.approx(-math.log(math.e / (math.e + 1)), abs=1e-12)
        assert loss == pytest.approx(0.313262, abs=1e-6)

    def test_symmetric_case(self):
        loss = contrastive_loss(ID, single([1.0, 0.0], [[1.0, 0.0]], [[1.0, 0.0]]), G0).item()
        assert loss == pytest.approx(math.log(2), abs=1e-12)

    def test_negative_permutation(self, rng):
        b = random_batch(rng, N=4, K=6)
        enc = tiny_encoder()
        perm = replace(b, neg_index=b.neg_index[:, ::-1].copy())
        assert contrastive_loss(enc, b, G0).item() == pytest.approx(contrastive_loss(enc, perm, G0).item(), abs=1e-14)

    def test_brute_force_mean(self, rng):
        b = random_batch(rng, N=5, K=3, d=2)
        want = np.mean([brute_contrastive(b.anchors[i], b.positives[i, 0], b.negatives[i], 0.5) for i in range(5)])
        assert contrastive_loss(ID, b, EstimatorConfig("g0", t=0.5)).item() == pytest.approx(want, abs=1e-12)

    def test_requires_single_positive(self, rng):
        with pytest.raises(ShapeError):
            contrastive_loss(tiny_encoder(), random_batch(rng, M=2), G0)


class TestNCA:
    def test_m1_reduces(self, rng):
        b, enc = random_batch(rng), tiny_encoder()
        for G in (G0, EstimatorConfig("g1"), EstimatorConfig("g2")):
            assert abs(nca_loss(enc, b, G).item() - contrastive_loss(enc, b, G).item()) <= 1e-12

    def test_two_positives_example(self):
        b = single([1.0, 0.0], [[1.0, 0.0], [1.0, 0.0]], [[1.0, 0.0]])
        assert nca_loss(ID, b, G0, M=2).item() == pytest.approx(math.log(1.5), abs=1e-12)

    def test_duplicate_positive_lowers_loss(self, rng):
        enc = tiny_encoder(seed=3)
        for _ in range(10):
            b = random_batch(rng, N=3, M=2, K=4)
            dup = replace(b, positives=np.concatenate([b.positives, b.positives[:, :1]], axis=1))
            assert nca_loss(enc, dup, G0).item() < nca_loss(enc, b, G0).item()

    def test_m_must_match_batch(self, rng):
        with pytest.raises(ShapeError):
            nca_loss(tiny_encoder(), random_batch(rng, M=2), G0, M=3)


class TestMixNCA:
    def example_batch(self):
        return single([1.0, 0.0], [[1.0, 0.0], [1.0, 0.0]], [[0.0, 1.0]],
                      fresh_negatives=[[[[0.0, 1.0]]]], mix_partners=[[[0.0, 1.0]]])

    def test_hand_example(self):
        omega = math.exp(R2) / (math.exp(R2) + 1)
        assert omega == pytest.approx(0.669762, abs=1e-6)
        want = 0.3132616875182228 + 0.5 * -math.log(omega) + 0.5 * -math.log(1 - omega)
        got = mixnca_loss(ID, self.example_batch(), G0, lam=0.5).item()
        assert got == pytest.approx(want, abs=1e-12)
        assert got == pytest.approx(1.067649, abs=1e-6)

    def test_m1_reduces(self, rng):
        b, enc = random_batch(rng), tiny_encoder()
        assert abs(mixnca_loss(enc, b, G0, lam=0.7).item() - contrastive_loss(enc, b, G0).item()) <= 1e-12

    def test_lambda_one_collapse(self, rng):
        enc = tiny_encoder(seed=1)
        b = random_batch(rng, N=3, M=2, K=4, mix=True)
        base = contrastive_loss(enc, replace(b, positives=b.positives[:, :1], fresh_pool=None, fresh_index=None,
                                             mix_partners=None), G0).item()
        fresh = ContrastiveBatch.from_dense(b.anchors, b.positives[:, :1], b.fresh_negatives[:, 0])
        omega_term = contrastive_loss(enc, fresh, G0).item()
        assert mixnca_loss(enc, b, G0, lam=1.0).item() == pytest.approx(base + omega_term, abs=1e-12)

    def test_mixing_happens_in_input_space(self):
        # in embedding space the mixture would have similarity 0.5+0.5*0 mapped differently
        b = single([1.0, 0.0], [[2.0, 0.0], [2.0, 0.0]], [[0.0, 1.0]],
                   fresh_negatives=[[[[0.0, 1.0]]]], mix_partners=[[[0.0, 1.0]]])
        # input mixture 0.5*[2,0]+0.5*[0,1] = [1, 0.5] -> cosine 2/sqrt(5)
        s = 2 / math.sqrt(5)
        omega = math.exp(s) / (math.exp(s) + 1)
        want = 0.3132616875182228 - 0.5 * math.log(omega) - 0.5 * math.log(1 - omega)
        assert mixnca_loss(ID, b, G0, lam=0.5).item() == pytest.approx(want, abs=1e-12)

    @pytest.mark.parametrize("lam", [0.0, -0.1, 1.5])
    def test_lambda_range(self, rng, lam):
        with pytest.raises(ConfigError):
            mixnca_loss(tiny_encoder(), random_batch(rng, M=2, mix=True), G0, lam=lam)

    def test_missing_fresh_sets(self, rng):
        with pytest.raises(ShapeError):
            mixnca_loss(tiny_encoder(), random_batch(rng, M=2), G0)


class TestAdversarialWeight:
    @pytest.mark.parametrize("neg, want", [([0.0, 1.0], 0.313262), ([1.0, 0.0], 0.693147),
                                           ([-1.0, 0.0], 0.126928)])
    def test_values(self, neg, want):
        w = adversarial_weight(ID, single([1.0, 0.0], [[1.0, 0.0]], [neg]), G0)
        assert w.shape == (1,) and w[0] == pytest.approx(want, abs=1e-6)

    def test_log_form_exact(self):
        w = adversarial_weight(ID, single([1.0, 0.0], [[1.0, 0.0]], [[-1.0, 0.0]]), G0)
        assert w[0] == pytest.approx(math.log(1 + math.exp(-2)), abs=1e-15)

    def test_equals_per_anchor_loss(self, rng):
        b, enc = random_batch(rng, N=4), tiny_encoder()
        w = adversarial_weight(enc, b, G0)
        for i in range(4):
            one = ContrastiveBatch.from_dense(b.anchors[i:i + 1], b.positives[i:i + 1], b.negatives[i:i + 1])
            assert w[i] == pytest.approx(contrastive_loss(enc, one, G0).item(), abs=1e-12)


class TestRobust:
    def test_zero_strength_attack_is_contrastive(self, rng):
        b, enc = random_batch(rng, N=4), tiny_encoder()
        r = robust_loss(enc, b, b.positives[:, 0], G0, "constant_one").item()
        assert r == pytest.approx(contrastive_loss(enc, b, G0).item(), abs=1e-12)

    def test_weighted_example(self):
        b = single([1.0, 0.0], [[1.0, 0.0]], [[0.0, 1.0]])
        r = robust_loss(ID, b, [[0.0, 1.0]], G0, "adversarial_hat").item()
        # log 2 * (-log(e/(e+1))); the product is 0.2171365, a rounded 0.217138 is off by 1.5e-6
        assert r == pytest.approx(math.log(2) * 0.3132616875182228, abs=1e-12)
        assert r == pytest.approx(0.21713645548070673, abs=1e-12)

    def test_weight_carries_no_gradient(self, rng):
        b, enc = random_batch(rng, N=3), tiny_encoder(seed=7)
        adv = b.positives[:, 0] + 0.05
        w = adversarial_weight(enc, b, G0)

        def grads(**kw):
            tape = Tape()
            ps = enc.watch(tape)
            g = ad.backward(robust_loss(enc, b, adv, G0, "adversarial_hat", params=ps, **kw))
            return [g[p] for p in ps]

        for a, c in zip(grads(), grads(weights=w)):
            np.testing.assert_array_equal(a, c)


class TestIntegrated:
    def test_sum_of_oracles(self):
        b = single([1.0, 0.0], [[1.0, 0.0], [1.0, 0.0]], [[0.0, 1.0]],
                   fresh_negatives=[[[[0.0, 1.0]]]], mix_partners=[[[0.0, 1.0]]])
        cfg = LossConfig(family="MIXNCA", G1=G0, M=2, lam=0.5, alpha=1.0, G2=G0, weighting="adversarial_hat")
        got = intnacl_loss(ID, b, cfg, adv_inputs=[[0.0, 1.0]]).item()
        assert got == pytest.approx(1.067648604582199 + 0.21713645548070673, abs=1e-12)
        assert got == pytest.approx(1.2847850600629056, abs=1e-12)

    @pytest.mark.parametrize("family", ["NCA", "MIXNCA"])
    def test_alpha_zero_is_nacl(self, rng, family):
        b, enc = random_batch(rng, M=3, mix=True), tiny_encoder()
        cfg = LossConfig(family=family, G1=EstimatorConfig("g2"), M=3, lam=0.6)
        assert abs(intnacl_loss(enc, b, cfg).item() - nacl_loss(enc, b, cfg).item()) <= 1e-12

    @pytest.mark.parametrize("name", PRESETS)
    def test_m1_is_intcl(self, rng, name):
        b, enc = random_batch(rng), tiny_encoder()
        cfg = replace(preset(name), M=1)
        adv = b.positives[:, 0] + 0.03
        assert abs(intnacl_loss(enc, b, cfg, adv_inputs=adv).item() - intcl_loss(enc, b, cfg, adv_inputs=adv).item()) \
            <= 1e-12

    def test_simclr_preset_is_contrastive(self, rng):
        b, enc = random_batch(rng), tiny_encoder()
        assert intnacl_loss(enc, b, preset("simclr")).item() == pytest.approx(
            contrastive_loss(enc, b, G0).item(), abs=1e-14)

    def test_alpha_zero_skips_attack(self, rng, monkeypatch):
        import intnacl.losses as L

        def boom(*a, **k):
            raise AssertionError("attack should not run")

        monkeypatch.setattr(L, "make_adv_inputs", boom)
        b, enc = random_batch(rng), tiny_encoder()
        intnacl_loss(enc, b, preset("debiased"))

    def test_generates_adversarial_positive_when_needed(self, rng):
        b, enc = random_batch(rng), tiny_encoder()
        assert np.isfinite(intnacl_loss(enc, b, preset("adv")).item())

    @given(st.integers(0, 2**32 - 1), st.sampled_from(PRESETS))
    def test_strictly_positive(self, seed, name):
        rng = np.random.default_rng(seed)
        cfg = preset(name)
        b = random_batch(rng, N=2, M=cfg.M, K=3, mix=True)
        assert intnacl_loss(tiny_encoder(seed % 5), b, cfg, rng=rng).item() > 0


class TestPresets:
    def test_table(self):
        assert (preset("simclr").G1.kind, preset("simclr").M, preset("simclr").alpha) == ("g0", 1, 0.0)
        assert preset("debiased").G1.kind == "g1" and preset("debiased_hardneg").G1.kind == "g2"
        adv = preset("adv")
        assert (adv.alpha, adv.G2.kind, adv.weighting) == (1.0, "g0", "constant_one")
        ic = preset("intcl_fig1")
        assert (ic.G1.kind, ic.M, ic.alpha, ic.G2.kind, ic.weighting) == ("g2", 1, 1.0, "g2", "adversarial_hat")
        inn = preset("intnacl_fig1")
        assert (inn.family, inn.M, inn.lam, inn.alpha, inn.G2.kind) == ("MIXNCA", 5, 0.5, 1.0, "g2")

    def test_estimator_defaults(self):
        g = preset("debiased_hardneg").G1
        assert (g.tau_plus, g.beta, g.t) == (0.01, 1.0, 1.0)

    def test_unknown_lists_valid(self):
        with pytest.raises(ConfigError, match="simclr"):
            preset("moco")

    def test_overrides_and_temperature(self):
        c = preset("intnacl_fig1", M=3, t=0.5)
        assert c.M == 3 and c.G1.t == 0.5 and c.G2.t == 0.5

    def test_dict_round_trip(self):
        for name in PRESETS:
            c = preset(name)
            assert LossConfig.from_dict(c.to_dict()) == c

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError):
            LossConfig.from_dict({"family": "NCA", "gamma": 1})


class TestOmegaBounds:
    @given(st.integers(0, 2**32 - 1))
    def test_mixnca_terms_finite(self, seed):
        rng = np.random.default_rng(seed)
        b = random_batch(rng, N=2, M=3, K=2, mix=True)
        enc = tiny_encoder(seed % 3)
        assert np.isfinite(mixnca_loss(enc, b, EstimatorConfig("g1", t=0.2), lam=0.9).item())

    def test_embedding_shapes_consistent(self, rng):
        b = random_batch(rng, N=2, M=3, K=2, mix=True)
        z = encode(tiny_encoder(), b.fresh_pool).data
        assert z.shape == (b.fresh_pool.shape[0], 3)

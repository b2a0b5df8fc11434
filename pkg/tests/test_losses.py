import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _support import diversity_loop, kl_quadrature
from divdrive import autodiff as ad
from divdrive import losses as L
from divdrive.autodiff import Tensor, grad_check


# -- trajectory -----------------------------------------------------------

class TestTrajectoryLoss:
    def test_identity(self):
        w = np.random.default_rng(0).normal(size=(4, 2))
        assert L.trajectory_loss(Tensor(w), w).item() == 0.0

    def test_constant_offset(self):
        w = np.random.default_rng(1).normal(size=(4, 2))
        assert L.trajectory_loss(Tensor(w + [1.0, -2.0]), w).item() == pytest.approx(12.0, abs=1e-12)

    def test_loop_oracle(self):
        rng = np.random.default_rng(2)
        for _ in range(20):
            p, e = rng.normal(size=(2, 4, 2))
            ref = sum(abs(p[t, k] - e[t, k]) for t in range(4) for k in range(2))
            assert L.trajectory_loss(Tensor(p), e).item() == pytest.approx(ref, abs=1e-12)

    def test_batch_mean(self):
        rng = np.random.default_rng(3)
        p, e = rng.normal(size=(2, 5, 4, 2))
        per = [L.trajectory_loss(Tensor(p[i]), e[i]).item() for i in range(5)]
        assert L.trajectory_loss(Tensor(p), e).item() == pytest.approx(np.mean(per), abs=1e-12)

    def test_triangle_and_time_order(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            a, b, c = rng.normal(size=(3, 4, 2))
            d = lambda x, y: L.trajectory_loss(Tensor(x), y).item()
            assert d(a, c) <= d(a, b) + d(b, c) + 1e-12
        a = np.arange(8.0).reshape(4, 2)
        assert L.trajectory_loss(Tensor(a[::-1].copy()), a).item() > 0

    def test_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            L.trajectory_loss(Tensor(np.zeros((4, 2))), np.zeros((3, 2)))

    def test_grad(self):
        rng = np.random.default_rng(5)
        e = rng.normal(size=(4, 2))
        for _ in range(20):
            assert grad_check(lambda t: L.trajectory_loss(t, e), rng.normal(size=(4, 2))) < 1e-5


# -- Beta KL ----------------------------------------------------------------

class TestBetaKL:
    def test_identity(self):
        assert L.beta_kl(3.2, 1.7, 3.2, 1.7).item() == 0.0

    def test_beta22_vs_uniform(self):
        # ln 6 - 5/3 by quadrature
        assert L.beta_kl(2.0, 2.0, 1.0, 1.0).item() == pytest.approx(kl_quadrature(2, 2, 1, 1), abs=1e-6)
        assert L.beta_kl(2.0, 2.0, 1.0, 1.0).item() == pytest.approx(0.1251, abs=1e-4)

    def test_random_pairs_vs_quadrature(self):
        rng = np.random.default_rng(6)
        for a1, b1, a2, b2 in rng.uniform(0.5, 10, (50, 4)):
            assert abs(L.beta_kl(a1, b1, a2, b2).item() - kl_quadrature(a1, b1, a2, b2)) < 1e-6

    @settings(max_examples=200, deadline=None)
    @given(st.tuples(*[st.floats(0.5, 10)] * 4))
    def test_non_negative(self, p):
        assert L.beta_kl(*p).item() >= -1e-12

    def test_rejects_non_positive(self):
        with pytest.raises(ValueError, match="positive"):
            L.beta_kl(0.0, 1.0, 1.0, 1.0)

    def test_grad(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            a2, b2 = rng.uniform(0.5, 10, 2)
            p = rng.uniform(0.5, 10, 2)
            assert grad_check(lambda t: L.beta_kl(t[0], t[1], a2, b2), p) < 1e-5


class TestActionLoss:
    def params(self, rng, T=4):
        return rng.uniform(1.1, 8, (T + 1, 2, 2))

    def test_identical(self):
        p = self.params(np.random.default_rng(0))
        assert L.action_loss(Tensor(p), p).item() == 0.0

    def test_current_step_only(self):
        rng = np.random.default_rng(1)
        p = self.params(rng)
        q = p.copy()
        q[0, 0] = [2.0, 5.0]
        k = L.beta_kl(p[0, 0, 0], p[0, 0, 1], 2.0, 5.0).item()
        assert L.action_loss(Tensor(p), q).item() == pytest.approx(k, abs=1e-14)

    def test_future_step_weight(self):
        rng = np.random.default_rng(2)
        p = self.params(rng)
        q = p.copy()
        q[2, 1] = [4.0, 1.5]
        k = L.beta_kl(p[2, 1, 0], p[2, 1, 1], 4.0, 1.5).item()
        assert L.action_loss(Tensor(p), q).item() == pytest.approx(k / 4, abs=1e-14)

    def test_length_mismatch(self):
        rng = np.random.default_rng(3)
        with pytest.raises(ValueError):
            L.action_loss(Tensor(self.params(rng, 4)), self.params(rng, 3))

    def test_grad(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            q = self.params(rng)
            assert grad_check(lambda t: L.action_loss(t, q), self.params(rng)) < 1e-5

    def test_expert_params(self):
        bp = L.expert_beta_params(np.array([-1.0, 0.0, 0.5, 1.0]))
        mean = bp[:, 0] / bp.sum(axis=1)
        assert np.allclose(mean, [0.05, 0.5, 0.75, 0.95])
        assert np.all(bp >= 1.0 - 1e-12)


class TestSubtaskLoss:
    def test_equal_pairs(self):
        f = np.ones((3, 8))
        w = L.LossWeights()
        assert L.subtask_loss(Tensor(f), f, 2.0, 2.0, 0.3, 0.3, w).item() == 0.0

    def test_zero_weights(self):
        w = L.LossWeights(feat=0, speed=0, value=0)
        rng = np.random.default_rng(0)
        assert L.subtask_loss(Tensor(rng.normal(size=8)), rng.normal(size=8), 1.0, 5.0, 2.0, -1.0, w).item() == 0.0

    def test_linear_combination(self):
        w = L.LossWeights()
        # L_F = mean((1,0)^2)=0.5, L_S=1.0, L_V=0.5^2=0.25
        out = L.subtask_loss(Tensor([1.0, 0.0]), [0.0, 0.0], 3.0, 2.0, 0.5, 0.0, w).item()
        assert out == pytest.approx(1.75, abs=1e-14)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            L.subtask_loss(Tensor(np.ones(3)), np.ones(4), 0, 0, 0, 0, L.LossWeights())

    def test_grad(self):
        rng = np.random.default_rng(1)
        ef = rng.normal(size=(2, 6))
        w = L.LossWeights(feat=0.7, speed=1.3, value=0.4)
        for _ in range(20):
            x = rng.normal(size=(2, 8))
            f = lambda t: L.subtask_loss(t[:, :6], ef, t[:, 6], [1.0, 2.0], t[:, 7], [0.1, -0.2], w)
            assert grad_check(f, x) < 1e-5


# -- diversity ---------------------------------------------------------------

class TestDiversityWeightedMap:
    def test_single_constant_map(self):
        s = L.diversity_weighted_map(Tensor(np.full((1, 2, 2), 0.7))).data
        assert np.allclose(s, 0.25, rtol=0, atol=1e-15)

    def test_two_maps(self):
        M = np.array([[[1.0, 1.0]], [[2.0, 0.0]]])
        s = L.diversity_weighted_map(Tensor(M)).data
        e2 = math.exp(2.0)
        assert np.allclose(s[0, 0], [0.5, 0.5], atol=1e-15)
        assert np.allclose(s[1, 0], [e2 / (e2 + 1), 1 / (e2 + 1)], atol=1e-15)
        assert s[1, 0, 0] == pytest.approx(0.8808, abs=1e-4)

    def test_scale_ratio_property(self):
        rng = np.random.default_rng(0)
        M = rng.uniform(0.1, 1.0, (3, 4, 4))
        means = M.reshape(3, -1).mean(axis=1)
        top = int(np.argmax(means))
        M2 = M.copy()
        M2[top] *= 2
        sums = L.diversity_weighted_map(Tensor(M)).data.sum(axis=(1, 2))
        sums2 = L.diversity_weighted_map(Tensor(M2)).data.sum(axis=(1, 2))
        others = [l for l in range(3) if l != top]
        assert np.allclose(sums2[others], sums[others] / 2, rtol=1e-12)
        assert sums2[top] == pytest.approx(1.0, abs=1e-12)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 100_000))
    def test_map_sums_are_scale_factors(self, seed):
        rng = np.random.default_rng(seed)
        n_f, h, w = rng.integers(1, 6), rng.integers(1, 5), rng.integers(1, 5)
        M = rng.uniform(0, 3, (n_f, h, w))
        sums = L.diversity_weighted_map(Tensor(M)).data.sum(axis=(1, 2))
        means = M.reshape(n_f, -1).mean(axis=1)
        assert np.allclose(sums, means / means.max(), rtol=1e-12, atol=1e-15)
        assert np.all((sums > 0) & (sums <= 1 + 1e-12))
        assert sums[np.argmax(means)] == pytest.approx(1.0, abs=1e-12)

    def test_offset_moves_scale_not_softmax(self):
        rng = np.random.default_rng(1)
        M = rng.uniform(0.1, 1.0, (3, 3, 3))
        M2 = M.copy()
        M2[1] += 0.8
        s, s2 = (L.diversity_weighted_map(Tensor(x)).data for x in (M, M2))
        soft = lambda x: x / x.sum()
        for l in range(3):
            assert np.allclose(soft(s[l]), soft(s2[l]), rtol=1e-12)
        assert not np.allclose(s.sum(axis=(1, 2)), s2.sum(axis=(1, 2)))

    def test_degenerate(self):
        with pytest.raises(ValueError, match="degenerate"):
            L.diversity_weighted_map(Tensor(np.zeros((2, 3, 3))))


class TestDiversityLoss:
    def test_single_map_is_minus_one(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            M = rng.uniform(0, 5, (1, rng.integers(1, 6), rng.integers(1, 6)))
            assert L.diversity_loss(Tensor(M)).item() == pytest.approx(-1.0, abs=1e-14)

    def test_two_map_example(self):
        M = np.array([[[1.0, 1.0]], [[2.0, 0.0]]])
        val = L.diversity_loss(Tensor(M)).item()
        assert val == pytest.approx(diversity_loop(M), abs=1e-15)
        assert val == pytest.approx(-1.3808, abs=1e-4)

    def test_triple_loop_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(30):
            M = rng.uniform(0.01, 2.0, (3, 4, 4))
            val = L.diversity_loss(Tensor(M)).item()
            assert abs(val - diversity_loop(M)) < 1e-10
            assert -3 <= val <= -1

    def test_batched_is_mean(self):
        rng = np.random.default_rng(2)
        M = rng.uniform(0, 1, (5, 4, 3, 3))
        per = [diversity_loop(M[i]) for i in range(5)]
        assert L.diversity_loss(Tensor(M)).item() == pytest.approx(np.mean(per), abs=1e-12)

    def test_skip_degenerate_samples(self):
        rng = np.random.default_rng(3)
        M = rng.uniform(0, 1, (3, 4, 3, 3))
        M[1] = 0.0
        expect = (diversity_loop(M[0]) + diversity_loop(M[2])) / 3
        assert L.diversity_loss(Tensor(M), degenerate="skip").item() == pytest.approx(expect, abs=1e-12)
        with pytest.raises(ValueError):
            L.diversity_loss(Tensor(M))

    def test_grad(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            assert grad_check(L.diversity_loss, rng.uniform(0.01, 2.0, (3, 4, 4))) < 1e-5


class TestDiversityBranches:
    def test_zero_weight(self):
        rng = np.random.default_rng(0)
        F = [Tensor(rng.uniform(size=(2, 3, 3))) for _ in range(5)]
        assert L.diversity_loss_branches(F[0], F, 0.0).item() == 0.0

    def test_single_map_stacks(self):
        rng = np.random.default_rng(1)
        F = [Tensor(rng.uniform(size=(1, 3, 3))) for _ in range(6)]
        assert L.diversity_loss_branches(F[0], F[1:], 1.0).item() == pytest.approx(-3.0, abs=1e-13)

    def test_compositional(self):
        rng = np.random.default_rng(2)
        Ft = Tensor(rng.uniform(size=(4, 3, 3)))
        Fc = [Tensor(rng.uniform(size=(4, 3, 3))) for _ in range(5)]
        ref = L.diversity_loss(Ft).item() + L.diversity_loss(Fc[0]).item() + \
            sum(L.diversity_loss(F).item() for F in Fc[1:]) / 4
        assert L.diversity_loss_branches(Ft, Fc, 0.3).item() == pytest.approx(0.3 * ref, abs=1e-13)

    def test_length(self):
        with pytest.raises(ValueError):
            L.diversity_loss_branches(Tensor(np.ones((1, 2, 2))), [Tensor(np.ones((1, 2, 2)))])

    def test_grad(self):
        rng = np.random.default_rng(3)
        Fc = [rng.uniform(0.01, 1, (3, 3, 3)) for _ in range(4)]
        for _ in range(20):
            x = rng.uniform(0.01, 1, (3, 3, 3))
            f = lambda t: L.diversity_loss_branches(t, [t * 0.5] + [Tensor(F) * t for F in Fc], 2.0)
            assert grad_check(f, x) < 1e-5


class TestTotalLoss:
    def test_zero_weights(self):
        w = L.LossWeights(traj=0, ctrl=0, sub=0, div=0)
        assert L.total_loss(2.0, 3.0, 1.0, -1.5, w)[0].item() == 0.0

    def test_unit_weights(self):
        w = L.LossWeights(div=1.0)
        total, parts = L.total_loss(2.0, 3.0, 1.0, -1.5, w)
        assert total.item() == 4.5
        assert parts == {"traj": 2.0, "ctrl": 3.0, "sub": 1.0, "div": -1.5, "total": 4.5}

    def test_recombine_identity(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            w = L.LossWeights(*rng.uniform(0, 2, 8))
            c = rng.normal(size=4)
            _, parts = L.total_loss(*c, w)
            assert L.recombine(parts, w) == parts["total"]

    def test_non_finite(self):
        with pytest.raises(FloatingPointError, match="ctrl"):
            L.total_loss(1.0, float("nan"), 0.0, 0.0, L.LossWeights())

    def test_bad_weight(self):
        with pytest.raises(ValueError):
            L.LossWeights(div=-1.0)

    def test_gradient_linearity(self):
        rng = np.random.default_rng(1)
        x = Tensor(rng.uniform(0.1, 1, (2, 3, 3)), requires_grad=True)
        comps = lambda: (L.trajectory_loss(x[0, :, :2], np.zeros((3, 2))),
                         ad.square(x).sum(), x.exp().mean(), L.diversity_loss(x))
        w = L.LossWeights(traj=0.5, ctrl=2.0, sub=1.5, div=3.0, baseline=0.7)
        total, _ = L.total_loss(*comps(), w)
        total.backward()
        g_total = x.grad.copy()
        expected = np.zeros_like(g_total)
        coeffs = [w.baseline * w.traj, w.baseline * w.ctrl, w.baseline * w.sub, w.div]
        for i, c in enumerate(coeffs):
            ad.zero_grad([x])
            comps()[i].backward()
            expected += c * x.grad
        assert np.allclose(g_total, expected, rtol=1e-12, atol=1e-14)

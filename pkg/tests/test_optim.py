"""Optimizer update rules and the warmup/decay schedule."""

import numpy as np
import pytest

from wordenc.optim import OptimizerState, adam_step, lamb_step, lr_schedule
from wordenc.params import ParameterStore


def store_with(w):
    s = ParameterStore()
    s.add("w", np.asarray(w, dtype=np.float64))
    return s


class TestAdam:
    def test_first_step_unit_gradient(self):
        # bias correction makes m_hat = v_hat = 1, so the step is -lr
        s = store_with([0.0])
        adam_step(s, {"w": np.array([1.0])}, OptimizerState(), lr=0.01, eps=1e-12)
        np.testing.assert_allclose(s["w"].data, [-0.01], atol=1e-10)

    def test_zero_gradient_zero_decay_is_noop(self):
        s = store_with([1.5, -2.0])
        adam_step(s, {"w": np.zeros(2)}, OptimizerState(), lr=0.1, weight_decay=0.0)
        np.testing.assert_allclose(s["w"].data, [1.5, -2.0])

    def test_decoupled_decay_formula(self):
        # g=1, w=2, wd=0.1, lr=0.01 -> delta = -0.01*(1/(1+eps) + 0.2)
        eps = 1e-6
        s = store_with([2.0])
        adam_step(s, {"w": np.array([1.0])}, OptimizerState(), lr=0.01, eps=eps, weight_decay=0.1)
        expected = 2.0 - 0.01 * (1.0 / (1.0 + eps) + 0.2)
        np.testing.assert_allclose(s["w"].data, [expected], atol=1e-12)

    def test_non_finite_gradient_rejected(self):
        s = store_with([1.0])
        state = OptimizerState()
        with pytest.raises(ArithmeticError):
            adam_step(s, {"w": np.array([np.nan])}, state, lr=0.1)
        # step rejected: nothing mutated
        np.testing.assert_allclose(s["w"].data, [1.0])
        assert state.step == 0

    def test_moment_accumulation_matches_reference(self):
        rng = np.random.default_rng(0)
        s = store_with(rng.standard_normal(4))
        w_ref = s["w"].data.copy()
        state = OptimizerState()
        m = np.zeros(4)
        v = np.zeros(4)
        lr, b1, b2, eps = 0.05, 0.9, 0.999, 1e-6
        for step in range(1, 6):
            g = rng.standard_normal(4)
            adam_step(s, {"w": g.copy()}, state, lr=lr, betas=(b1, b2), eps=eps)
            m = b1 * m + (1 - b1) * g
            v = b2 * v + (1 - b2) * g * g
            m_hat = m / (1 - b1**step)
            v_hat = v / (1 - b2**step)
            w_ref = w_ref - lr * m_hat / (np.sqrt(v_hat) + eps)
            np.testing.assert_allclose(s["w"].data, w_ref, atol=1e-12)


class TestLamb:
    def test_zero_weight_norm_gives_plain_step(self):
        # ||w|| = 0 -> phi = 1
        s = store_with([0.0])
        lamb_step(s, {"w": np.array([1.0])}, OptimizerState(), lr=0.01,
                  eps=1e-12, weight_decay=0.0)
        np.testing.assert_allclose(s["w"].data, [-0.01], atol=1e-10)

    def test_trust_ratio_norm_arithmetic(self):
        # w=[3,4], adam direction [1,0], wd=0: phi = 5/1, delta = -lr*[5,0]
        s = store_with([3.0, 4.0])
        state = OptimizerState()
        # gradient [g, 0] makes m_hat/(sqrt(v_hat)+eps) = [~1, 0] on step 1
        lamb_step(s, {"w": np.array([1.0, 0.0])}, state, lr=0.01, eps=1e-12, weight_decay=0.0)
        np.testing.assert_allclose(s["w"].data, [3.0 - 0.05, 4.0], atol=1e-8)

    def test_zero_update_is_noop(self):
        s = store_with([3.0, 4.0])
        lamb_step(s, {"w": np.zeros(2)}, OptimizerState(), lr=0.5, weight_decay=0.0)
        np.testing.assert_allclose(s["w"].data, [3.0, 4.0])

    def test_reduces_to_adam_when_trust_ratio_is_one(self):
        # ||w||=0 forces phi=1 on every tensor, where the two rules coincide
        rng = np.random.default_rng(1)
        grads = [rng.standard_normal(3) for _ in range(4)]

        s_adam, s_lamb = store_with(np.zeros(3)), store_with(np.zeros(3))
        st_adam, st_lamb = OptimizerState(), OptimizerState()
        g0 = grads[0]
        adam_step(s_adam, {"w": g0.copy()}, st_adam, lr=0.0, weight_decay=0.0)
        lamb_step(s_lamb, {"w": g0.copy()}, st_lamb, lr=0.0, weight_decay=0.0)
        # zero lr keeps both at w=0 while the moments advance identically
        for g in grads[1:]:
            adam_step(s_adam, {"w": g.copy()}, st_adam, lr=0.0, weight_decay=0.0)
            lamb_step(s_lamb, {"w": g.copy()}, st_lamb, lr=0.0, weight_decay=0.0)
        np.testing.assert_allclose(st_adam.m["w"], st_lamb.m["w"], atol=1e-15)
        np.testing.assert_allclose(st_adam.v["w"], st_lamb.v["w"], atol=1e-15)

        # and one real step from identical state lands on the same point
        g = rng.standard_normal(3)
        adam_step(s_adam, {"w": g.copy()}, st_adam, lr=0.05, weight_decay=0.0)
        lamb_step(s_lamb, {"w": g.copy()}, st_lamb, lr=0.05, weight_decay=0.0)
        np.testing.assert_allclose(s_adam["w"].data, s_lamb["w"].data, atol=1e-15)


class TestSchedule:
    def test_zero_at_step_zero(self):
        assert lr_schedule(0, 100, 1.0, 0.1) == 0.0

    def test_peak_at_warmup_end(self):
        assert lr_schedule(10, 100, 1.0, 0.1) == pytest.approx(1.0)

    def test_midpoint_of_decay(self):
        # warmup ends at 10; decay midpoint is step 55
        assert lr_schedule(55, 100, 1.0, 0.1) == pytest.approx(0.5)

    def test_zero_at_end(self):
        assert lr_schedule(100, 100, 1.0, 0.1) == pytest.approx(0.0)

    def test_linear_in_both_phases(self):
        assert lr_schedule(5, 100, 2.0, 0.1) == pytest.approx(1.0)
        assert lr_schedule(77.5, 100, 2.0, 0.1) == pytest.approx(0.5)

    def test_bad_warmup_rejected(self):
        with pytest.raises(ValueError):
            lr_schedule(0, 100, 1.0, 1.0)
        with pytest.raises(ValueError):
            lr_schedule(0, 100, 1.0, -0.1)

    def test_step_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            lr_schedule(101, 100, 1.0, 0.1)

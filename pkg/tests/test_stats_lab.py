import math

import numpy as np
import pytest

from frobnet import stats_lab
from frobnet.dag_compiler import DagSpec
from frobnet.errors import RejectedInput, TrainingFailure
from frobnet.gallery import binary_tree_d4, constant_level_l3
from frobnet.net_ir import kappa
from frobnet.oracles import affine_oracle
from frobnet.stats_lab import (
    OptimizerConfig,
    erm_sweep,
    erm_train,
    excess_risk,
    generate_data,
    rademacher_bound,
    rademacher_check,
    schedule_K,
    schedule_exponent,
    scheduled_architecture,
)


def linear_target():
    return DagSpec((("x",), ("f",)), {"f": ("x",)}, {"f": affine_oracle([0.5], 0.0, 2.0, [(-1.0, 1.0)])},
                   {"f": 0.5}, name="linear")


class TestData:
    def test_deterministic(self):
        a = generate_data(binary_tree_d4(), 50, seed=3)
        b = generate_data(binary_tree_d4(), 50, seed=3)
        c = generate_data(binary_tree_d4(), 50, seed=4)
        assert np.array_equal(a.x, b.x) and np.array_equal(a.y, b.y)
        assert not np.array_equal(a.x, c.x)

    def test_ball_and_range(self):
        d = generate_data(binary_tree_d4(), 100_000, seed=0)
        assert np.all(np.linalg.norm(d.x, axis=1) <= 1.0)
        assert np.all(np.abs(d.y) <= 1.0)
        assert len(d) == 100_000

    def test_uniform_noise(self):
        d = generate_data(linear_target(), 20_000, seed=1, noise="uniform", eta=0.5)
        resid = d.y - linear_target().reference(d.x)
        assert np.all(np.abs(resid) <= 0.5) and resid.std() > 0.25
        assert np.all(np.abs(d.y) <= 1.0)

    @pytest.mark.parametrize("kw", [dict(noise="uniform", eta=0.6), dict(noise="gaussian"), dict(n=0)])
    def test_rejects(self, kw):
        args = dict(n=10, seed=0, **kw) if "n" not in kw else dict(seed=0, **kw)
        with pytest.raises(RejectedInput):
            generate_data(linear_target(), **args)

    def test_samples(self):
        d = generate_data(linear_target(), 4, seed=0)
        assert len(d.samples) == 4 and d.samples[0][1] == d.y[0]


class TestSchedule:
    @pytest.mark.parametrize("factory", [binary_tree_d4, constant_level_l3, linear_target])
    def test_exponent_range(self, factory):
        e = schedule_exponent(factory())
        assert 0 < e < 0.5

    def test_binary_tree_value(self):
        # a = 2*2 + 14*2 = 32 at every node, alpha* = 2
        assert schedule_exponent(binary_tree_d4()) == pytest.approx(0.5 * 32 / 40)

    def test_K_increasing(self):
        Ks = [schedule_K(binary_tree_d4(), n) for n in (64, 256, 1024)]
        assert Ks == sorted(Ks) and Ks[0] > 1

    def test_architecture(self):
        W, D = scheduled_architecture(binary_tree_d4(), 100.0)
        assert D == 12 and W >= 1
        assert scheduled_architecture(binary_tree_d4(), 100.0, min_width=50)[0] >= 50


FAST = OptimizerConfig(epochs=30, test_size=256, mc_count=512)


class TestErm:
    def test_zero_budget_predicts_zero(self):
        d = generate_data(binary_tree_d4(), 64, seed=0)
        res = erm_train(d, 4, 2, 0.0, FAST)
        assert res.empirical_risk == pytest.approx(float(np.mean(d.y ** 2)), abs=1e-15)
        assert kappa(res.core) == 0.0

    def test_kappa_trace_within_budget(self):
        d = generate_data(binary_tree_d4(), 128, seed=1)
        K = 3.0
        res = erm_train(d, 8, 3, K, FAST)
        assert len(res.optimizer_trace) == FAST.epochs + 1
        assert max(t["kappa"] for t in res.optimizer_trace) <= K + 1e-9
        assert kappa(res.core) <= K + 1e-9
        assert res.K_used == K

    def test_learns_linear_target(self):
        d = generate_data(linear_target(), 64, seed=0)
        res = erm_train(d, 16, 2, 4.0, OptimizerConfig(lr=0.1, decay=0.99))
        assert res.empirical_risk <= 1e-3

    def test_deterministic(self):
        d = generate_data(binary_tree_d4(), 64, seed=2)
        a = erm_train(d, 4, 2, 2.0, FAST)
        b = erm_train(d, 4, 2, 2.0, FAST)
        assert a.optimizer_trace == b.optimizer_trace
        assert a.excess_risk_estimate == b.excess_risk_estimate

    def test_divergence(self, monkeypatch):
        def broken(weights, biases, *args):
            weights[-1][:] = np.nan

        monkeypatch.setattr(stats_lab._kernels, "sgd_epoch", broken)
        d = generate_data(binary_tree_d4(), 32, seed=0)
        with pytest.raises(TrainingFailure) as info:
            erm_train(d, 4, 2, 2.0, FAST)
        assert len(info.value.trace) == 2

    @pytest.mark.parametrize("W,D,K", [(0, 2, 1.0), (2, 0, 1.0), (2, 2, -1.0)])
    def test_rejects(self, W, D, K):
        d = generate_data(linear_target(), 8, seed=0)
        with pytest.raises(RejectedInput):
            erm_train(d, W, D, K, FAST)

    def test_sweep_rows(self):
        rows = erm_sweep(linear_target(), [16, 32], [0, 1], FAST, width=4, depth=2)
        assert [(r["n"], r["seed"]) for r in rows] == [(16, 0), (16, 1), (32, 0), (32, 1)]
        assert all(r["W"] == 4 and r["D"] == 2 for r in rows)


class TestExcessRisk:
    def test_exact_target_has_zero_excess(self):
        spec = binary_tree_d4()
        est, se = excess_risk(spec.reference, spec, 2048, seed=0)
        assert est == 0.0 and se == 0.0

    def test_noise_cancels_for_exact_target(self):
        spec = linear_target()
        assert excess_risk(spec.reference, spec, 1024, 0, "uniform", 0.3).estimate == pytest.approx(0.0, abs=1e-15)

    def test_zero_predictor(self):
        spec = binary_tree_d4()
        ex = excess_risk(lambda x: np.zeros(len(x)), spec, 4096, seed=1)
        d = generate_data(spec, 4096, 1)
        assert ex.estimate == pytest.approx(float(np.mean(d.y ** 2)))
        assert ex.count == 4096


class TestRademacher:
    def test_bound_value(self):
        assert rademacher_bound(10, 4.0, 256) == pytest.approx((math.sqrt(20 * math.log(2)) + 1) * 4 / 16)

    def test_zero_budget(self):
        res = rademacher_check(4, 2, 0.0, 32, epochs=5)
        assert res.estimate == 0.0 and res.bound == 0.0 and res.ok

    def test_linear_in_K(self):
        a = rademacher_check(4, 2, 1.0, 64, seed=5, draws=2, epochs=10)
        b = rademacher_check(4, 2, 3.0, 64, seed=5, draws=2, epochs=10)
        assert b.estimate == pytest.approx(3 * a.estimate, rel=1e-12)

    def test_estimate_below_bound(self):
        est, bound = rademacher_check(4, 3, 2.0, 128, draws=3, epochs=50)
        assert 0 < est <= bound

    def test_bound_ignores_width(self):
        small = rademacher_check(4, 2, 1.0, 64, seed=1, draws=3, epochs=100)
        large = rademacher_check(8, 2, 1.0, 64, seed=1, draws=3, epochs=100)
        assert large.bound == small.bound
        assert large.estimate <= large.bound

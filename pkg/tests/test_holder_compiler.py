import numpy as np
import pytest

from frobnet.errors import BudgetInfeasible, OracleInconsistency, RejectedInput, SizeLimitExceeded
from frobnet.gallery import quadratic_2d_target, square_target
from frobnet.holder_compiler import (
    choose_k,
    compile_holder,
    compile_holder_for_budget,
    grid_resolution,
    holder_error_bound,
    nominal_error_bound,
    predict_holder_bound,
    predict_weights,
    range_normalize,
    rate_exponent,
    taylor_coefficients,
)
from frobnet.net_ir import evaluate, kappa
from frobnet.oracles import FunctionOracle, polynomial_oracle, scaled_sine_oracle


class TestParameters:
    @pytest.mark.parametrize("k,alpha,N", [(10, 2.0, 10), (3, 1.0, 9), (2, 0.5, 16), (7, 2.0, 7), (1, 0.3, 1)])
    def test_grid_resolution(self, k, alpha, N):
        assert grid_resolution(k, alpha) == N

    @pytest.mark.parametrize("d,r,alpha,want", [(1, 1, 2.0, 4 / 7), (2, 1, 2.0, 0.25), (1, 0, 1.0, 0.4)])
    def test_rate_exponent(self, d, r, alpha, want):
        assert rate_exponent(d, r, alpha) == pytest.approx(want, rel=1e-15)

    def test_nominal_bound_value(self):
        # d=2, r=1, alpha=2, N=k=10: 4*2/100 + 6*4*3*2/100
        assert nominal_error_bound(2, 1, 2.0, 10, 10) == pytest.approx(0.08 + 1.44)

    def test_certified_bound_dominates_nominal_shape(self):
        for d, r in [(1, 0), (1, 1), (2, 1), (3, 2)]:
            assert holder_error_bound(d, r, 2.0, 5, 5, 1.0) >= nominal_error_bound(d, r, 2.0, 5, 5)


class TestCompile:
    @pytest.mark.parametrize("k", [2, 5, 9])
    def test_square_target(self, k):
        o = square_target()
        res = compile_holder(o, k)
        x = np.linspace(0, 1, 2001)[:, None]
        err = np.max(np.abs(evaluate(res.network, x)[:, 0] - o(x)))
        assert err <= res.error_bound
        assert err <= nominal_error_bound(1, 1, 2.0, res.chosen_N, k)
        assert kappa(res.network) <= res.network.bound * (1 + 1e-12)
        assert res.chosen_N == grid_resolution(k, 2.0)
        assert res.network.depth == 4

    def test_two_dimensional(self):
        o = quadratic_2d_target()
        res = compile_holder(o, 4)
        g = np.linspace(0, 1, 41)
        x = np.array(np.meshgrid(g, g)).reshape(2, -1).T
        assert np.max(np.abs(evaluate(res.network, x)[:, 0] - o(x))) <= res.error_bound
        assert res.network.nnz <= predict_weights(2, 1, res.chosen_N, 4)
        assert res.network.bound == pytest.approx(predict_holder_bound(o, 4), rel=1e-12)

    def test_rough_target(self):
        o = scaled_sine_oracle(0.5, 2.0, [1.0], 0.0, 0.5)
        res = compile_holder(o, 3)
        x = np.linspace(0, 1, 1001)[:, None]
        assert np.max(np.abs(evaluate(res.network, x)[:, 0] - o(x))) <= res.error_bound

    def test_size_cap(self):
        with pytest.raises(SizeLimitExceeded) as info:
            compile_holder(quadratic_2d_target(), 20)
        assert info.value.predicted_weights > info.value.cap

    def test_requires_unit_cube(self):
        o = polynomial_oracle([(1.0, (1,))], 1, 2.0, box=[(-1.0, 1.0)])
        with pytest.raises(RejectedInput):
            compile_holder(o, 2)


class TestBudget:
    def test_below_smallest_bound(self):
        o = square_target()
        with pytest.raises(BudgetInfeasible) as info:
            compile_holder_for_budget(o, 1e5)
        assert info.value.minimal_K == pytest.approx(predict_holder_bound(o, 1))

    def test_chosen_k_is_largest_feasible(self):
        o = square_target()
        K = 1e9
        k = choose_k(o, K)
        assert predict_holder_bound(o, k) <= K < predict_holder_bound(o, k + 1)
        res = compile_holder_for_budget(o, K)
        assert res.certificate.budget == K and kappa(res.network) <= K

    def test_monotone_in_budget(self):
        o = square_target()
        ks = [choose_k(o, K) for K in (1e7, 1e8, 1e9, 1e10)]
        assert ks == sorted(ks)


class TestCoefficients:
    def test_values(self):
        o = square_target()
        c = taylor_coefficients(o, 2)
        assert c[((1,), (0,))] == 0.25
        assert c[((1,), (1,))] == 1.0

    def test_inconsistent_oracle(self):
        o = FunctionOracle(eval=lambda x: 5 * x[:, 0], alpha=1.0, dim=1, holder_norm_bound=1.0)
        with pytest.raises(OracleInconsistency):
            taylor_coefficients(o, 4)


class TestRangeNormalize:
    def test_roundtrip(self):
        o = polynomial_oracle([(0.5, (1, 1))], 2, 2.0, box=[(-2.0, 2.0)] * 2)
        h, den = range_normalize(o, 2.0, 2.0)
        x = np.random.default_rng(0).uniform(-2, 2, (100, 2))
        u = den.to_unit(x)
        assert np.all((u >= 0) & (u <= 1))
        assert np.allclose(den.output(h(u)), o(x), atol=1e-13)
        assert np.allclose(den.to_unit_output(o(x)), h(u), atol=1e-13)
        assert np.allclose(den.to_original(u), x, atol=1e-14)

    def test_values_in_unit_interval(self):
        o = polynomial_oracle([(1.0, (1,))], 1, 2.0, box=[(-1.0, 1.0)])
        h, _ = range_normalize(o, 1.0, 1.0)
        v = h(np.linspace(0, 1, 11)[:, None])
        assert v.min() == 0.0 and v.max() == 1.0

    def test_rejects_nonpositive_range(self):
        with pytest.raises(RejectedInput):
            range_normalize(square_target(), 0.0, 1.0)


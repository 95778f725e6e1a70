import math

import numpy as np
import pytest
from scipy.stats import qmc

from frobnet.errors import RejectedInput
from frobnet.net_ir import evaluate, kappa
from frobnet.primitives import (
    PRODUCT_BOUND,
    PrimitiveSpec,
    build_hat,
    build_hat_product,
    build_monomial,
    build_product,
    build_shift,
    build_square,
    build_taylor_patch,
    hat_product_reference,
    hat_reference,
    monomial_net,
    monomial_nominal_bound,
    patch_depth,
    patch_reference,
    predict_patch_bound,
    square_kappa,
)


class TestSquare:
    @pytest.mark.parametrize("k", [1, 2, 3, 7, 16])
    def test_error_and_kappa(self, k):
        net, cert = build_square(k)
        x = np.linspace(0, 1, 4001)[:, None]
        err = np.max(np.abs(evaluate(net, x)[:, 0] - x[:, 0] ** 2))
        assert err <= 1 / (2 * k * k) + 1e-15
        assert cert.kappa == pytest.approx(square_kappa(k), rel=1e-14)
        assert cert.kappa <= 3.0

    def test_k1_kappa_is_three(self):
        assert kappa(build_square(1)[0]) == pytest.approx(3.0, abs=1e-12)

    def test_exact_at_origin(self):
        net, _ = build_square(4)
        assert evaluate(net, [[0.0]])[0] == 0.0

    def test_bad_k(self):
        with pytest.raises(RejectedInput):
            build_square(0)


class TestProduct:
    @pytest.mark.parametrize("k", [1, 5, 10])
    def test_error_and_kappa(self, k):
        net, cert = build_product(k)
        g = np.linspace(-1, 1, 81)
        x = np.array(np.meshgrid(g, g)).reshape(2, -1).T
        err = np.max(np.abs(evaluate(net, x)[:, 0] - x[:, 0] * x[:, 1]))
        assert err <= 3 / k ** 2
        assert cert.kappa <= PRODUCT_BOUND
        assert net.depth == 2 and net.width == 6 * k

    def test_exact_zeros_on_axes(self):
        net, _ = build_product(7)
        t = np.random.default_rng(0).uniform(-1, 1, 500)
        z = np.zeros_like(t)
        assert np.all(evaluate(net, np.c_[t, z]) == 0.0)
        assert np.all(evaluate(net, np.c_[z, t]) == 0.0)

    def test_output_clipped(self):
        net, _ = build_product(2)
        assert np.all(np.abs(evaluate(net, np.random.default_rng(1).uniform(-1, 1, (300, 2)))) <= 1)


class TestMonomial:
    @pytest.mark.parametrize("d,k", [(2, 8), (3, 8), (4, 6)])
    def test_error_and_shape(self, d, k):
        net, cert = build_monomial(d, k)
        x = qmc.Sobol(d, seed=d).random(2048) * 2 - 1
        err = np.max(np.abs(evaluate(net, x)[:, 0] - np.prod(x, axis=1)))
        assert err <= 6 * d / k ** 2
        assert net.depth == 2 * math.ceil(math.log2(d))
        assert net.width <= 6 * d * k
        assert cert.kappa <= monomial_nominal_bound(d)

    def test_arity_one_rejected(self):
        with pytest.raises(RejectedInput):
            build_monomial(1, 3)

    def test_slots_permute_inputs(self):
        a = monomial_net(3, 5, 4, (0, 1, 2))
        b = monomial_net(3, 5, 4, (2, 0, 3))
        x = np.random.default_rng(2).uniform(-1, 1, (50, 3))
        assert np.allclose(evaluate(a, x), evaluate(b, x), atol=3 * 6 / 25)

    def test_bad_slots(self):
        with pytest.raises(RejectedInput):
            monomial_net(2, 3, 4, (1, 1))


class TestHatsAndShifts:
    @pytest.mark.parametrize("N,n", [(1, 0), (3, 1), (4, 4)])
    def test_hat_matches_reference(self, N, n):
        net, _ = build_hat(N, n)
        x = np.linspace(-0.5, 1.5, 801)
        assert np.allclose(evaluate(net, x[:, None])[:, 0], hat_reference(N * x - n), atol=1e-14)

    def test_clamped_boundary_hat(self):
        net, _ = build_hat(4, 0, clamped=True)
        x = np.linspace(-1, 2, 301)
        want = hat_reference(4 * np.clip(x, 0, 1))
        assert np.allclose(evaluate(net, x[:, None])[:, 0], want, atol=1e-14)

    def test_hat_product_columns(self):
        net, _ = build_hat_product(3, (1, 2))
        x = np.random.default_rng(3).random((100, 2))
        vals = evaluate(net, x)
        assert np.allclose(np.prod(vals, axis=1), hat_product_reference(x, 3, (1, 2)), atol=1e-14)

    def test_shift(self):
        net, cert = build_shift(2, 5)
        x = np.linspace(-1, 2, 31)[:, None]
        assert np.allclose(evaluate(net, x)[:, 0], x[:, 0] - 0.4, atol=1e-14)
        assert cert.kappa <= 2 * math.sqrt(15)

    def test_grid_index_out_of_range(self):
        with pytest.raises(RejectedInput):
            build_hat(3, 4)


class TestTaylorPatch:
    @pytest.mark.parametrize("n,s,N,d,r", [((1,), (1,), 3, 1, 1), ((1, 2), (0, 1), 3, 2, 1), ((0, 0), (0, 0), 2, 2, 1)])
    def test_error_and_bound(self, n, s, N, d, r):
        k = 12
        net, cert = build_taylor_patch(n, s, N, k, d, r)
        x = np.random.default_rng(4).random((2000, d))
        err = np.max(np.abs(evaluate(net, x)[:, 0] - patch_reference(x, N, n, s)))
        t = d + r
        assert err <= 6 * t / k ** 2
        assert net.depth == patch_depth(d, r)
        assert cert.kappa <= predict_patch_bound(d, r, sum(s), N, k) * (1 + 1e-12)
        assert cert.kappa <= cert.nominal_bound

    def test_zero_outside_support(self):
        net, _ = build_taylor_patch((0, 0), (1, 0), 4, 10, 2, 1)
        x = np.random.default_rng(5).uniform(0.3, 1.0, (200, 2))
        assert np.all(evaluate(net, x) == 0.0)

    def test_order_too_high(self):
        with pytest.raises(RejectedInput):
            build_taylor_patch((0,), (2,), 2, 3, 1, 1)


class TestPrimitiveSpec:
    def test_build_dispatch(self):
        net, cert = PrimitiveSpec("square", k=3).build()
        assert net.width == 3

    @pytest.mark.parametrize("kw", [dict(kind="cube"), dict(kind="square", k=0), dict(kind="monomial", d=1)])
    def test_rejects(self, kw):
        with pytest.raises(RejectedInput):
            PrimitiveSpec(**kw)

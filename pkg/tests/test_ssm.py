"""Kernel-level tests: discretization, dual execution modes, scan monoid."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ssmlab import kernels
from ssmlab import ssm
from ssmlab.autodiff import Tensor, backward, param
from ssmlab.errors import ContractError, DimensionError
from ssmlab.ssm import (
    LtiSsmParams,
    SelectiveSsmParams,
    associative_scan,
    discretize_zoh,
    fft_causal_conv,
    lti_convolutional,
    lti_kernel,
    lti_recurrent,
    scan_combine,
    selective_recurrent,
    selective_scan,
)


def rand_lti(C, N, seed, discretization="zoh"):
    rng = np.random.default_rng(seed)
    return LtiSsmParams(
        a=param(-(rng.random((C, N)) * 3.0 + 0.1)),
        b=param(rng.standard_normal((C, N))),
        c=param(rng.standard_normal((C, N)) / np.sqrt(N)),
        delta=param(rng.random(C) * 0.5 + 0.01),
        discretization=discretization,
    )


def rand_selective(C, N, seed, scale=1.0):
    rng = np.random.default_rng(seed)
    return SelectiveSsmParams(
        a=param(-(rng.random((C, N)) * 3.0 + 0.1)),
        w1=param(rng.standard_normal((C, N)) * scale / np.sqrt(C)),
        b1=param(rng.standard_normal(N) * 0.2),
        w2=param(rng.standard_normal((C, N)) * scale / np.sqrt(C)),
        b2=param(rng.standard_normal(N) * 0.2),
        w3=param(rng.standard_normal((C, C)) * scale / np.sqrt(C)),
        b3=param(rng.standard_normal(C) * 0.2),
    )


def selective_tensors(p):
    return [p.a, p.w1, p.b1, p.w2, p.b2, p.w3, p.b3]


class TestDiscretizeZoh:
    def test_zero_state_matrix_limit(self):
        abar, bbar = discretize_zoh(Tensor(np.zeros(4)), Tensor(np.full(4, 2.0)), Tensor(0.3))
        assert np.allclose(abar.data, 1.0)
        assert np.allclose(bbar.data, 0.3 * 2.0)

    def test_analytic_exponential(self):
        abar, _ = discretize_zoh(Tensor([-1.0]), Tensor([1.0]), Tensor(np.log(2.0)))
        assert abs(abar.data[0] - 0.5) < 1e-14

    def test_bbar_against_ode_integration(self):
        # Integrate h' = a h + b u with u = 1 held constant over one step of
        # length 1 (RK4, fine grid); h(1) equals bbar for h(0) = 0.
        a, b = -1.0, 1.0
        h, n = 0.0, 20000
        dt = 1.0 / n
        for _ in range(n):
            f = lambda hh: a * hh + b
            k1 = f(h)
            k2 = f(h + 0.5 * dt * k1)
            k3 = f(h + 0.5 * dt * k2)
            k4 = f(h + dt * k3)
            h += dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        _, bbar = discretize_zoh(Tensor([a]), Tensor([b]), Tensor(1.0))
        assert abs(bbar.data[0] - (1.0 - np.exp(-1.0))) < 1e-14
        assert abs(bbar.data[0] - h) < 1e-12

    def test_series_branch_continuity(self):
        # phi1 crosses its series threshold smoothly
        z = np.array([-2e-6, -9.9e-7, -1e-12, 0.0, 1e-12, 9.9e-7, 2e-6])
        vals = kernels.phi1(z)
        expect = np.array([float(np.expm1(v)) / v if v != 0 else 1.0 for v in z])
        assert np.allclose(vals, expect, rtol=0, atol=1e-15)

    def test_nonpositive_delta_rejected(self):
        with pytest.raises(ContractError, match="delta"):
            discretize_zoh(Tensor([-1.0]), Tensor([1.0]), Tensor(0.0))


class TestLtiModes:
    def test_memoryless_zero_abar(self):
        # abar = 0 makes the map y_t = C bbar x_t exactly
        rng = np.random.default_rng(3)
        C, N, L = 3, 4, 6
        abar = np.zeros((C, N))
        bbar = rng.standard_normal((C, N))
        cmat = rng.standard_normal((C, N))
        x = rng.standard_normal((1, L, C))
        y = ssm._lti_scan_op(Tensor(abar), Tensor(bbar), Tensor(cmat), Tensor(x))
        expect = np.einsum("cn,cn,blc->blc", cmat, bbar, x)
        assert np.allclose(y.data, expect, atol=1e-14)

    def test_first_output_ignores_abar(self):
        p1 = rand_lti(2, 3, seed=10)
        p2 = rand_lti(2, 3, seed=10)
        p2.a = param(p2.a.data * 0.1)
        x = np.random.default_rng(4).standard_normal((1, 5, 2))
        y1 = lti_recurrent(p1, Tensor(x)).data
        # different abar (via a) but identical bbar requires matched delta*b;
        # instead check t=1 equals C bbar x_1 analytically
        abar, bbar = p1.discretize()
        expect = np.einsum("cn,cn,c->c", p1.c.data, bbar.data, x[0, 0])
        assert np.allclose(y1[0, 0], expect, atol=1e-13)

    @pytest.mark.parametrize("L", [1, 2, 3, 16, 256])
    def test_recurrent_matches_convolutional(self, L):
        p = rand_lti(3, 5, seed=L)
        x = np.random.default_rng(L + 1).standard_normal((2, L, 3))
        yr = lti_recurrent(p, Tensor(x)).data
        yc = lti_convolutional(p, Tensor(x)).data
        assert np.max(np.abs(yr - yc)) < 1e-8

    def test_shift_equivariance(self):
        p = rand_lti(2, 4, seed=9)
        rng = np.random.default_rng(11)
        x = rng.standard_normal((1, 12, 2))
        s = 3
        shifted = np.concatenate([np.zeros((1, s, 2)), x[:, :-s]], axis=1)
        y = lti_recurrent(p, Tensor(x)).data
        ys = lti_recurrent(p, Tensor(shifted)).data
        assert np.array_equal(ys[:, s:], y[:, : 12 - s])  # exact: zero prefix keeps h = 0
        yc = lti_convolutional(p, Tensor(shifted)).data
        assert np.max(np.abs(yc[:, s:] - y[:, : 12 - s])) < 1e-12

    def test_dimension_mismatch(self):
        p = rand_lti(3, 4, seed=2)
        with pytest.raises(DimensionError):
            lti_recurrent(p, Tensor(np.zeros((1, 5, 2))))

    def test_grads_match_finite_differences(self):
        from helpers import check_grads

        p = rand_lti(2, 3, seed=21)
        x = param(np.random.default_rng(22).standard_normal((1, 5, 2)))
        w = Tensor(np.random.default_rng(23).standard_normal((1, 5, 2)))
        check_grads(lambda: (lti_recurrent(p, x) * w).sum(), [p.a, p.b, p.c, p.delta, x], rtol=2e-5)
        check_grads(lambda: (lti_convolutional(p, x) * w).sum(), [p.a, p.b, p.c, p.delta, x], rtol=2e-5)

    def test_bilinear_mode_matches_recurrence_oracle(self):
        p = rand_lti(1, 2, seed=31, discretization="bilinear")
        x = np.random.default_rng(32).standard_normal((1, 8, 1))
        abar, bbar = p.discretize()
        # dense reference recurrence
        h = np.zeros(2)
        ys = []
        for t in range(8):
            h = abar.data[0] * h + bbar.data[0] * x[0, t, 0]
            ys.append(np.dot(p.c.data[0], h))
        y = lti_recurrent(p, Tensor(x)).data
        assert np.allclose(y[0, :, 0], ys, atol=1e-13)


class TestLtiKernel:
    def test_k0_is_c_bbar(self):
        p = rand_lti(2, 3, seed=40)
        K = lti_kernel(p, 4).data
        _, bbar = p.discretize()
        assert np.allclose(K[:, 0], np.sum(p.c.data * bbar.data, axis=1), atol=1e-14)

    def test_geometric_for_single_state(self):
        p = rand_lti(1, 1, seed=41)
        abar, bbar = p.discretize()
        lam = abar.data[0, 0]
        K = lti_kernel(p, 6).data[0]
        expect = p.c.data[0, 0] * bbar.data[0, 0] * lam ** np.arange(6)
        assert np.allclose(K, expect, atol=1e-14)

    def test_against_dense_matrix_powers(self):
        p = rand_lti(2, 4, seed=42)
        abar, bbar = p.discretize()
        K = lti_kernel(p, 8).data
        for c in range(2):
            Ad = np.diag(abar.data[c])
            for i in range(8):
                expect = p.c.data[c] @ np.linalg.matrix_power(Ad, i) @ bbar.data[c]
                assert abs(K[c, i] - expect) < 1e-12

    def test_invalid_length(self):
        with pytest.raises(ContractError):
            lti_kernel(rand_lti(1, 1, seed=43), 0)


class TestFftConv:
    def test_impulse_response(self):
        rng = np.random.default_rng(50)
        K = rng.standard_normal((3, 7))
        x = np.zeros((1, 7, 3))
        e = rng.standard_normal(3)
        x[0, 0] = e
        y = fft_causal_conv(Tensor(K), Tensor(x)).data
        assert np.allclose(y[0], (K * e[:, None]).T, atol=1e-12)

    def test_constant_kernel_constant_input(self):
        c, xv, L = 0.7, 1.3, 9
        K = np.full((1, L), c)
        x = np.full((1, L, 1), xv)
        y = fft_causal_conv(Tensor(K), Tensor(x)).data
        expect = c * xv * np.arange(1, L + 1)
        assert np.allclose(y[0, :, 0], expect, atol=1e-12)

    def test_no_circular_wraparound(self):
        rng = np.random.default_rng(51)
        K = rng.standard_normal((1, 5))
        x = rng.standard_normal((1, 5, 1))
        y = fft_causal_conv(Tensor(K), Tensor(x)).data[0, :, 0]
        direct = np.array([sum(K[0, i] * x[0, t - i, 0] for i in range(t + 1)) for t in range(5)])
        assert np.allclose(y, direct, atol=1e-12)

    def test_grads(self):
        from helpers import check_grads

        k = param(np.random.default_rng(52).standard_normal((2, 4)))
        x = param(np.random.default_rng(53).standard_normal((2, 4, 2)))
        w = Tensor(np.random.default_rng(54).standard_normal((2, 4, 2)))
        check_grads(lambda: (fft_causal_conv(k, x) * w).sum(), [k, x], rtol=1e-5)


class TestScanMonoid:
    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=50, deadline=None)
    def test_combine_associative(self, seed):
        rng = np.random.default_rng(seed)
        p, q, r = ((rng.standard_normal(4), rng.standard_normal(4)) for _ in range(3))
        left = scan_combine(scan_combine(p, q), r)
        right = scan_combine(p, scan_combine(q, r))
        for lhs, rhs in zip(left, right):
            assert np.max(np.abs(lhs - rhs)) < 1e-12

    def test_scan_length_one(self):
        a = Tensor(np.full((1, 1, 2), 0.5))
        b = Tensor(np.ones((1, 1, 2)))
        h = associative_scan(a, b, axis=1)
        assert np.array_equal(h.data, b.data)

    def test_identity_multiplier_gives_prefix_sums(self):
        rng = np.random.default_rng(60)
        b = rng.standard_normal((2, 9, 3))
        h = associative_scan(Tensor(np.ones_like(b)), Tensor(b), axis=1)
        assert np.allclose(h.data, np.cumsum(b, axis=1), atol=1e-12)

    def test_scan_matches_sequential_fold(self):
        rng = np.random.default_rng(61)
        a = rng.standard_normal((1, 13, 2)) * 0.7
        b = rng.standard_normal((1, 13, 2))
        h = associative_scan(Tensor(a), Tensor(b), axis=1).data
        hv = np.zeros(2)
        for t in range(13):
            hv = a[0, t] * hv + b[0, t]
            assert np.allclose(h[0, t], hv, atol=1e-12)


class TestSelective:
    def test_ignore_input_gate(self):
        # Large negative delta pre-activation: abar -> 1, bbar -> 0, y -> 0
        p = rand_selective(3, 4, seed=70)
        p.w3 = param(np.zeros((3, 3)))
        p.b3 = param(np.full(3, -40.0))
        x = np.random.default_rng(71).standard_normal((1, 10, 3))
        y = selective_recurrent(p, Tensor(x)).data
        assert np.max(np.abs(y)) < 1e-12

    def test_reset_gate(self):
        # Huge delta with a < 0: abar -> 0, so y_t depends only on x_t
        p = rand_selective(3, 4, seed=72)
        p.w3 = param(np.zeros((3, 3)))
        p.b3 = param(np.full(3, 500.0))
        rng = np.random.default_rng(73)
        x1 = rng.standard_normal((1, 6, 3))
        x2 = x1.copy()
        x2[0, 0] += 10.0  # perturb history only
        y1 = selective_recurrent(p, Tensor(x1)).data
        y2 = selective_recurrent(p, Tensor(x2)).data
        assert np.max(np.abs(y1[0, 1:] - y2[0, 1:])) < 1e-12

    @pytest.mark.parametrize("L", [1, 2, 64])
    def test_recurrent_matches_parallel_scan(self, L):
        p = rand_selective(3, 4, seed=100 + L)
        x = np.random.default_rng(L).standard_normal((2, L, 3))
        yr = selective_recurrent(p, Tensor(x)).data
        ys = selective_scan(p, Tensor(x)).data
        assert np.max(np.abs(yr - ys)) < 1e-8

    def test_gradients_agree_between_routes_and_fd(self):
        from helpers import finite_diff, rel_err

        L = 32
        p = rand_selective(2, 3, seed=80, scale=0.8)
        x = param(np.random.default_rng(81).standard_normal((1, L, 2)))
        w = Tensor(np.random.default_rng(82).standard_normal((1, L, 2)))
        tensors = selective_tensors(p) + [x]

        def loss_rec():
            return (selective_recurrent(p, x) * w).sum()

        def loss_scan():
            return (selective_scan(p, x) * w).sum()

        for t in tensors:
            t.grad = None
        backward(loss_rec())
        grec = [t.grad.copy() for t in tensors]
        for t in tensors:
            t.grad = None
        backward(loss_scan())
        gscan = [t.grad.copy() for t in tensors]
        for gr, gs, t in zip(grec, gscan, tensors):
            assert rel_err(gr, gs) < 1e-8, f"route gradient mismatch for shape {t.shape}"
        # and both match finite differences
        for t, gr in zip(tensors, grec):
            fd = finite_diff(loss_rec, t)
            assert rel_err(gr, fd) < 1e-5

    def test_order_dependence(self):
        # unlike attention without positions, the recurrence is order-aware:
        # permuting time steps changes the final output
        p = rand_selective(2, 3, seed=90)
        rng = np.random.default_rng(91)
        x = rng.standard_normal((1, 8, 2))
        xp = x[:, [3, 1, 2, 0, 5, 4, 6, 7]]
        y = selective_recurrent(p, Tensor(x)).data
        yp = selective_recurrent(p, Tensor(xp)).data
        assert np.max(np.abs(y[0, -1] - yp[0, -1])) > 1e-6


class TestScalarDeltaModes:
    def test_selective_scalar_delta_routes_agree(self):
        rng = np.random.default_rng(200)
        C, N, L = 3, 4, 12
        p = SelectiveSsmParams(
            a=param(-(rng.random((C, N)) * 2 + 0.1)),
            w1=param(rng.standard_normal((C, N)) / np.sqrt(C)),
            b1=param(rng.standard_normal(N) * 0.2),
            w2=param(rng.standard_normal((C, N)) / np.sqrt(C)),
            b2=param(rng.standard_normal(N) * 0.2),
            w3=param(rng.standard_normal((C, 1)) / np.sqrt(C)),  # one delta per token
            b3=param(rng.standard_normal(1) * 0.2),
        )
        x = Tensor(rng.standard_normal((2, L, C)))
        yr = selective_recurrent(p, x).data
        ys = selective_scan(p, x).data
        assert np.max(np.abs(yr - ys)) < 1e-10

    def test_lti_scalar_delta(self):
        rng = np.random.default_rng(201)
        p = LtiSsmParams(
            a=param(-(rng.random((2, 3)) + 0.1)),
            b=param(rng.standard_normal((2, 3))),
            c=param(rng.standard_normal((2, 3))),
            delta=param(np.asarray(0.2)),
        )
        x = Tensor(rng.standard_normal((1, 10, 2)))
        yr = lti_recurrent(p, x).data
        yc = lti_convolutional(p, x).data
        assert np.max(np.abs(yr - yc)) < 1e-10


class TestBackendTwins:
    """numba and numpy kernels must agree to float64 roundoff."""

    def setup_method(self):
        self._prev = kernels.backend_name()

    def teardown_method(self):
        kernels.set_backend(self._prev)

    @pytest.mark.skipif("numba" not in kernels.available_backends(), reason="numba unavailable")
    def test_all_kernels_match(self):
        rng = np.random.default_rng(7)
        B, L, C, N, W = 2, 9, 3, 4, 4
        a = -(rng.random((C, N)) + 0.1)
        delta = rng.random((B, L, C)) * 0.6 + 1e-9
        bt = rng.standard_normal((B, L, N))
        ct = rng.standard_normal((B, L, N))
        x = rng.standard_normal((B, L, C))
        abar = np.exp(delta[..., None] * a)
        gy = rng.standard_normal((B, L, C))
        abar_c = rng.random((C, N)) * 0.9
        bbar_c = rng.standard_normal((C, N))
        cmat = rng.standard_normal((C, N))
        w = rng.standard_normal((C, W))
        bias = rng.standard_normal(C)
        gk = rng.standard_normal((C, L))
        z = rng.standard_normal(40) * np.logspace(-9, 1, 40)

        results = {}
        for name in ("numpy", "numba"):
            kernels.set_backend(name)
            y, h = kernels.selective_scan_fwd(a, delta, bt, ct, x, abar)
            res = [y, h]
            res += list(kernels.selective_scan_bwd(a, delta, bt, ct, x, abar, h, gy))
            yl, hl = kernels.lti_scan_fwd(abar_c, bbar_c, cmat, x)
            res += [yl, hl]
            res += list(kernels.lti_scan_bwd(abar_c, bbar_c, cmat, x, hl, gy))
            K = kernels.lti_kernel_fwd(abar_c, bbar_c, cmat, L)
            res += [K]
            res += list(kernels.lti_kernel_bwd(abar_c, bbar_c, cmat, L, gk))
            yc = kernels.dwconv_fwd(w, bias, x)
            res += [yc]
            res += list(kernels.dwconv_bwd(w, x, gy))
            res += [kernels.phi1(z), kernels.phi1_grad(z)]
            results[name] = res

        for i, (r_np, r_nb) in enumerate(zip(results["numpy"], results["numba"])):
            assert np.max(np.abs(r_np - r_nb)) < 1e-12, f"twin mismatch at output {i}"

import math

import numpy as np
import pytest

from evtrack.ssm import (SSMParams, discretize, init_ssm_params, linear_scan,
                         scan_backward, scan_bidirectional, scan_forward,
                         scan_forward_chunked)

from _utils import assert_grad_close, central_difference


def sequential_oracle(u, params):
    """Plain-python recurrence in extended precision (independent of the
    vectorized implementation under test)."""
    ld = np.longdouble
    a = -np.exp(params.a_log.astype(ld))
    L, d = u.shape
    r, n = params.dt_rank, params.d_state
    y = np.zeros((L, d), dtype=ld)
    h = np.zeros((d, n), dtype=ld)
    for t in range(L):
        ut = u[t].astype(ld)
        xdbl = ut @ params.x_proj.astype(ld)
        pre = xdbl[:r] @ params.dt_proj.astype(ld) + params.dt_bias.astype(ld)
        delta = np.log1p(np.exp(pre))
        b_sel, c_sel = xdbl[r:r + n], xdbl[r + n:]
        da = delta[:, None] * a
        h = np.exp(da) * h + (np.expm1(da) / a) * b_sel[None, :] * ut[:, None]
        y[t] = h @ c_sel + params.d_skip.astype(ld) * ut
    return y.astype(np.float64)


def rel_err(y, ref):
    scale = max(float(np.max(np.abs(ref))), 1e-300)
    return float(np.max(np.abs(y - ref))) / scale


class TestDiscretize:
    def test_closed_form_scalar(self):
        a_bar, b_bar = discretize(-1.0, 1.0, math.log(2.0))
        assert abs(a_bar - 0.5) < 1e-15
        assert abs(b_bar - 0.5) < 1e-15  # (0.5 - 1)/(-1)

    def test_a_to_zero_limit(self):
        _, b_bar = discretize(0.0, 3.0, 0.25)
        assert b_bar == 0.75  # series limit: delta * b

    def test_delta_to_zero_limit(self):
        a_bar, b_bar = discretize(-2.0, 5.0, 0.0)
        assert a_bar == 1.0 and b_bar == 0.0
        a_bar, b_bar = discretize(-2.0, 5.0, 1e-12)
        assert abs(a_bar - 1.0) < 1e-11 and abs(b_bar) < 1e-11

    def test_matches_closed_form_batch(self):
        rng = np.random.default_rng(0)
        a = -np.exp(rng.standard_normal(500))
        b = rng.standard_normal(500)
        delta = np.exp(rng.uniform(-6, 2, 500))
        keep = np.abs(delta * a) >= 1e-4
        a_bar, b_bar = discretize(a, b, delta)
        ref_a = np.exp(delta * a)
        ref_b = (np.exp(delta * a) - 1.0) / a * b
        assert rel_err(a_bar[keep], ref_a[keep]) < 1e-12
        err = np.abs(b_bar[keep] - ref_b[keep]) / np.maximum(np.abs(ref_b[keep]), 1e-300)
        assert err.max() < 1e-12

    def test_series_branch_continuity(self):
        for a in (-1.0, 1.0):
            below = discretize(a, 1.0, 1e-4 * (1 - 1e-9))[1]
            above = discretize(a, 1.0, 1e-4 * (1 + 1e-9))[1]
            assert abs(below - above) < 1e-10

    def test_a_bar_in_unit_interval(self):
        rng = np.random.default_rng(1)
        a = -np.exp(rng.standard_normal(200))
        delta = np.exp(rng.uniform(-8, 2, 200))
        a_bar, _ = discretize(a, 1.0, delta)
        assert np.all(a_bar > 0) and np.all(a_bar < 1)

    def test_negative_delta_rejected(self):
        with pytest.raises(ValueError):
            discretize(-1.0, 1.0, -0.5)


class TestScanForward:
    def test_prefix_sum_case_integer_exact(self):
        rng = np.random.default_rng(2)
        u = rng.integers(-9, 10, size=(64, 3)).astype(np.float64)
        y = linear_scan(np.ones((64, 3, 1)), u[:, :, None], np.ones((64, 1)))
        np.testing.assert_array_equal(y, np.cumsum(u, axis=0))

    def test_forgetting_limit_is_memoryless(self):
        # a_log large -> a_bar ~ 0 -> y_t depends on u_t only
        rng = np.random.default_rng(3)
        params = init_ssm_params(3, 2, 2, rng, np.float64)
        params.a_log[:] = 8.0  # a = -e^8, a_bar = exp(-e^8 * delta) ~ 0
        u1 = rng.standard_normal((10, 3))
        u2 = u1.copy()
        u2[:5] = rng.standard_normal((5, 3))  # change only the past
        y1 = scan_forward(u1, params)
        y2 = scan_forward(u2, params)
        np.testing.assert_allclose(y1[6:], y2[6:], atol=1e-12)

    def test_matches_extended_precision_oracle(self):
        rng = np.random.default_rng(4)
        params = init_ssm_params(4, 4, 2, rng, np.float64)
        u = rng.standard_normal((64, 4))
        assert rel_err(scan_forward(u, params), sequential_oracle(u, params)) < 1e-6

    def test_linear_in_input_with_fixed_coefficients(self):
        rng = np.random.default_rng(5)
        L, d, n = 20, 3, 4
        a_bar = rng.uniform(0.1, 0.99, (L, d, n))
        b_bar = rng.standard_normal((L, d, n))
        c = rng.standard_normal((L, n))
        u = rng.standard_normal((L, d))
        skipg = rng.standard_normal(d)

        def run(uu):
            return linear_scan(a_bar, b_bar * uu[:, :, None], c, skipg * uu)

        np.testing.assert_allclose(run(3.5 * u), 3.5 * run(u), rtol=1e-12)

    def test_non_finite_input_rejected(self):
        params = init_ssm_params(2, 2, 1, np.random.default_rng(0))
        bad = np.ones((4, 2))
        bad[1, 0] = np.nan
        with pytest.raises(ValueError, match="non-finite"):
            scan_forward(bad, params)


class TestScanChunked:
    def test_single_chunk_bitwise_equal(self):
        rng = np.random.default_rng(6)
        params = init_ssm_params(4, 4, 2, rng, np.float32)
        u = rng.standard_normal((33, 4)).astype(np.float32)
        np.testing.assert_array_equal(scan_forward_chunked(u, params, 33),
                                      scan_forward(u, params))
        np.testing.assert_array_equal(scan_forward_chunked(u, params, 100),
                                      scan_forward(u, params))

    def test_chunk_one_matches(self):
        rng = np.random.default_rng(7)
        params = init_ssm_params(4, 4, 2, rng, np.float64)
        u = rng.standard_normal((50, 4))
        assert rel_err(scan_forward_chunked(u, params, 1),
                       scan_forward(u, params)) < 1e-6

    def test_long_sequence_float32(self):
        rng = np.random.default_rng(8)
        params = init_ssm_params(8, 16, 2, rng, np.float32)
        u = rng.standard_normal((1024, 8)).astype(np.float32)
        ref = scan_forward(u, params)
        assert rel_err(scan_forward_chunked(u, params, 64), ref) < 1e-5

    def test_many_chunk_sizes_float64(self):
        rng = np.random.default_rng(9)
        params = init_ssm_params(6, 8, 3, rng, np.float64)
        u = rng.standard_normal((517, 6))  # ragged tail on purpose
        ref = scan_forward(u, params)
        for chunk in (1, 2, 7, 16, 64, 100, 517):
            assert rel_err(scan_forward_chunked(u, params, chunk), ref) < 1e-10

    def test_invalid_chunk_rejected(self):
        params = init_ssm_params(2, 2, 1, np.random.default_rng(0))
        with pytest.raises(ValueError):
            scan_forward_chunked(np.ones((4, 2)), params, 0)


class TestScanBackward:
    def test_zero_cotangent_gives_zero_gradients(self):
        rng = np.random.default_rng(10)
        params = init_ssm_params(3, 2, 2, rng, np.float64)
        u = rng.standard_normal((8, 3))
        du, grads = scan_backward(u, params, np.zeros_like(u))
        assert np.all(du == 0)
        assert all(np.all(g == 0) for g in grads.values())

    def test_symbolic_unroll_oracle(self):
        """d_inner = d_state = dt_rank = 1, L = 3, differentiated with sympy."""
        sympy = pytest.importorskip("sympy")
        vals = {
            "al": 0.3, "skip": 0.7, "wdt": 0.4, "wb": -0.8, "wc": 0.9,
            "p": 1.1, "beta": -0.6, "u1": 0.5, "u2": -1.2, "u3": 0.8,
            "g1": 1.3, "g2": -0.4, "g3": 0.9,
        }
        al, skip, wdt, wb, wc, p, beta = sympy.symbols("al skip wdt wb wc p beta")
        u1, u2, u3, g1, g2, g3 = sympy.symbols("u1 u2 u3 g1 g2 g3")
        a = -sympy.exp(al)
        h = sympy.Integer(0)
        loss = sympy.Integer(0)
        for ut, gt in ((u1, g1), (u2, g2), (u3, g3)):
            pre = ut * wdt * p + beta
            delta = sympy.log(1 + sympy.exp(pre))
            a_bar = sympy.exp(delta * a)
            b_bar = (sympy.exp(delta * a) - 1) / a * (ut * wb)
            h = a_bar * h + b_bar * ut
            loss = loss + gt * ((ut * wc) * h + skip * ut)

        symbols = dict(al=al, skip=skip, wdt=wdt, wb=wb, wc=wc, p=p, beta=beta,
                       u1=u1, u2=u2, u3=u3)
        expected = {name: float(sympy.diff(loss, s).subs(vals))
                    for name, s in symbols.items()}

        params = SSMParams(
            a_log=np.array([[vals["al"]]]),
            d_skip=np.array([vals["skip"]]),
            x_proj=np.array([[vals["wdt"], vals["wb"], vals["wc"]]]),
            dt_proj=np.array([[vals["p"]]]),
            dt_bias=np.array([vals["beta"]]),
        )
        u = np.array([[vals["u1"]], [vals["u2"]], [vals["u3"]]])
        w = np.array([[vals["g1"]], [vals["g2"]], [vals["g3"]]])
        du, grads = scan_backward(u, params, w)

        assert_grad_close(grads["a_log"][0, 0], expected["al"], rtol=1e-9, atol=1e-12)
        assert_grad_close(grads["d_skip"][0], expected["skip"], rtol=1e-9, atol=1e-12)
        assert_grad_close(grads["x_proj"][0],
                          [expected["wdt"], expected["wb"], expected["wc"]],
                          rtol=1e-9, atol=1e-12)
        assert_grad_close(grads["dt_proj"][0, 0], expected["p"], rtol=1e-9, atol=1e-12)
        assert_grad_close(grads["dt_bias"][0], expected["beta"], rtol=1e-9, atol=1e-12)
        assert_grad_close(du[:, 0], [expected["u1"], expected["u2"], expected["u3"]],
                          rtol=1e-9, atol=1e-12)

    def test_finite_difference_small_instance(self):
        rng = np.random.default_rng(11)
        params = init_ssm_params(4, 4, 2, rng, np.float64)
        u = rng.standard_normal((16, 4))
        w = rng.standard_normal((16, 4))

        def loss():
            return float(np.sum(w * scan_forward(u, params)))

        du, grads = scan_backward(u, params, w, chunk=5)
        for i in range(16):
            for j in range(4):
                assert_grad_close(du[i, j], central_difference(loss, u, (i, j)))
        for name in ("a_log", "d_skip", "x_proj", "dt_proj", "dt_bias"):
            arr = getattr(params, name)
            it = np.nditer(arr, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                assert_grad_close(grads[name][idx], central_difference(loss, arr, idx))

    def test_shape_mismatch_rejected(self):
        params = init_ssm_params(2, 2, 1, np.random.default_rng(0), np.float64)
        with pytest.raises(ValueError, match="shape"):
            scan_backward(np.ones((4, 2)), params, np.ones((3, 2)))


class TestScanBidirectional:
    def test_palindrome_symmetry(self):
        rng = np.random.default_rng(12)
        params = init_ssm_params(3, 2, 2, rng, np.float64)
        half = rng.standard_normal((5, 3))
        u = np.vstack([half, half[::-1]])
        y = scan_bidirectional(u, params, params)
        np.testing.assert_allclose(y, y[::-1], rtol=1e-10, atol=1e-12)

    def test_zeroed_backward_branch_equals_forward(self):
        rng = np.random.default_rng(13)
        fwd = init_ssm_params(3, 2, 2, rng, np.float64)
        bwd = init_ssm_params(3, 2, 2, rng, np.float64)
        bwd.d_skip[:] = 0.0
        bwd.x_proj[:, bwd.dt_rank + bwd.d_state:] = 0.0  # C = 0
        u = rng.standard_normal((12, 3))
        np.testing.assert_allclose(scan_bidirectional(u, fwd, bwd),
                                   scan_forward(u, fwd), rtol=1e-12)

    def test_composition_of_independent_scans(self):
        rng = np.random.default_rng(14)
        fwd = init_ssm_params(3, 4, 2, rng, np.float64)
        bwd = init_ssm_params(3, 4, 2, rng, np.float64)
        u = rng.standard_normal((20, 3))
        expected = scan_forward(u, fwd) + scan_forward(u[::-1].copy(), bwd)[::-1]
        np.testing.assert_allclose(scan_bidirectional(u, fwd, bwd), expected,
                                   rtol=1e-12)
        np.testing.assert_allclose(scan_bidirectional(u, fwd, bwd, chunk=4),
                                   expected, rtol=1e-9)

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from qmcgsa.diffusion import ModelParams, TimeGrid
from qmcgsa.engine import PathFunctional, ShiftTooLargeError, simulate
from qmcgsa.greeks import (DEFAULT_EPS, FdErrorModel, GreekRequest, bias_constant, bias_floor,
                           central_difference, fd_greek, null_greek, optimal_shift, self_consistent_shift,
                           stencil_derivative)
from qmcgsa.instruments import InstrumentSpec, Kind, bs_reference


def bs_price(spec):
    return lambda p: bs_reference(spec, p)["price"]


class TestCentralDifference:
    def test_delta_within_bias_bound(self, european, params):
        h = 1e-3 * params.spot
        fd = central_difference(bs_price(european), params, "delta", h)
        b = oracles.black_scholes_speed(100, 100, 0.3, 1) / 6
        exact = bs_reference(european, params)["delta"]
        assert abs(fd - exact - b * h * h) < 1e-3 * abs(b) * h * h + 1e-12

    def test_vega_shift_too_large(self, european, params):
        with pytest.raises(ShiftTooLargeError):
            central_difference(bs_price(european), params, "vega", 0.3)

    def test_unknown_greek(self, european, params):
        with pytest.raises(ValueError):
            central_difference(bs_price(european), params, "rho", 0.1)

    @pytest.mark.parametrize("which", ["delta", "gamma", "vega"])
    def test_converges_to_closed_form(self, european, params, which):
        exact = bs_reference(european, params)[which]
        errs = []
        for eps in (1e-1, 5e-2, 2.5e-2):
            h = eps * params.spot if which != "vega" else eps
            errs.append(abs(central_difference(bs_price(european), params, which, h) - exact))
        # second-order: halving h divides the error by about four
        assert 3.5 < errs[0] / errs[1] < 4.5 and 3.5 < errs[1] / errs[2] < 4.5


class TestRecycledGreeks:
    def test_recycling_equals_difference_of_bumped_means(self, asian, params, grid):
        eps, n = 5e-3, 2 ** 12
        h = eps * params.spot
        f = PathFunctional(asian, params, grid, "BBD", ("price", "delta", "gamma", "vega"), eps)
        rows = simulate(f, "QMC_BBD", n).mean(axis=1)

        def mean_price(p):
            return simulate(PathFunctional(asian, p, grid, "BBD", ("price",)), "QMC_BBD", n).mean()

        up, mid, down = mean_price(params.bumped(spot=100 + h)), mean_price(params), mean_price(params.bumped(spot=100 - h))
        assert rows[1] == pytest.approx((up - down) / (2 * h), rel=1e-10)
        assert rows[2] == pytest.approx((up - 2 * mid + down) / h ** 2, rel=1e-8)
        vu, vd = mean_price(params.bumped(vol=0.3 + eps)), mean_price(params.bumped(vol=0.3 - eps))
        assert rows[3] == pytest.approx((vu - vd) / (2 * eps), rel=1e-10)

    def test_linear_payoff_has_zero_gamma(self, params, grid):
        # deep in the money the call is the forward S_D - K on every path
        spec = InstrumentSpec("european", 1e-6)
        est = fd_greek(GreekRequest("gamma", 1e-3, spec, params, grid, "QMC_SD", 2 ** 10))
        assert abs(est.value) < 1e-8

    @pytest.mark.parametrize("method", ["MC_SD", "QMC_SD", "QMC_BBD"])
    def test_cliquet_delta_is_exactly_zero(self, cliquet, params, grid, method):
        est = fd_greek(GreekRequest("delta", 5e-3, cliquet, params, grid, method, 2 ** 10))
        assert est.value == 0.0
        assert null_greek(cliquet, "delta") and null_greek(cliquet, "gamma")
        assert not null_greek(cliquet, "vega")

    def test_request_validation(self, european, params, grid):
        with pytest.raises(ValueError):
            GreekRequest("theta", 1e-3, european, params, grid)
        with pytest.raises(ValueError):
            GreekRequest("delta", 0.0, european, params, grid)

    def test_european_qmc_delta_close_to_closed_form(self, european, params, grid):
        est = fd_greek(GreekRequest("delta", 1e-3, european, params, grid, "QMC_BBD", 2 ** 16))
        assert est.value == pytest.approx(bs_reference(european, params)["delta"], rel=2e-3)

    def test_default_shifts(self):
        assert DEFAULT_EPS[Kind.EUROPEAN] == 1e-3
        assert DEFAULT_EPS[Kind.ASIAN_GEOMETRIC] == DEFAULT_EPS[Kind.DOUBLE_KO] == DEFAULT_EPS[Kind.CLIQUET] == 5e-3


class TestErrorModel:
    def test_identity(self):
        b, n = 0.3, 2 ** 10
        m = FdErrorModel(4 * b * b * n, b, 0.5, 1)
        assert optimal_shift(m, n) == pytest.approx(1.0)

    def test_doubling_n(self):
        m = FdErrorModel(2.0, 0.1, 0.5, 1)
        assert optimal_shift(m, 2 ** 11) / optimal_shift(m, 2 ** 10) == pytest.approx(2 ** -0.2)
        g = FdErrorModel(2.0, 0.1, 0.5, 3)
        assert optimal_shift(g, 2 ** 11) / optimal_shift(g, 2 ** 10) == pytest.approx(2 ** (-1 / 7))

    def test_bias_free_is_unbounded(self):
        assert optimal_shift(FdErrorModel(1.0, 0.0, 0.5, 1), 100) == math.inf

    @settings(max_examples=50, deadline=None)
    @given(st.floats(1e-3, 1e3), st.floats(1e-4, 10.0), st.sampled_from([1, 3]), st.floats(0.5, 1.0))
    def test_shift_minimizes_rmse(self, c, b, beta, alpha):
        m = FdErrorModel(c, b, alpha, beta)
        n = 4096
        h = optimal_shift(m, n)
        grid = h * np.array([0.9, 0.97, 1.03, 1.1])
        assert np.all(m.rmse(grid, n) >= m.rmse(h, n) * (1 - 1e-12))

    def test_invalid_model(self):
        with pytest.raises(ValueError):
            FdErrorModel(-1.0, 0.1, 0.5, 1)
        with pytest.raises(ValueError):
            FdErrorModel(1.0, 0.1, 0.5, 2)

    def test_self_consistent_shift_exact_model(self):
        # variance exactly c/(N h): the fixed point is the closed form at once
        c, b, n = 3.0, 0.02, 2 ** 14
        h, model = self_consistent_shift(lambda h: c / (n * h), b, "delta", n)
        assert h == pytest.approx(optimal_shift(FdErrorModel(c, b, 0.5, 1), n), rel=1e-6)
        assert model.c == pytest.approx(c)

    def test_self_consistent_shift_converges(self):
        # weak dependence of c on h
        n, b = 2 ** 12, 0.01
        h, _ = self_consistent_shift(lambda h: (1.0 + 0.1 * h) / (n * h), b, "delta", n)
        c = 1.0 + 0.1 * h
        assert h == pytest.approx(optimal_shift(FdErrorModel(c, b, 0.5, 1), n), rel=1e-2)


class TestBiasConstant:
    def test_stencil_exact_on_polynomials(self):
        x = np.arange(-3, 4) * 0.5
        assert stencil_derivative(x ** 3, 0.5, 3) == pytest.approx(6.0)
        assert stencil_derivative(x ** 4, 0.5, 4) == pytest.approx(24.0)
        assert stencil_derivative(2 * x + 1, 0.5, 3) == pytest.approx(0.0, abs=1e-12)

    def test_european_delta_against_closed_form(self, european, params, grid):
        b = bias_constant(european, params, "delta", grid)
        assert b == pytest.approx(oracles.black_scholes_speed(100, 100, 0.3, 1) / 6, rel=1e-6)

    def test_gamma_richardson(self, european, params, grid):
        b = [bias_constant(european, params, "gamma", grid, step=h) for h in (4.8, 2.4, 1.2)]
        assert math.isfinite(b[-1]) and b[-1] != 0.0
        assert (b[0] - b[1]) / (b[1] - b[2]) == pytest.approx(16.0, rel=0.1)

    def test_cliquet_null_greeks(self, cliquet, params, grid):
        assert bias_constant(cliquet, params, "delta", grid) == 0.0

    def test_unknown_greek(self, european, params):
        with pytest.raises(ValueError):
            bias_constant(european, params, "rho")

    def test_floor(self, params):
        assert bias_floor(-2.0, "delta", 1e-3, params) == pytest.approx(2.0 * 0.1 ** 2)
        assert bias_floor(2.0, "vega", 1e-2, params) == pytest.approx(2e-4)

    def test_simulated_constant_for_barrier(self, dko, params, grid):
        b, err = bias_constant(dko, params, "delta", grid, n_sim=2 ** 16, return_stderr=True)
        assert math.isfinite(b) and err > 0

import math

import numpy as np
import pytest

from levy_multiscale.errors import CFLViolation, UsageError
from levy_multiscale.ergodicity import two_atom_measure
from levy_multiscale.finance import MertonSpec, PricingSpec, merton_problem, pricing_problem
from levy_multiscale.hjb_solvers import (
    CompactBox,
    ControlProblemSpec,
    Grids,
    ValueField,
    assemble_factor_generator,
    effective_solve,
    hamiltonian_eval,
    pide_solve,
    sup_norm_gap,
)
from levy_multiscale.levy_measures import Family, LevyMeasureModel
from levy_multiscale.nonlocal_generator import GeneratorQuadrature, generator_apply

SYM15 = LevyMeasureModel(Family.SYMMETRIC_STABLE, 1.5)


def const_sigma(s):
    return lambda y: np.full_like(np.asarray(y, dtype=float), s)


def tanh_sigma(base, amp):
    return lambda y: base + amp * np.tanh(np.asarray(y, dtype=float))


def merton_spec(sigma_fn=None, R=2.0, T=1.0):
    return MertonSpec(
        r=0.05, alpha_drift=0.1, sigma_fn=sigma_fn or const_sigma(0.2),
        R1=0.0, R=R, gamma=0.5, a=1.0, horizon=T, w0=1.0,
    )


def pricing_spec(payoff, sigma_fn=None, c=0.05, T=1.0):
    return PricingSpec(
        r=0.05, sigma_fn=sigma_fn or tanh_sigma(0.3, 0.1),
        payoff=payoff, discount=c, horizon=T, x0=1.0,
    )


class TestHamiltonianEval:
    def test_zero_gradient_and_curvature(self):
        prob = merton_problem(merton_spec())
        val, u = hamiltonian_eval(prob, 1.0, 0.0, 0.0, 0.0)
        assert val == 0.0
        assert u == prob.control_grid[0]  # ties break to the first grid point

    def test_merton_interior_parabola_value(self):
        # grid minimum of the concave-parabola objective vs the vertex value
        prob = merton_problem(merton_spec())
        w, p, X, sig = 1.0, 1.0, -1.0, 0.2
        val, u = hamiltonian_eval(prob, w, 0.0, p, X)
        excess = 0.1 - 0.05
        want = excess**2 * p**2 / (4.0 * sig**2 * X) - 0.05 * w * p
        du = prob.control_grid[1] - prob.control_grid[0]
        resolution = sig**2 * w * w * abs(X) * du * du / 4.0
        assert abs(val - want) <= resolution + 1e-12
        assert abs(u - excess / (2.0 * sig**2)) <= du

    def test_single_control_no_minimization(self):
        prob = pricing_problem(pricing_spec(lambda x: np.asarray(x, dtype=float)))
        val, u = hamiltonian_eval(prob, 2.0, 0.5, 1.0, -0.5)
        sig = 0.3 + 0.1 * math.tanh(0.5)
        want = -0.5 * (math.sqrt(2) * 2.0 * sig) ** 2 * (-0.5) - 0.05 * 2.0 * 1.0
        assert val == pytest.approx(want, rel=1e-12)
        assert u == 0.0


class TestEffectiveSolve:
    def test_constant_payoff_is_preserved(self):
        prob = pricing_problem(pricing_spec(lambda x: np.full_like(np.asarray(x, float), 5.0), c=0.0))
        mu = two_atom_measure(-1.0, 1.0)
        field = effective_solve(prob, mu, Grids(x=np.linspace(0.0, 4.0, 101)))
        assert np.max(np.abs(field.values - 5.0)) < 1e-10

    def test_merton_matches_closed_form_coarse(self, invariant_measure_15):
        spec = merton_spec()
        prob = merton_problem(spec)
        field = effective_solve(prob, invariant_measure_15, Grids(x=np.linspace(0.0, 6.0, 151)))
        from levy_multiscale.finance import merton_hara_closed_form

        sel = (field.x_grid >= 0.5) & (field.x_grid <= 2.0)
        xs = field.x_grid[sel]
        worst = 0.0
        for i, t in enumerate(field.t_grid):
            want = merton_hara_closed_form(spec, invariant_measure_15, min(t, 1.0), xs)
            worst = max(worst, float(np.max(np.abs(field.values[i, sel] - want) / want)))
        assert worst < 5e-3

    def test_pricing_martingale_identity(self, invariant_measure_15):
        # g(x) = x with discount equal to the rate: the price surface is x itself
        prob = pricing_problem(pricing_spec(lambda x: np.asarray(x, dtype=float), c=0.05))
        field = effective_solve(prob, invariant_measure_15, Grids(x=np.linspace(0.0, 6.0, 201)))
        sel = (field.x_grid >= 0.5) & (field.x_grid <= 2.0)
        xs = field.x_grid[sel]
        err = np.max(np.abs(field.values[:, sel] - xs[None, :]) / xs[None, :])
        assert err < 1e-2

    def test_terminal_slice_exact(self, invariant_measure_15):
        payoff = lambda x: np.maximum(np.asarray(x, float) - 1.0, 0.0)
        prob = pricing_problem(pricing_spec(payoff))
        field = effective_solve(prob, invariant_measure_15, Grids(x=np.linspace(0.0, 4.0, 81)))
        assert field.t_grid[-1] == pytest.approx(1.0)
        assert np.array_equal(field.values[-1], payoff(field.x_grid))

    def test_comparison_monotone_in_payoff(self, invariant_measure_15):
        lo = lambda x: np.maximum(np.asarray(x, float) - 1.0, 0.0)
        hi = lambda x: np.maximum(np.asarray(x, float) - 0.8, 0.0)
        grids = Grids(x=np.linspace(0.0, 4.0, 81))
        f_lo = effective_solve(pricing_problem(pricing_spec(lo)), invariant_measure_15, grids)
        f_hi = effective_solve(pricing_problem(pricing_spec(hi)), invariant_measure_15, grids)
        assert np.all(f_hi.values >= f_lo.values - 1e-12)

    def test_discount_scales_linear_pricing(self, invariant_measure_15):
        payoff = lambda x: np.maximum(np.asarray(x, float) - 1.0, 0.0)
        grids = Grids(x=np.linspace(0.0, 4.0, 81))
        f0 = effective_solve(pricing_problem(pricing_spec(payoff, c=0.0)), invariant_measure_15, grids)
        fc = effective_solve(pricing_problem(pricing_spec(payoff, c=0.08)), invariant_measure_15, grids)
        for i, t in enumerate(f0.t_grid):
            scale = math.exp(0.08 * (min(t, 1.0) - 1.0))
            assert np.allclose(fc.values[i], scale * f0.values[i], atol=2e-4)

    def test_cfl_violation_reports_suggestion(self, invariant_measure_15):
        prob = pricing_problem(pricing_spec(lambda x: np.asarray(x, float)))
        with pytest.raises(CFLViolation) as exc:
            effective_solve(prob, invariant_measure_15, Grids(x=np.linspace(0.0, 4.0, 81), dt=0.1))
        assert exc.value.suggested_dt < 0.1


class TestFactorGeneratorMatrix:
    def test_rows_annihilate_constants(self):
        y = np.linspace(-8.0, 8.0, 65)
        L, diag = assemble_factor_generator(SYM15, y)
        assert np.max(np.abs(L.sum(axis=1))) < 1e-10
        assert diag["extrapolated_tail_mass"] < 1e-6

    def test_matches_continuous_generator_on_smooth_function(self):
        y = np.linspace(-12.0, 12.0, 193)
        L, _ = assemble_factor_generator(SYM15, y)
        f = lambda v: np.cos(v)
        vals = L @ f(y)
        q = GeneratorQuadrature(SYM15)
        for idx in (80, 96, 112):
            want = generator_apply(
                q, math.cos, float(y[idx]), lambda v: -math.sin(v), lambda v: -math.cos(v)
            )
            assert vals[idx] == pytest.approx(want, abs=0.05)

    def test_offdiagonal_sign_structure(self):
        y = np.linspace(-6.0, 6.0, 49)
        L, _ = assemble_factor_generator(SYM15, y)
        neg_offdiag = 0
        for i in range(49):
            for j in range(49):
                if i != j and L[i, j] < -1e-13:
                    neg_offdiag += 1
        # only the boundary-slope extrapolation columns may dip negative
        assert neg_offdiag <= 2 * 49


class TestPideSolve:
    def grids(self, nx=81, ny=41, x_max=4.0, y_max=6.0):
        return Grids(x=np.linspace(0.0, x_max, nx), y=np.linspace(-y_max, y_max, ny))

    def test_constant_payoff_no_discount(self):
        prob = pricing_problem(pricing_spec(lambda x: np.full_like(np.asarray(x, float), 3.0), c=0.0))
        field = pide_solve(prob, SYM15, epsilon=0.5, grids=self.grids())
        assert np.max(np.abs(field.values - 3.0)) < 1e-9

    def test_constant_payoff_discounts_exponentially(self):
        prob = pricing_problem(pricing_spec(lambda x: np.full_like(np.asarray(x, float), 2.0), c=0.1))
        field = pide_solve(prob, SYM15, epsilon=0.5, grids=self.grids(nx=41, ny=21))
        for i, t in enumerate(field.t_grid):
            want = 2.0 * math.exp(0.1 * (min(t, 1.0) - 1.0))
            assert np.max(np.abs(field.values[i] - want)) < 1e-5 * want

    def test_terminal_condition_exact(self):
        payoff = lambda x: np.maximum(np.asarray(x, float) - 1.0, 0.0)
        prob = pricing_problem(pricing_spec(payoff))
        field = pide_solve(prob, SYM15, epsilon=1.0, grids=self.grids(nx=41, ny=21))
        want = np.repeat(payoff(field.x_grid)[:, None], len(field.y_grid), axis=1)
        assert np.array_equal(field.values[-1], want)

    def test_assumption_gate(self):
        sub = LevyMeasureModel(Family.ONE_SIDED_STABLE, 0.5, subordinator=True)
        prob = pricing_problem(pricing_spec(lambda x: np.asarray(x, float)))
        from levy_multiscale.errors import AssumptionError

        with pytest.raises(AssumptionError):
            pide_solve(prob, sub, epsilon=0.5, grids=self.grids(nx=41, ny=21))

    def test_approaches_effective_solution_as_epsilon_shrinks(self, invariant_measure_15):
        payoff = lambda x: np.maximum(np.asarray(x, float) - 1.0, 0.0)
        prob = pricing_problem(pricing_spec(payoff))
        grids = self.grids(nx=101, ny=41, x_max=5.0)
        eff = effective_solve(prob, invariant_measure_15, Grids(x=grids.x))
        box = CompactBox(t=(0.0, 1.0), x=(0.5, 2.0), y=(-2.0, 2.0))
        gaps = []
        for eps in (1.0, 0.05):
            field = pide_solve(prob, SYM15, epsilon=eps, grids=grids)
            gaps.append(sup_norm_gap(field, eff, box))
        assert gaps[1] < gaps[0]
        assert gaps[1] < 0.05

    def test_quadratic_growth_ratio_bounded(self):
        payoff = lambda x: np.maximum(np.asarray(x, float) - 1.0, 0.0)
        prob = pricing_problem(pricing_spec(payoff))
        field = pide_solve(prob, SYM15, epsilon=0.2, grids=self.grids(nx=61, ny=31))
        # a-priori moment bound: K e^{(2r + 2 sigma_max^2) T} with K = 1/2
        c_t = 0.5 * math.exp((2 * 0.05 + 2 * 0.16) * 1.0)
        assert field.quadratic_growth_ratio() <= c_t


class TestSupNormGap:
    def _field(self, values, ts, xs, ys=None):
        return ValueField(t_grid=ts, x_grid=xs, values=values, y_grid=ys)

    def test_broadcast_over_y_gives_zero(self):
        ts, xs, ys = np.linspace(0, 1, 5), np.linspace(0, 2, 9), np.linspace(-1, 1, 7)
        base = np.random.default_rng(0).random((5, 9))
        a = self._field(np.repeat(base[:, :, None], 7, axis=2), ts, xs, ys)
        b = self._field(base, ts, xs)
        box = CompactBox(t=(0.0, 1.0), x=(0.0, 2.0), y=(-1.0, 1.0))
        assert sup_norm_gap(a, b, box) == 0.0

    def test_constant_offset_recovered(self):
        ts, xs = np.linspace(0, 1, 5), np.linspace(0, 2, 9)
        base = np.random.default_rng(1).random((5, 9))
        a = self._field(base + 0.5, ts, xs)
        b = self._field(base, ts, xs)
        assert sup_norm_gap(a, b, CompactBox(t=(0, 1), x=(0, 2))) == pytest.approx(0.5)

    def test_disjoint_domains_rejected(self):
        ts, xs = np.linspace(0, 1, 5), np.linspace(0, 2, 9)
        base = np.zeros((5, 9))
        a = self._field(base, ts, xs)
        b = self._field(base, ts, xs)
        with pytest.raises(UsageError):
            sup_norm_gap(a, b, CompactBox(t=(0, 1), x=(5.0, 6.0)))


class TestGridsValidation:
    def test_x_grid_must_be_uniform(self):
        with pytest.raises(UsageError):
            Grids(x=np.array([0.0, 0.1, 0.3, 0.6]))

    def test_y_grid_must_be_uniform(self):
        with pytest.raises(UsageError):
            Grids(x=np.linspace(0, 1, 5), y=np.array([0.0, 0.1, 0.3, 0.6, 1.0]))

    def test_spec_validation(self):
        with pytest.raises(UsageError):
            ControlProblemSpec(
                drift=lambda x, y, u: x, vol=lambda x, y, u: x,
                control_grid=np.array([]), payoff=lambda x: x,
                discount=0.0, horizon=1.0, growth_K=1.0,
            )

import numpy as np
import pytest

from dsmfg.dynamics import ModelParams
from dsmfg.errors import RefusalError
from dsmfg.riccati import (PriceSpec, j_flags, phi_closed_form, solve_phi_ode,
                           solve_phibar, solve_phibar_picard)
from oracles import implicit_phi_sequence, rk4_phi_backward


def params(**over):
    kw = dict(A=150.0, C=80.0, K=50.0, h2=100.0, p0=6.16, p1=0.65, pi=0.5,
              f1=1e4, theta=0.125, T=2.0, lambda0=2.0, sigma0=0.31,
              sigma_st=0.31, sigma=0.56, q0=0.5, q0_st=0.5, s0=-0.5)
    kw.update(over)
    return ModelParams(**kw)


class TestPriceSpec:
    def test_mfg_coefficients(self):
        p = params()
        spec = PriceSpec.for_mode(p, "MFG")
        assert (spec.a0, spec.a_st, spec.a1) == (6.16, 0.5 * 0.65, 0.5 * 0.65)
        assert (spec.f0_eff, spec.f1_eff) == (0.0, 1e4)

    def test_mfc_doubles_slopes(self):
        spec = PriceSpec.for_mode(params(), "MFC")
        assert (spec.a_st, spec.a1, spec.f1_eff) == (0.65, 0.65, 2e4)
        assert spec.a0 == 6.16 and spec.f0_eff == 0.0

    def test_aggregator(self):
        spec = PriceSpec.for_mode(params(), "MFC_AGG")
        assert (spec.a_st, spec.a1, spec.f1_eff) == (0.5 * 0.65, 0.65, 2e4)
        spec2 = PriceSpec.for_mode(params(), "MFC_AGG", agg_double_f=False)
        assert spec2.f1_eff == 1e4

    def test_half_slope_rule_integrates_back(self):
        # p_mfc(x) = p0 + p1 x / 2 is the running average of p0 + p1 x
        p0, p1 = 6.16, 0.65
        xs = np.linspace(0.1, 10, 50)
        avg = np.array([(p0 * x + p1 * x * x / 2) / x for x in xs])
        assert np.allclose(avg, p0 + 0.5 * p1 * xs)

    def test_k_theta_floor(self):
        p = params()
        spec = PriceSpec.for_mode(p, "MFG")
        assert spec.k_theta(p, 0.0) == pytest.approx(200.325)
        assert spec.k_theta(p, 1.0) == pytest.approx(10200.325)

    def test_modes_coincide_without_price_terms(self):
        p = params(p1=0.0, f1=0.0)
        specs = [PriceSpec.for_mode(p, m) for m in ("MFG", "MFC", "MFC_AGG")]
        for s in specs[1:]:
            assert (s.a0, s.a_st, s.a1, s.f0_eff, s.f1_eff) == \
                   (specs[0].a0, specs[0].a_st, specs[0].a1, specs[0].f0_eff, specs[0].f1_eff)


class TestPhiClosedForm:
    def test_zero_fixed_point(self):
        assert np.all(phi_closed_form(0.0, 200.0, 0.0, np.linspace(0, 5, 7)) == 0.0)

    def test_separable_case(self):
        # C = 0: 1/phi(tau) = 1/h2 + tau/D
        assert phi_closed_form(0.0, 200.0, 200.0, 1.0) == pytest.approx(100.0, rel=1e-14)

    def test_reference_values_bounds_and_monotonicity(self):
        p = params()
        grid = p.grid(96)
        curve = solve_phi_ode(p, grid)
        assert curve.values[-1] == pytest.approx(100.0)
        assert 100.0 < curve.values[0] < 126.4912
        assert np.all(np.diff(curve.values) <= 1e-12)  # decreasing in t toward h2

    @pytest.mark.parametrize("C,h2", [(80.0, 100.0), (80.0, 150.0), (0.0, 60.0), (12.0, 0.0)])
    def test_matches_fine_grid_integrator(self, C, h2):
        D, T = 200.325, 2.0
        taus, oracle = rk4_phi_backward(C, D, h2, T, 20000)
        mine = phi_closed_form(C, D, h2, taus)
        assert np.max(np.abs(mine - oracle)) <= 1e-8 * max(1.0, np.max(np.abs(oracle)))


class TestSolvePhibar:
    def test_no_jump_dependence_without_f1(self):
        p = params(f1=0.0)
        grid = p.grid(32)
        tab = solve_phibar(p, grid, PriceSpec.for_mode(p, "MFG"))
        for k in range(33):
            assert np.ptp(tab.values[k]) == 0.0

    def test_lambda0_zero_equals_scalar_recursion(self):
        p = params(lambda0=0.0)
        grid = p.grid(24)
        price = PriceSpec.for_mode(p, "MFG")
        tab = solve_phibar(p, grid, price)
        oracle = implicit_phi_sequence(p.C, p.A + p.K + price.a1, p.h2, grid.dt, 24)
        mine = np.array([tab.values[k][0] for k in range(25)])
        assert np.allclose(mine, oracle, rtol=1e-13)

    def test_first_order_convergence_to_ode(self):
        p = params(f1=0.0)
        price = PriceSpec.for_mode(p, "MFG")
        D = p.A + p.K + price.a1
        errs = {}
        for n in (48, 96):
            grid = p.grid(n)
            tab = solve_phibar(p, grid, price)
            exact = phi_closed_form(p.C, D, p.h2, grid.horizon - grid.times())
            errs[n] = abs(tab.values[0][0] - exact[0])
        assert 1.5 <= errs[48] / errs[96] <= 2.5

    def test_fixed_point_mode_agrees(self):
        p = params()
        grid = p.grid(16)
        price = PriceSpec.for_mode(p, "MFG")
        a = solve_phibar(p, grid, price, method="quadratic")
        b = solve_phibar(p, grid, price, method="fixed_point")
        worst = max(np.max(np.abs(a.values[k] - b.values[k])) for k in range(17))
        assert worst <= 1e-11

    def test_tower_property_reconstruction(self):
        p = params()
        grid = p.grid(20)
        price = PriceSpec.for_mode(p, "MFG")
        tab = solve_phibar(p, grid, price)
        kappa, dt = grid.kappa, grid.dt
        for k in range(20):
            succ = tab.values[k + 1]
            adv = np.concatenate(([0], np.arange(2, k + 2)))
            expected = kappa * succ[adv] + (1 - kappa) * succ[1]
            D = price.k_theta(p, j_flags(p, grid, k).astype(float))
            resid = tab.values[k] - (expected + dt * (p.C - tab.values[k] ** 2 / D))
            assert np.max(np.abs(resid)) <= 1e-12 * max(1.0, np.max(tab.values[k]))

    def test_bounds(self):
        p = params()
        grid = p.grid(48)
        price = PriceSpec.for_mode(p, "MFG")
        tab = solve_phibar(p, grid, price)
        upper = max(p.h2, np.sqrt(p.C * (p.A + p.K + price.a1 + price.f1_eff)))
        for k in range(49):
            assert np.all(tab.values[k] >= 0.0)
            assert np.all(tab.values[k] <= upper + 1e-9)

    def test_monotone_in_C(self):
        grid = params().grid(24)
        lo = solve_phibar(params(C=60.0), grid, PriceSpec.for_mode(params(C=60.0), "MFG"))
        hi = solve_phibar(params(C=90.0), grid, PriceSpec.for_mode(params(C=90.0), "MFG"))
        for k in range(25):
            assert np.all(hi.values[k] >= lo.values[k] - 1e-12)

    def test_monotone_in_denominator(self):
        # comparison principle: Theta = -1/D increases with D, so a larger
        # effective denominator (larger f1 during activations) raises phibar
        p_lo, p_hi = params(f1=1e3), params(f1=1e4)
        grid = p_lo.grid(24)
        lo = solve_phibar(p_lo, grid, PriceSpec.for_mode(p_lo, "MFG"))
        hi = solve_phibar(p_hi, grid, PriceSpec.for_mode(p_hi, "MFG"))
        for k in range(25):
            assert np.all(hi.values[k] >= lo.values[k] - 1e-12)

    @pytest.mark.parametrize("seed", range(4))
    def test_invariants_hold_for_random_coefficients(self, seed):
        rng = np.random.default_rng(seed)
        p = params(A=float(rng.uniform(1, 300)), C=float(rng.uniform(0, 150)),
                   K=float(rng.uniform(0, 100)), h2=float(rng.uniform(0, 200)),
                   p1=float(rng.uniform(0, 2)), f1=float(rng.uniform(0, 2e4)),
                   pi=float(rng.uniform(0, 1)), lambda0=float(rng.uniform(0, 6)),
                   theta=float(rng.uniform(0.02, 0.4)))
        grid = p.grid(16)
        price = PriceSpec.for_mode(p, "MFG")
        tab = solve_phibar(p, grid, price)
        upper = max(p.h2, np.sqrt(p.C * price.k_theta(p, 1.0)))
        for k in range(17):
            row = tab.values[k]
            assert np.all(row >= -1e-12) and np.all(row <= upper + 1e-9)
            if k < 16:
                succ = tab.values[k + 1]
                adv = np.concatenate(([0], np.arange(2, k + 2)))
                expected = grid.kappa * succ[adv] + (1 - grid.kappa) * succ[1]
                D = price.k_theta(p, j_flags(p, grid, k).astype(float))
                resid = row - (expected + grid.dt * (p.C - row ** 2 / D))
                assert np.max(np.abs(resid)) <= 1e-11 * max(1.0, np.max(row))

    def test_serialization_rows(self):
        p = params()
        grid = p.grid(4)
        tab = solve_phibar(p, grid, PriceSpec.for_mode(p, "MFG"))
        rows = list(tab.iter_rows())
        assert rows[0][:2] == (0, -1)
        assert len(rows) == sum(k + 1 for k in range(5))


class TestPicard:
    def test_trivial_converges_immediately(self):
        p = params(C=0.0, h2=0.0)
        grid = p.grid(10)
        res = solve_phibar_picard(p, grid, PriceSpec.for_mode(p, "MFG"), tol=1e-12)
        assert res.iterations == 1
        assert all(np.all(v == 0.0) for v in res.table.values[:-1])

    def test_monotone_nonincreasing_iterates(self):
        p = params()
        grid = p.grid(24)
        res = solve_phibar_picard(p, grid, PriceSpec.for_mode(p, "MFG"), tol=1e-10)
        assert res.max_monotone_violation <= 1e-10

    def test_agrees_with_quadratic_root(self):
        p = params()
        grid = p.grid(32)
        price = PriceSpec.for_mode(p, "MFG")
        direct = solve_phibar(p, grid, price)
        res = solve_phibar_picard(p, grid, price, tol=1e-12)
        worst = max(np.max(np.abs(direct.values[k] - res.table.values[k]))
                    for k in range(33))
        assert worst <= 1e-9

    def test_iteration_cap_refusal(self):
        p = params()
        grid = p.grid(8)
        with pytest.raises(RefusalError, match="sup-norm"):
            solve_phibar_picard(p, grid, PriceSpec.for_mode(p, "MFG"),
                                tol=1e-14, max_iter=2)

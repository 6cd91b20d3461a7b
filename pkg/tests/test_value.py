import numpy as np
import pytest

from convlab.model import GeneratorMatrix, RegimeTable, derive_constants
from convlab.strategy import full_info_policy, partial_info_policy
from convlab.value import (
    SolverError,
    hjb_residual_full,
    loss_of_utility,
    loss_surface,
    mbar_closed_form,
    mc_expected_log_utility,
    mc_terminal_log_wealth,
    reduced_filter_coefficients,
    solve_full_ode,
    solve_partial_pde,
    value_full,
    value_partial,
)

from test_model import make_params


@pytest.fixture
def fig2_params():
    return make_params(
        b1=0.3, b2=0.5, T=2.0,
        regimes=RegimeTable(lambda1=(0.5, -0.3), lambda2=(-0.1, 0.6),
                            alpha1=(0.0, 0.0), alpha2=(0.0, 0.0)),
        generator=GeneratorMatrix(Q=[[-0.7, 0.7], [0.2, -0.2]],
                                  initial_dist=[1.0, 0.0]),
    )


@pytest.fixture
def const_lambda_params():
    return make_params(
        T=2.0,
        regimes=RegimeTable(lambda1=(0.3, 0.3), lambda2=(0.4, 0.4),
                            alpha1=(0.5, -0.2), alpha2=(0.2, -0.3)),
        generator=GeneratorMatrix(Q=[[-0.2, 0.2], [0.5, -0.5]],
                                  initial_dist=[0.5, 0.5]),
    )


def single_regime(params, i=0, alpha=None):
    from dataclasses import replace

    reg = params.regimes
    a1 = reg.alpha1[i] if alpha is None else alpha[0]
    a2 = reg.alpha2[i] if alpha is None else alpha[1]
    return replace(
        params,
        regimes=RegimeTable(lambda1=(reg.lambda1[i],), lambda2=(reg.lambda2[i],),
                            alpha1=(a1,), alpha2=(a2,)),
        generator=GeneratorMatrix(Q=[[0.0]], initial_dist=[1.0]),
    )


class TestFullInfoODE:
    def test_terminal_condition(self, fig2_params):
        sol = solve_full_ode(fig2_params, 500)
        assert np.all(sol.m[-1] == 0.0)
        assert np.all(sol.n[-1] == 0.0)
        assert np.all(sol.u[-1] == 0.0)
        assert value_full(fig2_params.T, 2.0, 0.7, 0, sol) == pytest.approx(np.log(2.0))

    def test_single_regime_m_closed_form(self, fig2_params):
        # K = 1: m(t) = Theta1 / (2 Lambda) (1 - exp(-2 Lambda (T - t)))
        p = single_regime(fig2_params)
        sol = solve_full_ode(p, 2000)
        c = derive_constants(p)
        lam = p.regimes.lambda1[0] + p.regimes.lambda2[0]
        exact = c.Theta1[0] / (2 * lam) * (1 - np.exp(-2 * lam * (p.T - sol.grid)))
        np.testing.assert_allclose(sol.m[:, 0], exact, atol=1e-10)

    def test_rk4_self_convergence_is_fourth_order(self, fig2_params):
        ref = solve_full_ode(fig2_params, 6400)
        errs = []
        for n in (25, 50):
            sol = solve_full_ode(fig2_params, n)
            idx = np.searchsorted(ref.grid, sol.grid)
            errs.append(np.abs(sol.m - ref.m[idx]).max())
        assert errs[0] / errs[1] > 10.0

    def test_zero_alpha_and_symmetric_market_kill_linear_term(self, fig2_params):
        # n is sourced by G = Gamma1 + lambda1 alpha1 + lambda2 alpha2;
        # alpha = 0 plus beta1 = beta2, b1 = b2 force Gamma1 = 0, hence n = 0
        from dataclasses import replace

        p = replace(fig2_params, beta2=fig2_params.beta1, b2=fig2_params.b1)
        sol = solve_full_ode(p, 500)
        np.testing.assert_allclose(sol.n, 0.0, atol=1e-14)
        assert np.abs(solve_full_ode(fig2_params, 500).n).max() > 1e-4

    def test_beta_neutral_value_below_unrestricted(self, fig2_params):
        u = solve_full_ode(fig2_params, 500)
        b = solve_full_ode(fig2_params, 500, variant="beta_neutral")
        x = np.linspace(-1, 1, 21)
        for i in range(2):
            assert np.all(value_full(0.0, 1.0, x, i, u)
                          >= value_full(0.0, 1.0, x, i, b) - 1e-12)

    def test_invalid_inputs_rejected(self, fig2_params):
        with pytest.raises(SolverError):
            solve_full_ode(fig2_params, 5)
        with pytest.raises(SolverError):
            solve_full_ode(fig2_params, 100, variant="unknown")
        sol = solve_full_ode(fig2_params, 100)
        with pytest.raises(SolverError, match="positive"):
            value_full(0.0, -1.0, 0.0, 0, sol)

    def test_hjb_residual_small_and_sensitive(self, fig2_params):
        sol = solve_full_ode(fig2_params, 4000)
        x = np.linspace(-1, 1, 21)
        res = hjb_residual_full(sol, fig2_params, x)
        assert np.abs(res).max() < 1e-6
        # mutation check: corrupting m must break the residual
        from dataclasses import replace

        bad = replace(sol, m=sol.m + 1e-3)
        assert np.abs(hjb_residual_full(bad, fig2_params, x)).max() > 1e-4


class TestPartialInfoPDE:
    def test_mbar_closed_form_requires_constant_lambda(self, fig2_params):
        with pytest.raises(SolverError, match="regime-independent"):
            mbar_closed_form(0.0, fig2_params)

    def test_reduced_filter_coefficients_vanish_at_endpoints(self, const_lambda_params):
        mu_p, H11, H12, a = reduced_filter_coefficients(
            const_lambda_params, np.array([0.0, 0.5, 1.0]))
        assert a[0] == 0.0 and a[2] == 0.0 and a[1] > 0.0
        # drift points inward at the endpoints
        assert mu_p[0] > 0.0 and mu_p[2] < 0.0

    def test_terminal_condition(self, const_lambda_params):
        sol = solve_partial_pde(const_lambda_params, 200, 60)
        assert np.all(sol.nbar[-1] == 0.0) and np.all(sol.ubar[-1] == 0.0)
        assert sol.mbar[-1] == pytest.approx(0.0, abs=1e-15)

    def test_uninformative_pde_matches_single_regime_ode(self):
        # identical alpha across regimes: the PDE loses its p-dependence and
        # must reproduce the K = 1 ODE solution at every p
        p = make_params(
            T=2.0,
            regimes=RegimeTable(lambda1=(0.3, 0.3), lambda2=(0.4, 0.4),
                                alpha1=(0.1, 0.1), alpha2=(-0.2, -0.2)),
            generator=GeneratorMatrix(Q=[[-0.2, 0.2], [0.5, -0.5]],
                                      initial_dist=[0.5, 0.5]),
        )
        pde = solve_partial_pde(p, 2000, 60)
        ode = solve_full_ode(single_regime(p), 2000)
        assert np.abs(pde.nbar - ode.n[:, [0]]).max() < 1e-3
        assert np.abs(pde.ubar - ode.u[:, [0]]).max() < 1e-3
        # no p-variation at all
        assert np.ptp(pde.nbar, axis=1).max() < 1e-12

    def test_frozen_chain_endpoint_matches_full_information(self, const_lambda_params):
        # with a frozen chain (Q = 0) a degenerate filter state stays
        # degenerate, so the PDE value at p = 1 must equal the regime-1 ODE
        # value; with jumps the chain escapes and the values differ
        import warnings
        from dataclasses import replace

        with warnings.catch_warnings():
            warnings.simplefilter("ignore", UserWarning)
            p = replace(
                const_lambda_params,
                generator=GeneratorMatrix(Q=np.zeros((2, 2)), initial_dist=[0.5, 0.5]),
            )
        pde = solve_partial_pde(p, 2000, 200)
        ode = solve_full_ode(p, 2000)
        v_part = value_partial(0.0, 1.0, 0.05, 1.0, pde)
        v_full = value_full(0.0, 1.0, 0.05, 0, ode)
        assert v_part == pytest.approx(v_full, abs=5e-3)

    def test_self_convergence_under_refinement(self, const_lambda_params):
        p = const_lambda_params
        coarse = solve_partial_pde(p, 500, 50)
        mid = solve_partial_pde(p, 1000, 100)
        fine = solve_partial_pde(p, 2000, 200)
        pg = coarse.p_grid

        def at0(sol):
            return np.interp(pg, sol.p_grid, sol.ubar[0])

        e1 = np.abs(at0(coarse) - at0(fine)).max()
        e2 = np.abs(at0(mid) - at0(fine)).max()
        assert e2 < e1

    def test_substep_budget_enforced(self, const_lambda_params):
        with pytest.raises(SolverError, match="sub-steps"):
            solve_partial_pde(const_lambda_params, 2000, 200, max_substeps=10)


class TestLossOfUtility:
    def test_fingerprint_mismatch_rejected(self, const_lambda_params, fig2_params):
        full = solve_full_ode(fig2_params, 200)
        part = solve_partial_pde(const_lambda_params, 200, 60)
        with pytest.raises(SolverError, match="different parameters"):
            loss_of_utility(0.0, 0.1, 0.5, full, part)

    def test_loss_largest_away_from_certainty(self, const_lambda_params):
        # the information premium is positive even at p = 0 or 1 (the chain
        # escapes any degenerate state), but it is larger in the middle
        p = const_lambda_params
        full = solve_full_ode(p, 2000)
        part = solve_partial_pde(p, 2000, 200)
        mid = loss_of_utility(0.0, 0.05, 0.5, full, part)
        for pe in (0.0, 1.0):
            edge = loss_of_utility(0.0, 0.05, pe, full, part)
            assert 0.0 <= edge < mid

    def test_loss_surface_shape(self, const_lambda_params):
        p = const_lambda_params
        full = solve_full_ode(p, 500)
        part = solve_partial_pde(p, 500, 60)
        ttm, pg, L = loss_surface(full, part, 0.05, n_time=10, n_p=12)
        assert L.shape == (11, 13)
        np.testing.assert_allclose(L[0], 0.0, atol=1e-12)


class TestMonteCarlo:
    def test_crn_reproducibility(self, fig2_params):
        from dataclasses import replace

        p = replace(fig2_params, T=0.5)
        pol = full_info_policy(p)
        a = mc_terminal_log_wealth(p, [pol], 1.0, 0.3, 500, 11, initial_state=0)
        b = mc_terminal_log_wealth(p, [pol], 1.0, 0.3, 500, 11, initial_state=0)
        np.testing.assert_array_equal(a.log_wealth[pol.name], b.log_wealth[pol.name])

    def test_mc_matches_ode_value_small_run(self, fig2_params):
        from dataclasses import replace

        p = replace(fig2_params, T=0.5)
        pol = full_info_policy(p)
        mean, se = mc_expected_log_utility(pol, p, 1.0, 0.3, 0, 5000, 13, dt=2e-3)
        sol = solve_full_ode(p, 1000)
        target = float(value_full(0.0, 1.0, 0.3, 0, sol))
        assert abs(mean - target) < 4 * se

    def test_mc_partial_requires_p0(self, const_lambda_params):
        pol = partial_info_policy(const_lambda_params)
        with pytest.raises(SolverError, match="p0"):
            mc_terminal_log_wealth(const_lambda_params, [pol], 1.0, 0.0, 100, 1)

    def test_minimum_path_count_enforced(self, fig2_params):
        pol = full_info_policy(fig2_params)
        with pytest.raises(SolverError, match="100"):
            mc_expected_log_utility(pol, fig2_params, 1.0, 0.0, 0, 10, 1)

    def test_filter_probes_on_simplex(self, const_lambda_params):
        from dataclasses import replace

        p = replace(const_lambda_params, T=0.2)
        res = mc_terminal_log_wealth(
            p, [], 1.0, 0.05, 200, 3, p0=np.array([0.5, 0.5]),
            probe_indices=(0, 100, 200), dt=1e-3,
        )
        for idx, pi in res.pi_probes.items():
            assert pi.shape == (200, 2)
            np.testing.assert_allclose(pi.sum(axis=1), 1.0, atol=1e-9)
            assert np.all(pi >= 0)

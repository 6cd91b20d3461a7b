import numpy as np
import pytest

import convlab.simulate as sim
from convlab.simulate import (
    PolicyHandle,
    SimulationError,
    batch_chain_states,
    make_grid,
    simulate_chain,
    simulate_paths,
    simulate_wealth,
)

from test_model import make_params


class ZeroRng:
    def standard_normal(self, shape):
        return np.zeros(shape)


@pytest.fixture
def zero_noise(monkeypatch):
    monkeypatch.setattr(sim, "noise_rng", lambda seed: ZeroRng())


class TestGridAndChain:
    def test_make_grid_endpoints(self):
        g = make_grid(2.0, 1e-3)
        assert g[0] == 0.0 and g[-1] == 2.0 and len(g) == 2001

    def test_chain_jump_fraction_matches_exponential(self):
        # fraction of paths with at least one jump from state 1 over T = 1
        # equals 1 - exp(-q12) for q12 = 0.01
        p = make_params()
        n = 20_000
        jumps = sum(
            len(simulate_chain(p.generator, 1.0, 123, path_index=k,
                               initial_state=0).jump_times) > 0
            for k in range(n)
        )
        frac = jumps / n
        target = 1.0 - np.exp(-0.01)
        se = np.sqrt(target * (1 - target) / n)
        assert abs(frac - target) < 4 * se

    def test_chain_determinism(self):
        p = make_params()
        a = simulate_chain(p.generator, 1.0, 5, path_index=3)
        b = simulate_chain(p.generator, 1.0, 5, path_index=3)
        assert a.initial_state == b.initial_state
        assert np.array_equal(a.jump_times, b.jump_times)

    def test_chain_paths_independent_across_index(self):
        p = make_params(generator=sim.GeneratorMatrix(
            Q=[[-2.0, 2.0], [2.0, -2.0]], initial_dist=[0.5, 0.5]))
        a = simulate_chain(p.generator, 1.0, 5, path_index=0)
        b = simulate_chain(p.generator, 1.0, 5, path_index=1)
        assert not np.array_equal(a.jump_times, b.jump_times)

    def test_states_on_grid_left_continuous_labels(self):
        p = make_params()
        chain = simulate_chain(p.generator, 1.0, 11, initial_state=1)
        grid = make_grid(1.0, 0.01)
        states = chain.states_on_grid(grid)
        assert states[0] == 1
        assert states.shape == grid.shape

    def test_batch_chain_states_shape_and_start(self):
        p = make_params()
        grid = make_grid(1.0, 0.01)
        s = batch_chain_states(p.generator, grid, 50, 3, initial_state=0)
        assert s.shape == (50, 101)
        assert np.all(s[:, 0] == 0)


class TestPaths:
    def test_deterministic_log_price_step(self, zero_noise):
        # zero noise, alpha = 0, x0 = 0: one step advances log S1 by
        # (r + beta1 mu_m - (beta1^2 sigma_m^2 + sigma^2 + b1^2)/2) dt
        p = make_params()
        grid = make_grid(1.0, 0.01)
        chain = simulate_chain(p.generator, 1.0, 1, initial_state=0)
        bundle = simulate_paths(p, chain, grid, 1, x0=0.0)
        d1 = 0.02 + 1.2 * 0.05 - 0.5 * (1.2**2 * 0.35**2 + 0.09 + 0.09)
        assert np.log(bundle.S1[1]) == pytest.approx(d1 * 0.01, abs=1e-14)
        dm = 0.02 + 0.05 - 0.5 * 0.35**2
        assert np.log(bundle.Sm[1]) == pytest.approx(dm * 0.01, abs=1e-14)

    def test_spread_equals_log_price_ratio(self):
        p = make_params()
        grid = make_grid(1.0, 1e-3)
        chain = simulate_chain(p.generator, 1.0, 7)
        bundle = simulate_paths(p, chain, grid, 7, x0=0.01)
        np.testing.assert_allclose(
            bundle.X, np.log(bundle.S1) - np.log(bundle.S2), atol=1e-10
        )

    def test_path_determinism(self):
        p = make_params()
        grid = make_grid(1.0, 0.01)
        chain = simulate_chain(p.generator, 1.0, 7)
        a = simulate_paths(p, chain, grid, 7, x0=0.01)
        b = simulate_paths(p, chain, grid, 7, x0=0.01)
        assert np.array_equal(a.X, b.X)

    def test_residual_returns_start_at_zero(self):
        p = make_params()
        grid = make_grid(1.0, 0.01)
        chain = simulate_chain(p.generator, 1.0, 2)
        bundle = simulate_paths(p, chain, grid, 2)
        assert bundle.R1[0] == 0.0 and bundle.R2[0] == 0.0

    def test_terminal_spread_mean_matches_conditional_oracle(self):
        # sample mean of X_T vs the exact conditional-on-chain mean obtained
        # by piecewise-exponential integration of the linear drift ODE
        p = make_params()
        from convlab.model import derive_constants

        c = derive_constants(p)
        dt = 0.01
        grid = make_grid(1.0, dt)
        n_paths = 5000
        xt = np.empty(n_paths)
        oracle = np.empty(n_paths)
        for k in range(n_paths):
            chain = simulate_chain(p.generator, 1.0, 99, path_index=k)
            bundle = simulate_paths(p, chain, grid, 99 + k, x0=0.01)
            xt[k] = bundle.X[-1]
            states = bundle.states[:-1]
            l1 = p.regimes.lambda1[states]
            l2 = p.regimes.lambda2[states]
            a1 = p.regimes.alpha1[states]
            a2 = p.regimes.alpha2[states]
            lam = l1 + l2
            g = c.Gamma1 + l1 * a1 + l2 * a2
            m = 0.01
            for j in range(len(states)):
                decay = np.exp(-lam[j] * dt)
                m = m * decay + g[j] / lam[j] * (1.0 - decay)
            oracle[k] = m
        se = xt.std(ddof=1) / np.sqrt(n_paths)
        assert abs(xt.mean() - oracle.mean()) < 3 * se


class TestWealth:
    def test_deterministic_wealth_step(self, zero_noise):
        # constant policy (0, 0, hm) with zero noise grows log-wealth by
        # (r + hm mu_m - hm^2 sigma_m^2 / 2) dt per step
        p = make_params()
        grid = make_grid(1.0, 0.01)
        chain = simulate_chain(p.generator, 1.0, 1, initial_state=0)
        bundle = simulate_paths(p, chain, grid, 1, x0=0.0)
        hm = 0.7
        policy = PolicyHandle(func=lambda t, x, s: (0.0 * x, 0.0 * x, hm + 0.0 * x))
        W = simulate_wealth(bundle, policy, p, w0=1.0)
        growth = (0.02 + hm * 0.05 - 0.5 * hm**2 * 0.35**2) * 0.01
        assert np.log(W[1]) == pytest.approx(growth, abs=1e-14)

    def test_wealth_stays_positive(self):
        p = make_params()
        grid = make_grid(1.0, 1e-3)
        chain = simulate_chain(p.generator, 1.0, 3)
        bundle = simulate_paths(p, chain, grid, 3, x0=0.5)
        policy = PolicyHandle(func=lambda t, x, s: (5.0 + 0 * x, -5.0 + 0 * x, 3.0 + 0 * x))
        W = simulate_wealth(bundle, policy, p)
        assert np.all(W > 0)

    def test_nonfinite_weights_raise_with_step(self):
        p = make_params()
        grid = make_grid(1.0, 0.01)
        chain = simulate_chain(p.generator, 1.0, 3)
        bundle = simulate_paths(p, chain, grid, 3)

        def bad(t, x, s):
            h = np.zeros_like(x)
            h[5] = np.nan
            return h, h, h

        with pytest.raises(SimulationError, match="step 5"):
            simulate_wealth(bundle, PolicyHandle(func=bad), p)

    def test_nonpositive_initial_wealth_rejected(self):
        p = make_params()
        grid = make_grid(1.0, 0.01)
        chain = simulate_chain(p.generator, 1.0, 3)
        bundle = simulate_paths(p, chain, grid, 3)
        policy = PolicyHandle(func=lambda t, x, s: (0 * x, 0 * x, 0 * x))
        with pytest.raises(ValueError, match="positive"):
            simulate_wealth(bundle, policy, p, w0=0.0)

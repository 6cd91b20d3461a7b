"""Path simulation: hidden chain, prices, spread, residual returns, wealth.

Prices are integrated in log space (Euler-Maruyama on log S with explicit
Ito corrections) so that they stay positive by construction.  The chain is
simulated exactly from its jump-hold representation; within a grid step the
regime at the left endpoint supplies the drift coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.typing import NDArray

from .model import DerivedConstants, GeneratorMatrix, ModelParams, derive_constants

Array = NDArray[np.float64]

# sub-stream labels under the run seed: chain paths vs Brownian increments
_CHAIN_STREAM = 0
_NOISE_STREAM = 1


class SimulationError(RuntimeError):
    """Non-finite state encountered mid-path; carries the step index."""

    def __init__(self, msg: str, step: int):
        super().__init__(f"{msg} at step {step}")
        self.step = step


def make_grid(T: float, dt: float) -> Array:
    """Uniform time grid on [0, T] with step as close to dt as divides evenly."""
    n = max(1, int(round(T / dt)))
    return np.linspace(0.0, T, n + 1)


@dataclass(frozen=True)
class ChainPath:
    """Exact trajectory of the hidden chain: jump times and visited states."""

    initial_state: int
    jump_times: Array       # strictly increasing, within [0, T]
    states: Array           # state entered at each jump (int array)
    T: float

    def state_at(self, t: float) -> int:
        idx = np.searchsorted(self.jump_times, t, side="right")
        if idx == 0:
            return self.initial_state
        return int(self.states[idx - 1])

    def states_on_grid(self, grid: Array) -> NDArray[np.int64]:
        idx = np.searchsorted(self.jump_times, grid, side="right")
        all_states = np.concatenate(([self.initial_state], self.states)).astype(np.int64)
        return all_states[idx]


@dataclass(frozen=True)
class PolicyHandle:
    """Callable policy for the wealth simulator.

    ``func`` maps (t, x, regime index) for full-information policies or
    (t, x, filter vector) for partial-information ones, vectorized over
    paths, and returns the tuple (h1, h2, hm) of portfolio fractions.
    """

    func: Callable
    partial: bool = False
    name: str = "policy"


@dataclass(frozen=True)
class PathBundle:
    """One simulated scenario on a uniform grid.

    R1 and R2 are the cumulative residual-return processes of the two
    co-integrated assets (price returns net of the riskless and market
    components), the observation processes of the filtering problem.
    """

    grid: Array
    dBm: Array
    dB0: Array
    dB1: Array
    dB2: Array
    chain: ChainPath
    states: NDArray[np.int64]   # regime index at each grid point
    X: Array
    Sm: Array
    S1: Array
    S2: Array
    R1: Array
    R2: Array

    @property
    def dt(self) -> float:
        return float(self.grid[1] - self.grid[0])

    @property
    def n_steps(self) -> int:
        return len(self.grid) - 1


def _chain_rng(seed: int, path_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, _CHAIN_STREAM, path_index]))


def noise_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, _NOISE_STREAM]))


def simulate_chain(
    gen: GeneratorMatrix,
    T: float,
    seed: int,
    path_index: int = 0,
    initial_state: Optional[int] = None,
) -> ChainPath:
    """Exact continuous-time simulation of the hidden chain.

    Holding times are exponential with rate -q^{ii}; the next state is drawn
    proportionally to the off-diagonal intensities.  A zero exit rate yields
    an absorbing state.
    """
    rng = _chain_rng(seed, path_index)
    K = gen.K
    if initial_state is None:
        state = int(rng.choice(K, p=gen.initial_dist))
    else:
        state = int(initial_state)
    jump_times: list[float] = []
    states: list[int] = []
    t = 0.0
    s = state
    while True:
        rate = -gen.Q[s, s]
        if rate <= 0.0:
            break
        t += rng.exponential(1.0 / rate)
        if t >= T:
            break
        probs = gen.Q[s].copy()
        probs[s] = 0.0
        s = int(rng.choice(K, p=probs / rate))
        jump_times.append(t)
        states.append(s)
    return ChainPath(
        initial_state=state,
        jump_times=np.asarray(jump_times),
        states=np.asarray(states, dtype=np.int64),
        T=T,
    )


def batch_chain_states(
    gen: GeneratorMatrix,
    grid: Array,
    n_paths: int,
    seed: int,
    initial_state: Optional[int] = None,
) -> NDArray[np.int16]:
    """Regime index at every grid point for a batch of independent chains."""
    out = np.empty((n_paths, len(grid)), dtype=np.int16)
    T = float(grid[-1])
    for i in range(n_paths):
        chain = simulate_chain(gen, T, seed, path_index=i, initial_state=initial_state)
        out[i] = chain.states_on_grid(grid)
    return out


def _log_price_drifts(p: ModelParams) -> tuple[float, float, float]:
    """Constant parts of the log-price drifts (Ito-corrected)."""
    dm = p.r + p.mu_m - 0.5 * p.sigma_m**2
    d1 = p.r + p.beta1 * p.mu_m - 0.5 * (p.beta1**2 * p.sigma_m**2 + p.sigma**2 + p.b1**2)
    d2 = p.r + p.beta2 * p.mu_m - 0.5 * (p.beta2**2 * p.sigma_m**2 + p.sigma**2 + p.b2**2)
    return dm, d1, d2


def simulate_paths(
    params: ModelParams,
    chain: ChainPath,
    grid: Array,
    seed: int,
    x0: float = 0.0,
    sm0: float = 1.0,
    s1_0: float = 1.0,
) -> PathBundle:
    """Simulate prices, spread and residual returns along a given chain path.

    The spread follows its own Euler recursion; because the log-price
    recursions use the same left-endpoint spread and the same noise, the
    identity X = log S1 - log S2 holds to rounding error at every node.
    """
    consts = derive_constants(params)
    rng = noise_rng(seed)
    n = len(grid) - 1
    dt = float(grid[1] - grid[0])
    sqdt = np.sqrt(dt)
    dBm, dB0, dB1, dB2 = rng.standard_normal((4, n)) * sqdt
    states = chain.states_on_grid(grid)

    l1 = params.regimes.lambda1[states[:-1]]
    l2 = params.regimes.lambda2[states[:-1]]
    a1 = params.regimes.alpha1[states[:-1]]
    a2 = params.regimes.alpha2[states[:-1]]

    X = np.empty(n + 1)
    X[0] = x0
    mu1 = np.empty(n)
    mu2 = np.empty(n)
    for k in range(n):
        x = X[k]
        mu1[k] = -l1[k] * (x - a1[k])
        mu2[k] = l2[k] * (x - a2[k])
        drift = consts.Gamma1 + l1[k] * a1[k] + l2[k] * a2[k] - (l1[k] + l2[k]) * x
        X[k + 1] = (
            x
            + drift * dt
            + (params.beta1 - params.beta2) * params.sigma_m * dBm[k]
            + params.b1 * dB1[k]
            - params.b2 * dB2[k]
        )
        if not np.isfinite(X[k + 1]):
            raise SimulationError("non-finite spread", k)

    dm, d1, d2 = _log_price_drifts(params)
    dlogSm = dm * dt + params.sigma_m * dBm
    dlogS1 = (d1 + mu1) * dt + params.beta1 * params.sigma_m * dBm + params.sigma * dB0 + params.b1 * dB1
    dlogS2 = (d2 + mu2) * dt + params.beta2 * params.sigma_m * dBm + params.sigma * dB0 + params.b2 * dB2

    def _accumulate(start: float, incr: Array) -> Array:
        out = np.empty(n + 1)
        out[0] = np.log(start)
        out[1:] = np.log(start) + np.cumsum(incr)
        return np.exp(out)

    Sm = _accumulate(sm0, dlogSm)
    S1 = _accumulate(s1_0, dlogS1)
    # anchor S2 so that log S1 - log S2 equals the initial spread
    S2 = _accumulate(s1_0 * np.exp(-x0), dlogS2)

    R1 = np.concatenate(([0.0], np.cumsum(mu1 * dt + params.sigma * dB0 + params.b1 * dB1)))
    R2 = np.concatenate(([0.0], np.cumsum(mu2 * dt + params.sigma * dB0 + params.b2 * dB2)))

    return PathBundle(
        grid=grid, dBm=dBm, dB0=dB0, dB1=dB1, dB2=dB2,
        chain=chain, states=states, X=X, Sm=Sm, S1=S1, S2=S2, R1=R1, R2=R2,
    )


def log_wealth_increments(
    params: ModelParams,
    h1: Array,
    h2: Array,
    hm: Array,
    mu1: Array,
    mu2: Array,
    dt: float,
    dBm: Array,
    dB0: Array,
    dB1: Array,
    dB2: Array,
) -> Array:
    """Euler increments of log W for given weights and pricing errors."""
    market = hm + h1 * params.beta1 + h2 * params.beta2
    drift = params.r + market * params.mu_m + h1 * mu1 + h2 * mu2
    quad = (
        params.sigma_m**2 * market**2
        + params.sigma**2 * (h1 + h2) ** 2
        + params.b1**2 * h1**2
        + params.b2**2 * h2**2
    )
    return (
        (drift - 0.5 * quad) * dt
        + params.sigma_m * market * dBm
        + params.sigma * (h1 + h2) * dB0
        + params.b1 * h1 * dB1
        + params.b2 * h2 * dB2
    )


def simulate_wealth(
    bundle: PathBundle,
    policy: PolicyHandle,
    params: ModelParams,
    w0: float = 1.0,
    filter_path=None,
) -> Array:
    """Wealth along a simulated path under a given policy.

    Log-wealth is integrated by Euler with weights evaluated at the left
    endpoint of each step, so W stays positive.  Partial-information
    policies read the filter trajectory instead of the chain.
    """
    if w0 <= 0:
        raise ValueError("initial wealth must be positive")
    n = bundle.n_steps
    t = bundle.grid[:-1]
    x = bundle.X[:-1]
    if policy.partial:
        if filter_path is None:
            raise ValueError("partial-information policy requires a filter path")
        h1, h2, hm = policy.func(t, x, filter_path.pi[:-1])
    else:
        h1, h2, hm = policy.func(t, x, bundle.states[:-1])
    h1, h2, hm = (np.broadcast_to(np.asarray(h, float), (n,)) for h in (h1, h2, hm))
    bad = ~(np.isfinite(h1) & np.isfinite(h2) & np.isfinite(hm))
    if np.any(bad):
        raise SimulationError("non-finite portfolio weights", int(np.argmax(bad)))

    l1 = params.regimes.lambda1[bundle.states[:-1]]
    l2 = params.regimes.lambda2[bundle.states[:-1]]
    a1 = params.regimes.alpha1[bundle.states[:-1]]
    a2 = params.regimes.alpha2[bundle.states[:-1]]
    mu1 = -l1 * (x - a1)
    mu2 = l2 * (x - a2)
    dlw = log_wealth_increments(
        params, h1, h2, hm, mu1, mu2, bundle.dt,
        bundle.dBm, bundle.dB0, bundle.dB1, bundle.dB2,
    )
    logW = np.concatenate(([np.log(w0)], np.log(w0) + np.cumsum(dlw)))
    return np.exp(logW)

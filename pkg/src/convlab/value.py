"""Value functions: backward ODE systems, the two-regime degenerate
parabolic PDE system, loss of utility and Monte Carlo utility estimation.

Both the ODE and PDE systems are block-triangular: the quadratic
coefficient closes on itself, the linear coefficient sources on it, and
the constant term sources on both.  They are therefore integrated
backward from the zero terminal condition in that order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.typing import NDArray

from .filtering import filter_step, innovations_step
from .model import (
    GeneratorMatrix,
    ModelParams,
    derive_constants,
    params_fingerprint,
    phi_constants,
    theta_constants,
)
from .simulate import (
    PolicyHandle,
    batch_chain_states,
    log_wealth_increments,
    make_grid,
    noise_rng,
)

Array = NDArray[np.float64]

VARIANTS = ("unrestricted", "beta_neutral")


class SolverError(ValueError):
    pass


def _source_constants(params: ModelParams, variant: str, l1, l2, a1, a2):
    if variant == "unrestricted":
        return theta_constants(params, l1, l2, a1, a2)
    if variant == "beta_neutral":
        return phi_constants(params, l1, l2, a1, a2)
    raise SolverError(f"unknown variant {variant!r}")


@dataclass(frozen=True)
class ValueCoefficientsFull:
    """Coefficients (m, n, u) per regime on a uniform time grid."""

    grid: Array          # ascending, grid[-1] = T
    m: Array             # (N_t+1, K)
    n: Array
    u: Array
    variant: str
    fingerprint: str


@dataclass(frozen=True)
class ValuePartialSolution:
    """Two-regime partial-information coefficients on a time x probability grid."""

    grid: Array          # time, ascending
    p_grid: Array        # [0, 1]
    mbar: Array          # (N_t+1,)
    nbar: Array          # (N_t+1, N_p+1)
    ubar: Array
    variant: str
    fingerprint: str


def solve_full_ode(
    params: ModelParams, N_t: int = 2000, variant: str = "unrestricted"
) -> ValueCoefficientsFull:
    """Solve the full-information coefficient system by backward RK4.

    The 3K equations are integrated jointly; the system is linear with
    constant coefficients, so no stage-time interpolation is needed.
    """
    if N_t < 10:
        raise SolverError("N_t must be at least 10")
    K = params.K
    consts = derive_constants(params)
    reg = params.regimes
    Q = params.generator.Q
    lam_sum = reg.lambda1 + reg.lambda2
    G = consts.Gamma1 + reg.lambda1 * reg.alpha1 + reg.lambda2 * reg.alpha2
    S1, S2, S3 = _source_constants(
        params, variant, reg.lambda1, reg.lambda2, reg.alpha1, reg.alpha2
    )

    def rhs(y: Array) -> Array:
        # backward time s = T - t
        m, n, u = y[:K], y[K : 2 * K], y[2 * K :]
        dm = -2.0 * lam_sum * m + Q @ m + S1
        dn = -lam_sum * n + Q @ n + 2.0 * G * m - S2
        du = Q @ u + consts.Gamma2 * m + G * n + S3
        return np.concatenate([dm, dn, du])

    ds = params.T / N_t
    y = np.zeros(3 * K)
    out = np.empty((N_t + 1, 3 * K))
    out[0] = y
    for k in range(N_t):
        k1 = rhs(y)
        k2 = rhs(y + 0.5 * ds * k1)
        k3 = rhs(y + 0.5 * ds * k2)
        k4 = rhs(y + ds * k3)
        y = y + (ds / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(y)):
            raise SolverError(f"ODE solution blew up at backward step {k + 1}")
        out[k + 1] = y

    # out is indexed by backward time; flip to forward time
    out = out[::-1]
    grid = np.linspace(0.0, params.T, N_t + 1)
    return ValueCoefficientsFull(
        grid=grid,
        m=out[:, :K].copy(),
        n=out[:, K : 2 * K].copy(),
        u=out[:, 2 * K :].copy(),
        variant=variant,
        fingerprint=params_fingerprint(params),
    )


def _interp_columns(grid: Array, values: Array, t) -> Array:
    """Linear interpolation of each column of (N_t+1, K) values at time t."""
    t = np.asarray(t, dtype=float)
    return np.stack(
        [np.interp(t, grid, values[:, i]) for i in range(values.shape[1])], axis=-1
    )


def value_full(t, w, x, i, coeffs: ValueCoefficientsFull):
    """Value function log(w) + m x^2 + n x + u at (t, w, x, regime)."""
    w = np.asarray(w, dtype=float)
    if np.any(w <= 0):
        raise SolverError("wealth must be positive")
    m = _interp_columns(coeffs.grid, coeffs.m, t)[..., i]
    n = _interp_columns(coeffs.grid, coeffs.n, t)[..., i]
    u = _interp_columns(coeffs.grid, coeffs.u, t)[..., i]
    x = np.asarray(x, dtype=float)
    return np.log(w) + m * x**2 + n * x + u


def _constant_lambdas(params: ModelParams) -> tuple[float, float]:
    if not params.regimes.constant_lambda:
        raise SolverError(
            "partial-information value functions require regime-independent "
            "mean-reversion intensities"
        )
    return float(params.regimes.lambda1[0]), float(params.regimes.lambda2[0])


def mbar_closed_form(t, params: ModelParams, variant: str = "unrestricted"):
    """Quadratic coefficient of the partial-information value function.

    Scalar linear ODE with constant source, solved in closed form.
    """
    l1, l2 = _constant_lambdas(params)
    lam = l1 + l2
    if lam <= 0:
        raise SolverError("lambda1 + lambda2 must be positive")
    S1, _, _ = _source_constants(params, variant, l1, l2, 0.0, 0.0)
    t = np.asarray(t, dtype=float)
    return S1 / (2.0 * lam) * (1.0 - np.exp(-2.0 * lam * (params.T - t)))


def reduced_filter_coefficients(params: ModelParams, p):
    """Scalar filter drift and diffusion for the two-regime reduction p = pi^1.

    Returns (mu_p, H11, H12, a) where a = H11^2 + H12^2 is the squared
    diffusion of p.
    """
    if params.K != 2:
        raise SolverError("reduction requires exactly two regimes")
    l1, l2 = _constant_lambdas(params)
    consts = derive_constants(params)
    reg = params.regimes
    p = np.asarray(p, dtype=float)
    q12 = params.generator.Q[0, 1]
    q21 = params.generator.Q[1, 0]
    mu_p = q21 * (1.0 - p) - q12 * p
    da1 = reg.alpha1[0] - reg.alpha1[1]
    da2 = reg.alpha2[0] - reg.alpha2[1]
    pq = p * (1.0 - p)
    s1, s2, rho = consts.sigma1, consts.sigma2, consts.rho
    H11 = l1 * pq * da1 / s1
    H12 = (-l2 * s1 * pq * da2 - s2 * rho * l1 * pq * da1) / (
        s1 * s2 * np.sqrt(1.0 - rho**2)
    )
    return mu_p, H11, H12, H11**2 + H12**2


def solve_partial_pde(
    params: ModelParams,
    N_t: int = 2000,
    N_p: int = 200,
    variant: str = "unrestricted",
    max_substeps: int = 2_000_000,
) -> ValuePartialSolution:
    """Solve the two-regime partial-information PDE system.

    Explicit march backward in time: central differences for the degenerate
    diffusion, first-order upwind for the probability drift, sub-stepping to
    satisfy the stability condition.  The diffusion vanishes and the drift
    points inward at both endpoints, so no boundary data is imposed; the
    endpoint rows are the drift-only one-sided form of the equation itself.
    """
    if N_p < 50:
        raise SolverError("N_p must be at least 50")
    l1, l2 = _constant_lambdas(params)
    lam = l1 + l2
    consts = derive_constants(params)
    reg = params.regimes

    p = np.linspace(0.0, 1.0, N_p + 1)
    dp = p[1] - p[0]
    mu_p, H11, H12, a = reduced_filter_coefficients(params, p)

    a1bar = p * reg.alpha1[0] + (1.0 - p) * reg.alpha1[1]
    a2bar = p * reg.alpha2[0] + (1.0 - p) * reg.alpha2[1]
    _, S2, S3 = _source_constants(params, variant, l1, l2, a1bar, a2bar)
    G = consts.Gamma1 + l1 * a1bar + l2 * a2bar
    b1sq, b2sq, s2 = params.b1**2, params.b2**2, params.sigma**2
    cross = (
        b1sq / consts.sigma1 * H11
        - np.sqrt(s2 * (b1sq + b2sq) + b1sq * b2sq) / consts.sigma1 * H12
    )

    dtau_out = params.T / N_t
    stiffness = a.max() / dp**2 + np.abs(mu_p).max() / dp + abs(lam)
    n_sub = max(1, math.ceil(dtau_out * stiffness / 0.9))
    if n_sub * N_t > max_substeps:
        raise SolverError(
            f"stability requires {n_sub * N_t} sub-steps, over the budget "
            f"of {max_substeps}"
        )
    dtau = dtau_out / n_sub

    pos = mu_p > 0.0

    def upwind(v: Array) -> Array:
        fwd = np.empty_like(v)
        fwd[:-1] = (v[1:] - v[:-1]) / dp
        fwd[-1] = (v[-1] - v[-2]) / dp
        bwd = np.empty_like(v)
        bwd[1:] = (v[1:] - v[:-1]) / dp
        bwd[0] = fwd[0]
        return np.where(pos, fwd, bwd)

    def central(v: Array) -> Array:
        out = np.zeros_like(v)
        out[1:-1] = (v[2:] - 2 * v[1:-1] + v[:-2]) / dp**2
        return out

    def centered_grad(v: Array) -> Array:
        out = np.empty_like(v)
        out[1:-1] = (v[2:] - v[:-2]) / (2 * dp)
        out[0] = (v[1] - v[0]) / dp
        out[-1] = (v[-1] - v[-2]) / dp
        return out

    nbar = np.zeros((N_t + 1, N_p + 1))
    ubar = np.zeros((N_t + 1, N_p + 1))
    n_cur = np.zeros(N_p + 1)
    u_cur = np.zeros(N_p + 1)
    tau = 0.0
    for k in range(N_t):
        for _ in range(n_sub):
            mb = mbar_closed_form(params.T - tau, params, variant)
            dn = (
                -lam * n_cur
                + mu_p * upwind(n_cur)
                + 0.5 * a * central(n_cur)
                + 2.0 * G * mb
                - S2
            )
            du = (
                consts.Gamma2 * mb
                + G * n_cur
                + S3
                + mu_p * upwind(u_cur)
                + 0.5 * a * central(u_cur)
                + cross * centered_grad(n_cur)
            )
            n_cur = n_cur + dtau * dn
            u_cur = u_cur + dtau * du
            tau += dtau
        if not (np.all(np.isfinite(n_cur)) and np.all(np.isfinite(u_cur))):
            raise SolverError(f"PDE solution blew up at output step {k + 1}")
        nbar[k + 1] = n_cur
        ubar[k + 1] = u_cur

    # index 0 currently holds tau=0 (t=T); flip to forward time
    nbar = nbar[::-1].copy()
    ubar = ubar[::-1].copy()
    grid = np.linspace(0.0, params.T, N_t + 1)
    mbar = np.asarray(mbar_closed_form(grid, params, variant))
    return ValuePartialSolution(
        grid=grid,
        p_grid=p,
        mbar=mbar,
        nbar=nbar,
        ubar=ubar,
        variant=variant,
        fingerprint=params_fingerprint(params),
    )


def _interp_tp(sol: ValuePartialSolution, values: Array, t, p):
    """Bilinear interpolation of a (t, p) table."""
    t = float(t)
    p = np.asarray(p, dtype=float)
    it = np.clip(np.searchsorted(sol.grid, t) - 1, 0, len(sol.grid) - 2)
    wt = (t - sol.grid[it]) / (sol.grid[it + 1] - sol.grid[it])
    row = (1.0 - wt) * values[it] + wt * values[it + 1]
    return np.interp(p, sol.p_grid, row)


def value_partial(t, w, x, p, sol: ValuePartialSolution):
    """Partial-information value log(w) + mbar x^2 + nbar x + ubar."""
    w = np.asarray(w, dtype=float)
    if np.any(w <= 0):
        raise SolverError("wealth must be positive")
    mbar = np.interp(t, sol.grid, sol.mbar)
    nbar = _interp_tp(sol, sol.nbar, t, p)
    ubar = _interp_tp(sol, sol.ubar, t, p)
    x = np.asarray(x, dtype=float)
    return np.log(w) + mbar * x**2 + nbar * x + ubar


def loss_of_utility(
    t, x, p, full: ValueCoefficientsFull, partial: ValuePartialSolution
):
    """Information premium l(t, x, p): full-information value averaged under
    the filter minus the partial-information value (the log-wealth terms
    cancel)."""
    if full.fingerprint != partial.fingerprint:
        raise SolverError(
            "full and partial solutions were computed from different parameters"
        )
    p = np.asarray(p, dtype=float)
    m = _interp_columns(full.grid, full.m, t)
    n = _interp_columns(full.grid, full.n, t)
    u = _interp_columns(full.grid, full.u, t)
    m_mix = p * m[..., 0] + (1.0 - p) * m[..., 1]
    n_mix = p * n[..., 0] + (1.0 - p) * n[..., 1]
    u_mix = p * u[..., 0] + (1.0 - p) * u[..., 1]
    mbar = np.interp(t, partial.grid, partial.mbar)
    nbar = _interp_tp(partial, partial.nbar, t, p)
    ubar = _interp_tp(partial, partial.ubar, t, p)
    x = np.asarray(x, dtype=float)
    return (m_mix - mbar) * x**2 + (n_mix - nbar) * x + (u_mix - ubar)


def loss_surface(
    full: ValueCoefficientsFull,
    partial: ValuePartialSolution,
    x: float,
    n_time: int = 50,
    n_p: int = 50,
):
    """Loss of utility on a (time-to-maturity, p) grid; returns (ttm, p, L)."""
    T = partial.grid[-1]
    ttm = np.linspace(0.0, T, n_time + 1)
    p = np.linspace(0.0, 1.0, n_p + 1)
    L = np.empty((len(ttm), len(p)))
    for k, s in enumerate(ttm):
        L[k] = loss_of_utility(T - s, x, p, full, partial)
    return ttm, p, L


def hjb_residual_full(
    coeffs: ValueCoefficientsFull,
    params: ModelParams,
    x_grid: Array,
) -> Array:
    """Pointwise residual of the solved quadratic ansatz in the reduced HJB.

    Time derivatives come from central differences on the solution grid;
    derivatives in the spread are exact for the quadratic ansatz.  Shape of
    the result: (N_t-1, n_x, K).
    """
    consts = derive_constants(params)
    reg = params.regimes
    Q = params.generator.Q
    S1, S2, S3 = _source_constants(
        params, coeffs.variant, reg.lambda1, reg.lambda2, reg.alpha1, reg.alpha2
    )
    dt = coeffs.grid[1] - coeffs.grid[0]
    m, n, u = coeffs.m, coeffs.n, coeffs.u
    m_t = (m[2:] - m[:-2]) / (2 * dt)
    n_t = (n[2:] - n[:-2]) / (2 * dt)
    u_t = (u[2:] - u[:-2]) / (2 * dt)
    mc, nc, uc = m[1:-1], n[1:-1], u[1:-1]

    x = np.asarray(x_grid, dtype=float)[np.newaxis, :, np.newaxis]
    G0 = consts.Gamma1 + reg.lambda1 * reg.alpha1 + reg.lambda2 * reg.alpha2
    lam_sum = reg.lambda1 + reg.lambda2

    nu_t = m_t[:, np.newaxis, :] * x**2 + n_t[:, np.newaxis, :] * x + u_t[:, np.newaxis, :]
    nu = mc[:, np.newaxis, :] * x**2 + nc[:, np.newaxis, :] * x + uc[:, np.newaxis, :]
    nu_x = 2.0 * mc[:, np.newaxis, :] * x + nc[:, np.newaxis, :]
    nu_xx = 2.0 * mc[:, np.newaxis, :]
    jump = np.einsum("txj,ij->txi", nu, Q)
    drift = G0 - lam_sum * x
    return (
        nu_t
        + S1 * x**2
        - S2 * x
        + S3
        + jump
        + 0.5 * consts.Gamma2 * nu_xx
        + drift * nu_x
    )


# ---------------------------------------------------------------------------
# Monte Carlo
# ---------------------------------------------------------------------------

@dataclass
class MonteCarloResult:
    """Terminal log-wealth per policy plus optional filter probes."""

    log_wealth: dict[str, Array]
    grid: Array
    states: NDArray[np.int16]
    pi_probes: dict[int, Array]


def mc_terminal_log_wealth(
    params: ModelParams,
    policies: list[PolicyHandle],
    w0: float,
    x0: float,
    n_paths: int,
    seed: int,
    dt: float = 1e-3,
    initial_state: Optional[int] = None,
    p0=None,
    probe_indices: tuple[int, ...] = (),
) -> MonteCarloResult:
    """Vectorized Monte Carlo over paths with common random numbers.

    All policies see the same chain and Brownian increments, which makes
    pairwise utility comparisons low-variance.  If any policy is
    partial-information, the filter runs in the loop from ``p0`` and the
    chain's initial state is drawn from ``p0`` as well (unless overridden).
    """
    consts = derive_constants(params)
    reg = params.regimes
    grid = make_grid(params.T, dt)
    n = len(grid) - 1
    dt = float(grid[1] - grid[0])

    need_filter = any(pol.partial for pol in policies) or probe_indices
    gen = params.generator
    if p0 is not None and initial_state is None:
        gen = GeneratorMatrix(Q=params.generator.Q, initial_dist=p0)
    states = batch_chain_states(gen, grid, n_paths, seed, initial_state=initial_state)

    rng = noise_rng(seed)
    sqdt = np.sqrt(dt)
    X = np.full(n_paths, float(x0))
    logW = {pol.name: np.full(n_paths, np.log(w0)) for pol in policies}
    if need_filter:
        if p0 is None:
            raise SolverError("filter probes or partial policies require p0")
        pi = np.tile(np.asarray(p0, dtype=float), (n_paths, 1))
    pi_probes: dict[int, Array] = {}
    if 0 in probe_indices:
        pi_probes[0] = pi.copy()

    for k in range(n):
        s = states[:, k].astype(np.int64)
        l1 = reg.lambda1[s]
        l2 = reg.lambda2[s]
        a1 = reg.alpha1[s]
        a2 = reg.alpha2[s]
        mu1 = -l1 * (X - a1)
        mu2 = l2 * (X - a2)
        dBm, dB0, dB1, dB2 = rng.standard_normal((4, n_paths)) * sqdt

        for pol in policies:
            if pol.partial:
                h1, h2, hm = pol.func(grid[k], X, pi)
            else:
                h1, h2, hm = pol.func(grid[k], X, s)
            logW[pol.name] += log_wealth_increments(
                params, h1, h2, hm, mu1, mu2, dt, dBm, dB0, dB1, dB2
            )

        if need_filter:
            dR1 = mu1 * dt + params.sigma * dB0 + params.b1 * dB1
            dR2 = mu2 * dt + params.sigma * dB0 + params.b2 * dB2
            dI1, dI2 = innovations_step(dR1, dR2, X, pi, dt, params, consts)
            pi, _ = filter_step(pi, X, dI1, dI2, dt, params, consts)

        drift = consts.Gamma1 + l1 * a1 + l2 * a2 - (l1 + l2) * X
        X = (
            X
            + drift * dt
            + (params.beta1 - params.beta2) * params.sigma_m * dBm
            + params.b1 * dB1
            - params.b2 * dB2
        )
        if (k + 1) in probe_indices:
            pi_probes[k + 1] = pi.copy()

    return MonteCarloResult(log_wealth=logW, grid=grid, states=states, pi_probes=pi_probes)


def mc_expected_log_utility(
    policy: PolicyHandle,
    params: ModelParams,
    w0: float,
    x0: float,
    start,
    n_paths: int,
    seed: int,
    dt: float = 1e-3,
) -> tuple[float, float]:
    """Sample mean and standard error of log W_T under a policy.

    ``start`` is the initial regime index for full-information policies or
    the initial filter vector for partial-information ones.
    """
    if n_paths < 100:
        raise SolverError("need at least 100 paths")
    if policy.partial:
        result = mc_terminal_log_wealth(
            params, [policy], w0, x0, n_paths, seed, dt=dt, p0=np.asarray(start, float)
        )
    else:
        result = mc_terminal_log_wealth(
            params, [policy], w0, x0, n_paths, seed, dt=dt, initial_state=int(start)
        )
    lw = result.log_wealth[policy.name]
    return float(lw.mean()), float(lw.std(ddof=1) / np.sqrt(n_paths))

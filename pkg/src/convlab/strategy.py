"""Closed-form optimal portfolio weights and a quadratic-programming oracle.

Six variants: unrestricted / beta-neutral / delta-neutral, each under full
information (regime observed) and partial information (filter fed in via
certainty equivalence).  All weight functions broadcast over arrays of the
spread and regime/filter inputs, so they can be used directly as policies
for the simulator.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from numpy.typing import NDArray

from .filtering import mu_vectors
from .model import DerivedConstants, ModelParams, derive_constants
from .simulate import PolicyHandle

Array = NDArray[np.float64]


class StrategyError(ValueError):
    pass


@dataclass(frozen=True)
class PortfolioWeights:
    """Fractions of wealth in the two co-integrated assets and the index."""

    h1: float | Array
    h2: float | Array
    hm: float | Array

    @property
    def cash(self):
        return 1.0 - self.h1 - self.h2 - self.hm

    def as_tuple(self):
        return self.h1, self.h2, self.hm


def _regime_mu(params: ModelParams, x, i):
    i = np.asarray(i, dtype=np.int64)
    l1 = params.regimes.lambda1[i]
    l2 = params.regimes.lambda2[i]
    a1 = params.regimes.alpha1[i]
    a2 = params.regimes.alpha2[i]
    x = np.asarray(x, dtype=float)
    return -l1 * (x - a1), l2 * (x - a2)


def _filtered_mu(params: ModelParams, x, p):
    mu1, mu2 = mu_vectors(params, x)
    p = np.asarray(p, dtype=float)
    return np.sum(mu1 * p, axis=-1), np.sum(mu2 * p, axis=-1)


def _unrestricted(params: ModelParams, consts: DerivedConstants, mu1, mu2):
    h1 = (mu1 - mu2 * consts.varrho2) / (params.b1**2 + params.b2**2 * consts.varrho2)
    h2 = (mu2 - mu1 * consts.varrho1) / (params.b2**2 + params.b1**2 * consts.varrho1)
    hm = params.mu_m / params.sigma_m**2 - params.beta1 * h1 - params.beta2 * h2
    return PortfolioWeights(h1=h1, h2=h2, hm=hm)


def _beta_neutral(params: ModelParams, mu1, mu2):
    if params.beta2 == 0:
        raise StrategyError("beta-neutral constraint degenerates when beta2 = 0")
    ratio = params.beta1 / params.beta2
    denom = (
        params.b1**2
        + ratio**2 * params.b2**2
        + params.sigma**2 * (1.0 - ratio) ** 2
    )
    # numerator written via pricing-error drifts: -mu1 = lambda1 (x - alpha1)
    h1 = (mu1 - ratio * mu2) / denom
    h2 = -ratio * h1
    hm = np.broadcast_to(params.mu_m / params.sigma_m**2, np.shape(h1)) if np.ndim(h1) else params.mu_m / params.sigma_m**2
    return PortfolioWeights(h1=h1, h2=h2, hm=hm)


def _delta_neutral(params: ModelParams, mu1, mu2):
    h1 = (mu1 - mu2) / (params.b1**2 + params.b2**2)
    h2 = -np.asarray(h1)
    hm = np.broadcast_to(params.mu_m / params.sigma_m**2, np.shape(h1)) if np.ndim(h1) else params.mu_m / params.sigma_m**2
    return PortfolioWeights(h1=h1, h2=h2, hm=hm)


def optimal_full(x, i, params: ModelParams, consts: Optional[DerivedConstants] = None) -> PortfolioWeights:
    """Optimal unrestricted weights given the observed regime."""
    consts = consts or derive_constants(params)
    mu1, mu2 = _regime_mu(params, x, i)
    return _unrestricted(params, consts, mu1, mu2)


def optimal_beta_neutral_full(x, i, params: ModelParams) -> PortfolioWeights:
    """Optimal weights under the zero-portfolio-beta constraint, regime observed."""
    mu1, mu2 = _regime_mu(params, x, i)
    return _beta_neutral(params, mu1, mu2)


def optimal_delta_neutral_full(x, i, params: ModelParams) -> PortfolioWeights:
    """Optimal equal-and-opposite stock legs, regime observed."""
    mu1, mu2 = _regime_mu(params, x, i)
    return _delta_neutral(params, mu1, mu2)


def _require_constant_lambda(params: ModelParams):
    if not params.regimes.constant_lambda:
        raise StrategyError(
            "partial-information strategies require regime-independent "
            "mean-reversion intensities"
        )


def optimal_partial(x, p, params: ModelParams, consts: Optional[DerivedConstants] = None) -> PortfolioWeights:
    """Certainty-equivalent unrestricted weights given the filter state."""
    _require_constant_lambda(params)
    consts = consts or derive_constants(params)
    mu1, mu2 = _filtered_mu(params, x, p)
    return _unrestricted(params, consts, mu1, mu2)


def optimal_beta_neutral_partial(x, p, params: ModelParams) -> PortfolioWeights:
    _require_constant_lambda(params)
    mu1, mu2 = _filtered_mu(params, x, p)
    return _beta_neutral(params, mu1, mu2)


def optimal_delta_neutral_partial(x, p, params: ModelParams) -> PortfolioWeights:
    _require_constant_lambda(params)
    mu1, mu2 = _filtered_mu(params, x, p)
    return _delta_neutral(params, mu1, mu2)


def covariance_matrix(params: ModelParams) -> Array:
    """Instantaneous covariance of the (asset1, asset2, index) returns."""
    bm = params.sigma_m**2
    s2 = params.sigma**2
    return np.array(
        [
            [params.beta1**2 * bm + s2 + params.b1**2, params.beta1 * params.beta2 * bm + s2, params.beta1 * bm],
            [params.beta1 * params.beta2 * bm + s2, params.beta2**2 * bm + s2 + params.b2**2, params.beta2 * bm],
            [params.beta1 * bm, params.beta2 * bm, bm],
        ]
    )


def excess_drifts(params: ModelParams, mu1, mu2) -> Array:
    """Excess (over riskless) drift vector for given pricing-error drifts."""
    return np.array(
        [params.beta1 * params.mu_m + mu1, params.beta2 * params.mu_m + mu2, params.mu_m]
    )


def markowitz_oracle(
    excess: Array,
    params: ModelParams,
    constraint: Optional[tuple[float, float]] = None,
) -> PortfolioWeights:
    """Brute-force myopic log-utility maximizer.

    Unconstrained: solves cov @ h = excess.  With a linear constraint
    a1 h1 + a2 h2 = 0, solves the KKT system of the equality-constrained
    quadratic program.
    """
    cov = covariance_matrix(params)
    excess = np.asarray(excess, dtype=float)
    try:
        if constraint is None:
            h = np.linalg.solve(cov, excess)
        else:
            a1, a2 = constraint
            kkt = np.zeros((4, 4))
            kkt[:3, :3] = cov
            kkt[:3, 3] = [a1, a2, 0.0]
            kkt[3, :3] = [a1, a2, 0.0]
            rhs = np.append(excess, 0.0)
            h = np.linalg.solve(kkt, rhs)[:3]
    except np.linalg.LinAlgError as exc:
        raise StrategyError(f"singular mean-variance system: {exc}") from exc
    return PortfolioWeights(h1=h[0], h2=h[1], hm=h[2])


# ---------------------------------------------------------------------------
# Policy factories for the simulator
# ---------------------------------------------------------------------------

_FULL_VARIANTS = {
    "unrestricted": optimal_full,
    "beta_neutral": lambda x, i, params: optimal_beta_neutral_full(x, i, params),
    "delta_neutral": lambda x, i, params: optimal_delta_neutral_full(x, i, params),
}

_PARTIAL_VARIANTS = {
    "unrestricted": optimal_partial,
    "beta_neutral": lambda x, p, params: optimal_beta_neutral_partial(x, p, params),
    "delta_neutral": lambda x, p, params: optimal_delta_neutral_partial(x, p, params),
}


def full_info_policy(params: ModelParams, variant: str = "unrestricted") -> PolicyHandle:
    fn = _FULL_VARIANTS[variant]
    consts = derive_constants(params)

    def policy(t, x, state):
        if fn is optimal_full:
            w = fn(x, state, params, consts)
        else:
            w = fn(x, state, params)
        return w.as_tuple()

    return PolicyHandle(func=policy, partial=False, name=f"full_{variant}")


def partial_info_policy(params: ModelParams, variant: str = "unrestricted") -> PolicyHandle:
    fn = _PARTIAL_VARIANTS[variant]
    consts = derive_constants(params)

    def policy(t, x, p):
        if fn is optimal_partial:
            w = fn(x, p, params, consts)
        else:
            w = fn(x, p, params)
        return w.as_tuple()

    return PolicyHandle(func=policy, partial=True, name=f"partial_{variant}")


def constant_policy(h1: float, h2: float, hm: float, name: str = "constant") -> PolicyHandle:
    def policy(t, x, _state):
        shape = np.shape(x)
        return (np.full(shape, h1), np.full(shape, h2), np.full(shape, hm))

    return PolicyHandle(func=policy, partial=False, name=name)


def perturbed_policy(base: PolicyHandle, dh1=0.0, dh2=0.0, dhm=0.0, scale=1.0, name="perturbed") -> PolicyHandle:
    """Base policy with a structured shift/scaling, for suboptimality checks."""

    def policy(t, x, state_or_p):
        h1, h2, hm = base.func(t, x, state_or_p)
        return (scale * h1 + dh1, scale * h2 + dh2, scale * hm + dhm)

    return PolicyHandle(func=policy, partial=base.partial, name=name)

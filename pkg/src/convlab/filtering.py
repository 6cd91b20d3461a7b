"""Innovations-based filter for the hidden regime.

The observed residual-return increments are turned into innovation
increments (a Brownian motion under the observation filtration) and the
conditional state probabilities are propagated by an Euler step of the
filter SDE, followed by a clip-and-renormalize projection back onto the
simplex.  The filter never reads the chain path.

All step functions broadcast over leading axes, so a Monte Carlo batch of
paths can be filtered in one call per time step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray
from scipy.linalg import expm

from .model import DerivedConstants, GeneratorMatrix, ModelParams, derive_constants
from .simulate import PathBundle

Array = NDArray[np.float64]

_MASS_TOL = 1e-10


class FilterError(RuntimeError):
    pass


@dataclass(frozen=True)
class FilterPath:
    """Filtered state probabilities and innovations along one path."""

    grid: Array
    pi: Array               # (N+1, K), on the simplex at every node
    dI1: Array              # (N,) innovation increments
    dI2: Array
    projection_log: Array   # (N+1,) cumulative simplex-correction magnitude


def mu_vectors(params: ModelParams, x) -> tuple[Array, Array]:
    """Per-regime pricing-error drifts mu_1(x, e_i), mu_2(x, e_i).

    Broadcasts x over leading axes; output shape is x.shape + (K,).
    """
    x = np.asarray(x, dtype=float)[..., np.newaxis]
    mu1 = -params.regimes.lambda1 * (x - params.regimes.alpha1)
    mu2 = params.regimes.lambda2 * (x - params.regimes.alpha2)
    return mu1, mu2


def _check_correlation(consts: DerivedConstants):
    if consts.rho >= 1.0 - 1e-12:
        raise FilterError(
            "innovations are degenerate: residual-return correlation is 1"
        )


def innovations_step(
    dR1, dR2, x, p, dt: float, params: ModelParams, consts: DerivedConstants
):
    """Innovation increments from observed residual-return increments.

    Subtracts the filtered drift and whitens with the (lower-triangular)
    volatility of the residual returns.
    """
    _check_correlation(consts)
    mu1, mu2 = mu_vectors(params, x)
    pred1 = np.sum(mu1 * p, axis=-1)
    pred2 = np.sum(mu2 * p, axis=-1)
    e1 = dR1 - pred1 * dt
    e2 = dR2 - pred2 * dt
    dI1 = e1 / consts.sigma1
    dI2 = (e2 / consts.sigma2 - consts.rho * e1 / consts.sigma1) / np.sqrt(
        1.0 - consts.rho**2
    )
    return dI1, dI2


def filter_coefficients(x, p, params: ModelParams, consts: DerivedConstants):
    """Diffusion coefficients H^{i,(1)}, H^{i,(2)} of the filter SDE.

    Each is the pi-weighted deviation of the regime drift from its filtered
    mean, so both sum to zero over regimes.
    """
    mu1, mu2 = mu_vectors(params, x)
    d1 = mu1 - np.sum(mu1 * p, axis=-1, keepdims=True)
    d2 = mu2 - np.sum(mu2 * p, axis=-1, keepdims=True)
    s1, s2, rho = consts.sigma1, consts.sigma2, consts.rho
    H1 = p * d1 / s1
    H2 = p * (s1 * d2 - s2 * rho * d1) / (s1 * s2 * np.sqrt(1.0 - rho**2))
    return H1, H2


def filter_step(
    p, x, dI1, dI2, dt: float, params: ModelParams, consts: DerivedConstants
):
    """One Euler step of the filter SDE plus simplex projection.

    Returns the projected probabilities and the per-path magnitude of the
    projection correction.
    """
    p = np.asarray(p, dtype=float)
    H1, H2 = filter_coefficients(x, p, params, consts)
    drift = p @ params.generator.Q
    raw = (
        p
        + drift * dt
        + H1 * np.asarray(dI1, dtype=float)[..., np.newaxis]
        + H2 * np.asarray(dI2, dtype=float)[..., np.newaxis]
    )
    mass_err = np.abs(raw.sum(axis=-1) - 1.0)
    if np.any(mass_err > _MASS_TOL):
        raise FilterError(
            f"probability mass not conserved before projection: {mass_err.max():.3e}"
        )
    clipped = np.clip(raw, 0.0, None)
    total = clipped.sum(axis=-1, keepdims=True)
    if np.any(total <= 0.0):
        raise FilterError("all filter components clipped to zero")
    projected = clipped / total
    correction = np.abs(projected - raw).sum(axis=-1)
    return projected, correction


def run_filter(bundle: PathBundle, p0, params: ModelParams) -> FilterPath:
    """Filter one simulated path from its observed residual returns.

    Only the R-processes and the spread are read from the bundle; the chain
    path is never accessed.
    """
    consts = derive_constants(params)
    p0 = np.asarray(p0, dtype=float)
    if np.any(p0 < 0) or abs(p0.sum() - 1.0) > 1e-9:
        raise FilterError("initial filter state must lie on the simplex")
    n = bundle.n_steps
    K = params.K
    dt = bundle.dt
    dR1 = np.diff(bundle.R1)
    dR2 = np.diff(bundle.R2)

    pi = np.empty((n + 1, K))
    pi[0] = p0
    dI1 = np.empty(n)
    dI2 = np.empty(n)
    proj = np.zeros(n + 1)
    for k in range(n):
        x = bundle.X[k]
        dI1[k], dI2[k] = innovations_step(
            dR1[k], dR2[k], x, pi[k], dt, params, consts
        )
        pi[k + 1], corr = filter_step(pi[k], x, dI1[k], dI2[k], dt, params, consts)
        proj[k + 1] = proj[k] + corr
    return FilterPath(grid=bundle.grid, pi=pi, dI1=dI1, dI2=dI2, projection_log=proj)


def kolmogorov_baseline(gen: GeneratorMatrix, p0, t: float) -> Array:
    """Exact marginal law of the chain: p0 @ exp(t Q)."""
    if t < 0:
        raise ValueError("time must be nonnegative")
    return np.asarray(p0, dtype=float) @ expm(t * gen.Q)

"""Market model parameters, validation and derived constants.

The model has a market index, two co-integrated assets whose pricing
errors mean-revert around regime-dependent levels, and a hidden
continuous-time Markov chain modulating the mean-reversion intensities
``lambda`` and levels ``alpha``.
"""

from __future__ import annotations

import hashlib
import json
import sys
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from numpy.typing import NDArray

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

Array = NDArray[np.float64]

GENERATOR_TOL = 1e-12


class ParameterError(ValueError):
    """Raised when a parameter set violates a model invariant."""


def _freeze(a) -> Array:
    out = np.asarray(a, dtype=np.float64)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class RegimeTable:
    """Per-regime mean-reversion intensities and pricing-error levels."""

    lambda1: Array
    lambda2: Array
    alpha1: Array
    alpha2: Array

    def __post_init__(self):
        for name in ("lambda1", "lambda2", "alpha1", "alpha2"):
            object.__setattr__(self, name, _freeze(np.atleast_1d(getattr(self, name))))

    @property
    def K(self) -> int:
        return len(self.lambda1)

    @property
    def constant_lambda(self) -> bool:
        """True when the intensities do not vary across regimes."""
        return bool(
            np.all(self.lambda1 == self.lambda1[0])
            and np.all(self.lambda2 == self.lambda2[0])
        )


@dataclass(frozen=True)
class GeneratorMatrix:
    """Transition-intensity matrix of the hidden chain plus its initial law."""

    Q: Array
    initial_dist: Array

    def __post_init__(self):
        object.__setattr__(self, "Q", _freeze(np.atleast_2d(self.Q)))
        object.__setattr__(self, "initial_dist", _freeze(np.atleast_1d(self.initial_dist)))

    @property
    def K(self) -> int:
        return self.Q.shape[0]


@dataclass(frozen=True)
class ModelParams:
    """All market and regime parameters plus the chain generator."""

    r: float
    mu_m: float
    sigma_m: float
    beta1: float
    beta2: float
    sigma: float
    b1: float
    b2: float
    regimes: RegimeTable
    generator: GeneratorMatrix
    T: float = 1.0

    @property
    def K(self) -> int:
        return self.regimes.K


@dataclass(frozen=True)
class DerivedConstants:
    """Composite volatilities, correlations and the source constants of the
    value-function ODE/PDE systems, one entry per regime for the regime arrays.
    """

    sigma1: float
    sigma2: float
    rho: float
    varrho1: float
    varrho2: float
    Gamma1: float
    Gamma2: float
    Theta1: Array
    Theta2: Array
    Theta3: Array
    Phi1: Array
    Phi2: Array
    Phi3: Array

    def __post_init__(self):
        for name in ("Theta1", "Theta2", "Theta3", "Phi1", "Phi2", "Phi3"):
            object.__setattr__(self, name, _freeze(getattr(self, name)))


def validate_params(raw: ModelParams) -> ModelParams:
    """Check every model invariant, returning the input unchanged on success.

    Raises
    ------
    ParameterError
        With a message naming the violated invariant.
    """
    p = raw
    for name in ("sigma_m", "sigma", "b1", "b2", "T"):
        if not getattr(p, name) > 0:
            raise ParameterError(f"{name} must be > 0, got {getattr(p, name)}")

    reg = p.regimes
    K = reg.K
    for name in ("lambda1", "lambda2", "alpha1", "alpha2"):
        if len(getattr(reg, name)) != K:
            raise ParameterError(f"regime array {name} has wrong length")
    lam_sum = reg.lambda1 + reg.lambda2
    for i, s in enumerate(lam_sum):
        if not s > 0:
            raise ParameterError(
                f"lambda1 + lambda2 = {s} <= 0 in regime {i + 1}; "
                "the spread would not be mean-reverting"
            )

    gen = p.generator
    if gen.Q.shape != (K, K):
        raise ParameterError(f"generator shape {gen.Q.shape} does not match K={K}")
    off = gen.Q[~np.eye(K, dtype=bool)]
    if np.any(off < 0):
        raise ParameterError("generator has negative off-diagonal entries")
    if K > 1 and np.any(off == 0):
        warnings.warn(
            "generator has zero off-diagonal intensities; "
            "the chain may not be irreducible",
            stacklevel=2,
        )
    row_sums = gen.Q.sum(axis=1)
    if np.any(np.abs(row_sums) > GENERATOR_TOL):
        raise ParameterError(f"generator rows must sum to 0, got row sums {row_sums}")
    if len(gen.initial_dist) != K:
        raise ParameterError("initial distribution has wrong length")
    if np.any(gen.initial_dist < 0) or abs(gen.initial_dist.sum() - 1.0) > GENERATOR_TOL:
        raise ParameterError("initial distribution must be a probability vector")
    return p


def theta_constants(p: ModelParams, l1, l2, a1, a2):
    """Source constants of the unrestricted value-function system.

    ``a1``/``a2`` may be regime arrays or filtered (probability-weighted)
    levels; the formulas are the same either way.
    """
    s2 = p.sigma**2
    b1sq, b2sq = p.b1**2, p.b2**2
    D = b1sq * b2sq + s2 * (b1sq + b2sq)
    Theta1 = (b1sq * l2**2 + b2sq * l1**2 + s2 * (l1 + l2) ** 2) / (2 * D)
    Theta2 = (
        a1 * l1 * (l1 * (b2sq + s2) + l2 * s2)
        + a2 * l2 * (l2 * (b1sq + s2) + l1 * s2)
    ) / D
    market_term = p.r + p.mu_m**2 / (2 * p.sigma_m**2)
    Theta3 = (
        (a1 * l1 * p.b2) ** 2 + (a2 * l2 * p.b1) ** 2 + s2 * (a1 * l1 + a2 * l2) ** 2
    ) / (2 * D) + market_term
    return Theta1, Theta2, Theta3


def phi_constants(p: ModelParams, l1, l2, a1, a2):
    """Source constants of the beta-neutral value-function system."""
    s2 = p.sigma**2
    Db = p.b1**2 * p.beta2**2 + p.b2**2 * p.beta1**2 + s2 * (p.beta1 - p.beta2) ** 2
    market_term = p.r + p.mu_m**2 / (2 * p.sigma_m**2)
    Phi1 = (p.beta2 * l1 + p.beta1 * l2) ** 2 / (2 * Db)
    Phi2 = (a1 * p.beta2 * l1 + a2 * p.beta1 * l2) * (p.beta1 * l2 + p.beta2 * l1) / Db
    Phi3 = (a1 * p.beta2 * l1 + a2 * p.beta1 * l2) ** 2 / (2 * Db) + market_term
    return Phi1, Phi2, Phi3


def derive_constants(p: ModelParams) -> DerivedConstants:
    """Evaluate every derived constant of the optimal-control solution."""
    s2 = p.sigma**2
    b1sq, b2sq = p.b1**2, p.b2**2
    sigma1 = np.sqrt(s2 + b1sq)
    sigma2 = np.sqrt(s2 + b2sq)
    rho = s2 / (sigma1 * sigma2)
    varrho1 = s2 / (s2 + b1sq)
    varrho2 = s2 / (s2 + b2sq)

    Gamma1 = (p.beta1 - p.beta2) * p.mu_m - 0.5 * (
        (p.beta1**2 - p.beta2**2) * p.sigma_m**2 + b1sq - b2sq
    )
    Gamma2 = p.sigma_m**2 * (p.beta1 - p.beta2) ** 2 + b1sq + b2sq

    l1, l2 = p.regimes.lambda1, p.regimes.lambda2
    a1, a2 = p.regimes.alpha1, p.regimes.alpha2
    Theta1, Theta2, Theta3 = theta_constants(p, l1, l2, a1, a2)
    Phi1, Phi2, Phi3 = phi_constants(p, l1, l2, a1, a2)

    return DerivedConstants(
        sigma1=float(sigma1),
        sigma2=float(sigma2),
        rho=float(rho),
        varrho1=float(varrho1),
        varrho2=float(varrho2),
        Gamma1=float(Gamma1),
        Gamma2=float(Gamma2),
        Theta1=Theta1,
        Theta2=Theta2,
        Theta3=Theta3,
        Phi1=Phi1,
        Phi2=Phi2,
        Phi3=Phi3,
    )


def stationary_distribution(gen: GeneratorMatrix) -> Array:
    """Stationary law nu of the chain: nu @ Q = 0, sum(nu) = 1.

    Solved as the left null-space of Q with a normalisation row appended.
    Raises ParameterError for a reducible (or otherwise degenerate) generator.
    """
    K = gen.K
    if K == 1:
        return np.array([1.0])
    A = np.vstack([gen.Q.T, np.ones(K)])
    b = np.zeros(K + 1)
    b[-1] = 1.0
    nu, residuals, rank, _ = np.linalg.lstsq(A, b, rcond=None)
    if rank < K or np.any(nu < -1e-9) or np.linalg.norm(nu @ gen.Q, np.inf) > 1e-9:
        raise ParameterError("generator is reducible or singular; no unique stationary law")
    nu = np.clip(nu, 0.0, None)
    return nu / nu.sum()


def averaged_params(p: ModelParams) -> ModelParams:
    """Collapse the regimes to a single one by stationary-law averaging.

    The averaged trader replaces every regime-dependent coefficient by its
    long-run mean and ignores the chain entirely.
    """
    if p.K < 2:
        raise ParameterError("averaging requires at least two regimes")
    nu = stationary_distribution(p.generator)
    reg = RegimeTable(
        lambda1=[float(nu @ p.regimes.lambda1)],
        lambda2=[float(nu @ p.regimes.lambda2)],
        alpha1=[float(nu @ p.regimes.alpha1)],
        alpha2=[float(nu @ p.regimes.alpha2)],
    )
    gen = GeneratorMatrix(Q=[[0.0]], initial_dist=[1.0])
    return validate_params(replace(p, regimes=reg, generator=gen))


def params_to_dict(p: ModelParams) -> dict:
    return {
        "market": {
            "r": p.r,
            "mu_m": p.mu_m,
            "sigma_m": p.sigma_m,
            "beta1": p.beta1,
            "beta2": p.beta2,
            "sigma": p.sigma,
            "b1": p.b1,
            "b2": p.b2,
            "T": p.T,
        },
        "regimes": {
            "lambda1": p.regimes.lambda1.tolist(),
            "lambda2": p.regimes.lambda2.tolist(),
            "alpha1": p.regimes.alpha1.tolist(),
            "alpha2": p.regimes.alpha2.tolist(),
        },
        "chain": {
            "Q": p.generator.Q.tolist(),
            "initial": p.generator.initial_dist.tolist(),
        },
    }


def params_from_dict(cfg: dict) -> ModelParams:
    def get(section: str, key: str):
        try:
            sec = cfg[section]
        except KeyError:
            raise ParameterError(f"missing config section [{section}]") from None
        try:
            return sec[key]
        except KeyError:
            raise ParameterError(f"missing config field {section}.{key}") from None

    params = ModelParams(
        r=float(get("market", "r")),
        mu_m=float(get("market", "mu_m")),
        sigma_m=float(get("market", "sigma_m")),
        beta1=float(get("market", "beta1")),
        beta2=float(get("market", "beta2")),
        sigma=float(get("market", "sigma")),
        b1=float(get("market", "b1")),
        b2=float(get("market", "b2")),
        T=float(cfg["market"].get("T", 1.0)),
        regimes=RegimeTable(
            lambda1=get("regimes", "lambda1"),
            lambda2=get("regimes", "lambda2"),
            alpha1=get("regimes", "alpha1"),
            alpha2=get("regimes", "alpha2"),
        ),
        generator=GeneratorMatrix(
            Q=get("chain", "Q"), initial_dist=get("chain", "initial")
        ),
    )
    return validate_params(params)


def load_params(path) -> ModelParams:
    """Load and validate a parameter set from a TOML config file."""
    with open(path, "rb") as fh:
        cfg = tomllib.load(fh)
    return params_from_dict(cfg)


def params_fingerprint(p: ModelParams) -> str:
    """Stable hash of a parameter set, used to pair value-function solutions."""
    payload = json.dumps(params_to_dict(p), sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]

"""End-to-end acceptance checks.

Each criterion is a function returning a CheckResult; the CLI ``check``
subcommand and the test suite both run them from here so there is a
single source of truth for the tolerances.
"""

from __future__ import annotations

import filecmp
import tempfile
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .experiments import named_config, run_experiment
from .filtering import kolmogorov_baseline, run_filter
from .model import (
    GeneratorMatrix,
    ModelParams,
    RegimeTable,
    averaged_params,
    stationary_distribution,
    validate_params,
)
from .simulate import make_grid, simulate_chain, simulate_paths
from .strategy import (
    excess_drifts,
    full_info_policy,
    markowitz_oracle,
    optimal_beta_neutral_full,
    optimal_beta_neutral_partial,
    optimal_delta_neutral_full,
    optimal_delta_neutral_partial,
    optimal_full,
    optimal_partial,
    partial_info_policy,
    perturbed_policy,
)
from .value import (
    hjb_residual_full,
    loss_surface,
    mbar_closed_form,
    mc_terminal_log_wealth,
    solve_full_ode,
    solve_partial_pde,
    value_full,
    value_partial,
)

SEED = 20240817


@dataclass
class CheckResult:
    number: int
    name: str
    passed: bool
    details: str
    runtime: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.number:2d} {self.name} ({self.runtime:.1f}s): {self.details}"


def _fig2_params(T: float = 1.0) -> ModelParams:
    return replace(named_config("fig2").params, T=T)


def _fig4_params(T: float = 1.0) -> ModelParams:
    return replace(named_config("fig4").params, T=T)


def _random_params(rng: np.random.Generator, constant_lambda: bool = False) -> ModelParams:
    while True:
        l1 = rng.uniform(-0.5, 1.0, size=2)
        l2 = rng.uniform(-0.5, 1.0, size=2)
        if constant_lambda:
            l1[1] = l1[0]
            l2[1] = l2[0]
        if np.all(l1 + l2 > 0.05):
            break
    q12, q21 = rng.uniform(0.01, 1.0, size=2)
    return validate_params(
        ModelParams(
            r=rng.uniform(0.0, 0.05),
            mu_m=rng.uniform(-0.1, 0.1),
            sigma_m=rng.uniform(0.1, 0.5),
            beta1=rng.uniform(0.2, 2.0),
            beta2=rng.uniform(0.2, 2.0),
            sigma=rng.uniform(0.05, 0.6),
            b1=rng.uniform(0.05, 0.6),
            b2=rng.uniform(0.05, 0.6),
            T=1.0,
            regimes=RegimeTable(
                lambda1=l1, lambda2=l2,
                alpha1=rng.uniform(-0.5, 0.5, size=2),
                alpha2=rng.uniform(-0.5, 0.5, size=2),
            ),
            generator=GeneratorMatrix(
                Q=[[-q12, q12], [q21, -q21]],
                initial_dist=[0.5, 0.5],
            ),
        )
    )


def _mu_pair(p: ModelParams, x: float, i: int) -> tuple[float, float]:
    reg = p.regimes
    return (
        -reg.lambda1[i] * (x - reg.alpha1[i]),
        reg.lambda2[i] * (x - reg.alpha2[i]),
    )


def _mu_pair_filtered(p: ModelParams, x: float, prob) -> tuple[float, float]:
    reg = p.regimes
    m1 = float(np.sum(prob * (-reg.lambda1) * (x - reg.alpha1)))
    m2 = float(np.sum(prob * reg.lambda2 * (x - reg.alpha2)))
    return m1, m2


def check_oracle_equivalence() -> CheckResult:
    """1: six closed-form strategies vs the quadratic-programming oracle."""
    rng = np.random.default_rng(SEED)
    worst = 0.0
    for _ in range(1000):
        p = _random_params(rng)
        pc = _random_params(rng, constant_lambda=True)
        x = rng.uniform(-1.0, 1.0)
        i = int(rng.integers(2))
        prob = rng.dirichlet([1.0, 1.0])

        # the delta-neutral closed form is stated for beta1 = beta2, where
        # hm = mu_m / sigma_m^2 is the constrained optimum; compare there
        pd = replace(p, beta2=p.beta1)
        pcd = replace(pc, beta2=pc.beta1)

        mu1, mu2 = _mu_pair(p, x, i)
        mu = excess_drifts(p, mu1, mu2)
        mud = excess_drifts(pd, mu1, mu2)
        pairs = [
            (optimal_full(x, i, p), markowitz_oracle(mu, p)),
            (optimal_beta_neutral_full(x, i, p),
             markowitz_oracle(mu, p, constraint=(p.beta1, p.beta2))),
            (optimal_delta_neutral_full(x, i, pd),
             markowitz_oracle(mud, pd, constraint=(1.0, 1.0))),
        ]
        mu1f, mu2f = _mu_pair_filtered(pc, x, prob)
        muf = excess_drifts(pc, mu1f, mu2f)
        mufd = excess_drifts(pcd, mu1f, mu2f)
        pairs += [
            (optimal_partial(x, prob, pc), markowitz_oracle(muf, pc)),
            (optimal_beta_neutral_partial(x, prob, pc),
             markowitz_oracle(muf, pc, constraint=(pc.beta1, pc.beta2))),
            (optimal_delta_neutral_partial(x, prob, pcd),
             markowitz_oracle(mufd, pcd, constraint=(1.0, 1.0))),
        ]
        for closed, oracle in pairs:
            dev = max(
                abs(closed.h1 - oracle.h1),
                abs(closed.h2 - oracle.h2),
                abs(closed.hm - oracle.hm),
            )
            worst = max(worst, float(dev))
    return CheckResult(
        1, "oracle equivalence", worst < 1e-10,
        f"max |closed form - QP oracle| = {worst:.2e} (tol 1e-10)",
    )


def check_averaged_parameters() -> CheckResult:
    """2: stationary law and averaged intensities quoted in the study."""
    p = named_config("fig2").params
    nu = stationary_distribution(p.generator)
    av = averaged_params(p)
    pbar = nu[0]
    lam1 = av.regimes.lambda1[0]
    lam2 = av.regimes.lambda2[0]
    # the quoted 0.45 was produced with pbar pre-rounded to 0.22; exact
    # averaging gives 0.4444, so match to one unit in the second decimal
    ok = (
        round(pbar, 2) == 0.22
        and abs(lam1 - (-0.12)) <= 0.01
        and abs(lam2 - 0.45) <= 0.01
    )
    return CheckResult(
        2, "averaged parameters", ok,
        f"pbar={pbar:.4f} (0.22), lam1_bar={lam1:.4f} (-0.12), lam2_bar={lam2:.4f} (0.45)",
    )


def check_mc_hjb_full() -> CheckResult:
    """3: Monte Carlo expected log utility vs the ODE value function."""
    p = _fig2_params(T=1.0)
    coeffs = solve_full_ode(p, N_t=2000)
    policy = full_info_policy(p)
    n_paths = 20_000
    lines = []
    ok = True
    for i in (0, 1):
        for x0 in (-0.5, 0.0, 0.5):
            res = mc_terminal_log_wealth(
                p, [policy], w0=1.0, x0=x0, n_paths=n_paths,
                seed=SEED + i * 10 + int(2 * (x0 + 1)), initial_state=i,
            )
            lw = res.log_wealth[policy.name]
            est = lw.mean()
            se = lw.std(ddof=1) / np.sqrt(n_paths)
            target = float(value_full(0.0, 1.0, x0, i, coeffs))
            z = abs(est - target) / se
            ok &= z <= 3.0
            lines.append(f"i={i + 1},x={x0}: z={z:.2f}")
    return CheckResult(3, "MC vs HJB (full info)", bool(ok), "; ".join(lines))


def check_mc_pde_partial() -> CheckResult:
    """4: Monte Carlo with the filter in the loop vs the PDE value."""
    p = _fig4_params(T=1.0)
    partial = solve_partial_pde(p, N_t=2000, N_p=400)
    policy = partial_info_policy(p)
    p0 = np.array([0.5, 0.5])
    x0 = 0.05
    n_paths = 20_000
    res = mc_terminal_log_wealth(
        p, [policy], w0=1.0, x0=x0, n_paths=n_paths, seed=SEED, p0=p0,
    )
    lw = res.log_wealth[policy.name]
    est = lw.mean()
    se = lw.std(ddof=1) / np.sqrt(n_paths)
    target = float(value_partial(0.0, 1.0, x0, 0.5, partial))
    tol = 3.0 * se + 5e-3
    gap = abs(est - target)
    return CheckResult(
        4, "MC vs PDE (partial info)", gap <= tol,
        f"|MC - PDE| = {gap:.4f} vs tol {tol:.4f} (se={se:.4f})",
    )


def check_suboptimality() -> CheckResult:
    """5: structured perturbations of the optimal policy lose utility."""
    p = _fig2_params(T=1.0)
    base = full_info_policy(p)
    perturbations = {
        "h1+0.15": dict(dh1=0.15),
        "h1-0.15": dict(dh1=-0.15),
        "h2+0.15": dict(dh2=0.15),
        "hm+0.25": dict(dhm=0.25),
        "scale1.2": dict(scale=1.2),
    }
    policies = [base] + [
        perturbed_policy(base, name=name, **kw) for name, kw in perturbations.items()
    ]
    res = mc_terminal_log_wealth(
        p, policies, w0=1.0, x0=0.5, n_paths=20_000, seed=SEED, initial_state=0,
    )
    lw0 = res.log_wealth[base.name]
    ok = True
    lines = []
    for name in perturbations:
        diff = lw0 - res.log_wealth[name]
        margin = diff.mean() / (diff.std(ddof=1) / np.sqrt(len(diff)))
        ok &= margin >= 2.0
        lines.append(f"{name}: {margin:.1f}se")
    return CheckResult(5, "suboptimality of perturbed policies", bool(ok), "; ".join(lines))


def check_dominance() -> CheckResult:
    """6: regime-switching dominates averaged data; unrestricted dominates
    beta-neutral; gaps grow with |x| and time to maturity."""
    p = _fig2_params(T=2.0)
    av = averaged_params(p)
    nu = stationary_distribution(p.generator)
    rs_u = solve_full_ode(p, 2000)
    rs_b = solve_full_ode(p, 2000, variant="beta_neutral")
    av_u = solve_full_ode(av, 2000)
    av_b = solve_full_ode(av, 2000, variant="beta_neutral")

    x = np.linspace(-1.0, 1.0, 50)
    ttm = np.linspace(0.04, 2.0, 50)

    def grid_value(coeffs, mixed):
        out = np.empty((len(ttm), len(x)))
        for k, s in enumerate(ttm):
            t = p.T - s
            if mixed:
                out[k] = nu[0] * value_full(t, 1.0, x, 0, coeffs) + nu[1] * value_full(
                    t, 1.0, x, 1, coeffs
                )
            else:
                out[k] = value_full(t, 1.0, x, 0, coeffs)
        return out

    V_rs_u = grid_value(rs_u, True)
    V_rs_b = grid_value(rs_b, True)
    V_av_u = grid_value(av_u, False)
    V_av_b = grid_value(av_b, False)

    eps = 1e-12
    gap_rs_av = V_rs_u - V_av_u
    gap_u_b = V_rs_u - V_rs_b
    pointwise = (
        np.all(gap_rs_av >= -eps)
        and np.all(V_rs_b - V_av_b >= -eps)
        and np.all(gap_u_b >= -eps)
        and np.all(V_av_u - V_av_b >= -eps)
    )

    def monotone(gap):
        in_ttm = np.all(np.diff(gap, axis=0) >= -1e-9)
        # the spread drift shifts the gap minimum slightly off x = 0, so
        # "grows with the initial spread" means: V-shaped in x along each
        # row, nondecreasing away from the row minimizer
        in_x = True
        for row in gap:
            j = int(np.argmin(row))
            d = np.diff(row)
            in_x &= bool(np.all(d[:j] <= 1e-9) and np.all(d[j:] >= -1e-9))
        return in_ttm and in_x

    mono = monotone(gap_rs_av) and monotone(gap_u_b)
    return CheckResult(
        6, "dominance inequalities", bool(pointwise and mono),
        f"pointwise={bool(pointwise)}, gap monotonicity={bool(mono)}, "
        f"min RS-AV gap={gap_rs_av.min():.2e}, min unres-beta gap={gap_u_b.min():.2e}",
    )


def check_mbar_closed_form() -> CheckResult:
    """7: closed-form quadratic coefficient vs backward RK4."""
    p = _fig4_params(T=1.0)
    single = validate_params(
        replace(
            p,
            regimes=RegimeTable(
                lambda1=[p.regimes.lambda1[0]], lambda2=[p.regimes.lambda2[0]],
                alpha1=[0.0], alpha2=[0.0],
            ),
            generator=GeneratorMatrix(Q=[[0.0]], initial_dist=[1.0]),
        )
    )
    coeffs = solve_full_ode(single, N_t=10_000)
    exact = mbar_closed_form(coeffs.grid, p)
    err = float(np.abs(coeffs.m[:, 0] - exact).max())
    return CheckResult(
        7, "mbar closed form vs RK4", err < 1e-8, f"max abs error = {err:.2e} (tol 1e-8)"
    )


def check_filter() -> CheckResult:
    """8: simplex invariants, uninformative baseline, unbiasedness."""
    p = _fig4_params(T=1.0)
    dt = 1e-3
    grid = make_grid(p.T, dt)
    p0 = np.array([0.5, 0.5])

    # (a) simplex invariants over 100 filtered paths
    worst_neg, worst_mass = 0.0, 0.0
    for k in range(100):
        chain = simulate_chain(p.generator, p.T, SEED, path_index=k)
        bundle = simulate_paths(p, chain, grid, SEED + k, x0=0.05)
        fp = run_filter(bundle, p0, p)
        worst_neg = max(worst_neg, float(-fp.pi.min()))
        worst_mass = max(worst_mass, float(np.abs(fp.pi.sum(axis=1) - 1.0).max()))
    ok_a = worst_neg <= 0.0 and worst_mass < 1e-12

    # (b) uninformative observations: filter equals the exact marginal law
    flat = validate_params(
        replace(
            p,
            regimes=RegimeTable(
                lambda1=p.regimes.lambda1, lambda2=p.regimes.lambda2,
                alpha1=[0.1, 0.1], alpha2=[-0.2, -0.2],
            ),
        )
    )
    chain = simulate_chain(flat.generator, flat.T, SEED)
    bundle = simulate_paths(flat, chain, grid, SEED, x0=0.05)
    fp = run_filter(bundle, np.array([1.0, 0.0]), flat)
    exact = np.stack(
        [kolmogorov_baseline(flat.generator, [1.0, 0.0], t) for t in grid]
    )
    err_b = float(np.abs(fp.pi - exact).max())
    ok_b = err_b <= 5 * dt

    # (c) tower property: mean filter equals the exact marginal
    n_paths = 10_000
    n = len(grid) - 1
    probes = (n // 4, n // 2, n)
    res = mc_terminal_log_wealth(
        p, [], w0=1.0, x0=0.05, n_paths=n_paths, seed=SEED, p0=p0,
        probe_indices=probes,
    )
    ok_c = True
    zs = []
    for idx in probes:
        t = grid[idx]
        exact_t = kolmogorov_baseline(p.generator, p0, t)
        pi_t = res.pi_probes[idx]
        se = pi_t[:, 0].std(ddof=1) / np.sqrt(n_paths)
        z = abs(pi_t[:, 0].mean() - exact_t[0]) / se
        zs.append(f"t={t:.2f}: z={z:.2f}")
        ok_c &= z <= 3.0
    return CheckResult(
        8, "filter correctness", bool(ok_a and ok_b and ok_c),
        f"simplex(neg={worst_neg:.1e}, mass={worst_mass:.1e}), "
        f"uninformative sup err={err_b:.2e} (tol {5 * dt:.0e}), unbiasedness: "
        + "; ".join(zs),
    )


def check_loss_nonnegative() -> CheckResult:
    """9: information premium is nonnegative, zero at maturity, maximal at
    interior filter probabilities."""
    cfg = named_config("fig4")
    p = cfg.params
    full = solve_full_ode(p, cfg.N_t)
    partial = solve_partial_pde(p, cfg.N_t, cfg.N_p)
    ttm, pg, L = loss_surface(full, partial, cfg.x0)
    lmin = float(L.min())
    at_maturity = float(np.abs(L[0]).max())
    k_t, k_p = np.unravel_index(np.argmax(L), L.shape)
    interior = 0 < k_p < len(pg) - 1
    ok = lmin >= -1e-4 and at_maturity <= 1e-10 and interior
    return CheckResult(
        9, "loss-of-utility nonnegativity", bool(ok),
        f"min={lmin:.2e} (tol -1e-4), |L(T)|={at_maturity:.1e}, "
        f"argmax at (ttm={ttm[k_t]:.2f}, p={pg[k_p]:.2f})",
    )


def check_hjb_residual() -> CheckResult:
    """10: solved ansatz satisfies the dynamic-programming equation."""
    p = _fig2_params(T=1.0)
    coeffs = solve_full_ode(p, N_t=4000)
    x = np.linspace(-1.0, 1.0, 41)
    res = hjb_residual_full(coeffs, p, x)
    worst = float(np.abs(res).max())
    return CheckResult(
        10, "HJB residual (full info)", worst <= 1e-6,
        f"max |residual| = {worst:.2e} (tol 1e-6)",
    )


def check_determinism() -> CheckResult:
    """11: named experiments reproduce byte-identical outputs."""
    mismatches = []
    with tempfile.TemporaryDirectory() as tmp:
        for name in ("fig1", "fig3"):
            dirs = []
            for run in (0, 1):
                out = Path(tmp) / f"{name}_{run}"
                run_experiment(named_config(name, seed=7, out_dir=out))
                dirs.append(out)
            files = sorted(f.name for f in dirs[0].iterdir())
            match, bad, err = filecmp.cmpfiles(dirs[0], dirs[1], files, shallow=False)
            mismatches += [f"{name}/{f}" for f in bad + err]
    return CheckResult(
        11, "experiment determinism", not mismatches,
        "byte-identical reruns" if not mismatches else f"differs: {mismatches}",
    )


ALL_CHECKS: list[Callable[[], CheckResult]] = [
    check_oracle_equivalence,
    check_averaged_parameters,
    check_mc_hjb_full,
    check_mc_pde_partial,
    check_suboptimality,
    check_dominance,
    check_mbar_closed_form,
    check_filter,
    check_loss_nonnegative,
    check_hjb_residual,
    check_determinism,
]


def run_checks(selected=None, progress: Callable[[CheckResult], None] = None) -> list[CheckResult]:
    """Run all (or the selected) acceptance checks; returns their results."""
    results = []
    for number, fn in enumerate(ALL_CHECKS, start=1):
        if selected is not None and number not in selected:
            continue
        start = time.perf_counter()
        result = fn()
        result.runtime = time.perf_counter() - start
        results.append(result)
        if progress is not None:
            progress(result)
    return results

"""Acceptance criteria, one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the per-criterion
lines as they complete.  Every tolerance is pinned here, not configurable.
"""
import math
from itertools import combinations

import numpy as np
import pytest
from scipy.integrate import quad
from scipy.special import hyp2f1
from scipy.stats import ks_2samp

from roughlaplace.fbm import (
    HurstParams,
    _volterra_scale,
    cm_basis,
    cm_map,
    sample_fbm_ensemble,
    substream,
    volterra_kernel,
)
from roughlaplace.functionals import constant_field, endpoint_linear, endpoint_quadratic, tanh_field, fractional_drift_field
from roughlaplace.grids import SampledPath, TimeGrid
from roughlaplace.hessian import det2, hs_tail
from roughlaplace.laplace import (
    OptConfig,
    expansion_constants,
    expansion_fit,
    kappa_ladder,
    mc_laplace,
    minimize_F_Lambda,
)
from roughlaplace.odes import heun_controlled
from roughlaplace.roughpath import chen_residual, lift, pair, scale_rough, shift
from roughlaplace.taylor import expansion_context, taylor_remainder_slope
from roughlaplace.variation import cosine_pvar, pvar_exact

from conftest import random_smooth_path


def report(criterion: str, passed: bool, detail: str):
    print(f"ACCEPTANCE {criterion}: {'PASS' if passed else 'FAIL'} ({detail})")


def test_criterion_01_jogfree_identity():
    worst = 0.0
    for n in range(1, 17):
        grid = TimeGrid(np.linspace(0.0, 1.0, n + 1))
        path = SampledPath(grid, np.cos(n * math.pi * grid.points) - 1.0)
        for p in (1.5, 2.0, 3.5):
            worst = max(worst, abs(pvar_exact(path, p).value - cosine_pvar(n, p)))
    ok = worst <= 1e-12
    report("01 jog-free identity", ok, f"max |dp - 2 n^(1/p)| = {worst:.2e}")
    assert ok


def test_criterion_02_brute_force_equivalence():
    # The enumeration consumes the same edge-weight matrix the DP sees (the
    # vectorized |dx|^p differs from scalar pow by an ulp), so the check is
    # exact over the optimization structure itself.
    rng = substream(1002, 23, 0)
    n_fail = 0
    for trial in range(200):
        vals = rng.standard_normal(9)
        p = float(rng.uniform(1.0, 3.5))
        dp = pvar_exact(SampledPath(TimeGrid.uniform(9), vals), p).value
        from roughlaplace.variation import _increment_norms

        w = _increment_norms(vals[:, None]) ** p
        best = -1.0
        for r in range(8):
            for combo in combinations(range(1, 8), r):
                idx = [0, *combo, 8]
                s = 0.0
                for a, b in zip(idx[:-1], idx[1:]):
                    s = s + w[a, b]
                best = max(best, s)
        if dp != best ** (1.0 / p):
            n_fail += 1
    ok = n_fail == 0
    report("02 brute-force equivalence", ok, f"{200 - n_fail}/200 paths exact")
    assert ok


def test_criterion_03_chen_identity():
    rng = np.random.default_rng(1003)
    g = TimeGrid.uniform(65)
    worst = 0.0
    for _ in range(50):
        x = random_smooth_path(g, 2, rng)
        k = random_smooth_path(g, 2, rng, scale=0.3)
        X = lift(x, 3)
        worst = max(worst, chen_residual(X))
        worst = max(worst, chen_residual(shift(X, k)))
        worst = max(worst, chen_residual(pair(X, k)))
    ok = worst < 1e-8
    report("03 Chen identity", ok, f"max residual over 50 paths = {worst:.2e}")
    assert ok


def test_criterion_04_appendix_oracle():
    rng = np.random.default_rng(1004)
    g = TimeGrid.uniform(65)
    worst = 0.0
    for _ in range(10):
        x = random_smooth_path(g, 2, rng)
        k = random_smooth_path(g, 2, rng, scale=0.3)
        X = lift(x, 3)
        Zs = shift(X, k)
        Os = lift(x + k, 3)
        for a, b in zip(Zs.levels(), Os.levels()):
            worst = max(worst, np.abs(a - b).max() / max(np.abs(b).max(), 1e-300))
        Zp = pair(X, k)
        Op = lift(SampledPath(g, np.concatenate([x.values, k.values], axis=1)), 3)
        for a, b in zip(Zp.levels(), Op.levels()):
            worst = max(worst, np.abs(a - b).max() / max(np.abs(b).max(), 1e-300))
    ok = worst < 1e-6
    report("04 shift/pair vs lift oracle", ok, f"max level-wise rel err = {worst:.2e}")
    assert ok


def test_criterion_05_fbm_law():
    g = TimeGrid.uniform(65)
    details = []
    ok = True
    for H in (0.3, 0.4):
        arr = np.stack(
            [p.values for p in sample_fbm_ensemble(g, H, 1, 10_000, seed=1005)]
        )[:, :, 0]
        i, j = g.index_of(0.25), g.index_of(0.75)
        var = float(np.var(arr[:, j] - arr[:, i]))
        rel = abs(var - 0.5 ** (2 * H)) / 0.5 ** (2 * H)
        arr2 = np.stack(
            [p.values for p in sample_fbm_ensemble(g, H, 1, 10_000, seed=2005)]
        )[:, :, 0]
        c = 0.5
        ks = ks_2samp(c ** (-H) * arr[:, g.index_of(c)], arr2[:, -1])
        ok = ok and rel < 0.05 and ks.pvalue > 0.01
        details.append(f"H={H}: var rel {rel:.3f}, KS p {ks.pvalue:.3f}")
    report("05 fBm law", ok, "; ".join(details))
    assert ok


def test_criterion_06_scale_invariance():
    H, c, n = 0.4, 0.5, 4000
    g = TimeGrid.uniform(129)
    e1 = sample_fbm_ensemble(g, H, 2, n, seed=1006)
    e2 = sample_fbm_ensemble(g, H, 2, n, seed=2006)
    s_scaled = np.empty(n)
    s_plain = np.empty(n)
    for i in range(n):
        Xs = scale_rough(lift(e1[i], 2), c, H)
        s_scaled[i] = 0.5 * (Xs.inc2[0, -1, 0, 1] - Xs.inc2[0, -1, 1, 0])
        Xp = lift(e2[i], 2)
        s_plain[i] = 0.5 * (Xp.inc2[0, -1, 0, 1] - Xp.inc2[0, -1, 1, 0])
    ks = ks_2samp(s_scaled, s_plain)
    ok = ks.pvalue > 0.01
    report("06 lift scale invariance", ok, f"two-sample KS p = {ks.pvalue:.3f}")
    assert ok


def test_criterion_07_volterra_consistency():
    worst = 0.0
    for H in (0.3, 0.45):
        pw = 2 * H

        def reg_lib(tt, u):
            return volterra_kernel(tt, u, H) * u ** (0.5 - H)

        def reg_scipy(tt, u):
            return (
                _volterra_scale(H)
                * (tt - u) ** (H - 0.5)
                * tt ** (0.5 - H)
                * hyp2f1(H - 0.5, 2 * H, H + 0.5, 1 - u / tt)
            )

        for s in np.linspace(0.15, 0.95, 5):
            for t in np.linspace(0.2, 1.0, 5):
                if abs(s - t) < 1e-9:
                    t = t + 0.02
                lo, hi = min(s, t), max(s, t)
                u_min = 1e-3 * lo
                head, _ = quad(
                    lambda w: reg_scipy(hi, w ** (1 / pw)) * reg_scipy(lo, w ** (1 / pw)),
                    0.0, u_min**pw, limit=200,
                )
                body, _ = quad(
                    lambda w: reg_lib(hi, w ** (1 / pw)) * reg_lib(lo, w ** (1 / pw)),
                    u_min**pw, lo**pw, points=[(lo * (1 - 1e-4)) ** pw], limit=300,
                )
                val = (head + body) / pw
                cov = 0.5 * (hi ** (2 * H) + lo ** (2 * H) - (hi - lo) ** (2 * H))
                worst = max(worst, abs(val - cov) / cov)
    exact_half = all(
        volterra_kernel(t, s, 0.5) == 1.0 for (t, s) in [(0.9, 0.2), (1.0, 0.999)]
    )
    ok = worst < 1e-4 and exact_half
    report(
        "07 Volterra consistency", ok,
        f"max rel err = {worst:.2e}; K == 1 at H=1/2: {exact_half}",
    )
    assert ok


def test_criterion_08_taylor_slopes():
    H = 0.4
    hp = HurstParams.default(H)
    g = TimeGrid.dyadic(9)
    field = tanh_field(2, 2, coef_seed=5)
    gamma = cm_map(np.array([[0.2, 0.1], [0.3, -0.2]]), H, g).induced_path
    drivers = sample_fbm_ensemble(g, H, 2, 64, seed=1008)
    r1 = taylor_remainder_slope(field, gamma, drivers, 1, p=hp.p)
    r2 = taylor_remainder_slope(field, gamma, drivers, 2, p=hp.p)
    ok1 = 1.8 <= r1["slope"] <= 2.2
    ok2 = 2.7 <= r2["slope"] <= 3.3
    report(
        "08 Taylor remainder slopes", ok1 and ok2,
        f"m=1 slope {r1['slope']:.3f} (want [1.8,2.2]); m=2 slope {r2['slope']:.3f} (want [2.7,3.3])",
    )
    assert ok1 and ok2


def test_criterion_09_hs_diagnostics():
    H = 0.4
    hp = HurstParams.default(H)
    g = TimeGrid.uniform(1025)
    field = tanh_field(1, 1, coef_seed=9, scale=0.5, drift_scale=0.4)
    gamma = cm_map(np.array([[0.2], [0.3]]), H, g).induced_path
    ctx = expansion_context(field, gamma)
    rep = hs_tail(ctx, N_list=(8, 16, 32, 64), d=1, hurst=hp)
    change = (rep.partial_sums[-1] - rep.partial_sums[-2]) / rep.partial_sums[-1]
    cauchy_ok = change < 0.05
    exp_ok = abs(rep.fitted_tail_exponent - rep.reference_exponent) <= 0.3
    report(
        "09 HS diagnostics", cauchy_ok and exp_ok,
        f"last-doubling change {change:.1%} (want < 5%); "
        f"diag exponent {rep.fitted_tail_exponent:.2f} vs {rep.reference_exponent:.2f} "
        f"(want within 0.3)",
    )
    # The diagonal-decay sub-criterion holds; the 5% Cauchy requirement is
    # structurally out of reach at N = 64: the off-diagonal rows decay at the
    # sharp summability rate (1+m')^{-2(1/q-1/p)} with 2(1/q-1/p) barely
    # above 1 inside the admissible (p, q) window, so the partial sums are
    # finite but converge like N^{-(2(1/q-1/p)-1)}.  See the test output for
    # the measured change.
    assert exp_ok
    assert cauchy_ok


def test_criterion_10_det2_identity():
    rng = substream(1010, 13, 0)
    ok = True
    zs = []
    for _ in range(5):
        lam = rng.uniform(-0.4, 0.9, size=3)
        gsq = rng.standard_normal((10**6, 3)) ** 2
        w = np.exp(-(lam * (gsq - 1)).sum(axis=1))
        mc = w.mean()
        se = w.std(ddof=1) / 1000.0
        closed = det2(lam, 2.0) ** (-0.5)
        z = abs(mc - closed) / se
        zs.append(z)
        ok = ok and z < 3.0
    report("10 det2 identity", ok, "z-scores: " + ", ".join(f"{z:.2f}" for z in zs))
    assert ok


GAUSS_S = np.array([[1.0, 0.3], [-0.2, 0.8]])
GAUSS_V = np.array([0.7, -0.5])


def test_criterion_11_first_order_condition():
    grid = TimeGrid.uniform(257)
    field = constant_field(GAUSS_S)
    F = endpoint_linear(GAUSS_V)
    N = 8
    rep = minimize_F_Lambda(F, field, 0.4, grid, N, OptConfig(restarts=3))
    basis = cm_basis(0.4, grid, N, 2)
    c_star = np.array([-(GAUSS_S.T @ GAUSS_V) @ b.induced_path.values[-1] for b in basis])
    coeff_err = float(np.abs(rep.gamma.coeffs.reshape(-1) - c_star).max())
    ok = rep.first_order_residual < 1e-6 and coeff_err < 1e-6
    report(
        "11 first-order condition", ok,
        f"residual {rep.first_order_residual:.2e}; closed-form gap {coeff_err:.2e}",
    )
    assert ok


def test_criterion_12_ldp_slope():
    grid = TimeGrid.uniform(257)
    field = constant_field(GAUSS_S)
    F = endpoint_linear(GAUSS_V)
    rep = minimize_F_Lambda(F, field, 0.4, grid, 32, OptConfig(restarts=1))
    a = rep.F_Lambda_min
    eps_list = [0.5, 0.35, 0.25]
    table = mc_laplace(
        F, None, field, 0.4, grid, eps_list, 100_000,
        use_shift=True, gamma_cm=rep.gamma, seed=1012,
    )
    rels = []
    for eps, J, se, n in table[-2:]:
        rate = -(eps**2) * math.log(J)
        rels.append(abs(rate - a) / abs(a))
    ok = all(r < 0.05 for r in rels)
    report(
        "12 LDP slope", ok,
        f"-eps^2 log J vs F_Lambda rel errs at two smallest eps: "
        + ", ".join(f"{r:.4f}" for r in rels) + " (want < 0.05)",
    )
    assert ok


def test_criterion_13_leading_coefficient():
    # Gaussian quadratic-plus-linear case: nonzero minimizer and genuine
    # eps-dependence of the rescaled integrand, so the fit is non-degenerate
    grid = TimeGrid.uniform(257)
    field = constant_field(GAUSS_S)
    Q = np.array([[0.5, 0.1], [0.1, 0.3]])
    F = endpoint_quadratic(Q, v=np.array([0.4, -0.3]))
    rep = minimize_F_Lambda(F, field, 0.4, grid, 32, OptConfig(restarts=2))
    rep = expansion_constants(rep, F, field, mc_samples=20_000, seed=1013, hessian_N=32)
    table = mc_laplace(
        F, None, field, 0.4, grid, [0.6, 0.5, 0.4, 0.3], 20_000,
        use_shift=True, gamma_cm=rep.gamma, seed=2013,
    )
    fit = expansion_fit(table, a=rep.F_Lambda_min, c=rep.c_coef, order=2)
    alpha0_fit = fit["coefficients"][0]
    se_comb = math.hypot(fit["coefficient_se"][0], rep.alpha0_se)
    z = abs(alpha0_fit - rep.alpha0) / se_comb
    ok = z < 3.0 and rep.alpha0 > 0
    report(
        "13 leading coefficient", ok,
        f"fit intercept {alpha0_fit:.4f} vs MC alpha0 {rep.alpha0:.4f} "
        f"(z = {z:.2f}, want < 3); alpha0 > 0: {rep.alpha0 > 0}",
    )
    assert ok


def test_criterion_14_kappa_ladder():
    l4 = kappa_ladder(0.4, 9).indices
    want4 = [0.0, 1.0, 2.0, 2.5, 3.0, 3.5, 4.0, 4.5, 5.0]
    l3 = kappa_ladder(0.3, 8).indices
    want3 = [0.0, 1.0, 2.0, 3.0, 10 / 3, 4.0, 13 / 3, 5.0]
    ok = np.allclose(l4, want4, atol=1e-12) and np.allclose(l3, want3, atol=1e-12)
    report("14 kappa ladder", ok, f"H=0.4: {l4}; H=0.3: {[round(v, 6) for v in l3]}")
    assert ok


def test_criterion_15_short_time_law():
    H, T, n = 0.4, 0.25, 4000
    g = TimeGrid.uniform(257)
    base = tanh_field(1, 1, coef_seed=9, scale=0.5, drift_scale=0.4)
    frac = fractional_drift_field(base, 1.0 / H)
    XV = np.stack([p.values for p in sample_fbm_ensemble(g, H, 1, n, seed=1015)])
    XY = np.stack([p.values for p in sample_fbm_ensemble(g, H, 1, n, seed=2015)])
    solV = heun_controlled(frac, g, np.diff(XV, axis=-2), np.zeros(1), eps_beta=1.0, with_drift=True)
    V_T = solV[:, g.index_of(T), 0]
    eps = T**H
    solY = heun_controlled(frac, g, eps * np.diff(XY, axis=-2), np.zeros(1), eps_beta=eps, with_drift=True)
    Y_1 = solY[:, -1, 0]
    ks = ks_2samp(V_T, Y_1)
    ok = ks.pvalue > 0.01
    report("15 short-time law", ok, f"two-sample KS p = {ks.pvalue:.3f}")
    assert ok

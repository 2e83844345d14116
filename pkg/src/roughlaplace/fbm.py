"""Fractional Brownian motion, its Volterra kernel, and the Cameron-Martin map.

Simulation is exact at grid scale: dense Cholesky of the true covariance,
with one counter-based RNG stream per sample index so ensembles reproduce
independently of worker count.  The Cameron-Martin space is handled through
L^2 preimages under the Volterra operator U, whose unitarity defines the
inner product; no reproducing kernel is ever evaluated.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import roots_jacobi

from .grids import SampledPath, TimeGrid

__all__ = [
    "HurstParams",
    "CameronMartinVector",
    "substream",
    "fbm_cov",
    "sample_fbm",
    "sample_fbm_ensemble",
    "volterra_kernel",
    "volterra_kernel_info",
    "cm_map",
    "cm_basis",
    "onb_interp",
]

log = logging.getLogger(__name__)

_STREAM_FBM = 1
_STREAM_MC = 2
_STREAM_OPT = 3


def substream(seed: int, kind: int, index: int) -> np.random.Generator:
    """Independent counter-based stream for (seed, kind, index).

    Streams are separated in the Philox counter's high words, so per-sample
    draws are identical no matter how samples are distributed over workers.
    """
    counter = (int(index) << 128) + (int(kind) << 192)
    return np.random.Generator(np.random.Philox(key=int(seed), counter=counter))


@dataclass(frozen=True)
class HurstParams:
    """Hurst exponent with the compatible (p, q) variation pair.

    For H < 1/2 the admissible window is

        1/([1/H]+1) < 1/p < H,   3/4 < 1/q < H + 1/2,
        1/p + 1/q > 1,           1/q - 1/p > 1/2,

    and the default instantiation takes 1/p = H - 2e, 1/q = H + 1/2 - e with
    e = min(0.02, (H - 1/4)/4), which keeps every inequality strict.
    """

    H: float
    p: float
    q: float

    def __post_init__(self):
        if not 0.25 < self.H <= 0.5:
            raise ValueError("H must lie in (1/4, 1/2]")
        if self.H < 0.5:
            for name, ok in self.window_checks():
                if not ok:
                    raise ValueError(f"parameter window violated: {name}")

    def window_checks(self):
        H, ip, iq = self.H, 1.0 / self.p, 1.0 / self.q
        level_cap = 1.0 / (math.floor(1.0 / H) + 1.0)
        return [
            (f"1/([1/H]+1) = {level_cap:.4g} < 1/p < H", level_cap < ip < H),
            ("3/4 < 1/q < H + 1/2", 0.75 < iq < H + 0.5),
            ("1/p + 1/q > 1", ip + iq > 1.0),
            ("1/q - 1/p > 1/2", iq - ip > 0.5),
        ]

    @classmethod
    def default(cls, H: float) -> "HurstParams":
        if H == 0.5:
            return cls(H=0.5, p=2.25, q=1.0)
        # the level cap 1/([1/H]+1) < 1/p forces a smaller margin just above 1/3
        level_cap = 1.0 / (math.floor(1.0 / H) + 1.0)
        eps = min(0.02, (H - 0.25) / 4.0, (H - level_cap) / 3.0)
        return cls(H=H, p=1.0 / (H - 2 * eps), q=1.0 / (H + 0.5 - eps))

    @property
    def delta(self) -> float:
        return 1.0 / self.q

    @property
    def level(self) -> int:
        """Tensor levels carried by the lift: [p] = 2 for H > 1/3, else 3."""
        return 2 if self.H > 1.0 / 3.0 else 3


def fbm_cov(s: float, t: float, H: float) -> float:
    """Covariance ``(t^{2H} + s^{2H} - |t-s|^{2H}) / 2`` of one fBm coordinate."""
    s, t = float(s), float(t)
    return 0.5 * (t ** (2 * H) + s ** (2 * H) - abs(t - s) ** (2 * H))


def _cov_matrix(times: np.ndarray, H: float) -> np.ndarray:
    tt = times[:, None]
    ss = times[None, :]
    return 0.5 * (tt ** (2 * H) + ss ** (2 * H) - np.abs(tt - ss) ** (2 * H))


def _cholesky_with_jitter(C: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(C)
    except np.linalg.LinAlgError:
        jitter = 1e-12
        log.warning("covariance Cholesky failed; retrying with jitter %.1e", jitter)
        return np.linalg.cholesky(C + jitter * np.eye(C.shape[0]))


def sample_fbm(grid: TimeGrid, H: float, d: int, rng_seed: int) -> SampledPath:
    """One exact d-dimensional fBm sample on ``grid`` (coordinates independent)."""
    return sample_fbm_ensemble(grid, H, d, n_samples=1, seed=rng_seed)[0]


def sample_fbm_ensemble(
    grid: TimeGrid,
    H: float,
    d: int,
    n_samples: int,
    seed: int,
    extra_cross: np.ndarray | None = None,
    extra_var: float | None = None,
):
    """Ensemble of exact fBm samples, one Philox stream per sample index.

    When ``extra_cross``/``extra_var`` are given, each sample additionally
    carries one jointly Gaussian scalar per coordinate with the prescribed
    cross-covariance against the path values (used for exact first-chaos
    pairings); the function then returns ``(paths, pairings)``.
    """
    times = grid.points[1:]
    C = _cov_matrix(times, H)
    m = len(times)
    if extra_cross is not None:
        if extra_var is None:
            raise ValueError("extra_var required with extra_cross")
        Cx = np.zeros((m + 1, m + 1))
        Cx[:m, :m] = C
        Cx[:m, m] = extra_cross
        Cx[m, :m] = extra_cross
        Cx[m, m] = extra_var
        C = Cx
    L = _cholesky_with_jitter(C)
    k = C.shape[0]
    Z = np.empty((n_samples, k, d))
    for i in range(n_samples):
        rng = substream(seed, _STREAM_FBM, i)
        Z[i] = rng.standard_normal((k, d))
    raw = np.einsum("ab,nbd->nad", L, Z)
    paths = []
    vals = np.zeros((n_samples, m + 1, d))
    vals[:, 1:, :] = raw[:, :m, :]
    for i in range(n_samples):
        paths.append(SampledPath(grid, vals[i]))
    if extra_cross is not None:
        return paths, raw[:, m, :]
    return paths


# ---------------------------------------------------------------------------
# Volterra kernel and the Cameron-Martin map U
# ---------------------------------------------------------------------------


def _hyp2f1_series(a: float, b: float, c: float, z, rtol: float = 1e-14, max_terms: int = 500_000):
    """Gauss hypergeometric F(a,b;c;z) by its raw power series.

    Valid for |z| < 1 (here z = 1 - s/t in [0,1)); terms stop once the
    current term falls below ``rtol`` times the partial sum.  Returns the
    value(s) and the number of terms used.
    """
    if np.ndim(z) == 0:
        zf = float(z)
        total = term = 1.0
        for n in range(max_terms):
            term *= (a + n) * (b + n) / ((c + n) * (1.0 + n)) * zf
            total += term
            if abs(term) <= rtol * abs(total):
                return total, n + 1
        raise RuntimeError(f"hypergeometric series did not converge at z={zf}")
    z = np.asarray(z, dtype=float)
    total = np.ones_like(z)
    term = np.ones_like(z)
    n_used = 0
    for n in range(max_terms):
        term = term * ((a + n) * (b + n) / ((c + n) * (1.0 + n))) * z
        total = total + term
        n_used = n + 1
        if np.all(np.abs(term) <= rtol * np.abs(total)):
            break
    else:
        raise RuntimeError("hypergeometric series did not converge")
    return total, n_used


def _volterra_scale(H: float) -> float:
    """Normalization 1/(Gamma(H+1/2) sqrt(V_H)) fixing Var w_1 = 1, where
    V_H = Gamma(2-2H) cos(pi H) / (pi H (1-2H)) and V_{1/2} = 1 by continuity."""
    if H == 0.5:
        return 1.0
    VH = math.gamma(2 - 2 * H) * math.cos(math.pi * H) / (math.pi * H * (1 - 2 * H))
    return 1.0 / (math.gamma(H + 0.5) * math.sqrt(VH))


def volterra_kernel_info(t: float, s: float, H: float):
    """Volterra kernel value and the series term count used.

    The hypergeometric factor is evaluated through the Pfaff-transformed
    series F(H-1/2, 2H; H+1/2; 1-s/t), whose argument stays in [0,1), with
    the (t/s)^{1/2-H} prefactor and the variance normalization making
    int_0^{s ^ t} K(t,u) K(s,u) du the exact fBm covariance.
    """
    if not 0.25 < H <= 0.5:
        raise ValueError("H must lie in (1/4, 1/2]")
    if s >= t:
        return 0.0, 0
    if s <= 0:
        raise ValueError("the kernel limit s -> 0 is singular; s must be positive")
    if H == 0.5:
        return 1.0, 0
    z = 1.0 - s / t
    F, n_terms = _hyp2f1_series(H - 0.5, 2.0 * H, H + 0.5, z)
    val = _volterra_scale(H) * (t - s) ** (H - 0.5) * (t / s) ** (0.5 - H) * float(F)
    return val, n_terms


def volterra_kernel(t: float, s: float, H: float) -> float:
    """Volterra kernel K^H(t,s) of the moving-average representation of fBm
    over Brownian motion, for 0 < s < t (0 for s >= t)."""
    return volterra_kernel_info(t, s, H)[0]


class _KernelQuadrature:
    """Gauss-Jacobi rule absorbing both endpoint singularities of the kernel.

    Substituting s = t x turns int_0^t K(t,s) h(s) ds into
    t^{H+1/2} c_H int_0^1 (1-x)^{H-1/2} x^{H-1/2} F(...; 1-x) h(t x) dx,
    which the Jacobi(H-1/2, H-1/2) weight integrates accurately for smooth h
    times the hypergeometric factor.
    """

    def __init__(self, H: float, n_nodes: int = 96):
        self.H = H
        alpha = H - 0.5
        xs, ws = roots_jacobi(n_nodes, alpha, alpha)
        self.x = (xs + 1.0) / 2.0
        self.w = ws * 2.0 ** (-(2.0 * alpha + 1.0))
        if H == 0.5:
            self.F = np.ones_like(self.x)
        else:
            self.F, _ = _hyp2f1_series(H - 0.5, 2.0 * H, H + 0.5, 1.0 - self.x)
        self.scale = _volterra_scale(H)

    def apply(self, grid: TimeGrid, h_eval) -> np.ndarray:
        """Values of (U h) on the grid; ``h_eval(times)`` -> (len(times), d)."""
        out = None
        for i, t in enumerate(grid.points):
            if t == 0.0:
                continue
            hv = np.atleast_2d(h_eval(t * self.x))
            acc = np.einsum("m,m,md->d", self.w, self.F, hv)
            if out is None:
                out = np.zeros((len(grid), hv.shape[1]))
            out[i] = t ** (self.H + 0.5) * self.scale * acc
        return out


_quad_cache: dict = {}


def _kernel_quadrature(H: float) -> _KernelQuadrature:
    if H not in _quad_cache:
        _quad_cache[H] = _KernelQuadrature(H)
    return _quad_cache[H]


def _cosine_eval(coeffs: np.ndarray):
    """h(t) = c_0 + sum_n c_n sqrt(2) cos(n pi t), per coordinate."""
    n_modes, d = coeffs.shape

    def h_eval(ts):
        ts = np.atleast_1d(ts)
        basis = np.empty((len(ts), n_modes))
        basis[:, 0] = 1.0
        for n in range(1, n_modes):
            basis[:, n] = math.sqrt(2.0) * np.cos(n * math.pi * ts)
        return basis @ coeffs

    return h_eval


@dataclass
class CameronMartinVector:
    """k = U h with h recorded by its L^2 cosine coefficients.

    ``coeffs[n, i]`` multiplies the n-th cosine mode (mode 0 is the constant)
    in coordinate i.  The Cameron-Martin inner product is the L^2 inner
    product of preimages, so unitarity of U holds by construction.
    """

    coeffs: np.ndarray
    induced_path: SampledPath
    hurst: HurstParams
    meta: dict = field(default_factory=dict, compare=False, repr=False)

    @property
    def dim(self) -> int:
        return self.coeffs.shape[1]

    def norm_sq(self) -> float:
        return float((self.coeffs**2).sum())

    def inner(self, other: "CameronMartinVector") -> float:
        a, b = self.coeffs, other.coeffs
        n = min(a.shape[0], b.shape[0])
        return float((a[:n] * b[:n]).sum())


def cm_map(h, H: float, grid: TimeGrid | None = None) -> CameronMartinVector:
    """Cameron-Martin path ``k_t = int_0^t K^H(t,s) h_s ds`` on the grid.

    ``h`` is either an (n_modes, d) array of cosine coefficients or a
    SampledPath of h itself (piecewise-linearly interpolated under the
    quadrature).
    """
    params = HurstParams.default(H)
    if isinstance(h, SampledPath):
        if grid is None:
            grid = h.grid
        hp = h

        def h_eval(ts):
            return np.stack([np.interp(ts, hp.grid.points, hp.values[:, j]) for j in range(hp.dim)], axis=-1)

        # project onto the cosine modes so the preimage record stays exact
        n_modes = min(len(hp.grid) // 2, 129)
        coeffs = _cosine_coeffs(hp, n_modes)
    else:
        coeffs = np.atleast_2d(np.asarray(h, dtype=float))
        if coeffs.ndim != 2:
            raise ValueError("coefficients must be (n_modes, d)")
        if grid is None:
            raise ValueError("a grid is required when h is given by coefficients")
        h_eval = _cosine_eval(coeffs)
    vals = _kernel_quadrature(H).apply(grid, h_eval)
    return CameronMartinVector(
        coeffs=coeffs, induced_path=SampledPath(grid, vals), hurst=params
    )


def _cosine_coeffs(h: SampledPath, n_modes: int) -> np.ndarray:
    t = h.grid.points
    coeffs = np.empty((n_modes, h.dim))
    coeffs[0] = np.trapezoid(h.values, t, axis=0)
    for n in range(1, n_modes):
        w = math.sqrt(2.0) * np.cos(n * math.pi * t)
        coeffs[n] = np.trapezoid(h.values * w[:, None], t, axis=0)
    return coeffs


def cm_basis(H: float, grid: TimeGrid, n_modes: int, d: int) -> list:
    """U applied to the L^2 cosine orthonormal basis (modes 0..n_modes-1).

    The images are exactly orthonormal in the Cameron-Martin inner product
    by unitarity.  Returned in mode-major order: (mode 0, coord 0), (mode 0,
    coord 1), ..., (mode 1, coord 0), ...
    """
    quad = _kernel_quadrature(H)
    out = []
    for n in range(n_modes):
        for i in range(d):
            coeffs = np.zeros((n_modes, d))
            coeffs[n, i] = 1.0
            vals = quad.apply(grid, _cosine_eval(coeffs))
            out.append(
                CameronMartinVector(
                    coeffs=coeffs,
                    induced_path=SampledPath(grid, vals),
                    hurst=HurstParams.default(H),
                )
            )
    return out


def onb_interp(delta: float, n_max: int, d: int, grid: TimeGrid) -> list:
    """Orthonormal basis of the interpolation space L^{delta,2}, sampled.

    Members are 1*e_i and sqrt(2) (1+n^2)^{-delta/2} cos(n pi t) e_i for
    n = 1..n_max, returned as SampledPaths in the same mode-major order as
    :func:`cm_basis`.
    """
    if not 0.5 < delta < 1.0:
        raise ValueError("delta must lie in (1/2, 1)")
    if n_max < 0:
        raise ValueError("n_max must be nonnegative")
    t = grid.points
    out = []
    for n in range(n_max + 1):
        if n == 0:
            profile = np.ones_like(t)
        else:
            profile = math.sqrt(2.0) * (1.0 + n**2) ** (-delta / 2.0) * np.cos(n * math.pi * t)
        for i in range(d):
            vals = np.zeros((len(t), d))
            vals[:, i] = profile
            out.append(SampledPath(grid, vals))
    return out

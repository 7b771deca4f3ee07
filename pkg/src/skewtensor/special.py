"""
Scalar numerics: log-scaled Bessel K, GIG densities/moments/sampling and
the latent-variable laws of the skewed families.

All Bessel work is done in log space.  ``log_bessel_k`` tries the scaled
double-precision routine first, falls back to the uniform (Debye) asymptotic
expansion for large orders, and only uses ``mpmath`` when neither applies.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping

import mpmath
import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import optimize, special

from .family import Family

# Orders at or above this use the Debye expansion when kve over/underflows.
DEBYE_MIN_ORDER = 25.0
_KVE_LO, _KVE_HI = 1e-290, 1e290
_MP_DPS = 50

# Debye polynomials u_k(p), coefficients in ascending powers of p.
_DEBYE_U = (
    (np.array([1.0]), 1.0),
    (np.array([0, 3, 0, -5.0]), 24.0),
    (np.array([0, 0, 81, 0, -462, 0, 385.0]), 1152.0),
    (np.array([0, 0, 0, 30375, 0, -369603, 0, 765765, 0, -425425.0]), 414720.0),
    (
        np.array([0, 0, 0, 0, 4465125, 0, -94121676, 0, 349922430, 0, -446185740, 0, 185910725.0]),
        39813120.0,
    ),
)


def _as_float_arrays(*args):
    arrs = np.broadcast_arrays(*(np.asarray(a, dtype=np.float64) for a in args))
    return [np.array(a) for a in arrs]


def _log_k_debye(nu: NDArray, x: NDArray) -> NDArray:
    z = x / nu
    sq = np.sqrt(1.0 + z * z)
    p = 1.0 / sq
    eta = sq + np.log(z) - np.log1p(sq)
    series = np.zeros_like(nu)
    for k, (coeffs, denom) in enumerate(_DEBYE_U):
        series += (-1.0) ** k * np.polynomial.polynomial.polyval(p, coeffs) / denom / nu**k
    return 0.5 * np.log(np.pi / (2.0 * nu)) - nu * eta - 0.5 * np.log(sq) + np.log(series)


def _log_k_mp(nu: float, x: float) -> float:
    with mpmath.workdps(_MP_DPS):
        return float(mpmath.log(mpmath.besselk(mpmath.mpf(nu), mpmath.mpf(x))))


# branch codes
_KVE, _DEBYE, _MP = 0, 1, 2


def _branches(nu: NDArray, x: NDArray) -> tuple[NDArray, NDArray]:
    with np.errstate(all="ignore"):
        v = special.kve(nu, x)
    ok = np.isfinite(v) & (v > _KVE_LO) & (v < _KVE_HI)
    code = np.where(ok, _KVE, np.where(nu >= DEBYE_MIN_ORDER, _DEBYE, _MP))
    return code, v


def _eval(nu: NDArray, x: NDArray, code: NDArray) -> NDArray:
    out = np.empty_like(nu)
    m = code == _KVE
    if m.any():
        with np.errstate(all="ignore"):
            out[m] = np.log(special.kve(nu[m], x[m])) - x[m]
    m = code == _DEBYE
    if m.any():
        out[m] = _log_k_debye(nu[m], x[m])
    for i in np.flatnonzero(code == _MP):
        out.flat[i] = _log_k_mp(nu.flat[i], x.flat[i])
    return out


def _check_bessel_args(lam: NDArray, x: NDArray) -> None:
    if not (np.all(np.isfinite(lam)) and np.all(np.isfinite(x))):
        raise ValueError("log_bessel_k needs finite arguments")
    if np.any(x <= 0):
        raise ValueError("log_bessel_k needs x > 0")


def log_bessel_k(lam: ArrayLike, x: ArrayLike):
    """``log K_lam(x)`` for real order and positive argument.

    Vectorized; returns a float for scalar input.  Symmetric in ``lam`` by
    construction (only ``|lam|`` is used).
    """
    scalar = np.ndim(lam) == 0 and np.ndim(x) == 0
    lam, x = _as_float_arrays(lam, x)
    _check_bessel_args(lam, x)
    nu = np.abs(lam)
    code, v = _branches(nu, x)
    out = np.empty_like(nu)
    m = code == _KVE
    out[m] = np.log(v[m]) - x[m]
    rest = ~m
    if rest.any():
        out[rest] = _eval(nu[rest], x[rest], code[rest])
    return float(out) if scalar else out


_QUAD_NODES = 257
_QUAD_DROP = 45.0
_QUAD_T_MAX = 60.0


def _log_k_order_diff_quad(nu: NDArray, x: NDArray, h: NDArray) -> tuple[NDArray, NDArray]:
    """``log K_{nu+h}(x) - log K_{nu-h}(x)`` for ``nu >= 0`` from
    ``K_v(x) = int_0^inf exp(-x cosh t) cosh(v t) dt``.

    Writing ``K_{nu+-h} = P +- Q`` with a shared trapezoid grid gives the
    difference as ``2 atanh(Q/P)``, free of the cancellation a plain
    difference of two rounded logarithms has.  Returns the values and a mask
    of entries whose grid resolves the integrand; others are left to the
    caller.
    """
    v = nu + h
    t_peak = np.arcsinh(v / x)
    width = (x * x + v * v) ** -0.25

    def phi(t):
        with np.errstate(over="ignore"):
            return -x * np.cosh(t) + v * t

    top = phi(t_peak)
    lo_step = np.full_like(nu, 6.0) * width
    hi_step = lo_step.copy()
    for _ in range(12):
        lo_bad = (t_peak - lo_step > 0) & (phi(np.maximum(t_peak - lo_step, 0)) > top - _QUAD_DROP)
        hi_bad = phi(t_peak + hi_step) > top - _QUAD_DROP
        lo_step = np.where(lo_bad, 2 * lo_step, lo_step)
        hi_step = np.where(hi_bad, 2 * hi_step, hi_step)
    lower = np.maximum(t_peak - lo_step, 0.0)
    upper = t_peak + hi_step
    dt = (upper - lower) / (_QUAD_NODES - 1)
    ok = (upper <= _QUAD_T_MAX) & (dt <= np.minimum(0.1, width / 4.0))
    diff = np.zeros_like(nu)
    if ok.any():
        k = np.linspace(0.0, 1.0, _QUAD_NODES)
        lo_, up_ = lower[ok, None], upper[ok, None]
        t = lo_ + (up_ - lo_) * k
        nu_, h_, x_ = nu[ok, None], h[ok, None], x[ok, None]
        with np.errstate(over="ignore", under="ignore"):
            w = np.exp(-x_ * np.cosh(t) + (nu_ + h_) * t - top[ok, None])
        w[:, 0] *= np.where(lower[ok] == 0.0, 0.5, 1.0)
        e_nu, e_h = np.exp(-2 * nu_ * t), np.exp(-2 * h_ * t)
        p_sum = np.sum(w * (1 + e_nu) * (1 + e_h), axis=1)
        q_sum = np.sum(w * -np.expm1(-2 * nu_ * t) * -np.expm1(-2 * h_ * t), axis=1)
        diff[ok] = 2.0 * np.arctanh(q_sum / p_sum)
    return diff, ok


def bessel_order_step(lam: ArrayLike) -> NDArray:
    """Central-difference step used by :func:`d_log_bessel_k_dorder`."""
    return np.maximum(1e-6, 1e-6 * np.abs(np.asarray(lam, dtype=np.float64)))


def d_log_bessel_k_dorder(lam: ArrayLike, x: ArrayLike):
    """Numerical ``d/dlam log K_lam(x)`` by central differences.

    The step is ``h = max(1e-6, 1e-6*|lam|)``.  Where the scaled double
    routine applies, the difference of logarithms is taken from a shared
    quadrature of the integral representation; elsewhere both evaluations
    use the same numerical branch so the difference never straddles two
    approximations.
    """
    scalar = np.ndim(lam) == 0 and np.ndim(x) == 0
    lam, x = _as_float_arrays(lam, x)
    _check_bessel_args(lam, x)
    h = bessel_order_step(lam)
    nu_p, nu_m = np.abs(lam + h), np.abs(lam - h)
    code = np.maximum(_branches(nu_p, x)[0], _branches(nu_m, x)[0])
    code = np.where((code == _MP) & (np.abs(lam) >= DEBYE_MIN_ORDER), _DEBYE, code)
    shape = lam.shape
    lam, x, h, nu_p, nu_m, code = (v.reshape(-1) for v in (lam, x, h, nu_p, nu_m, code))
    out = np.empty_like(lam)
    quad = np.flatnonzero(code == _KVE)
    if quad.size:
        diff, ok = _log_k_order_diff_quad(np.abs(lam[quad]), x[quad], h[quad])
        idx = quad[ok]
        out[idx] = np.sign(lam[idx]) * diff[ok] / (2.0 * h[idx])
        quad = idx
    rest = np.setdiff1d(np.arange(lam.size), quad)
    if rest.size:
        out[rest] = (_eval(nu_p[rest], x[rest], code[rest]) - _eval(nu_m[rest], x[rest], code[rest])) / (2.0 * h[rest])
    out = out.reshape(shape)
    return float(out) if scalar else out


def bessel_k_ratio(lam: ArrayLike, x: ArrayLike):
    """``R_lam(x) = K_{lam+1}(x) / K_lam(x)``."""
    lam = np.asarray(lam, dtype=np.float64)
    return np.exp(log_bessel_k(lam + 1.0, x) - log_bessel_k(lam, x))


def digamma(x: ArrayLike):
    x = np.asarray(x, dtype=np.float64)
    if np.any(x <= 0):
        raise ValueError("digamma is only defined here for x > 0")
    out = special.digamma(x)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Generalized inverse Gaussian
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GigParams:
    """``GIG(a, b, lam)`` with density ``prop. to y^(lam-1) exp(-(a y + b/y)/2)``.

    ``a = 0`` (with ``lam < 0``) is the inverse-gamma limit and ``b = 0``
    (with ``lam > 0``) the gamma limit; both arise as conditional laws when
    the skewness tensor or a residual vanishes.
    """

    a: float
    b: float
    lam: float

    def __post_init__(self):
        a, b, lam = float(self.a), float(self.b), float(self.lam)
        if not all(math.isfinite(v) for v in (a, b, lam)):
            raise ValueError(f"GIG parameters must be finite: {(a, b, lam)}")
        if a < 0 or b < 0:
            raise ValueError(f"GIG needs a >= 0 and b >= 0, got a={a}, b={b}")
        if a == 0 and not lam < 0:
            raise ValueError("GIG with a = 0 is proper only for lam < 0")
        if b == 0 and not lam > 0:
            raise ValueError("GIG with b = 0 is proper only for lam > 0")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "lam", lam)

    @property
    def omega(self) -> float:
        return math.sqrt(self.a * self.b)

    @property
    def eta(self) -> float:
        return math.sqrt(self.a / self.b)

    @property
    def on_boundary(self) -> bool:
        return self.a == 0 or self.b == 0


@dataclass(frozen=True)
class GigMoments:
    e_y: float
    e_inv_y: float
    e_log_y: float


def log_gig_integral(a: ArrayLike, b: ArrayLike, lam: ArrayLike):
    """``log int_0^inf w^(lam-1) exp(-(a w + b/w)/2) dw``.

    Handles the boundary cases ``a = 0`` and ``b = 0``; returns ``+inf``
    where the integral diverges.
    """
    scalar = all(np.ndim(v) == 0 for v in (a, b, lam))
    a, b, lam = _as_float_arrays(a, b, lam)
    out = np.full(a.shape, np.inf)
    inner = (a > 0) & (b > 0)
    if inner.any():
        ai, bi, li = a[inner], b[inner], lam[inner]
        out[inner] = (
            math.log(2.0) + 0.5 * li * (np.log(bi) - np.log(ai)) + log_bessel_k(li, np.sqrt(ai * bi))
        )
    inv_gamma = (a == 0) & (b > 0) & (lam < 0)
    if inv_gamma.any():
        li, bi = lam[inv_gamma], b[inv_gamma]
        out[inv_gamma] = special.gammaln(-li) + li * np.log(bi / 2.0)
    gamma = (b == 0) & (a > 0) & (lam > 0)
    if gamma.any():
        li, ai = lam[gamma], a[gamma]
        out[gamma] = special.gammaln(li) - li * np.log(ai / 2.0)
    return float(out) if scalar else out


def gig_log_pdf(y: ArrayLike, p: GigParams):
    y = np.asarray(y, dtype=np.float64)
    if np.any(y <= 0):
        raise ValueError("GIG density needs y > 0")
    out = (p.lam - 1.0) * np.log(y) - 0.5 * (p.a * y + p.b / y) - log_gig_integral(p.a, p.b, p.lam)
    return float(out) if out.ndim == 0 else out


def gig_moment_arrays(a: ArrayLike, b: ArrayLike, lam: ArrayLike) -> tuple[NDArray, NDArray, NDArray]:
    """Vectorized ``E[Y], E[1/Y], E[log Y]`` for ``Y ~ GIG(a, b, lam)``.

    Interior points use Bessel ratios in log space; ``E[1/Y]`` uses the
    reciprocal form ``sqrt(a/b) K_{lam-1}/K_lam`` which has no cancellation.
    Boundary points use the inverse-gamma / gamma closed forms.
    """
    a, b, lam = _as_float_arrays(a, b, lam)
    e_y = np.full(a.shape, np.nan)
    e_inv = np.full(a.shape, np.nan)
    e_log = np.full(a.shape, np.nan)

    inner = (a > 0) & (b > 0)
    if inner.any():
        ai, bi, li = a[inner], b[inner], lam[inner]
        w = np.sqrt(ai * bi)
        lk = log_bessel_k(li, w)
        half_log_ratio = 0.5 * (np.log(bi) - np.log(ai))
        e_y[inner] = np.exp(half_log_ratio + log_bessel_k(li + 1.0, w) - lk)
        e_inv[inner] = np.exp(-half_log_ratio + log_bessel_k(li - 1.0, w) - lk)
        e_log[inner] = half_log_ratio + d_log_bessel_k_dorder(li, w)

    ig = (a == 0) & (b > 0) & (lam < 0)
    if ig.any():
        shape, scale = -lam[ig], b[ig] / 2.0
        e_y[ig] = np.where(shape > 1, scale / np.maximum(shape - 1.0, 1e-300), np.inf)
        e_inv[ig] = shape / scale
        e_log[ig] = np.log(scale) - special.digamma(shape)

    gm = (b == 0) & (a > 0) & (lam > 0)
    if gm.any():
        shape, rate = lam[gm], a[gm] / 2.0
        e_y[gm] = shape / rate
        e_inv[gm] = np.where(shape > 1, rate / np.maximum(shape - 1.0, 1e-300), np.inf)
        e_log[gm] = special.digamma(shape) - np.log(rate)

    if np.isnan(e_y).any():
        raise ValueError("GIG parameters outside the domain (need a,b >= 0 with a proper limit)")
    return e_y, e_inv, e_log


def gig_moments(p: GigParams) -> GigMoments:
    e_y, e_inv, e_log = gig_moment_arrays(p.a, p.b, p.lam)
    return GigMoments(float(e_y), float(e_inv), float(e_log))


def _gig_rou_setup(lam: float, omega: float) -> tuple[float, float, float, float]:
    """Mode and bounding rectangle for the mode-shifted ratio-of-uniforms
    method on ``g(x) = x^(lam-1) exp(-omega (x + 1/x) / 2)``, ``lam >= 0``."""
    m = ((lam - 1.0) + math.sqrt((lam - 1.0) ** 2 + omega**2)) / omega
    log_g_m = (lam - 1.0) * math.log(m) - 0.5 * omega * (m + 1.0 / m)
    # extremes of (x - m) sqrt(g(x)) solve this cubic
    coeffs = [1.0, -(2.0 * (lam + 1.0) / omega + m), 2.0 * (lam - 1.0) * m / omega - 1.0, m]
    roots = np.roots(coeffs)
    roots = np.sort(roots[np.abs(roots.imag) < 1e-8 * np.maximum(1.0, np.abs(roots.real))].real)
    lo = [r for r in roots if 0 < r < m]
    hi = [r for r in roots if r > m]
    if not lo or not hi:
        raise FloatingPointError(f"ratio-of-uniforms setup failed for lam={lam}, omega={omega}")

    def half_log_g(x):
        return 0.5 * ((lam - 1.0) * math.log(x) - 0.5 * omega * (x + 1.0 / x) - log_g_m)

    x_lo, x_hi = lo[-1], hi[0]
    v_minus = (x_lo - m) * math.exp(half_log_g(x_lo))
    v_plus = (x_hi - m) * math.exp(half_log_g(x_hi))
    return m, log_g_m, v_minus, v_plus


def _sample_gig_standard(lam: float, omega: float, size: int, rng: np.random.Generator) -> NDArray:
    flip = lam < 0
    lam = abs(lam)
    m, log_g_m, v_minus, v_plus = _gig_rou_setup(lam, omega)
    out = np.empty(size)
    filled = 0
    batch = max(64, size)
    while filled < size:
        u = rng.random(batch)
        v = v_minus + (v_plus - v_minus) * rng.random(batch)
        with np.errstate(divide="ignore", invalid="ignore"):
            x = v / u + m
            pos = (x > 0) & (u > 0)
            xs = np.where(pos, x, 1.0)
            log_ratio = (lam - 1.0) * np.log(xs) - 0.5 * omega * (xs + 1.0 / xs) - log_g_m
            accept = pos & (2.0 * np.log(u) <= log_ratio)
        got = x[accept][: size - filled]
        out[filled:filled + got.size] = got
        filled += got.size
    return 1.0 / out if flip else out


def sample_gig(p: GigParams, size=None, rng: np.random.Generator | None = None):
    """Draw from ``GIG(a, b, lam)``.

    Interior parameters use the ratio-of-uniforms method with mode shift on
    the two-parameter form, rescaled by ``sqrt(b/a)``.  Boundary laws are
    sampled as inverse-gamma / gamma variates.
    """
    rng = np.random.default_rng() if rng is None else rng
    n = 1 if size is None else int(np.prod(size))
    if p.a == 0:
        draws = (p.b / 2.0) / rng.gamma(-p.lam, 1.0, n)
    elif p.b == 0:
        draws = rng.gamma(p.lam, 2.0 / p.a, n)
    else:
        draws = math.sqrt(p.b / p.a) * _sample_gig_standard(p.lam, p.omega, n, rng)
    if size is None:
        return float(draws[0])
    return draws.reshape(size)


# ---------------------------------------------------------------------------
# Latent mixing laws
# ---------------------------------------------------------------------------


def _require_positive(scalars: Mapping[str, float], *names: str) -> list[float]:
    vals = []
    for name in names:
        if name not in scalars or scalars[name] is None:
            raise ValueError(f"missing family scalar {name!r}")
        v = float(scalars[name])
        if not v > 0 or not math.isfinite(v):
            raise ValueError(f"family scalar {name} must be positive and finite, got {v}")
        vals.append(v)
    return vals


def sample_latent(family: Family | str, scalars: Mapping[str, float], rng: np.random.Generator, size=None):
    """Draw the mixing variable ``W`` of a family.

    ST: inverse-gamma(nu/2, nu/2); GH: GIG(omega, omega, lam); VG: gamma(gamma, rate gamma);
    SAL: Exp(1); NIG: inverse Gaussian IG(1, kappa) (mean 1/kappa, shape 1);
    Normal: the constant 1.
    """
    family = Family.parse(family)
    n = 1 if size is None else size
    if family is Family.NORMAL:
        draws = np.ones(n)
    elif family is Family.SKEW_T:
        (nu,) = _require_positive(scalars, "nu")
        draws = (nu / 2.0) / rng.gamma(nu / 2.0, 1.0, n)
    elif family is Family.GEN_HYPERBOLIC:
        (omega,) = _require_positive(scalars, "omega")
        lam = float(scalars["lam"])
        draws = sample_gig(GigParams(omega, omega, lam), n, rng)
    elif family is Family.VARIANCE_GAMMA:
        (g,) = _require_positive(scalars, "gamma")
        draws = rng.gamma(g, 1.0 / g, n)
    elif family is Family.SAL:
        draws = rng.exponential(1.0, n)
    else:
        (kappa,) = _require_positive(scalars, "kappa")
        draws = rng.wald(1.0 / kappa, 1.0, n)
    if size is None:
        return float(np.asarray(draws).reshape(-1)[0])
    return np.asarray(draws)


# ---------------------------------------------------------------------------
# Root finding
# ---------------------------------------------------------------------------


class BracketError(ValueError):
    """No sign change could be found for a monotone root search."""


def solve_monotone(
    f: Callable[[float], float],
    bracket: tuple[float, float],
    tol: float = 1e-10,
    max_expand: int = 60,
) -> float:
    """Root of a continuous monotone function.

    If ``f`` has no sign change on ``bracket`` the bracket is widened by
    doubling (geometrically when it lies on the positive axis) for at most
    ``max_expand`` steps.  The search itself is Brent's method, which is
    bisection-safeguarded.
    """
    lo, hi = float(bracket[0]), float(bracket[1])
    if not lo < hi:
        raise ValueError(f"invalid bracket {bracket}")
    f_lo, f_hi = f(lo), f(hi)
    steps = 0
    while np.sign(f_lo) == np.sign(f_hi) and f_lo != 0 and f_hi != 0:
        if steps >= max_expand:
            raise BracketError(f"no sign change on [{lo}, {hi}] after {max_expand} expansions")
        steps += 1
        if lo > 0:
            lo, hi = lo / 2.0, hi * 2.0
        else:
            width = hi - lo
            lo, hi = lo - width / 2.0, hi + width / 2.0
        f_lo, f_hi = f(lo), f(hi)
    if f_lo == 0:
        return lo
    if f_hi == 0:
        return hi
    return float(optimize.brentq(f, lo, hi, xtol=tol, rtol=4 * np.finfo(float).eps, maxiter=500))

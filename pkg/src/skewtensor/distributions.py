"""
Tensor-variate normal variance-mean mixtures.

Every family is represented as

    X = M + W A + sqrt(W) V,    V ~ TVN(0, Delta_1 kron ... kron Delta_D),

with the mixing density of ``W`` written in the common form

    h(w) = c * w^(p-1) * exp(-(beta / w + alpha * w) / 2).

The marginal density then reduces to a single GIG normalizing integral, and
``W | X`` is ``GIG(rho + alpha, delta + beta, p - n*/2)``.  The normal family
is the degenerate member ``W = 1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any

import mpmath
import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy import special

from .family import Family
from .special import GigParams, log_bessel_k, log_gig_integral, sample_latent
from .tensor import ScaleSet, as_tensor, kron_chain, matricize, multi_mode_product, whiten

LOG_2PI = math.log(2.0 * math.pi)

_SCALAR_DOMAIN = {
    "nu": "positive",
    "lam": "real",
    "omega": "positive",
    "gamma": "positive",
    "kappa": "positive",
}


@dataclass(frozen=True, eq=False)
class FamilyParams:
    """Parameters of one distribution.

    Parameters
    ----------
    family : Family or str
    m : array_like
        Location tensor.
    a : array_like, optional
        Skewness tensor.  Defaults to zero; must be zero for the normal family.
    scales : ScaleSet or sequence of matrices
    nu, lam, omega, gamma, kappa : float, optional
        Family scalars; exactly those in ``family.scalar_names`` are required.
        SAL has none (it is the variance-gamma law with ``gamma = 1``).
    """

    family: Family
    m: NDArray
    a: NDArray
    scales: ScaleSet
    nu: float | None = None
    lam: float | None = None
    omega: float | None = None
    gamma: float | None = None
    kappa: float | None = None

    def __init__(self, family, m, scales, a=None, *, nu=None, lam=None, omega=None, gamma=None, kappa=None):
        family = Family.parse(family)
        m = as_tensor(m).copy()
        a = np.zeros_like(m) if a is None else as_tensor(a).copy()
        if not isinstance(scales, ScaleSet):
            scales = ScaleSet(scales)
        if m.shape != a.shape:
            raise ValueError(f"location {m.shape} and skewness {a.shape} differ in shape")
        if m.shape != scales.dims:
            raise ValueError(f"location {m.shape} does not match scale dims {scales.dims}")
        if not (np.all(np.isfinite(m)) and np.all(np.isfinite(a))):
            raise ValueError("location and skewness must be finite")
        if family is Family.NORMAL and np.any(a != 0):
            raise ValueError("the normal family has no skewness; pass a=None or zeros")
        given = {"nu": nu, "lam": lam, "omega": omega, "gamma": gamma, "kappa": kappa}
        for name, value in given.items():
            needed = name in family.scalar_names
            if needed and value is None:
                raise ValueError(f"family {family.value} needs scalar {name!r}")
            if not needed and value is not None:
                raise ValueError(f"family {family.value} takes no scalar {name!r}")
            if value is not None:
                value = float(value)
                if not math.isfinite(value) or (_SCALAR_DOMAIN[name] == "positive" and value <= 0):
                    raise ValueError(f"{name} must be {_SCALAR_DOMAIN[name]} and finite, got {value}")
                given[name] = value
        m.setflags(write=False)
        a.setflags(write=False)
        object.__setattr__(self, "family", family)
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "scales", scales)
        for name, value in given.items():
            object.__setattr__(self, name, value)

    @property
    def dims(self) -> tuple[int, ...]:
        return self.scales.dims

    @property
    def order(self) -> int:
        return len(self.dims)

    @property
    def n_star(self) -> int:
        return self.scales.n_star

    @property
    def scalars(self) -> dict[str, float]:
        return {name: getattr(self, name) for name in self.family.scalar_names}

    def replace(self, **changes: Any) -> "FamilyParams":
        """Copy with some fields changed (``m``, ``a``, ``scales`` or scalars)."""
        kw = {"family": self.family, "m": self.m, "a": self.a, "scales": self.scales, **self.scalars}
        kw.update(changes)
        return FamilyParams(**kw)

    def to_dict(self) -> dict[str, Any]:
        return {
            "family": self.family.value,
            "dims": list(self.dims),
            "m": self.m.tolist(),
            "a": self.a.tolist(),
            "scales": [s.tolist() for s in self.scales],
            **self.scalars,
        }

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "FamilyParams":
        family = Family.parse(d["family"])
        scalars = {k: d[k] for k in family.scalar_names if k in d}
        return cls(family, np.asarray(d["m"], float), [np.asarray(s, float) for s in d["scales"]],
                   a=np.asarray(d["a"], float) if "a" in d else None, **scalars)


@dataclass(frozen=True)
class LatentMoments:
    e_w: float
    e_w2: float


@dataclass(frozen=True)
class MixingLaw:
    """``h(w) = exp(log_c) w^(p-1) exp(-(beta/w + alpha w)/2)``."""

    alpha: float
    beta: float
    p: float
    log_c: float


def mixing_law(params: FamilyParams) -> MixingLaw:
    """Mixing density of ``W`` in the common GIG-kernel form.

    Not defined for the normal family (``W`` is degenerate there).
    """
    fam = params.family
    if fam is Family.SKEW_T:
        nu = params.nu
        return MixingLaw(0.0, nu, -nu / 2.0, (nu / 2.0) * math.log(nu / 2.0) - math.lgamma(nu / 2.0))
    if fam is Family.GEN_HYPERBOLIC:
        om, lam = params.omega, params.lam
        return MixingLaw(om, om, lam, -math.log(2.0) - log_bessel_k(lam, om))
    if fam is Family.VARIANCE_GAMMA or fam is Family.SAL:
        g = 1.0 if fam is Family.SAL else params.gamma
        return MixingLaw(2.0 * g, 0.0, g, g * math.log(g) - math.lgamma(g))
    if fam is Family.NIG:
        k = params.kappa
        return MixingLaw(k * k, 1.0, -0.5, k - 0.5 * LOG_2PI)
    raise ValueError("the normal family has no mixing law")


def log_mixing_density(w: ArrayLike, params: FamilyParams):
    law = mixing_law(params)
    w = np.asarray(w, dtype=np.float64)
    out = law.log_c + (law.p - 1.0) * np.log(w) - 0.5 * (law.beta / w + law.alpha * w)
    return float(out) if out.ndim == 0 else out


def _batch(x: ArrayLike, params: FamilyParams) -> tuple[NDArray, bool]:
    x = np.asarray(x, dtype=np.float64)
    d = params.order
    if x.shape == params.dims:
        return x[None], True
    if x.ndim == d + 1 and x.shape[1:] == params.dims:
        return x, False
    raise ValueError(f"data shape {x.shape} does not match tensor dims {params.dims}")


@dataclass(frozen=True)
class QuadForms:
    """Per-observation forms: ``delta`` (Mahalanobis), ``cross`` (with the
    skewness) and the scalar ``rho`` of the skewness itself."""

    delta: NDArray
    cross: NDArray
    rho: float


def quad_forms(x: ArrayLike, params: FamilyParams) -> QuadForms:
    xb, _ = _batch(x, params)
    z = whiten(xb - params.m, params.scales, offset=1)
    za = whiten(params.a, params.scales)
    axes = tuple(range(1, xb.ndim))
    return QuadForms(
        delta=np.sum(z * z, axis=axes),
        cross=np.sum(z * za, axis=axes),
        rho=float(np.sum(za * za)),
    )


def posterior_gig(forms: QuadForms, params: FamilyParams) -> tuple[NDArray, NDArray, float]:
    """Arrays ``(a, b, lam)`` of the GIG law of ``W | X`` per observation."""
    law = mixing_law(params)
    a = np.full(forms.delta.shape, forms.rho + law.alpha)
    b = forms.delta + law.beta
    return a, b, law.p - params.n_star / 2.0


def log_density(x: ArrayLike, params: FamilyParams):
    """Log density at one tensor or a batch (leading axis = observations).

    For a zero skewness tensor the GIG integral falls on its boundary and is
    evaluated with the gamma / inverse-gamma closed forms.
    """
    xb, single = _batch(x, params)
    forms = quad_forms(xb, params)
    n = params.n_star
    base = -0.5 * n * LOG_2PI - 0.5 * params.scales.log_det_kron()
    if params.family is Family.NORMAL:
        out = base - 0.5 * forms.delta
    else:
        law = mixing_law(params)
        a, b, lam = posterior_gig(forms, params)
        out = base + forms.cross + law.log_c + log_gig_integral(a, b, lam)
    return float(out[0]) if single else out


def log_joint(x: ArrayLike, w: ArrayLike, params: FamilyParams):
    """``log f(x | w) + log h(w)`` for a single tensor and scalar or array ``w``."""
    x = as_tensor(x)
    if x.shape != params.dims:
        raise ValueError(f"data shape {x.shape} does not match tensor dims {params.dims}")
    w = np.asarray(w, dtype=np.float64)
    if np.any(w <= 0):
        raise ValueError("w must be positive")
    forms = quad_forms(x, params)
    delta, cross, rho = float(forms.delta[0]), float(forms.cross[0]), forms.rho
    n = params.n_star
    # |x - m - w a|^2 in the whitened metric, divided by w
    quad = delta / w - 2.0 * cross + w * rho
    out = -0.5 * n * (LOG_2PI + np.log(w)) - 0.5 * params.scales.log_det_kron() - 0.5 * quad
    if params.family is not Family.NORMAL:
        out = out + log_mixing_density(w, params)
    return float(out) if out.ndim == 0 else out


def conditional_w(x: ArrayLike, params: FamilyParams) -> GigParams:
    """GIG law of the mixing variable given one observation."""
    if params.family is Family.NORMAL:
        raise ValueError("the normal family has a degenerate mixing variable")
    x = as_tensor(x)
    if x.shape != params.dims:
        raise ValueError(f"data shape {x.shape} does not match tensor dims {params.dims}")
    a, b, lam = posterior_gig(quad_forms(x, params), params)
    return GigParams(float(a[0]), float(b[0]), lam)


def sample(params: FamilyParams, n: int, rng: np.random.Generator) -> NDArray:
    """Draw ``n`` tensors; returns an array of shape ``(n, *dims)``."""
    n = int(n)
    if n < 0:
        raise ValueError("n must be non-negative")
    z = rng.standard_normal((n,) + params.dims)
    v = multi_mode_product(z, params.scales.sqrt_factors, offset=1)
    if params.family is Family.NORMAL:
        return params.m + v
    w = sample_latent(params.family, params.scalars, rng, size=n)
    w = w.reshape((n,) + (1,) * params.order)
    return params.m + w * params.a + np.sqrt(w) * v


def latent_moments(params: FamilyParams) -> LatentMoments:
    """``E[W]`` and ``E[W^2]`` of the mixing variable."""
    fam = params.family
    if fam is Family.NORMAL:
        return LatentMoments(1.0, 1.0)
    if fam is Family.SKEW_T:
        nu = params.nu
        if nu <= 2:
            raise ValueError(f"E[W] requires nu > 2, got {nu}")
        e_w = nu / (nu - 2.0)
        if nu <= 4:
            raise ValueError(f"E[W^2] requires nu > 4, got {nu}")
        h = nu / 2.0
        return LatentMoments(e_w, h * h / ((h - 1.0) * (h - 2.0)))
    if fam is Family.GEN_HYPERBOLIC:
        lam, om = params.lam, params.omega
        lk = log_bessel_k(lam, om)
        return LatentMoments(math.exp(log_bessel_k(lam + 1, om) - lk), math.exp(log_bessel_k(lam + 2, om) - lk))
    if fam is Family.VARIANCE_GAMMA:
        g = params.gamma
        return LatentMoments(1.0, (g + 1.0) / g)
    if fam is Family.SAL:
        return LatentMoments(1.0, 2.0)
    k = params.kappa
    return LatentMoments(1.0 / k, 1.0 / k**2 + 1.0 / k**3)


def mean_w(params: FamilyParams) -> float:
    """``E[W]`` alone (only needs ``nu > 2`` for the skew-t)."""
    if params.family is Family.SKEW_T:
        if params.nu <= 2:
            raise ValueError(f"the mean requires nu > 2, got {params.nu}")
        return params.nu / (params.nu - 2.0)
    return latent_moments(params).e_w


def mean_tensor(params: FamilyParams) -> NDArray:
    return params.m + mean_w(params) * params.a


@dataclass(frozen=True)
class SecondMoments:
    """Second-moment matrices.

    ``x1`` denotes the mode-0 matricization of :func:`~skewtensor.tensor.matricize`,
    shape ``(n*/n_1, n_1)``.
    """

    e_vec_outer: NDArray
    cov_vec: NDArray
    e_x1_x1t: NDArray
    e_x1t_x1: NDArray


def second_moments(params: FamilyParams) -> SecondMoments:
    """Exact second moments, materialized (small dims only).

    ``E[vec X vec X^T] = m m^T + E[W](m a^T + a m^T) + E[W^2] a a^T + E[W] kron_d Delta_d``
    with the Kronecker factors in ascending mode order, which matches the
    C-order vectorization used throughout.
    """
    lm = latent_moments(params)
    m, a = params.m.reshape(-1), params.a.reshape(-1)
    scales = params.scales
    e_outer = (
        np.outer(m, m)
        + lm.e_w * (np.outer(m, a) + np.outer(a, m))
        + lm.e_w2 * np.outer(a, a)
        + lm.e_w * scales.kron()
    )
    mu = m + lm.e_w * a
    cov = e_outer - np.outer(mu, mu)

    m1, a1 = matricize(params.m, 0), matricize(params.a, 0)
    rest = list(scales)[1:]
    tr_rest = float(np.prod([np.trace(s) for s in rest])) if rest else 1.0
    e_x1t_x1 = (
        m1.T @ m1 + lm.e_w * (m1.T @ a1 + a1.T @ m1) + lm.e_w2 * a1.T @ a1
        + lm.e_w * tr_rest * scales[0]
    )
    kron_rest = kron_chain(rest) if rest else np.ones((1, 1))
    e_x1_x1t = (
        m1 @ m1.T + lm.e_w * (m1 @ a1.T + a1 @ m1.T) + lm.e_w2 * a1 @ a1.T
        + lm.e_w * np.trace(scales[0]) * kron_rest
    )
    return SecondMoments(e_outer, cov, e_x1_x1t, e_x1t_x1)


def _cf_forms(t: NDArray, params: FamilyParams) -> tuple[float, float, float]:
    """``(t.m, a = t.A, b = t^T (kron Delta) t)``."""
    lt = [L.T for L in params.scales.cholesky]
    z = multi_mode_product(t, lt)
    return float(np.sum(t * params.m)), float(np.sum(t * params.a)), float(np.sum(z * z))


def _log_kv_complex(lam: float, z: complex) -> complex:
    """Principal ``log K_lam(z)`` for complex ``z`` with positive real part."""
    with np.errstate(all="ignore"):
        v = special.kve(lam, z)
    if np.isfinite(v) and v != 0:
        return complex(np.log(v) - z)
    with mpmath.workdps(30):
        return complex(mpmath.log(mpmath.besselk(lam, mpmath.mpc(z.real, z.imag))))


def cf_gig(s: float, a: float, b: float, lam: float) -> complex:
    """Characteristic function of ``GIG(a, b, lam)`` at ``s``."""
    z2 = a - 2j * s
    log_cf = (lam / 2.0) * (math.log(a) - np.log(z2)) + _log_kv_complex(lam, np.sqrt(b * z2)) - log_bessel_k(lam, math.sqrt(a * b))
    return complex(np.exp(log_cf))


def char_fn(t: ArrayLike, params: FamilyParams) -> complex:
    """``E[exp(i vec(T)^T vec(X))]``, from the closed forms of each family."""
    t = as_tensor(t)
    if t.shape != params.dims:
        raise ValueError(f"argument shape {t.shape} does not match tensor dims {params.dims}")
    tm, a, b = _cf_forms(t, params)
    phase = 1j * tm
    fam = params.family
    if b == 0.0:
        return complex(np.exp(phase))
    if fam is Family.NORMAL:
        return complex(np.exp(phase - 0.5 * b))
    if fam is Family.SKEW_T:
        nu = params.nu
        log_pre = (
            math.log(2.0) + (nu / 2.0) * math.log(nu / 2.0) + log_bessel_k(-nu / 2.0, math.sqrt(nu * b))
            - math.lgamma(nu / 2.0) + (nu / 4.0) * math.log(b / nu)
        )
        return complex(np.exp(phase + log_pre)) * cf_gig(a, b, nu, -nu / 2.0)
    if fam is Family.GEN_HYPERBOLIC:
        lam, om = params.lam, params.omega
        log_pre = (
            log_bessel_k(lam, math.sqrt((om + b) * om)) - log_bessel_k(lam, om)
            - (lam / 2.0) * math.log((om + b) / om)
        )
        return complex(np.exp(phase + log_pre)) * cf_gig(a, om + b, om, lam)
    if fam is Family.VARIANCE_GAMMA or fam is Family.SAL:
        g = 1.0 if fam is Family.SAL else params.gamma
        log_pre = g * (math.log(g) - math.log(g + 0.5 * b))
        cf_gamma = np.exp(-g * np.log(1.0 - 2j * a / (2.0 * g + b)))
        return complex(np.exp(phase + log_pre) * cf_gamma)
    k = params.kappa
    g = math.sqrt(k * k + b)
    cf_ig = np.exp(g * (1.0 - np.sqrt(1.0 - 2j * a / (g * g))))
    return complex(np.exp(phase + k - g) * cf_ig)

"""
ECM maximum-likelihood fitting.

One iteration is

1. E-step: ``a_i = E[W_i | X_i]``, ``b_i = E[1/W_i | X_i]``, ``c_i = E[log W_i | X_i]``;
2. first CM step: location, skewness and the family scalars;
3. one CM step per scale matrix, either by the flip-flop update (matricize
   along every mode) or by the mode-one update (mode-one matricizations plus
   mode swaps);
4. trace normalization of the scales and an exact observed log-likelihood.

Iteration stops on the Aitken criterion or ``max_iter``.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.linalg import cholesky

from .distributions import FamilyParams, log_density, log_mixing_density, posterior_gig, quad_forms
from .family import Family
from .special import (
    BracketError,
    bessel_k_ratio,
    d_log_bessel_k_dorder,
    digamma,
    gig_moment_arrays,
    log_bessel_k,
    solve_monotone,
)
from .tensor import MAX_ORDER, NotPositiveDefiniteError, ScaleSet, kron_chain, matricize, multi_mode_product

log = logging.getLogger(__name__)

DEGENERATE_TOL = 1e-12
STAGNATION_TOL = 1e-12
# Largest tolerated drop of the observed log-likelihood between cycles.
DESCENT_SLACK = 1e-6
SCALAR_BRACKET = (0.1, 200.0)
# bracket widenings allowed for the nu / gamma roots before giving up
_SCALAR_EXPAND = 2


class DegenerateWeightsError(ArithmeticError):
    """The location/skewness update has a vanishing denominator."""


class ScalarUpdateWarning(RuntimeWarning):
    """A family-scalar update failed and the previous value was kept."""


class ScaleUpdate(str, Enum):
    FLIPFLOP = "flipflop"
    MODE_ONE = "mode1"


class InitMethod(str, Enum):
    MOMENT = "moment"
    PROVIDED = "provided"


@dataclass(frozen=True)
class EStepStats:
    a: NDArray
    b: NDArray
    c: NDArray

    @property
    def n(self) -> int:
        return self.a.shape[0]

    @property
    def a_bar(self) -> float:
        return float(np.mean(self.a))

    @property
    def b_bar(self) -> float:
        return float(np.mean(self.b))

    @property
    def c_bar(self) -> float:
        return float(np.mean(self.c))


@dataclass(frozen=True)
class FitConfig:
    max_iter: int = 200
    aitken_tol: float = 1e-5
    reg_epsilon: float = 1e-3
    scale_update: ScaleUpdate = ScaleUpdate.FLIPFLOP
    init: InitMethod = InitMethod.MOMENT
    initial_params: FamilyParams | None = None
    seed: int = 0

    def __post_init__(self):
        if int(self.max_iter) < 1:
            raise ValueError("max_iter must be >= 1")
        if not self.aitken_tol > 0 or not self.reg_epsilon > 0:
            raise ValueError("tolerances must be positive")
        object.__setattr__(self, "scale_update", ScaleUpdate(self.scale_update))
        object.__setattr__(self, "init", InitMethod(self.init))
        if self.init is InitMethod.PROVIDED and self.initial_params is None:
            raise ValueError("init='provided' needs initial_params")


@dataclass
class FitResult:
    params: FamilyParams
    loglik_trace: list[float]
    iterations: int
    converged: bool
    bic: float
    n_free_params: int
    n_obs: int
    warnings: list[str] = field(default_factory=list)
    regularized_iterations: list[int] = field(default_factory=list)
    # "converged", "max_iter", or "guard" when a cycle failed to increase the likelihood
    stop_reason: str = "max_iter"

    @property
    def loglik(self) -> float:
        return self.loglik_trace[-1]

    @property
    def max_loglik_drop(self) -> float:
        """Largest decrease between successive trace entries (0 if monotone)."""
        diffs = np.diff(self.loglik_trace)
        return float(max(0.0, -diffs.min())) if diffs.size else 0.0


def _as_data(data: ArrayLike | Sequence[ArrayLike]) -> NDArray:
    x = np.asarray(data, dtype=np.float64)
    if x.ndim < 2 or x.ndim > MAX_ORDER + 1:
        raise ValueError(f"data must be a stack of tensors (N, n_1, ..., n_D), got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ValueError("data contains non-finite values")
    return x


# ---------------------------------------------------------------------------
# E-step and first CM step
# ---------------------------------------------------------------------------


def e_step(data: ArrayLike, params: FamilyParams) -> EStepStats:
    x = _as_data(data)
    n = x.shape[0]
    if params.family is Family.NORMAL:
        return EStepStats(np.ones(n), np.ones(n), np.zeros(n))
    a, b, lam = posterior_gig(quad_forms(x, params), params)
    e_w, e_inv, e_log = gig_moment_arrays(a, b, np.full(n, lam))
    return EStepStats(e_w, e_inv, e_log)


def update_location(data: ArrayLike, stats: EStepStats, fallback: bool = False) -> NDArray:
    """``M = sum_i X_i (a_bar b_i - 1) / (sum_i a_bar b_i - N)``.

    A vanishing denominator raises :class:`DegenerateWeightsError`, or with
    ``fallback=True`` returns the sample mean.
    """
    x = _as_data(data)
    w = stats.a_bar * stats.b - 1.0
    den = float(np.sum(w))
    if abs(den) < DEGENERATE_TOL:
        if fallback:
            return x.mean(axis=0)
        raise DegenerateWeightsError(f"location update denominator {den:.3e}")
    return np.tensordot(w, x, axes=(0, 0)) / den


def update_skewness(data: ArrayLike, stats: EStepStats, fallback: bool = False) -> NDArray:
    """``A = sum_i X_i (b_bar - b_i) / (sum_i a_i b_bar - N)``.

    With ``fallback=True`` a vanishing denominator gives zero skewness.
    """
    x = _as_data(data)
    w = stats.b_bar - stats.b
    den = float(np.sum(stats.a * stats.b_bar - 1.0))
    if abs(den) < DEGENERATE_TOL:
        if fallback:
            return np.zeros(x.shape[1:])
        raise DegenerateWeightsError(f"skewness update denominator {den:.3e}")
    return np.tensordot(w, x, axes=(0, 0)) / den


# ---------------------------------------------------------------------------
# Family scalars
# ---------------------------------------------------------------------------


def _gh_q(lam: float, omega: float, stats: EStepStats) -> float:
    """Per-observation GH objective in ``(lam, omega)``."""
    return -log_bessel_k(lam, omega) + lam * stats.c_bar - 0.5 * omega * (stats.a_bar + stats.b_bar)


def _update_gh(params: FamilyParams, stats: EStepStats, notes: list[str]) -> dict[str, float]:
    lam, omega = params.lam, params.omega
    q0 = _gh_q(lam, omega, stats)

    deriv = d_log_bessel_k_dorder(lam, omega)
    new_lam = lam
    if abs(deriv) < 1e-12:
        notes.append("gh: zero order derivative, lam kept")
    else:
        cand = stats.c_bar * lam / deriv
        # take the ratio update, halving toward the old value if it lowers the objective
        for _ in range(30):
            if math.isfinite(cand) and _gh_q(cand, omega, stats) >= q0:
                new_lam = cand
                break
            cand = 0.5 * (cand + lam) if math.isfinite(cand) else lam
        else:
            notes.append("gh: lam update did not increase the objective, kept")

    r_pos = bessel_k_ratio(new_lam, omega)
    r_neg = bessel_k_ratio(-new_lam, omega)
    d1 = 0.5 * (r_pos + r_neg - (stats.a_bar + stats.b_bar))
    d2 = 0.5 * (
        r_pos**2 - (1 + 2 * new_lam) / omega * r_pos - 1
        + r_neg**2 - (1 - 2 * new_lam) / omega * r_neg - 1
    )
    new_omega = omega
    if not (math.isfinite(d1) and math.isfinite(d2)) or d2 == 0:
        notes.append("gh: omega Newton step undefined, kept")
    else:
        step = d1 / d2
        base = _gh_q(new_lam, omega, stats)
        for _ in range(30):
            cand = omega - step
            if cand > 0 and _gh_q(new_lam, cand, stats) >= base:
                new_omega = cand
                break
            step *= 0.5
        else:
            notes.append("gh: omega step not admissible after 30 halvings, kept")
    return {"lam": float(new_lam), "omega": float(new_omega)}


def update_family_scalars(stats: EStepStats, params: FamilyParams, notes: list[str] | None = None) -> dict[str, float]:
    """Conditional maximizers of the family scalars given E-step statistics.

    A failed root search keeps the previous value, appends a note to
    ``notes`` and emits :class:`ScalarUpdateWarning`.
    """
    notes = [] if notes is None else notes
    fam = params.family
    out: dict[str, float] = dict(params.scalars)
    before = len(notes)
    if fam is Family.SKEW_T:
        target = float(np.mean(stats.b + stats.c))

        def f(nu):
            return math.log(nu / 2.0) + 1.0 - digamma(nu / 2.0) - target

        try:
            out["nu"] = solve_monotone(f, SCALAR_BRACKET, max_expand=_SCALAR_EXPAND)
        except BracketError:
            notes.append(f"st: no nu root (mean b+c = {target:.6g}), kept {params.nu:.6g}")
    elif fam is Family.VARIANCE_GAMMA:
        shift = stats.c_bar - stats.a_bar

        def f(g):
            return math.log(g) + 1.0 - digamma(g) + shift

        try:
            out["gamma"] = solve_monotone(f, SCALAR_BRACKET, max_expand=_SCALAR_EXPAND)
        except BracketError:
            notes.append(f"vg: no gamma root (c_bar - a_bar = {shift:.6g}), kept {params.gamma:.6g}")
    elif fam is Family.NIG:
        out["kappa"] = stats.n / float(np.sum(stats.a))
    elif fam is Family.GEN_HYPERBOLIC:
        out.update(_update_gh(params, stats, notes))
    for msg in notes[before:]:
        warnings.warn(msg, ScalarUpdateWarning, stacklevel=2)
    return out


# ---------------------------------------------------------------------------
# Scale updates
# ---------------------------------------------------------------------------


def regularize_spd(m: ArrayLike, epsilon: float = 1e-3) -> tuple[NDArray, bool]:
    """Add ``epsilon * I`` when the inverse condition number is below machine
    epsilon.  Returns the matrix and whether regularization fired.

    Raises :class:`NotPositiveDefiniteError` if the result fails Cholesky.
    """
    m = np.array(m, dtype=np.float64)
    m = 0.5 * (m + m.T)
    fired = False
    with np.errstate(all="ignore"):
        cond = np.linalg.cond(m)
    if not np.isfinite(cond) or 1.0 / cond < np.finfo(float).eps:
        m = m + epsilon * np.eye(m.shape[0])
        fired = True
    try:
        cholesky(m, lower=True)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError("scale estimate is not positive definite after regularization") from exc
    return m, fired


def update_scale_flipflop(data: ArrayLike, stats: EStepStats, params: FamilyParams, j: int) -> NDArray:
    """Mode-``j`` scale update from mode-``j`` matricizations (unregularized)."""
    x = _as_data(data)
    dims = params.dims
    if not 0 <= j < len(dims):
        raise ValueError(f"mode {j} out of range")
    n, n_star = x.shape[0], params.n_star
    whit = [None if d == j else w for d, w in enumerate(params.scales.whiteners)]
    y = multi_mode_product(x - params.m, whit, offset=1)
    ya = multi_mode_product(params.a, whit)
    # (N, n*/n_j, n_j) stack of matricized whitened residuals
    y1 = np.moveaxis(y, j + 1, -1).reshape(n, -1, dims[j])
    a1 = matricize(ya, j)
    ysum = np.einsum("i,ipq->pq", np.ones(n), y1)
    s = (
        np.einsum("i,ipq,ipr->qr", stats.b, y1, y1)
        - a1.T @ ysum
        - ysum.T @ a1
        + float(np.sum(stats.a)) * (a1.T @ a1)
    )
    return 0.5 * (s + s.T) * dims[j] / (n * n_star)


def _upper_chol_inverse(m: NDArray) -> NDArray:
    """``U`` with ``U^T U = m^{-1}``."""
    return cholesky(np.linalg.inv(m), lower=False)


def mode_one_slabs(t: NDArray, scales: ScaleSet, offset: int = 0) -> NDArray:
    """Slabs ``X_(1)j`` of the mode-one matricization.

    For a tensor (or a batch, with ``offset`` leading axes) returns an array
    ``(..., n*_{3:D}, n_2, n_1)`` with slab ``j`` equal to
    ``(I_{n_2} kron e_j^T B) X_(1)`` where ``B`` is the Kronecker product of
    upper Cholesky factors of ``Delta_d^{-1}``, ``d >= 3``.
    """
    dims = t.shape[offset:]
    if len(dims) < 2:
        raise ValueError("mode-one slabs need an order >= 2 tensor")
    lead = t.shape[:offset]
    n1, n2 = dims[0], dims[1]
    n_rest = int(np.prod(dims[2:])) if len(dims) > 2 else 1
    # rows of the mode-one matricization are (i_2, i_3.., i_D) in C order
    x1 = np.moveaxis(t, offset, -1).reshape(lead + (n2, n_rest, n1))
    if len(dims) > 2:
        b = kron_chain([_upper_chol_inverse(s) for s in scales.matrices[2:]])
        return np.einsum("jk,...pkq->...jpq", b, x1)
    return np.swapaxes(x1, -2, -3)


def _mode_one_delta1(xs, as_, stats, inv2, n1, n, n_star):
    b_w = np.einsum("i,ijpq,pr,ijrs->qs", stats.b, xs, inv2, xs)
    cross = np.einsum("jpq,pr,ijrs->qs", as_, inv2, xs)
    a_term = float(np.sum(stats.a)) * np.einsum("jpq,pr,jrs->qs", as_, inv2, as_)
    s = b_w - cross - cross.T + a_term
    return 0.5 * (s + s.T) * n1 / (n * n_star)


def _mode_one_delta2(xs, as_, stats, inv1, n2, n, n_star):
    b_w = np.einsum("i,ijpq,qr,ijsr->ps", stats.b, xs, inv1, xs)
    cross = np.einsum("ijpq,qr,jsr->ps", xs, inv1, as_)
    a_term = float(np.sum(stats.a)) * np.einsum("jpq,qr,jsr->ps", as_, inv1, as_)
    s = b_w - cross - cross.T + a_term
    return 0.5 * (s + s.T) * n2 / (n * n_star)


def _swap_modes(params_m, params_a, x, scales: ScaleSet, l: int):
    """Exchange mode 1 (second) and mode ``l`` in data, parameters and scales."""
    mats = list(scales.matrices)
    mats[1], mats[l] = mats[l], mats[1]
    return (
        np.swapaxes(params_m, 1, l),
        np.swapaxes(params_a, 1, l),
        np.swapaxes(x, 2, l + 1),
        ScaleSet(mats),
    )


def update_scale_mode1(data: ArrayLike, stats: EStepStats, params: FamilyParams, j: int) -> NDArray:
    """Mode-``j`` scale update using only mode-one matricizations.

    Modes 0 and 1 use the slab formulas directly; a higher mode ``l`` is
    swapped into position 1 first and then treated as mode 1.
    """
    x = _as_data(data)
    dims = params.dims
    order = len(dims)
    if order < 2:
        raise ValueError("the mode-one update needs tensors of order >= 2")
    if not 0 <= j < order:
        raise ValueError(f"mode {j} out of range")
    n, n_star = x.shape[0], params.n_star
    m, a, scales = params.m, params.a, params.scales
    if j >= 2:
        m, a, x, scales = _swap_modes(m, a, x, scales, j)
    xs = mode_one_slabs(x - m, scales, offset=1)
    as_ = mode_one_slabs(a, scales)
    if j == 0:
        return _mode_one_delta1(xs, as_, stats, scales.inverses[1], dims[0], n, n_star)
    return _mode_one_delta2(xs, as_, stats, scales.inverses[0], dims[j], n, n_star)


def normalize_scales(scales: ScaleSet) -> ScaleSet:
    """Set ``tr(Delta_d) = n_d`` for ``d < D``; the last matrix absorbs the
    factor, leaving the Kronecker product unchanged."""
    mats = [np.array(s) for s in scales.matrices]
    total = 1.0
    for d in range(len(mats) - 1):
        c = mats[d].shape[0] / np.trace(mats[d])
        if not (np.isfinite(c) and c > 0):
            raise NotPositiveDefiniteError(f"scale matrix {d} has non-positive trace")
        mats[d] = mats[d] * c
        total *= c
    mats[-1] = mats[-1] / total
    return ScaleSet(mats)


# ---------------------------------------------------------------------------
# Likelihoods, convergence, model selection
# ---------------------------------------------------------------------------


def observed_loglik(data: ArrayLike, params: FamilyParams) -> float:
    return float(np.sum(log_density(_as_data(data), params)))


def _slab_forms(r: NDArray, a: NDArray, scales: ScaleSet) -> tuple[NDArray, NDArray, float]:
    """``delta_i``, ``cross_i`` and ``rho`` as sums of slab traces."""
    inv1, inv2 = scales.inverses[0], scales.inverses[1]
    xs = mode_one_slabs(r, scales, offset=1)
    as_ = mode_one_slabs(a, scales)
    delta = np.einsum("qs,ijpq,pr,ijrs->i", inv1, xs, inv2, xs)
    cross = np.einsum("qs,jpq,pr,ijrs->i", inv1, as_, inv2, xs)
    rho = float(np.einsum("qs,jpq,pr,jrs->", inv1, as_, inv2, as_))
    return delta, cross, rho


def complete_loglik(data: ArrayLike, w: ArrayLike, params: FamilyParams, form: str = "vec", l: int | None = None) -> float:
    """Complete-data log-likelihood ``sum_i log f(X_i | w_i) + log h(w_i)``.

    ``form`` selects how the quadratic forms are evaluated: ``"vec"`` (whitened
    vectorization), ``"mode1"`` (slab traces of the mode-one matricization) or
    ``"l2"`` (slab traces after swapping modes 1 and ``l``).  All three agree.
    """
    x = _as_data(data)
    w = np.asarray(w, dtype=np.float64).reshape(-1)
    if w.shape[0] != x.shape[0] or np.any(w <= 0):
        raise ValueError("need one positive latent value per observation")
    n_star = params.n_star
    r = x - params.m
    if form == "vec":
        qf = quad_forms(x, params)
        delta, cross, rho = qf.delta, qf.cross, qf.rho
    elif form == "mode1":
        delta, cross, rho = _slab_forms(r, params.a, params.scales)
    elif form == "l2":
        if l is None or not 2 <= l < params.order:
            raise ValueError(f"form 'l2' needs 2 <= l < {params.order}")
        m_s, a_s, x_s, scales_s = _swap_modes(params.m, params.a, x, params.scales, l)
        delta, cross, rho = _slab_forms(x_s - m_s, a_s, scales_s)
    else:
        raise ValueError(f"unknown form {form!r}")
    ll = (
        -0.5 * x.shape[0] * n_star * math.log(2 * math.pi)
        - 0.5 * n_star * np.sum(np.log(w))
        - 0.5 * x.shape[0] * params.scales.log_det_kron()
        + np.sum(cross - 0.5 * delta / w - 0.5 * w * rho)
    )
    if params.family is not Family.NORMAL:
        ll += float(np.sum(log_mixing_density(w, params)))
    return float(ll)


def aitken_converged(loglik_trace: Sequence[float], eps: float = 1e-5) -> bool:
    """Aitken stopping rule on the last three log-likelihood values.

    ``a = (l[t+1]-l[t]) / (l[t]-l[t-1])``,
    ``l_inf = l[t] + (l[t+1]-l[t]) / (1-a)``; converged when ``l_inf - l[t] < eps``.
    A change below ``1e-12`` counts as converged (stagnation); an
    acceleration ``a >= 1`` (no geometric convergence yet) does not.
    """
    if len(loglik_trace) < 3:
        return False
    l0, l1, l2 = (float(v) for v in loglik_trace[-3:])
    step = l2 - l1
    if abs(step) < STAGNATION_TOL:
        return True
    if abs(l1 - l0) < STAGNATION_TOL:
        return False
    acc = step / (l1 - l0)
    if acc >= 1.0:
        return False
    l_inf = l1 + step / (1.0 - acc)
    return bool(l_inf - l1 < eps)


_EXTRA = {
    Family.NORMAL: 0,
    Family.SKEW_T: 1,
    Family.GEN_HYPERBOLIC: 2,
    Family.VARIANCE_GAMMA: 1,
    Family.SAL: 0,
    Family.NIG: 1,
}


def scale_free_params(dims: Sequence[int], vectorized: bool = False) -> int:
    """Free scale parameters of a separable covariance, identified up to the
    shared constant; ``vectorized=True`` counts one unstructured
    ``n* x n*`` covariance instead."""
    if vectorized:
        n_star = int(np.prod(dims))
        return n_star * (n_star + 1) // 2
    return int(sum(n * (n + 1) // 2 for n in dims) - len(dims) + 1)


def count_free_params(dims: Sequence[int], family: Family | str, vectorized: bool = False) -> int:
    """Location, skewness, scale and family-scalar count used by BIC."""
    family = Family.parse(family)
    n_star = int(np.prod(dims))
    scale = scale_free_params(dims, vectorized)
    return n_star + (n_star if family.is_skewed else 0) + scale + _EXTRA[family]


def bic(loglik: float, k: int, n: int) -> float:
    """``-2 loglik + k log N``; lower is better."""
    if n < 1:
        raise ValueError("BIC needs N >= 1")
    return -2.0 * float(loglik) + k * math.log(n)


# ---------------------------------------------------------------------------
# Driver
# ---------------------------------------------------------------------------

_DEFAULT_SCALARS = {
    Family.NORMAL: {},
    Family.SKEW_T: {"nu": 50.0},
    Family.GEN_HYPERBOLIC: {"lam": -0.5, "omega": 1.0},
    Family.VARIANCE_GAMMA: {"gamma": 2.0},
    Family.SAL: {},
    Family.NIG: {"kappa": 1.0},
}


def moment_init(data: ArrayLike, family: Family | str, reg_epsilon: float = 1e-3) -> FamilyParams:
    """Starting values from sample moments.

    Location is the sample mean and skewness ``0.01 * (mean - median)``.  Each
    scale is the mode-``d`` scatter of the residuals normalized to trace
    ``n_d``, with the last one rescaled to match the average squared norm.
    """
    family = Family.parse(family)
    x = _as_data(data)
    n = x.shape[0]
    dims = x.shape[1:]
    mean = x.mean(axis=0)
    a = None if family is Family.NORMAL else 0.01 * (mean - np.median(x, axis=0))
    r = x - mean
    mats = []
    for d, n_d in enumerate(dims):
        r1 = np.moveaxis(r, d + 1, -1).reshape(n, -1, n_d)
        s = np.einsum("ipq,ipr->qr", r1, r1)
        tr = np.trace(s)
        s = s * (n_d / tr) if tr > 0 else np.eye(n_d)
        mats.append(regularize_spd(s, reg_epsilon)[0])
    scale = float(np.mean(np.sum(r.reshape(n, -1) ** 2, axis=1))) / int(np.prod(dims))
    if scale > 0:
        mats[-1] = mats[-1] * scale
    return FamilyParams(family, mean, mats, a=a, **_DEFAULT_SCALARS[family])


def fit(data: ArrayLike, family: Family | str, config: FitConfig | None = None) -> FitResult:
    """Maximum-likelihood fit of one family by ECM."""
    config = FitConfig() if config is None else config
    family = Family.parse(family)
    x = _as_data(data)
    n = x.shape[0]
    if n < 2:
        raise ValueError("fitting needs at least two observations")
    dims = x.shape[1:]
    if config.scale_update is ScaleUpdate.MODE_ONE and len(dims) < 2:
        raise ValueError("the mode-one scale update needs tensors of order >= 2")

    if config.init is InitMethod.PROVIDED:
        params = config.initial_params
        if params.family is not family or params.dims != dims:
            raise ValueError("initial_params do not match the family or data dims")
    else:
        params = moment_init(x, family, config.reg_epsilon)
    update = update_scale_mode1 if config.scale_update is ScaleUpdate.MODE_ONE else update_scale_flipflop

    trace = [observed_loglik(x, params)]
    previous = params
    notes: list[str] = []
    regularized: list[int] = []
    degenerate_run = 0
    converged = False
    stop_reason = "max_iter"
    it = 0
    for it in range(1, config.max_iter + 1):
        try:
            stats = e_step(x, params)
        except (ValueError, FloatingPointError) as exc:
            notes.append(f"iteration {it}: E-step failed ({exc}); stopped at previous iterate")
            stop_reason = "guard"
            it -= 1
            break
        if family is Family.NORMAL:
            params = params.replace(m=x.mean(axis=0))
        else:
            try:
                m = update_location(x, stats)
                a = update_skewness(x, stats)
                degenerate_run = 0
            except DegenerateWeightsError:
                degenerate_run += 1
                if degenerate_run >= 3:
                    raise
                m = update_location(x, stats, fallback=True)
                a = update_skewness(x, stats, fallback=True)
                notes.append(f"iteration {it}: degenerate weights, fallback to mean / zero skewness")
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", ScalarUpdateWarning)
                scalars = update_family_scalars(stats, params, notes)
            params = params.replace(m=m, a=a, **scalars)

        fired_any = False
        for j in range(len(dims)):
            cand, fired = regularize_spd(update(x, stats, params, j), config.reg_epsilon)
            fired_any |= fired
            params = params.replace(scales=params.scales.replace(j, cand))
        if fired_any:
            regularized.append(it)
        params = params.replace(scales=normalize_scales(params.scales))

        try:
            ll = observed_loglik(x, params)
        except (ValueError, FloatingPointError, np.linalg.LinAlgError):
            ll = math.nan
        if not math.isfinite(ll) or ll < trace[-1] - DESCENT_SLACK:
            # Exact ECM cycles cannot lower the likelihood, so this is lost
            # precision, typically a location collapsing onto an observation
            # where the density is unbounded.  Keep the last good iterate.
            notes.append(f"iteration {it}: log-likelihood {ll:.10g} below {trace[-1]:.10g}; stopped at previous iterate")
            params = previous
            stop_reason = "guard"
            it -= 1
            break
        previous = params
        trace.append(ll)
        if aitken_converged(trace, config.aitken_tol):
            converged = True
            stop_reason = "converged"
            break

    k = count_free_params(dims, family)
    for msg in notes:
        log.debug(msg)
    return FitResult(
        params=params,
        loglik_trace=trace,
        iterations=it,
        converged=converged,
        bic=bic(trace[-1], k, n),
        n_free_params=k,
        n_obs=n,
        warnings=notes,
        regularized_iterations=regularized,
        stop_reason=stop_reason,
    )

"""
Simulation studies: random truths, datasets, relative errors and grids.

Each (cell, rep) job draws its own truth and dataset from a generator seeded
by ``SeedSequence([seed, cell, rep])``, so rows are reproducible and
independent of scheduling.
"""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from typing import Iterable, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .distributions import FamilyParams, mean_tensor, mean_w, sample
from .ecm import FitConfig, ScaleUpdate, fit
from .family import Family
from .tensor import ScaleSet

THREADS_ENV = "SKEWTENSOR_THREADS"

PROFILES = {
    "desk": {"dims_grid": [(4, 4, 4), (8, 8, 8)], "n_grid": [50, 100], "reps": 20},
    "full": {
        "dims_grid": [(n, n, n) for n in (8, 9, 11, 13, 15, 17)],
        "n_grid": [50, 100, 150],
        "reps": 100,
    },
}

DEFAULT_TRUE_SCALARS = {
    Family.NORMAL: {},
    Family.SKEW_T: {"nu": 4.0},
    Family.GEN_HYPERBOLIC: {"lam": -0.5, "omega": 1.0},
    Family.VARIANCE_GAMMA: {"gamma": 2.0},
    Family.SAL: {},
    Family.NIG: {"kappa": 1.0},
}


@dataclass(frozen=True)
class StudySpec:
    """One simulation grid.

    ``snr`` fixes ``|vec M|^2 / (E[W] tr(kron Delta))`` by rescaling the
    location; ``skew_snr`` fixes the same ratio for the skewness tensor.
    """

    family_true: Family
    dims_grid: tuple[tuple[int, ...], ...]
    n_grid: tuple[int, ...]
    reps: int
    snr: float = 0.5
    seed: int = 0
    families: tuple[Family, ...] = tuple(Family)
    true_scalars: dict = field(default_factory=dict)
    skew_snr: float = 0.5
    max_cond: float = 10.0
    scale_update: ScaleUpdate = ScaleUpdate.FLIPFLOP
    max_iter: int = 200
    aitken_tol: float = 1e-5

    def __post_init__(self):
        fam = Family.parse(self.family_true)
        object.__setattr__(self, "family_true", fam)
        object.__setattr__(self, "dims_grid", tuple(tuple(int(n) for n in d) for d in self.dims_grid))
        object.__setattr__(self, "n_grid", tuple(int(n) for n in self.n_grid))
        object.__setattr__(self, "families", tuple(Family.parse(f) for f in self.families))
        object.__setattr__(self, "scale_update", ScaleUpdate(self.scale_update))
        scalars = dict(DEFAULT_TRUE_SCALARS[fam])
        scalars.update(self.true_scalars)
        object.__setattr__(self, "true_scalars", scalars)
        if int(self.reps) < 1:
            raise ValueError("reps must be >= 1")
        if not self.snr > 0:
            raise ValueError("snr must be positive")
        if self.skew_snr < 0:
            raise ValueError("skew_snr must be non-negative")
        if not self.dims_grid or not self.n_grid:
            raise ValueError("dims_grid and n_grid must be non-empty")
        if min(self.n_grid) < 2:
            raise ValueError("sample sizes must be >= 2")

    @classmethod
    def from_profile(cls, profile: str, family_true: Family | str = Family.SKEW_T, **kw) -> "StudySpec":
        if profile not in PROFILES:
            raise ValueError(f"unknown profile {profile!r}; expected one of {', '.join(PROFILES)}")
        return cls(family_true=family_true, **{**PROFILES[profile], **kw})

    @property
    def cells(self) -> list[tuple[tuple[int, ...], int]]:
        return [(dims, n) for dims in self.dims_grid for n in self.n_grid]


@dataclass(frozen=True)
class StudyRow:
    family_true: str
    family_fit: str
    dims: str
    N: int
    rep: int
    rel_err_mean: float
    rel_err_kron: float
    iterations: int
    converged: bool
    stop_reason: str
    bic: float
    loglik: float
    max_loglik_drop: float
    wall_time_sec: float
    error: str = ""

    @classmethod
    def columns(cls) -> list[str]:
        return [f.name for f in fields(cls)]


def gen_random_spd(n: int, max_cond: float, rng: np.random.Generator) -> NDArray:
    """``Q diag(e) Q^T`` with ``Q`` from the QR factorization of a Gaussian
    matrix and eigenvalues ``e ~ U[1, max_cond]``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if max_cond < 1:
        raise ValueError("max_cond must be >= 1")
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    q = q * np.sign(np.where(np.diag(r) == 0, 1.0, np.diag(r)))
    eig = rng.uniform(1.0, max_cond, n)
    out = (q * eig) @ q.T
    return 0.5 * (out + out.T)


def calibrate_snr(params: FamilyParams, snr: float) -> FamilyParams:
    """Rescale the location so ``|vec M|^2 / (E[W] tr(kron Delta)) = snr``."""
    if not snr > 0:
        raise ValueError("snr must be positive")
    norm2 = float(np.sum(params.m**2))
    if norm2 == 0:
        raise ValueError("cannot calibrate the SNR of a zero location")
    noise = mean_w(params) * float(np.prod([np.trace(s) for s in params.scales]))
    return params.replace(m=params.m * math.sqrt(snr * noise / norm2))


def random_truth(
    family: Family | str,
    dims: Sequence[int],
    rng: np.random.Generator,
    scalars: dict | None = None,
    snr: float = 0.5,
    skew_snr: float = 0.5,
    max_cond: float = 10.0,
) -> FamilyParams:
    """Random true parameters: QR-based scales, Gaussian location and skewness.

    The location is rescaled to ``snr`` and the skewness so that
    ``|vec A|^2 / (E[W] tr(kron Delta)) = skew_snr``.
    """
    family = Family.parse(family)
    scalars = dict(DEFAULT_TRUE_SCALARS[family] if scalars is None else scalars)
    mats = [gen_random_spd(n, max_cond, rng) for n in dims]
    m = rng.standard_normal(tuple(dims))
    params = FamilyParams(family, m, mats, **scalars)
    if family.is_skewed:
        a = rng.standard_normal(tuple(dims))
        noise = mean_w(params) * float(np.prod([np.trace(s) for s in mats]))
        params = params.replace(a=a * math.sqrt(skew_snr * noise / float(np.sum(a**2))))
    return calibrate_snr(params, snr)


def simulate_dataset(
    params: FamilyParams, n: int, rng: np.random.Generator, snr: float | None = None
) -> NDArray:
    """``n`` draws as an ``(n, *dims)`` array.

    With ``snr`` set the location is first rescaled by :func:`calibrate_snr`;
    the effective truth is then ``calibrate_snr(params, snr)``.
    """
    if snr is not None:
        params = calibrate_snr(params, snr)
    return sample(params, n, rng)


def relative_error(est: ArrayLike, truth: ArrayLike) -> float:
    est, truth = np.asarray(est, dtype=np.float64), np.asarray(truth, dtype=np.float64)
    if est.shape != truth.shape:
        raise ValueError(f"shape mismatch {est.shape} vs {truth.shape}")
    den = np.linalg.norm(truth.ravel())
    if den == 0:
        raise ValueError("relative error against a zero truth")
    return float(np.linalg.norm((est - truth).ravel()) / den)


def relative_error_kron(est: ScaleSet | Sequence[ArrayLike], truth: ScaleSet | Sequence[ArrayLike]) -> float:
    """Relative Frobenius error of ``kron_d Delta_d`` without materializing it.

    Uses ``|kron A_d|^2 = prod |A_d|^2`` and ``<kron A_d, kron B_d> = prod <A_d, B_d>``.
    """
    est = [np.asarray(s, dtype=np.float64) for s in est]
    truth = [np.asarray(s, dtype=np.float64) for s in truth]
    if [s.shape for s in est] != [s.shape for s in truth]:
        raise ValueError("scale shapes differ")
    # work in logs to stay finite for large tensors
    log_e = sum(2 * math.log(np.linalg.norm(s)) for s in est)
    log_t = sum(2 * math.log(np.linalg.norm(s)) for s in truth)
    inner = [float(np.sum(a * b)) for a, b in zip(est, truth)]
    sign = float(np.prod(np.sign(inner)))
    log_i = sum(math.log(abs(v)) if v != 0 else -np.inf for v in inner)
    num = math.exp(log_e - log_t) + 1.0 - 2.0 * sign * math.exp(log_i - log_t)
    return math.sqrt(max(num, 0.0))


def _job_rng(seed: int, cell: int, rep: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(cell), int(rep)]))


def _run_job(spec: StudySpec, cell: int, rep: int) -> list[StudyRow]:
    dims, n = spec.cells[cell]
    rng = _job_rng(spec.seed, cell, rep)
    truth = random_truth(
        spec.family_true, dims, rng, spec.true_scalars, spec.snr, spec.skew_snr, spec.max_cond
    )
    x = simulate_dataset(truth, n, rng)
    true_mean = mean_tensor(truth)
    dims_s = "x".join(str(d) for d in dims)
    config = FitConfig(max_iter=spec.max_iter, aitken_tol=spec.aitken_tol, scale_update=spec.scale_update)
    rows = []
    for fam in spec.families:
        t0 = time.perf_counter()
        try:
            res = fit(x, fam, config)
            try:
                err_mean = relative_error(mean_tensor(res.params), true_mean)
            except ValueError:
                err_mean = math.nan
            row = StudyRow(
                spec.family_true.value, fam.value, dims_s, n, rep, err_mean,
                relative_error_kron(res.params.scales, truth.scales), res.iterations, res.converged,
                res.stop_reason, res.bic, res.loglik, res.max_loglik_drop, time.perf_counter() - t0,
            )
        except (ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
            row = StudyRow(
                spec.family_true.value, fam.value, dims_s, n, rep, math.nan, math.nan, 0, False,
                "error", math.nan, math.nan, math.nan, time.perf_counter() - t0, f"{type(exc).__name__}: {exc}",
            )
        rows.append(row)
    return rows


def worker_count(requested: int | None = None) -> int:
    """Worker processes: ``requested``, capped by ``SKEWTENSOR_THREADS`` and the CPU count."""
    cap = os.cpu_count() or 1
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            cap = min(cap, max(1, int(env)))
        except ValueError:
            raise ValueError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
    return max(1, min(cap, requested if requested else cap))


def run_study(spec: StudySpec, workers: int | None = None) -> list[StudyRow]:
    """Fit every family in ``spec.families`` to every simulated dataset.

    Rows come back ordered by (cell, rep, family) whatever the parallelism.
    Fit failures are recorded in the row's ``error`` field.
    """
    jobs = [(c, r) for c in range(len(spec.cells)) for r in range(spec.reps)]
    n_workers = worker_count(workers)
    if n_workers == 1:
        results = [_run_job(spec, c, r) for c, r in jobs]
    else:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            results = list(pool.map(_run_job, [spec] * len(jobs), *zip(*jobs)))
    return [row for rows in results for row in rows]


def summarize(rows: Iterable[StudyRow], metric: str = "rel_err_kron") -> dict[tuple, dict[str, float]]:
    """Per (dims, N, family) mean, median and 2.5/97.5 percentiles of a metric."""
    groups: dict[tuple, list[float]] = {}
    for r in rows:
        groups.setdefault((r.dims, r.N, r.family_fit), []).append(getattr(r, metric))
    out = {}
    for key, vals in groups.items():
        v = np.asarray(vals, dtype=float)
        v = v[np.isfinite(v)]
        if v.size == 0:
            out[key] = {"mean": math.nan, "median": math.nan, "lo": math.nan, "hi": math.nan, "n": 0}
        else:
            lo, hi = np.percentile(v, [2.5, 97.5])
            out[key] = {"mean": float(v.mean()), "median": float(np.median(v)), "lo": float(lo), "hi": float(hi), "n": int(v.size)}
    return out


def row_dict(row: StudyRow) -> dict:
    return asdict(row)


def ar1_matrix(n: int, rho: float) -> NDArray:
    idx = np.arange(n)
    return rho ** np.abs(idx[:, None] - idx[None, :])


def image_like_truth(
    height: int,
    width: int,
    rng: np.random.Generator,
    family: Family | str = Family.NIG,
    scalars: dict | None = None,
    rho: float = 0.8,
    colour_corr: float = 0.6,
    skew_snr: float = 0.5,
) -> FamilyParams:
    """Truth for synthetic colour images of shape ``(height, width, 3)``.

    Rows and columns get AR(1) scales, the colour mode an equicorrelated
    3x3 scale; the location is a smooth gradient and the skewness a positive
    random field (bright outliers).
    """
    family = Family.parse(family)
    scalars = dict(DEFAULT_TRUE_SCALARS[family] if scalars is None else scalars)
    colour = (1 - colour_corr) * np.eye(3) + colour_corr * np.ones((3, 3))
    mats = [ar1_matrix(height, rho), ar1_matrix(width, rho), colour]
    yy, xx = np.meshgrid(np.linspace(0, 1, height), np.linspace(0, 1, width), indexing="ij")
    m = np.stack([0.3 + 0.4 * yy, 0.3 + 0.4 * xx, 0.5 - 0.2 * (xx + yy) / 2], axis=-1)
    params = FamilyParams(family, m, mats, **scalars)
    if family.is_skewed:
        a = np.abs(rng.standard_normal(m.shape))
        noise = mean_w(params) * float(np.prod([np.trace(s) for s in mats]))
        params = params.replace(a=a * math.sqrt(skew_snr * noise / float(np.sum(a**2))))
    return params

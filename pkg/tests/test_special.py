import math

import mpmath
import numpy as np
import pytest
from scipy import integrate, stats

from skewtensor.family import Family
from skewtensor.special import (
    BracketError,
    GigParams,
    bessel_k_ratio,
    bessel_order_step,
    d_log_bessel_k_dorder,
    digamma,
    gig_log_pdf,
    gig_moments,
    log_bessel_k,
    log_gig_integral,
    sample_gig,
    sample_latent,
    solve_monotone,
)

GRID_LAM = (-2.0, -0.5, 0.0, 0.5, 2.0)
GRID_AB = (0.5, 1.0, 4.0)


def mp_log_k(lam, x):
    with mpmath.workdps(40):
        return float(mpmath.log(mpmath.besselk(lam, x)))


def quad(f, lo=0.0, hi=np.inf):
    return integrate.quad(f, lo, hi, epsabs=0, epsrel=1e-12, limit=400)[0]


# ---------------------------------------------------------------- Bessel K

def test_log_bessel_k_half_order():
    expect = math.log(math.sqrt(math.pi / 2.0) * math.exp(-1.0))
    assert log_bessel_k(0.5, 1.0) == pytest.approx(expect, abs=1e-14)
    assert expect == pytest.approx(-0.77418, abs=5e-5)  # quoted value is rounded
    assert log_bessel_k(-0.5, 1.0) == log_bessel_k(0.5, 1.0)


def test_log_bessel_k_integral_definition():
    # K_lam(x) = int_0^inf exp(-x cosh t) cosh(lam t) dt
    val = quad(lambda t: math.exp(-2.0 * math.cosh(t)) * math.cosh(3.0 * t), 0.0, 30.0)
    assert log_bessel_k(3.0, 2.0) == pytest.approx(math.log(val), abs=1e-10)


@pytest.mark.parametrize(
    "lam,x",
    [(0.0, 1e-3), (0.3, 0.7), (1.5, 10.0), (30.0, 0.01), (100.0, 500.0), (3.0, 1e-5),
     (200.0, 1.0), (0.2, 800.0), (24.9, 3.0), (25.1, 3.0), (1000.0, 50.0), (5.0, 1e5)],
)
def test_log_bessel_k_matches_mpmath(lam, x):
    assert log_bessel_k(lam, x) == pytest.approx(mp_log_k(lam, x), rel=1e-10, abs=1e-10)


def test_log_bessel_k_finite_on_domain_corners():
    for lam in (0.0, 0.5, 7.0, 250.0, 5000.0):
        for x in (1e-300, 1e-10, 1.0, 1e3, 1e6):
            v = log_bessel_k(lam, x)
            assert math.isfinite(v), (lam, x)
            assert log_bessel_k(-lam, x) == v


def test_log_bessel_k_extreme_against_mpmath():
    for lam, x in [(5000.0, 1e-300), (5000.0, 1e6), (0.5, 1e-300), (3.0, 1e6)]:
        assert log_bessel_k(lam, x) == pytest.approx(mp_log_k(lam, x), rel=1e-9)


def test_log_bessel_k_vectorized_and_symmetric(rng):
    lam = rng.uniform(-60, 60, 200)
    x = np.exp(rng.uniform(-8, 8, 200))
    out = log_bessel_k(lam, x)
    assert out.shape == (200,)
    np.testing.assert_array_equal(out, log_bessel_k(-lam, x))
    for i in range(0, 200, 25):
        assert out[i] == pytest.approx(mp_log_k(lam[i], x[i]), rel=1e-10, abs=1e-10)


def test_log_bessel_k_errors():
    for bad in (0.0, -1.0, float("nan"), float("inf")):
        with pytest.raises(ValueError):
            log_bessel_k(1.0, bad)
    with pytest.raises(ValueError):
        log_bessel_k(float("nan"), 1.0)


def test_bessel_ratio():
    assert bessel_k_ratio(-0.5, 3.0) == pytest.approx(1.0, rel=1e-14)  # K_{1/2} = K_{-1/2}
    with mpmath.workdps(30):
        expect = float(mpmath.besselk(2.7, 1.3) / mpmath.besselk(1.7, 1.3))
    assert bessel_k_ratio(1.7, 1.3) == pytest.approx(expect, rel=1e-12)


# ------------------------------------------------------- order derivative

def test_order_derivative_examples():
    for x in (0.1, 1.0, 7.0):
        assert d_log_bessel_k_dorder(0.0, x) == 0.0
    assert d_log_bessel_k_dorder(-2.0, 1.0) == -d_log_bessel_k_dorder(2.0, 1.0)
    with mpmath.workdps(40):
        oracle = float(mpmath.diff(lambda v: mpmath.log(mpmath.besselk(v, 2)), mpmath.mpf(0.5)))
    assert d_log_bessel_k_dorder(0.5, 2.0) == pytest.approx(oracle, abs=1e-6)


@pytest.mark.parametrize("lam,x", [(0.5, 2.0), (3.0, 0.4), (-1.2, 5.0), (40.0, 10.0), (300.0, 1.0)])
def test_order_derivative_central_vs_one_sided(lam, x):
    h = float(bessel_order_step(lam))
    fwd = (log_bessel_k(lam + h, x) - log_bessel_k(lam, x)) / h
    bwd = (log_bessel_k(lam, x) - log_bessel_k(lam - h, x)) / h
    d = d_log_bessel_k_dorder(lam, x)
    assert d == pytest.approx(fwd, rel=1e-4, abs=1e-4)
    assert d == pytest.approx(bwd, rel=1e-4, abs=1e-4)


def test_order_step_documented():
    assert bessel_order_step(0.0) == 1e-6
    assert bessel_order_step(-50.0) == pytest.approx(5e-5)
    with pytest.raises(ValueError):
        d_log_bessel_k_dorder(1.0, 0.0)


# --------------------------------------------------------------- digamma

def test_digamma_examples():
    assert digamma(1.0) == pytest.approx(-0.5772156649015329, abs=1e-15)
    assert digamma(2.0) == pytest.approx(digamma(1.0) + 1.0, abs=1e-12)
    assert digamma(0.5) == pytest.approx(digamma(1.0) - 2 * math.log(2.0), abs=1e-12)
    xs = np.linspace(0.05, 40, 50)
    np.testing.assert_allclose(digamma(xs + 1), digamma(xs) + 1 / xs, atol=1e-12)
    for bad in (0.0, -1.5):
        with pytest.raises(ValueError):
            digamma(bad)


# ------------------------------------------------------------------- GIG

def test_gig_params_validation():
    p = GigParams(4.0, 1.0, 0.3)
    assert p.omega == pytest.approx(2.0) and p.eta == pytest.approx(2.0)
    assert not p.on_boundary
    for bad in [(-1, 1, 0), (1, -1, 0), (0, 1, 0.5), (1, 0, -0.5), (float("nan"), 1, 0)]:
        with pytest.raises(ValueError):
            GigParams(*bad)
    assert GigParams(0.0, 2.0, -1.5).on_boundary
    assert GigParams(2.0, 0.0, 1.5).on_boundary


def test_gig_pdf_normalizes_tight():
    p = GigParams(1.0, 1.0, 0.5)
    assert quad(lambda y: math.exp(gig_log_pdf(y, p))) == pytest.approx(1.0, abs=1e-8)


@pytest.mark.parametrize("lam", GRID_LAM)
@pytest.mark.parametrize("a", GRID_AB)
@pytest.mark.parametrize("b", GRID_AB)
def test_gig_pdf_and_moments_grid(lam, a, b):
    p = GigParams(a, b, lam)
    pdf = lambda y: math.exp(gig_log_pdf(y, p))  # noqa: E731
    assert quad(pdf) == pytest.approx(1.0, abs=1e-6)
    mom = gig_moments(p)
    assert mom.e_y == pytest.approx(quad(lambda y: y * pdf(y)), rel=1e-8)
    assert mom.e_inv_y == pytest.approx(quad(lambda y: pdf(y) / y), rel=1e-8)
    e_log = quad(lambda y: math.log(y) * pdf(y), 0, 1) + quad(lambda y: math.log(y) * pdf(y), 1)
    assert mom.e_log_y == pytest.approx(e_log, rel=1e-8, abs=1e-9)
    assert mom.e_y * mom.e_inv_y >= 1.0


def test_gig_matches_inverse_gaussian():
    gamma = 1.7
    p = GigParams(gamma**2, 1.0, -0.5)
    for y in (0.05, 0.4, 1.0, 3.0):
        ig = math.log(1 / math.sqrt(2 * math.pi)) + gamma - 1.5 * math.log(y) - 0.5 * (1 / y + gamma**2 * y)
        assert gig_log_pdf(y, p) == pytest.approx(ig, abs=1e-12)


def test_gig_pdf_vanishes_at_zero():
    p = GigParams(1.0, 1.0, 2.0)
    assert gig_log_pdf(1e-8, p) < -1e7
    with pytest.raises(ValueError):
        gig_log_pdf(0.0, p)


def test_gig_moment_examples():
    assert gig_moments(GigParams(4.0, 1.0, -0.5)).e_y == pytest.approx(0.5, rel=1e-14)
    for lam in (-1.3, 0.0, 0.7, 4.0):
        assert gig_moments(GigParams(1, 1, lam)).e_inv_y == pytest.approx(
            gig_moments(GigParams(1, 1, -lam)).e_y, rel=1e-13)
    p = GigParams(2.0, 3.0, 1.7)
    pdf = lambda y: math.exp(gig_log_pdf(y, p))  # noqa: E731
    m = gig_moments(p)
    assert m.e_y == pytest.approx(quad(lambda y: y * pdf(y)), rel=1e-8)
    assert m.e_inv_y == pytest.approx(quad(lambda y: pdf(y) / y), rel=1e-8)
    assert m.e_log_y == pytest.approx(quad(lambda y: math.log(y) * pdf(y)), rel=1e-8)


def test_gig_boundary_laws():
    ig = gig_moments(GigParams(0.0, 2.0, -3.0))  # inverse gamma(3, 1)
    assert ig.e_y == pytest.approx(0.5) and ig.e_inv_y == pytest.approx(3.0)
    assert ig.e_log_y == pytest.approx(-digamma(3.0))
    g = gig_moments(GigParams(2.0, 0.0, 3.0))  # gamma(3, rate 1)
    assert g.e_y == pytest.approx(3.0) and g.e_inv_y == pytest.approx(0.5)
    assert g.e_log_y == pytest.approx(digamma(3.0))
    assert log_gig_integral(0.0, 1.0, 0.5) == math.inf


def _gig_cdf_edges(p: GigParams, k: int) -> np.ndarray:
    pdf = lambda y: math.exp(gig_log_pdf(y, p))  # noqa: E731
    qs = np.linspace(0, 1, k + 1)[1:-1]
    mean = gig_moments(p).e_y
    edges = []
    grid = mean * np.exp(np.linspace(-12, 6, 4000))
    cdf = np.concatenate([[0.0], np.cumsum([quad(pdf, u, v) for u, v in zip(np.r_[0, grid[:-1]], grid)])])
    grid = np.r_[0, grid]
    for q in qs:
        edges.append(np.interp(q, cdf, grid))
    return np.array(edges)


@pytest.mark.parametrize("p", [GigParams(1, 1, 0.5), GigParams(0.05, 0.05, -0.5), GigParams(3, 0.2, -2.5),
                                GigParams(1e-3, 50, 4.0), GigParams(200, 200, 0.0)])
def test_gig_sampler_chi_square(p):
    k = 20
    edges = _gig_cdf_edges(p, k)
    draws = sample_gig(p, 40000, np.random.default_rng(7))
    counts = np.bincount(np.searchsorted(edges, draws), minlength=k)
    assert stats.chisquare(counts).pvalue > 1e-3


@pytest.mark.parametrize("p", [GigParams(2, 3, 1.7), GigParams(0.5, 4, -2.0), GigParams(0.0, 6.0, -4.0),
                                GigParams(2.0, 0.0, 0.7)])
def test_gig_sampler_moments(p):
    n = 10**6
    draws = sample_gig(p, n, np.random.default_rng(3))
    mean = gig_moments(p).e_y
    se = draws.std() / math.sqrt(n)
    assert abs(draws.mean() - mean) < 4 * se
    # second moment through E[Y^2] = (b/a) R_lam R_{lam+1}, or the boundary limits
    var_emp = draws.var()
    second = np.mean(draws**2)
    se2 = np.std(draws**2) / math.sqrt(n)
    if p.a > 0 and p.b > 0:
        s2 = p.b / p.a * bessel_k_ratio(p.lam, p.omega) * bessel_k_ratio(p.lam + 1, p.omega)
    elif p.b == 0:
        s2 = p.lam * (p.lam + 1) * (2 / p.a) ** 2
    else:
        s2 = (p.b / 2) ** 2 / ((-p.lam - 1) * (-p.lam - 2))
    assert abs(second - s2) < 4 * se2
    assert var_emp > 0


def test_gig_sampler_deterministic():
    p = GigParams(1.3, 0.4, -0.3)
    a = sample_gig(p, 50, np.random.default_rng(11))
    b = sample_gig(p, 50, np.random.default_rng(11))
    assert a.tobytes() == b.tobytes()
    assert isinstance(sample_gig(p, rng=np.random.default_rng(1)), float)


# ---------------------------------------------------------- latent laws

LATENT_CASES = [
    (Family.SKEW_T, {"nu": 4.0}, 2.0, None),
    (Family.SKEW_T, {"nu": 9.0}, 9 / 7, (9 / 7) ** 2 * 2 / 5),  # var = 2 m^2 /(nu - 4)
    (Family.VARIANCE_GAMMA, {"gamma": 3.0}, 1.0, 1 / 3),
    (Family.NIG, {"kappa": 2.0}, 0.5, 1 / 8),
    (Family.SAL, {}, 1.0, 1.0),
    (Family.GEN_HYPERBOLIC, {"lam": -0.5, "omega": 1.0}, None, None),
]


@pytest.mark.parametrize("family,scalars,mean,var", LATENT_CASES)
def test_sample_latent_moments(family, scalars, mean, var):
    n = 10**6
    w = sample_latent(family, scalars, np.random.default_rng(5), n)
    assert w.shape == (n,) and np.all(w > 0)
    if mean is None:
        m = gig_moments(GigParams(scalars["omega"], scalars["omega"], scalars["lam"]))
        mean = m.e_y
    assert abs(w.mean() - mean) < 3 * w.std() / math.sqrt(n)
    if var is not None:
        d2 = (w - mean) ** 2
        assert abs(d2.mean() - var) < 4 * d2.std() / math.sqrt(n)


def test_sample_latent_errors_and_normal():
    rng = np.random.default_rng(0)
    assert sample_latent("normal", {}, rng) == 1.0
    with pytest.raises(ValueError):
        sample_latent("st", {"nu": -1.0}, rng)
    with pytest.raises(ValueError):
        sample_latent("nig", {}, rng)
    with pytest.raises(ValueError):
        sample_latent("vg", {"gamma": 0.0}, rng)


def test_sample_latent_deterministic():
    draws = [sample_latent("gh", {"lam": 1.0, "omega": 2.0}, np.random.default_rng(42), 10) for _ in range(2)]
    assert draws[0].tobytes() == draws[1].tobytes()


# ------------------------------------------------------------ root finder

def test_solve_monotone_examples():
    assert solve_monotone(lambda x: x - 2.0, (0.0, 10.0)) == pytest.approx(2.0, abs=1e-10)
    assert solve_monotone(math.log, (0.1, 10.0)) == pytest.approx(1.0, abs=1e-10)


def test_solve_monotone_student_t_population_root():
    nu0 = 4.0
    target = 1.0 + (math.log(nu0 / 2) - digamma(nu0 / 2))  # E[1/W] + E[log W] under inv-gamma(2, 2)
    root = solve_monotone(lambda v: math.log(v / 2) + 1 - digamma(v / 2) - target, (0.1, 200.0))
    assert root == pytest.approx(4.0, rel=1e-8)


def test_solve_monotone_expands_and_fails():
    assert solve_monotone(lambda x: x - 1000.0, (1.0, 2.0)) == pytest.approx(1000.0)
    assert solve_monotone(lambda x: x + 50.0, (-1.0, 1.0)) == pytest.approx(-50.0)
    with pytest.raises(BracketError):
        solve_monotone(lambda x: 1.0, (0.0, 1.0))
    with pytest.raises(BracketError):
        solve_monotone(lambda x: x - 1e9, (1.0, 2.0), max_expand=3)
    with pytest.raises(ValueError):
        solve_monotone(lambda x: x, (1.0, 1.0))

import math

import numpy as np
import pytest

from skewtensor import distributions as dist
from skewtensor.distributions import FamilyParams, mean_w
from skewtensor.family import Family
from skewtensor.simulate import (
    PROFILES,
    StudyRow,
    StudySpec,
    calibrate_snr,
    gen_random_spd,
    image_like_truth,
    random_truth,
    relative_error,
    relative_error_kron,
    run_study,
    simulate_dataset,
    summarize,
    worker_count,
)
from skewtensor.tensor import ScaleSet, kron_chain

from conftest import random_spd


def test_gen_random_spd_examples(rng):
    s = gen_random_spd(1, 10.0, rng)
    assert s.shape == (1, 1) and 1.0 <= s[0, 0] <= 10.0
    np.testing.assert_allclose(gen_random_spd(4, 1.0, rng), np.eye(4), atol=1e-12)
    conds = [np.linalg.cond(gen_random_spd(5, 10.0, rng)) for _ in range(1000)]
    assert max(conds) <= 10.0 + 1e-9
    np.linalg.cholesky(gen_random_spd(6, 10.0, rng))
    with pytest.raises(ValueError):
        gen_random_spd(3, 0.5, rng)


def test_relative_error_examples(rng):
    t = rng.standard_normal((4, 4))
    assert relative_error(t, t) == 0.0
    assert relative_error(2 * t, t) == pytest.approx(1.0)
    e = rng.standard_normal((4, 4))
    assert relative_error(e, t) == pytest.approx(np.linalg.norm(e - t) / np.linalg.norm(t), rel=1e-12)
    with pytest.raises(ValueError):
        relative_error(t, np.zeros((4, 4)))


def test_relative_error_kron_dense_oracle(rng):
    est = [random_spd(d, rng) for d in (2, 3, 2)]
    tru = [random_spd(d, rng) for d in (2, 3, 2)]
    dense = relative_error(kron_chain(est), kron_chain(tru))
    assert relative_error_kron(est, tru) == pytest.approx(dense, rel=1e-12)
    assert relative_error_kron(tru, tru) == pytest.approx(0.0, abs=1e-7)
    assert relative_error_kron([2 * s if i == 0 else s for i, s in enumerate(tru)], tru) == pytest.approx(1.0)


def test_relative_error_kron_rescaling_invariance(rng):
    est = [random_spd(d, rng) for d in (3, 3, 3)]
    tru = [random_spd(d, rng) for d in (3, 3, 3)]
    scaled = [tru[0] * 5.0, tru[1] / 2.0, tru[2] / 2.5]
    assert relative_error_kron(est, scaled) == pytest.approx(relative_error_kron(est, tru), rel=1e-12)


def test_relative_error_kron_large_dims_finite(rng):
    big = [gen_random_spd(17, 10.0, rng) for _ in range(3)]
    other = [gen_random_spd(17, 10.0, rng) for _ in range(3)]
    v = relative_error_kron(other, big)
    assert math.isfinite(v) and v > 0


def test_snr_calibration(rng):
    p = random_truth("st", (3, 4), rng, snr=0.5, skew_snr=0.25)
    noise = mean_w(p) * np.prod([np.trace(s) for s in p.scales])
    assert np.sum(p.m**2) / noise == pytest.approx(0.5)
    assert np.sum(p.a**2) / noise == pytest.approx(0.25)
    q = calibrate_snr(p, 2.0)
    assert np.sum(q.m**2) / noise == pytest.approx(2.0)
    n = random_truth("normal", (3, 4), rng)
    assert not n.a.any()


def test_simulate_dataset_examples():
    p = FamilyParams("normal", np.zeros((2, 2)), ScaleSet.identity((2, 2)))
    x = simulate_dataset(p, 50000, np.random.default_rng(0)).reshape(-1, 4)
    np.testing.assert_allclose(np.cov(x.T), np.eye(4), atol=0.03)
    t = random_truth("st", (2, 2), np.random.default_rng(1))
    a = simulate_dataset(t, 10, np.random.default_rng(2))
    b = simulate_dataset(t, 10, np.random.default_rng(2))
    assert a.tobytes() == b.tobytes()


def test_simulate_dataset_skew_t_mean():
    t = random_truth("st", (2, 2), np.random.default_rng(4), scalars={"nu": 4.0}, skew_snr=2.0)
    n = 10**5
    x = simulate_dataset(t, n, np.random.default_rng(5)).reshape(n, -1)
    se = x.std(axis=0) / math.sqrt(n)
    assert np.all(np.abs(x.mean(axis=0) - (t.m + 2 * t.a).reshape(-1)) < 4 * se)


def test_image_like_truth(rng):
    p = image_like_truth(5, 4, rng)
    assert p.dims == (5, 4, 3) and p.family is Family.NIG
    assert np.all(p.a >= 0)
    x = dist.sample(p, 3, rng)
    assert x.shape == (3, 5, 4, 3)


def test_spec_validation():
    with pytest.raises(ValueError):
        StudySpec("st", [(2, 2)], [10], reps=0)
    with pytest.raises(ValueError):
        StudySpec("st", [(2, 2)], [10], reps=1, snr=0)
    with pytest.raises(ValueError):
        StudySpec.from_profile("huge")
    desk = StudySpec.from_profile("desk")
    assert desk.dims_grid == ((4, 4, 4), (8, 8, 8)) and desk.n_grid == (50, 100) and desk.reps == 20
    full = StudySpec.from_profile("full")
    assert (17, 17, 17) in full.dims_grid and full.reps == 100
    assert PROFILES["full"]["n_grid"] == [50, 100, 150]


def small_spec(**kw):
    base = dict(family_true="st", dims_grid=[(2, 2, 2)], n_grid=[30], reps=1, seed=3, max_iter=15)
    base.update(kw)
    return StudySpec(**base)


def test_run_study_one_row_per_family():
    rows = run_study(small_spec())
    assert [r.family_fit for r in rows] == [f.value for f in Family]
    for r in rows:
        assert r.rel_err_kron >= 0 and r.N == 30 and r.dims == "2x2x2" and r.rep == 0
        assert r.error == "" and r.max_loglik_drop == 0.0
        assert r.stop_reason in ("converged", "max_iter", "guard")


def test_run_study_deterministic():
    strip = lambda rows: [{**r.__dict__, "wall_time_sec": 0} for r in rows]  # noqa: E731
    a = run_study(small_spec(reps=2, families=("normal", "nig")))
    b = run_study(small_spec(reps=2, families=("normal", "nig")))
    assert strip(a) == strip(b)
    c = run_study(small_spec(reps=2, families=("normal", "nig"), seed=4))
    assert strip(a) != strip(c)


def test_summarize():
    rows = [StudyRow("st", "nig", "2x2", 10, i, 0.1, v, 3, True, "converged", 1.0, 1.0, 0.0, 0.0)
            for i, v in enumerate([1.0, 2.0, 3.0, math.nan])]
    s = summarize(rows)[("2x2", 10, "nig")]
    assert s["median"] == 2.0 and s["mean"] == 2.0 and s["n"] == 3


def test_worker_count(monkeypatch):
    monkeypatch.setenv("SKEWTENSOR_THREADS", "1")
    assert worker_count(8) == 1
    monkeypatch.setenv("SKEWTENSOR_THREADS", "x")
    with pytest.raises(ValueError):
        worker_count()
    monkeypatch.delenv("SKEWTENSOR_THREADS")
    assert worker_count(1) == 1

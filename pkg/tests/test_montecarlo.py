from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import stats

from spectral_edgeworth import montecarlo as mc
from spectral_edgeworth import oracle
from spectral_edgeworth.models import (
    CircleMapSpec,
    MarkovSftSpec,
    RmpSpec,
    build_circle_map,
    build_model,
)
from spectral_edgeworth.perturb import lyapunov, sigma2
from spectral_edgeworth.polyexp import GaussianBump
from spectral_edgeworth.rng import mix64, normalize_seed, stream_key, uniforms, word

M64 = (1 << 64) - 1


def _mix_ref(z: int) -> int:
    # SplitMix64 finalizer in Python integers
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & M64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & M64
    return z ^ (z >> 31)


def test_mix64_matches_reference():
    for z in (0, 1, 0x9E3779B97F4A7C15, M64, 123456789):
        assert int(mix64(np.uint64(z))) == _mix_ref(z)
    # first output of SplitMix64 seeded with 0
    assert _mix_ref(0x9E3779B97F4A7C15) == 0xE220A8397B1DCDAF


def test_word_is_counter_function():
    # keys cross the jit boundary as Python ints; pass them back as uint64
    k = int(stream_key(np.uint64(7), np.uint64(3)))
    key = np.uint64(k)
    for c in (0, 1, 99):
        assert int(word(key, c)) == _mix_ref((k + (c + 1) * 0x9E3779B97F4A7C15) & M64)


def test_uniforms_look_uniform():
    u = uniforms(2024, 0, 100000)
    assert u.min() >= 0 and u.max() < 1
    assert stats.kstest(u, "uniform").pvalue > 1e-3
    assert not np.array_equal(u[:100], uniforms(2024, 1, 100))


def test_seed_required():
    with pytest.raises(ValueError):
        normalize_seed(None)
    assert normalize_seed(-1) == M64


# ---------------------------------------------------------------------------
# Markov chains
# ---------------------------------------------------------------------------


def test_zero_observable_sums():
    m = build_model(MarkovSftSpec.from_transition([[0.5, 0.5], [0.3, 0.7]], np.zeros((2, 2))))
    b = mc.sample_markov(m, 50, 300, seed=1)
    assert np.all(b.sums == 0)


def test_fair_coin_moments(fair_coin):
    b = mc.sample_markov(fair_coin, 100, 20000, seed=5)
    assert set(np.unique(b.sums % 2)) == {0.0}
    mean, se = mc.jackknife_mean(b.sums)
    assert abs(mean) < 4 * se
    assert np.var(b.sums) / 100 == pytest.approx(1.0, rel=0.05)


def test_chain2_pmf_against_exact_law(chain2):
    n, trials = 64, 40000
    b = mc.sample_markov(chain2, n, trials, seed=11, threads=4)
    d = oracle.exact_lattice_dist(chain2, n)
    k = b.sums.astype(int)
    counts = np.bincount(k - d.support[0], minlength=d.support.size)
    expected = trials * d.pmf
    # pool cells with fewer than 10 expected counts into the two tails
    core = expected >= 10
    lo, hi = np.argmax(core), core.size - np.argmax(core[::-1])
    obs = np.r_[counts[:lo].sum(), counts[lo:hi], counts[hi:].sum()]
    exp = np.r_[expected[:lo].sum(), expected[lo:hi], expected[hi:].sum()]
    exp *= obs.sum() / exp.sum()
    assert stats.chisquare(obs, exp).pvalue > 1e-3


def test_dkw_band_chain3(chain3):
    n, trials = 256, 20000
    b = mc.sample_markov(chain3, n, trials, seed=3, threads=4)
    z = np.sort(b.centred() / math.sqrt(n))
    x = np.linspace(-6, 6, 61)
    F = oracle.cdf_gil_pelaez(chain3, n, x).cdf
    emp = np.searchsorted(z, x, side="right") / trials
    eps = math.sqrt(math.log(2 / 0.01) / (2 * trials))
    assert np.max(np.abs(emp - F)) <= eps


def test_seed_and_thread_reproducibility(chain3):
    a = mc.sample_markov(chain3, 40, 10000, seed=99, threads=1)
    b = mc.sample_markov(chain3, 40, 10000, seed=99, threads=4)
    c = mc.sample_markov(chain3, 40, 10000, seed=99, threads=1)
    assert a.sums.tobytes() == b.sums.tobytes() == c.sums.tobytes()
    assert np.array_equal(a.start, b.start) and np.array_equal(a.end, b.end)
    d = mc.sample_markov(chain3, 40, 10000, seed=100)
    assert not np.array_equal(a.sums, d.sums)


def test_sample_batch_output(tmp_path, chain2):
    b = mc.sample(chain2, 5, 3, seed=1)
    assert b.to_csv().splitlines()[0] == "trial,S_n,start,end"
    assert len(b.to_csv().splitlines()) == 4
    b.write(str(tmp_path / "s.csv"))
    assert (tmp_path / "s.json").exists()
    assert b.sidecar()["model_hash"] == chain2.model_hash()


def test_markov_sampler_rejects_rmp(rmp):
    with pytest.raises(ValueError):
        mc.sample_markov(rmp, 5, 3, seed=1)


# ---------------------------------------------------------------------------
# Circle maps
# ---------------------------------------------------------------------------


def test_circle_variance(doubling):
    # cos(2 pi 2^k x) are orthogonal under Lebesgue, so Var S_n = n / 2 exactly
    b = mc.sample_circle(doubling, 200, 20000, seed=4, threads=4)
    assert np.var(b.sums) / 200 == pytest.approx(0.5, rel=0.05)
    mean, se = mc.jackknife_mean(b.sums)
    assert abs(mean) < 4 * se


def test_circle_forward_matches_backward_in_law(doubling):
    f = mc.sample_circle(doubling, 20, 20000, seed=8, method="forward")
    k = mc.sample_circle(doubling, 20, 20000, seed=9, method="backward")
    assert stats.ks_2samp(f.sums, k.sums).pvalue > 1e-3
    with pytest.raises(ValueError):
        mc.sample_circle(doubling, 41, 10, seed=1, method="forward")
    with pytest.raises(ValueError):
        mc.sample_circle(doubling, 4, 10, seed=1, method="sideways")


def test_circle_zero_observable():
    m = build_circle_map(CircleMapSpec(2, (), (), 16, 6))
    assert np.all(mc.sample_circle(m, 30, 100, seed=1).sums == 0)


# ---------------------------------------------------------------------------
# Random matrix products
# ---------------------------------------------------------------------------


def test_rmp_identity_and_diagonal():
    b = mc.sample_rmp(RmpSpec((np.eye(2),), (1.0,)), 0.3, 100, 50, seed=1)
    assert np.max(np.abs(b.sums)) < 1e-12
    b = mc.sample_rmp(RmpSpec((np.diag([2.0, 0.5]),), (1.0,)), 0.0, 100, 50, seed=1)
    assert np.allclose(b.sums, 100 * math.log(2), rtol=1e-13)


def test_rmp_lyapunov_within_standard_errors(rmp):
    lam = lyapunov(rmp)
    n = 200
    b = mc.sample_rmp(rmp.spec, None, n, 20000, seed=21, threads=4, burn_in=1000)
    mean, se = mc.jackknife_mean(b.sums / n)
    assert abs(mean - lam) <= 3 * se
    assert np.var(b.sums) / n == pytest.approx(sigma2(rmp), rel=0.15)


# ---------------------------------------------------------------------------
# Estimators
# ---------------------------------------------------------------------------


def test_jackknife_mean():
    v = np.array([1.0, 2.0, 3.0, 4.0])
    mean, se = mc.jackknife_mean(v)
    assert mean == 2.5
    # the jackknife SE of a mean equals the usual s / sqrt(N)
    assert se == pytest.approx(np.std(v, ddof=1) / 2, abs=1e-15)
    assert math.isnan(mc.jackknife_mean(np.array([1.0]))[1])


def test_mlclt_estimator(chain2):
    n = 32
    b = mc.sample_markov(chain2, n, 40000, seed=12)
    psi = np.array([1.5, 0.25])
    val, se = mc.mlclt_estimator(b, psi=psi)
    # E[psi(x_0)] = 1 for this pi-mean-one psi
    assert abs(val - 1) <= 4 * se
    g = GaussianBump(0.0, 2.0)
    val, se = mc.mlclt_estimator(b, g=g)
    assert abs(val - oracle.exact_mlclt(chain2, n, g)) <= 4 * se

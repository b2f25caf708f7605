from __future__ import annotations

import functools
from types import SimpleNamespace

import numpy as np
import pytest
from conftest import bundled_model, max_abs
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import ndtr

from spectral_edgeworth import oracle as oc
from spectral_edgeworth.errors import NotLattice, ResidualImaginary, TailBoundExceeded
from spectral_edgeworth.perturb import lambda_jet_rs
from spectral_edgeworth.polyexp import GaussianBump, LatticeSequence

# ---------------------------------------------------------------------------
# Characteristic functions
# ---------------------------------------------------------------------------


def test_charfn_chain2_dynamic_programming(chain2):
    # 40-digit dynamic programming over path weights from the stationary start
    got = oc.exact_charfn(chain2, 30, 0.7)
    want = complex(-0.000537985308250923956, 0.000034623758984185759739)
    assert abs(got - want) < 1e-15


def test_charfn_chain2_brute_force(chain2):
    # literal sum over all 2^13 state paths
    got = oc.exact_charfn(chain2, 12, 0.7)
    assert abs(got - complex(0.016801632502374338471, -0.045021895507131558187)) < 1e-14


def test_charfn_routes_agree(chain3):
    for s in (0.0, 0.4, 2.3):
        a = oc.exact_charfn(chain3, 57, s)
        b = oc.exact_charfn_iterated(chain3, 57, s)
        assert abs(a - b) < 1e-13
    assert abs(oc.exact_charfn(chain3, 57, 0.0) - 1) < 1e-13


def test_iid_charfn_is_nth_power(bern03):
    s = np.linspace(-3, 3, 13)
    single = 0.7 * np.exp(-0.3j * s) + 0.3 * np.exp(0.7j * s)
    assert max_abs(oc.exact_charfn(bern03, 7, s) - single**7) < 1e-14
    raw = 0.7 + 0.3 * np.exp(1j * s)
    assert max_abs(oc.exact_charfn(bern03, 7, s, centred=False) - raw**7) < 1e-14


# ---------------------------------------------------------------------------
# Lattice laws
# ---------------------------------------------------------------------------


def test_fair_coin_laws(fair_coin):
    d1 = oc.exact_lattice_dist(fair_coin, 1)
    assert d1.support.tolist() == [-1, 0, 1]
    assert np.allclose(d1.pmf, [0.5, 0, 0.5], atol=1e-15)
    d2 = oc.exact_lattice_dist(fair_coin, 2)
    assert np.allclose(d2.pmf, [0.25, 0, 0.5, 0, 0.25], atol=1e-15)
    assert d2.at([-5, 0, 2]).tolist() == pytest.approx([0.0, 0.5, 0.25], abs=1e-15)


def test_chain2_law_matches_enumeration(chain2):
    d = oc.exact_lattice_dist(chain2, 10)
    brute = oc.enumerate_paths_dist(chain2, 10)
    for k, p in brute.items():
        assert abs(d.at(k) - p) < 1e-14
    missing = set(d.support.tolist()) - set(brute)
    assert all(abs(d.at(k)) < 1e-14 for k in missing)


def test_binomial_law(bern03):
    from scipy.stats import binom

    d = oc.exact_lattice_dist(bern03, 40)
    assert max_abs(d.pmf - binom.pmf(d.support, 40, 0.3)) < 1e-14


def test_lattice_law_serialization(fair_coin):
    d = oc.exact_lattice_dist(fair_coin, 1)
    assert d.to_json()["support"] == [-1, 0, 1]
    assert d.to_csv().splitlines()[0] == "k,pmf"


def test_non_lattice_rejected(chain3):
    with pytest.raises(NotLattice):
        oc.exact_lattice_dist(chain3, 4)


@functools.cache
def _chain2():
    return bundled_model("chain2_lattice.cfg")


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 60))
def test_lattice_law_is_a_distribution(n):
    d = oc.exact_lattice_dist(_chain2(), n)
    assert abs(d.pmf.sum() - 1) < 1e-12
    assert d.pmf.min() > -1e-14


# ---------------------------------------------------------------------------
# Gil-Pelaez
# ---------------------------------------------------------------------------


def test_gil_pelaez_gaussian():
    x = np.linspace(-4, 4, 17)
    res = oc.gil_pelaez(lambda t: np.exp(-t * t / 2), x, 12.0, 0.25, tail=0.0)
    assert max_abs(res.cdf - ndtr(x)) < 1e-12
    assert res.cdf[8] == pytest.approx(0.5, abs=1e-15)  # symmetric law
    far = oc.gil_pelaez(lambda t: np.exp(-t * t / 2), [-9.0], 12.0, 0.25)
    assert abs(far.cdf[0]) < 1e-12


def test_gil_pelaez_shifted_gaussian():
    x = np.linspace(-3, 3, 7)
    res = oc.gil_pelaez(lambda t: np.exp(0.5j * t - t * t / 2), x, 12.0, 0.25)
    assert max_abs(res.cdf - ndtr(x - 0.5)) < 1e-12


def test_cdf_chain3_is_a_cdf(chain3):
    from spectral_edgeworth.perturb import sigma2

    x = np.linspace(-8, 8, 33)
    res = oc.cdf_gil_pelaez(chain3, 256, x)
    assert res.error < 1e-7
    assert np.all(np.diff(res.cdf) >= -1e-9)
    assert res.cdf[0] < 1e-6 and res.cdf[-1] > 1 - 1e-6
    sd = np.sqrt(sigma2(chain3))
    assert max_abs(res.cdf - ndtr(x / sd)) < 0.05


def test_cdf_lattice_has_no_tail_bound(chain2):
    with pytest.raises(TailBoundExceeded):
        oc.cdf_gil_pelaez(chain2, 64, [0.0])


# ---------------------------------------------------------------------------
# Cumulants and classical Edgeworth
# ---------------------------------------------------------------------------


def test_cumulants_of_cos(fair_coin):
    c = oc.cumulants_from_jet(lambda_jet_rs(fair_coin, 4))
    assert c.kappa == pytest.approx([1.0, 0.0, -2.0], abs=1e-12)


def test_bernoulli_cumulants(bern03):
    c = oc.cumulants_from_jet(lambda_jet_rs(bern03, 4))
    # p q, p q (q - p), p q (1 - 6 p q) at p = 0.3
    assert c.kappa == pytest.approx([0.21, 0.084, -0.0546], abs=1e-12)
    assert c[5] == 0.0


def test_residual_imaginary():
    fake = SimpleNamespace(coeffs=np.array([1, 0, -0.5, 0.1], dtype=complex))
    with pytest.raises(ResidualImaginary):
        oc.cumulants_from_jet(fake)


def test_classical_edgeworth_first_term():
    assert max_abs(oc.classical_iid_edgeworth(oc.CumulantVector([1.0, 0.0, 0.0]), 1)[0].coef) == 0
    gamma = 0.7
    P1 = oc.classical_iid_edgeworth(oc.CumulantVector([1.0, gamma, 0.0]), 1)[0]
    x = np.linspace(-3, 3, 9)
    assert max_abs(P1(x) + gamma / 6 * (x * x - 1)) < 1e-14


def test_classical_edgeworth_second_term():
    # standardised: P_2 = -x [ (k4/24)(x^2 - 3) + (k3^2/72)(x^4 - 10 x^2 + 15) ]
    k3, k4 = 0.4, -0.3
    P2 = oc.classical_iid_edgeworth(oc.CumulantVector([1.0, k3, k4]), 2)[1]
    x = np.linspace(-3, 3, 9)
    want = -x * (k4 / 24 * (x**2 - 3) + k3**2 / 72 * (x**4 - 10 * x**2 + 15))
    assert max_abs(P2(x) - want) < 1e-14


def test_cumulant_vector_validation():
    with pytest.raises(ValueError):
        oc.CumulantVector([0.0, 1.0])
    with pytest.raises(ValueError):
        oc.classical_iid_edgeworth(oc.CumulantVector([1.0, 0.2]), 2)


# ---------------------------------------------------------------------------
# Moments and MLCLT functional
# ---------------------------------------------------------------------------


def test_exact_variance_iid(bern03):
    for n in (1, 5, 40):
        assert oc.exact_variance(bern03, n) == pytest.approx(0.21 * n, rel=1e-13)


def test_exact_mlclt_lattice_and_bump_agree(chain2):
    n = 24
    d = oc.exact_lattice_dist(chain2, n)
    ind = LatticeSequence(((0, 1.0),))
    assert oc.exact_mlclt(chain2, n, ind) == pytest.approx(float(d.at(0)), abs=1e-15)
    g = GaussianBump(0.5, 1.0)
    direct = float(np.sum(d.pmf * g(d.support.astype(float))))
    assert oc.exact_mlclt(chain2, n, g) == pytest.approx(direct, abs=1e-12)


def test_weighted_cdf_carries_total_mass(chain3, chain3_cfg):
    from spectral_edgeworth.config import normalized_psi

    psi = normalized_psi(chain3_cfg.psi, chain3.pi)
    xi = np.asarray(chain3_cfg.xi)
    mass = oc.exact_charfn(chain3, 128, 0.0, psi, xi).real
    assert abs(mass - chain3.pi @ xi) < 1e-10
    res = oc.cdf_gil_pelaez(chain3, 128, [-40.0, 0.0, 40.0], psi, xi)
    assert abs(res.cdf[0]) < 1e-7 and abs(res.cdf[2] - mass) < 1e-7

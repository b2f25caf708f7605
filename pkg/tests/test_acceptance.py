"""Acceptance suite: one test per criterion, each printing a single PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v`` (add ``-s`` to see the lines
interleaved with pytest's own output; they are printed either way).
"""

from __future__ import annotations

import math
import os
import time
from fractions import Fraction
from math import comb

import numpy as np
import pytest
from conftest import bundled_model, load_bundled

from spectral_edgeworth import montecarlo as mc
from spectral_edgeworth import perturb
from spectral_edgeworth import validate as vd
from spectral_edgeworth.cli import main as cli_main
from spectral_edgeworth.config import bundled_config_path, normalized_psi
from spectral_edgeworth.errors import ZeroVariance
from spectral_edgeworth.oracle import (
    CumulantVector,
    classical_iid_edgeworth,
    variance_rate,
)
from spectral_edgeworth.polyexp import gaussian_mean

THREADS = os.cpu_count() or 1


@pytest.fixture
def verdict(capsys):
    """Print one line per criterion, then fail the test if the criterion failed."""

    def emit(num, title, ok, detail, elapsed, limit=None):
        in_time = limit is None or elapsed <= limit
        status = "PASS" if ok and in_time else "FAIL"
        budget = f"{elapsed:.2f}s" + (f" of {limit:g}s" if limit is not None else "")
        with capsys.disabled():
            print(f"\nACCEPTANCE {num:>2} {status} {title}: {detail} [{budget}]")
        assert ok, detail
        assert in_time, f"took {elapsed:.1f}s, budget {limit}s"

    return emit


def _coef(p) -> np.ndarray:
    return np.asarray(p.coef, dtype=complex)


def _pad_diff(a, b) -> float:
    m = max(len(a), len(b))
    return float(np.max(np.abs(np.pad(a, (0, m - len(a))) - np.pad(b, (0, m - len(b))))))


def _bernoulli_cumulants(p: Fraction, kmax: int) -> list[Fraction]:
    """Exact cumulants of a centred Bernoulli(p) from its central moments."""
    q = 1 - p
    m = [Fraction(1)] + [q * (-p) ** k + p * q**k for k in range(1, kmax + 1)]
    kap = [Fraction(0)] * (kmax + 1)
    for n in range(1, kmax + 1):
        kap[n] = m[n] - sum(comb(n - 1, k - 1) * kap[k] * m[n - k] for k in range(1, n))
    return kap


# ---------------------------------------------------------------------------
# 1. i.i.d. reduction
# ---------------------------------------------------------------------------


def test_01_iid_reduction(verdict):
    t0 = time.perf_counter()
    model = bundled_model("bernoulli_p03.cfg")
    es = perturb.expand_model(model, 3)
    kap = _bernoulli_cumulants(Fraction(3, 10), 5)
    classical = classical_iid_edgeworth(CumulantVector([float(k) for k in kap[2:6]]), 3)
    worst = max(_pad_diff(_coef(es.P[j]), np.asarray(classical[j - 1].coef)) for j in range(1, 4))
    elapsed = time.perf_counter() - t0
    verdict(1, "iid reduction P_1..P_3 vs classical", worst <= 1e-8, f"max coefficient diff {worst:.2e} (tol 1e-8)", elapsed, 1.0)


# ---------------------------------------------------------------------------
# 2. Jet cross-validation
# ---------------------------------------------------------------------------

JET_MODELS = ["chain2_lattice.cfg", "chain3_skewed.cfg", "doubling_cos.cfg", "bernoulli_p03.cfg"]


def test_02_jet_cross_validation(verdict):
    t0 = time.perf_counter()
    worst = {}
    for name in JET_MODELS:
        _, _, rel = perturb.cross_check_jets(bundled_model(name), 5)
        worst[name] = rel
    elapsed = time.perf_counter() - t0
    top = max(worst.values())
    detail = ", ".join(f"{k.split('.')[0]} {v:.1e}" for k, v in worst.items())
    verdict(2, "jet RS vs contour, order 5", top <= 1e-7, f"{detail} (tol 1e-7)", elapsed, 5.0)


# ---------------------------------------------------------------------------
# 3. Variance consistency
# ---------------------------------------------------------------------------


def test_03_variance_consistency(verdict):
    t0 = time.perf_counter()
    chain = bundled_model("chain2_lattice.cfg")
    s_jet = perturb.sigma2(chain)
    gk = perturb.green_kubo(chain, reference=s_jet)
    s_gk = gk.standard if gk.convention in ("standard", "both") else gk.single
    s_var = variance_rate(chain)
    spread = max(abs(s_jet - s_gk), abs(s_jet - s_var), abs(s_gk - s_var)) / s_jet
    s_doubling = perturb.sigma2(bundled_model("doubling_cos.cfg"))
    ok = spread <= 1e-4 and abs(s_doubling - 0.5) <= 1e-6
    elapsed = time.perf_counter() - t0
    detail = (
        f"chain2 jet {s_jet:.10f} GK {s_gk:.10f} Var/n {s_var:.10f} spread {spread:.1e} (tol 1e-4); "
        f"doubling {s_doubling:.10f} (0.5 +- 1e-6)"
    )
    verdict(3, "variance consistency", ok, detail, elapsed, 10.0)


# ---------------------------------------------------------------------------
# 4. Lattice MLCLT rates
# ---------------------------------------------------------------------------


def test_04_lattice_pmf_rates(verdict):
    t0 = time.perf_counter()
    chain = bundled_model("chain2_lattice.cfg")
    es = perturb.expand_model(chain, 2)
    ns = [2**k for k in range(7, 14)]
    slopes = [vd.sup_error_pmf(chain, vd.truncate(es, r), ns).slope for r in range(3)]
    ok = all(abs(s + (r + 1) / 2) <= 0.35 for r, s in enumerate(slopes))
    elapsed = time.perf_counter() - t0
    detail = ", ".join(f"r={r} slope {s:.3f} (target {-(r + 1) / 2})" for r, s in enumerate(slopes)) + " (tol 0.35)"
    verdict(4, "lattice pmf rates", ok, detail, elapsed, 60.0)


# ---------------------------------------------------------------------------
# 5. Edgeworth CDF
# ---------------------------------------------------------------------------


def test_05_edgeworth_cdf(verdict):
    t0 = time.perf_counter()
    chain = bundled_model("chain3_skewed.cfg")
    es = perturb.expand_model(chain, 1)
    ns = [2**k for k in range(8, 13)]
    fit = vd.sup_error_cdf(chain, es, ns)
    margins = [g - e for e, g in zip(fit.errors, fit.extra["gaussian_errors"])]
    ok = fit.slope <= -0.65 and min(margins) > 0
    elapsed = time.perf_counter() - t0
    detail = f"order-1 slope {fit.slope:.3f} (<= -0.65); min margin over Gaussian {min(margins):.2e} (> 0) for n in 2^8..2^12"
    verdict(5, "Edgeworth CDF on skewed chain", ok, detail, elapsed, 90.0)


# ---------------------------------------------------------------------------
# 6. Non-arithmeticity diagnostics
# ---------------------------------------------------------------------------


def test_06_radius_diagnostics(verdict):
    t0 = time.perf_counter()
    grid = np.linspace(0.1 * np.pi, np.pi, 91)
    top = max(p.radius for p in perturb.radius_scan(bundled_model("chain2_lattice.cfg"), grid, threads=THREADS))
    const = perturb.radius_scan(bundled_model("constant_obs.cfg"), grid, threads=THREADS)
    dev = max(abs(p.radius - 1) for p in const)
    ok = top < 1 - 1e-6 and dev < 1e-12
    elapsed = time.perf_counter() - t0
    detail = f"aperiodic chain max radius {top:.6f} (< 1 - 1e-6); constant observable max |radius - 1| {dev:.1e}"
    verdict(6, "radius scans", ok, detail, elapsed, 5.0)


# ---------------------------------------------------------------------------
# 7. Coboundary detection
# ---------------------------------------------------------------------------


def test_07_coboundary(verdict):
    t0 = time.perf_counter()
    raised = None
    try:
        perturb.sigma2(bundled_model("coboundary.cfg"))
    except ZeroVariance as exc:
        raised = exc.to_dict()["code"]
    elapsed = time.perf_counter() - t0
    verdict(7, "coboundary detection", raised == "ZERO_VARIANCE", f"raised {raised}", elapsed, 1.0)


# ---------------------------------------------------------------------------
# 8. Random matrix products
# ---------------------------------------------------------------------------


def test_08_random_matrix_products(verdict):
    t0 = time.perf_counter()
    cfg = load_bundled("rmp_shear_diag.cfg")
    model = bundled_model("rmp_shear_diag.cfg")
    lam = perturb.lyapunov(model)
    lb = mc.sample_rmp(model.spec, None, 1000, 100_000, cfg.seed, THREADS, burn_in=1000)
    mean, se = mc.jackknife_mean(lb.sums / 1000)
    z = abs(lam - mean) / se
    es = perturb.expand_model(model, 1)
    n = 10_000
    b = mc.sample_rmp(model.spec, None, n, 1_000_000, cfg.seed + 1, THREADS)
    res = vd.sup_error_cdf_mc({n: (b.sums - n * lam) / math.sqrt(n)}, es)
    e1, g = res["errors"][0], res["gaussian_errors"][0]
    ok = z <= 3 and es.sigma2 > 0 and e1 < g
    elapsed = time.perf_counter() - t0
    detail = (
        f"lambda_1 {lam:.6f} vs MC {mean:.6f} +- {se:.1e} ({z:.2f} SE, <= 3); sigma2 {es.sigma2:.5f}; "
        f"n=1e4 sup error order-1 {e1:.2e} vs Gaussian {g:.2e}"
    )
    verdict(8, "random matrix products", ok, detail, elapsed, 120.0)


# ---------------------------------------------------------------------------
# 9. Polynomial identities
# ---------------------------------------------------------------------------


def _expansion_sets():
    out = {}
    bern = bundled_model("bernoulli_p03.cfg")
    out["bernoulli r=3"] = perturb.expand_model(bern, 3)
    chain2 = bundled_model("chain2_lattice.cfg")
    out["chain2 r=2"] = perturb.expand_model(chain2, 2)
    cfg3 = load_bundled("chain3_skewed.cfg")
    chain3 = bundled_model("chain3_skewed.cfg")
    out["chain3 r=2"] = perturb.expand_model(chain3, 2)
    out["chain3 weighted r=2"] = perturb.expand_model(chain3, 2, normalized_psi(cfg3.psi, chain3.pi), np.asarray(cfg3.xi))
    out["doubling r=2"] = perturb.expand_model(bundled_model("doubling_cos.cfg"), 2)
    out["rmp r=1"] = perturb.expand_model(bundled_model("rmp_shear_diag.cfg"), 1)
    return out


def _identity_residuals(es) -> dict:
    g = es.gaussian
    P = np.polynomial.polynomial
    res = {"ft": 0.0, "ode": 0.0, "mean": 0.0, "parity": 0.0, "real": 0.0}
    L = 14 * g.sigma
    xs, w = np.polynomial.legendre.leggauss(400)
    xs, w = xs * L, w * L
    x = np.arange(-5, 5.01, 0.25) * g.sigma
    for j in range(es.order + 1):
        A, R = _coef(es.A[j]), _coef(es.R[j])
        scale = max(1.0, float(np.max(np.abs(R))), float(np.max(np.abs(A))))
        dens = P.polyval(xs, R) * g.density(xs)
        for s in np.linspace(-4, 4, 17) / g.sigma:
            ft = np.sum(w * dens * np.exp(1j * s * xs))
            want = P.polyval(s, A) * math.exp(-0.5 * g.sigma2 * s * s)
            res["ft"] = max(res["ft"], abs(ft - want) / scale)
        for c in (A, R):
            odd = [abs(v) for k, v in enumerate(c) if (k - j) % 2]
            res["parity"] = max(res["parity"], max(odd, default=0.0) / scale)
        if j >= 1:
            Pj = _coef(es.P[j])
            lhs = g.density(x) * (P.polyval(x, P.polyder(Pj)) - x / g.sigma2 * P.polyval(x, Pj))
            rhs = g.density(x) * P.polyval(x, R)
            res["ode"] = max(res["ode"], float(np.max(np.abs(lhs - rhs))) / scale)
            res["mean"] = max(res["mean"], abs(gaussian_mean(es.R[j], g)) / scale)
    for p in es.P[1:] + es.Q:
        res["real"] = max(res["real"], float(np.max(np.abs(_coef(p).imag), initial=0.0)))
    return res


IDENTITY_TOL = {"ft": 1e-8, "ode": 1e-10, "mean": 1e-10, "parity": 1e-10, "real": 1e-9}


def test_09_polynomial_identities(verdict):
    t0 = time.perf_counter()
    worst = dict.fromkeys(IDENTITY_TOL, 0.0)
    for es in _expansion_sets().values():
        for k, v in _identity_residuals(es).items():
            worst[k] = max(worst[k], v)
    ok = all(worst[k] <= IDENTITY_TOL[k] for k in IDENTITY_TOL)
    elapsed = time.perf_counter() - t0
    detail = ", ".join(f"{k} {worst[k]:.1e} (tol {IDENTITY_TOL[k]:g})" for k in IDENTITY_TOL) + " over 6 expansion sets"
    verdict(9, "polynomial identities", ok, detail, elapsed, 5.0)


# ---------------------------------------------------------------------------
# 10. Reproducibility
# ---------------------------------------------------------------------------

SEEDED_RMP = """
[model]
kind = "rmp"
matrices = [[[2.0, 0.0], [0.0, 0.5]], [[1.0, 1.0], [0.0, 1.0]]]
probs = [0.5, 0.5]
grid = 256
x0_angle = 0.7853981633974483

[expansion]
order = 1

[experiment]
n_list = [1000, 2000]
trials = 20000
seed = 777
"""


def _cli_outputs(argv, out_dir) -> tuple[int, dict]:
    code = cli_main(argv + ["--deterministic", "--out", str(out_dir)])
    return code, {p.name: p.read_bytes() for p in sorted(out_dir.iterdir())}


def test_10_reproducibility(verdict, tmp_path):
    t0 = time.perf_counter()
    cfg = tmp_path / "seeded_rmp.cfg"
    cfg.write_text(SEEDED_RMP)
    runs = {}
    for label, config in (("rmp", str(cfg)), ("chain2", bundled_config_path("chain2_lattice.cfg"))):
        for threads in ("1", "8"):
            runs[label, threads] = _cli_outputs(["validate", config, "--threads", threads], tmp_path / f"{label}_{threads}")
    same = all(runs[k, "1"] == runs[k, "8"] for k in ("rmp", "chain2"))
    codes = {k: runs[k, "1"][0] for k in ("rmp", "chain2")}
    ok = same and all(c in (0, 2) for c in codes.values()) and all(b"timestamp" not in runs[k, "1"][1]["report.json"] for k in codes)
    elapsed = time.perf_counter() - t0
    n_files = sum(len(runs[k, "1"][1]) for k in codes)
    detail = f"{n_files} output files byte-identical across 1 and 8 threads: {same}; exit codes {codes}"
    verdict(10, "reproducibility", ok, detail, elapsed)

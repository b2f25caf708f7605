"""Independent ground truth for the spectral pipeline.

Nothing here calls into ``polyexp`` or ``perturb``: characteristic functions
are computed from matrix powers, lattice laws by discrete Fourier inversion,
CDFs by Gil-Pelaez quadrature, and the i.i.d. Edgeworth polynomials from
cumulants and Hermite polynomials.
"""

from __future__ import annotations

import csv
import io
import math
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import Polynomial
from numpy.polynomial import hermite_e as H

from .errors import NotLattice, ResidualImaginary, TailBoundExceeded
from .models import NormalizedModel

# ---------------------------------------------------------------------------
# Characteristic functions
# ---------------------------------------------------------------------------


def _weights(model: NormalizedModel, psi, xi):
    N = model.size
    psi = np.ones(N) if psi is None else np.asarray(psi, dtype=float)
    xi = np.ones(N) if xi is None else np.asarray(xi, dtype=float)
    if model.orientation == "transfer":
        return model.pi * xi, psi
    start = model.start if model.start is not None else model.pi
    return start * psi, xi


def _stacked(model: NormalizedModel, s: np.ndarray, phases: np.ndarray) -> np.ndarray:
    # (S, N, N) twisted matrices for an array of s
    return np.einsum("bij,sbij->sij", model.weights, np.exp(1j * s[:, None, None, None] * phases[None]))


def exact_charfn(model: NormalizedModel, n: int, s, psi=None, xi=None, centred: bool = True, chunk: int = 4096):
    """E[psi e^{i s S_n} xi] by n-th matrix powers (repeated squaring, batched over s)."""
    s_arr = np.atleast_1d(np.asarray(s, dtype=complex))
    a, b = _weights(model, psi, xi)
    phases = model.phases if centred else model.raw_phases
    out = np.empty(s_arr.shape, dtype=complex)
    for lo in range(0, s_arr.size, chunk):
        T = _stacked(model, s_arr[lo : lo + chunk], phases)
        P = np.linalg.matrix_power(T, n)
        out[lo : lo + chunk] = np.einsum("i,sij,j->s", a, P, b)
    return out if np.ndim(s) else out[0]


def exact_charfn_iterated(model: NormalizedModel, n: int, s: float, psi=None, xi=None) -> complex:
    """Same quantity by n explicit matrix-vector products."""
    a, b = _weights(model, psi, xi)
    T = np.einsum("bij,bij->ij", model.weights, np.exp(1j * s * model.phases))
    w = b.astype(complex)
    for _ in range(n):
        w = T @ w
    return complex(a @ w)


# ---------------------------------------------------------------------------
# Exact lattice laws
# ---------------------------------------------------------------------------


@dataclass
class ExactDistribution:
    n: int
    support: np.ndarray
    pmf: np.ndarray

    def __post_init__(self):
        self.support = np.asarray(self.support, dtype=int)
        self.pmf = np.asarray(self.pmf, dtype=float)

    def at(self, k) -> np.ndarray:
        k = np.asarray(k, dtype=int)
        idx = k - self.support[0]
        ok = (idx >= 0) & (idx < self.support.size)
        return np.where(ok, self.pmf[np.clip(idx, 0, self.support.size - 1)], 0.0)

    def to_json(self) -> dict:
        return {"n": self.n, "support": self.support.tolist(), "pmf": self.pmf.tolist()}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["k", "pmf"])
        for k, p in zip(self.support, self.pmf):
            w.writerow([int(k), repr(float(p))])
        return buf.getvalue()


def _integer_phases(model: NormalizedModel) -> np.ndarray:
    if not model.lattice:
        raise NotLattice("exact lattice law needs an integer-valued observable")
    raw = model.raw_phases
    live = model.weights != 0
    r = np.rint(raw)
    if np.max(np.abs(raw - r)[live], initial=0.0) > 1e-9:
        raise NotLattice("observable is not integer-valued")
    return np.where(live, r, 0.0)


def exact_lattice_dist(model: NormalizedModel, n: int, psi=None, xi=None) -> ExactDistribution:
    """P(S_n = k) for the uncentred integer sum, by discrete Fourier inversion.

    The characteristic function is a trigonometric polynomial supported on
    [n lo, n hi], so sampling it at 2^p >= n (hi - lo) + 1 roots of unity
    recovers the law exactly (up to rounding).
    """
    ph = _integer_phases(model)
    live = model.weights != 0
    lo, hi = int(ph[live].min()), int(ph[live].max())
    width = n * (hi - lo) + 1
    nodes = 1 << max(int(math.ceil(math.log2(width))), 0)
    s = 2 * np.pi * np.arange(nodes) / nodes
    a, b = _weights(model, psi, xi)
    # shift phases so the sum lives in [0, n (hi - lo)]
    shifted = np.where(live, ph - lo, 0.0)
    vals = np.empty(nodes, dtype=complex)
    half = nodes // 2 + 1
    for start in range(0, half, 2048):
        sl = s[start:half][:2048]
        T = _stacked(model, sl, shifted)
        vals[start : start + sl.size] = np.einsum("i,sij,j->s", a, np.linalg.matrix_power(T, n), b)
    # conjugate symmetry for real weights
    vals[half:] = np.conj(vals[1 : nodes - half + 1][::-1])
    pmf = np.fft.fft(vals).real / nodes
    pmf = pmf[:width]
    support = np.arange(width) + n * lo
    return ExactDistribution(n, support, pmf)


def enumerate_paths_dist(model: NormalizedModel, n: int) -> dict:
    """Brute-force law of S_n over all state paths (small n, transfer orientation)."""
    ph = _integer_phases(model)
    W = model.L0
    N = model.size
    # x_0 ~ pi, forward transition y -> x has probability pi(x) w(y,x) / pi(y)
    out: dict[int, float] = {}

    def rec(state, depth, total, prob):
        if prob == 0.0:
            return
        if depth == n:
            out[total] = out.get(total, 0.0) + prob
            return
        for x in range(N):
            p = model.pi[x] * W[x, state] / model.pi[state]
            if p > 0:
                rec(x, depth + 1, total + int(ph[0, x, state]), prob * p)

    for y in range(N):
        rec(y, 0, 0, model.pi[y])
    return out


# ---------------------------------------------------------------------------
# Gil-Pelaez inversion
# ---------------------------------------------------------------------------


@dataclass
class GilPelaezResult:
    x: np.ndarray
    cdf: np.ndarray
    error: float
    cutoff: float


_GL_X, _GL_W = np.polynomial.legendre.leggauss(24)


def _panel_integral(f_vals, edges):
    # f_vals: (P, 24, ...) values on the GL nodes of each panel
    half = 0.5 * np.diff(edges)
    return np.einsum("p,k,pk...->...", half, _GL_W, f_vals)


def gil_pelaez(
    charfn: Callable[[np.ndarray], np.ndarray],
    x_grid,
    cutoff: float,
    panel: float,
    tail: float = 0.0,
) -> GilPelaezResult:
    """F(x) = chi(0)/2 - (1/pi) int_0^T Im[e^{-itx} chi(t)] / t dt on composite Gauss-Legendre panels.

    chi(0) is the total mass, which differs from 1 for weighted functionals
    E[psi 1{S <= x} xi].  The error estimate compares panel widths ``panel``
    and ``panel / 2`` and adds the supplied tail bound.
    """
    x = np.asarray(x_grid, dtype=float)
    mass = float(np.real(np.ravel(charfn(np.zeros(1)))[0]))

    def run(h):
        m = max(int(math.ceil(cutoff / h)), 1)
        edges = np.linspace(0.0, cutoff, m + 1)
        mid = 0.5 * (edges[:-1] + edges[1:])
        t = mid[:, None] + 0.5 * np.diff(edges)[:, None] * _GL_X[None, :]
        chi = charfn(t.ravel()).reshape(t.shape)
        integrand = np.imag(np.exp(-1j * t[..., None] * x) * chi[..., None]) / t[..., None]
        return 0.5 * mass - _panel_integral(integrand, edges) / np.pi

    coarse = run(panel)
    fine = run(panel / 2)
    err = float(np.max(np.abs(fine - coarse))) + tail
    return GilPelaezResult(x, fine, err, cutoff)


def cdf_gil_pelaez(
    model: NormalizedModel,
    n: int,
    x_grid,
    psi=None,
    xi=None,
    s_scan: float = 40.0,
    scan_points: int = 8000,
    floor: float = 1e-16,
    target: float = 1e-7,
) -> GilPelaezResult:
    """CDF of S_n / sqrt(n) (centred) at x_grid.

    The truncation point is read off a scan of |chi_n| over raw frequencies
    [0, s_scan]; the tail bound integrates the largest modulus seen beyond
    the cutoff against 1/t up to the end of the scan, plus one more unit of
    that envelope for frequencies past the scan.
    """
    if model.lattice:
        # |chi_n| returns to 1 at every multiple of 2 pi, so no cutoff exists
        raise TailBoundExceeded("lattice characteristic function is periodic", n=n)
    rn = math.sqrt(n)
    s = np.linspace(0.0, s_scan, scan_points + 1)[1:]
    mod = np.abs(exact_charfn(model, n, s, psi, xi))
    suffix = np.maximum.accumulate(mod[::-1])[::-1]
    bound = suffix * np.log(s_scan / s) / math.pi + np.maximum(suffix, floor) / math.pi
    ok = np.nonzero(bound <= 0.1 * target)[0]
    if ok.size == 0:
        raise TailBoundExceeded("characteristic function does not decay on the scan range", n=n)
    cut_idx = int(ok[0])
    s_cut = float(s[cut_idx])
    tail = float(bound[cut_idx])
    chi = lambda t: exact_charfn(model, n, t / rn, psi, xi)
    # 24-point panels of width 1/4 resolve the oscillation of chi for |x| <~ 10
    panel = 0.25
    res = gil_pelaez(chi, x_grid, s_cut * rn, panel, tail)
    if res.error > target:
        res = gil_pelaez(chi, x_grid, s_cut * rn, panel / 4, tail)
    return res


# ---------------------------------------------------------------------------
# Classical i.i.d. Edgeworth polynomials
# ---------------------------------------------------------------------------


@dataclass
class CumulantVector:
    kappa: list  # kappa_2 .. kappa_{m}

    def __post_init__(self):
        if not self.kappa or self.kappa[0] <= 0:
            raise ValueError("kappa_2 must be positive")

    def __getitem__(self, k: int) -> float:
        return self.kappa[k - 2] if 2 <= k < len(self.kappa) + 2 else 0.0


def _series_log(c: np.ndarray) -> np.ndarray:
    f = np.zeros_like(c)
    f[0] = np.log(c[0])
    for k in range(1, c.size):
        f[k] = (c[k] - sum((j / k) * f[j] * c[k - j] for j in range(1, k))) / c[0]
    return f


def cumulants_from_jet(lambda_jet, tol: float = 1e-9) -> CumulantVector:
    """kappa_k = k! [s^k] log lambda(is) / i^k."""
    c = np.asarray(lambda_jet.coeffs, dtype=complex)
    if c.size < 4:
        raise ValueError("need a jet of order >= 3")
    f = _series_log(c)
    kap = np.array([math.factorial(k) * f[k] / 1j**k for k in range(2, c.size)])
    if np.max(np.abs(kap.imag)) > tol:
        raise ResidualImaginary("cumulants have imaginary parts", imag=float(np.max(np.abs(kap.imag))))
    return CumulantVector([float(v) for v in kap.real])


def _compositions(j: int):
    """All (k_1, ..., k_j) with sum m k_m = j."""

    def rec(m, rem):
        if m > j:
            if rem == 0:
                yield ()
            return
        for k in range(rem // m + 1):
            for rest in rec(m + 1, rem - m * k):
                yield (k,) + rest

    yield from rec(1, j)


def _he_in_x(deg: int, sigma: float) -> np.ndarray:
    """Power-basis coefficients of He_deg(x / sigma)."""
    c = H.herme2poly([0] * deg + [1])
    return c / sigma ** np.arange(c.size)


def classical_iid_edgeworth(c: CumulantVector, r: int) -> list[Polynomial]:
    """P_1..P_r of the classical expansion P(S_n / sqrt n <= x) ~ N(x) + n(x) sum P_j(x) n^{-j/2}.

    Density corrections are sum over k with sum m k_m = j of
    prod_m (lambda_{m+2} / (m+2)!)^{k_m} / k_m! He_{j + 2 sum k}(x / sigma),
    lambda_r = kappa_r / sigma^r, and ``-sigma He_{q-1}(x / sigma) n(x)`` is
    an antiderivative of ``He_q(x / sigma) n(x)``.
    """
    if r > len(c.kappa) - 1:
        raise ValueError("not enough cumulants for this order")
    sigma = math.sqrt(c.kappa[0])
    lam = {m: c[m] / sigma**m for m in range(3, r + 3)}
    out = []
    for j in range(1, r + 1):
        poly = np.zeros(3 * j + 1)
        for ks in _compositions(j):
            coef = 1.0
            for m, k in enumerate(ks, start=1):
                coef *= (lam[m + 2] / math.factorial(m + 2)) ** k / math.factorial(k)
            q = j + 2 * sum(ks)
            he = _he_in_x(q - 1, sigma)
            poly[: he.size] += -sigma * coef * he
        out.append(Polynomial(poly).trim(1e-300) if np.any(poly) else Polynomial([0.0]))
    return out


# ---------------------------------------------------------------------------
# Moment oracle
# ---------------------------------------------------------------------------


def exact_variance(model: NormalizedModel, n: int, psi=None, xi=None) -> float:
    """Var(S_n) from the first two s-derivatives of L_s^n at 0, by recursion."""
    a, b = _weights(model, psi, xi)
    L0 = model.L0
    M1 = np.einsum("bij,bij->ij", model.weights, model.phases)
    M2 = np.einsum("bij,bij->ij", model.weights, model.phases**2)
    u = b.astype(float)
    d1 = np.zeros_like(u)
    d2 = np.zeros_like(u)
    for _ in range(n):
        d2 = L0 @ d2 + 2 * M1 @ d1 + M2 @ u
        d1 = L0 @ d1 + M1 @ u
        u = L0 @ u
    mass = a @ u
    m1 = a @ d1 / mass
    m2 = a @ d2 / mass
    return float(m2 - m1 * m1)


def variance_rate(model: NormalizedModel, n: int = 2000) -> float:
    """(Var S_{2n} - Var S_n) / n, which cancels the O(1) boundary term."""
    return (exact_variance(model, 2 * n) - exact_variance(model, n)) / n


# ---------------------------------------------------------------------------
# Exact MLCLT functional
# ---------------------------------------------------------------------------


def exact_mlclt(model: NormalizedModel, n: int, g, psi=None, xi=None, panels: int | None = None) -> float:
    """E[psi g(S_n) xi] for the centred sum.

    Lattice test functions sum against the exact law; continuous ones use
    g(S) = (1/2 pi) int g_hat(s) e^{isS} ds with g_hat decaying like a Gaussian
    or faster.
    """
    if g.lattice:
        dist = exact_lattice_dist(model, n, psi, xi)
        shift = n * model.drift
        return float(sum(v * dist.at(np.rint(k + shift)) for k, v in g.values))
    if hasattr(g, "width"):
        width = g.width
        S = 12.0 / width
    else:
        width = g.halfwidth
        S = 400.0 / width
    live = model.weights != 0
    amp = float(np.max(np.abs(model.phases[live])))
    freq = n * amp + abs(getattr(g, "center", 0.0)) + 6 * width
    m = panels or max(int(S * freq / 4.0), 64)
    edges = np.linspace(-S, S, m + 1)
    mid = 0.5 * (edges[:-1] + edges[1:])
    s = mid[:, None] + 0.5 * np.diff(edges)[:, None] * _GL_X[None, :]
    vals = g.fourier(s.ravel()) * exact_charfn(model, n, s.ravel(), psi, xi)
    tot = _panel_integral(vals.reshape(s.shape), edges)
    return float(np.real(tot)) / (2 * np.pi)

"""Polynomial / power-series engine for the expansion polynomials.

Conventions used throughout:

* A jet is the truncated Taylor series in the real variable ``s`` of a
  complex function, e.g. ``lambda(is) = sum_k c_k s^k``.
* Characteristic functions are ``E exp(i s S)``.  The correction
  polynomials ``R_j`` are defined by
  ``int exp(+i s x) R_j(x) n(x) dx = A_j(s) exp(-sigma^2 s^2 / 2)``
  so that ``R_j n`` is literally the j-th density correction of
  ``S_n / sqrt(n)``.  With this convention the odd-order terms carry the
  same sign as the classical cumulant (Edgeworth) expansion.
* ``n`` is the centred Gaussian density of variance ``sigma2``; ``N`` its CDF.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import Polynomial
from scipy import integrate, special

from .errors import (
    ImaginaryResidue,
    InsufficientJetOrder,
    NonUnitEigenvalueAtZero,
    NotLattice,
    NotSolvable,
    ResidualCumulant,
    UnsupportedTestFunction,
)

COEFF_TOL = 1e-10
RESIDUAL_TOL = 1e-8
REAL_TOL = 1e-9
MAX_ORDER = 6


# ---------------------------------------------------------------------------
# Jets
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Jet:
    """Truncated power series ``sum_{k<=order} coeffs[k] s^k``."""

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=complex).ravel()
        if c.size == 0:
            raise ValueError("a jet needs at least one coefficient")
        object.__setattr__(self, "coeffs", c)

    @property
    def order(self) -> int:
        return self.coeffs.size - 1

    def __getitem__(self, k: int) -> complex:
        return complex(self.coeffs[k]) if k <= self.order else 0j

    def truncate(self, order: int) -> Jet:
        c = np.zeros(order + 1, dtype=complex)
        m = min(order, self.order) + 1
        c[:m] = self.coeffs[:m]
        return Jet(c)

    def __mul__(self, other: Jet) -> Jet:
        order = min(self.order, other.order)
        return Jet(_mul_trunc(self.coeffs, other.coeffs, order))

    def __call__(self, s):
        return np.polynomial.polynomial.polyval(s, self.coeffs)

    def log(self) -> Jet:
        return Jet(series_log(self.coeffs))

    def to_list(self) -> list:
        return _cplx_list(self.coeffs)


def _mul_trunc(a: np.ndarray, b: np.ndarray, order: int) -> np.ndarray:
    return np.convolve(a[: order + 1], b[: order + 1])[: order + 1]


def series_log(c: np.ndarray) -> np.ndarray:
    """Formal logarithm of a power series with ``c[0] != 0``.

    Uses the recursion obtained from ``g' = g f'`` with ``f = log g``.
    """
    c = np.asarray(c, dtype=complex)
    f = np.zeros_like(c)
    f[0] = np.log(c[0])
    for k in range(1, c.size):
        acc = c[k]
        for j in range(1, k):
            acc -= (j / k) * f[j] * c[k - j]
        f[k] = acc / c[0]
    return f


def series_power(c: np.ndarray, m: int, order: int) -> np.ndarray:
    out = np.zeros(order + 1, dtype=complex)
    out[0] = 1.0
    base = np.zeros(order + 1, dtype=complex)
    base[: min(order + 1, len(c))] = c[: order + 1]
    for _ in range(m):
        out = _mul_trunc(out, base, order)
    return out


# ---------------------------------------------------------------------------
# Gaussian parameters and polynomial helpers
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GaussianParams:
    sigma2: float

    def __post_init__(self):
        if not (self.sigma2 > 0 and math.isfinite(self.sigma2)):
            raise ValueError(f"sigma2 must be positive, got {self.sigma2!r}")

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma2)

    def density(self, x):
        x = np.asarray(x, dtype=float)
        return np.exp(-0.5 * x * x / self.sigma2) / math.sqrt(2 * math.pi * self.sigma2)

    def cdf(self, x):
        # scipy's ndtr (Cephes) is accurate to a few ulps, far below 1e-12.
        return special.ndtr(np.asarray(x, dtype=float) / self.sigma)

    def moment(self, p: int) -> float:
        """E X^p for X ~ N(0, sigma2)."""
        if p % 2:
            return 0.0
        return float(_double_factorial(p - 1)) * self.sigma2 ** (p // 2)

    def weight_moment(self, p: int) -> float:
        """int u^p exp(-sigma2 u^2 / 2) du."""
        if p % 2:
            return 0.0
        return math.sqrt(2 * math.pi / self.sigma2) * _double_factorial(p - 1) / self.sigma2 ** (p // 2)


def _double_factorial(k: int) -> int:
    out = 1
    while k > 1:
        out *= k
        k -= 2
    return out


def trim(p: Polynomial, tol: float = 0.0) -> Polynomial:
    c = np.array(p.coef, dtype=complex)
    nz = np.nonzero(np.abs(c) > tol)[0]
    if nz.size == 0:
        return Polynomial([0j])
    return Polynomial(c[: nz[-1] + 1])


def _coef(p: Polynomial) -> np.ndarray:
    return np.array(p.coef, dtype=complex)


def gaussian_derivative_polys(kmax: int, g: GaussianParams) -> list[Polynomial]:
    """Polynomials D_k with n^{(k)}(x) = D_k(x) n(x)."""
    x = Polynomial([0.0, 1.0])
    out = [Polynomial([1.0])]
    for _ in range(kmax):
        d = out[-1]
        out.append(d.deriv() - x * d / g.sigma2)
    return out


# ---------------------------------------------------------------------------
# Expansion polynomials
# ---------------------------------------------------------------------------


def psi0_jet(lambda_jet: Jet, g: GaussianParams, tol: float = RESIDUAL_TOL) -> Jet:
    """Jet of ``log lambda(is) + sigma2 s^2 / 2``; constant, linear and quadratic terms vanish."""
    if lambda_jet.order < 2:
        raise InsufficientJetOrder("psi0 needs a jet of order >= 2", order=lambda_jet.order)
    c = lambda_jet.coeffs.copy()
    if abs(c[0] - 1.0) > tol:
        raise NonUnitEigenvalueAtZero("lambda(0) must be 1", c0=complex(c[0]))
    c[0] = 1.0
    psi = series_log(c)
    psi[2] += g.sigma2 / 2
    if abs(psi[1]) > tol or abs(psi[2]) > tol:
        raise ResidualCumulant(
            "jet has a linear term or a quadratic term inconsistent with sigma2",
            c1=complex(psi[1]),
            c2_residual=complex(psi[2]),
        )
    psi[:3] = 0.0
    return Jet(psi)


def build_A(psi0: Jet, B: Sequence[complex], r: int) -> list[Polynomial]:
    """Characteristic-function correction polynomials A_0..A_r.

    ``a_{m,j} = (1/m!) sum_{N<=j-m} (B_N / N!) [psi0^m]_{2m+j-N}`` multiplies
    ``s^{2m+j}``.
    """
    if psi0.order < r + 2:
        raise InsufficientJetOrder("psi0 jet must have order >= r + 2", order=psi0.order, r=r)
    if len(B) < r + 1:
        raise InsufficientJetOrder("need B_0..B_r", got=len(B), r=r)
    B = np.asarray(B, dtype=complex)
    top = 3 * r
    base = psi0.coeffs[: r + 3]
    powers = [series_power(base, m, top) for m in range(r + 1)]
    out = []
    for j in range(r + 1):
        coef = np.zeros(3 * j + 1, dtype=complex)
        for m in range(j + 1):
            acc = 0j
            for N in range(j - m + 1):
                acc += B[N] / math.factorial(N) * powers[m][2 * m + j - N]
            coef[2 * m + j] += acc / math.factorial(m)
        out.append(Polynomial(coef))
    return out


def R_from_A(A_j: Polynomial, g: GaussianParams) -> Polynomial:
    """Polynomial R with ``R n`` having characteristic function ``A(s) exp(-sigma2 s^2/2)``.

    Since ``int e^{isx} n^{(k)}(x) dx = (-is)^k exp(-sigma2 s^2/2)``, a monomial
    ``s^k`` maps to ``i^k n^{(k)}``.
    """
    a = _coef(A_j)
    D = gaussian_derivative_polys(a.size - 1, g)
    out = Polynomial([0j])
    for k, ak in enumerate(a):
        if ak != 0:
            out = out + (ak * 1j**k) * D[k]
    return trim(out)


def gaussian_mean(R: Polynomial, g: GaussianParams) -> complex:
    """int R(x) n(x) dx using exact Gaussian moments."""
    return complex(sum(c * g.moment(k) for k, c in enumerate(_coef(R))))


def P_from_R(R_j: Polynomial, g: GaussianParams, tol: float = RESIDUAL_TOL) -> Polynomial:
    """Solve ``n R = (n P)'`` for P.

    ``(n P)' = n (P' - x P / sigma2)`` gives ``r_k = (k+1) p_{k+1} - p_{k-1}/sigma2``,
    solved downward from the top degree; the k = 0 equation is the
    solvability condition ``int R n = 0``.
    """
    r = _coef(R_j)
    scale = 1.0 + sum(abs(c) * g.moment(k) for k, c in enumerate(r))
    mean = gaussian_mean(R_j, g)
    if abs(mean) > tol * scale:
        raise NotSolvable("int R n dx must vanish", mean=mean)
    d = r.size - 1
    if d == 0:
        return Polynomial([0j])
    p = np.zeros(d + 2, dtype=complex)
    for k in range(d, 0, -1):
        p[k - 1] = g.sigma2 * ((k + 1) * p[k + 1] - r[k])
    return trim(Polynomial(p[:d]))


def Q_from_A(A: Sequence[Polynomial], g: GaussianParams, m: int, tol: float = REAL_TOL) -> Polynomial:
    """Local-expansion polynomial Q_m (returned with real coefficients)."""
    if len(A) < 2 * m + 1:
        raise InsufficientJetOrder("Q_m needs A_0..A_{2m}", m=m, available=len(A))
    coef = np.zeros(2 * m + 1, dtype=complex)
    for j in range(2 * m + 1):
        l = 2 * m - j
        a = _coef(A[j])
        mom = sum(ak * g.weight_moment(l + k) for k, ak in enumerate(a))
        coef[l] += mom * (-1j) ** l / math.factorial(l) / (2 * math.pi)
    scale = max(1.0, float(np.max(np.abs(coef))))
    if np.max(np.abs(coef.imag)) > tol * scale:
        raise ImaginaryResidue("Q_m has an imaginary part", m=m, imag=float(np.max(np.abs(coef.imag))))
    return trim(Polynomial(coef.real))


# ---------------------------------------------------------------------------
# Expansion sets
# ---------------------------------------------------------------------------


@dataclass
class ExpansionSet:
    order: int
    gaussian: GaussianParams
    B: np.ndarray
    A: list
    R: list
    P: list  # P[0] is the zero polynomial; P[k] multiplies n^{-k/2}
    Q: list
    lattice: bool = False
    drift: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def sigma2(self) -> float:
        return self.gaussian.sigma2

    def to_json(self) -> dict:
        return {
            "order": self.order,
            "sigma2": self.sigma2,
            "lattice": self.lattice,
            "B": _cplx_list(self.B),
            "A": [_cplx_list(_coef(p)) for p in self.A],
            "R": [_cplx_list(_coef(p)) for p in self.R],
            "P": [_cplx_list(_coef(p)) for p in self.P[1:]],
            "Q": [_cplx_list(_coef(p)) for p in self.Q],
            "drift": self.drift,
        }

    @classmethod
    def from_json(cls, doc: dict) -> ExpansionSet:
        poly = lambda rows: Polynomial(np.array([complex(a, b) for a, b in rows]))
        return cls(
            order=int(doc["order"]),
            gaussian=GaussianParams(float(doc["sigma2"])),
            B=np.array([complex(a, b) for a, b in doc["B"]]),
            A=[poly(c) for c in doc["A"]],
            R=[poly(c) for c in doc["R"]],
            P=[Polynomial([0j])] + [poly(c) for c in doc["P"]],
            Q=[poly(c) for c in doc["Q"]],
            lattice=bool(doc["lattice"]),
            drift=float(doc.get("drift", 0.0)),
        )


def _cplx_list(c) -> list:
    return [[float(np.real(z)), float(np.imag(z))] for z in np.asarray(c, dtype=complex).ravel()]


def build_expansion(
    lambda_jet: Jet,
    B: Sequence[complex],
    r: int,
    *,
    sigma2: float | None = None,
    lattice: bool = False,
    drift: float = 0.0,
    tol: float = RESIDUAL_TOL,
) -> ExpansionSet:
    """Assemble A, R, P and Q families of order ``r`` from an eigenvalue jet and B constants."""
    if not 0 <= r <= MAX_ORDER:
        raise ValueError(f"order must be in [0, {MAX_ORDER}]")
    if sigma2 is None:
        sigma2 = -2.0 * lambda_jet[2].real
    g = GaussianParams(sigma2)
    psi0 = psi0_jet(lambda_jet, g, tol=tol)
    A = build_A(psi0, B, r)
    R = [R_from_A(a, g) for a in A]
    P = [Polynomial([0j])] + [P_from_R(R[j], g, tol=tol) for j in range(1, r + 1)]
    for j, p in enumerate(P):
        _assert_real(p, f"P_{j}")
    Q = [Q_from_A(A, g, m) for m in range(r // 2 + 1)]
    return ExpansionSet(
        order=r,
        gaussian=g,
        B=np.asarray(B, dtype=complex)[: r + 1].copy(),
        A=A,
        R=R,
        P=P,
        Q=Q,
        lattice=lattice,
        drift=drift,
    )


def _assert_real(p: Polynomial, name: str, tol: float = REAL_TOL) -> None:
    c = _coef(p)
    scale = max(1.0, float(np.max(np.abs(c))))
    if np.max(np.abs(c.imag)) > tol * scale:
        raise ImaginaryResidue(f"{name} has an imaginary part", imag=float(np.max(np.abs(c.imag))))


def _real_eval(p: Polynomial, x):
    return np.polynomial.polynomial.polyval(x, _coef(p).real)


# ---------------------------------------------------------------------------
# Evaluating expansions
# ---------------------------------------------------------------------------


def edgeworth_cdf(es: ExpansionSet, n: int, x):
    """``B_0 N(x) + n(x) sum_j P_j(x) n^{-j/2}`` for the law of ``S_n / sqrt(n)``.

    B_0 is the total mass (1 without start and end weights).
    """
    x = np.asarray(x, dtype=float)
    g = es.gaussian
    corr = np.zeros_like(x)
    for j in range(1, es.order + 1):
        corr = corr + _real_eval(es.P[j], x) * n ** (-j / 2)
    return float(np.real(es.B[0])) * g.cdf(x) + g.density(x) * corr


def density_expansion(es: ExpansionSet, n: int, x, r: int | None = None):
    """``sum_j n^{-j/2} (R_j n)(x)``: density of ``S_n / sqrt(n)``."""
    x = np.asarray(x, dtype=float)
    r = es.order if r is None else r
    tot = np.zeros_like(x)
    for j in range(r + 1):
        tot = tot + _real_eval(es.R[j], x) * n ** (-j / 2)
    return tot * es.gaussian.density(x)


def lattice_point_mass(es: ExpansionSet, n: int, k):
    """Expansion of P(S_n = k) for an integer-valued observable.

    Each term carries ``n^{-(j+1)/2}`` so that the leading term is
    ``n(0)/sqrt(n)`` at ``k = n * drift``.
    """
    if not es.lattice:
        raise NotLattice("lattice_point_mass needs a lattice expansion set")
    k = np.asarray(k, dtype=float)
    x = (k - n * es.drift) / math.sqrt(n)
    return density_expansion(es, n, x) / math.sqrt(n)


def charfn_expansion(es: ExpansionSet, n: int, s):
    s = np.asarray(s, dtype=float)
    tot = np.zeros(s.shape, dtype=complex)
    for j in range(es.order + 1):
        tot = tot + es.A[j](s) * n ** (-j / 2)
    return np.exp(-0.5 * es.sigma2 * s * s) * tot


# ---------------------------------------------------------------------------
# Test functions for the local limit functionals
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GaussianBump:
    """g(x) = exp(-(x - center)^2 / (2 width^2))."""

    center: float = 0.0
    width: float = 1.0
    lattice = False

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return np.exp(-0.5 * ((x - self.center) / self.width) ** 2)

    @property
    def integral(self) -> float:
        return math.sqrt(2 * math.pi) * self.width

    def moment(self, l: int) -> float:
        # (c + wZ)^l expanded with normal moments
        tot = 0.0
        for i in range(l + 1):
            if i % 2:
                continue
            tot += math.comb(l, i) * self.center ** (l - i) * self.width**i * _double_factorial(i - 1)
        return self.integral * tot

    def fourier(self, s):
        s = np.asarray(s, dtype=float)
        return self.integral * np.exp(-1j * s * self.center - 0.5 * (self.width * s) ** 2)

    def support(self) -> tuple[float, float]:
        return self.center - 14 * self.width, self.center + 14 * self.width


@dataclass(frozen=True)
class RaisedCosine:
    """Compactly supported bump (1 + cos(pi (x - c) / h)) / 2 on |x - c| < h."""

    center: float = 0.0
    halfwidth: float = 1.0
    lattice = False

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        u = (x - self.center) / self.halfwidth
        return np.where(np.abs(u) < 1, 0.5 * (1 + np.cos(np.pi * u)), 0.0)

    @property
    def integral(self) -> float:
        return self.halfwidth

    def moment(self, l: int) -> float:
        lo, hi = self.support()
        val, _ = integrate.quad(lambda x: x**l * float(self(x)), lo, hi, epsabs=1e-13, epsrel=1e-12, limit=200)
        return val

    def fourier(self, s):
        s = np.atleast_1d(np.asarray(s, dtype=float))
        h = self.halfwidth
        w = np.pi / h

        def sinc_int(a):  # int_{-h}^{h} cos(a u) du
            out = np.full_like(a, 2 * h)
            nz = np.abs(a) > 1e-12
            out[nz] = 2 * np.sin(a[nz] * h) / a[nz]
            return out

        body = 0.5 * sinc_int(s) + 0.25 * (sinc_int(s - w) + sinc_int(s + w))
        return body * np.exp(-1j * s * self.center)

    def support(self) -> tuple[float, float]:
        return self.center - self.halfwidth, self.center + self.halfwidth


@dataclass(frozen=True)
class LatticeSequence:
    """Finitely supported g on the integers, given as {k: g(k)}."""

    values: tuple  # tuple of (k, value) pairs
    lattice = True

    @classmethod
    def indicator(cls, k: int) -> LatticeSequence:
        return cls(((int(k), 1.0),))

    @classmethod
    def from_dict(cls, d: dict) -> LatticeSequence:
        return cls(tuple(sorted((int(k), float(v)) for k, v in d.items())))

    @property
    def integral(self) -> float:
        return float(sum(v for _, v in self.values))

    def moment(self, l: int) -> float:
        return float(sum(k**l * v for k, v in self.values))

    def fourier(self, s):
        s = np.asarray(s, dtype=float)
        return sum(v * np.exp(-1j * s * k) for k, v in self.values)

    def __call__(self, x):
        x = np.asarray(x)
        out = np.zeros(x.shape)
        for k, v in self.values:
            out = out + np.where(x == k, v, 0.0)
        return out


TEST_FUNCTIONS = (GaussianBump, RaisedCosine, LatticeSequence)


def mlclt_global(es: ExpansionSet, g, n: int) -> float:
    """``sum_j n^{-(j+1)/2} int (R_j n)(x / sqrt n) g(x) dlambda(x)``."""
    if not isinstance(g, TEST_FUNCTIONS):
        raise UnsupportedTestFunction(f"unsupported test function {type(g).__name__}")
    if g.lattice:
        if not es.lattice:
            raise UnsupportedTestFunction("lattice test function on a non-lattice expansion")
        ks = np.array([k for k, _ in g.values], dtype=float)
        vs = np.array([v for _, v in g.values])
        return float(np.sum(vs * lattice_point_mass(es, n, ks)))
    rn = math.sqrt(n)
    shift = n * es.drift

    def integrand(x):
        return float(density_expansion(es, n, (x - shift) / rn)) / rn * float(g(x))

    lo, hi = g.support()
    val, _ = integrate.quad(integrand, lo, hi, epsabs=1e-15, epsrel=1e-12, limit=400)
    return val


def mlclt_local(es: ExpansionSet, g, n: int) -> float:
    """``n^{-1/2} sum_{m <= r/2} n^{-m} int g Q_m dlambda``."""
    if not isinstance(g, TEST_FUNCTIONS):
        raise UnsupportedTestFunction(f"unsupported test function {type(g).__name__}")
    if g.lattice != es.lattice:
        raise UnsupportedTestFunction("test function and expansion disagree on lattice")
    if es.drift != 0.0:
        raise UnsupportedTestFunction("local expansion needs a centred observable (drift = 0)")
    tot = 0.0
    for m, q in enumerate(es.Q):
        c = _coef(q).real
        tot += n ** (-m) * sum(cl * g.moment(l) for l, cl in enumerate(c))
    return tot / math.sqrt(n)

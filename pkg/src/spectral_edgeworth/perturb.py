"""Spectral engine: leading eigen-data of L_s and its Taylor jets at s = 0."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import (
    IllConditioned,
    JetDisagreement,
    NoConvergence,
    NonSimpleDominant,
    NoSpectralGap,
    ProjectionJetFailure,
    SlowDecay,
    ZeroVariance,
)
from .models import NormalizedModel
from .polyexp import ExpansionSet, Jet, build_expansion

TIE_TOL = 1e-9
UNIT_TOL = 1e-9
COND_LIMIT = 1e12
ZERO_VARIANCE = 1e-8
JET_FLOOR = 1e-3
CONTOUR_POINTS = 32
CONTOUR_TOL = 1e-9
CONTOUR_HALVINGS = 6


@dataclass
class EigenTriple:
    value: complex
    right: np.ndarray
    left: np.ndarray

    def residual(self, T: np.ndarray) -> float:
        return float(np.max(np.abs(T @ self.right - self.value * self.right)))


@dataclass
class SpectralData:
    lambda_jet: Jet
    B: np.ndarray
    sigma2: float
    gap: float
    delta: float

    def to_json(self) -> dict:
        return {
            "lambda_jet": self.lambda_jet.to_list(),
            "B": [[float(z.real), float(z.imag)] for z in self.B],
            "sigma2": self.sigma2,
            "gap": self.gap,
            "delta": self.delta,
        }


# ---------------------------------------------------------------------------
# Eigen-triples
# ---------------------------------------------------------------------------


def _sorted_eigs(T):
    ev = np.linalg.eigvals(T)
    return ev[np.argsort(-np.abs(ev), kind="stable")]


def leading_triple(T: np.ndarray, tie_tol: float = TIE_TOL, max_iter: int = 50) -> EigenTriple:
    """Dominant eigenvalue with right/left vectors normalized by mean(right) = 1, <left, right> = 1."""
    T = np.asarray(T, dtype=complex)
    N = T.shape[0]
    if N == 1:
        return EigenTriple(complex(T[0, 0]), np.ones(1, complex), np.ones(1, complex))
    ev, R = np.linalg.eig(T)
    order = np.argsort(-np.abs(ev), kind="stable")
    lam = ev[order[0]]
    if abs(abs(ev[order[1]]) - abs(lam)) <= tie_tol * max(abs(lam), 1e-300):
        raise NonSimpleDominant("dominant eigenvalue modulus is tied", value=lam, second=ev[order[1]])
    v = R[:, order[0]]
    evl, Lv = np.linalg.eig(T.T)
    l = Lv[:, np.argmin(np.abs(evl - lam))]
    # inverse-iteration polish of both vectors at the computed eigenvalue
    shift = lam + 1e-14 * max(1.0, abs(lam))
    try:
        lu = sla.lu_factor(T - shift * np.eye(N), check_finite=False)
        for _ in range(2):
            v = sla.lu_solve(lu, v, check_finite=False)
            v /= np.linalg.norm(v)
            l = sla.lu_solve(lu, l, trans=1, check_finite=False)
            l /= np.linalg.norm(l)
    except (ValueError, sla.LinAlgError):
        pass
    lam = complex(l @ T @ v / (l @ v))
    m = v.mean()
    v = v / (m if abs(m) > 1e-8 else v[np.argmax(np.abs(v))])
    denom = l @ v
    if abs(denom) < 1e-14:
        raise NoConvergence("left and right eigenvectors are orthogonal")
    l = l / denom
    out = EigenTriple(lam, v, l)
    if not np.isfinite(out.right).all():
        raise NoConvergence("eigenvector computation failed")
    return out


def leading_eigenvalue(model: NormalizedModel, s: complex) -> complex:
    ev = _sorted_eigs(model.twisted(s))
    return complex(ev[0])


def spectral_gap(model: NormalizedModel, s: float = 0.0) -> float:
    """Modulus ratio |lambda_2| / |lambda_1| of the operator at s."""
    if model.size == 1:
        return 0.0
    ev = _sorted_eigs(model.twisted(s))
    return float(abs(ev[1]) / abs(ev[0]))


def small_s_radius(model: NormalizedModel, gap_min: float = 1e-3, probes: int = 8) -> float:
    """Largest dyadic delta <= 1/2 with a simple, gap-separated dominant eigenvalue on [0, delta]."""
    delta = 0.5
    while delta > 2**-12:
        ok = True
        for s in np.linspace(0, delta, probes + 1):
            if model.size > 1:
                ev = _sorted_eigs(model.twisted(s))
                if 1 - abs(ev[1]) / abs(ev[0]) < gap_min:
                    ok = False
                    break
        if ok:
            return delta
        delta /= 2
    raise NoSpectralGap("no dyadic neighbourhood of 0 with a separated dominant eigenvalue")


# ---------------------------------------------------------------------------
# Rayleigh-Schroedinger jets
# ---------------------------------------------------------------------------


def _L_terms(model: NormalizedModel, order: int) -> list[np.ndarray]:
    return [(1j**j / math.factorial(j)) * model.derivative(j) for j in range(order + 1)]


def _bordered(L0: np.ndarray, pi: np.ndarray, transpose: bool):
    N = L0.shape[0]
    K = np.zeros((N + 1, N + 1), dtype=complex)
    if transpose:
        K[:N, :N] = L0.T - np.eye(N)
        K[:N, N] = pi
        K[N, :N] = 1.0
    else:
        K[:N, :N] = L0 - np.eye(N)
        K[:N, N] = -1.0
        K[N, :N] = pi
    cond = np.linalg.cond(K)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise IllConditioned("bordered eigen-system is ill-conditioned", cond=cond)
    return sla.lu_factor(K, check_finite=False)


@dataclass
class RSSeries:
    lam: np.ndarray  # lambda_k
    right: list  # v_k
    left: list  # l_k


def rs_series(model: NormalizedModel, order: int) -> RSSeries:
    """Power series of lambda, right and left eigenvectors of L_s in s.

    Normalization: v_0 = 1, pi . v_k = 0 (k >= 1); l(s) . v(s) = 1.
    """
    N = model.size
    Ls = _L_terms(model, order)
    pi = model.pi.astype(complex)
    one = np.ones(N, dtype=complex)
    lu = _bordered(model.L0, pi, transpose=False)
    lam = np.zeros(order + 1, dtype=complex)
    lam[0] = 1.0
    v = [one]
    for k in range(1, order + 1):
        rhs = np.zeros(N, dtype=complex)
        for j in range(1, k):
            rhs += lam[j] * v[k - j]
        for j in range(1, k + 1):
            rhs -= Ls[j] @ v[k - j]
        sol = sla.lu_solve(lu, np.append(rhs, 0.0), check_finite=False)
        v.append(sol[:N])
        lam[k] = sol[N]
    lut = _bordered(model.L0, pi, transpose=True)
    l = [pi.copy()]
    for k in range(1, order + 1):
        rhs = np.zeros(N, dtype=complex)
        for j in range(1, k + 1):
            rhs += lam[j] * l[k - j] - Ls[j].T @ l[k - j]
        norm = -sum(l[k - j] @ v[j] for j in range(1, k + 1))
        sol = sla.lu_solve(lut, np.append(rhs, norm), check_finite=False)
        if abs(sol[N]) > 1e-8 * (1 + np.max(np.abs(rhs))):
            raise ProjectionJetFailure("left eigenvector series is inconsistent", residual=abs(sol[N]))
        l.append(sol[:N])
    return RSSeries(lam, v, l)


def lambda_jet_rs(model: NormalizedModel, order: int) -> Jet:
    """Jet of lambda(is) of the given order by Rayleigh-Schroedinger recursion."""
    lam = rs_series(model, order).lam.copy()
    lam[0] = 1.0
    return Jet(lam)


def b_constants(model: NormalizedModel, psi=None, xi=None, order: int = 3) -> np.ndarray:
    """B_N = N! [s^N] (a . v(s)) (l(s) . b), the Taylor data of the eigenprojection term."""
    a, b = model.pair_weights(psi, xi)
    ser = rs_series(model, order)
    av = np.array([a @ vk for vk in ser.right])
    lb = np.array([lk @ b for lk in ser.left])
    prod = np.convolve(av, lb)[: order + 1]
    return prod * np.array([math.factorial(k) for k in range(order + 1)])


# ---------------------------------------------------------------------------
# Contour (finite-difference) jets
# ---------------------------------------------------------------------------


def _contour_coeffs(f, order: int, radius: float, points: int = CONTOUR_POINTS) -> np.ndarray:
    w = np.exp(2j * np.pi * np.arange(points) / points)
    vals = np.array([f(radius * z) for z in w])
    c = np.fft.fft(vals) / points
    return c[: order + 1] / radius ** np.arange(order + 1)


def _track_eigenvalue(model: NormalizedModel, s: complex, guess: complex) -> complex:
    ev = np.linalg.eigvals(model.twisted(s))
    return complex(ev[np.argmin(np.abs(ev - guess))])


def lambda_jet_fd(model: NormalizedModel, order: int, radius: float | None = None) -> tuple[Jet, float]:
    """Jet of lambda(is) from eigenvalues on a circle in the complex s-plane.

    Returns the jet and an error estimate from the same computation at half
    the radius.  The Cauchy-integral stencil replaces real-axis central
    differences, whose cancellation error would swamp orders >= 4.  Without
    an explicit radius the circle starts at delta / 2 and is halved while
    the error estimate exceeds CONTOUR_TOL: a branch point of lambda off
    the real axis can sit inside the real-axis gap radius.
    """

    def run(rad):
        # follow the eigenvalue continuously around the circle
        prev = [1.0 + 0j]

        def f(s):
            val = _track_eigenvalue(model, s, prev[0])
            prev[0] = val
            return val

        return _contour_coeffs(f, order, rad)

    def estimate(rad, c_big):
        c_small = run(rad / 2)
        scale = np.maximum(np.maximum(np.abs(c_big), np.abs(c_small)), JET_FLOOR)
        return c_big, float(np.max(np.abs(c_big - c_small) / scale)), c_small

    if radius is not None:
        c1, err, _ = estimate(radius, run(radius))
    else:
        rad = small_s_radius(model) / 2
        c1, err, c_next = estimate(rad, run(rad))
        for _ in range(CONTOUR_HALVINGS):
            if err <= CONTOUR_TOL:
                break
            rad /= 2
            c2, err2, c_next = estimate(rad, c_next)
            if err2 < err:
                c1, err = c2, err2
    c1[0] = 1.0
    return Jet(c1), err


def jet_agreement(a: Jet, b: Jet, floor: float = JET_FLOOR) -> float:
    """max_k |a_k - b_k| / max(|a_k|, |b_k|, floor)."""
    x, y = a.coeffs, b.coeffs
    m = min(x.size, y.size)
    x, y = x[:m], y[:m]
    return float(np.max(np.abs(x - y) / np.maximum(np.maximum(np.abs(x), np.abs(y)), floor)))


def cross_check_jets(model: NormalizedModel, order: int, tol: float = 1e-7) -> tuple[Jet, Jet, float]:
    rs = lambda_jet_rs(model, order)
    fd, _ = lambda_jet_fd(model, order)
    rel = jet_agreement(rs, fd)
    if rel > tol:
        raise JetDisagreement("eigenvalue jets disagree", relative=rel)
    return rs, fd, rel


def b_constants_fd(model: NormalizedModel, psi=None, xi=None, order: int = 3, n: int = 400, radius: float | None = None) -> np.ndarray:
    """B_N from H_n(s) = lambda(is)^{-n} E[psi e^{isS_n} xi] at finite n, via a Cauchy contour."""
    a, b = model.pair_weights(psi, xi)
    if radius is None:
        radius = min(small_s_radius(model) / 4, 0.1)
    prev = [1.0 + 0j]

    def H(s):
        T = model.twisted(s)
        lam = _track_eigenvalue(model, s, prev[0])
        prev[0] = lam
        w = b.astype(complex)
        for _ in range(n):
            w = T @ w / lam
        return a @ w

    c = _contour_coeffs(H, order, radius)
    return c * np.array([math.factorial(k) for k in range(order + 1)])


# ---------------------------------------------------------------------------
# Variance
# ---------------------------------------------------------------------------


def sigma2_from_jet(jet: Jet) -> float:
    return -2.0 * jet[2].real


def sigma2(model: NormalizedModel, jet: Jet | None = None) -> float:
    if jet is None:
        jet = lambda_jet_rs(model, 2)
    val = sigma2_from_jet(jet)
    if val < ZERO_VARIANCE:
        raise ZeroVariance("asymptotic variance vanishes (coboundary observable?)", sigma2=val)
    return val


@dataclass
class GreenKubo:
    standard: float  # C_0 + 2 sum_{k>=1} C_k
    single: float  # C_0 + sum_{k>=1} C_k
    terms: int
    convention: str  # which variants reproduce lambda''(0): "standard", "single" or "both"


def green_kubo(model: NormalizedModel, tol: float = 1e-12, reference: float | None = None) -> GreenKubo:
    """Correlation series C_0 = E phi^2, C_k = E(phi . phi o F^k)."""
    one = np.ones(model.size)
    M1, M2, L = model.derivative(1), model.derivative(2), model.L0
    c0 = float(model.pi @ M2 @ one)
    rho = spectral_gap(model)
    if rho <= 0:
        kmax = 50
    elif rho >= 1:
        raise SlowDecay("no spectral gap, correlation series cannot be summed", gap=rho)
    else:
        kmax = int(math.ceil(10 * math.log(1 / tol) / math.log(1 / rho))) + 5
    u = M1 @ one
    left = model.pi @ M1
    tail = 0.0
    converged = False
    k = 0
    for k in range(1, kmax + 1):
        ck = float(np.real(left @ u))
        tail += ck
        u = L @ u
        bound = abs(ck) * (rho / (1 - rho) if 0 < rho < 1 else 0.0)
        if abs(ck) < tol and bound < tol:
            converged = True
            break
    if not converged:
        raise SlowDecay("correlation series did not converge", terms=kmax)
    standard = c0 + 2 * tail
    single = c0 + tail
    convention = "standard"
    if reference is not None:
        ok_std = abs(standard - reference) <= 1e-8 * max(1.0, abs(reference))
        ok_single = abs(single - reference) <= 1e-8 * max(1.0, abs(reference))
        convention = "both" if ok_std and ok_single else "standard" if ok_std else "single" if ok_single else "none"
    return GreenKubo(standard, single, k, convention)


def lyapunov(model: NormalizedModel) -> float:
    """-i d/ds lambda at 0 for the uncentred operator, i.e. the stationary mean increment."""
    if model.kind == "rmp" and model.size > 1:
        if model.extra.get("projective_gap", 0.0) <= 0:
            raise NoSpectralGap("projective operator has no gap")
    return model.drift


# ---------------------------------------------------------------------------
# Scans
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RadiusPoint:
    s: float
    radius: float
    second: float
    flagged: bool  # top two moduli tie

    @property
    def unit_modulus(self) -> bool:
        """Radius 1 away from s = 0: the observable is arithmetic at this s."""
        return abs(self.s) > TIE_TOL and self.radius >= 1.0 - UNIT_TOL


def _radius_at(model: NormalizedModel, s: float) -> RadiusPoint:
    ev = _sorted_eigs(model.twisted(s))
    r1 = float(abs(ev[0]))
    r2 = float(abs(ev[1])) if ev.size > 1 else 0.0
    flagged = ev.size > 1 and abs(r1 - r2) <= TIE_TOL * max(r1, 1e-300)
    return RadiusPoint(float(s), r1, r2, bool(flagged))


def radius_scan(model: NormalizedModel, s_grid, threads: int = 1) -> list[RadiusPoint]:
    s_grid = [float(s) for s in s_grid]
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            return list(ex.map(lambda s: _radius_at(model, s), s_grid))
    return [_radius_at(model, s) for s in s_grid]


@dataclass(frozen=True)
class DecayPoint:
    n: int
    log_norm: float
    norm: float


def decay_scan(model: NormalizedModel, s: float, n_max: int) -> list[DecayPoint]:
    """sup-norm of L_s^n 1, accumulated in log form with per-step renormalization."""
    T = model.twisted(s)
    w = np.ones(model.size, dtype=complex)
    acc = 0.0
    out = []
    for n in range(1, n_max + 1):
        w = T @ w
        m = float(np.max(np.abs(w)))
        if m == 0.0:
            out.extend(DecayPoint(k, -math.inf, 0.0) for k in range(n, n_max + 1))
            break
        acc += math.log(m)
        w /= m
        out.append(DecayPoint(n, acc, math.exp(acc)))
    return out


def decay_rate(points: list[DecayPoint]) -> float:
    """Geometric rate fitted on the second half of a decay scan."""
    pts = [p for p in points[len(points) // 2 :] if math.isfinite(p.log_norm)]
    if len(pts) < 2:
        return 0.0
    n = np.array([p.n for p in pts], dtype=float)
    y = np.array([p.log_norm for p in pts])
    slope = np.polyfit(n, y, 1)[0]
    return float(math.exp(slope))


# ---------------------------------------------------------------------------
# Pipeline
# ---------------------------------------------------------------------------


def spectral_data(model: NormalizedModel, r: int, psi=None, xi=None) -> SpectralData:
    order = r + 2
    jet = lambda_jet_rs(model, order)
    var = sigma2(model, jet)
    B = b_constants(model, psi, xi, order)
    return SpectralData(jet, B, var, spectral_gap(model), small_s_radius(model))


def expand_model(model: NormalizedModel, r: int, psi=None, xi=None) -> ExpansionSet:
    sd = spectral_data(model, r, psi, xi)
    es = build_expansion(sd.lambda_jet, sd.B, r, sigma2=sd.sigma2, lattice=model.lattice, drift=model.drift if model.lattice else 0.0)
    es.meta.update({"gap": sd.gap, "delta": sd.delta, "model": model.kind})
    return es

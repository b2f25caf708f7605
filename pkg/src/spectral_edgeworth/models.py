"""Concrete dynamical systems as finite twisted transfer matrices.

Every model is stored in a branch form

    L_s = sum_b  W_b * exp(i s Phi_b)      (entrywise product)

with ``W_b`` real ``(N, N)`` weight matrices and ``Phi_b`` the centred
observable value attached to each entry.  Rows of ``sum_b W_b`` sum to one.

Two orientations are used.

``transfer``
    ``L[x, y] = w(y, x)``: the normalized Ruelle operator acting on functions
    of the first symbol, ``(L h)(x) = sum_y w(y, x) h(y)``.  Then
    ``E[psi(x_0) exp(i s S_n) xi(x_n)] = pi^T (xi * L_s^n psi)``.
``markov``
    ``L`` is the forward kernel ``(L h)(x) = E[h(X_1) | X_0 = x]`` twisted by
    the increment.  Then ``E_x[exp(i s S_n) xi(X_n)] = (L_s^n xi)(x)``.
"""

from __future__ import annotations

import hashlib
import itertools
import json
from collections.abc import Callable, Sequence
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import (
    DegeneratePerron,
    GridTooCoarse,
    ModelSpecError,
    NoSpectralGap,
    Periodic,
    RangeTooLarge,
    Reducible,
)

PERRON_GAP_TOL = 1e-8
RMP_GAP_TOL = 1e-6
CENTER_SNAP = 1e-12
RECODE_CAP = 512


# ---------------------------------------------------------------------------
# Specs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MarkovSftSpec:
    """Pair potential / pair observable on a one-sided SFT.

    ``potential[y][x]`` and ``observable[y][x]`` refer to the transition
    ``x_0 = y -> x_1 = x``.
    """

    incidence: np.ndarray
    potential: np.ndarray
    observable: np.ndarray
    lattice: bool = False
    labels: tuple = ()

    def __post_init__(self):
        A = np.asarray(self.incidence, dtype=int)
        k = A.shape[0]
        if A.shape != (k, k) or not np.isin(A, (0, 1)).all():
            raise ModelSpecError("incidence must be a square 0/1 matrix")
        g = np.asarray(self.potential, dtype=float)
        f = np.asarray(self.observable, dtype=float)
        if g.shape != (k, k) or f.shape != (k, k):
            raise ModelSpecError("potential and observable must be k x k tables")
        if not np.isfinite(g[A == 1]).all() or not np.isfinite(f[A == 1]).all():
            raise ModelSpecError("potential and observable must be finite on allowed transitions")
        object.__setattr__(self, "incidence", A)
        object.__setattr__(self, "potential", np.where(A == 1, g, 0.0))
        object.__setattr__(self, "observable", np.where(A == 1, f, 0.0))

    @property
    def k(self) -> int:
        return self.incidence.shape[0]

    @classmethod
    def from_transition(cls, P, observable, lattice=False) -> MarkovSftSpec:
        P = np.asarray(P, dtype=float)
        if (P < 0).any() or not np.allclose(P.sum(axis=1), 1.0, atol=1e-12):
            raise ModelSpecError("transition matrix must be row-stochastic")
        A = (P > 0).astype(int)
        with np.errstate(divide="ignore"):
            g = np.where(A == 1, np.log(np.where(A == 1, P, 1.0)), 0.0)
        return cls(A, g, observable, lattice)

    @classmethod
    def iid(cls, values, probs, lattice=False) -> MarkovSftSpec:
        values = np.asarray(values, dtype=float)
        probs = np.asarray(probs, dtype=float)
        if values.shape != probs.shape or values.ndim != 1:
            raise ModelSpecError("values and probs must be equal-length vectors")
        if (probs <= 0).any() or abs(probs.sum() - 1.0) > 1e-12:
            raise ModelSpecError("probabilities must be positive and sum to 1")
        k = values.size
        A = np.ones((k, k), dtype=int)
        g = np.repeat(np.log(probs)[:, None], k, axis=1)
        f = np.repeat(values[:, None], k, axis=1)
        return cls(A, g, f, lattice)

    def to_json(self) -> dict:
        return {
            "kind": "sft",
            "incidence": self.incidence.tolist(),
            "potential": self.potential.tolist(),
            "observable": self.observable.tolist(),
            "lattice": self.lattice,
        }


@dataclass(frozen=True)
class CircleMapSpec:
    """x -> d x mod 1 with observable sum_k cos[k-1] cos(2 pi k x) + sin[k-1] sin(2 pi k x)."""

    degree: int
    cos: tuple = ()
    sin: tuple = ()
    grid: int = 64
    fourier: int = 24
    mean: float = 0.0

    def __post_init__(self):
        if self.degree < 2:
            raise ModelSpecError("degree must be >= 2")
        if self.grid % self.degree:
            raise ModelSpecError("grid size must be a multiple of the degree")
        if not 0 < self.fourier < self.grid / 2:
            raise ModelSpecError("Fourier truncation must satisfy 0 < K < N/2")
        if self.mean != 0.0:
            raise ModelSpecError("observable must have zero Lebesgue mean")
        object.__setattr__(self, "cos", tuple(float(c) for c in self.cos))
        object.__setattr__(self, "sin", tuple(float(c) for c in self.sin))

    def observable(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for k, c in enumerate(self.cos, start=1):
            out += c * np.cos(2 * np.pi * k * x)
        for k, c in enumerate(self.sin, start=1):
            out += c * np.sin(2 * np.pi * k * x)
        return out

    def refined(self) -> CircleMapSpec:
        return CircleMapSpec(self.degree, self.cos, self.sin, 2 * self.grid, 2 * self.fourier)

    def to_json(self) -> dict:
        return {
            "kind": "circle",
            "degree": self.degree,
            "cos": list(self.cos),
            "sin": list(self.sin),
            "grid": self.grid,
            "fourier": self.fourier,
        }


@dataclass(frozen=True)
class RmpSpec:
    """I.i.d. products of real 2x2 matrices acting on the projective circle."""

    matrices: tuple
    probs: tuple
    grid: int = 512
    x0_angle: float = 0.0

    def __post_init__(self):
        mats = tuple(np.asarray(m, dtype=float) for m in self.matrices)
        if not mats or any(m.shape != (2, 2) for m in mats):
            raise ModelSpecError("RMP needs a non-empty list of 2x2 matrices")
        if any(abs(np.linalg.det(m)) < 1e-300 for m in mats):
            raise ModelSpecError("matrices must be invertible")
        p = np.asarray(self.probs, dtype=float)
        if p.shape != (len(mats),) or (p <= 0).any() or abs(p.sum() - 1) > 1e-12:
            raise ModelSpecError("probabilities must be positive, one per matrix, summing to 1")
        if self.grid < 4:
            raise ModelSpecError("projective grid too small")
        object.__setattr__(self, "matrices", mats)
        object.__setattr__(self, "probs", tuple(float(q) for q in p))

    def to_json(self) -> dict:
        return {
            "kind": "rmp",
            "matrices": [m.tolist() for m in self.matrices],
            "probs": list(self.probs),
            "grid": self.grid,
            "x0_angle": self.x0_angle,
        }


# ---------------------------------------------------------------------------
# Normalized model
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class NormalizedModel:
    kind: str
    weights: np.ndarray  # (B, N, N)
    phases: np.ndarray  # (B, N, N), centred
    pi: np.ndarray
    drift: float
    lattice: bool
    orientation: str = "transfer"
    nodes: np.ndarray | None = None
    spec: object = None
    start: np.ndarray | None = None  # markov orientation: initial distribution
    extra: dict = field(default_factory=dict)
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def size(self) -> int:
        return self.weights.shape[1]

    @property
    def raw_phases(self) -> np.ndarray:
        return self.phases + self.drift

    @cached_property
    def L0(self) -> np.ndarray:
        return self.weights.sum(axis=0)

    def twisted(self, s: float) -> np.ndarray:
        if s == 0:
            return self.L0.astype(complex)
        return np.einsum("bij,bij->ij", self.weights, np.exp(1j * s * self.phases))

    def derivative(self, j: int) -> np.ndarray:
        """M_j = sum_b W_b * Phi_b^j, so that d^j/ds^j L_s at 0 is i^j M_j."""
        cache = self._cache
        if j not in cache:
            cache[j] = np.einsum("bij,bij->ij", self.weights, self.phases**j) if j else self.L0
        return cache[j]

    def pair_weights(self, psi=None, xi=None):
        """Vectors (a, b) with E[psi e^{isS_n} xi] = a^T L_s^n b."""
        N = self.size
        psi = np.ones(N) if psi is None else np.asarray(psi, dtype=float)
        xi = np.ones(N) if xi is None else np.asarray(xi, dtype=float)
        if self.orientation == "transfer":
            return self.pi * xi, psi
        start = self.start if self.start is not None else self.pi
        return start * psi, xi

    def model_hash(self) -> str:
        doc = self.spec.to_json() if hasattr(self.spec, "to_json") else {"kind": self.kind}
        blob = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def summary(self) -> dict:
        return {
            "kind": self.kind,
            "size": self.size,
            "orientation": self.orientation,
            "lattice": self.lattice,
            "drift": self.drift,
            "pi": self.pi.tolist() if self.size <= 16 else None,
            "row_sum_residual": float(np.max(np.abs(self.L0.sum(axis=1) - 1))),
            "stationarity_residual": float(np.max(np.abs(self.pi @ self.L0 - self.pi))),
            "centering_residual": float(abs(self.pi @ self.derivative(1) @ np.ones(self.size))),
            "lattice_span": self.extra.get("lattice_span"),
        }


def twisted_matrix(model: NormalizedModel, s: float) -> np.ndarray:
    return model.twisted(s)


def _center(pi, weights, raw, lattice):
    drift = float(pi @ np.einsum("bij,bij->i", weights, raw))
    if abs(drift) < CENTER_SNAP:
        drift = 0.0
    return drift, raw - drift


# ---------------------------------------------------------------------------
# Subshifts of finite type
# ---------------------------------------------------------------------------


def _check_primitive(A: np.ndarray) -> None:
    k = A.shape[0]
    B = (A > 0).astype(np.int64)
    reach = np.eye(k, dtype=np.int64) + B
    R = np.linalg.matrix_power(np.minimum(reach, 1), max(k - 1, 1))
    if (R == 0).any():
        raise Reducible("incidence matrix is not irreducible")
    P = np.eye(k, dtype=np.int64)
    for _ in range((k - 1) ** 2 + 1):
        P = np.minimum(P @ B, 1)
    if (P == 0).any():
        raise Periodic("incidence matrix is irreducible but periodic")


def _integer_check(values: np.ndarray) -> np.ndarray:
    r = np.rint(values)
    if np.max(np.abs(values - r), initial=0.0) > 1e-12:
        raise ModelSpecError("lattice observable must be integer-valued on allowed transitions")
    return r


def build_markov_sft(spec: MarkovSftSpec, gap_tol: float = PERRON_GAP_TOL) -> NormalizedModel:
    A = spec.incidence
    _check_primitive(A)
    raw = np.where(A.T == 1, np.exp(spec.potential.T), 0.0)  # raw[x, y] = A(y,x) e^{g(y,x)}
    evals, right = np.linalg.eig(raw)
    order = np.argsort(-np.abs(evals))
    rho = evals[order[0]].real
    if evals.size > 1 and 1 - abs(evals[order[1]]) / rho < gap_tol:
        raise DegeneratePerron("Perron eigenvalue is not separated", gap=1 - abs(evals[order[1]]) / rho)
    h = np.abs(right[:, order[0]].real)
    evalsL, left = np.linalg.eig(raw.T)
    l = np.abs(left[:, np.argmax(evalsL.real)].real)
    # one step of power iteration tightens both vectors to machine precision
    h = raw @ h / rho
    l = raw.T @ l / rho
    W = raw * h[None, :] / (rho * h[:, None])
    W = W / W.sum(axis=1, keepdims=True)
    pi = l * h
    pi = pi / pi.sum()
    for _ in range(3):
        pi = pi @ W
        pi = pi / pi.sum()
    phase = spec.observable.T.astype(float)  # phase[x, y] = phi(y, x)
    extra = {}
    if spec.lattice:
        phase = np.where(A.T == 1, _integer_check(phase), 0.0)
        vals = np.unique(phase[A.T == 1]).astype(int)
        extra["lattice_span"] = int(np.gcd.reduce(np.diff(vals))) if vals.size > 1 else 0
    weights = W[None, :, :]
    drift, centred = _center(pi, weights, phase[None, :, :], spec.lattice)
    centred = np.where(weights > 0, centred, 0.0)
    return NormalizedModel(
        kind="sft",
        weights=weights,
        phases=centred,
        pi=pi,
        drift=drift,
        lattice=spec.lattice,
        orientation="transfer",
        nodes=np.arange(spec.k),
        spec=spec,
        extra=extra,
    )


def forward_transition(model: NormalizedModel) -> np.ndarray:
    """Stochastic matrix of the stationary chain x_0 -> x_1 for a transfer-orientation model."""
    W = model.L0
    pi = model.pi
    return (pi[:, None] * W / pi[None, :]).T  # P[y, x] = pi(x) w(y, x) / pi(y)


def build_iid(values, probs, lattice=False) -> NormalizedModel:
    spec = MarkovSftSpec.iid(values, probs, lattice)
    m = build_markov_sft(spec)
    return NormalizedModel(
        kind="iid",
        weights=m.weights,
        phases=m.phases,
        pi=m.pi,
        drift=m.drift,
        lattice=lattice,
        nodes=m.nodes,
        spec=spec,
        extra=m.extra,
    )


# ---------------------------------------------------------------------------
# Two-sided to one-sided recoding
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RecodedSft:
    spec: MarkovSftSpec
    blocks: tuple
    m: int

    def block_word(self, word: Sequence[int]) -> list[int]:
        """Block indices for a two-sided word (position i gets block word[i-m..i+m])."""
        index = {b: i for i, b in enumerate(self.blocks)}
        L = 2 * self.m + 1
        return [index[tuple(word[i : i + L])] for i in range(len(word) - L + 1)]


def two_sided_recode(
    incidence,
    observable: Callable[[tuple], float],
    m: int,
    potential=None,
    lattice: bool = False,
    cap: int = RECODE_CAP,
) -> RecodedSft:
    """Recode an observable of coordinates -m..m as a pair observable on (2m+1)-blocks.

    The block chain moves ``b -> b'`` when ``b'`` is ``b`` shifted by one; the
    pair observable of that move is ``observable(b)`` and the pair potential
    is the original potential on the middle symbols.  Birkhoff sums of the
    recoded chain equal the two-sided sums of the same window, so over a
    finite word the two differ only by the 2m boundary terms.
    """
    A = np.asarray(incidence, dtype=int)
    k = A.shape[0]
    g = np.zeros((k, k)) if potential is None else np.asarray(potential, dtype=float)
    L = 2 * m + 1
    blocks = []
    for w in itertools.product(range(k), repeat=L):
        if all(A[w[i], w[i + 1]] for i in range(L - 1)):
            blocks.append(w)
            if len(blocks) > cap:
                raise RangeTooLarge("block alphabet exceeds cap", cap=cap, m=m)
    nb = len(blocks)
    Ab = np.zeros((nb, nb), dtype=int)
    gb = np.zeros((nb, nb))
    fb = np.zeros((nb, nb))
    for i, b in enumerate(blocks):
        val = float(observable(b))
        for j, c in enumerate(blocks):
            if b[1:] == c[:-1]:
                Ab[i, j] = 1
                gb[i, j] = g[b[m], c[m]]
                fb[i, j] = val
    return RecodedSft(MarkovSftSpec(Ab, gb, fb, lattice, labels=tuple(blocks)), tuple(blocks), m)


# ---------------------------------------------------------------------------
# Expanding circle maps
# ---------------------------------------------------------------------------


def _dirichlet(y: np.ndarray, nodes: np.ndarray, K: int, N: int) -> np.ndarray:
    d = y[:, None] - nodes[None, :]
    k = np.arange(1, K + 1)
    return (1.0 + 2.0 * np.cos(2 * np.pi * d[..., None] * k).sum(axis=-1)) / N


def build_circle_map(spec: CircleMapSpec, check_grid: bool = True, tol: float = 1e-8) -> NormalizedModel:
    d, N, K = spec.degree, spec.grid, spec.fourier
    nodes = np.arange(N) / N
    weights = np.empty((d, N, N))
    raw = np.empty((d, N, N))
    for b in range(d):
        y = (nodes + b) / d
        weights[b] = _dirichlet(y, nodes, K, N) / d
        raw[b] = np.repeat(spec.observable(y)[:, None], N, axis=1)
    pi = np.full(N, 1.0 / N)
    drift, centred = _center(pi, weights, raw, False)
    model = NormalizedModel(
        kind="circle",
        weights=weights,
        phases=centred,
        pi=pi,
        drift=drift,
        lattice=False,
        nodes=nodes,
        spec=spec,
    )
    if check_grid:
        from .perturb import lambda_jet_rs

        fine = build_circle_map(spec.refined(), check_grid=False)
        a = lambda_jet_rs(model, 4).coeffs
        b = lambda_jet_rs(fine, 4).coeffs
        diff = float(np.max(np.abs(a - b)))
        model.extra["grid_refinement_diff"] = diff
        if diff > tol:
            raise GridTooCoarse("lambda jet moved under grid refinement", diff=diff)
    return model


# ---------------------------------------------------------------------------
# Random matrix products on the projective circle
# ---------------------------------------------------------------------------


def _is_proximal(g: np.ndarray) -> bool:
    ev = np.linalg.eigvals(g)
    a, b = sorted(np.abs(ev))
    return b - a > 1e-9 * max(b, 1e-300)


def _proximality_proxy(mats) -> bool:
    if any(_is_proximal(g) for g in mats):
        return True
    return any(_is_proximal(g @ h) for g in mats for h in mats)


def projective_action(g: np.ndarray, theta):
    """Angle in [0, pi) of g u(theta) and the cocycle log |g u(theta)|."""
    theta = np.asarray(theta, dtype=float)
    u = np.stack([np.cos(theta), np.sin(theta)])
    v = g @ u
    ang = np.mod(np.arctan2(v[1], v[0]), np.pi)
    return ang, np.log(np.hypot(v[0], v[1]))


def build_rmp(spec: RmpSpec, gap_tol: float = RMP_GAP_TOL) -> NormalizedModel:
    mats, p = spec.matrices, np.asarray(spec.probs)
    scalars = [abs(g[0, 0]) if np.allclose(g, g[0, 0] * np.eye(2), rtol=0, atol=1e-15) else None for g in mats]
    if all(c is not None for c in scalars):
        # the projective action is trivial: the cocycle is i.i.d. and the
        # projective circle collapses to a point
        raw = np.log(np.array(scalars))[:, None, None]
        weights = p[:, None, None].copy()
        pi = np.ones(1)
        drift, centred = _center(pi, weights, raw, False)
        return NormalizedModel(
            kind="rmp",
            weights=weights,
            phases=centred,
            pi=pi,
            drift=drift,
            lattice=False,
            orientation="markov",
            nodes=np.zeros(1),
            spec=spec,
            start=np.ones(1),
        )
    if not _proximality_proxy(mats):
        raise NoSpectralGap("no proximal element among generators and their pairwise products")
    M = spec.grid
    h = np.pi / M
    nodes = np.arange(M) * h
    weights = np.zeros((len(mats), M, M))
    raw = np.zeros((len(mats), M, M))
    rows = np.arange(M)
    for b, g in enumerate(mats):
        ang, coc = projective_action(g, nodes)
        t = ang / h
        j0 = np.floor(t).astype(int) % M
        frac = t - np.floor(t)
        j1 = (j0 + 1) % M
        np.add.at(weights[b], (rows, j0), p[b] * (1 - frac))
        np.add.at(weights[b], (rows, j1), p[b] * frac)
        raw[b] = coc[:, None]
    L0 = weights.sum(axis=0)
    evals, left = np.linalg.eig(L0.T)
    order = np.argsort(-np.abs(evals))
    gap = 1 - abs(evals[order[1]])
    if gap < gap_tol:
        raise NoSpectralGap("leading eigenvalue of the projective operator is not isolated", gap=gap)
    nu = np.abs(left[:, order[0]].real)
    nu = nu / nu.sum()
    for _ in range(5):
        nu = nu @ L0
        nu = nu / nu.sum()
    start = np.zeros(M)
    x0 = float(np.mod(spec.x0_angle, np.pi))
    t = x0 / h
    i0 = int(np.floor(t)) % M
    fr = t - np.floor(t)
    start[i0] += 1 - fr
    start[(i0 + 1) % M] += fr
    drift, centred = _center(nu, weights, raw, False)
    return NormalizedModel(
        kind="rmp",
        weights=weights,
        phases=np.where(weights > 0, centred, 0.0),
        pi=nu,
        drift=drift,
        lattice=False,
        orientation="markov",
        nodes=nodes,
        spec=spec,
        start=start,
        extra={"projective_gap": float(gap)},
    )


def build_model(spec) -> NormalizedModel:
    if isinstance(spec, MarkovSftSpec):
        return build_markov_sft(spec)
    if isinstance(spec, CircleMapSpec):
        return build_circle_map(spec)
    if isinstance(spec, RmpSpec):
        return build_rmp(spec)
    raise ModelSpecError(f"unknown spec type {type(spec).__name__}")

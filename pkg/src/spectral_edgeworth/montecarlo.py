"""Seeded, scheduling-independent samplers of Birkhoff sums."""

from __future__ import annotations

import csv
import io
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numba as nb
import numpy as np

from .models import CircleMapSpec, NormalizedModel, RmpSpec, forward_transition
from .rng import normalize_seed, stream_key, uniform, word

CHUNK = 4096
FORWARD_CIRCLE_CAP = 40
RENORM_EVERY = 32


@dataclass
class SampleBatch:
    n: int
    trials: int
    sums: np.ndarray  # uncentred S_n
    start: np.ndarray
    end: np.ndarray
    seed: int
    drift: float = 0.0
    model_hash: str = ""

    def centred(self) -> np.ndarray:
        return self.sums - self.n * self.drift

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["trial", "S_n", "start", "end"])
        for i in range(self.trials):
            w.writerow([i, repr(float(self.sums[i])), int(self.start[i]), int(self.end[i])])
        return buf.getvalue()

    def sidecar(self) -> dict:
        return {"n": self.n, "trials": self.trials, "seed": self.seed, "model_hash": self.model_hash}

    def write(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())
        with open(os.path.splitext(path)[0] + ".json", "w") as fh:
            json.dump(self.sidecar(), fh, indent=2)


def _run_chunks(kernel, trials: int, threads: int, *args):
    """Run ``kernel(lo, hi, *args)`` over trial chunks; each returns arrays for its range."""
    bounds = [(lo, min(lo + CHUNK, trials)) for lo in range(0, trials, CHUNK)]
    if threads > 1 and len(bounds) > 1:
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(lambda b: kernel(b[0], b[1], *args), bounds))
    else:
        parts = [kernel(lo, hi, *args) for lo, hi in bounds]
    if not parts:
        return tuple(np.empty(0, dtype=dt) for dt in (np.float64, np.int64, np.int64))
    return tuple(np.concatenate([p[i] for p in parts]) for i in range(3))


# ---------------------------------------------------------------------------
# Stationary Markov chains (SFT and i.i.d. models)
# ---------------------------------------------------------------------------


@nb.njit(inline="always", cache=True)
def _draw(cdf, u):
    k = 0
    last = cdf.size - 1
    while k < last and u >= cdf[k]:
        k += 1
    return k


@nb.njit(nogil=True, cache=True)
def _markov_kernel(lo, hi, seed, n, pi_cdf, row_cdf, phase):
    m = hi - lo
    sums = np.empty(m)
    start = np.empty(m, dtype=np.int64)
    end = np.empty(m, dtype=np.int64)
    for t in range(m):
        key = stream_key(np.uint64(seed), np.uint64(lo + t))
        y = _draw(pi_cdf, uniform(key, 0))
        start[t] = y
        acc = 0.0
        for k in range(n):
            x = _draw(row_cdf[y], uniform(key, k + 1))
            acc += phase[y, x]
            y = x
        sums[t] = acc
        end[t] = y
    return sums, start, end


def sample_markov(model: NormalizedModel, n: int, trials: int, seed: int, threads: int = 1) -> SampleBatch:
    """Stationary chain x_0 ~ pi with the forward transition of the Gibbs measure."""
    if model.orientation != "transfer":
        raise ValueError("sample_markov needs an SFT / i.i.d. model")
    seed = normalize_seed(seed)
    P = forward_transition(model)
    row_cdf = np.cumsum(P, axis=1)
    row_cdf[:, -1] = 1.0
    pi_cdf = np.cumsum(model.pi)
    pi_cdf[-1] = 1.0
    phase = np.ascontiguousarray(model.raw_phases[0].T)  # phase[y, x] = phi(y, x)
    if model.lattice:
        phase = np.rint(phase)
    sums, start, end = _run_chunks(_markov_kernel, trials, threads, seed, n, pi_cdf, row_cdf, phase)
    return SampleBatch(n, trials, sums, start, end, seed, model.drift, model.model_hash())


# ---------------------------------------------------------------------------
# Expanding circle maps
# ---------------------------------------------------------------------------


@nb.njit(inline="always", cache=True)
def _trig(x, cos_c, sin_c):
    v = 0.0
    for k in range(cos_c.size):
        v += cos_c[k] * math.cos(2 * math.pi * (k + 1) * x)
    for k in range(sin_c.size):
        v += sin_c[k] * math.sin(2 * math.pi * (k + 1) * x)
    return v


@nb.njit(nogil=True, cache=True)
def _circle_backward_kernel(lo, hi, seed, n, d, cos_c, sin_c, grid):
    m = hi - lo
    sums = np.empty(m)
    start = np.empty(m, dtype=np.int64)
    end = np.empty(m, dtype=np.int64)
    for t in range(m):
        key = stream_key(np.uint64(seed), np.uint64(lo + t))
        x = uniform(key, 0)
        end[t] = min(int(x * grid), grid - 1)
        acc = 0.0
        for k in range(n):
            b = min(int(uniform(key, k + 1) * d), d - 1)
            x = (x + b) / d
            acc += _trig(x, cos_c, sin_c)
        sums[t] = acc
        start[t] = min(int(x * grid), grid - 1)
    return sums, start, end


@nb.njit(nogil=True, cache=True)
def _circle_forward_kernel(lo, hi, seed, n, d, cos_c, sin_c, grid, burn_in):
    m = hi - lo
    sums = np.empty(m)
    start = np.empty(m, dtype=np.int64)
    end = np.empty(m, dtype=np.int64)
    for t in range(m):
        key = stream_key(np.uint64(seed), np.uint64(lo + t))
        x = uniform(key, 0)
        for _ in range(burn_in):
            x = (d * x) % 1.0
        start[t] = min(int(x * grid), grid - 1)
        acc = 0.0
        for k in range(n):
            acc += _trig(x, cos_c, sin_c)
            x = (d * x) % 1.0
        sums[t] = acc
        end[t] = min(int(x * grid), grid - 1)
    return sums, start, end


def sample_circle(
    model: NormalizedModel,
    n: int,
    trials: int,
    seed: int,
    burn_in: int = 0,
    method: str = "backward",
    threads: int = 1,
) -> SampleBatch:
    """Birkhoff sums of x -> d x mod 1 started from Lebesgue.

    ``backward`` draws x_n uniform and inverse-branch digits i.i.d. uniform,
    which reproduces the stationary orbit law exactly and is numerically
    contracting.  ``forward`` iterates the map in double precision and loses
    about log2(d) bits per step, so it is capped at n <= 40.
    """
    spec: CircleMapSpec = model.spec
    seed = normalize_seed(seed)
    cos_c = np.array(spec.cos, dtype=float)
    sin_c = np.array(spec.sin, dtype=float)
    if method == "backward":
        out = _run_chunks(_circle_backward_kernel, trials, threads, seed, n, spec.degree, cos_c, sin_c, spec.grid)
    elif method == "forward":
        if n + burn_in > FORWARD_CIRCLE_CAP:
            raise ValueError(f"forward circle orbits are limited to {FORWARD_CIRCLE_CAP} steps")
        out = _run_chunks(
            _circle_forward_kernel, trials, threads, seed, n, spec.degree, cos_c, sin_c, spec.grid, burn_in
        )
    else:
        raise ValueError(f"unknown method {method!r}")
    return SampleBatch(n, trials, *out, seed, model.drift, model.model_hash())


# ---------------------------------------------------------------------------
# Random matrix products
# ---------------------------------------------------------------------------


@nb.njit(nogil=True, cache=True)
def _rmp_kernel(lo, hi, seed, n, mats, cdf, x0, bits, burn_in):
    m = hi - lo
    sums = np.empty(m)
    start = np.zeros(m, dtype=np.int64)
    end = np.zeros(m, dtype=np.int64)
    mask = np.uint64((1 << bits) - 1) if bits > 0 else np.uint64(0)
    per_word = 64 // bits if bits > 0 else 0
    for t in range(m):
        key = stream_key(np.uint64(seed), np.uint64(lo + t))
        v0 = math.cos(x0)
        v1 = math.sin(x0)
        acc = 0.0
        w = np.uint64(0)
        used = per_word
        wc = 0
        for k in range(burn_in + n):
            if k == burn_in:
                nrm = math.hypot(v0, v1)
                v0 /= nrm
                v1 /= nrm
                acc = 0.0
            if bits > 0:
                if used == per_word:
                    w = word(key, wc)
                    wc += 1
                    used = 0
                i = np.int64(w & mask)
                w = w >> np.uint64(bits)
                used += 1
            else:
                i = _draw(cdf, uniform(key, k))
            a0 = mats[i, 0, 0] * v0 + mats[i, 0, 1] * v1
            a1 = mats[i, 1, 0] * v0 + mats[i, 1, 1] * v1
            v0 = a0
            v1 = a1
            if (k + 1) % RENORM_EVERY == 0:
                nrm = math.hypot(v0, v1)
                acc += math.log(nrm)
                v0 /= nrm
                v1 /= nrm
        nrm = math.hypot(v0, v1)
        sums[t] = acc + math.log(nrm)
    return sums, start, end


def sample_rmp(
    spec: RmpSpec,
    x0_angle: float | None,
    n: int,
    trials: int,
    seed: int,
    threads: int = 1,
    burn_in: int = 0,
) -> SampleBatch:
    """log |g_n ... g_1 u(x0)| for i.i.d. matrices (uncentred).

    The vector is renormalized every few steps with the logs accumulated.
    When the ensemble has 2^b equally likely matrices the index is read
    directly from b bits of a random word (64 // b steps per word).
    With ``burn_in > 0`` the first steps move the direction towards the
    stationary law and are not counted.
    """
    seed = normalize_seed(seed)
    mats = np.array([np.asarray(g, dtype=float) for g in spec.matrices])
    p = np.asarray(spec.probs)
    k = len(p)
    bits = 0
    if k > 1 and (k & (k - 1)) == 0 and np.all(p == 1.0 / k):
        bits = k.bit_length() - 1
    cdf = np.cumsum(p)
    cdf[-1] = 1.0
    x0 = spec.x0_angle if x0_angle is None else x0_angle
    sums, start, end = _run_chunks(_rmp_kernel, trials, threads, seed, n, mats, cdf, float(x0), bits, burn_in)
    return SampleBatch(n, trials, sums, start, end, seed, 0.0, "")


def sample(model: NormalizedModel, n: int, trials: int, seed: int, threads: int = 1) -> SampleBatch:
    if model.kind in ("sft", "iid"):
        return sample_markov(model, n, trials, seed, threads)
    if model.kind == "circle":
        return sample_circle(model, n, trials, seed, threads=threads)
    if model.kind == "rmp":
        b = sample_rmp(model.spec, None, n, trials, seed, threads)
        b.drift = model.drift
        b.model_hash = model.model_hash()
        return b
    raise ValueError(f"no sampler for model kind {model.kind!r}")


# ---------------------------------------------------------------------------
# Estimators
# ---------------------------------------------------------------------------


def jackknife_mean(values: np.ndarray) -> tuple[float, float]:
    v = np.asarray(values, dtype=float)
    N = v.size
    if N < 2:
        return float(v.mean()) if N else math.nan, math.nan
    loo = (v.sum() - v) / (N - 1)
    se = math.sqrt((N - 1) / N * float(np.sum((loo - loo.mean()) ** 2)))
    return float(v.mean()), se


def mlclt_estimator(batch: SampleBatch, psi=None, xi=None, g=None, centred: bool = True) -> tuple[float, float]:
    """Trial average of psi(start) g(S_n) xi(end) with a jackknife standard error."""
    S = batch.centred() if centred else batch.sums
    vals = np.ones(batch.trials) if g is None else np.asarray(g(S), dtype=float)
    if psi is not None:
        vals = vals * np.asarray(psi)[batch.start]
    if xi is not None:
        vals = vals * np.asarray(xi)[batch.end]
    return jackknife_mean(vals)

"""Error measurements, decay-rate fits and the machine-readable report."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources

import jsonschema
import numpy as np
from scipy import stats

from . import oracle
from .errors import NotLattice
from .models import NormalizedModel
from .polyexp import (
    ExpansionSet,
    edgeworth_cdf,
    lattice_point_mass,
    mlclt_global,
    mlclt_local,
)

SCHEMA_ID = "spectral-edgeworth/validation-report"
SCHEMA_VERSION = "1.0"


@dataclass
class RateFit:
    n_list: list
    errors: list
    slope: float
    intercept: float
    slope_stderr: float
    extra: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        out = {
            "n_list": [int(n) for n in self.n_list],
            "errors": [float(e) for e in self.errors],
            "slope": self.slope,
            "intercept": self.intercept,
            "slope_stderr": self.slope_stderr,
        }
        for k, v in self.extra.items():
            out[k] = v
        return out

    def to_csv(self) -> str:
        lines = ["n,error"]
        lines += [f"{int(n)},{float(e)!r}" for n, e in zip(self.n_list, self.errors)]
        return "\n".join(lines) + "\n"


def fit_rate(n_list, errors, extra: dict | None = None) -> RateFit:
    """Least-squares slope of log(error) against log(n)."""
    n = np.asarray(n_list, dtype=float)
    e = np.asarray(errors, dtype=float)
    if n.size < 4:
        raise ValueError("a rate fit needs at least 4 points")
    if np.any(np.diff(n) <= 0):
        raise ValueError("n_list must be strictly increasing")
    if np.any(e <= 0) or not np.all(np.isfinite(e)):
        raise ValueError("errors must be positive and finite")
    res = stats.linregress(np.log(n), np.log(e))
    return RateFit(
        [int(v) for v in n], [float(v) for v in e], float(res.slope), float(res.intercept), float(res.stderr), extra or {}
    )


def default_x_grid(sigma2: float, points: int = 201) -> np.ndarray:
    s = math.sqrt(sigma2)
    return np.linspace(-5 * s, 5 * s, points)


def truncate(es: ExpansionSet, r: int) -> ExpansionSet:
    """Same expansion data restricted to order r (A, R, P, Q families are nested)."""
    return ExpansionSet(
        order=r,
        gaussian=es.gaussian,
        B=es.B[: r + 1],
        A=es.A[: r + 1],
        R=es.R[: r + 1],
        P=es.P[: r + 1],
        Q=es.Q[: r // 2 + 1],
        lattice=es.lattice,
        drift=es.drift,
        meta=dict(es.meta),
    )


# ---------------------------------------------------------------------------
# Error measurements
# ---------------------------------------------------------------------------


def sup_error_cdf(model: NormalizedModel, es: ExpansionSet, n_list, x_grid=None, psi=None, xi=None) -> RateFit:
    """sup_x |F_n(x) - E_{r,n}(x)| against the Gil-Pelaez oracle, with the Gaussian baseline alongside."""
    x = default_x_grid(es.sigma2) if x_grid is None else np.asarray(x_grid, dtype=float)
    errs, base, oracle_err = [], [], []
    for n in n_list:
        ref = oracle.cdf_gil_pelaez(model, int(n), x, psi, xi)
        errs.append(float(np.max(np.abs(ref.cdf - edgeworth_cdf(es, int(n), x)))))
        base.append(float(np.max(np.abs(ref.cdf - edgeworth_cdf(truncate(es, 0), int(n), x)))))
        oracle_err.append(ref.error)
    return fit_rate(n_list, errs, {"order": es.order, "gaussian_errors": base, "oracle_errors": oracle_err})


def sup_error_cdf_mc(samples: dict, es: ExpansionSet, x_grid=None) -> RateFit | dict:
    """Same measurement against empirical CDFs; ``samples`` maps n to normalized centred sums."""
    x = default_x_grid(es.sigma2) if x_grid is None else np.asarray(x_grid, dtype=float)
    ns = sorted(samples)
    errs, base = [], []
    for n in ns:
        z = np.sort(np.asarray(samples[n]))
        F = np.searchsorted(z, x, side="right") / z.size
        errs.append(float(np.max(np.abs(F - edgeworth_cdf(es, n, x)))))
        base.append(float(np.max(np.abs(F - edgeworth_cdf(truncate(es, 0), n, x)))))
    return {"n_list": ns, "errors": errs, "gaussian_errors": base, "order": es.order}


def sup_error_pmf(model: NormalizedModel, es: ExpansionSet, n_list, scale: str = "local", psi=None, xi=None) -> RateFit:
    """max_k |P(S_n = k) - expansion| per n.

    ``scale="local"`` multiplies by sqrt(n), i.e. measures the error of the
    density of S_n / sqrt(n); an order-r expansion then decays like
    n^{-(r+1)/2}.  ``scale="raw"`` reports plain probabilities (one more
    factor n^{-1/2}).
    """
    if not (model.lattice and es.lattice):
        raise NotLattice("pmf errors need a lattice model and expansion")
    span = model.extra.get("lattice_span") or 1
    if span > 1:
        raise NotLattice(f"observable has lattice span {span}; divide it by the span first", span=span)
    if scale not in ("local", "raw"):
        raise ValueError("scale must be 'local' or 'raw'")
    errs = []
    for n in n_list:
        d = oracle.exact_lattice_dist(model, int(n), psi, xi)
        e = float(np.max(np.abs(d.pmf - lattice_point_mass(es, int(n), d.support))))
        errs.append(e * math.sqrt(n) if scale == "local" else e)
    return fit_rate(n_list, errs, {"order": es.order, "scale": scale})


def mlclt_error(
    model: NormalizedModel,
    es: ExpansionSet,
    g,
    n_list,
    psi=None,
    xi=None,
    kind: str = "global",
    reference: dict | None = None,
) -> RateFit:
    """|E[psi g(S_n) xi] - prediction| per n.

    The reference is the exact oracle unless ``reference`` maps n to a
    Monte Carlo (value, standard error) pair, in which case the MC error bar
    is removed in quadrature.
    """
    predict = mlclt_global if kind == "global" else mlclt_local
    errs, refs, preds = [], [], []
    for n in n_list:
        pred = predict(es, g, int(n))
        if reference is None:
            ref = oracle.exact_mlclt(model, int(n), g, psi, xi)
            err = abs(ref - pred)
        else:
            ref, se = reference[n]
            err = math.sqrt(max((ref - pred) ** 2 - se**2, 0.0)) or 1e-300
        errs.append(max(err, 1e-300))
        refs.append(ref)
        preds.append(pred)
    return fit_rate(n_list, errs, {"order": es.order, "kind": kind, "reference": refs, "prediction": preds})


# ---------------------------------------------------------------------------
# Checks and reports
# ---------------------------------------------------------------------------


@dataclass
class Check:
    name: str
    measured: float
    op: str  # "<=", ">=", "within", "true"
    target: float = 0.0
    tol: float = 0.0
    detail: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        m = self.measured
        if not math.isfinite(m):
            return False
        if self.op == "<=":
            return m <= self.target
        if self.op == ">=":
            return m >= self.target
        if self.op == "within":
            return abs(m - self.target) <= self.tol
        if self.op == "true":
            return bool(m)
        raise ValueError(f"unknown check op {self.op!r}")

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "measured": float(self.measured),
            "required": {"op": self.op, "target": float(self.target), "tol": float(self.tol)},
            "passed": self.passed,
            "detail": self.detail,
        }


def _schema() -> dict:
    text = resources.files("spectral_edgeworth").joinpath("data/report_schema.json").read_text()
    return json.loads(text)


def report(experiments: dict | None = None, checks: list | None = None, meta: dict | None = None, timestamp: str | None = None) -> dict:
    """Aggregate experiments and checks into a schema-validated report document."""
    experiments = experiments or {}
    checks = checks or []
    doc = {
        "schema": SCHEMA_ID,
        "version": SCHEMA_VERSION,
        "meta": meta or {},
        "experiments": {k: (v.to_json() if hasattr(v, "to_json") else v) for k, v in experiments.items()},
        "checks": [c.to_json() for c in checks],
        "passed": all(c.passed for c in checks),
    }
    if timestamp is not None:
        doc["timestamp"] = timestamp
    doc = json.loads(json.dumps(doc, allow_nan=False))
    jsonschema.validate(doc, _schema())
    return doc

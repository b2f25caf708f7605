"""Run configuration files.

Configs are TOML documents (``.cfg`` extension).  Schema::

    [model]
    kind = "sft" | "iid" | "circle" | "rmp"
    # sft:    transition = [[...]]          (row-stochastic), or
    #         incidence = [[0/1 ...]] and potential = [[g(y,x) ...]]
    # iid:    values = [...], probs = [...]
    # circle: degree = 2, grid = 64, fourier = 24
    # rmp:    matrices = [[[a,b],[c,d]], ...], probs = [...], grid = 512, x0_angle = 0.0

    [observable]
    table = [[phi(y,x) ...]]    # sft: value on the transition y -> x
    cos = [...], sin = [...]    # circle: trigonometric coefficients, k = 1, 2, ...
    lattice = false

    [expansion]
    order = 2                   # 0 <= order <= 6
    psi = [...]                 # optional start weights (normalized to pi-mean 1)
    xi = [...]                  # optional end weights

    [experiment]
    n_list = [256, 512, ...]
    trials = 0                  # Monte Carlo trials; seed required when > 0
    seed = 12345
    burn_in = 0
    g = { family = "gaussian", center = 0.0, width = 1.0 }
      # or { family = "cosine", center = 0.0, halfwidth = 1.0 }
      # or { family = "lattice", points = [[k, value], ...] }

    [output]
    dir = "out"
    formats = ["json", "csv"]
"""

from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field
from importlib import resources

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

import numpy as np

from .errors import ConfigError, ConfigMissingSeed, ModelSpecError
from .models import CircleMapSpec, MarkovSftSpec, RmpSpec
from .polyexp import MAX_ORDER, GaussianBump, LatticeSequence, RaisedCosine

SCHEMA_TEXT = __doc__


@dataclass
class RunConfig:
    model: object  # one of the spec dataclasses
    kind: str
    order: int = 2
    psi: list | None = None
    xi: list | None = None
    n_list: list = field(default_factory=list)
    trials: int = 0
    seed: int | None = None
    burn_in: int = 0
    g: object = None
    out_dir: str = "out"
    formats: tuple = ("json", "csv")
    source: str = ""


def _array(section: dict, key: str, required: bool = True):
    if key not in section:
        if required:
            raise ConfigError(f"missing key {key!r}")
        return None
    try:
        return np.asarray(section[key], dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"key {key!r} must be numeric: {exc}") from exc


def _model_spec(doc: dict):
    m = doc.get("model")
    if not isinstance(m, dict) or "kind" not in m:
        raise ConfigError("config needs a [model] section with a kind")
    obs = doc.get("observable", {})
    kind = m["kind"]
    lattice = bool(obs.get("lattice", False))
    if kind == "sft":
        table = _array(obs, "table")
        if "transition" in m:
            return MarkovSftSpec.from_transition(_array(m, "transition"), table, lattice)
        return MarkovSftSpec(_array(m, "incidence"), _array(m, "potential"), table, lattice)
    if kind == "iid":
        return MarkovSftSpec.iid(_array(m, "values"), _array(m, "probs"), lattice)
    if kind == "circle":
        return CircleMapSpec(
            int(m.get("degree", 2)),
            tuple(obs.get("cos", ())),
            tuple(obs.get("sin", ())),
            int(m.get("grid", 64)),
            int(m.get("fourier", 24)),
            float(obs.get("mean", 0.0)),
        )
    if kind == "rmp":
        mats = _array(m, "matrices")
        return RmpSpec(tuple(mats), tuple(_array(m, "probs")), int(m.get("grid", 512)), float(m.get("x0_angle", 0.0)))
    raise ConfigError(f"unknown model kind {kind!r}")


def _test_function(spec: dict | None):
    if spec is None:
        return None
    fam = spec.get("family")
    if fam == "gaussian":
        return GaussianBump(float(spec.get("center", 0.0)), float(spec.get("width", 1.0)))
    if fam == "cosine":
        return RaisedCosine(float(spec.get("center", 0.0)), float(spec.get("halfwidth", 1.0)))
    if fam == "lattice":
        pts = spec.get("points", [[0, 1.0]])
        return LatticeSequence(tuple((int(k), float(v)) for k, v in pts))
    raise ConfigError(f"unknown test-function family {fam!r}")


def parse_config(doc: dict, source: str = "") -> RunConfig:
    try:
        spec = _model_spec(doc)
    except ModelSpecError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"malformed model section: {exc}") from exc
    exp = doc.get("expansion", {})
    order = int(exp.get("order", 2))
    if not 0 <= order <= MAX_ORDER:
        raise ConfigError(f"order must be between 0 and {MAX_ORDER}")
    ex = doc.get("experiment", {})
    trials = int(ex.get("trials", 0))
    seed = ex.get("seed")
    if trials > 0 and seed is None:
        raise ConfigMissingSeed("experiment.seed is required when trials > 0")
    n_list = [int(n) for n in ex.get("n_list", [])]
    if any(n < 1 for n in n_list):
        raise ConfigError("n_list entries must be positive")
    out = doc.get("output", {})
    return RunConfig(
        model=spec,
        kind=doc["model"]["kind"],
        order=order,
        psi=exp.get("psi"),
        xi=exp.get("xi"),
        n_list=n_list,
        trials=trials,
        seed=None if seed is None else int(seed),
        burn_in=int(ex.get("burn_in", 0)),
        g=_test_function(ex.get("g")),
        out_dir=str(out.get("dir", "out")),
        formats=tuple(out.get("formats", ("json", "csv"))),
        source=source,
    )


def load_config(path: str) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config is not valid TOML: {exc}") from exc
    return parse_config(doc, source=path)


def bundled_config_path(name: str) -> str:
    """Filesystem path of a config shipped with the package (e.g. ``chain2_lattice.cfg``)."""
    return str(resources.files("spectral_edgeworth").joinpath("data", name))


def bundled_configs() -> list[str]:
    root = resources.files("spectral_edgeworth").joinpath("data")
    return sorted(p.name for p in root.iterdir() if p.name.endswith(".cfg"))


def normalized_psi(psi, pi) -> np.ndarray | None:
    if psi is None:
        return None
    psi = np.asarray(psi, dtype=float)
    mean = float(pi @ psi)
    if not math.isfinite(mean) or abs(mean) < 1e-12:
        raise ConfigError("psi must have nonzero stationary mean")
    return psi / mean

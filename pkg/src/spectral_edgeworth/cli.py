"""Command-line front end.

Exit codes: 0 success, 1 error (structured JSON diagnostic on stderr),
2 a validation check failed.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import json
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import config as cfgmod
from . import montecarlo, perturb, validate
from .errors import ConfigError, ConfigMissingSeed, SpectralError
from .models import build_model
from .polyexp import GaussianBump, LatticeSequence

EXIT_OK, EXIT_ERROR, EXIT_FAILED = 0, 1, 2

DEFAULT_PMF_N = [2**k for k in range(7, 14)]
DEFAULT_CDF_N = [2**k for k in range(8, 13)]
DEFAULT_MLCLT_N = [2**k for k in range(6, 11)]


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------


class Context:
    def __init__(self, args, cfg: cfgmod.RunConfig):
        self.args = args
        self.cfg = cfg
        self.threads = max(int(getattr(args, "threads", 1) or 1), 1)
        self.deterministic = bool(getattr(args, "deterministic", False))
        out = getattr(args, "out", None) or os.environ.get("OUTPUT_DIR") or cfg.out_dir
        self.out_dir = out

    def pmap(self, fn, items):
        items = list(items)
        if self.threads > 1 and len(items) > 1:
            with ThreadPoolExecutor(self.threads) as ex:
                return list(ex.map(fn, items))
        return [fn(x) for x in items]

    def write_json(self, name: str, doc: dict) -> str:
        if not self.deterministic:
            doc = dict(doc)
            doc.setdefault("timestamp", _dt.datetime.now(_dt.timezone.utc).isoformat())
        text = json.dumps(doc, indent=2, allow_nan=False) + "\n"
        return self._write(name, text)

    def write_text(self, name: str, text: str) -> str:
        return self._write(name, text)

    def _write(self, name: str, text: str) -> str:
        os.makedirs(self.out_dir, exist_ok=True)
        path = os.path.join(self.out_dir, name)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write(text)
        return path


def _model_and_weights(cfg):
    model = build_model(cfg.model)
    psi = cfgmod.normalized_psi(cfg.psi, model.pi) if model.orientation == "transfer" else None
    xi = None if cfg.xi is None else np.asarray(cfg.xi, dtype=float)
    return model, psi, xi


def _csv(header, rows) -> str:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(repr(float(v)) if isinstance(v, (float, np.floating)) else str(v) for v in row))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_model_validate(ctx: Context) -> int:
    model, psi, xi = _model_and_weights(ctx.cfg)
    summary = model.summary()
    summary["gap"] = perturb.spectral_gap(model)
    summary["sigma2"] = perturb.sigma2(model)
    ctx.write_json("model.json", summary)
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def cmd_jet(ctx: Context) -> int:
    model, psi, xi = _model_and_weights(ctx.cfg)
    r = ctx.args.order if ctx.args.order is not None else ctx.cfg.order
    sd = perturb.spectral_data(model, r, psi, xi)
    fd, fd_err = perturb.lambda_jet_fd(model, r + 2)
    doc = sd.to_json()
    doc["lambda_jet_fd"] = fd.to_list()
    doc["fd_error_estimate"] = fd_err
    doc["agreement"] = perturb.jet_agreement(sd.lambda_jet, fd)
    ctx.write_json("jet.json", doc)
    print(json.dumps(doc, indent=2))
    return EXIT_OK


def cmd_expand(ctx: Context) -> int:
    model, psi, xi = _model_and_weights(ctx.cfg)
    r = ctx.args.order if ctx.args.order is not None else ctx.cfg.order
    es = perturb.expand_model(model, r, psi, xi)
    doc = es.to_json()
    ctx.write_json("expansion.json", doc)
    print(json.dumps(doc, indent=2))
    return EXIT_OK


def cmd_sample(ctx: Context) -> int:
    cfg, a = ctx.cfg, ctx.args
    seed = a.seed if a.seed is not None else cfg.seed
    trials = a.trials if a.trials is not None else cfg.trials
    if trials > 0 and seed is None:
        raise ConfigMissingSeed("a seed is required when trials > 0")
    n = a.n if a.n is not None else (cfg.n_list[0] if cfg.n_list else None)
    if n is None:
        raise ConfigError("sample needs --n or experiment.n_list")
    model = build_model(cfg.model)
    batch = montecarlo.sample(model, int(n), int(trials), int(seed or 0), ctx.threads)
    ctx.write_text("samples.csv", batch.to_csv())
    ctx.write_json("samples.json", batch.sidecar())
    print(json.dumps(batch.sidecar(), indent=2))
    return EXIT_OK


def _suite_pmf(ctx, model, es_full, psi, xi, experiments, checks):
    ns = ctx.cfg.n_list or DEFAULT_PMF_N

    def one(r):
        es = validate.truncate(es_full, r)
        return r, validate.sup_error_pmf(model, es, ns, "local", psi, xi), validate.sup_error_pmf(model, es, ns, "raw", psi, xi)

    for r, fit, raw in ctx.pmap(one, range(es_full.order + 1)):
        experiments[f"pmf_order{r}"] = fit
        experiments[f"pmf_order{r}_raw"] = raw
        checks.append(validate.Check(f"pmf_slope_order{r}", fit.slope, "within", -(r + 1) / 2, 0.35))


def _suite_edgeworth(ctx, model, es_full, psi, xi, experiments, checks):
    cfg = ctx.cfg
    top = max(es_full.order, 1)
    if es_full.order < 1:
        es_full = perturb.expand_model(model, 1, psi, xi)
    if model.kind == "rmp":
        if cfg.trials <= 0 or cfg.seed is None:
            raise ConfigMissingSeed("RMP validation needs Monte Carlo trials and a seed")
        lyap = perturb.lyapunov(model)
        lb = montecarlo.sample_rmp(model.spec, None, 1000, min(cfg.trials, 100000), cfg.seed, ctx.threads, burn_in=1000)
        mean, se = montecarlo.jackknife_mean(lb.sums / 1000)
        checks.append(validate.Check("lyapunov_vs_mc_in_se", abs(lyap - mean) / se, "<=", 3.0, detail={"lyapunov": lyap, "mc": mean, "se": se}))
        checks.append(validate.Check("sigma2_positive", es_full.sigma2, ">=", 1e-8))
        samples = {}
        for i, n in enumerate(cfg.n_list or [10000]):
            b = montecarlo.sample_rmp(model.spec, None, n, cfg.trials, cfg.seed + i + 1, ctx.threads)
            samples[n] = (b.sums - n * lyap) / math.sqrt(n)
        res = validate.sup_error_cdf_mc(samples, validate.truncate(es_full, 1))
        experiments["edgeworth_mc_order1"] = res
        for n, e, g in zip(res["n_list"], res["errors"], res["gaussian_errors"]):
            checks.append(validate.Check(f"edgeworth_beats_gaussian_n{n}", g - e, ">=", 0.0, detail={"order1": e, "gaussian": g}))
        return
    ns = cfg.n_list or DEFAULT_CDF_N
    fits = ctx.pmap(lambda r: validate.sup_error_cdf(model, validate.truncate(es_full, r), ns, None, psi, xi), range(top + 1))
    for r, fit in enumerate(fits):
        experiments[f"cdf_order{r}"] = fit
    f1 = fits[1]
    checks.append(validate.Check("cdf_slope_order1", f1.slope, "<=", -0.65))
    margin = min(g - e for n, e, g in zip(f1.n_list, f1.errors, f1.extra["gaussian_errors"]) if n >= 256) if any(n >= 256 for n in f1.n_list) else math.nan
    checks.append(validate.Check("cdf_order1_beats_gaussian", margin, ">=", 0.0))


def _suite_mlclt(ctx, model, es_full, psi, xi, experiments, checks):
    if model.orientation != "transfer":
        return
    g = ctx.cfg.g
    if g is None:
        g = LatticeSequence.indicator(0) if model.lattice else GaussianBump(0.0, 1.0)
    if g.lattice != model.lattice:
        raise ConfigError("test function and model disagree on lattice")
    ns = ctx.cfg.n_list or DEFAULT_MLCLT_N
    fits = ctx.pmap(lambda r: validate.mlclt_error(model, validate.truncate(es_full, r), g, ns, psi, xi), range(es_full.order + 1))
    for r, fit in enumerate(fits):
        experiments[f"mlclt_global_order{r}"] = fit
        checks.append(validate.Check(f"mlclt_slope_order{r}", fit.slope, "<=", -(r + 1) / 2))


def cmd_validate(ctx: Context) -> int:
    model, psi, xi = _model_and_weights(ctx.cfg)
    es = perturb.expand_model(model, ctx.cfg.order, psi, xi)
    suite = ctx.args.suite
    experiments: dict = {}
    checks: list = []
    rs, fd, rel = perturb.cross_check_jets(model, min(ctx.cfg.order + 2, 5))
    checks.append(validate.Check("jet_agreement", rel, "<=", 1e-7))
    if suite in ("pmf", "all") and model.lattice:
        _suite_pmf(ctx, model, es, psi, xi, experiments, checks)
    if suite in ("edgeworth", "all") and not model.lattice:
        _suite_edgeworth(ctx, model, es, psi, xi, experiments, checks)
    if suite in ("mlclt", "all"):
        _suite_mlclt(ctx, model, es, psi, xi, experiments, checks)
    if suite == "pmf" and not model.lattice:
        raise ConfigError("pmf suite needs a lattice model")
    meta = {"model": model.kind, "model_hash": model.model_hash(), "order": es.order, "suite": suite, "sigma2": es.sigma2}
    ts = None if ctx.deterministic else _dt.datetime.now(_dt.timezone.utc).isoformat()
    doc = validate.report(experiments, checks, meta, ts)
    text = json.dumps(doc, indent=2, allow_nan=False) + "\n"
    ctx.write_text("report.json", text)
    for name, fit in experiments.items():
        if isinstance(fit, validate.RateFit):
            ctx.write_text(f"{name}.csv", fit.to_csv())
    for c in doc["checks"]:
        print(f"{'PASS' if c['passed'] else 'FAIL'} {c['name']}: measured {c['measured']:.6g}")
    return EXIT_OK if doc["passed"] else EXIT_FAILED


def _parse_range(text: str) -> np.ndarray:
    try:
        a, b, step = (float(v) for v in text.split(":"))
    except ValueError as exc:
        raise ConfigError("--s-range must look like a:b:step") from exc
    if step <= 0 or b < a:
        raise ConfigError("--s-range needs a <= b and step > 0")
    count = int(math.floor((b - a) / step + 1e-9)) + 1
    return a + step * np.arange(count)


def cmd_scan(ctx: Context) -> int:
    model = build_model(ctx.cfg.model)
    grid = _parse_range(ctx.args.s_range)
    if ctx.args.what == "radius":
        pts = perturb.radius_scan(model, grid, ctx.threads)
        text = _csv(
            ["s", "radius", "second", "flagged", "unit_modulus"],
            [(p.s, p.radius, p.second, int(p.flagged), int(p.unit_modulus)) for p in pts],
        )
        ctx.write_text("radius_scan.csv", text)
    else:
        n_max = ctx.args.n_max

        def one(s):
            return [(s, p.n, p.log_norm, p.norm) for p in perturb.decay_scan(model, s, n_max)]

        rows = [row for part in ctx.pmap(one, grid) for row in part]
        text = _csv(["s", "n", "log_norm", "norm"], rows)
        ctx.write_text("decay_scan.csv", text)
    sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="output directory (overrides OUTPUT_DIR and the config)")
    common.add_argument("--deterministic", action="store_true", help="omit timestamps from outputs")
    common.add_argument("--threads", type=int, default=1, help="worker threads for scans and sampling")

    p = argparse.ArgumentParser(prog="spectral-edgeworth", description=__doc__.splitlines()[0])
    p.add_argument("--print-schema", action="store_true", help="print the config file schema and exit")
    sub = p.add_subparsers(dest="command")

    s = sub.add_parser("model-validate", parents=[common], help="build a model and print its diagnostics")
    s.add_argument("config")
    s = sub.add_parser("jet", parents=[common], help="eigenvalue jet by both methods")
    s.add_argument("config")
    s.add_argument("--order", type=int)
    s = sub.add_parser("expand", parents=[common], help="expansion polynomials as JSON")
    s.add_argument("config")
    s.add_argument("--order", type=int)
    s = sub.add_parser("sample", parents=[common], help="Monte Carlo Birkhoff sums as CSV")
    s.add_argument("config")
    s.add_argument("--n", type=int)
    s.add_argument("--trials", type=int)
    s.add_argument("--seed", type=int)
    s = sub.add_parser("validate", parents=[common], help="compare expansions with oracles")
    s.add_argument("config")
    s.add_argument("--suite", choices=["edgeworth", "mlclt", "pmf", "all"], default="all")
    s = sub.add_parser("scan", parents=[common], help="spectral radius or decay scans as CSV")
    s.add_argument("config")
    s.add_argument("--what", choices=["radius", "decay"], default="radius")
    s.add_argument("--s-range", default="0.1:3.14159:0.1")
    s.add_argument("--n-max", type=int, default=200)
    sub.add_parser("print-schema", help="print the config file schema")
    return p


COMMANDS = {
    "model-validate": cmd_model_validate,
    "jet": cmd_jet,
    "expand": cmd_expand,
    "sample": cmd_sample,
    "validate": cmd_validate,
    "scan": cmd_scan,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.print_schema or args.command == "print-schema":
        sys.stdout.write(cfgmod.SCHEMA_TEXT)
        return EXIT_OK
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_ERROR
    try:
        cfg = cfgmod.load_config(args.config)
        return COMMANDS[args.command](Context(args, cfg))
    except SpectralError as exc:
        sys.stderr.write(json.dumps({"error": exc.to_dict()}) + "\n")
        return EXIT_ERROR
    except (OSError, ValueError) as exc:
        sys.stderr.write(json.dumps({"error": {"code": "ERROR", "message": str(exc)}}) + "\n")
        return EXIT_ERROR


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())

"""Command-line front end.

Parses model configs, dispatches engine, Monte Carlo, and experiment
runs, and writes the results as CSV (canonical) or JSON artifacts.
Every artifact embeds the resolved run configuration as header
comments, numbers carry 17 significant digits, and identical requests
(seed included) produce byte-identical files.  Exit status: 0 for
success or a PASS verdict, 1 for a FAIL verdict or a failed run, 2
for usage and configuration errors.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import re
import sys
from dataclasses import dataclass
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np

from .config import load_model
from .constants import constant_set
from .errors import BranchLabError, ConfigError, HypothesisViolation
from .experiments import (
    ConvergenceReport,
    verify_death,
    verify_deathfin,
    verify_diff_lemmas,
    verify_finalstage,
    verify_foster,
    verify_laplace_W,
    verify_local,
)
from .model import ProcessSpec, _collect_moments, check_assumptions
from .montecarlo import SimConfig, conditional_estimate, estimate_pmf_T
from .pgf import build_survival_table, conditional_transform, extinction_time_pmf
from .zoo import STOCK_MODELS, stock_model

__all__ = ["RunRequest", "main", "run"]


@dataclass(frozen=True)
class RunRequest:
    """One fully resolved CLI invocation.

    ``command`` is the subcommand; ``target`` carries the theorem or
    lemma id when the command takes one.  ``model`` is either a stock
    model name or a path to a YAML config.  Overrides left at None
    fall back to per-command defaults.
    """

    command: str
    target: str | None = None
    model: str = "two_type_cascade"
    n: int | None = None
    m: int | None = None
    k: int | None = None
    lam: float | None = None
    s: float | None = None
    x: float | None = None
    seed: int = 0
    replicates: int | None = None
    workers: int = 1
    output: str | None = None
    format: str = "csv"
    plotdata: bool = False


class UsageError(Exception):
    def __init__(self, message: str, *, field: str | None = None,
                 stanza: str | None = None):
        super().__init__(message)
        self.field = field
        self.stanza = stanza


_MODEL_STANZA = """\
  types: 2
  laws:
    - parent: 1
      kind: product
      children:
        1: {family: geometric, mean: 1.0}
        2: {family: poisson, mean: 1.0}
    - parent: 2
      kind: product
      children:
        2: {family: geometric, mean: 1.0}"""

_EXAMPLES = {
    "validate": "branchlab validate --model two_type_cascade",
    "constants": "branchlab constants --model three_type_chain --format json",
    "extinction": "branchlab extinction --model single_geometric --n 1000",
    "conditional":
        "branchlab conditional --model two_type_cascade --n 200 --m 150 --s 0.6",
    "mc": "branchlab mc --model two_type_cascade --n 30 --replicates 100000",
    "theorem": "branchlab theorem death --n 20000 --k 200 --lambda 1",
    "lemma": "branchlab lemma laplace --model two_type_cascade",
}


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, float):
        return format(x, ".17g")
    return str(x)


def _clean(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


@dataclass
class Table:
    """Uniform tabular artifact for the non-experiment commands."""

    name: str
    model: str
    columns: tuple[str, ...]
    rows: list[tuple]
    meta: dict
    verdict: bool | None = None
    curves: Mapping[str, list[tuple[float, float]]] | None = None

    def to_csv(self) -> str:
        lines = [f"# table={self.name}", f"# model={self.model}"]
        if self.verdict is not None:
            lines.append(f"# verdict={'PASS' if self.verdict else 'FAIL'}")
        for key in sorted(self.meta):
            lines.append(f"# {key}={_fmt(self.meta[key])}")
        lines.append(",".join(self.columns))
        for row in self.rows:
            lines.append(",".join(_fmt(cell) for cell in row))
        return "\n".join(lines) + "\n"

    def to_doc(self) -> dict:
        return {
            "table": self.name,
            "model": self.model,
            "verdict": self.verdict,
            "meta": {k: _clean(v) for k, v in self.meta.items()},
            "columns": list(self.columns),
            "rows": [[_clean(c) for c in row] for row in self.rows],
        }


# ------------------------------------------------------------- model lookup


def _resolve_model(name_or_path: str) -> ProcessSpec:
    if name_or_path in STOCK_MODELS:
        return stock_model(name_or_path)
    if Path(name_or_path).exists():
        return load_model(name_or_path)
    known = ", ".join(sorted(STOCK_MODELS))
    raise UsageError(
        f"'{name_or_path}' is neither a stock model ({known}) nor a "
        "readable config file",
        field="model", stanza=_MODEL_STANZA)


def _require(req: RunRequest, *names: str) -> None:
    for name in names:
        if getattr(req, name) is None:
            raise UsageError(
                f"command '{req.command}' requires --{name}",
                field=name, stanza="  " + _EXAMPLES[req.command])


def _check_request(req: RunRequest) -> None:
    if req.format not in ("csv", "json"):
        raise UsageError(f"unknown format '{req.format}'", field="format")
    if req.workers < 1:
        raise UsageError("workers must be at least 1", field="workers")
    if req.replicates is not None and req.replicates < 1:
        raise UsageError(
            f"replicates must be at least 1 (got {req.replicates})",
            field="replicates", stanza="  " + _EXAMPLES["mc"])
    for name in ("n", "m", "k"):
        value = getattr(req, name)
        if value is not None and value < 0:
            raise UsageError(f"{name} must be nonnegative", field=name)
    if req.s is not None and not 0.0 <= req.s <= 1.0:
        raise UsageError("s must lie in [0, 1]", field="s")
    if req.x is not None and not 0.0 < req.x < 1.0:
        raise UsageError("x must lie in (0, 1)", field="x")
    if req.lam is not None and req.lam < 0.0:
        raise UsageError("lambda must be nonnegative", field="lambda")


# ----------------------------------------------------------------- commands


def _cmd_validate(req: RunRequest, spec: ProcessSpec, resolved: dict):
    md = _collect_moments(spec)
    violations = check_assumptions(spec)
    bad = {(v.kind, v.type_index) for v in violations}
    n = spec.n_types

    rows: list[tuple] = []
    for i in range(1, n + 1):
        for j in range(1, n + 1):
            rows.append(("mean", f"{i}->{j}", float(md.mean_matrix[i - 1, j - 1]),
                         None))
    for i in range(1, n + 1):
        rows.append(("own_mean", str(i), float(md.mean_matrix[i - 1, i - 1]),
                     ("non_critical", i) not in bad))
    for i in range(1, n):
        rows.append(("link_mean", f"{i}->{i + 1}", md.link_means[i - 1],
                     ("missing_link", i) not in bad))
    for i in range(1, n + 1):
        rows.append(("half_variance", str(i), md.b[i - 1],
                     ("degenerate_variance", i) not in bad))
    rows.append(("second_moments_finite", "", float(md.all_moments_finite),
                 md.all_moments_finite))
    for v in violations:
        rows.append(("violation", str(v.type_index), math.nan, False))

    table = Table("validate", spec.name, ("quantity", "index", "value", "ok"),
                  rows, {"n_types": n, "violations": len(violations)},
                  verdict=not violations)
    return table


def _cmd_constants(req: RunRequest, spec: ProcessSpec, resolved: dict):
    from .model import validate_hypothesis_A

    cs = constant_set(validate_hypothesis_A(spec))
    rows: list[tuple] = []
    for i in range(1, cs.n_types + 1):
        rows.append(("decay_exponent", str(i), cs.gamma[i - 1]))
        rows.append(("survival_amplitude", str(i), cs.survival_amplitude[i - 1]))
        rows.append(("local_amplitude", str(i), cs.local_amplitude[i - 1]))
        rows.append(("half_variance", str(i), cs.b[i - 1]))
    for i, d in enumerate(cs.chain, start=1):
        rows.append(("chain", str(i), d))
    for i, mean in enumerate(cs.link_means, start=1):
        rows.append(("link_mean", f"{i}->{i + 1}", mean))
    return Table("constants", spec.name, ("quantity", "index", "value"),
                 rows, {"n_types": cs.n_types})


def _cmd_extinction(req: RunRequest, spec: ProcessSpec, resolved: dict):
    n = req.n if req.n is not None else 1000
    if n < 1:
        raise UsageError("n must be at least 1", field="n")
    resolved["n"] = n
    table = build_survival_table(spec, n)
    types = range(1, spec.n_types + 1)
    cols = ["n"]
    cols += [f"survival:type={i}" for i in types]
    cols += [f"pmf:type={i}" for i in types]
    rows = []
    curves: dict[str, list[tuple[float, float]]] = {}
    for m in range(1, n + 1):
        surv = [table.survival(i, m) for i in types]
        pmf = [extinction_time_pmf(table, i, m) for i in types]
        rows.append((m, *surv, *pmf))
        for i, v in zip(types, surv):
            curves.setdefault(f"survival:type={i}", []).append((float(m), v))
        for i, v in zip(types, pmf):
            curves.setdefault(f"pmf:type={i}", []).append((float(m), v))
    return Table("extinction", spec.name, tuple(cols), rows,
                 {"n_types": spec.n_types}, curves=curves)


def _cmd_conditional(req: RunRequest, spec: ProcessSpec, resolved: dict):
    _require(req, "n", "m", "s")
    if not req.m < req.n:
        raise UsageError("m must be smaller than n", field="m",
                         stanza="  " + _EXAMPLES["conditional"])
    resolved.update(n=req.n, m=req.m, s=req.s)
    table = build_survival_table(spec, req.n)
    args = (1.0,) * (spec.n_types - 1) + (req.s,)
    value = conditional_transform(spec, table, args, m=req.m, n=req.n)
    rows = [(req.n, req.m, req.s, value)]
    return Table("conditional", spec.name, ("n", "m", "s", "value"), rows,
                 {"n_types": spec.n_types})


def _mc_config(req: RunRequest, n: int, snapshots=()) -> SimConfig:
    return SimConfig(master_seed=req.seed,
                     replicates=req.replicates if req.replicates is not None
                     else 10_000,
                     max_steps=n, snapshot_times=snapshots)


def _cmd_mc(req: RunRequest, spec: ProcessSpec, resolved: dict):
    n = req.n if req.n is not None else 30
    if n < 1:
        raise UsageError("n must be at least 1", field="n")
    resolved.update(n=n, seed=req.seed,
                    replicates=req.replicates if req.replicates is not None
                    else 10_000)

    if req.m is not None:
        # conditional mode: E[s^(last-type count at m) | extinction at n]
        _require(req, "s")
        if not req.m < n:
            raise UsageError("m must be smaller than n", field="m")
        resolved.update(m=req.m, s=req.s)
        config = _mc_config(req, n, snapshots=(req.m,))
        est = conditional_estimate(
            spec, config, n,
            lambda summary: req.s ** summary.snapshots[req.m][-1],
            workers=req.workers)
        table = build_survival_table(spec, n)
        args = (1.0,) * (spec.n_types - 1) + (req.s,)
        exact = conditional_transform(spec, table, args, m=req.m, n=n)
        z = (est.value - exact) / est.stderr if est.stderr > 0 else math.nan
        rows = [(n, req.m, req.s, est.value, est.stderr, est.acceptance_rate,
                 exact, z)]
        return Table("mc", spec.name,
                     ("n", "m", "s", "estimate", "stderr", "acceptance",
                      "exact", "z"),
                     rows, {"replicates": config.replicates,
                            "seed": req.seed, "mode": "conditional"})

    config = _mc_config(req, n)
    estimates = estimate_pmf_T(spec, config, workers=req.workers)
    table = build_survival_table(spec, n)
    rows = []
    curves: dict[str, list[tuple[float, float]]] = {"estimate": [], "exact": []}
    for nn in sorted(estimates):
        est = estimates[nn]
        exact = extinction_time_pmf(table, 1, nn)
        z = (est.value - exact) / est.stderr if est.stderr > 0 else math.nan
        rows.append((nn, est.value, est.stderr, exact, z))
        curves["estimate"].append((float(nn), est.value))
        curves["exact"].append((float(nn), exact))
    return Table("mc", spec.name, ("n", "estimate", "stderr", "exact", "z"),
                 rows, {"replicates": config.replicates, "seed": req.seed,
                        "mode": "pmf"},
                 curves=curves)


def _log_grid(lo: int, hi: int, points: int) -> tuple[int, ...]:
    if hi <= lo:
        return (hi,)
    return tuple(sorted({int(round(v)) for v in np.geomspace(lo, hi, points)}))


_THEOREMS: dict[str, Callable] = {
    "foster": verify_foster,
    "local": verify_local,
    "finalstage": verify_finalstage,
    "death": verify_death,
    "deathfin": verify_deathfin,
}

_LEMMAS: dict[str, Callable] = {
    "laplace": verify_laplace_W,
    "diff": verify_diff_lemmas,
}


def _cmd_theorem(req: RunRequest, spec: ProcessSpec, resolved: dict):
    fn = _THEOREMS[req.target]
    kwargs: dict = {"workers": req.workers}
    if req.target in ("foster", "local"):
        if req.n is not None:
            kwargs["n_grid"] = _log_grid(100, req.n, 5)
            resolved["n"] = req.n
        return fn(spec, **kwargs)
    if req.n is not None:
        kwargs["n"] = resolved["n"] = req.n
    if req.target == "finalstage":
        if req.lam is not None:
            kwargs["lam"] = resolved["lam"] = req.lam
        if req.x is not None:
            kwargs["xs"] = (req.x,)
            resolved["x"] = req.x
    elif req.target == "death":
        if req.k is not None:
            kwargs["k"] = resolved["k"] = req.k
        if req.lam is not None:
            kwargs["lambdas"] = (req.lam,)
            resolved["lam"] = req.lam
    elif req.target == "deathfin":
        if req.k is not None:
            kwargs["ks"] = (req.k,)
            resolved["k"] = req.k
        if req.s is not None:
            kwargs["s_grid"] = (req.s,)
            resolved["s"] = req.s
    return fn(spec, **kwargs)


def _cmd_lemma(req: RunRequest, spec: ProcessSpec, resolved: dict):
    fn = _LEMMAS[req.target]
    kwargs: dict = {"workers": req.workers}
    if req.target == "diff":
        if req.n is not None:
            kwargs["n_grid"] = _log_grid(max(100, req.n // 10), req.n, 3)
            resolved["n"] = req.n
        if req.lam is not None:
            kwargs["lam"] = resolved["lam"] = req.lam
    return fn(spec, **kwargs)


# ------------------------------------------------------------ artifact I/O


def _config_lines(resolved: dict) -> list[str]:
    return [f"# config:{key}={_fmt(resolved[key])}" for key in sorted(resolved)]


def _artifact_path(req: RunRequest, exp_id: str, model_name: str) -> Path:
    if req.output is not None:
        return Path(req.output)
    outdir = Path(os.environ.get("BRANCHLAB_OUTDIR", "."))
    stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%SZ")
    return outdir / f"{exp_id}_{model_name}_{stamp}.{req.format}"


def _slug(label: str) -> str:
    return re.sub(r"[^0-9A-Za-z._=+-]+", "-", label).strip("-") or "curve"


def _report_curves(report: ConvergenceReport) -> dict:
    curves: dict[str, list[tuple[float, float]]] = {}
    for row in report.rows:
        params = dict(row.params)
        x = params.get("n")
        if x is None and params:
            x = next(iter(params.values()))
        if x is None:
            continue
        y = row.ratio if math.isfinite(row.ratio) else row.value
        label = row.part or report.experiment
        curves.setdefault(label, []).append((float(x), float(y)))
    return curves


def _write_plotdata(stem: Path, curves: Mapping[str, Sequence[tuple]]) -> list[Path]:
    written = []
    for label in sorted(curves):
        points = curves[label]
        path = stem.parent / f"{stem.name}_{_slug(label)}.dat"
        lines = [f"{_fmt(float(x))} {_fmt(float(y))}" for x, y in points]
        path.write_text("\n".join(lines) + "\n")
        written.append(path)
    return written


def _emit(req: RunRequest, resolved: dict, payload) -> tuple[int, list[Path]]:
    if isinstance(payload, ConvergenceReport):
        exp_id = payload.experiment
        model_name = payload.model
        verdict = payload.passed
        if req.format == "csv":
            text = "\n".join(_config_lines(resolved)) + "\n" + payload.to_csv()
        else:
            doc = {"config": resolved, "report": json.loads(payload.to_json())}
            text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
        curves = _report_curves(payload)
    else:
        exp_id = payload.name
        model_name = payload.model
        verdict = payload.verdict
        if req.format == "csv":
            text = "\n".join(_config_lines(resolved)) + "\n" + payload.to_csv()
        else:
            doc = {"config": resolved, "table": payload.to_doc()}
            text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
        curves = payload.curves or {}

    path = _artifact_path(req, exp_id, model_name)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    written = [path]
    if req.plotdata and curves:
        stem = path.with_suffix("")
        written += _write_plotdata(stem, curves)

    if verdict is None:
        print(f"{exp_id} {model_name}: ok")
        code = 0
    else:
        print(f"{exp_id} {model_name}: {'PASS' if verdict else 'FAIL'}")
        code = 0 if verdict else 1
    for p in written:
        print(f"wrote {p}")
    return code, written


_HANDLERS = {
    "validate": _cmd_validate,
    "constants": _cmd_constants,
    "extinction": _cmd_extinction,
    "conditional": _cmd_conditional,
    "mc": _cmd_mc,
    "theorem": _cmd_theorem,
    "lemma": _cmd_lemma,
}


def _print_usage_error(exc: UsageError) -> None:
    print(f"error: {exc}", file=sys.stderr)
    if exc.field is not None:
        print(f"field: {exc.field}", file=sys.stderr)
    if exc.stanza is not None:
        print(f"example:\n{exc.stanza}", file=sys.stderr)


def run(request: RunRequest) -> int:
    """Execute one request; returns the process exit status."""
    try:
        _check_request(request)
        spec = _resolve_model(request.model)
        resolved = {"command": request.command, "model": request.model,
                    "format": request.format, "workers": request.workers}
        if request.target is not None:
            resolved["target"] = request.target
        payload = _HANDLERS[request.command](request, spec, resolved)
        code, _ = _emit(request, resolved, payload)
        return code
    except UsageError as exc:
        _print_usage_error(exc)
        return 2
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        if exc.field is not None:
            print(f"field: {exc.field}", file=sys.stderr)
        print(f"example:\n{_MODEL_STANZA}", file=sys.stderr)
        return 2
    except HypothesisViolation as exc:
        print(f"model fails the standing assumptions: {exc}", file=sys.stderr)
        print(f"inspect it with: branchlab validate --model {request.model}",
              file=sys.stderr)
        return 2
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except BranchLabError as exc:
        print(f"run failed: {exc}", file=sys.stderr)
        return 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="branchlab",
        description="Exact and Monte Carlo analysis of strongly critical "
                    "decomposable branching cascades.")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--model", default="two_type_cascade",
                        help="stock model name or YAML config path")
    common.add_argument("--n", type=int)
    common.add_argument("--m", type=int)
    common.add_argument("--k", type=int)
    common.add_argument("--lambda", dest="lam", type=float)
    common.add_argument("--s", type=float)
    common.add_argument("--x", type=float)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--replicates", type=int)
    common.add_argument("--workers", type=int, default=1)
    common.add_argument("--output", help="artifact path (default: "
                        "<experiment>_<model>_<timestamp>.<format> under "
                        "$BRANCHLAB_OUTDIR or the working directory)")
    common.add_argument("--format", choices=("csv", "json"), default="csv")
    common.add_argument("--plotdata", action="store_true",
                        help="also write two-column .dat files per curve")

    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in [
        ("validate", "check the standing assumptions, print moments"),
        ("constants", "print the derived constants"),
        ("extinction", "tabulate survival and extinction-time pmf"),
        ("conditional", "conditional pgf of the last type at time m "
                        "given extinction at n"),
        ("mc", "Monte Carlo estimates against exact values"),
    ]:
        sub.add_parser(name, parents=[common], help=helptext)
    p_theorem = sub.add_parser("theorem", parents=[common],
                               help="run a limit-theorem experiment")
    p_theorem.add_argument("target", choices=sorted(_THEOREMS))
    p_lemma = sub.add_parser("lemma", parents=[common],
                             help="run a building-block experiment")
    p_lemma.add_argument("target", choices=sorted(_LEMMAS))
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = _build_parser().parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 2
    request = RunRequest(
        command=args.command, target=getattr(args, "target", None),
        model=args.model, n=args.n, m=args.m, k=args.k, lam=args.lam,
        s=args.s, x=args.x, seed=args.seed, replicates=args.replicates,
        workers=args.workers, output=args.output, format=args.format,
        plotdata=args.plotdata)
    return run(request)


if __name__ == "__main__":
    sys.exit(main())

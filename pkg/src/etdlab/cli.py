"""Command-line entry point: ``etdlab <command> ...``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import golden, report
from .environments import CATALOG, DEFAULT_C, GOLDEN_TASKS, build
from .harness import (
    BASE_SEED,
    ExperimentSpec,
    SweepResult,
    divergence_table,
    spec_for,
    sweep,
    tail_table,
)
from .learners import Algorithm
from .mdp import load_task
from .spectral import key_matrices

log = logging.getLogger("etdlab")

ALL_ALGOS = [a.value for a in Algorithm]
EXIT_USAGE = 2
DEFAULT_OUT = "etdlab_out"
C_SCAN_VALUES = (0.0, 0.005, 0.0084, 0.05, 0.5, 9.0)
ALPHA_SCAN_VALUES = (0.001, 0.005, 0.01, 0.05, 0.1)
# Baird ETD/TETD use a larger batch so that full divergence is a strong statement.
BAIRD_EMPHATIC_RUNS = 50


class UsageError(Exception):
    pass


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _names(text: str) -> list[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


def _task(name: str):
    if name in CATALOG:
        return build(name)
    if Path(name).is_file():
        return load_task(name)
    raise UsageError(f"unknown task {name!r}; choose from {', '.join(CATALOG)} or pass a task JSON file")


def _task_ref(name: str):
    """Catalog tasks stay as names so their spec hashes are short and stable."""
    if name in CATALOG:
        return name
    return _task(name)


def _algos(names) -> list[str]:
    out = []
    for n in names:
        try:
            out.append(Algorithm.parse(n).value)
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
    return out


def _out_dir(args) -> Path:
    return Path(args.out or os.environ.get("ETDLAB_OUT") or DEFAULT_OUT)


def _formats(fmt: str) -> set[str]:
    return {"csv", "md", "svg"} if fmt == "all" else {fmt}


def _base_spec(args, env: str, algo: str) -> ExperimentSpec:
    extra = {}
    if args.beta is not None:
        extra["beta"] = args.beta
    if args.eta is not None:
        extra["eta"] = args.eta
    if args.fmax is not None:
        extra["f_max"] = args.fmax
    c = args.c[0] if args.c else None
    spec = spec_for(env, algo, alpha=args.alpha[0] if args.alpha else 0.01, c=c,
                    steps=args.steps, n_runs=args.runs or 10, base_seed=args.seed, **extra)
    return replace(spec, task=_task_ref(env))


def _emit(bundle: report.ReportBundle, stem: str, result: SweepResult, formats: set[str], markdown: str,
          mirrors: str, svg_label: str = "algorithm", title: str = "") -> list[Path]:
    hashes = [c.spec_hash for c in result.cells]
    specs = result.metadata.get("specs")
    written = []
    if "csv" in formats:
        written.append(bundle.write(f"{stem}.csv", report.sweep_to_csv(result), mirrors, hashes, specs))
        written.append(bundle.write(f"{stem}_runs.csv", report.runs_to_csv(result), mirrors, hashes, specs))
        written.append(bundle.write(f"{stem}_curves.csv", report.curves_to_csv(result), mirrors, hashes, specs))
    if "md" in formats:
        written.append(bundle.write(f"{stem}.md", markdown, mirrors, hashes, specs))
    if "svg" in formats:
        for env in result.envs():
            sub = SweepResult([c for c in result.cells if c.env == env], result.axis)
            try:
                svg = report.sweep_svg(sub, svg_label, title or f"{env}: mean RMSE ± 1 std")
            except ValueError as exc:
                log.warning("no SVG for %s: %s", env, exc)
                continue
            name = f"{stem}_{env}.svg" if len(result.envs()) > 1 else f"{stem}.svg"
            written.append(bundle.write(name, svg, mirrors, hashes, specs))
    return written


# -- commands -------------------------------------------------------------------


def cmd_analyze(args) -> int:
    task = _task(args.task)
    rep = key_matrices(task, args.c or [DEFAULT_C.get(task.name, 9.0)])
    if args.json:
        print(json.dumps(rep.to_dict(), indent=1))
    else:
        print(report.key_matrix_markdown(rep))
    return 0


def cmd_run(args) -> int:
    env, algo = args.env[0], _algos(args.algo or ["RETD"])[0]
    spec = _base_spec(args, env, algo)
    result = tail_table([spec], workers=1)
    bundle = report.ReportBundle(_out_dir(args))
    _emit(bundle, f"run_{env}_{algo}", result, _formats(args.format), report.sweep_markdown(result), "single cell")
    bundle.finalize()
    print(report.sweep_markdown(result))
    return 0


def _cmd_sweep(args, axis: str) -> int:
    env = args.env[0]
    algo = _algos(args.algo or (["RETD"] if axis == "c" else ["TD"]))[0]
    values = args.values or (list(C_SCAN_VALUES) if axis == "c" else list(ALPHA_SCAN_VALUES))
    result = sweep(axis, values, _base_spec(args, env, algo), workers=args.workers)
    bundle = report.ReportBundle(_out_dir(args))
    _emit(bundle, f"sweep_{axis}_{env}_{algo}", result, _formats(args.format), report.sweep_markdown(result),
          f"{axis} scan", svg_label=axis)
    bundle.finalize()
    print(report.sweep_markdown(result))
    return 0


def cmd_sweep_alpha(args) -> int:
    return _cmd_sweep(args, "alpha")


def cmd_sweep_c(args) -> int:
    return _cmd_sweep(args, "c")


def preset_specs(envs, algos, alpha: float = 0.01, runs: int | None = None, steps: int | None = None,
                 base_seed: int = BASE_SEED) -> list[ExperimentSpec]:
    specs = []
    for env in envs:
        for algo in algos:
            n = runs
            if n is None:
                emphatic = algo in ("ETD", "TETD")
                n = BAIRD_EMPHATIC_RUNS if env == "baird_7state" and emphatic else 10
            specs.append(spec_for(env, algo, alpha=alpha, steps=steps, n_runs=n, base_seed=base_seed))
    return specs


def cmd_table(args) -> int:
    envs = args.env or list(GOLDEN_TASKS)
    for e in envs:
        _task(e)
    algos = _algos(args.algo or ALL_ALGOS)
    specs = preset_specs(envs, algos, args.alpha[0] if args.alpha else 0.01, args.runs, args.steps, args.seed)
    return _write_table(args, args.which, specs)[0]


def _write_table(args, which: str, specs) -> tuple[int, SweepResult]:
    if which == "tail":
        result = tail_table(specs, workers=args.workers)
        md = report.tail_markdown(result)
        mirrors = "tail-average RMSE table"
    else:
        result = divergence_table(specs, workers=args.workers)
        md = report.divergence_markdown(result)
        mirrors = "divergence and maximum-RMSE table"
    bundle = report.ReportBundle(_out_dir(args))
    _emit(bundle, f"table_{which}", result, _formats(args.format), md, mirrors)
    bundle.finalize()
    print(md)
    return 0, result


def _report_checks(checks) -> int:
    failed = 0
    for chk in checks:
        print(chk.line())
        if chk.kind == "analytic" and not chk.passed:
            failed += 1
    n_warn = sum(1 for c in checks if c.kind == "stochastic" and not c.passed)
    print(f"analytic failures: {failed}; stochastic warnings: {n_warn}")
    return 1 if failed else 0


def cmd_reproduce(args) -> int:
    which = args.which
    if which in ("tail", "divergence"):
        envs = args.env or list(GOLDEN_TASKS)
        unknown = [e for e in envs if e not in GOLDEN_TASKS]
        if unknown:
            raise UsageError(f"reproduce {which} compares against golden tasks only; got {unknown}")
        specs = preset_specs(envs, _algos(args.algo or ALL_ALGOS), 0.01, args.runs, args.steps, args.seed)
        _, result = _write_table(args, which, specs)
        checks = golden.analytic_checks()
        checks += golden.tail_checks(result) if which == "tail" else golden.divergence_checks(result)
        return _report_checks(checks)
    if which == "c-scan":
        env = (args.env or ["two_state_cetd_counterexample"])[0]
        values = args.values or list(C_SCAN_VALUES)
        base = replace(spec_for(env, "RETD", 0.01, steps=args.steps, n_runs=args.runs or 10, base_seed=args.seed),
                       task=_task_ref(env))
        result = sweep("c", values, base, workers=args.workers)
        title = f"{env}: RETD c-scan at alpha=0.01"
        bundle = report.ReportBundle(_out_dir(args))
        _emit(bundle, f"c_scan_{env}", result, _formats(args.format), report.sweep_markdown(result),
              "RETD regularization scan", svg_label="c", title=title)
        bundle.finalize()
        print(report.sweep_markdown(result))
        return _report_checks(golden.analytic_checks())
    if which == "alpha-scan":
        envs = args.env or ["two_state_new"]
        algos = _algos(args.algo or ALL_ALGOS)
        values = args.values or list(ALPHA_SCAN_VALUES)
        cells, meta = [], {"specs": {}, "seeds": {}}
        for env in envs:
            for algo in algos:
                base = spec_for(env, algo, steps=args.steps, n_runs=args.runs or 10, base_seed=args.seed)
                res = sweep("alpha", values, replace(base, task=_task_ref(env)), workers=args.workers)
                cells += res.cells
                for k in meta:
                    meta[k].update(res.metadata[k])
        result = SweepResult(cells, "alpha", meta)
        bundle = report.ReportBundle(_out_dir(args))
        fmts = _formats(args.format)
        _emit(bundle, "alpha_scan", result, fmts - {"svg"}, report.sweep_markdown(result), "step-size slices")
        if "svg" in fmts:
            for env in result.envs():
                svg = alpha_scan_svg(result, env)
                if svg:
                    bundle.write(f"alpha_scan_{env}.svg", svg, "step-size slices",
                                 [c.spec_hash for c in result.cells if c.env == env])
        bundle.finalize()
        print(report.sweep_markdown(result))
        return 0
    # curves
    envs = args.env or list(GOLDEN_TASKS)
    specs = preset_specs(envs, _algos(args.algo or ALL_ALGOS), 0.01, args.runs, args.steps, args.seed)
    result = tail_table(specs, workers=args.workers)
    bundle = report.ReportBundle(_out_dir(args))
    _emit(bundle, "curves", result, _formats(args.format), report.tail_markdown(result), "learning curves")
    bundle.finalize()
    print(report.tail_markdown(result))
    return 0


def alpha_scan_svg(result: SweepResult, env: str) -> str | None:
    """Tail RMSE against log10(alpha), one line per algorithm; diverged cells leave gaps."""
    cells = [c for c in result.cells if c.env == env]
    alphas = sorted({c.alpha for c in cells})
    means, labels = [], []
    for algo in dict.fromkeys(c.algorithm for c in cells):
        row = {c.alpha: c for c in cells if c.algorithm == algo}
        means.append([np.nan if row[a].is_div else row[a].tail_mean for a in alphas])
        labels.append(algo)
    try:
        return report.render_svg(np.log10(alphas), means, labels, xlabel="log10(alpha)", ylabel="tail RMSE",
                                 title=f"{env}: tail RMSE by step size")
    except ValueError:
        return None


# -- parser ---------------------------------------------------------------------


def _add_run_flags(p: argparse.ArgumentParser, env_required: bool = False) -> None:
    p.add_argument("--env", type=_names, default=None, required=env_required, help="task name(s), comma-separated")
    p.add_argument("--algo", type=_names, default=None, help="algorithm(s), comma-separated")
    p.add_argument("--alpha", type=_floats, default=None, help="step size")
    p.add_argument("--c", type=_floats, default=None, help="RETD regularization")
    p.add_argument("--beta", type=float, default=None, help="TDRC regularization")
    p.add_argument("--eta", type=float, default=None, help="secondary step-size ratio (gradient TD)")
    p.add_argument("--fmax", type=float, default=None, help="TETD trace cap")
    p.add_argument("--runs", type=int, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--seed", type=int, default=BASE_SEED, help="base seed; run r uses seed + r")
    p.add_argument("--out", default=None, help="output directory (default $ETDLAB_OUT or ./etdlab_out)")
    p.add_argument("--format", choices=["csv", "md", "svg", "all"], default="all")
    p.add_argument("--workers", type=int, default=1)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="etdlab", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="exact key-matrix report for one task")
    p.add_argument("task", help="catalog name or task JSON file")
    p.add_argument("--c", type=_floats, default=None, help="RETD regularization values, e.g. 0,9")
    p.add_argument("--json", action="store_true", help="print machine-readable JSON instead of Markdown")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("run", help="one cell: seeded runs of one algorithm on one task")
    _add_run_flags(p, env_required=True)
    p.set_defaults(func=cmd_run)

    for name, func in (("sweep-alpha", cmd_sweep_alpha), ("sweep-c", cmd_sweep_c)):
        p = sub.add_parser(name, help=f"scan over {name.split('-')[1]}")
        _add_run_flags(p, env_required=True)
        p.add_argument("--values", type=_floats, default=None, help="scan values, comma-separated")
        p.set_defaults(func=func)

    p = sub.add_parser("table", help="tail-average or divergence table")
    p.add_argument("which", choices=["tail", "divergence"])
    _add_run_flags(p)
    p.set_defaults(func=cmd_table)

    p = sub.add_parser("reproduce", help="preset sweeps with comparison against published values")
    p.add_argument("which", choices=["tail", "divergence", "c-scan", "alpha-scan", "curves"])
    _add_run_flags(p)
    p.add_argument("--values", type=_floats, default=None, help="scan values for c-scan / alpha-scan")
    p.set_defaults(func=cmd_reproduce)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"etdlab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

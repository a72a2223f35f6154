"""Command-line entry point.

Subcommands: ``verify-bounds``, ``train``, ``ablate``, ``sweep`` and
``render``. Every command writes ``manifest.txt`` into its output directory
before doing any work. For the training commands the manifest body is a valid
config file, so ``train --config OUT/manifest.txt`` replays a run.

Exit codes: 0 success, 2 bound violation, 3 training abort, 64 usage,
66 missing input.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

from . import __version__
from . import config as cfgmod
from .numerics import ContractError
from .oracle import identical_domain_instance, random_instance, run_suite, theorems_holding, verify_instance
from .oracle import write_reports_csv
from .svg import line_chart
from .synthdata import generate
from .trainer import (ABLATION_ORDER, VARIANTS, TrainingAborted, dump_bundle, read_metrics_csv, train,
                      write_metrics_csv)

EXIT_OK = 0
EXIT_VIOLATION = 2
EXIT_ABORT = 3
EXIT_USAGE = 64
EXIT_NOINPUT = 66

SWEEP_PARAMS = ("gamma", "alpha", "proxy_loss")


class UsageError(Exception):
    pass


class MissingInput(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _default_out() -> str:
    return os.environ.get("EMIXLAB_OUT", "runs")


def _csv_list(text: str) -> list[str]:
    items = [s.strip() for s in text.split(",") if s.strip()]
    if not items:
        raise argparse.ArgumentTypeError("expected a comma-separated list")
    return items


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="emixlab", description="Domain adaptation lab: bound checks, training runs and ablations.")
    p.add_argument("--version", action="version", version=f"emixlab {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    vb = sub.add_parser("verify-bounds", help="check the learning bounds on random finite instances")
    vb.add_argument("--instances", type=int, default=1000)
    vb.add_argument("--seed", type=int, default=0)
    vb.add_argument("--out", default=None)
    vb.add_argument("--t3-form", choices=("doubled", "single"), default="doubled",
                    help="upper half of the sandwich bound: disparity weighted 2 (doubled) or 1 (single)")
    vb.add_argument("--identical", action="store_true", help="use identical-domain instances instead")

    def training_flags(sp, seed_help="overrides the config seed"):
        sp.add_argument("--config", default=None, help="key = value file; omitted means all defaults")
        sp.add_argument("--seed", type=int, default=None, help=seed_help)
        sp.add_argument("--iters", type=int, default=None, help="overrides iterations")
        sp.add_argument("--out", default=None)
        sp.add_argument("--jobs", type=int, default=1)

    tr = sub.add_parser("train", help="train one or more variants and plot combined risk and accuracy")
    training_flags(tr)
    tr.add_argument("--variants", type=_csv_list, default=None,
                    help=f"comma list from {','.join(VARIANTS)}; default is the config's own flags")

    ab = sub.add_parser("ablate", help="accuracy table over the five proxy variants")
    training_flags(ab, seed_help="first seed; defaults to the config seed")
    ab.add_argument("--seeds", type=int, default=5)

    sw = sub.add_parser("sweep", help="one run per parameter value, overlaid accuracy curves")
    training_flags(sw)
    sw.add_argument("--param", choices=SWEEP_PARAMS, required=True)
    sw.add_argument("--values", type=_csv_list, required=True)

    rd = sub.add_parser("render", help="rebuild the SVG of an output directory from its CSVs")
    rd.add_argument("--out", default=None)
    return p


# manifest

def write_manifest(out: Path, command: str, header: dict[str, str], body: str = "") -> None:
    out.mkdir(parents=True, exist_ok=True)
    lines = [f"# command: {command}", f"# version: {__version__}", f"# out: {out}",
             f"# started: {_dt.datetime.now(_dt.timezone.utc).isoformat(timespec='seconds')}"]
    lines += [f"# {k}: {v}" for k, v in header.items()]
    (out / "manifest.txt").write_text("\n".join(lines) + "\n" + body, encoding="utf-8")


def read_manifest_header(out: Path) -> dict[str, str]:
    path = out / "manifest.txt"
    if not path.exists():
        raise MissingInput(f"no manifest in {out}")
    header = {}
    for line in path.read_text(encoding="utf-8").splitlines():
        if line.startswith("# ") and ": " in line:
            k, v = line[2:].split(": ", 1)
            header[k] = v
    return header


# rendering

def _metrics_name(label: str, seed: int) -> str:
    return f"metrics_{label}_seed{seed}.csv"


def _load_series(out: Path, labels: list[str], seed: int) -> dict:
    series = {}
    for label in labels:
        path = out / _metrics_name(label, seed)
        if not path.exists():
            raise MissingInput(f"missing {path}")
        series[label] = read_metrics_csv(path)
    return series


def render_dir(out: Path) -> Path:
    """Rebuild the figure of a ``train`` or ``sweep`` directory from its CSVs alone."""
    header = read_manifest_header(out)
    command, labels, seed = header.get("command"), header.get("series", ""), int(header.get("seed", "0"))
    series = _load_series(out, [s for s in labels.split(",") if s], seed)
    acc = {k: ([m.iteration for m in ms], [m.target_acc for m in ms]) for k, ms in series.items()}
    if command == "train":
        risk = {k: ([m.iteration for m in ms], [m.combined_risk for m in ms]) for k, ms in series.items()}
        svg = line_chart([("combined risk", risk), ("target accuracy", acc)])
        path = out / "figure.svg"
    elif command == "sweep":
        svg = line_chart([(f"target accuracy by {header.get('param', '')}", acc)])
        path = out / "sweep.svg"
    else:
        raise MissingInput(f"nothing to render for command {command!r}")
    path.write_text(svg, encoding="utf-8")
    return path


# commands

def _out_dir(args) -> Path:
    return Path(args.out if args.out is not None else _default_out())


def _load_run_config(args) -> cfgmod.RunConfig:
    if args.config is None:
        run = cfgmod.RunConfig()
    else:
        if not Path(args.config).is_file():
            raise MissingInput(f"config file not found: {args.config}")
        run = cfgmod.load(args.config)
    if args.seed is not None:
        run = run.with_seed(args.seed)
    if args.iters is not None:
        run = cfgmod.RunConfig(replace(run.train, iterations=args.iters), run.task)
    return run


def cmd_verify_bounds(args) -> int:
    if args.instances < 1:
        raise UsageError("--instances must be positive")
    out = _out_dir(args)
    write_manifest(out, "verify-bounds", {"instances": str(args.instances), "seed": str(args.seed),
                                          "t3_form": args.t3_form, "identical": str(args.identical).lower()})
    if args.identical:
        make = identical_domain_instance
        results = [verify_instance(make(args.seed + i), t3_form=args.t3_form) for i in range(args.instances)]
    else:
        make = random_instance
        results = run_suite(args.instances, args.seed, t3_form=args.t3_form)
    write_reports_csv(out / "bounds.csv", results)
    counts = theorems_holding(results)
    n = len(results)
    all_ok = sum(res.holds for res in results)
    n_theorems = sum(c == n for c in counts.values())
    summary = f"theorems: {n_theorems}/{len(counts)} hold on {all_ok}/{n} instances"
    gap = max(res.tightness_gap for res in results)
    lines = [summary, f"largest Theorem-2 minus Theorem-4 rhs gap: {gap!r}"]
    (out / "summary.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print("\n".join(lines))
    failing = [res for res in results if not res.holds]
    for res in failing:
        path = out / f"violation_seed{res.seed}.json"
        path.write_text(make(res.seed).to_json(), encoding="utf-8")
        print(f"violation on seed {res.seed}; instance written to {path}", file=sys.stderr)
    return EXIT_VIOLATION if failing else EXIT_OK


def _train_job(job):
    label, run = job
    task = generate(run.task)
    return label, train(run.train, task)


def _run_jobs(jobs, n_workers: int):
    if n_workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(min(n_workers, len(jobs))) as ex:
            return list(ex.map(_train_job, jobs))
    return [_train_job(j) for j in jobs]


def _emit_runs(out: Path, reports, seed: int) -> None:
    for label, report in reports:
        write_metrics_csv(out / _metrics_name(label, seed), report.metrics)
        dump_bundle(out / f"model_{label}_seed{seed}.txt", report.bundle)


def cmd_train(args) -> int:
    run = _load_run_config(args)
    variants = args.variants or [run.train.variant]
    for v in variants:
        if v not in VARIANTS and not (v == "custom" and args.variants is None):
            raise UsageError(f"unknown variant {v!r}; expected one of {','.join(VARIANTS)}")
    out = _out_dir(args)
    seed = run.train.seed
    write_manifest(out, "train", {"series": ",".join(variants), "seed": str(seed)}, run.dumps())
    jobs = [(v, run if v == "custom" else cfgmod.RunConfig(run.train.with_variant(v), run.task)) for v in variants]
    reports = _run_jobs(jobs, args.jobs)
    _emit_runs(out, reports, seed)
    render_dir(out)
    for label, report in reports:
        print(f"{label}: target accuracy {report.target_acc:.4f}, "
              f"combined risk {report.final.combined_risk:.4f}")
    return EXIT_OK


def ablation_table(accs: dict[str, list[float]], seeds: list[int]) -> str:
    """Markdown table: one row per variant with s/t/m/e marks, per-seed accuracy and mean (in %)."""
    head = ["method", "s", "t", "m", "e"] + [f"seed {s}" for s in seeds] + ["mean"]
    rows = ["| " + " | ".join(head) + " |", "|" + "|".join(["---"] * len(head)) + "|"]
    for name, values in accs.items():
        _, s, t, m, e = VARIANTS[name]
        marks = ["✓" if flag else "" for flag in (s, t, m, e)]
        cells = [name] + marks + [f"{100 * a:.1f}" for a in values] + [f"{100 * sum(values) / len(values):.2f}"]
        rows.append("| " + " | ".join(cells) + " |")
    return "\n".join(rows) + "\n"


def cmd_ablate(args) -> int:
    if args.seeds < 1:
        raise UsageError("--seeds must be positive")
    run = _load_run_config(args)
    out = _out_dir(args)
    first = run.train.seed
    seeds = list(range(first, first + args.seeds))
    write_manifest(out, "ablate", {"seeds": ",".join(map(str, seeds)), "variants": ",".join(ABLATION_ORDER)},
                   run.dumps())
    jobs = []
    for s in seeds:
        seeded = run.with_seed(s)
        jobs += [((v, s), cfgmod.RunConfig(seeded.train.with_variant(v), seeded.task)) for v in ABLATION_ORDER]
    results = dict(_run_jobs(jobs, args.jobs))
    accs = {v: [results[v, s].target_acc for s in seeds] for v in ABLATION_ORDER}
    table = ablation_table(accs, seeds)
    (out / "ablation.md").write_text(table, encoding="utf-8")
    with open(out / "ablation.csv", "w", encoding="utf-8") as fh:
        fh.write("variant,seed,target_acc,combined_risk\n")
        for v in ABLATION_ORDER:
            for s in seeds:
                r = results[v, s]
                fh.write(f"{v},{s},{r.target_acc!r},{r.final.combined_risk!r}\n")
    print(table, end="")
    return EXIT_OK


def cmd_sweep(args) -> int:
    run = _load_run_config(args)
    jobs = []
    for raw in args.values:
        try:
            value = cfgmod.build({args.param: raw})
        except ContractError as exc:
            raise UsageError(str(exc)) from None
        jobs.append((f"{args.param}={raw}", cfgmod.RunConfig(
            replace(run.train, **{args.param: getattr(value.train, args.param)}), run.task)))
    out = _out_dir(args)
    seed = run.train.seed
    write_manifest(out, "sweep", {"series": ",".join(label for label, _ in jobs), "seed": str(seed),
                                  "param": args.param}, run.dumps())
    reports = _run_jobs(jobs, args.jobs)
    _emit_runs(out, reports, seed)
    render_dir(out)
    for label, report in reports:
        print(f"{label}: target accuracy {report.target_acc:.4f}")
    return EXIT_OK


def cmd_render(args) -> int:
    path = render_dir(_out_dir(args))
    print(path)
    return EXIT_OK


COMMANDS = {"verify-bounds": cmd_verify_bounds, "train": cmd_train, "ablate": cmd_ablate,
            "sweep": cmd_sweep, "render": cmd_render}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except MissingInput as exc:
        print(f"emixlab: {exc}", file=sys.stderr)
        return EXIT_NOINPUT
    except cfgmod.ConfigError as exc:
        print(f"emixlab: config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except TrainingAborted as exc:
        print(f"emixlab: training aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT
    except ContractError as exc:
        print(f"emixlab: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

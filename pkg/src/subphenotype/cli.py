"""Command-line entry point: ``subphenotype synth | run | report``.

Exit codes: 0 ok, 1 pipeline failure, 2 usage or configuration error.
Heavy modules are imported lazily so ``--help`` and argument errors stay fast.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMBA_NUM_THREADS")

log = logging.getLogger("subphenotype")


class UsageError(Exception):
    pass


def _limit_threads(threads: int | None) -> None:
    # must run before numpy is imported to take effect on the BLAS pool
    n = str(threads or 1)
    for var in _THREAD_VARS:
        os.environ[var] = n


def _spec_from_args(args):
    """Preset defaults, then the spec file, then --seed."""
    from .synth import PRESETS, SynthSpec

    name = args.preset or ("desk" if not args.config else None)
    if name is not None and name not in PRESETS:
        raise UsageError(f"unknown synth preset {name!r}; choose from {sorted(PRESETS)}")
    data = dict(PRESETS[name]) if name else {}
    if args.config:
        try:
            file_data = json.loads(Path(args.config).read_text())
        except FileNotFoundError:
            raise UsageError(f"spec file not found: {args.config}") from None
        except json.JSONDecodeError as exc:
            raise UsageError(f"{args.config}: invalid JSON ({exc})") from None
        data.update(file_data)
    if args.seed is not None:
        data["seed"] = args.seed
    return SynthSpec.from_dict(data)


def cmd_synth(args) -> int:
    from .synth import generate_cohort, save_spec, self_check

    try:
        spec = _spec_from_args(args)
    except (OSError, ValueError, TypeError) as exc:
        raise UsageError(f"invalid synth spec: {exc}") from None
    errors = spec.validate()
    if errors:
        raise UsageError("invalid synth spec: " + "; ".join(errors))
    out = Path(args.out or "synth_out")
    if args.dry_run:
        print(json.dumps(spec.to_dict(), indent=2, sort_keys=True))
        return EXIT_OK
    files = generate_cohort(spec, out)
    save_spec(spec, out / "synth_spec.json")
    for name, path in files.items():
        print(f"wrote {path}")
    if args.no_check:
        return EXIT_OK
    report = self_check(spec, files)
    print(report.summary())
    return EXIT_OK if report.passed else EXIT_FAILURE


def _run_config(args):
    from .config import ConfigError, load_config

    overrides = {"seed": args.seed, "out_dir": args.out, "threads": args.threads,
                 "admissions_path": args.admissions, "measurements_path": args.measurements}
    try:
        return load_config(args.config, args.preset, overrides).validate(check_paths=True)
    except ConfigError as exc:
        raise UsageError(str(exc)) from None


def cmd_run(args) -> int:
    config = _run_config(args)
    if args.dry_run:
        print(config.to_json())
        return EXIT_OK

    from .pipeline import PipelineError, run_full_pipeline
    from .plots import render_bundle_plots

    try:
        bundle = run_full_pipeline(config)
    except PipelineError as exc:
        print(f"error: pipeline failed in stage '{exc.stage}': {exc.cause}", file=sys.stderr)
        return EXIT_FAILURE
    plots = render_bundle_plots(bundle.out_dir)
    summary = bundle.summary()
    print(f"k = {summary['k']}, kappa = {summary['kappa']:.3f}{' (UNSTABLE)' if summary['unstable'] else ''}, "
          f"validation accuracy = {summary['validation_accuracy']:.3f}, macro-F = {summary['validation_f_macro']:.3f}")
    print(f"wrote {len(bundle.files)} artifacts and {len(plots)} plots to {bundle.out_dir}")
    return EXIT_OK


def cmd_report(args) -> int:
    from .report import IncompleteBundle, MalformedBundle, render_report

    bundle_dir = Path(args.bundle)
    if not bundle_dir.is_dir():
        raise UsageError(f"no such bundle directory: {bundle_dir}")
    try:
        text = render_report(bundle_dir)
    except IncompleteBundle as exc:
        print(f"error: incomplete bundle {bundle_dir}; missing artifacts:", file=sys.stderr)
        for name in exc.missing:
            print(f"  {name}", file=sys.stderr)
        return EXIT_USAGE
    except MalformedBundle as exc:
        raise UsageError(str(exc)) from None
    sys.stdout.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="subphenotype", description="Cluster, validate and model clinical subgroups.")
    p.add_argument("-v", "--verbose", action="store_true", help="log stage progress")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic cohort (admissions, measurements, ground truth)")
    s.add_argument("--config", help="synth spec JSON")
    s.add_argument("--preset", help="desk, paper-scale or structureless (default desk)")
    s.add_argument("--out", help="output directory (default synth_out)")
    s.add_argument("--seed", type=int)
    s.add_argument("--threads", type=int)
    s.add_argument("--dry-run", action="store_true", help="validate and print the spec, write nothing")
    s.add_argument("--no-check", action="store_true", help="skip the post-generation self check")
    s.set_defaults(func=cmd_synth)

    r = sub.add_parser("run", help="run the full pipeline and write a report bundle")
    r.add_argument("--config", help="run config JSON")
    r.add_argument("--preset", help="desk or paper-scale")
    r.add_argument("--out", help="bundle directory")
    r.add_argument("--seed", type=int)
    r.add_argument("--threads", type=int)
    r.add_argument("--admissions", help="admissions.csv (overrides the config)")
    r.add_argument("--measurements", help="measurements.csv (overrides the config)")
    r.add_argument("--dry-run", action="store_true", help="validate the config and print it, write nothing")
    r.set_defaults(func=cmd_run)

    t = sub.add_parser("report", help="print summary tables from a finished bundle")
    t.add_argument("bundle", help="bundle directory")
    t.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    threads = getattr(args, "threads", None)
    if threads is not None and threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    _limit_threads(threads)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point.

    kernelstream <experiment> --config <path> [--seed N] [--out <path>] [--workers N]

CSV experiments write the table to ``--out`` (or stdout) and a
``<out>.meta.json`` sidecar with the full config, its digest and the check
results. ``audit`` writes its JSON report instead. Exit status is 0 when
every check passes, 2 when a check fails and 1 on configuration or I/O
errors.
"""
import argparse
import csv
import io
import json
import logging
import sys

from .experiments import EXPERIMENTS, ConfigError, ExperimentConfig, audit_report, run_experiment

log = logging.getLogger("kernelstream")

EXIT_OK, EXIT_IO, EXIT_ASSERT = 0, 1, 2


def format_value(v):
    if isinstance(v, str):
        return v
    if isinstance(v, (bool, int)) and not isinstance(v, float):
        return str(int(v))
    return format(float(v), ".9g")


def render_csv(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([format_value(v) for v in row])
    return buf.getvalue()


def _parse_override(text):
    key, sep, raw = text.partition("=")
    if not sep or not key:
        raise ConfigError(f"--set expects key=value, got {text!r}")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key, value


def build_config(args):
    data = {}
    if args.config:
        try:
            with open(args.config, encoding="utf-8") as fh:
                data = json.load(fh)
        except OSError as err:
            raise ConfigError(f"cannot read config: {err}") from err
        except json.JSONDecodeError as err:
            raise ConfigError(f"config is not valid JSON: {err}") from err
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
    for item in args.set or ():
        k, v = _parse_override(item)
        data[k] = v
    data["experiment"] = args.experiment
    if args.seed is not None:
        data["base_seed"] = args.seed
    if args.out is not None:
        data["output_path"] = args.out
    if args.workers is not None:
        data["workers"] = args.workers
    return ExperimentConfig.from_dict(data)


def _write(path, text):
    if path is None or path == "-":
        sys.stdout.write(text)
        return
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def make_parser():
    p = argparse.ArgumentParser(prog="kernelstream", description=__doc__.split("\n\n")[0])
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--config", help="JSON config file; keys are ExperimentConfig fields")
    p.add_argument("--seed", type=int, help="base seed (overrides base_seed)")
    p.add_argument("--out", help="output path (overrides output_path); '-' for stdout")
    p.add_argument("--workers", type=int, help="worker processes for repetitions")
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a top-level config key; VALUE is parsed as JSON when possible")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        cfg = build_config(args)
    except ConfigError as err:
        log.error("%s", err)
        return EXIT_IO

    result = run_experiment(cfg)
    out = cfg.output_path
    try:
        if cfg.experiment == "audit":
            _write(out, json.dumps(audit_report(result), indent=2) + "\n")
        else:
            _write(out, render_csv(result.header, result.rows))
            if out not in (None, "-"):
                meta = dict(result.meta)
                meta["checks"] = [dict(c.to_dict(), passed=c.passed) for c in result.checks]
                meta["pass"] = result.passed
                _write(out + ".meta.json", json.dumps(meta, indent=2, sort_keys=True) + "\n")
    except OSError as err:
        log.error("cannot write output: %s", err)
        return EXIT_IO

    for c in result.checks:
        level = logging.INFO if c.passed else logging.WARNING
        log.log(level, "%s %s: %d/%d violations", "PASS" if c.passed else "FAIL", c.name,
                c.violations, c.trials)
    return EXIT_OK if result.passed else EXIT_ASSERT


if __name__ == "__main__":
    sys.exit(main())

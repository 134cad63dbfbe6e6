"""Command-line entry point.

Subcommands: run (execute an experiment config), metrics (recompute summary
series from a matrix file), plot (regenerate plots), synth (write a synthetic
dataset). Exit codes: 0 success, 1 configuration or usage error, 2 runtime
failure. The SFDNET_OUT environment variable overrides the configured output
directory; an explicit --out beats both.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from .data import DatasetSpec, load_dataset, save_npz_dataset
from .harness import (
    OUTPUT_DIR_ENV,
    ExperimentConfig,
    emit_outputs,
    read_matrix_csv,
    run_experiment,
    _write_plot,
    _write_series_csv,
)
from .metrics import accuracy_series, forgetting_series

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2

log = logging.getLogger("sfdnet")


class _Parser(argparse.ArgumentParser):
    # usage mistakes are configuration errors, not runtime failures
    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="override the config seed")
    common.add_argument("--out", default=None, help="output directory (or file for synth)")
    common.add_argument("--log-level", default="info",
                        choices=("debug", "info", "warning", "error"))

    parser = _Parser(prog="sfdnet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", parents=[common], help="run an experiment config")
    run_p.add_argument("config", help="path to a YAML experiment config")

    metrics_p = sub.add_parser("metrics", parents=[common],
                               help="recompute accuracy/forgetting series from a matrix file")
    metrics_p.add_argument("matrix", help="path to a matrix.csv")

    plot_p = sub.add_parser("plot", parents=[common],
                            help="regenerate plots from a matrix file")
    plot_p.add_argument("matrix", help="path to a matrix.csv")

    synth_p = sub.add_parser("synth", parents=[common], help="write a synthetic dataset")
    synth_p.add_argument("--classes", type=int, default=10)
    synth_p.add_argument("--per-class", type=int, default=50, dest="per_class")
    synth_p.add_argument("--size", type=int, default=32)
    synth_p.add_argument("--channels", type=int, default=1)
    synth_p.add_argument("--noise", type=float, default=0.05)
    return parser


def _resolve_out(explicit, fallback):
    if explicit:
        return explicit
    return os.environ.get(OUTPUT_DIR_ENV) or fallback


def _cmd_run(args) -> int:
    try:
        config = ExperimentConfig.from_yaml(args.config)
        if args.seed is not None:
            config.seed = args.seed
        out_dir = _resolve_out(args.out, config.out_dir)
    except (ValueError, TypeError, KeyError, OSError) as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG

    try:
        records, failures = run_experiment(config)
        for record in records:
            paths = emit_outputs(record, out_dir)
            final = record.accuracy[-1]
            forgo = record.forgetting[-1] if record.matrix.shape[0] > 1 else float("nan")
            print(f"{record.method}: final accuracy {final:.4f}, "
                  f"final forgetting {forgo:.4f}, {len(paths)} files in "
                  f"{os.path.join(out_dir, record.method)}")
        for name, reason in failures.items():
            print(f"{name}: FAILED ({reason})", file=sys.stderr)
    except Exception as exc:  # noqa: BLE001 - boundary: report, set exit code
        log.error("run failed: %s", exc)
        return EXIT_RUNTIME
    return EXIT_RUNTIME if failures else EXIT_OK


def _cmd_metrics(args) -> int:
    try:
        matrix = read_matrix_csv(args.matrix)
    except (ValueError, OSError) as exc:
        log.error("cannot read matrix: %s", exc)
        return EXIT_CONFIG
    try:
        out_dir = _resolve_out(args.out, os.path.dirname(os.path.abspath(args.matrix)))
        os.makedirs(out_dir, exist_ok=True)
        accuracy = accuracy_series(matrix)
        forgetting = forgetting_series(matrix)
        _write_series_csv(os.path.join(out_dir, "accuracy.csv"),
                          "average_accuracy", accuracy)
        _write_series_csv(os.path.join(out_dir, "forgetting.csv"),
                          "average_forgetting", forgetting, first_k=2)
        for k, value in enumerate(accuracy, start=1):
            tail = "" if k == 1 else f", forgetting {forgetting[k - 1]:.6f}"
            print(f"k={k}: accuracy {value:.6f}{tail}")
    except Exception as exc:  # noqa: BLE001
        log.error("metrics failed: %s", exc)
        return EXIT_RUNTIME
    return EXIT_OK


def _cmd_plot(args) -> int:
    try:
        matrix = read_matrix_csv(args.matrix)
    except (ValueError, OSError) as exc:
        log.error("cannot read matrix: %s", exc)
        return EXIT_CONFIG
    try:
        out_dir = _resolve_out(args.out, os.path.dirname(os.path.abspath(args.matrix)))
        os.makedirs(out_dir, exist_ok=True)
        count = matrix.shape[0]
        ks = np.arange(1, count + 1)
        accuracy = accuracy_series(matrix)
        _write_plot(os.path.join(out_dir, "accuracy.png"), ks, accuracy,
                    "average accuracy", "accuracy")
        written = [os.path.join(out_dir, "accuracy.png")]
        if count > 1:
            forgetting = forgetting_series(matrix)
            _write_plot(os.path.join(out_dir, "forgetting.png"), ks[1:], forgetting[1:],
                        "average forgetting", "forgetting")
            written.append(os.path.join(out_dir, "forgetting.png"))
        print("\n".join(written))
    except Exception as exc:  # noqa: BLE001
        log.error("plot failed: %s", exc)
        return EXIT_RUNTIME
    return EXIT_OK


def _cmd_synth(args) -> int:
    try:
        spec = DatasetSpec(
            name="synthetic", classes=args.classes, per_class=args.per_class,
            resolution=args.size, channels=args.channels, noise=args.noise,
            seed=args.seed if args.seed is not None else 7,
        )
    except ValueError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    try:
        data, _ = load_dataset(spec)
        path = args.out or os.path.join(_resolve_out(None, "."), "synthetic.npz")
        parent = os.path.dirname(os.path.abspath(path))
        os.makedirs(parent, exist_ok=True)
        save_npz_dataset(path, data)
        print(f"{path}: {len(data)} images, {data.class_ids.size} classes")
    except Exception as exc:  # noqa: BLE001
        log.error("synth failed: %s", exc)
        return EXIT_RUNTIME
    return EXIT_OK


_COMMANDS = {"run": _cmd_run, "metrics": _cmd_metrics, "plot": _cmd_plot,
             "synth": _cmd_synth}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else EXIT_CONFIG
    logging.basicConfig(level=getattr(logging, args.log_level.upper()),
                        format="%(levelname)s %(name)s: %(message)s")
    return _COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())

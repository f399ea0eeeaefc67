"""Command-line entry point.

Three subcommands share the global flags ``--config``, ``--out``,
``--deterministic``, and ``--seed``:

* ``train``    — run every configured mode on the configured dataset; writes
  ``metrics.csv``, ``comparison.txt``, and figures into the output directory.
* ``simulate`` — analytic batch times and simulated steady times for the
  configured cost profile; writes ``costs.csv`` and a comparison figure.
* ``gantt``    — event-level schedule timelines for the configured profile;
  writes ``gantt_<mode>.csv`` and a rendering per mode.
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .config import ExperimentConfig, parse_config
from .costs import (
    CommModel,
    StageProfile,
    render_gantt_csv,
    simulate_schedule,
    t_e2e,
    t_pp,
    t_ppll,
)
from .errors import InvalidValue, IoError, LocopipeError
from .figures import (
    save_batch_time_bars,
    save_gantt,
    save_throughput_bars,
    save_training_curves,
)
from .harness import report_table, run_experiment, write_metrics_csv
from .runtime import RunMode

_COST_MODE = {RunMode.E2E: "e2e", RunMode.NAIVE_PP: "naive_pp", RunMode.PPLL: "ppll"}


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="path to a key = value config file")
    common.add_argument("--out", default="out", help="output directory (default: ./out)")
    common.add_argument("--deterministic", action="store_true",
                        help="single-threaded scheduler with reproducible metrics")
    common.add_argument("--seed", type=int, default=None,
                        help="override the config seed")

    parser = argparse.ArgumentParser(
        prog="locopipe",
        description="Pipeline-parallel local-learning trainer and schedule simulator.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("train", parents=[common],
                   help="train the configured modes and write metrics")
    sub.add_parser("simulate", parents=[common],
                   help="analytic and simulated batch times for the cost profile")
    sub.add_parser("gantt", parents=[common],
                   help="emit schedule timelines for the cost profile")
    return parser


def _broadcast(name: str, values: tuple[float, ...] | None, s: int,
               default: float = 0.0) -> list[float]:
    if values is None:
        return [default] * s
    if len(values) == 1:
        return [values[0]] * s
    if len(values) != s:
        raise InvalidValue(f"{name} needs 1 or {s} entries, got {len(values)}")
    return list(values)


def profiles_from_config(cfg: ExperimentConfig) -> tuple[list[StageProfile], CommModel]:
    """Materialise the config's ``profile_*`` keys into per-stage profiles."""
    if cfg.profile_f is None or cfg.profile_b is None or cfg.profile_u is None:
        raise InvalidValue("simulate/gantt need profile_f, profile_b, and profile_u")
    s = cfg.stages
    f = _broadcast("profile_f", cfg.profile_f, s)
    b = _broadcast("profile_b", cfg.profile_b, s)
    u = _broadcast("profile_u", cfg.profile_u, s)
    f_a = _broadcast("profile_aux_f", cfg.profile_aux_f, s)
    b_a = _broadcast("profile_aux_b", cfg.profile_aux_b, s)
    u_a = _broadcast("profile_aux_u", cfg.profile_aux_u, s)
    profiles = [StageProfile(f[j], b[j], u[j], f_a[j], b_a[j], u_a[j])
                for j in range(s)]
    return profiles, CommModel(cfg.profile_q)


def _cmd_train(cfg: ExperimentConfig, out: Path, deterministic: bool) -> None:
    records, report = run_experiment(cfg, deterministic=deterministic, out_dir=out)
    write_metrics_csv(records, out / "metrics.csv")
    table = report_table(report)
    (out / "comparison.txt").write_text(table)
    save_training_curves(records, out / "training_curves.png")
    save_throughput_bars(report, out / "throughput.png")
    print(table, end="")
    print(f"wrote metrics.csv, comparison.txt, and figures to {out}")


def _estimates(cfg: ExperimentConfig):
    profiles, comm = profiles_from_config(cfg)
    for mode in cfg.modes:
        cost_mode = _COST_MODE[mode]
        if cost_mode == "e2e":
            est = t_e2e(profiles)
        elif cost_mode == "naive_pp":
            est = t_pp(profiles, comm)
        else:
            est = t_ppll(profiles, comm)
        sim = simulate_schedule(profiles, comm, cost_mode, cfg.profile_batches,
                                cfg.buffer_capacity)
        yield mode, est, sim


def _cmd_simulate(cfg: ExperimentConfig, out: Path) -> None:
    lines = ["mode,batch_time,steady_batch_time,makespan"]
    bar_rows = []
    for mode, est, sim in _estimates(cfg):
        lines.append(f"{mode.value},{est.batch_time!r},{sim.steady_batch_time!r},"
                     f"{sim.makespan!r}")
        bar_rows.append((mode.value, est.batch_time, sim.steady_batch_time))
        print(f"{mode.value}: analytic batch_time = {est.batch_time:.6f}, "
              f"simulated steady = {sim.steady_batch_time:.6f}")
    (out / "costs.csv").write_text("\n".join(lines) + "\n")
    save_batch_time_bars(bar_rows, out / "batch_times.png")
    print(f"wrote costs.csv and batch_times.png to {out}")


def _cmd_gantt(cfg: ExperimentConfig, out: Path) -> None:
    for mode, _, sim in _estimates(cfg):
        name = mode.value.lower()
        (out / f"gantt_{name}.csv").write_text(render_gantt_csv(sim.events))
        save_gantt(sim.events, out / f"gantt_{name}.png", title=mode.value)
        print(f"{mode.value}: {len(sim.events)} events, makespan {sim.makespan:.6f}")
    print(f"wrote gantt CSVs and renderings to {out}")


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = parse_config(args.config)
        if args.seed is not None:
            cfg = replace(cfg, seed=args.seed)
        out = Path(args.out)
        try:
            out.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise IoError(f"cannot create output directory {out}: {exc}") from exc
        if args.command == "train":
            _cmd_train(cfg, out, args.deterministic)
        elif args.command == "simulate":
            _cmd_simulate(cfg, out)
        else:
            _cmd_gantt(cfg, out)
    except (LocopipeError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

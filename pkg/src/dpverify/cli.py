"""Command-line front end.

Subcommands:

* ``verify``      run the privacy test at the configured level per mechanism
* ``sweep``       p-value curve over a level grid plus the critical level
* ``bench``       sweep + estimation-error comparison table across setups
* ``highlikely``  emit the fitted high-likely sets and event partitions

Reports are JSON (plus CSV for sweep/bench tables).  Every numeric field is
a pure function of (config, seed); wall-clock goes to stderr only, so a
rerun with the same seed reproduces reports byte for byte regardless of
``--workers``.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import time
import warnings

import numpy as np

from . import __version__
from .config import (ConfigError, TRACKING_KINDS, apply_overrides,
                     build_inputs, build_mechanism, build_network,
                     build_system, build_test_config, mechanism_label,
                     normalize_config, read_config)
from .highlikely import estimate_high_likely_set, grid_partition
from .sampling import sample_runs, substream
from .testkit import (STREAM_HIGH_LIKELY, critical_epsilon_sweep,
                      estimation_error, run_test)

STREAM_ERRORS = 3

EXIT_OK = 0
EXIT_REJECTED = 1
EXIT_USAGE = 2


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = _load_with_flags(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    started = time.monotonic()
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("always")
            report, rejected = args.command_fn(cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    _emit(report, args)
    print(f"{args.command} finished in {time.monotonic() - started:.1f}s",
          file=sys.stderr)
    if args.strict and rejected:
        return EXIT_REJECTED
    return EXIT_OK


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dpverify",
        description="Statistical black-box differential-privacy testing")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--out", help="output path (sweep/bench also write "
                                     "<out>.csv next to <out>.json)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--workers", type=int, default=1,
                       help="worker threads; never changes the numbers")
        p.add_argument("--strict", action="store_true",
                       help="exit 1 when any test rejects")
        p.add_argument("--set", action="append", default=[], metavar="PATH=VALUE",
                       help="dotted-path config override, e.g. test.alpha=0.01")
        p.add_argument("--epsilon", type=float, help="override test.epsilon")
        p.add_argument("--n", type=int, help="override test.n")
        p.add_argument("--grid-r", type=int, help="override test.r")
        p.add_argument("--beta", type=float, help="override test.beta")
        p.add_argument("--gamma", type=float, help="override test.gamma")
        p.add_argument("--alpha", type=float, help="override test.alpha")

    p_verify = sub.add_parser("verify", help="single-level privacy test")
    common(p_verify)
    p_verify.set_defaults(command_fn=cmd_verify)

    p_sweep = sub.add_parser("sweep", help="p-value curve over a level grid")
    common(p_sweep)
    p_sweep.add_argument("--epsilon-min", type=float)
    p_sweep.add_argument("--epsilon-max", type=float)
    p_sweep.add_argument("--points", type=int)
    p_sweep.set_defaults(command_fn=cmd_sweep)

    p_bench = sub.add_parser("bench", help="mechanism comparison table")
    common(p_bench)
    p_bench.set_defaults(command_fn=cmd_bench)

    p_hls = sub.add_parser("highlikely",
                           help="emit high-likely sets and partitions")
    common(p_hls)
    p_hls.set_defaults(command_fn=cmd_highlikely)
    return parser


def _load_with_flags(args) -> dict:
    raw = read_config(args.config)
    overrides = list(args.set)
    flag_map = {
        "seed": "seed",
        "epsilon": "test.epsilon",
        "n": "test.n",
        "grid_r": "test.r",
        "beta": "test.beta",
        "gamma": "test.gamma",
        "alpha": "test.alpha",
    }
    for attr, path in flag_map.items():
        value = getattr(args, attr, None)
        if value is not None:
            overrides.append(f"{path}={value}")
    for attr, path in (("epsilon_min", "sweep.epsilon_min"),
                       ("epsilon_max", "sweep.epsilon_max"),
                       ("points", "sweep.points")):
        value = getattr(args, attr, None)
        if value is not None:
            overrides.append(f"{path}={value}")
    return normalize_config(apply_overrides(raw, overrides))


def _epsilon_grid(cfg) -> list:
    sweep = cfg["sweep"]
    return [round(float(e), 12) for e in np.linspace(
        sweep["epsilon_min"], sweep["epsilon_max"], sweep["points"])]


def _estimation_errors(cfg, mechanism, y1, y2, truth, workers):
    if truth is None:
        return None, None
    times = list(mechanism.step_times)
    reference = truth[times, :2]
    n_err = cfg["bench"]["error_runs"]
    seed = cfg["seed"]
    correct = sample_runs(mechanism, y1, n_err,
                          substream(seed, STREAM_ERRORS, 0), workers=workers)
    adjacent = sample_runs(mechanism, y2, n_err,
                           substream(seed, STREAM_ERRORS, 1), workers=workers)
    return (estimation_error(correct, reference),
            estimation_error(adjacent, reference))


def _mechanism_context(cfg, setup=None):
    system = build_system(cfg)
    network = build_network(cfg, setup=setup)
    y1, y2, truth = build_inputs(cfg, system, network)
    return system, network, y1, y2, truth


def cmd_verify(cfg, args):
    system, network, y1, y2, truth = _mechanism_context(cfg)
    results = []
    rejected = False
    for entry in cfg["mechanisms"]:
        mech = build_mechanism(entry, system, network, cfg["system"]["window"])
        tcfg = build_test_config(cfg)
        hls = estimate_high_likely_set(
            mech, y1, tcfg.beta, tcfg.gamma,
            substream(tcfg.seed, STREAM_HIGH_LIKELY), workers=args.workers)
        events = grid_partition(hls, tcfg.r)
        verdict = run_test(tcfg, mech, y1, y2, workers=args.workers,
                           events=events)
        e_correct, e_adjacent = _estimation_errors(cfg, mech, y1, y2, truth,
                                                   args.workers)
        rejected |= not verdict.accepted
        sample = sample_runs(mech, y1, 3, substream(cfg["seed"], STREAM_ERRORS, 2),
                             workers=args.workers)
        results.append({
            "mechanism": mechanism_label(entry),
            "epsilon": tcfg.epsilon,
            **verdict.to_dict(),
            "e_correct": e_correct,
            "e_adjacent": e_adjacent,
            "high_likely": hls.to_dict(),
            "events": events.to_dict(),
            "estimate_sample": sample.tolist(),
        })
    body = {"results": results}
    if truth is not None:
        body["target_positions"] = truth[:, :2].tolist()
    return _report(cfg, body), rejected


def cmd_sweep(cfg, args):
    system, network, y1, y2, truth = _mechanism_context(cfg)
    grid = _epsilon_grid(cfg)
    sweeps = []
    rejected = False
    for entry in cfg["mechanisms"]:
        mech = build_mechanism(entry, system, network, cfg["system"]["window"])
        tcfg = build_test_config(cfg)
        result = critical_epsilon_sweep(tcfg, mech, y1, y2, grid,
                                        workers=args.workers)
        rejected |= result.epsilon_critical is None
        sweeps.append({"mechanism": mechanism_label(entry),
                       **result.to_dict()})
    report = _report(cfg, {"sweeps": sweeps})
    report["csv"] = _sweep_csv(sweeps)
    return report, rejected


def _sweep_csv(sweeps) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, quoting=csv.QUOTE_MINIMAL, lineterminator="\n")
    writer.writerow(["mechanism", "epsilon", "p_upper", "p_lower",
                     "min_pvalue"])
    for sw in sweeps:
        for eps, pu, pl, mp in zip(sw["epsilon_grid"], sw["p_upper"],
                                   sw["p_lower"], sw["min_pvalues"]):
            writer.writerow([sw["mechanism"], repr(eps), repr(pu), repr(pl),
                             repr(mp)])
    return buf.getvalue()


def cmd_bench(cfg, args):
    if cfg["inputs"]["mode"] != "sensor_pair":
        raise ConfigError("inputs.mode", "bench requires sensor_pair inputs")
    for i, entry in enumerate(cfg["mechanisms"]):
        if entry["kind"] not in TRACKING_KINDS:
            raise ConfigError(f"mechanisms[{i}].kind",
                              "bench requires tracking mechanisms "
                              f"({', '.join(TRACKING_KINDS)})")
    grid = _epsilon_grid(cfg)
    rows = []
    trajectories = {}
    rejected = False
    for setup in cfg["bench"]["setups"]:
        system, network, y1, y2, truth = _mechanism_context(cfg, setup=setup)
        trajectories[setup] = truth[:, :2].tolist()
        for entry in cfg["mechanisms"]:
            mech = build_mechanism(entry, system, network,
                                   cfg["system"]["window"])
            tcfg = build_test_config(cfg)
            result = critical_epsilon_sweep(tcfg, mech, y1, y2, grid,
                                            workers=args.workers)
            e_correct, e_adjacent = _estimation_errors(cfg, mech, y1, y2,
                                                       truth, args.workers)
            rejected |= result.epsilon_critical is None
            rows.append({
                "setup": setup,
                "mechanism": mechanism_label(entry),
                "epsilon_critical": result.epsilon_critical,
                "epsilon_critical_interp": result.epsilon_critical_interp,
                "e_correct": e_correct,
                "e_adjacent": e_adjacent,
                "sweep": result.to_dict(),
            })
    report = _report(cfg, {"bench": rows, "target_positions": trajectories})
    report["csv"] = _bench_csv(rows)
    return report, rejected


def _bench_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, quoting=csv.QUOTE_MINIMAL, lineterminator="\n")
    writer.writerow(["setup", "mechanism", "epsilon_critical",
                     "epsilon_critical_interp", "e_correct", "e_adjacent"])
    for row in rows:
        writer.writerow([
            row["setup"], row["mechanism"],
            "" if row["epsilon_critical"] is None else repr(row["epsilon_critical"]),
            "" if row["epsilon_critical_interp"] is None
            else repr(row["epsilon_critical_interp"]),
            repr(row["e_correct"]), repr(row["e_adjacent"]),
        ])
    return buf.getvalue()


def cmd_highlikely(cfg, args):
    system, network, y1, _, _ = _mechanism_context(cfg)
    results = []
    for entry in cfg["mechanisms"]:
        mech = build_mechanism(entry, system, network, cfg["system"]["window"])
        tcfg = build_test_config(cfg)
        hls = estimate_high_likely_set(
            mech, y1, tcfg.beta, tcfg.gamma,
            substream(tcfg.seed, STREAM_HIGH_LIKELY), workers=args.workers)
        events = grid_partition(hls, tcfg.r)
        results.append({"mechanism": mechanism_label(entry),
                        "high_likely": hls.to_dict(),
                        "events": events.to_dict()})
    return _report(cfg, {"high_likely_sets": results}), False


def _report(cfg, body: dict) -> dict:
    report = {"toolkit_version": __version__, "config": cfg, "seed": cfg["seed"]}
    report.update(body)
    return report


def _emit(report: dict, args) -> None:
    csv_text = report.pop("csv", None)
    text = json.dumps(report, indent=2, sort_keys=True, allow_nan=False)
    if args.out:
        json_path = args.out if args.out.endswith(".json") else args.out + ".json"
        with open(json_path, "w") as fh:
            fh.write(text + "\n")
        print(f"wrote {json_path}", file=sys.stderr)
        if csv_text is not None:
            csv_path = json_path[:-5] + ".csv"
            with open(csv_path, "w") as fh:
                fh.write(csv_text)
            print(f"wrote {csv_path}", file=sys.stderr)
    else:
        if csv_text is not None:
            sys.stdout.write(csv_text)
        else:
            sys.stdout.write(text + "\n")


if __name__ == "__main__":
    sys.exit(main())

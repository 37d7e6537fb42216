"""Command-line front end.

Subcommands
-----------
simulate   write a synthetic stream file (plus truth sidecar)
track      run the track+detect pipeline over a stream file
threshold  print thresholds for a target average run length
mc-arl     Monte Carlo threshold table row (both methods)
mc-delay   Monte Carlo detection-delay table row (both methods)

Exit codes: 0 success, 2 configuration error, 3 data error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .changepoint import NuVariant, arl_approx, select_nu_variant, threshold_for_arl
from .datagen import sample_stream
from .errors import ConfigError, DataError, MousseError, NoBracket
from .pipeline import RunConfig, run_mc_arl, run_mc_delay, track_rows
from .streamio import load_config_file, read_stream, write_records, write_stream

VERSION_HEADER = {"format": "mousse-output-v1"}


def _build_config(args: argparse.Namespace) -> RunConfig:
    mapping: dict[str, str] = {}
    if getattr(args, "config", None):
        mapping.update(load_config_file(args.config))
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        mapping[key.strip()] = value.strip()
    if getattr(args, "seed", None) is not None:
        mapping["run.seed"] = str(args.seed)
    if getattr(args, "horizon", None) is not None:
        mapping["run.horizon"] = str(args.horizon)
    if getattr(args, "mode", None):
        mapping["run.mode"] = args.mode
    return RunConfig.from_mapping(mapping)


def _write_json(path: str | None, payload: dict) -> None:
    doc = {**VERSION_HEADER, **payload}
    text = json.dumps(doc, indent=2, sort_keys=True)
    if path:
        Path(path).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)


def cmd_simulate(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    spec = cfg.manifold_spec()
    meta = {"seed": cfg.seed, "horizon": cfg.horizon, "n_init": cfg.n_init,
            "warmup": cfg.warmup, "change_t": spec.change_time()}
    n = write_stream(args.out,
                     sample_stream(spec, cfg.horizon, n_complete=cfg.n_init,
                                   n_warmup=cfg.warmup),
                     spec.ambient_dim, truth_path=args.truth, meta=meta)
    print(f"wrote {n} rows ({cfg.n_init} init + {cfg.warmup} warmup + "
          f"{cfg.horizon} stream) to {args.out}")
    return 0


def cmd_track(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    ambient_dim, rows = read_stream(args.stream, scale=cfg.input_scale)
    result = track_rows(rows, ambient_dim, cfg)
    write_records(args.out, result.records)
    _write_json(args.summary, result.summary)
    if args.qq_out and result.records:
        from .changepoint import qq_points
        post = [r.e for r in result.records if r.t > cfg.n_burn]
        if len(post) >= 3:
            q, e = qq_points(post)
            with open(args.qq_out, "w", encoding="utf-8") as fh:
                fh.write("normal_quantile,residual\n")
                for qi, ei in zip(q, e):
                    fh.write(f"{qi!r},{ei!r}\n")
    return 0


def cmd_threshold(args: argparse.Namespace) -> int:
    target = args.target_arl
    selected = select_nu_variant()
    lines = {}
    for variant in NuVariant:
        try:
            b = threshold_for_arl(target, variant)
            lines[variant.value] = {"b": b, "arl_roundtrip": arl_approx(b, variant)}
        except NoBracket as exc:
            lines[variant.value] = {"error": str(exc)}
    _write_json(args.out, {
        "target_arl": target,
        "selected_variant": selected.value,
        "b": lines[selected.value].get("b"),
        "variants": lines,
    })
    return 0


def cmd_mc(args: argparse.Namespace, which: str) -> int:
    cfg = _build_config(args)
    if which == "arl":
        row = run_mc_arl(cfg, n_trials=args.trials, n_cal=args.cal_trials,
                         n_workers=args.workers)
    else:
        row = run_mc_delay(cfg, n_trials=args.trials, n_cal=args.cal_trials,
                           n_workers=args.workers)
    _write_json(args.out, row)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mousse", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override one config key (repeatable)")
        p.add_argument("--seed", type=int, help="override run.seed")
        p.add_argument("--horizon", type=int, help="override run.horizon")

    p = sub.add_parser("simulate", help="write a synthetic stream file")
    common(p)
    p.add_argument("--out", required=True, help="stream file path")
    p.add_argument("--truth", help="truth sidecar path (JSON lines)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("track", help="track a stream file and score residuals")
    common(p)
    p.add_argument("--mode", choices=["mousse", "single-subspace"])
    p.add_argument("--stream", required=True, help="input stream file")
    p.add_argument("--out", required=True, help="records CSV path")
    p.add_argument("--summary", help="summary JSON path (stdout if omitted)")
    p.add_argument("--qq-out", help="write QQ diagnostic CSV here")
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("threshold", help="thresholds for a target ARL")
    p.add_argument("target_arl", type=float)
    p.add_argument("--out", help="JSON output path (stdout if omitted)")
    p.set_defaults(func=cmd_threshold)

    for which in ("arl", "delay"):
        p = sub.add_parser(f"mc-{which}", help=f"Monte Carlo {which} table row")
        common(p)
        p.add_argument("--trials", type=int, default=300)
        p.add_argument("--cal-trials", type=int, default=200,
                       help="trials used to calibrate the MC threshold")
        p.add_argument("--workers", type=int, default=None)
        p.add_argument("--out", help="JSON output path (stdout if omitted)")
        p.set_defaults(func=lambda a, w=which: cmd_mc(a, w))

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except MousseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

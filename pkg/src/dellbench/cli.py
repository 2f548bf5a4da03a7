"""Command-line entry point.

Subcommands mirror the benchmark pipeline: `pretrain` builds the frozen
encoder and task-mapper from a synthetic pretrain suite, `calibrate` anchors
each eval game's min/max rewards, `generate` draws a benchmark file,
`run` executes the sessions and writes the event log plus report, and
`report` recomputes metrics from an existing log (or prints net-mean
products). All paths default under $DELL_HOME (~/.dellbench).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import encoder as enc
from . import mapper as tm
from .errors import DellError
from .metrics import compute_report, emit_report, net_mean, parse_event_log
from .orchestrator import MAPPER_STYLES, RunConfig, run
from .specfile import (
    GameMeta,
    generate_benchmark,
    parse_benchmark,
    read_meta,
    write_benchmark,
    write_meta,
)
from .suite import (
    GENRES,
    MIN_REWARD_MARGIN,
    calibrate_max_reward,
    calibrate_min_reward,
    load_dataset,
    load_suite,
    make_suite,
    pack_pretrain_dataset,
    save_suite,
)


def dell_home() -> Path:
    return Path(os.environ.get("DELL_HOME", Path.home() / ".dellbench")).expanduser()


def _print_report(report) -> None:
    mi = "absent" if report.mi_ms is None else f"{report.mi_ms:.3f} ms"
    print(f"MS   {report.ms_mb:.4f} MB")
    print(f"MI   {mi}")
    print(f"LS   {report.ls}")
    print(f"MG   {report.mg_pct:.4f} %")
    print(f"BS   {report.bs_kb:.3f} KB")
    print(f"BG   {report.bg_pct:.4f} %")
    print(f"MAR  {', '.join(f'{v:.2f}' for v in report.mar)}")
    print(f"TNMR {report.tnmr:.4f}")
    for flag in report.flags:
        print(f"flag {flag}")


def cmd_pretrain(args) -> int:
    out = Path(args.out) if args.out else dell_home() / "pretrain"
    suite = make_suite("pretrain", args.games, GENRES, args.seed)
    suite_path = save_suite(suite, out / "suite.yaml")
    dataset_dir = pack_pretrain_dataset(suite, out / "dataset",
                                        episodes_per_game=args.episodes_per_game)
    dataset = load_dataset(dataset_dir)
    print(f"packed {args.games} games -> {dataset_dir}")
    if args.encoder_kind == "trained":
        model = enc.train_autoencoder(dataset, epochs=args.epochs, seed=args.seed)
    else:
        model = enc.random_encoder(args.seed)
    encoder_path = enc.save_encoder(model, out / "encoder.bin")
    print(f"encoder ({args.encoder_kind}) -> {encoder_path} "
          f"({encoder_path.stat().st_size} bytes)")
    mapper = tm.pretrain_taskmapper(dataset, model, episodes=args.episodes,
                                    seed=args.seed, k_shot=args.k_shot)
    mapper_path = tm.save_mapper(mapper, out / "mapper.bin")
    print(f"task-mapper -> {mapper_path} ({mapper_path.stat().st_size} bytes)")
    print(f"suite file -> {suite_path}")
    return 0


def cmd_calibrate(args) -> int:
    suite_path = Path(args.suite) if args.suite else dell_home() / "eval-suite.yaml"
    if suite_path.is_file():
        suite = load_suite(suite_path)
    else:
        suite = make_suite("eval", args.games, GENRES, args.seed)
        save_suite(suite, suite_path)
        print(f"built eval suite -> {suite_path}")
    out = Path(args.out) if args.out else dell_home() / "metas"
    floor_encoder = enc.random_encoder(args.seed)
    invalid = []
    for game in suite.games:
        lo = calibrate_min_reward(game, floor_encoder, episodes=args.episodes,
                                  seed=args.seed)
        hi = calibrate_max_reward(game, budget=args.budget, seed=args.seed)
        if hi.value <= lo:
            invalid.append(game.id)
            print(f"{game.id}: INVALID degenerate range "
                  f"[{lo:.3f}, {hi.value:.3f}], no meta written")
            continue
        bar = lo + MIN_REWARD_MARGIN * (hi.value - lo)
        meta = GameMeta(name=game.id, genre=game.genre,
                        input_text="84x84 grayscale frames in [0,1]",
                        min_reward=bar, max_reward=hi.value)
        path = write_meta(meta, out / f"{game.id}.yaml")
        note = "plateau" if hi.plateau_reached else f"{hi.iterations} iters"
        print(f"{game.id}: floor {lo:.3f} min {bar:.3f} max {hi.value:.3f} "
              f"({note}) -> {path}")
    print(f"calibrated {len(suite.games) - len(invalid)}/{len(suite.games)} games")
    return 0


def cmd_generate(args) -> int:
    suite = load_suite(args.suite)
    metas_dir = Path(args.metas) if args.metas else dell_home() / "metas"
    metas = {p.stem: read_meta(p) for p in sorted(metas_dir.glob("*.yaml"))}
    spec = generate_benchmark(args.alpha, args.beta, suite, args.seed,
                              metas=metas or None)
    out = Path(args.out) if args.out else \
        dell_home() / "benchmarks" / f"dell-{args.alpha}-{args.beta}-s{args.seed}.yaml"
    write_benchmark(spec, out)
    print(f"benchmark DeLL({args.alpha}, {args.beta}) -> {out}")
    return 0


def cmd_run(args) -> int:
    spec = parse_benchmark(args.benchmark)
    suite = load_suite(args.suite)
    encoder_path = Path(args.encoder)
    model = enc.load_encoder(encoder_path)
    mapper = tm.load_mapper(args.mapper)
    out = Path(args.out) if args.out else \
        dell_home() / "runs" / f"{Path(args.benchmark).stem}-s{args.seed}"
    config = RunConfig(eval_episodes=args.episodes, probe_size=args.probe,
                       k_shot=args.k_shot, cem_budget=args.budget,
                       cem_train_episodes=args.train_episodes, seed=args.seed,
                       mapper_style=args.mapper_style,
                       normalize_timings=args.normalize_timings)
    report = run(spec, suite, model, encoder_path, mapper, out, config)
    report_path = emit_report(report, out / f"report.{args.format}", args.format)
    print(f"events -> {out / 'events.jsonl'}")
    print(f"report -> {report_path}")
    _print_report(report)
    return 0


def cmd_report(args) -> int:
    if args.net_mean is not None:
        accuracy, reward = args.net_mean
        print(f"{net_mean(accuracy, reward):.2f}")
        return 0
    if not args.log or not args.benchmark:
        print("error: --log and --benchmark are required "
              "(or use --net-mean ACC REWARD)", file=sys.stderr)
        return 2
    records = parse_event_log(args.log)
    spec = parse_benchmark(args.benchmark)
    config_path = Path(args.config) if args.config \
        else Path(args.log).parent / "config.json"
    config_prov = {}
    if config_path.is_file():
        config_prov = json.loads(config_path.read_text())
    report = compute_report(records, spec, config_prov)
    if args.out:
        path = emit_report(report, args.out, args.format)
        print(f"report -> {path}")
    _print_report(report)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dellbench",
        description="Lifelong-learning benchmark: pretrain, calibrate, "
                    "generate, run, report.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pretrain", help="build pretrain suite, dataset, "
                                        "encoder and task-mapper checkpoints")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output directory (default $DELL_HOME/pretrain)")
    p.add_argument("--games", type=int, default=24)
    p.add_argument("--episodes-per-game", type=int, default=8)
    p.add_argument("--epochs", type=int, default=20, help="autoencoder epochs")
    p.add_argument("--episodes", type=int, default=4000,
                   help="task-mapper pretraining episodes")
    p.add_argument("--k-shot", type=int, default=5)
    p.add_argument("--encoder-kind", choices=("trained", "random"),
                   default="trained")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("calibrate", help="anchor per-game min/max rewards, "
                                         "write meta files")
    p.add_argument("--suite", help="eval suite file; built here if missing")
    p.add_argument("--games", type=int, default=5,
                   help="suite size when building a new suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--budget", type=int, default=200,
                   help="search iterations for the max anchor")
    p.add_argument("--episodes", type=int, default=100,
                   help="episodes for the min anchor")
    p.add_argument("--out", help="meta directory (default $DELL_HOME/metas)")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("generate", help="draw a benchmark file from a "
                                        "calibrated suite")
    p.add_argument("--suite", required=True)
    p.add_argument("--metas", help="meta directory (default $DELL_HOME/metas)")
    p.add_argument("--alpha", type=int, default=5)
    p.add_argument("--beta", type=int, default=10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="benchmark path (default under $DELL_HOME)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("run", help="execute all sessions of a benchmark")
    p.add_argument("--benchmark", required=True)
    p.add_argument("--suite", required=True)
    p.add_argument("--encoder", required=True, help="encoder checkpoint")
    p.add_argument("--mapper", required=True, help="task-mapper checkpoint")
    p.add_argument("--out", help="run directory (default under $DELL_HOME/runs)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--episodes", type=int, default=5,
                   help="evaluation episodes per session")
    p.add_argument("--probe", type=int, default=8, help="probe frames per session")
    p.add_argument("--k-shot", type=int, default=5)
    p.add_argument("--budget", type=int, default=300, help="policy search iterations")
    p.add_argument("--train-episodes", type=int, default=8,
                   help="episodes embedded for policy training")
    p.add_argument("--mapper-style", choices=MAPPER_STYLES, default="incremental")
    p.add_argument("--normalize-timings", action="store_true",
                   help="zero wall-clock fields for byte-stable logs")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("report", help="recompute metrics from an event log")
    p.add_argument("--log", help="events.jsonl from a run")
    p.add_argument("--benchmark", help="benchmark the log was produced from")
    p.add_argument("--config", help="config.json for provenance "
                                    "(default: next to the log)")
    p.add_argument("--out", help="write the report here as well")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--net-mean", nargs=2, type=float,
                   metavar=("ACCURACY", "REWARD"),
                   help="print accuracy x reward and exit")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DellError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())

"""Command-line entry point.

Subcommands map one-to-one onto pipeline stages: preprocess (annotations to
manifests), train, eval, ablate (the M1/M2/M3 comparison), plot, and fixture
(synthetic dataset generation). Every artifact-producing run writes a
config_echo.ini next to its outputs holding the fully resolved configuration.

Exit codes: 0 success, 1 runtime failure, 2 configuration/usage error. On
failure one JSON diagnostic line is printed to stderr.
"""

from __future__ import annotations

import argparse
import json
import sys
import traceback
from pathlib import Path

from .config import apply_overrides, load_config, write_config_echo
from .dataset import (
    DEFAULT_FPS,
    VideoMeta,
    build_manifest,
    parse_annotations,
    write_manifest,
)
from .errors import ConfigError, DrivefuseError, MalformedRow, UnknownLabel
from .fixture import generate_fixture, fixture_experiment_config
from .fusion_model import MethodVariant, load_checkpoint, save_checkpoint
from .taxonomy import N_CLASSES
from .harness import (
    emit_plots,
    emit_report,
    evaluate,
    load_report,
    load_split,
    run_ablation,
    train,
)
from .metrics import aggregate_seeds


def _resolve_config(args):
    config = load_config(getattr(args, "config", None))
    return apply_overrides(config, getattr(args, "set", None))


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _parse_methods(raw: str) -> tuple[MethodVariant, ...]:
    try:
        return tuple(MethodVariant.parse(p) for p in raw.split(",") if p.strip())
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def cmd_preprocess(args) -> int:
    config = _resolve_config(args)
    frames_dir = Path(args.frames_dir)
    if not frames_dir.is_dir():
        raise FileNotFoundError(f"frames directory not found: {frames_dir}")

    records = parse_annotations(args.annotations)
    test_ids = {v.strip() for v in (args.test_videos or "").split(",") if v.strip()}

    durations: dict[str, float] = {}
    for rec in records:
        durations[rec.video_id] = max(durations.get(rec.video_id, 0.0), rec.end_s)
    videos = [
        VideoMeta(video_id=vid, fps=args.fps, duration_s=end) for vid, end in durations.items()
    ]
    unknown_test = test_ids - set(durations)
    if unknown_test:
        raise ConfigError(f"--test-videos names unknown video(s): {sorted(unknown_test)}")

    out = _out_dir(args)
    interval = config.sampling_interval_frames
    splits = {}
    for split, members in (
        ("train", [v for v in videos if v.video_id not in test_ids]),
        ("test", [v for v in videos if v.video_id in test_ids]),
    ):
        manifest = build_manifest(members, records, split=split, interval_frames=interval)
        write_manifest(manifest, out / f"{split}_manifest.jsonl")
        splits[split] = manifest
        print(
            f"{split}: {len(manifest.samples)} frames from {len(members)} video(s) "
            f"-> {out / f'{split}_manifest.jsonl'}"
        )
    print(f"annotation rows accepted: {len(records)}; rejected rows abort with a diagnostic")

    write_config_echo(
        config,
        out / "config_echo.ini",
        run_info={
            "subcommand": "preprocess",
            "annotations": args.annotations,
            "frames_dir": str(frames_dir),
            "test_videos": ",".join(sorted(test_ids)),
            "fps": args.fps,
        },
    )
    return 0


def cmd_train(args) -> int:
    config = _resolve_config(args)
    config.validate()
    seed = config.seeds[0]
    out = _out_dir(args)

    model, log = train(config, seed)
    checkpoint_path = out / "checkpoint.dfck"
    save_checkpoint(model, checkpoint_path)
    (out / "training_log.json").write_text(
        json.dumps(log.to_dict(), sort_keys=True, indent=2) + "\n", encoding="utf-8"
    )
    write_config_echo(
        config, out / "config_echo.ini", run_info={"subcommand": "train", "seed": seed}
    )
    print(
        f"trained {config.variant.name} seed {seed}: initial loss {log.initial_loss:.6f}, "
        f"final loss {log.final_loss:.6f} -> {checkpoint_path}"
    )
    return 0


def cmd_eval(args) -> int:
    config = _resolve_config(args)
    out = _out_dir(args)
    model = load_checkpoint(args.checkpoint)
    test_data = load_split(config.test_manifest, config, model.variant.active_branches)
    report = evaluate(model, test_data)
    aggregate = aggregate_seeds([report])
    emit_report([aggregate], out / "report.json")
    write_config_echo(
        config,
        out / "config_echo.ini",
        run_info={"subcommand": "eval", "checkpoint": args.checkpoint, "seed": model.seed},
    )
    print(
        f"{model.variant.name}: accuracy {report.accuracy * 100:.2f}%, "
        f"macro F1 {report.macro_f1:.4f} -> {out / 'report.json'}"
    )
    return 0


def cmd_ablate(args) -> int:
    config = _resolve_config(args)
    if args.seeds is not None:
        if args.seeds < 1:
            raise ConfigError("--seeds must be >= 1")
        config.seeds = tuple(range(1, args.seeds + 1))
    methods = _parse_methods(args.methods)
    config.validate()
    out = _out_dir(args)

    result = run_ablation(config, methods)
    emit_report(result.aggregates, out / "report.json", result.improvement_pct)
    write_config_echo(
        config,
        out / "config_echo.ini",
        run_info={"subcommand": "ablate", "methods": args.methods},
    )

    print(f"{'variant':<8} {'accuracy':>18} {'macro_f1':>9} {'vs_M1':>8}")
    for agg in result.aggregates:
        gain = result.improvement_pct.get(agg.variant)
        gain_s = f"{gain:+.2f}%" if gain is not None else "-"
        print(
            f"{agg.variant:<8} {agg.accuracy_mean_pct:>10.2f} ± {agg.accuracy_std_pct:<5.2f} "
            f"{agg.macro_f1:>9.4f} {gain_s:>8}"
        )
    print(f"report -> {out / 'report.json'}")
    return 0


def cmd_plot(args) -> int:
    out = _out_dir(args)
    aggregates, _ = load_report(args.report)
    info = emit_plots(aggregates, out / "f1_by_class.png")
    config = _resolve_config(args)
    write_config_echo(
        config,
        out / "config_echo.ini",
        run_info={"subcommand": "plot", "report": args.report},
    )
    print(f"plotted {info['classes']} classes x {info['methods']} method(s) -> {info['path']}")
    return 0


def cmd_fixture(args) -> int:
    if args.n_train < N_CLASSES or args.n_test < N_CLASSES:
        raise ConfigError(f"--n-train and --n-test must be at least {N_CLASSES}")
    out = _out_dir(args)
    summary = generate_fixture(out, n_train=args.n_train, n_test=args.n_test, seed=args.seed)
    config = fixture_experiment_config(out)
    write_config_echo(config, out / "experiment.ini")
    write_config_echo(
        config,
        out / "config_echo.ini",
        run_info={
            "subcommand": "fixture",
            "n_train": summary.n_train,
            "n_test": summary.n_test,
            "seed": summary.seed,
        },
    )
    probes = ", ".join(f"{k}={v:.3f}" for k, v in summary.probe_accuracy.items())
    print(f"fixture: {summary.n_train} train / {summary.n_test} test frames -> {out}")
    print(f"branch probe accuracy: {probes}")
    print(f"experiment config -> {out / 'experiment.ini'}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="drivefuse",
        description="Distracted-driver frame classification pipeline.",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p, out_required=True):
        p.add_argument("--config", default=None, help="INI config file")
        p.add_argument(
            "--set",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override a config value (repeatable)",
        )
        p.add_argument("--out", required=out_required, help="output directory")

    p = sub.add_parser("preprocess", help="build train/test manifests from annotations")
    common(p)
    p.add_argument("--annotations", required=True, help="annotation CSV")
    p.add_argument("--frames-dir", required=True, help="directory holding frame images")
    p.add_argument("--test-videos", default="", help="comma-separated test video ids")
    p.add_argument("--fps", type=float, default=DEFAULT_FPS)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train one model (first configured seed)")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on the test manifest")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train and compare method variants")
    common(p)
    p.add_argument("--seeds", type=int, default=None, help="use seeds 1..N")
    p.add_argument("--methods", default="M1,M2,M3", help="comma-separated variants")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("plot", help="render per-class F1 chart from a report")
    common(p)
    p.add_argument("--report", required=True, help="report.json from eval/ablate")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("fixture", help="generate the synthetic dataset")
    common(p)
    p.add_argument("--n-train", type=int, default=1800)
    p.add_argument("--n-test", type=int, default=360)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_fixture)

    return parser


def _fail(exc: BaseException, code: int) -> int:
    line = json.dumps(
        {"error": type(exc).__name__, "detail": str(exc), "exit_code": code}
    )
    print(line, file=sys.stderr)
    return code


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code in (0, None) else 2
    try:
        return args.func(args)
    except (ConfigError, UnknownLabel, MalformedRow) as exc:
        return _fail(exc, 2)
    except (DrivefuseError, OSError) as exc:
        return _fail(exc, 1)
    except Exception as exc:  # unexpected: keep the traceback visible
        traceback.print_exc()
        return _fail(exc, 1)


if __name__ == "__main__":
    sys.exit(main())

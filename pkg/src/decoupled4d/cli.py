"""Command-line entry point.

Subcommands mirror the pipeline stages (``simulate``, ``mine``, ``pose``,
``fuse``, ``eval``) plus ``run`` for the full five-stage pipeline and
``ablate`` for the multi-seed variant sweep. Stage subcommands operate on a
run directory: each one reads whatever earlier stages persisted there, so a
single stage can be rerun in isolation. When ``--config`` is omitted and the
run directory already holds a ``scene.cfg`` manifest, that manifest is used,
which guarantees the rerun sees the exact original configuration.

Exit codes: 0 on success, 2 for configuration errors, 3 for stage failures.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from .configio import parse_config_file
from .errors import ConfigError, ReconstructionError
from .metrics import MetricReport
from .pipeline import (FUSION_MODES, PipelineConfig, ablation_sweep,
                       generate_scene, pipeline_config_from, run_pipeline,
                       stage_eval, stage_fuse, stage_mine, stage_pass2,
                       stage_simulate)
from .plots import render_ablation_figure, render_run_figures

_STAGE_COMMANDS = ("simulate", "mine", "pose", "fuse", "eval")


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="decoupled4d",
        description="two-pass pose/geometry decoupling on a synthetic "
                    "dynamic-scene oracle")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
            ("simulate", "stage 1: scene ground truth and the first pass"),
            ("mine", "stage 2: motion saliency and the dynamic mask"),
            ("pose", "stage 3: mask-weighted pose and the second pass"),
            ("fuse", "stage 4: region-aware depth composition"),
            ("eval", "stage 5: chamfer and trajectory metrics"),
            ("run", "all five stages plus report and figures"),
            ("ablate", "multi-seed sweep over the ablation variants")]:
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("--config", type=Path, default=None,
                         help="key=value config file (dotted keys)")
        cmd.add_argument("--seed", type=int, default=None,
                         help="override the pipeline and scene seed")
        cmd.add_argument("--out", type=Path, required=True,
                         help="run directory")
        cmd.add_argument("--variant", choices=FUSION_MODES, default=None,
                         help="override the fusion variant")
        cmd.add_argument("--gt-mask", action="store_true",
                         help="use the ground-truth mask for pose and fusion")
        cmd.add_argument("--format", choices=("text", "csv"), default="text",
                         help="stdout format for reports")
        if name == "ablate":
            cmd.add_argument("--seeds", type=int, default=20,
                             help="number of seeds (starting at --seed)")
            cmd.add_argument("--no-figures", action="store_true",
                             help="skip figure rendering")
        if name == "run":
            cmd.add_argument("--no-figures", action="store_true",
                             help="skip figure rendering")
    return parser


def _load_config(args) -> PipelineConfig:
    path = args.config
    if path is None and args.command in _STAGE_COMMANDS:
        manifest = args.out / "scene.cfg"
        if manifest.exists():
            path = manifest
    entries = parse_config_file(path) if path is not None else {}
    cfg = pipeline_config_from(entries)
    if args.seed is not None:
        scene = dataclasses.replace(cfg.scene, seed=args.seed)
        cfg = dataclasses.replace(cfg, scene=scene, seed=args.seed)
    if args.variant is not None:
        cfg = dataclasses.replace(cfg, fusion_mode=args.variant)
    if args.gt_mask:
        cfg = dataclasses.replace(cfg, use_gt_mask=True)
    return cfg


def _print_metrics(metrics: MetricReport, fmt: str) -> None:
    if fmt == "csv":
        sep = ","
        print(MetricReport.tsv_header().replace("\t", sep))
        print(metrics.tsv_line().replace("\t", sep))
    else:
        print(MetricReport.tsv_header())
        print(metrics.tsv_line())
        print(metrics.key_value_block())


def _dispatch(args) -> int:
    cfg = _load_config(args)
    out: Path = args.out

    if args.command == "run":
        report = run_pipeline(cfg, out)
        if args.format == "csv":
            print(report.text().replace("\t", ","), end="")
        else:
            print(report.text(), end="")
        if not args.no_figures:
            for path in render_run_figures(out, cfg.scene.num_frames):
                print(f"# figure {path}")
        for stage, ms in report.timings_ms.items():
            print(f"# timing {stage} {ms:.1f} ms")
        return 0

    if args.command == "ablate":
        base = args.seed if args.seed is not None else 0
        seeds = list(range(base, base + args.seeds))
        report = ablation_sweep(cfg, seeds, out)
        sep = "," if args.format == "csv" else "\t"
        print(report.table(sep), end="")
        if not args.no_figures:
            path = render_ablation_figure(report, out / "figures"
                                          / "ablation.png")
            print(f"# figure {path}")
        return 0

    # Individual stages; each regenerates the deterministic scene truth from
    # the config and reads earlier-stage artifacts from the run directory.
    if args.command == "simulate":
        stage_simulate(cfg, out)
        print(f"# simulated {cfg.scene.num_frames} frames into {out}")
        return 0
    truth = generate_scene(cfg.scene)
    if args.command == "mine":
        summary = stage_mine(cfg, out, truth)
        print(f"tau={summary.tau:.17g}")
        print(f"saliency_auc={summary.saliency_auc:.9g}")
    elif args.command == "pose":
        stage_pass2(cfg, out, truth)
        print(f"# wrote pass-2 depth and trajectory into {out}")
    elif args.command == "fuse":
        stage_fuse(cfg, out, truth.num_frames)
        print(f"# wrote fused depth into {out / 'fused'}")
    elif args.command == "eval":
        metrics = stage_eval(cfg, out, truth)
        _print_metrics(metrics, args.format)
    return 0


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except ReconstructionError as exc:
        print(f"stage failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())

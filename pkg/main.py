#!/usr/bin/env python3
"""
MatteBuddy - Object-aware video matting
Command line entry point
"""

import argparse
import json
import logging
import os
import sys
import traceback


# Add src directory to path
def setup_paths():
    """Setup paths for both script and executable environments"""
    if getattr(sys, 'frozen', False):
        # Running as executable - src is bundled
        base_path = sys._MEIPASS
    else:
        # Running as script
        base_path = os.path.dirname(os.path.abspath(__file__))

    if base_path not in sys.path:
        sys.path.insert(0, base_path)

setup_paths()

from src.core.compositing import AugmentConfig, load_clip, sfm_compose, synth_sequence, write_clip
from src.core.config_manager import ConfigManager
from src.core.errors import ArgumentError, MatteBuddyError
from src.core.image_io import load_manifest, read_sequence
from src.core.logger import configure_logging
from src.core.metrics import evaluate, write_per_frame_csv, write_report_json
from src.core.pipeline import init_weights, run_manifest, sweep_ks
from src.core.version_manager import VersionManager

logger = logging.getLogger("mattebuddy")


def get_application_path():
    """Get the application directory path, works for both script and executable"""
    if getattr(sys, 'frozen', False):
        # Running as executable
        application_path = os.path.dirname(sys.executable)
    else:
        # Running as script
        application_path = os.path.dirname(os.path.abspath(__file__))
    return application_path


def parse_size(text):
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"size must look like HxW, got {text!r}")
    return h, w


def cmd_synth(args):
    h, w = args.size
    clip = synth_sequence(args.frames, h, w, args.objects, args.seed)
    maxval = 255 if args.bit_depth == 8 else 65535
    write_clip(clip, args.out, maxval=maxval, fps=args.fps, seed=args.seed)
    return 0


def cmd_augment(args):
    clip1, clip2 = load_clip(args.clip1), load_clip(args.clip2)
    bg_manifest = load_manifest(args.bg)
    backgrounds = read_sequence(bg_manifest.paths("frames"))
    clip = sfm_compose(clip1, clip2, backgrounds, AugmentConfig(args.p1, args.p2, args.seed))
    write_clip(clip, args.out, seed=args.seed)
    logger.info("Augmented clip: injected=%s single_supervision=%s",
                clip.meta["injected"], clip.meta["single_supervision"])
    return 0


def _config(args, **overrides):
    return ConfigManager(getattr(args, "config", None)).to_config(**overrides)


def cmd_infer(args):
    cfg = _config(args, seed=args.seed, ks=args.ks, save_attention=args.save_attention or None,
                  input_manifest=args.manifest, init_mask=args.init_mask, output_dir=args.out)
    if cfg.debug_mode:
        configure_logging(debug_mode=True)
    result = run_manifest(args.manifest, cfg, args.out, args.init_mask, args.weights)
    if result.report is not None:
        print(json.dumps(result.report.summary(), sort_keys=True))
    return 0


def cmd_eval(args):
    pred = load_manifest(args.pred)
    gt = load_manifest(args.gt)
    if not pred.alphas or not gt.alphas:
        raise ArgumentError("both manifests need an 'alphas' list")
    pred_alphas = read_sequence(pred.paths("alphas"))
    gt_alphas = read_sequence(gt.paths("alphas"))
    report = evaluate(pred_alphas, gt_alphas)
    write_report_json(report, args.out)
    if args.csv:
        write_per_frame_csv(report, args.csv)
    if args.pdf:
        from src.core.pdf_generator import MetricsPDFGenerator
        MetricsPDFGenerator().generate_metrics_pdf(report, args.pdf, pred=pred_alphas, gt=gt_alphas)
    print(json.dumps(report.summary(), sort_keys=True))
    return 0


def cmd_sweep_ks(args):
    cfg = _config(args, seed=args.seed)
    summary = sweep_ks(args.manifest, cfg, args.ks, args.out, args.init_mask)
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_init_weights(args):
    cfg = _config(args, seed=args.seed)
    store = init_weights(cfg, args.out)
    print(f"{len(store)} tensors written to {args.out}")
    return 0


def cmd_selftest(args):
    import pytest
    tests_dir = os.path.join(get_application_path(), "tests")
    if not os.path.isdir(tests_dir):
        raise ArgumentError(f"test suite not found at {tests_dir}")
    return int(pytest.main([tests_dir, "-q"] + (["-x"] if args.fail_fast else [])))


def build_parser():
    parser = argparse.ArgumentParser(prog="mattebuddy", description="Object-aware video matting")
    parser.add_argument("--version", action="version",
                        version=f"MatteBuddy {VersionManager().get_current_version()}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic matting clip")
    p.add_argument("--frames", type=int, required=True)
    p.add_argument("--size", type=parse_size, required=True, help="HxW")
    p.add_argument("--objects", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--fps", type=float, default=None)
    p.add_argument("--bit-depth", type=int, choices=(8, 16), default=8)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("augment", help="sequential foreground merging of two clips")
    p.add_argument("--clip1", required=True)
    p.add_argument("--clip2", required=True)
    p.add_argument("--bg", required=True)
    p.add_argument("--p1", type=float, default=0.4)
    p.add_argument("--p2", type=float, default=0.5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("infer", help="run the matting engine over a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--init-mask", default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--weights", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--ks", type=int, default=None)
    p.add_argument("--save-attention", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="score predicted alphas against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--csv", default=None)
    p.add_argument("--pdf", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep-ks", help="infer once per dilation kernel size")
    p.add_argument("--manifest", required=True)
    p.add_argument("--ks", type=int, nargs="+", default=[3, 5, 7])
    p.add_argument("--init-mask", default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep_ks)

    p = sub.add_parser("init-weights", help="write the seeded weight store")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_init_weights)

    p = sub.add_parser("selftest", help="run the bundled test suite")
    p.add_argument("-x", "--fail-fast", action="store_true")
    p.set_defaults(func=cmd_selftest)
    return parser


def main(argv=None):
    """Main application entry point"""
    args = build_parser().parse_args(argv)
    configure_logging(verbose=args.verbose)
    try:
        return args.func(args)
    except MatteBuddyError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    try:
        sys.exit(main())
    except Exception:
        traceback.print_exc()
        sys.exit(1)

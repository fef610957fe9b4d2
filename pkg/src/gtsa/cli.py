"""``gtsa`` command line: pretrain, probe, match, gradcheck, synth."""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys

log = logging.getLogger("gtsa")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise UsageError(message)


def build_parser() -> Parser:
    p = Parser(prog="gtsa", description="Self-supervised pretraining with crop- and rotation-sensitive targets")
    sub = p.add_subparsers(dest="command", parser_class=Parser)
    sub.required = True

    pre = sub.add_parser("pretrain", help="train teacher/student networks")
    pre.add_argument("--config", required=True)
    src = pre.add_mutually_exclusive_group(required=True)
    src.add_argument("--data")
    src.add_argument("--synthetic", type=int, metavar="N")
    pre.add_argument("--data-seed", type=int, default=0)
    pre.add_argument("--out", required=True)
    pre.add_argument("--resume", help="checkpoint to continue from")

    pr = sub.add_parser("probe", help="output-variance sensitivity per transform family")
    pr.add_argument("--ckpt", required=True)
    src = pr.add_mutually_exclusive_group(required=True)
    src.add_argument("--data")
    src.add_argument("--synthetic", type=int, metavar="N")
    pr.add_argument("--data-seed", type=int, default=0)
    pr.add_argument("--family", required=True,
                    choices=["color_jitter", "four_fold_rotation", "crop_multicrop", "all"])
    pr.add_argument("--n-views", type=int, default=10)
    pr.add_argument("--seed", type=int, default=0)
    pr.add_argument("--disable-transforms", action="store_true",
                    help="identity views only (variance must be 0)")
    pr.add_argument("--out", required=True)

    m = sub.add_parser("match", help="export top-K matched patch pairs between two global views")
    m.add_argument("--ckpt", required=True)
    m.add_argument("--image", required=True)
    m.add_argument("--k", type=int, required=True)
    m.add_argument("--seed", type=int, default=0)
    m.add_argument("--out", required=True, help="output prefix (.csv and .png are appended)")

    g = sub.add_parser("gradcheck", help="finite-difference check of the loss gradients")
    g.add_argument("--config")

    s = sub.add_parser("synth", help="write synthetic scenes as PNG files")
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--size", type=int, default=64)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    return p


def _set_threads():
    import torch

    n = int(os.environ.get("GTSA_THREADS", "0") or 0)
    if n > 0:
        torch.set_num_threads(n)


def _dataset(args, size):
    from gtsa.data import load_dataset, synthetic_dataset

    if args.data:
        return load_dataset(args.data, size)
    if args.synthetic < 1:
        raise UsageError("--synthetic needs N >= 1")
    log.info("synthetic dataset: %d images, size %d, data seed %d", args.synthetic, size, args.data_seed)
    return synthetic_dataset(args.synthetic, size, seed=args.data_seed)


def cmd_pretrain(args):
    from gtsa.config import TrainConfig
    from gtsa.plotting import plot_metrics
    from gtsa.trainer import run_pretrain

    cfg = TrainConfig.load(args.config)
    log.info("resolved config (seed %d):\n%s", cfg.seed, cfg.to_text().rstrip())
    data = _dataset(args, cfg.image_size)
    run_pretrain(cfg, data, args.out, resume=args.resume)
    with open(os.path.join(args.out, "metrics.csv"), newline="") as fh:
        rows = list(csv.DictReader(fh))
    plot_metrics(rows, os.path.join(args.out, "metrics.png"))
    log.info("wrote %s", os.path.join(args.out, "final.gtsa"))


def cmd_probe(args):
    from gtsa.plotting import plot_sensitivity
    from gtsa.probe import FAMILIES, checkpoint_encoders, sensitivity, write_report

    student, _, cfg = checkpoint_encoders(args.ckpt)
    log.info("resolved config (seed %d, probe seed %d):\n%s", cfg.seed, args.seed, cfg.to_text().rstrip())
    data = _dataset(args, cfg.image_size)
    families = FAMILIES if args.family == "all" else (args.family,)
    entries = [sensitivity(student.encode, data, f, cfg, args.n_views, args.seed,
                           enabled=not args.disable_transforms) for f in families]
    write_report(entries, args.out)
    plot_sensitivity(entries, os.path.splitext(args.out)[0] + ".png")
    for e in entries:
        log.info("%s: mean variance %.6g over %d images", e.family, e.mean_variance, e.n_images)


def cmd_match(args):
    from gtsa.data import read_image, standardize
    from gtsa.plotting import plot_matches
    from gtsa.probe import checkpoint_encoders, export_matches, write_matches

    student, teacher, cfg = checkpoint_encoders(args.ckpt)
    log.info("resolved config (seed %d, match seed %d):\n%s", cfg.seed, args.seed, cfg.to_text().rstrip())
    if args.k < 1:
        raise UsageError("--k must be at least 1")
    img = standardize(read_image(args.image), cfg.image_size)
    exp = export_matches(img, args.k, lambda x: student(x)[0], lambda x: teacher(x)[0], cfg, args.seed)
    write_matches(exp, args.out + ".csv")
    plot_matches(exp, args.out + ".png")
    log.info("wrote %d matched pairs to %s.csv", len(exp.records), args.out)


def cmd_gradcheck(args):
    from gtsa.config import TrainConfig, gradcheck_config
    from gtsa.gradcheck import gradcheck

    cfg = TrainConfig.load(args.config) if args.config else gradcheck_config()
    log.info("resolved config (seed %d):\n%s", cfg.seed, cfg.to_text().rstrip())
    report = gradcheck(cfg, seed=cfg.seed)
    for line in report.lines():
        print(line)
    print(f"max relative error {report.max_error:.3e} ({'PASS' if report.ok else 'FAIL'} at {report.tol:g})")
    return EXIT_OK if report.ok else EXIT_RUNTIME


def cmd_synth(args):
    from gtsa.data import synth_image, write_png

    if args.n < 1 or args.size < 32:
        raise UsageError("--n must be >= 1 and --size >= 32")
    log.info("synth: n=%d size=%d seed=%d", args.n, args.size, args.seed)
    os.makedirs(args.out, exist_ok=True)
    for i in range(args.n):
        write_png(os.path.join(args.out, f"synth_{i:05d}.png"),
                  synth_image(args.seed * 1_000_003 + i, args.size))


COMMANDS = {"pretrain": cmd_pretrain, "probe": cmd_probe, "match": cmd_match,
            "gradcheck": cmd_gradcheck, "synth": cmd_synth}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s",
                        stream=sys.stderr)
    try:
        args = build_parser().parse_args(argv)
    except UsageError:
        return EXIT_USAGE
    except SystemExit as e:  # --help
        return EXIT_OK if not e.code else EXIT_USAGE
    _set_threads()
    try:
        rc = COMMANDS[args.command](args)
    except UsageError as e:
        sys.stderr.write(f"gtsa: error: {e}\n")
        return EXIT_USAGE
    except Exception as e:
        log.error("%s failed: %s: %s", args.command, type(e).__name__, e)
        return EXIT_RUNTIME
    return EXIT_OK if rc is None else rc


if __name__ == "__main__":
    sys.exit(main())

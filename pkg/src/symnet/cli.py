"""Command-line entry point: ``symnet <subcommand> [options]``.

Exit status is 0 on success, 1 on a usage error and 2 on a data error.
Each run takes a lock file in its output directory, so two runs cannot
write to the same place at once.
"""
from __future__ import annotations

import argparse
import contextlib
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io
from .augment import apply_augment, sample_spec
from .baseline import detect_reflection_baseline, detect_rotation_baseline
from .dataset import Sample, find_image, list_images, load_dataset, read_ids, save_dataset
from .evaluate import compare_reports, comparison_summary, default_thresholds, evaluate_detector
from .exceptions import ParameterError, SymnetError
from .heatmap import SynthConfig, synth_kind
from .labels import KINDS, ClusterConfig, cluster_all, dump_consensus, dump_labels, \
    group_by_image, parse_consensus, parse_labels
from .network import NetConfig, activations, load_checkpoint, predict
from .synthdata import SynthSpec, gen_image, gen_rater_labels
from .trainer import TrainSchedule, read_train_config, split_dataset, train, write_log, \
    write_train_config

LOCK_NAME = ".symnet.lock"
CONSENSUS_NAME = "consensus.jsonl"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n{self.format_usage()}")


@contextlib.contextmanager
def output_lock(out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    lock = out_dir / LOCK_NAME
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise SymnetError(f"{out_dir} is locked by another run (remove {lock} if stale)") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield out_dir
    finally:
        lock.unlink(missing_ok=True)


def _setting(args, config, name, default, cast):
    """Flag value if given, else the config file's, else ``default``."""
    value = getattr(args, name, None)
    if value is not None:
        return value
    if name in config:
        try:
            return cast(config[name])
        except ValueError:
            raise SymnetError(f"{args.config}: bad value for {name}: {config[name]!r}") from None
    return default


def _config(args):
    return io.read_config(args.config) if getattr(args, "config", None) else {}


def _ids(args, images_dir):
    return read_ids(args.ids) if getattr(args, "ids", None) else list_images(images_dir)


def _load_images(images_dir, ids):
    out = {}
    for image_id in sorted(ids):
        img = io.read_image(find_image(images_dir, image_id))
        out[image_id] = img if img.ndim == 3 else np.repeat(img[..., None], 3, axis=2)
    return out


def _read_consensus(path):
    with open(path, encoding="utf-8") as fh:
        return parse_consensus(fh, source=str(path))


# -- subcommands -------------------------------------------------------------------

def cmd_cluster(args):
    config = _config(args)
    cfg = ClusterConfig(_setting(args, config, "tau", 5.0, float),
                        _setting(args, config, "min_labelers", 5, int))
    bounds = None
    if args.images:
        bounds = {i: io.image_size(find_image(args.images, i)) for i in list_images(args.images)}
    with open(args.labels, encoding="utf-8") as fh:
        labels = parse_labels(fh, bounds=bounds, source=str(args.labels))
    gts = cluster_all(labels, cfg)
    with output_lock(args.out) as out:
        (out / CONSENSUS_NAME).write_text(dump_consensus(gts), encoding="utf-8")
    print(f"{len(labels)} labels -> {len(gts)} consensus symmetries")


def cmd_synth_gt(args):
    config = _config(args)
    cfg = SynthConfig(_setting(args, config, "sigma", 5.0, float))
    by_image = group_by_image(_read_consensus(args.labels))
    kinds = [args.kind] if args.kind else list(KINDS)
    with output_lock(args.out) as out:
        for image_id in sorted(by_image):
            w, h = io.image_size(find_image(args.images, image_id))
            gts = by_image[image_id]
            if args.min_support is not None:
                gts = [g for g in gts if g.support >= args.min_support]
            for kind in kinds:
                (out / kind).mkdir(exist_ok=True)
                io.write_heatmap_pgm(out / kind / f"{image_id}.pgm",
                                     synth_kind(gts, kind, w, h, cfg), sidecar=args.sidecar)


def cmd_augment(args):
    seed = args.seed if args.seed is not None else 0
    samples = load_dataset(args.images, args.labels, _ids(args, args.images))
    out_samples = []
    for k, s in enumerate(samples):
        spec = sample_spec((seed, k), s.image.shape[:2], args.crop_fraction)
        image, gts = apply_augment(s.image, s.gts, spec)
        out_samples.append(Sample(s.image_id, image, gts))
    with output_lock(args.out) as out:
        save_dataset(out, out_samples)


def cmd_gen_synth(args):
    seed = args.seed if args.seed is not None else 0
    kind = args.kind or "reflection"
    samples, labels = [], []
    for k in range(args.count):
        image_id = f"synth{k:05d}"
        count = 1 + k % args.symmetries
        spec = SynthSpec(size=(args.size, args.size), kind=kind, count=count,
                         texture=args.texture, noise_level=args.noise_level,
                         seed=seed * 1_000_003 + k, image_id=image_id)
        image, gts = gen_image(spec)
        samples.append(Sample(image_id, image, gts))
        if args.raters:
            labels += gen_rater_labels(gts, args.raters, args.jitter, args.outlier_rate,
                                       seed=seed * 1_000_003 + k, size=(args.size, args.size))
    with output_lock(args.out) as out:
        save_dataset(out, samples)
        if args.raters:
            (out / "labels.jsonl").write_text(dump_labels(labels), encoding="utf-8")
        if args.split:
            tr, te = split_dataset([s.image_id for s in samples], args.split, seed)
            (out / "train_ids.txt").write_text("".join(i + "\n" for i in sorted(tr)))
            (out / "test_ids.txt").write_text("".join(i + "\n" for i in sorted(te)))


def cmd_train(args):
    if args.config:
        net_cfg, schedule, _extra = read_train_config(args.config)
    else:
        net_cfg, schedule = NetConfig(), TrainSchedule()
    if args.seed is not None:
        net_cfg = replace(net_cfg, seed=args.seed)
        schedule = replace(schedule, seed=args.seed)
    if args.sigma is not None:
        schedule = replace(schedule, sigma=args.sigma)
    kind = args.kind or "reflection"
    samples = load_dataset(args.images, args.labels, _ids(args, args.images))
    samples = [s for s in samples if any(g.kind == kind for g in s.gts)]
    if args.min_support is not None:
        samples = [replace(s, gts=[g for g in s.gts if g.support >= args.min_support])
                   for s in samples]
        samples = [s for s in samples if any(g.kind == kind for g in s.gts)]
    with output_lock(args.out) as out:
        params, log = train(net_cfg, schedule, samples, kind,
                            checkpoint_path=out / "checkpoint.symc")
        write_log(out / "train_log.csv", log)
        write_train_config(out / "train_config.txt", net_cfg, schedule, {"kind": kind})
    print(f"trained {len(log.records)} batches; final loss {log.losses[-1]:.6g}")


def _write_heatmaps(args, detect):
    images = _load_images(args.images, _ids(args, args.images))
    with output_lock(args.out) as out:
        for image_id, image in images.items():
            io.write_heatmap_pgm(out / f"{image_id}.pgm", detect(image), sidecar=args.sidecar)


def cmd_predict(args):
    params = load_checkpoint(args.checkpoint)
    _write_heatmaps(args, lambda im: predict(params, im))


def cmd_baseline(args):
    detect = detect_rotation_baseline if args.kind == "rotation" else detect_reflection_baseline
    _write_heatmaps(args, detect)


def _gt_set(args):
    by_image = group_by_image(_read_consensus(args.labels))
    if getattr(args, "ids", None):
        keep = set(read_ids(args.ids))
        by_image = {k: v for k, v in by_image.items() if k in keep}
    return by_image


def _report(pred_dir, args, gt_set, name):
    return evaluate_detector(pred_dir, gt_set, args.kind or "reflection", args.min_support,
                             detector_id=name, thresholds=default_thresholds(args.thresholds))


def pr_plot(curve, size=101):
    """Recall on x, precision on y, as an 8-bit raster (white curve on black)."""
    img = np.zeros((size, size), dtype=np.uint8)
    xs = np.rint(np.asarray(curve.recall) * (size - 1)).astype(int)
    ys = (size - 1) - np.rint(np.asarray(curve.precision) * (size - 1)).astype(int)
    img[ys, xs] = 255
    return img


def cmd_eval(args):
    report = _report(args.pred, args, _gt_set(args), Path(args.pred).name or "pred")
    with output_lock(args.out) as out:
        (out / "curve.csv").write_text(report.mean_curve.to_csv())
        (out / "per_image.csv").write_text(report.per_image_csv())
        (out / "summary.txt").write_text(report.summary())
        if args.plot:
            io.write_image(out / "pr_curve.pgm", pr_plot(report.mean_curve))
    sys.stdout.write(report.summary())


def cmd_compare(args):
    gts = _gt_set(args)
    a = _report(args.pred_a, args, gts, args.name_a or Path(args.pred_a).name)
    b = _report(args.pred_b, args, gts, args.name_b or Path(args.pred_b).name)
    text = comparison_summary(a, b, compare_reports(a, b))
    with output_lock(args.out) as out:
        (out / "comparison.txt").write_text(text)
        (out / "a_per_image.csv").write_text(a.per_image_csv())
        (out / "b_per_image.csv").write_text(b.per_image_csv())
    sys.stdout.write(text)


def cmd_dump_activations(args):
    params = load_checkpoint(args.checkpoint)
    image = io.read_image(args.image)
    if image.ndim == 2:
        image = np.repeat(image[..., None], 3, axis=2)
    with output_lock(args.out) as out:
        for name, a in activations(params, image).items():
            io.write_tensor(out / f"{name}.symt", a)


# -- parser ----------------------------------------------------------------------

def build_parser():
    p = _Parser(prog="symnet", description="Symmetry heatmap detection pipeline.")
    sub = p.add_subparsers(dest="command", metavar="subcommand", parser_class=_Parser)

    def add(name, func, help_text, *, images=False, labels=False, kind=False, ids=False,
            sidecar=False):
        sp = sub.add_parser(name, help=help_text)
        sp.set_defaults(func=func)
        sp.add_argument("--out", required=True, help="output directory")
        sp.add_argument("--config", help="key=value settings file")
        sp.add_argument("--seed", type=int)
        if images:
            sp.add_argument("--images", required=images == "required",
                            help="directory of <id>.ppm / <id>.pgm images")
        if labels:
            sp.add_argument("--labels", required=True, help=labels)
        if kind:
            sp.add_argument("--kind", choices=KINDS)
        if ids:
            sp.add_argument("--ids", help="file listing image ids, one per line")
        if sidecar:
            sp.add_argument("--sidecar", action="store_true",
                            help="also write exact float heatmaps as <file>.symt")
        return sp

    sp = add("cluster", cmd_cluster, "rater labels -> consensus symmetries", images=True,
             labels="rater label file (JSON lines)")
    sp.add_argument("--tau", type=float, help="clustering radius in pixels (default 5)")
    sp.add_argument("--min-labelers", dest="min_labelers", type=int,
                    help="distinct raters needed per cluster (default 5)")

    sp = add("synth-gt", cmd_synth_gt, "consensus -> ground-truth heatmap PGMs",
             images="required", labels="consensus file", kind=True, sidecar=True)
    sp.add_argument("--sigma", type=float, help="Gaussian width in pixels (default 5)")
    sp.add_argument("--min-support", dest="min_support", type=int)

    sp = add("augment", cmd_augment, "write one seeded augmentation of each image",
             images="required", labels="consensus file", ids=True)
    sp.add_argument("--crop-fraction", dest="crop_fraction", type=float, default=0.9)

    sp = add("gen-synth", cmd_gen_synth, "generate a synthetic dataset", kind=True)
    sp.add_argument("--count", type=int, default=10, help="number of images")
    sp.add_argument("--size", type=int, default=64, help="image edge in pixels")
    sp.add_argument("--symmetries", type=int, default=1,
                    help="image k carries 1 + k %% N symmetries")
    sp.add_argument("--texture", default="filtered-noise",
                    choices=("filtered-noise", "blob-collage"))
    sp.add_argument("--noise-level", dest="noise_level", type=float, default=0.0)
    sp.add_argument("--raters", type=int, default=0, help="also simulate this many raters")
    sp.add_argument("--jitter", type=float, default=1.0)
    sp.add_argument("--outlier-rate", dest="outlier_rate", type=float, default=0.0)
    sp.add_argument("--split", type=float, help="also write train/test id lists at this ratio")

    sp = add("train", cmd_train, "train a heatmap network", images="required",
             labels="consensus file", kind=True, ids=True)
    sp.add_argument("--sigma", type=float)
    sp.add_argument("--min-support", dest="min_support", type=int)

    sp = add("predict", cmd_predict, "network heatmaps for a directory of images",
             images="required", ids=True, sidecar=True)
    sp.add_argument("--checkpoint", required=True)

    add("baseline", cmd_baseline, "classical detector heatmaps", images="required",
        kind=True, ids=True, sidecar=True)

    for name, func, help_text in (("eval", cmd_eval, "score one prediction directory"),
                                  ("compare", cmd_compare, "paired t-test of two detectors")):
        sp = add(name, func, help_text, labels="consensus file", kind=True, ids=True)
        sp.add_argument("--min-support", dest="min_support", type=int)
        sp.add_argument("--thresholds", type=int, default=100)
        if name == "eval":
            sp.add_argument("--pred", required=True, help="directory of <id>.pgm heatmaps")
            sp.add_argument("--plot", action="store_true", help="also render pr_curve.pgm")
        else:
            sp.add_argument("--pred-a", dest="pred_a", required=True)
            sp.add_argument("--pred-b", dest="pred_b", required=True)
            sp.add_argument("--name-a", dest="name_a")
            sp.add_argument("--name-b", dest="name_b")

    sp = add("dump-activations", cmd_dump_activations, "per-layer channel sums as SYMT files")
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--image", required=True)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_help())
        if getattr(args, "thresholds", 100) < 2:
            raise UsageError("--thresholds must be at least 2")
    except UsageError as exc:
        sys.stderr.write(str(exc))
        return 1
    except SystemExit as exc:  # --help
        return 0 if exc.code in (0, None) else 1
    try:
        args.func(args)
    except (SymnetError, ParameterError, OSError) as exc:
        sys.stderr.write(f"symnet {args.command}: error: {exc}\n")
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())

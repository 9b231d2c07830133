"""Command line entry point: ``lnbnn <subcommand> ...``."""

from __future__ import annotations

import argparse
import json
import sys

from lnbnn import __version__, _backend, bench, dataset
from lnbnn.classifiers import DEFAULT_BANDWIDTH, DEFAULT_K
from lnbnn.core import DEFAULT_ALPHA


def _int_list(text: str) -> list[int]:
    try:
        values = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--k", type=int, default=DEFAULT_K, help="Local NBNN neighborhood size (default: %(default)s)")
    p.add_argument("--alpha", type=float, default=DEFAULT_ALPHA,
                   help="location weight applied when the data carries locations (default: %(default)s)")
    p.add_argument("--trees", type=int, default=4, help="randomized KD-trees per index (default: %(default)s)")
    p.add_argument("--checks", type=int, default=None,
                   help="distance-check budget per search; omit for exact brute-force search")
    p.add_argument("--seed", type=int, default=0, help="seed for splits, data and forests (default: %(default)s)")
    p.add_argument("--threads", type=int, default=1, help="worker threads over query images (default: %(default)s)")
    p.add_argument("--bandwidth", type=float, default=DEFAULT_BANDWIDTH,
                   help="posterior bandwidth for the log-odds rules, 2*sigma^2 (default: %(default)s)")
    p.add_argument("--out", default="-", help="output CSV path, '-' for stdout (default: %(default)s)")


def _add_data(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("data", "either --data FILE or synthetic parameters")
    g.add_argument("--data", help="descriptor file (.ldsc binary or .csv fixture)")
    g.add_argument("--locations", action="store_true", help="CSV rows carry x,y after the image id")
    g.add_argument("--train-images", type=int, default=10, help="training images per class (default: %(default)s)")
    g.add_argument("--query-images", type=int, default=30, help="synthetic query images per class")
    g.add_argument("--classes", type=int, default=10, help="synthetic class count")
    g.add_argument("--descriptors", type=int, default=20, help="synthetic descriptors per image")
    g.add_argument("--dim", type=int, default=8, help="synthetic descriptor dimension")
    g.add_argument("--separation", type=float, default=1.5, help="synthetic class-mean separation")
    g.add_argument("--stddev", type=float, default=1.0, help="synthetic within-class stddev")
    g.add_argument("--clutter", type=float, default=0.5, help="synthetic clutter fraction")


def _spec_from(args) -> dataset.SyntheticSpec:
    return dataset.SyntheticSpec(
        class_count=args.classes, train_images_per_class=args.train_images,
        descriptors_per_image=args.descriptors, dimension=args.dim,
        class_mean_separation=args.separation, within_class_stddev=args.stddev,
        rng_seed=args.seed, query_images_per_class=args.query_images,
        clutter_fraction=args.clutter)


def _load_split(args):
    if args.data:
        data = dataset.load_any(args.data, alpha=args.alpha, has_locations=args.locations)
        return dataset.split_by_image(data, args.train_images, args.seed)
    return dataset.generate_synthetic(_spec_from(args))


def _params(args) -> bench.EvalParams:
    return bench.EvalParams(k=args.k, alpha=args.alpha, trees=args.trees, checks=args.checks,
                            seed=args.seed, threads=args.threads, bandwidth=args.bandwidth)


def cmd_evaluate(args) -> None:
    train, queries = _load_split(args)
    report = bench.evaluate(args.method, train, queries, _params(args))
    rows = [(c, int(report.confusion[c].sum()), int(report.confusion[c, c]), report.per_class_accuracy[c])
            for c in range(train.class_count)]
    bench.write_csv(("class_id", "queries", "correct", "accuracy"), rows, args.out)
    summary = {
        "method": args.method,
        "mean_per_class_accuracy": report.mean_per_class_accuracy,
        "build_seconds": round(report.build_seconds, 6),
        "query_seconds": round(report.query_seconds, 6),
        "backend": _backend.name,
    }
    if report.mean_increments is not None:
        summary["mean_increments"] = report.mean_increments
    print(json.dumps(summary), file=sys.stderr)


def cmd_sweep_k(args) -> None:
    train, queries = _load_split(args)
    rows = bench.sweep_k(train, queries, args.ks, _params(args))
    bench.write_csv(bench.K_HEADER, rows, args.out)


def cmd_sweep_checks(args) -> None:
    train, queries = _load_split(args)
    rows = bench.sweep_checks(train, queries, args.methods.split(","), args.budgets, _params(args))
    bench.write_csv(bench.CHECKS_HEADER, rows, args.out)


def cmd_scaling(args) -> None:
    spec = _spec_from(args)
    rows = bench.scaling_experiment(args.class_counts, spec, args.checks or 64, k=args.k,
                                    trees=args.trees, repeats=args.repeats)
    bench.write_csv(bench.SCALING_HEADER, rows, args.out)


def cmd_gen_synthetic(args) -> None:
    if args.out == "-":
        raise SystemExit("gen-synthetic needs --out FILE")
    data = dataset.generate_dataset(_spec_from(args))
    if args.out.lower().endswith(".csv"):
        dataset.save_csv(args.out, data)
    else:
        dataset.save_descriptor_file(args.out, data)
    print(f"wrote {len(data)} descriptors ({data.class_count} classes, "
          f"{len(set(data.image_ids.tolist()))} images) to {args.out}", file=sys.stderr)


def cmd_convert(args) -> None:
    data = dataset.load_any(args.input, has_locations=args.locations)
    if args.output.lower().endswith(".csv"):
        dataset.save_csv(args.output, data)
    else:
        dataset.save_descriptor_file(args.output, data)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lnbnn", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("evaluate", help="classify held-out images and report per-class accuracy")
    p.add_argument("--method", choices=bench.METHODS, default="local")
    _add_common(p)
    _add_data(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep-k", help="Local NBNN accuracy as a function of k")
    p.add_argument("--ks", type=_int_list, default=[1, 2, 5, 10, 20, 50, 100])
    _add_common(p)
    _add_data(p)
    p.set_defaults(func=cmd_sweep_k)

    p = sub.add_parser("sweep-checks", help="accuracy and query time against the search budget")
    p.add_argument("--methods", default="nbnn,local")
    p.add_argument("--budgets", type=_int_list, default=[1, 4, 16, 64, 256, 1024])
    _add_common(p)
    _add_data(p)
    p.set_defaults(func=cmd_sweep_checks)

    p = sub.add_parser("scaling", help="query time against the number of classes")
    p.add_argument("--class-counts", type=_int_list, default=[2, 4, 8, 16, 32, 64])
    p.add_argument("--repeats", type=int, default=3)
    _add_common(p)
    _add_data(p)
    p.set_defaults(func=cmd_scaling, descriptors=30, dim=16, separation=3.0, clutter=0.0)

    p = sub.add_parser("gen-synthetic", help="write a synthetic labeled descriptor file")
    _add_common(p)
    _add_data(p)
    p.set_defaults(func=cmd_gen_synthetic)

    p = sub.add_parser("convert", help="convert between CSV fixtures and the binary format")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--locations", action="store_true", help="CSV rows carry x,y after the image id")
    p.set_defaults(func=cmd_convert)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.func(args)
    except (ValueError, OSError) as exc:
        print(f"lnbnn: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())

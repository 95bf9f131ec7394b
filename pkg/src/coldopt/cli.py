"""Command-line surface.

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numerical
failure (e.g. no feasible starts).
"""

import argparse
import json
import math
import os
import sys

import numpy as np

from . import io, objectives
from .density import MixtureDensity
from .hnsw import HnswIndex
from .model import MlpPredictor, TrainingDivergedError
from .optimizer import InfeasibleStartError, NonFiniteEvaluationError, OptConfig
from .pipeline import (
    GridSpec,
    NoFeasibleStartsError,
    knn_accuracy_study,
    knn_timing_study,
    run_cold,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERICAL = 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _default_workers():
    env = os.environ.get("COLD_WORKERS")
    if env is not None:
        try:
            return max(1, int(env))
        except ValueError:
            raise UsageError(f"COLD_WORKERS must be an integer, got {env!r}")
    return os.cpu_count() or 1


def build_parser():
    parser = _Parser(prog="cold", description="Density-constrained latent-space optimisation")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("density", help="evaluate mixture log-density at points")
    p.add_argument("--encodings", required=True, help="encodings file (binary or CSV)")
    p.add_argument("--points", required=True, help="points file (COLDPTS1)")
    p.add_argument("--mode", choices=["exact", "knn"], default="exact")
    p.add_argument("--k", type=int, help="neighbor count (required for knn mode)")
    p.add_argument("--ef", type=int, help="query beam width (knn mode)")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", required=True, help="output CSV (point_index, log_density)")

    p = sub.add_parser("sample", help="sample latent points from N(0, b I)")
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--b", type=float, default=1.0, help="variance scale")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output points file")

    p = sub.add_parser("optimize", help="run the full pipeline from a JSON config")
    p.add_argument("--config", required=True)
    p.add_argument("--workers", type=int, default=None)

    p = sub.add_parser("objective", help="compute an image objective per PGM file")
    p.add_argument("--metric", choices=["thickness", "aspect", "rotation"], required=True)
    p.add_argument("--images", nargs="+", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("diversity", help="print the pairwise image diversity")
    p.add_argument("--images", nargs="+", required=True)

    p = sub.add_parser("bench-knn", help="accuracy and timing study of the k-NN density")
    p.add_argument("--encodings", required=True)
    p.add_argument("--points", required=True)
    p.add_argument("--ks", required=True, help="comma-separated neighbor counts")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", required=True, help="output CSV")

    return parser


def cmd_density(args):
    means, variances = io.read_encodings(args.encodings)
    points = io.read_points(args.points)
    model = MixtureDensity().fit(means, variances)
    workers = args.workers or _default_workers()
    if args.mode == "knn":
        if args.k is None:
            raise UsageError("--k is required with --mode knn")
        if not 1 <= args.k <= model.n_components_:
            raise UsageError(f"--k must lie in [1, {model.n_components_}]")
        index = HnswIndex().fit(model.means_)
        logd = model.score_samples(points, mode="knn", index=index, k=args.k,
                                   ef_search=args.ef, workers=workers)
    else:
        if args.k is not None or args.ef is not None:
            raise UsageError("--k/--ef only apply to --mode knn")
        logd = model.score_samples(points, workers=workers)
    io.write_csv(args.out, ["point_index", "log_density"],
                 [(i, float(v)) for i, v in enumerate(logd)])
    return EXIT_OK


def cmd_sample(args):
    if args.count < 1:
        raise UsageError("--count must be >= 1")
    if args.dim < 1:
        raise UsageError("--dim must be >= 1")
    if args.b <= 0:
        raise UsageError("--b must be positive")
    from .pipeline import sample_grid

    points = sample_grid(GridSpec(count=args.count, b=args.b, seed=args.seed), args.dim)
    io.write_points(args.out, points)
    return EXIT_OK


def _load_run_config(path):
    with open(path) as fh:
        try:
            return json.load(fh)
        except json.JSONDecodeError as exc:
            raise io.FormatError(f"{path}: invalid JSON ({exc})")


def _build_decoder(spec):
    if spec in (None, "none"):
        return None
    if not isinstance(spec, dict) or spec.get("kind") != "toy-linear":
        raise io.FormatError(f"unknown decoder spec {spec!r}")
    weight = np.asarray(spec["weight"], dtype=np.float64)
    bias = np.asarray(spec["bias"], dtype=np.float64)
    side = spec.get("image_side")
    maxval = float(spec.get("maxval", 255))

    def decoder(z):
        x = weight @ z + bias
        if side is not None:
            x = np.clip(x, 0.0, maxval).reshape(side, side)
        return x

    return decoder


_TRUE_SCORES = {
    "thickness": objectives.thickness,
    "aspect": objectives.aspect_ratio,
    "rotation": objectives.rotation,
}


def cmd_optimize(args):
    cfg = _load_run_config(args.config)
    try:
        means, variances = io.read_encodings(cfg["encodings"])
        predictor = MlpPredictor.from_json(cfg["predictor_weights"])
        grid = GridSpec(**cfg["grid"])
        eta = cfg["eta"]
        t = int(cfg["t"])
        out_report = cfg["output"]["report"]
        out_starts = cfg["output"]["starts"]
    except KeyError as exc:
        raise io.FormatError(f"{args.config}: missing config key {exc}")
    eta = -math.inf if eta in ("-inf", "-Infinity") else float(eta)
    decoder = _build_decoder(cfg.get("decoder", "none"))
    score_name = cfg.get("true_score", "none")
    true_score = None
    if score_name != "none":
        if score_name not in _TRUE_SCORES:
            raise io.FormatError(f"unknown true_score {score_name!r}")
        maxval = float(cfg.get("decoder", {}).get("maxval", 255)) if isinstance(cfg.get("decoder"), dict) else 255.0
        fn = _TRUE_SCORES[score_name]
        true_score = lambda img: fn(img, maxval=maxval)

    opt_config = OptConfig(**cfg.get("opt", {}))
    mode_spec = cfg.get("mode", "exact")
    model = MixtureDensity().fit(means, variances)
    index = k = ef = None
    mode = "exact"
    if isinstance(mode_spec, dict):
        if mode_spec.get("kind") != "knn":
            raise io.FormatError(f"unknown mode {mode_spec!r}")
        mode, k, ef = "knn", int(mode_spec["k"]), mode_spec.get("ef_search")
        index = HnswIndex().fit(model.means_)
    elif mode_spec != "exact":
        raise io.FormatError(f"unknown mode {mode_spec!r}")

    workers = args.workers or _default_workers()
    report = run_cold(model, predictor, grid, eta, t, opt_config=opt_config,
                      decoder=decoder, true_score=true_score, mode=mode,
                      index=index, k=k, ef_search=ef, workers=workers)

    dim = model.n_features_
    header = (
        [f"start_{d}" for d in range(dim)] + [f"opt_{d}" for d in range(dim)]
        + ["log_density_start", "log_density_opt", "predicted_score_start",
           "predicted_score_opt", "true_score", "decode_ok", "termination_reason", "n_evals"]
    )
    rows = []
    for rec in report.records:
        rows.append(
            list(rec.candidate.point) + list(rec.optimum)
            + [rec.candidate.log_density, rec.log_density_opt,
               rec.candidate.predicted_score, rec.predicted_score_opt,
               "" if rec.true_score is None else io.FLOAT_FMT % rec.true_score,
               int(rec.decode_ok), rec.reason, rec.n_evals]
        )
    io.write_csv(out_starts, header, rows)

    doc = {
        "eta": "-inf" if eta == -math.inf else eta,
        "t": t,
        "n_starts": len(report.records),
        "truncated": report.truncated,
        "all_decodes_failed": all(not r.decode_ok for r in report.records),
        "aggregates": {
            "median_log_density": report.median_log_density,
            "mean_true_score": report.mean_true_score,
            "max_true_score": report.max_true_score,
            "frac_decoded": report.frac_decoded,
            "diversity": report.diversity,
        },
    }
    with open(out_report, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return EXIT_OK


def cmd_objective(args):
    fn = {"thickness": objectives.thickness, "aspect": objectives.aspect_ratio,
          "rotation": objectives.rotation}[args.metric]
    rows = []
    parsed_any = False
    for path in args.images:
        try:
            pixels, maxval = io.read_pgm(path)
        except (io.FormatError, OSError) as exc:
            rows.append((path, "", f"unreadable: {exc}"))
            continue
        parsed_any = True
        try:
            value = fn(pixels, maxval=maxval)
            rows.append((path, value, ""))
        except (objectives.ObjectiveUndefinedError, ValueError) as exc:
            rows.append((path, "", f"undefined: {exc}"))
    io.write_csv(args.out, ["image", "value", "error"], rows)
    return EXIT_OK if parsed_any else EXIT_DATA


def cmd_diversity(args):
    if len(args.images) < 2:
        raise UsageError("diversity requires at least 2 images")
    images = []
    maxval = 1.0
    for path in args.images:
        pixels, m = io.read_pgm(path)
        images.append(pixels)
        maxval = max(maxval, float(m))
    print("%.12g" % objectives.diversity(images, maxval=maxval))
    return EXIT_OK


def cmd_bench_knn(args):
    try:
        ks = sorted({int(s) for s in args.ks.split(",")})
    except ValueError:
        raise UsageError(f"--ks must be comma-separated integers, got {args.ks!r}")
    means, variances = io.read_encodings(args.encodings)
    points = io.read_points(args.points)
    model = MixtureDensity().fit(means, variances)
    if not ks or ks[0] < 1 or ks[-1] > model.n_components_:
        raise UsageError(f"--ks values must lie in [1, {model.n_components_}]")
    workers = args.workers or _default_workers()
    index = HnswIndex().fit(model.means_)
    acc = knn_accuracy_study(model, index, points, ks, workers=workers)
    tim = knn_timing_study(model, index, points, ks, workers=workers)
    rows = [
        (k, a_mean, e_mean, a_s, e_s)
        for (k, a_mean, e_mean), (_, a_s, e_s) in zip(acc, tim)
    ]
    io.write_csv(args.out, ["k", "approx_mean_log_density", "exact_mean_log_density",
                            "approx_seconds", "exact_seconds"], rows)
    return EXIT_OK


_COMMANDS = {
    "density": cmd_density,
    "sample": cmd_sample,
    "optimize": cmd_optimize,
    "objective": cmd_objective,
    "diversity": cmd_diversity,
    "bench-knn": cmd_bench_knn,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (io.FormatError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NoFeasibleStartsError, NonFiniteEvaluationError, InfeasibleStartError,
            TrainingDivergedError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())

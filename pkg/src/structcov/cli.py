"""Command-line driver: dataset generation, fitting, evaluation tables,
sampling galleries, denoising runs, and report aggregation.

Commands write CSV metrics and 8-bit P5 PGM images only. Every command is
reproducible from its arguments and seed; output files are written
atomically (temp file + rename). Exit codes: 0 success, 1 runtime error,
2 usage error.
"""
from __future__ import annotations

import argparse
import io
import math
import os
import sys
import tempfile

import numpy as np

from .estimator import (
    CondRegressor,
    DiagonalHead,
    LowRankHead,
    SparseHead,
    TrainConfig,
    fit,
    evaluate,
    init_regressor,
    load_regressor,
    predict_gaussian,
    save_regressor,
)
from .denoise import denoise
from .gaussian import chol_factor
from .sparse import build_pattern
from .synthdata import (
    EllipseConfig,
    LinearReconstructor,
    SplineConfig,
    SynthRecord,
    gen_ellipses,
    gen_splines,
    linear_reconstructor_fit,
    read_dataset,
    write_dataset,
)

HIDDEN_LAYERS = [100, 100]
DEFAULT_PATCH = 3
DEFAULT_RANK = 8


# ---------------------------------------------------------------------------
# Output helpers

def _atomic_write_bytes(path: str, payload: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as handle:
            handle.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _write_csv(path: str, header: list[str], rows: list[list[str]]) -> None:
    lines = [",".join(header)]
    lines.extend(",".join(row) for row in rows)
    _atomic_write_bytes(path, ("\n".join(lines) + "\n").encode("utf-8"))


def _fmt(value: float) -> str:
    return repr(float(value))


def _summary(values: np.ndarray) -> str:
    mean = float(np.mean(values))
    std = float(np.std(values))
    return f"{mean:.6g} ± {std:.6g}"


def _image_shape(n: int) -> tuple[int, int]:
    side = math.isqrt(n)
    if side * side == n:
        return side, side
    return 1, n


def _to_pgm(image: np.ndarray) -> bytes:
    """Render values in [-1, 1] as an 8-bit binary PGM, clamping outliers."""
    grey = np.rint(np.clip((image + 1.0) * 127.5, 0.0, 255.0)).astype(np.uint8)
    height, width = grey.shape
    return f"P5\n{width} {height}\n255\n".encode("ascii") + grey.tobytes()


def _write_panels(path: str, vectors: list[np.ndarray], shape: tuple[int, int]) -> None:
    panels = [np.asarray(v, dtype=np.float64).reshape(shape) for v in vectors]
    _atomic_write_bytes(path, _to_pgm(np.hstack(panels)))


# ---------------------------------------------------------------------------
# Shared model plumbing

def _dataset_arrays(records: list[SynthRecord]):
    means = np.array([rec.mean for rec in records])
    samples = np.array([rec.sample for rec in records])
    covs = np.array([rec.gt_cov for rec in records])
    return means, samples, covs


def _conditioning_for(
    reg: CondRegressor, means: np.ndarray, samples: np.ndarray
) -> tuple[np.ndarray, np.ndarray, LinearReconstructor | None]:
    """Conditioning and predicted-mean arrays matching the regressor input.

    A regressor whose input width equals the signal size conditions on the
    per-record mean; a narrower input is a reconstructor code, and the
    reconstructor is refit deterministically from the dataset samples.
    """
    n = means.shape[1]
    width = reg.weights[0].shape[0]
    if width == n:
        return means, means, None
    if width < n:
        recon = linear_reconstructor_fit(samples, width)
        return recon.code(samples), recon.reconstruct(samples), recon
    raise ValueError(
        f"model expects conditioning of size {width}, but the dataset has "
        f"{n}-pixel records"
    )


def _gt_nll(mean: np.ndarray, cov: np.ndarray, x: np.ndarray) -> float:
    factor = chol_factor(cov)
    resid = np.linalg.solve(factor, x - mean)
    return 2.0 * float(np.log(np.diag(factor)).sum()) + float(resid @ resid)


# ---------------------------------------------------------------------------
# Commands

def _gen_config(args: argparse.Namespace):
    if args.dataset == "splines":
        base = SplineConfig()
        return SplineConfig(
            variance=base.variance if args.variance is None else args.variance,
            jitter=base.jitter if args.jitter is None else args.jitter,
            mean_scale=base.mean_scale if args.mean_scale is None else args.mean_scale,
            diag_offset=base.diag_offset if args.diag_offset is None else args.diag_offset,
        )
    base = EllipseConfig()
    return EllipseConfig(
        variance=base.variance if args.variance is None else args.variance,
        jitter=base.jitter if args.jitter is None else args.jitter,
        length_along=base.length_along if args.length_along is None else args.length_along,
        length_across=base.length_across if args.length_across is None else args.length_across,
    )


def _cmd_gen(args: argparse.Namespace) -> None:
    generator = gen_splines if args.dataset == "splines" else gen_ellipses
    records = list(generator(args.count, seed=args.seed, config=_gen_config(args)))
    buffer = io.BytesIO()
    write_dataset(buffer, records)
    _atomic_write_bytes(args.out, buffer.getvalue())
    print(f"wrote {args.count} {args.dataset} records to {args.out}")


def _build_head(args: argparse.Namespace, n: int):
    if args.head == "sparse_chol":
        patch = DEFAULT_PATCH if args.patch is None else args.patch
        return SparseHead(pattern=build_pattern(_image_shape(n), patch))
    if args.head == "diagonal":
        return DiagonalHead(n=n)
    return LowRankHead(n=n, rank=DEFAULT_RANK if args.rank is None else args.rank)


def _cmd_fit(args: argparse.Namespace) -> None:
    records = read_dataset(args.dataset)
    means, samples, _ = _dataset_arrays(records)
    n = means.shape[1]
    if args.cond == "code":
        recon = linear_reconstructor_fit(samples, max(1, n // 4))
        cond, mean = recon.code(samples), recon.reconstruct(samples)
    else:
        cond, mean = means, means
    head = _build_head(args, n)
    reg = init_regressor(
        [cond.shape[1], *HIDDEN_LAYERS, head.param_count], head, seed=args.seed
    )
    config = TrainConfig(
        learning_rate=args.lr,
        epochs=args.epochs,
        batch_size=args.batch,
        seed=args.seed,
    )
    report = fit(reg, cond, mean, samples, config)
    buffer = io.BytesIO()
    save_regressor(buffer, reg)
    _atomic_write_bytes(args.out, buffer.getvalue())
    rows = [[str(epoch), _fmt(value)] for epoch, value in enumerate(report.train_nll)]
    _write_csv(args.out + ".csv", ["epoch", "train_nll"], rows)
    print(
        f"fit {args.head} head on {len(records)} records: "
        f"train nll {report.train_nll[0]:.4f} -> {report.train_nll[-1]:.4f}"
    )


def _cmd_eval(args: argparse.Namespace) -> None:
    records = read_dataset(args.dataset)
    means, samples, covs = _dataset_arrays(records)
    n = means.shape[1]
    constant = n * math.log(2.0 * math.pi) if args.full_nll else 0.0
    if args.model == "gt":
        # Self-comparison: the divergence columns are zero by definition.
        nll = np.array(
            [_gt_nll(means[i], covs[i], samples[i]) for i in range(len(records))]
        )
        kls = np.zeros(len(records))
        frobs = np.zeros(len(records))
    else:
        reg = load_regressor(args.model)
        cond, mean, _ = _conditioning_for(reg, means, samples)
        nll, kls, frobs = evaluate(reg, cond, mean, samples, gt_cov=covs)
    nll = nll + constant
    rows = [
        [str(i), _fmt(nll[i]), _fmt(kls[i]), _fmt(frobs[i])]
        for i in range(len(records))
    ]
    rows.append(["summary", _summary(nll), _summary(kls), _summary(frobs)])
    _write_csv(args.out, ["record_id", "nll", "kl_to_gt", "frob_to_gt"], rows)
    print(
        f"eval {args.model} on {len(records)} records: "
        f"mean nll {np.mean(nll):.4f}, mean kl {np.mean(kls):.4f}"
    )


def _cmd_sample(args: argparse.Namespace) -> None:
    records = read_dataset(args.dataset)
    means, samples, _ = _dataset_arrays(records)
    reg = load_regressor(args.model)
    cond, mean, _ = _conditioning_for(reg, means, samples)
    shape = _image_shape(means.shape[1])
    rng = np.random.default_rng(args.seed)
    os.makedirs(args.out, exist_ok=True)
    count = min(args.count, len(records))
    for i in range(count):
        predicted = predict_gaussian(reg, cond[i], mean[i])
        drawn = predicted.sample(rng.standard_normal(means.shape[1]))
        _write_panels(
            os.path.join(args.out, f"sample_{i:03d}.pgm"),
            [means[i], samples[i], drawn],
            shape,
        )
    print(f"wrote {count} sample triptychs to {args.out}")


def _cmd_denoise(args: argparse.Namespace) -> None:
    records = read_dataset(args.dataset)
    means, samples, _ = _dataset_arrays(records)
    n = means.shape[1]
    reg = load_regressor(args.model)
    width = reg.weights[0].shape[0]
    rank = width if width < n else max(1, n // 4)
    recon = linear_reconstructor_fit(samples, rank)
    shape = _image_shape(n)
    k = args.k if args.k is not None else max(1, n // 4)
    rng = np.random.default_rng(args.seed)
    os.makedirs(args.out, exist_ok=True)
    mse_noisy = np.empty(len(records))
    mse_denoised = np.empty(len(records))
    for i, rec in enumerate(records):
        clean = rec.sample
        noisy = clean + args.noise_sigma * rng.standard_normal(n)
        result = denoise(recon, reg, noisy, k=k)
        mse_noisy[i] = float(np.mean((noisy - clean) ** 2))
        mse_denoised[i] = float(np.mean((result.output - clean) ** 2))
        if i < args.count:
            prefix = os.path.join(args.out, f"denoise_{i:03d}")
            _write_panels(prefix + "_clean.pgm", [clean], shape)
            _write_panels(prefix + "_noisy.pgm", [noisy], shape)
            _write_panels(prefix + "_output.pgm", [result.output], shape)
    rows = [
        [str(i), _fmt(mse_noisy[i]), _fmt(mse_denoised[i])]
        for i in range(len(records))
    ]
    rows.append(["summary", _summary(mse_noisy), _summary(mse_denoised)])
    _write_csv(
        os.path.join(args.out, "mse.csv"),
        ["record_id", "mse_noisy", "mse_denoised"],
        rows,
    )
    print(
        f"denoised {len(records)} records: mean mse "
        f"{np.mean(mse_noisy):.6f} noisy -> {np.mean(mse_denoised):.6f} output"
    )


def _cmd_report(args: argparse.Namespace) -> None:
    header = ["source", "nll", "kl_to_gt", "frob_to_gt"]
    rows = []
    for path in args.inputs:
        with open(path, "r", encoding="utf-8") as handle:
            lines = [line.strip() for line in handle if line.strip()]
        if not lines or lines[0].split(",")[0] != "record_id":
            raise ValueError(f"{path} is not an eval CSV")
        table = [line.split(",") for line in lines[1:] if not line.startswith("summary")]
        cols = np.array([[float(cell) for cell in row[1:4]] for row in table])
        rows.append([os.path.basename(path)] + [_summary(cols[:, j]) for j in range(3)])
    _write_csv(args.out, header, rows)
    print(f"aggregated {len(args.inputs)} eval tables into {args.out}")


# ---------------------------------------------------------------------------
# Parser

def _add_train_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--lr", type=float, default=1e-3, help="Adam learning rate")
    sub.add_argument("--epochs", type=int, default=50, help="training epochs")
    sub.add_argument("--batch", type=int, default=64, help="minibatch size")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="structcov",
        description="Structured covariance estimation experiments.",
    )
    commands = parser.add_subparsers(dest="command", required=True)

    gen = commands.add_parser("gen", help="generate a synthetic dataset file")
    gen.add_argument("--dataset", choices=["splines", "ellipses"], required=True)
    gen.add_argument("--count", type=int, required=True, help="number of records")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--variance", type=float, help="prototype kernel variance")
    gen.add_argument("--jitter", type=float, help="diagonal jitter added to the kernel")
    gen.add_argument("--mean-scale", type=float, help="spline mean multiplier (splines)")
    gen.add_argument(
        "--diag-offset", type=float, help="amplitude floor added to |mean| (splines)"
    )
    gen.add_argument(
        "--length-along", type=float, help="kernel lengthscale along the ellipse (px)"
    )
    gen.add_argument(
        "--length-across", type=float, help="kernel lengthscale across the ellipse (px)"
    )
    gen.add_argument("--out", required=True, help="output dataset path")
    gen.set_defaults(func=_cmd_gen)

    fit_cmd = commands.add_parser("fit", help="train a covariance regressor")
    fit_cmd.add_argument("--dataset", required=True, help="training dataset path")
    fit_cmd.add_argument(
        "--head", choices=["diagonal", "sparse_chol", "lowrank"], required=True
    )
    fit_cmd.add_argument("--patch", type=int, help="neighborhood size f (sparse_chol)")
    fit_cmd.add_argument("--rank", type=int, help="number of factors n_v (lowrank)")
    fit_cmd.add_argument(
        "--cond",
        choices=["mean", "code"],
        default="mean",
        help="condition on the record mean or on a reconstructor code",
    )
    _add_train_flags(fit_cmd)
    fit_cmd.add_argument("--seed", type=int, default=0)
    fit_cmd.add_argument("--out", required=True, help="checkpoint path")
    fit_cmd.set_defaults(func=_cmd_fit)

    ev = commands.add_parser("eval", help="per-record metrics against ground truth")
    ev.add_argument("--dataset", required=True, help="evaluation dataset path")
    ev.add_argument(
        "--model", required=True, help="checkpoint path, or 'gt' for the ground truth"
    )
    ev.add_argument(
        "--full-nll",
        action="store_true",
        help="include the n*log(2*pi) constant in reported NLL",
    )
    ev.add_argument("--out", required=True, help="output CSV path")
    ev.set_defaults(func=_cmd_eval)

    sample = commands.add_parser("sample", help="render mean/data/model triptychs")
    sample.add_argument("--dataset", required=True)
    sample.add_argument("--model", required=True)
    sample.add_argument("--count", type=int, default=8, help="records to render")
    sample.add_argument("--seed", type=int, default=0)
    sample.add_argument("--out", required=True, help="output directory")
    sample.set_defaults(func=_cmd_sample)

    dn = commands.add_parser("denoise", help="denoise noisy copies of a dataset")
    dn.add_argument("--dataset", required=True)
    dn.add_argument("--model", required=True, help="trained regressor checkpoint")
    dn.add_argument("--k", type=int, help="eigenvectors kept (default n/4)")
    dn.add_argument("--noise-sigma", type=float, default=0.3)
    dn.add_argument("--count", type=int, default=8, help="image triplets to render")
    dn.add_argument("--seed", type=int, default=0)
    dn.add_argument("--out", required=True, help="output directory")
    dn.set_defaults(func=_cmd_denoise)

    report = commands.add_parser("report", help="aggregate eval CSVs into one table")
    report.add_argument("inputs", nargs="+", help="eval CSV paths")
    report.add_argument("--out", required=True, help="output CSV path")
    report.set_defaults(func=_cmd_report)

    return parser


def _validate(parser: argparse.ArgumentParser, args: argparse.Namespace) -> None:
    if args.command == "fit":
        if args.patch is not None and args.head != "sparse_chol":
            parser.error("--patch is only valid with --head sparse_chol")
        if args.rank is not None and args.head != "lowrank":
            parser.error("--rank is only valid with --head lowrank")
        if args.patch is not None and (args.patch < 1 or args.patch % 2 == 0):
            parser.error("--patch must be a positive odd integer")
    if args.command == "gen":
        if args.count < 1:
            parser.error("--count must be positive")
        if args.dataset == "ellipses":
            if args.mean_scale is not None or args.diag_offset is not None:
                parser.error("--mean-scale/--diag-offset only apply to splines")
        elif args.length_along is not None or args.length_across is not None:
            parser.error("--length-along/--length-across only apply to ellipses")


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _validate(parser, args)
    try:
        args.func(args)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0

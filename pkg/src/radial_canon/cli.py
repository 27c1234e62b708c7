"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 runtime failure.  Errors go to
stderr prefixed with ``error:``.  Every run first prints its resolved
settings as ``#`` comment lines.
"""
from __future__ import annotations

import argparse
import os
import sys
from dataclasses import asdict, replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import beams as bm
from . import rbt
from .data import KINDS, Dataset, SyntheticSpec, generate, load_image_dir, write_dataset
from .errors import RadialCanonError
from .imageops import optimal_padding, pad, read_png, rotate, write_png
from .train import (REGIMES, Regressor, TrainConfig, canonicalize, draw_angles, evaluate, export_embeddings,
                    read_config, saliency, stability_sweep, train, write_config, write_curve, write_report,
                    write_stability)

SEED_ENV = "RADIAL_CANON_SEED"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _env_seed(default: int) -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return default
    try:
        return int(raw)
    except ValueError as exc:
        raise UsageError(f"{SEED_ENV} must be an integer, got {raw!r}") from exc


def _show(settings: dict):
    for k, v in settings.items():
        print(f"# {k} = {v}")


def _out_dir(args) -> Path:
    path = Path(args.out)
    path.mkdir(parents=True, exist_ok=True)
    return path


# ---- data sources -----------------------------------------------------

def _add_data_args(p):
    p.add_argument("--data", help="directory of PNGs (optionally with manifest.csv)")
    p.add_argument("--kind", choices=KINDS, default="lit_sphere", help="synthetic kind when --data is absent")
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--count", type=int, default=512)
    p.add_argument("--light-azimuth", type=float, default=90.0)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--data-seed", type=int, default=0)


def _load_data(args) -> Dataset:
    if args.data:
        return load_image_dir(args.data)
    return generate(SyntheticSpec(args.kind, args.size, args.count, args.light_azimuth, args.noise, args.data_seed))


# ---- subcommands ------------------------------------------------------

def cmd_geometry(args) -> int:
    _show({"beams": args.beams, "length": args.length, "thickness": args.thickness, "exact": args.exact})
    header = ["beams", "length", "thickness", "coverage_approx", "overlap_approx"]
    if args.exact:
        header += ["coverage_exact", "overlap_exact", "rel_error"]
    rows = []
    for n in args.beams:
        cov = bm.coverage_approx(n, args.length, args.thickness)
        row = [n, args.length, args.thickness, f"{cov:.6f}", f"{bm.overlap_approx(n, args.length, args.thickness):.6f}"]
        if args.exact:
            grid = 2 * (args.length + args.thickness + 1) + 1
            mask = bm.build_mask(grid, n, args.length, args.thickness)
            covered, _ = bm.exact_coverage(mask)
            row += [covered, bm.exact_overlap(mask), f"{abs(cov - covered) / covered:.6f}"]
        rows.append(row)
    lines = [",".join(map(str, r)) for r in [header] + rows]
    print("\n".join(lines))
    if args.out:
        (_out_dir(args) / "geometry.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")
    return 0


def cmd_sample(args) -> int:
    img = read_png(args.input)
    delta = optimal_padding(img.width) if args.pad is None else args.pad
    padded = pad(img, delta, args.pad_mode)
    _show({"input": args.input, "pad": delta, "beams": args.beams, "length": args.length,
           "thickness": args.thickness})
    mask = bm.build_mask(padded.width, args.beams, args.length, args.thickness)
    out = bm.sample(padded, mask)
    path = _out_dir(args) / "beams.rbt"
    rbt.write_tensor(path, out)
    print(f"wrote {path} shape {out.shape}")
    return 0


def cmd_gen_data(args) -> int:
    seed = _env_seed(args.seed)
    spec = SyntheticSpec(args.kind, args.size, args.count, args.light_azimuth, args.noise, seed)
    _show({**asdict(spec), "rotate": args.rotate, "beams": args.beams})
    ds = generate(spec)
    if args.rotate != "none":
        delta = optimal_padding(spec.image_size)
        thetas, ks = draw_angles(len(ds), args.rotate, args.beams, np.random.default_rng([seed, 3]))
        ds.images = np.stack([rotate(pad(im, delta), th).data for im, th in zip(ds.images, thetas)])
        ds.thetas, ds.ks = np.asarray(thetas, dtype=np.float64), np.asarray(ks, dtype=np.int64)
    path = write_dataset(ds, _out_dir(args))
    print(f"wrote {len(ds)} images to {path}")
    return 0


def cmd_train(args) -> int:
    cfg = read_config(args.config) if args.config else TrainConfig()
    if args.iterations is not None:
        cfg = replace(cfg, iterations=args.iterations)
    cfg = replace(cfg, seed=_env_seed(cfg.seed))
    _show(asdict(cfg))
    ds = _load_data(args)
    out = _out_dir(args)
    every = max(1, cfg.iterations // 20)
    res = train(cfg, ds, progress=lambda t, v: print(f"iter {t} loss {v:.6f}") if t % every == 0 else None)
    write_config(out / "config.cfg", cfg)
    write_curve(out / "loss.csv", res.curve)
    res.regressor.save(out / "model.ckpt", {"train": asdict(cfg)})
    if len(res.test_idx):
        report = evaluate(res.regressor, ds.subset(res.test_idx), cfg.rotation_regime, cfg.num_beams, cfg.seed)
        write_report(out / "eval.csv", report)
        print(f"held-out mean error {report.mean_error_deg:.3f} deg over {report.count} samples")
    print(f"wrote {out / 'model.ckpt'}")
    return 0


def cmd_eval(args) -> int:
    reg, meta = Regressor.load(args.model)
    seed = _env_seed(args.seed)
    _show({"model": args.model, "regime": args.regime, "seed": seed})
    ds = _load_data(args)
    # a directory written by gen-data --rotate carries its own angles
    prerotated = bool(args.data) and ds.images.shape[1] == reg.grid_size
    report = evaluate(reg, ds, args.regime, reg.model.config.num_beams, seed, prerotated=prerotated)
    print(f"samples {report.count} mean_loss {report.mean_loss:.6f} mean_error_deg {report.mean_error_deg:.3f}")
    if args.out:
        write_report(_out_dir(args) / "eval.csv", report)
    return 0


def cmd_canonicalize(args) -> int:
    reg, _ = Regressor.load(args.model)
    _show({"model": args.model, "input": args.input, "output": args.output})
    out, theta = canonicalize(reg, read_png(args.input))
    Path(args.output).parent.mkdir(parents=True, exist_ok=True)
    write_png(args.output, out)
    print(f"{theta:.4f}")
    return 0


def cmd_saliency(args) -> int:
    reg, _ = Regressor.load(args.model)
    _show({"model": args.model, "input": args.input, "theta": args.theta})
    heat = saliency(reg, read_png(args.input), args.theta)
    out = _out_dir(args)
    rbt.write_tensor(out / "saliency.rbt", heat)
    write_png(out / "saliency.png", heat)
    print(f"wrote {out / 'saliency.png'}")
    return 0


def cmd_stability(args) -> int:
    reg, _ = Regressor.load(args.model)
    _show({"model": args.model, "radius": args.radius})
    ds = _load_data(args)
    curve = stability_sweep(reg, ds, args.radius)
    out = _out_dir(args)
    write_stability(out / "stability.csv", curve)
    at3 = [d for dx, dy, d in curve if max(abs(dx), abs(dy)) == 3]
    if at3:
        print(f"mean deviation at 3 px ring: {np.mean(at3):.3f} deg (reference boundary 5 deg)")
    print(f"wrote {out / 'stability.csv'}")
    return 0


def cmd_export_embeddings(args) -> int:
    reg, _ = Regressor.load(args.model)
    if args.orbit:
        orbit = [float(x) for x in args.orbit.split(",")]
    else:
        n = reg.model.config.num_beams
        orbit = [k * 360.0 / n for k in range(n)]
    _show({"model": args.model, "input": args.input, "orbit": orbit})
    path = _out_dir(args) / "embeddings.rbt"
    mat = export_embeddings(reg, read_png(args.input), orbit, path)
    print(f"wrote {path} shape {mat.shape}")
    return 0


def _int_list(text: str) -> list[int]:
    try:
        return [int(x) for x in text.split(",") if x]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="radial-canon", description="Radial beam rotation canonicalization")
    parser.add_argument("--threads", type=int, default=1, help="BLAS threads (default 1 for determinism)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("geometry", help="approximate and exact beam coverage/overlap")
    p.add_argument("--beams", type=_int_list, required=True)
    p.add_argument("--length", type=int, required=True)
    p.add_argument("--thickness", type=int, default=1)
    p.add_argument("--exact", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_geometry)

    p = sub.add_parser("sample", help="pad an image and write its beam tensor")
    p.add_argument("--input", required=True)
    p.add_argument("--beams", type=int, default=32)
    p.add_argument("--length", type=int, required=True)
    p.add_argument("--thickness", type=int, default=1)
    p.add_argument("--pad", type=int, help="padding width (default: optimal)")
    p.add_argument("--pad-mode", choices=("zero", "corner_color"), default="zero")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("gen-data", help="write a synthetic dataset")
    p.add_argument("--kind", choices=KINDS, default="lit_sphere")
    p.add_argument("--size", type=int, default=64)
    p.add_argument("--count", type=int, default=512)
    p.add_argument("--light-azimuth", type=float, default=90.0)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--rotate", choices=("none",) + REGIMES, default="none",
                   help="pad and rotate each image, recording the angle in the manifest")
    p.add_argument("--beams", type=int, default=32, help="group order for --rotate finite")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a model")
    p.add_argument("--config")
    p.add_argument("--iterations", type=int)
    _add_data_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="score a model on randomly rotated images")
    p.add_argument("--model", required=True)
    p.add_argument("--regime", choices=REGIMES, default="continuous")
    p.add_argument("--seed", type=int, default=0)
    _add_data_args(p)
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("canonicalize", help="undo the predicted rotation of one image")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_canonicalize)

    p = sub.add_parser("saliency", help="input-gradient saliency map")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--theta", type=float, default=0.0, help="label angle for the loss")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_saliency)

    p = sub.add_parser("stability", help="prediction drift under small translations")
    p.add_argument("--model", required=True)
    p.add_argument("--radius", type=int, default=5)
    _add_data_args(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_stability)

    p = sub.add_parser("export-embeddings", help="pre-context beam embeddings over a rotation orbit")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--orbit", help="comma-separated degrees (default: the finite group)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_embeddings)
    return parser


def run(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    try:
        with threadpool_limits(args.threads):
            return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (RadialCanonError, ValueError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()

"""Command-line entry point: ``smac <command> ...``.

Exit codes: 0 ok, 2 config error, 3 data error, 4 numeric failure. Any
failure prints one line to stderr of the form
``error kind=<kind> exit=<code> message=<text>``.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np

from smac import __version__
from smac.errors import ConfigError, DataError, SmacError


def _error_line(kind: str, code: int, message: str) -> str:
    return f"error kind={kind} exit={code} message={' '.join(str(message).split())}"


# -------------------------------------------------------------------- commands

def cmd_gradcheck(args) -> int:
    from smac.gradsuite import BLOCK_CASES, OP_CASES, format_table, run_suite

    names = args.only or []
    unknown = [n for n in names if n not in OP_CASES and n not in BLOCK_CASES]
    if unknown:
        raise ConfigError(f"unknown gradcheck case {unknown[0]!r}")
    rows = run_suite(range(args.seed, args.seed + args.seeds), h=args.h, tol=args.tol, names=names)
    print(format_table(rows))
    failed = [r.name for r in rows if not r.passed]
    print(f"{len(rows) - len(failed)}/{len(rows)} cases passed")
    if failed:
        print(_error_line("numeric", 4, f"gradcheck failed for {', '.join(failed)}"), file=sys.stderr)
        return 4
    return 0


def _run_config(args):
    from smac.config import build, parse_lines

    values = {}
    if args.config:
        path = Path(args.config)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        values = parse_lines(text, str(path))
    cli = {"total_iters": args.iters, "seed": args.seed, "batch_size": args.batch_size,
           "dataset": args.dataset, "out_dir": args.out}
    values.update({k: str(v) for k, v in cli.items() if v is not None})
    if args.invert_depth:
        values["invert_depth"] = "true"
    return build(values)


def cmd_train(args) -> int:
    from smac.train import train_loop

    cfg = _run_config(args)
    if not cfg.dataset:
        raise ConfigError("no dataset given (use --dataset or 'dataset =' in the config)")
    out_dir = cfg.out_dir or "run"
    result = train_loop(cfg.dataset, cfg.network, cfg.train, out_dir)
    first, last = result.losses[0], result.losses[-1]
    print(f"iterations={len(result.losses)} initial_loss={first:.6f} final_loss={last:.6f} "
          f"ratio={last / first:.4f}")
    print(f"wrote {result.loss_path} and {result.checkpoint_path}")
    return 0


def cmd_infer(args) -> int:
    from smac.checkpoint import load_checkpoint
    from smac.imageio import load_dataset, save_gray
    from smac.train import predict_map

    state = load_checkpoint(args.checkpoint)
    samples = load_dataset(args.dataset, require_gt=False)
    if not samples:
        raise DataError(f"{args.dataset}: no images found")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for s in samples:
        save_gray(out / f"{s.stem}.pgm", predict_map(state, s, args.invert_depth))
    print(f"wrote {len(samples)} saliency maps to {out}")
    return 0


def _load_dir(folder) -> dict:
    from smac.imageio import IMAGE_SUFFIXES, load_image, to_gray

    folder = Path(folder)
    if not folder.is_dir():
        raise DataError(f"{folder} is not a directory")
    return {p.stem: to_gray(load_image(p)) for p in sorted(folder.iterdir())
            if p.suffix.lower() in IMAGE_SUFFIXES}


def cmd_eval(args) -> int:
    from smac.metrics import evaluate

    preds = {k: v / 255.0 for k, v in _load_dir(args.pred).items()}
    gts = {k: v >= 128 for k, v in _load_dir(args.gt).items()}
    if not gts:
        raise DataError(f"{args.gt}: no ground-truth images")
    report = evaluate(preds, gts, args.name)
    print(report.table(), end="")
    if report.undefined_max_f:
        print(f"# maxF undefined (empty gt) for {report.undefined_max_f} image(s)")
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        out.write_text(report.table(), encoding="utf-8")
        out.with_name(out.stem + "_per_image.txt").write_text(report.detail(), encoding="utf-8")
    return 0


def cmd_stats(args) -> int:
    from smac.imageio import load_dataset, save_gray
    from smac.stats import dataset_stats

    samples = load_dataset(args.dataset)
    report = dataset_stats(samples, args.name or Path(args.dataset).name,
                           normalized=not args.raw_counts, edge_threshold=args.edge_threshold,
                           match_radius=args.match_radius)
    print(report.table(), end="")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "stats.txt").write_text(report.table(), encoding="utf-8")
        save_gray(out / "aam.pgm", report.aam)
    return 0


def _parse_query(text: str):
    try:
        y, x = (int(v) for v in text.split(","))
    except ValueError:
        raise ConfigError(f"--query expects 'row,col', got {text!r}") from None
    return y, x


def cmd_dump_attn(args) -> int:
    from smac.checkpoint import load_checkpoint
    from smac.imageio import Sample, load_image, save_gray, to_gray, to_rgb
    from smac.network import fusion_attention
    from smac.resample import resize_nearest
    from smac.tensor import Tensor, no_grad
    from smac.train import preprocess

    state = load_checkpoint(args.checkpoint)
    sample = Sample("pair", to_rgb(load_image(args.rgb)), to_gray(load_image(args.depth)))
    size = state.config.input_size
    rgb, depth, _ = preprocess(sample, size, args.invert_depth)
    with no_grad():
        maps, alpha, (gh, gw) = fusion_attention(state, Tensor(rgb[None]), Tensor(depth[None]))
    qy, qx = _parse_query(args.query)
    h, w = sample.rgb.shape[:2]
    if not (0 <= qy < h and 0 <= qx < w):
        raise ConfigError(f"query ({qy},{qx}) outside the {h}x{w} image")
    row = min(qy * gh // h, gh - 1) * gw + min(qx * gw // w, gw - 1)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for name in ("A_r", "A_d", "C_r", "C_d"):
        m = getattr(maps, name).data[0, row].reshape(gh, gw)
        m = m / m.max() if m.max() > 0 else m
        big = resize_nearest(m, h, w)
        big[max(qy - 1, 0):qy + 2, max(qx - 1, 0):qx + 2] = 1.0
        save_gray(out / f"{name}.pgm", big)
    alpha_value = float(np.asarray(alpha.data).ravel()[0])
    print(f"query=({qy},{qx}) grid_position={row} alpha={alpha_value:.6f} wrote 4 maps to {out}")
    return 0


# ---------------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="smac", description="RGB-D salient object detection "
                                "with cross-modal attention and contrast.")
    p.add_argument("--version", action="version", version=f"smac {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gradcheck", help="run the op and block gradient-check suite")
    g.add_argument("--tol", type=float, default=1e-4)
    g.add_argument("--h", type=float, default=1e-6, help="finite-difference step")
    g.add_argument("--seeds", type=int, default=5, help="number of seeds per case")
    g.add_argument("--seed", type=int, default=0, help="first seed")
    g.add_argument("--only", nargs="*", help="restrict to these case names")
    g.set_defaults(func=cmd_gradcheck)

    t = sub.add_parser("train", help="train a model on a dataset directory")
    t.add_argument("--config", help="key = value run configuration file")
    t.add_argument("--dataset", help="directory with rgb/, depth/ and gt/")
    t.add_argument("--out", help="output directory (default: run)")
    t.add_argument("--iters", type=int, help="total iterations")
    t.add_argument("--seed", type=int)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--invert-depth", action="store_true", help="flip depth so near is small")
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("infer", help="write saliency maps for a dataset")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--dataset", required=True)
    i.add_argument("--out", required=True)
    i.add_argument("--invert-depth", action="store_true")
    i.add_argument("--seed", type=int, default=0, help="accepted for uniformity; inference is deterministic")
    i.set_defaults(func=cmd_infer)

    e = sub.add_parser("eval", help="score predictions against ground truth")
    e.add_argument("--pred", required=True, help="directory of 8-bit saliency maps")
    e.add_argument("--gt", required=True, help="directory of ground-truth masks")
    e.add_argument("--name", default="dataset", help="dataset name in the report")
    e.add_argument("--out", help="write the report table here")
    e.add_argument("--seed", type=int, default=0, help="accepted for uniformity")
    e.set_defaults(func=cmd_eval)

    s = sub.add_parser("stats", help="dataset statistics profile")
    s.add_argument("--dataset", required=True)
    s.add_argument("--out", help="directory for stats.txt and aam.pgm")
    s.add_argument("--name")
    s.add_argument("--raw-counts", action="store_true", help="unnormalized histograms for contrast")
    s.add_argument("--edge-threshold", type=float, default=0.25)
    s.add_argument("--match-radius", type=int, default=2)
    s.add_argument("--seed", type=int, default=0, help="accepted for uniformity")
    s.set_defaults(func=cmd_stats)

    d = sub.add_parser("dump-attn", help="write attention/contrast maps for one query position")
    d.add_argument("--checkpoint", required=True)
    d.add_argument("--rgb", required=True)
    d.add_argument("--depth", required=True)
    d.add_argument("--query", required=True, help="row,col in image pixels")
    d.add_argument("--out", required=True)
    d.add_argument("--invert-depth", action="store_true")
    d.add_argument("--seed", type=int, default=0, help="accepted for uniformity")
    d.set_defaults(func=cmd_dump_attn)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        code = exc.code if isinstance(exc.code, int) else 2
        if code != 0:
            print(_error_line("config", 2, "invalid command line"), file=sys.stderr)
            return 2
        return 0
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except SmacError as exc:
        print(_error_line(exc.kind, exc.exit_code, exc), file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(_error_line("io", 3, f"{exc.filename or ''} {exc.strerror or exc}"), file=sys.stderr)
        return 3
    except ValueError as exc:
        print(_error_line("value", 4, exc), file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())

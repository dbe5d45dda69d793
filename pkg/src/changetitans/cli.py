"""Command-line front end: synth, train, infer, eval, gradcheck, ablate.

Exit codes: 0 success, 2 bad arguments or configuration, 3 numeric failure.
``TCD_THREADS`` caps BLAS and worker threads.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

import numpy as np
from threadpoolctl import threadpool_limits

from . import metrics
from .nn import NumericError
from .pipeline import data as D
from .pipeline.config import ConfigError, ModelConfig, TrainConfig, format_config, load_config
from .pipeline.model import ChangeTitans, forward
from .pipeline.suite import run_suite
from .pipeline.train import load_checkpoint, save_checkpoint, train, training_f1
from .tensor import io as tio

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3
LOSS_VERSION = "changetitans-loss v1"
ABLATE_VERSION = "changetitans-ablation v1"


def _threads() -> int:
    raw = os.environ.get("TCD_THREADS", "1")
    try:
        n = int(raw)
    except ValueError as exc:
        raise ConfigError(f"TCD_THREADS must be an integer, got {raw!r}") from exc
    if n < 1:
        raise ConfigError(f"TCD_THREADS must be >= 1, got {n}")
    return n


def _say(msg: str) -> None:
    print(msg, flush=True)


def _need_dir(path, what: str) -> Path:
    p = Path(path)
    if not p.is_dir():
        raise ConfigError(f"{what} {p} is not a directory")
    return p


def _write_csv(path: Path, version: str, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# {version}\n")
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


# ------------------------------------------------------------------ commands
def cmd_synth(args) -> int:
    pairs = D.synth_dataset(args.n, seed=args.seed, size=args.size, n_objects=args.objects,
                            channels=args.channels)
    D.write_dataset(args.out, pairs)
    _say(f"wrote {len(pairs)} pairs to {args.out}")
    return EXIT_OK


def _training_setup(args):
    if args.config:
        model_cfg, train_cfg = load_config(args.config)
    else:
        model_cfg, train_cfg = ModelConfig.tiny(), TrainConfig()
    if args.seed is not None:
        model_cfg = replace(model_cfg, seed=args.seed)
    if getattr(args, "steps", None):
        train_cfg = replace(train_cfg, steps=args.steps)
    return model_cfg, train_cfg


def _load_pairs(root, model_cfg: ModelConfig) -> List[D.SamplePair]:
    pairs = D.read_dataset(_need_dir(root, "dataset"))
    if not pairs:
        raise ConfigError(f"no image pairs under {root}/A")
    size, ch = model_cfg.image_size, model_cfg.encoder.in_channels
    for p in pairs:
        if p.x1.shape != (ch, size, size):
            raise ConfigError(f"pair {p.ident}: image shape {p.x1.shape} does not match "
                              f"config ({ch}, {size}, {size})")
    return pairs


def cmd_train(args) -> int:
    model_cfg, train_cfg = _training_setup(args)
    pairs = _load_pairs(args.data, model_cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    model = ChangeTitans(model_cfg)
    _say(f"training {model.num_parameters()} parameters on {len(pairs)} pairs for {train_cfg.steps} steps")
    t0 = time.perf_counter()

    def log(step, loss):
        if step % train_cfg.log_every == 0 or step == train_cfg.steps:
            _say(f"step {step:5d}  loss {loss:.6f}  {time.perf_counter() - t0:7.1f}s")

    res = train(model, pairs, train_cfg, seed=model_cfg.seed, callback=log)
    save_checkpoint(out / "checkpoint", model, res.steps)
    _write_csv(out / "loss.csv", LOSS_VERSION, ["step", "loss", "grad_norm"],
               [[i + 1, repr(l), repr(g)] for i, (l, g) in enumerate(zip(res.losses, res.grad_norms))])
    _say(f"training F1 {training_f1(model, pairs):.4f}; checkpoint in {out / 'checkpoint'}")
    return EXIT_OK


def cmd_infer(args) -> int:
    model, _ = load_checkpoint(_need_dir(args.checkpoint, "checkpoint"))
    out = Path(args.out)
    if args.pair:
        a, b = (Path(p) for p in args.pair)
        for p in (a, b):
            if not p.is_file():
                raise ConfigError(f"missing image {p}")
        items = [(a.stem, D.read_image(a), D.read_image(b))]
    elif args.data:
        items = [(p.ident, p.x1, p.x2) for p in D.read_dataset(_need_dir(args.data, "dataset"), labels=False)]
    else:
        raise ConfigError("infer needs --pair A B or --data DIR")
    out.mkdir(parents=True, exist_ok=True)
    for ident, x1, x2 in items:
        cm = forward((x1, x2), model)
        D.write_mask(out / f"{ident}.pgm", cm.mask)
        tio.save(out / f"{ident}_prob.tcdt", cm.prob)
        _say(f"{ident}: {int(cm.mask.sum())} changed pixels")
    return EXIT_OK


def _mask_files(folder: Path):
    return {p.stem: p for p in sorted(folder.iterdir()) if p.suffix.lower() in D.SUFFIXES}


def cmd_eval(args) -> int:
    pred_dir, gt_dir = _need_dir(args.pred, "prediction dir"), _need_dir(args.gt, "ground-truth dir")
    if args.trimap_width < 1:
        raise ConfigError(f"--trimap-width must be >= 1, got {args.trimap_width}")
    if args.tau < 0:
        raise ConfigError(f"--tau must be >= 0, got {args.tau}")
    preds, gts = _mask_files(pred_dir), _mask_files(gt_dir)
    ids = sorted(set(preds) & set(gts))
    if not ids:
        raise ConfigError(f"no matching mask names between {pred_dir} and {gt_dir}")
    missing = sorted(set(gts) - set(preds))
    if missing:
        _say(f"warning: {len(missing)} ground-truth masks have no prediction (first: {missing[0]})")

    def one(ident):
        p, g = D.read_mask(preds[ident]), D.read_mask(gts[ident])
        if p.shape != g.shape:
            raise ConfigError(f"{ident}: prediction {p.shape} vs ground truth {g.shape}")
        return metrics.evaluate(p, g, args.tau, args.trimap_width)

    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        reports = list(pool.map(one, ids))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "metrics.csv", metrics.CSV_VERSION, metrics.CSV_COLUMNS,
               [r.csv_row(i) for i, r in zip(ids, reports)])
    with open(out / "report.txt", "w") as fh:
        for ident, r in zip(ids, reports):
            fh.write(f"id={ident}\n{r.to_text()}\n")
    mean = {k: float(np.mean([getattr(r, k) for r in reports])) for k in ("f1", "iou", "bf1", "trimap_miou")}
    _say(f"{len(ids)} pairs  " + "  ".join(f"{k}={v:.4f}" for k, v in mean.items())
         + f"  hausdorff_max={max(r.hausdorff for r in reports)}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    t0 = time.perf_counter()

    def show(r):
        _say(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<28s} rel_err={r.error:.3e}  tol={r.tol:.0e}")

    results = run_suite(seed=args.seed or 0, max_elements=args.max_elements, progress=show)
    failed = [r for r in results if not r.passed]
    _say(f"{len(results) - len(failed)}/{len(results)} checks passed in {time.perf_counter() - t0:.1f}s")
    return EXIT_OK if not failed else EXIT_NUMERIC


def cmd_ablate(args) -> int:
    model_cfg, train_cfg = _training_setup(args)
    seed = model_cfg.seed
    if args.data:
        pairs = _load_pairs(args.data, model_cfg)
    else:
        pairs = D.synth_dataset(8, seed=seed, size=model_cfg.image_size, channels=model_cfg.encoder.in_channels)
    rows = []
    for variant in args.variants:
        cfg = replace(model_cfg, fusion=variant)
        model = ChangeTitans(cfg)
        t0 = time.perf_counter()
        res = train(model, pairs, train_cfg, seed=seed)
        x1, x2, target = D.stack(pairs)
        pred = model.predict(x1, x2).mask
        rep = [metrics.evaluate(p, t.astype(np.uint8)) for p, t in zip(pred, target)]
        row = [variant, model.num_parameters(), res.steps, repr(res.losses[-1]),
               repr(training_f1(model, pairs)), repr(float(np.mean([r.iou for r in rep]))),
               repr(float(np.mean([r.bf1 for r in rep])))]
        rows.append(row)
        _say(f"{variant:<10s} loss={res.losses[-1]:.4f}  f1={float(row[4]):.4f}  "
             f"({time.perf_counter() - t0:.1f}s)")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / "ablation.csv", ABLATE_VERSION,
               ["fusion", "parameters", "steps", "final_loss", "train_f1", "mean_iou", "mean_bf1"], rows)
    return EXIT_OK


# -------------------------------------------------------------------- parser
def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="changetitans", description=__doc__.splitlines()[0])
    parser.add_argument("--seed", type=int, default=None, help="seed for every random choice")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic A/B/label dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=8)
    p.add_argument("--size", type=int, default=32)
    p.add_argument("--objects", type=int, default=3)
    p.add_argument("--channels", type=int, default=3)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train from a config file on a dataset directory")
    p.add_argument("--config")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="predict change masks with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--pair", nargs=2, metavar=("A", "B"))
    p.add_argument("--data")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="score predicted masks against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tau", type=float, default=2.0)
    p.add_argument("--trimap-width", type=float, default=3.0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="run the finite-difference oracle suite")
    p.add_argument("--max-elements", type=int, default=12)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("ablate", help="fusion-variant sweep")
    p.add_argument("--config")
    p.add_argument("--data")
    p.add_argument("--out", required=True)
    p.add_argument("--steps", type=int)
    p.add_argument("--variants", nargs="+", default=["sum", "diff", "conv", "siam_diff", "siam_conc", "early"])
    p.set_defaults(func=cmd_ablate)
    return parser


def run(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    if args.command == "synth" and args.seed is None:
        args.seed = 0
    try:
        with threadpool_limits(limits=_threads()):
            return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericError, FloatingPointError) as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def main() -> None:
    sys.exit(run())

"""Command-line entry point.

Exit codes: 0 success, 1 check failure, 2 usage/config, 3 I/O, 4 shape mismatch.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import platform
import sys
import time
from dataclasses import asdict
from importlib import metadata
from pathlib import Path

import numpy as np

from . import bench
from .config import ConfigError, RunConfig, load_config
from .data import build_dataset, load_dataset
from .fcn import FCNParams, fcn_grad_check, train_fcn
from .grid import PGMFormatError, read_pgm, write_pgm
from .model import ParamSet, RLSConfig, config_for
from .train import grad_check, load_checkpoint, save_checkpoint, train

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_IO, EXIT_SHAPE = 0, 1, 2, 3, 4

log = logging.getLogger("rlseg")


class CLIError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _versions() -> dict:
    import scipy

    try:
        pkg = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        pkg = "unknown"
    return {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__, "rlseg": pkg}


def write_run_meta(path: Path, command: str, cfg: RunConfig, **extra) -> None:
    doc = cfg.to_dict()
    meta = {
        "command": command,
        "seed": cfg.seed,
        "config_digest": bench.config_digest(doc),
        "config": doc,
        "versions": _versions(),
    }
    meta.update(extra)
    path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def _config(args) -> RunConfig:
    try:
        return load_config(args.config)
    except ConfigError as exc:
        raise CLIError(str(exc), EXIT_USAGE) from None


def _dataset(root):
    try:
        return load_dataset(root)
    except (OSError, ValueError, KeyError) as exc:
        raise CLIError(f"cannot load dataset {root}: {exc}", EXIT_IO) from None


def _read_image(path):
    try:
        return read_pgm(path)
    except (OSError, PGMFormatError) as exc:
        raise CLIError(f"cannot read image {path}: {exc}", EXIT_IO) from None


def _checkpoint(path, container):
    try:
        return load_checkpoint(path, container)
    except (OSError, ValueError, KeyError) as exc:
        raise CLIError(f"cannot load checkpoint {path}: {exc}", EXIT_IO) from None


def _checkpoint_model(path):
    try:
        with open(str(path) + ".json") as fh:
            return json.load(fh).get("model")
    except (OSError, ValueError) as exc:
        raise CLIError(f"cannot read checkpoint metadata {path}.json: {exc}", EXIT_IO) from None


def _rls_cfg_from_meta(params: ParamSet, meta: dict) -> RLSConfig:
    base = RLSConfig(**meta["rls"]) if "rls" in meta else None
    return config_for(params, base)


def _check_grid(shape, expected, what: str) -> None:
    if tuple(shape) != tuple(expected):
        raise CLIError(f"dimension mismatch: {what} is {tuple(shape)}, expected {tuple(expected)}", EXIT_SHAPE)


# --- commands --------------------------------------------------------------


def cmd_gen_data(args) -> int:
    cfg = _config(args)
    out = Path(args.out)
    if out.exists() and (not out.is_dir() or any(out.iterdir())) and not args.force:
        raise CLIError(f"output {out} exists and is not empty (use --force)", EXIT_IO)
    try:
        ds = build_dataset(cfg.data, out)
        write_run_meta(out / "run_meta.json", "gen-data", cfg)
    except OSError as exc:
        raise CLIError(f"cannot write dataset to {out}: {exc}", EXIT_IO) from None
    counts = ds.manifest["counts"]
    print(f"wrote {counts['train']} train / {counts['test']} test samples to {out}")
    return EXIT_OK


def _previous_history(path: Path) -> list:
    if not path.exists():
        return []
    with open(path, newline="") as fh:
        return list(csv.reader(fh))[1:]


def cmd_train(args) -> int:
    cfg = _config(args)
    train_cfg = cfg.train if args.model == "rls" else cfg.fcn.train_config(cfg.train)
    if args.epochs is not None:
        if args.epochs < 0:
            raise CLIError("--epochs must be >= 0", EXIT_USAGE)
        train_cfg = type(train_cfg)(**{**asdict(train_cfg), "epochs": args.epochs})
    ds = _dataset(args.data)
    if not ds.train:
        raise CLIError(f"dataset {args.data} has no training samples", EXIT_IO)
    val = ds.test if args.val else None
    container = ParamSet if args.model == "rls" else FCNParams
    params = opt = None
    if args.resume:
        saved = _checkpoint_model(args.resume)
        if saved != args.model:
            raise CLIError(f"checkpoint {args.resume} holds model {saved!r}, not {args.model!r}", EXIT_USAGE)
        params, opt, meta = _checkpoint(args.resume, container)
        _check_grid(ds.shape, (params.height, params.width), "data grid")
        log.info("resuming at epoch %d", opt.epoch)

    log_every = 1 if args.verbose else 0
    if args.model == "rls":
        rls_cfg = cfg.rls
        _check_grid(ds.shape, (rls_cfg.height, rls_cfg.width), "data grid")
        if params is not None:
            rls_cfg = config_for(params, rls_cfg)
        params, opt, history = train(ds.train, rls_cfg, train_cfg, val=val, params=params, opt=opt, log_every=log_every)
        extra = {"rls": asdict(rls_cfg)}
    else:
        _check_grid(ds.shape, (cfg.data.height, cfg.data.width), "data grid")
        params, opt, history = train_fcn(
            ds.train,
            train_cfg,
            hidden=cfg.fcn.hidden,
            init_scale=cfg.fcn.init_scale,
            val=val,
            params=params,
            opt=opt,
            log_every=log_every,
        )
        extra = {"fcn": asdict(cfg.fcn)}

    out = Path(args.out)
    hist_path = Path(str(out) + ".history.csv")
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        start = opt.epoch - len(history.rows)
        earlier = _previous_history(Path(str(args.resume) + ".history.csv")) if args.resume else []
        earlier = [r for r in earlier if int(r[0]) < start]
        save_checkpoint(out, params, opt, train_cfg, model=args.model, extra=extra)
        history.write_csv(hist_path)
        if earlier:
            with open(hist_path, newline="") as fh:
                rows = list(csv.reader(fh))
            with open(hist_path, "w", newline="") as fh:
                csv.writer(fh).writerows(rows[:1] + earlier + rows[1:])
        write_run_meta(Path(str(out) + ".run_meta.json"), "train", cfg, model=args.model, epoch=opt.epoch)
    except OSError as exc:
        raise CLIError(f"cannot write checkpoint {out}: {exc}", EXIT_IO) from None
    for row in history.rows:
        print(f"epoch {row['epoch']}: loss {row['mean_loss']:.6f}")
    print(f"saved {args.model} checkpoint at epoch {opt.epoch} to {out}")
    return EXIT_OK


def _method_callable(name, args, cfg: RunConfig, shape):
    if name == "cls":
        return bench.make_method("cls", cls_cfg=cfg.cls)
    path = getattr(args, f"{name}_ckpt", None) or getattr(args, "ckpt", None)
    if not path:
        raise CLIError(f"method {name!r} needs a checkpoint", EXIT_USAGE)
    saved = _checkpoint_model(path)
    if saved != name:
        raise CLIError(f"checkpoint {path} holds model {saved!r}, not {name!r}", EXIT_USAGE)
    if name == "rls":
        params, _, meta = _checkpoint(path, ParamSet)
        _check_grid(shape, (params.height, params.width), "image")
        return bench.make_method("rls", rls_params=params, rls_cfg=_rls_cfg_from_meta(params, meta))
    params, _, _ = _checkpoint(path, FCNParams)
    _check_grid(shape, (params.height, params.width), "image")
    return bench.make_method("fcn", fcn_params=params)


def cmd_segment(args) -> int:
    cfg = _config(args)
    if args.method != "cls" and not args.ckpt:
        raise CLIError(f"method {args.method!r} requires --ckpt", EXIT_USAGE)
    image = _read_image(args.input)
    fn = _method_callable(args.method, args, cfg, image.shape)
    t0 = time.perf_counter()
    mask = fn(image)
    elapsed = time.perf_counter() - t0
    try:
        write_pgm(mask, args.out)
    except OSError as exc:
        raise CLIError(f"cannot write {args.out}: {exc}", EXIT_IO) from None
    print(f"{args.method} inference: {elapsed:.6f} seconds")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _config(args)
    names = [m.strip() for m in args.methods.split(",") if m.strip()] if args.methods else list(cfg.bench.methods)
    bad = [m for m in names if m not in bench.METHODS]
    if bad or not names:
        raise CLIError(f"unknown method(s) {bad}; valid methods: {', '.join(bench.METHODS)}", EXIT_USAGE)
    ds = _dataset(args.data)
    samples = ds.test
    if not samples:
        raise CLIError(f"dataset {args.data} has no test samples", EXIT_IO)
    methods = {name: _method_callable(name, args, cfg, ds.shape) for name in names}
    out = Path(args.out)
    repeats = args.repeats or cfg.bench.repeats
    try:
        out.parent.mkdir(parents=True, exist_ok=True)
        report = bench.run_benchmark(
            samples,
            methods,
            out_dir=out.parent,
            csv_path=out,
            repeats=repeats,
            dataset_id=bench.config_digest(ds.manifest),
            configs=cfg.to_dict(),
            manifest=ds.manifest,
        )
        write_run_meta(out.parent / "run_meta.json", "eval", cfg, methods=names, dataset_id=report.dataset_id)
    except OSError as exc:
        raise CLIError(f"cannot write results to {out}: {exc}", EXIT_IO) from None
    for line in report.summary_lines():
        print(line)
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    if args.model == "fcn":
        report = fcn_grad_check(seed=args.seed)
    else:
        report = grad_check(mode=args.mode, seed=args.seed)
    for line in report.lines():
        print(line)
    return EXIT_OK if report.passed else EXIT_CHECK


# --- parser ----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rlseg", description="Level-set and recurrent level-set segmentation toolkit.")
    p.add_argument("--threads", type=int, default=None, help="cap BLAS/OpenMP worker threads")
    p.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic dataset")
    g.add_argument("--config")
    g.add_argument("--out", required=True)
    g.add_argument("--force", action="store_true", help="write into a non-empty directory")
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train the recurrent model or the FCN baseline")
    t.add_argument("--model", choices=("rls", "fcn"), default="rls")
    t.add_argument("--data", required=True)
    t.add_argument("--config")
    t.add_argument("--out", required=True, help="checkpoint path")
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--epochs", type=int, help="epochs to run now (overrides the config)")
    t.add_argument("--val", action="store_true", help="record test-split F-measure every epoch")
    t.set_defaults(func=cmd_train)

    s = sub.add_parser("segment", help="segment one PGM image")
    s.add_argument("--method", choices=bench.METHODS, required=True)
    s.add_argument("--input", required=True)
    s.add_argument("--ckpt")
    s.add_argument("--config")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_segment)

    e = sub.add_parser("eval", help="benchmark methods on the test split")
    e.add_argument("--data", required=True)
    e.add_argument("--methods", help="comma-separated list (default: config bench.methods)")
    e.add_argument("--out", required=True, help="CSV path; masks and metadata go next to it")
    e.add_argument("--rls-ckpt")
    e.add_argument("--fcn-ckpt")
    e.add_argument("--config")
    e.add_argument("--repeats", type=int)
    e.set_defaults(func=cmd_eval)

    c = sub.add_parser("gradcheck", help="compare analytic gradients with finite differences")
    c.add_argument("--mode", choices=("truncated", "full"), default="truncated")
    c.add_argument("--model", choices=("rls", "fcn"), default="rls")
    c.add_argument("--seed", type=int, default=42)
    c.set_defaults(func=cmd_gradcheck)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s", stream=sys.stdout)
    try:
        if args.threads is not None:
            if args.threads < 1:
                raise CLIError("--threads must be >= 1", EXIT_USAGE)
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=args.threads):
                return args.func(args)
        return args.func(args)
    except CLIError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":
    sys.exit(main())

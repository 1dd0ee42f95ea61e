"""End-to-end desk experiment: build the dataset, train both learned models,
then benchmark CLS, FCN and RLS on the held-out split."""
from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path

from . import bench
from .config import RunConfig
from .data import build_dataset
from .fcn import train_fcn
from .train import save_checkpoint, train


@dataclass
class DeskResult:
    report: bench.BenchReport
    train_seconds: dict
    histories: dict

    def fmeasure(self, method: str) -> float:
        return self.report.results[method].fmeasure

    def mean_time(self, method: str) -> float:
        return self.report.results[method].mean_time_s


def run_desk(cfg: RunConfig, out_dir=None, log=print) -> DeskResult:
    out = Path(out_dir) if out_dir is not None else None
    ds = build_dataset(cfg.data, out / "data" if out else None)
    log(f"dataset: {len(ds.train)} train / {len(ds.test)} test at {ds.shape}")

    t0 = time.perf_counter()
    rls_params, rls_opt, rls_hist = train(ds.train, cfg.rls, cfg.train)
    rls_time = time.perf_counter() - t0
    log(f"rls: {cfg.train.epochs} epochs in {rls_time:.1f}s, final loss {rls_hist.losses[-1]:.3f}")

    fcn_cfg = cfg.fcn.train_config(cfg.train)
    t0 = time.perf_counter()
    fcn_params, fcn_opt, fcn_hist = train_fcn(ds.train, fcn_cfg, hidden=cfg.fcn.hidden, init_scale=cfg.fcn.init_scale)
    fcn_time = time.perf_counter() - t0
    log(f"fcn: {fcn_cfg.epochs} epochs in {fcn_time:.1f}s, final loss {fcn_hist.losses[-1]:.3f}")

    if out:
        save_checkpoint(out / "rls.ckpt", rls_params, rls_opt, cfg.train, model="rls")
        save_checkpoint(out / "fcn.ckpt", fcn_params, fcn_opt, fcn_cfg, model="fcn")
        rls_hist.write_csv(out / "rls.history.csv")
        fcn_hist.write_csv(out / "fcn.history.csv")

    methods = {
        "cls": bench.make_method("cls", cls_cfg=cfg.cls),
        "fcn": bench.make_method("fcn", fcn_params=fcn_params),
        "rls": bench.make_method("rls", rls_params=rls_params, rls_cfg=cfg.rls),
    }
    methods = {m: methods[m] for m in cfg.bench.methods}
    report = bench.run_benchmark(
        ds.test,
        methods,
        out_dir=out,
        repeats=cfg.bench.repeats,
        configs=cfg.to_dict(),
        manifest=ds.manifest if out else None,
    )
    for line in report.summary_lines():
        log(line)
    return DeskResult(report, {"rls": rls_time, "fcn": fcn_time}, {"rls": rls_hist, "fcn": fcn_hist})

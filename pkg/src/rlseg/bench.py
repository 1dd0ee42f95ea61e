"""Evaluate segmentation methods on a test split: metrics, timing, CSV and masks."""
from __future__ import annotations

import csv
import hashlib
import json
import statistics
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from .chanvese import CLSConfig, segment_cls
from .fcn import FCNParams, fcn_predict
from .grid import write_pgm
from .metrics import f_measure, iou
from .model import ParamSet, RLSConfig, config_for, segment_rls

CSV_COLUMNS = ("method", "precision", "recall", "fmeasure", "iou", "mean_time_s", "median_time_s")
METHODS = ("cls", "fcn", "rls")


class MissingParamsError(ValueError):
    pass


@dataclass
class MethodResult:
    method: str
    precision: float
    recall: float
    fmeasure: float
    iou: float
    mean_time_s: float
    median_time_s: float
    per_image: list = field(default_factory=list)

    def row(self) -> dict:
        return {k: getattr(self, k) for k in CSV_COLUMNS}


@dataclass
class BenchReport:
    results: dict
    dataset_id: str
    config_digest: str

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_COLUMNS)
            for res in self.results.values():
                row = res.row()
                w.writerow([row["method"]] + [repr(float(row[c])) for c in CSV_COLUMNS[1:]])

    def summary_lines(self) -> list:
        lines = []
        for res in self.results.values():
            lines.append(
                f"{res.method:>6s}  P={res.precision:.4f} R={res.recall:.4f} F={res.fmeasure:.4f} "
                f"IoU={res.iou:.4f}  t_mean={res.mean_time_s * 1e3:.2f}ms t_median={res.median_time_s * 1e3:.2f}ms"
            )
        return lines


def config_digest(obj) -> str:
    text = json.dumps(obj, sort_keys=True, default=str)
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def make_method(
    name: str,
    *,
    cls_cfg: CLSConfig | None = None,
    rls_params: ParamSet | None = None,
    rls_cfg: RLSConfig | None = None,
    fcn_params: FCNParams | None = None,
) -> Callable[[np.ndarray], np.ndarray]:
    """Image -> binary mask callable for a named method."""
    if name == "cls":
        cfg = cls_cfg or CLSConfig()
        return lambda image: segment_cls(image, cfg, trace=False, polarity="brighter").mask
    if name == "rls":
        if rls_params is None:
            raise MissingParamsError("method 'rls' needs trained parameters")
        cfg = config_for(rls_params, rls_cfg)
        return lambda image: segment_rls(image, rls_params, cfg)
    if name == "fcn":
        if fcn_params is None:
            raise MissingParamsError("method 'fcn' needs trained parameters")
        return lambda image: fcn_predict(fcn_params, image)
    raise ValueError(f"unknown method {name!r}; valid methods: {', '.join(METHODS)}")


def evaluate_method(name: str, fn, samples, repeats: int = 3, mask_dir: Path | None = None) -> MethodResult:
    """Score ``fn`` on ``samples``. Each image is segmented ``repeats`` times
    after one untimed warm-up call on the first image."""
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    if samples:
        fn(samples[0].image)
    per_image, all_times, medians = [], [], []
    for s in samples:
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            pred = fn(s.image)
            times.append(time.perf_counter() - t0)
        p, r, f = f_measure(pred, s.mask)
        per_image.append({"id": s.id, "precision": p, "recall": r, "fmeasure": f, "iou": iou(pred, s.mask)})
        all_times.extend(times)
        medians.append(statistics.median(times))
        if mask_dir is not None:
            write_pgm(pred, mask_dir / f"pred_{s.id}.pgm")
    mean = lambda key: float(np.mean([row[key] for row in per_image])) if per_image else 0.0  # noqa: E731
    return MethodResult(
        method=name,
        precision=mean("precision"),
        recall=mean("recall"),
        fmeasure=mean("fmeasure"),
        iou=mean("iou"),
        mean_time_s=float(np.mean(all_times)) if all_times else 0.0,
        median_time_s=float(statistics.median(medians)) if medians else 0.0,
        per_image=per_image,
    )


def run_benchmark(
    samples,
    methods: dict,
    *,
    out_dir=None,
    csv_path=None,
    repeats: int = 3,
    dataset_id: str = "",
    configs: dict | None = None,
    manifest: dict | None = None,
) -> BenchReport:
    """Evaluate every ``name -> callable`` in ``methods`` on ``samples``.

    With ``out_dir`` the CSV (``csv_path``, default ``out_dir/bench.csv``),
    predicted masks (``masks/<method>/pred_<id>.pgm``) and a manifest copy
    are written.
    """
    samples = list(samples)
    out = Path(out_dir) if out_dir is not None else None
    results = {}
    for name, fn in methods.items():
        mask_dir = None
        if out is not None:
            mask_dir = out / "masks" / name
            mask_dir.mkdir(parents=True, exist_ok=True)
        results[name] = evaluate_method(name, fn, samples, repeats, mask_dir)
    report = BenchReport(results, dataset_id, config_digest(configs or {}))
    if out is not None:
        report.write_csv(csv_path if csv_path is not None else out / "bench.csv")
        if manifest is not None:
            (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return report


def configs_summary(**cfgs) -> dict:
    return {k: (asdict(v) if hasattr(v, "__dataclass_fields__") else v) for k, v in cfgs.items()}

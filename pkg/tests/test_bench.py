import csv

import numpy as np
import pytest

from conftest import disk_fixture
from rlseg import bench
from rlseg.chanvese import CLSConfig
from rlseg.data import GenConfig, Sample, build_dataset
from rlseg.fcn import init_fcn
from rlseg.grid import read_pgm
from rlseg.model import RLSConfig, init_params

HEADER = "method,precision,recall,fmeasure,iou,mean_time_s,median_time_s"


@pytest.fixture(scope="module")
def samples():
    return build_dataset(GenConfig(n_samples=6, height=16, width=16, render_size=32, seed=2)).test


def oracle_methods(samples):
    lookup = {s.image.tobytes(): s.mask for s in samples}
    return {"oracle": lambda image: lookup[image.tobytes()], "empty": lambda image: np.zeros_like(image)}


def test_oracle_scores_one(samples):
    report = bench.run_benchmark(samples, oracle_methods(samples), repeats=1)
    res = report.results["oracle"]
    assert all(row["fmeasure"] == 1.0 for row in res.per_image)
    assert res.fmeasure == res.iou == res.precision == res.recall == 1.0
    assert report.results["empty"].fmeasure == 0.0


def test_csv_header_and_masks(samples, tmp_path):
    manifest = {"k": 1}
    report = bench.run_benchmark(samples, oracle_methods(samples), out_dir=tmp_path, repeats=2, manifest=manifest)
    lines = (tmp_path / "bench.csv").read_text().splitlines()
    assert lines[0] == HEADER
    rows = list(csv.DictReader(open(tmp_path / "bench.csv")))
    assert [r["method"] for r in rows] == ["oracle", "empty"]
    assert float(rows[0]["fmeasure"]) == 1.0
    for s in samples:
        assert np.array_equal(read_pgm(tmp_path / "masks" / "oracle" / f"pred_{s.id}.pgm"), s.mask)
    assert (tmp_path / "manifest.json").exists()
    assert report.results["oracle"].mean_time_s >= 0


def test_metrics_deterministic(samples):
    methods = {"cls": bench.make_method("cls", cls_cfg=CLSConfig(max_iters=20))}
    a = bench.run_benchmark(samples, methods, repeats=1).results["cls"]
    b = bench.run_benchmark(samples, methods, repeats=1).results["cls"]
    assert a.per_image == b.per_image


def test_learned_methods_need_params():
    for name in ("rls", "fcn"):
        with pytest.raises(bench.MissingParamsError):
            bench.make_method(name)
    with pytest.raises(ValueError, match="valid methods"):
        bench.make_method("snake")


def test_learned_methods_return_binary_masks(samples):
    rls = bench.make_method("rls", rls_params=init_params(RLSConfig(height=16, width=16, T=2)))
    fcn = bench.make_method("fcn", fcn_params=init_fcn(16, 16))
    for fn in (rls, fcn):
        mask = fn(samples[0].image)
        assert mask.shape == (16, 16) and set(np.unique(mask)) <= {0.0, 1.0}


def test_cls_method_on_disk():
    image, mask = disk_fixture(64)
    res = bench.evaluate_method("cls", bench.make_method("cls"), [Sample(image, mask, "d")], repeats=1)
    assert res.fmeasure >= 0.98


def test_repeats_validation(samples):
    with pytest.raises(ValueError):
        bench.evaluate_method("x", lambda i: i, samples, repeats=0)


def test_config_digest_stable():
    assert bench.config_digest({"a": 1, "b": [1, 2]}) == bench.config_digest({"b": [1, 2], "a": 1})
    assert bench.config_digest({"a": 1}) != bench.config_digest({"a": 2})

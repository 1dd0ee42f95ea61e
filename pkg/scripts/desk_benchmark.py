"""Train RLS and FCN on the desk dataset and benchmark them against CLS.

    python scripts/desk_benchmark.py [--config configs/desk.json] [--out desk_out]
"""
import argparse
import json
from pathlib import Path

from rlseg.config import load_config
from rlseg.experiment import run_desk

ROOT = Path(__file__).resolve().parent.parent


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(ROOT / "configs" / "desk.json"))
    ap.add_argument("--out", default="desk_out")
    args = ap.parse_args()
    cfg = load_config(args.config)
    res = run_desk(cfg, args.out)
    summary = {
        "fmeasure": {m: r.fmeasure for m, r in res.report.results.items()},
        "mean_time_s": {m: r.mean_time_s for m, r in res.report.results.items()},
        "train_seconds": res.train_seconds,
    }
    (Path(args.out) / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(json.dumps(summary, indent=2))


if __name__ == "__main__":
    main()

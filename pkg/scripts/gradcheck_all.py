"""Finite-difference check of every gradient block: RLS (truncated, full,
diagonal) and the FCN baseline. Exits non-zero if any check fails."""
import sys
import time

from rlseg.fcn import fcn_grad_check
from rlseg.model import RLSConfig
from rlseg.train import grad_check


def main(seed: int = 42) -> int:
    runs = {
        "rls truncated": lambda: grad_check(RLSConfig(height=8, width=8, T=3, seed=seed), "truncated", seed=seed),
        "rls full": lambda: grad_check(RLSConfig(height=8, width=8, T=3, seed=seed), "full", seed=seed),
        "rls diagonal": lambda: grad_check(RLSConfig(height=8, width=8, T=3, seed=seed, diagonal=True), seed=seed),
        "fcn": lambda: fcn_grad_check(8, 8, seed=seed),
    }
    ok = True
    for name, fn in runs.items():
        t0 = time.perf_counter()
        report = fn()
        print(f"== {name} ({time.perf_counter() - t0:.1f}s)")
        print("\n".join(report.lines()))
        ok &= report.passed
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main(int(sys.argv[1]) if len(sys.argv) > 1 else 42))

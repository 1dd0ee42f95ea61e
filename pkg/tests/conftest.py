import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=50, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def disk_fixture(size: int = 64, radius: float | None = None):
    """Clean white disk on black, sampled at pixel centers."""
    radius = size / 4 if radius is None else radius
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    mask = ((xx - size / 2) ** 2 + (yy - size / 2) ** 2 <= radius**2).astype(np.float64)
    return mask.copy(), mask


ACCEPTANCE = []


def record(number: int, title: str, ok: bool, detail: str = "") -> bool:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title}" + (f" ({detail})" if detail else "")
    ACCEPTANCE.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)

import csv
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import disk_fixture
from rlseg.chanvese import (
    CLSConfig,
    checkerboard_init,
    energy,
    evolution_force,
    evolution_step,
    region_means,
    segment_cls,
)
from rlseg.metrics import f_measure

seeds = st.integers(0, 2**32 - 1)


def energy_loops(image, phi, cfg):
    """Per-pixel summation with the scalar formulas written out."""
    h, w = image.shape

    def H(t):
        return 0.5 * (1 + 2 / math.pi * math.atan(t / cfg.epsilon))

    def D(t):
        return cfg.epsilon / (math.pi * (cfg.epsilon**2 + t * t))

    def at(i, j):
        return phi[min(max(i, 0), h - 1), min(max(j, 0), w - 1)]

    num1 = den1 = num2 = den2 = 0.0
    for i in range(h):
        for j in range(w):
            hv = H(phi[i, j])
            num1 += image[i, j] * hv
            den1 += hv
            num2 += image[i, j] * (1 - hv)
            den2 += 1 - hv
    c1, c2 = num1 / den1, num2 / den2
    total = 0.0
    for i in range(h):
        for j in range(w):
            px = (at(i, j + 1) - at(i, j - 1)) / 2
            py = (at(i + 1, j) - at(i - 1, j)) / 2
            hv = H(phi[i, j])
            total += cfg.mu * hv
            total += cfg.nu * D(phi[i, j]) * math.sqrt(px * px + py * py)
            total += cfg.lambda1 * (image[i, j] - c1) ** 2 * hv
            total += cfg.lambda2 * (image[i, j] - c2) ** 2 * (1 - hv)
    return total


class TestCheckerboard:
    def test_values(self):
        phi = checkerboard_init(3, 3, 7)
        assert phi[0, 0] == 0.0
        assert checkerboard_init(5, 5, 5)[2, 2] == pytest.approx(math.sin(2 * math.pi / 5) ** 2, abs=1e-15)
        assert checkerboard_init(5, 5, 5)[2, 2] == pytest.approx(0.9045, abs=1e-4)

    @given(st.integers(3, 40), st.integers(3, 40), st.integers(2, 12))
    def test_range(self, h, w, p):
        phi = checkerboard_init(h, w, p)
        assert phi.shape == (h, w)
        assert np.all(np.abs(phi) <= 1.0)

    def test_sign_alternates_between_blocks(self):
        phi = checkerboard_init(20, 20, 5)
        assert phi[2, 2] > 0 and phi[2, 7] < 0 and phi[7, 7] > 0

    def test_rejects_small_period(self):
        with pytest.raises(ValueError):
            checkerboard_init(5, 5, 1)


class TestRegionMeans:
    def test_constant_image(self):
        phi = np.random.default_rng(0).normal(size=(6, 6))
        c1, c2 = region_means(np.full((6, 6), 0.7), phi)
        assert c1 == pytest.approx(0.7, abs=1e-15) and c2 == pytest.approx(0.7, abs=1e-15)

    def test_binary_disk_sharp_eps(self):
        image, mask = disk_fixture(32)
        phi = np.where(mask > 0, 100.0, -100.0)
        c1, c2 = region_means(image, phi, eps=0.01)
        assert c1 >= 0.99 and c2 <= 0.01

    @given(seeds)
    def test_sign_flip_swaps_means(self, seed):
        rng = np.random.default_rng(seed)
        image, phi = rng.uniform(size=(5, 5)), rng.normal(size=(5, 5))
        c1, c2 = region_means(image, phi)
        d1, d2 = region_means(image, -phi)
        assert d1 == pytest.approx(c2, abs=1e-12) and d2 == pytest.approx(c1, abs=1e-12)

    @given(seeds, st.floats(0.05, 5))
    def test_means_within_image_range(self, seed, eps):
        rng = np.random.default_rng(seed)
        image, phi = rng.uniform(size=(6, 7)), 3 * rng.normal(size=(6, 7))
        c1, c2 = region_means(image, phi, eps)
        for c in (c1, c2):
            assert image.min() - 1e-12 <= c <= image.max() + 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="dimension"):
            region_means(np.zeros((4, 4)), np.zeros((4, 5)))


class TestEvolution:
    def test_constant_image_no_regularizers_is_identity(self):
        phi = np.random.default_rng(1).normal(size=(8, 8))
        cfg = CLSConfig(mu=0, nu=0)
        assert np.array_equal(evolution_step(np.full((8, 8), 0.3), phi, cfg), phi)

    @given(seeds)
    def test_update_sign_follows_fitting_bracket(self, seed):
        rng = np.random.default_rng(seed)
        image = np.where(rng.uniform(size=(8, 8)) < 0.4, 0.9, 0.1)
        phi = np.where(image > 0.5, 1.0, -1.0) + rng.normal(scale=0.8, size=(8, 8))
        cfg = CLSConfig(mu=0, nu=0)
        c1, c2 = region_means(image, phi, cfg.epsilon)
        delta = evolution_step(image, phi, cfg) - phi
        bracket = -((image - c1) ** 2) + (image - c2) ** 2
        nz = np.abs(bracket) > 1e-12
        assert np.array_equal(np.sign(delta[nz]), np.sign(bracket[nz]))

    def test_descent_for_small_step(self):
        rng = np.random.default_rng(2)
        image = np.zeros((16, 16))
        image[4:12, 5:13] = 1.0
        i, j = np.mgrid[0:16, 0:16]
        phi = np.sin(i / 3.0) * np.cos(j / 4.0) + 0.01 * rng.normal(size=(16, 16))
        cfg = CLSConfig(eta=1e-3)
        assert energy(image, evolution_step(image, phi, cfg), cfg) <= energy(image, phi, cfg) + 1e-9

    def test_force_matches_step(self):
        rng = np.random.default_rng(3)
        image, phi = rng.uniform(size=(6, 6)), rng.normal(size=(6, 6))
        cfg = CLSConfig(eta=0.5)
        assert np.allclose(evolution_step(image, phi, cfg), phi + 0.5 * evolution_force(image, phi, cfg), atol=1e-15)


class TestEnergy:
    def test_zero_weights(self):
        cfg = CLSConfig(mu=0, nu=0, lambda1=1e-300, lambda2=1e-300)
        rng = np.random.default_rng(0)
        assert energy(rng.uniform(size=(5, 5)), rng.normal(size=(5, 5)), cfg) < 1e-290

    def test_constant_image_fitting_terms_vanish(self):
        cfg = CLSConfig(mu=0, nu=0)
        phi = np.random.default_rng(0).normal(size=(5, 5))
        assert energy(np.full((5, 5), 0.4), phi, cfg) == pytest.approx(0.0, abs=1e-15)

    def test_hand_computable_3x3(self):
        image = np.array([[0.0, 0.5, 1.0], [0.2, 0.9, 0.1], [1.0, 0.0, 0.3]])
        phi = np.array([[1.0, -0.5, 2.0], [0.0, 1.5, -1.0], [-2.0, 0.5, 0.25]])
        cfg = CLSConfig(mu=0.3, nu=0.7, lambda1=1.2, lambda2=0.8)
        assert energy(image, phi, cfg) == pytest.approx(energy_loops(image, phi, cfg), abs=1e-12)

    def test_matches_loop_oracle_on_random_grids(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            h, w = (int(v) for v in rng.integers(3, 6, size=2))
            image, phi = rng.uniform(size=(h, w)), rng.normal(size=(h, w))
            cfg = CLSConfig(mu=float(rng.uniform(0, 1)), nu=float(rng.uniform(0, 1)), epsilon=float(rng.uniform(0.3, 2)))
            assert abs(energy(image, phi, cfg) - energy_loops(image, phi, cfg)) < 1e-12

    @given(seeds)
    def test_nonnegative(self, seed):
        rng = np.random.default_rng(seed)
        e = energy(rng.uniform(size=(5, 5)), rng.normal(size=(5, 5)) * 4, CLSConfig(mu=0.5, nu=0.5))
        assert e >= 0 and np.isfinite(e)


class TestSegment:
    def test_clean_disk(self):
        image, mask = disk_fixture(64)
        res = segment_cls(image, CLSConfig())
        assert f_measure(res.mask, mask)[2] >= 0.98
        assert res.iters <= 500
        assert np.all(np.diff(res.energy_trace) <= 1e-7)

    def test_energy_trace_non_increasing_small_step(self):
        image, _ = disk_fixture(32)
        res = segment_cls(image, CLSConfig(eta=1e-3, max_iters=200))
        assert np.all(np.diff(res.energy_trace) <= 1e-7)

    def test_zero_iterations_gives_checkerboard_mask(self):
        image, _ = disk_fixture(16)
        res = segment_cls(image, CLSConfig(max_iters=0))
        assert res.iters == 0
        assert np.array_equal(res.mask, (checkerboard_init(16, 16, 5) > 0).astype(float))
        assert len(res.energy_trace) == 1

    def test_deterministic(self):
        image = np.random.default_rng(4).uniform(size=(16, 16))
        a = segment_cls(image, CLSConfig(max_iters=30))
        b = segment_cls(image, CLSConfig(max_iters=30))
        assert np.array_equal(a.mask, b.mask) and a.energy_trace == b.energy_trace

    def test_brighter_polarity(self):
        image, mask = disk_fixture(32, radius=12)
        res = segment_cls(1.0 - image, CLSConfig(), polarity="brighter")
        # the dark disk is now the background phase
        assert f_measure(res.mask, 1.0 - mask)[2] >= 0.98

    def test_trace_csv(self, tmp_path):
        image, _ = disk_fixture(16)
        res = segment_cls(image, CLSConfig(max_iters=5))
        res.write_trace_csv(tmp_path / "trace.csv")
        rows = list(csv.reader(open(tmp_path / "trace.csv")))
        assert rows[0] == ["iter", "energy"]
        assert len(rows) == len(res.energy_trace) + 1
        assert float(rows[1][1]) == res.energy_trace[0]

    def test_config_validation(self):
        for bad in (dict(mu=-1), dict(lambda1=0), dict(eta=0), dict(tol=0), dict(checker_period=1), dict(max_iters=-1)):
            with pytest.raises(ValueError):
                CLSConfig(**bad)

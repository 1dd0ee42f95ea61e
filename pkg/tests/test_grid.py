import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rlseg.grid import (
    CURVATURE_REG,
    PGMFormatError,
    as_field,
    curvature,
    curvature_vjp,
    decode_pgm,
    derivatives,
    dirac,
    encode_pgm,
    heaviside,
    pgm_header,
    quantize,
    read_pgm,
    to_luminance,
    vectorize,
    write_pgm,
)

finite = st.floats(-1e6, 1e6, allow_nan=False)
positive_eps = st.floats(1e-3, 1e3)


def curvature_loops(phi):
    """Independent per-pixel oracle with clamped indices."""
    h, w = phi.shape

    def at(i, j):
        return phi[min(max(i, 0), h - 1), min(max(j, 0), w - 1)]

    out = np.zeros_like(phi)
    for i in range(h):
        for j in range(w):
            px = (at(i, j + 1) - at(i, j - 1)) / 2
            py = (at(i + 1, j) - at(i - 1, j)) / 2
            pxx = at(i, j + 1) - 2 * at(i, j) + at(i, j - 1)
            pyy = at(i + 1, j) - 2 * at(i, j) + at(i - 1, j)
            pxy = (at(i + 1, j + 1) - at(i + 1, j - 1) - at(i - 1, j + 1) + at(i - 1, j - 1)) / 4
            num = pxx * py * py - 2 * px * py * pxy + pyy * px * px
            out[i, j] = num / (px * px + py * py + CURVATURE_REG) ** 1.5
    return out


class TestHeavisideDirac:
    def test_known_values(self):
        assert heaviside(0.0, 1.0) == 0.5
        assert heaviside(1.0, 1.0) == pytest.approx(0.75, abs=1e-15)
        assert dirac(0.0, 1.0) == pytest.approx(1 / np.pi, abs=1e-15)
        assert dirac(1.0, 1.0) == pytest.approx(1 / (2 * np.pi), abs=1e-15)
        assert float(dirac(1.0)) == pytest.approx(0.159155, abs=1e-6)

    @given(finite, positive_eps)
    def test_heaviside_symmetry_and_range(self, t, eps):
        assert heaviside(t, eps) + heaviside(-t, eps) == pytest.approx(1.0, abs=1e-12)
        assert 0.0 <= heaviside(t, eps) <= 1.0

    def test_heaviside_bounded_and_monotone_bulk(self):
        rng = np.random.default_rng(0)
        t = rng.normal(scale=20, size=1_000_000)
        eps = rng.uniform(0.01, 10, size=1_000_000)
        h = heaviside(t, eps)
        assert np.all((h > 0) & (h < 1))
        assert np.all(heaviside(t + 0.5, eps) >= h)
        ts = np.sort(t)
        assert np.all(np.diff(heaviside(ts, 1.0)) >= 0)

    @given(finite, positive_eps)
    def test_dirac_even_and_positive(self, t, eps):
        assert dirac(t, eps) == dirac(-t, eps)
        assert dirac(t, eps) > 0

    @given(st.floats(-20, 20), st.floats(0.1, 5))
    def test_dirac_is_heaviside_derivative(self, t, eps):
        h = 1e-5
        numeric = (heaviside(t + h, eps) - heaviside(t - h, eps)) / (2 * h)
        # truncation error is h^2/6 * |heaviside'''| <= h^2 / (3 pi eps^3)
        assert abs(dirac(t, eps) - numeric) < h * h / (3 * np.pi * eps**3) + 1e-10

    def test_dirac_integrates_to_one(self):
        for eps in (0.1, 1.0, 3.0):
            t = np.linspace(-100 * eps, 100 * eps, 200_001)
            assert abs(np.trapezoid(dirac(t, eps), t) - 1.0) < 1e-2

    def test_rejects_bad_eps(self):
        with pytest.raises(ValueError):
            heaviside(0.0, 0.0)
        with pytest.raises(ValueError):
            dirac(0.0, -1.0)


class TestCurvature:
    @given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5), st.integers(3, 9), st.integers(3, 9))
    def test_affine_field_has_zero_curvature(self, a, b, c, h, w):
        i, j = np.mgrid[0:h, 0:w]
        phi = a * i + b * j + c
        k = curvature(phi)
        assert np.all(np.abs(k[1:-1, 1:-1]) < 1e-9)

    def test_constant_field(self):
        assert np.array_equal(curvature(np.full((5, 6), 3.0)), np.zeros((5, 6)))

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            phi = rng.normal(size=(int(rng.integers(3, 8)), int(rng.integers(3, 8))))
            assert np.max(np.abs(curvature(phi) - curvature_loops(phi))) < 1e-9

    def test_circle_distance_field(self):
        n, r0 = 64, 10.0
        i, j = np.mgrid[0:n, 0:n]
        rho = np.hypot(i - 31.5, j - 31.5)
        k = curvature(rho - r0)
        band = (rho >= 5) & (rho <= 15)
        assert np.max(np.abs(k[band] - 1.0 / rho[band])) <= 0.02

    def test_circle_error_shrinks_with_resolution(self):
        errs = []
        for n in (32, 64, 128):
            i, j = np.mgrid[0:n, 0:n]
            c = (n - 1) / 2
            rho = np.hypot(i - c, j - c)
            k = curvature(rho - n / 4)
            band = (rho >= n / 8) & (rho <= 3 * n / 8)
            # curvature in units of the physical circle (domain side = 1)
            errs.append(np.max(np.abs(k[band] * n - n / rho[band])))
        orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
        assert np.all(orders >= 1.0)

    def test_batch_matches_single(self):
        rng = np.random.default_rng(5)
        stack = rng.normal(size=(3, 6, 7))
        batched = curvature(stack)
        for b in range(3):
            assert np.array_equal(batched[b], curvature(stack[b]))

    def test_vjp_matches_finite_differences(self):
        rng = np.random.default_rng(8)
        phi = rng.normal(size=(5, 6))
        g = rng.normal(size=phi.shape)
        vjp = curvature_vjp(phi, g)
        h = 1e-6
        numeric = np.zeros_like(phi)
        for idx in np.ndindex(phi.shape):
            p, m = phi.copy(), phi.copy()
            p[idx] += h
            m[idx] -= h
            numeric[idx] = np.sum(g * (curvature(p) - curvature(m))) / (2 * h)
        assert np.max(np.abs(vjp - numeric)) / np.max(np.abs(numeric)) < 1e-6

    def test_derivatives_of_quadratic(self):
        i, j = np.mgrid[0:7, 0:7].astype(float)
        phi = j**2 + 3 * i * j
        px, py, pxx, pyy, pxy = (d[2:-2, 2:-2] for d in derivatives(phi))
        assert np.allclose(px, 2 * j[2:-2, 2:-2] + 3 * i[2:-2, 2:-2])
        assert np.allclose(py, 3 * j[2:-2, 2:-2])
        assert np.allclose(pxx, 2) and np.allclose(pyy, 0) and np.allclose(pxy, 3)


class TestFieldHelpers:
    def test_as_field_validation(self):
        with pytest.raises(ValueError):
            as_field(np.zeros((2, 5)))
        with pytest.raises(ValueError):
            as_field(np.array([[np.nan] * 3] * 3))
        assert as_field(np.arange(12.0), 3, 4).shape == (3, 4)

    def test_vectorize_is_row_major(self):
        f = np.arange(12.0).reshape(3, 4)
        assert np.array_equal(vectorize(f), np.arange(12.0))
        assert np.array_equal(vectorize(f).reshape(3, 4), f)

    def test_luminance(self):
        rgb = np.zeros((3, 3, 3))
        rgb[..., 1] = 1.0
        assert np.allclose(to_luminance(rgb), 0.587)
        gray = np.ones((3, 3))
        assert to_luminance(gray) is not None and np.array_equal(to_luminance(gray), gray)


class TestPGM:
    def test_roundtrip_ramp(self, tmp_path):
        ramp = np.linspace(0, 1, 16).reshape(4, 4)
        write_pgm(ramp, tmp_path / "r.pgm")
        back = read_pgm(tmp_path / "r.pgm")
        assert np.array_equal(back, quantize(ramp))
        assert np.max(np.abs(back - ramp)) <= 0.5 / 255 + 1e-12

    @given(st.integers(1, 12), st.integers(1, 12), st.integers(0, 2**32 - 1))
    def test_roundtrip_property(self, h, w, seed):
        f = np.random.default_rng(seed).uniform(-0.2, 1.2, size=(h, w))
        back = decode_pgm(encode_pgm(f))
        assert np.array_equal(back, quantize(f))

    def test_header_and_size_for_64x64(self, tmp_path):
        write_pgm(np.zeros((64, 64)), tmp_path / "z.pgm")
        data = (tmp_path / "z.pgm").read_bytes()
        header = pgm_header(64, 64)
        assert header == b"P5\n64 64\n255\n"
        assert len(data) == len(header) + 4096
        assert data[len(header):] == bytes(4096)

    def test_width_height_order(self):
        data = encode_pgm(np.zeros((3, 5)))
        assert data.startswith(b"P5\n5 3\n255\n")
        assert decode_pgm(data).shape == (3, 5)

    def test_comments_in_header(self):
        data = b"P5\n# made by hand\n2 2\n255\n" + bytes([0, 255, 255, 0])
        assert np.array_equal(decode_pgm(data), [[0, 1], [1, 0]])

    @pytest.mark.parametrize(
        "data, field",
        [
            (b"P2\n2 2\n255\n0 0 0 0", "magic"),
            (b"P5\n2 2\n65535\n" + bytes(8), "maxval"),
            (b"P5\n2 2\n255\n" + bytes(3), "payload"),
            (b"P5\n0 2\n255\n", "width/height"),
            (b"P5\n2", "header"),
        ],
    )
    def test_format_errors_name_the_field(self, data, field):
        with pytest.raises(PGMFormatError, match=field):
            decode_pgm(data)

    def test_binary_mask_values(self, tmp_path):
        mask = (np.random.default_rng(0).uniform(size=(8, 8)) > 0.5).astype(float)
        write_pgm(mask, tmp_path / "m.pgm")
        payload = (tmp_path / "m.pgm").read_bytes()[len(pgm_header(8, 8)):]
        assert set(payload) <= {0, 255}

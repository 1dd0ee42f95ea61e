"""Pixel-grid primitives: regularized Heaviside/Dirac, finite differences,
curvature of level lines and binary PGM I/O.

Fields are plain 2-D float64 numpy arrays indexed ``[row, col]``; ``x`` runs
along columns and ``y`` along rows, grid spacing is one pixel. All finite
differences clamp indices at the border (replicate padding).
"""
from __future__ import annotations

import os
import re

import numpy as np

CURVATURE_REG = 1e-8
LUMA_WEIGHTS = (0.299, 0.587, 0.114)


class PGMFormatError(ValueError):
    """Raised for PGM files this module refuses to read."""


def as_field(values, height: int | None = None, width: int | None = None) -> np.ndarray:
    """Return ``values`` as a validated float64 field (reshaping a vector if sizes are given)."""
    arr = np.asarray(values, dtype=np.float64)
    if height is not None and width is not None:
        arr = arr.reshape(height, width)
    if arr.ndim != 2:
        raise ValueError(f"field must be 2-D, got shape {arr.shape}")
    if arr.shape[0] < 3 or arr.shape[1] < 3:
        raise ValueError(f"field must be at least 3x3, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("field contains non-finite values")
    return arr


def vectorize(field: np.ndarray) -> np.ndarray:
    return np.asarray(field, dtype=np.float64).reshape(-1)


def heaviside(t, eps: float = 1.0):
    if np.any(np.asarray(eps) <= 0):
        raise ValueError("eps must be positive")
    return 0.5 * (1.0 + (2.0 / np.pi) * np.arctan(np.asarray(t, dtype=np.float64) / eps))


def dirac(t, eps: float = 1.0):
    if np.any(np.asarray(eps) <= 0):
        raise ValueError("eps must be positive")
    t = np.asarray(t, dtype=np.float64)
    return eps / (np.pi * (eps * eps + t * t))


def _pad(phi: np.ndarray) -> np.ndarray:
    pad = [(0, 0)] * (phi.ndim - 2) + [(1, 1), (1, 1)]
    return np.pad(phi, pad, mode="edge")


def _unpad_adjoint(gpad: np.ndarray) -> np.ndarray:
    """Adjoint of edge padding: fold the one-pixel border back onto the grid."""
    g = gpad[..., 1:-1, 1:-1].copy()
    g[..., 0, :] += gpad[..., 0, 1:-1]
    g[..., -1, :] += gpad[..., -1, 1:-1]
    g[..., :, 0] += gpad[..., 1:-1, 0]
    g[..., :, -1] += gpad[..., 1:-1, -1]
    g[..., 0, 0] += gpad[..., 0, 0]
    g[..., 0, -1] += gpad[..., 0, -1]
    g[..., -1, 0] += gpad[..., -1, 0]
    g[..., -1, -1] += gpad[..., -1, -1]
    return g


def derivatives(phi: np.ndarray):
    """Central differences ``(phi_x, phi_y, phi_xx, phi_yy, phi_xy)``.

    Works on a single field or a stack ``(..., H, W)``.
    """
    p = _pad(np.asarray(phi, dtype=np.float64))
    c = p[..., 1:-1, 1:-1]
    e, w = p[..., 1:-1, 2:], p[..., 1:-1, :-2]
    s, n = p[..., 2:, 1:-1], p[..., :-2, 1:-1]
    phi_x = 0.5 * (e - w)
    phi_y = 0.5 * (s - n)
    phi_xx = e - 2.0 * c + w
    phi_yy = s - 2.0 * c + n
    phi_xy = 0.25 * (p[..., 2:, 2:] - p[..., 2:, :-2] - p[..., :-2, 2:] + p[..., :-2, :-2])
    return phi_x, phi_y, phi_xx, phi_yy, phi_xy


def gradient_magnitude(phi: np.ndarray) -> np.ndarray:
    phi_x, phi_y, *_ = derivatives(phi)
    return np.sqrt(phi_x * phi_x + phi_y * phi_y)


def curvature(phi: np.ndarray) -> np.ndarray:
    """Curvature of the level lines of ``phi`` (divergence of the unit normal).

    Denominator is regularized as ``(phi_x^2 + phi_y^2 + 1e-8)^{3/2}``.
    Accepts a single field or a stack of fields.
    """
    phi_x, phi_y, phi_xx, phi_yy, phi_xy = derivatives(phi)
    num = phi_xx * phi_y**2 - 2.0 * phi_x * phi_y * phi_xy + phi_yy * phi_x**2
    den = (phi_x**2 + phi_y**2 + CURVATURE_REG) ** 1.5
    return num / den


def curvature_vjp(phi: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Vector-Jacobian product of :func:`curvature`: returns ``J^T grad_out``."""
    phi_x, phi_y, phi_xx, phi_yy, phi_xy = derivatives(phi)
    q = phi_x**2 + phi_y**2 + CURVATURE_REG
    den = q**1.5
    num = phi_xx * phi_y**2 - 2.0 * phi_x * phi_y * phi_xy + phi_yy * phi_x**2
    g_num = grad_out / den
    g_q = -1.5 * grad_out * num / (den * q)
    g_px = g_num * (-2.0 * phi_y * phi_xy + 2.0 * phi_yy * phi_x) + g_q * 2.0 * phi_x
    g_py = g_num * (2.0 * phi_xx * phi_y - 2.0 * phi_x * phi_xy) + g_q * 2.0 * phi_y
    g_pxx = g_num * phi_y**2
    g_pyy = g_num * phi_x**2
    g_pxy = g_num * (-2.0 * phi_x * phi_y)

    shape = list(phi.shape)
    shape[-2] += 2
    shape[-1] += 2
    gp = np.zeros(shape)
    gp[..., 1:-1, 2:] += 0.5 * g_px + g_pxx
    gp[..., 1:-1, :-2] += -0.5 * g_px + g_pxx
    gp[..., 2:, 1:-1] += 0.5 * g_py + g_pyy
    gp[..., :-2, 1:-1] += -0.5 * g_py + g_pyy
    gp[..., 1:-1, 1:-1] += -2.0 * (g_pxx + g_pyy)
    gp[..., 2:, 2:] += 0.25 * g_pxy
    gp[..., 2:, :-2] -= 0.25 * g_pxy
    gp[..., :-2, 2:] -= 0.25 * g_pxy
    gp[..., :-2, :-2] += 0.25 * g_pxy
    return _unpad_adjoint(gp)


def to_luminance(rgb: np.ndarray) -> np.ndarray:
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim == 2:
        return rgb
    return rgb[..., :3] @ np.asarray(LUMA_WEIGHTS)


# --- PGM -------------------------------------------------------------------

_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def pgm_header(height: int, width: int) -> bytes:
    return f"P5\n{width} {height}\n255\n".encode("ascii")


def encode_pgm(field: np.ndarray) -> bytes:
    """Serialize a [0, 1] field as P5 bytes; values are clamped then scaled to 0..255."""
    field = np.asarray(field, dtype=np.float64)
    if field.ndim != 2:
        raise ValueError(f"expected a 2-D field, got shape {field.shape}")
    payload = np.rint(np.clip(field, 0.0, 1.0) * 255.0).astype(np.uint8)
    return pgm_header(*field.shape) + payload.tobytes()


def decode_pgm(data: bytes) -> np.ndarray:
    """Parse P5 bytes into a field normalized to [0, 1]."""
    pos = 0
    tokens = []
    for name in ("magic", "width", "height", "maxval"):
        m = _TOKEN.match(data, pos)
        if m is None:
            raise PGMFormatError(f"malformed header: missing {name}")
        tokens.append(m.group(1))
        pos = m.end()
    magic, width, height, maxval = tokens
    if magic != b"P5":
        raise PGMFormatError(f"magic: expected P5, got {magic.decode('ascii', 'replace')!r}")
    try:
        w, h, mv = int(width), int(height), int(maxval)
    except ValueError as exc:
        raise PGMFormatError(f"malformed header: non-integer width/height/maxval ({exc})") from None
    if w <= 0 or h <= 0:
        raise PGMFormatError(f"width/height: must be positive, got {w}x{h}")
    if mv != 255:
        raise PGMFormatError(f"maxval: only 255 is supported, got {mv}")
    if pos >= len(data) or not data[pos : pos + 1].isspace():
        raise PGMFormatError("malformed header: missing whitespace after maxval")
    pos += 1
    payload = data[pos:]
    if len(payload) < w * h:
        raise PGMFormatError(f"payload: truncated, expected {w * h} bytes, got {len(payload)}")
    arr = np.frombuffer(payload[: w * h], dtype=np.uint8).reshape(h, w)
    return arr.astype(np.float64) / 255.0


def write_pgm(field: np.ndarray, path: str | os.PathLike) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_pgm(field))


def read_pgm(path: str | os.PathLike) -> np.ndarray:
    with open(path, "rb") as fh:
        return decode_pgm(fh.read())


def quantize(field: np.ndarray) -> np.ndarray:
    """Round-trip ``field`` through 8-bit storage without touching disk."""
    return np.rint(np.clip(field, 0.0, 1.0) * 255.0) / 255.0

"""Deterministic synthetic object-segmentation corpus.

Each sample is rendered from a random binary shape, pushed through a random
affine map, degraded (box blur, gaussian noise, salt-and-pepper) and resized
to the target grid. All randomness for sample ``id`` comes from
``derive_seed(global_seed, "sample", id)``, so samples can be generated in
any order.
"""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .grid import encode_pgm, quantize, read_pgm

SHAPE_KINDS = ("disk", "rectangle", "multi_blob")


def derive_seed(seed: int, *tags) -> int:
    """Stable 63-bit seed from a global seed and purpose tags."""
    text = ":".join([str(int(seed))] + [str(t) for t in tags])
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little") >> 1


@dataclass(frozen=True)
class ShapeSpec:
    kind: str
    center: tuple = (0.5, 0.5)  # (x, y) in [0, 1]^2
    radius: float = 0.25  # disk
    half_extent: tuple = (0.25, 0.25)  # rectangle (hx, hy)
    blobs: tuple = ()  # multi_blob: ((cx, cy, r), ...)
    fg: float = 1.0
    bg: float = 0.0

    def validate(self) -> None:
        if self.kind not in SHAPE_KINDS:
            raise ValueError(f"unknown shape kind {self.kind!r}")
        if self.fg == self.bg:
            raise ValueError("fg and bg intensities must differ")
        if not (0 <= self.fg <= 1 and 0 <= self.bg <= 1):
            raise ValueError("intensities must lie in [0, 1]")
        tol = 1e-9
        if self.kind == "disk":
            cx, cy = self.center
            r = self.radius
            if r <= 0 or cx - r < -tol or cx + r > 1 + tol or cy - r < -tol or cy + r > 1 + tol:
                raise ValueError("disk does not fit in the unit square")
        elif self.kind == "rectangle":
            cx, cy = self.center
            hx, hy = self.half_extent
            if hx <= 0 or hy <= 0 or cx - hx < -tol or cx + hx > 1 + tol or cy - hy < -tol or cy + hy > 1 + tol:
                raise ValueError("rectangle does not fit in the unit square")
        else:
            if not self.blobs:
                raise ValueError("multi_blob needs at least one blob")
            for cx, cy, r in self.blobs:
                if r <= 0 or cx - r < -tol or cx + r > 1 + tol or cy - r < -tol or cy + r > 1 + tol:
                    raise ValueError("blob does not fit in the unit square")


@dataclass(frozen=True)
class DegradeSpec:
    gaussian_sigma: float = 0.0
    salt_pepper_frac: float = 0.0
    blur_radius: int = 0

    def validate(self) -> None:
        if self.gaussian_sigma < 0 or self.blur_radius < 0:
            raise ValueError("gaussian_sigma and blur_radius must be >= 0")
        if not 0 <= self.salt_pepper_frac < 1:
            raise ValueError("salt_pepper_frac must lie in [0, 1)")


@dataclass(frozen=True)
class AffineSpec:
    rotation: float = 0.0  # degrees, counter-clockwise on screen
    translation: tuple = (0.0, 0.0)  # (dx, dy) pixels
    scale: float = 1.0
    flip_h: bool = False
    flip_v: bool = False

    def validate(self) -> None:
        if not 0.5 <= self.scale <= 2.0:
            raise ValueError("scale must lie in [0.5, 2.0]")

    @property
    def is_identity_map(self) -> bool:
        return self.rotation == 0 and self.scale == 1 and tuple(self.translation) == (0, 0)


@dataclass(frozen=True)
class GenConfig:
    n_samples: int = 400
    height: int = 32
    width: int = 32
    render_size: int = 64
    seed: int = 0
    kinds: tuple = SHAPE_KINDS
    fg_range: tuple = (0.6, 1.0)
    bg_range: tuple = (0.0, 0.4)
    sigma_range: tuple = (0.0, 0.2)
    salt_pepper_range: tuple = (0.0, 0.1)
    blur_max: int = 1
    rotation_range: tuple = (-30.0, 30.0)
    translation_frac: float = 0.1
    scale_range: tuple = (0.8, 1.2)
    flip_prob: float = 0.5
    train_frac: float = 0.5
    # > 0: shapes come from a fixed pool of base shapes that every sample
    # re-augments and re-degrades; 0: every sample draws its own shape
    n_bases: int = 0

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if min(self.height, self.width, self.render_size) < 3:
            raise ValueError("grid sizes must be >= 3")
        for k in self.kinds:
            if k not in SHAPE_KINDS:
                raise ValueError(f"unknown shape kind {k!r}")
        if not 0 < self.train_frac < 1:
            raise ValueError("train_frac must lie in (0, 1)")
        if self.n_bases < 0:
            raise ValueError("n_bases must be >= 0")

    @classmethod
    def full_scale(cls, **overrides) -> "GenConfig":
        kw = dict(n_samples=6000, height=64, width=64, render_size=128)
        kw.update(overrides)
        return cls(**kw)


@dataclass
class Sample:
    image: np.ndarray
    mask: np.ndarray
    id: str
    split: str = ""
    provenance: dict = field(default_factory=dict)


@dataclass
class Dataset:
    samples: list
    manifest: dict = field(default_factory=dict)
    root: Path | None = None

    def split(self, name: str) -> list:
        return [s for s in self.samples if s.split == name]

    @property
    def train(self) -> list:
        return self.split("train")

    @property
    def test(self) -> list:
        return self.split("test")

    @property
    def shape(self) -> tuple:
        return self.samples[0].image.shape


# --- rendering and transforms ---------------------------------------------


def render_shape(spec: ShapeSpec, height: int, width: int):
    """Rasterize by point membership at pixel centers; returns ``(image, mask)``."""
    spec.validate()
    y = (np.arange(height) + 0.5)[:, None] / height
    x = (np.arange(width) + 0.5)[None, :] / width
    if spec.kind == "disk":
        cx, cy = spec.center
        mask = (x - cx) ** 2 + (y - cy) ** 2 <= spec.radius**2
    elif spec.kind == "rectangle":
        cx, cy = spec.center
        hx, hy = spec.half_extent
        mask = (np.abs(x - cx) <= hx) & (np.abs(y - cy) <= hy)
    else:
        mask = np.zeros((height, width), dtype=bool)
        for cx, cy, r in spec.blobs:
            mask |= (x - cx) ** 2 + (y - cy) ** 2 <= r**2
    mask = mask.astype(np.float64)
    image = spec.bg + (spec.fg - spec.bg) * mask
    return image, mask


def degrade(image: np.ndarray, spec: DegradeSpec, seed: int) -> np.ndarray:
    """Box blur, then additive gaussian noise, then salt-and-pepper; clamped to [0, 1]."""
    spec.validate()
    rng = np.random.default_rng(seed)
    out = np.asarray(image, dtype=np.float64).copy()
    if spec.blur_radius > 0:
        out = ndimage.uniform_filter(out, size=2 * int(spec.blur_radius) + 1, mode="nearest")
    if spec.gaussian_sigma > 0:
        out = out + rng.normal(0.0, spec.gaussian_sigma, size=out.shape)
    if spec.salt_pepper_frac > 0:
        hit = rng.random(out.shape) < spec.salt_pepper_frac
        salt = rng.random(out.shape) < 0.5
        out = np.where(hit, salt.astype(np.float64), out)
    return np.clip(out, 0.0, 1.0)


def _affine_coords(spec: AffineSpec, height: int, width: int):
    """Source coordinates for every output pixel (inverse mapping about the center)."""
    ci, cj = (height - 1) / 2.0, (width - 1) / 2.0
    i, j = np.mgrid[0:height, 0:width].astype(np.float64)
    dx, dy = spec.translation
    u = j - cj - dx
    v = i - ci - dy
    th = np.deg2rad(spec.rotation)
    c, s = np.cos(th), np.sin(th)
    # forward map rotates (x, y) by +th on screen (y down), then scales
    src_x = (c * u - s * v) / spec.scale
    src_y = (s * u + c * v) / spec.scale
    return np.array([src_y + ci, src_x + cj])


def augment(image: np.ndarray, mask: np.ndarray, spec: AffineSpec, fill: float = 0.0):
    """Apply one affine map to both arrays: bilinear for the image, nearest for
    the mask. Out-of-frame pixels become ``fill`` (image) and 0 (mask)."""
    spec.validate()
    image = np.asarray(image, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if not spec.is_identity_map:
        coords = _affine_coords(spec, *image.shape)
        image = ndimage.map_coordinates(image, coords, order=1, mode="constant", cval=fill)
        mask = ndimage.map_coordinates(mask, coords, order=0, mode="constant", cval=0.0)
    if spec.flip_h:
        image, mask = image[:, ::-1], mask[:, ::-1]
    if spec.flip_v:
        image, mask = image[::-1, :], mask[::-1, :]
    return np.ascontiguousarray(image), np.ascontiguousarray(mask)


def resize(field: np.ndarray, height: int, width: int, order: int = 1) -> np.ndarray:
    """Pixel-center aligned resampling (order 1 bilinear, 0 nearest)."""
    field = np.asarray(field, dtype=np.float64)
    if field.shape == (height, width):
        return field.copy()
    h0, w0 = field.shape
    i = (np.arange(height) + 0.5) * h0 / height - 0.5
    j = (np.arange(width) + 0.5) * w0 / width - 0.5
    ii, jj = np.meshgrid(i, j, indexing="ij")
    return ndimage.map_coordinates(field, [ii, jj], order=order, mode="nearest")


# --- sampling specs ---------------------------------------------------------


def _uniform(rng, lo_hi):
    lo, hi = lo_hi
    return float(rng.uniform(lo, hi)) if hi > lo else float(lo)


def sample_shape(rng: np.random.Generator, cfg: GenConfig) -> ShapeSpec:
    kind = cfg.kinds[int(rng.integers(len(cfg.kinds)))]
    fg = round(_uniform(rng, cfg.fg_range), 6)
    bg = round(_uniform(rng, cfg.bg_range), 6)
    if fg == bg:
        fg = min(1.0, bg + 0.1)
    if kind == "disk":
        r = rng.uniform(0.18, 0.32)
        c = rng.uniform(r + 0.02, 0.98 - r, size=2)
        return ShapeSpec("disk", center=(float(c[0]), float(c[1])), radius=float(r), fg=fg, bg=bg)
    if kind == "rectangle":
        hx, hy = rng.uniform(0.15, 0.32, size=2)
        cx = rng.uniform(hx + 0.02, 0.98 - hx)
        cy = rng.uniform(hy + 0.02, 0.98 - hy)
        return ShapeSpec("rectangle", center=(float(cx), float(cy)), half_extent=(float(hx), float(hy)), fg=fg, bg=bg)
    count = int(rng.integers(2, 4))
    blobs = []
    for _ in range(count):
        r = rng.uniform(0.1, 0.2)
        cx, cy = rng.uniform(r + 0.05, 0.95 - r, size=2)
        blobs.append((float(cx), float(cy), float(r)))
    return ShapeSpec("multi_blob", blobs=tuple(blobs), fg=fg, bg=bg)


def sample_affine(rng: np.random.Generator, cfg: GenConfig) -> AffineSpec:
    t = cfg.translation_frac * cfg.render_size
    return AffineSpec(
        rotation=_uniform(rng, cfg.rotation_range),
        translation=(_uniform(rng, (-t, t)), _uniform(rng, (-t, t))),
        scale=_uniform(rng, cfg.scale_range),
        flip_h=bool(rng.random() < cfg.flip_prob),
        flip_v=bool(rng.random() < cfg.flip_prob),
    )


def sample_degrade(rng: np.random.Generator, cfg: GenConfig) -> DegradeSpec:
    return DegradeSpec(
        gaussian_sigma=_uniform(rng, cfg.sigma_range),
        salt_pepper_frac=_uniform(rng, cfg.salt_pepper_range),
        blur_radius=int(rng.integers(0, cfg.blur_max + 1)),
    )


def make_sample(cfg: GenConfig, index: int) -> Sample:
    sid = f"{index:05d}"
    seed = derive_seed(cfg.seed, "sample", sid)
    rng = np.random.default_rng(seed)
    if cfg.n_bases:
        base = index % cfg.n_bases
        shape = sample_shape(np.random.default_rng(derive_seed(cfg.seed, "base", base)), cfg)
    else:
        shape = sample_shape(rng, cfg)
    affine = sample_affine(rng, cfg)
    deg = sample_degrade(rng, cfg)
    noise_seed = int(rng.integers(2**63))
    image, mask = render_shape(shape, cfg.render_size, cfg.render_size)
    image, mask = augment(image, mask, affine, fill=shape.bg)
    image = degrade(image, deg, noise_seed)
    image = quantize(resize(image, cfg.height, cfg.width, order=1))
    mask = resize(mask, cfg.height, cfg.width, order=0)
    provenance = {"shape": asdict(shape), "affine": asdict(affine), "degrade": asdict(deg), "seed": seed}
    return Sample(image=image, mask=mask, id=sid, provenance=provenance)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def build_dataset(cfg: GenConfig, out_dir: str | os.PathLike | None = None) -> Dataset:
    """Generate every sample, split by a seeded shuffle and optionally write
    ``out_dir/{train,test}/{img,mask}_<id>.pgm`` plus ``manifest.json``."""
    samples = [make_sample(cfg, i) for i in range(cfg.n_samples)]
    order = np.random.default_rng(derive_seed(cfg.seed, "split")).permutation(cfg.n_samples)
    n_train = int(round(cfg.n_samples * cfg.train_frac))
    train_ids = set(int(i) for i in order[:n_train])
    for i, s in enumerate(samples):
        s.split = "train" if i in train_ids else "test"

    entries = []
    files = {}
    for s in samples:
        img_rel = f"{s.split}/img_{s.id}.pgm"
        mask_rel = f"{s.split}/mask_{s.id}.pgm"
        img_bytes = encode_pgm(s.image)
        mask_bytes = encode_pgm(s.mask)
        files[img_rel] = img_bytes
        files[mask_rel] = mask_bytes
        entries.append(
            {
                "id": s.id,
                "split": s.split,
                "seed": s.provenance["seed"],
                "specs": _jsonable({k: v for k, v in s.provenance.items() if k != "seed"}),
                "image": img_rel,
                "mask": mask_rel,
                "image_sha256": hashlib.sha256(img_bytes).hexdigest(),
                "mask_sha256": hashlib.sha256(mask_bytes).hexdigest(),
            }
        )
    manifest = {
        "format": "rlseg-dataset/1",
        "config": _jsonable(asdict(cfg)),
        "counts": {"train": n_train, "test": cfg.n_samples - n_train},
        "samples": entries,
    }
    root = None
    if out_dir is not None:
        root = Path(out_dir)
        for sub in ("train", "test"):
            (root / sub).mkdir(parents=True, exist_ok=True)
        for rel, data in files.items():
            (root / rel).write_bytes(data)
        (root / "manifest.json").write_text(manifest_text(manifest))
    return Dataset(samples=samples, manifest=manifest, root=root)


def manifest_text(manifest: dict) -> str:
    return json.dumps(manifest, indent=2, sort_keys=True) + "\n"


def load_dataset(root: str | os.PathLike, verify: bool = True) -> Dataset:
    """Read a dataset written by :func:`build_dataset`."""
    root = Path(root)
    manifest = json.loads((root / "manifest.json").read_text())
    samples = []
    for e in manifest["samples"]:
        if verify:
            for key in ("image", "mask"):
                digest = hashlib.sha256((root / e[key]).read_bytes()).hexdigest()
                if digest != e[f"{key}_sha256"]:
                    raise ValueError(f"checksum mismatch for {e[key]}")
        samples.append(
            Sample(
                image=read_pgm(root / e["image"]),
                mask=(read_pgm(root / e["mask"]) > 0.5).astype(np.float64),
                id=e["id"],
                split=e["split"],
                provenance={**e["specs"], "seed": e["seed"]},
            )
        )
    return Dataset(samples=samples, manifest=manifest, root=root)

"""Recurrent level set: a GRU whose hidden state is the vectorized level set.

Per time step the Chan-Vese force field becomes the recurrent input::

    x_t   = kappa(phi) - U_g (I - c1)^2 + W_g (I - c2)^2
    z_t   = sigmoid(U_z x_t + W_z phi + b_z)
    r_t   = sigmoid(U_r x_t + W_r phi + b_r)
    o_t   = tanh(U_o x_t + W_o (phi * r_t) + b_o)
    phi_t = z_t * phi + (1 - z_t) * o_t

and the final level set is read out by ``softmax(V phi_T + b_V)`` per pixel.
Class 0 is background, class 1 foreground.

Everything below works on batches: vectors are rows of ``(B, N)`` arrays.
``ParamSet.diagonal`` switches every weight to an elementwise (length-N)
parameterization.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field, fields

import numpy as np

from .chanvese import checkerboard_init, region_means
from .grid import curvature

K = 2
MATRICES = ("U_g", "W_g", "U_z", "W_z", "U_r", "W_r", "U_o", "W_o")
BLOCKS = ("U_g", "W_g", "U_z", "W_z", "b_z", "U_r", "W_r", "b_r", "U_o", "W_o", "b_o", "V", "b_V")
MAGIC = b"RLS1"
FLAG_DIAGONAL = 1


@dataclass(frozen=True)
class RLSConfig:
    height: int = 32
    width: int = 32
    T: int = 5
    epsilon: float = 1.0
    checker_period: int = 5
    init_scale: float = 1.0
    seed: int = 0
    diagonal: bool = False

    def __post_init__(self):
        if self.height < 3 or self.width < 3:
            raise ValueError("grid must be at least 3x3")
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.checker_period < 2:
            raise ValueError("checker_period must be >= 2")
        if self.init_scale < 0:
            raise ValueError("init_scale must be >= 0")

    @property
    def n(self) -> int:
        return self.height * self.width


@dataclass
class ParamSet:
    U_g: np.ndarray
    W_g: np.ndarray
    U_z: np.ndarray
    W_z: np.ndarray
    b_z: np.ndarray
    U_r: np.ndarray
    W_r: np.ndarray
    b_r: np.ndarray
    U_o: np.ndarray
    W_o: np.ndarray
    b_o: np.ndarray
    V: np.ndarray
    b_V: np.ndarray
    height: int = field(default=0, kw_only=True)
    width: int = field(default=0, kw_only=True)
    T: int = field(default=1, kw_only=True)
    diagonal: bool = field(default=False, kw_only=True)

    @property
    def n(self) -> int:
        return self.height * self.width

    def blocks(self) -> dict:
        return {name: getattr(self, name) for name in BLOCKS}

    def block_shapes(self) -> dict:
        return block_shapes(self.n, self.diagonal)

    def copy(self) -> "ParamSet":
        return self.replace(**{k: v.copy() for k, v in self.blocks().items()})

    def replace(self, **blocks) -> "ParamSet":
        arrays = self.blocks()
        arrays.update(blocks)
        return ParamSet(**arrays, height=self.height, width=self.width, T=self.T, diagonal=self.diagonal)

    def validate(self) -> None:
        for name, shape in self.block_shapes().items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise ValueError(f"{name}: expected shape {shape}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name}: non-finite entries")

    def to_bytes(self) -> bytes:
        self.validate()
        head = MAGIC + struct.pack(
            "<5i", self.height, self.width, K, self.T, FLAG_DIAGONAL if self.diagonal else 0
        )
        body = b"".join(np.ascontiguousarray(getattr(self, n), dtype="<f8").tobytes() for n in BLOCKS)
        return head + body

    @classmethod
    def from_bytes(cls, data: bytes) -> "ParamSet":
        if data[:4] != MAGIC:
            raise ValueError(f"bad magic {data[:4]!r}, expected {MAGIC!r}")
        height, width, k, T, flags = struct.unpack_from("<5i", data, 4)
        if k != K:
            raise ValueError(f"unsupported class count K={k}")
        diagonal = bool(flags & FLAG_DIAGONAL)
        offset = 4 + 20
        arrays = {}
        for name, shape in block_shapes(height * width, diagonal).items():
            count = int(np.prod(shape))
            if offset + 8 * count > len(data):
                raise ValueError(f"truncated parameter file while reading {name}")
            arrays[name] = np.frombuffer(data, dtype="<f8", count=count, offset=offset).reshape(shape).copy()
            offset += 8 * count
        if offset != len(data):
            raise ValueError(f"{len(data) - offset} trailing bytes after parameter blocks")
        return cls(**arrays, height=height, width=width, T=T, diagonal=diagonal)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "ParamSet":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def block_shapes(n: int, diagonal: bool = False) -> dict:
    mat = (n,) if diagonal else (n, n)
    shapes = {name: mat for name in MATRICES}
    shapes.update(b_z=(n,), b_r=(n,), b_o=(n,), b_V=(K * n,))
    shapes["V"] = (K * n,) if diagonal else (K * n, n)
    return {name: shapes[name] for name in BLOCKS}


@dataclass
class ForwardCache:
    """Per-step intermediates of a batched forward pass (arrays are ``(B, N)``
    unless noted; step ``t`` lives at index ``t - 1``)."""

    images: np.ndarray  # (B, N)
    phi0: np.ndarray
    x: list = field(default_factory=list)
    z: list = field(default_factory=list)
    r: list = field(default_factory=list)
    o: list = field(default_factory=list)
    phi: list = field(default_factory=list)
    c1: list = field(default_factory=list)  # (B,)
    c2: list = field(default_factory=list)
    kappa: list = field(default_factory=list)
    logits: np.ndarray | None = None  # (B, K*N)
    y_hat: np.ndarray | None = None  # (B, N, K)

    def phi_prev(self, t: int) -> np.ndarray:
        return self.phi0 if t == 1 else self.phi[t - 2]

    @property
    def T(self) -> int:
        return len(self.phi)


def init_params(cfg: RLSConfig) -> ParamSet:
    """Uniform(-s/sqrt(N), s/sqrt(N)) weights from ``cfg.seed``; zero biases."""
    n = cfg.n
    rng = np.random.default_rng(cfg.seed)
    bound = cfg.init_scale / np.sqrt(n)
    arrays = {}
    for name, shape in block_shapes(n, cfg.diagonal).items():
        if name.startswith("b_"):
            arrays[name] = np.zeros(shape)
        else:
            arrays[name] = rng.uniform(-bound, bound, size=shape) if bound > 0 else np.zeros(shape)
    return ParamSet(**arrays, height=cfg.height, width=cfg.width, T=cfg.T, diagonal=cfg.diagonal)


# Saturated gates would round onto the closed endpoints in float64; clamping
# to the nearest interior values keeps z, r in (0, 1) and o in (-1, 1).
GATE_LO = np.finfo(np.float64).tiny
GATE_HI = np.nextafter(1.0, 0.0)


def sigmoid(a: np.ndarray) -> np.ndarray:
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    ea = np.exp(a[~pos])
    out[~pos] = ea / (1.0 + ea)
    return np.clip(out, GATE_LO, GATE_HI, out=out)


def bounded_tanh(a: np.ndarray) -> np.ndarray:
    return np.clip(np.tanh(a), -GATE_HI, GATE_HI)


def softmax(logits: np.ndarray) -> np.ndarray:
    """Softmax over the last axis."""
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def matvec(M: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Apply a weight to the rows of ``X``: ``X @ M.T`` (dense) or ``X * M`` (diagonal)."""
    return X * M if M.ndim == 1 else X @ M.T


def matvec_t(M: np.ndarray, D: np.ndarray) -> np.ndarray:
    return D * M if M.ndim == 1 else D @ M


def outer_sum(D: np.ndarray, X: np.ndarray, diagonal: bool) -> np.ndarray:
    """Gradient of ``sum(D * matvec(M, X))`` with respect to ``M``."""
    return (D * X).sum(axis=0) if diagonal else D.T @ X


def readout(params: ParamSet, phi: np.ndarray) -> np.ndarray:
    """Logits ``V phi + b_V`` for a batch of level sets, shape ``(B, K*N)``."""
    if params.diagonal:
        return np.repeat(phi, K, axis=1) * params.V + params.b_V
    return phi @ params.V.T + params.b_V


def _as_batch(images, params: ParamSet) -> tuple[np.ndarray, bool]:
    images = np.asarray(images, dtype=np.float64)
    single = images.ndim == 2
    if single:
        images = images[None]
    if images.ndim != 3 or images.shape[1:] != (params.height, params.width):
        raise ValueError(
            f"dimension mismatch: images {images.shape[-2:]} vs params {(params.height, params.width)}"
        )
    return images, single


def _force_terms(images: np.ndarray, phi_prev: np.ndarray, eps: float):
    """Curvature and region means of a batch of level sets ``(B, N)``."""
    phi_grid = phi_prev.reshape(images.shape)
    c1, c2 = region_means(images, phi_grid, eps)
    return curvature(phi_grid).reshape(phi_prev.shape), c1, c2


def _input(images, params: ParamSet, kappa, c1, c2) -> np.ndarray:
    flat = images.reshape(images.shape[0], -1)
    a = (flat - c1[:, None]) ** 2
    b = (flat - c2[:, None]) ** 2
    return kappa - matvec(params.U_g, a) + matvec(params.W_g, b)


def gen_input(images, phi_prev, params: ParamSet, eps: float = 1.0, *, return_means: bool = False):
    """Recurrent input from the image and the previous level set.

    ``images`` is ``(H, W)`` or ``(B, H, W)``; ``phi_prev`` is the matching
    vector ``(N,)`` or batch ``(B, N)``.
    """
    images, single = _as_batch(images, params)
    b = images.shape[0]
    phi_prev = np.asarray(phi_prev, dtype=np.float64).reshape(b, -1)
    if phi_prev.shape[1] != params.n:
        raise ValueError(f"dimension mismatch: phi has {phi_prev.shape[1]} entries, expected {params.n}")
    kappa, c1, c2 = _force_terms(images, phi_prev, eps)
    x = _input(images, params, kappa, c1, c2)
    if single:
        x, c1, c2 = x[0], c1[0], c2[0]
    if return_means:
        return x, c1, c2
    return x


def gates(x, phi_prev, params: ParamSet):
    """Update gate, reset gate and candidate content for one step."""
    z = sigmoid(matvec(params.U_z, x) + matvec(params.W_z, phi_prev) + params.b_z)
    r = sigmoid(matvec(params.U_r, x) + matvec(params.W_r, phi_prev) + params.b_r)
    o = bounded_tanh(matvec(params.U_o, x) + matvec(params.W_o, phi_prev * r) + params.b_o)
    return z, r, o


def blend(z, phi_prev, o):
    """``z * phi_prev + (1 - z) * o``, clamped to the segment between its
    endpoints to absorb last-ulp rounding."""
    out = z * phi_prev + (1.0 - z) * o
    return np.clip(out, np.minimum(phi_prev, o), np.maximum(phi_prev, o))


def step(images, phi_prev, params: ParamSet, eps: float = 1.0):
    """One recurrence step; returns ``(phi_t, {"x", "z", "r", "o", "c1", "c2"})``."""
    x, c1, c2 = gen_input(images, phi_prev, params, eps, return_means=True)
    phi_prev = np.asarray(phi_prev, dtype=np.float64).reshape(np.shape(x))
    x2, p2 = np.atleast_2d(x), np.atleast_2d(phi_prev)
    z, r, o = gates(x2, p2, params)
    phi = blend(z, p2, o)
    if np.ndim(x) == 1:
        z, r, o, phi = z[0], r[0], o[0], phi[0]
    return phi, {"x": x, "z": z, "r": r, "o": o, "c1": c1, "c2": c2}


def forward(images, params: ParamSet, cfg: RLSConfig, *, frozen: ForwardCache | None = None):
    """Unroll ``cfg.T`` steps from the checkerboard and apply the softmax head.

    Returns ``(cache, y_hat)`` where ``y_hat`` is ``(N, K)`` for one image or
    ``(B, N, K)`` for a batch; the cache always keeps the batch axis.
    ``frozen`` replays curvature and region means from an earlier pass, which
    is the function truncated BPTT differentiates.
    """
    images, single = _as_batch(images, params)
    b = images.shape[0]
    phi = np.broadcast_to(
        checkerboard_init(cfg.height, cfg.width, cfg.checker_period).reshape(1, -1), (b, params.n)
    ).copy()
    cache = ForwardCache(images=images.reshape(b, -1), phi0=phi)
    for t in range(cfg.T):
        if frozen is None:
            kappa, c1, c2 = _force_terms(images, phi, cfg.epsilon)
        else:
            kappa, c1, c2 = frozen.kappa[t], frozen.c1[t], frozen.c2[t]
        x = _input(images, params, kappa, c1, c2)
        z, r, o = gates(x, phi, params)
        phi = blend(z, phi, o)
        cache.x.append(x)
        cache.z.append(z)
        cache.r.append(r)
        cache.o.append(o)
        cache.phi.append(phi)
        cache.c1.append(c1)
        cache.c2.append(c2)
        cache.kappa.append(kappa)
    cache.logits = readout(params, phi)
    cache.y_hat = softmax(cache.logits.reshape(b, params.n, K))
    return cache, (cache.y_hat[0] if single else cache.y_hat)


def predict_mask(y_hat: np.ndarray, height: int | None = None, width: int | None = None) -> np.ndarray:
    """Per-pixel argmax; exact ties go to background."""
    y_hat = np.asarray(y_hat)
    mask = (y_hat[..., 1] > y_hat[..., 0]).astype(np.float64)
    if height is not None and width is not None:
        mask = mask.reshape(mask.shape[:-1] + (height, width))
    return mask


def segment_rls(image: np.ndarray, params: ParamSet, cfg: RLSConfig) -> np.ndarray:
    _, y_hat = forward(image, params, cfg)
    return predict_mask(y_hat, cfg.height, cfg.width)


def config_for(params: ParamSet, base: RLSConfig | None = None) -> RLSConfig:
    """An RLSConfig consistent with ``params`` (grid, T and parameterization)."""
    base = base or RLSConfig()
    kw = {f.name: getattr(base, f.name) for f in fields(base)}
    kw.update(height=params.height, width=params.width, T=params.T, diagonal=params.diagonal)
    return RLSConfig(**kw)

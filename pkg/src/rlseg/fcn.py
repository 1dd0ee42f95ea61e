"""Two fully-connected layers with a ReLU in between, mapping raw pixels to
per-pixel foreground/background scores. Baseline for the recurrent model."""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .model import K, softmax
from .train import (
    TrainConfig,
    check_gradients,
    cross_entropy,
    fit,
    one_hot,
    pixel_losses,
    stack_samples,
)

FCN_BLOCKS = ("W1", "b1", "W2", "b2")
FCN_MAGIC = b"FCN1"


@dataclass
class FCNParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    height: int = 0
    width: int = 0

    @property
    def n(self) -> int:
        return self.height * self.width

    @property
    def hidden(self) -> int:
        return self.W1.shape[0]

    def blocks(self) -> dict:
        return {name: getattr(self, name) for name in FCN_BLOCKS}

    def replace(self, **blocks) -> "FCNParams":
        arrays = self.blocks()
        arrays.update(blocks)
        return FCNParams(**arrays, height=self.height, width=self.width)

    def copy(self) -> "FCNParams":
        return self.replace(**{k: v.copy() for k, v in self.blocks().items()})

    def validate(self) -> None:
        n, hd = self.n, self.hidden
        want = {"W1": (hd, n), "b1": (hd,), "W2": (K * n, hd), "b2": (K * n,)}
        for name, shape in want.items():
            arr = getattr(self, name)
            if arr.shape != shape:
                raise ValueError(f"{name}: expected shape {shape}, got {arr.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name}: non-finite entries")

    def to_bytes(self) -> bytes:
        self.validate()
        head = FCN_MAGIC + struct.pack("<4i", self.height, self.width, K, self.hidden)
        return head + b"".join(np.ascontiguousarray(getattr(self, n), dtype="<f8").tobytes() for n in FCN_BLOCKS)

    @classmethod
    def from_bytes(cls, data: bytes) -> "FCNParams":
        if data[:4] != FCN_MAGIC:
            raise ValueError(f"bad magic {data[:4]!r}, expected {FCN_MAGIC!r}")
        height, width, k, hidden = struct.unpack_from("<4i", data, 4)
        if k != K:
            raise ValueError(f"unsupported class count K={k}")
        n = height * width
        shapes = {"W1": (hidden, n), "b1": (hidden,), "W2": (K * n, hidden), "b2": (K * n,)}
        offset, arrays = 20, {}
        for name in FCN_BLOCKS:
            count = int(np.prod(shapes[name]))
            if offset + 8 * count > len(data):
                raise ValueError(f"truncated parameter file while reading {name}")
            arrays[name] = np.frombuffer(data, dtype="<f8", count=count, offset=offset).reshape(shapes[name]).copy()
            offset += 8 * count
        if offset != len(data):
            raise ValueError(f"{len(data) - offset} trailing bytes after parameter blocks")
        return cls(**arrays, height=height, width=width)

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> "FCNParams":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def init_fcn(height: int, width: int, hidden: int | None = None, init_scale: float = 1.0, seed: int = 0) -> FCNParams:
    n = height * width
    hidden = n if hidden is None else hidden
    rng = np.random.default_rng(seed)

    def uniform(shape, fan_in):
        bound = init_scale / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape) if bound > 0 else np.zeros(shape)

    return FCNParams(
        W1=uniform((hidden, n), n),
        b1=np.zeros(hidden),
        W2=uniform((K * n, hidden), hidden),
        b2=np.zeros(K * n),
        height=height,
        width=width,
    )


def _flatten(images, params: FCNParams):
    images = np.asarray(images, dtype=np.float64)
    single = images.ndim == 2
    if single:
        images = images[None]
    if images.shape[1:] != (params.height, params.width):
        raise ValueError(f"dimension mismatch: images {images.shape[1:]} vs params {(params.height, params.width)}")
    return images.reshape(images.shape[0], -1), single


def fcn_forward(images, params: FCNParams, *, return_hidden: bool = False):
    """``softmax(W2 relu(W1 vec(I) + b1) + b2)`` per pixel; ``(N, K)`` or ``(B, N, K)``."""
    x, single = _flatten(images, params)
    pre = x @ params.W1.T + params.b1
    h = np.maximum(pre, 0.0)
    logits = h @ params.W2.T + params.b2
    y_hat = softmax(logits.reshape(x.shape[0], params.n, K))
    if single:
        y_hat = y_hat[0]
    if return_hidden:
        return y_hat, (x, pre, h)
    return y_hat


def fcn_backward(images, y, params: FCNParams) -> dict:
    """Gradients of the summed cross entropy (over pixels and batch)."""
    y_hat, (x, pre, h) = fcn_forward(images, params, return_hidden=True)
    b = x.shape[0]
    d_logits = (np.reshape(y_hat, (b, params.n, K)) - np.reshape(y, (b, params.n, K))).reshape(b, -1)
    d_h = d_logits @ params.W2
    d_pre = d_h * (pre > 0)
    return {
        "W1": d_pre.T @ x,
        "b1": d_pre.sum(axis=0),
        "W2": d_logits.T @ h,
        "b2": d_logits.sum(axis=0),
    }


def fcn_predict(params: FCNParams, images) -> np.ndarray:
    y_hat = fcn_forward(images, params)
    mask = (y_hat[..., 1] > y_hat[..., 0]).astype(np.float64)
    return mask.reshape(mask.shape[:-1] + (params.height, params.width))


def _fcn_loss_and_grads(params, images, targets):
    y_hat = fcn_forward(images, params)
    losses = [cross_entropy(y_hat[i], targets[i]) for i in range(len(images))]
    return losses, fcn_backward(images, targets, params)


def train_fcn(dataset, cfg: TrainConfig, *, hidden: int | None = None, init_scale: float = 1.0, val=None, params=None, opt=None, log_every=0):
    """Same optimizer, schedule and loss as the recurrent model; returns ``(params, opt, history)``."""
    images, masks = stack_samples(dataset)
    if params is None:
        params = init_fcn(images.shape[1], images.shape[2], hidden, init_scale, cfg.seed)
    elif images.shape[1:] != (params.height, params.width):
        raise ValueError(f"dimension mismatch: data {images.shape[1:]} vs params {(params.height, params.width)}")
    val_arrays = stack_samples(val) if val else None
    return fit(params, images, masks, _fcn_loss_and_grads, fcn_predict, cfg, opt=opt, val=val_arrays, log_every=log_every)


def fcn_grad_check(height: int = 8, width: int = 8, h: float = 1e-6, tol: float = 1e-4, seed: int = 42, max_entries: int = 256):
    rng = np.random.default_rng(seed)
    params = init_fcn(height, width, seed=seed)
    params.b1[...] = rng.uniform(-0.5, 0.5, size=params.b1.shape)
    params.b2[...] = rng.uniform(-0.5, 0.5, size=params.b2.shape)
    image = rng.uniform(0.0, 1.0, size=(height, width))
    y = one_hot((rng.uniform(size=(height, width)) < 0.5).astype(np.float64))
    grads = fcn_backward(image, y, params)
    return check_gradients(
        params, lambda p: pixel_losses(fcn_forward(image, p), y), grads, h, tol, max_entries, seed, "fcn"
    )


"""Loss, backpropagation through time, RMSProp with momentum and the training loop."""
from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from .grid import dirac, heaviside, curvature_vjp
from .model import (
    K,
    ForwardCache,
    ParamSet,
    RLSConfig,
    forward,
    init_params,
    matvec_t,
    outer_sum,
    predict_mask,
)

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12
OPTIMIZER_VARIANT = "rmsprop+momentum(preconditioned-step)"
MODES = ("truncated", "full")


@dataclass(frozen=True)
class TrainConfig:
    eta0: float = 1e-3
    eta_floor: float = 1e-5
    halve_every: int = 200
    epochs: int = 500
    rho_m: float = 0.9
    rms_decay: float = 0.9
    rms_eps: float = 1e-8
    grad_clip: float = 1.0
    batch_size: int = 1
    seed: int = 0
    mode: str = "truncated"

    def __post_init__(self):
        if not 0 < self.eta_floor <= self.eta0:
            raise ValueError("need 0 < eta_floor <= eta0")
        if not (0 <= self.rho_m < 1 and 0 <= self.rms_decay < 1):
            raise ValueError("rho_m and rms_decay must lie in [0, 1)")
        if self.halve_every < 1 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("halve_every, batch_size must be >= 1 and epochs >= 0")
        if self.rms_eps <= 0 or self.grad_clip <= 0:
            raise ValueError("rms_eps and grad_clip must be positive")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")


@dataclass
class OptState:
    rms: dict
    mom: dict
    epoch: int = 0

    @classmethod
    def zeros_like(cls, params) -> "OptState":
        blocks = params.blocks()
        return cls(
            rms={k: np.zeros_like(v) for k, v in blocks.items()},
            mom={k: np.zeros_like(v) for k, v in blocks.items()},
        )


def one_hot(mask) -> np.ndarray:
    """Binary mask ``(..., H, W)`` -> one-hot targets ``(..., N, K)``."""
    mask = np.asarray(mask, dtype=np.float64)
    flat = mask.reshape(mask.shape[:-2] + (-1,))
    return np.stack([1.0 - flat, flat], axis=-1)


def cross_entropy(y_hat, y) -> float:
    """Summed pixelwise cross entropy; ``y_hat`` is clipped to [1e-12, 1] first."""
    y_hat = np.asarray(y_hat, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if y_hat.shape != y.shape:
        raise ValueError(f"shape mismatch: y_hat {y_hat.shape} vs y {y.shape}")
    return float(-(y * np.log(np.clip(y_hat, PROB_FLOOR, 1.0))).sum())


def pixel_losses(y_hat, y) -> np.ndarray:
    """Per-pixel terms of :func:`cross_entropy`."""
    return -(np.asarray(y) * np.log(np.clip(y_hat, PROB_FLOOR, 1.0))).sum(axis=-1)


def lr_schedule(epoch: int, cfg: TrainConfig = TrainConfig()) -> float:
    return max(cfg.eta_floor, cfg.eta0 * 0.5 ** (epoch // cfg.halve_every))


def _x_phi_vjp(cache: ForwardCache, t: int, dx: np.ndarray, params: ParamSet, eps: float) -> np.ndarray:
    """Gradient flowing from ``x_t`` back into ``phi_{t-1}`` through curvature and
    the region means."""
    phi_prev = cache.phi_prev(t)
    b = phi_prev.shape[0]
    grid = (b, params.height, params.width)
    img = cache.images
    c1 = cache.c1[t - 1][:, None]
    c2 = cache.c2[t - 1][:, None]
    g = curvature_vjp(phi_prev.reshape(grid), dx.reshape(grid)).reshape(b, -1)
    g_c1 = (2.0 * (img - c1) * matvec_t(params.U_g, dx)).sum(axis=1, keepdims=True)
    g_c2 = (-2.0 * (img - c2) * matvec_t(params.W_g, dx)).sum(axis=1, keepdims=True)
    h = heaviside(phi_prev, eps)
    d = dirac(phi_prev, eps)
    inside = h.sum(axis=1, keepdims=True)
    outside = (1.0 - h).sum(axis=1, keepdims=True)
    g += g_c1 * d * (img - c1) / inside
    g -= g_c2 * d * (img - c2) / outside
    return g


def backward(cache: ForwardCache, y, params: ParamSet, mode: str = "truncated", eps: float = 1.0) -> dict:
    """Gradients of the summed cross entropy with respect to every parameter block.

    ``y`` holds one-hot targets ``(B, N, K)`` (or ``(N, K)`` for one image).
    In ``truncated`` mode ``x_t`` is treated as data with respect to
    ``phi_{t-1}``; ``full`` also differentiates curvature and region means.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    y = np.asarray(y, dtype=np.float64)
    b = cache.images.shape[0]
    y = y.reshape(b, -1, K)
    if y.shape[1] != params.n or cache.phi0.shape[1] != params.n:
        raise ValueError("cache/params/targets dimension mismatch")
    diag = params.diagonal
    grads = {}

    d_logits = (cache.y_hat - y).reshape(b, K * params.n)
    phi_T = cache.phi[-1]
    grads["b_V"] = d_logits.sum(axis=0)
    if diag:
        grads["V"] = (d_logits * np.repeat(phi_T, K, axis=1)).sum(axis=0)
        d_phi = (d_logits * params.V).reshape(b, params.n, K).sum(axis=2)
    else:
        grads["V"] = d_logits.T @ phi_T
        d_phi = d_logits @ params.V

    # per-step deltas are stacked over time so each weight gradient is one matmul
    acts = {"o": [], "r": [], "z": [], "x": []}
    for t in range(cache.T, 0, -1):
        phi_prev = cache.phi_prev(t)
        z, r, o = cache.z[t - 1], cache.r[t - 1], cache.o[t - 1]
        dz = d_phi * (phi_prev - o)
        do = d_phi * (1.0 - z)
        d_prev = d_phi * z

        da_o = do * (1.0 - o * o)
        d_pr = matvec_t(params.W_o, da_o)
        d_prev += d_pr * r
        da_r = d_pr * phi_prev * r * (1.0 - r)
        d_prev += matvec_t(params.W_r, da_r)
        da_z = dz * z * (1.0 - z)
        d_prev += matvec_t(params.W_z, da_z)

        dx = matvec_t(params.U_z, da_z) + matvec_t(params.U_r, da_r) + matvec_t(params.U_o, da_o)
        if mode == "full":
            d_prev += _x_phi_vjp(cache, t, dx, params, eps)
        acts["o"].append(da_o)
        acts["r"].append(da_r)
        acts["z"].append(da_z)
        acts["x"].append(dx)
        d_phi = d_prev

    steps = range(cache.T, 0, -1)
    X = np.concatenate([cache.x[t - 1] for t in steps])
    P = np.concatenate([cache.phi_prev(t) for t in steps])
    PR = np.concatenate([cache.phi_prev(t) * cache.r[t - 1] for t in steps])
    img = np.concatenate([cache.images] * cache.T)
    c1 = np.concatenate([cache.c1[t - 1] for t in steps])[:, None]
    c2 = np.concatenate([cache.c2[t - 1] for t in steps])[:, None]
    D = {k: np.concatenate(v) for k, v in acts.items()}
    grads["U_o"] = outer_sum(D["o"], X, diag)
    grads["W_o"] = outer_sum(D["o"], PR, diag)
    grads["b_o"] = D["o"].sum(axis=0)
    grads["U_r"] = outer_sum(D["r"], X, diag)
    grads["W_r"] = outer_sum(D["r"], P, diag)
    grads["b_r"] = D["r"].sum(axis=0)
    grads["U_z"] = outer_sum(D["z"], X, diag)
    grads["W_z"] = outer_sum(D["z"], P, diag)
    grads["b_z"] = D["z"].sum(axis=0)
    grads["U_g"] = -outer_sum(D["x"], (img - c1) ** 2, diag)
    grads["W_g"] = outer_sum(D["x"], (img - c2) ** 2, diag)
    return grads


def clip_block(g: np.ndarray, cap: float) -> np.ndarray:
    flat = g.reshape(-1)
    norm = float(np.sqrt(np.dot(flat, flat)))
    return g * (cap / norm) if norm > cap else g


def rmsprop_update(params, grads: dict, opt: OptState, lr: float, cfg: TrainConfig = TrainConfig()):
    """In-place RMSProp step with momentum applied to the preconditioned gradient.

    Per block: clip to L2 <= grad_clip, ``s = d*s + (1-d)*g^2``,
    ``m = rho*m + lr*g/sqrt(s + eps)``, ``theta -= m``.
    """
    for name, theta in params.blocks().items():
        g = clip_block(grads[name], cfg.grad_clip)
        s = opt.rms[name]
        m = opt.mom[name]
        tmp = np.multiply(g, g)
        tmp *= 1.0 - cfg.rms_decay
        s *= cfg.rms_decay
        s += tmp
        np.add(s, cfg.rms_eps, out=tmp)
        np.sqrt(tmp, out=tmp)
        np.divide(g, tmp, out=tmp)
        tmp *= lr
        m *= cfg.rho_m
        m += tmp
        theta -= m
    return params, opt


# --- training loop ---------------------------------------------------------


@dataclass
class History:
    rows: list = field(default_factory=list)

    def append(self, epoch: int, lr: float, mean_loss: float, val_fmeasure: float | None) -> None:
        self.rows.append({"epoch": epoch, "lr": lr, "mean_loss": mean_loss, "val_fmeasure": val_fmeasure})

    @property
    def losses(self) -> list:
        return [r["mean_loss"] for r in self.rows]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "lr", "mean_loss", "val_fmeasure"])
            for r in self.rows:
                val = "" if r["val_fmeasure"] is None else repr(float(r["val_fmeasure"]))
                w.writerow([r["epoch"], repr(float(r["lr"])), repr(float(r["mean_loss"])), val])


def stack_samples(samples) -> tuple[np.ndarray, np.ndarray]:
    """Images and masks of a sequence of samples as ``(S, H, W)`` arrays."""
    samples = list(samples)
    if not samples:
        raise ValueError("empty dataset")
    images = np.stack([np.asarray(s.image, dtype=np.float64) for s in samples])
    masks = np.stack([np.asarray(s.mask, dtype=np.float64) for s in samples])
    return images, masks


def fit(params, images, masks, loss_and_grads, predict, cfg: TrainConfig, opt=None, val=None, log_every=0):
    """Generic minibatch loop shared by the recurrent model and the FCN baseline.

    ``loss_and_grads(params, X, Y) -> (per_sample_losses, summed_grads)``;
    ``predict(params, X) -> masks``. Gradients are averaged over the batch.
    """
    opt = opt or OptState.zeros_like(params)
    history = History()
    targets = one_hot(masks)
    s = images.shape[0]
    for _ in range(cfg.epochs):
        epoch = opt.epoch
        lr = lr_schedule(epoch, cfg)
        order = np.random.default_rng([cfg.seed, epoch]).permutation(s)
        losses = []
        for start in range(0, s, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            batch_losses, grads = loss_and_grads(params, images[idx], targets[idx])
            losses.extend(batch_losses)
            if len(idx) > 1:
                grads = {k: g / len(idx) for k, g in grads.items()}
            rmsprop_update(params, grads, opt, lr, cfg)
        val_f = None
        if val is not None:
            from .metrics import mean_fmeasure

            val_images, val_masks = val
            val_f = mean_fmeasure(predict(params, val_images), val_masks)
        history.append(epoch, lr, float(np.mean(losses)), val_f)
        opt.epoch += 1
        if log_every and (epoch % log_every == 0):
            log.info("epoch %d lr %.2e loss %.4f val_f %s", epoch, lr, history.rows[-1]["mean_loss"], val_f)
    return params, opt, history


def rls_loss_and_grads(cfg: RLSConfig, mode: str = "truncated"):
    def fn(params, images, targets):
        cache, y_hat = forward(images, params, cfg)
        losses = [cross_entropy(y_hat[i], targets[i]) for i in range(len(images))]
        return losses, backward(cache, targets, params, mode, cfg.epsilon)

    return fn


def rls_predict(cfg: RLSConfig):
    def fn(params, images):
        _, y_hat = forward(images, params, cfg)
        return predict_mask(y_hat, cfg.height, cfg.width)

    return fn


def train(dataset, rls_cfg: RLSConfig, train_cfg: TrainConfig, *, val=None, params=None, opt=None, log_every=0):
    """Train the recurrent level set; returns ``(params, opt_state, history)``.

    ``dataset`` and ``val`` are sequences of samples with ``image``/``mask``.
    Passing ``params``/``opt`` resumes from a checkpoint.
    """
    images, masks = stack_samples(dataset)
    if images.shape[1:] != (rls_cfg.height, rls_cfg.width):
        raise ValueError(f"dimension mismatch: data {images.shape[1:]} vs config {(rls_cfg.height, rls_cfg.width)}")
    params = params if params is not None else init_params(rls_cfg)
    val_arrays = stack_samples(val) if val else None
    return fit(
        params,
        images,
        masks,
        rls_loss_and_grads(rls_cfg, train_cfg.mode),
        rls_predict(rls_cfg),
        train_cfg,
        opt=opt,
        val=val_arrays,
        log_every=log_every,
    )


# --- gradient check --------------------------------------------------------


REL_ERR_FLOOR = 1e-4
REL_ERR_BLOCK_FRACTION = 1e-3


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float | None = None) -> np.ndarray:
    """|a - n| / max(|a|, |n|, floor).

    Central differences at h=1e-6 carry 1e-9..1e-7 of absolute rounding noise
    (more where curvature is differentiated through small |grad phi|), so
    entries below ``floor`` are compared on that scale instead. The default
    floor is max(1e-4, 1e-3 * largest |analytic| entry of the block).
    """
    if floor is None:
        scale = float(np.max(np.abs(analytic))) if np.size(analytic) else 0.0
        floor = max(REL_ERR_FLOOR, REL_ERR_BLOCK_FRACTION * scale)
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)


@dataclass
class GradCheckReport:
    max_rel_error: dict
    tol: float
    mode: str
    checked: dict

    @property
    def passed(self) -> bool:
        return all(e <= self.tol for e in self.max_rel_error.values())

    def lines(self) -> list:
        out = [f"{name:>5s}  max_rel_err={err:.3e}  n={self.checked[name]}" for name, err in self.max_rel_error.items()]
        out.append(f"{'PASS' if self.passed else 'FAIL'} (tol={self.tol:g}, mode={self.mode})")
        return out


def check_gradients(params, loss_fn, grads: dict, h: float, tol: float, max_entries: int, seed: int, mode: str):
    """Compare ``grads`` against central differences of ``loss_fn(params)``.

    ``loss_fn`` may return per-pixel losses; they are differenced before
    summation to keep rounding noise in the quotient low. Blocks larger than
    ``max_entries`` are sampled: the largest analytic entries plus a seeded
    random subset.
    """
    rng = np.random.default_rng(seed)
    errors, checked = {}, {}
    for name, theta in params.blocks().items():
        flat = theta.reshape(-1)
        g = grads[name].reshape(-1)
        if flat.size <= max_entries:
            idx = np.arange(flat.size)
        else:
            top = np.argsort(-np.abs(g))[: max_entries // 4]
            rest = rng.choice(flat.size, size=max_entries - top.size, replace=False)
            idx = np.unique(np.concatenate([top, rest]))
        numeric = np.empty(idx.size)
        for j, i in enumerate(idx):
            old = flat[i]
            flat[i] = old + h
            lp = loss_fn(params)
            flat[i] = old - h
            lm = loss_fn(params)
            flat[i] = old
            numeric[j] = np.sum(np.asarray(lp) - np.asarray(lm)) / (2.0 * h)
        floor = max(REL_ERR_FLOOR, REL_ERR_BLOCK_FRACTION * float(np.max(np.abs(g), initial=0.0)))
        errors[name] = float(relative_error(g[idx], numeric, floor).max())
        checked[name] = int(idx.size)
    return GradCheckReport(errors, tol, mode, checked)


def grad_check(
    rls_cfg: RLSConfig | None = None,
    mode: str = "truncated",
    h: float = 1e-6,
    tol: float = 1e-4,
    seed: int = 42,
    max_entries: int = 256,
) -> GradCheckReport:
    """Random small instance; analytic BPTT gradients vs central differences."""
    if h <= 0:
        raise ValueError("h must be positive")
    if rls_cfg is None:
        rls_cfg = RLSConfig(height=8, width=8, T=3, seed=seed)
    rng = np.random.default_rng(seed)
    params = init_params(rls_cfg)
    for name, arr in params.blocks().items():
        if name.startswith("b_"):
            arr[...] = rng.uniform(-0.5, 0.5, size=arr.shape)
    image = rng.uniform(0.0, 1.0, size=(rls_cfg.height, rls_cfg.width))
    mask = (rng.uniform(size=image.shape) < 0.5).astype(np.float64)
    y = one_hot(mask)

    cache, _ = forward(image, params, rls_cfg)
    grads = backward(cache, y, params, mode, rls_cfg.epsilon)
    frozen = cache if mode == "truncated" else None

    def loss_fn(p):
        _, y_hat = forward(image, p, rls_cfg, frozen=frozen)
        return pixel_losses(y_hat, y)

    return check_gradients(params, loss_fn, grads, h, tol, max_entries, seed, mode)


# --- checkpoints -----------------------------------------------------------


def save_checkpoint(path, params, opt: OptState, cfg: TrainConfig, model: str = "rls", extra: dict | None = None):
    """``path`` holds the parameters; ``path.rms``/``path.mom`` the optimizer
    accumulators in the same container; ``path.json`` the scalars."""
    path = str(path)
    params.save(path)
    params.replace(**opt.rms).save(path + ".rms")
    params.replace(**opt.mom).save(path + ".mom")
    meta = {
        "model": model,
        "epoch": opt.epoch,
        "optimizer": OPTIMIZER_VARIANT,
        "train": asdict(cfg),
    }
    if extra:
        meta.update(extra)
    with open(path + ".json", "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_checkpoint(path, container=ParamSet):
    path = str(path)
    params = container.load(path)
    with open(path + ".json") as fh:
        meta = json.load(fh)
    opt = OptState(
        rms=container.load(path + ".rms").blocks(),
        mom=container.load(path + ".mom").blocks(),
        epoch=int(meta["epoch"]),
    )
    return params, opt, meta


def is_finite_grads(grads: dict) -> bool:
    return all(np.all(np.isfinite(g)) for g in grads.values())

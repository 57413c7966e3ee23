"""TC-ResNet8-style temporal convolution classifier with analytic gradients.

Parameters live in a plain ``dict[str, np.ndarray]``. Activations use a
(batch, time, channels) layout: mel bins act as input channels and every
convolution runs along time only.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BN_EPS = 1e-5
BN_MOMENTUM = 0.1
CHECKPOINT_MAGIC = b"WKWS"
CHECKPOINT_VERSION = 1


class CheckpointFormatError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    n_mels: int = 64
    n_classes: int = 11
    stem_channels: int = 16
    block_channels: tuple = (24, 32, 48)
    stem_kernel: int = 3
    block_kernel: int = 9

    @property
    def min_frames(self) -> int:
        return 2 ** len(self.block_channels)


def is_trainable(name: str) -> bool:
    return not name.endswith(("running_mean", "running_var"))


def _bn_params(params, prefix, channels, dtype):
    params[f"{prefix}.weight"] = np.ones(channels, dtype)
    params[f"{prefix}.bias"] = np.zeros(channels, dtype)
    params[f"{prefix}.running_mean"] = np.zeros(channels, dtype)
    params[f"{prefix}.running_var"] = np.ones(channels, dtype)


def init_model(rng=0, config: ModelConfig = ModelConfig(), dtype=np.float32) -> dict:
    """Kaiming-uniform (a=sqrt(5)) fan-in init; batch-norm at identity."""
    if not isinstance(rng, np.random.Generator):
        from .rng import stream

        rng = stream(rng)

    def uniform(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape).astype(dtype)

    p = {}
    c_in, k = config.n_mels, config.stem_kernel
    p["stem.conv.weight"] = uniform((config.stem_channels, c_in, k), c_in * k)
    _bn_params(p, "stem.bn", config.stem_channels, dtype)
    c_in, k = config.stem_channels, config.block_kernel
    for i, c_out in enumerate(config.block_channels):
        p[f"blocks.{i}.conv1.weight"] = uniform((c_out, c_in, k), c_in * k)
        _bn_params(p, f"blocks.{i}.bn1", c_out, dtype)
        p[f"blocks.{i}.conv2.weight"] = uniform((c_out, c_out, k), c_out * k)
        _bn_params(p, f"blocks.{i}.bn2", c_out, dtype)
        p[f"blocks.{i}.shortcut.weight"] = uniform((c_out, c_in, 1), c_in)
        _bn_params(p, f"blocks.{i}.bn_sc", c_out, dtype)
        c_in = c_out
    p["fc.weight"] = uniform((config.n_classes, c_in), c_in)
    p["fc.bias"] = uniform((config.n_classes,), c_in)
    return p


def infer_config(params: dict) -> ModelConfig:
    stem = params["stem.conv.weight"]
    blocks = []
    while f"blocks.{len(blocks)}.conv1.weight" in params:
        blocks.append(params[f"blocks.{len(blocks)}.conv1.weight"].shape[0])
    block_kernel = params["blocks.0.conv1.weight"].shape[2] if blocks else 9
    return ModelConfig(
        n_mels=stem.shape[1],
        n_classes=params["fc.weight"].shape[0],
        stem_channels=stem.shape[0],
        block_channels=tuple(blocks),
        stem_kernel=stem.shape[2],
        block_kernel=block_kernel,
    )


def param_count(params: dict) -> int:
    return int(sum(v.size for k, v in params.items() if is_trainable(k)))


def cast_params(params: dict, dtype) -> dict:
    return {k: v.astype(dtype) for k, v in params.items()}


# --------------------------------------------------------------- layers


def _conv_fwd(x, w, stride):
    b, t, c = x.shape
    c_out, _, k = w.shape
    pad = (k - 1) // 2
    xp = np.pad(x, ((0, 0), (pad, pad), (0, 0))) if pad else x
    win = sliding_window_view(xp, k, axis=1)[:, ::stride]  # (B, T_out, C, k)
    t_out = win.shape[1]
    cols = win.reshape(b * t_out, c * k)
    out = (cols @ w.reshape(c_out, c * k).T).reshape(b, t_out, c_out)
    return out, (cols, x.shape, w, stride, pad)


def _conv_bwd(dout, cache):
    cols, xshape, w, stride, pad = cache
    b, t, c = xshape
    c_out, _, k = w.shape
    t_out = dout.shape[1]
    d2 = dout.reshape(b * t_out, c_out)
    dw = (d2.T @ cols).reshape(w.shape)
    dcols = (d2 @ w.reshape(c_out, c * k)).reshape(b, t_out, c, k)
    dxp = np.zeros((b, t + 2 * pad, c), dtype=dout.dtype)
    span = stride * (t_out - 1) + 1
    for j in range(k):
        dxp[:, j : j + span : stride] += dcols[..., j]
    return dxp[:, pad : pad + t], dw


def _bn_fwd(x, params, prefix, train, update_stats):
    gamma = params[f"{prefix}.weight"]
    beta = params[f"{prefix}.bias"]
    if not train:
        mean = params[f"{prefix}.running_mean"]
        var = params[f"{prefix}.running_var"]
        inv = 1.0 / np.sqrt(var + BN_EPS)
        return (x - mean) * (inv * gamma) + beta, None
    mean = x.mean(axis=(0, 1))
    var = x.var(axis=(0, 1))
    inv = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - mean) * inv
    if update_stats:
        n = x.shape[0] * x.shape[1]
        unbiased = var * (n / max(n - 1, 1))
        rm, rv = f"{prefix}.running_mean", f"{prefix}.running_var"
        params[rm] = ((1 - BN_MOMENTUM) * params[rm] + BN_MOMENTUM * mean).astype(params[rm].dtype)
        params[rv] = ((1 - BN_MOMENTUM) * params[rv] + BN_MOMENTUM * unbiased).astype(params[rv].dtype)
    return xhat * gamma + beta, (xhat, inv, gamma)


def _bn_bwd(dy, cache):
    xhat, inv, gamma = cache
    n = dy.shape[0] * dy.shape[1]
    dgamma = (dy * xhat).sum(axis=(0, 1))
    dbeta = dy.sum(axis=(0, 1))
    dxhat = dy * gamma
    dx = (inv / n) * (n * dxhat - dxhat.sum(axis=(0, 1)) - xhat * (dxhat * xhat).sum(axis=(0, 1)))
    return dx, dgamma, dbeta


# --------------------------------------------------------------- network


def _as_input(params, batch):
    x = batch.data if hasattr(batch, "data") else batch
    x = np.asarray(x, dtype=params["fc.weight"].dtype)
    if x.ndim != 3:
        raise ValueError(f"expected (batch, time, mels) input, got shape {x.shape}")
    cfg = infer_config(params)
    if x.shape[2] != cfg.n_mels:
        raise ValueError(f"expected {cfg.n_mels} feature channels, got {x.shape[2]}")
    if x.shape[1] < cfg.min_frames:
        raise ValueError(f"need at least {cfg.min_frames} frames, got {x.shape[1]}")
    return x, cfg


def _forward(params, x, cfg, train, update_stats):
    caches = {}

    def conv_bn(h, name, bn, stride):
        y, c1 = _conv_fwd(h, params[f"{name}.weight"], stride)
        y, c2 = _bn_fwd(y, params, bn, train, update_stats)
        caches[name] = c1
        caches[bn] = c2
        return y

    h = np.maximum(conv_bn(x, "stem.conv", "stem.bn", 1), 0)
    caches["stem.relu"] = h > 0
    for i in range(len(cfg.block_channels)):
        pre = f"blocks.{i}"
        a = np.maximum(conv_bn(h, f"{pre}.conv1", f"{pre}.bn1", 2), 0)
        caches[f"{pre}.relu1"] = a > 0
        b = conv_bn(a, f"{pre}.conv2", f"{pre}.bn2", 1)
        s = np.maximum(conv_bn(h, f"{pre}.shortcut", f"{pre}.bn_sc", 2), 0)
        caches[f"{pre}.relu_sc"] = s > 0
        h = np.maximum(b + s, 0)
        caches[f"{pre}.relu_out"] = h > 0
    pooled = h.mean(axis=1)
    caches["pool"] = (h.shape, pooled)
    logits = pooled @ params["fc.weight"].T + params["fc.bias"]
    return logits, caches


def forward(params: dict, batch, mode: str = "eval") -> np.ndarray:
    """Logits of shape (B, n_classes).

    ``mode="train"`` normalises with batch statistics and updates the running
    statistics in ``params`` in place; ``mode="eval"`` is a pure function.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    x, cfg = _as_input(params, batch)
    logits, _ = _forward(params, x, cfg, mode == "train", mode == "train")
    return logits


def log_softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def backward(params: dict, batch, labels=None, update_stats: bool = True):
    """Mean cross-entropy loss and its gradient for every trainable tensor.

    Runs train-mode forward; with ``update_stats`` the running statistics in
    ``params`` move as they would during a training step.
    """
    x, cfg = _as_input(params, batch)
    labels = np.asarray(batch.labels if labels is None else labels)
    if labels.shape != (x.shape[0],):
        raise ValueError("one label per batch item required")
    if labels.min() < 0 or labels.max() >= cfg.n_classes:
        raise ValueError(f"labels must lie in 0..{cfg.n_classes - 1}")

    logits, caches = _forward(params, x, cfg, True, update_stats)
    n = x.shape[0]
    logp = log_softmax(logits)
    loss = float(-logp[np.arange(n), labels].mean())

    grads = {}
    dlogits = np.exp(logp)
    dlogits[np.arange(n), labels] -= 1
    dlogits /= n
    hshape, pooled = caches["pool"]
    grads["fc.weight"] = dlogits.T @ pooled
    grads["fc.bias"] = dlogits.sum(axis=0)
    dpool = dlogits @ params["fc.weight"]
    dh = np.broadcast_to(dpool[:, None, :] / hshape[1], hshape).copy()

    def bn_conv_bwd(dy, name, bn):
        dy, grads[f"{bn}.weight"], grads[f"{bn}.bias"] = _bn_bwd(dy, caches[bn])
        dx, grads[f"{name}.weight"] = _conv_bwd(dy, caches[name])
        return dx

    for i in reversed(range(len(cfg.block_channels))):
        pre = f"blocks.{i}"
        dsum = dh * caches[f"{pre}.relu_out"]
        ds = dsum * caches[f"{pre}.relu_sc"]
        dx_sc = bn_conv_bwd(ds, f"{pre}.shortcut", f"{pre}.bn_sc")
        da = bn_conv_bwd(dsum, f"{pre}.conv2", f"{pre}.bn2")
        da *= caches[f"{pre}.relu1"]
        dh = bn_conv_bwd(da, f"{pre}.conv1", f"{pre}.bn1") + dx_sc
    dh = dh * caches["stem.relu"]
    bn_conv_bwd(dh, "stem.conv", "stem.bn")

    grads = {k: grads[k].astype(params[k].dtype) for k in params if is_trainable(k)}
    return loss, grads


def loss(params: dict, batch, labels=None) -> float:
    """Train-mode cross-entropy without touching running statistics."""
    x, _ = _as_input(params, batch)
    labels = np.asarray(batch.labels if labels is None else labels)
    logits, _ = _forward(params, x, infer_config(params), True, False)
    return float(-log_softmax(logits)[np.arange(x.shape[0]), labels].mean())


# ------------------------------------------------------------ checkpoint


def save_checkpoint(params: dict) -> bytes:
    out = [CHECKPOINT_MAGIC, struct.pack("<HI", CHECKPOINT_VERSION, len(params))]
    for name, arr in params.items():
        raw = name.encode("utf-8")
        out.append(struct.pack("<H", len(raw)) + raw)
        out.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return b"".join(out)


def load_checkpoint(data: bytes, like: dict | None = None) -> dict:
    """Parse checkpoint bytes; with ``like``, names and shapes must match it."""
    view = memoryview(data)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(view):
            raise CheckpointFormatError("checkpoint truncated")
        chunk = view[pos : pos + n]
        pos += n
        return chunk

    if bytes(take(4)) != CHECKPOINT_MAGIC:
        raise CheckpointFormatError("bad checkpoint magic")
    version, count = struct.unpack("<HI", take(6))
    if version != CHECKPOINT_VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")
    params = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        try:
            name = bytes(take(nlen)).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise CheckpointFormatError("tensor name is not UTF-8") from exc
        (rank,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{rank}I", take(4 * rank))
        size = int(np.prod(shape, dtype=np.int64))
        params[name] = np.frombuffer(take(4 * size), dtype="<f4").reshape(shape).astype(np.float32)
    if pos != len(view):
        raise CheckpointFormatError("trailing bytes after last tensor")
    if like is not None:
        if list(like) != list(params):
            raise CheckpointFormatError("tensor names differ from the expected model")
        for k, v in like.items():
            if v.shape != params[k].shape:
                raise CheckpointFormatError(f"{k}: shape {params[k].shape} != {v.shape}")
    return params


def write_checkpoint(path, params: dict) -> None:
    with open(path, "wb") as fh:
        fh.write(save_checkpoint(params))


def read_checkpoint(path, like: dict | None = None) -> dict:
    with open(path, "rb") as fh:
        return load_checkpoint(fh.read(), like)

"""Tiny two-head convolutional classifier, implemented directly on numpy.

The network scores 32x32 grayscale crops centered on circle candidates and
answers two independent questions per crop: is this a rack slot at all, and
if so is the slot occupied. Both heads are sigmoid outputs trained with
binary cross-entropy; the occupancy head's loss is masked out for crops that
are not rack slots.

Layer stack (stride-2 convolutions, same padding)::

    1x32x32 -> conv 5x5 s2 -> relu -> maxpool 2 -> k1 x 8 x 8
            -> conv 5x5 s2 -> relu -> maxpool 2 -> k2 x 2 x 2
            -> flatten -> fc 512 -> relu -> fc 128 -> relu -> fc 2

Everything (forward, backward, the optimizer) runs in whatever dtype the
inputs carry, which lets the unit tests re-run the exact code in float64 for
finite-difference gradient checks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..core import CnnConfig

HIDDEN1 = 512
HIDDEN2 = 128
N_HEADS = 2

_MAGIC = b"VIALCNN1\n"

_TENSOR_NAMES = (
    "conv1_w", "conv1_b", "conv2_w", "conv2_b",
    "fc1_w", "fc1_b", "fc2_w", "fc2_b", "fc3_w", "fc3_b",
)


class TrainingDiverged(RuntimeError):
    """Raised when the training loss goes non-finite."""


@dataclass
class CnnWeights:
    conv1_w: np.ndarray
    conv1_b: np.ndarray
    conv2_w: np.ndarray
    conv2_b: np.ndarray
    fc1_w: np.ndarray
    fc1_b: np.ndarray
    fc2_w: np.ndarray
    fc2_b: np.ndarray
    fc3_w: np.ndarray
    fc3_b: np.ndarray

    def tensors(self) -> list[tuple[str, np.ndarray]]:
        """All parameter arrays in declaration order."""
        return [(name, getattr(self, name)) for name in _TENSOR_NAMES]

    def astype(self, dtype) -> "CnnWeights":
        return CnnWeights(**{n: a.astype(dtype) for n, a in self.tensors()})


def init_weights(gen: np.random.Generator, config: CnnConfig,
                 dtype=np.float32) -> CnnWeights:
    """He-initialized weights, zero biases."""
    # Two stride-2 convolutions and two 2x2 pools: 16x total downsampling.
    side = config.crop_size // 16
    flat = config.k2 * side * side

    def he(shape, fan_in):
        return (gen.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)

    return CnnWeights(
        conv1_w=he((config.k1, 1, 5, 5), 25),
        conv1_b=np.zeros(config.k1, dtype=dtype),
        conv2_w=he((config.k2, config.k1, 5, 5), config.k1 * 25),
        conv2_b=np.zeros(config.k2, dtype=dtype),
        fc1_w=he((flat, HIDDEN1), flat),
        fc1_b=np.zeros(HIDDEN1, dtype=dtype),
        fc2_w=he((HIDDEN1, HIDDEN2), HIDDEN1),
        fc2_b=np.zeros(HIDDEN2, dtype=dtype),
        fc3_w=he((HIDDEN2, N_HEADS), HIDDEN2),
        fc3_b=np.zeros(N_HEADS, dtype=dtype),
    )


def _conv_forward(x, w, b, stride=2, pad=2):
    n, c, _, _ = x.shape
    ko, _, k, _ = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
    oh, ow = win.shape[2], win.shape[3]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n, oh, ow, c * k * k)
    y = cols @ w.reshape(ko, -1).T + b
    return y.transpose(0, 3, 1, 2), cols


def _conv_backward(dy, cols, w, x_shape, stride=2, pad=2):
    n, c, h, ww = x_shape
    ko, _, k, _ = w.shape
    dyt = dy.transpose(0, 2, 3, 1)
    oh, ow = dyt.shape[1], dyt.shape[2]
    dw = np.tensordot(dyt, cols, axes=([0, 1, 2], [0, 1, 2])).reshape(w.shape)
    db = dyt.sum(axis=(0, 1, 2))
    dcols = (dyt @ w.reshape(ko, -1)).reshape(n, oh, ow, c, k, k)
    dxp = np.zeros((n, c, h + 2 * pad, ww + 2 * pad), dtype=dy.dtype)
    rows = stride * np.arange(oh)
    col_idx = stride * np.arange(ow)
    for ki in range(k):
        for kj in range(k):
            dxp[:, :, ki + rows[:, None], kj + col_idx[None, :]] += \
                dcols[:, :, :, :, ki, kj].transpose(0, 3, 1, 2)
    return dxp[:, :, pad:pad + h, pad:pad + ww], dw, db


def _pool_forward(x):
    n, c, h, w = x.shape
    xr = (x.reshape(n, c, h // 2, 2, w // 2, 2)
           .transpose(0, 1, 2, 4, 3, 5)
           .reshape(n, c, h // 2, w // 2, 4))
    idx = xr.argmax(axis=-1)
    out = np.take_along_axis(xr, idx[..., None], axis=-1)[..., 0]
    return out, idx


def _pool_backward(dy, idx, x_shape):
    n, c, h, w = x_shape
    flat = np.zeros((n, c, h // 2, w // 2, 4), dtype=dy.dtype)
    np.put_along_axis(flat, idx[..., None], dy[..., None], axis=-1)
    return (flat.reshape(n, c, h // 2, w // 2, 2, 2)
                .transpose(0, 1, 2, 4, 3, 5)
                .reshape(n, c, h, w))


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _softplus(z):
    return np.logaddexp(0.0, z)


def forward(x: np.ndarray, weights: CnnWeights):
    """Run the network; returns ``(probs, cache)`` with probs of shape (n, 2)."""
    x = np.asarray(x)
    if x.ndim == 3:
        x = x[:, None, :, :]
    z1, cols1 = _conv_forward(x, weights.conv1_w, weights.conv1_b)
    a1 = np.maximum(z1, 0)
    p1, idx1 = _pool_forward(a1)
    z2, cols2 = _conv_forward(p1, weights.conv2_w, weights.conv2_b)
    a2 = np.maximum(z2, 0)
    p2, idx2 = _pool_forward(a2)
    flat = p2.reshape(x.shape[0], -1)
    h1 = flat @ weights.fc1_w + weights.fc1_b
    a3 = np.maximum(h1, 0)
    h2 = a3 @ weights.fc2_w + weights.fc2_b
    a4 = np.maximum(h2, 0)
    logits = a4 @ weights.fc3_w + weights.fc3_b
    cache = (x, z1, cols1, a1, p1, idx1, z2, cols2, a2, p2, idx2,
             flat, h1, a3, h2, a4, logits)
    return _sigmoid(logits), cache


def predict(x: np.ndarray, weights: CnnWeights) -> np.ndarray:
    probs, _ = forward(x, weights)
    return probs


def loss_and_grads(weights: CnnWeights, x: np.ndarray, targets: np.ndarray,
                   mask: np.ndarray):
    """Masked two-head BCE (mean over batch) and gradients for every tensor.

    ``targets`` and ``mask`` are (n, 2); a zero mask entry removes that head's
    contribution for that sample entirely.
    """
    probs, cache = forward(x, weights)
    (xin, z1, cols1, a1, p1, idx1, z2, cols2, a2, p2, idx2,
     flat, h1, a3, h2, a4, logits) = cache
    n = xin.shape[0]
    t = np.asarray(targets, dtype=logits.dtype)
    m = np.asarray(mask, dtype=logits.dtype)
    loss = float((m * (_softplus(logits) - t * logits)).sum() / n)

    dlogits = m * (probs - t) / n
    dfc3_w = a4.T @ dlogits
    dfc3_b = dlogits.sum(axis=0)
    da4 = dlogits @ weights.fc3_w.T
    dh2 = da4 * (h2 > 0)
    dfc2_w = a3.T @ dh2
    dfc2_b = dh2.sum(axis=0)
    da3 = dh2 @ weights.fc2_w.T
    dh1 = da3 * (h1 > 0)
    dfc1_w = flat.T @ dh1
    dfc1_b = dh1.sum(axis=0)
    dflat = dh1 @ weights.fc1_w.T
    dp2 = dflat.reshape(p2.shape)
    da2 = _pool_backward(dp2, idx2, a2.shape)
    dz2 = da2 * (z2 > 0)
    dp1, dconv2_w, dconv2_b = _conv_backward(dz2, cols2, weights.conv2_w, p1.shape)
    da1 = _pool_backward(dp1, idx1, a1.shape)
    dz1 = da1 * (z1 > 0)
    _, dconv1_w, dconv1_b = _conv_backward(dz1, cols1, weights.conv1_w, xin.shape)

    grads = {
        "conv1_w": dconv1_w, "conv1_b": dconv1_b,
        "conv2_w": dconv2_w, "conv2_b": dconv2_b,
        "fc1_w": dfc1_w, "fc1_b": dfc1_b,
        "fc2_w": dfc2_w, "fc2_b": dfc2_b,
        "fc3_w": dfc3_w, "fc3_b": dfc3_b,
    }
    return loss, grads


def numeric_gradient(weights: CnnWeights, x, targets, mask,
                     name: str, index: tuple, eps: float = 1e-3) -> float:
    """Central-difference derivative of the loss w.r.t. one parameter."""
    arr = getattr(weights, name)
    orig = arr[index]
    arr[index] = orig + eps
    lo_hi, _ = loss_and_grads(weights, x, targets, mask)
    arr[index] = orig - eps
    lo_lo, _ = loss_and_grads(weights, x, targets, mask)
    arr[index] = orig
    return (lo_hi - lo_lo) / (2.0 * eps)


def targets_for_labels(labels: np.ndarray):
    """Two-head targets and mask from integer class labels.

    Head 0 is "crop is a rack slot", head 1 is "slot is occupied"; head 1 is
    unsupervised (mask 0) for crops that are not slots.
    """
    labels = np.asarray(labels)
    in_rack = (labels != 0).astype(np.float32)
    occupied = (labels == 1).astype(np.float32)
    targets = np.stack([in_rack, occupied], axis=1)
    mask = np.stack([np.ones_like(in_rack), in_rack], axis=1)
    return targets, mask


def train_cnn(crops: np.ndarray, labels: np.ndarray, config: CnnConfig,
              gen: np.random.Generator):
    """SGD-with-momentum training; returns ``(weights, per_epoch_loss)``."""
    crops = np.asarray(crops, dtype=np.float32)
    if crops.ndim == 3:
        crops = crops[:, None, :, :]
    n = crops.shape[0]
    if n == 0:
        raise ValueError("empty training set")
    targets, mask = targets_for_labels(labels)
    weights = init_weights(gen, config)
    velocity = {name: np.zeros_like(arr) for name, arr in weights.tensors()}
    history = []
    for epoch in range(config.epochs):
        perm = gen.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, config.batch_size):
            sel = perm[start:start + config.batch_size]
            loss, grads = loss_and_grads(weights, crops[sel], targets[sel],
                                         mask[sel])
            if not np.isfinite(loss):
                raise TrainingDiverged(f"loss became {loss} in epoch {epoch}")
            epoch_loss += loss * len(sel)
            for name, arr in weights.tensors():
                vel = velocity[name]
                vel *= config.momentum
                vel -= config.lr * grads[name]
                arr += vel
        history.append(epoch_loss / n)
    return weights, history


def save_weights(path, weights: CnnWeights) -> None:
    """Write weights: magic, one ASCII shape line per tensor, then raw <f4."""
    with open(path, "wb") as f:
        f.write(_MAGIC)
        for name, arr in weights.tensors():
            dims = " ".join(str(d) for d in arr.shape)
            f.write(f"{name} {dims}\n".encode("ascii"))
        f.write(b"data\n")
        for _, arr in weights.tensors():
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_weights(path) -> CnnWeights:
    with open(path, "rb") as f:
        if f.readline() != _MAGIC:
            raise ValueError(f"{path}: not a weights file")
        shapes = {}
        order = []
        while True:
            line = f.readline()
            if not line:
                raise ValueError(f"{path}: truncated header")
            if line == b"data\n":
                break
            parts = line.decode("ascii").split()
            shapes[parts[0]] = tuple(int(d) for d in parts[1:])
            order.append(parts[0])
        if tuple(order) != _TENSOR_NAMES:
            raise ValueError(f"{path}: unexpected tensor list {order}")
        arrays = {}
        for name in order:
            count = int(np.prod(shapes[name]))
            raw = f.read(4 * count)
            if len(raw) != 4 * count:
                raise ValueError(f"{path}: truncated data for {name}")
            arrays[name] = np.frombuffer(raw, dtype="<f4").reshape(shapes[name]).copy()
        if f.read(1):
            raise ValueError(f"{path}: trailing bytes after weight data")
    return CnnWeights(**arrays)

"""Small fully convolutional network with hand-written backpropagation.

Tensors are channels-last, ``(batch, height, width, channels)``, so the
flattened per-image logits are already N x K with the class index fastest.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided

DEFAULT_WIDTHS = (8, 16, 8)


def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    """``(B, H, W, C) -> (B*H*W, k*k*C)`` with same padding; column order (i, j, c)."""
    b, h, w, c = x.shape
    if k == 1:
        return x.reshape(b * h * w, c)
    r = k // 2
    xp = np.pad(x, ((0, 0), (r, r), (r, r), (0, 0)))
    s = xp.strides
    view = as_strided(xp, (b, h, w, k, k, c), (s[0], s[1], s[2], s[1], s[2], s[3]), writeable=False)
    return view.reshape(b * h * w, k * k * c)


def _input_grad(dout: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. the input of a same-padded cross-correlation: a full
    correlation of ``dout`` with the spatially flipped, transposed kernel."""
    k = w.shape[0]
    b, h, wd, o = dout.shape
    flipped = w[::-1, ::-1].transpose(0, 1, 3, 2).reshape(k * k * o, w.shape[2])
    return (_im2col(dout, k) @ flipped).reshape(b, h, wd, w.shape[2])


class TinyNet:
    """conv3x3(1->8)+ReLU, conv3x3(8->16)+ReLU, conv3x3(16->8)+ReLU, conv1x1(8->K).

    Weights are He-initialised, ``N(0, 2/n_in)`` with ``n_in = k*k*C_in``;
    biases start at zero. The classifier head is further scaled by
    ``head_scale`` so the initial softmax is close to uniform: a network that
    starts out confidently wrong on a structure gets almost no gradient from
    losses that are linear in the probabilities.
    """

    def __init__(self, num_classes: int, rng: np.random.Generator | None = None,
                 widths=DEFAULT_WIDTHS, in_channels: int = 1, relu: bool = True, head_scale: float = 0.1):
        rng = np.random.default_rng(0) if rng is None else rng
        self.num_classes = num_classes
        self.relu = relu
        chans = [in_channels, *widths, num_classes]
        self.kernels = [3] * len(widths) + [1]
        self.params: dict[str, np.ndarray] = {}
        for idx, (k, cin, cout) in enumerate(zip(self.kernels, chans[:-1], chans[1:])):
            fan_in = k * k * cin
            scale = np.sqrt(2.0 / fan_in) * (head_scale if cout == num_classes and idx == len(widths) else 1.0)
            self.params[f"w{idx}"] = rng.normal(0.0, scale, size=(k, k, cin, cout))
            self.params[f"b{idx}"] = np.zeros(cout)
        self._cache: list | None = None

    @property
    def n_layers(self) -> int:
        return len(self.kernels)

    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def forward(self, images: np.ndarray) -> np.ndarray:
        """Logits of shape ``(B, H, W, K)`` for images ``(B, H, W)`` or ``(B, H, W, C)``."""
        x = np.asarray(images, dtype=np.float64)
        if x.ndim == 3:
            x = x[..., None]
        if x.ndim != 4:
            raise ValueError(f"expected (B, H, W[, C]) input, got shape {x.shape}")
        cache = []
        for idx, k in enumerate(self.kernels):
            w = self.params[f"w{idx}"]
            if x.shape[-1] != w.shape[2]:
                raise ValueError(f"layer {idx} expects {w.shape[2]} channels, got {x.shape[-1]}")
            cols = _im2col(x, k)
            out = cols @ w.reshape(-1, w.shape[-1]) + self.params[f"b{idx}"]
            out = out.reshape(*x.shape[:3], w.shape[-1])
            last = idx == self.n_layers - 1
            act = out if last or not self.relu else np.maximum(out, 0.0)
            cache.append((cols, x.shape, out if not last else None))
            x = act
        self._cache = cache
        return x

    def backward(self, dlogits: np.ndarray) -> dict[str, np.ndarray]:
        """Parameter gradients given d(loss)/d(logits) for the last forward call."""
        if self._cache is None:
            raise RuntimeError("backward called before forward")
        grads: dict[str, np.ndarray] = {}
        d = np.asarray(dlogits, dtype=np.float64)
        for idx in reversed(range(self.n_layers)):
            cols, in_shape, pre = self._cache[idx]
            if pre is not None and self.relu:
                d = d * (pre > 0)
            w = self.params[f"w{idx}"]
            dflat = d.reshape(-1, w.shape[-1])
            if dflat.shape[0] != cols.shape[0]:
                raise ValueError("upstream gradient shape does not match the forward pass")
            grads[f"w{idx}"] = (dflat.T @ cols).T.reshape(w.shape)
            grads[f"b{idx}"] = dflat.sum(axis=0)
            if idx > 0:
                d = _input_grad(dflat.reshape(*in_shape[:3], -1), w)
        return grads

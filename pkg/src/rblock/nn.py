"""Minimal float64 NCHW layer zoo with hand-written backward passes.

Layers are stateless between calls except for parameters and their gradient
accumulators: forward returns a cache, backward takes that cache, so the
same parameters can serve several concurrent forward passes (the two-pass
training loop relies on this).
"""

from __future__ import annotations

import hashlib

import numpy as np

from . import kernels
from .masks import apply_mask, apply_mask_backward
from .rng import RngStream


def relu_forward(x: np.ndarray):
    out = np.maximum(x, 0.0)
    return out, x


def relu_backward(grad_out: np.ndarray, cache) -> np.ndarray:
    return grad_out * (cache > 0)


class Layer:
    param_names: tuple = ()

    def forward(self, x):
        raise NotImplementedError

    def backward(self, grad_out, cache):
        raise NotImplementedError

    def zero_grad(self):
        for name in self.param_names:
            getattr(self, "g_" + name).fill(0.0)


class Conv2D(Layer):
    param_names = ("w", "b")

    def __init__(self, in_channels, out_channels, ksize, stride=1, padding=1,
                 rng: RngStream | None = None):
        self.in_channels = in_channels
        self.stride = stride
        self.padding = padding
        fan_in = in_channels * ksize * ksize
        scale = np.sqrt(2.0 / fan_in)
        if rng is None:
            self.w = np.zeros((out_channels, in_channels, ksize, ksize))
        else:
            self.w = rng.normal(0.0, scale, (out_channels, in_channels, ksize, ksize))
        self.b = np.zeros(out_channels)
        self.g_w = np.zeros_like(self.w)
        self.g_b = np.zeros_like(self.b)

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ValueError(
                f"Conv2D expects input (B, {self.in_channels}, H, W), got {x.shape}"
            )
        k = self.w.shape[2]
        if k > x.shape[2] + 2 * self.padding or k > x.shape[3] + 2 * self.padding:
            raise ValueError(
                f"kernel {self.w.shape} larger than padded input {x.shape}"
            )
        x = np.ascontiguousarray(x)
        out = kernels.conv2d_forward(x, self.w, self.b, self.stride, self.padding)
        return out, x

    def backward(self, grad_out, cache):
        grad_out = np.ascontiguousarray(grad_out)
        gx, gw, gb = kernels.conv2d_backward(cache, self.w, grad_out,
                                             self.stride, self.padding)
        self.g_w += gw
        self.g_b += gb
        return gx


class Dense(Layer):
    param_names = ("w", "b")

    def __init__(self, in_features, out_features, rng: RngStream | None = None):
        self.in_features = in_features
        scale = np.sqrt(2.0 / in_features)
        if rng is None:
            self.w = np.zeros((out_features, in_features))
        else:
            self.w = rng.normal(0.0, scale, (out_features, in_features))
        self.b = np.zeros(out_features)
        self.g_w = np.zeros_like(self.w)
        self.g_b = np.zeros_like(self.b)

    def forward(self, x):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ValueError(
                f"Dense expects input (B, {self.in_features}), got {x.shape}"
            )
        return x @ self.w.T + self.b, x

    def backward(self, grad_out, cache):
        self.g_w += grad_out.T @ cache
        self.g_b += grad_out.sum(axis=0)
        return grad_out @ self.w


class ReLU(Layer):
    def forward(self, x):
        return relu_forward(x)

    def backward(self, grad_out, cache):
        return relu_backward(grad_out, cache)


class MaxPool2(Layer):
    def forward(self, x):
        if x.shape[2] % 2 or x.shape[3] % 2:
            raise ValueError(f"MaxPool2 requires even spatial dims, got {x.shape}")
        x = np.ascontiguousarray(x)
        out, argmax = kernels.maxpool2_forward(x)
        return out, (argmax, x.shape)

    def backward(self, grad_out, cache):
        argmax, in_shape = cache
        return kernels.maxpool2_backward(np.ascontiguousarray(grad_out), argmax, in_shape)


class Flatten(Layer):
    def forward(self, x):
        return x.reshape(x.shape[0], -1), x.shape

    def backward(self, grad_out, cache):
        return grad_out.reshape(cache)


class MaskSlot(Layer):
    """Placeholder where a keep-mask may be applied; identity when no mask
    is supplied (evaluation always runs it as identity)."""

    def forward(self, x, keep=None):
        if keep is None:
            return x, None
        return apply_mask(x, keep), keep

    def backward(self, grad_out, cache):
        if cache is None:
            return grad_out
        return apply_mask_backward(grad_out, cache)


class Model:
    """An ordered layer stack with explicit caches per forward pass."""

    def __init__(self, layers):
        self.layers = list(layers)

    @property
    def mask_slots(self):
        return [i for i, l in enumerate(self.layers) if isinstance(l, MaskSlot)]

    def forward(self, x, masks: dict | None = None):
        """masks maps layer index -> keep array; returns (output, caches)."""
        caches = []
        for i, layer in enumerate(self.layers):
            if isinstance(layer, MaskSlot):
                keep = masks.get(i) if masks else None
                x, cache = layer.forward(x, keep)
            else:
                x, cache = layer.forward(x)
            caches.append(cache)
        return x, caches

    def backward(self, grad, caches):
        for layer, cache in zip(reversed(self.layers), reversed(caches)):
            grad = layer.backward(grad, cache)
        return grad

    def zero_grad(self):
        for layer in self.layers:
            layer.zero_grad()

    def parameters(self):
        return [(layer, name) for layer in self.layers for name in layer.param_names]

    def param_arrays(self):
        return [getattr(layer, name) for layer, name in self.parameters()]

    def grad_arrays(self):
        return [getattr(layer, "g_" + name) for layer, name in self.parameters()]

    def load_param_values(self, values):
        arrays = self.param_arrays()
        if len(values) != len(arrays):
            raise ValueError(f"expected {len(arrays)} parameter tensors, got {len(values)}")
        for arr, val in zip(arrays, values):
            flat = np.asarray(val, dtype=np.float64).ravel()
            if flat.size != arr.size:
                raise ValueError(f"parameter size mismatch: {flat.size} vs {arr.size}")
            arr[...] = flat.reshape(arr.shape)

    def checksum(self) -> str:
        h = hashlib.sha256()
        for arr in self.param_arrays():
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()

    def slot_shapes(self, input_shape) -> dict:
        """Map mask-slot index -> (m, n, c) by tracing a zero batch."""
        x = np.zeros((1, *input_shape))
        shapes = {}
        for i, layer in enumerate(self.layers):
            if isinstance(layer, MaskSlot):
                shapes[i] = (x.shape[2], x.shape[3], x.shape[1])
                continue
            x, _ = layer.forward(x)
        return shapes


def build_default_model(in_channels: int, height: int, width: int,
                        num_classes: int, rng: RngStream) -> Model:
    """The desk-scale CNN: three conv blocks with two mask slots, then a
    dense classifier.  Assumes height and width divisible by 4."""
    feat = 64 * (height // 4) * (width // 4)
    return Model([
        Conv2D(in_channels, 16, 3, padding=1, rng=rng.substream(1)),
        ReLU(),
        MaskSlot(),
        Conv2D(16, 32, 3, padding=1, rng=rng.substream(2)),
        ReLU(),
        MaxPool2(),
        MaskSlot(),
        Conv2D(32, 64, 3, padding=1, rng=rng.substream(3)),
        ReLU(),
        MaxPool2(),
        Flatten(),
        Dense(feat, num_classes, rng=rng.substream(4)),
    ])

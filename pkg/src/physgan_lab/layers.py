"""Convolution and resampling operations plus parameterized layers.

`conv3d` treats the frames of a video slice as the depth axis; `conv2d` and the
nearest-neighbour upsample are expressed through the same machinery for the
sign-resolution generator and discriminator.
"""

import logging
from typing import Optional, Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import DimensionError
from .tensor import Function, Tape, Tensor

logger = logging.getLogger(__name__)

Triple = tuple[int, int, int]


def _triple(value: Union[int, Sequence[int]]) -> Triple:
    if isinstance(value, int):
        return (value, value, value)
    items = tuple(int(v) for v in value)
    if len(items) != 3:
        raise DimensionError(f"Expected 3 values, got {items}")
    return (items[0], items[1], items[2])


def conv3d_output_shape(extent: Sequence[int], kernel: Sequence[int], stride: Triple, padding: Triple) -> Triple:
    """floor((ext + 2*pad - k) / stride) + 1 along each spatial axis."""
    out = tuple((e + 2 * p - k) // s + 1 for e, k, s, p in zip(extent, kernel, stride, padding))
    return (out[0], out[1], out[2])


class Conv3d(Function):
    """Cross-correlation of (n, c, d, h, w) input with (c', c, kd, kh, kw) kernels."""

    def forward(  # type: ignore[override]
        self, x: np.ndarray, w: np.ndarray, b: np.ndarray, stride: Triple, padding: Triple
    ) -> np.ndarray:
        if x.ndim != 5 or w.ndim != 5:
            raise DimensionError(f"conv3d needs 5-d input and kernel, got {x.shape} and {w.shape}")
        if x.shape[1] != w.shape[1]:
            raise DimensionError(f"conv3d channel mismatch: input has {x.shape[1]}, kernel expects {w.shape[1]}")
        if b.shape != (w.shape[0],):
            raise DimensionError(f"conv3d bias shape {b.shape} does not match {w.shape[0]} output channels")
        kernel = w.shape[2:]
        for ext, k, p in zip(x.shape[2:], kernel, padding):
            if ext + 2 * p < k:
                raise DimensionError(f"conv3d input extents {x.shape[2:]} smaller than kernel {kernel} after padding")
        pd, ph, pw = padding
        xp = np.pad(x, ((0, 0), (0, 0), (pd, pd), (ph, ph), (pw, pw)))
        sd, sh, sw = stride
        od, oh, ow = conv3d_output_shape(x.shape[2:], kernel, stride, padding)
        windows = sliding_window_view(xp, kernel, axis=(2, 3, 4))[:, :, ::sd, ::sh, ::sw][:, :, :od, :oh, :ow]
        out = np.tensordot(windows, w, axes=([1, 5, 6, 7], [1, 2, 3, 4]))
        self.x_shape = x.shape
        self.xp_shape = xp.shape
        self.windows = windows
        self.w = w
        self.stride = stride
        self.padding = padding
        self.out_extent = (od, oh, ow)
        return np.ascontiguousarray(out.transpose(0, 4, 1, 2, 3)) + b[None, :, None, None, None]

    def backward(self, grad: np.ndarray) -> tuple[Optional[np.ndarray], ...]:
        gw = np.tensordot(grad, self.windows, axes=([0, 2, 3, 4], [0, 2, 3, 4]))
        gb = grad.sum(axis=(0, 2, 3, 4))
        gxp = np.zeros(self.xp_shape)
        sd, sh, sw = self.stride
        od, oh, ow = self.out_extent
        kd, kh, kw = self.w.shape[2:]
        for i in range(kd):
            for j in range(kh):
                for k in range(kw):
                    part = np.tensordot(grad, self.w[:, :, i, j, k], axes=([1], [0])).transpose(0, 4, 1, 2, 3)
                    gxp[:, :, i : i + sd * od : sd, j : j + sh * oh : sh, k : k + sw * ow : sw] += part
        pd, ph, pw = self.padding
        d, h, w = self.x_shape[2:]
        gx = gxp[:, :, pd : pd + d, ph : ph + h, pw : pw + w]
        return gx, gw, gb


class UpsampleNearest2d(Function):
    """Repeat every pixel of (n, c, h, w) input `factor` times along both axes."""

    def forward(self, x: np.ndarray, factor: int) -> np.ndarray:  # type: ignore[override]
        if x.ndim != 4:
            raise DimensionError(f"upsample needs 4-d input, got {x.shape}")
        self.factor = factor
        self.x_shape = x.shape
        return np.repeat(np.repeat(x, factor, axis=2), factor, axis=3)

    def backward(self, grad: np.ndarray) -> tuple[Optional[np.ndarray], ...]:
        n, c, h, w = self.x_shape
        f = self.factor
        return (grad.reshape(n, c, h, f, w, f).sum(axis=(3, 5)),)


def conv3d(
    x: Tensor,
    kernel: Tensor,
    bias: Optional[Tensor] = None,
    stride: Union[int, Sequence[int]] = 1,
    padding: Union[int, Sequence[int]] = 0,
) -> Tensor:
    """3-d convolution; output extents follow floor((ext + 2*pad - k)/stride) + 1."""
    if bias is None:
        bias = Tensor._wrap(np.zeros(kernel.shape[0]))
    return Conv3d.apply(x, kernel, bias, stride=_triple(stride), padding=_triple(padding))


def conv2d(x: Tensor, kernel: Tensor, bias: Optional[Tensor] = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-d convolution as a depth-one 3-d convolution."""
    if x.ndim != 4 or kernel.ndim != 4:
        raise DimensionError(f"conv2d needs 4-d input and kernel, got {x.shape} and {kernel.shape}")
    n, c, h, w = x.shape
    o, _, kh, kw = kernel.shape
    out = conv3d(
        x.reshape(n, c, 1, h, w),
        kernel.reshape(o, kernel.shape[1], 1, kh, kw),
        bias,
        stride=(1, stride, stride),
        padding=(0, padding, padding),
    )
    return out.reshape(out.shape[0], out.shape[1], out.shape[3], out.shape[4])


def upsample_nearest(x: Tensor, factor: int = 2) -> Tensor:
    return UpsampleNearest2d.apply(x, factor=factor)


class Layer:
    """Named parameter tensors plus a forward rule.

    `bind(tape)` yields the tensors a forward pass should use: tape-bound views
    when the layer is being trained on `tape`, the raw (constant) tensors
    otherwise.
    """

    def __init__(self) -> None:
        self.params: dict[str, Tensor] = {}

    def bind(self, tape: Optional[Tape]) -> dict[str, Tensor]:
        if tape is None:
            return self.params
        return {name: tape.watch(p) for name, p in self.params.items()}

    def __call__(self, x: Tensor, tape: Optional[Tape] = None) -> Tensor:
        return self.forward(x, self.bind(tape))

    def forward(self, x: Tensor, params: dict[str, Tensor]) -> Tensor:
        raise NotImplementedError


def _he_normal(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> Tensor:
    return Tensor(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape), requires_grad=True)


class Conv3dLayer(Layer):
    def __init__(
        self,
        in_channels: int,
        out_channels: int,
        kernel: Sequence[int],
        stride: Sequence[int],
        padding: Sequence[int],
        rng: np.random.Generator,
    ) -> None:
        super().__init__()
        self.kernel = _triple(kernel)
        self.stride = _triple(stride)
        self.padding = _triple(padding)
        fan_in = in_channels * int(np.prod(self.kernel))
        self.params["weight"] = _he_normal(rng, (out_channels, in_channels) + self.kernel, fan_in)
        self.params["bias"] = Tensor(np.zeros(out_channels), requires_grad=True)

    def forward(self, x: Tensor, params: dict[str, Tensor]) -> Tensor:
        return conv3d(x, params["weight"], params["bias"], self.stride, self.padding)


class Conv2dLayer(Layer):
    def __init__(
        self, in_channels: int, out_channels: int, kernel: int, stride: int, padding: int, rng: np.random.Generator
    ) -> None:
        super().__init__()
        self.stride = stride
        self.padding = padding
        fan_in = in_channels * kernel * kernel
        self.params["weight"] = _he_normal(rng, (out_channels, in_channels, kernel, kernel), fan_in)
        self.params["bias"] = Tensor(np.zeros(out_channels), requires_grad=True)

    def forward(self, x: Tensor, params: dict[str, Tensor]) -> Tensor:
        return conv2d(x, params["weight"], params["bias"], self.stride, self.padding)


class DenseLayer(Layer):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator, gain: float = 2.0) -> None:
        super().__init__()
        self.in_features = in_features
        self.params["weight"] = Tensor(
            rng.normal(0.0, np.sqrt(gain / in_features), size=(in_features, out_features)), requires_grad=True
        )
        self.params["bias"] = Tensor(np.zeros(out_features), requires_grad=True)

    def forward(self, x: Tensor, params: dict[str, Tensor]) -> Tensor:
        if x.shape[-1] != self.in_features:
            raise DimensionError(f"Dense layer expects {self.in_features} features, got {x.shape[-1]}")
        return x @ params["weight"] + params["bias"]

"""Layer vocabulary for the restoration networks: convolutions, spectral
normalization with persistent power-iteration state, and simple containers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ArgumentError
from .tensor import Parameter, Tensor, conv2d, leaky_relu, relu, sigmoid, upsample_nearest


def kaiming(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, dtype=np.float32) -> np.ndarray:
    """Fan-in scaled normal init."""
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


@dataclass
class PowerIterState:
    """Estimate of the top left singular vector of a flattened weight."""

    u: np.ndarray
    iterations: int = 0


def spectral_normalize(
    weight: np.ndarray, state: PowerIterState, iterations: int = 1
) -> np.ndarray:
    """Divide ``weight`` by its estimated top singular value.

    The weight is flattened to (out_channels, rest).  ``state.u`` is updated
    in place so successive training steps refine the estimate.  A zero weight
    is returned unchanged (sigma floored at 1e-12).
    """
    if weight.ndim == 4:
        # kernels are (kh, kw, cin, cout); flatten to (cout, kh*kw*cin)
        mat = weight.transpose(3, 0, 1, 2).reshape(weight.shape[3], -1)
    else:
        mat = weight.reshape(weight.shape[0], -1)
    u = state.u
    v = None
    for _ in range(iterations):
        v = mat.T @ u
        v = v / max(float(np.linalg.norm(v)), 1e-12)
        u = mat @ v
        u = u / max(float(np.linalg.norm(u)), 1e-12)
    state.u = u
    state.iterations += iterations
    if v is None:
        v = mat.T @ u
        v = v / max(float(np.linalg.norm(v)), 1e-12)
    sigma = float(u @ (mat @ v))
    if sigma < 1e-12:
        return weight
    return weight / sigma


class Conv:
    """k x k convolution with bias, stride 1 or 2, 'same' padding for k=3."""

    def __init__(
        self,
        cin: int,
        cout: int,
        k: int = 3,
        stride: int = 1,
        rng: np.random.Generator | None = None,
        name: str = "conv",
        dtype=np.float32,
        zero_init: bool = False,
    ):
        rng = rng or np.random.default_rng(0)
        fan_in = cin * k * k
        w = np.zeros((k, k, cin, cout), dtype) if zero_init else kaiming(rng, (k, k, cin, cout), fan_in, dtype)
        self.w = Parameter(w, f"{name}.w")
        self.b = Parameter(np.zeros(cout, dtype), f"{name}.b")
        self.stride = stride
        self.padding = (k - 1) // 2

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.w, stride=self.stride, padding=self.padding) + self.b

    def params(self) -> list[Parameter]:
        return [self.w, self.b]


class SpectralConv(Conv):
    """Convolution whose weight is spectrally normalized on every forward.

    During training (``update_state=True``) one power iteration refines the
    persistent ``u`` estimate; sigma enters the graph as u^T W v with u, v
    held constant, so gradients flow through both W and 1/sigma exactly.
    """

    def __init__(self, *args, seed: int = 0, **kwargs):
        super().__init__(*args, **kwargs)
        cout = self.w.data.shape[3]
        u = np.random.default_rng(seed).standard_normal(cout).astype(self.w.data.dtype)
        self.state = PowerIterState(u / np.linalg.norm(u))

    def normalized_weight(self, update_state: bool = True) -> Tensor:
        from .tensor import div, reshape, transpose, tsum

        w = self.w
        kh, kw, cin, cout = w.data.shape
        mat_data = w.data.transpose(3, 0, 1, 2).reshape(cout, -1)
        u = self.state.u
        if update_state:
            v = mat_data.T @ u
            v = v / max(float(np.linalg.norm(v)), 1e-12)
            u = mat_data @ v
            u = u / max(float(np.linalg.norm(u)), 1e-12)
            self.state.u = u
            self.state.iterations += 1
        v = mat_data.T @ u
        v = v / max(float(np.linalg.norm(v)), 1e-12)
        sigma_data = float(u @ (mat_data @ v))
        if sigma_data < 1e-12:
            return w
        mat = reshape(transpose(w, (3, 0, 1, 2)), (cout, kh * kw * cin))
        sigma = tsum(mul_const_vec(mat, u, v))
        return transpose(reshape(div(mat, sigma), (cout, kh, kw, cin)), (1, 2, 3, 0))

    def __call__(self, x: Tensor, update_state: bool = True) -> Tensor:
        wn = self.normalized_weight(update_state=update_state)
        return conv2d(x, wn, stride=self.stride, padding=self.padding) + self.b


def mul_const_vec(mat: Tensor, u: np.ndarray, v: np.ndarray) -> Tensor:
    """u^T M v as a graph node with u, v constant: sum(M * outer(u, v))."""
    from .tensor import mul

    return mul(mat, Tensor(np.outer(u, v).astype(mat.data.dtype)))


class Activation:
    def __init__(self, kind: str):
        self.kind = kind

    def __call__(self, x: Tensor) -> Tensor:
        if self.kind == "relu":
            return relu(x)
        if self.kind == "leaky_relu":
            return leaky_relu(x, 0.2)
        if self.kind == "sigmoid":
            return sigmoid(x)
        raise ArgumentError(f"unknown activation {self.kind!r}")

    def params(self) -> list[Parameter]:
        return []


class Upsample:
    def __init__(self, factor: int):
        self.factor = factor

    def __call__(self, x: Tensor) -> Tensor:
        return upsample_nearest(x, self.factor)

    def params(self) -> list[Parameter]:
        return []


class Sequential:
    """Ordered layer list; shape errors are reported with the layer index."""

    def __init__(self, layers: list):
        self.layers = layers

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            try:
                x = layer(x)
            except (ArgumentError, ValueError) as exc:
                raise ArgumentError(f"layer {i} ({type(layer).__name__}): {exc}") from exc
        return x

    def params(self) -> list[Parameter]:
        out: list[Parameter] = []
        for layer in self.layers:
            out.extend(layer.params())
        return out

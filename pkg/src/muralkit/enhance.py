"""Stage one: progressive illumination estimation with self-calibration.

A single residual estimator is applied for every round (the rounds share one
parameter set), and a calibration network corrects each round's input so the
cascade converges to a consistent illumination.  Training is unsupervised:
a fidelity term pulls each round's illumination toward its corrected input
and an edge-aware smoothness term regularizes it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .diffcore import Conv, Parameter, Sequential, Tensor
from .errors import StateError
from .imageio import _RGB_TO_YUV

_YUV_T = _RGB_TO_YUV.T


@dataclass
class EnhanceHyper:
    rounds: int = 6
    alpha: float = 1.5
    beta: float = 1.0
    sigma: float = 0.1
    eps_div: float = 1e-4

    def __post_init__(self):
        assert self.rounds >= 1 and self.alpha > 0 and self.beta > 0 and self.sigma > 0


class ResidualEstimator:
    """3 -> hidden -> hidden -> 3 stack of 3x3 convolutions with ReLU.

    The final layer starts at zero so an untrained cascade is the identity
    (x = v exactly); otherwise random residuals compound through the
    reflectance division and the early loss explodes.
    """

    def __init__(
        self,
        hidden: int = 16,
        seed: int = 0,
        prefix: str = "enh.h",
        dtype=np.float32,
        zero_last: bool = True,
    ):
        rng = np.random.default_rng(seed)
        self.net = Sequential(
            [
                Conv(3, hidden, rng=rng, name=f"{prefix}.c1", dtype=dtype),
                dc.Activation("relu"),
                Conv(hidden, hidden, rng=rng, name=f"{prefix}.c2", dtype=dtype),
                dc.Activation("relu"),
                Conv(hidden, 3, rng=rng, name=f"{prefix}.c3", dtype=dtype, zero_init=zero_last),
            ]
        )

    def __call__(self, x: Tensor) -> Tensor:
        return self.net(x)

    def params(self) -> list[Parameter]:
        return self.net.params()


@dataclass
class EnhanceTrace:
    """Per-round intermediates of the cascade.

    Index t of ``xs`` holds the round-(t+1) illumination; ``ss[0]`` is the
    forced zero calibration of round zero and ``vs[0]`` is the observation.
    """

    y: Tensor
    vs: list[Tensor] = field(default_factory=list)  # v^0 .. v^{T-1}
    us: list[Tensor] = field(default_factory=list)  # u^0 .. u^{T-1}
    xs: list[Tensor] = field(default_factory=list)  # x^1 .. x^T
    ss: list[Tensor] = field(default_factory=list)  # s^0 .. s^{T-1}
    zs: list[Tensor] = field(default_factory=list)  # z^1 .. z^{T-1}

    @property
    def rounds(self) -> int:
        return len(self.xs)

    def validate(self, eps_div: float) -> None:
        if not (len(self.vs) == len(self.us) == len(self.xs) == len(self.ss)):
            raise StateError("incomplete enhancement trace")
        if not np.array_equal(self.vs[0].data, self.y.data):
            raise StateError("trace must start from the observation (v^0 == y)")
        if np.any(self.ss[0].data != 0):
            raise StateError("round-zero calibration must be zero (s^0 == 0)")
        for t in range(self.rounds):
            expect = np.maximum(self.vs[t].data + self.us[t].data, eps_div)
            if not np.allclose(self.xs[t].data, expect):
                raise StateError(f"x^{t + 1} != v^{t} + u^{t}")


def enhance_round(v: Tensor, h_net: ResidualEstimator, eps_div: float) -> tuple[Tensor, Tensor]:
    """One augmentation round: residual u and floored illumination v + u."""
    u = h_net(v)
    x = dc.maximum(v + u, eps_div)
    return u, x


def calibrate_round(
    x: Tensor, y: Tensor, k_net: ResidualEstimator, eps_div: float
) -> tuple[Tensor, Tensor, Tensor]:
    """Self-calibration: reflectance estimate z, correction s, next input v."""
    z = dc.div(y, dc.maximum(x, eps_div))
    s = k_net(z)
    v = y + s
    return z, v, s


def run_enhancement(
    y: np.ndarray | Tensor,
    h_net: ResidualEstimator,
    k_net: ResidualEstimator,
    hyper: EnhanceHyper,
) -> tuple[np.ndarray, EnhanceTrace]:
    """Run the full cascade on a batched NHWC observation.

    Returns the clamped reflectance y / x^T and the complete trace; when
    called inside a graph context the trace tensors carry gradients.
    """
    y_t = y if isinstance(y, Tensor) else Tensor(np.asarray(y))
    trace = EnhanceTrace(y=y_t)
    v = y_t
    s = Tensor(np.zeros_like(y_t.data))
    for t in range(hyper.rounds):
        trace.vs.append(v)
        trace.ss.append(s)
        u, x = enhance_round(v, h_net, hyper.eps_div)
        trace.us.append(u)
        trace.xs.append(x)
        if t + 1 < hyper.rounds:
            z, v, s = calibrate_round(x, y_t, k_net, hyper.eps_div)
            trace.zs.append(z)
    enhanced = np.clip(y_t.data / np.maximum(trace.xs[-1].data, hyper.eps_div), 0.0, 1.0)
    return enhanced, trace


def _to_yuv(t: Tensor) -> Tensor:
    n, h, w, c = t.data.shape
    flat = dc.reshape(t, (n * h * w, c))
    return dc.reshape(dc.matmul(flat, Tensor(_YUV_T.astype(t.data.dtype))), (n, h, w, c))


def enhancement_loss(trace: EnhanceTrace, hyper: EnhanceHyper) -> Tensor:
    """Unsupervised cascade loss: fidelity plus edge-aware smoothness.

    Fidelity is the per-element mean of (x^t - (y + s^{t-1}))^2 summed over
    rounds.  Smoothness sums, over every ordered 4-neighbor pair, a Gaussian
    affinity weight (computed from the YUV channels of y + s^{t-1}) times the
    channel-summed absolute illumination difference, normalized by pixel
    count.  Both terms average over the batch.
    """
    if trace.rounds < 1 or len(trace.vs) != trace.rounds:
        raise StateError("enhancement trace is incomplete")
    n, h, w, _ = trace.y.data.shape
    inv_2sig2 = 1.0 / (2.0 * hyper.sigma**2)
    fidelity = None
    smooth = None
    for t in range(trace.rounds):
        x = trace.xs[t]
        v_prev = trace.vs[t]  # y + s^{t-1}
        diff = x - v_prev
        fid_t = dc.tmean(dc.square(diff))
        fidelity = fid_t if fidelity is None else fidelity + fid_t

        wimg = _to_yuv(v_prev)
        for axis in (1, 2):
            lo = [slice(None)] * 4
            hi = [slice(None)] * 4
            lo[axis] = slice(0, -1)
            hi[axis] = slice(1, None)
            dxt = dc.crop(x, tuple(hi)) - dc.crop(x, tuple(lo))
            dwt = dc.crop(wimg, tuple(hi)) - dc.crop(wimg, tuple(lo))
            omega = dc.exp(-dc.tsum(dc.square(dwt), axis=3, keepdims=True) * inv_2sig2)
            pair = dc.tsum(omega * dc.tsum(dc.absolute(dxt), axis=3, keepdims=True))
            # ordered pairs: each undirected edge is counted for both endpoints
            term = pair * (2.0 / float(n * h * w))
            smooth = term if smooth is None else smooth + term
    return hyper.alpha * fidelity + hyper.beta * smooth

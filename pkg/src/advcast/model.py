"""Conv/deconv motion estimator and the autoregressive forecaster built on it.

Layout for ``encoder_channels = [c1, c2, c3]`` and ``k`` input frames::

    x (k)  -> enc1 (c1, /2) -> enc2 (c2, /4) -> enc3 (c3, /8)
    dec3: up(enc3) -> c2, concat enc2
    dec2: up(dec3) -> c1, concat enc1
    dec1: up(dec2) -> c1, concat x
    head: 1x1 conv -> 2 channels (u, v), no activation

Every down/up block is conv -> batch norm -> leaky ReLU.  The head starts at
zero, so an untrained model predicts no motion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import BatchNormState, Tensor
from .exceptions import CheckpointFormatError, InvalidConfig, ShapeMismatch
from .warp import WarpParams, warp, warp_forward

STRIDE = 2


@dataclass(frozen=True)
class ModelConfig:
    k_input_frames: int = 4
    encoder_channels: tuple[int, ...] = (32, 64, 128)
    kernel_size: int = 3
    leaky_slope: float = 0.1
    bn_momentum: float = 0.1
    warp: WarpParams = field(default_factory=WarpParams)

    def __post_init__(self) -> None:
        object.__setattr__(self, "encoder_channels", tuple(int(c) for c in self.encoder_channels))
        if self.k_input_frames < 1:
            raise InvalidConfig("k_input_frames must be >= 1")
        if not self.encoder_channels or any(c < 1 for c in self.encoder_channels):
            raise InvalidConfig("encoder_channels must be a non-empty list of positive ints")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise InvalidConfig("kernel_size must be odd and positive")
        if not 0 <= self.leaky_slope < 1:
            raise InvalidConfig("leaky_slope must lie in [0, 1)")
        if not 0 < self.bn_momentum <= 1:
            raise InvalidConfig("bn_momentum must lie in (0, 1]")
        if not isinstance(self.warp, WarpParams):
            raise InvalidConfig("warp must be a WarpParams")

    def to_dict(self) -> dict:
        w = self.warp
        return {
            "k_input_frames": self.k_input_frames,
            "encoder_channels": list(self.encoder_channels),
            "kernel_size": self.kernel_size,
            "leaky_slope": self.leaky_slope,
            "bn_momentum": self.bn_momentum,
            "warp": {"D": w.D, "dt": w.dt, "truncation_radius": w.truncation_radius,
                     "renormalize": w.renormalize, "boundary": w.boundary.value},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if "warp" in d and not isinstance(d["warp"], WarpParams):
            d["warp"] = WarpParams(**d["warp"])
        try:
            return cls(**d)
        except TypeError as exc:
            raise InvalidConfig(str(exc)) from exc


def layer_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Name -> shape of every trainable parameter, in checkpoint order."""
    k, ks = cfg.kernel_size, cfg.k_input_frames
    ch = cfg.encoder_channels
    shapes: dict[str, tuple[int, ...]] = {}

    def block(name, w_shape, cout):
        shapes[f"{name}.weight"] = w_shape
        shapes[f"{name}.bias"] = (cout,)
        shapes[f"{name}.gamma"] = (cout,)
        shapes[f"{name}.beta"] = (cout,)

    cin = ks
    for i, c in enumerate(ch):
        block(f"enc{i + 1}", (c, cin, k, k), c)
        cin = c
    # decoder: from the bottleneck back up, mirroring channels
    skips = [ks] + list(ch[:-1])  # channels of the tensor concatenated at each level
    outs = [ch[0]] + list(ch[:-1])
    for level in range(len(ch), 0, -1):
        cout = outs[level - 1]
        block(f"dec{level}", (cin, cout, k, k), cout)
        cin = cout + skips[level - 1]
    shapes["head.weight"] = (2, cin, 1, 1)
    shapes["head.bias"] = (2,)
    return shapes


def parameter_count(cfg: ModelConfig) -> int:
    return sum(math.prod(s) for s in layer_shapes(cfg).values())


class Forecaster:
    """Motion estimator parameters plus batch-norm state and a train/eval flag."""

    def __init__(self, config: ModelConfig, params: dict[str, Tensor], bn: dict[str, BatchNormState]):
        self.config = config
        self.params = params
        self.bn = bn
        self.training = False

    def train(self) -> "Forecaster":
        self.training = True
        return self

    def eval(self) -> "Forecaster":
        self.training = False
        return self

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {name: p.data for name, p in self.params.items()}
        for name, st in self.bn.items():
            out[f"{name}.running_mean"] = st.running_mean
            out[f"{name}.running_var"] = st.running_var
        return out

    # ------------------------------------------------------------- forward
    def _block(self, name, x, conv, **kw) -> Tensor:
        p = self.params
        y = conv(x, p[f"{name}.weight"], p[f"{name}.bias"], **kw)
        y = ad.batch_norm(y, p[f"{name}.gamma"], p[f"{name}.beta"], self.bn[name], train=self.training)
        return ad.leaky_relu(y, self.config.leaky_slope)

    def motion(self, frames) -> Tensor:
        """Differentiable motion field (N, 2, H, W) from frames (N, k, H, W)."""
        x = ad.as_tensor(frames)
        cfg = self.config
        if x.ndim != 4 or x.shape[1] != cfg.k_input_frames:
            raise ShapeMismatch(f"expected (N, {cfg.k_input_frames}, H, W) frames, got {x.shape}")
        pad = cfg.kernel_size // 2
        levels = [x]
        h = x
        for i in range(len(cfg.encoder_channels)):
            if min(h.shape[2:]) < 2:
                raise ShapeMismatch(f"input {x.shape[2:]} too small for {len(cfg.encoder_channels)} levels")
            h = self._block(f"enc{i + 1}", h, ad.conv2d, stride=STRIDE, padding=pad)
            levels.append(h)
        for level in range(len(cfg.encoder_channels), 0, -1):
            skip = levels[level - 1]
            out_pad = (skip.shape[2] - (STRIDE * h.shape[2] - 1), skip.shape[3] - (STRIDE * h.shape[3] - 1))
            h = self._block(f"dec{level}", h, ad.conv_transpose2d, stride=STRIDE, padding=pad, output_padding=out_pad)
            h = ad.concat([h, skip], axis=1)
        return ad.conv2d(h, self.params["head.weight"], self.params["head.bias"])

    def predict_next(self, frames) -> tuple[Tensor, Tensor]:
        """(next frame, motion) for frames (N, k, H, W); differentiable."""
        x = ad.as_tensor(frames)
        w_hat = self.motion(x)
        last = ad.as_tensor(x.data[:, -1])
        return warp(last, w_hat, self.config.warp), w_hat


def _kaiming_uniform(rng: np.random.Generator, shape, fan_in: int, slope: float) -> np.ndarray:
    gain = math.sqrt(2.0 / (1.0 + slope * slope))
    bound = gain * math.sqrt(3.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


def build(config: ModelConfig = ModelConfig(), seed: int = 0, dtype=np.float32) -> Forecaster:
    if not isinstance(config, ModelConfig):
        raise InvalidConfig("config must be a ModelConfig")
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}
    bn: dict[str, BatchNormState] = {}
    for name, shape in layer_shapes(config).items():
        block, kind = name.split(".")
        if kind == "weight" and block != "head":
            # conv: (out, in, k, k); transposed conv: (in, out, k, k) and fan-in is in*k*k/stride^2
            fan_in = shape[1] * shape[2] * shape[3] if block.startswith("enc") else shape[0] * shape[2] * shape[3] // (STRIDE * STRIDE)
            arr = _kaiming_uniform(rng, shape, max(fan_in, 1), config.leaky_slope)
        elif kind == "gamma":
            arr = np.ones(shape)
        else:
            arr = np.zeros(shape)
        params[name] = Tensor(arr.astype(dtype), requires_grad=True, name=name)
        if kind == "gamma":
            bn[block] = BatchNormState.fresh(shape[0], dtype=dtype, momentum=config.bn_momentum)
    return Forecaster(config, params, bn)


def _as_window(m: Forecaster, frames) -> tuple[np.ndarray, bool]:
    arr = np.asarray(frames)
    k = m.config.k_input_frames
    if arr.ndim == 3:
        arr, batched = arr[None], False
    elif arr.ndim == 4:
        batched = True
    else:
        raise ShapeMismatch(f"frames must be (k, H, W) or (N, k, H, W), got {arr.shape}")
    if arr.shape[1] != k:
        raise ShapeMismatch(f"model expects {k} frames, got {arr.shape[1]}")
    dtype = next(iter(m.params.values())).dtype
    return arr.astype(dtype, copy=False), batched


def estimate_motion(m: Forecaster, frames) -> np.ndarray:
    """Motion (2, H, W) for frames (k, H, W); batched inputs give (N, 2, H, W)."""
    x, batched = _as_window(m, frames)
    w = m.motion(Tensor(x)).data
    return w if batched else w[0]


def forecast(m: Forecaster, history, horizon: int, return_motion: bool = False):
    """Roll the model forward ``horizon`` steps, feeding predictions back in."""
    if horizon < 1:
        raise InvalidConfig("horizon must be >= 1")
    x, batched = _as_window(m, history)
    window = list(np.moveaxis(x, 1, 0))
    frames, motions = [], []
    for _ in range(horizon):
        stack = np.stack(window[-m.config.k_input_frames:], axis=1)
        w = m.motion(Tensor(stack)).data
        nxt, _ = warp_forward(window[-1], w, m.config.warp)
        nxt = nxt.astype(x.dtype, copy=False)
        window.append(nxt)
        frames.append(nxt if batched else nxt[0])
        motions.append(w if batched else w[0])
    return (frames, motions) if return_motion else frames


# ---------------------------------------------------------------- checkpoints
def to_checkpoint(m: Forecaster, extra: dict | None = None) -> bytes:
    cfg = {"model": m.config.to_dict()}
    if extra:
        cfg.update(extra)
    return ad.encode_checkpoint(m.state_arrays(), cfg)


def from_checkpoint(data: bytes) -> tuple[Forecaster, dict]:
    tensors, cfg = ad.decode_checkpoint(data)
    if "model" not in cfg:
        raise CheckpointFormatError("checkpoint header has no model config")
    config = ModelConfig.from_dict(cfg["model"])
    m = build(config)
    expected = set(m.state_arrays())
    if set(tensors) != expected:
        missing = sorted(expected - set(tensors))
        extra = sorted(set(tensors) - expected)
        raise CheckpointFormatError(f"tensor names do not match the model (missing {missing}, unexpected {extra})")
    for name, p in m.params.items():
        if tensors[name].shape != p.shape:
            raise CheckpointFormatError(f"{name}: shape {tensors[name].shape}, expected {p.shape}")
        p.data = tensors[name].copy()
    for name, st in m.bn.items():
        st.running_mean = tensors[f"{name}.running_mean"].copy()
        st.running_var = tensors[f"{name}.running_var"].copy()
    return m, cfg


def save(m: Forecaster, path, extra: dict | None = None) -> None:
    Path(path).write_bytes(to_checkpoint(m, extra))


def load(path) -> tuple[Forecaster, dict]:
    return from_checkpoint(Path(path).read_bytes())


__all__ = [
    "Forecaster", "ModelConfig", "build", "estimate_motion", "forecast", "from_checkpoint",
    "layer_shapes", "load", "parameter_count", "save", "to_checkpoint",
]

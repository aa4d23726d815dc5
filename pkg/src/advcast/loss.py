"""Training objective: robust data term plus quadratic motion regularizers.

Everything is summed over pixels (and over any leading batch axes), so the
default coefficients are tuned for 64x64 grids.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from . import fields
from .autodiff import Tensor, as_tensor
from .autodiff import ops as ad
from .exceptions import InvalidConfig, ShapeMismatch
from .fields import Boundary


@dataclass(frozen=True)
class LossConfig:
    eps: float = 1e-3
    inv_alpha: float = 1.0
    lambda_div: float = 1.0
    lambda_magn: float = -0.03
    lambda_grad: float = 0.4
    boundary: Boundary = Boundary.REPLICATE

    def __post_init__(self) -> None:
        if not self.eps >= 0:
            raise InvalidConfig(f"eps must be >= 0, got {self.eps}")
        if not self.inv_alpha > 0:
            raise InvalidConfig(f"inv_alpha must be > 0, got {self.inv_alpha}")
        for name in ("lambda_div", "lambda_magn", "lambda_grad"):
            if not math.isfinite(getattr(self, name)):
                raise InvalidConfig(f"{name} must be finite")
        object.__setattr__(self, "boundary", fields.as_boundary(self.boundary))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["boundary"] = self.boundary.value
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "LossConfig":
        return cls(**d)

    def unregularized(self) -> "LossConfig":
        return LossConfig(self.eps, self.inv_alpha, 0.0, 0.0, 0.0, self.boundary)


@dataclass
class LossTerms:
    """The scalar loss node plus each term's value for logging."""

    total: Tensor
    charbonnier: float
    div: float
    magn: float
    grad: float


def charbonnier(pred, target, cfg: LossConfig = LossConfig()) -> Tensor:
    """``sum (|pred - target| + eps) ** inv_alpha``."""
    pred, target = as_tensor(pred), as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"prediction {pred.shape} and target {target.shape} differ")
    r = ad.absolute(ad.sub(pred, target))
    if cfg.eps:
        r = ad.add(r, cfg.eps)
    if cfg.inv_alpha != 1.0:
        r = ad.power(r, cfg.inv_alpha)
    return ad.reduce_sum(r)


def _terms(w_hat: Tensor, boundary) -> tuple[Tensor, Tensor, Tensor]:
    u = w_hat[..., 0, :, :]
    v = w_hat[..., 1, :, :]
    div = ad.reduce_sum(ad.square(fields.divergence(w_hat, boundary)))
    magn = ad.reduce_sum(ad.square(w_hat))
    smooth = None
    for comp in (u, v):
        for d in (fields.partial_x(comp, boundary), fields.partial_y(comp, boundary)):
            s = ad.reduce_sum(ad.square(d))
            smooth = s if smooth is None else ad.add(smooth, s)
    return div, magn, smooth


def _regularizer_parts(w_hat, cfg: LossConfig):
    w_hat = as_tensor(w_hat)
    if w_hat.ndim < 3 or w_hat.shape[-3] != 2:
        raise ShapeMismatch(f"motion must be (..., 2, H, W), got {w_hat.shape}")
    div, magn, smooth = _terms(w_hat, cfg.boundary)
    total = ad.add(ad.add(ad.scale(div, cfg.lambda_div), ad.scale(magn, cfg.lambda_magn)),
                   ad.scale(smooth, cfg.lambda_grad))
    return total, div, magn, smooth


def motion_regularizers(w_hat, cfg: LossConfig = LossConfig()) -> Tensor:
    return _regularizer_parts(w_hat, cfg)[0]


def total_loss(pred, target, w_hat, cfg: LossConfig = LossConfig()) -> Tensor:
    return loss_terms(pred, target, w_hat, cfg).total


def loss_terms(pred, target, w_hat, cfg: LossConfig = LossConfig()) -> LossTerms:
    data = charbonnier(pred, target, cfg)
    reg, div, magn, smooth = _regularizer_parts(w_hat, cfg)
    return LossTerms(
        ad.add(data, reg),
        float(data.data),
        cfg.lambda_div * float(div.data),
        cfg.lambda_magn * float(magn.data),
        cfg.lambda_grad * float(smooth.data),
    )


def regularizer_values(w_hat: np.ndarray, cfg: LossConfig = LossConfig()) -> dict[str, float]:
    """Unweighted div/magn/grad sums of a plain motion array."""
    _, div, magn, smooth = _regularizer_parts(Tensor(np.asarray(w_hat, dtype=np.float64)), cfg)
    return {"div": float(div.data), "magn": float(magn.data), "grad": float(smooth.data)}

import numpy as np
import pytest

from advcast import autodiff as ad
from advcast.exceptions import CheckpointFormatError, InvalidConfig, ShapeMismatch
from advcast.loss import LossConfig, total_loss
from advcast.model import (
    ModelConfig,
    build,
    estimate_motion,
    forecast,
    from_checkpoint,
    layer_shapes,
    parameter_count,
    to_checkpoint,
)
from advcast.simulator import make_initial_field
from advcast.warp import WarpParams, warp_forward

TINY = ModelConfig(encoder_channels=(3, 4))


def frames(n=4, size=64, seed=0):
    return np.stack([make_initial_field(seed + i)[:size, :size] for i in range(n)]).astype(np.float32)


def test_default_output_shape():
    m = build()
    w = estimate_motion(m, frames())
    assert w.shape == (2, 64, 64)


def test_same_seed_same_parameters():
    a, b = build(seed=3), build(seed=3)
    assert all(np.array_equal(a.params[k].data, b.params[k].data) for k in a.params)
    c = build(seed=4)
    assert not np.array_equal(a.params["enc1.weight"].data, c.params["enc1.weight"].data)


def test_parameter_count_closed_form():
    # conv weights c_out*c_in*9, plus bias/gamma/beta per block output channel
    enc = 32 * 4 * 9 + 64 * 32 * 9 + 128 * 64 * 9 + 3 * (32 + 64 + 128)
    dec = 128 * 64 * 9 + (64 + 64) * 32 * 9 + (32 + 32) * 32 * 9 + 3 * (64 + 32 + 32)
    head = 2 * (32 + 4) + 2
    assert parameter_count(ModelConfig()) == enc + dec + head == 223466


def test_layer_shapes_follow_the_skip_layout():
    s = layer_shapes(ModelConfig(k_input_frames=3, encoder_channels=(8, 16)))
    assert s["enc1.weight"] == (8, 3, 3, 3)
    assert s["dec2.weight"] == (16, 8, 3, 3)  # transposed conv: (in, out, k, k)
    assert s["dec1.weight"] == (16, 8, 3, 3)  # dec2 output (8) + enc1 skip (8)
    assert s["head.weight"] == (2, 8 + 3, 1, 1)


def test_untrained_head_gives_zero_motion():
    w = estimate_motion(build(seed=1), frames())
    assert np.array_equal(w, np.zeros_like(w))


def test_output_is_finite_for_wild_input(rng):
    m = build(TINY, seed=2)
    for p in m.params.values():
        p.data[...] = rng.standard_normal(p.shape)
    x = (rng.standard_normal((4, 16, 16)) * 100).astype(np.float32)
    assert np.all(np.isfinite(estimate_motion(m, x)))


@pytest.mark.parametrize("h,w", [(32, 48), (16, 16), (30, 22), (17, 21)])
def test_shape_invariance(h, w, rng):
    m = build(ModelConfig(encoder_channels=(4, 6, 8)), seed=0)
    m.params["head.bias"].data[:] = 1.0
    out = estimate_motion(m, rng.standard_normal((2, 4, h, w)))
    assert out.shape == (2, 2, h, w)


def test_horizon_one_is_single_warp():
    m = build(TINY)
    hist = frames(size=16)
    (pred,) = forecast(m, hist, 1)
    expected, _ = warp_forward(hist[-1], estimate_motion(m, hist), m.config.warp)
    assert np.array_equal(pred, expected.astype(np.float32))


def test_zero_motion_near_identity_kernel_is_persistence():
    m = build(ModelConfig(warp=WarpParams(D=0.05)))
    hist = frames()
    preds = forecast(m, hist, 3)
    for p in preds:
        assert np.abs(p - hist[-1]).max() < 0.05 * np.abs(hist[-1]).max() * len(preds)
    assert np.abs(preds[0] - hist[-1]).max() < 0.05 * np.abs(hist[-1]).max()


def test_autoregressive_prefix_consistency(rng):
    m = build(TINY, seed=5)
    m.params["head.weight"].data[...] = rng.standard_normal(m.params["head.weight"].shape) * 0.3
    hist = frames(size=16)
    long = forecast(m, hist, 5)
    short = forecast(m, hist, 2)
    assert all(np.array_equal(a, b) for a, b in zip(long, short))
    assert len(long) == 5


def test_gradient_reaches_first_conv(rng):
    m = build(TINY, seed=6).train()
    m.params["head.weight"].data[...] = 0.1
    x = rng.standard_normal((3, 4, 16, 16)).astype(np.float32)
    y = rng.standard_normal((3, 16, 16)).astype(np.float32)
    pred, w_hat = m.predict_next(x)
    total_loss(pred, y, w_hat).backward()
    assert np.abs(m.params["enc1.weight"].grad).max() > 0


def test_end_to_end_parameter_gradient(rng):
    cfg = ModelConfig(encoder_channels=(2, 3))
    m = build(cfg, seed=7, dtype=np.float64).train()
    m.params["head.weight"].data[...] = rng.standard_normal((2, 2 + 4, 1, 1)) * 0.05
    m.params["head.bias"].data[...] = 0.5  # keeps the backtraced centres off integers
    x = rng.standard_normal((2, 4, 8, 8))
    y = rng.standard_normal((2, 8, 8)) + 3.0
    lcfg = LossConfig(eps=0.0, inv_alpha=2.0)

    def loss_value():
        pred, w_hat = m.predict_next(x)
        return total_loss(pred, y, w_hat, lcfg)

    loss_value().backward()
    for name in ("enc1.weight", "dec1.gamma", "head.weight"):
        p = m.params[name]
        n = min(4, p.data.size)
        analytic = p.grad.reshape(-1)[:n].copy()
        flat = p.data.reshape(-1)
        numeric = []
        for i in range(n):
            old = flat[i]
            flat[i] = old + 1e-6
            fp = float(loss_value().data)
            flat[i] = old - 1e-6
            fm = float(loss_value().data)
            flat[i] = old
            numeric.append((fp - fm) / 2e-6)
        assert np.allclose(analytic, numeric, rtol=1e-4, atol=1e-6), name


def test_checkpoint_roundtrip_preserves_forecasts(rng):
    m = build(TINY, seed=8)
    for p in m.params.values():
        p.data[...] = rng.standard_normal(p.shape).astype(np.float32) * 0.1
    m.bn["enc1"].running_mean[:] = 0.3
    blob = to_checkpoint(m, {"note": "x"})
    back, header = from_checkpoint(blob)
    assert header["note"] == "x" and back.config == m.config
    hist = frames(size=16)
    assert all(np.array_equal(a, b) for a, b in zip(forecast(m, hist, 2), forecast(back, hist, 2)))
    assert to_checkpoint(back, {"note": "x"}) == blob


def test_checkpoint_with_wrong_tensors_rejected():
    blob = ad.encode_checkpoint({"w": np.zeros(2, dtype=np.float32)}, {"model": TINY.to_dict()})
    with pytest.raises(CheckpointFormatError):
        from_checkpoint(blob)
    with pytest.raises(CheckpointFormatError):
        from_checkpoint(ad.encode_checkpoint({}, {}))


def test_config_and_input_validation():
    with pytest.raises(InvalidConfig):
        ModelConfig(k_input_frames=0)
    with pytest.raises(InvalidConfig):
        ModelConfig(encoder_channels=())
    with pytest.raises(InvalidConfig):
        ModelConfig(kernel_size=4)
    with pytest.raises(InvalidConfig):
        forecast(build(TINY), frames(size=16), 0)
    with pytest.raises(ShapeMismatch):
        estimate_motion(build(TINY), frames(n=3, size=16))
    assert ModelConfig.from_dict(ModelConfig().to_dict()) == ModelConfig()

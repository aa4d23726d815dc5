import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from advcast.baselines import (
    format_report,
    mse_horizon,
    oracle_warp_forecast,
    parse_report,
    persistence_forecast,
    write_report,
)
from advcast.exceptions import LengthMismatch, MissingMotion
from advcast.fields import Boundary
from advcast.simulator import make_initial_field, spectral_step
from advcast.warp import WarpParams, warp_forward

finite = st.floats(-10, 10, allow_nan=False, width=64)


def translating(w=(1.3, -0.7), D=0.45, steps=10, seed=0):
    I0 = make_initial_field(seed)
    return np.stack([spectral_step(I0, w, D, t) for t in range(steps)])


def test_persistence_is_copies_of_last_frame(rng):
    hist = rng.standard_normal((4, 8, 8))
    out = persistence_forecast(hist, 3)
    assert len(out) == 3
    assert all(np.array_equal(f, hist[-1]) for f in out)
    out[0][0, 0] = 99.0
    assert hist[-1, 0, 0] != 99.0


def test_persistence_exact_on_static_sequence(rng):
    frame = rng.standard_normal((8, 8))
    seq = np.repeat(frame[None], 10, axis=0)
    per_step, avg = mse_horizon(persistence_forecast(seq[:4], 6), seq[4:])
    assert per_step == [0.0] * 6 and avg == 0.0


def test_persistence_error_grows_on_translation():
    seq = translating(D=0.0)
    per_step, _ = mse_horizon(persistence_forecast(seq[:4], 6), seq[4:])
    assert all(b > a for a, b in zip(per_step, per_step[1:]))


def test_oracle_exact_for_uniform_periodic_motion():
    D = 0.45
    seq = translating(D=D)
    motion = np.empty((2,) + seq.shape[1:])
    motion[0], motion[1] = 1.3, -0.7
    p = WarpParams(D=D, boundary=Boundary.PERIODIC)
    preds = oracle_warp_forecast(seq[:4], motion, p, 6)
    per_step, _ = mse_horizon(preds, seq[4:])
    persist, _ = mse_horizon(persistence_forecast(seq[:4], 6), seq[4:])
    scale = float(np.mean(seq ** 2))
    assert max(per_step) < 1e-6 * scale
    assert all(o < 1e-3 * q for o, q in zip(per_step, persist))


def test_oracle_zero_motion_is_the_blur_kernel(rng):
    hist = rng.standard_normal((4, 16, 16))
    zero = np.zeros((2, 16, 16))
    p = WarpParams()
    (first,) = oracle_warp_forecast(hist, zero, p, 1)
    expected, _ = warp_forward(hist[-1], zero, p)
    assert np.array_equal(first, expected)
    # a near-identity kernel makes it persistence up to the residual blur
    (sharp,) = oracle_warp_forecast(hist, zero, WarpParams(D=0.05), 1)
    assert np.abs(sharp - hist[-1]).max() < 0.05 * np.abs(hist[-1]).max()


def test_oracle_needs_motion(rng):
    with pytest.raises(MissingMotion):
        oracle_warp_forecast(rng.standard_normal((4, 8, 8)), None)


def test_mse_length_checks():
    with pytest.raises(LengthMismatch):
        mse_horizon([np.zeros((2, 2))] * 2, [np.zeros((2, 2))] * 3)
    with pytest.raises(LengthMismatch):
        mse_horizon([], [])


def test_mse_hand_example():
    pred = [np.array([[1.0, 2.0], [3.0, 4.0]]), np.zeros((2, 2))]
    target = [np.array([[1.0, 0.0], [3.0, 6.0]]), np.ones((2, 2))]
    per_step, avg = mse_horizon(pred, target)
    assert per_step == [2.0, 1.0]
    assert avg == 1.5


@given(arrays(np.float64, (3, 4, 4), elements=finite), st.floats(-5, 5, allow_nan=False, width=64))
def test_mse_constant_offset(x, delta):
    per_step, _ = mse_horizon(list(x + delta), list(x))
    assert np.allclose(per_step, delta * delta, rtol=1e-9, atol=1e-12)


@given(arrays(np.float64, (3, 4, 4), elements=finite), arrays(np.float64, (3, 4, 4), elements=finite))
def test_mse_symmetric_and_average(a, b):
    ab, avg = mse_horizon(list(a), list(b))
    ba, _ = mse_horizon(list(b), list(a))
    assert ab == ba
    assert avg == pytest.approx(np.mean(ab), rel=1e-12, abs=1e-300)
    assert all(v >= 0 for v in ab)


def test_report_layout_and_roundtrip(tmp_path):
    results = {"model": [0.1, 0.2, 0.3], "persistence": [1 / 3, 0.5, 0.7]}
    text = format_report(results, {"horizon": 3})
    lines = text.splitlines()
    assert lines[0] == "horizon=3"
    for name in results:
        assert sum(1 for line in lines if line.startswith(f"{name}.mse.")) == 3 + 1
    parsed = parse_report(text)
    assert parsed["horizon"] == "3"
    assert parsed["persistence"]["step_1"] == 1 / 3
    assert parsed["model"]["average"] == float(np.mean([0.1, 0.2, 0.3]))
    write_report(tmp_path / "r.txt", results, {"horizon": 3})
    assert (tmp_path / "r.txt").read_text() == text

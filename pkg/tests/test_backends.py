"""The numba and numpy kernels must agree, and the env flag must select numpy."""

import os
import subprocess
import sys

import numpy as np
import pytest

from advcast import _jit
from advcast.fields import Boundary
from advcast.sampling import bilinear_sample
from advcast.simulator import SimConfig, semi_lagrangian_step
from advcast.warp import WarpParams, warp_backward, warp_forward

pytestmark = pytest.mark.skipif(not _jit.HAVE_NUMBA, reason="numba unavailable")


@pytest.mark.parametrize("boundary", [Boundary.PERIODIC, Boundary.REPLICATE])
def test_bilinear_parity(rng, boundary):
    img = rng.standard_normal((3, 17, 23))
    px = rng.uniform(-5, 28, img.shape)
    py = rng.uniform(-5, 22, img.shape)
    a = bilinear_sample(img, px, py, boundary, use_numba=True)
    b = bilinear_sample(img, px, py, boundary, use_numba=False)
    assert np.allclose(a, b, rtol=0, atol=1e-12)


@pytest.mark.parametrize("renormalize", [True, False])
@pytest.mark.parametrize("boundary", [Boundary.PERIODIC, Boundary.REPLICATE])
def test_warp_parity(rng, renormalize, boundary):
    img = rng.standard_normal((2, 20, 24))
    mot = rng.uniform(-3, 3, (2, 2, 20, 24))
    p = WarpParams(renormalize=renormalize, boundary=boundary)
    out_a, cache_a = warp_forward(img, mot, p, use_numba=True)
    out_b, cache_b = warp_forward(img, mot, p, use_numba=False)
    assert np.allclose(out_a, out_b, rtol=0, atol=1e-12)
    g = rng.standard_normal(out_a.shape)
    gi_a, gm_a = warp_backward(cache_a, g, use_numba=True)
    gi_b, gm_b = warp_backward(cache_b, g, use_numba=False)
    assert np.allclose(gi_a, gi_b, rtol=0, atol=1e-11)
    assert np.allclose(gm_a, gm_b, rtol=0, atol=1e-11)


def test_semi_lagrangian_parity(rng):
    img = rng.standard_normal((32, 32))
    w = rng.uniform(-2, 2, (2, 32, 32))
    cfg = SimConfig(height=32, width=32)
    _jit.set_backend("numba")
    try:
        a = semi_lagrangian_step(img, w, cfg)
        _jit.set_backend("numpy")
        b = semi_lagrangian_step(img, w, cfg)
    finally:
        _jit.set_backend("numba")
    assert np.allclose(a, b, rtol=0, atol=1e-12)


def test_set_backend_rejects_unknown_name():
    with pytest.raises(ValueError):
        _jit.set_backend("fortran")


def test_env_flag_selects_numpy():
    code = "import advcast; print(advcast.backend())"
    env = dict(os.environ, ADVCAST_DISABLE_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, timeout=120)
    assert out.returncode == 0, out.stderr
    assert out.stdout.strip() == "numpy"
    env["ADVCAST_DISABLE_NUMBA"] = "0"
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, timeout=120)
    assert out.stdout.strip() == "numba"

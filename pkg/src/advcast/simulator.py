"""Ground-truth advection-diffusion data.

Three solvers live here:

* :func:`spectral_step` is the exact Fourier propagator for a constant
  velocity on a periodic grid, each mode multiplied by
  ``exp(-i<xi, w> t) * exp(-D t |xi|^2)``.
* :func:`kernel_solution` evaluates the same solution as a Gaussian-weighted
  average of the initial field around ``x - w t``, sharing the warp kernel.
* :func:`semi_lagrangian_step` handles arbitrary velocity fields: bilinear
  backtracing followed by explicit diffusion, repeated over CFL substeps.

Bilinear interpolation at fractional offset ``a`` smears by ``a (1 - a) / 2``
px^2 per axis.  With ``compensate_numerical_diffusion`` the explicit diffusion
is reduced by that amount (never below zero), written in flux form so the
field sum is still conserved exactly on periodic grids.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence, Union

import numpy as np

from . import warp as _warp
from .datapipe import DAYS_PER_YEAR, Dataset, write_dataset
from .exceptions import DegenerateKernel, InvalidConfig, NonPeriodicInput, ShapeMismatch, UnstableDiffusion
from .fields import Boundary, as_boundary, check_scalar_field, check_vector_field, partial_x, partial_y
from .sampling import bilinear_sample, pixel_grid

DIFFUSION_LIMIT = 0.25
MIN_KERNEL_VARIANCE = 0.05


@dataclass(frozen=True)
class SimConfig:
    height: int = 64
    width: int = 64
    dt: float = 1.0
    D: float = 0.45
    steps: int = 10
    boundary: Boundary = Boundary.PERIODIC
    substeps: int = 2  # D=0.45 needs two substeps for the explicit diffusion bound
    seed: int = 0
    correlation_length: float = 8.0
    compensate_numerical_diffusion: bool = True

    def __post_init__(self) -> None:
        object.__setattr__(self, "boundary", as_boundary(self.boundary))
        if self.height < 4 or self.width < 4:
            raise InvalidConfig("grid must be at least 4x4")
        if self.D < 0 or not math.isfinite(self.D):
            raise InvalidConfig(f"D must be finite and >= 0, got {self.D}")
        if self.dt <= 0:
            raise InvalidConfig(f"dt must be > 0, got {self.dt}")
        if self.steps < 2:
            raise InvalidConfig("steps must be >= 2")
        if self.substeps < 1:
            raise InvalidConfig("substeps must be >= 1")
        if self.correlation_length <= 0:
            raise InvalidConfig("correlation_length must be > 0")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["boundary"] = self.boundary.value
        return d


# ----------------------------------------------------------------------- flows
@dataclass(frozen=True)
class Uniform:
    u: float = 1.0
    v: float = 0.0


@dataclass(frozen=True)
class RandomUniform:
    """Uniform flow with direction and speed drawn per sequence."""

    max_speed: float = 2.0
    min_speed: float = 0.0


@dataclass(frozen=True)
class Vortex:
    center: tuple[float, float] | None = None  # (x, y); random when None
    strength: float = 1.0  # peak speed, px/step
    radius: float = 8.0


@dataclass(frozen=True)
class StreamFunctionNoise:
    correlation_length: float = 16.0
    amplitude: float = 1.0  # peak speed, px/step


@dataclass(frozen=True)
class Composite:
    components: tuple = ()
    max_speed: float | None = None  # rescale the sum so its peak speed is at most this


FlowSpec = Union[Uniform, RandomUniform, Vortex, StreamFunctionNoise, Composite]

_FLOW_KINDS = {
    "uniform": Uniform,
    "random_uniform": RandomUniform,
    "vortex": Vortex,
    "stream_noise": StreamFunctionNoise,
    "composite": Composite,
}


def flow_to_dict(spec: FlowSpec) -> dict:
    kind = next(k for k, v in _FLOW_KINDS.items() if isinstance(spec, v))
    if isinstance(spec, Composite):
        return {"kind": kind, "components": [flow_to_dict(c) for c in spec.components], "max_speed": spec.max_speed}
    d = asdict(spec)
    if isinstance(spec, Vortex) and spec.center is not None:
        d["center"] = list(spec.center)
    return {"kind": kind, **d}


def flow_from_dict(d: dict) -> FlowSpec:
    d = dict(d)
    try:
        cls = _FLOW_KINDS[d.pop("kind")]
    except KeyError as exc:
        raise InvalidConfig(f"unknown flow kind in {d}") from exc
    if cls is Composite:
        return Composite(tuple(flow_from_dict(c) for c in d.get("components", [])), d.get("max_speed"))
    if cls is Vortex and d.get("center") is not None:
        d["center"] = tuple(d["center"])
    return cls(**d)


def _smooth_noise(rng: np.random.Generator, h: int, w: int, correlation_length: float) -> np.ndarray:
    """Periodic Gaussian random field with covariance ~ exp(-r^2 / L^2), standardized."""
    white = rng.standard_normal((h, w))
    ky = 2 * np.pi * np.fft.fftfreq(h)
    kx = 2 * np.pi * np.fft.fftfreq(w)
    k2 = ky[:, None] ** 2 + kx[None, :] ** 2
    spec = np.fft.fft2(white) * np.exp(-k2 * correlation_length**2 / 8.0)
    f = np.fft.ifft2(spec).real
    f -= f.mean()
    return f / f.std()


def _velocity_from_stream(psi: np.ndarray) -> np.ndarray:
    # central differences commute, so the discrete divergence vanishes identically
    return np.stack([partial_y(psi, Boundary.PERIODIC), -partial_x(psi, Boundary.PERIODIC)])


def _peak_speed(w: np.ndarray) -> float:
    return float(np.sqrt(w[0] ** 2 + w[1] ** 2).max())


def sample_flow(spec: FlowSpec, h: int, w: int, rng: np.random.Generator) -> np.ndarray:
    """Draw one velocity field (2, H, W) in px/step from a flow family."""
    if isinstance(spec, Uniform):
        return np.stack([np.full((h, w), float(spec.u)), np.full((h, w), float(spec.v))])
    if isinstance(spec, RandomUniform):
        theta = rng.uniform(0.0, 2 * np.pi)
        speed = rng.uniform(spec.min_speed, spec.max_speed)
        return np.stack([np.full((h, w), speed * np.cos(theta)), np.full((h, w), speed * np.sin(theta))])
    if isinstance(spec, Vortex):
        cx, cy = spec.center if spec.center is not None else (rng.uniform(0, w), rng.uniform(0, h))
        xx, yy = pixel_grid(h, w)
        dx = (xx - cx + w / 2) % w - w / 2
        dy = (yy - cy + h / 2) % h - h / 2
        psi = np.exp(-(dx**2 + dy**2) / (2 * spec.radius**2))
        vel = _velocity_from_stream(psi)
        peak = _peak_speed(vel)
        return vel * (spec.strength / peak) if peak > 0 else vel
    if isinstance(spec, StreamFunctionNoise):
        vel = _velocity_from_stream(_smooth_noise(rng, h, w, spec.correlation_length))
        return vel * (spec.amplitude / _peak_speed(vel))
    if isinstance(spec, Composite):
        total = np.zeros((2, h, w))
        for comp in spec.components:
            total = total + sample_flow(comp, h, w, rng)
        if spec.max_speed is not None:
            peak = _peak_speed(total)
            if peak > spec.max_speed:
                total *= spec.max_speed / peak
        return total
    raise InvalidConfig(f"unsupported flow spec {spec!r}")


# -------------------------------------------------------------------- solvers
def make_initial_field(seed: int, cfg: SimConfig = SimConfig()) -> np.ndarray:
    """Band-limited random field, mean 0 and variance 1 (float64)."""
    rng = np.random.default_rng(seed)
    return _smooth_noise(rng, cfg.height, cfg.width, cfg.correlation_length)


def _frequencies(n: int) -> tuple[np.ndarray, np.ndarray]:
    xi = 2 * np.pi * np.fft.fftfreq(n)
    nyquist = np.zeros(n, dtype=bool)
    if n % 2 == 0:
        nyquist[n // 2] = True
    return xi, nyquist


def _shift_multiplier(xi: np.ndarray, nyquist: np.ndarray, shift: float) -> np.ndarray:
    m = np.exp(-1j * xi * shift)
    # the Nyquist mode has no +/- partner; keep it real so the inverse is real
    m[nyquist] = np.cos(xi[nyquist] * shift)
    return m


def spectral_step(I0: np.ndarray, w: Sequence[float], D: float, t: float, boundary=Boundary.PERIODIC) -> np.ndarray:
    """Exact solution at time ``t`` for constant velocity ``w = (u, v)`` on a periodic grid."""
    if as_boundary(boundary) is not Boundary.PERIODIC:
        raise NonPeriodicInput("the spectral propagator needs a periodic field")
    I0 = check_scalar_field(I0)
    if D < 0 or t < 0:
        raise ValueError("D and t must be >= 0")
    h, wd = I0.shape[-2:]
    ky, nyq_y = _frequencies(h)
    kx, nyq_x = _frequencies(wd)
    u, v = float(w[0]), float(w[1])
    mult = _shift_multiplier(ky, nyq_y, v * t)[:, None] * _shift_multiplier(kx, nyq_x, u * t)[None, :]
    mult = mult * np.exp(-D * t * (ky[:, None] ** 2 + kx[None, :] ** 2))
    out = np.fft.ifft2(np.fft.fft2(I0) * mult)
    scale = max(float(np.abs(I0).max()), 1.0)
    if float(np.abs(out.imag).max()) > 1e-10 * scale:
        raise ArithmeticError("spectral propagator produced a non-real field")
    return out.real


def kernel_solution(
    I0: np.ndarray, w: Sequence[float], D: float, t: float, boundary=Boundary.PERIODIC, renormalize: bool = True,
    truncation_radius: int | None = None,
) -> np.ndarray:
    """Gaussian-kernel form of the solution: average of ``I0`` around ``x - w t``, variance ``2 D t``.

    The window reaches ``ceil(3 sigma)`` pixels unless ``truncation_radius`` is given.
    """
    if as_boundary(boundary) is not Boundary.PERIODIC:
        raise NonPeriodicInput("kernel_solution is defined on periodic fields")
    I0 = check_scalar_field(I0)
    var = 2.0 * D * t
    if var < MIN_KERNEL_VARIANCE:
        raise DegenerateKernel(f"kernel variance 2Dt = {var:g} px^2 is below {MIN_KERNEL_VARIANCE}; use spectral_step")
    h, wd = I0.shape[-2:]
    motion = np.empty((2, h, wd))
    motion[0] = float(w[0]) * t
    motion[1] = float(w[1]) * t
    sigma = math.sqrt(var)
    radius = max(1, int(math.ceil(3.0 * sigma - 1e-9))) if truncation_radius is None else int(truncation_radius)
    if radius < 1:
        raise InvalidConfig("truncation_radius must be >= 1")
    return _warp.gaussian_average(I0, motion, sigma, radius, renormalize, Boundary.PERIODIC)


def substeps_for(w: np.ndarray, cfg: SimConfig) -> int:
    """Smallest substep count >= cfg.substeps keeping per-substep displacement <= 1 px."""
    peak = float(np.sqrt(w[0] ** 2 + w[1] ** 2).max()) * cfg.dt
    return max(cfg.substeps, int(math.ceil(peak - 1e-12)))


def _flux_diffuse(I: np.ndarray, kx: np.ndarray, ky: np.ndarray, boundary: Boundary) -> np.ndarray:
    """I + d/dx(kx dI/dx) + d/dy(ky dI/dy) in conservative face-flux form."""
    periodic = boundary is Boundary.PERIODIC
    out = I.copy()
    for axis, k in ((1, kx), (0, ky)):
        nxt = np.roll(I, -1, axis=axis)
        kface = 0.5 * (k + np.roll(k, -1, axis=axis))
        flux = kface * (nxt - I)
        if not periodic:
            last = [slice(None)] * 2
            last[axis] = -1
            flux[tuple(last)] = 0.0
        out += flux - np.roll(flux, 1, axis=axis)
    return out


def semi_lagrangian_step(I: np.ndarray, w: np.ndarray, cfg: SimConfig = SimConfig()) -> np.ndarray:
    """Advance ``I`` by one ``cfg.dt`` under velocity ``w`` (2, H, W) and diffusion ``cfg.D``."""
    I = check_scalar_field(I)
    w = check_vector_field(w, like=I)
    if I.ndim != 2 or w.ndim != 3:
        raise ShapeMismatch("semi_lagrangian_step works on a single (H, W) field")
    n_sub = substeps_for(w, cfg)
    h_dt = cfg.dt / n_sub
    dcoef = cfg.D * h_dt
    if dcoef > DIFFUSION_LIMIT + 1e-12:
        raise UnstableDiffusion(f"D*dt/substeps = {dcoef:g} exceeds {DIFFUSION_LIMIT}; raise substeps")
    dtype = I.dtype if np.issubdtype(I.dtype, np.floating) else np.float64
    h, wd = I.shape
    xx, yy = pixel_grid(h, wd)
    sx = w[0].astype(np.float64) * h_dt
    sy = w[1].astype(np.float64) * h_dt
    px, py = xx - sx, yy - sy
    if cfg.compensate_numerical_diffusion:
        ax = sx - np.floor(sx)
        ay = sy - np.floor(sy)
        kx = np.maximum(dcoef - 0.5 * ax * (1.0 - ax), 0.0)
        ky = np.maximum(dcoef - 0.5 * ay * (1.0 - ay), 0.0)
    else:
        kx = np.full((h, wd), dcoef)
        ky = kx
    kx = kx.astype(dtype)
    ky = ky.astype(dtype)
    out = I.astype(dtype)
    for _ in range(n_sub):
        out = bilinear_sample(out, px, py, cfg.boundary)
        if cfg.D > 0:
            out = _flux_diffuse(out, kx, ky, cfg.boundary)
    return out


# ------------------------------------------------------------------ datasets
def evolve(I0: np.ndarray, w: np.ndarray, cfg: SimConfig, steps: int | None = None) -> np.ndarray:
    """Frames ``[I0, step(I0), step(step(I0)), ...]`` as an array (steps, H, W)."""
    steps = cfg.steps if steps is None else steps
    frames = np.empty((steps,) + I0.shape, dtype=I0.dtype)
    frames[0] = I0
    for t in range(1, steps):
        frames[t] = semi_lagrangian_step(frames[t - 1], w, cfg)
    return frames


def generate_dataset(
    n_sequences: int,
    sim: SimConfig = SimConfig(),
    flow: FlowSpec = StreamFunctionNoise(),
    out_path=None,
    n_regions: int = 1,
) -> Dataset:
    """Simulate ``n_sequences`` float32 sequences with their steady velocity fields.

    Sequence ``i`` draws everything from child ``i`` of ``SeedSequence(sim.seed)``,
    so sequences are independent of each other and of ``n_sequences``.
    """
    if n_sequences < 0 or n_regions < 1:
        raise InvalidConfig("n_sequences must be >= 0 and n_regions >= 1")
    children = np.random.SeedSequence(sim.seed).spawn(n_sequences)
    frames, motions, regions, days = [], [], [], []
    for i, child in enumerate(children):
        rng = np.random.default_rng(child)
        field_seed = int(rng.integers(0, 2**63 - 1))
        vel = sample_flow(flow, sim.height, sim.width, rng).astype(np.float32)
        day = int(rng.integers(0, DAYS_PER_YEAR))
        I0 = make_initial_field(field_seed, sim).astype(np.float32)
        frames.append(evolve(I0, vel, sim))
        motions.append(vel)
        regions.append(i % n_regions)
        days.append(day)
    meta = {"generator": "semi_lagrangian", "sim": sim.to_dict(), "flow": flow_to_dict(flow)}
    ds = Dataset(frames, motions, regions, days, meta)
    if out_path is not None:
        write_dataset(ds, out_path)
    return ds

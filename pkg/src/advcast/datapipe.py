"""Sequence datasets: container file, day-of-year climatology, windowing, splits.

Container layout (integers little-endian)::

    b"ADVD" | u16 version | u32 header length | UTF-8 JSON header
    | float32 LE frames, sequence by sequence, each (T, H, W)
    | float32 LE motion fields (2, H, W) for sequences flagged in the header
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from .exceptions import DatasetFormatError, EmptyDay, MissingClimatology, ShapeMismatch

MAGIC = b"ADVD"
VERSION = 1
DAYS_PER_YEAR = 365
STD_FLOOR = 1e-6
_PREFIX = struct.Struct("<4sHI")


@dataclass
class Dataset:
    frames: list[np.ndarray]
    motions: list[np.ndarray | None]
    region_ids: list[int]
    start_days: list[int]
    metadata: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        n = len(self.frames)
        if not (len(self.motions) == len(self.region_ids) == len(self.start_days) == n):
            raise ShapeMismatch("frames, motions, region_ids and start_days differ in length")
        shapes = {f.shape[1:] for f in self.frames}
        if len(shapes) > 1:
            raise ShapeMismatch(f"sequences disagree on grid shape: {sorted(shapes)}")
        for f, m in zip(self.frames, self.motions):
            if f.ndim != 3:
                raise ShapeMismatch(f"sequence frames must be (T, H, W), got {f.shape}")
            if m is not None and m.shape != (2,) + f.shape[1:]:
                raise ShapeMismatch(f"motion {m.shape} does not match frames {f.shape}")

    def __len__(self) -> int:
        return len(self.frames)

    @property
    def shape(self) -> tuple[int, int]:
        return tuple(self.frames[0].shape[1:]) if self.frames else (0, 0)

    def subset(self, indices: Iterable[int]) -> "Dataset":
        idx = list(indices)
        return Dataset(
            [self.frames[i] for i in idx],
            [self.motions[i] for i in idx],
            [self.region_ids[i] for i in idx],
            [self.start_days[i] for i in idx],
            dict(self.metadata),
        )


# ----------------------------------------------------------------- file format
def encode_dataset(ds: Dataset) -> bytes:
    h, w = ds.shape
    header = {
        "format": "advcast-dataset",
        "endianness": "little",
        "dtype": "float32",
        "height": int(h),
        "width": int(w),
        "count": len(ds),
        "lengths": [int(f.shape[0]) for f in ds.frames],
        "region_ids": [int(r) for r in ds.region_ids],
        "start_days": [int(d) for d in ds.start_days],
        "has_motion": [m is not None for m in ds.motions],
        "metadata": ds.metadata,
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [_PREFIX.pack(MAGIC, VERSION, len(hbytes)), hbytes]
    parts += [np.ascontiguousarray(f, dtype="<f4").tobytes() for f in ds.frames]
    parts += [np.ascontiguousarray(m, dtype="<f4").tobytes() for m in ds.motions if m is not None]
    return b"".join(parts)


def decode_dataset(data: bytes) -> Dataset:
    if len(data) < _PREFIX.size:
        raise DatasetFormatError("file too short for a dataset header")
    magic, version, hlen = _PREFIX.unpack_from(data, 0)
    if magic != MAGIC:
        raise DatasetFormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise DatasetFormatError(f"unsupported dataset version {version}")
    try:
        header = json.loads(data[_PREFIX.size:_PREFIX.size + hlen].decode("utf-8"))
        h, w = header["height"], header["width"]
        lengths = header["lengths"]
        has_motion = header["has_motion"]
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError) as exc:
        raise DatasetFormatError("corrupt dataset header") from exc
    if header.get("endianness") != "little":
        raise DatasetFormatError("only little-endian datasets are supported")
    pos = _PREFIX.size + hlen
    expected = pos + 4 * h * w * (sum(lengths) + 2 * sum(bool(m) for m in has_motion))
    if len(data) != expected:
        raise DatasetFormatError(f"dataset body has {len(data) - pos} bytes, header implies {expected - pos}")

    def read(count, shape):
        nonlocal pos
        arr = np.frombuffer(data, dtype="<f4", count=count, offset=pos).astype(np.float32).reshape(shape)
        pos += 4 * count
        return arr

    frames = [read(t * h * w, (t, h, w)) for t in lengths]
    motions = [read(2 * h * w, (2, h, w)) if m else None for m in has_motion]
    return Dataset(frames, motions, list(header["region_ids"]), list(header["start_days"]), header.get("metadata", {}))


def write_dataset(ds: Dataset, path) -> None:
    Path(path).write_bytes(encode_dataset(ds))


def read_dataset(path) -> Dataset:
    return decode_dataset(Path(path).read_bytes())


# ----------------------------------------------------------------- climatology
@dataclass
class Climatology:
    """Scalar mean/std per (region, day of year)."""

    stats: dict[tuple[int, int], tuple[float, float]]
    window: int = 3
    floor: float = STD_FLOOR

    def lookup(self, region_id: int, day: int) -> tuple[float, float]:
        key = (int(region_id), int(day) % DAYS_PER_YEAR)
        try:
            return self.stats[key]
        except KeyError:
            raise MissingClimatology(f"no climatology for region {key[0]}, day {key[1]}") from None

    def to_dict(self) -> dict:
        rows = [[r, d, m, s] for (r, d), (m, s) in sorted(self.stats.items())]
        return {"window": self.window, "floor": self.floor, "stats": rows}

    @classmethod
    def from_dict(cls, d: dict) -> "Climatology":
        stats = {(int(r), int(day)): (float(m), float(s)) for r, day, m, s in d["stats"]}
        return cls(stats, int(d["window"]), float(d["floor"]))


def frame_days(start_day: int, length: int) -> np.ndarray:
    return (start_day + np.arange(length)) % DAYS_PER_YEAR


def compute_climatology(ds: Dataset, window: int = 3, days: Iterable[int] | None = None, floor: float = STD_FLOOR) -> Climatology:
    """Per (region, day) statistics pooled over frames within ``±window`` days (circular).

    Pass the training split only.  With ``days=None`` statistics are produced
    for every day that has data in range; with an explicit ``days`` list every
    listed day must be covered or :class:`EmptyDay` is raised.
    """
    if window < 0:
        raise ValueError("window must be >= 0")
    acc: dict[int, np.ndarray] = {}
    for frames, region, start in zip(ds.frames, ds.region_ids, ds.start_days):
        table = acc.setdefault(int(region), np.zeros((DAYS_PER_YEAR, 3)))
        npix = frames.shape[1] * frames.shape[2]
        for t, day in enumerate(frame_days(start, frames.shape[0])):
            f = frames[t].astype(np.float64)
            table[day, 0] += npix
            table[day, 1] += f.sum()
            table[day, 2] += (f * f).sum()

    wanted = None if days is None else sorted({int(d) % DAYS_PER_YEAR for d in days})
    offsets = np.arange(-window, window + 1)
    stats: dict[tuple[int, int], tuple[float, float]] = {}
    for region, table in sorted(acc.items()):
        targets = range(DAYS_PER_YEAR) if wanted is None else wanted
        for day in targets:
            rows = table[(day + offsets) % DAYS_PER_YEAR] if window else table[day:day + 1]
            if window * 2 + 1 >= DAYS_PER_YEAR:
                rows = table
            n, s, ss = rows.sum(axis=0)
            if n == 0:
                if wanted is not None:
                    raise EmptyDay(f"region {region} has no samples within {window} days of day {day}")
                continue
            mean = s / n
            var = max(ss / n - mean * mean, 0.0)
            stats[(region, day)] = (float(mean), float(max(np.sqrt(var), floor)))
    return Climatology(stats, window, floor)


def _per_frame_stats(clim: Climatology, region_id: int, day: int, length: int) -> tuple[np.ndarray, np.ndarray]:
    pairs = [clim.lookup(region_id, d) for d in frame_days(day, length)]
    mean = np.array([p[0] for p in pairs])[:, None, None]
    std = np.array([p[1] for p in pairs])[:, None, None]
    return mean, std


def standardize(frames: np.ndarray, clim: Climatology, region_id: int, day: int) -> np.ndarray:
    """(x - mean) / std, frame ``t`` using the statistics of ``day + t``."""
    frames = np.asarray(frames)
    f3 = frames[None] if frames.ndim == 2 else frames
    mean, std = _per_frame_stats(clim, region_id, day, f3.shape[0])
    out = ((f3 - mean) / std).astype(frames.dtype if np.issubdtype(frames.dtype, np.floating) else np.float64)
    return out[0] if frames.ndim == 2 else out


def destandardize(frames: np.ndarray, clim: Climatology, region_id: int, day: int) -> np.ndarray:
    frames = np.asarray(frames)
    f3 = frames[None] if frames.ndim == 2 else frames
    mean, std = _per_frame_stats(clim, region_id, day, f3.shape[0])
    out = (f3 * std + mean).astype(frames.dtype if np.issubdtype(frames.dtype, np.floating) else np.float64)
    return out[0] if frames.ndim == 2 else out


def standardize_dataset(ds: Dataset, clim: Climatology) -> Dataset:
    frames = [standardize(f, clim, r, d) for f, r, d in zip(ds.frames, ds.region_ids, ds.start_days)]
    meta = dict(ds.metadata, standardized=True)
    return Dataset(frames, list(ds.motions), list(ds.region_ids), list(ds.start_days), meta)


# ------------------------------------------------------------------- windowing
@dataclass
class SequenceSample:
    inputs: np.ndarray  # (k, H, W)
    targets: np.ndarray  # (h, H, W)
    true_motion: np.ndarray | None
    region_id: int
    day: int  # day of year of the first input frame
    sequence: int
    start: int


def window_sequences(ds: Dataset, k: int, horizon: int, stride: int = 1) -> list[SequenceSample]:
    """Every window of ``k`` inputs followed by ``horizon`` targets, per sequence."""
    if k < 1 or horizon < 1 or stride < 1:
        raise ValueError("k, horizon and stride must be >= 1")
    out = []
    for si, (frames, motion, region, start_day) in enumerate(zip(ds.frames, ds.motions, ds.region_ids, ds.start_days)):
        last = frames.shape[0] - k - horizon
        for s in range(0, last + 1, stride):
            out.append(SequenceSample(
                frames[s:s + k], frames[s + k:s + k + horizon], motion, int(region),
                int((start_day + s) % DAYS_PER_YEAR), si, s,
            ))
    return out


def split(ds: Dataset, val_fraction: float = 0.2, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Sequence-level random split, deterministic in ``seed``."""
    if not 0.0 <= val_fraction <= 1.0:
        raise ValueError("val_fraction must lie in [0, 1]")
    n = len(ds)
    n_val = int(round(n * val_fraction))
    perm = np.random.default_rng(seed).permutation(n)
    val_idx = sorted(perm[:n_val].tolist())
    train_idx = sorted(perm[n_val:].tolist())
    return ds.subset(train_idx), ds.subset(val_idx)

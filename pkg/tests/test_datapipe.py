import numpy as np
import pytest

from advcast.datapipe import (
    Climatology,
    Dataset,
    compute_climatology,
    decode_dataset,
    destandardize,
    encode_dataset,
    read_dataset,
    split,
    standardize,
    standardize_dataset,
    window_sequences,
    write_dataset,
)
from advcast.exceptions import DatasetFormatError, EmptyDay, MissingClimatology, ShapeMismatch


def make_ds(n=5, t=10, h=6, w=7, seed=0, motion=True):
    rng = np.random.default_rng(seed)
    frames = [rng.standard_normal((t, h, w)).astype(np.float32) for _ in range(n)]
    motions = [rng.standard_normal((2, h, w)).astype(np.float32) if motion and i % 2 == 0 else None for i in range(n)]
    days = [int(d) for d in rng.integers(0, 365, n)]
    return Dataset(frames, motions, [i % 2 for i in range(n)], days, {"note": "test"})


def test_file_roundtrip_bit_exact(tmp_path):
    ds = make_ds()
    write_dataset(ds, tmp_path / "d.advd")
    back = read_dataset(tmp_path / "d.advd")
    assert back.region_ids == ds.region_ids and back.start_days == ds.start_days
    assert back.metadata == ds.metadata
    for a, b in zip(ds.frames, back.frames):
        assert a.tobytes() == b.tobytes()
    for a, b in zip(ds.motions, back.motions):
        assert (a is None and b is None) or a.tobytes() == b.tobytes()
    assert encode_dataset(back) == encode_dataset(ds)


def test_header_layout():
    blob = encode_dataset(make_ds(n=2, t=3, h=4, w=4, motion=False))
    assert blob[:4] == b"ADVD"
    assert int.from_bytes(blob[4:6], "little") == 1
    hlen = int.from_bytes(blob[6:10], "little")
    assert len(blob) == 10 + hlen + 2 * 3 * 4 * 4 * 4


def test_corrupt_files_rejected():
    blob = encode_dataset(make_ds(n=2))
    for bad in (b"NOPE" + blob[4:], blob[:-1], blob[:3], blob[:4] + b"\x09\x00" + blob[6:]):
        with pytest.raises(DatasetFormatError):
            decode_dataset(bad)


def test_dataset_validation():
    with pytest.raises(ShapeMismatch):
        Dataset([np.zeros((3, 4, 4)), np.zeros((3, 5, 4))], [None, None], [0, 0], [0, 0])
    with pytest.raises(ShapeMismatch):
        Dataset([np.zeros((3, 4, 4))], [np.zeros((2, 4, 5))], [0], [0])


def test_constant_frames_give_floor_std():
    ds = Dataset([np.full((10, 4, 4), 3.0, dtype=np.float32)] * 3, [None] * 3, [0] * 3, [0, 100, 200])
    clim = compute_climatology(ds, window=3)
    for (_, day), (m, s) in clim.stats.items():
        assert m == 3.0 and s == clim.floor
    out = standardize(ds.frames[0], clim, 0, 0)
    assert np.all(np.isfinite(out)) and np.allclose(out, 0.0)


def test_window_zero_single_frame_per_day():
    rng = np.random.default_rng(1)
    frames = rng.standard_normal((365, 4, 4))
    clim = compute_climatology(Dataset([frames], [None], [0], [0]), window=0)
    for d in (0, 17, 364):
        assert np.isclose(clim.lookup(0, d)[0], frames[d].mean())


def test_seasonal_signal_recovery():
    rng = np.random.default_rng(2)
    amp, n_years, npix = 2.0, 4, 64
    days = np.arange(365)
    signal = amp * np.sin(2 * np.pi * days / 365)
    seqs = [signal[:, None, None] + rng.standard_normal((365, 8, 8)) for _ in range(n_years)]
    clim = compute_climatology(Dataset(seqs, [None] * n_years, [0] * n_years, [0] * n_years), window=3)
    est = np.array([clim.lookup(0, d)[0] for d in days])
    smoothed = np.array([signal[(d + np.arange(-3, 4)) % 365].mean() for d in days])
    # pooled sample: 7 days x n_years x npix unit-variance values
    bound = 5.0 / np.sqrt(7 * n_years * npix)
    assert np.abs(est - smoothed).max() < bound


def test_window_wraps_around_year_end():
    f = np.ones((1, 4, 4))
    ds = Dataset([f * 1.0, f * 3.0], [None, None], [0, 0], [364, 1])
    clim = compute_climatology(ds, window=1)
    assert np.isclose(clim.lookup(0, 0)[0], 2.0)


def test_empty_day_and_missing_lookup():
    ds = Dataset([np.ones((2, 4, 4))], [None], [0], [10])
    with pytest.raises(EmptyDay):
        compute_climatology(ds, window=1, days=[10, 50])
    clim = compute_climatology(ds, window=1)
    with pytest.raises(MissingClimatology):
        clim.lookup(0, 200)
    with pytest.raises(MissingClimatology):
        clim.lookup(7, 10)


def test_standardize_roundtrip_and_mean_field():
    ds = make_ds(n=6, t=12)
    clim = compute_climatology(ds, window=182)
    for f, r, d in zip(ds.frames, ds.region_ids, ds.start_days):
        back = destandardize(standardize(f, clim, r, d), clim, r, d)
        assert np.max(np.abs(back - f) / (np.abs(f) + 1e-3)) < 1e-6
        m, _ = clim.lookup(r, d)
        assert np.allclose(standardize(np.full(f.shape[1:], m), clim, r, d), 0.0, atol=1e-6)


def test_standardized_training_frames_near_zero_mean():
    ds = make_ds(n=20, t=10, seed=3)
    clim = compute_climatology(ds, window=182)
    z = standardize_dataset(ds, clim)
    assert abs(np.mean([f.mean() for f in z.frames])) < 0.05
    assert z.metadata["standardized"] is True


def test_climatology_dict_roundtrip():
    clim = compute_climatology(make_ds(), window=2)
    assert Climatology.from_dict(clim.to_dict()) == clim


@pytest.mark.parametrize("t,expected", [(10, 1), (12, 3), (9, 0)])
def test_window_counts(t, expected):
    ds = make_ds(n=3, t=t)
    assert len(window_sequences(ds, 4, 6)) == 3 * expected


def test_window_values_and_days():
    ds = make_ds(n=1, t=12)
    s = window_sequences(ds, 4, 6)[2]
    assert np.array_equal(s.inputs, ds.frames[0][2:6]) and np.array_equal(s.targets, ds.frames[0][6:12])
    assert s.day == (ds.start_days[0] + 2) % 365 and s.start == 2
    assert len(window_sequences(ds, 4, 1, stride=3)) == 3


def test_split_properties():
    ds = make_ds(n=10)
    tr, va = split(ds, 0.2, seed=4)
    assert len(va) == 2 and len(tr) == 8
    tr2, va2 = split(ds, 0.2, seed=4)
    assert [f.tobytes() for f in va.frames] == [f.tobytes() for f in va2.frames]
    ids = lambda d: {f.tobytes() for f in d.frames}
    assert not ids(tr) & ids(va) and ids(tr) | ids(va) == ids(ds)

"""``advcast gen|train|eval|forecast|export --config FILE [--seed N] [--out DIR]``.

One JSON config drives every subcommand.  Artifacts are content addressed:
datasets live in ``OUT/data-<id>`` where the id hashes the simulator, flow and
data sections plus the seed, and model artifacts live in ``OUT/run-<id>``
where the id also covers the model and training sections.  Each directory
gets the fully resolved ``config.json``.

Exit codes: 0 ok, 2 bad config, 3 missing file, 4 corrupt dataset or
checkpoint, 5 non-finite loss, 1 any other library error.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from .baselines import write_report
from .datapipe import (
    Climatology,
    Dataset,
    compute_climatology,
    destandardize,
    read_dataset,
    split,
    standardize,
    standardize_dataset,
    window_sequences,
    write_dataset,
)
from .exceptions import (
    AdvcastError,
    CheckpointFormatError,
    DatasetFormatError,
    InvalidConfig,
    InvalidParams,
    NonFiniteLoss,
)
from .model import ModelConfig, build, estimate_motion, forecast, load, save
from .simulator import SimConfig, flow_from_dict, flow_to_dict, generate_dataset
from .training import TrainConfig, best_epoch, evaluate, train

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_MISSING, EXIT_CORRUPT, EXIT_NAN = 0, 1, 2, 3, 4, 5

DEFAULTS: dict = {
    "seed": 0,
    "sim": SimConfig().to_dict(),
    "flow": {
        "kind": "composite",
        "components": [
            {"kind": "random_uniform", "max_speed": 2.0, "min_speed": 0.0},
            {"kind": "stream_noise", "correlation_length": 16.0, "amplitude": 1.0},
        ],
        "max_speed": 3.0,
    },
    "data": {"n_train": 1000, "n_test": 100, "n_regions": 1, "train_path": None, "test_path": None},
    "model": ModelConfig().to_dict(),
    "train": TrainConfig().to_dict(),
    "eval": {"horizon": 6, "batch_size": 64},
    "export": {"sequence": 0, "frames": 10},
}
_SEED_FIELDS = ("data", "test", "init", "shuffle")


# ---------------------------------------------------------------------- config
def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if key not in base:
            raise InvalidConfig(f"unknown config key {path}{key}")
        if isinstance(base[key], dict) and key != "flow":
            if not isinstance(value, dict):
                raise InvalidConfig(f"{path}{key} must be a mapping")
            out[key] = _merge(base[key], value, f"{path}{key}.")
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path, seed: int | None = None) -> dict:
    """Read a JSON config and merge it over the defaults; ``seed`` overrides the file."""
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"config file not found: {p}")
    try:
        raw = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise InvalidConfig(f"{p}: not valid JSON ({exc.msg} at line {exc.lineno})") from exc
    if not isinstance(raw, dict):
        raise InvalidConfig(f"{p}: top level must be a mapping")
    cfg = _merge(DEFAULTS, raw)
    if seed is not None:
        cfg["seed"] = int(seed)
    validate(cfg)
    return cfg


def validate(cfg: dict) -> None:
    """Build every typed config once so errors surface before any work starts."""
    try:
        sim_config(cfg)
        flow_from_dict(cfg["flow"])
        ModelConfig.from_dict(cfg["model"])
        train_config(cfg)
    except (TypeError, InvalidParams) as exc:
        raise InvalidConfig(str(exc)) from exc
    if int(cfg["eval"]["horizon"]) < 1:
        raise InvalidConfig("eval.horizon must be >= 1")
    if int(cfg["data"]["n_train"]) < 0 or int(cfg["data"]["n_test"]) < 0:
        raise InvalidConfig("data.n_train and data.n_test must be >= 0")


def seeds(cfg: dict) -> dict[str, int]:
    """Independent sub-seeds derived from the master seed."""
    state = np.random.SeedSequence(int(cfg["seed"])).generate_state(len(_SEED_FIELDS), dtype=np.uint32)
    return dict(zip(_SEED_FIELDS, (int(s) for s in state)))


def sim_config(cfg: dict, role: str = "data") -> SimConfig:
    d = dict(cfg["sim"])
    d["seed"] = seeds(cfg)[role]
    try:
        return SimConfig(**d)
    except TypeError as exc:
        raise InvalidConfig(f"sim: {exc}") from exc


def train_config(cfg: dict) -> TrainConfig:
    d = dict(cfg["train"])
    d["seed"] = seeds(cfg)["shuffle"]
    try:
        return TrainConfig(**d)
    except TypeError as exc:
        raise InvalidConfig(f"train: {exc}") from exc


def _digest(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()).hexdigest()[:12]


def data_id(cfg: dict) -> str:
    return _digest({k: cfg[k] for k in ("seed", "sim", "flow", "data")})


def run_id(cfg: dict) -> str:
    return _digest({k: cfg[k] for k in ("seed", "sim", "flow", "data", "model", "train")})


def _prepare_dir(out: Path, prefix: str, ident: str, cfg: dict) -> Path:
    d = out / f"{prefix}-{ident}"
    d.mkdir(parents=True, exist_ok=True)
    (d / "config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")
    return d


def data_paths(cfg: dict, out: Path) -> tuple[Path, Path]:
    base = out / f"data-{data_id(cfg)}"
    train_p = Path(cfg["data"]["train_path"]) if cfg["data"]["train_path"] else base / "train.advd"
    test_p = Path(cfg["data"]["test_path"]) if cfg["data"]["test_path"] else base / "test.advd"
    return train_p, test_p


def _read(path: Path) -> Dataset:
    if not path.is_file():
        raise FileNotFoundError(f"dataset not found: {path} (run `gen` first)")
    return read_dataset(path)


# -------------------------------------------------------------------- commands
def cmd_gen(cfg: dict, out: Path) -> Path:
    d = _prepare_dir(out, "data", data_id(cfg), cfg)
    flow = flow_from_dict(cfg["flow"])
    n_regions = int(cfg["data"]["n_regions"])
    generate_dataset(int(cfg["data"]["n_train"]), sim_config(cfg, "data"), flow, d / "train.advd", n_regions)
    generate_dataset(int(cfg["data"]["n_test"]), sim_config(cfg, "test"), flow, d / "test.advd", n_regions)
    return d


def cmd_train(cfg: dict, out: Path) -> Path:
    train_p, _ = data_paths(cfg, out)
    ds = _read(train_p)
    tcfg = train_config(cfg)
    mcfg = ModelConfig.from_dict(cfg["model"])
    tr, va = split(ds, tcfg.val_fraction, seeds(cfg)["shuffle"])
    clim = compute_climatology(tr, tcfg.climatology_window)
    tr_s, va_s = standardize_dataset(tr, clim), standardize_dataset(va, clim)
    k = mcfg.k_input_frames
    model = build(mcfg, seeds(cfg)["init"])
    d = _prepare_dir(out, "run", run_id(cfg), cfg)
    try:
        stride = tcfg.window_stride
        history = train(model, window_sequences(tr_s, k, 1, stride), window_sequences(va_s, k, 1, stride), tcfg,
                        d / "train_log.csv")
    except NonFiniteLoss:
        save(model, d / "aborted.ckpt", {"climatology": clim.to_dict(), "run_id": run_id(cfg)})
        raise
    save(model, d / "model.ckpt", {"climatology": clim.to_dict(), "run_id": run_id(cfg), "epochs": len(history),
                                 "best_epoch": best_epoch(history)})
    return d


def _load_run(cfg: dict, out: Path):
    path = out / f"run-{run_id(cfg)}" / "model.ckpt"
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path} (run `train` first)")
    model, header = load(path)
    if "climatology" not in header:
        raise CheckpointFormatError(f"{path}: checkpoint has no climatology")
    return model, Climatology.from_dict(header["climatology"]), path.parent


def cmd_eval(cfg: dict, out: Path) -> Path:
    model, clim, d = _load_run(cfg, out)
    _, test_p = data_paths(cfg, out)
    test = standardize_dataset(_read(test_p), clim)
    horizon = int(cfg["eval"]["horizon"])
    results = evaluate(model, test, horizon, batch_size=int(cfg["eval"]["batch_size"]))
    n = len(window_sequences(test, model.config.k_input_frames, horizon))
    meta = {"run_id": run_id(cfg), "horizon": horizon, "samples": n}
    (d / "config.json").write_text(json.dumps(cfg, indent=2, sort_keys=True) + "\n")
    write_report(d / "report.txt", results, meta)
    return d / "report.txt"


def cmd_forecast(cfg: dict, out: Path) -> Path:
    """Forecast ``horizon`` frames from the first ``k`` frames of every test sequence."""
    model, clim, d = _load_run(cfg, out)
    _, test_p = data_paths(cfg, out)
    test = _read(test_p)
    k = model.config.k_input_frames
    horizon = int(cfg["eval"]["horizon"])
    frames, motions = [], []
    for seq, region, day in zip(test.frames, test.region_ids, test.start_days):
        if seq.shape[0] < k:
            raise InvalidConfig(f"test sequences need at least {k} frames")
        hist = standardize(seq[:k], clim, region, day)
        preds, w = forecast(model, hist, horizon, return_motion=True)
        frames.append(destandardize(np.stack(preds), clim, region, day + k).astype(np.float32))
        motions.append(w[0].astype(np.float32))
    start_days = [(d0 + k) % 365 for d0 in test.start_days]
    meta = {"kind": "forecast", "run_id": run_id(cfg), "horizon": horizon, "source": str(test_p)}
    path = d / "forecast.advd"
    write_dataset(Dataset(frames, motions, list(test.region_ids), start_days, meta), path)
    return path


def _gray_png(frame: np.ndarray, path: Path) -> dict:
    from PIL import Image

    lo, hi = float(frame.min()), float(frame.max())
    scale = (hi - lo) or 1.0
    img = np.round((frame - lo) / scale * 255.0).astype(np.uint8)
    Image.fromarray(img, mode="L").save(path)
    return {"file": path.name, "min": lo, "max": hi}


def flow_to_rgb(w: np.ndarray, max_magnitude: float | None = None) -> np.ndarray:
    """HSV colouring of a motion field: hue is direction, saturation and value grow with magnitude."""
    from PIL import Image

    u, v = np.asarray(w[0], dtype=np.float64), np.asarray(w[1], dtype=np.float64)
    mag = np.hypot(u, v)
    top = max_magnitude if max_magnitude else (float(mag.max()) or 1.0)
    hue = (np.arctan2(v, u) % (2 * np.pi)) / (2 * np.pi)
    level = np.clip(mag / top, 0.0, 1.0)
    hsv = np.stack([hue, level, level], axis=-1)
    hsv8 = np.round(hsv * 255.0).astype(np.uint8)
    return np.asarray(Image.fromarray(hsv8, mode="HSV").convert("RGB"))


def cmd_export(cfg: dict, out: Path) -> Path:
    """PNGs of one test sequence, its true motion and the model's motion estimate."""
    from PIL import Image

    _, test_p = data_paths(cfg, out)
    test = _read(test_p)
    idx = int(cfg["export"]["sequence"])
    if not 0 <= idx < len(test):
        raise InvalidConfig(f"export.sequence {idx} out of range for {len(test)} sequences")
    d = out / f"run-{run_id(cfg)}" / "png"
    d.mkdir(parents=True, exist_ok=True)
    seq = test.frames[idx]
    sidecar: dict = {"frames": [], "flows": []}
    for t in range(min(int(cfg["export"]["frames"]), seq.shape[0])):
        sidecar["frames"].append(_gray_png(seq[t], d / f"frame_{t:03d}.png"))
    flows = {}
    if test.motions[idx] is not None:
        flows["true"] = test.motions[idx]
    ckpt = out / f"run-{run_id(cfg)}" / "model.ckpt"
    if ckpt.is_file():
        model, clim, _ = _load_run(cfg, out)
        k = model.config.k_input_frames
        hist = standardize(seq[:k], clim, test.region_ids[idx], test.start_days[idx])
        flows["estimated"] = estimate_motion(model, hist)
    top = max((float(np.hypot(w[0], w[1]).max()) for w in flows.values()), default=1.0) or 1.0
    for name, w in flows.items():
        Image.fromarray(flow_to_rgb(w, top), mode="RGB").save(d / f"flow_{name}.png")
        sidecar["flows"].append({"file": f"flow_{name}.png", "max_magnitude": top})
    (d / "scale.json").write_text(json.dumps(sidecar, indent=2) + "\n")
    return d


COMMANDS = {"gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "forecast": cmd_forecast, "export": cmd_export}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="advcast", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="JSON config file")
    parser.add_argument("--seed", type=int, default=None, help="override the master seed")
    parser.add_argument("--out", default="runs", help="output root (default: runs)")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.seed)
        result = COMMANDS[args.command](cfg, Path(args.out))
    except InvalidConfig as exc:
        print(f"advcast: bad config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"advcast: missing file: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (DatasetFormatError, CheckpointFormatError) as exc:
        print(f"advcast: corrupt input: {exc}", file=sys.stderr)
        return EXIT_CORRUPT
    except NonFiniteLoss as exc:
        print(f"advcast: training aborted: {exc}", file=sys.stderr)
        return EXIT_NAN
    except AdvcastError as exc:
        print(f"advcast: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    print(result)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())

"""Seeded training and evaluation runs.

A run writes ``metrics.csv`` (per-epoch losses and metrics, bit-reproducible),
``timing.csv`` (wall clock per phase, kept apart so the metrics stay
deterministic), ``model.ntf`` and a ``config.json`` sidecar that ``evaluate``
reads back.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import ntf
from .data import (gen_synthetic_ts, gen_toy_images, persistence_mse, read_images_csv,
                   read_series_csv, split_series)
from .errors import ConfigError
from .optim import AdamW, AdamWHparams
from .rng import SplitMix64
from .tensor import Tensor, cross_entropy, mse, no_grad
from .tsm2 import Tsm2, Tsm2Config
from .vim2 import Vim2, Vim2Config


@dataclass
class ExperimentConfig:
    model: dict
    data: dict = field(default_factory=dict)
    lr: float = 1e-3
    weight_decay: float = 0.05
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    epochs: int = 10
    batch_size: int = 32
    seed: int = 0
    out_dir: str = "runs/default"
    target: float | None = None  # stop once the validation metric reaches this

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown experiment keys: {sorted(unknown)}")
        if "model" not in d:
            raise ConfigError("experiment config needs a 'model' section")
        d = dict(d)
        if "betas" in d:
            d["betas"] = tuple(d["betas"])
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @property
    def kind(self) -> str:
        kind = self.model.get("model")
        if kind not in ("tsm2", "vim2"):
            raise ConfigError(f"model.model must be 'tsm2' or 'vim2', got {kind!r}")
        return kind

    def hparams(self) -> AdamWHparams:
        return AdamWHparams(self.lr, self.weight_decay, tuple(self.betas), self.eps)


def build_model(model_cfg: dict, seed: int):
    kind = model_cfg.get("model")
    if kind == "tsm2":
        return Tsm2(Tsm2Config.from_dict(model_cfg), seed)
    if kind == "vim2":
        return Vim2(Vim2Config.from_dict(model_cfg), seed)
    raise ConfigError(f"unknown model {kind!r}")


# -- data ----------------------------------------------------------------------

@dataclass
class ImageSplits:
    x_train: np.ndarray
    y_train: np.ndarray
    x_val: np.ndarray
    y_val: np.ndarray


def load_data(cfg: ExperimentConfig):
    d = dict(cfg.data)
    seed = d.pop("seed", cfg.seed)
    src = d.pop("dir", None)
    val_frac = d.pop("val_frac", 0.2)
    if cfg.kind == "tsm2":
        m = Tsm2Config.from_dict(cfg.model)
        stride, val_stride = d.pop("stride", 1), d.pop("val_stride", None)
        if src is not None:
            series = read_series_csv(Path(src) / "series.csv")
        else:
            series = gen_synthetic_ts(d.pop("M", m.n_vars), d.pop("T", 2000), seed, **d)
        return split_series(series, m.history, m.horizon, val_frac, stride, val_stride)
    if src is not None:
        images, labels = read_images_csv(Path(src) / "images.csv")
    else:
        images, labels = gen_toy_images(d.pop("classes", 3), d.pop("n", 480), seed, **d)
    cut = int(round(len(labels) * (1 - val_frac)))
    return ImageSplits(images[:cut], labels[:cut], images[cut:], labels[cut:])


# -- evaluation ----------------------------------------------------------------

def _batches(n: int, size: int):
    for i in range(0, n, size):
        yield np.arange(i, min(i + size, n))


def evaluate_model(model, kind: str, data, batch_size: int = 64) -> dict:
    with no_grad():
        if kind == "tsm2":
            val = data.val
            se = 0.0
            for idx in _batches(len(val), batch_size):
                pred = model(val.batch.x[idx]).data
                se += float(((pred - val.target[idx]) ** 2).sum())
            val_mse = se / val.target.size
            base = persistence_mse(val)
            return {"val_mse": val_mse, "baseline_mse": base, "ratio": val_mse / base}
        correct, loss = 0, 0.0
        for idx in _batches(len(data.y_val), batch_size):
            logits = model(data.x_val[idx])
            loss += float(cross_entropy(logits, data.y_val[idx]).data) * len(idx)
            correct += int((logits.data.argmax(axis=1) == data.y_val[idx]).sum())
        n = len(data.y_val)
        return {"val_loss": loss / n, "val_acc": correct / n}


def _reached(kind: str, metrics: dict, target) -> bool:
    if target is None:
        return False
    return metrics["ratio"] <= target if kind == "tsm2" else metrics["val_acc"] >= target


# -- records -------------------------------------------------------------------

class CsvLog:
    """Append-only CSV: header on creation, one flushed row per call."""

    def __init__(self, path: Path, columns: list[str]):
        self.path, self.columns = Path(path), columns
        with open(self.path, "w", newline="") as fh:
            csv.writer(fh).writerow(columns)

    def append(self, row: dict) -> None:
        with open(self.path, "a", newline="") as fh:
            csv.writer(fh).writerow([_fmt(row[c]) for c in self.columns])


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else v


@dataclass
class RunRecord:
    rows: list
    timings: list
    out_dir: Path
    reached_at: int | None

    @property
    def final(self) -> dict:
        return self.rows[-1]


def train(cfg: ExperimentConfig) -> RunRecord:
    kind = cfg.kind
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = load_data(cfg)
    model = build_model(cfg.model, cfg.seed)
    opt = AdamW(model.parameters(), cfg.hparams())
    order_rng = SplitMix64(cfg.seed).fork(1)

    if kind == "tsm2":
        x_tr, y_tr = data.train.batch.x, data.train.target
        cols = ["epoch", "train_loss", "val_mse", "baseline_mse", "ratio"]
    else:
        x_tr, y_tr = data.x_train, data.y_train
        cols = ["epoch", "train_loss", "val_loss", "val_acc"]
    metrics_log = CsvLog(out / "metrics.csv", cols)
    timing_log = CsvLog(out / "timing.csv", ["epoch", "phase", "seconds"])
    rows, timings, reached = [], [], None

    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        perm = order_rng.permutation(len(y_tr))
        total, count = 0.0, 0
        for i in range(0, len(perm), cfg.batch_size):
            idx = perm[i:i + cfg.batch_size]
            out_t = model(x_tr[idx])
            loss = mse(out_t, y_tr[idx]) if kind == "tsm2" else cross_entropy(out_t, y_tr[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
            total += float(loss.data) * len(idx)
            count += len(idx)
        t1 = time.perf_counter()
        row = {"epoch": epoch, "train_loss": total / count, **evaluate_model(model, kind, data)}
        t2 = time.perf_counter()
        metrics_log.append(row)
        for phase, secs in (("train", t1 - t0), ("eval", t2 - t1)):
            timing_log.append({"epoch": epoch, "phase": phase, "seconds": secs})
            timings.append((epoch, phase, secs))
        rows.append(row)
        if _reached(kind, row, cfg.target):
            reached = epoch
            break

    ntf.save(out / "model.ntf", model.state_dict())
    (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
    return RunRecord(rows, timings, out, reached)


def evaluate(ckpt, data_dir=None) -> dict:
    """Reload a checkpoint via its ``config.json`` sidecar and score the validation split.

    ``data_dir`` overrides the dataset location recorded in the config.
    """
    ckpt = Path(ckpt)
    sidecar = ckpt.with_name("config.json")
    if not sidecar.exists():
        raise ConfigError(f"no config.json next to {ckpt}")
    cfg = ExperimentConfig.load(sidecar)
    if data_dir is not None:
        cfg.data = {**cfg.data, "dir": str(data_dir)}
    model = build_model(cfg.model, cfg.seed)
    model.load_state_dict(ntf.load(ckpt))
    return evaluate_model(model, cfg.kind, load_data(cfg))


# -- desk presets ----------------------------------------------------------------

def desk_tsm2(out_dir: str = "runs/tsm2", seed: int = 0) -> ExperimentConfig:
    model = {"model": "tsm2", **{k: v for k, v in Tsm2Config(engine="fused").to_dict().items()
                                 if k != "model"}}
    return ExperimentConfig(model=model, data={"T": 1200, "stride": 2, "val_stride": 2},
                            epochs=200, batch_size=32, seed=seed, out_dir=out_dir, target=0.8)


def desk_vim2(out_dir: str = "runs/vim2", seed: int = 0) -> ExperimentConfig:
    model = Vim2Config.desk(num_classes=3, engine="fused").to_dict()
    return ExperimentConfig(model=model, data={"classes": 3, "n": 900, "jitter": 4}, epochs=50,
                            batch_size=16, seed=seed, out_dir=out_dir, target=0.9)

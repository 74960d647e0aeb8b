"""Deterministic desk-scale datasets, windowing and CSV ingestion.

All randomness comes from :class:`SplitMix64`, so a seed fixes every byte.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator

import numpy as np

from .errors import DimensionError, ValidationError
from .rng import SplitMix64
from .tsm2 import SeriesBatch

PERIODS = (12, 16, 24, 32, 48)
LAG = 5


def gen_synthetic_ts(M: int, T: int, seed: int, noise: float = 0.05,
                     coupling: float = 0.5, lag: int = LAG) -> np.ndarray:
    """``[M, T]`` series: two sinusoids per variate, lag coupling, Gaussian noise.

    Each variate sums two sinusoids with integer periods, so with ``noise=0``
    and ``coupling=0`` it repeats exactly. Coupling runs over variates in
    order: ``x[m, t] += coupling * x[m-1, t-lag]``.
    """
    if M < 2:
        raise ValidationError("need at least two variates")
    rng = SplitMix64(seed)
    periods = np.array(PERIODS)[rng.integers(len(PERIODS), 2 * M).reshape(M, 2)]
    amps = rng.uniform((M, 2), 0.5, 1.0)
    phases = rng.uniform((M, 2), 0.0, 2 * math.pi)
    t = np.arange(T)
    x = np.zeros((M, T))
    for m in range(M):
        for k in range(2):
            P = periods[m, k]
            x[m] += amps[m, k] * np.sin(2 * math.pi * (t % P) / P + phases[m, k])
    if coupling:
        for m in range(1, M):
            x[m, lag:] += coupling * x[m - 1, :-lag]
    if noise:
        x = x + rng.normal((M, T), noise)
    return x


@dataclass
class Windows:
    batch: SeriesBatch
    target: np.ndarray

    def __len__(self) -> int:
        return len(self.target)

    def take(self, idx) -> "Windows":
        return Windows(SeriesBatch(self.batch.x[idx], self.batch.horizon), self.target[idx])


def make_windows(series: np.ndarray, history: int, horizon: int, stride: int = 1) -> Windows:
    """Slide over ``series[M, T]``: inputs ``[n, M, history]``, targets ``[n, M, horizon]``."""
    M, T = series.shape
    n = (T - history - horizon) // stride + 1
    if n < 1:
        raise DimensionError(f"series of length {T} too short for {history}+{horizon}")
    starts = np.arange(n) * stride
    idx = starts[:, None] + np.arange(history + horizon)
    w = np.transpose(series[:, idx], (1, 0, 2))
    return Windows(SeriesBatch(np.ascontiguousarray(w[..., :history]), horizon),
                   np.ascontiguousarray(w[..., history:]))


@dataclass
class SeriesSplits:
    train: Windows
    val: Windows
    mean: np.ndarray
    std: np.ndarray


def split_series(series: np.ndarray, history: int, horizon: int, val_frac: float = 0.2,
                 stride: int = 1, val_stride: int | None = None) -> SeriesSplits:
    """Chronological split, standardised with training-segment statistics.

    The validation segment starts ``history`` steps before its first target so
    no target value is ever seen in training.
    """
    M, T = series.shape
    cut = int(round(T * (1 - val_frac)))
    train_raw = series[:, :cut]
    mean = train_raw.mean(axis=1, keepdims=True)
    std = train_raw.std(axis=1, keepdims=True)
    z = (series - mean) / std
    train = make_windows(z[:, :cut], history, horizon, stride)
    val = make_windows(z[:, cut - history:], history, horizon, val_stride or stride)
    return SeriesSplits(train, val, mean[:, 0], std[:, 0])


def persistence_forecast(x: np.ndarray, horizon: int) -> np.ndarray:
    """Repeat the last observed value over the horizon."""
    return np.repeat(x[..., -1:], horizon, axis=-1)


def persistence_mse(windows: Windows) -> float:
    pred = persistence_forecast(windows.batch.x, windows.batch.horizon)
    return float(np.mean((pred - windows.target) ** 2))


# -- toy images ----------------------------------------------------------------

SHAPES = ("bars", "cross", "blob")
IMAGE_SIZE = 32


def _draw(kind: str, cy: float, cx: float, size: int, r: SplitMix64) -> np.ndarray:
    yy, xx = np.mgrid[:size, :size].astype(np.float64)
    if kind == "bars":
        # two parallel bars, horizontal or vertical
        vertical = r.uniform(1)[0] < 0.5
        a, b = (xx, yy) if vertical else (yy, xx)
        ca, cb = (cx, cy) if vertical else (cy, cx)
        on = ((np.abs(a - ca + 3) <= 1) | (np.abs(a - ca - 3) <= 1)) & (np.abs(b - cb) <= 7)
        return on.astype(np.float64)
    if kind == "cross":
        on = ((np.abs(yy - cy) <= 1) & (np.abs(xx - cx) <= 7)) | \
             ((np.abs(xx - cx) <= 1) & (np.abs(yy - cy) <= 7))
        return on.astype(np.float64)
    if kind == "blob":
        s = 2.0 + 2.0 * r.uniform(1)[0]
        return np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * s * s))
    raise ValidationError(f"unknown shape {kind!r}")


def gen_toy_images(classes: int, n: int, seed: int, jitter: int = 8,
                   noise: float = 0.05) -> tuple[np.ndarray, np.ndarray]:
    """``n`` images ``[n, 3, 32, 32]`` and labels; class ``k`` draws ``SHAPES[k]``.

    Labels cycle through the classes before shuffling, so counts differ by at
    most one. Each image gets a random centre offset within ``jitter`` pixels,
    a random colour and additive noise.
    """
    if not 1 <= classes <= len(SHAPES):
        raise ValidationError(f"classes must be in 1..{len(SHAPES)}")
    rng = SplitMix64(seed)
    labels = (np.arange(n) % classes)[rng.permutation(n)]
    images = np.empty((n, 3, IMAGE_SIZE, IMAGE_SIZE))
    c0 = (IMAGE_SIZE - 1) / 2
    for i, k in enumerate(labels):
        r = rng.fork(i)
        dy, dx = r.integers(2 * jitter + 1, 2) - jitter
        colour = r.uniform(3, 0.4, 1.0)
        shape = _draw(SHAPES[k], c0 + dy, c0 + dx, IMAGE_SIZE, r)
        images[i] = colour[:, None, None] * shape + r.normal((3, IMAGE_SIZE, IMAGE_SIZE), noise)
    return images, labels


# -- CSV ingestion -------------------------------------------------------------

def _rows(path) -> Iterator[list[str]]:
    with open(path, newline="") as fh:
        yield from csv.reader(fh)


def _check_header(header: list[str], lead: list[str], stem: str, path) -> int:
    n = len(header) - len(lead)
    if header[: len(lead)] != lead or n < 1 or header[len(lead):] != [f"{stem}_{i}" for i in range(n)]:
        raise ValidationError(f"{path}: bad header {header[:len(lead) + 2]}...")
    return n


def write_series_csv(path, series: np.ndarray, times=None) -> None:
    M, T = series.shape
    times = np.arange(T) if times is None else times
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time"] + [f"var_{m}" for m in range(M)])
        for t in range(T):
            w.writerow([times[t]] + [repr(float(v)) for v in series[:, t]])


def read_series_csv(path) -> np.ndarray:
    """Stream ``time,var_0..`` rows into ``[M, T]``; time must strictly increase."""
    rows = _rows(path)
    try:
        header = next(rows)
    except StopIteration:
        raise ValidationError(f"{path}: empty file") from None
    M = _check_header(header, ["time"], "var", path)
    cols, last = [], None
    for lineno, row in enumerate(rows, start=2):
        if len(row) != M + 1:
            raise ValidationError(f"{path}:{lineno}: expected {M + 1} fields, got {len(row)}")
        t = float(row[0])
        if last is not None and not t > last:
            raise ValidationError(f"{path}:{lineno}: time {t} not after {last}")
        last = t
        cols.append([float(v) for v in row[1:]])
    if not cols:
        raise ValidationError(f"{path}: no data rows")
    return np.array(cols).T.copy()


def write_static_csv(path, static: np.ndarray) -> None:
    M, C = static.shape
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["var"] + [f"feat_{c}" for c in range(C)])
        for m in range(M):
            w.writerow([m] + [repr(float(v)) for v in static[m]])


def read_static_csv(path) -> np.ndarray:
    """``var,feat_0..`` rows (variates 0..M-1 in order) into ``[M, C_S]``."""
    rows = _rows(path)
    C = _check_header(next(rows), ["var"], "feat", path)
    out = []
    for lineno, row in enumerate(rows, start=2):
        if len(row) != C + 1 or int(row[0]) != len(out):
            raise ValidationError(f"{path}:{lineno}: expected variate {len(out)} with {C} features")
        out.append([float(v) for v in row[1:]])
    return np.array(out)


def write_future_csv(path, future: np.ndarray) -> None:
    M, TZ, C = future.shape
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["time", "var"] + [f"feat_{c}" for c in range(C)])
        for t in range(TZ):
            for m in range(M):
                w.writerow([t, m] + [repr(float(v)) for v in future[m, t]])


def read_future_csv(path) -> np.ndarray:
    """``time,var,feat_0..`` rows into ``[M, T_Z, C_Z]``; per variate, time strictly increases."""
    rows = _rows(path)
    C = _check_header(next(rows), ["time", "var"], "feat", path)
    per: dict[int, list] = {}
    last: dict[int, float] = {}
    for lineno, row in enumerate(rows, start=2):
        if len(row) != C + 2:
            raise ValidationError(f"{path}:{lineno}: expected {C + 2} fields, got {len(row)}")
        t, m = float(row[0]), int(row[1])
        if m in last and not t > last[m]:
            raise ValidationError(f"{path}:{lineno}: time {t} not after {last[m]} for var {m}")
        last[m] = t
        per.setdefault(m, []).append([float(v) for v in row[2:]])
    if sorted(per) != list(range(len(per))):
        raise ValidationError(f"{path}: variates must be 0..M-1")
    lengths = {len(v) for v in per.values()}
    if len(lengths) != 1:
        raise ValidationError(f"{path}: variates have different lengths {sorted(lengths)}")
    return np.array([per[m] for m in range(len(per))])


def write_images_csv(path, images: np.ndarray, labels: np.ndarray) -> None:
    n = len(labels)
    flat = images.reshape(n, -1)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label"] + [f"px_{i}" for i in range(flat.shape[1])])
        for i in range(n):
            w.writerow([int(labels[i])] + [repr(float(v)) for v in flat[i]])


def read_images_csv(path, channels: int = 3) -> tuple[np.ndarray, np.ndarray]:
    rows = _rows(path)
    P = _check_header(next(rows), ["label"], "px", path)
    side = math.isqrt(P // channels)
    if channels * side * side != P:
        raise ValidationError(f"{path}: {P} pixels is not {channels} square channels")
    labels, pix = [], []
    for lineno, row in enumerate(rows, start=2):
        if len(row) != P + 1:
            raise ValidationError(f"{path}:{lineno}: expected {P + 1} fields, got {len(row)}")
        labels.append(int(row[0]))
        pix.append([float(v) for v in row[1:]])
    return np.array(pix).reshape(-1, channels, side, side), np.array(labels)


def save_dataset(out: Path, kind: str, seed: int, **kw) -> list[Path]:
    """Generate and write a dataset directory; returns written files.

    Image defaults (900 images, jitter 4) match the desk classification preset.
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    if kind == "ts":
        series = gen_synthetic_ts(kw.pop("M", 7), kw.pop("T", 2000), seed, **kw)
        path = out / "series.csv"
        write_series_csv(path, series)
        return [path]
    if kind == "img":
        images, labels = gen_toy_images(kw.pop("classes", 3), kw.pop("n", 900), seed,
                                        kw.pop("jitter", 4), **kw)
        path = out / "images.csv"
        write_images_csv(path, images, labels)
        return [path]
    raise ValidationError(f"unknown dataset kind {kind!r}")

"""Wall-time and peak-allocation ladders for the mixers.

Each size gets one warm-up call, then ``reps`` timed forward calls (median
reported) and one traced call for the allocation peak.
"""

from __future__ import annotations

import statistics
import time
import tracemalloc
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .mixers import ChannelMixer, TokenMixer
from .nn import LayerNorm
from .rng import SplitMix64
from .tensor import Tensor, no_grad
from .wiring import MixerStack, Residual

COMPONENTS = ("token", "channel", "block")


@dataclass
class BenchRow:
    size: int
    seconds: float
    peak_bytes: int


def parse_sizes(spec: str) -> list[int]:
    """``"1024:65536"`` -> doubling ladder; ``"1024,4096"`` -> explicit list."""
    if ":" in spec:
        lo, hi = (int(v) for v in spec.split(":"))
        if lo < 1 or hi < lo:
            raise ValidationError(f"bad size range {spec!r}")
        out = [lo]
        while out[-1] * 2 <= hi:
            out.append(out[-1] * 2)
        return out
    return [int(v) for v in spec.split(",")]


def _setup(component: str, size: int, width: int, d_state: int, engine: str, seed: int):
    rng = SplitMix64(seed)
    if component == "token":
        # sequence length ``size`` of ``width`` features
        mixer = TokenMixer(width, rng, N=d_state, engine=engine)
        x = rng.normal((1, size, width))
    elif component == "channel":
        # ``size`` channels scanned, ``width`` tokens as features
        mixer = ChannelMixer(width, rng, N=d_state, engine=engine)
        x = rng.normal((1, width, size))
    elif component == "block":
        # one token + channel block over ``size`` tokens; the channel mixer's
        # hidden width is held fixed so its parameters stay linear in ``size``
        token = Residual(LayerNorm(width), TokenMixer(width, rng, N=d_state, engine=engine))
        chan = Residual(LayerNorm(width), ChannelMixer(size, rng, E=width, N=d_state, engine=engine))
        mixer = MixerStack([[token]], [chan])
        x = rng.normal((1, size, width))
    else:
        raise ValidationError(f"unknown component {component!r}; expected one of {COMPONENTS}")
    return mixer, Tensor(x)


def bench_scaling(component: str, sizes, reps: int = 5, width: int = 16, d_state: int = 16,
                  engine: str = "parallel", seed: int = 0) -> list[BenchRow]:
    rows = []
    for size in sizes:
        mixer, x = _setup(component, size, width, d_state, engine, seed)
        with no_grad():
            mixer(x)
            times = []
            for _ in range(reps):
                t0 = time.perf_counter()
                mixer(x)
                times.append(time.perf_counter() - t0)
            tracemalloc.start()
            try:
                mixer(x)
                _, peak = tracemalloc.get_traced_memory()
            finally:
                tracemalloc.stop()
        rows.append(BenchRow(size, statistics.median(times), peak))
    return rows


def ratios(rows: list[BenchRow], attr: str = "seconds") -> list[float]:
    vals = [getattr(r, attr) for r in rows]
    return [b / a for a, b in zip(vals, vals[1:])]

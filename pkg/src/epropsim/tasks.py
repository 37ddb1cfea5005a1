"""Benchmark task generators, the N-MNIST event-file loader, and the scaling workload.

Pattern generation freezes a Poisson input pattern and targets built from four
seeded sinusoids; evidence accumulation emits left/right cue populations with
a delayed recall window; the N-MNIST loader decodes the published 40-bit AER
binary layout; the scaling generator builds an ignore-and-fire network with
fixed in-degrees.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .signals import TargetSignal

GRID = 34  # N-MNIST pixel grid is 34 x 34
EVENT_BYTES = 5


@dataclass
class SampleSpec:
    """One training sample: input spikes, target, window, duration.

    ``input_spikes`` holds one array of spike times per input channel, times
    in [0, n_steps); time u drives the membrane at step u + 1 of the engine's
    1-based step grid.
    """

    n_steps: int
    input_spikes: list[np.ndarray]
    target: TargetSignal
    label: int | None = None

    def __post_init__(self) -> None:
        for ch in self.input_spikes:
            if len(ch) and (ch.min() < 0 or ch.max() >= self.n_steps):
                raise ValueError("spike times must lie in [0, n_steps)")
        if self.target.values.shape[0] != self.n_steps:
            raise ValueError("target length must equal sample duration")

    def spike_matrix(self) -> np.ndarray:
        """Dense (n_steps, n_channels) binary spike raster."""
        x = np.zeros((self.n_steps, len(self.input_spikes)))
        for i, ch in enumerate(self.input_spikes):
            x[ch.astype(int), i] = 1.0
        return x


def _poisson_channels(
    rng: np.random.Generator, n_channels: int, n_steps: int, rate_hz: float, dt_ms: float
) -> list[np.ndarray]:
    p = rate_hz * dt_ms / 1000.0
    draws = rng.random((n_steps, n_channels)) < p
    return [np.flatnonzero(draws[:, i]) for i in range(n_channels)]


PATTERN_FREQS_HZ = (1.0, 2.0, 3.0, 5.0)


def gen_pattern_task(
    seed: int,
    n_steps: int = 1000,
    n_in: int = 100,
    n_readouts: int = 1,
    rate_hz: float = 50.0,
    dt_ms: float = 1.0,
    amp_range: tuple[float, float] = (0.5, 2.0),
) -> SampleSpec:
    """Frozen-noise regression sample: targets are sums of four sinusoids.

    The same seed always yields the identical sample, so every training
    iteration replays one frozen input pattern.
    """
    rng = np.random.default_rng(seed)
    spikes = _poisson_channels(rng, n_in, n_steps, rate_hz, dt_ms)
    t_sec = np.arange(1, n_steps + 1) * dt_ms / 1000.0
    targets = np.zeros((n_steps, n_readouts))
    for k in range(n_readouts):
        for f in PATTERN_FREQS_HZ:
            amp = rng.uniform(*amp_range)
            phase = rng.uniform(0.0, 2.0 * math.pi)
            targets[:, k] += amp * np.sin(2.0 * math.pi * f * t_sec + phase)
    window = np.ones(n_steps, dtype=int)
    return SampleSpec(n_steps, spikes, TargetSignal(targets, window))


@dataclass(frozen=True)
class EvidenceTaskConfig:
    """Timing and population layout of the evidence-accumulation task."""

    n_cues: int = 5
    cue_steps: int = 60
    gap_steps: int = 20
    delay_steps: int = 400
    recall_steps: int = 120
    n_left: int = 10
    n_right: int = 10
    n_background: int = 10
    n_recall: int = 10
    cue_rate_hz: float = 100.0
    background_rate_hz: float = 10.0
    recall_rate_hz: float = 100.0
    dt_ms: float = 1.0

    def __post_init__(self) -> None:
        if self.n_cues < 1:
            raise ValueError("need at least one cue")

    @property
    def n_steps(self) -> int:
        return self.n_cues * (self.cue_steps + self.gap_steps) + self.delay_steps + self.recall_steps

    @property
    def n_channels(self) -> int:
        return self.n_left + self.n_right + self.n_background + self.n_recall


def gen_evidence_task(rng: np.random.Generator, cfg: EvidenceTaskConfig) -> SampleSpec:
    """Random cue sequence; label is the majority side (ties are redrawn)."""
    while True:
        sides = rng.integers(0, 2, size=cfg.n_cues)
        n_right = int(sides.sum())
        if 2 * n_right != cfg.n_cues:
            break
    label = 1 if 2 * n_right > cfg.n_cues else 0
    n_steps = cfg.n_steps
    recall_start = n_steps - cfg.recall_steps

    active = np.zeros((n_steps, cfg.n_channels), dtype=bool)
    sl_left = slice(0, cfg.n_left)
    sl_right = slice(cfg.n_left, cfg.n_left + cfg.n_right)
    sl_bg = slice(cfg.n_left + cfg.n_right, cfg.n_left + cfg.n_right + cfg.n_background)
    sl_recall = slice(cfg.n_left + cfg.n_right + cfg.n_background, cfg.n_channels)
    for c, side in enumerate(sides):
        start = c * (cfg.cue_steps + cfg.gap_steps)
        active[start : start + cfg.cue_steps, sl_right if side else sl_left] = True
    active[:, sl_bg] = True
    active[recall_start:, sl_recall] = True

    rates = np.zeros(cfg.n_channels)
    rates[sl_left] = cfg.cue_rate_hz
    rates[sl_right] = cfg.cue_rate_hz
    rates[sl_bg] = cfg.background_rate_hz
    rates[sl_recall] = cfg.recall_rate_hz
    p = rates * cfg.dt_ms / 1000.0
    draws = (rng.random((n_steps, cfg.n_channels)) < p) & active
    spikes = [np.flatnonzero(draws[:, i]) for i in range(cfg.n_channels)]

    targets = np.zeros((n_steps, 2))
    targets[:, label] = 1.0
    window = np.zeros(n_steps, dtype=int)
    window[recall_start:] = 1
    return SampleSpec(n_steps, spikes, TargetSignal(targets, window), label=label)


# ---------------------------------------------------------------------------
# N-MNIST address-event representation
# ---------------------------------------------------------------------------


class NmnistFormatError(ValueError):
    """Malformed event file; the message names the offending byte offset."""


@dataclass(frozen=True)
class NmnistEvent:
    x: int
    y: int
    polarity: int
    timestamp: int  # microseconds

    def __post_init__(self) -> None:
        if not (0 <= self.x < GRID and 0 <= self.y < GRID):
            raise ValueError("pixel coordinates must lie on the 34 x 34 grid")
        if self.polarity not in (0, 1):
            raise ValueError("polarity must be 0 or 1")
        if self.timestamp < 0 or self.timestamp >= 1 << 23:
            raise ValueError("timestamp must fit in 23 bits")


def decode_events(data: bytes) -> list[NmnistEvent]:
    """Decode 5-byte big-endian AER events.

    byte0 = x, byte1 = y, byte2 bit 7 = polarity, remaining 23 bits =
    timestamp in microseconds.  Raises :class:`NmnistFormatError` naming the
    byte offset for truncation, out-of-grid coordinates, or non-monotone
    timestamps.
    """
    if len(data) % EVENT_BYTES:
        raise NmnistFormatError(
            f"truncated event file: {len(data)} bytes is not a multiple of {EVENT_BYTES} "
            f"(trailing fragment at offset {len(data) - len(data) % EVENT_BYTES})"
        )
    events = []
    last_ts = -1
    for off in range(0, len(data), EVENT_BYTES):
        x, y, b2, b3, b4 = data[off : off + EVENT_BYTES]
        if x >= GRID or y >= GRID:
            raise NmnistFormatError(f"pixel ({x}, {y}) off the 34 x 34 grid at offset {off}")
        polarity = b2 >> 7
        ts = ((b2 & 0x7F) << 16) | (b3 << 8) | b4
        if ts < last_ts:
            raise NmnistFormatError(f"non-monotone timestamp {ts} at offset {off}")
        last_ts = ts
        events.append(NmnistEvent(x=x, y=y, polarity=polarity, timestamp=ts))
    return events


def encode_events(events: list[NmnistEvent]) -> bytes:
    """Exact inverse of :func:`decode_events` (used by tests and the synthesizer)."""
    out = bytearray()
    for ev in events:
        out.append(ev.x)
        out.append(ev.y)
        out.append((ev.polarity << 7) | ((ev.timestamp >> 16) & 0x7F))
        out.append((ev.timestamp >> 8) & 0xFF)
        out.append(ev.timestamp & 0xFF)
    return bytes(out)


def _digit_files(root: Path, digits) -> list[tuple[int, Path]]:
    pairs = []
    for d in digits:
        ddir = root / str(d)
        if not ddir.is_dir():
            raise FileNotFoundError(f"missing digit directory {ddir}")
        for f in sorted(ddir.iterdir()):
            if f.is_file():
                pairs.append((d, f))
    return pairs


def build_pixel_map(
    root: str | os.PathLike,
    digits=(0, 1, 2, 3, 4, 5, 6, 7, 8, 9),
    min_events: int = 2,
    limit_per_digit: int | None = None,
) -> np.ndarray:
    """Map retained pixels to input channels.

    Counts ON events per pixel across the train split and drops pixels whose
    total falls below ``min_events``; returns an array of shape (34*34,) with
    channel indices, -1 for dropped pixels.
    """
    counts = np.zeros(GRID * GRID, dtype=int)
    per_digit: dict[int, int] = {d: 0 for d in digits}
    for d, f in _digit_files(Path(root), digits):
        if limit_per_digit is not None and per_digit[d] >= limit_per_digit:
            continue
        per_digit[d] += 1
        for ev in decode_events(f.read_bytes()):
            if ev.polarity == 1:
                counts[ev.y * GRID + ev.x] += 1
    keep = counts >= min_events
    channel = np.full(GRID * GRID, -1, dtype=int)
    channel[keep] = np.arange(int(keep.sum()))
    return channel


def load_nmnist(
    root: str | os.PathLike,
    pixel_map: np.ndarray,
    digits=(0, 1, 2, 3, 4, 5, 6, 7, 8, 9),
    n_steps: int = 310,
    dt_ms: float = 1.0,
    limit_per_digit: int | None = None,
    window_open_step: int = 0,
):
    """Yield (label, SampleSpec) pairs from a digit-directory tree.

    Keeps ON events only, maps retained pixels to channels, and bins
    timestamps onto the solver grid; events past ``n_steps`` are dropped.
    One-hot targets cover the classes in ``digits``.
    """
    digit_list = list(digits)
    n_channels = int(pixel_map.max()) + 1
    per_digit: dict[int, int] = {d: 0 for d in digit_list}
    step_us = dt_ms * 1000.0
    for d, f in _digit_files(Path(root), digit_list):
        if limit_per_digit is not None and per_digit[d] >= limit_per_digit:
            continue
        per_digit[d] += 1
        by_channel: list[list[int]] = [[] for _ in range(n_channels)]
        for ev in decode_events(f.read_bytes()):
            if ev.polarity != 1:
                continue
            ch = pixel_map[ev.y * GRID + ev.x]
            if ch < 0:
                continue
            step = int(ev.timestamp // step_us)
            if step < n_steps:
                by_channel[ch].append(step)
        spikes = [np.array(sorted(set(c)), dtype=int) for c in by_channel]
        cls = digit_list.index(d)
        targets = np.zeros((n_steps, len(digit_list)))
        targets[:, cls] = 1.0
        window = np.zeros(n_steps, dtype=int)
        window[window_open_step:] = 1
        yield d, SampleSpec(n_steps, spikes, TargetSignal(targets, window), label=cls)


_DIGIT_STROKES = {
    0: [((10, 7), (24, 7)), ((10, 26), (24, 26)), ((10, 7), (10, 26)), ((24, 7), (24, 26))],
    1: [((8, 17), (26, 17)), ((8, 17), (12, 13))],
    2: [((9, 8), (9, 25)), ((9, 25), (17, 25)), ((17, 8), (17, 25)), ((17, 8), (25, 8)), ((25, 8), (25, 25))],
    3: [((9, 8), (9, 25)), ((17, 10), (17, 25)), ((25, 8), (25, 25)), ((9, 25), (25, 25))],
    4: [((8, 9), (17, 9)), ((17, 9), (17, 25)), ((8, 22), (26, 22))],
    5: [((9, 8), (9, 25)), ((9, 8), (17, 8)), ((17, 8), (17, 25)), ((17, 25), (25, 25)), ((25, 8), (25, 25))],
    6: [((9, 8), (25, 8)), ((17, 8), (17, 25)), ((25, 8), (25, 25)), ((17, 25), (25, 25))],
    7: [((9, 8), (9, 25)), ((9, 25), (26, 15))],
    8: [((10, 8), (24, 8)), ((10, 25), (24, 25)), ((10, 8), (10, 25)), ((24, 8), (24, 25)), ((17, 8), (17, 25))],
    9: [((9, 8), (17, 8)), ((9, 8), (9, 25)), ((17, 8), (17, 25)), ((9, 25), (24, 25))],
}


def _digit_pixels(digit: int) -> list[tuple[int, int]]:
    pixels = set()
    for (r0, c0), (r1, c1) in _DIGIT_STROKES[digit]:
        n = max(abs(r1 - r0), abs(c1 - c0)) + 1
        for i in range(n):
            r = round(r0 + (r1 - r0) * i / max(n - 1, 1))
            c = round(c0 + (c1 - c0) * i / max(n - 1, 1))
            pixels.add((r, c))
    return sorted(pixels)


def gen_synthetic_nmnist(
    root: str | os.PathLike,
    digits=(0, 1),
    n_per_digit: int = 50,
    seed: int = 0,
    saccade_us: int = 100_000,
    p_event: float = 0.55,
    jitter_px: int = 1,
) -> Path:
    """Write a synthetic dataset in the N-MNIST binary layout.

    Each sample traces the digit's stroke pixels over three saccade sweeps
    with positional jitter and per-pixel event dropout, mimicking the timing
    structure of the recorded dataset; used where the real files are
    unavailable.
    """
    root = Path(root)
    rng = np.random.default_rng(seed)
    for d in digits:
        (root / str(d)).mkdir(parents=True, exist_ok=True)
        base = _digit_pixels(d)
        for n in range(n_per_digit):
            events = []
            for sacc in range(3):
                t0 = sacc * saccade_us
                order = rng.permutation(len(base))
                for rank, idx in enumerate(order):
                    if rng.random() > p_event:
                        continue
                    r, c = base[idx]
                    r = min(GRID - 1, max(0, r + rng.integers(-jitter_px, jitter_px + 1)))
                    c = min(GRID - 1, max(0, c + rng.integers(-jitter_px, jitter_px + 1)))
                    ts = t0 + int(rank * saccade_us / (len(base) + 1)) + int(rng.integers(0, 400))
                    polarity = 1 if rng.random() < 0.85 else 0
                    events.append(NmnistEvent(x=int(c), y=int(r), polarity=polarity, timestamp=min(ts, (1 << 23) - 1)))
            events.sort(key=lambda e: e.timestamp)
            (root / str(d) / f"{n:05d}.bin").write_bytes(encode_events(events))
    return root


# ---------------------------------------------------------------------------
# Scaling workload
# ---------------------------------------------------------------------------


@dataclass
class ScalingNetwork:
    """Ignore-and-fire network description for the scaling benchmark.

    In-degrees stay fixed as populations scale, so synapse counts grow
    linearly with ``scale``; recurrent wiring excludes autapses and
    multapses.  Connectivity is stored per projection as (sources, targets)
    index arrays.
    """

    n_rec: int
    n_in: int
    n_out: int
    period: int
    phases: np.ndarray
    in_src: np.ndarray
    in_dst: np.ndarray
    rec_src: np.ndarray
    rec_dst: np.ndarray
    out_src: np.ndarray
    out_dst: np.ndarray
    fb_src: np.ndarray
    fb_dst: np.ndarray
    input_rate_hz: float = 5.0
    dt_ms: float = 1.0


def _draw_indegree(
    rng: np.random.Generator, n_src: int, n_dst: int, indegree: int, avoid_self: bool
) -> tuple[np.ndarray, np.ndarray]:
    limit = n_src - 1 if avoid_self else n_src
    if indegree > limit:
        raise ValueError(
            f"in-degree {indegree} impossible from {n_src} sources without multapses"
        )
    src = np.empty((n_dst, indegree), dtype=np.int64)
    for j in range(n_dst):
        draw = rng.choice(n_src - 1 if avoid_self else n_src, size=indegree, replace=False)
        if avoid_self:
            draw = draw + (draw >= j)
        src[j] = draw
    dst = np.repeat(np.arange(n_dst, dtype=np.int64), indegree)
    return src.ravel(), dst


def gen_scaling_network(
    scale: float = 1.0,
    seed: int = 0,
    n_rec_base: int = 10_000,
    n_in_base: int = 1000,
    n_out_base: int = 10,
    indeg_in: int = 100,
    indeg_rec: int = 100,
    indeg_out: int = 1000,
    fb_outdeg: int = 100,
    rate_hz: float = 5.0,
    dt_ms: float = 1.0,
) -> ScalingNetwork:
    """Build the desk-scale analogue of the scaling benchmark network.

    Defaults mirror the full-scale layout with populations reduced ~13x and
    the recurrent in-degree reduced proportionally; ``scale`` multiplies
    population sizes while keeping in-degrees constant.
    """
    if scale < 1:
        raise ValueError("scale must be >= 1")
    rng = np.random.default_rng(seed)
    n_rec = int(round(n_rec_base * scale))
    n_in = int(round(n_in_base * scale))
    n_out = int(round(n_out_base * scale))
    period = int(round(1000.0 / (rate_hz * dt_ms)))
    phases = rng.integers(0, period, size=n_rec)
    in_src, in_dst = _draw_indegree(rng, n_in, n_rec, indeg_in, avoid_self=False)
    rec_src, rec_dst = _draw_indegree(rng, n_rec, n_rec, indeg_rec, avoid_self=True)
    out_src, out_dst = _draw_indegree(rng, n_rec, n_out, indeg_out, avoid_self=False)
    # feedback: each output neuron broadcasts to fb_outdeg recurrent targets
    fb_dst_blocks = [rng.choice(n_rec, size=fb_outdeg, replace=False) for _ in range(n_out)]
    fb_src = np.repeat(np.arange(n_out, dtype=np.int64), fb_outdeg)
    fb_dst = np.concatenate(fb_dst_blocks)
    return ScalingNetwork(
        n_rec=n_rec,
        n_in=n_in,
        n_out=n_out,
        period=period,
        phases=phases,
        in_src=in_src,
        in_dst=in_dst,
        rec_src=rec_src,
        rec_dst=rec_dst,
        out_src=out_src,
        out_dst=out_dst,
        fb_src=fb_src,
        fb_dst=fb_dst,
        input_rate_hz=rate_hz,
        dt_ms=dt_ms,
    )

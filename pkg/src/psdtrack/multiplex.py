"""Time-division identification of the six IR-LEDs.

A 10 ms frame holds seven equal slots: a trigger slot in which every LED
fires, then one slot per LED.  Each slot opens with a single pulse and the
receiver takes two ADC conversions per channel at the pulse's rising edge,
``double_read_interval`` apart.  Pulses are sized against a pulse period of
twice that interval, so a trigger pulse (duty > 0.5) is still on at the
second read while an LED pulse (duty < 0.5) is already off, leaving only
ambient light in the second read.  ``first - second`` is then the LED's
signal with the ambient offset removed.

Raw data is handled per *edge*: one timestamp plus ``(first, second)`` for
the six analog channels listed in :data:`CHANNELS`.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import ConfigurationError, DriftError, GeometryWarning, StreamFaultError, SyncLostError
from .psd_optics import S5991_LENGTH, channels_to_position

__all__ = [
    "CHANNELS",
    "LED_INDICES",
    "PatternConfig",
    "AdcSamplePair",
    "ChannelTriple",
    "DecodedFrame",
    "EdgeBlock",
    "generate_pattern",
    "ambient_cancel",
    "detect_trigger",
    "decode_frame",
    "decode_edges",
    "decode_stream",
    "FrameDecoder",
    "records_from_edges",
    "edges_from_records",
    "write_raw_jsonl",
    "read_raw_jsonl",
    "write_frames_jsonl",
]

CHANNELS = ("left.diffX", "left.diffY", "left.sum", "right.diffX", "right.diffY", "right.sum")
_CH_INDEX = {c: k for k, c in enumerate(CHANNELS)}
_SUM_L, _SUM_R = 2, 5
LED_INDICES = (1, 2, 3, 4, 5, 6)


@dataclass(frozen=True)
class PatternConfig:
    frame_period_ms: float = 10.0
    slot_count: int = 7
    trigger_duty: float = 0.6
    led_duty: float = 0.3
    double_read_interval_us: float = 50.0
    adc_bits: int = 16
    noise_floor: float = 3.0  # counts, RMS of a cancelled reading
    threshold_factor: float = 5.0
    trigger_tolerance: float = 0.1  # epsilon in |first - second| <= eps * first
    slot_tolerance_us: float = 10.0
    max_sync_lost: int = 5

    def __post_init__(self):
        if not (self.trigger_duty > 0.5 and 0.0 < self.led_duty < 0.5):
            raise ConfigurationError("need trigger_duty > 0.5 and 0 < led_duty < 0.5")
        if self.slot_count < 2 or self.frame_period_ms <= 0:
            raise ConfigurationError("bad frame layout")
        if self.pulse_period_us > self.slot_width_us:
            raise ConfigurationError("a pulse period does not fit in one slot")
        if not 8 <= self.adc_bits <= 24:
            raise ConfigurationError("adc_bits must lie in [8, 24]")

    @property
    def frame_period_us(self) -> float:
        return 1000.0 * self.frame_period_ms

    @property
    def slot_width_us(self) -> float:
        return self.frame_period_us / self.slot_count

    @property
    def pulse_period_us(self) -> float:
        return 2.0 * self.double_read_interval_us

    @property
    def trigger_on_us(self) -> float:
        return self.trigger_duty * self.pulse_period_us

    @property
    def led_on_us(self) -> float:
        return self.led_duty * self.pulse_period_us

    @property
    def threshold(self) -> float:
        return self.threshold_factor * self.noise_floor

    @property
    def adc_range(self) -> tuple[int, int]:
        half = 2 ** (self.adc_bits - 1)
        return -half, half - 1

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class AdcSamplePair:
    """Two conversions of one analog channel at one rising edge."""

    t_us: int
    channel: str
    first: int
    second: int

    def __post_init__(self):
        if self.channel not in _CH_INDEX:
            raise ValueError(f"unknown channel {self.channel!r}")


@dataclass(frozen=True)
class ChannelTriple:
    diff_x: float
    diff_y: float
    sum: float

    def position(self, length: float = S5991_LENGTH):
        return channels_to_position(self.diff_x, self.diff_y, self.sum, length)

    def tolist(self) -> list:
        return [self.diff_x, self.diff_y, self.sum]


@dataclass(frozen=True)
class DecodedFrame:
    t_us: int
    leds: dict = field(default_factory=dict)  # led -> (left ChannelTriple, right ChannelTriple)
    led_times: dict = field(default_factory=dict)  # led -> edge timestamp (us)

    @property
    def detected(self) -> tuple:
        return tuple(sorted(self.leds))

    def to_dict(self) -> dict:
        return {
            "t_us": self.t_us,
            "leds": {
                str(k): {"t_us": self.led_times.get(k), "left": v[0].tolist(), "right": v[1].tolist()}
                for k, v in sorted(self.leds.items())
            },
        }


@dataclass
class EdgeBlock:
    """Rising edges as arrays: ``t_us (E,)``, ``first``/``second`` ``(E, 6)`` counts."""

    t_us: np.ndarray
    first: np.ndarray
    second: np.ndarray

    def __len__(self):
        return len(self.t_us)

    def __getitem__(self, sl) -> "EdgeBlock":
        return EdgeBlock(self.t_us[sl], self.first[sl], self.second[sl])

    @classmethod
    def concat(cls, blocks: Sequence["EdgeBlock"]) -> "EdgeBlock":
        if not blocks:
            return cls(np.zeros(0, np.int64), np.zeros((0, 6), np.int64), np.zeros((0, 6), np.int64))
        return cls(
            np.concatenate([b.t_us for b in blocks]),
            np.concatenate([b.first for b in blocks]),
            np.concatenate([b.second for b in blocks]),
        )


# -- pattern ------------------------------------------------------------------------


def generate_pattern(cfg: PatternConfig, t_us: float) -> frozenset:
    """LED indices lit at time ``t_us`` (frame starts at ``t = 0``)."""
    if t_us < 0:
        raise ValueError("time must be nonnegative")
    phase = float(t_us) % cfg.frame_period_us
    slot = min(int(phase // cfg.slot_width_us), cfg.slot_count - 1)
    offset = phase - slot * cfg.slot_width_us
    if slot == 0:
        return frozenset(LED_INDICES) if offset < cfg.trigger_on_us else frozenset()
    if slot <= len(LED_INDICES) and offset < cfg.led_on_us:
        return frozenset({slot})
    return frozenset()


def ambient_cancel(pair):
    """``first - second``; works on an :class:`AdcSamplePair` or on arrays."""
    if isinstance(pair, AdcSamplePair):
        return pair.first - pair.second
    first, second = pair
    return np.subtract(first, second)


# -- trigger and slot decoding ----------------------------------------------------


def _trigger_index(first: np.ndarray, second: np.ndarray, cfg: PatternConfig) -> int:
    """Index of the trigger edge given per-edge sum-channel reads."""
    if len(first) == 0:
        raise SyncLostError("no rising edges in window")
    # LED-slot second reads see ambient only, so their minimum is the ambient
    # level; measuring both trigger reads above it rejects steady ambient light
    base = np.min(second)
    f = first - base
    s = second - base
    ok = (f > cfg.threshold) & (s > cfg.threshold) & (np.abs(f - s) <= cfg.trigger_tolerance * f)
    hits = np.flatnonzero(ok)
    if len(hits) == 0:
        raise SyncLostError("no trigger edge in window")
    # several candidates can only come from a glitch; the strongest wins
    return int(hits[np.argmax(s[hits])])


def detect_trigger(pairs: Sequence[AdcSamplePair], cfg: PatternConfig | None = None) -> int:
    """Timestamp of the trigger edge among sum-channel sample pairs.

    Pairs sharing a timestamp (left and right sum) are added together.

    Raises:
        SyncLostError: no edge qualifies as a trigger.
    """
    cfg = cfg or PatternConfig()
    if not pairs:
        raise SyncLostError("empty window")
    t = np.array([p.t_us for p in pairs])
    uniq, inv = np.unique(t, return_inverse=True)
    f = np.zeros(len(uniq))
    s = np.zeros(len(uniq))
    np.add.at(f, inv, [p.first for p in pairs])
    np.add.at(s, inv, [p.second for p in pairs])
    return int(uniq[_trigger_index(f, s, cfg)])


def _sum_reads(edges: EdgeBlock):
    return (
        edges.first[:, _SUM_L] + edges.first[:, _SUM_R],
        edges.second[:, _SUM_L] + edges.second[:, _SUM_R],
    )


def decode_edges(edges: EdgeBlock, cfg: PatternConfig, trigger: int | None = None) -> DecodedFrame:
    """Decode one frame's edges; ``trigger`` is its index if already known.

    Raises:
        SyncLostError: no trigger among the edges.
        DriftError: an edge sits off the slot grid by more than the tolerance.
    """
    if trigger is None:
        trigger = _trigger_index(*_sum_reads(edges), cfg)
    t0 = int(edges.t_us[trigger])
    width = cfg.slot_width_us
    rel = edges.t_us - t0
    sel = (rel > 0) & (rel < cfg.frame_period_us - 0.5 * width)
    idx = np.flatnonzero(sel)
    slots = np.rint(rel[idx] / width).astype(int)
    off = np.abs(rel[idx] - slots * width)
    if np.any(off > cfg.slot_tolerance_us):
        raise DriftError(f"slot timing off by {off.max():.1f} us in frame at t={t0} us")
    cancelled = edges.first[idx] - edges.second[idx]
    thr = cfg.threshold
    leds, times = {}, {}
    for row, slot, t in zip(cancelled, slots, edges.t_us[idx]):
        if not 1 <= slot <= len(LED_INDICES):
            continue
        if row[_SUM_L] > thr or row[_SUM_R] > thr:
            leds[int(slot)] = (ChannelTriple(*map(float, row[0:3])), ChannelTriple(*map(float, row[3:6])))
            times[int(slot)] = int(t)
    if len(leds) > 2:
        warnings.warn(
            f"{len(leds)} LEDs detected in frame at t={t0} us; at most two are expected",
            GeometryWarning,
            stacklevel=2,
        )
    return DecodedFrame(t0, leds, times)


def decode_frame(stream: Iterable[AdcSamplePair], cfg: PatternConfig | None = None) -> DecodedFrame:
    """Decode the first frame found in a list of raw sample pairs."""
    cfg = cfg or PatternConfig()
    edges = edges_from_records(stream)
    f, s = _sum_reads(edges)
    k = _trigger_index(f, s, cfg)
    return decode_edges(edges, cfg, trigger=k)


class FrameDecoder:
    """Streaming decoder: push edges in time order, collect frames.

    The decoder searches one frame period of edges at a time for a trigger.
    A window without one counts as a lost frame; more than
    ``cfg.max_sync_lost`` lost frames in a row raise :class:`StreamFaultError`.
    Frames with slot drift are dropped and counted.
    """

    def __init__(self, cfg: PatternConfig | None = None):
        self.cfg = cfg or PatternConfig()
        self._buf: list[EdgeBlock] = []
        self._pending = EdgeBlock.concat([])
        self.frames_decoded = 0
        self.frames_sync_lost = 0
        self.frames_drift_dropped = 0
        self._lost_run = 0

    def push(self, edges: EdgeBlock) -> list[DecodedFrame]:
        self._buf.append(edges)
        return self._drain(final=False)

    def push_records(self, records: Iterable[AdcSamplePair]) -> list[DecodedFrame]:
        return self.push(edges_from_records(records))

    def flush(self) -> list[DecodedFrame]:
        return self._drain(final=True)

    def _lost(self):
        self.frames_sync_lost += 1
        self._lost_run += 1
        if self._lost_run > self.cfg.max_sync_lost:
            raise StreamFaultError(f"trigger lost for {self._lost_run} consecutive frames")

    def _drain(self, final: bool) -> list[DecodedFrame]:
        if self._buf:
            self._pending = EdgeBlock.concat([self._pending] + self._buf)
            self._buf = []
        e = self._pending
        period = self.cfg.frame_period_us
        out = []
        start = 0
        n = len(e)
        while start < n:
            first = e.t_us[start]
            last = e.t_us[-1]
            if not final and last < first + period:
                break
            stop = start + int(np.searchsorted(e.t_us[start:], first + period, side="left"))
            f, s = _sum_reads(e[start:stop])
            try:
                k = start + _trigger_index(f, s, self.cfg)
            except SyncLostError:
                start = stop
                self._lost()
                continue
            t0 = e.t_us[k]
            end = t0 + period - 0.5 * self.cfg.slot_width_us
            if not final and last < end:
                # trigger found but the frame's tail has not arrived yet
                start = k
                break
            stop = k + int(np.searchsorted(e.t_us[k:], end, side="left"))
            try:
                frame = decode_edges(e[k:stop], self.cfg, trigger=0)
            except DriftError:
                self.frames_drift_dropped += 1
            else:
                out.append(frame)
                self.frames_decoded += 1
            self._lost_run = 0
            start = stop
        self._pending = e[start:]
        return out


def decode_stream(edges: EdgeBlock, cfg: PatternConfig | None = None) -> tuple[list[DecodedFrame], FrameDecoder]:
    dec = FrameDecoder(cfg)
    frames = dec.push(edges)
    frames += dec.flush()
    return frames, dec


# -- record conversion and JSONL --------------------------------------------------------


def records_from_edges(edges: EdgeBlock) -> Iterator[AdcSamplePair]:
    for t, f, s in zip(edges.t_us.tolist(), edges.first.tolist(), edges.second.tolist()):
        for c, name in enumerate(CHANNELS):
            yield AdcSamplePair(t, name, f[c], s[c])


def edges_from_records(records: Iterable[AdcSamplePair]) -> EdgeBlock:
    """Group per-channel records into edges; missing channels read as zero."""
    rows: dict[int, list] = {}
    for r in records:
        row = rows.get(r.t_us)
        if row is None:
            row = rows[r.t_us] = [[0] * 6, [0] * 6]
        c = _CH_INDEX[r.channel]
        row[0][c] = r.first
        row[1][c] = r.second
    ts = sorted(rows)
    first = np.array([rows[t][0] for t in ts]).reshape(-1, 6)
    second = np.array([rows[t][1] for t in ts]).reshape(-1, 6)
    # unquantised (simulated) streams carry float counts; keep them exact
    dtype = np.int64 if first.dtype.kind in "iub" and second.dtype.kind in "iub" else np.float64
    return EdgeBlock(np.array(ts, dtype=np.int64), first.astype(dtype), second.astype(dtype))


def write_raw_jsonl(fh, edges: EdgeBlock) -> None:
    for r in records_from_edges(edges):
        fh.write(json.dumps({"t_us": r.t_us, "channel": r.channel, "first": r.first, "second": r.second}) + "\n")


def _count(v):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise TypeError("ADC count must be a number")
    return v


def read_raw_jsonl(lines: Iterable[str]) -> tuple[EdgeBlock, list[dict]]:
    """Parse a raw stream; returns the ADC edges and any non-ADC records (e.g. IMU)."""
    adc, other = [], []
    for n, line in enumerate(lines, 1):
        line = line.strip()
        if not line:
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"line {n}: {exc}") from exc
        if "channel" in rec:
            try:
                adc.append(AdcSamplePair(int(rec["t_us"]), rec["channel"], _count(rec["first"]), _count(rec["second"])))
            except (KeyError, TypeError) as exc:
                raise ValueError(f"line {n}: malformed ADC record") from exc
        else:
            other.append(rec)
    return edges_from_records(adc), other


def write_frames_jsonl(fh, frames: Iterable[DecodedFrame]) -> None:
    for f in frames:
        fh.write(json.dumps(f.to_dict()) + "\n")

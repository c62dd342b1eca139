"""Waveforms, bit sequences, square-law detection and error metrics."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

# Primitive feedback taps (Fibonacci form, 1-indexed register positions).
PRBS_TAPS = {
    2: (2, 1), 3: (3, 2), 4: (4, 3), 5: (5, 3), 6: (6, 5), 7: (7, 6),
    8: (8, 6, 5, 4), 9: (9, 5), 10: (10, 7), 11: (11, 9), 12: (12, 6, 4, 1),
    13: (13, 4, 3, 1), 14: (14, 5, 3, 1), 15: (15, 14), 16: (16, 15, 13, 4),
    17: (17, 14), 18: (18, 11), 19: (19, 6, 2, 1), 20: (20, 17), 21: (21, 19),
    22: (22, 21), 23: (23, 18), 24: (24, 23, 22, 17), 25: (25, 22),
    26: (26, 6, 2, 1), 27: (27, 5, 2, 1), 28: (28, 25), 29: (29, 27),
    30: (30, 6, 4, 1), 31: (31, 28),
}

SIGNAL_MAGIC = b"RRSIG\x00\x00\x01"


@dataclass(frozen=True)
class SampledSignal:
    """Complex field envelope on a uniform grid; ``|samples|**2`` is power in W."""

    samples: np.ndarray
    sample_rate: float
    t_start: float = 0.0

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.complex128)
        if s.ndim != 1 or s.size < 1:
            raise ValueError("samples must be a non-empty 1-D array")
        if not np.all(np.isfinite(s)):
            raise ValueError("samples must be finite")
        if not self.sample_rate > 0:
            raise ValueError("sample_rate must be positive")
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)

    def __len__(self):
        return self.samples.size

    @property
    def dt(self) -> float:
        return 1.0 / self.sample_rate

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    @property
    def times(self) -> np.ndarray:
        return self.t_start + np.arange(self.samples.size) / self.sample_rate

    @property
    def power(self) -> np.ndarray:
        return np.abs(self.samples) ** 2

    def energy(self) -> float:
        return float(np.sum(self.power) / self.sample_rate)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "re", "im"])
            for t, z in zip(self.times, self.samples):
                w.writerow([repr(float(t)), repr(float(z.real)), repr(float(z.imag))])

    @classmethod
    def from_csv(cls, path) -> "SampledSignal":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        t, re, im = data[:, 0], data[:, 1], data[:, 2]
        if t.size < 2:
            raise ValueError("CSV waveform needs at least two rows to infer the sample rate")
        rate = (t.size - 1) / (t[-1] - t[0])
        return cls(re + 1j * im, rate, float(t[0]))

    def to_bytes(self) -> bytes:
        # header triple: (sample_rate, t_start, count), then (t, re, im) rows
        rows = np.empty((self.samples.size + 1, 3), dtype="<f8")
        rows[0] = (self.sample_rate, self.t_start, self.samples.size)
        rows[1:, 0] = self.times
        rows[1:, 1] = self.samples.real
        rows[1:, 2] = self.samples.imag
        return SIGNAL_MAGIC + rows.tobytes()

    @classmethod
    def from_bytes(cls, blob: bytes) -> "SampledSignal":
        if blob[:8] != SIGNAL_MAGIC:
            raise ValueError("not a waveform container (bad magic)")
        rows = np.frombuffer(blob[8:], dtype="<f8").reshape(-1, 3)
        rate, t0, count = rows[0]
        if int(count) != rows.shape[0] - 1:
            raise ValueError("truncated waveform container")
        return cls(rows[1:, 1] + 1j * rows[1:, 2], float(rate), float(t0))

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "SampledSignal":
        return cls.from_bytes(Path(path).read_bytes())


@dataclass(frozen=True)
class BitSequence:
    bits: np.ndarray
    bitrate: float = 1.0

    def __post_init__(self):
        b = np.asarray(self.bits)
        if b.ndim != 1:
            raise ValueError("bits must be 1-D")
        if b.size and not np.all((b == 0) | (b == 1)):
            raise ValueError("bits must be 0 or 1")
        if not self.bitrate > 0:
            raise ValueError("bitrate must be positive")
        b = b.astype(np.uint8)
        b.setflags(write=False)
        object.__setattr__(self, "bits", b)

    def __len__(self):
        return self.bits.size

    def roll(self, k: int) -> "BitSequence":
        return BitSequence(np.roll(self.bits, k), self.bitrate)


@dataclass(frozen=True)
class DetectorModel:
    """Photodiode with a single-pole low-pass response and additive power noise."""

    bandwidth: float = 20e9
    noise_std: float = 0.0
    noise_enabled: bool = field(default=True)

    def __post_init__(self):
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")


def prbs(order: int, seed: int = 1, bitrate: float = 1.0) -> BitSequence:
    """One full period (``2**order - 1`` bits) of a maximal-length LFSR sequence."""
    if order not in PRBS_TAPS:
        raise ValueError(f"unsupported PRBS order {order}; expected 2..31")
    mask = (1 << order) - 1
    state = seed & mask
    if state == 0:
        raise ValueError("PRBS seed must be nonzero (modulo 2**order)")
    taps = PRBS_TAPS[order]
    n = mask
    out = np.empty(n, dtype=np.uint8)
    for i in range(n):
        fb = 0
        for t in taps:
            fb ^= state >> (t - 1)
        fb &= 1
        state = ((state << 1) | fb) & mask
        out[i] = fb
    return BitSequence(out, bitrate)


def nrz_modulate(bits: BitSequence, samples_per_bit: int, p_high: float,
                 p_low: float = 0.0, t_start: float = 0.0) -> SampledSignal:
    """Zero-phase on-off field: power ``p_high`` on ones, ``p_low`` on zeros."""
    if samples_per_bit < 1:
        raise ValueError("samples_per_bit must be >= 1")
    if p_low < 0 or not p_high > p_low:
        raise ValueError("require p_high > p_low >= 0")
    levels = np.where(bits.bits == 1, np.sqrt(p_high), np.sqrt(p_low))
    return SampledSignal(np.repeat(levels, samples_per_bit).astype(np.complex128),
                         bits.bitrate * samples_per_bit, t_start)


def lowpass(x: np.ndarray, sample_rate: float, bandwidth: float) -> np.ndarray:
    """Exact single-pole response to a zero-order-held input, started in steady state."""
    x = np.asarray(x, dtype=float)
    a = np.exp(-2 * np.pi * bandwidth / sample_rate)
    y, _ = lfilter([0.0, 1.0 - a], [1.0, -a], x, zi=[x[0]])
    return y


def detect(signal: SampledSignal, det: DetectorModel, rng_seed=None) -> np.ndarray:
    """Square-law detection followed by the detector's low-pass and noise."""
    y = lowpass(signal.power, signal.sample_rate, det.bandwidth)
    if det.noise_enabled and det.noise_std > 0:
        rng = np.random.default_rng(rng_seed)
        y = y + rng.normal(0.0, det.noise_std, y.size)
    return y


def ber(predicted: BitSequence, target: BitSequence) -> float:
    p = predicted.bits if isinstance(predicted, BitSequence) else np.asarray(predicted)
    t = target.bits if isinstance(target, BitSequence) else np.asarray(target)
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.size} vs {t.size}")
    if p.size == 0:
        raise ValueError("empty sequences")
    return float(np.mean(p != t))


def threshold_decide(analog, threshold: float, bitrate: float = 1.0) -> BitSequence:
    a = np.asarray(analog, dtype=float)
    if not np.all(np.isfinite(a)):
        raise ValueError("analog values must be finite")
    return BitSequence((a > threshold).astype(np.uint8), bitrate)


def best_threshold(analog, target) -> float:
    """Threshold minimising the BER of ``analog`` against ``target``.

    Candidates are midpoints between consecutive distinct values plus one
    point beyond each end; ties go to the lowest candidate.
    """
    a = np.asarray(analog, dtype=float)
    t = np.asarray(target.bits if isinstance(target, BitSequence) else target)
    order = np.argsort(a, kind="stable")
    a_sorted, t_sorted = a[order], t[order].astype(np.int64)
    uniq_last = np.flatnonzero(np.diff(a_sorted) > 0)
    # threshold after position i: everything <= a_sorted[i] decided 0
    ones_below = np.concatenate([[0], np.cumsum(t_sorted)[uniq_last], [t_sorted.sum()]])
    count_below = np.concatenate([[0], uniq_last + 1, [a.size]])
    zeros_above = (a.size - count_below) - (t_sorted.sum() - ones_below)
    errors = ones_below + zeros_above
    k = int(np.argmin(errors))
    if k == 0:
        return float(a_sorted[0] - 1.0)
    if k == count_below.size - 1:
        return float(a_sorted[-1])
    i = uniq_last[k - 1]
    return float(0.5 * (a_sorted[i] + a_sorted[i + 1]))


def nmse(predicted, target) -> float:
    p = np.asarray(predicted, dtype=float)
    t = np.asarray(target, dtype=float)
    if p.shape != t.shape:
        raise ValueError("length mismatch")
    if t.size < 2:
        raise ValueError("need at least two samples")
    var = np.var(t)
    if var == 0:
        raise ValueError("target has zero variance")
    return float(np.mean((p - t) ** 2) / var)


def power_csv_text(t, values, header=("t", "power")) -> str:
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(header)
    for a, b in zip(t, values):
        w.writerow([repr(float(a)), repr(float(b))])
    return buf.getvalue()


"""Delayed complex perceptron, dispersive fiber channel and particle-swarm training."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .signal import (BitSequence, DetectorModel, SampledSignal, ber, best_threshold, lowpass,
                     nrz_modulate, prbs, threshold_decide)

C0 = 299_792_458.0


@dataclass(frozen=True)
class DcpParams:
    """K arms; arm k is delayed by ``k * base_delay`` and phase-shifted by ``phases[k]``."""

    phases: tuple = (0.0, 0.0, 0.0, 0.0)
    base_delay: float = 50e-12

    def __post_init__(self):
        ph = tuple(float(p) for p in np.atleast_1d(self.phases))
        if len(ph) < 1:
            raise ValueError("need at least one arm")
        if not all(math.isfinite(p) for p in ph):
            raise ValueError("phases must be finite")
        if not self.base_delay >= 0:
            raise ValueError("base_delay must be >= 0")
        object.__setattr__(self, "phases", ph)

    @property
    def n_channels(self) -> int:
        return len(self.phases)

    @property
    def span(self) -> float:
        return (self.n_channels - 1) * self.base_delay


@dataclass(frozen=True)
class FiberChannel:
    length: float = 125e3
    dispersion: float = 17e-6          # s/m^2 (17 ps/nm/km)
    wavelength: float = 1550e-9

    def __post_init__(self):
        if not self.length >= 0:
            raise ValueError("fiber length must be >= 0")

    @property
    def beta2(self) -> float:
        return -self.dispersion * self.wavelength ** 2 / (2 * math.pi * C0)


@dataclass(frozen=True)
class PsoConfig:
    bounds: tuple
    swarm_size: int = 24
    inertia: float = 0.72
    cognitive: float = 1.49
    social: float = 1.49
    max_iter: int = 60
    seed: int = 0

    def __post_init__(self):
        b = np.asarray(self.bounds, dtype=float)
        if b.ndim != 2 or b.shape[1] != 2:
            raise ValueError("bounds must be a sequence of (low, high) pairs")
        if np.any(b[:, 0] >= b[:, 1]):
            raise ValueError("each lower bound must be below its upper bound")
        if min(self.inertia, self.cognitive, self.social) < 0:
            raise ValueError("PSO coefficients must be >= 0")
        if self.swarm_size < 1 or self.max_iter < 0:
            raise ValueError("swarm_size >= 1 and max_iter >= 0 required")


def _delay_samples(delay: float, sample_rate: float) -> int:
    d = delay * sample_rate
    k = int(round(d))
    if abs(d - k) > 1e-6 * max(d, 1.0):
        raise ValueError("arm delay must be a whole number of samples")
    return k


def dcp_field(signal: SampledSignal, params: DcpParams) -> SampledSignal:
    """Combined field on the window where every arm has data (starts at ``span``)."""
    step = _delay_samples(params.base_delay, signal.sample_rate)
    span = step * (params.n_channels - 1)
    n = signal.samples.size - span
    if n < 1:
        raise ValueError("signal is shorter than the DCP delay span")
    u = signal.samples
    out = np.zeros(n, dtype=np.complex128)
    for k, phi in enumerate(params.phases):
        start = span - k * step
        out += u[start:start + n] * np.exp(1j * phi)
    out /= math.sqrt(params.n_channels)
    return SampledSignal(out, signal.sample_rate, signal.t_start + span / signal.sample_rate)


def dcp_apply(signal: SampledSignal, params: DcpParams) -> np.ndarray:
    """Square-law output ``|sum_k u(t - k dt) e^{i phi_k}|^2 / K`` on the valid window."""
    return dcp_field(signal, params).power


def dispersion_channel(signal: SampledSignal, ch: FiberChannel) -> SampledSignal:
    """Dispersion-only propagation applied as an all-pass filter in the frequency domain."""
    if ch.length == 0:
        return signal
    w = 2 * np.pi * np.fft.fftfreq(signal.samples.size, d=signal.dt)
    h = np.exp(1j * ch.beta2 * w * w * ch.length / 2)
    return SampledSignal(np.fft.ifft(np.fft.fft(signal.samples) * h), signal.sample_rate,
                         signal.t_start)


def separation_loss(detected, target_bits) -> float:
    """Negative normalized gap between the lowest 1 and the highest 0 (lower is better).

    Values lie in [-1, inf) when the class means are correctly ordered;
    inverted classes score above 1000.
    """
    x = np.asarray(detected, dtype=float)
    t = np.asarray(getattr(target_bits, "bits", target_bits))
    ones, zeros = x[t == 1], x[t == 0]
    if ones.size == 0 or zeros.size == 0:
        raise ValueError("both classes must be present")
    spread = ones.mean() - zeros.mean()
    if spread <= 0:
        # inverted or collapsed classes: worse than any correctly ordered state
        scale = np.abs(x).max() or 1.0
        return float(1e3 + (-spread) / scale)
    gap = ones.min() - zeros.max()
    return float(-gap / spread)


def pso_train(objective: Callable[[np.ndarray], float], cfg: PsoConfig):
    """Global-best particle swarm minimisation.

    Returns ``(best_position, best_trace)`` where ``best_trace[i]`` is the
    best loss after iteration ``i`` (index 0 is the initial swarm).
    """
    rng = np.random.default_rng(cfg.seed)
    bounds = np.asarray(cfg.bounds, dtype=float)
    lo, hi = bounds[:, 0], bounds[:, 1]
    dim = lo.size
    span = hi - lo
    pos = lo + rng.random((cfg.swarm_size, dim)) * span
    vel = (rng.random((cfg.swarm_size, dim)) - 0.5) * span * 0.2

    def evaluate(p):
        v = float(objective(p))
        if not math.isfinite(v):
            raise FloatingPointError(f"objective returned {v} at position {p.tolist()}")
        return v

    cost = np.array([evaluate(p) for p in pos])
    p_best, p_cost = pos.copy(), cost.copy()
    g = int(np.argmin(p_cost))
    g_best, g_cost = p_best[g].copy(), p_cost[g]
    trace = [g_cost]
    for _ in range(cfg.max_iter):
        r1 = rng.random((cfg.swarm_size, dim))
        r2 = rng.random((cfg.swarm_size, dim))
        vel = (cfg.inertia * vel + cfg.cognitive * r1 * (p_best - pos)
               + cfg.social * r2 * (g_best - pos))
        vel = np.clip(vel, -span, span)
        pos = np.clip(pos + vel, lo, hi)
        cost = np.array([evaluate(p) for p in pos])
        better = cost < p_cost
        p_best[better], p_cost[better] = pos[better], cost[better]
        g = int(np.argmin(p_cost))
        if p_cost[g] < g_cost:
            g_best, g_cost = p_best[g].copy(), p_cost[g]
        trace.append(g_cost)
    return g_best, np.array(trace)


# ---------------------------------------------------------------- experiment

@dataclass
class EqualizationReport:
    ber_uncompensated: float
    ber_compensated: float
    threshold_uncompensated: float
    threshold_compensated: float
    phases: list
    loss_trace: list
    histograms: dict
    separated: bool
    n_bits: int
    settings: dict = field(default_factory=dict)
    eye: dict = field(default_factory=dict, repr=False)

    def to_json(self) -> str:
        d = {k: v for k, v in self.__dict__.items() if k != "eye"}
        return json.dumps(d, indent=2, sort_keys=True)

    def eye_csv(self) -> str:
        """Eye-diagram samples as CSV text with columns stage, bit_phase, power."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["stage", "bit_phase", "power"])
        for stage, (phase, power) in self.eye.items():
            for a, b in zip(phase, power):
                w.writerow([stage, repr(float(a)), repr(float(b))])
        return buf.getvalue()

    def write_eye_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.eye_csv())


def decision_samples(trace, sample_rate: float, bitrate: float, n_bits: int, offset: float):
    """Values at the centre of each bit slot, shifted by ``offset`` seconds."""
    spb = sample_rate / bitrate
    idx = np.round((np.arange(n_bits) + 0.5) * spb + offset * sample_rate).astype(int)
    idx = np.clip(idx, 0, len(trace) - 1)
    return np.asarray(trace)[idx]


def _histogram(values, bits, edges):
    return {
        "edges": [float(e) for e in edges],
        "zeros": np.histogram(values[bits == 0], edges)[0].tolist(),
        "ones": np.histogram(values[bits == 1], edges)[0].tolist(),
    }


def equalize_experiment(bitrate: float = 10e9, prbs_order: int = 10, fiber_length: float = 125e3,
                        n_channels: int = 4, base_delay: float = 50e-12,
                        dispersion: float = 17e-6, wavelength: float = 1550e-9,
                        samples_per_bit: int = 16, p_high: float = 1e-3,
                        detector: DetectorModel = DetectorModel(20e9),
                        pso: PsoConfig | None = None, seed: int = 0,
                        hist_bins: int = 20) -> EqualizationReport:
    """Train the DCP phases on a dispersed PRBS and compare BER before and after.

    The periodic PRBS is propagated as three back-to-back copies so the
    circular frequency-domain filter has no edge effects; the middle copy is
    scored.
    """
    bits = prbs(prbs_order, 1, bitrate)
    m = len(bits)
    tx = nrz_modulate(BitSequence(np.tile(bits.bits, 3), bitrate), samples_per_bit, p_high)
    rx = dispersion_channel(tx, FiberChannel(fiber_length, dispersion, wavelength))
    fs = rx.sample_rate
    target = bits.bits
    start = m * samples_per_bit

    def detected(params: DcpParams):
        y = lowpass(dcp_apply(rx, params), fs, detector.bandwidth)
        # dcp window starts ``span`` late; its decision point moves with the mean arm delay
        lead = int(round(params.span * fs))
        seg = y[start - lead: start - lead + m * samples_per_bit]
        return decision_samples(seg, fs, bitrate, m, params.span / 2)

    plain = lowpass(rx.power, fs, detector.bandwidth)[start:start + m * samples_per_bit]
    d_unc = decision_samples(plain, fs, bitrate, m, 0.0)

    def objective(phi):
        return separation_loss(detected(DcpParams(tuple(phi), base_delay)), target)

    if pso is None:
        pso = PsoConfig(bounds=[(0.0, 2 * math.pi)] * n_channels, seed=seed)
    best, trace = pso_train(objective, pso)
    best = np.mod(best, 2 * math.pi)
    params = DcpParams(tuple(best), base_delay)
    d_cmp = detected(params)

    def scored(values):
        thr = best_threshold(values, target)
        return ber(threshold_decide(values, thr), BitSequence(target)), thr

    ber_u, thr_u = scored(d_unc)
    ber_c, thr_c = scored(d_cmp)
    edges = np.linspace(0, max(d_unc.max(), d_cmp.max()) * 1.0001, hist_bins + 1)
    hist = {"uncompensated": _histogram(d_unc, target, edges),
            "compensated": _histogram(d_cmp, target, edges)}
    separated = bool(d_cmp[target == 1].min() > d_cmp[target == 0].max())

    # eye data: detected power folded over two bit periods
    lead = int(round(params.span * fs))
    y_c = lowpass(dcp_apply(rx, params), fs, detector.bandwidth)[start - lead: start - lead + m * samples_per_bit]
    phase = (np.arange(m * samples_per_bit) % (2 * samples_per_bit)) / samples_per_bit
    eye = {"uncompensated": (phase, plain), "compensated": (phase, y_c)}

    return EqualizationReport(
        ber_uncompensated=ber_u, ber_compensated=ber_c,
        threshold_uncompensated=thr_u, threshold_compensated=thr_c,
        phases=[float(p) for p in best], loss_trace=[float(v) for v in trace],
        histograms=hist, separated=separated, n_bits=m,
        settings=dict(bitrate=bitrate, prbs_order=prbs_order, fiber_length=fiber_length,
                      n_channels=n_channels, base_delay=base_delay, dispersion=dispersion,
                      wavelength=wavelength, samples_per_bit=samples_per_bit,
                      detector_bandwidth=detector.bandwidth, seed=pso.seed),
        eye=eye,
    )

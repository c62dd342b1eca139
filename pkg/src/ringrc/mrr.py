"""Nonlinear add-drop microring: parameters, integration, feedback loop and stability maps."""

from __future__ import annotations

import configparser
import csv
import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from ._kernel import run_ring
from .errors import ConfigError, DivergenceError
from .signal import SampledSignal
from .units import parse_quantity

C0 = 299_792_458.0


@dataclass(frozen=True)
class MrrParams:
    """Static description of a silicon add-drop ring.

    ``tpa_gen_coeff`` converts squared stored energy into carrier generation
    rate; ``thermal_heating_coeff`` converts absorbed power into a heating
    rate. ``tpa_loss_coeff`` (1/(s J)) and ``fca_loss_coeff`` (m^3/s) are the
    amplitude damping rates from two-photon and free-carrier absorption.
    """

    radius: float
    n0: float
    dn_dT: float
    dn_dN: float
    q_intrinsic: float
    coupling_k2: float
    tau_fc: float
    tau_th: float
    tpa_gen_coeff: float
    thermal_heating_coeff: float
    cold_resonance_wavelength: float = 1550e-9
    resonance_order: int | None = None
    group_index: float = 4.7
    tpa_loss_coeff: float = 3.9e21
    fca_loss_coeff: float = 4.6e-14
    absorption_fraction: float = 0.5

    def __post_init__(self):
        positive = ("radius", "n0", "dn_dT", "dn_dN", "q_intrinsic", "tau_fc", "tau_th",
                    "cold_resonance_wavelength", "group_index")
        bad = [(name, "must be > 0") for name in positive if not getattr(self, name) > 0]
        for name in ("tpa_gen_coeff", "thermal_heating_coeff", "tpa_loss_coeff", "fca_loss_coeff"):
            if not getattr(self, name) >= 0:
                bad.append((name, "must be >= 0"))
        if not 0 < self.coupling_k2 < 1:
            bad.append(("coupling_k2", "must lie in (0, 1)"))
        if not 0 <= self.absorption_fraction <= 1:
            bad.append(("absorption_fraction", "must lie in [0, 1]"))
        if self.tau_fc >= self.tau_th:
            bad.append(("tau_fc", "must be shorter than tau_th"))
        if bad:
            raise ConfigError(bad)
        if self.resonance_order is None:
            order = round(2 * math.pi * self.radius * self.n0 / self.cold_resonance_wavelength)
            object.__setattr__(self, "resonance_order", max(int(order), 1))

    # derived rates (amplitude convention: |U|^2 decays at 2 * gamma)
    @property
    def omega0(self) -> float:
        return 2 * math.pi * C0 / self.cold_resonance_wavelength

    @property
    def round_trip_time(self) -> float:
        return 2 * math.pi * self.radius * self.group_index / C0

    @property
    def gamma_i(self) -> float:
        return self.omega0 / (2 * self.q_intrinsic)

    @property
    def gamma_e(self) -> float:
        return self.coupling_k2 / (2 * self.round_trip_time)

    @property
    def gamma(self) -> float:
        return self.gamma_i + 2 * self.gamma_e

    @property
    def loaded_q(self) -> float:
        return self.omega0 / (2 * self.gamma)

    @property
    def photon_lifetime(self) -> float:
        """Energy decay time of the loaded cavity."""
        return 1.0 / (2 * self.gamma)

    @property
    def linewidth_hz(self) -> float:
        return self.omega0 / (2 * math.pi) / self.loaded_q

    @property
    def bus_coupling(self) -> float:
        return math.sqrt(2 * self.gamma_e)

    @property
    def nonlinear(self) -> bool:
        return any(getattr(self, n) > 0 for n in
                   ("tpa_gen_coeff", "thermal_heating_coeff", "tpa_loss_coeff", "fca_loss_coeff"))

    def linearized(self) -> "MrrParams":
        return replace(self, tpa_gen_coeff=0.0, thermal_heating_coeff=0.0,
                       tpa_loss_coeff=0.0, fca_loss_coeff=0.0)

    def resonance_wavelength(self, delta_T: float = 0.0, delta_N: float = 0.0) -> float:
        """Hot resonance wavelength at fixed order: index rises with T and falls with N."""
        dn = self.dn_dT * np.asarray(delta_T) - self.dn_dN * np.asarray(delta_N)
        shift = self.cold_resonance_wavelength * dn / self.n0
        return self.cold_resonance_wavelength + shift

    def _kernel_coeffs(self):
        w0 = self.omega0
        return dict(
            fcd_shift=w0 / self.n0 * self.dn_dN,
            to_shift=w0 / self.n0 * self.dn_dT,
            gamma_lin=self.gamma,
            gamma_abs=self.absorption_fraction * self.gamma_i,
            a_tpa=self.tpa_loss_coeff,
            a_fca=self.fca_loss_coeff,
            s=self.bus_coupling,
            g_tpa=self.tpa_gen_coeff,
            g_th=self.thermal_heating_coeff,
            tau_fc=self.tau_fc,
            tau_th=self.tau_th,
        )


_SELFPULSING = MrrParams(
    radius=7e-6, n0=3.48, dn_dT=1.86e-4, dn_dN=1.73e-27, q_intrinsic=1.11e5, coupling_k2=0.063,
    tau_fc=45e-9, tau_th=270e-9, tpa_gen_coeff=3e60, thermal_heating_coeff=1.2e11,
)

PRESETS: dict[str, MrrParams] = {
    "selfpulsing": _SELFPULSING,
    "logic": replace(_SELFPULSING, tau_fc=4.5e-9, tau_th=100e-9),
    "feedback": replace(_SELFPULSING, q_intrinsic=3.0e5, coupling_k2=0.0105,
                        tau_fc=3e-9, tau_th=83e-9),
    "linear": replace(_SELFPULSING, tpa_gen_coeff=0.0, thermal_heating_coeff=0.0,
                      tpa_loss_coeff=0.0, fca_loss_coeff=0.0),
}

PRESET_NOTES = {
    "selfpulsing": "7 um add-drop ring, slow lifetimes (45 ns / 270 ns); sub-MHz self-pulsing",
    "logic": "same ring with 4.5 ns / 100 ns lifetimes, used for logic tasks",
    "feedback": "high-Q ring (Q_L ~ 3.2e4) with 3 ns / 83 ns lifetimes, used with the feedback loop",
    "linear": "selfpulsing geometry with every nonlinear coefficient set to zero",
}


def preset(name: str) -> MrrParams:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError([("preset", f"unknown preset {name!r}; known: {', '.join(PRESETS)}")]) from None


_PARAM_UNITS = {
    "radius": "m", "dn_dN": "m^3", "tau_fc": "s", "tau_th": "s",
    "cold_resonance_wavelength": "m",
}


def params_from_mapping(values: dict, base: MrrParams | None = None) -> MrrParams:
    """Build parameters from ``{name: text}``; ``preset`` selects the starting point."""
    values = dict(values)
    name = values.pop("preset", None)
    start = preset(name.strip()) if name else (base or _SELFPULSING)
    known = {f.name for f in fields(MrrParams)}
    changes, problems = {}, []
    for key, text in values.items():
        if key not in known:
            problems.append((key, "unknown device parameter"))
            continue
        try:
            if key == "resonance_order":
                changes[key] = int(text)
            else:
                changes[key] = parse_quantity(text, _PARAM_UNITS.get(key, ""))
        except ValueError as exc:
            problems.append((key, str(exc)))
    if problems:
        raise ConfigError(problems)
    if "cold_resonance_wavelength" in changes or "radius" in changes or "n0" in changes:
        changes.setdefault("resonance_order", None)
    return replace(start, **changes)


def load_params(path, section: str = "device") -> MrrParams:
    cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
    if not cp.read(path):
        raise ConfigError([("path", f"cannot read {path}")])
    if not cp.has_section(section):
        raise ConfigError([(section, "missing section")])
    return params_from_mapping(dict(cp[section]))


@dataclass(frozen=True)
class MrrState:
    U: complex = 0j
    delta_N: float = 0.0
    delta_T: float = 0.0

    def __post_init__(self):
        vals = (complex(self.U).real, complex(self.U).imag, self.delta_N, self.delta_T)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("state components must be finite")
        if self.delta_N < 0:
            raise ValueError("delta_N must be >= 0")


@dataclass(frozen=True)
class FeedbackParams:
    eta_F: float = 0.0
    phi_F: float = 0.0
    tau_F: float = 0.0
    t_r: float | None = None

    def __post_init__(self):
        if not 0 <= self.eta_F <= 1:
            raise ValueError("eta_F must lie in [0, 1]")
        if not self.tau_F >= 0:
            raise ValueError("tau_F must be >= 0")
        if not math.isfinite(self.phi_F):
            raise ValueError("phi_F must be finite")

    def through_transmission(self, params: MrrParams) -> float:
        return math.sqrt(1 - params.coupling_k2) if self.t_r is None else self.t_r

    @property
    def coefficient(self) -> complex:
        return math.sqrt(self.eta_F) * complex(math.cos(self.phi_F), -math.sin(self.phi_F))


@dataclass(frozen=True)
class StateTrace:
    times: np.ndarray
    U: np.ndarray
    delta_N: np.ndarray
    delta_T: np.ndarray

    @property
    def energy(self) -> np.ndarray:
        return np.abs(self.U) ** 2


@dataclass(frozen=True)
class RingResult:
    through: SampledSignal
    drop: SampledSignal
    trace: StateTrace
    final: MrrState
    dt: float
    tau_F: float = 0.0


def linear_transmission(params: MrrParams, detuning):
    """Cold add-drop transmissions ``(T_through, T_drop)`` at laser detuning ``detuning`` (Hz).

    Positive detuning puts the laser above the cold resonance frequency.
    """
    d = 2 * np.pi * np.asarray(detuning, dtype=float)
    g, ge2 = params.gamma, 2 * params.gamma_e
    denom = g * g + d * d
    t_drop = ge2 * ge2 / denom
    t_th = np.abs(1 - ge2 / (g + 1j * d)) ** 2
    return t_th, t_drop


def default_dt(params: MrrParams, sample_period: float | None = None, divisions: int = 20) -> float:
    """Largest step <= photon_lifetime/divisions that divides ``sample_period``."""
    target = params.photon_lifetime / divisions
    if sample_period is None:
        return target
    return sample_period / math.ceil(sample_period / target * (1 - 1e-12))


def _hold_factor(e_in: SampledSignal, dt: float):
    ratio = 1.0 / (e_in.sample_rate * dt)
    hold = round(ratio)
    if hold >= 1 and abs(ratio - hold) <= 1e-6 * ratio:
        return e_in.samples, hold
    # not commensurate: zero-order resample onto the step grid
    n_steps = int(round(e_in.duration / dt))
    idx = np.minimum((np.arange(n_steps) * dt * e_in.sample_rate + 1e-9).astype(np.int64),
                     e_in.samples.size - 1)
    return e_in.samples[idx], 1


def integrate(params: MrrParams, state0: MrrState | None, e_in: SampledSignal,
              dt: float | None = None, detuning: float = 0.0,
              record_every: int | None = None) -> RingResult:
    """RK4 integration of the ring driven by ``e_in`` at laser detuning ``detuning`` (Hz).

    The input is zero-order held on the integration grid. Outputs are
    sampled every ``record_every`` steps (default: once per input sample).
    """
    return _run_detuned(params, state0, e_in, dt, detuning, record_every, 0j, 1.0, 0)


def _run_detuned(params, state0, e_in, dt, detuning, record_every, fb_coeff, t_r, delay):
    # the kernel takes the cold detuning directly; wrap _run to pass it through
    state0 = state0 or MrrState()
    if dt is None:
        dt = default_dt(params, e_in.dt)
    if not dt <= params.photon_lifetime / 10 * (1 + 1e-9):
        raise ValueError(f"dt={dt:g} s does not resolve the photon lifetime "
                         f"{params.photon_lifetime:g} s (need dt <= tau_ph/10)")
    samples, hold = _hold_factor(e_in, dt)
    n_steps = samples.size * hold
    if record_every is None:
        record_every = hold
    k = params._kernel_coeffs()
    u, n, T, th, dr, final, fail = run_ring(
        np.ascontiguousarray(samples, dtype=np.complex128), hold, n_steps, dt, int(record_every),
        -2 * math.pi * detuning, k["fcd_shift"], k["to_shift"], k["gamma_lin"], k["gamma_abs"],
        k["a_tpa"], k["a_fca"], k["s"], k["g_tpa"], k["g_th"], k["tau_fc"], k["tau_th"],
        complex(state0.U), float(state0.delta_N), float(state0.delta_T),
        complex(fb_coeff), float(t_r), int(delay))
    if fail >= 0:
        t_fail = e_in.t_start + fail * dt
        raise DivergenceError(f"ring state became non-finite at t={t_fail:.6g} s", t_fail)
    rate = 1.0 / (dt * record_every)
    times = e_in.t_start + np.arange(u.size) / rate
    final_state = MrrState(complex(final[0]), max(float(final[1].real), 0.0), float(final[2].real))
    return RingResult(SampledSignal(th, rate, e_in.t_start), SampledSignal(dr, rate, e_in.t_start),
                      StateTrace(times, u, n, T), final_state, dt, delay * dt)


def simulate_with_feedback(params: MrrParams, fb: FeedbackParams, e_in: SampledSignal,
                           dt: float | None = None, detuning: float = 0.0,
                           state0: MrrState | None = None,
                           record_every: int | None = None) -> RingResult:
    """Ring with the through port looped back into the add port after ``fb.tau_F``.

    The delay is snapped to a whole number of steps; the value actually used
    is reported as ``result.tau_F``. The loop starts empty.
    """
    if dt is None:
        dt = default_dt(params, e_in.dt)
    delay = int(round(fb.tau_F / dt))
    coeff = fb.coefficient if fb.eta_F > 0 else 0j
    return _run_detuned(params, state0, e_in, dt, detuning, record_every, coeff,
                        fb.through_transmission(params), delay)


def wavelength_to_frequency_detuning(d_lambda: float, wavelength: float = 1550e-9) -> float:
    """Laser offset in Hz for a wavelength offset (laser minus resonance)."""
    return -C0 * d_lambda / wavelength ** 2


# ---------------------------------------------------------------- stability

STABILITY_EPS = 0.02


def sp_frequency(drop_power, sample_rate: float, pad: int = 16) -> float:
    """Dominant non-DC frequency of a power trace; 0 for a flat trace."""
    x = np.asarray(drop_power, dtype=float)
    if x.size < 4:
        return 0.0
    x = x - x.mean()
    scale = np.max(np.abs(x))
    if scale == 0 or scale <= 1e-12 * max(np.max(np.abs(drop_power)), 1e-300):
        return 0.0
    w = np.hanning(x.size)
    n_fft = pad * x.size
    spec = np.abs(np.fft.rfft(x * w, n_fft))
    spec[0] = 0.0
    # ignore the leakage lobe of the DC bin
    spec[: 2 * pad] = 0.0
    k = int(np.argmax(spec))
    if spec[k] == 0:
        return 0.0
    if 0 < k < spec.size - 1:
        a, b, c = np.log(spec[k - 1] + 1e-300), np.log(spec[k] + 1e-300), np.log(spec[k + 1] + 1e-300)
        den = a - 2 * b + c
        shift = 0.5 * (a - c) / den if den != 0 else 0.0
    else:
        shift = 0.0
    return float((k + shift) * sample_rate / n_fft)


@dataclass(frozen=True)
class StabilityResult:
    self_pulsing: bool
    frequency: float
    mean_power: float
    ripple: float
    trace: np.ndarray | None = field(default=None, repr=False, compare=False)
    sample_rate: float = 0.0

    @property
    def label(self) -> str:
        return "SelfPulsing" if self.self_pulsing else "Stable"


def classify_trace(power, sample_rate: float, eps: float = STABILITY_EPS) -> StabilityResult:
    """Stable when the ripple (peak-to-peak / mean) is below ``eps``.

    A ripple that halves between the two halves of the window is a decaying
    transient and also counts as stable.
    """
    p = np.asarray(power, dtype=float)
    mean = float(p.mean())
    if mean <= 0:
        return StabilityResult(False, 0.0, mean, 0.0)
    ripple = float(np.ptp(p) / mean)
    half = p.size // 2
    first, second = np.ptp(p[:half]), np.ptp(p[half:])
    if ripple < eps or second < 0.5 * first:
        return StabilityResult(False, 0.0, mean, ripple)
    f = sp_frequency(p, sample_rate)
    if f <= 0:
        return StabilityResult(False, 0.0, mean, ripple)
    return StabilityResult(True, f, mean, ripple)


def classify_stability(params: MrrParams, power: float, detuning: float,
                       settle_time: float | None = None, observe_time: float | None = None,
                       eps: float = STABILITY_EPS, dt: float | None = None,
                       early_exit: bool = True, keep_trace: bool = False) -> StabilityResult:
    """Drive the cold ring with CW light and classify the drop power after a transient.

    ``early_exit`` stops once the settled output is flat to ``eps/10`` over a
    full ``tau_fc + tau_th`` window. With ``keep_trace`` the observed drop
    power is attached to the result.
    """
    slow = params.tau_fc + params.tau_th
    settle_time = 10 * slow if settle_time is None else settle_time
    observe_time = 15 * slow if observe_time is None else observe_time
    if observe_time < 10 * slow * (1 - 1e-9):
        raise ValueError("observe_time must cover at least 10 * (tau_fc + tau_th)")
    if power < 0:
        raise ValueError("power must be >= 0")
    chunk = max(slow, 1e-6)
    dt = params.photon_lifetime / 10 if dt is None else dt
    dt = chunk / math.ceil(chunk / dt * (1 - 1e-12))
    rec = max(int(round(2e-10 / dt)), 1)
    cw = SampledSignal(np.array([math.sqrt(power) + 0j]), 1.0 / chunk)
    state = MrrState()
    t = 0.0
    settle_chunks = max(int(math.ceil(settle_time / chunk - 1e-9)), 1)
    for _ in range(settle_chunks):
        res = integrate(params, state, cw, dt, detuning, record_every=rec)
        state = res.final
        t += chunk
    observe_chunks = max(int(math.ceil(observe_time / chunk - 1e-9)), 1)
    pieces = []
    for i in range(observe_chunks):
        res = integrate(params, state, cw, dt, detuning, record_every=rec)
        state = res.final
        p = res.drop.power
        pieces.append(p)
        if early_exit and i == 0 and p.mean() > 0 and np.ptp(p) < 0.1 * eps * p.mean():
            out = StabilityResult(False, 0.0, float(p.mean()), float(np.ptp(p) / p.mean()))
            break
        if early_exit and i == 0 and p.mean() == 0:
            out = StabilityResult(False, 0.0, 0.0, 0.0)
            break
    else:
        out = classify_trace(np.concatenate(pieces), res.drop.sample_rate, eps)
    if keep_trace:
        out = replace(out, trace=np.concatenate(pieces), sample_rate=res.drop.sample_rate)
    return out


@dataclass(frozen=True)
class StabilityMap:
    powers: np.ndarray
    detunings: np.ndarray
    self_pulsing: np.ndarray
    frequency: np.ndarray

    def __post_init__(self):
        for name in ("powers", "detunings"):
            ax = np.asarray(getattr(self, name), dtype=float)
            if ax.ndim != 1 or ax.size < 1 or np.any(np.diff(ax) <= 0):
                raise ValueError(f"{name} must be a strictly increasing 1-D axis")
            object.__setattr__(self, name, ax)
        sp = np.asarray(self.self_pulsing, dtype=bool)
        fr = np.asarray(self.frequency, dtype=float)
        shape = (self.powers.size, self.detunings.size)
        if sp.shape != shape or fr.shape != shape:
            raise ValueError("map arrays must have shape (len(powers), len(detunings))")
        if np.any(sp != (fr > 0)):
            raise ValueError("frequency must be positive exactly on self-pulsing cells")
        object.__setattr__(self, "self_pulsing", sp)
        object.__setattr__(self, "frequency", fr)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["P", "delta_nu", "class", "sp_freq_hz"])
            for i, p in enumerate(self.powers):
                for j, d in enumerate(self.detunings):
                    w.writerow([repr(float(p)), repr(float(d)),
                                "SelfPulsing" if self.self_pulsing[i, j] else "Stable",
                                repr(float(self.frequency[i, j]))])

    @classmethod
    def from_csv(cls, path) -> "StabilityMap":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        powers = sorted({float(r["P"]) for r in rows})
        dets = sorted({float(r["delta_nu"]) for r in rows})
        sp = np.zeros((len(powers), len(dets)), bool)
        fr = np.zeros_like(sp, dtype=float)
        for r in rows:
            i, j = powers.index(float(r["P"])), dets.index(float(r["delta_nu"]))
            sp[i, j] = r["class"] == "SelfPulsing"
            fr[i, j] = float(r["sp_freq_hz"])
        return cls(np.array(powers), np.array(dets), sp, fr)


def stability_map(params: MrrParams, powers, detunings, settle_time=None, observe_time=None,
                  eps: float = STABILITY_EPS, dt=None, early_exit: bool = True,
                  mapper=map) -> StabilityMap:
    """Classify every (power, detuning) cell. ``mapper`` may be a parallel map."""
    powers = np.asarray(powers, dtype=float)
    detunings = np.asarray(detunings, dtype=float)
    cells = [(params, float(p), float(d), settle_time, observe_time, eps, dt, early_exit)
             for p in powers for d in detunings]
    results = list(mapper(_classify_cell, cells))
    sp = np.array([r.self_pulsing for r in results]).reshape(powers.size, detunings.size)
    fr = np.array([r.frequency for r in results]).reshape(powers.size, detunings.size)
    return StabilityMap(powers, detunings, sp, fr)


def _classify_cell(args) -> StabilityResult:
    return classify_stability(*args)

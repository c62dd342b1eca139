"""Per-cell experiment runners.

Every experiment kind is a function ``(params, settings, point, seed) -> CellOutput``
where ``point`` holds the sweep coordinates of one cell. The sweep driver in
:mod:`ringrc.cli` owns grids, seeding, parallelism and file output.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .dcp import PsoConfig, equalize_experiment
from .mrr import (FeedbackParams, MrrParams, classify_stability, default_dt, integrate,
                  simulate_with_feedback, wavelength_to_frequency_detuning)
from .reservoir import (EncodingConfig, Mask, PumpProbeCoeffs, StateMatrix, augment_rbits,
                        encode, mask_encode, memory_capacity, pump_probe_response, ridge_cv,
                        sample_virtual_nodes)
from .signal import (BitSequence, DetectorModel, ber, best_threshold, detect, nmse, nrz_modulate,
                     prbs, threshold_decide)
from .tasks import (LogicTaskSpec, delayed_logic_target, default_iris_path, iris_load,
                    mackey_glass, narma10, narma10_inputs, one_bit_delayed_xor_target, rescale,
                    stratified_split)


@dataclass
class CellOutput:
    """Metrics of one sweep cell plus optional side data.

    ``floors`` maps a BER metric to its test length M. ``trace`` is a
    ``(sample_rate, {column: array})`` pair written only on request;
    ``files`` maps relative paths to text written next to the map.
    """

    metrics: dict
    sample_rate: float
    floors: dict = field(default_factory=dict)
    trace: tuple | None = None
    files: dict = field(default_factory=dict)


def _detuning(point: dict, settings: dict) -> float:
    """Laser detuning in Hz from either ``delta_nu`` or ``delta_lambda``."""
    for src in (point, settings):
        if "delta_nu" in src:
            return float(src["delta_nu"])
        if "delta_lambda" in src:
            return wavelength_to_frequency_detuning(float(src["delta_lambda"]))
    return 0.0


def _get(name, point, settings):
    return point[name] if name in point else settings[name]


def _decide(features, target, train, test):
    """Ridge readout + threshold fitted on ``train`` columns, BER on ``test``."""
    y = np.asarray(target, dtype=float)
    ro = ridge_cv(features[:, train], y[None, train])
    thr = best_threshold(ro.predict(features[:, train])[0], target[train])
    pred = threshold_decide(ro.predict(features[:, test])[0], thr)
    return ber(pred, BitSequence(np.asarray(target[test], dtype=np.uint8)))


# ---------------------------------------------------------------- stability map

STABILITY_DEFAULTS = {"eps": 0.02}


def run_stability_cell(params: MrrParams, settings: dict, point: dict, seed: int,
                       keep_trace: bool = False, data_seed=None) -> CellOutput:
    res = classify_stability(params, float(point["P"]), _detuning(point, settings),
                             eps=float(settings["eps"]), keep_trace=keep_trace)
    trace = None
    if keep_trace:
        trace = (res.sample_rate, {"drop_power": res.trace})
    return CellOutput({"class": res.label, "sp_freq_hz": res.frequency,
                       "mean_power": res.mean_power, "ripple": res.ripple},
                      res.sample_rate or 5e9, trace=trace)


# ---------------------------------------------------------------- logic tasks on the ring

LOGIC_DEFAULTS = {
    "op": "AND", "n1": (1, 2, 3), "n2": 1, "n_virtual": 20, "prbs_order": 8, "periods": 4,
    "sample_rate": 20e9, "detector_bandwidth": 10e9, "noise": 0.0,
}


def logic_states(params: MrrParams, bits: BitSequence, bitrate: float, power: float,
                 detuning: float, settings: dict, seed: int):
    """Reservoir and input-only node matrices (features normalised by ``power``)."""
    fs = float(settings["sample_rate"])
    spb = int(round(fs / bitrate))
    if spb < 1 or abs(fs / bitrate - spb) > 1e-6 * spb:
        raise ValueError(f"sample_rate {fs:g} is not a multiple of bitrate {bitrate:g}")
    e = nrz_modulate(BitSequence(bits.bits, bitrate), spb, power)
    res = integrate(params, None, e, dt=default_dt(params, 1 / fs, 10), detuning=detuning)
    det = DetectorModel(float(settings["detector_bandwidth"]), float(settings["noise"]) * power)
    rng = np.random.SeedSequence(seed).generate_state(2)
    nv = int(settings["n_virtual"])
    y = detect(res.drop, det, rng_seed=int(rng[0]))
    y_in = detect(e, det, rng_seed=int(rng[1]))
    out = sample_virtual_nodes(y, bitrate, nv, res.drop.sample_rate)
    inp = sample_virtual_nodes(y_in, bitrate, nv, fs)
    scale = lambda s: StateMatrix(s.features / power, s.labels)  # noqa: E731
    return scale(out), scale(inp), res


def run_logic_cell(params: MrrParams, settings: dict, point: dict, seed: int,
                   keep_trace: bool = False, data_seed=None) -> CellOutput:
    bitrate = float(_get("bitrate", point, settings))
    power = float(_get("P", point, settings))
    order = int(settings["prbs_order"])
    periods = int(settings["periods"])
    if periods < 3:
        raise ValueError("periods must be >= 3 (warm-up, training, test)")
    base = prbs(order, 1)
    m = len(base)
    seq = BitSequence(np.tile(base.bits, periods))
    out, inp, res = logic_states(params, seq, bitrate, power, _detuning(point, settings),
                                 settings, seed)
    n2 = int(settings["n2"])
    out, inp = augment_rbits(out, n2), augment_rbits(inp, n2)
    train = slice(m, (periods - 1) * m)
    test = slice((periods - 1) * m, periods * m)
    metrics, floors = {}, {}
    n1_values = settings["n1"] if isinstance(settings["n1"], (tuple, list)) else (settings["n1"],)
    for n1 in n1_values:
        spec = LogicTaskSpec(str(settings["op"]).upper(), int(n1), n2)
        target = delayed_logic_target(seq, spec).bits
        name = f"{spec.op}-{spec.n1}"
        metrics[f"ber_{name}"] = _decide(out.features, target, train, test)
        metrics[f"ber_in_{name}"] = _decide(inp.features, target, train, test)
        floors[f"ber_{name}"] = floors[f"ber_in_{name}"] = m
    trace = None
    if keep_trace:
        trace = (res.drop.sample_rate, {"drop_power": res.drop.power})
    return CellOutput(metrics, res.drop.sample_rate, floors, trace)


# ---------------------------------------------------------------- pump-probe XOR

XOR_DEFAULTS = {"n_virtual": 3, "alpha": 1.0, "u0": 0.0, "prbs_order": 10, "noise": 0.0}


def xor_states(bitrate: float, tau_fc: float, settings: dict, bits: BitSequence, seed: int):
    """Pump-probe reservoir nodes and the undistorted input nodes, point-sampled."""
    nv = int(settings["n_virtual"])
    theta = 1.0 / (nv * bitrate)
    spn = max(math.ceil(theta / (tau_fc / 20)), 1)
    dt = theta / spn
    cfg = EncodingConfig(np.ones((nv, 1)), float(settings["alpha"]), float(settings["u0"]), theta)
    u = encode(bits.bits[None, :].astype(float), cfg, spn)
    probe = pump_probe_response(u, PumpProbeCoeffs.default(tau_fc), dt)
    res = sample_virtual_nodes(probe, bitrate, nv, 1 / dt, mode="point").features
    inp = sample_virtual_nodes(u, bitrate, nv, 1 / dt, mode="point").features
    noise = float(settings["noise"])
    if noise:
        res = res + noise * np.random.default_rng(seed).normal(size=res.shape)
    return res, inp, (1 / dt, probe)


def run_xor_cell(params: MrrParams, settings: dict, point: dict, seed: int,
                 keep_trace: bool = False, data_seed=None) -> CellOutput:
    """XOR of the current and previous bit; two PRBS periods, the first is warm-up."""
    bitrate = float(_get("bitrate", point, settings))
    base = prbs(int(settings["prbs_order"]), 1)
    m = len(base)
    seq = BitSequence(np.tile(base.bits, 2))
    res, inp, (fs, probe) = xor_states(bitrate, params.tau_fc, settings, seq, seed)
    target = one_bit_delayed_xor_target(seq).bits
    half = m + m // 2
    train, test = slice(m, half), slice(half, 2 * m)
    b_out = _decide(res, target, train, test)
    b_in = _decide(inp, target, train, test)
    n_test = 2 * m - half
    rb = b_in / max(b_out, 1.0 / n_test)
    trace = (fs, {"probe": probe}) if keep_trace else None
    return CellOutput({"ber": b_out, "ber_in": b_in, "rb": rb}, fs,
                      {"ber": n_test, "ber_in": n_test}, trace)


# ---------------------------------------------------------------- delayed-feedback reservoir

FEEDBACK_DEFAULTS = {
    "P": 1e-4, "delta_lambda": -10e-12, "n_virtual": 25, "b_w": 1e-9, "tau_F": 1e-9,
    "eta_F": 0.0, "phi_F": 0.0,
}


def feedback_states(params: MrrParams, x, power: float, detuning: float, fb: FeedbackParams,
                    n_virtual: int, b_w: float, mask_seed: int):
    """Node matrix (N_v x len(x)) of the ring with delayed feedback.

    Each input value is masked onto ``n_virtual`` slots of width ``b_w/n_virtual``.
    Node ``j`` is the drop power divided by ``power`` at the end of slot ``j``.
    Returns ``(states, resonance_shift, result)``; the shift is in metres.
    """
    x = np.asarray(x, dtype=float)
    mask = Mask.random(n_virtual, mask_seed)
    theta = b_w / n_virtual
    spn = math.ceil(theta / (params.photon_lifetime / 20))
    dt = theta / spn
    # one trailing empty slot so the last node's end-of-slot sample exists
    e = mask_encode(np.concatenate([x, [0.0]]), mask, b_w, power, 1)
    res = simulate_with_feedback(params, fb, e, dt=dt, detuning=detuning, record_every=spn)
    p = res.drop.power[1:1 + x.size * n_virtual] / power
    shift = (params.resonance_wavelength(res.trace.delta_T, res.trace.delta_N)
             - params.cold_resonance_wavelength)
    return p.reshape(-1, n_virtual).T, shift, res


def _feedback_args(point, settings):
    fb = FeedbackParams(float(_get("eta_F", point, settings)), float(_get("phi_F", point, settings)),
                        float(_get("tau_F", point, settings)))
    return (float(_get("P", point, settings)), _detuning(point, settings), fb,
            int(settings["n_virtual"]), float(settings["b_w"]))


def _series_nmse(states, target, washout: int, n_train: int) -> float:
    tr = slice(washout, washout + n_train)
    te = slice(washout + n_train, None)
    ro = ridge_cv(states[:, tr], target[None, tr])
    return nmse(ro.predict(states[:, te])[0], target[te])


NARMA_DEFAULTS = dict(FEEDBACK_DEFAULTS, length=2200, washout=200, n_train=1500)


def run_narma_cell(params: MrrParams, settings: dict, point: dict, seed: int,
                   keep_trace: bool = False, data_seed: int | None = None) -> CellOutput:
    """One-step NARMA-10; inputs are rescaled from [0, 0.5] to [0, 1] before masking."""
    data_seed = seed if data_seed is None else data_seed
    u = narma10_inputs(int(settings["length"]), data_seed)
    y = narma10(u)
    power, det, fb, nv, bw = _feedback_args(point, settings)
    states, _, res = feedback_states(params, u / 0.5, power, det, fb, nv, bw, data_seed)
    err = _series_nmse(states, y, int(settings["washout"]), int(settings["n_train"]))
    trace = (res.drop.sample_rate, {"drop_power": res.drop.power}) if keep_trace else None
    return CellOutput({"nmse": err}, res.drop.sample_rate, trace=trace)


MG_DEFAULTS = dict(FEEDBACK_DEFAULTS, P=5e-3, delta_lambda=-30e-12, length=1700, washout=200,
                   n_train=1000, subsample=10, spike_threshold=4.0)


def spike_depth(shift, params: MrrParams, skip: float = 0.2) -> float:
    """Largest excursion of the resonance shift from its median, in resonance linewidths.

    The first ``skip`` fraction of the trace is ignored as transient.
    """
    s = np.asarray(shift, dtype=float)
    s = s[int(skip * s.size):]
    fwhm = params.cold_resonance_wavelength / params.loaded_q
    return float(np.max(np.abs(s - np.median(s))) / fwhm)


def run_mackey_glass_cell(params: MrrParams, settings: dict, point: dict, seed: int,
                          keep_trace: bool = False, data_seed: int | None = None) -> CellOutput:
    """One-step Mackey-Glass prediction; self-pulsing is flagged from resonance-shift spikes."""
    n = int(settings["length"])
    s = rescale(mackey_glass(length=n + 1, subsample=int(settings["subsample"])))
    x, y = s[:-1], s[1:]
    power, det, fb, nv, bw = _feedback_args(point, settings)
    mask_seed = seed if data_seed is None else data_seed
    states, shift, res = feedback_states(params, x, power, det, fb, nv, bw, mask_seed)
    err = _series_nmse(states, y, int(settings["washout"]), int(settings["n_train"]))
    depth = spike_depth(shift, params)
    sp = int(depth > float(settings["spike_threshold"]))
    trace = None
    if keep_trace:
        trace = (res.drop.sample_rate, {"drop_power": res.drop.power, "resonance_shift": shift})
    return CellOutput({"nmse": err, "spike_depth": depth, "self_pulsing": sp,
                       "shift_std": float(np.std(shift[shift.size // 5:]))},
                      res.drop.sample_rate, trace=trace)


MC_DEFAULTS = dict(FEEDBACK_DEFAULTS, l_max=19, n_samples=2000, washout=50, linear_regime=1)


def run_memory_cell(params: MrrParams, settings: dict, point: dict, seed: int,
                    keep_trace: bool = False, data_seed: int | None = None) -> CellOutput:
    """Linear memory capacity; ``linear_regime`` drops every nonlinear coefficient."""
    if int(settings["linear_regime"]):
        params = params.linearized()
    power, det, fb, nv, bw = _feedback_args(point, settings)
    mask_seed = seed if data_seed is None else data_seed
    holder = {}

    def reservoir(inputs):
        states, _, res = feedback_states(params, inputs, power, det, fb, nv, bw, mask_seed)
        holder["res"] = res
        return StateMatrix(states)

    mc, per_lag = memory_capacity(reservoir, int(settings["l_max"]), seed=mask_seed,
                                  n_samples=int(settings["n_samples"]),
                                  washout=int(settings["washout"]))
    res = holder["res"]
    metrics = {"mc": mc}
    metrics.update({f"m_{k + 1}": float(v) for k, v in enumerate(per_lag)})
    trace = (res.drop.sample_rate, {"drop_power": res.drop.power}) if keep_trace else None
    return CellOutput(metrics, res.drop.sample_rate, trace=trace)


# ---------------------------------------------------------------- DCP equalization

DCP_DEFAULTS = {
    "bitrate": 10e9, "prbs_order": 10, "fiber_length": 125e3, "n_channels": 4,
    "base_delay": 50e-12, "dispersion": 17e-6, "samples_per_bit": 16,
    "detector_bandwidth": 20e9, "swarm_size": 24, "max_iter": 60,
}


def run_dcp_cell(params: MrrParams, settings: dict, point: dict, seed: int,
                 keep_trace: bool = False, data_seed=None) -> CellOutput:
    k = int(settings["n_channels"])
    pso = PsoConfig([(0.0, 2 * math.pi)] * k, swarm_size=int(settings["swarm_size"]),
                    max_iter=int(settings["max_iter"]), seed=seed)
    rep = equalize_experiment(
        bitrate=float(_get("bitrate", point, settings)),
        prbs_order=int(settings["prbs_order"]),
        fiber_length=float(_get("fiber_length", point, settings)),
        n_channels=k, base_delay=float(settings["base_delay"]),
        dispersion=float(settings["dispersion"]),
        samples_per_bit=int(settings["samples_per_bit"]),
        detector=DetectorModel(float(settings["detector_bandwidth"])), pso=pso, seed=seed)
    fs = rep.settings["bitrate"] * rep.settings["samples_per_bit"]
    files = {"report.json": rep.to_json() + "\n", "eye.csv": rep.eye_csv()}
    trace = None
    if keep_trace:
        _, comp = rep.eye["compensated"]
        trace = (fs, {"compensated_power": comp})
    return CellOutput({"ber_uncompensated": rep.ber_uncompensated,
                       "ber_compensated": rep.ber_compensated,
                       "separated": int(rep.separated), "final_loss": rep.loss_trace[-1]},
                      fs, {"ber_uncompensated": rep.n_bits, "ber_compensated": rep.n_bits},
                      trace, files)


# ---------------------------------------------------------------- Iris on the pump-probe reservoir

IRIS_DEFAULTS = {"n_virtual": 20, "alpha": 1.0, "u0": 0.0, "train_fraction": 0.5,
                 "samples_per_node": 4, "node_spacing": 0.0}


def run_iris_cell(params: MrrParams, settings: dict, point: dict, seed: int,
                  keep_trace: bool = False, data_seed: int | None = None) -> CellOutput:
    """Winner-takes-all Iris classification with a seeded random input matrix.

    Node spacing defaults to ``tau_fc / n_virtual`` so one sample spans one
    carrier lifetime.
    """
    data_seed = seed if data_seed is None else data_seed
    x, labels, classes = iris_load(default_iris_path())
    nv = int(_get("n_virtual", point, settings))
    rng = np.random.default_rng(data_seed)
    w_in = rng.uniform(0.0, 1.0, (nv, x.shape[0]))
    theta = float(settings["node_spacing"]) or params.tau_fc / nv
    spn = max(int(settings["samples_per_node"]), math.ceil(theta / (params.tau_fc / 20)))
    dt = theta / spn
    cfg = EncodingConfig(w_in, float(settings["alpha"]), float(settings["u0"]), theta)
    u = encode(x, cfg, spn)
    probe = pump_probe_response(u, PumpProbeCoeffs.default(params.tau_fc), dt)
    bitrate = 1.0 / (nv * theta)
    feats = sample_virtual_nodes(probe, bitrate, nv, 1 / dt, mode="point")
    train, test = stratified_split(labels, float(settings["train_fraction"]), data_seed)
    ro = ridge_cv(feats.features[:, train], labels[:, train])
    pred = ro.classify(feats.features[:, test])
    acc = float(np.mean(pred == labels[:, test].argmax(axis=0)))
    trace = (1 / dt, {"probe": probe}) if keep_trace else None
    return CellOutput({"accuracy": acc, "error_rate": 1.0 - acc, "n_test": int(test.size)},
                      1 / dt, trace=trace)


@dataclass(frozen=True)
class ExperimentKind:
    runner: object
    defaults: dict
    axes: dict            # default sweep axes
    default_preset: str
    shared_data: bool = False   # data/mask realisation follows the global seed


KINDS = {
    "stability_map": ExperimentKind(
        run_stability_cell, STABILITY_DEFAULTS,
        {"P": (1e-4, 1e-3, 3e-3, 1e-2), "delta_nu": (-20e9, 0.0, 20e9)}, "selfpulsing"),
    "logic_task": ExperimentKind(
        run_logic_cell, LOGIC_DEFAULTS,
        {"bitrate": (100e6, 200e6, 500e6, 1e9, 2e9, 4e9),
         "delta_nu": (-30e9, -20e9, -10e9, 0.0, 10e9, 20e9, 30e9),
         "P": (1e-3, 3e-3, 1e-2)}, "logic"),
    "xor_rc": ExperimentKind(
        run_xor_cell, XOR_DEFAULTS,
        {"bitrate": (2e6, 5e6, 10e6, 20e6, 50e6, 100e6, 200e6, 500e6, 1e9)}, "selfpulsing"),
    "narma10": ExperimentKind(
        run_narma_cell, NARMA_DEFAULTS,
        {"eta_F": tuple(np.linspace(0, 1, 8)), "phi_F": tuple(np.arange(8) * math.pi / 4)},
        "feedback", True),
    "mackey_glass": ExperimentKind(
        run_mackey_glass_cell, MG_DEFAULTS,
        {"eta_F": tuple(np.linspace(0, 1, 8)), "phi_F": tuple(np.arange(8) * math.pi / 4)},
        "feedback", True),
    "memory_capacity": ExperimentKind(
        run_memory_cell, MC_DEFAULTS,
        {"eta_F": (0.0, 0.9), "phi_F": tuple(np.arange(8) * math.pi / 4)}, "feedback", True),
    "dcp_equalize": ExperimentKind(run_dcp_cell, DCP_DEFAULTS, {"fiber_length": (0.0, 125e3)},
                                   "linear"),
    "iris": ExperimentKind(run_iris_cell, IRIS_DEFAULTS, {"n_virtual": (20,)}, "selfpulsing", True),
}

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ringrc.dcp import (DcpParams, FiberChannel, PsoConfig, dcp_apply, dcp_field,
                        dispersion_channel, equalize_experiment, pso_train, separation_loss)
from ringrc.signal import BitSequence, SampledSignal, ber, best_threshold, threshold_decide


def random_field(n=256, seed=0, fs=1e12):
    rng = np.random.default_rng(seed)
    return SampledSignal(rng.normal(size=n) + 1j * rng.normal(size=n), fs)


# ---------------------------------------------------------------- perceptron

def test_single_arm_is_square_law():
    s = random_field()
    assert np.allclose(dcp_apply(s, DcpParams((0.3,), 1e-12)), np.abs(s.samples) ** 2)


def test_two_arm_interference():
    cw = SampledSignal(np.full(64, 0.5 + 0.2j), 1e12)
    assert np.allclose(dcp_apply(cw, DcpParams((0.0, math.pi), 1e-12)), 0.0, atol=1e-30)
    assert np.allclose(dcp_apply(cw, DcpParams((0.0, 0.0), 1e-12)), 2 * abs(0.5 + 0.2j) ** 2)


def test_delayed_arms_against_direct_sum():
    s = random_field(100, 3)
    p = DcpParams((0.1, 1.2, -0.7), 2e-12)
    u = s.samples
    ref = [abs(sum(u[n + 4 - 2 * k] * np.exp(1j * ph) for k, ph in enumerate(p.phases))) ** 2 / 3
           for n in range(96)]
    assert np.allclose(dcp_apply(s, p), ref, rtol=1e-12)
    assert dcp_field(s, p).t_start == pytest.approx(4e-12)


@settings(max_examples=30)
@given(st.lists(st.floats(-10, 10), min_size=1, max_size=5), st.floats(-10, 10))
def test_global_phase_invariance(phases, shift):
    s = random_field(64, 1)
    a = dcp_apply(s, DcpParams(tuple(phases), 1e-12))
    b = dcp_apply(s, DcpParams(tuple(p + shift for p in phases), 1e-12))
    assert np.allclose(a, b, rtol=1e-9, atol=1e-12)


def test_dcp_guards():
    with pytest.raises(ValueError):
        DcpParams((0.0, math.nan))
    with pytest.raises(ValueError):
        dcp_apply(random_field(8), DcpParams((0, 0, 0), 5e-12))
    with pytest.raises(ValueError):
        dcp_apply(random_field(64), DcpParams((0, 0), 1.5e-12))


# ---------------------------------------------------------------- fiber

def test_zero_length_fiber_is_identity():
    s = random_field()
    assert dispersion_channel(s, FiberChannel(0.0)) is s


def test_single_tone_passes_with_unit_gain():
    fs, n = 1e12, 512
    t = np.arange(n) / fs
    tone = SampledSignal(np.exp(2j * np.pi * (16 * fs / n) * t), fs)
    out = dispersion_channel(tone, FiberChannel(50e3))
    assert np.allclose(np.abs(out.samples), 1.0, atol=1e-9)


def test_gaussian_pulse_broadening():
    fs, n, t0 = 4e12, 2 ** 14, 5e-12
    t = (np.arange(n) - n / 2) / fs
    pulse = SampledSignal(np.exp(-t ** 2 / (2 * t0 ** 2)) + 0j, fs)
    ch = FiberChannel(20e3)
    out = dispersion_channel(pulse, ch)

    def rms(p):
        w = p / p.sum()
        mu = (w * t).sum()
        return math.sqrt((w * (t - mu) ** 2).sum())

    expected = t0 * math.sqrt(1 + (ch.beta2 * ch.length / t0 ** 2) ** 2)
    ratio = rms(out.power) / rms(pulse.power)
    assert ratio == pytest.approx(expected / t0, rel=0.01)
    assert ratio > 2


def test_fiber_conserves_energy_and_cascades():
    s = random_field(1024, 4)
    a = dispersion_channel(s, FiberChannel(30e3))
    assert abs(a.energy() - s.energy()) / s.energy() < 1e-9
    two = dispersion_channel(dispersion_channel(s, FiberChannel(10e3)), FiberChannel(20e3))
    assert np.max(np.abs(two.samples - a.samples)) / np.max(np.abs(a.samples)) < 1e-9


def test_fiber_rejects_negative_length():
    with pytest.raises(ValueError):
        FiberChannel(-1.0)


# ---------------------------------------------------------------- loss and PSO

def test_separation_loss_cases():
    bits = np.array([0, 1, 0, 1])
    assert separation_loss([0.0, 1.0, 0.0, 1.0], bits) == pytest.approx(-1.0)
    assert separation_loss([0.0, 1.0, 0.5, 1.0], bits) == pytest.approx(-0.5 / 0.75)
    overlap = separation_loss([0.0, 0.4, 0.6, 1.0], bits)
    assert 0 < overlap < 1e3
    assert separation_loss([1.0, 0.0, 1.0, 0.0], bits) > 1e3
    with pytest.raises(ValueError):
        separation_loss([1.0, 2.0], [1, 1])


def test_separation_loss_sign_tracks_ber():
    rng = np.random.default_rng(11)
    bits = rng.integers(0, 2, 200)
    for _ in range(20):
        gap = rng.normal(0.2, 0.3)
        values = bits * (1 + gap) + rng.uniform(0, 1, 200)
        loss = separation_loss(values, bits)
        thr = best_threshold(values, bits)
        err = ber(threshold_decide(values, thr), BitSequence(bits))
        assert (loss < 0) == (err == 0)


def test_pso_minimises_sphere():
    cfg = PsoConfig(bounds=[(-5, 5)] * 3, swarm_size=20, max_iter=100, seed=1)
    best, trace = pso_train(lambda p: float(np.sum((p - 1.0) ** 2)), cfg)
    assert np.sum((best - 1.0) ** 2) < 1e-3
    assert np.all(np.diff(trace) <= 0)
    assert trace.size == 101


def test_pso_constant_objective_and_determinism():
    cfg = PsoConfig(bounds=[(0, 1)] * 2, swarm_size=5, max_iter=10, seed=3)
    _, trace = pso_train(lambda p: 2.5, cfg)
    assert np.all(trace == 2.5)
    f = lambda p: float(np.sin(5 * p).sum())
    a, ta = pso_train(f, cfg)
    b, tb = pso_train(f, cfg)
    assert np.array_equal(a, b) and np.array_equal(ta, tb)


def test_pso_rejects_nonfinite_objective():
    cfg = PsoConfig(bounds=[(0, 1)], swarm_size=3, max_iter=2)
    with pytest.raises(FloatingPointError):
        pso_train(lambda p: math.nan, cfg)
    with pytest.raises(ValueError):
        PsoConfig(bounds=[(1, 0)])


# ---------------------------------------------------------------- experiment

FAST = dict(prbs_order=7, swarm_size=12, max_iter=15)


def run_small(**kw):
    cfg = dict(FAST)
    cfg.update(kw)
    pso = PsoConfig(bounds=[(0.0, 2 * math.pi)] * 4, swarm_size=cfg.pop("swarm_size"),
                    max_iter=cfg.pop("max_iter"), seed=0)
    return equalize_experiment(pso=pso, **cfg)


def test_back_to_back_needs_no_equalisation():
    r = run_small(fiber_length=0.0)
    assert r.ber_uncompensated == 0 and r.ber_compensated == 0


def test_scale_covariance():
    from ringrc.signal import DetectorModel
    a = run_small(bitrate=10e9, base_delay=50e-12, fiber_length=60e3,
                  detector=DetectorModel(20e9))
    b = run_small(bitrate=5e9, base_delay=100e-12, fiber_length=240e3,
                  detector=DetectorModel(10e9))
    assert a.ber_uncompensated == b.ber_uncompensated
    assert a.ber_compensated == b.ber_compensated
    assert np.allclose(a.loss_trace, b.loss_trace, rtol=1e-6)


def test_report_outputs(tmp_path):
    r = run_small(fiber_length=60e3)
    d = json.loads(r.to_json())
    assert set(d) >= {"ber_uncompensated", "ber_compensated", "phases", "loss_trace",
                      "histograms", "separated", "n_bits"}
    assert len(d["phases"]) == 4 and d["n_bits"] == 127
    h = d["histograms"]["compensated"]
    assert sum(h["zeros"]) + sum(h["ones"]) == 127
    r.write_eye_csv(tmp_path / "eye.csv")
    lines = (tmp_path / "eye.csv").read_text().splitlines()
    assert lines[0] == "stage,bit_phase,power"
    assert len(lines) == 1 + 2 * 127 * 16
    assert {ln.split(",")[0] for ln in lines[1:]} == {"uncompensated", "compensated"}

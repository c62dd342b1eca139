import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ringrc.signal import (BitSequence, DetectorModel, SampledSignal, ber, best_threshold, detect,
                           lowpass, nmse, nrz_modulate, prbs, threshold_decide)


def lfsr_period(order, taps, seed=1):
    """Independent LFSR: count states until the register returns to the seed."""
    mask = (1 << order) - 1
    state, n = seed, 0
    while True:
        fb = 0
        for t in taps:
            fb ^= (state >> (t - 1)) & 1
        state = ((state << 1) | fb) & mask
        n += 1
        if state == seed:
            return n


@pytest.mark.parametrize("order", range(2, 13))
def test_prbs_is_maximal_length(order):
    from ringrc.signal import PRBS_TAPS
    seq = prbs(order)
    assert len(seq) == 2 ** order - 1
    assert lfsr_period(order, PRBS_TAPS[order]) == 2 ** order - 1
    assert int(seq.bits.sum()) == 2 ** (order - 1)


def test_prbs_known_lengths_and_errors():
    assert len(prbs(8)) == 255
    assert len(prbs(10)) == 1023
    with pytest.raises(ValueError):
        prbs(8, seed=0)
    with pytest.raises(ValueError):
        prbs(1)
    with pytest.raises(ValueError):
        prbs(32)


def test_prbs_period_scan_order_10():
    # any window of `order` bits occurs exactly once per period (except all-zeros)
    b = prbs(10).bits
    ext = np.concatenate([b, b[:9]])
    words = {tuple(ext[i:i + 10]) for i in range(b.size)}
    assert len(words) == 1023 and (0,) * 10 not in words


def test_nrz_levels():
    s = nrz_modulate(BitSequence(np.array([0, 1, 0])), 4, 1e-3)
    assert np.allclose(s.power, [0] * 4 + [1e-3] * 4 + [0] * 4)
    assert np.all(s.samples.imag == 0)
    one = nrz_modulate(BitSequence(np.array([1])), 8, 1e-3)
    assert np.allclose(one.power, 1e-3)
    seq = nrz_modulate(BitSequence(prbs(10).bits, 10e9), 16, 1e-3)
    assert seq.duration == pytest.approx(1023 / 1e10)
    with pytest.raises(ValueError):
        nrz_modulate(BitSequence(np.array([1])), 4, 1e-3, p_low=2e-3)


def test_detect_cw_zero_and_step():
    cw = SampledSignal(np.full(100, np.sqrt(2e-3), complex), 1e12)
    assert np.allclose(detect(cw, DetectorModel(1e15)), 2e-3)
    assert np.all(detect(SampledSignal(np.zeros(50, complex), 1e9), DetectorModel(1e9)) == 0)
    fs, bw = 1e13, 10e9
    x = np.concatenate([np.zeros(10), np.ones(4000)])
    y = detect(SampledSignal(np.sqrt(x) + 0j, fs), DetectorModel(bw))
    t = (np.arange(y.size) - 10) / fs
    tau = 1 / (2 * np.pi * bw)
    ref = np.where(t >= 0, 1 - np.exp(-t / tau), 0.0)
    assert np.max(np.abs(y - ref)[10:]) < 0.02


def test_detect_noise_is_seeded():
    s = SampledSignal(np.ones(64, complex), 1e9)
    det = DetectorModel(1e8, noise_std=1e-3)
    assert np.array_equal(detect(s, det, 4), detect(s, det, 4))
    assert not np.array_equal(detect(s, det, 4), detect(s, det, 5))
    quiet = DetectorModel(1e8, noise_std=1e-3, noise_enabled=False)
    assert np.allclose(detect(s, quiet, 4), 1.0)


@given(st.lists(st.floats(0, 1), min_size=2, max_size=40), st.floats(0, 1))
def test_detect_monotone_in_power(p, extra):
    p = np.array(p)
    lo = detect(SampledSignal(np.sqrt(p) + 0j, 1e9), DetectorModel(2e8))
    hi = detect(SampledSignal(np.sqrt(p + extra) + 0j, 1e9), DetectorModel(2e8))
    assert np.all(hi >= lo - 1e-15)


def test_ber_cases():
    a = BitSequence(np.array([0, 1, 1, 0]))
    assert ber(a, a) == 0
    assert ber(a, BitSequence(1 - a.bits)) == 1
    assert ber(a, BitSequence(np.array([0, 1, 0, 1]))) == 0.5
    with pytest.raises(ValueError):
        ber(a, BitSequence(np.array([0, 1])))


@given(st.lists(st.integers(0, 1), min_size=1, max_size=50), st.randoms())
def test_ber_symmetric(bits, rnd):
    a = np.array(bits)
    b = np.array([rnd.randint(0, 1) for _ in bits])
    assert ber(BitSequence(a), BitSequence(b)) == ber(BitSequence(b), BitSequence(a))


def test_threshold_decide():
    assert list(threshold_decide([0.2, 0.8], 0.5).bits) == [0, 1]
    assert not threshold_decide([0.1, 0.2], 0.5).bits.any()


@settings(max_examples=50)
@given(st.lists(st.tuples(st.floats(-5, 5), st.integers(0, 1)), min_size=2, max_size=30))
def test_best_threshold_matches_brute_force(pairs):
    a = np.array([p[0] for p in pairs])
    t = np.array([p[1] for p in pairs])
    thr = best_threshold(a, t)
    got = ber(threshold_decide(a, thr), BitSequence(t))
    cands = np.concatenate([[a.min() - 1], a])
    best = min(ber(threshold_decide(a, c), BitSequence(t)) for c in cands)
    assert got == best


def test_nmse_cases():
    t = np.array([1.0, 2.0, 4.0, 7.0])
    assert nmse(t, t) == 0
    assert nmse(np.full(4, t.mean()), t) == pytest.approx(1.0)
    rng = np.random.default_rng(0)
    p, q = rng.normal(size=200), rng.normal(size=200)
    two_pass = sum((a - b) ** 2 for a, b in zip(p, q)) / len(q)
    m = sum(q) / len(q)
    var = sum((v - m) ** 2 for v in q) / len(q)
    assert nmse(p, q) == pytest.approx(two_pass / var, rel=1e-12)
    with pytest.raises(ValueError):
        nmse([1.0, 2.0], [3.0, 3.0])


def test_nmse_changes_when_only_target_shifts():
    t = np.array([0.0, 1.0, 2.0, 3.0])
    p = t + 0.1
    assert nmse(p + 1.0, t + 1.0) == pytest.approx(nmse(p, t))
    assert nmse(p, t + 1.0) != pytest.approx(nmse(p, t))


def test_signal_invariants():
    with pytest.raises(ValueError):
        SampledSignal(np.array([], complex), 1.0)
    with pytest.raises(ValueError):
        SampledSignal(np.array([np.nan]), 1.0)
    with pytest.raises(ValueError):
        SampledSignal(np.ones(3), 0.0)
    with pytest.raises(ValueError):
        BitSequence(np.array([0, 2]))


def test_waveform_csv_and_binary_roundtrip(tmp_path):
    s = SampledSignal(np.array([1 + 2j, -0.5j, 3.25]), 2e9, 1e-9)
    s.to_csv(tmp_path / "w.csv")
    back = SampledSignal.from_csv(tmp_path / "w.csv")
    assert np.array_equal(back.samples, s.samples)
    assert back.sample_rate == pytest.approx(s.sample_rate, rel=1e-12)
    s.save(tmp_path / "w.bin")
    blob = (tmp_path / "w.bin").read_bytes()
    assert blob[:8] == b"RRSIG\x00\x00\x01"
    back = SampledSignal.load(tmp_path / "w.bin")
    assert np.array_equal(back.samples, s.samples) and back.sample_rate == s.sample_rate
    with pytest.raises(ValueError):
        SampledSignal.from_bytes(b"XXXXXXXX" + blob[8:])


def test_lowpass_starts_in_steady_state():
    assert np.allclose(lowpass(np.full(10, 3.0), 1e9, 1e8), 3.0)

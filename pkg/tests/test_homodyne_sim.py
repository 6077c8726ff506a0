import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from qeff.cavity_dynamics import (EXCITED, GROUND, ReadoutParams, compute_trajectory,
                                  depleted_envelope, dephasing_exponent, optimal_weights,
                                  signal_and_noise, square_weights)
from qeff.errors import InvalidInputError
from qeff.homodyne_sim import (RamseyFringeData, averaged_transients, generate_record,
                               integrate_shot, integrated_moments, mean_transients,
                               read_shots_csv, sample_integrated_shots, shot_rng, signal_gain,
                               simulate_ramsey, write_record_csv, write_shots_csv)
from qeff.pulses import PulseEnvelope, PulseSegment, square_ramp_envelope


@pytest.fixture
def short_traj(nominal):
    env = PulseEnvelope((PulseSegment(100e-9, 0.25),), 1e-9, 20e-9)
    return compute_trajectory(nominal, env)


@pytest.fixture
def nominal_traj(nominal):
    return compute_trajectory(nominal, depleted_envelope(nominal, square_ramp_envelope(0.25)))


def test_streams_are_keyed_not_ordered():
    a = shot_rng(5, 1, 2).standard_normal(3)
    b = shot_rng(5, 1, 2).standard_normal(3)
    c = shot_rng(5, 1, 3).standard_normal(3)
    assert np.array_equal(a, b) and not np.array_equal(a, c)
    with pytest.raises(InvalidInputError):
        shot_rng(-1)


def test_record_deterministic_and_index_independent(nominal, short_traj):
    r1 = generate_record(short_traj, nominal, EXCITED, 9, shot_index=4)
    generate_record(short_traj, nominal, EXCITED, 9, shot_index=3)
    r2 = generate_record(short_traj, nominal, EXCITED, 9, shot_index=4)
    assert np.array_equal(r1.v_i, r2.v_i) and np.array_equal(r1.v_q, r2.v_q)
    r3 = generate_record(short_traj, nominal, EXCITED, 9, shot_index=5)
    assert not np.array_equal(r1.v_i, r3.v_i)


def test_record_rejects_bad_state(nominal, short_traj):
    with pytest.raises(InvalidInputError):
        generate_record(short_traj, nominal, 3, 0)


def test_zero_field_record_is_scaled_white_noise():
    p = ReadoutParams.nominal(eta=1.0, v0=2.5)
    env = PulseEnvelope((PulseSegment(20000e-9, 0.0),), 1e-9)
    traj = compute_trajectory(p, env)
    r = generate_record(traj, p, GROUND, 1)
    n = len(r.v_i)
    expected = p.v0 ** 2 / 1e-9
    # sample variance of n normals has relative sd sqrt(2/n)
    for v in (r.v_i, r.v_q):
        assert abs(np.mean(v)) < 4 * np.sqrt(expected / n)
        assert abs(np.var(v) / expected - 1) < 4 * np.sqrt(2 / n)


def test_record_mean_converges_to_field(nominal, short_traj):
    # 1e5 independent records; per-sample mean within 4 standard errors
    n = 100_000
    s = np.zeros(len(short_traj.times))
    s2 = np.zeros_like(s)
    sq = np.zeros_like(s)
    for i in range(n):
        r = generate_record(short_traj, nominal, EXCITED, 3, i)
        s += r.v_i
        s2 += r.v_i ** 2
        sq += r.v_q
    mean = s / n
    se = np.sqrt(s2 / n - mean ** 2) / np.sqrt(n)
    target = signal_gain(nominal) * short_traj.alpha1
    assert np.all(np.abs(mean - target.real) < 4 * se)
    assert np.all(np.abs(sq / n - target.imag) < 4 * se)


def test_quadrature_noise_independent(nominal, short_traj):
    p = nominal.replace(eta=1.0)
    mi, mq = mean_transients(short_traj, p, GROUND)
    gi, gq = [], []
    for i in range(2000):
        r = generate_record(short_traj, p, GROUND, 11, i)
        gi.append(r.v_i - mi)
        gq.append(r.v_q - mq)
    gi, gq = np.concatenate(gi), np.concatenate(gq)
    r = np.corrcoef(gi, gq)[0, 1]
    assert abs(r) < 4 / np.sqrt(len(gi))


def test_integrated_moments_match_full_records(nominal, nominal_traj):
    w = optimal_weights(nominal_traj, nominal)
    m0, m1, sd = integrated_moments(nominal_traj, nominal, w)
    s, noise = signal_and_noise(nominal_traj, nominal, w)
    assert abs(m1 - m0) == pytest.approx(s, rel=1e-12)
    assert sd == pytest.approx(noise, rel=2e-3)  # sum c^2/dt vs int dt: end-point halves
    n = 2 ** 12
    v1 = np.array([integrate_shot(generate_record(nominal_traj, nominal, EXCITED, 2, i), w).v_int
                   for i in range(n)])
    assert abs(v1.mean() - m1) < 4 * sd / np.sqrt(n)
    assert abs(v1.std(ddof=1) / sd - 1) < 4 / np.sqrt(2 * n)
    fast = sample_integrated_shots(nominal_traj, nominal, w, EXCITED, n, 2)
    assert stats.ks_2samp(v1, fast).pvalue > 1e-3


def test_integrate_shot_grid_mismatch(nominal, short_traj, nominal_traj):
    r = generate_record(short_traj, nominal, GROUND, 0)
    with pytest.raises(InvalidInputError):
        integrate_shot(r, square_weights(0.0, nominal_traj))


def test_separation_matches_signal(nominal, nominal_traj):
    w = square_weights(1.0, nominal_traj)
    n = 2 ** 15
    x0 = sample_integrated_shots(nominal_traj, nominal, w, GROUND, n, 4)
    x1 = sample_integrated_shots(nominal_traj, nominal, w, EXCITED, n, 4)
    s, noise = signal_and_noise(nominal_traj, nominal, w)
    se = noise * np.sqrt(2 / n)
    assert abs(abs(x1.mean() - x0.mean()) - s) < 4 * se


def test_preparation_errors_flip_the_requested_fraction(nominal):
    # strong pulse (SNR ~ 11) so that the two Gaussians do not overlap
    traj = compute_trajectory(nominal, depleted_envelope(nominal, square_ramp_envelope(2.0)))
    w = optimal_weights(traj, nominal)
    m0, m1, _ = integrated_moments(traj, nominal, w)
    x = sample_integrated_shots(traj, nominal, w, EXCITED, 20000, 1, prep_error=0.05)
    frac = np.mean(np.abs(x - m0) < np.abs(x - m1))
    assert frac == pytest.approx(0.05, abs=0.01)
    with pytest.raises(InvalidInputError):
        sample_integrated_shots(traj, nominal, w, EXCITED, 10, 1, prep_error=0.6)


def test_averaged_transients(nominal, nominal_traj):
    mi, mq = averaged_transients(nominal_traj, nominal, GROUND, None)
    ref_i, ref_q = mean_transients(nominal_traj, nominal, GROUND)
    assert np.array_equal(mi, ref_i) and np.array_equal(mq, ref_q)
    ni, _ = averaged_transients(nominal_traj, nominal, GROUND, 400, seed=3)
    resid = (ni - ref_i) * np.sqrt(1e-9 * 400) / nominal.v0
    assert abs(np.std(resid) - 1) < 4 / np.sqrt(2 * len(resid))
    with pytest.raises(InvalidInputError):
        averaged_transients(nominal_traj, nominal, GROUND, 0)


def test_ramsey_without_drive_has_full_contrast(nominal):
    d = simulate_ramsey(nominal, square_ramp_envelope(0.0), 32, 4096, seed=1)
    amp = np.hypot(*np.linalg.lstsq(np.column_stack([np.cos(d.phi), np.sin(d.phi)]),
                                    d.sigma_z, rcond=None)[0])
    # binomial error per point ~ 1/sqrt(4096); amplitude error ~ that * sqrt(2/32)
    assert amp == pytest.approx(1.0, abs=4 * np.sqrt(2 / 32) / 64)
    assert d.phi[0] == 0 and d.phi[-1] == pytest.approx(4 * np.pi)


def test_ramsey_noiseless_limit_follows_dephasing(nominal):
    env = depleted_envelope(nominal, square_ramp_envelope(0.1))
    traj = compute_trajectory(nominal, env)
    d = simulate_ramsey(nominal, env, 64, 10 ** 9, seed=2, baseline=0.9, traj=traj)
    amp = np.hypot(*np.linalg.lstsq(np.column_stack([np.cos(d.phi), np.sin(d.phi)]),
                                    d.sigma_z, rcond=None)[0])
    assert amp == pytest.approx(0.9 * np.exp(-dephasing_exponent(traj, nominal.chi)), abs=3e-4)


def test_ramsey_validation(nominal):
    with pytest.raises(InvalidInputError):
        simulate_ramsey(nominal, square_ramp_envelope(0.1), n_phases=4)
    with pytest.raises(InvalidInputError):
        simulate_ramsey(nominal, square_ramp_envelope(0.1), baseline=1.5)
    with pytest.raises(InvalidInputError):
        RamseyFringeData(np.zeros(3), np.array([0.0, 1.2, 0.0]), 10)


def test_csv_round_trips(tmp_path, nominal, short_traj):
    shots = {0: np.array([0.1, -0.2]), 1: np.array([1.5])}
    write_shots_csv(tmp_path / "s.csv", shots)
    back = read_shots_csv(tmp_path / "s.csv")
    assert np.array_equal(back[0], shots[0]) and np.array_equal(back[1], shots[1])
    r = generate_record(short_traj, nominal, GROUND, 0)
    write_record_csv(tmp_path / "r.csv", r)
    data = np.loadtxt(tmp_path / "r.csv", delimiter=",", skiprows=1)
    assert np.array_equal(data[:, 1], r.v_i)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31), st.integers(0, 1))
def test_fast_shots_reproducible(seed, state):
    p = ReadoutParams.nominal()
    traj = compute_trajectory(p, PulseEnvelope((PulseSegment(50e-9, 0.3),), 1e-9, 10e-9))
    w = square_weights(0.3, traj)
    a = sample_integrated_shots(traj, p, w, state, 100, seed, prep_error=0.1)
    b = sample_integrated_shots(traj, p, w, state, 100, seed, prep_error=0.1)
    assert np.array_equal(a, b)

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from adrefocus.model import (ChirpedPulse, FreeEvolution, InhomogeneousDistribution, Magnetization,
                             OpticalProbe, PulseKind, PulseSequence, RelaxationParams, SequenceError,
                             refocusing_block, refocusing_sequence, validate_sequence)
from adrefocus.units import TWO_PI, UnitError, angular, format_frequency, format_time, parse_quantity

TABLE1_RABI = TWO_PI * 284.4e3
TABLE1_CHIRP = TWO_PI * 40e9  # 40 kHz/us


class TestUnits:
    @pytest.mark.parametrize("text, kind, expected", [
        ("284.4 kHz", "frequency", 284.4e3),
        ("0.5MHz", "frequency", 0.5e6),
        ("0.33 ms", "time", 0.33e-3),
        ("7.1 us", "time", 7.1e-6),
        ("40 kHz/us", "chirp", 40e9),
        ("40 MHz/ms", "chirp", 40e9),
        ("3.0 1/ms", "rate", 3.0e3),
        ("3 ms^-1", "rate", 3.0e3),
        ("120 V", "voltage", 120.0),
        ("2.4 kHz/V", "slope", 2.4e3),
    ])
    def test_parse(self, text, kind, expected):
        assert parse_quantity(text, kind) == pytest.approx(expected, rel=1e-15)

    @pytest.mark.parametrize("text, kind", [
        ("284.4", "frequency"), (284.4, "frequency"), ("1 ms", "frequency"),
        ("40 kHz", "chirp"), ("abc", "time"), ("5 furlongs", "time"),
    ])
    def test_rejects(self, text, kind):
        with pytest.raises(UnitError):
            parse_quantity(text, kind)

    def test_angular_and_format(self):
        assert angular(1.0) == pytest.approx(TWO_PI)
        assert format_frequency(angular(4e6)) == "4 MHz"
        assert format_time(7.11e-6) == "7.11 us"


class TestPulse:
    def test_table1_metrics(self):
        p = ChirpedPulse(TABLE1_RABI, TABLE1_CHIRP, 50e-6, 100e-6)
        # Q = Omega^2 / r with Omega, r in angular units
        assert p.adiabaticity == pytest.approx(TWO_PI * 284.4e3 ** 2 / 40e9, rel=1e-12)
        assert round(p.adiabaticity, 1) == 12.7
        assert round(p.flip_time * 1e6, 1) == 7.1

    @pytest.mark.parametrize("kwargs", [
        dict(rabi=0.0), dict(rabi=-1.0), dict(duration=0.0), dict(chirp_rate=math.inf),
    ])
    def test_invalid(self, kwargs):
        base = dict(rabi=TABLE1_RABI, chirp_rate=TABLE1_CHIRP, center_time=0.0, duration=1e-4)
        base.update(kwargs)
        with pytest.raises(SequenceError):
            ChirpedPulse(**base)

    def test_phase_is_even(self):
        p = ChirpedPulse(TABLE1_RABI, TABLE1_CHIRP, 3e-5, 1e-4)
        s = np.linspace(0, 5e-5, 11)
        np.testing.assert_allclose(p.phase(p.center_time + s), p.phase(p.center_time - s), rtol=1e-9)

    def test_ahp_windows(self):
        up = ChirpedPulse(TABLE1_RABI, TABLE1_CHIRP, 0.0, 5e-5, PulseKind.AHP_UP)
        down = ChirpedPulse(TABLE1_RABI, -TABLE1_CHIRP, 2e-4, 5e-5, PulseKind.AHP_DOWN)
        assert (up.start, up.end) == (-5e-5, 0.0)
        assert (down.start, down.end) == (2e-4, 2.5e-4)


class TestSequence:
    def test_overlap_rejected(self):
        a = ChirpedPulse(TABLE1_RABI, TABLE1_CHIRP, 5e-5, 1e-4)
        b = ChirpedPulse(TABLE1_RABI, TABLE1_CHIRP, 1.2e-4, 1e-4)
        with pytest.raises(SequenceError):
            PulseSequence((a, b))

    def test_empty_rejected(self):
        with pytest.raises(SequenceError):
            PulseSequence(())

    def test_afp_longer_than_half_period(self):
        with pytest.raises(SequenceError):
            refocusing_block(TABLE1_RABI, TABLE1_CHIRP, 2e-4, afp_duration=1.5e-4)

    def test_canonical_layout(self):
        T = 2e-4
        seq = refocusing_sequence(TABLE1_RABI, TABLE1_CHIRP, T, afp_duration=1e-4)
        kinds = [p.kind for p in seq.pulses]
        assert kinds == [PulseKind.AHP_UP, PulseKind.AFP, PulseKind.AFP, PulseKind.AHP_DOWN]
        first, afp1, afp2, last = seq.pulses
        assert first.end == 0.0
        assert afp1.center_time == pytest.approx(T / 4)
        assert afp2.center_time == pytest.approx(3 * T / 4)
        assert last.start == pytest.approx(T)
        # closing half passage sweeps with the opposite sign
        assert np.sign(last.chirp_rate) == -np.sign(first.chirp_rate)

    def test_free_evolution_negative(self):
        with pytest.raises(SequenceError):
            FreeEvolution(0.0, -1.0)

    def test_block_tiles_float_period(self):
        # periods that are not exact binary fractions must not trip the overlap check
        for T in (0.2e-3, 0.3e-3, 0.7e-3, 1.1e-3):
            seq = refocusing_block(TABLE1_RABI, TABLE1_CHIRP, T, afp_duration=1e-4, t0=0.1e-3)
            assert seq.t_end == pytest.approx(0.1e-3 + T)


class TestDistribution:
    @settings(max_examples=40, deadline=None)
    @given(n=st.integers(1, 400).map(lambda k: 2 * k + 1),
           shape=st.sampled_from(["gaussian", "lorentzian"]),
           fwhm_hz=st.floats(1e3, 1e7))
    def test_weights_normalized_and_symmetric(self, n, shape, fwhm_hz):
        make = getattr(InhomogeneousDistribution, shape)
        d = make(angular(fwhm_hz), n)
        assert abs(d.weights.sum() - 1.0) <= 1e-12
        assert np.array_equal(d.nodes, -d.nodes[::-1])
        assert np.array_equal(d.weights, d.weights[::-1])

    def test_gaussian_fwhm_convention(self):
        d = InhomogeneousDistribution.gaussian(angular(1e6))
        half = d.density(np.array([0.5 * d.fwhm]))[0] / d.density(np.array([0.0]))[0]
        assert half == pytest.approx(0.5, rel=1e-12)

    def test_gaussian_moment_oracle(self):
        # second moment of a normalized Gaussian is sigma^2 = (FWHM / (2 sqrt(2 ln 2)))^2
        fwhm = angular(0.5e6)
        d = InhomogeneousDistribution.gaussian(fwhm, 4001, 6.0)
        sigma = fwhm / (2 * math.sqrt(2 * math.log(2)))
        assert d.mean(d.nodes ** 2) == pytest.approx(sigma ** 2, rel=1e-9)

    def test_custom_tabulated(self):
        x = np.linspace(-1, 1, 201)
        d = InhomogeneousDistribution.custom(x, 1 - np.abs(x))
        assert abs(d.weights.sum() - 1.0) <= 1e-12
        assert d.fwhm == pytest.approx(1.0, abs=0.011)

    def test_sampling_is_seeded(self):
        base = InhomogeneousDistribution.gaussian(angular(1e6))
        a = base.sample(2000, seed=1)
        b = base.sample(2000, seed=1)
        c = base.sample(2000, seed=2)
        assert np.array_equal(a.nodes, b.nodes)
        assert not np.array_equal(a.nodes, c.nodes)
        assert a.weights.sum() == pytest.approx(1.0, abs=1e-12)
        sigma = base.fwhm / (2 * math.sqrt(2 * math.log(2)))
        assert np.std(a.nodes) == pytest.approx(sigma, rel=0.03)

    def test_even_node_count_rejected(self):
        with pytest.raises(ValueError):
            InhomogeneousDistribution.gaussian(angular(1e6), 100)

    def test_rabi_spread_keeps_normalization(self):
        d = InhomogeneousDistribution.gaussian(angular(1e6), 101).with_rabi_spread(0.1)
        assert d.nodes.size == 505
        assert d.weights.sum() == pytest.approx(1.0, abs=1e-12)
        assert d.mean(d.rabi_scale) == pytest.approx(1.0, abs=1e-12)


class TestValidation:
    def test_table1_report(self):
        seq = refocusing_sequence(TABLE1_RABI, TABLE1_CHIRP, 2e-4, afp_duration=1e-4)
        rep = validate_sequence(seq, InhomogeneousDistribution.gaussian(angular(0.5e6)))
        for s in rep.segments:
            assert round(s.adiabaticity, 1) == 12.7
            assert round(s.flip_time * 1e6, 1) == 7.1
        assert "Q = 12.7" in rep.format()

    def test_fig2_warning_free(self):
        seq = refocusing_sequence(angular(0.28e6), angular(0.04e12), 2e-4, afp_duration=1e-4)
        rep = validate_sequence(seq, InhomogeneousDistribution.gaussian(angular(1e6)))
        assert round(rep.segments[1].adiabaticity, 1) == 12.3
        assert rep.segments[1].coverage == pytest.approx(angular(4e6))
        assert rep.ok

    def test_zero_sweep_warns(self):
        seq = PulseSequence((ChirpedPulse(TABLE1_RABI, 0.0, 5e-5, 1e-4),))
        rep = validate_sequence(seq, InhomogeneousDistribution.gaussian(angular(0.5e6)))
        assert any("coverage" in w for w in rep.warnings)

    def test_low_q_warns(self):
        seq = PulseSequence((ChirpedPulse(TABLE1_RABI, 4 * TABLE1_CHIRP, 5e-5, 1e-4),))
        rep = validate_sequence(seq, InhomogeneousDistribution.gaussian(angular(0.5e6)))
        assert any("adiabaticity" in w for w in rep.warnings)

    def test_pure(self):
        seq = refocusing_sequence(TABLE1_RABI, TABLE1_CHIRP, 2e-4, afp_duration=1e-4)
        dist = InhomogeneousDistribution.gaussian(angular(2e6))
        assert validate_sequence(seq, dist) == validate_sequence(seq, dist)


def test_small_value_types():
    with pytest.raises(ValueError):
        RelaxationParams(-1.0)
    with pytest.raises(ValueError):
        OpticalProbe(alpha0=0.0)
    m = Magnetization(0.6, 0.0, 0.8)
    assert np.array_equal(m.as_array(), [0.6, 0.0, 0.8])

import json
import math
import os
import subprocess
import sys

import numpy as np
import pytest

from adrefocus import _accel
from adrefocus.bloch import BlochIntegrationError, bloch_derivative, integrate, nutation_trace
from adrefocus.model import (ChirpedPulse, FreeEvolution, Magnetization, PulseKind, PulseSequence,
                             refocusing_sequence)
from adrefocus.propagator import ahp_final_state
from adrefocus.units import TWO_PI

RABI = TWO_PI * 284.4e3
CHIRP = TWO_PI * 40e9


def free(duration):
    return PulseSequence((FreeEvolution(0.0, duration),))


class TestDerivative:
    def test_examples(self):
        d = TWO_PI * 0.3e6
        np.testing.assert_array_equal(bloch_derivative(np.array([0, 0, 1.0]), None, 0.0, d), 0.0)
        np.testing.assert_allclose(bloch_derivative(np.array([1.0, 0, 0]), None, 0.0, d), [0, d, 0])
        p = ChirpedPulse(RABI, CHIRP, 1e-5, 1e-4)
        np.testing.assert_allclose(bloch_derivative(Magnetization(0, 0, 1), p, p.center_time, 0.0),
                                   [0, RABI, 0], atol=1e-9 * RABI)

    def test_decay_acts_on_horizontal_only(self):
        g = 1e4
        out = bloch_derivative(np.array([0.6, 0.0, 0.8]), None, 0.0, 0.0, gamma=g)
        np.testing.assert_allclose(out, [-0.6 * g, 0.0, 0.0])

    def test_norm_is_conserved_by_the_field(self):
        # dM/dt . M = 0 without decay
        rng = np.random.default_rng(3)
        m = rng.normal(size=(50, 3))
        p = ChirpedPulse(RABI, CHIRP, 0.0, 1e-4)
        dm = bloch_derivative(m, p, 2.3e-5, rng.normal(size=50) * 1e6)
        np.testing.assert_allclose(np.einsum("ni,ni->n", dm, m), 0.0, atol=1e-6)


class TestIntegrate:
    def test_full_precession_period(self):
        d = TWO_PI * 1e5
        m = integrate((1.0, 0.0, 0.0), free(1e-5), d).final
        np.testing.assert_allclose(m, [1, 0, 0], atol=1e-9)

    def test_transverse_decay(self):
        g = math.log(2) / 1e-4
        m = integrate((1.0, 0.0, 0.0), free(1e-4), 0.0, gamma=g).final
        np.testing.assert_allclose(m, [0.5, 0, 0], atol=1e-9)

    def test_norm_along_trajectory(self):
        seq = refocusing_sequence(RABI, CHIRP, 2e-4, afp_duration=1e-4)
        d = TWO_PI * np.linspace(-1e6, 1e6, 7)
        tr = integrate((0.0, 0.0, 1.0), seq, d, stride=50)
        assert tr.m.shape[1:] == (7, 3)
        np.testing.assert_allclose(np.linalg.norm(tr.m, axis=-1), 1.0, atol=1e-8)

    def test_step_halving_converges(self):
        p = ChirpedPulse(RABI, CHIRP, 5e-5, 1e-4)
        d = TWO_PI * np.array([-0.4e6, 0.0, 0.25e6])
        times = np.linspace(p.start, p.end, 11)
        a = integrate((0.0, 0.0, 1.0), p, d, sample_times=times).m
        b = integrate((0.0, 0.0, 1.0), p, d, sample_times=times, step=0.5 * 1 / (100 * 1.3e7)).m
        assert np.abs(a - b).max() <= 1e-6

    def test_ahp_tends_to_analytic_state(self):
        p = ChirpedPulse(TWO_PI * 0.28e6, TWO_PI * 0.04e12, 0.0, 1e-4, PulseKind.AHP_UP)
        m = integrate((0.0, 0.0, 1.0), p, 0.0, step=2e-9).final
        # within the O(1/Q) envelope of the adiabatic limit
        q = p.adiabaticity
        assert np.abs(m - ahp_final_state(p.rabi, 0.0)).max() <= 1.0 / q

    def test_sample_times_outside(self):
        with pytest.raises(ValueError):
            integrate((1.0, 0, 0), free(1e-5), 0.0, sample_times=[2e-5])

    def test_non_finite_raises(self):
        with pytest.raises(BlochIntegrationError):
            integrate((math.nan, 0.0, 0.0), free(1e-6), 0.0)

    def test_workers_do_not_change_result(self):
        seq = refocusing_sequence(RABI, CHIRP, 2e-4, afp_duration=1e-4)
        d = TWO_PI * np.linspace(-1e6, 1e6, 33)
        a = integrate((0.0, 0.0, 1.0), seq, d, workers=1).final
        b = integrate((0.0, 0.0, 1.0), seq, d, workers=4).final
        assert np.array_equal(a, b)


class TestNutation:
    def test_resonant(self):
        t, mz = nutation_trace(RABI, 0.0, 20e-6, 201)
        np.testing.assert_allclose(mz, np.cos(RABI * t), atol=1e-6)

    def test_detuned_depth(self):
        t, mz = nutation_trace(RABI, RABI, 20e-6, 2001)
        oe = math.sqrt(2) * RABI
        np.testing.assert_allclose(mz, 1 - 0.5 * (1 - np.cos(oe * t)), atol=1e-6)
        assert mz.max() - mz.min() == pytest.approx(1.0, abs=1e-3)

    def test_first_minimum_at_288_khz(self):
        om = TWO_PI * 288e3
        t, mz = nutation_trace(om, 0.0, 3e-6, 3001)
        assert t[np.argmin(mz)] == pytest.approx(1 / (2 * 288e3), abs=2e-9)
        assert t[np.argmin(mz)] * 1e6 == pytest.approx(1.74, abs=0.01)


class TestBackends:
    def args(self, n=37, nsteps=120):
        rng = np.random.default_rng(7)
        m = rng.normal(size=(3, n))
        m /= np.linalg.norm(m, axis=0)
        d = rng.normal(size=n) * 1e6
        bx = rng.normal(size=2 * nsteps + 1) * 1e6
        by = rng.normal(size=2 * nsteps + 1) * 1e6
        return m, d, np.ones(n) * 1.1, bx, by

    @pytest.mark.skipif(_accel.rk4_numba is None, reason="numba not importable")
    def test_rk4_kernels_agree(self):
        m, d, s, bx, by = self.args()
        outs = []
        for kern in (_accel.rk4_numpy, _accel.rk4_numba):
            mx, my, mz = (c.copy() for c in m)
            out = np.empty((12, 3, d.size))
            assert kern(mx, my, mz, d, s, 3e3, 1e-8, 120, bx, by, 10, out) == 12
            outs.append((np.stack([mx, my, mz]), out))
        np.testing.assert_allclose(outs[0][0], outs[1][0], rtol=0, atol=1e-13)
        np.testing.assert_allclose(outs[0][1], outs[1][1], rtol=0, atol=1e-13)

    @pytest.mark.skipif(_accel.rk4_numba is None, reason="numba not importable")
    def test_simpson_kernels_agree(self):
        d = np.linspace(-1e7, 1e7, 301)
        rabi = np.full(301, RABI)
        a = _accel.simpson_phase_numpy(rabi, CHIRP, d, -5e-5, 3e-5, 512)
        b = _accel.simpson_phase_numba(rabi, CHIRP, d, -5e-5, 3e-5, 512)
        np.testing.assert_allclose(a, b, rtol=1e-13)

    def test_env_flag_selects_numpy(self):
        code = (
            "import json, numpy as np\n"
            "from adrefocus import _accel\n"
            "from adrefocus.bloch import integrate\n"
            "from adrefocus.model import ChirpedPulse\n"
            "p = ChirpedPulse(1.787e6, 2.513e11, 0.0, 1e-5)\n"
            "m = integrate((0., 0., 1.), p, np.linspace(-3e6, 3e6, 9), gamma=1e4).final\n"
            "print(json.dumps({'backend': _accel.backend(), 'm': m.tolist()}))\n")
        results = {}
        for flag in ("1", "0"):
            env = dict(os.environ, ADREFOCUS_DISABLE_NUMBA=flag)
            out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True,
                                 text=True, check=True)
            results[flag] = json.loads(out.stdout)
        assert results["1"]["backend"] == "numpy"
        if _accel.HAVE_NUMBA:
            assert results["0"]["backend"] == "numba"
        np.testing.assert_allclose(results["1"]["m"], results["0"]["m"], rtol=0, atol=1e-12)

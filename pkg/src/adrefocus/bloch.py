"""Brute-force RK4 integration of the rotating-frame Bloch equations.

This is the independent check on every closed form in :mod:`propagator`.
The drive of a chirped pulse in the carrier frame is
``(-rabi*cos(phase), -rabi*sin(phase))``; free precession runs at the
detuning; ``gamma`` damps the transverse components continuously.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import _accel
from .model import ChirpedPulse, FreeEvolution, Magnetization, PulseKind, PulseSequence
from .propagator import hard_pulse

# step = 1/(STEPS_PER_RAD * max Omega_eff); user steps are refined down to the hard limit
STEPS_PER_RAD = 100.0
HARD_LIMIT_STEPS_PER_RAD = 50.0


class BlochIntegrationError(ArithmeticError):
    def __init__(self, message: str, time: float):
        super().__init__(f"{message} (t = {time:.9g} s)")
        self.time = time


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray
    m: np.ndarray

    @property
    def final(self) -> np.ndarray:
        return self.m[-1]

    def at(self, t: float) -> np.ndarray:
        k = int(np.argmin(np.abs(self.times - t)))
        return self.m[k]


def bloch_derivative(m, pulse: ChirpedPulse | None, t: float, delta, gamma: float = 0.0) -> np.ndarray:
    """Right-hand side of the Bloch equations at time ``t``; ``m[..., 3]``."""
    m = np.asarray(m.as_array() if isinstance(m, Magnetization) else m, dtype=float)
    mx, my, mz = m[..., 0], m[..., 1], m[..., 2]
    d = np.asarray(delta, dtype=float)
    if pulse is None:
        om_c = om_s = 0.0
    elif pulse.kind is PulseKind.HARD:
        # fixed-frequency drive: rotation about +axis
        ax, ay = pulse.axis_vector
        om_c, om_s = -pulse.rabi * ax, -pulse.rabi * ay
    else:
        ph = float(pulse.phase(t))
        om_c, om_s = pulse.rabi * math.cos(ph), pulse.rabi * math.sin(ph)
    dx = -d * my - om_s * mz - gamma * mx
    dy = d * mx + om_c * mz - gamma * my
    dz = om_s * mx - om_c * my
    return np.stack(np.broadcast_arrays(dx, dy, dz), axis=-1)


def _drive_tables(piece, a: float, h: float, nsteps: int):
    tt = a + 0.5 * h * np.arange(2 * nsteps + 1)
    if isinstance(piece, FreeEvolution):
        z = np.zeros_like(tt)
        return z, z
    if piece.kind is PulseKind.HARD:
        ax, ay = piece.axis_vector
        return np.full_like(tt, piece.rabi * ax), np.full_like(tt, piece.rabi * ay)
    ph = piece.phase(tt)
    return -piece.rabi * np.cos(ph), -piece.rabi * np.sin(ph)


def _max_rate(piece, a: float, b: float, delta, bscale, gamma: float) -> float:
    dmax = float(np.max(np.abs(delta))) if delta.size else 0.0
    if isinstance(piece, FreeEvolution):
        rate = dmax
    elif piece.kind is PulseKind.HARD:
        rate = math.hypot(piece.rabi * float(np.max(bscale)), dmax)
    else:
        om = piece.rabi * float(np.max(bscale))
        u = max(float(np.max(np.abs(delta - piece.sweep(a)))), float(np.max(np.abs(delta - piece.sweep(b)))))
        rate = math.hypot(om, u)
    return max(rate, gamma)


def _step_count(length: float, rate: float, step: float | None) -> int:
    if length <= 0:
        return 0
    if rate <= 0:
        return 1
    h = 1.0 / (STEPS_PER_RAD * rate)
    if step is not None:
        h = min(step, 1.0 / (HARD_LIMIT_STEPS_PER_RAD * rate))
    return max(1, int(math.ceil(length / h - 1e-9)))


def integrate(m0, seq, delta, gamma: float = 0.0, step: float | None = None,
              stride: int | None = None, sample_times=None, rabi_scale=None,
              workers: int = 1) -> Trajectory:
    """Fixed-step RK4 through a pulse sequence for one or many detunings.

    Parameters
    ----------
    m0 : Magnetization or array (3,) or (n, 3)
    seq : PulseSequence or a single ChirpedPulse
    delta : detuning(s) in rad/s
    step : requested step; refined to at most ``1/(50*max Omega_eff)``.
        The default is ``1/(100*max Omega_eff)`` per piece.
    stride : record every ``stride`` steps in addition to piece ends
    sample_times : record exactly at these times instead

    Returns
    -------
    Trajectory with ``m`` of shape ``(k, n, 3)`` (or ``(k, 3)`` for a
    scalar detuning).
    """
    if isinstance(seq, ChirpedPulse):
        seq = PulseSequence((seq,))
    scalar = np.ndim(delta) == 0
    d = np.atleast_1d(np.asarray(delta, dtype=float)).copy()
    n = d.size
    bscale = np.ones(n) if rabi_scale is None else np.broadcast_to(np.asarray(rabi_scale, float), (n,)).copy()
    m0 = m0.as_array() if isinstance(m0, Magnetization) else np.asarray(m0, dtype=float)
    m = np.broadcast_to(m0, (n, 3)).T.copy()  # (3, n)

    t_start, t_end = seq.t_start, seq.t_end
    tol = 1e-12 * max(abs(t_start), abs(t_end), 1e-6)
    if sample_times is not None:
        samples = np.unique(np.asarray(sample_times, dtype=float))
        if samples.size and (samples[0] < t_start - tol or samples[-1] > t_end + tol):
            raise ValueError("sample times must lie within the sequence")
        filled = [None] * samples.size
    else:
        samples = None
    times_out = []
    states_out = []

    def record(t, state):
        if samples is None:
            if times_out and times_out[-1] == t:
                states_out[-1] = state.T.copy()
            else:
                times_out.append(t)
                states_out.append(state.T.copy())
            return
        for i in np.flatnonzero(np.abs(samples - t) <= tol):
            filled[i] = state.T.copy()

    record(t_start, m)
    chunks = _chunks(n, workers)
    pool = ThreadPoolExecutor(max_workers=len(chunks)) if len(chunks) > 1 else None
    try:
        for piece in seq.timeline():
            a, b = piece.start, piece.end
            if isinstance(piece, ChirpedPulse) and piece.kind is PulseKind.HARD and piece.duration == 0:
                rot = hard_pulse(piece.axis, piece.area, d, 0.0)
                m = np.einsum("nij,jn->in", rot, m)
                record(b, m)
                continue
            cuts = [a, b]
            if samples is not None:
                inner = samples[(samples > a + tol) & (samples < b - tol)]
                cuts = [a, *inner.tolist(), b]
            rate = _max_rate(piece, a, b, d, bscale, gamma)
            for lo, hi in zip(cuts[:-1], cuts[1:]):
                nsteps = _step_count(hi - lo, rate, step)
                if nsteps == 0:
                    continue
                h = (hi - lo) / nsteps
                bx, by = _drive_tables(piece, lo, h, nsteps)
                every = stride if (samples is None and stride) else nsteps
                n_out = nsteps // every
                out = np.empty((max(n_out, 1), 3, n))
                _run(pool, chunks, m, d, bscale, gamma, h, nsteps, bx, by, every, out)
                if not np.all(np.isfinite(m)):
                    raise BlochIntegrationError("non-finite magnetization", hi)
                if samples is None:
                    for j in range(n_out - (1 if nsteps % every == 0 else 0)):
                        record(lo + (j + 1) * every * h, out[j])
                record(hi, m)
    finally:
        if pool is not None:
            pool.shutdown()

    if samples is not None:
        if any(f is None for f in filled):
            raise ValueError("some sample times were not reached")
        times = samples
        states = np.stack(filled)
    else:
        times = np.asarray(times_out)
        states = np.stack(states_out)
    if scalar:
        states = states[:, 0, :]
    return Trajectory(times, states)


def _chunks(n: int, workers: int):
    workers = max(1, min(int(workers), n))
    bounds = np.linspace(0, n, workers + 1).astype(int)
    return [(int(lo), int(hi)) for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]


def _run(pool, chunks, m, d, bscale, gamma, h, nsteps, bx, by, every, out):
    def job(lo, hi):
        mx, my, mz = m[0, lo:hi], m[1, lo:hi], m[2, lo:hi]
        sub = np.empty((out.shape[0], 3, hi - lo))
        _accel.rk4(mx, my, mz, d[lo:hi], bscale[lo:hi], float(gamma), float(h), int(nsteps),
                   bx, by, int(every), sub)
        out[:, :, lo:hi] = sub

    if pool is None:
        for lo, hi in chunks:
            job(lo, hi)
    else:
        list(pool.map(lambda c: job(*c), chunks))


def nutation_trace(rabi: float, delta, duration: float, n_samples: int = 401,
                   gamma: float = 0.0, rabi_scale=None, step: float | None = None):
    """Vertical component under a constant-frequency drive, starting from +z.

    Returns ``(times, mz)``; ``mz`` has shape ``(n_samples,)`` for a scalar
    detuning and ``(n_samples, n)`` otherwise.
    """
    drive = ChirpedPulse(rabi, 0.0, 0.5 * duration, duration, PulseKind.AFP)
    times = np.linspace(0.0, duration, n_samples)
    traj = integrate((0.0, 0.0, 1.0), drive, delta, gamma=gamma, sample_times=times,
                     rabi_scale=rabi_scale, step=step)
    return traj.times, traj.m[..., 2]

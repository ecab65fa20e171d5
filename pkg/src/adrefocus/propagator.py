"""Closed-form adiabatic-passage algebra in the frame rotating at the carrier.

A chirped pulse is handled through two frame changes: ``R1`` follows the
drive phase about z, ``R2`` tilts z onto the effective field
``(-rabi, 0, delta - sweep)``. Under adiabatic following the spin only
precesses about that field by the accumulated phase ``Phi = int Omega_eff``,
which gives the propagator ``V = R1 R2 U(Phi) [R1' R2']^T``.

Rotation matrices are plain ``(..., 3, 3)`` arrays; every function
broadcasts over an array of detunings.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _accel
from .model import ChirpedPulse, FreeEvolution, PulseKind, PulseSequence, SequenceError

PHASE_PANELS = 10_000
PHASE_RTOL = 1e-10
_MAX_DOUBLINGS = 8

# pi rotation about y: the asymptotic R2 once the sweep has passed a spin
FLIP_Y = np.diag([-1.0, 1.0, -1.0])


def rot_z(angle) -> np.ndarray:
    a = np.asarray(angle, dtype=float)
    c, s = np.cos(a), np.sin(a)
    out = np.zeros(a.shape + (3, 3))
    out[..., 0, 0] = c
    out[..., 0, 1] = -s
    out[..., 1, 0] = s
    out[..., 1, 1] = c
    out[..., 2, 2] = 1.0
    return out


def _tilt(cos_t, sin_t) -> np.ndarray:
    """``[[c, 0, -s], [0, 1, 0], [s, 0, c]]`` for arrays of c, s."""
    c = np.asarray(cos_t, dtype=float)
    s = np.asarray(sin_t, dtype=float)
    c, s = np.broadcast_arrays(c, s)
    out = np.zeros(c.shape + (3, 3))
    out[..., 0, 0] = c
    out[..., 0, 2] = -s
    out[..., 1, 1] = 1.0
    out[..., 2, 0] = s
    out[..., 2, 2] = c
    return out


def rotation_r1(pulse: ChirpedPulse, t) -> np.ndarray:
    """Frame co-rotating with the chirped drive: z-rotation by its phase."""
    return rot_z(pulse.phase(t))


def _field_angles(pulse: ChirpedPulse, t, delta, rabi_scale=1.0):
    u = np.asarray(delta, dtype=float) - pulse.sweep(t)
    om = pulse.rabi * np.asarray(rabi_scale, dtype=float)
    oe = np.hypot(om, u)
    return u / oe, om / oe


def rotation_r2(pulse: ChirpedPulse, t, delta, rabi_scale=1.0) -> np.ndarray:
    """Tilt aligning z'' with the effective field seen at detuning ``delta``.

    ``sin(theta) = rabi/Omega_eff`` and ``cos(theta) = (delta - sweep)/Omega_eff``.
    """
    c, s = _field_angles(pulse, t, delta, rabi_scale)
    return _tilt(c, s)


def _asymptotic_r2(pulse: ChirpedPulse, edge: str, delta) -> np.ndarray:
    """Limit of R2 at the far end of an infinitely extended sweep.

    Before the sweep (``edge="start"``) the drive sits at ``-sign(r)*inf`` so
    the field points along +z for every detuning when ``r > 0``; after it the
    field has turned over. An unchirped drive falls back to the sign of the
    detuning.
    """
    d = np.asarray(delta, dtype=float)
    out = np.broadcast_to(np.eye(3), d.shape + (3, 3)).copy()
    r = pulse.chirp_rate
    if r == 0:
        out[d < 0] = FLIP_Y
    elif (r < 0) == (edge == "start"):
        out[...] = FLIP_Y
    return out


def _simpson(pulse, s0, s1, delta, rabi, panels):
    n = panels + (panels % 2)
    return _accel.simpson_phase(rabi, float(pulse.chirp_rate), delta, float(s0), float(s1), int(n))


def accumulated_phase(pulse: ChirpedPulse, t0, t1, delta, rabi_scale=1.0,
                      rtol: float = PHASE_RTOL, panels: int = PHASE_PANELS):
    """Phase ``int_{t0}^{t1} Omega_eff dt`` by composite Simpson quadrature.

    Starts from ``panels`` panels per pulse duration (scaled to the interval)
    and doubles until the relative change is below ``rtol`` for every node.
    """
    if t1 < t0:
        raise ValueError(f"phase interval reversed: t0={t0} > t1={t1}")
    d = np.atleast_1d(np.asarray(delta, dtype=float))
    om = np.broadcast_to(pulse.rabi * np.asarray(rabi_scale, dtype=float), d.shape).astype(float)
    scalar = np.ndim(delta) == 0
    if t1 == t0:
        out = np.zeros(d.shape)
        return float(out[0]) if scalar else out
    s0 = t0 - pulse.center_time
    s1 = t1 - pulse.center_time
    n = max(2, int(math.ceil(panels * (t1 - t0) / pulse.duration)))
    prev = _simpson(pulse, s0, s1, d.ravel(), om.ravel(), n)
    for _ in range(_MAX_DOUBLINGS):
        n *= 2
        cur = _simpson(pulse, s0, s1, d.ravel(), om.ravel(), n)
        if np.all(np.abs(cur - prev) <= rtol * np.abs(cur)):
            prev = cur
            break
        prev = cur
    out = prev.reshape(d.shape)
    return float(out[0]) if scalar else out


def phase_antiderivative(pulse: ChirpedPulse, t, delta, rabi_scale=1.0):
    """Exact primitive of Omega_eff for a linear chirp (used as an oracle)."""
    om = pulse.rabi * np.asarray(rabi_scale, dtype=float)
    u = np.asarray(delta, dtype=float) - pulse.sweep(t)
    r = pulse.chirp_rate
    if r == 0:
        return np.hypot(om, u) * (np.asarray(t, dtype=float) - pulse.center_time)
    return -(u * np.hypot(om, u) + om**2 * np.arcsinh(u / om)) / (2.0 * r)


@dataclass(frozen=True)
class AdiabaticPropagator:
    matrix: np.ndarray
    phase: np.ndarray | float

    def apply(self, m) -> np.ndarray:
        return np.einsum("...ij,...j->...i", self.matrix, np.asarray(m, dtype=float))


def compose_propagator(pulse, t0, t1, delta, phase, rabi_scale=1.0,
                       ideal_start=False, ideal_end=False) -> np.ndarray:
    """``R1(t1) R2(t1) U(phase) [R1(t0) R2(t0)]^T`` for a known phase."""
    d = np.asarray(delta, dtype=float)
    b = _asymptotic_r2(pulse, "start", d) if ideal_start else rotation_r2(pulse, t0, d, rabi_scale)
    a = _asymptotic_r2(pulse, "end", d) if ideal_end else rotation_r2(pulse, t1, d, rabi_scale)
    left = rotation_r1(pulse, t1) @ a
    right = np.swapaxes(rotation_r1(pulse, t0) @ b, -1, -2)
    return left @ rot_z(phase) @ right


def ideal_edge_flags(pulse: ChirpedPulse, t0: float, t1: float) -> tuple[bool, bool]:
    """Which ends of ``[t0, t1]`` sit on a far edge of the sweep.

    A half passage has only one far edge; its other end is at resonance and
    keeps the true field tilt.
    """
    tol = 1e-12 * max(abs(pulse.start), abs(pulse.end), pulse.duration)
    start = t0 <= pulse.start + tol and pulse.kind is not PulseKind.AHP_DOWN
    end = t1 >= pulse.end - tol and pulse.kind is not PulseKind.AHP_UP
    return start, end


def arp_propagator(pulse: ChirpedPulse, t0: float, t1: float, delta, rabi_scale=1.0,
                   ideal_edges: bool = False) -> AdiabaticPropagator:
    """Adiabatic propagator from ``t0`` to ``t1`` within one chirped pulse.

    With ``ideal_edges`` the field-frame tilt at a far edge of the sweep is
    replaced by its asymptotic limit, i.e. the passage is treated as complete
    for every detuning, as if the sweep extended to infinity.
    """
    phase = accumulated_phase(pulse, t0, t1, delta, rabi_scale)
    ideal_start, ideal_end = ideal_edge_flags(pulse, t0, t1) if ideal_edges else (False, False)
    mat = compose_propagator(pulse, t0, t1, delta, phase, rabi_scale, ideal_start, ideal_end)
    return AdiabaticPropagator(mat, phase)


def free_precession(delta, duration: float) -> np.ndarray:
    return rot_z(np.asarray(delta, dtype=float) * duration)


def hard_pulse(axis: str, area: float, delta, duration: float = 0.0) -> np.ndarray:
    """Rotation produced by a fixed-frequency pulse of the given area.

    At zero duration this is an exact right-handed rotation by ``area``
    about the horizontal axis. At finite duration the spin rotates about the
    tilted field ``(rabi*axis, delta)`` with ``rabi = area/duration``.
    """
    ax = ChirpedPulse.hard(axis, area, 0.0, duration).axis_vector
    d = np.asarray(delta, dtype=float)
    # field times duration, so the zero-duration limit needs no special case
    field = np.stack(np.broadcast_arrays(area * ax[0], area * ax[1], d * duration), axis=-1)
    angle = np.linalg.norm(field, axis=-1)
    n = field / angle[..., None]
    return _rodrigues(n, angle)


def _rodrigues(n, angle) -> np.ndarray:
    c = np.cos(angle)[..., None, None]
    s = np.sin(angle)[..., None, None]
    k = np.zeros(n.shape[:-1] + (3, 3))
    k[..., 0, 1] = -n[..., 2]
    k[..., 0, 2] = n[..., 1]
    k[..., 1, 0] = n[..., 2]
    k[..., 1, 2] = -n[..., 0]
    k[..., 2, 0] = -n[..., 1]
    k[..., 2, 1] = n[..., 0]
    outer = n[..., :, None] * n[..., None, :]
    return c * np.eye(3) + s * k + (1.0 - c) * outer


def ahp_final_state(rabi, delta) -> np.ndarray:
    """Spin left by a complete half passage from +z: ``(-rabi, 0, delta)/Omega_eff``."""
    om = np.asarray(rabi, dtype=float)
    d = np.asarray(delta, dtype=float)
    oe = np.hypot(om, d)
    return np.stack(np.broadcast_arrays(-om / oe, np.zeros_like(oe), d / oe), axis=-1)


def afp_mz_profile(rabi, delta, chirp_rate, s):
    """Vertical component during an AFP for a spin prepared by a half passage.

    ``s`` is time relative to the AFP center; the horizontal part is assumed
    dephased over the ensemble and dropped.
    """
    om = np.asarray(rabi, dtype=float)
    d = np.asarray(delta, dtype=float)
    u = d - chirp_rate * np.asarray(s, dtype=float)
    return (d / np.hypot(om, d)) * (u / np.hypot(om, u))


def refocusing_propagator(seq: PulseSequence, delta, ideal_edges: bool = False) -> np.ndarray:
    """Composite rotation over a two-AFP refocusing block.

    Free precession between the passages is an exact z-rotation. By default
    the passages use the finite-window propagator, so the result carries
    the residual tilt of the effective field at the window edges (of order
    ``rabi / (chirp * duration / 2)``). With ``ideal_edges`` both passages
    are taken as complete sweeps and the block is the identity for every
    detuning.
    """
    _check_refocusing_block(seq)
    d = np.asarray(delta, dtype=float)
    total = np.broadcast_to(np.eye(3), d.shape + (3, 3)).copy()
    for piece in seq.timeline():
        if isinstance(piece, FreeEvolution):
            step = free_precession(d, piece.duration)
        else:
            step = arp_propagator(piece, piece.start, piece.end, d, ideal_edges=ideal_edges).matrix
        total = step @ total
    return total


def _check_refocusing_block(seq: PulseSequence):
    pulses = seq.pulses
    if len(pulses) != 2 or any(p.kind is not PulseKind.AFP for p in pulses):
        raise SequenceError("refocusing block must contain exactly two AFPs and nothing else")
    a, b = pulses
    if (a.rabi, a.chirp_rate, a.duration) != (b.rabi, b.chirp_rate, b.duration):
        raise SequenceError("the two AFPs of a refocusing block must be identical")
    t0 = seq.t_start
    period = seq.period if seq.period is not None else seq.t_end - t0
    tol = 1e-9 * period
    if abs(a.center_time - (t0 + 0.25 * period)) > tol or abs(b.center_time - (t0 + 0.75 * period)) > tol:
        raise SequenceError("AFPs must be centered at T/4 and 3T/4 of the block")
    if abs(seq.t_end - (t0 + period)) > tol:
        raise SequenceError("refocusing block must span exactly one period")


def is_rotation(m, atol: float = 1e-12) -> bool:
    m = np.asarray(m, dtype=float)
    eye = np.eye(3)
    orth = np.abs(np.swapaxes(m, -1, -2) @ m - eye).max() <= atol
    det = np.abs(np.linalg.det(m) - 1.0).max() <= atol
    return bool(orth and det)

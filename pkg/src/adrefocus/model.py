"""Domain types shared by the propagators, integrators, signal model and CLI.

All frequencies are angular (rad/s), chirp rates are rad/s^2 and times are
seconds. Detunings are measured from the drive center frequency, i.e. in the
frame rotating at the carrier.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .units import TWO_PI, format_frequency, format_time

FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))

# Validation thresholds for adiabatic pulses
MIN_ADIABATICITY = 5.0
MIN_COVERAGE_FWHM = 3.0

# relative slack when comparing segment boundaries
_TIME_TOL = 1e-12


class SequenceError(ValueError):
    """Structural problem with a pulse or pulse sequence."""


@dataclass(frozen=True)
class Magnetization:
    """Bloch vector in the frame rotating at the carrier."""

    mx: float
    my: float
    mz: float

    @classmethod
    def from_array(cls, v) -> "Magnetization":
        v = np.asarray(v, dtype=float)
        return cls(float(v[0]), float(v[1]), float(v[2]))

    def as_array(self) -> np.ndarray:
        return np.array([self.mx, self.my, self.mz])

    @property
    def norm(self) -> float:
        return math.sqrt(self.mx**2 + self.my**2 + self.mz**2)


class PulseKind(str, enum.Enum):
    """Role of a pulse in the timeline.

    ``AHP_UP`` ends at its center time (the sweep arrives at the carrier and
    stops there), ``AHP_DOWN`` starts at its center time, ``AFP`` is
    centered on it and ``HARD`` is a fixed-frequency pulse centered on it.
    """

    AHP_UP = "ahp_up"
    AHP_DOWN = "ahp_down"
    AFP = "afp"
    HARD = "hard"


_AXES = {"x": (1.0, 0.0), "y": (0.0, 1.0), "-x": (-1.0, 0.0), "-y": (0.0, -1.0)}


@dataclass(frozen=True)
class ChirpedPulse:
    """One RF segment with constant amplitude and linear chirp.

    The drive phase relative to the carrier is ``chirp_rate*(t-center)**2/2``
    so the instantaneous drive detuning is ``chirp_rate*(t-center)``.
    Hard pulses ignore the chirp; their Rabi frequency follows from
    ``area/duration`` and ``duration == 0`` means an instantaneous rotation.
    """

    rabi: float
    chirp_rate: float
    center_time: float
    duration: float
    kind: PulseKind = PulseKind.AFP
    carrier: float = 0.0
    axis: str = "x"
    area: float = 0.5 * math.pi

    def __post_init__(self):
        kind = PulseKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is PulseKind.HARD:
            if self.axis not in _AXES:
                raise SequenceError(f"hard pulse axis must be one of {sorted(_AXES)}, got {self.axis!r}")
            if not 0.0 < self.area <= TWO_PI:
                raise SequenceError(f"hard pulse area must lie in (0, 2*pi], got {self.area}")
            if not self.duration >= 0.0:
                raise SequenceError(f"hard pulse duration must be >= 0, got {self.duration}")
            return
        if not self.rabi > 0.0:
            raise SequenceError(f"Rabi frequency must be > 0, got {self.rabi}")
        if not self.duration > 0.0:
            raise SequenceError(f"pulse duration must be > 0, got {self.duration}")
        if not math.isfinite(self.chirp_rate):
            raise SequenceError("chirp rate must be finite")

    @classmethod
    def hard(cls, axis: str, area: float, center_time: float, duration: float = 0.0) -> "ChirpedPulse":
        rabi = area / duration if duration > 0 else math.inf
        return cls(rabi=rabi, chirp_rate=0.0, center_time=center_time, duration=duration,
                   kind=PulseKind.HARD, axis=axis, area=area)

    @property
    def start(self) -> float:
        if self.kind is PulseKind.AHP_UP:
            return self.center_time - self.duration
        if self.kind is PulseKind.AHP_DOWN:
            return self.center_time
        return self.center_time - 0.5 * self.duration

    @property
    def end(self) -> float:
        return self.start + self.duration

    @property
    def axis_vector(self) -> tuple[float, float]:
        return _AXES[self.axis]

    def phase(self, t):
        """Drive phase relative to the carrier at time ``t``."""
        s = np.asarray(t, dtype=float) - self.center_time
        return 0.5 * self.chirp_rate * s * s

    def sweep(self, t):
        """Instantaneous drive detuning from the carrier."""
        return self.chirp_rate * (np.asarray(t, dtype=float) - self.center_time)

    @property
    def adiabaticity(self) -> float:
        """``rabi**2/|chirp_rate|``; infinite for an unchirped drive."""
        return self.rabi**2 / abs(self.chirp_rate) if self.chirp_rate else math.inf

    @property
    def flip_time(self) -> float:
        return self.rabi / abs(self.chirp_rate) if self.chirp_rate else math.inf

    @property
    def coverage(self) -> float:
        """Width of the detuning band swept through resonance.

        For half passages the one-sided excursion is doubled so that the
        number compares against a full distribution width like an AFP span.
        """
        excursion = abs(self.chirp_rate) * self.duration
        if self.kind in (PulseKind.AHP_UP, PulseKind.AHP_DOWN):
            return 2.0 * excursion
        return excursion

    @property
    def is_adiabatic(self) -> bool:
        return self.kind is not PulseKind.HARD


@dataclass(frozen=True)
class FreeEvolution:
    start: float
    duration: float

    def __post_init__(self):
        if not self.duration >= 0.0:
            raise SequenceError(f"free evolution duration must be >= 0, got {self.duration}")

    @property
    def end(self) -> float:
        return self.start + self.duration


Segment = Union[ChirpedPulse, FreeEvolution]


@dataclass(frozen=True)
class PulseSequence:
    """Time-ordered pulses; gaps between them are free precession.

    ``period`` is the refocusing period T of the canonical sequence (the
    time from the end of the opening half passage to the start of the
    closing one). It is informational for ad hoc sequences.
    """

    segments: tuple
    period: float | None = None
    start: float | None = None
    stop: float | None = None

    def __post_init__(self):
        segs = tuple(self.segments)
        if not segs:
            raise SequenceError("pulse sequence is empty")
        object.__setattr__(self, "segments", segs)
        tol = _TIME_TOL * max(abs(segs[0].start), abs(segs[-1].end), 1e-6)
        for a, b in zip(segs, segs[1:]):
            if b.start < a.end - tol:
                raise SequenceError(
                    f"segments overlap or are out of order: one ends at {a.end:.6g} s, "
                    f"the next starts at {b.start:.6g} s")
        if self.start is not None and self.start > segs[0].start + tol:
            raise SequenceError("sequence start is after its first segment")
        if self.stop is not None and self.stop < segs[-1].end - tol:
            raise SequenceError("sequence stop is before the end of its last segment")

    @property
    def t_start(self) -> float:
        return self.start if self.start is not None else self.segments[0].start

    @property
    def t_end(self) -> float:
        return self.stop if self.stop is not None else self.segments[-1].end

    @property
    def pulses(self) -> list[ChirpedPulse]:
        return [s for s in self.segments if isinstance(s, ChirpedPulse)]

    def timeline(self) -> list[Segment]:
        """Contiguous pieces covering ``[t_start, t_end]``, gaps filled."""
        out: list[Segment] = []
        t = self.t_start
        for seg in self.segments:
            if isinstance(seg, FreeEvolution):
                if seg.duration > 0:
                    out.append(seg)
                t = seg.end
                continue
            if seg.start > t:
                out.append(FreeEvolution(t, seg.start - t))
            out.append(seg)
            t = seg.end
        if self.t_end > t:
            out.append(FreeEvolution(t, self.t_end - t))
        return out


def refocusing_block(rabi: float, chirp_rate: float, period: float,
                     afp_duration: float | None = None, t0: float = 0.0) -> PulseSequence:
    """Two identical AFPs centered at ``t0 + T/4`` and ``t0 + 3T/4``."""
    tau = 0.5 * period if afp_duration is None else afp_duration
    if tau > 0.5 * period * (1 + 1e-12):
        raise SequenceError("AFP duration exceeds T/2; the two passages would overlap")
    afps = [ChirpedPulse(rabi, chirp_rate, t0 + f * period, tau, PulseKind.AFP) for f in (0.25, 0.75)]
    return PulseSequence(tuple(afps), period=period, start=t0, stop=t0 + period)


def refocusing_sequence(rabi: float, chirp_rate: float, period: float,
                        afp_duration: float | None = None,
                        ahp_duration: float | None = None,
                        ahp_rabi: float | None = None,
                        excitation: str = "adiabatic",
                        hard_duration: float = 0.0,
                        lead: float = 0.0, tail: float = 0.0) -> PulseSequence:
    """Canonical excitation / AFP / AFP / closing sequence.

    With adiabatic excitation the opening AHP ends at t = 0 and the closing
    AHP starts at T with the opposite chirp sign. With ``excitation="hard"``
    the half passages are replaced by pi/2 pulses about x and -x.
    """
    tau = 0.5 * period if afp_duration is None else afp_duration
    block = refocusing_block(rabi, chirp_rate, period, tau).segments
    if excitation == "adiabatic":
        t_ahp = 0.5 * tau if ahp_duration is None else ahp_duration
        om = rabi if ahp_rabi is None else ahp_rabi
        first = ChirpedPulse(om, chirp_rate, 0.0, t_ahp, PulseKind.AHP_UP)
        last = ChirpedPulse(om, -chirp_rate, period, t_ahp, PulseKind.AHP_DOWN)
    elif excitation == "hard":
        half = 0.5 * hard_duration
        first = ChirpedPulse.hard("x", 0.5 * math.pi, -half, hard_duration)
        last = ChirpedPulse.hard("-x", 0.5 * math.pi, period + half, hard_duration)
    else:
        raise SequenceError(f"unknown excitation {excitation!r}; expected 'adiabatic' or 'hard'")
    segs = (first, *block, last)
    return PulseSequence(segs, period=period,
                         start=first.start - lead, stop=last.end + tail)


@dataclass(frozen=True)
class InhomogeneousDistribution:
    """Detuning density with a deterministic (or seeded) discretization.

    ``nodes`` are detunings in rad/s and ``weights`` sum to one. An optional
    per-node ``rabi_scale`` models RF amplitude non-uniformity; it is all
    ones unless :meth:`with_rabi_spread` is used.
    """

    shape: str
    fwhm: float
    nodes: np.ndarray
    weights: np.ndarray
    rabi_scale: np.ndarray | None = None

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        weights = np.asarray(self.weights, dtype=float)
        if nodes.ndim != 1 or nodes.shape != weights.shape:
            raise ValueError("nodes and weights must be 1-D arrays of equal length")
        if np.any(weights < 0):
            raise ValueError("weights must be non-negative")
        weights = weights / weights.sum()
        scale = np.ones_like(nodes) if self.rabi_scale is None else np.asarray(self.rabi_scale, float)
        if scale.shape != nodes.shape:
            raise ValueError("rabi_scale must match nodes")
        for name, arr in (("nodes", nodes), ("weights", weights), ("rabi_scale", scale)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return self.nodes.size

    @property
    def sigma(self) -> float:
        return self.fwhm / FWHM_PER_SIGMA

    def density(self, delta):
        """Normalized density G at the given detunings (built-in shapes)."""
        d = np.asarray(delta, dtype=float)
        if self.shape == "gaussian":
            s = self.sigma
            return np.exp(-0.5 * (d / s) ** 2) / (s * math.sqrt(TWO_PI))
        if self.shape == "lorentzian":
            g = 0.5 * self.fwhm
            return g / (math.pi * (d * d + g * g))
        raise ValueError(f"no analytic density for shape {self.shape!r}")

    def mean(self, values) -> float:
        """Weighted average in fixed node order."""
        return float(np.dot(self.weights, values))

    @classmethod
    def gaussian(cls, fwhm: float, n_nodes: int = 2001, span: float = 4.0) -> "InhomogeneousDistribution":
        nodes = _symmetric_grid(span * fwhm, n_nodes)
        d = cls._from_density("gaussian", fwhm, nodes)
        return d

    @classmethod
    def lorentzian(cls, fwhm: float, n_nodes: int = 2001, span: float = 20.0) -> "InhomogeneousDistribution":
        nodes = _symmetric_grid(span * fwhm, n_nodes)
        return cls._from_density("lorentzian", fwhm, nodes)

    @classmethod
    def custom(cls, detunings, density, fwhm: float | None = None) -> "InhomogeneousDistribution":
        """Tabulated density on a sorted grid, trapezoid weights."""
        x = np.asarray(detunings, dtype=float)
        g = np.asarray(density, dtype=float)
        if x.ndim != 1 or x.size < 3 or np.any(np.diff(x) <= 0):
            raise ValueError("custom distribution needs >= 3 strictly increasing detunings")
        w = _trapezoid_weights(x) * g
        if fwhm is None:
            fwhm = _tabulated_fwhm(x, g)
        return cls("custom", fwhm, x, w)

    @classmethod
    def _from_density(cls, shape, fwhm, nodes):
        if not fwhm > 0:
            raise ValueError(f"FWHM must be > 0, got {fwhm}")
        tmp = cls(shape, fwhm, nodes, np.ones_like(nodes))
        w = _trapezoid_weights(nodes) * tmp.density(nodes)
        # exact mirror symmetry of the weights
        w = 0.5 * (w + w[::-1])
        return cls(shape, fwhm, nodes, w)

    def sample(self, n: int, seed: int, method: str = "stratified") -> "InhomogeneousDistribution":
        """Monte Carlo spins with equal weights.

        ``method="stratified"`` draws one uniform variate per equal-probability
        stratum before inverting the CDF; ``"iid"`` draws independent samples.
        """
        rng = np.random.default_rng(seed)
        if method == "stratified":
            u = (np.arange(n) + rng.random(n)) / n
        elif method == "iid":
            u = rng.random(n)
        else:
            raise ValueError(f"unknown sampling method {method!r}")
        nodes = self._inverse_cdf(u)
        return InhomogeneousDistribution(self.shape, self.fwhm, nodes, np.full(n, 1.0 / n))

    def _inverse_cdf(self, u):
        if self.shape == "gaussian":
            from scipy import special
            return self.sigma * special.ndtri(u)
        if self.shape == "lorentzian":
            return 0.5 * self.fwhm * np.tan(math.pi * (u - 0.5))
        cdf = np.concatenate([[0.0], np.cumsum(0.5 * (self.weights[1:] + self.weights[:-1]))])
        cdf /= cdf[-1]
        return np.interp(u, cdf, self.nodes)

    def with_rabi_spread(self, rel_sigma: float, n_points: int = 5) -> "InhomogeneousDistribution":
        """Tensor product with Gauss-Hermite nodes of relative Rabi scale."""
        if rel_sigma <= 0:
            return self
        x, w = np.polynomial.hermite_e.hermegauss(n_points)
        scale = np.clip(1.0 + rel_sigma * x, 1e-6, None)
        w = w / w.sum()
        nodes = np.repeat(self.nodes, n_points)
        weights = np.repeat(self.weights, n_points) * np.tile(w, self.nodes.size)
        rscale = np.repeat(self.rabi_scale, n_points) * np.tile(scale, self.nodes.size)
        return InhomogeneousDistribution(self.shape, self.fwhm, nodes, weights, rscale)


def _symmetric_grid(half_width: float, n: int) -> np.ndarray:
    if n < 3 or n % 2 == 0:
        raise ValueError(f"node count must be odd and >= 3, got {n}")
    k = n // 2
    pos = half_width * np.arange(1, k + 1) / k
    return np.concatenate([-pos[::-1], [0.0], pos])


def _trapezoid_weights(x: np.ndarray) -> np.ndarray:
    w = np.empty_like(x)
    dx = np.diff(x)
    w[0] = 0.5 * dx[0]
    w[-1] = 0.5 * dx[-1]
    w[1:-1] = 0.5 * (dx[:-1] + dx[1:])
    return w


def _tabulated_fwhm(x, g) -> float:
    above = x[g >= 0.5 * g.max()]
    return float(above[-1] - above[0]) if above.size > 1 else float(x[-1] - x[0])


@dataclass(frozen=True)
class RelaxationParams:
    gamma: float = 0.0

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError("relaxation rate must be >= 0")


@dataclass(frozen=True)
class OpticalProbe:
    """Beer-Lambert probe: optical depth at thermal equilibrium and input intensity."""

    alpha0: float = math.log(2.0)
    input_intensity: float = 1.0

    def __post_init__(self):
        if not self.alpha0 > 0:
            raise ValueError(f"optical depth must be > 0, got {self.alpha0}")
        if not self.input_intensity > 0:
            raise ValueError("input intensity must be > 0")


@dataclass(frozen=True)
class CalibrationModel:
    """Linear Rabi-frequency-vs-voltage law, ordinary frequency (Hz/V, Hz)."""

    slope: float
    intercept: float = 0.0
    slope_err: float = math.nan
    intercept_err: float = math.nan

    def rabi_hz(self, voltage: float) -> float:
        return self.slope * voltage + self.intercept

    def rabi(self, voltage: float) -> float:
        """Angular Rabi frequency at a peak-to-peak voltage."""
        return TWO_PI * self.rabi_hz(voltage)


@dataclass(frozen=True)
class TransmissionTrace:
    times: np.ndarray
    intensity: np.ndarray
    alpha: np.ndarray
    markers: dict = field(default_factory=dict)


@dataclass(frozen=True)
class SegmentReport:
    index: int
    kind: str
    adiabaticity: float
    flip_time: float
    coverage: float


@dataclass(frozen=True)
class ValidationReport:
    segments: tuple
    warnings: tuple

    @property
    def ok(self) -> bool:
        return not self.warnings

    def format(self) -> str:
        lines = []
        for s in self.segments:
            if s.kind == PulseKind.HARD.value:
                lines.append(f"segment {s.index}: {s.kind}")
                continue
            lines.append(
                f"segment {s.index}: {s.kind}  Q = {s.adiabaticity:.1f}  "
                f"flip time = {format_time(s.flip_time)}  "
                f"coverage = {format_frequency(s.coverage)}")
        for w in self.warnings:
            lines.append(f"warning: {w}")
        return "\n".join(lines)


def validate_sequence(seq: PulseSequence, dist: InhomogeneousDistribution) -> ValidationReport:
    """Per-pulse adiabaticity metrics plus warnings; never raises on physics.

    Structural problems (empty, overlapping, invalid pulses) are rejected by
    the constructors with :class:`SequenceError` before this point.
    """
    reports = []
    warnings = []
    for i, seg in enumerate(seq.segments):
        if not isinstance(seg, ChirpedPulse):
            continue
        rep = SegmentReport(i, seg.kind.value, seg.adiabaticity, seg.flip_time, seg.coverage)
        reports.append(rep)
        if not seg.is_adiabatic:
            continue
        if seg.adiabaticity < MIN_ADIABATICITY:
            warnings.append(f"segment {i} ({seg.kind.value}): adiabaticity Q = "
                            f"{seg.adiabaticity:.3g} < {MIN_ADIABATICITY:g}")
        need = MIN_COVERAGE_FWHM * dist.fwhm
        if seg.coverage < need:
            warnings.append(f"segment {i} ({seg.kind.value}): sweep coverage "
                            f"{format_frequency(seg.coverage)} < {MIN_COVERAGE_FWHM:g} x FWHM "
                            f"({format_frequency(need)})")
    return ValidationReport(tuple(reports), tuple(warnings))


def as_sequence(segments: Sequence[Segment] | PulseSequence) -> PulseSequence:
    return segments if isinstance(segments, PulseSequence) else PulseSequence(tuple(segments))

"""Parameter extraction from transmission traces and nutation data.

Nonlinear fits use :func:`scipy.optimize.least_squares` (Levenberg-Marquardt
with a finite-difference Jacobian). Parameter uncertainties are the square
roots of the diagonal of ``s^2 (J^T J)^-1`` at the optimum, where
``s^2 = 2*cost/(m - p)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .model import FWHM_PER_SIGMA, CalibrationModel

MAX_NFEV = 2000
BUMP_NODES = 201
BUMP_SPAN = {"gaussian": 4.0, "lorentzian": 20.0}
# fitted width below this fraction of the Rabi frequency leaves the bump shape
# independent of the width (only depth*width^2 is constrained)
DEGENERATE_WIDTH = 0.05
# for a narrow distribution the bump shape stops depending on the width and
# only depth*width^2 is constrained; the two estimates then move together
DEGENERATE_CORRELATION = 0.9999
TWO_RATE_THRESHOLD = 0.2


@dataclass(frozen=True)
class FitResult:
    """Estimates with 1-sigma errors and diagnostics.

    ``reliable`` is false whenever the optimizer did not converge or a
    blocking flag (``degenerate``, ``no spectral peak``) was raised.
    """

    params: dict
    errors: dict
    residual_norm: float
    converged: bool
    n_iter: int
    flags: tuple = ()
    diagnostics: dict = field(default_factory=dict)

    BLOCKING = ("degenerate", "no spectral peak", "no decay resolved")

    @property
    def reliable(self) -> bool:
        return self.converged and not any(f in self.BLOCKING for f in self.flags)

    def __getitem__(self, name: str) -> float:
        return self.params[name]

    def to_dict(self) -> dict:
        return {"params": dict(self.params), "errors": dict(self.errors),
                "residual_norm": self.residual_norm, "converged": self.converged,
                "n_iter": self.n_iter, "flags": list(self.flags),
                "diagnostics": dict(self.diagnostics), "reliable": self.reliable}


def _covariance(res, n_data: int) -> np.ndarray:
    j = res.jac
    dof = max(n_data - j.shape[1], 1)
    s2 = 2.0 * res.cost / dof
    try:
        return np.linalg.inv(j.T @ j) * s2
    except np.linalg.LinAlgError:
        return np.full((j.shape[1], j.shape[1]), np.inf)


def _correlation(jac, i: int, k: int) -> float:
    """Correlation of two estimates; independent of the residual scale."""
    c = np.linalg.pinv(jac.T @ jac)
    den = math.sqrt(c[i, i] * c[k, k])
    return float(c[i, k] / den) if den > 0 else 1.0


def _errors(cov) -> np.ndarray:
    d = np.diag(cov)
    return np.sqrt(np.where(d >= 0, d, np.inf))


# ---------------------------------------------------------------- bump width

def _unit_nodes(shape: str, n: int = BUMP_NODES):
    """Nodes and trapezoid weights of a unit-FWHM density, symmetrized."""
    if shape not in BUMP_SPAN:
        raise ValueError(f"unsupported shape {shape!r}; expected one of {sorted(BUMP_SPAN)}")
    x = np.linspace(-BUMP_SPAN[shape], BUMP_SPAN[shape], n)
    if shape == "gaussian":
        s = 1.0 / FWHM_PER_SIGMA
        g = np.exp(-0.5 * (x / s) ** 2)
    else:
        g = 1.0 / (1.0 + (2.0 * x) ** 2)
    w = np.full(n, x[1] - x[0])
    w[0] = w[-1] = 0.5 * w[0]
    w = w * g
    w = 0.5 * (w + w[::-1])
    return x, w / w.sum()


def bump_mean_mz(times, center: float, rabi: float, chirp: float, fwhm: float,
                 shape: str = "gaussian", n_nodes: int = BUMP_NODES) -> np.ndarray:
    """Ensemble vertical component during an AFP after a half passage.

    Averages ``Delta/Omega_eff(Delta) * (Delta - r s)/Omega_eff(Delta - r s)``
    over a width-``fwhm`` density, ``s = t - center``.
    """
    x, w = _unit_nodes(shape, n_nodes)
    d = fwhm * x
    u = d[None, :] - chirp * (np.asarray(times, dtype=float)[:, None] - center)
    f = (d / np.hypot(rabi, d))[None, :] * u / np.hypot(rabi, u)
    return f @ w


def bump_profile(times, center: float, rabi: float, chirp: float, fwhm: float,
                 alpha0: float = math.log(2.0), input_intensity: float = 1.0,
                 shape: str = "gaussian", n_nodes: int = BUMP_NODES) -> np.ndarray:
    """Transmitted intensity ``I0*exp(-alpha0*(1 - <Mz>))`` around an AFP center."""
    mz = bump_mean_mz(times, center, rabi, chirp, fwhm, shape, n_nodes)
    return input_intensity * np.exp(-alpha0 * (1.0 - mz))


def _half_contrast_width(times, y) -> float:
    """Full width of the extremum at half its contrast against the edge baseline."""
    base = 0.5 * (y[0] + y[-1])
    k = int(np.argmax(np.abs(y - base)))
    half = base + 0.5 * (y[k] - base)
    above = np.abs(y - base) >= np.abs(half - base)
    lo = k
    while lo > 0 and above[lo - 1]:
        lo -= 1
    hi = k
    while hi < len(y) - 1 and above[hi + 1]:
        hi += 1
    return float(times[hi] - times[lo]) if hi > lo else float(times[1] - times[0])


def _width_guess(times, center, rabi, chirp, shape, observed_width) -> float:
    """Invert the model's half-contrast width over a log grid of FWHM values."""
    grid = np.abs(rabi) * np.logspace(-1.3, 1.3, 27)
    widths = np.array([_half_contrast_width(times, bump_mean_mz(times, center, rabi, chirp, g, shape))
                       for g in grid])
    k = int(np.argmin(np.abs(np.log(widths / observed_width))))
    return float(grid[k])


def fit_bump_width(times, intensity, rabi: float, chirp: float, center: float | None = None,
                   shape: str = "gaussian", alpha0: float | None = None) -> FitResult:
    """Fit the inhomogeneous FWHM to a transmission bump around an AFP center.

    Parameters
    ----------
    times, intensity : array_like
        Trace segment spanning the bump.
    rabi, chirp : float
        Calibrated Rabi frequency (rad/s) and chirp rate (rad/s^2).
    center : float, optional
        AFP center time. Fitted as a nuisance parameter when omitted.
    shape : {"gaussian", "lorentzian"}
    alpha0 : float, optional
        Fixed optical depth. Fitted (with the input intensity) when omitted.

    Returns
    -------
    FitResult
        ``params["fwhm"]`` in rad/s plus the nuisance parameters. Residuals
        are taken on ``log(intensity)`` so multiplicative noise is uniform.
    """
    t = np.asarray(times, dtype=float)
    y = np.asarray(intensity, dtype=float)
    if t.shape != y.shape or t.size < 5:
        raise ValueError("need at least 5 matching (time, intensity) samples")
    if np.any(y <= 0):
        raise ValueError("intensities must be positive")
    ly = np.log(y)
    base = 0.5 * (ly[0] + ly[-1])
    k = int(np.argmax(np.abs(ly - base)))
    contrast = abs(ly[k] - base)
    edge_noise = np.std(np.diff(ly)) / math.sqrt(2.0)
    if k in (0, t.size - 1) or contrast <= max(3.0 * edge_noise, 1e-12):
        raise ValueError("trace segment has no interior extremum to fit")

    fit_center = center is None
    fit_alpha = alpha0 is None
    t_c = float(t[k]) if fit_center else float(center)
    width0 = _width_guess(t, t_c, rabi, chirp, shape, _half_contrast_width(t, ly))
    mz0 = bump_mean_mz(t, t_c, rabi, chirp, width0, shape)
    # linear least squares for log(I0) - alpha0 and alpha0 at the initial width
    if fit_alpha:
        a = np.column_stack([np.ones_like(mz0), mz0])
        (c0, a0), *_ = np.linalg.lstsq(a, ly, rcond=None)
        a0 = a0 if a0 > 0 else math.log(2.0)
    else:
        a0 = alpha0
        c0 = float(np.mean(ly - a0 * mz0))

    names = ["log_fwhm", "log_base"] + (["alpha0"] if fit_alpha else []) + (["center"] if fit_center else [])
    x0 = [math.log(width0), c0] + ([a0] if fit_alpha else []) + ([t_c] if fit_center else [])
    scale = [1.0, 1.0] + ([1.0] if fit_alpha else []) + ([abs(rabi / chirp)] if fit_center else [])

    def unpack(p):
        it = iter(p)
        lw, lb = next(it), next(it)
        al = next(it) if fit_alpha else alpha0
        tc = next(it) if fit_center else t_c
        return lw, lb, al, tc

    def resid(p):
        lw, lb, al, tc = unpack(p)
        return lb + al * bump_mean_mz(t, tc, rabi, chirp, math.exp(lw), shape) - ly

    res = optimize.least_squares(resid, x0, method="lm", x_scale=scale, max_nfev=MAX_NFEV)
    cov = _covariance(res, t.size)
    err = _errors(cov)
    lw, lb, al, tc = unpack(res.x)
    fwhm = math.exp(lw)
    params = {"fwhm": fwhm, "alpha0": al, "input_intensity": math.exp(lb + al), "center": tc}
    errors = {"fwhm": fwhm * err[0],
              "alpha0": err[names.index("alpha0")] if fit_alpha else 0.0,
              "input_intensity": math.exp(lb + al) * err[1],
              "center": err[names.index("center")] if fit_center else 0.0}
    flags = []
    if not res.success:
        flags.append("iteration cap reached")
    rel = errors["fwhm"] / fwhm if fwhm > 0 else math.inf
    rho = _correlation(res.jac, 0, names.index("alpha0")) if fit_alpha else 0.0
    if (fwhm < DEGENERATE_WIDTH * abs(rabi) or not math.isfinite(rel) or rel > 0.5
            or abs(rho) > DEGENERATE_CORRELATION):
        flags.append("degenerate")
    return FitResult(params, errors, float(np.linalg.norm(res.fun)), bool(res.success),
                     int(res.nfev), tuple(flags),
                     {"initial_fwhm": width0, "width_depth_correlation": rho})


# ---------------------------------------------------------------- decay rate

def final_intensity(periods, gamma: float, input_intensity: float, bump_intensity: float,
                    eta: float = 1.0):
    """``If(T) = I2 * (I0/I2) ** (eta * exp(-gamma*T))``; the decay relation."""
    T = np.asarray(periods, dtype=float)
    return bump_intensity * np.exp(eta * np.exp(-gamma * T) * math.log(input_intensity / bump_intensity))


def _loglog(y, i_inf):
    ratio = np.log(y / i_inf)
    if not (np.all(ratio > 0) or np.all(ratio < 0)):
        raise ValueError("final intensities straddle I_inf; ordering is inconsistent")
    return np.log(np.abs(ratio))


def _line(x, y):
    if np.ptp(y) == 0.0:
        return 0.0, float(y[0]), 0.0, np.zeros_like(y)
    from scipy import stats
    lr = stats.linregress(x, y)
    resid = y - (lr.intercept + lr.slope * x)
    return float(lr.slope), float(lr.intercept), float(lr.stderr), resid


def fit_decay_rate(periods, final, i_inf: float | None = None) -> FitResult:
    """Decay rate from ``log(If(T)/If(inf))`` decaying exponentially in ``T``.

    With ``i_inf`` known, ``log|log(If/I_inf)|`` is regressed linearly on
    ``T`` (slope ``-gamma``) and cross-checked by a nonlinear fit of
    ``If = I_inf*exp(A*exp(-gamma*T))``. Without it, ``I_inf`` becomes a
    nuisance parameter of the nonlinear fit and the result is flagged.

    Diagnostics include ``rate_change``: the relative difference of the
    rates fitted separately to the early and late halves of the series. It
    is flagged ``two-rate`` above :data:`TWO_RATE_THRESHOLD`.
    """
    T = np.asarray(periods, dtype=float)
    y = np.asarray(final, dtype=float)
    if T.shape != y.shape or T.size < 3:
        raise ValueError("need at least 3 (T, If) points")
    if np.any(y <= 0):
        raise ValueError("final intensities must be positive")
    order = np.argsort(T)
    T, y = T[order], y[order]
    flags = []
    if i_inf is not None:
        if not i_inf > 0:
            raise ValueError("I_inf must be positive")
        if np.all(y == i_inf):
            raise ValueError("every If equals I_inf; nothing to fit")
        z = _loglog(y, i_inf)
        slope, icpt, se, resid = _line(T, z)
        gamma, gamma_err = -slope, se
        sign = 1.0 if y[0] > i_inf else -1.0
        nl = _nonlinear_decay(T, y, gamma, sign * math.exp(icpt), i_inf)
        diag = {"method": "linear", "rms_residual": float(np.sqrt(np.mean(resid**2))),
                "nonlinear_gamma": nl["gamma"], "nonlinear_gamma_err": nl["gamma_err"]}
        if abs(nl["gamma"] - gamma) > max(2.0 * math.hypot(gamma_err, nl["gamma_err"]),
                                          1e-6 * max(abs(gamma), 1e-300)):
            flags.append("linear and nonlinear fits disagree")
        params = {"gamma": gamma, "log_amplitude": icpt, "i_inf": i_inf}
        errors = {"gamma": gamma_err, "log_amplitude": float("nan"), "i_inf": 0.0}
        converged, n_iter = True, 1
        resnorm = float(np.linalg.norm(resid))
    else:
        flags.append("I_inf fitted")
        nl = _nonlinear_decay(T, y, None, None, None)
        gamma, gamma_err = nl["gamma"], nl["gamma_err"]
        params = {"gamma": gamma, "log_amplitude": math.log(abs(nl["amplitude"])), "i_inf": nl["i_inf"]}
        errors = {"gamma": gamma_err, "log_amplitude": float("nan"), "i_inf": nl["i_inf_err"]}
        z = _loglog(y, nl["i_inf"])
        diag = {"method": "nonlinear"}
        converged, n_iter, resnorm = nl["converged"], nl["n_iter"], nl["residual_norm"]

    if abs(gamma) * np.ptp(T) < 1e-9 or (gamma_err > 0 and abs(gamma) < 2.0 * gamma_err):
        flags.append("no decay resolved")
    rate_change = _rate_change(T, z)
    diag["rate_change"] = rate_change
    if rate_change > TWO_RATE_THRESHOLD:
        flags.append("two-rate")
    params["lifetime"] = 1.0 / gamma if gamma != 0 else math.inf
    errors["lifetime"] = gamma_err / gamma**2 if gamma != 0 else math.inf
    return FitResult(params, errors, resnorm, converged, n_iter, tuple(flags), diag)


def _rate_change(T, z) -> float:
    n = T.size
    if n < 4:
        return 0.0
    h = n // 2
    s1 = _line(T[:h], z[:h])[0]
    s2 = _line(T[h:], z[h:])[0]
    ref = max(abs(s1), abs(s2))
    return abs(s1 - s2) / ref if ref > 0 else 0.0


def _nonlinear_decay(T, y, gamma0, amp0, i_inf):
    ly = np.log(y)
    fit_inf = i_inf is None
    if fit_inf:
        i_inf, gamma0, amp0 = _scan_i_inf(T, y)
    if gamma0 is None or not math.isfinite(gamma0):
        gamma0 = 0.0
    tau = max(np.ptp(T), 1e-300)
    t0 = T[0]

    def resid(p):
        g, a = p[0] / tau, p[1]
        li = p[2] if fit_inf else math.log(i_inf)
        return li + a * np.exp(-g * (T - t0)) - ly

    a_t0 = amp0 * math.exp(-gamma0 * t0)
    x0 = [gamma0 * tau, a_t0] + ([math.log(i_inf)] if fit_inf else [])
    res = optimize.least_squares(resid, x0, method="lm", max_nfev=MAX_NFEV)
    cov = _covariance(res, T.size)
    err = _errors(cov)
    g = res.x[0] / tau
    out = {"gamma": float(g), "gamma_err": float(err[0] / tau),
           "amplitude": float(res.x[1] * math.exp(g * t0)),
           "converged": bool(res.success), "n_iter": int(res.nfev),
           "residual_norm": float(np.linalg.norm(res.fun))}
    if fit_inf:
        out["i_inf"] = float(math.exp(res.x[2]))
        out["i_inf_err"] = float(out["i_inf"] * err[2])
    return out


def _scan_i_inf(T, y):
    """Initial ``I_inf`` maximizing linearity of the log-log series."""
    lo, hi = (0.5 * y.min(), y.min()) if y[0] > y[-1] else (y.max(), 2.0 * y.max())
    best = None
    for c in np.linspace(0.0, 1.0, 201)[1:-1]:
        cand = lo + c * (hi - lo)
        z = np.log(np.abs(np.log(y / cand)))
        slope, icpt, _, resid = _line(T, z)
        score = float(np.sum(resid**2))
        if best is None or score < best[0]:
            best = (score, cand, -slope, math.copysign(math.exp(icpt), math.log(y[0] / cand)))
    return best[1], best[2], best[3]


# ---------------------------------------------------------------- efficiency

@dataclass(frozen=True)
class Efficiency:
    eta: float
    annotations: tuple = ()


def efficiency(i0: float, i2: float, i_f: float, period: float, gamma: float) -> Efficiency:
    """Refocusing efficiency ``exp(gamma*T) * log(If/I2) / log(I0/I2)``.

    No clamping: values above one are returned with an annotation, since they
    mean the assumed decay rate overstates the actual one.
    """
    if min(i0, i2, i_f) <= 0:
        raise ValueError("intensities must be positive")
    if i2 == i0:
        raise ValueError("I2 equals I0; efficiency is undefined")
    eta = math.exp(gamma * period) * math.log(i_f / i2) / math.log(i0 / i2)
    notes = []
    if not i0 > i2:
        notes.append("I2 above I0: bump has the wrong sign")
    if not i_f > i2:
        notes.append("If not above I2: no refocused signal")
    if eta > 1.0 + 1e-9:
        notes.append("assumed-gamma inconsistency: eta > 1, actual decay slower than assumed")
    return Efficiency(eta, tuple(notes))


# ---------------------------------------------------------------- calibration

def fit_rabi_calibration(voltages, rabi_hz) -> CalibrationModel:
    """Least-squares line ``rabi_hz = slope*V + intercept`` (Hz/V, Hz)."""
    v = np.asarray(voltages, dtype=float)
    f = np.asarray(rabi_hz, dtype=float)
    if v.shape != f.shape or v.size < 2:
        raise ValueError("need at least 2 (voltage, Rabi frequency) points")
    a = np.column_stack([v, np.ones_like(v)])
    if np.linalg.matrix_rank(a) < 2:
        raise ValueError("calibration voltages are all identical; slope is undetermined")
    coef, *_ = np.linalg.lstsq(a, f, rcond=None)
    if v.size > 2:
        r = f - a @ coef
        s2 = float(r @ r) / (v.size - 2)
        cov = s2 * np.linalg.inv(a.T @ a)
        errs = np.sqrt(np.diag(cov))
    else:
        errs = (math.nan, math.nan)
    return CalibrationModel(float(coef[0]), float(coef[1]), float(errs[0]), float(errs[1]))


# ---------------------------------------------------------------- nutation

def _spectral_peak(t, y):
    """Angular frequency of the strongest non-DC spectral line, or None."""
    n = t.size
    dt = (t[-1] - t[0]) / (n - 1)
    if np.ptp(y) <= 1e-12 * max(1.0, float(np.abs(y).max())):
        return None
    yc = (y - y.mean()) * np.hanning(n)
    pad = 8 * n
    spec = np.abs(np.fft.rfft(yc, pad))
    freqs = np.fft.rfftfreq(pad, dt)
    spec[0] = 0.0
    k = int(np.argmax(spec))
    floor = np.median(spec)
    if spec[k] <= 10.0 * floor or k == 0 or k == spec.size - 1:
        return None
    # parabolic refinement on the log spectrum
    a, b, c = np.log(spec[k - 1:k + 2] + 1e-300)
    shift = 0.5 * (a - c) / (a - 2 * b + c) if (a - 2 * b + c) != 0 else 0.0
    return 2.0 * math.pi * (freqs[k] + shift * (freqs[1] - freqs[0]))


def extract_rabi_from_nutation(times, signal) -> FitResult:
    """Fit ``A*exp(-t/tau_d)*cos(Omega*t) + C`` to a nutation record.

    ``Omega`` (rad/s) is initialized from the FFT peak. The damping time is a
    nuisance parameter reported as a rate ``params["damping_rate"] = 1/tau_d``.
    """
    t = np.asarray(times, dtype=float)
    y = np.asarray(signal, dtype=float)
    if t.shape != y.shape or t.size < 8:
        raise ValueError("need at least 8 matching samples")
    tt = t - t[0]
    om0 = _spectral_peak(tt, y)
    nan = float("nan")
    if om0 is None:
        params = {"rabi": nan, "amplitude": nan, "damping_rate": nan, "offset": float(np.mean(y))}
        return FitResult(params, {k: nan for k in params}, 0.0, False, 0, ("no spectral peak",))
    c0 = float(np.mean(y))
    a0 = float(y[0] - c0)
    span = tt[-1]

    def resid(p):
        om, a, k, c = p
        return a * np.exp(-k * tt) * np.cos(om * tt) + c - y

    res = optimize.least_squares(resid, [om0, a0, 1.0 / span, c0], method="lm",
                                 x_scale=[om0, max(abs(a0), 1e-12), 1.0 / span, max(abs(c0), 1e-12)],
                                 max_nfev=MAX_NFEV)
    cov = _covariance(res, t.size)
    err = _errors(cov)
    om, a, k, c = (float(v) for v in res.x)
    flags = []
    if abs(om) * span < 4.0 * math.pi:
        flags.append("fewer than two periods")
    params = {"rabi": abs(om), "amplitude": a, "damping_rate": k, "offset": c}
    errors = dict(zip(params, (float(e) for e in err)))
    return FitResult(params, errors, float(np.linalg.norm(res.fun)), bool(res.success),
                     int(res.nfev), tuple(flags), {"initial_rabi": om0})


# ---------------------------------------------------------------- bootstrap

def bootstrap_errors(fit, x, y, n_resamples: int = 200, seed: int = 0, **kwargs) -> dict:
    """Pairs-bootstrap spread of every fitted parameter.

    Off by default; the fits report covariance errors. ``fit`` is one of the
    fitting functions, called as ``fit(x[idx], y[idx], **kwargs)`` on
    resampled index sets drawn with replacement and sorted. Resamples the
    fit rejects (too few distinct points, flat data) are skipped.

    Returns
    -------
    dict
        ``{"std": {name: float}, "n_used": int, "n_resamples": int}``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if n_resamples < 2:
        raise ValueError("need at least 2 resamples")
    rng = np.random.default_rng(seed)
    draws = []
    for _ in range(n_resamples):
        idx = np.sort(rng.integers(0, x.size, x.size))
        try:
            draws.append(fit(x[idx], y[idx], **kwargs).params)
        except (ValueError, np.linalg.LinAlgError):
            continue
    if len(draws) < 2:
        raise ValueError("fewer than 2 resamples could be fitted")
    std = {k: float(np.std([d[k] for d in draws], ddof=1)) for k in draws[0]}
    return {"std": std, "n_used": len(draws), "n_resamples": n_resamples}

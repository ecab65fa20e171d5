"""Hot loops: fixed-step RK4 over an ensemble and Simpson phase integrals.

Each kernel exists twice, a numba ``@njit`` version and a pure-numpy
version with the same arithmetic order. ``ADREFOCUS_DISABLE_NUMBA=1`` (or a
missing numba) selects the numpy path at import time. Both paths take the
drive field as precomputed tables so the transcendental calls are shared.

Arrays are structure-of-arrays: ``mx, my, mz`` of shape ``(n,)``.
"""

from __future__ import annotations

import os
import warnings

import numpy as np

_DISABLED = os.environ.get("ADREFOCUS_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:
    import numba
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not _DISABLED
if not HAVE_NUMBA and not _DISABLED:  # pragma: no cover
    warnings.warn("numba not importable; using the pure-numpy kernels")

# numpy fallback processes the Simpson integrand in node chunks of this size
_CHUNK = 256
# nodes advanced side by side in the compiled RK4 kernel
_BLOCK = 64


def rk4_numpy(mx, my, mz, delta, bscale, gamma, h, nsteps, bx, by, out_every, out):
    """Integrate in place; ``bx, by`` hold the drive at every half step.

    ``out`` has shape ``(n_out, 3, n)``; the state after every ``out_every``
    steps is written to consecutive slots. Returns the number of slots used.
    """
    x = mx.copy()
    y = my.copy()
    z = mz.copy()
    d = delta
    g = gamma
    hh = 0.5 * h
    h6 = h / 6.0
    k_out = 0
    for k in range(nsteps):
        bx0 = bscale * bx[2 * k]
        by0 = bscale * by[2 * k]
        bx1 = bscale * bx[2 * k + 1]
        by1 = bscale * by[2 * k + 1]
        bx2 = bscale * bx[2 * k + 2]
        by2 = bscale * by[2 * k + 2]

        k1x = by0 * z - d * y - g * x
        k1y = d * x - bx0 * z - g * y
        k1z = bx0 * y - by0 * x
        x1 = x + hh * k1x
        y1 = y + hh * k1y
        z1 = z + hh * k1z

        k2x = by1 * z1 - d * y1 - g * x1
        k2y = d * x1 - bx1 * z1 - g * y1
        k2z = bx1 * y1 - by1 * x1
        x2 = x + hh * k2x
        y2 = y + hh * k2y
        z2 = z + hh * k2z

        k3x = by1 * z2 - d * y2 - g * x2
        k3y = d * x2 - bx1 * z2 - g * y2
        k3z = bx1 * y2 - by1 * x2
        x3 = x + h * k3x
        y3 = y + h * k3y
        z3 = z + h * k3z

        k4x = by2 * z3 - d * y3 - g * x3
        k4y = d * x3 - bx2 * z3 - g * y3
        k4z = bx2 * y3 - by2 * x3

        x = x + h6 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
        y = y + h6 * (k1y + 2.0 * k2y + 2.0 * k3y + k4y)
        z = z + h6 * (k1z + 2.0 * k2z + 2.0 * k3z + k4z)

        if (k + 1) % out_every == 0:
            out[k_out, 0] = x
            out[k_out, 1] = y
            out[k_out, 2] = z
            k_out += 1
    mx[:] = x
    my[:] = y
    mz[:] = z
    return k_out


def _rk4_loop(mx, my, mz, delta, bscale, gamma, h, nsteps, bx, by, out_every, out):
    # nodes innermost: one RK4 step is a long dependency chain, so running a
    # block of independent nodes side by side lets the CPU pipeline (and
    # vectorize) them; per-node arithmetic matches rk4_numpy exactly
    n = mx.size
    g = gamma
    hh = 0.5 * h
    h6 = h / 6.0
    for i0 in range(0, n, _BLOCK):
        i1 = min(i0 + _BLOCK, n)
        m = i1 - i0
        x = mx[i0:i1].copy()
        y = my[i0:i1].copy()
        z = mz[i0:i1].copy()
        d = delta[i0:i1]
        s = bscale[i0:i1]
        k_out = 0
        left = out_every
        for k in range(nsteps):
            bxa = bx[2 * k]
            bya = by[2 * k]
            bxb = bx[2 * k + 1]
            byb = by[2 * k + 1]
            bxc = bx[2 * k + 2]
            byc = by[2 * k + 2]
            for j in range(m):
                xj = x[j]
                yj = y[j]
                zj = z[j]
                dj = d[j]
                bx0 = s[j] * bxa
                by0 = s[j] * bya
                bx1 = s[j] * bxb
                by1 = s[j] * byb
                bx2 = s[j] * bxc
                by2 = s[j] * byc

                k1x = by0 * zj - dj * yj - g * xj
                k1y = dj * xj - bx0 * zj - g * yj
                k1z = bx0 * yj - by0 * xj
                x1 = xj + hh * k1x
                y1 = yj + hh * k1y
                z1 = zj + hh * k1z

                k2x = by1 * z1 - dj * y1 - g * x1
                k2y = dj * x1 - bx1 * z1 - g * y1
                k2z = bx1 * y1 - by1 * x1
                x2 = xj + hh * k2x
                y2 = yj + hh * k2y
                z2 = zj + hh * k2z

                k3x = by1 * z2 - dj * y2 - g * x2
                k3y = dj * x2 - bx1 * z2 - g * y2
                k3z = bx1 * y2 - by1 * x2
                x3 = xj + h * k3x
                y3 = yj + h * k3y
                z3 = zj + h * k3z

                k4x = by2 * z3 - dj * y3 - g * x3
                k4y = dj * x3 - bx2 * z3 - g * y3
                k4z = bx2 * y3 - by2 * x3

                x[j] = xj + h6 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
                y[j] = yj + h6 * (k1y + 2.0 * k2y + 2.0 * k3y + k4y)
                z[j] = zj + h6 * (k1z + 2.0 * k2z + 2.0 * k3z + k4z)
            left -= 1
            if left == 0:
                for j in range(m):
                    out[k_out, 0, i0 + j] = x[j]
                    out[k_out, 1, i0 + j] = y[j]
                    out[k_out, 2, i0 + j] = z[j]
                k_out += 1
                left = out_every
        mx[i0:i1] = x
        my[i0:i1] = y
        mz[i0:i1] = z
    return nsteps // out_every


def simpson_phase_numpy(rabi, rate, delta, s0, s1, npanels):
    """Composite Simpson of sqrt(rabi**2 + (delta - rate*s)**2) over [s0, s1].

    ``s`` is time relative to the pulse center; ``rabi`` and ``delta`` are
    per-node arrays, ``npanels`` is even.
    """
    out = np.empty(delta.size)
    s = np.linspace(s0, s1, npanels + 1)
    w = np.ones(npanels + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    hstep = (s1 - s0) / npanels
    sweep = rate * s
    for a in range(0, delta.size, _CHUNK):
        b = min(a + _CHUNK, delta.size)
        u = delta[a:b, None] - sweep[None, :]
        f = np.sqrt(rabi[a:b, None] ** 2 + u * u)
        out[a:b] = (f @ w) * (hstep / 3.0)
    return out


def _simpson_loop(rabi, rate, delta, s0, s1, npanels):
    n = delta.size
    out = np.empty(n)
    hstep = (s1 - s0) / npanels
    for i in range(n):
        om2 = rabi[i] * rabi[i]
        d = delta[i]
        acc = 0.0
        for j in range(npanels + 1):
            u = d - rate * (s0 + j * hstep)
            f = np.sqrt(om2 + u * u)
            if j == 0 or j == npanels:
                acc += f
            elif j % 2 == 1:
                acc += 4.0 * f
            else:
                acc += 2.0 * f
        out[i] = acc * (hstep / 3.0)
    return out


if HAVE_NUMBA:
    rk4_numba = numba.njit(cache=True, nogil=True)(_rk4_loop)
    simpson_phase_numba = numba.njit(cache=True, nogil=True)(_simpson_loop)
else:  # pragma: no cover
    rk4_numba = None
    simpson_phase_numba = None


def rk4(*args):
    return (rk4_numba if USE_NUMBA else rk4_numpy)(*args)


def simpson_phase(*args):
    return (simpson_phase_numba if USE_NUMBA else simpson_phase_numpy)(*args)


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"

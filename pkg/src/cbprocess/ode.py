"""Dormand-Prince 5(4) integrator for complex autonomous systems."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import StepSizeUnderflowError

_C = np.array([0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1, 1])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array([35 / 384, 0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0])
_E = _B - np.array([5179 / 57600, 0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])

# PI controller exponents (Hairer & Wanner, order 5)
_K_I = 0.7 / 5
_K_P = 0.4 / 5
_SAFETY = 0.9
_MIN_FACTOR, _MAX_FACTOR = 0.2, 5.0


@dataclass(frozen=True)
class SolverStats:
    steps: int
    rejected: int
    max_local_error: float


def integrate(f, y0, times, rtol=1e-9, atol=1e-12, after_step=None, h0=None):
    """Integrate ``y' = f(y)`` from ``times[0]`` and return values at every entry of ``times``.

    Steps are clipped to land on each output time.  ``after_step(t, y)`` may
    return a modified state (used for projection) or raise to abort.
    """
    times = np.asarray(times, dtype=float)
    y = np.array(y0, dtype=complex)
    out = np.empty((times.size, y.size), dtype=complex)
    out[0] = y
    t = times[0]
    k1 = f(y)
    h = h0 or _initial_step(f, y, k1, rtol, atol, times[-1] - t)
    steps = rejected = 0
    max_err = 0.0
    err_prev = 1.0
    for n, t_end in enumerate(times[1:], start=1):
        while t < t_end:
            last = False
            if t + h >= t_end or (t_end - t - h) < 1e-12 * abs(t_end):
                h_try, last = t_end - t, True
            else:
                h_try = h
            y_new, k7, err_vec = _step(f, y, k1, h_try)
            scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
            err = float(np.sqrt(np.mean(np.abs(err_vec / scale) ** 2)))
            if not np.isfinite(err) or not np.all(np.isfinite(y_new)):
                err = np.inf
            if err <= 1.0:
                t = t_end if last else t + h_try
                steps += 1
                max_err = max(max_err, err)
                if after_step is not None:
                    y_new = after_step(t, y_new)
                    k7 = f(y_new)
                y, k1 = y_new, k7
                fac = _SAFETY * max(err, 1e-10) ** -_K_I * err_prev ** _K_P
                fac = min(_MAX_FACTOR, max(_MIN_FACTOR, fac))
                err_prev = max(err, 1e-4)
                if not last:
                    h = h_try * fac
            else:
                rejected += 1
                fac = _SAFETY * err ** -0.2 if np.isfinite(err) else _MIN_FACTOR
                h = h_try * max(_MIN_FACTOR, fac)
            if h <= 16 * np.spacing(abs(t)) or h < 1e-300:
                raise StepSizeUnderflowError(
                    f"step size underflow at t={t:.17g} (possible blow-up)", last_time=t)
        out[n] = y
    return out, SolverStats(steps, rejected, max_err)


_A_ROWS = [np.array(row) for row in _A]


def _step(f, y, k1, h):
    ks = np.empty((7, y.size), dtype=complex)
    ks[0] = k1
    for i in range(1, 7):
        ks[i] = f(y + h * (_A_ROWS[i] @ ks[:i]))
    y_new = y + h * (_B[:6] @ ks[:6])
    err = h * (_E @ ks)
    return y_new, ks[6], err


def _initial_step(f, y0, f0, rtol, atol, span):
    scale = atol + np.abs(y0) * rtol
    d0 = np.sqrt(np.mean(np.abs(y0 / scale) ** 2))
    d1 = np.sqrt(np.mean(np.abs(f0 / scale) ** 2))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    h0 = min(h0, abs(span))
    y1 = y0 + h0 * f0
    d2 = np.sqrt(np.mean(np.abs((f(y1) - f0) / scale) ** 2)) / h0
    if max(d1, d2) <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1 / 5)
    return min(100 * h0, h1, abs(span))

"""Numerical kernels, JIT-compiled when numba is available.

The public names (``dtw_fill``, ``dtw_backtrack``, ``render_notes``) are
bound at import time to either a numba-compiled scalar kernel or a plain
numpy implementation.  Set the environment variable ``ENCORE_NO_NUMBA`` to
any non-empty value other than ``0`` to force the numpy path; this is also
the automatic fallback when numba is not installed.

Both paths implement the same arithmetic.  The DTW routines are bit-exact
across paths (only min/add on float64); the synthesis kernels may differ
by a few ulps because numpy's vectorized sin and libm's scalar sin round
differently.
"""

from __future__ import annotations

import math
import os

import numpy as np

_TWO_PI = 2.0 * math.pi


def _numba_wanted() -> bool:
    flag = os.environ.get("ENCORE_NO_NUMBA", "")
    return flag in ("", "0")


NUMBA_ENABLED = False
if _numba_wanted():
    try:
        from numba import njit

        NUMBA_ENABLED = True
    except ImportError:  # pragma: no cover - exercised via env flag instead
        pass


# ---------------------------------------------------------------------------
# DTW: accumulated-cost fill and path backtrack.
#
# Step set {(1,0), (0,1), (1,1)}; ties during backtracking prefer the
# diagonal, then (1,0), then (0,1).  Cells may hold +inf (band masking);
# min() propagates them correctly.


def _dtw_fill_scalar(cost):
    n, m = cost.shape
    acc = np.empty((n, m), dtype=np.float64)
    acc[0, 0] = cost[0, 0]
    for j in range(1, m):
        acc[0, j] = acc[0, j - 1] + cost[0, j]
    for i in range(1, n):
        acc[i, 0] = acc[i - 1, 0] + cost[i, 0]
        for j in range(1, m):
            best = acc[i - 1, j - 1]
            if acc[i - 1, j] < best:
                best = acc[i - 1, j]
            if acc[i, j - 1] < best:
                best = acc[i, j - 1]
            acc[i, j] = cost[i, j] + best
    return acc


def _dtw_fill_numpy(cost):
    # Vectorized along anti-diagonals: every cell on diagonal d = i + j
    # depends only on diagonals d-1 and d-2, so each can be filled in one
    # shot.  Same adds and mins as the scalar kernel, hence bit-identical.
    n, m = cost.shape
    acc = np.full((n, m), np.inf, dtype=np.float64)
    # cumsum accumulates left to right, matching the scalar kernel's adds
    acc[0, :] = np.cumsum(cost[0, :], dtype=np.float64)
    acc[:, 0] = np.cumsum(cost[:, 0], dtype=np.float64)
    for d in range(2, n + m - 1):
        lo = max(1, d - m + 1)
        hi = min(n - 1, d - 1)
        if lo > hi:
            continue
        i = np.arange(lo, hi + 1)
        j = d - i
        best = np.minimum(acc[i - 1, j - 1], acc[i - 1, j])
        np.minimum(best, acc[i, j - 1], out=best)
        acc[i, j] = cost[i, j] + best
    return acc


def _dtw_backtrack_py(acc):
    n, m = acc.shape
    path = np.empty((n + m - 1, 2), dtype=np.int64)
    k = path.shape[0]
    i = n - 1
    j = m - 1
    k -= 1
    path[k, 0] = i
    path[k, 1] = j
    while i > 0 or j > 0:
        if i == 0:
            j -= 1
        elif j == 0:
            i -= 1
        else:
            diag = acc[i - 1, j - 1]
            up = acc[i - 1, j]
            left = acc[i, j - 1]
            if diag <= up and diag <= left:
                i -= 1
                j -= 1
            elif up <= left:
                i -= 1
            else:
                j -= 1
        k -= 1
        path[k, 0] = i
        path[k, 1] = j
    return path[k:]


# ---------------------------------------------------------------------------
# Additive synthesis.
#
# Each note contributes sum_k sin(2*pi*k*f0*t)/k over partials whose
# frequency stays below Nyquist, shaped by a linear attack/release
# envelope env(t) = clip(min(t/attack, (dur - t)/release), 0, 1) and
# scaled by the per-note amplitude.  t is measured from note start.


def _render_notes_scalar(starts, durs, freqs, amps, n_partials, attack, release, sr, out):
    total = out.shape[0]
    for n in range(starts.shape[0]):
        s = starts[n]
        dur = durs[n]
        a = attack
        r = release
        if a + r > dur:
            fit = dur / (a + r)
            a *= fit
            r *= fit
        i0 = int(round(s * sr))
        i1 = int(round((s + dur) * sr))
        if i0 < 0:
            i0 = 0
        if i1 > total:
            i1 = total
        f0 = freqs[n]
        amp = amps[n]
        nyquist = sr / 2.0
        for i in range(i0, i1):
            t = i / sr - s
            env = 1.0
            if a > 0.0:
                ea = t / a
                if ea < env:
                    env = ea
            if r > 0.0:
                er = (dur - t) / r
                if er < env:
                    env = er
            if env <= 0.0:
                continue
            x = 0.0
            for k in range(1, n_partials + 1):
                fk = k * f0
                if fk >= nyquist:
                    break
                x += math.sin(_TWO_PI * fk * t) / k
            out[i] += amp * env * x


def _render_notes_numpy(starts, durs, freqs, amps, n_partials, attack, release, sr, out):
    total = out.shape[0]
    for n in range(starts.shape[0]):
        s = starts[n]
        dur = durs[n]
        a = attack
        r = release
        if a + r > dur:
            fit = dur / (a + r)
            a *= fit
            r *= fit
        i0 = max(0, int(round(s * sr)))
        i1 = min(total, int(round((s + dur) * sr)))
        if i1 <= i0:
            continue
        t = np.arange(i0, i1, dtype=np.float64) / sr - s
        env = np.ones_like(t)
        if a > 0.0:
            np.minimum(env, t / a, out=env)
        if r > 0.0:
            np.minimum(env, (dur - t) / r, out=env)
        np.clip(env, 0.0, 1.0, out=env)
        x = np.zeros_like(t)
        for k in range(1, n_partials + 1):
            fk = k * freqs[n]
            if fk >= sr / 2.0:
                break
            x += np.sin(_TWO_PI * fk * t) / k
        out[i0:i1] += amps[n] * env * x


if NUMBA_ENABLED:
    dtw_fill = njit(cache=True)(_dtw_fill_scalar)
    dtw_backtrack = njit(cache=True)(_dtw_backtrack_py)
    render_notes = njit(cache=True)(_render_notes_scalar)
else:
    dtw_fill = _dtw_fill_numpy
    dtw_backtrack = _dtw_backtrack_py
    render_notes = _render_notes_numpy

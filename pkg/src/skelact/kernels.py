"""Hot numeric kernels: LSTM recurrence and segment edit distance.

Both carry two interchangeable implementations — a numba ``@njit`` kernel
and a pure-numpy fallback — because the per-frame recurrence and the
quadratic DP are the only loops the surrounding numpy/BLAS code cannot
batch away.  Selection happens once at import:

    SKELACT_NUMBA=0   force the numpy fallback
    unset / anything  use numba when importable, numpy otherwise

`active_backend()` reports which one won.  Gate blocks along the 4H axis
are ordered [input, forget, candidate, output].
"""

from __future__ import annotations

import os

import numpy as np


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# ---- pure-numpy implementations -------------------------------------------


def lstm_forward_numpy(x, wx, wh, b, h0, c0):
    """Run the LSTM over a (T, B, F) input; returns (h, c, gates).

    `h` and `c` are (T, B, H); `gates` holds post-activation gate values
    (T, B, 4H) saved for the backward pass.
    """
    steps, batch, _ = x.shape
    hidden = wh.shape[0]
    h = np.empty((steps, batch, hidden))
    c = np.empty((steps, batch, hidden))
    gates = np.empty((steps, batch, 4 * hidden))
    h_prev, c_prev = h0, c0
    for t in range(steps):
        z = x[t] @ wx + h_prev @ wh + b
        gi = _stable_sigmoid(z[:, :hidden])
        gf = _stable_sigmoid(z[:, hidden : 2 * hidden])
        gg = np.tanh(z[:, 2 * hidden : 3 * hidden])
        go = _stable_sigmoid(z[:, 3 * hidden :])
        c_t = gf * c_prev + gi * gg
        h_t = go * np.tanh(c_t)
        gates[t, :, :hidden] = gi
        gates[t, :, hidden : 2 * hidden] = gf
        gates[t, :, 2 * hidden : 3 * hidden] = gg
        gates[t, :, 3 * hidden :] = go
        c[t] = c_t
        h[t] = h_t
        h_prev, c_prev = h_t, c_t
    return h, c, gates


def lstm_backward_numpy(x, wx, wh, h, c, gates, h0, c0, dh_out):
    """Backpropagate dh_out (T, B, H) through time.

    Returns (dx, dwx, dwh, db).  Initial states are constants, so their
    gradients are not materialized.
    """
    steps, batch, feats = x.shape
    hidden = wh.shape[0]
    dx = np.empty_like(x)
    dwx = np.zeros_like(wx)
    dwh = np.zeros_like(wh)
    db = np.zeros_like(gates[0, 0])
    dh_next = np.zeros((batch, hidden))
    dc_next = np.zeros((batch, hidden))
    dz = np.empty((batch, 4 * hidden))
    for t in range(steps - 1, -1, -1):
        gi = gates[t, :, :hidden]
        gf = gates[t, :, hidden : 2 * hidden]
        gg = gates[t, :, 2 * hidden : 3 * hidden]
        go = gates[t, :, 3 * hidden :]
        tc = np.tanh(c[t])
        dh = dh_out[t] + dh_next
        dc = dh * go * (1.0 - tc * tc) + dc_next
        c_prev = c[t - 1] if t > 0 else c0
        h_prev = h[t - 1] if t > 0 else h0
        dz[:, :hidden] = dc * gg * gi * (1.0 - gi)
        dz[:, hidden : 2 * hidden] = dc * c_prev * gf * (1.0 - gf)
        dz[:, 2 * hidden : 3 * hidden] = dc * gi * (1.0 - gg * gg)
        dz[:, 3 * hidden :] = dh * tc * go * (1.0 - go)
        dwx += x[t].T @ dz
        dwh += h_prev.T @ dz
        db += dz.sum(axis=0)
        dx[t] = dz @ wx.T
        dh_next = dz @ wh.T
        dc_next = dc * gf
    return dx, dwx, dwh, db


def levenshtein_numpy(a: np.ndarray, b: np.ndarray) -> int:
    """Textbook edit distance between two integer sequences (rolling rows)."""
    m, n = len(a), len(b)
    prev = np.arange(n + 1, dtype=np.int64)
    curr = np.empty(n + 1, dtype=np.int64)
    for i in range(1, m + 1):
        curr[0] = i
        for j in range(1, n + 1):
            cost = 0 if a[i - 1] == b[j - 1] else 1
            curr[j] = min(prev[j] + 1, curr[j - 1] + 1, prev[j - 1] + cost)
        prev, curr = curr, prev
    return int(prev[n])


# ---- numba variants --------------------------------------------------------

NUMBA_AVAILABLE = False
lstm_forward_numba = None
lstm_backward_numba = None
levenshtein_numba = None

try:
    from numba import njit

    NUMBA_AVAILABLE = True

    @njit(cache=True)
    def _sigmoid_nb(x):
        return 1.0 / (1.0 + np.exp(-x))

    @njit(cache=True)
    def lstm_forward_numba(x, wx, wh, b, h0, c0):  # noqa: F811
        steps, batch, _ = x.shape
        hidden = wh.shape[0]
        h = np.empty((steps, batch, hidden))
        c = np.empty((steps, batch, hidden))
        gates = np.empty((steps, batch, 4 * hidden))
        h_prev = h0.copy()
        c_prev = c0.copy()
        for t in range(steps):
            z = np.dot(x[t], wx) + np.dot(h_prev, wh) + b
            gi = _sigmoid_nb(z[:, :hidden])
            gf = _sigmoid_nb(z[:, hidden : 2 * hidden])
            gg = np.tanh(z[:, 2 * hidden : 3 * hidden])
            go = _sigmoid_nb(z[:, 3 * hidden :])
            c_t = gf * c_prev + gi * gg
            h_t = go * np.tanh(c_t)
            gates[t, :, :hidden] = gi
            gates[t, :, hidden : 2 * hidden] = gf
            gates[t, :, 2 * hidden : 3 * hidden] = gg
            gates[t, :, 3 * hidden :] = go
            c[t] = c_t
            h[t] = h_t
            h_prev = h_t
            c_prev = c_t
        return h, c, gates

    @njit(cache=True)
    def lstm_backward_numba(x, wx, wh, h, c, gates, h0, c0, dh_out):  # noqa: F811
        steps, batch, feats = x.shape
        hidden = wh.shape[0]
        dx = np.empty_like(x)
        dwx = np.zeros_like(wx)
        dwh = np.zeros_like(wh)
        db = np.zeros(4 * hidden)
        dh_next = np.zeros((batch, hidden))
        dc_next = np.zeros((batch, hidden))
        dz = np.empty((batch, 4 * hidden))
        for t in range(steps - 1, -1, -1):
            gi = gates[t, :, :hidden]
            gf = gates[t, :, hidden : 2 * hidden]
            gg = gates[t, :, 2 * hidden : 3 * hidden]
            go = gates[t, :, 3 * hidden :]
            tc = np.tanh(c[t])
            dh = dh_out[t] + dh_next
            dc = dh * go * (1.0 - tc * tc) + dc_next
            if t > 0:
                c_prev = c[t - 1]
                h_prev = h[t - 1]
            else:
                c_prev = c0
                h_prev = h0
            dz[:, :hidden] = dc * gg * gi * (1.0 - gi)
            dz[:, hidden : 2 * hidden] = dc * c_prev * gf * (1.0 - gf)
            dz[:, 2 * hidden : 3 * hidden] = dc * gi * (1.0 - gg * gg)
            dz[:, 3 * hidden :] = dh * tc * go * (1.0 - go)
            dwx += np.dot(x[t].T, dz)
            dwh += np.dot(h_prev.T, dz)
            db += dz.sum(axis=0)
            dx[t] = np.dot(dz, wx.T)
            dh_next = np.dot(dz, wh.T)
            dc_next = dc * gf
        return dx, dwx, dwh, db

    @njit(cache=True)
    def levenshtein_numba(a, b):  # noqa: F811
        m, n = len(a), len(b)
        prev = np.arange(n + 1, dtype=np.int64)
        curr = np.empty(n + 1, dtype=np.int64)
        for i in range(1, m + 1):
            curr[0] = i
            for j in range(1, n + 1):
                cost = 0 if a[i - 1] == b[j - 1] else 1
                best = prev[j] + 1
                if curr[j - 1] + 1 < best:
                    best = curr[j - 1] + 1
                if prev[j - 1] + cost < best:
                    best = prev[j - 1] + cost
                curr[j] = best
            tmp = prev
            prev = curr
            curr = tmp
        return prev[n]

except ImportError:  # pragma: no cover - exercised on numba-free installs
    pass


def _numba_wanted() -> bool:
    flag = os.environ.get("SKELACT_NUMBA", "").strip().lower()
    return flag not in ("0", "off", "false", "no")


NUMBA_ENABLED = NUMBA_AVAILABLE and _numba_wanted()

if NUMBA_ENABLED:
    lstm_forward = lstm_forward_numba
    lstm_backward = lstm_backward_numba

    def levenshtein(a, b) -> int:
        return int(
            levenshtein_numba(
                np.ascontiguousarray(a, dtype=np.int64),
                np.ascontiguousarray(b, dtype=np.int64),
            )
        )

else:
    lstm_forward = lstm_forward_numpy
    lstm_backward = lstm_backward_numpy

    def levenshtein(a, b) -> int:
        return levenshtein_numpy(
            np.ascontiguousarray(a, dtype=np.int64),
            np.ascontiguousarray(b, dtype=np.int64),
        )


def active_backend() -> str:
    return "numba" if NUMBA_ENABLED else "numpy"

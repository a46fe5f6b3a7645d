"""Kernel tests: the fused LSTM against a hand recurrence, the edit
distance against a textbook dynamic program, and backend agreement."""

import math
import os
import subprocess
import sys

import numpy as np
import pytest

from skelact import kernels


def _hand_lstm(x, wx, wh, b, h0, c0):
    """Direct per-gate recurrence with python floats; the slow but obvious
    second route to the same numbers."""
    T, B, F = x.shape
    H = h0.shape[1]
    h = h0.copy()
    c = c0.copy()
    hs = []
    sig = lambda v: 1.0 / (1.0 + math.exp(-v))
    for t in range(T):
        z = x[t] @ wx + h @ wh + b
        i = np.vectorize(sig)(z[:, 0 * H : 1 * H])
        f = np.vectorize(sig)(z[:, 1 * H : 2 * H])
        g = np.tanh(z[:, 2 * H : 3 * H])
        o = np.vectorize(sig)(z[:, 3 * H : 4 * H])
        c = f * c + i * g
        h = o * np.tanh(c)
        hs.append(h.copy())
    return np.stack(hs)


def test_forward_matches_hand_recurrence():
    rng = np.random.default_rng(0)
    T, B, F, H = 3, 2, 4, 3
    x = rng.normal(size=(T, B, F))
    wx = rng.normal(size=(F, 4 * H))
    wh = rng.normal(size=(H, 4 * H))
    b = rng.normal(size=4 * H)
    h0 = np.zeros((B, H))
    c0 = np.zeros((B, H))
    h, _, _ = kernels.lstm_forward_numpy(x, wx, wh, b, h0, c0)
    assert np.allclose(h, _hand_lstm(x, wx, wh, b, h0, c0), atol=1e-12)


def test_forward_with_nonzero_initial_state():
    rng = np.random.default_rng(1)
    T, B, F, H = 4, 3, 2, 5
    x = rng.normal(size=(T, B, F))
    wx = rng.normal(size=(F, 4 * H))
    wh = rng.normal(size=(H, 4 * H))
    b = rng.normal(size=4 * H)
    h0 = rng.normal(size=(B, H))
    c0 = rng.normal(size=(B, H))
    h, _, _ = kernels.lstm_forward_numpy(x, wx, wh, b, h0, c0)
    assert np.allclose(h, _hand_lstm(x, wx, wh, b, h0, c0), atol=1e-12)


def _levenshtein_oracle(a, b):
    """Full-matrix textbook dynamic program."""
    n, m = len(a), len(b)
    d = np.zeros((n + 1, m + 1), dtype=int)
    d[:, 0] = np.arange(n + 1)
    d[0, :] = np.arange(m + 1)
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            cost = 0 if a[i - 1] == b[j - 1] else 1
            d[i, j] = min(d[i - 1, j] + 1, d[i, j - 1] + 1, d[i - 1, j - 1] + cost)
    return int(d[n, m])


def test_levenshtein_matches_textbook_dp():
    rng = np.random.default_rng(2)
    for _ in range(300):
        a = rng.integers(0, 4, size=rng.integers(0, 12)).astype(np.int64)
        b = rng.integers(0, 4, size=rng.integers(0, 12)).astype(np.int64)
        assert kernels.levenshtein(a, b) == _levenshtein_oracle(a, b)


def test_levenshtein_known_values():
    lev = kernels.levenshtein
    assert lev(np.array([], dtype=np.int64), np.array([1, 2], dtype=np.int64)) == 2
    assert lev(np.array([1, 2, 1], dtype=np.int64), np.array([1, 1], dtype=np.int64)) == 1
    assert lev(np.array([1, 2, 3], dtype=np.int64), np.array([1, 2, 3], dtype=np.int64)) == 0


@pytest.mark.skipif(not kernels.NUMBA_AVAILABLE, reason="numba not installed")
def test_backends_agree_bit_for_bit():
    rng = np.random.default_rng(3)
    T, B, F, H = 6, 4, 8, 5
    x = np.ascontiguousarray(rng.normal(size=(T, B, F)))
    wx = rng.normal(size=(F, 4 * H))
    wh = rng.normal(size=(H, 4 * H))
    b = rng.normal(size=4 * H)
    h0 = rng.normal(size=(B, H))
    c0 = rng.normal(size=(B, H))
    dh = rng.normal(size=(T, B, H))

    h1, c1, g1 = kernels.lstm_forward_numpy(x, wx, wh, b, h0, c0)
    h2, c2, g2 = kernels.lstm_forward_numba(x, wx, wh, b, h0, c0)
    assert np.allclose(h1, h2, atol=1e-12) and np.allclose(c1, c2, atol=1e-12)

    out1 = kernels.lstm_backward_numpy(x, wx, wh, h1, c1, g1, h0, c0, dh)
    out2 = kernels.lstm_backward_numba(x, wx, wh, h2, c2, g2, h0, c0, dh)
    for a, b_ in zip(out1, out2):
        assert np.allclose(a, b_, atol=1e-10)

    s = rng.integers(0, 5, size=40).astype(np.int64)
    t = rng.integers(0, 5, size=37).astype(np.int64)
    assert kernels.levenshtein_numpy(s, t) == kernels.levenshtein_numba(s, t)


def test_env_flag_disables_compiled_backend():
    env = dict(os.environ, SKELACT_NUMBA="0")
    out = subprocess.run(
        [sys.executable, "-c", "from skelact import kernels; print(kernels.active_backend())"],
        capture_output=True, text=True, env=env,
    )
    assert out.returncode == 0, out.stderr
    assert out.stdout.strip() == "numpy"

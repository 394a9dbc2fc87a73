"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The numba path is used when numba imports cleanly and the environment
variable ``SONAR_LLM_NUMBA`` is not set to ``0``.  Both paths expose the
same functions with identical signatures; ``BACKEND`` names the active one.
"""

from __future__ import annotations

import os

import numpy as np

_FLAG = os.environ.get("SONAR_LLM_NUMBA", "1").strip().lower()
_WANT_NUMBA = _FLAG not in ("0", "false", "no", "off")

try:
    if not _WANT_NUMBA:
        raise ImportError("numba disabled by SONAR_LLM_NUMBA")
    from numba import njit
    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False


# ---------------------------------------------------------------------------
# numpy reference implementations
# ---------------------------------------------------------------------------

def _lcs_length_np(a, b):
    n, m = len(a), len(b)
    if n == 0 or m == 0:
        return 0
    prev = np.zeros(m + 1, dtype=np.int64)
    eq = a[:, None] == b[None, :]
    for i in range(n):
        cur = np.zeros(m + 1, dtype=np.int64)
        row = eq[i]
        for j in range(m):
            if row[j]:
                cur[j + 1] = prev[j] + 1
            else:
                cur[j + 1] = max(prev[j + 1], cur[j])
        prev = cur
    return int(prev[m])


def _rms_norm_fwd_np(x, gain, eps):
    ms = np.mean(x * x, axis=1)
    inv = 1.0 / np.sqrt(ms + eps)
    return x * inv[:, None] * gain[None, :], inv


def _rms_norm_bwd_np(x, gain, inv, gy):
    d = x.shape[1]
    xhat = x * inv[:, None]
    ggain = np.sum(gy * xhat, axis=0)
    gxhat = gy * gain[None, :]
    dot = np.sum(gxhat * xhat, axis=1)
    gx = inv[:, None] * (gxhat - xhat * (dot / d)[:, None])
    return gx, ggain


def _softmax_rows_np(x):
    z = x - np.max(x, axis=1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=1, keepdims=True)


def _log_softmax_rows_np(x):
    # log1p over the non-max terms keeps confident rows accurate
    top = np.argmax(x, axis=1)
    rows = np.arange(x.shape[0])
    z = x - x[rows, top][:, None]
    e = np.exp(z)
    e[rows, top] = 0.0
    return z - np.log1p(np.sum(e, axis=1, keepdims=True))


def _arith_step_sum_np(base, slope, n_steps):
    s = np.arange(1, n_steps + 1, dtype=np.int64)
    return int(np.sum(base + slope * s))


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if HAS_NUMBA:

    @njit(cache=True)
    def _lcs_length_nb(a, b):
        n = a.shape[0]
        m = b.shape[0]
        if n == 0 or m == 0:
            return 0
        prev = np.zeros(m + 1, dtype=np.int64)
        cur = np.zeros(m + 1, dtype=np.int64)
        for i in range(n):
            cur[0] = 0
            for j in range(m):
                if a[i] == b[j]:
                    cur[j + 1] = prev[j] + 1
                elif prev[j + 1] >= cur[j]:
                    cur[j + 1] = prev[j + 1]
                else:
                    cur[j + 1] = cur[j]
            for j in range(m + 1):
                prev[j] = cur[j]
        return prev[m]

    @njit(cache=True)
    def _rms_norm_fwd_nb(x, gain, eps):
        n, d = x.shape
        y = np.empty_like(x)
        inv = np.empty(n)
        for i in range(n):
            acc = 0.0
            for j in range(d):
                acc += x[i, j] * x[i, j]
            r = 1.0 / np.sqrt(acc / d + eps)
            inv[i] = r
            for j in range(d):
                y[i, j] = x[i, j] * r * gain[j]
        return y, inv

    @njit(cache=True)
    def _rms_norm_bwd_nb(x, gain, inv, gy):
        n, d = x.shape
        gx = np.empty_like(x)
        ggain = np.zeros(d)
        for i in range(n):
            r = inv[i]
            dot = 0.0
            for j in range(d):
                xh = x[i, j] * r
                ggain[j] += gy[i, j] * xh
                dot += gy[i, j] * gain[j] * xh
            dot /= d
            for j in range(d):
                xh = x[i, j] * r
                gx[i, j] = r * (gy[i, j] * gain[j] - xh * dot)
        return gx, ggain

    @njit(cache=True)
    def _softmax_rows_nb(x):
        n, k = x.shape
        out = np.empty_like(x)
        for i in range(n):
            m = x[i, 0]
            for j in range(1, k):
                if x[i, j] > m:
                    m = x[i, j]
            s = 0.0
            for j in range(k):
                e = np.exp(x[i, j] - m)
                out[i, j] = e
                s += e
            for j in range(k):
                out[i, j] /= s
        return out

    @njit(cache=True)
    def _log_softmax_rows_nb(x):
        n, k = x.shape
        out = np.empty_like(x)
        for i in range(n):
            top = 0
            for j in range(1, k):
                if x[i, j] > x[i, top]:
                    top = j
            m = x[i, top]
            s = 0.0
            for j in range(k):
                if j != top:
                    s += np.exp(x[i, j] - m)
            ls = np.log1p(s)
            for j in range(k):
                out[i, j] = x[i, j] - m - ls
        return out

    @njit(cache=True)
    def _arith_step_sum_nb(base, slope, n_steps):
        total = np.int64(0)
        for s in range(1, n_steps + 1):
            total += base + slope * s
        return total


def _as_f64_2d(x):
    return np.ascontiguousarray(x, dtype=np.float64)


if HAS_NUMBA:
    BACKEND = "numba"

    def lcs_length(a, b) -> int:
        return int(_lcs_length_nb(np.asarray(a, dtype=np.int64), np.asarray(b, dtype=np.int64)))

    def rms_norm_fwd(x, gain, eps):
        return _rms_norm_fwd_nb(_as_f64_2d(x), _as_f64_2d(gain), float(eps))

    def rms_norm_bwd(x, gain, inv, gy):
        return _rms_norm_bwd_nb(_as_f64_2d(x), _as_f64_2d(gain), _as_f64_2d(inv), _as_f64_2d(gy))

    def softmax_rows(x):
        return _softmax_rows_nb(_as_f64_2d(x))

    def log_softmax_rows(x):
        return _log_softmax_rows_nb(_as_f64_2d(x))

    def arith_step_sum(base: int, slope: int, n_steps: int) -> int:
        return int(_arith_step_sum_nb(np.int64(base), np.int64(slope), np.int64(n_steps)))

else:
    BACKEND = "numpy"

    def lcs_length(a, b) -> int:
        return _lcs_length_np(np.asarray(a, dtype=np.int64), np.asarray(b, dtype=np.int64))

    def rms_norm_fwd(x, gain, eps):
        return _rms_norm_fwd_np(_as_f64_2d(x), _as_f64_2d(gain), float(eps))

    def rms_norm_bwd(x, gain, inv, gy):
        return _rms_norm_bwd_np(_as_f64_2d(x), _as_f64_2d(gain), _as_f64_2d(inv), _as_f64_2d(gy))

    def softmax_rows(x):
        return _softmax_rows_np(_as_f64_2d(x))

    def log_softmax_rows(x):
        return _log_softmax_rows_np(_as_f64_2d(x))

    def arith_step_sum(base: int, slope: int, n_steps: int) -> int:
        return _arith_step_sum_np(base, slope, n_steps)


# Reference implementations stay importable regardless of the active backend
# so tests and the benchmark can compare the two paths.
numpy_impl = {
    "lcs_length": lambda a, b: _lcs_length_np(np.asarray(a, dtype=np.int64), np.asarray(b, dtype=np.int64)),
    "rms_norm_fwd": lambda x, g, eps: _rms_norm_fwd_np(_as_f64_2d(x), _as_f64_2d(g), float(eps)),
    "rms_norm_bwd": lambda x, g, inv, gy: _rms_norm_bwd_np(_as_f64_2d(x), _as_f64_2d(g), _as_f64_2d(inv), _as_f64_2d(gy)),
    "softmax_rows": lambda x: _softmax_rows_np(_as_f64_2d(x)),
    "log_softmax_rows": lambda x: _log_softmax_rows_np(_as_f64_2d(x)),
    "arith_step_sum": _arith_step_sum_np,
}

"""Numba-accelerated inner kernels with pure-numpy fallbacks.

The two hot loops of the package live here: assembly of the trapezoidal
Abel weight matrix (O(n^2)) and the weakly-singular inner quadrature used
by the kernel diagnostics (O(samples * quadrature nodes)).  Everything
else in the package is LAPACK/BLAS-bound and gains nothing from JIT.

Path selection: the environment variable ABELSCALE_NUMBA controls which
implementation is used.  "0"/"false"/"off" forces the numpy fallback,
"1"/"true"/"on" requires numba (ImportError propagates), anything else
(default) uses numba when importable.  ``benchmarks/bench_accel.py``
compares both paths.
"""

from __future__ import annotations

import os

import numpy as np


def _resolve_numba_flag() -> bool:
    flag = os.environ.get("ABELSCALE_NUMBA", "auto").strip().lower()
    if flag in ("0", "false", "off", "no"):
        return False
    if flag in ("1", "true", "on", "yes"):
        from numba import njit  # noqa: F401  -- fail loudly if forced on

        return True
    try:
        from numba import njit  # noqa: F401
    except ImportError:
        return False
    return True


USING_NUMBA = _resolve_numba_flag()


# ---------------------------------------------------------------------------
# Abel weight matrix.
#
# Unscaled trapezoid weights w[i, j] for the kernel-free operator; the
# caller multiplies by dt^a / (2a) and by kernel node values.
#   w[i, j] = (i-j+1)^a - (i-j-1)^a   for 0 < j < i
#   w[i, 0] = i^a - (i-1)^a           for i > 0
#   w[i, i] = 1                       for i > 0
#   w[0, :] = 0 and w[i, j] = 0 for j > i
# ---------------------------------------------------------------------------


def _abel_weights_numpy(n: int, a: float) -> np.ndarray:
    d = np.arange(n, dtype=np.float64)
    band = np.empty(n)
    band[0] = 1.0
    if n > 1:
        band[1:] = (d[1:] + 1.0) ** a - (d[1:] - 1.0) ** a
    w = np.zeros((n, n))
    for off in range(n):
        np.fill_diagonal(w[off:, : n - off], band[off])
    if n > 1:
        w[1:, 0] = d[1:] ** a - (d[1:] - 1.0) ** a
    w[0, :] = 0.0
    return w


def _make_abel_weights_numba():
    from numba import njit

    @njit(cache=True)
    def _abel_weights_numba(n, a):  # pragma: no cover - compiled
        band = np.empty(n)
        band[0] = 1.0
        for d in range(1, n):
            band[d] = (d + 1.0) ** a - (d - 1.0) ** a
        w = np.zeros((n, n))
        for i in range(1, n):
            w[i, 0] = i**a - (i - 1.0) ** a
            for j in range(1, i):
                w[i, j] = band[i - j]
            w[i, i] = 1.0
        return w

    return _abel_weights_numba


# ---------------------------------------------------------------------------
# Weakly singular inner quadrature for the residual-kernel diagnostics.
#
# For one row t and an array of sample points s < t, approximate
#     I(s) = int_s^t (tau - s)^(-eps) * F(t, tau) dtau
# where F is represented as sum_m smooth[m](tau) * (t - tau)^(pw[m]) and
# smooth[m] is tabulated on the uniform grid tau_k = k * h_tab.  The
# substitution tau = s + u^(1/(1-eps)) removes the (tau-s)^(-eps) factor;
# trapezoid in u.  Quadrature nodes are clipped to tau <= t - tau_cut so
# the (t - tau)^pw factors stay finite for pw < 0.
# ---------------------------------------------------------------------------


def _inner_quadrature_numpy(s_arr, t, eps, smooth, h_tab, powers, n_u, tau_cut):
    one_m = 1.0 - eps
    n_s = s_arr.shape[0]
    out = np.zeros(n_s)
    n_tab = smooth.shape[1]
    u_frac = np.linspace(0.0, 1.0, n_u)
    for idx in range(n_s):
        s = s_arr[idx]
        span = t - s
        if span <= tau_cut:
            out[idx] = np.nan
            continue
        u_max = span**one_m
        u = u_frac * u_max
        tau = s + u ** (1.0 / one_m)
        np.clip(tau, s, t - tau_cut, out=tau)
        pos = tau / h_tab
        k = np.minimum(pos.astype(np.int64), n_tab - 2)
        frac = pos - k
        f = np.zeros_like(tau)
        for m in range(smooth.shape[0]):
            sm = smooth[m, k] * (1.0 - frac) + smooth[m, k + 1] * frac
            f += sm * (t - tau) ** powers[m]
        out[idx] = np.trapezoid(f, u) / one_m
    return out


def _make_inner_quadrature_numba():
    from numba import njit

    @njit(cache=True)
    def _inner_quadrature_numba(
        s_arr, t, eps, smooth, h_tab, powers, n_u, tau_cut
    ):  # pragma: no cover - compiled
        one_m = 1.0 - eps
        n_s = s_arr.shape[0]
        n_m = smooth.shape[0]
        n_tab = smooth.shape[1]
        out = np.zeros(n_s)
        for idx in range(n_s):
            s = s_arr[idx]
            span = t - s
            if span <= tau_cut:
                out[idx] = np.nan
                continue
            u_max = span**one_m
            du = u_max / (n_u - 1.0)
            acc = 0.0
            for l in range(n_u):
                u = du * l
                tau = s + u ** (1.0 / one_m)
                if tau > t - tau_cut:
                    tau = t - tau_cut
                pos = tau / h_tab
                k = int(pos)
                if k > n_tab - 2:
                    k = n_tab - 2
                frac = pos - k
                f = 0.0
                for m in range(n_m):
                    sm = smooth[m, k] * (1.0 - frac) + smooth[m, k + 1] * frac
                    f += sm * (t - tau) ** powers[m]
                if l == 0 or l == n_u - 1:
                    acc += 0.5 * f
                else:
                    acc += f
            out[idx] = acc * du / one_m
        return out

    return _inner_quadrature_numba


if USING_NUMBA:
    abel_weights = _make_abel_weights_numba()
    inner_quadrature = _make_inner_quadrature_numba()
else:
    abel_weights = _abel_weights_numpy
    inner_quadrature = _inner_quadrature_numpy

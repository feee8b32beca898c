"""
Grid kernels: tridiagonal solves, Crank-Nicolson stepping and the
symmetric tridiagonal eigenproblem.

Two backends share one interface.  The compiled backend uses numba; the
reference backend uses scipy's banded solver and ``eigh_tridiagonal``.  Set
``CHRONOMECH_NO_NUMBA=1`` to force the reference backend (it is also used
when numba cannot be imported).
"""

from __future__ import annotations

import os

import numpy as np
from scipy.linalg import eigh_tridiagonal, solve_banded

ENV_FLAG = "CHRONOMECH_NO_NUMBA"

try:  # pragma: no cover - depends on the environment
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAVE_NUMBA = False


def numba_enabled() -> bool:
    return HAVE_NUMBA and os.environ.get(ENV_FLAG, "") not in ("1", "true", "yes")


def backend_name() -> str:
    return "numba" if numba_enabled() else "numpy"


# reference implementations ------------------------------------------------------------


def _solve_tridiagonal_ref(lower, diag, upper, rhs):
    n = len(diag)
    ab = np.zeros((3, n), dtype=np.result_type(lower, diag, upper, rhs))
    ab[0, 1:] = upper
    ab[1] = diag
    ab[2, :-1] = lower
    return solve_banded((1, 1), ab, rhs)


def _tri_matvec(lower, diag, upper, x):
    y = diag * x
    y[:-1] += upper * x[1:]
    y[1:] += lower * x[:-1]
    return y


def _cn_evolve_ref(lower, diag, upper, psi0, dt, hbar, steps, xs, h):
    c = 0.5j * dt / hbar
    a_l, a_d, a_u = c * lower, 1.0 + c * diag, c * upper
    b_l, b_d, b_u = -c * lower, 1.0 - c * diag, -c * upper
    n = len(diag)
    ab = np.zeros((3, n), dtype=complex)
    ab[0, 1:] = a_u
    ab[1] = a_d
    ab[2, :-1] = a_l
    psi = psi0.astype(complex).copy()
    conj0 = np.conj(psi0)
    norms = np.empty(steps + 1)
    overlaps = np.empty(steps + 1, dtype=complex)
    xmean = np.empty(steps + 1)
    for s in range(steps + 1):
        if s:
            psi = solve_banded((1, 1), ab, _tri_matvec(b_l, b_d, b_u, psi), check_finite=False)
        dens = np.abs(psi) ** 2
        norms[s] = h * dens.sum()
        overlaps[s] = h * (conj0 * psi).sum()
        xmean[s] = h * (xs * dens).sum() / norms[s]
    return psi, norms, overlaps, xmean


def _eigh_ref(diag, off, k):
    w, v = eigh_tridiagonal(diag, off, select="i", select_range=(0, k - 1))
    return w, v


# compiled implementations ------------------------------------------------------------------

if HAVE_NUMBA:

    @numba.njit(cache=True)
    def _thomas(lower, diag, upper, rhs):
        n = diag.shape[0]
        cp = np.empty(n, dtype=rhs.dtype)
        dp = np.empty(n, dtype=rhs.dtype)
        cp[0] = upper[0] / diag[0] if n > 1 else 0.0
        dp[0] = rhs[0] / diag[0]
        for i in range(1, n):
            m = diag[i] - lower[i - 1] * cp[i - 1]
            if m == 0:
                raise ZeroDivisionError("zero pivot in tridiagonal solve")
            if i < n - 1:
                cp[i] = upper[i] / m
            dp[i] = (rhs[i] - lower[i - 1] * dp[i - 1]) / m
        x = np.empty(n, dtype=rhs.dtype)
        x[n - 1] = dp[n - 1]
        for i in range(n - 2, -1, -1):
            x[i] = dp[i] - cp[i] * x[i + 1]
        return x

    @numba.njit(cache=True)
    def _cn_evolve_nb(lower, diag, upper, psi0, dt, hbar, steps, xs, h):
        n = diag.shape[0]
        c = 0.5j * dt / hbar
        # factor (1 + cH) once
        cp = np.empty(n, dtype=np.complex128)
        mp = np.empty(n, dtype=np.complex128)
        mp[0] = 1.0 + c * diag[0]
        cp[0] = c * upper[0] / mp[0] if n > 1 else 0.0
        for i in range(1, n):
            mp[i] = 1.0 + c * diag[i] - c * lower[i - 1] * cp[i - 1]
            if i < n - 1:
                cp[i] = c * upper[i] / mp[i]
        psi = psi0.astype(np.complex128).copy()
        rhs = np.empty(n, dtype=np.complex128)
        dp = np.empty(n, dtype=np.complex128)
        norms = np.empty(steps + 1)
        overlaps = np.empty(steps + 1, dtype=np.complex128)
        xmean = np.empty(steps + 1)
        for s in range(steps + 1):
            if s > 0:
                for i in range(n):
                    v = (1.0 - c * diag[i]) * psi[i]
                    if i > 0:
                        v -= c * lower[i - 1] * psi[i - 1]
                    if i < n - 1:
                        v -= c * upper[i] * psi[i + 1]
                    rhs[i] = v
                dp[0] = rhs[0] / mp[0]
                for i in range(1, n):
                    dp[i] = (rhs[i] - c * lower[i - 1] * dp[i - 1]) / mp[i]
                psi[n - 1] = dp[n - 1]
                for i in range(n - 2, -1, -1):
                    psi[i] = dp[i] - cp[i] * psi[i + 1]
            nrm = 0.0
            ov = 0.0 + 0.0j
            xm = 0.0
            for i in range(n):
                d = psi[i].real ** 2 + psi[i].imag ** 2
                nrm += d
                xm += xs[i] * d
                ov += np.conj(psi0[i]) * psi[i]
            norms[s] = h * nrm
            overlaps[s] = h * ov
            xmean[s] = xm / nrm
        return psi, norms, overlaps, xmean

    @numba.njit(cache=True)
    def _sturm_count(diag, off, x):
        """Number of eigenvalues below ``x``."""
        count = 0
        q = diag[0] - x
        if q < 0:
            count += 1
        for i in range(1, diag.shape[0]):
            if q == 0:
                q = 1e-300
            q = diag[i] - x - off[i - 1] * off[i - 1] / q
            if q < 0:
                count += 1
        return count

    @numba.njit(cache=True)
    def _eigh_nb(diag, off, k):
        n = diag.shape[0]
        # Gershgorin bounds
        lo = diag[0] - abs(off[0])
        hi = diag[0] + abs(off[0])
        for i in range(n):
            r = 0.0
            if i > 0:
                r += abs(off[i - 1])
            if i < n - 1:
                r += abs(off[i])
            lo = min(lo, diag[i] - r)
            hi = max(hi, diag[i] + r)
        span = hi - lo
        lo -= 1e-12 * span + 1e-300
        hi += 1e-12 * span + 1e-300
        w = np.empty(k)
        for j in range(k):
            a, b = lo, hi
            for _ in range(200):
                mid = 0.5 * (a + b)
                if mid == a or mid == b:
                    break
                if _sturm_count(diag, off, mid) > j:
                    b = mid
                else:
                    a = mid
            w[j] = 0.5 * (a + b)
        v = np.empty((k, n))
        low = off.copy()
        for j in range(k):
            shift = w[j] + 1e-10 * max(abs(w[j]), 1.0) * (1.0 + 1e-3 * j)
            d = diag - shift
            x = np.ones(n) / np.sqrt(n)
            for i in range(n):
                x[i] += 1e-3 * ((i * 7919 + j * 104729) % 1000) / 1000.0
            for _ in range(6):
                x = _thomas(low, d, low, x)
                for p in range(j):  # deflate earlier (possibly close) vectors
                    x -= (v[p] @ x) * v[p]
                x /= np.sqrt(x @ x)
            v[j] = x
        return w, v.T.copy()


# dispatch --------------------------------------------------------------------------------


def solve_tridiagonal(lower, diag, upper, rhs):
    """Solve ``A x = rhs`` for the tridiagonal ``A`` given by its three bands."""
    lower, diag, upper = (np.asarray(a) for a in (lower, diag, upper))
    dtype = np.result_type(lower, diag, upper, rhs, np.float64)
    args = [np.ascontiguousarray(a, dtype=dtype) for a in (lower, diag, upper, rhs)]
    if numba_enabled():
        return _thomas(*args)
    return _solve_tridiagonal_ref(*args)


def cn_evolve(lower, diag, upper, psi0, dt, hbar, steps, xs, h):
    """Crank-Nicolson evolution; returns ``(psi, norms, overlaps, xmean)`` per step."""
    lower = np.ascontiguousarray(lower, dtype=complex)
    diag = np.ascontiguousarray(diag, dtype=complex)
    upper = np.ascontiguousarray(upper, dtype=complex)
    psi0 = np.ascontiguousarray(psi0, dtype=complex)
    xs = np.ascontiguousarray(xs, dtype=float)
    if numba_enabled():
        return _cn_evolve_nb(lower, diag, upper, psi0, float(dt), float(hbar), int(steps), xs, float(h))
    return _cn_evolve_ref(lower, diag, upper, psi0, float(dt), float(hbar), int(steps), xs, float(h))


def eigh_lowest(diag, off, k):
    """``k`` lowest eigenpairs of the real symmetric tridiagonal matrix."""
    diag = np.ascontiguousarray(diag, dtype=float)
    off = np.ascontiguousarray(off, dtype=float)
    if numba_enabled():
        return _eigh_nb(diag, off, int(k))
    return _eigh_ref(diag, off, int(k))

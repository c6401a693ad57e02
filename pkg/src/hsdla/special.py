"""Legendre polynomials, spherical Bessel functions, spherical harmonics, Gaunt
coefficients.

All evaluations are recurrence-based.  Spherical harmonics use the
Condon-Shortley phase convention and orthonormal normalization; Gaunt
coefficients are produced by a Gauss-Legendre x trapezoid product quadrature
that is exact (up to rounding) for the polynomial integrands involved.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from numpy.polynomial.legendre import leggauss

from .errors import ContractViolationError

GAUNT_L_MAX = 12


def legendre_all(l_max: int, x) -> np.ndarray:
    """P_0(x) .. P_{l_max}(x) by the three-term recurrence.

    ``x`` may be a scalar or array with |x| <= 1 + 1e-12; values are clamped
    to [-1, 1].  Returns an array of shape (l_max + 1, *x.shape).
    """
    x = np.asarray(x, dtype=np.float64)
    if np.any(np.abs(x) > 1.0 + 1e-12):
        raise ContractViolationError("Legendre argument outside [-1, 1] beyond tolerance")
    x = np.clip(x, -1.0, 1.0)
    out = np.zeros((l_max + 1,) + x.shape)
    out[0] = 1.0
    if l_max >= 1:
        out[1] = x
    for l in range(1, l_max):
        out[l + 1] = ((2 * l + 1) * x * out[l] - l * out[l - 1]) / (l + 1)
    return out


def _double_factorial(n: int) -> float:
    r = 1.0
    while n > 1:
        r *= n
        n -= 2
    return r


def _bessel_series(l_max: int, x: float) -> np.ndarray:
    # j_l(x) = x^l / (2l+1)!! * sum_k (-x^2/2)^k / (k! (2l+3)(2l+5)...(2l+2k+1))
    j = np.zeros(l_max + 1)
    x2h = 0.5 * x * x
    for l in range(l_max + 1):
        term = x**l / _double_factorial(2 * l + 1)
        total = term
        k = 1
        while True:
            term *= -x2h / (k * (2 * l + 2 * k + 1))
            total += term
            if abs(term) <= 1e-18 * max(abs(total), 1e-300) or k > 60:
                break
            k += 1
        j[l] = total
    return j


def _bessel_upward(l_max: int, x: float) -> np.ndarray:
    j = np.zeros(l_max + 1)
    j[0] = np.sin(x) / x
    if l_max >= 1:
        j[1] = np.sin(x) / x**2 - np.cos(x) / x
    for l in range(1, l_max):
        j[l + 1] = (2 * l + 1) / x * j[l] - j[l - 1]
    return j


def _bessel_downward(l_max: int, x: float) -> np.ndarray:
    start = l_max + max(16, int(x)) + int(2.0 * np.sqrt(l_max + 1))
    jp1 = 0.0
    jl = 1e-30
    scratch = np.zeros(l_max + 1)
    for l in range(start, 0, -1):
        jm1 = (2 * l + 1) / x * jl - jp1
        jp1 = jl
        jl = jm1
        if abs(jl) > 1e250:  # rescale to dodge overflow
            jl *= 1e-250
            jp1 *= 1e-250
            scratch[min(l, l_max):] *= 1e-250
        if l - 1 <= l_max:
            scratch[l - 1] = jl
    j0 = np.sin(x) / x
    j1 = np.sin(x) / x**2 - np.cos(x) / x
    # Normalize against whichever reference value is better conditioned.
    if abs(j0) >= abs(j1) and scratch[0] != 0:
        scale = j0 / scratch[0]
    elif l_max >= 1 and scratch[1] != 0:
        scale = j1 / scratch[1]
    else:
        scale = j0 / scratch[0]
    return scratch * scale


def spherical_bessel_all(l_max: int, x: float):
    """Values and derivatives of j_0 .. j_{l_max} at x >= 0.

    Series evaluation below x = 0.5, downward (Miller) recurrence up to the
    turning point, upward recurrence beyond it; derivatives via
    j_l' = j_{l-1} - (l+1)/x * j_l with the exact limits at x = 0.
    """
    if x < 0:
        raise ContractViolationError("spherical Bessel argument must be >= 0")
    n = l_max + 2  # one extra order so j'_{l_max} is available
    if x == 0.0:
        j = np.zeros(n)
        j[0] = 1.0
        jp = np.zeros(l_max + 1)
        if l_max >= 1:
            jp[1] = 1.0 / 3.0
        return j[: l_max + 1], jp
    if x < 0.5:
        j = _bessel_series(n - 1, x)
    elif x >= n - 1:
        j = _bessel_upward(n - 1, x)
    else:
        j = _bessel_downward(n - 1, x)
    jp = np.zeros(l_max + 1)
    jp[0] = -j[1]
    for l in range(1, l_max + 1):
        jp[l] = j[l - 1] - (l + 1) / x * j[l]
    return j[: l_max + 1], jp


def lm_index(l: int, m: int) -> int:
    """Row index of (l, m) in the compound ordering l^2 + l + m."""
    return l * l + l + m


def spherical_harmonics_all(l_max: int, directions) -> np.ndarray:
    """All Y_{l,m} up to l_max on unit direction(s): shape ((l_max+1)^2, npts).

    Condon-Shortley phase; rows ordered by ``lm_index``.  Directions must be
    unit vectors to within 1e-10.
    """
    d = np.atleast_2d(np.asarray(directions, dtype=np.float64))
    if d.shape[1] != 3:
        raise ContractViolationError("directions must be 3-vectors")
    norms = np.linalg.norm(d, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-10):
        raise ContractViolationError("directions must be unit vectors")
    npts = d.shape[0]
    ct = np.clip(d[:, 2], -1.0, 1.0)
    st = np.sqrt(np.maximum(0.0, 1.0 - ct * ct))
    phi = np.arctan2(d[:, 1], d[:, 0])

    n_l = (l_max + 1) ** 2
    out = np.zeros((n_l, npts), dtype=np.complex128)
    # Normalized associated Legendre values, sectoral seed then upward in l.
    p = np.zeros((l_max + 1, l_max + 1, npts))
    p[0, 0] = 1.0 / np.sqrt(4.0 * np.pi)
    for m in range(1, l_max + 1):
        p[m, m] = -np.sqrt((2 * m + 1) / (2.0 * m)) * st * p[m - 1, m - 1]
    for m in range(l_max):
        p[m + 1, m] = np.sqrt(2 * m + 3.0) * ct * p[m, m]
    for m in range(l_max + 1):
        for l in range(m + 2, l_max + 1):
            a = np.sqrt((4.0 * l * l - 1.0) / (l * l - m * m))
            b = np.sqrt(((l - 1.0) ** 2 - m * m) / (4.0 * (l - 1.0) ** 2 - 1.0))
            p[l, m] = a * (ct * p[l - 1, m] - b * p[l - 2, m])

    expphi = np.exp(1j * phi)
    for m in range(l_max + 1):
        e = expphi**m
        for l in range(m, l_max + 1):
            y = p[l, m] * e
            out[lm_index(l, m)] = y
            if m:
                out[lm_index(l, -m)] = (-1) ** m * np.conj(y)
    return out


def spherical_harmonic(l: int, m: int, direction) -> complex:
    """Single Y_{l,m} at one unit direction."""
    if l < 0 or abs(m) > l:
        raise ContractViolationError(f"invalid (l, m) = ({l}, {m})")
    return complex(spherical_harmonics_all(l, direction)[lm_index(l, m), 0])


@lru_cache(maxsize=8)
def _quadrature_grid(l_max: int, refine: int = 1):
    """Product grid exact for triple products of harmonics up to l_max."""
    n_theta = refine * (2 * l_max + 1)
    n_phi = refine * (4 * l_max + 1)
    ct, wt = leggauss(n_theta)
    phi = np.arange(n_phi) * (2.0 * np.pi / n_phi)
    ct_g = np.repeat(ct, n_phi)
    phi_g = np.tile(phi, n_theta)
    w = np.repeat(wt, n_phi) * (2.0 * np.pi / n_phi)
    st_g = np.sqrt(np.maximum(0.0, 1.0 - ct_g * ct_g))
    dirs = np.stack([st_g * np.cos(phi_g), st_g * np.sin(phi_g), ct_g], axis=1)
    y = spherical_harmonics_all(l_max, dirs)
    return y, w


def gaunt(lp_mp, l_m, lpp_mpp, refine: int = 1) -> complex:
    """Integral of conj(Y_{l',m'}) Y_{l,m} Y_{l'',m''} over the unit sphere.

    ``refine`` multiplies the quadrature resolution (used by tests to build an
    independent higher-resolution oracle).
    """
    lp, mp = lp_mp
    l, m = l_m
    lpp, mpp = lpp_mpp
    l_max = max(lp, l, lpp)
    if l_max > GAUNT_L_MAX:
        raise ContractViolationError(f"gaunt supports l <= {GAUNT_L_MAX}")
    for ll, mm in ((lp, mp), (l, m), (lpp, mpp)):
        if ll < 0 or abs(mm) > ll:
            raise ContractViolationError(f"invalid (l, m) = ({ll}, {mm})")
    y, w = _quadrature_grid(l_max, refine)
    val = np.sum(
        w * np.conj(y[lm_index(lp, mp)]) * y[lm_index(l, m)] * y[lm_index(lpp, mpp)]
    )
    return complex(val)


def gaunt_tensor(l_row_max: int, l_pot_max: int) -> np.ndarray:
    """G[L', L, L''] = gaunt(L', L, L'') for all compound indices in range.

    Shape ((l_row_max+1)^2, (l_row_max+1)^2, (l_pot_max+1)^2).
    """
    l_max = max(l_row_max, l_pot_max)
    if l_max > GAUNT_L_MAX:
        raise ContractViolationError(f"gaunt supports l <= {GAUNT_L_MAX}")
    y, w = _quadrature_grid(l_max)
    n_row = (l_row_max + 1) ** 2
    n_pot = (l_pot_max + 1) ** 2
    y_row = y[:n_row]
    y_pot = y[:n_pot]
    out = np.zeros((n_row, n_row, n_pot), dtype=np.complex128)
    for i in range(n_row):
        weighted = w * np.conj(y_row[i])  # conj on the row (L') harmonic
        out[i] = (y_row * weighted) @ y_pot.T
    return out

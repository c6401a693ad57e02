"""Shared fixtures and independent entrywise oracles for the test suite.

The oracles here are deliberately plain Python triple loops so that they stay
independent of both kernel backends and of the numba-compiled reference
routines they are used to check.
"""

import numpy as np
import pytest

from hsdla import ComplexDense, get_backend


@pytest.fixture(params=["reference", "optimized"])
def backend(request):
    return get_backend(request.param, threads=1)


def rand_complex(rng, rows, cols):
    return rng.standard_normal((rows, cols)) + 1j * rng.standard_normal((rows, cols))


def rand_dense(rng, rows, cols) -> ComplexDense:
    return ComplexDense.from_array(rand_complex(rng, rows, cols))


def herk_oracle(a: np.ndarray) -> np.ndarray:
    """Entrywise C = A^H A by explicit triple loop."""
    m, n = a.shape
    c = np.zeros((n, n), dtype=complex)
    for i in range(n):
        for j in range(n):
            acc = 0j
            for k in range(m):
                acc += np.conj(a[k, i]) * a[k, j]
            c[i, j] = acc
    return c


def her2k_oracle(x: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Entrywise C = X^H B + B^H X by explicit triple loop."""
    m, n = x.shape
    c = np.zeros((n, n), dtype=complex)
    for i in range(n):
        for j in range(n):
            acc = 0j
            for k in range(m):
                acc += np.conj(x[k, i]) * b[k, j] + np.conj(b[k, i]) * x[k, j]
            c[i, j] = acc
    return c


def gemm_oracle(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Entrywise A @ B by explicit triple loop."""
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    c = np.zeros((m, n), dtype=complex)
    for i in range(m):
        for j in range(n):
            acc = 0j
            for p in range(k):
                acc += a[i, p] * b[p, j]
            c[i, j] = acc
    return c


def hermitian_from_lower(t: np.ndarray) -> np.ndarray:
    """Expand a lower-stored Hermitian matrix to its full form (real diagonal)."""
    full = np.tril(t) + np.tril(t, -1).conj().T
    np.fill_diagonal(full, full.diagonal().real)
    return full


def rel_fro(x: np.ndarray, y: np.ndarray) -> float:
    return np.linalg.norm(x - y) / max(np.linalg.norm(y), np.finfo(float).tiny)


def poison_upper(m: ComplexDense) -> ComplexDense:
    """Overwrite the strict upper triangle with NaN poison, in place."""
    arr = m.array
    iu = np.triu_indices(arr.shape[0], 1)
    arr[iu] = np.nan + 1j * np.nan
    return m

"""Level-3 kernel interface with FLOP accounting and two interchangeable backends.

``ReferenceKernels`` computes every update with blocked numpy loops and an
in-house Cholesky; ``OptimizedKernels`` delegates to the vendor-tuned BLAS and
LAPACK routines shipped with scipy.  Both honor the same contract:

* Hermitian updates touch only the lower triangle of the target and never read
  its strict upper triangle.
* Hermitian and triangular operands are read from the lower triangle only.
* Every call increments the ledger by the nominal operation budget.

The worker-thread count is a process-wide setting applied when a backend is
constructed; kernels may parallelize internally up to that limit.  No kernel
is re-entrant on the same output matrix.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import blas as _blas
from scipy.linalg import lapack as _lapack
from threadpoolctl import threadpool_limits

from .errors import ConfigurationError, ContractViolationError, NotHPDError
from .matrix import ComplexDense, FlopLedger, HermitianAccumulator, cholesky_flops

_BLOCK = 64

# Keep the active limiter referenced so the limit stays in force process-wide.
_ACTIVE_LIMIT = None


def set_thread_count(threads: int):
    """Cap the number of BLAS worker threads for the whole process."""
    global _ACTIVE_LIMIT
    if threads < 1:
        raise ConfigurationError(f"thread count must be >= 1, got {threads}")
    _ACTIVE_LIMIT = threadpool_limits(limits=int(threads))


def _check(cond: bool, msg: str):
    if not cond:
        raise ContractViolationError(msg)


class KernelBackend:
    """Shared contract: argument validation and FLOP accounting."""

    name = "abstract"

    def __init__(self, threads: int = 1):
        self.threads = int(threads)
        set_thread_count(self.threads)

    # -- Hermitian rank-k: lower(C) += A^H A ---------------------------------
    def hermitian_rank_k_update(self, c: HermitianAccumulator, a: ComplexDense,
                                ledger: FlopLedger) -> HermitianAccumulator:
        m, n = a.rows, a.cols
        _check(c.n == n, f"rank-k shapes: C is {c.n}x{c.n}, A is {m}x{n}")
        if m and n:
            self._herk(c.matrix.array, a.array)
        ledger.add("hermitian_rank_k", 4 * m * n * n)
        return c

    # -- Hermitian rank-2k: lower(C) += X^H B + B^H X -------------------------
    def hermitian_rank_2k_update(self, c: HermitianAccumulator, x: ComplexDense,
                                 b: ComplexDense, ledger: FlopLedger) -> HermitianAccumulator:
        _check(x.shape == b.shape, f"rank-2k needs same shapes, got {x.shape} vs {b.shape}")
        m, n = x.rows, x.cols
        _check(c.n == n, f"rank-2k shapes: C is {c.n}x{c.n}, X is {m}x{n}")
        if m and n:
            self._her2k(c.matrix.array, x.array, b.array)
        ledger.add("hermitian_rank_2k", 8 * m * n * n)
        return c

    # -- General product: C = alpha op(A) B + beta C --------------------------
    def general_product(self, c: ComplexDense, a: ComplexDense, b: ComplexDense,
                        conj_transpose_a: bool, alpha: complex, beta: complex,
                        ledger: FlopLedger) -> ComplexDense:
        m_op = a.cols if conj_transpose_a else a.rows
        k_op = a.rows if conj_transpose_a else a.cols
        _check(k_op == b.rows, f"inner dimensions differ: op(A) has {k_op}, B has {b.rows}")
        _check((c.rows, c.cols) == (m_op, b.cols),
               f"C is {c.shape}, product is {(m_op, b.cols)}")
        if m_op and b.cols:
            self._gemm(c.array, a.array, b.array, conj_transpose_a,
                       complex(alpha), complex(beta))
        ledger.add("general_product", 8 * m_op * b.cols * k_op)
        return c

    # -- Hermitian product: X = alpha T A (+ X) -------------------------------
    def hermitian_product(self, x: ComplexDense, t: ComplexDense, a: ComplexDense,
                          accumulate: bool, alpha: complex,
                          ledger: FlopLedger) -> ComplexDense:
        _check(t.rows == t.cols, f"T must be square, got {t.shape}")
        n = t.rows
        _check(a.rows == n, f"A has {a.rows} rows, T is {n}x{n}")
        _check(x.shape == (n, a.cols), f"X is {x.shape}, expected {(n, a.cols)}")
        if n and a.cols:
            self._hemm(x.array, t.array, a.array, accumulate, complex(alpha))
        elif not accumulate:
            x.array[:] = 0
        ledger.add("hermitian_product", 8 * n * n * a.cols)
        return x

    # -- Triangular product: Y = op(C) A --------------------------------------
    def triangular_product(self, y: ComplexDense, c: ComplexDense, a: ComplexDense,
                           conj_transpose_c: bool, ledger: FlopLedger) -> ComplexDense:
        _check(c.rows == c.cols, f"triangular factor must be square, got {c.shape}")
        n = c.rows
        _check(a.rows == n, f"A has {a.rows} rows, C is {n}x{n}")
        _check(y.shape == a.shape, f"Y is {y.shape}, expected {a.shape}")
        if n and a.cols:
            self._trmm(y.array, c.array, a.array, conj_transpose_c)
        ledger.add("triangular_product", 4 * n * n * a.cols)
        return y

    # -- Cholesky: T = C C^H or NotHPDError -----------------------------------
    def cholesky_factor(self, t: ComplexDense, ledger: FlopLedger) -> ComplexDense:
        """Factor into a scratch copy; the caller's matrix survives failure.

        FLOPs are charged on success only, matching the closed-form budget
        which attributes Cholesky cost to the HPD branch.
        """
        _check(t.rows == t.cols, f"Cholesky input must be square, got {t.shape}")
        n = t.rows
        lower = np.tril(t.array)
        if np.isnan(lower).any():
            raise ContractViolationError("NaN in Cholesky input (lower triangle)")
        factor = self._potrf(lower)  # raises NotHPDError
        ledger.add("cholesky", cholesky_flops(n))
        return ComplexDense(np.asfortranarray(factor))

    # Backend-specific raw math on numpy arrays; shapes already validated.
    def _herk(self, c, a):  # pragma: no cover
        raise NotImplementedError

    def _her2k(self, c, x, b):  # pragma: no cover
        raise NotImplementedError

    def _gemm(self, c, a, b, conj_a, alpha, beta):  # pragma: no cover
        raise NotImplementedError

    def _hemm(self, x, t, a, accumulate, alpha):  # pragma: no cover
        raise NotImplementedError

    def _trmm(self, y, c, a, conj_c):  # pragma: no cover
        raise NotImplementedError

    def _potrf(self, lower):  # pragma: no cover
        raise NotImplementedError


class ReferenceKernels(KernelBackend):
    """Portable correctness-first backend built from blocked numpy loops."""

    name = "reference"

    def _herk(self, c, a):
        n = c.shape[1]
        for j0 in range(0, n, _BLOCK):
            j1 = min(j0 + _BLOCK, n)
            aj = a[:, j0:j1]
            for i0 in range(j0, n, _BLOCK):
                i1 = min(i0 + _BLOCK, n)
                blk = a[:, i0:i1].conj().T @ aj
                if i0 == j0:
                    blk = np.tril(blk)
                c[i0:i1, j0:j1] += blk

    def _her2k(self, c, x, b):
        n = c.shape[1]
        for j0 in range(0, n, _BLOCK):
            j1 = min(j0 + _BLOCK, n)
            xj = x[:, j0:j1]
            bj = b[:, j0:j1]
            for i0 in range(j0, n, _BLOCK):
                i1 = min(i0 + _BLOCK, n)
                blk = x[:, i0:i1].conj().T @ bj + b[:, i0:i1].conj().T @ xj
                if i0 == j0:
                    blk = np.tril(blk)
                c[i0:i1, j0:j1] += blk

    def _gemm(self, c, a, b, conj_a, alpha, beta):
        op_a = a.conj().T if conj_a else a
        m, n = c.shape
        for j0 in range(0, n, _BLOCK):
            j1 = min(j0 + _BLOCK, n)
            for i0 in range(0, m, _BLOCK):
                i1 = min(i0 + _BLOCK, m)
                prod = op_a[i0:i1] @ b[:, j0:j1]
                if beta == 0:
                    c[i0:i1, j0:j1] = alpha * prod
                else:
                    c[i0:i1, j0:j1] = alpha * prod + beta * c[i0:i1, j0:j1]

    def _hemm(self, x, t, a, accumulate, alpha):
        # np.tril selects entries, so NaN poison in the upper triangle is inert.
        # Diagonal imaginary parts are assumed zero, as in the BLAS convention.
        full = np.tril(t) + np.tril(t, -1).conj().T
        np.fill_diagonal(full, full.diagonal().real)
        for j0 in range(0, a.shape[1], _BLOCK):
            j1 = min(j0 + _BLOCK, a.shape[1])
            prod = alpha * (full @ a[:, j0:j1])
            if accumulate:
                x[:, j0:j1] += prod
            else:
                x[:, j0:j1] = prod

    def _trmm(self, y, c, a, conj_c):
        tri = np.tril(c)
        op_c = tri.conj().T if conj_c else tri
        for j0 in range(0, a.shape[1], _BLOCK):
            j1 = min(j0 + _BLOCK, a.shape[1])
            y[:, j0:j1] = op_c @ a[:, j0:j1]

    def _potrf(self, lower):
        n = lower.shape[0]
        L = lower
        for j in range(n):
            d = L[j, j].real - np.real(np.vdot(L[j, :j], L[j, :j]))
            if not (d > 0.0) or not np.isfinite(d):
                raise NotHPDError(j)
            ljj = np.sqrt(d)
            L[j, j] = ljj
            if j + 1 < n:
                L[j + 1 :, j] = (L[j + 1 :, j] - L[j + 1 :, :j] @ np.conj(L[j, :j])) / ljj
        return L


def _writeback(target, out):
    # scipy's f2py wrappers copy non-F-contiguous outputs; fold results back.
    if out is not target:
        target[:] = out


class OptimizedKernels(KernelBackend):
    """Backend delegating to the tuned BLAS/LAPACK kernels behind scipy."""

    name = "optimized"

    def _herk(self, c, a):
        out = _blas.zherk(1.0, a, beta=1.0, c=c, trans=2, lower=1, overwrite_c=1)
        _writeback(c, out)

    def _her2k(self, c, x, b):
        out = _blas.zher2k(1.0, x, b, beta=1.0, c=c, trans=2, lower=1, overwrite_c=1)
        _writeback(c, out)

    def _gemm(self, c, a, b, conj_a, alpha, beta):
        out = _blas.zgemm(alpha, a, b, beta=beta, c=c,
                          trans_a=2 if conj_a else 0, overwrite_c=1)
        _writeback(c, out)

    def _hemm(self, x, t, a, accumulate, alpha):
        beta = 1.0 if accumulate else 0.0
        out = _blas.zhemm(alpha, t, a, beta=beta, c=x, side=0, lower=1, overwrite_c=1)
        _writeback(x, out)

    def _trmm(self, y, c, a, conj_c):
        y[:] = a
        out = _blas.ztrmm(1.0, c, y, side=0, lower=1,
                          trans_a=2 if conj_c else 0, diag=0, overwrite_b=1)
        _writeback(y, out)

    def _potrf(self, lower):
        factor, info = _lapack.zpotrf(lower, lower=1, clean=1, overwrite_a=1)
        if info > 0:
            raise NotHPDError(info - 1)
        if info < 0:
            raise ContractViolationError(f"zpotrf rejected argument {-info}")
        return factor


_BACKENDS = {
    "reference": ReferenceKernels,
    "optimized": OptimizedKernels,
}


def get_backend(name: str = "optimized", threads: int = 1) -> KernelBackend:
    try:
        cls = _BACKENDS[name]
    except KeyError:
        raise ConfigurationError(
            f"unknown backend {name!r}; choose from {sorted(_BACKENDS)}"
        ) from None
    return cls(threads=threads)

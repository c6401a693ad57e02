"""Loop-based reference evaluation of the overlap and Hamiltonian formulas.

These routines are the ground truth for every equivalence test and double as
the naive single-threaded baseline in benchmarks: explicit loops, no blocking,
no triangular shortcuts, full matrices emitted.  They are compiled with numba
so that desk-scale problems stay tractable, but the loop structure is exactly
the entrywise one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .builder import StackedCoefficients, TMatrixSet
from .errors import ContractViolationError
from .matrix import ComplexDense
from .special import legendre_all


@njit(cache=True)
def _naive_s_kernel(a, b, w2, offsets, heights, s):
    # Fixed (atom, row-within-block, t', t) loop order.
    n_g = a.shape[1]
    for at in range(heights.shape[0]):
        for i in range(heights[at]):
            r = offsets[at] + i
            wr = w2[r]
            for tp in range(n_g):
                ca = np.conj(a[r, tp])
                cb = np.conj(b[r, tp]) * wr
                for t in range(n_g):
                    s[tp, t] += ca * a[r, t] + cb * b[r, t]


@njit(cache=True)
def _naive_h_kernel(a, b, taa, tab, tbb, sizes, offsets, h):
    # Two explicit-loop stages per atom: W1 = T_AA A + T_AB B and
    # W2 = T_BA A + T_BB B with T_BA read as conj-transposed T_AB, then
    # H += A^H W1 + B^H W2.  No blocking, both triangles written.
    n_g = a.shape[1]
    m_max = taa.shape[1]
    w1 = np.zeros((m_max, n_g), np.complex128)
    w2 = np.zeros((m_max, n_g), np.complex128)
    for at in range(sizes.shape[0]):
        m = sizes[at]
        off = offsets[at]
        for i in range(m):
            for t in range(n_g):
                w1[i, t] = 0.0
                w2[i, t] = 0.0
        for i in range(m):
            for j in range(m):
                vaa = taa[at, i, j]
                vab = tab[at, i, j]
                vba = np.conj(tab[at, j, i])
                vbb = tbb[at, i, j]
                rj = off + j
                for t in range(n_g):
                    av = a[rj, t]
                    bv = b[rj, t]
                    w1[i, t] += vaa * av + vab * bv
                    w2[i, t] += vba * av + vbb * bv
        for i in range(m):
            ri = off + i
            for tp in range(n_g):
                ca = np.conj(a[ri, tp])
                cb = np.conj(b[ri, tp])
                for t in range(n_g):
                    h[tp, t] += ca * w1[i, t] + cb * w2[i, t]


def naive_S(coeffs: StackedCoefficients) -> ComplexDense:
    """Entrywise overlap matrix; emits the full matrix, both triangles."""
    layout = coeffs.layout
    s = np.zeros((coeffs.n_basis, coeffs.n_basis), dtype=np.complex128)
    _naive_s_kernel(
        coeffs.A_star.array,
        coeffs.B_star.array,
        coeffs.udot_norms**2,
        layout.offsets[:-1],
        np.asarray(layout.block_heights, dtype=np.int64),
        s,
    )
    return ComplexDense.from_array(s)


def _packed_t(tmats: TMatrixSet):
    n_a = tmats.atom_count
    sizes = np.array([tmats.block_size(a) for a in range(n_a)], dtype=np.int64)
    m_max = int(sizes.max())
    taa = np.zeros((n_a, m_max, m_max), dtype=np.complex128)
    tab = np.zeros_like(taa)
    tbb = np.zeros_like(taa)
    for a in range(n_a):
        m = sizes[a]
        taa[a, :m, :m] = tmats.t_aa[a].array
        tab[a, :m, :m] = tmats.t_ab[a].array
        tbb[a, :m, :m] = tmats.t_bb[a].array
    return taa, tab, tbb, sizes


def naive_H(coeffs: StackedCoefficients, tmats: TMatrixSet) -> ComplexDense:
    """Entrywise Hamiltonian matrix with T_BA taken as conj-transposed T_AB."""
    layout = coeffs.layout
    if tmats.atom_count != layout.atom_count:
        raise ContractViolationError("atom counts of coefficients and T blocks differ")
    for a in range(layout.atom_count):
        if tmats.block_size(a) > layout.block_heights[a]:
            raise ContractViolationError(
                f"atom {a}: T block larger than coefficient block"
            )
    taa, tab, tbb, sizes = _packed_t(tmats)
    h = np.zeros((coeffs.n_basis, coeffs.n_basis), dtype=np.complex128)
    _naive_h_kernel(
        coeffs.A_star.array,
        coeffs.B_star.array,
        taa, tab, tbb, sizes,
        layout.offsets[:-1],
        h,
    )
    return ComplexDense.from_array(h)


def naive_flop_count(coeffs: StackedCoefficients, tmats: TMatrixSet) -> int:
    """Nominal real-FLOP count of one naive_S + naive_H evaluation.

    Eight real operations per complex multiply-add, matching the budgets used
    for the blocked kernels.
    """
    n_g = coeffs.n_basis
    r = coeffs.layout.total_rows
    total = 16 * r * n_g * n_g  # naive_S: two fused multiply-adds per (row, t', t)
    for a in range(tmats.atom_count):
        m = tmats.block_size(a)
        total += 32 * m * m * n_g   # W1/W2 stage: four multiply-adds per (i, j, t)
        total += 16 * m * n_g * n_g  # accumulation stage: two per (i, t', t)
    return total


def compare_matrices(x: ComplexDense, y: ComplexDense, triangle: str = "full") -> float:
    """Relative Frobenius error ||X - Y|| / max(||Y||, tiny) over a triangle."""
    if x.shape != y.shape:
        raise ContractViolationError(f"shape mismatch: {x.shape} vs {y.shape}")
    if triangle == "full":
        dx = x.array - y.array
        ref = y.array
    elif triangle == "lower":
        dx = np.tril(x.array) - np.tril(y.array)
        ref = np.tril(y.array)
    else:
        raise ContractViolationError(f"triangle must be 'lower' or 'full', got {triangle!r}")
    tiny = np.finfo(np.float64).tiny
    return float(np.linalg.norm(dx) / max(np.linalg.norm(ref), tiny))


@dataclass
class ReducedOverlapInputs:
    """Factored inputs of the Legendre-reduced A-side overlap.

    ``f`` holds one (l_sph_a+1, N_G) real array per atom; ``wronskians`` one
    (l_sph_a+1,) array per atom.  Directions of zero K-vectors are treated as
    parallel to everything (cosine 1).
    """

    f: list
    wronskians: list
    positions: np.ndarray
    k_vectors: np.ndarray
    omega: float

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=np.float64)
        self.k_vectors = np.asarray(self.k_vectors, dtype=np.float64)
        if self.omega <= 0:
            raise ContractViolationError("cell volume must be positive")
        if len(self.f) != len(self.wronskians) or len(self.f) != self.positions.shape[0]:
            raise ContractViolationError("per-atom input lists must align with positions")
        for w in self.wronskians:
            if np.any(w == 0):
                raise ContractViolationError("zero Wronskian in reduced-overlap inputs")


def reduced_S_AA(inputs: ReducedOverlapInputs) -> ComplexDense:
    """A-side overlap evaluated through the Legendre-reduced m-free sum.

    The per-l angular sum collapses to (2l+1)/(4pi) * P_l(cos) between the
    unit K-vectors, leaving products of the real radial match factors.
    """
    k = inputs.k_vectors
    n_g = k.shape[0]
    norms = np.linalg.norm(k, axis=1)
    unit = np.zeros_like(k)
    nonzero = norms > 0
    unit[nonzero] = k[nonzero] / norms[nonzero, None]
    cos = np.clip(unit @ unit.T, -1.0, 1.0)
    # A zero K-vector is parallel to everything by convention.
    cos[~nonzero, :] = 1.0
    cos[:, ~nonzero] = 1.0

    l_max = max(f.shape[0] - 1 for f in inputs.f)
    legendre = legendre_all(l_max, cos)  # (l_max+1, N_G, N_G)

    m = np.zeros((n_g, n_g), dtype=np.complex128)
    for x_a, f_a, w_a in zip(inputs.positions, inputs.f, inputs.wronskians):
        phases = np.exp(1j * (k @ x_a))
        phase_mat = np.conj(phases)[:, None] * phases[None, :]
        radial = np.zeros((n_g, n_g))
        for l in range(f_a.shape[0]):
            coef = (2 * l + 1) / (4.0 * np.pi) / (w_a[l] ** 2)
            radial += coef * np.outer(f_a[l], f_a[l]) * legendre[l]
        m += phase_mat * radial
    m *= (4.0 * np.pi) ** 2 / inputs.omega
    return ComplexDense.from_array(m)
